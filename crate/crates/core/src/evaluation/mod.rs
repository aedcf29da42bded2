//! Displacement metrics, best-of-N evaluation, latency measurement and the
//! ablation runner.

mod ablation;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backbones::{sample_rng, sample_trajectories, Model};
use crate::error::{Error, Result};
use crate::tensor::{read_text, write_file};
use crate::trajdata::SequenceSample;

pub use ablation::{run_ablation, AblationCell, AblationRow, AblationTable};

type Track = Vec<[f64; 2]>;

fn check_aligned(pred: &[Track], truth: &[Track]) -> Result<()> {
    let shape = |v: &[Track]| vec![v.len(), v.first().map_or(0, Vec::len)];
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.len() != t.len() || p.is_empty()) {
        return Err(Error::shape("displacement error", &shape(pred), &shape(truth)));
    }
    Ok(())
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean Euclidean distance over every pedestrian and step.
pub fn ade(pred: &[Track], truth: &[Track]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        for (a, b) in p.iter().zip(t) {
            total += dist(*a, *b);
        }
        count += p.len();
    }
    Ok(total / count as f64)
}

/// Mean Euclidean distance at the final step.
pub fn fde(pred: &[Track], truth: &[Track]) -> Result<f64> {
    check_aligned(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| dist(*p.last().unwrap(), *t.last().unwrap()))
        .sum();
    Ok(total / pred.len() as f64)
}

fn truths(sample: &SequenceSample) -> Vec<Track> {
    sample.targets().into_iter().map(|i| sample.ped_future[i].clone()).collect()
}

/// Dataset ADE/FDE of the mean trajectory, averaged over pedestrians.
pub fn mean_eval(model: &Model, set: &[SequenceSample]) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(Error::EmptySet("evaluation set"));
    }
    let per: Vec<Result<(f64, f64, usize)>> = set
        .par_iter()
        .map(|s| {
            let params = model.predict(s)?;
            let origin = Model::origins(s);
            let pred: Vec<Track> = (0..params.n_ped())
                .map(|i| {
                    let o = origin[i];
                    params.mean_offsets(i).iter().map(|d| [o[0] + d[0], o[1] + d[1]]).collect()
                })
                .collect();
            let truth = truths(s);
            let n = pred.len();
            Ok((ade(&pred, &truth)? * n as f64, fde(&pred, &truth)? * n as f64, n))
        })
        .collect();
    let (mut a, mut f, mut n) = (0.0, 0.0, 0usize);
    for r in per {
        let (x, y, k) = r?;
        a += x;
        f += y;
        n += k;
    }
    Ok((a / n as f64, f / n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Each pedestrian keeps its own lowest-ADE sample.
    PerPedestrian,
    /// One sample per sequence, the one with the lowest mean ADE.
    PerSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub n_samples: usize,
    pub seed: u64,
    /// Multiplies every predicted σ before sampling.
    pub sigma_scale: f64,
    pub selection: Selection,
    /// Evaluate sequences one at a time (stable timings).
    pub single_thread: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            n_samples: 20,
            seed: 0,
            sigma_scale: 1.0,
            selection: Selection::PerPedestrian,
            single_thread: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub scene_id: String,
    pub start_frame: i64,
    pub pedestrians: usize,
    pub ade: f64,
    pub fde: f64,
    pub forward_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model_id: String,
    pub ade: f64,
    pub fde: f64,
    pub n_samples: usize,
    pub sequences: usize,
    pub pedestrians: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub seed: u64,
    pub per_sequence: Vec<SequenceScore>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Best-of-`n` score of one sequence; `stream` selects its sampling RNG.
pub fn score_sequence(model: &Model, sample: &SequenceSample, stream: u64, opts: &EvalOptions) -> Result<SequenceScore> {
    if opts.n_samples == 0 {
        return Err(Error::invalid("n_samples must be at least 1"));
    }
    let clock = Instant::now();
    let params = model.predict(sample)?;
    let forward_ms = clock.elapsed().as_secs_f64() * 1e3;
    let origin = Model::origins(sample);
    let mut rng = sample_rng(opts.seed, stream);
    let set = sample_trajectories(&params, &origin, opts.n_samples, opts.sigma_scale, &mut rng)?;
    let truth = truths(sample);
    let n = truth.len();
    // errors[k][i] = (ADE, FDE) of sample k for pedestrian i
    let mut errors = vec![vec![(0.0, 0.0); n]; opts.n_samples];
    for (k, row) in errors.iter_mut().enumerate() {
        for (i, e) in row.iter_mut().enumerate() {
            let pred = [set.trajectory(k, i)];
            let tr = [truth[i].clone()];
            *e = (ade(&pred, &tr)?, fde(&pred, &tr)?);
        }
    }
    let (a, f) = match opts.selection {
        Selection::PerPedestrian => {
            let mut a = 0.0;
            let mut f = 0.0;
            for i in 0..n {
                let mut best = errors[0][i];
                for row in &errors[1..] {
                    if row[i].0 < best.0 {
                        best = row[i];
                    }
                }
                a += best.0;
                f += best.1;
            }
            (a / n as f64, f / n as f64)
        }
        Selection::PerSequence => {
            let mean = |row: &Vec<(f64, f64)>| {
                (
                    row.iter().map(|e| e.0).sum::<f64>() / n as f64,
                    row.iter().map(|e| e.1).sum::<f64>() / n as f64,
                )
            };
            let mut best = mean(&errors[0]);
            for row in &errors[1..] {
                let m = mean(row);
                if m.0 < best.0 {
                    best = m;
                }
            }
            best
        }
    };
    Ok(SequenceScore {
        scene_id: sample.scene_id.clone(),
        start_frame: sample.start_frame,
        pedestrians: n,
        ade: a,
        fde: f,
        forward_ms,
    })
}

/// Best-of-N evaluation over `test`; dataset metrics are means over
/// pedestrians. Sequence `k` samples from stream `k` of `opts.seed`.
pub fn best_of_n_eval(model: &Model, model_id: &str, test: &[SequenceSample], opts: &EvalOptions) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptySet("test set"));
    }
    let work = |(k, s): (usize, &SequenceSample)| score_sequence(model, s, k as u64, opts);
    let scores: Vec<Result<SequenceScore>> = if opts.single_thread {
        test.iter().enumerate().map(work).collect()
    } else {
        test.par_iter().enumerate().map(work).collect()
    };
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let peds: usize = scores.iter().map(|s| s.pedestrians).sum();
    let ade = scores.iter().map(|s| s.ade * s.pedestrians as f64).sum::<f64>() / peds as f64;
    let fde = scores.iter().map(|s| s.fde * s.pedestrians as f64).sum::<f64>() / peds as f64;
    let times: Vec<f64> = scores.iter().map(|s| s.forward_ms).collect();
    let (mean_ms, std_ms) = mean_std(&times);
    Ok(EvalReport {
        model_id: model_id.to_string(),
        ade,
        fde,
        n_samples: opts.n_samples,
        sequences: scores.len(),
        pedestrians: peds,
        mean_ms,
        std_ms,
        seed: opts.seed,
        per_sequence: scores,
    })
}

/// Forward-pass latency over `samples`, single-threaded: `warmup` untimed
/// passes, then `repeats` timed passes; returns mean and std of the
/// per-sequence milliseconds.
pub fn measure_latency(model: &Model, samples: &[SequenceSample], warmup: usize, repeats: usize) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySet("latency set"));
    }
    for _ in 0..warmup {
        for s in samples {
            model.predict(s)?;
        }
    }
    let mut times = Vec::with_capacity(repeats * samples.len());
    for _ in 0..repeats {
        for s in samples {
            let clock = Instant::now();
            std::hint::black_box(model.predict(s)?);
            times.push(clock.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(mean_std(&times))
}

pub const RESULTS_HEADER: &str = "model\tade\tfde\tn_samples\tsequences\tpedestrians\tseed";

impl EvalReport {
    /// `key value` lines, timing included.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "model {}", self.model_id).unwrap();
        writeln!(s, "ade {:.6}", self.ade).unwrap();
        writeln!(s, "fde {:.6}", self.fde).unwrap();
        writeln!(s, "n_samples {}", self.n_samples).unwrap();
        writeln!(s, "sequences {}", self.sequences).unwrap();
        writeln!(s, "pedestrians {}", self.pedestrians).unwrap();
        writeln!(s, "mean_ms_per_sequence {:.4}", self.mean_ms).unwrap();
        writeln!(s, "std_ms_per_sequence {:.4}", self.std_ms).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        s
    }

    /// `results.tsv` row; excludes timing so reruns are bit-identical.
    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{:.9}\t{:.9}\t{}\t{}\t{}\t{}",
            self.model_id, self.ade, self.fde, self.n_samples, self.sequences, self.pedestrians, self.seed
        )
    }

    /// Appends the row to `path`, writing the header to a new file.
    pub fn append_results(&self, path: &Path) -> Result<()> {
        let mut text = if path.exists() { read_text(path)? } else { String::new() };
        if text.is_empty() {
            text.push_str(RESULTS_HEADER);
            text.push('\n');
        }
        text.push_str(&self.tsv_row());
        text.push('\n');
        write_file(path, text.as_bytes())
    }
}

#[cfg(test)]
mod tests;
