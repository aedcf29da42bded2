use std::fmt::Write as _;
use std::path::PathBuf;

use crate::backbones::{BackboneKind, Model, ModelConfig};
use crate::error::Result;
use crate::training::{fit, FitOptions, OptimizerConfig};
use crate::trajdata::SequenceSample;

use super::{best_of_n_eval, EvalOptions, EvalReport};

/// One configuration of the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
}

impl AblationCell {
    /// The six rows {plain, SI, SI-PVI} × {LSTM, Conv}, with the Adam
    /// regime for LSTM models and the SGD regime for Conv models.
    pub fn standard_grid() -> Vec<AblationCell> {
        let mut cells = Vec::new();
        for kind in [BackboneKind::Lstm, BackboneKind::Conv] {
            let optimizer = match kind {
                BackboneKind::Lstm => OptimizerConfig::adam_regime(),
                BackboneKind::Conv => OptimizerConfig::sgd_regime(),
            };
            for (si, pvi) in [(false, false), (true, false), (true, true)] {
                cells.push(AblationCell {
                    model: ModelConfig::preset(kind, si, pvi),
                    optimizer: optimizer.clone(),
                });
            }
        }
        cells
    }
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub si: bool,
    pub pvi: bool,
    pub rv: bool,
    pub seeds: Vec<u64>,
    /// Per seed: the report, or the error that stopped the cell.
    pub runs: Vec<std::result::Result<EvalReport, String>>,
}

impl AblationRow {
    /// Relative-position input is used whenever an interaction block is.
    pub fn rp(&self) -> bool {
        self.si || self.pvi
    }

    fn finished(&self) -> Vec<&EvalReport> {
        self.runs.iter().filter_map(|r| r.as_ref().ok()).collect()
    }

    pub fn median_ade(&self) -> Option<f64> {
        median(self.finished().iter().map(|r| r.ade).collect())
    }

    pub fn median_fde(&self) -> Option<f64> {
        median(self.finished().iter().map(|r| r.fde).collect())
    }
}

pub fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    Some(if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) })
}

#[derive(Debug, Clone)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Median-over-seeds table with the interaction flags.
    pub fn to_text(&self) -> String {
        let flag = |b: bool| if b { "x" } else { "-" };
        let num = |v: Option<f64>| v.map_or("failed".to_string(), |x| format!("{x:.4}"));
        let mut s = String::from("model\tADE\tFDE\tSI\tPVI\tRP\tRV\truns\n");
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}/{}",
                r.label,
                num(r.median_ade()),
                num(r.median_fde()),
                flag(r.si),
                flag(r.pvi),
                flag(r.rp()),
                flag(r.rv),
                r.finished().len(),
                r.runs.len()
            )
            .unwrap();
        }
        s
    }
}

/// Trains and evaluates every cell for every seed. Failures are recorded
/// per run and the grid continues. With a run directory each run writes
/// into `<dir>/<label>/seed-<seed>`.
pub fn run_ablation(
    cells: &[AblationCell],
    train: &[SequenceSample],
    val: &[SequenceSample],
    test: &[SequenceSample],
    seeds: &[u64],
    eval: &EvalOptions,
    run_dir: Option<PathBuf>,
    quiet: bool,
) -> AblationTable {
    let mut rows = Vec::with_capacity(cells.len());
    for cell in cells {
        let label = cell.model.label();
        let runs = seeds
            .iter()
            .map(|&seed| {
                let attempt = || -> Result<EvalReport> {
                    let opts = FitOptions {
                        run_dir: run_dir.as_ref().map(|d| d.join(&label).join(format!("seed-{seed}"))),
                        quiet,
                        ..Default::default()
                    };
                    let model = Model::new(&cell.model, seed)?;
                    let (mut model, outcome) = fit(model, train, val, &cell.optimizer, seed, &opts)?;
                    *model.params_mut() = outcome.best;
                    let opts = EvalOptions { seed, ..eval.clone() };
                    best_of_n_eval(&model, &label, test, &opts)
                };
                attempt().map_err(|e| e.to_string())
            })
            .collect();
        rows.push(AblationRow {
            label,
            si: cell.model.features.use_social,
            pvi: cell.model.features.use_pvi,
            rv: cell.model.features.use_velocity,
            seeds: seeds.to_vec(),
            runs,
        });
    }
    AblationTable { rows }
}
