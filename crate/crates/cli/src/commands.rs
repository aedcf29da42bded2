use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pvi_core::backbones::{sample_rng, sample_trajectories};
use pvi_core::config::RunConfig;
use pvi_core::evaluation::{
    best_of_n_eval, measure_latency, run_ablation, AblationCell, EvalOptions, Selection,
};
use pvi_core::training::{fit, resume_fit, FitOptions, Trainer};
use pvi_core::trajdata::{
    list_inputs, load_poses, load_scene_records, load_sequences, preprocess as run_preprocess,
    save_scene_records, save_sequences, synth_corpus, PreprocessConfig, SequenceSample,
};
use pvi_core::{BackboneKind, Error, Model, ModelConfig};

use crate::{AblateArgs, BenchArgs, EvalArgs, PredictArgs, PreprocessArgs, SynthArgs, TrainArgs};

pub const RUN_DIR_ENV: &str = "PVI_RUN_DIR";

/// A failed command: process exit code plus a one-line cause.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(msg: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: msg.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence { .. } => 3,
            Error::Config(_) | Error::InvalidArgument(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string().replace('\n', " "),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Errors reading an existing artifact are data errors whatever their kind.
fn data_err(e: Error) -> Failure {
    let mut f = Failure::from(e);
    if f.code == 1 {
        f.code = 2;
    }
    f
}

fn write(path: &Path, text: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            context: dir.display().to_string(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| {
        Error::Io {
            context: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn create_dir(dir: &Path) -> CmdResult {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io {
            context: dir.display().to_string(),
            source: e,
        }
        .into()
    })
}

/// Loads a run configuration; relative data paths resolve against its directory.
fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => Failure::usage(e.to_string()),
        other => other.into(),
    })?;
    let base = path.parent().unwrap_or(Path::new(""));
    for p in [&mut cfg.data.train, &mut cfg.data.val, &mut cfg.data.test].into_iter().flatten() {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    Ok(cfg)
}

fn load_set(path: Option<&PathBuf>) -> Result<Vec<SequenceSample>, Failure> {
    match path {
        Some(p) => load_sequences(p).map_err(data_err),
        None => Ok(Vec::new()),
    }
}

fn default_run_dir(name: &str) -> PathBuf {
    let root = std::env::var_os(RUN_DIR_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(name)
}

/// A model directory, or a run directory holding `best/`.
fn load_checkpoint(path: &Path) -> Result<Model, Failure> {
    let dir = if path.join("model.toml").exists() {
        path.to_path_buf()
    } else {
        path.join("best")
    };
    Model::load(&dir).map_err(data_err)
}

pub fn preprocess(a: PreprocessArgs) -> CmdResult {
    let cfg = PreprocessConfig {
        keep_every: a.keep_every,
        t_obs: a.t_obs,
        t_pred: a.t_pred,
        skip: a.skip,
        range: a.range,
        train_fraction: a.train_fraction,
    };
    let mut scenes = Vec::new();
    for file in list_inputs(&a.input).map_err(data_err)? {
        scenes.extend(load_scene_records(&file).map_err(data_err)?);
    }
    let poses = a.poses.as_deref().map(load_poses).transpose().map_err(data_err)?;
    let out = run_preprocess(&scenes, poses.as_ref(), &cfg, a.seed)?;
    create_dir(&a.output)?;
    save_sequences(&out.train, &a.output.join("train.seq"))?;
    save_sequences(&out.val, &a.output.join("val.seq"))?;
    let summary = out.to_string();
    write(&a.output.join("summary.tsv"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(p) => load_config(p)?.synth,
        None => Default::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(g) = a.gain {
        cfg.repulsion_gain = g;
    }
    if let Some(d) = a.duration {
        cfg.duration = d;
    }
    let scenes = synth_corpus(&cfg, a.scenes)?;
    save_scene_records(&scenes, &a.out)?;
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

pub fn train(a: TrainArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let train_path = cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Failure::usage("data.train is required for training"))?;
    let train = load_sequences(train_path).map_err(data_err)?;
    let val = load_set(cfg.data.val.as_ref())?;
    let test = load_set(cfg.data.test.as_ref())?;
    let label = cfg.model.label();
    let run_dir = a
        .run_dir
        .clone()
        .unwrap_or_else(|| default_run_dir(&format!("{label}-seed{}", cfg.seed)));
    create_dir(&run_dir)?;
    cfg.echo(&run_dir)?;
    let opts = FitOptions {
        run_dir: Some(run_dir.clone()),
        max_steps: a.max_steps,
        sequential: false,
        quiet: a.quiet,
    };
    let last = run_dir.join("last");
    let (mut model, outcome) = if a.resume && last.exists() {
        let trainer = Trainer::load_checkpoint(&last).map_err(data_err)?;
        if trainer.model.config() != &cfg.model {
            return Err(Failure::usage("checkpoint model differs from the configuration"));
        }
        resume_fit(trainer, &train, &val, &opts)?
    } else {
        let model = Model::new(&cfg.model, cfg.seed)?;
        fit(model, &train, &val, &cfg.optimizer, cfg.seed, &opts)?
    };
    *model.params_mut() = outcome.best;
    println!(
        "trained {label}: {} epochs, {} steps, run directory {}",
        outcome.state.epoch,
        outcome.state.step,
        run_dir.display()
    );
    let eval_set = if test.is_empty() { &val } else { &test };
    if !eval_set.is_empty() {
        let opts = EvalOptions {
            seed: cfg.seed,
            ..cfg.eval.clone()
        };
        let report = best_of_n_eval(&model, &label, eval_set, &opts)?;
        report.append_results(&run_dir.join("results.tsv"))?;
        print!("{}", report.to_kv());
    }
    Ok(())
}

pub fn eval(a: EvalArgs) -> CmdResult {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_sequences(&a.data).map_err(data_err)?;
    let opts = EvalOptions {
        n_samples: a.samples,
        seed: a.seed,
        sigma_scale: a.sigma_scale,
        selection: if a.per_sequence {
            Selection::PerSequence
        } else {
            Selection::PerPedestrian
        },
        single_thread: false,
    };
    let id = a.model_id.unwrap_or_else(|| model.config().label());
    let report = best_of_n_eval(&model, &id, &data, &opts)?;
    if let Some(p) = &a.results {
        report.append_results(p)?;
    }
    print!("{}", report.to_kv());
    Ok(())
}

pub fn ablate(a: AblateArgs) -> CmdResult {
    let cfg = load_config(&a.config)?;
    let train = load_set(cfg.data.train.as_ref())?;
    if train.is_empty() {
        return Err(Failure::usage("data.train is required for the ablation"));
    }
    let val = load_set(cfg.data.val.as_ref())?;
    let test = load_set(cfg.data.test.as_ref())?;
    let test = if test.is_empty() { val.clone() } else { test };
    if test.is_empty() {
        return Err(Failure::usage("data.test or data.val is required for the ablation"));
    }
    let mut cells = AblationCell::standard_grid();
    if cfg.ablation.with_velocity {
        for kind in [BackboneKind::Lstm, BackboneKind::Conv] {
            let mut model = ModelConfig::preset(kind, true, true);
            model.features.use_velocity = true;
            let optimizer = cells.iter().find(|c| c.model.backbone.kind == kind).unwrap().optimizer.clone();
            cells.push(AblationCell { model, optimizer });
        }
    }
    for c in &mut cells {
        if cfg.ablation.use_run_optimizer {
            c.optimizer = cfg.optimizer.clone();
        }
        if let Some(e) = cfg.ablation.epochs {
            c.optimizer.epochs = e;
        }
    }
    let run_dir = a.run_dir.clone().unwrap_or_else(|| default_run_dir("ablation"));
    create_dir(&run_dir)?;
    cfg.echo(&run_dir)?;
    let table = run_ablation(
        &cells,
        &train,
        &val,
        &test,
        &cfg.ablation.seeds,
        &cfg.eval,
        Some(run_dir.clone()),
        a.quiet,
    );
    let results = run_dir.join("results.tsv");
    for row in &table.rows {
        for (seed, run) in row.seeds.iter().zip(&row.runs) {
            match run {
                Ok(report) => report.append_results(&results)?,
                Err(e) => eprintln!("{} seed {seed} failed: {e}", row.label),
            }
        }
    }
    let text = table.to_text();
    write(&run_dir.join("ablation.tsv"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn predict(a: PredictArgs) -> CmdResult {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_sequences(&a.data).map_err(data_err)?;
    let chosen: Vec<usize> = match a.index {
        Some(k) if k < data.len() => vec![k],
        Some(k) => return Err(Failure::usage(format!("--index {k} out of range ({} sequences)", data.len()))),
        None => (0..data.len()).collect(),
    };
    let mut out = String::from("seq\tscene\tstart\tped\tkind\tsample\tstep\tx\ty\n");
    for k in chosen {
        let s = &data[k];
        let params = model.predict(s)?;
        let origin = Model::origins(s);
        let mut rng = sample_rng(a.seed, k as u64);
        let set = sample_trajectories(&params, &origin, a.samples, 1.0, &mut rng)?;
        let head = format!("{k}\t{}\t{}", s.scene_id, s.start_frame);
        let mut line = |ped: &str, kind: &str, sample: &str, step: usize, p: [f64; 2]| {
            writeln!(out, "{head}\t{ped}\t{kind}\t{sample}\t{step}\t{:.6}\t{:.6}", p[0], p[1]).unwrap();
        };
        for (r, i) in s.targets().into_iter().enumerate() {
            let id = &s.ped_ids[i];
            for (t, p) in s.ped_obs[i].iter().enumerate() {
                line(id, "obs", "-", t, *p);
            }
            let t0 = s.t_obs();
            for (t, p) in s.ped_future[i].iter().enumerate() {
                line(id, "truth", "-", t0 + t, *p);
            }
            for (t, p) in set.mean_trajectory(r).into_iter().enumerate() {
                line(id, "mean", "-", t0 + t, p);
            }
            for n in 0..set.n_samples() {
                for (t, p) in set.trajectory(n, r).into_iter().enumerate() {
                    line(id, "sample", &n.to_string(), t0 + t, p);
                }
            }
        }
        for (j, id) in s.veh_ids.iter().enumerate() {
            for (t, p) in s.veh_obs[j].iter().enumerate() {
                if s.veh_mask[j][t] {
                    line(id, "vehicle", "-", t, *p);
                }
            }
        }
    }
    match &a.dump_trajectories {
        Some(path) => {
            write(path, &out)?;
            println!("wrote {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let model = load_checkpoint(&a.checkpoint)?;
    let data = load_sequences(&a.data).map_err(data_err)?;
    if a.repeats == 0 {
        return Err(Failure::usage("--repeats must be at least 1"));
    }
    let (mean, std) = measure_latency(&model, &data, a.warmup, a.repeats)?;
    println!("model {}", model.config().label());
    println!("sequences {}", data.len());
    println!("mean_ms_per_sequence {mean:.4}");
    println!("std_ms_per_sequence {std:.4}");
    Ok(())
}
