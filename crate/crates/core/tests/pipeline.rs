use std::collections::BTreeMap;

use pvi_core::evaluation::best_of_n_eval;
use pvi_core::training::{fit, FitOptions};
use pvi_core::trajdata::{
    load_sequences, preprocess, save_sequences, synth_corpus, to_local_frame, EgoPose, PreprocessConfig,
};
use pvi_core::{BackboneKind, EvalOptions, Model, ModelConfig, OptimizerConfig, RunConfig, SynthConfig};

fn scenes(count: usize) -> Vec<pvi_core::Scene> {
    let cfg = SynthConfig {
        duration: 10.0,
        seed: 40,
        ..SynthConfig::default()
    };
    synth_corpus(&cfg, count).unwrap()
}

#[test]
fn ego_local_records_reproduce_global_windows() {
    let global = scenes(4);
    let mut poses = BTreeMap::new();
    let mut local = Vec::new();
    for scene in &global {
        let (lo, hi) = scene.frame_range().unwrap();
        let track: Vec<EgoPose> = (lo..=hi)
            .map(|f| EgoPose {
                frame: f,
                x: 3.0 + 0.4 * f as f64,
                y: -2.0 + 0.1 * f as f64,
                heading: 0.3 + 0.01 * f as f64,
            })
            .collect();
        local.push(to_local_frame(scene, &track).unwrap());
        poses.insert(scene.scene_id().to_string(), track);
    }
    let cfg = PreprocessConfig {
        range: 1e6,
        ..PreprocessConfig::default()
    };
    let direct = preprocess(&global, None, &cfg, 1).unwrap();
    let via_ego = preprocess(&local, Some(&poses), &cfg, 1).unwrap();
    assert_eq!(direct.train_summary, via_ego.train_summary);
    assert_eq!(direct.val_summary, via_ego.val_summary);
    for (a, b) in direct.train.iter().zip(&via_ego.train) {
        assert_eq!(a.ped_ids, b.ped_ids);
        for (pa, pb) in a.ped_obs.iter().flatten().zip(b.ped_obs.iter().flatten()) {
            assert!((pa[0] - pb[0]).abs() < 1e-9 && (pa[1] - pb[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn sequence_files_round_trip() {
    let data = preprocess(&scenes(3), None, &PreprocessConfig::default(), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.seq");
    save_sequences(&data.train, &path).unwrap();
    assert_eq!(load_sequences(&path).unwrap(), data.train);
}

#[test]
fn trained_checkpoint_reloads_and_evaluates_identically() {
    let data = preprocess(&scenes(6), None, &PreprocessConfig::default(), 0).unwrap();
    for kind in [BackboneKind::Lstm, BackboneKind::Conv] {
        let model = Model::new(&ModelConfig::preset(kind, true, true), 2).unwrap();
        let cfg = OptimizerConfig {
            lr: 1e-3,
            batch_size: 8,
            epochs: 2,
            ..OptimizerConfig::adam_regime()
        };
        let quiet = FitOptions {
            quiet: true,
            ..FitOptions::default()
        };
        let (model, outcome) = fit(model, &data.train, &data.val, &cfg, 2, &quiet).unwrap();
        assert_eq!(outcome.history.len(), 2);
        assert!(outcome.history.iter().all(|r| r.train_nll.is_finite()));

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = Model::load(dir.path()).unwrap();
        let opts = EvalOptions {
            n_samples: 5,
            seed: 3,
            ..EvalOptions::default()
        };
        let serial = EvalOptions {
            single_thread: true,
            ..opts.clone()
        };
        let a = best_of_n_eval(&model, "m", &data.val, &opts).unwrap();
        let b = best_of_n_eval(&loaded, "m", &data.val, &serial).unwrap();
        assert_eq!(a.tsv_row(), b.tsv_row());
    }
}

#[test]
fn resolved_config_parses_back_unchanged() {
    let cfg = RunConfig::from_toml("seed = 4\n[model.backbone]\nkind = \"conv\"\n[optimizer]\nkind = \"sgd\"\n").unwrap();
    assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(RunConfig::from_toml("[eval]\nn_samples = 0\n").is_err());
    assert!(RunConfig::from_toml("[optimizer]\nmomentum = 0.9\n").is_err());
}
