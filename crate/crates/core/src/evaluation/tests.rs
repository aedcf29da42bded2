use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::backbones::{BackboneKind, ModelConfig};
use crate::training::OptimizerConfig;

fn random_tracks(rng: &mut ChaCha8Rng, n: usize) -> Vec<Track> {
    (0..n)
        .map(|_| (0..12).map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)]).collect())
        .collect()
}

fn loop_ade(p: &[Track], t: &[Track]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        for k in 0..12 {
            let dx = p[i][k][0] - t[i][k][0];
            let dy = p[i][k][1] - t[i][k][1];
            s += (dx * dx + dy * dy).sqrt();
        }
    }
    s / (p.len() * 12) as f64
}

#[test]
fn constructed_metric_cases() {
    let truth: Vec<Track> = vec![(0..12).map(|k| [k as f64, 0.0]).collect()];
    assert_eq!(ade(&truth, &truth).unwrap(), 0.0);
    assert_eq!(fde(&truth, &truth).unwrap(), 0.0);
    let shifted: Vec<Track> = vec![truth[0].iter().map(|p| [p[0] + 0.3, p[1] + 0.4]).collect()];
    assert!((ade(&shifted, &truth).unwrap() - 0.5).abs() < 1e-15);
    assert!((fde(&shifted, &truth).unwrap() - 0.5).abs() < 1e-15);
    let mut last = truth.clone();
    last[0][11][1] += 1.0;
    assert_eq!(ade(&last, &truth).unwrap(), 1.0 / 12.0);
    assert_eq!(fde(&last, &truth).unwrap(), 1.0);
}

#[test]
fn metrics_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n = rng.gen_range(1..6);
        let (p, t) = (random_tracks(&mut rng, n), random_tracks(&mut rng, n));
        assert!((ade(&p, &t).unwrap() - loop_ade(&p, &t)).abs() < 1e-12);
    }
}

#[test]
fn mismatched_shapes_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, t) = (random_tracks(&mut rng, 2), random_tracks(&mut rng, 3));
    assert!(matches!(ade(&p, &t), Err(Error::Shape { .. })));
    assert!(matches!(fde(&p, &t), Err(Error::Shape { .. })));
}

fn set(n: usize, seed: u64) -> Vec<SequenceSample> {
    (0..n).map(|k| SequenceSample::random(3, 2, 8, 12, seed + k as u64)).collect()
}

#[test]
fn best_of_n_is_monotone_and_degenerate_cases_hold() {
    let model = Model::new(&ModelConfig::preset(BackboneKind::Conv, true, true), 3).unwrap();
    let data = set(20, 100);
    let one = best_of_n_eval(&model, "m", &data, &EvalOptions { n_samples: 1, ..Default::default() }).unwrap();
    let twenty = best_of_n_eval(&model, "m", &data, &EvalOptions::default()).unwrap();
    for (a, b) in twenty.per_sequence.iter().zip(&one.per_sequence) {
        assert!(a.ade <= b.ade);
    }
    let flat = EvalOptions { sigma_scale: 0.0, ..Default::default() };
    let a = best_of_n_eval(&model, "m", &data, &flat).unwrap();
    let b = best_of_n_eval(&model, "m", &data, &EvalOptions { n_samples: 1, ..flat }).unwrap();
    assert_eq!(a.ade, b.ade);
    assert_eq!(a.fde, b.fde);
    let (mean_ade, _) = mean_eval(&model, &data).unwrap();
    assert!((a.ade - mean_ade).abs() < 1e-12);
    assert!(matches!(best_of_n_eval(&model, "m", &[], &EvalOptions::default()), Err(Error::EmptySet(_))));
}

#[test]
fn per_sequence_selection_is_never_better_than_per_pedestrian() {
    let model = Model::new(&ModelConfig::preset(BackboneKind::Lstm, true, true), 4).unwrap();
    let data = set(10, 200);
    let ped = best_of_n_eval(&model, "m", &data, &EvalOptions::default()).unwrap();
    let seq = EvalOptions { selection: Selection::PerSequence, ..Default::default() };
    let seq = best_of_n_eval(&model, "m", &data, &seq).unwrap();
    assert!(ped.ade <= seq.ade + 1e-12);
}

#[test]
fn report_formats() {
    let model = Model::new(&ModelConfig::default(), 5).unwrap();
    let r = best_of_n_eval(&model, "SI-PVI-LSTM", &set(3, 300), &EvalOptions::default()).unwrap();
    assert!(r.to_kv().contains("mean_ms_per_sequence"));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.tsv");
    r.append_results(&path).unwrap();
    r.append_results(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], RESULTS_HEADER);
    assert_eq!(lines[1], lines[2]);
    assert!(lines[1].starts_with("SI-PVI-LSTM\t"));
}

#[test]
fn ablation_single_cell_equals_fit_and_eval() {
    let data = set(6, 400);
    let mut opt = OptimizerConfig::adam_regime();
    opt.epochs = 2;
    opt.batch_size = 4;
    let cell = AblationCell {
        model: ModelConfig::preset(BackboneKind::Lstm, true, false),
        optimizer: opt.clone(),
    };
    let eval = EvalOptions { n_samples: 5, ..Default::default() };
    let table = run_ablation(std::slice::from_ref(&cell), &data[..4], &data[4..5], &data[5..], &[7], &eval, None, true);
    let row = table.row("SI-LSTM").unwrap();
    assert!(row.si && !row.pvi && row.rp() && !row.rv);

    let model = Model::new(&cell.model, 7).unwrap();
    let opts = crate::training::FitOptions { quiet: true, ..Default::default() };
    let (mut model, out) = crate::training::fit(model, &data[..4], &data[4..5], &opt, 7, &opts).unwrap();
    *model.params_mut() = out.best;
    let direct = best_of_n_eval(&model, "SI-LSTM", &data[5..], &EvalOptions { seed: 7, ..eval }).unwrap();
    assert_eq!(row.median_ade(), Some(direct.ade));
    assert!(table.to_text().contains("SI-LSTM\t"));
}

#[test]
fn ablation_records_failures_and_continues() {
    let data = set(3, 500);
    let bad = AblationCell {
        model: ModelConfig::preset(BackboneKind::Conv, false, false),
        optimizer: OptimizerConfig { lr: -1.0, ..OptimizerConfig::sgd_regime() },
    };
    let mut good_opt = OptimizerConfig::sgd_regime();
    good_opt.epochs = 1;
    let good = AblationCell {
        model: ModelConfig::preset(BackboneKind::Conv, false, true),
        optimizer: good_opt,
    };
    let eval = EvalOptions { n_samples: 2, ..Default::default() };
    let table = run_ablation(&[bad, good], &data[..2], &[], &data[2..], &[1], &eval, None, true);
    assert!(table.rows[0].runs[0].is_err());
    assert!(table.rows[1].runs[0].is_ok());
    assert!(table.to_text().contains("failed"));
}
