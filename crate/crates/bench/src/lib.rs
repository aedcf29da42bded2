//! Fixed inputs shared by the latency benchmarks.

use pvi_core::trajdata::{synth_corpus, window_sequences, resample};
use pvi_core::{BackboneKind, Model, ModelConfig, SequenceSample, SynthConfig};

/// Windowed sequences from a fixed synthetic corpus.
pub fn fixture(scenes: usize) -> Vec<SequenceSample> {
    let cfg = SynthConfig {
        duration: 10.0,
        seed: 7,
        ..SynthConfig::default()
    };
    let mut out = Vec::new();
    for scene in synth_corpus(&cfg, scenes).expect("valid synth config") {
        let scene = resample(&scene, 4).expect("keep_every 4");
        out.extend(window_sequences(&scene, 8, 12, 1).expect("window sizes"));
    }
    out
}

/// The two models compared for the PVI overhead: Conv with SI, with and
/// without the PVI block.
pub fn conv_pair(seed: u64) -> (Model, Model) {
    let build = |pvi| Model::new(&ModelConfig::preset(BackboneKind::Conv, true, pvi), seed).expect("preset");
    (build(false), build(true))
}
