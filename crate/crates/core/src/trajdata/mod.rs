//! Scene ingestion, frame transforms, resampling, windowing and synthetic
//! scene generation.

mod io;
mod pipeline;
mod scene;
mod synth;
mod transform;
mod window;

pub use io::{
    list_inputs, load_poses, load_scene_records, load_sequences, parse_scenes, parse_sequences,
    save_poses, save_scene_records, save_sequences, split_indices, write_scenes, write_sequences,
};
pub use pipeline::{preprocess, PreprocessConfig, Preprocessed, SplitSummary};
pub use scene::{AgentKind, AgentTrack, EgoPose, Scene, TrackPoint};
pub use synth::{synth_corpus, synth_generate, SynthConfig};
pub use transform::{filter_range, resample, to_global_frame, to_local_frame};
pub use window::{displacements, window_sequences, SequenceSample, T_OBS, T_PRED};
