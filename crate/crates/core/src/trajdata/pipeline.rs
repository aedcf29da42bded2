use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::io::split_indices;
use super::scene::{EgoPose, Scene};
use super::transform::{filter_range, resample, to_global_frame};
use super::window::{window_sequences, SequenceSample, T_OBS, T_PRED};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub keep_every: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub skip: usize,
    /// Sensor range (m) around the ego origin; applied when poses are given.
    pub range: f64,
    /// Fraction of scenes assigned to the training split.
    pub train_fraction: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            keep_every: 4,
            t_obs: T_OBS,
            t_pred: T_PRED,
            skip: 1,
            range: 75.0,
            train_fraction: 0.9,
        }
    }
}

/// Per-split counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SplitSummary {
    pub scenes: usize,
    pub sequences: usize,
    pub targets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub train_summary: SplitSummary,
    pub val_summary: SplitSummary,
}

impl fmt::Display for Preprocessed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "split\tscenes\tsequences\ttargets")?;
        for (name, s) in [("train", self.train_summary), ("val", self.val_summary)] {
            writeln!(f, "{name}\t{}\t{}\t{}", s.scenes, s.sequences, s.targets)?;
        }
        Ok(())
    }
}

/// Global-frame transform (with range filtering in the ego frame first)
/// when `poses` are given, then resampling, a seeded split by scene and
/// windowing.
pub fn preprocess(
    scenes: &[Scene],
    poses: Option<&BTreeMap<String, Vec<EgoPose>>>,
    cfg: &PreprocessConfig,
    seed: u64,
) -> Result<Preprocessed> {
    if !(0.0..=1.0).contains(&cfg.train_fraction) {
        return Err(Error::invalid("train_fraction must lie in [0, 1]"));
    }
    let mut windows = Vec::with_capacity(scenes.len());
    for scene in scenes {
        let scene = match poses {
            Some(all) => {
                let p = all.get(scene.scene_id()).ok_or_else(|| Error::MissingPose {
                    scene: scene.scene_id().to_string(),
                    frame: scene.frame_range().map_or(0, |r| r.0),
                })?;
                to_global_frame(&filter_range(scene, cfg.range)?, p)?
            }
            None => scene.clone(),
        };
        let scene = resample(&scene, cfg.keep_every)?;
        windows.push(window_sequences(&scene, cfg.t_obs, cfg.t_pred, cfg.skip)?);
    }
    let (train_idx, val_idx) = split_indices(scenes.len(), cfg.train_fraction, seed);
    let gather = |idx: &[usize]| {
        let mut out = Vec::new();
        for &k in idx {
            out.extend(windows[k].iter().cloned());
        }
        let summary = SplitSummary {
            scenes: idx.len(),
            sequences: out.len(),
            targets: out.iter().map(|s: &SequenceSample| s.targets().len()).sum(),
        };
        (out, summary)
    };
    let (train, train_summary) = gather(&train_idx);
    let (val, val_summary) = gather(&val_idx);
    Ok(Preprocessed {
        train,
        val,
        train_summary,
        val_summary,
    })
}
