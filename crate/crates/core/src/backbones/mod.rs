//! Prediction backbones (LSTM encoder-decoder, TCN + convolutional
//! extrapolator) and the model wrapper combining them with the feature
//! extractors.

mod gaussian;

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{Aggregation, FeatureConfig, FeatureExtractor, FrameInput};
use crate::tensor::layers::{Conv1d, Dense, LstmWeights};
use crate::tensor::{read_text, write_file, Graph, NodeId, ParamStore, Tensor};
use crate::trajdata::SequenceSample;

pub use gaussian::{sample_rng, sample_trajectories, GaussianParams, PredictionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    Lstm,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub hidden_dim: usize,
    pub tcn_layers: usize,
    pub tcn_channels: usize,
    pub tcn_kernel: usize,
    pub extrapolator_layers: usize,
    pub extrapolator_kernel: usize,
    pub obs_steps: usize,
    pub pred_steps: usize,
    /// Feed ground-truth displacements to the LSTM decoder during training.
    pub teacher_forcing: bool,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Lstm,
            hidden_dim: 32,
            tcn_layers: 2,
            tcn_channels: 32,
            tcn_kernel: 3,
            extrapolator_layers: 3,
            extrapolator_kernel: 3,
            obs_steps: 8,
            pred_steps: 12,
            teacher_forcing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub features: FeatureConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::preset(BackboneKind::Lstm, true, true)
    }
}

impl ModelConfig {
    /// Default widths for a backbone with the given interaction blocks; the
    /// aggregation variant follows the backbone.
    pub fn preset(kind: BackboneKind, social: bool, pvi: bool) -> Self {
        ModelConfig {
            backbone: BackboneConfig {
                kind,
                ..Default::default()
            },
            features: FeatureConfig {
                use_social: social,
                use_pvi: pvi,
                aggregation: match kind {
                    BackboneKind::Lstm => Aggregation::Concat,
                    BackboneKind::Conv => Aggregation::WeightedSum,
                },
                ..Default::default()
            },
        }
    }

    /// Table label such as `SI-PVI-Conv`.
    pub fn label(&self) -> String {
        let mut s = String::new();
        if self.features.use_social {
            s.push_str("SI-");
        }
        if self.features.use_pvi {
            s.push_str("PVI-");
        }
        s.push_str(match self.backbone.kind {
            BackboneKind::Lstm => "LSTM",
            BackboneKind::Conv => "Conv",
        });
        if self.features.use_velocity {
            s.push_str("+RV");
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        let b = &self.backbone;
        if b.hidden_dim == 0
            || b.tcn_layers == 0
            || b.tcn_channels == 0
            || b.extrapolator_layers == 0
            || b.obs_steps == 0
            || b.pred_steps == 0
        {
            return Err(Error::Config("backbone sizes must be at least 1".into()));
        }
        if b.tcn_kernel.is_multiple_of(2) || b.extrapolator_kernel.is_multiple_of(2) {
            return Err(Error::Config("convolution kernels must be odd".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
struct LstmBackbone {
    encoder: LstmWeights,
    inject: Dense,
    dec_embed: Dense,
    decoder: LstmWeights,
    head: Dense,
}

#[derive(Debug, Clone)]
struct ConvBackbone {
    tcn: Vec<Conv1d>,
    extrapolator: Vec<Conv1d>,
    head: Dense,
}

#[derive(Debug, Clone)]
enum Backbone {
    Lstm(LstmBackbone),
    Conv(ConvBackbone),
}

/// Feature extractors, backbone and their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    features: FeatureExtractor,
    backbone: Backbone,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let features = FeatureExtractor::new(&mut store, &cfg.features)?;
        let b = &cfg.backbone;
        let e = cfg.features.embed_dim;
        let agg = cfg.features.agg_dim();
        let backbone = match b.kind {
            BackboneKind::Lstm => {
                let h = b.hidden_dim;
                Backbone::Lstm(LstmBackbone {
                    encoder: LstmWeights::new(&mut store, "enc.lstm", e, h)?,
                    inject: Dense::new(&mut store, "dec.inject", h + agg, h)?,
                    dec_embed: Dense::new(&mut store, "dec.embed", 2, e)?,
                    decoder: LstmWeights::new(&mut store, "dec.lstm", e, h)?,
                    head: Dense::new(&mut store, "dec.head", h, 5)?,
                })
            }
            BackboneKind::Conv => {
                let c = b.tcn_channels;
                let mut tcn = Vec::with_capacity(b.tcn_layers);
                for i in 0..b.tcn_layers {
                    let input = if i == 0 { agg } else { c };
                    tcn.push(Conv1d::new(&mut store, &format!("tcn.{i}"), input, c, b.tcn_kernel)?);
                }
                let mut extrapolator = Vec::with_capacity(b.extrapolator_layers);
                for i in 0..b.extrapolator_layers {
                    let input = if i == 0 { b.obs_steps } else { b.pred_steps };
                    extrapolator.push(Conv1d::new(
                        &mut store,
                        &format!("cnn.{i}"),
                        input,
                        b.pred_steps,
                        b.extrapolator_kernel,
                    )?);
                }
                Backbone::Conv(ConvBackbone {
                    tcn,
                    extrapolator,
                    head: Dense::new(&mut store, "cnn.head", c, 5)?,
                })
            }
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            features,
            backbone,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn features(&self) -> &FeatureExtractor {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut FeatureExtractor {
        &mut self.features
    }

    fn check_sample(&self, sample: &SequenceSample) -> Result<Vec<usize>> {
        let b = &self.cfg.backbone;
        if sample.t_obs() != b.obs_steps || sample.t_pred() != b.pred_steps {
            return Err(Error::shape(
                "model input",
                &[sample.t_obs(), sample.t_pred()],
                &[b.obs_steps, b.pred_steps],
            ));
        }
        let rows = sample.targets();
        if rows.is_empty() {
            return Err(Error::EmptySet("model input targets"));
        }
        Ok(rows)
    }

    /// Head outputs `[n_targets × pred_steps × 5]` for the target
    /// pedestrians of `sample`, in target order. `train` enables teacher
    /// forcing when configured.
    pub fn forward(&self, g: &mut Graph, sample: &SequenceSample, train: bool) -> Result<NodeId> {
        let rows = self.check_sample(sample)?;
        match &self.backbone {
            Backbone::Lstm(b) => self.lstm_forward(b, g, sample, &rows, train),
            Backbone::Conv(b) => self.conv_forward(b, g, sample, &rows),
        }
    }

    fn lstm_forward(
        &self,
        b: &LstmBackbone,
        g: &mut Graph,
        sample: &SequenceSample,
        rows: &[usize],
        train: bool,
    ) -> Result<NodeId> {
        let st = &self.store;
        let n = rows.len();
        let hd = b.encoder.hidden;
        let t_obs = self.cfg.backbone.obs_steps;
        let mut h = g.input(Tensor::zeros(vec![n, hd]))?;
        let mut c = g.input(Tensor::zeros(vec![n, hd]))?;
        let mut l = None;
        for t in 0..t_obs {
            let frame = FrameInput::from_sample(sample, rows, t);
            let e = if t + 1 == t_obs {
                let f = self.features.frame_features(g, st, &frame)?;
                l = Some(f.l);
                f.e
            } else {
                self.features.embed_only(g, st, &frame)?
            };
            (h, c) = b.encoder.step(g, st, e, h, c)?;
        }
        let hl = g.concat(&[h, l.unwrap()], 1)?;
        let h0 = b.inject.forward(g, st, hl)?;
        h = g.tanh(h0)?;

        let last: Vec<[f64; 2]> = rows.iter().map(|&i| sample.ped_disp(i, t_obs - 1)).collect();
        let mut prev = g.input(Tensor::from_points(&last))?;
        let truth: Option<Vec<Vec<[f64; 2]>>> = (train && self.cfg.backbone.teacher_forcing)
            .then(|| rows.iter().map(|&i| sample.future_disp(i)).collect());
        let steps = self.cfg.backbone.pred_steps;
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = b.dec_embed.embed(g, st, prev)?;
            (h, c) = b.decoder.step(g, st, x, h, c)?;
            let raw = b.head.forward(g, st, h)?;
            let o = g.gaussian_head(raw)?;
            outs.push(o);
            prev = match &truth {
                Some(tr) => {
                    let pts: Vec<[f64; 2]> = tr.iter().map(|p| p[t]).collect();
                    g.input(Tensor::from_points(&pts))?
                }
                None => g.slice(o, 1, 0, 2)?,
            };
        }
        let stacked = g.concat(&outs, 0)?;
        let stacked = g.reshape(stacked, &[steps, n, 5])?;
        g.permute(stacked, &[1, 0, 2])
    }

    fn conv_forward(
        &self,
        b: &ConvBackbone,
        g: &mut Graph,
        sample: &SequenceSample,
        rows: &[usize],
    ) -> Result<NodeId> {
        let st = &self.store;
        let n = rows.len();
        let t_obs = self.cfg.backbone.obs_steps;
        let agg = self.cfg.features.agg_dim();
        let frames: Vec<FrameInput> = (0..t_obs).map(|t| FrameInput::from_sample(sample, rows, t)).collect();
        let x = self.features.stacked_features(g, st, &frames)?.l;
        let x = g.reshape(x, &[t_obs, n, agg])?;
        let mut x = g.permute(x, &[1, 2, 0])?;
        for conv in &b.tcn {
            let y = conv.forward(g, st, x)?;
            x = g.relu(y)?;
        }
        let mut x = g.permute(x, &[0, 2, 1])?;
        let last = b.extrapolator.len() - 1;
        for (i, conv) in b.extrapolator.iter().enumerate() {
            x = conv.forward(g, st, x)?;
            if i < last {
                x = g.relu(x)?;
            }
        }
        let raw = b.head.forward(g, st, x)?;
        g.gaussian_head(raw)
    }

    /// Mean NLL of the targets' true future displacements.
    pub fn loss(&self, g: &mut Graph, sample: &SequenceSample) -> Result<NodeId> {
        let out = self.forward(g, sample, true)?;
        let target: Vec<f64> = sample
            .targets()
            .into_iter()
            .flat_map(|i| sample.future_disp(i))
            .flatten()
            .collect();
        let mask = vec![true; target.len() / 2];
        g.bivariate_nll(out, &target, &mask)
    }

    /// Loss value and gradient buffers in parameter-store order.
    pub fn loss_and_grads(&self, sample: &SequenceSample) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new();
        let loss = self.loss(&mut g, sample)?;
        g.backward(loss)?;
        let mut grads: Vec<Vec<f64>> = self.store.iter().map(|(_, p)| vec![0.0; p.value.len()]).collect();
        for (pid, node) in g.param_nodes() {
            if let Some(gr) = g.grad(node) {
                grads[pid.index()].copy_from_slice(gr);
            }
        }
        Ok((g.value(loss).data()[0], grads))
    }

    pub fn predict(&self, sample: &SequenceSample) -> Result<GaussianParams> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, sample, false)?;
        GaussianParams::from_tensor(g.value(out))
    }

    /// Last observed positions of the targets of `sample`.
    pub fn origins(sample: &SequenceSample) -> Vec<[f64; 2]> {
        let t = sample.t_obs() - 1;
        sample.targets().into_iter().map(|i| sample.ped_at(i, t)).collect()
    }

    /// Writes parameters plus `model.toml` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.store.save(dir, &self.cfg.hash())?;
        write_file(&dir.join("model.toml"), self.cfg.to_toml().as_bytes())
    }

    /// Rebuilds a model saved with [`Model::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let text = read_text(&dir.join("model.toml"))?;
        let cfg: ModelConfig = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let seed = read_text(&dir.join("manifest.txt"))?
            .lines()
            .find_map(|l| l.strip_prefix("#seed ").and_then(|s| s.trim().parse().ok()))
            .unwrap_or(0);
        let mut model = Model::new(&cfg, seed)?;
        let hash = model.store.load(dir)?;
        if hash != cfg.hash() {
            return Err(Error::Config(format!(
                "checkpoint config hash {hash} does not match model.toml ({})",
                cfg.hash()
            )));
        }
        Ok(model)
    }
}
