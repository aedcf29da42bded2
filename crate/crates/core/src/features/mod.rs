//! Per-frame feature extractors: spatial embedding, social pooling, the
//! pedestrian-vehicle interaction (PVI) extractor and the aggregation module.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::layers::{Dense, Mlp};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};
use crate::trajdata::SequenceSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `[e | s | v]`; the LSTM variant.
    Concat,
    /// Gated sum of `e` and projected `s`, then `| v`; the Conv variant.
    WeightedSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub embed_dim: usize,
    pub social_mlp: Vec<usize>,
    pub pvi_mlp: Vec<usize>,
    pub pvi_state_dim: usize,
    pub use_social: bool,
    pub use_pvi: bool,
    pub use_velocity: bool,
    pub aggregation: Aggregation,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            embed_dim: 16,
            social_mlp: vec![32, 16],
            pvi_mlp: vec![32, 16],
            pvi_state_dim: 16,
            use_social: true,
            use_pvi: true,
            use_velocity: false,
            aggregation: Aggregation::Concat,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        let widths = self.social_mlp.iter().chain(&self.pvi_mlp);
        if self.embed_dim == 0
            || self.pvi_state_dim == 0
            || self.social_mlp.is_empty()
            || self.pvi_mlp.is_empty()
            || widths.into_iter().any(|&w| w == 0)
        {
            return Err(Error::Config("feature widths must be at least 1".into()));
        }
        Ok(())
    }

    pub fn social_dim(&self) -> usize {
        if self.use_social {
            *self.social_mlp.last().unwrap()
        } else {
            0
        }
    }

    pub fn attention_dim(&self) -> usize {
        *self.pvi_mlp.last().unwrap()
    }

    pub fn pvi_dim(&self) -> usize {
        match (self.use_pvi, self.aggregation) {
            (false, _) => 0,
            (true, Aggregation::Concat) => 2 * self.attention_dim(),
            (true, Aggregation::WeightedSum) => self.pvi_state_dim,
        }
    }

    /// Width of `l`.
    pub fn agg_dim(&self) -> usize {
        match self.aggregation {
            Aggregation::Concat => self.embed_dim + self.social_dim() + self.pvi_dim(),
            Aggregation::WeightedSum => self.embed_dim + self.pvi_dim(),
        }
    }
}

/// Geometry of one time step. Rows are the pedestrians features are
/// computed for; `others` are further present pedestrians that only act as
/// neighbors. Vehicles are the present ones.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FrameInput {
    pub ped_pos: Vec<[f64; 2]>,
    pub ped_disp: Vec<[f64; 2]>,
    pub others: Vec<[f64; 2]>,
    pub veh_pos: Vec<[f64; 2]>,
    pub veh_disp: Vec<[f64; 2]>,
}

impl FrameInput {
    /// Step `t` of `sample` with `rows` (pedestrian indices, all present
    /// at `t`) as feature rows.
    pub fn from_sample(sample: &SequenceSample, rows: &[usize], t: usize) -> Self {
        let mut f = FrameInput::default();
        for &i in rows {
            f.ped_pos.push(sample.ped_at(i, t));
            f.ped_disp.push(sample.ped_disp(i, t));
        }
        for i in (0..sample.n_ped()).filter(|i| !rows.contains(i)) {
            if sample.ped_present(i, t) {
                f.others.push(sample.ped_at(i, t));
            }
        }
        for j in 0..sample.n_veh() {
            if sample.veh_mask[j][t] {
                f.veh_pos.push(sample.veh_obs[j][t]);
                f.veh_disp.push(sample.veh_disp(j, t));
            }
        }
        f
    }

    pub fn n_rows(&self) -> usize {
        self.ped_pos.len()
    }

    pub fn n_veh(&self) -> usize {
        self.veh_pos.len()
    }
}

/// `e`, `s`, `v`, `l` nodes for one frame; disabled blocks are `None`.
#[derive(Debug, Clone, Copy)]
pub struct FrameFeatures {
    pub e: NodeId,
    pub s: Option<NodeId>,
    pub v: Option<NodeId>,
    pub l: NodeId,
}

#[derive(Debug, Clone)]
struct Social {
    embed: Dense,
    mlp: Mlp,
}

#[derive(Debug, Clone)]
enum PviHead {
    /// Embedding of `m` combined with `a` elementwise.
    StateEmbed(Dense),
    /// Linear map of `a` to a softmax score.
    Score(Dense),
}

#[derive(Debug, Clone)]
struct Pvi {
    pair: Dense,
    mlp: Mlp,
    state: Dense,
    head: PviHead,
}

#[derive(Debug, Clone)]
struct Gate {
    proj: Dense,
    gate: Dense,
}

/// Parameters and forward functions of every feature extractor.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    spatial: Dense,
    social: Option<Social>,
    pvi: Option<Pvi>,
    gate: Option<Gate>,
    /// Replaces the learned `(e, s)` gate of the weighted-sum aggregation.
    pub gate_override: Option<[f64; 2]>,
}

fn points(g: &mut Graph, pts: &[[f64; 2]]) -> Result<NodeId> {
    g.input(Tensor::from_points(pts))
}

fn zeros(g: &mut Graph, rows: usize, cols: usize) -> Result<NodeId> {
    g.input(Tensor::zeros(vec![rows, cols]))
}

/// `d[i·n_v + j] = veh[j] − ped[i]`.
pub fn pvi_rel_positions(ped: &[[f64; 2]], veh: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut d = Vec::with_capacity(ped.len() * veh.len());
    for p in ped {
        for v in veh {
            d.push([v[0] - p[0], v[1] - p[1]]);
        }
    }
    d
}

impl FeatureExtractor {
    pub fn new(store: &mut ParamStore, cfg: &FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let e = cfg.embed_dim;
        let spatial = Dense::new(store, "feat.spatial", 2, e)?;
        let social = if cfg.use_social {
            Some(Social {
                embed: Dense::new(store, "feat.social.embed", 2, e)?,
                mlp: Mlp::new(store, "feat.social.mlp", e, &cfg.social_mlp)?,
            })
        } else {
            None
        };
        let pvi = if cfg.use_pvi {
            let pair_in = if cfg.use_velocity { 4 } else { 2 };
            let att = cfg.attention_dim();
            let head = match cfg.aggregation {
                Aggregation::Concat => {
                    PviHead::StateEmbed(Dense::new(store, "feat.pvi.state_embed", cfg.pvi_state_dim, att)?)
                }
                Aggregation::WeightedSum => PviHead::Score(Dense::new(store, "feat.pvi.score", att, 1)?),
            };
            Some(Pvi {
                pair: Dense::new(store, "feat.pvi.pair", pair_in, e)?,
                mlp: Mlp::new(store, "feat.pvi.mlp", e, &cfg.pvi_mlp)?,
                state: Dense::new(store, "feat.pvi.state", 2, cfg.pvi_state_dim)?,
                head,
            })
        } else {
            None
        };
        let gate = if cfg.use_social && cfg.aggregation == Aggregation::WeightedSum {
            Some(Gate {
                proj: Dense::new(store, "feat.agg.proj", cfg.social_dim(), e)?,
                gate: Dense::new(store, "feat.agg.gate", 2 * e, 2)?,
            })
        } else {
            None
        };
        Ok(FeatureExtractor {
            cfg: cfg.clone(),
            spatial,
            social,
            pvi,
            gate,
            gate_override: None,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    /// `e = relu(W_e · ΔX + b)`, one row per pedestrian.
    pub fn spatial_embed(&self, g: &mut Graph, store: &ParamStore, disp: &[[f64; 2]]) -> Result<NodeId> {
        let x = points(g, disp)?;
        self.spatial.embed(g, store, x)
    }

    /// Max-pooled MLP features of every neighbor's relative position; rows
    /// without neighbors get zeros.
    pub fn social_feature(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        rows: &[[f64; 2]],
        others: &[[f64; 2]],
    ) -> Result<NodeId> {
        let mut d = Vec::new();
        let mut offsets = vec![0];
        social_pairs(rows, others, &mut d, &mut offsets);
        self.pool_social(g, store, &d, &offsets)
    }

    fn pool_social(&self, g: &mut Graph, store: &ParamStore, d: &[[f64; 2]], offsets: &[usize]) -> Result<NodeId> {
        let social = self
            .social
            .as_ref()
            .ok_or_else(|| Error::Config("social extractor disabled".into()))?;
        if d.is_empty() {
            return zeros(g, offsets.len() - 1, self.cfg.social_dim());
        }
        let x = points(g, d)?;
        let h = social.embed.embed(g, store, x)?;
        let h = social.mlp.forward(g, store, h)?;
        g.segment_max(h, offsets, None)
    }

    /// Per-pair attention features `[n_pairs × att]` from relative
    /// positions (and relative displacements when velocity input is on).
    pub fn pvi_attention(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        d: &[[f64; 2]],
        dv: Option<&[[f64; 2]]>,
    ) -> Result<NodeId> {
        let pvi = self.pvi_params()?;
        let x = match (self.cfg.use_velocity, dv) {
            (true, Some(dv)) => {
                if dv.len() != d.len() {
                    return Err(Error::shape("pvi_attention", &[d.len(), 2], &[dv.len(), 2]));
                }
                let data = d.iter().zip(dv).flat_map(|(a, b)| [a[0], a[1], b[0], b[1]]).collect();
                g.input(Tensor::new(vec![d.len(), 4], data)?)?
            }
            (true, None) => return Err(Error::invalid("velocity input enabled but not supplied")),
            (false, _) => points(g, d)?,
        };
        let h = pvi.pair.embed(g, store, x)?;
        pvi.mlp.forward(g, store, h)
    }

    /// `m = relu(W_m · ΔV + b)`, one row per vehicle.
    pub fn vehicle_movement_state(&self, g: &mut Graph, store: &ParamStore, dv: &[[f64; 2]]) -> Result<NodeId> {
        let pvi = self.pvi_params()?;
        let x = points(g, dv)?;
        pvi.state.embed(g, store, x)
    }

    fn pvi_params(&self) -> Result<&Pvi> {
        self.pvi
            .as_ref()
            .ok_or_else(|| Error::Config("pvi extractor disabled".into()))
    }

    /// PVI feature `v` for every row; zeros without vehicles.
    pub fn pvi_feature(&self, g: &mut Graph, store: &ParamStore, frame: &FrameInput) -> Result<NodeId> {
        self.pvi_stacked(g, store, std::slice::from_ref(frame))
    }

    /// `v` for the rows of every frame, stacked frame by frame.
    fn pvi_stacked(&self, g: &mut Graph, store: &ParamStore, frames: &[FrameInput]) -> Result<NodeId> {
        let pvi = self.pvi_params()?;
        let n: usize = frames.iter().map(FrameInput::n_rows).sum();
        let mut d = Vec::new();
        let mut dv = Vec::new();
        let mut veh_disp = Vec::new();
        let mut pair_vehicle = Vec::new();
        let mut offsets = vec![0];
        for f in frames {
            let base = veh_disp.len();
            d.extend(pvi_rel_positions(&f.ped_pos, &f.veh_pos));
            if self.cfg.use_velocity {
                for p in &f.ped_disp {
                    for v in &f.veh_disp {
                        dv.push([v[0] - p[0], v[1] - p[1]]);
                    }
                }
            }
            for _ in 0..f.n_rows() {
                pair_vehicle.extend(base..base + f.n_veh());
                offsets.push(pair_vehicle.len());
            }
            veh_disp.extend_from_slice(&f.veh_disp);
        }
        if d.is_empty() {
            return zeros(g, n, self.cfg.pvi_dim());
        }
        let a = self.pvi_attention(g, store, &d, self.cfg.use_velocity.then_some(&dv[..]))?;
        let m = self.vehicle_movement_state(g, store, &veh_disp)?;
        match &pvi.head {
            PviHead::StateEmbed(embed) => {
                let m2 = embed.embed(g, store, m)?;
                let mg = g.gather(m2, &pair_vehicle)?;
                let prod = g.mul(mg, a)?;
                let pooled = g.segment_max(prod, &offsets, None)?;
                let pooled_a = g.segment_max(a, &offsets, None)?;
                g.concat(&[pooled, pooled_a], 1)
            }
            PviHead::Score(score) => {
                let s = score.forward(g, store, a)?;
                let s = g.reshape(s, &[d.len()])?;
                let w = g.segment_softmax(s, &offsets)?;
                let mg = g.gather(m, &pair_vehicle)?;
                g.segment_weighted_sum(mg, w, &offsets)
            }
        }
    }

    /// Combines `e`, `s`, `v` into `l`.
    pub fn aggregate(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        e: NodeId,
        s: Option<NodeId>,
        v: Option<NodeId>,
    ) -> Result<NodeId> {
        let mut blocks = vec![e];
        match self.cfg.aggregation {
            Aggregation::Concat => blocks.extend(s),
            Aggregation::WeightedSum => {
                if let (Some(s), Some(gate)) = (s, &self.gate) {
                    let n = g.value(e).rows();
                    let sp = gate.proj.forward(g, store, s)?;
                    let w = match self.gate_override {
                        Some(w) => g.input(Tensor::new(vec![n, 2], w.repeat(n))?)?,
                        None => {
                            let es = g.concat(&[e, sp], 1)?;
                            let logits = gate.gate.forward(g, store, es)?;
                            g.softmax_rows(logits)?
                        }
                    };
                    let w0 = g.slice(w, 1, 0, 1)?;
                    let w1 = g.slice(w, 1, 1, 1)?;
                    let a = g.row_scale(e, w0)?;
                    let b = g.row_scale(sp, w1)?;
                    blocks[0] = g.add(a, b)?;
                }
            }
        }
        blocks.extend(v);
        if blocks.len() == 1 {
            Ok(blocks[0])
        } else {
            g.concat(&blocks, 1)
        }
    }

    /// `e` only; the interaction blocks are skipped.
    pub fn embed_only(&self, g: &mut Graph, store: &ParamStore, frame: &FrameInput) -> Result<NodeId> {
        self.spatial_embed(g, store, &frame.ped_disp)
    }

    pub fn frame_features(&self, g: &mut Graph, store: &ParamStore, frame: &FrameInput) -> Result<FrameFeatures> {
        self.stacked_features(g, store, std::slice::from_ref(frame))
    }

    /// Features of several frames at once, rows stacked frame by frame.
    /// Row for row identical to calling [`Self::frame_features`] per frame.
    pub fn stacked_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        frames: &[FrameInput],
    ) -> Result<FrameFeatures> {
        let disp: Vec<[f64; 2]> = frames.iter().flat_map(|f| f.ped_disp.iter().copied()).collect();
        let e = self.spatial_embed(g, store, &disp)?;
        let s = match self.social {
            Some(_) => {
                let mut d = Vec::new();
                let mut offsets = vec![0];
                for f in frames {
                    social_pairs(&f.ped_pos, &f.others, &mut d, &mut offsets);
                }
                Some(self.pool_social(g, store, &d, &offsets)?)
            }
            None => None,
        };
        let v = match self.pvi {
            Some(_) => Some(self.pvi_stacked(g, store, frames)?),
            None => None,
        };
        let l = self.aggregate(g, store, e, s, v)?;
        Ok(FrameFeatures { e, s, v, l })
    }
}

/// Appends the relative positions of each row's neighbors to `d` and one
/// segment end per row to `offsets`.
fn social_pairs(rows: &[[f64; 2]], others: &[[f64; 2]], d: &mut Vec<[f64; 2]>, offsets: &mut Vec<usize>) {
    for (i, p) in rows.iter().enumerate() {
        let neighbors = rows
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, q)| q)
            .chain(others);
        for q in neighbors {
            d.push([q[0] - p[0], q[1] - p[1]]);
        }
        offsets.push(d.len());
    }
}
