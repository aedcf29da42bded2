use crate::error::{Error, Result};

use super::scene::{AgentKind, Scene};

pub const T_OBS: usize = 8;
pub const T_PRED: usize = 12;

/// One fixed-length window cut from a scene.
///
/// Pedestrians present in every frame of the window are prediction targets;
/// other pedestrians and all vehicles are kept with per-frame presence masks.
/// Absent positions are stored as `[0, 0]` and must be ignored through the
/// masks.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub scene_id: String,
    pub start_frame: i64,
    pub ped_ids: Vec<String>,
    /// `[n_p][t_obs]`
    pub ped_obs: Vec<Vec<[f64; 2]>>,
    /// `[n_p][t_pred]`
    pub ped_future: Vec<Vec<[f64; 2]>>,
    /// `[n_p][t_obs + t_pred]`
    pub ped_mask: Vec<Vec<bool>>,
    pub veh_ids: Vec<String>,
    /// `[n_v][t_obs]`
    pub veh_obs: Vec<Vec<[f64; 2]>>,
    /// `[n_v][t_obs]`
    pub veh_mask: Vec<Vec<bool>>,
}

impl SequenceSample {
    pub fn t_obs(&self) -> usize {
        self.ped_obs.first().map_or(T_OBS, Vec::len)
    }

    pub fn t_pred(&self) -> usize {
        self.ped_future.first().map_or(T_PRED, Vec::len)
    }

    pub fn n_ped(&self) -> usize {
        self.ped_ids.len()
    }

    pub fn n_veh(&self) -> usize {
        self.veh_ids.len()
    }

    pub fn is_target(&self, i: usize) -> bool {
        self.ped_mask[i].iter().all(|&m| m)
    }

    /// Indices of prediction-target pedestrians.
    pub fn targets(&self) -> Vec<usize> {
        (0..self.n_ped()).filter(|&i| self.is_target(i)).collect()
    }

    pub fn ped_present(&self, i: usize, t: usize) -> bool {
        self.ped_mask[i][t]
    }

    /// Observed position of pedestrian `i` at observed step `t`.
    pub fn ped_at(&self, i: usize, t: usize) -> [f64; 2] {
        self.ped_obs[i][t]
    }

    /// Displacement of pedestrian `i` into observed step `t`; zero at the
    /// first step or when either endpoint is missing.
    pub fn ped_disp(&self, i: usize, t: usize) -> [f64; 2] {
        if t == 0 || !self.ped_mask[i][t] || !self.ped_mask[i][t - 1] {
            return [0.0, 0.0];
        }
        let (a, b) = (self.ped_obs[i][t], self.ped_obs[i][t - 1]);
        [a[0] - b[0], a[1] - b[1]]
    }

    pub fn veh_disp(&self, j: usize, t: usize) -> [f64; 2] {
        if t == 0 || !self.veh_mask[j][t] || !self.veh_mask[j][t - 1] {
            return [0.0, 0.0];
        }
        let (a, b) = (self.veh_obs[j][t], self.veh_obs[j][t - 1]);
        [a[0] - b[0], a[1] - b[1]]
    }

    /// Ground-truth future displacements of pedestrian `i`, starting from
    /// its last observed position.
    pub fn future_disp(&self, i: usize) -> Vec<[f64; 2]> {
        let mut prev = *self.ped_obs[i].last().unwrap();
        self.ped_future[i]
            .iter()
            .map(|p| {
                let d = [p[0] - prev[0], p[1] - prev[1]];
                prev = *p;
                d
            })
            .collect()
    }

    /// A fully observed window of constant-velocity walkers and vehicles
    /// with jitter; positions are quantized to multiples of 2⁻¹⁰ m.
    pub fn random(n_ped: usize, n_veh: usize, t_obs: usize, t_pred: usize, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let q = |v: f64| (v * 1024.0).round() / 1024.0;
        let track = |len: usize, speed: f64, rng: &mut rand_chacha::ChaCha8Rng| {
            let mut p = [rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0)];
            let th: f64 = rng.gen_range(-3.1..3.1);
            let v = [speed * th.cos() * 0.4, speed * th.sin() * 0.4];
            (0..len)
                .map(|_| {
                    p = [p[0] + v[0] + rng.gen_range(-0.05..0.05), p[1] + v[1] + rng.gen_range(-0.05..0.05)];
                    [q(p[0]), q(p[1])]
                })
                .collect::<Vec<_>>()
        };
        let len = t_obs + t_pred;
        let mut s = SequenceSample {
            scene_id: format!("random-{seed}"),
            start_frame: 0,
            ped_ids: (0..n_ped).map(|i| format!("p{i}")).collect(),
            ped_obs: Vec::new(),
            ped_future: Vec::new(),
            ped_mask: vec![vec![true; len]; n_ped],
            veh_ids: (0..n_veh).map(|j| format!("v{j}")).collect(),
            veh_obs: Vec::new(),
            veh_mask: vec![vec![true; t_obs]; n_veh],
        };
        for _ in 0..n_ped {
            let mut pts = track(len, 1.4, &mut rng);
            s.ped_future.push(pts.split_off(t_obs));
            s.ped_obs.push(pts);
        }
        for _ in 0..n_veh {
            let speed = rng.gen_range(0.0..6.0);
            s.veh_obs.push(track(t_obs, speed, &mut rng));
        }
        s
    }

    /// The same window with every present position shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let shift = |rows: &[Vec<[f64; 2]>], masks: &[Vec<bool>], offset: usize| {
            rows.iter()
                .zip(masks)
                .map(|(r, m)| {
                    r.iter()
                        .enumerate()
                        .map(|(t, p)| if m[t + offset] { [p[0] + dx, p[1] + dy] } else { *p })
                        .collect()
                })
                .collect::<Vec<Vec<[f64; 2]>>>()
        };
        let t_obs = self.t_obs();
        SequenceSample {
            ped_obs: shift(&self.ped_obs, &self.ped_mask, 0),
            ped_future: shift(&self.ped_future, &self.ped_mask, t_obs),
            veh_obs: shift(&self.veh_obs, &self.veh_mask, 0),
            ..self.clone()
        }
    }
}

/// `out[t] = points[t] − points[t − 1]`, `out[0] = (0, 0)`.
pub fn displacements(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(points.len());
    for (t, p) in points.iter().enumerate() {
        if t == 0 {
            out.push([0.0, 0.0]);
        } else {
            out.push([p[0] - points[t - 1][0], p[1] - points[t - 1][1]]);
        }
    }
    out
}

/// Cuts a (resampled) scene into windows of `t_obs + t_pred` grid frames,
/// one per start offset at stride `skip`. Windows without a pedestrian
/// present in every frame are dropped.
pub fn window_sequences(
    scene: &Scene,
    t_obs: usize,
    t_pred: usize,
    skip: usize,
) -> Result<Vec<SequenceSample>> {
    if t_obs < 1 || t_pred < 1 || skip < 1 {
        return Err(Error::invalid("t_obs, t_pred and skip must be at least 1"));
    }
    let Some((first, _)) = scene.frame_range() else {
        return Ok(Vec::new());
    };
    let len = t_obs + t_pred;
    let total = scene.len_frames();
    if total < len {
        return Ok(Vec::new());
    }
    let step = scene.frame_step();
    let mut out = Vec::new();
    for start in (0..=total - len).step_by(skip) {
        let frame_of = |k: usize| first + (start + k) as i64 * step;
        let mut sample = SequenceSample {
            scene_id: scene.scene_id().to_string(),
            start_frame: frame_of(0),
            ped_ids: Vec::new(),
            ped_obs: Vec::new(),
            ped_future: Vec::new(),
            ped_mask: Vec::new(),
            veh_ids: Vec::new(),
            veh_obs: Vec::new(),
            veh_mask: Vec::new(),
        };
        let mut n_targets = 0;
        for track in scene.tracks() {
            let horizon = match track.kind() {
                AgentKind::Pedestrian => len,
                AgentKind::Vehicle => t_obs,
            };
            let mut pos = Vec::with_capacity(horizon);
            let mut mask = Vec::with_capacity(horizon);
            for k in 0..horizon {
                match track.at(frame_of(k)) {
                    Some(p) => {
                        pos.push(p.xy());
                        mask.push(true);
                    }
                    None => {
                        pos.push([0.0, 0.0]);
                        mask.push(false);
                    }
                }
            }
            if !mask.iter().any(|&m| m) {
                continue;
            }
            match track.kind() {
                AgentKind::Pedestrian => {
                    if mask.iter().all(|&m| m) {
                        n_targets += 1;
                    }
                    sample.ped_ids.push(track.agent_id().to_string());
                    sample.ped_future.push(pos.split_off(t_obs));
                    sample.ped_obs.push(pos);
                    sample.ped_mask.push(mask);
                }
                AgentKind::Vehicle => {
                    sample.veh_ids.push(track.agent_id().to_string());
                    sample.veh_obs.push(pos);
                    sample.veh_mask.push(mask);
                }
            }
        }
        if n_targets > 0 {
            out.push(sample);
        }
    }
    Ok(out)
}
