//! Synthetic street scenes with a tunable vehicle → pedestrian coupling.
//!
//! Pedestrians walk toward goals under a relaxation (goal-attraction) term
//! and are pushed away from the near-future position of every vehicle inside
//! the repulsion radius with force `gain / d²`. Vehicles ignore pedestrians
//! and drive straight or gently curving paths at constant speed; each vehicle
//! is aimed at a point on some pedestrian's undisturbed path so encounters
//! happen inside the scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::scene::{AgentKind, AgentTrack, Scene, TrackPoint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Inclusive pedestrian count range per scene.
    pub pedestrians: [usize; 2],
    /// Inclusive vehicle count range per scene.
    pub vehicles: [usize; 2],
    /// Vehicle speed range, m/s. Vehicles below 0.1 m/s are parked.
    pub vehicle_speed: [f64; 2],
    /// Preferred walking speed range, m/s.
    pub walking_speed: [f64; 2],
    /// Vehicle repulsion gain, m³/s².
    pub repulsion_gain: f64,
    /// Vehicles farther than this (m) exert no force.
    pub repulsion_radius: f64,
    /// How far ahead (s) the repelling vehicle position is extrapolated.
    pub lookahead: f64,
    /// Goal-attraction gain, 1/s.
    pub goal_gain: f64,
    /// Std-dev of Gaussian position noise added to every recorded sample, m.
    pub noise_sigma: f64,
    /// Scene length, s.
    pub duration: f64,
    /// Simulation and output frame rate, Hz.
    pub frame_rate: f64,
    /// Pedestrians start uniformly in `[-area, area]²`, m.
    pub area: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            pedestrians: [2, 5],
            vehicles: [1, 3],
            vehicle_speed: [0.0, 6.0],
            walking_speed: [1.2, 1.6],
            repulsion_gain: 12.0,
            repulsion_radius: 6.0,
            lookahead: 1.0,
            goal_gain: 1.5,
            noise_sigma: 0.02,
            duration: 8.0,
            frame_rate: 10.0,
            area: 10.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synth config: {m}")));
        if !(self.duration > 0.0) || !(self.frame_rate > 0.0) || self.frames() < 2 {
            return bad("duration and frame rate must give at least two frames");
        }
        if self.repulsion_gain < 0.0 || self.goal_gain < 0.0 || self.noise_sigma < 0.0 {
            return bad("gains and noise must be non-negative");
        }
        if !(self.repulsion_radius > 0.0) || !(self.area > 0.0) || self.lookahead < 0.0 {
            return bad("radius and area must be positive, lookahead non-negative");
        }
        if self.pedestrians[0] > self.pedestrians[1]
            || self.vehicles[0] > self.vehicles[1]
            || self.vehicle_speed[0] > self.vehicle_speed[1]
            || self.walking_speed[0] > self.walking_speed[1]
            || self.vehicle_speed[0] < 0.0
            || self.walking_speed[0] <= 0.0
        {
            return bad("ranges must be ordered and speeds non-negative");
        }
        Ok(())
    }

    pub fn frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

struct Walker {
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    speed: f64,
}

fn range_f(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.gen_range(r[0]..r[1])
    } else {
        r[0]
    }
}

/// Generates one scene; identical configs give bit-identical scenes.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frames = cfg.frames();
    let dt = 1.0 / cfg.frame_rate;
    let n_ped = rng.gen_range(cfg.pedestrians[0]..=cfg.pedestrians[1]);
    let n_veh = rng.gen_range(cfg.vehicles[0]..=cfg.vehicles[1]);

    let mut walkers: Vec<Walker> = (0..n_ped)
        .map(|_| {
            let pos = [rng.gen_range(-cfg.area..cfg.area), rng.gen_range(-cfg.area..cfg.area)];
            let heading: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
            let speed = range_f(&mut rng, cfg.walking_speed);
            let reach = speed * cfg.duration + 10.0;
            let (s, c) = heading.sin_cos();
            Walker {
                pos,
                vel: [speed * c, speed * s],
                goal: [pos[0] + reach * c, pos[1] + reach * s],
                speed,
            }
        })
        .collect();

    // vehicle paths: [frame] -> (position, velocity)
    let mut vehicles: Vec<Vec<([f64; 2], [f64; 2])>> = Vec::with_capacity(n_veh);
    for _ in 0..n_veh {
        let speed = range_f(&mut rng, cfg.vehicle_speed);
        let heading: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let turn_rate = if rng.gen::<bool>() { 0.0 } else { rng.gen_range(-0.05..0.05) };
        let conflict_t = rng.gen_range(0.45..0.85) * cfg.duration;
        let lateral: f64 = rng.gen_range(-1.5..1.5);
        let conflict = if n_ped > 0 {
            let w = &walkers[rng.gen_range(0..n_ped)];
            [w.pos[0] + w.vel[0] * conflict_t, w.pos[1] + w.vel[1] * conflict_t]
        } else {
            [0.0, 0.0]
        };
        let parked = speed < 0.1;
        let speed = if parked { 0.0 } else { speed };
        let mut path = Vec::with_capacity(frames);
        let mut p = [0.0, 0.0];
        for f in 0..frames {
            let th = heading + turn_rate * f as f64 * dt;
            let v = [speed * th.cos(), speed * th.sin()];
            path.push((p, v));
            p = [p[0] + v[0] * dt, p[1] + v[1] * dt];
        }
        // place the vehicle so that it crosses `conflict` at `conflict_t`,
        // offset sideways by `lateral` meters
        let k = ((conflict_t / dt) as usize).min(frames - 1);
        let (s, c) = (heading + turn_rate * k as f64 * dt).sin_cos();
        let at = path[k].0;
        let off = [conflict[0] - at[0] - lateral * s, conflict[1] - at[1] + lateral * c];
        for (pos, _) in &mut path {
            pos[0] += off[0];
            pos[1] += off[1];
        }
        vehicles.push(path);
    }

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let jitter = |rng: &mut ChaCha8Rng| {
        if cfg.noise_sigma > 0.0 {
            noise.sample(rng)
        } else {
            0.0
        }
    };

    let mut ped_pts: Vec<Vec<TrackPoint>> = vec![Vec::with_capacity(frames); n_ped];
    for f in 0..frames {
        for (w, pts) in walkers.iter().zip(ped_pts.iter_mut()) {
            let x = w.pos[0] + jitter(&mut rng);
            let y = w.pos[1] + jitter(&mut rng);
            pts.push(TrackPoint::new(f as i64, x, y));
        }
        for w in &mut walkers {
            let to_goal = [w.goal[0] - w.pos[0], w.goal[1] - w.pos[1]];
            let dist = to_goal[0].hypot(to_goal[1]);
            let desired = if dist > 1e-9 {
                [w.speed * to_goal[0] / dist, w.speed * to_goal[1] / dist]
            } else {
                [0.0, 0.0]
            };
            let mut acc = [
                cfg.goal_gain * (desired[0] - w.vel[0]),
                cfg.goal_gain * (desired[1] - w.vel[1]),
            ];
            if cfg.repulsion_gain > 0.0 {
                for path in &vehicles {
                    let (vp, vv) = path[f];
                    let ahead = [vp[0] + vv[0] * cfg.lookahead, vp[1] + vv[1] * cfg.lookahead];
                    let r = [w.pos[0] - ahead[0], w.pos[1] - ahead[1]];
                    let d = r[0].hypot(r[1]);
                    if d >= cfg.repulsion_radius || d < 1e-9 {
                        continue;
                    }
                    let mag = cfg.repulsion_gain / d.max(0.5).powi(2);
                    acc[0] += mag * r[0] / d;
                    acc[1] += mag * r[1] / d;
                }
            }
            w.vel[0] += acc[0] * dt;
            w.vel[1] += acc[1] * dt;
            let sp = w.vel[0].hypot(w.vel[1]);
            if sp > 3.0 {
                w.vel = [w.vel[0] * 3.0 / sp, w.vel[1] * 3.0 / sp];
            }
            w.pos[0] += w.vel[0] * dt;
            w.pos[1] += w.vel[1] * dt;
        }
    }

    let mut tracks = Vec::with_capacity(n_ped + n_veh);
    for (i, pts) in ped_pts.into_iter().enumerate() {
        tracks.push(AgentTrack::new(format!("p{i}"), AgentKind::Pedestrian, pts)?);
    }
    for (j, path) in vehicles.iter().enumerate() {
        let pts = path
            .iter()
            .enumerate()
            .map(|(f, (p, _))| TrackPoint::new(f as i64, p[0] + jitter(&mut rng), p[1] + jitter(&mut rng)))
            .collect();
        tracks.push(AgentTrack::new(format!("v{j}"), AgentKind::Vehicle, pts)?);
    }
    Scene::new(format!("synth-{}", cfg.seed), cfg.frame_rate, tracks)
}

/// `count` scenes with seeds `seed, seed + 1, …`.
pub fn synth_corpus(cfg: &SynthConfig, count: usize) -> Result<Vec<Scene>> {
    (0..count as u64)
        .map(|k| {
            synth_generate(&SynthConfig {
                seed: cfg.seed.wrapping_add(k),
                ..cfg.clone()
            })
        })
        .collect()
}
