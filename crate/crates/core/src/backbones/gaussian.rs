use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-pedestrian, per-step bivariate Gaussian over displacements:
/// `(μx, μy, σx, σy, ρ)` rows of a `[n × steps × 5]` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    n: usize,
    steps: usize,
    data: Vec<f64>,
}

impl GaussianParams {
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || s[2] != 5 {
            return Err(Error::shape("gaussian params", s, &[0, 0, 5]));
        }
        let p = GaussianParams {
            n: s[0],
            steps: s[1],
            data: t.data().to_vec(),
        };
        if p.data.chunks(5).any(|r| !(r[2] > 0.0 && r[3] > 0.0 && r[4].abs() < 1.0)) {
            return Err(Error::invalid("gaussian params need σ > 0 and |ρ| < 1"));
        }
        Ok(p)
    }

    pub fn n_ped(&self) -> usize {
        self.n
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `[μx, μy, σx, σy, ρ]` of pedestrian `i` at step `t`.
    pub fn at(&self, i: usize, t: usize) -> &[f64] {
        let o = (i * self.steps + t) * 5;
        &self.data[o..o + 5]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Cumulative mean displacements of pedestrian `i`.
    pub fn mean_offsets(&self, i: usize) -> Vec<[f64; 2]> {
        let mut acc = [0.0, 0.0];
        (0..self.steps)
            .map(|t| {
                let p = self.at(i, t);
                acc = [acc[0] + p[0], acc[1] + p[1]];
                acc
            })
            .collect()
    }
}

/// Sampled futures. Offsets are cumulative displacements relative to each
/// pedestrian's last observed position `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub params: GaussianParams,
    pub origin: Vec<[f64; 2]>,
    /// `[sample][pedestrian][step]`
    pub offsets: Vec<Vec<Vec<[f64; 2]>>>,
}

impl PredictionSet {
    pub fn n_samples(&self) -> usize {
        self.offsets.len()
    }

    /// Absolute positions of sample `k` for pedestrian `i`.
    pub fn trajectory(&self, k: usize, i: usize) -> Vec<[f64; 2]> {
        let o = self.origin[i];
        self.offsets[k][i].iter().map(|d| [o[0] + d[0], o[1] + d[1]]).collect()
    }

    pub fn mean_trajectory(&self, i: usize) -> Vec<[f64; 2]> {
        let o = self.origin[i];
        self.params
            .mean_offsets(i)
            .into_iter()
            .map(|d| [o[0] + d[0], o[1] + d[1]])
            .collect()
    }
}

/// RNG for the sampling of sequence `stream` under `seed`.
pub fn sample_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n_samples` futures with independent steps. Draws are taken
/// sample-major, so the first `k` samples do not depend on `n_samples`.
/// `sigma_scale` multiplies every σ; 0 returns the mean in every sample.
pub fn sample_trajectories(
    params: &GaussianParams,
    origin: &[[f64; 2]],
    n_samples: usize,
    sigma_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PredictionSet> {
    if origin.len() != params.n_ped() {
        return Err(Error::shape("sample_trajectories", &[params.n_ped()], &[origin.len()]));
    }
    let mut offsets = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let mut sample = Vec::with_capacity(params.n_ped());
        for i in 0..params.n_ped() {
            let mut acc = [0.0, 0.0];
            let mut path = Vec::with_capacity(params.steps());
            for t in 0..params.steps() {
                let p = params.at(i, t);
                let z1: f64 = StandardNormal.sample(rng);
                let z2: f64 = StandardNormal.sample(rng);
                let (sx, sy, rho) = (p[2] * sigma_scale, p[3] * sigma_scale, p[4]);
                let dx = p[0] + sx * z1;
                let dy = p[1] + sy * (rho * z1 + (1.0 - rho * rho).sqrt() * z2);
                acc = [acc[0] + dx, acc[1] + dy];
                path.push(acc);
            }
            sample.push(path);
        }
        offsets.push(sample);
    }
    Ok(PredictionSet {
        params: params.clone(),
        origin: origin.to_vec(),
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_step(p: [f64; 5]) -> GaussianParams {
        GaussianParams::from_tensor(&Tensor::new(vec![1, 1, 5], p.to_vec()).unwrap()).unwrap()
    }

    #[test]
    fn zero_sigma_scale_gives_the_mean() {
        let data: Vec<f64> = (0..2 * 12).flat_map(|k| [0.1 * k as f64, -0.05, 0.7, 0.3, 0.4]).collect();
        let p = GaussianParams::from_tensor(&Tensor::new(vec![2, 12, 5], data).unwrap()).unwrap();
        let set = sample_trajectories(&p, &[[1.0, 2.0], [0.0, 0.0]], 20, 0.0, &mut sample_rng(3, 0)).unwrap();
        for k in 0..20 {
            for i in 0..2 {
                assert_eq!(set.trajectory(k, i), set.mean_trajectory(i));
            }
        }
    }

    #[test]
    fn monte_carlo_mean_and_correlation() {
        let p = one_step([0.3, -0.2, 0.5, 1.5, 0.6]);
        let n = 100_000;
        let set = sample_trajectories(&p, &[[0.0, 0.0]], n, 1.0, &mut sample_rng(1, 0)).unwrap();
        let xs: Vec<[f64; 2]> = set.offsets.iter().map(|s| s[0][0]).collect();
        let mx = xs.iter().map(|d| d[0]).sum::<f64>() / n as f64;
        let my = xs.iter().map(|d| d[1]).sum::<f64>() / n as f64;
        assert!((mx - 0.3).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!((my + 0.2).abs() < 3.0 * 1.5 / (n as f64).sqrt());
        let cov = xs.iter().map(|d| (d[0] - mx) * (d[1] - my)).sum::<f64>() / n as f64;
        assert!((cov / (0.5 * 1.5) - 0.6).abs() < 0.02);
    }

    #[test]
    fn sampling_is_seeded_and_nested() {
        let p = one_step([0.0, 0.0, 1.0, 1.0, 0.0]);
        let a = sample_trajectories(&p, &[[0.0, 0.0]], 20, 1.0, &mut sample_rng(5, 2)).unwrap();
        let b = sample_trajectories(&p, &[[0.0, 0.0]], 20, 1.0, &mut sample_rng(5, 2)).unwrap();
        assert_eq!(a, b);
        let c = sample_trajectories(&p, &[[0.0, 0.0]], 1, 1.0, &mut sample_rng(5, 2)).unwrap();
        assert_eq!(c.offsets[0], a.offsets[0]);
        let d = sample_trajectories(&p, &[[0.0, 0.0]], 1, 1.0, &mut sample_rng(5, 3)).unwrap();
        assert_ne!(d.offsets[0], a.offsets[0]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let t = Tensor::new(vec![1, 1, 5], vec![0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert!(GaussianParams::from_tensor(&t).is_err());
        let t = Tensor::new(vec![1, 5], vec![0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        assert!(GaussianParams::from_tensor(&t).is_err());
    }
}
