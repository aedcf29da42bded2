//! Central finite-difference verification of reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

use super::array::Tensor;
use super::graph::{Graph, NodeId};

/// Finite-difference probe. `grad_scale` multiplies the analytic gradient
/// before comparison; anything but 1.0 plants a fault.
#[derive(Debug, Clone, Copy)]
pub struct FiniteDiff {
    pub eps: f64,
    pub grad_scale: f64,
}

impl Default for FiniteDiff {
    fn default() -> Self {
        FiniteDiff {
            eps: 1e-5,
            grad_scale: 1.0,
        }
    }
}

fn probe_weights(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    (0..n)
        .map(|_| {
            let m: f64 = rng.gen_range(0.5..1.5);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

fn evaluate<F>(kernel: &F, inputs: &[Tensor]) -> Result<(Graph, Vec<NodeId>, NodeId)>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids = inputs
        .iter()
        .map(|t| g.input(t.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = kernel(&mut g, &ids)?;
    let n = g.value(out).len();
    let scalar = if n == 1 {
        out
    } else {
        g.dot_const(out, &probe_weights(n))?
    };
    Ok((g, ids, scalar))
}

impl FiniteDiff {
    /// Returns the maximum relative error between reverse-mode and central
    /// difference gradients over every coordinate of every input.
    ///
    /// Non-scalar kernel outputs are reduced with a fixed pseudo-random
    /// projection first.
    pub fn check<F>(&self, kernel: F, inputs: &[Tensor]) -> Result<f64>
    where
        F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    {
        let (mut g, ids, out) = evaluate(&kernel, inputs)?;
        g.backward(out)?;
        let mut worst: f64 = 0.0;
        let mut probe = inputs.to_vec();
        for (k, id) in ids.iter().enumerate() {
            let analytic: Vec<f64> = match g.grad(*id) {
                Some(gr) => gr.iter().map(|v| v * self.grad_scale).collect(),
                None => vec![0.0; inputs[k].len()],
            };
            for i in 0..inputs[k].len() {
                let x0 = inputs[k].data()[i];
                probe[k].data_mut()[i] = x0 + self.eps;
                let (gp, _, op) = evaluate(&kernel, &probe)?;
                probe[k].data_mut()[i] = x0 - self.eps;
                let (gm, _, om) = evaluate(&kernel, &probe)?;
                probe[k].data_mut()[i] = x0;
                let numeric = (gp.value(op).data()[0] - gm.value(om).data()[0]) / (2.0 * self.eps);
                let a = analytic[i];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
        Ok(worst)
    }
}

/// [`FiniteDiff::check`] with an unmodified gradient.
pub fn finite_diff_check<F>(kernel: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    FiniteDiff {
        eps,
        grad_scale: 1.0,
    }
    .check(kernel, inputs)
}
