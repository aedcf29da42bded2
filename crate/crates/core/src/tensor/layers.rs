//! Parameter groups shared by the feature extractors and backbones.

use crate::error::Result;

use super::{Graph, Init, NodeId, ParamId, ParamStore};

/// Affine map along the last axis.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize) -> Result<Self> {
        let w = store.add(&format!("{name}.w"), &[input, output], Init::FanIn(input))?;
        let b = store.add(&format!("{name}.b"), &[output], Init::Zeros)?;
        Ok(Dense {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.linear(x, w, Some(b))
    }

    /// `relu(W·x + b)`: the embedding function used for every raw input.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let y = self.forward(g, store, x)?;
        g.relu(y)
    }
}

/// Stack of dense layers with ReLU between layers and a linear final layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, widths: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan = input;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Dense::new(store, &format!("{name}.{i}"), fan, w)?);
            fan = w;
        }
        Ok(Mlp { layers })
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.output).unwrap_or(0)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, mut x: NodeId) -> Result<NodeId> {
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, store, x)?;
            if i < last {
                x = g.relu(x)?;
            }
        }
        Ok(x)
    }
}

/// Weights of one LSTM cell: `w` is `[(input + hidden) × 4·hidden]`.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmWeights {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = store.add(
            &format!("{name}.w"),
            &[input + hidden, 4 * hidden],
            Init::FanIn(input + hidden),
        )?;
        let b = store.add(&format!("{name}.b"), &[4 * hidden], Init::Zeros)?;
        Ok(LstmWeights {
            w,
            b,
            input,
            hidden,
        })
    }

    pub fn step(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        g.lstm_cell(x, h, c, w, b)
    }
}

/// Length-preserving convolution layer `[C_in × T] → [C_out × T]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv1d {
    pub k: ParamId,
    pub b: ParamId,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        width: usize,
    ) -> Result<Self> {
        let k = store.add(
            &format!("{name}.k"),
            &[output, input, width],
            Init::FanIn(input * width),
        )?;
        let b = store.add(&format!("{name}.b"), &[output], Init::Zeros)?;
        Ok(Conv1d { k, b })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let k = g.param(store, self.k);
        let b = g.param(store, self.b);
        g.temporal_conv(x, k, Some(b))
    }
}
