//! Fully convolutional surrogate networks with periodic padding, written
//! directly against `f64` buffers with a hand-rolled reverse pass.

mod batchnorm;
mod conv;
mod io;
mod loss;
mod network;
mod spec;
mod store;

pub use batchnorm::{batchnorm, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use conv::{conv_backward, conv_forward};
pub use io::{decode_model, encode_model, load_model, load_optimizer, save_model, save_optimizer, ModelInfo, MODEL_FORMAT, MODEL_VERSION};
pub use loss::{head_loss, loss_and_grads, Loss};
pub use network::{Gradients, Network, Tape};
pub use spec::{BlockSpec, HeadSpec, NetworkSpec, BODY_KERNEL, STEM_KERNEL};
pub use store::{AdamConfig, AdamState, ParamEntry, ParamRole, ParameterStore};

use crate::tensor::Tensor;

/// Channel-major activation buffer: `data[(c * b + i) * s + p]` for channel
/// `c`, batch item `i` and site `p`.
#[derive(Clone, Debug)]
pub(crate) struct Act {
    pub c: usize,
    pub b: usize,
    pub s: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(c: usize, b: usize, s: usize) -> Act {
        Act {
            c,
            b,
            s,
            data: vec![0.0; c * b * s],
        }
    }

    /// Elements per channel.
    pub fn n(&self) -> usize {
        self.b * self.s
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.n();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.n();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// From `[batch, channels, extents…]`.
    pub fn from_tensor(t: &Tensor) -> Act {
        let d = t.dims();
        let (b, c) = (d[0], d[1]);
        let s: usize = d[2..].iter().product();
        let mut a = Act::zeros(c, b, s);
        let src = t.data();
        for i in 0..b {
            for ch in 0..c {
                let from = (i * c + ch) * s;
                let to = (ch * b + i) * s;
                a.data[to..to + s].copy_from_slice(&src[from..from + s]);
            }
        }
        a
    }

    pub fn to_tensor(&self, extents: &[usize]) -> Tensor {
        let s = self.s;
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.b {
            for ch in 0..self.c {
                let from = (ch * self.b + i) * s;
                let to = (i * self.c + ch) * s;
                out[to..to + s].copy_from_slice(&self.data[from..from + s]);
            }
        }
        let mut dims = vec![self.b, self.c];
        dims.extend_from_slice(extents);
        Tensor::new(dims, out).expect("activation shape")
    }
}
