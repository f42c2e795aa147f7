//! Two-layer projection head mapping pooled features into the text
//! embedding space: affine, SiLU, affine, with hidden width equal to the
//! output dimension. A bypass flag skips the nonlinearity so that
//! identity-weight configurations pass inputs through unchanged.

use super::layers::{silu_backward_vec, silu_vec, Linear};
use super::params::{join, Params};
use ndarray::{Array1, ArrayViewD, ArrayViewMutD};

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub fc1: Linear,
    pub fc2: Linear,
    /// Skip the SiLU between the layers. Off in training; exists so that
    /// identity configurations are exactly the identity map.
    pub bypass_activation: bool,
}

#[derive(Debug, Clone)]
pub struct AdapterTrace {
    pub input: Array1<f64>,
    pub hidden_pre: Array1<f64>,
    pub hidden: Array1<f64>,
}

impl Adapter {
    pub fn new(in_dim: usize, out_dim: usize) -> Self {
        Self {
            fc1: Linear::new(out_dim, in_dim),
            fc2: Linear::new(out_dim, out_dim),
            bypass_activation: false,
        }
    }

    /// Identity configuration: square identity weights, zero biases,
    /// activation bypassed.
    pub fn identity(dim: usize) -> Self {
        let mut a = Self::new(dim, dim);
        for i in 0..dim {
            a.fc1.weight[(i, i)] = 1.0;
            a.fc2.weight[(i, i)] = 1.0;
        }
        a.bypass_activation = true;
        a
    }

    pub fn forward(&self, x: &Array1<f64>) -> (Array1<f64>, AdapterTrace) {
        let hidden_pre = self.fc1.forward(x);
        let hidden = if self.bypass_activation {
            hidden_pre.clone()
        } else {
            silu_vec(&hidden_pre)
        };
        let out = self.fc2.forward(&hidden);
        (
            out,
            AdapterTrace {
                input: x.clone(),
                hidden_pre,
                hidden,
            },
        )
    }

    pub fn backward(
        &self,
        trace: &AdapterTrace,
        g_out: &Array1<f64>,
        grad: &mut Adapter,
    ) -> Array1<f64> {
        let g_hidden = self.fc2.backward(&trace.hidden, g_out, &mut grad.fc2);
        let g_pre = if self.bypass_activation {
            g_hidden
        } else {
            silu_backward_vec(&trace.hidden_pre, &g_hidden)
        };
        self.fc1.backward(&trace.input, &g_pre, &mut grad.fc1)
    }
}

impl Params for Adapter {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        self.fc1.visit(&join(prefix, "fc1"), out);
        self.fc2.visit(&join(prefix, "fc2"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        self.fc1.visit_mut(&join(prefix, "fc1"), out);
        self.fc2.visit_mut(&join(prefix, "fc2"), out);
    }
}
