//! Single-query multi-head attention pooling over a spatial feature map.
//!
//! The map is flattened to N = H'*W' tokens of width C_f. A learned
//! positional embedding is added to each token before the key/value
//! projections; the query is projected from the mean of the raw tokens.
//! Attention weights are softmax(q.k_j / sqrt(d_h)) per head, and the
//! concatenated head outputs pass through a final affine projection into
//! the text embedding space.

use super::layers::Linear;
use super::params::{join, Params};
use super::NetworkError;
use ndarray::{Array1, Array2, Array3, ArrayViewD, ArrayViewMutD, Axis};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionPool {
    /// Positional table [max_tokens, C_f]; row j is added to token j.
    pub pos: Array2<f64>,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    /// C_f -> C output projection.
    pub wo: Linear,
    pub heads: usize,
}

/// Everything the backward pass needs from a forward evaluation.
#[derive(Debug, Clone)]
pub struct PoolTrace {
    pub tokens: Array2<f64>,
    pub mean: Array1<f64>,
    pub q: Array1<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    /// [heads, N] softmax weights.
    pub attn: Array2<f64>,
    /// Concatenated head outputs before wo.
    pub mixed: Array1<f64>,
}

impl AttentionPool {
    pub fn new(feature_dim: usize, embed_dim: usize, heads: usize, max_tokens: usize) -> Self {
        assert!(heads > 0 && feature_dim.is_multiple_of(heads));
        Self {
            pos: Array2::zeros((max_tokens, feature_dim)),
            wq: Linear::new(feature_dim, feature_dim),
            wk: Linear::new(feature_dim, feature_dim),
            wv: Linear::new(feature_dim, feature_dim),
            wo: Linear::new(embed_dim, feature_dim),
            heads,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.pos.dim().1
    }

    pub fn max_tokens(&self) -> usize {
        self.pos.dim().0
    }

    /// Flattens [C_f, H', W'] row-major into [N, C_f] tokens.
    fn flatten(features: &Array3<f64>) -> Array2<f64> {
        let (c, h, w) = features.dim();
        let mut tokens = Array2::zeros((h * w, c));
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    tokens[(y * w + x, ch)] = features[(ch, y, x)];
                }
            }
        }
        tokens
    }

    pub fn forward(
        &self,
        features: &Array3<f64>,
    ) -> Result<(Array1<f64>, PoolTrace), NetworkError> {
        let (c, h, w) = features.dim();
        if c != self.feature_dim() {
            return Err(NetworkError::ShapeMismatch {
                what: format!(
                    "pool expects {} feature channels, got {c}",
                    self.feature_dim()
                ),
            });
        }
        let n = h * w;
        if n > self.max_tokens() {
            return Err(NetworkError::TooManyTokens {
                tokens: n,
                max: self.max_tokens(),
            });
        }
        let tokens = Self::flatten(features);
        let mean = tokens.mean_axis(Axis(0)).expect("n >= 1 tokens");
        let q = self.wq.forward(&mean);
        let mut keys = Array2::zeros((n, c));
        let mut values = Array2::zeros((n, c));
        for j in 0..n {
            let u = &tokens.row(j) + &self.pos.row(j);
            keys.row_mut(j).assign(&self.wk.forward(&u.to_owned()));
            values.row_mut(j).assign(&self.wv.forward(&u.to_owned()));
        }
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut attn = Array2::zeros((self.heads, n));
        let mut mixed = Array1::zeros(c);
        for head in 0..self.heads {
            let lo = head * dh;
            let hi = lo + dh;
            let mut scores = Array1::zeros(n);
            for j in 0..n {
                let mut dot = 0.0;
                for d in lo..hi {
                    dot += q[d] * keys[(j, d)];
                }
                scores[j] = dot * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp = scores.mapv(|s| (s - max).exp());
            let sum = exp.sum();
            let a = exp / sum;
            for j in 0..n {
                attn[(head, j)] = a[j];
                for d in lo..hi {
                    mixed[d] += a[j] * values[(j, d)];
                }
            }
        }
        let out = self.wo.forward(&mixed);
        Ok((
            out,
            PoolTrace {
                tokens,
                mean,
                q,
                keys,
                values,
                attn,
                mixed,
            },
        ))
    }

    /// Backpropagates dL/dout; accumulates parameter gradients into `grad`
    /// and returns dL/dfeatures with the original spatial shape.
    pub fn backward(
        &self,
        trace: &PoolTrace,
        shape: (usize, usize, usize),
        g_out: &Array1<f64>,
        grad: &mut AttentionPool,
    ) -> Array3<f64> {
        let (c, h, w) = shape;
        let n = h * w;
        let dh = c / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let g_mixed = self.wo.backward(&trace.mixed, g_out, &mut grad.wo);

        let mut g_q = Array1::zeros(c);
        let mut g_keys = Array2::zeros((n, c));
        let mut g_values = Array2::zeros((n, c));
        for head in 0..self.heads {
            let lo = head * dh;
            let hi = lo + dh;
            // dL/da_j and dL/dvalues from mixed = sum_j a_j v_j.
            let mut g_a: Array1<f64> = Array1::zeros(n);
            for j in 0..n {
                let a = trace.attn[(head, j)];
                for d in lo..hi {
                    g_a[j] += g_mixed[d] * trace.values[(j, d)];
                    g_values[(j, d)] += g_mixed[d] * a;
                }
            }
            // Softmax backward: g_s = a * (g_a - sum_k a_k g_a_k).
            let inner: f64 = (0..n).map(|j| trace.attn[(head, j)] * g_a[j]).sum();
            for j in 0..n {
                let g_s = trace.attn[(head, j)] * (g_a[j] - inner);
                // s_j = scale * sum_d q_d k_jd over this head's slice.
                for d in lo..hi {
                    g_q[d] += g_s * scale * trace.keys[(j, d)];
                    g_keys[(j, d)] += g_s * scale * trace.q[d];
                }
            }
        }

        let mut g_tokens = Array2::zeros((n, c));
        for j in 0..n {
            let u = (&trace.tokens.row(j) + &self.pos.row(j)).to_owned();
            let g_u_k = self
                .wk
                .backward(&u, &g_keys.row(j).to_owned(), &mut grad.wk);
            let g_u_v = self
                .wv
                .backward(&u, &g_values.row(j).to_owned(), &mut grad.wv);
            let g_u = g_u_k + g_u_v;
            g_tokens.row_mut(j).assign(&g_u);
            let mut pos_row = grad.pos.row_mut(j);
            pos_row += &g_u;
        }
        // Query path: mean of raw tokens, so spread g_mean / n to each.
        let g_mean = self.wq.backward(&trace.mean, &g_q, &mut grad.wq);
        let g_mean_each = g_mean / n as f64;
        for j in 0..n {
            let mut row = g_tokens.row_mut(j);
            row += &g_mean_each;
        }

        let mut gx = Array3::zeros(shape);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    gx[(ch, y, x)] = g_tokens[(y * w + x, ch)];
                }
            }
        }
        gx
    }
}

impl Params for AttentionPool {
    fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((join(prefix, "pos"), self.pos.view().into_dyn()));
        self.wq.visit(&join(prefix, "wq"), out);
        self.wk.visit(&join(prefix, "wk"), out);
        self.wv.visit(&join(prefix, "wv"), out);
        self.wo.visit(&join(prefix, "wo"), out);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((join(prefix, "pos"), self.pos.view_mut().into_dyn()));
        self.wq.visit_mut(&join(prefix, "wq"), out);
        self.wk.visit_mut(&join(prefix, "wk"), out);
        self.wv.visit_mut(&join(prefix, "wv"), out);
        self.wo.visit_mut(&join(prefix, "wo"), out);
    }
}
