//! Neural building blocks: linear layers, multi-head self-attention,
//! post-norm transformer encoder layers, dropout, and the Adam optimizer.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::{Gradients, Graph, Tensor};

/// Anything with named trainable parameters.
///
/// The visitation order is fixed by construction, which makes optimizer
/// state, checkpoints, and gradient checks deterministic.
pub trait Module {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor));
}

/// Total number of trainable scalars in a module.
pub fn param_count(module: &mut dyn Module) -> usize {
    let mut n = 0;
    module.visit_params("", &mut |_, t| n += t.numel());
    n
}

/// Fully-connected layer: y = x·W + b with W stored [in, out].
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights uniform in [-1/sqrt(in), 1/sqrt(in)], biases zero.
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut DetRng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| rng.uniform(-bound, bound))
            .collect();
        Linear {
            weight: Tensor::param(vec![in_dim, out_dim], w),
            bias: Tensor::param(vec![out_dim], vec![0.0; out_dim]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        g.linear(x, &self.weight, &self.bias)
    }
}

impl Module for Linear {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}weight"), &mut self.weight);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

/// Layer-normalization parameters over a trailing dimension of size `d`.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gain: Tensor::param(vec![d], vec![1.0; d]),
            bias: Tensor::param(vec![d], vec![0.0; d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: &Tensor) -> Result<Tensor> {
        g.layer_norm(x, &self.gain, &self.bias, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}gain"), &mut self.gain);
        f(format!("{prefix}bias"), &mut self.bias);
    }
}

/// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
/// Identity in eval mode. The mask consumes from the passed stream in
/// element order (one draw per element).
pub fn dropout(g: &mut Graph, x: &Tensor, p: f64, train: bool, rng: &mut DetRng) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
    }
    if !train || p == 0.0 {
        return Ok(x.clone());
    }
    Ok(g.dropout_mask(x, p, rng))
}

/// Multi-head scaled dot-product self-attention (full attention, no mask).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(dim: usize, heads: usize, rng: &mut DetRng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dim {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(dim, dim, rng),
            key: Linear::new(dim, dim, rng),
            value: Linear::new(dim, dim, rng),
            output: Linear::new(dim, dim, rng),
            heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }

    /// Self-attention over `h`: [b, n, d] → [b, n, d]. Heads are regrouped
    /// into the batch axis so scores, softmax, and the value product run as
    /// single batched ops.
    pub fn forward(&self, g: &mut Graph, h: &Tensor) -> Result<Tensor> {
        let attn = self.attention_rows(g, h)?;
        let v = self.value.forward(g, h)?;
        let vh = g.split_heads(&v, self.heads)?;
        let per_head = g.matmul(&attn, &vh)?;
        let merged = g.merge_heads(&per_head, self.heads)?;
        self.output.forward(g, &merged)
    }

    /// Attention weight rows, one [n, n] slice per (batch, head) pair:
    /// [b, n, d] → [b·H, n, n]. Rows sum to one.
    pub fn attention_rows(&self, g: &mut Graph, h: &Tensor) -> Result<Tensor> {
        let d = self.dim();
        if h.shape().last() != Some(&d) {
            return Err(Error::Dimension {
                op: "mhsa",
                lhs: h.shape().to_vec(),
                rhs: vec![d],
            });
        }
        let head_dim = d / self.heads;
        let q = self.query.forward(g, h)?;
        // fold the 1/sqrt(dh) into Q before the batched product
        let q = g.mul_scalar(&q, 1.0 / (head_dim as f64).sqrt());
        let k = self.key.forward(g, h)?;
        let qh = g.split_heads(&q, self.heads)?;
        let kh = g.split_heads(&k, self.heads)?;
        let kt = g.transpose_last2(&kh)?;
        let scores = g.matmul(&qh, &kt)?;
        g.softmax_lastdim(&scores)
    }
}

impl Module for MultiHeadAttention {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.query.visit_params(&format!("{prefix}q."), f);
        self.key.visit_params(&format!("{prefix}k."), f);
        self.value.visit_params(&format!("{prefix}v."), f);
        self.output.visit_params(&format!("{prefix}o."), f);
    }
}

/// Post-norm transformer encoder layer:
/// u = LN1(x + Drop(MSA(x))), out = LN2(u + Drop(FFN(u))),
/// FFN = Linear → GELU → Drop → Linear.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm1: LayerNorm,
    pub norm2: LayerNorm,
    pub dropout: f64,
}

impl EncoderLayer {
    pub fn new(dim: usize, dff: usize, heads: usize, dropout_p: f64, rng: &mut DetRng) -> Result<Self> {
        if dff == 0 {
            return Err(Error::Config("feed-forward width must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::Config(format!("dropout rate {dropout_p} outside [0, 1)")));
        }
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(dim, heads, rng)?,
            ff1: Linear::new(dim, dff, rng),
            ff2: Linear::new(dff, dim, rng),
            norm1: LayerNorm::new(dim),
            norm2: LayerNorm::new(dim),
            dropout: dropout_p,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        train: bool,
        rng: &mut DetRng,
    ) -> Result<Tensor> {
        let attn = self.attention.forward(g, x)?;
        let attn = dropout(g, &attn, self.dropout, train, rng)?;
        let res1 = g.add(x, &attn)?;
        let u = self.norm1.forward(g, &res1)?;

        let hidden = self.ff1.forward(g, &u)?;
        let hidden = g.gelu(&hidden);
        let hidden = dropout(g, &hidden, self.dropout, train, rng)?;
        let ff = self.ff2.forward(g, &hidden)?;
        let ff = dropout(g, &ff, self.dropout, train, rng)?;
        let res2 = g.add(&u, &ff)?;
        self.norm2.forward(g, &res2)
    }
}

impl Module for EncoderLayer {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attention.visit_params(&format!("{prefix}attn."), f);
        self.ff1.visit_params(&format!("{prefix}ff1."), f);
        self.ff2.visit_params(&format!("{prefix}ff2."), f);
        self.norm1.visit_params(&format!("{prefix}ln1."), f);
        self.norm2.visit_params(&format!("{prefix}ln2."), f);
    }
}

/// Adam with bias correction; per-parameter state keyed by name.
#[derive(Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first_moment: HashMap<String, Vec<f64>>,
    second_moment: HashMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
            first_moment: HashMap::new(),
            second_moment: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update over every parameter of `module`. Parameters without a
    /// gradient entry are treated as having zero gradient.
    pub fn step(&mut self, module: &mut dyn Module, grads: &Gradients) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let mut failure: Option<Error> = None;
        module.visit_params("", &mut |name, tensor| {
            if failure.is_some() {
                return;
            }
            let n = tensor.numel();
            let grad = grads.get(tensor);
            if let Some(gr) = grad {
                if gr.len() != n {
                    failure = Some(Error::Dimension {
                        op: "adam_step",
                        lhs: tensor.shape().to_vec(),
                        rhs: vec![gr.len()],
                    });
                    return;
                }
            }
            let m = self
                .first_moment
                .entry(name.clone())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .second_moment
                .entry(name)
                .or_insert_with(|| vec![0.0; n]);
            let mut data = tensor.data().to_vec();
            for i in 0..n {
                let gi = grad.map_or(0.0, |gr| gr[i]);
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            *tensor = Tensor::param(tensor.shape().to_vec(), data);
        });
        failure.map_or(Ok(()), Err)
    }
}

/// Mean squared error between prediction and target.
pub fn mse_loss(g: &mut Graph, pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension {
            op: "mse_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    let diff = g.sub(pred, target)?;
    let sq = g.mul(&diff, &diff)?;
    Ok(g.mean_all(&sq))
}
