//! The prior network: a two-layer fully connected net mapping a document's
//! side vector to a Dirichlet parameter, with softplus output plus a floor
//! so every topic keeps positive mass.
//!
//! Gradients are computed by hand (the net is four parameter blocks) and
//! applied with Adam using decoupled weight decay.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::softplus;
use crate::{Error, Result};

/// Additive floor on the produced Dirichlet parameters.
pub const ALPHA_FLOOR: f64 = 1e-3;

/// Two-layer network: alpha = softplus(W2 relu(W1 s + b1) + b2) + floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorNet {
    /// hidden x input weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// output (topics) x hidden weights.
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
    pub alpha_floor: f64,
}

/// Intermediate activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    pre1: Vec<f64>,
    hidden: Vec<f64>,
    pre2: Vec<f64>,
}

/// Per-block gradients (same shapes as the corresponding net blocks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorGrads {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl PriorNet {
    /// Kaiming-initialized net: weights drawn from N(0, 2 / fan_in), biases
    /// zero. Deterministic for a fixed seed.
    pub fn init_kaiming(input_dim: usize, hidden_dim: usize, num_topics: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_topics == 0 {
            return Err(Error::Config(format!(
                "network dimensions must be positive, got input {input_dim}, hidden {hidden_dim}, output {num_topics}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layer = |rows: usize, cols: usize| -> Vec<Vec<f64>> {
            let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("valid sd");
            (0..rows)
                .map(|_| (0..cols).map(|_| normal.sample(&mut rng)).collect())
                .collect()
        };
        Ok(PriorNet {
            w1: layer(hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: layer(num_topics, hidden_dim),
            b2: vec![0.0; num_topics],
            alpha_floor: ALPHA_FLOOR,
        })
    }

    /// A net that outputs `alpha` for every input: W2 = 0 and b2 solved
    /// through the softplus, with W1 Kaiming-initialized so later training
    /// starts from a live first layer.
    pub fn constant(input_dim: usize, hidden_dim: usize, alpha: &[f64], seed: u64) -> Result<Self> {
        let mut net = Self::init_kaiming(input_dim, hidden_dim, alpha.len(), seed)?;
        for row in &mut net.w2 {
            row.fill(0.0);
        }
        for (b, &a) in net.b2.iter_mut().zip(alpha) {
            if a <= net.alpha_floor {
                return Err(Error::Config(format!(
                    "constant net target {a} must exceed the floor {}",
                    net.alpha_floor
                )));
            }
            *b = crate::numerics::softplus_inv(a - net.alpha_floor)?;
        }
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.w1.first().map_or(0, Vec::len)
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.len()
    }

    pub fn num_topics(&self) -> usize {
        self.w2.len()
    }

    fn check_shapes(&self) -> Result<()> {
        let (q, h, k) = (self.input_dim(), self.hidden_dim(), self.num_topics());
        if self.w1.iter().any(|r| r.len() != q)
            || self.b1.len() != h
            || self.w2.iter().any(|r| r.len() != h)
            || self.b2.len() != k
        {
            return Err(Error::Dimension("prior net blocks have inconsistent shapes".into()));
        }
        Ok(())
    }

    /// Maps a side vector to a Dirichlet parameter, returning the cache
    /// needed by [`PriorNet::backward`].
    pub fn forward(&self, side: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_shapes()?;
        if side.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "side vector has {} entries, net expects {}",
                side.len(),
                self.input_dim()
            )));
        }
        if side.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("side vector has non-finite entries".into()));
        }
        let pre1: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| b + dot(row, side))
            .collect();
        let hidden: Vec<f64> = pre1.iter().map(|&x| x.max(0.0)).collect();
        let pre2: Vec<f64> = self
            .w2
            .iter()
            .zip(&self.b2)
            .map(|(row, b)| b + dot(row, &hidden))
            .collect();
        let alpha: Vec<f64> = pre2.iter().map(|&x| softplus(x) + self.alpha_floor).collect();
        Ok((
            alpha,
            ForwardCache {
                input: side.to_vec(),
                pre1,
                hidden,
                pre2,
            },
        ))
    }

    /// Backpropagates d(objective)/d(alpha) through the cached activations.
    ///
    /// # Errors
    ///
    /// A cache whose shapes do not match this net is rejected (stale cache
    /// from another net or topic count).
    pub fn backward(&self, cache: &ForwardCache, grad_alpha: &[f64]) -> Result<PriorGrads> {
        self.check_shapes()?;
        let (q, h, k) = (self.input_dim(), self.hidden_dim(), self.num_topics());
        if cache.input.len() != q || cache.pre1.len() != h || cache.hidden.len() != h || cache.pre2.len() != k {
            return Err(Error::Dimension(
                "forward cache does not match this net (stale or from another model)".into(),
            ));
        }
        if grad_alpha.len() != k {
            return Err(Error::Dimension(format!(
                "grad_alpha has {} entries, net produces {k}",
                grad_alpha.len()
            )));
        }
        // d alpha / d pre2 = sigmoid(pre2)
        let g2: Vec<f64> = grad_alpha
            .iter()
            .zip(&cache.pre2)
            .map(|(&g, &p)| g * sigmoid(p))
            .collect();
        let w2 = outer(&g2, &cache.hidden);
        let mut g_hidden = vec![0.0; h];
        for (row, &g) in self.w2.iter().zip(&g2) {
            for (acc, &w) in g_hidden.iter_mut().zip(row) {
                *acc += g * w;
            }
        }
        let g_pre1: Vec<f64> = g_hidden
            .iter()
            .zip(&cache.pre1)
            .map(|(&g, &p)| if p > 0.0 { g } else { 0.0 })
            .collect();
        let w1 = outer(&g_pre1, &cache.input);
        Ok(PriorGrads {
            w1,
            b1: g_pre1,
            w2,
            b2: g2,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn outer(col: &[f64], row: &[f64]) -> Vec<Vec<f64>> {
    col.iter()
        .map(|&c| row.iter().map(|&r| c * r).collect())
        .collect()
}

impl PriorGrads {
    pub fn zeros_like(net: &PriorNet) -> Self {
        PriorGrads {
            w1: net.w1.iter().map(|r| vec![0.0; r.len()]).collect(),
            b1: vec![0.0; net.b1.len()],
            w2: net.w2.iter().map(|r| vec![0.0; r.len()]).collect(),
            b2: vec![0.0; net.b2.len()],
        }
    }

    pub fn add_assign(&mut self, other: &PriorGrads) {
        add_mat(&mut self.w1, &other.w1);
        add_vec(&mut self.b1, &other.b1);
        add_mat(&mut self.w2, &other.w2);
        add_vec(&mut self.b2, &other.b2);
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.w1.iter_mut().chain(self.w2.iter_mut()) {
            for v in row {
                *v *= factor;
            }
        }
        for v in self.b1.iter_mut().chain(self.b2.iter_mut()) {
            *v *= factor;
        }
    }

    fn blocks(&self) -> [(&'static str, BlockRef<'_>); 4] {
        [
            ("w1", BlockRef::Mat(&self.w1)),
            ("b1", BlockRef::Vec(&self.b1)),
            ("w2", BlockRef::Mat(&self.w2)),
            ("b2", BlockRef::Vec(&self.b2)),
        ]
    }

    /// Name of the first parameter block containing a non-finite entry.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks().into_iter().find_map(|(name, b)| {
            let bad = match b {
                BlockRef::Mat(m) => m.iter().flatten().any(|v| !v.is_finite()),
                BlockRef::Vec(v) => v.iter().any(|v| !v.is_finite()),
            };
            bad.then_some(name)
        })
    }
}

enum BlockRef<'a> {
    Mat(&'a Vec<Vec<f64>>),
    Vec(&'a Vec<f64>),
}

fn add_mat(dst: &mut [Vec<f64>], src: &[Vec<f64>]) {
    for (d, s) in dst.iter_mut().zip(src) {
        add_vec(d, s);
    }
}

fn add_vec(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Adam optimizer state with decoupled weight decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    pub m: PriorGrads,
    pub v: PriorGrads,
}

impl AdamState {
    /// Fresh state with the training defaults (lr 1e-3, decay 0.1).
    pub fn new(net: &PriorNet) -> Self {
        AdamState {
            lr: 1e-3,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: PriorGrads::zeros_like(net),
            v: PriorGrads::zeros_like(net),
        }
    }
}

/// One Adam step in the descent direction of `grads`. Weight decay is
/// applied directly to the parameters (decoupled), not through the moments.
///
/// # Errors
///
/// Non-finite gradient entries are rejected, naming the offending block.
pub fn adam_step(net: &mut PriorNet, grads: &PriorGrads, state: &mut AdamState) -> Result<()> {
    if let Some(block) = grads.first_non_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter block {block}"
        )));
    }
    if grads.w1.len() != net.w1.len()
        || grads.b1.len() != net.b1.len()
        || grads.w2.len() != net.w2.len()
        || grads.b2.len() != net.b2.len()
    {
        return Err(Error::Dimension("gradient shapes do not match the net".into()));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;

    let update = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *param *= decay;
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        *param -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    };
    for ((prow, grow), (mrow, vrow)) in net
        .w1
        .iter_mut()
        .zip(&grads.w1)
        .chain(net.w2.iter_mut().zip(&grads.w2))
        .zip(
            state
                .m
                .w1
                .iter_mut()
                .zip(state.v.w1.iter_mut())
                .chain(state.m.w2.iter_mut().zip(state.v.w2.iter_mut())),
        )
    {
        for ((p, &g), (m, v)) in prow.iter_mut().zip(grow).zip(mrow.iter_mut().zip(vrow.iter_mut())) {
            update(p, g, m, v);
        }
    }
    for ((p, &g), (m, v)) in net
        .b1
        .iter_mut()
        .zip(&grads.b1)
        .chain(net.b2.iter_mut().zip(&grads.b2))
        .zip(
            state
                .m
                .b1
                .iter_mut()
                .zip(state.v.b1.iter_mut())
                .chain(state.m.b2.iter_mut().zip(state.v.b2.iter_mut())),
        )
    {
        update(p, g, m, v);
    }
    Ok(())
}
