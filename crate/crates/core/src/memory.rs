//! Long-term memory over a session of clips.
//!
//! Each generation yields an embedding matrix `E_t` (Q×D). The memory keeps
//! an LSTM state over projected embeddings, reads it back through cross
//! attention with a learned query `z`, and blends the read-out into the
//! embedding handed to the next generation:
//!
//! ```text
//! O   = softmax((z·W_Q)(Ĥ·W_K)ᵀ / √D) · (Ĥ·W_V)      Ĥ = h reshaped to Q×D
//! E'  = α·E + (1-α)·O                                  (E' = E on the first step)
//! h,c = LSTM(P·vec(E), h, c)
//! ```
//!
//! Parameters are forward-only: seeded uniform(-0.1, 0.1) or loaded from a file.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::paramfile;

pub const PARAM_MAGIC: &[u8; 8] = b"SSMEMORY";
const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryConfig {
    pub q_tokens: usize,
    pub dim: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.q_tokens == 0 || self.dim == 0 {
            return Err(Error::Argument(format!(
                "memory needs Q, D >= 1, got Q={} D={}",
                self.q_tokens, self.dim
            )));
        }
        check_alpha(self.alpha)
    }

    pub fn width(&self) -> usize {
        self.q_tokens * self.dim
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Argument(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

/// One LSTM gate: `W^x x + W^h h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gate {
    pub w_x: Matrix,
    pub w_h: Matrix,
    pub bias: Vec<f64>,
}

impl Gate {
    fn pre_activation(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let a = self.w_x.matvec(x)?;
        let b = self.w_h.matvec(h)?;
        Ok(a.iter().zip(&b).zip(&self.bias).map(|((a, b), c)| a + b + c).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryParams {
    pub q_tokens: usize,
    pub dim: usize,
    pub input_gate: Gate,
    pub forget_gate: Gate,
    pub cell_gate: Gate,
    pub output_gate: Gate,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// Learned query, Q×D.
    pub query: Matrix,
    /// Input projection, (Q·D)×(Q·D).
    pub projection: Matrix,
}

impl MemoryParams {
    /// Draws every weight from uniform(-0.1, 0.1) in [`MemoryParams::flatten`] order.
    pub fn seeded(q_tokens: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Self::value_count(q_tokens, dim);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect();
        Self::from_flat(q_tokens, dim, &values).expect("count matches")
    }

    pub fn zeros(q_tokens: usize, dim: usize) -> Self {
        Self::from_flat(q_tokens, dim, &vec![0.0; Self::value_count(q_tokens, dim)]).expect("count matches")
    }

    pub fn value_count(q_tokens: usize, dim: usize) -> usize {
        let n = q_tokens * dim;
        4 * (2 * n * n + n) + 3 * dim * dim + q_tokens * dim + n * n
    }

    /// Gates i, f, g, o (each `W^x`, `W^h`, bias), then `W_Q`, `W_K`, `W_V`,
    /// `z`, `P`; matrices row-major.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::value_count(self.q_tokens, self.dim));
        for gate in [&self.input_gate, &self.forget_gate, &self.cell_gate, &self.output_gate] {
            out.extend_from_slice(gate.w_x.as_slice());
            out.extend_from_slice(gate.w_h.as_slice());
            out.extend_from_slice(&gate.bias);
        }
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.query, &self.projection] {
            out.extend_from_slice(m.as_slice());
        }
        out
    }

    pub fn from_flat(q_tokens: usize, dim: usize, values: &[f64]) -> Result<Self> {
        let expected = Self::value_count(q_tokens, dim);
        if values.len() != expected {
            return Err(Error::Dimension(format!(
                "memory Q={q_tokens} D={dim} needs {expected} parameters, got {}",
                values.len()
            )));
        }
        let n = q_tokens * dim;
        let mut rest = values;
        let mut take = |rows: usize, cols: usize| {
            let (head, tail) = rest.split_at(rows * cols);
            rest = tail;
            Matrix::from_vec(rows, cols, head.to_vec()).expect("sized split")
        };
        let mut gate = || Gate {
            w_x: take(n, n),
            w_h: take(n, n),
            bias: take(1, n).into_vec(),
        };
        let (input_gate, forget_gate, cell_gate, output_gate) = (gate(), gate(), gate(), gate());
        Ok(MemoryParams {
            q_tokens,
            dim,
            input_gate,
            forget_gate,
            cell_gate,
            output_gate,
            w_q: take(dim, dim),
            w_k: take(dim, dim),
            w_v: take(dim, dim),
            query: take(q_tokens, dim),
            projection: take(n, n),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        paramfile::encode(PARAM_MAGIC, &self.flatten())
    }

    pub fn from_bytes(q_tokens: usize, dim: usize, bytes: &[u8]) -> Result<Self> {
        Self::from_flat(q_tokens, dim, &paramfile::decode(PARAM_MAGIC, bytes)?)
    }

    pub fn load(q_tokens: usize, dim: usize, path: &Path) -> Result<Self> {
        Self::from_flat(q_tokens, dim, &paramfile::read(PARAM_MAGIC, path)?)
    }

    fn width(&self) -> usize {
        self.q_tokens * self.dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
    /// Embedding from the previous step.
    pub e_prev: Option<Matrix>,
    pub t: u64,
}

impl MemoryState {
    pub fn zeroed(width: usize) -> Self {
        MemoryState {
            h: vec![0.0; width],
            c: vec![0.0; width],
            e_prev: None,
            t: 0,
        }
    }
}

pub fn init(config: &MemoryConfig) -> Result<(MemoryParams, MemoryState)> {
    config.validate()?;
    Ok((
        MemoryParams::seeded(config.q_tokens, config.dim, config.seed),
        MemoryState::zeroed(config.width()),
    ))
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn lstm_cell(params: &MemoryParams, x: &[f64], h: &[f64], c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = params.width();
    if x.len() != n || h.len() != n || c.len() != n {
        return Err(Error::Dimension(format!(
            "LSTM width {n}, got x={} h={} c={}",
            x.len(),
            h.len(),
            c.len()
        )));
    }
    let i = params.input_gate.pre_activation(x, h)?;
    let f = params.forget_gate.pre_activation(x, h)?;
    let g = params.cell_gate.pre_activation(x, h)?;
    let o = params.output_gate.pre_activation(x, h)?;
    let mut h_next = Vec::with_capacity(n);
    let mut c_next = Vec::with_capacity(n);
    for k in 0..n {
        let cell = sigmoid(f[k]) * c[k] + sigmoid(i[k]) * g[k].tanh();
        h_next.push(sigmoid(o[k]) * cell.tanh());
        c_next.push(cell);
    }
    Ok((h_next, c_next))
}

/// Attention read-out together with its row-stochastic weight matrix (Q×Q).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRead {
    pub output: Matrix,
    pub weights: Matrix,
}

pub fn attend_with_weights(params: &MemoryParams, h: &[f64]) -> Result<AttentionRead> {
    let (q, d) = (params.q_tokens, params.dim);
    if h.len() != q * d {
        return Err(Error::Dimension(format!("hidden state length {} is not Q·D = {}", h.len(), q * d)));
    }
    let hidden = Matrix::from_vec(q, d, h.to_vec())?;
    let queries = params.query.matmul(&params.w_q)?;
    let keys = hidden.matmul(&params.w_k)?;
    let values = hidden.matmul(&params.w_v)?;
    let mut weights = queries.matmul_transposed(&keys)?;
    weights.scale(1.0 / (d as f64).sqrt());
    weights.softmax_rows();
    let output = weights.matmul(&values)?;
    Ok(AttentionRead { output, weights })
}

pub fn attend(params: &MemoryParams, h: &[f64]) -> Result<Matrix> {
    Ok(attend_with_weights(params, h)?.output)
}

/// `α·E + (1-α)·O` for `t >= 1`; `E` unchanged at `t = 0`.
pub fn interpolate(e: &Matrix, o: &Matrix, alpha: f64, t: u64) -> Result<Matrix> {
    check_alpha(alpha)?;
    if e.shape() != o.shape() {
        return Err(Error::Dimension(format!(
            "cannot blend {:?} with {:?}",
            e.shape(),
            o.shape()
        )));
    }
    if t == 0 || alpha == 1.0 {
        return Ok(e.clone());
    }
    let data = e
        .as_slice()
        .iter()
        .zip(o.as_slice())
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect();
    Matrix::from_vec(e.rows(), e.cols(), data)
}

/// Advances the memory by one generation. Returns the embedding for the next
/// generation and the updated state.
pub fn step(params: &MemoryParams, alpha: f64, state: &MemoryState, e_t: &Matrix) -> Result<(Matrix, MemoryState)> {
    let (q, d) = (params.q_tokens, params.dim);
    if e_t.shape() != (q, d) {
        return Err(Error::Dimension(format!("embedding is {:?}, memory expects ({q}, {d})", e_t.shape())));
    }
    let e_prime = match (&state.e_prev, state.t) {
        (Some(prev), t) if t >= 1 => {
            let o = attend(params, &state.h)?;
            interpolate(prev, &o, alpha, t)?
        }
        _ => e_t.clone(),
    };
    let x = params.projection.matvec(e_t.as_slice())?;
    let (h, c) = lstm_cell(params, &x, &state.h, &state.c)?;
    let next = MemoryState {
        h,
        c,
        e_prev: Some(e_t.clone()),
        t: state.t + 1,
    };
    Ok((e_prime, next))
}

/// A single-session memory instance.
#[derive(Debug, Clone)]
pub struct Memory {
    config: MemoryConfig,
    params: MemoryParams,
    state: MemoryState,
}

impl Memory {
    pub fn new(config: MemoryConfig) -> Result<Self> {
        let (params, state) = init(&config)?;
        Ok(Memory { config, params, state })
    }

    pub fn with_params(config: MemoryConfig, params: MemoryParams) -> Result<Self> {
        config.validate()?;
        if (params.q_tokens, params.dim) != (config.q_tokens, config.dim) {
            return Err(Error::Dimension(format!(
                "parameters are Q={} D={}, config is Q={} D={}",
                params.q_tokens, params.dim, config.q_tokens, config.dim
            )));
        }
        let state = MemoryState::zeroed(config.width());
        Ok(Memory { config, params, state })
    }

    pub fn config(&self) -> &MemoryConfig {
        &self.config
    }

    pub fn params(&self) -> &MemoryParams {
        &self.params
    }

    pub fn state(&self) -> &MemoryState {
        &self.state
    }

    pub fn step(&mut self, e_t: &Matrix) -> Result<Matrix> {
        let (e_prime, next) = step(&self.params, self.config.alpha, &self.state, e_t)?;
        self.state = next;
        Ok(e_prime)
    }
}

/// Sum of each row of a row-stochastic matrix; used by invariant checks.
pub fn row_sums(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|r| dot(m.row(r), &vec![1.0; m.cols()])).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(q: usize, d: usize, alpha: f64, seed: u64) -> MemoryConfig {
        MemoryConfig {
            q_tokens: q,
            dim: d,
            alpha,
            seed,
        }
    }

    fn embedding(q: usize, d: usize, k: f64) -> Matrix {
        Matrix::from_fn(q, d, |r, c| ((r * d + c) as f64 * 0.37 + k).sin())
    }

    #[test]
    fn init_is_seeded_and_zeroed() {
        let (p1, s1) = init(&cfg(2, 3, 0.5, 9)).unwrap();
        let (p2, _) = init(&cfg(2, 3, 0.5, 9)).unwrap();
        assert_eq!(p1, p2);
        assert_ne!(p1, init(&cfg(2, 3, 0.5, 10)).unwrap().0);
        assert!(s1.h.iter().chain(&s1.c).all(|&v| v == 0.0));
        assert!(s1.e_prev.is_none());
        assert_eq!(s1.t, 0);
        assert!(p1.flatten().iter().all(|v| v.abs() < INIT_RANGE));

        let (p, _) = init(&cfg(1, 1, 0.5, 0)).unwrap();
        assert_eq!(p.w_q.shape(), (1, 1));
        assert_eq!(p.query.shape(), (1, 1));
        assert_eq!(p.projection.shape(), (1, 1));
        assert_eq!(p.input_gate.w_x.shape(), (1, 1));
    }

    #[test]
    fn config_validation() {
        assert!(init(&cfg(0, 3, 0.5, 0)).is_err());
        assert!(init(&cfg(2, 3, 1.5, 0)).is_err());
        assert!(init(&cfg(2, 3, -0.1, 0)).is_err());
    }

    #[test]
    fn lstm_zero_fixpoint_and_range() {
        let p = MemoryParams::zeros(2, 2);
        let z = vec![0.0; 4];
        assert_eq!(lstm_cell(&p, &z, &z, &z).unwrap(), (z.clone(), z.clone()));
        let p = MemoryParams::seeded(2, 2, 3);
        let (h, _) = lstm_cell(&p, &[50.0, -50.0, 8.0, 1.0], &[0.9; 4], &[30.0; 4]).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1.0));
        assert!(lstm_cell(&p, &[0.0; 3], &z, &z).is_err());
    }

    #[test]
    fn attend_on_zero_state_is_zero() {
        let p = MemoryParams::seeded(3, 4, 1);
        let read = attend_with_weights(&p, &[0.0; 12]).unwrap();
        assert!(read.output.as_slice().iter().all(|&v| v == 0.0));
        for s in row_sums(&read.weights) {
            assert!((s - 1.0).abs() < 1e-9);
        }
        assert!(attend(&p, &[0.0; 5]).is_err());
    }

    #[test]
    fn interpolate_cases() {
        let e = Matrix::from_vec(1, 1, vec![2.0]).unwrap();
        let o = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        assert_eq!(interpolate(&e, &o, 0.5, 1).unwrap().as_slice(), &[1.0]);
        assert_eq!(interpolate(&e, &o, 0.0, 0).unwrap(), e);
        let e = embedding(2, 3, 0.1);
        let o = embedding(2, 3, 5.0);
        assert_eq!(interpolate(&e, &o, 1.0, 7).unwrap(), e);
        assert!(interpolate(&e, &o, 1.01, 1).is_err());
        assert!(interpolate(&e, &embedding(3, 2, 0.0), 0.5, 1).is_err());
    }

    #[test]
    fn first_step_passes_through() {
        let mut mem = Memory::new(cfg(2, 3, 0.3, 5)).unwrap();
        let e0 = embedding(2, 3, 0.0);
        assert_eq!(mem.step(&e0).unwrap(), e0);
        assert_eq!(mem.state().t, 1);
        assert_eq!(mem.state().e_prev.as_ref(), Some(&e0));
        let e1 = embedding(2, 3, 1.0);
        let out = mem.step(&e1).unwrap();
        assert_ne!(out, e0);
        assert!(mem.step(&embedding(3, 2, 0.0)).is_err());
    }

    #[test]
    fn params_file_round_trip() {
        let p = MemoryParams::seeded(2, 3, 11);
        let bytes = p.to_bytes();
        assert_eq!(MemoryParams::from_bytes(2, 3, &bytes).unwrap(), p);
        assert!(MemoryParams::from_bytes(3, 2, &bytes).is_err());
        assert!(MemoryParams::from_bytes(2, 4, &bytes).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(MemoryParams::from_bytes(2, 3, &wrong).is_err());
    }
}
