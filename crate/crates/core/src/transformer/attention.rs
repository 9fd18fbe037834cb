//! Scaled dot-product attention, per head and multi-head.
//!
//! These functions work on single sequences (`[T, d]` inputs) and follow the
//! per-head formulation literally: every head owns its own projection
//! matrices and head outputs are concatenated before the output projection.
//! The model's batched path computes the same quantity with fused
//! `[d, N·h]` projection matrices whose column blocks are the per-head
//! matrices.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Additive large negative used for blocked attention scores; its
/// exponential underflows to exactly zero.
pub const MASK_VALUE: f64 = -1e9;

/// Marks disallowed (query, key) pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    rows: usize,
    cols: usize,
    blocked: Vec<bool>,
}

impl Mask {
    pub fn none(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            blocked: vec![false; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let blocked = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        Self { rows, cols, blocked }
    }

    /// Query `i` may attend only to keys `j <= i`.
    pub fn causal(len: usize) -> Self {
        Self::from_fn(len, len, |i, j| j > i)
    }

    /// Blocks every key whose flag is set, for all `rows` queries.
    pub fn keys(rows: usize, key_blocked: &[bool]) -> Self {
        Self::from_fn(rows, key_blocked.len(), |_, j| key_blocked[j])
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn is_blocked(&self, i: usize, j: usize) -> bool {
        self.blocked[i * self.cols + j]
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        if self.shape() != other.shape() {
            return Err(Error::dim("mask union", &self.shape(), &other.shape()));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            blocked: self.blocked.iter().zip(&other.blocked).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn additive(&self) -> Tensor {
        Tensor::from_fn(&[self.rows, self.cols], |i| if self.blocked[i] { MASK_VALUE } else { 0.0 })
    }
}

/// Projection matrices of one attention head, each `[d, h]`.
#[derive(Clone, Copy, Debug)]
pub struct HeadWeights<'t> {
    pub w_q: Var<'t>,
    pub w_k: Var<'t>,
    pub w_v: Var<'t>,
}

/// Output of one head: softmax(QKᵀ/√h)·V with Q = qW_q, K = kW_k, V = vW_v.
pub fn attention_head<'t>(
    tape: &'t Tape,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    head: &HeadWeights<'t>,
    mask: Option<&Mask>,
) -> Result<Var<'t>> {
    let (tq, tk) = (q.shape()[0], k.shape()[0]);
    if v.shape()[0] != tk {
        return Err(Error::dim("attention keys/values", &k.shape(), &v.shape()));
    }
    let queries = q.matmul(head.w_q)?;
    let keys = k.matmul(head.w_k)?;
    let values = v.matmul(head.w_v)?;
    let width = keys.shape()[1];
    let mut scores = queries.matmul(keys.transpose()?)?.scale(1.0 / (width as f64).sqrt());
    if let Some(mask) = mask {
        if mask.shape() != [tq, tk] {
            return Err(Error::dim("attention mask", &mask.shape(), &[tq, tk]));
        }
        scores = scores.add(tape.constant(mask.additive()))?;
    }
    scores.softmax(1)?.matmul(values)
}

/// W_o applied to the concatenation of all head outputs.
pub fn multi_head<'t>(
    tape: &'t Tape,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    heads: &[HeadWeights<'t>],
    w_o: Var<'t>,
    mask: Option<&Mask>,
) -> Result<Var<'t>> {
    let outputs = heads
        .iter()
        .map(|h| attention_head(tape, q, k, v, h, mask))
        .collect::<Result<Vec<_>>>()?;
    tape.concat(&outputs, 1)?.matmul(w_o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eye(n: usize) -> Tensor {
        Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    #[test]
    fn singleton_key_gets_full_weight() {
        let tape = Tape::new();
        let q = tape.constant(Tensor::new(&[2, 2], vec![1., -3., 0.5, 2.]).unwrap());
        let kv = tape.constant(Tensor::new(&[1, 2], vec![0.25, 4.]).unwrap());
        let w_v = tape.constant(Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap());
        let head = HeadWeights {
            w_q: tape.constant(eye(2)),
            w_k: tape.constant(eye(2)),
            w_v,
        };
        let out = attention_head(&tape, q, kv, kv, &head, None).unwrap();
        // v·W_v = [0.25 + 12, 0.5 + 16]
        assert_eq!(out.value().data(), &[12.25, 16.5, 12.25, 16.5]);
    }

    #[test]
    fn two_position_hand_evaluation() {
        // Single query [1, 0], keys [[1,0],[0,1]], values [[2,0],[0,4]],
        // identity projections, width 2: scores [1/√2, 0].
        let tape = Tape::new();
        let q = tape.constant(Tensor::new(&[1, 2], vec![1., 0.]).unwrap());
        let k = tape.constant(eye(2));
        let v = tape.constant(Tensor::new(&[2, 2], vec![2., 0., 0., 4.]).unwrap());
        let head = HeadWeights {
            w_q: tape.constant(eye(2)),
            w_k: tape.constant(eye(2)),
            w_v: tape.constant(eye(2)),
        };
        let out = attention_head(&tape, q, k, v, &head, None).unwrap();
        let e = (1.0f64 / 2f64.sqrt()).exp();
        let (p0, p1) = (e / (e + 1.0), 1.0 / (e + 1.0));
        let expected = [2.0 * p0, 4.0 * p1];
        for (a, b) in out.value().data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mask_shape_mismatch_is_dimension_error() {
        let tape = Tape::new();
        let x = tape.constant(eye(2));
        let head = HeadWeights {
            w_q: x,
            w_k: x,
            w_v: x,
        };
        let err = attention_head(&tape, x, x, x, &head, Some(&Mask::causal(3))).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn zero_output_projection_gives_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 2], vec![0.3, -1., 2., 0.1]).unwrap());
        let head = HeadWeights {
            w_q: tape.constant(eye(2)),
            w_k: tape.constant(eye(2)),
            w_v: tape.constant(eye(2)),
        };
        let w_o = tape.constant(Tensor::zeros(&[4, 2]));
        let out = multi_head(&tape, x, x, x, &[head, head], w_o, None).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_head_multi_head_is_projected_head() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 2], vec![0.3, -1., 2., 0.1]).unwrap());
        let head = HeadWeights {
            w_q: tape.constant(eye(2)),
            w_k: tape.constant(eye(2)),
            w_v: tape.constant(eye(2)),
        };
        let w_o = tape.constant(Tensor::new(&[2, 2], vec![1., 2., -1., 0.5]).unwrap());
        let multi = multi_head(&tape, x, x, x, &[head], w_o, None).unwrap();
        let single = attention_head(&tape, x, x, x, &head, None).unwrap().matmul(w_o).unwrap();
        assert_eq!(*multi.value(), *single.value());
    }

    #[test]
    fn causal_mask_ignores_future_positions() {
        let tape = Tape::new();
        let head = HeadWeights {
            w_q: tape.constant(eye(2)),
            w_k: tape.constant(eye(2)),
            w_v: tape.constant(eye(2)),
        };
        let a = tape.constant(Tensor::new(&[3, 2], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.constant(Tensor::new(&[3, 2], vec![1., 2., -30., 7., 0., 99.]).unwrap());
        let mask = Mask::causal(3);
        let oa = attention_head(&tape, a, a, a, &head, Some(&mask)).unwrap();
        let ob = attention_head(&tape, b, b, b, &head, Some(&mask)).unwrap();
        assert_eq!(oa.value().row(0), ob.value().row(0));
    }
}
