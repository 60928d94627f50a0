//! Dense `f64` tensors with reverse-mode differentiation: just the
//! operations the language model needs.

mod gradcheck;
mod graph;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheck};
pub use graph::{Graph, Var};
pub use tensor::Tensor;

pub(crate) use graph::log_softmax_at;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("softmax row {row} is fully masked")]
    AllMasked { row: usize },
    #[error("every target position is ignored")]
    NoTargets,
    #[error("backward target must be a scalar")]
    NotScalar,
}

impl NnError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        NnError::ShapeMismatch { op, detail: detail.into() }
    }
}

/// Max-subtracted softmax of one row into `out`. Errors when every entry is `-inf`.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) -> Result<(), NnError> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(NnError::AllMasked { row: 0 });
    }
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Softmax over the last axis. `mask` is added before normalization; its
/// shape must be a suffix of `x`'s shape (so it broadcasts over leading axes).
pub fn softmax_lastaxis(x: &Tensor, mask: Option<&Tensor>) -> Result<Tensor, NnError> {
    let d = x.last_dim();
    if let Some(m) = mask {
        let (xs, ms) = (x.shape(), m.shape());
        if ms.len() > xs.len() || xs[xs.len() - ms.len()..] != *ms || ms.is_empty() {
            return Err(NnError::shape("softmax", format!("mask {ms:?} does not broadcast to {xs:?}")));
        }
    }
    let mut out = vec![0.0; x.numel()];
    let mut scratch = vec![0.0; d];
    for r in 0..x.rows() {
        let row = &x.data()[r * d..(r + 1) * d];
        let src = match mask {
            Some(m) => {
                let mrows = m.rows();
                let mrow = &m.data()[(r % mrows) * d..(r % mrows + 1) * d];
                for (s, (a, b)) in scratch.iter_mut().zip(row.iter().zip(mrow)) {
                    *s = a + b;
                }
                &scratch[..]
            }
            None => row,
        };
        softmax_row(src, &mut out[r * d..(r + 1) * d]).map_err(|_| NnError::AllMasked { row: r })?;
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Row-wise log-softmax over the last axis.
pub fn log_softmax_lastaxis(x: &Tensor) -> Tensor {
    let d = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}
