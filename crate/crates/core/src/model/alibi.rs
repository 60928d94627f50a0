//! Linear distance biases, instantiated per head group.
//!
//! Heads are split into [`N_GROUPS`] contiguous blocks. Within a block of
//! `h` heads, head `i` (1-based) has slope `2^(-8i/h)`, and the bias for a
//! query at `i` and key at `j <= i` is `-slope * (i - j)`. Keys after the
//! query are masked with `-inf`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::nn::Tensor;

pub const N_GROUPS: usize = 4;

/// How slopes are assigned to heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlopeAssignment {
    /// Every group gets the slope set for `n_heads / 4` heads.
    #[default]
    Repeated,
    /// One geometric sequence over all heads, split contiguously across groups.
    Distinct,
}

fn geometric(n: usize) -> Vec<f64> {
    (1..=n).map(|i| 2f64.powf(-8.0 * i as f64 / n as f64)).collect()
}

/// Slope lists per group for `n_heads` heads.
pub fn alibi_slopes(n_heads: usize, assignment: SlopeAssignment) -> Result<Vec<Vec<f64>>, ModelError> {
    if n_heads == 0 || n_heads % N_GROUPS != 0 {
        return Err(ModelError::Config(format!("n_heads = {n_heads} is not a positive multiple of {N_GROUPS}")));
    }
    let per_group = n_heads / N_GROUPS;
    Ok(match assignment {
        SlopeAssignment::Repeated => vec![geometric(per_group); N_GROUPS],
        SlopeAssignment::Distinct => geometric(n_heads).chunks(per_group).map(<[f64]>::to_vec).collect(),
    })
}

/// Per-head slopes plus the bias-matrix builder.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedAlibiBias {
    slopes: Vec<f64>,
}

impl GroupedAlibiBias {
    pub fn new(n_heads: usize, assignment: SlopeAssignment) -> Result<Self, ModelError> {
        Ok(Self { slopes: alibi_slopes(n_heads, assignment)?.concat() })
    }

    /// Explicit per-head slopes (head order). Zero slopes give a plain causal mask.
    pub fn from_slopes(slopes: Vec<f64>) -> Result<Self, ModelError> {
        if slopes.is_empty() || slopes.len() % N_GROUPS != 0 || slopes.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(ModelError::Config(format!("invalid slopes {slopes:?}")));
        }
        Ok(Self { slopes })
    }

    /// Causal mask without distance penalty (used with learned positions).
    pub fn causal_only(n_heads: usize) -> Self {
        Self { slopes: vec![0.0; n_heads] }
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn n_heads(&self) -> usize {
        self.slopes.len()
    }

    /// `[n_heads, seq, seq]` additive bias.
    pub fn matrix(&self, seq: usize) -> Arc<Tensor> {
        let h = self.slopes.len();
        let mut data = vec![0.0; h * seq * seq];
        for (head, &m) in self.slopes.iter().enumerate() {
            for i in 0..seq {
                let row = &mut data[(head * seq + i) * seq..(head * seq + i + 1) * seq];
                for (j, v) in row.iter_mut().enumerate() {
                    *v = if j > i { f64::NEG_INFINITY } else { -m * (i - j) as f64 };
                }
            }
        }
        Arc::new(Tensor::new(vec![h, seq, seq], data).expect("bias shape"))
    }
}
