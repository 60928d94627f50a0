use super::alibi::{GroupedAlibiBias, N_GROUPS};
use super::ModelError;
use crate::nn::{Graph, NnError, Var};

/// Kernel sizes per head group; group 0 is convolution-free.
pub const KERNEL_SIZES: [usize; N_GROUPS] = [1, 3, 5, 7];

/// Graph handles for one attention layer.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub q_weight: Var,
    pub q_bias: Var,
    pub k_weight: Var,
    pub k_bias: Var,
    pub v_weight: Var,
    pub v_bias: Var,
    pub o_weight: Var,
    pub o_bias: Var,
    /// `conv[projection][group - 1]` for projections q, k, v and groups 1..4.
    /// `None` disables every convolution.
    pub conv: Option<[[Var; N_GROUPS - 1]; 3]>,
}

/// Grouped k-mer attention.
///
/// After the q/k/v projections, the channels of head group `g` (heads
/// `[g*h, (g+1)*h)`, `h = n_heads / 4`) go through a causal depthwise
/// convolution of width `KERNEL_SIZES[g]`, except group 0 which is left
/// untouched. Scores get the grouped distance bias before the softmax.
pub fn tranception_attention(
    g: &mut Graph,
    x: Var,
    params: &AttentionParams,
    bias: &GroupedAlibiBias,
) -> Result<Var, ModelError> {
    let shape = g.value(x).shape().to_vec();
    let [_, seq, d] = shape[..] else {
        return Err(NnError::shape("tranception_attention", format!("expected 3-D input, got {shape:?}")).into());
    };
    let n_heads = bias.n_heads();
    if d % n_heads != 0 || n_heads % N_GROUPS != 0 {
        return Err(ModelError::Config(format!("d_model {d} with {n_heads} heads")));
    }
    let group_width = d / N_GROUPS;

    let q = g.linear(x, params.q_weight, Some(params.q_bias))?;
    let k = g.linear(x, params.k_weight, Some(params.k_bias))?;
    let v = g.linear(x, params.v_weight, Some(params.v_bias))?;

    let (q, k, v) = match &params.conv {
        None => (q, k, v),
        Some(conv) => {
            let mut mixed = [q, k, v];
            for (proj, kernels) in mixed.iter_mut().zip(conv.iter()) {
                let mut parts = Vec::with_capacity(N_GROUPS);
                for group in 0..N_GROUPS {
                    let part = g.slice_last(*proj, group * group_width, (group + 1) * group_width)?;
                    parts.push(if group == 0 { part } else { g.causal_depthwise_conv1d(part, kernels[group - 1])? });
                }
                *proj = g.concat_last(&parts)?;
            }
            (mixed[0], mixed[1], mixed[2])
        }
    };

    let attended = g.attention(q, k, v, bias.matrix(seq), n_heads)?;
    Ok(g.linear(attended, params.o_weight, Some(params.o_bias))?)
}
