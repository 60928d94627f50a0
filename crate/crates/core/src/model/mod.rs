//! The language model: grouped k-mer attention with grouped distance
//! biases, pre-norm transformer blocks with squared-ReLU MLPs, and a
//! next-token head.

mod alibi;
mod attention;
mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{self, Graph, NnError, Tensor, Var};
use crate::seq::{self, ProteinSequence, SeqError, TokenSeq, PAD, VOCAB_SIZE};

pub use alibi::{alibi_slopes, GroupedAlibiBias, SlopeAssignment, N_GROUPS};
pub use attention::{tranception_attention, AttentionParams, KERNEL_SIZES};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("sequence of {len} tokens exceeds the maximum context of {max}")]
    ContextExceeded { len: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionEncoding {
    /// Distance biases on the attention scores; no position embedding.
    #[default]
    GroupedAlibi,
    /// Learned absolute position embeddings (ablation only).
    Learned,
}

fn default_vocab() -> usize {
    VOCAB_SIZE
}
fn default_context() -> usize {
    1024
}
fn default_kernels() -> Vec<usize> {
    KERNEL_SIZES.to_vec()
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    #[serde(default = "default_vocab")]
    pub vocab_size: usize,
    #[serde(default = "default_context")]
    pub max_context: usize,
    #[serde(default = "default_kernels")]
    pub kernel_sizes: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub position_encoding: PositionEncoding,
    #[serde(default)]
    pub slope_assignment: SlopeAssignment,
    #[serde(default = "default_true")]
    pub use_convolutions: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 2,
            n_heads: 4,
            d_model: 32,
            d_ff: 64,
            vocab_size: VOCAB_SIZE,
            max_context: default_context(),
            kernel_sizes: default_kernels(),
            seed: 0,
            position_encoding: PositionEncoding::GroupedAlibi,
            slope_assignment: SlopeAssignment::Repeated,
            use_convolutions: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.n_layers == 0 || self.d_ff == 0 {
            return fail("n_layers and d_ff must be positive".into());
        }
        if self.n_heads == 0 || self.n_heads % N_GROUPS != 0 {
            return fail(format!("n_heads = {} must be a positive multiple of {N_GROUPS}", self.n_heads));
        }
        if self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!("d_model = {} must be divisible by n_heads = {}", self.d_model, self.n_heads));
        }
        if self.vocab_size != VOCAB_SIZE {
            return fail(format!("vocab_size = {} but the amino-acid vocabulary has {VOCAB_SIZE} tokens", self.vocab_size));
        }
        if self.max_context < 4 {
            return fail(format!("max_context = {} must be at least 4", self.max_context));
        }
        if self.kernel_sizes != KERNEL_SIZES {
            return fail(format!("kernel_sizes must be {KERNEL_SIZES:?}, got {:?}", self.kernel_sizes));
        }
        Ok(())
    }

    /// Canonical TOML text.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, ModelError> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn alibi(&self) -> Result<GroupedAlibiBias, ModelError> {
        match self.position_encoding {
            PositionEncoding::GroupedAlibi => GroupedAlibiBias::new(self.n_heads, self.slope_assignment),
            PositionEncoding::Learned => Ok(GroupedAlibiBias::causal_only(self.n_heads)),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal,
    Zeros,
    Ones,
    /// Unit weight on the current-position tap plus small noise.
    Impulse,
}

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
struct LayerSlots {
    ln_attn: (usize, usize),
    q: (usize, usize),
    k: (usize, usize),
    v: (usize, usize),
    o: (usize, usize),
    conv: Option<[[usize; N_GROUPS - 1]; 3]>,
    ln_mlp: (usize, usize),
    up: (usize, usize),
    down: (usize, usize),
}

#[derive(Debug, Clone)]
struct Layout {
    embed: usize,
    pos_embed: Option<usize>,
    layers: Vec<LayerSlots>,
    ln_final: (usize, usize),
    head: (usize, usize),
}

struct LayoutBuilder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn affine(&mut self, prefix: &str, din: usize, dout: usize) -> (usize, usize) {
        (
            self.add(format!("{prefix}.weight"), vec![din, dout], Init::Normal),
            self.add(format!("{prefix}.bias"), vec![dout], Init::Zeros),
        )
    }

    fn norm(&mut self, prefix: &str, d: usize) -> (usize, usize) {
        (
            self.add(format!("{prefix}.gain"), vec![d], Init::Ones),
            self.add(format!("{prefix}.bias"), vec![d], Init::Zeros),
        )
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let d = cfg.d_model;
    let mut b = LayoutBuilder { specs: Vec::new() };
    let embed = b.add("embed.weight".into(), vec![cfg.vocab_size, d], Init::Normal);
    let pos_embed = (cfg.position_encoding == PositionEncoding::Learned)
        .then(|| b.add("pos_embed.weight".into(), vec![cfg.max_context, d], Init::Normal));
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = format!("layers.{l}");
        let ln_attn = b.norm(&format!("{p}.ln_attn"), d);
        let q = b.affine(&format!("{p}.attn.q"), d, d);
        let k = b.affine(&format!("{p}.attn.k"), d, d);
        let v = b.affine(&format!("{p}.attn.v"), d, d);
        let conv = cfg.use_convolutions.then(|| {
            let mut slots = [[0usize; N_GROUPS - 1]; 3];
            for (pi, proj) in ["q", "k", "v"].iter().enumerate() {
                for g in 1..N_GROUPS {
                    let ks = KERNEL_SIZES[g];
                    slots[pi][g - 1] = b.add(format!("{p}.attn.conv_{proj}.k{ks}"), vec![ks, d / N_GROUPS], Init::Impulse);
                }
            }
            slots
        });
        let o = b.affine(&format!("{p}.attn.o"), d, d);
        let ln_mlp = b.norm(&format!("{p}.ln_mlp"), d);
        let up = b.affine(&format!("{p}.mlp.up"), d, cfg.d_ff);
        let down = b.affine(&format!("{p}.mlp.down"), cfg.d_ff, d);
        layers.push(LayerSlots { ln_attn, q, k, v, o, conv, ln_mlp, up, down });
    }
    let ln_final = b.norm("ln_final", d);
    let head = b.affine("head", d, cfg.vocab_size);
    (Layout { embed, pos_embed, layers, ln_final, head }, b.specs)
}

/// Graph handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct LmForward {
    /// `[batch, seq, vocab]`, where `seq` is the longest input minus one.
    pub logits: Var,
    /// One leaf per parameter, in [`TranceptionModel::parameter_names`] order.
    pub params: Vec<Var>,
    /// Next-token target per logits row; `None` at padding.
    pub targets: Vec<Option<usize>>,
}

/// Parameters plus configuration. Immutable during scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct TranceptionModel {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
}

impl TranceptionModel {
    /// Random initialization from `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut params = Vec::with_capacity(specs.len());
        for (name, shape, init) in specs {
            let t = match init {
                Init::Normal => Tensor::randn(&shape, INIT_STD, &mut rng),
                Init::Zeros => Tensor::zeros(&shape),
                Init::Ones => Tensor::full(&shape, 1.0),
                Init::Impulse => {
                    let mut t = Tensor::randn(&shape, INIT_STD, &mut rng);
                    let ch = shape[1];
                    let last = shape[0] - 1;
                    for c in 0..ch {
                        t.data_mut()[last * ch + c] += 1.0;
                    }
                    t
                }
            };
            names.push(name);
            params.push(t);
        }
        Ok(Self { config, names, params })
    }

    /// Rebuilds a model from named tensors, checking names and shapes.
    pub fn from_parameters(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self, ModelError> {
        config.validate()?;
        let (_, specs) = build_layout(&config);
        if specs.len() != named.len() {
            return Err(ModelError::Checkpoint(format!("expected {} parameters, found {}", specs.len(), named.len())));
        }
        let mut names = Vec::new();
        let mut params = Vec::new();
        for ((name, shape, _), (got_name, tensor)) in specs.into_iter().zip(named) {
            if name != got_name || tensor.shape() != shape.as_slice() {
                return Err(ModelError::Checkpoint(format!(
                    "parameter {got_name} {:?} does not match expected {name} {shape:?}",
                    tensor.shape()
                )));
            }
            names.push(name);
            params.push(tensor);
        }
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameter_names(&self) -> &[String] {
        &self.names
    }

    pub fn parameters(&self) -> &[Tensor] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &mut self.params[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    pub fn max_context(&self) -> usize {
        self.config.max_context
    }

    /// Builds the forward graph for a batch. Every sequence must fit in the context.
    pub fn forward(&self, g: &mut Graph, batch: &[TokenSeq]) -> Result<LmForward, ModelError> {
        for t in batch {
            if t.len() > self.config.max_context {
                return Err(ModelError::ContextExceeded { len: t.len(), max: self.config.max_context });
            }
        }
        self.forward_unchecked(g, batch)
    }

    /// Forward pass without the context-length check, for probing length
    /// extrapolation. Fails with learned positions past the table size.
    pub fn forward_unchecked(&self, g: &mut Graph, batch: &[TokenSeq]) -> Result<LmForward, ModelError> {
        if batch.is_empty() {
            return Err(ModelError::Config("empty batch".into()));
        }
        let params: Vec<Var> = self.params.iter().map(|t| g.leaf(t.clone())).collect();
        self.forward_with(g, params, batch)
    }

    /// Forward pass over caller-supplied parameter leaves.
    pub(crate) fn forward_with(&self, g: &mut Graph, params: Vec<Var>, batch: &[TokenSeq]) -> Result<LmForward, ModelError> {
        let (layout, _) = build_layout(&self.config);
        let bsz = batch.len();
        let seq = batch.iter().map(TokenSeq::len).max().unwrap_or(0) - 1;

        // Right padding: under the causal mask no real position attends to a PAD key.
        let mut inputs = Vec::with_capacity(bsz * seq);
        let mut targets = Vec::with_capacity(bsz * seq);
        for t in batch {
            let ids = t.ids();
            for pos in 0..seq {
                if pos + 1 < ids.len() {
                    inputs.push(ids[pos]);
                    targets.push(Some(ids[pos + 1]));
                } else {
                    inputs.push(PAD);
                    targets.push(None);
                }
            }
        }

        let mut x = g.embedding(params[layout.embed], &inputs, &[bsz, seq])?;
        if let Some(pe) = layout.pos_embed {
            let positions: Vec<usize> = (0..bsz).flat_map(|_| 0..seq).collect();
            let p = g.embedding(params[pe], &positions, &[bsz, seq])?;
            x = g.add(x, p)?;
        }
        let bias = self.config.alibi()?;
        for slots in &layout.layers {
            let h = g.layer_norm(x, params[slots.ln_attn.0], params[slots.ln_attn.1])?;
            let attn = AttentionParams {
                q_weight: params[slots.q.0],
                q_bias: params[slots.q.1],
                k_weight: params[slots.k.0],
                k_bias: params[slots.k.1],
                v_weight: params[slots.v.0],
                v_bias: params[slots.v.1],
                o_weight: params[slots.o.0],
                o_bias: params[slots.o.1],
                conv: slots.conv.map(|c| c.map(|row| row.map(|i| params[i]))),
            };
            let a = tranception_attention(g, h, &attn, &bias)?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, params[slots.ln_mlp.0], params[slots.ln_mlp.1])?;
            let up = g.linear(h, params[slots.up.0], Some(params[slots.up.1]))?;
            let act = g.squared_relu(up);
            let down = g.linear(act, params[slots.down.0], Some(params[slots.down.1]))?;
            x = g.add(x, down)?;
        }
        let x = g.layer_norm(x, params[layout.ln_final.0], params[layout.ln_final.1])?;
        let logits = g.linear(x, params[layout.head.0], Some(params[layout.head.1]))?;
        Ok(LmForward { logits, params, targets })
    }

    /// Logits tensor `[batch, seq, vocab]`.
    pub fn logits(&self, batch: &[TokenSeq]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, batch)?;
        Ok(g.value(f.logits).clone())
    }

    /// Mean next-token cross-entropy (nats) over all non-pad targets.
    pub fn mean_loss(&self, batch: &[TokenSeq]) -> Result<f64, ModelError> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, batch)?;
        let loss = g.cross_entropy(f.logits, &f.targets)?;
        Ok(g.value(loss).item())
    }
}

/// A model that assigns next-token log-probabilities to a token sequence.
pub trait AutoregressiveModel: Sync {
    fn max_context(&self) -> usize;

    /// `log P(tokens[t+1] | tokens[..=t])` for every `t` before the last
    /// token: one entry per residue plus one for `EOS`.
    fn next_token_log_probs(&self, tokens: &TokenSeq) -> Result<Vec<f64>, ModelError>;
}

impl AutoregressiveModel for TranceptionModel {
    fn max_context(&self) -> usize {
        self.config.max_context
    }

    fn next_token_log_probs(&self, tokens: &TokenSeq) -> Result<Vec<f64>, ModelError> {
        let logits = self.logits(std::slice::from_ref(tokens))?;
        let vocab = logits.last_dim();
        let ids = tokens.ids();
        Ok(logits
            .data()
            .chunks(vocab)
            .zip(&ids[1..])
            .map(|(row, &target)| nn::log_softmax_at(row, target))
            .collect())
    }
}

/// Log-probability of a sequence under an autoregressive model.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceLogProb {
    /// Sum of `per_position`, minus the `EOS` term when it is excluded.
    pub total: f64,
    /// One entry per residue, then one for `EOS`.
    pub per_position: Vec<f64>,
}

pub fn sequence_log_prob<M: AutoregressiveModel + ?Sized>(
    s: &ProteinSequence,
    model: &M,
    include_eos: bool,
) -> Result<SequenceLogProb, ModelError> {
    let tokens = seq::tokenize(s)?;
    if tokens.len() > model.max_context() {
        return Err(ModelError::ContextExceeded { len: tokens.len(), max: model.max_context() });
    }
    let per_position = model.next_token_log_probs(&tokens)?;
    let counted = if include_eos { per_position.len() } else { per_position.len() - 1 };
    let total = per_position[..counted].iter().sum();
    Ok(SequenceLogProb { total, per_position })
}

#[cfg(test)]
mod tests;
