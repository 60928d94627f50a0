//! Training loop: filtering, mirroring augmentation, random slicing and
//! AdamW with a warmup-then-linear-decay schedule.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{save_checkpoint, Checkpoint, ModelError, TranceptionModel};
use crate::nn::{Graph, Tensor};
use crate::seq::{self, filter_training_sequences, ProteinSequence, SeqError, TokenSeq};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training sequences left after filtering and validation split")]
    EmptyCorpus,
    #[error("non-finite gradient in parameter {param}")]
    NonFiniteGradient { param: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<crate::nn::NnError> for TrainError {
    fn from(e: crate::nn::NnError) -> Self {
        TrainError::Model(e.into())
    }
}

fn default_peak_lr() -> f64 {
    3e-4
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_mirror_prob() -> f64 {
    0.5
}
fn default_validation_fraction() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    #[serde(default = "default_peak_lr")]
    pub peak_lr: f64,
    pub warmup_steps: u64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_mirror_prob")]
    pub mirror_prob: f64,
    #[serde(default)]
    pub seed: u64,
    /// Write a checkpoint every this many steps; 0 disables.
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    /// Optional global gradient-norm clip.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            peak_lr: default_peak_lr(),
            warmup_steps: 100,
            weight_decay: default_weight_decay(),
            mirror_prob: default_mirror_prob(),
            seed: 0,
            checkpoint_every: 0,
            validation_fraction: default_validation_fraction(),
            max_grad_norm: None,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |m: &str| Err(TrainError::Config(m.to_string()));
        if self.steps == 0 || self.batch_size == 0 {
            return fail("steps and batch_size must be positive");
        }
        if self.warmup_steps >= self.steps {
            return fail("warmup_steps must be smaller than steps");
        }
        if !(0.0..=1.0).contains(&self.mirror_prob) {
            return fail("mirror_prob must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return fail("validation_fraction must lie in [0, 1)");
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) || !(self.weight_decay >= 0.0) {
            return fail("peak_lr must be positive and weight_decay non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return fail("betas must lie in [0, 1) and eps must be positive");
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return fail("max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Linear ramp `0 -> peak_lr` over `warmup_steps`, then linear decay to 0 at `steps`.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    let step = step.min(cfg.steps);
    if step < cfg.warmup_steps {
        cfg.peak_lr * step as f64 / cfg.warmup_steps as f64
    } else {
        cfg.peak_lr * (cfg.steps - step) as f64 / (cfg.steps - cfg.warmup_steps) as f64
    }
}

/// Impute, slice and optionally mirror with the mirror decision fixed.
/// The slice offset is drawn before mirroring, so both outcomes for the
/// same RNG state are mirrors of each other.
pub fn make_example_with(
    s: &ProteinSequence,
    max_context: usize,
    mirrored: bool,
    rng: &mut impl Rng,
) -> Result<TokenSeq, SeqError> {
    let imputed = seq::impute_indeterminates(s, rng)?;
    let room = max_context.saturating_sub(2).max(1);
    let sliced = if imputed.len() > room {
        let start = rng.gen_range(0..=imputed.len() - room);
        imputed.slice(start, start + room)
    } else {
        imputed
    };
    let out = if mirrored { seq::mirror(&sliced) } else { sliced };
    seq::tokenize(&out)
}

/// One augmented training example.
pub fn make_training_example(
    s: &ProteinSequence,
    max_context: usize,
    mirror_prob: f64,
    rng: &mut impl Rng,
) -> Result<TokenSeq, SeqError> {
    let mirrored = rng.gen_bool(mirror_prob);
    make_example_with(s, max_context, mirrored, rng)
}

/// AdamW with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamW {
    pub fn new(shapes: &[&[usize]], cfg: &TrainConfig) -> Self {
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            t: 0,
        }
    }

    pub fn for_model(model: &TranceptionModel, cfg: &TrainConfig) -> Self {
        let shapes: Vec<&[usize]> = model.parameters().iter().map(Tensor::shape).collect();
        Self::new(&shapes, cfg)
    }

    /// Number of updates applied so far.
    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], names: &[String], lr: f64) -> Result<(), TrainError> {
        if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
            let param = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            return Err(TrainError::NonFiniteGradient { param });
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let shrink = 1.0 - lr * self.weight_decay;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p * shrink - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One `(step, lr, loss)` record per optimizer step; loss in nats per token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    /// CSV with header `step,lr,loss`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["step", "lr", "loss"])?;
        for r in &self.records {
            w.write_record([r.step.to_string(), r.lr.to_string(), r.loss.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TranceptionModel,
    pub trace: LossTrace,
    pub train_ids: Vec<String>,
    pub validation_ids: Vec<String>,
    /// Mean validation loss at the end of training, if a split was held out.
    pub validation_loss: Option<f64>,
    pub checkpoints: Vec<PathBuf>,
}

/// Holds out `floor(n * fraction)` sequences without indeterminates for validation.
pub fn split_validation(
    seqs: Vec<ProteinSequence>,
    fraction: f64,
    rng: &mut impl Rng,
) -> (Vec<ProteinSequence>, Vec<ProteinSequence>) {
    let n_val = (seqs.len() as f64 * fraction).floor() as usize;
    let mut eligible: Vec<usize> = (0..seqs.len()).filter(|&i| !seqs[i].has_indeterminates()).collect();
    eligible.shuffle(rng);
    let mut is_val = vec![false; seqs.len()];
    for &i in eligible.iter().take(n_val) {
        is_val[i] = true;
    }
    let (val, train): (Vec<_>, Vec<_>) = seqs.into_iter().zip(is_val).partition(|(_, v)| *v);
    (train.into_iter().map(|(s, _)| s).collect(), val.into_iter().map(|(s, _)| s).collect())
}

/// Batches for one epoch: shuffle, then sort windows of `4 * batch_size`
/// examples by length so each batch pads little.
fn epoch_batches(
    train: &[ProteinSequence],
    model: &TranceptionModel,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Vec<TokenSeq>>, TrainError> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(rng);
    let mut batches = Vec::new();
    for window in order.chunks(4 * cfg.batch_size) {
        let mut examples = window
            .iter()
            .map(|&i| make_training_example(&train[i], model.max_context(), cfg.mirror_prob, rng))
            .collect::<Result<Vec<_>, _>>()?;
        examples.sort_by_key(TokenSeq::len);
        for chunk in examples.chunks(cfg.batch_size) {
            batches.push(chunk.to_vec());
        }
    }
    Ok(batches)
}

fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|x| *x *= scale);
        }
    }
}

/// Loss and gradients for one batch.
pub fn loss_and_gradients(model: &TranceptionModel, batch: &[TokenSeq]) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut g = Graph::new();
    let f = model.forward(&mut g, batch)?;
    let loss = g.cross_entropy(f.logits, &f.targets)?;
    g.backward(loss)?;
    let grads = f
        .params
        .iter()
        .zip(model.parameters())
        .map(|(&v, p)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((g.value(loss).item(), grads))
}

/// Runs the configured number of optimizer steps. Deterministic given
/// `cfg.seed`: all sampling flows from one seeded generator and the loop
/// is single-threaded.
pub fn train(
    corpus: Vec<ProteinSequence>,
    mut model: TranceptionModel,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let kept = filter_training_sequences(corpus, None).kept;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_set, val_set) = split_validation(kept, cfg.validation_fraction, &mut rng);
    if train_set.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }

    let names = model.parameter_names().to_vec();
    let mut opt = AdamW::for_model(&model, cfg);
    let mut trace = LossTrace::default();
    let mut checkpoints = Vec::new();
    let mut queue: Vec<Vec<TokenSeq>> = Vec::new();
    for step in 1..=cfg.steps {
        if queue.is_empty() {
            queue = epoch_batches(&train_set, &model, cfg, &mut rng)?;
            queue.reverse();
        }
        let batch = queue.pop().expect("non-empty epoch");
        let (loss, mut grads) = loss_and_gradients(&model, &batch)?;
        if let Some(max_norm) = cfg.max_grad_norm {
            clip_gradients(&mut grads, max_norm);
        }
        let lr = lr_schedule(step, cfg);
        opt.step(model.parameters_mut(), &grads, &names, lr)?;
        trace.records.push(LossRecord { step, lr, loss });
        log::debug!("step {step} lr {lr:.3e} loss {loss:.4}");

        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && (step % cfg.checkpoint_every == 0 || step == cfg.steps) {
                let path = dir.join(format!("step_{step:06}.ckpt"));
                let ckpt = Checkpoint { model: model.clone(), step, metadata: cfg.to_toml() };
                save_checkpoint(&path, &ckpt)?;
                checkpoints.push(path);
            }
        }
    }

    let validation_loss = if val_set.is_empty() { None } else { Some(evaluate_loss(&model, &val_set, cfg.batch_size)?) };
    Ok(TrainOutcome {
        model,
        trace,
        train_ids: train_set.iter().map(|s| s.id().to_string()).collect(),
        validation_ids: val_set.iter().map(|s| s.id().to_string()).collect(),
        validation_loss,
        checkpoints,
    })
}

/// Token-weighted mean next-token loss (nats) without augmentation.
/// Sequences longer than the context are truncated to their prefix;
/// indeterminates are imputed with a fixed seed.
pub fn evaluate_loss(model: &TranceptionModel, seqs: &[ProteinSequence], batch_size: usize) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let room = model.max_context() - 2;
    let examples = seqs
        .iter()
        .map(|s| {
            let s = seq::impute_indeterminates(s, &mut rng)?;
            let s = if s.len() > room { s.slice(0, room) } else { s };
            seq::tokenize(&s)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    let mut tokens = 0usize;
    for batch in examples.chunks(batch_size.max(1)) {
        let n: usize = batch.iter().map(|t| t.len() - 1).sum();
        total += model.mean_loss(batch)? * n as f64;
        tokens += n;
    }
    if tokens == 0 {
        return Err(TrainError::EmptyCorpus);
    }
    Ok(total / tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::seq::{BOS, EOS};

    fn cfg(steps: u64, warmup: u64) -> TrainConfig {
        TrainConfig { steps, warmup_steps: warmup, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_endpoints() {
        let c = cfg(100, 10);
        assert_eq!(lr_schedule(0, &c), 0.0);
        assert_eq!(lr_schedule(10, &c), 3e-4);
        assert_eq!(lr_schedule(100, &c), 0.0);
        assert!((lr_schedule(5, &c) - 1.5e-4).abs() < 1e-18);
        assert!((lr_schedule(55, &c) - 1.5e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_without_warmup_starts_at_peak() {
        let c = cfg(10, 0);
        assert_eq!(lr_schedule(0, &c), c.peak_lr);
        assert_eq!(lr_schedule(10, &c), 0.0);
    }

    #[test]
    fn schedule_peaks_once_and_is_continuous() {
        let c = cfg(200, 37);
        let lrs: Vec<f64> = (0..=200).map(|s| lr_schedule(s, &c)).collect();
        let peak = lrs.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(lrs.iter().filter(|&&x| x == peak).count(), 1);
        assert_eq!(lrs[37], peak);
        for w in lrs.windows(2) {
            assert!((w[1] - w[0]).abs() <= c.peak_lr / 37.0 + 1e-18);
        }
        assert!(lrs[..=37].windows(2).all(|w| w[1] > w[0]));
        assert!(lrs[37..].windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn config_validation_and_toml() {
        assert!(cfg(10, 10).validate().is_err());
        assert!(TrainConfig { mirror_prob: 1.5, ..cfg(10, 1) }.validate().is_err());
        let c = TrainConfig { max_grad_norm: Some(1.0), ..cfg(10, 1) };
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let minimal = TrainConfig::from_toml("steps = 5\nbatch_size = 2\nwarmup_steps = 1\n").unwrap();
        assert_eq!(minimal.peak_lr, 3e-4);
        assert_eq!(minimal.weight_decay, 1e-4);
        assert_eq!(minimal.mirror_prob, 0.5);
    }

    fn protein(id: &str, s: &str) -> ProteinSequence {
        ProteinSequence::new(id, s).unwrap()
    }

    #[test]
    fn short_sequences_are_not_sliced() {
        let s = protein("a", "MKTAYIAKQR");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = make_training_example(&s, 12, 0.0, &mut rng).unwrap();
        assert_eq!(t.ids(), seq::tokenize(&s).unwrap().ids());
        let m = make_training_example(&s, 12, 1.0, &mut rng).unwrap();
        assert_eq!(m.ids(), seq::tokenize(&seq::mirror(&s)).unwrap().ids());
    }

    #[test]
    fn slice_start_is_uniform_over_two_offsets() {
        let s = protein("a", "MKTAYIAKQRW");
        let max_context = s.len() + 1;
        let mut counts = [0usize; 2];
        for seed in 0..2000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = make_training_example(&s, max_context, 0.0, &mut rng).unwrap();
            assert_eq!(t.len(), max_context);
            let first = t.ids()[1];
            counts[usize::from(first != crate::seq::residue_index(b'M').unwrap())] += 1;
        }
        // Binomial(2000, 0.5): 3 sigma is about 67.
        assert!((counts[0] as i64 - 1000).abs() < 70, "{counts:?}");
    }

    #[test]
    fn mirrored_example_mirrors_unmirrored_slice() {
        let s = protein("a", "MKTAYIAKQRWXLLSEEK");
        for seed in 0..50 {
            let a = make_example_with(&s, 10, false, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = make_example_with(&s, 10, true, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut inner: Vec<usize> = a.ids()[1..a.len() - 1].to_vec();
            inner.reverse();
            assert_eq!(&b.ids()[1..b.len() - 1], inner.as_slice());
            assert_eq!((b.ids()[0], b.ids()[b.len() - 1]), (BOS, EOS));
        }
    }

    #[test]
    fn mirror_rate_within_three_sigma() {
        let s = protein("a", "MKTAYIAKQRW");
        let fwd = seq::tokenize(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let p = 0.5;
        let mirrored = (0..n)
            .filter(|_| make_training_example(&s, 64, p, &mut rng).unwrap().ids() != fwd.ids())
            .count();
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((mirrored as f64 - n as f64 * p).abs() < 3.0 * sigma);
    }

    #[test]
    fn examples_never_contain_indeterminates() {
        let s = protein("a", "MXBJZKTX");
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let t = make_training_example(&s, 64, 0.5, &mut rng).unwrap();
            assert!(t.ids()[1..t.len() - 1].iter().all(|&id| id < 20));
        }
    }

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn adamw_fixed_point_and_shrink() {
        let c = TrainConfig { weight_decay: 0.0, ..cfg(10, 1) };
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let zeros = vec![Tensor::zeros(&[3])];
        AdamW::new(&[&[3]], &c).step(&mut p, &zeros, &names(1), 1e-2).unwrap();
        assert_eq!(p, before);

        let c = TrainConfig { weight_decay: 0.1, ..cfg(10, 1) };
        AdamW::new(&[&[3]], &c).step(&mut p, &zeros, &names(1), 1e-2).unwrap();
        let expected: Vec<f64> = before[0].data().iter().map(|x| x * (1.0 - 1e-2 * 0.1)).collect();
        assert_eq!(p[0].data(), expected.as_slice());
    }

    #[test]
    fn adamw_scalar_quadratic_by_hand() {
        // f(x) = x^2 at x = 3: g = 6. After one step m̂ = g, v̂ = g², so the
        // update is lr * g / (|g| + eps) on top of the decay shrink.
        let c = TrainConfig { weight_decay: 0.01, ..cfg(10, 1) };
        let lr = 0.1;
        let mut p = vec![Tensor::scalar(3.0)];
        let g = vec![Tensor::scalar(6.0)];
        let mut opt = AdamW::new(&[&[]], &c);
        opt.step(&mut p, &g, &names(1), lr).unwrap();
        let expected = 3.0 * (1.0 - lr * 0.01) - lr * 6.0 / (6.0 + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);

        // Second step with gradient 2: explicit moment arithmetic.
        let x1 = p[0].item();
        opt.step(&mut p, &[Tensor::scalar(2.0)], &names(1), lr).unwrap();
        let m = 0.9 * 0.1 * 6.0 + 0.1 * 2.0;
        let v = 0.999 * 0.001 * 36.0 + 0.001 * 4.0;
        let mhat = m / (1.0 - 0.81);
        let vhat = v / (1.0 - 0.999f64.powi(2));
        let expected = x1 * (1.0 - lr * 0.01) - lr * mhat / (vhat.sqrt() + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-14);
    }

    #[test]
    fn adamw_rejects_non_finite_gradients() {
        let c = cfg(10, 1);
        let mut p = vec![Tensor::zeros(&[2]), Tensor::zeros(&[1])];
        let g = vec![Tensor::zeros(&[2]), Tensor::scalar(f64::NAN).reshape(&[1]).unwrap()];
        let err = AdamW::new(&[&[2], &[1]], &c).step(&mut p, &g, &names(2), 0.1).unwrap_err();
        assert!(matches!(err, TrainError::NonFiniteGradient { ref param } if param == "p1"));
    }

    #[test]
    fn validation_split_excludes_indeterminates() {
        let seqs: Vec<ProteinSequence> = (0..200)
            .map(|i| protein(&format!("s{i}"), if i % 3 == 0 { "MKXAY" } else { "MKTAY" }))
            .collect();
        let (train_set, val) = split_validation(seqs, 0.1, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(val.len(), 20);
        assert_eq!(train_set.len(), 180);
        assert!(val.iter().all(|s| !s.has_indeterminates()));
        let train_ids: std::collections::HashSet<_> = train_set.iter().map(|s| s.id()).collect();
        assert!(val.iter().all(|s| !train_ids.contains(s.id())));
    }

    fn tiny_model() -> TranceptionModel {
        TranceptionModel::new(ModelConfig { n_layers: 1, n_heads: 4, d_model: 8, d_ff: 8, max_context: 24, seed: 1, ..ModelConfig::default() })
            .unwrap()
    }

    fn tiny_corpus() -> Vec<ProteinSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..12)
            .map(|i| {
                let len = rng.gen_range(5..30);
                let r: Vec<u8> = (0..len).map(|_| crate::seq::STANDARD_AMINO_ACIDS[rng.gen_range(0..20)]).collect();
                protein(&format!("t{i}"), std::str::from_utf8(&r).unwrap())
            })
            .collect()
    }

    #[test]
    fn training_is_deterministic_and_traced() {
        let c = TrainConfig { steps: 6, batch_size: 4, warmup_steps: 2, peak_lr: 1e-2, validation_fraction: 0.2, seed: 3, ..TrainConfig::default() };
        let a = train(tiny_corpus(), tiny_model(), &c, None).unwrap();
        let b = train(tiny_corpus(), tiny_model(), &c, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.records.len(), 6);
        for r in &a.trace.records {
            assert_eq!(r.lr, lr_schedule(r.step, &c));
        }
        assert_eq!(a.validation_ids.len(), 2);
        assert!(a.validation_ids.iter().all(|v| !a.train_ids.contains(v)));
        assert!(a.validation_loss.is_some());
        let c2 = TrainConfig { seed: 4, ..c };
        assert_ne!(train(tiny_corpus(), tiny_model(), &c2, None).unwrap().model, a.model);
    }

    #[test]
    fn loss_decreases_on_fixed_batch() {
        let mut model = tiny_model();
        let batch: Vec<TokenSeq> =
            tiny_corpus().iter().filter(|s| s.len() <= 22).take(4).map(|s| seq::tokenize(s).unwrap()).collect();
        let c = cfg(100, 1);
        let names = model.parameter_names().to_vec();
        let mut opt = AdamW::for_model(&model, &c);
        let mut losses = Vec::new();
        for _ in 0..11 {
            let (loss, grads) = loss_and_gradients(&model, &batch).unwrap();
            losses.push(loss);
            opt.step(model.parameters_mut(), &grads, &names, 1e-3).unwrap();
        }
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn checkpoints_follow_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let c = TrainConfig { steps: 5, batch_size: 4, warmup_steps: 1, checkpoint_every: 2, validation_fraction: 0.0, ..TrainConfig::default() };
        let out = train(tiny_corpus(), tiny_model(), &c, Some(dir.path())).unwrap();
        let steps: Vec<u64> =
            out.checkpoints.iter().map(|p| crate::model::load_checkpoint(p).unwrap().step).collect();
        assert_eq!(steps, vec![2, 4, 5]);
        let last = crate::model::load_checkpoint(out.checkpoints.last().unwrap()).unwrap();
        assert_eq!(last.model, out.model);
        assert_eq!(TrainConfig::from_toml(&last.metadata).unwrap(), c);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let c = cfg(5, 1);
        let bad = vec![protein("u", "MKUAY")];
        assert!(matches!(train(bad, tiny_model(), &c, None), Err(TrainError::EmptyCorpus)));
    }

    #[test]
    fn loss_trace_csv() {
        let trace = LossTrace { records: vec![LossRecord { step: 1, lr: 0.5, loss: 2.25 }] };
        let mut out = Vec::new();
        trace.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "step,lr,loss\n1,0.5,2.25\n");
    }
}
