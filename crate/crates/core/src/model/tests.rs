use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::nn::grad_check;
use crate::seq::{tokenize, BOS, EOS};

fn small_config() -> ModelConfig {
    ModelConfig { n_layers: 2, n_heads: 4, d_model: 16, d_ff: 16, max_context: 64, seed: 7, ..ModelConfig::default() }
}

fn random_tokens(rng: &mut ChaCha8Rng, residues: usize) -> TokenSeq {
    let mut ids = vec![BOS];
    ids.extend((0..residues).map(|_| rng.gen_range(0..20)));
    ids.push(EOS);
    TokenSeq::from_ids(ids).unwrap()
}

/// Perturbs every parameter so tests do not rely on the near-identity init.
fn jittered(config: ModelConfig, scale: f64) -> TranceptionModel {
    let mut model = TranceptionModel::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for t in model.parameters_mut() {
        for x in t.data_mut() {
            *x += scale * rng.gen_range(-1.0..1.0);
        }
    }
    model
}

#[test]
fn config_validation() {
    assert!(small_config().validate().is_ok());
    let bad = [
        ModelConfig { n_heads: 6, d_model: 24, ..small_config() },
        ModelConfig { d_model: 18, ..small_config() },
        ModelConfig { vocab_size: 25, ..small_config() },
        ModelConfig { max_context: 2, ..small_config() },
        ModelConfig { kernel_sizes: vec![1, 3, 5, 9], ..small_config() },
    ];
    for cfg in bad {
        assert!(matches!(TranceptionModel::new(cfg), Err(ModelError::Config(_))));
    }
}

#[test]
fn config_toml_round_trip() {
    let cfg = ModelConfig { use_convolutions: false, slope_assignment: SlopeAssignment::Distinct, ..small_config() };
    assert_eq!(ModelConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    let minimal = ModelConfig::from_toml("n_layers = 1\nn_heads = 4\nd_model = 8\nd_ff = 8\n").unwrap();
    assert_eq!(minimal.vocab_size, VOCAB_SIZE);
    assert!(minimal.use_convolutions);
    assert!(ModelConfig::from_toml("n_layers = 1\nn_heads = 4\nd_model = 8\nd_ff = 8\nbogus = 1\n").is_err());
}

#[test]
fn parameter_layout() {
    let m = TranceptionModel::new(small_config()).unwrap();
    let names = m.parameter_names();
    assert_eq!(names[0], "embed.weight");
    assert!(names.contains(&"layers.1.attn.conv_v.k7".to_string()));
    assert_eq!(m.parameter("layers.0.attn.conv_q.k5").unwrap().shape(), &[5, 4]);
    assert!(m.parameter("pos_embed.weight").is_none());
    let no_conv = TranceptionModel::new(ModelConfig { use_convolutions: false, ..small_config() }).unwrap();
    assert!(no_conv.parameter_names().iter().all(|n| !n.contains("conv")));
    let learned = TranceptionModel::new(ModelConfig {
        position_encoding: PositionEncoding::Learned,
        ..small_config()
    })
    .unwrap();
    assert_eq!(learned.parameter("pos_embed.weight").unwrap().shape(), &[64, 16]);
}

#[test]
fn init_is_deterministic_per_seed() {
    let a = TranceptionModel::new(small_config()).unwrap();
    let b = TranceptionModel::new(small_config()).unwrap();
    let c = TranceptionModel::new(ModelConfig { seed: 8, ..small_config() }).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn logits_are_causal() {
    let model = jittered(small_config(), 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let len = rng.gen_range(3..30);
        let base = random_tokens(&mut rng, len);
        let pos = rng.gen_range(1..=len);
        let mut ids = base.ids().to_vec();
        ids[pos] = (ids[pos] + rng.gen_range(1..20)) % 20;
        let changed = TokenSeq::from_ids(ids).unwrap();
        let a = model.logits(&[base]).unwrap();
        let b = model.logits(&[changed]).unwrap();
        let v = a.last_dim();
        // Rows before `pos` only see tokens before `pos`.
        assert_eq!(a.data()[..pos * v], b.data()[..pos * v]);
        assert_ne!(a.data()[pos * v..], b.data()[pos * v..]);
    }
}

#[test]
fn padding_does_not_change_real_rows() {
    let model = jittered(small_config(), 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let short = random_tokens(&mut rng, 5);
    let long = random_tokens(&mut rng, 12);
    let alone = model.logits(&[short.clone()]).unwrap();
    let batched = model.logits(&[short, long]).unwrap();
    let n = alone.numel();
    assert_eq!(alone.data(), &batched.data()[..n]);
}

#[test]
fn impulse_kernels_match_no_convolution() {
    let cfg = small_config();
    let mut with_conv = jittered(cfg.clone(), 0.3);
    let names = with_conv.parameter_names().to_vec();
    let mut plain_params = Vec::new();
    for (name, t) in names.iter().zip(with_conv.parameters_mut()) {
        if name.contains("conv") {
            let (k, c) = (t.shape()[0], t.shape()[1]);
            *t = Tensor::from_fn(&[k, c], |i| if i / c == k - 1 { 1.0 } else { 0.0 });
        } else {
            plain_params.push((name.clone(), t.clone()));
        }
    }
    let plain = TranceptionModel::from_parameters(ModelConfig { use_convolutions: false, ..cfg }, plain_params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let toks = random_tokens(&mut rng, 15);
    let a = with_conv.logits(&[toks.clone()]).unwrap();
    let b = plain.logits(&[toks]).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn convolution_only_touches_its_group() {
    // Perturbing the group-1 kernel changes only heads of group 1 before the
    // output projection; with an identity output projection that is visible
    // directly in the attention output channels.
    let d = 16;
    let gw = d / N_GROUPS;
    let bias = GroupedAlibiBias::new(4, SlopeAssignment::Repeated).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Tensor::randn(&[1, 9, d], 1.0, &mut rng);
    let w: Vec<Tensor> = (0..3).map(|_| Tensor::randn(&[d, d], 0.3, &mut rng)).collect();
    let run = |k3: &Tensor| {
        let mut g = Graph::new();
        let xv = g.leaf(x.clone());
        let zeros = g.leaf(Tensor::zeros(&[d]));
        let ws: Vec<Var> = w.iter().map(|t| g.leaf(t.clone())).collect();
        let eye = g.leaf(Tensor::identity(d));
        let kernels = |g: &mut Graph| {
            [
                g.leaf(k3.clone()),
                g.leaf(Tensor::from_fn(&[5, gw], |i| if i / gw == 4 { 1.0 } else { 0.0 })),
                g.leaf(Tensor::from_fn(&[7, gw], |i| if i / gw == 6 { 1.0 } else { 0.0 })),
            ]
        };
        let conv = [kernels(&mut g), kernels(&mut g), kernels(&mut g)];
        let p = AttentionParams {
            q_weight: ws[0],
            q_bias: zeros,
            k_weight: ws[1],
            k_bias: zeros,
            v_weight: ws[2],
            v_bias: zeros,
            o_weight: eye,
            o_bias: zeros,
            conv: Some(conv),
        };
        let out = tranception_attention(&mut g, xv, &p, &bias).unwrap();
        g.value(out).clone()
    };
    let impulse = Tensor::from_fn(&[3, gw], |i| if i / gw == 2 { 1.0 } else { 0.0 });
    let other = Tensor::randn(&[3, gw], 1.0, &mut rng);
    let a = run(&impulse);
    let b = run(&other);
    for row in 0..9 {
        for c in 0..d {
            let (va, vb) = (a.data()[row * d + c], b.data()[row * d + c]);
            if (gw..2 * gw).contains(&c) {
                if row > 0 {
                    assert_ne!(va, vb);
                }
            } else {
                assert_eq!(va, vb);
            }
        }
    }
}

#[test]
fn steep_slopes_collapse_attention_to_self() {
    // With huge distance penalties each query attends only to itself, so
    // with impulse kernels the output is the value projection.
    let d = 16;
    let gw = d / N_GROUPS;
    let bias = GroupedAlibiBias::from_slopes(vec![1e3; 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::randn(&[2, 7, d], 1.0, &mut rng);
    let mut g = Graph::new();
    let xv = g.leaf(x);
    let mut lin = |g: &mut Graph| (g.leaf(Tensor::randn(&[d, d], 0.3, &mut rng)), g.leaf(Tensor::zeros(&[d])));
    let (qw, qb) = lin(&mut g);
    let (kw, kb) = lin(&mut g);
    let (vw, vb) = lin(&mut g);
    let eye = g.leaf(Tensor::identity(d));
    let zeros = g.leaf(Tensor::zeros(&[d]));
    let mut kernels = || {
        [3, 5, 7].map(|k| g.leaf(Tensor::from_fn(&[k, gw], |i| if i / gw == k - 1 { 1.0 } else { 0.0 })))
    };
    let conv = [kernels(), kernels(), kernels()];
    let p = AttentionParams {
        q_weight: qw,
        q_bias: qb,
        k_weight: kw,
        k_bias: kb,
        v_weight: vw,
        v_bias: vb,
        o_weight: eye,
        o_bias: zeros,
        conv: Some(conv),
    };
    let out = tranception_attention(&mut g, xv, &p, &bias).unwrap();
    let v = g.linear(xv, vw, Some(vb)).unwrap();
    assert!(g.value(out).max_abs_diff(g.value(v)) < 1e-6);
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let cfg = ModelConfig { n_layers: 2, n_heads: 4, d_model: 16, d_ff: 8, max_context: 16, seed: 3, ..ModelConfig::default() };
    let model = jittered(cfg, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = vec![random_tokens(&mut rng, 4), random_tokens(&mut rng, 2)];
    let check = grad_check(
        |g, vars| {
            let f = model.forward_with(g, vars.to_vec(), &batch).map_err(|e| match e {
                ModelError::Nn(n) => n,
                other => panic!("{other}"),
            })?;
            g.cross_entropy(f.logits, &f.targets)
        },
        model.parameters(),
        1e-5,
    )
    .unwrap();
    assert!(check.max_rel_error < 1e-4, "{check:?}");
}

#[test]
fn context_limit_and_extrapolation() {
    let model = jittered(ModelConfig { max_context: 8, ..small_config() }, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let long = random_tokens(&mut rng, 20);
    assert!(matches!(model.logits(&[long.clone()]), Err(ModelError::ContextExceeded { len: 22, max: 8 })));
    let mut g = Graph::new();
    let f = model.forward_unchecked(&mut g, &[long]).unwrap();
    assert!(g.value(f.logits).all_finite());

    let learned = TranceptionModel::new(ModelConfig {
        max_context: 8,
        position_encoding: PositionEncoding::Learned,
        ..small_config()
    })
    .unwrap();
    let mut g = Graph::new();
    assert!(learned.forward_unchecked(&mut g, &[random_tokens(&mut rng, 20)]).is_err());
}

#[test]
fn sequence_log_prob_sums_positions() {
    let model = jittered(small_config(), 0.3);
    let s = ProteinSequence::new("s", "MKTAYIAK").unwrap();
    let with = sequence_log_prob(&s, &model, true).unwrap();
    let without = sequence_log_prob(&s, &model, false).unwrap();
    assert_eq!(with.per_position.len(), 9);
    assert!(with.per_position.iter().all(|&x| x < 0.0));
    let sum: f64 = with.per_position.iter().sum();
    assert!((with.total - sum).abs() < 1e-12);
    assert!((with.total - without.total - with.per_position[8]).abs() < 1e-12);

    // Per-position entries agree with a direct softmax over the logits.
    let toks = tokenize(&s).unwrap();
    let logits = model.logits(&[toks.clone()]).unwrap();
    let lsm = crate::nn::log_softmax_lastaxis(&logits);
    for (t, &lp) in with.per_position.iter().enumerate() {
        assert!((lsm.data()[t * VOCAB_SIZE + toks.ids()[t + 1]] - lp).abs() < 1e-12);
    }
}

#[test]
fn next_token_distribution_normalizes() {
    let model = jittered(small_config(), 0.3);
    let logits = model.logits(&[TokenSeq::from_ids(vec![BOS, 3, 4, EOS]).unwrap()]).unwrap();
    for row in logits.data().chunks(VOCAB_SIZE) {
        let z: f64 = row.iter().map(|&x| x.exp()).sum();
        let total: f64 = row.iter().map(|&x| (x - z.ln()).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip() {
    let model = jittered(ModelConfig { position_encoding: PositionEncoding::Learned, ..small_config() }, 0.1);
    let ckpt = Checkpoint { model, step: 42, metadata: "lr = 0.001\n".into() };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&path, &ckpt).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(encode_checkpoint(&back), encode_checkpoint(&ckpt));
}

#[test]
fn checkpoint_rejects_corruption() {
    let ckpt = Checkpoint { model: TranceptionModel::new(small_config()).unwrap(), step: 0, metadata: String::new() };
    let bytes = encode_checkpoint(&ckpt);
    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x10;
    assert!(matches!(decode_checkpoint(&flipped), Err(ModelError::Checksum)));
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    assert!(decode_checkpoint(b"not a checkpoint at all, clearly not").is_err());
}

fn reseal(mut body: Vec<u8>) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    body
}

#[test]
fn checkpoint_rejects_vocab_and_version_mismatch() {
    let ckpt = Checkpoint { model: TranceptionModel::new(small_config()).unwrap(), step: 0, metadata: String::new() };
    let bytes = encode_checkpoint(&ckpt);
    let body = bytes[..bytes.len() - 32].to_vec();

    let mut versioned = body.clone();
    versioned[8..12].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_checkpoint(&reseal(versioned)), Err(ModelError::Version { found: 2, expected: 1 })));

    let needle = b"vocab_size = 23";
    let pos = body.windows(needle.len()).position(|w| w == needle).unwrap() + needle.len() - 2;
    let mut vocab = body.clone();
    vocab[pos..pos + 2].copy_from_slice(b"25");
    let err = decode_checkpoint(&reseal(vocab)).unwrap_err();
    assert!(err.to_string().contains("vocabulary"), "{err}");
}
