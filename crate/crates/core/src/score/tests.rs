use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{ModelConfig, TranceptionModel};
use crate::retrieval::{build_profile, parse_a2m, sequence_weights, DEFAULT_LAMBDA};
use crate::seq::{parse_mutation, STANDARD_AMINO_ACIDS};
use crate::synthetic::PairTableModel;

#[test]
fn window_examples() {
    assert_eq!(select_window(&[50], 100, 1022).unwrap(), (1, 100));
    assert_eq!(select_window(&[1500], 2000, 1000).unwrap(), (1001, 2000));
    assert!(matches!(select_window(&[10, 1900], 2000, 1000), Err(ScoreError::Window { .. })));
    assert_eq!(select_window(&[3], 2000, 1000).unwrap(), (1, 1000));
    assert_eq!(select_window(&[1000], 2000, 1000).unwrap(), (501, 1500));
    assert!(matches!(select_window(&[0], 10, 5), Err(ScoreError::PositionOutOfRange { .. })));
    assert!(matches!(select_window(&[1], 10, 0), Err(ScoreError::EmptyWindow)));
}

proptest! {
    #[test]
    fn window_contains_positions(len in 1usize..300, w in 1usize..120, raw in proptest::collection::vec(0.0f64..1.0, 1..4)) {
        let positions: Vec<usize> = raw.iter().map(|x| 1 + (x * len as f64) as usize % len).collect();
        match select_window(&positions, len, w) {
            Ok((s, e)) => {
                prop_assert!(s >= 1 && e <= len && s <= e);
                prop_assert_eq!(e - s + 1, len.min(w));
                prop_assert!(positions.iter().all(|&p| s <= p && p <= e));
            }
            Err(ScoreError::Window { .. }) => {
                let spread = positions.iter().max().unwrap() - positions.iter().min().unwrap() + 1;
                // Only fails when the barycentric window cannot hold them all.
                prop_assert!(len > w && spread > w / 2);
            }
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}

fn tiny_model() -> TranceptionModel {
    let mut m = TranceptionModel::new(ModelConfig {
        n_layers: 1,
        n_heads: 4,
        d_model: 16,
        d_ff: 16,
        max_context: 32,
        seed: 5,
        ..ModelConfig::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for t in m.parameters_mut() {
        for x in t.data_mut() {
            *x += 0.3 * rng.gen_range(-1.0..1.0);
        }
    }
    m
}

const WT: &str = "MKTAYIAKQRQISFVKSHFSRQ";

fn wt() -> ProteinSequence {
    ProteinSequence::new("wt", WT).unwrap()
}

/// Alignment covering every seed position except 5, which the seed holds
/// as an insert state.
fn profile() -> RetrievalProfile {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut text = format!(">wt\n{}y{}\n", &WT[..4], &WT[5..]);
    for i in 0..30 {
        let row: String = WT
            .bytes()
            .enumerate()
            .filter(|&(j, _)| j != 4)
            .map(|(_, b)| if rng.gen_bool(0.3) { STANDARD_AMINO_ACIDS[rng.gen_range(0..20)] as char } else { b as char })
            .collect();
        text.push_str(&format!(">r{i}\n{row}\n"));
    }
    let msa = parse_a2m(text.as_bytes()).unwrap();
    build_profile(&msa, &sequence_weights(&msa, 0.2), DEFAULT_LAMBDA).unwrap()
}

fn variant(code: &str) -> Variant {
    Variant::new(&parse_mutation(code, &wt()).unwrap(), &wt()).unwrap()
}

fn opts(alpha: f64) -> ScoreOptions {
    ScoreOptions { alpha, ..ScoreOptions::default() }
}

#[test]
fn profile_fixture_has_one_uncovered_position() {
    let p = profile();
    assert_eq!(p.len(), WT.len());
    assert!(!p.is_covered(4));
    assert_eq!(p.n_covered(), WT.len() - 1);
}

#[test]
fn identity_ratio_is_zero() {
    let model = tiny_model();
    let p = profile();
    let silent = Variant::new(&parse_mutation("M1M", &wt()).unwrap(), &wt()).unwrap();
    for dir in [Direction::Forward, Direction::Reverse] {
        for alpha in [0.0, 0.6, 1.0] {
            for prof in [None, Some(&p)] {
                assert_eq!(fitness_ratio(&model, &wt(), &silent, prof, &opts(alpha), dir).unwrap().f, 0.0);
            }
        }
    }
}

#[test]
fn ratio_is_antisymmetric() {
    let model = tiny_model();
    let p = profile();
    for code in ["K2A", "A4W:Q9E", "F14P"] {
        let v = variant(code);
        let back_code = MutationSet::from_edits(
            String::new(),
            v.mutant.clone(),
            parse_mutation(code, &wt())
                .unwrap()
                .substitutions()
                .iter()
                .map(|s| crate::seq::Substitution { position: s.position, from: s.to, to: s.from })
                .collect(),
            vec![],
            vec![],
        )
        .unwrap();
        let back = Variant::new(&back_code, &v.mutant).unwrap();
        for dir in [Direction::Forward, Direction::Reverse] {
            for prof in [None, Some(&p)] {
                let f = fitness_ratio(&model, &wt(), &v, prof, &opts(0.6), dir).unwrap().f;
                let g = fitness_ratio(&model, &v.mutant, &back, prof, &opts(0.6), dir).unwrap().f;
                assert_eq!(f, -g);
            }
        }
    }
}

#[test]
fn alpha_zero_matches_no_retrieval_bit_exact() {
    let model = tiny_model();
    let p = profile();
    for code in ["K2A", "A4W:Q9E", "del3-4", "ins7:GG"] {
        let v = variant(code);
        for dir in [Direction::Forward, Direction::Reverse] {
            let with = fitness_ratio(&model, &wt(), &v, Some(&p), &opts(0.0), dir).unwrap().f;
            let without = fitness_ratio(&model, &wt(), &v, None, &opts(0.0), dir).unwrap().f;
            assert_eq!(with.to_bits(), without.to_bits(), "{code}");
        }
    }
}

#[test]
fn ratio_is_linear_in_alpha() {
    let model = tiny_model();
    let p = profile();
    for code in ["K2A", "Y5W", "A4W:Q9E", "del3-4", "ins7:GG"] {
        let v = variant(code);
        for dir in [Direction::Forward, Direction::Reverse] {
            for uncovered in [UncoveredWeight::Full, UncoveredWeight::OneMinusAlpha] {
                let f = |alpha| {
                    let o = ScoreOptions { alpha, uncovered, ..ScoreOptions::default() };
                    fitness_ratio(&model, &wt(), &v, Some(&p), &o, dir).unwrap().f
                };
                let (f0, f1) = (f(0.0), f(1.0));
                for alpha in [0.1, 0.35, 0.6, 0.9] {
                    assert!((f(alpha) - ((1.0 - alpha) * f0 + alpha * f1)).abs() < 1e-12, "{code} {alpha}");
                }
            }
        }
    }
}

#[test]
fn alpha_one_telescopes_to_profile_terms() {
    let model = tiny_model();
    let p = profile();
    let v = variant("A4W:Q9E");
    let expected = (p.log_prob(3, b'W').unwrap() - p.log_prob(3, b'A').unwrap())
        + (p.log_prob(8, b'E').unwrap() - p.log_prob(8, b'Q').unwrap());
    // The uncovered position still sees the changed context, so drop its
    // model term as well.
    let o = ScoreOptions { uncovered: UncoveredWeight::OneMinusAlpha, ..opts(1.0) };
    for dir in [Direction::Forward, Direction::Reverse] {
        let f = fitness_ratio(&model, &wt(), &v, Some(&p), &o, dir).unwrap().f;
        assert!((f - expected).abs() < 1e-12);
    }
}

#[test]
fn uncovered_mutation_falls_back_to_model() {
    let model = tiny_model();
    let p = profile();
    let v = variant("Y5W");
    // At alpha = 1 only the uncovered position differs, scored by the model alone.
    let fused = fitness_ratio(&model, &wt(), &v, Some(&p), &opts(1.0), Direction::Forward).unwrap().f;
    let ar = |s: &ProteinSequence| {
        crate::model::sequence_log_prob(s, &model, true).unwrap().per_position
    };
    let (m, w) = (ar(&v.mutant), ar(&wt()));
    // Every covered position and EOS contribute alpha * r only; r cancels at
    // unmutated covered positions, and the mutated position keeps its AR term.
    assert!((fused - (m[4] - w[4])).abs() < 1e-12);
}

#[test]
fn pair_table_matches_exhaustive_oracle() {
    let model = PairTableModel::random(3);
    let wt = ProteinSequence::new("wt", "KL").unwrap();
    let o = ScoreOptions { alpha: 0.0, bidirectional: false, ..ScoreOptions::default() };
    let mut checked = 0;
    for &a in STANDARD_AMINO_ACIDS.iter() {
        for &b in STANDARD_AMINO_ACIDS.iter() {
            let mut edits = Vec::new();
            if a != b'K' {
                edits.push(format!("K1{}", a as char));
            }
            if b != b'L' {
                edits.push(format!("L2{}", b as char));
            }
            let code = if edits.is_empty() { "K1K".to_string() } else { edits.join(":") };
            let v = Variant::new(&parse_mutation(&code, &wt).unwrap(), &wt).unwrap();
            let f = fitness_ratio(&model, &wt, &v, None, &o, Direction::Forward).unwrap().f;
            let oracle = model.log_joint(&v.mutant) - model.log_joint(&wt);
            assert!((f - oracle).abs() < 1e-12, "{code}: {f} vs {oracle}");

            let r = fitness_ratio(&model, &wt, &v, None, &o, Direction::Reverse).unwrap().f;
            let oracle_r = model.log_joint(&seq::mirror(&v.mutant)) - model.log_joint(&seq::mirror(&wt));
            assert!((r - oracle_r).abs() < 1e-12);
            checked += 1;
        }
    }
    assert_eq!(checked, 400);
}

fn request(codes: &[&str], retrieval: Option<RetrievalProfile>, options: ScoreOptions) -> ScoreRequest {
    ScoreRequest {
        wild_type: wt(),
        mutants: codes.iter().map(|c| parse_mutation(c, &wt()).unwrap()).collect(),
        retrieval,
        options,
    }
}

#[test]
fn batch_scoring_matches_single_ratios() {
    let model = tiny_model();
    let p = profile();
    let codes = ["K2A", "A4W:Q9E", "del3-4", "ins7:GG", "M1M", "Q22K"];
    let recs = score_bidirectional(&request(&codes, Some(p.clone()), opts(0.6)), &model).unwrap();
    assert_eq!(recs.len(), codes.len());
    for (r, code) in recs.iter().zip(codes) {
        assert_eq!(r.mutant, code);
        let v = variant(code);
        let fwd = fitness_ratio(&model, &wt(), &v, Some(&p), &opts(0.6), Direction::Forward).unwrap();
        let rev = fitness_ratio(&model, &wt(), &v, Some(&p), &opts(0.6), Direction::Reverse).unwrap();
        assert_eq!(r.f_forward, fwd.f);
        assert_eq!(r.f_reverse, Some(rev.f));
        assert_eq!(r.f, (fwd.f + rev.f) / 2.0);
        assert_eq!(r.window, fwd.mutant_window);
    }
    assert_eq!(recs[4].f_forward, 0.0);
    assert_eq!(recs[4].f_reverse, Some(0.0));
}

#[test]
fn unidirectional_uses_forward_only() {
    let model = tiny_model();
    let o = ScoreOptions { bidirectional: false, ..opts(0.6) };
    let recs = score_bidirectional(&request(&["K2A", "F14P"], None, o), &model).unwrap();
    for r in recs {
        assert_eq!(r.f, r.f_forward);
        assert_eq!(r.f_reverse, None);
    }
}

#[test]
fn long_sequences_are_windowed_per_direction() {
    let model = tiny_model();
    let long: String = (0..80).map(|i| STANDARD_AMINO_ACIDS[(i * 7) % 20] as char).collect();
    let wt = ProteinSequence::new("wt", &long).unwrap();
    let code = format!("{}70A", long.as_bytes()[69] as char);
    let m = parse_mutation(&code, &wt).unwrap();
    let v = Variant::new(&m, &wt).unwrap();
    let o = opts(0.0);
    let fwd = fitness_ratio(&model, &wt, &v, None, &o, Direction::Forward).unwrap();
    assert_eq!(fwd.mutant_window, (51, 80));
    let rev = fitness_ratio(&model, &wt, &v, None, &o, Direction::Reverse).unwrap();
    // Mirrored position 11 sits near the start of the mirrored sequence.
    assert_eq!(rev.mutant_window, (1, 30));
    let req = ScoreRequest { wild_type: wt.clone(), mutants: vec![m], retrieval: None, options: o };
    let recs = score_bidirectional(&req, &model).unwrap();
    assert_eq!(recs[0].f_forward, fwd.f);
    assert_eq!(recs[0].f_reverse, Some(rev.f));
}

#[test]
fn scoring_is_deterministic_across_thread_counts() {
    let model = tiny_model();
    let codes = ["K2A", "A4W:Q9E", "del3-4", "ins7:GG", "F14P", "S13L"];
    let req = request(&codes, Some(profile()), opts(0.6));
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| score_bidirectional(&req, &model).unwrap());
    let b = four.install(|| score_bidirectional(&req, &model).unwrap());
    assert_eq!(a, b);
}

#[test]
fn request_validation() {
    let model = tiny_model();
    let bad_alpha = request(&["K2A"], None, opts(1.5));
    assert!(matches!(score_bidirectional(&bad_alpha, &model), Err(ScoreError::InvalidAlpha(_))));
    let other = ProteinSequence::new("o", "MKT").unwrap();
    let req = ScoreRequest {
        wild_type: wt(),
        mutants: vec![parse_mutation("K2A", &other).unwrap()],
        retrieval: None,
        options: opts(0.6),
    };
    assert!(matches!(score_bidirectional(&req, &model), Err(ScoreError::WildTypeMismatch { .. })));
}

fn row(m: &str, f: f64, fr: Option<f64>) -> ScoreRow {
    ScoreRow { mutant: m.into(), f, f_forward: f, f_reverse: fr, window: Some((1, 10)), sources: vec![] }
}

#[test]
fn ensemble_examples() {
    let a = vec![row("A1C", 0.5, Some(0.25)), row("D2E", -1.5, Some(1.0))];
    let single = ensemble_scores(&[("a".into(), a.clone())]).unwrap();
    for (x, y) in single.iter().zip(&a) {
        assert_eq!((x.f, x.f_forward, x.f_reverse, x.window), (y.f, y.f_forward, y.f_reverse, y.window));
    }
    let neg: Vec<ScoreRow> = a.iter().map(|r| row(&r.mutant, -r.f, r.f_reverse.map(|x| -x))).collect();
    let zero = ensemble_scores(&[("a".into(), a.clone()), ("b".into(), neg)]).unwrap();
    assert!(zero.iter().all(|r| r.f == 0.0 && r.f_reverse == Some(0.0)));
    assert_eq!(zero[0].sources, vec!["a", "b"]);

    let b = vec![row("D2E", 2.0, None), row("A1C", 1.0, None)];
    let c = vec![row("A1C", 3.0, Some(0.0)), row("D2E", 0.25, Some(0.0))];
    let three = ensemble_scores(&[("a".into(), a.clone()), ("b".into(), b), ("c".into(), c)]).unwrap();
    assert_eq!(three[0].mutant, "A1C");
    assert_eq!(three[0].f, (0.5 + 1.0 + 3.0) / 3.0);
    assert_eq!(three[1].f, (-1.5 + 2.0 + 0.25) / 3.0);
    assert_eq!(three[0].f_reverse, None);

    let missing = vec![row("A1C", 1.0, None)];
    assert!(matches!(ensemble_scores(&[("a".into(), a), ("m".into(), missing)]), Err(ScoreError::KeyMismatch(_))));
}

#[test]
fn score_csv_round_trip() {
    let rows = vec![
        ScoreRow { mutant: "A1C".into(), f: 0.1, f_forward: 0.30000000000000004, f_reverse: Some(-0.1), window: Some((1, 9)), sources: vec![] },
        ScoreRow { mutant: "D2E:F3G".into(), f: -2.5, f_forward: -2.5, f_reverse: None, window: Some((2, 10)), sources: vec![] },
    ];
    let mut out = Vec::new();
    write_scores(&mut out, &rows).unwrap();
    let text = String::from_utf8(out.clone()).unwrap();
    assert!(text.starts_with("mutant,F,F_forward,F_reverse,window_start,window_end\n"));
    assert!(text.contains("D2E:F3G,-2.5,-2.5,,2,10\n"));
    assert_eq!(read_scores(&out).unwrap(), rows);

    let ens = ensemble_scores(&[("x.csv".into(), rows.clone()), ("y.csv".into(), rows)]).unwrap();
    let mut out = Vec::new();
    write_scores(&mut out, &ens).unwrap();
    assert!(String::from_utf8(out.clone()).unwrap().lines().next().unwrap().ends_with(",sources"));
    assert_eq!(read_scores(&out).unwrap(), ens);
}

#[test]
fn exact_sum_examples() {
    assert_eq!(exact_sum(&[]), 0.0);
    assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
    assert_eq!(exact_sum(&[0.1; 10]), 1.0);
    assert_eq!(exact_sum(&[1.0, 1e-16, 1e-16]), 1.0000000000000002);
    assert!(exact_sum(&[1.0, f64::NEG_INFINITY]).is_infinite());
}

proptest! {
    #[test]
    fn exact_sum_ignores_order(mut terms in proptest::collection::vec(-1e3f64..1e3, 0..60), seed: u64) {
        let a = exact_sum(&terms);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(terms.as_mut_slice(), &mut rng);
        prop_assert_eq!(a.to_bits(), exact_sum(&terms).to_bits());
    }
}

#[test]
fn tied_profiles_give_tied_scores() {
    // A seed-only alignment scores every single substitution identically at alpha = 1.
    let model = tiny_model();
    let msa = parse_a2m(format!(">wt\n{WT}\n").as_bytes()).unwrap();
    let p = build_profile(&msa, &sequence_weights(&msa, 0.2), DEFAULT_LAMBDA).unwrap();
    let codes = ["M1A", "K2A", "Y5W", "F14P", "Q22K"];
    let recs = score_bidirectional(&request(&codes, Some(p), opts(1.0)), &model).unwrap();
    assert!(recs.iter().all(|r| r.f.to_bits() == recs[0].f.to_bits()));
}
