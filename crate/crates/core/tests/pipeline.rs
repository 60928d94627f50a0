//! Library-level run of the whole pipeline on a synthetic landscape:
//! train, checkpoint, build a profile, score and benchmark.

use tranception_core::bench::{self, AssayMeta, BenchInput, RawAssayRow};
use tranception_core::model::{decode_checkpoint, encode_checkpoint, Checkpoint, ModelConfig, TranceptionModel};
use tranception_core::retrieval::{build_profile, parse_a2m, read_profile, sequence_weights, write_profile, DEFAULT_LAMBDA};
use tranception_core::score::{score_bidirectional, ScoreOptions, ScoreRequest, ScoreRow};
use tranception_core::seq::{parse_mutation, STANDARD_AMINO_ACIDS};
use tranception_core::synthetic::SiteLandscape;
use tranception_core::train::{train, TrainConfig};

#[test]
fn synthetic_landscape_end_to_end() {
    let land = SiteLandscape::random(12, 1.25, 21);
    let wt = land.wild_type();

    let cfg = ModelConfig { n_layers: 1, n_heads: 4, d_model: 16, d_ff: 32, max_context: 14, seed: 1, ..ModelConfig::default() };
    let tcfg = TrainConfig { steps: 60, batch_size: 16, warmup_steps: 10, seed: 1, ..TrainConfig::default() };
    let out = train(land.sample(400, 2), TranceptionModel::new(cfg).unwrap(), &tcfg, None).unwrap();
    let bytes = encode_checkpoint(&Checkpoint { model: out.model.clone(), step: 60, metadata: String::new() });
    let model = decode_checkpoint(&bytes).unwrap().model;
    assert_eq!(model, out.model);

    let msa = parse_a2m(land.sample_a2m(300, 3).as_bytes()).unwrap();
    let profile = build_profile(&msa, &sequence_weights(&msa, 0.2), DEFAULT_LAMBDA).unwrap();
    let mut text = Vec::new();
    write_profile(&mut text, &profile).unwrap();
    let profile = read_profile(std::str::from_utf8(&text).unwrap()).unwrap();

    let mut codes = Vec::new();
    let mut truth = Vec::new();
    for (i, &r) in wt.residues().iter().enumerate() {
        for &a in STANDARD_AMINO_ACIDS.iter().filter(|&&a| a != r) {
            codes.push(format!("{}{}{}", r as char, i + 1, a as char));
            truth.push(land.log_ratio(i, r, a));
        }
    }
    let mutants = codes.iter().map(|c| parse_mutation(c, &wt).unwrap()).collect();
    let req = ScoreRequest { wild_type: wt.clone(), mutants, retrieval: Some(profile), options: ScoreOptions::default() };
    let rows: Vec<ScoreRow> = score_bidirectional(&req, &model).unwrap().iter().map(ScoreRow::from).collect();

    let raw: Vec<RawAssayRow> = codes
        .iter()
        .zip(&truth)
        .enumerate()
        .map(|(i, (c, &t))| RawAssayRow { line: i as u64 + 2, mutant: c.clone(), dms_score: Some(t) })
        .collect();
    let (table, summary) = bench::preprocess_assay("SYN", &raw, Some(&wt));
    assert_eq!(summary.input_rows, codes.len());
    let meta = AssayMeta {
        assay_id: "SYN".into(),
        uniprot_id: "SYN_P".into(),
        cutoff: None,
        cutoff_method: None,
        msa_depth_bucket: "High".into(),
        mutation_depth_bucket: "Single".into(),
        taxon: "Synthetic".into(),
        target_seq: Some(wt),
    };
    let report = bench::run_benchmark(&[BenchInput { table, scores: rows }], &[meta]).unwrap();
    let overall = report.overall();
    assert_eq!(overall.n_assays, 1);
    assert!(overall.spearman.mean.unwrap() > 0.8, "{:?}", overall.spearman);
    assert!(overall.auc.mean.unwrap() > 0.8);
}
