use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use tranception_core::bench::{self, BenchInput};
use tranception_core::model::{decode_checkpoint, encode_checkpoint, Checkpoint, ModelConfig, TranceptionModel};
use tranception_core::retrieval::{
    build_profile as build_retrieval_profile, filter_by_similarity, parse_a2m, read_profile, sequence_weights,
    write_a2m, write_profile, RetrievalError,
};
use tranception_core::score::{ensemble_scores, read_scores, score_bidirectional, write_scores, ScoreOptions, ScoreRequest, ScoreRow, UncoveredWeight};
use tranception_core::seq::{impute_indeterminates, parse_fasta, parse_mutation, SeqError};
use tranception_core::train::{self as trainer, TrainConfig, TrainError};

use crate::error::{CliError, CliResult};
use crate::manifest::{manifest_path_for, Run};
use crate::{BenchmarkArgs, BuildProfileArgs, EnsembleArgs, FilterMsaArgs, GlobalOptions, ScoreArgs, TrainArgs, UncoveredArg};

/// What a successful command body hands back for its manifest.
struct Finished {
    manifest: PathBuf,
    config: serde_json::Value,
    seed: Option<u64>,
}

fn execute(name: &str, opts: &GlobalOptions, body: impl FnOnce(&mut Run) -> CliResult<Finished>) -> CliResult<()> {
    let mut run = Run::new(name);
    match body(&mut run) {
        Ok(f) => run.finish(&f.manifest, f.config, f.seed, opts),
        Err(e) => {
            run.rollback();
            Err(e)
        }
    }
}

fn invalid(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::validation(Some(path), e)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

/// Training configuration file: both tables optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFile {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

pub fn train(a: &TrainArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("train", opts, |run| {
        let text = run.read_text(&a.config)?;
        let file: TrainFile = toml::from_str(&text).map_err(|e| invalid(&a.config, e))?;
        file.model.validate().map_err(|e| invalid(&a.config, e))?;
        file.train.validate().map_err(|e| invalid(&a.config, e))?;
        let corpus = parse_fasta(&run.read(&a.corpus)?).map_err(|e| invalid(&a.corpus, e))?;
        if corpus.is_empty() {
            return Err(invalid(&a.corpus, "corpus has no sequences"));
        }
        run.ensure_dir(&a.out_dir)?;
        let model = TranceptionModel::new(file.model.clone()).map_err(|e| invalid(&a.config, e))?;
        let ckpt_dir = (file.train.checkpoint_every > 0).then(|| a.out_dir.join("checkpoints"));
        if let Some(d) = &ckpt_dir {
            run.ensure_dir(d)?;
        }
        let outcome = trainer::train(corpus, model, &file.train, ckpt_dir.as_deref()).map_err(|e| match e {
            TrainError::EmptyCorpus | TrainError::Config(_) | TrainError::Seq(_) => invalid(&a.corpus, e),
            other => CliError::runtime(None, other),
        });
        let outcome = outcome?;
        for p in &outcome.checkpoints {
            run.adopt_output(p)?;
        }
        let final_ckpt = Checkpoint { model: outcome.model, step: file.train.steps, metadata: file.train.to_toml() };
        run.write(&a.out_dir.join("model.ckpt"), &encode_checkpoint(&final_ckpt))?;
        let mut trace = Vec::new();
        outcome.trace.write_csv(&mut trace).map_err(|e| CliError::runtime(None, e))?;
        run.write(&a.out_dir.join("loss_trace.csv"), &trace)?;
        let resolved = toml::to_string(&file).map_err(|e| CliError::runtime(None, e))?;
        run.write(&a.out_dir.join("config.toml"), resolved.as_bytes())?;
        Ok(Finished {
            manifest: a.out_dir.join("manifest.json"),
            config: json!({
                "model": file.model,
                "train": file.train,
                "corpus": path_str(&a.corpus),
                "out_dir": path_str(&a.out_dir),
                "train_sequences": outcome.train_ids.len(),
                "validation_sequences": outcome.validation_ids.len(),
                "validation_loss": outcome.validation_loss,
            }),
            seed: Some(file.train.seed),
        })
    })
}

fn parse_msa(path: &Path, bytes: &[u8]) -> CliResult<tranception_core::retrieval::Msa> {
    parse_a2m(bytes).map_err(|e| invalid(path, e))
}

pub fn build_profile(a: &BuildProfileArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("build-profile", opts, |run| {
        if !(0.0..=1.0).contains(&a.theta) {
            return Err(CliError::validation(None, format!("--theta must lie in [0, 1], got {}", a.theta)));
        }
        let msa = parse_msa(&a.msa, &run.read(&a.msa)?)?;
        let weights = sequence_weights(&msa, a.theta);
        let profile = build_retrieval_profile(&msa, &weights, a.lambda).map_err(|e| match e {
            RetrievalError::InvalidLambda(_) => CliError::validation(None, format!("--lambda: {e}")),
            other => invalid(&a.msa, other),
        })?;
        let mut out = Vec::new();
        write_profile(&mut out, &profile).map_err(|e| CliError::runtime(Some(&a.out), e))?;
        run.write(&a.out, &out)?;
        Ok(Finished {
            manifest: manifest_path_for(&a.out),
            config: json!({
                "msa": path_str(&a.msa),
                "theta": a.theta,
                "lambda": a.lambda,
                "out": path_str(&a.out),
                "rows": msa.n_rows(),
                "n_eff": profile.n_eff,
                "covered_positions": profile.n_covered(),
                "positions": profile.len(),
            }),
            seed: None,
        })
    })
}

/// Mutant codes from the `mutant` column with their line numbers.
fn read_mutant_codes(path: &Path, bytes: &[u8]) -> CliResult<Vec<(u64, String)>> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers().map_err(|e| invalid(path, e))?.clone();
    let col = header.iter().position(|h| h.trim() == "mutant").ok_or_else(|| invalid(path, "missing column mutant"))?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| invalid(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        out.push((line, rec.get(col).unwrap_or("").trim().to_string()));
    }
    if out.is_empty() {
        return Err(invalid(path, "no mutants"));
    }
    Ok(out)
}

pub fn score(a: &ScoreArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("score", opts, |run| {
        if !(0.0..=1.0).contains(&a.alpha) {
            return Err(CliError::validation(None, format!("--alpha must lie in [0, 1], got {}", a.alpha)));
        }
        if a.window_len == Some(0) {
            return Err(CliError::validation(None, "--window-len must be at least 1"));
        }
        let ckpt = decode_checkpoint(&run.read(&a.checkpoint)?).map_err(|e| invalid(&a.checkpoint, e))?;
        let records = parse_fasta(&run.read(&a.wild_type)?).map_err(|e| invalid(&a.wild_type, e))?;
        let wt = records.into_iter().next().ok_or_else(|| invalid(&a.wild_type, "no sequence records"))?;
        let scored_wt = if wt.has_indeterminates() || wt.has_excluded() {
            let mut rng = ChaCha8Rng::seed_from_u64(a.impute_seed);
            impute_indeterminates(&wt, &mut rng).map_err(|e| invalid(&a.wild_type, e))?
        } else {
            wt.clone()
        };
        let codes = read_mutant_codes(&a.mutants, &run.read(&a.mutants)?)?;
        let mutants = codes
            .iter()
            .map(|(line, code)| {
                parse_mutation(code, &wt).map_err(|e: SeqError| invalid(&a.mutants, format!("line {line}: {e}")))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let retrieval = match &a.profile {
            None => None,
            Some(p) => {
                let profile = read_profile(&run.read_text(p)?).map_err(|e| invalid(p, e))?;
                if profile.len() != wt.len() {
                    return Err(invalid(
                        p,
                        format!("profile seed has length {} but the wild type has length {}", profile.len(), wt.len()),
                    ));
                }
                if profile.seed.residues() != wt.residues() {
                    log::warn!("profile seed differs from the wild type; scoring by position");
                }
                Some(profile)
            }
        };
        let options = ScoreOptions {
            alpha: a.alpha,
            bidirectional: !a.unidirectional,
            uncovered: match a.uncovered {
                UncoveredArg::Full => UncoveredWeight::Full,
                UncoveredArg::OneMinusAlpha => UncoveredWeight::OneMinusAlpha,
            },
            window_len: a.window_len,
        };
        let req = ScoreRequest { wild_type: scored_wt.clone(), mutants, retrieval, options };
        let records = score_bidirectional(&req, &ckpt.model).map_err(|e| invalid(&a.mutants, e))?;
        let rows: Vec<ScoreRow> = records.iter().map(ScoreRow::from).collect();
        let mut out = Vec::new();
        write_scores(&mut out, &rows).map_err(|e| CliError::runtime(Some(&a.out), e))?;
        run.write(&a.out, &out)?;
        Ok(Finished {
            manifest: manifest_path_for(&a.out),
            config: json!({
                "checkpoint": path_str(&a.checkpoint),
                "checkpoint_step": ckpt.step,
                "wild_type": path_str(&a.wild_type),
                "wild_type_imputed": scored_wt.residues() != wt.residues(),
                "mutants": path_str(&a.mutants),
                "profile": a.profile.as_deref().map(path_str),
                "alpha": a.alpha,
                "bidirectional": !a.unidirectional,
                "uncovered": format!("{:?}", a.uncovered),
                "window_len": a.window_len.unwrap_or(ckpt.model.max_context().saturating_sub(2)),
                "out": path_str(&a.out),
                "scored": rows.len(),
            }),
            seed: Some(a.impute_seed),
        })
    })
}

pub fn benchmark(a: &BenchmarkArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("benchmark", opts, |run| {
        let reference = bench::read_reference(&run.read(&a.reference)?, &path_str(&a.reference))
            .map_err(|e| invalid(&a.reference, e))?;
        if reference.is_empty() {
            return Err(invalid(&a.reference, "reference table lists no assays"));
        }
        let mut inputs = Vec::with_capacity(reference.len());
        let mut prep = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| CliError::runtime(None, e);
        prep.write_record(["assay_id", "input_rows", "silent_removed", "duplicates_merged", "missing_dropped", "parse_errors"])
            .map_err(csv_err)?;
        for meta in &reference {
            let assay_path = a.assays_dir.join(format!("{}.csv", meta.assay_id));
            let raw = bench::read_assay_csv(&run.read(&assay_path)?, &path_str(&assay_path)).map_err(|e| invalid(&assay_path, e))?;
            let (table, summary) = bench::preprocess_assay(&meta.assay_id, &raw, meta.target_seq.as_ref());
            for (line, msg) in &summary.errors {
                log::warn!("{}: line {line}: {msg}", assay_path.display());
            }
            prep.write_record([
                meta.assay_id.clone(),
                summary.input_rows.to_string(),
                summary.silent_removed.to_string(),
                summary.duplicates_merged.to_string(),
                summary.missing_dropped.to_string(),
                summary.errors.len().to_string(),
            ])
            .map_err(csv_err)?;
            let score_path = a.scores_dir.join(format!("{}.csv", meta.assay_id));
            let scores = read_scores(&run.read(&score_path)?).map_err(|e| invalid(&score_path, e))?;
            inputs.push(BenchInput { table, scores });
        }
        let report = bench::run_benchmark(&inputs, &reference).map_err(|e| match &e {
            bench::BenchError::MissingScores { assay, .. } => {
                invalid(&a.scores_dir.join(format!("{assay}.csv")), &e)
            }
            _ => invalid(&a.reference, &e),
        })?;
        run.ensure_dir(&a.out_dir)?;
        let prep = prep.into_inner().map_err(|e| CliError::runtime(None, e.to_string()))?;
        run.write(&a.out_dir.join("preprocessing.csv"), &prep)?;
        let mut per = Vec::new();
        bench::write_per_assay(&mut per, &report).map_err(|e| CliError::runtime(None, e))?;
        run.write(&a.out_dir.join("per_assay.csv"), &per)?;
        let mut agg = Vec::new();
        bench::write_aggregates(&mut agg, &report).map_err(|e| CliError::runtime(None, e))?;
        run.write(&a.out_dir.join("summary.csv"), &agg)?;
        run.write(&a.out_dir.join("report.txt"), bench::format_table(&report).as_bytes())?;
        Ok(Finished {
            manifest: a.out_dir.join("manifest.json"),
            config: json!({
                "scores_dir": path_str(&a.scores_dir),
                "assays_dir": path_str(&a.assays_dir),
                "reference": path_str(&a.reference),
                "out_dir": path_str(&a.out_dir),
                "assays": reference.len(),
            }),
            seed: None,
        })
    })
}

pub fn filter_msa(a: &FilterMsaArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("filter-msa", opts, |run| {
        let msa = parse_msa(&a.msa, &run.read(&a.msa)?)?;
        let kept = filter_by_similarity(&msa, a.min_identity)
            .map_err(|e| CliError::validation(None, format!("--min-identity: {e}")))?;
        let mut out = Vec::new();
        write_a2m(&mut out, &kept).map_err(|e| CliError::runtime(Some(&a.out), e))?;
        run.write(&a.out, &out)?;
        Ok(Finished {
            manifest: manifest_path_for(&a.out),
            config: json!({
                "msa": path_str(&a.msa),
                "min_identity": a.min_identity,
                "out": path_str(&a.out),
                "rows_in": msa.n_rows(),
                "rows_kept": kept.n_rows(),
            }),
            seed: None,
        })
    })
}

pub fn ensemble(a: &EnsembleArgs, opts: &GlobalOptions) -> CliResult<()> {
    execute("ensemble", opts, |run| {
        let mut tables = Vec::with_capacity(a.inputs.len());
        for p in &a.inputs {
            let rows = read_scores(&run.read(p)?).map_err(|e| invalid(p, e))?;
            let name = p.file_name().map_or_else(|| path_str(p), |n| n.to_string_lossy().into_owned());
            tables.push((name, rows));
        }
        let rows = ensemble_scores(&tables).map_err(|e| CliError::validation(None, e))?;
        let mut out = Vec::new();
        write_scores(&mut out, &rows).map_err(|e| CliError::runtime(Some(&a.out), e))?;
        run.write(&a.out, &out)?;
        Ok(Finished {
            manifest: manifest_path_for(&a.out),
            config: json!({
                "inputs": a.inputs.iter().map(|p| path_str(p)).collect::<Vec<_>>(),
                "out": path_str(&a.out),
                "mutants": rows.len(),
            }),
            seed: None,
        })
    })
}
