use std::io::Write;

use super::{Msa, RetrievalError, SequenceWeights};
use crate::seq::{residue_index, MutationSet, ProteinSequence, STANDARD_AMINO_ACIDS};

pub const DEFAULT_LAMBDA: f64 = 1e-5;
pub const PROFILE_HEADER: &str = "# tranception-profile v1";

/// Smoothed log-probabilities per seed position. `None` marks positions
/// with no residue in the alignment (or no match column at all).
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalProfile {
    pub seed_id: String,
    pub seed: ProteinSequence,
    pub lambda: f64,
    pub theta: f64,
    pub n_eff: f64,
    pub columns: Vec<Option<[f64; 20]>>,
}

impl RetrievalProfile {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    /// Whether the 0-based seed position has a distribution.
    pub fn is_covered(&self, position: usize) -> bool {
        self.columns.get(position).is_some_and(Option::is_some)
    }

    /// `log P_R(residue)` at a 0-based seed position.
    pub fn log_prob(&self, position: usize, residue: u8) -> Option<f64> {
        let col = self.columns.get(position)?.as_ref()?;
        Some(col[residue_index(residue)?])
    }

    pub fn n_covered(&self) -> usize {
        self.columns.iter().filter(|c| c.is_some()).count()
    }
}

/// `(c_a + lambda) / (sum_b c_b + 20 lambda)` as natural logs.
pub fn column_distribution(counts: &[f64; 20], lambda: f64) -> [f64; 20] {
    let total: f64 = counts.iter().sum::<f64>() + 20.0 * lambda;
    counts.map(|c| ((c + lambda) / total).ln())
}

/// Weighted, smoothed per-column frequencies. Gaps and non-standard
/// residues are left out of both numerator and denominator; a column with
/// no standard residue is uncovered.
pub fn build_profile(msa: &Msa, weights: &SequenceWeights, lambda: f64) -> Result<RetrievalProfile, RetrievalError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RetrievalError::InvalidLambda(lambda));
    }
    let mut counts = vec![[0.0f64; 20]; msa.n_cols()];
    let mut seen = vec![false; msa.n_cols()];
    for (row, &w) in msa.rows().iter().zip(&weights.weights) {
        for (j, &b) in row.states.iter().enumerate() {
            if let Some(a) = residue_index(b) {
                counts[j][a] += w;
                seen[j] = true;
            }
        }
    }
    let column: Vec<Option<[f64; 20]>> =
        counts.iter().zip(&seen).map(|(c, &s)| s.then(|| column_distribution(c, lambda))).collect();
    let columns = msa.position_columns().iter().map(|pc| pc.and_then(|j| column[j])).collect();
    Ok(RetrievalProfile {
        seed_id: msa.seed_id().to_string(),
        seed: msa.seed().clone(),
        lambda,
        theta: weights.theta,
        n_eff: weights.n_eff,
        columns,
    })
}

/// `log P_R` of each residue of `seq`, where `mapping[k]` is the 0-based
/// seed position of residue `k` (`None` for inserted residues). Unmapped,
/// uncovered and non-standard positions yield `None`.
pub fn retrieval_log_probs(
    seq: &ProteinSequence,
    mapping: &[Option<usize>],
    profile: &RetrievalProfile,
) -> Result<Vec<Option<f64>>, RetrievalError> {
    if mapping.len() != seq.len() {
        return Err(RetrievalError::MappingLength { expected: seq.len(), found: mapping.len() });
    }
    seq.residues()
        .iter()
        .zip(mapping)
        .map(|(&r, m)| match *m {
            None => Ok(None),
            Some(p) if p >= profile.len() => Err(RetrievalError::MappingOutOfRange { position: p, len: profile.len() }),
            Some(p) => Ok(profile.log_prob(p, r)),
        })
        .collect()
}

/// Maps each mutant position to its surviving seed position: deleted seed
/// positions drop out and inserted residues map to nothing (uncovered).
pub fn surgery_for_indels(profile: &RetrievalProfile, mutation: &MutationSet) -> Result<Vec<Option<usize>>, RetrievalError> {
    let wt = mutation.wild_type().len();
    if wt != profile.len() {
        return Err(RetrievalError::SeedMismatch { wt, seed: profile.len() });
    }
    Ok(mutation.position_map())
}

/// Versioned text table: header comment, metadata comments, then CSV
/// `position,covered,logp_A..logp_Y` with 1-based positions and empty
/// fields at uncovered positions.
pub fn write_profile<W: Write>(mut out: W, p: &RetrievalProfile) -> std::io::Result<()> {
    writeln!(out, "{PROFILE_HEADER}")?;
    writeln!(out, "# seed_id={}", p.seed_id)?;
    writeln!(out, "# seed={}", p.seed.as_str())?;
    writeln!(out, "# lambda={}", p.lambda)?;
    writeln!(out, "# theta={}", p.theta)?;
    writeln!(out, "# n_eff={}", p.n_eff)?;
    write!(out, "position,covered")?;
    for &a in STANDARD_AMINO_ACIDS.iter() {
        write!(out, ",logp_{}", a as char)?;
    }
    writeln!(out)?;
    for (i, col) in p.columns.iter().enumerate() {
        write!(out, "{},{}", i + 1, u8::from(col.is_some()))?;
        match col {
            Some(c) => c.iter().try_for_each(|x| write!(out, ",{x}"))?,
            None => (0..20).try_for_each(|_| write!(out, ","))?,
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_profile(text: &str) -> Result<RetrievalProfile, RetrievalError> {
    let fail = |line: usize, reason: &str| RetrievalError::ProfileFormat { line, reason: reason.to_string() };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    match lines.next() {
        Some((_, l)) if l == PROFILE_HEADER => {}
        _ => return Err(fail(1, "missing profile header")),
    }
    let mut meta = std::collections::HashMap::new();
    let mut columns = Vec::new();
    let mut saw_table_header = false;
    for (n, line) in lines {
        if let Some(kv) = line.strip_prefix("# ") {
            let (k, v) = kv.split_once('=').ok_or_else(|| fail(n, "malformed metadata"))?;
            meta.insert(k.to_string(), (n, v.to_string()));
            continue;
        }
        if !saw_table_header {
            if !line.starts_with("position,covered,logp_A") {
                return Err(fail(n, "missing column header"));
            }
            saw_table_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 22 {
            return Err(fail(n, "expected 22 fields"));
        }
        if fields[0].parse::<usize>().ok() != Some(columns.len() + 1) {
            return Err(fail(n, "positions must be consecutive from 1"));
        }
        match fields[1] {
            "0" => columns.push(None),
            "1" => {
                let mut col = [0.0; 20];
                for (c, f) in col.iter_mut().zip(&fields[2..]) {
                    *c = f.parse().map_err(|_| fail(n, "bad log-probability"))?;
                }
                columns.push(Some(col));
            }
            _ => return Err(fail(n, "covered must be 0 or 1")),
        }
    }
    let get = |k: &str| meta.get(k).ok_or_else(|| fail(0, &format!("missing metadata {k}")));
    let num = |k: &str| -> Result<f64, RetrievalError> {
        let (n, v) = get(k)?;
        v.parse().map_err(|_| fail(*n, &format!("bad {k}")))
    };
    let lambda = num("lambda")?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(RetrievalError::InvalidLambda(lambda));
    }
    let seed_id = get("seed_id")?.1.clone();
    let seed = ProteinSequence::new(seed_id.clone(), get("seed")?.1.as_bytes())?;
    if seed.len() != columns.len() {
        return Err(fail(0, "seed length does not match the number of positions"));
    }
    Ok(RetrievalProfile { seed_id, seed, lambda, theta: num("theta")?, n_eff: num("n_eff")?, columns })
}
