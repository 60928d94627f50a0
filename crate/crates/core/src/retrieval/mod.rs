//! Alignment-derived retrieval: A2M parsing, sequence reweighting,
//! smoothed per-column profiles, similarity filtering and the column
//! bookkeeping needed to score indels.

mod profile;

use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::seq::{ProteinSequence, SeqError};

pub use profile::{
    build_profile, column_distribution, read_profile, retrieval_log_probs, surgery_for_indels, write_profile,
    RetrievalProfile, DEFAULT_LAMBDA, PROFILE_HEADER,
};

pub const DEFAULT_THETA: f64 = 0.2;

/// Slack for identity thresholds so that e.g. 8/10 passes a 0.8 cut.
const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("alignment has no records")]
    EmptyAlignment,
    #[error("line {line}: alignment data before the first header")]
    MissingHeader { line: usize },
    #[error("record {id}: illegal alignment character {ch:?}")]
    IllegalCharacter { id: String, ch: char },
    #[error("record {id}: {found} match states, expected {expected} as in the seed")]
    MatchLengthMismatch { id: String, expected: usize, found: usize },
    #[error("seed record {id} has no residues")]
    EmptySeed { id: String },
    #[error("position mapping has {found} entries for a sequence of length {expected}")]
    MappingLength { expected: usize, found: usize },
    #[error("mapped position {position} is outside the profile (length {len})")]
    MappingOutOfRange { position: usize, len: usize },
    #[error("wild type has length {wt} but the profile seed has length {seed}")]
    SeedMismatch { wt: usize, seed: usize },
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidLambda(f64),
    #[error("identity threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("profile line {line}: {reason}")]
    ProfileFormat { line: usize, reason: String },
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// One alignment record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MsaRow {
    pub id: String,
    /// The record exactly as aligned, insert states included.
    pub aligned: String,
    /// Match states at the seed's match columns: uppercase residues or `-`.
    pub states: Vec<u8>,
}

/// An alignment in the seed's coordinate system. Row 0 is the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Msa {
    seed: ProteinSequence,
    rows: Vec<MsaRow>,
    match_columns: Vec<usize>,
    position_columns: Vec<Option<usize>>,
}

fn is_match_state(b: u8) -> bool {
    b.is_ascii_uppercase() || b == b'-'
}

/// Parses A2M: FASTA-shaped records where uppercase letters and `-` are
/// match states and lowercase letters and `.` are insert states. The first
/// record is the seed.
pub fn parse_a2m(bytes: &[u8]) -> Result<Msa, RetrievalError> {
    let text = String::from_utf8_lossy(bytes);
    let mut records: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if let Some(header) = line.strip_prefix('>') {
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            records.push((id, String::new()));
        } else if !line.trim().is_empty() {
            let (_, seq) = records.last_mut().ok_or(RetrievalError::MissingHeader { line: n + 1 })?;
            seq.extend(line.chars().filter(|c| !c.is_whitespace()));
        }
    }
    let mut it = records.into_iter();
    let (seed_id, seed_aligned) = it.next().ok_or(RetrievalError::EmptyAlignment)?;
    for c in seed_aligned.chars() {
        if !(c.is_ascii_alphabetic() || c == '-' || c == '.') {
            return Err(RetrievalError::IllegalCharacter { id: seed_id, ch: c });
        }
    }

    // Seed residues in match states become profile columns; seed residues
    // in insert states stay unmapped.
    let mut match_columns = Vec::new();
    let mut kept_states = Vec::new();
    let mut position_columns = Vec::new();
    let mut seed_residues = Vec::new();
    let mut state_index = 0;
    for (col, b) in seed_aligned.bytes().enumerate() {
        if b.is_ascii_alphabetic() {
            seed_residues.push(b.to_ascii_uppercase());
            position_columns.push(b.is_ascii_uppercase().then_some(match_columns.len()));
        }
        if b.is_ascii_uppercase() {
            match_columns.push(col);
            kept_states.push(state_index);
        }
        if is_match_state(b) {
            state_index += 1;
        }
    }
    let n_states = state_index;
    if seed_residues.is_empty() {
        return Err(RetrievalError::EmptySeed { id: seed_id });
    }
    let seed = ProteinSequence::new(seed_id.clone(), &seed_residues)?;

    let mut rows = Vec::new();
    for (id, aligned) in std::iter::once((seed_id, seed_aligned)).chain(it) {
        let mut states = Vec::with_capacity(n_states);
        for c in aligned.chars() {
            if !(c.is_ascii_alphabetic() || c == '-' || c == '.') {
                return Err(RetrievalError::IllegalCharacter { id, ch: c });
            }
            if is_match_state(c as u8) {
                states.push(c as u8);
            }
        }
        if states.len() != n_states {
            return Err(RetrievalError::MatchLengthMismatch { id, expected: n_states, found: states.len() });
        }
        let states = kept_states.iter().map(|&i| states[i]).collect();
        rows.push(MsaRow { id, aligned, states });
    }
    Ok(Msa { seed, rows, match_columns, position_columns })
}

impl Msa {
    pub fn seed_id(&self) -> &str {
        &self.rows[0].id
    }

    /// The seed's residues with gaps removed.
    pub fn seed(&self) -> &ProteinSequence {
        &self.seed
    }

    pub fn rows(&self) -> &[MsaRow] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of profile columns (seed residues in match states).
    pub fn n_cols(&self) -> usize {
        self.match_columns.len()
    }

    /// Raw alignment column of each match column, in the seed record.
    pub fn match_columns(&self) -> &[usize] {
        &self.match_columns
    }

    /// Profile column for each 0-based seed position.
    pub fn position_columns(&self) -> &[Option<usize>] {
        &self.position_columns
    }

    /// Same alignment with a different row set; the seed row stays first.
    pub fn with_rows(&self, rows: Vec<MsaRow>) -> Msa {
        let mut all = vec![self.rows[0].clone()];
        all.extend(rows);
        Msa { rows: all, ..self.clone() }
    }

    /// Rows after the seed.
    pub fn homologs(&self) -> &[MsaRow] {
        &self.rows[1..]
    }
}

/// Fraction of match columns where both rows carry the same residue; gaps
/// never match.
pub fn identity(a: &[u8], b: &[u8]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y && **x != b'-').count();
    same as f64 / a.len() as f64
}

fn passes(identity: f64, threshold: f64) -> bool {
    identity >= threshold - IDENTITY_TOL
}

/// Per-row weights `1 / |{t : identity(s, t) >= 1 - theta}|`. Identical
/// rows always count as neighbors, even when gaps pull their identity
/// below the cut.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWeights {
    pub weights: Vec<f64>,
    pub theta: f64,
    pub n_eff: f64,
}

impl SequenceWeights {
    /// Every row weighted 1.
    pub fn uniform(n_rows: usize, theta: f64) -> Self {
        Self { weights: vec![1.0; n_rows], theta, n_eff: n_rows as f64 }
    }
}

pub fn sequence_weights(msa: &Msa, theta: f64) -> SequenceWeights {
    let rows = msa.rows();
    let cut = 1.0 - theta;
    let weights: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let neighbors = rows
                .iter()
                .enumerate()
                .filter(|&(j, t)| i == j || r.states == t.states || passes(identity(&r.states, &t.states), cut))
                .count();
            1.0 / neighbors as f64
        })
        .collect();
    let n_eff = weights.iter().sum();
    SequenceWeights { weights, theta, n_eff }
}

/// Keeps the seed plus rows at least `min_identity` identical to it.
pub fn filter_by_similarity(msa: &Msa, min_identity: f64) -> Result<Msa, RetrievalError> {
    if !(0.0..=1.0).contains(&min_identity) {
        return Err(RetrievalError::InvalidThreshold(min_identity));
    }
    let seed = &msa.rows[0].states;
    let kept = msa.homologs().iter().filter(|r| passes(identity(&r.states, seed), min_identity)).cloned().collect();
    Ok(msa.with_rows(kept))
}

/// Writes the records as A2M, one line per record body.
pub fn write_a2m<W: Write>(mut out: W, msa: &Msa) -> std::io::Result<()> {
    for r in msa.rows() {
        writeln!(out, ">{}", r.id)?;
        writeln!(out, "{}", r.aligned)?;
    }
    Ok(())
}
