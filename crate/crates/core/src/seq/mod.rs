//! Protein sequences: alphabet, FASTA input, tokenization, imputation,
//! mirroring, mutation codes and training-set filtering.

pub mod alphabet;
mod fasta;
mod filter;
mod mutation;

use std::fmt;

use rand::Rng;
use thiserror::Error;

pub use alphabet::{residue_index, AminoAcidVocab, TokenId, BOS, EOS, PAD, STANDARD_AMINO_ACIDS, VOCAB_SIZE};
pub use fasta::{parse_fasta, write_fasta};
pub use filter::{filter_training_sequences, write_rejection_report, FilterReport, RejectReason};
pub use mutation::{parse_mutation, Deletion, Insertion, MutationSet, Substitution};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeqError {
    #[error("record '{id}': empty sequence")]
    EmptyRecord { id: String },
    #[error("record '{id}': illegal character {ch:?} at offset {offset}")]
    IllegalCharacter { id: String, offset: usize, ch: char },
    #[error("line {line}: sequence data before the first '>' header")]
    MissingHeader { line: usize },
    #[error("sequence '{id}': residue {residue:?} at offset {offset} must be filtered before this step")]
    ExcludedResidue { id: String, offset: usize, residue: char },
    #[error("sequence '{id}': indeterminate residue {residue:?} at offset {offset} must be imputed before tokenization")]
    Indeterminate { id: String, offset: usize, residue: char },
    #[error("cannot tokenize an empty sequence")]
    Empty,
    #[error("token {token} at index {index} is not valid here")]
    InvalidToken { index: usize, token: TokenId },
    #[error("mutation '{code}': {reason}")]
    Mutation { code: String, reason: String },
    #[error("I/O error: {0}")]
    Io(String),
}

/// Where a sequence came from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SequenceSource {
    #[default]
    Unknown,
    Fasta,
    Mutant { parent: String },
    Imputed { seed: u64 },
    Mirrored,
    Synthetic,
}

/// Identifier plus residues over the standard alphabet and the ambiguity
/// codes (and O/U until filtering removes them). Residues are upper-case ASCII.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProteinSequence {
    id: String,
    residues: Vec<u8>,
    source: SequenceSource,
}

impl ProteinSequence {
    /// Builds a sequence, upper-casing letters and rejecting anything outside
    /// the 20 standard residues, `XBJZ` and `OU`.
    pub fn new(id: impl Into<String>, residues: impl AsRef<[u8]>) -> Result<Self, SeqError> {
        let id = id.into();
        let raw = residues.as_ref();
        if raw.is_empty() {
            return Err(SeqError::EmptyRecord { id });
        }
        let mut out = Vec::with_capacity(raw.len());
        for (offset, &b) in raw.iter().enumerate() {
            let up = b.to_ascii_uppercase();
            if alphabet::is_standard(up) || alphabet::is_indeterminate(up) || alphabet::is_excluded(up) {
                out.push(up);
            } else {
                return Err(SeqError::IllegalCharacter { id, offset, ch: b as char });
            }
        }
        Ok(Self { id, residues: out, source: SequenceSource::Unknown })
    }

    pub fn with_source(mut self, source: SequenceSource) -> Self {
        self.source = source;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn residues(&self) -> &[u8] {
        &self.residues
    }

    pub fn as_str(&self) -> &str {
        // residues are always ASCII letters
        std::str::from_utf8(&self.residues).expect("ASCII residues")
    }

    pub fn source(&self) -> &SequenceSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn has_indeterminates(&self) -> bool {
        self.residues.iter().any(|&r| alphabet::is_indeterminate(r))
    }

    pub fn has_excluded(&self) -> bool {
        self.residues.iter().any(|&r| alphabet::is_excluded(r))
    }

    /// Contiguous sub-sequence `[start, end)` (0-based), keeping the id.
    pub fn slice(&self, start: usize, end: usize) -> ProteinSequence {
        ProteinSequence {
            id: self.id.clone(),
            residues: self.residues[start..end].to_vec(),
            source: self.source.clone(),
        }
    }

    pub(crate) fn from_parts(id: String, residues: Vec<u8>, source: SequenceSource) -> Self {
        Self { id, residues, source }
    }
}

impl fmt::Display for ProteinSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `BOS` + one id per residue + `EOS`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    ids: Vec<TokenId>,
}

impl TokenSeq {
    /// Wraps raw ids after checking the `BOS ... EOS` framing.
    pub fn from_ids(ids: Vec<TokenId>) -> Result<Self, SeqError> {
        if ids.len() < 3 {
            return Err(SeqError::Empty);
        }
        if ids[0] != BOS {
            return Err(SeqError::InvalidToken { index: 0, token: ids[0] });
        }
        let last = ids.len() - 1;
        if ids[last] != EOS {
            return Err(SeqError::InvalidToken { index: last, token: ids[last] });
        }
        if let Some((index, &token)) = ids[1..last].iter().enumerate().find(|(_, &t)| t >= 20) {
            return Err(SeqError::InvalidToken { index: index + 1, token });
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of residues (length minus the two specials).
    pub fn residue_len(&self) -> usize {
        self.ids.len() - 2
    }
}

/// Maps a standard-residue sequence to `BOS + ids + EOS`.
pub fn tokenize(seq: &ProteinSequence) -> Result<TokenSeq, SeqError> {
    if seq.is_empty() {
        return Err(SeqError::Empty);
    }
    let mut ids = Vec::with_capacity(seq.len() + 2);
    ids.push(BOS);
    for (offset, &r) in seq.residues().iter().enumerate() {
        match alphabet::residue_index(r) {
            Some(id) => ids.push(id),
            None if alphabet::is_excluded(r) => {
                return Err(SeqError::ExcludedResidue {
                    id: seq.id().to_string(),
                    offset,
                    residue: r as char,
                })
            }
            None => {
                return Err(SeqError::Indeterminate {
                    id: seq.id().to_string(),
                    offset,
                    residue: r as char,
                })
            }
        }
    }
    ids.push(EOS);
    Ok(TokenSeq { ids })
}

/// Inverse of [`tokenize`].
pub fn detokenize(tokens: &TokenSeq, id: impl Into<String>) -> Result<ProteinSequence, SeqError> {
    let ids = tokens.ids();
    let residues = ids[1..ids.len() - 1]
        .iter()
        .map(|&t| STANDARD_AMINO_ACIDS[t])
        .collect::<Vec<_>>();
    Ok(ProteinSequence::from_parts(id.into(), residues, SequenceSource::Unknown))
}

/// Reverses residue order. An involution.
pub fn mirror(seq: &ProteinSequence) -> ProteinSequence {
    let mut residues = seq.residues.clone();
    residues.reverse();
    ProteinSequence::from_parts(seq.id.clone(), residues, SequenceSource::Mirrored)
}

/// Replaces ambiguity codes with a uniformly drawn compatible residue:
/// X from all 20, B from {D,N}, J from {I,L}, Z from {E,Q}.
pub fn impute_indeterminates<R: Rng + ?Sized>(
    seq: &ProteinSequence,
    rng: &mut R,
) -> Result<ProteinSequence, SeqError> {
    let mut residues = Vec::with_capacity(seq.len());
    for (offset, &r) in seq.residues().iter().enumerate() {
        let out = match r {
            b'X' => STANDARD_AMINO_ACIDS[rng.gen_range(0..20)],
            b'B' => pick(rng, b'D', b'N'),
            b'J' => pick(rng, b'I', b'L'),
            b'Z' => pick(rng, b'E', b'Q'),
            b'O' | b'U' => {
                return Err(SeqError::ExcludedResidue {
                    id: seq.id().to_string(),
                    offset,
                    residue: r as char,
                })
            }
            other => other,
        };
        residues.push(out);
    }
    Ok(ProteinSequence::from_parts(seq.id.clone(), residues, seq.source.clone()))
}

fn pick<R: Rng + ?Sized>(rng: &mut R, first: u8, second: u8) -> u8 {
    if rng.gen_bool(0.5) {
        first
    } else {
        second
    }
}
