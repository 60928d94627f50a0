//! Mutation codes.
//!
//! Grammar (positions 1-based, edits joined by `:`):
//!
//! ```text
//! A42G          substitution of wild-type A at 42 by G
//! ins42:GS      insert GS after position 42 (ins0 inserts before the first residue)
//! del42-45      delete positions 42..=45
//! ```
//!
//! Internally positions are 0-based and deletion ranges half-open.

use std::fmt::Write as _;

use super::{ProteinSequence, SeqError, SequenceSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Substitution {
    /// 0-based wild-type position.
    pub position: usize,
    pub from: u8,
    pub to: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Insertion {
    /// Number of wild-type residues preceding the insertion.
    pub after: usize,
    pub residues: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deletion {
    /// 0-based, half-open.
    pub start: usize,
    pub end: usize,
}

/// A validated edit script against a wild type, with the materialized mutant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutationSet {
    code: String,
    wild_type: ProteinSequence,
    substitutions: Vec<Substitution>,
    insertions: Vec<Insertion>,
    deletions: Vec<Deletion>,
    mutant: ProteinSequence,
}

fn err(code: &str, reason: impl Into<String>) -> SeqError {
    SeqError::Mutation { code: code.to_string(), reason: reason.into() }
}

fn parse_pos(code: &str, digits: &str) -> Result<usize, SeqError> {
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err(code, format!("malformed position '{digits}'")));
    }
    digits.parse().map_err(|_| err(code, format!("malformed position '{digits}'")))
}

/// Parses a mutation code against `wt` and materializes the mutant.
pub fn parse_mutation(code: &str, wt: &ProteinSequence) -> Result<MutationSet, SeqError> {
    let trimmed = code.trim();
    if trimmed.is_empty() {
        return Err(err(code, "empty mutation code"));
    }
    let len = wt.len();
    let tokens: Vec<&str> = trimmed.split(':').collect();
    let mut substitutions = Vec::new();
    let mut insertions = Vec::new();
    let mut deletions = Vec::new();

    let mut i = 0;
    while i < tokens.len() {
        let tok = tokens[i];
        if let Some(rest) = tok.strip_prefix("ins") {
            let after = parse_pos(code, rest)?;
            if after > len {
                return Err(err(code, format!("insertion after position {after} is beyond length {len}")));
            }
            let payload = tokens
                .get(i + 1)
                .ok_or_else(|| err(code, format!("'{tok}' is missing the inserted residues")))?;
            let ins = ProteinSequence::new("ins", payload)
                .map_err(|_| err(code, format!("invalid inserted residues '{payload}'")))?;
            insertions.push(Insertion { after, residues: ins.residues().to_vec() });
            i += 2;
            continue;
        }
        if let Some(rest) = tok.strip_prefix("del") {
            let (a, b) = rest
                .split_once('-')
                .ok_or_else(|| err(code, format!("deletion '{tok}' must be delSTART-END")))?;
            let (a, b) = (parse_pos(code, a)?, parse_pos(code, b)?);
            if a == 0 || b < a || b > len {
                return Err(err(code, format!("deletion range {a}-{b} out of range 1..={len}")));
            }
            deletions.push(Deletion { start: a - 1, end: b });
            i += 1;
            continue;
        }
        let bytes = tok.as_bytes();
        if bytes.len() < 3
            || !bytes[0].is_ascii_alphabetic()
            || !bytes[bytes.len() - 1].is_ascii_alphabetic()
        {
            return Err(err(code, format!("malformed token '{tok}'")));
        }
        let from = bytes[0].to_ascii_uppercase();
        let to = bytes[bytes.len() - 1].to_ascii_uppercase();
        let pos = parse_pos(code, &tok[1..tok.len() - 1])?;
        if pos == 0 || pos > len {
            return Err(err(code, format!("position {pos} out of range 1..={len}")));
        }
        ProteinSequence::new("sub", [to]).map_err(|_| err(code, format!("invalid residue '{}'", to as char)))?;
        let actual = wt.residues()[pos - 1];
        if actual != from {
            return Err(err(
                code,
                format!("wild-type residue at {pos} is {} not {}", actual as char, from as char),
            ));
        }
        substitutions.push(Substitution { position: pos - 1, from, to });
        i += 1;
    }

    MutationSet::from_edits(code.trim().to_string(), wt.clone(), substitutions, insertions, deletions)
}

impl MutationSet {
    /// Validates and materializes an edit script given in internal coordinates.
    pub fn from_edits(
        code: String,
        wild_type: ProteinSequence,
        mut substitutions: Vec<Substitution>,
        mut insertions: Vec<Insertion>,
        mut deletions: Vec<Deletion>,
    ) -> Result<Self, SeqError> {
        let len = wild_type.len();
        substitutions.sort_by_key(|s| s.position);
        insertions.sort_by_key(|s| s.after);
        deletions.sort_by_key(|d| d.start);

        let mut touched = vec![false; len];
        for s in &substitutions {
            if s.position >= len {
                return Err(err(&code, format!("position {} out of range", s.position + 1)));
            }
            if wild_type.residues()[s.position] != s.from {
                return Err(err(&code, format!("wild-type mismatch at {}", s.position + 1)));
            }
            if std::mem::replace(&mut touched[s.position], true) {
                return Err(err(&code, format!("overlapping edits at position {}", s.position + 1)));
            }
        }
        for d in &deletions {
            if d.start >= d.end || d.end > len {
                return Err(err(&code, "deletion range out of bounds"));
            }
            for p in d.start..d.end {
                if std::mem::replace(&mut touched[p], true) {
                    return Err(err(&code, format!("overlapping edits at position {}", p + 1)));
                }
            }
        }
        for pair in insertions.windows(2) {
            if pair[0].after == pair[1].after {
                return Err(err(&code, format!("two insertions after position {}", pair[0].after)));
            }
        }
        for ins in &insertions {
            if ins.after > len || ins.residues.is_empty() {
                return Err(err(&code, "invalid insertion"));
            }
            // inside a deletion when both flanking residues are deleted
            if deletions.iter().any(|d| d.start < ins.after && ins.after < d.end) {
                return Err(err(&code, format!("insertion after {} falls inside a deletion", ins.after)));
            }
        }

        let mut set = MutationSet {
            code,
            mutant: wild_type.clone(),
            wild_type,
            substitutions,
            insertions,
            deletions,
        };
        let residues = set.materialize(set.wild_type.residues());
        if residues.is_empty() {
            return Err(err(&set.code, "mutant would be empty"));
        }
        set.mutant = ProteinSequence::from_parts(
            set.code.clone(),
            residues,
            SequenceSource::Mutant { parent: set.wild_type.id().to_string() },
        );
        Ok(set)
    }

    fn materialize(&self, base: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(base.len() + self.inserted_len());
        let mut ins = self.insertions.iter().peekable();
        let mut sub = self.substitutions.iter().peekable();
        for p in 0..=base.len() {
            if let Some(i) = ins.next_if(|i| i.after == p) {
                out.extend_from_slice(&i.residues);
            }
            if p == base.len() {
                break;
            }
            let substituted = sub.next_if(|s| s.position == p).map(|s| s.to);
            if !self.is_deleted(p) {
                out.push(substituted.unwrap_or(base[p]));
            }
        }
        out
    }

    fn is_deleted(&self, p: usize) -> bool {
        self.deletions.iter().any(|d| d.start <= p && p < d.end)
    }

    fn inserted_len(&self) -> usize {
        self.insertions.iter().map(|i| i.residues.len()).sum()
    }

    /// Applies the same edits to another sequence of the wild type's length,
    /// e.g. an imputed copy of the wild type.
    pub fn apply_to(&self, base: &ProteinSequence) -> Result<ProteinSequence, SeqError> {
        if base.len() != self.wild_type.len() {
            return Err(err(&self.code, "base sequence length differs from the wild type"));
        }
        Ok(ProteinSequence::from_parts(
            self.code.clone(),
            self.materialize(base.residues()),
            SequenceSource::Mutant { parent: base.id().to_string() },
        ))
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn wild_type(&self) -> &ProteinSequence {
        &self.wild_type
    }

    pub fn mutant(&self) -> &ProteinSequence {
        &self.mutant
    }

    pub fn substitutions(&self) -> &[Substitution] {
        &self.substitutions
    }

    pub fn insertions(&self) -> &[Insertion] {
        &self.insertions
    }

    pub fn deletions(&self) -> &[Deletion] {
        &self.deletions
    }

    pub fn has_indels(&self) -> bool {
        !self.insertions.is_empty() || !self.deletions.is_empty()
    }

    /// True when the mutant equals the wild type.
    pub fn is_silent(&self) -> bool {
        self.mutant.residues() == self.wild_type.residues()
    }

    /// For each mutant residue, the 0-based wild-type position it descends
    /// from (`None` for inserted residues).
    pub fn position_map(&self) -> Vec<Option<usize>> {
        let mut out = Vec::with_capacity(self.mutant.len());
        let mut ins = self.insertions.iter().peekable();
        let len = self.wild_type.len();
        for p in 0..=len {
            if let Some(i) = ins.next_if(|i| i.after == p) {
                out.extend(std::iter::repeat(None).take(i.residues.len()));
            }
            if p < len && !self.is_deleted(p) {
                out.push(Some(p));
            }
        }
        out
    }

    /// 1-based wild-type positions touched by the edits. Insertions count at
    /// their left flank (or position 1 for `ins0`).
    pub fn wild_type_positions(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.substitutions.iter().map(|s| s.position + 1).collect();
        for d in &self.deletions {
            out.extend(d.start + 1..=d.end);
        }
        for i in &self.insertions {
            out.push(i.after.max(1));
        }
        out.sort_unstable();
        out
    }

    /// 1-based mutant positions touched by the edits: substituted and inserted
    /// residues, and the junction residue left of each deletion.
    pub fn mutant_positions(&self) -> Vec<usize> {
        let map = self.position_map();
        let mlen = map.len();
        let mut out = Vec::new();
        for (i, m) in map.iter().enumerate() {
            match m {
                None => out.push(i + 1),
                Some(p) if self.substitutions.iter().any(|s| s.position == *p) => out.push(i + 1),
                _ => {}
            }
        }
        for d in &self.deletions {
            // index of the first surviving residue after the deletion
            let next = map.iter().position(|m| m.is_some_and(|p| p >= d.end)).unwrap_or(mlen);
            out.push((next + 1).min(mlen));
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Canonical code: edits sorted by position.
    pub fn to_code(&self) -> String {
        enum Edit<'a> {
            Sub(&'a Substitution),
            Ins(&'a Insertion),
            Del(&'a Deletion),
        }
        let mut edits: Vec<(usize, Edit)> = Vec::new();
        edits.extend(self.substitutions.iter().map(|s| (2 * s.position + 1, Edit::Sub(s))));
        edits.extend(self.deletions.iter().map(|d| (2 * d.start + 1, Edit::Del(d))));
        edits.extend(self.insertions.iter().map(|i| (2 * i.after, Edit::Ins(i))));
        edits.sort_by_key(|(k, _)| *k);
        let mut out = String::new();
        for (n, (_, e)) in edits.iter().enumerate() {
            if n > 0 {
                out.push(':');
            }
            match e {
                Edit::Sub(s) => {
                    let _ = write!(out, "{}{}{}", s.from as char, s.position + 1, s.to as char);
                }
                Edit::Ins(i) => {
                    let _ = write!(out, "ins{}:{}", i.after, String::from_utf8_lossy(&i.residues));
                }
                Edit::Del(d) => {
                    let _ = write!(out, "del{}-{}", d.start + 1, d.end);
                }
            }
        }
        out
    }
}
