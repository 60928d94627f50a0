//! Amino-acid vocabulary and token ids.
//!
//! Token ids are fixed: the 20 standard residues in alphabetical order of
//! their one-letter code, followed by `BOS`, `EOS` and `PAD`.

use std::fmt;

/// The 20 canonical residues, alphabetical by one-letter code.
pub const STANDARD_AMINO_ACIDS: [u8; 20] = *b"ACDEFGHIKLMNPQRSTVWY";

/// Ambiguity codes that are imputed before tokenization.
pub const INDETERMINATES: [u8; 4] = *b"XBJZ";

/// Non-standard residues accepted by the FASTA reader but removed by filtering.
pub const EXCLUDED: [u8; 2] = *b"OU";

pub type TokenId = usize;

pub const BOS: TokenId = 20;
pub const EOS: TokenId = 21;
pub const PAD: TokenId = 22;

/// Number of token ids (20 residues + 3 specials).
pub const VOCAB_SIZE: usize = 23;

/// Static description of the vocabulary.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AminoAcidVocab;

impl AminoAcidVocab {
    pub const SIZE: usize = VOCAB_SIZE;

    pub fn standard(&self) -> &'static [u8; 20] {
        &STANDARD_AMINO_ACIDS
    }

    /// Token id of a standard residue, or `None` for anything else.
    pub fn token_id(&self, residue: u8) -> Option<TokenId> {
        residue_index(residue)
    }

    pub fn residue(&self, id: TokenId) -> Option<u8> {
        STANDARD_AMINO_ACIDS.get(id).copied()
    }

    pub fn token_name(&self, id: TokenId) -> Option<String> {
        match id {
            BOS => Some("<bos>".to_string()),
            EOS => Some("<eos>".to_string()),
            PAD => Some("<pad>".to_string()),
            _ => self.residue(id).map(|r| (r as char).to_string()),
        }
    }
}

impl fmt::Display for AminoAcidVocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+<bos,eos,pad>", std::str::from_utf8(&STANDARD_AMINO_ACIDS).unwrap())
    }
}

/// Index of a standard residue in `STANDARD_AMINO_ACIDS` (equal to its token id).
#[inline]
pub fn residue_index(residue: u8) -> Option<usize> {
    match residue {
        b'A' => Some(0),
        b'C' => Some(1),
        b'D' => Some(2),
        b'E' => Some(3),
        b'F' => Some(4),
        b'G' => Some(5),
        b'H' => Some(6),
        b'I' => Some(7),
        b'K' => Some(8),
        b'L' => Some(9),
        b'M' => Some(10),
        b'N' => Some(11),
        b'P' => Some(12),
        b'Q' => Some(13),
        b'R' => Some(14),
        b'S' => Some(15),
        b'T' => Some(16),
        b'V' => Some(17),
        b'W' => Some(18),
        b'Y' => Some(19),
        _ => None,
    }
}

#[inline]
pub fn is_standard(residue: u8) -> bool {
    residue_index(residue).is_some()
}

#[inline]
pub fn is_indeterminate(residue: u8) -> bool {
    INDETERMINATES.contains(&residue)
}

#[inline]
pub fn is_excluded(residue: u8) -> bool {
    EXCLUDED.contains(&residue)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_distinct_and_alphabetical() {
        let vocab = AminoAcidVocab;
        let mut sorted = STANDARD_AMINO_ACIDS;
        sorted.sort_unstable();
        assert_eq!(sorted, STANDARD_AMINO_ACIDS);
        for (i, &aa) in STANDARD_AMINO_ACIDS.iter().enumerate() {
            assert_eq!(vocab.token_id(aa), Some(i));
            assert_eq!(vocab.residue(i), Some(aa));
        }
        assert_eq!((BOS, EOS, PAD), (20, 21, 22));
    }

    #[test]
    fn indeterminates_have_no_token() {
        for &aa in INDETERMINATES.iter().chain(EXCLUDED.iter()) {
            assert_eq!(residue_index(aa), None);
        }
    }
}
