//! Synthetic data with known structure: a memorizable corpus and
//! site-independent fitness landscapes with alignments sampled from them.

use std::collections::HashMap;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::seq::{ProteinSequence, STANDARD_AMINO_ACIDS};

/// Context width (in tokens, counting `BOS`) that determines the next token
/// everywhere except at variable sites.
pub const MEMO_CONTEXT: usize = 3;

/// `2^n_sites` sequences of length `len` sharing one backbone and differing
/// at `n_sites` evenly spaced binary sites. Every window of
/// [`MEMO_CONTEXT`] preceding tokens determines the next residue across the
/// whole corpus, except directly before a variable site where exactly the
/// two site alternatives follow. The per-token entropy floor of the corpus
/// is therefore `n_sites * ln 2 / (len + 1)`.
pub fn memorization_corpus(len: usize, n_sites: usize, seed: u64) -> Vec<ProteinSequence> {
    assert!(n_sites > 0 && len > 2 * n_sites + MEMO_CONTEXT, "corpus too short for {n_sites} sites");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = len / (n_sites + 1);
    let sites: Vec<usize> = (1..=n_sites).map(|i| i * spacing).collect();
    loop {
        let backbone: Vec<u8> = (0..len).map(|_| STANDARD_AMINO_ACIDS[rng.gen_range(0..20)]).collect();
        let alts: Vec<u8> = sites
            .iter()
            .map(|&s| loop {
                let a = STANDARD_AMINO_ACIDS[rng.gen_range(0..20)];
                if a != backbone[s] {
                    break a;
                }
            })
            .collect();
        let variants: Vec<Vec<u8>> = (0..1usize << n_sites)
            .map(|mask| {
                let mut v = backbone.clone();
                for (bit, (&s, &a)) in sites.iter().zip(&alts).enumerate() {
                    if mask >> bit & 1 == 1 {
                        v[s] = a;
                    }
                }
                v
            })
            .collect();
        if contexts_are_functional(&variants, &sites) {
            return variants
                .iter()
                .enumerate()
                .map(|(i, v)| ProteinSequence::new(format!("memo_{i:03}"), v).expect("standard residues"))
                .collect();
        }
    }
}

/// Checks that each context window maps to one next token, except windows
/// ending right before a variable site, which must be unique to that site.
fn contexts_are_functional(variants: &[Vec<u8>], sites: &[usize]) -> bool {
    // Context key: up to MEMO_CONTEXT previous tokens, 0 standing for BOS/padding.
    let mut next: HashMap<[u8; MEMO_CONTEXT], (u8, Option<usize>)> = HashMap::new();
    for v in variants {
        let mut framed = vec![0u8; MEMO_CONTEXT];
        framed.extend_from_slice(v);
        framed.push(b'$');
        for pos in 0..=v.len() {
            let key: [u8; MEMO_CONTEXT] = framed[pos..pos + MEMO_CONTEXT].try_into().expect("window");
            let target = framed[pos + MEMO_CONTEXT];
            let site = sites.iter().position(|&s| s == pos);
            match next.get(&key) {
                None => {
                    next.insert(key, (target, site));
                }
                Some(&(t, s)) => {
                    if s != site || (site.is_none() && t != target) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Site-independent fitness landscape: `log_probs[i][a]` is the natural
/// log-probability of residue `a` (alphabetical index) at position `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteLandscape {
    pub log_probs: Vec<[f64; 20]>,
}

impl SiteLandscape {
    /// Per-position distributions from a Dirichlet-like draw: Gumbel-free
    /// `exp(temperature * z)` weights with standard normal `z`.
    pub fn random(len: usize, temperature: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::StandardNormal;
        let log_probs = (0..len)
            .map(|_| {
                let logits: Vec<f64> = (0..20).map(|_| temperature * rng.sample::<f64, _>(normal)).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
                let mut row = [0.0; 20];
                for (r, l) in row.iter_mut().zip(&logits) {
                    *r = l - z;
                }
                row
            })
            .collect();
        Self { log_probs }
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }

    /// The most probable residue at every position.
    pub fn wild_type(&self) -> ProteinSequence {
        let residues: Vec<u8> = self
            .log_probs
            .iter()
            .map(|row| {
                let best = (0..20).fold(0, |b, a| if row[a] > row[b] { a } else { b });
                STANDARD_AMINO_ACIDS[best]
            })
            .collect();
        ProteinSequence::new("wt", residues).expect("standard residues")
    }

    /// True fitness effect of substituting `to` at 0-based `position`.
    pub fn log_ratio(&self, position: usize, from: u8, to: u8) -> f64 {
        let idx = |r: u8| crate::seq::residue_index(r).expect("standard residue");
        self.log_probs[position][idx(to)] - self.log_probs[position][idx(from)]
    }

    /// `n` independent draws from the landscape.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<ProteinSequence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dists: Vec<WeightedIndex<f64>> = self
            .log_probs
            .iter()
            .map(|row| WeightedIndex::new(row.iter().map(|l| l.exp())).expect("positive weights"))
            .collect();
        (0..n)
            .map(|i| {
                let residues: Vec<u8> = dists.iter().map(|d| STANDARD_AMINO_ACIDS[d.sample(&mut rng)]).collect();
                ProteinSequence::new(format!("sample_{i}"), residues).expect("standard residues")
            })
            .collect()
    }

    /// A2M text: the wild type as seed row, then `n` sampled rows.
    pub fn sample_a2m(&self, n: usize, seed: u64) -> String {
        let mut out = format!(">{}\n{}\n", "wt", self.wild_type().as_str());
        for s in self.sample(n, seed) {
            out.push_str(&format!(">{}\n{}\n", s.id(), s.as_str()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn memorization_corpus_shape() {
        let corpus = memorization_corpus(60, 3, 1);
        assert_eq!(corpus.len(), 8);
        assert!(corpus.iter().all(|s| s.len() == 60));
        let distinct: std::collections::HashSet<_> = corpus.iter().map(|s| s.as_str().to_string()).collect();
        assert_eq!(distinct.len(), 8);
        let diffs = corpus[0].residues().iter().zip(corpus[7].residues()).filter(|(a, b)| a != b).count();
        assert_eq!(diffs, 3);
    }

    #[test]
    fn landscape_rows_normalize_and_sampling_is_seeded() {
        let l = SiteLandscape::random(6, 1.5, 2);
        for row in &l.log_probs {
            let total: f64 = row.iter().map(|x| x.exp()).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert_eq!(l.sample(5, 3), l.sample(5, 3));
        let wt = l.wild_type();
        for (i, &r) in wt.residues().iter().enumerate() {
            for &a in STANDARD_AMINO_ACIDS.iter() {
                assert!(l.log_ratio(i, r, a) <= 0.0);
            }
        }
    }
}

/// An autoregressive model over length-2 sequences defined by an explicit
/// joint table `P(x1, x2)`. Conditionals come from marginalization, so the
/// product of its next-token probabilities reproduces the table.
#[derive(Debug, Clone, PartialEq)]
pub struct PairTableModel {
    /// `joint[a][b] = P(x1 = a, x2 = b)`, alphabetical residue indices.
    pub joint: Vec<[f64; 20]>,
}

impl PairTableModel {
    /// Random strictly positive table.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut joint = vec![[0.0; 20]; 20];
        for row in joint.iter_mut() {
            for x in row.iter_mut() {
                *x = rng.gen_range(0.05..1.0);
            }
        }
        let z: f64 = joint.iter().flatten().sum();
        for x in joint.iter_mut().flatten() {
            *x /= z;
        }
        Self { joint }
    }

    /// `ln P(x1, x2)` straight from the table.
    pub fn log_joint(&self, s: &ProteinSequence) -> f64 {
        let r = s.residues();
        let idx = |b: u8| crate::seq::residue_index(b).expect("standard residue");
        self.joint[idx(r[0])][idx(r[1])].ln()
    }
}

impl crate::model::AutoregressiveModel for PairTableModel {
    fn max_context(&self) -> usize {
        4
    }

    fn next_token_log_probs(&self, tokens: &crate::seq::TokenSeq) -> Result<Vec<f64>, crate::model::ModelError> {
        let ids = tokens.ids();
        if ids.len() != 4 {
            return Err(crate::model::ModelError::Config(format!(
                "pair table model scores exactly two residues, got {}",
                tokens.residue_len()
            )));
        }
        let (a, b) = (ids[1], ids[2]);
        let marginal: f64 = self.joint[a].iter().sum();
        Ok(vec![marginal.ln(), (self.joint[a][b] / marginal).ln(), 0.0])
    }
}
