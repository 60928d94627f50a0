//! Fitness scoring: log-likelihood ratios between mutant and wild type,
//! optionally fused with retrieval profiles, scored left-to-right and on
//! mirrored sequences, within a context window around the mutations.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::model::{AutoregressiveModel, ModelError};
use crate::retrieval::{retrieval_log_probs, RetrievalError, RetrievalProfile};
use crate::seq::{self, MutationSet, ProteinSequence, SeqError};

pub const DEFAULT_ALPHA: f64 = 0.6;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("mutated positions {positions:?} do not fit in a window of {window_len} residues")]
    Window { positions: Vec<usize>, window_len: usize },
    #[error("position {position} is outside a sequence of length {len}")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("window length must be at least 1")]
    EmptyWindow,
    #[error("alpha must lie in [0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("mutant {code} was parsed against a different wild type")]
    WildTypeMismatch { code: String },
    #[error("score tables disagree on mutant keys: {0}")]
    KeyMismatch(String),
    #[error("score table: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Seq(#[from] SeqError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scoring window `(start, end)`, 1-based inclusive, of at most
/// `window_len` residues around `floor(mean(positions))`.
pub fn select_window(positions: &[usize], seq_len: usize, window_len: usize) -> Result<(usize, usize), ScoreError> {
    if window_len == 0 {
        return Err(ScoreError::EmptyWindow);
    }
    if let Some(&p) = positions.iter().find(|&&p| p == 0 || p > seq_len) {
        return Err(ScoreError::PositionOutOfRange { position: p, len: seq_len });
    }
    if seq_len <= window_len {
        return Ok((1, seq_len));
    }
    let center = if positions.is_empty() { 1 } else { positions.iter().sum::<usize>() / positions.len() };
    let start = (center + 1).saturating_sub(window_len / 2).clamp(1, seq_len - window_len + 1);
    let end = start + window_len - 1;
    if positions.iter().any(|&p| p < start || p > end) {
        return Err(ScoreError::Window { positions: positions.to_vec(), window_len });
    }
    Ok((start, end))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

/// Weight of the autoregressive term where no retrieval term exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UncoveredWeight {
    /// The model alone scores the position.
    #[default]
    Full,
    /// Keep `1 - alpha`, as if the missing retrieval term were zero.
    OneMinusAlpha,
}

/// Retrieval inputs for one sequence: the profile and, per residue, the
/// 0-based seed position it corresponds to.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalContext<'a> {
    pub profile: &'a RetrievalProfile,
    pub mapping: &'a [Option<usize>],
}

/// `log P(s[start..=end])` with `BOS`/`EOS` framing. With retrieval, each
/// residue term is `(1 - alpha) a_i + alpha r_i` where `r_i` exists; the
/// `EOS` term counts as covered with `r = 0`. Terms are summed exactly.
pub fn log_likelihood<M: AutoregressiveModel + ?Sized>(
    model: &M,
    s: &ProteinSequence,
    window: (usize, usize),
    retrieval: Option<RetrievalContext<'_>>,
    alpha: f64,
    uncovered: UncoveredWeight,
) -> Result<f64, ScoreError> {
    let (start, end) = window;
    let slice = s.slice(start - 1, end);
    let ar = model.next_token_log_probs(&seq::tokenize(&slice)?)?;
    let terms = match retrieval {
        None => ar,
        Some(ctx) => {
            let r = retrieval_log_probs(&slice, &ctx.mapping[start - 1..end], ctx.profile)?;
            let (eos, residues) = ar.split_last().expect("EOS term");
            let mut terms: Vec<f64> = residues
                .iter()
                .zip(r)
                .map(|(a, r)| match (r, uncovered) {
                    (Some(r), _) => (1.0 - alpha) * a + alpha * r,
                    (None, UncoveredWeight::Full) => *a,
                    (None, UncoveredWeight::OneMinusAlpha) => (1.0 - alpha) * a,
                })
                .collect();
            terms.push((1.0 - alpha) * eos + alpha * 0.0);
            terms
        }
    };
    Ok(exact_sum(&terms))
}

/// Correctly rounded sum of finite terms, so equal multisets of terms give
/// bit-identical totals whatever their order. Falls back to naive summation
/// when a term is not finite.
pub fn exact_sum(terms: &[f64]) -> f64 {
    if terms.iter().any(|t| !t.is_finite()) {
        return terms.iter().sum();
    }
    // Non-overlapping partials, smallest magnitude first.
    let mut partials: Vec<f64> = Vec::new();
    for &t in terms {
        let mut x = t;
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round half-way cases correctly when lower partials push past the tie.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub alpha: f64,
    pub bidirectional: bool,
    pub uncovered: UncoveredWeight,
    /// Residues per window; defaults to the model context minus `BOS`/`EOS`.
    pub window_len: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA, bidirectional: true, uncovered: UncoveredWeight::Full, window_len: None }
    }
}

/// A sequence ready to score in one direction.
struct Oriented {
    seq: ProteinSequence,
    mapping: Option<Vec<Option<usize>>>,
    positions: Vec<usize>,
}

/// 1-based positions in the coordinates of `dir`.
fn orient_positions(positions: &[usize], len: usize, dir: Direction) -> Vec<usize> {
    match dir {
        Direction::Forward => positions.to_vec(),
        Direction::Reverse => positions.iter().rev().map(|&p| len + 1 - p).collect(),
    }
}

fn orient(seq: &ProteinSequence, mapping: Option<Vec<Option<usize>>>, positions: &[usize], dir: Direction) -> Oriented {
    let positions = orient_positions(positions, seq.len(), dir);
    match dir {
        Direction::Forward => Oriented { seq: seq.clone(), mapping, positions },
        Direction::Reverse => Oriented {
            seq: seq::mirror(seq),
            mapping: mapping.map(|mut m| {
                m.reverse();
                m
            }),
            positions,
        },
    }
}

/// One direction's ratio with the windows used, in that direction's coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalScore {
    pub f: f64,
    pub mutant_window: (usize, usize),
    pub wild_type_window: (usize, usize),
}

/// A mutant prepared against a (possibly imputed) wild type.
#[derive(Debug, Clone)]
pub struct Variant {
    pub code: String,
    pub mutant: ProteinSequence,
    pub mutant_positions: Vec<usize>,
    pub wild_type_positions: Vec<usize>,
    pub position_map: Vec<Option<usize>>,
}

impl Variant {
    /// Applies `m`'s edits to `wild_type`, which may be an imputed copy of
    /// the sequence `m` was parsed against.
    pub fn new(m: &MutationSet, wild_type: &ProteinSequence) -> Result<Self, ScoreError> {
        if m.wild_type().len() != wild_type.len() {
            return Err(ScoreError::WildTypeMismatch { code: m.code().to_string() });
        }
        Ok(Self {
            code: m.code().to_string(),
            mutant: m.apply_to(wild_type)?,
            mutant_positions: m.mutant_positions(),
            wild_type_positions: m.wild_type_positions(),
            position_map: m.position_map(),
        })
    }
}

fn window_len<M: AutoregressiveModel + ?Sized>(model: &M, opts: &ScoreOptions) -> usize {
    opts.window_len.unwrap_or_else(|| model.max_context().saturating_sub(2))
}

fn check_alpha(alpha: f64) -> Result<(), ScoreError> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(ScoreError::InvalidAlpha(alpha))
    }
}

/// `log P(mut) - log P(wt)` in one direction.
pub fn fitness_ratio<M: AutoregressiveModel + ?Sized>(
    model: &M,
    wild_type: &ProteinSequence,
    variant: &Variant,
    profile: Option<&RetrievalProfile>,
    opts: &ScoreOptions,
    direction: Direction,
) -> Result<DirectionalScore, ScoreError> {
    check_alpha(opts.alpha)?;
    let wlen = window_len(model, opts);
    let (wt_map, mut_map) = match profile {
        Some(p) => {
            if p.len() != wild_type.len() {
                return Err(RetrievalError::SeedMismatch { wt: wild_type.len(), seed: p.len() }.into());
            }
            (Some((0..wild_type.len()).map(Some).collect()), Some(variant.position_map.clone()))
        }
        None => (None, None),
    };
    let wt = orient(wild_type, wt_map, &variant.wild_type_positions, direction);
    let mt = orient(&variant.mutant, mut_map, &variant.mutant_positions, direction);
    let wt_window = select_window(&wt.positions, wt.seq.len(), wlen)?;
    let mt_window = select_window(&mt.positions, mt.seq.len(), wlen)?;
    let ll = |o: &Oriented, w| {
        let ctx = profile.zip(o.mapping.as_deref()).map(|(profile, mapping)| RetrievalContext { profile, mapping });
        log_likelihood(model, &o.seq, w, ctx, opts.alpha, opts.uncovered)
    };
    let f = ll(&mt, mt_window)? - ll(&wt, wt_window)?;
    Ok(DirectionalScore { f, mutant_window: mt_window, wild_type_window: wt_window })
}

/// Everything needed to score a batch of mutants of one wild type.
#[derive(Debug, Clone)]
pub struct ScoreRequest {
    /// Wild type as scored (already imputed if it had ambiguity codes).
    pub wild_type: ProteinSequence,
    pub mutants: Vec<MutationSet>,
    pub retrieval: Option<RetrievalProfile>,
    pub options: ScoreOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitnessRecord {
    pub mutant: String,
    pub f: f64,
    pub f_forward: f64,
    pub f_reverse: Option<f64>,
    /// Forward-direction mutant window, 1-based inclusive.
    pub window: (usize, usize),
}

/// Scores every mutant; output order follows input order. Wild-type
/// likelihoods are computed once per distinct window and direction.
pub fn score_bidirectional<M: AutoregressiveModel + ?Sized>(
    req: &ScoreRequest,
    model: &M,
) -> Result<Vec<FitnessRecord>, ScoreError> {
    let opts = &req.options;
    check_alpha(opts.alpha)?;
    let wlen = window_len(model, opts);
    let wt_len = req.wild_type.len();
    let profile = req.retrieval.as_ref();
    if let Some(p) = profile {
        if p.len() != wt_len {
            return Err(RetrievalError::SeedMismatch { wt: wt_len, seed: p.len() }.into());
        }
    }
    let variants = req.mutants.iter().map(|m| Variant::new(m, &req.wild_type)).collect::<Result<Vec<_>, _>>()?;
    let directions: &[Direction] =
        if opts.bidirectional { &[Direction::Forward, Direction::Reverse] } else { &[Direction::Forward] };

    let wt_oriented: Vec<Oriented> = directions
        .iter()
        .map(|&d| orient(&req.wild_type, profile.map(|_| (0..wt_len).map(Some).collect()), &[], d))
        .collect();
    let wt_window = |v: &Variant, di: usize| {
        select_window(&orient_positions(&v.wild_type_positions, wt_len, directions[di]), wt_len, wlen)
    };

    // Distinct wild-type windows per direction, scored in parallel.
    let mut keys: Vec<(usize, (usize, usize))> = Vec::new();
    let mut seen = HashSet::new();
    for v in &variants {
        for di in 0..directions.len() {
            let key = (di, wt_window(v, di)?);
            if seen.insert(key) {
                keys.push(key);
            }
        }
    }
    let wt_scores: HashMap<(usize, (usize, usize)), f64> = keys
        .par_iter()
        .map(|&(di, w)| {
            let o = &wt_oriented[di];
            let ctx = profile.zip(o.mapping.as_deref()).map(|(profile, mapping)| RetrievalContext { profile, mapping });
            log_likelihood(model, &o.seq, w, ctx, opts.alpha, opts.uncovered).map(|ll| ((di, w), ll))
        })
        .collect::<Result<_, _>>()?;

    variants
        .par_iter()
        .map(|v| {
            let mut f_dir = Vec::with_capacity(directions.len());
            let mut window = (0, 0);
            for (di, &d) in directions.iter().enumerate() {
                let mt = orient(&v.mutant, profile.map(|_| v.position_map.clone()), &v.mutant_positions, d);
                let mt_window = select_window(&mt.positions, mt.seq.len(), wlen)?;
                let ctx = profile.zip(mt.mapping.as_deref()).map(|(profile, mapping)| RetrievalContext { profile, mapping });
                let ll = log_likelihood(model, &mt.seq, mt_window, ctx, opts.alpha, opts.uncovered)?;
                f_dir.push(ll - wt_scores[&(di, wt_window(v, di)?)]);
                if d == Direction::Forward {
                    window = mt_window;
                }
            }
            let f_forward = f_dir[0];
            let f_reverse = f_dir.get(1).copied();
            let f = match f_reverse {
                Some(r) => (f_forward + r) / 2.0,
                None => f_forward,
            };
            Ok(FitnessRecord { mutant: v.code.clone(), f, f_forward, f_reverse, window })
        })
        .collect()
}

/// One row of a score table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub mutant: String,
    pub f: f64,
    pub f_forward: f64,
    pub f_reverse: Option<f64>,
    pub window: Option<(usize, usize)>,
    /// Provenance of ensembled rows; empty for single-model tables.
    pub sources: Vec<String>,
}

impl From<&FitnessRecord> for ScoreRow {
    fn from(r: &FitnessRecord) -> Self {
        Self {
            mutant: r.mutant.clone(),
            f: r.f,
            f_forward: r.f_forward,
            f_reverse: r.f_reverse,
            window: Some(r.window),
            sources: Vec::new(),
        }
    }
}

const SCORE_HEADER: [&str; 6] = ["mutant", "F", "F_forward", "F_reverse", "window_start", "window_end"];

/// CSV `mutant,F,F_forward,F_reverse,window_start,window_end`, plus a
/// `sources` column when any row carries provenance.
pub fn write_scores<W: Write>(out: W, rows: &[ScoreRow]) -> Result<(), ScoreError> {
    let with_sources = rows.iter().any(|r| !r.sources.is_empty());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = SCORE_HEADER.to_vec();
    if with_sources {
        header.push("sources");
    }
    w.write_record(&header)?;
    for r in rows {
        let (ws, we) = r.window.map_or((String::new(), String::new()), |(s, e)| (s.to_string(), e.to_string()));
        let mut rec = vec![
            r.mutant.clone(),
            r.f.to_string(),
            r.f_forward.to_string(),
            r.f_reverse.map(|x| x.to_string()).unwrap_or_default(),
            ws,
            we,
        ];
        if with_sources {
            rec.push(r.sources.join(";"));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scores(bytes: &[u8]) -> Result<Vec<ScoreRow>, ScoreError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| ScoreError::Format(format!("missing column {name}")));
    let (mutant, f) = (need("mutant")?, need("F")?);
    let (ff, fr, ws, we, src) =
        (col("F_forward"), col("F_reverse"), col("window_start"), col("window_end"), col("sources"));
    let num = |rec: &csv::StringRecord, i: usize| -> Result<f64, ScoreError> {
        rec[i].parse().map_err(|_| ScoreError::Format(format!("bad number {:?}", &rec[i])))
    };
    let opt = |rec: &csv::StringRecord, i: Option<usize>| -> Result<Option<f64>, ScoreError> {
        match i {
            Some(i) if !rec[i].is_empty() => num(rec, i).map(Some),
            _ => Ok(None),
        }
    };
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let fv = num(&rec, f)?;
        let window = match (ws, we) {
            (Some(a), Some(b)) if !rec[a].is_empty() && !rec[b].is_empty() => Some((
                rec[a].parse().map_err(|_| ScoreError::Format("bad window_start".into()))?,
                rec[b].parse().map_err(|_| ScoreError::Format("bad window_end".into()))?,
            )),
            _ => None,
        };
        rows.push(ScoreRow {
            mutant: rec[mutant].to_string(),
            f: fv,
            f_forward: opt(&rec, ff)?.unwrap_or(fv),
            f_reverse: opt(&rec, fr)?,
            window,
            sources: src.map(|i| rec[i].split(';').filter(|s| !s.is_empty()).map(String::from).collect()).unwrap_or_default(),
        });
    }
    Ok(rows)
}

/// Per-mutant arithmetic mean over tables with identical mutant sets.
/// Row order follows the first table. Windows survive only when all
/// tables agree; `F_reverse` only when every table has it.
pub fn ensemble_scores(tables: &[(String, Vec<ScoreRow>)]) -> Result<Vec<ScoreRow>, ScoreError> {
    let (_, first) = tables.first().ok_or_else(|| ScoreError::KeyMismatch("no tables".into()))?;
    let keys: Vec<&str> = first.iter().map(|r| r.mutant.as_str()).collect();
    let key_set: HashSet<&str> = keys.iter().copied().collect();
    if key_set.len() != keys.len() {
        return Err(ScoreError::KeyMismatch("duplicate mutant in first table".into()));
    }
    let mut indexed = Vec::with_capacity(tables.len());
    for (name, rows) in tables {
        let map: HashMap<&str, &ScoreRow> = rows.iter().map(|r| (r.mutant.as_str(), r)).collect();
        if map.len() != rows.len() || map.len() != keys.len() || !keys.iter().all(|k| map.contains_key(k)) {
            return Err(ScoreError::KeyMismatch(format!("{name} does not match the first table's mutants")));
        }
        indexed.push(map);
    }
    let n = tables.len() as f64;
    let sources: Vec<String> = tables.iter().map(|(name, _)| name.clone()).collect();
    Ok(keys
        .iter()
        .map(|k| {
            let rows: Vec<&ScoreRow> = indexed.iter().map(|m| m[k]).collect();
            let mean = |g: &dyn Fn(&ScoreRow) -> f64| rows.iter().fold(0.0, |acc, r| acc + g(r)) / n;
            let f_reverse = rows
                .iter()
                .map(|r| r.f_reverse)
                .collect::<Option<Vec<f64>>>()
                .map(|v| v.iter().fold(0.0, |acc, x| acc + x) / n);
            let window = rows[0].window.filter(|w| rows.iter().all(|r| r.window == Some(*w)));
            ScoreRow {
                mutant: k.to_string(),
                f: mean(&|r| r.f),
                f_forward: mean(&|r| r.f_forward),
                f_reverse,
                window,
                sources: sources.clone(),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests;
