use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use super::ProteinSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    /// Pyrrolysine (O) or selenocysteine (U).
    NonStandardResidue,
    /// Two or more consecutive `X`.
    ConsecutiveUnknown,
    /// Sole member of its cluster.
    SingletonCluster,
}

impl RejectReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            RejectReason::NonStandardResidue => "contains_O_or_U",
            RejectReason::ConsecutiveUnknown => "consecutive_X",
            RejectReason::SingletonCluster => "singleton_cluster",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Default)]
pub struct FilterReport {
    pub kept: Vec<ProteinSequence>,
    pub rejected: Vec<(ProteinSequence, RejectReason)>,
}

/// Splits `seqs` into kept and rejected. Sequences missing from a supplied
/// cluster map are kept.
pub fn filter_training_sequences(
    seqs: Vec<ProteinSequence>,
    cluster_map: Option<&HashMap<String, String>>,
) -> FilterReport {
    let cluster_sizes: HashMap<&str, usize> = cluster_map
        .map(|m| {
            let mut sizes = HashMap::new();
            for c in m.values() {
                *sizes.entry(c.as_str()).or_insert(0) += 1;
            }
            sizes
        })
        .unwrap_or_default();

    let mut report = FilterReport::default();
    for s in seqs {
        let reason = if s.has_excluded() {
            Some(RejectReason::NonStandardResidue)
        } else if s.residues().windows(2).any(|w| w == b"XX") {
            Some(RejectReason::ConsecutiveUnknown)
        } else {
            cluster_map
                .and_then(|m| m.get(s.id()))
                .filter(|c| cluster_sizes.get(c.as_str()).copied().unwrap_or(0) == 1)
                .map(|_| RejectReason::SingletonCluster)
        };
        match reason {
            Some(r) => report.rejected.push((s, r)),
            None => report.kept.push(s),
        }
    }
    report
}

/// CSV with columns `id,reason`.
pub fn write_rejection_report<W: Write>(out: W, report: &FilterReport) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "reason"])?;
    for (s, r) in &report.rejected {
        w.write_record([s.id(), r.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
