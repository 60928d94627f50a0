//! Rank and classification metrics. Degenerate inputs give `None`.

/// Ranks starting at 1, tied values sharing the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation; `None` when either vector has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "pearson needs equal lengths");
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Signed Spearman correlation: Pearson on average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman needs equal lengths");
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction
/// of (positive, negative) pairs ranked correctly, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "auc needs equal lengths");
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let ranks = average_ranks(scores);
    let pos_rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let (p, q) = (n_pos as f64, n_neg as f64);
    Some(((pos_rank_sum - p * (p + 1.0) / 2.0) / (p * q)).clamp(0.0, 1.0))
}

/// Median with the two middle values averaged for even lengths.
pub fn median(x: &[f64]) -> Option<f64> {
    if x.is_empty() {
        return None;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn tabulate(predicted: &[bool], labels: &[bool]) -> Self {
        let mut c = Self::default();
        for (&p, &l) in predicted.iter().zip(labels) {
            match (p, l) {
                (true, true) => c.tp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Matthews coefficient; `None` when the denominator vanishes.
    pub fn mcc(&self) -> Option<f64> {
        let [tp, tn, fp, fn_] = [self.tp, self.tn, self.fp, self.fn_].map(|v| v as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            return None;
        }
        Some(((tp * tn - fp * fn_) / den.sqrt()).clamp(-1.0, 1.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mcc {
    pub value: f64,
    /// The confusion table had an empty row or column; `value` is 0.
    pub degenerate: bool,
}

/// Matthews coefficient of predictions `score >= median(scores)` against
/// `labels`. `None` when the labels hold a single class.
pub fn mcc(scores: &[f64], labels: &[bool]) -> Option<Mcc> {
    assert_eq!(scores.len(), labels.len(), "mcc needs equal lengths");
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return None;
    }
    let threshold = median(scores)?;
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
    Some(match Confusion::tabulate(&predicted, labels).mcc() {
        Some(value) => Mcc { value, degenerate: false },
        None => Mcc { value: 0.0, degenerate: true },
    })
}
