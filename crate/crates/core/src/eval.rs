//! Metrics, confusion matrices, error listings, score comparison and
//! corpus-shift reports.
//!
//! Scores are fractions in `[0, 1]`; rendering helpers print percentages with
//! two decimals. For single-label classification micro-averaged F1 equals
//! accuracy, and [`micro_f1`] computes it that way.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{class_distribution, compute_stats, Dataset};
use crate::error::{Error, Result};

pub const DEFAULT_OOS_LABEL: &str = "out-of-scope";

fn check_lengths<T>(gold: &[T], pred: &[T]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Micro-averaged F1 over all classes.
pub fn micro_f1<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<f64> {
    check_lengths(gold, pred)?;
    let hits = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| g.as_ref() == p.as_ref())
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 for every label that occurs as gold or
/// prediction. Any 0/0 is taken as 0.
pub fn per_intent_prf<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<BTreeMap<String, Prf>> {
    if gold.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} gold labels vs {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    // (true positives, gold count, predicted count)
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(pred) {
        let (g, p) = (g.as_ref(), p.as_ref());
        counts.entry(g).or_default().1 += 1;
        counts.entry(p).or_default().2 += 1;
        if g == p {
            counts.get_mut(g).unwrap().0 += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|(label, (tp, n_gold, n_pred))| {
            let precision = ratio(tp, n_pred);
            let recall = ratio(tp, n_gold);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            (
                label.to_string(),
                Prf {
                    precision,
                    recall,
                    f1,
                    support: n_gold,
                },
            )
        })
        .collect())
}

pub fn macro_f1(per_intent: &BTreeMap<String, Prf>) -> f64 {
    if per_intent.is_empty() {
        return 0.0;
    }
    per_intent.values().map(|p| p.f1).sum::<f64>() / per_intent.len() as f64
}

/// Gold × predicted counts over the sorted union of labels.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    pub fn new<S: AsRef<str>>(gold: &[S], pred: &[S]) -> Result<Self> {
        check_lengths(gold, pred)?;
        let labels: Vec<String> = gold
            .iter()
            .chain(pred)
            .map(|s| s.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0; labels.len()]; labels.len()];
        for (g, p) in gold.iter().zip(pred) {
            counts[index[g.as_ref()]][index[p.as_ref()]] += 1;
        }
        Ok(Confusion { labels, counts })
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.labels.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub utterance_text: String,
    pub gold: String,
    pub predicted: String,
}

impl ErrorRow {
    /// `text | gold | predicted`
    pub fn render(&self) -> String {
        format!("{} | {} | {}", self.utterance_text, self.gold, self.predicted)
    }
}

/// Mismatched rows in dataset order.
pub fn error_listing<S: AsRef<str>>(ds: &Dataset, pred: &[S]) -> Result<Vec<ErrorRow>> {
    if ds.len() != pred.len() {
        return Err(Error::Shape(format!("{} utterances vs {} predictions", ds.len(), pred.len())));
    }
    Ok(ds
        .utterances()
        .iter()
        .zip(pred)
        .filter(|(u, p)| u.intent != p.as_ref())
        .map(|(u, p)| ErrorRow {
            utterance_text: u.text.clone(),
            gold: u.intent.clone(),
            predicted: p.as_ref().to_string(),
        })
        .collect())
}

/// Plain-text table with columns Sample Utterance, Intent, Prediction.
pub fn render_error_table(rows: &[ErrorRow]) -> String {
    let mut out = String::from("Sample Utterance | Intent | Prediction\n");
    for r in rows {
        out.push_str(&r.render());
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_intent: BTreeMap<String, Prf>,
    pub confusion: Confusion,
    pub errors: Vec<ErrorRow>,
}

impl EvalReport {
    pub fn new<S: AsRef<str>>(ds: &Dataset, pred: &[S]) -> Result<Self> {
        let gold: Vec<&str> = ds.utterances().iter().map(|u| u.intent.as_str()).collect();
        let pred: Vec<&str> = pred.iter().map(|p| p.as_ref()).collect();
        let per_intent = per_intent_prf(&gold, &pred)?;
        Ok(EvalReport {
            micro_f1: micro_f1(&gold, &pred)?,
            macro_f1: macro_f1(&per_intent),
            per_intent,
            confusion: Confusion::new(&gold, &pred)?,
            errors: error_listing(ds, &pred)?,
        })
    }

    /// Per-intent table as percentages.
    pub fn render(&self) -> String {
        let width = self.per_intent.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}", "intent", "precision", "recall", "f1", "support");
        for (label, p) in &self.per_intent {
            let _ = writeln!(
                out,
                "{label:<width$}  {:>9.2}  {:>9.2}  {:>9.2}  {:>7}",
                100.0 * p.precision,
                100.0 * p.recall,
                100.0 * p.f1,
                p.support
            );
        }
        let _ = writeln!(out, "micro-F1 {:.2}  macro-F1 {:.2}", 100.0 * self.micro_f1, 100.0 * self.macro_f1);
        out
    }
}

/// A mean ± std score over repeated runs on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub dataset_fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gain {
    pub gain: f64,
    pub baseline_std: f64,
    pub candidate_std: f64,
}

/// `candidate.mean - baseline.mean`, refusing to compare scores from
/// different datasets.
pub fn compare_reports(baseline: &ScoreSummary, candidate: &ScoreSummary) -> Result<Gain> {
    if baseline.dataset_fingerprint != candidate.dataset_fingerprint {
        return Err(Error::FingerprintMismatch(
            baseline.dataset_fingerprint.clone(),
            candidate.dataset_fingerprint.clone(),
        ));
    }
    Ok(Gain {
        gain: candidate.mean - baseline.mean,
        baseline_std: baseline.std,
        candidate_std: candidate.std,
    })
}

/// `"95.88 ± 0.42"` for fractions 0.9588 and 0.0042.
pub fn format_score(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusProfile {
    pub name: String,
    pub n_samples: usize,
    pub vocab_size: usize,
    pub avg_words: f64,
    pub oos_share: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftReport {
    pub oos_label: String,
    pub a: CorpusProfile,
    pub b: CorpusProfile,
    /// Labels in A that never occur in B.
    pub unseen_a_to_b: BTreeSet<String>,
    pub unseen_b_to_a: BTreeSet<String>,
    /// Total-variation distance between the class distributions.
    pub class_divergence: f64,
}

fn profile(ds: &Dataset, oos_label: &str) -> Result<CorpusProfile> {
    let stats = compute_stats(ds)?;
    let oos = ds.utterances().iter().filter(|u| u.intent == oos_label).count();
    Ok(CorpusProfile {
        name: ds.name.clone(),
        n_samples: stats.n_samples,
        vocab_size: stats.vocab_size,
        avg_words: stats.avg_words_per_sample,
        oos_share: oos as f64 / stats.n_samples as f64,
    })
}

pub fn shift_report(a: &Dataset, b: &Dataset, oos_label: &str) -> Result<ShiftReport> {
    let (pa, pb) = (profile(a, oos_label)?, profile(b, oos_label)?);
    let (da, db) = (class_distribution(a), class_distribution(b));
    let labels: BTreeSet<&String> = da.keys().chain(db.keys()).collect();
    let share = |d: &BTreeMap<String, usize>, n: usize, l: &String| d.get(l).copied().unwrap_or(0) as f64 / n as f64;
    let tv = 0.5
        * labels
            .iter()
            .map(|l| (share(&da, a.len(), l) - share(&db, b.len(), l)).abs())
            .sum::<f64>();
    Ok(ShiftReport {
        oos_label: oos_label.to_string(),
        a: pa,
        b: pb,
        unseen_a_to_b: a.intents().difference(b.intents()).cloned().collect(),
        unseen_b_to_a: b.intents().difference(a.intents()).cloned().collect(),
        class_divergence: tv.clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Utterance;

    #[test]
    fn micro_f1_examples() {
        assert_eq!(micro_f1(&["a", "b"], &["a", "b"]).unwrap(), 1.0);
        assert_eq!(micro_f1(&["a", "a", "b", "b"], &["a", "b", "b", "b"]).unwrap(), 0.75);
        assert!(micro_f1(&["a"], &["a", "b"]).is_err());
        assert!(micro_f1::<&str>(&[], &[]).is_err());
    }

    #[test]
    fn prf_hand_case() {
        let m = per_intent_prf(&["a", "a", "b"], &["a", "b", "b"]).unwrap();
        assert_eq!(m["a"].precision, 1.0);
        assert_eq!(m["a"].recall, 0.5);
        assert!((m["a"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m["b"].precision, 0.5);
        assert_eq!(m["b"].recall, 1.0);
        assert!((m["b"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!(!m.contains_key("c"));
    }

    #[test]
    fn zero_over_zero_is_zero() {
        let m = per_intent_prf(&["a", "a"], &["b", "b"]).unwrap();
        assert_eq!(m["a"], Prf { precision: 0.0, recall: 0.0, f1: 0.0, support: 2 });
        assert_eq!(m["b"].support, 0);
        assert!(m.values().all(|p| p.f1.is_finite()));
    }

    #[test]
    fn perfect_class_has_unit_scores() {
        let g = ["x", "x", "x", "x", "y"];
        let m = per_intent_prf(&g, &g).unwrap();
        assert_eq!(m["x"], Prf { precision: 1.0, recall: 1.0, f1: 1.0, support: 4 });
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let g = ["a", "b", "b", "c"];
        let p = ["a", "c", "b", "c"];
        let c = Confusion::new(&g, &p).unwrap();
        assert_eq!(c.total(), 4);
        assert_eq!(c.trace(), 3);
        let prf = per_intent_prf(&g, &p).unwrap();
        for (i, l) in c.labels.iter().enumerate() {
            assert_eq!(c.row_sum(i), prf[l].support);
        }
    }

    #[test]
    fn error_rows_render_like_a_table() {
        let ds = Dataset::new(
            "t",
            vec![
                Utterance::new("1", "thirteen flowers!", "counting"),
                Utterance::new("2", "yes", "affirm"),
            ],
        )
        .unwrap();
        let rows = error_listing(&ds, &["answer-flowers", "affirm"]).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].render(), "thirteen flowers! | counting | answer-flowers");
        assert!(error_listing(&ds, &["counting", "affirm"]).unwrap().is_empty());
        let report = EvalReport::new(&ds, &["answer-flowers", "affirm"]).unwrap();
        assert_eq!(report.errors, rows);
        assert!(render_error_table(&rows).ends_with("thirteen flowers! | counting | answer-flowers\n"));
    }

    #[test]
    fn compare_requires_same_dataset() {
        let s = |m: f64, fp: &str| ScoreSummary { mean: m, std: 0.0, runs: 3, dataset_fingerprint: fp.into() };
        assert_eq!(compare_reports(&s(0.5, "x"), &s(0.5, "x")).unwrap().gain, 0.0);
        assert!(matches!(compare_reports(&s(0.5, "x"), &s(0.6, "y")), Err(Error::FingerprintMismatch(..))));
    }

    #[test]
    fn score_formatting() {
        assert_eq!(format_score(0.9588, 0.0042), "95.88 ± 0.42");
        assert_eq!(mean_std(&[0.9]), (0.9, 0.0));
    }

    #[test]
    fn identical_corpora_have_no_shift() {
        let ds = Dataset::new(
            "a",
            vec![Utterance::new("1", "hi", "greet"), Utterance::new("2", "blah", "out-of-scope")],
        )
        .unwrap();
        let r = shift_report(&ds, &ds, DEFAULT_OOS_LABEL).unwrap();
        assert_eq!(r.class_divergence, 0.0);
        assert!(r.unseen_a_to_b.is_empty() && r.unseen_b_to_a.is_empty());
        assert_eq!(r.a.oos_share, 0.5);
    }
}
