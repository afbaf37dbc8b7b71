//! Labeled utterance corpora: JSONL loading and validation, tokenization,
//! summary statistics and stratified fold assignment.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::Fnv1a;

/// Character-offset span (`end` exclusive) with its entity label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity: String,
    pub value: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub intent: String,
    #[serde(default)]
    pub entities: Vec<EntitySpan>,
}

impl Utterance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, intent: impl Into<String>) -> Self {
        Utterance {
            id: id.into(),
            text: text.into(),
            intent: intent.into(),
            entities: Vec::new(),
        }
    }

    /// Checks the per-utterance invariants.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.text.trim().is_empty() {
            return Err(format!("utterance {:?}: empty text", self.id));
        }
        if self.intent.is_empty() {
            return Err(format!("utterance {:?}: empty intent", self.id));
        }
        let len = self.text.chars().count();
        let mut spans: Vec<&EntitySpan> = self.entities.iter().collect();
        spans.sort_by_key(|e| (e.start, e.end));
        for e in &spans {
            if e.start >= e.end || e.end > len {
                return Err(format!(
                    "utterance {:?}: entity span [{}, {}) out of bounds for text of {len} chars",
                    self.id, e.start, e.end
                ));
            }
            if e.entity.is_empty() {
                return Err(format!("utterance {:?}: empty entity label", self.id));
            }
        }
        for w in spans.windows(2) {
            if w[1].start < w[0].end {
                return Err(format!(
                    "utterance {:?}: overlapping entity spans [{}, {}) and [{}, {})",
                    self.id, w[0].start, w[0].end, w[1].start, w[1].end
                ));
            }
        }
        Ok(())
    }
}

/// A named corpus. `intents` and `entity_types` are always derived from the
/// utterances, never set independently.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    utterances: Vec<Utterance>,
    intents: BTreeSet<String>,
    entity_types: BTreeSet<String>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = HashSet::new();
        for u in &utterances {
            u.validate().map_err(Error::Dataset)?;
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Dataset(format!("duplicate id {:?}", u.id)));
            }
        }
        Ok(Self::from_validated(name.into(), utterances))
    }

    fn from_validated(name: String, utterances: Vec<Utterance>) -> Self {
        let intents = utterances.iter().map(|u| u.intent.clone()).collect();
        let entity_types = utterances
            .iter()
            .flat_map(|u| u.entities.iter().map(|e| e.entity.clone()))
            .collect();
        Dataset {
            name,
            utterances,
            intents,
            entity_types,
        }
    }

    pub fn utterances(&self) -> &[Utterance] {
        &self.utterances
    }

    pub fn intents(&self) -> &BTreeSet<String> {
        &self.intents
    }

    pub fn entity_types(&self) -> &BTreeSet<String> {
        &self.entity_types
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Sub-corpus made of the utterances at `indices` (in that order).
    pub fn subset(&self, name: impl Into<String>, indices: &[usize]) -> Dataset {
        let utts = indices.iter().map(|&i| self.utterances[i].clone()).collect();
        Self::from_validated(name.into(), utts)
    }

    /// Content hash over ids, texts, intents and entity spans.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        for u in &self.utterances {
            h.write_str(&u.id).write_str(&u.text).write_str(&u.intent);
            for e in &u.entities {
                h.write(&(e.start as u64).to_le_bytes())
                    .write(&(e.end as u64).to_le_bytes())
                    .write_str(&e.entity);
            }
        }
        h.finish()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            out.push_str(&serde_json::to_string(u).expect("utterance serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }
}

/// Parses JSONL corpus text. `source` names the input in error messages.
pub fn parse_dataset(name: &str, source: &str, content: &str) -> Result<Dataset> {
    let mut utterances = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno,
            msg,
        };
        let u: Utterance = serde_json::from_str(line).map_err(|e| perr(e.to_string()))?;
        u.validate().map_err(perr)?;
        if !seen.insert(u.id.clone()) {
            return Err(perr(format!("duplicate id {:?}", u.id)));
        }
        utterances.push(u);
    }
    if utterances.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(Dataset::from_validated(name.to_string(), utterances))
}

/// Loads a JSONL dataset; the dataset is named after the file stem.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let content = String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg: format!("not valid UTF-8: {e}"),
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, &path.display().to_string(), &content)
}

/// A normalized token with the character range it came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Whitespace tokenization with lowercasing; leading and trailing
/// non-alphanumeric characters are stripped from each token and tokens that
/// end up empty are dropped. Offsets are in chars of the original text.
pub fn tokenize_with_offsets(text: &str) -> Vec<Token> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let mut j = i;
        while j < chars.len() && !chars[j].is_whitespace() {
            j += 1;
        }
        let (mut s, mut e) = (i, j);
        while s < e && !is_word_char(chars[s]) {
            s += 1;
        }
        while e > s && !is_word_char(chars[e - 1]) {
            e -= 1;
        }
        if s < e {
            let text: String = chars[s..e].iter().collect::<String>().to_lowercase();
            out.push(Token { text, start: s, end: e });
        }
        i = j;
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_offsets(text).into_iter().map(|t| t.text).collect()
}

/// Raw whitespace word count (no stripping), as used for corpus statistics.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_intents: usize,
    pub n_samples: usize,
    pub min_samples_per_intent: usize,
    pub max_samples_per_intent: usize,
    pub avg_samples_per_intent: f64,
    pub vocab_size: usize,
    pub total_words: usize,
    pub min_words_per_sample: usize,
    pub max_words_per_sample: usize,
    pub avg_words_per_sample: f64,
}

/// Corpus statistics. Word counts and the vocabulary use raw whitespace words
/// (vocabulary entries lowercased) so the numbers line up with hand counts.
pub fn compute_stats(ds: &Dataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let dist = class_distribution(ds);
    let mut vocab = HashSet::new();
    let (mut total, mut min_w, mut max_w) = (0usize, usize::MAX, 0usize);
    for u in ds.utterances() {
        let mut n = 0;
        for w in u.text.split_whitespace() {
            vocab.insert(w.to_lowercase());
            n += 1;
        }
        total += n;
        min_w = min_w.min(n);
        max_w = max_w.max(n);
    }
    let n_samples = ds.len();
    Ok(DatasetStats {
        n_intents: dist.len(),
        n_samples,
        min_samples_per_intent: dist.values().copied().min().unwrap_or(0),
        max_samples_per_intent: dist.values().copied().max().unwrap_or(0),
        avg_samples_per_intent: n_samples as f64 / dist.len() as f64,
        vocab_size: vocab.len(),
        total_words: total,
        min_words_per_sample: min_w,
        max_words_per_sample: max_w,
        avg_words_per_sample: total as f64 / n_samples as f64,
    })
}

pub fn class_distribution(ds: &Dataset) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for u in ds.utterances() {
        *counts.entry(u.intent.clone()).or_insert(0) += 1;
    }
    counts
}

/// Assignment of every utterance to one of `k` folds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// utterance id -> fold index
    pub assignment: BTreeMap<String, usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl FoldPlan {
    /// (train, test) utterance indices for fold `f`, in dataset order.
    pub fn split(&self, ds: &Dataset, f: usize) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, u) in ds.utterances().iter().enumerate() {
            if self.assignment[&u.id] == f {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Stratified k-fold assignment. Within each class (in label order) members
/// are shuffled with the seed and dealt round-robin; the dealing position
/// carries over between classes so overall fold sizes stay within one of each
/// other. Classes smaller than `k` are kept (some folds lack them) and noted
/// in `warnings`.
pub fn stratified_kfold(ds: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > ds.len() {
        return Err(Error::Config(format!(
            "k = {k} exceeds the number of samples ({})",
            ds.len()
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, u) in ds.utterances().iter().enumerate() {
        by_class.entry(u.intent.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = BTreeMap::new();
    let mut warnings = Vec::new();
    let mut next = 0usize;
    for (label, mut members) in by_class {
        if members.len() < k {
            warnings.push(format!(
                "intent {label:?} has {} samples, fewer than {k} folds",
                members.len()
            ));
        }
        members.shuffle(&mut rng);
        for i in members {
            assignment.insert(ds.utterances()[i].id.clone(), next % k);
            next += 1;
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(FoldPlan {
        k,
        seed,
        assignment,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(items: &[(&str, &str)]) -> Dataset {
        let utts = items
            .iter()
            .enumerate()
            .map(|(i, (text, intent))| Utterance::new(format!("u{i}"), *text, *intent))
            .collect();
        Dataset::new("t", utts).unwrap()
    }

    #[test]
    fn parses_two_lines() {
        let content = "{\"id\":\"u1\",\"text\":\"yes\",\"intent\":\"affirm\"}\n{\"id\":\"u2\",\"text\":\"no\",\"intent\":\"deny\"}\n";
        let d = parse_dataset("t", "mem", content).unwrap();
        assert_eq!(d.len(), 2);
        let intents: Vec<_> = d.intents().iter().cloned().collect();
        assert_eq!(intents, vec!["affirm", "deny"]);
        assert!(d.utterances()[0].entities.is_empty());
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_dataset("t", "mem", "").unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }

    #[test]
    fn span_out_of_bounds_reports_line() {
        let content = "{\"id\":\"u1\",\"text\":\"yes\",\"intent\":\"affirm\"}\n{\"id\":\"u2\",\"text\":\"hello\",\"intent\":\"greet\",\"entities\":[{\"start\":0,\"end\":99,\"entity\":\"x\",\"value\":\"hello\"}]}\n";
        match parse_dataset("t", "mem", content).unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("out of bounds"), "{msg}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let content = "{\"id\":\"u1\",\"text\":\"yes\",\"intent\":\"affirm\"}\n{not json\n";
        assert!(matches!(
            parse_dataset("t", "mem", content).unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn missing_field_and_duplicates() {
        let missing = "{\"id\":\"u1\",\"text\":\"yes\"}\n";
        assert!(matches!(
            parse_dataset("t", "mem", missing).unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
        let dup = "{\"id\":\"u1\",\"text\":\"yes\",\"intent\":\"a\"}\n{\"id\":\"u1\",\"text\":\"no\",\"intent\":\"b\"}\n";
        let err = parse_dataset("t", "mem", dup).unwrap_err();
        assert!(err.to_string().contains("duplicate id"), "{err}");
    }

    #[test]
    fn overlapping_spans_rejected() {
        let line = "{\"id\":\"u1\",\"text\":\"ten more flowers\",\"intent\":\"c\",\"entities\":[{\"start\":0,\"end\":8,\"entity\":\"a\",\"value\":\"ten more\"},{\"start\":4,\"end\":16,\"entity\":\"b\",\"value\":\"more flowers\"}]}";
        let err = parse_dataset("t", "mem", line).unwrap_err();
        assert!(err.to_string().contains("overlapping"), "{err}");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("thirteen flowers!"), vec!["thirteen", "flowers"]);
        assert_eq!(tokenize("Yes"), vec!["yes"]);
        assert_eq!(tokenize("we need ten more to water").len(), 6);
        assert_eq!(tokenize("?! ..."), Vec::<String>::new());
        assert_eq!(tokenize("we're \"done\""), vec!["we're", "done"]);
    }

    #[test]
    fn token_offsets_point_into_text() {
        let text = "Oh, Thirteen flowers!";
        let toks = tokenize_with_offsets(text);
        let chars: Vec<char> = text.chars().collect();
        for t in toks {
            let s: String = chars[t.start..t.end].iter().collect();
            assert_eq!(s.to_lowercase(), t.text);
        }
    }

    #[test]
    fn stats_single_utterance() {
        let s = compute_stats(&ds(&[("hi", "greet")])).unwrap();
        assert_eq!(s.n_samples, 1);
        assert_eq!(s.n_intents, 1);
        assert_eq!(s.vocab_size, 1);
        assert_eq!((s.min_samples_per_intent, s.max_samples_per_intent), (1, 1));
        assert_eq!(s.avg_samples_per_intent, 1.0);
        assert_eq!((s.min_words_per_sample, s.max_words_per_sample), (1, 1));
        assert_eq!(s.avg_words_per_sample, 1.0);
    }

    #[test]
    fn stats_use_raw_whitespace_words() {
        let s = compute_stats(&ds(&[("thirteen flowers!", "c"), ("Thirteen  flowers!", "c")])).unwrap();
        assert_eq!(s.total_words, 4);
        assert_eq!(s.vocab_size, 2);
    }

    #[test]
    fn distribution_counts() {
        let d = ds(&[("a", "affirm"), ("b", "affirm"), ("c", "affirm"), ("d", "deny")]);
        let dist = class_distribution(&d);
        assert_eq!(dist.get("affirm"), Some(&3));
        assert_eq!(dist.get("deny"), Some(&1));
        assert_eq!(dist.len(), 2);
    }

    #[test]
    fn unseen_labels_by_set_difference() {
        let a = ds(&[("x", "affirm"), ("y", "next-step"), ("z", "deny")]);
        let b = ds(&[("x", "affirm"), ("z", "deny"), ("w", "deny")]);
        let db = class_distribution(&b);
        let unseen: Vec<String> = class_distribution(&a)
            .into_keys()
            .filter(|k| !db.contains_key(k))
            .collect();
        assert_eq!(unseen, vec!["next-step"]);
    }

    #[test]
    fn kfold_two_by_two() {
        let d = ds(&[("a", "x"), ("b", "x"), ("c", "y"), ("d", "y")]);
        let plan = stratified_kfold(&d, 2, 11).unwrap();
        for f in 0..2 {
            let (_, test) = plan.split(&d, f);
            let labels: BTreeSet<_> = test.iter().map(|&i| d.utterances()[i].intent.as_str()).collect();
            assert_eq!(test.len(), 2);
            assert_eq!(labels.len(), 2);
        }
        assert_eq!(plan, stratified_kfold(&d, 2, 11).unwrap());
        assert!(plan.warnings.is_empty());
    }

    #[test]
    fn kfold_rare_class_round_robin() {
        // 10 of "a" then 3 of "b" dealt over 10 folds: "a" fills folds 0..9,
        // "b" continues at folds 0, 1, 2.
        let mut items: Vec<(&str, &str)> = vec![("x", "a"); 10];
        items.extend([("y", "b"); 3]);
        let d = ds(&items);
        let plan = stratified_kfold(&d, 10, 3).unwrap();
        let mut sizes = plan.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 1, 1, 1, 1, 2, 2, 2]);
        let b_folds: BTreeSet<usize> = d
            .utterances()
            .iter()
            .filter(|u| u.intent == "b")
            .map(|u| plan.assignment[&u.id])
            .collect();
        assert_eq!(b_folds.len(), 3);
        assert_eq!(plan.warnings.len(), 1);
    }

    #[test]
    fn kfold_rejects_bad_k() {
        let d = ds(&[("a", "x"), ("b", "y")]);
        assert!(stratified_kfold(&d, 3, 0).is_err());
        assert!(stratified_kfold(&d, 1, 0).is_err());
    }
}
