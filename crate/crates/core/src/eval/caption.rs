//! Caption metrics: unseen-class F1, BLEU, ROUGE-L and a METEOR
//! approximation with exact, stem and synonym unigram matching.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases, drops apostrophes, turns other punctuation into spaces and
/// splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| *c != '\'' && *c != '\u{2019}')
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .to_lowercase();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Whole-word, contiguous mention of a (possibly multi-word) class name,
/// allowing a plural `s`/`es` on the final word.
pub fn mentions(tokens: &[String], class_name: &str) -> bool {
    let name = tokenize(class_name);
    if name.is_empty() || name.len() > tokens.len() {
        return false;
    }
    let last = name.len() - 1;
    tokens.windows(name.len()).any(|w| {
        w[..last] == name[..last] && {
            let t = &w[last];
            let n = &name[last];
            t == n || t.strip_prefix(n.as_str()).is_some_and(|rest| rest == "s" || rest == "es")
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: BTreeMap<String, f64>,
    pub average: f64,
}

/// Per-unseen-class F1 of class-name mentions in captions.
///
/// An image is a positive for class `c` when its label set contains `c`;
/// a caption hits `c` when it mentions the class name. Images without a
/// label entry are negatives for every class, images without a caption
/// mention nothing.
pub fn caption_f1(
    captions: &BTreeMap<String, String>,
    image_labels: &BTreeMap<String, BTreeSet<String>>,
    unseen: &BTreeSet<String>,
) -> F1Report {
    let empty = BTreeSet::new();
    let images: BTreeSet<&String> = captions.keys().chain(image_labels.keys()).collect();
    let tokens: BTreeMap<&String, Vec<String>> = images
        .iter()
        .map(|id| (*id, captions.get(*id).map(|c| tokenize(c)).unwrap_or_default()))
        .collect();
    let mut per_class = BTreeMap::new();
    for class in unseen {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for id in &images {
            let positive = image_labels.get(*id).unwrap_or(&empty).contains(class);
            let hit = mentions(&tokens[id], class);
            match (positive, hit) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.insert(class.clone(), f1);
    }
    let average = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    F1Report { per_class, average }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram statistics, accumulable over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BleuStats {
    matches: [usize; 4],
    totals: [usize; 4],
    candidate_len: usize,
    reference_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, candidate: &[String], references: &[Vec<String>]) -> Result<()> {
        if references.is_empty() {
            return Err(Error::InvalidArgument("BLEU needs at least one reference".into()));
        }
        let c = candidate.len();
        let closest = references
            .iter()
            .map(Vec::len)
            .min_by_key(|&r| (r.abs_diff(c), r))
            .expect("non-empty references");
        self.candidate_len += c;
        self.reference_len += closest;
        for n in 1..=4 {
            let cand = ngram_counts(candidate, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in references {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            self.matches[n - 1] += cand
                .iter()
                .map(|(g, k)| (*k).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            self.totals[n - 1] += c.saturating_sub(n - 1);
        }
        Ok(())
    }

    /// Cumulative BLEU-1..=max_n (geometric mean of precisions times brevity
    /// penalty). No smoothing: a zero precision zeroes every higher order.
    pub fn scores(&self, max_n: usize) -> Vec<f64> {
        let c = self.candidate_len as f64;
        let r = self.reference_len as f64;
        let bp = if self.candidate_len == 0 {
            0.0
        } else if c < r {
            (1.0 - r / c).exp()
        } else {
            1.0
        };
        let mut log_sum = 0.0;
        let mut dead = false;
        (1..=max_n)
            .map(|n| {
                let (m, t) = (self.matches[n - 1], self.totals[n - 1]);
                if m == 0 || t == 0 {
                    dead = true;
                }
                if dead {
                    return 0.0;
                }
                log_sum += (m as f64 / t as f64).ln();
                bp * (log_sum / n as f64).exp()
            })
            .collect()
    }
}

/// Sentence-level BLEU-1..=max_n.
pub fn bleu(candidate: &[String], references: &[Vec<String>], max_n: usize) -> Result<Vec<f64>> {
    if !(1..=4).contains(&max_n) {
        return Err(Error::InvalidArgument(format!("BLEU order {max_n} outside 1..=4")));
    }
    let mut stats = BleuStats::default();
    stats.add(candidate, references)?;
    Ok(stats.scores(max_n))
}

pub const ROUGE_BETA: f64 = 1.2;

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F-measure (beta = 1.2), maximized over references.
pub fn rouge_l(candidate: &[String], references: &[Vec<String>]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::InvalidArgument("ROUGE-L needs at least one reference".into()));
    }
    if candidate.is_empty() {
        return Ok(0.0);
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    Ok(references
        .iter()
        .map(|r| {
            let l = lcs_len(candidate, r);
            if l == 0 {
                return 0.0;
            }
            let p = l as f64 / candidate.len() as f64;
            let rc = l as f64 / r.len() as f64;
            (1.0 + b2) * p * rc / (rc + b2 * p)
        })
        .fold(0.0, f64::max))
}

/// Symmetric token synonym relation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SynonymTable {
    map: BTreeMap<String, BTreeSet<String>>,
}

impl SynonymTable {
    /// Parses `token: syn1, syn2` lines; `#` starts a comment.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = SynonymTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (head, rest) = line
                .split_once(':')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `token: syn1, syn2`"))?;
            let head = head.trim().to_lowercase();
            if head.is_empty() {
                return Err(Error::parse(path, i + 1, "empty token"));
            }
            for syn in rest.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()) {
                table.insert(&head, &syn);
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        SynonymTable::parse(&crate::io::read_text(path)?, path)
    }

    pub fn insert(&mut self, a: &str, b: &str) {
        if a == b {
            return;
        }
        self.map.entry(a.to_string()).or_default().insert(b.to_string());
        self.map.entry(b.to_string()).or_default().insert(a.to_string());
    }

    pub fn are_synonyms(&self, a: &str, b: &str) -> bool {
        self.map.get(a).is_some_and(|s| s.contains(b))
    }
}

/// Suffix-stripping stemmer: removes one of `sses`->`ss`, `ies`->`y`,
/// `ing`, `ed`, `s` (not after `s`) when at least three letters remain,
/// then a trailing `e`.
pub fn stem(word: &str) -> String {
    let mut w = word.to_string();
    let keep = |w: &str, suffix: &str| w.len() >= suffix.len() + 3 && w.ends_with(suffix);
    if keep(&w, "sses") {
        w.truncate(w.len() - 2);
    } else if keep(&w, "ies") {
        w.truncate(w.len() - 3);
        w.push('y');
    } else if keep(&w, "ing") {
        w.truncate(w.len() - 3);
    } else if keep(&w, "ed") {
        w.truncate(w.len() - 2);
    } else if keep(&w, "s") && !w.ends_with("ss") {
        w.truncate(w.len() - 1);
    }
    if w.len() > 3 && w.ends_with('e') {
        w.truncate(w.len() - 1);
    }
    w
}

pub const METEOR_ALPHA: f64 = 0.9;
pub const METEOR_GAMMA: f64 = 0.5;
pub const METEOR_BETA: f64 = 3.0;

/// Unigram alignment as (candidate index, reference index) pairs.
fn align(candidate: &[String], reference: &[String], synonyms: &SynonymTable) -> Vec<(usize, usize)> {
    let cand_stems: Vec<String> = candidate.iter().map(|w| stem(w)).collect();
    let ref_stems: Vec<String> = reference.iter().map(|w| stem(w)).collect();
    let mut cand_to_ref: Vec<Option<usize>> = vec![None; candidate.len()];
    let mut ref_used = vec![false; reference.len()];

    let stages: [&dyn Fn(usize, usize) -> bool; 3] = [
        &|i, j| candidate[i] == reference[j],
        &|i, j| cand_stems[i] == ref_stems[j],
        &|i, j| {
            synonyms.are_synonyms(&candidate[i], &reference[j])
                || synonyms.are_synonyms(&cand_stems[i], &ref_stems[j])
        },
    ];
    for matches in stages {
        for i in 0..candidate.len() {
            if cand_to_ref[i].is_some() {
                continue;
            }
            // Extend the previous candidate's chunk when possible.
            let preferred = i
                .checked_sub(1)
                .and_then(|p| cand_to_ref[p])
                .map(|j| j + 1)
                .filter(|&j| j < reference.len() && !ref_used[j] && matches(i, j));
            let pick = preferred.or_else(|| (0..reference.len()).find(|&j| !ref_used[j] && matches(i, j)));
            if let Some(j) = pick {
                cand_to_ref[i] = Some(j);
                ref_used[j] = true;
            }
        }
    }
    cand_to_ref
        .iter()
        .enumerate()
        .filter_map(|(i, j)| j.map(|j| (i, j)))
        .collect()
}

fn meteor_single(candidate: &[String], reference: &[String], synonyms: &SynonymTable) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let alignment = align(candidate, reference, synonyms);
    let m = alignment.len();
    if m == 0 {
        return 0.0;
    }
    let chunks = 1 + alignment
        .windows(2)
        .filter(|w| w[1].0 != w[0].0 + 1 || w[1].1 != w[0].1 + 1)
        .count();
    let p = m as f64 / candidate.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let f_mean = p * r / (METEOR_ALPHA * p + (1.0 - METEOR_ALPHA) * r);
    let penalty = METEOR_GAMMA * (chunks as f64 / m as f64).powf(METEOR_BETA);
    f_mean * (1.0 - penalty)
}

/// METEOR-style score from staged unigram alignment, maximized over
/// references.
pub fn meteor_lite(candidate: &[String], references: &[Vec<String>], synonyms: &SynonymTable) -> f64 {
    references
        .iter()
        .map(|r| meteor_single(candidate, r, synonyms))
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapEvalReport {
    pub per_class_f1: BTreeMap<String, f64>,
    pub avg_f1: f64,
    /// Corpus BLEU-1..4.
    pub bleu: [f64; 4],
    /// Mean sentence ROUGE-L.
    pub rouge_l: f64,
    /// Mean sentence METEOR-lite.
    pub meteor: f64,
    pub images: usize,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CapEvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (c, f) in &self.per_class_f1 {
            let _ = writeln!(out, "{:<20} F1 {:>6.2}", c, f * 100.0);
        }
        let _ = writeln!(
            out,
            "BLEU1 {:.1}  BLEU2 {:.1}  BLEU3 {:.1}  BLEU4 {:.1}  METEOR {:.1}  ROUGE-L {:.1}  Avg F1 {:.1}  ({} images)",
            self.bleu[0] * 100.0,
            self.bleu[1] * 100.0,
            self.bleu[2] * 100.0,
            self.bleu[3] * 100.0,
            self.meteor * 100.0,
            self.rouge_l * 100.0,
            self.avg_f1 * 100.0,
            self.images
        );
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}

/// Scores captions against references and unseen-class labels.
pub fn evaluate_captions(
    captions: &BTreeMap<String, String>,
    references: &BTreeMap<String, Vec<String>>,
    image_labels: &BTreeMap<String, BTreeSet<String>>,
    unseen: &BTreeSet<String>,
    synonyms: &SynonymTable,
) -> Result<CapEvalReport> {
    let mut warnings = Vec::new();
    let f1 = caption_f1(captions, image_labels, unseen);
    let mut stats = BleuStats::default();
    let mut rouge_sum = 0.0;
    let mut meteor_sum = 0.0;
    let mut scored = 0usize;
    for (id, caption) in captions {
        let refs: Vec<Vec<String>> = match references.get(id) {
            Some(r) if !r.is_empty() => r.iter().map(|s| tokenize(s)).collect(),
            _ => {
                warnings.push(format!("image `{id}` has no reference captions; skipped for n-gram metrics"));
                continue;
            }
        };
        let cand = tokenize(caption);
        stats.add(&cand, &refs)?;
        rouge_sum += rouge_l(&cand, &refs)?;
        meteor_sum += meteor_lite(&cand, &refs, synonyms);
        scored += 1;
    }
    if scored == 0 {
        warnings.push("no captioned images with references; metrics set to 0".into());
    }
    let b = stats.scores(4);
    let mean = |s: f64| if scored == 0 { 0.0 } else { s / scored as f64 };
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CapEvalReport {
        per_class_f1: f1.per_class,
        avg_f1: f1.average,
        bleu: [b[0], b[1], b[2], b[3]],
        rouge_l: mean(rouge_sum),
        meteor: mean(meteor_sum),
        images: scored,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer_strips_punctuation() {
        assert_eq!(t("A red Bus, driving-down the street."), t("a red bus driving down the street"));
        assert_eq!(t("don't"), vec!["dont"]);
    }

    #[test]
    fn mention_rules() {
        assert!(mentions(&t("a couple of zebras standing"), "zebra"));
        assert!(mentions(&t("two buses"), "bus"));
        assert!(!mentions(&t("a zebrafish"), "zebra"));
        assert!(mentions(&t("hitting a tennis racket"), "tennis racket"));
        assert!(!mentions(&t("tennis player with a racket"), "tennis racket"));
    }

    fn labels(pairs: &[(&str, &[&str])]) -> BTreeMap<String, BTreeSet<String>> {
        pairs
            .iter()
            .map(|(id, ls)| (id.to_string(), ls.iter().map(|s| s.to_string()).collect()))
            .collect()
    }

    fn caps(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn f1_is_zero_without_mentions() {
        let c = caps(&[("1", "a horse in a field"), ("2", "a train on tracks")]);
        let l = labels(&[("1", &["zebra"]), ("2", &["bus"])]);
        let unseen: BTreeSet<String> = ["zebra".into(), "bus".into()].into();
        let r = caption_f1(&c, &l, &unseen);
        assert_eq!(r.average, 0.0);
        assert!(r.per_class.values().all(|v| *v == 0.0));
    }

    #[test]
    fn f1_hand_count() {
        let c = caps(&[
            ("1", "a zebra grazing"),
            ("2", "a horse grazing"),
            ("3", "a zebra next to a car"),
        ]);
        let l = labels(&[("1", &["zebra"]), ("2", &["zebra"]), ("3", &["car"])]);
        let unseen: BTreeSet<String> = ["zebra".into()].into();
        assert_relative_eq!(caption_f1(&c, &l, &unseen).average, 0.5);
    }

    #[test]
    fn f1_perfect() {
        let c = caps(&[("1", "zebras"), ("2", "a dog")]);
        let l = labels(&[("1", &["zebra"]), ("2", &[])]);
        let unseen: BTreeSet<String> = ["zebra".into()].into();
        assert_eq!(caption_f1(&c, &l, &unseen).average, 1.0);
    }

    #[test]
    fn bleu_identical_is_one() {
        let s = t("a red bus driving down a road");
        assert_eq!(bleu(&s, &[s.clone()], 4).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn bleu_clipped_unigrams() {
        let b = bleu(&t("the the the the"), &[t("the cat sat")], 1).unwrap();
        assert_relative_eq!(b[0], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty() {
        let b = bleu(&t("the cat"), &[t("the cat sat down")], 1).unwrap();
        assert_relative_eq!(b[0], (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(b[0], 0.3679, epsilon = 1e-4);
    }

    #[test]
    fn bleu_edge_cases() {
        assert_eq!(bleu(&[], &[t("a b")], 4).unwrap(), vec![0.0; 4]);
        assert!(bleu(&t("a"), &[], 4).is_err());
        assert!(bleu(&t("a"), &[t("a")], 5).is_err());
    }

    #[test]
    fn rouge_examples() {
        let s = t("a b c d");
        assert_eq!(rouge_l(&s, &[s.clone()]).unwrap(), 1.0);
        assert_relative_eq!(rouge_l(&s, &[t("a c b d")]).unwrap(), 0.75, epsilon = 1e-12);
        assert_eq!(rouge_l(&s, &[t("x y z")]).unwrap(), 0.0);
        assert_eq!(rouge_l(&[], &[t("x")]).unwrap(), 0.0);
    }

    #[test]
    fn meteor_examples() {
        let none = SynonymTable::default();
        let s = t("a couple of zebra standing");
        assert_relative_eq!(meteor_lite(&s, &[s.clone()], &none), 0.996, epsilon = 1e-12);
        assert_eq!(meteor_lite(&t("x y"), &[t("a b")], &none), 0.0);
        let syn = SynonymTable::parse("couch: sofa\n", Path::new("s")).unwrap();
        assert_relative_eq!(meteor_lite(&t("sofa"), &[t("couch")], &syn), 0.5, epsilon = 1e-12);
        assert_eq!(meteor_lite(&t("sofa"), &[t("couch")], &none), 0.0);
    }

    #[test]
    fn meteor_stem_stage() {
        let none = SynonymTable::default();
        assert_relative_eq!(meteor_lite(&t("horses"), &[t("horse")], &none), 0.5, epsilon = 1e-12);
        assert_eq!(stem("driving"), stem("drive"));
        assert_eq!(stem("buses"), stem("bus"));
    }

    #[test]
    fn synonym_file_errors() {
        assert!(SynonymTable::parse("no colon here\n", Path::new("s")).is_err());
    }

    fn words() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(String::from), 0..8)
    }

    proptest! {
        #[test]
        fn metrics_bounded(c in words(), r in prop::collection::vec(words().prop_filter("nonempty", |w| !w.is_empty()), 1..3)) {
            let syn = SynonymTable::default();
            for b in bleu(&c, &r, 4).unwrap() {
                prop_assert!((0.0..=1.0).contains(&b));
            }
            let rl = rouge_l(&c, &r).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&rl));
            let m = meteor_lite(&c, &r, &syn);
            prop_assert!((0.0..=1.0).contains(&m));
            if r.contains(&c) {
                prop_assert!((rl - 1.0).abs() < 1e-12);
                prop_assert!(m >= 1.0 - 0.5 / (c.len() as f64).powi(3) - 1e-12);
            }
        }
    }
}
