//! Captioning and classification metrics written from their standard definitions:
//! BLEU-1/2, ROUGE-L, METEOR (exact-match module only), CIDEr-D, accuracy and
//! answer-format failure rate.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use crate::canonical::Canon;
use crate::error::{Error, Result};
use crate::mllm::ParsedAnswer;

/// Lowercased tokens split on every run of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Ordered so every floating-point sum over n-grams runs in a fixed order.
fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut counts = BTreeMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(AsRef::as_ref).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Sentence BLEU with uniform weights over 1..=n-grams and no smoothing.
pub fn bleu<S: AsRef<str>>(candidate: &[S], references: &[Vec<S>], n: usize) -> Result<f64> {
    bleu_with(candidate, references, n, None)
}

/// Sentence BLEU. With `epsilon`, zero clipped counts are replaced by
/// `epsilon` instead of zeroing the score.
pub fn bleu_with<S: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<S>],
    n: usize,
    epsilon: Option<f64>,
) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::Argument("BLEU needs at least one reference".into()));
    }
    if n == 0 {
        return Err(Error::Argument("BLEU order must be at least 1".into()));
    }
    let c = candidate.len();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for m in 1..=n {
        let cand = ngram_counts(candidate, m);
        let mut max_ref: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
        for r in references {
            for (gram, count) in ngram_counts(r, m) {
                let slot = max_ref.entry(gram).or_insert(0);
                *slot = (*slot).max(count);
            }
        }
        let total = c.saturating_sub(m - 1);
        let clipped: usize = cand
            .iter()
            .map(|(g, &cnt)| cnt.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let precision = match (clipped, epsilon) {
            (0, None) => return Ok(0.0),
            (_, _) if total == 0 => return Ok(0.0),
            (0, Some(eps)) => eps / total as f64,
            (k, _) => k as f64 / total as f64,
        };
        log_sum += precision.ln();
    }
    // Closest reference length, shorter wins ties.
    let r = references
        .iter()
        .map(Vec::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("non-empty references");
    let brevity = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(brevity * (log_sum / n as f64).exp())
}

fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = if x.as_ref() == y.as_ref() {
                diag + 1
            } else {
                above.max(row[j])
            };
            diag = above;
        }
    }
    row[b.len()]
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// One-to-one exact-token alignment built greedily from the longest remaining
/// common runs, which keeps chunks few. Returns `(candidate, reference)` pairs
/// sorted by candidate position.
pub fn meteor_alignment<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<(usize, usize)> {
    let mut cand_used = vec![false; candidate.len()];
    let mut ref_used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    loop {
        let mut best = (0usize, 0usize, 0usize); // (len, i, j)
        for i in 0..candidate.len() {
            for j in 0..reference.len() {
                let mut len = 0;
                while i + len < candidate.len()
                    && j + len < reference.len()
                    && !cand_used[i + len]
                    && !ref_used[j + len]
                    && candidate[i + len].as_ref() == reference[j + len].as_ref()
                {
                    len += 1;
                }
                if len > best.0 {
                    best = (len, i, j);
                }
            }
        }
        let (len, i, j) = best;
        if len == 0 {
            break;
        }
        for d in 0..len {
            cand_used[i + d] = true;
            ref_used[j + d] = true;
            pairs.push((i + d, j + d));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Number of maximal runs of alignment pairs contiguous in both strings.
pub fn chunk_count(pairs: &[(usize, usize)]) -> usize {
    if pairs.is_empty() {
        return 0;
    }
    1 + pairs
        .windows(2)
        .filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1))
        .count()
}

/// METEOR with exact matching: `F = 10PR/(R+9P)`, penalty `0.5 (chunks/m)^3`.
pub fn meteor<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let pairs = meteor_alignment(candidate, reference);
    meteor_from_alignment(candidate.len(), reference.len(), &pairs)
}

pub fn meteor_from_alignment(cand_len: usize, ref_len: usize, pairs: &[(usize, usize)]) -> f64 {
    let m = pairs.len();
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / cand_len as f64;
    let r = m as f64 / ref_len as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunk_count(pairs) as f64 / m as f64;
    let penalty = 0.5 * frag.powi(3);
    f_mean * (1.0 - penalty)
}

const CIDER_MAX_N: usize = 4;
const CIDER_SIGMA: f64 = 6.0;

struct CiderVec<'a> {
    weights: [BTreeMap<Vec<&'a str>, f64>; CIDER_MAX_N],
    norms: [f64; CIDER_MAX_N],
    len: usize,
}

fn cider_vec<'a, S: AsRef<str>>(tokens: &'a [S], df: &BTreeMap<Vec<&str>, usize>, log_n: f64) -> CiderVec<'a> {
    let mut weights: [BTreeMap<Vec<&str>, f64>; CIDER_MAX_N] = Default::default();
    let mut norms = [0.0; CIDER_MAX_N];
    for n in 1..=CIDER_MAX_N {
        for (gram, tf) in ngram_counts(tokens, n) {
            let doc_freq = df.get(&gram).copied().unwrap_or(0).max(1) as f64;
            let w = tf as f64 * (log_n - doc_freq.ln());
            norms[n - 1] += w * w;
            weights[n - 1].insert(gram, w);
        }
        norms[n - 1] = norms[n - 1].sqrt();
    }
    CiderVec {
        weights,
        norms,
        len: tokens.len(),
    }
}

fn cider_sim(cand: &CiderVec<'_>, reference: &CiderVec<'_>) -> f64 {
    let delta = cand.len as f64 - reference.len as f64;
    let gauss = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut total = 0.0;
    for n in 0..CIDER_MAX_N {
        let mut dot = 0.0;
        for (gram, &w) in &cand.weights[n] {
            if let Some(&rw) = reference.weights[n].get(gram) {
                dot += w.min(rw) * rw;
            }
        }
        if cand.norms[n] != 0.0 && reference.norms[n] != 0.0 {
            dot /= cand.norms[n] * reference.norms[n];
        }
        total += dot * gauss;
    }
    total / CIDER_MAX_N as f64
}

/// Corpus CIDEr-D. Document frequencies are counted over the reference sets of
/// the corpus itself (one document per candidate).
pub fn cider_d<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Argument(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::Argument("CIDEr-D needs a non-empty corpus".into()));
    }
    if let Some(i) = references.iter().position(Vec::is_empty) {
        return Err(Error::Argument(format!("reference set {i} is empty")));
    }
    let mut df: BTreeMap<Vec<&str>, usize> = BTreeMap::new();
    for refs in references {
        let mut seen: BTreeSet<Vec<&str>> = BTreeSet::new();
        for r in refs {
            for n in 1..=CIDER_MAX_N {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for gram in seen {
            *df.entry(gram).or_insert(0) += 1;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let mut sum = 0.0;
    for (cand, refs) in candidates.iter().zip(references) {
        let cv = cider_vec(cand, &df, log_n);
        let per_ref: f64 = refs.iter().map(|r| cider_sim(&cv, &cider_vec(r, &df, log_n))).sum();
        sum += 10.0 * per_ref / refs.len() as f64;
    }
    Ok(sum / candidates.len() as f64)
}

/// Fraction of case-insensitive exact matches.
pub fn accuracy<S: AsRef<str>, T: AsRef<str>>(preds: &[S], golds: &[T]) -> Result<f64> {
    if preds.len() != golds.len() {
        return Err(Error::Argument(format!(
            "{} predictions but {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Argument("accuracy over an empty set".into()));
    }
    let hits = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p.as_ref().to_lowercase() == g.as_ref().to_lowercase())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Fraction of answers that broke the required output format.
pub fn failure_rate(parsed: &[ParsedAnswer]) -> Result<f64> {
    if parsed.is_empty() {
        return Err(Error::Argument("failure rate over an empty set".into()));
    }
    Ok(parsed.iter().filter(|p| p.is_failure).count() as f64 / parsed.len() as f64)
}

/// One line of an evaluation file.
#[derive(Debug, Clone, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub prediction: String,
    pub references: Vec<String>,
    pub category_pred: String,
    pub category_gold: String,
    pub tool_pred: String,
    pub tool_gold: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider_d: f64,
    pub category_accuracy: f64,
    pub tool_accuracy: f64,
    pub count: usize,
}

impl MetricReport {
    /// Sentence-level BLEU, ROUGE-L and METEOR are averaged over records;
    /// ROUGE-L and METEOR take the best reference. CIDEr-D is corpus-level.
    pub fn evaluate(records: &[EvalRecord]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Argument("no evaluation records".into()));
        }
        let cands: Vec<Vec<String>> = records.iter().map(|r| tokenize(&r.prediction)).collect();
        let refs: Vec<Vec<Vec<String>>> = records
            .iter()
            .map(|r| r.references.iter().map(|s| tokenize(s)).collect())
            .collect();
        let n = records.len() as f64;
        let (mut b1, mut b2, mut rl, mut mt) = (0.0, 0.0, 0.0, 0.0);
        for (rec, (c, rs)) in records.iter().zip(cands.iter().zip(&refs)) {
            if rs.is_empty() {
                return Err(Error::Argument(format!("record {} has no references", rec.id)));
            }
            b1 += bleu(c, rs, 1)?;
            b2 += bleu(c, rs, 2)?;
            rl += rs.iter().map(|r| rouge_l(c, r)).fold(0.0, f64::max);
            mt += rs.iter().map(|r| meteor(c, r)).fold(0.0, f64::max);
        }
        let cat_p: Vec<&str> = records.iter().map(|r| r.category_pred.as_str()).collect();
        let cat_g: Vec<&str> = records.iter().map(|r| r.category_gold.as_str()).collect();
        let tool_p: Vec<&str> = records.iter().map(|r| r.tool_pred.as_str()).collect();
        let tool_g: Vec<&str> = records.iter().map(|r| r.tool_gold.as_str()).collect();
        Ok(MetricReport {
            bleu1: b1 / n,
            bleu2: b2 / n,
            rouge_l: rl / n,
            meteor: mt / n,
            cider_d: cider_d(&cands, &refs)?,
            category_accuracy: accuracy(&cat_p, &cat_g)?,
            tool_accuracy: accuracy(&tool_p, &tool_g)?,
            count: records.len(),
        })
    }

    pub fn to_canon(&self) -> Canon {
        Canon::obj([
            ("bleu1", Canon::Fixed(self.bleu1)),
            ("bleu2", Canon::Fixed(self.bleu2)),
            ("category_accuracy", Canon::Fixed(self.category_accuracy)),
            ("cider_d", Canon::Fixed(self.cider_d)),
            ("count", Canon::uint(self.count)),
            ("meteor", Canon::Fixed(self.meteor)),
            ("rouge_l", Canon::Fixed(self.rouge_l)),
            ("tool_accuracy", Canon::Fixed(self.tool_accuracy)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn tokenizer() {
        assert_eq!(toks("Open the File-menu."), vec!["open", "the", "file", "menu"]);
        assert!(toks("").is_empty());
        assert_eq!(toks("A  b"), vec!["a", "b"]);
    }

    #[test]
    fn bleu_examples() {
        let c = toks("the cat sat on the mat");
        assert_eq!(bleu(&c, std::slice::from_ref(&c), 2).unwrap(), 1.0);
        let got = bleu(&toks("the cat sat"), &[toks("the cat sat down")], 1).unwrap();
        assert!((got - (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        assert_eq!(bleu(&toks("dog runs"), &[toks("the cat sat")], 1).unwrap(), 0.0);
        assert_eq!(bleu::<String>(&[], &[toks("a b")], 1).unwrap(), 0.0);
        assert!(bleu(&toks("a"), &Vec::<Vec<String>>::new(), 1).is_err());
        // single token candidate has no bigrams
        assert_eq!(bleu(&toks("a"), &[toks("a")], 2).unwrap(), 0.0);
    }

    #[test]
    fn bleu_smoothing_keeps_score_positive() {
        let c = toks("the cat ran");
        let r = vec![toks("a cat sat")];
        assert_eq!(bleu(&c, &r, 2).unwrap(), 0.0);
        let s = bleu_with(&c, &r, 2, Some(0.1)).unwrap();
        // p1 = 1/3, p2 = 0.1/2
        assert!((s - ((1.0f64 / 3.0) * 0.05).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        let a = toks("a b c d");
        assert_eq!(rouge_l(&a, &a), 1.0);
        assert!((rouge_l(&a, &toks("a c d e")) - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l(&a, &toks("x y")), 0.0);
    }

    #[test]
    fn meteor_examples() {
        let a = toks("open the menu");
        assert!((meteor(&a, &a) - (1.0 - 0.5 / 27.0)).abs() < 1e-12);
        assert_eq!(meteor(&a, &toks("close window")), 0.0);
        let pairs = meteor_alignment(&toks("a b x c d"), &toks("c d a b"));
        assert_eq!(pairs, vec![(0, 2), (1, 3), (3, 0), (4, 1)]);
        assert_eq!(chunk_count(&pairs), 2);
    }

    #[test]
    fn cider_degenerate_single_pair() {
        let c = toks("select the lasso tool");
        assert_eq!(cider_d(std::slice::from_ref(&c), &[vec![c.clone()]]).unwrap(), 0.0);
        assert!(cider_d(&[toks("a")], &[]).is_err());
        assert!(cider_d(&[toks("a")], &[vec![]]).is_err());
    }

    #[test]
    fn accuracy_and_failures() {
        assert_eq!(accuracy(&["Move", "Lasso"], &["move", "LASSO"]).unwrap(), 1.0);
        assert_eq!(accuracy(&["a"], &["b"]).unwrap(), 0.0);
        let preds: Vec<String> = (0..20).map(|i| if i < 7 { "x".into() } else { format!("p{i}") }).collect();
        let golds: Vec<String> = (0..20).map(|i| if i < 7 { "X".into() } else { "g".into() }).collect();
        assert_eq!(accuracy(&preds, &golds).unwrap(), 0.35);
        assert!(accuracy::<&str, &str>(&[], &[]).is_err());
        assert!(accuracy(&["a"], &["a", "b"]).is_err());
        assert!(failure_rate(&[]).is_err());
    }

    fn arb_sentence() -> impl Strategy<Value = Vec<String>> {
        proptest::collection::vec(prop_oneof!["a", "b", "c", "tool", "menu", "open"], 1..9)
    }

    proptest! {
        #[test]
        fn scores_stay_in_range(cands in proptest::collection::vec(arb_sentence(), 1..6),
                                refs in proptest::collection::vec(proptest::collection::vec(arb_sentence(), 1..3), 6)) {
            let refs = &refs[..cands.len()];
            for (c, rs) in cands.iter().zip(refs) {
                for n in 1..=2 {
                    let b = bleu(c, rs, n).unwrap();
                    prop_assert!((0.0..=1.0 + 1e-12).contains(&b));
                }
                let r = rouge_l(c, &rs[0]);
                prop_assert!((0.0..=1.0).contains(&r));
                let m = meteor(c, &rs[0]);
                prop_assert!((0.0..=1.0).contains(&m));
            }
            let cider = cider_d(&cands, refs).unwrap();
            prop_assert!((0.0..=10.0 + 1e-9).contains(&cider));
        }

        #[test]
        fn tokenization_invariance(words in proptest::collection::vec("[a-z]{1,6}", 1..6), upper in any::<bool>()) {
            let plain = words.join(" ");
            let noisy = words.iter()
                .map(|w| if upper { w.to_uppercase() } else { w.clone() })
                .collect::<Vec<_>>()
                .join(", ");
            prop_assert_eq!(tokenize(&plain), tokenize(&noisy));
            let r = vec![tokenize("a b c")];
            prop_assert_eq!(bleu(&tokenize(&plain), &r, 1).unwrap(), bleu(&tokenize(&noisy), &r, 1).unwrap());
        }
    }
}
