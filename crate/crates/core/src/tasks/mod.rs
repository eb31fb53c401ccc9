//! Applications of a pronunciation similarity function: lexical access with
//! WER@k, word neighborhoods, nearest words, and 2-D embedding projection.
//!
//! Every ranking sorts by descending score and breaks ties by lexicon order,
//! so results never depend on evaluation order or worker count.

mod projection;

pub use projection::{project_embeddings_2d, Projection, ProjectedPoint};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::EncodedSequence;
use crate::error::{Error, Result};
use crate::models::{BinaryModel, RankModel};
use crate::numerics::cosine_similarity_raw;
use crate::phonology::{exact_lookup, pron_distance, CorpusExample, Lexicon, Pronunciation};

/// A deterministic similarity `f(p1, p2)`; higher means more similar.
pub trait Scorer: Sync {
    fn score(&self, a: &Pronunciation, b: &Pronunciation) -> Result<f64>;

    /// `f(query, canonical)` for every lexicon entry, in lexicon order.
    fn score_lexicon(&self, query: &Pronunciation, lex: &Lexicon) -> Result<Vec<f64>> {
        lex.entries().iter().map(|e| self.score(query, &e.canonical)).collect()
    }
}

/// Negated edit distance.
#[derive(Debug, Clone, Copy, Default)]
pub struct LevenshteinScorer;

impl Scorer for LevenshteinScorer {
    fn score(&self, a: &Pronunciation, b: &Pronunciation) -> Result<f64> {
        Ok(-(pron_distance(a, b) as f64))
    }
}

/// Wraps a closure as a scorer.
pub struct FnScorer<F>(pub F);

impl<F> Scorer for FnScorer<F>
where
    F: Fn(&Pronunciation, &Pronunciation) -> f64 + Sync,
{
    fn score(&self, a: &Pronunciation, b: &Pronunciation) -> Result<f64> {
        Ok((self.0)(a, b))
    }
}

/// Ranking-model similarity with cached lexicon embeddings.
pub struct RankScorer<'m> {
    model: &'m RankModel,
    cache: HashMap<Pronunciation, Vec<f64>>,
}

impl<'m> RankScorer<'m> {
    pub fn new(model: &'m RankModel) -> Self {
        RankScorer { model, cache: HashMap::new() }
    }

    /// Embeds every canonical pronunciation once.
    pub fn with_lexicon(model: &'m RankModel, lex: &Lexicon) -> Result<Self> {
        let embedded: Vec<(Pronunciation, Vec<f64>)> = lex
            .entries()
            .par_iter()
            .map(|e| Ok((e.canonical.clone(), model.embed(&e.canonical)?)))
            .collect::<Result<_>>()?;
        Ok(RankScorer { model, cache: embedded.into_iter().collect() })
    }

    fn embedding(&self, p: &Pronunciation) -> Result<std::borrow::Cow<'_, [f64]>> {
        match self.cache.get(p) {
            Some(v) => Ok(std::borrow::Cow::Borrowed(v)),
            None => Ok(std::borrow::Cow::Owned(self.model.embed(p)?)),
        }
    }
}

impl Scorer for RankScorer<'_> {
    fn score(&self, a: &Pronunciation, b: &Pronunciation) -> Result<f64> {
        cosine_similarity_raw(&self.embedding(a)?, &self.embedding(b)?)
    }

    fn score_lexicon(&self, query: &Pronunciation, lex: &Lexicon) -> Result<Vec<f64>> {
        let q = self.embedding(query)?;
        lex.entries()
            .iter()
            .map(|e| cosine_similarity_raw(&q, &self.embedding(&e.canonical)?))
            .collect()
    }
}

/// Binary-model probability of "same word". Inputs longer than the model's
/// maximum length are truncated with a warning.
pub struct BinaryScorer<'m> {
    model: &'m BinaryModel,
    cache: HashMap<Pronunciation, EncodedSequence>,
    warned: AtomicBool,
}

impl<'m> BinaryScorer<'m> {
    pub fn new(model: &'m BinaryModel) -> Self {
        BinaryScorer { model, cache: HashMap::new(), warned: AtomicBool::new(false) }
    }

    pub fn with_lexicon(model: &'m BinaryModel, lex: &Lexicon) -> Result<Self> {
        let mut s = Self::new(model);
        let encoded: Vec<(Pronunciation, EncodedSequence)> = lex
            .entries()
            .par_iter()
            .map(|e| {
                let p = s.truncate(&e.canonical);
                let enc = model.encoder.encode(&p)?;
                Ok((e.canonical.clone(), enc))
            })
            .collect::<Result<_>>()?;
        s.cache = encoded.into_iter().collect();
        Ok(s)
    }

    fn truncate(&self, p: &Pronunciation) -> Pronunciation {
        let max = self.model.t_max();
        if p.len() <= max {
            return p.clone();
        }
        if !self.warned.swap(true, Ordering::Relaxed) {
            log::warn!("truncating pronunciation of length {} to the model maximum {max}", p.len());
        }
        Pronunciation::new(p.phones()[..max].to_vec()).expect("t_max is positive")
    }

    fn encoded(&self, p: &Pronunciation) -> Result<std::borrow::Cow<'_, EncodedSequence>> {
        match self.cache.get(p) {
            Some(e) => Ok(std::borrow::Cow::Borrowed(e)),
            None => Ok(std::borrow::Cow::Owned(self.model.encoder.encode(&self.truncate(p))?)),
        }
    }
}

impl Scorer for BinaryScorer<'_> {
    fn score(&self, a: &Pronunciation, b: &Pronunciation) -> Result<f64> {
        Ok(self.model.head_forward(&*self.encoded(a)?, &*self.encoded(b)?)?.score())
    }

    fn score_lexicon(&self, query: &Pronunciation, lex: &Lexicon) -> Result<Vec<f64>> {
        let q = self.encoded(query)?;
        lex.entries()
            .iter()
            .map(|e| Ok(self.model.head_forward(&q, &*self.encoded(&e.canonical)?)?.score()))
            .collect()
    }
}

/// Indices of the `k` highest scores, descending, lower index first on ties.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// The `k` words whose canonical pronunciations score highest against `surface`.
pub fn lexical_access_topk<'l>(
    surface: &Pronunciation,
    lex: &'l Lexicon,
    scorer: &dyn Scorer,
    k: usize,
) -> Result<Vec<&'l str>> {
    if k == 0 || k > lex.len() {
        return Err(Error::invalid(format!("k = {k} out of range for a lexicon of {}", lex.len())));
    }
    let scores = scorer.score_lexicon(surface, lex)?;
    Ok(top_k_indices(&scores, k).into_iter().map(|i| lex.entries()[i].word.as_str()).collect())
}

/// Percentage of examples whose word is absent from the top-`k` predictions.
pub fn wer_at_k(examples: &[CorpusExample], lex: &Lexicon, scorer: &dyn Scorer, k: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("WER needs at least one example"));
    }
    let misses = examples
        .par_iter()
        .map(|ex| Ok(usize::from(!lexical_access_topk(&ex.surface, lex, scorer, k)?.contains(&ex.word.as_str()))))
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(100.0 * misses as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePrediction {
    pub word: String,
    pub predicted: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: String,
    pub count: usize,
    pub wer_at_1: f64,
    pub wer_at_2: f64,
    pub predictions: Vec<ExamplePrediction>,
}

impl EvalReport {
    pub fn from_predictions(scorer: impl Into<String>, predictions: Vec<ExamplePrediction>) -> Result<Self> {
        if predictions.is_empty() {
            return Err(Error::invalid("evaluation needs at least one example"));
        }
        let wer = |k: usize| {
            let miss = predictions
                .iter()
                .filter(|p| !p.predicted.iter().take(k).any(|w| w == &p.word))
                .count();
            100.0 * miss as f64 / predictions.len() as f64
        };
        Ok(EvalReport {
            scorer: scorer.into(),
            count: predictions.len(),
            wer_at_1: wer(1),
            wer_at_2: wer(2),
            predictions,
        })
    }

    /// `word<TAB>pred1,pred2,...` per example.
    pub fn predictions_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.predictions {
            out.push_str(&format!("{}\t{}\n", p.word, p.predicted.join(",")));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One-line summary, e.g. `rank: WER@1 12.00%  WER@2 5.00%  (n = 100)`.
    pub fn summary(&self) -> String {
        format!(
            "{}: WER@1 {:.2}%  WER@2 {:.2}%  (n = {})",
            self.scorer, self.wer_at_1, self.wer_at_2, self.count
        )
    }
}

/// Lexical access with the top-2 (or fewer, for tiny lexicons) predictions.
pub fn evaluate(examples: &[CorpusExample], lex: &Lexicon, scorer: &dyn Scorer, name: &str) -> Result<EvalReport> {
    let k = lex.len().min(2);
    let predictions = examples
        .par_iter()
        .map(|ex| {
            Ok(ExamplePrediction {
                word: ex.word.clone(),
                predicted: lexical_access_topk(&ex.surface, lex, scorer, k)?
                    .into_iter()
                    .map(str::to_string)
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_predictions(name, predictions)
}

/// Dictionary lookup baseline: at most one prediction per example.
pub fn evaluate_exact(examples: &[CorpusExample], lex: &Lexicon) -> Result<EvalReport> {
    let predictions = examples
        .iter()
        .map(|ex| ExamplePrediction {
            word: ex.word.clone(),
            predicted: exact_lookup(&ex.surface, lex).map(str::to_string).into_iter().collect(),
        })
        .collect();
    EvalReport::from_predictions("exact", predictions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum NeighborhoodMode {
    /// `{u != w : f(w, u) >= theta}`.
    #[default]
    SimilarityAtLeast,
    /// `{u : f(w, u) < theta}`, the strict written form.
    Literal,
}

impl FromStr for NeighborhoodMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "at-least" | "similarity-at-least" => Ok(NeighborhoodMode::SimilarityAtLeast),
            "literal" => Ok(NeighborhoodMode::Literal),
            other => Err(Error::invalid(format!("unknown neighborhood mode `{other}` (expected at-least, literal)"))),
        }
    }
}

impl fmt::Display for NeighborhoodMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NeighborhoodMode::SimilarityAtLeast => "at-least",
            NeighborhoodMode::Literal => "literal",
        })
    }
}

/// Words around `word` under threshold `theta`, in lexicon order.
pub fn word_neighborhood<'l>(
    word: &str,
    lex: &'l Lexicon,
    scorer: &dyn Scorer,
    theta: f64,
    mode: NeighborhoodMode,
) -> Result<Vec<&'l str>> {
    let target = lex.position(word).ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    let scores = scorer.score_lexicon(&lex.entries()[target].canonical, lex)?;
    Ok(lex
        .entries()
        .iter()
        .zip(&scores)
        .enumerate()
        .filter(|&(i, (_, &s))| match mode {
            NeighborhoodMode::SimilarityAtLeast => i != target && s >= theta,
            NeighborhoodMode::Literal => s < theta,
        })
        .map(|(_, (e, _))| e.word.as_str())
        .collect())
}

/// The `m` words most similar to `word`, excluding itself.
pub fn nearest_words<'l>(word: &str, lex: &'l Lexicon, scorer: &dyn Scorer, m: usize) -> Result<Vec<&'l str>> {
    let target = lex.position(word).ok_or_else(|| Error::UnknownWord(word.to_string()))?;
    if m == 0 || m >= lex.len() {
        return Err(Error::invalid(format!("m = {m} out of range for a lexicon of {}", lex.len())));
    }
    let mut scores = scorer.score_lexicon(&lex.entries()[target].canonical, lex)?;
    scores[target] = f64::NEG_INFINITY;
    let ranked = top_k_indices(&scores, lex.len());
    Ok(ranked
        .into_iter()
        .filter(|&i| i != target)
        .take(m)
        .map(|i| lex.entries()[i].word.as_str())
        .collect())
}

/// Embeds every canonical pronunciation of `lex`.
pub fn lexicon_embeddings(model: &RankModel, lex: &Lexicon) -> Result<Vec<(String, Vec<f64>)>> {
    lex.entries()
        .par_iter()
        .map(|e| Ok((e.word.clone(), model.embed(&e.canonical)?)))
        .collect()
}

/// `word<TAB>v1<TAB>v2...` with values in round-trip precision.
pub fn embeddings_tsv(rows: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    for (w, v) in rows {
        out.push_str(w);
        for x in v {
            out.push('\t');
            out.push_str(&format!("{x:e}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonology::{levenshtein_lookup, PhoneId, PhoneInventory};

    fn toy() -> (PhoneInventory, Lexicon) {
        let inv = PhoneInventory::parse("p\nb\naa\nt\nk\n").unwrap();
        let lex = Lexicon::parse("pat\tp aa t\nbat\tb aa t\ntack\tt aa k\npa\tp aa\n", &inv).unwrap();
        (inv, lex)
    }

    #[test]
    fn single_entry_lexicon() {
        let (inv, _) = toy();
        let lex = Lexicon::parse("only\tp aa\n", &inv).unwrap();
        let s = Pronunciation::parse("k k k", &inv).unwrap();
        assert_eq!(lexical_access_topk(&s, &lex, &LevenshteinScorer, 1).unwrap(), vec!["only"]);
        assert!(lexical_access_topk(&s, &lex, &LevenshteinScorer, 2).is_err());
    }

    #[test]
    fn ties_break_by_lexicon_order() {
        let (inv, lex) = toy();
        let flat = FnScorer(|_: &Pronunciation, _: &Pronunciation| 0.25);
        let s = Pronunciation::parse("p aa", &inv).unwrap();
        assert_eq!(lexical_access_topk(&s, &lex, &flat, 4).unwrap(), vec!["pat", "bat", "tack", "pa"]);
    }

    #[test]
    fn levenshtein_scorer_agrees_with_lookup_baseline() {
        let (inv, lex) = toy();
        for text in ["p aa t", "b aa", "k aa k", "t", "p aa k t"] {
            let s = Pronunciation::parse(text, &inv).unwrap();
            assert_eq!(
                lexical_access_topk(&s, &lex, &LevenshteinScorer, 1).unwrap(),
                levenshtein_lookup(&s, &lex, 1).unwrap()
            );
        }
    }

    #[test]
    fn wer_counts() {
        let (inv, lex) = toy();
        let ex = |w: &str, s: &str| CorpusExample { word: w.into(), surface: Pronunciation::parse(s, &inv).unwrap() };
        let exact = vec![ex("pat", "p aa t"), ex("bat", "b aa t"), ex("tack", "t aa k"), ex("pa", "p aa")];
        assert_eq!(wer_at_k(&exact, &lex, &LevenshteinScorer, 1).unwrap(), 0.0);
        let mut three = exact.clone();
        three[3].word = "pat".into();
        assert_eq!(wer_at_k(&three, &lex, &LevenshteinScorer, 1).unwrap(), 25.0);
        assert!(wer_at_k(&[], &lex, &LevenshteinScorer, 1).is_err());
    }

    #[test]
    fn wer_when_truth_is_always_second() {
        let (inv, lex) = toy();
        // scores rank "bat" first and "pat" second for every query
        let scorer = FnScorer(|_: &Pronunciation, c: &Pronunciation| match c.len() {
            3 if c.phones()[0] == PhoneId(1) => 2.0,
            3 if c.phones()[0] == PhoneId(0) => 1.0,
            _ => 0.0,
        });
        let examples: Vec<CorpusExample> = (0..10)
            .map(|_| CorpusExample { word: "pat".into(), surface: Pronunciation::parse("k", &inv).unwrap() })
            .collect();
        assert_eq!(wer_at_k(&examples, &lex, &scorer, 1).unwrap(), 100.0);
        assert_eq!(wer_at_k(&examples, &lex, &scorer, 2).unwrap(), 0.0);
        let report = evaluate(&examples, &lex, &scorer, "fn").unwrap();
        assert_eq!((report.wer_at_1, report.wer_at_2), (100.0, 0.0));
        assert_eq!(report.predictions_tsv().lines().next(), Some("pat\tbat,pat"));
    }

    #[test]
    fn exact_evaluation() {
        let (inv, lex) = toy();
        let ex = |w: &str, s: &str| CorpusExample { word: w.into(), surface: Pronunciation::parse(s, &inv).unwrap() };
        let report = evaluate_exact(&[ex("pat", "p aa t"), ex("bat", "b aa")], &lex).unwrap();
        assert_eq!(report.wer_at_1, 50.0);
        assert_eq!(report.wer_at_2, 50.0);
        assert_eq!(report.predictions[1].predicted, Vec::<String>::new());
    }

    #[test]
    fn neighborhood_modes_and_bounds() {
        let (_, lex) = toy();
        let scorer = FnScorer(|a: &Pronunciation, b: &Pronunciation| 1.0 / (1.0 + pron_distance(a, b) as f64));
        let m = NeighborhoodMode::SimilarityAtLeast;
        assert!(word_neighborhood("pat", &lex, &scorer, 1.5, m).unwrap().is_empty());
        assert_eq!(word_neighborhood("pat", &lex, &scorer, 0.0, m).unwrap(), vec!["bat", "tack", "pa"]);
        assert_eq!(word_neighborhood("pat", &lex, &scorer, 0.5, m).unwrap(), vec!["bat", "pa"]);
        assert_eq!(
            word_neighborhood("pat", &lex, &scorer, 0.5, NeighborhoodMode::Literal).unwrap(),
            vec!["tack"]
        );
        assert!(word_neighborhood("nope", &lex, &scorer, 0.5, m).is_err());
    }

    #[test]
    fn nearest_words_bounds() {
        let (_, lex) = toy();
        let all = nearest_words("pat", &lex, &LevenshteinScorer, 3).unwrap();
        assert_eq!(all, vec!["bat", "pa", "tack"]);
        assert!(nearest_words("pat", &lex, &LevenshteinScorer, 4).is_err());
        assert!(nearest_words("pat", &lex, &LevenshteinScorer, 0).is_err());
        assert!(nearest_words("zzz", &lex, &LevenshteinScorer, 1).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("at-least".parse::<NeighborhoodMode>().unwrap(), NeighborhoodMode::SimilarityAtLeast);
        assert_eq!("literal".parse::<NeighborhoodMode>().unwrap(), NeighborhoodMode::Literal);
        assert!("other".parse::<NeighborhoodMode>().is_err());
    }
}
