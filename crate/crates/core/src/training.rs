//! Negative sampling, Adagrad, and the epoch loop with dev-set model selection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BatchStats, BinaryModel, LabeledPair, RankModel, Triplet};
use crate::numerics::{ParamSet, Parameter};
use crate::phonology::{CorpusExample, Lexicon, Pronunciation};
use crate::rng::{stream, Rng, Stream};
use crate::tasks::{evaluate, BinaryScorer, RankScorer};

const SURFACE_RETRIES: usize = 100;

/// Where negative pronunciations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NegativeMode {
    /// The canonical pronunciation of another word.
    #[default]
    Canonical,
    /// A training surface form of another word.
    Surface,
}

impl FromStr for NegativeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(NegativeMode::Canonical),
            "surface" => Ok(NegativeMode::Surface),
            _ => Err(Error::invalid(format!("unknown negative mode {s:?} (expected canonical or surface)"))),
        }
    }
}

impl fmt::Display for NegativeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NegativeMode::Canonical => "canonical",
            NegativeMode::Surface => "surface",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub margin: f64,
    pub negatives_per_positive: usize,
    pub epochs: usize,
    /// Corpus examples per update; each brings all of its negatives.
    pub batch_size: usize,
    pub seed: u64,
    pub negative_mode: NegativeMode,
    pub adagrad_epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            margin: 0.3,
            negatives_per_positive: 50,
            epochs: 30,
            batch_size: 32,
            seed: 0,
            negative_mode: NegativeMode::Canonical,
            adagrad_epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive_real = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        if self.learning_rate < 0.0 || !self.learning_rate.is_finite() {
            return Err(Error::invalid(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        positive_real("margin", self.margin)?;
        positive_real("adagrad epsilon", self.adagrad_epsilon)?;
        for (name, v) in [
            ("negatives per positive", self.negatives_per_positive),
            ("epochs", self.epochs),
            ("batch size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Training surface forms grouped by word, for surface-mode negatives.
#[derive(Debug, Clone, Default)]
pub struct SurfaceIndex {
    by_word: HashMap<String, Vec<Pronunciation>>,
}

impl SurfaceIndex {
    pub fn new(corpus: &[CorpusExample]) -> Self {
        let mut by_word: HashMap<String, Vec<Pronunciation>> = HashMap::new();
        for ex in corpus {
            by_word.entry(ex.word.clone()).or_default().push(ex.surface.clone());
        }
        SurfaceIndex { by_word }
    }

    pub fn forms(&self, word: &str) -> &[Pronunciation] {
        self.by_word.get(word).map_or(&[], Vec::as_slice)
    }
}

/// Index of a lexicon entry other than `own`, uniform over the rest.
fn other_entry(own: usize, n: usize, rng: &mut Rng) -> usize {
    let j = rng.random_range(0..n - 1);
    if j >= own {
        j + 1
    } else {
        j
    }
}

/// `negatives_per_positive` triplets for one example. Negatives are drawn
/// uniformly from the other lexicon words.
pub fn sample_negatives(
    example: &CorpusExample,
    lex: &Lexicon,
    surfaces: &SurfaceIndex,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<Triplet>> {
    if lex.len() < 2 {
        return Err(Error::invalid("negative sampling needs at least two lexicon words"));
    }
    let own = lex.position(&example.word).ok_or_else(|| Error::UnknownWord(example.word.clone()))?;
    let positive = &lex.entries()[own].canonical;
    let mut out = Vec::with_capacity(cfg.negatives_per_positive);
    for _ in 0..cfg.negatives_per_positive {
        let negative = match cfg.negative_mode {
            NegativeMode::Canonical => lex.entries()[other_entry(own, lex.len(), rng)].canonical.clone(),
            NegativeMode::Surface => {
                let mut found = None;
                for _ in 0..SURFACE_RETRIES {
                    let forms = surfaces.forms(&lex.entries()[other_entry(own, lex.len(), rng)].word);
                    if !forms.is_empty() {
                        found = Some(forms[rng.random_range(0..forms.len())].clone());
                        break;
                    }
                }
                found.ok_or_else(|| {
                    Error::invalid(format!(
                        "no surface-form negative found for {:?} after {SURFACE_RETRIES} draws",
                        example.word
                    ))
                })?
            }
        };
        out.push(Triplet { surface: example.surface.clone(), positive: positive.clone(), negative });
    }
    Ok(out)
}

/// One positive pair and `negatives_per_positive` negative pairs (other
/// words' canonicals) per example.
pub fn make_pair_dataset(
    corpus: &[CorpusExample],
    lex: &Lexicon,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<LabeledPair>> {
    let mut out = Vec::with_capacity(corpus.len() * (cfg.negatives_per_positive + 1));
    for ex in corpus {
        out.extend(example_pairs(ex, lex, cfg, rng)?);
    }
    Ok(out)
}

fn example_pairs(ex: &CorpusExample, lex: &Lexicon, cfg: &TrainConfig, rng: &mut Rng) -> Result<Vec<LabeledPair>> {
    if lex.len() < 2 {
        return Err(Error::invalid("negative sampling needs at least two lexicon words"));
    }
    let own = lex.position(&ex.word).ok_or_else(|| Error::UnknownWord(ex.word.clone()))?;
    let mut out = Vec::with_capacity(cfg.negatives_per_positive + 1);
    out.push(LabeledPair::new(ex.surface.clone(), lex.entries()[own].canonical.clone(), 1)?);
    for _ in 0..cfg.negatives_per_positive {
        let j = other_entry(own, lex.len(), rng);
        out.push(LabeledPair::new(ex.surface.clone(), lex.entries()[j].canonical.clone(), -1)?);
    }
    Ok(out)
}

/// `acc += g^2; value -= lr * g / (sqrt(acc) + eps)`, then zero the gradient.
pub fn adagrad_update(param: &mut Parameter, learning_rate: f64, epsilon: f64) {
    let Parameter { value, grad, adagrad_acc } = param;
    for ((v, g), a) in value.data_mut().iter_mut().zip(grad.data()).zip(adagrad_acc.data_mut()) {
        if *g == 0.0 {
            continue;
        }
        *a += g * g;
        *v -= learning_rate * g / (a.sqrt() + epsilon);
    }
    grad.fill(0.0);
}

/// A model the epoch loop can train.
pub trait Trainable: ParamSet + Clone + Sync {
    type Unit: Send + Sync;

    /// Training units for one example under `cfg`.
    fn units(ex: &CorpusExample, lex: &Lexicon, surfaces: &SurfaceIndex, cfg: &TrainConfig, rng: &mut Rng)
        -> Result<Vec<Self::Unit>>;

    /// Summed loss over `units`, accumulating `scale` times its gradient.
    fn accumulate(&mut self, units: &[Self::Unit], cfg: &TrainConfig, scale: f64) -> Result<BatchStats>;

    /// Loss and violation counts without touching gradients.
    fn evaluate_units(&self, units: &[Self::Unit], cfg: &TrainConfig) -> Result<BatchStats>;

    /// Dev WER@1 and WER@2.
    fn dev_wer(&self, dev: &[CorpusExample], lex: &Lexicon) -> Result<(f64, f64)>;
}

impl Trainable for RankModel {
    type Unit = Triplet;

    fn units(
        ex: &CorpusExample,
        lex: &Lexicon,
        surfaces: &SurfaceIndex,
        cfg: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<Vec<Triplet>> {
        sample_negatives(ex, lex, surfaces, cfg, rng)
    }

    fn accumulate(&mut self, units: &[Triplet], cfg: &TrainConfig, scale: f64) -> Result<BatchStats> {
        self.batch_loss_backward(units, cfg.margin, scale)
    }

    fn evaluate_units(&self, units: &[Triplet], cfg: &TrainConfig) -> Result<BatchStats> {
        let losses = self.batch_losses(units, cfg.margin)?;
        Ok(BatchStats {
            loss_sum: losses.iter().sum(),
            count: losses.len(),
            violations: losses.iter().filter(|&&l| l > 0.0).count(),
        })
    }

    fn dev_wer(&self, dev: &[CorpusExample], lex: &Lexicon) -> Result<(f64, f64)> {
        let scorer = RankScorer::with_lexicon(self, lex)?;
        let r = evaluate(dev, lex, &scorer, "rank")?;
        Ok((r.wer_at_1, r.wer_at_2))
    }
}

impl Trainable for BinaryModel {
    type Unit = LabeledPair;

    fn units(
        ex: &CorpusExample,
        lex: &Lexicon,
        _surfaces: &SurfaceIndex,
        cfg: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<Vec<LabeledPair>> {
        example_pairs(ex, lex, cfg, rng)
    }

    fn accumulate(&mut self, units: &[LabeledPair], _cfg: &TrainConfig, scale: f64) -> Result<BatchStats> {
        self.batch_loss_backward(units, scale)
    }

    fn evaluate_units(&self, units: &[LabeledPair], _cfg: &TrainConfig) -> Result<BatchStats> {
        let mut stats = BatchStats::default();
        for p in units {
            let trace = {
                let a = self.encoder.encode(&p.surface)?;
                let b = self.encoder.encode(&p.canonical)?;
                self.head_forward(&a, &b)?
            };
            stats.loss_sum += trace.loss(p.class())?;
            stats.count += 1;
            if trace.probs().data()[p.class()] < 0.5 {
                stats.violations += 1;
            }
        }
        Ok(stats)
    }

    fn dev_wer(&self, dev: &[CorpusExample], lex: &Lexicon) -> Result<(f64, f64)> {
        let scorer = BinaryScorer::with_lexicon(self, lex)?;
        let r = evaluate(dev, lex, &scorer, "binary")?;
        Ok((r.wer_at_1, r.wer_at_2))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of this epoch's training units with positive loss (triplets)
    /// or misclassified (pairs), measured before each update.
    pub violation_rate: f64,
    pub dev_wer_at_1: f64,
    pub dev_wer_at_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochStats>,
    /// The epoch whose parameters were kept: lowest dev WER@1, earliest on ties.
    pub selected_epoch: usize,
    /// Violation rate of the kept model on a fresh draw of training units.
    pub train_violation_rate: f64,
}

impl TrainReport {
    pub fn selected(&self) -> &EpochStats {
        &self.epochs[self.selected_epoch - 1]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("# seed {}\nepoch\tmean_loss\tviolation_rate\tdev_wer1\tdev_wer2\n", self.seed);
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.4}\t{:.2}\t{:.2}{}\n",
                e.epoch,
                e.mean_loss,
                e.violation_rate,
                e.dev_wer_at_1,
                e.dev_wer_at_2,
                if e.epoch == self.selected_epoch { "\t*" } else { "" }
            ));
        }
        out.push_str(&format!(
            "# selected epoch {}; train violation rate {:.4}\n",
            self.selected_epoch, self.train_violation_rate
        ));
        out
    }
}

fn draw_units<M: Trainable>(
    corpus: &[CorpusExample],
    lex: &Lexicon,
    surfaces: &SurfaceIndex,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<Vec<M::Unit>>> {
    corpus.iter().map(|ex| M::units(ex, lex, surfaces, cfg, rng)).collect()
}

/// Runs one epoch over pre-drawn units in the given example order and
/// returns the summed statistics.
pub fn train_epoch<M: Trainable>(
    model: &mut M,
    units: &[Vec<M::Unit>],
    order: &[usize],
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<BatchStats>
where
    M::Unit: Clone,
{
    let mut total = BatchStats::default();
    for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
        let batch: Vec<M::Unit> = chunk.iter().flat_map(|&i| units[i].iter().cloned()).collect();
        if batch.is_empty() {
            continue;
        }
        let stats = model.accumulate(&batch, cfg, 1.0 / batch.len() as f64)?;
        if !stats.loss_sum.is_finite() {
            model.zero_grads();
            return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
        }
        for p in model.params_mut() {
            adagrad_update(p, cfg.learning_rate, cfg.adagrad_epsilon);
        }
        total.merge(stats);
    }
    Ok(total)
}

/// Trains `model` in place and leaves it holding the parameters of the
/// selected epoch.
///
/// Every epoch redraws negatives from its own seeded stream and reshuffles
/// the examples; identical inputs give bit-identical results.
pub fn fit<M: Trainable>(
    model: &mut M,
    train: &[CorpusExample],
    dev: &[CorpusExample],
    lex: &Lexicon,
    cfg: &TrainConfig,
) -> Result<TrainReport>
where
    M::Unit: Clone,
{
    cfg.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::invalid("training needs non-empty train and dev sets"));
    }
    let surfaces = SurfaceIndex::new(train);
    let mut best: Option<(f64, usize, M)> = None;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let e = epoch as u64;
        let units = draw_units::<M>(train, lex, &surfaces, cfg, &mut stream(cfg.seed, Stream::Negatives(e)))?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream(cfg.seed, Stream::Shuffle(e)));
        let stats = train_epoch(model, &units, &order, cfg, epoch)?;
        let (w1, w2) = model.dev_wer(dev, lex)?;
        let row = EpochStats {
            epoch,
            mean_loss: stats.loss_sum / stats.count as f64,
            violation_rate: stats.violations as f64 / stats.count as f64,
            dev_wer_at_1: w1,
            dev_wer_at_2: w2,
        };
        log::info!(
            "epoch {epoch}: loss {:.5}  violations {:.4}  dev WER@1 {w1:.2}%  WER@2 {w2:.2}%",
            row.mean_loss,
            row.violation_rate
        );
        epochs.push(row);
        if best.as_ref().is_none_or(|(b, _, _)| w1 < *b) {
            best = Some((w1, epoch, model.clone()));
        }
    }
    let (_, selected_epoch, kept) = best.expect("at least one epoch");
    *model = kept;

    let units = draw_units::<M>(train, lex, &surfaces, cfg, &mut stream(cfg.seed, Stream::Violation))?;
    let flat: Vec<M::Unit> = units.into_iter().flatten().collect();
    let check = model.evaluate_units(&flat, cfg)?;
    Ok(TrainReport {
        seed: cfg.seed,
        epochs,
        selected_epoch,
        train_violation_rate: check.violations as f64 / check.count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;
    use crate::models::RankConfig;
    use crate::numerics::Tensor;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn toy_lexicon(n: usize) -> Lexicon {
        let mut lex = Lexicon::new();
        for i in 0..n {
            let ids = [(i % 7) as u16, ((i / 7) % 7) as u16, ((i / 49) % 7) as u16];
            lex.push(format!("w{i}"), Pronunciation::from_ids(&ids)).unwrap();
        }
        lex
    }

    fn example(word: &str, ids: &[u16]) -> CorpusExample {
        CorpusExample { word: word.into(), surface: Pronunciation::from_ids(ids) }
    }

    #[test]
    fn negative_count_and_forced_choice() {
        let lex = toy_lexicon(2);
        let cfg = TrainConfig::default();
        let ex = example("w0", &[0, 0, 1]);
        let mut rng = stream(1, Stream::Negatives(1));
        let ts = sample_negatives(&ex, &lex, &SurfaceIndex::default(), &cfg, &mut rng).unwrap();
        assert_eq!(ts.len(), 50);
        let other = lex.canonical("w1").unwrap();
        assert!(ts.iter().all(|t| &t.negative == other && t.positive == *lex.canonical("w0").unwrap()));
    }

    #[test]
    fn negatives_are_uniform_over_other_words() {
        let lex = toy_lexicon(101);
        let cfg = TrainConfig { negatives_per_positive: 100_000, ..TrainConfig::default() };
        let ex = example("w100", &[1]);
        let mut rng = stream(7, Stream::Negatives(1));
        let ts = sample_negatives(&ex, &lex, &SurfaceIndex::default(), &cfg, &mut rng).unwrap();
        let mut counts: HashMap<&Pronunciation, f64> = HashMap::new();
        for t in &ts {
            *counts.entry(&t.negative).or_default() += 1.0;
        }
        assert!(!counts.contains_key(lex.canonical("w100").unwrap()));
        assert_eq!(counts.len(), 100);
        let expected = 1000.0;
        let chi2: f64 = counts.values().map(|c| (c - expected).powi(2) / expected).sum();
        let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn surface_mode_uses_training_forms() {
        let lex = toy_lexicon(5);
        let corpus = vec![example("w0", &[6, 6]), example("w3", &[5, 5, 5])];
        let idx = SurfaceIndex::new(&corpus);
        let cfg = TrainConfig { negative_mode: NegativeMode::Surface, negatives_per_positive: 20, ..Default::default() };
        let mut rng = stream(3, Stream::Negatives(1));
        let ts = sample_negatives(&corpus[0], &lex, &idx, &cfg, &mut rng).unwrap();
        assert!(ts.iter().all(|t| t.negative == corpus[1].surface));
        let lonely = vec![example("w0", &[6])];
        let err = sample_negatives(&lonely[0], &lex, &SurfaceIndex::new(&lonely), &cfg, &mut rng);
        assert!(err.is_err());
    }

    #[test]
    fn pair_dataset_shape() {
        let lex = toy_lexicon(30);
        let cfg = TrainConfig { negatives_per_positive: 1, ..Default::default() };
        let one = vec![example("w4", &[1, 2])];
        let pairs = make_pair_dataset(&one, &lex, &cfg, &mut stream(1, Stream::Negatives(1))).unwrap();
        assert_eq!(pairs.iter().map(|p| p.label).collect::<Vec<_>>(), vec![1, -1]);

        let cfg = TrainConfig { negatives_per_positive: 7, ..Default::default() };
        let corpus: Vec<_> = (0..30).map(|i| example(&format!("w{i}"), &[(i % 5) as u16])).collect();
        let pairs = make_pair_dataset(&corpus, &lex, &cfg, &mut stream(2, Stream::Negatives(1))).unwrap();
        assert_eq!(pairs.len(), 30 * 8);
        for (ex, group) in corpus.iter().zip(pairs.chunks(8)) {
            let own = lex.canonical(&ex.word).unwrap();
            assert_eq!(group[0].label, 1);
            assert_eq!(&group[0].canonical, own);
            assert!(group[1..].iter().all(|p| p.label == -1 && &p.canonical != own));
        }
    }

    #[test]
    fn adagrad_cases() {
        let mut p = Parameter::new(Tensor::vector(vec![1.0, -2.0]));
        adagrad_update(&mut p, 0.01, 1e-8);
        assert_eq!(p.value.data(), &[1.0, -2.0]);
        assert_eq!(p.adagrad_acc.data(), &[0.0, 0.0]);

        p.grad.data_mut()[0] = 2.0;
        adagrad_update(&mut p, 0.01, 1e-8);
        assert!((p.value.data()[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert_eq!(p.grad.data(), &[0.0, 0.0]);
        let first = 0.01;
        p.grad.data_mut()[0] = 2.0;
        let before = p.value.data()[0];
        adagrad_update(&mut p, 0.01, 1e-8);
        let second = before - p.value.data()[0];
        assert!(second > 0.0 && second < first);
        assert_eq!(p.adagrad_acc.data()[0], 8.0);
    }

    fn rank_fixture(seed: u64) -> (RankModel, Lexicon, Vec<CorpusExample>) {
        let lex = toy_lexicon(12);
        let cfg = RankConfig::new(EncoderKind::Lstm.config(4, 6), 5);
        let model = RankModel::new(cfg, 7, &mut stream(seed, Stream::Init)).unwrap();
        let corpus: Vec<_> = lex
            .entries()
            .iter()
            .map(|e| CorpusExample { word: e.word.clone(), surface: e.canonical.clone() })
            .collect();
        (model, lex, corpus)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (mut model, lex, corpus) = rank_fixture(1);
        let before = model.clone();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, negatives_per_positive: 3, batch_size: 4, ..Default::default() };
        fit(&mut model, &corpus, &corpus, &lex, &cfg).unwrap();
        for ((_, a), (_, b)) in model.params().into_iter().zip(before.params()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn single_step_matches_manual_adagrad() {
        let (mut model, lex, corpus) = rank_fixture(2);
        let cfg = TrainConfig { negatives_per_positive: 2, batch_size: 1, margin: 1.2, ..Default::default() };
        let units = draw_units::<RankModel>(&corpus[..1], &lex, &SurfaceIndex::default(), &cfg, &mut stream(0, Stream::Negatives(1))).unwrap();

        let original = model.clone();
        let mut reference = model.clone();
        reference.batch_loss_backward(&units[0], cfg.margin, 0.5).unwrap();
        let expected: Vec<Vec<f64>> = reference
            .params()
            .into_iter()
            .map(|(_, p)| {
                p.value
                    .data()
                    .iter()
                    .zip(p.grad.data())
                    .map(|(v, g)| if *g == 0.0 { *v } else { v - 0.01 * g / (g.abs() + 1e-8) })
                    .collect()
            })
            .collect();
        train_epoch(&mut model, &units, &[0], &cfg, 1).unwrap();
        let mut moved = 0;
        for (((_, p), e), (_, o)) in model.params().into_iter().zip(&expected).zip(original.params()) {
            for (a, b) in p.value.data().iter().zip(e) {
                assert!((a - b).abs() < 1e-12);
            }
            moved += p.value.data().iter().zip(o.value.data()).filter(|(a, b)| a != b).count();
        }
        assert!(moved > 0);
    }

    #[test]
    fn training_is_reproducible_and_accumulators_grow() {
        let (model, lex, corpus) = rank_fixture(3);
        let cfg = TrainConfig { epochs: 3, negatives_per_positive: 4, batch_size: 5, seed: 9, ..Default::default() };
        let mut a = model.clone();
        let mut b = model.clone();
        let ra = fit(&mut a, &corpus, &corpus, &lex, &cfg).unwrap();
        let rb = fit(&mut b, &corpus, &corpus, &lex, &cfg).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert!(ra.selected_epoch >= 1 && ra.selected_epoch <= 3);
        let best = ra.epochs.iter().map(|e| e.dev_wer_at_1).fold(f64::MAX, f64::min);
        let first = ra.epochs.iter().find(|e| e.dev_wer_at_1 == best).unwrap().epoch;
        assert_eq!(ra.selected_epoch, first);

        let mut m = model;
        let units = draw_units::<RankModel>(&corpus, &lex, &SurfaceIndex::default(), &cfg, &mut stream(1, Stream::Negatives(1))).unwrap();
        let order: Vec<usize> = (0..corpus.len()).collect();
        let mut prev: Vec<Vec<f64>> = m.params().into_iter().map(|(_, p)| p.adagrad_acc.data().to_vec()).collect();
        for epoch in 1..=3 {
            train_epoch(&mut m, &units, &order, &cfg, epoch).unwrap();
            let now: Vec<Vec<f64>> = m.params().into_iter().map(|(_, p)| p.adagrad_acc.data().to_vec()).collect();
            for (a, b) in prev.iter().flatten().zip(now.iter().flatten()) {
                assert!(b >= a);
            }
            prev = now;
        }
    }

    #[test]
    fn small_steps_do_not_increase_fixed_loss() {
        let (mut model, lex, corpus) = rank_fixture(4);
        let cfg = TrainConfig { learning_rate: 1e-4, negatives_per_positive: 5, batch_size: 4, ..Default::default() };
        let units = draw_units::<RankModel>(&corpus, &lex, &SurfaceIndex::default(), &cfg, &mut stream(1, Stream::Negatives(1))).unwrap();
        let flat: Vec<Triplet> = units.iter().flatten().cloned().collect();
        let order: Vec<usize> = (0..corpus.len()).collect();
        let mut last = model.evaluate_units(&flat, &cfg).unwrap().loss_sum;
        for epoch in 1..=3 {
            train_epoch(&mut model, &units, &order, &cfg, epoch).unwrap();
            let now = model.evaluate_units(&flat, &cfg).unwrap().loss_sum;
            assert!(now <= last, "epoch {epoch}: {now} > {last}");
            last = now;
        }
    }

    #[test]
    fn binary_model_trains() {
        let lex = toy_lexicon(6);
        let corpus: Vec<_> = lex
            .entries()
            .iter()
            .map(|e| CorpusExample { word: e.word.clone(), surface: e.canonical.clone() })
            .collect();
        let bcfg = crate::models::BinaryConfig::new(EncoderKind::Lstm.config(3, 4), 3);
        let mut model = BinaryModel::new(bcfg, 7, &mut stream(5, Stream::Init)).unwrap();
        let cfg = TrainConfig { epochs: 2, negatives_per_positive: 2, batch_size: 3, ..Default::default() };
        let report = fit(&mut model, &corpus, &corpus, &lex, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 2);
        assert!(report.to_table().contains("selected epoch"));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { margin: 0.0, ..Default::default() }.validate().is_err());
        assert!("surface".parse::<NegativeMode>().is_ok());
        assert!("nope".parse::<NegativeMode>().is_err());
    }
}
