//! End-to-end pipelines: synthetic task construction, model training,
//! baseline evaluation, and the negative-count and embedding-size sweeps.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::datagen::{default_inventory, default_rules, synth_corpus, synth_lexicon, GenConfig, SyntheticCorpus};
use crate::error::{Error, Result};
use crate::models::{BinaryConfig, BinaryModel, LabeledPair, RankConfig, RankModel, Triplet};
use crate::numerics::{grad_check, GradCheckConfig, GradCheckReport};
use crate::phonology::{CorpusExample, Lexicon, PhoneId, PhoneInventory, Pronunciation};
use crate::rng::{stream, Stream};
use crate::tasks::{evaluate, evaluate_exact, EvalReport, LevenshteinScorer, RankScorer};
use crate::training::{fit, TrainConfig, TrainReport};
use crate::encoder::{EncoderConfig, EncoderKind};

/// A lexicon with its train/dev/test corpora. `gen` is set when the
/// corpora were generated rather than loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub inventory: PhoneInventory,
    pub lexicon: Lexicon,
    pub gen: Option<GenConfig>,
    pub corpus: SyntheticCorpus,
}

impl TaskData {
    /// Default inventory and rule pack, `n_words` words, `variants` surface
    /// forms per word.
    pub fn generate(n_words: usize, variants: usize, seed: u64) -> Result<Self> {
        let inventory = default_inventory();
        let mut gen = GenConfig::new(default_rules(&inventory)?, seed);
        gen.variants_per_word = variants;
        Self::with_config(inventory, n_words, gen)
    }

    pub fn with_config(inventory: PhoneInventory, n_words: usize, gen: GenConfig) -> Result<Self> {
        let lexicon = synth_lexicon(&inventory, n_words, gen.seed)?;
        let corpus = synth_corpus(&lexicon, &inventory, &gen)?;
        Ok(TaskData { inventory, lexicon, gen: Some(gen), corpus })
    }

    /// The same lexicon and split with every rule disabled.
    pub fn zero_noise(&self) -> Result<Self> {
        let gen = self
            .gen
            .as_ref()
            .ok_or_else(|| Error::invalid("only generated tasks have a zero-noise counterpart"))?
            .zero_noise();
        let corpus = synth_corpus(&self.lexicon, &self.inventory, &gen)?;
        Ok(TaskData { gen: Some(gen), corpus, ..self.clone() })
    }
}

/// Fresh ranking model seeded from `train.seed`, trained with dev selection.
pub fn train_rank(
    cfg: RankConfig,
    num_phones: usize,
    train: &[CorpusExample],
    dev: &[CorpusExample],
    lex: &Lexicon,
    train_cfg: &TrainConfig,
) -> Result<(RankModel, TrainReport)> {
    let mut model = RankModel::new(cfg, num_phones, &mut stream(train_cfg.seed, Stream::Init))?;
    let report = fit(&mut model, train, dev, lex, train_cfg)?;
    Ok((model, report))
}

/// Longest training surface or canonical pronunciation.
pub fn binary_t_max(train: &[CorpusExample], lex: &Lexicon) -> usize {
    let surf = train.iter().map(|e| e.surface.len());
    let canon = lex.entries().iter().map(|e| e.canonical.len());
    surf.chain(canon).max().unwrap_or(1)
}

/// Fresh binary model with `t_max` fixed from the training data.
pub fn train_binary(
    encoder: EncoderConfig,
    num_phones: usize,
    train: &[CorpusExample],
    dev: &[CorpusExample],
    lex: &Lexicon,
    train_cfg: &TrainConfig,
) -> Result<(BinaryModel, TrainReport)> {
    let cfg = BinaryConfig::new(encoder, binary_t_max(train, lex));
    let mut model = BinaryModel::new(cfg, num_phones, &mut stream(train_cfg.seed, Stream::Init))?;
    let report = fit(&mut model, train, dev, lex, train_cfg)?;
    Ok((model, report))
}

/// Exact-lookup and Levenshtein baselines on `examples`.
pub fn baselines(examples: &[CorpusExample], lex: &Lexicon) -> Result<(EvalReport, EvalReport)> {
    Ok((evaluate_exact(examples, lex)?, evaluate(examples, lex, &LevenshteinScorer, "levenshtein")?))
}

pub fn evaluate_rank(model: &RankModel, examples: &[CorpusExample], lex: &Lexicon) -> Result<EvalReport> {
    let scorer = RankScorer::with_lexicon(model, lex)?;
    evaluate(examples, lex, &scorer, "rank")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: usize,
    pub test_wer_at_1: f64,
    pub test_wer_at_2: f64,
    pub dev_wer_at_1: f64,
    pub selected_epoch: usize,
}

/// Test WER of a ranking model trained once per negatives-per-positive value.
pub fn sweep_negatives(
    task: &TaskData,
    cfg: &RankConfig,
    train_cfg: &TrainConfig,
    values: &[usize],
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&n| {
            let tc = TrainConfig { negatives_per_positive: n, ..train_cfg.clone() };
            sweep_point(task, *cfg, &tc, n)
        })
        .collect()
}

/// Test WER of a ranking model trained once per embedding size.
pub fn sweep_dim(
    task: &TaskData,
    cfg: &RankConfig,
    train_cfg: &TrainConfig,
    dims: &[usize],
) -> Result<Vec<SweepRow>> {
    dims.iter()
        .map(|&n| sweep_point(task, RankConfig { embed_dim: n, ..*cfg }, train_cfg, n))
        .collect()
}

fn sweep_point(task: &TaskData, cfg: RankConfig, tc: &TrainConfig, value: usize) -> Result<SweepRow> {
    let c = &task.corpus;
    let (model, report) = train_rank(cfg, task.inventory.len(), &c.train, &c.dev, &task.lexicon, tc)?;
    let test = evaluate_rank(&model, &c.test, &task.lexicon)?;
    log::info!("sweep value {value}: {}", test.summary());
    Ok(SweepRow {
        value,
        test_wer_at_1: test.wer_at_1,
        test_wer_at_2: test.wer_at_2,
        dev_wer_at_1: report.selected().dev_wer_at_1,
        selected_epoch: report.selected_epoch,
    })
}

/// CSV with a seed comment line and a header row.
pub fn sweep_csv(parameter: &str, seed: u64, rows: &[SweepRow]) -> String {
    let mut out = format!("# seed {seed}\n{parameter},test_wer1,test_wer2,dev_wer1,selected_epoch\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{:.4},{}\n",
            r.value, r.test_wer_at_1, r.test_wer_at_2, r.dev_wer_at_1, r.selected_epoch
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Binary,
    Rank,
}

impl Arch {
    pub const ALL: [Arch; 2] = [Arch::Binary, Arch::Rank];
}

impl FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Arch::Binary),
            "rank" => Ok(Arch::Rank),
            _ => Err(Error::invalid(format!("unknown architecture {s:?} (expected binary or rank)"))),
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Binary => "binary",
            Arch::Rank => "rank",
        })
    }
}

/// Model sizes and input lengths for [`gradient_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSizes {
    pub num_phones: usize,
    pub phone_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for AuditSizes {
    fn default() -> Self {
        AuditSizes { num_phones: 7, phone_dim: 4, hidden_dim: 5, embed_dim: 6, min_len: 3, max_len: 8 }
    }
}

/// Minimum distance of any ReLU input from zero, in units of the
/// finite-difference step, for an audit input to be accepted.
pub const KINK_CLEARANCE: f64 = 20.0;

fn draw_clear<T>(clearance: f64, mut draw: impl FnMut() -> Result<(T, f64)>) -> Result<T> {
    for _ in 0..1000 {
        let (item, margin) = draw()?;
        if margin >= clearance {
            return Ok(item);
        }
    }
    Err(Error::invalid("no audit input keeps every ReLU input away from zero"))
}

/// Finite-difference check of every parameter of a freshly initialized
/// model on one random training unit drawn from `seed`.
///
/// The ranking check uses margin 2, which keeps the hinge active for any
/// similarities in `[0, 1]` so every parameter receives gradient.
///
/// Central differences straddling a ReLU kink measure an average of two
/// slopes, so inputs are redrawn until every ReLU input is at least
/// `KINK_CLEARANCE * h` away from zero. The choice depends only on the
/// forward pass.
pub fn gradient_audit(
    arch: Arch,
    kind: EncoderKind,
    seed: u64,
    sizes: &AuditSizes,
    check: &GradCheckConfig,
) -> Result<GradCheckReport> {
    if sizes.min_len == 0 || sizes.min_len > sizes.max_len || sizes.num_phones == 0 {
        return Err(Error::invalid("audit lengths must satisfy 1 <= min <= max"));
    }
    let mut rng = stream(seed, Stream::GradCheck);
    let random_pron = |rng: &mut crate::rng::Rng| {
        let len = rng.random_range(sizes.min_len..=sizes.max_len);
        let ids = (0..len).map(|_| PhoneId(rng.random_range(0..sizes.num_phones) as u16)).collect();
        Pronunciation::new(ids)
    };
    let encoder = kind.config(sizes.phone_dim, sizes.hidden_dim);
    let check = GradCheckConfig { seed, ..check.clone() };
    let clearance = KINK_CLEARANCE * check.h;
    match arch {
        Arch::Rank => {
            let mut model =
                RankModel::new(RankConfig::new(encoder, sizes.embed_dim), sizes.num_phones, &mut stream(seed, Stream::Init))?;
            let t = draw_clear(clearance, || {
                let t = Triplet {
                    surface: random_pron(&mut rng)?,
                    positive: random_pron(&mut rng)?,
                    negative: random_pron(&mut rng)?,
                };
                let margin = [&t.surface, &t.positive, &t.negative]
                    .into_iter()
                    .map(|p| model.relu_margin(p))
                    .try_fold(f64::INFINITY, |m, r| r.map(|x| m.min(x)))?;
                Ok((t, margin))
            })?;
            Ok(grad_check(
                &mut model,
                |m, backward| {
                    let r = if backward { m.triplet_loss_backward(&t, 2.0, 1.0) } else { m.triplet_loss(&t, 2.0) };
                    r.unwrap_or(f64::NAN)
                },
                &check,
            ))
        }
        Arch::Binary => {
            let cfg = BinaryConfig::new(encoder, sizes.max_len);
            let mut model = BinaryModel::new(cfg, sizes.num_phones, &mut stream(seed, Stream::Init))?;
            let pair = draw_clear(clearance, || {
                let label = if rng.random_bool(0.5) { 1 } else { -1 };
                let pair = LabeledPair::new(random_pron(&mut rng)?, random_pron(&mut rng)?, label)?;
                let margin = model.relu_margin(&pair.surface, &pair.canonical)?;
                Ok((pair, margin))
            })?;
            Ok(grad_check(
                &mut model,
                |m, backward| {
                    let r = if backward { m.binary_loss_backward(&pair, 1.0) } else { m.binary_loss(&pair) };
                    r.unwrap_or(f64::NAN)
                },
                &check,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderKind;

    #[test]
    fn tiny_pipeline_runs() {
        let task = TaskData::generate(20, 2, 3).unwrap();
        let cfg = RankConfig::new(EncoderKind::Lstm.config(4, 6), 5);
        let tc = TrainConfig { epochs: 1, negatives_per_positive: 2, ..Default::default() };
        let rows = sweep_negatives(&task, &cfg, &tc, &[1, 2]).unwrap();
        assert_eq!(rows.len(), 2);
        let csv = sweep_csv("negatives", 0, &rows);
        assert_eq!(csv.lines().count(), 4);
        let (exact, lev) = baselines(&task.corpus.test, &task.lexicon).unwrap();
        assert!(exact.wer_at_1 >= lev.wer_at_1 || exact.count == lev.count);
        let t_max = binary_t_max(&task.corpus.train, &task.lexicon);
        assert!(t_max >= 2);
    }

    #[test]
    fn audit_passes_for_one_seed() {
        for arch in Arch::ALL {
            for kind in EncoderKind::ALL {
                let r = gradient_audit(arch, kind, 11, &AuditSizes::default(), &GradCheckConfig::default()).unwrap();
                assert!(r.passed(), "{arch} {kind}\n{r}");
            }
        }
        assert_eq!("rank".parse::<Arch>().unwrap(), Arch::Rank);
        assert!("cnn".parse::<Arch>().is_err());
    }
}
