//! Rule-based synthetic surface pronunciations.
//!
//! A canonical pronunciation is rewritten by one left-to-right pass of noise
//! rules (substitutions, deletions, insertions) to produce surface forms.
//! Corpora are split by word, so test words never occur in training.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phonology::{CorpusExample, Lexicon, PhoneId, PhoneInventory, Pronunciation};
use crate::rng::{stream, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Substitute,
    Delete,
    Insert,
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "substitute" => Ok(RuleKind::Substitute),
            "delete" => Ok(RuleKind::Delete),
            "insert" => Ok(RuleKind::Insert),
            _ => Err(Error::invalid(format!("unknown rule kind {s:?}"))),
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleKind::Substitute => "substitute",
            RuleKind::Delete => "delete",
            RuleKind::Insert => "insert",
        })
    }
}

/// One noise rule. `target` is `None` for insertions, which may fire after
/// any phone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRule {
    pub kind: RuleKind,
    pub target: Option<PhoneId>,
    pub replacement: Option<PhoneId>,
    pub probability: f64,
}

impl NoiseRule {
    pub fn substitute(target: PhoneId, replacement: PhoneId, probability: f64) -> Self {
        NoiseRule { kind: RuleKind::Substitute, target: Some(target), replacement: Some(replacement), probability }
    }

    pub fn delete(target: PhoneId, probability: f64) -> Self {
        NoiseRule { kind: RuleKind::Delete, target: Some(target), replacement: None, probability }
    }

    pub fn insert(replacement: PhoneId, probability: f64) -> Self {
        NoiseRule { kind: RuleKind::Insert, target: None, replacement: Some(replacement), probability }
    }

    pub fn validate(&self, inv: &PhoneInventory) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::invalid(format!("rule probability {} outside [0, 1]", self.probability)));
        }
        let ok = |p: Option<PhoneId>| p.is_none_or(|p| p.index() < inv.len());
        let shape_ok = match self.kind {
            RuleKind::Substitute => self.target.is_some() && self.replacement.is_some(),
            RuleKind::Delete => self.target.is_some() && self.replacement.is_none(),
            RuleKind::Insert => self.target.is_none() && self.replacement.is_some(),
        };
        if !shape_ok || !ok(self.target) || !ok(self.replacement) {
            return Err(Error::invalid(format!("malformed {} rule", self.kind)));
        }
        Ok(())
    }
}

/// Parses `kind<TAB>target<TAB>replacement-or-'-'<TAB>probability` lines.
/// Insert rules use the target `anywhere`. Blank and `#` lines are skipped.
pub fn parse_rules(text: &str, inv: &PhoneInventory) -> Result<Vec<NoiseRule>> {
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::parse(line_no, format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let kind: RuleKind = fields[0].parse().map_err(|e: Error| Error::parse(line_no, e.to_string()))?;
        let phone = |s: &str| {
            inv.id(s).ok_or_else(|| Error::parse(line_no, format!("unknown phone {s:?}")))
        };
        let probability: f64 = fields[3]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad probability {:?}", fields[3])))?;
        let rule = match kind {
            RuleKind::Substitute => NoiseRule::substitute(phone(fields[1])?, phone(fields[2])?, probability),
            RuleKind::Delete => {
                if fields[2] != "-" {
                    return Err(Error::parse(line_no, "delete rules take '-' as replacement"));
                }
                NoiseRule::delete(phone(fields[1])?, probability)
            }
            RuleKind::Insert => {
                if fields[1] != "anywhere" {
                    return Err(Error::parse(line_no, "insert rules take 'anywhere' as target"));
                }
                NoiseRule::insert(phone(fields[2])?, probability)
            }
        };
        rule.validate(inv).map_err(|e| Error::parse(line_no, e.to_string()))?;
        rules.push(rule);
    }
    Ok(rules)
}

pub fn rules_to_text(rules: &[NoiseRule], inv: &PhoneInventory) -> String {
    let sym = |p: Option<PhoneId>| p.and_then(|p| inv.symbol(p)).unwrap_or("-").to_string();
    let mut out = String::new();
    for r in rules {
        let target = match r.kind {
            RuleKind::Insert => "anywhere".to_string(),
            _ => sym(r.target),
        };
        out.push_str(&format!("{}\t{}\t{}\t{}\n", r.kind, target, sym(r.replacement), r.probability));
    }
    out
}

/// Rewrites `canonical` with one left-to-right pass over its phones; at each
/// phone the rules fire in order. A deletion that would leave the result
/// empty is skipped.
pub fn apply_rules(canonical: &Pronunciation, rules: &[NoiseRule], rng: &mut Rng) -> Pronunciation {
    let phones = canonical.phones();
    let mut out = Vec::with_capacity(phones.len() + 2);
    for (i, &phone) in phones.iter().enumerate() {
        let mut current = Some(phone);
        let mut inserted = Vec::new();
        for r in rules {
            match r.kind {
                RuleKind::Substitute => {
                    if current.is_some() && current == r.target && rng.random_bool(r.probability) {
                        current = r.replacement;
                    }
                }
                RuleKind::Delete => {
                    if current.is_some() && current == r.target && rng.random_bool(r.probability) {
                        let last = i + 1 == phones.len();
                        if !(last && out.is_empty() && inserted.is_empty()) {
                            current = None;
                        }
                    }
                }
                RuleKind::Insert => {
                    if rng.random_bool(r.probability) {
                        inserted.extend(r.replacement);
                    }
                }
            }
        }
        out.extend(current);
        out.extend(inserted);
    }
    Pronunciation::new(out).expect("deletions never empty the sequence")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub rules: Vec<NoiseRule>,
    pub variants_per_word: usize,
    /// Train, dev and test fractions of the words.
    pub split: [f64; 3],
    pub seed: u64,
}

impl GenConfig {
    pub fn new(rules: Vec<NoiseRule>, seed: u64) -> Self {
        GenConfig { rules, variants_per_word: 10, split: [0.8, 0.1, 0.1], seed }
    }

    pub fn validate(&self, inv: &PhoneInventory) -> Result<()> {
        for r in &self.rules {
            r.validate(inv)?;
        }
        if self.variants_per_word == 0 {
            return Err(Error::invalid("variants per word must be positive"));
        }
        if self.split.iter().any(|&f| f.is_nan() || f <= 0.0) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions {:?} must be positive and sum to 1", self.split)));
        }
        Ok(())
    }

    /// Same configuration with every rule probability set to zero.
    pub fn zero_noise(&self) -> Self {
        let rules = self.rules.iter().map(|r| NoiseRule { probability: 0.0, ..*r }).collect();
        GenConfig { rules, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<CorpusExample>,
    pub dev: Vec<CorpusExample>,
    pub test: Vec<CorpusExample>,
}

/// `variants_per_word` surface forms for every word, split by word into
/// train/dev/test. Within a split, examples follow lexicon order.
pub fn synth_corpus(lex: &Lexicon, inv: &PhoneInventory, cfg: &GenConfig) -> Result<SyntheticCorpus> {
    cfg.validate(inv)?;
    if lex.is_empty() {
        return Err(Error::invalid("cannot generate a corpus from an empty lexicon"));
    }
    let n = lex.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream(cfg.seed, Stream::Split));
    let n_train = (cfg.split[0] * n as f64).round() as usize;
    let n_dev = ((cfg.split[1] * n as f64).round() as usize).min(n.saturating_sub(n_train));
    if n_train == 0 || n_dev == 0 || n_train + n_dev >= n {
        return Err(Error::invalid(format!(
            "split {:?} of {n} words leaves an empty partition",
            cfg.split
        )));
    }
    let mut part = vec![2u8; n];
    for &w in &order[..n_train] {
        part[w] = 0;
    }
    for &w in &order[n_train..n_train + n_dev] {
        part[w] = 1;
    }

    let mut rng = stream(cfg.seed, Stream::Noise);
    let mut splits: [Vec<CorpusExample>; 3] = Default::default();
    for (entry, &p) in lex.entries().iter().zip(&part) {
        for _ in 0..cfg.variants_per_word {
            let surface = apply_rules(&entry.canonical, &cfg.rules, &mut rng);
            splits[p as usize].push(CorpusExample { word: entry.word.clone(), surface });
        }
    }
    let [train, dev, test] = splits;
    Ok(SyntheticCorpus { train, dev, test })
}

/// Symbols of the default inventory. The last five only arise as noise.
pub const DEFAULT_PHONES: &[&str] = &[
    "p", "b", "t", "d", "k", "g", "m", "n", "s", "z", "l", "r", "hh", "iy", "ih", "eh", "ae", "aa", "ah", "uw",
    "dx", "q", "ix", "ax", "nx",
];

const ONSETS: &[&str] = &["p", "b", "t", "d", "k", "g", "m", "n", "s", "z", "l", "r", "hh"];
const VOWELS: &[&str] = &["iy", "ih", "eh", "ae", "aa", "ah", "uw"];
const CODAS: &[&str] = &["p", "t", "d", "k", "m", "n", "s", "z", "l"];

pub fn default_inventory() -> PhoneInventory {
    PhoneInventory::from_symbols(DEFAULT_PHONES.iter().copied()).expect("default symbols are distinct")
}

/// The shipped rule pack in rule-file format: flapping and glottalization of
/// stops, vowel reduction and raising, nasal flapping, h-dropping, devoicing,
/// and occasional schwa insertion.
pub const DEFAULT_RULES: &str = "\
substitute\tt\tdx\t0.35
substitute\tt\tq\t0.15
substitute\td\tdx\t0.3
delete\td\t-\t0.15
delete\tt\t-\t0.1
substitute\tih\tix\t0.5
substitute\tah\tax\t0.5
substitute\teh\tih\t0.25
substitute\tiy\tih\t0.2
substitute\tae\teh\t0.2
substitute\tn\tnx\t0.3
delete\thh\t-\t0.5
substitute\tz\ts\t0.3
insert\tanywhere\tax\t0.03
";

pub fn default_rules(inv: &PhoneInventory) -> Result<Vec<NoiseRule>> {
    parse_rules(DEFAULT_RULES, inv)
}

/// `n_words` distinct random words of one or two CV(C) syllables over the
/// default inventory. Word names are the phone symbols joined by `-`.
pub fn synth_lexicon(inv: &PhoneInventory, n_words: usize, seed: u64) -> Result<Lexicon> {
    let ids = |set: &[&str]| -> Result<Vec<PhoneId>> {
        set.iter()
            .map(|s| inv.id(s).ok_or_else(|| Error::invalid(format!("inventory lacks phone {s:?}"))))
            .collect()
    };
    let (onsets, vowels, codas) = (ids(ONSETS)?, ids(VOWELS)?, ids(CODAS)?);
    let mut rng = stream(seed, Stream::Lexicon);
    let mut lex = Lexicon::new();
    let mut attempts = 0usize;
    while lex.len() < n_words {
        attempts += 1;
        if attempts > 1000 * n_words.max(1) {
            return Err(Error::invalid(format!("could not draw {n_words} distinct words")));
        }
        let syllables = if rng.random_bool(0.6) { 1 } else { 2 };
        let mut phones = Vec::new();
        for _ in 0..syllables {
            phones.push(onsets[rng.random_range(0..onsets.len())]);
            phones.push(vowels[rng.random_range(0..vowels.len())]);
            if rng.random_bool(0.5) {
                phones.push(codas[rng.random_range(0..codas.len())]);
            }
        }
        let p = Pronunciation::new(phones)?;
        let word: Vec<&str> = p.phones().iter().map(|&id| inv.symbol(id).expect("valid id")).collect();
        let word = word.join("-");
        if lex.get(&word).is_none() {
            lex.push(word, p)?;
        }
    }
    Ok(lex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phonology::{corpus_to_text, exact_lookup, parse_corpus};

    fn inv() -> PhoneInventory {
        default_inventory()
    }

    fn pron(inv: &PhoneInventory, s: &str) -> Pronunciation {
        Pronunciation::parse(s, inv).unwrap()
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let inv = inv();
        let rules: Vec<_> = default_rules(&inv).unwrap().into_iter().map(|r| NoiseRule { probability: 0.0, ..r }).collect();
        let mut rng = stream(1, Stream::Noise);
        let lex = synth_lexicon(&inv, 50, 1).unwrap();
        for e in lex.entries() {
            assert_eq!(apply_rules(&e.canonical, &rules, &mut rng), e.canonical);
        }
    }

    #[test]
    fn forced_deletion() {
        let inv = inv();
        let rules = vec![NoiseRule::delete(inv.id("b").unwrap(), 1.0)];
        let mut rng = stream(1, Stream::Noise);
        assert_eq!(apply_rules(&pron(&inv, "p b k"), &rules, &mut rng), pron(&inv, "p k"));
        // never empties the sequence
        assert_eq!(apply_rules(&pron(&inv, "b"), &rules, &mut rng), pron(&inv, "b"));
        assert_eq!(apply_rules(&pron(&inv, "b b"), &rules, &mut rng), pron(&inv, "b"));
    }

    #[test]
    fn substitution_then_insertion() {
        let inv = inv();
        let rules = vec![
            NoiseRule::substitute(inv.id("t").unwrap(), inv.id("dx").unwrap(), 1.0),
            NoiseRule::insert(inv.id("ax").unwrap(), 1.0),
        ];
        let mut rng = stream(1, Stream::Noise);
        assert_eq!(apply_rules(&pron(&inv, "t iy"), &rules, &mut rng), pron(&inv, "dx ax iy ax"));
    }

    #[test]
    fn deletion_rate_monte_carlo() {
        let inv = inv();
        let rules = vec![NoiseRule::delete(inv.id("b").unwrap(), 0.3)];
        let mut rng = stream(11, Stream::Noise);
        let p = pron(&inv, "p b k");
        let n = 10_000;
        let deleted = (0..n).filter(|_| apply_rules(&p, &rules, &mut rng).len() == 2).count();
        let rate = deleted as f64 / n as f64;
        assert!((rate - 0.3).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn rule_file_round_trip() {
        let inv = inv();
        let rules = default_rules(&inv).unwrap();
        assert_eq!(rules_to_text(&rules, &inv), DEFAULT_RULES);
        assert!(parse_rules("delete\tb\tp\t0.1\n", &inv).is_err());
        assert!(parse_rules("insert\tb\tp\t0.1\n", &inv).is_err());
        assert!(parse_rules("substitute\tb\tzz\t0.1\n", &inv).is_err());
        assert!(parse_rules("substitute\tb\tp\t1.5\n", &inv).is_err());
        assert!(parse_rules("# c\n\nsubstitute\tb\tp\t0.5\n", &inv).unwrap().len() == 1);
    }

    #[test]
    fn corpus_counts_splits_and_determinism() {
        let inv = inv();
        let lex = synth_lexicon(&inv, 100, 5).unwrap();
        let mut cfg = GenConfig::new(default_rules(&inv).unwrap(), 5);
        cfg.variants_per_word = 3;
        let c = synth_corpus(&lex, &inv, &cfg).unwrap();
        assert_eq!(c.train.len() + c.dev.len() + c.test.len(), 300);
        assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (240, 30, 30));
        let words = |v: &[CorpusExample]| v.iter().map(|e| e.word.clone()).collect::<std::collections::HashSet<_>>();
        let (a, b, t) = (words(&c.train), words(&c.dev), words(&c.test));
        assert!(a.is_disjoint(&b) && a.is_disjoint(&t) && b.is_disjoint(&t));

        let again = synth_corpus(&lex, &inv, &cfg).unwrap();
        assert_eq!(corpus_to_text(&c.train, &inv), corpus_to_text(&again.train, &inv));
        assert_eq!(corpus_to_text(&c.test, &inv), corpus_to_text(&again.test, &inv));
        assert_eq!(lex.to_text(&inv), synth_lexicon(&inv, 100, 5).unwrap().to_text(&inv));

        for part in [&c.train, &c.dev, &c.test] {
            let text = corpus_to_text(part, &inv);
            assert_eq!(&parse_corpus(&text, &inv, &lex).unwrap(), part);
        }
    }

    #[test]
    fn zero_noise_corpus_is_solved_by_lookup() {
        let inv = inv();
        let lex = synth_lexicon(&inv, 40, 2).unwrap();
        let cfg = GenConfig::new(default_rules(&inv).unwrap(), 2).zero_noise();
        let c = synth_corpus(&lex, &inv, &cfg).unwrap();
        for ex in c.train.iter().chain(&c.dev).chain(&c.test) {
            assert_eq!(exact_lookup(&ex.surface, &lex), Some(ex.word.as_str()));
        }
    }

    #[test]
    fn empty_partition_is_an_error() {
        let inv = inv();
        let lex = synth_lexicon(&inv, 3, 2).unwrap();
        let cfg = GenConfig::new(Vec::new(), 2);
        assert!(synth_corpus(&lex, &inv, &cfg).is_err());
        let mut bad = GenConfig::new(Vec::new(), 2);
        bad.split = [0.5, 0.5, 0.5];
        assert!(bad.validate(&inv).is_err());
    }
}
