//! Phone inventories, pronunciations, lexicon and corpus files, and the two
//! non-learned lexical-access baselines.
//!
//! File formats (UTF-8, LF or CRLF on input, LF on output):
//!
//! * inventory: one phone symbol per line; blank lines and `#` comments ignored.
//! * lexicon / corpus: `word<TAB>phone phone ...` per line.

use std::collections::HashMap;
use std::fmt;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Index of a phone within its [`PhoneInventory`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PhoneId(pub u16);

impl PhoneId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A closed, ordered set of phone symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhoneInventory {
    symbols: Vec<String>,
    index: HashMap<String, PhoneId>,
}

impl PhoneInventory {
    pub fn from_symbols<I, S>(symbols: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut inv = PhoneInventory { symbols: Vec::new(), index: HashMap::new() };
        for (i, sym) in symbols.into_iter().enumerate() {
            inv.push(sym.into(), i + 1)?;
        }
        if inv.symbols.is_empty() {
            return Err(Error::invalid("phone inventory is empty"));
        }
        Ok(inv)
    }

    fn push(&mut self, sym: String, line: usize) -> Result<()> {
        if sym.is_empty() || sym.chars().any(|c| c.is_whitespace() || c.is_control()) {
            return Err(Error::parse(line, format!("invalid phone symbol {sym:?}")));
        }
        if self.index.contains_key(&sym) {
            return Err(Error::parse(line, format!("duplicate phone symbol `{sym}`")));
        }
        if self.symbols.len() >= u16::MAX as usize {
            return Err(Error::parse(line, "too many phone symbols"));
        }
        let id = PhoneId(self.symbols.len() as u16);
        self.index.insert(sym.clone(), id);
        self.symbols.push(sym);
        Ok(())
    }

    /// Parses the one-symbol-per-line inventory format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut inv = PhoneInventory { symbols: Vec::new(), index: HashMap::new() };
        for (lineno, line) in lines(text) {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            inv.push(line.to_string(), lineno)?;
        }
        if inv.symbols.is_empty() {
            return Err(Error::invalid("phone inventory is empty"));
        }
        Ok(inv)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for s in &self.symbols {
            out.push_str(s);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, id: PhoneId) -> Option<&str> {
        self.symbols.get(id.index()).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<PhoneId> {
        self.index.get(symbol).copied()
    }

    /// First 8 bytes (little-endian) of SHA-256 over the normalized file text.
    /// Stored in checkpoints to catch inventory mismatches.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(bytes)
    }
}

/// A non-empty phone sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pronunciation(Vec<PhoneId>);

impl Pronunciation {
    pub fn new(phones: Vec<PhoneId>) -> Result<Self> {
        if phones.is_empty() {
            return Err(Error::invalid("pronunciation must contain at least one phone"));
        }
        Ok(Pronunciation(phones))
    }

    /// Builds from raw indices; panics on an empty slice. Handy in tests.
    pub fn from_ids(ids: &[u16]) -> Self {
        Self::new(ids.iter().map(|&i| PhoneId(i)).collect()).expect("empty pronunciation")
    }

    /// Parses space-separated symbols against `inv`.
    pub fn parse(text: &str, inv: &PhoneInventory) -> Result<Self> {
        let mut phones = Vec::new();
        for sym in text.split_whitespace() {
            match inv.id(sym) {
                Some(id) => phones.push(id),
                None => return Err(Error::invalid(format!("unknown phone `{sym}`"))),
            }
        }
        Self::new(phones)
    }

    pub fn phones(&self) -> &[PhoneId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, inv: &PhoneInventory) -> Result<()> {
        match self.0.iter().find(|p| p.index() >= inv.len()) {
            Some(p) => Err(Error::invalid(format!("phone id {} outside inventory of {}", p.0, inv.len()))),
            None => Ok(()),
        }
    }

    pub fn display<'a>(&'a self, inv: &'a PhoneInventory) -> DisplayPron<'a> {
        DisplayPron { pron: self, inv }
    }
}

pub struct DisplayPron<'a> {
    pron: &'a Pronunciation,
    inv: &'a PhoneInventory,
}

impl fmt::Display for DisplayPron<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.pron.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(self.inv.symbol(*p).unwrap_or("?"))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub word: String,
    pub canonical: Pronunciation,
}

/// Ordered word list with canonical pronunciations. Entry order is the
/// tie-breaking order for every ranking in the crate.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: Vec<LexiconEntry>,
    index: HashMap<String, usize>,
}

impl Lexicon {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, word: impl Into<String>, canonical: Pronunciation) -> Result<()> {
        let word = word.into();
        check_token(&word).map_err(Error::invalid)?;
        if self.index.contains_key(&word) {
            return Err(Error::invalid(format!("duplicate word `{word}`")));
        }
        self.index.insert(word.clone(), self.entries.len());
        self.entries.push(LexiconEntry { word, canonical });
        Ok(())
    }

    pub fn parse(text: &str, inv: &PhoneInventory) -> Result<Self> {
        let mut lex = Lexicon::new();
        for (lineno, line) in lines(text) {
            if line.trim().is_empty() {
                continue;
            }
            let (word, pron) = parse_entry_line(line, lineno, inv)?;
            if lex.index.contains_key(word) {
                return Err(Error::parse(lineno, format!("duplicate word `{word}`")));
            }
            lex.push(word, pron).map_err(|e| Error::parse(lineno, e.to_string()))?;
        }
        Ok(lex)
    }

    pub fn to_text(&self, inv: &PhoneInventory) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\n", e.word, e.canonical.display(inv)));
        }
        out
    }

    pub fn entries(&self) -> &[LexiconEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn get(&self, word: &str) -> Option<&LexiconEntry> {
        self.position(word).map(|i| &self.entries[i])
    }

    pub fn canonical(&self, word: &str) -> Result<&Pronunciation> {
        self.get(word)
            .map(|e| &e.canonical)
            .ok_or_else(|| Error::UnknownWord(word.to_string()))
    }
}

/// A labeled surface pronunciation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusExample {
    pub word: String,
    pub surface: Pronunciation,
}

pub fn parse_corpus(text: &str, inv: &PhoneInventory, lex: &Lexicon) -> Result<Vec<CorpusExample>> {
    let mut out = Vec::new();
    for (lineno, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let (word, surface) = parse_entry_line(line, lineno, inv)?;
        if lex.position(word).is_none() {
            return Err(Error::parse(lineno, format!("word `{word}` is not in the lexicon")));
        }
        out.push(CorpusExample { word: word.to_string(), surface });
    }
    Ok(out)
}

pub fn corpus_to_text(examples: &[CorpusExample], inv: &PhoneInventory) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&format!("{}\t{}\n", ex.word, ex.surface.display(inv)));
    }
    out
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn check_token(word: &str) -> std::result::Result<(), String> {
    if word.is_empty() {
        return Err("empty word".into());
    }
    if word.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(format!("invalid word token {word:?}"));
    }
    Ok(())
}

fn parse_entry_line<'a>(line: &'a str, lineno: usize, inv: &PhoneInventory) -> Result<(&'a str, Pronunciation)> {
    let (word, phones) = line
        .split_once('\t')
        .ok_or_else(|| Error::parse(lineno, "missing TAB between word and phones"))?;
    check_token(word).map_err(|m| Error::parse(lineno, m))?;
    let mut ids = Vec::new();
    for sym in phones.split_whitespace() {
        match inv.id(sym) {
            Some(id) => ids.push(id),
            None => return Err(Error::parse(lineno, format!("unknown phone `{sym}`"))),
        }
    }
    if ids.is_empty() {
        return Err(Error::parse(lineno, format!("word `{word}` has no phones")));
    }
    Ok((word, Pronunciation(ids)))
}

/// Unit-cost edit distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.len() < b.len() {
        return levenshtein(b, a);
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn pron_distance(a: &Pronunciation, b: &Pronunciation) -> usize {
    levenshtein(a.phones(), b.phones())
}

/// Word of the first entry whose canonical matches `surface` exactly.
pub fn exact_lookup<'a>(surface: &Pronunciation, lex: &'a Lexicon) -> Option<&'a str> {
    lex.entries()
        .iter()
        .find(|e| &e.canonical == surface)
        .map(|e| e.word.as_str())
}

/// The `k` words closest to `surface` by edit distance, lexicon order on ties.
pub fn levenshtein_lookup<'a>(surface: &Pronunciation, lex: &'a Lexicon, k: usize) -> Result<Vec<&'a str>> {
    if k == 0 || k > lex.len() {
        return Err(Error::invalid(format!("k = {k} out of range for a lexicon of {}", lex.len())));
    }
    let mut ranked: Vec<(usize, usize)> = lex
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| (pron_distance(surface, &e.canonical), i))
        .collect();
    ranked.sort_unstable();
    Ok(ranked[..k].iter().map(|&(_, i)| lex.entries()[i].word.as_str()).collect())
}
