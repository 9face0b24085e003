//! Word → phoneme lookup backed by a bundled minimal dictionary. Real G2P is
//! out of scope; out-of-vocabulary words fail loudly instead of falling back.

use std::collections::BTreeMap;
use std::path::Path;

use super::fp::fp_spelling;
use super::transcript::Token;
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("lexicon.txt");

#[derive(Clone, Debug)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled lexicon is well-formed")
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_lowercase();
            let phonemes: Vec<String> = parts.map(|p| p.to_string()).collect();
            if phonemes.is_empty() {
                return Err(Error::Data(format!(
                    "lexicon entry without phonemes: {word}"
                )));
            }
            entries.insert(word, phonemes);
        }
        Ok(Lexicon { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Phonemes for one word; empty or unknown words are OOV errors naming
    /// the word.
    pub fn lookup(&self, word: &str) -> Result<Vec<String>> {
        let key = word.to_lowercase();
        if key.is_empty() {
            return Err(Error::Oov {
                words: vec!["<empty>".into()],
            });
        }
        self.entries.get(&key).cloned().ok_or_else(|| Error::Oov {
            words: vec![word.to_string()],
        })
    }

    /// G2P for one transcript token: dictionary lookup for words, the fixed
    /// spelling for FP tokens (uh = "ah", um = "ah m").
    pub fn g2p(&self, token: &Token) -> Result<Vec<String>> {
        match token {
            Token::Word(w) => self.lookup(w),
            Token::Fp(tag) => Ok(fp_spelling(*tag).iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Full-utterance conversion: words expand to their phonemes, FP tokens
    /// stay single symbols ("<uh>"/"<um>") so downstream FP extraction sees
    /// one token per filled pause. Collects every OOV word before failing.
    pub fn tokens_to_symbols(&self, tokens: &[Token]) -> Result<Vec<String>> {
        let mut symbols = Vec::new();
        let mut oov: Vec<String> = Vec::new();
        for tok in tokens {
            match tok {
                Token::Word(w) => match self.lookup(w) {
                    Ok(ph) => symbols.extend(ph),
                    Err(Error::Oov { words }) => {
                        for w in words {
                            if !oov.contains(&w) {
                                oov.push(w);
                            }
                        }
                    }
                    Err(e) => return Err(e),
                },
                Token::Fp(tag) => symbols.push(
                    tag.token()
                        .expect("transcript FP tokens are never FpTag::None")
                        .to_string(),
                ),
            }
        }
        if !oov.is_empty() {
            return Err(Error::Oov { words: oov });
        }
        Ok(symbols)
    }
}
