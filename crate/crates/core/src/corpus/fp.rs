//! Filled-pause tags and the text–FP pair unit: a phoneme sequence with FPs
//! removed plus the parallel per-phoneme tag sequence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentinel prepended when an utterance-initial FP needs a phoneme to attach
/// to; also the sentinel the model layer prepends to every input sequence.
pub const BOS: &str = "<bos>";
pub const UH_TOKEN: &str = "<uh>";
pub const UM_TOKEN: &str = "<um>";

/// Per-phoneme filled-pause tag: the phoneme immediately before an "uh" is
/// tagged 1, before an "um" 2, all others 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum FpTag {
    None = 0,
    Uh = 1,
    Um = 2,
}

impl From<FpTag> for u8 {
    fn from(t: FpTag) -> u8 {
        t as u8
    }
}

impl TryFrom<u8> for FpTag {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(FpTag::None),
            1 => Ok(FpTag::Uh),
            2 => Ok(FpTag::Um),
            other => Err(format!("invalid FP tag {other}, expected 0|1|2")),
        }
    }
}

impl FpTag {
    pub fn is_fp(self) -> bool {
        self != FpTag::None
    }

    /// The FP token symbol this tag reinserts, if any.
    pub fn token(self) -> Option<&'static str> {
        match self {
            FpTag::None => None,
            FpTag::Uh => Some(UH_TOKEN),
            FpTag::Um => Some(UM_TOKEN),
        }
    }

    pub fn of_symbol(sym: &str) -> Option<FpTag> {
        match sym {
            UH_TOKEN => Some(FpTag::Uh),
            UM_TOKEN => Some(FpTag::Um),
            _ => None,
        }
    }
}

/// Fixed phoneme spellings of the FP words ("uh" = ah, "um" = ah m). Used by
/// the G2P path and for FP embedding initialization.
pub fn fp_spelling(tag: FpTag) -> &'static [&'static str] {
    match tag {
        FpTag::None => &[],
        FpTag::Uh => &["ah"],
        FpTag::Um => &["ah", "m"],
    }
}

pub fn is_fp_symbol(sym: &str) -> bool {
    FpTag::of_symbol(sym).is_some()
}

/// A phoneme sequence with FPs removed plus the parallel FP tag sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FpPair {
    pub phonemes: Vec<String>,
    pub tags: Vec<FpTag>,
}

impl FpPair {
    pub fn new(phonemes: Vec<String>, tags: Vec<FpTag>) -> Result<Self> {
        if phonemes.len() != tags.len() {
            return Err(Error::Data(format!(
                "FP pair lengths disagree: {} phonemes vs {} tags",
                phonemes.len(),
                tags.len()
            )));
        }
        Ok(FpPair { phonemes, tags })
    }

    pub fn len(&self) -> usize {
        self.phonemes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phonemes.is_empty()
    }

    pub fn fp_count(&self) -> usize {
        self.tags.iter().filter(|t| t.is_fp()).count()
    }
}

/// Removes FP tokens from a phoneme sequence and tags the phoneme each FP
/// followed. An utterance-initial FP attaches to a prepended BOS sentinel.
/// Consecutive FPs after one phoneme keep the last tag.
pub fn extract_fp_pair(symbols: &[String]) -> FpPair {
    let mut phonemes: Vec<String> = Vec::with_capacity(symbols.len());
    let mut tags: Vec<FpTag> = Vec::with_capacity(symbols.len());
    for sym in symbols {
        match FpTag::of_symbol(sym) {
            Some(tag) => {
                if phonemes.is_empty() {
                    phonemes.push(BOS.to_string());
                    tags.push(FpTag::None);
                }
                *tags.last_mut().expect("non-empty") = tag;
            }
            None => {
                phonemes.push(sym.clone());
                tags.push(FpTag::None);
            }
        }
    }
    FpPair { phonemes, tags }
}

/// Inserts the FP token immediately after each tagged phoneme. Exact inverse
/// of `extract_fp_pair` on the pair: extract(reinsert(p)) == p.
pub fn reinsert_fp(pair: &FpPair) -> Vec<String> {
    let mut out = Vec::with_capacity(pair.len() + pair.fp_count());
    for (ph, tag) in pair.phonemes.iter().zip(&pair.tags) {
        out.push(ph.clone());
        if let Some(tok) = tag.token() {
            out.push(tok.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn syms(s: &str) -> Vec<String> {
        s.split_whitespace().map(|x| x.to_string()).collect()
    }

    #[test]
    fn table_style_sentence_extracts_expected_pair() {
        let raw = syms("ih t s k ao l d <um> r ay t <uh> ae p ax l");
        let pair = extract_fp_pair(&raw);
        assert_eq!(pair.phonemes, syms("ih t s k ao l d r ay t ae p ax l"));
        let expected: Vec<u8> = vec![0, 0, 0, 0, 0, 0, 2, 0, 0, 1, 0, 0, 0, 0];
        let got: Vec<u8> = pair.tags.iter().map(|&t| t as u8).collect();
        assert_eq!(got, expected);
        assert_eq!(reinsert_fp(&pair), raw);
    }

    #[test]
    fn no_fp_is_identity_with_zero_tags() {
        let raw = syms("hh ax l ow");
        let pair = extract_fp_pair(&raw);
        assert_eq!(pair.phonemes, raw);
        assert!(pair.tags.iter().all(|t| !t.is_fp()));
        assert_eq!(reinsert_fp(&pair), raw);
    }

    #[test]
    fn initial_fp_attaches_to_bos() {
        let raw = syms("<uh> hh ay");
        let pair = extract_fp_pair(&raw);
        assert_eq!(pair.phonemes, syms("<bos> hh ay"));
        assert_eq!(pair.tags, vec![FpTag::Uh, FpTag::None, FpTag::None]);
    }

    #[test]
    fn lengths_agree_and_shrink_by_fp_count() {
        let raw = syms("a <uh> b c <um> d");
        let pair = extract_fp_pair(&raw);
        assert_eq!(pair.phonemes.len(), pair.tags.len());
        assert_eq!(pair.phonemes.len(), raw.len() - 2);
    }

    #[test]
    fn mismatched_pair_rejected() {
        assert!(FpPair::new(syms("a b"), vec![FpTag::None]).is_err());
    }
}
