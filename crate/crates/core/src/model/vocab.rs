use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::fp::{BOS, UH_TOKEN, UM_TOKEN};
use crate::error::{Error, Result};

/// Phoneme symbol table. Ids 0..=2 are fixed (BOS, "<uh>", "<um>"); the rest
/// are the corpus symbols in sorted order, so identical corpora produce
/// identical tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

pub const BOS_ID: usize = 0;
pub const UH_ID: usize = 1;
pub const UM_ID: usize = 2;

impl Vocab {
    pub fn build<'a>(symbols: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut rest: BTreeSet<String> = BTreeSet::new();
        for s in symbols {
            if s != BOS && s != UH_TOKEN && s != UM_TOKEN {
                rest.insert(s.to_string());
            }
        }
        let mut all = vec![BOS.to_string(), UH_TOKEN.to_string(), UM_TOKEN.to_string()];
        all.extend(rest);
        Vocab::from_symbols(all).expect("constructed symbols are unique")
    }

    pub fn from_symbols(symbols: Vec<String>) -> Result<Vocab> {
        let mut index = HashMap::new();
        for (i, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Vocabulary(format!("duplicate symbol {s:?}")));
            }
        }
        if symbols.len() < 3
            || symbols[BOS_ID] != BOS
            || symbols[UH_ID] != UH_TOKEN
            || symbols[UM_ID] != UM_TOKEN
        {
            return Err(Error::Vocabulary(
                "vocabulary must start with <bos>, <uh>, <um>".into(),
            ));
        }
        Ok(Vocab { symbols, index })
    }

    /// Rebuilds the lookup index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
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

    pub fn id(&self, symbol: &str) -> Result<usize> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::Vocabulary(format!("unknown phoneme symbol {symbol:?}")))
    }

    pub fn symbol(&self, id: usize) -> Result<&str> {
        self.symbols
            .get(id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::Vocabulary(format!("phoneme id {id} out of range")))
    }

    pub fn ids(&self, symbols: &[String]) -> Result<Vec<usize>> {
        symbols.iter().map(|s| self.id(s)).collect()
    }

    pub fn is_fp_id(id: usize) -> bool {
        id == UH_ID || id == UM_ID
    }
}
