use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const CLS: usize = 4;
pub const SEP: usize = 5;
pub const MASK: usize = 6;

/// Reserved symbols, in id order.
pub const SPECIALS: [&str; 7] = ["<pad>", "<s>", "</s>", "<unk>", "[CLS]", "[SEP]", "[MASK]"];

/// Shared source/target symbol table. Specials occupy ids `0..7`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    symbols: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocab {
    fn default() -> Self {
        Vocab::from_symbols(Vec::new())
    }
}

impl Vocab {
    fn from_symbols(extra: Vec<String>) -> Self {
        let mut symbols: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        symbols.extend(extra);
        let ids = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        Vocab { symbols, ids }
    }

    /// Builds one vocabulary over every segmented sentence of both languages.
    /// Symbols are ordered by descending frequency, ties lexicographically.
    pub fn build<'a, I, S>(sentences: I) -> Self
    where
        I: IntoIterator<Item = &'a [S]>,
        S: AsRef<str> + 'a,
    {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for sentence in sentences {
            for sym in sentence {
                let sym = sym.as_ref();
                if !SPECIALS.contains(&sym) {
                    *counts.entry(sym).or_default() += 1;
                }
            }
        }
        let mut entries: Vec<(&str, u64)> = counts.into_iter().collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocab::from_symbols(entries.into_iter().map(|(s, _)| s.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> usize {
        self.ids.get(symbol).copied().unwrap_or(UNK)
    }

    pub fn get(&self, symbol: &str) -> Option<usize> {
        self.ids.get(symbol).copied()
    }

    pub fn symbol(&self, id: usize) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, symbols: &[S]) -> Vec<usize> {
        symbols.iter().map(|s| self.id(s.as_ref())).collect()
    }

    /// Maps ids back to symbols, dropping specials other than UNK.
    pub fn decode_ids(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id == UNK || id >= SPECIALS.len())
            .filter_map(|&id| self.symbol(id).map(str::to_string))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.symbols.iter().enumerate() {
            let _ = writeln!(out, "{s}\t{i}");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let fail = |line: usize, msg: String| Error::Format {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut symbols = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (sym, id) = line
                .split_once('\t')
                .ok_or_else(|| fail(i + 1, "expected `symbol<TAB>id`".into()))?;
            let id: usize = id
                .parse()
                .map_err(|_| fail(i + 1, format!("bad id {id:?}")))?;
            if id != symbols.len() {
                return Err(fail(i + 1, format!("ids must be dense and ordered, got {id}")));
            }
            symbols.push(sym.to_string());
        }
        if symbols.len() < SPECIALS.len() || symbols[..SPECIALS.len()] != SPECIALS {
            return Err(fail(1, "reserved symbols missing from the first ids".into()));
        }
        let vocab = Vocab::from_symbols(symbols.split_off(SPECIALS.len()));
        if vocab.ids.len() != vocab.symbols.len() {
            return Err(fail(0, "duplicate symbol".into()));
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::parse(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_fixed_ids() {
        let v = Vocab::default();
        assert_eq!(v.len(), 7);
        assert_eq!(v.id("<pad>"), PAD);
        assert_eq!(v.id("</s>"), EOS);
        assert_eq!(v.id("[CLS]"), CLS);
        assert_eq!(v.id("never-seen"), UNK);
    }

    #[test]
    fn shared_vocab_covers_both_sides() {
        let src = vec!["the</w>".to_string(), "cat</w>".into()];
        let tgt = vec!["die</w>".to_string(), "Katze</w>".into(), "the</w>".into()];
        let v = Vocab::build([src.as_slice(), tgt.as_slice()]);
        assert_eq!(v.len(), 7 + 4);
        // most frequent first
        assert_eq!(v.id("the</w>"), 7);
        for s in src.iter().chain(&tgt) {
            assert_ne!(v.id(s), UNK);
            assert_eq!(v.symbol(v.id(s)), Some(s.as_str()));
        }
    }

    #[test]
    fn text_roundtrip() {
        let s = vec!["a".to_string(), "b</w>".into()];
        let v = Vocab::build([s.as_slice()]);
        let back = Vocab::parse(&v.to_text(), Path::new("v.tsv")).unwrap();
        assert_eq!(v, back);
    }

    #[test]
    fn rejects_sparse_ids() {
        let mut text = Vocab::default().to_text();
        text.push_str("x\t9\n");
        assert!(Vocab::parse(&text, Path::new("v.tsv")).is_err());
    }
}
