use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Suffix attached to the final subword of every word so that decoding can
/// restore word boundaries.
pub const END_OF_WORD: &str = "</w>";

/// Ordered byte-pair merge rules. The position of a rule is its priority
/// when segmenting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeTable {
    merges: Vec<(String, String)>,
    ranks: HashMap<String, HashMap<String, usize>>,
}

/// A word split into subwords. The final subword carries the end-of-word flag.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    pub word: String,
    pub subwords: Vec<String>,
    pub end_of_word: Vec<bool>,
}

impl Segmentation {
    fn new(word: &str, subwords: Vec<String>) -> Self {
        let n = subwords.len();
        let end_of_word = (0..n).map(|i| i + 1 == n).collect();
        Segmentation {
            word: word.to_string(),
            subwords,
            end_of_word,
        }
    }

    pub fn len(&self) -> usize {
        self.subwords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subwords.is_empty()
    }

    /// Subwords as vocabulary symbols, end marker included.
    pub fn symbols(&self) -> Vec<String> {
        self.subwords
            .iter()
            .zip(&self.end_of_word)
            .map(|(s, &end)| if end { format!("{s}{END_OF_WORD}") } else { s.clone() })
            .collect()
    }
}

impl MergeTable {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for (rank, pair) in merges.iter().enumerate() {
            if pair.0.is_empty() || pair.1.is_empty() {
                return Err(Error::Invalid(format!("merge {rank} has an empty side")));
            }
            let by_right = ranks.entry(pair.0.clone()).or_default();
            if by_right.insert(pair.1.clone(), rank).is_some() {
                return Err(Error::Invalid(format!(
                    "duplicate merge pair ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(MergeTable { merges, ranks })
    }

    /// Learns up to `num_merges` rules by repeatedly merging the most
    /// frequent adjacent symbol pair. Ties go to the lexicographically
    /// smallest pair.
    pub fn learn<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for line in corpus {
            for word in line.as_ref().split_whitespace() {
                *counts.entry(word).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus("no words to learn merges from"));
        }
        let mut words: Vec<(Vec<String>, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w.chars().map(String::from).collect(), c))
            .collect();

        let mut merges = Vec::new();
        while merges.len() < num_merges {
            let mut pairs: BTreeMap<(&str, &str), u64> = BTreeMap::new();
            for (symbols, count) in &words {
                for w in symbols.windows(2) {
                    *pairs.entry((w[0].as_str(), w[1].as_str())).or_default() += count;
                }
            }
            // BTreeMap iterates in lexicographic order, so the first maximum wins ties.
            let mut best: Option<((&str, &str), u64)> = None;
            for (pair, count) in pairs {
                if best.is_none_or(|(_, c)| count > c) {
                    best = Some((pair, count));
                }
            }
            let Some(((left, right), _)) = best else {
                break;
            };
            let pair = (left.to_string(), right.to_string());
            for (symbols, _) in words.iter_mut() {
                merge_pair(symbols, &pair.0, &pair.1);
            }
            merges.push(pair);
        }
        MergeTable::new(merges)
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn rank(&self, left: &str, right: &str) -> Option<usize> {
        self.ranks.get(left)?.get(right).copied()
    }

    /// Applies the merges in priority order until no rule fires.
    pub fn encode_word(&self, word: &str) -> Segmentation {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.rank(&w[0], &w[1]))
                .min();
            let Some(rank) = best else { break };
            let (left, right) = &self.merges[rank];
            merge_pair(&mut symbols, left, right);
        }
        Segmentation::new(word, symbols)
    }

    pub fn encode_sentence(&self, sentence: &str) -> Vec<Segmentation> {
        sentence
            .split_whitespace()
            .map(|w| self.encode_word(w))
            .collect()
    }

    /// Flat symbol stream for a whitespace-tokenized sentence.
    pub fn sentence_symbols(&self, sentence: &str) -> Vec<String> {
        self.encode_sentence(sentence)
            .iter()
            .flat_map(Segmentation::symbols)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (l, r) in &self.merges {
            let _ = writeln!(out, "{l} {r}");
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: format!("expected `left right`, got {line:?}"),
                    })
                }
            }
        }
        MergeTable::new(merges).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MergeTable::parse(&text, path)
    }
}

fn merge_pair(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            let r = symbols.remove(i + 1);
            symbols[i].push_str(&r);
        }
        i += 1;
    }
}

/// Joins subword symbols back into text, turning end markers into spaces.
pub fn decode<S: AsRef<str>>(symbols: &[S]) -> String {
    let mut out = String::new();
    for sym in symbols {
        let sym = sym.as_ref();
        match sym.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                out.push_str(stem);
                out.push(' ');
            }
            None => out.push_str(sym),
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(t: &MergeTable) -> Vec<(&str, &str)> {
        t.merges()
            .iter()
            .map(|(l, r)| (l.as_str(), r.as_str()))
            .collect()
    }

    #[test]
    fn tie_is_broken_lexicographically() {
        let t = MergeTable::learn(&["aa ab"], 1).unwrap();
        assert_eq!(pairs(&t), vec![("a", "a")]);
    }

    #[test]
    fn learns_low_from_toy_corpus() {
        let t = MergeTable::learn(&["low low lower"], 2).unwrap();
        assert_eq!(pairs(&t), vec![("l", "o"), ("lo", "w")]);
        assert_eq!(t.encode_word("low").subwords, vec!["low"]);
        assert_eq!(t.encode_word("lower").subwords, vec!["low", "e", "r"]);
    }

    #[test]
    fn stops_when_pairs_run_out() {
        let t = MergeTable::learn(&["ab"], 10).unwrap();
        assert_eq!(pairs(&t), vec![("a", "b")]);
    }

    #[test]
    fn zero_merges_gives_characters() {
        let t = MergeTable::learn(&["hello world"], 0).unwrap();
        assert!(t.is_empty());
        assert_eq!(t.encode_word("hey").subwords, vec!["h", "e", "y"]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let empty: [&str; 0] = [];
        assert!(matches!(MergeTable::learn(&empty, 3), Err(Error::EmptyCorpus(_))));
        assert!(MergeTable::learn(&["   "], 3).is_err());
    }

    #[test]
    fn sunshine_splits_into_three() {
        let merges = [("s", "u"), ("su", "n"), ("s", "h"), ("i", "n"), ("in", "e")]
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        let t = MergeTable::new(merges).unwrap();
        let seg = t.encode_word("sunshine");
        assert_eq!(seg.subwords, vec!["sun", "sh", "ine"]);
        assert_eq!(seg.end_of_word, vec![false, false, true]);
        assert_eq!(seg.symbols(), vec!["sun", "sh", "ine</w>"]);
    }

    #[test]
    fn single_char_without_merges() {
        let t = MergeTable::default();
        assert_eq!(t.encode_word("a").subwords, vec!["a"]);
    }

    #[test]
    fn decode_strips_markers() {
        assert_eq!(decode(&["sun", "sh", "ine</w>"]), "sunshine");
        assert_eq!(decode::<&str>(&[]), "");
        assert_eq!(decode(&["a</w>", "b", "c</w>"]), "a bc");
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let m = vec![("a".into(), "b".into()), ("a".into(), "b".into())];
        assert!(MergeTable::new(m).is_err());
    }

    #[test]
    fn file_roundtrip_keeps_order() {
        let t = MergeTable::learn(&["the cat sat on the mat with the hat"], 8).unwrap();
        let back = MergeTable::parse(&t.to_text(), Path::new("m.txt")).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn malformed_merge_line_reports_line_number() {
        let err = MergeTable::parse("a b\nabc\n", Path::new("m.txt")).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }));
    }
}
