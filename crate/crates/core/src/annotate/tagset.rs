use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK_POS: &str = "UNK_POS";

/// The 17 universal part-of-speech tags.
pub const UNIVERSAL_TAGS: [&str; 17] = [
    "ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM", "PART", "PRON", "PROPN",
    "PUNCT", "SCONJ", "SYM", "VERB", "X",
];

/// Ordered POS inventory. `UNK_POS` always has id 0.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PosTagSet {
    tags: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for PosTagSet {
    fn default() -> Self {
        PosTagSet::universal()
    }
}

impl PosTagSet {
    pub fn universal() -> Self {
        PosTagSet::new(UNIVERSAL_TAGS.iter().copied()).expect("universal tags are distinct")
    }

    pub fn new<'a>(tags: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut all = vec![UNK_POS.to_string()];
        all.extend(tags.into_iter().filter(|t| *t != UNK_POS).map(String::from));
        let ids: HashMap<String, usize> = all
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        if ids.len() != all.len() {
            return Err(Error::Invalid("duplicate POS tag in tagset".into()));
        }
        Ok(PosTagSet { tags: all, ids })
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        0
    }

    /// Id of `tag`, or the `UNK_POS` id when the tag is not in the set.
    pub fn id(&self, tag: &str) -> usize {
        self.ids.get(tag).copied().unwrap_or(0)
    }

    pub fn tag(&self, id: usize) -> &str {
        self.tags.get(id).map_or(UNK_POS, String::as_str)
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn to_text(&self) -> String {
        self.tags[1..].join("\n")
    }

    pub fn parse(text: &str) -> Result<Self> {
        PosTagSet::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn universal_set_has_unk_first() {
        let t = PosTagSet::universal();
        assert_eq!(t.len(), 18);
        assert_eq!(t.id(UNK_POS), 0);
        assert_eq!(t.tag(t.id("NOUN")), "NOUN");
        assert_eq!(t.id("NN"), t.unk_id());
    }

    #[test]
    fn text_roundtrip() {
        let t = PosTagSet::new(["NN", "VB"]).unwrap();
        assert_eq!(PosTagSet::parse(&t.to_text()).unwrap(), t);
    }
}
