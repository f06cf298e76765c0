use proptest::prelude::*;
use synfuse::annotate::{annotate, AnnotatedSentence, PosTagSet, PositionTag, Word};
use synfuse::tokenizer::{decode, MergeTable, END_OF_WORD};

fn word() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abcdeLOéß]{1,9}").unwrap()
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec(word(), 1..8)
}

fn corpus_and_merges() -> impl Strategy<Value = (Vec<String>, usize)> {
    (proptest::collection::vec(sentence().prop_map(|w| w.join(" ")), 1..12), 0usize..40)
}

/// True when the tags match `O | B E | B M* E`.
fn well_formed(tags: &[PositionTag]) -> bool {
    use PositionTag::*;
    match tags {
        [Only] => true,
        [Begin, middle @ .., End] => middle.iter().all(|t| *t == Middle),
        _ => false,
    }
}

proptest! {
    #[test]
    fn decode_inverts_encoding((corpus, n) in corpus_and_merges(), probe in sentence()) {
        let merges = MergeTable::learn(&corpus, n).unwrap();
        for s in corpus.iter().chain(std::iter::once(&probe.join(" "))) {
            prop_assert_eq!(&decode(&merges.sentence_symbols(s)), s);
        }
    }

    #[test]
    fn subwords_cover_the_word((corpus, n) in corpus_and_merges(), w in word()) {
        let merges = MergeTable::learn(&corpus, n).unwrap();
        let seg = merges.encode_word(&w);
        prop_assert_eq!(seg.subwords.concat(), w.clone());
        prop_assert!(seg.subwords.iter().all(|s| !s.is_empty()));
        let symbols = seg.symbols();
        prop_assert!(symbols.last().unwrap().ends_with(END_OF_WORD));
        prop_assert!(symbols[..symbols.len() - 1].iter().all(|s| !s.ends_with(END_OF_WORD)));
    }

    #[test]
    fn encoding_reaches_a_fixpoint((corpus, n) in corpus_and_merges(), w in word()) {
        let merges = MergeTable::learn(&corpus, n).unwrap();
        let seg = merges.encode_word(&w);
        for pair in seg.subwords.windows(2) {
            prop_assert_eq!(merges.rank(&pair[0], &pair[1]), None);
        }
        prop_assert_eq!(merges.encode_word(&w), seg);
    }

    #[test]
    fn learning_is_deterministic((corpus, n) in corpus_and_merges()) {
        let a = MergeTable::learn(&corpus, n).unwrap();
        let b = MergeTable::learn(&corpus, n).unwrap();
        prop_assert_eq!(a.merges(), b.merges());
        prop_assert!(a.len() <= n);
    }

    #[test]
    fn features_align_and_broadcast((corpus, n) in corpus_and_merges(), words in sentence(), tags in proptest::collection::vec(0usize..18, 8)) {
        let merges = MergeTable::learn(&corpus, n).unwrap();
        let tagset = PosTagSet::universal();
        let words: Vec<Word> = words
            .into_iter()
            .enumerate()
            .map(|(i, surface)| Word { surface, pos_id: tags[i % tags.len()] })
            .collect();
        let out = annotate(&AnnotatedSentence::from_words(words.clone()), &merges);
        prop_assert_eq!(out.features.len(), out.subwords.len());
        prop_assert_eq!(out.word_of.len(), out.subwords.len());
        prop_assert!(out.features.iter().all(|f| f.pos_id < tagset.len() && f.case_id < 2 && f.position_id < 4));
        for (wi, w) in words.iter().enumerate() {
            let group: Vec<_> = (0..out.len()).filter(|&k| out.word_of[k] == wi).collect();
            prop_assert!(!group.is_empty());
            let first_upper = w.surface.chars().next().unwrap().is_uppercase() as usize;
            let position_tags: Vec<PositionTag> = group
                .iter()
                .map(|&k| PositionTag::from_id(out.features[k].position_id).unwrap())
                .collect();
            prop_assert!(well_formed(&position_tags), "{:?}", position_tags);
            for &k in &group {
                prop_assert_eq!(out.features[k].pos_id, w.pos_id);
                prop_assert_eq!(out.features[k].case_id, first_upper);
            }
        }
    }
}
