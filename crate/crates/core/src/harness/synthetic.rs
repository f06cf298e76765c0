//! Generated parallel corpora for desk-scale experiments.

use rand::seq::SliceRandom;
use rand::Rng;

use super::data::ParallelPair;
use crate::annotate::{AnnotatedSentence, PosTagSet, Word};
use crate::tensor::seeded_rng;

/// (source, POS, target)
type Entry = (&'static str, &'static str, &'static str);

const DETS: [Entry; 3] = [("the", "DET", "el"), ("a", "DET", "un"), ("this", "DET", "este")];
const ADJS: [Entry; 8] = [
    ("red", "ADJ", "rojo"),
    ("big", "ADJ", "grande"),
    ("old", "ADJ", "viejo"),
    ("small", "ADJ", "chico"),
    ("happy", "ADJ", "feliz"),
    ("green", "ADJ", "verde"),
    ("quiet", "ADJ", "tranquilo"),
    ("strong", "ADJ", "fuerte"),
];
const NOUNS: [Entry; 10] = [
    ("cat", "NOUN", "gato"),
    ("dog", "NOUN", "perro"),
    ("house", "NOUN", "casa"),
    ("river", "NOUN", "rio"),
    ("teacher", "NOUN", "maestro"),
    ("garden", "NOUN", "jardin"),
    ("bird", "NOUN", "pajaro"),
    ("window", "NOUN", "ventana"),
    ("farmer", "NOUN", "granjero"),
    ("letter", "NOUN", "carta"),
];
const PROPER: [Entry; 4] = [
    ("Maria", "PROPN", "Maria"),
    ("Pedro", "PROPN", "Pedro"),
    ("London", "PROPN", "Londres"),
    ("Bwelle", "PROPN", "Bwelle"),
];
const VERBS: [Entry; 8] = [
    ("sees", "VERB", "ve"),
    ("likes", "VERB", "quiere"),
    ("finds", "VERB", "encuentra"),
    ("paints", "VERB", "pinta"),
    ("follows", "VERB", "sigue"),
    ("visits", "VERB", "visita"),
    ("cleans", "VERB", "limpia"),
    ("watches", "VERB", "observa"),
];
const ADVS: [Entry; 4] = [
    ("today", "ADV", "hoy"),
    ("often", "ADV", "seguido"),
    ("slowly", "ADV", "despacio"),
    ("again", "ADV", "otra_vez"),
];

fn pair(words: &[Entry], target: Vec<&str>, tagset: &PosTagSet) -> ParallelPair {
    ParallelPair {
        source: AnnotatedSentence::from_words(
            words
                .iter()
                .map(|(s, pos, _)| Word {
                    surface: s.to_string(),
                    pos_id: tagset.id(pos),
                })
                .collect(),
        ),
        target: target.join(" "),
    }
}

/// Appends a noun phrase; target order puts the adjective after the noun.
fn noun_phrase<R: Rng>(rng: &mut R, src: &mut Vec<Entry>, tgt: &mut Vec<&'static str>) {
    if rng.gen_bool(0.2) {
        let p = *PROPER.choose(rng).expect("non-empty");
        src.push(p);
        tgt.push(p.2);
        return;
    }
    let det = *DETS.choose(rng).expect("non-empty");
    let noun = *NOUNS.choose(rng).expect("non-empty");
    src.push(det);
    tgt.push(det.2);
    if rng.gen_bool(0.5) {
        let adj = *ADJS.choose(rng).expect("non-empty");
        src.push(adj);
        src.push(noun);
        tgt.push(noun.2);
        tgt.push(adj.2);
    } else {
        src.push(noun);
        tgt.push(noun.2);
    }
}

/// Short subject–verb–object sentences with a word-by-word translation in
/// which adjectives follow their noun.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<ParallelPair> {
    let tagset = PosTagSet::universal();
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let (mut src, mut tgt) = (Vec::new(), Vec::new());
            noun_phrase(&mut rng, &mut src, &mut tgt);
            let verb = *VERBS.choose(&mut rng).expect("non-empty");
            src.push(verb);
            tgt.push(verb.2);
            noun_phrase(&mut rng, &mut src, &mut tgt);
            if rng.gen_bool(0.3) {
                let adv = *ADVS.choose(&mut rng).expect("non-empty");
                src.push(adv);
                tgt.push(adv.2);
            }
            pair(&src, tgt, &tagset)
        })
        .collect()
}

/// Words whose translation depends on whether they are used as a noun or
/// a verb: (surface, noun translation, verb translation).
pub const HOMOGRAPHS: [(&str, &str, &str); 8] = [
    ("book", "libro", "reservar"),
    ("watch", "reloj", "mirar"),
    ("play", "obra", "jugar"),
    ("light", "luz", "encender"),
    ("run", "carrera", "correr"),
    ("record", "disco", "grabar"),
    ("park", "parque", "aparcar"),
    ("ring", "anillo", "llamar"),
];

const FILLERS: [Entry; 12] = [
    ("we", "PRON", "nosotros"),
    ("they", "PRON", "ellos"),
    ("often", "ADV", "seguido"),
    ("today", "ADV", "hoy"),
    ("the", "DET", "el"),
    ("red", "ADJ", "rojo"),
    ("big", "ADJ", "grande"),
    ("old", "ADJ", "viejo"),
    ("here", "ADV", "aqui"),
    ("now", "ADV", "ahora"),
    ("very", "ADV", "muy"),
    ("again", "ADV", "otra_vez"),
];

/// One generated homograph sentence: which homograph, its tag and the
/// position it occupies in the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HomographItem {
    pub pair: ParallelPair,
    pub homograph: usize,
    pub is_verb: bool,
}

impl HomographItem {
    pub fn expected(&self) -> &'static str {
        let (_, noun, verb) = HOMOGRAPHS[self.homograph];
        if self.is_verb {
            verb
        } else {
            noun
        }
    }

    pub fn wrong(&self) -> &'static str {
        let (_, noun, verb) = HOMOGRAPHS[self.homograph];
        if self.is_verb {
            noun
        } else {
            verb
        }
    }

    /// The hypothesis names the tag-appropriate translation and not the
    /// other one.
    pub fn is_correct(&self, hypothesis: &str) -> bool {
        let words: Vec<&str> = hypothesis.split_whitespace().collect();
        words.contains(&self.expected()) && !words.contains(&self.wrong())
    }
}

/// Sentences of 2–4 filler words plus one homograph at a random position.
/// The homograph is tagged NOUN or VERB with equal probability,
/// independently of the surrounding words, so only the tag tells the two
/// translations apart.
pub fn homograph_corpus(n: usize, seed: u64) -> Vec<HomographItem> {
    let tagset = PosTagSet::universal();
    let mut rng = seeded_rng(seed);
    (0..n)
        .map(|_| {
            let homograph = rng.gen_range(0..HOMOGRAPHS.len());
            let is_verb = rng.gen_bool(0.5);
            let (surface, noun, verb) = HOMOGRAPHS[homograph];
            let entry: Entry = if is_verb { (surface, "VERB", verb) } else { (surface, "NOUN", noun) };
            let fillers = rng.gen_range(2..=4);
            let mut src: Vec<Entry> = (0..fillers).map(|_| *FILLERS.choose(&mut rng).expect("non-empty")).collect();
            let at = rng.gen_range(0..=src.len());
            src.insert(at, entry);
            let tgt = src.iter().map(|e| e.2).collect();
            HomographItem {
                pair: pair(&src, tgt, &tagset),
                homograph,
                is_verb,
            }
        })
        .collect()
}

/// Fraction of items whose hypothesis translates the homograph correctly.
pub fn homograph_accuracy(items: &[HomographItem], hypotheses: &[String]) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    let hits = items.iter().zip(hypotheses).filter(|(i, h)| i.is_correct(h)).count();
    hits as f64 / items.len() as f64
}
