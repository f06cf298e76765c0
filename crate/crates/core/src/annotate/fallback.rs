/// Deterministic POS guess for corpora that arrive without tags.
///
/// Rules, first match wins:
///
/// | rule                                   | tag     |
/// |----------------------------------------|---------|
/// | closed-class lexicon (lowercased)      | lexicon |
/// | all characters are digits/`.`/`,`      | NUM     |
/// | no alphanumeric characters             | PUNCT   |
/// | first character uppercase              | PROPN   |
/// | suffix `ly`                            | ADV     |
/// | suffix `ing`, `ed`, `ize`, `ise`       | VERB    |
/// | suffix `ous`, `ful`, `able`, `ible`, `ive`, `al`, `less`, `ic` | ADJ |
/// | anything else                          | NOUN    |
pub fn fallback_pos(word: &str) -> &'static str {
    let lower = word.to_lowercase();
    if let Some(tag) = lexicon(&lower) {
        return tag;
    }
    if word.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',') && word.chars().any(|c| c.is_ascii_digit()) {
        return "NUM";
    }
    if !word.chars().any(char::is_alphanumeric) {
        return "PUNCT";
    }
    if word.chars().next().is_some_and(char::is_uppercase) {
        return "PROPN";
    }
    const SUFFIXES: [(&str, &str); 13] = [
        ("ly", "ADV"),
        ("ing", "VERB"),
        ("ed", "VERB"),
        ("ize", "VERB"),
        ("ise", "VERB"),
        ("ous", "ADJ"),
        ("ful", "ADJ"),
        ("able", "ADJ"),
        ("ible", "ADJ"),
        ("ive", "ADJ"),
        ("less", "ADJ"),
        ("al", "ADJ"),
        ("ic", "ADJ"),
    ];
    for (suffix, tag) in SUFFIXES {
        if lower.len() > suffix.len() + 1 && lower.ends_with(suffix) {
            return tag;
        }
    }
    "NOUN"
}

fn lexicon(lower: &str) -> Option<&'static str> {
    let tag = match lower {
        "the" | "a" | "an" | "this" | "that" | "these" | "those" | "every" | "some" | "no" => "DET",
        "and" | "or" | "but" | "nor" => "CCONJ",
        "if" | "because" | "while" | "although" | "since" | "unless" | "whether" => "SCONJ",
        "in" | "on" | "at" | "of" | "to" | "with" | "from" | "by" | "for" | "about" | "into"
        | "over" | "under" | "after" | "before" | "between" | "through" => "ADP",
        "i" | "you" | "he" | "she" | "it" | "we" | "they" | "me" | "him" | "her" | "us"
        | "them" | "his" | "its" | "our" | "their" | "my" | "your" => "PRON",
        "is" | "are" | "was" | "were" | "be" | "been" | "am" | "has" | "have" | "had" | "will"
        | "would" | "can" | "could" | "should" | "may" | "might" | "must" | "do" | "does"
        | "did" => "AUX",
        "not" | "'s" => "PART",
        "oh" | "yes" | "hello" | "wow" => "INTJ",
        "very" | "too" | "also" | "never" | "always" | "often" | "here" | "there" | "now"
        | "then" => "ADV",
        _ => return None,
    };
    Some(tag)
}
