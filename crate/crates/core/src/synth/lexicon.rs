use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use crate::seed::{self, Rng};
use crate::tokenizer::{WordPiece, DEFAULT_CONTINUATION, MARKERS, RESERVED};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Real function words shared by every template.
pub const FUNCTION_WORDS: [&str; 16] = [
    "the", "a", "of", "in", "was", "and", "to", "by", "with", "at", "is", "from", "near", "this", "that", "for",
];

/// Syllables `CV`. Entity names are two or three of them, so their
/// word pieces are the syllables themselves.
pub fn syllables() -> Vec<String> {
    let mut out = Vec::new();
    for &c in CONSONANTS {
        for &v in VOWELS {
            out.push(format!("{}{}", c as char, v as char));
        }
    }
    out
}

/// Pseudo-words shaped `CVCCVC`, which never occur inside a name.
fn pseudo_word(rng: &mut Rng) -> String {
    let c = |rng: &mut Rng| *CONSONANTS.choose(rng).expect("non-empty") as char;
    let v = |rng: &mut Rng| *VOWELS.choose(rng).expect("non-empty") as char;
    [c(rng), v(rng), c(rng), c(rng), v(rng), c(rng)].iter().collect()
}

pub fn pseudo_words(n: usize, used: &mut BTreeSet<String>, rng: &mut Rng) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = pseudo_word(rng);
        if used.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    /// Context words, one list per concept.
    pub context: Vec<Vec<String>>,
    /// Filler words shared across concepts.
    pub filler: Vec<String>,
    pub concept_labels: Vec<String>,
    pub relation_names: Vec<String>,
    /// Words that appear between head and tail in relation sentences.
    pub relation_cues: Vec<String>,
    /// Syllables that may end the names of each concept's entities.
    pub name_markers: Vec<Vec<String>>,
}

/// Syllables reserved as name markers never start or fill a marked name.
const MIN_STEMS: usize = 10;
const MARKERS_PER_CONCEPT: usize = 2;

impl Lexicon {
    pub fn generate(seed: u64, concepts: usize, words_per_concept: usize, relations: usize) -> Self {
        let mut rng = seed::stream(seed, "synth-lexicon");
        let mut used: BTreeSet<String> = BTreeSet::new();
        let context = (0..concepts)
            .map(|_| pseudo_words(words_per_concept, &mut used, &mut rng))
            .collect();
        let filler = pseudo_words(30, &mut used, &mut rng);
        let concept_labels = pseudo_words(concepts, &mut used, &mut rng);
        let relation_names = pseudo_words(relations, &mut used, &mut rng);
        let relation_cues = pseudo_words(relations, &mut used, &mut rng);
        let mut syl = syllables();
        syl.shuffle(&mut rng);
        let per = MARKERS_PER_CONCEPT.min(syl.len().saturating_sub(MIN_STEMS) / concepts.max(1));
        let name_markers = (0..concepts).map(|k| syl[k * per..(k + 1) * per].to_vec()).collect();
        Self {
            context,
            filler,
            concept_labels,
            relation_names,
            relation_cues,
            name_markers,
        }
    }

    /// Syllables that are nobody's marker.
    pub fn name_stems(&self) -> Vec<String> {
        let markers: BTreeSet<&String> = self.name_markers.iter().flatten().collect();
        syllables().into_iter().filter(|s| !markers.contains(s)).collect()
    }

    /// Reserved tokens, markers, punctuation, function words, lexicon words
    /// and the syllables with their continuation forms.
    pub fn tokenizer(&self) -> WordPiece {
        let mut tokens: Vec<String> = RESERVED.iter().chain(MARKERS.iter()).map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut push = |w: &str, tokens: &mut Vec<String>| {
            if seen.insert(w.to_string()) {
                tokens.push(w.to_string());
            }
        };
        for w in [".", ","].iter().chain(FUNCTION_WORDS.iter()) {
            push(w, &mut tokens);
        }
        for w in self
            .context
            .iter()
            .flatten()
            .chain(&self.filler)
            .chain(&self.concept_labels)
            .chain(&self.relation_names)
            .chain(&self.relation_cues)
        {
            push(w, &mut tokens);
        }
        for s in syllables() {
            push(&s, &mut tokens);
            push(&format!("{DEFAULT_CONTINUATION}{s}"), &mut tokens);
        }
        WordPiece::from_tokens(tokens, DEFAULT_CONTINUATION, true).expect("generated vocabulary is valid")
    }
}

/// A name of two or three syllables from `stems`, ending in one of
/// `ending` when given, that tokenizes into exactly those syllables and is
/// not in `used`.
pub fn entity_name(
    rng: &mut Rng,
    tokenizer: &WordPiece,
    used: &mut BTreeSet<String>,
    stems: &[String],
    ending: Option<&[String]>,
) -> String {
    loop {
        let n = rng.random_range(2..=3);
        let mut parts: Vec<&String> = (0..n).map(|_| stems.choose(rng).expect("non-empty")).collect();
        if let Some(e) = ending.and_then(|e| e.choose(rng)) {
            parts[n - 1] = e;
        }
        let name: String = parts.iter().map(|s| s.as_str()).collect();
        let pieces = tokenizer.encode(&name);
        let expected: Vec<String> = parts
            .iter()
            .enumerate()
            .map(|(i, s)| if i == 0 { s.to_string() } else { format!("{DEFAULT_CONTINUATION}{s}") })
            .collect();
        let got: Vec<&str> = pieces.iter().filter_map(|t| tokenizer.token(t.id)).collect();
        if got == expected && used.insert(name.clone()) {
            return name;
        }
    }
}
