//! Splits a referring expression into class words and modifier words.
//!
//! Tagging is pluggable through [`Tagger`]; [`RuleTagger`] is a small
//! closed-class + lexicon + suffix tagger good enough for the short,
//! template-like expressions found in referring datasets.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::ClassId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PosTag {
    Noun,
    Propn,
    Adj,
    Verb,
    Num,
    Other,
}

impl PosTag {
    /// Tags kept as key tokens of the expression.
    pub fn is_content(self) -> bool {
        !matches!(self, PosTag::Other)
    }

    fn is_nominal(self) -> bool {
        matches!(self, PosTag::Noun | PosTag::Propn)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub text: String,
    pub pos: PosTag,
    /// Word position in the original expression.
    pub index: usize,
}

pub trait Tagger: Send + Sync {
    /// Tags every word of `words` (already split, original casing).
    fn tag(&self, words: &[&str]) -> Vec<PosTag>;
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "this", "that", "these", "those", "some", "any", "each", "every", "all", "both", "either",
    "neither", "no", "of", "in", "on", "at", "to", "from", "by", "with", "without", "near", "next", "beside",
    "besides", "between", "among", "above", "below", "under", "over", "behind", "before", "after", "into", "onto",
    "upon", "across", "along", "around", "beyond", "within", "inside", "outside", "through", "toward", "towards",
    "against", "beneath", "for", "as", "than", "like", "and", "or", "but", "nor", "so", "yet", "if", "while", "which",
    "who", "whom", "whose", "what", "where", "when", "it", "its", "they", "them", "their", "he", "she", "his", "her",
    "we", "our", "you", "your", "i", "me", "my", "one's", "is", "are", "was", "were", "be", "been", "being", "am",
    "has", "have", "had", "do", "does", "did", "can", "could", "will", "would", "shall", "should", "may", "might",
    "must", "there", "here", "very", "too", "also", "just", "only", "not", "most", "more", "less", "least", "quite",
    "rather", "nearby",
];

const ADJECTIVES: &[&str] = &[
    "red",
    "green",
    "blue",
    "white",
    "black",
    "gray",
    "grey",
    "yellow",
    "orange",
    "brown",
    "purple",
    "pink",
    "dark",
    "light",
    "bright",
    "pale",
    "small",
    "large",
    "big",
    "little",
    "tiny",
    "huge",
    "giant",
    "long",
    "short",
    "tall",
    "high",
    "low",
    "wide",
    "narrow",
    "thin",
    "thick",
    "smaller",
    "smallest",
    "larger",
    "largest",
    "bigger",
    "biggest",
    "longer",
    "longest",
    "shorter",
    "shortest",
    "taller",
    "tallest",
    "higher",
    "highest",
    "lower",
    "lowest",
    "wider",
    "widest",
    "oval",
    "round",
    "circular",
    "rectangular",
    "square",
    "triangular",
    "curved",
    "straight",
    "upper",
    "leftmost",
    "rightmost",
    "topmost",
    "bottommost",
    "central",
    "middle",
    "inner",
    "outer",
    "front",
    "rear",
    "first",
    "second",
    "third",
    "fourth",
    "fifth",
    "last",
    "other",
    "another",
    "single",
    "double",
    "empty",
    "full",
    "new",
    "old",
    "open",
    "closed",
    "main",
    "same",
    "different",
    "several",
    "many",
    "few",
    "adjacent",
];

/// Position words that act as nouns after a determiner ("on the left") but
/// as adjectives when directly followed by a content word ("the left building").
const POSITIONAL: &[&str] = &[
    "left",
    "right",
    "top",
    "bottom",
    "center",
    "centre",
    "side",
    "corner",
    "edge",
    "north",
    "south",
    "east",
    "west",
    "northeast",
    "northwest",
    "southeast",
    "southwest",
];

const VERBS: &[&str] = &[
    "park",
    "parks",
    "lie",
    "lies",
    "lying",
    "sit",
    "sits",
    "stand",
    "stands",
    "surround",
    "surrounds",
    "cross",
    "crosses",
    "face",
    "faces",
    "connect",
    "connects",
    "contain",
    "contains",
    "run",
    "runs",
    "border",
    "borders",
    "flow",
    "flows",
    "extend",
    "extends",
];

const NUMBER_WORDS: &[&str] = &[
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "dozen",
    "hundred",
];

const ADJ_SUFFIXES: &[&str] = &["ous", "ful", "ive", "ish", "able", "ible", "less", "ular"];

/// Deterministic rule-based tagger.
#[derive(Debug, Clone, Default)]
pub struct RuleTagger {
    overrides: HashMap<String, PosTag>,
}

impl RuleTagger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Forces a tag for a lowercase word, taking precedence over every rule.
    pub fn with_override(mut self, word: &str, tag: PosTag) -> Self {
        self.overrides.insert(word.to_lowercase(), tag);
        self
    }

    fn lexical(&self, lower: &str) -> Option<PosTag> {
        if let Some(&t) = self.overrides.get(lower) {
            return Some(t);
        }
        if lower.chars().all(|c| c.is_ascii_digit() || c == '.' || c == ',')
            && lower.chars().any(|c| c.is_ascii_digit())
            || NUMBER_WORDS.contains(&lower)
        {
            return Some(PosTag::Num);
        }
        if STOPWORDS.contains(&lower) {
            return Some(PosTag::Other);
        }
        if ADJECTIVES.contains(&lower) {
            return Some(PosTag::Adj);
        }
        if VERBS.contains(&lower) {
            return Some(PosTag::Verb);
        }
        None
    }
}

impl Tagger for RuleTagger {
    fn tag(&self, words: &[&str]) -> Vec<PosTag> {
        let lowered: Vec<String> = words.iter().map(|w| w.to_lowercase()).collect();
        let first_pass: Vec<Option<PosTag>> = lowered.iter().map(|w| self.lexical(w)).collect();
        let mut tags = Vec::with_capacity(words.len());
        for (i, lower) in lowered.iter().enumerate() {
            if let Some(t) = first_pass[i] {
                tags.push(t);
                continue;
            }
            let tag = if POSITIONAL.contains(&lower.as_str()) {
                let next_is_content = matches!(first_pass.get(i + 1), Some(None))
                    || matches!(first_pass.get(i + 1), Some(Some(t)) if t.is_content() && *t != PosTag::Num);
                if next_is_content {
                    PosTag::Adj
                } else {
                    PosTag::Noun
                }
            } else if i > 0 && words[i].chars().next().is_some_and(char::is_uppercase) {
                PosTag::Propn
            } else if lower.len() > 4 && lower.ends_with("ing") && gerund_noun(&lowered, &first_pass, i) {
                PosTag::Noun
            } else if lower.len() > 4 && (lower.ends_with("ing") || lower.ends_with("ed")) {
                PosTag::Verb
            } else if lower.len() > 4 && lower.ends_with("ly") {
                PosTag::Other
            } else if ADJ_SUFFIXES
                .iter()
                .any(|s| lower.len() > s.len() + 2 && lower.ends_with(s))
            {
                PosTag::Adj
            } else {
                PosTag::Noun
            };
            tags.push(tag);
        }
        tags
    }
}

const DETERMINERS: &[&str] = &["a", "an", "the", "this", "that", "these", "those", "each", "every"];

/// "the small building on the left": an -ing word after a determiner or
/// adjective that does not head a following content word.
fn gerund_noun(lowered: &[String], first_pass: &[Option<PosTag>], i: usize) -> bool {
    let after_modifier =
        i > 0 && (DETERMINERS.contains(&lowered[i - 1].as_str()) || first_pass[i - 1] == Some(PosTag::Adj));
    let heads_next =
        matches!(first_pass.get(i + 1), Some(None)) || matches!(first_pass.get(i + 1), Some(Some(t)) if t.is_content());
    after_modifier && !heads_next
}

/// Words of `text`: runs of alphanumerics, keeping inner hyphens and apostrophes.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    for (k, &(i, c)) in bytes.iter().enumerate() {
        let joiner =
            (c == '-' || c == '\'') && start.is_some() && bytes.get(k + 1).is_some_and(|&(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || joiner {
            start.get_or_insert(i);
        } else if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Tags `text` and keeps only the key tokens (nouns, proper nouns,
/// adjectives, verbs, numerals).
pub fn parse_expression(text: &str, tagger: &dyn Tagger) -> Result<Vec<TaggedToken>> {
    if text.trim().is_empty() {
        return Err(Error::UnusableExpression(text.to_string()));
    }
    let words = split_words(text);
    let tags = tagger.tag(&words);
    Ok(words
        .iter()
        .zip(tags)
        .enumerate()
        .filter(|(_, (_, t))| t.is_content())
        .map(|(index, (w, pos))| TaggedToken {
            text: (*w).to_string(),
            pos,
            index,
        })
        .collect())
}

/// Lowercase with simple plural stripping.
pub fn lemma(word: &str) -> String {
    let w = word.to_lowercase();
    if w.len() > 3 && w.ends_with("ies") {
        return format!("{}y", &w[..w.len() - 3]);
    }
    for suffix in ["sses", "xes", "zes", "ches", "shes"] {
        if w.len() > suffix.len() + 1 && w.ends_with(suffix) {
            return w[..w.len() - 2].to_string();
        }
    }
    if w.len() > 3 && w.ends_with('s') && !(w.ends_with("ss") || w.ends_with("us") || w.ends_with("is")) {
        return w[..w.len() - 1].to_string();
    }
    w
}

fn phrase_key(phrase: &str) -> Vec<String> {
    split_words(phrase).into_iter().map(lemma).collect()
}

/// Surface phrases (names and synonyms) of every class, keyed by lemma sequence.
#[derive(Debug, Clone, Default)]
pub struct ClassVocab {
    phrases: HashMap<Vec<String>, ClassId>,
    max_len: usize,
}

impl ClassVocab {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `phrase` for `class`. The first registration of a phrase wins.
    pub fn insert(&mut self, phrase: &str, class: ClassId) {
        let key = phrase_key(phrase);
        if key.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(key.len());
        self.phrases.entry(key).or_insert(class);
    }

    pub fn from_map(map: &BTreeMap<ClassId, Vec<String>>) -> Self {
        let mut v = Self::new();
        for (&id, phrases) in map {
            for p in phrases {
                v.insert(p, id);
            }
        }
        v
    }

    /// Reads `{ "<class_id>": ["phrase", ...], ... }`.
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map: BTreeMap<ClassId, Vec<String>> = serde_json::from_str(&raw).map_err(|e| Error::json(path, e))?;
        Ok(Self::from_map(&map))
    }

    pub fn lookup(&self, words: &[&str]) -> Option<ClassId> {
        let key: Vec<String> = words.iter().map(|w| lemma(w)).collect();
        self.phrases.get(&key).copied()
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoupledExpression {
    pub raw: String,
    pub ref_tokens: Vec<TaggedToken>,
    pub cls_tokens: Vec<TaggedToken>,
    pub mod_tokens: Vec<TaggedToken>,
    /// Class resolved through the vocabulary, if the class words matched one.
    pub class_id: Option<ClassId>,
}

impl DecoupledExpression {
    pub fn cls_words(&self) -> Vec<&str> {
        self.cls_tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn mod_words(&self) -> Vec<&str> {
        self.mod_tokens.iter().map(|t| t.text.as_str()).collect()
    }

    pub fn ref_words(&self) -> Vec<&str> {
        self.ref_tokens.iter().map(|t| t.text.as_str()).collect()
    }
}

/// Splits key tokens into class and modifier words.
///
/// The longest contiguous run matching a vocabulary phrase (leftmost on ties,
/// never containing a numeral) becomes the class. Without a match the class
/// is the rightmost noun of the first noun phrase.
pub fn decouple(raw: &str, tokens: Vec<TaggedToken>, vocab: &ClassVocab) -> Result<DecoupledExpression> {
    if tokens.is_empty() {
        return Err(Error::EmptyExpression(raw.to_string()));
    }
    let mut best: Option<(usize, usize, ClassId)> = None;
    let max_len = vocab.max_len.min(tokens.len());
    'outer: for len in (1..=max_len).rev() {
        for start in 0..=tokens.len() - len {
            let window = &tokens[start..start + len];
            if window.iter().any(|t| t.pos == PosTag::Num) {
                continue;
            }
            let words: Vec<&str> = window.iter().map(|t| t.text.as_str()).collect();
            if let Some(id) = vocab.lookup(&words) {
                best = Some((start, len, id));
                break 'outer;
            }
        }
    }

    let (cls_range, class_id) = match best {
        Some((start, len, id)) => (start..start + len, Some(id)),
        None => {
            let pos = fallback_class_position(&tokens).ok_or_else(|| Error::NoClassWord(raw.to_string()))?;
            (pos..pos + 1, None)
        }
    };
    let mut cls_tokens = Vec::new();
    let mut mod_tokens = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if cls_range.contains(&i) {
            cls_tokens.push(t.clone());
        } else {
            mod_tokens.push(t.clone());
        }
    }
    Ok(DecoupledExpression {
        raw: raw.to_string(),
        ref_tokens: tokens,
        cls_tokens,
        mod_tokens,
        class_id,
    })
}

/// Rightmost nominal of the first run of word-adjacent nominal/adjective/numeral
/// tokens that contains a nominal; failing that, the first non-numeral token.
fn fallback_class_position(tokens: &[TaggedToken]) -> Option<usize> {
    let in_phrase = |t: &TaggedToken| matches!(t.pos, PosTag::Noun | PosTag::Propn | PosTag::Adj | PosTag::Num);
    let mut i = 0;
    while i < tokens.len() {
        if !in_phrase(&tokens[i]) {
            i += 1;
            continue;
        }
        let mut j = i;
        while j + 1 < tokens.len() && in_phrase(&tokens[j + 1]) && tokens[j + 1].index == tokens[j].index + 1 {
            j += 1;
        }
        if let Some(k) = (i..=j).rev().find(|&k| tokens[k].pos.is_nominal()) {
            return Some(k);
        }
        i = j + 1;
    }
    tokens.iter().position(|t| t.pos != PosTag::Num)
}

/// Convenience: parse then decouple with the given tagger.
pub fn decouple_text(text: &str, tagger: &dyn Tagger, vocab: &ClassVocab) -> Result<DecoupledExpression> {
    let tokens = parse_expression(text, tagger)?;
    decouple(text, tokens, vocab)
}
