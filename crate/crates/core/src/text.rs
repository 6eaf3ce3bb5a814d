//! Character-level helpers shared by the chunker, the mock tagger and retrieval.
//!
//! All spans in this crate are half-open intervals over Unicode scalar values
//! (`char`s), never bytes.

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Half-open character interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

/// Number of chars in `s`.
pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Substring by character span; `None` when the span is out of range.
pub fn char_slice(s: &str, span: Span) -> Option<&str> {
    if span.start > span.end {
        return None;
    }
    let mut start_byte = None;
    let mut end_byte = None;
    for (ci, (bi, _)) in s.char_indices().enumerate() {
        if ci == span.start {
            start_byte = Some(bi);
        }
        if ci == span.end {
            end_byte = Some(bi);
            break;
        }
    }
    let total = char_len(s);
    if span.start == total {
        start_byte = Some(s.len());
    }
    if span.end == total {
        end_byte = Some(s.len());
    }
    Some(&s[start_byte?..end_byte?])
}

/// Maps byte offsets of `s` to char offsets. Index `s.len()` is valid.
pub(crate) struct CharMap {
    byte_to_char: Vec<usize>,
}

impl CharMap {
    pub fn new(s: &str) -> Self {
        let mut byte_to_char = vec![0; s.len() + 1];
        let mut ci = 0;
        for (bi, ch) in s.char_indices() {
            for slot in &mut byte_to_char[bi..bi + ch.len_utf8()] {
                *slot = ci;
            }
            ci += 1;
        }
        byte_to_char[s.len()] = ci;
        CharMap { byte_to_char }
    }

    pub fn char_at(&self, byte: usize) -> usize {
        self.byte_to_char[byte]
    }
}

/// Case-fold and collapse runs of whitespace to one space.
pub fn canonicalize(s: &str) -> String {
    s.split_whitespace().map(|w| w.to_lowercase()).collect::<Vec<_>>().join(" ")
}

/// Case-fold, drop punctuation, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let stripped: String = s.chars().map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' }).collect();
    canonicalize(&stripped)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Number,
}

/// A lexical token with its character span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    pub kind: TokenKind,
    pub span: Span,
}

impl Token<'_> {
    pub fn is_capitalized(&self) -> bool {
        self.kind == TokenKind::Word && self.text.chars().next().is_some_and(char::is_uppercase)
    }

    pub fn is_quarter(&self) -> bool {
        is_quarter(self.text)
    }
}

/// `Q1`..`Q4`, uppercase only.
pub fn is_quarter(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 2 && b[0] == b'Q' && (b'1'..=b'4').contains(&b[1])
}

fn token_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?P<num>\d+(?:\.\d+)?%?)|(?P<word>[\p{L}\p{N}_]+(?:['’][\p{L}]+)?)").expect("token regex")
    })
}

/// Split text into word and number tokens. Numbers may carry a trailing `%`.
pub fn tokenize(s: &str) -> Vec<Token<'_>> {
    let map = CharMap::new(s);
    token_re()
        .captures_iter(s)
        .map(|caps| {
            let (m, kind) = match caps.name("num") {
                Some(m) => (m, TokenKind::Number),
                None => (caps.name("word").expect("one group matches"), TokenKind::Word),
            };
            Token { text: m.as_str(), kind, span: Span::new(map.char_at(m.start()), map.char_at(m.end())) }
        })
        .collect()
}

/// Sentence spans: a sentence ends after `.`, `!` or `?` followed by whitespace
/// or end of text, or at a newline. Leading whitespace is excluded.
pub fn sentence_spans(s: &str) -> Vec<Span> {
    let chars: Vec<char> = s.chars().collect();
    let mut spans = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let terminal = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if terminal || c == '\n' {
            let end = if c == '\n' { i } else { i + 1 };
            push_trimmed(&chars, start, end, &mut spans);
            start = i + 1;
        }
        i += 1;
    }
    push_trimmed(&chars, start, chars.len(), &mut spans);
    spans
}

fn push_trimmed(chars: &[char], mut start: usize, mut end: usize, out: &mut Vec<Span>) {
    while start < end && chars[start].is_whitespace() {
        start += 1;
    }
    while end > start && chars[end - 1].is_whitespace() {
        end -= 1;
    }
    if start < end {
        out.push(Span::new(start, end));
    }
}

/// Naive English singular: strips a trailing `s` from words longer than three chars.
pub fn singularize(word: &str) -> &str {
    if word.len() > 3 && word.ends_with('s') && !word.ends_with("ss") {
        &word[..word.len() - 1]
    } else {
        word
    }
}

/// Function words ignored when collecting query content terms.
pub const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "before", "between",
    "but", "by", "can", "could", "did", "do", "does", "during", "each", "find", "for", "from", "give", "had", "has",
    "have", "how", "i", "if", "in", "into", "is", "it", "its", "list", "me", "my", "of", "on", "or", "our", "show",
    "tell", "than", "that", "the", "their", "them", "there", "these", "this", "those", "to", "was", "we", "were",
    "what", "when", "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

pub fn is_stopword(word: &str) -> bool {
    let lower = word.to_lowercase();
    STOPWORDS.binary_search(&lower.as_str()).is_ok()
}
