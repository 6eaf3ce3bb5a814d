//! Deterministic rule-based backend.
//!
//! Every output is a pure function of the request. The rulebook:
//!
//! * `ner`: maximal runs of Capitalized words, quarter tokens (`Q1`..`Q4`),
//!   numeric and percent literals, and the lexicon {sales, revenue, rating,
//!   symptoms}. A run that opens a sentence loses leading function words
//!   ("The", "Compare", ...).
//! * `relation`: `<Entity> <verb phrase> <Entity>` between consecutive
//!   mentions of one sentence; trailing `<preposition> <Entity>` modifiers are
//!   folded into the predicate.
//! * `table_extract`, `plan_synthesis`: see [`crate::extraction::rules`].
//! * `answer`: first sentence of the highest-ranked context chunk, unless the
//!   question is a canned question (see [`CANNED_QUESTIONS`]).
//! * `paraphrase`: canned variants, else the question itself.

use serde::{Deserialize, Serialize};

use super::prompt::{PromptRequest, TemplateId, CONTEXT_SEPARATOR};
use crate::extraction::rules;
use crate::text::{char_slice, normalize_answer, sentence_spans, tokenize, Span, Token, TokenKind};

pub const LEXICON: &[&str] = &["revenue", "rating", "sales", "symptoms"];

/// A canned question with the answer variants the mock rotates through when
/// sampled at nonzero temperature.
#[derive(Debug, Clone, Copy)]
pub struct CannedQuestion {
    pub id: &'static str,
    pub question: &'static str,
    pub variants: &'static [&'static str],
}

pub const CANNED_QUESTIONS: &[CannedQuestion] = &[
    CannedQuestion {
        id: "flu-symptoms",
        question: "What are common influenza symptoms?",
        variants: &["Fever, cough, fatigue", "Symptoms include sore throat and body aches"],
    },
    CannedQuestion {
        id: "legal-photo",
        question: "Can I be sued for sharing a photo on social media?",
        variants: &["Yes, if copyrighted", "No, unless consent is violated", "It depends on jurisdiction"],
    },
];

/// Looks up a canned question by id or by normalized question text.
pub fn canned(question: &str) -> Option<&'static CannedQuestion> {
    let q = question.trim();
    let norm = normalize_answer(q);
    CANNED_QUESTIONS.iter().find(|c| c.id == q || normalize_answer(c.question) == norm)
}

/// Wire form of a tagged mention, shared by the mock and the extraction parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub text: String,
    #[serde(rename = "type")]
    pub type_tag: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub src: String,
    pub predicate: String,
    pub dst: String,
    #[serde(default)]
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockBackend;

impl MockBackend {
    pub fn complete(&self, req: &PromptRequest) -> String {
        match req.template_id {
            TemplateId::Ner => to_json(&tag(req.var("text"))),
            TemplateId::Relation => {
                let mentions: Vec<TaggedSpan> = serde_json::from_str(req.var("mentions")).unwrap_or_default();
                to_json(&relate(req.var("text"), &mentions))
            }
            TemplateId::TableExtract => rules::mock_table(req.var("text"), req.var("schema")),
            TemplateId::PlanSynthesis => {
                rules::mock_plan(req.var("question"), req.var("catalog"), req.var("reference_quarter"))
            }
            TemplateId::Answer => match canned(req.var("question")) {
                Some(c) => rotate(c, req.params.seed).to_string(),
                None => first_context_sentence(req.var("context")),
            },
            TemplateId::Paraphrase => match canned(req.var("question")) {
                Some(c) => rotate(c, req.params.seed).to_string(),
                None => req.var("question").trim().to_string(),
            },
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("mock output serializes")
}

fn rotate(c: &CannedQuestion, seed: u64) -> &'static str {
    c.variants[(seed % c.variants.len() as u64) as usize]
}

fn first_context_sentence(context: &str) -> String {
    let first = context.split(CONTEXT_SEPARATOR).next().unwrap_or_default().trim();
    let body = match first.strip_prefix('[').and_then(|r| r.split_once("] ")) {
        Some((_, body)) => body,
        None => first,
    };
    match sentence_spans(body).first() {
        Some(span) => char_slice(body, *span).unwrap_or_default().to_string(),
        None => "No supporting context was retrieved.".to_string(),
    }
}

fn is_lexicon(word: &str) -> bool {
    LEXICON.contains(&word.to_lowercase().as_str())
}

fn droppable_lead(word: &str) -> bool {
    crate::text::is_stopword(word)
        || matches!(word.to_lowercase().as_str(), "compare" | "however" | "meanwhile" | "overall" | "please" | "then")
}

/// Mock named-entity tagger.
pub fn tag(text: &str) -> Vec<TaggedSpan> {
    let chars: Vec<char> = text.chars().collect();
    let tokens = tokenize(text);
    let mut out = Vec::new();
    for sentence in sentence_spans(text) {
        let toks: Vec<&Token<'_>> =
            tokens.iter().filter(|t| t.span.start >= sentence.start && t.span.end <= sentence.end).collect();
        let mut i = 0;
        while i < toks.len() {
            let t = toks[i];
            if t.is_quarter() {
                out.push(span_of(&chars, t.span, "time"));
            } else if t.kind == TokenKind::Number || is_lexicon(t.text) {
                out.push(span_of(&chars, t.span, "metric"));
            } else if t.is_capitalized() {
                let mut j = i;
                while j + 1 < toks.len() {
                    let next = toks[j + 1];
                    let joined = next.is_capitalized()
                        && !next.is_quarter()
                        && !is_lexicon(next.text)
                        && chars[toks[j].span.end..next.span.start] == [' '];
                    if !joined {
                        break;
                    }
                    j += 1;
                }
                let mut k = i;
                if i == 0 {
                    while k <= j && droppable_lead(toks[k].text) {
                        k += 1;
                    }
                }
                let single_stopword = k == j && crate::text::is_stopword(toks[k].text);
                if k <= j && !single_stopword {
                    out.push(span_of(&chars, Span::new(toks[k].span.start, toks[j].span.end), "other"));
                }
                i = j + 1;
                continue;
            }
            i += 1;
        }
    }
    out
}

fn span_of(chars: &[char], span: Span, tag: &str) -> TaggedSpan {
    TaggedSpan {
        text: chars[span.start..span.end].iter().collect(),
        type_tag: tag.to_string(),
        start: span.start,
        end: span.end,
    }
}

const NON_VERB_LEAD: &[&str] = &[
    "a", "after", "an", "and", "as", "at", "before", "but", "by", "during", "for", "from", "in", "into", "nor", "of",
    "on", "or", "over", "per", "than", "the", "through", "to", "via", "while", "with",
];

const TRAILING_PREPOSITIONS: &[&str] =
    &["at", "by", "during", "for", "from", "in", "on", "through", "to", "via", "with"];

/// Mock relation extractor over already-tagged mentions.
pub fn relate(text: &str, mentions: &[TaggedSpan]) -> Vec<RelationTriple> {
    let chars: Vec<char> = text.chars().collect();
    let mut ms: Vec<&TaggedSpan> = mentions.iter().filter(|m| m.start <= m.end && m.end <= chars.len()).collect();
    ms.sort_by_key(|m| (m.start, m.end));
    let sentences = sentence_spans(text);
    let sentence_of = |m: &TaggedSpan| sentences.iter().position(|s| m.start >= s.start && m.end <= s.end);
    let gap_words = |from: usize, to: usize| -> Option<Vec<String>> {
        if from > to {
            return None;
        }
        let gap: String = chars[from..to].iter().collect();
        Some(gap.split_whitespace().map(str::to_string).collect())
    };

    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < ms.len() {
        let (a, b) = (ms[i], ms[i + 1]);
        let same = sentence_of(a).is_some() && sentence_of(a) == sentence_of(b);
        let words = gap_words(a.end, b.start).unwrap_or_default();
        let verb_phrase = same
            && !words.is_empty()
            && words.iter().all(|w| w.chars().all(|c| c.is_lowercase() || c == '-'))
            && !NON_VERB_LEAD.contains(&words[0].as_str());
        if !verb_phrase {
            i += 1;
            continue;
        }
        let mut predicate = words.join(" ");
        let mut last_end = b.end;
        let mut k = i + 2;
        while k < ms.len() && sentence_of(ms[k]) == sentence_of(a) {
            match gap_words(last_end, ms[k].start).as_deref() {
                Some([prep]) if TRAILING_PREPOSITIONS.contains(&prep.as_str()) => {
                    predicate.push_str(&format!(" {prep} {}", ms[k].text));
                    last_end = ms[k].end;
                    k += 1;
                }
                _ => break,
            }
        }
        out.push(RelationTriple { src: a.text.clone(), predicate, dst: b.text.clone(), confidence: Some(1.0) });
        i = k - 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tagged(text: &str) -> Vec<(String, String)> {
        tag(text).into_iter().map(|t| (t.text, t.type_tag)).collect()
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn tags_sales_sentence() {
        assert_eq!(
            tagged("Q2 sales increased 20%"),
            [pair("Q2", "time"), pair("sales", "metric"), pair("20%", "metric")]
        );
    }

    #[test]
    fn capitalized_runs() {
        assert_eq!(tagged("Patient X received Drug Y"), [pair("Patient X", "other"), pair("Drug Y", "other")]);
        assert_eq!(
            tagged("The Online channel grew. Compare Product A with Acme Corp."),
            [pair("Online", "other"), pair("Product A", "other"), pair("Acme Corp", "other")]
        );
        assert!(tagged("").is_empty());
    }

    #[test]
    fn coordinated_query_labels() {
        assert_eq!(
            tagged("Compare sales trends for Products A and B in Q2"),
            [pair("sales", "metric"), pair("Products A", "other"), pair("B", "other"), pair("Q2", "time")]
        );
    }

    fn triples(text: &str) -> Vec<(String, String, String)> {
        relate(text, &tag(text)).into_iter().map(|r| (r.src, r.predicate, r.dst)).collect()
    }

    #[test]
    fn relation_patterns() {
        assert_eq!(
            triples("Customer X purchased Product Y"),
            [("Customer X".into(), "purchased".into(), "Product Y".into())]
        );
        assert_eq!(
            triples("Patient X received Drug Y on Date Z"),
            [("Patient X".into(), "received on Date Z".into(), "Drug Y".into())]
        );
        assert!(triples("Product A and Product B.").is_empty());
        assert!(triples("Customer X. Bought Product Y.").is_empty());
    }

    #[test]
    fn answers_come_from_top_context() {
        let ctx = format!("[c1] Product A grew. More text.{CONTEXT_SEPARATOR}[c2] Other.");
        assert_eq!(first_context_sentence(&ctx), "Product A grew.");
        assert_eq!(first_context_sentence(""), "No supporting context was retrieved.");
    }

    #[test]
    fn canned_lookup_by_id_or_text() {
        assert_eq!(canned("legal-photo").map(|c| c.id), Some("legal-photo"));
        assert_eq!(canned("can i be sued for sharing a photo on social media").map(|c| c.id), Some("legal-photo"));
        assert!(canned("what is the capital of France?").is_none());
    }
}
