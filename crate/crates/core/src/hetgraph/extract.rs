use serde::Deserialize;

use super::{EntityMention, GraphError, RelationEdge, TypeTag};
use crate::gateway::mock::TaggedSpan;
use crate::gateway::{Gateway, PromptRequest, SamplingParams, TemplateId};
use crate::ingest::TextChunk;
use crate::text::{canonicalize, char_slice, Span};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MentionExtraction {
    pub mentions: Vec<EntityMention>,
    /// Backend mentions discarded because their span did not select their text.
    pub dropped: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelationExtraction {
    pub relations: Vec<RelationEdge>,
    /// Backend triples discarded for naming an entity not mentioned in the chunk.
    pub dropped: usize,
}

/// Lenient view of one backend mention.
#[derive(Deserialize)]
struct RawMention {
    text: String,
    #[serde(rename = "type", default)]
    type_tag: String,
    start: usize,
    end: usize,
}

#[derive(Deserialize)]
struct RawRelation {
    src: String,
    predicate: String,
    dst: String,
    #[serde(default)]
    confidence: Option<f64>,
}

fn gateway_err(chunk: &TextChunk) -> impl FnOnce(crate::gateway::GatewayError) -> GraphError + '_ {
    move |source| GraphError::Gateway { chunk_id: chunk.chunk_id.clone(), source }
}

fn json_array(text: &str) -> Option<Vec<serde_json::Value>> {
    let t = text.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```").trim();
    match serde_json::from_str(t).ok()? {
        serde_json::Value::Array(items) => Some(items),
        _ => None,
    }
}

/// Tags the chunk through the `ner` template. Mentions whose span does not
/// select exactly their surface text are dropped and counted; unknown type
/// tags become `other`.
pub fn extract_entities(chunk: &TextChunk, gateway: &Gateway) -> Result<MentionExtraction, GraphError> {
    if chunk.text.trim().is_empty() {
        return Ok(MentionExtraction::default());
    }
    let req = PromptRequest::new(TemplateId::Ner, [("text", chunk.text.as_str())], SamplingParams::default())
        .map_err(gateway_err(chunk))?;
    let reply = gateway.complete(&req).map_err(gateway_err(chunk))?;
    let Some(items) = json_array(&reply.text) else {
        log::warn!("chunk {}: ner response is not a JSON array", chunk.chunk_id);
        return Ok(MentionExtraction { mentions: Vec::new(), dropped: 1 });
    };
    let mut out = MentionExtraction::default();
    for item in items {
        let Ok(raw) = serde_json::from_value::<RawMention>(item) else {
            out.dropped += 1;
            continue;
        };
        let span = Span::new(raw.start, raw.end);
        if raw.text.trim().is_empty() || span.is_empty() || char_slice(&chunk.text, span) != Some(raw.text.as_str()) {
            out.dropped += 1;
            continue;
        }
        out.mentions.push(EntityMention {
            chunk_id: chunk.chunk_id.clone(),
            surface: raw.text,
            type_tag: raw.type_tag.parse().unwrap_or(TypeTag::Other),
            span,
        });
    }
    if out.dropped > 0 {
        log::warn!("chunk {}: dropped {} malformed mentions", chunk.chunk_id, out.dropped);
    }
    Ok(out)
}

/// Asks for relations between the chunk's mentions. Triples are matched to
/// mentions by exact surface text, then by canonical name; anything else,
/// and self relations, are dropped and counted.
pub fn infer_relations(
    chunk: &TextChunk,
    mentions: &[EntityMention],
    gateway: &Gateway,
) -> Result<RelationExtraction, GraphError> {
    let ours: Vec<&EntityMention> = mentions.iter().filter(|m| m.chunk_id == chunk.chunk_id).collect();
    if ours.len() < 2 {
        return Ok(RelationExtraction::default());
    }
    let tagged: Vec<TaggedSpan> = ours
        .iter()
        .map(|m| TaggedSpan {
            text: m.surface.clone(),
            type_tag: m.type_tag.to_string(),
            start: m.span.start,
            end: m.span.end,
        })
        .collect();
    let mentions_json = serde_json::to_string(&tagged).expect("mentions serialize");
    let req = PromptRequest::new(
        TemplateId::Relation,
        [("mentions", mentions_json.as_str()), ("text", chunk.text.as_str())],
        SamplingParams::default(),
    )
    .map_err(gateway_err(chunk))?;
    let reply = gateway.complete(&req).map_err(gateway_err(chunk))?;
    let Some(items) = json_array(&reply.text) else {
        log::warn!("chunk {}: relation response is not a JSON array", chunk.chunk_id);
        return Ok(RelationExtraction { relations: Vec::new(), dropped: 1 });
    };

    let lookup = |surface: &str| -> Option<String> {
        ours.iter()
            .find(|m| m.surface == surface)
            .or_else(|| ours.iter().find(|m| canonicalize(&m.surface) == canonicalize(surface)))
            .map(|m| m.entity_id())
    };
    let mut out = RelationExtraction::default();
    for item in items {
        let Ok(raw) = serde_json::from_value::<RawRelation>(item) else {
            out.dropped += 1;
            continue;
        };
        let predicate = raw.predicate.split_whitespace().collect::<Vec<_>>().join(" ");
        match (lookup(&raw.src), lookup(&raw.dst)) {
            (Some(src), Some(dst)) if src != dst && !predicate.is_empty() => {
                let confidence = match raw.confidence {
                    Some(c) if c.is_nan() => 1.0,
                    Some(c) => c.clamp(0.0, 1.0),
                    None => 1.0,
                };
                out.relations.push(RelationEdge {
                    src_entity: src,
                    predicate,
                    dst_entity: dst,
                    provenance_chunk: chunk.chunk_id.clone(),
                    confidence,
                });
            }
            _ => out.dropped += 1,
        }
    }
    if out.dropped > 0 {
        log::warn!("chunk {}: dropped {} relations", chunk.chunk_id, out.dropped);
    }
    Ok(out)
}
