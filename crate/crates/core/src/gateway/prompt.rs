//! Prompt templates and rendering.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Ner,
    Relation,
    TableExtract,
    PlanSynthesis,
    Answer,
    Paraphrase,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Ner => NER,
            TemplateId::Relation => RELATION,
            TemplateId::TableExtract => TABLE_EXTRACT,
            TemplateId::PlanSynthesis => PLAN_SYNTHESIS,
            TemplateId::Answer => ANSWER,
            TemplateId::Paraphrase => PARAPHRASE,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for cap in placeholder_re().captures_iter(self.text()) {
            let name = cap.get(1).expect("group").as_str();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }
}

const NER: &str = "Tag the named entities in the text below. Respond with only a JSON array. \
Each element is an object with fields \"text\" (the exact surface form as it appears), \
\"type\" (one of person, org, product, time, place, metric, other), \"start\" and \"end\" \
(character offsets into the text, end exclusive).\n\nText:\n{text}";

const RELATION: &str = "Given the text and the entities mentioned in it, list the relationships \
stated between pairs of entities. Respond with only a JSON array of objects with fields \"src\" and \
\"dst\" (entity surface forms exactly as listed), \"predicate\" (a short verb phrase) and \
\"confidence\" (0 to 1).\n\nEntities:\n{mentions}\n\nText:\n{text}";

const TABLE_EXTRACT: &str = "Convert the facts in the text into a relational table. Respond with only \
a JSON object {\"columns\": [{\"name\": ..., \"type\": \"text|number|boolean|date\", \"unit\": \
\"percent\" or omitted}], \"rows\": [[cell, ...], ...]}. Write percentages as strings such as \"+20%\". \
If a target schema is given, use exactly its columns.\n\nTarget schema:\n{schema}\n\nText:\n{text}";

const PLAN_SYNTHESIS: &str = "Translate the question into a query plan over the catalog. Respond with \
only the plan in this grammar:\n\
  plan := Scan(<table>) | Filter(pred=<pred>, input=<plan>) | Project(cols=[<col>, ...], input=<plan>)\n\
        | Join(left=<plan>, right=<plan>, key=<col>) | Sort(col=<col>, dir=asc|desc, input=<plan>)\n\
        | Limit(n=<int>, input=<plan>)\n\
        | Aggregate(group=[<col>, ...], aggs=[<FN>(<col>|*) AS <name>, ...], input=<plan>)\n\
  pred := (<col> <op> <literal>) | (<col> = <col>) | (<pred> AND <pred>) | (<pred> OR <pred>) | NOT <pred>\n\
Literals: numbers, percents like 15%, \"strings\", true, false, null. Quote column names that contain \
spaces with backticks. Relative quarters such as \"last quarter\" mean {reference_quarter}.\n\n\
Catalog (JSON):\n{catalog}\n\nQuestion: {question}\n{feedback}";

const ANSWER: &str = "Answer the question using only the context. Be brief.\n\nContext:\n{context}\n\n\
Question: {question}\nAnswer:";

const PARAPHRASE: &str = "Answer the question in one short sentence.\n\nQuestion: {question}\nAnswer:";

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([a-z_]+)\}").expect("placeholder regex"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub max_output_chars: usize,
    pub seed: u64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        SamplingParams { temperature: 0.0, max_output_chars: 4000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub template_id: TemplateId,
    pub variables: BTreeMap<String, String>,
    pub params: SamplingParams,
}

impl PromptRequest {
    /// Checks that every placeholder of the template is bound.
    pub fn new<K, V>(
        template_id: TemplateId,
        variables: impl IntoIterator<Item = (K, V)>,
        params: SamplingParams,
    ) -> Result<Self, GatewayError>
    where
        K: Into<String>,
        V: Into<String>,
    {
        let variables: BTreeMap<String, String> = variables.into_iter().map(|(k, v)| (k.into(), v.into())).collect();
        let missing: Vec<String> = template_id
            .placeholders()
            .into_iter()
            .filter(|p| !variables.contains_key(*p))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(GatewayError::UnboundPlaceholders { template: template_id, missing });
        }
        if params.temperature.is_nan() || params.temperature < 0.0 {
            return Err(GatewayError::Config(format!("temperature must be >= 0, got {}", params.temperature)));
        }
        Ok(PromptRequest { template_id, variables, params })
    }

    pub fn var(&self, name: &str) -> &str {
        self.variables.get(name).map(String::as_str).unwrap_or_default()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut r = self.clone();
        r.params.seed = seed;
        r
    }

    /// Substitutes each placeholder once; variable values are not rescanned.
    pub fn render(&self) -> String {
        placeholder_re()
            .replace_all(self.template_id.text(), |caps: &regex::Captures<'_>| self.var(&caps[1]).to_string())
            .into_owned()
    }
}

/// Separator between context blocks in the `answer` template.
pub const CONTEXT_SEPARATOR: &str = "\n-----\n";

/// Renders `(chunk_id, text)` pairs, highest-ranked first.
pub fn render_context<'a>(chunks: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    chunks.into_iter().map(|(id, text)| format!("[{id}] {text}")).collect::<Vec<_>>().join(CONTEXT_SEPARATOR)
}
