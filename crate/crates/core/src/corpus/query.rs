use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{CorpusError, KnowledgeBase, Stopwords, TokenId};

/// Query identifier as it appears in a JSON-lines file: string or integer.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(untagged)]
enum RawId {
    Num(u64),
    Str(String),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Num(n) => n.to_string(),
            RawId::Str(s) => s,
        }
    }
}

/// One line of a query file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    id: RawId,
    pub text: String,
    #[serde(default)]
    pub answers: Option<Vec<String>>,
    #[serde(default)]
    pub gold_doc_ids: Option<Vec<u32>>,
    #[serde(default)]
    pub feature: Option<Vec<f64>>,
    /// Clue text the oracle scorer is forced to follow. Test fixtures only.
    #[serde(default)]
    pub target: Option<String>,
}

impl QueryRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: RawId::Str(id.into()),
            text: text.into(),
            answers: None,
            gold_doc_ids: None,
            feature: None,
            target: None,
        }
    }

    pub fn id(&self) -> String {
        self.id.clone().into_string()
    }
}

/// A tokenized query. `feature` stands in for the visual half of a
/// multi-modal query and is carried through untouched.
#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub id: String,
    pub text: String,
    pub text_tokens: Vec<TokenId>,
    pub keywords: Vec<Vec<TokenId>>,
    pub feature: Option<Vec<f64>>,
    pub gold_answers: Option<Vec<String>>,
    pub gold_doc_ids: Option<Vec<u32>>,
    pub target: Option<Vec<TokenId>>,
}

impl Query {
    pub fn new(
        record: QueryRecord,
        kb: &KnowledgeBase,
        stopwords: &Stopwords,
        feature_dim: Option<usize>,
    ) -> Result<Self, CorpusError> {
        let tok = kb.tokenizer();
        let id = record.id.into_string();
        let text_tokens = tok.tokenize(&record.text);
        if text_tokens.is_empty() {
            return Err(CorpusError::EmptyQuery { id });
        }
        if let (Some(expected), Some(f)) = (feature_dim, record.feature.as_ref()) {
            if f.len() != expected {
                return Err(CorpusError::FeatureDim {
                    id,
                    expected,
                    found: f.len(),
                });
            }
        }
        if let Some(gold) = &record.gold_doc_ids {
            if let Some(&doc) = gold.iter().find(|&&d| d as usize >= kb.len()) {
                return Err(CorpusError::UnknownGoldDoc { id, doc });
            }
        }
        Ok(Self {
            keywords: tok.keywords(&record.text, stopwords),
            target: record.target.as_deref().map(|t| tok.tokenize(t)),
            id,
            text: record.text,
            text_tokens,
            feature: record.feature,
            gold_answers: record.answers,
            gold_doc_ids: record.gold_doc_ids,
        })
    }

    /// Builds a query straight from text; convenient in tests and benches.
    pub fn from_text(id: impl Into<String>, text: &str, kb: &KnowledgeBase) -> Result<Self, CorpusError> {
        Self::new(QueryRecord::new(id, text), kb, &Stopwords::english(), None)
    }

    /// Distinct single tokens that make up the query keywords.
    pub fn keyword_tokens(&self) -> Vec<TokenId> {
        let mut toks: Vec<TokenId> = self.keywords.iter().flatten().copied().collect();
        toks.sort_unstable();
        toks.dedup();
        toks
    }
}

pub fn read_jsonl_queries<R: BufRead>(reader: R) -> Result<Vec<QueryRecord>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?);
    }
    Ok(out)
}
