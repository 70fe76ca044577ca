//! Corpus ingestion: tokenization, dense document ids, queries and the
//! persisted knowledge base.

mod kb;
mod query;
mod tokenizer;

pub use kb::{read_jsonl_corpus, Document, KnowledgeBase, RawDocument};
pub use query::{read_jsonl_queries, Query, QueryRecord};
pub use tokenizer::{
    split_words, Stopwords, TokenId, Tokenizer, TokenizerConfig, TokenizerMode, FIRST_TOKEN, SEP, UNK,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("document {index} ({title:?}) tokenizes to an empty sequence")]
    EmptyDocument { index: usize, title: Option<String> },
    #[error("line {line}: document id {found} is not dense (expected {expected})")]
    NonDenseId { line: usize, expected: u64, found: u64 },
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("query {id:?} has no tokens")]
    EmptyQuery { id: String },
    #[error("query {id:?}: feature has length {found}, expected {expected}")]
    FeatureDim { id: String, expected: usize, found: usize },
    #[error("query {id:?}: gold document {doc} is outside the knowledge base")]
    UnknownGoldDoc { id: String, doc: u32 },
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
