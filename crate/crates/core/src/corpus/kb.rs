use std::io::BufRead;
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, TokenId, Tokenizer, TokenizerConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub id: u32,
    pub title: Option<String>,
    pub tokens: Vec<TokenId>,
    pub raw_text: String,
}

/// One input line of a JSON-lines corpus.
#[derive(Clone, Debug, Default, PartialEq, Eq, Deserialize)]
pub struct RawDocument {
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
    #[serde(default)]
    pub id: Option<u64>,
}

impl RawDocument {
    pub fn new(title: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            title: Some(title.into()),
            text: text.into(),
            id: None,
        }
    }
}

/// Immutable document collection with a frozen tokenizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KnowledgeBase {
    tokenizer: Tokenizer,
    docs: Vec<Document>,
}

impl KnowledgeBase {
    /// Tokenizes every document in input order and assigns dense ids.
    ///
    /// An explicit `id` on a raw document must equal its position.
    pub fn ingest<I>(raw_docs: I, config: TokenizerConfig) -> Result<Self, CorpusError>
    where
        I: IntoIterator<Item = RawDocument>,
    {
        let mut tokenizer = Tokenizer::new(config);
        let mut docs = Vec::new();
        for (index, raw) in raw_docs.into_iter().enumerate() {
            if let Some(found) = raw.id {
                if found != index as u64 {
                    return Err(CorpusError::NonDenseId {
                        line: index + 1,
                        expected: index as u64,
                        found,
                    });
                }
            }
            let tokens = tokenizer.tokenize_and_learn(&raw.text);
            if tokens.is_empty() {
                return Err(CorpusError::EmptyDocument {
                    index,
                    title: raw.title,
                });
            }
            docs.push(Document {
                id: index as u32,
                title: raw.title,
                tokens,
                raw_text: raw.text,
            });
        }
        if docs.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        tokenizer.freeze();
        Ok(Self { tokenizer, docs })
    }

    pub(crate) fn from_parts(tokenizer: Tokenizer, docs: Vec<Document>) -> Self {
        Self { tokenizer, docs }
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc(&self, id: u32) -> Option<&Document> {
        self.docs.get(id as usize)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.docs.iter().map(|d| d.tokens.len()).sum()
    }

    pub fn vocab_size(&self) -> usize {
        self.tokenizer.vocab_size()
    }

    /// Writes the knowledge base alone (no index section).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CorpusError> {
        crate::store::save(path, self, None)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        Ok(crate::store::load(path)?.kb)
    }
}

/// Parses a JSON-lines corpus. Blank lines are skipped; errors carry the
/// 1-based line number.
pub fn read_jsonl_corpus<R: BufRead>(reader: R) -> Result<Vec<RawDocument>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: RawDocument =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json { line: i + 1, source })?;
        if let Some(found) = doc.id {
            let expected = out.len() as u64;
            if found != expected {
                return Err(CorpusError::NonDenseId {
                    line: i + 1,
                    expected,
                    found,
                });
            }
        }
        out.push(doc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{TokenizerMode, SEP};

    #[test]
    fn ingest_two_docs_word_mode() {
        let kb = KnowledgeBase::ingest(
            vec![RawDocument::new("t0", "a b a b"), RawDocument::new("t1", "b c b")],
            TokenizerConfig::default(),
        )
        .unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(kb.docs()[0].tokens.len(), 4);
        assert_eq!(kb.docs()[1].tokens.len(), 3);
        // reserved + {a, b, c}
        assert_eq!(kb.vocab_size(), 5);
        assert!(kb.tokenizer().is_frozen());
        let ids: Vec<u32> = kb.docs().iter().map(|d| d.id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!(kb.docs().iter().all(|d| !d.tokens.contains(&SEP)));
    }

    #[test]
    fn ingest_single_doc() {
        let kb = KnowledgeBase::ingest(vec![RawDocument::new("t", "x")], Default::default()).unwrap();
        assert_eq!(kb.len(), 1);
        assert_eq!(kb.docs()[0].id, 0);
    }

    #[test]
    fn byte_mode_token_count_equals_normalized_bytes() {
        let text = "The cat. The cat sat.";
        let kb = KnowledgeBase::ingest(
            vec![RawDocument::new("t0", text)],
            TokenizerConfig {
                mode: TokenizerMode::Byte,
                lowercase: true,
            },
        )
        .unwrap();
        // independent count: lowercase ASCII keeps the byte length
        let expected = text.len();
        assert_eq!(kb.docs()[0].tokens.len(), expected);
    }

    #[test]
    fn empty_corpus_rejected() {
        let err = KnowledgeBase::ingest(Vec::new(), Default::default()).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCorpus));
    }

    #[test]
    fn empty_document_is_named() {
        let err = KnowledgeBase::ingest(
            vec![RawDocument::new("ok", "fine"), RawDocument::new("blank", "   ")],
            Default::default(),
        )
        .unwrap_err();
        match err {
            CorpusError::EmptyDocument { index, title } => {
                assert_eq!(index, 1);
                assert_eq!(title.as_deref(), Some("blank"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_reports_line_numbers() {
        let input = "{\"title\":\"a\",\"text\":\"x\"}\n\n{\"title\":\"b\" \"text\":\"y\"}\n";
        match read_jsonl_corpus(input.as_bytes()).unwrap_err() {
            CorpusError::Json { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jsonl_rejects_non_dense_ids() {
        let input = "{\"id\":0,\"text\":\"x\"}\n{\"id\":5,\"text\":\"y\"}\n";
        assert!(matches!(
            read_jsonl_corpus(input.as_bytes()).unwrap_err(),
            CorpusError::NonDenseId {
                line: 2,
                expected: 1,
                found: 5
            }
        ));
    }
}
