use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Token identifier shared by the tokenizer, the index and every scorer.
pub type TokenId = u32;

/// Document separator. Sorts before every real token.
pub const SEP: TokenId = 0;
/// Out-of-vocabulary marker for query-time word tokens. Never occurs in a corpus.
pub const UNK: TokenId = 1;
/// First id handed out to a real token.
pub const FIRST_TOKEN: TokenId = 2;

const BYTE_VOCAB: usize = 256 + FIRST_TOKEN as usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenizerMode {
    Byte,
    Word,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub mode: TokenizerMode,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            mode: TokenizerMode::Word,
            lowercase: true,
        }
    }
}

/// Deterministic byte- or word-level tokenizer.
///
/// Word mode splits on whitespace and detaches every non-alphanumeric
/// character into its own token. Its vocabulary grows while the knowledge
/// base is being ingested and is frozen afterwards; unknown words then map to
/// [`UNK`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    config: TokenizerConfig,
    vocab: Vec<String>,
    lookup: HashMap<String, TokenId>,
    frozen: bool,
}

impl Tokenizer {
    pub fn new(config: TokenizerConfig) -> Self {
        let mut tok = Self {
            config,
            vocab: Vec::new(),
            lookup: HashMap::new(),
            frozen: false,
        };
        if config_is_word(&tok.config) {
            tok.vocab.push("<sep>".to_owned());
            tok.vocab.push("<unk>".to_owned());
        }
        tok
    }

    /// Rebuilds a frozen word-mode tokenizer from a stored vocabulary. The
    /// first two entries are the reserved placeholders.
    pub(crate) fn from_parts(config: TokenizerConfig, vocab: Vec<String>) -> Self {
        let lookup = vocab
            .iter()
            .enumerate()
            .skip(FIRST_TOKEN as usize)
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self {
            config,
            vocab,
            lookup,
            frozen: true,
        }
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn mode(&self) -> TokenizerMode {
        self.config.mode
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Stored vocabulary (word mode only; empty in byte mode).
    pub(crate) fn word_vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Number of token ids, reserved ids included.
    pub fn vocab_size(&self) -> usize {
        match self.config.mode {
            TokenizerMode::Byte => BYTE_VOCAB,
            TokenizerMode::Word => self.vocab.len(),
        }
    }

    /// NFC plus optional lowercasing.
    pub fn normalize(&self, text: &str) -> String {
        let nfc: String = text.nfc().collect();
        if self.config.lowercase {
            nfc.to_lowercase()
        } else {
            nfc
        }
    }

    /// The text a round trip through this tokenizer produces.
    pub fn canonical(&self, text: &str) -> String {
        let normalized = self.normalize(text);
        match self.config.mode {
            TokenizerMode::Byte => normalized,
            TokenizerMode::Word => split_words(&normalized).join(" "),
        }
    }

    /// Tokenizes without touching the vocabulary. Unknown words become [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let normalized = self.normalize(text);
        match self.config.mode {
            TokenizerMode::Byte => bytes_to_tokens(&normalized),
            TokenizerMode::Word => split_words(&normalized)
                .into_iter()
                .map(|w| self.lookup.get(w).copied().unwrap_or(UNK))
                .collect(),
        }
    }

    /// Tokenizes and, unless frozen, adds unseen words to the vocabulary.
    pub fn tokenize_and_learn(&mut self, text: &str) -> Vec<TokenId> {
        if self.frozen || self.config.mode == TokenizerMode::Byte {
            return self.tokenize(text);
        }
        let normalized = self.normalize(text);
        split_words(&normalized)
            .into_iter()
            .map(|w| match self.lookup.get(w) {
                Some(&id) => id,
                None => {
                    let id = self.vocab.len() as TokenId;
                    self.vocab.push(w.to_owned());
                    self.lookup.insert(w.to_owned(), id);
                    id
                }
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[TokenId]) -> String {
        match self.config.mode {
            TokenizerMode::Byte => {
                let bytes: Vec<u8> = tokens
                    .iter()
                    .filter(|&&t| t >= FIRST_TOKEN && (t as usize) < BYTE_VOCAB)
                    .map(|&t| (t - FIRST_TOKEN) as u8)
                    .collect();
                String::from_utf8_lossy(&bytes).into_owned()
            }
            TokenizerMode::Word => tokens.iter().map(|&t| self.token_text(t)).collect::<Vec<_>>().join(" "),
        }
    }

    pub fn token_text(&self, token: TokenId) -> &str {
        match self.config.mode {
            TokenizerMode::Word => self.vocab.get(token as usize).map(String::as_str).unwrap_or("<unk>"),
            TokenizerMode::Byte => match token {
                SEP => "<sep>",
                UNK => "<unk>",
                _ => "",
            },
        }
    }

    pub fn token_id(&self, word: &str) -> Option<TokenId> {
        match self.config.mode {
            TokenizerMode::Word => self.lookup.get(word).copied(),
            TokenizerMode::Byte => {
                let bytes = word.as_bytes();
                (bytes.len() == 1).then(|| bytes[0] as TokenId + FIRST_TOKEN)
            }
        }
    }

    /// Token ids of the sentence terminators `.`, `!` and `?` present in the
    /// vocabulary.
    pub fn terminators(&self) -> Vec<TokenId> {
        [".", "!", "?"].iter().filter_map(|p| self.token_id(p)).collect()
    }

    /// Content words of `text` (stopwords and punctuation removed,
    /// deduplicated in first-seen order), each as its own token sequence.
    pub fn keywords(&self, text: &str, stopwords: &Stopwords) -> Vec<Vec<TokenId>> {
        let normalized = self.normalize(text);
        let mut seen: Vec<Vec<TokenId>> = Vec::new();
        for word in split_words(&normalized) {
            if !word.chars().any(char::is_alphanumeric) || stopwords.contains(word) {
                continue;
            }
            let toks = match self.config.mode {
                TokenizerMode::Byte => bytes_to_tokens(word),
                TokenizerMode::Word => vec![self.lookup.get(word).copied().unwrap_or(UNK)],
            };
            if !seen.contains(&toks) {
                seen.push(toks);
            }
        }
        seen
    }
}

fn config_is_word(config: &TokenizerConfig) -> bool {
    config.mode == TokenizerMode::Word
}

fn bytes_to_tokens(text: &str) -> Vec<TokenId> {
    text.bytes().map(|b| b as TokenId + FIRST_TOKEN).collect()
}

/// Whitespace split with punctuation detached into single-character pieces.
pub fn split_words(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            start.get_or_insert(i);
            continue;
        }
        if let Some(s) = start.take() {
            out.push(&text[s..i]);
        }
        if !ch.is_whitespace() {
            out.push(&text[i..i + ch.len_utf8()]);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

/// Stopword set used when extracting query keywords.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stopwords(std::collections::HashSet<String>);

const ENGLISH_STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can",
    "could", "did", "do", "does", "for", "from", "had", "has", "have", "he", "her", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "kind", "me", "my", "no", "not", "of", "on", "one", "or", "our", "she", "so", "some",
    "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "to", "type", "was", "we",
    "were", "what", "when", "where", "which", "who", "why", "will", "with", "would", "you", "your",
];

impl Stopwords {
    pub fn english() -> Self {
        Self(ENGLISH_STOPWORDS.iter().map(|s| s.to_string()).collect())
    }

    pub fn empty() -> Self {
        Self(Default::default())
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: Into<String>>(words: I) -> Self {
        Self(words.into_iter().map(Into::into).collect())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

impl Default for Stopwords {
    fn default() -> Self {
        Self::english()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn word() -> Tokenizer {
        Tokenizer::new(TokenizerConfig::default())
    }

    #[test]
    fn empty_text_is_empty_sequence() {
        let mut t = word();
        assert!(t.tokenize_and_learn("").is_empty());
        assert!(t.tokenize("   ").is_empty());
    }

    #[test]
    fn word_round_trip() {
        let mut t = word();
        let toks = t.tokenize_and_learn("b c b");
        assert_eq!(toks, vec![2, 3, 2]);
        assert_eq!(t.detokenize(&toks), "b c b");
    }

    #[test]
    fn lowercase_normalization() {
        let mut t = word();
        let a = t.tokenize_and_learn("The CAT");
        let b = t.tokenize_and_learn("the cat");
        assert_eq!(a, b);
    }

    #[test]
    fn punctuation_is_detached() {
        assert_eq!(split_words("the cat. it's"), vec!["the", "cat", ".", "it", "'", "s"]);
    }

    #[test]
    fn frozen_vocab_maps_oov_to_unk() {
        let mut t = word();
        t.tokenize_and_learn("a b");
        t.freeze();
        assert_eq!(t.tokenize_and_learn("a zebra"), vec![2, UNK]);
        assert_eq!(t.vocab_size(), 4);
    }

    #[test]
    fn byte_mode_counts_bytes() {
        let t = Tokenizer::new(TokenizerConfig {
            mode: TokenizerMode::Byte,
            lowercase: true,
        });
        let text = "The cat. The cat sat.";
        let toks = t.tokenize(text);
        assert_eq!(toks.len(), text.to_lowercase().len());
        assert!(toks.iter().all(|&x| x >= FIRST_TOKEN));
        assert_eq!(t.detokenize(&toks), "the cat. the cat sat.");
    }

    #[test]
    fn nfc_composes() {
        let t = word();
        // "e" + combining acute accent
        assert_eq!(t.normalize("e\u{301}"), "\u{e9}");
    }

    #[test]
    fn keywords_drop_stopwords_and_duplicates() {
        let mut t = word();
        t.tokenize_and_learn("the cat sat on the cat mat");
        let kw = t.keywords("The cat, the CAT sat?", &Stopwords::english());
        let words: Vec<String> = kw.iter().map(|k| t.detokenize(k)).collect();
        assert_eq!(words, vec!["cat", "sat"]);
    }
}
