//! Versioned binary container holding a knowledge base and, optionally, its
//! clue index.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "CLUEKB\0\0"
//! version      u32
//! sections     u32       number of section records
//! records      sections × { tag: [u8; 4], offset: u64, len: u64 }
//! payload      section bodies, each starting on an 8-byte boundary
//! checksum     32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Sections:
//!
//! * `TOKZ`: tokenizer mode (u8), lowercase flag (u8), word count (u32),
//!   then each vocabulary word as u32 length + UTF-8 bytes.
//! * `DOCS`: document count (u64), then per document
//!   `{ id: u32, has_title: u32, title_off: u64, title_len: u64,
//!      text_off: u64, text_len: u64, tok_off: u64, tok_len: u64 }`.
//!   Offsets point into `STRS` (bytes) and `TOKS` (token units).
//! * `STRS`: concatenated title and raw-text bytes.
//! * `TOKS`: the token arena as u32.
//! * `FMIX`: the clue index (see `fm_index::persist`). Optional.
//!
//! The checksum doubles as the content hash reported in run artifacts.

use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Document, KnowledgeBase, Tokenizer, TokenizerConfig, TokenizerMode};
use crate::fm_index::ClueIndex;

pub const MAGIC: &[u8; 8] = b"CLUEKB\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("not a knowledge-base file (bad magic)")]
    BadMagic,
    #[error("unsupported format version {found} (this build reads version {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt knowledge-base file (format version {version}): {reason}")]
    Corrupt { version: u32, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn corrupt(reason: impl Into<String>) -> StoreError {
    StoreError::Corrupt {
        version: FORMAT_VERSION,
        reason: reason.into(),
    }
}

/// Append-only little-endian byte sink.
#[derive(Default)]
pub(crate) struct Writer {
    pub(crate) buf: Vec<u8>,
}

impl Writer {
    pub(crate) fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub(crate) fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub(crate) fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    pub(crate) fn u32s(&mut self, v: &[u32]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 4);
        for &x in v {
            self.u32(x);
        }
    }
    pub(crate) fn u64s(&mut self, v: &[u64]) {
        self.u64(v.len() as u64);
        self.buf.reserve(v.len() * 8);
        for &x in v {
            self.u64(x);
        }
    }
    fn align8(&mut self) {
        while !self.buf.len().is_multiple_of(8) {
            self.buf.push(0);
        }
    }
}

/// Bounds-checked cursor over a byte slice; running off the end is reported
/// as corruption.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt("unexpected end of section"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub(crate) fn u8(&mut self) -> Result<u8, StoreError> {
        Ok(self.take(1)?[0])
    }
    pub(crate) fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }
    pub(crate) fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }
    pub(crate) fn usize(&mut self) -> Result<usize, StoreError> {
        usize::try_from(self.u64()?).map_err(|_| corrupt("length overflows usize"))
    }
    pub(crate) fn bytes(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        self.take(n)
    }
    pub(crate) fn u32s(&mut self) -> Result<Vec<u32>, StoreError> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| corrupt("length overflow"))?)?;
        let mut out = vec![0u32; n];
        LittleEndian::read_u32_into(raw, &mut out);
        Ok(out)
    }
    pub(crate) fn u64s(&mut self) -> Result<Vec<u64>, StoreError> {
        let n = self.usize()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        let mut out = vec![0u64; n];
        LittleEndian::read_u64_into(raw, &mut out);
        Ok(out)
    }
    pub(crate) fn finish(&self) -> Result<(), StoreError> {
        if self.pos != self.buf.len() {
            return Err(corrupt("trailing bytes in section"));
        }
        Ok(())
    }
}

pub(crate) fn corrupt_error(reason: impl Into<String>) -> StoreError {
    corrupt(reason)
}

/// A loaded container.
#[derive(Debug)]
pub struct Bundle {
    pub kb: KnowledgeBase,
    pub index: Option<ClueIndex>,
    /// Hex SHA-256 of the file contents.
    pub content_hash: String,
}

pub fn encode(kb: &KnowledgeBase, index: Option<&ClueIndex>) -> Vec<u8> {
    let mut sections: Vec<([u8; 4], Vec<u8>)> = vec![(*b"TOKZ", encode_tokenizer(kb.tokenizer()))];
    let (docs, strs, toks) = encode_docs(kb.docs());
    sections.push((*b"DOCS", docs));
    sections.push((*b"STRS", strs));
    sections.push((*b"TOKS", toks));
    if let Some(index) = index {
        let mut w = Writer::default();
        index.write_to(&mut w);
        sections.push((*b"FMIX", w.buf));
    }

    let mut out = Writer::default();
    out.bytes(MAGIC);
    out.u32(FORMAT_VERSION);
    out.u32(sections.len() as u32);
    let header_len = 16 + sections.len() * 20;
    let mut offset = header_len.div_ceil(8) * 8;
    for (tag, body) in &sections {
        out.bytes(tag);
        out.u64(offset as u64);
        out.u64(body.len() as u64);
        offset = (offset + body.len()).div_ceil(8) * 8;
    }
    for (_, body) in &sections {
        out.align8();
        out.bytes(body);
    }
    out.align8();
    let digest = Sha256::digest(&out.buf);
    out.bytes(&digest);
    out.buf
}

pub fn decode(bytes: &[u8]) -> Result<Bundle, StoreError> {
    if bytes.len() < 16 {
        return Err(corrupt("file shorter than header"));
    }
    if &bytes[..8] != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = LittleEndian::read_u32(&bytes[8..12]);
    if version != FORMAT_VERSION {
        return Err(StoreError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    if bytes.len() < 16 + 32 {
        return Err(corrupt("file truncated"));
    }
    let (body, checksum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != checksum {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let count = LittleEndian::read_u32(&bytes[12..16]) as usize;
    let mut header = Reader::new(&body[16..]);
    let mut tokz = None;
    let mut docs = None;
    let mut strs = None;
    let mut toks = None;
    let mut fmix = None;
    for _ in 0..count {
        let tag: [u8; 4] = header.bytes(4)?.try_into().unwrap();
        let off = header.usize()?;
        let len = header.usize()?;
        let slice = off
            .checked_add(len)
            .and_then(|end| body.get(off..end))
            .ok_or_else(|| corrupt("section out of bounds"))?;
        match &tag {
            b"TOKZ" => tokz = Some(slice),
            b"DOCS" => docs = Some(slice),
            b"STRS" => strs = Some(slice),
            b"TOKS" => toks = Some(slice),
            b"FMIX" => fmix = Some(slice),
            _ => return Err(corrupt(format!("unknown section {:?}", String::from_utf8_lossy(&tag)))),
        }
    }
    let missing = |name: &str| corrupt(format!("missing section {name}"));
    let tokenizer = decode_tokenizer(tokz.ok_or_else(|| missing("TOKZ"))?)?;
    let docs = decode_docs(
        docs.ok_or_else(|| missing("DOCS"))?,
        strs.ok_or_else(|| missing("STRS"))?,
        toks.ok_or_else(|| missing("TOKS"))?,
    )?;
    let kb = KnowledgeBase::from_parts(tokenizer, docs);
    let index = match fmix {
        Some(s) => {
            let mut r = Reader::new(s);
            let idx = ClueIndex::read_from(&mut r)?;
            r.finish()?;
            Some(idx)
        }
        None => None,
    };
    Ok(Bundle {
        kb,
        index,
        content_hash: hex(checksum),
    })
}

/// Hash that [`save`] would report for this bundle.
pub fn content_hash(kb: &KnowledgeBase, index: Option<&ClueIndex>) -> String {
    let bytes = encode(kb, index);
    hex(&bytes[bytes.len() - 32..])
}

pub fn save(path: impl AsRef<Path>, kb: &KnowledgeBase, index: Option<&ClueIndex>) -> Result<String, StoreError> {
    let bytes = encode(kb, index);
    fs::write(path, &bytes)?;
    Ok(hex(&bytes[bytes.len() - 32..]))
}

pub fn load(path: impl AsRef<Path>) -> Result<Bundle, StoreError> {
    decode(&fs::read(path)?)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn encode_tokenizer(tok: &Tokenizer) -> Vec<u8> {
    let mut w = Writer::default();
    w.u8(match tok.mode() {
        TokenizerMode::Byte => 0,
        TokenizerMode::Word => 1,
    });
    w.u8(tok.config().lowercase as u8);
    let vocab = tok.word_vocab();
    w.u32(vocab.len() as u32);
    for word in vocab {
        w.u32(word.len() as u32);
        w.bytes(word.as_bytes());
    }
    w.buf
}

fn decode_tokenizer(buf: &[u8]) -> Result<Tokenizer, StoreError> {
    let mut r = Reader::new(buf);
    let mode = match r.u8()? {
        0 => TokenizerMode::Byte,
        1 => TokenizerMode::Word,
        m => return Err(corrupt(format!("unknown tokenizer mode {m}"))),
    };
    let lowercase = r.u8()? != 0;
    let n = r.u32()? as usize;
    let mut vocab = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let len = r.u32()? as usize;
        let s = std::str::from_utf8(r.bytes(len)?).map_err(|_| corrupt("vocabulary is not UTF-8"))?;
        vocab.push(s.to_owned());
    }
    r.finish()?;
    if mode == TokenizerMode::Word && vocab.len() < 2 {
        return Err(corrupt("word vocabulary lacks reserved entries"));
    }
    Ok(Tokenizer::from_parts(TokenizerConfig { mode, lowercase }, vocab))
}

fn encode_docs(docs: &[Document]) -> (Vec<u8>, Vec<u8>, Vec<u8>) {
    let mut table = Writer::default();
    let mut strs = Vec::new();
    let mut toks = Writer::default();
    table.u64(docs.len() as u64);
    let mut tok_off = 0u64;
    for d in docs {
        table.u32(d.id);
        table.u32(d.title.is_some() as u32);
        let title = d.title.as_deref().unwrap_or("");
        table.u64(strs.len() as u64);
        table.u64(title.len() as u64);
        strs.extend_from_slice(title.as_bytes());
        table.u64(strs.len() as u64);
        table.u64(d.raw_text.len() as u64);
        strs.extend_from_slice(d.raw_text.as_bytes());
        table.u64(tok_off);
        table.u64(d.tokens.len() as u64);
        tok_off += d.tokens.len() as u64;
        for &t in &d.tokens {
            toks.u32(t);
        }
    }
    (table.buf, strs, toks.buf)
}

fn decode_docs(table: &[u8], strs: &[u8], toks: &[u8]) -> Result<Vec<Document>, StoreError> {
    if !toks.len().is_multiple_of(4) {
        return Err(corrupt("token arena length is not a multiple of 4"));
    }
    let mut arena = vec![0u32; toks.len() / 4];
    LittleEndian::read_u32_into(toks, &mut arena);
    let string = |off: usize, len: usize| -> Result<String, StoreError> {
        let bytes = off
            .checked_add(len)
            .and_then(|end| strs.get(off..end))
            .ok_or_else(|| corrupt("string offset out of bounds"))?;
        String::from_utf8(bytes.to_vec()).map_err(|_| corrupt("document text is not UTF-8"))
    };
    let mut r = Reader::new(table);
    let n = r.usize()?;
    let mut docs = Vec::with_capacity(n.min(1 << 24));
    for expected in 0..n {
        let id = r.u32()?;
        if id as usize != expected {
            return Err(corrupt(format!("document id {id} out of order")));
        }
        let has_title = r.u32()? != 0;
        let (t_off, t_len) = (r.usize()?, r.usize()?);
        let (x_off, x_len) = (r.usize()?, r.usize()?);
        let (k_off, k_len) = (r.usize()?, r.usize()?);
        let title = has_title.then(|| string(t_off, t_len)).transpose()?;
        let tokens = k_off
            .checked_add(k_len)
            .and_then(|end| arena.get(k_off..end))
            .ok_or_else(|| corrupt("token offset out of bounds"))?
            .to_vec();
        docs.push(Document {
            id,
            title,
            tokens,
            raw_text: string(x_off, x_len)?,
        });
    }
    r.finish()?;
    Ok(docs)
}
