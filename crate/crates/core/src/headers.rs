//! Read-header compression: tokenize into fields, delta-code each header
//! against the previous one, entropy-code the deltas.
//!
//! A header splits into maximal digit runs (numeric fields), maximal
//! alphabetic runs and single separator bytes (anything else). Consecutive
//! headers usually differ in a couple of counters, so a delta stores only the
//! changed fields: a token gap, an op and a small payload, with a raw-bytes
//! tail as the fallback whenever the field structure changes. A header whose
//! delta is identical to the previous header's delta (sequential counters hit
//! this almost every time) collapses to a single marker symbol.
//!
//! Each block starts from the empty header, so blocks decode independently.

use crate::error::{Error, Result};
use crate::rangecoder::{
    decode_varint, encode_varint, unzigzag, zigzag, FrequencyModel, RangeDecoder, RangeEncoder,
};

/// Digit runs longer than this are treated as alpha fields so numeric deltas
/// always fit u64 arithmetic.
const MAX_NUM_DIGITS: usize = 18;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    /// Maximal alphabetic run (also: digit runs too long to delta numerically).
    Alpha(Vec<u8>),
    /// Maximal digit run of at most 18 digits, kept verbatim for width.
    Num(Vec<u8>),
    /// Single byte that is neither digit nor alphabetic.
    Sep(u8),
}

impl Token {
    fn bytes(&self) -> &[u8] {
        match self {
            Token::Alpha(b) | Token::Num(b) => b,
            Token::Sep(b) => std::slice::from_ref(b),
        }
    }

    fn byte_len(&self) -> usize {
        self.bytes().len()
    }
}

/// Splits a header into tokens; concatenating the tokens reproduces the
/// header byte-exactly.
pub fn tokenize(header: &[u8]) -> Vec<Token> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < header.len() {
        let b = header[i];
        if b.is_ascii_digit() {
            let start = i;
            while i < header.len() && header[i].is_ascii_digit() {
                i += 1;
            }
            let run = header[start..i].to_vec();
            if run.len() > MAX_NUM_DIGITS {
                out.push(Token::Alpha(run));
            } else {
                out.push(Token::Num(run));
            }
        } else if b.is_ascii_alphabetic() {
            let start = i;
            while i < header.len() && header[i].is_ascii_alphabetic() {
                i += 1;
            }
            out.push(Token::Alpha(header[start..i].to_vec()));
        } else {
            out.push(Token::Sep(b));
            i += 1;
        }
    }
    out
}

/// One changed field: skip `gap` matching tokens, then apply the op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeltaEntry {
    /// Numeric difference, width unchanged.
    NumDelta { gap: u32, delta: i64 },
    /// Numeric difference with the new digit width (leading zeros preserved).
    NumDeltaWidth { gap: u32, delta: i64, width: u32 },
    /// Longest-common-prefix replacement for alpha/separator fields.
    Prefix { gap: u32, lcp: u32, suffix: Vec<u8> },
    /// Literal remainder of the header; terminal.
    RawTail { gap: u32, bytes: Vec<u8> },
    /// All remaining tokens match and the token counts are equal; terminal.
    End,
}

/// Field-level difference between two headers.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HeaderDelta {
    pub entries: Vec<DeltaEntry>,
}

fn parse_num(digits: &[u8]) -> u64 {
    debug_assert!(digits.len() <= MAX_NUM_DIGITS);
    let mut v = 0u64;
    for &d in digits {
        v = v * 10 + (d - b'0') as u64;
    }
    v
}

fn render_num(value: u64, width: usize) -> Vec<u8> {
    let s = value.to_string();
    if s.len() >= width {
        s.into_bytes()
    } else {
        let mut out = vec![b'0'; width - s.len()];
        out.extend_from_slice(s.as_bytes());
        out
    }
}

/// Computes the delta turning `prev` into `cur` (`cur_raw` is the raw header
/// the tokens came from). The empty token list stands for "no previous
/// header", producing a raw tail.
pub fn diff(prev: &[Token], cur: &[Token], cur_raw: &[u8]) -> HeaderDelta {
    let mut entries = Vec::new();
    let mut cursor = 0usize; // next aligned token index not yet covered
    let mut cur_offset = 0usize; // byte offset of token i within cur_raw
    let aligned = prev.len().min(cur.len());

    for i in 0..aligned {
        let (p, c) = (&prev[i], &cur[i]);
        if p == c {
            cur_offset += c.byte_len();
            continue;
        }
        let gap = (i - cursor) as u32;
        match (p, c) {
            (Token::Num(pd), Token::Num(cd)) => {
                let delta = parse_num(cd) as i64 - parse_num(pd) as i64;
                if pd.len() == cd.len() {
                    entries.push(DeltaEntry::NumDelta { gap, delta });
                } else {
                    entries.push(DeltaEntry::NumDeltaWidth {
                        gap,
                        delta,
                        width: cd.len() as u32,
                    });
                }
            }
            (Token::Alpha(pb), Token::Alpha(cb)) => {
                let lcp = pb.iter().zip(cb.iter()).take_while(|(a, b)| a == b).count();
                entries.push(DeltaEntry::Prefix {
                    gap,
                    lcp: lcp as u32,
                    suffix: cb[lcp..].to_vec(),
                });
            }
            (Token::Sep(_), Token::Sep(cb)) => {
                entries.push(DeltaEntry::Prefix {
                    gap,
                    lcp: 0,
                    suffix: vec![*cb],
                });
            }
            _ => {
                // structural mismatch: literal tail from this token on
                entries.push(DeltaEntry::RawTail {
                    gap,
                    bytes: cur_raw[cur_offset..].to_vec(),
                });
                return HeaderDelta { entries };
            }
        }
        cursor = i + 1;
        cur_offset += c.byte_len();
    }

    if cur.len() == prev.len() {
        entries.push(DeltaEntry::End);
    } else {
        // token counts differ: whatever cur has beyond the aligned region
        // (possibly nothing) goes out as a literal tail
        entries.push(DeltaEntry::RawTail {
            gap: (aligned - cursor) as u32,
            bytes: cur_raw[cur_offset..].to_vec(),
        });
    }
    HeaderDelta { entries }
}

/// Reconstructs the header from the previous header's tokens and a delta.
pub fn apply(prev: &[Token], delta: &HeaderDelta) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut cursor = 0usize;
    let corrupt = |msg: &str| Error::Corrupt(format!("header delta: {msg}"));

    for entry in &delta.entries {
        match entry {
            DeltaEntry::End => {
                for t in &prev[cursor..] {
                    out.extend_from_slice(t.bytes());
                }
                return Ok(out);
            }
            DeltaEntry::RawTail { gap, bytes } => {
                let end = cursor + *gap as usize;
                if end > prev.len() {
                    return Err(corrupt("gap past previous header"));
                }
                for t in &prev[cursor..end] {
                    out.extend_from_slice(t.bytes());
                }
                out.extend_from_slice(bytes);
                return Ok(out);
            }
            DeltaEntry::NumDelta { gap, delta }
            | DeltaEntry::NumDeltaWidth { gap, delta, .. } => {
                let idx = cursor + *gap as usize;
                if idx >= prev.len() {
                    return Err(corrupt("gap past previous header"));
                }
                for t in &prev[cursor..idx] {
                    out.extend_from_slice(t.bytes());
                }
                let Token::Num(pd) = &prev[idx] else {
                    return Err(corrupt("numeric delta against non-numeric field"));
                };
                let value = (parse_num(pd) as i64).wrapping_add(*delta);
                if value < 0 {
                    return Err(corrupt("negative numeric field"));
                }
                let width = match entry {
                    DeltaEntry::NumDeltaWidth { width, .. } => *width as usize,
                    _ => pd.len(),
                };
                out.extend_from_slice(&render_num(value as u64, width));
                cursor = idx + 1;
            }
            DeltaEntry::Prefix { gap, lcp, suffix } => {
                let idx = cursor + *gap as usize;
                if idx >= prev.len() {
                    return Err(corrupt("gap past previous header"));
                }
                for t in &prev[cursor..idx] {
                    out.extend_from_slice(t.bytes());
                }
                let pb = prev[idx].bytes();
                if *lcp as usize > pb.len() {
                    return Err(corrupt("prefix longer than previous field"));
                }
                out.extend_from_slice(&pb[..*lcp as usize]);
                out.extend_from_slice(suffix);
                cursor = idx + 1;
            }
        }
    }
    Err(corrupt("missing terminal entry"))
}

// ── plain serialization ──────────────────────────────────────────────────────
// Used for the "same delta as last header" comparison shortcut and to account
// the pre-entropy size; the entropy-coded form mirrors it model by model.

const OP_END: u8 = 0;
const OP_NUM_DELTA: u8 = 1;
const OP_NUM_DELTA_WIDTH: u8 = 2;
const OP_PREFIX: u8 = 3;
const OP_RAW_TAIL: u8 = 4;

const FORM_FULL: u8 = 0;
const FORM_SAME: u8 = 1;

fn plain_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let b = (v & 0x7F) as u8;
        v >>= 7;
        if v != 0 {
            out.push(b | 0x80);
        } else {
            out.push(b);
            break;
        }
    }
}

impl HeaderDelta {
    /// Plain byte form (before entropy coding), including the form byte.
    pub fn serialize_plain(&self, same_as_last: bool) -> Vec<u8> {
        if same_as_last {
            return vec![FORM_SAME];
        }
        let mut out = vec![FORM_FULL];
        for entry in &self.entries {
            match entry {
                DeltaEntry::End => out.push(OP_END),
                DeltaEntry::NumDelta { gap, delta } => {
                    out.push(OP_NUM_DELTA);
                    plain_varint(&mut out, *gap as u64);
                    plain_varint(&mut out, zigzag(*delta));
                }
                DeltaEntry::NumDeltaWidth { gap, delta, width } => {
                    out.push(OP_NUM_DELTA_WIDTH);
                    plain_varint(&mut out, *gap as u64);
                    plain_varint(&mut out, zigzag(*delta));
                    plain_varint(&mut out, *width as u64);
                }
                DeltaEntry::Prefix { gap, lcp, suffix } => {
                    out.push(OP_PREFIX);
                    plain_varint(&mut out, *gap as u64);
                    plain_varint(&mut out, *lcp as u64);
                    plain_varint(&mut out, suffix.len() as u64);
                    out.extend_from_slice(suffix);
                }
                DeltaEntry::RawTail { gap, bytes } => {
                    out.push(OP_RAW_TAIL);
                    plain_varint(&mut out, *gap as u64);
                    plain_varint(&mut out, bytes.len() as u64);
                    out.extend_from_slice(bytes);
                }
            }
        }
        out
    }
}

// ── per-block entropy codec ──────────────────────────────────────────────────

struct HeaderModels {
    form: FrequencyModel,
    op: FrequencyModel,
    varint: FrequencyModel,
    literal: FrequencyModel,
}

impl HeaderModels {
    fn new() -> HeaderModels {
        HeaderModels {
            form: FrequencyModel::new(2),
            op: FrequencyModel::new(5),
            varint: FrequencyModel::new(256),
            literal: FrequencyModel::new(256),
        }
    }
}

/// Encodes one block of headers into a single entropy-coded stream.
pub struct HeaderBlockEncoder {
    enc: RangeEncoder,
    models: HeaderModels,
    prev_tokens: Vec<Token>,
    last_delta: Option<HeaderDelta>,
    plain_bytes: u64,
    raw_bytes: u64,
}

impl Default for HeaderBlockEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl HeaderBlockEncoder {
    pub fn new() -> HeaderBlockEncoder {
        HeaderBlockEncoder {
            enc: RangeEncoder::new(),
            models: HeaderModels::new(),
            prev_tokens: Vec::new(),
            last_delta: None,
            plain_bytes: 0,
            raw_bytes: 0,
        }
    }

    pub fn push(&mut self, header: &[u8]) {
        let cur_tokens = tokenize(header);
        let delta = diff(&self.prev_tokens, &cur_tokens, header);
        let same = self.last_delta.as_ref() == Some(&delta);
        self.plain_bytes += delta.serialize_plain(same).len() as u64;
        self.raw_bytes += header.len() as u64;

        let m = &mut self.models;
        if same {
            m.form.encode(&mut self.enc, FORM_SAME as usize);
        } else {
            m.form.encode(&mut self.enc, FORM_FULL as usize);
            for entry in &delta.entries {
                match entry {
                    DeltaEntry::End => m.op.encode(&mut self.enc, OP_END as usize),
                    DeltaEntry::NumDelta { gap, delta } => {
                        m.op.encode(&mut self.enc, OP_NUM_DELTA as usize);
                        encode_varint(&mut self.enc, &mut m.varint, *gap as u64);
                        encode_varint(&mut self.enc, &mut m.varint, zigzag(*delta));
                    }
                    DeltaEntry::NumDeltaWidth { gap, delta, width } => {
                        m.op.encode(&mut self.enc, OP_NUM_DELTA_WIDTH as usize);
                        encode_varint(&mut self.enc, &mut m.varint, *gap as u64);
                        encode_varint(&mut self.enc, &mut m.varint, zigzag(*delta));
                        encode_varint(&mut self.enc, &mut m.varint, *width as u64);
                    }
                    DeltaEntry::Prefix { gap, lcp, suffix } => {
                        m.op.encode(&mut self.enc, OP_PREFIX as usize);
                        encode_varint(&mut self.enc, &mut m.varint, *gap as u64);
                        encode_varint(&mut self.enc, &mut m.varint, *lcp as u64);
                        encode_varint(&mut self.enc, &mut m.varint, suffix.len() as u64);
                        for &b in suffix {
                            m.literal.encode(&mut self.enc, b as usize);
                        }
                    }
                    DeltaEntry::RawTail { gap, bytes } => {
                        m.op.encode(&mut self.enc, OP_RAW_TAIL as usize);
                        encode_varint(&mut self.enc, &mut m.varint, *gap as u64);
                        encode_varint(&mut self.enc, &mut m.varint, bytes.len() as u64);
                        for &b in bytes {
                            m.literal.encode(&mut self.enc, b as usize);
                        }
                    }
                }
            }
        }
        self.prev_tokens = cur_tokens;
        self.last_delta = Some(delta);
    }

    /// Pre-entropy size of all deltas pushed so far.
    pub fn plain_bytes(&self) -> u64 {
        self.plain_bytes
    }

    pub fn raw_bytes(&self) -> u64 {
        self.raw_bytes
    }

    pub fn finish(self) -> Vec<u8> {
        self.enc.finish()
    }
}

/// Decodes the header stream of one block.
pub struct HeaderBlockDecoder<'a> {
    dec: RangeDecoder<'a>,
    models: HeaderModels,
    prev_tokens: Vec<Token>,
    last_delta: Option<HeaderDelta>,
}

impl<'a> HeaderBlockDecoder<'a> {
    pub fn new(stream: &'a [u8]) -> HeaderBlockDecoder<'a> {
        HeaderBlockDecoder {
            dec: RangeDecoder::new(stream),
            models: HeaderModels::new(),
            prev_tokens: Vec::new(),
            last_delta: None,
        }
    }

    pub fn next_header(&mut self) -> Result<Vec<u8>> {
        let m = &mut self.models;
        let form = m.form.decode(&mut self.dec) as u8;
        let delta = if form == FORM_SAME {
            self.last_delta
                .clone()
                .ok_or_else(|| Error::Corrupt("repeat marker before any header delta".into()))?
        } else {
            let mut entries = Vec::new();
            loop {
                let op = m.op.decode(&mut self.dec) as u8;
                match op {
                    OP_END => {
                        entries.push(DeltaEntry::End);
                        break;
                    }
                    OP_NUM_DELTA => {
                        let gap = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        let delta = unzigzag(decode_varint(&mut self.dec, &mut m.varint));
                        entries.push(DeltaEntry::NumDelta { gap, delta });
                    }
                    OP_NUM_DELTA_WIDTH => {
                        let gap = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        let delta = unzigzag(decode_varint(&mut self.dec, &mut m.varint));
                        let width = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        entries.push(DeltaEntry::NumDeltaWidth { gap, delta, width });
                    }
                    OP_PREFIX => {
                        let gap = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        let lcp = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        let len = decode_varint(&mut self.dec, &mut m.varint) as usize;
                        if len > (1 << 24) {
                            return Err(Error::Corrupt("implausible header field length".into()));
                        }
                        let suffix = (0..len).map(|_| m.literal.decode(&mut self.dec) as u8).collect();
                        entries.push(DeltaEntry::Prefix { gap, lcp, suffix });
                    }
                    OP_RAW_TAIL => {
                        let gap = decode_varint(&mut self.dec, &mut m.varint) as u32;
                        let len = decode_varint(&mut self.dec, &mut m.varint) as usize;
                        if len > (1 << 24) {
                            return Err(Error::Corrupt("implausible header tail length".into()));
                        }
                        let bytes = (0..len).map(|_| m.literal.decode(&mut self.dec) as u8).collect();
                        entries.push(DeltaEntry::RawTail { gap, bytes });
                        break;
                    }
                    _ => return Err(Error::Corrupt(format!("bad header delta op {op}"))),
                }
            }
            HeaderDelta { entries }
        };

        let header = apply(&self.prev_tokens, &delta)?;
        self.prev_tokens = tokenize(&header);
        self.last_delta = Some(delta);
        Ok(header)
    }
}
