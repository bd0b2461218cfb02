//! Canonical Huffman coding of quantized maps, framed as self-describing
//! blocks.
//!
//! # Block layout
//!
//! All integers little-endian. Offsets in bytes; `d` is the number of
//! shape dimensions and `c` the bit depth.
//!
//! | offset        | size        | field                                       |
//! |---------------|-------------|---------------------------------------------|
//! | 0             | 1           | format version (currently 1)                |
//! | 1             | 1           | flags: bit 0 passthrough, bit 1 single-symbol |
//! | 2             | 1           | bit depth `c`, 1..=16                        |
//! | 3             | 1           | `d`, number of shape dimensions             |
//! | 4             | 4           | layer index (u32)                           |
//! | 8             | 8           | symbol count (u64), equals product of shape |
//! | 16            | 8           | `v_min` (f64)                               |
//! | 24            | 8           | `v_max` (f64)                               |
//! | 32            | 4·d         | shape dimensions (u32 each)                 |
//! | 32+4d         | `2^c` or 4  | code lengths, one byte per symbol value (0 = absent); single-symbol blocks carry the symbol as u32 instead |
//! | …             | 8           | payload length in bytes (u64)               |
//! | …             | n           | payload                                     |
//!
//! The payload is the concatenation of canonical codewords, packed MSB-first
//! within each byte and zero-padded to a byte boundary. Codes are assigned
//! in order of (length, symbol value); code lengths never exceed 32 bits.
//! Single-symbol blocks have an empty payload.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::quantizer::QuantizedMap;

pub const FORMAT_VERSION: u8 = 1;
/// Largest bit depth the block format can carry.
pub const MAX_CODEC_BIT_DEPTH: u8 = 16;
pub const MAX_CODE_LENGTH: u8 = 32;

const FLAG_PASSTHROUGH: u8 = 0b01;
const FLAG_SINGLE_SYMBOL: u8 = 0b10;
const FIXED_HEADER_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("alphabet too large: {0}-bit symbols exceed the {MAX_CODEC_BIT_DEPTH}-bit block format")]
    AlphabetTooLarge(u8),
    #[error("truncated payload")]
    TruncatedPayload,
    #[error("truncated header")]
    TruncatedHeader,
    #[error("invalid code: {0}")]
    InvalidCode(String),
    #[error("symbol-count mismatch: header declares {declared}, shape holds {expected}")]
    SymbolCountMismatch { declared: u64, expected: u64 },
    #[error("unsupported block format version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed block: {0}")]
    Malformed(String),
}

type CodecResult<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Clone, PartialEq)]
pub enum CodeTable {
    /// Every element carries the same symbol; the payload is empty.
    Single(u32),
    /// Code length per symbol value, `2^c` entries.
    Lengths(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHeader {
    pub format_version: u8,
    pub layer_index: u32,
    pub bit_depth: u8,
    pub shape: Vec<u32>,
    pub v_min: f64,
    pub v_max: f64,
    pub passthrough: bool,
    pub symbol_count: u64,
    pub code: CodeTable,
}

impl BlockHeader {
    /// Serialized length including the trailing payload-length field.
    pub fn byte_len(&self) -> usize {
        header_len(self.shape.len(), &self.code)
    }
}

fn header_len(ndim: usize, code: &CodeTable) -> usize {
    let table = match code {
        CodeTable::Single(_) => 4,
        CodeTable::Lengths(l) => l.len(),
    };
    FIXED_HEADER_LEN + 4 * ndim + table + 8
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBlock {
    pub header: BlockHeader,
    pub payload: Vec<u8>,
}

impl EncodedBlock {
    pub fn byte_len(&self) -> usize {
        self.header.byte_len() + self.payload.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.byte_len());
        let mut flags = 0;
        if h.passthrough {
            flags |= FLAG_PASSTHROUGH;
        }
        if matches!(h.code, CodeTable::Single(_)) {
            flags |= FLAG_SINGLE_SYMBOL;
        }
        out.push(h.format_version);
        out.push(flags);
        out.push(h.bit_depth);
        out.push(h.shape.len() as u8);
        out.extend_from_slice(&h.layer_index.to_le_bytes());
        out.extend_from_slice(&h.symbol_count.to_le_bytes());
        out.extend_from_slice(&h.v_min.to_le_bytes());
        out.extend_from_slice(&h.v_max.to_le_bytes());
        for d in &h.shape {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &h.code {
            CodeTable::Single(s) => out.extend_from_slice(&s.to_le_bytes()),
            CodeTable::Lengths(l) => out.extend_from_slice(l),
        }
        out.extend_from_slice(&(self.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses the framing only; code validity is checked by [`decode`].
    pub fn from_bytes(bytes: &[u8]) -> CodecResult<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let format_version = r.u8()?;
        if format_version != FORMAT_VERSION {
            return Err(CodecError::UnsupportedVersion(format_version));
        }
        let flags = r.u8()?;
        if flags & !(FLAG_PASSTHROUGH | FLAG_SINGLE_SYMBOL) != 0 {
            return Err(CodecError::Malformed(format!("unknown flags {flags:#04x}")));
        }
        let bit_depth = r.u8()?;
        if bit_depth == 0 || bit_depth > MAX_CODEC_BIT_DEPTH {
            return Err(CodecError::Malformed(format!("bit depth {bit_depth}")));
        }
        let ndim = r.u8()? as usize;
        let layer_index = r.u32()?;
        let symbol_count = r.u64()?;
        let v_min = r.f64()?;
        let v_max = r.f64()?;
        let shape = (0..ndim).map(|_| r.u32()).collect::<CodecResult<Vec<_>>>()?;
        let code = if flags & FLAG_SINGLE_SYMBOL != 0 {
            CodeTable::Single(r.u32()?)
        } else {
            CodeTable::Lengths(r.take(1usize << bit_depth)?.to_vec())
        };
        let payload_len = r.u64()?;
        let remaining = bytes.len() - r.pos;
        if (remaining as u64) < payload_len {
            return Err(CodecError::TruncatedPayload);
        }
        if remaining as u64 > payload_len {
            return Err(CodecError::Malformed(format!(
                "{} bytes after payload",
                remaining as u64 - payload_len
            )));
        }
        Ok(EncodedBlock {
            header: BlockHeader {
                format_version,
                layer_index,
                bit_depth,
                shape,
                v_min,
                v_max,
                passthrough: flags & FLAG_PASSTHROUGH != 0,
                symbol_count,
                code,
            },
            payload: bytes[r.pos..].to_vec(),
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> CodecResult<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CodecError::TruncatedHeader)?;
        let s = self.bytes.get(self.pos..end).ok_or(CodecError::TruncatedHeader)?;
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> CodecResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> CodecResult<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> CodecResult<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> CodecResult<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Symbol frequencies over the full `2^c` alphabet.
fn histogram(qm: &QuantizedMap) -> Vec<u64> {
    let mut freq = vec![0u64; 1usize << qm.bit_depth];
    for &s in &qm.symbols {
        freq[s as usize] += 1;
    }
    freq
}

/// Huffman code lengths for `freq`, ties broken on symbol value. Symbols
/// with zero frequency get length 0. Needs at least two used symbols.
fn huffman_lengths(freq: &[u64]) -> Vec<u8> {
    let n = freq.len();
    let mut weights: Vec<u64> = freq.to_vec();
    loop {
        let lengths = unlimited_lengths(&weights);
        if lengths.iter().all(|&l| l <= MAX_CODE_LENGTH as u32) {
            return lengths.into_iter().map(|l| l as u8).collect();
        }
        // Flatten the distribution until the deepest leaf fits.
        for w in weights.iter_mut().filter(|w| **w > 0) {
            *w = (*w >> 1).max(1);
        }
        debug_assert_eq!(weights.len(), n);
    }
}

fn unlimited_lengths(freq: &[u64]) -> Vec<u32> {
    let n = freq.len();
    // Node ids: leaves are symbol values, internal nodes follow from n.
    let mut parent: Vec<usize> = vec![usize::MAX; 2 * n];
    let mut heap: BinaryHeap<Reverse<(u64, usize)>> = freq
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(s, &f)| Reverse((f, s)))
        .collect();
    let mut next = n;
    while heap.len() > 1 {
        let Reverse((fa, a)) = heap.pop().unwrap();
        let Reverse((fb, b)) = heap.pop().unwrap();
        parent[a] = next;
        parent[b] = next;
        heap.push(Reverse((fa + fb, next)));
        next += 1;
    }
    // Internal nodes are created in order, so a parent always has a larger
    // id than its children: resolve depths from the root downwards.
    let mut depth = vec![0u32; next];
    for id in (0..next).rev() {
        if parent[id] != usize::MAX {
            depth[id] = depth[parent[id]] + 1;
        }
    }
    (0..n).map(|s| if freq[s] > 0 { depth[s] } else { 0 }).collect()
}

/// Canonical codewords for a length table: symbols ordered by (length,
/// value), consecutive codes within a length.
fn canonical_codes(lengths: &[u8]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..lengths.len()).filter(|&s| lengths[s] > 0).collect();
    order.sort_by_key(|&s| (lengths[s], s));
    let mut codes = vec![0u64; lengths.len()];
    let mut code = 0u64;
    let mut prev_len = 0u8;
    for s in order {
        let len = lengths[s];
        code <<= len - prev_len;
        codes[s] = code;
        code += 1;
        prev_len = len;
    }
    codes
}

struct CodePlan {
    code: CodeTable,
    payload_bits: u64,
}

fn plan_code(qm: &QuantizedMap) -> crate::Result<CodePlan> {
    if qm.bit_depth > MAX_CODEC_BIT_DEPTH {
        return Err(CodecError::AlphabetTooLarge(qm.bit_depth).into());
    }
    qm.validate()?;
    let freq = histogram(qm);
    let mut used = freq.iter().enumerate().filter(|(_, &f)| f > 0);
    let first = used.next().map(|(s, _)| s as u32);
    if used.next().is_none() {
        let symbol = first.ok_or_else(|| {
            crate::Error::Dimension("cannot encode an empty map".into())
        })?;
        return Ok(CodePlan {
            code: CodeTable::Single(symbol),
            payload_bits: 0,
        });
    }
    let lengths = huffman_lengths(&freq);
    let payload_bits = freq
        .iter()
        .zip(&lengths)
        .map(|(&f, &l)| f * u64::from(l))
        .sum();
    Ok(CodePlan {
        code: CodeTable::Lengths(lengths),
        payload_bits,
    })
}

fn make_header(qm: &QuantizedMap, layer_index: u32, code: CodeTable) -> BlockHeader {
    BlockHeader {
        format_version: FORMAT_VERSION,
        layer_index,
        bit_depth: qm.bit_depth,
        shape: qm.shape.iter().map(|&d| d as u32).collect(),
        v_min: qm.v_min,
        v_max: qm.v_max,
        passthrough: qm.passthrough,
        symbol_count: qm.symbols.len() as u64,
        code,
    }
}

pub fn encode(qm: &QuantizedMap, layer_index: u32) -> crate::Result<EncodedBlock> {
    if qm.shape.len() > usize::from(u8::MAX) || qm.shape.iter().any(|&d| d > u32::MAX as usize) {
        return Err(CodecError::Malformed("shape does not fit the block header".into()).into());
    }
    let plan = plan_code(qm)?;
    let payload = match &plan.code {
        CodeTable::Single(_) => Vec::new(),
        CodeTable::Lengths(lengths) => {
            let codes = canonical_codes(lengths);
            let mut w = BitWriter::with_capacity(plan.payload_bits.div_ceil(8) as usize);
            for &s in &qm.symbols {
                w.write(codes[s as usize], lengths[s as usize]);
            }
            w.finish()
        }
    };
    debug_assert_eq!(payload.len() as u64, plan.payload_bits.div_ceil(8));
    Ok(EncodedBlock {
        header: make_header(qm, layer_index, plan.code),
        payload,
    })
}

/// Byte length of `encode(qm, _).to_bytes()`, computed from symbol counts
/// without packing the payload.
pub fn encoded_size(qm: &QuantizedMap) -> crate::Result<u64> {
    let plan = plan_code(qm)?;
    let header = header_len(qm.shape.len(), &plan.code) as u64;
    Ok(header + plan.payload_bits.div_ceil(8))
}

pub fn decode(block: &EncodedBlock) -> CodecResult<QuantizedMap> {
    let h = &block.header;
    if h.format_version != FORMAT_VERSION {
        return Err(CodecError::UnsupportedVersion(h.format_version));
    }
    if h.bit_depth == 0 || h.bit_depth > MAX_CODEC_BIT_DEPTH {
        return Err(CodecError::Malformed(format!("bit depth {}", h.bit_depth)));
    }
    let expected = h
        .shape
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(u64::from(d)))
        .ok_or_else(|| CodecError::Malformed("shape overflows".into()))?;
    if expected != h.symbol_count {
        return Err(CodecError::SymbolCountMismatch {
            declared: h.symbol_count,
            expected,
        });
    }
    if !(h.v_min.is_finite() && h.v_max.is_finite() && h.v_min <= h.v_max) {
        return Err(CodecError::Malformed("invalid value range".into()));
    }
    let count = usize::try_from(h.symbol_count)
        .map_err(|_| CodecError::Malformed("symbol count too large".into()))?;
    let alphabet = 1usize << h.bit_depth;

    let symbols = match &h.code {
        CodeTable::Single(s) => {
            if *s as usize >= alphabet {
                return Err(CodecError::InvalidCode(format!(
                    "symbol {s} outside {}-bit alphabet",
                    h.bit_depth
                )));
            }
            if !block.payload.is_empty() {
                return Err(CodecError::Malformed("single-symbol block carries a payload".into()));
            }
            vec![*s; count]
        }
        CodeTable::Lengths(lengths) => {
            if lengths.len() != alphabet {
                return Err(CodecError::InvalidCode(format!(
                    "{} code lengths for a {alphabet}-symbol alphabet",
                    lengths.len()
                )));
            }
            let decoder = CanonicalDecoder::new(lengths)?;
            let mut reader = BitReader::new(&block.payload);
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                out.push(decoder.next(&mut reader)?);
            }
            let used = reader.bits_consumed().div_ceil(8);
            if used != block.payload.len() as u64 {
                return Err(CodecError::Malformed(format!(
                    "{} bytes after the last codeword",
                    block.payload.len() as u64 - used
                )));
            }
            out
        }
    };

    Ok(QuantizedMap {
        shape: h.shape.iter().map(|&d| d as usize).collect(),
        bit_depth: h.bit_depth,
        v_min: h.v_min,
        v_max: h.v_max,
        passthrough: h.passthrough,
        symbols,
    })
}

struct BitWriter {
    out: Vec<u8>,
    acc: u64,
    nbits: u32,
}

impl BitWriter {
    fn with_capacity(n: usize) -> Self {
        BitWriter {
            out: Vec::with_capacity(n),
            acc: 0,
            nbits: 0,
        }
    }

    fn write(&mut self, code: u64, len: u8) {
        // nbits < 8 on entry, so at most 39 live bits.
        self.acc = (self.acc << len) | code;
        self.nbits += u32::from(len);
        while self.nbits >= 8 {
            self.nbits -= 8;
            self.out.push((self.acc >> self.nbits) as u8);
        }
        self.acc &= (1u64 << self.nbits) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.nbits > 0 {
            self.out.push((self.acc << (8 - self.nbits)) as u8);
        }
        self.out
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    bit: u64,
}

impl<'a> BitReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        BitReader { bytes, bit: 0 }
    }

    fn next_bit(&mut self) -> CodecResult<u64> {
        let byte = *self
            .bytes
            .get((self.bit / 8) as usize)
            .ok_or(CodecError::TruncatedPayload)?;
        let b = (byte >> (7 - (self.bit % 8))) & 1;
        self.bit += 1;
        Ok(u64::from(b))
    }

    fn bits_consumed(&self) -> u64 {
        self.bit
    }
}

struct CanonicalDecoder {
    /// Number of codes of each length, index 0 unused.
    counts: [u64; MAX_CODE_LENGTH as usize + 1],
    /// Symbols ordered by (length, value).
    sorted: Vec<u32>,
    max_len: usize,
}

impl CanonicalDecoder {
    fn new(lengths: &[u8]) -> CodecResult<Self> {
        let mut counts = [0u64; MAX_CODE_LENGTH as usize + 1];
        for &l in lengths {
            if l > MAX_CODE_LENGTH {
                return Err(CodecError::InvalidCode(format!("code length {l} exceeds {MAX_CODE_LENGTH}")));
            }
            counts[l as usize] += 1;
        }
        // Kraft sum scaled by 2^32.
        let kraft: u128 = (1..=MAX_CODE_LENGTH as usize)
            .map(|l| u128::from(counts[l]) << (MAX_CODE_LENGTH as usize - l))
            .sum();
        if kraft > 1u128 << MAX_CODE_LENGTH {
            return Err(CodecError::InvalidCode("Kraft sum exceeds 1".into()));
        }
        let mut sorted: Vec<u32> = (0..lengths.len() as u32).filter(|&s| lengths[s as usize] > 0).collect();
        if sorted.is_empty() {
            return Err(CodecError::InvalidCode("empty code".into()));
        }
        sorted.sort_by_key(|&s| (lengths[s as usize], s));
        let max_len = lengths.iter().copied().max().unwrap_or(0) as usize;
        Ok(CanonicalDecoder {
            counts,
            sorted,
            max_len,
        })
    }

    fn next(&self, r: &mut BitReader<'_>) -> CodecResult<u32> {
        let mut code = 0u64;
        let mut first = 0u64;
        let mut index = 0u64;
        for len in 1..=self.max_len {
            code |= r.next_bit()?;
            let count = self.counts[len];
            if code - first < count {
                return Ok(self.sorted[(index + code - first) as usize]);
            }
            index += count;
            first = (first + count) << 1;
            code <<= 1;
        }
        Err(CodecError::InvalidCode("codeword not in table".into()))
    }
}
