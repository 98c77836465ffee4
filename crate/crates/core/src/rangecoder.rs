//! Adaptive order-0 range coder.
//!
//! Byte-oriented range coder with 32-bit range and carry propagation through a
//! cached byte, paired with per-context adaptive frequency models. Encoder and
//! decoder stay bit-synchronized as long as both sides drive structurally
//! identical models through the same update sequence; every compressed stream
//! in the container is produced by one encoder instance and a fixed set of
//! models.
//!
//! Integers wider than one symbol (lengths, indices, positions) are encoded as
//! little-endian base-128 varints whose bytes pass through a dedicated
//! 256-symbol byte model.

const TOP: u32 = 1 << 24;

/// Model totals stay below this so `range / total` never collapses to zero.
pub const RESCALE_LIMIT: u32 = 1 << 16;

const INCREMENT: u32 = 32;

/// Adaptive symbol-frequency model. Counts start at one so every symbol stays
/// encodable; on rescale counts are halved with a floor of one.
#[derive(Clone)]
pub struct FrequencyModel {
    counts: Vec<u32>,
    total: u32,
}

impl FrequencyModel {
    pub fn new(alphabet: usize) -> FrequencyModel {
        debug_assert!(alphabet >= 1 && alphabet as u32 <= RESCALE_LIMIT / 2);
        FrequencyModel {
            counts: vec![1; alphabet],
            total: alphabet as u32,
        }
    }

    pub fn alphabet(&self) -> usize {
        self.counts.len()
    }

    fn update(&mut self, sym: usize) {
        self.counts[sym] += INCREMENT;
        self.total += INCREMENT;
        if self.total >= RESCALE_LIMIT {
            self.rescale();
        }
    }

    fn rescale(&mut self) {
        let mut total = 0;
        for c in &mut self.counts {
            *c = (*c + 1) >> 1;
            total += *c;
        }
        self.total = total;
    }

    /// Encodes `sym` and updates the model.
    pub fn encode(&mut self, enc: &mut RangeEncoder, sym: usize) {
        let mut cum = 0u32;
        for &c in &self.counts[..sym] {
            cum += c;
        }
        enc.encode(cum, self.counts[sym], self.total);
        self.update(sym);
    }

    /// Decodes one symbol and updates the model identically to the encoder.
    pub fn decode(&mut self, dec: &mut RangeDecoder) -> usize {
        let target = dec.decode_target(self.total);
        let mut cum = 0u32;
        let mut sym = self.counts.len() - 1;
        for (i, &c) in self.counts.iter().enumerate() {
            if cum + c > target {
                sym = i;
                break;
            }
            cum += c;
        }
        dec.decode_update(cum, self.counts[sym]);
        self.update(sym);
        sym
    }

    #[cfg(test)]
    pub(crate) fn min_count(&self) -> u32 {
        self.counts.iter().copied().min().unwrap()
    }
}

/// Range encoder writing to an in-memory buffer.
///
/// The first output byte is a constant produced by the carry machinery; the
/// decoder skips it. Flushing appends five bytes so any prefix of encoded
/// symbols is decodable from the flushed stream.
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_count: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> RangeEncoder {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_count: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut b = self.cache;
            while self.cache_count > 0 {
                self.out.push(b.wrapping_add(carry));
                b = 0xFF;
                self.cache_count -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_count += 1;
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Narrows the range to the interval `[cum, cum+freq) / total`.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total <= RESCALE_LIMIT);
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Flushes pending state and returns the encoded bytes.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }

    /// Bytes emitted so far (excluding unflushed state).
    pub fn len(&self) -> usize {
        self.out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.out.is_empty()
    }
}

/// Range decoder over a byte slice. Reading past the end yields zero bytes;
/// corruption is detected by the container checksums, not here.
pub struct RangeDecoder<'a> {
    range: u32,
    code: u32,
    input: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> RangeDecoder<'a> {
        let mut d = RangeDecoder {
            range: u32::MAX,
            code: 0,
            input,
            pos: 1, // skip the constant leading byte
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte();
        }
        d
    }

    #[inline]
    fn next_byte(&mut self) -> u32 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b as u32
    }

    /// Cumulative-frequency target for the next symbol.
    fn decode_target(&mut self, total: u32) -> u32 {
        self.range /= total;
        (self.code / self.range).min(total - 1)
    }

    /// Consumes the symbol whose interval is `[cum, cum+freq)`.
    fn decode_update(&mut self, cum: u32, freq: u32) {
        self.code -= cum * self.range;
        self.range *= freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte();
            self.range <<= 8;
        }
    }
}

/// Writes `v` as a little-endian base-128 varint through `model`.
pub fn encode_varint(enc: &mut RangeEncoder, model: &mut FrequencyModel, mut v: u64) {
    loop {
        let byte = (v & 0x7F) as usize;
        v >>= 7;
        if v != 0 {
            model.encode(enc, byte | 0x80);
        } else {
            model.encode(enc, byte);
            break;
        }
    }
}

/// Inverse of [`encode_varint`].
pub fn decode_varint(dec: &mut RangeDecoder, model: &mut FrequencyModel) -> u64 {
    let mut v = 0u64;
    let mut shift = 0u32;
    loop {
        let byte = model.decode(dec) as u64;
        v |= (byte & 0x7F) << shift;
        if byte & 0x80 == 0 || shift >= 63 {
            return v;
        }
        shift += 7;
    }
}

/// Maps signed to unsigned so small magnitudes stay small.
#[inline]
pub fn zigzag(v: i64) -> u64 {
    ((v << 1) ^ (v >> 63)) as u64
}

#[inline]
pub fn unzigzag(v: u64) -> i64 {
    ((v >> 1) as i64) ^ -((v & 1) as i64)
}
