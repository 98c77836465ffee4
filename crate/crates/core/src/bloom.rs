//! Probabilistic de Bruijn graph: a Bloom filter over solid canonical kmers.
//!
//! Node membership is a filter query on the canonical form; edges are never
//! stored, a node's successors are found by querying the four possible
//! extensions. False positives only add spurious branching that costs a few
//! extra bifurcation symbols per read; they never break losslessness, so graph
//! exactness is deliberately not a goal.
//!
//! The filter uses double hashing (two 64-bit mixes of the packed kmer,
//! positions `h1 + i*h2 mod m`), which preserves the `f^r` false-positive
//! model and serializes as just two seeds.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::kmer::KmerWindow;

/// Base of the Bloom false-positive model: FPR ≈ `FPR_BASE^r` where r is the
/// number of filter bits per inserted element.
pub const FPR_BASE: f64 = 0.6185334270122459; // 0.5^ln(2)

/// Fixed default seed material for the hash family. Hashing is fully
/// deterministic across runs and platforms; the seeds still travel in the
/// serialized image so the format does not depend on these constants.
pub const DEFAULT_SEEDS: [u64; 2] = [0x9e37_79b9_7f4a_7c15, 0xc2b2_ae3d_27d4_eb4f];

const BLOOM_MAGIC: &[u8; 4] = b"BLMF";

/// Bits of filter per solid kmer minimizing total compressed cost
/// `r*G + 6*G*D*f^r` (filter bits plus expected false-bifurcation bits),
/// given the mean solid-kmer abundance `d`. Clamped to `[4, 20]`.
pub fn optimal_bits_per_kmer(d: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "mean solid abundance must be positive, got {d}"
        )));
    }
    let ln_f = FPR_BASE.ln();
    let arg = -1.0 / (6.0 * d * ln_f);
    let r = if arg > 0.0 && arg < 1.0 {
        arg.ln() / ln_f
    } else {
        // degenerate d: cost is monotone over the clamp range
        4.0
    };
    Ok(r.clamp(4.0, 20.0))
}

#[inline]
fn mix64(mut x: u64) -> u64 {
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^= x >> 31;
    x
}

#[inline]
fn hash_kmer(bits: u128, seed: u64) -> u64 {
    let lo = bits as u64;
    let hi = (bits >> 64) as u64;
    mix64(seed ^ lo ^ mix64(hi.wrapping_add(seed).wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Bloom filter over packed canonical kmers.
#[derive(Clone, Debug)]
pub struct BloomFilter {
    words: Vec<u64>,
    m_bits: u64,
    n_hashes: u32,
    seeds: [u64; 2],
}

impl BloomFilter {
    /// Filter with `ceil(bits_per_item * n_items)` bits (rounded up to a
    /// multiple of 64) and `max(1, round(bits_per_item * ln 2))` hashes.
    pub fn for_items(n_items: usize, bits_per_item: f64) -> Result<BloomFilter> {
        if n_items == 0 {
            return Err(Error::InvalidParam("bloom filter needs at least one item".into()));
        }
        if !(1.0..=64.0).contains(&bits_per_item) {
            return Err(Error::InvalidParam(format!(
                "bits per kmer {bits_per_item} out of range [1, 64]"
            )));
        }
        let m = (bits_per_item * n_items as f64).ceil() as u64;
        let m = m.div_ceil(64) * 64;
        let h = (bits_per_item * std::f64::consts::LN_2).round().max(1.0) as u32;
        Ok(BloomFilter::with_params(m, h, DEFAULT_SEEDS))
    }

    pub fn with_params(m_bits: u64, n_hashes: u32, seeds: [u64; 2]) -> BloomFilter {
        debug_assert_eq!(m_bits % 64, 0);
        BloomFilter {
            words: vec![0u64; (m_bits / 64) as usize],
            m_bits,
            n_hashes,
            seeds,
        }
    }

    /// Zero-bit filter for empty graphs; every query answers false.
    pub fn empty() -> BloomFilter {
        BloomFilter {
            words: Vec::new(),
            m_bits: 0,
            n_hashes: 1,
            seeds: DEFAULT_SEEDS,
        }
    }

    pub fn m_bits(&self) -> u64 {
        self.m_bits
    }

    pub fn n_hashes(&self) -> u32 {
        self.n_hashes
    }

    /// Size of the bit array in bytes.
    pub fn array_bytes(&self) -> usize {
        self.words.len() * 8
    }

    pub fn insert(&mut self, bits: u128) {
        if self.m_bits == 0 {
            return;
        }
        let h1 = hash_kmer(bits, self.seeds[0]);
        let h2 = hash_kmer(bits, self.seeds[1]) | 1;
        for i in 0..self.n_hashes as u64 {
            let pos = h1.wrapping_add(i.wrapping_mul(h2)) % self.m_bits;
            self.words[(pos / 64) as usize] |= 1u64 << (pos % 64);
        }
    }

    pub fn contains(&self, bits: u128) -> bool {
        if self.m_bits == 0 {
            return false;
        }
        let h1 = hash_kmer(bits, self.seeds[0]);
        let h2 = hash_kmer(bits, self.seeds[1]) | 1;
        for i in 0..self.n_hashes as u64 {
            let pos = h1.wrapping_add(i.wrapping_mul(h2)) % self.m_bits;
            if self.words[(pos / 64) as usize] & (1u64 << (pos % 64)) == 0 {
                return false;
            }
        }
        true
    }

    /// Image layout: magic, k, m (bits), h, seed material, checksum, then the
    /// bit array as little-endian 64-bit words. The checksum covers the header
    /// fields after the magic plus the bit array.
    pub fn serialize_into<W: Write>(&self, k: u16, w: &mut W) -> Result<()> {
        let mut header = Vec::with_capacity(30);
        header.extend_from_slice(&k.to_le_bytes());
        header.extend_from_slice(&self.m_bits.to_le_bytes());
        header.extend_from_slice(&self.n_hashes.to_le_bytes());
        header.extend_from_slice(&self.seeds[0].to_le_bytes());
        header.extend_from_slice(&self.seeds[1].to_le_bytes());

        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        for word in &self.words {
            crc.update(&word.to_le_bytes());
        }

        w.write_all(BLOOM_MAGIC)?;
        w.write_all(&header)?;
        w.write_all(&crc.finalize().to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    /// Serialized size in bytes.
    pub fn image_bytes(&self) -> u64 {
        4 + 30 + 4 + self.words.len() as u64 * 8
    }

    pub fn deserialize_from<R: Read>(r: &mut R) -> Result<(u16, BloomFilter)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != BLOOM_MAGIC {
            return Err(Error::Corrupt("bad bloom image magic".into()));
        }
        let mut header = [0u8; 30];
        r.read_exact(&mut header).map_err(truncated)?;
        let k = u16::from_le_bytes(header[0..2].try_into().unwrap());
        let m_bits = u64::from_le_bytes(header[2..10].try_into().unwrap());
        let n_hashes = u32::from_le_bytes(header[10..14].try_into().unwrap());
        let seed0 = u64::from_le_bytes(header[14..22].try_into().unwrap());
        let seed1 = u64::from_le_bytes(header[22..30].try_into().unwrap());
        if m_bits % 64 != 0 || m_bits / 64 > (1 << 40) {
            return Err(Error::Corrupt(format!("implausible bloom size {m_bits} bits")));
        }
        let mut stored_crc = [0u8; 4];
        r.read_exact(&mut stored_crc).map_err(truncated)?;

        let mut words = vec![0u64; (m_bits / 64) as usize];
        let mut crc = crc32fast::Hasher::new();
        crc.update(&header);
        let mut buf = [0u8; 8];
        for word in &mut words {
            r.read_exact(&mut buf).map_err(truncated)?;
            crc.update(&buf);
            *word = u64::from_le_bytes(buf);
        }
        if crc.finalize() != u32::from_le_bytes(stored_crc) {
            return Err(Error::ChecksumMismatch);
        }
        Ok((
            k,
            BloomFilter {
                words,
                m_bits,
                n_hashes,
                seeds: [seed0, seed1],
            },
        ))
    }
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Truncated
    } else {
        Error::Io(e)
    }
}

/// Membership backend for the graph. Queries take the canonical packed word.
pub trait NodeSet {
    fn contains_node(&self, canonical_bits: u128) -> bool;
}

impl NodeSet for BloomFilter {
    #[inline]
    fn contains_node(&self, canonical_bits: u128) -> bool {
        self.contains(canonical_bits)
    }
}

/// Exact backend used as a zero-false-positive stand-in by oracle tests.
#[derive(Default)]
pub struct ExactNodeSet {
    set: HashSet<u128>,
}

impl ExactNodeSet {
    pub fn new() -> ExactNodeSet {
        ExactNodeSet { set: HashSet::new() }
    }

    pub fn insert(&mut self, canonical_bits: u128) {
        self.set.insert(canonical_bits);
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }
}

impl FromIterator<u128> for ExactNodeSet {
    fn from_iter<T: IntoIterator<Item = u128>>(iter: T) -> Self {
        ExactNodeSet {
            set: iter.into_iter().collect(),
        }
    }
}

impl NodeSet for ExactNodeSet {
    #[inline]
    fn contains_node(&self, canonical_bits: u128) -> bool {
        self.set.contains(&canonical_bits)
    }
}

/// Up to four successor bases of a graph node, in fixed A,C,G,T order.
#[derive(Clone, Copy, Default, PartialEq, Eq, Debug)]
pub struct Successors {
    bases: [u8; 4],
    len: u8,
}

impl Successors {
    #[inline]
    pub fn push(&mut self, base: u8) {
        self.bases[self.len as usize] = base;
        self.len += 1;
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len as usize
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Only successor; meaningful when `len() == 1`.
    #[inline]
    pub fn single(&self) -> u8 {
        self.bases[0]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.bases[..self.len as usize]
    }
}

/// A de Bruijn graph whose node set lives in a membership backend.
pub struct Dbg<S> {
    nodes: S,
    k: usize,
}

impl<S: NodeSet> Dbg<S> {
    pub fn new(nodes: S, k: usize) -> Dbg<S> {
        Dbg { nodes, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn backend(&self) -> &S {
        &self.nodes
    }

    pub fn into_backend(self) -> S {
        self.nodes
    }

    /// Membership of the window's canonical form. Windows covering an N are
    /// never nodes.
    #[inline]
    pub fn contains_window(&self, w: &KmerWindow) -> bool {
        !w.has_n() && self.nodes.contains_node(w.canonical_bits())
    }

    /// Bases b (in A,C,G,T order) such that `canonical(suffix(w)+b)` is a
    /// node. Empty when the suffix covers an N: such extensions can never be
    /// nodes.
    #[inline]
    pub fn successors(&self, w: &KmerWindow) -> Successors {
        let mut out = Successors::default();
        if w.suffix_has_n() {
            return out;
        }
        for code in 0..4u8 {
            if self.nodes.contains_node(w.candidate_canonical(code)) {
                out.push(crate::kmer::code_base(code));
            }
        }
        out
    }
}
