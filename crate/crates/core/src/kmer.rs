//! Packed kmer representation, canonicalization and rolling windows.
//!
//! Bases are encoded on 2 bits with the fixed table A=0, C=1, G=2, T=3; the
//! first base of a kmer sits in the most significant position, so integer
//! comparison of packed words equals lexicographic comparison of the strings.
//! The code table is part of the container format and must not change.
//!
//! Any input byte outside `{A,C,G,T}` is normalized to `N` at parse time.
//! `N` can appear in read text and in the bifurcation/error streams, but never
//! inside a packed kmer: windows covering an `N` are invalid.

use crate::error::{Error, Result};

/// Highest supported kmer length: 2k bits must fit a u128 with room for k=63.
pub const MAX_K: usize = 63;

pub const BASE_A: u8 = b'A';
pub const BASE_C: u8 = b'C';
pub const BASE_G: u8 = b'G';
pub const BASE_T: u8 = b'T';
pub const BASE_N: u8 = b'N';

/// ACGT in 2-bit code order.
pub const BASES: [u8; 4] = [BASE_A, BASE_C, BASE_G, BASE_T];

/// 2-bit code for a base, `None` for anything else (including N).
#[inline]
pub fn base_code(b: u8) -> Option<u8> {
    match b {
        BASE_A => Some(0),
        BASE_C => Some(1),
        BASE_G => Some(2),
        BASE_T => Some(3),
        _ => None,
    }
}

/// Base for a 2-bit code.
#[inline]
pub fn code_base(code: u8) -> u8 {
    BASES[(code & 3) as usize]
}

/// Watson-Crick complement; N maps to N.
#[inline]
pub fn complement(b: u8) -> u8 {
    match b {
        BASE_A => BASE_T,
        BASE_C => BASE_G,
        BASE_G => BASE_C,
        BASE_T => BASE_A,
        _ => BASE_N,
    }
}

/// Reverse-complement of a byte sequence over {A,C,G,T,N}.
pub fn revcomp_bytes(seq: &[u8]) -> Vec<u8> {
    seq.iter().rev().map(|&b| complement(b)).collect()
}

/// Index of a nucleotide in the 5-symbol alphabet used by the entropy models.
#[inline]
pub fn nt_symbol(b: u8) -> usize {
    match b {
        BASE_A => 0,
        BASE_C => 1,
        BASE_G => 2,
        BASE_T => 3,
        _ => 4,
    }
}

/// Inverse of [`nt_symbol`].
#[inline]
pub fn symbol_nt(sym: usize) -> u8 {
    match sym {
        0 => BASE_A,
        1 => BASE_C,
        2 => BASE_G,
        3 => BASE_T,
        _ => BASE_N,
    }
}

/// A fixed-length DNA word packed 2 bits per base.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Kmer {
    bits: u128,
    k: u8,
}

impl Kmer {
    /// Packs an ACGT string of length 1..=63. Rejects N and anything else.
    pub fn pack(s: &[u8]) -> Result<Kmer> {
        if s.is_empty() || s.len() > MAX_K {
            return Err(Error::InvalidParam(format!(
                "kmer length {} out of range 1..={MAX_K}",
                s.len()
            )));
        }
        let mut bits: u128 = 0;
        for &b in s {
            let code = base_code(b).ok_or_else(|| {
                Error::InvalidParam(format!("kmer contains non-ACGT byte {:?}", b as char))
            })?;
            bits = (bits << 2) | code as u128;
        }
        Ok(Kmer { bits, k: s.len() as u8 })
    }

    /// Rebuilds a kmer from its packed bits.
    pub fn from_bits(bits: u128, k: usize) -> Kmer {
        debug_assert!((1..=MAX_K).contains(&k));
        debug_assert_eq!(bits & !low_mask(k), 0);
        Kmer { bits, k: k as u8 }
    }

    #[inline]
    pub fn bits(&self) -> u128 {
        self.bits
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k as usize
    }

    /// The ACGT string this kmer packs.
    pub fn unpack(&self) -> Vec<u8> {
        let k = self.k();
        let mut out = vec![0u8; k];
        let mut bits = self.bits;
        for i in (0..k).rev() {
            out[i] = code_base((bits & 3) as u8);
            bits >>= 2;
        }
        out
    }

    /// Reverse-complement; an involution.
    pub fn revcomp(&self) -> Kmer {
        let k = self.k();
        let mut bits = self.bits;
        let mut out: u128 = 0;
        for _ in 0..k {
            out = (out << 2) | ((bits & 3) ^ 3);
            bits >>= 2;
        }
        Kmer { bits: out, k: self.k }
    }

    /// The smaller of this kmer and its reverse complement.
    ///
    /// Canonical kmers identify graph nodes strand-independently: reads from
    /// opposite strands of the same locus share canonical kmers. With odd k no
    /// kmer equals its own reverse complement.
    pub fn canonical(&self) -> Kmer {
        let rc = self.revcomp();
        if rc.bits < self.bits {
            rc
        } else {
            *self
        }
    }

    pub fn is_canonical(&self) -> bool {
        self.bits <= self.revcomp().bits
    }
}

impl std::fmt::Debug for Kmer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Kmer({})", String::from_utf8_lossy(&self.unpack()))
    }
}

impl std::fmt::Display for Kmer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", String::from_utf8_lossy(&self.unpack()))
    }
}

/// Mask selecting the low 2k bits.
#[inline]
pub fn low_mask(k: usize) -> u128 {
    if k >= 64 {
        u128::MAX
    } else {
        (1u128 << (2 * k)) - 1
    }
}

/// Validates a kmer length for pipeline use: odd and within range, so kmers
/// fit two 64-bit words and palindromes are impossible.
pub fn validate_k(k: usize) -> Result<()> {
    if !(1..=MAX_K).contains(&k) {
        return Err(Error::InvalidParam(format!("k={k} out of range 1..={MAX_K}")));
    }
    if k.is_multiple_of(2) {
        return Err(Error::InvalidParam(format!("k={k} must be odd")));
    }
    Ok(())
}

/// Rolling window over a read, maintaining the packed forward and
/// reverse-complement words plus a bitmask of N positions.
///
/// `N` contributes code 0 to the packed words; the `n_mask` bit tracks where
/// it is so packed values are only exposed for N-free (sub)windows. Using a
/// fixed code keeps the packed garbage deterministic, which matters because
/// the decoder replays the exact same windows as the encoder.
#[derive(Clone)]
pub struct KmerWindow {
    k: usize,
    mask: u128,
    rc_shift: u32,
    fwd: u128,
    rc: u128,
    /// Bit i set = the base i positions from the newest is not ACGT.
    n_mask: u64,
    filled: usize,
}

impl KmerWindow {
    pub fn new(k: usize) -> KmerWindow {
        debug_assert!((1..=MAX_K).contains(&k));
        KmerWindow {
            k,
            mask: low_mask(k),
            rc_shift: 2 * (k as u32 - 1),
            fwd: 0,
            rc: 0,
            n_mask: 0,
            filled: 0,
        }
    }

    /// Window initialized from exactly k bytes.
    pub fn from_bytes(k: usize, bytes: &[u8]) -> KmerWindow {
        debug_assert_eq!(bytes.len(), k);
        let mut w = KmerWindow::new(k);
        for &b in bytes {
            w.push(b);
        }
        w
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    /// Slides the window one base to the right.
    #[inline]
    pub fn push(&mut self, b: u8) {
        let (code, is_n) = match base_code(b) {
            Some(c) => (c, 0u64),
            None => (0, 1u64),
        };
        self.fwd = ((self.fwd << 2) | code as u128) & self.mask;
        self.rc = (self.rc >> 2) | (((code ^ 3) as u128) << self.rc_shift);
        self.n_mask = ((self.n_mask << 1) | is_n) & ((1u64 << self.k) - 1);
        if self.filled < self.k {
            self.filled += 1;
        }
    }

    /// True once k bases have been pushed.
    #[inline]
    pub fn is_full(&self) -> bool {
        self.filled == self.k
    }

    /// Any N among the last k bases?
    #[inline]
    pub fn has_n(&self) -> bool {
        self.n_mask != 0
    }

    /// Any N among the last k-1 bases (the suffix shared by all successors)?
    #[inline]
    pub fn suffix_has_n(&self) -> bool {
        self.n_mask & ((1u64 << (self.k - 1)) - 1) != 0
    }

    /// Packed forward word. Only meaningful when full and N-free.
    #[inline]
    pub fn fwd_bits(&self) -> u128 {
        self.fwd
    }

    /// Packed reverse-complement word.
    #[inline]
    pub fn rc_bits(&self) -> u128 {
        self.rc
    }

    /// Canonical packed word (min of forward and reverse complement).
    #[inline]
    pub fn canonical_bits(&self) -> u128 {
        self.fwd.min(self.rc)
    }

    /// True when the forward orientation is the canonical one.
    #[inline]
    pub fn fwd_is_canonical(&self) -> bool {
        self.fwd <= self.rc
    }

    /// Canonical packed word of `suffix + base(code)`, the candidate
    /// successor window. Only meaningful when `!suffix_has_n()`.
    #[inline]
    pub fn candidate_canonical(&self, code: u8) -> u128 {
        let f = ((self.fwd << 2) | code as u128) & self.mask;
        let r = (self.rc >> 2) | (((code ^ 3) as u128) << self.rc_shift);
        f.min(r)
    }
}

/// Iterates the kmers of a read: yields `(position, Some(canonical_bits))`
/// for each N-free window and `(position, None)` for windows covering an N.
/// A read shorter than k yields nothing.
pub fn kmers_of(read: &[u8], k: usize) -> impl Iterator<Item = (usize, Option<u128>)> + '_ {
    let mut window = KmerWindow::new(k);
    let mut pushed = 0usize;
    read.iter().filter_map(move |&b| {
        window.push(b);
        pushed += 1;
        if pushed < k {
            None
        } else {
            let pos = pushed - k;
            let item = if window.has_n() {
                None
            } else {
                Some(window.canonical_bits())
            };
            Some((pos, item))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_kmer_string(len: usize, seed: u64) -> Vec<u8> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| BASES[rng.gen_range(0..4)]).collect()
    }

    /// String-level reverse-complement oracle.
    fn revcomp_oracle(s: &[u8]) -> Vec<u8> {
        s.iter()
            .rev()
            .map(|&b| match b {
                b'A' => b'T',
                b'C' => b'G',
                b'G' => b'C',
                b'T' => b'A',
                _ => b'N',
            })
            .collect()
    }

    #[test]
    fn pack_all_a_is_zero() {
        let s = vec![b'A'; 31];
        let k = Kmer::pack(&s).unwrap();
        assert_eq!(k.bits(), 0);
        assert_eq!(k.unpack(), s);
    }

    #[test]
    fn pack_acgt_is_code_table() {
        let k = Kmer::pack(b"ACGT").unwrap();
        assert_eq!(k.bits(), 0b00_01_10_11);
    }

    #[test]
    fn pack_rejects_n_and_bad_len() {
        assert!(Kmer::pack(b"ACGN").is_err());
        assert!(Kmer::pack(b"").is_err());
        assert!(Kmer::pack(&[b'A'; 64]).is_err());
    }

    #[test]
    fn pack_unpack_round_trip_random() {
        for i in 0..1000 {
            let len = 1 + (i % MAX_K);
            let s = random_kmer_string(len, i as u64);
            let k = Kmer::pack(&s).unwrap();
            assert_eq!(k.unpack(), s);
        }
    }

    #[test]
    fn revcomp_of_poly_a_is_poly_t() {
        let k = Kmer::pack(&[b'A'; 21]).unwrap();
        assert_eq!(k.revcomp().unpack(), vec![b'T'; 21]);
    }

    #[test]
    fn revcomp_matches_string_oracle() {
        let k = Kmer::pack(b"ACGTA").unwrap();
        assert_eq!(k.revcomp().unpack(), b"TACGT".to_vec());
        for i in 0..1000u64 {
            let s = random_kmer_string(1 + (i as usize % MAX_K), 7000 + i);
            let k = Kmer::pack(&s).unwrap();
            assert_eq!(k.revcomp().unpack(), revcomp_oracle(&s));
            assert_eq!(k.revcomp().revcomp(), k);
        }
    }

    #[test]
    fn canonical_laws() {
        for i in 0..500u64 {
            let s = random_kmer_string(31, 9000 + i);
            let k = Kmer::pack(&s).unwrap();
            let c = k.canonical();
            assert_eq!(c.canonical(), c);
            assert_eq!(k.revcomp().canonical(), c);
            assert!(c.bits() <= k.bits());
            // odd k: palindromes are impossible
            assert_ne!(k.revcomp(), k);
        }
    }

    #[test]
    fn packing_is_order_preserving() {
        // lexicographic order of strings == integer order of packed words
        let mut strings: Vec<Vec<u8>> = (0..200u64).map(|i| random_kmer_string(9, i)).collect();
        strings.sort();
        let packed: Vec<u128> = strings.iter().map(|s| Kmer::pack(s).unwrap().bits()).collect();
        let mut sorted = packed.clone();
        sorted.sort();
        assert_eq!(packed, sorted);
    }

    #[test]
    fn kmers_of_counts_and_n_handling() {
        let read = random_kmer_string(100, 42);
        assert_eq!(kmers_of(&read, 31).count(), 70);

        let entries: Vec<_> = kmers_of(b"ACGNACG", 3).collect();
        assert_eq!(entries.len(), 5);
        let valid: Vec<usize> = entries
            .iter()
            .filter(|(_, k)| k.is_some())
            .map(|(p, _)| *p)
            .collect();
        assert_eq!(valid, vec![0, 4]);

        let short = random_kmer_string(30, 43);
        assert_eq!(kmers_of(&short, 31).count(), 0);
    }

    #[test]
    fn kmers_of_matches_naive_packing() {
        let read = random_kmer_string(200, 77);
        for k in [1usize, 3, 15, 31, 33, 63] {
            let rolled: Vec<u128> = kmers_of(&read, k).map(|(_, b)| b.unwrap()).collect();
            let naive: Vec<u128> = (0..=read.len() - k)
                .map(|i| Kmer::pack(&read[i..i + k]).unwrap().canonical().bits())
                .collect();
            assert_eq!(rolled, naive, "k={k}");
        }
    }

    #[test]
    fn window_n_tracking() {
        let mut w = KmerWindow::new(5);
        for &b in b"ACGTN" {
            w.push(b);
        }
        assert!(w.is_full());
        assert!(w.has_n());
        assert!(w.suffix_has_n());
        // slide until the N is the oldest base: suffix becomes clean
        for _ in 0..4 {
            w.push(b'A');
        }
        assert!(w.has_n());
        assert!(!w.suffix_has_n());
        w.push(b'A');
        assert!(!w.has_n());
    }

    proptest! {
        #[test]
        fn canonical_multiset_invariant_under_revcomp(read in proptest::collection::vec(0u8..4, 31..200)) {
            let read: Vec<u8> = read.into_iter().map(code_base).collect();
            let k = 31;
            let mut fwd: Vec<u128> = kmers_of(&read, k).filter_map(|(_, b)| b).collect();
            let mut rev: Vec<u128> = kmers_of(&revcomp_bytes(&read), k).filter_map(|(_, b)| b).collect();
            fwd.sort();
            rev.sort();
            prop_assert_eq!(fwd, rev);
        }

        #[test]
        fn pack_round_trip_prop(codes in proptest::collection::vec(0u8..4, 1..=63)) {
            let s: Vec<u8> = codes.into_iter().map(code_base).collect();
            let k = Kmer::pack(&s).unwrap();
            prop_assert_eq!(k.unpack(), s);
        }
    }
}
