//! First pass over the reads: canonical kmer counting, abundance histogram,
//! solidity-threshold inference and the solid-kmer table.
//!
//! Counting is exact but never holds the full count table in memory. Pass A
//! streams kmer occurrences into disk partitions selected by a hash of the
//! canonical word; pass B counts one partition at a time and keeps only kmers
//! at or above a retain floor (singletons, which dominate with sequencing
//! errors, are dropped unless explicitly requested). Peak memory therefore
//! follows the genome, not the input.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::error::{Error, Result};
use crate::kmer::kmers_of;

/// Abundances above this accumulate in the top bucket; only the low-abundance
/// valley matters for threshold inference.
pub const HISTOGRAM_CAP: u32 = 10_000;

pub const DEFAULT_PARTITIONS: usize = 64;

/// Distinct-kmer counts per abundance: `get(c)` = number of distinct canonical
/// kmers occurring exactly c times (c capped at [`HISTOGRAM_CAP`]).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AbundanceHistogram {
    buckets: Vec<u64>,
}

impl AbundanceHistogram {
    pub fn new() -> AbundanceHistogram {
        AbundanceHistogram {
            buckets: vec![0; HISTOGRAM_CAP as usize],
        }
    }

    pub fn record(&mut self, count: u32) {
        debug_assert!(count >= 1);
        let idx = count.min(HISTOGRAM_CAP) as usize - 1;
        self.buckets[idx] += 1;
    }

    pub fn get(&self, abundance: u32) -> u64 {
        if abundance == 0 || abundance > HISTOGRAM_CAP {
            return 0;
        }
        self.buckets[abundance as usize - 1]
    }

    /// Number of distinct kmers recorded.
    pub fn distinct(&self) -> u64 {
        self.buckets.iter().sum()
    }

    pub fn merge(&mut self, other: &AbundanceHistogram) {
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            *a += b;
        }
    }

    pub fn from_counts<I: IntoIterator<Item = u32>>(counts: I) -> AbundanceHistogram {
        let mut h = AbundanceHistogram::new();
        for c in counts {
            h.record(c);
        }
        h
    }

    fn last_nonzero(&self) -> u32 {
        for c in (1..=HISTOGRAM_CAP).rev() {
            if self.get(c) > 0 {
                return c;
            }
        }
        0
    }
}

/// Infers the solidity threshold from the abundance profile: the first local
/// minimum scanning upward from c=1 (the valley between the sequencing-error
/// peak and the genomic-coverage peak), clamped to `[2, 20]`. Falls back to 3
/// when the profile only decreases over the scanned range.
pub fn infer_t_sol(h: &AbundanceHistogram) -> Result<u32> {
    let last = h.last_nonzero();
    if last == 0 {
        return Err(Error::InvalidParam("empty abundance histogram".into()));
    }
    for c in 1..last {
        if h.get(c + 1) >= h.get(c) && h.get(c + 1) > 0 {
            return Ok(c.clamp(2, 20));
        }
    }
    Ok(3)
}

/// Kmers with at least `t_sol` occurrences, keeping their counts for anchor
/// abundance ranking. The input table must itself retain counts down to
/// `t_sol` or lower.
pub fn solid_kmers(counts: &[(u128, u32)], t_sol: u32) -> HashMap<u128, u32> {
    counts
        .iter()
        .filter(|&&(_, c)| c >= t_sol)
        .copied()
        .collect()
}

/// Arithmetic mean abundance over the solid kmers; sizes the Bloom filter.
pub fn mean_solid_abundance(solid: &HashMap<u128, u32>) -> Result<f64> {
    if solid.is_empty() {
        return Err(Error::InvalidParam("no solid kmers".into()));
    }
    let sum: u64 = solid.values().map(|&c| c as u64).sum();
    Ok(sum as f64 / solid.len() as f64)
}

/// In-memory exact counting for small inputs and test setup.
pub fn count_exact<'a, I>(reads: I, k: usize) -> (HashMap<u128, u32>, AbundanceHistogram)
where
    I: IntoIterator<Item = &'a [u8]>,
{
    let mut map: HashMap<u128, u32> = HashMap::new();
    for read in reads {
        for (_, bits) in kmers_of(read, k) {
            if let Some(bits) = bits {
                *map.entry(bits).or_insert(0) += 1;
            }
        }
    }
    let hist = AbundanceHistogram::from_counts(map.values().copied());
    (map, hist)
}

/// Run-length counts over sorted occurrence records.
fn count_runs<T: Copy + Eq + Into<u128>>(
    records: &[T],
    retain_min: u32,
    hist: &mut AbundanceHistogram,
    distinct: &mut u64,
    occurrences: &mut u64,
) -> Vec<(u128, u32)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < records.len() {
        let bits = records[i];
        let mut j = i + 1;
        while j < records.len() && records[j] == bits {
            j += 1;
        }
        let count = (j - i) as u32;
        hist.record(count);
        *distinct += 1;
        *occurrences += count as u64;
        if count >= retain_min {
            out.push((bits.into(), count));
        }
        i = j;
    }
    out
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

const WRITER_BUF_RECORDS: usize = 4096;

/// Disk-partitioned occurrence sink (pass A). Thread-safe: each worker takes
/// its own [`SpillWriter`]; partition files are append-only behind mutexes.
pub struct SpillCounter {
    k: usize,
    partitions: usize,
    rec_bytes: usize,
    files: Vec<Mutex<File>>,
    _dir: tempfile::TempDir,
}

impl SpillCounter {
    pub fn new(k: usize, partitions: usize, tmp_in: Option<&Path>) -> Result<SpillCounter> {
        debug_assert!(partitions.is_power_of_two());
        let dir = match tmp_in {
            Some(p) => tempfile::Builder::new().prefix("dbgc-count").tempdir_in(p)?,
            None => tempfile::Builder::new().prefix("dbgc-count").tempdir()?,
        };
        let mut files = Vec::with_capacity(partitions);
        for i in 0..partitions {
            let f = File::options()
                .create_new(true)
                .append(true)
                .read(true)
                .open(dir.path().join(format!("part{i:03}.bin")))?;
            files.push(Mutex::new(f));
        }
        Ok(SpillCounter {
            k,
            partitions,
            rec_bytes: if k <= 31 { 8 } else { 16 },
            files,
            _dir: dir,
        })
    }

    pub fn writer(&self) -> SpillWriter<'_> {
        SpillWriter {
            owner: self,
            bufs: vec![Vec::with_capacity(WRITER_BUF_RECORDS * self.rec_bytes); self.partitions],
        }
    }

    #[inline]
    fn partition_of(&self, bits: u128) -> usize {
        let h = mix64(bits as u64 ^ ((bits >> 64) as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        (h as usize) & (self.partitions - 1)
    }

    /// Pass B: counts each partition, accumulating the global histogram and
    /// the table of kmers with count >= `retain_min`. Retained entries merge
    /// into an exactly-sized vector partition by partition, so only one
    /// partition's hash table is live per thread.
    pub fn tally(self, retain_min: u32, threads: usize) -> Result<CountSummary> {
        let next = AtomicUsize::new(0);
        let merged: Mutex<CountSummary> = Mutex::new(CountSummary {
            histogram: AbundanceHistogram::new(),
            counts: Vec::new(),
            distinct: 0,
            total_occurrences: 0,
        });
        let errors: Mutex<Vec<Error>> = Mutex::new(Vec::new());

        std::thread::scope(|scope| {
            for _ in 0..threads.max(1) {
                scope.spawn(|| {
                    let mut hist = AbundanceHistogram::new();
                    let mut distinct = 0u64;
                    let mut occurrences = 0u64;
                    let mut retained: Vec<(u128, u32)> = Vec::new();
                    loop {
                        let p = next.fetch_add(1, Ordering::Relaxed);
                        if p >= self.partitions {
                            break;
                        }
                        let runs = if self.rec_bytes == 8 {
                            self.read_partition_u64(p).map(|mut records| {
                                records.sort_unstable();
                                count_runs(&records, retain_min, &mut hist, &mut distinct, &mut occurrences)
                            })
                        } else {
                            self.read_partition_u128(p).map(|mut records| {
                                records.sort_unstable();
                                count_runs(&records, retain_min, &mut hist, &mut distinct, &mut occurrences)
                            })
                        };
                        match runs {
                            Ok(run_list) => {
                                retained.clear();
                                retained.extend_from_slice(&run_list);
                                let mut m = merged.lock().unwrap();
                                m.counts.reserve_exact(retained.len());
                                m.counts.extend_from_slice(&retained);
                            }
                            Err(e) => {
                                errors.lock().unwrap().push(e);
                                break;
                            }
                        }
                    }
                    let mut m = merged.lock().unwrap();
                    m.histogram.merge(&hist);
                    m.distinct += distinct;
                    m.total_occurrences += occurrences;
                });
            }
        });

        if let Some(e) = errors.into_inner().unwrap().into_iter().next() {
            return Err(e);
        }
        let mut summary = merged.into_inner().unwrap();
        summary.counts.sort_unstable();
        Ok(summary)
    }

    fn read_partition_u64(&self, p: usize) -> Result<Vec<u64>> {
        use std::io::Seek;
        let mut guard = self.files[p].lock().unwrap();
        let n = (guard.metadata()?.len() / 8) as usize;
        guard.seek(std::io::SeekFrom::Start(0))?;
        let mut reader = BufReader::with_capacity(1 << 20, &mut *guard);
        let mut records = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            reader.read_exact(&mut buf)?;
            records.push(u64::from_le_bytes(buf));
        }
        Ok(records)
    }

    fn read_partition_u128(&self, p: usize) -> Result<Vec<u128>> {
        use std::io::Seek;
        let mut guard = self.files[p].lock().unwrap();
        let n = (guard.metadata()?.len() / 16) as usize;
        guard.seek(std::io::SeekFrom::Start(0))?;
        let mut reader = BufReader::with_capacity(1 << 20, &mut *guard);
        let mut records = Vec::with_capacity(n);
        let mut buf = [0u8; 16];
        for _ in 0..n {
            reader.read_exact(&mut buf)?;
            records.push(u128::from_le_bytes(buf));
        }
        Ok(records)
    }
}

/// Per-thread handle appending occurrences into the shared partitions.
pub struct SpillWriter<'a> {
    owner: &'a SpillCounter,
    bufs: Vec<Vec<u8>>,
}

impl SpillWriter<'_> {
    pub fn add_read(&mut self, seq: &[u8]) -> Result<()> {
        let k = self.owner.k;
        for (_, bits) in kmers_of(seq, k) {
            let Some(bits) = bits else { continue };
            let p = self.owner.partition_of(bits);
            if self.owner.rec_bytes == 8 {
                self.bufs[p].extend_from_slice(&(bits as u64).to_le_bytes());
            } else {
                self.bufs[p].extend_from_slice(&bits.to_le_bytes());
            }
            if self.bufs[p].len() >= WRITER_BUF_RECORDS * self.owner.rec_bytes {
                self.flush_partition(p)?;
            }
        }
        Ok(())
    }

    fn flush_partition(&mut self, p: usize) -> Result<()> {
        if self.bufs[p].is_empty() {
            return Ok(());
        }
        let mut guard = self.owner.files[p].lock().unwrap();
        guard.write_all(&self.bufs[p])?;
        self.bufs[p].clear();
        Ok(())
    }

    /// Flushes remaining buffers. Must be called before `tally`.
    pub fn finish(mut self) -> Result<()> {
        for p in 0..self.bufs.len() {
            self.flush_partition(p)?;
        }
        Ok(())
    }
}

/// Result of the counting pass.
pub struct CountSummary {
    /// Canonical kmer and exact count, restricted to counts >= the retain
    /// floor; sorted by kmer. Kept flat: entries are genome-bound and a
    /// vector avoids hash-capacity jumps between datasets.
    pub counts: Vec<(u128, u32)>,
    pub histogram: AbundanceHistogram,
    pub distinct: u64,
    pub total_occurrences: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kmer::{revcomp_bytes, Kmer, BASES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent string-level counting oracle.
    fn oracle_count(reads: &[Vec<u8>], k: usize) -> HashMap<String, u32> {
        let mut map = HashMap::new();
        for read in reads {
            if read.len() < k {
                continue;
            }
            for i in 0..=read.len() - k {
                let win = &read[i..i + k];
                if win.iter().any(|&b| !BASES.contains(&b)) {
                    continue;
                }
                let rc = revcomp_bytes(win);
                let canon = if rc < win.to_vec() { rc } else { win.to_vec() };
                *map.entry(String::from_utf8(canon).unwrap()).or_insert(0) += 1;
            }
        }
        map
    }

    fn spill_count(reads: &[Vec<u8>], k: usize, retain_min: u32, threads: usize) -> CountSummary {
        let counter = SpillCounter::new(k, 8, None).unwrap();
        let mut w = counter.writer();
        for r in reads {
            w.add_read(r).unwrap();
        }
        w.finish().unwrap();
        counter.tally(retain_min, threads).unwrap()
    }

    fn as_map(s: &CountSummary) -> HashMap<u128, u32> {
        s.counts.iter().copied().collect()
    }

    fn random_reads(n: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..len).map(|_| BASES[rng.gen_range(0..4)]).collect())
            .collect()
    }

    #[test]
    fn poly_a_counts() {
        let reads = vec![b"AAAAA".to_vec()];
        let s = spill_count(&reads, 3, 1, 1);
        assert_eq!(s.counts.len(), 1);
        let aaa = Kmer::pack(b"AAA").unwrap().bits();
        assert_eq!(s.counts[0], (aaa, 3));
        assert_eq!(s.total_occurrences, 3);
    }

    #[test]
    fn duplicate_reads_double_counts() {
        let reads = random_reads(5, 60, 1);
        let once = spill_count(&reads, 7, 1, 1);
        let mut doubled_input = reads.clone();
        doubled_input.extend(reads.clone());
        let twice = spill_count(&doubled_input, 7, 1, 1);
        let twice_map = as_map(&twice);
        for &(k, v) in &once.counts {
            assert_eq!(twice_map[&k], v * 2);
        }
        assert_eq!(once.counts.len(), twice.counts.len());
    }

    #[test]
    fn spill_matches_oracle_and_in_memory() {
        let mut reads = random_reads(40, 80, 2);
        reads.push(b"ACGNNNGT".to_vec());
        reads.push(b"AC".to_vec()); // shorter than k
        let k = 9;

        let s = spill_count(&reads, k, 1, 2);
        let smap = as_map(&s);
        let oracle = oracle_count(&reads, k);
        assert_eq!(smap.len(), oracle.len());
        for (kmer_str, c) in &oracle {
            let bits = Kmer::pack(kmer_str.as_bytes()).unwrap().bits();
            assert_eq!(smap[&bits], *c, "kmer {kmer_str}");
        }

        let (mem, hist) = count_exact(reads.iter().map(|r| r.as_slice()), k);
        assert_eq!(mem, smap);
        assert_eq!(hist, s.histogram);
    }

    #[test]
    fn counting_deterministic_across_threads_and_order() {
        let reads = random_reads(60, 70, 3);
        let a = spill_count(&reads, 11, 1, 1);
        let b = spill_count(&reads, 11, 1, 4);
        let mut shuffled = reads.clone();
        shuffled.reverse();
        let c = spill_count(&shuffled, 11, 1, 2);
        assert_eq!(a.counts, b.counts);
        assert_eq!(a.counts, c.counts);
        assert_eq!(a.histogram, c.histogram);
    }

    #[test]
    fn counting_invariant_under_revcomp_of_reads() {
        let reads = random_reads(30, 50, 4);
        let flipped: Vec<Vec<u8>> = reads
            .iter()
            .enumerate()
            .map(|(i, r)| if i % 2 == 0 { revcomp_bytes(r) } else { r.clone() })
            .collect();
        let a = spill_count(&reads, 9, 1, 1);
        let b = spill_count(&flipped, 9, 1, 1);
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn retain_floor_drops_singletons() {
        let reads = random_reads(10, 100, 5);
        let all = spill_count(&reads, 15, 1, 1);
        let retained = spill_count(&reads, 15, 2, 1);
        let expected: Vec<(u128, u32)> = all
            .counts
            .iter()
            .filter(|&&(_, c)| c >= 2)
            .copied()
            .collect();
        assert_eq!(retained.counts, expected);
        // histogram still covers everything
        assert_eq!(retained.histogram, all.histogram);
        assert_eq!(retained.distinct, all.distinct);
    }

    #[test]
    fn histogram_rebuild_consistency() {
        let reads = random_reads(25, 90, 6);
        let s = spill_count(&reads, 13, 1, 2);
        let rebuilt = AbundanceHistogram::from_counts(s.counts.iter().map(|&(_, c)| c));
        assert_eq!(rebuilt, s.histogram);
        assert_eq!(s.histogram.distinct(), s.counts.len() as u64);
    }

    #[test]
    fn solid_kmer_filtering() {
        let x = 100u128;
        let y = 200u128;
        let z = 300u128;
        let table = vec![(x, 5), (y, 2), (z, 8)];

        let s1 = solid_kmers(&table, 1);
        assert_eq!(s1.len(), 3);
        let s5 = solid_kmers(&table, 5);
        assert_eq!(s5.keys().copied().collect::<std::collections::HashSet<_>>(),
                   [x, z].into_iter().collect());
        let s9 = solid_kmers(&table, 9);
        assert!(s9.is_empty());

        // monotone: higher threshold is a subset
        for t in 1..10 {
            let lo = solid_kmers(&table, t);
            let hi = solid_kmers(&table, t + 1);
            assert!(hi.keys().all(|k| lo.contains_key(k)));
        }
    }

    #[test]
    fn mean_abundance() {
        let mut table = HashMap::new();
        table.insert(1u128, 50);
        assert_eq!(mean_solid_abundance(&table).unwrap(), 50.0);
        table.insert(2u128, 60);
        table.insert(3u128, 40);
        let m = mean_solid_abundance(&table).unwrap();
        assert!((m - 50.0).abs() < 1e-9);
        assert!(mean_solid_abundance(&HashMap::new()).is_err());
    }

    #[test]
    fn t_sol_first_local_minimum() {
        // synthetic profile: h stops decreasing at c=4
        let mut h = AbundanceHistogram::new();
        for (c, n) in [(1, 1_000_000u64), (2, 10_000), (3, 500), (4, 80), (5, 120), (6, 900)] {
            h.buckets[c as usize - 1] = n;
        }
        assert_eq!(infer_t_sol(&h).unwrap(), 4);
    }

    #[test]
    fn t_sol_bimodal_valley_at_eight() {
        let mut h = AbundanceHistogram::new();
        let profile: [(u32, u64); 12] = [
            (1, 5_000_000),
            (2, 800_000),
            (3, 100_000),
            (4, 20_000),
            (5, 5_000),
            (6, 1_500),
            (7, 700),
            (8, 650),
            (9, 800),
            (10, 1_200),
            (40, 30_000),
            (50, 80_000),
        ];
        for (c, n) in profile {
            h.buckets[c as usize - 1] = n;
        }
        assert_eq!(infer_t_sol(&h).unwrap(), 8);
    }

    #[test]
    fn t_sol_fallback_on_decreasing_profile() {
        let mut h = AbundanceHistogram::new();
        for (c, n) in [(1, 1000u64), (2, 400), (3, 120), (4, 30), (5, 4)] {
            h.buckets[c as usize - 1] = n;
        }
        assert_eq!(infer_t_sol(&h).unwrap(), 3);
    }

    #[test]
    fn t_sol_clamps_low() {
        let mut h = AbundanceHistogram::new();
        h.buckets[0] = 10;
        h.buckets[1] = 50; // rises immediately: local min at c=1, clamped to 2
        assert_eq!(infer_t_sol(&h).unwrap(), 2);
        assert!(infer_t_sol(&AbundanceHistogram::new()).is_err());
    }

    #[test]
    fn histogram_cap_accumulates() {
        let mut h = AbundanceHistogram::new();
        h.record(HISTOGRAM_CAP + 500);
        h.record(HISTOGRAM_CAP);
        assert_eq!(h.get(HISTOGRAM_CAP), 2);
    }
}
