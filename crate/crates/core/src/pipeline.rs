//! End-to-end compression and decompression pipelines.
//!
//! Compression makes two passes over the input. Pass one streams reads
//! through the partitioned kmer counter, infers the solidity threshold from
//! the abundance profile and builds the Bloom-filter graph from the solid
//! kmers. Pass two re-reads the input in blocks of `block_size` reads; worker
//! threads encode blocks (sequences and headers) against the shared graph and
//! anchor dictionary, and finished blocks stream to the output file in input
//! order. The dictionary, block index and footer land behind the payloads, so
//! nothing is buffered beyond the blocks in flight.
//!
//! Output order is always input order. With one worker thread the compressed
//! bytes are reproducible run to run; with several, dictionary insertion
//! order (hence the exact bytes) may vary with scheduling, while decompressed
//! output is identical either way.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Mutex;
use std::time::Instant;

use crate::bloom::{optimal_bits_per_kmer, BloomFilter, Dbg};
use crate::container::{Container, ContainerParams, ContainerWriter};
use crate::count::{infer_t_sol, mean_solid_abundance, solid_kmers, SpillCounter};
use crate::error::{Error, Result};
use crate::fastx::{write_fasta, FastxReader, OwnedRecord};
use crate::headers::{HeaderBlockDecoder, HeaderBlockEncoder};
use crate::kmer::validate_k;
use crate::seqcodec::{
    encode_record, AnchorDictionary, ReadRecord, SeqBlockDecoder, SeqBlockEncoder,
    NUM_STREAMS, STREAM_HEADERS,
};

#[derive(Debug, Clone)]
pub struct CompressConfig {
    pub k: usize,
    /// Solidity threshold; inferred from the abundance profile when absent.
    pub t_sol: Option<u32>,
    /// Bloom bits per solid kmer; derived from mean abundance when absent.
    pub bits_per_kmer: Option<f64>,
    pub block_size: usize,
    pub threads: usize,
    /// Drop the header streams (FASTA sequence-only semantics).
    pub sequence_only: bool,
    pub partitions: usize,
    pub tmp_dir: Option<PathBuf>,
}

impl Default for CompressConfig {
    fn default() -> Self {
        CompressConfig {
            k: 31,
            t_sol: None,
            bits_per_kmer: None,
            block_size: 50_000,
            threads: 1,
            sequence_only: false,
            partitions: crate::count::DEFAULT_PARTITIONS,
            tmp_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct CompressReport {
    pub read_count: u64,
    pub base_count: u64,
    pub header_bytes: u64,
    pub normalized_bases: u64,
    pub was_fastq: bool,
    pub k: usize,
    pub t_sol: u32,
    pub t_sol_auto: bool,
    pub bits_per_kmer: f64,
    pub mean_abundance: f64,
    pub distinct_kmers: u64,
    pub solid_kmers: u64,
    pub dict_entries: u64,
    pub anchored_reads: u64,
    pub raw_reads: u64,
    pub bloom_bytes: u64,
    pub dict_bytes: u64,
    pub overhead_bytes: u64,
    pub stream_bytes: [u64; NUM_STREAMS],
    pub container_bytes: u64,
    pub wall_ms: u64,
    pub threads: usize,
}

impl CompressReport {
    /// Everything the sequence stream costs: graph, dictionary and all
    /// per-read sequence streams (headers and fixed overhead excluded).
    pub fn seq_component_bytes(&self) -> u64 {
        self.bloom_bytes
            + self.dict_bytes
            + self.stream_bytes[..STREAM_HEADERS].iter().sum::<u64>()
    }

    pub fn seq_bits_per_base(&self) -> f64 {
        if self.base_count == 0 {
            return 0.0;
        }
        self.seq_component_bytes() as f64 * 8.0 / self.base_count as f64
    }

    pub fn seq_ratio(&self) -> f64 {
        let c = self.seq_component_bytes();
        if c == 0 {
            return 0.0;
        }
        self.base_count as f64 / c as f64
    }

    pub fn header_ratio(&self) -> f64 {
        let c = self.stream_bytes[STREAM_HEADERS];
        if c == 0 {
            return 0.0;
        }
        self.header_bytes as f64 / c as f64
    }
}

struct EncodedBlock {
    idx: u64,
    n_reads: u32,
    streams: Vec<Vec<u8>>,
    raw_reads: u64,
}

fn set_first(slot: &Mutex<Option<Error>>, e: Error) {
    let mut guard = slot.lock().unwrap();
    if guard.is_none() {
        *guard = Some(e);
    }
}

fn take_err(slot: Mutex<Option<Error>>) -> Option<Error> {
    slot.into_inner().unwrap()
}

/// Compresses `input` (FASTA/FASTQ, plain or gzip) into `output`.
pub fn compress(input: &Path, output: &Path, cfg: &CompressConfig) -> Result<CompressReport> {
    let r = compress_inner(input, output, cfg);
    if r.is_err() {
        let _ = std::fs::remove_file(output);
    }
    r
}

fn compress_inner(input: &Path, output: &Path, cfg: &CompressConfig) -> Result<CompressReport> {
    validate_k(cfg.k)?;
    if cfg.block_size == 0 {
        return Err(Error::InvalidParam("block size must be positive".into()));
    }
    if !cfg.partitions.is_power_of_two() {
        return Err(Error::InvalidParam("partition count must be a power of two".into()));
    }
    if let Some(t) = cfg.t_sol {
        if t == 0 {
            return Err(Error::InvalidParam("solidity threshold must be >= 1".into()));
        }
    }
    let threads = cfg.threads.max(1);
    let started = Instant::now();
    let trace = std::env::var_os("DBGC_TRACE").is_some();
    let mut phase = Instant::now();
    let mark = |name: &str, phase: &mut Instant| {
        if trace {
            eprintln!(
                "[trace] {name}: {:.0} ms, current {:.1} MiB, peak {:.1} MiB",
                phase.elapsed().as_millis(),
                crate::alloc_track::current_bytes() as f64 / 1048576.0,
                crate::alloc_track::peak_bytes() as f64 / 1048576.0
            );
            *phase = Instant::now();
        }
    };
    let mut report = CompressReport {
        k: cfg.k,
        threads,
        ..Default::default()
    };

    // pass one: count canonical kmers into disk partitions
    let counter = SpillCounter::new(cfg.k, cfg.partitions, cfg.tmp_dir.as_deref())?;
    {
        let (tx, rx) = sync_channel::<Vec<Vec<u8>>>(threads * 2);
        let rx = Mutex::new(rx);
        let worker_err: Mutex<Option<Error>> = Mutex::new(None);

        let mut reader = FastxReader::open(input)?;
        report.was_fastq = reader.is_fastq();
        let mut read_err: Option<Error> = None;

        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| {
                    let mut w = counter.writer();
                    loop {
                        let batch = match rx.lock().unwrap().recv() {
                            Ok(b) => b,
                            Err(_) => break,
                        };
                        for seq in &batch {
                            if let Err(e) = w.add_read(seq) {
                                set_first(&worker_err, e);
                                return;
                            }
                        }
                    }
                    if let Err(e) = w.finish() {
                        set_first(&worker_err, e);
                    }
                });
            }

            let mut batch: Vec<Vec<u8>> = Vec::with_capacity(256);
            loop {
                match reader.next_record() {
                    Ok(Some(rec)) => {
                        report.read_count += 1;
                        report.base_count += rec.seq.len() as u64;
                        report.header_bytes += rec.header.len() as u64;
                        batch.push(rec.seq);
                        if batch.len() == 256 {
                            if tx.send(std::mem::take(&mut batch)).is_err() {
                                break; // workers died; their error surfaces below
                            }
                            batch = Vec::with_capacity(256);
                        }
                    }
                    Ok(None) => break,
                    Err(e) => {
                        read_err = Some(e);
                        break;
                    }
                }
            }
            if !batch.is_empty() {
                let _ = tx.send(batch);
            }
            drop(tx);
        });

        report.normalized_bases = reader.normalized_bases();
        if let Some(e) = read_err {
            return Err(e);
        }
        if let Some(e) = take_err(worker_err) {
            return Err(e);
        }
    }

    mark("pass1", &mut phase);
    // threshold inference and the solid-kmer table
    let retain_min = cfg.t_sol.unwrap_or(2).min(2);
    let summary = counter.tally(retain_min, threads)?;
    report.distinct_kmers = summary.distinct;

    let (t_sol, t_sol_auto) = match cfg.t_sol {
        Some(t) => (t, false),
        None => {
            if summary.distinct == 0 {
                (3, true)
            } else {
                (infer_t_sol(&summary.histogram)?, true)
            }
        }
    };
    report.t_sol = t_sol;
    report.t_sol_auto = t_sol_auto;

    mark("tally", &mut phase);
    let solid = solid_kmers(&summary.counts, t_sol);
    drop(summary);
    mark("solid", &mut phase);
    report.solid_kmers = solid.len() as u64;

    // the probabilistic de Bruijn graph
    let bloom = if solid.is_empty() {
        report.bits_per_kmer = 0.0;
        report.mean_abundance = 0.0;
        BloomFilter::empty()
    } else {
        let d = mean_solid_abundance(&solid)?;
        let r = match cfg.bits_per_kmer {
            Some(r) => r,
            None => optimal_bits_per_kmer(d)?,
        };
        report.bits_per_kmer = r;
        report.mean_abundance = d;
        let mut bf = BloomFilter::for_items(solid.len(), r)?;
        for &bits in solid.keys() {
            bf.insert(bits);
        }
        bf
    };
    report.bloom_bytes = bloom.image_bytes();
    let dbg = Dbg::new(bloom, cfg.k);
    mark("bloom", &mut phase);

    let params = ContainerParams {
        k: cfg.k as u16,
        t_sol,
        bits_per_kmer: report.bits_per_kmer,
        block_size: cfg.block_size as u32,
        has_headers: !cfg.sequence_only,
        read_count: report.read_count,
        base_count: report.base_count,
        header_bytes: report.header_bytes,
    };

    // pass two: encode blocks and stream them out in input order
    let out_file = File::create(output).map_err(|e| Error::IoPath {
        path: output.to_path_buf(),
        source: e,
    })?;
    let mut writer = ContainerWriter::create(BufWriter::with_capacity(1 << 20, out_file), &params, dbg.backend())?;

    let dict = AnchorDictionary::new();
    let has_headers = !cfg.sequence_only;
    {
        let (btx, brx) = sync_channel::<(u64, Vec<OwnedRecord>)>(threads);
        let brx = Mutex::new(brx);
        let (otx, orx) = sync_channel::<EncodedBlock>(threads);
        let pipe_err: Mutex<Option<Error>> = Mutex::new(None);
        let solid = &solid;
        let dict = &dict;
        let dbg = &dbg;

        std::thread::scope(|scope| -> Result<()> {
            let block_size = cfg.block_size;
            let input = input.to_path_buf();
            let expected_reads = report.read_count;
            let perr = &pipe_err;
            scope.spawn(move || {
                let run = || -> Result<()> {
                    let mut reader = FastxReader::open(&input)?;
                    let mut idx = 0u64;
                    let mut seen = 0u64;
                    let mut block: Vec<OwnedRecord> = Vec::with_capacity(block_size);
                    while let Some(rec) = reader.next_record()? {
                        seen += 1;
                        block.push(rec);
                        if block.len() == block_size {
                            if btx.send((idx, std::mem::take(&mut block))).is_err() {
                                return Ok(());
                            }
                            idx += 1;
                            block = Vec::with_capacity(block_size);
                        }
                    }
                    if !block.is_empty() {
                        let _ = btx.send((idx, block));
                    }
                    if seen != expected_reads {
                        return Err(Error::Corrupt(format!(
                            "input changed between passes: {seen} reads now, {expected_reads} before"
                        )));
                    }
                    Ok(())
                };
                if let Err(e) = run() {
                    set_first(perr, e);
                }
            });

            let brx = &brx;
            for _ in 0..threads {
                let otx = otx.clone();
                scope.spawn(move || loop {
                    let (idx, block) = match brx.lock().unwrap().recv() {
                        Ok(j) => j,
                        Err(_) => break,
                    };
                    let mut seq_enc = SeqBlockEncoder::new();
                    let mut hdr_enc = has_headers.then(HeaderBlockEncoder::new);
                    let mut raw_reads = 0u64;
                    for rec in &block {
                        if let Some(h) = &mut hdr_enc {
                            h.push(&rec.header);
                        }
                        let r = encode_record(dbg, &rec.seq, dict, solid);
                        if matches!(r, ReadRecord::Raw { .. }) {
                            raw_reads += 1;
                        }
                        seq_enc.push_record(&r);
                    }
                    let mut streams = seq_enc.finish();
                    streams.push(match hdr_enc {
                        Some(h) => h.finish(),
                        None => Vec::new(),
                    });
                    let encoded = EncodedBlock {
                        idx,
                        n_reads: block.len() as u32,
                        streams,
                        raw_reads,
                    };
                    if otx.send(encoded).is_err() {
                        break;
                    }
                });
            }
            drop(otx);

            // in-order writer; on failure keep draining so workers can exit
            let mut pending: BTreeMap<u64, EncodedBlock> = BTreeMap::new();
            let mut next_idx = 0u64;
            let mut failed = false;
            for encoded in orx.iter() {
                pending.insert(encoded.idx, encoded);
                while let Some(blk) = pending.remove(&next_idx) {
                    if !failed {
                        report.raw_reads += blk.raw_reads;
                        for (i, s) in blk.streams.iter().enumerate() {
                            report.stream_bytes[i] += s.len() as u64;
                        }
                        if let Err(e) = writer.append_block(blk.n_reads, &blk.streams) {
                            set_first(&pipe_err, e);
                            failed = true;
                        }
                    }
                    next_idx += 1;
                }
            }
            Ok(())
        })?;

        if let Some(e) = take_err(pipe_err) {
            return Err(e);
        }
    }
    mark("pass2", &mut phase);
    report.anchored_reads = report.read_count - report.raw_reads;
    report.dict_entries = dict.len() as u64;

    let ordered = dict.into_ordered();
    let (_, file_len) = writer.finish(&ordered)?;
    report.container_bytes = file_len;
    report.dict_bytes = 4 + 8 + ordered.len() as u64 * ((2 * cfg.k as u64).div_ceil(8));
    report.overhead_bytes = file_len
        - report.bloom_bytes
        - report.dict_bytes
        - report.stream_bytes.iter().sum::<u64>();
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DecompressReport {
    pub read_count: u64,
    pub base_count: u64,
    pub wall_ms: u64,
}

/// Decompresses a container into single-line FASTA, in original read order.
pub fn decompress(input: &Path, output: &Path, threads: usize) -> Result<DecompressReport> {
    let r = decompress_inner(input, output, threads);
    if r.is_err() {
        let _ = std::fs::remove_file(output);
    }
    r
}

fn decompress_inner(input: &Path, output: &Path, threads: usize) -> Result<DecompressReport> {
    let threads = threads.max(1);
    let started = Instant::now();
    let mut file = BufReader::with_capacity(1 << 20, File::open(input).map_err(|e| Error::IoPath {
        path: input.to_path_buf(),
        source: e,
    })?);
    let container = Container::open(&mut file)?;
    drop(file);

    let first_reads = container.block_first_reads();
    let k = container.params.k as usize;
    let has_headers = container.params.has_headers;
    let n_blocks = container.blocks.len();

    let dbg = Dbg::new(container.bloom.clone(), k);

    let out_file = File::create(output).map_err(|e| Error::IoPath {
        path: output.to_path_buf(),
        source: e,
    })?;
    let mut out = BufWriter::with_capacity(1 << 20, out_file);

    let mut report = DecompressReport::default();
    {
        let (otx, orx) = sync_channel::<(usize, Result<(Vec<u8>, u64)>)>(threads);
        let next_job = std::sync::atomic::AtomicUsize::new(0);
        let pipe_err: Mutex<Option<Error>> = Mutex::new(None);
        let dbg = &dbg;
        let container = &container;
        let first_reads = &first_reads;
        let next_job = &next_job;

        std::thread::scope(|scope| {
            for _ in 0..threads {
                let otx = otx.clone();
                let input = input.to_path_buf();
                scope.spawn(move || {
                    let mut file = match File::open(&input) {
                        Ok(f) => f,
                        Err(e) => {
                            let _ = otx.send((usize::MAX, Err(e.into())));
                            return;
                        }
                    };
                    loop {
                        let idx = next_job.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if idx >= n_blocks {
                            break;
                        }
                        let result = decode_block(
                            container,
                            &mut file,
                            dbg,
                            idx,
                            has_headers,
                            first_reads[idx],
                        );
                        if otx.send((idx, result)).is_err() {
                            break;
                        }
                    }
                });
            }
            drop(otx);

            let mut pending: BTreeMap<usize, (Vec<u8>, u64)> = BTreeMap::new();
            let mut next_write = 0usize;
            let mut failed = false;
            for (idx, result) in orx.iter() {
                match result {
                    Ok(chunk) => {
                        pending.insert(idx, chunk);
                    }
                    Err(e) => {
                        set_first(&pipe_err, e);
                        failed = true;
                    }
                }
                while let Some((bytes, bases)) = pending.remove(&next_write) {
                    if !failed {
                        if let Err(e) = out.write_all(&bytes) {
                            set_first(&pipe_err, e.into());
                            failed = true;
                        }
                        report.base_count += bases;
                        report.read_count += container.blocks[next_write].n_reads as u64;
                    }
                    next_write += 1;
                }
            }
        });

        if let Some(e) = take_err(pipe_err) {
            return Err(e);
        }
    }
    out.flush()?;

    if report.read_count != container.params.read_count {
        return Err(Error::Corrupt(format!(
            "decoded {} reads, container promises {}",
            report.read_count, container.params.read_count
        )));
    }
    report.wall_ms = started.elapsed().as_millis() as u64;
    Ok(report)
}

fn decode_block(
    container: &Container,
    file: &mut File,
    dbg: &Dbg<BloomFilter>,
    idx: usize,
    has_headers: bool,
    first_read: u64,
) -> Result<(Vec<u8>, u64)> {
    let streams = container.read_block(file, idx)?;
    let n_reads = container.blocks[idx].n_reads as u64;
    let mut seq_dec = SeqBlockDecoder::new(dbg, &container.dict, &streams);
    let mut hdr_dec = has_headers.then(|| HeaderBlockDecoder::new(&streams[STREAM_HEADERS]));

    let mut out = Vec::new();
    let mut bases = 0u64;
    for i in 0..n_reads {
        let seq = seq_dec.next_read()?;
        bases += seq.len() as u64;
        match &mut hdr_dec {
            Some(h) => {
                let header = h.next_header()?;
                write_fasta(&mut out, &header, &seq)?;
            }
            None => {
                let header = (first_read + i).to_string();
                write_fasta(&mut out, header.as_bytes(), &seq)?;
            }
        }
    }
    Ok((out, bases))
}

/// Component sizes of an existing container, without decoding payloads.
#[derive(Debug, Clone)]
pub struct StatsReport {
    pub params: ContainerParams,
    pub file_len: u64,
    pub n_blocks: u64,
    pub dict_entries: u64,
    pub bloom_bytes: u64,
    pub dict_bytes: u64,
    pub overhead_bytes: u64,
    pub stream_bytes: [u64; NUM_STREAMS],
}

impl StatsReport {
    pub fn seq_component_bytes(&self) -> u64 {
        self.bloom_bytes
            + self.dict_bytes
            + self.stream_bytes[..STREAM_HEADERS].iter().sum::<u64>()
    }

    pub fn seq_bits_per_base(&self) -> f64 {
        if self.params.base_count == 0 {
            return 0.0;
        }
        self.seq_component_bytes() as f64 * 8.0 / self.params.base_count as f64
    }

    pub fn seq_ratio(&self) -> f64 {
        let c = self.seq_component_bytes();
        if c == 0 {
            return 0.0;
        }
        self.params.base_count as f64 / c as f64
    }

    pub fn header_ratio(&self) -> f64 {
        let c = self.stream_bytes[STREAM_HEADERS];
        if c == 0 {
            return 0.0;
        }
        self.params.header_bytes as f64 / c as f64
    }
}

/// Reads container metadata (validating the checksum) and aggregates sizes.
pub fn stats(input: &Path) -> Result<StatsReport> {
    let mut file = BufReader::with_capacity(1 << 20, File::open(input).map_err(|e| Error::IoPath {
        path: input.to_path_buf(),
        source: e,
    })?);
    let c = Container::open(&mut file)?;
    Ok(StatsReport {
        file_len: c.file_len,
        n_blocks: c.blocks.len() as u64,
        dict_entries: c.dict.len() as u64,
        bloom_bytes: c.bloom_bytes(),
        dict_bytes: c.dict_bytes(),
        overhead_bytes: c.overhead_bytes(),
        stream_bytes: c.stream_totals(),
        params: c.params,
    })
}
