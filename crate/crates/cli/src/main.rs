//! Command-line front end for the read compressor: compress, decompress,
//! stats and a seeded read simulator for testing and benchmarks.
//!
//! Exit codes: 0 success, 2 usage error, 3 damaged or foreign input data,
//! 4 i/o failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbgc_core::alloc_track::{self, TrackingAllocator};
use dbgc_core::pipeline::{self, CompressConfig, CompressReport, StatsReport};
use dbgc_core::seqcodec::{
    STREAM_ANCHOR_IDX, STREAM_ANCHOR_POS, STREAM_BRANCH, STREAM_ERR_NT, STREAM_ERR_POS,
    STREAM_FLAGS, STREAM_HEADERS, STREAM_LENS, STREAM_RAW,
};
use dbgc_core::sim::{simulate, SimConfig};
use dbgc_core::Error;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(
    name = "dbgc",
    version,
    about = "Reference-free DNA read compressor over a probabilistic de Bruijn graph"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct CommonOut {
    /// Print a machine-readable key=value report instead of the table
    #[arg(long)]
    machine: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress FASTA/FASTQ reads (plain or gzip) into a container
    Compress {
        /// Input reads (FASTA or FASTQ, optionally gzip-compressed)
        #[arg(short, long)]
        input: PathBuf,
        /// Output container file
        #[arg(short, long)]
        output: PathBuf,
        /// Kmer size (odd, at most 63)
        #[arg(short, long, default_value_t = 31)]
        kmer_size: usize,
        /// Solidity threshold; inferred from the abundance profile by default
        #[arg(long)]
        t_sol: Option<u32>,
        /// Bloom filter bits per solid kmer; derived from the data by default
        #[arg(long)]
        bits_per_kmer: Option<f64>,
        /// Reads per block
        #[arg(long, default_value_t = 50_000)]
        block_size: usize,
        /// Worker threads
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        /// Do not store headers (FASTA sequence-only semantics)
        #[arg(long)]
        sequence_only: bool,
        /// Directory for counting spill files (defaults to the system tmp)
        #[arg(long)]
        tmp_dir: Option<PathBuf>,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Decompress a container back to single-line FASTA
    Decompress {
        #[arg(short, long)]
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Worker threads
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Report the component breakdown of a container
    Stats {
        #[arg(short, long)]
        input: PathBuf,
        #[command(flatten)]
        out: CommonOut,
    },
    /// Generate simulated reads with a seeded error model
    Simulate {
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        genome_len: usize,
        #[arg(long, default_value_t = 70.0)]
        coverage: f64,
        #[arg(long, default_value_t = 0.01)]
        error_rate: f64,
        #[arg(long, default_value_t = 100)]
        read_len: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Emit FASTQ with constant qualities instead of FASTA
        #[arg(long)]
        fastq: bool,
        #[command(flatten)]
        out: CommonOut,
    },
}

fn default_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn main() -> ExitCode {
    // die quietly when stdout closes early (e.g. piped into `head`)
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match &e {
                Error::InvalidParam(_) => 2,
                e if e.is_data_error() => 3,
                _ => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Cmd::Compress {
            input,
            output,
            kmer_size,
            t_sol,
            bits_per_kmer,
            block_size,
            threads,
            sequence_only,
            tmp_dir,
            out,
        } => {
            let cfg = CompressConfig {
                k: kmer_size,
                t_sol,
                bits_per_kmer,
                block_size,
                threads,
                sequence_only,
                tmp_dir,
                ..Default::default()
            };
            let report = pipeline::compress(&input, &output, &cfg)?;
            if report.was_fastq {
                eprintln!("note: quality scores are not stored; decompression yields FASTA");
            }
            if report.normalized_bases > 0 {
                eprintln!(
                    "warning: {} sequence bytes outside ACGTN were normalized to N",
                    report.normalized_bases
                );
            }
            if out.machine {
                print_compress_machine(&report);
            } else {
                print_compress_human(&input, &output, &report);
            }
        }
        Cmd::Decompress {
            input,
            output,
            threads,
            out,
        } => {
            let report = pipeline::decompress(&input, &output, threads)?;
            if out.machine {
                println!("mode=decompress");
                println!("reads={}", report.read_count);
                println!("bases={}", report.base_count);
                println!("wall_ms={}", report.wall_ms);
                println!("peak_alloc_bytes={}", alloc_track::peak_bytes());
            } else {
                println!(
                    "decompressed {} reads ({} bases) in {:.2} s",
                    report.read_count,
                    report.base_count,
                    report.wall_ms as f64 / 1000.0
                );
            }
        }
        Cmd::Stats { input, out } => {
            let s = pipeline::stats(&input)?;
            if out.machine {
                print_stats_machine(&s);
            } else {
                print_stats_human(&input, &s);
            }
        }
        Cmd::Simulate {
            output,
            genome_len,
            coverage,
            error_rate,
            read_len,
            seed,
            fastq,
            out,
        } => {
            let cfg = SimConfig {
                genome_len,
                coverage,
                error_rate,
                read_len,
                seed,
                fastq,
            };
            let file = std::fs::File::create(&output)?;
            let mut w = std::io::BufWriter::new(file);
            let report = simulate(&mut w, &cfg)?;
            use std::io::Write;
            w.flush()?;
            if out.machine {
                println!("mode=simulate");
                println!("reads={}", report.reads);
                println!("bases={}", report.bases);
                println!("substitutions={}", report.substitutions);
            } else {
                println!(
                    "simulated {} reads, {} bases, {} substitution errors -> {}",
                    report.reads,
                    report.bases,
                    report.substitutions,
                    output.display()
                );
            }
        }
    }
    Ok(())
}

struct Components {
    bloom: u64,
    dict: u64,
    metadata: u64,
    bifurcation: u64,
    errors: u64,
    unanchored: u64,
    headers: u64,
    overhead: u64,
}

impl Components {
    fn from_streams(bloom: u64, dict: u64, overhead: u64, s: &[u64]) -> Components {
        Components {
            bloom,
            dict,
            metadata: s[STREAM_FLAGS] + s[STREAM_LENS] + s[STREAM_ANCHOR_IDX] + s[STREAM_ANCHOR_POS],
            bifurcation: s[STREAM_BRANCH],
            errors: s[STREAM_ERR_POS] + s[STREAM_ERR_NT],
            unanchored: s[STREAM_RAW],
            headers: s[STREAM_HEADERS],
            overhead,
        }
    }

    fn print_table(&self, total: u64) {
        let row = |name: &str, bytes: u64| {
            let pct = if total > 0 {
                bytes as f64 * 100.0 / total as f64
            } else {
                0.0
            };
            println!("  {name:<16} {bytes:>12} B  {pct:>5.1}%");
        };
        println!("component breakdown:");
        row("bloom filter", self.bloom);
        row("dictionary", self.dict);
        row("read metadata", self.metadata);
        row("bifurcations", self.bifurcation);
        row("error events", self.errors);
        row("unanchored", self.unanchored);
        row("headers", self.headers);
        row("format overhead", self.overhead);
    }

    fn print_machine(&self) {
        println!("bloom_bytes={}", self.bloom);
        println!("dict_bytes={}", self.dict);
        println!("metadata_bytes={}", self.metadata);
        println!("bifurcation_bytes={}", self.bifurcation);
        println!("error_bytes={}", self.errors);
        println!("raw_bytes={}", self.unanchored);
        println!("header_stream_bytes={}", self.headers);
        println!("overhead_bytes={}", self.overhead);
    }
}

fn print_compress_human(input: &std::path::Path, output: &std::path::Path, r: &CompressReport) {
    println!("compressed {} -> {}", input.display(), output.display());
    println!(
        "reads: {}  bases: {}  (anchored {}, raw {})",
        r.read_count, r.base_count, r.anchored_reads, r.raw_reads
    );
    println!(
        "k={}  t_sol={}{}  bits/kmer={:.2}  mean solid abundance={:.1}",
        r.k,
        r.t_sol,
        if r.t_sol_auto { " (auto)" } else { "" },
        r.bits_per_kmer,
        r.mean_abundance
    );
    println!(
        "kmers: {} distinct, {} solid; dictionary entries: {}",
        r.distinct_kmers, r.solid_kmers, r.dict_entries
    );
    Components::from_streams(r.bloom_bytes, r.dict_bytes, r.overhead_bytes, &r.stream_bytes)
        .print_table(r.container_bytes);
    println!(
        "sequence: {:.3} bits/base (ratio {:.2}x)   headers: ratio {:.2}x",
        r.seq_bits_per_base(),
        r.seq_ratio(),
        r.header_ratio()
    );
    println!(
        "container: {} B, wall {:.2} s, {} threads, peak heap {:.1} MiB",
        r.container_bytes,
        r.wall_ms as f64 / 1000.0,
        r.threads,
        alloc_track::peak_bytes() as f64 / (1024.0 * 1024.0)
    );
}

fn print_compress_machine(r: &CompressReport) {
    println!("mode=compress");
    println!("reads={}", r.read_count);
    println!("bases={}", r.base_count);
    println!("header_bytes={}", r.header_bytes);
    println!("normalized_bases={}", r.normalized_bases);
    println!("k={}", r.k);
    println!("t_sol={}", r.t_sol);
    println!("t_sol_auto={}", u8::from(r.t_sol_auto));
    println!("bits_per_kmer={:.4}", r.bits_per_kmer);
    println!("mean_abundance={:.4}", r.mean_abundance);
    println!("distinct_kmers={}", r.distinct_kmers);
    println!("solid_kmers={}", r.solid_kmers);
    println!("dict_entries={}", r.dict_entries);
    println!("anchored_reads={}", r.anchored_reads);
    println!("raw_reads={}", r.raw_reads);
    Components::from_streams(r.bloom_bytes, r.dict_bytes, r.overhead_bytes, &r.stream_bytes)
        .print_machine();
    println!("container_bytes={}", r.container_bytes);
    println!("seq_component_bytes={}", r.seq_component_bytes());
    println!("seq_bits_per_base={:.6}", r.seq_bits_per_base());
    println!("seq_ratio={:.6}", r.seq_ratio());
    println!("header_ratio={:.6}", r.header_ratio());
    println!("wall_ms={}", r.wall_ms);
    println!("threads={}", r.threads);
    println!("peak_alloc_bytes={}", alloc_track::peak_bytes());
}

fn print_stats_human(input: &std::path::Path, s: &StatsReport) {
    println!("container {}", input.display());
    println!(
        "format v{}: k={}, t_sol={}, bits/kmer={:.2}, block size {}, headers {}",
        dbgc_core::container::FORMAT_VERSION,
        s.params.k,
        s.params.t_sol,
        s.params.bits_per_kmer,
        s.params.block_size,
        if s.params.has_headers { "stored" } else { "dropped" }
    );
    println!(
        "reads: {}  bases: {}  blocks: {}  dictionary entries: {}",
        s.params.read_count, s.params.base_count, s.n_blocks, s.dict_entries
    );
    Components::from_streams(s.bloom_bytes, s.dict_bytes, s.overhead_bytes, &s.stream_bytes)
        .print_table(s.file_len);
    println!(
        "sequence: {:.3} bits/base (ratio {:.2}x)   headers: ratio {:.2}x   file {} B",
        s.seq_bits_per_base(),
        s.seq_ratio(),
        s.header_ratio(),
        s.file_len
    );
}

fn print_stats_machine(s: &StatsReport) {
    println!("mode=stats");
    println!("reads={}", s.params.read_count);
    println!("bases={}", s.params.base_count);
    println!("header_bytes={}", s.params.header_bytes);
    println!("k={}", s.params.k);
    println!("t_sol={}", s.params.t_sol);
    println!("bits_per_kmer={:.4}", s.params.bits_per_kmer);
    println!("block_size={}", s.params.block_size);
    println!("has_headers={}", u8::from(s.params.has_headers));
    println!("blocks={}", s.n_blocks);
    println!("dict_entries={}", s.dict_entries);
    Components::from_streams(s.bloom_bytes, s.dict_bytes, s.overhead_bytes, &s.stream_bytes)
        .print_machine();
    println!("file_bytes={}", s.file_len);
    println!("seq_component_bytes={}", s.seq_component_bytes());
    println!("seq_bits_per_base={:.6}", s.seq_bits_per_base());
    println!("seq_ratio={:.6}", s.seq_ratio());
    println!("header_ratio={:.6}", s.header_ratio());
}
