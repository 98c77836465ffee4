//! Acceptance suite: one test per shipping criterion, each printing a
//! `[PASS]` line with the measured values (run with `--nocapture` to see
//! them). Pipeline-level criteria drive the installed binary; formula- and
//! structure-level criteria call the library directly.
//!
//! Run: `cargo test -p dbgc --test acceptance -- --nocapture`

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use dbgc_core::bloom::{optimal_bits_per_kmer, BloomFilter, Dbg, ExactNodeSet, FPR_BASE};
use dbgc_core::count::count_exact;
use dbgc_core::headers::{HeaderBlockDecoder, HeaderBlockEncoder};
use dbgc_core::kmer::{kmers_of, revcomp_bytes, Kmer, KmerWindow, BASES};
use dbgc_core::seqcodec::{encode_record, AnchorDictionary, ReadRecord};

const BIN: &str = env!("CARGO_BIN_EXE_dbgc");

/// Criteria run one at a time regardless of the harness thread count: the
/// resource criteria time and meter the binary, and concurrent compression
/// runs would skew them.
static GATE: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

fn pass(msg: &str) {
    println!("[PASS] {msg}");
}

struct Work {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Work {
    fn new() -> Work {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Work { _dir: dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }
}

fn run_ok(args: &[&str]) -> HashMap<String, String> {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "dbgc {:?} failed: {}\n{}",
        args,
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    w: &Work,
    name: &str,
    genome: usize,
    cov: f64,
    err: f64,
    rl: usize,
    seed: u64,
    fastq: bool,
) -> PathBuf {
    let path = w.path(name);
    let mut args = vec![
        "simulate".to_string(),
        "-o".into(),
        path.display().to_string(),
        "--genome-len".into(),
        genome.to_string(),
        "--coverage".into(),
        cov.to_string(),
        "--error-rate".into(),
        err.to_string(),
        "--read-len".into(),
        rl.to_string(),
        "--seed".into(),
        seed.to_string(),
        "--machine".into(),
    ];
    if fastq {
        args.push("--fastq".into());
    }
    let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    run_ok(&args);
    path
}

fn compress(input: &Path, output: &Path, extra: &[&str]) -> HashMap<String, String> {
    let mut args = vec![
        "compress",
        "-i",
        input.to_str().unwrap(),
        "-o",
        output.to_str().unwrap(),
        "--machine",
    ];
    args.extend_from_slice(extra);
    run_ok(&args)
}

fn decompress(input: &Path, output: &Path, threads: &str) -> HashMap<String, String> {
    run_ok(&[
        "decompress",
        "-i",
        input.to_str().unwrap(),
        "-o",
        output.to_str().unwrap(),
        "--threads",
        threads,
        "--machine",
    ])
}

fn f(report: &HashMap<String, String>, key: &str) -> f64 {
    report
        .get(key)
        .unwrap_or_else(|| panic!("missing key {key}"))
        .parse()
        .unwrap()
}

/// Criterion 1: byte-exact decompress(compress(x)) across randomized
/// configurations spanning genome size, coverage, error rate, read length,
/// Bloom size and thread count, headers included.
#[test]
fn c01_losslessness() {
    let _serial = serial();
    let w = Work::new();
    // (genome, cov, err, read_len, r, threads)
    let configs: [(usize, f64, f64, usize, f64, usize); 19] = [
        (10_000, 10.0, 0.00, 80, 4.0, 1),
        (10_000, 80.0, 0.03, 150, 8.0, 8),
        (20_000, 20.0, 0.01, 100, 12.0, 1),
        (20_000, 50.0, 0.02, 120, 4.0, 8),
        (50_000, 10.0, 0.03, 80, 8.0, 1),
        (50_000, 40.0, 0.00, 150, 12.0, 8),
        (50_000, 70.0, 0.01, 100, 4.0, 1),
        (80_000, 30.0, 0.02, 90, 8.0, 8),
        (80_000, 60.0, 0.005, 140, 12.0, 1),
        (100_000, 15.0, 0.01, 110, 4.0, 8),
        (100_000, 45.0, 0.03, 85, 8.0, 1),
        (100_000, 80.0, 0.00, 100, 12.0, 8),
        (120_000, 25.0, 0.02, 130, 4.0, 1),
        (150_000, 35.0, 0.01, 95, 8.0, 8),
        (150_000, 55.0, 0.005, 150, 12.0, 1),
        (200_000, 10.0, 0.00, 120, 4.0, 8),
        (200_000, 30.0, 0.02, 100, 8.0, 1),
        (200_000, 80.0, 0.01, 80, 12.0, 8),
        (30_000, 60.0, 0.03, 100, 8.0, 8),
    ];

    for (i, &(genome, cov, err, rl, r, threads)) in configs.iter().enumerate() {
        let seed = 1000 + i as u64;
        let input = simulate(&w, &format!("in{i}.fa"), genome, cov, err, rl, seed, false);
        let packed = w.path(&format!("p{i}.dbgc"));
        let unpacked = w.path(&format!("u{i}.fa"));
        compress(
            &input,
            &packed,
            &[
                "--bits-per-kmer",
                &r.to_string(),
                "--threads",
                &threads.to_string(),
            ],
        );
        decompress(&packed, &unpacked, &threads.to_string());
        assert_eq!(
            std::fs::read(&input).unwrap(),
            std::fs::read(&unpacked).unwrap(),
            "config {i}: {genome}bp {cov}x err={err} rl={rl} r={r} threads={threads}"
        );
    }

    // 20th configuration: FASTQ input round trips to its FASTA twin
    let fq = simulate(&w, "in19.fq", 30_000, 20.0, 0.01, 100, 2000, true);
    let fa = simulate(&w, "in19.fa", 30_000, 20.0, 0.01, 100, 2000, false);
    let packed = w.path("p19.dbgc");
    let unpacked = w.path("u19.fa");
    compress(&fq, &packed, &["--threads", "8"]);
    decompress(&packed, &unpacked, "8");
    assert_eq!(
        std::fs::read(&fa).unwrap(),
        std::fs::read(&unpacked).unwrap(),
        "fastq round trip (vs fasta twin)"
    );

    pass("criterion 1: losslessness over 20 randomized configurations, byte-exact with headers");
}

/// Criterion 2: the closed-form optimal Bloom size reproduces the published
/// value at D=50 and matches a grid search of the cost function.
#[test]
fn c02_optimal_bloom_size_formula() {
    let _serial = serial();
    let r50 = optimal_bits_per_kmer(50.0).unwrap();
    assert!(
        (r50 - 10.3).abs() <= 0.1,
        "optimal_bits_per_kmer(50) = {r50}, expected 10.3 +- 0.1"
    );

    for d in [10.0, 50.0, 200.0] {
        let formula = optimal_bits_per_kmer(d).unwrap();
        // independent oracle: scan r + 6*d*f^r on a 0.1 grid over [4, 20]
        let mut best = (f64::INFINITY, 0.0);
        let mut g = 4.0f64;
        while g <= 20.0 + 1e-9 {
            let cost = g + 6.0 * d * FPR_BASE.powf(g);
            if cost < best.0 {
                best = (cost, g);
            }
            g += 0.1;
        }
        assert!(
            (formula - best.1).abs() <= 0.1,
            "D={d}: formula {formula} vs grid {}",
            best.1
        );
    }
    pass(&format!(
        "criterion 2: optimal_bits_per_kmer(50) = {r50:.2} (10.3 +- 0.1), grid oracle agrees for D in {{10, 50, 200}}"
    ));
}

/// Criterion 3: measured false-positive rate at r=10 (h=7) within 25% of the
/// f^r model, 1e5 members and 1e6 non-member queries, fixed seed.
#[test]
fn c03_bloom_false_positive_rate() {
    let _serial = serial();
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20_260_810);
    let mask = (1u128 << 62) - 1;

    let mut members = std::collections::HashSet::new();
    while members.len() < 100_000 {
        members.insert(Kmer::from_bits(rng.gen::<u128>() & mask, 31).canonical().bits());
    }
    let mut bf = BloomFilter::for_items(members.len(), 10.0).unwrap();
    assert_eq!(bf.n_hashes(), 7, "r=10 must use 7 hash functions");
    for &m in &members {
        bf.insert(m);
    }
    for &m in &members {
        assert!(bf.contains(m), "no false negatives");
    }

    let mut hits = 0u64;
    let mut tested = 0u64;
    while tested < 1_000_000 {
        let q = Kmer::from_bits(rng.gen::<u128>() & mask, 31).canonical().bits();
        if members.contains(&q) {
            continue;
        }
        tested += 1;
        if bf.contains(q) {
            hits += 1;
        }
    }
    let measured = hits as f64 / tested as f64;
    let model = FPR_BASE.powf(10.0);
    let rel = (measured - model).abs() / model;
    assert!(
        rel < 0.25,
        "measured fpr {measured:.5} vs model {model:.5} ({:.1}% off)",
        rel * 100.0
    );
    pass(&format!(
        "criterion 3: bloom fpr at r=10, h=7 measured {measured:.5} vs model {model:.5} ({:.1}% relative)",
        rel * 100.0
    ));
}

fn desk_dataset(w: &Work) -> PathBuf {
    simulate(w, "desk70.fa", 100_000, 70.0, 0.01, 100, 42, false)
}

/// Criterion 4: sequence-stream cost at desk scale (100 kbp genome, 70x, 1%
/// errors, auto parameters) at most 1.0 bits per base.
#[test]
fn c04_bits_per_base_desk_scale() {
    let _serial = serial();
    let w = Work::new();
    let input = desk_dataset(&w);
    let report = compress(&input, &w.path("p.dbgc"), &[]);
    let bpb = f(&report, "seq_bits_per_base");
    assert!(bpb <= 1.0, "sequence cost {bpb} bits/base exceeds 1.0");
    pass(&format!(
        "criterion 4: {bpb:.3} bits/base on the 70x desk dataset (bound 1.0)"
    ));
}

/// Criterion 5: sequence compression ratio strictly increases with coverage.
#[test]
fn c05_coverage_monotonicity() {
    let _serial = serial();
    let w = Work::new();
    let mut ratios = Vec::new();
    for cov in [10.0, 30.0, 50.0, 70.0] {
        let input = simulate(&w, &format!("c{cov}.fa"), 100_000, cov, 0.01, 100, 7, false);
        let report = compress(&input, &w.path("p.dbgc"), &[]);
        ratios.push(f(&report, "seq_ratio"));
    }
    for pair in ratios.windows(2) {
        assert!(
            pair[1] > pair[0],
            "ratio not strictly increasing with coverage: {ratios:?}"
        );
    }
    pass(&format!(
        "criterion 5: sequence ratio strictly increases with coverage: {:.2} < {:.2} < {:.2} < {:.2}",
        ratios[0], ratios[1], ratios[2], ratios[3]
    ));
}

/// Criterion 6: disabling abundance filtering degrades the sequence ratio by
/// at least 1.5x against the auto threshold.
#[test]
fn c06_t_sol_ablation() {
    let _serial = serial();
    let w = Work::new();
    let input = desk_dataset(&w);
    let auto = compress(&input, &w.path("a.dbgc"), &[]);
    let none = compress(&input, &w.path("n.dbgc"), &["--t-sol", "1"]);
    let ratio_auto = f(&auto, "seq_ratio");
    let ratio_none = f(&none, "seq_ratio");
    let degradation = ratio_auto / ratio_none;
    assert!(
        degradation >= 1.5,
        "no-filtering degradation only {degradation:.2}x (auto {ratio_auto:.2}, t_sol=1 {ratio_none:.2})"
    );
    pass(&format!(
        "criterion 6: t_sol ablation degrades ratio {degradation:.2}x ({ratio_auto:.2} -> {ratio_none:.2}), bound 1.5x"
    ));
}

/// Criterion 7: sweeping Bloom bits per kmer, the total of filter plus
/// bifurcation plus error bytes is minimized inside [8, 14] and is strictly
/// worse at both extremes.
#[test]
fn c07_bloom_size_tradeoff() {
    let _serial = serial();
    let w = Work::new();
    let input = desk_dataset(&w);
    let rs = [4.0, 6.0, 8.0, 10.0, 14.0, 20.0];
    let mut totals = Vec::new();
    for r in rs {
        let report = compress(&input, &w.path("p.dbgc"), &["--bits-per-kmer", &r.to_string()]);
        let total = f(&report, "bloom_bytes") + f(&report, "bifurcation_bytes") + f(&report, "error_bytes");
        totals.push(total);
    }
    let (best_idx, &best) = totals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .unwrap();
    let best_r = rs[best_idx];
    assert!(
        (8.0..=14.0).contains(&best_r),
        "optimum at r={best_r}, outside [8, 14]; totals {totals:?}"
    );
    assert!(totals[0] > best && totals[rs.len() - 1] > best,
        "extremes not strictly worse: {totals:?}");
    pass(&format!(
        "criterion 7: bloom+bifurcation+error minimized at r={best_r} (totals {:?})",
        totals.iter().map(|t| *t as u64).collect::<Vec<_>>()
    ));
}

/// Criterion 8: 1e5 sequential SRA-style headers compress at least 20x.
#[test]
fn c08_header_compression() {
    let _serial = serial();
    let headers: Vec<Vec<u8>> = (1..=100_000u32)
        .map(|i| format!("SRR959239.{i} {i} length=98").into_bytes())
        .collect();
    let mut raw = 0u64;
    let mut coded = 0u64;
    for block in headers.chunks(50_000) {
        let mut enc = HeaderBlockEncoder::new();
        for h in block {
            enc.push(h);
        }
        raw += enc.raw_bytes();
        let stream = enc.finish();
        coded += stream.len() as u64;
        // and it must decode exactly
        let mut dec = HeaderBlockDecoder::new(&stream);
        for h in block {
            assert_eq!(&dec.next_header().unwrap(), h);
        }
    }
    let ratio = raw as f64 / coded as f64;
    assert!(ratio >= 20.0, "header ratio {ratio:.1}x below 20x");
    pass(&format!(
        "criterion 8: 1e5 SRA-style headers compress {ratio:.1}x (bound 20x)"
    ));
}

/// Criterion 9: with the exact-set backend and error-free reads from a
/// repeat-free reference, anchored reads cost zero branch/error entries and
/// the walker's successor sets equal brute-force enumeration at every step.
#[test]
fn c09_oracle_equivalence() {
    let _serial = serial();
    use rand::{Rng, SeedableRng};
    let k = 31;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let genome: Vec<u8> = (0..5_000).map(|_| BASES[rng.gen_range(0..4)]).collect();

    // verify the reference is repeat-free at the kmer level
    let mut seen = std::collections::HashSet::new();
    for (_, bits) in kmers_of(&genome, k) {
        assert!(seen.insert(bits.unwrap()), "reference has repeated kmers");
    }

    // error-free 20x reads from both strands
    let reads: Vec<Vec<u8>> = (0..1_000)
        .map(|_| {
            let pos = rng.gen_range(0..=genome.len() - 100);
            let r = genome[pos..pos + 100].to_vec();
            if rng.gen_bool(0.5) {
                revcomp_bytes(&r)
            } else {
                r
            }
        })
        .collect();

    let (counts, _) = count_exact(reads.iter().map(|r| r.as_slice()), k);
    let solid: HashMap<u128, u32> = counts.into_iter().collect();
    let exact: ExactNodeSet = solid.keys().copied().collect();
    let dbg = Dbg::new(exact, k);
    let dict = AnchorDictionary::new();

    // string-level successor oracle over the canonical kmer set
    let canon_strings: std::collections::HashSet<Vec<u8>> = solid
        .keys()
        .map(|&bits| Kmer::from_bits(bits, k).unpack())
        .collect();
    let oracle = |window: &[u8]| -> Vec<u8> {
        let mut out = Vec::new();
        for &b in &BASES {
            let mut cand = window[1..].to_vec();
            cand.push(b);
            let rc = revcomp_bytes(&cand);
            let canon = if rc < cand { rc } else { cand };
            if canon_strings.contains(&canon) {
                out.push(b);
            }
        }
        out
    };

    let mut checked_steps = 0u64;
    for read in &reads {
        let rec = encode_record(&dbg, read, &dict, &solid);
        let ReadRecord::Anchored { left, right, .. } = rec else {
            panic!("error-free read failed to anchor");
        };
        assert_eq!(
            left.entries() + right.entries(),
            0,
            "nonzero bifurcation entries on a clean read"
        );
        for start in 0..=read.len() - k {
            let win = &read[start..start + k];
            let got = dbg.successors(&KmerWindow::from_bytes(k, win));
            assert_eq!(got.as_slice(), &oracle(win)[..]);
            checked_steps += 1;
        }
    }
    pass(&format!(
        "criterion 9: 1000 clean reads encode with zero entries; successor sets match brute force at {checked_steps} steps"
    ));
}

fn resource_pair(w: &Work) -> ((f64, f64), (f64, f64)) {
    // block size small enough that both runs saturate the bounded in-flight
    // block window; otherwise block-count quantization, not data structures,
    // dominates the comparison at desk scale
    let half = simulate(w, "c30.fa", 200_000, 30.0, 0.01, 100, 9, false);
    let full = simulate(w, "c60.fa", 200_000, 60.0, 0.01, 100, 9, false);
    let run = |input: &Path| -> (f64, f64) {
        let mut best_wall = f64::INFINITY;
        let mut best_peak = f64::INFINITY;
        for _ in 0..2 {
            let r = compress(
                input,
                &w.path("p.dbgc"),
                &["--threads", "2", "--block-size", "10000"],
            );
            best_wall = best_wall.min(f(&r, "wall_ms"));
            best_peak = best_peak.min(f(&r, "peak_alloc_bytes"));
        }
        (best_wall, best_peak)
    };
    (run(&half), run(&full))
}

/// Criterion 10a: peak memory grows < 20% when coverage doubles at fixed
/// genome (memory follows the genome, not the input).
#[test]
fn c10a_memory_proportional_to_genome() {
    let _serial = serial();
    let w = Work::new();
    let ((_, peak_half), (_, peak_full)) = resource_pair(&w);
    let mem_growth = peak_full / peak_half;
    assert!(
        mem_growth < 1.20,
        "peak memory grew {mem_growth:.3}x when coverage doubled ({peak_half} -> {peak_full})"
    );
    pass(&format!(
        "criterion 10a: peak memory {:.1} -> {:.1} MiB (+{:.1}%) when coverage doubles (bound +20%)",
        peak_half / 1048576.0,
        peak_full / 1048576.0,
        (mem_growth - 1.0) * 100.0
    ));
}

/// Criterion 10b: wall time grows at most 2.5x when the read count doubles.
#[test]
fn c10b_time_linear_in_input() {
    let _serial = serial();
    let w = Work::new();
    let ((wall_half, _), (wall_full, _)) = resource_pair(&w);
    let time_growth = wall_full / wall_half;
    assert!(
        time_growth <= 2.5,
        "wall time grew {time_growth:.2}x when reads doubled ({wall_half} -> {wall_full} ms)"
    );
    pass(&format!(
        "criterion 10b: wall time {wall_half} -> {wall_full} ms ({time_growth:.2}x) when reads double (bound 2.5x)"
    ));
}

/// Criterion 10c: 8-thread compression at least 3x faster than 1-thread on
/// the 70x desk dataset. Requires enough physical cores; the assertion
/// message reports what the machine exposes.
#[test]
fn c10c_thread_scaling() {
    let _serial = serial();
    let w = Work::new();
    let desk = desk_dataset(&w);
    let timed = |threads: &str| -> f64 {
        let mut best = f64::INFINITY;
        for _ in 0..2 {
            let r = compress(
                &desk,
                &w.path("t.dbgc"),
                &["--threads", threads, "--block-size", "4000"],
            );
            best = best.min(f(&r, "wall_ms"));
        }
        best
    };
    let t1 = timed("1");
    let t8 = timed("8");
    let speedup = t1 / t8;
    assert!(
        speedup >= 3.0,
        "8-thread speedup {speedup:.2}x below 3x ({t1} ms -> {t8} ms); \
         this machine exposes {} logical cores",
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    );
    pass(&format!(
        "criterion 10c: 8-thread compression {speedup:.2}x faster than 1-thread (bound 3x)"
    ));
}
