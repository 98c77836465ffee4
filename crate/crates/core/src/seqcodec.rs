//! Per-read sequence encoding: anchor selection against a shared dictionary,
//! bifurcation-list construction by walking the graph, the raw fallback for
//! reads without a solid kmer, and the exact inverse decoder.
//!
//! A read is rebuilt from its anchor by walking the graph in both directions.
//! At each step the current node's successors decide what is stored:
//!
//! * exactly one successor equal to the read's next base: nothing;
//! * exactly one successor, different base: an error event `(step, base)` —
//!   the walk follows the graph (probable sequencing error in the read);
//! * zero or several successors: the read's base goes to the bifurcation
//!   list and the walk follows the read, even if that window is not a node.
//!
//! The decoder replays the identical window sequence against the same graph,
//! so it consumes branch symbols and error events exactly where the encoder
//! produced them. This holds at any Bloom false-positive rate: spurious
//! successors flip simple steps into branch steps identically on both sides.
//!
//! The left side is the same walk run on the reverse complement of the read
//! prefix (anchor included); event steps are in walk-local coordinates.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};

use dashmap::DashMap;

use crate::bloom::{Dbg, NodeSet};
use crate::error::{Error, Result};
use crate::kmer::{kmers_of, nt_symbol, revcomp_bytes, symbol_nt, Kmer, KmerWindow};
use crate::rangecoder::{decode_varint, encode_varint, FrequencyModel, RangeDecoder, RangeEncoder};

// Stream layout of one block. Sequence streams 0..=7 are produced here, the
// header stream is appended by the pipeline.
pub const STREAM_FLAGS: usize = 0;
pub const STREAM_LENS: usize = 1;
pub const STREAM_ANCHOR_IDX: usize = 2;
pub const STREAM_ANCHOR_POS: usize = 3;
pub const STREAM_BRANCH: usize = 4;
pub const STREAM_ERR_POS: usize = 5;
pub const STREAM_ERR_NT: usize = 6;
pub const STREAM_RAW: usize = 7;
pub const STREAM_HEADERS: usize = 8;
pub const NUM_SEQ_STREAMS: usize = 8;
pub const NUM_STREAMS: usize = 9;

const FLAG_ANCHORED: usize = 0;
const FLAG_RAW: usize = 1;

/// Insertion-ordered set of anchor kmers shared by all reads of a file.
/// Lookups and inserts are safe from concurrent block encoders; indices are
/// dense and stable once assigned.
pub struct AnchorDictionary {
    map: DashMap<u128, u32>,
    next: AtomicU32,
}

impl Default for AnchorDictionary {
    fn default() -> Self {
        Self::new()
    }
}

impl AnchorDictionary {
    pub fn new() -> AnchorDictionary {
        AnchorDictionary {
            map: DashMap::new(),
            next: AtomicU32::new(0),
        }
    }

    pub fn lookup(&self, canonical_bits: u128) -> Option<u32> {
        self.map.get(&canonical_bits).map(|v| *v)
    }

    /// Atomic check-then-insert; returns the existing or newly assigned index.
    pub fn get_or_insert(&self, canonical_bits: u128) -> u32 {
        *self
            .map
            .entry(canonical_bits)
            .or_insert_with(|| self.next.fetch_add(1, Ordering::Relaxed))
    }

    pub fn len(&self) -> usize {
        self.next.load(Ordering::Relaxed) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Kmers in index order, for serialization.
    pub fn into_ordered(self) -> Vec<u128> {
        let n = self.len();
        let mut out = vec![0u128; n];
        for (bits, idx) in self.map {
            out[idx as usize] = bits;
        }
        out
    }
}

/// A positioned in-read difference from the graph: at walk step `step` the
/// read carries `nt` while the graph continues along its single successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorEvent {
    pub step: u32,
    pub nt: u8,
}

/// Bifurcation stream of one walk direction.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SideWalk {
    /// Read bases emitted at zero- or multi-successor steps, in walk order.
    pub branch: Vec<u8>,
    /// Error events, strictly increasing in `step`.
    pub events: Vec<ErrorEvent>,
}

impl SideWalk {
    pub fn entries(&self) -> usize {
        self.branch.len() + self.events.len()
    }
}

/// Everything stored for one read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReadRecord {
    Raw {
        seq: Vec<u8>,
    },
    Anchored {
        read_len: u32,
        anchor_index: u32,
        anchor_pos: u32,
        /// The read's anchor window is the reverse complement of the
        /// dictionary (canonical) kmer.
        anchor_rc: bool,
        left: SideWalk,
        right: SideWalk,
    },
}

/// Picks the anchor for a read: the first kmer (left to right) already in the
/// dictionary; otherwise the most abundant solid kmer (leftmost on ties) is
/// inserted and returned. `None` iff the read has no solid kmer — the only
/// path to raw encoding.
pub fn select_anchor(
    seq: &[u8],
    k: usize,
    dict: &AnchorDictionary,
    solid: &HashMap<u128, u32>,
) -> Option<(u32, u32)> {
    let mut best: Option<(u32, usize, u128)> = None;
    for (pos, bits) in kmers_of(seq, k) {
        let Some(bits) = bits else { continue };
        if let Some(idx) = dict.lookup(bits) {
            return Some((idx, pos as u32));
        }
        if let Some(&count) = solid.get(&bits) {
            let better = match best {
                None => true,
                Some((best_count, _, _)) => count > best_count,
            };
            if better {
                best = Some((count, pos, bits));
            }
        }
    }
    best.map(|(_, pos, bits)| (dict.get_or_insert(bits), pos as u32))
}

/// Walks the graph alongside `rest`, starting from the window holding the k
/// bases just before it, and records what the decoder will need.
pub fn encode_walk<S: NodeSet>(dbg: &Dbg<S>, window: &[u8], rest: &[u8]) -> SideWalk {
    let mut win = KmerWindow::from_bytes(dbg.k(), window);
    let mut walk = SideWalk::default();
    for (step, &nt) in rest.iter().enumerate() {
        let succ = dbg.successors(&win);
        if succ.len() == 1 {
            let graph_nt = succ.single();
            if nt != graph_nt {
                walk.events.push(ErrorEvent {
                    step: step as u32,
                    nt,
                });
            }
            win.push(graph_nt);
        } else {
            walk.branch.push(nt);
            win.push(nt);
        }
    }
    walk
}

/// Exact inverse of [`encode_walk`]: regenerates `steps` bases, consuming
/// branch symbols on demand and error events at their recorded steps.
pub fn decode_walk<S: NodeSet>(
    dbg: &Dbg<S>,
    window: &[u8],
    steps: usize,
    events: &[ErrorEvent],
    mut next_branch: impl FnMut() -> u8,
    out: &mut Vec<u8>,
) -> Result<()> {
    let mut win = KmerWindow::from_bytes(dbg.k(), window);
    let mut ev = events.iter().peekable();
    for step in 0..steps {
        let succ = dbg.successors(&win);
        if succ.len() == 1 {
            let graph_nt = succ.single();
            if ev.peek().map(|e| e.step as usize) == Some(step) {
                out.push(ev.next().unwrap().nt);
            } else {
                out.push(graph_nt);
            }
            win.push(graph_nt);
        } else {
            let nt = next_branch();
            out.push(nt);
            win.push(nt);
        }
    }
    if ev.next().is_some() {
        return Err(Error::Corrupt("unconsumed error events in read walk".into()));
    }
    Ok(())
}

/// Encodes a read against the graph given its selected anchor.
pub fn encode_read<S: NodeSet>(
    dbg: &Dbg<S>,
    seq: &[u8],
    anchor_index: u32,
    anchor_pos: u32,
) -> ReadRecord {
    let k = dbg.k();
    let pos = anchor_pos as usize;
    debug_assert!(pos + k <= seq.len());
    let anchor_window = &seq[pos..pos + k];
    let win = KmerWindow::from_bytes(k, anchor_window);
    debug_assert!(!win.has_n(), "anchor windows are solid, hence N-free");

    let right = encode_walk(dbg, anchor_window, &seq[pos + k..]);
    let rprime = revcomp_bytes(&seq[..pos + k]);
    let left = encode_walk(dbg, &rprime[..k], &rprime[k..]);

    ReadRecord::Anchored {
        read_len: seq.len() as u32,
        anchor_index,
        anchor_pos,
        anchor_rc: !win.fwd_is_canonical(),
        left,
        right,
    }
}

/// Selects an anchor and encodes the read; raw when no solid kmer exists.
pub fn encode_record<S: NodeSet>(
    dbg: &Dbg<S>,
    seq: &[u8],
    dict: &AnchorDictionary,
    solid: &HashMap<u128, u32>,
) -> ReadRecord {
    match select_anchor(seq, dbg.k(), dict, solid) {
        Some((idx, pos)) => encode_read(dbg, seq, idx, pos),
        None => ReadRecord::Raw { seq: seq.to_vec() },
    }
}

struct SeqModels {
    flag: FrequencyModel,
    strand: FrequencyModel,
    len: FrequencyModel,
    idx: FrequencyModel,
    pos: FrequencyModel,
    branch: FrequencyModel,
    err_cnt: FrequencyModel,
    err_pos: FrequencyModel,
    err_nt: FrequencyModel,
    raw: FrequencyModel,
}

impl SeqModels {
    fn new() -> SeqModels {
        SeqModels {
            flag: FrequencyModel::new(2),
            strand: FrequencyModel::new(2),
            len: FrequencyModel::new(256),
            idx: FrequencyModel::new(256),
            pos: FrequencyModel::new(256),
            branch: FrequencyModel::new(5),
            err_cnt: FrequencyModel::new(256),
            err_pos: FrequencyModel::new(256),
            err_nt: FrequencyModel::new(5),
            raw: FrequencyModel::new(5),
        }
    }
}

/// Encodes the sequence side of one block into its eight entropy streams.
/// Models are fresh per block so blocks decode independently.
pub struct SeqBlockEncoder {
    encs: Vec<RangeEncoder>,
    models: SeqModels,
    records: u64,
}

impl Default for SeqBlockEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl SeqBlockEncoder {
    pub fn new() -> SeqBlockEncoder {
        SeqBlockEncoder {
            encs: (0..NUM_SEQ_STREAMS).map(|_| RangeEncoder::new()).collect(),
            models: SeqModels::new(),
            records: 0,
        }
    }

    fn push_side(&mut self, side: &SideWalk) {
        let m = &mut self.models;
        encode_varint(
            &mut self.encs[STREAM_ERR_POS],
            &mut m.err_cnt,
            side.events.len() as u64,
        );
        let mut prev = 0u32;
        for e in &side.events {
            let gap = e.step - prev;
            encode_varint(&mut self.encs[STREAM_ERR_POS], &mut m.err_pos, gap as u64);
            prev = e.step;
            m.err_nt
                .encode(&mut self.encs[STREAM_ERR_NT], nt_symbol(e.nt));
        }
        for &b in &side.branch {
            m.branch.encode(&mut self.encs[STREAM_BRANCH], nt_symbol(b));
        }
    }

    pub fn push_record(&mut self, rec: &ReadRecord) {
        self.records += 1;
        match rec {
            ReadRecord::Raw { seq } => {
                self.models.flag.encode(&mut self.encs[STREAM_FLAGS], FLAG_RAW);
                encode_varint(
                    &mut self.encs[STREAM_LENS],
                    &mut self.models.len,
                    seq.len() as u64,
                );
                for &b in seq {
                    self.models.raw.encode(&mut self.encs[STREAM_RAW], nt_symbol(b));
                }
            }
            ReadRecord::Anchored {
                read_len,
                anchor_index,
                anchor_pos,
                anchor_rc,
                left,
                right,
            } => {
                self.models
                    .flag
                    .encode(&mut self.encs[STREAM_FLAGS], FLAG_ANCHORED);
                encode_varint(
                    &mut self.encs[STREAM_LENS],
                    &mut self.models.len,
                    *read_len as u64,
                );
                encode_varint(
                    &mut self.encs[STREAM_ANCHOR_IDX],
                    &mut self.models.idx,
                    *anchor_index as u64,
                );
                encode_varint(
                    &mut self.encs[STREAM_ANCHOR_POS],
                    &mut self.models.pos,
                    *anchor_pos as u64,
                );
                self.models
                    .strand
                    .encode(&mut self.encs[STREAM_FLAGS], *anchor_rc as usize);
                self.push_side(left);
                self.push_side(right);
            }
        }
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    /// The eight finished sequence streams, by stream index.
    pub fn finish(self) -> Vec<Vec<u8>> {
        self.encs.into_iter().map(|e| e.finish()).collect()
    }
}

/// Decodes the sequence side of one block; the mirror of [`SeqBlockEncoder`].
pub struct SeqBlockDecoder<'a, S> {
    dbg: &'a Dbg<S>,
    dict: &'a [u128],
    dec_flags: RangeDecoder<'a>,
    dec_lens: RangeDecoder<'a>,
    dec_idx: RangeDecoder<'a>,
    dec_pos: RangeDecoder<'a>,
    dec_branch: RangeDecoder<'a>,
    dec_err_pos: RangeDecoder<'a>,
    dec_err_nt: RangeDecoder<'a>,
    dec_raw: RangeDecoder<'a>,
    models: SeqModels,
}

impl<'a, S: NodeSet> SeqBlockDecoder<'a, S> {
    /// `streams` must hold at least the eight sequence streams.
    pub fn new(dbg: &'a Dbg<S>, dict: &'a [u128], streams: &'a [Vec<u8>]) -> SeqBlockDecoder<'a, S> {
        SeqBlockDecoder {
            dbg,
            dict,
            dec_flags: RangeDecoder::new(&streams[STREAM_FLAGS]),
            dec_lens: RangeDecoder::new(&streams[STREAM_LENS]),
            dec_idx: RangeDecoder::new(&streams[STREAM_ANCHOR_IDX]),
            dec_pos: RangeDecoder::new(&streams[STREAM_ANCHOR_POS]),
            dec_branch: RangeDecoder::new(&streams[STREAM_BRANCH]),
            dec_err_pos: RangeDecoder::new(&streams[STREAM_ERR_POS]),
            dec_err_nt: RangeDecoder::new(&streams[STREAM_ERR_NT]),
            dec_raw: RangeDecoder::new(&streams[STREAM_RAW]),
            models: SeqModels::new(),
        }
    }

    fn next_side_events(&mut self, max_steps: usize) -> Result<Vec<ErrorEvent>> {
        let m = &mut self.models;
        let count = decode_varint(&mut self.dec_err_pos, &mut m.err_cnt) as usize;
        if count > max_steps {
            return Err(Error::Corrupt("more error events than walk steps".into()));
        }
        let mut events = Vec::with_capacity(count);
        let mut step = 0u64;
        for i in 0..count {
            let gap = decode_varint(&mut self.dec_err_pos, &mut m.err_pos);
            step = if i == 0 { gap } else { step + gap };
            if step >= max_steps as u64 {
                return Err(Error::Corrupt("error event past end of read".into()));
            }
            let nt = symbol_nt(m.err_nt.decode(&mut self.dec_err_nt));
            events.push(ErrorEvent {
                step: step as u32,
                nt,
            });
        }
        Ok(events)
    }

    pub fn next_read(&mut self) -> Result<Vec<u8>> {
        let flag = self.models.flag.decode(&mut self.dec_flags);
        let read_len = decode_varint(&mut self.dec_lens, &mut self.models.len) as usize;
        if read_len > (1 << 30) {
            return Err(Error::Corrupt("implausible read length".into()));
        }

        if flag == FLAG_RAW {
            let mut seq = Vec::with_capacity(read_len);
            for _ in 0..read_len {
                seq.push(symbol_nt(self.models.raw.decode(&mut self.dec_raw)));
            }
            return Ok(seq);
        }

        let k = self.dbg.k();
        let anchor_index = decode_varint(&mut self.dec_idx, &mut self.models.idx) as usize;
        let anchor_pos = decode_varint(&mut self.dec_pos, &mut self.models.pos) as usize;
        if anchor_index >= self.dict.len() {
            return Err(Error::Corrupt(format!(
                "anchor index {anchor_index} out of range (dictionary holds {})",
                self.dict.len()
            )));
        }
        if anchor_pos + k > read_len {
            return Err(Error::Corrupt("anchor position past end of read".into()));
        }
        let anchor_rc = self.models.strand.decode(&mut self.dec_flags) == 1;

        let kmer = Kmer::from_bits(self.dict[anchor_index], k);
        let anchor_bytes = if anchor_rc {
            kmer.revcomp().unpack()
        } else {
            kmer.unpack()
        };

        // left: walk the reverse complement strand for anchor_pos steps
        let left_steps = anchor_pos;
        let left_events = self.next_side_events(left_steps)?;
        let mut left_out = Vec::with_capacity(left_steps);
        {
            let window = revcomp_bytes(&anchor_bytes);
            let branch_model = &mut self.models.branch;
            let branch_dec = &mut self.dec_branch;
            decode_walk(
                self.dbg,
                &window,
                left_steps,
                &left_events,
                || symbol_nt(branch_model.decode(branch_dec)),
                &mut left_out,
            )?;
        }

        // right: continue from the anchor window
        let right_steps = read_len - anchor_pos - k;
        let right_events = self.next_side_events(right_steps)?;
        let mut right_out = Vec::with_capacity(right_steps);
        {
            let branch_model = &mut self.models.branch;
            let branch_dec = &mut self.dec_branch;
            decode_walk(
                self.dbg,
                &anchor_bytes,
                right_steps,
                &right_events,
                || symbol_nt(branch_model.decode(branch_dec)),
                &mut right_out,
            )?;
        }

        let mut seq = revcomp_bytes(&left_out);
        seq.extend_from_slice(&anchor_bytes);
        seq.extend_from_slice(&right_out);
        debug_assert_eq!(seq.len(), read_len);
        Ok(seq)
    }
}
