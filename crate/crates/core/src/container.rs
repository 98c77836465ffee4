//! The compressed file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   magic "DBGC", version u16, flags u16, k u16, t_sol u32,
//!          bits-per-kmer f64, block size u32, read count u64,
//!          base count u64, raw header bytes u64            (50 bytes)
//! bloom    serialized Bloom filter image
//! blocks   per block, the entropy-coded streams back to back
//! dict     magic "ADCT", entry count u64, packed anchor kmers
//! index    per block: payload offset u64, read count u32,
//!          one u32 length per stream                        (48 bytes each)
//! footer   dict offset u64, index offset u64, block count u64,
//!          crc32 u32, magic "CEND"                          (32 bytes)
//! ```
//!
//! The checksum covers every byte before the crc field. The dictionary and
//! index sit behind the payloads so compression can stream blocks out as they
//! finish; readers locate them through the footer. A block decodes in
//! isolation given the Bloom image and dictionary, which is what makes
//! parallel decompression possible.

use std::io::{Read, Seek, SeekFrom, Write};

use crate::bloom::BloomFilter;
use crate::error::{Error, Result};
use crate::seqcodec::NUM_STREAMS;

const MAGIC: &[u8; 4] = b"DBGC";
const END_MAGIC: &[u8; 4] = b"CEND";
const DICT_MAGIC: &[u8; 4] = b"ADCT";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_BYTES: u64 = 50;
const FOOTER_BYTES: u64 = 32;
const INDEX_ENTRY_BYTES: u64 = 8 + 4 + 4 * NUM_STREAMS as u64;

const FLAG_HAS_HEADERS: u16 = 1;

/// Global parameters stored in the file header.
#[derive(Debug, Clone, PartialEq)]
pub struct ContainerParams {
    pub k: u16,
    pub t_sol: u32,
    pub bits_per_kmer: f64,
    pub block_size: u32,
    pub has_headers: bool,
    pub read_count: u64,
    pub base_count: u64,
    pub header_bytes: u64,
}

impl ContainerParams {
    fn encode(&self) -> [u8; HEADER_BYTES as usize] {
        let mut out = [0u8; HEADER_BYTES as usize];
        out[0..4].copy_from_slice(MAGIC);
        out[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        let flags = if self.has_headers { FLAG_HAS_HEADERS } else { 0 };
        out[6..8].copy_from_slice(&flags.to_le_bytes());
        out[8..10].copy_from_slice(&self.k.to_le_bytes());
        out[10..14].copy_from_slice(&self.t_sol.to_le_bytes());
        out[14..22].copy_from_slice(&self.bits_per_kmer.to_le_bytes());
        out[22..26].copy_from_slice(&self.block_size.to_le_bytes());
        out[26..34].copy_from_slice(&self.read_count.to_le_bytes());
        out[34..42].copy_from_slice(&self.base_count.to_le_bytes());
        out[42..50].copy_from_slice(&self.header_bytes.to_le_bytes());
        out
    }

    fn decode(buf: &[u8]) -> Result<ContainerParams> {
        if &buf[0..4] != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = u16::from_le_bytes(buf[4..6].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let flags = u16::from_le_bytes(buf[6..8].try_into().unwrap());
        Ok(ContainerParams {
            k: u16::from_le_bytes(buf[8..10].try_into().unwrap()),
            t_sol: u32::from_le_bytes(buf[10..14].try_into().unwrap()),
            bits_per_kmer: f64::from_le_bytes(buf[14..22].try_into().unwrap()),
            block_size: u32::from_le_bytes(buf[22..26].try_into().unwrap()),
            has_headers: flags & FLAG_HAS_HEADERS != 0,
            read_count: u64::from_le_bytes(buf[26..34].try_into().unwrap()),
            base_count: u64::from_le_bytes(buf[34..42].try_into().unwrap()),
            header_bytes: u64::from_le_bytes(buf[42..50].try_into().unwrap()),
        })
    }
}

/// Where a block's payload lives and how long each of its streams is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub offset: u64,
    pub n_reads: u32,
    pub stream_lens: [u32; NUM_STREAMS],
}

impl BlockInfo {
    pub fn payload_bytes(&self) -> u64 {
        self.stream_lens.iter().map(|&l| l as u64).sum()
    }
}

fn kmer_bytes(k: u16) -> usize {
    (2 * k as usize).div_ceil(8)
}

/// Streams the container out: header and Bloom image up front, blocks as they
/// complete, dictionary/index/footer at [`ContainerWriter::finish`].
pub struct ContainerWriter<W: Write> {
    w: W,
    crc: crc32fast::Hasher,
    offset: u64,
    k: u16,
    blocks: Vec<BlockInfo>,
}

impl<W: Write> ContainerWriter<W> {
    pub fn create(w: W, params: &ContainerParams, bloom: &BloomFilter) -> Result<ContainerWriter<W>> {
        let mut cw = ContainerWriter {
            w,
            crc: crc32fast::Hasher::new(),
            offset: 0,
            k: params.k,
            blocks: Vec::new(),
        };
        cw.write_tracked(&params.encode())?;
        let mut img = Vec::with_capacity(bloom.image_bytes() as usize);
        bloom.serialize_into(params.k, &mut img)?;
        cw.write_tracked(&img)?;
        Ok(cw)
    }

    fn write_tracked(&mut self, bytes: &[u8]) -> Result<()> {
        self.w.write_all(bytes)?;
        self.crc.update(bytes);
        self.offset += bytes.len() as u64;
        Ok(())
    }

    /// Appends one block's streams; call in block order.
    pub fn append_block(&mut self, n_reads: u32, streams: &[Vec<u8>]) -> Result<()> {
        debug_assert_eq!(streams.len(), NUM_STREAMS);
        let mut lens = [0u32; NUM_STREAMS];
        for (i, s) in streams.iter().enumerate() {
            if s.len() > u32::MAX as usize {
                return Err(Error::InvalidParam("block stream exceeds 4 GiB".into()));
            }
            lens[i] = s.len() as u32;
        }
        self.blocks.push(BlockInfo {
            offset: self.offset,
            n_reads,
            stream_lens: lens,
        });
        for s in streams {
            self.write_tracked(s)?;
        }
        Ok(())
    }

    /// Writes dictionary, index and footer; returns the inner writer and the
    /// total file length.
    pub fn finish(mut self, dict: &[u128]) -> Result<(W, u64)> {
        let kb = kmer_bytes(self.k);
        let dict_offset = self.offset;
        self.write_tracked(DICT_MAGIC)?;
        self.write_tracked(&(dict.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(dict.len() * kb);
        for &bits in dict {
            buf.extend_from_slice(&bits.to_le_bytes()[..kb]);
        }
        self.write_tracked(&buf)?;

        let index_offset = self.offset;
        let mut idx = Vec::with_capacity(self.blocks.len() * INDEX_ENTRY_BYTES as usize);
        for b in &self.blocks {
            idx.extend_from_slice(&b.offset.to_le_bytes());
            idx.extend_from_slice(&b.n_reads.to_le_bytes());
            for l in b.stream_lens {
                idx.extend_from_slice(&l.to_le_bytes());
            }
        }
        self.write_tracked(&idx)?;

        self.write_tracked(&dict_offset.to_le_bytes())?;
        self.write_tracked(&index_offset.to_le_bytes())?;
        self.write_tracked(&(self.blocks.len() as u64).to_le_bytes())?;
        let crc = self.crc.clone().finalize();
        self.w.write_all(&crc.to_le_bytes())?;
        self.w.write_all(END_MAGIC)?;
        self.offset += 8;
        self.w.flush()?;
        Ok((self.w, self.offset))
    }
}

/// Parsed container metadata plus the structures the decoder needs. Block
/// payloads stay on disk and are fetched per block.
#[derive(Debug)]
pub struct Container {
    pub params: ContainerParams,
    pub bloom: BloomFilter,
    pub dict: Vec<u128>,
    pub blocks: Vec<BlockInfo>,
    pub file_len: u64,
}

fn read_exact_or_truncated<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated
        } else {
            Error::Io(e)
        }
    })
}

impl Container {
    /// Parses and fully validates a container: magic, version, whole-file
    /// checksum, then sections. Nothing is returned from a damaged file.
    pub fn open<R: Read + Seek>(r: &mut R) -> Result<Container> {
        let file_len = r.seek(SeekFrom::End(0))?;
        if file_len < HEADER_BYTES + FOOTER_BYTES {
            return Err(Error::Truncated);
        }

        // header
        r.seek(SeekFrom::Start(0))?;
        let mut head = [0u8; HEADER_BYTES as usize];
        read_exact_or_truncated(r, &mut head)?;
        let params = ContainerParams::decode(&head)?;

        // footer
        r.seek(SeekFrom::Start(file_len - FOOTER_BYTES))?;
        let mut foot = [0u8; FOOTER_BYTES as usize];
        read_exact_or_truncated(r, &mut foot)?;
        if &foot[28..32] != END_MAGIC {
            return Err(Error::Truncated);
        }
        let dict_offset = u64::from_le_bytes(foot[0..8].try_into().unwrap());
        let index_offset = u64::from_le_bytes(foot[8..16].try_into().unwrap());
        let n_blocks = u64::from_le_bytes(foot[16..24].try_into().unwrap());
        let stored_crc = u32::from_le_bytes(foot[24..28].try_into().unwrap());

        // whole-file checksum over everything before the crc field
        r.seek(SeekFrom::Start(0))?;
        let mut crc = crc32fast::Hasher::new();
        let mut remaining = file_len - 8;
        let mut buf = vec![0u8; 1 << 20];
        while remaining > 0 {
            let n = remaining.min(buf.len() as u64) as usize;
            read_exact_or_truncated(r, &mut buf[..n])?;
            crc.update(&buf[..n]);
            remaining -= n as u64;
        }
        if crc.finalize() != stored_crc {
            return Err(Error::ChecksumMismatch);
        }

        let index_bytes = n_blocks
            .checked_mul(INDEX_ENTRY_BYTES)
            .ok_or_else(|| Error::Corrupt("block count overflow".into()))?;
        if dict_offset < HEADER_BYTES
            || index_offset < dict_offset
            || index_offset + index_bytes != file_len - FOOTER_BYTES
        {
            return Err(Error::Corrupt("section offsets out of order".into()));
        }

        // bloom image
        r.seek(SeekFrom::Start(HEADER_BYTES))?;
        let (bloom_k, bloom) = BloomFilter::deserialize_from(r)?;
        if bloom_k != params.k {
            return Err(Error::Corrupt(format!(
                "bloom image k={bloom_k} disagrees with container k={}",
                params.k
            )));
        }

        // dictionary
        r.seek(SeekFrom::Start(dict_offset))?;
        let mut dmagic = [0u8; 4];
        read_exact_or_truncated(r, &mut dmagic)?;
        if &dmagic != DICT_MAGIC {
            return Err(Error::Corrupt("bad dictionary magic".into()));
        }
        let mut cnt = [0u8; 8];
        read_exact_or_truncated(r, &mut cnt)?;
        let dict_len = u64::from_le_bytes(cnt);
        let kb = kmer_bytes(params.k);
        if dict_len.saturating_mul(kb as u64) > file_len {
            return Err(Error::Corrupt("dictionary larger than file".into()));
        }
        let mut dict = Vec::with_capacity(dict_len as usize);
        let mut kbuf = [0u8; 16];
        for _ in 0..dict_len {
            read_exact_or_truncated(r, &mut kbuf[..kb])?;
            let mut full = [0u8; 16];
            full[..kb].copy_from_slice(&kbuf[..kb]);
            dict.push(u128::from_le_bytes(full));
        }

        // block index
        r.seek(SeekFrom::Start(index_offset))?;
        let mut blocks = Vec::with_capacity(n_blocks as usize);
        let mut entry = vec![0u8; INDEX_ENTRY_BYTES as usize];
        for _ in 0..n_blocks {
            read_exact_or_truncated(r, &mut entry)?;
            let offset = u64::from_le_bytes(entry[0..8].try_into().unwrap());
            let n_reads = u32::from_le_bytes(entry[8..12].try_into().unwrap());
            let mut stream_lens = [0u32; NUM_STREAMS];
            for (i, l) in stream_lens.iter_mut().enumerate() {
                *l = u32::from_le_bytes(entry[12 + 4 * i..16 + 4 * i].try_into().unwrap());
            }
            let info = BlockInfo {
                offset,
                n_reads,
                stream_lens,
            };
            if info.offset + info.payload_bytes() > dict_offset {
                return Err(Error::Corrupt("block payload overlaps dictionary".into()));
            }
            blocks.push(info);
        }

        Ok(Container {
            params,
            bloom,
            dict,
            blocks,
            file_len,
        })
    }

    /// Fetches one block's streams from the underlying file.
    pub fn read_block<R: Read + Seek>(&self, r: &mut R, idx: usize) -> Result<Vec<Vec<u8>>> {
        let info = &self.blocks[idx];
        r.seek(SeekFrom::Start(info.offset))?;
        let mut streams = Vec::with_capacity(NUM_STREAMS);
        for &len in &info.stream_lens {
            let mut s = vec![0u8; len as usize];
            read_exact_or_truncated(r, &mut s)?;
            streams.push(s);
        }
        Ok(streams)
    }

    /// Serialized size of the Bloom section.
    pub fn bloom_bytes(&self) -> u64 {
        self.bloom.image_bytes()
    }

    /// Serialized size of the dictionary section.
    pub fn dict_bytes(&self) -> u64 {
        4 + 8 + self.dict.len() as u64 * kmer_bytes(self.params.k) as u64
    }

    /// Fixed header, index and footer bytes.
    pub fn overhead_bytes(&self) -> u64 {
        HEADER_BYTES + self.blocks.len() as u64 * INDEX_ENTRY_BYTES + FOOTER_BYTES
    }

    /// Total bytes per stream kind across all blocks.
    pub fn stream_totals(&self) -> [u64; NUM_STREAMS] {
        let mut out = [0u64; NUM_STREAMS];
        for b in &self.blocks {
            for (i, &l) in b.stream_lens.iter().enumerate() {
                out[i] += l as u64;
            }
        }
        out
    }

    /// First global read index of each block.
    pub fn block_first_reads(&self) -> Vec<u64> {
        let mut out = Vec::with_capacity(self.blocks.len());
        let mut acc = 0u64;
        for b in &self.blocks {
            out.push(acc);
            acc += b.n_reads as u64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn params() -> ContainerParams {
        ContainerParams {
            k: 31,
            t_sol: 3,
            bits_per_kmer: 10.3,
            block_size: 50_000,
            has_headers: true,
            read_count: 7,
            base_count: 700,
            header_bytes: 100,
        }
    }

    fn sample_bloom() -> BloomFilter {
        let mut bf = BloomFilter::for_items(1000, 8.0).unwrap();
        for i in 0..1000u128 {
            bf.insert(i * 7919);
        }
        bf
    }

    fn build(streams_per_block: &[Vec<Vec<u8>>], dict: &[u128]) -> Vec<u8> {
        let w = ContainerWriter::create(Vec::new(), &params(), &sample_bloom()).unwrap();
        let mut w = w;
        for (i, streams) in streams_per_block.iter().enumerate() {
            w.append_block(10 + i as u32, streams).unwrap();
        }
        let (bytes, len) = w.finish(dict).unwrap();
        assert_eq!(bytes.len() as u64, len);
        bytes
    }

    fn two_blocks() -> Vec<Vec<Vec<u8>>> {
        (0..2u8)
            .map(|b| {
                (0..NUM_STREAMS)
                    .map(|s| vec![b * 10 + s as u8; 5 + s])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn round_trip_sections() {
        let blocks = two_blocks();
        let dict: Vec<u128> = (0..100u128).map(|i| i * 31).collect();
        let bytes = build(&blocks, &dict);

        let mut cur = Cursor::new(bytes);
        let c = Container::open(&mut cur).unwrap();
        assert_eq!(c.params, params());
        assert_eq!(c.dict, dict);
        assert_eq!(c.blocks.len(), 2);
        assert_eq!(c.blocks[0].n_reads, 10);
        assert_eq!(c.blocks[1].n_reads, 11);
        for (i, want) in blocks.iter().enumerate() {
            let got = c.read_block(&mut cur, i).unwrap();
            assert_eq!(&got, want);
        }
        // bloom survived byte-exactly: spot-check membership
        let bf = sample_bloom();
        for i in 0..1000u128 {
            assert_eq!(c.bloom.contains(i * 7919), bf.contains(i * 7919));
        }
    }

    #[test]
    fn zero_block_container_is_valid() {
        let bytes = build(&[], &[]);
        let mut cur = Cursor::new(bytes);
        let c = Container::open(&mut cur).unwrap();
        assert!(c.blocks.is_empty());
        assert!(c.dict.is_empty());
    }

    #[test]
    fn payload_corruption_detected() {
        let blocks = two_blocks();
        let bytes = build(&blocks, &[1, 2, 3]);
        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(
            Container::open(&mut Cursor::new(bad)),
            Err(Error::ChecksumMismatch)
        ));
    }

    #[test]
    fn bad_magic_detected() {
        let bytes = build(&two_blocks(), &[]);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Container::open(&mut Cursor::new(bad)),
            Err(Error::BadMagic)
        ));
    }

    #[test]
    fn version_mismatch_detected() {
        let bytes = build(&[], &[]);
        let mut bad = bytes.clone();
        bad[4] = 99;
        assert!(matches!(
            Container::open(&mut Cursor::new(bad)),
            Err(Error::UnsupportedVersion(99))
        ));
    }

    #[test]
    fn truncation_detected() {
        let bytes = build(&two_blocks(), &[1, 2]);
        for cut in [bytes.len() - 1, bytes.len() - 40, 60, 10] {
            let trimmed = bytes[..cut].to_vec();
            let err = Container::open(&mut Cursor::new(trimmed)).unwrap_err();
            assert!(
                matches!(err, Error::Truncated | Error::ChecksumMismatch),
                "cut at {cut}: {err:?}"
            );
        }
    }

    #[test]
    fn stream_totals_accounting() {
        let blocks = two_blocks();
        let bytes = build(&blocks, &[]);
        let c = Container::open(&mut Cursor::new(bytes)).unwrap();
        let totals = c.stream_totals();
        for s in 0..NUM_STREAMS {
            let want: u64 = blocks.iter().map(|b| b[s].len() as u64).sum();
            assert_eq!(totals[s], want);
        }
        assert_eq!(c.block_first_reads(), vec![0, 10]);
    }
}
