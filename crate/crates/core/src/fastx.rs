//! Streaming FASTA/FASTQ input and FASTA output.
//!
//! Both formats are detected from the first byte; gzip input is detected from
//! its magic and decompressed transparently. FASTQ quality lines are parsed
//! and discarded (the compressor stores headers and sequences only).
//!
//! Sequence bytes outside `{A,C,G,T}` are normalized to `N` while reading;
//! the reader counts how many bytes it changed so callers can warn. Multi-line
//! FASTA sequences are concatenated; the writer always emits single-line
//! records, so line wrapping is not preserved.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::kmer::{BASE_A, BASE_C, BASE_G, BASE_N, BASE_T};

/// One read: header bytes (without the `>`/`@` marker or newline) and the
/// normalized sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OwnedRecord {
    pub header: Vec<u8>,
    pub seq: Vec<u8>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Format {
    Fasta,
    Fastq,
}

/// Streaming reader over FASTA or FASTQ records.
pub struct FastxReader {
    inner: Box<dyn BufRead + Send>,
    format: Format,
    line: Vec<u8>,
    /// Lookahead holding the next record's header line (FASTA only).
    pending_header: Option<Vec<u8>>,
    records: u64,
    normalized: u64,
    eof: bool,
}

#[inline]
fn normalize_base(b: u8) -> u8 {
    match b {
        BASE_A | BASE_C | BASE_G | BASE_T | BASE_N => b,
        _ => BASE_N,
    }
}

fn trim_newline(line: &mut Vec<u8>) {
    while matches!(line.last(), Some(b'\n') | Some(b'\r')) {
        line.pop();
    }
}

impl FastxReader {
    /// Opens a plain or gzip-compressed FASTA/FASTQ file.
    pub fn open(path: &Path) -> Result<FastxReader> {
        let file = File::open(path).map_err(|e| Error::IoPath {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut buf = BufReader::with_capacity(1 << 16, file);
        let head = buf.fill_buf()?;
        let gzipped = head.len() >= 2 && head[0] == 0x1f && head[1] == 0x8b;
        let inner: Box<dyn BufRead + Send> = if gzipped {
            Box::new(BufReader::with_capacity(
                1 << 16,
                flate2::bufread::MultiGzDecoder::new(buf),
            ))
        } else {
            Box::new(buf)
        };
        Self::from_bufread(inner)
    }

    /// Reader over any buffered source (uncompressed).
    pub fn from_bufread(mut inner: Box<dyn BufRead + Send>) -> Result<FastxReader> {
        let head = inner.fill_buf()?;
        let format = match head.first() {
            None => Format::Fasta, // empty input: zero records
            Some(b'>') => Format::Fasta,
            Some(b'@') => Format::Fastq,
            Some(&b) => {
                return Err(Error::MalformedRecord {
                    format: "fastx",
                    record: 0,
                    msg: format!("input starts with {:?}, expected '>' or '@'", b as char),
                })
            }
        };
        Ok(FastxReader {
            inner,
            format,
            line: Vec::new(),
            pending_header: None,
            records: 0,
            normalized: 0,
            eof: false,
        })
    }

    /// Number of sequence bytes changed to `N` so far.
    pub fn normalized_bases(&self) -> u64 {
        self.normalized
    }

    pub fn is_fastq(&self) -> bool {
        self.format == Format::Fastq
    }

    fn read_line(&mut self) -> Result<bool> {
        self.line.clear();
        let n = self.inner.read_until(b'\n', &mut self.line)?;
        trim_newline(&mut self.line);
        Ok(n > 0)
    }

    fn push_seq(&mut self, out: &mut Vec<u8>) {
        for i in 0..self.line.len() {
            let b = self.line[i];
            let n = normalize_base(b);
            if n != b {
                self.normalized += 1;
            }
            out.push(n);
        }
    }

    pub fn next_record(&mut self) -> Result<Option<OwnedRecord>> {
        if self.eof {
            return Ok(None);
        }
        match self.format {
            Format::Fasta => self.next_fasta(),
            Format::Fastq => self.next_fastq(),
        }
    }

    fn next_fasta(&mut self) -> Result<Option<OwnedRecord>> {
        let header = match self.pending_header.take() {
            Some(h) => h,
            None => loop {
                if !self.read_line()? {
                    self.eof = true;
                    return Ok(None);
                }
                if self.line.is_empty() {
                    continue;
                }
                if self.line[0] != b'>' {
                    return Err(self.malformed("expected '>' header line"));
                }
                break self.line[1..].to_vec();
            },
        };

        let mut seq = Vec::new();
        loop {
            if !self.read_line()? {
                self.eof = true;
                break;
            }
            if self.line.first() == Some(&b'>') {
                self.pending_header = Some(self.line[1..].to_vec());
                break;
            }
            self.push_seq(&mut seq);
        }
        self.records += 1;
        Ok(Some(OwnedRecord { header, seq }))
    }

    fn next_fastq(&mut self) -> Result<Option<OwnedRecord>> {
        loop {
            if !self.read_line()? {
                self.eof = true;
                return Ok(None);
            }
            if !self.line.is_empty() {
                break;
            }
        }
        if self.line[0] != b'@' {
            return Err(self.malformed("expected '@' header line"));
        }
        let header = self.line[1..].to_vec();

        // sequence lines until the '+' separator
        let mut seq = Vec::new();
        loop {
            if !self.read_line()? {
                return Err(self.malformed("record ends before '+' separator"));
            }
            if self.line.first() == Some(&b'+') {
                break;
            }
            self.push_seq(&mut seq);
        }

        // quality bytes, possibly wrapped, until the length matches
        let mut qual_len = 0usize;
        while qual_len < seq.len() {
            if !self.read_line()? {
                return Err(self.malformed("record ends inside quality string"));
            }
            qual_len += self.line.len();
        }
        if qual_len != seq.len() {
            return Err(self.malformed(&format!(
                "quality length {} does not match sequence length {}",
                qual_len,
                seq.len()
            )));
        }
        self.records += 1;
        Ok(Some(OwnedRecord { header, seq }))
    }

    fn malformed(&self, msg: &str) -> Error {
        Error::MalformedRecord {
            format: match self.format {
                Format::Fasta => "fasta",
                Format::Fastq => "fastq",
            },
            record: self.records + 1,
            msg: msg.to_string(),
        }
    }
}

/// Writes one single-line FASTA record.
pub fn write_fasta<W: Write>(w: &mut W, header: &[u8], seq: &[u8]) -> std::io::Result<()> {
    w.write_all(b">")?;
    w.write_all(header)?;
    w.write_all(b"\n")?;
    w.write_all(seq)?;
    w.write_all(b"\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn reader(data: &str) -> FastxReader {
        FastxReader::from_bufread(Box::new(Cursor::new(data.as_bytes().to_vec()))).unwrap()
    }

    fn collect(mut r: FastxReader) -> Vec<OwnedRecord> {
        let mut out = Vec::new();
        while let Some(rec) = r.next_record().unwrap() {
            out.push(rec);
        }
        out
    }

    #[test]
    fn fasta_single_and_multi_line() {
        let recs = collect(reader(">a x\nACGT\n>b\nAC\nGT\nTT\n>empty\n"));
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].header, b"a x");
        assert_eq!(recs[0].seq, b"ACGT");
        assert_eq!(recs[1].seq, b"ACGTTT");
        assert_eq!(recs[2].header, b"empty");
        assert_eq!(recs[2].seq, b"");
    }

    #[test]
    fn fasta_normalizes_to_n() {
        let mut r = reader(">a\nACgtRYU\n");
        let rec = r.next_record().unwrap().unwrap();
        assert_eq!(rec.seq, b"ACNNNNN");
        assert_eq!(r.normalized_bases(), 5);
    }

    #[test]
    fn fastq_records_quality_discarded() {
        let recs = collect(reader("@r1 d\nACGT\n+\nIIII\n@r2\nACG\n+r2\n@@@\n"));
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].header, b"r1 d");
        assert_eq!(recs[0].seq, b"ACGT");
        assert_eq!(recs[1].seq, b"ACG");
    }

    #[test]
    fn fastq_wrapped_quality() {
        let recs = collect(reader("@r\nACGTAC\n+\nII\nIIII\n"));
        assert_eq!(recs[0].seq, b"ACGTAC");
    }

    #[test]
    fn fastq_quality_may_start_with_at_sign() {
        // quality is read by length, so a leading '@' in it is not a header
        let recs = collect(reader("@r1\nACGT\n+\n@III\n@r2\nTT\n+\nII\n"));
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].header, b"r2");
    }

    #[test]
    fn fastq_truncated_is_error() {
        let mut r = reader("@r\nACGT\n+\nII\n");
        assert!(matches!(
            r.next_record(),
            Err(Error::MalformedRecord { .. })
        ));
    }

    #[test]
    fn empty_input_yields_nothing() {
        assert_eq!(collect(reader("")).len(), 0);
    }

    #[test]
    fn bad_leading_byte_is_error() {
        let r = FastxReader::from_bufread(Box::new(Cursor::new(b"ACGT\n".to_vec())));
        assert!(matches!(r, Err(Error::MalformedRecord { .. })));
    }

    #[test]
    fn crlf_stripped() {
        let recs = collect(reader(">a\r\nACGT\r\n"));
        assert_eq!(recs[0].header, b"a");
        assert_eq!(recs[0].seq, b"ACGT");
    }

    #[test]
    fn gzip_round_trip() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(b">a\nACGT\n>b\nGGTT\n").unwrap();
        let gz = enc.finish().unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.fa.gz");
        std::fs::write(&path, &gz).unwrap();
        let recs = collect(FastxReader::open(&path).unwrap());
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].seq, b"GGTT");
    }

    #[test]
    fn write_fasta_shape() {
        let mut out = Vec::new();
        write_fasta(&mut out, b"hdr", b"ACGT").unwrap();
        assert_eq!(out, b">hdr\nACGT\n");
    }
}
