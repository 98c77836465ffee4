//! Reference-free lossless compression of DNA sequencing reads.
//!
//! The compressor builds a de novo reference from the reads themselves: solid
//! (abundant) canonical kmers are inserted into a Bloom filter, which acts as a
//! probabilistic de Bruijn graph. Each read is then stored as an anchor kmer
//! (an index into a shared dictionary), its length and anchor position, and a
//! list of bifurcation choices describing the walk through the graph that
//! regenerates the read. Everything except the Bloom filter image is entropy
//! coded with an adaptive order-0 range coder.
//!
//! The decompressor only needs the compressed file: the graph, the anchor
//! dictionary and all per-read streams are stored in the container.

pub mod alloc_track;
pub mod bloom;
pub mod container;
pub mod count;
pub mod error;
pub mod fastx;
pub mod headers;
pub mod kmer;
pub mod pipeline;
pub mod rangecoder;
pub mod seqcodec;
pub mod sim;

pub use error::{Error, Result};
