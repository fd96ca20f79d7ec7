//! Canonical Huffman coding of code indices and the coded-file container.
//!
//! Byte layout of a coded file, all integers little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `MBHC` | 4 bytes |
//! | version | u16 |
//! | flags (zero) | u16 |
//! | sample rate | u32 |
//! | original length in samples | u64 |
//! | frame length | u32 |
//! | overlap | u32 |
//! | decimation factor | u32 |
//! | checkpoint SHA-256 | 32 bytes |
//! | J_cb, J_hb | u16, u16 |
//! | core-band centroids | J_cb x f32 |
//! | core-band code lengths | J_cb x u8 |
//! | high-band centroids | J_hb x f32 |
//! | high-band code lengths | J_hb x u8 |
//! | frame count | u32 |
//! | per frame: core-band bytes, high-band bytes | u32, u32 |
//! | per frame: core-band payload then high-band payload | bytes |
//! | CRC-32 of every preceding byte | u32 |
//!
//! Each band payload is the MSB-first concatenation of canonical codewords,
//! zero-padded to a byte boundary.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::entropy::CodeStats;
use crate::error::{Error, Result};
use crate::model::FrameCodes;

pub const MAGIC: [u8; 4] = *b"MBHC";
pub const VERSION: u16 = 1;
pub const MAX_CODE_LENGTH: u8 = 32;

/// Canonical prefix code described by one length per symbol.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HuffmanTable {
    lengths: Vec<u8>,
    codes: Vec<u32>,
    /// Symbols ordered by (length, symbol).
    sorted: Vec<u32>,
    /// Per length: first canonical code, count, and offset into `sorted`.
    first: [u64; 33],
    count: [u32; 33],
    offset: [u32; 33],
}

#[derive(PartialEq)]
struct Node {
    weight: f64,
    depth: u32,
    id: usize,
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.depth.cmp(&other.depth))
            .then(self.id.cmp(&other.id))
    }
}

fn huffman_lengths(weights: &[f64]) -> Vec<u32> {
    let j = weights.len();
    let mut parent = vec![usize::MAX; 2 * j - 1];
    let mut heap: BinaryHeap<Reverse<Node>> = weights
        .iter()
        .enumerate()
        .map(|(id, &weight)| Reverse(Node { weight, depth: 0, id }))
        .collect();
    let mut next = j;
    while heap.len() > 1 {
        let Reverse(a) = heap.pop().expect("two nodes");
        let Reverse(b) = heap.pop().expect("two nodes");
        parent[a.id] = next;
        parent[b.id] = next;
        heap.push(Reverse(Node {
            weight: a.weight + b.weight,
            depth: a.depth.max(b.depth) + 1,
            id: next,
        }));
        next += 1;
    }
    (0..j)
        .map(|mut n| {
            let mut len = 0;
            while parent[n] != usize::MAX {
                n = parent[n];
                len += 1;
            }
            len
        })
        .collect()
}

impl HuffmanTable {
    /// Builds a canonical Huffman code for probabilities `p`. Symbols with
    /// zero probability still receive (long) codewords.
    pub fn build(p: &[f64]) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::DegenerateCodebook(format!(
                "Huffman table needs at least 2 symbols, got {}",
                p.len()
            )));
        }
        if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Parameter("probabilities must be finite and non-negative".into()));
        }
        let total: f64 = p.iter().sum();
        let base: Vec<f64> = if total > 0.0 {
            p.iter().map(|v| v / total).collect()
        } else {
            vec![1.0; p.len()]
        };
        // if the tree grows too deep, raise the weight floor until it fits
        let mut floor = 0.0;
        loop {
            let weights: Vec<f64> = base.iter().map(|&w| w.max(floor)).collect();
            let lengths = huffman_lengths(&weights);
            if lengths.iter().all(|&l| l <= MAX_CODE_LENGTH as u32) {
                return Self::from_lengths(lengths.into_iter().map(|l| l as u8).collect());
            }
            floor = if floor == 0.0 { 1e-9 } else { floor * 4.0 };
        }
    }

    /// Rebuilds canonical codewords from transmitted lengths.
    pub fn from_lengths(lengths: Vec<u8>) -> Result<Self> {
        if lengths.len() < 2 {
            return Err(Error::DegenerateCodebook(format!(
                "Huffman table needs at least 2 symbols, got {}",
                lengths.len()
            )));
        }
        if lengths.iter().any(|&l| l == 0 || l > MAX_CODE_LENGTH) {
            return Err(Error::Bitstream(format!(
                "code lengths must lie in 1..={MAX_CODE_LENGTH}"
            )));
        }
        let kraft: u64 = lengths.iter().map(|&l| 1u64 << (MAX_CODE_LENGTH - l)).sum();
        if kraft > 1u64 << MAX_CODE_LENGTH {
            return Err(Error::Bitstream("code lengths violate the Kraft inequality".into()));
        }
        let mut sorted: Vec<u32> = (0..lengths.len() as u32).collect();
        sorted.sort_by_key(|&s| (lengths[s as usize], s));

        let mut codes = vec![0u32; lengths.len()];
        let mut first = [0u64; 33];
        let mut count = [0u32; 33];
        let mut offset = [0u32; 33];
        let mut code = 0u64;
        let mut prev = 0u8;
        for (pos, &s) in sorted.iter().enumerate() {
            let len = lengths[s as usize];
            code <<= len - prev;
            if len != prev {
                first[len as usize] = code;
                offset[len as usize] = pos as u32;
                prev = len;
            }
            codes[s as usize] = code as u32;
            count[len as usize] += 1;
            code += 1;
        }
        Ok(Self {
            lengths,
            codes,
            sorted,
            first,
            count,
            offset,
        })
    }

    pub fn lengths(&self) -> &[u8] {
        &self.lengths
    }

    pub fn symbols(&self) -> usize {
        self.lengths.len()
    }

    /// Codeword and its length for `symbol`.
    pub fn code(&self, symbol: u32) -> Option<(u32, u8)> {
        let s = symbol as usize;
        Some((*self.codes.get(s)?, self.lengths[s]))
    }

    /// Expected bits per symbol under `p`.
    pub fn mean_length(&self, p: &[f64]) -> f64 {
        p.iter().zip(&self.lengths).map(|(&q, &l)| q * l as f64).sum()
    }

    /// Bits needed to code `indices`, before byte padding.
    pub fn bit_length(&self, indices: &[u32]) -> Result<u64> {
        indices.iter().try_fold(0u64, |acc, &i| {
            let (_, len) = self.code(i).ok_or(Error::CorruptCode {
                index: i as usize,
                symbols: self.symbols(),
            })?;
            Ok(acc + len as u64)
        })
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    acc: u64,
    filled: u32,
}

impl BitWriter {
    fn new() -> Self {
        Self {
            bytes: Vec::new(),
            acc: 0,
            filled: 0,
        }
    }

    fn push(&mut self, code: u32, len: u8) {
        self.acc = (self.acc << len) | code as u64;
        self.filled += len as u32;
        while self.filled >= 8 {
            self.filled -= 8;
            self.bytes.push((self.acc >> self.filled) as u8);
        }
        self.acc &= (1u64 << self.filled) - 1;
    }

    fn finish(mut self) -> Vec<u8> {
        if self.filled > 0 {
            self.bytes.push((self.acc << (8 - self.filled)) as u8);
        }
        self.bytes
    }
}

/// Packs indices MSB-first and pads the last byte with zeros.
pub fn encode_indices(indices: &[u32], table: &HuffmanTable) -> Result<Vec<u8>> {
    let mut w = BitWriter::new();
    for &i in indices {
        let (code, len) = table.code(i).ok_or(Error::CorruptCode {
            index: i as usize,
            symbols: table.symbols(),
        })?;
        w.push(code, len);
    }
    Ok(w.finish())
}

/// Reads exactly `count` symbols.
pub fn decode_indices(bytes: &[u8], table: &HuffmanTable, count: usize) -> Result<Vec<u32>> {
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    let total_bits = bytes.len() * 8;
    while out.len() < count {
        let mut code = 0u64;
        let mut len = 0usize;
        loop {
            if bit >= total_bits {
                return Err(Error::Truncated { offset: bytes.len() });
            }
            let b = (bytes[bit / 8] >> (7 - bit % 8)) & 1;
            bit += 1;
            code = (code << 1) | b as u64;
            len += 1;
            if len > MAX_CODE_LENGTH as usize {
                return Err(Error::Bitstream(format!(
                    "no codeword ends before byte {}",
                    (bit - 1) / 8
                )));
            }
            let n = table.count[len] as u64;
            if n > 0 && code >= table.first[len] && code - table.first[len] < n {
                let pos = table.offset[len] as usize + (code - table.first[len]) as usize;
                out.push(table.sorted[pos]);
                break;
            }
        }
    }
    Ok(out)
}

/// Stream-level metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamHeader {
    pub sample_rate: u32,
    pub original_length: u64,
    pub frame_length: u32,
    pub overlap: u32,
    pub ds_factor: u32,
    pub checkpoint_hash: [u8; 32],
}

impl StreamHeader {
    fn code_lens(&self) -> Result<(usize, usize)> {
        if self.ds_factor == 0 || self.frame_length % self.ds_factor != 0 {
            return Err(Error::Bitstream(format!(
                "frame length {} is not divisible by factor {}",
                self.frame_length, self.ds_factor
            )));
        }
        Ok((
            (self.frame_length / self.ds_factor) as usize,
            self.frame_length as usize,
        ))
    }
}

/// Centroids and Huffman table for one band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandTable {
    pub centroids: Vec<f32>,
    pub table: HuffmanTable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramePayload {
    pub cb: Vec<u8>,
    pub hb: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodedFile {
    pub header: StreamHeader,
    pub cb: BandTable,
    pub hb: BandTable,
    pub frames: Vec<FramePayload>,
}

fn table_for(frames: &[FrameCodes], band: impl Fn(&FrameCodes) -> &[u32], j: usize) -> Result<HuffmanTable> {
    let mut stats = CodeStats::empty(j);
    for f in frames {
        stats.add(band(f))?;
    }
    HuffmanTable::build(&stats.probabilities())
}

impl CodedFile {
    /// Codes every frame with tables fitted to this file's own index
    /// histogram.
    pub fn from_codes(
        header: StreamHeader,
        centroids_cb: Vec<f32>,
        centroids_hb: Vec<f32>,
        frames: &[FrameCodes],
    ) -> Result<Self> {
        let (len_cb, len_hb) = header.code_lens()?;
        for f in frames {
            if f.cb.len() != len_cb || f.hb.len() != len_hb {
                return Err(Error::Shape(format!(
                    "frame codes of length ({}, {}), header implies ({len_cb}, {len_hb})",
                    f.cb.len(),
                    f.hb.len()
                )));
            }
        }
        let cb = table_for(frames, |f| &f.cb, centroids_cb.len())?;
        let hb = table_for(frames, |f| &f.hb, centroids_hb.len())?;
        let frames = frames
            .iter()
            .map(|f| {
                Ok(FramePayload {
                    cb: encode_indices(&f.cb, &cb)?,
                    hb: encode_indices(&f.hb, &hb)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            header,
            cb: BandTable {
                centroids: centroids_cb,
                table: cb,
            },
            hb: BandTable {
                centroids: centroids_hb,
                table: hb,
            },
            frames,
        })
    }

    pub fn decode_codes(&self) -> Result<Vec<FrameCodes>> {
        let (len_cb, len_hb) = self.header.code_lens()?;
        self.frames
            .iter()
            .map(|f| {
                Ok(FrameCodes {
                    cb: decode_indices(&f.cb, &self.cb.table, len_cb)?,
                    hb: decode_indices(&f.hb, &self.hb.table, len_hb)?,
                })
            })
            .collect()
    }

    pub fn payload_bytes(&self) -> usize {
        self.frames.iter().map(|f| f.cb.len() + f.hb.len()).sum()
    }

    pub fn serialize(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(128 + self.payload_bytes());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&h.sample_rate.to_le_bytes());
        out.extend_from_slice(&h.original_length.to_le_bytes());
        out.extend_from_slice(&h.frame_length.to_le_bytes());
        out.extend_from_slice(&h.overlap.to_le_bytes());
        out.extend_from_slice(&h.ds_factor.to_le_bytes());
        out.extend_from_slice(&h.checkpoint_hash);
        out.extend_from_slice(&(self.cb.centroids.len() as u16).to_le_bytes());
        out.extend_from_slice(&(self.hb.centroids.len() as u16).to_le_bytes());
        for band in [&self.cb, &self.hb] {
            for c in &band.centroids {
                out.extend_from_slice(&c.to_le_bytes());
            }
            out.extend_from_slice(band.table.lengths());
        }
        out.extend_from_slice(&(self.frames.len() as u32).to_le_bytes());
        for f in &self.frames {
            out.extend_from_slice(&(f.cb.len() as u32).to_le_bytes());
            out.extend_from_slice(&(f.hb.len() as u32).to_le_bytes());
        }
        for f in &self.frames {
            out.extend_from_slice(&f.cb);
            out.extend_from_slice(&f.hb);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated { offset: bytes.len() });
        }
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Bitstream("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Bitstream(format!("unsupported version {version}")));
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated { offset: bytes.len() });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Bitstream("CRC mismatch".into()));
        }
        let mut r = Reader { bytes: body, pos: 6 };
        let flags = r.u16()?;
        if flags != 0 {
            return Err(Error::Bitstream(format!("unknown flags {flags:#x}")));
        }
        let header = StreamHeader {
            sample_rate: r.u32()?,
            original_length: r.u64()?,
            frame_length: r.u32()?,
            overlap: r.u32()?,
            ds_factor: r.u32()?,
            checkpoint_hash: r.take(32)?.try_into().expect("32 bytes"),
        };
        header.code_lens()?;
        let j_cb = r.u16()? as usize;
        let j_hb = r.u16()? as usize;
        let mut band = |j: usize| -> Result<BandTable> {
            let centroids = (0..j).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let lengths = r.take(j)?.to_vec();
            Ok(BandTable {
                centroids,
                table: HuffmanTable::from_lengths(lengths)?,
            })
        };
        let cb = band(j_cb)?;
        let hb = band(j_hb)?;
        let n = r.u32()? as usize;
        let sizes = (0..n)
            .map(|_| Ok((r.u32()? as usize, r.u32()? as usize)))
            .collect::<Result<Vec<_>>>()?;
        let frames = sizes
            .into_iter()
            .map(|(a, b)| {
                Ok(FramePayload {
                    cb: r.take(a)?.to_vec(),
                    hb: r.take(b)?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if r.pos != body.len() {
            return Err(Error::Bitstream(format!(
                "{} trailing bytes after payload",
                body.len() - r.pos
            )));
        }
        Ok(Self {
            header,
            cb,
            hb,
            frames,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated { offset: self.pos })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
