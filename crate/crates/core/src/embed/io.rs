//! Model persistence.
//!
//! A model is two files. The text file starts with a `V N kind` header and
//! has one line per input word: the token followed by `N` space-separated
//! decimals, each printed with the shortest representation that parses back
//! to the same `f64`. The binary sidecar (`<model>.bin`) holds everything
//! else needed for an exact round trip:
//!
//! ```text
//! magic      8 bytes  "STEMBSC\0"
//! version    u32      1
//! kind       u8       0 = feature, 1 = location (input words)
//! out kind   u8
//! softmax    u8       0 = hierarchical, 1 = exact
//! reserved   u8
//! dim        u64
//! V_in       u64
//! V_out      u64
//! counts     V_in × u64            input word frequencies, file order
//! out words  V_out × (u32 len, bytes, u64 count)
//! codes      V_out × (u32 len, len × u8 bit, len × u32 node)
//! rows       u64                    output weight rows
//! weights    rows × dim × f64
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use super::huffman::HuffmanCoding;
use super::space::{EmbeddingSpace, SoftmaxMode};
use crate::data::{Vocabulary, WordKind};
use crate::error::{Error, Result};
use crate::io_util::write_atomic;

const MAGIC: &[u8; 8] = b"STEMBSC\0";
const VERSION: u32 = 1;

pub fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}

pub fn save(space: &EmbeddingSpace, path: &Path) -> Result<()> {
    write_atomic(path, |w| write_text(space, w))?;
    write_atomic(&sidecar_path(path), |w| write_sidecar(space, w))
}

pub fn load(path: &Path) -> Result<EmbeddingSpace> {
    let text = BufReader::new(File::open(path)?);
    let side = BufReader::new(File::open(sidecar_path(path))?);
    read(text, side)
}

fn fmt_f64(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-6 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn write_text(space: &EmbeddingSpace, mut w: impl Write) -> Result<()> {
    writeln!(w, "{} {} {}", space.len(), space.dim, space.kind)?;
    for i in 0..space.len() {
        w.write_all(space.vocabulary.token(i).as_bytes())?;
        for x in space.row(i) {
            write!(w, " {}", fmt_f64(*x))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads the text file alone: header fields plus `(token, vector)` rows.
/// Tokens may contain spaces; the last `N` fields of a line are the vector.
pub fn read_text(r: impl BufRead) -> Result<(WordKind, usize, Vec<(String, Vec<f64>)>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty model file".into()))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::Format(format!("bad header `{header}`")));
    }
    let v: usize = fields[0]
        .parse()
        .map_err(|_| Error::Format("bad vocabulary size".into()))?;
    let dim: usize = fields[1]
        .parse()
        .map_err(|_| Error::Format("bad dimension".into()))?;
    let kind: WordKind = fields[2].parse()?;
    let mut rows = Vec::with_capacity(v);
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() < dim + 1 {
            return Err(Error::parse(i + 2, "too few fields"));
        }
        let split = parts.len() - dim;
        let token = parts[..split].join(" ");
        let vec = parts[split..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(i + 2, "bad float")))
            .collect::<Result<Vec<_>>>()?;
        rows.push((token, vec));
    }
    if rows.len() != v {
        return Err(Error::Format(format!(
            "header says {v} words, found {}",
            rows.len()
        )));
    }
    Ok((kind, dim, rows))
}

fn kind_byte(k: WordKind) -> u8 {
    match k {
        WordKind::Feature => 0,
        WordKind::Location => 1,
    }
}

fn byte_kind(b: u8) -> Result<WordKind> {
    match b {
        0 => Ok(WordKind::Feature),
        1 => Ok(WordKind::Location),
        _ => Err(Error::Format(format!("bad word kind byte {b}"))),
    }
}

pub fn write_sidecar(space: &EmbeddingSpace, mut w: impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let mode = match space.mode {
        SoftmaxMode::Hierarchical => 0u8,
        SoftmaxMode::Exact => 1,
    };
    w.write_all(&[kind_byte(space.kind), kind_byte(space.output_kind), mode, 0])?;
    for n in [space.dim, space.len(), space.output_len()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for &c in space.vocabulary.counts() {
        w.write_all(&c.to_le_bytes())?;
    }
    let ov = &space.output_vocabulary;
    for i in 0..ov.len() {
        let t = ov.token(i).as_bytes();
        w.write_all(&(t.len() as u32).to_le_bytes())?;
        w.write_all(t)?;
        w.write_all(&ov.count(i).to_le_bytes())?;
    }
    for i in 0..ov.len() {
        let code = space.huffman.code(i);
        w.write_all(&(code.len() as u32).to_le_bytes())?;
        w.write_all(code)?;
        for n in space.huffman.path(i) {
            w.write_all(&n.to_le_bytes())?;
        }
    }
    w.write_all(&(space.output_rows() as u64).to_le_bytes())?;
    for x in &space.output_weights {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

struct Bin<R> {
    r: R,
}

impl<R: Read> Bin<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r
            .read_exact(&mut b)
            .map_err(|e| Error::Format(format!("truncated sidecar: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn usize(&mut self, limit: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Format(format!("implausible size {n} in sidecar")));
        }
        Ok(n as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }

    fn vec_u8(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut v = vec![0u8; n];
        self.r
            .read_exact(&mut v)
            .map_err(|e| Error::Format(format!("truncated sidecar: {e}")))?;
        Ok(v)
    }
}

pub fn read(text: impl BufRead, sidecar: impl Read) -> Result<EmbeddingSpace> {
    let (kind, dim, rows) = read_text(text)?;
    let mut b = Bin { r: sidecar };
    if &b.bytes::<8>()? != MAGIC {
        return Err(Error::Format("not a model sidecar (bad magic)".into()));
    }
    let version = b.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported sidecar version {version}")));
    }
    let [k_in, k_out, mode, _] = b.bytes::<4>()?;
    let mode = match mode {
        0 => SoftmaxMode::Hierarchical,
        1 => SoftmaxMode::Exact,
        m => return Err(Error::Format(format!("bad softmax byte {m}"))),
    };
    if byte_kind(k_in)? != kind {
        return Err(Error::Format("sidecar kind does not match model header".into()));
    }
    let output_kind = byte_kind(k_out)?;
    const LIMIT: u64 = 1 << 32;
    let s_dim = b.usize(LIMIT)?;
    let v_in = b.usize(LIMIT)?;
    let v_out = b.usize(LIMIT)?;
    if s_dim != dim || v_in != rows.len() {
        return Err(Error::Format("sidecar does not match model header".into()));
    }
    let mut counts = Vec::with_capacity(v_in);
    for _ in 0..v_in {
        counts.push(b.u64()?);
    }
    let mut out_words = Vec::with_capacity(v_out);
    for _ in 0..v_out {
        let len = b.u32()? as usize;
        let tok = String::from_utf8(b.vec_u8(len)?)
            .map_err(|_| Error::Format("output token is not UTF-8".into()))?;
        out_words.push((tok, b.u64()?));
    }
    let mut codes = Vec::with_capacity(v_out);
    let mut paths = Vec::with_capacity(v_out);
    for _ in 0..v_out {
        let len = b.u32()? as usize;
        codes.push(b.vec_u8(len)?);
        let mut p = Vec::with_capacity(len);
        for _ in 0..len {
            p.push(b.u32()?);
        }
        paths.push(p);
    }
    let n_rows = b.usize(LIMIT)?;
    let expected_rows = match mode {
        SoftmaxMode::Hierarchical => v_out.saturating_sub(1),
        SoftmaxMode::Exact => v_out,
    };
    if n_rows != expected_rows {
        return Err(Error::Format("output weight row count mismatch".into()));
    }
    let mut output_weights = Vec::with_capacity(n_rows * dim);
    for _ in 0..n_rows * dim {
        output_weights.push(b.f64()?);
    }

    let vocabulary = rebuild_vocab(rows.iter().map(|r| r.0.clone()).zip(counts))?;
    let output_vocabulary = rebuild_vocab(out_words.into_iter())?;
    let mut input_weights = Vec::with_capacity(rows.len() * dim);
    for (_, v) in rows {
        input_weights.extend(v);
    }
    Ok(EmbeddingSpace {
        kind,
        output_kind,
        vocabulary,
        output_vocabulary,
        dim,
        mode,
        input_weights,
        output_weights,
        huffman: HuffmanCoding::from_parts(codes, paths)?,
    })
}

/// Rebuilds a vocabulary and checks that its canonical order matches the
/// stored order, so row `i` still belongs to token `i`.
fn rebuild_vocab(pairs: impl Iterator<Item = (String, u64)>) -> Result<Vocabulary> {
    let pairs: Vec<(String, u64)> = pairs.collect();
    let v = Vocabulary::from_counts(pairs.iter().cloned())?;
    if v.len() != pairs.len() || pairs.iter().enumerate().any(|(i, (t, _))| v.token(i) != t) {
        return Err(Error::Format("stored vocabulary order is not canonical".into()));
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{TokenSequence, YearMonth};
    use crate::embed::train::{train, train_cross, TrainConfig};

    fn seqs() -> Vec<TokenSequence> {
        (0..6)
            .map(|i| TokenSequence {
                entity_id: format!("u{i}"),
                month: YearMonth::new(2010, 3).unwrap(),
                feature_words: ["American Restaurant_Noon", "Bar_Evening", "Office_Morning"][..(i % 2) + 2]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                location_words: ["v1", "v2", "v3"][..(i % 2) + 2]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                coordinates: vec![(0.0, 0.0); (i % 2) + 2],
            })
            .collect()
    }

    fn round_trip(space: &EmbeddingSpace) -> EmbeddingSpace {
        let mut text = Vec::new();
        let mut side = Vec::new();
        write_text(space, &mut text).unwrap();
        write_sidecar(space, &mut side).unwrap();
        read(text.as_slice(), side.as_slice()).unwrap()
    }

    #[test]
    fn exact_round_trip_both_modes() {
        for softmax in [SoftmaxMode::Hierarchical, SoftmaxMode::Exact] {
            let cfg = TrainConfig {
                dim: 5,
                epochs: 2,
                softmax,
                ..Default::default()
            };
            let mut space = train(&seqs(), WordKind::Feature, &cfg).unwrap().space;
            // exercise values that need exponent notation
            space.input_weights[0] = 1.234e-12;
            space.input_weights[1] = -0.1;
            assert_eq!(round_trip(&space), space);
        }
        let cross = train_cross(
            &seqs(),
            WordKind::Feature,
            WordKind::Location,
            &TrainConfig { dim: 3, epochs: 1, ..Default::default() },
            None,
        )
        .unwrap()
        .space;
        assert_eq!(round_trip(&cross), cross);
    }

    #[test]
    fn header_and_spaces_in_tokens() {
        let cfg = TrainConfig { dim: 4, epochs: 1, ..Default::default() };
        let space = train(&seqs(), WordKind::Feature, &cfg).unwrap().space;
        let mut text = Vec::new();
        write_text(&space, &mut text).unwrap();
        let s = String::from_utf8(text.clone()).unwrap();
        assert!(s.starts_with("3 4 feature\n"));
        let (kind, dim, rows) = read_text(text.as_slice()).unwrap();
        assert_eq!((kind, dim), (WordKind::Feature, 4));
        assert!(rows.iter().any(|r| r.0 == "American Restaurant_Noon"));
    }

    #[test]
    fn corrupt_sidecar_is_rejected() {
        let cfg = TrainConfig { dim: 2, epochs: 1, ..Default::default() };
        let space = train(&seqs(), WordKind::Location, &cfg).unwrap().space;
        let mut text = Vec::new();
        let mut side = Vec::new();
        write_text(&space, &mut text).unwrap();
        write_sidecar(&space, &mut side).unwrap();
        let mut bad = side.clone();
        bad[0] = b'X';
        assert!(read(text.as_slice(), bad.as_slice()).is_err());
        let truncated = &side[..side.len() - 3];
        assert!(read(text.as_slice(), truncated).is_err());
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("feature.model");
        let cfg = TrainConfig { dim: 3, epochs: 1, ..Default::default() };
        let space = train(&seqs(), WordKind::Feature, &cfg).unwrap().space;
        save(&space, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        assert_eq!(load(&path).unwrap(), space);
    }
}
