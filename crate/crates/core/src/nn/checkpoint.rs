//! Binary model files.
//!
//! Layout, all little-endian: the 8-byte magic, `u32` format version, `u8`
//! input mode, `u64` vocabulary size, `u64` table width, `u32` bank count,
//! `(u32 F, u32 K)` per bank, `u32` dense input and output widths. The body
//! is raw `f64` arrays: frozen table (`Both` only), table, each bank's
//! weights then bias, dense weights, dense bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::conv::Conv1dBank;
use super::model::{CnnModel, EmbeddingInputMode};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"EHRCNN1\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankShape {
    pub filter_size: usize,
    pub filter_count: usize,
}

/// Everything in the binary header; also written as the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub input_mode: EmbeddingInputMode,
    pub vocab_size: usize,
    pub dim: usize,
    pub banks: Vec<BankShape>,
    pub dense_in: usize,
    pub dense_out: usize,
}

impl CheckpointHeader {
    pub fn of(model: &CnnModel) -> Self {
        CheckpointHeader {
            format_version: VERSION,
            input_mode: model.input_mode,
            vocab_size: model.vocab_size(),
            dim: model.dim(),
            banks: model.banks.iter().map(|b| BankShape { filter_size: b.filter_size, filter_count: b.filter_count }).collect(),
            dense_in: model.pooled_width(),
            dense_out: 2,
        }
    }
}

fn u32_of(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::format(format!("{what} {n} does not fit the checkpoint header")))
}

fn put_f64s(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_checkpoint(model: &CnnModel, w: &mut impl Write) -> Result<()> {
    let h = CheckpointHeader::of(model);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[h.input_mode.code()])?;
    w.write_all(&(h.vocab_size as u64).to_le_bytes())?;
    w.write_all(&(h.dim as u64).to_le_bytes())?;
    w.write_all(&u32_of(h.banks.len(), "bank count")?.to_le_bytes())?;
    for b in &h.banks {
        w.write_all(&u32_of(b.filter_size, "filter size")?.to_le_bytes())?;
        w.write_all(&u32_of(b.filter_count, "filter count")?.to_le_bytes())?;
    }
    w.write_all(&u32_of(h.dense_in, "dense width")?.to_le_bytes())?;
    w.write_all(&u32_of(h.dense_out, "dense width")?.to_le_bytes())?;
    if let Some(f) = &model.frozen {
        put_f64s(w, f.as_slice().expect("standard layout"))?;
    }
    put_f64s(w, model.table.as_slice().expect("standard layout"))?;
    for b in &model.banks {
        put_f64s(w, &b.weights)?;
        put_f64s(w, &b.bias)?;
    }
    put_f64s(w, &model.dense_weights)?;
    put_f64s(w, &model.dense_bias)?;
    Ok(())
}

struct Reader<R>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|_| Error::format("checkpoint is truncated"))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.bytes()?)).map_err(|_| Error::format("size overflows this platform"))
    }

    /// Grows the vector as values arrive, so a corrupt size cannot trigger
    /// a huge allocation up front.
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            out.push(f64::from_le_bytes(self.bytes()?));
        }
        Ok(out)
    }
}

pub fn read_checkpoint(r: impl Read) -> Result<CnnModel> {
    let mut r = Reader(r);
    if &r.bytes::<8>()? != MAGIC {
        return Err(Error::format("not a model checkpoint (bad magic)"));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let [code] = r.bytes::<1>()?;
    let mode = EmbeddingInputMode::from_code(code).ok_or_else(|| Error::format(format!("unknown input mode {code}")))?;
    let (v, d) = (r.u64()?, r.u64()?);
    let n_banks = r.u32()?;
    let mut shapes = Vec::new();
    for _ in 0..n_banks {
        let (f, k) = (r.u32()?, r.u32()?);
        if f == 0 || k == 0 {
            return Err(Error::format("bank with zero filter size or count"));
        }
        shapes.push((f, k));
    }
    let (dense_in, dense_out) = (r.u32()?, r.u32()?);
    let pooled: usize = shapes.iter().map(|s| s.1).sum();
    if v == 0 || d == 0 || n_banks == 0 || dense_in != pooled || dense_out != 2 {
        return Err(Error::format("inconsistent checkpoint header"));
    }
    let cells = v.checked_mul(d).ok_or_else(|| Error::format("table size overflows"))?;
    let table_of = |xs: Vec<f64>| Array2::from_shape_vec((v, d), xs).map_err(|e| Error::format(e.to_string()));
    let frozen = if mode == EmbeddingInputMode::Both { Some(table_of(r.f64s(cells)?)?) } else { None };
    let table = table_of(r.f64s(cells)?)?;
    let input_dim = if frozen.is_some() { 2 * d } else { d };
    let mut banks = Vec::new();
    for (f, k) in shapes {
        let weights = r.f64s(k * f * input_dim)?;
        let bias = r.f64s(k)?;
        banks.push(Conv1dBank { filter_size: f, filter_count: k, input_dim, weights, bias });
    }
    let dense_weights = r.f64s(pooled * 2)?;
    let b = r.f64s(2)?;
    let mut rest = [0u8; 1];
    if r.0.read(&mut rest)? != 0 {
        return Err(Error::format("trailing bytes after checkpoint body"));
    }
    Ok(CnnModel { input_mode: mode, table, frozen, banks, dense_weights, dense_bias: [b[0], b[1]] })
}

/// Writes `path` and a JSON copy of the header next to it (`.json`).
pub fn save_checkpoint(model: &CnnModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    let sidecar = serde_json::to_string_pretty(&CheckpointHeader::of(model)).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(path.with_extension("json"), sidecar + "\n")?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CnnModel> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::random_table;
    use crate::nn::ModelConfig;

    fn model(mode: EmbeddingInputMode) -> CnnModel {
        let cfg = ModelConfig { input_mode: mode, dim: 5, filter_sizes: vec![2, 4], filter_count: 3, seed: 7, ..Default::default() };
        CnnModel::new(&cfg, 9, Some(&random_table(9, 5, 1))).unwrap()
    }

    #[test]
    fn round_trip_every_mode() {
        for mode in EmbeddingInputMode::ALL {
            let m = model(mode);
            let mut buf = Vec::new();
            write_checkpoint(&m, &mut buf).unwrap();
            assert_eq!(&buf[..8], MAGIC);
            assert_eq!(read_checkpoint(buf.as_slice()).unwrap(), m);
        }
    }

    #[test]
    fn files_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.bin");
        let m = model(EmbeddingInputMode::Both);
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
        let header: CheckpointHeader = serde_json::from_str(&std::fs::read_to_string(dir.path().join("model.json")).unwrap()).unwrap();
        assert_eq!(header, CheckpointHeader::of(&m));
        assert_eq!(header.dense_in, 6);
    }

    #[test]
    fn corrupt_inputs() {
        let m = model(EmbeddingInputMode::Rand);
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        assert!(matches!(read_checkpoint(&buf[..buf.len() - 3]), Err(Error::Format(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).is_err());
        let mut longer = buf.clone();
        longer.push(0);
        assert!(read_checkpoint(longer.as_slice()).is_err());
        let mut mode = buf;
        mode[12] = 9;
        assert!(read_checkpoint(mode.as_slice()).is_err());
    }
}
