//! Parameter checkpoints: "SWNM1" header, architecture + head sizing, a
//! per-block name/shape/frozen table, then a little-endian f32 payload.
//! Values live in f64 in memory and are quantized to f32 on save, so
//! save(load(file)) reproduces the file byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Result, SwanError};

use super::params::{ArchConfig, ModelParams, Variant};

const MAGIC: &[u8; 5] = b"SWNM1";
const VERSION: u32 = 1;

fn fail<T>(offset: u64, msg: impl Into<String>) -> Result<T> {
    Err(SwanError::Format {
        offset,
        msg: msg.into(),
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams) -> Result<u64> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let mut written: u64 = 0;
    let mut put = |w: &mut std::io::BufWriter<std::fs::File>, b: &[u8]| -> Result<()> {
        w.write_all(b)?;
        written += b.len() as u64;
        Ok(())
    };
    put(&mut w, MAGIC)?;
    put(&mut w, &VERSION.to_le_bytes())?;
    let a = &params.arch;
    for v in [
        a.hidden_dim,
        a.layers,
        a.heads,
        a.graph_layers,
        a.graph_dim,
        a.lora_rank,
    ] {
        put(&mut w, &(v as u32).to_le_bytes())?;
    }
    put(&mut w, &a.lora_alpha.to_le_bytes())?;
    put(&mut w, &a.lora_dropout.to_le_bytes())?;
    put(&mut w, &[variant_tag(a.variant)])?;
    for v in [params.antennas, params.segments, params.k_c, params.k_s] {
        put(&mut w, &(v as u32).to_le_bytes())?;
    }
    put(&mut w, &params.init_seed.to_le_bytes())?;
    put(&mut w, &(params.store.len() as u32).to_le_bytes())?;
    for blk in &params.store.blocks {
        let name = blk.name.as_bytes();
        put(&mut w, &(name.len() as u16).to_le_bytes())?;
        put(&mut w, name)?;
        put(&mut w, &(blk.value.nrows() as u32).to_le_bytes())?;
        put(&mut w, &(blk.value.ncols() as u32).to_le_bytes())?;
        put(&mut w, &[u8::from(blk.frozen)])?;
    }
    for blk in &params.store.blocks {
        put(&mut w, &blk.payload())?;
    }
    w.flush()?;
    Ok(written)
}

struct Reader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => {
                self.offset += n as u64;
                Ok(buf)
            }
            Err(_) => fail(self.offset, format!("truncated: wanted {n} more bytes")),
        }
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
}

fn variant_tag(v: Variant) -> u8 {
    match v {
        Variant::Full => 0,
        Variant::TransformerNoGraph => 1,
        Variant::SharedHead => 2,
        Variant::Mlp => 3,
    }
}

fn variant_from_tag(t: u8, offset: u64) -> Result<Variant> {
    match t {
        0 => Ok(Variant::Full),
        1 => Ok(Variant::TransformerNoGraph),
        2 => Ok(Variant::SharedHead),
        3 => Ok(Variant::Mlp),
        other => fail(offset, format!("unknown variant tag {other}")),
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inner: std::io::BufReader::new(file),
        offset: 0,
    };
    if r.bytes(5)? != MAGIC {
        return fail(0, "bad magic (expected SWNM1)");
    }
    let version = r.u32()?;
    if version != VERSION {
        return fail(r.offset, format!("unsupported version {version}"));
    }
    let hidden_dim = r.u32()? as usize;
    let layers = r.u32()? as usize;
    let heads = r.u32()? as usize;
    let graph_layers = r.u32()? as usize;
    let graph_dim = r.u32()? as usize;
    let lora_rank = r.u32()? as usize;
    let lora_alpha = r.f64()?;
    let lora_dropout = r.f64()?;
    let variant = variant_from_tag(r.bytes(1)?[0], r.offset)?;
    let arch = ArchConfig {
        hidden_dim,
        layers,
        heads,
        graph_layers,
        graph_dim,
        lora_rank,
        lora_alpha,
        lora_dropout,
        variant,
    };
    let antennas = r.u32()? as usize;
    let segments = r.u32()? as usize;
    let k_c = r.u32()? as usize;
    let k_s = r.u32()? as usize;
    let init_seed = r.u64()?;

    let mut params = ModelParams::init(&arch, antennas, segments, k_c, k_s, init_seed)?;
    let n_blocks = r.u32()? as usize;
    if n_blocks != params.store.len() {
        return fail(
            r.offset,
            format!(
                "block table has {n_blocks} entries, layout expects {}",
                params.store.len()
            ),
        );
    }
    let mut shapes = Vec::with_capacity(n_blocks);
    for blk in &params.store.blocks {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| SwanError::Format {
                offset: r.offset,
                msg: "block name is not utf-8".into(),
            })?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let frozen = r.bytes(1)?[0] != 0;
        if name != blk.name || (rows, cols) != blk.value.dim() || frozen != blk.frozen {
            return fail(
                r.offset,
                format!(
                    "block table mismatch: file has {name} {rows}x{cols} frozen={frozen}, \
                     layout expects {} {:?} frozen={}",
                    blk.name,
                    blk.value.dim(),
                    blk.frozen
                ),
            );
        }
        shapes.push((rows, cols));
    }
    for (blk, (rows, cols)) in params.store.blocks.iter_mut().zip(shapes) {
        let raw = r.bytes(rows * cols * 4)?;
        let mut value = Array2::zeros((rows, cols));
        for (i, v) in value.iter_mut().enumerate() {
            let b: [u8; 4] = raw[i * 4..i * 4 + 4].try_into().unwrap();
            *v = f32::from_le_bytes(b) as f64;
        }
        blk.value = value;
    }
    let mut trailing = [0u8; 1];
    if r.inner.read(&mut trailing)? != 0 {
        return fail(r.offset, "trailing bytes after the payload");
    }
    Ok(params)
}
