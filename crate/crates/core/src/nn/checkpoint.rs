//! Checkpoint serialization.
//!
//! A checkpoint is a single little-endian binary file:
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FDSNET01"
//! 8       4     u32 format version (1)
//! 12      4     u32 block kind (0 strided, 1 conv-pool, 2 conv-resize, 3 resize-conv)
//! 16      4     u32 scale numerator p
//! 20      4     u32 scale denominator q
//! 24      8     u64 build seed
//! 32      8     u64 optimizer iterations applied
//! 40      4     u32 number of convolution stages
//! 44      —     stages, in order
//! ```
//!
//! Each stage is `u32 kh, kw, in_ch, out_ch, stride` followed by
//! `kh·kw·in_ch·out_ch` weight `f32`s in `[ky][kx][in_ch][out_ch]` order and
//! `out_ch` bias `f32`s. All floats are IEEE-754 little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::conv::ConvLayer;
use crate::nn::network::{BlockKind, Network};
use crate::tensor::RationalScale;

const MAGIC: &[u8; 8] = b"FDSNET01";
const VERSION: u32 = 1;
// Refuse absurd stage geometries instead of attempting the allocation.
const MAX_STAGE_WEIGHTS: usize = 1 << 28;
const MAX_STAGES: u32 = 1024;

fn kind_code(kind: BlockKind) -> u32 {
    match kind {
        BlockKind::StridedConv => 0,
        BlockKind::ConvPool => 1,
        BlockKind::ConvResize => 2,
        BlockKind::ResizeConv => 3,
    }
}

fn kind_from_code(code: u32) -> Result<BlockKind> {
    match code {
        0 => Ok(BlockKind::StridedConv),
        1 => Ok(BlockKind::ConvPool),
        2 => Ok(BlockKind::ConvResize),
        3 => Ok(BlockKind::ResizeConv),
        other => Err(Error::TruncatedFile(format!("unknown block kind code {other}"))),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|_| Error::TruncatedFile(what.to_string()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|_| Error::TruncatedFile(what.to_string()))?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f32_vec(r: &mut impl Read, len: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; len * 4];
    r.read_exact(&mut bytes).map_err(|_| Error::TruncatedFile(what.to_string()))?;
    let vals: Vec<f32> =
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    if let Some(i) = vals.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    Ok(vals)
}

impl Network {
    /// Writes all parameters and identifying metadata to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        write_u32(&mut w, VERSION)?;
        write_u32(&mut w, kind_code(self.kind))?;
        write_u32(&mut w, self.scale.p())?;
        write_u32(&mut w, self.scale.q())?;
        write_u64(&mut w, self.seed)?;
        write_u64(&mut w, self.iterations)?;
        write_u32(&mut w, self.convs.len() as u32)?;
        for c in &self.convs {
            for v in [c.kh, c.kw, c.in_ch, c.out_ch, c.stride] {
                write_u32(&mut w, v as u32)?;
            }
            for &x in &c.weights {
                w.write_all(&x.to_le_bytes())?;
            }
            for &x in &c.bias {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Network::save`]; validates the header
    /// and that every parameter is finite.
    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| Error::TruncatedFile("magic".into()))?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let kind = kind_from_code(read_u32(&mut r, "block kind")?)?;
        let p = read_u32(&mut r, "scale p")?;
        let q = read_u32(&mut r, "scale q")?;
        let scale = RationalScale::new(p, q)?;
        let seed = read_u64(&mut r, "seed")?;
        let iterations = read_u64(&mut r, "iterations")?;
        let n_stages = read_u32(&mut r, "stage count")?;
        if n_stages < 2 || n_stages > MAX_STAGES {
            return Err(Error::TruncatedFile(format!("implausible stage count {n_stages}")));
        }
        let mut convs = Vec::with_capacity(n_stages as usize);
        for i in 0..n_stages {
            let what = format!("stage {i}");
            let kh = read_u32(&mut r, &what)? as usize;
            let kw = read_u32(&mut r, &what)? as usize;
            let in_ch = read_u32(&mut r, &what)? as usize;
            let out_ch = read_u32(&mut r, &what)? as usize;
            let stride = read_u32(&mut r, &what)? as usize;
            let n_weights = kh
                .checked_mul(kw)
                .and_then(|v| v.checked_mul(in_ch))
                .and_then(|v| v.checked_mul(out_ch))
                .filter(|&v| v > 0 && v <= MAX_STAGE_WEIGHTS)
                .ok_or_else(|| Error::TruncatedFile(format!("{what}: bad geometry")))?;
            if kh % 2 != 1 || kw % 2 != 1 || stride == 0 {
                return Err(Error::TruncatedFile(format!("{what}: bad geometry")));
            }
            let weights = read_f32_vec(&mut r, n_weights, &what)?;
            let bias = read_f32_vec(&mut r, out_ch, &what)?;
            convs.push(ConvLayer { kh, kw, in_ch, out_ch, stride, weights, bias });
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::TruncatedFile("trailing bytes after last stage".into()));
        }
        Ok(Network::assemble(kind, scale, convs, seed, iterations))
    }
}
