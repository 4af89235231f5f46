//! The PZM1 mask file: per-layer keep/prune flags.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic   b"PZM1"
//! u32     format version (1)
//! u32     layer count
//! per layer:
//!   u16   name length, then that many UTF-8 bytes
//!   u32   rows, u32 cols
//!   u8    keep flag per weight (row-major; 1 = keep, 0 = prune)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pruner_zero_core::prune::SparsityMask;

pub const MASK_MAGIC: [u8; 4] = *b"PZM1";
pub const MASK_VERSION: u32 = 1;

pub fn write_mask_file(path: &Path, masks: &[(String, SparsityMask)]) -> Result<()> {
    let file =
        File::create(path).with_context(|| format!("creating mask file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&MASK_MAGIC)?;
    w.write_all(&MASK_VERSION.to_le_bytes())?;
    w.write_all(&(masks.len() as u32).to_le_bytes())?;
    for (name, mask) in masks {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            bail!("layer name too long for the mask format: {} bytes", bytes.len());
        }
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&(mask.rows() as u32).to_le_bytes())?;
        w.write_all(&(mask.cols() as u32).to_le_bytes())?;
        for r in 0..mask.rows() {
            for c in 0..mask.cols() {
                w.write_all(&[mask.keep(r, c) as u8])?;
            }
        }
    }
    w.flush().context("flushing mask file")?;
    Ok(())
}

pub fn read_mask_file(path: &Path) -> Result<Vec<(String, SparsityMask)>> {
    let file =
        File::open(path).with_context(|| format!("opening mask file {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).context("mask file truncated while reading magic")?;
    if magic != MASK_MAGIC {
        bail!("{} is not a mask file (bad magic {:02x?})", path.display(), magic);
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).context("mask file truncated while reading version")?;
    let version = u32::from_le_bytes(b4);
    if version != MASK_VERSION {
        bail!("unsupported mask version {} (expected {})", version, MASK_VERSION);
    }
    r.read_exact(&mut b4).context("mask file truncated while reading layer count")?;
    let n_layers = u32::from_le_bytes(b4) as usize;
    let mut out = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)
            .with_context(|| format!("mask file truncated at layer {} name length", i))?;
        let mut name_bytes = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name_bytes)
            .with_context(|| format!("mask file truncated at layer {} name", i))?;
        let name = String::from_utf8(name_bytes)
            .with_context(|| format!("layer {} name is not UTF-8", i))?;
        r.read_exact(&mut b4).context("mask file truncated while reading rows")?;
        let rows = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).context("mask file truncated while reading cols")?;
        let cols = u32::from_le_bytes(b4) as usize;
        let mut flags = vec![0u8; rows * cols];
        r.read_exact(&mut flags)
            .with_context(|| format!("mask file truncated in layer '{}' flags", name))?;
        let keep: Vec<bool> = flags
            .iter()
            .map(|&f| match f {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(anyhow::anyhow!(
                    "layer '{}' has invalid keep flag {}",
                    name,
                    other
                )),
            })
            .collect::<Result<_>>()?;
        out.push((name, SparsityMask::from_vec(rows, cols, keep)));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("trailing bytes after the last mask");
    }
    Ok(out)
}
