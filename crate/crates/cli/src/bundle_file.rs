//! The PZB1 tensor-bundle file: everything a pruning run needs for a set
//! of layers, in one seekless little-endian stream.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"PZB1"
//! u32     format version (1)
//! u64     generator seed
//! u8      generator kind (0 = gaussian, 1 = mlp)
//! u64     creation time, unix seconds (generators write 0)
//! u32     layer count
//! per layer:
//!   u16   name length, then that many UTF-8 bytes
//!   u32   rows, u32 cols, u32 calibration samples
//!   f32   W  (rows*cols, row-major)
//!   f32   G  (rows*cols, row-major)
//!   f32   Xcal (samples*cols, row-major)
//! ```
//!
//! Column norms are never stored; they are rederived on load so a bundle
//! can't carry stale ones.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use pruner_zero_core::bundle::{BundleKind, BundleMeta, TensorBundle};
use pruner_zero_core::prune::LayerStats;
use pruner_zero_core::Matrix;

pub const BUNDLE_MAGIC: [u8; 4] = *b"PZB1";
pub const BUNDLE_VERSION: u32 = 1;

fn write_matrix(w: &mut impl Write, m: &Matrix) -> Result<()> {
    for &v in m.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_bundle(path: &Path, bundle: &TensorBundle) -> Result<()> {
    let file = File::create(path)
        .with_context(|| format!("creating bundle file {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(&BUNDLE_MAGIC)?;
    w.write_all(&BUNDLE_VERSION.to_le_bytes())?;
    w.write_all(&bundle.meta.generator_seed.to_le_bytes())?;
    w.write_all(&[bundle.meta.kind.to_u8()])?;
    w.write_all(&bundle.meta.created_unix_s.to_le_bytes())?;
    w.write_all(&(bundle.layers.len() as u32).to_le_bytes())?;
    for layer in &bundle.layers {
        let name = layer.name().as_bytes();
        if name.len() > u16::MAX as usize {
            bail!("layer name too long for the bundle format: {} bytes", name.len());
        }
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(layer.w().rows() as u32).to_le_bytes())?;
        w.write_all(&(layer.w().cols() as u32).to_le_bytes())?;
        w.write_all(&(layer.xcal().rows() as u32).to_le_bytes())?;
        write_matrix(&mut w, layer.w())?;
        write_matrix(&mut w, layer.g())?;
        write_matrix(&mut w, layer.xcal())?;
    }
    w.flush().context("flushing bundle file")?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .with_context(|| format!("bundle truncated while reading {}", what))
}

fn read_u16(r: &mut impl Read, what: &str) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    let mut data = vec![0f32; rows * cols];
    let mut b = [0u8; 4];
    for v in data.iter_mut() {
        read_exact(r, &mut b, what)?;
        *v = f32::from_le_bytes(b);
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn read_bundle(path: &Path) -> Result<TensorBundle> {
    let file =
        File::open(path).with_context(|| format!("opening bundle file {}", path.display()))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != BUNDLE_MAGIC {
        bail!(
            "{} is not a tensor bundle (bad magic {:02x?})",
            path.display(),
            magic
        );
    }
    let version = read_u32(&mut r, "version")?;
    if version != BUNDLE_VERSION {
        bail!("unsupported bundle version {} (expected {})", version, BUNDLE_VERSION);
    }
    let generator_seed = read_u64(&mut r, "generator seed")?;
    let mut kind_byte = [0u8; 1];
    read_exact(&mut r, &mut kind_byte, "generator kind")?;
    let kind = BundleKind::from_u8(kind_byte[0])
        .with_context(|| format!("unknown generator kind {}", kind_byte[0]))?;
    let created_unix_s = read_u64(&mut r, "creation time")?;
    let n_layers = read_u32(&mut r, "layer count")? as usize;

    let mut layers = Vec::with_capacity(n_layers);
    for i in 0..n_layers {
        let name_len = read_u16(&mut r, "layer name length")? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, "layer name")?;
        let name = String::from_utf8(name_bytes)
            .with_context(|| format!("layer {} name is not UTF-8", i))?;
        let rows = read_u32(&mut r, "rows")? as usize;
        let cols = read_u32(&mut r, "cols")? as usize;
        let samples = read_u32(&mut r, "sample count")? as usize;
        let w = read_matrix(&mut r, rows, cols, "weights")?;
        let g = read_matrix(&mut r, rows, cols, "gradients")?;
        let xcal = read_matrix(&mut r, samples, cols, "calibration inputs")?;
        for (mat, label) in [(&w, "W"), (&g, "G"), (&xcal, "Xcal")] {
            if !mat.is_finite() {
                bail!("layer '{}' contains non-finite values in {}", name, label);
            }
        }
        let stats = LayerStats::new(name.clone(), w, g, xcal)
            .with_context(|| format!("layer '{}' has inconsistent dimensions", name))?;
        layers.push(stats);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        bail!("trailing bytes after the last layer");
    }
    Ok(TensorBundle {
        meta: BundleMeta {
            version,
            generator_seed,
            kind,
            created_unix_s,
        },
        layers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pruner_zero_core::bundle::gen_gaussian;

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pzb");
        let bundle = gen_gaussian(77, 2, 4, 6, 8, None).unwrap();
        write_bundle(&path, &bundle).unwrap();
        let back = read_bundle(&path).unwrap();
        assert_eq!(back.meta, bundle.meta);
        assert_eq!(back.layers.len(), 2);
        for (a, b) in back.layers.iter().zip(bundle.layers.iter()) {
            assert_eq!(a.name(), b.name());
            assert_eq!(a.w().data(), b.w().data());
            assert_eq!(a.g().data(), b.g().data());
            assert_eq!(a.xcal().data(), b.xcal().data());
            // Norms rederived, not stored: still equal.
            assert_eq!(a.xnorm(), b.xnorm());
        }
    }

    #[test]
    fn same_bundle_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pzb");
        let p2 = dir.path().join("b.pzb");
        write_bundle(&p1, &gen_gaussian(3, 1, 4, 4, 4, None).unwrap()).unwrap();
        write_bundle(&p2, &gen_gaussian(3, 1, 4, 4, 4, None).unwrap()).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.pzb");
        std::fs::write(&path, b"NOPE0000").unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(format!("{err:#}").contains("bad magic"), "{err:#}");
    }

    #[test]
    fn truncation_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pzb");
        write_bundle(&path, &gen_gaussian(1, 1, 4, 4, 4, None).unwrap()).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 7]).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(format!("{err:#}").contains("truncated"), "{err:#}");
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pzb");
        write_bundle(&path, &gen_gaussian(1, 1, 2, 2, 2, None).unwrap()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // First W value sits right after the fixed header + name ("layer0").
        let header = 4 + 4 + 8 + 1 + 8 + 4 + 2 + 6 + 4 + 4 + 4;
        bytes[header..header + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(format!("{err:#}").contains("non-finite"), "{err:#}");
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.pzb");
        write_bundle(&path, &gen_gaussian(1, 1, 2, 2, 2, None).unwrap()).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        let err = read_bundle(&path).unwrap_err();
        assert!(format!("{err:#}").contains("trailing"), "{err:#}");
    }
}
