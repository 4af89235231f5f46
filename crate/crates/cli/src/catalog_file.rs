//! Loading opposing-operation catalogs from disk.

use std::path::Path;

use anyhow::{Context, Result};
use pruner_zero_core::simplify::OOSCatalog;

/// `None` means the built-in default catalog.
pub fn load_catalog(path: Option<&Path>) -> Result<OOSCatalog> {
    match path {
        None => Ok(OOSCatalog::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading catalog file {}", p.display()))?;
            OOSCatalog::parse(&text)
                .map_err(|e| anyhow::anyhow!("{}", e))
                .with_context(|| format!("parsing catalog file {}", p.display()))
        }
    }
}
