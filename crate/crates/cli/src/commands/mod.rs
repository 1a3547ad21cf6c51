//! Subcommand implementations.

pub mod augment;
pub mod bench;
pub mod gradcheck;
pub mod inspect;

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

pub(crate) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}
