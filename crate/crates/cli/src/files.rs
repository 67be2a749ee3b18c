//! File helpers that attach the offending path to every error.

use std::path::Path;

use oled_core::oimg::Oimg;
use serde::Serialize;

use crate::error::{CliError, Result};

fn with_path(path: &Path) -> impl FnOnce(oled_core::Error) -> CliError + '_ {
    move |source| match source {
        oled_core::Error::Io(e) => CliError::Io { path: path.to_path_buf(), source: e },
        other => CliError::File { path: path.to_path_buf(), source: other },
    }
}

pub fn load_oimg(path: &Path) -> Result<Oimg> {
    Oimg::load(path).map_err(with_path(path))
}

pub fn save_oimg(path: &Path, o: &Oimg) -> Result<()> {
    o.save(path).map_err(with_path(path))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(CliError::io(path))
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(CliError::io(path))?;
    Ok(csv::Writer::from_writer(f))
}
