//! `id,raw_path,srgb_path,wb_r,wb_g,wb_b` manifests.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: [&str; 6] = ["id", "raw_path", "srgb_path", "wb_r", "wb_g", "wb_b"];

/// One manifest row. Paths are resolved against the manifest's directory
/// when loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub raw_path: PathBuf,
    pub srgb_path: PathBuf,
    pub wb_gains: [f64; 3],
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

/// Parses manifest text; `path` is used for path resolution and messages.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let base = base_dir(path);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rd.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if !headers.is_empty() && headers.iter().ne(HEADER) {
        return Err(parse_err(1, format!("expected header {}", HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != HEADER.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", HEADER.len(), rec.len()),
            ));
        }
        let mut gains = [0.0; 3];
        for (k, g) in gains.iter_mut().enumerate() {
            let field = HEADER[3 + k];
            let raw = &rec[3 + k];
            *g = raw
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("field {field}: {raw:?} is not a number")))?;
            if !(g.is_finite() && *g > 0.0) {
                return Err(parse_err(
                    line,
                    format!("field {field}: gain must be positive and finite, got {raw}"),
                ));
            }
        }
        if rec[0].is_empty() {
            return Err(parse_err(line, "field id is empty".into()));
        }
        out.push(ManifestEntry {
            id: rec[0].to_string(),
            raw_path: base.join(&rec[1]),
            srgb_path: base.join(&rec[2]),
            wb_gains: gains,
        });
    }
    Ok(out)
}

/// Writes `entries`; paths under the manifest directory are stored relative
/// to it so the dataset can be moved as a whole.
pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = base_dir(path);
    let rel = |p: &Path| -> Result<String> {
        let p = p.strip_prefix(base).unwrap_or(p);
        p.to_str()
            .map(str::to_string)
            .ok_or_else(|| Error::config(format!("path {} is not valid utf-8", p.display())))
    };
    let mut wr = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| Error::Format(format!("writing manifest: {e}"));
    wr.write_record(HEADER).map_err(err)?;
    for e in entries {
        let [r, g, b] = e.wb_gains.map(|v| format!("{v:?}"));
        wr.write_record([e.id.clone(), rel(&e.raw_path)?, rel(&e.srgb_path)?, r, g, b])
            .map_err(err)?;
    }
    let bytes = wr
        .into_inner()
        .map_err(|e| Error::Format(format!("writing manifest: {e}")))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
