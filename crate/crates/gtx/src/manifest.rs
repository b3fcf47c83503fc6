//! `MANIFEST`: one `sha256  path` line per artifact.
//!
//! Wallclock columns change on every run, so the hash of a `.csv` skips
//! every column named `wallclock_s` and the hash of a `.jsonl` drops that
//! key from each record. Everything else is hashed byte for byte, which
//! makes single-threaded reruns produce identical manifests.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{artifact, io_at, Result};

pub const MANIFEST: &str = "MANIFEST";
pub const WALLCLOCK: &str = "wallclock_s";

/// Files never listed: the manifest itself and the resume journal.
pub const UNLISTED: [&str; 2] = [MANIFEST, crate::artifacts::PROGRESS];

fn canonical_csv(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut keep: Option<Vec<bool>> = None;
    for rec in r.records() {
        let rec = rec.map_err(|e| artifact(path, e))?;
        let k = keep.get_or_insert_with(|| rec.iter().map(|h| h != WALLCLOCK).collect());
        let row: Vec<&str> = rec.iter().zip(k.iter()).filter(|(_, &k)| k).map(|(f, _)| f).collect();
        w.write_record(&row).map_err(|e| artifact(path, e))?;
    }
    w.into_inner().map_err(|e| artifact(path, e.to_string()))
}

fn strip_key(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove(WALLCLOCK);
            m.values_mut().for_each(strip_key);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(strip_key),
        _ => {}
    }
}

fn canonical_jsonl(path: &Path, bytes: &[u8]) -> Result<Vec<u8>> {
    let text = std::str::from_utf8(bytes).map_err(|e| artifact(path, e))?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let mut v: serde_json::Value = serde_json::from_str(line).map_err(|e| artifact(path, e))?;
        strip_key(&mut v);
        out.extend_from_slice(v.to_string().as_bytes());
        out.push(b'\n');
    }
    Ok(out)
}

/// Hex sha256 of the canonical form of `path`.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    let body = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => canonical_csv(path, &bytes)?,
        Some("jsonl") => canonical_jsonl(path, &bytes)?,
        _ => bytes,
    };
    Ok(format!("{:x}", Sha256::digest(&body)))
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(io_at(dir))? {
        let entry = entry.map_err(io_at(dir))?;
        let p = entry.path();
        if p.is_dir() {
            walk(root, &p, out)?;
        } else {
            let rel = p.strip_prefix(root).expect("under root").to_path_buf();
            if !UNLISTED.iter().any(|u| rel == Path::new(u)) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

/// Manifest text for every file under `dir`, sorted by path.
pub fn manifest_text(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    walk(dir, dir, &mut files)?;
    files.sort();
    let mut out = String::new();
    for rel in files {
        let h = file_hash(&dir.join(&rel))?;
        let name = rel.to_string_lossy().replace('\\', "/");
        out.push_str(&format!("{h}  {name}\n"));
    }
    Ok(out)
}

pub fn write_manifest(dir: &Path) -> Result<()> {
    let text = manifest_text(dir)?;
    let p = dir.join(MANIFEST);
    fs::write(&p, text).map_err(io_at(p))
}

/// Files whose hash no longer matches the manifest.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let p = dir.join(MANIFEST);
    let text = fs::read_to_string(&p).map_err(io_at(&p))?;
    let mut bad = Vec::new();
    for line in text.lines() {
        let (h, name) = line.split_once("  ").ok_or_else(|| artifact(&p, format!("malformed line `{line}`")))?;
        let f = dir.join(name);
        if !f.exists() || file_hash(&f)? != h {
            bad.push(name.to_string());
        }
    }
    Ok(bad)
}
