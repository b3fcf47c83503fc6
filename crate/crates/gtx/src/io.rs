//! File formats: elevation grids, pair sets, CSV tables, line-delimited
//! JSON logs and model checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use gtx_core::model::{Model, ModelConfig};
use gtx_core::terrain::ElevationGrid;
use gtx_core::train::Pair;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{artifact, io_at, Result};

pub fn load_dem(path: &Path) -> Result<ElevationGrid> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    ElevationGrid::parse(&text).map_err(|e| artifact(path, e))
}

pub fn save_dem(path: &Path, grid: &ElevationGrid) -> Result<()> {
    fs::write(path, grid.to_ascii()).map_err(io_at(path))
}

/// Writes `rows` with a header taken from the field names. An empty table
/// gets the header `header` so that readers still see the schema.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| artifact(path, e))?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| artifact(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| artifact(path, e))?;
    }
    w.flush().map_err(io_at(path))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| artifact(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| artifact(path, e))).collect()
}

pub fn save_pairs(path: &Path, pairs: &[Pair]) -> Result<()> {
    write_csv(path, &["src", "dst", "spd"], pairs)
}

pub fn load_pairs(path: &Path) -> Result<Vec<Pair>> {
    read_csv(path)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| artifact(path, e))?);
        out.push('\n');
    }
    fs::write(path, out).map_err(io_at(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| artifact(path, format!("line {}: {e}", i + 1))))
        .collect()
}

/// Appends one JSON line and flushes, so a crash loses at most this line.
pub fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> Result<()> {
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_at(path))?;
    let line = serde_json::to_string(row).map_err(|e| artifact(path, e))?;
    writeln!(f, "{line}").map_err(io_at(path))?;
    f.flush().map_err(io_at(path))
}

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"GTTX1";

/// Header of a checkpoint: what is needed to rebuild the model, plus
/// free-form extras such as the distance scale of an SPD model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub in_dim: usize,
    pub layout: Vec<(String, (usize, usize))>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// Magic, little-endian `u64` header length, JSON header, then every
/// weight as a little-endian `f64` in declaration order.
pub fn checkpoint_bytes(model: &Model, extra: serde_json::Value) -> Vec<u8> {
    let header = CheckpointHeader {
        model: model.cfg.clone(),
        in_dim: model.in_dim,
        layout: model.store.layout(),
        extra,
    };
    let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(13 + json.len() + 8 * model.store.num_scalars());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, _, t) in model.store.iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(path: &Path, model: &Model, extra: serde_json::Value) -> Result<()> {
    fs::write(path, checkpoint_bytes(model, extra)).map_err(io_at(path))
}

/// Rebuilds a model from checkpoint bytes; `path` only labels errors.
pub fn parse_checkpoint(bytes: &[u8], path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bad = |m: &str| artifact(path, format!("corrupt checkpoint: {m}"));
    if bytes.len() < 13 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(bad("missing GTTX1 magic"));
    }
    let len = u64::from_le_bytes(bytes[5..13].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(13..).ok_or_else(|| bad("truncated"))?;
    if len > body.len() {
        return Err(bad("header runs past the end"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&body[..len]).map_err(|e| artifact(path, e))?;
    let mut model = Model::new(&header.model, header.in_dim, 0).map_err(|e| artifact(path, e))?;
    if model.store.layout() != header.layout {
        return Err(bad("parameter layout does not match the model config"));
    }
    let mut weights = body[len..].chunks_exact(8);
    if weights.len() != model.store.num_scalars() || !weights.remainder().is_empty() {
        return Err(bad("weight count does not match the layout"));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        for v in model.store.get_mut(id).data_mut() {
            *v = f64::from_le_bytes(weights.next().expect("counted").try_into().expect("8 bytes"));
        }
    }
    Ok((model, header))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointHeader)> {
    let bytes = fs::read(path).map_err(io_at(path))?;
    parse_checkpoint(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gtx_core::model::TaskHead;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            head: TaskHead::Embed { dim: 4 },
            ..ModelConfig::default()
        };
        let m = Model::new(&cfg, 3, 7).unwrap();
        let bytes = checkpoint_bytes(&m, serde_json::json!({"spd_scale": 2.5}));
        let (back, h) = parse_checkpoint(&bytes, Path::new("m.gttx")).unwrap();
        assert_eq!(h.extra["spd_scale"], 2.5);
        for ((_, _, a), (_, _, b)) in m.store.iter().zip(back.store.iter()) {
            assert_eq!(a, b);
        }
        assert_eq!(checkpoint_bytes(&back, h.extra), bytes);
    }

    #[test]
    fn corrupt_checkpoints_are_named() {
        let m = Model::new(&ModelConfig::default(), 2, 1).unwrap();
        let mut bytes = checkpoint_bytes(&m, serde_json::Value::Null);
        bytes.pop();
        let err = parse_checkpoint(&bytes, Path::new("broken.gttx")).unwrap_err().to_string();
        assert!(err.contains("broken.gttx"), "{err}");
        assert!(parse_checkpoint(b"GTTX0", Path::new("x")).is_err());
    }

    #[test]
    fn pairs_and_dem_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = vec![Pair { src: 0, dst: 3, spd: 1.25 }, Pair { src: 2, dst: 1, spd: 0.1 + 0.2 }];
        let p = dir.path().join("pairs.csv");
        save_pairs(&p, &pairs).unwrap();
        assert_eq!(load_pairs(&p).unwrap(), pairs);
        assert!(fs::read_to_string(&p).unwrap().starts_with("src,dst,spd\n"));

        let grid = ElevationGrid::new(2, 3, 0.5, vec![1.0, 2.0, 3.5, -1.0, 0.1 + 0.2, 7.0]).unwrap();
        let d = dir.path().join("hill.dem");
        save_dem(&d, &grid).unwrap();
        assert_eq!(load_dem(&d).unwrap(), grid);
    }
}
