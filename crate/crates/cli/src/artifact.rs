//! Versioned binary Q-table files and the run manifest.
//!
//! A table file is little-endian: the magic `CSQT`, format version, horizon,
//! automaton states, cell slots, external inputs, internal actions, the
//! model, grid and specification digests (32 bytes each), the block count,
//! then per allocated block its `(k, q)`, a presence byte per player and the
//! block values.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use compsynth_core::learner::{QTable, TableShape};
use serde::{Deserialize, Serialize};

use crate::config::{bytes_hex, hex_bytes, Fingerprint};
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"CSQT";
pub const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.toml";

pub struct Artifact {
    pub fingerprint: Fingerprint,
    pub table: QTable,
}

fn put_u32(w: &mut impl Write, v: usize) -> std::io::Result<()> {
    w.write_all(&(v as u32).to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> anyhow::Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn put_block(w: &mut impl Write, block: Option<&[f64]>) -> std::io::Result<()> {
    match block {
        None => w.write_all(&[0]),
        Some(values) => {
            w.write_all(&[1])?;
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        }
    }
}

fn get_block(r: &mut impl Read, len: usize) -> anyhow::Result<Option<Vec<f64>>> {
    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    match flag[0] {
        0 => Ok(None),
        1 => {
            let mut raw = vec![0u8; len * 8];
            r.read_exact(&mut raw)?;
            Ok(Some(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ))
        }
        other => bail!("bad block flag {other}"),
    }
}

pub fn write_table(path: &Path, art: &Artifact) -> CliResult<()> {
    let file = fs::File::create(path).map_err(|e| CliError::unwritable(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        let s = art.table.shape();
        w.write_all(MAGIC)?;
        put_u32(w, VERSION as usize)?;
        for v in [s.horizon, s.n_q, s.n_slots, s.n_u, s.n_w] {
            put_u32(w, v)?;
        }
        for h in [
            &art.fingerprint.model,
            &art.fingerprint.grid,
            &art.fingerprint.spec,
        ] {
            w.write_all(&hex_bytes(h))?;
        }
        let blocks: Vec<(usize, usize)> = art.table.allocated().collect();
        put_u32(w, blocks.len())?;
        for (k, q) in blocks {
            put_u32(w, k)?;
            put_u32(w, q)?;
            put_block(w, art.table.max_block(k, q))?;
            put_block(w, art.table.min_block(k, q))?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| CliError::unwritable(path, e))
}

pub fn read_table(path: &Path) -> CliResult<Artifact> {
    let file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .with_context(|| format!("{} is truncated", path.display()))?;
    if &magic != MAGIC {
        return Err(CliError::Mismatch(format!(
            "{} is not a Q-table file",
            path.display()
        )));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION as usize {
        return Err(CliError::Mismatch(format!(
            "{} has format version {version}, expected {VERSION}",
            path.display()
        )));
    }
    let read = |r: &mut BufReader<fs::File>| -> anyhow::Result<Artifact> {
        let shape = TableShape {
            horizon: get_u32(r)?,
            n_q: get_u32(r)?,
            n_slots: get_u32(r)?,
            n_u: get_u32(r)?,
            n_w: get_u32(r)?,
        };
        let mut digests = [[0u8; 32]; 3];
        for d in digests.iter_mut() {
            r.read_exact(d)?;
        }
        let fingerprint = Fingerprint {
            model: bytes_hex(&digests[0]),
            grid: bytes_hex(&digests[1]),
            spec: bytes_hex(&digests[2]),
        };
        let mut table = QTable::new(shape);
        let n_blocks = get_u32(r)?;
        for _ in 0..n_blocks {
            let (k, q) = (get_u32(r)?, get_u32(r)?);
            if let Some(b) = get_block(r, shape.max_block_len())? {
                table.set_max_block(k, q, b)?;
            }
            if let Some(b) = get_block(r, shape.min_block_len())? {
                table.set_min_block(k, q, b)?;
            }
        }
        Ok(Artifact { fingerprint, table })
    };
    Ok(read(&mut r).with_context(|| format!("reading {}", path.display()))?)
}

/// Index of the tables learned in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub config_sha256: String,
    #[serde(rename = "table")]
    pub tables: Vec<TableEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub file: String,
    pub subsystems: Vec<usize>,
    pub horizon: usize,
    pub episodes: u64,
    pub model_sha256: String,
    pub grid_sha256: String,
    pub spec_sha256: String,
}

impl TableEntry {
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint {
            model: self.model_sha256.clone(),
            grid: self.grid_sha256.clone(),
            spec: self.spec_sha256.clone(),
        }
    }
}

pub fn write_manifest(dir: &Path, m: &Manifest) -> CliResult<()> {
    let path = dir.join(MANIFEST);
    let text = toml::to_string(m).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| CliError::unwritable(path, e))
}

pub fn read_manifest(dir: &Path) -> CliResult<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path)
        .with_context(|| format!("cannot read {}; run `learn` first", path.display()))?;
    Ok(toml::from_str(&text).with_context(|| format!("malformed {}", path.display()))?)
}

pub fn table_path(dir: &Path, class: usize) -> PathBuf {
    dir.join(format!("table-{class}.bin"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_round_trip() {
        let shape = TableShape {
            horizon: 2,
            n_q: 3,
            n_slots: 4,
            n_u: 2,
            n_w: 3,
        };
        let mut table = QTable::new(shape);
        table
            .set_max_block(1, 2, (0..8).map(|i| i as f64 * 0.125).collect())
            .unwrap();
        table
            .set_min_block(1, 2, (0..24).map(|i| -(i as f64)).collect())
            .unwrap();
        table.set_min_block(0, 0, vec![0.5; 24]).unwrap();
        let fp = Fingerprint {
            model: "ab".repeat(32),
            grid: "01".repeat(32),
            spec: "ff".repeat(32),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        write_table(
            &path,
            &Artifact {
                fingerprint: fp.clone(),
                table: table.clone(),
            },
        )
        .unwrap();
        let back = read_table(&path).unwrap();
        assert_eq!(back.fingerprint, fp);
        assert_eq!(back.table, table);
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bin");
        fs::write(&path, b"nope, not a table").unwrap();
        assert_eq!(read_table(&path).err().unwrap().exit_code(), 4);
    }
}
