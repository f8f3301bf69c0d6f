//! Fitting checkpoints: `checkpoint.json` (metadata and network weights),
//! `grids.bin` (voxel grid then planes x, y, z as little-endian `f64`,
//! `C` interleaved channels per cell) and `loss.log`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::mlp::DeferredMlp;
use crate::field::{FieldGrids, GridDims, QuantizationSpec, Storage, VoxelGrid, CHANNELS};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const GRIDS_FILE: &str = "grids.bin";
pub const LOSS_FILE: &str = "loss.log";

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    /// PSNR of the batch loss, `10 log10(1 / loss)`.
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Continuous, dense grids.
    pub grids: FieldGrids,
    pub mlp: DeferredMlp,
    pub quantization_aware: bool,
    pub seed: u64,
    pub history: Vec<LossRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    voxel_resolution: usize,
    plane_resolution: usize,
    channels: usize,
    quantization: QuantizationSpec,
    quantization_aware: bool,
    seed: u64,
    iterations: usize,
    mlp: DeferredMlp,
}

fn continuous(s: &Storage) -> Result<&[f64]> {
    match s {
        Storage::Continuous(v) => Ok(v),
        Storage::QuantizedBytes(_) => Err(Error::InvalidConfig("checkpoint grids must be continuous".into())),
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint, dir: &Path) -> Result<()> {
    let g = &ckpt.grids;
    let VoxelGrid::Dense(voxel) = &g.voxel else {
        return Err(Error::InvalidConfig("checkpoint voxel grid must be dense".into()));
    };
    let mut bytes = Vec::with_capacity((g.dims.voxel_cells() + 3 * g.dims.plane_cells()) * CHANNELS * 8);
    for s in std::iter::once(voxel).chain(g.planes.iter()) {
        for v in continuous(s)? {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let meta = CheckpointMeta {
        voxel_resolution: g.dims.voxel_res,
        plane_resolution: g.dims.plane_res,
        channels: CHANNELS,
        quantization: g.quant,
        quantization_aware: ckpt.quantization_aware,
        seed: ckpt.seed,
        iterations: ckpt.history.last().map_or(0, |r| r.iteration + 1),
        mlp: ckpt.mlp.clone(),
    };
    let mut log = String::from("# iteration loss psnr\n");
    for r in &ckpt.history {
        let _ = writeln!(log, "{} {:.9e} {:.4}", r.iteration, r.loss, r.psnr);
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Manifest(e.to_string()))?;
    for (name, data) in [(GRIDS_FILE, bytes), (LOSS_FILE, log.into_bytes()), (CHECKPOINT_FILE, json.into_bytes())] {
        let path = dir.join(name);
        fs::write(&path, data).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::io(path, e)
        }
    })
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join(CHECKPOINT_FILE);
    let meta: CheckpointMeta =
        serde_json::from_slice(&read_file(&meta_path)?).map_err(|e| Error::Manifest(e.to_string()))?;
    if meta.channels != CHANNELS {
        return Err(Error::Manifest(format!("checkpoint has {} channels, expected {CHANNELS}", meta.channels)));
    }
    let dims = GridDims::new(meta.voxel_resolution, meta.plane_resolution)?;
    let bytes = read_file(&dir.join(GRIDS_FILE))?;
    let expected = (dims.voxel_cells() + 3 * dims.plane_cells()) * CHANNELS * 8;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch { file: GRIDS_FILE.into(), expected, found: bytes.len() });
    }
    let mut values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
    let mut take = |cells: usize| Storage::Continuous(values.by_ref().take(cells * CHANNELS).collect());
    let voxel = take(dims.voxel_cells());
    let planes = [take(dims.plane_cells()), take(dims.plane_cells()), take(dims.plane_cells())];
    let grids = FieldGrids::new(dims, meta.quantization, VoxelGrid::Dense(voxel), planes)?;
    let mlp = DeferredMlp::new(meta.mlp.layers)?;

    let log_path = dir.join(LOSS_FILE);
    let log = String::from_utf8_lossy(&read_file(&log_path)?).into_owned();
    let mut history = Vec::new();
    for (i, line) in log.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = || Error::Parse { path: log_path.clone(), line: i + 1, message: "expected `iteration loss psnr`".into() };
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(err());
        }
        history.push(LossRecord {
            iteration: parts[0].parse().map_err(|_| err())?,
            loss: parts[1].parse().map_err(|_| err())?,
            psnr: parts[2].parse().map_err(|_| err())?,
        });
    }
    Ok(Checkpoint { grids, mlp, quantization_aware: meta.quantization_aware, seed: meta.seed, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let dims = GridDims::new(3, 4).unwrap();
        let mut grids = FieldGrids::zeros(dims);
        if let VoxelGrid::Dense(Storage::Continuous(v)) = &mut grids.voxel {
            v.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).sin() * 3.0);
        }
        let ckpt = Checkpoint {
            grids,
            mlp: DeferredMlp::init(9),
            quantization_aware: true,
            seed: 9,
            history: vec![LossRecord { iteration: 0, loss: 0.25, psnr: 6.0206 }],
        };
        let dir = tempfile::tempdir().unwrap();
        write_checkpoint(&ckpt, dir.path()).unwrap();
        let back = read_checkpoint(dir.path()).unwrap();
        assert_eq!(back.grids, ckpt.grids);
        assert_eq!(back.mlp, ckpt.mlp);
        assert_eq!(back.history, ckpt.history);
        assert!(back.quantization_aware);
    }

    #[test]
    fn missing_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_checkpoint(dir.path()), Err(Error::MissingFile(_))));
    }
}
