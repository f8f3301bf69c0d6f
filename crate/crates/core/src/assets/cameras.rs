//! Camera files.
//!
//! One camera per line, 20 whitespace-separated numbers:
//!
//! ```text
//! width height fx fy cx cy  r00 r01 r02 t0  r10 r11 r12 t1  r20 r21 r22 t2  near far
//! ```
//!
//! The 3×4 block is the row-major camera-to-world transform. Blank lines and
//! text after `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::render::Camera;

const FIELDS: usize = 20;

/// Parses camera-file text; `path` is used in diagnostics only.
pub fn parse_cameras(text: &str, path: &Path) -> Result<Vec<Camera>> {
    let mut cameras = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse { path: path.into(), line: i + 1, message };
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("not a number: {tok:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != FIELDS {
            return Err(err(format!("expected {FIELDS} numbers, found {}", values.len())));
        }
        let size = |v: f64, what: &str| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(err(format!("{what} must be a positive integer, got {v}")))
            }
        };
        let mut pose = [[0.0; 4]; 3];
        for (r, row) in pose.iter_mut().enumerate() {
            row.copy_from_slice(&values[6 + 4 * r..10 + 4 * r]);
        }
        let cam = Camera {
            width: size(values[0], "width")?,
            height: size(values[1], "height")?,
            fx: values[2],
            fy: values[3],
            cx: values[4],
            cy: values[5],
            camera_to_world: pose,
            near: values[18],
            far: values[19],
        };
        cam.validate().map_err(|e| err(e.to_string()))?;
        cameras.push(cam);
    }
    Ok(cameras)
}

pub fn read_cameras(path: &Path) -> Result<Vec<Camera>> {
    let text = fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.into())
        } else {
            Error::io(path, e)
        }
    })?;
    parse_cameras(&text, path)
}

/// Formats cameras so that [`parse_cameras`] recovers them exactly.
pub fn format_cameras(cameras: &[Camera]) -> String {
    let mut out = String::from("# width height fx fy cx cy | camera_to_world 3x4 row-major | near far\n");
    for c in cameras {
        let _ = write!(out, "{} {} {:?} {:?} {:?} {:?}", c.width, c.height, c.fx, c.fy, c.cx, c.cy);
        for row in &c.camera_to_world {
            for v in row {
                let _ = write!(out, " {v:?}");
            }
        }
        let _ = writeln!(out, " {:?} {:?}", c.near, c.far);
    }
    out
}

pub fn write_cameras(path: &Path, cameras: &[Camera]) -> Result<()> {
    fs::write(path, format_cameras(cameras)).map_err(|e| Error::io(path, e))
}
