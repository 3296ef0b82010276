//! The `.flo` flow-field format.
//!
//! Layout: a 32-bit float magic `202021.25`, signed 32-bit width and height,
//! then `2*W*H` interleaved `(u, v)` 32-bit floats, row-major, all
//! little-endian. A 1x1 field is exactly 20 bytes.
//!
//! The format itself has no validity channel. Following the convention of the
//! tooling around this format, invalid pixels are written as the sentinel
//! `1e10` and any component with magnitude above `1e9` marks the pixel
//! invalid on read.

use std::io::{Read, Write};

use crate::error::{FlowError, Result};
use crate::grid::FlowField;

pub const FLO_MAGIC: f32 = 202021.25;

/// Component magnitudes above this mark a pixel invalid.
pub const INVALID_THRESHOLD: f32 = 1e9;

/// Value written for the components of invalid pixels.
pub const INVALID_SENTINEL: f32 = 1e10;

/// Upper bound on each image dimension; guards against size overflow from
/// corrupt headers.
pub const MAX_DIMENSION: i32 = 1 << 20;

pub fn write_flo<W: Write>(flow: &FlowField, sink: &mut W) -> Result<()> {
    sink.write_all(&FLO_MAGIC.to_le_bytes())?;
    sink.write_all(&(flow.width() as i32).to_le_bytes())?;
    sink.write_all(&(flow.height() as i32).to_le_bytes())?;
    for r in 0..flow.height() {
        for c in 0..flow.width() {
            let (u, v) = if flow.valid_at(r, c) {
                (flow.u_at(r, c) as f32, flow.v_at(r, c) as f32)
            } else {
                (INVALID_SENTINEL, INVALID_SENTINEL)
            };
            sink.write_all(&u.to_le_bytes())?;
            sink.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_flo<R: Read>(source: &mut R) -> Result<FlowField> {
    let magic = read_f32(source, "magic")?;
    if magic.to_bits() != FLO_MAGIC.to_bits() {
        return Err(FlowError::Format(format!(
            "bad flow-file magic {magic}, expected {FLO_MAGIC}"
        )));
    }
    let width = read_i32(source, "width")?;
    let height = read_i32(source, "height")?;
    if width <= 0 || height <= 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(FlowError::Format(format!("bad flow dimensions {width}x{height}")));
    }
    let (width, height) = (width as usize, height as usize);
    let n = width * height;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut valid = vec![true; n];
    for i in 0..n {
        let uf = read_f32(source, "flow payload")?;
        let vf = read_f32(source, "flow payload")?;
        if !uf.is_finite() || !vf.is_finite() || uf.abs() > INVALID_THRESHOLD
            || vf.abs() > INVALID_THRESHOLD
        {
            valid[i] = false;
        } else {
            u[i] = uf as f64;
            v[i] = vf as f64;
        }
    }
    FlowField::from_components(height, width, u, v, valid)
}

pub fn write_flo_file(flow: &FlowField, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_flo(flow, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_flo_file(path: &std::path::Path) -> Result<FlowField> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_flo(&mut file)
}

fn read_f32<R: Read>(source: &mut R, what: &str) -> Result<f32> {
    let mut buf = [0u8; 4];
    source
        .read_exact(&mut buf)
        .map_err(|_| FlowError::Format(format!("truncated flow file reading {what}")))?;
    Ok(f32::from_le_bytes(buf))
}

fn read_i32<R: Read>(source: &mut R, what: &str) -> Result<i32> {
    let mut buf = [0u8; 4];
    source
        .read_exact(&mut buf)
        .map_err(|_| FlowError::Format(format!("truncated flow file reading {what}")))?;
    Ok(i32::from_le_bytes(buf))
}
