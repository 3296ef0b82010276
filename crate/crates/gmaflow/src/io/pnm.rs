//! Binary PPM (P6) and PGM (P5) images, 8-bit only.
//!
//! Two layers of API: raw byte planes for label masks and fixtures, and
//! [`ImageGrid`] wrappers that scale to and from `[0, 1]` by 255. Only
//! maxval 255 is accepted.

use std::io::{Read, Write};

use crate::error::{FlowError, Result};
use crate::grid::ImageGrid;

/// Raw 8-bit image: `channels` is 1 for PGM, 3 for PPM; `data` is row-major
/// `(row, col, channel)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn write_pgm_raw<W: Write>(img: &RawImage, sink: &mut W) -> Result<()> {
    write_raw(img, 1, "P5", sink)
}

pub fn write_ppm_raw<W: Write>(img: &RawImage, sink: &mut W) -> Result<()> {
    write_raw(img, 3, "P6", sink)
}

fn write_raw<W: Write>(img: &RawImage, channels: usize, magic: &str, sink: &mut W) -> Result<()> {
    if img.channels != channels {
        return Err(FlowError::invalid(format!(
            "{magic} image must have {channels} channel(s), got {}",
            img.channels
        )));
    }
    if img.data.len() != img.width * img.height * channels {
        return Err(FlowError::shape(format!(
            "{magic} payload: {} bytes for {}x{}",
            img.data.len(),
            img.width,
            img.height
        )));
    }
    write!(sink, "{magic}\n{} {}\n255\n", img.width, img.height)?;
    sink.write_all(&img.data)?;
    Ok(())
}

pub fn read_pgm_raw<R: Read>(source: &mut R) -> Result<RawImage> {
    read_raw(source, "P5", 1)
}

pub fn read_ppm_raw<R: Read>(source: &mut R) -> Result<RawImage> {
    read_raw(source, "P6", 3)
}

fn read_raw<R: Read>(source: &mut R, magic: &str, channels: usize) -> Result<RawImage> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut pos = 0usize;

    let found = header_token(&bytes, &mut pos)?;
    if found != magic.as_bytes() {
        return Err(FlowError::Format(format!(
            "expected {magic} image, found magic {:?}",
            String::from_utf8_lossy(&found)
        )));
    }
    let width = header_number(&bytes, &mut pos, "width")?;
    let height = header_number(&bytes, &mut pos, "height")?;
    let maxval = header_number(&bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(FlowError::Format(format!("unsupported maxval {maxval}, only 255")));
    }
    if width == 0 || height == 0 {
        return Err(FlowError::Format(format!("bad image dimensions {width}x{height}")));
    }
    // exactly one whitespace byte separates the header from the payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(FlowError::Format("missing separator before pixel data".into()));
    }
    pos += 1;
    let need = width * height * channels;
    if bytes.len() - pos < need {
        return Err(FlowError::Format(format!(
            "truncated pixel data: need {need} bytes, have {}",
            bytes.len() - pos
        )));
    }
    Ok(RawImage { width, height, channels, data: bytes[pos..pos + need].to_vec() })
}

/// Next header token, skipping whitespace and `#` comment lines.
fn header_token(bytes: &[u8], pos: &mut usize) -> Result<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FlowError::Format("truncated image header".into()));
    }
    Ok(bytes[start..*pos].to_vec())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let token = header_token(bytes, pos)?;
    std::str::from_utf8(&token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(|| FlowError::Format(format!("bad {what} in image header")))
}

/// Writes an [`ImageGrid`] as PGM (1 channel) or PPM (3 channels), scaling
/// `[0,1]` to bytes by `round(v * 255)`.
pub fn write_image<W: Write>(img: &ImageGrid, sink: &mut W) -> Result<()> {
    let data: Vec<u8> = img.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let raw = RawImage { width: img.width(), height: img.height(), channels: img.channels(), data };
    match img.channels() {
        1 => write_pgm_raw(&raw, sink),
        3 => write_ppm_raw(&raw, sink),
        c => Err(FlowError::invalid(format!("cannot encode {c}-channel image"))),
    }
}

/// Reads a PGM or PPM into an [`ImageGrid`], scaling bytes to `[0,1]` by 255.
/// The magic decides the channel count.
pub fn read_image<R: Read>(source: &mut R) -> Result<ImageGrid> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    let mut probe = 0usize;
    let magic = header_token(&bytes, &mut probe)?;
    let raw = match magic.as_slice() {
        b"P5" => read_pgm_raw(&mut bytes.as_slice())?,
        b"P6" => read_ppm_raw(&mut bytes.as_slice())?,
        other => {
            return Err(FlowError::Format(format!(
                "unsupported image magic {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    raw_to_grid(&raw)
}

pub fn raw_to_grid(raw: &RawImage) -> Result<ImageGrid> {
    let data = raw.data.iter().map(|&b| b as f64 / 255.0).collect();
    ImageGrid::from_vec(raw.height, raw.width, raw.channels, data)
}

pub fn write_image_file(img: &ImageGrid, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_image(img, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_image_file(path: &std::path::Path) -> Result<ImageGrid> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_image(&mut file)
}

pub fn write_pgm_file(img: &RawImage, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_pgm_raw(img, &mut file)?;
    file.flush()?;
    Ok(())
}

pub fn read_pgm_file(path: &std::path::Path) -> Result<RawImage> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_pgm_raw(&mut file)
}
