//! Native float image format and 16-bit PNG import.
//!
//! RIF layout, all little-endian: magic `CWIM`, u32 version, u32 height,
//! u32 width, u32 channels (always 3), `h·w·3` f32 values row-major with
//! interleaved channels, then a u32 CRC32 of every preceding byte.

use std::fs;
use std::path::Path;

use super::LinearImage;
use crate::error::{Error, Result};

pub const RIF_MAGIC: &[u8; 4] = b"CWIM";
pub const RIF_VERSION: u32 = 1;
const KIND: &str = "RIF image";
const HEADER_LEN: usize = 20;

pub fn encode_rif(image: &LinearImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + image.data().len() * 4 + 4);
    out.extend_from_slice(RIF_MAGIC);
    out.extend_from_slice(&RIF_VERSION.to_le_bytes());
    out.extend_from_slice(&(image.height() as u32).to_le_bytes());
    out.extend_from_slice(&(image.width() as u32).to_le_bytes());
    out.extend_from_slice(&3u32.to_le_bytes());
    for v in image.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub fn decode_rif(bytes: &[u8]) -> Result<LinearImage> {
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            kind: KIND,
            detail: format!("{} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    if &bytes[..4] != RIF_MAGIC {
        return Err(Error::BadMagic {
            kind: KIND,
            found: bytes[..4].to_vec(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            kind: KIND,
            detail: format!("{} bytes, header needs {HEADER_LEN}", bytes.len()),
        });
    }
    let version = u32_at(bytes, 4);
    if version != RIF_VERSION {
        return Err(Error::UnsupportedVersion { kind: KIND, version });
    }
    let (h, w, c) = (u32_at(bytes, 8) as usize, u32_at(bytes, 12) as usize, u32_at(bytes, 16) as usize);
    if c != 3 {
        return Err(Error::Malformed {
            kind: KIND,
            detail: format!("expected 3 channels, header says {c}"),
        });
    }
    let payload = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(12))
        .ok_or_else(|| Error::Malformed {
            kind: KIND,
            detail: format!("dimensions {h}x{w} overflow"),
        })?;
    let expected = HEADER_LEN
        .checked_add(payload)
        .and_then(|v| v.checked_add(4))
        .ok_or_else(|| Error::Malformed {
            kind: KIND,
            detail: format!("dimensions {h}x{w} overflow"),
        })?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            kind: KIND,
            detail: format!("{} bytes, {h}x{w} image needs {expected}", bytes.len()),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            kind: KIND,
            detail: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let body = &bytes[..expected - 4];
    let stored = u32_at(bytes, expected - 4);
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::BadCrc {
            kind: KIND,
            stored,
            computed,
        });
    }
    let data = body[HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    LinearImage::new(h, w, data)
}

fn decode_png(bytes: &[u8]) -> Result<LinearImage> {
    let malformed = |detail: String| Error::Malformed { kind: "PNG image", detail };
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| malformed(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| malformed("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| malformed(e.to_string()))?;
    let channels = match info.color_type {
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(malformed(format!("unsupported color type {other:?}"))),
    };
    let (h, w) = (info.height as usize, info.width as usize);
    let samples: Vec<f32> = match info.bit_depth {
        png::BitDepth::Sixteen => buf[..info.buffer_size()]
            .chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0)
            .collect(),
        png::BitDepth::Eight => buf[..info.buffer_size()].iter().map(|&b| b as f32 / 255.0).collect(),
        other => return Err(malformed(format!("unsupported bit depth {other:?}"))),
    };
    let data = samples.chunks_exact(channels).flat_map(|p| [p[0], p[1], p[2]]).collect();
    LinearImage::new(h, w, data)
}

/// Reads a RIF file or an RGB PNG. PNG samples are taken as already linear
/// and mapped to `[0,1]` by dividing by the maximum code value.
pub fn read_image(path: impl AsRef<Path>) -> Result<LinearImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_rif(&bytes)
    }
}

/// 16-bit RGB PNG of values clipped to `[0,1]`, no gamma applied.
pub fn encode_png16(image: &LinearImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Sixteen);
    let samples: Vec<u8> = image
        .data()
        .iter()
        .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
        .collect();
    let mut writer = enc.write_header().map_err(|e| Error::invalid(format!("png header: {e}")))?;
    writer
        .write_image_data(&samples)
        .map_err(|e| Error::invalid(format!("png data: {e}")))?;
    writer.finish().map_err(|e| Error::invalid(format!("png finish: {e}")))?;
    Ok(out)
}

/// Writes a 16-bit PNG when the extension is `.png`, RIF otherwise.
pub fn write_image(image: &LinearImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png { encode_png16(image)? } else { encode_rif(image) };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
