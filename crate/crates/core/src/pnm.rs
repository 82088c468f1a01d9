//! Binary 8-bit PGM (`P5`) and PPM (`P6`) images.

use std::path::Path;

use crate::data::Image;
use crate::error::{BtnError, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a 1-channel image as PGM or a 3-channel image as PPM.
pub fn encode(img: &Image) -> Result<Vec<u8>> {
    let magic = match img.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(BtnError::data(format!("cannot encode {c} channels as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    let plane = img.height * img.width;
    for p in 0..plane {
        for c in 0..img.channels {
            out.push(to_byte(img.data[c * plane + p]));
        }
    }
    Ok(out)
}

/// Next whitespace-delimited header token, skipping `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
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
        return Err(BtnError::data("truncated PNM header"));
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    std::str::from_utf8(t)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| BtnError::data("malformed number in PNM header"))
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(BtnError::data("only binary P5/P6 images are supported")),
    };
    let width = number(bytes, &mut pos)?;
    let height = number(bytes, &mut pos)?;
    let maxval = number(bytes, &mut pos)?;
    if maxval == 0 || maxval > 255 {
        return Err(BtnError::data(format!("maxval {maxval} is not 8-bit")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let plane = width * height;
    let raster = bytes
        .get(pos..pos + plane * channels)
        .ok_or_else(|| BtnError::data("truncated PNM raster"))?;
    if bytes.len() != pos + plane * channels {
        return Err(BtnError::data("trailing bytes after PNM raster"));
    }
    let mut data = vec![0.0; plane * channels];
    for p in 0..plane {
        for c in 0..channels {
            data[c * plane + p] = raster[p * channels + c] as f64 / maxval as f64;
        }
    }
    Image::new(channels, height, width, data)
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    std::fs::write(path, encode(img)?).map_err(|e| BtnError::io(path, e))
}

pub fn read(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| BtnError::io(path, e))?;
    decode(&bytes).map_err(|e| BtnError::data(format!("{}: {e}", path.display())))
}
