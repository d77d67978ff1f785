//! Binary PGM (P5) mask reader and writer.
//!
//! Masks are stored with 0 for background and 255 for foreground; on read,
//! any value of 128 or above counts as foreground.

use std::fs;
use std::path::Path;

use crate::grounding::BinaryMask;

use super::IoError;

fn pgm_error(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Pgm { path: path.display().to_string(), msg: msg.into() }
}

/// Reads the next whitespace-delimited token, skipping `#` comments.
fn next_token(data: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < data.len() && data[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < data.len() && data[*pos] == b'#' {
            while *pos < data.len() && data[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < data.len() && !data[*pos].is_ascii_whitespace() && data[*pos] != b'#' {
        *pos += 1;
    }
    if *pos > start {
        Some(String::from_utf8_lossy(&data[start..*pos]).into_owned())
    } else {
        None
    }
}

pub fn load_mask(path: &Path) -> Result<BinaryMask, IoError> {
    let data = fs::read(path).map_err(|e| IoError::file(path, e))?;
    let mut pos = 0usize;
    let magic = next_token(&data, &mut pos).ok_or_else(|| pgm_error(path, "empty file"))?;
    if magic != "P5" {
        return Err(pgm_error(path, format!("expected P5 magic, got '{magic}'")));
    }
    let mut dims = [0u32; 2];
    for d in &mut dims {
        let tok = next_token(&data, &mut pos).ok_or_else(|| pgm_error(path, "missing dimensions"))?;
        *d = tok.parse().map_err(|_| pgm_error(path, format!("bad dimension '{tok}'")))?;
    }
    let maxval_tok =
        next_token(&data, &mut pos).ok_or_else(|| pgm_error(path, "missing maxval"))?;
    let maxval: u32 =
        maxval_tok.parse().map_err(|_| pgm_error(path, format!("bad maxval '{maxval_tok}'")))?;
    if maxval == 0 || maxval > 255 {
        return Err(pgm_error(path, format!("maxval {maxval} outside 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let (w, h) = (dims[0], dims[1]);
    let expected = (w as usize) * (h as usize);
    if data.len() < pos + expected {
        return Err(pgm_error(
            path,
            format!("raster truncated: expected {expected} bytes, found {}", data.len().saturating_sub(pos)),
        ));
    }
    if data.len() > pos + expected {
        return Err(pgm_error(path, format!("{} trailing bytes after raster", data.len() - pos - expected)));
    }
    let bits = data[pos..pos + expected].iter().map(|&b| b >= 128).collect();
    Ok(BinaryMask::from_bits(w, h, bits))
}

pub fn save_mask(path: &Path, mask: &BinaryMask) -> Result<(), IoError> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    fs::write(path, out).map_err(|e| IoError::file(path, e))
}
