//! Stokes image container.
//!
//! Layout: magic `PSI1` (4 ASCII bytes), then four little-endian `u32`
//! fields (width, height, channels, components = 3), then `f32` samples in
//! row-major order, per pixel per channel per component (s0, s1, s2). The
//! payload must be exactly `width * height * channels * 3 * 4` bytes.
//!
//! Samples are stored as `f32`; reading widens back to `f64`. Encoding an
//! image produced by a previous decode reproduces the bytes exactly, since
//! narrowing an already-narrowed value is the identity.

use std::fs;
use std::path::Path;

use crate::polarization::PolarimetricImage;

use super::IoError;

pub const PSI_MAGIC: &[u8; 4] = b"PSI1";
const COMPONENTS: usize = 3;
const HEADER_LEN: usize = 4 + 4 * 4;

/// Serialize an image to PSI bytes.
pub fn encode_psi(image: &PolarimetricImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + image.components().len() * COMPONENTS * 4);
    out.extend_from_slice(PSI_MAGIC);
    for v in [image.width, image.height, image.channels, COMPONENTS] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for px in image.components() {
        for &c in px {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    out
}

/// Parse PSI bytes. Errors name the byte offset of the offending field.
pub fn decode_psi(bytes: &[u8]) -> Result<PolarimetricImage, IoError> {
    if bytes.len() < 4 {
        return Err(IoError::binary(0, "truncated magic, need 4 bytes"));
    }
    if &bytes[..4] != PSI_MAGIC {
        return Err(IoError::binary(
            0,
            format!("bad magic {:?}, want \"PSI1\"", &bytes[..4]),
        ));
    }
    if bytes.len() < HEADER_LEN {
        return Err(IoError::binary(4, "truncated header, need four u32 fields"));
    }
    let field = |i: usize| {
        let at = 4 + 4 * i;
        u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
    };
    let (width, height, channels, components) = (field(0), field(1), field(2), field(3));
    if channels != 1 && channels != 3 {
        return Err(IoError::binary(
            12,
            format!("channels = {channels}, want 1 or 3"),
        ));
    }
    if components != COMPONENTS {
        return Err(IoError::binary(
            16,
            format!("components = {components}, want 3"),
        ));
    }
    let expect = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .and_then(|v| v.checked_mul(COMPONENTS * 4))
        .ok_or_else(|| IoError::binary(4, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expect {
        return Err(IoError::binary(
            HEADER_LEN,
            format!("payload is {} bytes, want {expect}", payload.len()),
        ));
    }
    let mut image = PolarimetricImage::zeros(width, height, channels);
    for (i, px) in image.components_mut().iter_mut().enumerate() {
        for (c, slot) in px.iter_mut().enumerate() {
            let at = (i * COMPONENTS + c) * 4;
            *slot = f32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as f64;
        }
    }
    Ok(image)
}

pub fn write_psi(path: &Path, image: &PolarimetricImage) -> Result<(), IoError> {
    fs::write(path, encode_psi(image))?;
    Ok(())
}

pub fn read_psi(path: &Path) -> Result<PolarimetricImage, IoError> {
    decode_psi(&fs::read(path)?)
}
