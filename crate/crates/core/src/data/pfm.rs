//! Portable float map (single-channel "Pf") reader and writer.
//!
//! Rows are stored bottom-to-top. A negative scale marks little-endian
//! payload; we always write `-1.0` and read either byte order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn plane_dims(t: &Tensor<f32>) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().any(|&d| d != 1) {
        return Err(Error::Format(format!(
            "PFM holds one single-channel map, got shape {s:?}"
        )));
    }
    Ok((s[s.len() - 2], s[s.len() - 1]))
}

pub fn encode_pfm(map: &Tensor<f32>) -> Result<Vec<u8>> {
    let (h, w) = plane_dims(map)?;
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for y in (0..h).rev() {
        for &v in &map.data()[y * w..(y + 1) * w] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Splits off one whitespace-terminated header token.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos || *pos >= bytes.len() {
        return Err(Error::Format("PFM header is incomplete".into()));
    }
    let tok = std::str::from_utf8(&bytes[start..*pos])
        .map_err(|_| Error::Format("PFM header is not ASCII".into()))?;
    Ok(tok)
}

/// Decodes to a `[1,1,H,W]` tensor.
pub fn decode_pfm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut pos = 0;
    match token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => {
            return Err(Error::Format(
                "PFM channel count: `PF` is a 3-channel color map, expected 1-channel `Pf`".into(),
            ))
        }
        other => return Err(Error::Format(format!("bad PFM magic `{other}`"))),
    }
    let dim = |s: &str| -> Result<usize> {
        s.parse()
            .map_err(|_| Error::Format(format!("bad PFM dimension `{s}`")))
    };
    let w = dim(token(bytes, &mut pos)?)?;
    let h = dim(token(bytes, &mut pos)?)?;
    let scale_tok = token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale `{scale_tok}`")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format(format!("PFM scale must be nonzero, got {scale}")));
    }
    // exactly one whitespace byte separates the header from the payload
    pos += 1;
    let payload = &bytes[pos..];
    let need = h * w * 4;
    if payload.len() < need {
        return Err(Error::Truncated(format!(
            "PFM payload ({} of {need} bytes)",
            payload.len()
        )));
    }
    if payload.len() > need {
        return Err(Error::Format(format!(
            "PFM has {} trailing bytes",
            payload.len() - need
        )));
    }
    let little = scale < 0.0;
    let mut data = vec![0.0f32; h * w];
    for (i, chunk) in payload.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row, col) = (h - 1 - i / w, i % w);
        data[row * w + col] = v;
    }
    Tensor::new(vec![1, 1, h, w], data)
}

pub fn write_pfm(path: impl AsRef<Path>, map: &Tensor<f32>) -> Result<()> {
    fs::write(path, encode_pfm(map)?)?;
    Ok(())
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    decode_pfm(&fs::read(path)?)
}
