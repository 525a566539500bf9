//! Binary PGM (P5) / PPM (P6) images, 8-bit.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Decodes a P5/P6 file into a `C x H x W` tensor with values in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    let malformed = |detail: &str| Error::Malformed {
        what: "PNM image",
        detail: detail.to_string(),
    };
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Truncation { what: "PNM header" }),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(malformed(&format!("unsupported magic {other:?}"))),
    };
    let mut number =
        |what: &str| -> Result<usize> { token()?.parse::<usize>().map_err(|_| malformed(&format!("bad {what}"))) };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if width == 0 || height == 0 {
        return Err(malformed("zero-sized image"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(malformed(&format!("maxval {maxval} is not 8-bit")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * channels;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or(Error::Truncation { what: "PNM raster" })?;
    let scale = maxval as f32;
    let mut data = vec![0f32; n];
    for (i, &b) in raster.iter().enumerate() {
        if b as usize > maxval {
            return Err(malformed("sample exceeds maxval"));
        }
        let (p, c) = (i / channels, i % channels);
        data[c * width * height + p] = b as f32 / scale;
    }
    Tensor::new(vec![channels, height, width], data)
}

pub fn read(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Encodes a `C x H x W` (or `1 x C x H x W`) image; one channel gives P5,
/// three give P6. Values are clamped to `[0, 1]` and rounded to 8 bits.
pub fn encode(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        ref other => return Err(Error::shape("pnm encode", format!("expected CxHxW, got {other:?}"))),
    };
    let magic = match c {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::shape("pnm encode", format!("{c} channels; need 1 or 3"))),
    };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let d = image.data();
    out.reserve(c * h * w);
    for p in 0..h * w {
        for ch in 0..c {
            out.push(quantize(d[ch * h * w + p]));
        }
    }
    Ok(out)
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(image)?).map_err(|e| Error::io(path, e))
}

/// File extension matching the channel count.
pub fn extension(channels: usize) -> &'static str {
    if channels == 1 {
        "pgm"
    } else {
        "ppm"
    }
}
