//! Binary PPM (P6, 8-bit) frames.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parses P6 bytes into an `[H, D, 3]` frame with values in `[0, 1]`.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |msg: &str| Error::Ppm {
        path: path.to_path_buf(),
        msg: msg.into(),
    };
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.get(..2) != Some(b"P6") {
        return Err(bad("missing P6 magic"));
    }
    pos += 2;
    for field in &mut fields {
        // whitespace and comments may separate header fields
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("malformed header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(bad("only 8-bit PPM (maxval 255) is supported"));
    }
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header must end with a single whitespace byte"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let n = width * height * 3;
    if raster.len() != n {
        return Err(bad(&format!("expected {n} raster bytes, found {}", raster.len())));
    }
    Tensor::new(
        [height, width, 3],
        raster.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

/// Encodes an `[H, D, 3]` frame, rounding `v · 255` and clamping.
pub fn encode(frame: &Tensor) -> Result<Vec<u8>> {
    let &[h, w, 3] = frame.shape() else {
        return Err(Error::invalid(format!(
            "PPM frames must be [H, D, 3], got {:?}",
            frame.shape()
        )));
    };
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(frame.data().iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    Ok(out)
}
