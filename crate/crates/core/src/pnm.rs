//! Binary PPM/PGM encoders for inspection dumps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `P6` encoding of a `3×H×W` image with values in `[0, 1]`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = image.dims3("encode_ppm")?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", format!("expected 3 channels, got {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    for p in 0..plane {
        for ch in 0..3 {
            out.push(to_byte(image.data()[ch * plane + p]));
        }
    }
    Ok(out)
}

/// `P5` encoding of an `H×W` map with values in `[0, 1]`.
pub fn encode_pgm(map: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = map.dims2("encode_pgm")?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

/// `P5` encoding of an integer label grid. The max value is the largest
/// label (at least 1) so viewers stretch the contrast; labels are stored
/// verbatim.
pub fn encode_label_pgm(labels: &[u32], width: usize, height: usize) -> Result<Vec<u8>> {
    if labels.len() != width * height {
        return Err(Error::shape(
            "encode_label_pgm",
            format!("{} labels for a {width}x{height} grid", labels.len()),
        ));
    }
    let max = labels.iter().copied().max().unwrap_or(0).max(1);
    if max > 255 {
        return Err(Error::invalid("labels", "label values above 255 do not fit a byte"));
    }
    let mut out = format!("P5\n{width} {height}\n{max}\n").into_bytes();
    out.extend(labels.iter().map(|&l| l as u8));
    Ok(out)
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_and_interleave() {
        let img = Tensor::new(&[3, 1, 2], vec![0.0, 1.0, 0.5, 0.5, 1.0, 0.0]).unwrap();
        let bytes = encode_ppm(&img).unwrap();
        let header = b"P6\n2 1\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 255, 128, 0]);
    }

    #[test]
    fn label_pgm_keeps_values() {
        let bytes = encode_label_pgm(&[0, 2, 1, 0], 2, 2).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n2\n"));
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 2, 1, 0]);
    }
}
