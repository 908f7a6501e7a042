//! Binary PGM/PPM and a plain-text matrix format.
//!
//! The text format is a header `H W C` followed by `H·W·C` whitespace
//! separated floats in `[0, 1]`, row-major with channels interleaved.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::GrayImage;

/// Reads `.pgm`/`.ppm` as netpbm, anything else as the text format.
pub fn read_image(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path)?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") | Some("ppm") => decode_netpbm(&bytes),
        _ => decode_text(std::str::from_utf8(&bytes).map_err(|e| Error::Image(e.to_string()))?),
    }
}

pub fn write_image(path: &Path, image: &GrayImage) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") | Some("ppm") => std::fs::write(path, encode_netpbm(image)?)?,
        _ => std::fs::write(path, encode_text(image))?,
    }
    Ok(())
}

fn header_tokens(bytes: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::Image("truncated netpbm header".into()));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    Ok((tokens, i + 1))
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<GrayImage> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Image(format!("unsupported netpbm magic {other:?}"))),
    };
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Image(format!("bad netpbm header field {s:?}")))
    };
    let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(Error::Image(format!("maxval {maxval} not in 1..=255")));
    }
    let n = width * height * channels;
    let raster = bytes
        .get(offset..offset + n)
        .ok_or_else(|| Error::Image("truncated netpbm raster".into()))?;
    let data = raster.iter().map(|&b| (b as f64 / maxval as f64).min(1.0)).collect();
    GrayImage::new(height, width, channels, data)
}

/// Quantises to 8 bits; only 1- and 3-channel images are representable.
pub fn encode_netpbm(image: &GrayImage) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Image(format!("netpbm cannot hold {c} channels"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| (v * 255.0).round() as u8));
    Ok(out)
}

pub fn decode_text(text: &str) -> Result<GrayImage> {
    let mut tokens = text.split_whitespace();
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::Image("missing `H W C` header".into()))?
            .parse()
            .map_err(|_| Error::Image("bad `H W C` header".into()))
    };
    let (h, w, c) = (dim()?, dim()?, dim()?);
    let data = text
        .split_whitespace()
        .skip(3)
        .map(|t| t.parse::<f64>().map_err(|_| Error::Image(format!("bad pixel value {t:?}"))))
        .collect::<Result<Vec<f64>>>()?;
    GrayImage::new(h, w, c, data)
}

pub fn encode_text(image: &GrayImage) -> String {
    let mut out = format!("{} {} {}\n", image.height(), image.width(), image.channels());
    let row_len = image.width() * image.channels();
    for row in image.data().chunks(row_len) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_is_exact() {
        let img = GrayImage::new(2, 2, 1, vec![0.1, 0.25, 1.0 / 3.0, 1.0]).unwrap();
        assert_eq!(decode_text(&encode_text(&img)).unwrap(), img);
    }

    #[test]
    fn netpbm_quantises() {
        let img = GrayImage::new(1, 3, 1, vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = encode_netpbm(&img).unwrap();
        assert!(bytes.starts_with(b"P5\n3 1\n255\n"));
        let back = decode_netpbm(&bytes).unwrap();
        assert_eq!(back.data()[0], 0.0);
        assert_eq!(back.data()[2], 1.0);
        assert!((back.data()[1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn netpbm_header_comments_and_colour() {
        let mut bytes = b"P6 # colour\n1 1\n# max\n255\n".to_vec();
        bytes.extend([255, 0, 51]);
        let img = decode_netpbm(&bytes).unwrap();
        assert_eq!(img.channels(), 3);
        assert_eq!(img.data(), &[1.0, 0.0, 0.2]);
    }

    #[test]
    fn malformed_inputs() {
        assert!(decode_netpbm(b"P5\n2 2\n255\n\x01").is_err());
        assert!(decode_netpbm(b"P3\n1 1\n255\n1").is_err());
        assert!(decode_text("2 2 1\n0.1 0.2 0.3").is_err());
        assert!(decode_text("").is_err());
        assert!(decode_text("1 1 1\n2.0").is_err());
        assert!(encode_netpbm(&GrayImage::zeros(1, 1, 2)).is_err());
    }
}
