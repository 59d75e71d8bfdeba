//! Binary portable anymap (P5/P6) codec.

use super::RgbImage;
use crate::error::{Error, Result};

struct Header {
    magic: u8,
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn decode_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Decode {
        offset,
        message: message.into(),
    }
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize) -> Result<(usize, usize)> {
    let pos = skip_ws_and_comments(bytes, pos);
    let start = pos;
    let mut end = pos;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(decode_err(start, "expected an unsigned integer"));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| decode_err(start, "integer out of range"))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' || !matches!(bytes[1], b'5' | b'6') {
        return Err(decode_err(0, "expected P5 or P6 magic"));
    }
    let magic = bytes[1];
    let (width, pos) = read_uint(bytes, 2)?;
    let (height, pos) = read_uint(bytes, pos)?;
    let (maxval, pos) = read_uint(bytes, pos)?;
    if width == 0 || height == 0 {
        return Err(decode_err(2, format!("zero dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(decode_err(pos, format!("unsupported maxval {maxval}")));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(decode_err(pos, "missing whitespace after maxval"));
    }
    Ok(Header {
        magic,
        width,
        height,
        maxval,
        data_start: pos + 1,
    })
}

/// Decodes a binary PPM (P6) or PGM (P5); gray is replicated into RGB.
///
/// Samples are rescaled to 0..=255 when `maxval < 255`.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    let hdr = parse_header(bytes)?;
    let channels = if hdr.magic == b'6' { 3 } else { 1 };
    let needed = hdr
        .width
        .checked_mul(hdr.height)
        .and_then(|n| n.checked_mul(channels))
        .ok_or_else(|| decode_err(2, "image dimensions overflow"))?;
    let payload = &bytes[hdr.data_start..];
    if payload.len() < needed {
        return Err(decode_err(
            hdr.data_start + payload.len(),
            format!("truncated pixel data: expected {needed} bytes, found {}", payload.len()),
        ));
    }
    let payload = &payload[..needed];
    if let Some(i) = payload.iter().position(|&b| b as usize > hdr.maxval) {
        return Err(decode_err(hdr.data_start + i, "sample exceeds maxval"));
    }
    let scale = |b: u8| -> u8 {
        if hdr.maxval == 255 {
            b
        } else {
            ((b as usize * 255 + hdr.maxval / 2) / hdr.maxval) as u8
        }
    };
    let data: Vec<u8> = if channels == 3 {
        payload.iter().map(|&b| scale(b)).collect()
    } else {
        payload
            .iter()
            .flat_map(|&b| {
                let v = scale(b);
                [v, v, v]
            })
            .collect()
    };
    RgbImage::new(hdr.width, hdr.height, data)
}

/// Encodes as binary PPM with maxval 255.
pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

/// Encodes the first channel as binary PGM.
pub fn encode_pgm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().chunks_exact(3).map(|p| p[0]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_two_pixel_ppm() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 0]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height()), (2, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 0, 0]);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        match decode_image(&bytes) {
            Err(Error::Decode { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_gray() {
        let mut bytes = b"P5 # gray\n# another\n3 1 255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!(img.pixel(1, 0), [128, 128, 128]);
        assert_eq!(encode_pgm(&img)[encode_pgm(&img).len() - 3..], [0, 128, 255]);
    }

    #[test]
    fn bad_magic_and_header() {
        assert!(matches!(decode_image(b"P3\n1 1\n255\n"), Err(Error::Decode { offset: 0, .. })));
        assert!(matches!(decode_image(b"P6\nx 1\n255\n"), Err(Error::Decode { .. })));
        assert!(matches!(decode_image(b"P6\n1 1\n65535\n"), Err(Error::Decode { .. })));
    }

    proptest! {
        #[test]
        fn ppm_round_trip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let mut state = seed;
            let img = RgbImage::from_fn(w, h, |_, _| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let b = state.to_le_bytes();
                [b[5], b[6], b[7]]
            });
            let bytes = encode_ppm(&img);
            let back = decode_image(&bytes).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode_ppm(&back), bytes);
        }
    }
}
