//! Binary PPM (P6, RGB) and PGM (P5, grayscale) with maxval 255.

use crate::error::{Error, Result};

pub fn encode(width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    let tag = match channels {
        1 => "P5",
        3 => "P6",
        other => {
            return Err(Error::Contract(format!(
                "ppm encoder supports 1 or 3 channels, got {other}"
            )))
        }
    };
    if pixels.len() != width * height * channels {
        return Err(Error::Contract("pixel buffer does not match dimensions".into()));
    }
    let mut out = format!("{tag}\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

fn skip_whitespace_and_comments(bytes: &[u8], mut pos: usize) -> usize {
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

fn read_number(bytes: &[u8], pos: usize) -> Result<(usize, usize)> {
    let start = skip_whitespace_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::Data("expected a number in PPM header".into()));
    }
    let v: usize = std::str::from_utf8(&bytes[start..end])
        .expect("digits are ascii")
        .parse()
        .map_err(|_| Error::Data("PPM header number out of range".into()))?;
    Ok((v, end))
}

pub fn decode(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    if bytes.len() < 2 {
        return Err(Error::Data("not a PPM/PGM file".into()));
    }
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(Error::Data("unsupported PPM magic (only binary P5/P6)".into())),
    };
    let (width, pos) = read_number(bytes, 2)?;
    let (height, pos) = read_number(bytes, pos)?;
    let (maxval, pos) = read_number(bytes, pos)?;
    if maxval != 255 {
        return Err(Error::Data(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let data_start = pos + 1;
    let want = width * height * channels;
    if bytes.len() < data_start + want {
        return Err(Error::Data("truncated PPM raster".into()));
    }
    Ok((
        width,
        height,
        channels,
        bytes[data_start..data_start + want].to_vec(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_2x2_file_decodes_to_known_bytes() {
        let file = b"P6\n2 2\n255\n\x00\x80\xff\x10\x20\x30\x40\x50\x60\x70\x80\x90";
        let (w, h, c, px) = decode(file).unwrap();
        assert_eq!((w, h, c), (2, 2, 3));
        assert_eq!(
            px,
            vec![0x00, 0x80, 0xff, 0x10, 0x20, 0x30, 0x40, 0x50, 0x60, 0x70, 0x80, 0x90]
        );
    }

    #[test]
    fn roundtrip_with_comment_header() {
        let px: Vec<u8> = (0..6 * 4 * 3).map(|i| i as u8).collect();
        let enc = encode(6, 4, 3, &px).unwrap();
        let (w, h, c, back) = decode(&enc).unwrap();
        assert_eq!((w, h, c, back), (6, 4, 3, px));

        let commented = b"P5 # tiny\n# another comment\n2 1\n255\n\xAA\xBB";
        let (w, h, c, back) = decode(commented).unwrap();
        assert_eq!((w, h, c), (2, 1, 1));
        assert_eq!(back, vec![0xAA, 0xBB]);
    }

    #[test]
    fn truncation_rejected() {
        let px = vec![1u8; 12];
        let mut enc = encode(2, 2, 3, &px).unwrap();
        enc.truncate(enc.len() - 2);
        assert!(decode(&enc).is_err());
    }
}
