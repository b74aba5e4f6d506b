//! Binary Netpbm: P5 (grey) and P6 (RGB), maxval 255.

use std::fs;
use std::path::Path;

use crate::data::image::ImageU8;
use crate::error::{Error, Result};

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    while pos < bytes.len() {
        match bytes[pos] {
            b'#' => {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            }
            b if b.is_ascii_whitespace() => pos += 1,
            _ => break,
        }
    }
    pos
}

fn read_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<u32> {
    *pos = skip_space_and_comments(bytes, *pos);
    let start = *pos;
    while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::NetpbmHeader(format!("expected {what} at byte {start}")));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .expect("ascii digits")
        .parse()
        .map_err(|_| Error::NetpbmHeader(format!("{what} out of range")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::NetpbmMagic(String::from_utf8_lossy(magic).into_owned())),
    };
    let mut pos = 2;
    let width = read_number(bytes, &mut pos, "width")? as usize;
    let height = read_number(bytes, &mut pos, "height")? as usize;
    let maxval = read_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::NetpbmMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(Error::NetpbmHeader(format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(Error::NetpbmHeader("missing whitespace after maxval".into())),
    }
    Ok(Header {
        channels,
        width,
        height,
        data_start: pos + 1,
    })
}

pub fn decode_netpbm(bytes: &[u8]) -> Result<ImageU8> {
    let h = parse_header(bytes)?;
    let expected = h.width * h.height * h.channels;
    let data = &bytes[h.data_start.min(bytes.len())..];
    if data.len() < expected {
        return Err(Error::NetpbmShortData {
            expected,
            found: data.len(),
        });
    }
    ImageU8::new(h.height, h.width, h.channels, data[..expected].to_vec())
}

/// `P5`/`P6` header (`"P5\n<w> <h>\n255\n"`) followed by raw pixels; no comments.
pub fn encode_netpbm(image: &ImageU8) -> Vec<u8> {
    let magic = if image.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn read_netpbm(path: impl AsRef<Path>) -> Result<ImageU8> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_netpbm(&bytes)
}

pub fn write_netpbm(image: &ImageU8, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_netpbm(image)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn p5_roundtrip() {
        let im = ImageU8::new(2, 2, 1, vec![0, 128, 255, 64]).unwrap();
        let bytes = encode_netpbm(&im);
        assert_eq!(&bytes[..11], b"P5\n2 2\n255\n");
        assert_eq!(decode_netpbm(&bytes).unwrap(), im);
    }

    #[test]
    fn p6_roundtrip() {
        let im = ImageU8::new(1, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(decode_netpbm(&encode_netpbm(&im)).unwrap(), im);
    }

    #[test]
    fn comments_skipped() {
        let mut bytes = b"P5\n# scanner\n2 # width then height\n1\n255\n".to_vec();
        bytes.extend_from_slice(&[7, 9]);
        let im = decode_netpbm(&bytes).unwrap();
        assert_eq!((im.width, im.height, im.pixels.clone()), (2, 1, vec![7, 9]));
    }

    #[test]
    fn p6_header_with_grey_payload_is_short() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255, 64]);
        assert!(matches!(
            decode_netpbm(&bytes),
            Err(Error::NetpbmShortData { expected: 12, found: 4 })
        ));
    }

    #[test]
    fn distinct_errors() {
        assert!(matches!(decode_netpbm(b"P2\n1 1\n255\n0"), Err(Error::NetpbmMagic(_))));
        assert!(matches!(decode_netpbm(b"P5\n1 1\n65535\n00"), Err(Error::NetpbmMaxval(65535))));
        assert!(matches!(decode_netpbm(b"P5\n1 x\n255\n0"), Err(Error::NetpbmHeader(_))));
        assert!(matches!(decode_netpbm(b""), Err(Error::NetpbmMagic(_))));
    }
}
