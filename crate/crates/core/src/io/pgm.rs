//! Binary ("P5") portable graymap encoding.

/// A decoded graymap. Samples are row-major; maxval ≤ 255 means one byte per
/// sample, otherwise two bytes, most significant first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub data: Vec<u16>,
}

pub fn encode(img: &Pgm) -> Vec<u8> {
    assert_eq!(img.data.len(), img.width * img.height);
    let mut out = format!("P5\n{} {}\n{}\n", img.width, img.height, img.maxval).into_bytes();
    if img.maxval < 256 {
        out.extend(img.data.iter().map(|&v| v as u8));
    } else {
        for &v in &img.data {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&b| b != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("malformed header: expected {what}"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| format!("malformed header: {what} too large"))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Pgm, String> {
    if !bytes.starts_with(b"P5") {
        return Err("malformed header: missing P5 magic".into());
    }
    let mut h = Header { bytes, pos: 2 };
    if !h.bytes.get(2).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header: missing P5 magic".into());
    }
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(format!("malformed header: empty {width}x{height} image"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(format!("malformed header: maxval {maxval} outside 1..=65535"));
    }
    if !h.bytes.get(h.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header: no separator after maxval".into());
    }
    let body = &bytes[h.pos + 1..];
    let n = (width as usize)
        .checked_mul(height as usize)
        .ok_or("malformed header: image too large")?;
    let bps = if maxval < 256 { 1 } else { 2 };
    if body.len() < n * bps {
        return Err(format!("truncated file: {} of {} sample bytes", body.len(), n * bps));
    }
    if body.len() > n * bps {
        return Err(format!("{} trailing bytes after samples", body.len() - n * bps));
    }
    let data: Vec<u16> = if bps == 1 {
        body.iter().map(|&b| b as u16).collect()
    } else {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    if let Some(v) = data.iter().find(|&&v| v as u64 > maxval) {
        return Err(format!("sample {v} exceeds maxval {maxval}"));
    }
    Ok(Pgm {
        width: width as usize,
        height: height as usize,
        maxval: maxval as u16,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two_fixture() {
        let bytes = [
            0x50, 0x35, 0x0A, 0x32, 0x20, 0x32, 0x0A, 0x32, 0x35, 0x35, 0x0A, 0x00, 0x01, 0x02, 0x03,
        ];
        let img = decode(&bytes).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (2, 2, 255));
        assert_eq!(img.data, vec![0, 1, 2, 3]);
        assert_eq!(encode(&img), bytes);
    }

    #[test]
    fn sixteen_bit_is_big_endian() {
        let img = Pgm {
            width: 2,
            height: 1,
            maxval: 65535,
            data: vec![0x0102, 0xfffe],
        };
        let bytes = encode(&img);
        assert!(bytes.ends_with(&[0x01, 0x02, 0xff, 0xfe]));
        assert_eq!(decode(&bytes).unwrap(), img);
    }

    #[test]
    fn comments_in_header() {
        let bytes = b"P5 # made by hand\n1 1\n# max\n9\n\x05";
        assert_eq!(decode(bytes).unwrap().data, vec![5]);
    }

    #[test]
    fn malformed_inputs() {
        for (bytes, needle) in [
            (&b"P6\n1 1\n255\n\x00"[..], "magic"),
            (b"P5\n1\n", "height"),
            (b"P5\n2 2\n255\n\x00\x01", "truncated"),
            (b"P5\n1 1\n70000\n\x00\x00", "maxval"),
            (b"P5\n1 1\n255\n\x00\x00", "trailing"),
            (b"P5\n1 1\n10\n\x0b", "exceeds"),
        ] {
            let err = decode(bytes).unwrap_err();
            assert!(err.contains(needle), "{err}");
        }
    }
}
