use super::DataError;
use std::path::Path;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl FrameImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(width * height, pixels.len(), "pixel count must equal width*height");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len().max(1) as f64
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> (usize, String) {
        (self.pos, reason.into())
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, (usize, String)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.fail(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| (start, format!("{what} out of range")))
    }
}

/// Parses a binary (P5) PGM with maxval 255. Errors carry the byte offset.
pub fn parse_pgm(bytes: &[u8]) -> Result<FrameImage, (usize, String)> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(c.fail("missing P5 magic"));
    }
    c.pos = 2;
    let width = c.number("width")?;
    let height = c.number("height")?;
    c.skip_space_and_comments();
    let maxval_at = c.pos;
    let maxval = c.number("maxval")?;
    if maxval != 255 {
        return Err((maxval_at, format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err((maxval_at, "zero image dimension".into()));
    }
    match bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.fail("expected single whitespace before raster")),
    }
    let need = width * height;
    let have = bytes.len() - c.pos;
    if have < need {
        return Err((bytes.len(), format!("truncated raster: {have} of {need} bytes")));
    }
    Ok(FrameImage::new(width, height, bytes[c.pos..c.pos + need].to_vec()))
}

pub fn read_pgm(path: &Path) -> Result<FrameImage, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    parse_pgm(&bytes).map_err(|(offset, reason)| DataError::Pgm {
        path: path.to_path_buf(),
        offset,
        reason,
    })
}

pub fn encode_pgm(image: &FrameImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.pixels);
    out
}

pub fn write_pgm(image: &FrameImage, path: &Path) -> Result<(), DataError> {
    std::fs::write(path, encode_pgm(image)).map_err(|e| DataError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_header() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!((img.width, img.height), (2, 2));
        assert_eq!(img.pixels, vec![1, 2, 3, 4]);
    }

    #[test]
    fn comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(9);
        assert_eq!(parse_pgm(&bytes).unwrap().pixels, vec![9]);
    }

    #[test]
    fn rejects_other_maxval() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend([0, 0]);
        let (offset, reason) = parse_pgm(&bytes).unwrap_err();
        assert_eq!(offset, 7);
        assert!(reason.contains("maxval"));
    }

    #[test]
    fn truncated_raster_reports_end_offset() {
        let bytes = b"P5\n2 2\n255\n\x01\x02".to_vec();
        let (offset, _) = parse_pgm(&bytes).unwrap_err();
        assert_eq!(offset, bytes.len());
    }

    #[test]
    fn bad_magic() {
        assert_eq!(parse_pgm(b"P2\n1 1\n255\n0").unwrap_err().0, 0);
    }

    proptest! {
        #[test]
        fn encode_parse_roundtrip(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
            let mut rng = crate::numeric::Rng::new(seed);
            let pixels = (0..w * h).map(|_| rng.below(256) as u8).collect();
            let img = FrameImage::new(w, h, pixels);
            prop_assert_eq!(parse_pgm(&encode_pgm(&img)).unwrap(), img);
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let img = FrameImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]);
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }
}
