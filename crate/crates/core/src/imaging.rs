//! Frame decoding/encoding (binary netpbm) and ordered frame sequences.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("unsupported netpbm magic {0:?} (expected P5 or P6)")]
    UnknownMagic(String),
    #[error("malformed netpbm header: {0}")]
    BadHeader(String),
    #[error("maxval {0} outside 1..=255")]
    BadMaxval(u32),
    #[error("truncated pixel payload: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("invalid file pattern {pattern:?}: {message}")]
    Pattern { pattern: String, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{name}: {source}")]
    File {
        name: String,
        #[source]
        source: Box<ImagingError>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
    pub index: usize,
    pub label: Option<String>,
}

impl Frame {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<f64>,
    ) -> Result<Self, ImagingError> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidFrame(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(ImagingError::InvalidFrame(format!(
                "{} pixel values for {width}x{height}x{channels}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ImagingError::InvalidFrame(format!(
                "pixel value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
            index: 0,
            label: None,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid constant frame")
    }

    pub fn with_index(mut self, index: usize) -> Self {
        self.index = index;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn mean_intensity(&self) -> f64 {
        if self.pixels.is_empty() {
            return 0.0;
        }
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Channel-average conversion; grayscale frames are returned as is.
    pub fn to_grayscale(&self) -> Frame {
        if self.channels == 1 {
            return self.clone();
        }
        let pixels = self
            .pixels
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect();
        Frame {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels,
            index: self.index,
            label: self.label.clone(),
        }
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32, ImagingError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::BadHeader(format!("{what} out of range")))
    }
}

/// Decodes a binary P5 (grayscale) or P6 (RGB) image.
pub fn parse_netpbm(bytes: &[u8]) -> Result<Frame, ImagingError> {
    let magic = bytes.get(..2).unwrap_or(bytes);
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        other => {
            return Err(ImagingError::UnknownMagic(
                String::from_utf8_lossy(other).into_owned(),
            ))
        }
    };
    let mut header = HeaderReader { bytes, pos: 2 };
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(ImagingError::BadMaxval(maxval));
    }
    // exactly one whitespace byte separates maxval from the raster
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => {
            return Err(ImagingError::BadHeader(
                "expected whitespace after maxval".into(),
            ))
        }
    }
    let expected = width * height * channels;
    let payload = &bytes[header.pos..];
    if payload.len() < expected {
        return Err(ImagingError::Truncated {
            expected,
            actual: payload.len(),
        });
    }
    let scale = f64::from(maxval);
    let mut pixels = Vec::with_capacity(expected);
    for &b in &payload[..expected] {
        if u32::from(b) > maxval {
            return Err(ImagingError::BadHeader(format!(
                "sample {b} exceeds maxval {maxval}"
            )));
        }
        pixels.push(f64::from(b) / scale);
    }
    Frame::new(width, height, channels, pixels)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes as binary P6 with maxval 255; grayscale frames are replicated into RGB.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6 {} {} 255\n", frame.width, frame.height).into_bytes();
    out.reserve(frame.width * frame.height * 3);
    match frame.channels {
        1 => {
            for &v in &frame.pixels {
                let b = to_byte(v);
                out.extend_from_slice(&[b, b, b]);
            }
        }
        _ => out.extend(frame.pixels.iter().map(|&v| to_byte(v))),
    }
    out
}

/// Encodes a grayscale frame as binary P5.
pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let gray = frame.to_grayscale();
    let mut out = format!("P5 {} {} 255\n", gray.width, gray.height).into_bytes();
    out.extend(gray.pixels.iter().map(|&v| to_byte(v)));
    out
}

/// Lexicographically ordered sequence of frame files in one directory.
#[derive(Debug, Clone)]
pub struct FrameSource {
    locators: Vec<PathBuf>,
    cursor: usize,
}

impl FrameSource {
    pub fn locators(&self) -> &[PathBuf] {
        &self.locators
    }

    pub fn len(&self) -> usize {
        self.locators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locators.is_empty()
    }
}

impl Iterator for FrameSource {
    type Item = Result<Frame, ImagingError>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = self.locators.get(self.cursor)?;
        let index = self.cursor;
        self.cursor += 1;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let result = fs::read(path)
            .map_err(|source| ImagingError::Io {
                path: path.clone(),
                source,
            })
            .and_then(|bytes| parse_netpbm(&bytes))
            .map(|mut frame| {
                frame.index = index;
                frame.label = Some(name.clone());
                frame
            })
            .map_err(|e| ImagingError::File {
                name,
                source: Box::new(e),
            });
        Some(result)
    }
}

/// Lists regular files in `dir` whose names match the glob `pattern`, sorted by name.
pub fn list_matching(dir: &Path, pattern: &str) -> Result<Vec<PathBuf>, ImagingError> {
    let matcher = glob::Pattern::new(pattern).map_err(|e| ImagingError::Pattern {
        pattern: pattern.to_string(),
        message: e.to_string(),
    })?;
    let io_err = |source| ImagingError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut locators = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if !entry.file_type().map_err(io_err)?.is_file() {
            continue;
        }
        if matcher.matches(&entry.file_name().to_string_lossy()) {
            locators.push(entry.path());
        }
    }
    locators.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(locators)
}

pub fn open_sequence(dir: &Path, pattern: &str) -> Result<FrameSource, ImagingError> {
    Ok(FrameSource {
        locators: list_matching(dir, pattern)?,
        cursor: 0,
    })
}

/// Nearest-neighbour resample to `target_h x target_w`, sampling source index
/// `floor(i * src / dst)` on each axis.
pub fn to_tensor(frame: &Frame, target_h: usize, target_w: usize) -> Tensor {
    assert!(target_h >= 1 && target_w >= 1, "target dims must be >= 1");
    let c = frame.channels;
    let mut data = Vec::with_capacity(target_h * target_w * c);
    for i in 0..target_h {
        let sy = i * frame.height / target_h;
        for j in 0..target_w {
            let sx = j * frame.width / target_w;
            let base = (sy * frame.width + sx) * c;
            data.extend_from_slice(&frame.pixels[base..base + c]);
        }
    }
    Tensor::new(target_h, target_w, c, data).expect("resampled pixels are finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_p5_example() {
        let mut bytes = b"P5 2 2 255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        let f = parse_netpbm(&bytes).unwrap();
        assert_eq!((f.width(), f.height(), f.channels()), (2, 2, 1));
        assert_eq!(f.pixels(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn parses_single_white_pixel() {
        let f = parse_netpbm(b"P5\n1 1\n255\n\xff").unwrap();
        assert_eq!(f.pixels(), &[1.0]);
    }

    #[test]
    fn parses_comments_and_small_maxval() {
        let f = parse_netpbm(b"P6\n# made by hand\n1 1\n# depth\n3\n\x03\x00\x01").unwrap();
        assert_eq!(f.channels(), 3);
        assert_eq!(f.pixels(), &[1.0, 0.0, 1.0 / 3.0]);
    }

    #[test]
    fn parse_errors_are_distinct() {
        assert!(matches!(
            parse_netpbm(b"P4 1 1\n\x00"),
            Err(ImagingError::UnknownMagic(m)) if m == "P4"
        ));
        assert!(matches!(
            parse_netpbm(b"P5 2 2 255\n\x00\x01"),
            Err(ImagingError::Truncated {
                expected: 4,
                actual: 2
            })
        ));
        assert!(matches!(
            parse_netpbm(b"P5 1 1 0\n\x00"),
            Err(ImagingError::BadMaxval(0))
        ));
        assert!(matches!(
            parse_netpbm(b"P5 1 1 65535\n\x00\x00"),
            Err(ImagingError::BadMaxval(65535))
        ));
        assert!(matches!(
            parse_netpbm(b"P5 x 1 255\n"),
            Err(ImagingError::BadHeader(_))
        ));
        assert!(matches!(parse_netpbm(b""), Err(ImagingError::UnknownMagic(_))));
    }

    #[test]
    fn encodes_white_and_black() {
        assert_eq!(
            encode_ppm(&Frame::filled(1, 1, 3, 1.0)),
            b"P6 1 1 255\n\xff\xff\xff"
        );
        let black = encode_ppm(&Frame::filled(1, 1, 3, 0.0));
        assert_eq!(&black[black.len() - 3..], &[0, 0, 0]);
    }

    #[test]
    fn rounding_is_half_up() {
        let f = Frame::new(2, 1, 1, vec![0.5 / 255.0, 254.5 / 255.0]).unwrap();
        let bytes = encode_pgm(&f);
        assert_eq!(&bytes[bytes.len() - 2..], &[1, 255]);
    }

    #[test]
    fn resize_examples() {
        let f = Frame::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(to_tensor(&f, 2, 2).data(), f.pixels());
        assert_eq!(to_tensor(&f, 1, 1).data(), &[0.1]);
        let one = Frame::new(1, 1, 3, vec![0.2, 0.4, 0.6]).unwrap();
        let up = to_tensor(&one, 2, 2);
        assert_eq!(up.shape(), (2, 2, 3));
        assert_eq!(up.data(), [0.2, 0.4, 0.6].repeat(4));
    }

    #[test]
    fn frame_validation() {
        assert!(Frame::new(1, 1, 2, vec![0.0, 0.0]).is_err());
        assert!(Frame::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Frame::new(2, 1, 1, vec![0.0]).is_err());
    }

    #[test]
    fn grayscale_averages_channels() {
        let f = Frame::new(1, 1, 3, vec![0.0, 0.3, 0.6]).unwrap();
        let g = f.to_grayscale();
        assert_eq!(g.channels(), 1);
        assert!((g.pixels()[0] - 0.3).abs() < 1e-15);
    }
}
