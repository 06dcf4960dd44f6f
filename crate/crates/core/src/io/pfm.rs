use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::IoError;

/// Portable float map: 1 (`Pf`) or 3 (`PF`) channels, rows stored top-first
/// in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl PfmImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(channels == 1 || channels == 3, "PFM supports 1 or 3 channels");
        assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn pixel(&self, col: usize, row: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Little-endian encoding; scanlines written bottom row first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let tag = if self.channels == 3 { "PF" } else { "Pf" };
        let mut out = format!("{tag}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        let stride = self.width * self.channels;
        for row in (0..self.height).rev() {
            for v in &self.data[row * stride..(row + 1) * stride] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, String> {
        let mut r = BufReader::new(reader);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if r.read_line(&mut line).map_err(|e| e.to_string())? == 0 {
                return Err("truncated PFM header".into());
            }
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let channels = match tokens[0].as_str() {
            "PF" => 3,
            "Pf" => 1,
            t => return Err(format!("not a PFM file (magic {t:?})")),
        };
        let width: usize = tokens[1].parse().map_err(|_| "bad PFM width")?;
        let height: usize = tokens[2].parse().map_err(|_| "bad PFM height")?;
        let scale: f64 = tokens[3].parse().map_err(|_| "bad PFM scale")?;
        if scale == 0.0 {
            return Err("PFM scale must be non-zero".into());
        }
        let little = scale < 0.0;
        let stride = width * channels;
        let mut raw = vec![0u8; stride * height * 4];
        r.read_exact(&mut raw).map_err(|e| format!("truncated PFM data: {e}"))?;
        let mut data = vec![0f32; stride * height];
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            let (file_row, col) = (i / stride, i % stride);
            data[(height - 1 - file_row) * stride + col] = v;
        }
        Ok(Self::new(width, height, channels, data))
    }
}

pub fn write_pfm(path: &Path, image: &PfmImage) -> Result<(), IoError> {
    let mut f = std::fs::File::create(path).map_err(|e| IoError::file(path, e))?;
    f.write_all(&image.to_bytes()).map_err(|e| IoError::file(path, e))
}

pub fn read_pfm(path: &Path) -> Result<PfmImage, IoError> {
    let f = std::fs::File::open(path).map_err(|e| IoError::file(path, e))?;
    PfmImage::from_reader(f).map_err(|m| IoError::format(path, m))
}
