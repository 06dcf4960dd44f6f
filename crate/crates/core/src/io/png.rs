use std::path::Path;

use super::IoError;
use crate::grid::{ColorImage, Grid};

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit RGB PNG.
pub fn write_png(path: &Path, image: &ColorImage) -> Result<(), IoError> {
    let mut buf = Vec::with_capacity(image.data.len() * 3);
    for c in &image.data {
        buf.extend(c.iter().map(|&v| quantize(v)));
    }
    image::save_buffer_with_format(
        path,
        &buf,
        image.width as u32,
        image.height as u32,
        image::ColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| IoError::format(path, e.to_string()))
}

/// Reads any PNG as RGB in [0, 1].
pub fn read_png(path: &Path) -> Result<ColorImage, IoError> {
    let img = image::open(path).map_err(|e| IoError::format(path, e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| [p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0])
        .collect();
    Ok(Grid::from_vec(w, h, data))
}
