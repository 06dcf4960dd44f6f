use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{ColorImage, Grid, Rgb};

/// Planar texture lying on z = 0, centered on the origin. Texel row 0 is at
/// +y, column 0 at −x.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub image: ColorImage,
    /// Physical size `[x, y]` in meters.
    pub extent: [f64; 2],
    pub border: Rgb,
}

impl Pattern {
    pub fn new(image: ColorImage, extent: [f64; 2], border: Rgb) -> Result<Self, String> {
        if !(extent[0] > 0.0 && extent[1] > 0.0) {
            return Err(format!("pattern extent must be positive, got {extent:?}"));
        }
        if image.width == 0 || image.height == 0 {
            return Err("pattern image is empty".into());
        }
        Ok(Self { image, extent, border })
    }

    /// Binary checkerboard of `cell × cell`-texel squares where each square is
    /// independently inverted with probability `flip_probability`.
    pub fn jittered_checkerboard(
        texels: usize,
        cell: usize,
        flip_probability: f64,
        seed: u64,
        extent: [f64; 2],
    ) -> Result<Self, String> {
        if texels == 0 || cell == 0 {
            return Err("pattern texels and cell must be positive".into());
        }
        let cells = texels.div_ceil(cell);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let flips: Vec<bool> = (0..cells * cells).map(|_| rng.random::<f64>() < flip_probability).collect();
        let image = Grid::from_fn(texels, texels, |c, r| {
            let (i, j) = (c / cell, r / cell);
            let on = ((i + j) % 2 == 0) ^ flips[j * cells + i];
            if on {
                [1.0; 3]
            } else {
                [0.0; 3]
            }
        });
        Self::new(image, extent, [0.5; 3])
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x.abs() <= 0.5 * self.extent[0] && y.abs() <= 0.5 * self.extent[1]
    }

    /// Bilinear lookup; points outside the extent return the border color.
    pub fn sample(&self, x: f64, y: f64) -> Rgb {
        if !self.contains(x, y) {
            return self.border;
        }
        let (w, h) = (self.image.width, self.image.height);
        let u = (x / self.extent[0] + 0.5) * w as f64 - 0.5;
        let v = (0.5 - y / self.extent[1]) * h as f64 - 0.5;
        let u = u.clamp(0.0, (w - 1) as f64);
        let v = v.clamp(0.0, (h - 1) as f64);
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(w - 1), (r0 + 1).min(h - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            let top = self.image.get(c0, r0)[k] * (1.0 - fu) + self.image.get(c1, r0)[k] * fu;
            let bottom = self.image.get(c0, r1)[k] * (1.0 - fu) + self.image.get(c1, r1)[k] * fu;
            *o = top * (1.0 - fv) + bottom * fv;
        }
        out
    }
}
