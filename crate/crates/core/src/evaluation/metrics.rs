use thiserror::Error;

use crate::geometry::Vec3;
use crate::grid::{luma, ColorImage, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("shape mismatch: {0}×{1} vs {2}×{3}")]
pub struct ShapeMismatch(pub usize, pub usize, pub usize, pub usize);

fn same<T, U>(a: &Grid<T>, b: &Grid<U>) -> Result<(), ShapeMismatch> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(ShapeMismatch(a.width, a.height, b.width, b.height))
    }
}

/// Aggregate depth/normal errors over masked pixels, with per-pixel maps.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryErrors {
    pub depth_rmse: f64,
    /// Mean of `|D − D_gt| / D_gt`.
    pub depth_relative_error: f64,
    /// Degrees.
    pub normal_angle_mean: f64,
    pub normal_l2_mean: f64,
    pub pixels: usize,
    pub relative_error_map: Grid<f64>,
    pub angle_map: Grid<f64>,
}

fn unit(v: &Vec3) -> Vec3 {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        *v
    }
}

/// Angle between normals in degrees; inputs are normalized first.
pub fn normal_angle_deg(a: &Vec3, b: &Vec3) -> f64 {
    unit(a).dot(&unit(b)).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn depth_normal_errors(
    depth: &Grid<f64>,
    normal: &Grid<Vec3>,
    true_depth: &Grid<f64>,
    true_normal: &Grid<Vec3>,
    mask: &Grid<bool>,
) -> Result<GeometryErrors, ShapeMismatch> {
    same(depth, true_depth)?;
    same(normal, true_normal)?;
    same(depth, normal)?;
    same(depth, mask)?;
    let (w, h) = (depth.width, depth.height);
    let mut rel_map = Grid::filled(w, h, 0.0);
    let mut angle_map = Grid::filled(w, h, 0.0);
    let (mut sq, mut rel, mut ang, mut l2, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for i in 0..depth.data.len() {
        if !mask.data[i] {
            continue;
        }
        let e = depth.data[i] - true_depth.data[i];
        let r = e.abs() / true_depth.data[i];
        let (a, b) = (unit(&normal.data[i]), unit(&true_normal.data[i]));
        let angle = normal_angle_deg(&a, &b);
        sq += e * e;
        rel += r;
        ang += angle;
        l2 += (a - b).norm();
        n += 1;
        rel_map.data[i] = r;
        angle_map.data[i] = angle;
    }
    let m = n.max(1) as f64;
    Ok(GeometryErrors {
        depth_rmse: (sq / m).sqrt(),
        depth_relative_error: rel / m,
        normal_angle_mean: ang / m,
        normal_l2_mean: l2 / m,
        pixels: n,
        relative_error_map: rel_map,
        angle_map,
    })
}

/// `10·log10(1/MSE)` over all channels; identical images give `+∞`.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64, ShapeMismatch> {
    same(a, b)?;
    let mut sum = 0.0;
    for (x, y) in a.data.iter().zip(&b.data) {
        for k in 0..3 {
            sum += (x[k] - y[k]).powi(2);
        }
    }
    let mse = sum / (3 * a.data.len()).max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let k: Vec<f64> = (0..=2 * SSIM_RADIUS)
        .map(|i| {
            let x = i as f64 - SSIM_RADIUS as f64;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM on luma with an 11×11 Gaussian window (σ = 1.5) evaluated at
/// every position where the window fits; data range 1.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64, ShapeMismatch> {
    same(a, b)?;
    let (w, h) = (a.width, a.height);
    let side = 2 * SSIM_RADIUS + 1;
    if w < side || h < side {
        return Ok(if a == b { 1.0 } else { ssim_global(a, b) });
    }
    let x: Vec<f64> = a.data.iter().map(luma).collect();
    let y: Vec<f64> = b.data.iter().map(luma).collect();
    let g = gaussian_window();
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mut total = 0.0;
    let mut count = 0usize;
    for r in SSIM_RADIUS..h - SSIM_RADIUS {
        for c in SSIM_RADIUS..w - SSIM_RADIUS {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i, gi) in g.iter().enumerate() {
                let row = (r + i - SSIM_RADIUS) * w;
                for (j, gj) in g.iter().enumerate() {
                    let k = row + c + j - SSIM_RADIUS;
                    let wt = gi * gj;
                    mx += wt * x[k];
                    my += wt * y[k];
                    xx += wt * x[k] * x[k];
                    yy += wt * y[k] * y[k];
                    xy += wt * x[k] * y[k];
                }
            }
            let (vx, vy, cxy) = (xx - mx * mx, yy - my * my, xy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Single-window SSIM for images smaller than the Gaussian window.
fn ssim_global(a: &ColorImage, b: &ColorImage) -> f64 {
    let x: Vec<f64> = a.data.iter().map(luma).collect();
    let y: Vec<f64> = b.data.iter().map(luma).collect();
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// `(PSNR, SSIM)` of `rendered` against `reference`.
pub fn image_metrics(rendered: &ColorImage, reference: &ColorImage) -> Result<(f64, f64), ShapeMismatch> {
    Ok((psnr(rendered, reference)?, ssim(rendered, reference)?))
}

/// Mean absolute per-channel difference.
pub fn mean_abs_diff(a: &ColorImage, b: &ColorImage) -> Result<f64, ShapeMismatch> {
    same(a, b)?;
    let s: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|k| (x[k] - y[k]).abs()).sum::<f64>())
        .sum();
    Ok(s / (3 * a.data.len()).max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> ColorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Grid::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn identical_images() {
        for seed in 0..100 {
            let a = random_image(16, 13, seed);
            let (p, s) = image_metrics(&a, &a).unwrap();
            assert_eq!(p, f64::INFINITY);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_of_half_gray() {
        let a = Grid::filled(8, 8, [0.0; 3]);
        let b = Grid::filled(8, 8, [0.5; 3]);
        // MSE 0.25 → 10·log10(4)
        assert!((psnr(&a, &b).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn brightness_shift_lowers_ssim() {
        let a = random_image(24, 24, 1).map(|c| c.map(|v| 0.5 * v));
        let b = a.map(|c| c.map(|v| v + 0.4));
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0 && s > -1.0);
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let a = Grid::filled(8, 8, [0.0; 3]);
        let b = Grid::filled(8, 9, [0.0; 3]);
        assert_eq!(psnr(&a, &b), Err(ShapeMismatch(8, 8, 8, 9)));
    }

    #[test]
    fn error_identities() {
        let d = Grid::filled(3, 2, 0.5);
        let n = Grid::filled(3, 2, Vec3::new(0.2, 0.1, 1.0));
        let mask = Grid::filled(3, 2, true);
        let e = depth_normal_errors(&d, &n, &d, &n, &mask).unwrap();
        assert_eq!((e.depth_rmse, e.depth_relative_error, e.normal_l2_mean), (0.0, 0.0, 0.0));
        assert!(e.normal_angle_mean < 1e-6);
        let flipped = n.map(|v| -v);
        let e = depth_normal_errors(&d, &flipped, &d, &n, &mask).unwrap();
        assert!((e.normal_angle_mean - 180.0).abs() < 1e-9);
        assert!((e.normal_l2_mean - 2.0).abs() < 1e-12);
        // unit normals 60° apart: chord 2·sin 30° = 1
        let t = std::f64::consts::FRAC_PI_3;
        let tilted = Grid::filled(3, 2, Vec3::new(t.sin(), 0.0, t.cos()));
        let up = Grid::filled(3, 2, Vec3::z());
        let e = depth_normal_errors(&d, &tilted, &d, &up, &mask).unwrap();
        assert!((e.normal_l2_mean - 1.0).abs() < 1e-12);
        assert!((e.normal_angle_mean - 60.0).abs() < 1e-9);
    }

    #[test]
    fn positive_scaling_of_normals_is_ignored() {
        let d = Grid::filled(2, 2, 0.4);
        let truth = Grid::from_fn(2, 2, |c, r| Vec3::new(c as f64 * 0.1, r as f64 * 0.2, 1.0).normalize());
        let guess = Grid::from_fn(2, 2, |c, r| Vec3::new(0.05 + c as f64 * 0.1, r as f64 * 0.1, 1.0));
        let mask = Grid::filled(2, 2, true);
        let a = depth_normal_errors(&d, &guess, &d, &truth, &mask).unwrap();
        let b = depth_normal_errors(&d, &guess.map(|v| v * 7.5), &d, &truth, &mask).unwrap();
        assert!((a.normal_angle_mean - b.normal_angle_mean).abs() < 1e-12);
    }

    #[test]
    fn masked_pixels_do_not_count() {
        let d = Grid::from_vec(2, 1, vec![0.5, 9.0]);
        let t = Grid::from_vec(2, 1, vec![0.5, 0.5]);
        let n = Grid::filled(2, 1, Vec3::z());
        let mask = Grid::from_vec(2, 1, vec![true, false]);
        let e = depth_normal_errors(&d, &n, &t, &n, &mask).unwrap();
        assert_eq!(e.pixels, 1);
        assert_eq!(e.depth_rmse, 0.0);
    }
}
