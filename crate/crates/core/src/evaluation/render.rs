use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::field::{integrate_batch, NeRefNetwork, SamplingSchedule, Slab};
use crate::geometry::{intersect_plane, refract, PinholeCamera, Ray, ReferencePlane, RefractionConstants, Vec3};
use crate::grid::{ColorImage, Grid};
use crate::simulator::Pattern;

/// Per-pixel depth and unit normal read from the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldPrediction {
    pub depth: Grid<f64>,
    /// Normalized accumulated normal; zero where the field accumulated none.
    pub normal: Grid<Vec3>,
    /// Pixels whose ray crosses the slab and accumulated a non-zero normal.
    pub valid: Grid<bool>,
}

/// Rays per inference tape.
const PREDICT_CHUNK: usize = 512;

/// Integrates the field along every pixel-center ray of `camera`.
///
/// Sampling is deterministic: coarse samples sit at bin centers and fine
/// samples at the midpoints of the inverse-CDF strata.
pub fn predict_view(
    network: &NeRefNetwork,
    camera: &PinholeCamera,
    slab: &Slab,
    schedule: &SamplingSchedule,
) -> FieldPrediction {
    let schedule = SamplingSchedule {
        stratified: false,
        ..*schedule
    };
    let (w, h) = (camera.width, camera.height);
    let mut out = FieldPrediction {
        depth: Grid::filled(w, h, 0.0),
        normal: Grid::filled(w, h, Vec3::zeros()),
        valid: Grid::filled(w, h, false),
    };
    let mut pixels = Vec::new();
    let mut rays = Vec::new();
    let mut bounds = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let ray = camera.pixel_center_ray(col, row);
            if let Some(b) = slab.bounds(&ray) {
                pixels.push(out.depth.index(col, row));
                rays.push(ray);
                bounds.push(b);
            }
        }
    }
    // deterministic schedules never draw from the stream
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for start in (0..rays.len()).step_by(PREDICT_CHUNK) {
        let end = (start + PREDICT_CHUNK).min(rays.len());
        let res = integrate_batch(network, &rays[start..end], &bounds[start..end], &schedule, &mut rng);
        for (k, (d, n)) in res.into_iter().enumerate() {
            let i = pixels[start + k];
            out.depth.data[i] = d;
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                out.normal.data[i] = n / len;
                out.valid.data[i] = true;
            }
        }
    }
    out
}

/// Refracts each pixel ray at `o + D·d` about the given normal and looks up
/// the pattern; failures and `mask == false` take the border color.
pub fn render_from_maps(
    camera: &PinholeCamera,
    depth: &Grid<f64>,
    normal: &Grid<Vec3>,
    mask: &Grid<bool>,
    pattern: &Pattern,
    plane: &ReferencePlane,
    constants: &RefractionConstants,
) -> ColorImage {
    Grid::from_fn(camera.width, camera.height, |col, row| {
        let i = depth.index(col, row);
        if !mask.data[i] {
            return pattern.border;
        }
        let ray = camera.pixel_center_ray(col, row);
        let n = normal.data[i];
        if n.norm() == 0.0 {
            return pattern.border;
        }
        let p = ray.at(depth.data[i]);
        let Ok(bent) = refract(&ray.direction, &n.normalize(), constants) else {
            return pattern.border;
        };
        match intersect_plane(&Ray::new(p, bent), plane) {
            Ok((l, q)) if l > 0.0 => pattern.sample(q.x, q.y),
            _ => pattern.border,
        }
    })
}

/// View synthesis from the field: integrate, refract, sample `pattern`.
pub fn render_from_field(
    network: &NeRefNetwork,
    camera: &PinholeCamera,
    pattern: &Pattern,
    plane: &ReferencePlane,
    constants: &RefractionConstants,
    slab: &Slab,
    schedule: &SamplingSchedule,
) -> ColorImage {
    let pred = predict_view(network, camera, slab, schedule);
    render_from_maps(camera, &pred.depth, &pred.normal, &pred.valid, pattern, plane, constants)
}
