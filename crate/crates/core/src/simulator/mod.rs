//! Synthetic ground truth: analytic water surfaces seen by a camera rig over
//! a planar pattern, rendered by forward ray tracing.

mod pattern;
mod scene;
mod wave;

pub use pattern::Pattern;
pub use scene::{
    CameraConfig, PatternConfig, RigConfig, Scene, SceneCamera, SceneConfig, SCENE_CONFIG_VERSION,
};
pub use wave::{WaveComponent, WaveSurface};

use nalgebra::Point2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{intersect_heightfield, intersect_plane, refract, PinholeCamera, Ray, Vec3};
use crate::grid::{ColorImage, Grid};

/// Per-pixel displacement from the distorted (with water) frame to the
/// reference (dry) frame, in pixels: the pattern point seen through pixel
/// `p` appears at `p + disp` in the dry image.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpField {
    pub disp: Grid<[f64; 2]>,
    pub valid: Grid<bool>,
}

impl WarpField {
    pub fn valid_count(&self) -> usize {
        self.valid.data.iter().filter(|&&v| v).count()
    }
}

/// Everything the simulator knows about one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewRender {
    pub image: ColorImage,
    /// Ray parameter of the first surface hit (the pattern plane when dry).
    pub depth: Grid<f64>,
    pub normal: Grid<Vec3>,
    /// Pattern point reached by each pixel's (refracted) ray.
    pub pattern_point: Grid<Vec3>,
    /// Pixels whose ray reached the pattern plane.
    pub hit: Grid<bool>,
    pub warp: WarpField,
}

/// Result of tracing one camera ray through the scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracedRay {
    pub depth: f64,
    pub surface_point: Vec3,
    pub normal: Vec3,
    pub pattern_point: Vec3,
}

impl Scene {
    /// Traces `ray` through the water surface onto the pattern plane.
    pub fn trace(&self, ray: &Ray) -> Option<TracedRay> {
        let dz = ray.direction.z;
        if dz >= -1e-12 {
            return None;
        }
        let top = self.surface.max_height() + 1e-6;
        let bottom = self.surface.min_height() - 1e-6;
        let range = ((ray.origin.z - top) / -dz, (ray.origin.z - bottom) / -dz);
        let hit = intersect_heightfield(ray, &self.surface, range).ok()?;
        if hit.normal.dot(&ray.direction) >= 0.0 {
            return None;
        }
        let bent = refract(&ray.direction, &hit.normal, &self.constants).ok()?;
        let (lambda, q) = intersect_plane(&Ray::new(hit.point, bent), &self.plane).ok()?;
        (lambda > 0.0).then_some(TracedRay {
            depth: hit.lambda,
            surface_point: hit.point,
            normal: hit.normal,
            pattern_point: q,
        })
    }

    /// Renders camera `index` with or without water.
    pub fn render_view(&self, index: usize, with_water: bool) -> ViewRender {
        render_camera(self, &self.cameras[index].camera, with_water)
    }
}

/// Renders an arbitrary camera against `scene`.
pub fn render_camera(scene: &Scene, camera: &PinholeCamera, with_water: bool) -> ViewRender {
    let (w, h) = (camera.width, camera.height);
    let mut out = ViewRender {
        image: Grid::filled(w, h, scene.pattern.border),
        depth: Grid::filled(w, h, 0.0),
        normal: Grid::filled(w, h, Vec3::zeros()),
        pattern_point: Grid::filled(w, h, Vec3::zeros()),
        hit: Grid::filled(w, h, false),
        warp: WarpField {
            disp: Grid::filled(w, h, [0.0; 2]),
            valid: Grid::filled(w, h, false),
        },
    };
    for row in 0..h {
        for col in 0..w {
            let ray = camera.pixel_center_ray(col, row);
            let traced = if with_water {
                scene.trace(&ray)
            } else {
                intersect_plane(&ray, &scene.plane)
                    .ok()
                    .filter(|(l, _)| *l > 0.0)
                    .map(|(l, q)| TracedRay {
                        depth: l,
                        surface_point: q,
                        normal: scene.plane.normal,
                        pattern_point: q,
                    })
            };
            let Some(t) = traced else { continue };
            let i = out.image.index(col, row);
            let q = t.pattern_point;
            out.image.data[i] = scene.pattern.sample(q.x, q.y);
            out.depth.data[i] = t.depth;
            out.normal.data[i] = t.normal;
            out.pattern_point.data[i] = q;
            out.hit.data[i] = true;
            let pixel = Point2::new(col as f64 + 0.5, row as f64 + 0.5);
            if let Some(p) = camera.project(&q) {
                if scene.pattern.contains(q.x, q.y) && camera.contains(&p) {
                    out.warp.disp.data[i] = [p.x - pixel.x, p.y - pixel.y];
                    out.warp.valid.data[i] = true;
                }
            }
        }
    }
    out
}

/// Adds i.i.d. `N(0, amplitude²)` noise to both components of every valid
/// displacement. Invalid pixels and the mask are left untouched.
pub fn inject_flow_noise(warp: &WarpField, amplitude: f64, seed: u64) -> WarpField {
    assert!(amplitude >= 0.0, "noise amplitude must be non-negative");
    let mut out = warp.clone();
    if amplitude == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0, amplitude).expect("finite amplitude");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (d, &v) in out.disp.data.iter_mut().zip(&warp.valid.data) {
        if v {
            d[0] += normal.sample(&mut rng);
            d[1] += normal.sample(&mut rng);
        }
    }
    out
}
