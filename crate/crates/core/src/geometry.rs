//! Rays, pinhole cameras and the single-interface optics used by both the
//! simulator and the reconstruction pipeline.

use nalgebra::{Matrix3, Point2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("total internal reflection (radicand {0:.3e})")]
    TotalInternalReflection(f64),
    #[error("ray is parallel to the plane (|d·n| = {0:.3e})")]
    ParallelRay(f64),
    #[error("ray does not cross the height field in the given range")]
    NoIntersection,
}

/// Half-line `origin + λ·direction` with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    #[inline]
    pub fn at(&self, lambda: f64) -> Vec3 {
        self.origin + self.direction * lambda
    }
}

/// Ideal pinhole camera using the computer-vision convention: camera frame
/// x right, y down, z forward; `x_cam = R·x_world + t`.
///
/// Pixel `(u, v)` addresses continuous image coordinates; the center of the
/// pixel in column `i`, row `j` sits at `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PinholeCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    pub fn new(
        (fx, fy, cx, cy): (f64, f64, f64, f64),
        rotation: Matrix3<f64>,
        translation: Vec3,
        (width, height): (usize, usize),
    ) -> Result<Self, String> {
        if !(fx > 0.0 && fy > 0.0) {
            return Err(format!("focal lengths must be positive (fx={fx}, fy={fy})"));
        }
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if err > 1e-9 || rotation.determinant() < 0.0 {
            return Err(format!("rotation is not a proper orthonormal matrix (|RᵀR − I| = {err:.2e})"));
        }
        if width == 0 || height == 0 {
            return Err("resolution must be non-zero".into());
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with the image "up" direction
    /// as close to `up` as possible and a symmetric horizontal field of view.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fov_x_deg: f64,
        (width, height): (usize, usize),
    ) -> Result<Self, String> {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err("look-at direction is parallel to the up vector".into());
        }
        right.normalize_mut();
        // image y points down
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Self::new(
            (f, f, 0.5 * width as f64, 0.5 * height as f64),
            rotation,
            translation,
            (width, height),
        )
    }

    pub fn center(&self) -> Vec3 {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixel_to_ray(&self, pixel: Point2<f64>) -> Ray {
        let dir_cam = Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0);
        Ray::new(self.center(), self.rotation.transpose() * dir_cam)
    }

    /// Ray through the center of pixel (column, row).
    pub fn pixel_center_ray(&self, col: usize, row: usize) -> Ray {
        self.pixel_to_ray(Point2::new(col as f64 + 0.5, row as f64 + 0.5))
    }

    /// Projects a world point; `None` when the point is not in front of the camera.
    pub fn project(&self, point: &Vec3) -> Option<Point2<f64>> {
        let p = self.rotation * point + self.translation;
        if p.z <= 1e-12 {
            return None;
        }
        Some(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn contains(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

/// Plane `{x : normal·x = offset}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePlane {
    pub normal: Vec3,
    pub offset: f64,
}

impl ReferencePlane {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self {
            normal: normal.normalize(),
            offset,
        }
    }

    /// The pattern plane z = 0.
    pub fn canonical() -> Self {
        Self {
            normal: Vec3::z(),
            offset: 0.0,
        }
    }
}

impl Default for ReferencePlane {
    fn default() -> Self {
        Self::canonical()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefractionConstants {
    pub n1: f64,
    pub n2: f64,
}

impl RefractionConstants {
    pub fn new(n1: f64, n2: f64) -> Result<Self, String> {
        if !(n1 > 0.0 && n2 > 0.0) || !n1.is_finite() || !n2.is_finite() {
            return Err(format!("refractive indices must be positive (n1={n1}, n2={n2})"));
        }
        Ok(Self { n1, n2 })
    }

    #[inline]
    pub fn ratio(&self) -> f64 {
        self.n1 / self.n2
    }
}

impl Default for RefractionConstants {
    fn default() -> Self {
        Self { n1: 1.0, n2: 1.33 }
    }
}

/// Vector form of Snell's law.
///
/// `normal` must face the incident medium (`normal·incident < 0`). Both
/// inputs are expected to be unit length; the result is re-normalized.
pub fn refract(incident: &Vec3, normal: &Vec3, constants: &RefractionConstants) -> Result<Vec3, GeometryError> {
    let s = constants.ratio();
    let cos_i = normal.dot(incident);
    let a = -cos_i;
    let radicand = 1.0 - s * s * (1.0 - cos_i * cos_i);
    if radicand < 0.0 {
        return Err(GeometryError::TotalInternalReflection(radicand));
    }
    let b = radicand.sqrt();
    let t = incident * s + normal * (s * a - b);
    Ok(t.normalize())
}

/// Intersects `ray` with `plane`, returning the ray parameter and the point.
/// The parameter may be negative.
pub fn intersect_plane(ray: &Ray, plane: &ReferencePlane) -> Result<(f64, Vec3), GeometryError> {
    let denom = ray.direction.dot(&plane.normal);
    if denom.abs() <= 1e-12 {
        return Err(GeometryError::ParallelRay(denom.abs()));
    }
    let lambda = (plane.offset - ray.origin.dot(&plane.normal)) / denom;
    Ok((lambda, ray.at(lambda)))
}

/// A single-valued surface `z = height(x, y)`.
pub trait HeightField {
    /// Height and unit upward normal at `(x, y)`.
    fn height_and_normal(&self, x: f64, y: f64) -> (f64, Vec3);

    fn height(&self, x: f64, y: f64) -> f64 {
        self.height_and_normal(x, y).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceHit {
    pub lambda: f64,
    pub point: Vec3,
    pub normal: Vec3,
}

const MARCH_STEPS: usize = 64;
const BISECTION_STEPS: usize = 60;

/// First crossing of `ray` with `surface` inside `[lambda_min, lambda_max]`.
///
/// Marches with a fixed step of 1/64 of the range to bracket a sign change
/// of `z − height(x, y)`, then bisects.
pub fn intersect_heightfield<S: HeightField + ?Sized>(
    ray: &Ray,
    surface: &S,
    (lambda_min, lambda_max): (f64, f64),
) -> Result<SurfaceHit, GeometryError> {
    let gap = |lambda: f64| {
        let p = ray.at(lambda);
        p.z - surface.height(p.x, p.y)
    };
    let step = (lambda_max - lambda_min) / MARCH_STEPS as f64;
    let mut lo = lambda_min;
    let mut g_lo = gap(lo);
    let mut bracket = None;
    if g_lo == 0.0 {
        bracket = Some((lo, lo));
    }
    for i in 1..=MARCH_STEPS {
        if bracket.is_some() {
            break;
        }
        let hi = lambda_min + step * i as f64;
        let g_hi = gap(hi);
        if g_hi == 0.0 || g_lo.signum() != g_hi.signum() {
            bracket = Some((lo, hi));
        } else {
            lo = hi;
            g_lo = g_hi;
        }
    }
    let (mut a, mut b) = bracket.ok_or(GeometryError::NoIntersection)?;
    let mut g_a = gap(a);
    if g_a != 0.0 {
        for _ in 0..BISECTION_STEPS {
            let mid = 0.5 * (a + b);
            let g_mid = gap(mid);
            if g_mid == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if g_mid.signum() == g_a.signum() {
                a = mid;
                g_a = g_mid;
            } else {
                b = mid;
            }
        }
    }
    let lambda = 0.5 * (a + b);
    let p = ray.at(lambda);
    let (h, normal) = surface.height_and_normal(p.x, p.y);
    Ok(SurfaceHit {
        lambda,
        point: Vec3::new(p.x, p.y, h),
        normal,
    })
}
