//! The refractive field: a coordinate network emitting density and a raw
//! normal, and the volume accumulation of depth and normal along rays.

mod encoding;
mod network;
mod sampling;

pub use encoding::{encoded_len, positional_encode};
pub use network::{Architecture, InitOptions, Layout, NeRefNetwork};
pub use sampling::{hierarchical_resample, merge_sorted, sample_deltas, SamplingSchedule, PDF_EPSILON};

use rand::Rng;

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::geometry::{Ray, Vec3};

/// Network output at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldSample {
    pub sigma: f64,
    pub normal: Vec3,
}

/// Accumulated quantities along one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RayIntegral {
    /// Expected termination distance `Σ wᵢλᵢ`.
    pub depth: f64,
    /// `Σ wᵢnᵢ`, not normalized.
    pub normal: Vec3,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    pub surface_point: Vec3,
}

/// Tape nodes produced by [`record_integration`] for a batch of rays that
/// all carry the same number of samples.
#[derive(Debug, Clone, Copy)]
pub struct IntegralNodes {
    /// `(rays·k) × 1`
    pub sigma: NodeId,
    /// `(rays·k) × 3`
    pub raw_normal: NodeId,
    /// `(rays·k) × 1`
    pub transmittance: NodeId,
    /// `(rays·k) × 1`
    pub weights: NodeId,
    /// `rays × 1`
    pub depth: NodeId,
    /// `rays × 3`
    pub normal: NodeId,
}

/// Records the forward pass and the accumulation
/// `wᵢ = τᵢ(1 − exp(−σᵢδᵢ))`, `τᵢ = exp(−Σ_{j<i} σⱼδⱼ)` for every ray.
///
/// `positions` and `deltas` are ray-major with `per_ray` entries per ray.
pub fn record_integration(
    layout: &Layout,
    tape: &mut Tape<'_>,
    rays: &[Ray],
    positions: &[f64],
    deltas: &[f64],
    per_ray: usize,
) -> IntegralNodes {
    assert_eq!(positions.len(), rays.len() * per_ray);
    assert_eq!(deltas.len(), positions.len());
    let points: Vec<Vec3> = positions
        .chunks_exact(per_ray)
        .zip(rays)
        .flat_map(|(ls, r)| ls.iter().map(move |&l| r.at(l)))
        .collect();
    let enc = layout.encode_points(tape, &points);
    let (sigma, raw_normal) = layout.forward(tape, enc);

    let optical = tape.mul_const(sigma, Tensor::column(deltas.to_vec()));
    let before = tape.segment_exclusive_cumsum(optical, per_ray);
    let neg_before = tape.scale(before, -1.0);
    let transmittance = tape.exp(neg_before);
    let neg_optical = tape.scale(optical, -1.0);
    let survive = tape.exp(neg_optical);
    let neg_survive = tape.scale(survive, -1.0);
    let alpha = tape.add_scalar(neg_survive, 1.0);
    let weights = tape.mul(transmittance, alpha);

    let weighted_lambda = tape.mul_const(weights, Tensor::column(positions.to_vec()));
    let depth = tape.segment_sum(weighted_lambda, per_ray);
    let weighted_normal = tape.mul_col(raw_normal, weights);
    let normal = tape.segment_sum(weighted_normal, per_ray);
    IntegralNodes {
        sigma,
        raw_normal,
        transmittance,
        weights,
        depth,
        normal,
    }
}

/// Accumulates depth and normal along `ray` at fixed sample `positions`
/// (ascending); the last sample extends to `far`.
pub fn integrate_positions(network: &NeRefNetwork, ray: &Ray, positions: &[f64], far: f64) -> RayIntegral {
    let deltas = sample_deltas(positions, far);
    let mut tape = Tape::new(&network.params);
    let nodes = record_integration(&network.layout, &mut tape, std::slice::from_ref(ray), positions, &deltas, positions.len());
    let depth = tape.value(nodes.depth).data[0];
    let n = tape.value(nodes.normal);
    RayIntegral {
        depth,
        normal: Vec3::new(n.data[0], n.data[1], n.data[2]),
        positions: positions.to_vec(),
        weights: tape.value(nodes.weights).data.clone(),
        transmittance: tape.value(nodes.transmittance).data.clone(),
        surface_point: ray.at(depth),
    }
}

/// Coarse pass over `schedule`, then (when `fine_count > 0`) a fine pass over
/// the union of coarse and importance-resampled positions.
pub fn integrate_ray<R: Rng + ?Sized>(
    network: &NeRefNetwork,
    ray: &Ray,
    schedule: &SamplingSchedule,
    rng: &mut R,
) -> RayIntegral {
    let coarse = schedule.coarse_positions(rng);
    let first = integrate_positions(network, ray, &coarse, schedule.far);
    if schedule.fine_count == 0 {
        return first;
    }
    let fine = hierarchical_resample(&first.weights, schedule, rng);
    integrate_positions(network, ray, &merge_sorted(&coarse, &fine), schedule.far)
}

/// Horizontal slab `z_min ≤ z ≤ z_max` bounding the sampled volume.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slab {
    pub z_min: f64,
    pub z_max: f64,
}

impl Slab {
    /// The water column `0 ≤ z ≤ top` widened by `margin·top` on both sides.
    pub fn around_water(top: f64, margin: f64) -> Self {
        Self {
            z_min: -margin * top,
            z_max: top * (1.0 + margin),
        }
    }

    /// `(near, far)` of a downward ray crossing the slab.
    pub fn bounds(&self, ray: &Ray) -> Option<(f64, f64)> {
        let dz = ray.direction.z;
        if dz > -1e-9 {
            return None;
        }
        let near = ((ray.origin.z - self.z_max) / -dz).max(0.0);
        let far = (ray.origin.z - self.z_min) / -dz;
        (far > near).then_some((near, far))
    }
}

/// Ray-major sample positions and spacings, `per_ray` entries per ray.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySamples {
    pub per_ray: usize,
    pub positions: Vec<f64>,
    pub deltas: Vec<f64>,
}

pub fn coarse_samples<R: Rng + ?Sized>(schedule: &SamplingSchedule, bounds: &[(f64, f64)], rng: &mut R) -> RaySamples {
    let mut positions = Vec::with_capacity(bounds.len() * schedule.coarse_count);
    let mut deltas = Vec::with_capacity(positions.capacity());
    for &(near, far) in bounds {
        let p = schedule.with_bounds(near, far).coarse_positions(rng);
        deltas.extend(sample_deltas(&p, far));
        positions.extend(p);
    }
    RaySamples {
        per_ray: schedule.coarse_count,
        positions,
        deltas,
    }
}

/// Union of the coarse positions with importance samples drawn from the
/// coarse weights of each ray.
pub fn fine_samples<R: Rng + ?Sized>(
    schedule: &SamplingSchedule,
    bounds: &[(f64, f64)],
    coarse: &RaySamples,
    coarse_weights: &[f64],
    rng: &mut R,
) -> RaySamples {
    let k = coarse.per_ray;
    let per_ray = k + schedule.fine_count;
    let mut positions = Vec::with_capacity(bounds.len() * per_ray);
    let mut deltas = Vec::with_capacity(positions.capacity());
    for (i, &(near, far)) in bounds.iter().enumerate() {
        let s = schedule.with_bounds(near, far);
        let fine = hierarchical_resample(&coarse_weights[i * k..(i + 1) * k], &s, rng);
        let merged = merge_sorted(&coarse.positions[i * k..(i + 1) * k], &fine);
        deltas.extend(sample_deltas(&merged, far));
        positions.extend(merged);
    }
    RaySamples {
        per_ray,
        positions,
        deltas,
    }
}

/// Depth and raw accumulated normal for a batch of rays with per-ray
/// `(near, far)` bounds, using the coarse-then-fine schedule.
pub fn integrate_batch<R: Rng + ?Sized>(
    network: &NeRefNetwork,
    rays: &[Ray],
    bounds: &[(f64, f64)],
    schedule: &SamplingSchedule,
    rng: &mut R,
) -> Vec<(f64, Vec3)> {
    let coarse = coarse_samples(schedule, bounds, rng);
    let mut tape = Tape::new(&network.params);
    let c = record_integration(&network.layout, &mut tape, rays, &coarse.positions, &coarse.deltas, coarse.per_ray);
    let (depth, normal) = if schedule.fine_count == 0 {
        (c.depth, c.normal)
    } else {
        let weights = tape.value(c.weights).data.clone();
        let fine = fine_samples(schedule, bounds, &coarse, &weights, rng);
        let mut tape2 = Tape::new(&network.params);
        let f = record_integration(&network.layout, &mut tape2, rays, &fine.positions, &fine.deltas, fine.per_ray);
        tape = tape2;
        (f.depth, f.normal)
    };
    let (d, n) = (tape.value(depth), tape.value(normal));
    (0..rays.len())
        .map(|i| (d.data[i], Vec3::new(n.data[3 * i], n.data[3 * i + 1], n.data[3 * i + 2])))
        .collect()
}
