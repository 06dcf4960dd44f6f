use crate::autodiff::{smooth_l1, NodeId, Tape, Tensor};
use crate::field::IntegralNodes;
use crate::geometry::{Ray, ReferencePlane, RefractionConstants, Vec3};

/// Smooth-L1 of the distance between the predicted and target pattern hits.
pub fn correspondence_loss(q_f: &Vec3, q_gt: &Vec3, delta: f64) -> f64 {
    smooth_l1((q_f - q_gt).norm(), delta)
}

/// Per-ray smoothness penalties of one 2×2 patch with depths ordered
/// top-left, top-right, bottom-left, bottom-right. Each ray uses the forward
/// differences of the row and column it belongs to.
pub fn depth_smoothness_loss(depths: [f64; 4], pitch: f64, delta: f64) -> [f64; 4] {
    let [a, b, c, d] = depths;
    let dx = [b - a, b - a, d - c, d - c];
    let dy = [c - a, d - b, c - a, d - b];
    std::array::from_fn(|i| smooth_l1((dx[i].abs() + dy[i].abs()) / pitch, delta))
}

/// Row indices `(hi, lo)` of the horizontal and vertical differences for a
/// batch of whole patches.
pub(crate) fn patch_difference_rows(rays: usize) -> ([Vec<usize>; 2], [Vec<usize>; 2]) {
    let mut dx = [Vec::with_capacity(rays), Vec::with_capacity(rays)];
    let mut dy = [Vec::with_capacity(rays), Vec::with_capacity(rays)];
    for base in (0..rays).step_by(4) {
        let [a, b, c, d] = [base, base + 1, base + 2, base + 3];
        dx[0].extend([b, b, d, d]);
        dx[1].extend([a, a, c, c]);
        dy[0].extend([c, d, c, d]);
        dy[1].extend([a, b, a, b]);
    }
    (dx, dy)
}

/// Loss nodes of one integration pass.
pub(crate) struct PassLoss {
    /// `n×1` correspondence penalty per ray.
    pub corr: NodeId,
    /// `n×1` smoothness penalty per ray.
    pub smooth: NodeId,
    /// Rays whose refraction and plane intersection are well defined.
    pub valid: Vec<bool>,
}

pub(crate) struct PassInputs<'a> {
    pub rays: &'a [Ray],
    pub targets: &'a [Vec3],
    pub plane: &'a ReferencePlane,
    pub constants: &'a RefractionConstants,
    pub huber_delta: f64,
    pub pixel_pitch: f64,
}

/// Records `p_s = o + D·d`, refraction through `N/‖N‖`, the plane hit and
/// both per-ray penalties.
pub(crate) fn record_pass_loss(tape: &mut Tape<'_>, nodes: &IntegralNodes, inp: &PassInputs<'_>) -> PassLoss {
    let n = inp.rays.len();
    let s = inp.constants.ratio();
    let dirs = Tensor::new(n, 3, inp.rays.iter().flat_map(|r| r.direction.iter().copied()).collect());
    let origins = Tensor::new(n, 3, inp.rays.iter().flat_map(|r| r.origin.iter().copied()).collect());
    let plane_n = Tensor::new(n, 3, (0..n).flat_map(|_| inp.plane.normal.iter().copied()).collect());
    let d = tape.input(dirs.clone());
    let pn = tape.input(plane_n);

    let along = tape.mul_col(d, nodes.depth);
    let p = tape.add_const(along, &origins);
    let nh = tape.normalize(nodes.normal);
    let cos = tape.row_dot(nh, d);
    let cos2 = tape.mul(cos, cos);
    let scaled = tape.scale(cos2, s * s);
    let rad = tape.add_scalar(scaled, 1.0 - s * s);
    let b = tape.sqrt(rad);
    let sc = tape.scale(cos, -s);
    let coef = tape.sub(sc, b);
    let bend = tape.mul_col(nh, coef);
    let sd = Tensor::new(n, 3, dirs.data.iter().map(|v| s * v).collect());
    let raw_dir = tape.add_const(bend, &sd);
    let dir = tape.normalize(raw_dir);

    let p_dot = tape.row_dot(p, pn);
    let neg = tape.scale(p_dot, -1.0);
    let num = tape.add_scalar(neg, inp.plane.offset);
    let den = tape.row_dot(dir, pn);
    let lambda = tape.div(num, den);
    let step = tape.mul_col(dir, lambda);
    let hit = tape.add(p, step);

    let target = Tensor::new(n, 3, inp.targets.iter().flat_map(|q| q.iter().map(|v| -v)).collect());
    let diff = tape.add_const(hit, &target);
    let dist = tape.row_norm(diff);
    let corr = tape.smooth_l1(dist, inp.huber_delta);

    let (dx, dy) = patch_difference_rows(n);
    let [dx_hi, dx_lo] = dx;
    let [dy_hi, dy_lo] = dy;
    let gx_hi = tape.gather(nodes.depth, dx_hi);
    let gx_lo = tape.gather(nodes.depth, dx_lo);
    let gy_hi = tape.gather(nodes.depth, dy_hi);
    let gy_lo = tape.gather(nodes.depth, dy_lo);
    let ddx = tape.sub(gx_hi, gx_lo);
    let ddy = tape.sub(gy_hi, gy_lo);
    let ax = tape.abs(ddx);
    let ay = tape.abs(ddy);
    let sum = tape.add(ax, ay);
    let grad_mag = tape.scale(sum, 1.0 / inp.pixel_pitch);
    let smooth = tape.smooth_l1(grad_mag, inp.huber_delta);

    let (cos_v, rad_v, den_v, lambda_v, hit_v) = (
        tape.value(cos),
        tape.value(rad),
        tape.value(den),
        tape.value(lambda),
        tape.value(hit),
    );
    let nh_v = tape.value(nh);
    let valid = (0..n)
        .map(|i| {
            let normal_ok = nh_v.row(i).iter().any(|&v| v != 0.0);
            normal_ok
                && cos_v.data[i] < 0.0
                && rad_v.data[i] > 0.0
                && den_v.data[i].abs() > 1e-12
                && lambda_v.data[i] > 0.0
                && hit_v.row(i).iter().all(|v| v.is_finite())
        })
        .collect();
    PassLoss {
        corr,
        smooth,
        valid,
    }
}
