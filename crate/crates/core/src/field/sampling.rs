use rand::Rng;
use serde::{Deserialize, Serialize};

/// Added to every coarse weight before building the resampling PDF.
pub const PDF_EPSILON: f64 = 1e-8;

/// Coarse/fine sample counts and the ray interval they cover.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingSchedule {
    pub coarse_count: usize,
    pub fine_count: usize,
    pub near: f64,
    pub far: f64,
    pub stratified: bool,
}

impl Default for SamplingSchedule {
    fn default() -> Self {
        Self {
            coarse_count: 96,
            fine_count: 192,
            near: 0.0,
            far: 1.0,
            stratified: true,
        }
    }
}

impl SamplingSchedule {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.near < self.far) || !self.near.is_finite() || !self.far.is_finite() {
            return Err(format!("near ({}) must be below far ({})", self.near, self.far));
        }
        if self.coarse_count < 2 {
            return Err("coarse_count must be at least 2".into());
        }
        if self.fine_count != 0 && self.fine_count < 2 {
            return Err("fine_count must be 0 or at least 2".into());
        }
        Ok(())
    }

    pub fn with_bounds(&self, near: f64, far: f64) -> Self {
        Self { near, far, ..*self }
    }

    /// Width of one coarse bin.
    pub fn bin_width(&self) -> f64 {
        (self.far - self.near) / self.coarse_count as f64
    }

    /// One coarse sample per equal-width bin: jittered inside the bin when
    /// stratified, at the bin center otherwise.
    pub fn coarse_positions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let w = self.bin_width();
        (0..self.coarse_count)
            .map(|i| {
                let u = if self.stratified { rng.random::<f64>() } else { 0.5 };
                self.near + (i as f64 + u) * w
            })
            .collect()
    }
}

/// Spacing between consecutive samples; the last sample extends to `far`.
pub fn sample_deltas(positions: &[f64], far: f64) -> Vec<f64> {
    let mut d: Vec<f64> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    if let Some(last) = positions.last() {
        d.push((far - last).max(0.0));
    }
    d
}

/// Draws `fine_count` positions from the piecewise-constant density over the
/// coarse bins with mass proportional to `coarse_weights + ε`.
///
/// When every weight is below ε the density is uniform over `[near, far]`.
/// The result is sorted ascending.
pub fn hierarchical_resample<R: Rng + ?Sized>(
    coarse_weights: &[f64],
    schedule: &SamplingSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let n = schedule.fine_count;
    if n == 0 {
        return Vec::new();
    }
    assert_eq!(coarse_weights.len(), schedule.coarse_count, "one weight per coarse bin");
    let degenerate = coarse_weights.iter().all(|&w| !(w >= PDF_EPSILON));
    let mass: Vec<f64> = if degenerate {
        vec![1.0; coarse_weights.len()]
    } else {
        coarse_weights.iter().map(|&w| w.max(0.0) + PDF_EPSILON).collect()
    };
    let total: f64 = mass.iter().sum();
    let mut cdf = Vec::with_capacity(mass.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for m in &mass {
        acc += m / total;
        cdf.push(acc);
    }
    let bin = schedule.bin_width();
    let mut out = Vec::with_capacity(n);
    let mut b = 0;
    for j in 0..n {
        let jitter = if schedule.stratified { rng.random::<f64>() } else { 0.5 };
        let u = ((j as f64 + jitter) / n as f64).min(acc);
        while b + 1 < mass.len() && cdf[b + 1] <= u {
            b += 1;
        }
        let width = cdf[b + 1] - cdf[b];
        let t = if width > 0.0 { ((u - cdf[b]) / width).clamp(0.0, 1.0) } else { 0.5 };
        out.push(schedule.near + (b as f64 + t) * bin);
    }
    out
}

/// Sorted union of two ascending position lists.
pub fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
