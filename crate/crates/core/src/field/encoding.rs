use std::f64::consts::PI;

use crate::geometry::Vec3;

/// Length of the encoding of a 3-D point with `freqs` frequency bands.
pub const fn encoded_len(freqs: usize) -> usize {
    3 + 6 * freqs
}

/// Frequency encoding `[p, sin(2⁰πp), cos(2⁰πp), …, sin(2^{L−1}πp), cos(2^{L−1}πp)]`,
/// each band holding the three coordinates.
pub fn positional_encode(point: &Vec3, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_len(freqs));
    encode_into(point, freqs, &mut out);
    out
}

pub(crate) fn encode_into(point: &Vec3, freqs: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(point.as_slice());
    let mut scale = PI;
    for _ in 0..freqs {
        let (s, c): (Vec<f64>, Vec<f64>) = point.iter().map(|&x| (x * scale).sin_cos()).unzip();
        out.extend_from_slice(&s);
        out.extend_from_slice(&c);
        scale *= 2.0;
    }
}
