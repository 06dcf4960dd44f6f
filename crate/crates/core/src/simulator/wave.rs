use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::{HeightField, Vec3};

/// One analytic wave term added to the base water level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum WaveComponent {
    /// `A·exp(−|x − c(t)|²/(2s²))` with `c(t) = center + velocity·t`.
    Gaussian {
        amplitude: f64,
        sigma: f64,
        center: [f64; 2],
        #[serde(default)]
        velocity: [f64; 2],
    },
    /// `A·sin(θ)` with `θ = k(dir·x) − kct + φ`, `k = 2π/wavelength`.
    Sinusoidal {
        amplitude: f64,
        wavelength: f64,
        direction: [f64; 2],
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        speed: f64,
    },
    /// Second-order height of a Gerstner (trochoidal) wave written as a
    /// function of the horizontal position: `A cos θ + (kA²/2)(cos 2θ − 1)`.
    Gerstner {
        amplitude: f64,
        wavelength: f64,
        direction: [f64; 2],
        #[serde(default)]
        phase: f64,
        #[serde(default)]
        speed: f64,
    },
}

impl WaveComponent {
    fn validate(&self) -> Result<(), String> {
        match self {
            WaveComponent::Gaussian { sigma, amplitude, .. } => {
                if !(*sigma > 0.0) || !amplitude.is_finite() {
                    return Err("gaussian sigma must be positive".into());
                }
            }
            WaveComponent::Sinusoidal {
                wavelength, direction, ..
            }
            | WaveComponent::Gerstner {
                wavelength, direction, ..
            } => {
                if !(*wavelength > 0.0) {
                    return Err("wavelength must be positive".into());
                }
                if direction[0].hypot(direction[1]) < 1e-12 {
                    return Err("wave direction must be non-zero".into());
                }
            }
        }
        if let WaveComponent::Gerstner {
            amplitude, wavelength, ..
        } = self
        {
            if TAU / wavelength * amplitude.abs() >= 1.0 {
                return Err("gerstner steepness kA must stay below 1".into());
            }
        }
        Ok(())
    }

    /// Upper bound on `|height|` contributed by this term.
    fn max_abs(&self) -> f64 {
        match self {
            WaveComponent::Gaussian { amplitude, .. } | WaveComponent::Sinusoidal { amplitude, .. } => amplitude.abs(),
            WaveComponent::Gerstner {
                amplitude, wavelength, ..
            } => amplitude.abs() + TAU / wavelength * amplitude * amplitude,
        }
    }

    /// Height and its gradient `(∂h/∂x, ∂h/∂y)`.
    fn eval(&self, x: f64, y: f64, t: f64) -> (f64, f64, f64) {
        match *self {
            WaveComponent::Gaussian {
                amplitude,
                sigma,
                center,
                velocity,
            } => {
                let dx = x - center[0] - velocity[0] * t;
                let dy = y - center[1] - velocity[1] * t;
                let s2 = sigma * sigma;
                let h = amplitude * (-(dx * dx + dy * dy) / (2.0 * s2)).exp();
                (h, -h * dx / s2, -h * dy / s2)
            }
            WaveComponent::Sinusoidal {
                amplitude,
                wavelength,
                direction,
                phase,
                speed,
            } => {
                let (k, ux, uy, theta) = wave_phase(wavelength, direction, phase, speed, x, y, t);
                let (s, c) = theta.sin_cos();
                let g = amplitude * k * c;
                (amplitude * s, g * ux, g * uy)
            }
            WaveComponent::Gerstner {
                amplitude,
                wavelength,
                direction,
                phase,
                speed,
            } => {
                let (k, ux, uy, theta) = wave_phase(wavelength, direction, phase, speed, x, y, t);
                let q = 0.5 * k * amplitude * amplitude;
                let h = amplitude * theta.cos() + q * ((2.0 * theta).cos() - 1.0);
                let dh = -amplitude * theta.sin() - 2.0 * q * (2.0 * theta).sin();
                (h, dh * k * ux, dh * k * uy)
            }
        }
    }
}

fn wave_phase(
    wavelength: f64,
    direction: [f64; 2],
    phase: f64,
    speed: f64,
    x: f64,
    y: f64,
    t: f64,
) -> (f64, f64, f64, f64) {
    let k = TAU / wavelength;
    let n = direction[0].hypot(direction[1]);
    let (ux, uy) = (direction[0] / n, direction[1] / n);
    (k, ux, uy, k * (ux * x + uy * y) - k * speed * t + phase)
}

/// Water surface `z = h₀ + Σ components(x, y, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveSurface {
    pub base_height: f64,
    #[serde(default)]
    pub time: f64,
    #[serde(default)]
    pub waves: Vec<WaveComponent>,
}

impl WaveSurface {
    pub fn flat(base_height: f64) -> Self {
        Self {
            base_height,
            time: 0.0,
            waves: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.base_height > 0.0) {
            return Err(format!("surface.base_height must be positive, got {}", self.base_height));
        }
        for (i, w) in self.waves.iter().enumerate() {
            w.validate().map_err(|e| format!("surface.waves[{i}]: {e}"))?;
        }
        let amp = self.amplitude_bound();
        if amp >= self.base_height {
            return Err(format!(
                "surface.waves: combined amplitude bound {amp} m reaches the pattern (base height {} m)",
                self.base_height
            ));
        }
        Ok(())
    }

    /// Bound on `|height − h₀|` over the whole plane.
    pub fn amplitude_bound(&self) -> f64 {
        self.waves.iter().map(WaveComponent::max_abs).sum()
    }

    pub fn max_height(&self) -> f64 {
        self.base_height + self.amplitude_bound()
    }

    pub fn min_height(&self) -> f64 {
        self.base_height - self.amplitude_bound()
    }

    /// Height and unit upward normal `∝ [−∂h/∂x, −∂h/∂y, 1]`.
    pub fn surface_eval(&self, x: f64, y: f64) -> (f64, Vec3) {
        let (mut h, mut hx, mut hy) = (self.base_height, 0.0, 0.0);
        for w in &self.waves {
            let (a, b, c) = w.eval(x, y, self.time);
            h += a;
            hx += b;
            hy += c;
        }
        (h, Vec3::new(-hx, -hy, 1.0).normalize())
    }
}

impl HeightField for WaveSurface {
    fn height_and_normal(&self, x: f64, y: f64) -> (f64, Vec3) {
        self.surface_eval(x, y)
    }
}
