//! Wave-like token algebra: amplitude/phase pairs, two-wave superposition,
//! sign absorption and Euler unfolding.
//!
//! Superposition of `a1·e^{iθ1}` and `a2·e^{iθ2}` has amplitude
//! `sqrt(a1² + a2² + 2·a1·a2·cos(θ2−θ1))` and phase
//! `θ1 + atan2(a2·sin(θ2−θ1), a1 + a2·cos(θ2−θ1))`. [`oracle_superpose`]
//! recomputes the same quantity with plain complex addition and shares no code
//! with the closed forms.

use std::f64::consts::{PI, TAU};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// Below this magnitude the phase of a sum is reported as 0.
pub const ZERO_AMPLITUDE: f64 = 1e-14;

/// Maps an angle into `(−π, π]`.
pub fn canonical_phase(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Phasor {
    amplitude: f64,
    phase: f64,
}

impl Phasor {
    pub fn new(amplitude: f64, phase: f64) -> Result<Self> {
        if !(amplitude >= 0.0) {
            return Err(Error::Domain(format!(
                "amplitude must be non-negative, got {}",
                amplitude
            )));
        }
        Ok(Phasor {
            amplitude,
            phase: canonical_phase(phase),
        })
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Two-wave superposition through the closed forms.
    pub fn superpose(&self, other: &Phasor) -> Result<Phasor> {
        let a = superpose_amplitude(self.amplitude, other.amplitude, self.phase, other.phase)?;
        let p = if a < ZERO_AMPLITUDE {
            0.0
        } else {
            superpose_phase(self.amplitude, other.amplitude, self.phase, other.phase)?
        };
        Phasor::new(a, p)
    }
}

fn check_amplitudes(a1: f64, a2: f64) -> Result<()> {
    if !(a1 >= 0.0 && a2 >= 0.0) {
        return Err(Error::Domain(format!(
            "amplitudes must be non-negative, got {} and {}",
            a1, a2
        )));
    }
    Ok(())
}

/// `sqrt(a1² + a2² + 2·a1·a2·cos(θ2 − θ1))`, evaluated as
/// `hypot(a1 − a2, 2·sqrt(a1·a2)·cos((θ2 − θ1)/2))` so that near-cancelling
/// waves keep full precision.
pub fn superpose_amplitude(a1: f64, a2: f64, theta1: f64, theta2: f64) -> Result<f64> {
    check_amplitudes(a1, a2)?;
    let c = (0.5 * (theta2 - theta1)).cos();
    Ok((a1 - a2).hypot(2.0 * (a1 * a2).sqrt() * c))
}

/// Phase of the two-wave sum, canonicalized. The second atan2 argument
/// uses the cosine of the phase difference, written as
/// `a1 − a2 + 2·a2·cos²(Δ/2)` for the same reason as the amplitude.
pub fn superpose_phase(a1: f64, a2: f64, theta1: f64, theta2: f64) -> Result<f64> {
    check_amplitudes(a1, a2)?;
    if a1 == 0.0 && a2 == 0.0 {
        return Err(Error::UndefinedPhase);
    }
    let d = theta2 - theta1;
    let c = (0.5 * d).cos();
    Ok(canonical_phase(theta1 + (a2 * d.sin()).atan2(a1 - a2 + 2.0 * a2 * c * c)))
}

#[derive(Clone, Copy)]
struct Cplx {
    re: f64,
    im: f64,
}

impl std::ops::Add for Cplx {
    type Output = Cplx;
    fn add(self, o: Cplx) -> Cplx {
        Cplx {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl Cplx {
    fn polar(r: f64, theta: f64) -> Cplx {
        Cplx {
            re: r * theta.cos(),
            im: r * theta.sin(),
        }
    }
}

/// Independent reference: adds the two waves as complex numbers and reads
/// back modulus and argument.
pub fn oracle_superpose(a1: f64, a2: f64, theta1: f64, theta2: f64) -> Phasor {
    let c = Cplx::polar(a1, theta1) + Cplx::polar(a2, theta2);
    let amplitude = c.re.hypot(c.im);
    let phase = if amplitude < ZERO_AMPLITUDE {
        0.0
    } else {
        let arg = c.im.atan2(c.re);
        if arg == -PI {
            PI
        } else {
            arg
        }
    };
    Phasor { amplitude, phase }
}

/// Smallest absolute angular distance between two phases.
pub fn phase_distance(a: f64, b: f64) -> f64 {
    canonical_phase(a - b).abs()
}

/// Amplitude and phase grids of identical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveGrid {
    amplitude: Tensor,
    phase: Tensor,
}

impl WaveGrid {
    pub fn new(amplitude: Tensor, phase: Tensor) -> Result<Self> {
        if amplitude.shape() != phase.shape() {
            return dim_err(format!(
                "amplitude {:?} and phase {:?} differ in shape",
                amplitude.shape(),
                phase.shape()
            ));
        }
        Ok(WaveGrid { amplitude, phase })
    }

    pub fn amplitude(&self) -> &Tensor {
        &self.amplitude
    }

    pub fn phase(&self) -> &Tensor {
        &self.phase
    }

    pub fn shape(&self) -> &[usize] {
        self.amplitude.shape()
    }
}

/// Elementwise [`superpose_amplitude`] over grids.
pub fn superpose_amplitude_grid(a: &WaveGrid, b: &WaveGrid) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return dim_err(format!("grid shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    let data = (0..a.amplitude.len())
        .map(|i| {
            superpose_amplitude(
                a.amplitude.data()[i],
                b.amplitude.data()[i],
                a.phase.data()[i],
                b.phase.data()[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(a.shape().to_vec(), data)
}

/// Elementwise [`superpose_phase`] over grids.
pub fn superpose_phase_grid(a: &WaveGrid, b: &WaveGrid) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return dim_err(format!("grid shapes {:?} and {:?}", a.shape(), b.shape()));
    }
    let data = (0..a.amplitude.len())
        .map(|i| {
            superpose_phase(
                a.amplitude.data()[i],
                b.amplitude.data()[i],
                a.phase.data()[i],
                b.phase.data()[i],
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(a.shape().to_vec(), data)
}

/// Euler unfolding into (real, imaginary) parts.
pub fn unfold(w: &WaveGrid) -> (Tensor, Tensor) {
    let re = w
        .amplitude
        .zip_map(&w.phase, |a, t| a * t.cos())
        .expect("wave grid shapes agree");
    let im = w
        .amplitude
        .zip_map(&w.phase, |a, t| a * t.sin())
        .expect("wave grid shapes agree");
    (re, im)
}

/// Moves the sign of a real amplitude into its phase: negative entries
/// become `(−z, θ + π)`. Phases are canonicalized.
pub fn absorb_sign(z: &Tensor, theta: &Tensor) -> Result<WaveGrid> {
    if z.shape() != theta.shape() {
        return dim_err(format!(
            "amplitude {:?} and phase {:?} differ in shape",
            z.shape(),
            theta.shape()
        ));
    }
    let amplitude = z.map(f64::abs);
    let phase = z.zip_map(theta, |v, t| {
        canonical_phase(if v < 0.0 { t + PI } else { t })
    })?;
    WaveGrid::new(amplitude, phase)
}
