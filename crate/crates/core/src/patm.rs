//! Phase-aware token mixing.
//!
//! Each token gets an amplitude from a channel-FC and a phase from a phase
//! estimator. The wave is unfolded into `amp·cos θ` and `amp·sin θ`; each
//! part is mixed along one spatial axis by a per-channel window of weights
//! shared across positions. The two mixes are summed and projected by a
//! final channel-FC.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Kernel length of the depthwise phase estimator.
pub const DEPTHWISE_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PhaseMode {
    /// All phases zero: plain real-valued token mixing.
    None,
    /// Learned per-position phases that ignore the input.
    Static,
    /// Phases copied from the block input.
    Identity,
    ChannelFC,
    DepthWise,
}

impl PhaseMode {
    pub fn is_dynamic(self) -> bool {
        matches!(self, PhaseMode::Identity | PhaseMode::ChannelFC | PhaseMode::DepthWise)
    }
}

impl fmt::Display for PhaseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PhaseMode::None => "None",
            PhaseMode::Static => "Static",
            PhaseMode::Identity => "Identity",
            PhaseMode::ChannelFC => "ChannelFC",
            PhaseMode::DepthWise => "DepthWise",
        };
        f.write_str(s)
    }
}

impl FromStr for PhaseMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "none" => Ok(PhaseMode::None),
            "static" => Ok(PhaseMode::Static),
            "identity" => Ok(PhaseMode::Identity),
            "channelfc" => Ok(PhaseMode::ChannelFC),
            "depthwise" => Ok(PhaseMode::DepthWise),
            _ => Err(Error::Parse(format!("unknown phase mode '{}'", s))),
        }
    }
}

/// Spatial axis of a `[batch, height, width, channels]` grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Height,
    Width,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::Height => 1,
            Axis::Width => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PhaseParams {
    None,
    /// `[height, width, channels]`
    Static(Tensor),
    Identity,
    /// `[channels, channels]`
    ChannelFC(Tensor),
    /// `[DEPTHWISE_KERNEL, channels]`
    DepthWise(Tensor),
}

impl PhaseParams {
    pub fn mode(&self) -> PhaseMode {
        match self {
            PhaseParams::None => PhaseMode::None,
            PhaseParams::Static(_) => PhaseMode::Static,
            PhaseParams::Identity => PhaseMode::Identity,
            PhaseParams::ChannelFC(_) => PhaseMode::ChannelFC,
            PhaseParams::DepthWise(_) => PhaseMode::DepthWise,
        }
    }

    fn tensor(&self) -> Option<&Tensor> {
        match self {
            PhaseParams::Static(t) | PhaseParams::ChannelFC(t) | PhaseParams::DepthWise(t) => {
                Some(t)
            }
            PhaseParams::None | PhaseParams::Identity => None,
        }
    }

    fn tensor_mut(&mut self) -> Option<&mut Tensor> {
        match self {
            PhaseParams::Static(t) | PhaseParams::ChannelFC(t) | PhaseParams::DepthWise(t) => {
                Some(t)
            }
            PhaseParams::None | PhaseParams::Identity => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatmParams {
    pub axis: Axis,
    /// Amplitude channel-FC, `[d, d]`.
    pub amp_fc: Tensor,
    pub phase: PhaseParams,
    /// Window weights applied to the real part, `[window, d]`.
    pub token_real: Tensor,
    /// Window weights applied to the imaginary part, `[window, d]`.
    pub token_imag: Tensor,
    /// Output channel-FC, `[d, d]`.
    pub out_fc: Tensor,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let b = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -b, b, rng)
}

impl PatmParams {
    /// Randomly initialized module. `static_grid` gives the `(height, width)`
    /// of the static phase table and is required for [`PhaseMode::Static`].
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        window: usize,
        axis: Axis,
        mode: PhaseMode,
        static_grid: Option<(usize, usize)>,
        rng: &mut R,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("PATM dimension must be positive".into()));
        }
        if window % 2 == 0 {
            return Err(Error::Config(format!("window {} must be odd", window)));
        }
        let amp_fc = fan_in_uniform(&[dim, dim], dim, rng);
        let phase = match mode {
            PhaseMode::None => PhaseParams::None,
            PhaseMode::Identity => PhaseParams::Identity,
            PhaseMode::Static => {
                let (h, w) = static_grid.ok_or_else(|| {
                    Error::Config("static phase needs a fixed input grid size".into())
                })?;
                PhaseParams::Static(Tensor::uniform(&[h, w, dim], -PI, PI, rng))
            }
            PhaseMode::ChannelFC => PhaseParams::ChannelFC(fan_in_uniform(&[dim, dim], dim, rng)),
            PhaseMode::DepthWise => PhaseParams::DepthWise(fan_in_uniform(
                &[DEPTHWISE_KERNEL, dim],
                DEPTHWISE_KERNEL,
                rng,
            )),
        };
        let token_real = fan_in_uniform(&[window, dim], window, rng);
        let token_imag = fan_in_uniform(&[window, dim], window, rng);
        let out_fc = fan_in_uniform(&[dim, dim], dim, rng);
        Ok(PatmParams {
            axis,
            amp_fc,
            phase,
            token_real,
            token_imag,
            out_fc,
        })
    }

    pub fn dim(&self) -> usize {
        self.amp_fc.shape()[0]
    }

    pub fn window(&self) -> usize {
        self.token_real.shape()[0]
    }

    pub fn mode(&self) -> PhaseMode {
        self.phase.mode()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.amp_fc];
        v.extend(self.phase.tensor());
        v.extend([&self.token_real, &self.token_imag, &self.out_fc]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.amp_fc];
        v.extend(self.phase.tensor_mut());
        v.extend([&mut self.token_real, &mut self.token_imag, &mut self.out_fc]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> PatmVars<'t> {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        let phase = match &self.phase {
            PhaseParams::None => PhaseVars::None,
            PhaseParams::Identity => PhaseVars::Identity,
            PhaseParams::Static(t) => PhaseVars::Static(leaf(t)),
            PhaseParams::ChannelFC(t) => PhaseVars::ChannelFC(leaf(t)),
            PhaseParams::DepthWise(t) => PhaseVars::DepthWise(leaf(t)),
        };
        PatmVars {
            axis: self.axis,
            amp_fc: leaf(&self.amp_fc),
            phase,
            token_real: leaf(&self.token_real),
            token_imag: leaf(&self.token_imag),
            out_fc: leaf(&self.out_fc),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub enum PhaseVars<'t> {
    None,
    Static(Var<'t>),
    Identity,
    ChannelFC(Var<'t>),
    DepthWise(Var<'t>),
}

/// [`PatmParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PatmVars<'t> {
    pub axis: Axis,
    pub amp_fc: Var<'t>,
    pub phase: PhaseVars<'t>,
    pub token_real: Var<'t>,
    pub token_imag: Var<'t>,
    pub out_fc: Var<'t>,
}

impl<'t> PatmVars<'t> {
    /// Vars in the same order as [`PatmParams::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = vec![self.amp_fc];
        match self.phase {
            PhaseVars::Static(p) | PhaseVars::ChannelFC(p) | PhaseVars::DepthWise(p) => v.push(p),
            PhaseVars::None | PhaseVars::Identity => {}
        }
        v.extend([self.token_real, self.token_imag, self.out_fc]);
        v
    }
}

/// Amplitude channel-FC. No absolute value is taken: negative entries carry
/// their sign into the unfolded parts, which equals a phase shift of π.
pub fn compute_amplitude<'t>(x: Var<'t>, amp_fc: Var<'t>) -> Result<Var<'t>> {
    x.linear(amp_fc)
}

pub fn estimate_phase<'t>(x: Var<'t>, phase: PhaseVars<'t>, axis: Axis) -> Result<Var<'t>> {
    let tape = x.tape();
    let shape = x.shape();
    match phase {
        PhaseVars::None => Ok(tape.constant(Tensor::zeros(&shape))),
        PhaseVars::Identity => Ok(x),
        PhaseVars::Static(grid) => {
            let gs = grid.shape();
            if shape.len() != 4 || gs[..2] != shape[1..3] || gs[2] != shape[3] {
                return Err(Error::Config(format!(
                    "static phase table {:?} does not fit input {:?}",
                    gs, shape
                )));
            }
            grid.broadcast_to(&shape)
        }
        PhaseVars::ChannelFC(w) => x.linear(w),
        PhaseVars::DepthWise(k) => x.window_mix(k, axis.index()),
    }
}

/// Windowed phase-modulated aggregation along `axis`:
/// `out[j] = Σ_r token_real[r]·(amp·cos θ)[j+r−w] + token_imag[r]·(amp·sin θ)[j+r−w]`
/// with zeros outside the grid.
pub fn aggregate_tokens<'t>(
    amp: Var<'t>,
    theta: Var<'t>,
    token_real: Var<'t>,
    token_imag: Var<'t>,
    axis: Axis,
) -> Result<Var<'t>> {
    let re = amp.mul(theta.cos()?)?;
    let im = amp.mul(theta.sin()?)?;
    re.window_mix(token_real, axis.index())?
        .add(im.window_mix(token_imag, axis.index())?)
}

/// Full module on a `[batch, height, width, d]` grid.
pub fn patm_forward<'t>(x: Var<'t>, p: &PatmVars<'t>) -> Result<Var<'t>> {
    let amp = compute_amplitude(x, p.amp_fc)?;
    let theta = estimate_phase(x, p.phase, p.axis)?;
    aggregate_tokens(amp, theta, p.token_real, p.token_imag, p.axis)?.linear(p.out_fc)
}

/// Phase grid of the module for a given input, without recording gradients.
pub fn phase_of(x: &Tensor, p: &PatmParams) -> Result<Tensor> {
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = p.bind(&tape, false);
    Ok((*estimate_phase(xv, vars.phase, p.axis)?.value()).clone())
}
