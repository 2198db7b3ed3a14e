//! Whole networks: stage tables, presets, initialization, classification
//! forward pass and parameter/MAC accounting.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::blocks::{block_forward, normalize, patch_embed, BlockParams, BlockVars, StemParams};
use crate::error::{Error, Result};
use crate::patm::{estimate_phase, Axis, PhaseMode, DEPTHWISE_KERNEL};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const NUM_STAGES: usize = 4;
pub const DEFAULT_WINDOW: usize = 7;
pub const DEFAULT_PATCH_SIZES: [usize; NUM_STAGES] = [4, 2, 2, 2];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub dim: usize,
    pub depth: usize,
    pub expansion: usize,
}

/// Token-mixing span along each axis. `All` covers the whole axis, so its
/// weight shapes depend on the input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WindowSize {
    Local(usize),
    All,
}

impl fmt::Display for WindowSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WindowSize::Local(k) => write!(f, "{}", k),
            WindowSize::All => f.write_str("All"),
        }
    }
}

impl std::str::FromStr for WindowSize {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(WindowSize::All);
        }
        s.parse()
            .map(WindowSize::Local)
            .map_err(|_| Error::Parse(format!("invalid window '{}'", s)))
    }
}

impl Serialize for WindowSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            WindowSize::Local(k) => s.serialize_u64(*k as u64),
            WindowSize::All => s.serialize_str("All"),
        }
    }
}

impl<'de> Deserialize<'de> for WindowSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(k) => Ok(WindowSize::Local(k)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

fn default_window() -> WindowSize {
    WindowSize::Local(DEFAULT_WINDOW)
}

fn default_patch_sizes() -> Vec<usize> {
    DEFAULT_PATCH_SIZES.to_vec()
}

fn default_in_channels() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_window")]
    pub window: WindowSize,
    pub phase_mode: PhaseMode,
    #[serde(default = "default_patch_sizes")]
    pub patch_sizes: Vec<usize>,
    pub num_classes: usize,
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    /// `[height, width]` the model is built for. Only static phase tables and
    /// whole-axis windows need it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_size: Option<[usize; 2]>,
}

fn stage_table(dims: [usize; 4], depths: [usize; 4], expansions: [usize; 4]) -> Vec<StageConfig> {
    (0..NUM_STAGES)
        .map(|i| StageConfig {
            dim: dims[i],
            depth: depths[i],
            expansion: expansions[i],
        })
        .collect()
}

/// Published (params, MACs) at 224×224 for the ImageNet presets.
pub fn reference_counts(name: &str) -> Option<(f64, f64)> {
    match name {
        "T*" => Some((15e6, 2.1e9)),
        "T" => Some((17e6, 2.4e9)),
        "S" => Some((30e6, 4.5e9)),
        "M" => Some((44e6, 7.9e9)),
        "B" => Some((63e6, 10.2e9)),
        _ => None,
    }
}

/// Relative tolerance for matching `reference_counts`.
pub const REFERENCE_TOL: f64 = 0.10;

pub const PRESET_NAMES: [&str; 6] = ["T*", "T", "S", "M", "B", "tiny"];

impl ArchConfig {
    /// Named configurations. T*/T/S/M/B are the ImageNet-sized models with
    /// 1000 classes; `tiny` is the desk-scale test network.
    pub fn preset(name: &str) -> Result<Self> {
        let small = [64, 128, 320, 512];
        let e4 = [4, 4, 4, 4];
        let (stages, mode, classes) = match name {
            "T*" | "Tstar" | "t*" => (stage_table(small, [2, 2, 4, 2], e4), PhaseMode::DepthWise, 1000),
            "T" | "t" => (stage_table(small, [2, 2, 4, 2], e4), PhaseMode::ChannelFC, 1000),
            "S" | "s" => (stage_table(small, [2, 3, 10, 3], e4), PhaseMode::ChannelFC, 1000),
            "M" | "m" => (
                stage_table(small, [3, 4, 18, 3], [8, 8, 4, 4]),
                PhaseMode::ChannelFC,
                1000,
            ),
            "B" | "b" => (
                stage_table([96, 192, 384, 768], [2, 2, 18, 2], e4),
                PhaseMode::ChannelFC,
                1000,
            ),
            "tiny" => (stage_table([8, 16, 24, 32], [1, 1, 1, 1], [2, 2, 2, 2]), PhaseMode::ChannelFC, 4),
            _ => return Err(Error::Config(format!("unknown preset '{}'", name))),
        };
        Ok(ArchConfig {
            stages,
            window: default_window(),
            phase_mode: mode,
            patch_sizes: default_patch_sizes(),
            num_classes: classes,
            in_channels: 3,
            input_size: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ArchConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.stages.len() != NUM_STAGES {
            return fail(format!("expected {} stages, got {}", NUM_STAGES, self.stages.len()));
        }
        if self.patch_sizes.len() != NUM_STAGES || self.patch_sizes.contains(&0) {
            return fail(format!("invalid patch sizes {:?}", self.patch_sizes));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.dim == 0 || s.depth == 0 || s.expansion == 0 {
                return fail(format!("stage {} has a zero entry: {:?}", i + 1, s));
            }
            if i > 0 && s.dim <= self.stages[i - 1].dim {
                return fail(format!("stage dimensions must increase strictly at stage {}", i + 1));
            }
        }
        if self.num_classes == 0 || self.in_channels == 0 {
            return fail("num_classes and in_channels must be positive".into());
        }
        if let WindowSize::Local(k) = self.window {
            if k % 2 == 0 {
                return fail(format!("window {} must be odd", k));
            }
        }
        let needs_size = self.phase_mode == PhaseMode::Static || self.window == WindowSize::All;
        if needs_size && self.input_size.is_none() {
            return fail("static phase and whole-axis windows need input_size".into());
        }
        if let Some([h, w]) = self.input_size {
            if h == 0 || w == 0 {
                return fail("input_size must be positive".into());
            }
        }
        Ok(())
    }

    /// Token grid after each stem for an `h × w` input.
    pub fn stage_grids(&self, h: usize, w: usize) -> Vec<(usize, usize)> {
        let mut grids = Vec::with_capacity(NUM_STAGES);
        let (mut gh, mut gw) = (h, w);
        for &p in &self.patch_sizes {
            gh = gh.div_ceil(p);
            gw = gw.div_ceil(p);
            grids.push((gh, gw));
        }
        grids
    }

    fn stage_window(&self, grid: Option<(usize, usize)>) -> usize {
        match (self.window, grid) {
            (WindowSize::Local(k), _) => k,
            (WindowSize::All, Some((h, w))) => 2 * h.max(w) - 1,
            (WindowSize::All, None) => unreachable!("validated"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ArchConfig,
    pub stems: Vec<StemParams>,
    pub stages: Vec<Vec<BlockParams>>,
    pub norm_scale: Tensor,
    pub norm_shift: Tensor,
    /// `[num_classes, d_last]`
    pub head: Tensor,
    pub head_bias: Tensor,
}

/// Deterministic initialization from `seed`.
pub fn build(cfg: &ArchConfig, seed: u64) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = cfg.input_size.map(|[h, w]| cfg.stage_grids(h, w));
    let mut stems = Vec::with_capacity(NUM_STAGES);
    let mut stages = Vec::with_capacity(NUM_STAGES);
    let mut c_in = cfg.in_channels;
    for (i, s) in cfg.stages.iter().enumerate() {
        stems.push(StemParams::init(cfg.patch_sizes[i], c_in, s.dim, &mut rng)?);
        let grid = grids.as_ref().map(|g| g[i]);
        let window = cfg.stage_window(grid);
        let blocks = (0..s.depth)
            .map(|_| BlockParams::init(s.dim, s.expansion, window, cfg.phase_mode, grid, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        stages.push(blocks);
        c_in = s.dim;
    }
    let d = c_in;
    let k = cfg.num_classes;
    let bound = 1.0 / (d as f64).sqrt();
    Ok(ModelParams {
        config: cfg.clone(),
        stems,
        stages,
        norm_scale: Tensor::full(&[d], 1.0),
        norm_shift: Tensor::zeros(&[d]),
        head: Tensor::uniform(&[k, d], -bound, bound, &mut rng),
        head_bias: Tensor::zeros(&[k]),
    })
}

/// Tape mirror of [`ModelParams`].
pub struct ModelVars<'t> {
    pub stems: Vec<Var<'t>>,
    pub stages: Vec<Vec<BlockVars<'t>>>,
    pub norm_scale: Var<'t>,
    pub norm_shift: Var<'t>,
    pub head: Var<'t>,
    pub head_bias: Var<'t>,
}

impl<'t> ModelVars<'t> {
    /// Same order as [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = Vec::new();
        for (stem, blocks) in self.stems.iter().zip(&self.stages) {
            v.push(*stem);
            for b in blocks {
                v.extend(b.vars());
            }
        }
        v.extend([self.norm_scale, self.norm_shift, self.head, self.head_bias]);
        v
    }
}

/// Which PATM's phase grid to capture during a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PhaseProbe {
    /// 1-based stage index.
    pub stage: usize,
    /// Block within the stage; `None` takes the last one.
    pub block: Option<usize>,
    pub axis: Axis,
}

impl ModelParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        for (stem, blocks) in self.stems.iter().zip(&self.stages) {
            v.push(&stem.proj);
            for b in blocks {
                v.extend(b.tensors());
            }
        }
        v.extend([&self.norm_scale, &self.norm_shift, &self.head, &self.head_bias]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        for (stem, blocks) in self.stems.iter_mut().zip(self.stages.iter_mut()) {
            v.push(&mut stem.proj);
            for b in blocks {
                v.extend(b.tensors_mut());
            }
        }
        v.extend([
            &mut self.norm_scale,
            &mut self.norm_shift,
            &mut self.head,
            &mut self.head_bias,
        ]);
        v
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> ModelVars<'t> {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        ModelVars {
            stems: self.stems.iter().map(|s| s.bind(tape, trainable)).collect(),
            stages: self
                .stages
                .iter()
                .map(|blocks| blocks.iter().map(|b| b.bind(tape, trainable)).collect())
                .collect(),
            norm_scale: leaf(&self.norm_scale),
            norm_shift: leaf(&self.norm_shift),
            head: leaf(&self.head),
            head_bias: leaf(&self.head_bias),
        }
    }

    /// Logits `[batch, num_classes]` for `[batch, h, w, c]` images.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let vars = self.bind(&tape, false);
        let x = tape.constant(images.clone());
        let (logits, _) = forward_vars(self, &vars, x, None)?;
        let out = (*logits.value()).clone();
        Ok(out)
    }
}

fn check_finite(v: Var<'_>, layer: impl FnOnce() -> String) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: layer(),
            detail: "non-finite activation".into(),
        })
    }
}

/// Forward pass on a tape. When `probe` is set, also returns the phase grid
/// produced by the selected PATM.
pub fn forward_vars<'t>(
    m: &ModelParams,
    vars: &ModelVars<'t>,
    images: Var<'t>,
    probe: Option<PhaseProbe>,
) -> Result<(Var<'t>, Option<Tensor>)> {
    let shape = images.shape();
    if shape.len() != 4 || shape[3] != m.config.in_channels {
        return Err(Error::Dimension(format!(
            "expected [batch, h, w, {}] images, got {:?}",
            m.config.in_channels, shape
        )));
    }
    if shape[0] == 0 || shape[1] < 4 || shape[2] < 4 {
        return Err(Error::Dimension(format!("images {:?} smaller than 4x4", shape)));
    }
    let mut captured = None;
    let mut x = images;
    for (si, (stem, blocks)) in vars.stems.iter().zip(&vars.stages).enumerate() {
        x = patch_embed(x, m.stems[si].patch, *stem)?;
        check_finite(x, || format!("stage {} stem", si + 1))?;
        for (bi, b) in blocks.iter().enumerate() {
            if let Some(p) = probe {
                let target = p.block.unwrap_or(blocks.len() - 1);
                if p.stage == si + 1 && bi == target {
                    let n = normalize(x, b.norm1_scale, b.norm1_shift)?;
                    let patm = match p.axis {
                        Axis::Height => b.patm_h,
                        Axis::Width => b.patm_w,
                    };
                    captured = Some((*estimate_phase(n, patm.phase, p.axis)?.value()).clone());
                }
            }
            x = block_forward(x, b)?;
            check_finite(x, || format!("stage {} block {}", si + 1, bi + 1))?;
        }
    }
    let s = x.shape();
    let (b, tokens, d) = (s[0], s[1] * s[2], s[3]);
    let n = normalize(x, vars.norm_scale, vars.norm_shift)?;
    let pooled = n
        .reshape(&[b, tokens, d])?
        .reduce_sum(1)?
        .scale(1.0 / tokens as f64);
    let logits = pooled.linear(vars.head)?.add(vars.head_bias)?;
    check_finite(logits, || "head".into())?;
    Ok((logits, captured))
}

pub fn count_params(m: &ModelParams) -> usize {
    m.tensors().iter().map(|t| t.len()).sum()
}

/// Multiply-accumulate count of one `h × w` forward pass (batch 1), one MAC
/// counted as one FLOP. Covers stems, every channel-FC, window aggregations,
/// depthwise phase kernels and the head. Elementwise ops, normalization and
/// pooling are excluded.
pub fn count_flops(m: &ModelParams, h: usize, w: usize) -> u64 {
    flop_breakdown(m, h, w).iter().map(|(_, f)| f).sum()
}

/// Per-component MAC counts in forward order.
pub fn flop_breakdown(m: &ModelParams, h: usize, w: usize) -> Vec<(String, u64)> {
    let grids = m.config.stage_grids(h, w);
    let mut out = Vec::new();
    for (si, (stem, blocks)) in m.stems.iter().zip(&m.stages).enumerate() {
        let (gh, gw) = grids[si];
        let n = (gh * gw) as u64;
        out.push((
            format!("stage{}.stem", si + 1),
            n * stem.proj.len() as u64,
        ));
        for (bi, b) in blocks.iter().enumerate() {
            let d = b.dim() as u64;
            let mut macs = 0;
            for patm in [&b.patm_h, &b.patm_w] {
                let phase = match patm.mode() {
                    PhaseMode::ChannelFC => d * d,
                    PhaseMode::DepthWise => DEPTHWISE_KERNEL as u64 * d,
                    PhaseMode::None | PhaseMode::Static | PhaseMode::Identity => 0,
                };
                // amplitude FC, phase, real and imaginary window mixes, output FC
                macs += n * (d * d + phase + 2 * patm.window() as u64 * d + d * d);
            }
            macs += n * d * d;
            macs += n * 2 * b.mlp_fc1.len() as u64;
            out.push((format!("stage{}.block{}", si + 1, bi + 1), macs));
        }
    }
    out.push(("head".into(), m.head.len() as u64));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_follow_stage_tables() {
        let t = ArchConfig::preset("T").unwrap();
        assert_eq!(t.stages.iter().map(|s| s.dim).collect::<Vec<_>>(), [64, 128, 320, 512]);
        let m = ArchConfig::preset("M").unwrap();
        assert_eq!(m.stages[0].expansion, 8);
        assert_eq!(m.stages.iter().map(|s| s.depth).collect::<Vec<_>>(), [3, 4, 18, 3]);
        let ts = ArchConfig::preset("T*").unwrap();
        assert_eq!(ts.phase_mode, PhaseMode::DepthWise);
        assert_eq!(ts.stages, t.stages);
        assert!(ArchConfig::preset("XL").is_err());
        for name in PRESET_NAMES {
            ArchConfig::preset(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn validation_rejects_bad_tables() {
        let mut c = ArchConfig::preset("tiny").unwrap();
        c.stages[2].dim = 16;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = ArchConfig::preset("tiny").unwrap();
        c.stages.pop();
        assert!(c.validate().is_err());
        let mut c = ArchConfig::preset("tiny").unwrap();
        c.window = WindowSize::Local(4);
        assert!(c.validate().is_err());
        let mut c = ArchConfig::preset("tiny").unwrap();
        c.phase_mode = PhaseMode::Static;
        assert!(c.validate().is_err());
        c.input_size = Some([16, 16]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn json_round_trip_and_schema() {
        let text = r#"{
            "stages": [
                {"dim": 8, "depth": 1, "expansion": 2},
                {"dim": 16, "depth": 1, "expansion": 2},
                {"dim": 24, "depth": 1, "expansion": 2},
                {"dim": 32, "depth": 1, "expansion": 2}
            ],
            "window": 5,
            "phase_mode": "DepthWise",
            "patch_sizes": [4, 2, 2, 2],
            "num_classes": 4
        }"#;
        let c = ArchConfig::from_json(text).unwrap();
        assert_eq!(c.window, WindowSize::Local(5));
        assert_eq!(c.in_channels, 3);
        assert_eq!(ArchConfig::from_json(&c.to_json()).unwrap(), c);
        let all = text.replace("\"window\": 5", "\"window\": \"All\", \"input_size\": [16, 16]");
        assert_eq!(ArchConfig::from_json(&all).unwrap().window, WindowSize::All);
        assert!(ArchConfig::from_json(&text.replace("\"window\"", "\"windw\"")).is_err());
    }

    #[test]
    fn build_is_deterministic() {
        let c = ArchConfig::preset("tiny").unwrap();
        assert_eq!(build(&c, 3).unwrap(), build(&c, 3).unwrap());
        assert_ne!(build(&c, 3).unwrap(), build(&c, 4).unwrap());
    }

    #[test]
    fn all_window_spans_each_stage() {
        let mut c = ArchConfig::preset("tiny").unwrap();
        c.window = WindowSize::All;
        c.input_size = Some([32, 32]);
        let m = build(&c, 0).unwrap();
        let windows: Vec<usize> = m.stages.iter().map(|s| s[0].patm_h.window()).collect();
        assert_eq!(windows, [15, 7, 3, 1]);
    }

    #[test]
    fn forward_shapes_and_errors() {
        let c = ArchConfig::preset("tiny").unwrap();
        let m = build(&c, 0).unwrap();
        let x = Tensor::full(&[2, 12, 20, 3], 0.5);
        assert_eq!(m.forward(&x).unwrap().shape(), &[2, 4]);
        assert!(matches!(
            m.forward(&Tensor::zeros(&[1, 3, 8, 3])),
            Err(Error::Dimension(_))
        ));
        assert!(m.forward(&Tensor::zeros(&[1, 8, 8, 1])).is_err());
        let bad = Tensor::full(&[1, 8, 8, 3], f64::NAN);
        assert!(matches!(m.forward(&bad), Err(Error::Numeric { .. })));
    }
}
