//! Gradient-check cases and the invariant checks behind `selftest`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::blocks::{
    block_forward, channel_mlp_forward, normalize, patch_embed, token_mixing_forward, BlockParams,
    BlockVars, StemParams,
};
use crate::error::{Error, Result};
use crate::gradcheck::{grad_check_many, GradCheckConfig, GradCheckReport};
use crate::model::{build, count_flops, count_params, reference_counts, ArchConfig, REFERENCE_TOL, PRESET_NAMES};
use crate::patm::{aggregate_tokens, patm_forward, Axis, PatmParams, PatmVars, PhaseMode, PhaseParams, PhaseVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::phase_map::{phase_map, PhaseMap};
use crate::train::synth::SynthTask;
use crate::train::trainer::{train, TrainConfig};
use crate::wave::{oracle_superpose, phase_distance, superpose_amplitude, superpose_phase};

/// Rebuilds a [`PatmVars`] from vars in [`PatmParams::tensors`] order.
pub fn patm_vars_from<'t>(p: &PatmParams, it: &mut impl Iterator<Item = Var<'t>>) -> Result<PatmVars<'t>> {
    let mut next = || it.next().ok_or_else(|| Error::Contract("too few vars for PATM".into()));
    let amp_fc = next()?;
    let phase = match &p.phase {
        PhaseParams::None => PhaseVars::None,
        PhaseParams::Identity => PhaseVars::Identity,
        PhaseParams::Static(_) => PhaseVars::Static(next()?),
        PhaseParams::ChannelFC(_) => PhaseVars::ChannelFC(next()?),
        PhaseParams::DepthWise(_) => PhaseVars::DepthWise(next()?),
    };
    Ok(PatmVars {
        axis: p.axis,
        amp_fc,
        phase,
        token_real: next()?,
        token_imag: next()?,
        out_fc: next()?,
    })
}

/// Rebuilds a [`BlockVars`] from vars in [`BlockParams::tensors`] order.
pub fn block_vars_from<'t>(b: &BlockParams, it: &mut impl Iterator<Item = Var<'t>>) -> Result<BlockVars<'t>> {
    let next = |it: &mut dyn Iterator<Item = Var<'t>>| {
        it.next().ok_or_else(|| Error::Contract("too few vars for block".into()))
    };
    let norm1_scale = next(it)?;
    let norm1_shift = next(it)?;
    let patm_h = patm_vars_from(&b.patm_h, it)?;
    let patm_w = patm_vars_from(&b.patm_w, it)?;
    Ok(BlockVars {
        norm1_scale,
        norm1_shift,
        patm_h,
        patm_w,
        branch_fc: next(it)?,
        norm2_scale: next(it)?,
        norm2_shift: next(it)?,
        mlp_fc1: next(it)?,
        mlp_fc2: next(it)?,
    })
}

fn owned(ts: Vec<&Tensor>) -> Vec<Tensor> {
    ts.into_iter().cloned().collect()
}

/// Non-symmetric scalar readout `Σ out·r`.
fn readout<'t>(out: Var<'t>, r: &Tensor) -> Result<Var<'t>> {
    Ok(out.mul(out.tape().constant(r.clone()))?.sum_all())
}

/// Block with layer-norm scales and shifts moved off their init values so
/// their gradients are exercised away from the identity.
fn perturbed_block(d: usize, window: usize, mode: PhaseMode, grid: (usize, usize), rng: &mut ChaCha8Rng) -> Result<BlockParams> {
    let mut b = BlockParams::init(d, 2, window, mode, Some(grid), rng)?;
    for t in [&mut b.norm1_scale, &mut b.norm1_shift, &mut b.norm2_scale, &mut b.norm2_shift] {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    Ok(b)
}

/// Gradient checks for every op family and module, in a fixed order.
pub fn grad_suite(cfg: &GradCheckConfig, seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let (b, h, w, d) = (2, 4, 5, 3);
    let grid = [b, h, w, d];

    let a = Tensor::randn(&[3, 4], &mut rng);
    let m = Tensor::randn(&[4, 5], &mut rng);
    let r = Tensor::randn(&[3, 5], &mut rng);
    out.push((
        "matmul".to_string(),
        grad_check_many(|_, v| readout(v[0].matmul(v[1])?, &r), &[a, m], cfg)?,
    ));

    let x = Tensor::randn(&grid, &mut rng);
    let scale = Tensor::uniform(&[d], 0.5, 1.5, &mut rng);
    let shift = Tensor::randn(&[d], &mut rng);
    let r = Tensor::randn(&grid, &mut rng);
    out.push((
        "normalize".to_string(),
        grad_check_many(|_, v| readout(normalize(v[0], v[1], v[2])?, &r), &[x.clone(), scale, shift], cfg)?,
    ));

    let blk = perturbed_block(d, 3, PhaseMode::ChannelFC, (h, w), &mut rng)?;
    let mut inputs = vec![x.clone()];
    inputs.extend(owned(blk.tensors()));
    out.push((
        "channel_mlp".to_string(),
        grad_check_many(
            |_, v| {
                let bv = block_vars_from(&blk, &mut v[1..].iter().copied())?;
                readout(channel_mlp_forward(v[0], &bv)?, &r)
            },
            &inputs,
            cfg,
        )?,
    ));

    let amp = Tensor::randn(&grid, &mut rng);
    let theta = Tensor::uniform(&grid, -PI, PI, &mut rng);
    let wt = Tensor::randn(&[3, d], &mut rng);
    let wi = Tensor::randn(&[3, d], &mut rng);
    for axis in [Axis::Height, Axis::Width] {
        out.push((
            format!("aggregate_tokens_{}", axis_name(axis)),
            grad_check_many(
                |_, v| readout(aggregate_tokens(v[0], v[1], v[2], v[3], axis)?, &r),
                &[amp.clone(), theta.clone(), wt.clone(), wi.clone()],
                cfg,
            )?,
        ));
    }

    for mode in [
        PhaseMode::None,
        PhaseMode::Static,
        PhaseMode::Identity,
        PhaseMode::ChannelFC,
        PhaseMode::DepthWise,
    ] {
        for axis in [Axis::Height, Axis::Width] {
            let p = PatmParams::init(d, 3, axis, mode, Some((h, w)), &mut rng)?;
            let mut inputs = vec![x.clone()];
            inputs.extend(owned(p.tensors()));
            out.push((
                format!("patm_{}_{}", mode, axis_name(axis)),
                grad_check_many(
                    |_, v| {
                        let pv = patm_vars_from(&p, &mut v[1..].iter().copied())?;
                        readout(patm_forward(v[0], &pv)?, &r)
                    },
                    &inputs,
                    cfg,
                )?,
            ));
        }
    }

    let blk = perturbed_block(d, 3, PhaseMode::ChannelFC, (h, w), &mut rng)?;
    let mut inputs = vec![x.clone()];
    inputs.extend(owned(blk.tensors()));
    out.push((
        "token_mixing".to_string(),
        grad_check_many(
            |_, v| {
                let bv = block_vars_from(&blk, &mut v[1..].iter().copied())?;
                readout(token_mixing_forward(v[0], &bv)?, &r)
            },
            &inputs,
            cfg,
        )?,
    ));
    out.push((
        "block".to_string(),
        grad_check_many(
            |_, v| {
                let bv = block_vars_from(&blk, &mut v[1..].iter().copied())?;
                readout(block_forward(v[0], &bv)?, &r)
            },
            &inputs,
            cfg,
        )?,
    ));

    out.push(("two_block_model".to_string(), two_block_check(cfg, &mut rng)?));
    Ok(out)
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Height => "h",
        Axis::Width => "w",
    }
}

/// Stem, two blocks, final norm, mean pool, linear head and cross-entropy,
/// with every parameter checked.
fn two_block_check(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> Result<GradCheckReport> {
    let (batch, side, c_in, d, classes) = (2, 8, 3, 4, 3);
    let stem = StemParams::init(2, c_in, d, rng)?;
    let grid = (side / 2, side / 2);
    let b1 = perturbed_block(d, 3, PhaseMode::ChannelFC, grid, rng)?;
    let b2 = perturbed_block(d, 3, PhaseMode::DepthWise, grid, rng)?;
    let norm_scale = Tensor::uniform(&[d], 0.5, 1.5, rng);
    let norm_shift = Tensor::randn(&[d], rng).map(|v| 0.3 * v);
    let head = Tensor::randn(&[classes, d], rng);
    let head_bias = Tensor::randn(&[classes], rng);
    let images = Tensor::randn(&[batch, side, side, c_in], rng);
    let labels = vec![0, 2];

    let mut inputs = vec![stem.proj.clone()];
    inputs.extend(owned(b1.tensors()));
    inputs.extend(owned(b2.tensors()));
    inputs.extend([norm_scale, norm_shift, head, head_bias]);
    let n1 = b1.tensors().len();
    let n2 = b2.tensors().len();
    grad_check_many(
        |tape, v| {
            let x = tape.constant(images.clone());
            let mut x = patch_embed(x, stem.patch, v[0])?;
            let bv1 = block_vars_from(&b1, &mut v[1..].iter().copied())?;
            let bv2 = block_vars_from(&b2, &mut v[1 + n1..].iter().copied())?;
            x = block_forward(x, &bv1)?;
            x = block_forward(x, &bv2)?;
            let k = 1 + n1 + n2;
            let s = x.shape();
            let tokens = s[1] * s[2];
            let pooled = normalize(x, v[k], v[k + 1])?
                .reshape(&[s[0], tokens, s[3]])?
                .reduce_sum(1)?
                .scale(1.0 / tokens as f64);
            pooled.linear(v[k + 2])?.add(v[k + 3])?.cross_entropy(&labels)
        },
        &inputs,
        cfg,
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        CheckOutcome {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {}", e)),
        }
    }
}

/// Largest amplitude and phase deviation from the complex oracle over `n`
/// random pairs.
pub fn superpose_oracle_error(n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut amp_err, mut phase_err) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let a1 = rng.gen_range(0.0..10.0);
        let a2 = rng.gen_range(0.0..10.0);
        let t1 = rng.gen_range(-PI..PI);
        let t2 = rng.gen_range(-PI..PI);
        let amp = superpose_amplitude(a1, a2, t1, t2)?;
        let phase = superpose_phase(a1, a2, t1, t2)?;
        let o = oracle_superpose(a1, a2, t1, t2);
        amp_err = amp_err.max((amp - o.amplitude()).abs());
        phase_err = phase_err.max(phase_distance(phase, o.phase()));
    }
    Ok((amp_err, phase_err))
}

/// Brute-force windowed token-FC along `axis` of a `[b, h, w, d]` grid with
/// per-channel weights `w[r, c]` and zero padding.
pub fn windowed_token_fc(z: &Tensor, w: &Tensor, axis: Axis) -> Tensor {
    let s = z.shape();
    let k = w.shape()[0];
    let half = (k / 2) as isize;
    let mut out = Tensor::zeros(s);
    for bi in 0..s[0] {
        for i in 0..s[1] {
            for j in 0..s[2] {
                for c in 0..s[3] {
                    let mut acc = 0.0;
                    for r in 0..k {
                        let off = r as isize - half;
                        let (ii, jj) = match axis {
                            Axis::Height => (i as isize + off, j as isize),
                            Axis::Width => (i as isize, j as isize + off),
                        };
                        if ii < 0 || jj < 0 || ii >= s[1] as isize || jj >= s[2] as isize {
                            continue;
                        }
                        acc += w.at(&[r, c]) * z.at(&[bi, ii as usize, jj as usize, c]);
                    }
                    out.set(&[bi, i, j, c], acc);
                }
            }
        }
    }
    out
}

/// Worst deviation between phase-aware aggregation with phases in {0, π}
/// and zero imaginary weights, and plain token-FC on signed amplitudes.
pub fn classical_limit_error(configs: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..configs {
        let shape = [
            rng.gen_range(1..=2),
            rng.gen_range(1..=6),
            rng.gen_range(1..=6),
            rng.gen_range(1..=4),
        ];
        let k = [1, 3, 5, 7][rng.gen_range(0..4)];
        let axis = if rng.gen_bool(0.5) { Axis::Height } else { Axis::Width };
        let amp = Tensor::uniform(&shape, 0.0, 2.0, &mut rng);
        let theta = Tensor::from_fn(&shape, |_| if rng.gen_bool(0.5) { PI } else { 0.0 });
        let wt = Tensor::randn(&[k, shape[3]], &mut rng);
        let signed = amp.zip_map(&theta, |a, t| if t == 0.0 { a } else { -a })?;
        let expect = windowed_token_fc(&signed, &wt, axis);
        let tape = Tape::new();
        let got = aggregate_tokens(
            tape.constant(amp),
            tape.constant(theta),
            tape.constant(wt.clone()),
            tape.constant(Tensor::zeros(&[k, shape[3]])),
            axis,
        )?;
        worst = worst.max(got.value().max_abs_diff(&expect));
    }
    Ok(worst)
}

/// Checks every preset count against the published table.
pub fn preset_count_lines() -> Result<Vec<(String, bool)>> {
    let mut lines = Vec::new();
    for name in PRESET_NAMES {
        let Some((ref_p, ref_f)) = reference_counts(name) else {
            continue;
        };
        let m = build(&ArchConfig::preset(name)?, 0)?;
        let p = count_params(&m) as f64;
        let f = count_flops(&m, 224, 224) as f64;
        let ok = within(p, ref_p) && within(f, ref_f);
        lines.push((
            format!(
                "{}: params {:.2}M (ref {}M), flops {:.2}G (ref {}G)",
                name,
                p / 1e6,
                ref_p / 1e6,
                f / 1e9,
                ref_f / 1e9
            ),
            ok,
        ));
    }
    Ok(lines)
}

pub fn within(value: f64, reference: f64) -> bool {
    (value - reference).abs() <= REFERENCE_TOL * reference
}

fn phase_map_check(seed: u64) -> Result<(bool, String)> {
    let cfg = ArchConfig::preset("tiny")?;
    let m = build(&cfg, seed)?;
    let img = Tensor::randn(&[1, 32, 32, 3], &mut ChaCha8Rng::seed_from_u64(seed));
    let map = phase_map(&m, &img, 3, 7, Axis::Width)?;
    let in_range = map.values.iter().all(|v| (-1.0..=1.0).contains(v));
    let mut diag = 0.0f64;
    for i in 0..map.grid_h {
        for j in 0..map.grid_w {
            diag = diag.max((map.get(i, j, i, j).unwrap_or(f64::NAN) - 1.0).abs());
        }
    }
    let back = PhaseMap::from_csv(&map.to_csv(), map.grid_h, map.grid_w, map.window)?;
    let ok = in_range && diag <= 1e-12 && back == map;
    Ok((ok, format!("in_range={} diag_err={:e} csv_roundtrip={}", in_range, diag, back == map)))
}

fn training_check(seed: u64) -> Result<(bool, String)> {
    let cfg = ArchConfig::preset("tiny")?;
    let task = SynthTask {
        n_train: 32,
        n_val: 16,
        ..SynthTask::interference(seed)
    };
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed,
        ..Default::default()
    };
    let (_, h1) = train(&cfg, &task, &tc)?;
    let (_, h2) = train(&cfg, &task, &tc)?;
    let same = h1.step_loss.iter().map(|v| v.to_bits()).eq(h2.step_loss.iter().map(|v| v.to_bits()));
    let frozen_tc = TrainConfig { lr: 0.0, ..tc };
    let (m, _) = train(&cfg, &task, &frozen_tc)?;
    let frozen = m == build(&cfg, seed)?;
    let first_ok = h1.step_loss.len() > 1 && h1.step_loss[1].is_finite() && h1.step_loss[1] <= h1.step_loss[0] + 1.0;
    Ok((
        same && frozen && first_ok,
        format!("deterministic={} lr0_frozen={} first_step_bounded={}", same, frozen, first_ok),
    ))
}

fn resolution_check() -> Result<(bool, String)> {
    let m = build(&ArchConfig::preset("tiny")?, 0)?;
    let x = Tensor::randn(&[1, 64, 96, 3], &mut ChaCha8Rng::seed_from_u64(1));
    let logits = m.forward(&x)?;
    let ok = logits.shape() == [1, m.config.num_classes];
    Ok((ok, format!("logits={:?}", logits.shape())))
}

fn flop_scaling_check() -> Result<(bool, String)> {
    let m = build(&ArchConfig::preset("T")?, 0)?;
    let base = count_flops(&m, 224, 224) as f64;
    let double = count_flops(&m, 448, 224) as f64;
    let ratio = double / base;
    Ok(((ratio - 2.0).abs() <= 0.02, format!("ratio={:.5}", ratio)))
}

/// Runs the invariant suite in a fixed order.
pub fn selftest(seed: u64) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    out.push(CheckOutcome::from_result(
        "superpose_oracle",
        superpose_oracle_error(100_000, seed).map(|(a, p)| {
            (a <= 1e-10 && p <= 1e-10, format!("amp_err={:e} phase_err={:e}", a, p))
        }),
    ));
    out.push(CheckOutcome::from_result(
        "classical_limit",
        classical_limit_error(100, seed).map(|e| (e <= 1e-12, format!("max_err={:e}", e))),
    ));
    match grad_suite(&GradCheckConfig::default(), seed) {
        Ok(reports) => {
            for (name, r) in reports {
                out.push(CheckOutcome::new(
                    &format!("grad_{}", name),
                    r.passed(),
                    format!("max_rel_err={:e} coords={}", r.max_rel_err, r.coords_checked),
                ));
            }
        }
        Err(e) => out.push(CheckOutcome::new("grad_suite", false, format!("error: {}", e))),
    }
    match preset_count_lines() {
        Ok(lines) => {
            for (line, ok) in lines {
                out.push(CheckOutcome::new("preset_counts", ok, line));
            }
        }
        Err(e) => out.push(CheckOutcome::new("preset_counts", false, format!("error: {}", e))),
    }
    out.push(CheckOutcome::from_result("flop_scaling", flop_scaling_check()));
    out.push(CheckOutcome::from_result("variable_resolution", resolution_check()));
    out.push(CheckOutcome::from_result("training", training_check(seed)));
    out.push(CheckOutcome::from_result("phase_map", phase_map_check(seed)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brute_force_token_fc_hand_case() {
        // one row of 3 tokens, window 3, weights (1, 10, 100)
        let z = Tensor::new(vec![1, 1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let w = Tensor::new(vec![3, 1], vec![1.0, 10.0, 100.0]).unwrap();
        let out = windowed_token_fc(&z, &w, Axis::Width);
        assert_eq!(out.data(), &[210.0, 321.0, 32.0]);
    }

    #[test]
    fn vars_roundtrip_matches_bind() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = BlockParams::init(3, 2, 3, PhaseMode::DepthWise, None, &mut rng).unwrap();
        let tape = Tape::new();
        let bound = b.bind(&tape, true);
        let rebuilt = block_vars_from(&b, &mut bound.vars().into_iter()).unwrap();
        let ids = |v: &BlockVars| v.vars().iter().map(|x| x.id()).collect::<Vec<_>>();
        assert_eq!(ids(&bound), ids(&rebuilt));
        assert!(block_vars_from(&b, &mut bound.vars().into_iter().take(4)).is_err());
    }
}
