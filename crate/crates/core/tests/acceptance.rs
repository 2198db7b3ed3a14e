//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fail.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wavemlp::config::RunConfig;
use wavemlp::gradcheck::GradCheckConfig;
use wavemlp::model::{build, count_flops, count_params, reference_counts, ArchConfig, ModelParams, PRESET_NAMES};
use wavemlp::patm::Axis;
use wavemlp::suite::{classical_limit_error, grad_suite, superpose_oracle_error, within};
use wavemlp::train::ablate::{ablate, thread_cap, AblationAxis};
use wavemlp::train::phase_map::{phase_map, read_pgm, PhaseMap};
use wavemlp::train::synth::SynthTask;
use wavemlp::train::trainer::{train, History, TrainConfig};
use wavemlp::Tensor;

const ORACLE_SAMPLES: usize = 100_000;
const ORACLE_TOL: f64 = 1e-10;
const ORACLE_BUDGET: Duration = Duration::from_secs(5);
const CLASSICAL_CONFIGS: usize = 100;
const CLASSICAL_TOL: f64 = 1e-12;
const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const TRAIN_STEP_LIMIT: usize = 2000;
const TRAIN_MIN_ACC: f64 = 0.95;
const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const DIAGONAL_TOL: f64 = 1e-12;
const PHASE_MAP_IMAGE: usize = 64;
const SEED: u64 = 0;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, n: usize, name: &str, ok: bool, detail: String) {
        println!("criterion {} {}: {} ({})", n, name, if ok { "PASS" } else { "FAIL" }, detail);
        if !ok {
            self.failures += 1;
        }
    }
}

fn out_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn superposition(r: &mut Report) {
    let start = Instant::now();
    let (amp_err, phase_err) = superpose_oracle_error(ORACLE_SAMPLES, SEED).unwrap();
    let t = start.elapsed();
    let ok = amp_err <= ORACLE_TOL && phase_err <= ORACLE_TOL && t < ORACLE_BUDGET;
    r.line(
        1,
        "superposition oracle",
        ok,
        format!(
            "{} samples, amp_err={:.2e}, phase_err={:.2e}, tol={:e}, {:.2?}",
            ORACLE_SAMPLES, amp_err, phase_err, ORACLE_TOL, t
        ),
    );
}

fn classical_limit(r: &mut Report) {
    let err = classical_limit_error(CLASSICAL_CONFIGS, SEED).unwrap();
    r.line(
        2,
        "classical limit",
        err <= CLASSICAL_TOL,
        format!("{} configs, max_err={:.2e}, tol={:e}", CLASSICAL_CONFIGS, err, CLASSICAL_TOL),
    );
}

fn gradients(r: &mut Report) {
    let cfg = GradCheckConfig {
        step: GRAD_STEP,
        tol: GRAD_TOL,
        max_coords: None,
    };
    let start = Instant::now();
    let reports = grad_suite(&cfg, SEED).unwrap();
    let t = start.elapsed();
    let failed: Vec<&str> = reports.iter().filter(|(_, r)| !r.passed()).map(|(n, _)| n.as_str()).collect();
    let worst = reports.iter().map(|(_, r)| r.max_rel_err).fold(0.0, f64::max);
    r.line(
        3,
        "gradient checks",
        failed.is_empty() && t < GRAD_BUDGET,
        format!(
            "{} cases, worst_rel_err={:.2e}, tol={:e}, step={:e}, failed={:?}, {:.2?}",
            reports.len(),
            worst,
            GRAD_TOL,
            GRAD_STEP,
            failed,
            t
        ),
    );
}

fn accounting(r: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in PRESET_NAMES {
        let Some((rp, rf)) = reference_counts(name) else {
            continue;
        };
        let m = build(&ArchConfig::preset(name).unwrap(), SEED).unwrap();
        let p = count_params(&m) as f64;
        let f = count_flops(&m, 224, 224) as f64;
        ok &= within(p, rp) && within(f, rf);
        parts.push(format!("{} {:.1}M/{:.2}G", name, p / 1e6, f / 1e9));
    }
    r.line(4, "preset accounting", ok, format!("±10%: {}", parts.join(", ")));
}

fn variable_resolution(r: &mut Report) {
    let mut ok = true;
    let mut parts = Vec::new();
    let x = Tensor::randn(&[1, 64, 96, 3], &mut ChaCha8Rng::seed_from_u64(SEED));
    for name in PRESET_NAMES {
        let mut cfg = ArchConfig::preset(name).unwrap();
        cfg.input_size = Some([224, 224]);
        let base = count_params(&build(&cfg, SEED).unwrap());
        cfg.input_size = Some([64, 96]);
        let m = build(&cfg, SEED).unwrap();
        let same = count_params(&m) == base;
        let shape_ok = match m.forward(&x) {
            Ok(y) => y.shape() == [1, cfg.num_classes] && y.all_finite(),
            Err(_) => false,
        };
        ok &= same && shape_ok;
        parts.push(format!("{} {}", name, if same && shape_ok { "ok" } else { "bad" }));
    }
    r.line(5, "64x96 forward", ok, parts.join(", "));
}

fn toy_training(r: &mut Report) -> Option<(ModelParams, SynthTask)> {
    let pilot = RunConfig::pilot();
    let cfg = pilot.arch.as_ref().unwrap().resolve().unwrap();
    let task = pilot.task.clone().unwrap();
    let tc: TrainConfig = pilot.train.clone().unwrap();
    let min_acc = pilot.min_train_acc.unwrap();
    let start = Instant::now();
    let run = || train(&cfg, &task, &tc);
    let (a, b) = match (run(), run()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            r.line(6, "toy training", false, format!("error: {}", e));
            return None;
        }
    };
    let t = start.elapsed();
    let bits = |h: &History| h.step_loss.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = bits(&a.1) == bits(&b.1) && a.1.to_csv() == b.1.to_csv();
    let steps = a.1.step_loss.len();
    let acc = a.1.epochs.last().map_or(0.0, |e| e.train_acc);
    let hit = a.1.epochs.iter().find(|e| e.train_acc >= TRAIN_MIN_ACC).map(|e| e.step);
    std::fs::write(out_dir().join("pilot_history.csv"), a.1.to_csv()).unwrap();
    let ok = min_acc >= TRAIN_MIN_ACC
        && steps <= TRAIN_STEP_LIMIT
        && hit.is_some()
        && acc >= TRAIN_MIN_ACC
        && identical
        && t < TRAIN_BUDGET;
    r.line(
        6,
        "toy training",
        ok,
        format!(
            "steps={}, final_train_acc={:.4}, first_step_at_{}={:?}, val_acc={:.4}, identical={}, two runs {:.2?}",
            steps,
            acc,
            TRAIN_MIN_ACC,
            hit,
            a.1.epochs.last().map_or(0.0, |e| e.val_acc),
            identical,
            t
        ),
    );
    Some((a.0, task))
}

fn ablations(r: &mut Report) {
    let base = ArchConfig::preset("tiny").unwrap();
    let task = SynthTask {
        n_train: 1024,
        n_val: 256,
        ..SynthTask::interference(SEED)
    };
    let tc = TrainConfig {
        epochs: 20,
        batch_size: 32,
        lr: 2e-3,
        max_steps: Some(600),
        ..Default::default()
    };
    let expected: [(AblationAxis, &[&str]); 3] = [
        (AblationAxis::PhaseMode, &["None", "Static", "ChannelFC"]),
        (AblationAxis::Estimator, &["Identity", "DepthWise", "ChannelFC"]),
        (AblationAxis::Window, &["3", "5", "7", "All"]),
    ];
    let start = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    for (axis, rows) in expected {
        match ablate(axis, &base, &task, &tc, &[0, 1, 2], thread_cap()) {
            Ok(table) => {
                let names: Vec<String> = table.rows.iter().map(|r| r.setting.to_string()).collect();
                let in_range = table.rows.iter().all(|r| r.val_accs.iter().all(|v| (0.0..=1.0).contains(v)));
                ok &= names == rows && in_range;
                std::fs::write(out_dir().join(format!("ablation_{}.csv", axis)), table.to_csv()).unwrap();
                let cells: Vec<String> =
                    table.rows.iter().map(|r| format!("{}={:.3}±{:.3}", r.setting, r.mean, r.sd)).collect();
                parts.push(format!("{}[{}]", axis, cells.join(" ")));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{}: error {}", axis, e));
            }
        }
    }
    r.line(
        7,
        "ablation tables",
        ok,
        format!("{}; {:.2?}; csv in {}", parts.join("; "), start.elapsed(), out_dir().display()),
    );
}

fn phase_maps(r: &mut Report, trained: Option<(ModelParams, SynthTask)>) {
    let Some((model, task)) = trained else {
        r.line(8, "phase-map export", false, "no trained model".into());
        return;
    };
    // the trained model mixes tokens from the input, so a larger image gives
    // stage grids with more than one token
    let (_, val) = SynthTask {
        size: PHASE_MAP_IMAGE,
        n_train: 2,
        n_val: 2,
        ..task
    }
    .generate()
    .unwrap();
    let dir = out_dir();
    let mut ok = true;
    let mut parts = Vec::new();
    for (stage, image) in [(3, 0), (4, 1)] {
        let (x, _) = val.batch(&[image]);
        let map = match phase_map(&model, &x, stage, 7, Axis::Width) {
            Ok(m) => m,
            Err(e) => {
                r.line(8, "phase-map export", false, format!("error: {}", e));
                return;
            }
        };
        let entries = map.entries();
        let in_range = entries.iter().all(|e| (-1.0..=1.0).contains(&e.4));
        let diag = entries
            .iter()
            .filter(|e| (e.0, e.1) == (e.2, e.3))
            .map(|e| (e.4 - 1.0).abs())
            .fold(0.0, f64::max);
        let stem = format!("phase_map_s{}", stage);
        map.write(&dir, &stem).unwrap();
        let csv = std::fs::read_to_string(dir.join(format!("{}.csv", stem))).unwrap();
        let csv_ok = PhaseMap::from_csv(&csv, map.grid_h, map.grid_w, map.window).ok() == Some(map.clone());
        let pgm = std::fs::read(dir.join(format!("{}.pgm", stem))).unwrap();
        let pgm_ok = read_pgm(&pgm).ok() == Some((map.pgm_dims().0, map.pgm_dims().1, map.pixels()));
        ok &= in_range && diag <= DIAGONAL_TOL && csv_ok && pgm_ok;
        parts.push(format!(
            "stage{} grid {}x{}: entries={}, in_range={}, diag_err={:.1e}, csv={}, pgm={}",
            stage,
            map.grid_h,
            map.grid_w,
            entries.len(),
            in_range,
            diag,
            csv_ok,
            pgm_ok
        ));
    }
    r.line(8, "phase-map export", ok, parts.join("; "));
}

fn main() {
    // the harness passes flags such as --nocapture; nothing here takes any
    let mut r = Report { failures: 0 };
    superposition(&mut r);
    classical_limit(&mut r);
    gradients(&mut r);
    accounting(&mut r);
    variable_resolution(&mut r);
    let trained = toy_training(&mut r);
    ablations(&mut r);
    phase_maps(&mut r, trained);
    println!("acceptance: {} of 8 criteria passed", 8 - r.failures);
    if r.failures > 0 {
        std::process::exit(1);
    }
}
