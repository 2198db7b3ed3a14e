use wavemlp::config::RunConfig;
use wavemlp::model::{build, ArchConfig};
use wavemlp::patm::{Axis, PhaseMode};
use wavemlp::train::ablate::{ablate, AblationAxis};
use wavemlp::train::phase_map::{dequantize, phase_map, quantize, read_pgm, PhaseMap};
use wavemlp::train::synth::SynthTask;
use wavemlp::train::trainer::{train, TrainConfig};
use wavemlp::{Error, Tensor};

fn small_task(seed: u64) -> SynthTask {
    SynthTask {
        n_train: 64,
        n_val: 32,
        ..SynthTask::interference(seed)
    }
}

fn short(seed: u64, steps: usize) -> TrainConfig {
    TrainConfig {
        epochs: 50,
        batch_size: 16,
        lr: 2e-3,
        seed,
        max_steps: Some(steps),
        ..Default::default()
    }
}

#[test]
fn histories_are_bit_identical() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let (m1, h1) = train(&cfg, &small_task(0), &short(3, 12)).unwrap();
    let (m2, h2) = train(&cfg, &small_task(0), &short(3, 12)).unwrap();
    assert_eq!(h1.to_csv(), h2.to_csv());
    assert_eq!(h1.steps_csv(), h2.steps_csv());
    assert!(h1.step_loss.iter().zip(&h2.step_loss).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(m1, m2);
    let (_, h3) = train(&cfg, &small_task(0), &short(4, 12)).unwrap();
    assert_ne!(h1.step_loss, h3.step_loss);
}

#[test]
fn first_step_is_bounded_and_loss_drops() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let (_, h) = train(&cfg, &small_task(1), &short(0, 60)).unwrap();
    assert!(h.step_loss[1].is_finite() && h.step_loss[1] <= h.step_loss[0] + 1.0);
    let first: f64 = h.step_loss[..4].iter().sum::<f64>() / 4.0;
    let last: f64 = h.step_loss[h.step_loss.len() - 4..].iter().sum::<f64>() / 4.0;
    assert!(last < first, "{} -> {}", first, last);
    for e in &h.epochs {
        assert!((0.0..=1.0).contains(&e.train_acc) && (0.0..=1.0).contains(&e.val_acc));
    }
}

#[test]
fn zero_lr_leaves_parameters_bit_identical() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let tc = TrainConfig { lr: 0.0, ..short(2, 8) };
    let (m, h) = train(&cfg, &small_task(2), &tc).unwrap();
    assert_eq!(m, build(&cfg, 2).unwrap());
    // each epoch sees every sample once, so the epoch mean cannot move
    let l = h.loss();
    assert_eq!(l.len(), 2);
    assert!(l.iter().all(|v| (v - l[0]).abs() < 1e-12), "{:?}", l);
}

#[test]
fn blob_control_trains() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let task = SynthTask {
        n_train: 64,
        n_val: 32,
        ..SynthTask::blob_position(0)
    };
    let (_, h) = train(&cfg, &task, &short(0, 8)).unwrap();
    assert_eq!(h.step_loss.len(), 8);
}

#[test]
fn ablation_rows_and_reproducibility() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let task = SynthTask {
        n_train: 32,
        n_val: 16,
        ..SynthTask::interference(0)
    };
    let tc = short(0, 3);
    let a = ablate(AblationAxis::PhaseMode, &cfg, &task, &tc, &[0, 1, 2], 1).unwrap();
    let b = ablate(AblationAxis::PhaseMode, &cfg, &task, &tc, &[0, 1, 2], 2).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    let settings: Vec<String> = a.rows.iter().map(|r| r.setting.to_string()).collect();
    assert_eq!(settings, ["None", "Static", "ChannelFC"]);
    for r in &a.rows {
        assert_eq!(r.val_accs.len(), 3);
        assert!(r.val_accs.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let csv = a.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "axis,setting,seeds,mean_val_acc,sd_val_acc,val_accs");
    assert_eq!(lines.len(), 4);
}

#[test]
fn phase_map_properties_and_files() {
    let cfg = ArchConfig::preset("tiny").unwrap();
    let m = build(&cfg, 0).unwrap();
    let (_, val) = SynthTask::interference(0).generate().unwrap();
    let (img, _) = val.batch(&[0]);
    let big = Tensor::randn(&[1, 48, 48, 3], &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9));
    for (image, stage) in [(&img, 3), (&img, 4), (&big, 3)] {
        let map = phase_map(&m, image, stage, 7, Axis::Width).unwrap();
        for (i, j, k, l, v) in map.entries() {
            assert!((-1.0..=1.0).contains(&v));
            let back = map.get(k, l, i, j).unwrap();
            assert!((v - back).abs() <= 1e-10, "symmetry at {:?}", (i, j, k, l));
            if (i, j) == (k, l) {
                assert!((v - 1.0).abs() <= 1e-12);
            }
        }
    }

    let map = phase_map(&m, &big, 3, 5, Axis::Height).unwrap();
    let dir = tempfile::tempdir().unwrap();
    map.write(dir.path(), "pm").unwrap();
    let csv = std::fs::read_to_string(dir.path().join("pm.csv")).unwrap();
    assert_eq!(PhaseMap::from_csv(&csv, map.grid_h, map.grid_w, 5).unwrap(), map);
    let (w, h, px) = read_pgm(&std::fs::read(dir.path().join("pm.pgm")).unwrap()).unwrap();
    assert_eq!((w, h), map.pgm_dims());
    assert_eq!(px, map.pixels());
    for (i, j, k, l, v) in map.entries() {
        let (a, b) = (k + 2 - i, l + 2 - j);
        let p = px[(i * 5 + a) * w + j * 5 + b];
        assert!((dequantize(p) - v).abs() <= 1.0 / 255.0 + 1e-12);
    }
    assert_eq!(quantize(1.0), 255);
    assert_eq!(quantize(-1.0), 0);
}

#[test]
fn phase_map_needs_dynamic_phase() {
    let mut cfg = ArchConfig::preset("tiny").unwrap();
    cfg.phase_mode = PhaseMode::None;
    let m = build(&cfg, 0).unwrap();
    let img = Tensor::zeros(&[1, 16, 16, 3]);
    assert!(matches!(phase_map(&m, &img, 3, 7, Axis::Width), Err(Error::UnsupportedMode(_))));
    let m = build(&ArchConfig::preset("tiny").unwrap(), 0).unwrap();
    assert!(phase_map(&m, &img, 2, 7, Axis::Width).is_err());
    assert!(phase_map(&m, &img, 3, 6, Axis::Width).is_err());
    assert!(PhaseMap::from_csv("i,j,k,l,cos_diff\n0,0,5,0,1\n", 2, 2, 3).is_err());
    assert!(PhaseMap::from_csv("nope\n", 2, 2, 3).is_err());
}

#[test]
fn pilot_fixture_is_consistent() {
    let p = RunConfig::pilot();
    let tc = p.train.unwrap();
    let task = p.task.unwrap();
    assert!(tc.total_steps(task.n_train) <= 2000);
    assert!(p.min_train_acc.unwrap() >= 0.95);
}
