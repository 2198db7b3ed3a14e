use wavemlp::model::*;
use wavemlp::patm::PhaseMode;
use wavemlp::Tensor;

fn model(name: &str) -> ModelParams {
    build(&ArchConfig::preset(name).unwrap(), 0).unwrap()
}

#[test]
fn tiny_matches_closed_form() {
    // per block 11d² + 32d; stems p²·c_in·d; final norm 2d; head K·d + K
    let blocks: usize = [8, 16, 24, 32].iter().map(|d| 11 * d * d + 32 * d).sum();
    assert_eq!(blocks, 23_680);
    let stems = 8 * 48 + 16 * 32 + 24 * 64 + 32 * 96;
    assert_eq!(count_params(&model("tiny")), blocks + stems + 64 + 132);
    assert_eq!(count_params(&model("tiny")), 29_380);
    // 8×8 input: token grids 2×2, 1×1, 1×1, 1×1; per block n·(11d² + 28d)
    let m = model("tiny");
    assert_eq!(count_flops(&m, 8, 8), 6_656 + 26_144 + 128);
    let parts = flop_breakdown(&m, 8, 8);
    assert_eq!(parts.iter().find(|(k, _)| k == "stage1.block1").unwrap().1, 4 * (11 * 64 + 28 * 8));
}

#[test]
fn presets_within_published_tolerance() {
    for name in PRESET_NAMES {
        let Some((p, f)) = reference_counts(name) else { continue };
        let m = model(name);
        let params = count_params(&m) as f64;
        let flops = count_flops(&m, 224, 224) as f64;
        assert!((params - p).abs() <= REFERENCE_TOL * p, "{} params {}", name, params);
        assert!((flops - f).abs() <= REFERENCE_TOL * f, "{} flops {}", name, flops);
    }
}

#[test]
fn frozen_preset_counts() {
    let expect = [
        ("T*", 14_144_232, 2_176_344_064u64),
        ("T", 16_077_800, 2_485_628_928),
        ("S", 29_553_640, 4_691_365_888),
        ("M", 42_859_496, 8_226_967_552),
        ("B", 61_502_440, 10_658_451_456),
    ];
    for (name, p, f) in expect {
        let m = model(name);
        assert_eq!(count_params(&m), p, "{}", name);
        assert_eq!(count_flops(&m, 224, 224), f, "{}", name);
    }
}

#[test]
fn flops_scale_linearly_with_pixels() {
    for name in ["T", "tiny"] {
        let m = model(name);
        let base = count_flops(&m, 224, 224) as f64;
        for (h, w, factor) in [(448, 224, 2.0), (224, 448, 2.0), (448, 448, 4.0)] {
            let ratio = count_flops(&m, h, w) as f64 / base;
            assert!((ratio / factor - 1.0).abs() <= 0.01, "{} {}x{}: {}", name, h, w, ratio);
        }
    }
}

#[test]
fn params_independent_of_resolution() {
    let mut cfg = ArchConfig::preset("tiny").unwrap();
    let m = build(&cfg, 1).unwrap();
    for (h, w) in [(8, 8), (64, 96), (33, 17)] {
        let y = m.forward(&Tensor::zeros(&[1, h, w, 3])).unwrap();
        assert_eq!(y.shape(), &[1, 4]);
    }
    // input size only matters for static phase tables
    cfg.input_size = Some([64, 96]);
    assert_eq!(count_params(&build(&cfg, 1).unwrap()), count_params(&m));
    cfg.phase_mode = PhaseMode::Static;
    let a = count_params(&build(&cfg, 1).unwrap());
    cfg.input_size = Some([32, 32]);
    assert_ne!(a, count_params(&build(&cfg, 1).unwrap()));
}

#[test]
fn phase_mode_changes_counts_as_expected() {
    let mut cfg = ArchConfig::preset("tiny").unwrap();
    let fc = count_params(&build(&cfg, 0).unwrap());
    cfg.phase_mode = PhaseMode::None;
    let none = count_params(&build(&cfg, 0).unwrap());
    cfg.phase_mode = PhaseMode::DepthWise;
    let dw = count_params(&build(&cfg, 0).unwrap());
    // two PATMs per block, one block per stage
    let dims = [8usize, 16, 24, 32];
    assert_eq!(fc - none, dims.iter().map(|d| 2 * d * d).sum::<usize>());
    assert_eq!(dw - none, dims.iter().map(|d| 2 * 3 * d).sum::<usize>());
}

#[test]
fn config_json_roundtrip_and_validation() {
    let cfg = ArchConfig::preset("S").unwrap();
    assert_eq!(ArchConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    let mut bad = cfg.clone();
    bad.window = WindowSize::Local(4);
    assert!(bad.validate().is_err());
    let mut bad = cfg.clone();
    bad.window = WindowSize::All;
    assert!(bad.validate().is_err());
    bad.input_size = Some([64, 64]);
    assert!(bad.validate().is_ok());
    assert!(ArchConfig::from_json("{\"stages\": [], \"phase_mode\": \"None\", \"num_classes\": 2, \"extra\": 1}").is_err());
}
