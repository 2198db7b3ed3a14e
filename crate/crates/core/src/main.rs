use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wavemlp::config::{ArchSpec, RunConfig};
use wavemlp::model::{build, count_flops, count_params, reference_counts, ArchConfig};
use wavemlp::patm::Axis;
use wavemlp::suite::{grad_suite, selftest, within};
use wavemlp::train::ablate::{ablate, thread_cap, AblationAxis};
use wavemlp::train::phase_map::phase_map;
use wavemlp::train::synth::{Generator, SynthTask};
use wavemlp::train::trainer::{train, TrainConfig};
use wavemlp::wave::{oracle_superpose, superpose_amplitude, superpose_phase};
use wavemlp::Error;

/// Phase-aware token mixing MLP: checks, accounting, toy training.
#[derive(Parser)]
#[command(name = "wavemlp", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// T*, T, S, M, B or tiny.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// JSON run file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Input resolution, `N` or `HxW`.
    #[arg(long, global = true)]
    res: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Superpose two waves and compare with complex addition.
    Superpose {
        #[arg(long, allow_negative_numbers = true)]
        a1: f64,
        #[arg(long, allow_negative_numbers = true)]
        a2: f64,
        #[arg(long, allow_negative_numbers = true)]
        t1: f64,
        #[arg(long, allow_negative_numbers = true)]
        t2: f64,
    },
    /// Central-difference checks of every module's gradients.
    CheckGrads,
    /// Parameter and FLOP counts.
    Count,
    /// Train on a synthetic task.
    Train(TrainArgs),
    /// Ablation table over one axis.
    Ablate {
        /// phase_mode, estimator, window or all.
        #[arg(long, default_value = "all")]
        axis: String,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Train briefly, then export the cosine phase-difference map.
    PhaseMap {
        #[arg(long, default_value_t = 3)]
        stage: usize,
        #[arg(long, default_value_t = 7)]
        window: usize,
        /// h or w.
        #[arg(long, default_value = "w")]
        axis: String,
        /// Validation image to probe.
        #[arg(long, default_value_t = 0)]
        image: usize,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Run the invariant suite.
    Selftest,
}

#[derive(Args, Clone, Default)]
struct TrainArgs {
    /// interference or blob-position.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
}

/// A failed check, as opposed to an error.
struct Failed;

enum Outcome {
    Failed,
    Usage(String),
    Error(Error),
}

impl From<Error> for Outcome {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse(_) | Error::Json(_) | Error::Domain(_) => Outcome::Usage(e.to_string()),
            e => Outcome::Error(e),
        }
    }
}

impl From<Failed> for Outcome {
    fn from(_: Failed) -> Self {
        Outcome::Failed
    }
}

type Run = std::result::Result<(), Outcome>;

fn kv(key: &str, value: impl std::fmt::Display) {
    println!("{}={}", key, value);
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn parse_res(s: &str) -> Result<(usize, usize), Outcome> {
    let bad = || Outcome::Usage(format!("invalid resolution '{}'", s));
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((h.parse().map_err(|_| bad())?, w.parse().map_err(|_| bad())?)),
        None => {
            let n = s.parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

struct Ctx {
    global: Global,
    file: RunConfig,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.global
            .seed
            .or(self.file.train.as_ref().map(|t| t.seed))
            .unwrap_or(0)
    }

    fn arch(&self, default: &str) -> Result<(String, ArchConfig), Outcome> {
        if let Some(p) = &self.global.preset {
            return Ok((p.clone(), ArchConfig::preset(p)?));
        }
        match &self.file.arch {
            Some(ArchSpec::Preset(p)) => Ok((p.clone(), ArchConfig::preset(p)?)),
            Some(spec) => Ok(("custom".into(), spec.resolve()?)),
            None => Ok((default.into(), ArchConfig::preset(default)?)),
        }
    }

    fn task(&self, a: &TrainArgs) -> Result<SynthTask, Outcome> {
        let mut t = self.file.task.clone().unwrap_or_else(|| SynthTask::interference(0));
        if let Some(g) = &a.task {
            t.generator = g.parse::<Generator>()?;
        }
        if let Some(n) = a.n_train {
            t.n_train = n;
        }
        if let Some(n) = a.n_val {
            t.n_val = n;
        }
        if let Some(res) = &self.global.res {
            let (h, w) = parse_res(res)?;
            if h != w {
                return Err(Outcome::Usage("synthetic tasks use square images".into()));
            }
            t.size = h;
        }
        t.validate()?;
        Ok(t)
    }

    fn train_config(&self, a: &TrainArgs) -> Result<TrainConfig, Outcome> {
        let mut tc = self.file.train.clone().unwrap_or_default();
        tc.seed = self.seed();
        if let Some(v) = a.epochs {
            tc.epochs = v;
        }
        if let Some(v) = a.steps {
            tc.max_steps = Some(v);
        }
        if let Some(v) = a.batch_size {
            tc.batch_size = v;
        }
        if let Some(v) = a.lr {
            tc.lr = v;
        }
        if let Some(v) = a.weight_decay {
            tc.weight_decay = v;
        }
        tc.validate()?;
        Ok(tc)
    }

    fn out_dir(&self) -> Result<PathBuf, Outcome> {
        let dir = self.global.out.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&dir).map_err(Error::from)?;
        Ok(dir)
    }
}

fn write(path: &Path, content: &str) -> Run {
    std::fs::write(path, content).map_err(Error::from)?;
    kv("wrote", path.display());
    Ok(())
}

fn cmd_superpose(a1: f64, a2: f64, t1: f64, t2: f64) -> Run {
    let amp = superpose_amplitude(a1, a2, t1, t2)?;
    let o = oracle_superpose(a1, a2, t1, t2);
    kv("amplitude", amp);
    kv("oracle_amplitude", o.amplitude());
    let amp_ok = (amp - o.amplitude()).abs() <= 1e-10;
    match superpose_phase(a1, a2, t1, t2) {
        Ok(phase) => {
            kv("phase", phase);
            kv("oracle_phase", o.phase());
            // both phases lose about eps·(a1 + a2)/|sum| near cancellation
            let tol = 1e-10 + 8.0 * f64::EPSILON * (a1 + a2) / o.amplitude().max(f64::MIN_POSITIVE);
            kv("phase_tol", tol);
            let phase_ok = wavemlp::wave::phase_distance(phase, o.phase()) <= tol;
            kv("agree", pass(amp_ok && phase_ok));
            if amp_ok && phase_ok {
                Ok(())
            } else {
                Err(Failed.into())
            }
        }
        Err(Error::UndefinedPhase) => {
            kv("phase", "undefined");
            kv("agree", pass(amp_ok));
            if amp_ok {
                Ok(())
            } else {
                Err(Failed.into())
            }
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_check_grads(ctx: &Ctx) -> Run {
    let cfg = ctx.file.gradcheck.clone().unwrap_or_default();
    kv("step", cfg.step);
    kv("tol", cfg.tol);
    let mut all = true;
    for (name, r) in grad_suite(&cfg, ctx.seed())? {
        println!(
            "grad.{}={} max_rel_err={:e} coords={}",
            name,
            pass(r.passed()),
            r.max_rel_err,
            r.coords_checked
        );
        all &= r.passed();
    }
    kv("result", pass(all));
    if all {
        Ok(())
    } else {
        Err(Failed.into())
    }
}

fn cmd_count(ctx: &Ctx) -> Run {
    let (name, cfg) = ctx.arch("T")?;
    let (h, w) = parse_res(ctx.global.res.as_deref().unwrap_or("224"))?;
    let m = build(&cfg, ctx.seed())?;
    let params = count_params(&m);
    let flops = count_flops(&m, h, w);
    kv("preset", &name);
    kv("res", format!("{}x{}", h, w));
    kv("params", params);
    kv("flops", flops);
    let Some((rp, rf)) = reference_counts(&name).filter(|_| (h, w) == (224, 224)) else {
        return Ok(());
    };
    let (p_ok, f_ok) = (within(params as f64, rp), within(flops as f64, rf));
    kv("ref_params", rp);
    kv("ref_flops", rf);
    kv(
        "check",
        format!(
            "params {}M±10%: {}, flops {}G±10%: {}",
            rp / 1e6,
            pass(p_ok),
            rf / 1e9,
            pass(f_ok)
        ),
    );
    if p_ok && f_ok {
        Ok(())
    } else {
        Err(Failed.into())
    }
}

fn print_run_header(preset: &str, task: &SynthTask, tc: &TrainConfig) {
    kv("preset", preset);
    kv("task", task.generator);
    kv("task_seed", task.seed);
    kv("n_train", task.n_train);
    kv("steps", tc.total_steps(task.n_train));
}

fn cmd_train(ctx: &Ctx, a: &TrainArgs) -> Run {
    let (preset, mut cfg) = ctx.arch("tiny")?;
    let task = ctx.task(a)?;
    let tc = ctx.train_config(a)?;
    cfg.input_size.get_or_insert([task.size, task.size]);
    print_run_header(&preset, &task, &tc);
    let (_, h) = train(&cfg, &task, &tc)?;
    let last = h.epochs.last().expect("at least one epoch");
    kv("final_loss", last.loss);
    kv("train_acc", last.train_acc);
    kv("val_acc", last.val_acc);
    let dir = ctx.out_dir()?;
    write(&dir.join("history.csv"), &h.to_csv())?;
    write(&dir.join("steps.csv"), &h.steps_csv())?;
    if let Some(min) = ctx.file.min_train_acc {
        let ok = last.train_acc >= min;
        kv("min_train_acc", min);
        kv("target", pass(ok));
        if !ok {
            return Err(Failed.into());
        }
    }
    Ok(())
}

fn cmd_ablate(ctx: &Ctx, axis: &str, seeds: &[u64], a: &TrainArgs) -> Run {
    let axes: Vec<AblationAxis> = if axis == "all" {
        AblationAxis::ALL.to_vec()
    } else {
        vec![axis.parse()?]
    };
    let (preset, cfg) = ctx.arch("tiny")?;
    let task = ctx.task(a)?;
    let tc = ctx.train_config(a)?;
    print_run_header(&preset, &task, &tc);
    let threads = thread_cap();
    kv("threads", threads);
    let dir = ctx.out_dir()?;
    for ax in axes {
        let table = ablate(ax, &cfg, &task, &tc, seeds, threads)?;
        for r in &table.rows {
            println!("ablation.{}.{}={:.4}±{:.4}", ax, r.setting, r.mean, r.sd);
        }
        write(&dir.join(format!("ablation_{}.csv", ax)), &table.to_csv())?;
    }
    Ok(())
}

fn cmd_phase_map(ctx: &Ctx, stage: usize, window: usize, axis: &str, image: usize, a: &TrainArgs) -> Run {
    let axis = match axis {
        "h" | "height" => Axis::Height,
        "w" | "width" => Axis::Width,
        _ => return Err(Outcome::Usage(format!("unknown axis '{}'", axis))),
    };
    let (preset, mut cfg) = ctx.arch("tiny")?;
    let task = ctx.task(a)?;
    let tc = ctx.train_config(a)?;
    cfg.input_size.get_or_insert([task.size, task.size]);
    print_run_header(&preset, &task, &tc);
    let (model, _) = train(&cfg, &task, &tc)?;
    let (_, val) = task.generate()?;
    if image >= val.len() {
        return Err(Outcome::Usage(format!("image {} out of range ({} images)", image, val.len())));
    }
    let (x, label) = val.batch(&[image]);
    let map = phase_map(&model, &x, stage, window, axis)?;
    kv("image", image);
    kv("label", label[0]);
    kv("grid", format!("{}x{}", map.grid_h, map.grid_w));
    let dir = ctx.out_dir()?;
    let stem = format!("phase_map_s{}", stage);
    map.write(&dir, &stem)?;
    kv("wrote", dir.join(format!("{}.csv", stem)).display());
    kv("wrote", dir.join(format!("{}.pgm", stem)).display());
    Ok(())
}

fn cmd_selftest(ctx: &Ctx) -> Run {
    let mut all = true;
    for o in selftest(ctx.seed()) {
        println!("{}={} {}", o.name, pass(o.passed), o.detail);
        all &= o.passed;
    }
    kv("result", pass(all));
    if all {
        Ok(())
    } else {
        Err(Failed.into())
    }
}

fn run(cli: Cli) -> Run {
    let file = match &cli.global.config {
        Some(p) => RunConfig::from_file(p).map_err(|e| Outcome::Usage(format!("{}: {}", p.display(), e)))?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        global: cli.global,
        file,
    };
    kv("seed", ctx.seed());
    match &cli.command {
        Command::Superpose { a1, a2, t1, t2 } => cmd_superpose(*a1, *a2, *t1, *t2),
        Command::CheckGrads => cmd_check_grads(&ctx),
        Command::Count => cmd_count(&ctx),
        Command::Train(a) => cmd_train(&ctx, a),
        Command::Ablate { axis, seeds, train } => cmd_ablate(&ctx, axis, seeds, train),
        Command::PhaseMap {
            stage,
            window,
            axis,
            image,
            train,
        } => cmd_phase_map(&ctx, *stage, *window, axis, *image, train),
        Command::Selftest => cmd_selftest(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Outcome::Failed) => ExitCode::from(1),
        Err(Outcome::Usage(msg)) => {
            eprintln!("error: {}", msg);
            ExitCode::from(2)
        }
        Err(Outcome::Error(e)) => {
            eprintln!("error: {}", e);
            ExitCode::from(1)
        }
    }
}
