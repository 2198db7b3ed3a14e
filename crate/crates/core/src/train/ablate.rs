//! Ablation tables over phase mode, phase estimator form and window size.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, WindowSize};
use crate::patm::PhaseMode;
use crate::train::synth::SynthTask;
use crate::train::trainer::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    /// None / Static / ChannelFC
    PhaseMode,
    /// Identity / DepthWise / ChannelFC
    Estimator,
    /// 3 / 5 / 7 / All
    Window,
}

impl AblationAxis {
    pub const ALL: [AblationAxis; 3] = [
        AblationAxis::PhaseMode,
        AblationAxis::Estimator,
        AblationAxis::Window,
    ];

    pub fn settings(self) -> Vec<Setting> {
        match self {
            AblationAxis::PhaseMode => [PhaseMode::None, PhaseMode::Static, PhaseMode::ChannelFC]
                .into_iter()
                .map(Setting::Phase)
                .collect(),
            AblationAxis::Estimator => [PhaseMode::Identity, PhaseMode::DepthWise, PhaseMode::ChannelFC]
                .into_iter()
                .map(Setting::Phase)
                .collect(),
            AblationAxis::Window => [
                WindowSize::Local(3),
                WindowSize::Local(5),
                WindowSize::Local(7),
                WindowSize::All,
            ]
            .into_iter()
            .map(Setting::Window)
            .collect(),
        }
    }
}

impl fmt::Display for AblationAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AblationAxis::PhaseMode => "phase_mode",
            AblationAxis::Estimator => "estimator",
            AblationAxis::Window => "window",
        })
    }
}

impl FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "phase_mode" | "phase" => Ok(AblationAxis::PhaseMode),
            "estimator" => Ok(AblationAxis::Estimator),
            "window" => Ok(AblationAxis::Window),
            _ => Err(Error::Parse(format!("unknown ablation axis '{}'", s))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Setting {
    Phase(PhaseMode),
    Window(WindowSize),
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Phase(m) => write!(f, "{}", m),
            Setting::Window(w) => write!(f, "{}", w),
        }
    }
}

impl Setting {
    fn apply(self, base: &ArchConfig) -> ArchConfig {
        let mut cfg = base.clone();
        match self {
            Setting::Phase(m) => cfg.phase_mode = m,
            Setting::Window(w) => cfg.window = w,
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: Setting,
    pub val_accs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation over seeds.
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// `axis,setting,seeds,mean_val_acc,sd_val_acc,val_accs` with per-seed
    /// accuracies joined by `;` in seed order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,setting,seeds,mean_val_acc,sd_val_acc,val_accs\n");
        let seeds = self
            .seeds
            .iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(";");
        for r in &self.rows {
            let accs = r
                .val_accs
                .iter()
                .map(|a| a.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writeln!(s, "{},{},{},{},{},{}", self.axis, r.setting, seeds, r.mean, r.sd, accs).unwrap();
        }
        s
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Worker cap from `WAVEMLP_THREADS` (default 1).
pub fn thread_cap() -> usize {
    std::env::var("WAVEMLP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or(1)
}

/// Trains one model per (setting, seed) and tabulates final validation
/// accuracy. The base config's input size is set to the task's image size.
/// Cells run on up to `threads` workers; results do not depend on it.
pub fn ablate(
    axis: AblationAxis,
    base: &ArchConfig,
    task: &SynthTask,
    tc: &TrainConfig,
    seeds: &[u64],
    threads: usize,
) -> Result<AblationTable> {
    if seeds.len() < 3 {
        return Err(Error::Config(format!("ablation needs at least 3 seeds, got {}", seeds.len())));
    }
    let mut base = base.clone();
    base.input_size = Some([task.size, task.size]);
    let settings = axis.settings();
    let cells: Vec<(Setting, u64)> = settings
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let run = |&(setting, seed): &(Setting, u64)| -> Result<f64> {
        let cfg = setting.apply(&base);
        let tc = TrainConfig { seed, ..tc.clone() };
        let (_, h) = train(&cfg, task, &tc)?;
        Ok(h.epochs.last().map_or(0.0, |e| e.val_acc))
    };
    let threads = threads.max(1).min(cells.len());
    let results: Vec<Result<f64>> = if threads == 1 {
        cells.iter().map(run).collect()
    } else {
        let chunk = cells.len().div_ceil(threads);
        std::thread::scope(|scope| {
            let handles: Vec<_> = cells
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(run).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("ablation worker panicked"))
                .collect()
        })
    };
    let accs = results.into_iter().collect::<Result<Vec<f64>>>()?;
    let rows = settings
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(&setting, a)| {
            let (mean, sd) = mean_sd(a);
            AblationRow {
                setting,
                val_accs: a.to_vec(),
                mean,
                sd,
            }
        })
        .collect();
    Ok(AblationTable {
        axis,
        seeds: seeds.to_vec(),
        rows,
    })
}
