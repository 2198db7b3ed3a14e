//! Toy-scale training, ablations and phase-map export.

pub mod ablate;
pub mod optim;
pub mod phase_map;
pub mod synth;
pub mod trainer;

pub use ablate::{ablate, AblationAxis, AblationTable};
pub use optim::{adamw_step, cosine_lr, AdamWConfig, AdamWState};
pub use phase_map::{phase_map, PhaseMap};
pub use synth::{Dataset, Generator, SynthTask};
pub use trainer::{train, train_model, History, TrainConfig};
