//! Deterministic synthetic image tasks.
//!
//! `Interference` plants a horizontal bar (channel 0) and a vertical bar
//! (channel 1) and labels the image by the direction from the first to the
//! second, so the label depends only on where the two patterns sit relative
//! to each other. `BlobPosition` labels a single blob by the quadrant it
//! lies in and serves as a control.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bar length in pixels.
const BAR: usize = 3;
const NOISE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    Interference,
    BlobPosition,
}

impl fmt::Display for Generator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Generator::Interference => "interference",
            Generator::BlobPosition => "blob-position",
        })
    }
}

impl FromStr for Generator {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interference" => Ok(Generator::Interference),
            "blob-position" | "blob" => Ok(Generator::BlobPosition),
            _ => Err(Error::Parse(format!("unknown task generator '{}'", s))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthTask {
    pub generator: Generator,
    /// Images are `size × size × 3`.
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
}

impl SynthTask {
    pub fn interference(seed: u64) -> Self {
        SynthTask {
            generator: Generator::Interference,
            size: 16,
            classes: 4,
            seed,
            n_train: 256,
            n_val: 256,
        }
    }

    pub fn blob_position(seed: u64) -> Self {
        SynthTask {
            generator: Generator::BlobPosition,
            ..Self::interference(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok_classes = match self.generator {
            Generator::Interference => matches!(self.classes, 2 | 4 | 8),
            Generator::BlobPosition => matches!(self.classes, 2 | 4),
        };
        if !ok_classes {
            return Err(Error::Config(format!(
                "{} task does not support {} classes",
                self.generator, self.classes
            )));
        }
        if self.size < 12 {
            return Err(Error::Config(format!("task images need size >= 12, got {}", self.size)));
        }
        if self.n_train == 0 {
            return Err(Error::Config("empty training split".into()));
        }
        Ok(())
    }

    /// Training and validation splits.
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let train = self.split(self.n_train, &mut rng);
        let val = self.split(self.n_val, &mut rng);
        Ok((train, val))
    }

    fn split(&self, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let s = self.size;
        let mut data = Vec::with_capacity(n * s * s * 3);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            // balanced labels
            let label = i % self.classes;
            let mut img = noise(s, rng);
            match self.generator {
                Generator::Interference => plant_pair(&mut img, s, label, rng),
                Generator::BlobPosition => plant_blob(&mut img, s, label, self.classes, rng),
            }
            data.extend_from_slice(&img);
            labels.push(label);
        }
        Dataset {
            images: Tensor::new(vec![n, s, s, 3], data).unwrap(),
            labels,
        }
    }
}

fn noise(s: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, NOISE_STD).unwrap();
    (0..s * s * 3).map(|_| normal.sample(rng)).collect()
}

fn put(img: &mut [f64], s: usize, y: usize, x: usize, c: usize, v: f64) {
    img[(y * s + x) * 3 + c] += v;
}

/// Unit direction (dy, dx) for each class.
const DIRECTIONS: [(isize, isize); 8] = [
    (0, 1),
    (0, -1),
    (1, 0),
    (-1, 0),
    (1, 1),
    (-1, -1),
    (1, -1),
    (-1, 1),
];

fn plant_pair(img: &mut [f64], s: usize, label: usize, rng: &mut ChaCha8Rng) {
    let (dy, dx) = DIRECTIONS[label];
    let dist = rng.gen_range(4..=7) as isize;
    // anchor of the horizontal bar (its left end) and of the vertical bar
    // (its top end); both bars must fit inside the image
    loop {
        let ay = rng.gen_range(0..s) as isize;
        let ax = rng.gen_range(0..=s - BAR) as isize;
        let by = ay + dy * dist - 1;
        let bx = ax + 1 + dx * dist;
        if by < 0 || by + BAR as isize > s as isize || bx < 0 || bx >= s as isize {
            continue;
        }
        for k in 0..BAR {
            put(img, s, ay as usize, ax as usize + k, 0, 1.0);
            put(img, s, by as usize + k, bx as usize, 1, 1.0);
        }
        return;
    }
}

fn plant_blob(img: &mut [f64], s: usize, label: usize, classes: usize, rng: &mut ChaCha8Rng) {
    let half = s / 2;
    let (row, col) = if classes == 2 { (rng.gen_range(0..2), label) } else { (label / 2, label % 2) };
    let cy = row * half + rng.gen_range(1..half - 1);
    let cx = col * half + rng.gen_range(1..half - 1);
    for y in cy - 1..=cy + 1 {
        for x in cx - 1..=cx + 1 {
            put(img, s, y, x, 2, 1.0);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[n, size, size, 3]`
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Images and labels at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let shape = self.images.shape();
        let per: usize = shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * per..(i + 1) * per]);
        }
        let mut bshape = shape.to_vec();
        bshape[0] = indices.len();
        (
            Tensor::new(bshape, data).unwrap(),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Index order for one epoch, fixed by `seed`.
    pub fn shuffled(&self, seed: u64) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        idx
    }
}
