//! Cosine-of-phase-difference maps between each token and its neighbours.
//!
//! For token `(i, j)` and every token `(k, l)` in the `window × window`
//! square centred on it, the map holds the channel mean of
//! `cos(θ[i,j,c] − θ[k,l,c])`. Exports:
//!
//! * CSV with header `i,j,k,l,cos_diff`, one row per in-grid pair.
//! * Binary PGM (`P5`, maxval 255) mosaic of `grid_h·window` rows by
//!   `grid_w·window` columns. Tile `(i, j)` holds the window around token
//!   `(i, j)`; value `v` maps to `round((v + 1)·127.5)`. Cells that fall
//!   outside the grid are written as 0.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{forward_vars, ModelParams, PhaseProbe};
use crate::patm::Axis;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseMap {
    pub grid_h: usize,
    pub grid_w: usize,
    pub window: usize,
    /// `[grid_h, grid_w, window, window]`, row-major; out-of-grid cells are 0.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl PhaseMap {
    fn index(&self, i: usize, j: usize, a: usize, b: usize) -> usize {
        ((i * self.grid_w + j) * self.window + a) * self.window + b
    }

    /// Value between token `(i, j)` and token `(k, l)`, if within the window.
    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> Option<f64> {
        let half = self.window / 2;
        let a = (k + half).checked_sub(i)?;
        let b = (l + half).checked_sub(j)?;
        if a >= self.window || b >= self.window || k >= self.grid_h || l >= self.grid_w {
            return None;
        }
        let idx = self.index(i, j, a, b);
        self.valid[idx].then_some(self.values[idx])
    }

    /// In-grid entries as `(i, j, k, l, value)`.
    pub fn entries(&self) -> Vec<(usize, usize, usize, usize, f64)> {
        let half = self.window as isize / 2;
        let mut out = Vec::new();
        for i in 0..self.grid_h {
            for j in 0..self.grid_w {
                for a in 0..self.window {
                    for b in 0..self.window {
                        let idx = self.index(i, j, a, b);
                        if self.valid[idx] {
                            let k = (i as isize + a as isize - half) as usize;
                            let l = (j as isize + b as isize - half) as usize;
                            out.push((i, j, k, l, self.values[idx]));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,k,l,cos_diff\n");
        for (i, j, k, l, v) in self.entries() {
            writeln!(s, "{},{},{},{},{}", i, j, k, l, v).unwrap();
        }
        s
    }

    /// Rebuilds a map from [`PhaseMap::to_csv`] output.
    pub fn from_csv(text: &str, grid_h: usize, grid_w: usize, window: usize) -> Result<Self> {
        let n = grid_h * grid_w * window * window;
        let mut map = PhaseMap {
            grid_h,
            grid_w,
            window,
            values: vec![0.0; n],
            valid: vec![false; n],
        };
        let mut lines = text.lines();
        if lines.next() != Some("i,j,k,l,cos_diff") {
            return Err(Error::Parse("missing phase map CSV header".into()));
        }
        let half = window / 2;
        for line in lines.filter(|l| !l.is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::Parse(format!("bad phase map row '{}'", line)));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
            let (i, j, k, l) = (p(f[0])?, p(f[1])?, p(f[2])?, p(f[3])?);
            let v: f64 = f[4].parse().map_err(|e: std::num::ParseFloatError| Error::Parse(e.to_string()))?;
            let outside = || Error::Parse(format!("row '{}' outside the map", line));
            let a = (k + half).checked_sub(i).ok_or_else(outside)?;
            let b = (l + half).checked_sub(j).ok_or_else(outside)?;
            if i >= grid_h || j >= grid_w || a >= window || b >= window {
                return Err(outside());
            }
            let idx = map.index(i, j, a, b);
            map.values[idx] = v;
            map.valid[idx] = true;
        }
        Ok(map)
    }

    pub fn pgm_dims(&self) -> (usize, usize) {
        (self.grid_w * self.window, self.grid_h * self.window)
    }

    /// 8-bit mosaic pixels, row-major.
    pub fn pixels(&self) -> Vec<u8> {
        let (width, height) = self.pgm_dims();
        let mut px = vec![0u8; width * height];
        for i in 0..self.grid_h {
            for j in 0..self.grid_w {
                for a in 0..self.window {
                    for b in 0..self.window {
                        let idx = self.index(i, j, a, b);
                        if self.valid[idx] {
                            let y = i * self.window + a;
                            let x = j * self.window + b;
                            px[y * width + x] = quantize(self.values[idx]);
                        }
                    }
                }
            }
        }
        px
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let (w, h) = self.pgm_dims();
        let mut out = format!("P5\n{} {}\n255\n", w, h).into_bytes();
        out.extend(self.pixels());
        out
    }

    /// Writes `<stem>.csv` and `<stem>.pgm` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.csv", stem)), self.to_csv())?;
        let mut f = std::fs::File::create(dir.join(format!("{}.pgm", stem)))?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }
}

/// `[-1, 1] → [0, 255]`
pub fn quantize(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

pub fn dequantize(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Parses a binary `P5` PGM with maxval 255 into `(width, height, pixels)`.
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::Parse(format!("not a binary PGM: magic '{}'", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(e.to_string()));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Parse(format!("unsupported maxval {}", maxval)));
    }
    // single whitespace byte separates header and raster
    let body = &bytes[pos + 1..];
    if body.len() != w * h {
        return Err(Error::Parse(format!(
            "PGM raster has {} bytes, expected {}",
            body.len(),
            w * h
        )));
    }
    Ok((w, h, body.to_vec()))
}

/// Phase map of the last block's `axis` PATM in `stage` (3 or 4) for a
/// single image `[1, h, w, c]` or `[h, w, c]`.
pub fn phase_map(
    model: &ModelParams,
    image: &Tensor,
    stage: usize,
    window: usize,
    axis: Axis,
) -> Result<PhaseMap> {
    if !model.config.phase_mode.is_dynamic() {
        return Err(Error::UnsupportedMode(format!(
            "phase maps need an input-dependent phase, model uses {}",
            model.config.phase_mode
        )));
    }
    if !(stage == 3 || stage == 4) {
        return Err(Error::Config(format!("phase maps cover stages 3 and 4, got {}", stage)));
    }
    if window % 2 == 0 {
        return Err(Error::Config(format!("window {} must be odd", window)));
    }
    let image = match image.rank() {
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(image.shape());
            image.clone().reshape(&s)?
        }
        4 if image.shape()[0] == 1 => image.clone(),
        _ => {
            return Err(Error::Dimension(format!(
                "phase map needs a single image, got {:?}",
                image.shape()
            )))
        }
    };
    let tape = Tape::new();
    let vars = model.bind(&tape, false);
    let probe = PhaseProbe {
        stage,
        block: None,
        axis,
    };
    let (_, theta) = forward_vars(model, &vars, tape.constant(image), Some(probe))?;
    let theta = theta.expect("probe captured");
    Ok(cos_difference_map(&theta, window))
}

/// Map from a `[1, h, w, d]` phase grid.
pub fn cos_difference_map(theta: &Tensor, window: usize) -> PhaseMap {
    let s = theta.shape();
    let (gh, gw, d) = (s[1], s[2], s[3]);
    let half = window as isize / 2;
    let n = gh * gw * window * window;
    let mut map = PhaseMap {
        grid_h: gh,
        grid_w: gw,
        window,
        values: vec![0.0; n],
        valid: vec![false; n],
    };
    let t = theta.data();
    for i in 0..gh {
        for j in 0..gw {
            let p = &t[(i * gw + j) * d..(i * gw + j + 1) * d];
            for a in 0..window {
                for b in 0..window {
                    let k = i as isize + a as isize - half;
                    let l = j as isize + b as isize - half;
                    if k < 0 || l < 0 || k >= gh as isize || l >= gw as isize {
                        continue;
                    }
                    let (k, l) = (k as usize, l as usize);
                    let q = &t[(k * gw + l) * d..(k * gw + l + 1) * d];
                    let v = p.iter().zip(q).map(|(x, y)| (x - y).cos()).sum::<f64>() / d as f64;
                    let idx = map.index(i, j, a, b);
                    map.values[idx] = v;
                    map.valid[idx] = true;
                }
            }
        }
    }
    map
}
