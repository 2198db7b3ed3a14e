//! Composite layers: token-mixing block, channel MLP, normalization and
//! patch-embedding stems.

use rand::Rng;

use crate::error::{Error, Result};
use crate::patm::{fan_in_uniform, patm_forward, Axis, PatmParams, PatmVars, PhaseMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;

/// Per-token channel standardization followed by a per-channel affine map.
pub fn normalize<'t>(x: Var<'t>, scale: Var<'t>, shift: Var<'t>) -> Result<Var<'t>> {
    x.layer_norm(scale, shift, NORM_EPS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub norm1_scale: Tensor,
    pub norm1_shift: Tensor,
    pub patm_h: PatmParams,
    pub patm_w: PatmParams,
    /// Direct channel-FC branch, `[d, d]`.
    pub branch_fc: Tensor,
    pub norm2_scale: Tensor,
    pub norm2_shift: Tensor,
    /// `[e·d, d]`
    pub mlp_fc1: Tensor,
    /// `[d, e·d]`
    pub mlp_fc2: Tensor,
}

/// Spatial grid handed to static phase tables.
pub type GridSize = (usize, usize);

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        expansion: usize,
        window: usize,
        mode: PhaseMode,
        static_grid: Option<GridSize>,
        rng: &mut R,
    ) -> Result<Self> {
        if expansion == 0 {
            return Err(Error::Config("expansion must be positive".into()));
        }
        let hidden = dim * expansion;
        let patm_h = PatmParams::init(dim, window, Axis::Height, mode, static_grid, rng)?;
        let patm_w = PatmParams::init(dim, window, Axis::Width, mode, static_grid, rng)?;
        Ok(BlockParams {
            norm1_scale: Tensor::full(&[dim], 1.0),
            norm1_shift: Tensor::zeros(&[dim]),
            patm_h,
            patm_w,
            branch_fc: fan_in_uniform(&[dim, dim], dim, rng),
            norm2_scale: Tensor::full(&[dim], 1.0),
            norm2_shift: Tensor::zeros(&[dim]),
            mlp_fc1: fan_in_uniform(&[hidden, dim], dim, rng),
            mlp_fc2: fan_in_uniform(&[dim, hidden], hidden, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.branch_fc.shape()[0]
    }

    pub fn expansion(&self) -> usize {
        self.mlp_fc1.shape()[0] / self.dim()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.norm1_scale, &self.norm1_shift];
        v.extend(self.patm_h.tensors());
        v.extend(self.patm_w.tensors());
        v.extend([
            &self.branch_fc,
            &self.norm2_scale,
            &self.norm2_shift,
            &self.mlp_fc1,
            &self.mlp_fc2,
        ]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.norm1_scale, &mut self.norm1_shift];
        v.extend(self.patm_h.tensors_mut());
        v.extend(self.patm_w.tensors_mut());
        v.extend([
            &mut self.branch_fc,
            &mut self.norm2_scale,
            &mut self.norm2_shift,
            &mut self.mlp_fc1,
            &mut self.mlp_fc2,
        ]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BlockVars<'t> {
        let leaf = |t: &Tensor| tape.leaf(t.clone(), trainable);
        BlockVars {
            norm1_scale: leaf(&self.norm1_scale),
            norm1_shift: leaf(&self.norm1_shift),
            patm_h: self.patm_h.bind(tape, trainable),
            patm_w: self.patm_w.bind(tape, trainable),
            branch_fc: leaf(&self.branch_fc),
            norm2_scale: leaf(&self.norm2_scale),
            norm2_shift: leaf(&self.norm2_shift),
            mlp_fc1: leaf(&self.mlp_fc1),
            mlp_fc2: leaf(&self.mlp_fc2),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BlockVars<'t> {
    pub norm1_scale: Var<'t>,
    pub norm1_shift: Var<'t>,
    pub patm_h: PatmVars<'t>,
    pub patm_w: PatmVars<'t>,
    pub branch_fc: Var<'t>,
    pub norm2_scale: Var<'t>,
    pub norm2_shift: Var<'t>,
    pub mlp_fc1: Var<'t>,
    pub mlp_fc2: Var<'t>,
}

impl<'t> BlockVars<'t> {
    /// Same order as [`BlockParams::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut v = vec![self.norm1_scale, self.norm1_shift];
        v.extend(self.patm_h.vars());
        v.extend(self.patm_w.vars());
        v.extend([
            self.branch_fc,
            self.norm2_scale,
            self.norm2_shift,
            self.mlp_fc1,
            self.mlp_fc2,
        ]);
        v
    }
}

/// `x + patm_h(n) + patm_w(n) + branch_fc·n` with `n = normalize(x)`.
pub fn token_mixing_forward<'t>(x: Var<'t>, b: &BlockVars<'t>) -> Result<Var<'t>> {
    let n = normalize(x, b.norm1_scale, b.norm1_shift)?;
    let h = patm_forward(n, &b.patm_h)?;
    let w = patm_forward(n, &b.patm_w)?;
    let c = n.linear(b.branch_fc)?;
    x.add(h.add(w)?.add(c)?)
}

/// `x + fc2·gelu(fc1·normalize(x))`
pub fn channel_mlp_forward<'t>(x: Var<'t>, b: &BlockVars<'t>) -> Result<Var<'t>> {
    let n = normalize(x, b.norm2_scale, b.norm2_shift)?;
    let hidden = n.linear(b.mlp_fc1)?.gelu()?;
    x.add(hidden.linear(b.mlp_fc2)?)
}

/// Token mixing followed by the channel MLP.
pub fn block_forward<'t>(x: Var<'t>, b: &BlockVars<'t>) -> Result<Var<'t>> {
    channel_mlp_forward(token_mixing_forward(x, b)?, b)
}

/// Non-overlapping patch flattening plus a channel projection.
#[derive(Clone, Debug, PartialEq)]
pub struct StemParams {
    pub patch: usize,
    /// `[c_out, patch²·c_in]`
    pub proj: Tensor,
}

impl StemParams {
    pub fn init<R: Rng + ?Sized>(patch: usize, c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        if patch == 0 || c_in == 0 || c_out == 0 {
            return Err(Error::Config(format!(
                "invalid stem: patch {}, c_in {}, c_out {}",
                patch, c_in, c_out
            )));
        }
        let fan_in = patch * patch * c_in;
        Ok(StemParams {
            patch,
            proj: fan_in_uniform(&[c_out, fan_in], fan_in, rng),
        })
    }

    pub fn c_in(&self) -> usize {
        self.proj.shape()[1] / (self.patch * self.patch)
    }

    pub fn c_out(&self) -> usize {
        self.proj.shape()[0]
    }

    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Var<'t> {
        tape.leaf(self.proj.clone(), trainable)
    }
}

/// `[B,H,W,c_in] -> [B,ceil(H/p),ceil(W/p),c_out]`
pub fn patch_embed<'t>(x: Var<'t>, patch: usize, proj: Var<'t>) -> Result<Var<'t>> {
    x.patchify(patch)?.linear(proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_block(b: &mut BlockParams) {
        for t in [
            &mut b.patm_h.out_fc,
            &mut b.patm_w.out_fc,
            &mut b.branch_fc,
            &mut b.mlp_fc2,
        ] {
            *t = Tensor::zeros(t.shape());
        }
    }

    #[test]
    fn zero_weights_are_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let mut b = BlockParams::init(6, 2, 3, PhaseMode::ChannelFC, None, &mut r).unwrap();
        for t in b.tensors_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let x = Tensor::randn(&[2, 3, 5, 6], &mut r);
        let tape = Tape::new();
        let vars = b.bind(&tape, false);
        let y = token_mixing_forward(tape.constant(x.clone()), &vars).unwrap();
        assert_eq!(*y.value(), x);

        let mut b = BlockParams::init(6, 2, 3, PhaseMode::ChannelFC, None, &mut r).unwrap();
        zero_block(&mut b);
        let vars = b.bind(&tape, false);
        let y = block_forward(tape.constant(x.clone()), &vars).unwrap();
        assert_eq!(*y.value(), x);
    }

    #[test]
    fn shapes_are_preserved() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let b = BlockParams::init(8, 4, 7, PhaseMode::DepthWise, None, &mut r).unwrap();
        assert_eq!(b.expansion(), 4);
        assert_eq!(b.mlp_fc1.shape(), &[32, 8]);
        for (h, w) in [(1, 1), (3, 7), (9, 2)] {
            let x = Tensor::randn(&[2, h, w, 8], &mut r);
            let tape = Tape::new();
            let y = block_forward(tape.constant(x), &b.bind(&tape, false)).unwrap();
            assert_eq!(y.shape(), vec![2, h, w, 8]);
        }
    }

    #[test]
    fn normalize_standardizes() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(&[4, 10], &mut r);
        let tape = Tape::new();
        let one = tape.constant(Tensor::full(&[10], 1.0));
        let zero = tape.constant(Tensor::zeros(&[10]));
        let y = normalize(tape.constant(x), one, zero).unwrap().value();
        for row in y.data().chunks(10) {
            let mean = row.iter().sum::<f64>() / 10.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10.0;
            assert!(mean.abs() < 1e-12);
            // eps shrinks the variance by var/(var+eps)
            assert!((var - 1.0).abs() < 1e-4);
        }
        let c = tape.constant(Tensor::full(&[1, 10], 2.5));
        let shift = tape.constant(Tensor::full(&[10], 0.3));
        let y = normalize(c, one, shift).unwrap().value();
        assert!(y.data().iter().all(|v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn patch_embed_sizes() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let stem = StemParams::init(4, 3, 64, &mut r).unwrap();
        let tape = Tape::new();
        let img = tape.constant(Tensor::zeros(&[1, 224, 224, 3]));
        let y = patch_embed(img, 4, stem.bind(&tape, false)).unwrap();
        assert_eq!(y.shape(), vec![1, 56, 56, 64]);
        let stem2 = StemParams::init(2, 64, 128, &mut r).unwrap();
        let z = patch_embed(y, 2, stem2.bind(&tape, false)).unwrap();
        assert_eq!(z.shape(), vec![1, 28, 28, 128]);
        assert_eq!((stem2.c_in(), stem2.c_out()), (64, 128));
    }

    #[test]
    fn constant_image_gives_constant_tokens() {
        let tape = Tape::new();
        let img = tape.constant(Tensor::full(&[1, 8, 8, 3], 0.7));
        let proj = tape.constant(Tensor::full(&[5, 48], 1.0 / 48.0));
        let y = patch_embed(img, 4, proj).unwrap().value();
        assert!(y.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn empty_input_rejected() {
        let tape = Tape::new();
        let img = tape.constant(Tensor::zeros(&[1, 0, 8, 3]));
        let proj = tape.constant(Tensor::zeros(&[5, 48]));
        assert!(matches!(patch_embed(img, 4, proj), Err(Error::Dimension(_))));
    }
}
