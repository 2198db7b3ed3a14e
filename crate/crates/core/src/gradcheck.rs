//! Central-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Entries whose gradients are both below this magnitude are compared on an
/// absolute scale.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Probe at most this many coordinates per input (chosen with a fixed
    /// seed). `None` probes every coordinate.
    pub max_coords: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-4,
            max_coords: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, flat coordinate) of the worst entry.
    pub worst: (usize, usize),
    pub analytic: f64,
    pub numeric: f64,
    pub coords_checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(ERROR_FLOOR)
}

fn evaluate<F>(f: &F, inputs: &[Tensor]) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&tape, &vars)?;
    scalar_of(out)
}

fn scalar_of(v: Var<'_>) -> Result<f64> {
    let value = v.value();
    if value.len() != 1 {
        return Err(Error::Contract(format!(
            "grad_check needs a scalar-valued function, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.item())
}

/// Checks the tape gradient of a scalar function of several inputs against
/// central differences.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    if !(cfg.step > 0.0) {
        return Err(Error::Contract(format!("step must be positive, got {}", cfg.step)));
    }
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&tape, &vars)?;
    scalar_of(out)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(0x9d1);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        analytic: 0.0,
        numeric: 0.0,
        coords_checked: 0,
        tol: cfg.tol,
    };
    let mut probe = inputs.to_vec();
    for (k, input) in inputs.iter().enumerate() {
        let n = input.len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < n => {
                let mut c = sample(&mut rng, n, m).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        for i in coords {
            let x0 = input.data()[i];
            probe[k].data_mut()[i] = x0 + cfg.step;
            let fp = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0 - cfg.step;
            let fm = evaluate(&f, &probe)?;
            probe[k].data_mut()[i] = x0;
            let numeric = (fp - fm) / (2.0 * cfg.step);
            let a = analytic[k].data()[i];
            let err = relative_error(a, numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err || err.is_nan() {
                report.max_rel_err = if err.is_nan() { f64::INFINITY } else { err };
                report.worst = (k, i);
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// Single-input form of [`grad_check_many`].
pub fn grad_check<F>(f: F, x: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    let cfg = GradCheckConfig {
        step,
        tol,
        max_coords: None,
    };
    grad_check_many(|tape, v| f(tape, v[0]), std::slice::from_ref(x), &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_of_squares_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::randn(&[10], &mut rng);
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let g = tape.backward(v.square().unwrap().sum_all()).unwrap();
        for (a, xi) in g.get(v).unwrap().data().iter().zip(x.data()) {
            assert!(relative_error(*a, 2.0 * xi) < 1e-10);
        }
        // central differences carry ~1e-10 roundoff at this step
        let r = grad_check(|_, x| Ok(x.square()?.sum_all()), &x, 1e-5, 1e-8).unwrap();
        assert!(r.passed(), "{:?}", r);
    }

    #[test]
    fn wrong_rule_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::randn(&[6], &mut rng);
        // forward x^2 with a backward of 3x instead of 2x
        let r = grad_check(
            |tape, x| {
                let xv = x.value();
                let rule = Box::new(move |g: &Tensor| {
                    vec![xv.map(|v| 3.0 * v).zip_map(&Tensor::full(&[6], g.item()), |a, b| a * b).unwrap()]
                });
                let y = tape.record(&[x], x.value().map(|v| v * v), rule);
                Ok(y.sum_all())
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(!r.passed());
    }

    #[test]
    fn non_scalar_output_is_contract_error() {
        let x = Tensor::zeros(&[3]);
        let r = grad_check(|_, x| x.cos(), &x, 1e-5, 1e-4);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn non_positive_step_rejected() {
        let x = Tensor::zeros(&[3]);
        let r = grad_check(|_, x| Ok(x.sum_all()), &x, 0.0, 1e-4);
        assert!(matches!(r, Err(Error::Contract(_))));
    }
}
