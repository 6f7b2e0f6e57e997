//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::params::{Bound, ParamSet};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step, in `[1e-7, 1e-3]`.
    pub step: f64,
    /// Check at most this many coordinates per parameter tensor (sampled
    /// without replacement). `None` checks every coordinate.
    pub max_coords_per_param: Option<usize>,
    pub seed: u64,
    /// Used to build each tape; lets callers inject a backward fault.
    pub tape_factory: fn() -> Tape,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_coords_per_param: None,
            seed: 0,
            tape_factory: Tape::new,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub worst_coord: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn failures(&self, threshold: f64) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| p.max_rel_error > threshold)
    }
}

fn scalar_of(tape: &Tape, out: Var) -> Result<f64> {
    let v = tape.value(out);
    if v.numel() != 1 {
        return Err(Error::contract(
            "grad_check",
            format!("function must return a scalar, got shape {:?}", v.shape()),
        ));
    }
    Ok(v.item())
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// The error for one coordinate is `|analytic - numeric| / max(1, |analytic|)`;
/// the report carries the maximum per parameter tensor and overall.
pub fn grad_check<F>(f: F, params: &ParamSet, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&opts.step) {
        return Err(Error::contract(
            "grad_check",
            format!("step {} outside [1e-7, 1e-3]", opts.step),
        ));
    }
    let mut tape = (opts.tape_factory)();
    let bound = params.bind(&mut tape);
    let out = f(&mut tape, &bound)?;
    let base = scalar_of(&tape, out)?;
    if !base.is_finite() {
        return Err(Error::NonFinite {
            context: "grad_check: function value".into(),
            index: 0,
        });
    }
    let grads = tape.backward(out)?;
    let analytic = params.gradients(&bound, &grads);

    let eval = |p: &ParamSet| -> Result<f64> {
        let mut t = Tape::new();
        let b = p.bind_constant(&mut t);
        let o = f(&mut t, &b)?;
        scalar_of(&t, o)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work = params.clone();
    let mut report = GradCheckReport {
        params: Vec::with_capacity(params.len()),
        max_rel_error: 0.0,
    };
    for id in params.ids() {
        let n = params.get(id).numel();
        let coords: Vec<usize> = match opts.max_coords_per_param {
            Some(k) if k < n => sample(&mut rng, n, k).into_vec(),
            _ => (0..n).collect(),
        };
        let grad = &analytic[id.index()];
        if let Some(bad) = grad.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("grad_check: analytic gradient of parameter {} ({})", id.index(), params.name(id)),
                index: bad,
            });
        }
        let mut check = ParamCheck {
            name: params.name(id).to_string(),
            coords_checked: coords.len(),
            max_rel_error: 0.0,
            worst_coord: 0,
        };
        for &c in &coords {
            let orig = params.get(id).data()[c];
            work.get_mut(id).data_mut()[c] = orig + opts.step;
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig - opts.step;
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("grad_check: perturbed value of parameter {} ({})", id.index(), params.name(id)),
                    index: c,
                });
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = grad.data()[c];
            let err = (a - numeric).abs() / a.abs().max(1.0);
            if err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_coord = c;
            }
        }
        report.max_rel_error = report.max_rel_error.max(check.max_rel_error);
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn square_at_three() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let y = tape.mul(b.var(x), b.var(x)).unwrap();
        assert_eq!(tape.backward(y).unwrap().get(b.var(x)).unwrap().item(), 6.0);

        let r = grad_check(
            |t, b| t.mul(b.var(x), b.var(x)),
            &p,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn sum_of_softmax_has_zero_gradient() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::new(vec![4], vec![0.3, -1.2, 2.0, 0.7]).unwrap());
        let f = |t: &mut Tape, b: &Bound| {
            let s = t.softmax(b.var(x), 0)?;
            Ok(t.sum(s))
        };
        let mut tape = Tape::new();
        let b = p.bind(&mut tape);
        let out = f(&mut tape, &b).unwrap();
        let g = tape.backward(out).unwrap();
        assert!(g.get(b.var(x)).unwrap().data().iter().all(|v| v.abs() < 1e-12));
        let r = grad_check(f, &p, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }

    #[test]
    fn step_out_of_range() {
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(1.0));
        let opts = GradCheckOptions {
            step: 0.1,
            ..Default::default()
        };
        assert!(grad_check(|t, b| Ok(t.relu(b.var(x))), &p, &opts).is_err());
    }

    #[test]
    fn non_finite_names_parameter() {
        let mut p = ParamSet::new();
        p.add("ok", Tensor::scalar(1.0));
        let x = p.add("bad", Tensor::scalar(0.0));
        let err = grad_check(|t, b| Ok(t.log(b.var(x))), &p, &GradCheckOptions::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("non-finite"), "{err}");
    }

    #[test]
    fn corrupted_backward_is_detected() {
        fn faulty() -> Tape {
            Tape::with_fault(crate::autodiff::BackwardFault {
                op: "mul",
                factor: 1.5,
            })
        }
        let mut p = ParamSet::new();
        let x = p.add("x", Tensor::scalar(2.0));
        let opts = GradCheckOptions {
            tape_factory: faulty,
            ..Default::default()
        };
        let r = grad_check(|t, b| t.mul(b.var(x), b.var(x)), &p, &opts).unwrap();
        assert!(r.max_rel_error > 0.1);
    }
}
