//! Central finite-difference checks of tape gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Something with parameters that records a scalar objective on a tape.
pub trait Objective: Clone {
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Records the objective; returns the scalar root and one `Var` per
    /// entry of `params_mut`, in the same order.
    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)>;
}

#[derive(Clone, Copy, Debug)]
pub struct CheckOptions {
    pub step: f64,
    /// Entries probed per parameter tensor, spread evenly over its elements.
    pub max_entries: usize,
    /// Absolute floor on the relative-error denominator.
    pub floor: f64,
}

impl Default for CheckOptions {
    fn default() -> Self {
        CheckOptions { step: 1e-5, max_entries: 24, floor: 1e-5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// (parameter, flat index) of the worst entry.
    pub worst: (usize, usize),
}

fn evaluate<O: Objective>(obj: &O) -> Result<f64> {
    let mut tape = Tape::new();
    let (root, _) = obj.record(&mut tape)?;
    Ok(tape.value(root).item())
}

pub fn check<O: Objective>(obj: &O, opts: CheckOptions) -> Result<GradCheck> {
    let mut tape = Tape::new();
    let (root, vars) = obj.record(&mut tape)?;
    if tape.value(root).len() != 1 {
        return Err(Error::shape("gradcheck", format!("root {:?} is not a scalar", tape.value(root).shape())));
    }
    let grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let mut out = GradCheck { max_rel_err: 0.0, checked: 0, worst: (0, 0) };
    let mut probe = obj.clone();
    for (p, a) in analytic.iter().enumerate() {
        let n = a.len();
        let stride = n.div_ceil(opts.max_entries.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let orig = probe.params_mut()[p].data()[j];
            probe.params_mut()[p].data_mut()[j] = orig + opts.step;
            let fp = evaluate(&probe)?;
            probe.params_mut()[p].data_mut()[j] = orig - opts.step;
            let fm = evaluate(&probe)?;
            probe.params_mut()[p].data_mut()[j] = orig;
            let num = (fp - fm) / (2.0 * opts.step);
            let ana = a.data()[j];
            let err = (ana - num).abs() / ana.abs().max(num.abs()).max(opts.floor);
            if !(err <= out.max_rel_err) {
                out.max_rel_err = err;
                out.worst = (p, j);
            }
            out.checked += 1;
        }
    }
    Ok(out)
}

type Build = dyn for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + Send + Sync;

/// A bare list of tensors fed to a closure.
#[derive(Clone)]
pub struct Closure {
    pub params: Vec<Tensor>,
    build: std::sync::Arc<Build>,
}

impl Closure {
    pub fn new(params: Vec<Tensor>, build: impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + Send + Sync + 'static) -> Self {
        Closure { params, build: std::sync::Arc::new(build) }
    }
}

impl Objective for Closure {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let vars: Vec<Var> = self.params.iter().map(|p| tape.param(p)).collect();
        let root = (self.build)(tape, &vars)?;
        Ok((root, vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_a_quadratic() {
        let obj = Closure::new(vec![Tensor::from_vec(vec![0.5, -1.5, 2.0])], |t, v| {
            let s = t.square(v[0])?;
            t.sum(s)
        });
        let r = check(&obj, CheckOptions::default()).unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }

    #[test]
    fn flags_a_wrong_gradient() {
        // relu at an exact kink: the one-sided analytic slope disagrees with
        // the symmetric difference.
        let obj = Closure::new(vec![Tensor::from_vec(vec![0.0])], |t, v| {
            let r = t.relu(v[0])?;
            t.sum(r)
        });
        let r = check(&obj, CheckOptions::default()).unwrap();
        assert!(r.max_rel_err > 0.4, "{r:?}");
    }
}
