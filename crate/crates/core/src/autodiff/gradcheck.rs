//! Central finite-difference gradient checking.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over all checked entries of `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)`.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub checked: usize,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tol
    }
}

/// Compares the reverse-mode gradient of a scalar function of `inputs`
/// against central differences with step `h`.
///
/// `f` builds the function on a fresh graph from the leaf handles of
/// `inputs` (in order) and returns the scalar output.
pub fn grad_check<T, F>(mut f: F, inputs: &[Tensor<T>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut eval = |xs: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars)?;
        if g.value(out).len() != 1 {
            return Err(Error::Graph("grad_check function must be scalar".into()));
        }
        Ok(g.value(out).item().as_f64())
    };

    let mut report = GradCheckReport { max_rel_err: 0.0, max_abs_err: 0.0, checked: 0, tol };
    let mut xs: Vec<Tensor<T>> = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("every input is a parameter").to_f64();
        for j in 0..xs[i].len() {
            let orig = xs[i].data()[j];
            xs[i].data_mut()[j] = T::lit(orig.as_f64() + h);
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = T::lit(orig.as_f64() - h);
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[j];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(1e-6);
            report.max_abs_err = report.max_abs_err.max(abs);
            report.max_rel_err = report.max_rel_err.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
