//! Central finite-difference checks of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Gradient of the scalar `f(x)` with respect to `x`, by reverse mode.
pub fn autodiff_gradient<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let out = f(&mut tape, xv)?;
    tape.backward(out)?;
    Ok(tape
        .grad(xv)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(x.shape())))
}

fn eval_scalar<F>(f: &F, x: Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x, false);
    let out = f(&mut tape, xv)?;
    Ok(tape.value(out).data()[0])
}

/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn numeric_gradient<F>(f: &F, x: &Tensor<f64>, eps: f64) -> Result<Tensor<f64>>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += eps;
        let mut minus = x.clone();
        minus.data_mut()[i] -= eps;
        g.push((eval_scalar(f, plus)? - eval_scalar(f, minus)?) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), g)
}

/// Max over coordinates of `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> f64 {
    max_relative_error_floor(analytic, numeric, 1e-8)
}

/// Elementwise `|a - n| / max(|a|, |n|, floor)`, maximized. Below `floor` the
/// comparison is effectively absolute.
pub fn max_relative_error_floor(analytic: &Tensor<f64>, numeric: &Tensor<f64>, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Compare reverse-mode and central-difference gradients of `f` at `x`.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let a = autodiff_gradient(&f, x)?;
    let n = numeric_gradient(&f, x, eps)?;
    Ok(max_relative_error(&a, &n))
}

/// Reverse-mode and central-difference gradients for one named entry of a
/// parameter store. `f` must build the scalar objective from the store it is
/// handed (recording parameters with [`Tape::param`]) and must be
/// deterministic.
pub fn param_gradients<F>(
    store: &ParamStore<f64>,
    name: &str,
    f: F,
    eps: f64,
) -> Result<(Tensor<f64>, Tensor<f64>)>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let id = store.require(name)?;
    let mut work = store.clone();
    work.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, &work)?;
    tape.backward(out)?;
    tape.accumulate_param_grads(&mut work);
    let analytic = work.entry(id).grad.clone();

    let eval = |s: &ParamStore<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let out = f(&mut t, s)?;
        Ok(t.value(out).data()[0])
    };
    let base = store.value(id).clone();
    let mut numeric = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        let orig = base.data()[i];
        work.entry_mut(id).value.data_mut()[i] = orig + eps;
        let fp = eval(&work)?;
        work.entry_mut(id).value.data_mut()[i] = orig - eps;
        let fm = eval(&work)?;
        work.entry_mut(id).value.data_mut()[i] = orig;
        numeric.push((fp - fm) / (2.0 * eps));
    }
    let numeric = Tensor::new(base.shape().to_vec(), numeric)?;
    Ok((analytic, numeric))
}

/// [`finite_diff_check`] for one named entry of a parameter store.
pub fn param_finite_diff_check<F>(
    store: &ParamStore<f64>,
    name: &str,
    f: F,
    eps: f64,
) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let (a, n) = param_gradients(store, name, f, eps)?;
    Ok(max_relative_error(&a, &n))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sum_of_squares(t: &mut Tape<f64>, x: Var) -> Result<Var> {
        let sq = t.mul(x, x)?;
        Ok(t.sum(sq))
    }

    #[test]
    fn quadratic_is_exact() {
        let x = Tensor::from_f64(&[2], &[1.0, 2.0]).unwrap();
        let err = finite_diff_check(sum_of_squares, &x, 1e-5).unwrap();
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn planted_fault_is_reported() {
        let x = Tensor::from_f64(&[3], &[0.3, -1.2, 2.0]).unwrap();
        let doubled = autodiff_gradient(&sum_of_squares, &x)
            .unwrap()
            .map(|g| 2.0 * g);
        let numeric = numeric_gradient(&sum_of_squares, &x, 1e-5).unwrap();
        let err = max_relative_error(&doubled, &numeric);
        assert!((err - 0.5).abs() < 1e-6, "{err}");
    }
}
