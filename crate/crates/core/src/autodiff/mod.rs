//! Reverse-mode automatic differentiation on a dynamic tape.
//!
//! Nodes hold dense matrices, so an MLP layer over every hyperedge of a
//! mini-batch is one `matmul` node rather than thousands of scalar ones.
//!
//! ```
//! use dsse::autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.var(Tensor::scalar(0.0));
//! let y = x.tanh();
//! let g = tape.backward(y).unwrap();
//! assert_eq!(g.get(&x).unwrap().item(), 1.0);
//! ```

mod tape;
mod tensor;

pub use tape::{AutodiffError, Gradients, Tape, Var, ABS_SMOOTH_EPS};
pub use tensor::Tensor;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest relative error over coordinates where `f` looks smooth.
    pub max_rel_error: f64,
    /// Coordinates whose one-sided differences disagree; excluded from
    /// `max_rel_error`.
    pub non_smooth: Vec<usize>,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares `backward()` with central differences of step `eps`.
///
/// The relative error of coordinate `k` is `|a_k - n_k| / max(|a_k|, |n_k|,
/// 1e-3 * max_j |a_j|, 1e-12)`, so that coordinates much smaller than the
/// gradient's scale are judged against that scale. A coordinate whose forward
/// and backward one-sided differences differ by more than 10% is reported as
/// non-smooth instead of failing.
///
/// ```
/// use dsse::autodiff::{gradient_check, Tape, Var};
///
/// // 0.5 x'Ax with A = [[2, 1], [1, 3]]
/// fn f<'t>(t: &'t Tape, x: Var<'t>) -> Var<'t> {
///     let a = t.constant(dsse::autodiff::Tensor::new(2, 2, vec![2.0, 1.0, 1.0, 3.0]));
///     a.matvec(x).dot(x).scale(0.5)
/// }
/// let report = gradient_check(f, &[0.3, -1.2], 1e-5);
/// assert!(report.max_rel_error <= 1e-9);
/// ```
pub fn gradient_check<F>(f: F, x0: &[f64], eps: f64) -> GradCheck
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    assert!(eps > 0.0, "eps must be positive");
    let eval = |x: &[f64]| {
        let tape = Tape::new();
        let v = tape.constant(Tensor::column(x.to_vec()));
        f(&tape, v).item()
    };
    let analytic = {
        let tape = Tape::new();
        let v = tape.var(Tensor::column(x0.to_vec()));
        let out = f(&tape, v);
        let grads = tape.backward(out).expect("gradient_check needs a scalar function");
        grads.get_or_zero(&v).into_data()
    };
    let f0 = eval(x0);
    let mut numeric = Vec::with_capacity(x0.len());
    let mut non_smooth = Vec::new();
    let mut x = x0.to_vec();
    for k in 0..x0.len() {
        x[k] = x0[k] + eps;
        let fp = eval(&x);
        x[k] = x0[k] - eps;
        let fm = eval(&x);
        x[k] = x0[k];
        numeric.push((fp - fm) / (2.0 * eps));
        let (dp, dm) = ((fp - f0) / eps, (f0 - fm) / eps);
        if (dp - dm).abs() > 0.1 * dp.abs().max(dm.abs()) + 1e-6 {
            non_smooth.push(k);
        }
    }
    let scale = analytic.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let max_rel_error = (0..x0.len())
        .filter(|k| !non_smooth.contains(k))
        .map(|k| {
            let (a, n) = (analytic[k], numeric[k]);
            (a - n).abs() / a.abs().max(n.abs()).max(1e-3 * scale).max(1e-12)
        })
        .fold(0.0, f64::max);
    GradCheck { max_rel_error, non_smooth, analytic, numeric }
}
