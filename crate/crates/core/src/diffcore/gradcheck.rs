use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
}

/// `|a − n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Checks every coordinate of `point`. See [`grad_check_coords`].
pub fn grad_check<F>(f: F, point: &Tensor<f64>, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&Var<f64>) -> Result<Var<f64>>,
{
    let coords: Vec<usize> = (0..point.numel()).collect();
    grad_check_coords(f, point, step, &coords)
}

/// Compares the reverse-mode gradient of the scalar function `f` at `point`
/// with `(f(x + h·e_i) − f(x − h·e_i)) / 2h` on the listed coordinates.
///
/// `f` receives a fresh leaf on a fresh tape for every evaluation and must
/// return a one-element result. Nondifferentiable points (kinks) show up as
/// large errors; that is a property of `f`, not a bug in the checker.
pub fn grad_check_coords<F>(
    f: F,
    point: &Tensor<f64>,
    step: f64,
    coords: &[usize],
) -> Result<GradCheckReport>
where
    F: Fn(&Var<f64>) -> Result<Var<f64>>,
{
    let tape = Tape::<f64>::new();
    let x = tape.param(point.clone());
    let y = f(&x)?;
    y.backward()?;
    let analytic = x
        .grad()
        .unwrap_or_else(|| Tensor::zeros(point.shape().to_vec()));

    let eval = |p: Tensor<f64>| -> Result<f64> {
        let tape = Tape::<f64>::new();
        let x = tape.constant(p);
        let y = f(&x)?;
        let v = y.value();
        if v.numel() != 1 {
            return Err(Error::Contract(format!(
                "grad_check function returned shape {:?}",
                v.shape()
            )));
        }
        Ok(v.item())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: coords.len(),
    };
    let mut probe = point.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(probe.clone())?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(probe.clone())?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
