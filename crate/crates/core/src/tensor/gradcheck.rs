//! Central-difference gradient checking against an `f64` evaluation path.
//!
//! The objective is always a scalar function of a flat `f64` vector; callers
//! wrap whatever layer or network they are testing so that the perturbed
//! evaluation runs in double precision, independent of the `f32` backward
//! pass that produced the analytic gradient.

/// Denominator floor for relative errors. Gradient entries whose analytic
/// and numeric magnitudes are both below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Coordinate index where the maximum occurred.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

/// `(f(x + eps·e_i) − f(x − eps·e_i)) / 2eps`.
pub fn central_difference<F>(f: &mut F, x: &mut [f64], index: usize, eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = x[index];
    x[index] = orig + eps;
    let plus = f(x);
    x[index] = orig - eps;
    let minus = f(x);
    x[index] = orig;
    (plus - minus) / (2.0 * eps)
}

/// Compares `analytic` with central differences of `f` at `point`.
///
/// `indices` restricts the comparison to a subset of coordinates; `None`
/// checks every coordinate.
pub fn grad_check<F>(mut f: F, point: &[f64], analytic: &[f64], eps: f64, indices: Option<&[usize]>) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert!((1e-5..=1e-2).contains(&eps), "grad_check: eps {eps} outside [1e-5, 1e-2]");
    assert_eq!(point.len(), analytic.len(), "grad_check: gradient length mismatch");
    let mut x = point.to_vec();
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..point.len()).collect();
            &all
        }
    };
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    for &i in indices {
        let numeric = central_difference(&mut f, &mut x, i, eps);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    report
}

/// Directional-derivative check: compares `analytic · direction` with the
/// central difference of `f` along `direction`. Exercises every coordinate
/// at once, which makes it affordable for large parameter vectors.
pub fn directional_check<F>(mut f: F, point: &[f64], analytic: &[f64], direction: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    assert!((1e-5..=1e-2).contains(&eps), "directional_check: eps {eps} outside [1e-5, 1e-2]");
    let shifted = |sign: f64| -> Vec<f64> {
        point.iter().zip(direction).map(|(&x, &u)| x + sign * eps * u).collect()
    };
    let numeric = (f(&shifted(1.0)) - f(&shifted(-1.0))) / (2.0 * eps);
    let predicted: f64 = analytic.iter().zip(direction).map(|(g, u)| g * u).sum();
    relative_error(predicted, numeric)
}
