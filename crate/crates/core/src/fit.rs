//! Nonlinear and linear least squares.
//!
//! [`least_squares`] is a Levenberg-Marquardt loop with a central-difference
//! Jacobian and box bounds enforced by projection. Residual functions return
//! already-weighted residuals `(y - f) / sigma`; `absolute_sigma` selects
//! whether the covariance is used as is or rescaled by the reduced chi^2.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// relative parameter-change tolerance
    pub xtol: f64,
    /// orthogonality tolerance between residuals and Jacobian columns
    pub gtol: f64,
    /// relative cost-reduction tolerance
    pub ftol: f64,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// covariance from the given sigmas (true) or rescaled by chi^2/dof
    pub absolute_sigma: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            xtol: 1e-10,
            gtol: 1e-12,
            ftol: 1e-15,
            lower: None,
            upper: None,
            absolute_sigma: false,
        }
    }
}

impl FitOptions {
    pub fn bounded(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self {
            lower: Some(lower),
            upper: Some(upper),
            ..Self::default()
        }
    }

    pub fn with_absolute_sigma(mut self, absolute: bool) -> Self {
        self.absolute_sigma = absolute;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    /// sum of squared (weighted) residuals
    pub chi2: f64,
    pub dof: usize,
    pub iterations: usize,
    /// the normal matrix could not be inverted; sigmas are infinite
    pub singular: bool,
}

impl FitReport {
    pub fn residual_norm(&self) -> f64 {
        self.chi2.sqrt()
    }

    pub fn reduced_chi2(&self) -> f64 {
        if self.dof == 0 {
            f64::NAN
        } else {
            self.chi2 / self.dof as f64
        }
    }
}

fn cost(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn project(x: &mut [f64], lower: Option<&[f64]>, upper: Option<&[f64]>) {
    for (k, v) in x.iter_mut().enumerate() {
        if let Some(lo) = lower {
            *v = v.max(lo[k]);
        }
        if let Some(hi) = upper {
            *v = v.min(hi[k]);
        }
    }
}

fn check_residuals(r: &[f64]) -> Result<()> {
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("residual function returned a non-finite value".into()));
    }
    Ok(())
}

fn jacobian<F>(f: &F, x: &[f64], r0: &[f64], lower: Option<&[f64]>, upper: Option<&[f64]>, typical: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let m = r0.len();
    let p = x.len();
    let mut jac = DMatrix::zeros(m, p);
    let mut probe = x.to_vec();
    for k in 0..p {
        let h = 1e-6 * x[k].abs().max(typical[k]);
        let mut hi = x[k] + h;
        let mut lo = x[k] - h;
        if let Some(u) = upper {
            hi = hi.min(u[k]);
        }
        if let Some(l) = lower {
            lo = lo.max(l[k]);
        }
        probe[k] = hi;
        let rp = if hi == x[k] { r0.to_vec() } else { f(&probe)? };
        probe[k] = lo;
        let rm = if lo == x[k] { r0.to_vec() } else { f(&probe)? };
        probe[k] = x[k];
        check_residuals(&rp)?;
        check_residuals(&rm)?;
        let span = hi - lo;
        if span > 0.0 {
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / span;
            }
        }
    }
    Ok(jac)
}

/// Minimizes `sum r_i(x)^2` starting from `x0`.
pub fn least_squares<F>(f: F, x0: &[f64], options: &FitOptions) -> Result<FitReport>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let p = x0.len();
    let lower = options.lower.as_deref();
    let upper = options.upper.as_deref();
    if lower.is_some_and(|l| l.len() != p) || upper.is_some_and(|u| u.len() != p) {
        return Err(Error::Config("bound vectors must match the parameter count".into()));
    }
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let typical: Vec<f64> = x0
        .iter()
        .map(|v| if *v != 0.0 { v.abs() } else { 1e-8 })
        .collect();

    let mut r = f(&x)?;
    check_residuals(&r)?;
    let m = r.len();
    if m < p {
        return Err(Error::InsufficientData(format!(
            "{m} residuals for {p} parameters"
        )));
    }
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = c == 0.0;

    while !converged && iterations < options.max_iterations {
        iterations += 1;
        let jac = jacobian(&f, &x, &r, lower, upper, &typical)?;
        let jtj = jac.transpose() * &jac;
        let rv = DVector::from_column_slice(&r);
        let grad = jac.transpose() * &rv;
        // parameters held at a bound by a gradient pointing outward
        let active: Vec<bool> = (0..p)
            .map(|k| {
                lower.is_some_and(|l| x[k] <= l[k] && grad[k] > 0.0)
                    || upper.is_some_and(|u| x[k] >= u[k] && grad[k] < 0.0)
            })
            .collect();
        let diag: Vec<f64> = (0..p).map(|k| jtj[(k, k)]).collect();
        let diag_max = diag.iter().copied().fold(0.0, f64::max);
        // largest cosine between the residual vector and a free Jacobian column
        let rnorm = c.sqrt();
        let cosine = (0..p)
            .filter(|&k| diag[k] > 0.0 && !active[k])
            .map(|k| grad[k].abs() / (diag[k].sqrt() * rnorm))
            .fold(0.0, f64::max);
        if cosine <= options.gtol || diag_max == 0.0 {
            converged = true;
            break;
        }
        let mut reduced = jtj.clone();
        let mut rhs = -&grad;
        for k in (0..p).filter(|&k| active[k]) {
            for j in 0..p {
                reduced[(k, j)] = 0.0;
                reduced[(j, k)] = 0.0;
            }
            reduced[(k, k)] = 1.0;
            rhs[k] = 0.0;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = reduced.clone();
            for k in (0..p).filter(|&k| !active[k]) {
                a[(k, k)] += lambda * diag[k].max(1e-12 * diag_max);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&rhs)) else {
                lambda *= 10.0;
                continue;
            };
            let mut trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, lower, upper);
            let rt = match f(&trial) {
                Ok(v) if v.iter().all(|e| e.is_finite()) => v,
                _ => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let ct = cost(&rt);
            if ct <= c {
                let small_step = trial
                    .iter()
                    .zip(&x)
                    .all(|(t, o)| (t - o).abs() <= options.xtol * (o.abs() + options.xtol));
                let small_gain = c - ct <= options.ftol * c;
                x = trial;
                r = rt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                converged = small_step || small_gain || c == 0.0;
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no downhill step at any damping: stationary to working precision
            converged = true;
        }
    }
    if !converged {
        return Err(Error::fit(
            format!("no convergence after {iterations} iterations"),
            iterations,
            c.sqrt(),
        ));
    }

    let jac = jacobian(&f, &x, &r, lower, upper, &typical)?;
    let dof = m - p;
    let scale = if options.absolute_sigma || dof == 0 {
        1.0
    } else {
        c / dof as f64
    };
    let (covariance, singular) = invert_normal(&jac, scale);
    let sigmas = (0..p).map(|k| covariance[k][k].max(0.0).sqrt()).collect();
    Ok(FitReport {
        params: x,
        sigmas,
        covariance,
        chi2: c,
        dof,
        iterations,
        singular,
    })
}

/// `scale * (J^T J)^{-1}` via a column-scaled SVD.
fn invert_normal(jac: &DMatrix<f64>, scale: f64) -> (Vec<Vec<f64>>, bool) {
    let p = jac.ncols();
    let norms: Vec<f64> = (0..p).map(|k| jac.column(k).norm()).collect();
    if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return (vec![vec![f64::INFINITY; p]; p], true);
    }
    let mut scaled = jac.clone();
    for (k, n) in norms.iter().enumerate() {
        scaled.column_mut(k).scale_mut(1.0 / n);
    }
    let svd = scaled.svd(false, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if s_min <= 1e-12 * s_max {
        return (vec![vec![f64::INFINITY; p]; p], true);
    }
    let vt = svd.v_t.expect("requested V^T");
    let mut cov = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let mut acc = 0.0;
            for (k, s) in svd.singular_values.iter().enumerate() {
                acc += vt[(k, i)] * vt[(k, j)] / (s * s);
            }
            cov[i][j] = scale * acc / (norms[i] * norms[j]);
        }
    }
    (cov, false)
}

/// Result of a weighted linear least-squares fit `y ~ X b`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    pub coefficients: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub chi2: f64,
    pub dof: usize,
}

/// Solves `min sum w_i (y_i - sum_k X_ik b_k)^2` with `w_i = 1 / sigma_i^2`.
/// `rows[i]` holds the regressors of observation `i`. Without sigmas the
/// covariance is rescaled by the residual variance.
pub fn linear_least_squares(rows: &[Vec<f64>], y: &[f64], sigma: Option<&[f64]>) -> Result<LinearFit> {
    let m = y.len();
    if rows.len() != m || sigma.is_some_and(|s| s.len() != m) {
        return Err(Error::Config("design, data and sigma lengths differ".into()));
    }
    let p = rows.first().map_or(0, |r| r.len());
    if p == 0 || m < p {
        return Err(Error::InsufficientData(format!(
            "{m} observations for {p} coefficients"
        )));
    }
    if let Some(s) = sigma {
        if s.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Domain("sigmas must be positive".into()));
        }
    }
    let w = |i: usize| sigma.map_or(1.0, |s| 1.0 / s[i]);
    let a = DMatrix::from_fn(m, p, |i, k| rows[i][k] * w(i));
    let b = DVector::from_fn(m, |i, _| y[i] * w(i));
    let norms: Vec<f64> = (0..p).map(|k| a.column(k).norm()).collect();
    if norms.iter().any(|n| *n == 0.0 || !n.is_finite()) {
        return Err(Error::Numeric("design matrix has an empty column".into()));
    }
    let mut scaled = a.clone();
    for (k, n) in norms.iter().enumerate() {
        scaled.column_mut(k).scale_mut(1.0 / n);
    }
    let svd = scaled.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * s_max {
        return Err(Error::Numeric("design matrix is rank deficient".into()));
    }
    let z = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let coefficients: Vec<f64> = (0..p).map(|k| z[k] / norms[k]).collect();
    let resid = &b - &scaled * &z;
    let chi2 = resid.norm_squared();
    let dof = m - p;
    let scale = if sigma.is_some() || dof == 0 {
        1.0
    } else {
        chi2 / dof as f64
    };
    let (covariance, _) = invert_normal(&a, scale);
    let sigmas = (0..p).map(|k| covariance[k][k].max(0.0).sqrt()).collect();
    Ok(LinearFit {
        coefficients,
        sigmas,
        covariance,
        chi2,
        dof,
    })
}
