//! Gauss-type quadrature rules.
//!
//! Two families cover every integral in the crate: composite Gauss-Legendre
//! on a finite interval, and generalized Gauss-Laguerre rules for weights of
//! the form `x^alpha e^{-x}` on `[0, inf)`.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes per panel of the composite rules.
pub const PANEL_NODES: usize = 16;

/// Largest order accepted by [`gauss_laguerre`]; beyond this the Christoffel
/// sums overflow `f64`.
pub const MAX_LAGUERRE_ORDER: usize = 160;

/// A set of nodes with matching weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_i w_i f(x_i)`
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    /// Rescales the weights so they sum to one.
    pub(crate) fn normalized(mut self) -> Self {
        let total: f64 = self.weights.iter().sum();
        for w in &mut self.weights {
            *w /= total;
        }
        self
    }
}

/// Gauss-Legendre rule of `n` points on `[-1, 1]`, nodes ascending.
pub fn gauss_legendre(n: usize) -> Result<Rule> {
    if n == 0 {
        return Err(Error::Config("Gauss-Legendre order must be >= 1".into()));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d.is_finite() {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(Rule { nodes, weights })
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let nf = n as f64;
    let d = nf * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Generalized Gauss-Laguerre rule for the weight `x^alpha e^{-x}`, with
/// weights normalized to sum to one (i.e. for the Gamma(alpha+1) density).
///
/// Nodes come from the eigenvalues of the Jacobi matrix, polished by Newton
/// steps on the orthonormal polynomial; weights are the Christoffel numbers.
pub fn gauss_laguerre(n: usize, alpha: f64) -> Result<Rule> {
    if !(1..=MAX_LAGUERRE_ORDER).contains(&n) {
        return Err(Error::Config(format!(
            "Gauss-Laguerre order must be in [1, {MAX_LAGUERRE_ORDER}], got {n}"
        )));
    }
    if alpha <= -1.0 {
        return Err(Error::Config("Gauss-Laguerre requires alpha > -1".into()));
    }
    let diag = |k: usize| 2.0 * k as f64 + alpha + 1.0;
    let off = |k: usize| ((k as f64) * (k as f64 + alpha)).sqrt();

    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag(i)
        } else if i + 1 == j {
            off(j)
        } else if j + 1 == i {
            off(i)
        } else {
            0.0
        }
    });
    let mut nodes: Vec<f64> = SymmetricEigen::new(jacobi).eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);

    // p_k orthonormal w.r.t. the normalized weight, so p_0 = 1.
    let eval = |x: f64| -> (f64, f64, f64) {
        let (mut pm, mut p) = (0.0, 1.0);
        let (mut dpm, mut dp) = (0.0, 0.0);
        let mut sum_sq = 1.0;
        for k in 0..n {
            let b_next = off(k + 1);
            let b_k = off(k);
            let pn = ((x - diag(k)) * p - b_k * pm) / b_next;
            let dpn = ((x - diag(k)) * dp + p - b_k * dpm) / b_next;
            pm = p;
            p = pn;
            dpm = dp;
            dp = dpn;
            if k + 1 < n {
                sum_sq += p * p;
            }
        }
        (p, dp, sum_sq)
    };

    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp, _) = eval(*x);
            if dp == 0.0 || !dp.is_finite() {
                break;
            }
            let step = p / dp;
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
        let (_, _, sum_sq) = eval(*x);
        weights.push(1.0 / sum_sq);
    }
    Ok(Rule { nodes, weights }.normalized())
}

/// Composite Gauss-Legendre rule with `order` nodes on `[a, b]`, split into
/// panels of [`PANEL_NODES`] points (a single panel for small orders).
/// Weights integrate `f(x) dx` on the interval, unnormalized.
pub fn composite_legendre(a: f64, b: f64, order: usize) -> Result<Rule> {
    if order == 0 || !(b > a) {
        return Err(Error::Config(format!(
            "composite rule needs order >= 1 and b > a (order {order}, [{a}, {b}])"
        )));
    }
    let (panels, per_panel) = if order <= PANEL_NODES {
        (1, order)
    } else {
        (order.div_ceil(PANEL_NODES), PANEL_NODES)
    };
    let base = gauss_legendre(per_panel)?;
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for k in 0..panels {
        let lo = a + width * k as f64;
        let mid = lo + 0.5 * width;
        for (x, w) in base.iter() {
            nodes.push(mid + 0.5 * width * x);
            weights.push(0.5 * width * w);
        }
    }
    Ok(Rule { nodes, weights })
}

/// Composite rule for the Maxwell (chi, three degrees of freedom) density
/// `sqrt(2/pi) s^2 e^{-s^2/2}` truncated to `[0, s_max]` and renormalized.
pub fn maxwell_speed_rule(s_max: f64, order: usize) -> Result<Rule> {
    let raw = composite_legendre(0.0, s_max, order)?;
    let weights = raw
        .iter()
        .map(|(s, w)| w * s * s * (-0.5 * s * s).exp())
        .collect();
    Ok(Rule {
        nodes: raw.nodes,
        weights,
    }
    .normalized())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(5).unwrap();
        // degree 9 is the exactness limit
        let got = rule.integrate(|x| x.powi(8) + x.powi(9) + 1.0);
        assert!((got - (2.0 / 9.0 + 2.0)).abs() < 1e-14);
        let total: f64 = rule.weights.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn legendre_single_point() {
        let rule = gauss_legendre(1).unwrap();
        assert_eq!(rule.nodes, vec![0.0]);
        assert!((rule.weights[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn laguerre_half_moments() {
        // Gamma(3/2) moments: <x> = 3/2, <x^2> = 15/4, <x^3> = 105/8
        for n in [2, 8, 32, 64, 128] {
            let rule = gauss_laguerre(n, 0.5).unwrap();
            let m0: f64 = rule.weights.iter().sum();
            assert!((m0 - 1.0).abs() < 1e-12, "n={n}");
            let m1 = rule.integrate(|x| x);
            assert!((m1 - 1.5).abs() < 1e-11, "n={n} m1={m1}");
            if n >= 2 {
                let m2 = rule.integrate(|x| x * x);
                assert!((m2 / 3.75 - 1.0).abs() < 1e-11, "n={n} m2={m2}");
            }
            assert!(rule.weights.iter().all(|&w| w > 0.0), "n={n}");
            assert!(rule.nodes.windows(2).all(|p| p[0] < p[1]), "n={n}");
        }
    }

    #[test]
    fn laguerre_rejects_bad_order() {
        assert!(gauss_laguerre(0, 0.5).is_err());
        assert!(gauss_laguerre(MAX_LAGUERRE_ORDER + 1, 0.5).is_err());
    }

    #[test]
    fn maxwell_rule_moments() {
        // chi-3: <s^2> = 3, <s^4> = 15
        let rule = maxwell_speed_rule(10.0, 128).unwrap();
        assert!((rule.integrate(|s| s * s) - 3.0).abs() < 1e-12);
        assert!((rule.integrate(|s| s.powi(4)) - 15.0).abs() < 1e-10);
    }

    #[test]
    fn composite_panels() {
        let rule = composite_legendre(0.0, 1.0, 40).unwrap();
        assert_eq!(rule.len(), 48);
        assert!((rule.integrate(|x| x.exp()) - (1f64.exp() - 1.0)).abs() < 1e-14);
    }
}
