use std::f64::consts::PI;

use proptest::prelude::*;

use ramsey_probe::analysis::{extract_phase_series, fit_fringe, fit_phase_slope, visibility, FringeFit};
use ramsey_probe::bath::{interaction_detuning, BathState};
use ramsey_probe::calibration::{fit_zeeman, release_curve};
use ramsey_probe::engine::{fringe_closed_form, RamseyIntegrand};
use ramsey_probe::phys::{light_shift, mb_pdf, quadratic_zeeman, units, A0, KB};
use ramsey_probe::quadrature::Rule;
use ramsey_probe::scattering::{ResonanceModel, ScatteringModel};

fn phases(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

fn fringe(a: f64, c: f64, phi0: f64, phis: &[f64]) -> Vec<f64> {
    phis.iter()
        .map(|p| {
            let s = ((phi0 - p) / 2.0).sin();
            a * s * s + c
        })
        .collect()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

proptest! {
    #[test]
    fn mb_pdf_is_scale_invariant(x in 0.0f64..30.0, t in 1e-8f64..1e-5, k in 0.1f64..10.0) {
        let a = mb_pdf(x * KB * t, t).unwrap() * KB * t;
        let b = mb_pdf(x * KB * k * t, k * t).unwrap() * KB * k * t;
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
    }

    #[test]
    fn quadratic_zeeman_is_even(b in -1e-3f64..1e-3) {
        prop_assert_eq!(quadratic_zeeman(b).unwrap(), quadratic_zeeman(-b).unwrap());
    }

    #[test]
    fn light_shift_is_linear(p in 0.0f64..2.0, q in 0.0f64..2.0, s in -1e4f64..1e4, k in 0.0f64..5.0) {
        let sum = light_shift(p + q, s).unwrap();
        let parts = light_shift(p, s).unwrap() + light_shift(q, s).unwrap();
        prop_assert!((sum - parts).abs() <= 1e-12 * sum.abs().max(1.0));
        let scaled = light_shift(k * p, s).unwrap();
        prop_assert!((scaled - k * light_shift(p, s).unwrap()).abs() <= 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn interaction_detuning_is_bilinear(n in 0.0f64..1e20, m in 0.0f64..1e20, da in -2000.0f64..2000.0, db in -2000.0f64..2000.0) {
        let (da, db) = (da * A0, db * A0);
        let lhs = interaction_detuning(n + m, da).unwrap();
        let rhs = interaction_detuning(n, da).unwrap() + interaction_detuning(m, da).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1e-9));
        let lhs = interaction_detuning(n, da + db).unwrap();
        let rhs = interaction_detuning(n, da).unwrap() + interaction_detuning(n, db).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1e-6));
    }

    #[test]
    fn density_is_axis_permutation_invariant(x in -1e-5f64..1e-5, y in -1e-5f64..1e-5, z in -1e-4f64..1e-4) {
        let w = [80.0, 120.0, 20.0].map(units::hz);
        let a = BathState::from_peak_density(1e19, 500e-9, w).unwrap();
        let b = BathState::from_peak_density(1e19, 500e-9, [w[2], w[0], w[1]]).unwrap();
        let na = a.density_at([x, y, z]);
        let nb = b.density_at([z, x, y]);
        prop_assert!((na - nb).abs() <= 1e-12 * na.max(1e-300));
    }

    #[test]
    fn closed_form_is_a_probability(t in 0.0f64..0.05, phi in -10.0f64..10.0, d in -1e4f64..1e4, t2 in 1e-4f64..1.0) {
        let p = fringe_closed_form(t, phi, d, t2).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn engine_population_is_periodic_and_bounded(
        n in prop::collection::vec(1e17f64..3e19, 1..4),
        e in prop::collection::vec(1e-31f64..5e-29, 1..4),
        t in 0.0f64..0.02,
        phi in 0.0f64..(2.0 * PI),
    ) {
        let w = |k: usize| vec![1.0 / k as f64; k];
        let model = ScatteringModel::Resonance(ResonanceModel::default());
        let integrand = RamseyIntegrand::new(
            &Rule { weights: w(n.len()), nodes: n },
            &Rule { weights: w(e.len()), nodes: e },
            &model,
            198.5 * units::MILLIGAUSS,
        ).unwrap();
        let p = integrand.population(t, phi);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((integrand.population(t, phi + 2.0 * PI) - p).abs() < 1e-12);
    }

    #[test]
    fn visibility_is_bounded(a in 0.0f64..1.0, c in 0.0f64..1.0) {
        prop_assume!(a + 2.0 * c > 0.0);
        let v = visibility(a, c).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn fringe_fit_scales_with_contrast(a in 0.2f64..0.9, phi0 in 0.0f64..(2.0 * PI), lambda in 0.05f64..1.0) {
        let phis = phases(12);
        let c = (1.0 - a) / 2.0;
        let base = fringe(a, c, phi0, &phis);
        let scaled: Vec<f64> = base.iter().map(|p| 0.5 + lambda * (p - 0.5)).collect();
        let f0 = fit_fringe(&phis, &base, None).unwrap();
        let f1 = fit_fringe(&phis, &scaled, None).unwrap();
        prop_assert!((f1.amplitude - lambda * f0.amplitude).abs() < 1e-8);
        prop_assert!(angle_diff(f1.phase, f0.phase) < 1e-8);
    }

    #[test]
    fn fringe_fit_is_phase_equivariant(a in 0.2f64..0.9, phi0 in 0.0f64..(2.0 * PI), shift in -PI..PI) {
        let phis = phases(12);
        let c = (1.0 - a) / 2.0;
        let f0 = fit_fringe(&phis, &fringe(a, c, phi0, &phis), None).unwrap();
        let shifted: Vec<f64> = phis.iter().map(|p| p + shift).collect();
        let f1 = fit_fringe(&shifted, &fringe(a, c, phi0, &phis), None).unwrap();
        prop_assert!(angle_diff(f1.phase, f0.phase + shift) < 1e-8);
    }

    #[test]
    fn phase_offset_leaves_slope_unchanged(delta in -2000.0f64..2000.0, offset in -3.0f64..3.0) {
        let times: Vec<f64> = (1..=20).map(|k| k as f64 * 1e-4).collect();
        let fit_at = |phase: f64| FringeFit {
            amplitude: 0.8, offset: 0.1, phase: phase.rem_euclid(2.0 * PI),
            amplitude_err: 0.0, offset_err: 0.0, phase_err: 0.01,
            amplitude_offset_cov: 0.0, residual_norm: 0.0, iterations: 0,
        };
        let a: Vec<FringeFit> = times.iter().map(|t| fit_at(delta * t)).collect();
        let b: Vec<FringeFit> = times.iter().map(|t| fit_at(delta * t + offset)).collect();
        let pa = extract_phase_series(&times, &a, 0.0).unwrap();
        let pb = extract_phase_series(&times, &b, 0.0).unwrap();
        let shift = pb.points[0].phase - pa.points[0].phase;
        for (x, y) in pa.points.iter().zip(&pb.points) {
            prop_assert!((y.phase - x.phase - shift).abs() < 1e-9);
        }
        let sa = fit_phase_slope(&pa.points, 1.0, false).unwrap();
        let sb = fit_phase_slope(&pb.points, 1.0, false).unwrap();
        prop_assert!((sa.delta - sb.delta).abs() < 1e-6 * delta.abs().max(1.0));
    }

    #[test]
    fn zeeman_fit_ignores_offset_and_sign(a_hz in 100.0f64..800.0, c in -500.0f64..500.0) {
        let a = units::hz(a_hz) / (units::GAUSS * units::GAUSS);
        let pts: Vec<(f64, f64)> = (1..=7).map(|k| {
            let b = k as f64 * 40.0 * units::MILLIGAUSS;
            (b, a * b * b)
        }).collect();
        let base = fit_zeeman(&pts).unwrap();
        let shifted: Vec<(f64, f64)> = pts.iter().map(|(b, d)| (*b, d + units::hz(c))).collect();
        let negated: Vec<(f64, f64)> = pts.iter().map(|(b, d)| (-b, *d)).collect();
        prop_assert!((fit_zeeman(&shifted).unwrap().a - base.a).abs() <= 1e-9 * a);
        prop_assert_eq!(fit_zeeman(&negated).unwrap().a, base.a);
    }

    #[test]
    fn release_curve_is_monotone(
        e in 0.0f64..20.0, de in 0.0f64..5.0,
        t in 1e-7f64..1e-5, k in 1.0f64..3.0,
    ) {
        let t_ref = 1e-6;
        let lo = release_curve(e * KB * t_ref, t).unwrap();
        let hi = release_curve((e + de) * KB * t_ref, t).unwrap();
        prop_assert!(hi >= lo);
        let hotter = release_curve(e * KB * t_ref, k * t).unwrap();
        prop_assert!(hotter <= lo);
    }
}
