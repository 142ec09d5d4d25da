use std::f64::consts::PI;

use statrs::function::erf::erf;

use ramsey_probe::calibration::{
    fit_bfield, fit_light_shift, fit_release_curve, fit_zeeman, rabi_lineshape, rabi_lineshape_with, release_curve,
    Lineshape, LINEAR_ZEEMAN,
};
use ramsey_probe::phys::{quadratic_zeeman_coefficient, units, KB};
use ramsey_probe::Error;

fn rabi() -> f64 {
    units::hz(15.4e3)
}

fn spectrum(omega_bg: f64, omega_mw: f64, fields_mg: impl Iterator<Item = f64>) -> Vec<(f64, f64)> {
    fields_mg
        .map(|b| {
            let b = b * units::MILLIGAUSS;
            (b, rabi_lineshape(LINEAR_ZEEMAN * b, rabi(), omega_bg, omega_mw).unwrap())
        })
        .collect()
}

#[test]
fn lineshape_examples() {
    assert_eq!(rabi_lineshape(0.0, rabi(), 0.0, 0.0).unwrap(), 1.0);
    // at D = sqrt(3) W the generalized frequency is 2 W: a full rotation
    let d = 3f64.sqrt() * rabi();
    assert!(rabi_lineshape(d, rabi(), 0.0, 0.0).unwrap().abs() < 1e-12);
    let far = rabi_lineshape(1e3 * rabi(), rabi(), 0.0, 0.0).unwrap();
    assert!(far < 1e-6);
    assert_eq!(
        rabi_lineshape(0.1 * rabi(), rabi(), 0.2 * rabi(), 0.3 * rabi()).unwrap(),
        rabi_lineshape(0.0, rabi(), 0.0, 0.0).unwrap()
    );
    let quarter = rabi_lineshape_with(Lineshape::Duration { seconds: PI / (2.0 * rabi()) }, 0.0, rabi(), 0.0, 0.0).unwrap();
    assert!((quarter - 0.5).abs() < 1e-12);
    let pi_pulse = rabi_lineshape_with(Lineshape::Duration { seconds: PI / rabi() }, 0.0, rabi(), 0.0, 0.0).unwrap();
    assert!((pi_pulse - 1.0).abs() < 1e-12);
    assert!(rabi_lineshape(0.0, 0.0, 0.0, 0.0).is_err());
    assert!(rabi_lineshape_with(Lineshape::Duration { seconds: -1.0 }, 0.0, rabi(), 0.0, 0.0).is_err());
}

#[test]
fn bfield_fit_recovers_offset() {
    let omega_mw = units::hz(0.7e6 * 0.2);
    for bg_hz in [-2500.0, 0.0, 800.0] {
        let omega_bg = units::hz(bg_hz);
        let pts = spectrum(omega_bg, omega_mw, (0..61).map(|k| 180.0 + 0.7 * k as f64));
        let fit = fit_bfield(&pts, rabi(), omega_mw).unwrap();
        assert!((fit.omega_bg - omega_bg).abs() < 1e-6 * omega_mw, "{bg_hz}");
        assert!(fit.residual_norm < 1e-8);
    }
}

#[test]
fn bfield_without_offset_sits_on_the_microwave() {
    let omega_mw = LINEAR_ZEEMAN * 198.5 * units::MILLIGAUSS;
    let pts = spectrum(0.0, omega_mw, (0..41).map(|k| 188.5 + 0.5 * k as f64));
    let fit = fit_bfield(&pts, rabi(), omega_mw).unwrap();
    assert!((fit.b_coil / units::MILLIGAUSS - 198.5).abs() < 1e-6);
}

#[test]
fn bfield_needs_a_bracketed_peak_and_enough_points() {
    let omega_mw = LINEAR_ZEEMAN * 198.5 * units::MILLIGAUSS;
    let one_side = spectrum(0.0, omega_mw, (0..20).map(|k| 200.0 + k as f64));
    assert!(matches!(fit_bfield(&one_side, rabi(), omega_mw), Err(Error::Range(_))));
    let few = spectrum(0.0, omega_mw, (0..4).map(|k| 197.0 + k as f64));
    assert!(matches!(fit_bfield(&few, rabi(), omega_mw), Err(Error::InsufficientData(_))));
}

#[test]
fn light_shift_fit() {
    let pts: Vec<(f64, f64)> = (0..5).map(|k| (0.05 * k as f64, units::hz(1104.0) * 0.05 * k as f64)).collect();
    let fit = fit_light_shift(&pts).unwrap();
    assert!((fit.fit.slope / units::hz(1104.0) - 1.0).abs() < 1e-12);
    assert!(!fit.theory_flag);

    let flat: Vec<(f64, f64)> = (0..5).map(|k| (0.05 * k as f64, 12.0)).collect();
    let fit = fit_light_shift(&flat).unwrap();
    assert!(fit.fit.slope.abs() < 1e-9);
    assert!((fit.fit.intercept - 12.0).abs() < 1e-9);
    assert!(fit.theory_flag);

    let off: Vec<(f64, f64)> = (0..5).map(|k| (0.05 * k as f64, units::hz(1200.0) * 0.05 * k as f64)).collect();
    let fit = fit_light_shift(&off).unwrap();
    assert!(fit.theory_flag);
    assert!((fit.theory_deviation - 96.0 / 1104.0).abs() < 1e-9);

    let near: Vec<(f64, f64)> = (0..5).map(|k| (0.05 * k as f64, units::hz(1083.0) * 0.05 * k as f64)).collect();
    assert!(!fit_light_shift(&near).unwrap().theory_flag);
    assert!(fit_light_shift(&[(0.1, 1.0), (0.1, 2.0)]).is_err());
}

#[test]
fn zeeman_fit() {
    let a = units::hz(427.5) / (units::GAUSS * units::GAUSS);
    let pts: Vec<(f64, f64)> = (0..9)
        .map(|k| {
            let b = (40.0 + 25.0 * k as f64) * units::MILLIGAUSS;
            (b, a * b * b - units::hz(3.0))
        })
        .collect();
    let fit = fit_zeeman(&pts).unwrap();
    assert!((fit.a / a - 1.0).abs() < 1e-9);
    assert!((fit.c - units::hz(-3.0)).abs() < 1e-6);
    assert_eq!(fit.theory, quadratic_zeeman_coefficient());
    let symmetric: Vec<(f64, f64)> = pts.iter().flat_map(|&(b, d)| [(b, d), (-b, d)]).collect();
    assert!((fit_zeeman(&symmetric).unwrap().a / a - 1.0).abs() < 1e-9);
    let degenerate = [(0.01, 1.0), (-0.01, 1.0), (0.01, 2.0)];
    assert!(matches!(fit_zeeman(&degenerate), Err(Error::Domain(_))));
}

/// `P(3/2, x) = erf(sqrt x) - 2 sqrt(x / pi) exp(-x)`
fn release_oracle(x: f64) -> f64 {
    erf(x.sqrt()) - 2.0 * (x / PI).sqrt() * (-x).exp()
}

#[test]
fn release_curve_examples() {
    let t = 1.7 * units::MICROKELVIN;
    assert_eq!(release_curve(0.0, t).unwrap(), 0.0);
    assert_eq!(release_curve(f64::INFINITY, t).unwrap(), 1.0);
    let at_kt = release_curve(KB * t, t).unwrap();
    assert!((at_kt - release_oracle(1.0)).abs() < 1e-10);
    assert!((at_kt - 0.4276).abs() < 1e-4);
    for x in [0.1, 0.5, 2.0, 5.0, 12.0] {
        assert!((release_curve(x * KB * t, t).unwrap() - release_oracle(x)).abs() < 1e-10, "x = {x}");
    }
    assert!(release_curve(-1.0, t).is_err());
    assert!(release_curve(1.0, 0.0).is_err());
}

fn release_points(t: f64, scale: f64) -> Vec<(f64, f64)> {
    (1..=12)
        .map(|k| {
            let depth = 0.5 * k as f64 * KB * t * scale;
            (depth, release_curve(depth, t).unwrap())
        })
        .collect()
}

#[test]
fn release_fit_recovers_temperature() {
    let t = 1.7 * units::MICROKELVIN;
    let fit = fit_release_curve(&release_points(t, 1.0)).unwrap();
    assert!((fit.temperature / t - 1.0).abs() < 1e-6);
    let scaled = fit_release_curve(&release_points(3.0 * t, 1.0)).unwrap();
    assert!((scaled.temperature / fit.temperature - 3.0).abs() < 1e-6);
}

#[test]
fn release_fit_rejects_saturated_data() {
    let t = 1.7 * units::MICROKELVIN;
    let cold = release_points(1e-4 * t, 1e4);
    assert!(matches!(fit_release_curve(&cold), Err(Error::UnboundedTemperature(_))));
    let hot: Vec<(f64, f64)> = (1..=5).map(|k| (k as f64 * 1e-6 * KB * t, 0.0)).collect();
    assert!(matches!(fit_release_curve(&hot), Err(Error::UnboundedTemperature(_))));
    assert!(matches!(fit_release_curve(&cold[..2]), Err(Error::InsufficientData(_))));
}
