use std::f64::consts::PI;

use num_complex::Complex64;

use ramsey_probe::bath::{interaction_detuning, BathState};
use ramsey_probe::engine::{
    fringe_closed_form, no_bath_trace, ramsey_population, synthesize_closed_form, synthesize_fringe,
    synthesize_fringe_with_plan, CoherenceModel, NoiseModel, QuadratureOrders, RamseyIntegrand, RamseyProtocol,
    WorkPlan,
};
use ramsey_probe::phys::{units, A0, KB};
use ramsey_probe::quadrature::Rule;
use ramsey_probe::scattering::{ResonanceModel, ScatteringModel};

fn trap() -> [f64; 3] {
    [80.0, 120.0, 20.0].map(units::hz)
}

fn bath(n0_cm3: f64, t_nk: f64) -> BathState {
    BathState::from_peak_density(n0_cm3 * units::PER_CM3, t_nk * units::NANOKELVIN, trap()).unwrap()
}

fn short_protocol() -> RamseyProtocol {
    RamseyProtocol {
        times: (1..=10).map(|k| k as f64 * 0.4 * units::MILLISECOND).collect(),
        ..RamseyProtocol::default()
    }
}

#[test]
fn closed_form_limits() {
    assert_eq!(fringe_closed_form(0.0, 0.0, 1e3, 1e-3).unwrap(), 0.0);
    assert!((fringe_closed_form(0.0, PI, 1e3, 1e-3).unwrap() - 1.0).abs() < 1e-15);
    assert!((fringe_closed_form(1.0, 0.3, 1e3, 1e-3).unwrap() - 0.5).abs() < 1e-15);
    let t = 2e-3;
    let d: f64 = 700.0;
    let s = ((d * t - 0.4) / 2.0).sin();
    assert!((fringe_closed_form(t, 0.4, d, f64::INFINITY).unwrap() - s * s).abs() < 1e-15);
    assert!(fringe_closed_form(-1e-3, 0.0, 1.0, 1.0).is_err());
    assert!(fringe_closed_form(1e-3, 0.0, 1.0, 0.0).is_err());
}

#[test]
fn population_is_one_at_zero_time() {
    let b = bath(1.5e13, 850.0);
    let model = ScatteringModel::default();
    let protocol = RamseyProtocol::default();
    let p = ramsey_population(0.0, 0.0, &b, &model, &protocol, &QuadratureOrders::default()).unwrap();
    assert!((p - 1.0).abs() < 1e-15);
    assert!(ramsey_population(-1e-6, 0.0, &b, &model, &protocol, &QuadratureOrders::default()).is_err());
}

#[test]
fn constant_model_single_density_matches_closed_form() {
    let n = 1.1e19;
    let da = 1500.0 * A0 - 539.0 * A0;
    let model = ScatteringModel::Resonance(ResonanceModel::constant(539.0 * A0 + da, 539.0 * A0));
    let density = Rule { nodes: vec![n], weights: vec![1.0] };
    let energy = Rule { nodes: vec![KB * 1e-7, KB * 1e-6], weights: vec![0.3, 0.7] };
    let integrand = RamseyIntegrand::new(&density, &energy, &model, 198.5 * units::MILLIGAUSS).unwrap();
    // delta_a is excited minus ground
    let rate = interaction_detuning(n, -da).unwrap();
    for k in 0..40 {
        let t = k as f64 * 0.1 * units::MILLISECOND;
        for phi in [0.0, 1.0, 2.5] {
            let engine = integrand.population(t, PI - phi);
            let oracle = fringe_closed_form(t, phi, rate, f64::INFINITY).unwrap();
            assert!((engine - oracle).abs() < 1e-9, "t={t} phi={phi}");
        }
    }
}

#[test]
fn empty_bath_leaves_only_background() {
    let b = bath(0.0, 850.0);
    let protocol = short_protocol();
    let series = synthesize_fringe(
        &protocol,
        &b,
        &ScatteringModel::default(),
        &NoiseModel::None,
        &QuadratureOrders::default(),
    )
    .unwrap();
    let oracle = synthesize_closed_form(&protocol, protocol.background_detuning, protocol.background_t2, &NoiseModel::None)
        .unwrap();
    for (a, b) in series.populations.iter().zip(&oracle.populations) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn seeded_noise_is_reproducible_and_partition_independent() {
    let b = bath(1.2e13, 700.0);
    let model = ScatteringModel::default();
    let protocol = short_protocol();
    let orders = QuadratureOrders::default();
    let noise = NoiseModel::binomial(5);
    let run = |parts| {
        synthesize_fringe_with_plan(&protocol, &b, &model, &noise, &orders, &WorkPlan { partitions: parts }).unwrap()
    };
    let one = run(1);
    assert_eq!(one, run(1));
    assert_eq!(one, run(3));
    assert_eq!(one, run(64));
    let other = synthesize_fringe_with_plan(
        &protocol,
        &b,
        &model,
        &NoiseModel::binomial(6),
        &orders,
        &WorkPlan { partitions: 1 },
    )
    .unwrap();
    assert_ne!(one.populations, other.populations);
}

#[test]
fn no_bath_trace_examples() {
    assert!((no_bath_trace(0.0, 0.9, 0.05, 1e3, 1e-2).unwrap() - 0.05).abs() < 1e-15);
    let late = no_bath_trace(1.0, 0.9, 0.05, 1e3, 1e-2).unwrap();
    assert!((late - 0.5).abs() < 1e-12);
    let d = units::hz(-135.0);
    let t = 1.0 / 135.0 / 2.0;
    let half_period = no_bath_trace(t, 1.0, 0.0, d, f64::INFINITY).unwrap();
    assert!((half_period - 1.0).abs() < 1e-12);
    assert!(no_bath_trace(1.0, 1.0, 0.0, d, -1.0).is_err());
}

#[test]
fn contrast_is_bounded_and_decays() {
    let b = bath(1.5e13, 850.0);
    let engine = CoherenceModel::new(&b, &ScatteringModel::default(), 198.5 * units::MILLIGAUSS, &QuadratureOrders::default())
        .unwrap();
    let mut last = 1.0 + 1e-12;
    for k in 0..=30 {
        let z: Complex64 = engine.coherence(k as f64 * 0.1 * units::MILLISECOND).unwrap();
        let c = z.norm();
        assert!(c <= 1.0 + 1e-12);
        // within the refinement tolerance of monotone
        assert!(c <= last + 1e-4, "contrast rose at step {k}: {c} after {last}");
        last = c;
    }
}

#[test]
fn binomial_noise_lands_on_count_grid() {
    let trials = 40 * 3;
    let noise = NoiseModel::Binomial { atoms_per_shot: 40, repetitions: 3, seed: 9 };
    for cell in 0..200 {
        let (p, err) = noise.apply(0.37, cell).unwrap();
        let counts = p * trials as f64;
        assert!((counts - counts.round()).abs() < 1e-9);
        assert!(err.unwrap() > 0.0);
    }
    let (p, _) = noise.apply(0.0, 1).unwrap();
    assert_eq!(p, 0.0);
    let zero = NoiseModel::Binomial { atoms_per_shot: 0, repetitions: 3, seed: 9 };
    assert!(zero.apply(0.5, 0).is_err());
}
