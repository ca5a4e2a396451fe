use std::f64::consts::{FRAC_PI_4, TAU};

use approx::assert_abs_diff_eq;
use num_complex::Complex64;
use proptest::prelude::*;

use super::*;
use crate::fock::{
    apply_circuit, apply_loss_ensemble, make_split_state, pnr_distribution, MixedEnsemble,
};

fn heralded(mu: f64) -> SourceModel {
    SourceModel::HeraldedTmss { mu }
}

fn outcome(s: &str) -> ThresholdOutcome {
    s.parse().unwrap()
}

#[test]
fn zero_epsilon_has_no_phase_dependence() {
    let t = TableSpec::single_source(heralded(2.0), 0.3, 0.0)
        .build()
        .unwrap();
    for c in t.entries.values() {
        assert_eq!(c.k1, 0.0);
        assert_eq!(c.k2, 0.0);
    }
}

#[test]
fn single_photon_outcomes_k0_from_single_photon_branch() {
    // Without starlight, one photon in total can only come from the m = 1 event.
    let source = heralded(8.0);
    let eta = 0.1;
    let t = TableSpec::single_source(source.clone(), eta, 0.0)
        .build_virtual()
        .unwrap();
    let p1 = source.p1(eta);
    for d in [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0], [0, 0, 0, 1]] {
        let occ = OccupationVector::from_counts(&d).unwrap();
        assert_abs_diff_eq!(t.get(&occ).k0, p1 / 4.0, epsilon = 1e-12);
    }
}

#[test]
fn threshold_single_click_sums_bunched_photons() {
    // A lone click collects every event where all photons hit the same detector.
    let source = heralded(8.0);
    let eta = 0.1;
    let t = TableSpec::single_source(source.clone(), eta, 0.0)
        .build()
        .unwrap();
    let (dist, _) = TableSpec::single_source(source, eta, 0.0)
        .source_distributions()
        .unwrap();
    let expected: f64 = (1..=dist[0].m_max())
        .map(|m| dist[0].get(m) * 0.25f64.powi(m as i32))
        .sum();
    assert_abs_diff_eq!(t.get(&outcome("1000")).k0, expected, epsilon = 1e-12);
}

#[test]
fn ideal_single_photon_at_unit_transmittance_matches_direct_state() {
    // Build the pure state (e^{i phi} a1 + b1)/sqrt2 x split(|1>) and push it through
    // both beamsplitters directly.
    let epsilon = 0.3;
    let t = TableSpec::single_source(SourceModel::IdealSinglePhoton, 1.0, epsilon)
        .build_virtual()
        .unwrap();
    let circuit = LinearCircuit::beamsplitter().direct_sum(&LinearCircuit::beamsplitter());
    for k in 0..8 {
        let phi = k as f64 * TAU / 8.0;
        let split = make_split_state(1, 1).unwrap().embed(4, &[1, 3]).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut star_form = vec![Complex64::default(); 4];
        star_form[0] = Complex64::from_polar(h, phi);
        star_form[2] = Complex64::new(h, 0.0);
        let with_star = split.create(&star_form).unwrap();
        let out_star = apply_circuit(&with_star, &circuit).unwrap().pnr();
        let out_none = apply_circuit(&split, &circuit).unwrap().pnr();
        let mut expected: BTreeMap<OccupationVector, f64> = BTreeMap::new();
        for (occ, p) in &out_star.probabilities {
            *expected.entry(occ.clone()).or_default() += epsilon * p;
        }
        for (occ, p) in &out_none.probabilities {
            *expected.entry(occ.clone()).or_default() += (1.0 - epsilon) * p;
        }
        for (occ, p) in &expected {
            assert_abs_diff_eq!(t.probability(occ, phi), *p, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(t.total(phi), 1.0, epsilon = 1e-12);
    }
}

#[test]
fn virtual_table_matches_lossy_engine_pipeline() {
    // Coherent source at finite transmittance: compare with the explicit
    // split -> loss -> circuit -> PNR pipeline of the Fock engine.
    let mu = 1.0;
    let eta = 0.5;
    let m_max = 6;
    let spec = TableSpec::single_source(SourceModel::Coherent { mu }, eta, 0.0)
        .with_options(TableOptions::with_m_max(m_max, 1.0));
    let t = spec.build_virtual().unwrap();
    let circuit = LinearCircuit::beamsplitter().direct_sum(&LinearCircuit::beamsplitter());
    let dist = crate::source::coherent_pm(mu, 1.0, 40).unwrap();
    let mut ensemble = MixedEnsemble {
        mode_count: 4,
        components: Vec::new(),
        tail_mass: dist.tail_mass,
    };
    for m in 0..=12 {
        let s = make_split_state(m, m).unwrap().embed(4, &[1, 3]).unwrap();
        ensemble.components.push((dist.get(m), s));
    }
    for m in 13..=40 {
        ensemble.tail_mass += dist.get(m);
    }
    let lossy = apply_loss_ensemble(&ensemble, &[1.0, eta, 1.0, eta]).unwrap();
    let mut expected: BTreeMap<OccupationVector, f64> = BTreeMap::new();
    for (w, s) in &lossy.components {
        for (occ, p) in &apply_circuit(s, &circuit).unwrap().pnr().probabilities {
            *expected.entry(occ.clone()).or_default() += w * p;
        }
    }
    for (occ, p) in &expected {
        if occ.total() <= m_max {
            assert_abs_diff_eq!(t.probability(occ, 0.0), *p, epsilon = 1e-9);
        }
    }
    let _ = pnr_distribution(&lossy).unwrap();
}

fn check_normalized(t: &OutcomeTable, tol: f64) {
    assert!(
        t.normalization_error(32) <= tol,
        "normalization error {}",
        t.normalization_error(32)
    );
    assert!(
        t.min_probability(32) >= -1e-15,
        "negative probability {}",
        t.min_probability(32)
    );
}

#[test]
fn tables_are_normalized_and_non_negative() {
    for source in [
        SourceModel::Coherent { mu: 10.0 },
        heralded(8.0),
        SourceModel::IdealSinglePhoton,
        SourceModel::Generic {
            p_n: vec![0.1, 0.6, 0.3],
        },
    ] {
        for eta in [1.0, 0.4, 0.05] {
            let t = TableSpec::single_source(source.clone(), eta, 0.02)
                .with_options(TableOptions::with_m_max(30, 1.0))
                .build()
                .unwrap();
            check_normalized(&t, 1e-12);
        }
    }
}

#[test]
fn parity_flip_swaps_sine_sign() {
    // Swapping the a and b blocks conjugates the star phase.
    let t = TableSpec::single_source(heralded(3.0), 0.3, 0.2)
        .build_virtual()
        .unwrap();
    for (occ, c) in &t.entries {
        let counts: Vec<usize> = occ.counts().collect();
        let swapped: Vec<usize> = counts[2..].iter().chain(&counts[..2]).copied().collect();
        let other = t.get(&OccupationVector::from_counts(&swapped).unwrap());
        assert_abs_diff_eq!(c.k0, other.k0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.k1, other.k1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.k2, -other.k2, epsilon = 1e-15);
    }
}

#[test]
fn two_mode_dft_equals_beamsplitter() {
    let bs = TableSpec::single_source(heralded(2.0), 0.3, 0.02)
        .build()
        .unwrap();
    let mut dft = TableSpec::single_source(heralded(2.0), 0.3, 0.02);
    dft.circuit = CircuitKind::Dft;
    let dft = dft.build().unwrap();
    assert_eq!(bs.entries.len(), dft.entries.len());
    for (o, c) in &bs.entries {
        assert!(c.max_abs_diff(&dft.get(o)) < 1e-14);
    }
}

#[test]
fn three_mode_table_matches_closed_form() {
    let spec = TableSpec::multi_source(3, vec![heralded(1.0), heralded(1.0)], 0.5, 0.02)
        .with_options(TableOptions::with_m_max(2, 1.0));
    let engine = spec.build_virtual().unwrap();
    let report = closed_form::cross_check(&spec, &engine, 2).unwrap();
    assert!(report.passed(1e-12), "{}", report.max_deviation);
}

#[test]
fn multi_source_tables_are_normalized() {
    let spec = TableSpec::multi_source(
        3,
        vec![heralded(1.0), SourceModel::Coherent { mu: 1.0 }],
        0.3,
        0.02,
    );
    let t = spec.build().unwrap();
    check_normalized(&t, 1e-9);
    assert!(t.tail_mass() < 1e-8);
}

#[test]
fn tail_ceiling_is_enforced() {
    let spec = TableSpec::single_source(SourceModel::Coherent { mu: 10.0 }, 0.5, 0.02)
        .with_options(TableOptions::with_m_max(2, 1e-8));
    assert!(matches!(spec.build(), Err(Error::TailTooLarge { .. })));
}

#[test]
fn invalid_specs_are_rejected() {
    let mut spec = TableSpec::single_source(heralded(1.0), 0.5, 0.02);
    spec.epsilon = 1.5;
    assert!(spec.build().is_err());
    let spec = TableSpec::multi_source(3, vec![heralded(1.0)], 0.5, 0.02);
    assert!(matches!(spec.build(), Err(Error::DimensionMismatch { .. })));
    let mut spec = TableSpec::multi_source(3, vec![heralded(1.0); 2], 0.5, 0.02);
    spec.circuit = CircuitKind::Beamsplitter;
    assert!(spec.build().is_err());
}

#[test]
fn ideal_detector_is_bit_exact() {
    let spec = TableSpec::single_source(heralded(5.0), 0.2, 0.02);
    let ideal = spec.build().unwrap();
    let explicit = spec
        .clone()
        .with_detector(DetectorModel::new(1.0, 0.0).unwrap())
        .build()
        .unwrap();
    assert_eq!(ideal, explicit);
}

#[test]
fn dark_counts_on_single_click_outcome() {
    // One detector clicks from light; the other three must stay dark.
    let p_d = 0.01;
    let mut base = OutcomeTable {
        detectors: 4,
        entries: BTreeMap::new(),
        metadata: TableMetadata::default(),
    };
    base.entries
        .insert(outcome("1000"), OutcomeCoefficients::new(1.0, 0.0, 0.0));
    let dark = apply_dark_counts(&base, p_d).unwrap();
    assert_abs_diff_eq!(
        dark.get(&outcome("1000")).k0,
        (1.0 - p_d).powi(3),
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        dark.get(&outcome("1100")).k0,
        p_d * (1.0 - p_d).powi(2),
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(dark.total(0.0), 1.0, epsilon = 1e-15);

    let mut vacuum = base.clone();
    vacuum.entries.clear();
    vacuum
        .entries
        .insert(outcome("0000"), OutcomeCoefficients::new(1.0, 0.0, 0.0));
    let dark = apply_dark_counts(&vacuum, p_d).unwrap();
    assert_abs_diff_eq!(
        dark.get(&outcome("0100")).k0,
        p_d * (1.0 - p_d).powi(3),
        epsilon = 1e-15
    );
}

#[test]
fn half_efficiency_on_single_photon() {
    let table = PnrTable {
        mode_count: 2,
        entries: [(
            OccupationVector::from_counts(&[1, 0]).unwrap(),
            OutcomeCoefficients::new(1.0, 0.0, 0.0),
        )]
        .into_iter()
        .collect(),
        tail_mass: 0.0,
    };
    let thinned = aggregate_threshold(&apply_efficiency(&table, 0.5).unwrap());
    assert_abs_diff_eq!(thinned.get(&outcome("10")).k0, 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(thinned.get(&outcome("00")).k0, 0.5, epsilon = 1e-15);
}

#[test]
fn efficiency_commutes_into_transmittance_and_starlight() {
    // Uniform efficiency xi equals transmittance eta*xi and starlight eps*xi
    // when the source lives entirely downstream of the split (coherent source:
    // Poisson thinning commutes) - compare full threshold tables.
    let (mu, eta, eps, xi) = (3.0, 0.4, 0.05, 0.6);
    let spec = TableSpec::single_source(SourceModel::Coherent { mu }, eta, eps);
    let lossy = spec
        .clone()
        .with_detector(DetectorModel::new(xi, 0.0).unwrap())
        .build()
        .unwrap();
    let folded = TableSpec::single_source(SourceModel::Coherent { mu }, eta * xi, eps * xi)
        .build()
        .unwrap();
    for (o, c) in &folded.entries {
        assert!(
            c.max_abs_diff(&lossy.get(o)) < 1e-9,
            "{o}: {c:?} vs {:?}",
            lossy.get(o)
        );
    }
    check_normalized(&lossy, 1e-9);
}

#[test]
fn json_round_trip() {
    let spec = TableSpec::single_source(heralded(8.0), 0.1, 0.02)
        .with_detector(DetectorModel::new(0.8, 1e-4).unwrap());
    let t = spec.build().unwrap();
    let back = OutcomeTable::from_json(&t.to_json().unwrap()).unwrap();
    assert_eq!(t, back);
    assert_eq!(back.metadata.fingerprint, spec.fingerprint());
    assert!(OutcomeTable::from_json("{\"schema\":\"other\"}").is_err());
}

#[test]
fn fingerprint_tracks_every_field() {
    let a = TableSpec::single_source(heralded(8.0), 0.1, 0.02);
    let mut b = a.clone();
    assert_eq!(a.fingerprint(), b.fingerprint());
    b.detector.dark_count = 1e-6;
    assert_ne!(a.fingerprint(), b.fingerprint());
}

#[test]
fn outcome_bitstrings() {
    let o = outcome("1010");
    assert_eq!(o.to_string(), "1010");
    assert_eq!(o.clicks(), vec![true, false, true, false]);
    assert_eq!(outcome("YNYN"), o);
    assert!("10x".parse::<ThresholdOutcome>().is_err());
}

#[test]
fn starlight_from_angle() {
    let s = StarlightModel::from_angle(0.02, 1e-11, 1e-6, 1e4).unwrap();
    assert_abs_diff_eq!(s.phi, 0.6283185307179586, epsilon = 1e-10);
    assert!(StarlightModel::new(-0.1, 0.0).is_err());
}

static STRONG_STARLIGHT: std::sync::LazyLock<OutcomeTable> = std::sync::LazyLock::new(|| {
    TableSpec::single_source(heralded(8.0), 0.1, 0.3)
        .build()
        .unwrap()
});

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_tables_normalized(
        mu in 0.01f64..10.0,
        eta in 0.01f64..1.0,
        eps in 0.0f64..1.0,
        xi in 0.1f64..=1.0,
        p_d in 0.0f64..0.05,
        coherent in any::<bool>(),
    ) {
        let source = if coherent { SourceModel::Coherent { mu } } else { heralded(mu) };
        let t = TableSpec::single_source(source, eta, eps)
            .with_options(TableOptions::with_m_max(12, 1.0))
            .with_detector(DetectorModel::new(xi, p_d).unwrap())
            .build()
            .unwrap();
        prop_assert!(t.normalization_error(32) < 1e-9);
        prop_assert!(t.min_probability(32) >= -1e-14);
    }

    #[test]
    fn analytic_derivative_matches_finite_difference(phi in 0.0f64..TAU) {
        let h = 1e-5;
        for c in STRONG_STARLIGHT.entries.values() {
            let fd = (c.probability(phi + h) - c.probability(phi - h)) / (2.0 * h);
            let an = c.derivative(phi);
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(c.amplitude()).max(1e-12));
        }
    }
}

#[test]
fn phase_pi_over_four_is_generic() {
    let t = TableSpec::single_source(heralded(8.0), 0.1, 0.02)
        .build()
        .unwrap();
    assert!(t
        .entries
        .values()
        .any(|c| c.derivative(FRAC_PI_4).abs() > 0.0));
}
