//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any criterion fails.

use std::f64::consts::{FRAC_PI_4, TAU};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qei_core::detection::closed_form::cross_check;
use qei_core::detection::{DetectorModel, OutcomeTable, TableOptions, TableSpec};
use qei_core::estimation::{
    average_angular_error, crb_angular_uncertainty, fisher_value, mle_phase, phase_difference,
    AngleTrials, ExperimentRecord,
};
use qei_core::optimize::log_grid;
use qei_core::source::{
    coherent_pm, eta_from_baseline, heralded_tmss_pm, optimize_mu, ChannelModel, MuObjective,
    MuSearch, SourceKind, SourceModel, DEFAULT_ATTENUATION_DB_PER_KM,
};

const EPSILON: f64 = 0.02;
const WAVELENGTH_M: f64 = 1e-6;
const SEED: u64 = 20_240_917;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

/// Baselines whose per-arm transmittance spans ~0.4 down to 0.01 at 0.2 dB/km.
fn baseline_grid_km() -> Vec<f64> {
    (0..=16).map(|i| 40.0 + 10.0 * i as f64).collect()
}

fn eta_at(l_km: f64) -> f64 {
    eta_from_baseline(&ChannelModel::new(DEFAULT_ATTENUATION_DB_PER_KM, l_km).unwrap())
}

fn max_p1_source(kind: SourceKind, eta: f64) -> SourceModel {
    let opt = optimize_mu(kind, eta, MuObjective::MaxP1, &MuSearch::default()).unwrap();
    kind.with_mu(opt.mu)
}

fn single_table(source: SourceModel, eta: f64) -> OutcomeTable {
    TableSpec::single_source(source, eta, EPSILON)
        .build()
        .unwrap()
}

fn ratio_max_min(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::MIN, f64::max);
    let min = values.iter().copied().fold(f64::MAX, f64::min);
    max / min
}

fn source_normalization() -> Verdict {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &mu in &log_grid(1e-3, 1e3, 20) {
        for &eta in &log_grid(1e-4, 1.0, 20) {
            for source in [
                SourceModel::Coherent { mu },
                SourceModel::HeraldedTmss { mu },
            ] {
                let m_max = source.auto_cutoff(eta, 1e-12).unwrap();
                let d = match source {
                    SourceModel::Coherent { .. } => coherent_pm(mu, eta, m_max),
                    _ => heralded_tmss_pm(mu, eta, m_max),
                }
                .unwrap();
                worst = worst.max((d.total() + d.tail_mass - 1.0).abs());
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        worst <= 1e-10 && elapsed < Duration::from_secs(1),
        format!("max |sum - 1| = {worst:.2e} over 20x20x2 grid in {elapsed:.2?}"),
    )
}

fn oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let cases = [
        (
            "coherent",
            TableSpec::single_source(SourceModel::Coherent { mu: 1.0 }, 0.5, EPSILON),
            3,
        ),
        (
            "heralded",
            TableSpec::single_source(SourceModel::HeraldedTmss { mu: 1.0 }, 0.5, EPSILON),
            3,
        ),
        (
            "N=3 heralded",
            TableSpec::multi_source(
                3,
                vec![SourceModel::HeraldedTmss { mu: 1.0 }; 2],
                0.5,
                EPSILON,
            ),
            2,
        ),
    ];
    for (name, spec, photons) in cases {
        // Outcomes with `photons` photons only involve events with at most that many.
        let spec = spec.with_options(TableOptions::with_m_max(photons, 1.0));
        let engine = spec.build_virtual().unwrap();
        let report = cross_check(&spec, &engine, photons).unwrap();
        pass &= report.passed(1e-9);
        lines.push(format!(
            "{name} <= {photons} photons: {} outcomes, max dev {:.1e} (two-detector {:.1e})",
            report.outcomes_checked, report.max_deviation, report.max_two_click_deviation
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(30);
    verdict(pass, format!("{}; {elapsed:.2?}", lines.join("; ")))
}

fn fisher_curves() -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let grid = baseline_grid_km();
    let mut heralded = Vec::new();
    let mut coherent = Vec::new();
    let mut single = Vec::new();
    for &l in &grid {
        let eta = eta_at(l);
        heralded.push(fisher_value(
            &single_table(max_p1_source(SourceKind::Heralded, eta), eta),
            FRAC_PI_4,
        ));
        coherent.push(fisher_value(
            &single_table(max_p1_source(SourceKind::Coherent, eta), eta),
            FRAC_PI_4,
        ));
        single.push(fisher_value(
            &single_table(SourceModel::IdealSinglePhoton, eta),
            FRAC_PI_4,
        ));
    }
    (grid, heralded, coherent, single)
}

fn channel_loss_independence() -> Verdict {
    let start = Instant::now();
    let (grid, heralded, coherent, single) = fisher_curves();
    let rh = ratio_max_min(&heralded);
    let rc = ratio_max_min(&coherent);
    let drop = single[0] / single[single.len() - 1];
    let elapsed = start.elapsed();
    verdict(
        rh < 1.10 && rc < 1.10 && drop >= 10.0 && elapsed < Duration::from_secs(60),
        format!(
            "L {}..{} km (eta {:.3}..{:.3}): heralded max/min {rh:.3}, coherent max/min {rc:.4}, \
             single-photon drop {drop:.1}x; {elapsed:.2?}",
            grid[0],
            grid[grid.len() - 1],
            eta_at(grid[0]),
            eta_at(grid[grid.len() - 1])
        ),
    )
}

fn crossover() -> Verdict {
    let (grid, heralded, coherent, single) = fisher_curves();
    let bound = |f: &[f64]| -> Vec<f64> {
        grid.iter()
            .zip(f)
            .map(|(l, &f)| {
                crb_angular_uncertainty(f, 1e5, WAVELENGTH_M, l * 1e3)
                    .unwrap()
                    .radians
            })
            .collect()
    };
    let (dh, dc, ds) = (bound(&heralded), bound(&coherent), bound(&single));
    let decreasing = |d: &[f64]| d.windows(2).all(|w| w[1] < w[0]);
    let argmin = ds
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let interior = argmin > 0 && argmin + 1 < ds.len();
    verdict(
        interior && decreasing(&dh) && decreasing(&dc),
        format!(
            "single-photon minimum at L = {} km (interior: {interior}); heralded decreasing: {}; coherent decreasing: {}",
            grid[argmin],
            decreasing(&dh),
            decreasing(&dc)
        ),
    )
}

const MLE_BASELINE_KM: f64 = 100.0;

fn mle_summary(efficiency: f64) -> qei_core::estimation::AngularErrorSummary {
    let eta = eta_at(MLE_BASELINE_KM);
    let table = TableSpec::single_source(max_p1_source(SourceKind::Heralded, eta), eta, EPSILON)
        .with_detector(DetectorModel::new(efficiency, 0.0).unwrap())
        .build()
        .unwrap();
    average_angular_error(
        &table,
        &AngleTrials {
            wavelength_m: WAVELENGTH_M,
            baseline_m: MLE_BASELINE_KM * 1e3,
            windows: 10_000,
            trials: 200,
            seed: SEED,
        },
    )
    .unwrap()
}

fn mle_versus_bound() -> Verdict {
    let start = Instant::now();
    let s = mle_summary(1.0);
    let elapsed = start.elapsed();
    verdict(
        (0.9..=2.0).contains(&s.ratio) && elapsed < Duration::from_secs(300),
        format!(
            "L = {MLE_BASELINE_KM} km, 200 trials: mean |err| {:.3e} rad (se {:.1e}), mean CRB {:.3e} rad, \
             ratio {:.3} (branch-wrapped ratio {:.3}); {elapsed:.2?}",
            s.error.mean,
            s.error.se,
            s.crb,
            s.ratio,
            s.wrapped_error.mean / s.crb
        ),
    )
}

fn imperfect_detectors() -> Verdict {
    let start = Instant::now();
    let mut identical = true;
    for spec in [
        TableSpec::single_source(SourceModel::HeraldedTmss { mu: 8.0 }, 0.1, EPSILON),
        TableSpec::single_source(SourceModel::Coherent { mu: 2.0 }, 0.5, EPSILON),
        TableSpec::multi_source(
            3,
            vec![SourceModel::HeraldedTmss { mu: 1.0 }; 2],
            0.3,
            EPSILON,
        )
        .with_options(TableOptions::with_m_max(4, 1.0)),
    ] {
        let ideal = spec.build().unwrap();
        let reduced = spec
            .clone()
            .with_detector(DetectorModel::new(1.0, 0.0).unwrap())
            .build()
            .unwrap();
        identical &= ideal.entries == reduced.entries && ideal.tail_mass() == reduced.tail_mass();
    }
    let full = mle_summary(1.0);
    let half = mle_summary(0.5);
    let gap = half.error.mean - full.error.mean;
    let sigma = half.error.se.hypot(full.error.se);
    let elapsed = start.elapsed();
    verdict(
        identical && gap > 3.0 * sigma && elapsed < Duration::from_secs(300),
        format!(
            "xi=1,p_d=0 bit-exact: {identical}; mean |err| xi=0.5 {:.3e} vs xi=1 {:.3e} rad, gap {:.1} sigma; {elapsed:.2?}",
            half.error.mean,
            full.error.mean,
            gap / sigma
        ),
    )
}

fn multi_source_advantage() -> Verdict {
    let start = Instant::now();
    let l = baseline_grid_km().into_iter().last().unwrap();
    let eta = eta_at(l);
    let heralded = max_p1_source(SourceKind::Heralded, eta);
    let multi = TableSpec::multi_source(4, vec![heralded; 3], eta, EPSILON)
        .with_options(TableOptions::with_m_max(4, 1.0))
        .build()
        .unwrap();
    let f_multi = fisher_value(&multi, FRAC_PI_4);
    let f_coherent = fisher_value(
        &single_table(max_p1_source(SourceKind::Coherent, eta), eta),
        FRAC_PI_4,
    );
    let singles = TableSpec::multi_source(
        4,
        vec![
            SourceModel::Generic {
                p_n: vec![0.0, 1.0]
            };
            3
        ],
        eta,
        EPSILON,
    )
    .build()
    .unwrap();
    let f_singles = fisher_value(&singles, FRAC_PI_4);
    let elapsed = start.elapsed();
    verdict(
        f_multi > f_coherent && f_multi > f_singles && elapsed < Duration::from_secs(600),
        format!(
            "L = {l} km (eta {eta:.3}), phi = pi/4: 3 heralded F = {f_multi:.3e} (m_max 4, truncated mass {:.3}), \
             single coherent F = {f_coherent:.3e}, 3 ideal single photons F = {f_singles:.3e}; {elapsed:.2?}",
            multi.tail_mass()
        ),
    )
}

fn derivative_and_mle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let tables = [
        single_table(SourceModel::HeraldedTmss { mu: 8.0 }, 0.1),
        single_table(SourceModel::Coherent { mu: 3.0 }, 0.3),
        TableSpec::multi_source(3, vec![SourceModel::HeraldedTmss { mu: 2.0 }; 2], 0.2, 0.3)
            .with_options(TableOptions::with_m_max(4, 1.0))
            .build()
            .unwrap(),
    ];
    let mut worst_rel = 0.0f64;
    let h = 1e-5;
    for _ in 0..100 {
        let t = &tables[rng.random_range(0..tables.len())];
        let entries: Vec<_> = t
            .entries
            .values()
            .filter(|c| c.amplitude() > 1e-9 * c.k0)
            .collect();
        let c = entries[rng.random_range(0..entries.len())];
        let phi = rng.random::<f64>() * TAU;
        let analytic = c.derivative(phi);
        let numeric = (c.probability(phi + h) - c.probability(phi - h)) / (2.0 * h);
        worst_rel = worst_rel.max((numeric - analytic).abs() / analytic.abs());
    }
    let table = &tables[0];
    let mut worst_phase = 0.0f64;
    for _ in 0..20 {
        let phi0 = rng.random::<f64>() * TAU;
        let est = mle_phase(&ExperimentRecord::expected(table, phi0, 1e4), table).unwrap();
        worst_phase = worst_phase.max(phase_difference(est.phi, phi0).abs());
    }
    verdict(
        worst_rel < 1e-6 && worst_phase < 1e-6,
        format!("max relative derivative error {worst_rel:.2e} over 100 entries; max MLE phase error {worst_phase:.2e} rad over 20 pseudo-records"),
    )
}

type Criterion = (&'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("source normalization", source_normalization),
        ("oracle equivalence", oracle_equivalence),
        ("channel-loss independence", channel_loss_independence),
        ("crossover", crossover),
        ("MLE vs Cramér-Rao", mle_versus_bound),
        ("imperfect detectors", imperfect_detectors),
        ("multi-source advantage", multi_source_advantage),
        ("derivatives and MLE recovery", derivative_and_mle),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let v = run();
        if !v.pass {
            failed += 1;
        }
        println!(
            "criterion {} ({name}): {} - {}",
            i + 1,
            if v.pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
