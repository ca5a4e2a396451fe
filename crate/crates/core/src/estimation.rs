//! Fisher information, Cramér–Rao bounds, experiment simulation and
//! maximum-likelihood phase/angle estimation.
//!
//! Experiments use two phase-shifter settings, `s = 0` and `s = pi/2`, with
//! `N_t` windows each. Under setting `s` outcome probabilities are
//! `P(m | phi + s)`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::{DetectorModel, OutcomeCoefficients, OutcomeTable, ThresholdOutcome};
use crate::error::{Error, Result};
use crate::optimize::golden_section_min;

/// Radians to micro-arcseconds.
pub const RAD_TO_MICROARCSEC: f64 = 180.0 / PI * 3600.0 * 1e6;

/// Probabilities below this (with a derivative also below it) carry no information.
pub const NEGLIGIBLE: f64 = 1e-15;

/// Floor applied before taking logs in the likelihood.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

pub const MLE_GRID_POINTS: usize = 256;
pub const MLE_TOLERANCE: f64 = 1e-8;

/// Phase shifts applied by the two settings.
pub const SETTINGS: [f64; 2] = [0.0, FRAC_PI_2];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherContribution {
    pub outcome: ThresholdOutcome,
    pub probability: f64,
    pub derivative: f64,
    pub fisher: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FisherReport {
    pub phi: f64,
    pub fisher: f64,
    pub contributions: Vec<FisherContribution>,
    /// Outcomes with vanishing probability but non-vanishing derivative.
    pub singular: Vec<ThresholdOutcome>,
}

fn fisher_term(c: &OutcomeCoefficients, phi: f64) -> (f64, f64, Option<f64>) {
    let p = c.probability(phi);
    let dp = c.derivative(phi);
    if p < NEGLIGIBLE {
        if dp.abs() < NEGLIGIBLE {
            (p, dp, Some(0.0))
        } else {
            (p, dp, None)
        }
    } else {
        (p, dp, Some(dp * dp / p))
    }
}

/// `F(phi) = sum_m (dP/dphi)^2 / P` with a per-outcome breakdown.
pub fn fisher_information(table: &OutcomeTable, phi: f64) -> FisherReport {
    let mut contributions = Vec::with_capacity(table.entries.len());
    let mut singular = Vec::new();
    let mut fisher = 0.0;
    for (outcome, c) in &table.entries {
        let (probability, derivative, term) = fisher_term(c, phi);
        let term = term.unwrap_or_else(|| {
            singular.push(*outcome);
            0.0
        });
        fisher += term;
        contributions.push(FisherContribution {
            outcome: *outcome,
            probability,
            derivative,
            fisher: term,
        });
    }
    FisherReport {
        phi,
        fisher,
        contributions,
        singular,
    }
}

/// Scalar Fisher information without the breakdown.
pub fn fisher_value(table: &OutcomeTable, phi: f64) -> f64 {
    table
        .entries
        .values()
        .map(|c| fisher_term(c, phi).2.unwrap_or(0.0))
        .sum()
}

/// Information per window pair of the two-setting scheme: `F(phi) + F(phi + pi/2)`.
pub fn two_setting_fisher(table: &OutcomeTable, phi: f64) -> f64 {
    SETTINGS.iter().map(|s| fisher_value(table, phi + s)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AngularBound {
    pub radians: f64,
    pub microarcsec: f64,
}

impl AngularBound {
    pub fn from_radians(radians: f64) -> Self {
        Self {
            radians,
            microarcsec: radians * RAD_TO_MICROARCSEC,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.radians.is_finite()
    }
}

/// `delta theta = (lambda / 2 pi L) / sqrt(N_t F)`; zero information gives an
/// infinite bound.
pub fn crb_angular_uncertainty(
    fisher: f64,
    windows: f64,
    wavelength_m: f64,
    baseline_m: f64,
) -> Result<AngularBound> {
    if !(fisher >= 0.0) {
        return Err(Error::OutOfRange {
            name: "fisher",
            value: fisher,
            range: "[0, inf)",
        });
    }
    if !(windows >= 1.0) {
        return Err(Error::OutOfRange {
            name: "windows",
            value: windows,
            range: "[1, inf)",
        });
    }
    positive("wavelength", wavelength_m)?;
    positive("baseline", baseline_m)?;
    let scale = wavelength_m / (TAU * baseline_m);
    let radians = if fisher == 0.0 {
        f64::INFINITY
    } else {
        scale / (windows * fisher).sqrt()
    };
    Ok(AngularBound::from_radians(radians))
}

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name,
            value,
            range: "(0, inf)",
        })
    }
}

/// `phi = 2 pi L sin(theta) / lambda`.
pub fn theta_to_phi(theta: f64, wavelength_m: f64, baseline_m: f64) -> f64 {
    TAU * baseline_m * theta.sin() / wavelength_m
}

/// `theta = arcsin(lambda phi / (2 pi L))`.
pub fn phi_to_theta(phi: f64, wavelength_m: f64, baseline_m: f64) -> Result<f64> {
    let x = wavelength_m * phi / (TAU * baseline_m);
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::OutOfRange {
            name: "lambda*phi/(2 pi L)",
            value: x,
            range: "[-1, 1]",
        });
    }
    Ok(x.asin())
}

/// Reduces a phase to `[0, 2 pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Signed phase difference reduced to `[-pi, pi)`.
pub fn phase_difference(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(TAU) - PI
}

/// Outcome counts for both settings. Counts are real so that expected
/// ("pseudo") records can be represented exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    /// Windows per setting.
    pub windows: f64,
    pub seed: Option<u64>,
    pub stream: Option<u64>,
    /// `[count at s = 0, count at s = pi/2]` per outcome.
    pub counts: BTreeMap<ThresholdOutcome, [f64; 2]>,
    /// Windows that landed in the table's truncated tail, per setting.
    pub unresolved: [f64; 2],
}

impl ExperimentRecord {
    /// Expected counts `N_t P(m | phi + s)`.
    pub fn expected(table: &OutcomeTable, phi: f64, windows: f64) -> Self {
        let mut counts = BTreeMap::new();
        for (outcome, c) in &table.entries {
            let n = SETTINGS.map(|s| windows * c.probability(phi + s).max(0.0));
            counts.insert(*outcome, n);
        }
        Self {
            windows,
            seed: None,
            stream: None,
            counts,
            unresolved: [windows * table.tail_mass(); 2],
        }
    }

    pub fn setting_total(&self, setting: usize) -> f64 {
        self.counts.values().map(|c| c[setting]).sum::<f64>() + self.unresolved[setting]
    }
}

/// Multinomial draw over the table's outcomes plus an "unresolved" bucket
/// holding the truncated tail.
fn sample_setting<R: Rng>(
    table: &OutcomeTable,
    phi: f64,
    windows: u64,
    rng: &mut R,
) -> Result<(Vec<u64>, u64)> {
    let probs: Vec<f64> = table
        .entries
        .values()
        .map(|c| c.probability(phi).max(0.0))
        .collect();
    let resolved: f64 = probs.iter().sum();
    let mut mass = resolved.max(1.0);
    let mut remaining = windows;
    let mut counts = Vec::with_capacity(probs.len());
    for p in probs {
        if remaining == 0 || p == 0.0 {
            counts.push(0);
            mass -= p;
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = Binomial::new(remaining, q)
            .map_err(|e| Error::Invalid(e.to_string()))?
            .sample(rng);
        counts.push(k);
        remaining -= k;
        mass -= p;
    }
    Ok((counts, remaining))
}

fn sample_with_rng<R: Rng>(
    table: &OutcomeTable,
    phi: f64,
    windows: u64,
    rng: &mut R,
) -> Result<ExperimentRecord> {
    let mut counts: BTreeMap<ThresholdOutcome, [f64; 2]> =
        table.entries.keys().map(|o| (*o, [0.0; 2])).collect();
    let mut unresolved = [0.0; 2];
    for (i, s) in SETTINGS.iter().enumerate() {
        let (drawn, rest) = sample_setting(table, phi + s, windows, rng)?;
        for (slot, k) in counts.values_mut().zip(drawn) {
            slot[i] = k as f64;
        }
        unresolved[i] = rest as f64;
    }
    counts.retain(|_, c| c[0] > 0.0 || c[1] > 0.0);
    Ok(ExperimentRecord {
        windows: windows as f64,
        seed: None,
        stream: None,
        counts,
        unresolved,
    })
}

/// Deterministic generator for `(seed, stream)`.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Simulates `windows` windows per setting at true phase `phi`.
pub fn sample_experiment(
    table: &OutcomeTable,
    phi: f64,
    windows: u64,
    seed: u64,
    stream: u64,
) -> Result<ExperimentRecord> {
    let mut rng = trial_rng(seed, stream);
    let mut record = sample_with_rng(table, phi, windows, &mut rng)?;
    record.seed = Some(seed);
    record.stream = Some(stream);
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MleDiagnostics {
    pub grid_points: usize,
    pub evaluations: usize,
    /// Likelihood is flat in `phi` to within tolerance.
    pub degenerate: bool,
    /// Outcomes with counts whose probability hit the floor at the optimum.
    pub floored_outcomes: usize,
    pub gradient: f64,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimationResult {
    /// In `[0, 2 pi)`.
    pub phi: f64,
    pub theta: Option<f64>,
    pub log_likelihood: f64,
    pub diagnostics: MleDiagnostics,
}

/// Negative log-likelihood over the outcomes that were observed.
struct Likelihood {
    terms: Vec<(OutcomeCoefficients, [f64; 2])>,
    evaluations: usize,
}

impl Likelihood {
    fn new(record: &ExperimentRecord, table: &OutcomeTable) -> Self {
        let terms = record
            .counts
            .iter()
            .filter(|(_, n)| n[0] > 0.0 || n[1] > 0.0)
            .map(|(o, n)| (table.get(o), *n))
            .collect();
        Self {
            terms,
            evaluations: 0,
        }
    }

    fn value(&mut self, phi: f64) -> f64 {
        self.evaluations += 1;
        let mut acc = 0.0;
        for (c, n) in &self.terms {
            for (i, s) in SETTINGS.iter().enumerate() {
                if n[i] > 0.0 {
                    acc -= n[i] * c.probability(phi + s).max(PROBABILITY_FLOOR).ln();
                }
            }
        }
        acc
    }

    /// First and second derivatives; terms at the floor are skipped.
    fn derivatives(&self, phi: f64) -> (f64, f64) {
        let (mut d1, mut d2) = (0.0, 0.0);
        for (c, n) in &self.terms {
            for (i, s) in SETTINGS.iter().enumerate() {
                let x = phi + s;
                let p = c.probability(x);
                if n[i] == 0.0 || p <= PROBABILITY_FLOOR {
                    continue;
                }
                let dp = c.derivative(x);
                let (sn, cs) = x.sin_cos();
                let ddp = -c.k1 * cs - c.k2 * sn;
                d1 -= n[i] * dp / p;
                d2 += n[i] * (dp * dp / (p * p) - ddp / p);
            }
        }
        (d1, d2)
    }

    fn floored(&self, phi: f64) -> usize {
        self.terms
            .iter()
            .filter(|(c, n)| {
                SETTINGS
                    .iter()
                    .enumerate()
                    .any(|(i, s)| n[i] > 0.0 && c.probability(phi + s) <= PROBABILITY_FLOOR)
            })
            .count()
    }
}

/// Minimizes the negative log-likelihood over `[0, 2 pi)`: grid scan, golden
/// section on the best cell, then Newton polishing on the score.
pub fn mle_phase(record: &ExperimentRecord, table: &OutcomeTable) -> Result<EstimationResult> {
    let mut nll = Likelihood::new(record, table);
    let step = TAU / MLE_GRID_POINTS as f64;
    let grid: Vec<f64> = (0..MLE_GRID_POINTS)
        .map(|i| nll.value(i as f64 * step))
        .collect();
    let (mut best_i, mut best) = (0, grid[0]);
    let mut worst = grid[0];
    for (i, &v) in grid.iter().enumerate() {
        // strict comparison keeps the smaller phase on ties
        if v < best {
            best = v;
            best_i = i;
        }
        worst = worst.max(v);
    }
    let degenerate = (worst - best) <= 1e-9 * best.abs().max(1.0);
    if degenerate {
        let evaluations = nll.evaluations;
        return Ok(EstimationResult {
            phi: 0.0,
            theta: None,
            log_likelihood: -best,
            diagnostics: MleDiagnostics {
                grid_points: MLE_GRID_POINTS,
                evaluations,
                degenerate,
                floored_outcomes: nll.floored(0.0),
                gradient: 0.0,
                newton_steps: 0,
            },
        });
    }

    let center = best_i as f64 * step;
    let (lo, hi) = (center - step, center + step);
    let (mut phi, mut value) = golden_section_min(|x| nll.value(x), lo, hi, MLE_TOLERANCE)?;

    // The value-based search stalls near sqrt(machine epsilon); polish on the
    // score, accepting Newton steps only while they shrink its magnitude.
    let mut newton_steps = 0;
    let (mut d1, mut d2) = nll.derivatives(phi);
    for _ in 0..20 {
        if !(d2 > 0.0) || d1 == 0.0 {
            break;
        }
        let next = phi - d1 / d2;
        if !(lo..=hi).contains(&next) {
            break;
        }
        let (n1, n2) = nll.derivatives(next);
        if !(n1.abs() < d1.abs()) {
            break;
        }
        newton_steps += 1;
        phi = next;
        (d1, d2) = (n1, n2);
    }
    if newton_steps > 0 {
        value = nll.value(phi);
    }
    let gradient = nll.derivatives(phi).0;
    Ok(EstimationResult {
        phi: wrap_phase(phi),
        theta: None,
        log_likelihood: -value,
        diagnostics: MleDiagnostics {
            grid_points: MLE_GRID_POINTS,
            evaluations: nll.evaluations,
            degenerate,
            floored_outcomes: nll.floored(phi),
            gradient,
            newton_steps,
        },
    })
}

/// [`mle_phase`] followed by `theta = arcsin(lambda phi / (2 pi L))`.
pub fn mle_angle(
    record: &ExperimentRecord,
    table: &OutcomeTable,
    wavelength_m: f64,
    baseline_m: f64,
) -> Result<EstimationResult> {
    let mut result = mle_phase(record, table)?;
    if !result.diagnostics.degenerate {
        result.theta = phi_to_theta(result.phi, wavelength_m, baseline_m).ok();
    }
    Ok(result)
}

/// Windows in which the auxiliary inputs are vacuum, so only starlight and dark
/// counts can click.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VacuumWindowRecord {
    pub windows: u64,
    /// Windows with at least one click.
    pub click_windows: u64,
    pub detectors: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub std_error: f64,
    /// Wald 95% interval.
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Probability that a vacuum-auxiliary window shows any click.
pub fn vacuum_click_probability(epsilon: f64, detector: &DetectorModel, detectors: usize) -> f64 {
    let silent_dark = (1.0 - detector.dark_count).powi(detectors as i32);
    1.0 - (1.0 - epsilon * detector.efficiency) * silent_dark
}

/// Draws the number of click windows among `windows` vacuum-auxiliary windows.
pub fn simulate_vacuum_windows(
    epsilon: f64,
    detector: &DetectorModel,
    detectors: usize,
    windows: u64,
    seed: u64,
) -> Result<VacuumWindowRecord> {
    let p = vacuum_click_probability(epsilon, detector, detectors);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let click_windows = Binomial::new(windows, p)
        .map_err(|e| Error::Invalid(e.to_string()))?
        .sample(&mut rng);
    Ok(VacuumWindowRecord {
        windows,
        click_windows,
        detectors,
    })
}

/// Inverts [`vacuum_click_probability`]:
/// `eps = (1 - (1 - f) / (1 - p_d)^D) / xi` for click fraction `f`.
pub fn estimate_epsilon(
    record: &VacuumWindowRecord,
    detector: &DetectorModel,
) -> Result<EpsilonEstimate> {
    if detector.efficiency <= 0.0 {
        return Err(Error::OutOfRange {
            name: "efficiency",
            value: detector.efficiency,
            range: "(0, 1]",
        });
    }
    if record.windows == 0 {
        return Err(Error::Invalid("no vacuum windows recorded".into()));
    }
    let n = record.windows as f64;
    let f = record.click_windows as f64 / n;
    let silent_dark = (1.0 - detector.dark_count).powi(record.detectors as i32);
    if silent_dark <= 0.0 {
        return Err(Error::Invalid("dark counts saturate every window".into()));
    }
    let scale = 1.0 / (silent_dark * detector.efficiency);
    let epsilon = (1.0 - (1.0 - f) / silent_dark) / detector.efficiency;
    let std_error = (f * (1.0 - f) / n).sqrt() * scale;
    Ok(EpsilonEstimate {
        epsilon,
        std_error,
        ci_low: epsilon - 1.96 * std_error,
        ci_high: epsilon + 1.96 * std_error,
    })
}

/// Monte Carlo setup for [`average_angular_error`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleTrials {
    pub wavelength_m: f64,
    pub baseline_m: f64,
    /// Windows per setting.
    pub windows: u64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AngleTrial {
    pub theta: f64,
    pub phi: f64,
    pub phi_hat: f64,
    pub theta_hat: f64,
    /// `|theta_hat - theta|` with `phi_hat` in `[0, 2 pi)`.
    pub error: f64,
    /// Same, with `phi_hat` moved to the `2 pi` branch nearest the true phase.
    pub wrapped_error: f64,
    pub crb: f64,
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanWithError {
    pub mean: f64,
    /// Standard error of the mean.
    pub se: f64,
}

impl MeanWithError {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        Self {
            mean,
            se: (var / n).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AngularErrorSummary {
    /// Mean `|theta_hat - theta|`.
    pub error: MeanWithError,
    pub wrapped_error: MeanWithError,
    /// Mean per-trial Cramér–Rao bound for the two-setting experiment.
    pub crb: f64,
    /// `error.mean / crb`.
    pub ratio: f64,
    pub rms_phase_error: f64,
    pub degenerate_trials: usize,
    pub trials: Vec<AngleTrial>,
}

/// Draws `theta` uniformly in `[0, lambda / L]` per trial, simulates both
/// settings, estimates `theta` by maximum likelihood and averages the absolute
/// error. Trial `k` uses RNG stream `k` of `seed`.
pub fn average_angular_error(
    table: &OutcomeTable,
    cfg: &AngleTrials,
) -> Result<AngularErrorSummary> {
    if cfg.trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    if cfg.windows == 0 {
        return Err(Error::Invalid("windows must be at least 1".into()));
    }
    positive("wavelength", cfg.wavelength_m)?;
    positive("baseline", cfg.baseline_m)?;
    let (lambda, l) = (cfg.wavelength_m, cfg.baseline_m);
    if lambda > l {
        return Err(Error::Invalid(
            "wavelength must not exceed the baseline".into(),
        ));
    }
    let theta_max = lambda / l;
    let to_theta = |phi: f64| phi_to_theta(phi, lambda, l);

    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<AngleTrial> {
            let mut rng = trial_rng(cfg.seed, k as u64);
            let theta = rng.random::<f64>() * theta_max;
            let phi = theta_to_phi(theta, lambda, l);
            let record = sample_with_rng(table, phi, cfg.windows, &mut rng)?;
            let est = mle_phase(&record, table)?;
            let fisher = two_setting_fisher(table, phi);
            let crb = crb_angular_uncertainty(fisher, cfg.windows as f64, lambda, l)?.radians;
            let theta_hat = to_theta(est.phi)?;
            let nearest = phi + phase_difference(est.phi, phi);
            let wrapped = to_theta(nearest.clamp(-TAU, TAU))?;
            Ok(AngleTrial {
                theta,
                phi,
                phi_hat: est.phi,
                theta_hat,
                error: (theta_hat - theta).abs(),
                wrapped_error: (wrapped - theta).abs(),
                crb,
                degenerate: est.diagnostics.degenerate,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let n = trials.len() as f64;
    let error = MeanWithError::of(trials.iter().map(|t| t.error));
    let crb = trials.iter().map(|t| t.crb).sum::<f64>() / n;
    Ok(AngularErrorSummary {
        error,
        wrapped_error: MeanWithError::of(trials.iter().map(|t| t.wrapped_error)),
        crb,
        ratio: error.mean / crb,
        rms_phase_error: (trials
            .iter()
            .map(|t| phase_difference(t.phi_hat, t.phi).powi(2))
            .sum::<f64>()
            / n)
            .sqrt(),
        degenerate_trials: trials.iter().filter(|t| t.degenerate).count(),
        trials,
    })
}
