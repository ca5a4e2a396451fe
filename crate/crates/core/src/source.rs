//! Auxiliary-source photon statistics at the telescopes.
//!
//! Every source here is phase-averaged, so the two-mode auxiliary state that
//! reaches the telescopes is a mixture `sum_m P_m |psi_m><psi_m|` of split
//! photon-number states. This module computes the weights `P_m` after a
//! symmetric channel of transmittance `eta` per arm.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::combinatorics::ln_factorial;
use crate::error::{check_probability, Error, Result};
use crate::optimize::{golden_section_min, log_grid};

/// Default fiber attenuation, dB/km.
pub const DEFAULT_ATTENUATION_DB_PER_KM: f64 = 0.2;

/// Lower bound returned when a maximum sits at `mu -> 0`.
pub const MU_MIN: f64 = 1e-4;
pub const MU_MAX: f64 = 1e4;

const GENERIC_NORMALIZATION_TOLERANCE: f64 = 1e-12;

/// What sits behind the 50:50 beamsplitter at the baseline midpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceModel {
    /// Phase-randomized coherent state with mean photon number `mu`.
    Coherent { mu: f64 },
    /// Heralded arm of a two-mode squeezed vacuum, ideal herald detector.
    HeraldedTmss { mu: f64 },
    /// Arbitrary photon-number distribution `p_n` of the source beam.
    Generic { p_n: Vec<f64> },
    /// A perfect single photon (`p_1 = 1`).
    IdealSinglePhoton,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Coherent,
    Heralded,
    SinglePhoton,
}

impl SourceKind {
    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Coherent => "coherent",
            SourceKind::Heralded => "heralded",
            SourceKind::SinglePhoton => "single-photon",
        }
    }

    pub fn has_intensity(self) -> bool {
        !matches!(self, SourceKind::SinglePhoton)
    }

    pub fn with_mu(self, mu: f64) -> SourceModel {
        match self {
            SourceKind::Coherent => SourceModel::Coherent { mu },
            SourceKind::Heralded => SourceModel::HeraldedTmss { mu },
            SourceKind::SinglePhoton => SourceModel::IdealSinglePhoton,
        }
    }
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherent" => Ok(SourceKind::Coherent),
            "heralded" | "tmss" | "heralded-tmss" => Ok(SourceKind::Heralded),
            "single-photon" | "ideal" | "ideal-single-photon" => Ok(SourceKind::SinglePhoton),
            other => Err(Error::Invalid(format!("unknown source kind `{other}`"))),
        }
    }
}

impl SourceModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SourceModel::Coherent { mu } | SourceModel::HeraldedTmss { mu } => {
                if !(*mu > 0.0 && mu.is_finite()) {
                    return Err(Error::OutOfRange {
                        name: "mu",
                        value: *mu,
                        range: "(0, inf)",
                    });
                }
                Ok(())
            }
            SourceModel::Generic { p_n } => validate_generic(p_n),
            SourceModel::IdealSinglePhoton => Ok(()),
        }
    }

    pub fn kind(&self) -> Option<SourceKind> {
        match self {
            SourceModel::Coherent { .. } => Some(SourceKind::Coherent),
            SourceModel::HeraldedTmss { .. } => Some(SourceKind::Heralded),
            SourceModel::IdealSinglePhoton => Some(SourceKind::SinglePhoton),
            SourceModel::Generic { .. } => None,
        }
    }

    pub fn mu(&self) -> Option<f64> {
        match self {
            SourceModel::Coherent { mu } | SourceModel::HeraldedTmss { mu } => Some(*mu),
            _ => None,
        }
    }

    /// Photon-number distribution at one telescope-arm pair after transmittance `eta`.
    pub fn distribution(&self, eta: f64, m_max: usize) -> Result<PhotonNumberDistribution> {
        match self {
            SourceModel::Coherent { mu } => coherent_pm(*mu, eta, m_max),
            SourceModel::HeraldedTmss { mu } => heralded_tmss_pm(*mu, eta, m_max),
            SourceModel::Generic { p_n } => generic_pm(p_n, eta, m_max),
            SourceModel::IdealSinglePhoton => generic_pm(&[0.0, 1.0], eta, m_max),
        }
    }

    /// Smallest `m_max` whose truncated tail is below `tail_target`.
    pub fn auto_cutoff(&self, eta: f64, tail_target: f64) -> Result<usize> {
        check_probability("transmittance", eta)?;
        self.validate()?;
        match self {
            SourceModel::Coherent { mu } => Ok(poisson_cutoff(eta * mu, tail_target)),
            SourceModel::HeraldedTmss { mu } => {
                let x = mu * eta;
                if x == 0.0 {
                    return Ok(0);
                }
                let r = x / (1.0 + x);
                let prefactor = (1.0 + mu) / mu;
                // tail(M) = prefactor * r^{M+1}
                let needed = (tail_target / prefactor).ln() / r.ln();
                Ok((needed.ceil() as i64 - 1).max(0) as usize)
            }
            SourceModel::Generic { p_n } => {
                let full = generic_pm(p_n, eta, p_n.len().saturating_sub(1))?;
                let mut tail = 0.0;
                let mut m = full.probabilities.len();
                while m > 0 {
                    let next = tail + full.probabilities[m - 1];
                    if next >= tail_target {
                        break;
                    }
                    tail = next;
                    m -= 1;
                }
                Ok(m.saturating_sub(1))
            }
            SourceModel::IdealSinglePhoton => Ok(if eta > 0.0 { 1 } else { 0 }),
        }
    }

    /// Closed-form single-photon weight `P_1` after transmittance `eta`.
    pub fn p1(&self, eta: f64) -> f64 {
        match self {
            SourceModel::Coherent { mu } => {
                let x = eta * mu;
                x * (-x).exp()
            }
            SourceModel::HeraldedTmss { mu } => eta * (1.0 + mu) / (1.0 + mu * eta).powi(2),
            SourceModel::Generic { p_n } => p_n
                .iter()
                .enumerate()
                .skip(1)
                .map(|(n, p)| p * n as f64 * eta * (1.0 - eta).powi(n as i32 - 1))
                .sum(),
            SourceModel::IdealSinglePhoton => eta,
        }
    }
}

fn validate_generic(p_n: &[f64]) -> Result<()> {
    if p_n.is_empty() {
        return Err(Error::Invalid("empty photon-number distribution".into()));
    }
    if let Some(&bad) = p_n.iter().find(|p| !(**p >= 0.0) || !p.is_finite()) {
        return Err(Error::OutOfRange {
            name: "p_n",
            value: bad,
            range: "[0, 1]",
        });
    }
    let total: f64 = p_n.iter().sum();
    if (total - 1.0).abs() > GENERIC_NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { total });
    }
    Ok(())
}

/// Fiber channel from the baseline midpoint to one telescope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub attenuation_db_per_km: f64,
    pub baseline_km: f64,
}

impl ChannelModel {
    pub fn new(attenuation_db_per_km: f64, baseline_km: f64) -> Result<Self> {
        if !(attenuation_db_per_km >= 0.0) {
            return Err(Error::OutOfRange {
                name: "attenuation",
                value: attenuation_db_per_km,
                range: "[0, inf)",
            });
        }
        if !(baseline_km >= 0.0) {
            return Err(Error::OutOfRange {
                name: "baseline",
                value: baseline_km,
                range: "[0, inf)",
            });
        }
        Ok(Self {
            attenuation_db_per_km,
            baseline_km,
        })
    }

    pub fn transmittance(&self) -> f64 {
        eta_from_baseline(self)
    }
}

/// Per-arm transmittance; the source sits at the midpoint so each arm is `L/2` long.
pub fn eta_from_baseline(channel: &ChannelModel) -> f64 {
    10f64.powf(-channel.attenuation_db_per_km * (channel.baseline_km / 2.0) / 10.0)
}

/// `P_m` for `m = 0..=m_max`, with the mass beyond `m_max` kept in `tail_mass`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    pub probabilities: Vec<f64>,
    pub tail_mass: f64,
}

impl PhotonNumberDistribution {
    pub fn m_max(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn get(&self, m: usize) -> f64 {
        self.probabilities.get(m).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum::<f64>() + self.tail_mass
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(m, p)| m as f64 * p)
            .sum()
    }
}

fn check_mu(mu: f64, allow_zero: bool) -> Result<()> {
    let ok = if allow_zero { mu >= 0.0 } else { mu > 0.0 };
    if ok && mu.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            name: "mu",
            value: mu,
            range: if allow_zero { "[0, inf)" } else { "(0, inf)" },
        })
    }
}

/// Terms up to where the Poisson tail is far below f64 resolution.
fn poisson_support(lambda: f64) -> usize {
    (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as usize
}

fn poisson_pmf(lambda: f64, upto: usize) -> Vec<f64> {
    if lambda == 0.0 {
        let mut v = vec![0.0; upto + 1];
        v[0] = 1.0;
        return v;
    }
    let mut out = Vec::with_capacity(upto + 1);
    let ln_lambda = lambda.ln();
    let mut ln_fact = 0.0;
    for m in 0..=upto {
        if m > 1 {
            ln_fact += (m as f64).ln();
        }
        out.push((m as f64 * ln_lambda - lambda - ln_fact).exp());
    }
    out
}

fn poisson_cutoff(lambda: f64, tail_target: f64) -> usize {
    if lambda == 0.0 {
        return 0;
    }
    let pmf = poisson_pmf(lambda, poisson_support(lambda));
    let mut tail = 0.0;
    for m in (0..pmf.len()).rev() {
        if tail + pmf[m] >= tail_target {
            return m;
        }
        tail += pmf[m];
    }
    0
}

/// Phase-averaged coherent source: Poisson with mean `eta * mu`.
pub fn coherent_pm(mu: f64, eta: f64, m_max: usize) -> Result<PhotonNumberDistribution> {
    check_mu(mu, true)?;
    check_probability("transmittance", eta)?;
    let lambda = eta * mu;
    let support = poisson_support(lambda).max(m_max);
    let pmf = poisson_pmf(lambda, support);
    // Tail summed from the far end so it does not inherit cancellation from 1 - cdf.
    let tail_mass: f64 = pmf[m_max + 1..].iter().rev().sum();
    Ok(PhotonNumberDistribution {
        probabilities: pmf[..=m_max].to_vec(),
        tail_mass,
    })
}

/// Heralded TMSS source with ideal herald detector:
/// `P_0 = (1 - eta) / (1 + eta mu)`, `P_m = ((1 + mu)/mu) (mu eta)^m / (1 + mu eta)^{m+1}`.
pub fn heralded_tmss_pm(mu: f64, eta: f64, m_max: usize) -> Result<PhotonNumberDistribution> {
    check_mu(mu, false)?;
    check_probability("transmittance", eta)?;
    let x = mu * eta;
    let prefactor = (1.0 + mu) / mu;
    let r = x / (1.0 + x);
    let mut probabilities = Vec::with_capacity(m_max + 1);
    probabilities.push((1.0 - eta) / (1.0 + x));
    for m in 1..=m_max {
        probabilities.push(prefactor * r.powi(m as i32) / (1.0 + x));
    }
    // Geometric tail: sum_{m > M} x^m / (1+x)^{m+1} = r^{M+1}.
    let tail_mass = prefactor * r.powi(m_max as i32 + 1);
    Ok(PhotonNumberDistribution {
        probabilities,
        tail_mass,
    })
}

fn binomial_pmf(n: usize, k: usize, p: f64) -> f64 {
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if p == 1.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let ln = ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
        + k as f64 * p.ln()
        + (n - k) as f64 * (1.0 - p).ln();
    ln.exp()
}

/// Binomial thinning of an arbitrary source distribution:
/// `P_m = eta^m sum_{n >= m} p_n C(n, m) (1 - eta)^{n - m}`.
pub fn generic_pm(p_n: &[f64], eta: f64, m_max: usize) -> Result<PhotonNumberDistribution> {
    validate_generic(p_n)?;
    check_probability("transmittance", eta)?;
    let n_max = p_n.len() - 1;
    let thinned: Vec<f64> = (0..=n_max)
        .map(|m| (m..=n_max).map(|n| p_n[n] * binomial_pmf(n, m, eta)).sum())
        .collect();
    let probabilities = (0..=m_max)
        .map(|m| thinned.get(m).copied().unwrap_or(0.0))
        .collect();
    let tail_mass = thinned.iter().skip(m_max + 1).sum();
    Ok(PhotonNumberDistribution {
        probabilities,
        tail_mass,
    })
}

/// Source-intensity objective.
pub enum MuObjective<'a> {
    /// Maximize the single-photon weight `P_1`.
    MaxP1,
    /// Maximize a caller-supplied figure of merit, typically Fisher information.
    /// Evaluation errors mark a grid point infeasible.
    MaxFisher(&'a (dyn Fn(f64) -> Result<f64> + Sync)),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MuSearch {
    pub lo: f64,
    pub hi: f64,
    pub grid_points: usize,
    pub rel_tol: f64,
}

impl Default for MuSearch {
    fn default() -> Self {
        Self {
            lo: MU_MIN,
            hi: MU_MAX,
            grid_points: 801,
            rel_tol: 1e-6,
        }
    }
}

impl MuSearch {
    /// Coarser scan suited to expensive objectives.
    pub fn coarse(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            grid_points: 41,
            rel_tol: 1e-4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuOptimum {
    pub mu: f64,
    pub objective: f64,
    /// The maximum sits on the edge of the search range (supremum not attained inside).
    pub at_boundary: bool,
}

/// Chooses the source intensity for transmittance `eta`.
pub fn optimize_mu(
    kind: SourceKind,
    eta: f64,
    objective: MuObjective<'_>,
    search: &MuSearch,
) -> Result<MuOptimum> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::OutOfRange {
            name: "transmittance",
            value: eta,
            range: "(0, 1]",
        });
    }
    if !kind.has_intensity() {
        return Err(Error::Invalid(format!(
            "{} source has no tunable intensity",
            kind.name()
        )));
    }
    let eval = |mu: f64| -> f64 {
        let value = match &objective {
            MuObjective::MaxP1 => Ok(kind.with_mu(mu).p1(eta)),
            MuObjective::MaxFisher(f) => f(mu),
        };
        match value {
            Ok(v) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    };
    let grid = log_grid(search.lo, search.hi, search.grid_points);
    let values: Vec<f64> = match objective {
        MuObjective::MaxP1 => grid.iter().map(|&mu| eval(mu)).collect(),
        MuObjective::MaxFisher(_) => grid.par_iter().map(|&mu| eval(mu)).collect(),
    };
    let (best, &best_value) = values
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, &f64)>, (i, v)| match acc {
            Some((_, bv)) if *bv >= *v => acc,
            _ => Some((i, v)),
        })
        .expect("grid is non-empty");
    if best_value == f64::NEG_INFINITY {
        return Err(Error::NoConvergence(
            "objective infeasible at every grid point".into(),
        ));
    }
    if best == 0 || best + 1 == grid.len() {
        return Ok(MuOptimum {
            mu: grid[best],
            objective: best_value,
            at_boundary: true,
        });
    }
    let (a, b) = (grid[best - 1].ln(), grid[best + 1].ln());
    let (ln_mu, neg) = golden_section_min(|t| -eval(t.exp()), a, b, search.rel_tol)?;
    Ok(MuOptimum {
        mu: ln_mu.exp(),
        objective: -neg,
        at_boundary: false,
    })
}
