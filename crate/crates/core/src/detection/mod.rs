//! Detection statistics of the interferometer.
//!
//! Starlight (one photon shared by both telescopes with probability `epsilon`)
//! enters input mode 1 of each telescope's `N`-mode circuit; auxiliary sources
//! `2..N` feed the remaining inputs through a balanced split. Every virtual
//! (photon-number-resolved) outcome `d` has probability
//! `P(d|phi) = K0 + K1 cos(phi) + K2 sin(phi)`; threshold outcomes sum these
//! over all `d` with the same click pattern.
//!
//! Build order: virtual table → detector efficiency → threshold aggregation →
//! dark counts.

pub mod closed_form;
mod table;

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{check_probability, Error, Result};
use crate::fock::{dft_circuit, LinearCircuit, OccupationVector, SparseAmplitudeState};
use crate::source::{PhotonNumberDistribution, SourceModel};

pub use table::{OutcomeCoefficients, OutcomeTable, PnrTable, TableMetadata, ThresholdOutcome};

/// Weak starlight: with probability `epsilon` per window the telescopes share
/// `(e^{i phi} a_1^dag + b_1^dag)/sqrt2 |vac>`, otherwise vacuum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarlightModel {
    pub epsilon: f64,
    pub phi: f64,
}

impl StarlightModel {
    pub fn new(epsilon: f64, phi: f64) -> Result<Self> {
        check_probability("epsilon", epsilon)?;
        Ok(Self { epsilon, phi })
    }

    /// Phase from star angle `theta`, wavelength and baseline (both in meters).
    pub fn from_angle(
        epsilon: f64,
        theta: f64,
        wavelength_m: f64,
        baseline_m: f64,
    ) -> Result<Self> {
        Self::new(
            epsilon,
            crate::estimation::theta_to_phi(theta, wavelength_m, baseline_m),
        )
    }
}

/// Threshold-detector imperfections, identical for every detector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Per-photon detection probability.
    pub efficiency: f64,
    /// Probability of a spurious click per detector per window.
    pub dark_count: f64,
}

impl DetectorModel {
    pub const IDEAL: DetectorModel = DetectorModel {
        efficiency: 1.0,
        dark_count: 0.0,
    };

    pub fn new(efficiency: f64, dark_count: f64) -> Result<Self> {
        check_probability("efficiency", efficiency)?;
        check_probability("dark_count", dark_count)?;
        Ok(Self {
            efficiency,
            dark_count,
        })
    }
}

impl Default for DetectorModel {
    fn default() -> Self {
        Self::IDEAL
    }
}

/// Circuit applied at each telescope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CircuitKind {
    /// 50:50 beamsplitter; only valid with two modes per telescope.
    Beamsplitter,
    /// `N`-mode discrete Fourier unitary.
    Dft,
}

/// Truncation and enumeration limits for table construction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableOptions {
    /// Cap on total auxiliary photons per source event; `None` picks the
    /// smallest cap whose truncated mass is below `tail_target`.
    pub m_max: Option<usize>,
    pub tail_target: f64,
    /// Refuse to build when the truncated mass exceeds this.
    pub tail_ceiling: f64,
    pub event_cap: usize,
}

impl Default for TableOptions {
    fn default() -> Self {
        Self {
            m_max: None,
            tail_target: 1e-10,
            tail_ceiling: 1e-8,
            event_cap: 200_000,
        }
    }
}

impl TableOptions {
    pub fn with_m_max(m_max: usize, tail_ceiling: f64) -> Self {
        Self {
            m_max: Some(m_max),
            tail_ceiling,
            ..Self::default()
        }
    }
}

/// Everything that determines an [`OutcomeTable`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub modes_per_telescope: usize,
    pub circuit: CircuitKind,
    /// One source per auxiliary input `2..=N`.
    pub sources: Vec<SourceModel>,
    pub eta: f64,
    pub epsilon: f64,
    pub detector: DetectorModel,
    pub options: TableOptions,
}

impl TableSpec {
    pub fn single_source(source: SourceModel, eta: f64, epsilon: f64) -> Self {
        Self {
            modes_per_telescope: 2,
            circuit: CircuitKind::Beamsplitter,
            sources: vec![source],
            eta,
            epsilon,
            detector: DetectorModel::IDEAL,
            options: TableOptions::default(),
        }
    }

    pub fn multi_source(n: usize, sources: Vec<SourceModel>, eta: f64, epsilon: f64) -> Self {
        Self {
            modes_per_telescope: n,
            circuit: CircuitKind::Dft,
            sources,
            eta,
            epsilon,
            detector: DetectorModel::IDEAL,
            options: TableOptions::default(),
        }
    }

    pub fn with_detector(mut self, detector: DetectorModel) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_options(mut self, options: TableOptions) -> Self {
        self.options = options;
        self
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec is serializable");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.modes_per_telescope;
        if n < 2 {
            return Err(Error::Invalid(
                "need at least two modes per telescope".into(),
            ));
        }
        if 2 * n > ThresholdOutcome::MAX_DETECTORS {
            return Err(Error::Invalid(format!(
                "{} detectors exceed the supported maximum of {}",
                2 * n,
                ThresholdOutcome::MAX_DETECTORS
            )));
        }
        if self.sources.len() != n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n - 1,
                got: self.sources.len(),
            });
        }
        if self.circuit == CircuitKind::Beamsplitter && n != 2 {
            return Err(Error::Invalid("beamsplitter circuit needs N = 2".into()));
        }
        for s in &self.sources {
            s.validate()?;
        }
        check_probability("transmittance", self.eta)?;
        check_probability("epsilon", self.epsilon)?;
        check_probability("efficiency", self.detector.efficiency)?;
        check_probability("dark_count", self.detector.dark_count)?;
        Ok(())
    }

    pub fn linear_circuit(&self) -> Result<LinearCircuit> {
        match self.circuit {
            CircuitKind::Beamsplitter => Ok(LinearCircuit::beamsplitter()),
            CircuitKind::Dft => dft_circuit(self.modes_per_telescope),
        }
    }

    /// Per-source photon-number distributions and the total-photon cutoff.
    pub fn source_distributions(&self) -> Result<(Vec<PhotonNumberDistribution>, usize)> {
        let m_max = match self.options.m_max {
            Some(m) => m,
            None => {
                let per_source = self.options.tail_target / self.sources.len() as f64;
                let caps = self
                    .sources
                    .iter()
                    .map(|s| s.auto_cutoff(self.eta, per_source))
                    .collect::<Result<Vec<_>>>()?;
                if self.sources.len() == 1 {
                    caps[0]
                } else {
                    total_photon_cutoff(&self.sources, self.eta, self.options.tail_target, &caps)?
                }
            }
        };
        let dists = self
            .sources
            .iter()
            .map(|s| s.distribution(self.eta, m_max))
            .collect::<Result<Vec<_>>>()?;
        Ok((dists, m_max))
    }

    /// Virtual (photon-number-resolved) table for ideal detectors.
    pub fn build_virtual(&self) -> Result<PnrTable> {
        self.validate()?;
        let circuit = self.linear_circuit()?;
        let (dists, m_max) = self.source_distributions()?;
        let table = build_virtual_table(
            &circuit,
            &dists,
            self.epsilon,
            m_max,
            self.options.event_cap,
        )?;
        if table.tail_mass > self.options.tail_ceiling {
            return Err(Error::TailTooLarge {
                tail: table.tail_mass,
                ceiling: self.options.tail_ceiling,
                m_max,
            });
        }
        Ok(table)
    }

    /// Full pipeline including detector imperfections.
    pub fn build(&self) -> Result<OutcomeTable> {
        let virtual_table = self.build_virtual()?;
        let thinned = apply_efficiency(&virtual_table, self.detector.efficiency)?;
        let threshold = aggregate_threshold(&thinned);
        let mut table = apply_dark_counts(&threshold, self.detector.dark_count)?;
        table.metadata = TableMetadata {
            fingerprint: self.fingerprint(),
            tail_mass: virtual_table.tail_mass,
            m_max: self.source_distributions()?.1,
            spec: Some(self.clone()),
        };
        Ok(table)
    }
}

/// Smallest total-photon cutoff with `P(sum_i m_i > M) < target`.
fn total_photon_cutoff(
    sources: &[SourceModel],
    eta: f64,
    target: f64,
    caps: &[usize],
) -> Result<usize> {
    let mut total = vec![1.0];
    for (s, &cap) in sources.iter().zip(caps) {
        let d = s.distribution(eta, cap)?;
        let mut next = vec![0.0; total.len() + d.probabilities.len() - 1];
        for (i, a) in total.iter().enumerate() {
            for (j, b) in d.probabilities.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        total = next;
    }
    // Mass above each cutoff, summed from the top; per-source tails are < target / S.
    let mut tail = 0.0;
    for m in (0..total.len()).rev() {
        if tail + total[m] >= target / 2.0 {
            return Ok(m);
        }
        tail += total[m];
    }
    Ok(0)
}

fn star_forms(circuit: &LinearCircuit) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = circuit.dim();
    let mut a = vec![Complex64::default(); 2 * n];
    let mut b = vec![Complex64::default(); 2 * n];
    for x in 0..n {
        a[x] = circuit.element(x, 0);
        b[n + x] = circuit.element(x, 0);
    }
    (a, b)
}

/// Output form of auxiliary input `input` (1-based position in the circuit,
/// i.e. `1..N-1` zero-based) after the midpoint split and both circuits.
fn source_form(circuit: &LinearCircuit, input: usize) -> Vec<Complex64> {
    let n = circuit.dim();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut form = vec![Complex64::default(); 2 * n];
    for x in 0..n {
        form[x] = circuit.element(x, input) * h;
        form[n + x] = circuit.element(x, input) * h;
    }
    form
}

/// Number of source events `(m_2..m_N)` with total photons `<= m_max`.
fn count_events(dists: &[PhotonNumberDistribution], m_max: usize) -> usize {
    // ways[t] = number of partial events with total t
    let mut ways = vec![0usize; m_max + 1];
    ways[0] = 1;
    for d in dists {
        let mut next = vec![0usize; m_max + 1];
        for (t, &w) in ways.iter().enumerate() {
            if w == 0 {
                continue;
            }
            for m in 0..=d.m_max().min(m_max - t) {
                next[t + m] = next[t + m].saturating_add(w);
            }
        }
        ways = next;
    }
    ways.iter().fold(0usize, |a, &b| a.saturating_add(b))
}

/// Core engine: enumerates source events and accumulates affine coefficients of
/// every virtual outcome.
fn build_virtual_table(
    circuit: &LinearCircuit,
    dists: &[PhotonNumberDistribution],
    epsilon: f64,
    m_max: usize,
    event_cap: usize,
) -> Result<PnrTable> {
    let events = count_events(dists, m_max);
    if events > event_cap {
        return Err(Error::TooManyEvents {
            events,
            cap: event_cap,
        });
    }
    let modes = 2 * circuit.dim();
    let forms: Vec<Vec<Complex64>> = (1..circuit.dim())
        .map(|i| source_form(circuit, i))
        .collect();
    let (star_a, star_b) = star_forms(circuit);

    let mut entries: BTreeMap<OccupationVector, OutcomeCoefficients> = BTreeMap::new();
    let mut included = 0.0;

    let mut accumulate = |state: &SparseAmplitudeState, weight: f64| -> Result<()> {
        included += weight;
        if weight == 0.0 {
            return Ok(());
        }
        if epsilon < 1.0 {
            let w = (1.0 - epsilon) * weight;
            for (occ, amp) in state.terms() {
                entries.entry(occ.clone()).or_default().k0 += w * amp.norm_sqr();
            }
        }
        if epsilon > 0.0 {
            let via_a = state.create(&star_a)?;
            let via_b = state.create(&star_b)?;
            let w = epsilon * weight;
            let mut touched: BTreeMap<&OccupationVector, (Complex64, Complex64)> = BTreeMap::new();
            for (occ, amp) in via_a.terms() {
                touched.entry(occ).or_default().0 = *amp;
            }
            for (occ, amp) in via_b.terms() {
                touched.entry(occ).or_default().1 = *amp;
            }
            for (occ, (alpha, beta)) in touched {
                let cross = alpha * beta.conj();
                let e = entries.entry(occ.clone()).or_default();
                e.k0 += w * 0.5 * (alpha.norm_sqr() + beta.norm_sqr());
                e.k1 += w * cross.re;
                e.k2 -= w * cross.im;
            }
        }
        Ok(())
    };

    // Depth-first over sources; each level appends photons of one source.
    fn walk<F: FnMut(&SparseAmplitudeState, f64) -> Result<()>>(
        level: usize,
        state: SparseAmplitudeState,
        weight: f64,
        budget: usize,
        forms: &[Vec<Complex64>],
        dists: &[PhotonNumberDistribution],
        visit: &mut F,
    ) -> Result<()> {
        if level == forms.len() {
            return visit(&state, weight);
        }
        let dist = &dists[level];
        let mut current = state;
        for m in 0..=budget.min(dist.m_max()) {
            if m > 0 {
                current = current
                    .create(&forms[level])?
                    .scaled(Complex64::new(1.0 / (m as f64).sqrt(), 0.0));
            }
            let p = dist.get(m);
            if p > 0.0 {
                walk(
                    level + 1,
                    current.clone(),
                    weight * p,
                    budget - m,
                    forms,
                    dists,
                    visit,
                )?;
            }
        }
        Ok(())
    }

    walk(
        0,
        SparseAmplitudeState::vacuum(modes),
        1.0,
        m_max,
        &forms,
        dists,
        &mut accumulate,
    )?;

    let tail_mass = if dists.len() == 1 {
        dists[0].tail_mass
    } else {
        (1.0 - included).max(0.0)
    };
    entries.retain(|_, c| !c.is_zero());
    Ok(PnrTable {
        mode_count: modes,
        entries,
        tail_mass,
    })
}

/// Single auxiliary source, 50:50 beamsplitter at each telescope, ideal detectors.
pub fn build_single_source_table(
    source: &SourceModel,
    eta: f64,
    star: &StarlightModel,
    options: TableOptions,
) -> Result<OutcomeTable> {
    TableSpec::single_source(source.clone(), eta, star.epsilon)
        .with_options(options)
        .build()
}

/// `N - 1` auxiliary sources feeding the `N`-mode DFT circuit at each telescope.
pub fn build_multi_source_table(
    n: usize,
    sources: &[SourceModel],
    eta: f64,
    star: &StarlightModel,
    options: TableOptions,
) -> Result<OutcomeTable> {
    TableSpec::multi_source(n, sources.to_vec(), eta, star.epsilon)
        .with_options(options)
        .build()
}

/// Sums virtual outcomes into threshold outcomes (count > 0 means click).
pub fn aggregate_threshold(table: &PnrTable) -> OutcomeTable {
    let mut entries: BTreeMap<ThresholdOutcome, OutcomeCoefficients> = BTreeMap::new();
    for (occ, coeffs) in &table.entries {
        let outcome = ThresholdOutcome::from_occupation(occ);
        entries.entry(outcome).or_default().add_assign(coeffs);
    }
    OutcomeTable {
        detectors: table.mode_count,
        entries,
        metadata: TableMetadata {
            tail_mass: table.tail_mass,
            ..TableMetadata::default()
        },
    }
}

/// Finite detector efficiency: binomial thinning of every mode's photon count.
pub fn apply_efficiency(table: &PnrTable, efficiency: f64) -> Result<PnrTable> {
    check_probability("efficiency", efficiency)?;
    if efficiency == 1.0 {
        return Ok(table.clone());
    }
    let mut current = table.entries.clone();
    for mode in 0..table.mode_count {
        let mut next: BTreeMap<OccupationVector, OutcomeCoefficients> = BTreeMap::new();
        for (occ, coeffs) in &current {
            let n = occ.get(mode);
            for kept in 0..=n {
                let w = crate::combinatorics::binomial(n, kept)
                    * efficiency.powi(kept as i32)
                    * (1.0 - efficiency).powi((n - kept) as i32);
                if w == 0.0 {
                    continue;
                }
                let mut target = occ.clone();
                target.set(mode, kept);
                next.entry(target).or_default().add_scaled(coeffs, w);
            }
        }
        current = next;
    }
    Ok(PnrTable {
        mode_count: table.mode_count,
        entries: current,
        tail_mass: table.tail_mass,
    })
}

/// Independent dark clicks: each silent detector fires with probability `p_d`.
pub fn apply_dark_counts(table: &OutcomeTable, p_d: f64) -> Result<OutcomeTable> {
    check_probability("dark_count", p_d)?;
    if p_d == 0.0 {
        return Ok(table.clone());
    }
    let detectors = table.detectors;
    let full = ThresholdOutcome::all_mask(detectors);
    let mut entries: BTreeMap<ThresholdOutcome, OutcomeCoefficients> = BTreeMap::new();
    for (outcome, coeffs) in &table.entries {
        let silent = full & !outcome.mask();
        // Enumerate subsets of the silent detectors that fire.
        let mut extra = silent;
        loop {
            let fired = extra.count_ones() as i32;
            let still_silent = silent.count_ones() as i32 - fired;
            let w = p_d.powi(fired) * (1.0 - p_d).powi(still_silent);
            if w != 0.0 {
                let target = ThresholdOutcome::new(outcome.mask() | extra, detectors);
                entries.entry(target).or_default().add_scaled(coeffs, w);
            }
            if extra == 0 {
                break;
            }
            extra = (extra - 1) & silent;
        }
    }
    Ok(OutcomeTable {
        detectors,
        entries,
        metadata: table.metadata.clone(),
    })
}

#[cfg(test)]
mod tests;
