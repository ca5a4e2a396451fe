//! Exact multimode Fock-space simulation.
//!
//! States are sparse maps from occupation vectors to complex amplitudes. Linear
//! optical circuits act on creation operators, `a_j^dag -> sum_i U[i][j] a_i^dag`,
//! and photon loss is applied through its Kraus decomposition, which turns a
//! pure state into a weighted ensemble of pure states.
//!
//! Mode ordering throughout the crate is `(a_1, .., a_N, b_1, .., b_N)`: the
//! detector modes of telescope A come first.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::combinatorics::{binomial, factorial, for_each_below};
use crate::error::{check_probability, Error, Result};

/// Amplitudes with magnitude below this are dropped from sparse states.
pub const PRUNE_THRESHOLD: f64 = 1e-15;

/// Largest photon number a single mode can hold in an [`OccupationVector`].
pub const MAX_MODE_OCCUPATION: usize = u8::MAX as usize;

const UNITARY_TOLERANCE: f64 = 1e-10;
const NORMALIZATION_TOLERANCE: f64 = 1e-10;

/// Photon counts per optical mode.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OccupationVector(SmallVec<[u8; 8]>);

impl OccupationVector {
    pub fn vacuum(modes: usize) -> Self {
        Self(SmallVec::from_elem(0, modes))
    }

    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        let mut v = SmallVec::with_capacity(counts.len());
        for &c in counts {
            if c > MAX_MODE_OCCUPATION {
                return Err(Error::Truncation {
                    requested: c,
                    limit: MAX_MODE_OCCUPATION,
                });
            }
            v.push(c as u8);
        }
        Ok(Self(v))
    }

    pub fn mode_count(&self) -> usize {
        self.0.len()
    }

    pub fn get(&self, mode: usize) -> usize {
        self.0[mode] as usize
    }

    pub fn counts(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().map(|&c| c as usize)
    }

    pub fn total(&self) -> usize {
        self.counts().sum()
    }

    /// `prod_i sqrt(n_i!)`, the norm of the monomial `prod_i (a_i^dag)^{n_i} |vac>`.
    pub fn sqrt_factorial_product(&self) -> f64 {
        self.counts().map(|n| factorial(n).sqrt()).product()
    }

    pub(crate) fn incremented(&self, mode: usize) -> Self {
        let mut next = self.clone();
        next.0[mode] += 1;
        next
    }

    pub(crate) fn set(&mut self, mode: usize, value: usize) {
        self.0[mode] = value as u8;
    }
}

impl fmt::Debug for OccupationVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "|")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ">")
    }
}

/// A pure multimode Fock state stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseAmplitudeState {
    mode_count: usize,
    terms: BTreeMap<OccupationVector, Complex64>,
}

impl SparseAmplitudeState {
    pub fn vacuum(mode_count: usize) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(
            OccupationVector::vacuum(mode_count),
            Complex64::new(1.0, 0.0),
        );
        Self { mode_count, terms }
    }

    /// Builds a state from explicit terms. Repeated occupations are summed and
    /// negligible amplitudes pruned; no normalization is applied.
    pub fn from_terms<I>(mode_count: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (OccupationVector, Complex64)>,
    {
        let mut map: BTreeMap<OccupationVector, Complex64> = BTreeMap::new();
        for (occ, amp) in terms {
            if occ.mode_count() != mode_count {
                return Err(Error::DimensionMismatch {
                    expected: mode_count,
                    got: occ.mode_count(),
                });
            }
            *map.entry(occ).or_default() += amp;
        }
        let mut state = Self {
            mode_count,
            terms: map,
        };
        state.prune();
        Ok(state)
    }

    pub fn mode_count(&self) -> usize {
        self.mode_count
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&OccupationVector, &Complex64)> {
        self.terms.iter()
    }

    pub fn amplitude(&self, occ: &OccupationVector) -> Complex64 {
        self.terms.get(occ).copied().unwrap_or_default()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.terms.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        for amp in self.terms.values_mut() {
            *amp *= factor;
        }
        self.prune();
        self
    }

    pub fn normalized(self) -> Result<Self> {
        let norm = self.norm_sqr().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Invalid("cannot normalize a zero state".into()));
        }
        Ok(self.scaled(Complex64::new(1.0 / norm, 0.0)))
    }

    /// Applies the (unnormalized) creation operator `sum_i form[i] a_i^dag`.
    pub fn create(&self, form: &[Complex64]) -> Result<Self> {
        if form.len() != self.mode_count {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count,
                got: form.len(),
            });
        }
        let mut out: BTreeMap<OccupationVector, Complex64> = BTreeMap::new();
        for (occ, amp) in &self.terms {
            for (mode, coeff) in form.iter().enumerate() {
                if coeff.norm_sqr() == 0.0 {
                    continue;
                }
                if occ.get(mode) >= MAX_MODE_OCCUPATION {
                    return Err(Error::Truncation {
                        requested: occ.get(mode) + 1,
                        limit: MAX_MODE_OCCUPATION,
                    });
                }
                let boost = ((occ.get(mode) + 1) as f64).sqrt();
                *out.entry(occ.incremented(mode)).or_default() += amp * coeff * boost;
            }
        }
        let mut state = Self {
            mode_count: self.mode_count,
            terms: out,
        };
        state.prune();
        Ok(state)
    }

    /// Places this state's modes at `positions` of a larger `total_modes` register;
    /// the remaining modes are vacuum.
    pub fn embed(&self, total_modes: usize, positions: &[usize]) -> Result<Self> {
        if positions.len() != self.mode_count {
            return Err(Error::DimensionMismatch {
                expected: self.mode_count,
                got: positions.len(),
            });
        }
        if positions.iter().any(|&p| p >= total_modes) {
            return Err(Error::Invalid("embedding position out of range".into()));
        }
        let terms = self.terms.iter().map(|(occ, amp)| {
            let mut big = OccupationVector::vacuum(total_modes);
            for (src, &dst) in positions.iter().enumerate() {
                big.set(dst, occ.get(src));
            }
            (big, *amp)
        });
        Self::from_terms(total_modes, terms.collect::<Vec<_>>())
    }

    /// Tensor product; `other`'s modes follow this state's modes.
    pub fn tensor(&self, other: &Self) -> Self {
        let mode_count = self.mode_count + other.mode_count;
        let mut terms = BTreeMap::new();
        for (a, x) in &self.terms {
            for (b, y) in &other.terms {
                let mut occ = a.0.clone();
                occ.extend_from_slice(&b.0);
                terms.insert(OccupationVector(occ), x * y);
            }
        }
        let mut state = Self { mode_count, terms };
        state.prune();
        state
    }

    /// Photon-number-resolved outcome distribution of this pure state.
    pub fn pnr(&self) -> PnrDistribution {
        let norm = self.norm_sqr();
        PnrDistribution {
            mode_count: self.mode_count,
            probabilities: self
                .terms
                .iter()
                .map(|(occ, amp)| (occ.clone(), amp.norm_sqr() / norm))
                .collect(),
            tail_mass: 0.0,
        }
    }

    fn prune(&mut self) {
        self.terms.retain(|_, amp| amp.norm() >= PRUNE_THRESHOLD);
    }
}

/// `|psi_m> = (a^dag + b^dag)^m / sqrt(2^m m!) |vac>` over two modes: `m`
/// photons split by a balanced beamsplitter.
pub fn make_split_state(m: usize, m_max: usize) -> Result<SparseAmplitudeState> {
    if m > m_max || m > MAX_MODE_OCCUPATION {
        return Err(Error::Truncation {
            requested: m,
            limit: m_max.min(MAX_MODE_OCCUPATION),
        });
    }
    // Direct binomial expansion: amplitude on (k, m-k) is sqrt(C(m,k) / 2^m).
    let scale = 0.5f64.powi(m as i32);
    let terms = (0..=m).map(|k| {
        let occ = OccupationVector::from_counts(&[k, m - k]).expect("bounded by m_max");
        (occ, Complex64::new((binomial(m, k) * scale).sqrt(), 0.0))
    });
    SparseAmplitudeState::from_terms(2, terms.collect::<Vec<_>>())
}

/// An `N x N` passive linear-optical transformation acting on creation operators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearCircuit {
    dim: usize,
    /// Row-major; `matrix[i * dim + j]` is `U[i][j]` (input `j` to output `i`).
    matrix: Vec<Complex64>,
}

impl LinearCircuit {
    /// Validates unitarity to 1e-10 (max-abs norm of `U U^dag - I`).
    pub fn new(dim: usize, matrix: Vec<Complex64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("circuit dimension must be positive".into()));
        }
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                got: matrix.len(),
            });
        }
        let circuit = Self { dim, matrix };
        let deviation = circuit.unitarity_deviation();
        if !(deviation < UNITARY_TOLERANCE) {
            return Err(Error::NonUnitary { deviation });
        }
        Ok(circuit)
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![Complex64::default(); dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = Complex64::new(1.0, 0.0);
        }
        Self { dim, matrix }
    }

    /// Balanced beamsplitter `(1/sqrt2) [[1, 1], [1, -1]]`.
    pub fn beamsplitter() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            dim: 2,
            matrix: vec![
                Complex64::new(h, 0.0),
                Complex64::new(h, 0.0),
                Complex64::new(h, 0.0),
                Complex64::new(-h, 0.0),
            ],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn element(&self, out: usize, input: usize) -> Complex64 {
        self.matrix[out * self.dim + input]
    }

    /// Output-mode coefficients of input mode `input`.
    pub fn column(&self, input: usize) -> Vec<Complex64> {
        (0..self.dim).map(|i| self.element(i, input)).collect()
    }

    /// Block-diagonal `self ⊕ other`.
    pub fn direct_sum(&self, other: &Self) -> Self {
        let dim = self.dim + other.dim;
        let mut matrix = vec![Complex64::default(); dim * dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                matrix[i * dim + j] = self.element(i, j);
            }
        }
        for i in 0..other.dim {
            for j in 0..other.dim {
                matrix[(self.dim + i) * dim + self.dim + j] = other.element(i, j);
            }
        }
        Self { dim, matrix }
    }

    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for k in 0..n {
                let mut acc = Complex64::default();
                for j in 0..n {
                    acc += self.element(i, j) * self.element(k, j).conj();
                }
                if i == k {
                    acc -= 1.0;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }
}

/// The `N`-mode discrete Fourier unitary `U[i][j] = exp(2 pi i jk / N) / sqrt(N)`
/// (zero-based indices).
pub fn dft_circuit(n: usize) -> Result<LinearCircuit> {
    if n == 0 {
        return Err(Error::Invalid("DFT circuit needs at least one mode".into()));
    }
    let norm = 1.0 / (n as f64).sqrt();
    let mut matrix = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            // Reduce the exponent mod n first so large products stay exact.
            let k = (i * j) % n;
            let angle = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            matrix.push(Complex64::from_polar(norm, angle));
        }
    }
    LinearCircuit::new(n, matrix)
}

/// Applies `circuit` to every mode of `state`.
pub fn apply_circuit(
    state: &SparseAmplitudeState,
    circuit: &LinearCircuit,
) -> Result<SparseAmplitudeState> {
    let modes: Vec<usize> = (0..state.mode_count()).collect();
    apply_circuit_on(state, circuit, &modes)
}

/// Applies `circuit` to the subset `modes` of `state` (circuit index `k` acts
/// on state mode `modes[k]`).
pub fn apply_circuit_on(
    state: &SparseAmplitudeState,
    circuit: &LinearCircuit,
    modes: &[usize],
) -> Result<SparseAmplitudeState> {
    if modes.len() != circuit.dim() {
        return Err(Error::DimensionMismatch {
            expected: circuit.dim(),
            got: modes.len(),
        });
    }
    let total = state.mode_count();
    if modes.iter().any(|&m| m >= total) {
        return Err(Error::DimensionMismatch {
            expected: total,
            got: modes.iter().copied().max().unwrap_or(0) + 1,
        });
    }
    // Output-mode forms of every creation operator, in the full register.
    let forms: Vec<Vec<Complex64>> = (0..total)
        .map(|mode| {
            let mut form = vec![Complex64::default(); total];
            match modes.iter().position(|&m| m == mode) {
                Some(k) => {
                    for (i, &out) in modes.iter().enumerate() {
                        form[out] = circuit.element(i, k);
                    }
                }
                None => form[mode] = Complex64::new(1.0, 0.0),
            }
            form
        })
        .collect();

    let mut acc: BTreeMap<OccupationVector, Complex64> = BTreeMap::new();
    for (occ, amp) in state.terms() {
        // |n> = prod_j (a_j^dag)^{n_j} / sqrt(n_j!) |vac>
        let mut branch = SparseAmplitudeState::vacuum(total);
        for (mode, form) in forms.iter().enumerate() {
            for _ in 0..occ.get(mode) {
                branch = branch.create(form)?;
            }
        }
        let scale = amp / occ.sqrt_factorial_product();
        for (out, a) in branch.terms {
            *acc.entry(out).or_default() += a * scale;
        }
    }
    SparseAmplitudeState::from_terms(total, acc)
}

/// A weighted ensemble of normalized pure states, plus any probability mass
/// that was truncated away before it was built.
#[derive(Clone, Debug)]
pub struct MixedEnsemble {
    pub mode_count: usize,
    pub components: Vec<(f64, SparseAmplitudeState)>,
    pub tail_mass: f64,
}

impl MixedEnsemble {
    pub fn pure(state: SparseAmplitudeState) -> Self {
        Self {
            mode_count: state.mode_count(),
            components: vec![(1.0, state)],
            tail_mass: 0.0,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|(w, _)| w).sum::<f64>() + self.tail_mass
    }
}

fn validate_transmittances(etas: &[f64], modes: usize) -> Result<()> {
    if etas.len() != modes {
        return Err(Error::DimensionMismatch {
            expected: modes,
            got: etas.len(),
        });
    }
    etas.iter()
        .try_for_each(|&e| check_probability("transmittance", e))
}

/// Per-mode photon loss on a pure state, via the Kraus operators
/// `E_k |n> = prod_i sqrt(C(n_i, k_i) eta_i^{n_i-k_i} (1-eta_i)^{k_i}) |n - k>`.
/// Each loss pattern `k` becomes one ensemble component.
pub fn apply_loss(state: &SparseAmplitudeState, etas: &[f64]) -> Result<MixedEnsemble> {
    validate_transmittances(etas, state.mode_count())?;
    let modes = state.mode_count();
    let mut branches: BTreeMap<OccupationVector, BTreeMap<OccupationVector, Complex64>> =
        BTreeMap::new();
    for (occ, amp) in state.terms() {
        let bound: Vec<usize> = occ.counts().collect();
        let mut result = Ok(());
        for_each_below(&bound, |lost| {
            if result.is_err() {
                return;
            }
            let mut factor = 1.0;
            for i in 0..modes {
                let (n, k) = (bound[i], lost[i]);
                factor *=
                    binomial(n, k) * etas[i].powi((n - k) as i32) * (1.0 - etas[i]).powi(k as i32);
            }
            if factor == 0.0 {
                return;
            }
            let kept: Vec<usize> = bound.iter().zip(lost).map(|(n, k)| n - k).collect();
            match (
                OccupationVector::from_counts(lost),
                OccupationVector::from_counts(&kept),
            ) {
                (Ok(lost), Ok(kept)) => {
                    *branches.entry(lost).or_default().entry(kept).or_default() +=
                        amp * factor.sqrt();
                }
                (Err(e), _) | (_, Err(e)) => result = Err(e),
            }
        });
        result?;
    }
    let mut components = Vec::with_capacity(branches.len());
    for (_, terms) in branches {
        let branch = SparseAmplitudeState::from_terms(modes, terms)?;
        let weight = branch.norm_sqr();
        if weight > 0.0 {
            components.push((weight, branch.normalized()?));
        }
    }
    Ok(MixedEnsemble {
        mode_count: modes,
        components,
        tail_mass: 0.0,
    })
}

/// [`apply_loss`] on every component of an ensemble.
pub fn apply_loss_ensemble(ensemble: &MixedEnsemble, etas: &[f64]) -> Result<MixedEnsemble> {
    let mut components = Vec::new();
    for (w, state) in &ensemble.components {
        for (v, branch) in apply_loss(state, etas)?.components {
            components.push((w * v, branch));
        }
    }
    Ok(MixedEnsemble {
        mode_count: ensemble.mode_count,
        components,
        tail_mass: ensemble.tail_mass,
    })
}

/// Photon-number-resolved detection statistics, `P(d)` per occupation vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnrDistribution {
    pub mode_count: usize,
    pub probabilities: BTreeMap<OccupationVector, f64>,
    pub tail_mass: f64,
}

impl PnrDistribution {
    pub fn probability(&self, occ: &OccupationVector) -> f64 {
        self.probabilities.get(occ).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probabilities.values().sum::<f64>() + self.tail_mass
    }

    /// Binomial thinning of each mode's photon count (loss applied to outcomes).
    pub fn thin(&self, etas: &[f64]) -> Result<Self> {
        validate_transmittances(etas, self.mode_count)?;
        let mut out: BTreeMap<OccupationVector, f64> = BTreeMap::new();
        for (occ, &p) in &self.probabilities {
            let bound: Vec<usize> = occ.counts().collect();
            for_each_below(&bound, |kept| {
                let mut factor = p;
                for i in 0..bound.len() {
                    let (n, k) = (bound[i], kept[i]);
                    factor *= binomial(n, k)
                        * etas[i].powi(k as i32)
                        * (1.0 - etas[i]).powi((n - k) as i32);
                }
                if factor != 0.0 {
                    let occ = OccupationVector::from_counts(kept).expect("bounded by input");
                    *out.entry(occ).or_default() += factor;
                }
            });
        }
        Ok(Self {
            mode_count: self.mode_count,
            probabilities: out,
            tail_mass: self.tail_mass,
        })
    }
}

/// `P(d) = sum_k w_k |<d|state_k>|^2` over a normalized ensemble.
pub fn pnr_distribution(ensemble: &MixedEnsemble) -> Result<PnrDistribution> {
    let total = ensemble.total_weight();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::Unnormalized { total });
    }
    if ensemble.components.iter().any(|(w, _)| *w < 0.0) || ensemble.tail_mass < 0.0 {
        return Err(Error::Invalid("negative ensemble weight".into()));
    }
    let mut probabilities: BTreeMap<OccupationVector, f64> = BTreeMap::new();
    for (w, state) in &ensemble.components {
        if state.mode_count() != ensemble.mode_count {
            return Err(Error::DimensionMismatch {
                expected: ensemble.mode_count,
                got: state.mode_count(),
            });
        }
        let norm = state.norm_sqr();
        if (norm - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Unnormalized { total: norm });
        }
        for (occ, amp) in state.terms() {
            *probabilities.entry(occ.clone()).or_default() += w * amp.norm_sqr();
        }
    }
    Ok(PnrDistribution {
        mode_count: ensemble.mode_count,
        probabilities,
        tail_mass: ensemble.tail_mass,
    })
}
