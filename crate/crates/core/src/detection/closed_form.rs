//! Closed-form virtual-outcome amplitudes, used to cross-check the Fock engine.
//!
//! The engine builds output states by repeatedly applying creation operators.
//! Here the same amplitudes are written as explicit sums over photon
//! allocations: the coefficient of `prod_x (a_x^dag)^{d_x}` in
//! `prod_j (f_j^dag)^{m_j}` is a sum over integer matrices `k_{jx}` with row
//! sums `m_j` and column sums `d_x` of `prod_j m_j! prod_x f_{jx}^{k_{jx}} / k_{jx}!`.
//!
//! The two-detector specializations (`n` photons at `a_k`, the rest at `b_l`)
//! are the textbook formulas for the simplest click patterns.

use num_complex::Complex64;
use serde::Serialize;

use crate::combinatorics::{binomial, factorial, for_each_composition};
use crate::error::Result;
use crate::fock::{LinearCircuit, OccupationVector};
use crate::source::PhotonNumberDistribution;

use super::{OutcomeCoefficients, PnrTable, TableSpec};

/// Amplitude of `|d>` in `prod_j (f_j^dag)^{m_j} / sqrt(m_j!) |vac>`, by
/// enumerating how each form's photons are distributed over the modes.
pub fn allocation_amplitude(forms: &[(&[Complex64], usize)], d: &[usize]) -> Complex64 {
    let total: usize = d.iter().sum();
    if forms.iter().map(|(_, m)| m).sum::<usize>() != total {
        return Complex64::default();
    }
    let mut remaining = d.to_vec();
    let coeff = allocate(forms, 0, &mut remaining);
    let norm: f64 = d.iter().map(|&n| factorial(n).sqrt()).product::<f64>()
        / forms
            .iter()
            .map(|(_, m)| factorial(*m).sqrt())
            .product::<f64>();
    coeff * norm
}

fn allocate(forms: &[(&[Complex64], usize)], j: usize, remaining: &mut Vec<usize>) -> Complex64 {
    if j == forms.len() {
        return if remaining.iter().all(|&r| r == 0) {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::default()
        };
    }
    let (form, m) = forms[j];
    let modes = remaining.len();
    let mut acc = Complex64::default();
    let mut compositions = Vec::new();
    for_each_composition(m, modes, |k| compositions.push(k.to_vec()));
    for k in compositions {
        if k.iter().zip(remaining.iter()).any(|(a, b)| a > b) {
            continue;
        }
        let mut term = Complex64::new(factorial(m), 0.0);
        for (x, &kx) in k.iter().enumerate() {
            if kx > 0 {
                term *= form[x].powu(kx as u32) / factorial(kx);
            }
        }
        if term.norm() == 0.0 {
            continue;
        }
        for (r, kx) in remaining.iter_mut().zip(&k) {
            *r -= kx;
        }
        acc += term * allocate(forms, j + 1, remaining);
        for (r, kx) in remaining.iter_mut().zip(&k) {
            *r += kx;
        }
    }
    acc
}

/// Output forms over the `2N` detectors: auxiliary inputs `1..N` (zero-based)
/// after the midpoint split, and the star photon entering via `a_1` or `b_1`.
struct Forms {
    sources: Vec<Vec<Complex64>>,
    star_a: Vec<Complex64>,
    star_b: Vec<Complex64>,
}

impl Forms {
    fn new(circuit: &LinearCircuit) -> Self {
        let n = circuit.dim();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let sources = (1..n)
            .map(|i| (0..2 * n).map(|x| circuit.element(x % n, i) * h).collect())
            .collect();
        let mut star_a = vec![Complex64::default(); 2 * n];
        let mut star_b = vec![Complex64::default(); 2 * n];
        for x in 0..n {
            star_a[x] = circuit.element(x, 0);
            star_b[n + x] = circuit.element(x, 0);
        }
        Self {
            sources,
            star_a,
            star_b,
        }
    }
}

/// Closed-form affine coefficients of virtual outcome `d`.
pub fn pnr_coefficients(
    circuit: &LinearCircuit,
    dists: &[PhotonNumberDistribution],
    epsilon: f64,
    d: &[usize],
) -> OutcomeCoefficients {
    let forms = Forms::new(circuit);
    let total: usize = d.iter().sum();
    let mut out = OutcomeCoefficients::default();

    for_each_composition(total, dists.len(), |event| {
        let w: f64 = event.iter().zip(dists).map(|(&m, p)| p.get(m)).product();
        if w == 0.0 || epsilon == 1.0 {
            return;
        }
        let f: Vec<(&[Complex64], usize)> = forms
            .sources
            .iter()
            .zip(event)
            .map(|(f, &m)| (f.as_slice(), m))
            .collect();
        out.k0 += (1.0 - epsilon) * w * allocation_amplitude(&f, d).norm_sqr();
    });

    if total >= 1 && epsilon > 0.0 {
        for_each_composition(total - 1, dists.len(), |event| {
            let w: f64 = event.iter().zip(dists).map(|(&m, p)| p.get(m)).product();
            if w == 0.0 {
                return;
            }
            let mut f: Vec<(&[Complex64], usize)> = forms
                .sources
                .iter()
                .zip(event)
                .map(|(f, &m)| (f.as_slice(), m))
                .collect();
            f.push((forms.star_a.as_slice(), 1));
            let alpha = allocation_amplitude(&f, d);
            f.pop();
            f.push((forms.star_b.as_slice(), 1));
            let beta = allocation_amplitude(&f, d);
            let cross = alpha * beta.conj();
            let w = epsilon * w;
            out.k0 += w * 0.5 * (alpha.norm_sqr() + beta.norm_sqr());
            out.k1 += w * cross.re;
            out.k2 -= w * cross.im;
        });
    }
    out
}

/// Amplitudes for outcomes where only detectors `a_k` and `b_l` receive photons.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct TwoClickAmplitudes {
    /// Star photon routed through telescope A (carries `e^{i phi}`).
    pub phased: Complex64,
    /// Star photon routed through telescope B.
    pub unphased: Complex64,
    /// No star photon.
    pub no_star: Complex64,
}

/// Single auxiliary source (circuit input 2), `m` auxiliary photons.
///
/// `phased`/`unphased` are amplitudes of `n` photons at `a_k` and `m + 1 - n` at
/// `b_l` in the star-plus-`m` state (including the star's `1/sqrt2`); `no_star`
/// is the amplitude of `n` at `a_k` and `m - n` at `b_l` in the `m`-photon state.
pub fn two_click_coefficients(
    circuit: &LinearCircuit,
    m: usize,
    n: usize,
    k: usize,
    l: usize,
) -> TwoClickAmplitudes {
    let u = |out: usize, input: usize| circuit.element(out, input);
    let (uk1, ul1, uk2, ul2) = (u(k, 0), u(l, 0), u(k, 1), u(l, 1));
    let pow = |z: Complex64, e: i64| {
        if e < 0 {
            Complex64::default()
        } else {
            z.powu(e as u32)
        }
    };
    let (mi, ni) = (m as i64, n as i64);

    let mut out = TwoClickAmplitudes::default();
    if n <= m + 1 {
        let star_norm =
            (factorial(n) * factorial(m + 1 - n) / (2f64.powi(m as i32 + 1) * factorial(m))).sqrt();
        out.unphased = star_norm * ul1 * pow(uk2, ni) * pow(ul2, mi - ni) * binomial(m, n);
        if n >= 1 {
            out.phased =
                star_norm * uk1 * pow(uk2, ni - 1) * pow(ul2, mi + 1 - ni) * binomial(m, n - 1);
        }
    }
    if n <= m {
        let norm = (factorial(n) * factorial(m - n) / (2f64.powi(m as i32) * factorial(m))).sqrt();
        out.no_star = norm * pow(uk2, ni) * pow(ul2, mi - ni) * binomial(m, n);
    }
    out
}

/// Several auxiliary sources, photon numbers `event[i]` on circuit inputs
/// `2..=N`. `n` photons at `a_k`; the rest at `b_l` (total `M + 1` with the star,
/// `M` without).
pub fn multi_two_click_coefficients(
    circuit: &LinearCircuit,
    event: &[usize],
    n: usize,
    k: usize,
    l: usize,
) -> TwoClickAmplitudes {
    let total: usize = event.iter().sum();
    let u = |out: usize, input: usize| circuit.element(out, input);
    // sum over splits {n_i} with sum n_i = target of prod_i C(m_i,n_i) U_ki^n_i U_li^(m_i-n_i)
    let split_sum = |target: usize| -> Complex64 {
        let mut acc = Complex64::default();
        for_each_composition(target, event.len(), |split| {
            if split.iter().zip(event).any(|(ni, mi)| ni > mi) {
                return;
            }
            let mut term = Complex64::new(1.0, 0.0);
            for (i, (&ni, &mi)) in split.iter().zip(event).enumerate() {
                term *= binomial(mi, ni)
                    * u(k, i + 1).powu(ni as u32)
                    * u(l, i + 1).powu((mi - ni) as u32);
            }
            acc += term;
        });
        acc
    };
    let event_factorials: f64 = event.iter().map(|&m| factorial(m)).product();

    let mut out = TwoClickAmplitudes::default();
    if n <= total + 1 {
        let star_norm = (factorial(n) * factorial(total + 1 - n)
            / (2f64.powi(total as i32 + 1) * event_factorials))
            .sqrt();
        if n >= 1 {
            out.phased = star_norm * u(k, 0) * split_sum(n - 1);
        }
        if n <= total {
            out.unphased = star_norm * u(l, 0) * split_sum(n);
        }
    }
    if n <= total {
        let norm = (factorial(n) * factorial(total - n)
            / (2f64.powi(total as i32) * event_factorials))
            .sqrt();
        out.no_star = norm * split_sum(n);
    }
    out
}

/// Affine coefficients of the two-detector outcome (`n_a` at `a_k`, `n_b` at `b_l`)
/// assembled from [`multi_two_click_coefficients`] (which reduces to
/// [`two_click_coefficients`] for a single source).
pub fn two_click_probability(
    circuit: &LinearCircuit,
    dists: &[PhotonNumberDistribution],
    epsilon: f64,
    k: usize,
    l: usize,
    n_a: usize,
    n_b: usize,
) -> OutcomeCoefficients {
    let total = n_a + n_b;
    let mut out = OutcomeCoefficients::default();
    for_each_composition(total, dists.len(), |event| {
        let w: f64 = event.iter().zip(dists).map(|(&m, p)| p.get(m)).product();
        let amp = if dists.len() == 1 {
            two_click_coefficients(circuit, total, n_a, k, l)
        } else {
            multi_two_click_coefficients(circuit, event, n_a, k, l)
        };
        out.k0 += (1.0 - epsilon) * w * amp.no_star.norm_sqr();
    });
    if total >= 1 {
        for_each_composition(total - 1, dists.len(), |event| {
            let w: f64 = event.iter().zip(dists).map(|(&m, p)| p.get(m)).product();
            let amp = if dists.len() == 1 {
                two_click_coefficients(circuit, total - 1, n_a, k, l)
            } else {
                multi_two_click_coefficients(circuit, event, n_a, k, l)
            };
            // |unphased + phased e^{i phi}|^2
            let cross = amp.phased * amp.unphased.conj();
            out.k0 += epsilon * w * (amp.phased.norm_sqr() + amp.unphased.norm_sqr());
            out.k1 += 2.0 * epsilon * w * cross.re;
            out.k2 -= 2.0 * epsilon * w * cross.im;
        });
    }
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheckRow {
    pub outcome: Vec<usize>,
    pub engine: [f64; 3],
    pub closed_form: [f64; 3],
    pub deviation: f64,
    /// Row checked against the two-detector formula rather than the general sum.
    pub two_click: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CrossCheckReport {
    pub fingerprint: String,
    pub max_photons: usize,
    pub outcomes_checked: usize,
    pub max_deviation: f64,
    pub max_two_click_deviation: f64,
    pub rows: Vec<CrossCheckRow>,
}

impl CrossCheckReport {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_deviation <= tolerance && self.max_two_click_deviation <= tolerance
    }
}

fn all_occupations(modes: usize, max_photons: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for total in 0..=max_photons {
        for_each_composition(total, modes, |c| out.push(c.to_vec()));
    }
    out
}

/// Compares engine coefficients with the closed forms on every virtual outcome
/// with at most `max_photons` photons. `engine` is normally `spec.build_virtual()`.
pub fn cross_check(
    spec: &TableSpec,
    engine: &PnrTable,
    max_photons: usize,
) -> Result<CrossCheckReport> {
    let circuit = spec.linear_circuit()?;
    let (dists, _) = spec.source_distributions()?;
    let n = circuit.dim();
    let mut rows = Vec::new();
    let mut max_deviation = 0.0f64;
    let mut max_two_click = 0.0f64;
    for d in all_occupations(2 * n, max_photons) {
        let occ = OccupationVector::from_counts(&d)?;
        let e = engine.get(&occ);
        let general = pnr_coefficients(&circuit, &dists, spec.epsilon, &d);
        let deviation = e.max_abs_diff(&general);
        max_deviation = max_deviation.max(deviation);
        rows.push(CrossCheckRow {
            outcome: d.clone(),
            engine: [e.k0, e.k1, e.k2],
            closed_form: [general.k0, general.k1, general.k2],
            deviation,
            two_click: false,
        });

        // Support on at most one A detector and one B detector.
        let a: Vec<usize> = (0..n).filter(|&x| d[x] > 0).collect();
        let b: Vec<usize> = (0..n).filter(|&x| d[n + x] > 0).collect();
        if a.len() == 1 && b.len() == 1 {
            let (k, l) = (a[0], b[0]);
            let c = two_click_probability(&circuit, &dists, spec.epsilon, k, l, d[k], d[n + l]);
            let deviation = e.max_abs_diff(&c);
            max_two_click = max_two_click.max(deviation);
            rows.push(CrossCheckRow {
                outcome: d.clone(),
                engine: [e.k0, e.k1, e.k2],
                closed_form: [c.k0, c.k1, c.k2],
                deviation,
                two_click: true,
            });
        }
    }
    Ok(CrossCheckReport {
        fingerprint: spec.fingerprint(),
        max_photons,
        outcomes_checked: rows.len(),
        max_deviation,
        max_two_click_deviation: max_two_click,
        rows,
    })
}
