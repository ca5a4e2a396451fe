//! Bounded scalar optimization: grid scan followed by golden-section refinement.

use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;
const MAX_ITERATIONS: usize = 500;

/// `points` log-spaced values covering `[lo, hi]` inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && points >= 2);
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                (a + (b - a) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Minimizes a unimodal `f` on `[a, b]` until the bracket is narrower than `tol`.
/// Returns `(x, f(x))`.
pub fn golden_section_min<F: FnMut(f64) -> f64>(
    mut f: F,
    mut a: f64,
    mut b: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..MAX_ITERATIONS {
        if (b - a).abs() <= tol {
            let x = 0.5 * (a + b);
            let fx = f(x);
            // Return the best point seen at the end, not just the midpoint.
            let best = [(x, fx), (c, fc), (d, fd)]
                .into_iter()
                .min_by(|p, q| p.1.total_cmp(&q.1))
                .expect("non-empty");
            return Ok(best);
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    Err(Error::NoConvergence(format!(
        "golden section bracket [{a}, {b}] still wider than {tol} after {MAX_ITERATIONS} iterations"
    )))
}
