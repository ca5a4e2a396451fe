//! Small exact-ish combinatorial helpers shared by the Fock engine and the
//! closed-form coefficient paths.

/// `n choose k` as f64. Exact for the photon numbers used here (n < 60).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// `ln(n!)` by direct summation; accurate to ~1e-13 relative for n up to 1e5.
pub fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// Iterates over all vectors `v` with `v[i] <= bound[i]`, in lexicographic order.
pub fn for_each_below<F: FnMut(&[usize])>(bound: &[usize], mut f: F) {
    let mut current = vec![0usize; bound.len()];
    loop {
        f(&current);
        let mut i = bound.len();
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if current[i] < bound[i] {
                current[i] += 1;
                for c in current.iter_mut().skip(i + 1) {
                    *c = 0;
                }
                break;
            }
        }
    }
}

/// Iterates over all compositions of `total` into `parts` non-negative integers.
pub fn for_each_composition<F: FnMut(&[usize])>(total: usize, parts: usize, mut f: F) {
    if parts == 0 {
        if total == 0 {
            f(&[]);
        }
        return;
    }
    let mut current = vec![0usize; parts];
    fn rec<F: FnMut(&[usize])>(current: &mut Vec<usize>, idx: usize, left: usize, f: &mut F) {
        if idx + 1 == current.len() {
            current[idx] = left;
            f(current);
            return;
        }
        for k in 0..=left {
            current[idx] = k;
            rec(current, idx + 1, left - k, f);
        }
    }
    rec(&mut current, 0, total, &mut f);
}
