//! Exact binomial arithmetic and binomial confidence intervals.

/// `P(Bin(m, p) = k)` for every `k = 0..=m`, computed in log space.
pub fn binomial_pmf_all(m: u64, p: f64) -> Vec<f64> {
    let len = m as usize + 1;
    if p <= 0.0 {
        let mut v = vec![0.0; len];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; len];
        v[len - 1] = 1.0;
        return v;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut ln_choose = 0.0;
    let mut out = Vec::with_capacity(len);
    for k in 0..=m {
        if k > 0 {
            ln_choose += ((m - k + 1) as f64 / k as f64).ln();
        }
        out.push((ln_choose + k as f64 * lp + (m - k) as f64 * lq).exp());
    }
    out
}

/// `(P(Bin(m, p) = k), P(Bin(m, p) <= k))`. Negative `k` gives `(0, 0)`.
pub fn binomial_pmf_cdf(m: u64, p: f64, k: i64) -> (f64, f64) {
    if k < 0 {
        return (0.0, 0.0);
    }
    if k as u64 >= m {
        let pmf = if k as u64 == m {
            *binomial_pmf_all(m, p).last().unwrap()
        } else {
            0.0
        };
        return (pmf, 1.0);
    }
    let terms = binomial_pmf_all(m, p);
    let k = k as usize;
    let cdf: f64 = terms[..=k].iter().sum();
    (terms[k], cdf.min(1.0))
}

pub fn binomial_pmf(m: u64, p: f64, k: i64) -> f64 {
    binomial_pmf_cdf(m, p, k).0
}

pub fn binomial_cdf(m: u64, p: f64, k: i64) -> f64 {
    binomial_pmf_cdf(m, p, k).1
}

fn bisect(mut lo: f64, mut hi: f64, decreasing: impl Fn(f64) -> f64, target: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if decreasing(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) two-sided 95% interval for a binomial proportion.
pub fn clopper_pearson(hits: u64, trials: u64) -> (f64, f64) {
    clopper_pearson_level(hits, trials, 0.05)
}

pub fn clopper_pearson_level(hits: u64, trials: u64, alpha: f64) -> (f64, f64) {
    assert!(
        trials > 0 && hits <= trials,
        "need 0 <= hits <= trials, trials > 0"
    );
    let half = alpha / 2.0;
    let lower = if hits == 0 {
        0.0
    } else {
        // P(Bin >= hits) is increasing in p; solve P(Bin <= hits - 1) = 1 - half.
        bisect(
            0.0,
            1.0,
            |p| binomial_cdf(trials, p, hits as i64 - 1),
            1.0 - half,
        )
    };
    let upper = if hits == trials {
        1.0
    } else {
        bisect(0.0, 1.0, |p| binomial_cdf(trials, p, hits as i64), half)
    };
    (lower, upper)
}

/// Mean and standard error (sample standard deviation over `sqrt(len)`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pmf_cdf_examples() {
        let (pmf, cdf) = binomial_pmf_cdf(3, 0.5, 0);
        assert!((pmf - 0.125).abs() < 1e-15 && (cdf - 0.125).abs() < 1e-15);
        assert_eq!(binomial_pmf_cdf(7, 0.0, 0), (1.0, 1.0));
        let (pmf, _) = binomial_pmf_cdf(10, 0.2, 0);
        assert!((pmf - 0.1073741824).abs() < 1e-15);
        assert_eq!(binomial_pmf_cdf(4, 0.3, -1), (0.0, 0.0));
        assert_eq!(binomial_pmf_cdf(4, 0.3, 9), (0.0, 1.0));
        assert_eq!(binomial_pmf_cdf(4, 1.0, 4), (1.0, 1.0));
    }

    #[test]
    fn clopper_pearson_values() {
        // 0 of 1000: upper bound solves (1 - u)^1000 = 0.025.
        let (lo, hi) = clopper_pearson(0, 1000);
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(1.0 / 1000.0))).abs() < 1e-12);
        assert!(hi < 0.005);
        let (lo, hi) = clopper_pearson(1000, 1000);
        assert_eq!(hi, 1.0);
        assert!((lo - 0.025f64.powf(1.0 / 1000.0)).abs() < 1e-12);
        let (lo, hi) = clopper_pearson(50, 100);
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn mean_stderr_basic() {
        assert_eq!(mean_stderr(&[1.0, 1.0, 1.0]), (1.0, 0.0));
        let (m, s) = mean_stderr(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((s - 0.5).abs() < 1e-15);
    }
}
