//! Closed-form limits on the power of any valid black-box test.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs shared by the power bounds. For the comparison bound `r` is the
/// comparison risk `Delta` and `r_max` is `Delta_max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub alpha: f64,
    pub tau: f64,
    /// Total sample size `N`.
    pub big_n: f64,
    /// Training size `n`.
    pub n: f64,
    pub r: f64,
    pub r_max: f64,
    /// Loss or comparison bound `B`.
    pub b: f64,
}

fn check_common(alpha: f64, big_n: f64, n: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if !(big_n >= 1.0 && n >= 1.0) {
        return Err(Error::Domain(format!(
            "need N, n >= 1, got N = {big_n}, n = {n}"
        )));
    }
    Ok(())
}

/// `tau (1 + (1/alpha - 1) / N)`.
pub fn tilde_tau(tau: f64, alpha: f64, big_n: f64) -> f64 {
    tau * (1.0 + (1.0 / alpha - 1.0) / big_n)
}

/// `min{alpha (1 + (tilde_tau - R)/(Rmax - tilde_tau))^(N/n), 1}`, valid for
/// `tilde_tau < Rmax`. The bound concerns alternatives `R < tau`; it is also
/// evaluated up to `R = tilde_tau`, where it equals `alpha`.
pub fn eval_power_bound(inp: &BoundInputs) -> Result<f64> {
    check_common(inp.alpha, inp.big_n, inp.n)?;
    let tt = tilde_tau(inp.tau, inp.alpha, inp.big_n);
    if !(inp.r <= tt) {
        return Err(Error::Domain(format!(
            "the bound concerns alternatives R < tau; got R = {} above tilde_tau = {tt}",
            inp.r
        )));
    }
    if !(tt < inp.r_max) {
        return Err(Error::Domain(format!(
            "proviso tilde_tau < Rmax violated: tilde_tau = {tt}, Rmax = {}",
            inp.r_max
        )));
    }
    let base = 1.0 + (tt - inp.r) / (inp.r_max - tt);
    Ok((inp.alpha * base.powf(inp.big_n / inp.n)).min(1.0))
}

/// `B (1/alpha - 1) / N`, the comparison analog of `tilde_tau - tau`.
pub fn compare_slack(b: f64, alpha: f64, big_n: f64) -> f64 {
    b * (1.0 / alpha - 1.0) / big_n
}

/// `min{alpha (1 + (Delta + s)/(Delta_max - s))^(N/n), 1}` with
/// `s = B (1/alpha - 1)/N`, valid for `Delta_max > s`.
pub fn compare_power_bound(inp: &BoundInputs) -> Result<f64> {
    check_common(inp.alpha, inp.big_n, inp.n)?;
    if !(inp.b > 0.0) {
        return Err(Error::Domain(format!("B must be positive, got {}", inp.b)));
    }
    let s = compare_slack(inp.b, inp.alpha, inp.big_n);
    if !(inp.r_max > s) {
        return Err(Error::Domain(format!(
            "proviso Delta_max > B(1/alpha - 1)/N violated: Delta_max = {}, B(1/alpha - 1)/N = {s}",
            inp.r_max
        )));
    }
    let base = 1.0 + (inp.r + s) / (inp.r_max - s);
    Ok((inp.alpha * base.powf(inp.big_n / inp.n)).min(1.0))
}

/// `(2 n beta_1, sqrt(n) beta_2)`: bounds on the first and second absolute
/// moments of `R_P(f_n) - R_{P,n}(A)` for deterministic algorithms.
pub fn prop1_bounds(n: usize, beta1: f64, beta2: f64) -> Result<(f64, f64)> {
    if beta1 < 0.0 || beta2 < 0.0 {
        return Err(Error::Domain(
            "stability parameters must be nonnegative".into(),
        ));
    }
    Ok((2.0 * n as f64 * beta1, (n as f64).sqrt() * beta2))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Consistency,
    Impossibility,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Consistency => "consistency",
            Regime::Impossibility => "impossibility",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub regime: Regime,
    /// `k B / n^{1/q}` with `k = 2`, or `k = 4` for the comparison variant.
    pub threshold: f64,
    /// `gamma_q / threshold`; at least 1 exactly in the impossibility regime.
    pub margin: f64,
}

/// `n^{1/q}` for `q in {1, 2}`.
fn root(n: usize, q: u32) -> Result<f64> {
    match q {
        1 => Ok(n as f64),
        2 => Ok((n as f64).sqrt()),
        _ => Err(Error::Domain(format!("q must be 1 or 2, got {q}"))),
    }
}

/// Classify a stability level: impossibility iff `gamma_q >= k B / n^{1/q}`
/// (`k = 2`, or `4` when `comparison` is set).
pub fn regime_classify(
    gamma_q: f64,
    q: u32,
    n: usize,
    b: f64,
    comparison: bool,
) -> Result<RegimeReport> {
    if gamma_q < 0.0 || !(b > 0.0) || n == 0 {
        return Err(Error::Domain("need gamma_q >= 0, B > 0 and n >= 1".into()));
    }
    let k = if comparison { 4.0 } else { 2.0 };
    let threshold = k * b / root(n, q)?;
    let regime = if gamma_q >= threshold {
        Regime::Impossibility
    } else {
        Regime::Consistency
    };
    Ok(RegimeReport {
        regime,
        threshold,
        margin: gamma_q * root(n, q)? / (k * b),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub alpha: f64,
    pub tau: f64,
    #[serde(rename = "N")]
    pub big_n: f64,
    pub n: f64,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Rmax")]
    pub r_max: f64,
    pub tilde_tau: f64,
    pub bound: f64,
}

impl BoundRow {
    pub fn new(inp: &BoundInputs) -> Result<Self> {
        Ok(Self {
            alpha: inp.alpha,
            tau: inp.tau,
            big_n: inp.big_n,
            n: inp.n,
            r: inp.r,
            r_max: inp.r_max,
            tilde_tau: tilde_tau(inp.tau, inp.alpha, inp.big_n),
            bound: eval_power_bound(inp)?,
        })
    }
}

pub fn write_bound_csv<W: Write>(out: W, rows: &[BoundRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(alpha: f64, tau: f64, big_n: f64, n: f64, r: f64, r_max: f64) -> Result<f64> {
        eval_power_bound(&BoundInputs {
            alpha,
            tau,
            big_n,
            n,
            r,
            r_max,
            b: 1.0,
        })
    }

    #[test]
    fn tilde_tau_examples() {
        assert_eq!(tilde_tau(0.4, 1.0, 7.0), 0.4);
        assert!((tilde_tau(0.5, 0.05, 100.0) - 0.595).abs() < 1e-15);
        let mut last = f64::INFINITY;
        for big_n in [1.0, 10.0, 100.0, 1e4, 1e8] {
            let t = tilde_tau(0.5, 0.05, big_n);
            assert!(t < last);
            last = t;
        }
        assert!((last - 0.5).abs() < 1e-6);
    }

    #[test]
    fn eval_bound_examples() {
        let tt = tilde_tau(0.5, 0.05, 100.0);
        assert_eq!(eval(0.05, 0.5, 100.0, 100.0, tt, 1.0).unwrap(), 0.05);
        let v = eval(0.05, 0.5, 100.0, 100.0, 0.0, 1.0).unwrap();
        assert!((v - 0.05 * (1.0 + 0.595 / 0.405)).abs() < 1e-12);
        assert!((v - 0.123457).abs() < 1e-6);
        assert_eq!(eval(0.05, 0.5, 1000.0, 1.0, 0.0, 1.0).unwrap(), 1.0);
        assert!(eval(0.05, 0.5, 4.0, 4.0, 0.0, 1.0).is_err());
        assert!(eval(0.05, 0.5, 100.0, 100.0, 0.6, 1.0).is_err());
        // Nondecreasing as R decreases, as N grows, and as Rmax falls toward tilde_tau.
        let mut last = 0.0;
        for r in [0.45, 0.3, 0.1, 0.0] {
            let v = eval(0.1, 0.5, 20.0, 5.0, r, 1.0).unwrap();
            assert!(v >= last);
            last = v;
        }
        let mut last = 0.0;
        for big_n in [10.0, 20.0, 40.0, 80.0] {
            let v = eval(0.1, 0.5, big_n, 5.0, 0.2, 1.0).unwrap();
            assert!(v >= last);
            last = v;
        }
        let mut last = 0.0;
        for r_max in [1.0, 0.9, 0.8, 0.75] {
            let v = eval(0.1, 0.5, 20.0, 5.0, 0.2, r_max).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn compare_bound_examples() {
        let inp = BoundInputs {
            alpha: 0.05,
            tau: 0.0,
            big_n: 100.0,
            n: 100.0,
            r: 0.2,
            r_max: 1.0,
            b: 1.0,
        };
        let v = compare_power_bound(&inp).unwrap();
        assert!((v - 0.05 * (1.0 + 0.39 / 0.81)).abs() < 1e-12);
        assert!((v - 0.0740741).abs() < 1e-7);
        let zero = BoundInputs { r: -0.19, ..inp };
        assert!((compare_power_bound(&zero).unwrap() - 0.05).abs() < 1e-15);
        let big = BoundInputs {
            n: 1.0,
            big_n: 1000.0,
            ..inp
        };
        assert_eq!(compare_power_bound(&big).unwrap(), 1.0);
        let bad = BoundInputs { r_max: 0.1, ..inp };
        assert!(compare_power_bound(&bad).is_err());
    }

    #[test]
    fn prop1_examples() {
        assert_eq!(prop1_bounds(4, 0.0, 0.0).unwrap(), (0.0, 0.0));
        assert_eq!(prop1_bounds(4, 0.1, 0.5).unwrap(), (0.8, 1.0));
    }

    #[test]
    fn regime_examples() {
        let r = regime_classify(0.0, 1, 10, 1.0, false).unwrap();
        assert_eq!((r.regime, r.margin), (Regime::Consistency, 0.0));
        let r = regime_classify(0.02, 1, 100, 1.0, false).unwrap();
        assert_eq!(r.regime, Regime::Impossibility);
        assert!((r.margin - 1.0).abs() < 1e-15);
        let r = regime_classify(0.1, 2, 100, 1.0, false).unwrap();
        assert_eq!(r.regime, Regime::Consistency);
        assert!((r.margin - 0.5).abs() < 1e-15);
        assert!((r.threshold - 0.2).abs() < 1e-15);
        let r = regime_classify(0.3, 2, 100, 1.0, true).unwrap();
        assert_eq!(r.regime, Regime::Consistency);
        assert!((r.threshold - 0.4).abs() < 1e-15);
    }
}
