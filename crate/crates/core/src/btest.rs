//! Executable hypothesis tests: the exact randomized Binomial test of
//! `H0: R_{P,n}(A) >= tau`, a sign-test analog for comparing two algorithms,
//! and a cross-validation threshold rule (no validity guarantee).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::cv_folds;
use crate::harness::{ModelPair, Round, Step, TestProtocol};
use crate::model::{ComparisonFn, Dataset, FittedModel, Loss, LossFn, Seed};
use crate::stats::binomial_pmf_all;

/// Randomized critical value: reject when `S < k_star`, or when
/// `S == k_star` and an independent uniform is at most `a_star`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalValue {
    pub k_star: u64,
    pub a_star: f64,
}

impl CriticalValue {
    pub fn rejects(&self, s: u64, zeta: Seed) -> bool {
        s < self.k_star || (s == self.k_star && zeta.value() <= self.a_star)
    }

    /// Rejection probability when `S ~ Bin(m, p)`.
    pub fn power(&self, m: u64, p: f64) -> f64 {
        let pmf = binomial_pmf_all(m, p);
        let k = self.k_star as usize;
        let below: f64 = pmf.iter().take(k).sum();
        let at = pmf.get(k).copied().unwrap_or(0.0);
        (below + self.a_star * at).min(1.0)
    }
}

const SNAP: f64 = 1e-12;

fn check_unit(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
    }
    Ok(())
}

/// The unique `(k*, a*)` with `P(Bin(m, tau) < k*) + a* P(Bin(m, tau) = k*) = alpha`
/// and `a* in [0, 1)`.
pub fn binomial_critical(m: u64, tau: f64, alpha: f64) -> Result<CriticalValue> {
    check_unit("tau", tau)?;
    check_unit("alpha", alpha)?;
    if m == 0 {
        return Err(Error::Config(
            "the Binomial test needs at least one batch".into(),
        ));
    }
    let pmf = binomial_pmf_all(m, tau);
    let mut below = 0.0;
    for (k, &p) in pmf.iter().enumerate() {
        if below + p > alpha {
            let a = ((alpha - below) / p).max(0.0);
            if a >= 1.0 - SNAP {
                return Ok(CriticalValue {
                    k_star: k as u64 + 1,
                    a_star: 0.0,
                });
            }
            return Ok(CriticalValue {
                k_star: k as u64,
                a_star: if a < SNAP { 0.0 } else { a },
            });
        }
        below += p;
    }
    // Only reachable if rounding made the total mass fall short of alpha.
    Ok(CriticalValue {
        k_star: m + 1,
        a_star: 0.0,
    })
}

/// Exact rejection probability of the Binomial test when the true risk is `r`.
pub fn binom_test_exact_power(m: u64, tau: f64, alpha: f64, r: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::Domain(format!("risk must lie in [0, 1], got {r}")));
    }
    Ok(binomial_critical(m, tau, alpha)?.power(m, r))
}

/// `min{alpha (1 + (tau - r)/(1 - tau))^m, 1}`, the exact power whenever
/// `alpha < (1 - tau)^m` (then `k* = 0`). `None` outside that regime.
pub fn binom_closed_form_power(m: u64, tau: f64, alpha: f64, r: f64) -> Option<f64> {
    if alpha < (1.0 - tau).powi(m as i32) {
        Some((alpha * (1.0 + (tau - r) / (1.0 - tau)).powi(m as i32)).min(1.0))
    } else {
        None
    }
}

#[derive(Clone, Debug)]
pub struct BinomTestConfig {
    pub n: usize,
    pub tau: f64,
    pub alpha: f64,
    pub loss: LossFn,
}

/// Splits the input into `m = floor(N / (n + 1))` consecutive batches, fits on
/// the first `n` points of each batch with fresh seeds, counts the losses on
/// the last points and applies the randomized critical value.
#[derive(Clone, Debug)]
pub struct BinomialTest {
    cfg: BinomTestConfig,
}

impl BinomialTest {
    pub fn new(cfg: BinomTestConfig) -> Result<Self> {
        check_unit("tau", cfg.tau)?;
        check_unit("alpha", cfg.alpha)?;
        if !cfg.loss.is_binary() {
            return Err(Error::Config(format!(
                "the Binomial test needs a {{0,1}}-valued loss, got `{}`",
                cfg.loss.name()
            )));
        }
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &BinomTestConfig {
        &self.cfg
    }

    pub fn batches(&self, data_len: usize) -> usize {
        data_len / (self.cfg.n + 1)
    }
}

pub fn binom_test_protocol(cfg: BinomTestConfig) -> Result<BinomialTest> {
    BinomialTest::new(cfg)
}

impl TestProtocol<FittedModel> for BinomialTest {
    fn name(&self) -> String {
        format!(
            "binomial(n={}, tau={}, alpha={})",
            self.cfg.n, self.cfg.tau, self.cfg.alpha
        )
    }

    fn max_rounds(&self, data_len: usize) -> usize {
        self.batches(data_len)
    }

    fn next(&self, data: &Dataset, history: &[Round<FittedModel>], zeta: Seed) -> Result<Step> {
        let width = self.cfg.n + 1;
        let m = self.batches(data.len());
        if m == 0 {
            return Err(Error::Config(format!(
                "N = {} is smaller than one batch of n + 1 = {width} points",
                data.len()
            )));
        }
        let r = history.len();
        if r < m {
            let start = r * width;
            return Ok(Step::Query {
                dataset: data[start..start + self.cfg.n].iter().copied().collect(),
                seed: zeta,
            });
        }
        let mut s = 0u64;
        for (j, round) in history.iter().enumerate() {
            let test = data[j * width + self.cfg.n];
            s += self.cfg.loss.eval(&round.models.predict(test.x), test.y)? as u64;
        }
        let cv = binomial_critical(m as u64, self.cfg.tau, self.cfg.alpha)?;
        Ok(Step::Decide(cv.rejects(s, zeta)))
    }
}

/// Batched sign test for comparisons: each batch scores
/// `psi in {-1, 0, 1}` on its held-out point; conditional on the `t` nonzero
/// outcomes, the number of `-1`s is tested against `Bin(t, 1/2)` with a
/// randomized exact test. Rejection is evidence that algorithm 1 is better.
#[derive(Clone, Debug)]
pub struct CompareBinomialTest {
    pub n: usize,
    pub alpha: f64,
    psi: ComparisonFn,
}

impl CompareBinomialTest {
    pub fn new(n: usize, alpha: f64, psi: ComparisonFn) -> Result<Self> {
        check_unit("alpha", alpha)?;
        if !matches!(psi, ComparisonFn::LossOrderIndicator(_)) {
            return Err(Error::Config(format!(
                "the comparison sign test needs a loss-order indicator, got `{}`",
                psi.name()
            )));
        }
        Ok(Self { n, alpha, psi })
    }

    pub fn psi(&self) -> &ComparisonFn {
        &self.psi
    }

    pub fn batches(&self, data_len: usize) -> usize {
        data_len / (self.n + 1)
    }
}

pub fn compare_binom_protocol(
    n: usize,
    alpha: f64,
    psi: ComparisonFn,
) -> Result<CompareBinomialTest> {
    CompareBinomialTest::new(n, alpha, psi)
}

impl TestProtocol<ModelPair> for CompareBinomialTest {
    fn name(&self) -> String {
        format!("compare-sign(n={}, alpha={})", self.n, self.alpha)
    }

    fn max_rounds(&self, data_len: usize) -> usize {
        self.batches(data_len)
    }

    fn next(&self, data: &Dataset, history: &[Round<ModelPair>], zeta: Seed) -> Result<Step> {
        let width = self.n + 1;
        let m = self.batches(data.len());
        if m == 0 {
            return Err(Error::Config(format!(
                "N = {} is smaller than one batch of n + 1 = {width} points",
                data.len()
            )));
        }
        let r = history.len();
        if r < m {
            let start = r * width;
            return Ok(Step::Query {
                dataset: data[start..start + self.n].iter().copied().collect(),
                seed: zeta,
            });
        }
        let (mut plus, mut minus) = (0u64, 0u64);
        for (j, round) in history.iter().enumerate() {
            let test = data[j * width + self.n];
            let (f0, f1) = &round.models;
            let v = self
                .psi
                .eval(f0.predict(test.x), f1.predict(test.x), test.y)?;
            if v > 0.0 {
                plus += 1;
            } else if v < 0.0 {
                minus += 1;
            }
        }
        let t = plus + minus;
        if t == 0 {
            return Ok(Step::Decide(false));
        }
        let cv = binomial_critical(t, 0.5, self.alpha)?;
        Ok(Step::Decide(cv.rejects(minus, zeta)))
    }
}

/// Exact rejection probability of [`CompareBinomialTest`] with `m` batches
/// when each batch scores `+1` w.p. `p_plus` and `-1` w.p. `p_minus`.
pub fn compare_binom_exact_power(m: u64, p_plus: f64, p_minus: f64, alpha: f64) -> Result<f64> {
    check_unit("alpha", alpha)?;
    if p_plus < 0.0 || p_minus < 0.0 || p_plus + p_minus > 1.0 + 1e-12 {
        return Err(Error::Domain(format!(
            "invalid outcome probabilities ({p_plus}, {p_minus})"
        )));
    }
    let nonzero = (p_plus + p_minus).min(1.0);
    if nonzero == 0.0 {
        return Ok(0.0);
    }
    let q = p_minus / (p_plus + p_minus);
    let counts = binomial_pmf_all(m, nonzero);
    let mut power = 0.0;
    for (t, &pt) in counts.iter().enumerate().skip(1) {
        if pt > 0.0 {
            power += pt * binomial_critical(t as u64, 0.5, alpha)?.power(t as u64, q);
        }
    }
    Ok(power.min(1.0))
}

/// Rejects when the K-fold cross-validation estimate falls below `tau`.
/// A heuristic with no validity guarantee.
#[derive(Clone, Debug)]
pub struct CvThresholdTest {
    pub k: usize,
    pub tau: f64,
    pub loss: LossFn,
}

pub fn cv_threshold_protocol(k: usize, tau: f64, loss: LossFn) -> CvThresholdTest {
    CvThresholdTest { k, tau, loss }
}

impl TestProtocol<FittedModel> for CvThresholdTest {
    fn name(&self) -> String {
        format!("cv-threshold(K={}, tau={})", self.k, self.tau)
    }

    fn max_rounds(&self, _data_len: usize) -> usize {
        self.k
    }

    fn next(&self, data: &Dataset, history: &[Round<FittedModel>], zeta: Seed) -> Result<Step> {
        let folds = cv_folds(data.len(), self.k)?;
        let r = history.len();
        if r < folds.len() {
            let (start, end) = folds[r];
            return Ok(Step::Query {
                dataset: data[..start].iter().chain(&data[end..]).copied().collect(),
                seed: zeta,
            });
        }
        let mut total = 0.0;
        for (round, &(start, end)) in history.iter().zip(&folds) {
            for pt in &data[start..end] {
                total += self.loss.eval(&round.models.predict(pt.x), pt.y)?;
            }
        }
        Ok(Step::Decide(total / (data.len() as f64) < self.tau))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalRow {
    pub m: u64,
    pub tau: f64,
    pub alpha: f64,
    pub k_star: u64,
    pub a_star: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub power: f64,
}

/// One row per `(m, tau, alpha, R)` combination, in nested order.
pub fn critical_table(
    ms: &[u64],
    taus: &[f64],
    alphas: &[f64],
    risks: &[f64],
) -> Result<Vec<CriticalRow>> {
    let mut rows = Vec::new();
    for &m in ms {
        for &tau in taus {
            for &alpha in alphas {
                let cv = binomial_critical(m, tau, alpha)?;
                for &r in risks {
                    rows.push(CriticalRow {
                        m,
                        tau,
                        alpha,
                        k_star: cv.k_star,
                        a_star: cv.a_star,
                        r,
                        power: cv.power(m, r),
                    });
                }
            }
        }
    }
    Ok(rows)
}

pub fn write_critical_csv<W: Write>(out: W, rows: &[CriticalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
