//! Constructive versions of the hard instances behind the power limits.
//!
//! Each builder takes an algorithm and a distribution where the alternative
//! holds, finds a point the test essentially never sees, tilts the
//! distribution toward it and patches the algorithm to misbehave only when
//! that point is in the training set. The result is a null instance that the
//! test can barely tell apart from the original; every bundle is released only
//! after its null membership has been checked numerically.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;

use crate::bounds::{compare_slack, tilde_tau};
use crate::dist::{
    conditional_without_atom, default_prediction_space, inject_atom, max_delta, max_risk,
    total_variation, MaximalCoupling,
};
use crate::error::{Error, Result};
use crate::estimate::{
    algorithm_risk_exact, algorithm_risk_mc, delta_exact, delta_mc, pair_stability_exact,
    pair_stability_mc, stability_exact, stability_mc, Estimate, StabilityEstimate, StabilityMode,
};
use crate::harness::{
    find_rare_point, find_rare_point_compare, run_compare_test_seeded, run_test_seeded,
    AppearanceEstimate, ModelPair, RejectionRate, TestProtocol,
};
use crate::model::{
    Algorithm, AlgorithmHandle, ComparisonFn, DataPoint, Dataset, FittedModel, Loss, LossFn, Seed,
};
use crate::rng::{run_trials, TrialStreams};
use crate::stats::mean_stderr;

/// Safety factor keeping the chosen mixture weight strictly feasible.
pub const SAFETY_ETA: f64 = 1e-3;

/// Minimum number of trials accepted by the coupling demos.
pub const MIN_COUPLING_TRIALS: u64 = 1_000;

fn check_c_inputs(alpha: f64, big_n: f64, n: f64) -> Result<()> {
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

/// Mixture weight for the evaluation construction:
/// `1 - c = (1 - eta) ((Rmax - tilde_tau)/(Rmax - R))^(1/n)`.
pub fn choose_c(alpha: f64, tau: f64, big_n: f64, n: f64, r: f64, r_max: f64) -> Result<f64> {
    check_c_inputs(alpha, big_n, n)?;
    let tt = tilde_tau(tau, alpha, big_n);
    if !(tt < r_max) {
        return Err(Error::Domain(format!(
            "infeasible: proviso tilde_tau < Rmax violated (tilde_tau = {tt}, Rmax = {r_max})"
        )));
    }
    if !(r <= tt) {
        return Err(Error::Domain(format!(
            "infeasible: R = {r} exceeds tilde_tau = {tt}; the construction needs R < tau"
        )));
    }
    let ratio = (r_max - tt) / (r_max - r);
    Ok(1.0 - (1.0 - SAFETY_ETA) * ratio.powf(1.0 / n))
}

/// Mixture weight for the comparison construction:
/// `1 - c = (1 - eta) ((Delta_max - s)/(Delta_max + Delta))^(1/n)` with
/// `s = B (1/alpha - 1)/N`.
pub fn choose_c_compare(
    alpha: f64,
    b: f64,
    big_n: f64,
    n: f64,
    delta: f64,
    delta_max: f64,
) -> Result<f64> {
    check_c_inputs(alpha, big_n, n)?;
    let s = compare_slack(b, alpha, big_n);
    if !(delta_max > s) {
        return Err(Error::Domain(format!(
            "infeasible: proviso Delta_max > B(1/alpha - 1)/N violated (Delta_max = {delta_max}, slack = {s})"
        )));
    }
    if !(delta >= -s) {
        return Err(Error::Domain(format!(
            "infeasible: Delta = {delta} lies below -B(1/alpha - 1)/N = {}",
            -s
        )));
    }
    let ratio = (delta_max - s) / (delta_max + delta);
    Ok(1.0 - (1.0 - SAFETY_ETA) * ratio.powf(1.0 / n))
}

/// Behaves as `inner` unless the rare point is in the training set, in which
/// case it returns `f_star`.
pub struct PatchedAlgorithm<A: Algorithm> {
    inner: A,
    rare: DataPoint,
    f_star: FittedModel<A::Prediction>,
}

impl<A: Algorithm> PatchedAlgorithm<A> {
    pub fn new(inner: A, rare: DataPoint, f_star: FittedModel<A::Prediction>) -> Self {
        Self {
            inner,
            rare,
            f_star,
        }
    }

    pub fn rare_point(&self) -> DataPoint {
        self.rare
    }

    pub fn f_star(&self) -> &FittedModel<A::Prediction> {
        &self.f_star
    }
}

impl<A: Algorithm> Algorithm for PatchedAlgorithm<A> {
    type Prediction = A::Prediction;

    fn name(&self) -> String {
        format!("{}+patch{}", self.inner.name(), self.rare)
    }

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<FittedModel<Self::Prediction>> {
        if data.contains(&self.rare) {
            Ok(self.f_star.clone())
        } else {
            self.inner.fit(data, seed)
        }
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

pub fn patch_algorithm(
    alg: AlgorithmHandle,
    rare: DataPoint,
    f_star: FittedModel,
) -> AlgorithmHandle {
    Arc::new(PatchedAlgorithm::new(alg, rare, f_star))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    Evaluation,
    Unbounded,
    Comparison,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtLeast,
    AtMost,
}

/// One numerical check on a constructed instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Zero for exact checks.
    pub stderr: f64,
    pub relation: Relation,
    pub target: f64,
    pub exact: bool,
    /// Distance to the target in the passing direction; negative on failure.
    /// Monte Carlo checks get a `4 * stderr` allowance.
    pub slack: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: impl Into<String>, est: &Estimate, relation: Relation, target: f64) -> Self {
        let allowance = if est.is_exact() {
            0.0
        } else {
            4.0 * est.stderr
        };
        let slack = match relation {
            Relation::AtLeast => est.value - target + allowance,
            Relation::AtMost => target - est.value + allowance,
        };
        Self {
            name: name.into(),
            value: est.value,
            stderr: est.stderr,
            relation,
            target,
            exact: est.is_exact(),
            slack,
            passed: slack >= 0.0,
        }
    }

    fn describe(&self) -> String {
        let op = match self.relation {
            Relation::AtLeast => ">=",
            Relation::AtMost => "<=",
        };
        let how = if self.exact {
            "exact"
        } else {
            "Monte Carlo, 4 sigma"
        };
        format!(
            "{}: {} {op} {} fails by {} ({how})",
            self.name, self.value, self.target, -self.slack
        )
    }
}

/// Numerical knobs of the builders.
#[derive(Clone, Debug, PartialEq)]
pub struct AdversaryOptions {
    /// Stability exponent for the stability check.
    pub q: u32,
    /// Stability level to preserve; defaults to
    /// `max(k B / n^{1/q}, beta_q of the original instance)`.
    pub gamma_q: Option<f64>,
    /// Test runs per rare-point candidate.
    pub appearance_trials: u64,
    /// Trials for Monte Carlo fallbacks when exact enumeration is over budget.
    pub mc_trials: u64,
    pub master_seed: u64,
    pub workers: Option<usize>,
    /// Prediction space for the extremal witnesses; defaults to the label
    /// support plus `{0, 1}`.
    pub prediction_space: Option<Vec<f64>>,
}

impl Default for AdversaryOptions {
    fn default() -> Self {
        Self {
            q: 1,
            gamma_q: None,
            appearance_trials: 1_000,
            mc_trials: 100_000,
            master_seed: 0,
            workers: None,
            prediction_space: None,
        }
    }
}

impl AdversaryOptions {
    fn streams(&self, id: u64) -> TrialStreams {
        TrialStreams::new(self.master_seed).substream(id)
    }

    fn space(&self, dist: &crate::dist::FiniteDistribution) -> Vec<f64> {
        self.prediction_space
            .clone()
            .unwrap_or_else(|| default_prediction_space(dist))
    }
}

/// Parameters of a construction, as recorded in its audit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdversaryInputs {
    pub alpha: Option<f64>,
    /// `tau` for evaluation; `0` for comparison, whose null is `Delta <= 0`.
    pub tau: f64,
    #[serde(rename = "N")]
    pub big_n: Option<usize>,
    pub n: usize,
    /// `R_{P,n}(A)`, or `Delta_{P,n}` for comparison.
    #[serde(rename = "R")]
    pub r: f64,
    /// `R_P^max`, or `Delta_P^max` for comparison.
    #[serde(rename = "Rmax")]
    pub r_max: Option<f64>,
    /// `tilde_tau`, or the comparison slack `B(1/alpha - 1)/N`.
    pub threshold: Option<f64>,
    #[serde(rename = "B")]
    pub b: f64,
    pub q: Option<u32>,
    pub gamma_q: Option<f64>,
    /// Perturbation mass of the unbounded construction.
    pub delta: Option<f64>,
}

#[derive(Clone)]
pub enum PatchedAlgorithms {
    Single {
        alg: AlgorithmHandle,
        f_star: FittedModel,
    },
    /// `alg0` returns `f1` and `alg1` returns `f0` on the rare point.
    Pair {
        alg0: AlgorithmHandle,
        alg1: AlgorithmHandle,
        f0: FittedModel,
        f1: FittedModel,
    },
}

impl std::fmt::Debug for PatchedAlgorithms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PatchedAlgorithms::Single { alg, f_star } => f
                .debug_struct("Single")
                .field("alg", &alg.name())
                .field("f_star", f_star)
                .finish(),
            PatchedAlgorithms::Pair { alg0, alg1, f0, f1 } => f
                .debug_struct("Pair")
                .field("alg0", &alg0.name())
                .field("alg1", &alg1.name())
                .field("f0", f0)
                .field("f1", f1)
                .finish(),
        }
    }
}

/// A tilted distribution, a patched algorithm (or pair) and the checks that
/// certify null membership.
#[derive(Clone, Debug)]
pub struct AdversaryBundle {
    pub kind: AdversaryKind,
    pub patched: PatchedAlgorithms,
    pub base_dist: crate::dist::FiniteDistribution,
    pub tilted_dist: crate::dist::FiniteDistribution,
    pub rare_point: DataPoint,
    /// Mixture mass moved to the perturbation.
    pub c: f64,
    /// `TV(P, P')`.
    pub tv: f64,
    /// Appearance level targeted for the rare point.
    pub epsilon: f64,
    pub appearance: Option<AppearanceEstimate>,
    pub inputs: AdversaryInputs,
    /// Whether `(1 - c)^N >= alpha`, the case the risk argument needs; in the
    /// other case the power limit holds trivially.
    pub nontrivial: Option<bool>,
    pub verification: Vec<Check>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AdversaryAudit {
    pub kind: AdversaryKind,
    pub patched_algorithms: Vec<String>,
    pub f_star: Vec<String>,
    pub rare_point: DataPoint,
    pub c: f64,
    pub tv: f64,
    pub epsilon: f64,
    pub appearance: Option<AppearanceEstimate>,
    pub inputs: AdversaryInputs,
    pub nontrivial: Option<bool>,
    pub tilted_dist: serde_json::Value,
    pub verification: Vec<Check>,
    pub verified: bool,
}

impl AdversaryBundle {
    pub fn single(&self) -> Option<&AlgorithmHandle> {
        match &self.patched {
            PatchedAlgorithms::Single { alg, .. } => Some(alg),
            PatchedAlgorithms::Pair { .. } => None,
        }
    }

    pub fn pair(&self) -> Option<(&AlgorithmHandle, &AlgorithmHandle)> {
        match &self.patched {
            PatchedAlgorithms::Pair { alg0, alg1, .. } => Some((alg0, alg1)),
            PatchedAlgorithms::Single { .. } => None,
        }
    }

    pub fn is_verified(&self) -> bool {
        !self.verification.is_empty() && self.verification.iter().all(|c| c.passed)
    }

    pub fn audit(&self) -> Result<AdversaryAudit> {
        let (patched_algorithms, f_star) = match &self.patched {
            PatchedAlgorithms::Single { alg, f_star } => {
                (vec![alg.name()], vec![f_star.descriptor().to_string()])
            }
            PatchedAlgorithms::Pair { alg0, alg1, f0, f1 } => (
                vec![alg0.name(), alg1.name()],
                vec![f0.descriptor().to_string(), f1.descriptor().to_string()],
            ),
        };
        Ok(AdversaryAudit {
            kind: self.kind,
            patched_algorithms,
            f_star,
            rare_point: self.rare_point,
            c: self.c,
            tv: self.tv,
            epsilon: self.epsilon,
            appearance: self.appearance.clone(),
            inputs: self.inputs.clone(),
            nontrivial: self.nontrivial,
            tilted_dist: self.tilted_dist.to_json_value()?,
            verification: self.verification.clone(),
            verified: self.is_verified(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.audit()?)?)
    }

    /// Release the bundle if every check passed, else report the failures.
    fn release(self) -> Result<Self> {
        let failed: Vec<String> = self
            .verification
            .iter()
            .filter(|c| !c.passed)
            .map(Check::describe)
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(Error::Verification(failed.join("; ")))
        }
    }
}

fn root(n: usize, q: u32) -> Result<f64> {
    match q {
        1 => Ok(n as f64),
        2 => Ok((n as f64).sqrt()),
        _ => Err(Error::Config(format!("q must be 1 or 2, got {q}"))),
    }
}

fn or_mc<T>(exact: Result<T>, mc: impl FnOnce() -> Result<T>) -> Result<T> {
    match exact {
        Err(Error::Budget { .. }) => mc(),
        other => other,
    }
}

fn risk_of<A, L>(
    alg: &A,
    dist: &crate::dist::FiniteDistribution,
    n: usize,
    loss: &L,
    opts: &AdversaryOptions,
    id: u64,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    or_mc(algorithm_risk_exact(alg, dist, n, loss), || {
        algorithm_risk_mc(
            alg,
            dist,
            n,
            loss,
            opts.mc_trials,
            opts.streams(id),
            opts.workers,
        )
    })
}

fn stability_of<A, L>(
    alg: &A,
    dist: &crate::dist::FiniteDistribution,
    n: usize,
    loss: &L,
    opts: &AdversaryOptions,
    id: u64,
) -> Result<StabilityEstimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    or_mc(stability_exact(alg, dist, n, opts.q, loss), || {
        stability_mc(
            alg,
            dist,
            n,
            opts.q,
            loss,
            StabilityMode::AllIndices,
            opts.mc_trials,
            opts.streams(id),
            opts.workers,
        )
    })
}

fn pair_stability_of<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &crate::dist::FiniteDistribution,
    n: usize,
    opts: &AdversaryOptions,
    id: u64,
) -> Result<StabilityEstimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    or_mc(
        pair_stability_exact(alg0, alg1, psi, dist, n, opts.q),
        || {
            pair_stability_mc(
                alg0,
                alg1,
                psi,
                dist,
                n,
                opts.q,
                opts.mc_trials,
                opts.streams(id),
                opts.workers,
            )
        },
    )
}

/// Build the tilted instance for an evaluation test with a bounded loss and
/// verify `R_{P',n}(A') >= tau` and `beta_q(A', P', n) <= gamma_q`.
///
/// The rare point is searched for with `protocol` run on `N`-point samples
/// from `dist`; `epsilon` bounds its appearance probability.
#[allow(clippy::too_many_arguments)]
pub fn build_eval_adversary<R: RngCore + ?Sized>(
    alg: &AlgorithmHandle,
    dist: &crate::dist::FiniteDistribution,
    loss: &LossFn,
    tau: f64,
    alpha: f64,
    big_n: usize,
    n: usize,
    protocol: &dyn TestProtocol<FittedModel>,
    epsilon: f64,
    rng: &mut R,
    opts: &AdversaryOptions,
) -> Result<AdversaryBundle> {
    let b = loss.bound();
    if !b.is_finite() {
        return Err(Error::Domain(format!(
            "{} loss is unbounded; use the unbounded construction",
            loss.name()
        )));
    }
    let r = risk_of(alg, dist, n, loss, opts, 0)?;
    if !(r.value < tau) {
        return Err(Error::Domain(format!(
            "precondition R_{{P,n}}(A) < tau fails: R = {} >= tau = {tau}",
            r.value
        )));
    }
    let extremal = max_risk(dist, loss, &opts.space(dist))?;
    let c = choose_c(alpha, tau, big_n as f64, n as f64, r.value, extremal.value)?;
    let appearance = find_rare_point(
        protocol,
        alg,
        dist,
        big_n,
        epsilon,
        opts.appearance_trials,
        rng,
        opts.workers,
    )?;
    let rare = appearance.point;

    let base = conditional_without_atom(dist, &rare)?;
    let tilted = inject_atom(&base, rare, c)?;
    let patched = patch_algorithm(alg.clone(), rare, extremal.witness.clone());

    let gamma_q = match opts.gamma_q {
        Some(g) => g,
        None => {
            let beta = stability_of(alg, dist, n, loss, opts, 1)?;
            (2.0 * b / root(n, opts.q)?).max(beta.value())
        }
    };
    let risk_after = risk_of(&patched, &tilted, n, loss, opts, 2)?;
    let beta_after = stability_of(&patched, &tilted, n, loss, opts, 3)?;
    let verification = vec![
        Check::new("R_{P',n}(A') >= tau", &risk_after, Relation::AtLeast, tau),
        Check::new(
            format!("beta_{}(A', P', n) <= gamma_{}", opts.q, opts.q),
            &beta_after.estimate,
            Relation::AtMost,
            gamma_q,
        ),
    ];
    AdversaryBundle {
        kind: AdversaryKind::Evaluation,
        patched: PatchedAlgorithms::Single {
            alg: patched,
            f_star: extremal.witness,
        },
        tv: total_variation(dist, &tilted),
        base_dist: dist.clone(),
        tilted_dist: tilted,
        rare_point: rare,
        c,
        epsilon,
        appearance: Some(appearance),
        inputs: AdversaryInputs {
            alpha: Some(alpha),
            tau,
            big_n: Some(big_n),
            n,
            r: r.value,
            r_max: Some(extremal.value),
            threshold: Some(tilde_tau(tau, alpha, big_n as f64)),
            b,
            q: Some(opts.q),
            gamma_q: Some(gamma_q),
            delta: None,
        },
        nontrivial: Some((1.0 - c).powf(big_n as f64) >= alpha),
        verification,
    }
    .release()
}

/// `tau / ((1 - (1 - delta/2)^n) delta/2)`.
pub fn unbounded_constant(tau: f64, delta: f64, n: usize) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) || n == 0 || !(tau > 0.0) {
        return Err(Error::Domain(
            "need tau > 0, 0 < delta < 1 and n >= 1".into(),
        ));
    }
    let h = delta / 2.0;
    Ok(tau / ((1.0 - (1.0 - h).powi(n as i32)) * h))
}

/// Smallest label gap `y0 - yhat0` whose loss reaches `c`.
fn label_gap(loss: &LossFn, c: f64) -> Result<i64> {
    let gap = match loss {
        LossFn::Squared => c.sqrt().ceil(),
        LossFn::Absolute => c.ceil(),
        LossFn::Custom(_) if loss.is_unbounded() => {
            let mut g: i64 = 1;
            while loss.eval(&0.0, g)? < c {
                g = g
                    .checked_mul(2)
                    .ok_or_else(|| Error::Domain(format!("{} never reaches {c}", loss.name())))?;
            }
            return Ok(g);
        }
        _ => {
            return Err(Error::Domain(format!(
                "{} loss is bounded; the unbounded construction needs an unbounded loss",
                loss.name()
            )))
        }
    };
    if gap > (1u64 << 53) as f64 {
        return Err(Error::Domain(format!(
            "required label gap {gap} is out of range"
        )));
    }
    Ok((gap as i64).max(1))
}

/// Tilted instance for an unbounded loss:
/// `P' = (1 - delta) P + delta/2 (P_X x delta_{y0}) + delta/2 delta_{rare}`,
/// with the patched algorithm returning the constant `yhat0 = 0` whenever the
/// rare point is in its training set. `R_{P',n}(A') >= tau` is certified by
/// the lower bound `loss(yhat0, y0) (1 - (1 - delta/2)^n) P'(Y = y0)`.
pub fn build_unbounded_adversary<R: RngCore + ?Sized>(
    alg: &AlgorithmHandle,
    dist: &crate::dist::FiniteDistribution,
    loss: &LossFn,
    tau: f64,
    delta: f64,
    n: usize,
    rng: &mut R,
) -> Result<AdversaryBundle> {
    let c_needed = unbounded_constant(tau, delta, n)?;
    let yhat0 = 0.0;
    let mut y0 = label_gap(loss, c_needed)?;
    let h = delta / 2.0;
    let seen = 1.0 - (1.0 - h).powi(n as i32);

    let tilt = |y0: i64, rare: DataPoint| -> Result<crate::dist::FiniteDistribution> {
        let mut mass: BTreeMap<DataPoint, f64> = BTreeMap::new();
        for a in dist.atoms() {
            *mass.entry(a.point).or_default() += (1.0 - delta) * a.p;
        }
        for (x, p) in dist.marginal_x() {
            *mass.entry(DataPoint::new(x, y0)).or_default() += h * p;
        }
        *mass.entry(rare).or_default() += h;
        crate::dist::FiniteDistribution::new(
            format!("{} tilted toward y0 = {y0}", dist.name()),
            mass.into_iter().collect(),
        )
    };
    let label_mass = |d: &crate::dist::FiniteDistribution, y0: i64| -> f64 {
        d.atoms()
            .iter()
            .filter(|a| a.point.y == y0)
            .map(|a| a.p)
            .sum()
    };

    let rare = loop {
        let candidate = DataPoint::new(rng.next_u64() as i64, rng.next_u64() as i64);
        if !dist.contains(&candidate)
            && candidate.y != y0
            && !dist.marginal_x().contains_key(&candidate.x)
        {
            break candidate;
        }
    };
    let mut tilted = tilt(y0, rare)?;
    // Rounding can leave the certified bound an ulp short; widen the gap.
    let mut lower = loss.eval(&yhat0, y0)? * seen * label_mass(&tilted, y0);
    while lower < tau {
        y0 += 1;
        tilted = tilt(y0, rare)?;
        lower = loss.eval(&yhat0, y0)? * seen * label_mass(&tilted, y0);
    }
    let f_star = FittedModel::constant(yhat0);
    let patched = patch_algorithm(alg.clone(), rare, f_star.clone());
    let verification = vec![Check::new(
        "lower bound on R_{P',n}(A') >= tau",
        &Estimate::exact(lower),
        Relation::AtLeast,
        tau,
    )];
    AdversaryBundle {
        kind: AdversaryKind::Unbounded,
        patched: PatchedAlgorithms::Single {
            alg: patched,
            f_star,
        },
        tv: total_variation(dist, &tilted),
        base_dist: dist.clone(),
        tilted_dist: tilted,
        rare_point: rare,
        c: delta,
        epsilon: 0.0,
        appearance: None,
        inputs: AdversaryInputs {
            alpha: None,
            tau,
            big_n: None,
            n,
            r: f64::NAN,
            r_max: None,
            threshold: Some(c_needed),
            b: f64::INFINITY,
            q: None,
            gamma_q: None,
            delta: Some(delta),
        },
        nontrivial: None,
        verification,
    }
    .release()
    .map(|mut bundle| {
        // Not meaningful for an unbounded loss; keep the JSON finite.
        bundle.inputs.r = 0.0;
        bundle.inputs.b = 0.0;
        bundle
    })
}

/// Tilted instance for a comparison test: `A0'` returns `f1` and `A1'`
/// returns `f0` when the rare point is present, where `(f0, f1)` attains
/// `Delta_P^max`. Verifies `Delta_{P',n}(A0', A1') <= 0`, the paired
/// stability and, when `psi` is built on a bounded loss, each algorithm's
/// own stability.
#[allow(clippy::too_many_arguments)]
pub fn build_compare_adversary<R: RngCore + ?Sized>(
    alg0: &AlgorithmHandle,
    alg1: &AlgorithmHandle,
    dist: &crate::dist::FiniteDistribution,
    psi: &ComparisonFn,
    alpha: f64,
    big_n: usize,
    n: usize,
    protocol: &dyn TestProtocol<ModelPair>,
    epsilon: f64,
    rng: &mut R,
    opts: &AdversaryOptions,
) -> Result<AdversaryBundle> {
    let b = psi.bound();
    let d = or_mc(delta_exact(alg0, alg1, psi, dist, n), || {
        delta_mc(
            alg0,
            alg1,
            psi,
            dist,
            n,
            opts.mc_trials,
            opts.streams(10),
            opts.workers,
        )
    })?;
    if !(d.value > 0.0) {
        return Err(Error::Domain(format!(
            "precondition Delta_{{P,n}}(A0, A1) > 0 fails: Delta = {}",
            d.value
        )));
    }
    let extremal = max_delta(dist, psi, &opts.space(dist))?;
    let c = choose_c_compare(alpha, b, big_n as f64, n as f64, d.value, extremal.value)?;
    let appearance = find_rare_point_compare(
        protocol,
        alg0,
        alg1,
        dist,
        big_n,
        epsilon,
        opts.appearance_trials,
        rng,
        opts.workers,
    )?;
    let rare = appearance.point;
    let base = conditional_without_atom(dist, &rare)?;
    let tilted = inject_atom(&base, rare, c)?;
    let (f0, f1) = extremal.witness.clone();
    let p0 = patch_algorithm(alg0.clone(), rare, f1.clone());
    let p1 = patch_algorithm(alg1.clone(), rare, f0.clone());

    let root_n = root(n, opts.q)?;
    let gamma_q = match opts.gamma_q {
        Some(g) => g,
        None => {
            let beta = pair_stability_of(alg0, alg1, psi, dist, n, opts, 11)?;
            (4.0 * b / root_n).max(beta.value())
        }
    };
    let d_after = or_mc(delta_exact(&p0, &p1, psi, &tilted, n), || {
        delta_mc(
            &p0,
            &p1,
            psi,
            &tilted,
            n,
            opts.mc_trials,
            opts.streams(12),
            opts.workers,
        )
    })?;
    let beta_after = pair_stability_of(&p0, &p1, psi, &tilted, n, opts, 13)?;
    let mut verification = vec![
        Check::new(
            "Delta_{P',n}(A0', A1') <= 0",
            &d_after,
            Relation::AtMost,
            0.0,
        ),
        Check::new(
            format!("beta_{}(A0', A1', P', n) <= gamma_{}", opts.q, opts.q),
            &beta_after.estimate,
            Relation::AtMost,
            gamma_q,
        ),
    ];
    if let Some(loss) = psi.loss().filter(|l| l.bound().is_finite()) {
        let lb = loss.bound();
        for (l, (orig, patched)) in [(alg0, &p0), (alg1, &p1)].into_iter().enumerate() {
            let before = stability_of(orig, dist, n, loss, opts, 14 + 2 * l as u64)?;
            let after = stability_of(patched, &tilted, n, loss, opts, 15 + 2 * l as u64)?;
            let target = (2.0 * lb / root_n).max(before.value());
            verification.push(Check::new(
                format!(
                    "beta_{}(A{l}', P', n) <= max(2B/n^(1/q), beta_{}(A{l}, P, n))",
                    opts.q, opts.q
                ),
                &after.estimate,
                Relation::AtMost,
                target,
            ));
        }
    }
    AdversaryBundle {
        kind: AdversaryKind::Comparison,
        patched: PatchedAlgorithms::Pair {
            alg0: p0,
            alg1: p1,
            f0,
            f1,
        },
        tv: total_variation(dist, &tilted),
        base_dist: dist.clone(),
        tilted_dist: tilted,
        rare_point: rare,
        c,
        epsilon,
        appearance: Some(appearance),
        inputs: AdversaryInputs {
            alpha: Some(alpha),
            tau: 0.0,
            big_n: Some(big_n),
            n,
            r: d.value,
            r_max: Some(extremal.value),
            threshold: Some(compare_slack(b, alpha, big_n as f64)),
            b,
            q: Some(opts.q),
            gamma_q: Some(gamma_q),
            delta: None,
        },
        nontrivial: Some((1.0 - c).powf(big_n as f64) >= alpha),
        verification,
    }
    .release()
}

/// Pearson goodness-of-fit statistic of sampled points against `dist`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GoodnessOfFit {
    pub chi2: f64,
    pub df: usize,
    /// Draws outside the support of `dist`.
    pub outside: u64,
}

impl GoodnessOfFit {
    /// Accepts when the statistic lies within `df + k sqrt(2 df)` and no draw
    /// left the support.
    pub fn accepts(&self, k: f64) -> bool {
        self.outside == 0 && self.chi2 <= self.df as f64 + k * (2.0 * self.df.max(1) as f64).sqrt()
    }
}

fn goodness_of_fit(
    dist: &crate::dist::FiniteDistribution,
    counts: &BTreeMap<DataPoint, u64>,
) -> GoodnessOfFit {
    let total: u64 = counts.values().sum();
    let mut chi2 = 0.0;
    let mut outside = 0;
    for (pt, &k) in counts {
        if !dist.contains(pt) {
            outside += k;
        }
    }
    for a in dist.atoms() {
        let expected = a.p * total as f64;
        let observed = *counts.get(&a.point).unwrap_or(&0) as f64;
        chi2 += (observed - expected).powi(2) / expected;
    }
    GoodnessOfFit {
        chi2,
        df: dist.len().saturating_sub(1),
        outside,
    }
}

/// Result of running a test on `(A, D_N ~ P)` and `(A', D'_N ~ P')` with
/// coordinatewise maximally coupled data and a shared protocol seed.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub trials: u64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub c: f64,
    pub tv: f64,
    pub epsilon: f64,
    /// `(1 - c)^{-N}`.
    pub inflation: f64,
    pub original: RejectionRate,
    pub patched: RejectionRate,
    /// Fraction of trials where the two datasets coincide.
    pub equality_rate: f64,
    /// `(1 - TV)^N`.
    pub equality_expected: f64,
    pub equality_stderr: f64,
    pub equality_matches: bool,
    /// `1 - equality_rate` next to its analytic value `1 - (1 - c)^N`.
    pub mismatch_rate: f64,
    pub mismatch_expected: f64,
    /// Trials with coinciding datasets whose decisions still differ; zero
    /// unless the rare point was touched.
    pub coupled_disagreements: u64,
    /// Fraction of original-side runs touching the rare point.
    pub rare_touch_rate: f64,
    /// Mean of `1{T} - (1 - c)^{-N} 1{T'}` and its standard error.
    pub gap_mean: f64,
    pub gap_stderr: f64,
    /// `epsilon + 4 gap_stderr - gap_mean`.
    pub slack: f64,
    pub inequality_holds: bool,
    /// `(1 - c)^{-N} alpha + epsilon`, when `alpha` is known.
    pub power_ceiling: Option<f64>,
    pub ceiling_holds: Option<bool>,
    pub original_fit: GoodnessOfFit,
    pub patched_fit: GoodnessOfFit,
}

struct CoupledTrial {
    original: bool,
    patched: bool,
    equal: bool,
    touched: bool,
    points: Vec<(DataPoint, DataPoint)>,
}

type DecideFn<'a> = dyn Fn(bool, &Dataset, u64) -> Result<(bool, bool)> + Sync + 'a;

#[allow(clippy::too_many_arguments)]
fn coupling_core(
    bundle: &AdversaryBundle,
    big_n: usize,
    alpha: Option<f64>,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
    decide: &DecideFn<'_>,
) -> Result<CouplingReport> {
    if trials < MIN_COUPLING_TRIALS {
        return Err(Error::Config(format!(
            "coupling demo needs at least {MIN_COUPLING_TRIALS} trials, got {trials}"
        )));
    }
    let coupling = MaximalCoupling::new(&bundle.base_dist, &bundle.tilted_dist);
    let results = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let points: Vec<(DataPoint, DataPoint)> = (0..big_n)
            .map(|_| {
                let (a, b, _) = coupling.sample(&mut rng);
                (a, b)
            })
            .collect();
        let protocol_seed = rng.next_u64();
        let d: Dataset = points.iter().map(|p| p.0).collect();
        let d_prime: Dataset = points.iter().map(|p| p.1).collect();
        let (original, touched) = decide(false, &d, protocol_seed)?;
        let (patched, _) = decide(true, &d_prime, protocol_seed)?;
        Ok(CoupledTrial {
            original,
            patched,
            equal: d == d_prime,
            touched,
            points,
        })
    })?;

    let inflation = (1.0 - bundle.c).powf(-(big_n as f64));
    let mut gaps = Vec::with_capacity(results.len());
    let mut counts_p: BTreeMap<DataPoint, u64> = BTreeMap::new();
    let mut counts_q: BTreeMap<DataPoint, u64> = BTreeMap::new();
    let (mut equal, mut disagreements, mut touched) = (0u64, 0u64, 0u64);
    for r in &results {
        gaps.push(r.original as u8 as f64 - inflation * r.patched as u8 as f64);
        equal += r.equal as u64;
        disagreements += (r.equal && r.original != r.patched) as u64;
        touched += r.touched as u64;
        for (a, b) in &r.points {
            *counts_p.entry(*a).or_default() += 1;
            *counts_q.entry(*b).or_default() += 1;
        }
    }
    let original =
        RejectionRate::from_decisions(&results.iter().map(|r| r.original).collect::<Vec<_>>());
    let patched =
        RejectionRate::from_decisions(&results.iter().map(|r| r.patched).collect::<Vec<_>>());
    let (gap_mean, gap_stderr) = mean_stderr(&gaps);
    let tv = coupling.total_variation();
    let equality_expected = (1.0 - tv).powf(big_n as f64);
    let equality_rate = equal as f64 / trials as f64;
    let equality_stderr = (equality_expected * (1.0 - equality_expected) / trials as f64).sqrt();
    let slack = bundle.epsilon + 4.0 * gap_stderr - gap_mean;
    let power_ceiling = alpha.map(|a| inflation * a + bundle.epsilon);
    Ok(CouplingReport {
        trials,
        big_n,
        c: bundle.c,
        tv,
        epsilon: bundle.epsilon,
        inflation,
        original,
        patched,
        equality_rate,
        equality_expected,
        equality_stderr,
        equality_matches: (equality_rate - equality_expected).abs()
            <= 4.0 * equality_stderr + 1e-12,
        mismatch_rate: 1.0 - equality_rate,
        mismatch_expected: 1.0 - (1.0 - bundle.c).powf(big_n as f64),
        coupled_disagreements: disagreements,
        rare_touch_rate: touched as f64 / trials as f64,
        gap_mean,
        gap_stderr,
        slack,
        inequality_holds: slack >= 0.0,
        power_ceiling,
        ceiling_holds: power_ceiling
            .map(|ceil| original.rate <= ceil.min(1.0) + 4.0 * original.stderr_at(ceil.min(1.0))),
        original_fit: goodness_of_fit(&bundle.base_dist, &counts_p),
        patched_fit: goodness_of_fit(&bundle.tilted_dist, &counts_q),
    })
}

/// Coupling experiment for an evaluation bundle: checks
/// `P(T(A, D_N) = 1) <= (1 - c)^{-N} P(T(A', D'_N) = 1) + epsilon` up to
/// `4 sigma`.
#[allow(clippy::too_many_arguments)]
pub fn coupling_demo(
    protocol: &dyn TestProtocol<FittedModel>,
    alg: &AlgorithmHandle,
    bundle: &AdversaryBundle,
    big_n: usize,
    alpha: Option<f64>,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<CouplingReport> {
    let patched = bundle
        .single()
        .ok_or_else(|| Error::Config("coupling_demo needs a single-algorithm bundle".into()))?;
    let rare = bundle.rare_point;
    let decide = |side: bool, data: &Dataset, seed: u64| -> Result<(bool, bool)> {
        let t = if side {
            run_test_seeded(protocol, patched, data, seed)?
        } else {
            run_test_seeded(protocol, alg, data, seed)?
        };
        Ok((t.decision, t.touches(&rare)))
    };
    coupling_core(bundle, big_n, alpha, trials, streams, workers, &decide)
}

/// [`coupling_demo`] for a comparison bundle.
#[allow(clippy::too_many_arguments)]
pub fn coupling_demo_compare(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &AlgorithmHandle,
    alg1: &AlgorithmHandle,
    bundle: &AdversaryBundle,
    big_n: usize,
    alpha: Option<f64>,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<CouplingReport> {
    let (p0, p1) = bundle
        .pair()
        .ok_or_else(|| Error::Config("coupling_demo_compare needs a comparison bundle".into()))?;
    let rare = bundle.rare_point;
    let decide = |side: bool, data: &Dataset, seed: u64| -> Result<(bool, bool)> {
        let t = if side {
            run_compare_test_seeded(protocol, p0, p1, data, seed)?
        } else {
            run_compare_test_seeded(protocol, alg0, alg1, data, seed)?
        };
        Ok((t.decision, t.touches(&rare)))
    };
    coupling_core(bundle, big_n, alpha, trials, streams, workers, &decide)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::{ConstantPredictor, Knn, MajorityVote};
    use crate::btest::{binom_test_protocol, compare_binom_protocol, BinomTestConfig};
    use crate::dist::FiniteDistribution;
    use crate::estimate::algorithm_risk_exact;
    use crate::harness::FixedDecision;
    use crate::rng::stream;

    fn pt(x: i64, y: i64) -> DataPoint {
        DataPoint::new(x, y)
    }

    fn toy() -> FiniteDistribution {
        FiniteDistribution::new("toy", vec![(pt(0, 0), 0.5), (pt(1, 0), 0.5)]).unwrap()
    }

    fn constant(v: f64) -> AlgorithmHandle {
        Arc::new(ConstantPredictor { value: v })
    }

    #[test]
    fn choose_c_examples() {
        let c = choose_c(0.5, 0.5, 8.0, 2.0, 0.0, 1.0).unwrap();
        let expected = 1.0 - (1.0 - 1e-3) * 0.4375f64.sqrt();
        assert!((c - expected).abs() < 1e-15);
        assert!((c - 0.3392).abs() < 1e-4);
        // Substituting back: (1-c)^n R + (1 - (1-c)^n) Rmax > tilde_tau.
        let keep = (1.0 - c).powi(2);
        assert!(1.0 - keep > tilde_tau(0.5, 0.5, 8.0));

        let err = choose_c(0.05, 0.5, 4.0, 4.0, 0.0, 1.0).unwrap_err();
        assert!(err.to_string().contains("tilde_tau < Rmax"));

        let tt = tilde_tau(0.5, 0.05, 100.0);
        let c = choose_c(0.05, 0.5, 100.0, 10.0, tt, 1.0).unwrap();
        assert!((c - SAFETY_ETA).abs() < 1e-15);
    }

    #[test]
    fn choose_c_compare_matches_evaluation_substitution() {
        let (alpha, b, big_n, n, d, dmax) = (0.2, 1.0, 30.0, 3.0, 0.25, 0.8);
        let a = choose_c_compare(alpha, b, big_n, n, d, dmax).unwrap();
        let e = choose_c(alpha, b, big_n, n, b - d, b + dmax).unwrap();
        assert!((a - e).abs() < 1e-12);
        assert!(choose_c_compare(0.05, 1.0, 4.0, 4.0, 0.2, 1.0).is_err());
    }

    #[test]
    fn patching_is_local_and_idempotent() {
        let knn: AlgorithmHandle = Arc::new(Knn::new(1));
        let rare = pt(1 << 40, 7);
        let f_star = FittedModel::constant(9.0);
        let once = patch_algorithm(knn.clone(), rare, f_star.clone());
        let twice = patch_algorithm(once.clone(), rare, f_star);
        let mut rng = stream(3, 0);
        let dist = FiniteDistribution::new(
            "grid",
            (0..5)
                .flat_map(|x| (0..2).map(move |y| (pt(x, y), 0.1)))
                .collect(),
        )
        .unwrap();
        for _ in 0..1000 {
            let d = dist.sample_dataset(1 + (rng.next_u64() % 4) as usize, &mut rng);
            let a = knn.fit(&d, Seed(0)).unwrap();
            let b = once.fit(&d, Seed(0)).unwrap();
            let c = twice.fit(&d, Seed(0)).unwrap();
            for x in -1..6 {
                assert_eq!(a.predict(x), b.predict(x));
                assert_eq!(b.predict(x), c.predict(x));
            }
        }
        let mut d = Dataset::from_pairs(&[(0, 1)]);
        d.push(rare);
        assert_eq!(once.fit(&d, Seed(0)).unwrap().predict(0), 9.0);
        assert_eq!(twice.fit(&d, Seed(0)).unwrap().predict(123), 9.0);
    }

    fn toy_bundle(n: usize) -> AdversaryBundle {
        let cfg = BinomTestConfig {
            n,
            tau: 0.5,
            alpha: 0.5,
            loss: LossFn::ZeroOne,
        };
        let protocol = binom_test_protocol(cfg).unwrap();
        let opts = AdversaryOptions {
            master_seed: 5,
            ..AdversaryOptions::default()
        };
        build_eval_adversary(
            &constant(0.0),
            &toy(),
            &LossFn::ZeroOne,
            0.5,
            0.5,
            8,
            n,
            &protocol,
            0.01,
            &mut stream(11, 0),
            &opts,
        )
        .unwrap()
    }

    #[test]
    fn eval_adversary_on_toy_instance() {
        for n in 1..=3 {
            let bundle = toy_bundle(n);
            assert!(bundle.is_verified());
            assert_eq!(
                bundle.c,
                choose_c(0.5, 0.5, 8.0, n as f64, 0.0, 1.0).unwrap()
            );
            assert!((bundle.tv - bundle.c).abs() < 1e-12);
            // Independent recomputation of the patched risk.
            let alg = bundle.single().unwrap();
            let r = algorithm_risk_exact(alg, &bundle.tilted_dist, n, &LossFn::ZeroOne).unwrap();
            assert!(r.value >= 0.5);
            assert_eq!(r.value, bundle.verification[0].value);
            let json: serde_json::Value = serde_json::from_str(&bundle.to_json().unwrap()).unwrap();
            assert_eq!(json["verified"], true);
            assert_eq!(json["c"], bundle.c);
        }
    }

    #[test]
    fn eval_adversary_stability_matches_straddling_fits() {
        // Constant-0 is perfectly stable on P; on P' only fits whose training
        // sets straddle rare-point membership differ, so beta_1 equals
        // P(rare appears exactly once in the n training points) times the
        // expected loss change, which is 1 off the rare point and 0 on it.
        let n = 2;
        let bundle = toy_bundle(n);
        let c = bundle.c;
        let beta = stability_exact(
            bundle.single().unwrap(),
            &bundle.tilted_dist,
            n,
            1,
            &LossFn::ZeroOne,
        )
        .unwrap();
        // Deleting index j matters only when the rare point sits at j and
        // nowhere else, and the test point is not the rare point.
        let direct = c * (1.0 - c) * (1.0 - c);
        assert!(
            (beta.value() - direct).abs() < 1e-12,
            "{} vs {direct}",
            beta.value()
        );
    }

    #[test]
    fn eval_adversary_rejects_infeasible_and_null_inputs() {
        let protocol = binom_test_protocol(BinomTestConfig {
            n: 4,
            tau: 0.5,
            alpha: 0.05,
            loss: LossFn::ZeroOne,
        })
        .unwrap();
        let opts = AdversaryOptions::default();
        let err = build_eval_adversary(
            &constant(0.0),
            &toy(),
            &LossFn::ZeroOne,
            0.5,
            0.05,
            4,
            4,
            &protocol,
            0.01,
            &mut stream(1, 0),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
        assert!(err.to_string().contains("tilde_tau < Rmax"));
        let err = build_eval_adversary(
            &constant(1.0),
            &toy(),
            &LossFn::ZeroOne,
            0.5,
            0.5,
            8,
            1,
            &protocol,
            0.01,
            &mut stream(1, 0),
            &opts,
        )
        .unwrap_err();
        assert!(err.to_string().contains("R_{P,n}(A) < tau"));
    }

    #[test]
    fn verification_failure_is_reported() {
        let protocol = FixedDecision(false);
        let opts = AdversaryOptions {
            gamma_q: Some(0.0),
            ..AdversaryOptions::default()
        };
        let err = build_eval_adversary(
            &constant(0.0),
            &toy(),
            &LossFn::ZeroOne,
            0.5,
            0.5,
            8,
            2,
            &protocol,
            0.01,
            &mut stream(2, 0),
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Verification(_)));
        assert!(err.to_string().contains("beta_1"), "{err}");
    }

    #[test]
    fn unbounded_constant_examples() {
        assert!((unbounded_constant(1.0, 0.5, 1).unwrap() - 16.0).abs() < 1e-12);
        let small = unbounded_constant(1.0, 0.9, 50).unwrap();
        assert!((small - 1.0 / 0.45).abs() < 1e-9);
        assert!(
            unbounded_constant(1.0, 0.1, 1).unwrap() > unbounded_constant(1.0, 0.1, 10).unwrap()
        );
    }

    #[test]
    fn unbounded_adversary_squared_and_absolute() {
        let dist = FiniteDistribution::bernoulli_labels(0.3).unwrap();
        for loss in [LossFn::Squared, LossFn::Absolute] {
            let bundle = build_unbounded_adversary(
                &constant(0.0),
                &dist,
                &loss,
                1.0,
                0.5,
                1,
                &mut stream(4, 0),
            )
            .unwrap();
            assert!(bundle.is_verified());
            let check = &bundle.verification[0];
            assert!(check.value >= 1.0);
            assert!((bundle.tilted_dist.total_mass() - 1.0).abs() < 1e-12);
            assert!((bundle.tilted_dist.prob(&bundle.rare_point) - 0.25).abs() < 1e-15);
            assert!(bundle.tv <= 0.5 + 1e-12);
        }
        // With C = 16 the squared gap is exactly 4.
        let bundle = build_unbounded_adversary(
            &constant(0.0),
            &FiniteDistribution::point_mass(pt(0, 0)),
            &LossFn::Squared,
            1.0,
            0.5,
            1,
            &mut stream(4, 1),
        )
        .unwrap();
        assert!(bundle.tilted_dist.contains(&pt(0, 4)));
        assert!(build_unbounded_adversary(
            &constant(0.0),
            &dist,
            &LossFn::ZeroOne,
            1.0,
            0.5,
            1,
            &mut stream(4, 2)
        )
        .is_err());
    }

    #[test]
    fn unbounded_lower_bound_agrees_with_exact_risk() {
        let dist = FiniteDistribution::new("two", vec![(pt(0, 0), 0.5), (pt(1, 1), 0.5)]).unwrap();
        let bundle = build_unbounded_adversary(
            &constant(0.0),
            &dist,
            &LossFn::Absolute,
            2.0,
            0.4,
            2,
            &mut stream(8, 0),
        )
        .unwrap();
        // Exact risk on a bounded window: the rare label is huge, so only
        // compare the part of the risk that excludes the rare test point.
        let rare = bundle.rare_point;
        let clipped = LossFn::custom(
            "absolute off the rare label",
            f64::INFINITY,
            move |yhat, y| {
                if y == rare.y {
                    0.0
                } else {
                    (yhat - y as f64).abs()
                }
            },
        );
        let r = algorithm_risk_exact(bundle.single().unwrap(), &bundle.tilted_dist, 2, &clipped)
            .unwrap();
        assert!(r.value >= bundle.verification[0].value - 1e-9);
        assert!(r.value >= 2.0);
    }

    #[test]
    fn compare_adversary_swaps_witnesses() {
        let dist =
            FiniteDistribution::new("labels-1", vec![(pt(0, 1), 0.5), (pt(1, 1), 0.5)]).unwrap();
        let psi = ComparisonFn::LossOrderIndicator(LossFn::ZeroOne);
        let protocol = compare_binom_protocol(2, 0.5, psi.clone()).unwrap();
        let wrong = constant(0.0);
        let perfect = constant(1.0);
        let opts = AdversaryOptions::default();
        let bundle = build_compare_adversary(
            &wrong,
            &perfect,
            &dist,
            &psi,
            0.5,
            12,
            2,
            &protocol,
            0.01,
            &mut stream(6, 0),
            &opts,
        )
        .unwrap();
        assert!(bundle.is_verified());
        let (a0, a1) = bundle.pair().unwrap();
        let d = delta_exact(a0, a1, &psi, &bundle.tilted_dist, 2).unwrap();
        assert!(d.value <= 0.0);
        assert_eq!(bundle.verification.len(), 4);

        let same = build_compare_adversary(
            &wrong,
            &wrong,
            &dist,
            &psi,
            0.5,
            12,
            2,
            &protocol,
            0.01,
            &mut stream(6, 1),
            &opts,
        )
        .unwrap_err();
        assert!(same.to_string().contains("Delta_{P,n}(A0, A1) > 0"));
    }

    #[test]
    fn compare_adversary_with_loss_difference_bounds_stability() {
        let dist =
            FiniteDistribution::new("mixed", vec![(pt(0, 0), 0.4), (pt(1, 1), 0.6)]).unwrap();
        let psi = ComparisonFn::LossDifference(LossFn::ZeroOne);
        let protocol = FixedDecision(false);
        let bundle = build_compare_adversary(
            &constant(0.0),
            &(Arc::new(MajorityVote) as AlgorithmHandle),
            &dist,
            &psi,
            0.5,
            20,
            2,
            &protocol,
            0.01,
            &mut stream(7, 0),
            &AdversaryOptions::default(),
        )
        .unwrap();
        let (a0, a1) = bundle.pair().unwrap();
        let beta = pair_stability_exact(a0, a1, &psi, &bundle.tilted_dist, 2, 1).unwrap();
        assert!(beta.value() <= bundle.inputs.gamma_q.unwrap());
    }

    #[test]
    fn coupling_with_zero_mass_matches_rates() {
        // c = 0: P' = P and the patch only fires on a point never drawn.
        let dist = FiniteDistribution::bernoulli_labels(0.3).unwrap();
        let rare = pt(1 << 50, 3);
        let alg = constant(0.0);
        let bundle = AdversaryBundle {
            kind: AdversaryKind::Evaluation,
            patched: PatchedAlgorithms::Single {
                alg: patch_algorithm(alg.clone(), rare, FittedModel::constant(1.0)),
                f_star: FittedModel::constant(1.0),
            },
            base_dist: dist.clone(),
            tilted_dist: dist.clone(),
            rare_point: rare,
            c: 0.0,
            tv: 0.0,
            epsilon: 0.0,
            appearance: None,
            inputs: AdversaryInputs {
                alpha: Some(0.1),
                tau: 0.5,
                big_n: Some(6),
                n: 2,
                r: 0.3,
                r_max: Some(1.0),
                threshold: None,
                b: 1.0,
                q: None,
                gamma_q: None,
                delta: None,
            },
            nontrivial: None,
            verification: vec![],
        };
        let protocol = binom_test_protocol(BinomTestConfig {
            n: 2,
            tau: 0.5,
            alpha: 0.1,
            loss: LossFn::ZeroOne,
        })
        .unwrap();
        let report = coupling_demo(
            &protocol,
            &alg,
            &bundle,
            6,
            Some(0.1),
            4000,
            TrialStreams::new(1),
            None,
        )
        .unwrap();
        assert_eq!(report.original, report.patched);
        assert_eq!(report.equality_rate, 1.0);
        assert!(report.equality_matches && report.inequality_holds);
        assert_eq!(report.coupled_disagreements, 0);
    }

    #[test]
    fn coupling_demo_on_toy_bundle() {
        let n = 2;
        let bundle = toy_bundle(n);
        let protocol = binom_test_protocol(BinomTestConfig {
            n,
            tau: 0.5,
            alpha: 0.5,
            loss: LossFn::ZeroOne,
        })
        .unwrap();
        let report = coupling_demo(
            &protocol,
            &constant(0.0),
            &bundle,
            8,
            Some(0.5),
            5000,
            TrialStreams::new(2),
            None,
        )
        .unwrap();
        assert!(report.inequality_holds);
        assert!(report.equality_matches, "{report:?}");
        assert!(
            report.original_fit.accepts(4.0) && report.patched_fit.accepts(4.0),
            "{report:?}"
        );
        assert_eq!(report.coupled_disagreements, 0);
        assert_eq!(report.rare_touch_rate, 0.0);
        assert_eq!(report.ceiling_holds, Some(true));
        let workers_1 = coupling_demo(
            &protocol,
            &constant(0.0),
            &bundle,
            8,
            Some(0.5),
            5000,
            TrialStreams::new(2),
            Some(1),
        )
        .unwrap();
        assert_eq!(report, workers_1);
        assert!(coupling_demo(
            &protocol,
            &constant(0.0),
            &bundle,
            8,
            None,
            10,
            TrialStreams::new(2),
            None
        )
        .is_err());
    }
}
