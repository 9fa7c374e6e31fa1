//! Risk, comparison-risk and stability estimators.
//!
//! Every quantity has a Monte Carlo form (parallel, one counter-keyed stream
//! per trial) and, for tiny finite distributions, an exact form that
//! enumerates all `(n + 1)`-tuples of support points. The exact forms refuse
//! to run beyond [`ENUMERATION_BUDGET`] tuples.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{Atom, FiniteDistribution};
use crate::error::{Error, Result};
use crate::model::{Algorithm, ComparisonFn, DataPoint, Dataset, FittedModel, Loss, Seed};
use crate::rng::{run_trials, TrialStreams};
use crate::stats::mean_stderr;

pub const ENUMERATION_BUDGET: u128 = 1_000_000;

/// Seeds averaged over by exact oracles of randomized algorithms.
pub const DEFAULT_SEED_GRID: usize = 64;

const Z95: f64 = 1.959_963_984_540_054;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Method {
    MonteCarlo { trials: u64 },
    Exact,
    CrossValidation { folds: usize },
    Holdout { size: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub method: Method,
    pub ci95: (f64, f64),
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            method: Method::Exact,
            ci95: (value, value),
        }
    }

    pub fn with_stderr(value: f64, stderr: f64, method: Method) -> Self {
        Self {
            value,
            stderr,
            method,
            ci95: (value - Z95 * stderr, value + Z95 * stderr),
        }
    }

    fn from_samples(values: &[f64], method: Method) -> Self {
        let (mean, se) = mean_stderr(values);
        Self::with_stderr(mean, se, method)
    }

    pub fn is_exact(&self) -> bool {
        self.method == Method::Exact
    }

    /// Number of Monte Carlo trials, or 0 for other methods.
    pub fn trials(&self) -> u64 {
        match self.method {
            Method::MonteCarlo { trials } => trials,
            _ => 0,
        }
    }

    /// `|self - other| <= k * (combined stderr)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64, tol: f64) -> bool {
        let se = (self.stderr * self.stderr + other.stderr * other.stderr).sqrt();
        (self.value - other.value).abs() <= k * se + tol
    }
}

/// Fit-and-score abstraction shared by the risk, comparison and stability
/// estimators.
pub trait Scorer: Sync {
    type Model: Send;

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<Self::Model>;

    fn score(&self, model: &Self::Model, pt: DataPoint) -> Result<f64>;

    fn is_deterministic(&self) -> bool;
}

/// Scores a model by its loss.
pub struct LossScorer<'a, A: ?Sized, L: ?Sized> {
    pub alg: &'a A,
    pub loss: &'a L,
}

impl<A, L> Scorer for LossScorer<'_, A, L>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    type Model = FittedModel<A::Prediction>;

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<Self::Model> {
        self.alg.fit(data, seed)
    }

    fn score(&self, model: &Self::Model, pt: DataPoint) -> Result<f64> {
        self.loss.eval(&model.predict(pt.x), pt.y)
    }

    fn is_deterministic(&self) -> bool {
        self.alg.is_deterministic()
    }
}

/// Fits two algorithms on the same data with the same seed and scores the
/// pair by a comparison function.
pub struct PsiScorer<'a, A0: ?Sized, A1: ?Sized> {
    pub alg0: &'a A0,
    pub alg1: &'a A1,
    pub psi: &'a ComparisonFn,
}

impl<A0, A1> Scorer for PsiScorer<'_, A0, A1>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    type Model = (FittedModel, FittedModel);

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<Self::Model> {
        Ok((self.alg0.fit(data, seed)?, self.alg1.fit(data, seed)?))
    }

    fn score(&self, model: &Self::Model, pt: DataPoint) -> Result<f64> {
        self.psi
            .eval(model.0.predict(pt.x), model.1.predict(pt.x), pt.y)
    }

    fn is_deterministic(&self) -> bool {
        self.alg0.is_deterministic() && self.alg1.is_deterministic()
    }
}

/// Applies `f` to another scorer's scores.
pub struct MapScore<S, F> {
    pub inner: S,
    pub f: F,
}

impl<S, F> Scorer for MapScore<S, F>
where
    S: Scorer,
    F: Fn(f64) -> f64 + Sync,
{
    type Model = S::Model;

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<Self::Model> {
        self.inner.fit(data, seed)
    }

    fn score(&self, model: &Self::Model, pt: DataPoint) -> Result<f64> {
        Ok((self.f)(self.inner.score(model, pt)?))
    }

    fn is_deterministic(&self) -> bool {
        self.inner.is_deterministic()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExactOptions {
    /// Equispaced seeds averaged over for randomized algorithms.
    pub seed_grid: usize,
    pub budget: u128,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            seed_grid: DEFAULT_SEED_GRID,
            budget: ENUMERATION_BUDGET,
        }
    }
}

impl ExactOptions {
    fn seeds(&self, deterministic: bool) -> Result<Vec<Seed>> {
        if deterministic {
            Ok(vec![Seed(0)])
        } else if self.seed_grid == 0 {
            Err(Error::Config("seed grid must be nonempty".into()))
        } else {
            Ok(Seed::grid(self.seed_grid))
        }
    }
}

/// Fails with a budget error unless `support^len` tuples fit the budget.
pub fn check_budget(support: usize, len: usize, budget: u128) -> Result<u128> {
    let needed = (support as u128)
        .checked_pow(len as u32)
        .unwrap_or(u128::MAX);
    if needed > budget {
        return Err(Error::Budget {
            needed,
            limit: budget,
        });
    }
    Ok(needed)
}

/// Visit every `len`-tuple of atoms with its product probability.
fn for_each_tuple(
    atoms: &[Atom],
    len: usize,
    mut f: impl FnMut(&[DataPoint], f64) -> Result<()>,
) -> Result<()> {
    let s = atoms.len();
    let mut idx = vec![0usize; len];
    let mut tuple: Vec<DataPoint> = vec![atoms[0].point; len];
    loop {
        let mut w = 1.0;
        for (slot, &i) in idx.iter().enumerate() {
            tuple[slot] = atoms[i].point;
            w *= atoms[i].p;
        }
        f(&tuple, w)?;
        let mut pos = len;
        loop {
            if pos == 0 {
                return Ok(());
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < s {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn in_trial(t: u64) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Fit { algorithm, message } => Error::Fit {
            algorithm,
            message: format!("{message} (trial {t})"),
        },
        other => other,
    }
}

fn require_trials(trials: u64) -> Result<()> {
    if trials < 2 {
        return Err(Error::Config(format!(
            "need at least 2 trials, got {trials}"
        )));
    }
    Ok(())
}

/// `E[score(fit(D_n, xi), Z)]` by enumeration.
pub fn expected_score_exact<S: Scorer>(
    scorer: &S,
    dist: &FiniteDistribution,
    n: usize,
    opts: &ExactOptions,
) -> Result<Estimate> {
    check_budget(dist.len(), n + 1, opts.budget)?;
    let seeds = opts.seeds(scorer.is_deterministic())?;
    let atoms = dist.atoms();
    let mut total = 0.0;
    for &seed in &seeds {
        let mut acc = 0.0;
        for_each_tuple(atoms, n, |train, w| {
            let model = scorer.fit(train, seed)?;
            let mut inner = 0.0;
            for a in atoms {
                inner += a.p * scorer.score(&model, a.point)?;
            }
            acc += w * inner;
            Ok(())
        })?;
        total += acc;
    }
    Ok(Estimate::exact(total / seeds.len() as f64))
}

/// Monte Carlo form of [`expected_score_exact`].
pub fn expected_score_mc<S: Scorer>(
    scorer: &S,
    dist: &FiniteDistribution,
    n: usize,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<Estimate> {
    require_trials(trials)?;
    let values = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n + 1, &mut rng);
        let seed = Seed::random(&mut rng);
        let model = scorer.fit(&data[..n], seed).map_err(in_trial(t))?;
        scorer.score(&model, data[n])
    })?;
    Ok(Estimate::from_samples(
        &values,
        Method::MonteCarlo { trials },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StabilityMode {
    /// Maximize over every deleted index `j`.
    AllIndices,
    /// Only `j = n`; equal in expectation to any other index for i.i.d. data.
    LastIndexOnly,
}

impl StabilityMode {
    fn indices(self, n: usize) -> Vec<usize> {
        match self {
            StabilityMode::AllIndices => (0..n).collect(),
            StabilityMode::LastIndexOnly => vec![n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityEstimate {
    /// `beta_q`, the maximum over the evaluated indices.
    pub estimate: Estimate,
    /// `(index, beta_q at that index)`, zero-based.
    pub per_index: Vec<(usize, f64)>,
    pub q: u32,
    pub mode: StabilityMode,
}

impl StabilityEstimate {
    pub fn value(&self) -> f64 {
        self.estimate.value
    }
}

fn check_q(q: u32) -> Result<()> {
    if q == 1 || q == 2 {
        Ok(())
    } else {
        Err(Error::Config(format!("q must be 1 or 2, got {q}")))
    }
}

fn qpow(d: f64, q: u32) -> f64 {
    if q == 1 {
        d.abs()
    } else {
        d * d
    }
}

fn qroot(v: f64, q: u32) -> f64 {
    if q == 1 {
        v
    } else {
        v.max(0.0).sqrt()
    }
}

/// Exact `beta_q = max_j E[|score(f_n, Z) - score(f_n^{-j}, Z)|^q]^{1/q}`,
/// both fits sharing the seed.
pub fn stability_exact_scored<S: Scorer>(
    scorer: &S,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    mode: StabilityMode,
    opts: &ExactOptions,
) -> Result<StabilityEstimate> {
    check_q(q)?;
    if n == 0 {
        return Err(Error::Domain("stability needs n >= 1".into()));
    }
    check_budget(dist.len(), n + 1, opts.budget)?;
    let seeds = opts.seeds(scorer.is_deterministic())?;
    let indices = mode.indices(n);
    let atoms = dist.atoms();
    let mut acc = vec![0.0; indices.len()];
    for &seed in &seeds {
        for_each_tuple(atoms, n, |train, w| {
            let full = scorer.fit(train, seed)?;
            for (slot, &j) in indices.iter().enumerate() {
                let mut reduced_train = train.to_vec();
                reduced_train.remove(j);
                let reduced = scorer.fit(&reduced_train, seed)?;
                let mut inner = 0.0;
                for a in atoms {
                    inner += a.p
                        * qpow(
                            scorer.score(&full, a.point)? - scorer.score(&reduced, a.point)?,
                            q,
                        );
                }
                acc[slot] += w * inner;
            }
            Ok(())
        })?;
    }
    let per_index: Vec<(usize, f64)> = indices
        .iter()
        .zip(&acc)
        .map(|(&j, &v)| (j, qroot(v / seeds.len() as f64, q)))
        .collect();
    let beta = per_index.iter().map(|&(_, b)| b).fold(0.0, f64::max);
    Ok(StabilityEstimate {
        estimate: Estimate::exact(beta),
        per_index,
        q,
        mode,
    })
}

/// Monte Carlo form of [`stability_exact_scored`].
#[allow(clippy::too_many_arguments)]
pub fn stability_mc_scored<S: Scorer>(
    scorer: &S,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    mode: StabilityMode,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<StabilityEstimate> {
    check_q(q)?;
    require_trials(trials)?;
    if n == 0 {
        return Err(Error::Domain("stability needs n >= 1".into()));
    }
    let indices = mode.indices(n);
    let rows = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n + 1, &mut rng);
        let seed = Seed::random(&mut rng);
        let (train, test) = (&data[..n], data[n]);
        let full = scorer.fit(train, seed).map_err(in_trial(t))?;
        let base = scorer.score(&full, test)?;
        indices
            .iter()
            .map(|&j| {
                let mut reduced_train = train.to_vec();
                reduced_train.remove(j);
                let reduced = scorer.fit(&reduced_train, seed).map_err(in_trial(t))?;
                Ok(qpow(base - scorer.score(&reduced, test)?, q))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut best: Option<(f64, f64)> = None;
    let mut per_index = Vec::with_capacity(indices.len());
    for (slot, &j) in indices.iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[slot]).collect();
        let (mean, se) = mean_stderr(&column);
        let beta = qroot(mean, q);
        // Delta method for the square root.
        let beta_se = if q == 1 || mean <= 0.0 {
            se
        } else {
            se / (2.0 * beta)
        };
        per_index.push((j, beta));
        if best.is_none_or(|(b, _)| beta > b) {
            best = Some((beta, beta_se));
        }
    }
    let (beta, se) = best.expect("n >= 1");
    Ok(StabilityEstimate {
        estimate: Estimate::with_stderr(beta, se, Method::MonteCarlo { trials }),
        per_index,
        q,
        mode,
    })
}

/// Exact risk `E[loss(f(X), Y)]` of one fitted model.
pub fn model_risk_exact<P, L>(
    model: &FittedModel<P>,
    dist: &FiniteDistribution,
    loss: &L,
) -> Result<Estimate>
where
    L: Loss<P> + ?Sized,
{
    let mut total = 0.0;
    for a in dist.atoms() {
        total += a.p * loss.eval(&model.predict(a.point.x), a.point.y)?;
    }
    if !total.is_finite() {
        return Err(Error::Loss("risk is not finite".into()));
    }
    Ok(Estimate::exact(total))
}

pub fn algorithm_risk_mc<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    loss: &L,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    expected_score_mc(&LossScorer { alg, loss }, dist, n, trials, streams, workers)
}

pub fn algorithm_risk_exact<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    loss: &L,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    algorithm_risk_exact_with(alg, dist, n, loss, &ExactOptions::default())
}

pub fn algorithm_risk_exact_with<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    loss: &L,
    opts: &ExactOptions,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    expected_score_exact(&LossScorer { alg, loss }, dist, n, opts)
}

/// K-fold cross-validation over contiguous folds, each complement fitted with
/// a fresh seed drawn from `rng`.
pub fn cv_estimate<A, L, R>(
    alg: &A,
    data: &Dataset,
    k: usize,
    loss: &L,
    rng: &mut R,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
    R: Rng + ?Sized,
{
    let losses = cv_losses(alg, data, k, loss, rng)?;
    Ok(Estimate::from_samples(
        &losses,
        Method::CrossValidation { folds: k },
    ))
}

/// [`cv_estimate`] after shuffling the dataset with `rng`.
pub fn cv_estimate_shuffled<A, L, R>(
    alg: &A,
    data: &Dataset,
    k: usize,
    loss: &L,
    rng: &mut R,
) -> Result<Estimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
    R: Rng + ?Sized,
{
    let mut points = data.points().to_vec();
    points.shuffle(rng);
    cv_estimate(alg, &Dataset::new(points), k, loss, rng)
}

/// Fold boundaries `[start, end)` for `k` contiguous folds over `len` points.
pub fn cv_folds(len: usize, k: usize) -> Result<Vec<(usize, usize)>> {
    if k < 2 {
        return Err(Error::Config(format!(
            "cross-validation needs K >= 2, got {k}"
        )));
    }
    if len == 0 || !len.is_multiple_of(k) {
        return Err(Error::Config(format!("K = {k} does not divide N = {len}")));
    }
    let size = len / k;
    Ok((0..k).map(|r| (r * size, (r + 1) * size)).collect())
}

pub(crate) fn cv_losses<A, L, R>(
    alg: &A,
    data: &Dataset,
    k: usize,
    loss: &L,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
    R: Rng + ?Sized,
{
    let folds = cv_folds(data.len(), k)?;
    let mut losses = Vec::with_capacity(data.len());
    for (start, end) in folds {
        let train: Vec<DataPoint> = data[..start].iter().chain(&data[end..]).copied().collect();
        let model = alg.fit(&train, Seed::random(rng))?;
        for pt in &data[start..end] {
            losses.push(loss.eval(&model.predict(pt.x), pt.y)?);
        }
    }
    Ok(losses)
}

pub fn holdout_estimate<P, L>(
    model: &FittedModel<P>,
    holdout: &Dataset,
    loss: &L,
) -> Result<Estimate>
where
    L: Loss<P> + ?Sized,
{
    if holdout.is_empty() {
        return Err(Error::Domain("empty holdout set".into()));
    }
    let losses = holdout
        .iter()
        .map(|pt| loss.eval(&model.predict(pt.x), pt.y))
        .collect::<Result<Vec<f64>>>()?;
    Ok(Estimate::from_samples(
        &losses,
        Method::Holdout {
            size: holdout.len(),
        },
    ))
}

#[allow(clippy::too_many_arguments)]
pub fn stability_mc<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    loss: &L,
    mode: StabilityMode,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<StabilityEstimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    stability_mc_scored(
        &LossScorer { alg, loss },
        dist,
        n,
        q,
        mode,
        trials,
        streams,
        workers,
    )
}

pub fn stability_exact<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    loss: &L,
) -> Result<StabilityEstimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    stability_exact_scored(
        &LossScorer { alg, loss },
        dist,
        n,
        q,
        StabilityMode::AllIndices,
        &ExactOptions::default(),
    )
}

pub fn stability_exact_with<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    loss: &L,
    mode: StabilityMode,
    opts: &ExactOptions,
) -> Result<StabilityEstimate>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    stability_exact_scored(&LossScorer { alg, loss }, dist, n, q, mode, opts)
}

#[allow(clippy::too_many_arguments)]
pub fn pair_stability_mc<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<StabilityEstimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    let scorer = PsiScorer { alg0, alg1, psi };
    stability_mc_scored(
        &scorer,
        dist,
        n,
        q,
        StabilityMode::AllIndices,
        trials,
        streams,
        workers,
    )
}

pub fn pair_stability_exact<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
    q: u32,
) -> Result<StabilityEstimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    let scorer = PsiScorer { alg0, alg1, psi };
    stability_exact_scored(
        &scorer,
        dist,
        n,
        q,
        StabilityMode::AllIndices,
        &ExactOptions::default(),
    )
}

#[allow(clippy::too_many_arguments)]
pub fn delta_mc<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<Estimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    expected_score_mc(
        &PsiScorer { alg0, alg1, psi },
        dist,
        n,
        trials,
        streams,
        workers,
    )
}

pub fn delta_exact<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
) -> Result<Estimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    expected_score_exact(
        &PsiScorer { alg0, alg1, psi },
        dist,
        n,
        &ExactOptions::default(),
    )
}

/// Exact `(P(psi > 0), P(psi < 0))` for one held-out point after fitting both
/// algorithms on `n` points.
pub fn psi_sign_probabilities<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
) -> Result<(f64, f64)>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    let opts = ExactOptions::default();
    let plus = MapScore {
        inner: PsiScorer { alg0, alg1, psi },
        f: |v: f64| (v > 0.0) as u8 as f64,
    };
    let minus = MapScore {
        inner: PsiScorer { alg0, alg1, psi },
        f: |v: f64| (v < 0.0) as u8 as f64,
    };
    Ok((
        expected_score_exact(&plus, dist, n, &opts)?.value,
        expected_score_exact(&minus, dist, n, &opts)?.value,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyGap {
    /// `E|R_P(f_n) - R_{P,n}(A)|`.
    pub gap1: f64,
    /// `E[(R_P(f_n) - R_{P,n}(A))^2]^{1/2}`.
    pub gap2: f64,
    /// `R_{P,n}(A)`.
    pub algorithm_risk: f64,
}

/// Exact spread of the model risk around the algorithm risk, enumerating all
/// training sets of size `n`. Deterministic algorithms only.
pub fn consistency_gap<A, L>(
    alg: &A,
    dist: &FiniteDistribution,
    n: usize,
    loss: &L,
) -> Result<ConsistencyGap>
where
    A: Algorithm + ?Sized,
    L: Loss<A::Prediction> + ?Sized,
{
    if !alg.is_deterministic() {
        return Err(Error::Domain(format!(
            "consistency gap is defined for deterministic algorithms; `{}` uses its seed",
            alg.name()
        )));
    }
    check_budget(dist.len(), n, ENUMERATION_BUDGET)?;
    let mut risks: Vec<(f64, f64)> = Vec::new();
    for_each_tuple(dist.atoms(), n, |train, w| {
        let model = alg.fit(train, Seed(0))?;
        risks.push((w, model_risk_exact(&model, dist, loss)?.value));
        Ok(())
    })?;
    let mean: f64 = risks.iter().map(|(w, r)| w * r).sum();
    let gap1 = risks.iter().map(|(w, r)| w * (r - mean).abs()).sum();
    let gap2 = risks
        .iter()
        .map(|(w, r)| w * (r - mean) * (r - mean))
        .sum::<f64>()
        .sqrt();
    Ok(ConsistencyGap {
        gap1,
        gap2,
        algorithm_risk: mean,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub estimator: String,
    pub value: f64,
    pub stderr: f64,
    pub trials: u64,
    pub master_seed: u64,
}

impl EstimateRow {
    pub fn new(estimator: impl Into<String>, est: &Estimate, master_seed: u64) -> Self {
        Self {
            estimator: estimator.into(),
            value: est.value,
            stderr: est.stderr,
            trials: est.trials(),
            master_seed,
        }
    }
}

pub fn write_estimate_rows<W: Write>(out: W, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
