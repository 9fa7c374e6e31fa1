//! The black-box test loop.
//!
//! A [`TestProtocol`] proposes `(dataset, seed)` queries and finally a
//! decision. The harness answers each query by fitting the algorithm and
//! hands back only the fitted model, so protocols cannot look inside the
//! algorithm. Every interaction is recorded in a [`Transcript`].

use std::collections::{BTreeMap, BTreeSet};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::FiniteDistribution;
use crate::error::{Error, Result};
use crate::model::{Algorithm, DataPoint, Dataset, FittedModel, Seed};
use crate::rng::{run_trials, TrialStreams};
use crate::stats::{clopper_pearson, mean_stderr};

pub const DEFAULT_MAX_ROUNDS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Query { dataset: Dataset, seed: Seed },
    Decide(bool),
}

/// One answered query. `models` is a single model for evaluation tests and a
/// pair for comparison tests.
#[derive(Clone, Debug)]
pub struct Round<M> {
    pub dataset: Dataset,
    pub seed: Seed,
    pub models: M,
}

pub type ModelPair = (FittedModel, FittedModel);

/// A staged black-box test. `next` is called with the input data, all
/// answered rounds so far, and fresh randomness `zeta`; it returns either the
/// next query or the final decision (`true` = reject the null).
pub trait TestProtocol<M>: Send + Sync {
    fn name(&self) -> String;

    /// Round budget for an input of `data_len` points.
    fn max_rounds(&self, _data_len: usize) -> usize {
        DEFAULT_MAX_ROUNDS
    }

    fn next(&self, data: &Dataset, history: &[Round<M>], zeta: Seed) -> Result<Step>;
}

impl<M, T: TestProtocol<M> + ?Sized> TestProtocol<M> for &T {
    fn name(&self) -> String {
        (**self).name()
    }
    fn max_rounds(&self, data_len: usize) -> usize {
        (**self).max_rounds(data_len)
    }
    fn next(&self, data: &Dataset, history: &[Round<M>], zeta: Seed) -> Result<Step> {
        (**self).next(data, history, zeta)
    }
}

impl<M, T: TestProtocol<M> + ?Sized> TestProtocol<M> for std::sync::Arc<T> {
    fn name(&self) -> String {
        (**self).name()
    }
    fn max_rounds(&self, data_len: usize) -> usize {
        (**self).max_rounds(data_len)
    }
    fn next(&self, data: &Dataset, history: &[Round<M>], zeta: Seed) -> Result<Step> {
        (**self).next(data, history, zeta)
    }
}

#[derive(Clone, Debug)]
pub struct Transcript<M> {
    pub protocol: String,
    pub algorithms: Vec<String>,
    pub input: Dataset,
    pub rounds: Vec<Round<M>>,
    pub decision: bool,
    pub master_seed: u64,
}

/// Anything whose fitted models can be summarized in a transcript record.
pub trait Describe {
    fn descriptors(&self) -> Vec<String>;
}

impl<P> Describe for FittedModel<P> {
    fn descriptors(&self) -> Vec<String> {
        vec![self.descriptor().to_string()]
    }
}

impl Describe for ModelPair {
    fn descriptors(&self) -> Vec<String> {
        vec![
            self.0.descriptor().to_string(),
            self.1.descriptor().to_string(),
        ]
    }
}

/// Serializable form of a transcript: datasets are index lists into a
/// shared, sorted point table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub protocol: String,
    pub algorithms: Vec<String>,
    pub master_seed: u64,
    pub points: Vec<DataPoint>,
    pub input: Vec<usize>,
    pub rounds: Vec<RoundRecord>,
    pub decision: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub dataset: Vec<usize>,
    pub seed: u64,
    pub models: Vec<String>,
}

impl<M> Transcript<M> {
    pub fn decision(&self) -> bool {
        self.decision
    }

    /// Every distinct point in the input and in any queried dataset.
    pub fn touched_points(&self) -> BTreeSet<DataPoint> {
        let mut seen: BTreeSet<DataPoint> = self.input.iter().copied().collect();
        for r in &self.rounds {
            seen.extend(r.dataset.iter().copied());
        }
        seen
    }

    pub fn touches(&self, pt: &DataPoint) -> bool {
        self.input.contains(pt) || self.rounds.iter().any(|r| r.dataset.contains(pt))
    }
}

impl<M: Describe> Transcript<M> {
    pub fn to_record(&self) -> TranscriptRecord {
        let points: Vec<DataPoint> = self.touched_points().into_iter().collect();
        let index: BTreeMap<DataPoint, usize> =
            points.iter().enumerate().map(|(i, p)| (*p, i)).collect();
        let encode = |d: &Dataset| d.iter().map(|p| index[p]).collect::<Vec<_>>();
        TranscriptRecord {
            protocol: self.protocol.clone(),
            algorithms: self.algorithms.clone(),
            master_seed: self.master_seed,
            input: encode(&self.input),
            rounds: self
                .rounds
                .iter()
                .map(|r| RoundRecord {
                    dataset: encode(&r.dataset),
                    seed: r.seed.0,
                    models: r.models.descriptors(),
                })
                .collect(),
            decision: self.decision as u8,
            points,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_record())?)
    }
}

impl TranscriptRecord {
    pub fn from_json(s: &str) -> Result<Self> {
        let record: TranscriptRecord = serde_json::from_str(s)?;
        let bad = record
            .input
            .iter()
            .chain(record.rounds.iter().flat_map(|r| r.dataset.iter()))
            .any(|&i| i >= record.points.len());
        if bad {
            return Err(Error::Config(
                "transcript index outside the point table".into(),
            ));
        }
        Ok(record)
    }

    pub fn input_dataset(&self) -> Dataset {
        self.input.iter().map(|&i| self.points[i]).collect()
    }
}

fn drive<M>(
    protocol: &dyn TestProtocol<M>,
    algorithms: Vec<String>,
    data: &Dataset,
    master_seed: u64,
    mut answer: impl FnMut(&Dataset, Seed) -> Result<M>,
) -> Result<Transcript<M>> {
    let mut zetas = ChaCha8Rng::seed_from_u64(master_seed);
    let max_rounds = protocol.max_rounds(data.len());
    let mut rounds: Vec<Round<M>> = Vec::new();
    loop {
        let zeta = Seed(zetas.next_u64());
        match protocol.next(data, &rounds, zeta)? {
            Step::Decide(decision) => {
                return Ok(Transcript {
                    protocol: protocol.name(),
                    algorithms,
                    input: data.clone(),
                    rounds,
                    decision,
                    master_seed,
                })
            }
            Step::Query { dataset, seed } => {
                if rounds.len() >= max_rounds {
                    return Err(Error::RoundsExceeded {
                        protocol: protocol.name(),
                        max_rounds,
                    });
                }
                let models = answer(&dataset, seed)?;
                rounds.push(Round {
                    dataset,
                    seed,
                    models,
                });
            }
        }
    }
}

/// Run an evaluation test. Protocol randomness is a ChaCha stream seeded by
/// `master_seed`; the r-th call to `next` receives its r-th output.
pub fn run_test_seeded<A>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    data: &Dataset,
    master_seed: u64,
) -> Result<Transcript<FittedModel<A::Prediction>>>
where
    A: Algorithm + ?Sized,
{
    drive(protocol, vec![alg.name()], data, master_seed, |d, s| {
        alg.fit(d, s)
    })
}

pub fn run_test<A, R>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    data: &Dataset,
    rng: &mut R,
) -> Result<(bool, Transcript<FittedModel<A::Prediction>>)>
where
    A: Algorithm + ?Sized,
    R: RngCore + ?Sized,
{
    let t = run_test_seeded(protocol, alg, data, rng.next_u64())?;
    Ok((t.decision, t))
}

/// Run a comparison test: each query is answered by fitting both algorithms
/// on the same dataset with the same seed.
pub fn run_compare_test_seeded<A0, A1>(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &A0,
    alg1: &A1,
    data: &Dataset,
    master_seed: u64,
) -> Result<Transcript<ModelPair>>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    drive(
        protocol,
        vec![alg0.name(), alg1.name()],
        data,
        master_seed,
        |d, s| Ok((alg0.fit(d, s)?, alg1.fit(d, s)?)),
    )
}

pub fn run_compare_test<A0, A1, R>(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &A0,
    alg1: &A1,
    data: &Dataset,
    rng: &mut R,
) -> Result<(bool, Transcript<ModelPair>)>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
    R: RngCore + ?Sized,
{
    let t = run_compare_test_seeded(protocol, alg0, alg1, data, rng.next_u64())?;
    Ok((t.decision, t))
}

/// Decides immediately without querying.
#[derive(Clone, Debug)]
pub struct FixedDecision(pub bool);

impl<M> TestProtocol<M> for FixedDecision {
    fn name(&self) -> String {
        format!("fixed-decision({})", self.0 as u8)
    }

    fn next(&self, _data: &Dataset, _history: &[Round<M>], _zeta: Seed) -> Result<Step> {
        Ok(Step::Decide(self.0))
    }
}

/// Queries `rounds` random subsamples (with replacement) of the input, each
/// of the input's size, then decides with a fair coin. Never invents points.
#[derive(Clone, Debug)]
pub struct Resample {
    pub rounds: usize,
}

impl<M> TestProtocol<M> for Resample {
    fn name(&self) -> String {
        format!("resample({})", self.rounds)
    }

    fn max_rounds(&self, _data_len: usize) -> usize {
        self.rounds
    }

    fn next(&self, data: &Dataset, history: &[Round<M>], zeta: Seed) -> Result<Step> {
        if history.len() >= self.rounds || data.is_empty() {
            return Ok(Step::Decide(zeta.value() < 0.5));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(zeta.0);
        let dataset = (0..data.len())
            .map(|_| data[(rng.next_u64() % data.len() as u64) as usize])
            .collect();
        Ok(Step::Query {
            dataset,
            seed: Seed(rng.next_u64()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppearanceEstimate {
    pub point: DataPoint,
    pub hits: u64,
    pub trials: u64,
    pub estimate: f64,
    pub ci95: (f64, f64),
}

type TouchFn<'a> = dyn Fn(&Dataset, u64, &DataPoint) -> Result<bool> + Sync + 'a;

fn appearance_with(
    touches: &TouchFn<'_>,
    dist: &FiniteDistribution,
    n_data: usize,
    pt: DataPoint,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<AppearanceEstimate> {
    if trials == 0 {
        return Err(Error::Config(
            "appearance estimation needs at least one trial".into(),
        ));
    }
    let seen = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n_data, &mut rng);
        touches(&data, rng.next_u64(), &pt)
    })?;
    let hits = seen.iter().filter(|&&s| s).count() as u64;
    Ok(AppearanceEstimate {
        point: pt,
        hits,
        trials,
        estimate: hits as f64 / trials as f64,
        ci95: clopper_pearson(hits, trials),
    })
}

#[allow(clippy::too_many_arguments)]
fn find_rare_with<R: RngCore + ?Sized>(
    touches: &TouchFn<'_>,
    dist: &FiniteDistribution,
    n_data: usize,
    epsilon: f64,
    trials: u64,
    universe_rng: &mut R,
    workers: Option<usize>,
) -> Result<AppearanceEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if trials == 0 || clopper_pearson(0, trials).1 >= epsilon {
        return Err(Error::Config(format!(
            "{trials} trials cannot certify appearance probability below {epsilon}"
        )));
    }
    let streams = TrialStreams::from_rng(universe_rng);
    for _ in 0..RARE_POINT_CANDIDATES {
        let candidate = DataPoint::new(
            universe_rng.next_u64() as i64,
            universe_rng.next_u64() as i64,
        );
        if dist.contains(&candidate) {
            continue;
        }
        let est = appearance_with(touches, dist, n_data, candidate, trials, streams, workers)?;
        if est.ci95.1 < epsilon {
            return Ok(est);
        }
    }
    Err(Error::Verification(format!(
        "no candidate among {RARE_POINT_CANDIDATES} fresh points appears with probability below {epsilon}"
    )))
}

/// Monte Carlo estimate of the probability that `pt` appears in the input or
/// in any queried dataset of one test run on fresh data of size `n_data`.
#[allow(clippy::too_many_arguments)]
pub fn appearance_probability<A>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    dist: &FiniteDistribution,
    n_data: usize,
    pt: DataPoint,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<AppearanceEstimate>
where
    A: Algorithm + ?Sized,
{
    let touches = |data: &Dataset, seed: u64, pt: &DataPoint| {
        Ok(run_test_seeded(protocol, alg, data, seed)?.touches(pt))
    };
    appearance_with(&touches, dist, n_data, pt, trials, streams, workers)
}

/// [`appearance_probability`] for a comparison test.
#[allow(clippy::too_many_arguments)]
pub fn appearance_probability_compare<A0, A1>(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &A0,
    alg1: &A1,
    dist: &FiniteDistribution,
    n_data: usize,
    pt: DataPoint,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<AppearanceEstimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    let touches = |data: &Dataset, seed: u64, pt: &DataPoint| {
        Ok(run_compare_test_seeded(protocol, alg0, alg1, data, seed)?.touches(pt))
    };
    appearance_with(&touches, dist, n_data, pt, trials, streams, workers)
}

/// Candidates tried by [`find_rare_point`] before giving up.
pub const RARE_POINT_CANDIDATES: usize = 32;

/// Search the 64-bit universe for a point whose appearance probability has a
/// 95% upper confidence bound below `epsilon`.
#[allow(clippy::too_many_arguments)]
pub fn find_rare_point<A, R>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    dist: &FiniteDistribution,
    n_data: usize,
    epsilon: f64,
    trials: u64,
    universe_rng: &mut R,
    workers: Option<usize>,
) -> Result<AppearanceEstimate>
where
    A: Algorithm + ?Sized,
    R: RngCore + ?Sized,
{
    let touches = |data: &Dataset, seed: u64, pt: &DataPoint| {
        Ok(run_test_seeded(protocol, alg, data, seed)?.touches(pt))
    };
    find_rare_with(
        &touches,
        dist,
        n_data,
        epsilon,
        trials,
        universe_rng,
        workers,
    )
}

/// [`find_rare_point`] for a comparison test.
#[allow(clippy::too_many_arguments)]
pub fn find_rare_point_compare<A0, A1, R>(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &A0,
    alg1: &A1,
    dist: &FiniteDistribution,
    n_data: usize,
    epsilon: f64,
    trials: u64,
    universe_rng: &mut R,
    workers: Option<usize>,
) -> Result<AppearanceEstimate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
    R: RngCore + ?Sized,
{
    let touches = |data: &Dataset, seed: u64, pt: &DataPoint| {
        Ok(run_compare_test_seeded(protocol, alg0, alg1, data, seed)?.touches(pt))
    };
    find_rare_with(
        &touches,
        dist,
        n_data,
        epsilon,
        trials,
        universe_rng,
        workers,
    )
}

/// Counting check behind the rare-point argument: over `runs` test runs, the
/// number of points appearing in at least a fraction `delta` of runs cannot
/// exceed the most points any single run touched, divided by `delta / 2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AppearanceCensus {
    pub delta: f64,
    pub runs: u64,
    pub distinct_points: usize,
    pub frequent_points: usize,
    pub max_points_per_run: usize,
    pub bound: f64,
    pub mean_points_per_run: f64,
}

impl AppearanceCensus {
    pub fn holds(&self) -> bool {
        self.frequent_points as f64 <= self.bound
    }
}

#[allow(clippy::too_many_arguments)]
pub fn appearance_census<A>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    dist: &FiniteDistribution,
    n_data: usize,
    delta: f64,
    runs: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<AppearanceCensus>
where
    A: Algorithm + ?Sized,
{
    if !(delta > 0.0 && delta <= 1.0) || runs == 0 {
        return Err(Error::Config(
            "census needs 0 < delta <= 1 and runs >= 1".into(),
        ));
    }
    let touched = run_trials(runs, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n_data, &mut rng);
        let transcript = run_test_seeded(protocol, alg, &data, rng.next_u64())?;
        // Size budget for this run: input plus every queried point, with multiplicity.
        let budget = data.len()
            + transcript
                .rounds
                .iter()
                .map(|r| r.dataset.len())
                .sum::<usize>();
        Ok((transcript.touched_points(), budget))
    })?;
    let mut counts: BTreeMap<DataPoint, u64> = BTreeMap::new();
    let mut max_budget = 0;
    let mut sizes = Vec::with_capacity(touched.len());
    for (points, budget) in &touched {
        max_budget = max_budget.max(*budget);
        sizes.push(points.len() as f64);
        for p in points {
            *counts.entry(*p).or_default() += 1;
        }
    }
    let frequent = counts
        .values()
        .filter(|&&c| c as f64 >= delta * runs as f64)
        .count();
    Ok(AppearanceCensus {
        delta,
        runs,
        distinct_points: counts.len(),
        frequent_points: frequent,
        max_points_per_run: max_budget,
        bound: max_budget as f64 / (delta / 2.0),
        mean_points_per_run: mean_stderr(&sizes).0,
    })
}

/// Empirical rejection rate of an evaluation test on fresh data of size
/// `n_data`.
pub fn rejection_rate<A>(
    protocol: &dyn TestProtocol<FittedModel<A::Prediction>>,
    alg: &A,
    dist: &FiniteDistribution,
    n_data: usize,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<RejectionRate>
where
    A: Algorithm + ?Sized,
{
    let decisions = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n_data, &mut rng);
        Ok(run_test_seeded(protocol, alg, &data, rng.next_u64())?.decision)
    })?;
    Ok(RejectionRate::from_decisions(&decisions))
}

/// Empirical rejection rate of a comparison test.
#[allow(clippy::too_many_arguments)]
pub fn compare_rejection_rate<A0, A1>(
    protocol: &dyn TestProtocol<ModelPair>,
    alg0: &A0,
    alg1: &A1,
    dist: &FiniteDistribution,
    n_data: usize,
    trials: u64,
    streams: TrialStreams,
    workers: Option<usize>,
) -> Result<RejectionRate>
where
    A0: Algorithm<Prediction = f64> + ?Sized,
    A1: Algorithm<Prediction = f64> + ?Sized,
{
    let decisions = run_trials(trials, workers, |t| {
        let mut rng = streams.trial(t);
        let data = dist.sample_dataset(n_data, &mut rng);
        Ok(run_compare_test_seeded(protocol, alg0, alg1, &data, rng.next_u64())?.decision)
    })?;
    Ok(RejectionRate::from_decisions(&decisions))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RejectionRate {
    pub rejections: u64,
    pub trials: u64,
    pub rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / trials)`.
    pub stderr: f64,
}

impl RejectionRate {
    pub fn from_decisions(decisions: &[bool]) -> Self {
        let trials = decisions.len() as u64;
        let rejections = decisions.iter().filter(|&&d| d).count() as u64;
        let rate = if trials == 0 {
            0.0
        } else {
            rejections as f64 / trials as f64
        };
        let stderr = if trials == 0 {
            0.0
        } else {
            (rate * (1.0 - rate) / trials as f64).sqrt()
        };
        Self {
            rejections,
            trials,
            rate,
            stderr,
        }
    }

    /// Standard error under a hypothesized rejection probability `p`.
    pub fn stderr_at(&self, p: f64) -> f64 {
        (p * (1.0 - p) / self.trials.max(1) as f64).sqrt()
    }
}
