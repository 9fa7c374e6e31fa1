//! Data points, losses, comparison functions, and the algorithm contract.
//!
//! Features and labels are 64-bit integers. Predictions are `f64` for single
//! models; the paired construction in [`crate::reduction`] predicts `(f64, f64)`.

use std::fmt;
use std::ops::Deref;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: i64,
    pub y: i64,
}

impl DataPoint {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for DataPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// An ordered collection of points. Order is significant: batching and
/// leave-one-out are index based.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Dataset {
    points: Vec<DataPoint>,
}

impl Dataset {
    pub fn new(points: Vec<DataPoint>) -> Self {
        Self { points }
    }

    pub fn from_pairs(pairs: &[(i64, i64)]) -> Self {
        pairs.iter().map(|&(x, y)| DataPoint::new(x, y)).collect()
    }

    pub fn points(&self) -> &[DataPoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<DataPoint> {
        self.points
    }

    pub fn contains(&self, pt: &DataPoint) -> bool {
        self.points.contains(pt)
    }

    /// Copy of the dataset with index `j` removed.
    pub fn without(&self, j: usize) -> Dataset {
        let mut points = self.points.clone();
        points.remove(j);
        Dataset { points }
    }

    pub fn push(&mut self, pt: DataPoint) {
        self.points.push(pt);
    }
}

impl Deref for Dataset {
    type Target = [DataPoint];

    fn deref(&self) -> &[DataPoint] {
        &self.points
    }
}

impl From<Vec<DataPoint>> for Dataset {
    fn from(points: Vec<DataPoint>) -> Self {
        Self { points }
    }
}

impl FromIterator<DataPoint> for Dataset {
    fn from_iter<I: IntoIterator<Item = DataPoint>>(iter: I) -> Self {
        Self {
            points: iter.into_iter().collect(),
        }
    }
}

/// A random seed in `[0, 1]`, stored as a 64-bit fraction `u / 2^64`.
#[derive(
    Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Seed(pub u64);

const TWO_POW_64: f64 = 18_446_744_073_709_551_616.0;

impl Seed {
    pub fn value(self) -> f64 {
        self.0 as f64 / TWO_POW_64
    }

    /// Nearest representable seed to a fraction in `[0, 1]`.
    pub fn from_fraction(f: f64) -> Seed {
        let f = f.clamp(0.0, 1.0);
        Seed((f * TWO_POW_64) as u64)
    }

    /// `k` equispaced seeds at the midpoints `(i + 1/2) / k`.
    pub fn grid(k: usize) -> Vec<Seed> {
        (0..k)
            .map(|i| Seed::from_fraction((i as f64 + 0.5) / k as f64))
            .collect()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Seed {
        Seed(rng.next_u64())
    }
}

/// A loss over predictions of type `P`.
pub trait Loss<P: ?Sized>: Send + Sync {
    fn eval(&self, yhat: &P, y: i64) -> Result<f64>;

    /// Upper bound on every evaluation; `f64::INFINITY` when unbounded.
    fn bound(&self) -> f64;

    /// True when every evaluation lies in `{0, 1}`.
    fn is_binary(&self) -> bool {
        false
    }
}

type CustomLossFn = dyn Fn(f64, i64) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct CustomLoss {
    name: String,
    bound: f64,
    f: Arc<CustomLossFn>,
}

impl fmt::Debug for CustomLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomLoss")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum LossFn {
    ZeroOne,
    /// `1{|yhat - y| > radius}`.
    Thresholded {
        radius: f64,
    },
    Squared,
    Absolute,
    Custom(CustomLoss),
}

impl LossFn {
    pub fn custom(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(f64, i64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        LossFn::Custom(CustomLoss {
            name: name.into(),
            bound,
            f: Arc::new(f),
        })
    }

    pub fn name(&self) -> String {
        match self {
            LossFn::ZeroOne => "zero-one".into(),
            LossFn::Thresholded { radius } => format!("thresholded({radius})"),
            LossFn::Squared => "squared".into(),
            LossFn::Absolute => "absolute".into(),
            LossFn::Custom(c) => c.name.clone(),
        }
    }

    pub fn is_unbounded(&self) -> bool {
        !self.bound().is_finite()
    }
}

impl std::str::FromStr for LossFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "zero-one" | "zero_one" | "01" => return Ok(LossFn::ZeroOne),
            "squared" => return Ok(LossFn::Squared),
            "absolute" => return Ok(LossFn::Absolute),
            _ => {}
        }
        if let Some(r) = s.strip_prefix("thresholded:") {
            let radius: f64 = r
                .parse()
                .map_err(|_| Error::Config(format!("bad threshold radius `{r}`")))?;
            return Ok(LossFn::Thresholded { radius });
        }
        Err(Error::Config(format!("unknown loss `{s}`")))
    }
}

impl Loss<f64> for LossFn {
    fn eval(&self, yhat: &f64, y: i64) -> Result<f64> {
        let yhat = *yhat;
        let yf = y as f64;
        let value = match self {
            LossFn::ZeroOne => {
                if yhat == yf {
                    0.0
                } else {
                    1.0
                }
            }
            LossFn::Thresholded { radius } => {
                if (yhat - yf).abs() > *radius {
                    1.0
                } else {
                    0.0
                }
            }
            LossFn::Squared => (yhat - yf) * (yhat - yf),
            LossFn::Absolute => (yhat - yf).abs(),
            LossFn::Custom(c) => {
                let v = (c.f)(yhat, y);
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Loss(format!(
                        "custom loss `{}` returned {v} at (yhat={yhat}, y={y})",
                        c.name
                    )));
                }
                if v > c.bound {
                    return Err(Error::Loss(format!(
                        "custom loss `{}` returned {v} above its bound {}",
                        c.name, c.bound
                    )));
                }
                v
            }
        };
        if !value.is_finite() {
            return Err(Error::Loss(format!(
                "{} loss overflowed at (yhat={yhat}, y={y})",
                self.name()
            )));
        }
        Ok(value)
    }

    fn bound(&self) -> f64 {
        match self {
            LossFn::ZeroOne | LossFn::Thresholded { .. } => 1.0,
            LossFn::Squared | LossFn::Absolute => f64::INFINITY,
            LossFn::Custom(c) => c.bound,
        }
    }

    fn is_binary(&self) -> bool {
        matches!(self, LossFn::ZeroOne | LossFn::Thresholded { .. })
    }
}

pub fn loss_eval(loss: &LossFn, yhat: f64, y: i64) -> Result<f64> {
    loss.eval(&yhat, y)
}

type CustomPsiFn = dyn Fn(f64, f64, i64) -> f64 + Send + Sync;

#[derive(Clone)]
pub struct CustomComparison {
    name: String,
    bound: f64,
    f: Arc<CustomPsiFn>,
}

impl fmt::Debug for CustomComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomComparison")
            .field("name", &self.name)
            .field("bound", &self.bound)
            .finish_non_exhaustive()
    }
}

/// An antisymmetric comparison `psi(yhat0, yhat1, y)`; positive values mean
/// `yhat1` is the better prediction.
#[derive(Clone, Debug)]
pub enum ComparisonFn {
    /// `loss(yhat0, y) - loss(yhat1, y)`.
    LossDifference(LossFn),
    /// `1{loss(yhat0) > loss(yhat1)} - 1{loss(yhat0) < loss(yhat1)}`.
    LossOrderIndicator(LossFn),
    Custom(CustomComparison),
}

/// Number of random triples the antisymmetry validator probes.
pub const ANTISYMMETRY_PROBES: usize = 10_000;

impl ComparisonFn {
    /// Wrap a user comparison function, rejecting it if random probing finds an
    /// antisymmetry or bound violation.
    pub fn custom(
        name: impl Into<String>,
        bound: f64,
        f: impl Fn(f64, f64, i64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let psi = ComparisonFn::Custom(CustomComparison {
            name: name.into(),
            bound,
            f: Arc::new(f),
        });
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_a5a5);
        let probes: Vec<(f64, f64, i64)> = (0..ANTISYMMETRY_PROBES)
            .map(|_| {
                (
                    rng.random_range(-8i64..=8) as f64,
                    rng.random_range(-8i64..=8) as f64,
                    rng.random_range(-8i64..=8),
                )
            })
            .collect();
        psi.check_antisymmetry(&probes)?;
        Ok(psi)
    }

    pub fn name(&self) -> String {
        match self {
            ComparisonFn::LossDifference(l) => format!("loss-difference[{}]", l.name()),
            ComparisonFn::LossOrderIndicator(l) => format!("loss-order[{}]", l.name()),
            ComparisonFn::Custom(c) => c.name.clone(),
        }
    }

    pub fn bound(&self) -> f64 {
        match self {
            ComparisonFn::LossDifference(l) => l.bound(),
            ComparisonFn::LossOrderIndicator(_) => 1.0,
            ComparisonFn::Custom(c) => c.bound,
        }
    }

    /// The underlying loss, for the loss-based kinds.
    pub fn loss(&self) -> Option<&LossFn> {
        match self {
            ComparisonFn::LossDifference(l) | ComparisonFn::LossOrderIndicator(l) => Some(l),
            ComparisonFn::Custom(_) => None,
        }
    }

    pub fn eval(&self, yhat0: f64, yhat1: f64, y: i64) -> Result<f64> {
        let v = match self {
            ComparisonFn::LossDifference(l) => l.eval(&yhat0, y)? - l.eval(&yhat1, y)?,
            ComparisonFn::LossOrderIndicator(l) => {
                let (a, b) = (l.eval(&yhat0, y)?, l.eval(&yhat1, y)?);
                if a > b {
                    1.0
                } else if a < b {
                    -1.0
                } else {
                    0.0
                }
            }
            ComparisonFn::Custom(c) => (c.f)(yhat0, yhat1, y),
        };
        if !v.is_finite() || v.abs() > self.bound() {
            return Err(Error::Contract(format!(
                "comparison `{}` returned {v}, outside [-{b}, {b}]",
                self.name(),
                b = self.bound()
            )));
        }
        Ok(v)
    }

    pub fn check_antisymmetry(&self, probes: &[(f64, f64, i64)]) -> Result<()> {
        for &(a, b, y) in probes {
            let forward = self.eval(a, b, y)?;
            let backward = self.eval(b, a, y)?;
            if forward != -backward {
                return Err(Error::Contract(format!(
                    "`{}` is not antisymmetric at ({a}, {b}, {y}): {forward} vs {backward}",
                    self.name()
                )));
            }
        }
        Ok(())
    }
}

impl std::str::FromStr for ComparisonFn {
    type Err = Error;

    /// `loss-difference:<loss>` or `loss-order:<loss>`, e.g. `loss-order:zero-one`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, loss) = s.split_once(':').unwrap_or((s, "zero-one"));
        let loss: LossFn = loss.parse()?;
        match kind {
            "loss-difference" | "difference" => Ok(ComparisonFn::LossDifference(loss)),
            "loss-order" | "order" => Ok(ComparisonFn::LossOrderIndicator(loss)),
            _ => Err(Error::Config(format!("unknown comparison function `{s}`"))),
        }
    }
}

pub fn compare_eval(psi: &ComparisonFn, yhat0: f64, yhat1: f64, y: i64) -> Result<f64> {
    psi.eval(yhat0, yhat1, y)
}

type PredictFn<P> = dyn Fn(i64) -> P + Send + Sync;

/// A deterministic prediction function with a human-readable descriptor.
pub struct FittedModel<P = f64> {
    predict: Arc<PredictFn<P>>,
    descriptor: String,
}

impl<P> Clone for FittedModel<P> {
    fn clone(&self) -> Self {
        Self {
            predict: Arc::clone(&self.predict),
            descriptor: self.descriptor.clone(),
        }
    }
}

impl<P> fmt::Debug for FittedModel<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FittedModel({})", self.descriptor)
    }
}

impl<P> FittedModel<P> {
    pub fn new(
        descriptor: impl Into<String>,
        f: impl Fn(i64) -> P + Send + Sync + 'static,
    ) -> Self {
        Self {
            predict: Arc::new(f),
            descriptor: descriptor.into(),
        }
    }

    pub fn predict(&self, x: i64) -> P {
        (self.predict)(x)
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }
}

impl<P: Clone + Send + Sync + fmt::Debug + 'static> FittedModel<P> {
    pub fn constant(c: P) -> Self {
        let descriptor = format!("constant({c:?})");
        FittedModel::new(descriptor, move |_| c.clone())
    }
}

/// The black-box contract: `(dataset, seed) -> model`, deterministic in both.
pub trait Algorithm: Send + Sync {
    type Prediction: Clone + Send + Sync + 'static;

    fn name(&self) -> String;

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<FittedModel<Self::Prediction>>;

    /// True when `fit` ignores its seed.
    fn is_deterministic(&self) -> bool;
}

pub type AlgorithmHandle = Arc<dyn Algorithm<Prediction = f64>>;

impl<A: Algorithm + ?Sized> Algorithm for Arc<A> {
    type Prediction = A::Prediction;

    fn name(&self) -> String {
        (**self).name()
    }

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<FittedModel<Self::Prediction>> {
        (**self).fit(data, seed)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<A: Algorithm + ?Sized> Algorithm for &A {
    type Prediction = A::Prediction;

    fn name(&self) -> String {
        (**self).name()
    }

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<FittedModel<Self::Prediction>> {
        (**self).fit(data, seed)
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

pub fn fit<A: Algorithm + ?Sized>(
    alg: &A,
    data: &Dataset,
    seed: Seed,
) -> Result<FittedModel<A::Prediction>> {
    alg.fit(data, seed)
}
