//! Comparison as evaluation: two algorithms packed into one whose predictions
//! are pairs, scored by `B - psi`.

use std::sync::Arc;

use serde::Serialize;

use crate::dist::{default_prediction_space, max_delta, max_risk, FiniteDistribution};
use crate::error::{Error, Result};
use crate::estimate::{algorithm_risk_exact, delta_exact, pair_stability_exact, stability_exact};
use crate::model::{Algorithm, ComparisonFn, DataPoint, FittedModel, Loss, Seed};

pub type PairPrediction = (f64, f64);

pub type PairedHandle = Arc<dyn Algorithm<Prediction = PairPrediction>>;

/// Fits both components on the same data with the same seed.
pub struct PairedAlgorithm<A0, A1> {
    pub alg0: A0,
    pub alg1: A1,
}

impl<A0, A1> Algorithm for PairedAlgorithm<A0, A1>
where
    A0: Algorithm<Prediction = f64>,
    A1: Algorithm<Prediction = f64>,
{
    type Prediction = PairPrediction;

    fn name(&self) -> String {
        format!("pair({}, {})", self.alg0.name(), self.alg1.name())
    }

    fn fit(&self, data: &[DataPoint], seed: Seed) -> Result<FittedModel<PairPrediction>> {
        let f0 = self.alg0.fit(data, seed)?;
        let f1 = self.alg1.fit(data, seed)?;
        let descriptor = format!("({}, {})", f0.descriptor(), f1.descriptor());
        Ok(FittedModel::new(descriptor, move |x| {
            (f0.predict(x), f1.predict(x))
        }))
    }

    fn is_deterministic(&self) -> bool {
        self.alg0.is_deterministic() && self.alg1.is_deterministic()
    }
}

pub fn pair_algorithms<A0, A1>(alg0: A0, alg1: A1) -> PairedHandle
where
    A0: Algorithm<Prediction = f64> + 'static,
    A1: Algorithm<Prediction = f64> + 'static,
{
    Arc::new(PairedAlgorithm { alg0, alg1 })
}

/// `B - psi(yhat0, yhat1, y)`, with values in `[0, 2B]`.
#[derive(Clone, Debug)]
pub struct TildeLoss {
    psi: ComparisonFn,
    b: f64,
}

impl TildeLoss {
    pub fn psi(&self) -> &ComparisonFn {
        &self.psi
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

pub fn tilde_loss(psi: ComparisonFn, b: f64) -> Result<TildeLoss> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(Error::Domain(format!(
            "B must be positive and finite, got {b}"
        )));
    }
    if psi.bound() > b {
        return Err(Error::Contract(format!(
            "comparison function `{}` has bound {} above B = {b}",
            psi.name(),
            psi.bound()
        )));
    }
    Ok(TildeLoss { psi, b })
}

impl Loss<PairPrediction> for TildeLoss {
    fn eval(&self, yhat: &PairPrediction, y: i64) -> Result<f64> {
        let v = self.psi.eval(yhat.0, yhat.1, y)?;
        if v.abs() > self.b {
            return Err(Error::Contract(format!(
                "psi({}, {}, {y}) = {v} exceeds B = {}",
                yhat.0, yhat.1, self.b
            )));
        }
        Ok(self.b - v)
    }

    fn bound(&self) -> f64 {
        2.0 * self.b
    }
}

/// Both sides of the three identities linking the paired problem to the
/// comparison problem, computed by exact enumeration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    #[serde(rename = "B")]
    pub b: f64,
    pub n: usize,
    /// `R~_{P,n}(A~)`.
    pub tilde_risk: f64,
    /// `Delta_{P,n}(A0, A1)`.
    pub delta: f64,
    /// `|R~ - (B - Delta)|`.
    pub risk_gap: f64,
    /// `R~_P^max` over the product prediction space.
    pub tilde_max: f64,
    pub delta_max: f64,
    /// `|R~max - (B + Delta_max)|`.
    pub extremal_gap: f64,
    /// `(q, beta~_q, beta_q(A0, A1))` for `q = 1, 2`.
    pub stability: Vec<(u32, f64, f64)>,
    pub stability_gap: f64,
}

impl ReductionReport {
    pub fn max_gap(&self) -> f64 {
        self.risk_gap.max(self.extremal_gap).max(self.stability_gap)
    }
}

/// Check `R~ = B - Delta`, `R~max = B + Delta_max` and `beta~_q = beta_q(A0, A1)`
/// on an enumerable instance, with `B = psi.bound()`.
pub fn reduction_identity_check<A0, A1>(
    alg0: &A0,
    alg1: &A1,
    psi: &ComparisonFn,
    dist: &FiniteDistribution,
    n: usize,
) -> Result<ReductionReport>
where
    A0: Algorithm<Prediction = f64>,
    A1: Algorithm<Prediction = f64>,
{
    let b = psi.bound();
    let loss = tilde_loss(psi.clone(), b)?;
    let paired = PairedAlgorithm { alg0, alg1 };

    let tilde_risk = algorithm_risk_exact(&paired, dist, n, &loss)?.value;
    let delta = delta_exact(alg0, alg1, psi, dist, n)?.value;

    let space = default_prediction_space(dist);
    let product: Vec<PairPrediction> = space
        .iter()
        .flat_map(|&a| space.iter().map(move |&c| (a, c)))
        .collect();
    let tilde_max = max_risk(dist, &loss, &product)?.value;
    let delta_max = max_delta(dist, psi, &space)?.value;

    let mut stability = Vec::new();
    let mut stability_gap: f64 = 0.0;
    for q in [1, 2] {
        let tilde = stability_exact(&paired, dist, n, q, &loss)?.value();
        let pair = pair_stability_exact(alg0, alg1, psi, dist, n, q)?.value();
        stability_gap = stability_gap.max((tilde - pair).abs());
        stability.push((q, tilde, pair));
    }
    Ok(ReductionReport {
        b,
        n,
        tilde_risk,
        delta,
        risk_gap: (tilde_risk - (b - delta)).abs(),
        tilde_max,
        delta_max,
        extremal_gap: (tilde_max - (b + delta_max)).abs(),
        stability,
        stability_gap,
    })
}
