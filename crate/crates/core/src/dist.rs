//! Explicit finite distributions over `(x, y)` pairs.
//!
//! Finite support keeps risks, extremal risks and stabilities exactly
//! computable, and the atom mixtures used by the adversarial constructions
//! are represented without approximation.

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution as _;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ComparisonFn, DataPoint, Dataset, FittedModel, Loss};

/// Tolerance on the total mass of a distribution.
pub const NORMALIZATION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: DataPoint,
    pub p: f64,
}

#[derive(Clone, Debug)]
pub struct FiniteDistribution {
    name: String,
    atoms: Vec<Atom>,
    sampler: WeightedIndex<f64>,
}

impl PartialEq for FiniteDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.atoms == other.atoms
    }
}

#[derive(Serialize, Deserialize)]
struct AtomRecord {
    x: i64,
    y: i64,
    p: f64,
}

#[derive(Serialize, Deserialize)]
struct DistributionRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    atoms: Vec<AtomRecord>,
}

impl FiniteDistribution {
    pub fn new(name: impl Into<String>, atoms: Vec<(DataPoint, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::Distribution("no atoms".into()));
        }
        let mut seen = BTreeSet::new();
        let mut total = 0.0;
        for &(pt, p) in &atoms {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::Distribution(format!(
                    "atom {pt} has probability {p}"
                )));
            }
            if !seen.insert(pt) {
                return Err(Error::Distribution(format!("duplicate atom {pt}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Distribution(format!("probabilities sum to {total}")));
        }
        let atoms: Vec<Atom> = atoms
            .into_iter()
            .map(|(point, p)| Atom { point, p })
            .collect();
        let sampler = WeightedIndex::new(atoms.iter().map(|a| a.p))
            .map_err(|e| Error::Distribution(e.to_string()))?;
        Ok(Self {
            name: name.into(),
            atoms,
            sampler,
        })
    }

    pub fn point_mass(pt: DataPoint) -> Self {
        Self::new(format!("delta{pt}"), vec![(pt, 1.0)]).expect("a point mass is valid")
    }

    /// Labels `Y ~ Bernoulli(r)` at the single feature `x = 0`.
    pub fn bernoulli_labels(r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::Distribution(format!("Bernoulli parameter {r}")));
        }
        let mut atoms = Vec::new();
        if r < 1.0 {
            atoms.push((DataPoint::new(0, 0), 1.0 - r));
        }
        if r > 0.0 {
            atoms.push((DataPoint::new(0, 1), r));
        }
        Self::new(format!("bernoulli({r})"), atoms)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn prob(&self, pt: &DataPoint) -> f64 {
        self.atoms
            .iter()
            .find(|a| a.point == *pt)
            .map_or(0.0, |a| a.p)
    }

    pub fn contains(&self, pt: &DataPoint) -> bool {
        self.atoms.iter().any(|a| a.point == *pt)
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.p).sum()
    }

    /// Marginal of `X`.
    pub fn marginal_x(&self) -> BTreeMap<i64, f64> {
        let mut out = BTreeMap::new();
        for a in &self.atoms {
            *out.entry(a.point.x).or_insert(0.0) += a.p;
        }
        out
    }

    pub fn label_support(&self) -> BTreeSet<i64> {
        self.atoms.iter().map(|a| a.point.y).collect()
    }

    /// Atoms grouped by feature value, in atom order within each group.
    pub(crate) fn by_feature(&self) -> BTreeMap<i64, Vec<(i64, f64)>> {
        let mut out: BTreeMap<i64, Vec<(i64, f64)>> = BTreeMap::new();
        for a in &self.atoms {
            out.entry(a.point.x).or_default().push((a.point.y, a.p));
        }
        out
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }

    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> DataPoint {
        self.atoms[self.sample_index(rng)].point
    }

    pub fn sample_dataset<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Dataset {
        (0..n).map(|_| self.sample_point(rng)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.record())?)
    }

    /// The JSON form as a value, for embedding in larger documents.
    pub fn to_json_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self.record())?)
    }

    fn record(&self) -> DistributionRecord {
        DistributionRecord {
            name: Some(self.name.clone()),
            atoms: self
                .atoms
                .iter()
                .map(|a| AtomRecord {
                    x: a.point.x,
                    y: a.point.y,
                    p: a.p,
                })
                .collect(),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let record: DistributionRecord = serde_json::from_str(s)?;
        Self::from_value_record(record)
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let record: DistributionRecord = serde_json::from_value(v)?;
        Self::from_value_record(record)
    }

    fn from_value_record(record: DistributionRecord) -> Result<Self> {
        let atoms = record
            .atoms
            .into_iter()
            .map(|a| (DataPoint::new(a.x, a.y), a.p))
            .collect();
        Self::new(record.name.unwrap_or_else(|| "custom".into()), atoms)
    }
}

pub fn sample_dataset<R: Rng + ?Sized>(
    dist: &FiniteDistribution,
    n: usize,
    rng: &mut R,
) -> Dataset {
    dist.sample_dataset(n, rng)
}

/// Label support plus `{0, 1}`, ascending.
pub fn default_prediction_space(dist: &FiniteDistribution) -> Vec<f64> {
    let mut labels = dist.label_support();
    labels.insert(0);
    labels.insert(1);
    labels.into_iter().map(|y| y as f64).collect()
}

#[derive(Clone, Debug)]
pub struct ExtremalRiskResult<P = f64> {
    pub value: f64,
    pub witness: FittedModel<P>,
}

#[derive(Clone, Debug)]
pub struct ExtremalDeltaResult {
    pub value: f64,
    pub witness: (FittedModel, FittedModel),
}

/// Largest risk of any predictor with values in `space`: a per-feature argmax
/// of the conditional expected loss, ties to the first listed prediction.
///
/// Unbounded losses are refused; their supremum over all predictors is `+inf`.
pub fn max_risk<P, L>(
    dist: &FiniteDistribution,
    loss: &L,
    space: &[P],
) -> Result<ExtremalRiskResult<P>>
where
    P: Clone + Send + Sync + 'static,
    L: Loss<P> + ?Sized,
{
    if space.is_empty() {
        return Err(Error::Domain("empty prediction space".into()));
    }
    if !loss.bound().is_finite() {
        return Err(Error::Domain(
            "the maximal risk of an unbounded loss is +inf over all predictors".into(),
        ));
    }
    let mut choice: BTreeMap<i64, usize> = BTreeMap::new();
    let mut value = 0.0;
    for (x, labels) in dist.by_feature() {
        let mut best: Option<(usize, f64)> = None;
        for (i, yhat) in space.iter().enumerate() {
            let mut e = 0.0;
            for &(y, p) in &labels {
                e += p * loss.eval(yhat, y)?;
            }
            if best.is_none_or(|(_, b)| e > b) {
                best = Some((i, e));
            }
        }
        let (i, e) = best.expect("space is nonempty");
        choice.insert(x, i);
        value += e;
    }
    let table: BTreeMap<i64, P> = choice
        .iter()
        .map(|(&x, &i)| (x, space[i].clone()))
        .collect();
    let fallback = space[0].clone();
    let witness = FittedModel::new(
        format!("argmax-risk witness over {} features", table.len()),
        move |x| table.get(&x).cloned().unwrap_or_else(|| fallback.clone()),
    );
    Ok(ExtremalRiskResult { value, witness })
}

/// Largest comparison risk of any pair of predictors with values in `space`.
pub fn max_delta(
    dist: &FiniteDistribution,
    psi: &ComparisonFn,
    space: &[f64],
) -> Result<ExtremalDeltaResult> {
    if space.is_empty() {
        return Err(Error::Domain("empty prediction space".into()));
    }
    if !psi.bound().is_finite() {
        return Err(Error::Domain("comparison function is unbounded".into()));
    }
    let mut table: BTreeMap<i64, (f64, f64)> = BTreeMap::new();
    let mut value = 0.0;
    for (x, labels) in dist.by_feature() {
        let mut best: Option<((f64, f64), f64)> = None;
        for &a in space {
            for &b in space {
                let mut e = 0.0;
                for &(y, p) in &labels {
                    e += p * psi.eval(a, b, y)?;
                }
                if best.is_none_or(|(_, v)| e > v) {
                    best = Some(((a, b), e));
                }
            }
        }
        let (pair, e) = best.expect("space is nonempty");
        table.insert(x, pair);
        value += e;
    }
    let t0: BTreeMap<i64, f64> = table.iter().map(|(&x, &(a, _))| (x, a)).collect();
    let t1: BTreeMap<i64, f64> = table.iter().map(|(&x, &(_, b))| (x, b)).collect();
    let d = space[0];
    let f0 = FittedModel::new("argmax-delta witness f0", move |x| {
        *t0.get(&x).unwrap_or(&d)
    });
    let f1 = FittedModel::new("argmax-delta witness f1", move |x| {
        *t1.get(&x).unwrap_or(&d)
    });
    Ok(ExtremalDeltaResult {
        value,
        witness: (f0, f1),
    })
}

/// The distribution conditional on not drawing `pt`.
pub fn conditional_without_atom(
    dist: &FiniteDistribution,
    pt: &DataPoint,
) -> Result<FiniteDistribution> {
    let p_star = dist.prob(pt);
    if p_star == 0.0 {
        return Ok(dist.clone());
    }
    let rest: Vec<Atom> = dist
        .atoms
        .iter()
        .copied()
        .filter(|a| a.point != *pt)
        .collect();
    if rest.is_empty() {
        return Err(Error::Domain(format!("{pt} carries all the mass")));
    }
    let remaining: f64 = rest.iter().map(|a| a.p).sum();
    FiniteDistribution::new(
        format!("{} | not {pt}", dist.name),
        rest.into_iter()
            .map(|a| (a.point, a.p / remaining))
            .collect(),
    )
}

/// `(1 - c) * base + c * delta(pt)`.
pub fn inject_atom(base: &FiniteDistribution, pt: DataPoint, c: f64) -> Result<FiniteDistribution> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::Domain(format!("mixture weight {c} outside [0, 1]")));
    }
    if base.contains(&pt) {
        return Err(Error::Domain(format!(
            "{pt} is already in the support; condition it out first"
        )));
    }
    if c == 0.0 {
        return Ok(base.clone());
    }
    if c == 1.0 {
        return Ok(FiniteDistribution::point_mass(pt));
    }
    let mut atoms: Vec<(DataPoint, f64)> = base
        .atoms
        .iter()
        .map(|a| (a.point, (1.0 - c) * a.p))
        .collect();
    atoms.push((pt, c));
    FiniteDistribution::new(format!("{} + {c}*delta{pt}", base.name), atoms)
}

fn joint_masses(p: &FiniteDistribution, q: &FiniteDistribution) -> BTreeMap<DataPoint, (f64, f64)> {
    let mut both: BTreeMap<DataPoint, (f64, f64)> = BTreeMap::new();
    for a in &p.atoms {
        both.entry(a.point).or_default().0 += a.p;
    }
    for a in &q.atoms {
        both.entry(a.point).or_default().1 += a.p;
    }
    both
}

pub fn total_variation(p: &FiniteDistribution, q: &FiniteDistribution) -> f64 {
    let tv = 0.5
        * joint_masses(p, q)
            .values()
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
    tv.clamp(0.0, 1.0)
}

#[derive(Clone, Debug)]
struct Categorical {
    points: Vec<DataPoint>,
    sampler: WeightedIndex<f64>,
}

impl Categorical {
    fn new(weighted: Vec<(DataPoint, f64)>) -> Option<Self> {
        let weighted: Vec<_> = weighted.into_iter().filter(|&(_, w)| w > 0.0).collect();
        if weighted.is_empty() {
            return None;
        }
        let sampler = WeightedIndex::new(weighted.iter().map(|&(_, w)| w)).ok()?;
        Some(Self {
            points: weighted.into_iter().map(|(pt, _)| pt).collect(),
            sampler,
        })
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DataPoint {
        self.points[self.sampler.sample(rng)]
    }
}

/// Precomputed maximal coupling of two finite distributions: with probability
/// `1 - TV` both draws come from the overlap `min(p, q)` and coincide;
/// otherwise they come from the disjoint residuals `(p - q)+` and `(q - p)+`.
#[derive(Clone, Debug)]
pub struct MaximalCoupling {
    tv: f64,
    overlap: Option<Categorical>,
    residual_p: Option<Categorical>,
    residual_q: Option<Categorical>,
}

impl MaximalCoupling {
    pub fn new(p: &FiniteDistribution, q: &FiniteDistribution) -> Self {
        let both = joint_masses(p, q);
        let mut overlap = Vec::new();
        let mut rp = Vec::new();
        let mut rq = Vec::new();
        for (&pt, &(a, b)) in &both {
            overlap.push((pt, a.min(b)));
            rp.push((pt, (a - b).max(0.0)));
            rq.push((pt, (b - a).max(0.0)));
        }
        let tv = total_variation(p, q);
        Self {
            tv,
            overlap: Categorical::new(overlap),
            residual_p: Categorical::new(rp),
            residual_q: Categorical::new(rq),
        }
    }

    pub fn total_variation(&self) -> f64 {
        self.tv
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DataPoint, DataPoint, bool) {
        let u: f64 = rng.random();
        let coincide = match (&self.overlap, &self.residual_p, &self.residual_q) {
            (Some(_), Some(_), Some(_)) => u >= self.tv,
            (Some(_), _, _) => true,
            _ => false,
        };
        if coincide {
            let z = self.overlap.as_ref().expect("overlap exists").sample(rng);
            (z, z, true)
        } else {
            let a = self.residual_p.as_ref().expect("TV > 0").sample(rng);
            let b = self.residual_q.as_ref().expect("TV > 0").sample(rng);
            (a, b, false)
        }
    }
}

pub fn maximal_coupling_sample<R: Rng + ?Sized>(
    p: &FiniteDistribution,
    q: &FiniteDistribution,
    rng: &mut R,
) -> (DataPoint, DataPoint, bool) {
    MaximalCoupling::new(p, q).sample(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Knn;
    use crate::model::{Algorithm, LossFn, Seed};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pt(x: i64, y: i64) -> DataPoint {
        DataPoint::new(x, y)
    }

    fn dist(atoms: &[((i64, i64), f64)]) -> FiniteDistribution {
        FiniteDistribution::new(
            "t",
            atoms.iter().map(|&((x, y), p)| (pt(x, y), p)).collect(),
        )
        .unwrap()
    }

    fn exact_risk(model: &FittedModel, d: &FiniteDistribution, loss: &LossFn) -> f64 {
        d.atoms()
            .iter()
            .map(|a| a.p * loss.eval(&model.predict(a.point.x), a.point.y).unwrap())
            .sum()
    }

    #[test]
    fn validation() {
        assert!(FiniteDistribution::new("e", vec![]).is_err());
        assert!(FiniteDistribution::new("s", vec![(pt(0, 0), 0.5)]).is_err());
        assert!(FiniteDistribution::new("d", vec![(pt(0, 0), 0.5), (pt(0, 0), 0.5)]).is_err());
        assert!(FiniteDistribution::new("z", vec![(pt(0, 0), 1.0), (pt(1, 0), 0.0)]).is_err());
    }

    #[test]
    fn json_round_trip_and_validation() {
        let d = dist(&[((0, 0), 0.25), ((1, 1), 0.75)]);
        let back = FiniteDistribution::from_json(&d.to_json().unwrap()).unwrap();
        assert_eq!(back, d);
        let doc = r#"{"atoms": [{"x": 1, "y": 0, "p": 0.5}, {"x": 2, "y": 1, "p": 0.4}]}"#;
        assert!(matches!(
            FiniteDistribution::from_json(doc),
            Err(Error::Distribution(_))
        ));
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let single = FiniteDistribution::point_mass(pt(3, 4));
        assert_eq!(
            single.sample_dataset(3, &mut rng),
            Dataset::from_pairs(&[(3, 4); 3])
        );
        assert!(single.sample_dataset(0, &mut rng).is_empty());

        // 4 sigma band for n = 10^6: 4 * sqrt(0.25 * 0.75 / 1e6) = 0.00173 < 0.002.
        let two = dist(&[((0, 0), 0.25), ((1, 0), 0.75)]);
        let n = 1_000_000;
        let hits = two
            .sample_dataset(n, &mut rng)
            .iter()
            .filter(|p| p.x == 0)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.25).abs() < 0.002, "{freq}");
    }

    #[test]
    fn max_risk_examples() {
        let space = [0.0, 1.0];
        let degenerate = dist(&[((0, 1), 0.5), ((1, 1), 0.5)]);
        let r = max_risk(&degenerate, &LossFn::ZeroOne, &space).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.witness.predict(0), 0.0);

        let fair = dist(&[
            ((0, 0), 0.25),
            ((0, 1), 0.25),
            ((1, 0), 0.25),
            ((1, 1), 0.25),
        ]);
        assert_eq!(
            max_risk(&fair, &LossFn::ZeroOne, &space).unwrap().value,
            0.5
        );

        let skew = dist(&[((7, 1), 0.9), ((7, 0), 0.1)]);
        let r = max_risk(&skew, &LossFn::ZeroOne, &space).unwrap();
        assert!((r.value - 0.9).abs() < 1e-15);
        assert_eq!(r.witness.predict(7), 0.0);

        assert!(max_risk(&skew, &LossFn::ZeroOne, &[] as &[f64]).is_err());
        assert!(max_risk(&skew, &LossFn::Squared, &space).is_err());
    }

    #[test]
    fn max_delta_examples() {
        let psi = ComparisonFn::LossDifference(LossFn::ZeroOne);
        let degenerate = dist(&[((0, 1), 1.0)]);
        let r = max_delta(&degenerate, &psi, &[0.0, 1.0]).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!((r.witness.0.predict(0), r.witness.1.predict(0)), (0.0, 1.0));

        assert_eq!(max_delta(&degenerate, &psi, &[1.0]).unwrap().value, 0.0);

        let skew = dist(&[((7, 1), 0.9), ((7, 0), 0.1)]);
        let r = max_delta(&skew, &psi, &[0.0, 1.0]).unwrap();
        assert!((r.value - 0.8).abs() < 1e-15);
        assert_eq!((r.witness.0.predict(7), r.witness.1.predict(7)), (0.0, 1.0));
        assert!(max_delta(&skew, &psi, &[]).is_err());
    }

    #[test]
    fn conditional_and_injection_examples() {
        let d = dist(&[((0, 0), 0.5), ((1, 0), 0.5)]);
        assert_eq!(conditional_without_atom(&d, &pt(9, 9)).unwrap(), d);
        assert_eq!(
            conditional_without_atom(&d, &pt(1, 0)).unwrap(),
            dist(&[((0, 0), 1.0)])
        );
        assert!(
            conditional_without_atom(&FiniteDistribution::point_mass(pt(0, 0)), &pt(0, 0)).is_err()
        );

        let three = dist(&[((0, 0), 0.2), ((1, 0), 0.3), ((2, 0), 0.5)]);
        let c = conditional_without_atom(&three, &pt(0, 0)).unwrap();
        assert!((c.prob(&pt(1, 0)) - 0.375).abs() < 1e-15);
        assert!((c.prob(&pt(2, 0)) - 0.625).abs() < 1e-15);

        let base = dist(&[((0, 0), 1.0)]);
        assert_eq!(inject_atom(&base, pt(5, 5), 0.0).unwrap(), base);
        assert_eq!(
            inject_atom(&base, pt(5, 5), 1.0).unwrap(),
            FiniteDistribution::point_mass(pt(5, 5))
        );
        let mixed = inject_atom(&base, pt(5, 5), 0.3).unwrap();
        assert!((mixed.prob(&pt(0, 0)) - 0.7).abs() < 1e-15);
        assert!((mixed.prob(&pt(5, 5)) - 0.3).abs() < 1e-15);
        assert!(inject_atom(&base, pt(0, 0), 0.3).is_err());
        assert!(inject_atom(&base, pt(5, 5), 1.5).is_err());
    }

    #[test]
    fn total_variation_examples() {
        let a = dist(&[((0, 0), 1.0)]);
        assert_eq!(total_variation(&a, &a), 0.0);
        assert_eq!(total_variation(&a, &dist(&[((1, 0), 1.0)])), 1.0);
        let b = dist(&[((0, 0), 0.7), ((1, 0), 0.3)]);
        assert!((total_variation(&a, &b) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn coupling_equality_rate_and_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = dist(&[((0, 0), 1.0)]);
        let q = dist(&[((0, 0), 0.7), ((1, 0), 0.3)]);
        let coupling = MaximalCoupling::new(&p, &q);
        let trials = 200_000;
        let mut equal = 0usize;
        let mut q_first = 0usize;
        for _ in 0..trials {
            let (a, b, eq) = coupling.sample(&mut rng);
            assert_eq!(a, pt(0, 0));
            assert_eq!(eq, a == b);
            equal += eq as usize;
            q_first += (b == pt(0, 0)) as usize;
        }
        let rate = equal as f64 / trials as f64;
        let sigma = (0.7f64 * 0.3 / trials as f64).sqrt();
        assert!((rate - 0.7).abs() < 4.0 * sigma, "{rate}");
        assert!((q_first as f64 / trials as f64 - 0.7).abs() < 4.0 * sigma);

        for _ in 0..1000 {
            assert!(maximal_coupling_sample(&p, &p, &mut rng).2);
            assert!(!maximal_coupling_sample(&p, &dist(&[((1, 0), 1.0)]), &mut rng).2);
        }
    }

    /// Pearson chi-square statistic of observed counts against expected probabilities.
    fn chi_square(counts: &BTreeMap<DataPoint, usize>, d: &FiniteDistribution, n: usize) -> f64 {
        d.atoms()
            .iter()
            .map(|a| {
                let e = a.p * n as f64;
                let o = *counts.get(&a.point).unwrap_or(&0) as f64;
                (o - e) * (o - e) / e
            })
            .sum()
    }

    #[test]
    fn coupling_marginals_pass_chi_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = dist(&[((0, 0), 0.2), ((1, 1), 0.5), ((2, 0), 0.3)]);
        let q = dist(&[((0, 0), 0.4), ((1, 1), 0.1), ((3, 1), 0.5)]);
        let coupling = MaximalCoupling::new(&p, &q);
        let n = 1_000_000;
        let mut cp = BTreeMap::new();
        let mut cq = BTreeMap::new();
        for _ in 0..n {
            let (a, b, _) = coupling.sample(&mut rng);
            *cp.entry(a).or_insert(0) += 1;
            *cq.entry(b).or_insert(0) += 1;
        }
        // 99.9% quantile of chi-square with 2 degrees of freedom.
        assert!(chi_square(&cp, &p, n) < 13.82);
        assert!(chi_square(&cq, &q, n) < 13.82);
        assert!(cp.keys().all(|k| p.contains(k)) && cq.keys().all(|k| q.contains(k)));
    }

    fn arb_dist() -> impl Strategy<Value = FiniteDistribution> {
        prop::collection::btree_map((0i64..4, 0i64..3), 1u32..10, 1..6).prop_map(|m| {
            let total: u32 = m.values().sum();
            let atoms = m
                .into_iter()
                .map(|((x, y), w)| (pt(x, y), w as f64 / total as f64))
                .collect();
            FiniteDistribution::new("arb", atoms).unwrap()
        })
    }

    proptest! {
        #[test]
        fn extremal_dominance(d in arb_dist(), train in prop::collection::vec((0i64..4, 0i64..2), 0..5), x in -2i64..6) {
            let space = default_prediction_space(&d);
            let best = max_risk(&d, &LossFn::ZeroOne, &space).unwrap();
            prop_assert!((exact_risk(&best.witness, &d, &LossFn::ZeroOne) - best.value).abs() < 1e-12);
            let data = Dataset::from_pairs(&train);
            let model = Knn::new(1).fit(&data, Seed(0)).unwrap();
            prop_assert!(exact_risk(&model, &d, &LossFn::ZeroOne) <= best.value + 1e-12);
            let table = space.clone();
            let shift = FittedModel::new("shift", move |z| table[(z + x).rem_euclid(table.len() as i64) as usize]);
            prop_assert!(exact_risk(&shift, &d, &LossFn::ZeroOne) <= best.value + 1e-12);
        }

        #[test]
        fn mixture_identity(d in arb_dist(), pick in 0usize..6) {
            let target = d.atoms()[pick % d.len()];
            prop_assume!(target.p < 1.0);
            let cond = conditional_without_atom(&d, &target.point).unwrap();
            prop_assert!((cond.total_mass() - 1.0).abs() < NORMALIZATION_TOL);
            let back = inject_atom(&cond, target.point, target.p).unwrap();
            prop_assert!((back.total_mass() - 1.0).abs() < NORMALIZATION_TOL);
            for a in d.atoms() {
                prop_assert!((back.prob(&a.point) - a.p).abs() < 1e-12);
            }
        }
    }
}
