//! Reference algorithms used throughout the experiments.
//!
//! Every algorithm returns the constant-0 model when fitted on zero points.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{Algorithm, AlgorithmHandle, DataPoint, FittedModel, Seed};

fn empty_default() -> FittedModel {
    FittedModel::new("constant(0) [empty training set]", |_| 0.0)
}

/// Most frequent label, ties toward the smaller label.
fn mode(labels: impl Iterator<Item = i64>) -> Option<i64> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for y in labels {
        *counts.entry(y).or_default() += 1;
    }
    let mut best: Option<(i64, usize)> = None;
    for (y, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((y, c));
        }
    }
    best.map(|(y, _)| y)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantPredictor {
    pub value: f64,
}

impl Algorithm for ConstantPredictor {
    type Prediction = f64;

    fn name(&self) -> String {
        format!("constant({})", self.value)
    }

    fn fit(&self, _data: &[DataPoint], _seed: Seed) -> Result<FittedModel> {
        let c = self.value;
        Ok(FittedModel::new(format!("constant({c})"), move |_| c))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MajorityVote;

impl Algorithm for MajorityVote {
    type Prediction = f64;

    fn name(&self) -> String {
        "majority-vote".into()
    }

    fn fit(&self, data: &[DataPoint], _seed: Seed) -> Result<FittedModel> {
        match mode(data.iter().map(|p| p.y)) {
            None => Ok(empty_default()),
            Some(label) => {
                let c = label as f64;
                Ok(FittedModel::new(format!("majority({label})"), move |_| c))
            }
        }
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// k-nearest neighbors on integer features.
///
/// Equidistant neighbors are taken in order of smaller feature value (then
/// smaller label); vote ties go to the smaller label.
#[derive(Clone, Debug, PartialEq)]
pub struct Knn {
    pub k: usize,
    /// When the training set has fewer than `k` points, vote over all of them
    /// instead of failing.
    pub fallback: bool,
}

impl Knn {
    pub fn new(k: usize) -> Self {
        Self { k, fallback: true }
    }

    pub fn strict(k: usize) -> Self {
        Self { k, fallback: false }
    }
}

impl Algorithm for Knn {
    type Prediction = f64;

    fn name(&self) -> String {
        format!("{}-nn", self.k)
    }

    fn fit(&self, data: &[DataPoint], _seed: Seed) -> Result<FittedModel> {
        if self.k == 0 {
            return Err(Error::fit(self.name(), "k must be positive"));
        }
        if data.is_empty() {
            return Ok(empty_default());
        }
        if data.len() < self.k && !self.fallback {
            return Err(Error::fit(
                self.name(),
                format!("k = {} exceeds the {} training points", self.k, data.len()),
            ));
        }
        let k = self.k.min(data.len());
        let mut train = data.to_vec();
        train.sort();
        let descriptor = format!("{k}-nn over {} points", train.len());
        Ok(FittedModel::new(descriptor, move |x| {
            let mut ranked: Vec<(u128, i64, i64)> = train
                .iter()
                .map(|p| (((x as i128) - (p.x as i128)).unsigned_abs(), p.x, p.y))
                .collect();
            ranked.sort_unstable();
            mode(ranked.iter().take(k).map(|&(_, _, y)| y)).unwrap_or(0) as f64
        }))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmpiricalMean;

impl Algorithm for EmpiricalMean {
    type Prediction = f64;

    fn name(&self) -> String {
        "empirical-mean".into()
    }

    fn fit(&self, data: &[DataPoint], _seed: Seed) -> Result<FittedModel> {
        if data.is_empty() {
            return Ok(empty_default());
        }
        let mean = data.iter().map(|p| p.y as f64).sum::<f64>() / data.len() as f64;
        Ok(FittedModel::new(format!("mean({mean})"), move |_| mean))
    }

    fn is_deterministic(&self) -> bool {
        true
    }
}

/// Ignores the data and predicts `0` when the seed is below `threshold`,
/// `1` otherwise. Its behavior is piecewise constant in the seed.
#[derive(Clone, Debug, PartialEq)]
pub struct SeedCoin {
    pub threshold: f64,
}

impl Algorithm for SeedCoin {
    type Prediction = f64;

    fn name(&self) -> String {
        format!("seed-coin({})", self.threshold)
    }

    fn fit(&self, _data: &[DataPoint], seed: Seed) -> Result<FittedModel> {
        let c = if seed.value() < self.threshold {
            0.0
        } else {
            1.0
        };
        Ok(FittedModel::new(format!("seed-coin -> {c}"), move |_| c))
    }

    fn is_deterministic(&self) -> bool {
        false
    }
}

/// Parsed algorithm name, e.g. `constant:0`, `majority`, `knn:3`, `mean`,
/// `seed-coin:0.5`.
#[derive(Clone, Debug, PartialEq)]
pub enum AlgorithmSpec {
    Constant(f64),
    Majority,
    Knn(usize),
    KnnStrict(usize),
    Mean,
    SeedCoin(f64),
}

impl AlgorithmSpec {
    pub fn build(&self) -> AlgorithmHandle {
        match *self {
            AlgorithmSpec::Constant(c) => Arc::new(ConstantPredictor { value: c }),
            AlgorithmSpec::Majority => Arc::new(MajorityVote),
            AlgorithmSpec::Knn(k) => Arc::new(Knn::new(k)),
            AlgorithmSpec::KnnStrict(k) => Arc::new(Knn::strict(k)),
            AlgorithmSpec::Mean => Arc::new(EmpiricalMean),
            AlgorithmSpec::SeedCoin(t) => Arc::new(SeedCoin { threshold: t }),
        }
    }
}

impl FromStr for AlgorithmSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let bad = || Error::Config(format!("bad algorithm spec `{s}`"));
        let num = |a: Option<&str>, default: f64| -> Result<f64> {
            a.map_or(Ok(default), |v| v.parse().map_err(|_| bad()))
        };
        let count = |a: Option<&str>| -> Result<usize> {
            a.map_or(Ok(1), |v| v.parse().map_err(|_| bad()))
        };
        match head {
            "constant" | "const" => Ok(AlgorithmSpec::Constant(num(arg, 0.0)?)),
            "majority" | "majority-vote" => Ok(AlgorithmSpec::Majority),
            "knn" => Ok(AlgorithmSpec::Knn(count(arg)?)),
            "knn-strict" => Ok(AlgorithmSpec::KnnStrict(count(arg)?)),
            "mean" | "empirical-mean" => Ok(AlgorithmSpec::Mean),
            "seed-coin" => Ok(AlgorithmSpec::SeedCoin(num(arg, 0.5)?)),
            _ => Err(Error::Config(format!("unknown algorithm `{s}`"))),
        }
    }
}

pub fn parse_algorithm(s: &str) -> Result<AlgorithmHandle> {
    Ok(s.parse::<AlgorithmSpec>()?.build())
}

pub fn builtin_algorithms() -> Vec<AlgorithmHandle> {
    vec![
        Arc::new(ConstantPredictor { value: 0.0 }),
        Arc::new(ConstantPredictor { value: 1.0 }),
        Arc::new(MajorityVote),
        Arc::new(Knn::new(1)),
        Arc::new(Knn::new(3)),
        Arc::new(EmpiricalMean),
        Arc::new(SeedCoin { threshold: 0.5 }),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Dataset;
    use rand::{Rng, SeedableRng};

    #[test]
    fn fit_examples() {
        let any = Dataset::from_pairs(&[(3, 1), (4, 1)]);
        let m = ConstantPredictor { value: 0.0 }.fit(&any, Seed(9)).unwrap();
        assert_eq!(m.predict(-17), 0.0);

        let votes = Dataset::from_pairs(&[(0, 1), (1, 1), (2, 0)]);
        let m = MajorityVote.fit(&votes, Seed(0)).unwrap();
        assert_eq!(m.predict(100), 1.0);

        let one = Dataset::from_pairs(&[(5, 1)]);
        assert_eq!(Knn::new(1).fit(&one, Seed(0)).unwrap().predict(7), 1.0);

        let ys = Dataset::from_pairs(&[(0, 0), (9, 2), (4, 4)]);
        assert_eq!(EmpiricalMean.fit(&ys, Seed(0)).unwrap().predict(1), 2.0);

        let coin = SeedCoin { threshold: 0.5 };
        assert_eq!(
            coin.fit(&[], Seed::from_fraction(0.3)).unwrap().predict(0),
            0.0
        );
        assert_eq!(
            coin.fit(&[], Seed::from_fraction(0.7)).unwrap().predict(0),
            1.0
        );
    }

    #[test]
    fn empty_training_set_gives_constant_zero() {
        for alg in builtin_algorithms() {
            if alg.name().starts_with("constant") || alg.name().starts_with("seed-coin") {
                continue;
            }
            let m = alg.fit(&[], Seed(0)).unwrap();
            assert_eq!(m.predict(12), 0.0, "{}", alg.name());
        }
    }

    #[test]
    fn knn_errors_without_fallback() {
        let two = Dataset::from_pairs(&[(0, 0), (1, 1)]);
        let err = Knn::strict(3).fit(&two, Seed(0)).unwrap_err();
        assert!(matches!(err, Error::Fit { ref algorithm, .. } if algorithm == "3-nn"));
        assert!(Knn::new(3).fit(&two, Seed(0)).is_ok());
    }

    #[test]
    fn knn_tie_breaking() {
        // Query 5 is equidistant from 4 and 6: the smaller feature wins.
        let d = Dataset::from_pairs(&[(6, 1), (4, 0)]);
        assert_eq!(Knn::new(1).fit(&d, Seed(0)).unwrap().predict(5), 0.0);
        let d = Dataset::from_pairs(&[(4, 1), (6, 0)]);
        assert_eq!(Knn::new(1).fit(&d, Seed(0)).unwrap().predict(5), 1.0);
        // Two-way vote tie goes to label 0.
        let d = Dataset::from_pairs(&[(0, 1), (1, 0)]);
        assert_eq!(Knn::new(2).fit(&d, Seed(0)).unwrap().predict(0), 0.0);
        // Extreme features must not overflow.
        let d = Dataset::from_pairs(&[(i64::MIN, 1), (i64::MAX, 0)]);
        assert_eq!(
            Knn::new(1).fit(&d, Seed(0)).unwrap().predict(i64::MAX - 1),
            0.0
        );
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "knn:3".parse::<AlgorithmSpec>().unwrap(),
            AlgorithmSpec::Knn(3)
        );
        assert_eq!(
            "constant:1".parse::<AlgorithmSpec>().unwrap(),
            AlgorithmSpec::Constant(1.0)
        );
        assert_eq!(
            "seed-coin".parse::<AlgorithmSpec>().unwrap(),
            AlgorithmSpec::SeedCoin(0.5)
        );
        assert!("forest".parse::<AlgorithmSpec>().is_err());
        assert!("knn:x".parse::<AlgorithmSpec>().is_err());
    }

    #[test]
    fn fits_are_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for alg in builtin_algorithms() {
            for _ in 0..20 {
                let n = rng.random_range(0..8);
                let data: Dataset = (0..n)
                    .map(|_| DataPoint::new(rng.random_range(-20..20), rng.random_range(0..2)))
                    .collect();
                let seed = Seed::random(&mut rng);
                let (a, b) = (alg.fit(&data, seed).unwrap(), alg.fit(&data, seed).unwrap());
                for _ in 0..50 {
                    let x = rng.random_range(-40..40);
                    assert_eq!(a.predict(x), b.predict(x));
                }
            }
        }
    }
}
