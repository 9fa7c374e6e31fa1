//! Experiment configurations and the sweeps behind each command-line verb.
//!
//! Every sweep is a pure function of its configuration: per-row randomness
//! comes from `TrialStreams::new(master_seed).substream(row)`, so output bytes
//! never depend on the worker count. Each CSV row ends with the master seed
//! and a hash of the configuration (worker count and output path excluded).

use std::path::PathBuf;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adversary::{
    build_eval_adversary, build_unbounded_adversary, coupling_demo, AdversaryOptions,
    CouplingReport,
};
use crate::algorithms::{parse_algorithm, ConstantPredictor};
use crate::bounds::{
    compare_power_bound, eval_power_bound, regime_classify, tilde_tau, BoundInputs,
};
use crate::btest::{
    binom_test_exact_power, binom_test_protocol, compare_binom_exact_power, compare_binom_protocol,
    cv_threshold_protocol, BinomTestConfig,
};
use crate::dist::{default_prediction_space, max_delta, FiniteDistribution};
use crate::error::{Error, Result};
use crate::estimate::{
    delta_exact, psi_sign_probabilities, stability_exact_with, stability_mc, ExactOptions,
    StabilityMode,
};
use crate::harness::{
    compare_rejection_rate, rejection_rate, run_compare_test_seeded, run_test_seeded, TestProtocol,
    TranscriptRecord,
};
use crate::model::{AlgorithmHandle, ComparisonFn, DataPoint, FittedModel, Loss, LossFn};
use crate::reduction::reduction_identity_check;
use crate::rng::{stream, TrialStreams};

fn default_trials() -> u64 {
    10_000
}

/// A complete, replayable experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(flatten)]
    pub experiment: Experiment,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    PowerCurve(PowerParams),
    Critical(CriticalParams),
    ValidateSize(SizeParams),
    BoundDominance(BoundParams),
    Stability(StabilityParams),
    StabilityScan(PhaseParams),
    AdversaryDemo(AdversaryParams),
    Compare(CompareParams),
    ReductionCheck(ReductionParams),
    Transcript(TranscriptParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::PowerCurve(_) => "power-curve",
            Experiment::Critical(_) => "critical",
            Experiment::ValidateSize(_) => "validate-size",
            Experiment::BoundDominance(_) => "bound-dominance",
            Experiment::Stability(_) => "stability",
            Experiment::StabilityScan(_) => "stability-scan",
            Experiment::AdversaryDemo(_) => "adversary-demo",
            Experiment::Compare(_) => "compare",
            Experiment::ReductionCheck(_) => "reduction-check",
            Experiment::Transcript(_) => "transcript",
        }
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, master_seed: u64, trials: u64) -> Self {
        Self {
            experiment,
            master_seed,
            trials,
            workers: None,
            output: None,
        }
    }

    /// Parse a configuration. Errors name the offending field, e.g.
    /// `params.ms: invalid type: string "x", expected a sequence`.
    pub fn from_json(s: &str) -> Result<Self> {
        fn at<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
            serde_path_to_error::deserialize(v).map_err(|e| Error::Config(e.to_string()))
        }
        let mut v: serde_json::Value = serde_json::from_str(s)?;
        let map = v
            .as_object_mut()
            .ok_or_else(|| Error::Config("configuration must be a JSON object".into()))?;
        let mut experiment = serde_json::Map::new();
        for key in ["kind", "params"] {
            if let Some(x) = map.remove(key) {
                experiment.insert(key.into(), x);
            }
        }
        experiment
            .entry("params")
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Header {
            #[serde(default)]
            master_seed: u64,
            #[serde(default = "default_trials")]
            trials: u64,
            #[serde(default)]
            workers: Option<usize>,
            #[serde(default)]
            output: Option<PathBuf>,
        }
        let h: Header = at(v)?;
        Ok(Self {
            experiment: at(serde_json::Value::Object(experiment))?,
            master_seed: h.master_seed,
            trials: h.trials,
            workers: h.workers,
            output: h.output,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON of the
    /// experiment, master seed and trial count.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            #[serde(flatten)]
            experiment: &'a Experiment,
            master_seed: u64,
            trials: u64,
        }
        let bytes = serde_json::to_vec(&Hashed {
            experiment: &self.experiment,
            master_seed: self.master_seed,
            trials: self.trials,
        })
        .expect("configs serialize");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            master_seed: self.master_seed,
            config_hash: self.config_hash(),
        }
    }

    fn row_streams(&self, row: u64) -> TrialStreams {
        TrialStreams::new(self.master_seed).substream(row)
    }
}

#[derive(Clone, Debug)]
struct Provenance {
    master_seed: u64,
    config_hash: String,
}

/// A distribution given either by preset name or explicit atoms
/// (`{"atoms": [{"x": 0, "y": 1, "p": 0.5}, ...]}`).
///
/// Presets: `two-atom` = {(0,0), (1,1)} equally likely; `toy` = {(0,0), (1,0)}
/// equally likely; `three-atom` = {(0,0), (1,1), (2,0)} equally likely;
/// `bernoulli:<r>` = label Bernoulli(r) at `x = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DistSpec(pub serde_json::Value);

impl DistSpec {
    pub fn preset(name: &str) -> Self {
        DistSpec(serde_json::Value::String(name.into()))
    }

    pub fn build(&self) -> Result<FiniteDistribution> {
        match &self.0 {
            serde_json::Value::String(s) => preset_distribution(s),
            v => FiniteDistribution::from_json_value(v.clone()),
        }
    }
}

pub fn preset_distribution(name: &str) -> Result<FiniteDistribution> {
    let pt = DataPoint::new;
    let third = 1.0 / 3.0;
    match name {
        "two-atom" => FiniteDistribution::new("two-atom", vec![(pt(0, 0), 0.5), (pt(1, 1), 0.5)]),
        "toy" => FiniteDistribution::new("toy", vec![(pt(0, 0), 0.5), (pt(1, 0), 0.5)]),
        "three-atom" => FiniteDistribution::new(
            "three-atom",
            vec![(pt(0, 0), third), (pt(1, 1), third), (pt(2, 0), third)],
        ),
        _ => match name.strip_prefix("bernoulli:") {
            Some(r) => FiniteDistribution::bernoulli_labels(
                r.parse()
                    .map_err(|_| Error::Config(format!("bad Bernoulli parameter `{r}`")))?,
            ),
            None => Err(Error::Config(format!(
                "unknown distribution preset `{name}`"
            ))),
        },
    }
}

fn parse_loss(s: &str) -> Result<LossFn> {
    s.parse()
}

fn parse_psi(s: &str) -> Result<ComparisonFn> {
    s.parse()
}

/// A test protocol by name and parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProtocolSpec {
    Binomial {
        n: usize,
        tau: f64,
        alpha: f64,
        loss: String,
    },
    CompareSign {
        n: usize,
        alpha: f64,
        psi: String,
    },
    CvThreshold {
        k: usize,
        tau: f64,
        loss: String,
    },
}

enum BuiltProtocol {
    Single(Box<dyn TestProtocol<FittedModel>>),
    Pair(Box<dyn TestProtocol<crate::harness::ModelPair>>),
}

impl ProtocolSpec {
    fn build(&self) -> Result<BuiltProtocol> {
        Ok(match self {
            ProtocolSpec::Binomial {
                n,
                tau,
                alpha,
                loss,
            } => BuiltProtocol::Single(Box::new(binom_test_protocol(BinomTestConfig {
                n: *n,
                tau: *tau,
                alpha: *alpha,
                loss: parse_loss(loss)?,
            })?)),
            ProtocolSpec::CompareSign { n, alpha, psi } => BuiltProtocol::Pair(Box::new(
                compare_binom_protocol(*n, *alpha, parse_psi(psi)?)?,
            )),
            ProtocolSpec::CvThreshold { k, tau, loss } => {
                BuiltProtocol::Single(Box::new(cv_threshold_protocol(*k, *tau, parse_loss(loss)?)))
            }
        })
    }
}

/// What a run produced. `failures` lists checks that did not hold; the
/// command line maps a nonempty list to the verification exit code.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub csv: Option<String>,
    pub json: Option<String>,
    pub failures: Vec<String>,
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

fn require_trials(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    Ok(())
}

/// Dispatch on the experiment kind.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    match &cfg.experiment {
        Experiment::PowerCurve(p) => cmd_power(cfg, p),
        Experiment::Critical(p) => cmd_critical(cfg, p),
        Experiment::ValidateSize(p) => cmd_validate(cfg, p),
        Experiment::BoundDominance(p) => cmd_bound(cfg, p),
        Experiment::Stability(p) => cmd_stability(cfg, p),
        Experiment::StabilityScan(p) => cmd_phase(cfg, p),
        Experiment::AdversaryDemo(p) => cmd_adversary(cfg, p),
        Experiment::Compare(p) => cmd_compare(cfg, p),
        Experiment::ReductionCheck(p) => cmd_reduce(cfg, p),
        Experiment::Transcript(p) => cmd_transcript(cfg, p),
    }
}

// ---------------------------------------------------------------- power

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    /// Training size `n`; the test uses `m` batches of `n + 1` points.
    pub n: usize,
    pub ms: Vec<u64>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub risks: Vec<f64>,
    pub r_max: f64,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            n: 1,
            ms: vec![1, 3, 5],
            taus: vec![0.5],
            alphas: vec![0.05],
            risks: vec![0.0, 0.1, 0.25, 0.4, 0.5],
            r_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    #[serde(rename = "R")]
    pub r: f64,
    pub m: u64,
    pub tau: f64,
    pub alpha: f64,
    pub exact_power: f64,
    pub mc_power: f64,
    pub mc_stderr: f64,
    /// The power limit, or 1 where its proviso fails.
    pub thm2_bound: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: u64,
    /// `thm2_bound - mc_power`.
    pub slack: f64,
    pub master_seed: u64,
    pub config_hash: String,
}

/// The power limit at `(alpha, tau, N, n, R, Rmax)` with `B = Rmax`, or 1
/// when the formula does not apply.
pub fn power_limit_or_one(alpha: f64, tau: f64, big_n: f64, n: f64, r: f64, r_max: f64) -> f64 {
    eval_power_bound(&BoundInputs {
        alpha,
        tau,
        big_n,
        n,
        r,
        r_max,
        b: r_max,
    })
    .unwrap_or(1.0)
}

/// Power sweep of the Binomial test on the constant-0 predictor under
/// Bernoulli(R) labels, whose algorithm risk is exactly `R`.
pub fn cmd_power(cfg: &ExperimentConfig, p: &PowerParams) -> Result<RunOutput> {
    require_trials(cfg)?;
    let prov = cfg.provenance();
    let alg = ConstantPredictor { value: 0.0 };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut index = 0u64;
    for &m in &p.ms {
        for &tau in &p.taus {
            for &alpha in &p.alphas {
                let protocol = binom_test_protocol(BinomTestConfig {
                    n: p.n,
                    tau,
                    alpha,
                    loss: LossFn::ZeroOne,
                })?;
                for &r in &p.risks {
                    let big_n = m * (p.n as u64 + 1);
                    let dist = FiniteDistribution::bernoulli_labels(r)?;
                    let rate = rejection_rate(
                        &protocol,
                        &alg,
                        &dist,
                        big_n as usize,
                        cfg.trials,
                        cfg.row_streams(index),
                        cfg.workers,
                    )?;
                    index += 1;
                    let bound =
                        power_limit_or_one(alpha, tau, big_n as f64, p.n as f64, r, p.r_max);
                    if rate.rate > bound + 4.0 * rate.stderr_at(bound.min(1.0)) + 1e-12 {
                        failures.push(format!(
                            "m={m} tau={tau} alpha={alpha} R={r}: mc power {} above bound {bound}",
                            rate.rate
                        ));
                    }
                    rows.push(PowerRow {
                        r,
                        m,
                        tau,
                        alpha,
                        exact_power: binom_test_exact_power(m, tau, alpha, r)?,
                        mc_power: rate.rate,
                        mc_stderr: rate.stderr,
                        thm2_bound: bound,
                        n: p.n,
                        big_n,
                        slack: bound - rate.rate,
                        master_seed: prov.master_seed,
                        config_hash: prov.config_hash.clone(),
                    });
                }
            }
        }
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        json: None,
        failures,
    })
}

// ---------------------------------------------------------------- critical

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriticalParams {
    pub ms: Vec<u64>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub risks: Vec<f64>,
}

impl Default for CriticalParams {
    fn default() -> Self {
        Self {
            ms: (1..=10).collect(),
            taus: vec![0.3, 0.5, 0.7],
            alphas: vec![0.01, 0.05, 0.1],
            risks: vec![0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalOutRow {
    pub m: u64,
    pub tau: f64,
    pub alpha: f64,
    pub k_star: u64,
    pub a_star: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub power: f64,
    pub master_seed: u64,
    pub config_hash: String,
}

pub fn cmd_critical(cfg: &ExperimentConfig, p: &CriticalParams) -> Result<RunOutput> {
    let prov = cfg.provenance();
    let rows: Vec<CriticalOutRow> =
        crate::btest::critical_table(&p.ms, &p.taus, &p.alphas, &p.risks)?
            .into_iter()
            .map(|r| CriticalOutRow {
                m: r.m,
                tau: r.tau,
                alpha: r.alpha,
                k_star: r.k_star,
                a_star: r.a_star,
                r: r.r,
                power: r.power,
                master_seed: prov.master_seed,
                config_hash: prov.config_hash.clone(),
            })
            .collect();
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        ..RunOutput::default()
    })
}

// ---------------------------------------------------------------- validate

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SizeParams {
    pub n: usize,
    pub ms: Vec<u64>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    /// Also estimate the size at `R = tau` by Monte Carlo.
    pub mc: bool,
}

impl Default for SizeParams {
    fn default() -> Self {
        Self {
            n: 1,
            ms: (1..=20).collect(),
            taus: vec![0.3, 0.5, 0.7],
            alphas: vec![0.01, 0.05, 0.1],
            mc: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub m: u64,
    pub tau: f64,
    pub alpha: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub exact_rejection: f64,
    /// `exact_rejection - alpha`.
    pub excess: f64,
    pub valid: bool,
    pub mc_rejection: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub master_seed: u64,
    pub config_hash: String,
}

/// Exact size at `R = tau` (must equal `alpha` to 1e-12) and rejection
/// probability on null points `R in {(tau + 1)/2, 1}` (at most `alpha`).
pub fn cmd_validate(cfg: &ExperimentConfig, p: &SizeParams) -> Result<RunOutput> {
    if p.mc {
        require_trials(cfg)?;
    }
    let prov = cfg.provenance();
    let alg = ConstantPredictor { value: 0.0 };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut index = 0u64;
    for &m in &p.ms {
        for &tau in &p.taus {
            for &alpha in &p.alphas {
                for (j, r) in [tau, (tau + 1.0) / 2.0, 1.0].into_iter().enumerate() {
                    let exact = binom_test_exact_power(m, tau, alpha, r)?;
                    let valid = if j == 0 {
                        (exact - alpha).abs() <= 1e-12
                    } else {
                        exact <= alpha + 1e-12
                    };
                    if !valid {
                        failures.push(format!(
                            "m={m} tau={tau} alpha={alpha} R={r}: rejection {exact}"
                        ));
                    }
                    let (mc_rejection, mc_stderr) = if p.mc && j == 0 {
                        let protocol = binom_test_protocol(BinomTestConfig {
                            n: p.n,
                            tau,
                            alpha,
                            loss: LossFn::ZeroOne,
                        })?;
                        let rate = rejection_rate(
                            &protocol,
                            &alg,
                            &FiniteDistribution::bernoulli_labels(r)?,
                            (m * (p.n as u64 + 1)) as usize,
                            cfg.trials,
                            cfg.row_streams(index),
                            cfg.workers,
                        )?;
                        (Some(rate.rate), Some(rate.stderr_at(alpha)))
                    } else {
                        (None, None)
                    };
                    index += 1;
                    rows.push(SizeRow {
                        m,
                        tau,
                        alpha,
                        r,
                        exact_rejection: exact,
                        excess: exact - alpha,
                        valid,
                        mc_rejection,
                        mc_stderr,
                        master_seed: prov.master_seed,
                        config_hash: prov.config_hash.clone(),
                    });
                }
            }
        }
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        json: None,
        failures,
    })
}

// ---------------------------------------------------------------- bound

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundParams {
    pub ms: Vec<u64>,
    pub taus: Vec<f64>,
    pub alphas: Vec<f64>,
    pub ns: Vec<usize>,
    pub risks: Vec<f64>,
    pub r_max: f64,
}

impl Default for BoundParams {
    fn default() -> Self {
        Self {
            ms: (1..=10).collect(),
            taus: vec![0.3, 0.5, 0.7],
            alphas: vec![0.01, 0.05, 0.1],
            ns: vec![1, 2, 4],
            risks: vec![0.0, 0.1, 0.25, 0.4],
            r_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundDominanceRow {
    pub m: u64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: u64,
    pub tau: f64,
    pub alpha: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub tilde_tau: f64,
    pub exact_power: f64,
    pub bound: f64,
    /// Whether the bound's provisos hold; otherwise `bound` is 1.
    pub applicable: bool,
    pub dominated: bool,
    pub master_seed: u64,
    pub config_hash: String,
}

/// Exact Binomial-test power at `N = m(n + 1)` against the power limit.
pub fn cmd_bound(cfg: &ExperimentConfig, p: &BoundParams) -> Result<RunOutput> {
    let prov = cfg.provenance();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &m in &p.ms {
        for &n in &p.ns {
            for &tau in &p.taus {
                for &alpha in &p.alphas {
                    for &r in &p.risks {
                        let big_n = m * (n as u64 + 1);
                        let exact = binom_test_exact_power(m, tau, alpha, r)?;
                        let computed = eval_power_bound(&BoundInputs {
                            alpha,
                            tau,
                            big_n: big_n as f64,
                            n: n as f64,
                            r,
                            r_max: p.r_max,
                            b: p.r_max,
                        });
                        let applicable = computed.is_ok();
                        let bound = computed.unwrap_or(1.0);
                        let dominated = exact <= bound + 1e-9;
                        if !dominated {
                            failures.push(format!(
                                "m={m} n={n} tau={tau} alpha={alpha} R={r}: power {exact} > bound {bound}"
                            ));
                        }
                        rows.push(BoundDominanceRow {
                            m,
                            n,
                            big_n,
                            tau,
                            alpha,
                            r,
                            tilde_tau: tilde_tau(tau, alpha, big_n as f64),
                            exact_power: exact,
                            bound,
                            applicable,
                            dominated,
                            master_seed: prov.master_seed,
                            config_hash: prov.config_hash.clone(),
                        });
                    }
                }
            }
        }
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        json: None,
        failures,
    })
}

// ---------------------------------------------------------------- stability

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StabilityParams {
    pub algorithm: String,
    pub dist: DistSpec,
    pub n: usize,
    pub qs: Vec<u32>,
    pub loss: String,
    /// Add Monte Carlo rows next to the exact ones.
    pub mc: bool,
}

impl Default for StabilityParams {
    fn default() -> Self {
        Self {
            algorithm: "knn:1".into(),
            dist: DistSpec::preset("two-atom"),
            n: 1,
            qs: vec![1, 2],
            loss: "zero-one".into(),
            mc: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub algorithm: String,
    pub n: usize,
    pub q: u32,
    pub method: String,
    pub beta_q: f64,
    pub stderr: f64,
    pub trials: u64,
    pub master_seed: u64,
    pub config_hash: String,
}

pub fn cmd_stability(cfg: &ExperimentConfig, p: &StabilityParams) -> Result<RunOutput> {
    if p.mc {
        require_trials(cfg)?;
    }
    let prov = cfg.provenance();
    let alg = parse_algorithm(&p.algorithm)?;
    let dist = p.dist.build()?;
    let loss = parse_loss(&p.loss)?;
    let mut rows = Vec::new();
    for (i, &q) in p.qs.iter().enumerate() {
        let exact = stability_exact_with(
            &alg,
            &dist,
            p.n,
            q,
            &loss,
            StabilityMode::AllIndices,
            &ExactOptions::default(),
        )?;
        rows.push(StabilityRow {
            algorithm: alg.name(),
            n: p.n,
            q,
            method: "exact".into(),
            beta_q: exact.value(),
            stderr: 0.0,
            trials: 0,
            master_seed: prov.master_seed,
            config_hash: prov.config_hash.clone(),
        });
        if p.mc {
            let mc = stability_mc(
                &alg,
                &dist,
                p.n,
                q,
                &loss,
                StabilityMode::AllIndices,
                cfg.trials,
                cfg.row_streams(i as u64),
                cfg.workers,
            )?;
            rows.push(StabilityRow {
                algorithm: alg.name(),
                n: p.n,
                q,
                method: "monte-carlo".into(),
                beta_q: mc.value(),
                stderr: mc.estimate.stderr,
                trials: cfg.trials,
                master_seed: prov.master_seed,
                config_hash: prov.config_hash.clone(),
            });
        }
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        ..RunOutput::default()
    })
}

// ---------------------------------------------------------------- phase

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhaseParams {
    pub algorithms: Vec<String>,
    pub dist: DistSpec,
    pub ns: Vec<usize>,
    pub qs: Vec<u32>,
    pub loss: String,
    /// Exact enumeration (budget errors propagate) or Monte Carlo.
    pub exact: bool,
}

impl Default for PhaseParams {
    fn default() -> Self {
        Self {
            algorithms: vec![
                "constant:0".into(),
                "majority".into(),
                "knn:1".into(),
                "seed-coin:0.5".into(),
            ],
            dist: DistSpec::preset("two-atom"),
            ns: vec![1, 2, 4, 8],
            qs: vec![1, 2],
            loss: "zero-one".into(),
            exact: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub algorithm: String,
    pub n: usize,
    pub q: u32,
    pub beta_q: f64,
    pub stderr: f64,
    /// `2B / n^{1/q}`.
    pub threshold: f64,
    pub regime: String,
    /// `beta_q / threshold`.
    pub margin: f64,
    pub master_seed: u64,
    pub config_hash: String,
}

/// Stability of each algorithm across training sizes, classified against the
/// `2B / n^{1/q}` threshold.
pub fn cmd_phase(cfg: &ExperimentConfig, p: &PhaseParams) -> Result<RunOutput> {
    if !p.exact {
        require_trials(cfg)?;
    }
    let prov = cfg.provenance();
    let dist = p.dist.build()?;
    let loss = parse_loss(&p.loss)?;
    let b = loss.bound();
    if !b.is_finite() {
        return Err(Error::Config(format!(
            "phase scan needs a bounded loss, got {}",
            loss.name()
        )));
    }
    let mut rows = Vec::new();
    let mut index = 0u64;
    for spec in &p.algorithms {
        let alg = parse_algorithm(spec)?;
        for &n in &p.ns {
            for &q in &p.qs {
                let est = if p.exact {
                    stability_exact_with(
                        &alg,
                        &dist,
                        n,
                        q,
                        &loss,
                        StabilityMode::AllIndices,
                        &ExactOptions::default(),
                    )?
                } else {
                    stability_mc(
                        &alg,
                        &dist,
                        n,
                        q,
                        &loss,
                        StabilityMode::AllIndices,
                        cfg.trials,
                        cfg.row_streams(index),
                        cfg.workers,
                    )?
                };
                index += 1;
                let report = regime_classify(est.value(), q, n, b, false)?;
                rows.push(PhaseRow {
                    algorithm: alg.name(),
                    n,
                    q,
                    beta_q: est.value(),
                    stderr: est.estimate.stderr,
                    threshold: report.threshold,
                    regime: report.regime.to_string(),
                    margin: report.margin,
                    master_seed: prov.master_seed,
                    config_hash: prov.config_hash.clone(),
                });
            }
        }
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        ..RunOutput::default()
    })
}

// ---------------------------------------------------------------- adversary

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdversaryParams {
    pub algorithm: String,
    pub dist: DistSpec,
    pub loss: String,
    pub tau: f64,
    pub alpha: f64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub n: usize,
    pub epsilon: f64,
    pub q: u32,
    pub appearance_trials: u64,
    /// Perturbation mass for unbounded losses.
    pub delta: f64,
    /// Run the coupling demo with `trials` trials.
    pub coupling: bool,
}

impl Default for AdversaryParams {
    fn default() -> Self {
        Self {
            algorithm: "constant:0".into(),
            dist: DistSpec::preset("toy"),
            loss: "zero-one".into(),
            tau: 0.5,
            alpha: 0.5,
            big_n: 8,
            n: 2,
            epsilon: 0.01,
            q: 1,
            appearance_trials: 1_000,
            delta: 0.1,
            coupling: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingRow {
    pub trials: u64,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub c: f64,
    pub tv: f64,
    pub epsilon: f64,
    pub inflation: f64,
    pub original_rate: f64,
    pub original_stderr: f64,
    pub patched_rate: f64,
    pub patched_stderr: f64,
    pub equality_rate: f64,
    pub equality_expected: f64,
    pub mismatch_rate: f64,
    pub mismatch_expected: f64,
    pub rare_touch_rate: f64,
    pub gap_mean: f64,
    pub gap_stderr: f64,
    pub slack: f64,
    pub inequality_holds: bool,
    pub power_ceiling: f64,
    pub ceiling_holds: bool,
    pub master_seed: u64,
    pub config_hash: String,
}

impl CouplingRow {
    fn new(r: &CouplingReport, prov: &Provenance) -> Self {
        Self {
            trials: r.trials,
            big_n: r.big_n,
            c: r.c,
            tv: r.tv,
            epsilon: r.epsilon,
            inflation: r.inflation,
            original_rate: r.original.rate,
            original_stderr: r.original.stderr,
            patched_rate: r.patched.rate,
            patched_stderr: r.patched.stderr,
            equality_rate: r.equality_rate,
            equality_expected: r.equality_expected,
            mismatch_rate: r.mismatch_rate,
            mismatch_expected: r.mismatch_expected,
            rare_touch_rate: r.rare_touch_rate,
            gap_mean: r.gap_mean,
            gap_stderr: r.gap_stderr,
            slack: r.slack,
            inequality_holds: r.inequality_holds,
            power_ceiling: r.power_ceiling.unwrap_or(f64::INFINITY),
            ceiling_holds: r.ceiling_holds.unwrap_or(true),
            master_seed: prov.master_seed,
            config_hash: prov.config_hash.clone(),
        }
    }
}

/// Build and verify the tilted instance for the Binomial test (bounded loss)
/// or the unbounded construction, then optionally run the coupling demo.
/// JSON carries the bundle audit; CSV carries the coupling row.
pub fn cmd_adversary(cfg: &ExperimentConfig, p: &AdversaryParams) -> Result<RunOutput> {
    let prov = cfg.provenance();
    let alg = parse_algorithm(&p.algorithm)?;
    let dist = p.dist.build()?;
    let loss = parse_loss(&p.loss)?;
    let mut rng = stream(cfg.master_seed, u64::MAX);
    let protocol = binom_test_protocol(BinomTestConfig {
        n: p.n,
        tau: p.tau,
        alpha: p.alpha,
        loss: if loss.is_binary() {
            loss.clone()
        } else {
            LossFn::ZeroOne
        },
    })?;
    let bundle = if loss.is_unbounded() {
        build_unbounded_adversary(&alg, &dist, &loss, p.tau, p.delta, p.n, &mut rng)?
    } else {
        if !loss.is_binary() {
            return Err(Error::Config(format!(
                "the Binomial test needs a binary loss, got {}",
                loss.name()
            )));
        }
        let opts = AdversaryOptions {
            q: p.q,
            appearance_trials: p.appearance_trials,
            mc_trials: cfg.trials.max(1),
            master_seed: cfg.master_seed,
            workers: cfg.workers,
            ..AdversaryOptions::default()
        };
        build_eval_adversary(
            &alg, &dist, &loss, p.tau, p.alpha, p.big_n, p.n, &protocol, p.epsilon, &mut rng, &opts,
        )?
    };
    let json = bundle.to_json()?;
    let mut failures = Vec::new();
    let csv = if p.coupling {
        require_trials(cfg)?;
        let report = coupling_demo(
            &protocol,
            &alg,
            &bundle,
            p.big_n,
            Some(p.alpha),
            cfg.trials,
            cfg.row_streams(0),
            cfg.workers,
        )?;
        if !report.inequality_holds {
            failures.push(format!(
                "coupling inequality fails with slack {}",
                report.slack
            ));
        }
        Some(to_csv(&[CouplingRow::new(&report, &prov)])?)
    } else {
        None
    };
    Ok(RunOutput {
        csv,
        json: Some(json),
        failures,
    })
}

// ---------------------------------------------------------------- compare

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareParams {
    pub alg0: String,
    pub alg1: String,
    pub dist: DistSpec,
    pub psi: String,
    pub n: usize,
    pub alpha: f64,
    pub ms: Vec<u64>,
}

impl Default for CompareParams {
    fn default() -> Self {
        Self {
            alg0: "constant:0".into(),
            alg1: "constant:1".into(),
            dist: DistSpec::preset("bernoulli:0.75"),
            psi: "loss-order:zero-one".into(),
            n: 1,
            alpha: 0.05,
            ms: vec![1, 2, 4, 8],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub m: u64,
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: u64,
    pub alpha: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub delta: f64,
    pub delta_max: f64,
    pub exact_power: f64,
    pub mc_power: f64,
    pub mc_stderr: f64,
    pub bound: f64,
    pub applicable: bool,
    pub master_seed: u64,
    pub config_hash: String,
}

/// Power of the comparison sign test next to the comparison power limit.
pub fn cmd_compare(cfg: &ExperimentConfig, p: &CompareParams) -> Result<RunOutput> {
    require_trials(cfg)?;
    let prov = cfg.provenance();
    let alg0 = parse_algorithm(&p.alg0)?;
    let alg1 = parse_algorithm(&p.alg1)?;
    let dist = p.dist.build()?;
    let psi = parse_psi(&p.psi)?;
    let protocol = compare_binom_protocol(p.n, p.alpha, psi.clone())?;
    let (p_plus, p_minus) = psi_sign_probabilities(&alg0, &alg1, &psi, &dist, p.n)?;
    let delta = delta_exact(&alg0, &alg1, &psi, &dist, p.n)?.value;
    let delta_max = max_delta(&dist, &psi, &default_prediction_space(&dist))?.value;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (i, &m) in p.ms.iter().enumerate() {
        let big_n = m * (p.n as u64 + 1);
        let rate = compare_rejection_rate(
            &protocol,
            &alg0,
            &alg1,
            &dist,
            big_n as usize,
            cfg.trials,
            cfg.row_streams(i as u64),
            cfg.workers,
        )?;
        let computed = compare_power_bound(&BoundInputs {
            alpha: p.alpha,
            tau: 0.0,
            big_n: big_n as f64,
            n: p.n as f64,
            r: delta,
            r_max: delta_max,
            b: psi.bound(),
        });
        let applicable = computed.is_ok();
        let bound = computed.unwrap_or(1.0);
        if rate.rate > bound + 4.0 * rate.stderr_at(bound.min(1.0)) + 1e-12 {
            failures.push(format!("m={m}: mc power {} above bound {bound}", rate.rate));
        }
        rows.push(CompareRow {
            m,
            n: p.n,
            big_n,
            alpha: p.alpha,
            p_plus,
            p_minus,
            delta,
            delta_max,
            exact_power: compare_binom_exact_power(m, p_plus, p_minus, p.alpha)?,
            mc_power: rate.rate,
            mc_stderr: rate.stderr,
            bound,
            applicable,
            master_seed: prov.master_seed,
            config_hash: prov.config_hash.clone(),
        });
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        json: None,
        failures,
    })
}

// ---------------------------------------------------------------- reduce

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReductionParams {
    pub instances: usize,
    pub max_atoms: usize,
    pub max_n: usize,
    pub algorithms: Vec<String>,
    pub psis: Vec<String>,
    pub tolerance: f64,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self {
            instances: 20,
            max_atoms: 3,
            max_n: 3,
            algorithms: vec![
                "constant:0".into(),
                "constant:1".into(),
                "majority".into(),
                "knn:1".into(),
                "knn:3".into(),
                "seed-coin:0.5".into(),
            ],
            psis: vec![
                "loss-difference:zero-one".into(),
                "loss-order:zero-one".into(),
            ],
            tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub instance: usize,
    pub alg0: String,
    pub alg1: String,
    pub psi: String,
    pub n: usize,
    pub atoms: usize,
    pub tilde_risk: f64,
    pub delta: f64,
    pub risk_gap: f64,
    pub tilde_max: f64,
    pub delta_max: f64,
    pub extremal_gap: f64,
    pub stability_gap: f64,
    pub pass: bool,
    pub master_seed: u64,
    pub config_hash: String,
}

/// One random enumerable instance: a distribution on at most `max_atoms`
/// distinct points of `{0,1,2} x {0,1}`, a training size and two algorithms.
pub fn random_reduction_instance<R: RngCore>(
    rng: &mut R,
    p: &ReductionParams,
) -> Result<(FiniteDistribution, usize, String, String, String)> {
    if p.algorithms.is_empty() || p.psis.is_empty() || p.max_atoms == 0 || p.max_n == 0 {
        return Err(Error::Config(
            "reduction check needs algorithms, psis, atoms and n".into(),
        ));
    }
    let mut grid: Vec<DataPoint> = (0..3)
        .flat_map(|x| (0..2).map(move |y| DataPoint::new(x, y)))
        .collect();
    let atoms = rng.random_range(1..=p.max_atoms.min(grid.len()));
    let mut chosen = Vec::with_capacity(atoms);
    for _ in 0..atoms {
        chosen.push(grid.swap_remove(rng.random_range(0..grid.len())));
    }
    let weights: Vec<f64> = (0..atoms).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = weights.iter().sum();
    let dist = FiniteDistribution::new(
        "random",
        chosen
            .into_iter()
            .zip(weights.iter().map(|w| w / total))
            .collect(),
    )?;
    let n = rng.random_range(1..=p.max_n);
    let pick = |rng: &mut R, v: &[String]| v[rng.random_range(0..v.len())].clone();
    let a0 = pick(rng, &p.algorithms);
    let a1 = pick(rng, &p.algorithms);
    let psi = pick(rng, &p.psis);
    Ok((dist, n, a0, a1, psi))
}

pub fn cmd_reduce(cfg: &ExperimentConfig, p: &ReductionParams) -> Result<RunOutput> {
    let prov = cfg.provenance();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for i in 0..p.instances {
        let mut rng = cfg.row_streams(i as u64).trial(0);
        let (dist, n, a0, a1, psi_name) = random_reduction_instance(&mut rng, p)?;
        let (alg0, alg1) = (parse_algorithm(&a0)?, parse_algorithm(&a1)?);
        let psi = parse_psi(&psi_name)?;
        let r = reduction_identity_check(&alg0, &alg1, &psi, &dist, n)?;
        let pass = r.max_gap() <= p.tolerance;
        if !pass {
            failures.push(format!("instance {i}: identity gap {}", r.max_gap()));
        }
        rows.push(ReductionRow {
            instance: i,
            alg0: alg0.name(),
            alg1: alg1.name(),
            psi: psi.name(),
            n,
            atoms: dist.len(),
            tilde_risk: r.tilde_risk,
            delta: r.delta,
            risk_gap: r.risk_gap,
            tilde_max: r.tilde_max,
            delta_max: r.delta_max,
            extremal_gap: r.extremal_gap,
            stability_gap: r.stability_gap,
            pass,
            master_seed: prov.master_seed,
            config_hash: prov.config_hash.clone(),
        });
    }
    Ok(RunOutput {
        csv: Some(to_csv(&rows)?),
        json: None,
        failures,
    })
}

// ---------------------------------------------------------------- transcripts

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranscriptParams {
    pub protocol: ProtocolSpec,
    /// One algorithm, or two for a comparison protocol.
    pub algorithms: Vec<String>,
    pub dist: DistSpec,
    #[serde(rename = "N")]
    pub big_n: usize,
}

impl Default for TranscriptParams {
    fn default() -> Self {
        Self {
            protocol: ProtocolSpec::Binomial {
                n: 2,
                tau: 0.5,
                alpha: 0.05,
                loss: "zero-one".into(),
            },
            algorithms: vec!["knn:1".into()],
            dist: DistSpec::preset("two-atom"),
            big_n: 9,
        }
    }
}

/// A transcript together with what is needed to re-run it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub protocol: ProtocolSpec,
    pub algorithms: Vec<String>,
    pub transcript: TranscriptRecord,
}

fn execute(
    protocol: &ProtocolSpec,
    algorithms: &[String],
    data: &crate::model::Dataset,
    master_seed: u64,
) -> Result<TranscriptRecord> {
    let algs: Vec<AlgorithmHandle> = algorithms
        .iter()
        .map(|s| parse_algorithm(s))
        .collect::<Result<_>>()?;
    match (protocol.build()?, algs.as_slice()) {
        (BuiltProtocol::Single(p), [a]) => {
            Ok(run_test_seeded(p.as_ref(), a, data, master_seed)?.to_record())
        }
        (BuiltProtocol::Pair(p), [a0, a1]) => {
            Ok(run_compare_test_seeded(p.as_ref(), a0, a1, data, master_seed)?.to_record())
        }
        _ => Err(Error::Config(format!(
            "protocol {:?} cannot run with {} algorithm(s)",
            protocol,
            algs.len()
        ))),
    }
}

/// Run one test on `N` fresh points and emit a replayable record as JSON.
pub fn cmd_transcript(cfg: &ExperimentConfig, p: &TranscriptParams) -> Result<RunOutput> {
    let dist = p.dist.build()?;
    let data = dist.sample_dataset(p.big_n, &mut stream(cfg.master_seed, 0));
    let transcript = execute(&p.protocol, &p.algorithms, &data, cfg.master_seed)?;
    let record = ReplayRecord {
        protocol: p.protocol.clone(),
        algorithms: p.algorithms.clone(),
        transcript,
    };
    Ok(RunOutput {
        json: Some(serde_json::to_string_pretty(&record)?),
        ..RunOutput::default()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayOutcome {
    pub matches: bool,
    pub decision: u8,
    pub rounds: usize,
}

/// Re-run a recorded transcript from its input and master seed and compare
/// every round and the decision.
pub fn replay(record_json: &str) -> Result<ReplayOutcome> {
    let record: ReplayRecord = serde_json::from_str(record_json)?;
    let input = record.transcript.input_dataset();
    let again = execute(
        &record.protocol,
        &record.algorithms,
        &input,
        record.transcript.master_seed,
    )?;
    Ok(ReplayOutcome {
        matches: again == record.transcript,
        decision: again.decision,
        rounds: again.rounds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(experiment: Experiment, trials: u64) -> ExperimentConfig {
        ExperimentConfig::new(experiment, 17, trials)
    }

    #[test]
    fn config_round_trips_and_hash_ignores_workers() {
        let mut c = cfg(Experiment::PowerCurve(PowerParams::default()), 100);
        let json = c.to_json().unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), c);
        let h = c.config_hash();
        c.workers = Some(8);
        c.output = Some("x.csv".into());
        assert_eq!(c.config_hash(), h);
        assert_eq!(
            ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(),
            c
        );
        c.master_seed = 18;
        assert_ne!(c.config_hash(), h);
        let bare = ExperimentConfig::from_json(r#"{"kind": "critical"}"#).unwrap();
        assert_eq!(
            bare.experiment,
            Experiment::Critical(CriticalParams::default())
        );
        let partial = r#"{"kind": "power-curve", "params": {"ms": [2]}, "master_seed": 3}"#;
        let parsed = ExperimentConfig::from_json(partial).unwrap();
        assert_eq!(parsed.trials, 10_000);
        match parsed.experiment {
            Experiment::PowerCurve(p) => assert_eq!((p.ms, p.n), (vec![2], 1)),
            other => panic!("{other:?}"),
        }
        for e in [
            Experiment::Critical(CriticalParams::default()),
            Experiment::ValidateSize(SizeParams::default()),
            Experiment::BoundDominance(BoundParams::default()),
            Experiment::Stability(StabilityParams::default()),
            Experiment::StabilityScan(PhaseParams::default()),
            Experiment::AdversaryDemo(AdversaryParams::default()),
            Experiment::Compare(CompareParams::default()),
            Experiment::ReductionCheck(ReductionParams::default()),
            Experiment::Transcript(TranscriptParams::default()),
        ] {
            let c = cfg(e, 5);
            assert_eq!(
                ExperimentConfig::from_json(&c.to_json().unwrap()).unwrap(),
                c
            );
        }
        assert!(ExperimentConfig::from_json(r#"{"kind": "nope", "params": {}}"#).is_err());
        let err = ExperimentConfig::from_json(r#"{"kind": "power-curve", "params": {"ms": "x"}}"#)
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("params.ms"), "{err}");
        let err = ExperimentConfig::from_json(r#"{"kind": "critical", "trials": -1}"#).unwrap_err();
        assert!(err.to_string().contains("trials"), "{err}");
    }

    #[test]
    fn power_rows() {
        let p = PowerParams {
            n: 1,
            ms: vec![1],
            taus: vec![0.5],
            alphas: vec![0.05],
            risks: vec![0.0, 0.5],
            r_max: 1.0,
        };
        let out = cmd_power(&cfg(Experiment::PowerCurve(p.clone()), 4000), &p).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let text = out.csv.unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<PowerRow> = reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(rows.len(), 2);
        assert!((rows[0].exact_power - 0.1).abs() < 1e-12);
        assert!((rows[1].exact_power - 0.05).abs() < 1e-12);
        for r in &rows {
            assert!(
                (r.mc_power - r.exact_power).abs()
                    <= 4.0 * (r.exact_power * (1.0 - r.exact_power) / 4000.0).sqrt()
            );
            assert_eq!(r.master_seed, 17);
        }
    }

    #[test]
    fn power_is_worker_invariant() {
        let p = PowerParams {
            ms: vec![2, 3],
            risks: vec![0.1, 0.3],
            ..PowerParams::default()
        };
        let mut c = cfg(Experiment::PowerCurve(p.clone()), 500);
        let one = {
            c.workers = Some(1);
            cmd_power(&c, &p).unwrap().csv
        };
        c.workers = Some(3);
        assert_eq!(cmd_power(&c, &p).unwrap().csv, one);
    }

    #[test]
    fn validate_and_bound_have_no_failures() {
        let p = SizeParams {
            ms: vec![1, 7, 20],
            ..SizeParams::default()
        };
        let out = cmd_validate(&cfg(Experiment::ValidateSize(p.clone()), 1), &p).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let p = BoundParams::default();
        let out = cmd_bound(&cfg(Experiment::BoundDominance(p.clone()), 1), &p).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
    }

    #[test]
    fn phase_rows_for_constant_are_consistent() {
        let p = PhaseParams {
            algorithms: vec!["constant:0".into(), "knn:1".into()],
            ns: vec![1, 4],
            ..PhaseParams::default()
        };
        let out = cmd_phase(&cfg(Experiment::StabilityScan(p.clone()), 1), &p).unwrap();
        let text = out.csv.unwrap();
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let rows: Vec<PhaseRow> = reader
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        for r in rows.iter().filter(|r| r.algorithm.starts_with("constant")) {
            assert_eq!((r.beta_q, r.regime.as_str()), (0.0, "consistency"));
        }
        let knn_n1_q1 = rows
            .iter()
            .find(|r| r.algorithm.contains("nn") && r.n == 1 && r.q == 1)
            .unwrap();
        assert_eq!((knn_n1_q1.beta_q, knn_n1_q1.threshold), (0.5, 2.0));
        assert_eq!(knn_n1_q1.regime, "consistency");
        let q2: Vec<&PhaseRow> = rows
            .iter()
            .filter(|r| r.q == 2 && r.algorithm.starts_with("constant"))
            .collect();
        assert!((q2[0].threshold / q2[1].threshold - 2.0).abs() < 1e-12);
    }

    #[test]
    fn adversary_and_infeasible_proviso() {
        let p = AdversaryParams::default();
        let out = cmd_adversary(&cfg(Experiment::AdversaryDemo(p.clone()), 2000), &p).unwrap();
        assert!(out.failures.is_empty());
        let audit: serde_json::Value = serde_json::from_str(out.json.as_ref().unwrap()).unwrap();
        assert_eq!(audit["verified"], true);
        let c = crate::adversary::choose_c(0.5, 0.5, 8.0, 2.0, 0.0, 1.0).unwrap();
        assert_eq!(audit["c"].as_f64().unwrap(), c);
        let bad = AdversaryParams {
            alpha: 0.05,
            big_n: 4,
            n: 4,
            ..AdversaryParams::default()
        };
        let err =
            cmd_adversary(&cfg(Experiment::AdversaryDemo(bad.clone()), 2000), &bad).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("tilde_tau < Rmax"));
    }

    #[test]
    fn compare_and_reduce() {
        let p = CompareParams::default();
        let out = cmd_compare(&cfg(Experiment::Compare(p.clone()), 2000), &p).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
        let p = ReductionParams {
            instances: 5,
            ..ReductionParams::default()
        };
        let out = cmd_reduce(&cfg(Experiment::ReductionCheck(p.clone()), 1), &p).unwrap();
        assert!(out.failures.is_empty(), "{:?}", out.failures);
    }

    #[test]
    fn transcript_replays() {
        let p = TranscriptParams::default();
        let out = cmd_transcript(&cfg(Experiment::Transcript(p.clone()), 1), &p).unwrap();
        let json = out.json.unwrap();
        let outcome = replay(&json).unwrap();
        assert!(outcome.matches);
        assert_eq!(outcome.rounds, 3);
        let mut tampered: ReplayRecord = serde_json::from_str(&json).unwrap();
        tampered.transcript.decision ^= 1;
        assert!(
            !replay(&serde_json::to_string(&tampered).unwrap())
                .unwrap()
                .matches
        );

        let pair = TranscriptParams {
            protocol: ProtocolSpec::CompareSign {
                n: 1,
                alpha: 0.1,
                psi: "loss-order:zero-one".into(),
            },
            algorithms: vec!["constant:0".into(), "knn:1".into()],
            ..TranscriptParams::default()
        };
        let out = cmd_transcript(&cfg(Experiment::Transcript(pair.clone()), 1), &pair).unwrap();
        assert!(replay(&out.json.unwrap()).unwrap().matches);
        let wrong = TranscriptParams {
            algorithms: vec![],
            ..TranscriptParams::default()
        };
        assert!(cmd_transcript(&cfg(Experiment::Transcript(wrong.clone()), 1), &wrong).is_err());
    }

    #[test]
    fn presets() {
        for name in ["two-atom", "toy", "three-atom", "bernoulli:0.25"] {
            let d = DistSpec::preset(name).build().unwrap();
            assert!((d.total_mass() - 1.0).abs() < 1e-12);
        }
        assert!(DistSpec::preset("nope").build().is_err());
        let explicit = DistSpec(serde_json::json!({"atoms": [{"x": 3, "y": 1, "p": 1.0}]}));
        assert_eq!(explicit.build().unwrap().len(), 1);
    }
}
