//! Synthetic preference datasets with known utilities.
//!
//! Items are uniform attribute vectors, the ground truth is a random ReLU
//! network, and labels plus response times come from one of three choice
//! models: a noiseless link, Bradley–Terry choices with log-normal response
//! times, or a drift-diffusion process.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{link, sigmoid, LinkConfig};
use crate::net::{Init, UtilityNet};

/// Attribute vector being compared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Item(pub Vec<f64>);

impl std::ops::Deref for Item {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preference {
    A,
    B,
}

impl Preference {
    pub fn flipped(self) -> Self {
        match self {
            Self::A => Self::B,
            Self::B => Self::A,
        }
    }
}

/// One labeled pairwise comparison. `strength` is a response time: lower
/// means a stronger preference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: Item,
    pub b: Item,
    pub preference: Preference,
    pub strength: f64,
    pub stratum: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelerKind {
    Deterministic,
    Stochastic,
    Ddm,
}

impl LabelerKind {
    pub const ALL: [LabelerKind; 3] = [Self::Deterministic, Self::Stochastic, Self::Ddm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Deterministic => "deterministic",
            Self::Stochastic => "stochastic",
            Self::Ddm => "ddm",
        }
    }
}

impl fmt::Display for LabelerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LabelerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "stochastic" => Ok(Self::Stochastic),
            "ddm" => Ok(Self::Ddm),
            other => Err(Error::InvalidConfig(format!("unknown dataset kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelerConfig {
    pub choice_temperature: f64,
    pub rt_sd: f64,
    pub rt_sd_scale: SdScale,
    pub link: LinkConfig,
    /// Separation between the two decision boundaries; evidence starts midway.
    pub ddm_threshold: f64,
    pub ddm_nondecision: f64,
    pub ddm_drift_mult: f64,
    pub ddm_noise_sd: f64,
    pub ddm_dt: f64,
    pub ddm_max_steps: u64,
    pub num_strata: usize,
    pub stratum_rt_sd: f64,
}

impl Default for LabelerConfig {
    fn default() -> Self {
        Self {
            choice_temperature: 0.2,
            rt_sd: 0.4,
            rt_sd_scale: SdScale::Linear,
            link: LinkConfig::default(),
            ddm_threshold: 1.2,
            ddm_nondecision: 0.3,
            ddm_drift_mult: 1.0,
            ddm_noise_sd: 0.4,
            ddm_dt: 0.001,
            ddm_max_steps: 1_000_000,
            num_strata: 5,
            stratum_rt_sd: 3.0,
        }
    }
}

impl LabelerConfig {
    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        let positive = [
            ("choice_temperature", self.choice_temperature),
            ("ddm_threshold", self.ddm_threshold),
            ("ddm_drift_mult", self.ddm_drift_mult),
            ("ddm_noise_sd", self.ddm_noise_sd),
            ("ddm_dt", self.ddm_dt),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("rt_sd", self.rt_sd),
            ("ddm_nondecision", self.ddm_nondecision),
            ("stratum_rt_sd", self.stratum_rt_sd),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        if self.num_strata == 0 {
            return Err(Error::InvalidConfig("num_strata must be at least 1".into()));
        }
        if self.ddm_max_steps == 0 {
            return Err(Error::InvalidConfig("ddm_max_steps must be at least 1".into()));
        }
        // per-step noise must be small relative to the threshold
        let step_sd = self.ddm_noise_sd * self.ddm_dt.sqrt();
        if step_sd > 0.1 * self.ddm_threshold {
            return Err(Error::InvalidConfig(format!(
                "ddm_dt too coarse: per-step noise {step_sd} vs threshold {}",
                self.ddm_threshold
            )));
        }
        Ok(())
    }
}

/// Random ground-truth utility and the divisor that gives utility
/// differences unit standard deviation over the query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub net: UtilityNet,
    pub diff_scale: f64,
}

impl GroundTruth {
    pub fn utility(&self, item: &[f64]) -> f64 {
        self.net.eval(item)
    }

    /// `(u(a) - u(b)) / diff_scale`.
    pub fn normalized_diff(&self, a: &[f64], b: &[f64]) -> f64 {
        (self.net.eval(a) - self.net.eval(b)) / self.diff_scale
    }
}

pub const GROUND_TRUTH_HIDDEN: [usize; 2] = [64, 64];
const GROUND_TRUTH_ATTEMPTS: usize = 10;

pub fn gen_items<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> Vec<Item> {
    (0..n)
        .map(|_| Item((0..d).map(|_| rng.random::<f64>()).collect()))
        .collect()
}

/// Population standard deviation.
pub(crate) fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Draws a `d -> 64 -> 64 -> 1` ReLU network and sets `diff_scale` to the SD of
/// `u(a) - u(b)` over `queries`, redrawing if the network is constant there.
pub fn gen_ground_truth<R: Rng + ?Sized>(
    d: usize,
    queries: &[(Item, Item)],
    init: Init,
    rng: &mut R,
) -> Result<GroundTruth> {
    if d == 0 {
        return Err(Error::InvalidConfig("feature dimension must be at least 1".into()));
    }
    let mut sizes = vec![d];
    sizes.extend(GROUND_TRUTH_HIDDEN);
    sizes.push(1);
    for _ in 0..GROUND_TRUTH_ATTEMPTS {
        let net = UtilityNet::init_with(&sizes, init, rng)?;
        if queries.is_empty() {
            return Ok(GroundTruth {
                net,
                diff_scale: 1.0,
            });
        }
        let diffs: Vec<f64> = queries
            .iter()
            .map(|(a, b)| net.utility(a).and_then(|ua| Ok(ua - net.utility(b)?)))
            .collect::<Result<_>>()?;
        let sd = std_dev(&diffs);
        if sd > 0.0 && sd.is_finite() {
            return Ok(GroundTruth {
                net,
                diff_scale: sd,
            });
        }
    }
    Err(Error::DegenerateGroundTruth(GROUND_TRUTH_ATTEMPTS))
}

/// Noiseless labels: the higher-utility item wins (A on exact ties) and the
/// response time is the link value.
pub fn label_deterministic(a: &[f64], b: &[f64], gt: &GroundTruth, cfg: &LabelerConfig) -> (Preference, f64) {
    let diff = gt.normalized_diff(a, b);
    let pref = if diff >= 0.0 { Preference::A } else { Preference::B };
    (pref, link(diff, &cfg.link))
}

/// How `rt_sd` is read when sampling log-normal response times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdScale {
    /// SD of log(response time).
    Log,
    /// SD of the response time itself.
    Linear,
}

/// Log-normal with the given mean and an SD on the given scale.
fn lognormal_with_mean(mean: f64, sd: f64, scale: SdScale) -> LogNormal<f64> {
    let log_sd = match scale {
        SdScale::Log => sd,
        SdScale::Linear => (sd / mean).powi(2).ln_1p().sqrt(),
    };
    let mu = mean.ln() - log_sd * log_sd / 2.0;
    LogNormal::new(mu, log_sd).expect("valid log-normal parameters")
}

/// Bradley–Terry choice at temperature `choice_temperature`, log-normal response
/// time whose mean is the link value.
pub fn label_stochastic_bt<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    gt: &GroundTruth,
    cfg: &LabelerConfig,
    rng: &mut R,
) -> (Preference, f64) {
    let diff = gt.normalized_diff(a, b);
    (
        bt_choice(diff, cfg.choice_temperature, rng),
        lognormal_with_mean(link(diff, &cfg.link), cfg.rt_sd, cfg.rt_sd_scale).sample(rng),
    )
}

pub(crate) fn bt_choice<R: Rng + ?Sized>(diff: f64, temperature: f64, rng: &mut R) -> Preference {
    let p_a = sigmoid(diff / temperature);
    if rng.random::<f64>() < p_a {
        Preference::A
    } else {
        Preference::B
    }
}

/// Outcome of one drift-diffusion run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdmOutcome {
    pub preference: Preference,
    pub steps: u64,
    pub hit_threshold: bool,
}

/// Euler–Maruyama simulation of a diffusion starting at 0 with boundaries at
/// `±ddm_threshold / 2`. Stops after `max_steps` and then reports the sign of
/// the current evidence.
pub fn simulate_ddm<R: Rng + ?Sized>(drift: f64, cfg: &LabelerConfig, max_steps: u64, rng: &mut R) -> DdmOutcome {
    let dt = cfg.ddm_dt;
    let mean_step = drift * dt;
    let noise_step = cfg.ddm_noise_sd * dt.sqrt();
    let threshold = 0.5 * cfg.ddm_threshold;
    let mut evidence = 0.0;
    for step in 1..=max_steps {
        let z: f64 = StandardNormal.sample(rng);
        evidence += mean_step + noise_step * z;
        if evidence >= threshold {
            return DdmOutcome {
                preference: Preference::A,
                steps: step,
                hit_threshold: true,
            };
        }
        if evidence <= -threshold {
            return DdmOutcome {
                preference: Preference::B,
                steps: step,
                hit_threshold: true,
            };
        }
    }
    DdmOutcome {
        preference: if evidence >= 0.0 { Preference::A } else { Preference::B },
        steps: max_steps,
        hit_threshold: false,
    }
}

/// Drift-diffusion labels with drift `ddm_drift_mult * normalized diff`.
pub fn label_ddm<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    gt: &GroundTruth,
    cfg: &LabelerConfig,
    rng: &mut R,
) -> (Preference, f64) {
    let drift = cfg.ddm_drift_mult * gt.normalized_diff(a, b);
    let mut outcome = simulate_ddm(drift, cfg, cfg.ddm_max_steps, rng);
    if !outcome.hit_threshold {
        outcome = simulate_ddm(drift, cfg, cfg.ddm_max_steps, rng);
    }
    (
        outcome.preference,
        cfg.ddm_nondecision + outcome.steps as f64 * cfg.ddm_dt,
    )
}

/// Draws one multiplier `|N(1, stratum_rt_sd)|` per stratum and scales every
/// comparison's strength by its stratum's multiplier. Returns the multipliers.
pub fn apply_stratum_variability<R: Rng + ?Sized>(
    comparisons: &mut [Comparison],
    cfg: &LabelerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let normal = Normal::new(1.0, cfg.stratum_rt_sd)
        .map_err(|e| Error::InvalidConfig(format!("stratum_rt_sd: {e}")))?;
    let mut multipliers: Vec<f64> = (0..cfg.num_strata).map(|_| normal.sample(rng).abs()).collect();
    // |N(1, sd)| is zero with probability zero; keep strengths positive regardless
    for m in &mut multipliers {
        if *m == 0.0 {
            *m = f64::MIN_POSITIVE;
        }
    }
    for c in comparisons.iter_mut() {
        let m = multipliers.get(c.stratum).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "stratum {} out of range for {} strata",
                c.stratum, cfg.num_strata
            ))
        })?;
        c.strength *= m;
    }
    Ok(multipliers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub kind: LabelerKind,
    pub variability: bool,
    pub train_size: usize,
    pub test_size: usize,
    pub features: usize,
    pub ground_truth_init: Init,
    pub labeler: LabelerConfig,
}

impl DatasetConfig {
    pub fn new(kind: LabelerKind, variability: bool) -> Self {
        Self {
            kind,
            variability,
            train_size: 50,
            test_size: 200,
            features: 20,
            ground_truth_init: Init::UniformFanIn,
            labeler: LabelerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub seed: u64,
    pub train: Vec<Comparison>,
    pub test: Vec<Comparison>,
    pub ground_truth: GroundTruth,
    /// All ones when variability is disabled.
    pub stratum_multipliers: Vec<f64>,
}

impl Dataset {
    /// `|u(a) - u(b)|` of each test pair under the ground truth (unnormalized).
    pub fn test_true_abs_diffs(&self) -> Vec<f64> {
        self.test
            .iter()
            .map(|c| (self.ground_truth.utility(&c.a) - self.ground_truth.utility(&c.b)).abs())
            .collect()
    }
}

/// Generates a full dataset. Pure function of `(config, seed)`.
pub fn build_dataset(config: &DatasetConfig, seed: u64) -> Result<Dataset> {
    config.labeler.validate()?;
    if config.features == 0 {
        return Err(Error::InvalidConfig("features must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = config.train_size + config.test_size;
    let items = gen_items(2 * total, config.features, &mut rng);
    let mut items = items.into_iter();
    let queries: Vec<(Item, Item)> = (0..total)
        .map(|_| (items.next().unwrap(), items.next().unwrap()))
        .collect();

    let ground_truth = gen_ground_truth(config.features, &queries, config.ground_truth_init, &mut rng)?;
    let cfg = &config.labeler;

    let mut comparisons: Vec<Comparison> = queries
        .into_iter()
        .map(|(a, b)| {
            let (preference, strength) = match config.kind {
                LabelerKind::Deterministic => label_deterministic(&a, &b, &ground_truth, cfg),
                LabelerKind::Stochastic => label_stochastic_bt(&a, &b, &ground_truth, cfg, &mut rng),
                LabelerKind::Ddm => label_ddm(&a, &b, &ground_truth, cfg, &mut rng),
            };
            let stratum = rng.random_range(0..cfg.num_strata);
            Comparison {
                a,
                b,
                preference,
                strength,
                stratum,
            }
        })
        .collect();

    let stratum_multipliers = if config.variability {
        apply_stratum_variability(&mut comparisons, cfg, &mut rng)?
    } else {
        vec![1.0; cfg.num_strata]
    };

    let test = comparisons.split_off(config.train_size);
    Ok(Dataset {
        config: *config,
        seed,
        train: comparisons,
        test,
        ground_truth,
        stratum_multipliers,
    })
}

/// Shuffles the strength values across `comparisons`, leaving items,
/// preferences and strata in place.
pub fn permute_strengths<R: Rng + ?Sized>(comparisons: &mut [Comparison], rng: &mut R) {
    let mut strengths: Vec<f64> = comparisons.iter().map(|c| c.strength).collect();
    strengths.shuffle(rng);
    for (c, s) in comparisons.iter_mut().zip(strengths) {
        c.strength = s;
    }
}
