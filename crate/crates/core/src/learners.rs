//! The six training procedures compared in the synthetic experiments.
//!
//! | tag          | data preparation                                        | loss          |
//! |--------------|---------------------------------------------------------|---------------|
//! | `bt`         | (winner, loser) pairs                                   | BT BCE        |
//! | `rr`         | stratify by stratum id, tie-aware partition, sort       | anchored PL   |
//! | `rr-pool`    | one global stratum, random chunks of size `b`, sort     | anchored PL   |
//! | `rr-perm`    | strengths permuted across the training set, then `rr`   | anchored PL   |
//! | `rtreg`      | signed targets from the inverse link                    | MSE           |
//! | `rtreg-perm` | strengths permuted, then `rtreg`                        | MSE           |

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    bt_bce, bt_bce_grad, mse, mse_grad, pl_nll, pl_nll_with_grad, rt_regression_target, LinkConfig, Outcome,
};
use crate::net::{train, Init, TrainConfig, UtilityNet};
use crate::ranking::{
    build_rankings, normalize, partition_tie_aware, sort_by_strength, NormalizedComparison, RankingTarget,
};
use crate::synth::{permute_strengths, Comparison, Item, Preference};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LearnerKind {
    #[serde(rename = "bt")]
    Bt,
    #[serde(rename = "rr")]
    Rr,
    #[serde(rename = "rr-pool")]
    RrPool,
    #[serde(rename = "rr-perm")]
    RrPerm,
    #[serde(rename = "rtreg")]
    RtReg,
    #[serde(rename = "rtreg-perm")]
    RtRegPerm,
}

impl LearnerKind {
    pub const ALL: [LearnerKind; 6] = [
        Self::Bt,
        Self::Rr,
        Self::RrPool,
        Self::RrPerm,
        Self::RtReg,
        Self::RtRegPerm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bt => "bt",
            Self::Rr => "rr",
            Self::RrPool => "rr-pool",
            Self::RrPerm => "rr-perm",
            Self::RtReg => "rtreg",
            Self::RtRegPerm => "rtreg-perm",
        }
    }

    fn permutes(self) -> bool {
        matches!(self, Self::RrPerm | Self::RtRegPerm)
    }
}

impl fmt::Display for LearnerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown learner '{s}'")))
    }
}

/// Parses a comma-separated learner list such as `bt,rr,rr-pool`.
pub fn parse_learners(list: &str) -> Result<Vec<LearnerKind>> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(LearnerKind::from_str)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub train: TrainConfig,
    pub hidden: usize,
    pub init: Init,
    pub link: LinkConfig,
    /// Number of strata the data was generated with; sets the default pool size.
    pub num_strata: usize,
    /// Ranking size for `rr-pool`; defaults to `ceil(n / num_strata)`.
    pub pool_size: Option<usize>,
    /// Optional cap on ranking length for the stratified variants.
    pub max_ranking_size: Option<usize>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden: 64,
            init: Init::UniformFanIn,
            link: LinkConfig::default(),
            num_strata: 5,
            pool_size: None,
            max_ranking_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionExample {
    pub a: Item,
    pub b: Item,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PreparedData {
    Pairs(Vec<NormalizedComparison>),
    Rankings(Vec<RankingTarget<NormalizedComparison>>),
    Regression(Vec<RegressionExample>),
}

impl PreparedData {
    pub fn num_comparisons(&self) -> usize {
        match self {
            Self::Pairs(p) => p.len(),
            Self::Rankings(r) => r.iter().map(RankingTarget::len).sum(),
            Self::Regression(r) => r.len(),
        }
    }
}

/// Maps training comparisons to the targets learner `kind` trains on.
pub fn prepare<R: Rng + ?Sized>(
    kind: LearnerKind,
    train_set: &[Comparison],
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<PreparedData> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let mut data = train_set.to_vec();
    if kind.permutes() {
        permute_strengths(&mut data, rng);
    }
    match kind {
        LearnerKind::Bt => Ok(PreparedData::Pairs(data.iter().map(normalize).collect())),
        LearnerKind::Rr | LearnerKind::RrPerm => {
            Ok(PreparedData::Rankings(build_rankings(&data, cfg.max_ranking_size)?))
        }
        LearnerKind::RrPool => {
            let size = match cfg.pool_size {
                Some(0) => return Err(Error::InvalidConfig("pool size must be at least 1".into())),
                Some(b) => b,
                None => data.len().div_ceil(cfg.num_strata.max(1)),
            };
            let mut normalized: Vec<NormalizedComparison> = data.iter().map(normalize).collect();
            normalized.shuffle(rng);
            let mut rankings = Vec::new();
            while !normalized.is_empty() {
                let rest = normalized.split_off(size.min(normalized.len()));
                let chunk = std::mem::replace(&mut normalized, rest);
                for partition in partition_tie_aware(chunk, None)? {
                    rankings.push(sort_by_strength(partition)?);
                }
            }
            Ok(PreparedData::Rankings(rankings))
        }
        LearnerKind::RtReg | LearnerKind::RtRegPerm => data
            .into_iter()
            .map(|c| {
                let target = rt_regression_target(c.preference == Preference::A, c.strength, &cfg.link)?;
                Ok(RegressionExample {
                    a: c.a,
                    b: c.b,
                    target,
                })
            })
            .collect::<Result<_>>()
            .map(PreparedData::Regression),
    }
}

fn diff_traces(net: &UtilityNet, x: &[f64], y: &[f64]) -> (crate::net::Trace, crate::net::Trace, f64) {
    let tx = net.trace(x);
    let ty = net.trace(y);
    let s = tx.output() - ty.output();
    (tx, ty, s)
}

/// Training loss and its gradient, normalized by the number of comparisons.
pub fn loss_for(net: &UtilityNet, prepared: &PreparedData) -> (f64, UtilityNet) {
    let mut grads = net.zeros_like();
    let n = prepared.num_comparisons().max(1) as f64;
    let mut total = 0.0;
    match prepared {
        PreparedData::Pairs(pairs) => {
            for p in pairs {
                let (tw, tl, s) = diff_traces(net, &p.winner, &p.loser);
                total += bt_bce(s, Outcome::Win);
                let g = bt_bce_grad(s, Outcome::Win) / n;
                net.backward(&tw, g, &mut grads);
                net.backward(&tl, -g, &mut grads);
            }
        }
        PreparedData::Rankings(rankings) => {
            for r in rankings {
                let traces: Vec<_> = r
                    .ordered()
                    .iter()
                    .map(|c| diff_traces(net, &c.winner, &c.loser))
                    .collect();
                let scores: Vec<f64> = traces.iter().map(|t| t.2).collect();
                let (loss, dscores) = pl_nll_with_grad(&scores);
                total += loss;
                for ((tw, tl, _), d) in traces.iter().zip(dscores) {
                    net.backward(tw, d / n, &mut grads);
                    net.backward(tl, -d / n, &mut grads);
                }
            }
        }
        PreparedData::Regression(examples) => {
            for e in examples {
                let (ta, tb, s) = diff_traces(net, &e.a, &e.b);
                total += mse(s, e.target);
                let g = mse_grad(s, e.target) / n;
                net.backward(&ta, g, &mut grads);
                net.backward(&tb, -g, &mut grads);
            }
        }
    }
    (total / n, grads)
}

/// Loss only, without gradients.
pub fn loss_value(net: &UtilityNet, prepared: &PreparedData) -> f64 {
    let n = prepared.num_comparisons().max(1) as f64;
    let total: f64 = match prepared {
        PreparedData::Pairs(pairs) => pairs
            .iter()
            .map(|p| bt_bce(net.eval(&p.winner) - net.eval(&p.loser), Outcome::Win))
            .sum(),
        PreparedData::Rankings(rankings) => rankings
            .iter()
            .map(|r| {
                let scores: Vec<f64> = r
                    .ordered()
                    .iter()
                    .map(|c| net.eval(&c.winner) - net.eval(&c.loser))
                    .collect();
                pl_nll(&scores)
            })
            .sum(),
        PreparedData::Regression(examples) => examples
            .iter()
            .map(|e| mse(net.eval(&e.a) - net.eval(&e.b), e.target))
            .sum(),
    };
    total / n
}

/// Result of [`fit`]: the trained network plus the loss before every step.
#[derive(Debug, Clone)]
pub struct Fitted {
    pub net: UtilityNet,
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

/// Seeds for the two independent random streams a fit uses.
fn fit_streams(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut init = ChaCha8Rng::seed_from_u64(seed);
    init.set_stream(0);
    let mut prep = ChaCha8Rng::seed_from_u64(seed);
    prep.set_stream(1);
    (init, prep)
}

/// Prepares the data once, then runs full-batch AdamW from a seeded
/// initialization. Deterministic in `(kind, train_set, cfg, seed)`.
pub fn fit(kind: LearnerKind, train_set: &[Comparison], cfg: &FitConfig, seed: u64) -> Result<Fitted> {
    let d = train_set.first().ok_or(Error::Empty("training set"))?.a.len();
    let (mut init_rng, mut prep_rng) = fit_streams(seed);
    let prepared = prepare(kind, train_set, cfg, &mut prep_rng)?;
    let net = UtilityNet::init_with(&[d, cfg.hidden, 1], cfg.init, &mut init_rng)?;
    fit_prepared(&prepared, net, &cfg.train)
}

/// Trains `net` on already-prepared data.
pub fn fit_prepared(prepared: &PreparedData, net: UtilityNet, cfg: &TrainConfig) -> Result<Fitted> {
    let (net, losses) = train(net, cfg, |n| loss_for(n, prepared))?;
    let final_loss = loss_value(&net, prepared);
    Ok(Fitted {
        net,
        losses,
        final_loss,
    })
}

/// The initialization [`fit`] would use for `seed`.
pub fn init_learner_net(d: usize, cfg: &FitConfig, seed: u64) -> Result<UtilityNet> {
    let (mut init_rng, _) = fit_streams(seed);
    UtilityNet::init_with(&[d, cfg.hidden, 1], cfg.init, &mut init_rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, DatasetConfig, LabelerKind};

    fn table_comparisons() -> Vec<Comparison> {
        let mk = |a: f64, pref, rt| Comparison {
            a: Item(vec![a, 0.1]),
            b: Item(vec![0.2, a]),
            preference: pref,
            strength: rt,
            stratum: 0,
        };
        vec![
            mk(0.1, Preference::A, 1.2),
            mk(0.2, Preference::A, 1.7),
            mk(0.3, Preference::B, 1.6),
            mk(0.4, Preference::B, 2.3),
        ]
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            parse_learners("bt,rr,rr-pool,rr-perm,rtreg,rtreg-perm").unwrap(),
            LearnerKind::ALL.to_vec()
        );
        assert!(parse_learners("bt,nope").is_err());
    }

    #[test]
    fn bt_prepares_normalized_pairs() {
        let cs = table_comparisons();
        let p = prepare(LearnerKind::Bt, &cs, &FitConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let PreparedData::Pairs(pairs) = p else { panic!() };
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[2].winner, cs[2].b);
        assert_eq!(pairs[0].winner, cs[0].a);
    }

    #[test]
    fn rr_builds_one_ascending_ranking_per_stratum() {
        let cs = table_comparisons();
        let p = prepare(LearnerKind::Rr, &cs, &FitConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let PreparedData::Rankings(r) = p else { panic!() };
        assert_eq!(r.len(), 1);
        let s: Vec<f64> = r[0].ordered().iter().map(|c| c.strength).collect();
        assert_eq!(s, vec![1.2, 1.6, 1.7, 2.3]);
    }

    #[test]
    fn every_learner_conserves_comparisons() {
        let data = build_dataset(&DatasetConfig::new(LabelerKind::Ddm, true), 5).unwrap();
        let cfg = FitConfig::default();
        for kind in LearnerKind::ALL {
            let p = prepare(kind, &data.train, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            assert_eq!(p.num_comparisons(), data.train.len(), "{kind}");
        }
    }

    #[test]
    fn zero_net_losses() {
        let data = build_dataset(&DatasetConfig::new(LabelerKind::Stochastic, false), 2).unwrap();
        let cfg = FitConfig::default();
        let net = UtilityNet::zeros(&[20, 8, 1]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bt = prepare(LearnerKind::Bt, &data.train, &cfg, &mut rng).unwrap();
        assert!((loss_for(&net, &bt).0 - std::f64::consts::LN_2).abs() < 1e-15);
        let reg = prepare(LearnerKind::RtReg, &data.train, &cfg, &mut rng).unwrap();
        let PreparedData::Regression(ex) = &reg else { panic!() };
        let expected = ex.iter().map(|e| e.target * e.target).sum::<f64>() / ex.len() as f64;
        assert!((loss_for(&net, &reg).0 - expected).abs() < 1e-12);
    }

    #[test]
    fn singleton_rankings_match_bt_loss() {
        let data = build_dataset(&DatasetConfig::new(LabelerKind::Deterministic, true), 3).unwrap();
        let cfg = FitConfig::default();
        let net = init_learner_net(20, &cfg, 4).unwrap();
        let bt = prepare(LearnerKind::Bt, &data.train, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut singletons = data.train.clone();
        for (i, c) in singletons.iter_mut().enumerate() {
            c.stratum = i;
        }
        let rr = prepare(LearnerKind::Rr, &singletons, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(matches!(&rr, PreparedData::Rankings(r) if r.iter().all(|x| x.len() == 1)));
        let (lb, gb) = loss_for(&net, &bt);
        let (lr, gr) = loss_for(&net, &rr);
        assert!((lb - lr).abs() < 1e-12);
        for (x, y) in gb.params().zip(gr.params()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let data = build_dataset(&DatasetConfig::new(LabelerKind::Deterministic, true), 8).unwrap();
        let cfg = FitConfig::default();
        let a = fit(LearnerKind::Bt, &data.train, &cfg, 11).unwrap();
        let b = fit(LearnerKind::Bt, &data.train, &cfg, 11).unwrap();
        assert_eq!(a.net, b.net);
        assert!(a.final_loss < a.losses[0]);
    }

    #[test]
    fn pool_chunks_respect_size() {
        let data = build_dataset(&DatasetConfig::new(LabelerKind::Deterministic, false), 8).unwrap();
        let cfg = FitConfig::default();
        let p = prepare(LearnerKind::RrPool, &data.train, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let PreparedData::Rankings(r) = p else { panic!() };
        assert_eq!(r.len(), 5);
        assert!(r.iter().all(|x| x.len() == 10));
    }
}
