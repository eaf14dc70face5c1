//! Evaluation metrics and the PDC degradation experiment.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::sigmoid;
use crate::net::UtilityNet;
use crate::synth::{Comparison, GroundTruth, Preference};

/// True and predicted absolute utility differences over the same pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDiffs {
    true_abs: Vec<f64>,
    pred_abs: Vec<f64>,
}

impl PairDiffs {
    pub fn new(true_abs: Vec<f64>, pred_abs: Vec<f64>) -> Result<Self> {
        if true_abs.len() != pred_abs.len() {
            return Err(Error::DimensionMismatch {
                expected: true_abs.len(),
                got: pred_abs.len(),
            });
        }
        if true_abs.len() < 2 {
            return Err(Error::TooFewValues(true_abs.len()));
        }
        if true_abs.iter().chain(&pred_abs).any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidConfig(
                "absolute differences must be finite and non-negative".into(),
            ));
        }
        Ok(Self { true_abs, pred_abs })
    }

    /// Takes absolute values of signed differences.
    pub fn from_signed(true_signed: &[f64], pred_signed: &[f64]) -> Result<Self> {
        Self::new(
            true_signed.iter().map(|d| d.abs()).collect(),
            pred_signed.iter().map(|d| d.abs()).collect(),
        )
    }

    pub fn true_abs(&self) -> &[f64] {
        &self.true_abs
    }

    pub fn pred_abs(&self) -> &[f64] {
        &self.pred_abs
    }
}

/// Sample Pearson correlation. Errors when either series is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::TooFewValues(xs.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("zero variance in correlation input"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson distance correlation: correlation of true and predicted absolute
/// utility differences.
pub fn pdc(diffs: &PairDiffs) -> Result<f64> {
    pearson(&diffs.true_abs, &diffs.pred_abs)
}

/// PDC of `net` against the ground truth over the pairs of `comparisons`.
pub fn pdc_for_net(truth: &GroundTruth, net: &UtilityNet, comparisons: &[Comparison]) -> Result<f64> {
    let mut true_abs = Vec::with_capacity(comparisons.len());
    let mut pred_abs = Vec::with_capacity(comparisons.len());
    for c in comparisons {
        true_abs.push((truth.utility(&c.a) - truth.utility(&c.b)).abs());
        pred_abs.push(net.strength_score(&c.a, &c.b)?.abs());
    }
    pdc(&PairDiffs::new(true_abs, pred_abs)?)
}

/// Mean agreement between `sign(u(a) - u(b))` and the label, with 0.5 credit
/// for an exact zero.
pub fn choice_accuracy(net: &UtilityNet, comparisons: &[Comparison]) -> Result<f64> {
    if comparisons.is_empty() {
        return Err(Error::Empty("test set"));
    }
    let mut hits = 0.0;
    for c in comparisons {
        let s = net.strength_score(&c.a, &c.b)?;
        hits += match (s.partial_cmp(&0.0), c.preference) {
            (Some(std::cmp::Ordering::Greater), Preference::A)
            | (Some(std::cmp::Ordering::Less), Preference::B) => 1.0,
            (Some(std::cmp::Ordering::Equal), _) => 0.5,
            _ => 0.0,
        };
    }
    Ok(hits / comparisons.len() as f64)
}

/// Mean l1 distance between predicted confidences and true choice likelihoods.
pub fn tce(pred_conf: &[f64], true_lik: &[f64]) -> Result<f64> {
    if pred_conf.len() != true_lik.len() {
        return Err(Error::DimensionMismatch {
            expected: pred_conf.len(),
            got: true_lik.len(),
        });
    }
    if pred_conf.is_empty() {
        return Err(Error::Empty("confidences"));
    }
    if pred_conf.iter().chain(true_lik).any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidConfig("probabilities must lie in [0, 1]".into()));
    }
    Ok(pred_conf
        .iter()
        .zip(true_lik)
        .map(|(p, q)| (p - q).abs())
        .sum::<f64>()
        / pred_conf.len() as f64)
}

/// Kendall's tau-b.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    let n = xs.len();
    if n < 2 {
        return Err(Error::TooFewValues(n));
    }
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut tied_x, mut tied_y) = (0i64, 0i64);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = xs[i].total_cmp(&xs[j]) as i64;
            let dy = ys[i].total_cmp(&ys[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => tied_x += 1,
                (_, 0) => tied_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let pairs_x = (concordant + discordant + tied_y) as f64;
    let pairs_y = (concordant + discordant + tied_x) as f64;
    if pairs_x == 0.0 || pairs_y == 0.0 {
        return Err(Error::UndefinedMetric("all values tied in a Kendall tau input"));
    }
    Ok((concordant - discordant) as f64 / (pairs_x * pairs_y).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeConfig {
    pub f_sign: f64,
    pub f_mag: f64,
}

impl DegradeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("f_sign", self.f_sign), ("f_mag", self.f_mag)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidConfig(format!("{name} must be in [0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

/// Destroys distance information in a fraction `f_mag` of signed differences by
/// shuffling their magnitudes among each other, then flips the sign of a
/// fraction `f_sign`. Fractions are rounded to whole counts.
pub fn degrade<R: Rng + ?Sized>(signed: &[f64], cfg: &DegradeConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = signed.len();
    let mut out = signed.to_vec();

    let n_mag = (cfg.f_mag * n as f64).round() as usize;
    let chosen = index::sample(rng, n, n_mag).into_vec();
    let mut magnitudes: Vec<f64> = chosen.iter().map(|&i| out[i].abs()).collect();
    magnitudes.shuffle(rng);
    for (&i, m) in chosen.iter().zip(magnitudes) {
        out[i] = if out[i].is_sign_negative() { -m } else { m };
    }

    let n_sign = (cfg.f_sign * n as f64).round() as usize;
    for i in index::sample(rng, n, n_sign) {
        out[i] = -out[i];
    }
    Ok(out)
}

/// Utility scaling applied to predictions in the degradation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    Raw,
    Affine,
}

impl Scaling {
    pub fn name(self) -> &'static str {
        match self {
            Self::Raw => "raw",
            Self::Affine => "affine",
        }
    }

    fn apply(self, u: f64) -> f64 {
        match self {
            Self::Raw => u,
            Self::Affine => 2.0 * u + 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub f_sign: f64,
    pub f_mag: f64,
    pub scaling: Scaling,
    pub pdc: f64,
    pub tce: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdcValidationConfig {
    pub items: usize,
    pub pairs: usize,
    /// Grid points per axis, spanning [0, 1] inclusive.
    pub grid_steps: usize,
    pub seed: u64,
}

impl Default for PdcValidationConfig {
    fn default() -> Self {
        Self {
            items: 1000,
            pairs: 50_000,
            grid_steps: 11,
            seed: 0,
        }
    }
}

/// Sweeps sign-flip and magnitude-shuffle fractions over perfect predictions of
/// standard-normal utilities, for raw and `2u + 5` scaled predictions.
/// TCE compares `sigmoid(predicted diff)` with `sigmoid(true diff)`.
pub fn pdc_validation(cfg: &PdcValidationConfig) -> Result<Vec<GridCell>> {
    if cfg.items < 2 || cfg.pairs < 2 || cfg.grid_steps < 2 {
        return Err(Error::InvalidConfig(
            "need at least 2 items, 2 pairs and 2 grid steps".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let utilities: Vec<f64> = (0..cfg.items).map(|_| rng.sample(StandardNormal)).collect();
    let pairs: Vec<(usize, usize)> = (0..cfg.pairs)
        .map(|_| (rng.random_range(0..cfg.items), rng.random_range(0..cfg.items)))
        .collect();
    let true_signed: Vec<f64> = pairs.iter().map(|&(i, j)| utilities[i] - utilities[j]).collect();
    let true_lik: Vec<f64> = true_signed.iter().map(|&d| sigmoid(d)).collect();

    let last = (cfg.grid_steps - 1) as f64;
    let steps = cfg.grid_steps as u64;
    let mut jobs = Vec::new();
    for (si, scaling) in [Scaling::Raw, Scaling::Affine].into_iter().enumerate() {
        for i in 0..cfg.grid_steps {
            for j in 0..cfg.grid_steps {
                jobs.push((scaling, si as u64, i, j));
            }
        }
    }

    // Magnitude shuffles are shared along each f_mag column so that cells differing
    // only in f_sign see the same shuffle; sign flips get their own stream per cell.
    let stream_rng = |stream: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        rng
    };
    jobs.into_par_iter()
        .map(|(scaling, si, i, j)| {
            let (f_sign, f_mag) = (i as f64 / last, j as f64 / last);
            let pred_signed: Vec<f64> = pairs
                .iter()
                .map(|&(a, b)| scaling.apply(utilities[a]) - scaling.apply(utilities[b]))
                .collect();
            let mag_stream = 1 + si * steps + j as u64;
            let sign_stream = 1 + 2 * steps + (si * steps + i as u64) * steps + j as u64;
            let shuffled = degrade(&pred_signed, &DegradeConfig { f_sign: 0.0, f_mag }, &mut stream_rng(mag_stream))?;
            let degraded = degrade(&shuffled, &DegradeConfig { f_sign, f_mag: 0.0 }, &mut stream_rng(sign_stream))?;
            let diffs = PairDiffs::from_signed(&true_signed, &degraded)?;
            let pred_conf: Vec<f64> = degraded.iter().map(|&d| sigmoid(d)).collect();
            Ok(GridCell {
                f_sign,
                f_mag,
                scaling,
                pdc: pdc(&diffs)?,
                tce: tce(&pred_conf, &true_lik)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Layer;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};
    use rand::Rng;

    #[test]
    fn pdc_perfect_and_affine() {
        let u: Vec<f64> = (0..50).map(|i| ((i * 37) % 23) as f64 * 0.3 - 2.0).collect();
        let true_signed: Vec<f64> = u.windows(2).map(|w| w[0] - w[1]).collect();
        let same = PairDiffs::from_signed(&true_signed, &true_signed).unwrap();
        assert!((pdc(&same).unwrap() - 1.0).abs() < 1e-12);
        let affine: Vec<f64> = u.windows(2).map(|w| (2.0 * w[0] + 5.0) - (2.0 * w[1] + 5.0)).collect();
        let scaled = PairDiffs::from_signed(&true_signed, &affine).unwrap();
        assert!((pdc(&scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pdc_zero_variance_is_undefined() {
        let d = PairDiffs::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.5, 0.5]).unwrap();
        assert!(matches!(pdc(&d), Err(Error::UndefinedMetric(_))));
        assert!(PairDiffs::new(vec![1.0], vec![1.0]).is_err());
        assert!(PairDiffs::new(vec![1.0, -1.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn pdc_shuffled_is_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let mut p = t.clone();
        p.shuffle(&mut rng);
        let v = pdc(&PairDiffs::new(t, p).unwrap()).unwrap();
        assert!(v.abs() < 0.05, "{v}");
    }

    #[test]
    fn pdc_negative_linear() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let p: Vec<f64> = t.iter().map(|x| 10.0 - 3.0 * x).collect();
        let v = pdc(&PairDiffs::new(t, p).unwrap()).unwrap();
        assert!((v + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degrade_identity_and_sign_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let signed = vec![0.3, -1.2, 2.5, -0.1, 0.9];
        let same = degrade(&signed, &DegradeConfig { f_sign: 0.0, f_mag: 0.0 }, &mut rng).unwrap();
        assert_eq!(same, signed);
        let flipped = degrade(&signed, &DegradeConfig { f_sign: 1.0, f_mag: 0.0 }, &mut rng).unwrap();
        assert!(flipped.iter().zip(&signed).all(|(a, b)| *a == -b));
        let d = PairDiffs::from_signed(&signed, &flipped).unwrap();
        assert_eq!(pdc(&d).unwrap(), pdc(&PairDiffs::from_signed(&signed, &signed).unwrap()).unwrap());
        assert!(degrade(&signed, &DegradeConfig { f_sign: 1.5, f_mag: 0.0 }, &mut rng).is_err());
    }

    #[test]
    fn degrade_full_shuffle_kills_pdc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let signed: Vec<f64> = (0..20_000).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for f_sign in [0.0, 0.5, 1.0] {
            let d = degrade(&signed, &DegradeConfig { f_sign, f_mag: 1.0 }, &mut rng).unwrap();
            let v = pdc(&PairDiffs::from_signed(&signed, &d).unwrap()).unwrap();
            assert!(v.abs() < 0.05, "f_sign {f_sign}: {v}");
        }
    }

    fn linear_net(w: f64) -> UtilityNet {
        UtilityNet::from_layers(vec![Layer {
            inputs: 1,
            outputs: 1,
            weights: vec![w],
            biases: vec![0.0],
        }])
        .unwrap()
    }

    fn labeled(n: usize) -> Vec<Comparison> {
        use crate::synth::Item;
        (0..n)
            .map(|i| {
                let a = (i as f64 * 0.37).sin();
                let b = (i as f64 * 0.91).cos();
                Comparison {
                    a: Item(vec![a]),
                    b: Item(vec![b]),
                    preference: if a >= b { Preference::A } else { Preference::B },
                    strength: 1.0,
                    stratum: 0,
                }
            })
            .collect()
    }

    #[test]
    fn accuracy_extremes() {
        let cs = labeled(100);
        assert_eq!(choice_accuracy(&linear_net(1.0), &cs).unwrap(), 1.0);
        assert_eq!(choice_accuracy(&linear_net(-1.0), &cs).unwrap(), 0.0);
        assert_eq!(choice_accuracy(&linear_net(0.0), &cs).unwrap(), 0.5);
        assert!(choice_accuracy(&linear_net(1.0), &[]).is_err());
    }

    #[test]
    fn tce_values() {
        assert_eq!(tce(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(tce(&[1.0, 1.0, 1.0], &[0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert!((tce(&[0.9, 0.4], &[0.7, 0.5]).unwrap() - 0.15).abs() < 1e-12);
        assert!(tce(&[0.9], &[0.7, 0.5]).is_err());
        assert!(tce(&[1.2], &[0.7]).is_err());
    }

    #[test]
    fn kendall_values() {
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap(), 1.0);
        assert_eq!(kendall_tau(&[1.0, 2.0, 3.0], &[6.0, 5.0, 4.0]).unwrap(), -1.0);
        assert!((kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(kendall_tau(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        // tau-b with ties: x = [1,1,2], y = [1,2,3]: C=2, D=0, tx=1
        let t = kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((t - 2.0 / (2.0f64 * 3.0).sqrt()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pdc_is_affine_invariant(
            pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0, -3.0f64..3.0), 3..60),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let true_signed: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
            let pred: Vec<f64> = pairs.iter().map(|p| p.2 - p.3).collect();
            let pred_scaled: Vec<f64> = pairs.iter().map(|p| (scale * p.2 + shift) - (scale * p.3 + shift)).collect();
            let base = PairDiffs::from_signed(&true_signed, &pred).unwrap();
            let scaled = PairDiffs::from_signed(&true_signed, &pred_scaled).unwrap();
            if let (Ok(a), Ok(b)) = (pdc(&base), pdc(&scaled)) {
                prop_assert!((a - b).abs() < 1e-9);
                prop_assert!((-1.0..=1.0).contains(&a));
            }
        }

        #[test]
        fn tce_is_symmetric(v in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40)) {
            let (p, q): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            prop_assert_eq!(tce(&p, &q).unwrap(), tce(&q, &p).unwrap());
        }
    }
}
