//! Stochastic ingredients: subgradient noise models, stepsize schedules,
//! noisy root-finding and finite-difference gradient estimators, and the
//! scalar sequence tools used by the error analysis.
//!
//! Every random draw is keyed by a counter-style substream, so a sample is a
//! pure function of `(seed, replica, agent, iteration)` and never depends on
//! evaluation order.

use crate::linalg;
use crate::rng::{substream, STREAM_ESTIMATOR, STREAM_NOISE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StochasticError {
    #[error("sigma must be finite and nonnegative, got {0}")]
    BadSigma(f64),
    #[error("radius must be finite and nonnegative, got {0}")]
    BadRadius(f64),
    #[error("bias decay must lie in [0, 1], got {0}")]
    BadDecay(f64),
    #[error("bias needs one finite vector per agent, all of the iterate dimension")]
    BiasShape,
    #[error("stepsize parameter {name} is out of range: {value}")]
    BadStepsizeParameter { name: &'static str, value: f64 },
    #[error("finite-difference spacing must be positive and finite")]
    BadSpacing,
    #[error("contraction factor must lie in [0, 1), got {0}")]
    BadContraction(f64),
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

/// Additive noise on subgradient evaluations.
///
/// `Biased` adds a deterministic per-agent drift `bias_i * decay^(k-1)` on
/// top of Gaussian noise; `decay = 1` keeps the drift persistent, `decay < 1`
/// lets it die out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    None,
    Gaussian {
        sigma: f64,
    },
    UniformBall {
        radius: f64,
    },
    Biased {
        bias: Vec<Vec<f64>>,
        decay: f64,
        sigma: f64,
    },
}

impl NoiseModel {
    /// Checks the model against the agent count and iterate dimension.
    pub fn validate(&self, num_agents: usize, dim: usize) -> Result<(), StochasticError> {
        match self {
            NoiseModel::None => Ok(()),
            NoiseModel::Gaussian { sigma } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    Err(StochasticError::BadSigma(*sigma))
                } else {
                    Ok(())
                }
            }
            NoiseModel::UniformBall { radius } => {
                if !radius.is_finite() || *radius < 0.0 {
                    Err(StochasticError::BadRadius(*radius))
                } else {
                    Ok(())
                }
            }
            NoiseModel::Biased { bias, decay, sigma } => {
                if !sigma.is_finite() || *sigma < 0.0 {
                    return Err(StochasticError::BadSigma(*sigma));
                }
                if !decay.is_finite() || !(0.0..=1.0).contains(decay) {
                    return Err(StochasticError::BadDecay(*decay));
                }
                if bias.len() != num_agents
                    || bias
                        .iter()
                        .any(|b| b.len() != dim || b.iter().any(|v| !v.is_finite()))
                {
                    return Err(StochasticError::BiasShape);
                }
                Ok(())
            }
        }
    }

    /// True when every sample is exactly zero.
    pub fn is_none(&self) -> bool {
        matches!(self, NoiseModel::None)
    }

    /// Draws the noise for one subgradient evaluation from an already keyed
    /// generator. `k` is the 1-based transition index (it sets the bias
    /// decay); `agent` selects the bias vector.
    pub fn sample_with(&self, rng: &mut ChaCha8Rng, k: u64, agent: usize, out: &mut [f64]) {
        match self {
            NoiseModel::None => out.iter_mut().for_each(|o| *o = 0.0),
            NoiseModel::Gaussian { sigma } => {
                for o in out.iter_mut() {
                    *o = sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
            NoiseModel::UniformBall { radius } => {
                for o in out.iter_mut() {
                    *o = rng.sample(StandardNormal);
                }
                let norm = linalg::norm(out);
                if norm == 0.0 {
                    return;
                }
                let r = radius * rng.random::<f64>().powf(1.0 / out.len() as f64) / norm;
                out.iter_mut().for_each(|o| *o *= r);
            }
            NoiseModel::Biased { bias, decay, sigma } => {
                let drift = decay.powf((k - 1) as f64);
                let b = &bias[agent];
                for (o, &bd) in out.iter_mut().zip(b) {
                    *o = bd * drift + sigma * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
    }

    /// Writes the noise on agent `agent`'s subgradient at transition `k` of
    /// `replica` into `out`. Pure in all four indices.
    pub fn sample_into(&self, seed: u64, replica: u64, agent: usize, k: u64, out: &mut [f64]) {
        if self.is_none() {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let mut rng = substream(&[seed, STREAM_NOISE, replica, agent as u64, k]);
        self.sample_with(&mut rng, k, agent, out);
    }

    pub fn sample(&self, seed: u64, replica: u64, agent: usize, k: u64, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.sample_into(seed, replica, agent, k, &mut out);
        out
    }

    /// Uniform-in-`k` bound on the root mean square norm `sqrt(E ||e||^2)`
    /// for the given agent.
    pub fn rms_bound(&self, agent: usize, dim: usize) -> f64 {
        match self {
            NoiseModel::None => 0.0,
            NoiseModel::Gaussian { sigma } => sigma * (dim as f64).sqrt(),
            NoiseModel::UniformBall { radius } => *radius,
            NoiseModel::Biased { bias, sigma, .. } => {
                (linalg::norm_sq(&bias[agent]) + dim as f64 * sigma * sigma).sqrt()
            }
        }
    }

    /// `limsup_k ||E e_k||` for the given agent: the persistent part of the
    /// mean noise. Zero for all unbiased models and for decaying bias.
    pub fn mean_norm_limsup(&self, agent: usize) -> f64 {
        match self {
            NoiseModel::Biased { bias, decay, .. } if *decay >= 1.0 => linalg::norm(&bias[agent]),
            _ => 0.0,
        }
    }
}

/// Stepsize sequence `alpha_k`, indexed from `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepsizeSchedule {
    /// `alpha_k = alpha`.
    Constant { alpha: f64 },
    /// `alpha_k = a / (k + b)`.
    Harmonic { a: f64, b: f64 },
    /// `alpha_k = a / (k + b)^p` with `p` in (1/2, 1].
    Power { a: f64, b: f64, p: f64 },
}

impl StepsizeSchedule {
    pub fn validate(&self) -> Result<(), StochasticError> {
        let check = |name: &'static str, value: f64, ok: bool| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(StochasticError::BadStepsizeParameter { name, value })
            }
        };
        match *self {
            StepsizeSchedule::Constant { alpha } => check("alpha", alpha, alpha >= 0.0),
            StepsizeSchedule::Harmonic { a, b } => {
                check("a", a, a > 0.0)?;
                check("b", b, b >= 0.0)
            }
            StepsizeSchedule::Power { a, b, p } => {
                check("a", a, a > 0.0)?;
                check("b", b, b >= 0.0)?;
                check("p", p, p > 0.5 && p <= 1.0)
            }
        }
    }

    /// `alpha_k` for `k >= 1`.
    pub fn value(&self, k: u64) -> f64 {
        assert!(k >= 1, "stepsizes are indexed from 1");
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha,
            StepsizeSchedule::Harmonic { a, b } => a / (k as f64 + b),
            StepsizeSchedule::Power { a, b, p } => a / (k as f64 + b).powf(p),
        }
    }

    /// `lim_k alpha_k`.
    pub fn limit(&self) -> f64 {
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha,
            _ => 0.0,
        }
    }

    /// Whether `sum_k alpha_k` diverges.
    pub fn sums_diverge(&self) -> bool {
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha > 0.0,
            StepsizeSchedule::Harmonic { .. } | StepsizeSchedule::Power { .. } => true,
        }
    }

    /// Whether `sum_k alpha_k^2` converges.
    pub fn squares_summable(&self) -> bool {
        match *self {
            StepsizeSchedule::Constant { alpha } => alpha == 0.0,
            StepsizeSchedule::Harmonic { .. } => true,
            StepsizeSchedule::Power { .. } => true,
        }
    }
}

/// Noisy fixed-gain root finder: wraps a deterministic map with keyed noise
/// so `estimate(x, k)` returns `g(x) + e_k`.
pub struct RobbinsMonroEstimator<G> {
    gradient: G,
    noise: NoiseModel,
    seed: u64,
}

impl<G: Fn(&[f64]) -> Vec<f64>> RobbinsMonroEstimator<G> {
    pub fn new(gradient: G, noise: NoiseModel, seed: u64) -> Self {
        Self {
            gradient,
            noise,
            seed,
        }
    }

    /// One noisy observation of the map at `x`, keyed by the query index.
    pub fn estimate(&self, x: &[f64], k: u64) -> Vec<f64> {
        let mut g = (self.gradient)(x);
        if !self.noise.is_none() {
            let mut e = vec![0.0; g.len()];
            let mut rng = substream(&[self.seed, STREAM_ESTIMATOR, k]);
            self.noise.sample_with(&mut rng, k, 0, &mut e);
            for (gd, ed) in g.iter_mut().zip(&e) {
                *gd += ed;
            }
        }
        g
    }
}

/// Finite-difference spacing for value-based gradient estimation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpacingSchedule {
    Constant {
        gap: f64,
    },
    /// `gap_k = scale / k^power`.
    Decaying {
        scale: f64,
        power: f64,
    },
}

impl SpacingSchedule {
    pub fn validate(&self) -> Result<(), StochasticError> {
        let ok = match *self {
            SpacingSchedule::Constant { gap } => gap.is_finite() && gap > 0.0,
            SpacingSchedule::Decaying { scale, power } => {
                scale.is_finite() && scale > 0.0 && power.is_finite() && power >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(StochasticError::BadSpacing)
        }
    }

    pub fn gap(&self, k: u64) -> f64 {
        assert!(k >= 1, "spacings are indexed from 1");
        match *self {
            SpacingSchedule::Constant { gap } => gap,
            SpacingSchedule::Decaying { scale, power } => scale / (k as f64).powf(power),
        }
    }
}

/// Value-based gradient estimator: forward differences of noisy objective
/// observations. Each coordinate uses two independent observations, so the
/// estimate carries a deterministic bias of the order of the spacing on top
/// of the observation noise.
pub struct KieferWolfowitzEstimator<V> {
    value: V,
    noise: NoiseModel,
    spacing: SpacingSchedule,
    seed: u64,
}

impl<V: Fn(&[f64]) -> f64> KieferWolfowitzEstimator<V> {
    pub fn new(
        value: V,
        noise: NoiseModel,
        spacing: SpacingSchedule,
        seed: u64,
    ) -> Result<Self, StochasticError> {
        spacing.validate()?;
        noise.validate(1, 1)?;
        Ok(Self {
            value,
            noise,
            spacing,
            seed,
        })
    }

    /// Gradient estimate at `x` from `2 * dim` noisy value observations,
    /// keyed by the query index and coordinate.
    pub fn estimate(&self, x: &[f64], k: u64) -> Vec<f64> {
        let gap = self.spacing.gap(k);
        let mut shifted = x.to_vec();
        let mut out = vec![0.0; x.len()];
        let mut e = [0.0];
        let mut observe = |point: &[f64], d: u64, side: u64| -> f64 {
            let clean = (self.value)(point);
            if self.noise.is_none() {
                return clean;
            }
            let mut rng = substream(&[self.seed, STREAM_ESTIMATOR, k, d, side]);
            self.noise.sample_with(&mut rng, k, 0, &mut e);
            clean + e[0]
        };
        for d in 0..x.len() {
            let base = observe(x, d as u64, 0);
            shifted[d] = x[d] + gap;
            let ahead = observe(&shifted, d as u64, 1);
            shifted[d] = x[d];
            out[d] = (ahead - base) / gap;
        }
        out
    }
}

/// Final state of a geometrically damped accumulation
/// `s_k = beta * s_(k-1) + gamma_k`, `s_0 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvolutionReport {
    /// `s_horizon`.
    pub final_value: f64,
    pub horizon: u64,
    /// `sum_(k<=horizon) s_k`.
    pub partial_sum: f64,
    /// `sum_(k<=horizon) gamma_k`.
    pub gamma_sum: f64,
    /// `c / (1 - beta)` when the caller knows `gamma_k -> c`.
    pub limit_prediction: Option<f64>,
}

/// Runs the damped accumulation `s_k = beta * s_(k-1) + gamma_k` to the
/// horizon. When `gamma_limit` is supplied the report carries the predicted
/// limit `gamma_limit / (1 - beta)`; the sequence converges to it whenever
/// the kicks converge.
pub fn convolution_sequence(
    beta: f64,
    gamma: impl Fn(u64) -> f64,
    gamma_limit: Option<f64>,
    horizon: u64,
) -> Result<ConvolutionReport, StochasticError> {
    if !beta.is_finite() || !(0.0..1.0).contains(&beta) {
        return Err(StochasticError::BadContraction(beta));
    }
    if horizon == 0 {
        return Err(StochasticError::ZeroHorizon);
    }
    let mut s = 0.0;
    let mut partial_sum = 0.0;
    let mut gamma_sum = 0.0;
    for k in 1..=horizon {
        let g = gamma(k);
        s = beta * s + g;
        partial_sum += s;
        gamma_sum += g;
    }
    Ok(ConvolutionReport {
        final_value: s,
        horizon,
        partial_sum,
        gamma_sum,
        limit_prediction: gamma_limit.map(|c| c / (1.0 - beta)),
    })
}

/// Weighted running ratios `R_t = sum_(k<=t) w_k v_k / sum_(k<=t) w_k`.
/// With diverging weight sums, `v_k -> v` forces `R_t -> v`.
pub fn weighted_ratio_sequence(
    weights: impl Fn(u64) -> f64,
    values: impl Fn(u64) -> f64,
    horizon: u64,
) -> Result<Vec<f64>, StochasticError> {
    if horizon == 0 {
        return Err(StochasticError::ZeroHorizon);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    let mut out = Vec::with_capacity(horizon as usize);
    for k in 1..=horizon {
        let w = weights(k);
        debug_assert!(w >= 0.0, "ratio weights must be nonnegative");
        num += w * values(k);
        den += w;
        out.push(if den > 0.0 { num / den } else { 0.0 });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gaussian_norm_squared_matches_its_chi_square_mean() {
        let model = NoiseModel::Gaussian { sigma: 1.0 };
        let mut total = 0.0;
        let mut buf = [0.0; 2];
        for k in 1..=100_000u64 {
            model.sample_into(11, 0, 0, k, &mut buf);
            total += buf[0] * buf[0] + buf[1] * buf[1];
        }
        let mean = total / 100_000.0;
        assert!((mean - 2.0).abs() < 0.05, "mean = {mean}");
    }

    #[test]
    fn samples_are_pure_in_their_indices() {
        let model = NoiseModel::Gaussian { sigma: 0.5 };
        let a = model.sample(3, 1, 2, 7, 4);
        let b = model.sample(3, 1, 2, 7, 4);
        assert_eq!(a, b);
        assert_ne!(a, model.sample(3, 2, 2, 7, 4));
        assert_ne!(a, model.sample(3, 1, 0, 7, 4));
        assert_ne!(a, model.sample(3, 1, 2, 8, 4));
        assert_ne!(a, model.sample(4, 1, 2, 7, 4));
    }

    #[test]
    fn rms_bounds_dominate_empirical_root_mean_squares() {
        let cases: Vec<(NoiseModel, usize)> = vec![
            (NoiseModel::Gaussian { sigma: 0.7 }, 3),
            (NoiseModel::UniformBall { radius: 1.5 }, 2),
            (
                NoiseModel::Biased {
                    bias: vec![vec![0.3, 0.4]],
                    decay: 1.0,
                    sigma: 0.2,
                },
                2,
            ),
        ];
        for (model, dim) in cases {
            model.validate(1, dim).unwrap();
            let bound = model.rms_bound(0, dim);
            let mut total = 0.0;
            let mut buf = vec![0.0; dim];
            let draws = 20_000u64;
            for k in 1..=draws {
                model.sample_into(5, 0, 0, k, &mut buf);
                total += crate::linalg::norm_sq(&buf);
            }
            let rms = (total / draws as f64).sqrt();
            assert!(rms <= bound * 1.02, "{model:?}: rms {rms} vs bound {bound}");
            assert!(rms >= bound * 0.7, "{model:?}: bound looks slack");
        }
    }

    #[test]
    fn uniform_ball_noise_never_leaves_the_ball() {
        let model = NoiseModel::UniformBall { radius: 0.8 };
        let mut buf = [0.0; 3];
        for k in 1..=2_000u64 {
            model.sample_into(9, 0, 0, k, &mut buf);
            assert!(crate::linalg::norm(&buf) <= 0.8 + 1e-12);
        }
    }

    #[test]
    fn persistent_bias_survives_in_the_mean_and_decaying_bias_does_not() {
        let persistent = NoiseModel::Biased {
            bias: vec![vec![0.3, 0.4]],
            decay: 1.0,
            sigma: 0.1,
        };
        assert!((persistent.mean_norm_limsup(0) - 0.5).abs() < 1e-15);
        let fading = NoiseModel::Biased {
            bias: vec![vec![0.3, 0.4]],
            decay: 0.5,
            sigma: 0.1,
        };
        assert_eq!(fading.mean_norm_limsup(0), 0.0);
        assert_eq!(NoiseModel::Gaussian { sigma: 2.0 }.mean_norm_limsup(0), 0.0);
    }

    #[test]
    fn stepsize_values_match_their_formulas() {
        let harmonic = StepsizeSchedule::Harmonic { a: 2.0, b: 3.0 };
        assert_eq!(harmonic.value(1), 0.5);
        assert_eq!(harmonic.value(7), 0.2);
        let power = StepsizeSchedule::Power {
            a: 1.0,
            b: 0.0,
            p: 0.75,
        };
        assert!((power.value(16) - 0.125).abs() < 1e-15);
        let constant = StepsizeSchedule::Constant { alpha: 0.1 };
        assert_eq!(constant.value(1_000_000), 0.1);
    }

    #[test]
    fn stepsize_flags_separate_the_regimes() {
        let constant = StepsizeSchedule::Constant { alpha: 0.1 };
        assert!(constant.sums_diverge());
        assert!(!constant.squares_summable());
        assert_eq!(constant.limit(), 0.1);

        let zero = StepsizeSchedule::Constant { alpha: 0.0 };
        assert!(!zero.sums_diverge());
        assert!(zero.squares_summable());

        let harmonic = StepsizeSchedule::Harmonic { a: 1.0, b: 0.0 };
        assert!(harmonic.sums_diverge());
        assert!(harmonic.squares_summable());
        assert_eq!(harmonic.limit(), 0.0);
    }

    #[test]
    fn stepsize_validation_rejects_degenerate_parameters() {
        assert!(StepsizeSchedule::Constant { alpha: -0.1 }
            .validate()
            .is_err());
        assert!(StepsizeSchedule::Harmonic { a: 0.0, b: 1.0 }
            .validate()
            .is_err());
        assert!(StepsizeSchedule::Power {
            a: 1.0,
            b: 0.0,
            p: 0.5
        }
        .validate()
        .is_err());
        assert!(StepsizeSchedule::Power {
            a: 1.0,
            b: 0.0,
            p: 1.1
        }
        .validate()
        .is_err());
        assert!(StepsizeSchedule::Power {
            a: 1.0,
            b: 0.0,
            p: 0.75
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn noisy_root_finding_converges_with_diminishing_gains() {
        let estimator = RobbinsMonroEstimator::new(
            |x: &[f64]| vec![x[0]],
            NoiseModel::Gaussian { sigma: 1.0 },
            7,
        );
        let mut x = vec![2.0];
        for k in 1..=10_000u64 {
            let g = estimator.estimate(&x, k);
            x[0] -= g[0] / k as f64;
        }
        assert!(x[0].abs() < 0.05, "x = {}", x[0]);
    }

    #[test]
    fn noisy_root_estimates_are_reproducible() {
        let make = || {
            RobbinsMonroEstimator::new(
                |x: &[f64]| vec![x[0] * 2.0],
                NoiseModel::Gaussian { sigma: 0.3 },
                21,
            )
        };
        let a = make().estimate(&[1.5], 4);
        let b = make().estimate(&[1.5], 4);
        assert_eq!(a, b);
        assert_ne!(a, make().estimate(&[1.5], 5));
    }

    #[test]
    fn forward_difference_bias_tracks_the_spacing() {
        // For q(x) = x^2 the forward difference at x is exactly 2x + gap.
        let clean = |gap: f64| {
            let est = KieferWolfowitzEstimator::new(
                |x: &[f64]| x[0] * x[0],
                NoiseModel::None,
                SpacingSchedule::Constant { gap },
                0,
            )
            .unwrap();
            est.estimate(&[1.0], 1)[0]
        };
        assert!((clean(0.01) - 2.01).abs() < 1e-9);
        let coarse_bias = clean(0.02) - 2.0;
        let fine_bias = clean(0.01) - 2.0;
        assert!((coarse_bias / fine_bias - 2.0).abs() < 1e-4);
    }

    #[test]
    fn decaying_spacing_follows_its_schedule() {
        let spacing = SpacingSchedule::Decaying {
            scale: 0.1,
            power: 0.5,
        };
        assert!((spacing.gap(4) - 0.05).abs() < 1e-15);
        assert!((spacing.gap(1) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn degenerate_spacing_is_rejected_at_construction() {
        let err = KieferWolfowitzEstimator::new(
            |x: &[f64]| x[0],
            NoiseModel::None,
            SpacingSchedule::Constant { gap: 0.0 },
            0,
        );
        assert!(matches!(err, Err(StochasticError::BadSpacing)));
    }

    #[test]
    fn noisy_difference_estimates_average_to_the_biased_gradient() {
        let est = KieferWolfowitzEstimator::new(
            |x: &[f64]| x[0] * x[0],
            NoiseModel::Gaussian { sigma: 0.05 },
            SpacingSchedule::Constant { gap: 0.1 },
            13,
        )
        .unwrap();
        let mut mean = 0.0;
        let reps = 20_000u64;
        for k in 1..=reps {
            mean += est.estimate(&[1.0], k)[0];
        }
        mean /= reps as f64;
        // Expected value is 2x + gap = 2.1; observation noise of scale
        // sigma * sqrt(2) / gap averages out over the replications.
        assert!((mean - 2.1).abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn damped_accumulation_reaches_the_predicted_limit() {
        let report = convolution_sequence(0.5, |_| 1.0, Some(1.0), 200).unwrap();
        assert!((report.final_value - 2.0).abs() < 1e-10);
        assert_eq!(report.limit_prediction, Some(2.0));
        assert!(report.partial_sum <= report.gamma_sum / 0.5 + 1e-12);
    }

    #[test]
    fn damped_accumulation_dies_out_with_vanishing_kicks() {
        let report = convolution_sequence(0.5, |k| 1.0 / k as f64, Some(0.0), 1000).unwrap();
        assert!(report.final_value < 0.01, "s = {}", report.final_value);
        assert_eq!(report.limit_prediction, Some(0.0));
    }

    #[test]
    fn damped_accumulation_rejects_bad_factors() {
        assert!(matches!(
            convolution_sequence(1.0, |_| 1.0, None, 10),
            Err(StochasticError::BadContraction(_))
        ));
        assert!(matches!(
            convolution_sequence(0.5, |_| 1.0, None, 0),
            Err(StochasticError::ZeroHorizon)
        ));
    }

    #[test]
    fn weighted_ratios_converge_with_the_values() {
        // Cesaro averaging of values 3 + 1/k: the gap at horizon t is
        // H_t / t, about 9.8e-4 at t = 10^4.
        let ratios = weighted_ratio_sequence(|_| 1.0, |k| 3.0 + 1.0 / k as f64, 10_000).unwrap();
        let last = *ratios.last().unwrap();
        assert!((last - 3.0).abs() < 0.01, "ratio = {last}");
    }

    #[test]
    fn weighted_ratios_of_bounded_values_stay_bounded() {
        let ratios =
            weighted_ratio_sequence(|_| 1.0, |k| if k % 2 == 0 { 1.0 } else { -1.0 }, 5_000)
                .unwrap();
        for r in ratios {
            assert!(r.abs() <= 1.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn damped_accumulations_never_exceed_their_geometric_cap(
            beta in 0.0f64..0.95,
            cap in 0.1f64..5.0,
            horizon in 1u64..300,
        ) {
            // Kicks bounded by `cap` keep the sequence below cap / (1 - beta).
            let report = convolution_sequence(
                beta,
                |k| cap * (0.3 + 0.7 * ((k * 2_654_435_761) % 1000) as f64 / 1000.0),
                None,
                horizon,
            ).unwrap();
            prop_assert!(report.final_value <= cap / (1.0 - beta) + 1e-9);
            prop_assert!(report.final_value >= 0.0);
        }

        #[test]
        fn rms_bounds_scale_monotonically_with_sigma(
            sigma in 0.0f64..3.0,
            extra in 0.01f64..1.0,
            dim in 1usize..5,
        ) {
            let small = NoiseModel::Gaussian { sigma };
            let large = NoiseModel::Gaussian { sigma: sigma + extra };
            prop_assert!(small.rms_bound(0, dim) < large.rms_bound(0, dim));
        }
    }
}
