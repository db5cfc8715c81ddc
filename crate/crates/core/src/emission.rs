//! Gaussian sensor model conditioned on turn status, with the
//! Normal–Inverse-Wishart conjugate machinery used by the Gibbs sampler.
//!
//! Each speaker contributes three channels per slot: log audio variance,
//! log body-motion variance and the infrared facing count. Given speaker
//! `c`'s status `s`, the channels are jointly Gaussian with parameters
//! `(μ_{c,s}, Σ_{c,s})`. Missing channels are marginalized out.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3, Vector3};
use rand::Rng as _;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mjp::StateVector;
use crate::rng::{self, Rng};

pub const CHANNELS: usize = 3;

/// Offset used when log-transforming raw variances.
pub const LOG_EPSILON: f64 = 1e-8;

pub fn log_feature(variance: f64) -> f64 {
    (LOG_EPSILON + variance).ln()
}

/// One speaker's channels for one slot; `None` marks a missing value.
pub type Channels = [Option<f64>; CHANNELS];

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub speakers: Vec<Channels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    pub frames: Vec<ObservationFrame>,
    pub dt: f64,
    pub speaker_count: usize,
}

impl ObservationSeries {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::InsufficientData("observation series is empty".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        for (n, f) in self.frames.iter().enumerate() {
            if f.speakers.len() != self.speaker_count {
                return Err(Error::DimensionMismatch {
                    expected: self.speaker_count,
                    actual: f.speakers.len(),
                });
            }
            if f.speakers.iter().flatten().flatten().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("non-finite observation in slot {n}")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Fully observed channel vectors of `speaker`, with their slot index.
    pub fn complete_vectors(&self, speaker: usize) -> impl Iterator<Item = (usize, Vector3<f64>)> + '_ {
        self.frames.iter().enumerate().filter_map(move |(n, f)| {
            let ch = f.speakers[speaker];
            match ch {
                [Some(a), Some(b), Some(c)] => Some((n, Vector3::new(a, b, c))),
                _ => None,
            }
        })
    }
}

/// Multivariate normal over the three channels, with a cached Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: Vector3<f64>,
    cov: Matrix3<f64>,
    chol: Matrix3<f64>,
    log_det: f64,
}

impl Gaussian {
    pub fn new(mean: Vector3<f64>, cov: Matrix3<f64>) -> Result<Self> {
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite Gaussian parameters".into()));
        }
        if (cov - cov.transpose()).amax() > 1e-9 * (1.0 + cov.amax()) {
            return Err(Error::Parameter("covariance is not symmetric".into()));
        }
        let chol = Cholesky::new(cov)
            .ok_or_else(|| Error::Parameter("covariance is not positive definite".into()))?
            .l();
        let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return Err(Error::Parameter("covariance is singular".into()));
        }
        Ok(Gaussian {
            mean,
            cov,
            chol,
            log_det,
        })
    }

    pub fn mean(&self) -> &Vector3<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix3<f64> {
        &self.cov
    }

    pub fn logpdf(&self, y: &Vector3<f64>) -> f64 {
        let diff = y - self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (CHANNELS as f64 * (2.0 * std::f64::consts::PI).ln() + self.log_det + z.norm_squared())
    }

    /// Log density of the observed sub-vector; zero if nothing is observed.
    pub fn logpdf_partial(&self, y: &Channels) -> f64 {
        let present: Vec<usize> = (0..CHANNELS).filter(|&i| y[i].is_some()).collect();
        match present.len() {
            0 => 0.0,
            CHANNELS => self.logpdf(&Vector3::new(
                y[0].unwrap_or_default(),
                y[1].unwrap_or_default(),
                y[2].unwrap_or_default(),
            )),
            k => {
                let sub_cov = DMatrix::from_fn(k, k, |i, j| self.cov[(present[i], present[j])]);
                let diff = DVector::from_fn(k, |i, _| {
                    y[present[i]].unwrap_or_default() - self.mean[present[i]]
                });
                // a principal sub-block of a PD matrix is PD
                let chol = Cholesky::new(sub_cov).expect("sub-block of a PD matrix");
                let l = chol.l();
                let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let z = l.solve_lower_triangular(&diff).expect("positive diagonal");
                -0.5 * (k as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + z.norm_squared())
            }
        }
    }

    pub fn sample(&self, rng: &mut Rng) -> Vector3<f64> {
        let z = Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        self.mean + self.chol * z
    }
}

/// Per speaker, the Gaussians for status 0 (silent) and 1 (speaking).
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionParams {
    pub speakers: Vec<[Gaussian; 2]>,
}

impl EmissionParams {
    pub fn speaker_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn get(&self, speaker: usize, speaking: bool) -> &Gaussian {
        &self.speakers[speaker][usize::from(speaking)]
    }

    /// Identical speakers with isotropic noise `sigma`: silent at the
    /// origin, speaking shifted by `separation·sigma` on audio and a third
    /// of that on motion and facing.
    pub fn separated(speakers: usize, separation: f64, sigma: f64) -> Result<Self> {
        let cov = Matrix3::identity() * sigma * sigma;
        let shift = Vector3::new(separation, separation / 3.0, separation / 3.0) * sigma;
        let pair = [Gaussian::new(Vector3::zeros(), cov)?, Gaussian::new(shift, cov)?];
        Ok(Self {
            speakers: vec![pair; speakers],
        })
    }
}

/// Log-likelihood of one frame given the joint turn state.
pub fn frame_loglik(y: &ObservationFrame, x: &StateVector, params: &EmissionParams) -> Result<f64> {
    let c = params.speaker_count();
    if y.speakers.len() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            actual: y.speakers.len(),
        });
    }
    if x.speaker_count() != c {
        return Err(Error::DimensionMismatch {
            expected: c,
            actual: x.speaker_count(),
        });
    }
    Ok((0..c)
        .map(|s| params.get(s, x.is_speaking(s)).logpdf_partial(&y.speakers[s]))
        .sum())
}

pub fn sample_observations(
    statuses: &[Vec<bool>],
    params: &EmissionParams,
    dt: f64,
    seed: u64,
) -> Result<ObservationSeries> {
    sample_observations_with(statuses, params, dt, &mut rng::seeded(seed))
}

/// Draw one frame per slot from the status-conditional Gaussians.
/// `statuses[n][c]` is the vocal status of speaker `c` in slot `n`.
pub fn sample_observations_with(
    statuses: &[Vec<bool>],
    params: &EmissionParams,
    dt: f64,
    rng: &mut Rng,
) -> Result<ObservationSeries> {
    let c = params.speaker_count();
    let frames = statuses
        .iter()
        .map(|slot| {
            if slot.len() != c {
                return Err(Error::DimensionMismatch {
                    expected: c,
                    actual: slot.len(),
                });
            }
            Ok(ObservationFrame {
                speakers: slot
                    .iter()
                    .enumerate()
                    .map(|(s, &on)| {
                        let v = params.get(s, on).sample(rng);
                        [Some(v[0]), Some(v[1]), Some(v[2])]
                    })
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(ObservationSeries {
        frames,
        dt,
        speaker_count: c,
    })
}

/// Normal–Inverse-Wishart hyper-parameters `(κ, ν, μ, Ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NiwPrior {
    pub kappa: f64,
    pub nu: f64,
    pub mean: Vector3<f64>,
    pub scale: Matrix3<f64>,
}

impl NiwPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::Parameter(format!("κ must be positive, got {}", self.kappa)));
        }
        if !(self.nu > CHANNELS as f64 + 1.0) {
            return Err(Error::Parameter(format!(
                "ν must exceed {}, got {}",
                CHANNELS + 1,
                self.nu
            )));
        }
        if Cholesky::new(self.scale).is_none() {
            return Err(Error::Parameter("Ψ is not positive definite".into()));
        }
        Ok(())
    }

    /// `E[Σ] = Ψ / (ν − d − 1)`.
    pub fn expected_cov(&self) -> Matrix3<f64> {
        self.scale / (self.nu - CHANNELS as f64 - 1.0)
    }
}

/// Conjugate update with a batch of fully observed vectors.
pub fn niw_update(prior: &NiwPrior, data: &[Vector3<f64>]) -> NiwPrior {
    let n = data.len();
    if n == 0 {
        return prior.clone();
    }
    let nf = n as f64;
    let ybar = data.iter().sum::<Vector3<f64>>() / nf;
    let scatter = data.iter().fold(Matrix3::zeros(), |acc, y| {
        let d = y - ybar;
        acc + d * d.transpose()
    });
    let kappa = prior.kappa + nf;
    let dev = ybar - prior.mean;
    let scale = prior.scale + scatter + dev * dev.transpose() * (prior.kappa * nf / kappa);
    NiwPrior {
        kappa,
        nu: prior.nu + nf,
        mean: (prior.mean * prior.kappa + ybar * nf) / kappa,
        scale: (scale + scale.transpose()) * 0.5,
    }
}

/// `Σ ~ W⁻¹(ν, Ψ)` by the Bartlett decomposition of the precision.
pub fn sample_inverse_wishart(nu: f64, scale: &Matrix3<f64>, rng: &mut Rng) -> Result<Matrix3<f64>> {
    let scale_inv = scale
        .try_inverse()
        .ok_or_else(|| Error::Parameter("Ψ is singular".into()))?;
    let l = Cholesky::new((scale_inv + scale_inv.transpose()) * 0.5)
        .ok_or_else(|| Error::Parameter("Ψ is not positive definite".into()))?
        .l();
    let mut a = Matrix3::zeros();
    for i in 0..CHANNELS {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|e| Error::Parameter(format!("degrees of freedom: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample::<f64, _>(StandardNormal);
        }
    }
    let la = l * a;
    let precision = la * la.transpose();
    let cov = precision
        .try_inverse()
        .ok_or_else(|| Error::Numerical("sampled precision is singular".into()))?;
    Ok((cov + cov.transpose()) * 0.5)
}

/// Draw `(μ, Σ)` from a Normal–Inverse-Wishart.
pub fn sample_niw(post: &NiwPrior, rng: &mut Rng) -> Result<Gaussian> {
    let cov = sample_inverse_wishart(post.nu, &post.scale, rng)?;
    let mean_dist = Gaussian::new(post.mean, cov / post.kappa)?;
    let mean = mean_dist.sample(rng);
    Gaussian::new(mean, cov)
}

pub fn sample_emission_params(posteriors: &[[NiwPrior; 2]], seed: u64) -> Result<EmissionParams> {
    sample_emission_params_with(posteriors, &mut rng::seeded(seed))
}

pub fn sample_emission_params_with(
    posteriors: &[[NiwPrior; 2]],
    rng: &mut Rng,
) -> Result<EmissionParams> {
    let speakers = posteriors
        .iter()
        .map(|[p0, p1]| Ok([sample_niw(p0, rng)?, sample_niw(p1, rng)?]))
        .collect::<Result<_>>()?;
    Ok(EmissionParams { speakers })
}

/// Gamma prior on each event's base rate, expressed as a prior mean and a
/// pseudo-count (equivalent number of observed events).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatePrior {
    pub mean: Vec<f64>,
    pub pseudo_count: Vec<f64>,
}

impl RatePrior {
    pub fn validate(&self, events: usize) -> Result<()> {
        if self.mean.len() != events || self.pseudo_count.len() != events {
            return Err(Error::DimensionMismatch {
                expected: events,
                actual: self.mean.len().min(self.pseudo_count.len()),
            });
        }
        if self.mean.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Parameter("prior rate means must be positive".into()));
        }
        if self.pseudo_count.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::Parameter("pseudo-counts must be positive".into()));
        }
        Ok(())
    }

    pub fn shape(&self, event: usize) -> f64 {
        self.pseudo_count[event]
    }

    /// Prior exposure, in seconds, so that shape / exposure is the mean.
    pub fn exposure(&self, event: usize) -> f64 {
        self.pseudo_count[event] / self.mean[event]
    }
}

/// Hyper-parameters for the full model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    /// Per speaker, per status (silent, speaking).
    pub emission: Vec<[NiwPrior; 2]>,
    pub rates: RatePrior,
}

impl PriorConfig {
    pub fn validate(&self, speakers: usize, events: usize) -> Result<()> {
        if self.emission.len() != speakers {
            return Err(Error::DimensionMismatch {
                expected: speakers,
                actual: self.emission.len(),
            });
        }
        for p in self.emission.iter().flatten() {
            p.validate()?;
        }
        self.rates.validate(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(mean: [f64; 3]) -> Gaussian {
        Gaussian::new(Vector3::from(mean), Matrix3::identity()).unwrap()
    }

    fn params(c: usize) -> EmissionParams {
        EmissionParams {
            speakers: (0..c)
                .map(|s| [unit([0.0, 0.0, s as f64]), unit([3.0, 1.0, s as f64 + 2.0])])
                .collect(),
        }
    }

    #[test]
    fn loglik_at_mean_with_identity() {
        let p = params(4);
        let x = StateVector::from_bools(&[true, false, true, false]).unwrap();
        let frame = ObservationFrame {
            speakers: (0..4)
                .map(|s| {
                    let m = p.get(s, x.is_speaking(s)).mean();
                    [Some(m[0]), Some(m[1]), Some(m[2])]
                })
                .collect(),
        };
        let ll = frame_loglik(&frame, &x, &p).unwrap();
        let per = -1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((ll - 4.0 * per).abs() < 1e-12);
    }

    #[test]
    fn missing_channels_contribute_nothing() {
        let p = params(2);
        let frame = ObservationFrame {
            speakers: vec![[None, None, None], [None, None, None]],
        };
        let ll = frame_loglik(&frame, &StateVector::silent(2), &p).unwrap();
        assert_eq!(ll, 0.0);
    }

    #[test]
    fn partial_matches_marginal() {
        let cov = Matrix3::new(2.0, 0.5, 0.1, 0.5, 1.0, 0.3, 0.1, 0.3, 1.5);
        let g = Gaussian::new(Vector3::new(1.0, -1.0, 0.5), cov).unwrap();
        // only channel 1 observed: N(-1, 1)
        let ll = g.logpdf_partial(&[None, Some(0.0), None]);
        let expected = -0.5 * ((2.0 * std::f64::consts::PI).ln() + 1.0);
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_pd_covariance() {
        let cov = Matrix3::new(1.0, 2.0, 0.0, 2.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            Gaussian::new(Vector3::zeros(), cov),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn degenerate_covariance_reproduces_means() {
        let tiny = Matrix3::identity() * 1e-12;
        let p = EmissionParams {
            speakers: vec![[
                Gaussian::new(Vector3::new(1.0, 2.0, 3.0), tiny).unwrap(),
                Gaussian::new(Vector3::new(-1.0, 5.0, 0.0), tiny).unwrap(),
            ]],
        };
        let statuses = vec![vec![false], vec![true], vec![false]];
        let obs = sample_observations(&statuses, &p, 0.1, 3).unwrap();
        for (frame, st) in obs.frames.iter().zip(&statuses) {
            let m = p.get(0, st[0]).mean();
            for i in 0..3 {
                assert!((frame.speakers[0][i].unwrap() - m[i]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let p = params(3);
        let statuses = vec![vec![true, false, false]; 50];
        assert_eq!(
            sample_observations(&statuses, &p, 0.1, 11).unwrap(),
            sample_observations(&statuses, &p, 0.1, 11).unwrap()
        );
    }

    fn prior() -> NiwPrior {
        NiwPrior {
            kappa: 2.0,
            nu: 6.0,
            mean: Vector3::new(0.5, -0.5, 1.0),
            scale: Matrix3::identity() * 0.7,
        }
    }

    #[test]
    fn no_data_keeps_prior() {
        assert_eq!(niw_update(&prior(), &[]), prior());
    }

    #[test]
    fn single_observation_mean() {
        let y = Vector3::new(3.0, 1.0, -2.0);
        let post = niw_update(&prior(), &[y]);
        let expected = (prior().mean * 2.0 + y) / 3.0;
        assert!((post.mean - expected).norm() < 1e-12);
        assert_eq!(post.kappa, 3.0);
        assert_eq!(post.nu, 7.0);
    }

    #[test]
    fn sequential_update_equals_batch() {
        let mut rng = rng::seeded(5);
        let g = unit([1.0, 2.0, 3.0]);
        let data: Vec<_> = (0..40).map(|_| g.sample(&mut rng)).collect();
        let once = niw_update(&prior(), &data);
        let twice = niw_update(&niw_update(&prior(), &data[..13]), &data[13..]);
        assert!((once.mean - twice.mean).norm() < 1e-10);
        assert!((once.scale - twice.scale).norm() < 1e-9);
        assert_eq!(once.kappa, twice.kappa);
        assert_eq!(once.nu, twice.nu);
    }

    #[test]
    fn prior_validation() {
        let mut p = prior();
        p.nu = 4.0;
        assert!(p.validate().is_err());
        let mut p = prior();
        p.kappa = 0.0;
        assert!(p.validate().is_err());
        prior().validate().unwrap();
    }

    #[test]
    fn inverse_wishart_draws_are_spd() {
        let mut rng = rng::seeded(9);
        let scale = Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.5);
        for _ in 0..500 {
            let s = sample_inverse_wishart(5.5, &scale, &mut rng).unwrap();
            assert!(Cholesky::new(s).is_some());
            assert!((s - s.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn log_feature_is_finite_at_zero() {
        assert!((log_feature(0.0) - (1e-8f64).ln()).abs() < 1e-12);
    }
}
