//! Exponential hazard regression linking event rates to elimination of
//! candidate answers.
//!
//! The additive model is `λ(X) = λ₀ + Σ β_p X_p` with a constant baseline,
//! fitted by maximum likelihood under `λ ≥ 0`. A multiplicative variant
//! `λ(X) = λ₀ · exp(Σ β_p X_p)` is available through [`Link::Multiplicative`].
//!
//! Two record shapes are supported:
//!
//! * exact durations, possibly right-censored:
//!   `ℓ = δ log λ − λ t`;
//! * grouped outcomes, where a fraction `e` of the candidates present at
//!   the start of an interval of length `I` was eliminated in it:
//!   `ℓ = e log(1 − e^{−λI}) − (1 − e) λ I`.
//!
//! Covariates are event rates per second in the order take, transfer,
//! backchannel, competition.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::EventCounts;

pub const COVARIATES: [&str; 4] = ["take", "transfer", "backchannel", "competition"];
pub const MAX_ITER: usize = 500;
pub const TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outcome {
    Exact { duration: f64, censored: bool },
    Grouped { interval: f64, eliminated: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub outcome: Outcome,
    pub covariates: Vec<f64>,
}

impl SurvivalRecord {
    pub fn exact(duration: f64, censored: bool, covariates: Vec<f64>) -> Self {
        SurvivalRecord {
            outcome: Outcome::Exact { duration, censored },
            covariates,
        }
    }

    /// A question interval in which the remaining candidates went from
    /// `before` to `after` (as fractions of the original set).
    pub fn from_fractions(before: f64, after: f64, interval: f64, covariates: Vec<f64>) -> Result<Self> {
        if !(before > 0.0 && before <= 1.0) || !(after > 0.0 && after <= before) {
            return Err(Error::Domain(format!(
                "remaining fractions must satisfy 0 < after <= before <= 1, got {before} -> {after}"
            )));
        }
        Ok(SurvivalRecord {
            outcome: Outcome::Grouped {
                interval,
                eliminated: 1.0 - after / before,
            },
            covariates,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain("covariates must be finite".into()));
        }
        match self.outcome {
            Outcome::Exact { duration, .. } if !(duration > 0.0) || !duration.is_finite() => {
                Err(Error::Domain(format!("duration must be positive, got {duration}")))
            }
            Outcome::Grouped { interval, eliminated }
                if !(interval > 0.0) || !interval.is_finite() || !(0.0..=1.0).contains(&eliminated) =>
            {
                Err(Error::Domain(format!(
                    "grouped record needs interval > 0 and eliminated in [0, 1], got {interval}, {eliminated}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Observed outcome on the scale used for variance explained.
    fn observed(&self) -> f64 {
        match self.outcome {
            Outcome::Exact { duration, .. } => duration,
            Outcome::Grouped { eliminated, .. } => eliminated,
        }
    }

    fn expected(&self, hazard: f64) -> f64 {
        match self.outcome {
            Outcome::Exact { .. } => 1.0 / hazard,
            Outcome::Grouped { interval, .. } => -(-hazard * interval).exp_m1(),
        }
    }

    /// Log-likelihood and its first two derivatives in `λ`.
    fn loglik(&self, hazard: f64) -> (f64, f64, f64) {
        match self.outcome {
            Outcome::Exact { duration, censored } => {
                if censored {
                    (-hazard * duration, -duration, 0.0)
                } else {
                    (hazard.ln() - hazard * duration, 1.0 / hazard - duration, -1.0 / (hazard * hazard))
                }
            }
            Outcome::Grouped { interval, eliminated } => {
                let x = hazard * interval;
                let survive = -(1.0 - eliminated) * x;
                if eliminated == 0.0 {
                    return (survive, -interval, 0.0);
                }
                let em1 = x.exp_m1();
                let l = eliminated * (-(-x).exp_m1()).ln() + survive;
                let d1 = eliminated * interval / em1 - (1.0 - eliminated) * interval;
                // e^x / (e^x - 1)^2, written to avoid overflow
                let ratio = if x > 30.0 { (-x).exp() } else { (em1 + 1.0) / (em1 * em1) };
                let d2 = -eliminated * interval * interval * ratio;
                (l, d1, d2)
            }
        }
    }

    fn needs_positive_hazard(&self) -> bool {
        match self.outcome {
            Outcome::Exact { censored, .. } => !censored,
            Outcome::Grouped { eliminated, .. } => eliminated > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    #[default]
    Additive,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardFit {
    pub link: Link,
    pub baseline: f64,
    pub betas: Vec<f64>,
    pub loglik: f64,
    pub variance_explained: f64,
    /// Covariates with no variation; their coefficient is fixed at zero.
    pub unidentified: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub loglik_trace: Vec<f64>,
}

impl HazardFit {
    pub fn hazard(&self, covariates: &[f64]) -> Result<f64> {
        if covariates.len() != self.betas.len() {
            return Err(Error::DimensionMismatch {
                expected: self.betas.len(),
                actual: covariates.len(),
            });
        }
        let lin: f64 = self.betas.iter().zip(covariates).map(|(b, x)| b * x).sum();
        let h = match self.link {
            Link::Additive => self.baseline + lin,
            Link::Multiplicative => self.baseline * lin.exp(),
        };
        if h < 0.0 || !h.is_finite() {
            return Err(Error::Domain(format!("negative hazard {h} at the given covariates")));
        }
        Ok(h)
    }

    pub fn cumulative_hazard(&self, covariates: &[f64], t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return Err(Error::Domain(format!("time must be non-negative, got {t}")));
        }
        Ok(self.hazard(covariates)? * t)
    }

    /// `S(t) = exp(−Λ(t))`.
    pub fn survival(&self, covariates: &[f64], t: f64) -> Result<f64> {
        Ok((-self.cumulative_hazard(covariates, t)?).exp())
    }
}

pub fn survival_function(fit: &HazardFit, covariates: &[f64], t: f64) -> Result<f64> {
    fit.survival(covariates, t)
}

/// Covariate vector (rates per second) from the counts of one interval.
pub fn covariates_from_counts(counts: &EventCounts) -> Vec<f64> {
    let len = counts.window_length;
    [counts.take, counts.transfer, counts.backchannel, counts.competition]
        .iter()
        .map(|c| *c as f64 / len)
        .collect()
}

/// Expected fraction of the answer space removed over the interval the
/// counts cover: `1 − S(interval)`.
pub fn question_effect(counts: &EventCounts, fit: &HazardFit) -> Result<f64> {
    let s = fit.survival(&covariates_from_counts(counts), counts.window_length)?;
    Ok(1.0 - s)
}

struct Problem<'a> {
    records: &'a [SurvivalRecord],
    /// Columns that enter the model, after dropping constant covariates.
    columns: Vec<usize>,
    scale: Vec<f64>,
    link: Link,
}

impl Problem<'_> {
    fn dim(&self) -> usize {
        self.columns.len() + 1
    }

    fn design(&self, r: &SurvivalRecord, out: &mut [f64]) {
        out[0] = 1.0;
        for (k, &c) in self.columns.iter().enumerate() {
            out[k + 1] = r.covariates[c] / self.scale[k];
        }
    }

    /// Log-likelihood, gradient and Hessian at `theta`, or `None` when some
    /// record would need a positive hazard it does not get.
    fn evaluate(&self, theta: &DVector<f64>, derivatives: bool) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let p = self.dim();
        let mut z = vec![0.0; p];
        let mut ll = 0.0;
        let mut g = DVector::zeros(if derivatives { p } else { 0 });
        let mut h = DMatrix::zeros(if derivatives { p } else { 0 }, if derivatives { p } else { 0 });
        for r in self.records {
            self.design(r, &mut z);
            let eta: f64 = z.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let lambda = match self.link {
                Link::Additive => eta,
                Link::Multiplicative => eta.exp(),
            };
            if lambda < 0.0 || (lambda == 0.0 && r.needs_positive_hazard()) || !lambda.is_finite() {
                return None;
            }
            let (l, d1, d2) = r.loglik(lambda);
            ll += l;
            if derivatives {
                let (g1, g2) = match self.link {
                    Link::Additive => (d1, d2),
                    Link::Multiplicative => (d1 * lambda, d2 * lambda * lambda + d1 * lambda),
                };
                for i in 0..p {
                    g[i] += g1 * z[i];
                    for j in 0..=i {
                        h[(i, j)] += g2 * z[i] * z[j];
                    }
                }
            }
        }
        if derivatives {
            for i in 0..p {
                for j in 0..i {
                    h[(j, i)] = h[(i, j)];
                }
            }
        }
        ll.is_finite().then_some((ll, g, h))
    }
}

/// Newton direction restricted to the free coordinates; falls back to the
/// gradient where the Hessian is not negative definite.
fn direction(g: &DVector<f64>, h: &DMatrix<f64>, free: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..g.len()).filter(|i| free[*i]).collect();
    let k = idx.len();
    let sub_g = DVector::from_fn(k, |i, _| g[idx[i]]);
    let neg_h = DMatrix::from_fn(k, k, |i, j| -h[(idx[i], idx[j])]);
    let step = match neg_h.cholesky() {
        Some(ch) => ch.solve(&sub_g),
        None => sub_g.clone(),
    };
    let mut d = DVector::zeros(g.len());
    for (i, &j) in idx.iter().enumerate() {
        d[j] = step[i];
    }
    d
}

pub fn fit_hazard(records: &[SurvivalRecord]) -> Result<HazardFit> {
    fit_hazard_with(records, Link::Additive)
}

/// Maximum-likelihood fit by damped Newton steps. Every accepted step keeps
/// the hazard feasible and does not decrease the log-likelihood; for the
/// additive link the baseline is held at zero whenever the unconstrained
/// step would make it negative.
pub fn fit_hazard_with(records: &[SurvivalRecord], link: Link) -> Result<HazardFit> {
    if records.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "hazard fit needs at least 2 records, got {}",
            records.len()
        )));
    }
    let p = records[0].covariates.len();
    for r in records {
        r.validate()?;
        if r.covariates.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: r.covariates.len(),
            });
        }
    }
    let mut columns = Vec::new();
    let mut scale = Vec::new();
    let mut unidentified = Vec::new();
    for c in 0..p {
        let n = records.len() as f64;
        let mean = records.iter().map(|r| r.covariates[c]).sum::<f64>() / n;
        let sd = (records.iter().map(|r| (r.covariates[c] - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd > 1e-12 * (1.0 + mean.abs()) {
            columns.push(c);
            scale.push(sd);
        } else {
            unidentified.push(c);
        }
    }
    let problem = Problem {
        records,
        columns,
        scale,
        link,
    };

    // start from the covariate-free MLE
    let (events, exposure) = records.iter().fold((0.0, 0.0), |(e, x), r| match r.outcome {
        Outcome::Exact { duration, censored } => (e + f64::from(u8::from(!censored)), x + duration),
        Outcome::Grouped { interval, eliminated } => (e + eliminated, x + interval * (1.0 - 0.5 * eliminated)),
    });
    let base0 = (events / exposure).max(1e-12);
    let mut theta = DVector::zeros(problem.dim());
    theta[0] = match link {
        Link::Additive => base0,
        Link::Multiplicative => base0.ln(),
    };
    let (mut ll, mut g, mut h) = problem
        .evaluate(&theta, true)
        .ok_or_else(|| Error::Domain("no feasible starting hazard".into()))?;
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    let mut free = vec![true; problem.dim()];
    while iterations < MAX_ITER {
        iterations += 1;
        if link == Link::Additive {
            // release the baseline once the gradient pulls it up again
            free[0] = !(theta[0] <= 0.0 && g[0] <= 0.0);
        }
        let d = direction(&g, &h, &free);
        let slope = g.dot(&d);
        if slope.abs() <= TOLERANCE * ll.abs().max(1.0) {
            converged = true;
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = &theta + &d * t;
            if link == Link::Additive && cand[0] < 0.0 {
                cand[0] = 0.0;
            }
            if let Some((l, _, _)) = problem.evaluate(&cand, false) {
                if l >= ll + 1e-4 * t * slope {
                    accepted = Some((cand, l));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, l)) = accepted else {
            converged = true;
            break;
        };
        let gain = l - ll;
        theta = cand;
        let (l2, g2, h2) = problem.evaluate(&theta, true).expect("accepted point is feasible");
        ll = l2;
        g = g2;
        h = h2;
        trace.push(ll);
        if gain <= TOLERANCE * ll.abs().max(1.0) && t == 1.0 {
            converged = true;
            break;
        }
    }

    let mut betas = vec![0.0; p];
    for (k, &c) in problem.columns.iter().enumerate() {
        betas[c] = theta[k + 1] / problem.scale[k];
    }
    let baseline = match link {
        Link::Additive => theta[0],
        Link::Multiplicative => theta[0].exp(),
    };
    let mut fit = HazardFit {
        link,
        baseline,
        betas,
        loglik: ll,
        variance_explained: 0.0,
        unidentified,
        iterations,
        converged,
        loglik_trace: trace,
    };
    let pairs: Vec<(f64, f64)> = records
        .iter()
        .map(|r| Ok((r.observed(), r.expected(fit.hazard(&r.covariates)?))))
        .collect::<Result<_>>()?;
    fit.variance_explained = squared_correlation(&pairs);
    Ok(fit)
}

fn squared_correlation(pairs: &[(f64, f64)]) -> f64 {
    let pairs: Vec<(f64, f64)> = pairs.iter().copied().filter(|(a, b)| a.is_finite() && b.is_finite()).collect();
    let n = pairs.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in &pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab * sab / (saa * sbb)).clamp(0.0, 1.0)
    }
}
