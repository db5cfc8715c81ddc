//! Group-level statistics: rates at performance percentiles, the
//! simulate-and-count table constructor and its calibration, Wilcoxon
//! signed-rank tests, least squares with nested F-tests, and item entropy.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, Normal};

use crate::error::{Error, Result};
use crate::events::{classify_trajectory, minute_statistics, window_counts, EventCounts, MinuteStatistics, WINDOW};
use crate::mjp::{EventCatalog, EventKind, RateVector, StateVector};
use crate::rng;
use crate::simulate::gillespie_simulate;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub id: String,
    /// Questions asked; fewer is better.
    pub questions: u32,
    pub rates: RateVector,
    #[serde(default)]
    pub windows: Vec<EventCounts>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileRates {
    pub percentile: f64,
    pub groups: Vec<String>,
    pub rates: RateVector,
}

/// Mean rates over the groups in a tercile band centred on a performance
/// percentile. Groups are ranked from worst (most questions) to best; ties
/// keep id order.
pub fn percentile_rates(groups: &[GroupRecord], percentile: f64) -> Result<PercentileRates> {
    if groups.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "percentile rates need at least 4 groups, got {}",
            groups.len()
        )));
    }
    if !(0.0..=100.0).contains(&percentile) {
        return Err(Error::Domain(format!("percentile must be in [0, 100], got {percentile}")));
    }
    let events = groups[0].rates.len();
    if let Some(g) = groups.iter().find(|g| g.rates.len() != events) {
        return Err(Error::DimensionMismatch {
            expected: events,
            actual: g.rates.len(),
        });
    }
    let mut order: Vec<&GroupRecord> = groups.iter().collect();
    order.sort_by(|a, b| b.questions.cmp(&a.questions).then(a.id.cmp(&b.id)));
    let n = order.len() as f64;
    let rank_pct = |i: usize| (i as f64 + 0.5) / n * 100.0;
    let half_band = 100.0 / 6.0;
    let mut members: Vec<&GroupRecord> = order
        .iter()
        .enumerate()
        .filter(|(i, _)| (rank_pct(*i) - percentile).abs() <= half_band)
        .map(|(_, g)| *g)
        .collect();
    if members.is_empty() {
        let nearest = (0..order.len())
            .min_by(|a, b| (rank_pct(*a) - percentile).abs().total_cmp(&(rank_pct(*b) - percentile).abs()))
            .expect("non-empty");
        members.push(order[nearest]);
    }
    let k = members.len() as f64;
    let rates = (0..events)
        .map(|e| members.iter().map(|g| g.rates.get(e)).sum::<f64>() / k)
        .collect();
    Ok(PercentileRates {
        percentile,
        groups: members.iter().map(|g| g.id.clone()).collect(),
        rates: RateVector::new(rates)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountSummary {
    pub mean: MinuteStatistics,
    /// Monte Carlo standard errors across replicates.
    pub stderr: MinuteStatistics,
    pub replicates: usize,
}

/// Per-minute Table 1 statistics of one simulated conversation.
pub fn simulate_minutes(
    catalog: &EventCatalog,
    rates: &RateVector,
    minutes: f64,
    seed: u64,
) -> Result<MinuteStatistics> {
    let horizon = minutes * 60.0;
    let traj = gillespie_simulate(catalog, rates, StateVector::silent(catalog.speaker_count()), horizon, seed)?;
    let events = classify_trajectory(&traj, catalog)?;
    Ok(minute_statistics(&window_counts(&events, WINDOW, horizon)?))
}

/// Mean per-minute statistics over independent replicates; replicate `k`
/// uses a seed derived from `seed` and `k`.
pub fn simulate_and_count(
    catalog: &EventCatalog,
    rates: &RateVector,
    minutes: f64,
    replicates: usize,
    seed: u64,
) -> Result<CountSummary> {
    if replicates == 0 {
        return Err(Error::InvalidConfig("replicates must be at least 1".into()));
    }
    if !(minutes > 0.0) {
        return Err(Error::InvalidConfig(format!("minutes must be positive, got {minutes}")));
    }
    rates.check_len(catalog)?;
    let runs: Vec<[f64; 4]> = (0..replicates)
        .into_par_iter()
        .map(|k| simulate_minutes(catalog, rates, minutes, rng::child_seed(seed, k as u64)).map(|s| s.as_array()))
        .collect::<Result<_>>()?;
    let r = replicates as f64;
    let mut mean = [0.0; 4];
    let mut se = [0.0; 4];
    for i in 0..4 {
        mean[i] = runs.iter().map(|x| x[i]).sum::<f64>() / r;
        if replicates > 1 {
            let var = runs.iter().map(|x| (x[i] - mean[i]).powi(2)).sum::<f64>() / (r - 1.0);
            se[i] = (var / r).sqrt();
        }
    }
    Ok(CountSummary {
        mean: MinuteStatistics::from_array(mean),
        stderr: MinuteStatistics::from_array(se),
        replicates,
    })
}

/// Four-parameter family of rate vectors used to match a Table 1 row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateProfile {
    /// Multiplies the take, transfer and yield base rates. The transfer rate
    /// is a total, split evenly over targets.
    pub turn_scale: f64,
    /// Share of the total take rate held by speaker 0; the rest is split
    /// evenly.
    pub lead_share: f64,
    pub backchannel: f64,
    pub seize: f64,
}

impl RateProfile {
    pub const TAKE: f64 = 0.5;
    pub const TRANSFER: f64 = 0.15;
    pub const YIELD: f64 = 0.2;
    pub const YIELD_UNDER_COMPETITION: f64 = 1.0;

    pub fn rates(&self, catalog: &EventCatalog) -> Result<RateVector> {
        let c = catalog.speaker_count() as f64;
        let total_take = Self::TAKE * c * self.turn_scale;
        RateVector::by_kind(catalog, |e| match e.kind {
            EventKind::Take if e.actor.0 == 0 => total_take * self.lead_share,
            EventKind::Take => total_take * (1.0 - self.lead_share) / (c - 1.0),
            EventKind::Transfer if e.target == Some(e.actor) => 0.0,
            EventKind::Transfer => Self::TRANSFER * self.turn_scale / (c - 1.0),
            EventKind::Yield => Self::YIELD * self.turn_scale,
            EventKind::Backchannel => self.backchannel,
            EventKind::Seize => self.seize,
            EventKind::YieldUnderCompetition => Self::YIELD_UNDER_COMPETITION,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub minutes: f64,
    pub replicates: usize,
    pub rounds: usize,
    pub bisection_steps: usize,
    pub seed: u64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            minutes: 10.0,
            replicates: 64,
            rounds: 5,
            bisection_steps: 14,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub profile: RateProfile,
    pub rates: RateVector,
    /// Statistics at the final profile under the calibration seed.
    pub achieved: MinuteStatistics,
}

/// Match a Table 1 row by coordinate-wise bisection: turn scale against
/// turns, seize rate against competitions, backchannel rate against
/// backchannels, and lead share against turns by different members. All
/// evaluations share one seed (common random numbers).
pub fn calibrate_to_row(
    catalog: &EventCatalog,
    target: &MinuteStatistics,
    config: &CalibrationConfig,
) -> Result<Calibration> {
    let c = catalog.speaker_count() as f64;
    let eval = |p: &RateProfile| -> Result<MinuteStatistics> {
        Ok(simulate_and_count(catalog, &p.rates(catalog)?, config.minutes, config.replicates, config.seed)?.mean)
    };
    let mut profile = RateProfile {
        turn_scale: 1.0,
        lead_share: 1.0 / c,
        backchannel: 0.1,
        seize: 0.02,
    };
    let target = target.as_array();
    for _ in 0..config.rounds {
        for coord in 0..4 {
            // (stat index, bounds, statistic increases with parameter)
            let (stat, mut lo, mut hi, increasing) = match coord {
                0 => (0, 0.0, 20.0, true),
                1 => (1, 0.0, 5.0, true),
                2 => (2, 0.0, 5.0, true),
                _ => (3, 1.0 / c, 1.0, false),
            };
            let set = |p: &mut RateProfile, v: f64| match coord {
                0 => p.turn_scale = v,
                1 => p.seize = v,
                2 => p.backchannel = v,
                _ => p.lead_share = v,
            };
            for _ in 0..config.bisection_steps {
                let mid = 0.5 * (lo + hi);
                let mut p = profile;
                set(&mut p, mid);
                let value = eval(&p)?.as_array()[stat];
                if (value < target[stat]) == increasing {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            set(&mut profile, 0.5 * (lo + hi));
        }
    }
    Ok(Calibration {
        profile,
        rates: profile.rates(catalog)?,
        achieved: eval(&profile)?,
    })
}

/// Table 1 style report: performance percentile label to statistics.
pub type TableReport = BTreeMap<String, MinuteStatistics>;

pub fn format_table(report: &TableReport) -> String {
    let mut out = format!(
        "{:<12} {:>12} {:>18} {:>13} {:>30}\n",
        "percentile", "turn_taking", "turn_competitions", "backchannel", "turns_by_different_members"
    );
    for (k, s) in report {
        out.push_str(&format!(
            "{:<12} {:>12.2} {:>18.2} {:>13.2} {:>30.2}\n",
            k, s.turn_taking, s.turn_competitions, s.backchannel, s.turns_by_different_members
        ));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// Differences tend to be positive.
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of the ranks of the positive differences.
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub exact: bool,
    pub one_sided: bool,
}

/// Largest sample size handled by the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 20;

/// Mid-ranks of absolute values, doubled so that ties stay integral.
fn doubled_ranks(abs: &[f64]) -> Vec<u64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|a, b| abs[*a].total_cmp(&abs[*b]));
    let mut ranks = vec![0u64; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // mean of ranks i+1..=j+1, doubled
        let doubled = (i + 1 + j + 1) as u64;
        for k in i..=j {
            ranks[idx[k]] = doubled;
        }
        i = j + 1;
    }
    ranks
}

/// Null counts of the doubled statistic: `counts[s]` sign assignments give
/// doubled positive-rank sum `s`.
fn null_counts(ranks: &[u64]) -> Vec<u64> {
    let total: u64 = ranks.iter().sum();
    let mut counts = vec![0u64; total as usize + 1];
    counts[0] = 1;
    let mut reach = 0usize;
    for &r in ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn prepare(differences: &[f64]) -> Result<(Vec<u64>, u64, Vec<f64>)> {
    if differences.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("differences must be finite".into()));
    }
    let nonzero: Vec<f64> = differences.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::UndefinedTest("all differences are zero".into()));
    }
    if nonzero.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 nonzero differences, got {}",
            nonzero.len()
        )));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = doubled_ranks(&abs);
    let w2: u64 = nonzero.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    Ok((ranks, w2, abs))
}

fn combine(upper: f64, lower: f64, alternative: Alternative) -> f64 {
    match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

/// Wilcoxon signed-rank test. Zero differences are dropped and ties get
/// mid-ranks. The null distribution is exact up to
/// [`WILCOXON_EXACT_MAX`] differences and a continuity-corrected normal
/// approximation beyond.
pub fn wilcoxon_signed_rank(differences: &[f64], alternative: Alternative) -> Result<WilcoxonResult> {
    let (ranks, w2, _) = prepare(differences)?;
    let n = ranks.len();
    let exact = n <= WILCOXON_EXACT_MAX;
    let p_value = if exact {
        let counts = null_counts(&ranks);
        let total = 2f64.powi(n as i32);
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let lower: u64 = counts[..=w2 as usize].iter().sum();
        combine(upper as f64 / total, lower as f64 / total, alternative)
    } else {
        normal_p(&ranks, w2, alternative)
    };
    Ok(WilcoxonResult {
        statistic: w2 as f64 / 2.0,
        p_value,
        n,
        exact,
        one_sided: alternative != Alternative::TwoSided,
    })
}

/// Normal approximation with tie and continuity corrections, available at
/// any sample size for comparison with the exact distribution.
pub fn wilcoxon_normal_p(differences: &[f64], alternative: Alternative) -> Result<f64> {
    let (ranks, w2, _) = prepare(differences)?;
    Ok(normal_p(&ranks, w2, alternative))
}

fn normal_p(ranks: &[u64], w2: u64, alternative: Alternative) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    let w = w2 as f64 / 2.0;
    let z = Normal::standard();
    let sd = var.sqrt();
    let upper = 1.0 - z.cdf((w - mean - 0.5) / sd);
    let lower = z.cdf((w - mean + 0.5) / sd);
    combine(upper.min(1.0), lower.min(1.0), alternative)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    /// Intercept first, then one coefficient per regressor.
    pub coefficients: Vec<f64>,
    pub names: Vec<String>,
    pub r_squared: f64,
    pub rss: f64,
    pub tss: f64,
    pub n: usize,
}

impl OlsFit {
    pub fn regressors(&self) -> usize {
        self.names.len()
    }
}

/// Least squares of `y` on an intercept plus the columns of `x`, by
/// modified Gram–Schmidt. Columns are named `x0, x1, …`.
pub fn ols_fit(x: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let names = (0..x.ncols()).map(|j| format!("x{j}")).collect::<Vec<_>>();
    ols_fit_named(x, y, &names)
}

pub fn ols_fit_named(x: &DMatrix<f64>, y: &[f64], names: &[String]) -> Result<OlsFit> {
    let n = x.nrows();
    let p = x.ncols();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if names.len() != p {
        return Err(Error::DimensionMismatch { expected: p, actual: names.len() });
    }
    if n <= p + 1 {
        return Err(Error::InsufficientData(format!("{n} rows for {} parameters", p + 1)));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Domain("design and response must be finite".into()));
    }
    let mut design = DMatrix::from_element(n, p + 1, 1.0);
    design.columns_mut(1, p).copy_from(x);

    // Q (n × k) and R (k × k), column by column
    let k = p + 1;
    let mut q = DMatrix::zeros(n, k);
    let mut r = DMatrix::zeros(k, k);
    let mut dependent = Vec::new();
    for j in 0..k {
        let mut v: DVector<f64> = design.column(j).into_owned();
        let original = v.norm();
        for i in 0..j {
            let qi = q.column(i);
            let proj = qi.dot(&v);
            r[(i, j)] = proj;
            v.axpy(-proj, &qi, 1.0);
        }
        let norm = v.norm();
        if norm <= 1e-10 * original.max(1e-300) || original == 0.0 {
            dependent.push(if j == 0 { "intercept".to_string() } else { names[j - 1].clone() });
            continue;
        }
        r[(j, j)] = norm;
        q.set_column(j, &(v / norm));
    }
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(dependent));
    }
    let yv = DVector::from_column_slice(y);
    let qty = q.transpose() * &yv;
    let mut beta = vec![0.0; k];
    for i in (0..k).rev() {
        let s: f64 = (i + 1..k).map(|j| r[(i, j)] * beta[j]).sum();
        beta[i] = (qty[i] - s) / r[(i, i)];
    }
    let fitted = &q * &qty;
    let rss = (&yv - fitted).norm_squared();
    let mean = y.iter().sum::<f64>() / n as f64;
    let tss = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let r_squared = if tss > 0.0 { (1.0 - rss / tss).clamp(0.0, 1.0) } else { 1.0 };
    Ok(OlsFit {
        coefficients: beta,
        names: names.to_vec(),
        r_squared,
        rss,
        tss,
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f: f64,
    pub p_value: f64,
    pub df1: usize,
    pub df2: usize,
}

/// Nested-model F-test. The restricted model's regressors must be a subset
/// of the full model's and both must be fitted to the same response.
pub fn nested_f_test(restricted: &OlsFit, full: &OlsFit) -> Result<FTest> {
    if restricted.n != full.n || (restricted.tss - full.tss).abs() > 1e-9 * full.tss.max(1.0) {
        return Err(Error::NotNested("models were fitted to different responses".into()));
    }
    if let Some(name) = restricted.names.iter().find(|n| !full.names.contains(n)) {
        return Err(Error::NotNested(format!("regressor {name} is missing from the full model")));
    }
    let df1 = full.regressors() - restricted.regressors();
    let df2 = full.n - full.regressors() - 1;
    if df1 == 0 {
        return Ok(FTest { f: 0.0, p_value: 1.0, df1, df2 });
    }
    let num = ((restricted.rss - full.rss).max(0.0)) / df1 as f64;
    let den = full.rss / df2 as f64;
    if den <= 0.0 {
        return Err(Error::UndefinedTest("full model fits exactly".into()));
    }
    let f = num / den;
    let dist = FisherSnedecor::new(df1 as f64, df2 as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(FTest {
        f,
        p_value: (1.0 - dist.cdf(f)).clamp(0.0, 1.0),
        df1,
        df2,
    })
}

/// Shannon entropy in bits of the normalized member distribution.
pub fn item_entropy(counts: &[f64]) -> Result<f64> {
    if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(Error::Domain("item counts must be non-negative".into()));
    }
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return Err(Error::Domain("item counts are all zero".into()));
    }
    Ok(-counts
        .iter()
        .filter(|c| **c > 0.0)
        .map(|c| {
            let p = c / total;
            p * p.log2()
        })
        .sum::<f64>())
}
