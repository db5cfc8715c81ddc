//! Badge-stream preprocessing: clock alignment, pitched-segment detection,
//! turn-break detection on inter-pitch gaps, and rule-based turn segmentation.

use serde::{Deserialize, Serialize};

use crate::emission::{log_feature, ObservationFrame, ObservationSeries, CHANNELS};
use crate::error::{Error, Result};
use crate::mjp::{SpeakerId, StateVector};

pub const MIN_TURN: f64 = 1.5;
pub const BACKCHANNEL_MAX: f64 = 1.0;
pub const ALIGN_RESOLUTION: f64 = 0.01;
pub const ALIGN_MAX_SHIFT: f64 = 5.0;
pub const ALIGN_MIN_CORRELATION: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadgeSample {
    pub timestamp: f64,
    pub audio_var: f64,
    pub motion_var: f64,
    /// Badges detected by the infrared sensor during this sample.
    pub ir_detected: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadgeStream {
    pub badge: usize,
    /// Nominal sample period in seconds.
    pub period: f64,
    pub samples: Vec<BadgeSample>,
}

impl BadgeStream {
    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) || !self.period.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "badge {}: sample period must be positive",
                self.badge
            )));
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if w[1].timestamp < w[0].timestamp {
                return Err(Error::InvalidConfig(format!(
                    "badge {}: timestamps decrease at sample {}",
                    self.badge,
                    i + 1
                )));
            }
        }
        for s in &self.samples {
            if !s.timestamp.is_finite()
                || !(s.audio_var >= 0.0 && s.audio_var.is_finite())
                || !(s.motion_var >= 0.0 && s.motion_var.is_finite())
            {
                return Err(Error::InvalidConfig(format!(
                    "badge {}: invalid sample at t={}",
                    self.badge, s.timestamp
                )));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.timestamp)
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.timestamp + self.period)
    }

    pub fn audio(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.audio_var).collect()
    }

    pub fn shifted(&self, offset: f64) -> BadgeStream {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.timestamp += offset;
        }
        out
    }
}

/// Linear-interpolation percentile (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Per badge, the offset added to its timestamps to match badge 0.
    pub offsets: Vec<f64>,
    /// Peak cross-correlation per badge (1 for the reference).
    pub correlations: Vec<f64>,
    pub low_confidence: Vec<bool>,
}

impl Alignment {
    pub fn apply(&self, streams: &[BadgeStream]) -> Vec<BadgeStream> {
        streams
            .iter()
            .zip(&self.offsets)
            .map(|(s, o)| s.shifted(*o))
            .collect()
    }
}

/// Top-decile indicator train on the alignment grid starting at `origin`.
fn indicator_train(stream: &BadgeStream, origin: f64, bins: usize) -> Result<Vec<f64>> {
    let audio = stream.audio();
    let threshold = percentile(&audio, 90.0);
    let mut train = vec![0.0; bins];
    let mut any = false;
    for s in &stream.samples {
        if s.audio_var > threshold {
            any = true;
            let a = ((s.timestamp - origin) / ALIGN_RESOLUTION).round();
            let b = ((s.timestamp + stream.period - origin) / ALIGN_RESOLUTION).round();
            let a = a.max(0.0) as usize;
            let b = (b.max(0.0) as usize).min(bins);
            for v in train.iter_mut().take(b).skip(a) {
                *v = 1.0;
            }
        }
    }
    if !any {
        return Err(Error::DegenerateSignal(format!(
            "badge {} has no samples above its 90th audio percentile",
            stream.badge
        )));
    }
    Ok(train)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if a.is_empty() {
        return 0.0;
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let (ma, mb) = (sa / n, sb / n);
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Align every badge to badge 0 by maximizing the correlation of their
/// top-decile audio indicator trains over shifts within ±5 s.
pub fn align_streams(streams: &[BadgeStream]) -> Result<Alignment> {
    if streams.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "alignment needs at least 2 badges, got {}",
            streams.len()
        )));
    }
    for s in streams {
        s.validate()?;
        if s.samples.len() < 10 {
            return Err(Error::InsufficientData(format!(
                "badge {} has {} samples",
                s.badge,
                s.samples.len()
            )));
        }
    }
    let reference = &streams[0];
    let max_lag = (ALIGN_MAX_SHIFT / ALIGN_RESOLUTION).round() as i64;
    let origin = streams.iter().map(BadgeStream::start).fold(f64::INFINITY, f64::min);
    let end = streams.iter().map(BadgeStream::end).fold(f64::NEG_INFINITY, f64::max);
    let bins = ((end - origin) / ALIGN_RESOLUTION).ceil() as usize + 1;
    let ref_train = indicator_train(reference, origin, bins)?;
    let ref_lo = ((reference.start() - origin) / ALIGN_RESOLUTION).round() as i64;
    let ref_hi = ((reference.end() - origin) / ALIGN_RESOLUTION).round() as i64;

    let mut offsets = vec![0.0];
    let mut correlations = vec![1.0];
    let mut low_confidence = vec![false];
    for other in &streams[1..] {
        let train = indicator_train(other, origin, bins)?;
        let lo = ((other.start() - origin) / ALIGN_RESOLUTION).round() as i64;
        let hi = ((other.end() - origin) / ALIGN_RESOLUTION).round() as i64;
        let mut best: Option<(f64, i64)> = None;
        for lag in -max_lag..=max_lag {
            // compare ref[i] with other[i + lag] over the common support
            let start = ref_lo.max(lo - lag).max(0);
            let stop = ref_hi.min(hi - lag).min(bins as i64);
            if stop - start < 10 {
                continue;
            }
            let a = &ref_train[start as usize..stop as usize];
            let b = &train[(start + lag) as usize..(stop + lag) as usize];
            let r = pearson(a, b);
            let better = match best {
                None => true,
                Some((br, bl)) => r > br + 1e-12 || ((r - br).abs() <= 1e-12 && lag.abs() < bl.abs()),
            };
            if better {
                best = Some((r, lag));
            }
        }
        let (r, lag) = best.ok_or_else(|| {
            Error::Alignment(format!("badge {} does not overlap badge {}", other.badge, reference.badge))
        })?;
        offsets.push(-(lag as f64) * ALIGN_RESOLUTION);
        correlations.push(r);
        low_confidence.push(r < ALIGN_MIN_CORRELATION);
    }
    Ok(Alignment {
        offsets,
        correlations,
        low_confidence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchSegment {
    pub badge: usize,
    pub start: f64,
    pub end: f64,
}

impl PitchSegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Maximal runs of samples strictly above the given audio percentile. A
/// segment spans from its first sample to one period past its last.
pub fn detect_pitched(stream: &BadgeStream, pct: f64) -> Result<Vec<PitchSegment>> {
    stream.validate()?;
    if stream.samples.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "badge {} has {} samples",
            stream.badge,
            stream.samples.len()
        )));
    }
    let threshold = percentile(&stream.audio(), pct);
    let mut out = Vec::new();
    let mut open: Option<(f64, f64)> = None;
    for s in &stream.samples {
        if s.audio_var > threshold {
            let end = s.timestamp + stream.period;
            open = Some(match open {
                Some((start, _)) => (start, end),
                None => (s.timestamp, end),
            });
        } else if let Some((start, end)) = open.take() {
            out.push(PitchSegment {
                badge: stream.badge,
                start,
                end,
            });
        }
    }
    if let Some((start, end)) = open {
        out.push(PitchSegment {
            badge: stream.badge,
            start,
            end,
        });
    }
    Ok(out)
}

/// Gaps between consecutive pitched segments of one badge.
pub fn inter_pitch_gaps(segments: &[PitchSegment]) -> Vec<f64> {
    segments
        .windows(2)
        .map(|w| w[1].start - w[0].end)
        .filter(|g| *g > 0.0)
        .collect()
}

/// Two-component Gaussian mixture on log-gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapMixture {
    /// Component means on the log-seconds scale, short-gap component first.
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    /// Gap length in seconds above which the long-gap component dominates.
    pub break_threshold: f64,
    pub single_component: bool,
    pub loglik: f64,
    /// Log-likelihood after each EM iteration of the retained restart.
    pub loglik_trace: Vec<f64>,
}

pub const EM_RESTARTS: usize = 10;
pub const EM_MAX_ITER: usize = 500;
pub const EM_TOL: f64 = 1e-8;

fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        m
    } else {
        m + ((a - m).exp() + (b - m).exp()).ln()
    }
}

struct EmFit {
    means: [f64; 2],
    variances: [f64; 2],
    weights: [f64; 2],
    trace: Vec<f64>,
}

fn em(x: &[f64], init: [f64; 2], floor: f64) -> EmFit {
    // k-means seeding
    let mut centers = init;
    let mut assign = vec![0usize; x.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (a, v) in assign.iter_mut().zip(x) {
            let k = usize::from((v - centers[1]).abs() < (v - centers[0]).abs());
            changed |= *a != k;
            *a = k;
        }
        for (k, center) in centers.iter_mut().enumerate() {
            let (s, n) = x
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == k)
                .fold((0.0, 0usize), |(s, n), (v, _)| (s + v, n + 1));
            if n > 0 {
                *center = s / n as f64;
            }
        }
        if !changed {
            break;
        }
    }
    let mut weights = [0.0; 2];
    let mut variances = [0.0; 2];
    for k in 0..2 {
        let members: Vec<f64> = x.iter().zip(&assign).filter(|(_, a)| **a == k).map(|(v, _)| *v).collect();
        weights[k] = (members.len() as f64 / x.len() as f64).max(1e-3);
        variances[k] = if members.len() > 1 {
            members.iter().map(|v| (v - centers[k]).powi(2)).sum::<f64>() / members.len() as f64
        } else {
            floor
        }
        .max(floor);
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut means = centers;

    let mut trace = Vec::new();
    let mut resp = vec![0.0; x.len()];
    let mut prev = f64::NEG_INFINITY;
    for _ in 0..EM_MAX_ITER {
        // E step
        let mut ll = 0.0;
        for (r, v) in resp.iter_mut().zip(x) {
            let l0 = weights[0].ln() + normal_logpdf(*v, means[0], variances[0]);
            let l1 = weights[1].ln() + normal_logpdf(*v, means[1], variances[1]);
            let z = log_sum_exp(l0, l1);
            ll += z;
            *r = (l1 - z).exp();
        }
        trace.push(ll);
        if ll.is_finite() && prev.is_finite() && (ll - prev).abs() <= EM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev = ll;
        // M step
        let n1: f64 = resp.iter().sum();
        let n0 = x.len() as f64 - n1;
        if n0 < 1e-9 || n1 < 1e-9 {
            break;
        }
        let m1 = resp.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() / n1;
        let m0 = resp.iter().zip(x).map(|(r, v)| (1.0 - r) * v).sum::<f64>() / n0;
        let v1 = resp.iter().zip(x).map(|(r, v)| r * (v - m1).powi(2)).sum::<f64>() / n1;
        let v0 = resp.iter().zip(x).map(|(r, v)| (1.0 - r) * (v - m0).powi(2)).sum::<f64>() / n0;
        means = [m0, m1];
        variances = [v0.max(floor), v1.max(floor)];
        weights = [n0 / x.len() as f64, n1 / x.len() as f64];
    }
    EmFit {
        means,
        variances,
        weights,
        trace,
    }
}

/// Point between the component means where the long-gap responsibility
/// crosses one half, on the log scale.
fn crossing(means: [f64; 2], variances: [f64; 2], weights: [f64; 2]) -> Option<f64> {
    let f = |x: f64| {
        weights[1].ln() + normal_logpdf(x, means[1], variances[1])
            - weights[0].ln()
            - normal_logpdf(x, means[0], variances[0])
    };
    let (mut lo, mut hi) = (means[0], means[1]);
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Fit a two-component mixture to log-gaps by EM with restarts and derive
/// the turn-break threshold.
pub fn fit_gap_mixture(gaps: &[f64]) -> Result<GapMixture> {
    if gaps.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "gap mixture needs at least 10 gaps, got {}",
            gaps.len()
        )));
    }
    if let Some(g) = gaps.iter().find(|g| !(**g > 0.0) || !g.is_finite()) {
        return Err(Error::Domain(format!("gaps must be positive and finite, got {g}")));
    }
    let x: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64;
    let single = |loglik: f64| GapMixture {
        means: [mean, mean],
        variances: [var, var],
        weights: [1.0, 0.0],
        break_threshold: f64::INFINITY,
        single_component: true,
        loglik,
        loglik_trace: vec![loglik],
    };
    if var <= 1e-12 * (1.0 + mean * mean) {
        return Ok(single(f64::INFINITY));
    }
    let floor = 1e-6 * var;

    let mut sorted = x.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    let mut best: Option<EmFit> = None;
    for r in 0..EM_RESTARTS {
        let q = 0.05 + 0.04 * r as f64;
        let init = [quantile(q), quantile(1.0 - q)];
        if init[0] == init[1] {
            continue;
        }
        let fit = em(&x, init, floor);
        let ll = *fit.trace.last().unwrap_or(&f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|b| ll > *b.trace.last().unwrap_or(&f64::NEG_INFINITY)) {
            best = Some(fit);
        }
    }
    let single_ll = x.iter().map(|v| normal_logpdf(*v, mean, var)).sum::<f64>();
    let Some(mut fit) = best else {
        return Ok(single(single_ll));
    };
    if fit.means[0] > fit.means[1] {
        fit.means.swap(0, 1);
        fit.variances.swap(0, 1);
        fit.weights.swap(0, 1);
    }
    let loglik = *fit.trace.last().expect("at least one iteration");
    let collapsed = fit.weights.iter().any(|w| *w < 1e-6)
        || (fit.means[1] - fit.means[0]).abs() < 1e-6 * var.sqrt();
    let threshold = if collapsed {
        None
    } else {
        crossing(fit.means, fit.variances, fit.weights)
    };
    match threshold {
        Some(t) => Ok(GapMixture {
            means: fit.means,
            variances: fit.variances,
            weights: fit.weights,
            break_threshold: t.exp(),
            single_component: false,
            loglik,
            loglik_trace: fit.trace,
        }),
        None => {
            let mut s = single(single_ll);
            s.loglik_trace = fit.trace;
            Ok(s)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Turn,
    Backchannel,
}

impl SegmentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SegmentKind::Turn => "turn",
            SegmentKind::Backchannel => "backchannel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "turn" => Some(SegmentKind::Turn),
            "backchannel" | "backchannel_candidate" | "backchannel-candidate" => {
                Some(SegmentKind::Backchannel)
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnSegment {
    pub speaker: SpeakerId,
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

impl TurnSegment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnRules {
    pub break_threshold: f64,
    pub min_turn: f64,
    pub backchannel_max: f64,
    /// Largest gap over which a span in `[backchannel_max, min_turn)` is
    /// attached to an adjacent turn of the same speaker.
    pub attach_max_gap: f64,
}

impl TurnRules {
    pub fn new(break_threshold: f64) -> Self {
        TurnRules {
            break_threshold,
            min_turn: MIN_TURN,
            backchannel_max: BACKCHANNEL_MAX,
            attach_max_gap: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segmentation {
    /// Sorted by start time, then speaker.
    pub segments: Vec<TurnSegment>,
    /// Spans that were neither turns, backchannels nor attachable.
    pub dropped: usize,
}

fn merge_spans(mut segs: Vec<PitchSegment>, threshold: f64) -> Vec<(f64, f64)> {
    segs.sort_by(|a, b| a.start.total_cmp(&b.start));
    let mut out: Vec<(f64, f64)> = Vec::new();
    for s in segs {
        match out.last_mut() {
            Some(last) if s.start - last.1 < threshold => last.1 = last.1.max(s.end),
            _ => out.push((s.start, s.end)),
        }
    }
    out
}

/// Apply the turn rules to pitched segments. Badge ids are speaker ids.
pub fn segment_turns(segments: &[PitchSegment], rules: &TurnRules) -> Segmentation {
    let mut speakers: Vec<usize> = segments.iter().map(|s| s.badge).collect();
    speakers.sort_unstable();
    speakers.dedup();

    let mut turns: Vec<TurnSegment> = Vec::new();
    let mut short: Vec<(usize, f64, f64)> = Vec::new();
    let mut middle: Vec<(usize, f64, f64)> = Vec::new();
    for &spk in &speakers {
        let own: Vec<PitchSegment> = segments.iter().filter(|s| s.badge == spk).copied().collect();
        for (start, end) in merge_spans(own, rules.break_threshold) {
            let d = end - start;
            if d >= rules.min_turn {
                turns.push(TurnSegment {
                    speaker: SpeakerId(spk),
                    start,
                    end,
                    kind: SegmentKind::Turn,
                });
            } else if d < rules.backchannel_max {
                short.push((spk, start, end));
            } else {
                middle.push((spk, start, end));
            }
        }
    }

    let mut dropped = 0;
    for (spk, start, end) in middle {
        let nearest = turns
            .iter_mut()
            .filter(|t| t.speaker.0 == spk)
            .map(|t| {
                let gap = if t.end <= start { start - t.end } else { t.start - end };
                (gap, t)
            })
            .filter(|(gap, _)| *gap >= 0.0 && *gap <= rules.attach_max_gap)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match nearest {
            Some((_, t)) => {
                t.start = t.start.min(start);
                t.end = t.end.max(end);
            }
            None => dropped += 1,
        }
    }
    let mut out = turns.clone();
    for (spk, start, end) in short {
        let during_other = turns
            .iter()
            .any(|t| t.speaker.0 != spk && t.start <= start && start < t.end);
        if during_other {
            out.push(TurnSegment {
                speaker: SpeakerId(spk),
                start,
                end,
                kind: SegmentKind::Backchannel,
            });
        } else {
            dropped += 1;
        }
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.speaker.cmp(&b.speaker)));
    Segmentation {
        segments: out,
        dropped,
    }
}

/// Full preprocessing of aligned badge streams into turn segments, with
/// one break threshold fitted on the pooled gaps of all badges.
pub fn segment_badges(streams: &[BadgeStream]) -> Result<(GapMixture, Segmentation)> {
    let mut pitched = Vec::new();
    let mut gaps = Vec::new();
    for s in streams {
        let segs = detect_pitched(s, 90.0)?;
        gaps.extend(inter_pitch_gaps(&segs));
        pitched.extend(segs);
    }
    let mixture = fit_gap_mixture(&gaps)?;
    let threshold = if mixture.single_component {
        // one gap population: treat every gap as within-turn
        f64::INFINITY
    } else {
        mixture.break_threshold
    };
    Ok((mixture, segment_turns(&pitched, &TurnRules::new(threshold))))
}

/// Per-slot turn status implied by turn segments (backchannels ignored).
pub fn turn_statuses(
    segments: &[TurnSegment],
    speakers: usize,
    dt: f64,
    slots: usize,
) -> Result<Vec<StateVector>> {
    let mut out = vec![StateVector::silent(speakers); slots];
    for t in segments.iter().filter(|t| t.kind == SegmentKind::Turn) {
        if t.speaker.0 >= speakers {
            return Err(Error::DimensionMismatch {
                expected: speakers,
                actual: t.speaker.0 + 1,
            });
        }
        let a = (t.start / dt).round().max(0.0) as usize;
        let b = ((t.end / dt).round().max(0.0) as usize).min(slots);
        for x in out.iter_mut().take(b).skip(a) {
            *x = x.with(t.speaker.0, true);
        }
    }
    Ok(out)
}

/// Resample aligned badge streams onto a `dt` grid starting at `origin`.
/// Badge `k` becomes speaker `k` in the order given. Channels: log mean
/// audio variance, log mean motion variance, infrared detections per slot.
/// Slots without samples are missing.
pub fn observations_from_badges(
    streams: &[BadgeStream],
    origin: f64,
    dt: f64,
    slots: usize,
) -> Result<ObservationSeries> {
    if !(dt > 0.0) {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let c = streams.len();
    let mut sums = vec![[0.0f64; CHANNELS]; slots * c];
    let mut counts = vec![0usize; slots * c];
    for (k, s) in streams.iter().enumerate() {
        for sample in &s.samples {
            let n = ((sample.timestamp - origin) / dt).floor();
            if n < 0.0 || n >= slots as f64 {
                continue;
            }
            let i = n as usize * c + k;
            sums[i][0] += sample.audio_var;
            sums[i][1] += sample.motion_var;
            sums[i][2] += sample.ir_detected.len() as f64;
            counts[i] += 1;
        }
    }
    let frames = (0..slots)
        .map(|n| ObservationFrame {
            speakers: (0..c)
                .map(|k| {
                    let i = n * c + k;
                    if counts[i] == 0 {
                        [None; CHANNELS]
                    } else {
                        let m = counts[i] as f64;
                        [
                            Some(log_feature(sums[i][0] / m)),
                            Some(log_feature(sums[i][1] / m)),
                            Some(sums[i][2]),
                        ]
                    }
                })
                .collect(),
        })
        .collect();
    let series = ObservationSeries {
        frames,
        dt,
        speaker_count: c,
    };
    series.validate()?;
    Ok(series)
}
