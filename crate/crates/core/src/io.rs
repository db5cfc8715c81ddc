//! Text file formats.
//!
//! CSV files carry a header row. Trajectory and observation CSVs may start
//! with `# key=value` metadata lines. Parse failures report the 1-based line
//! number of the offending row.
//!
//! | file | columns |
//! |---|---|
//! | trajectory | `time_s, event_id, kind, actor, target` (metadata `speakers`, `horizon_s`, `initial_state`) |
//! | observations | `slot_index, speaker, audio_logvar, motion_logvar, facing_count` (metadata `dt`; empty cell = missing) |
//! | badge | `timestamp_s, audio_var, motion_var, ir_detected_ids` (ids joined by `;`) |
//! | turns | `speaker, start_s, end_s, kind` |
//! | events | `time_s, kind, actor, target` |
//! | counts | `window_start_s, take, transfer, yield, backchannel, competition, distinct_speakers, speaker_changes` |
//! | survival records | `fraction_remaining_before, fraction_remaining_after, interval_s, rate_take, rate_transfer, rate_backchannel, rate_competition` |
//! | states | `slot, speaker, status, probability` |

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::emission::{EmissionParams, ObservationFrame, ObservationSeries, CHANNELS};
use crate::error::{Error, Result};
use crate::events::{ConversationalEvent, ConversationalKind, EventCounts};
use crate::infer::Chain;
use crate::mjp::{EventCatalog, EventKind, RateVector, SpeakerId, StateVector};
use crate::segment::{BadgeSample, BadgeStream, SegmentKind, TurnSegment};
use crate::simulate::{TimedEvent, Trajectory};
use crate::survival::SurvivalRecord;

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::parse(line, message)
}

/// Split off `# key=value` lines; returns the metadata, the rest of the
/// text, and how many lines were consumed.
fn split_metadata(text: &str) -> (BTreeMap<String, String>, &str, usize) {
    let mut meta = BTreeMap::new();
    let mut rest = text;
    let mut lines = 0;
    while let Some(line) = rest.lines().next() {
        let trimmed = line.trim();
        if !trimmed.starts_with('#') {
            break;
        }
        if let Some((k, v)) = trimmed.trim_start_matches('#').trim().split_once('=') {
            meta.insert(k.trim().to_string(), v.trim().to_string());
        }
        lines += 1;
        rest = rest.get(line.len()..).unwrap_or("");
        rest = rest.strip_prefix("\r\n").or_else(|| rest.strip_prefix('\n')).unwrap_or(rest);
    }
    (meta, rest, lines)
}

/// Header-checked rows with their file line numbers.
fn rows(text: &str, header: &[&str], line_offset: usize) -> Result<Vec<(usize, csv::StringRecord)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| perr(line_offset + 1, e.to_string()))?
        .clone();
    let names: Vec<&str> = found.iter().collect();
    if names != header {
        return Err(perr(
            line_offset + 1,
            format!("expected header {:?}, found {:?}", header.join(","), names.join(",")),
        ));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            perr(line + line_offset, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + line_offset;
        out.push((line, rec));
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| perr(line, format!("invalid {name} {raw:?}")))
}

fn finite(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field(rec, i, name, line)?;
    if !v.is_finite() {
        return Err(perr(line, format!("{name} must be finite")));
    }
    Ok(v)
}

fn optional_finite(rec: &csv::StringRecord, i: usize, name: &str, line: usize) -> Result<Option<f64>> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        _ => finite(rec, i, name, line).map(Some),
    }
}

fn optional_speaker(rec: &csv::StringRecord, i: usize, line: usize) -> Result<Option<usize>> {
    match rec.get(i).unwrap_or("") {
        "" => Ok(None),
        _ => field(rec, i, "target", line).map(Some),
    }
}

fn opt_to_string(v: Option<usize>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn catalog_json(catalog: &EventCatalog) -> Result<String> {
    Ok(serde_json::to_string_pretty(&catalog.to_document())?)
}

fn state_bits(x: &StateVector) -> String {
    x.to_bools().iter().map(|b| if *b { '1' } else { '0' }).collect()
}

fn parse_state_bits(s: &str, speakers: usize, line: usize) -> Result<StateVector> {
    if s.len() != speakers {
        return Err(perr(line, format!("initial_state {s:?} must have {speakers} digits")));
    }
    let bools = s
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(perr(line, format!("initial_state {s:?} must be binary"))),
        })
        .collect::<Result<Vec<_>>>()?;
    StateVector::from_bools(&bools).map_err(|e| perr(line, e.to_string()))
}

pub fn trajectory_csv(traj: &Trajectory, catalog: &EventCatalog) -> Result<String> {
    let mut out = String::new();
    writeln!(out, "# speakers={}", catalog.speaker_count()).expect("string write");
    writeln!(out, "# horizon_s={}", traj.horizon).expect("string write");
    writeln!(out, "# initial_state={}", state_bits(&traj.initial_state)).expect("string write");
    out.push_str("time_s,event_id,kind,actor,target\n");
    for ev in &traj.events {
        let spec = catalog.event(ev.event)?;
        writeln!(
            out,
            "{},{},{},{},{}",
            ev.time,
            ev.event,
            spec.kind.as_str(),
            spec.actor.0,
            opt_to_string(spec.target.map(|t| t.0))
        )
        .expect("string write");
    }
    Ok(out)
}

/// Parse a trajectory CSV and check it against the catalog (kind, actor and
/// target must match the event id; guards must hold on replay).
pub fn read_trajectory_csv(text: &str, catalog: &EventCatalog) -> Result<Trajectory> {
    let (meta, body, offset) = split_metadata(text);
    let speakers: usize = meta
        .get("speakers")
        .map(|s| s.parse().map_err(|_| perr(1, "invalid speakers metadata")))
        .transpose()?
        .unwrap_or(catalog.speaker_count());
    if speakers != catalog.speaker_count() {
        return Err(Error::DimensionMismatch {
            expected: catalog.speaker_count(),
            actual: speakers,
        });
    }
    let horizon: f64 = meta
        .get("horizon_s")
        .ok_or_else(|| perr(1, "missing '# horizon_s=' metadata"))?
        .parse()
        .map_err(|_| perr(1, "invalid horizon_s metadata"))?;
    let initial_state = match meta.get("initial_state") {
        Some(s) => parse_state_bits(s, speakers, 1)?,
        None => StateVector::silent(speakers),
    };
    let mut events = Vec::new();
    for (line, rec) in rows(body, &["time_s", "event_id", "kind", "actor", "target"], offset)? {
        let time = finite(&rec, 0, "time_s", line)?;
        let id: usize = field(&rec, 1, "event_id", line)?;
        let spec = catalog.event(id).map_err(|e| perr(line, e.to_string()))?;
        let kind = EventKind::parse(rec.get(2).unwrap_or(""))
            .ok_or_else(|| perr(line, format!("unknown kind {:?}", rec.get(2).unwrap_or(""))))?;
        let actor: usize = field(&rec, 3, "actor", line)?;
        let target = optional_speaker(&rec, 4, line)?;
        if kind != spec.kind || actor != spec.actor.0 || target != spec.target.map(|t| t.0) {
            return Err(perr(line, format!("row does not match catalog event {id} ({})", spec.label())));
        }
        events.push(TimedEvent { time, event: id });
    }
    let traj = Trajectory {
        initial_state,
        events,
        horizon,
    };
    traj.replay(catalog)?;
    Ok(traj)
}

/// Parse a trajectory CSV, building the catalog from its `speakers`
/// metadata.
pub fn read_trajectory_csv_auto(text: &str) -> Result<(EventCatalog, Trajectory)> {
    let (meta, _, _) = split_metadata(text);
    let speakers: usize = meta
        .get("speakers")
        .ok_or_else(|| perr(1, "missing '# speakers=' metadata"))?
        .parse()
        .map_err(|_| perr(1, "invalid speakers metadata"))?;
    let catalog = EventCatalog::build(speakers).map_err(|e| perr(1, e.to_string()))?;
    let traj = read_trajectory_csv(text, &catalog)?;
    Ok((catalog, traj))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub speakers: usize,
    pub horizon_s: f64,
    pub initial_state: Vec<bool>,
    pub events: Vec<TimedEvent>,
}

pub fn trajectory_json(traj: &Trajectory) -> Result<String> {
    Ok(serde_json::to_string_pretty(&TrajectoryDocument {
        speakers: traj.initial_state.speaker_count(),
        horizon_s: traj.horizon,
        initial_state: traj.initial_state.to_bools(),
        events: traj.events.clone(),
    })?)
}

pub fn read_trajectory_json(text: &str, catalog: &EventCatalog) -> Result<Trajectory> {
    let doc: TrajectoryDocument = serde_json::from_str(text)?;
    if doc.speakers != catalog.speaker_count() || doc.initial_state.len() != doc.speakers {
        return Err(Error::DimensionMismatch {
            expected: catalog.speaker_count(),
            actual: doc.initial_state.len(),
        });
    }
    let traj = Trajectory {
        initial_state: StateVector::from_bools(&doc.initial_state)?,
        events: doc.events,
        horizon: doc.horizon_s,
    };
    traj.replay(catalog)?;
    Ok(traj)
}

pub fn observations_csv(obs: &ObservationSeries) -> String {
    let mut out = format!("# dt={}\nslot_index,speaker,audio_logvar,motion_logvar,facing_count\n", obs.dt);
    let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for (n, frame) in obs.frames.iter().enumerate() {
        for (c, ch) in frame.speakers.iter().enumerate() {
            writeln!(out, "{n},{c},{},{},{}", cell(ch[0]), cell(ch[1]), cell(ch[2])).expect("string write");
        }
    }
    out
}

/// Parse an observation CSV. `dt` overrides the file's metadata; one of
/// them must be present. Every (slot, speaker) pair must appear exactly
/// once, with slots dense from 0 and speakers dense from 0.
pub fn read_observations_csv(text: &str, dt: Option<f64>) -> Result<ObservationSeries> {
    let (meta, body, offset) = split_metadata(text);
    let dt = match (dt, meta.get("dt")) {
        (Some(dt), _) => dt,
        (None, Some(s)) => s.parse().map_err(|_| perr(1, "invalid dt metadata"))?,
        (None, None) => return Err(perr(1, "missing '# dt=' metadata and no dt given")),
    };
    let mut cells: BTreeMap<(usize, usize), ([Option<f64>; CHANNELS], usize)> = BTreeMap::new();
    for (line, rec) in rows(
        body,
        &["slot_index", "speaker", "audio_logvar", "motion_logvar", "facing_count"],
        offset,
    )? {
        let slot: usize = field(&rec, 0, "slot_index", line)?;
        let speaker: usize = field(&rec, 1, "speaker", line)?;
        let ch = [
            optional_finite(&rec, 2, "audio_logvar", line)?,
            optional_finite(&rec, 3, "motion_logvar", line)?,
            optional_finite(&rec, 4, "facing_count", line)?,
        ];
        if cells.insert((slot, speaker), (ch, line)).is_some() {
            return Err(perr(line, format!("duplicate row for slot {slot}, speaker {speaker}")));
        }
    }
    if cells.is_empty() {
        return Err(Error::InsufficientData("observation file has no rows".into()));
    }
    let slots = cells.keys().map(|k| k.0).max().expect("non-empty") + 1;
    let speakers = cells.keys().map(|k| k.1).max().expect("non-empty") + 1;
    if cells.len() != slots * speakers {
        let missing = (0..slots)
            .flat_map(|n| (0..speakers).map(move |c| (n, c)))
            .find(|k| !cells.contains_key(k))
            .expect("some pair is missing");
        return Err(Error::InsufficientData(format!(
            "no row for slot {}, speaker {}",
            missing.0, missing.1
        )));
    }
    let frames = (0..slots)
        .map(|n| ObservationFrame {
            speakers: (0..speakers).map(|c| cells[&(n, c)].0).collect(),
        })
        .collect();
    let series = ObservationSeries {
        frames,
        dt,
        speaker_count: speakers,
    };
    series.validate()?;
    Ok(series)
}

pub fn badge_csv(stream: &BadgeStream) -> String {
    let mut out = String::from("timestamp_s,audio_var,motion_var,ir_detected_ids\n");
    for s in &stream.samples {
        let ids: Vec<String> = s.ir_detected.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{},{},{},{}", s.timestamp, s.audio_var, s.motion_var, ids.join(";")).expect("string write");
    }
    out
}

/// Parse one badge's CSV. The sample period is the median timestamp step
/// unless given.
pub fn read_badge_csv(text: &str, badge: usize, period: Option<f64>) -> Result<BadgeStream> {
    let mut samples = Vec::new();
    for (line, rec) in rows(text, &["timestamp_s", "audio_var", "motion_var", "ir_detected_ids"], 0)? {
        let ids = rec.get(3).unwrap_or("");
        let ir_detected = if ids.is_empty() {
            Vec::new()
        } else {
            ids.split(';')
                .map(|s| s.trim().parse().map_err(|_| perr(line, format!("invalid badge id {s:?}"))))
                .collect::<Result<_>>()?
        };
        let sample = BadgeSample {
            timestamp: finite(&rec, 0, "timestamp_s", line)?,
            audio_var: finite(&rec, 1, "audio_var", line)?,
            motion_var: finite(&rec, 2, "motion_var", line)?,
            ir_detected,
        };
        if sample.audio_var < 0.0 || sample.motion_var < 0.0 {
            return Err(perr(line, "variances must be non-negative"));
        }
        if samples.last().is_some_and(|p: &BadgeSample| sample.timestamp < p.timestamp) {
            return Err(perr(line, "timestamps must be nondecreasing"));
        }
        samples.push(sample);
    }
    let period = match period {
        Some(p) => p,
        None => {
            let mut steps: Vec<f64> = samples
                .windows(2)
                .map(|w| w[1].timestamp - w[0].timestamp)
                .filter(|d| *d > 0.0)
                .collect();
            if steps.is_empty() {
                return Err(Error::InsufficientData(format!(
                    "badge {badge}: cannot infer a sample period"
                )));
            }
            steps.sort_by(f64::total_cmp);
            steps[steps.len() / 2]
        }
    };
    let stream = BadgeStream {
        badge,
        period,
        samples,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn turns_csv(segments: &[TurnSegment]) -> String {
    let mut out = String::from("speaker,start_s,end_s,kind\n");
    for s in segments {
        writeln!(out, "{},{},{},{}", s.speaker.0, s.start, s.end, s.kind.as_str()).expect("string write");
    }
    out
}

pub fn read_turns_csv(text: &str) -> Result<Vec<TurnSegment>> {
    rows(text, &["speaker", "start_s", "end_s", "kind"], 0)?
        .into_iter()
        .map(|(line, rec)| {
            let seg = TurnSegment {
                speaker: SpeakerId(field(&rec, 0, "speaker", line)?),
                start: finite(&rec, 1, "start_s", line)?,
                end: finite(&rec, 2, "end_s", line)?,
                kind: SegmentKind::parse(rec.get(3).unwrap_or(""))
                    .ok_or_else(|| perr(line, format!("unknown kind {:?}", rec.get(3).unwrap_or(""))))?,
            };
            if !(seg.end > seg.start) {
                return Err(perr(line, "end_s must exceed start_s"));
            }
            Ok(seg)
        })
        .collect()
}

pub fn events_csv(events: &[ConversationalEvent]) -> String {
    let mut out = String::from("time_s,kind,actor,target\n");
    for e in events {
        writeln!(
            out,
            "{},{},{},{}",
            e.time,
            e.kind.as_str(),
            e.actor.0,
            opt_to_string(e.target.map(|t| t.0))
        )
        .expect("string write");
    }
    out
}

pub fn read_events_csv(text: &str) -> Result<Vec<ConversationalEvent>> {
    rows(text, &["time_s", "kind", "actor", "target"], 0)?
        .into_iter()
        .map(|(line, rec)| {
            let ev = ConversationalEvent {
                time: finite(&rec, 0, "time_s", line)?,
                kind: ConversationalKind::parse(rec.get(1).unwrap_or(""))
                    .ok_or_else(|| perr(line, format!("unknown kind {:?}", rec.get(1).unwrap_or(""))))?,
                actor: SpeakerId(field(&rec, 2, "actor", line)?),
                target: optional_speaker(&rec, 3, line)?.map(SpeakerId),
            };
            ev.validate().map_err(|e| perr(line, e.to_string()))?;
            Ok(ev)
        })
        .collect()
}

const COUNTS_HEADER: [&str; 8] = [
    "window_start_s",
    "take",
    "transfer",
    "yield",
    "backchannel",
    "competition",
    "distinct_speakers",
    "speaker_changes",
];

pub fn counts_csv(counts: &[EventCounts]) -> String {
    let mut out = COUNTS_HEADER.join(",");
    out.push('\n');
    for c in counts {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            c.window_start, c.take, c.transfer, c.yield_, c.backchannel, c.competition, c.distinct_speakers, c.speaker_changes
        )
        .expect("string write");
    }
    out
}

/// Parse window counts; the window length is the spacing of the window
/// starts, or `default_window` for a single row.
pub fn read_counts_csv(text: &str, default_window: f64) -> Result<Vec<EventCounts>> {
    let parsed = rows(text, &COUNTS_HEADER, 0)?;
    let starts: Vec<f64> = parsed
        .iter()
        .map(|(line, rec)| finite(rec, 0, "window_start_s", *line))
        .collect::<Result<_>>()?;
    let window = if starts.len() > 1 { starts[1] - starts[0] } else { default_window };
    if !(window > 0.0) {
        return Err(perr(parsed.get(1).map_or(2, |p| p.0), "window starts must increase"));
    }
    parsed
        .into_iter()
        .zip(starts)
        .map(|((line, rec), start)| {
            Ok(EventCounts {
                window_start: start,
                window_length: window,
                take: field(&rec, 1, "take", line)?,
                transfer: field(&rec, 2, "transfer", line)?,
                yield_: field(&rec, 3, "yield", line)?,
                backchannel: field(&rec, 4, "backchannel", line)?,
                competition: field(&rec, 5, "competition", line)?,
                distinct_speakers: field(&rec, 6, "distinct_speakers", line)?,
                speaker_changes: field(&rec, 7, "speaker_changes", line)?,
            })
        })
        .collect()
}

const RECORDS_HEADER: [&str; 7] = [
    "fraction_remaining_before",
    "fraction_remaining_after",
    "interval_s",
    "rate_take",
    "rate_transfer",
    "rate_backchannel",
    "rate_competition",
];

/// A survival record row in its file form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub before: f64,
    pub after: f64,
    pub interval: f64,
    /// Rates per second: take, transfer, backchannel, competition.
    pub rates: [f64; 4],
}

impl QuestionRecord {
    pub fn to_survival(&self) -> Result<SurvivalRecord> {
        SurvivalRecord::from_fractions(self.before, self.after, self.interval, self.rates.to_vec())
    }
}

pub fn records_csv(records: &[QuestionRecord]) -> String {
    let mut out = RECORDS_HEADER.join(",");
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.before, r.after, r.interval, r.rates[0], r.rates[1], r.rates[2], r.rates[3]
        )
        .expect("string write");
    }
    out
}

pub fn read_records_csv(text: &str) -> Result<Vec<QuestionRecord>> {
    rows(text, &RECORDS_HEADER, 0)?
        .into_iter()
        .map(|(line, rec)| {
            let r = QuestionRecord {
                before: finite(&rec, 0, RECORDS_HEADER[0], line)?,
                after: finite(&rec, 1, RECORDS_HEADER[1], line)?,
                interval: finite(&rec, 2, RECORDS_HEADER[2], line)?,
                rates: [
                    finite(&rec, 3, RECORDS_HEADER[3], line)?,
                    finite(&rec, 4, RECORDS_HEADER[4], line)?,
                    finite(&rec, 5, RECORDS_HEADER[5], line)?,
                    finite(&rec, 6, RECORDS_HEADER[6], line)?,
                ],
            };
            r.to_survival()
                .and_then(|s| s.validate())
                .map_err(|e| perr(line, e.to_string()))?;
            Ok(r)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub event: usize,
    pub label: String,
    pub mean: f64,
    pub sd: f64,
    pub psrf: f64,
    /// Across-chain split PSRF, when several chains were run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psrf_chains: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmissionSummary {
    pub speaker: usize,
    pub status: u8,
    pub mean: [f64; CHANNELS],
    pub cov: [[f64; CHANNELS]; CHANNELS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub sweep: usize,
    pub rates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub chains: usize,
    pub retained: usize,
    pub rates: Vec<RateSummary>,
    /// Emission parameters of the last retained sample of the first chain.
    pub emission: Vec<EmissionSummary>,
    pub samples: Vec<SampleRecord>,
}

fn emission_summary(params: &EmissionParams) -> Vec<EmissionSummary> {
    let mut out = Vec::new();
    for c in 0..params.speaker_count() {
        for status in [false, true] {
            let g = params.get(c, status);
            out.push(EmissionSummary {
                speaker: c,
                status: u8::from(status),
                mean: [g.mean()[0], g.mean()[1], g.mean()[2]],
                cov: std::array::from_fn(|i| std::array::from_fn(|j| g.cov()[(i, j)])),
            });
        }
    }
    out
}

pub fn chain_report(chains: &[Chain], catalog: &EventCatalog, psrf_chains: Option<&[f64]>) -> Result<ChainReport> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InsufficientData("no chains".into()))?;
    let rates = first
        .rate_diagnostics
        .iter()
        .enumerate()
        .map(|(e, d)| {
            // pooled over chains
            let traces: Vec<f64> = chains.iter().flat_map(|c| c.rate_trace(e)).collect();
            let n = traces.len() as f64;
            let mean = traces.iter().sum::<f64>() / n;
            let sd = if n > 1.0 {
                (traces.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(RateSummary {
                event: e,
                label: catalog.event(e)?.label(),
                mean,
                sd,
                psrf: d.psrf,
                psrf_chains: psrf_chains.map(|p| p[e]),
            })
        })
        .collect::<Result<_>>()?;
    let last = first
        .samples
        .last()
        .ok_or_else(|| Error::InsufficientData("chain has no samples".into()))?;
    Ok(ChainReport {
        chains: chains.len(),
        retained: first.samples.len(),
        rates,
        emission: emission_summary(&last.emission),
        samples: first
            .samples
            .iter()
            .map(|s| SampleRecord {
                sweep: s.sweep,
                rates: s.rates.as_slice().to_vec(),
            })
            .collect(),
    })
}

/// Per slot and speaker: posterior turn-holding probability and the
/// thresholded status.
pub fn states_csv(chain: &Chain, speakers: usize) -> String {
    let mut out = String::from("slot,speaker,status,probability\n");
    for (n, probs) in chain.speaking_probabilities(speakers).iter().enumerate() {
        for (c, p) in probs.iter().enumerate() {
            writeln!(out, "{n},{c},{},{p}", u8::from(*p > 0.5)).expect("string write");
        }
    }
    out
}

/// Posterior rate table: one row per event, with the across-chain PSRF
/// column when several chains were run.
pub fn rate_table_csv(report: &ChainReport) -> String {
    let chains = report.rates.iter().any(|r| r.psrf_chains.is_some());
    let mut out = String::from("event,label,mean,sd,psrf");
    out.push_str(if chains { ",psrf_chains\n" } else { "\n" });
    for r in &report.rates {
        write!(out, "{},{},{},{},{}", r.event, r.label, r.mean, r.sd, r.psrf).expect("string write");
        if let Some(p) = r.psrf_chains {
            write!(out, ",{p}").expect("string write");
        }
        out.push('\n');
    }
    out
}

pub fn rates_csv(rates: &RateVector, catalog: &EventCatalog) -> Result<String> {
    rates.check_len(catalog)?;
    let mut out = String::from("event,label,rate\n");
    for (e, spec) in catalog.events().iter().enumerate() {
        writeln!(out, "{e},{},{}", spec.label(), rates.get(e)).expect("string write");
    }
    Ok(out)
}

/// Read a rate table written by [`rates_csv`] or [`rate_table_csv`]; the
/// `rate` column is used, or `mean` when there is none. Events must be
/// listed densely in id order.
pub fn read_rates_csv(text: &str) -> Result<RateVector> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let event_col = header
        .iter()
        .position(|h| h == "event")
        .ok_or_else(|| perr(1, "missing 'event' column"))?;
    let rate_col = header
        .iter()
        .position(|h| h == "rate")
        .or_else(|| header.iter().position(|h| h == "mean"))
        .ok_or_else(|| perr(1, "missing 'rate' or 'mean' column"))?;
    let mut rates = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let e: usize = field(&rec, event_col, "event", line)?;
        if e != rates.len() {
            return Err(perr(line, format!("expected event {}, found {e}", rates.len())));
        }
        let r = finite(&rec, rate_col, "rate", line)?;
        if r < 0.0 {
            return Err(perr(line, "rates must be non-negative"));
        }
        rates.push(r);
    }
    RateVector::new(rates)
}

/// Speaker count whose catalog has `events` events, if any.
pub fn speakers_for_events(events: usize) -> Option<usize> {
    (1..=crate::mjp::MAX_SPEAKERS).find(|c| c * c + 5 * c == events)
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)?)
}

pub fn from_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    Ok(serde_json::from_str(text)?)
}
