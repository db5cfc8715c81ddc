//! Conversational events and per-window statistics.
//!
//! Events come either from turn segments ([`classify_events`]) or directly
//! from a simulated trajectory ([`classify_trajectory`]).
//!
//! Segment rules, with `g = transfer_gap_max`:
//!
//! | situation | event |
//! |---|---|
//! | turn starts, nobody else holds a turn, the last other turn ended more than `g` earlier (or never) | take |
//! | turn starts within `g` after another speaker's turn ended, nobody else holds a turn | transfer(prev → this) |
//! | turn starts while another turn is open | none (competition begins) |
//! | turn ends while another turn continues | competition-loss(this), competition-win(survivor) |
//! | turn ends, otherwise, and no transfer follows within `g` | yield |
//! | backchannel segment | backchannel |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mjp::{EventCatalog, EventKind, SpeakerId};
use crate::segment::{SegmentKind, TurnSegment};
use crate::simulate::Trajectory;

pub const TRANSFER_GAP_MAX: f64 = 1.0;
pub const WINDOW: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversationalKind {
    Take,
    Yield,
    Transfer,
    Backchannel,
    CompetitionWin,
    CompetitionLoss,
}

impl ConversationalKind {
    pub const ALL: [ConversationalKind; 6] = [
        ConversationalKind::Take,
        ConversationalKind::Yield,
        ConversationalKind::Transfer,
        ConversationalKind::Backchannel,
        ConversationalKind::CompetitionWin,
        ConversationalKind::CompetitionLoss,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ConversationalKind::Take => "take",
            ConversationalKind::Yield => "yield",
            ConversationalKind::Transfer => "transfer",
            ConversationalKind::Backchannel => "backchannel",
            ConversationalKind::CompetitionWin => "competition_win",
            ConversationalKind::CompetitionLoss => "competition_loss",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn is_turn_start(&self) -> bool {
        matches!(self, ConversationalKind::Take | ConversationalKind::Transfer)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConversationalEvent {
    pub time: f64,
    pub kind: ConversationalKind,
    pub actor: SpeakerId,
    pub target: Option<SpeakerId>,
}

impl ConversationalEvent {
    fn new(time: f64, kind: ConversationalKind, actor: usize) -> Self {
        ConversationalEvent {
            time,
            kind,
            actor: SpeakerId(actor),
            target: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ConversationalKind::Transfer => self.target.is_some_and(|t| t != self.actor),
            _ => self.target.is_none(),
        };
        if !ok || !self.time.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "invalid {} event at t={}",
                self.kind.as_str(),
                self.time
            )));
        }
        Ok(())
    }
}

fn sort_events(events: &mut [ConversationalEvent]) {
    events.sort_by(|a, b| {
        a.time
            .total_cmp(&b.time)
            .then(a.kind.cmp(&b.kind))
            .then(a.actor.cmp(&b.actor))
    });
}

/// Classify turn segments into conversational events.
pub fn classify_events(segments: &[TurnSegment], transfer_gap_max: f64) -> Vec<ConversationalEvent> {
    let mut turns: Vec<TurnSegment> = segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Turn)
        .copied()
        .collect();
    turns.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.speaker.cmp(&b.speaker)));
    let mut out: Vec<ConversationalEvent> = segments
        .iter()
        .filter(|s| s.kind == SegmentKind::Backchannel)
        .map(|s| ConversationalEvent::new(s.start, ConversationalKind::Backchannel, s.speaker.0))
        .collect();

    // turn index whose end was followed by a transfer
    let mut handed_over = vec![false; turns.len()];
    for (i, t) in turns.iter().enumerate() {
        let overlapping = turns.iter().enumerate().any(|(j, o)| {
            o.speaker != t.speaker && o.start <= t.start && t.start < o.end && (o.start < t.start || j < i)
        });
        if overlapping {
            continue;
        }
        let prev = turns
            .iter()
            .enumerate()
            .filter(|(j, o)| *j != i && o.speaker != t.speaker && o.end <= t.start)
            .max_by(|a, b| a.1.end.total_cmp(&b.1.end).then(b.0.cmp(&a.0)));
        match prev {
            Some((j, p)) if t.start - p.end <= transfer_gap_max && !handed_over[j] => {
                handed_over[j] = true;
                out.push(ConversationalEvent {
                    time: t.start,
                    kind: ConversationalKind::Transfer,
                    actor: p.speaker,
                    target: Some(t.speaker),
                });
            }
            _ => out.push(ConversationalEvent::new(t.start, ConversationalKind::Take, t.speaker.0)),
        }
    }
    for (i, t) in turns.iter().enumerate() {
        if handed_over[i] {
            continue;
        }
        let survivor = turns
            .iter()
            .filter(|o| o.speaker != t.speaker && o.start < t.end && t.end < o.end)
            .max_by(|a, b| a.end.total_cmp(&b.end).then(b.speaker.cmp(&a.speaker)));
        match survivor {
            Some(w) => {
                out.push(ConversationalEvent::new(t.end, ConversationalKind::CompetitionLoss, t.speaker.0));
                out.push(ConversationalEvent::new(t.end, ConversationalKind::CompetitionWin, w.speaker.0));
            }
            None => out.push(ConversationalEvent::new(t.end, ConversationalKind::Yield, t.speaker.0)),
        }
    }
    sort_events(&mut out);
    out
}

/// Map simulated catalog events to conversational events. Continues and
/// seizes produce nothing; a yield under competition is a competition lost
/// by its actor and won by the lowest-indexed remaining speaker.
pub fn classify_trajectory(traj: &Trajectory, catalog: &EventCatalog) -> Result<Vec<ConversationalEvent>> {
    let states = traj.replay(catalog)?;
    let mut out = Vec::new();
    for (ev, after) in traj.events.iter().zip(&states) {
        let spec = catalog.event(ev.event)?;
        let actor = spec.actor.0;
        match spec.kind {
            EventKind::Take => out.push(ConversationalEvent::new(ev.time, ConversationalKind::Take, actor)),
            EventKind::Yield => out.push(ConversationalEvent::new(ev.time, ConversationalKind::Yield, actor)),
            EventKind::Transfer => {
                if spec.target != Some(spec.actor) {
                    out.push(ConversationalEvent {
                        time: ev.time,
                        kind: ConversationalKind::Transfer,
                        actor: spec.actor,
                        target: spec.target,
                    });
                }
            }
            EventKind::Backchannel => {
                out.push(ConversationalEvent::new(ev.time, ConversationalKind::Backchannel, actor))
            }
            EventKind::Seize => {}
            EventKind::YieldUnderCompetition => {
                let winner = after.speaking().next().ok_or_else(|| {
                    Error::InconsistentUpdate("competition without a remaining speaker".into())
                })?;
                out.push(ConversationalEvent::new(ev.time, ConversationalKind::CompetitionLoss, actor));
                out.push(ConversationalEvent::new(ev.time, ConversationalKind::CompetitionWin, winner));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventCounts {
    pub window_start: f64,
    pub window_length: f64,
    pub take: u64,
    pub transfer: u64,
    #[serde(rename = "yield")]
    pub yield_: u64,
    pub backchannel: u64,
    /// Completed competitions (one per competition-loss).
    pub competition: u64,
    /// Unique actors of take/transfer events.
    pub distinct_speakers: u64,
    /// Turn starts whose actor differs from the previous turn start's actor
    /// in the same window.
    pub speaker_changes: u64,
}

impl EventCounts {
    pub fn empty(window_start: f64, window_length: f64) -> Self {
        EventCounts {
            window_start,
            window_length,
            take: 0,
            transfer: 0,
            yield_: 0,
            backchannel: 0,
            competition: 0,
            distinct_speakers: 0,
            speaker_changes: 0,
        }
    }

    pub fn turns(&self) -> u64 {
        self.take + self.transfer
    }
}

/// Tumbling windows `[k·w, (k+1)·w)` covering `[0, duration)` and every
/// event. Competition wins are not counted separately.
pub fn window_counts(events: &[ConversationalEvent], window: f64, duration: f64) -> Result<Vec<EventCounts>> {
    if !(window > 0.0) || !window.is_finite() {
        return Err(Error::InvalidConfig(format!("window must be positive, got {window}")));
    }
    if let Some(e) = events.iter().find(|e| e.time < 0.0 || !e.time.is_finite()) {
        return Err(Error::InvalidConfig(format!("event time {} outside [0, ∞)", e.time)));
    }
    let last = events.iter().map(|e| (e.time / window).floor() as usize + 1).max().unwrap_or(0);
    let n = ((duration / window).ceil().max(0.0) as usize).max(last);
    let mut out: Vec<EventCounts> = (0..n).map(|k| EventCounts::empty(k as f64 * window, window)).collect();
    let mut actors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut last_actor: Vec<Option<usize>> = vec![None; n];
    let mut sorted: Vec<&ConversationalEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    for e in sorted {
        let k = (e.time / window).floor() as usize;
        let w = &mut out[k];
        match e.kind {
            ConversationalKind::Take => w.take += 1,
            ConversationalKind::Transfer => w.transfer += 1,
            ConversationalKind::Yield => w.yield_ += 1,
            ConversationalKind::Backchannel => w.backchannel += 1,
            ConversationalKind::CompetitionLoss => w.competition += 1,
            ConversationalKind::CompetitionWin => {}
        }
        if e.kind.is_turn_start() {
            let holder = match e.kind {
                ConversationalKind::Transfer => e.target.map_or(e.actor.0, |t| t.0),
                _ => e.actor.0,
            };
            if !actors[k].contains(&holder) {
                actors[k].push(holder);
            }
            if last_actor[k].is_some_and(|a| a != holder) {
                w.speaker_changes += 1;
            }
            last_actor[k] = Some(holder);
        }
    }
    for (w, a) in out.iter_mut().zip(&actors) {
        w.distinct_speakers = a.len() as u64;
    }
    Ok(out)
}

/// Per-minute means of the Table 1 statistics over windows.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MinuteStatistics {
    pub turn_taking: f64,
    pub turn_competitions: f64,
    pub backchannel: f64,
    pub turns_by_different_members: f64,
}

impl MinuteStatistics {
    pub fn as_array(&self) -> [f64; 4] {
        [
            self.turn_taking,
            self.turn_competitions,
            self.backchannel,
            self.turns_by_different_members,
        ]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        MinuteStatistics {
            turn_taking: a[0],
            turn_competitions: a[1],
            backchannel: a[2],
            turns_by_different_members: a[3],
        }
    }
}

pub fn minute_statistics(windows: &[EventCounts]) -> MinuteStatistics {
    if windows.is_empty() {
        return MinuteStatistics::default();
    }
    let minutes: f64 = windows.iter().map(|w| w.window_length).sum::<f64>() / 60.0;
    let sum = |f: &dyn Fn(&EventCounts) -> u64| windows.iter().map(f).sum::<u64>() as f64 / minutes;
    MinuteStatistics {
        turn_taking: sum(&|w| w.turns()),
        turn_competitions: sum(&|w| w.competition),
        backchannel: sum(&|w| w.backchannel),
        turns_by_different_members: sum(&|w| w.speaker_changes),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mjp::{RateVector, StateVector};
    use crate::simulate::gillespie_simulate;
    use ConversationalKind::*;

    fn turn(s: usize, start: f64, end: f64) -> TurnSegment {
        TurnSegment {
            speaker: SpeakerId(s),
            start,
            end,
            kind: SegmentKind::Turn,
        }
    }

    fn kinds(ev: &[ConversationalEvent]) -> Vec<(ConversationalKind, usize)> {
        ev.iter().map(|e| (e.kind, e.actor.0)).collect()
    }

    #[test]
    fn isolated_turn() {
        let ev = classify_events(&[turn(0, 1.0, 4.0)], 1.0);
        assert_eq!(kinds(&ev), [(Take, 0), (Yield, 0)]);
    }

    #[test]
    fn quick_follow_up_is_transfer() {
        let ev = classify_events(&[turn(0, 0.0, 3.0), turn(1, 3.4, 6.0)], 1.0);
        assert_eq!(kinds(&ev), [(Take, 0), (Transfer, 0), (Yield, 1)]);
        assert_eq!(ev[1].target, Some(SpeakerId(1)));
    }

    #[test]
    fn slow_follow_up_is_take() {
        let ev = classify_events(&[turn(0, 0.0, 3.0), turn(1, 4.5, 6.0)], 1.0);
        assert_eq!(kinds(&ev), [(Take, 0), (Yield, 0), (Take, 1), (Yield, 1)]);
    }

    #[test]
    fn overlap_is_competition() {
        // overlap of 2 s, X (0) ends first
        let ev = classify_events(&[turn(0, 0.0, 4.0), turn(1, 2.0, 6.0)], 1.0);
        assert_eq!(
            kinds(&ev),
            [(Take, 0), (CompetitionWin, 1), (CompetitionLoss, 0), (Yield, 1)]
        );
    }

    #[test]
    fn backchannels_pass_through() {
        let bc = TurnSegment {
            speaker: SpeakerId(2),
            start: 1.0,
            end: 1.4,
            kind: SegmentKind::Backchannel,
        };
        let ev = classify_events(&[turn(0, 0.0, 3.0), bc], 1.0);
        assert!(kinds(&ev).contains(&(Backchannel, 2)));
    }

    #[test]
    fn worked_example_window() {
        let ev = classify_events(&[turn(0, 0.0, 3.0), turn(1, 3.2, 6.0), turn(0, 6.5, 9.0)], 1.0);
        let w = window_counts(&ev, 60.0, 60.0).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].turns(), 3);
        assert_eq!(w[0].distinct_speakers, 2);
        assert_eq!(w[0].speaker_changes, 2);
    }

    #[test]
    fn empty_window_is_zero() {
        let w = window_counts(&[], 60.0, 120.0).unwrap();
        assert_eq!(w.len(), 2);
        assert_eq!(w[1], EventCounts::empty(60.0, 60.0));
    }

    #[test]
    fn boundary_goes_to_later_window() {
        let ev = [ConversationalEvent::new(60.0, Take, 0)];
        let w = window_counts(&ev, 60.0, 120.0).unwrap();
        assert_eq!((w[0].take, w[1].take), (0, 1));
    }

    #[test]
    fn trajectory_classification_balances_competitions() {
        let cat = EventCatalog::build(4).unwrap();
        let rates = RateVector::by_kind(&cat, |e| match e.kind {
            EventKind::Take => 0.5,
            EventKind::Yield => 0.3,
            EventKind::Transfer => 0.2,
            EventKind::Backchannel => 0.3,
            EventKind::Seize => 0.2,
            EventKind::YieldUnderCompetition => 0.8,
        })
        .unwrap();
        let traj = gillespie_simulate(&cat, &rates, StateVector::silent(4), 600.0, 3).unwrap();
        let ev = classify_trajectory(&traj, &cat).unwrap();
        let count = |k| ev.iter().filter(|e| e.kind == k).count();
        assert_eq!(count(CompetitionWin), count(CompetitionLoss));
        assert!(count(CompetitionLoss) > 0);
        for e in &ev {
            e.validate().unwrap();
        }
    }
}
