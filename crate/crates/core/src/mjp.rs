//! Conversational state space and the guarded event catalog.
//!
//! The state is the set of speakers currently holding a turn. Events are
//! guarded reactions on that state: each fires only in states where its
//! guard holds, and firing adds the event's delta to the state. Rates are
//! state dependent only through the guards, so the rate of event `v` in
//! state `x` is `guard_v(x) * rate_v`.
//!
//! For `C` speakers the catalog contains `C² + 5C` events, in this order:
//!
//! | block                    | count | guard                                      | delta        |
//! |--------------------------|-------|--------------------------------------------|--------------|
//! | take(c)                  | C     | nobody speaks                              | c on         |
//! | yield(c)                 | C     | c is the only speaker                      | c off        |
//! | transfer(c→d)            | C²    | c speaks, d silent (d = c: c speaks)       | c off, d on  |
//! | backchannel(c)           | C     | c silent, someone else speaks              | none         |
//! | seize(c)                 | C     | c silent, exactly one other speaker        | c on         |
//! | yield-under-competition  | C     | c speaks together with at least one other  | c off        |
//!
//! The diagonal transfer `c→c` is "current speaker continues" and leaves
//! the state unchanged, as does a backchannel.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

/// Largest speaker count a [`StateVector`] can hold.
pub const MAX_SPEAKERS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(pub usize);

impl fmt::Display for SpeakerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Turn-holding status of every speaker, packed into a bit set.
///
/// Bit `c` is set when speaker `c` holds a turn. The packed value doubles as
/// the index of the state in the `2^C` joint state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StateVector {
    bits: u32,
    speakers: u8,
}

impl StateVector {
    pub fn silent(speakers: usize) -> Self {
        assert!(speakers <= MAX_SPEAKERS, "at most {MAX_SPEAKERS} speakers");
        StateVector {
            bits: 0,
            speakers: speakers as u8,
        }
    }

    pub fn from_bools(speaking: &[bool]) -> Result<Self> {
        if speaking.len() > MAX_SPEAKERS {
            return Err(Error::InvalidConfig(format!(
                "{} speakers exceeds the limit of {MAX_SPEAKERS}",
                speaking.len()
            )));
        }
        let bits = speaking
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .fold(0u32, |acc, (c, _)| acc | (1 << c));
        Ok(StateVector {
            bits,
            speakers: speaking.len() as u8,
        })
    }

    /// State with the given joint index (bit `c` = speaker `c` speaking).
    pub fn from_index(index: usize, speakers: usize) -> Self {
        assert!(speakers <= MAX_SPEAKERS, "at most {MAX_SPEAKERS} speakers");
        debug_assert!(speakers == MAX_SPEAKERS || index < (1usize << speakers));
        StateVector {
            bits: index as u32,
            speakers: speakers as u8,
        }
    }

    pub fn index(&self) -> usize {
        self.bits as usize
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers as usize
    }

    pub fn is_speaking(&self, speaker: usize) -> bool {
        self.bits & (1 << speaker) != 0
    }

    pub fn speaking_count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn speaking(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.speaker_count()).filter(move |&c| self.is_speaking(c))
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.speaker_count()).map(|c| self.is_speaking(c)).collect()
    }

    pub fn with(&self, speaker: usize, speaking: bool) -> Self {
        let bits = if speaking {
            self.bits | (1 << speaker)
        } else {
            self.bits & !(1 << speaker)
        };
        StateVector { bits, ..*self }
    }

    /// Doubled indicator encoding: coordinates `2c` and `2c + 1` are the
    /// indicators of "speaker c silent" and "speaker c speaking".
    pub fn encode_indicators(&self) -> Vec<i32> {
        (0..self.speaker_count())
            .flat_map(|c| {
                if self.is_speaking(c) {
                    [0, 1]
                } else {
                    [1, 0]
                }
            })
            .collect()
    }

    pub fn decode_indicators(indicators: &[i32]) -> Result<Self> {
        if indicators.len() % 2 != 0 {
            return Err(Error::InconsistentUpdate(format!(
                "indicator vector of odd length {}",
                indicators.len()
            )));
        }
        let speaking = indicators
            .chunks(2)
            .enumerate()
            .map(|(c, pair)| match pair {
                [1, 0] => Ok(false),
                [0, 1] => Ok(true),
                _ => Err(Error::InconsistentUpdate(format!(
                    "speaker {c} indicator pair {pair:?} is not one-hot"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        StateVector::from_bools(&speaking)
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for c in 0..self.speaker_count() {
            if c > 0 {
                f.write_str(",")?;
            }
            f.write_str(if self.is_speaking(c) { "1" } else { "0" })?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Take,
    Yield,
    Transfer,
    Backchannel,
    Seize,
    YieldUnderCompetition,
}

impl EventKind {
    pub const ALL: [EventKind; 6] = [
        EventKind::Take,
        EventKind::Yield,
        EventKind::Transfer,
        EventKind::Backchannel,
        EventKind::Seize,
        EventKind::YieldUnderCompetition,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Take => "take",
            EventKind::Yield => "yield",
            EventKind::Transfer => "transfer",
            EventKind::Backchannel => "backchannel",
            EventKind::Seize => "seize",
            EventKind::YieldUnderCompetition => "yield_under_competition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        EventKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub id: usize,
    pub kind: EventKind,
    pub actor: SpeakerId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<SpeakerId>,
    #[serde(skip)]
    on: u32,
    #[serde(skip)]
    off: u32,
}

impl EventSpec {
    fn new(id: usize, kind: EventKind, actor: usize, target: Option<usize>) -> Self {
        let (on, off) = match kind {
            EventKind::Take | EventKind::Seize => (1 << actor, 0),
            EventKind::Yield | EventKind::YieldUnderCompetition => (0, 1 << actor),
            EventKind::Transfer => {
                let target = target.expect("transfer has a target");
                if target == actor {
                    (0, 0)
                } else {
                    (1 << target, 1 << actor)
                }
            }
            EventKind::Backchannel => (0, 0),
        };
        EventSpec {
            id,
            kind,
            actor: SpeakerId(actor),
            target: target.map(SpeakerId),
            on,
            off,
        }
    }

    pub fn guard(&self, x: &StateVector) -> bool {
        let actor = self.actor.0;
        let speaks = x.is_speaking(actor);
        let others = x.speaking_count() - usize::from(speaks);
        match self.kind {
            EventKind::Take => x.speaking_count() == 0,
            EventKind::Yield => speaks && others == 0,
            EventKind::Transfer => {
                let target = self.target.expect("transfer has a target").0;
                speaks && (target == actor || !x.is_speaking(target))
            }
            EventKind::Backchannel => !speaks && others >= 1,
            EventKind::Seize => !speaks && others == 1,
            EventKind::YieldUnderCompetition => speaks && others >= 1,
        }
    }

    /// True for events that leave the state unchanged (continue, backchannel).
    pub fn is_self_transition(&self) -> bool {
        self.on == 0 && self.off == 0
    }

    /// Signed per-speaker increment.
    pub fn delta(&self, speakers: usize) -> Vec<i32> {
        (0..speakers)
            .map(|c| {
                i32::from(self.on & (1 << c) != 0) - i32::from(self.off & (1 << c) != 0)
            })
            .collect()
    }

    /// Apply without checking the guard. Callers must have checked it.
    pub(crate) fn apply_unchecked(&self, x: StateVector) -> StateVector {
        StateVector {
            bits: (x.bits & !self.off) | self.on,
            speakers: x.speakers,
        }
    }

    pub fn label(&self) -> String {
        match self.target {
            Some(t) => format!("{}({}->{})", self.kind, self.actor, t),
            None => format!("{}({})", self.kind, self.actor),
        }
    }
}

/// The ordered, guarded event set for a fixed number of speakers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventCatalog {
    speakers: usize,
    events: Vec<EventSpec>,
}

impl EventCatalog {
    pub fn build(speaker_count: usize) -> Result<Self> {
        if speaker_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 speakers, got {speaker_count}"
            )));
        }
        if speaker_count > MAX_SPEAKERS {
            return Err(Error::InvalidConfig(format!(
                "{speaker_count} speakers exceeds the limit of {MAX_SPEAKERS}"
            )));
        }
        let c = speaker_count;
        let mut events = Vec::with_capacity(c * c + 5 * c);
        let mut push = |kind, actor, target| {
            let id = events.len();
            events.push(EventSpec::new(id, kind, actor, target));
        };
        for a in 0..c {
            push(EventKind::Take, a, None);
        }
        for a in 0..c {
            push(EventKind::Yield, a, None);
        }
        for a in 0..c {
            for t in 0..c {
                push(EventKind::Transfer, a, Some(t));
            }
        }
        for a in 0..c {
            push(EventKind::Backchannel, a, None);
        }
        for a in 0..c {
            push(EventKind::Seize, a, None);
        }
        for a in 0..c {
            push(EventKind::YieldUnderCompetition, a, None);
        }
        Ok(EventCatalog {
            speakers: speaker_count,
            events,
        })
    }

    pub fn speaker_count(&self) -> usize {
        self.speakers
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[EventSpec] {
        &self.events
    }

    pub fn event(&self, id: usize) -> Result<&EventSpec> {
        self.events.get(id).ok_or_else(|| {
            Error::InvalidConfig(format!("event id {id} out of range 0..{}", self.len()))
        })
    }

    pub fn state_count(&self) -> usize {
        1usize << self.speakers
    }

    /// Id of the event with the given kind, actor and target.
    pub fn find(&self, kind: EventKind, actor: usize, target: Option<usize>) -> Option<usize> {
        let c = self.speakers;
        if actor >= c {
            return None;
        }
        let id = match (kind, target) {
            (EventKind::Take, None) => actor,
            (EventKind::Yield, None) => c + actor,
            (EventKind::Transfer, Some(t)) if t < c => 2 * c + actor * c + t,
            (EventKind::Backchannel, None) => 2 * c + c * c + actor,
            (EventKind::Seize, None) => 3 * c + c * c + actor,
            (EventKind::YieldUnderCompetition, None) => 4 * c + c * c + actor,
            _ => return None,
        };
        Some(id)
    }

    fn check_state(&self, x: &StateVector) -> Result<()> {
        if x.speaker_count() != self.speakers {
            return Err(Error::DimensionMismatch {
                expected: self.speakers,
                actual: x.speaker_count(),
            });
        }
        Ok(())
    }

    /// Ids of the events whose guards hold at `x`, in id order.
    pub fn active_events(&self, x: &StateVector) -> Result<Vec<usize>> {
        self.check_state(x)?;
        Ok(self.active_unchecked(x).collect())
    }

    pub(crate) fn active_unchecked<'a>(
        &'a self,
        x: &'a StateVector,
    ) -> impl Iterator<Item = usize> + 'a {
        self.events.iter().filter(|e| e.guard(x)).map(|e| e.id)
    }

    pub fn apply_event(&self, x: &StateVector, event: usize) -> Result<StateVector> {
        self.check_state(x)?;
        let spec = self.event(event)?;
        if !spec.guard(x) {
            return Err(Error::GuardViolation {
                event,
                state: x.to_string(),
            });
        }
        Ok(spec.apply_unchecked(*x))
    }

    /// The unique event that moves `from` to a different state `to`, if any.
    pub fn event_for_transition(&self, from: &StateVector, to: &StateVector) -> Option<usize> {
        if from == to {
            return None;
        }
        let on = to.bits & !from.bits;
        let off = from.bits & !to.bits;
        self.events
            .iter()
            .find(|e| e.on == on && e.off == off && e.guard(from))
            .map(|e| e.id)
    }

    /// Active events at `x` that leave it unchanged.
    pub fn self_transition_events(&self, x: &StateVector) -> Vec<usize> {
        self.events
            .iter()
            .filter(|e| e.is_self_transition() && e.guard(x))
            .map(|e| e.id)
            .collect()
    }

    pub fn reaction_matrix(&self) -> ReactionMatrix {
        let rows = 2 * self.speakers;
        let cols = self.events.len();
        let mut entries = vec![0i32; rows * cols];
        for e in &self.events {
            for c in 0..self.speakers {
                let d = i32::from(e.on & (1 << c) != 0) - i32::from(e.off & (1 << c) != 0);
                if d != 0 {
                    // speaking indicator gains d, silent indicator loses d
                    entries[(2 * c) * cols + e.id] = -d;
                    entries[(2 * c + 1) * cols + e.id] = d;
                }
            }
        }
        ReactionMatrix {
            rows,
            cols,
            entries,
        }
    }

    /// Audit listing of the catalog, serializable to JSON.
    pub fn to_document(&self) -> CatalogDocument {
        CatalogDocument {
            speaker_count: self.speakers,
            event_count: self.events.len(),
            events: self.events.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CatalogDocument {
    pub speaker_count: usize,
    pub event_count: usize,
    pub events: Vec<EventSpec>,
}

/// `2C × V` matrix over the doubled indicator encoding. Column `k` is the
/// change of the encoded state when event `k` fires once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReactionMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<i32>,
}

impl ReactionMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> i32 {
        self.entries[row * self.cols + col]
    }

    pub fn column(&self, col: usize) -> Vec<i32> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    /// `A · r`
    pub fn apply(&self, r: &EventVector) -> Result<Vec<i64>> {
        if r.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: r.len(),
            });
        }
        Ok((0..self.rows)
            .map(|row| {
                r.counts()
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| i64::from(self.get(row, k)) * i64::from(n))
                    .sum()
            })
            .collect())
    }

    /// `x' = x + A · r` in the doubled indicator encoding.
    pub fn state_update(&self, x: &StateVector, r: &EventVector) -> Result<StateVector> {
        if 2 * x.speaker_count() != self.rows {
            return Err(Error::DimensionMismatch {
                expected: self.rows / 2,
                actual: x.speaker_count(),
            });
        }
        let delta = self.apply(r)?;
        let updated: Vec<i32> = x
            .encode_indicators()
            .iter()
            .zip(&delta)
            .map(|(&a, &d)| {
                let v = i64::from(a) + d;
                i32::try_from(v).unwrap_or(i32::MAX)
            })
            .collect();
        StateVector::decode_indicators(&updated)
    }
}

/// Number of events of each type in a time window.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventVector(Vec<u32>);

impl EventVector {
    pub fn zeros(events: usize) -> Self {
        EventVector(vec![0; events])
    }

    pub fn one_hot(events: usize, event: usize) -> Self {
        let mut v = vec![0; events];
        v[event] = 1;
        EventVector(v)
    }

    pub fn from_counts(counts: Vec<u32>) -> Self {
        EventVector(counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Base rate per event, events per second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateVector(Vec<f64>);

impl RateVector {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if let Some((i, r)) = rates
            .iter()
            .enumerate()
            .find(|(_, r)| !r.is_finite() || **r < 0.0)
        {
            return Err(Error::Parameter(format!(
                "rate {i} must be finite and non-negative, got {r}"
            )));
        }
        Ok(RateVector(rates))
    }

    pub fn zeros(events: usize) -> Self {
        RateVector(vec![0.0; events])
    }

    /// Uniform rate per event kind.
    pub fn by_kind(catalog: &EventCatalog, rate: impl Fn(&EventSpec) -> f64) -> Result<Self> {
        RateVector::new(catalog.events().iter().map(rate).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, event: usize) -> f64 {
        self.0[event]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_len(&self, catalog: &EventCatalog) -> Result<()> {
        if self.len() != catalog.len() {
            return Err(Error::DimensionMismatch {
                expected: catalog.len(),
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Total active rate `H(x)`.
    pub fn total_active(&self, catalog: &EventCatalog, x: &StateVector) -> f64 {
        catalog.active_unchecked(x).map(|e| self.0[e]).sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}
