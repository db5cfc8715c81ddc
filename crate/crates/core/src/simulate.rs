//! Exact and slotted simulation of the turn-taking jump process, and the
//! continuous-time trajectory likelihood.
//!
//! The slotted process approximates the jump process on a grid of width
//! `dt`: at most one event per slot, drawn from [`slot_event_distribution`].
//! Slot `n` covers `[n·dt, (n+1)·dt)`; its event (if any) is stamped at the
//! slot start and the state reported for slot `n` is the state after it.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mjp::{EventCatalog, RateVector, StateVector};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimedEvent {
    pub time: f64,
    pub event: usize,
}

/// A continuous-time event sequence starting from `initial_state`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_state: StateVector,
    pub events: Vec<TimedEvent>,
    pub horizon: f64,
}

impl Trajectory {
    /// Replay the events, checking ordering and guards. Returns the state
    /// entered after each event.
    pub fn replay(&self, catalog: &EventCatalog) -> Result<Vec<StateVector>> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let mut x = self.initial_state;
        let mut last = f64::NEG_INFINITY;
        let mut states = Vec::with_capacity(self.events.len());
        for ev in &self.events {
            if !(ev.time > last) || ev.time < 0.0 || ev.time > self.horizon {
                return Err(Error::InvalidConfig(format!(
                    "event time {} out of order or outside [0, {}]",
                    ev.time, self.horizon
                )));
            }
            last = ev.time;
            x = catalog.apply_event(&x, ev.event)?;
            states.push(x);
        }
        Ok(states)
    }

    pub fn final_state(&self, catalog: &EventCatalog) -> Result<StateVector> {
        Ok(self
            .replay(catalog)?
            .last()
            .copied()
            .unwrap_or(self.initial_state))
    }

    /// Piecewise-constant state path as `(start, end, state)` segments.
    pub fn segments(&self, catalog: &EventCatalog) -> Result<Vec<(f64, f64, StateVector)>> {
        let states = self.replay(catalog)?;
        let mut out = Vec::with_capacity(states.len() + 1);
        let mut t = 0.0;
        let mut x = self.initial_state;
        for (ev, next) in self.events.iter().zip(states) {
            if ev.time > t {
                out.push((t, ev.time, x));
            }
            t = ev.time;
            x = next;
        }
        if self.horizon > t {
            out.push((t, self.horizon, x));
        }
        Ok(out)
    }
}

/// A slotted event sequence: at most one event per slot of width `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotTrajectory {
    pub initial_state: StateVector,
    pub slot_events: Vec<Option<usize>>,
    pub dt: f64,
}

impl SlotTrajectory {
    /// State after each slot's event. Fails on a guard violation.
    pub fn states(&self, catalog: &EventCatalog) -> Result<Vec<StateVector>> {
        let mut x = self.initial_state;
        self.slot_events
            .iter()
            .map(|e| {
                if let Some(e) = e {
                    x = catalog.apply_event(&x, *e)?;
                }
                Ok(x)
            })
            .collect()
    }

    pub fn horizon(&self) -> f64 {
        self.slot_events.len() as f64 * self.dt
    }

    /// Events stamped at their slot start.
    pub fn to_trajectory(&self) -> Trajectory {
        Trajectory {
            initial_state: self.initial_state,
            events: self
                .slot_events
                .iter()
                .enumerate()
                .filter_map(|(n, e)| {
                    e.map(|event| TimedEvent {
                        time: n as f64 * self.dt,
                        event,
                    })
                })
                .collect(),
            horizon: self.horizon(),
        }
    }

    pub fn event_counts(&self, events: usize) -> Vec<u64> {
        let mut counts = vec![0u64; events];
        for e in self.slot_events.iter().flatten() {
            counts[*e] += 1;
        }
        counts
    }
}

pub fn gillespie_simulate(
    catalog: &EventCatalog,
    rates: &RateVector,
    x0: StateVector,
    horizon: f64,
    seed: u64,
) -> Result<Trajectory> {
    gillespie_simulate_with(catalog, rates, x0, horizon, &mut rng::seeded(seed))
}

/// Direct-method exact simulation.
pub fn gillespie_simulate_with(
    catalog: &EventCatalog,
    rates: &RateVector,
    x0: StateVector,
    horizon: f64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    rates.check_len(catalog)?;
    if x0.speaker_count() != catalog.speaker_count() {
        return Err(Error::DimensionMismatch {
            expected: catalog.speaker_count(),
            actual: x0.speaker_count(),
        });
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }
    let table = ActiveTable::new(catalog, rates);
    let mut x = x0;
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        let (active, total) = table.get(&x);
        if total <= 0.0 {
            break;
        }
        let u: f64 = rng.random();
        t += -(1.0 - u).ln() / total;
        if t > horizon {
            break;
        }
        let event = pick(active, total, rng);
        x = catalog.event(event)?.apply_unchecked(x);
        events.push(TimedEvent { time: t, event });
    }
    Ok(Trajectory {
        initial_state: x0,
        events,
        horizon,
    })
}

fn pick(active: &[(usize, f64)], total: f64, rng: &mut Rng) -> usize {
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for &(e, h) in active {
        acc += h;
        if target < acc {
            return e;
        }
    }
    // rounding: fall back to the last positive-rate event
    active
        .iter()
        .rev()
        .find(|(_, h)| *h > 0.0)
        .map(|(e, _)| *e)
        .expect("total rate is positive")
}

/// Positive-rate active events and total rate for every joint state.
pub(crate) struct ActiveTable {
    per_state: Vec<(Vec<(usize, f64)>, f64)>,
}

impl ActiveTable {
    pub(crate) fn new(catalog: &EventCatalog, rates: &RateVector) -> Self {
        let c = catalog.speaker_count();
        let per_state = (0..catalog.state_count())
            .map(|i| {
                let x = StateVector::from_index(i, c);
                let active: Vec<(usize, f64)> = catalog
                    .active_unchecked(&x)
                    .map(|e| (e, rates.get(e)))
                    .filter(|(_, h)| *h > 0.0)
                    .collect();
                let total = active.iter().map(|(_, h)| h).sum();
                (active, total)
            })
            .collect();
        ActiveTable { per_state }
    }

    pub(crate) fn get(&self, x: &StateVector) -> (&[(usize, f64)], f64) {
        let (a, t) = &self.per_state[x.index()];
        (a, *t)
    }
}

/// Outcome probabilities for one slot of width `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDistribution {
    pub no_event: f64,
    /// `(event id, probability)` for every active event, in id order.
    pub events: Vec<(usize, f64)>,
}

impl SlotDistribution {
    pub fn total(&self) -> f64 {
        self.no_event + self.events.iter().map(|(_, p)| p).sum::<f64>()
    }

    pub fn probability(&self, event: Option<usize>) -> f64 {
        match event {
            None => self.no_event,
            Some(e) => self
                .events
                .iter()
                .find(|(id, _)| *id == e)
                .map_or(0.0, |(_, p)| *p),
        }
    }
}

/// `P(no event) = exp(−H·dt)` and `P(i) = (h_i / H)·(1 − exp(−H·dt))`,
/// where `H` is the total rate of the events active at `x`.
pub fn slot_event_distribution(
    catalog: &EventCatalog,
    x: &StateVector,
    rates: &RateVector,
    dt: f64,
) -> Result<SlotDistribution> {
    rates.check_len(catalog)?;
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidConfig(format!("dt must be positive, got {dt}")));
    }
    let active = catalog.active_events(x)?;
    let total: f64 = active.iter().map(|&e| rates.get(e)).sum();
    if total <= 0.0 {
        return Ok(SlotDistribution {
            no_event: 1.0,
            events: active.into_iter().map(|e| (e, 0.0)).collect(),
        });
    }
    let fire = -(-total * dt).exp_m1();
    let events: Vec<(usize, f64)> = active
        .into_iter()
        .map(|e| (e, rates.get(e) / total * fire))
        .collect();
    // no-event takes the remainder so the total is exactly one up to rounding
    let no_event = (-total * dt).exp();
    Ok(SlotDistribution { no_event, events })
}

pub fn slotted_simulate(
    catalog: &EventCatalog,
    rates: &RateVector,
    x0: StateVector,
    horizon: f64,
    dt: f64,
    seed: u64,
) -> Result<SlotTrajectory> {
    slotted_simulate_with(catalog, rates, x0, horizon, dt, &mut rng::seeded(seed))
}

/// Slot count is `round(horizon / dt)`.
pub fn slotted_simulate_with(
    catalog: &EventCatalog,
    rates: &RateVector,
    x0: StateVector,
    horizon: f64,
    dt: f64,
    rng: &mut Rng,
) -> Result<SlotTrajectory> {
    rates.check_len(catalog)?;
    if !(dt > 0.0) || !(horizon > 0.0) || !dt.is_finite() || !horizon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "dt and horizon must be positive, got dt={dt}, horizon={horizon}"
        )));
    }
    let slots = (horizon / dt).round() as usize;
    let dists: Vec<SlotDistribution> = (0..catalog.state_count())
        .map(|i| {
            slot_event_distribution(
                catalog,
                &StateVector::from_index(i, catalog.speaker_count()),
                rates,
                dt,
            )
        })
        .collect::<Result<_>>()?;
    let mut x = x0;
    let mut slot_events = Vec::with_capacity(slots);
    for _ in 0..slots {
        let dist = &dists[x.index()];
        let u: f64 = rng.random();
        let mut acc = dist.no_event;
        let mut chosen = None;
        if u >= acc {
            for &(e, p) in &dist.events {
                acc += p;
                if u < acc {
                    chosen = Some(e);
                    break;
                }
            }
            if chosen.is_none() {
                chosen = dist.events.iter().rev().find(|(_, p)| *p > 0.0).map(|(e, _)| *e);
            }
        }
        if let Some(e) = chosen {
            x = catalog.event(e)?.apply_unchecked(x);
        }
        slot_events.push(chosen);
    }
    Ok(SlotTrajectory {
        initial_state: x0,
        slot_events,
        dt,
    })
}

/// Log density of a continuous-time trajectory:
/// `Σ log h_{v_i} − ∫ H(x(t)) dt` with `H` the total active rate.
pub fn trajectory_loglik(
    traj: &Trajectory,
    catalog: &EventCatalog,
    rates: &RateVector,
) -> Result<f64> {
    rates.check_len(catalog)?;
    let states = traj.replay(catalog)?;
    let mut ll = 0.0;
    let mut x = traj.initial_state;
    let mut t = 0.0;
    for (ev, next) in traj.events.iter().zip(states) {
        ll -= rates.total_active(catalog, &x) * (ev.time - t);
        let h = rates.get(ev.event);
        if h <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        ll += h.ln();
        t = ev.time;
        x = next;
    }
    ll -= rates.total_active(catalog, &x) * (traj.horizon - t);
    Ok(ll)
}

/// Per-event occurrence counts and guard-active exposure time.
#[derive(Debug, Clone, PartialEq)]
pub struct RateStatistics {
    pub counts: Vec<u64>,
    pub exposure: Vec<f64>,
}

impl RateStatistics {
    /// `count / exposure`, zero where the event was never exposed.
    pub fn mle(&self) -> RateVector {
        RateVector::new(
            self.counts
                .iter()
                .zip(&self.exposure)
                .map(|(&n, &e)| if e > 0.0 { n as f64 / e } else { 0.0 })
                .collect(),
        )
        .expect("counts and exposures are non-negative")
    }
}

pub fn rate_statistics(traj: &Trajectory, catalog: &EventCatalog) -> Result<RateStatistics> {
    let mut counts = vec![0u64; catalog.len()];
    let mut exposure = vec![0.0; catalog.len()];
    for (start, end, x) in traj.segments(catalog)? {
        for e in catalog.active_unchecked(&x) {
            exposure[e] += end - start;
        }
    }
    for ev in &traj.events {
        counts[ev.event] += 1;
    }
    Ok(RateStatistics { counts, exposure })
}
