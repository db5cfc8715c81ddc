use std::path::Path;

use anyhow::Context;
use groupdyn::mjp::{EventCatalog, EventKind, RateVector};
use groupdyn::survival::Link;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Per-event rate for each event kind. Transfers to oneself (continuing a
/// turn) get `continue_`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KindRates {
    pub take: f64,
    #[serde(rename = "yield")]
    pub yield_: f64,
    pub transfer: f64,
    #[serde(rename = "continue")]
    pub continue_: f64,
    pub backchannel: f64,
    pub seize: f64,
    pub yield_under_competition: f64,
}

impl Default for KindRates {
    fn default() -> Self {
        KindRates {
            take: 0.1,
            yield_: 0.1,
            transfer: 0.06,
            continue_: 0.0,
            backchannel: 0.05,
            seize: 0.02,
            yield_under_competition: 0.5,
        }
    }
}

impl KindRates {
    pub fn vector(&self, catalog: &EventCatalog) -> groupdyn::Result<RateVector> {
        RateVector::by_kind(catalog, |e| match e.kind {
            EventKind::Take => self.take,
            EventKind::Yield => self.yield_,
            EventKind::Transfer if e.target == Some(e.actor) => self.continue_,
            EventKind::Transfer => self.transfer,
            EventKind::Backchannel => self.backchannel,
            EventKind::Seize => self.seize,
            EventKind::YieldUnderCompetition => self.yield_under_competition,
        })
    }
}

/// Every tunable of every command. Loaded from TOML; absent keys keep
/// their defaults. Seed and slot width come from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub speakers: usize,
    pub horizon_s: f64,
    /// Speaking-vs-silent shift of the synthetic emissions, in noise sds.
    pub separation: f64,
    pub sigma: f64,
    pub rates: KindRates,
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub window_s: f64,
    pub percentiles: Vec<f64>,
    pub minutes: f64,
    pub replicates: usize,
    pub games: usize,
    pub qualities: Vec<f64>,
    pub link: Link,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            speakers: 4,
            horizon_s: 1800.0,
            separation: 3.0,
            sigma: 1.0,
            rates: KindRates::default(),
            sweeps: 2000,
            burn_in: 500,
            thinning: 1,
            chains: 1,
            window_s: groupdyn::events::WINDOW,
            percentiles: vec![25.0, 50.0, 75.0],
            minutes: 10.0,
            replicates: 200,
            games: 200,
            qualities: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            link: Link::Additive,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))
            .map_err(|e| Failure::data(format!("{e:#}")))?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let positive = [
            ("horizon_s", self.horizon_s),
            ("sigma", self.sigma),
            ("window_s", self.window_s),
            ("minutes", self.minutes),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::usage(format!("{name} must be positive, got {v}")).into());
            }
        }
        if self.chains == 0 || self.replicates == 0 || self.games == 0 {
            return Err(Failure::usage("chains, replicates and games must be at least 1").into());
        }
        if self.qualities.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Failure::usage("qualities must lie in [0, 1]").into());
        }
        Ok(())
    }
}
