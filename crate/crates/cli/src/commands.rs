use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use groupdyn::analysis::{
    format_table, nested_f_test, ols_fit_named, percentile_rates, simulate_and_count, FTest, GroupRecord, OlsFit,
    TableReport,
};
use groupdyn::emission::EmissionParams;
use groupdyn::events::{
    classify_events, classify_trajectory, minute_statistics, window_counts, EventCounts, MinuteStatistics,
    TRANSFER_GAP_MAX,
};
use groupdyn::infer::{rate_psrf, run_chain, run_chains, GibbsConfig, LatentPath};
use groupdyn::io;
use groupdyn::mjp::{EventCatalog, StateVector};
use groupdyn::rng::child_seed;
use groupdyn::segment::{align_streams, observations_from_badges, segment_badges, Alignment, GapMixture};
use groupdyn::simulate::slotted_simulate;
use groupdyn::survival::{covariates_from_counts, fit_hazard_with, HazardFit, SurvivalRecord};
use groupdyn::tasksim::{new_game, play_game, GameLog};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::output::Output;
use crate::{Cli, Command, Failure};

pub const DEFAULT_DT: f64 = 0.1;
/// Question quality of the single game played alongside a session.
pub const SESSION_QUALITY: f64 = 0.5;

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(dt) = cli.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Failure::usage(format!("--dt must be positive, got {dt}")).into());
        }
    }
    let ctx = Ctx { cli, cfg };
    match &cli.command {
        Command::Simulate => ctx.simulate(),
        Command::Infer {
            observations,
            chains,
            sweeps,
            burn_in,
        } => ctx.infer(observations, *chains, *sweeps, *burn_in),
        Command::Segment { badges } => ctx.segment(badges),
        Command::Extract(args) => ctx.extract(args.turns.as_deref(), args.trajectory.as_deref()),
        Command::Survival { records } => ctx.survival(records),
        Command::Table1 { groups } => ctx.table1(groups),
        Command::Tasksim { counts } => ctx.tasksim(counts.as_deref()),
        Command::Report { groups } => ctx.report(groups),
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: RunConfig,
}

impl Ctx<'_> {
    fn dt(&self) -> f64 {
        self.cli.dt.unwrap_or(DEFAULT_DT)
    }

    fn output(&self, command: &'static str) -> anyhow::Result<Output> {
        Output::new(&self.cli.out, command)
    }

    fn finish(&self, out: Output, dt: f64) -> anyhow::Result<()> {
        out.finish(self.cli.seed, dt, &self.cfg)
    }

    fn simulate(&self) -> anyhow::Result<()> {
        let cfg = &self.cfg;
        let dt = self.dt();
        let seed = self.cli.seed;
        let catalog = EventCatalog::build(cfg.speakers)?;
        let rates = cfg.rates.vector(&catalog)?;
        let slots = slotted_simulate(
            &catalog,
            &rates,
            StateVector::silent(cfg.speakers),
            cfg.horizon_s,
            dt,
            child_seed(seed, 0),
        )?;
        let path = LatentPath::from_slots(&slots, &catalog)?;
        let emission = EmissionParams::separated(cfg.speakers, cfg.separation, cfg.sigma)?;
        let obs =
            groupdyn::emission::sample_observations(&path.vocal_statuses(&catalog), &emission, dt, child_seed(seed, 1))?;
        let mut out = self.output("simulate")?;
        out.write("catalog.json", &(io::catalog_json(&catalog)? + "\n"))?;
        out.write("trajectory.csv", &io::trajectory_csv(&slots.to_trajectory(), &catalog)?)?;
        out.write("observations.csv", &io::observations_csv(&obs))?;
        out.write("true_rates.csv", &io::rates_csv(&rates, &catalog)?)?;
        self.finish(out, dt)
    }

    fn infer(
        &self,
        observations: &Path,
        chains: Option<usize>,
        sweeps: Option<usize>,
        burn_in: Option<usize>,
    ) -> anyhow::Result<()> {
        let mut out = self.output("infer")?;
        let text = out.read(observations)?;
        let obs = io::read_observations_csv(&text, self.cli.dt)
            .with_context(|| format!("in {}", observations.display()))?;
        let catalog = EventCatalog::build(obs.speaker_count)?;
        let chains = chains.unwrap_or(self.cfg.chains);
        if chains == 0 {
            return Err(Failure::usage("--chains must be at least 1").into());
        }
        let mut config = GibbsConfig::new(
            sweeps.unwrap_or(self.cfg.sweeps),
            burn_in.unwrap_or(self.cfg.burn_in),
            obs.dt,
            self.cli.seed,
        );
        config.thinning = self.cfg.thinning;
        let runs = if chains == 1 {
            vec![run_chain(&obs, &catalog, &config)?]
        } else {
            run_chains(&obs, &catalog, &config, chains)?
        };
        let psrf = (chains > 1).then(|| rate_psrf(&runs));
        let report = io::chain_report(&runs, &catalog, psrf.as_deref())?;
        out.write_json("chain.json", &report)?;
        out.write("rates.csv", &io::rate_table_csv(&report))?;
        out.write("states.csv", &io::states_csv(&runs[0], obs.speaker_count))?;
        self.finish(out, obs.dt)
    }

    fn segment(&self, dir: &Path) -> anyhow::Result<()> {
        let dt = self.dt();
        let mut out = self.output("segment")?;
        let files = badge_files(dir)?;
        let mut streams = Vec::new();
        for (id, path) in &files {
            let text = out.read(path)?;
            streams.push(io::read_badge_csv(&text, *id, None).with_context(|| format!("in {}", path.display()))?);
        }
        let alignment = align_streams(&streams)?;
        let aligned = alignment.apply(&streams);
        let (mixture, segmentation) = segment_badges(&aligned)?;
        let origin = aligned.iter().map(|s| s.start()).fold(f64::INFINITY, f64::min);
        let end = aligned.iter().map(|s| s.end()).fold(f64::NEG_INFINITY, f64::max);
        let slots = ((end - origin) / dt).ceil().max(1.0) as usize;
        let obs = observations_from_badges(&aligned, origin, dt, slots)?;

        #[derive(Serialize)]
        struct Summary<'a> {
            origin_s: f64,
            alignment: &'a Alignment,
            gap_mixture: &'a GapMixture,
            turns: usize,
            backchannels: usize,
            dropped: usize,
        }
        let turns = segmentation
            .segments
            .iter()
            .filter(|s| s.kind == groupdyn::segment::SegmentKind::Turn)
            .count();
        out.write("turns.csv", &io::turns_csv(&segmentation.segments))?;
        out.write("observations.csv", &io::observations_csv(&obs))?;
        out.write_json(
            "segmentation.json",
            &Summary {
                origin_s: origin,
                alignment: &alignment,
                gap_mixture: &mixture,
                turns,
                backchannels: segmentation.segments.len() - turns,
                dropped: segmentation.dropped,
            },
        )?;
        self.finish(out, dt)
    }

    fn extract(&self, turns: Option<&Path>, trajectory: Option<&Path>) -> anyhow::Result<()> {
        let mut out = self.output("extract")?;
        let (events, duration) = match (turns, trajectory) {
            (Some(path), _) => {
                let text = out.read(path)?;
                let segs = io::read_turns_csv(&text).with_context(|| format!("in {}", path.display()))?;
                let duration = segs.iter().map(|s| s.end).fold(0.0, f64::max);
                (classify_events(&segs, TRANSFER_GAP_MAX), duration)
            }
            (None, Some(path)) => {
                let text = out.read(path)?;
                let (catalog, traj) =
                    io::read_trajectory_csv_auto(&text).with_context(|| format!("in {}", path.display()))?;
                (classify_trajectory(&traj, &catalog)?, traj.horizon)
            }
            (None, None) => return Err(Failure::usage("one of --turns or --trajectory is required").into()),
        };
        let counts = window_counts(&events, self.cfg.window_s, duration)?;
        out.write("events.csv", &io::events_csv(&events))?;
        out.write("counts.csv", &io::counts_csv(&counts))?;
        out.write_json("minute_statistics.json", &minute_statistics(&counts))?;
        self.finish(out, self.dt())
    }

    fn survival(&self, path: &Path) -> anyhow::Result<()> {
        let mut out = self.output("survival")?;
        let text = out.read(path)?;
        let rows = io::read_records_csv(&text).with_context(|| format!("in {}", path.display()))?;
        let records: Vec<SurvivalRecord> = rows.iter().map(|r| r.to_survival()).collect::<Result<_, _>>()?;
        let fit = fit_hazard_with(&records, self.cfg.link)?;
        out.write_json("hazard.json", &HazardReport::new(&fit, records.len()))?;
        self.finish(out, self.dt())
    }

    fn table1(&self, dir: &Path) -> anyhow::Result<()> {
        let mut out = self.output("table1")?;
        let groups = load_groups(dir, &mut out, false)?;
        let table = self.table(&groups)?;
        out.write_json("table1.json", &table)?;
        out.write("table1.txt", &format_table(&table.statistics()))?;
        self.finish(out, self.dt())
    }

    fn table(&self, groups: &[LoadedGroup]) -> anyhow::Result<Table> {
        let records: Vec<GroupRecord> = groups.iter().map(|g| g.record.clone()).collect();
        let events = records[0].rates.len();
        let speakers = io::speakers_for_events(events)
            .ok_or_else(|| Failure::data(format!("{events} rates do not match any speaker count")))?;
        let catalog = EventCatalog::build(speakers)?;
        let mut rows = BTreeMap::new();
        for (i, p) in self.cfg.percentiles.iter().enumerate() {
            let pr = percentile_rates(&records, *p)?;
            let summary = simulate_and_count(
                &catalog,
                &pr.rates,
                self.cfg.minutes,
                self.cfg.replicates,
                child_seed(self.cli.seed, i as u64),
            )?;
            rows.insert(
                format!("{p}%"),
                TableRow {
                    groups: pr.groups,
                    mean: summary.mean,
                    stderr: summary.stderr,
                },
            );
        }
        Ok(Table {
            replicates: self.cfg.replicates,
            minutes: self.cfg.minutes,
            rows,
        })
    }

    fn tasksim(&self, counts: Option<&Path>) -> anyhow::Result<()> {
        let seed = self.cli.seed;
        let mut out = self.output("tasksim")?;
        let mut sweep = String::from("quality,games,mean_questions,max_questions,solved,bad_fraction\n");
        let mut logs: Vec<GameLog> = Vec::new();
        for &q in &self.cfg.qualities {
            let games: Vec<GameLog> = (0..self.cfg.games)
                .map(|g| {
                    let s = child_seed(seed, g as u64);
                    play_game(&new_game(s), q, child_seed(s, 1))
                })
                .collect::<Result<_, _>>()?;
            let n = games.len() as f64;
            let total: usize = games.iter().map(|g| g.question_count()).sum();
            let max = games.iter().map(|g| g.question_count()).max().unwrap_or(0);
            let solved = games.iter().filter(|g| g.solved).count();
            let asked: Vec<_> = games.iter().flat_map(|g| &g.questions).collect();
            let bad = asked.iter().filter(|q| q.bad).count() as f64 / asked.len().max(1) as f64;
            sweep.push_str(&format!("{q},{},{},{max},{solved},{bad}\n", games.len(), total as f64 / n));
            logs.extend(games.into_iter().take(1));
        }
        out.write("sweep.csv", &sweep)?;
        out.write_json("games.json", &logs)?;
        if let Some(path) = counts {
            let text = out.read(path)?;
            let windows = io::read_counts_csv(&text, self.cfg.window_s).with_context(|| format!("in {}", path.display()))?;
            let game = play_game(&new_game(child_seed(seed, u64::MAX)), SESSION_QUALITY, child_seed(seed, u64::MAX - 1))?;
            out.write("records.csv", &io::records_csv(&session_records(&game, &windows)?))?;
        }
        self.finish(out, self.dt())
    }

    fn report(&self, dir: &Path) -> anyhow::Result<()> {
        let mut out = self.output("report")?;
        let groups = load_groups(dir, &mut out, true)?;
        let table = self.table(&groups)?;
        let records: Vec<SurvivalRecord> = groups
            .iter()
            .flat_map(|g| g.records.iter().map(|r| r.to_survival()))
            .collect::<Result<_, _>>()?;
        let fit = fit_hazard_with(&records, self.cfg.link)?;
        let regression = regressions(&groups)?;
        let report = Report {
            groups: groups.iter().map(|g| g.record.id.clone()).collect(),
            table,
            hazard: HazardReport::new(&fit, records.len()),
            regression,
        };
        let mut text = format_table(&report.table.statistics());
        text.push('\n');
        text.push_str(&format!(
            "hazard ({} records): baseline {:.6e}, betas {:?}, variance explained {:.3}\n",
            report.hazard.records, fit.baseline, fit.betas, fit.variance_explained
        ));
        text.push_str(&format!(
            "questions ~ turn_taking: r2 {:.3}\nquestions ~ all four: r2 {:.3}\nnested F {:.3} (df {}, {}), p {:.4}\n",
            report.regression.restricted.r_squared,
            report.regression.full.r_squared,
            report.regression.f_test.f,
            report.regression.f_test.df1,
            report.regression.f_test.df2,
            report.regression.f_test.p_value
        ));
        out.write_json("report.json", &report)?;
        out.write("report.txt", &text)?;
        self.finish(out, self.dt())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TableRow {
    groups: Vec<String>,
    mean: MinuteStatistics,
    stderr: MinuteStatistics,
}

#[derive(Debug, Serialize, Deserialize)]
struct Table {
    replicates: usize,
    minutes: f64,
    rows: BTreeMap<String, TableRow>,
}

impl Table {
    fn statistics(&self) -> TableReport {
        self.rows.iter().map(|(k, r)| (k.clone(), r.mean)).collect()
    }
}

#[derive(Debug, Serialize)]
struct HazardReport {
    records: usize,
    covariates: [&'static str; 4],
    fit: HazardFit,
}

impl HazardReport {
    fn new(fit: &HazardFit, records: usize) -> Self {
        HazardReport {
            records,
            covariates: groupdyn::survival::COVARIATES,
            fit: fit.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Regression {
    restricted: OlsFit,
    full: OlsFit,
    f_test: FTest,
}

#[derive(Debug, Serialize)]
struct Report {
    groups: Vec<String>,
    table: Table,
    hazard: HazardReport,
    regression: Regression,
}

#[derive(Debug, Deserialize)]
struct GroupFile {
    questions: u32,
}

struct LoadedGroup {
    record: GroupRecord,
    records: Vec<io::QuestionRecord>,
}

fn read_required(out: &mut Output, dir: &Path, name: &str) -> anyhow::Result<String> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Failure::data(format!("missing file {}", path.display())).into());
    }
    out.read(&path)
}

/// Group directories in name order. Each holds `group.json` (questions
/// asked), `rates.csv` and `counts.csv`; `records.csv` too when required.
fn load_groups(dir: &Path, out: &mut Output, with_records: bool) -> anyhow::Result<Vec<LoadedGroup>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("cannot read groups directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::data(format!("no group directories in {}", dir.display())).into());
    }
    let mut groups = Vec::new();
    for d in dirs {
        let id = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let group: GroupFile = serde_json::from_str(&read_required(out, &d, "group.json")?)
            .with_context(|| format!("in {}", d.join("group.json").display()))?;
        let rates = io::read_rates_csv(&read_required(out, &d, "rates.csv")?)
            .with_context(|| format!("in {}", d.join("rates.csv").display()))?;
        let windows = io::read_counts_csv(&read_required(out, &d, "counts.csv")?, groupdyn::events::WINDOW)
            .with_context(|| format!("in {}", d.join("counts.csv").display()))?;
        let records = if with_records {
            io::read_records_csv(&read_required(out, &d, "records.csv")?)
                .with_context(|| format!("in {}", d.join("records.csv").display()))?
        } else {
            Vec::new()
        };
        groups.push(LoadedGroup {
            record: GroupRecord {
                id,
                questions: group.questions,
                rates,
                windows,
            },
            records,
        });
    }
    let events = groups[0].record.rates.len();
    if let Some(g) = groups.iter().find(|g| g.record.rates.len() != events) {
        return Err(Failure::data(format!(
            "group {} has {} rates, expected {events}",
            g.record.id,
            g.record.rates.len()
        ))
        .into());
    }
    Ok(groups)
}

/// Questions asked against per-minute statistics: turn taking alone, then
/// all four statistics.
fn regressions(groups: &[LoadedGroup]) -> anyhow::Result<Regression> {
    let stats: Vec<[f64; 4]> = groups
        .iter()
        .map(|g| minute_statistics(&g.record.windows).as_array())
        .collect();
    let y: Vec<f64> = groups.iter().map(|g| f64::from(g.record.questions)).collect();
    let names = ["turn_taking", "turn_competitions", "backchannel", "turns_by_different_members"];
    let design = |k: usize| DMatrix::from_fn(stats.len(), k, |i, j| stats[i][j]);
    let all: Vec<String> = names.iter().map(|s| s.to_string()).collect();
    let restricted = ols_fit_named(&design(1), &y, &all[..1])?;
    let full = ols_fit_named(&design(4), &y, &all)?;
    let f_test = nested_f_test(&restricted, &full)?;
    Ok(Regression {
        restricted,
        full,
        f_test,
    })
}

/// One game spread evenly over a session: question `k` occupies the `k`-th
/// equal share of the session, with covariates from the window holding its
/// midpoint.
fn session_records(game: &GameLog, windows: &[EventCounts]) -> anyhow::Result<Vec<io::QuestionRecord>> {
    let first = windows
        .first()
        .ok_or_else(|| Failure::data("counts file has no windows"))?;
    let start = first.window_start;
    let end = windows.last().map_or(start, |w| w.window_start + w.window_length);
    let n = game.questions.len().max(1) as f64;
    let interval = (end - start) / n;
    Ok(game
        .questions
        .iter()
        .enumerate()
        .map(|(k, q)| {
            let mid = start + (k as f64 + 0.5) * interval;
            let w = windows
                .iter()
                .find(|w| mid >= w.window_start && mid < w.window_start + w.window_length)
                .unwrap_or(first);
            let c = covariates_from_counts(w);
            io::QuestionRecord {
                before: q.remaining_before as f64 / groupdyn::tasksim::ITEMS as f64,
                after: q.remaining_after as f64 / groupdyn::tasksim::ITEMS as f64,
                interval,
                rates: [c[0], c[1], c[2], c[3]],
            }
        })
        .collect())
}

/// `badge_<id>.csv` files sorted by id; ids must be 0, 1, 2, ...
fn badge_files(dir: &Path) -> anyhow::Result<Vec<(usize, PathBuf)>> {
    let mut files: Vec<(usize, PathBuf)> = fs::read_dir(dir)
        .with_context(|| format!("cannot read badge directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let id = name.strip_prefix("badge_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((id, p))
        })
        .collect();
    files.sort();
    if files.len() < 2 {
        return Err(Failure::data(format!("need at least 2 badge_<id>.csv files in {}", dir.display())).into());
    }
    if let Some((i, (id, _))) = files.iter().enumerate().find(|(i, (id, _))| i != id) {
        return Err(Failure::data(format!("badge ids must be 0..{}; found {id} at position {i}", files.len())).into());
    }
    Ok(files)
}
