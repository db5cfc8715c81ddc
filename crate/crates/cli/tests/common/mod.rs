#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use groupdyn::io;
use groupdyn::rng;
use groupdyn::segment::{BadgeSample, BadgeStream};
use rand::Rng as _;

pub fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_groupdyn"))
}

/// Run the binary with `root` as working directory.
pub fn run(root: &Path, args: &[&str]) -> Output {
    Command::new(bin())
        .current_dir(root)
        .args(args)
        .output()
        .expect("spawn groupdyn")
}

pub fn run_ok(root: &Path, args: &[&str]) -> Output {
    let out = run(root, args);
    assert!(
        out.status.success(),
        "groupdyn {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().display().to_string();
                out.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Synthetic badge recordings at 50 Hz. Speakers take turns made of voiced
/// bursts; every badge also hears shared loud room events, which give the
/// alignment something to lock onto. Badge `k`'s clock runs `offsets[k]`
/// seconds ahead.
pub fn synthetic_badges(speakers: usize, duration: f64, offsets: &[f64], seed: u64) -> Vec<BadgeStream> {
    let period = 0.02;
    let mut r = rng::seeded(seed);
    let n = (duration / period) as usize;
    let mut voiced = vec![vec![false; n]; speakers];
    let mut t = 1.0;
    let mut speaker = 0;
    while t < duration - 8.0 {
        let turn_end = t + r.random_range(2.0..6.0);
        let mut s = t;
        while s < turn_end {
            let e = (s + r.random_range(0.15..0.4)).min(turn_end);
            for i in (s / period) as usize..(e / period) as usize {
                voiced[speaker][i] = true;
            }
            s = e + r.random_range(0.08..0.25);
        }
        t = turn_end + r.random_range(1.0..3.0);
        speaker = (speaker + 1 + r.random_range(0..speakers - 1)) % speakers;
    }
    let mut room = vec![false; n];
    let mut t = r.random_range(1.0..4.0);
    while t < duration - 1.0 {
        for v in room.iter_mut().take(((t + 0.2) / period) as usize).skip((t / period) as usize) {
            *v = true;
        }
        t += r.random_range(3.0..7.0);
    }
    (0..speakers)
        .map(|k| BadgeStream {
            badge: k,
            period,
            samples: (0..n)
                .map(|i| {
                    let others = (0..speakers).any(|j| j != k && voiced[j][i]);
                    let base = r.random_range(0.5..1.0);
                    let audio = if room[i] {
                        40.0 + base
                    } else if voiced[k][i] {
                        8.0 + base
                    } else if others {
                        2.0 + base
                    } else {
                        base
                    };
                    BadgeSample {
                        timestamp: i as f64 * period + offsets.get(k).copied().unwrap_or(0.0),
                        audio_var: audio,
                        motion_var: r.random_range(0.1..0.3) + if voiced[k][i] { 0.5 } else { 0.0 },
                        ir_detected: if i % 25 == 0 { vec![(k + 1) % speakers] } else { vec![] },
                    }
                })
                .collect(),
        })
        .collect()
}

pub fn write_badges(dir: &Path, streams: &[BadgeStream]) {
    fs::create_dir_all(dir).unwrap();
    for s in streams {
        fs::write(dir.join(format!("badge_{}.csv", s.badge)), io::badge_csv(s)).unwrap();
    }
}

/// Light settings for fixture sessions.
pub const SESSION_CONFIG: &str = "horizon_s = 600.0\ngames = 5\nqualities = [0.5]\nreplicates = 40\n";

/// Build `n` group directories under `root/groups` through the CLI:
/// simulate a session, extract its counts, play the task alongside it.
/// Rates are the simulated truth; questions asked are the session game's.
pub fn build_groups(root: &Path, n: usize) -> PathBuf {
    let groups = root.join("groups");
    for g in 0..n {
        let name = format!("g{g:02}");
        let cfg = format!(
            "{SESSION_CONFIG}[rates]\ntake = {}\nbackchannel = {}\nseize = {}\n",
            0.05 + 0.01 * g as f64,
            0.02 + 0.005 * g as f64,
            0.01 + 0.002 * (n - g) as f64
        );
        let work = root.join("work").join(&name);
        fs::create_dir_all(&work).unwrap();
        fs::write(work.join("config.toml"), cfg).unwrap();
        let w = |p: &str| format!("work/{name}/{p}");
        let seed = g.to_string();
        run_ok(root, &["--seed", &seed, "--config", &w("config.toml"), "--out", &w("sim"), "simulate"]);
        run_ok(root, &["--config", &w("config.toml"), "--out", &w("ex"), "extract", "--trajectory", &w("sim/trajectory.csv")]);
        run_ok(
            root,
            &["--seed", &seed, "--config", &w("config.toml"), "--out", &w("ts"), "tasksim", "--counts", &w("ex/counts.csv")],
        );
        let dir = groups.join(&name);
        fs::create_dir_all(&dir).unwrap();
        fs::copy(work.join("sim/true_rates.csv"), dir.join("rates.csv")).unwrap();
        fs::copy(work.join("ex/counts.csv"), dir.join("counts.csv")).unwrap();
        fs::copy(work.join("ts/records.csv"), dir.join("records.csv")).unwrap();
        let questions = fs::read_to_string(dir.join("records.csv")).unwrap().lines().count() - 1;
        fs::write(dir.join("group.json"), format!("{{\"questions\": {questions}}}\n")).unwrap();
    }
    groups
}
