//! Hidden-profile 20-questions game.
//!
//! Forty candidate people, ten held by each of four members, each with a
//! height (150–200 cm), weight (45–110 kg) and test score (0–100). Questions
//! are threshold predicates `attribute > threshold`; thresholds are
//! midpoints between consecutive distinct values among the remaining items.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const ITEMS: usize = 40;
pub const MEMBERS: usize = 4;
pub const QUESTION_LIMIT: usize = 30;
/// Worst-case remaining items, relative to the best available split, at
/// which a question counts as bad.
pub const BAD_QUESTION_RATIO: f64 = 1.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Height,
    Weight,
    Score,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Height, Attribute::Weight, Attribute::Score];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub height: f64,
    pub weight: f64,
    pub score: f64,
    pub owner: usize,
}

impl Item {
    pub fn get(&self, a: Attribute) -> f64 {
        match a {
            Attribute::Height => self.height,
            Attribute::Weight => self.weight,
            Attribute::Score => self.score,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameState {
    pub items: Vec<Item>,
    pub remaining: Vec<usize>,
    pub answer: usize,
    pub questions_asked: usize,
}

impl GameState {
    pub fn solved(&self) -> bool {
        self.remaining.len() == 1
    }

    /// Remaining items held by each member.
    pub fn remaining_by_owner(&self) -> [usize; MEMBERS] {
        let mut out = [0; MEMBERS];
        for &i in &self.remaining {
            out[self.items[i].owner] += 1;
        }
        out
    }

    /// Answer the question truthfully and drop the inconsistent side.
    pub fn ask(&mut self, q: &Question) -> bool {
        let truth = q.holds(&self.items[self.answer]);
        let items = &self.items;
        self.remaining.retain(|i| q.holds(&items[*i]) == truth);
        self.questions_asked += 1;
        truth
    }
}

pub fn new_game(seed: u64) -> GameState {
    let mut r = rng::seeded(seed);
    let items = (0..ITEMS)
        .map(|i| Item {
            height: r.random_range(150.0..200.0),
            weight: r.random_range(45.0..110.0),
            score: r.random_range(0.0..100.0),
            owner: i / (ITEMS / MEMBERS),
        })
        .collect();
    GameState {
        items,
        remaining: (0..ITEMS).collect(),
        answer: r.random_range(0..ITEMS),
        questions_asked: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub attribute: Attribute,
    pub threshold: f64,
    /// Remaining items for which the predicate holds.
    pub yes_count: usize,
    /// No threshold separates the remaining items.
    pub degenerate: bool,
}

impl Question {
    pub fn holds(&self, item: &Item) -> bool {
        item.get(self.attribute) > self.threshold
    }

    pub fn worst_case(&self, n: usize) -> usize {
        self.yes_count.max(n - self.yes_count)
    }
}

/// Every non-trivial question over the remaining items, in attribute then
/// threshold order.
pub fn candidate_questions(state: &GameState) -> Vec<Question> {
    let mut out = Vec::new();
    for a in Attribute::ALL {
        let mut v: Vec<f64> = state.remaining.iter().map(|i| state.items[*i].get(a)).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        for w in v.windows(2) {
            let threshold = 0.5 * (w[0] + w[1]);
            let yes_count = state
                .remaining
                .iter()
                .filter(|i| state.items[**i].get(a) > threshold)
                .count();
            out.push(Question {
                attribute: a,
                threshold,
                yes_count,
                degenerate: false,
            });
        }
    }
    out
}

fn closest_to(state: &GameState, target: f64) -> Result<Question> {
    let n = state.remaining.len();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 remaining items, got {n}")));
    }
    let candidates = candidate_questions(state);
    // strict comparison keeps the first (lowest attribute, lowest threshold)
    let mut best: Option<Question> = None;
    for q in candidates {
        let better = best.is_none_or(|b| (q.yes_count as f64 - target).abs() < (b.yes_count as f64 - target).abs());
        if better {
            best = Some(q);
        }
    }
    Ok(best.unwrap_or_else(|| {
        let first = state.items[state.remaining[0]].get(Attribute::Height);
        Question {
            attribute: Attribute::Height,
            threshold: first,
            yes_count: 0,
            degenerate: true,
        }
    }))
}

/// The threshold question whose yes-set is closest to half the remaining
/// items.
pub fn optimal_halving_question(state: &GameState) -> Result<Question> {
    closest_to(state, state.remaining.len() as f64 / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionLog {
    pub attribute: Attribute,
    pub threshold: f64,
    pub answer: bool,
    pub remaining_before: usize,
    pub remaining_after: usize,
    pub worst_case: usize,
    pub optimal_worst_case: usize,
    pub bad: bool,
}

impl QuestionLog {
    pub fn eliminated_fraction(&self) -> f64 {
        1.0 - self.remaining_after as f64 / self.remaining_before as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameLog {
    pub quality: f64,
    pub answer: usize,
    pub questions: Vec<QuestionLog>,
    pub solved: bool,
    pub aborted: bool,
}

impl GameLog {
    pub fn question_count(&self) -> usize {
        self.questions.len()
    }
}

/// Play until one item remains. With quality `q`, each question aims for a
/// yes-fraction `0.5 + (1 − q)·u`, `u ~ U(−0.5, 0.5)`, and the candidate
/// closest to that target is asked; `q = 1` is optimal halving.
pub fn play_game(state: &GameState, quality: f64, seed: u64) -> Result<GameLog> {
    if !(0.0..=1.0).contains(&quality) {
        return Err(Error::InvalidConfig(format!("quality must be in [0, 1], got {quality}")));
    }
    let mut r = rng::seeded(seed);
    play_with(state.clone(), quality, &mut r)
}

fn play_with(mut state: GameState, quality: f64, r: &mut Rng) -> Result<GameLog> {
    let mut log = Vec::new();
    let mut aborted = false;
    while !state.solved() {
        if log.len() >= QUESTION_LIMIT {
            aborted = true;
            break;
        }
        let n = state.remaining.len();
        let optimal = optimal_halving_question(&state)?;
        if optimal.degenerate {
            aborted = true;
            break;
        }
        let u: f64 = r.random_range(-0.5..0.5);
        let target = ((0.5 + (1.0 - quality) * u) * n as f64).clamp(1.0, (n - 1) as f64);
        let q = closest_to(&state, target)?;
        let worst_case = q.worst_case(n);
        let optimal_worst_case = optimal.worst_case(n);
        let answer = state.ask(&q);
        log.push(QuestionLog {
            attribute: q.attribute,
            threshold: q.threshold,
            answer,
            remaining_before: n,
            remaining_after: state.remaining.len(),
            worst_case,
            optimal_worst_case,
            bad: worst_case as f64 >= BAD_QUESTION_RATIO * optimal_worst_case as f64,
        });
    }
    Ok(GameLog {
        quality,
        answer: state.answer,
        questions: log,
        solved: state.solved(),
        aborted,
    })
}

/// Question quality implied by an eliminated fraction: 1 at one half,
/// 0 at either extreme.
pub fn quality_from_fraction(fraction: f64) -> f64 {
    (1.0 - 2.0 * (fraction - 0.5).abs()).clamp(0.0, 1.0)
}

/// Mean question count over `games` seeded games at one quality level.
pub fn mean_questions(quality: f64, games: usize, seed: u64) -> Result<f64> {
    let counts: Vec<usize> = (0..games)
        .into_par_iter()
        .map(|g| {
            let s = rng::child_seed(seed, g as u64);
            play_game(&new_game(s), quality, rng::child_seed(s, 1)).map(|l| l.question_count())
        })
        .collect::<Result<_>>()?;
    Ok(counts.iter().sum::<usize>() as f64 / games.max(1) as f64)
}
