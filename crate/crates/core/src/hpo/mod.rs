//! Bayesian hyperparameter search over a small enumerable grid: a Gaussian
//! process surrogate on ordinal coordinates and expected improvement,
//! maximized exactly by enumeration.

mod gp;

use std::time::Instant;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forecaster::Hyperparameters;
pub use gp::GaussianProcess;

pub const DEFAULT_N_INIT: usize = 5;
pub const DEFAULT_INITIAL_BUDGET: usize = 15;
pub const DEFAULT_ADAPTATION_BUDGET: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum HpoError {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("every point of the search space has been evaluated")]
    ExhaustedSpace,
    #[error("budget must be at least 1")]
    ZeroBudget,
    #[error("objective returned a non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("surrogate fit failed: {0}")]
    Surrogate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub learning_rate_choices: Vec<f64>,
    pub dropout_rate_choices: Vec<f64>,
    pub n_units_choices: Vec<usize>,
    pub structural_frozen: bool,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            learning_rate_choices: vec![0.0001, 0.001, 0.01],
            dropout_rate_choices: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            n_units_choices: (1..=16).map(|k| 32 * k).collect(),
            structural_frozen: false,
        }
    }
}

impl SearchSpace {
    /// `lo, lo + step, ...` up to and including `hi`.
    pub fn units_range(lo: usize, hi: usize, step: usize) -> Vec<usize> {
        (lo..=hi).step_by(step.max(1)).collect()
    }

    /// The same rates with `n_units` pinned, for adaptation-time tuning.
    pub fn frozen(&self, n_units: usize) -> Self {
        Self { n_units_choices: vec![n_units], structural_frozen: true, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        let bad = |m: &str| Err(HpoError::InvalidSpace(m.to_string()));
        if self.learning_rate_choices.is_empty() || self.dropout_rate_choices.is_empty() || self.n_units_choices.is_empty() {
            return bad("every dimension needs at least one choice");
        }
        if self.structural_frozen && self.n_units_choices.len() != 1 {
            return bad("a frozen space must have exactly one n_units choice");
        }
        for w in [&self.learning_rate_choices, &self.dropout_rate_choices] {
            if w.windows(2).any(|p| !(p[0] < p[1])) {
                return bad("choices must be strictly increasing");
            }
        }
        if self.n_units_choices.windows(2).any(|p| p[0] >= p[1]) {
            return bad("n_units choices must be strictly increasing");
        }
        for lr in &self.learning_rate_choices {
            for dr in &self.dropout_rate_choices {
                Hyperparameters { learning_rate: *lr, dropout_rate: *dr, n_units: self.n_units_choices[0] }
                    .validate()
                    .map_err(|e| HpoError::InvalidSpace(e.to_string()))?;
            }
        }
        if self.n_units_choices[0] == 0 {
            return bad("n_units must be >= 1");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.learning_rate_choices.len() * self.dropout_rate_choices.len() * self.n_units_choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every point, learning rate slowest, units fastest.
    pub fn points(&self) -> Vec<Hyperparameters> {
        let mut out = Vec::with_capacity(self.len());
        for &learning_rate in &self.learning_rate_choices {
            for &dropout_rate in &self.dropout_rate_choices {
                for &n_units in &self.n_units_choices {
                    out.push(Hyperparameters { learning_rate, dropout_rate, n_units });
                }
            }
        }
        out
    }

    fn index_of(&self, hp: &Hyperparameters) -> Option<[usize; 3]> {
        Some([
            self.learning_rate_choices.iter().position(|&v| v == hp.learning_rate)?,
            self.dropout_rate_choices.iter().position(|&v| v == hp.dropout_rate)?,
            self.n_units_choices.iter().position(|&v| v == hp.n_units)?,
        ])
    }

    pub fn contains(&self, hp: &Hyperparameters) -> bool {
        self.index_of(hp).is_some()
    }

    /// Ordinal position of each coordinate scaled to `[0, 1]`.
    pub fn coords(&self, hp: &Hyperparameters) -> Option<[f64; 3]> {
        let idx = self.index_of(hp)?;
        let lens = [self.learning_rate_choices.len(), self.dropout_rate_choices.len(), self.n_units_choices.len()];
        Some(std::array::from_fn(|d| if lens[d] > 1 { idx[d] as f64 / (lens[d] - 1) as f64 } else { 0.0 }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub hyperparameters: Hyperparameters,
    /// Validation MAPE.
    pub score: f64,
    pub duration_secs: f64,
}

/// What an objective reports for one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub score: f64,
    pub duration_secs: f64,
}

/// Next point to evaluate, with the default number of random initial points.
pub fn propose(history: &[TrialRecord], space: &SearchSpace, seed: u64) -> Result<Hyperparameters, HpoError> {
    propose_with(history, space, seed, DEFAULT_N_INIT)
}

pub fn propose_with(
    history: &[TrialRecord],
    space: &SearchSpace,
    seed: u64,
    n_init: usize,
) -> Result<Hyperparameters, HpoError> {
    space.validate()?;
    let unexplored: Vec<Hyperparameters> = space
        .points()
        .into_iter()
        .filter(|p| !history.iter().any(|t| t.hyperparameters == *p))
        .collect();
    if unexplored.is_empty() {
        return Err(HpoError::ExhaustedSpace);
    }
    let in_space: Vec<&TrialRecord> = history.iter().filter(|t| space.contains(&t.hyperparameters)).collect();
    if in_space.len() < n_init.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(history.len() as u64);
        return Ok(*unexplored.choose(&mut rng).expect("non-empty"));
    }

    let xs: Vec<[f64; 3]> = in_space.iter().map(|t| space.coords(&t.hyperparameters).expect("in space")).collect();
    let ys: Vec<f64> = in_space.iter().map(|t| t.score).collect();
    let gp = GaussianProcess::fit(&xs, &ys)?;
    let best = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let mut pick = (f64::NEG_INFINITY, unexplored[0]);
    for p in &unexplored {
        let ei = gp.expected_improvement(&space.coords(p).expect("in space"), best);
        if ei > pick.0 {
            pick = (ei, *p);
        }
    }
    Ok(pick.1)
}

/// Runs `budget` propose/evaluate rounds (fewer if the space runs out) and
/// returns the lowest-scoring point with the full trial history. The
/// objective's wall-clock time is recorded as the trial duration.
pub fn optimize<E, F>(mut objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<(Hyperparameters, Vec<TrialRecord>), E>
where
    E: From<HpoError>,
    F: FnMut(&Hyperparameters) -> Result<f64, E>,
{
    optimize_with(
        |hp| {
            let t = Instant::now();
            let score = objective(hp)?;
            Ok(TrialOutcome { score, duration_secs: t.elapsed().as_secs_f64() })
        },
        space,
        budget,
        seed,
        DEFAULT_N_INIT,
    )
}

/// [`optimize`] with objective-reported durations and a custom `n_init`.
pub fn optimize_with<E, F>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    n_init: usize,
) -> Result<(Hyperparameters, Vec<TrialRecord>), E>
where
    E: From<HpoError>,
    F: FnMut(&Hyperparameters) -> Result<TrialOutcome, E>,
{
    if budget == 0 {
        return Err(HpoError::ZeroBudget.into());
    }
    space.validate()?;
    let mut history: Vec<TrialRecord> = Vec::with_capacity(budget);
    for _ in 0..budget {
        let hp = match propose_with(&history, space, seed, n_init) {
            Ok(hp) => hp,
            Err(HpoError::ExhaustedSpace) => break,
            Err(e) => return Err(e.into()),
        };
        let out = objective(&hp)?;
        if !out.score.is_finite() {
            return Err(HpoError::NonFiniteScore(out.score).into());
        }
        history.push(TrialRecord { hyperparameters: hp, score: out.score, duration_secs: out.duration_secs.max(0.0) });
    }
    let best = best_trial(&history).expect("budget >= 1 and the space is non-empty").hyperparameters;
    Ok((best, history))
}

/// Lowest score; ties go to the earliest trial.
pub fn best_trial(history: &[TrialRecord]) -> Option<&TrialRecord> {
    history.iter().fold(None, |acc: Option<&TrialRecord>, t| match acc {
        Some(b) if b.score <= t.score => Some(b),
        _ => Some(t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    /// Separable quadratic in ordinal coordinates with a unique interior minimum.
    fn quadratic(space: &SearchSpace) -> impl Fn(&Hyperparameters) -> f64 + '_ {
        move |hp| {
            let c = space.coords(hp).unwrap();
            (c[0] - 0.5).powi(2) + 2.0 * (c[1] - 0.6).powi(2) + 1.5 * (c[2] - 0.4).powi(2)
        }
    }

    fn grid_minimum(space: &SearchSpace) -> Hyperparameters {
        let f = quadratic(space);
        let pts = space.points();
        let mut best = pts[0];
        for p in &pts {
            if f(p) < f(&best) {
                best = *p;
            }
        }
        let ties = pts.iter().filter(|p| f(p) == f(&best)).count();
        assert_eq!(ties, 1, "test objective must have a unique grid minimum");
        best
    }

    fn run(space: &SearchSpace, budget: usize, seed: u64) -> (Hyperparameters, Vec<TrialRecord>) {
        let f = quadratic(space);
        optimize::<HpoError, _>(|hp| Ok(f(hp)), space, budget, seed).unwrap()
    }

    #[test]
    fn default_space_size() {
        let s = SearchSpace::default();
        assert_eq!(s.len(), 3 * 6 * 16);
        assert_eq!(s.n_units_choices, SearchSpace::units_range(32, 512, 32));
        s.validate().unwrap();
    }

    #[test]
    fn empty_history_proposes_inside_space() {
        let s = SearchSpace::default();
        assert!(s.contains(&propose(&[], &s, 3).unwrap()));
    }

    #[test]
    fn last_unexplored_point_is_proposed() {
        let s = SearchSpace { n_units_choices: vec![32, 64], ..SearchSpace::default() };
        let pts = s.points();
        let missing = pts[17];
        let history: Vec<TrialRecord> = pts
            .iter()
            .filter(|p| **p != missing)
            .enumerate()
            .map(|(i, p)| TrialRecord { hyperparameters: *p, score: i as f64, duration_secs: 0.0 })
            .collect();
        assert_eq!(propose(&history, &s, 0).unwrap(), missing);
    }

    #[test]
    fn full_history_exhausts_space() {
        let s = SearchSpace { n_units_choices: vec![32], ..SearchSpace::default() };
        let history: Vec<TrialRecord> =
            s.points().iter().map(|p| TrialRecord { hyperparameters: *p, score: 1.0, duration_secs: 0.0 }).collect();
        assert_eq!(propose(&history, &s, 0), Err(HpoError::ExhaustedSpace));
    }

    #[test]
    fn small_space_stops_early_when_exhausted() {
        let s = SearchSpace { learning_rate_choices: vec![0.01], dropout_rate_choices: vec![0.0, 0.1], n_units_choices: vec![8], ..SearchSpace::default() };
        let (_, h) = run(&s, 10, 1);
        assert_eq!(h.len(), 2);
    }

    #[test]
    fn budget_one_returns_the_single_point() {
        let s = SearchSpace::default();
        let (best, h) = run(&s, 1, 9);
        assert_eq!(h.len(), 1);
        assert_eq!(best, h[0].hyperparameters);
    }

    #[test]
    fn zero_budget_is_an_error() {
        let s = SearchSpace::default();
        assert_eq!(optimize::<HpoError, _>(|_| Ok(0.0), &s, 0, 0).unwrap_err(), HpoError::ZeroBudget);
    }

    #[test]
    fn finds_grid_minimum_for_most_seeds() {
        let s = SearchSpace::default();
        let target = grid_minimum(&s);
        let hits = (0..20u64).filter(|&seed| run(&s, 20, seed).0 == target).count();
        assert!(hits >= 18, "found the grid minimum in {hits}/20 seeds");
    }

    #[test]
    fn beats_random_search_on_average() {
        let s = SearchSpace::default();
        let f = quadratic(&s);
        let (mut bo, mut rs) = (0.0, 0.0);
        for seed in 0..20u64 {
            bo += run(&s, 15, seed).1.iter().map(|t| t.score).fold(f64::INFINITY, f64::min);
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let pts = s.points();
            rs += (0..15).map(|_| f(&pts[rng.random_range(0..pts.len())])).fold(f64::INFINITY, f64::min);
        }
        assert!(bo <= rs, "bo {} vs random {}", bo / 20.0, rs / 20.0);
    }

    #[test]
    fn frozen_space_keeps_units() {
        let s = SearchSpace::default().frozen(96);
        let (_, h) = run(&s, 8, 4);
        assert!(h.iter().all(|t| t.hyperparameters.n_units == 96));
        assert!(SearchSpace { structural_frozen: true, ..SearchSpace::default() }.validate().is_err());
    }

    #[test]
    fn non_finite_score_is_rejected() {
        let s = SearchSpace::default();
        for bad in [f64::NAN, f64::INFINITY] {
            assert!(matches!(optimize::<HpoError, _>(|_| Ok(bad), &s, 3, 0), Err(HpoError::NonFiniteScore(_))));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn proposals_are_in_space_and_never_repeat(seed in 0u64..1000, budget in 1usize..30) {
            let s = SearchSpace { n_units_choices: vec![32, 64, 96], ..SearchSpace::default() };
            let (best, h) = run(&s, budget, seed);
            prop_assert!(s.contains(&best));
            for (i, t) in h.iter().enumerate() {
                prop_assert!(s.contains(&t.hyperparameters));
                prop_assert!(h[..i].iter().all(|u| u.hyperparameters != t.hyperparameters));
            }
        }

        #[test]
        fn incumbent_never_worsens_with_budget(seed in 0u64..1000, budget in 1usize..20) {
            let s = SearchSpace::default();
            let (_, a) = run(&s, budget, seed);
            let (_, b) = run(&s, budget + 1, seed);
            let key = |h: &[TrialRecord]| h.iter().map(|t| (t.hyperparameters, t.score)).collect::<Vec<_>>();
            prop_assert_eq!(key(&b[..a.len()]), key(&a));
            prop_assert!(best_trial(&b).unwrap().score <= best_trial(&a).unwrap().score);
        }
    }
}
