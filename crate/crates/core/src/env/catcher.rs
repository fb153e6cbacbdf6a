//! Catcher: a paddle at the bottom of the grid catches a falling fruit.
//!
//! The fruit spawns on the top row at a random column and falls one row per
//! step; the paddle moves at most one column per step. The episode ends when the
//! fruit reaches the catch row, which is also the only rewarded transition.
//! In the target variant a fruit spawning in the right half is "bad" with
//! probability `1 - p_good`: the agent should then stay away from it. The agent
//! observes `(x_p, x_f, y_f)` and never the fruit kind.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{check_cap, field_error, Action, Environment, Step, Transition, Variant};
use crate::error::{Error, Result};

pub const LEFT: Action = 0;
pub const STAY: Action = 1;
pub const RIGHT: Action = 2;

const ACTIONS: &[&str] = &["left", "stay", "right"];
const REAL_FIELDS: &[&str] = &["x_p", "x_f", "y_f", "region", "fruit_kind"];
const SIM_FIELDS: &[&str] = &["x_p", "x_f", "y_f"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FruitKind {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CatcherConfig {
    /// Screen width `W` in columns.
    pub width: usize,
    /// Rows; the fruit is caught on row `height - 1`.
    pub height: usize,
    /// Probability that a right-region fruit is good in the target variant.
    pub p_good: f64,
    /// Extra penalty for ending directly under a bad fruit.
    pub bad_catch_penalty: f64,
    pub horizon: usize,
    pub enumeration_cap: usize,
}

impl Default for CatcherConfig {
    fn default() -> Self {
        CatcherConfig {
            width: 11,
            height: 11,
            p_good: 0.5,
            bad_catch_penalty: 100.0,
            horizon: 200,
            enumeration_cap: super::DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl CatcherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 2 || self.height < 2 {
            return Err(Error::Config("catcher grid must be at least 2x2".into()));
        }
        if !(0.0..=1.0).contains(&self.p_good) {
            return Err(Error::Config("catcher p_good must lie in [0, 1]".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("catcher horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Full target-world state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CatcherReal {
    pub paddle: u8,
    pub fruit_x: u8,
    pub fruit_y: u8,
    pub kind: FruitKind,
}

/// Agent-visible projection `(x_p, x_f, y_f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CatcherSim {
    pub paddle: u8,
    pub fruit_x: u8,
    pub fruit_y: u8,
}

#[derive(Debug, Clone)]
pub struct Catcher {
    cfg: CatcherConfig,
    variant: Variant,
}

impl Catcher {
    pub fn new(cfg: CatcherConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        if cfg.width > u8::MAX as usize || cfg.height > u8::MAX as usize {
            return Err(Error::Config("catcher grid dimensions must fit in a byte".into()));
        }
        Ok(Catcher { cfg, variant })
    }

    pub fn config(&self) -> &CatcherConfig {
        &self.cfg
    }

    pub fn region(&self, fruit_x: u8) -> Region {
        if usize::from(fruit_x) >= self.cfg.width / 2 {
            Region::Right
        } else {
            Region::Left
        }
    }

    fn catch_row(&self) -> u8 {
        (self.cfg.height - 1) as u8
    }

    /// Reward for ending an episode with the paddle at `paddle` under `fruit_x`.
    pub fn catch_reward(&self, paddle: u8, fruit_x: u8, kind: FruitKind) -> f64 {
        let dist = f64::from(paddle.abs_diff(fruit_x));
        match kind {
            FruitKind::Good => self.cfg.width as f64 - dist,
            FruitKind::Bad if paddle == fruit_x => dist - self.cfg.bad_catch_penalty,
            FruitKind::Bad => dist,
        }
    }

    fn kinds_at(&self, fruit_x: u8) -> &'static [FruitKind] {
        match (self.variant, self.region(fruit_x)) {
            (Variant::Target, Region::Right) => &[FruitKind::Good, FruitKind::Bad],
            _ => &[FruitKind::Good],
        }
    }

    fn advance(&self, s: &CatcherReal, a: Action) -> Result<Step<CatcherReal>> {
        self.check_action(a)?;
        if self.is_terminal(s) {
            return Ok(Step { next: *s, reward: 0.0, done: true });
        }
        let max_x = (self.cfg.width - 1) as u8;
        let paddle = match a {
            LEFT => s.paddle.saturating_sub(1),
            RIGHT => (s.paddle + 1).min(max_x),
            _ => s.paddle,
        };
        let next = CatcherReal { paddle, fruit_y: s.fruit_y + 1, ..*s };
        if next.fruit_y == self.catch_row() {
            Ok(Step { next, reward: self.catch_reward(paddle, s.fruit_x, s.kind), done: true })
        } else {
            Ok(Step { next, reward: 0.0, done: false })
        }
    }
}

impl Environment for Catcher {
    type Real = CatcherReal;
    type Sim = CatcherSim;

    fn name(&self) -> &'static str {
        "catcher"
    }

    fn variant(&self) -> Variant {
        self.variant
    }

    fn action_names(&self) -> &'static [&'static str] {
        ACTIONS
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn observe(&self, s: &CatcherReal) -> CatcherSim {
        CatcherSim { paddle: s.paddle, fruit_x: s.fruit_x, fruit_y: s.fruit_y }
    }

    fn reset(&self, rng: &mut dyn RngCore) -> CatcherReal {
        let paddle = rng.gen_range(0..self.cfg.width) as u8;
        let fruit_x = rng.gen_range(0..self.cfg.width) as u8;
        let kind = if self.kinds_at(fruit_x).len() > 1 && !rng.gen_bool(self.cfg.p_good) {
            FruitKind::Bad
        } else {
            FruitKind::Good
        };
        CatcherReal { paddle, fruit_x, fruit_y: 0, kind }
    }

    fn step(&self, s: &CatcherReal, a: Action, _rng: &mut dyn RngCore) -> Result<Step<CatcherReal>> {
        self.advance(s, a)
    }

    fn transitions(&self, s: &CatcherReal, a: Action) -> Result<Vec<Transition<CatcherReal>>> {
        let st = self.advance(s, a)?;
        Ok(vec![Transition { prob: 1.0, next: st.next, reward: st.reward, done: st.done }])
    }

    fn is_terminal(&self, s: &CatcherReal) -> bool {
        s.fruit_y >= self.catch_row()
    }

    fn real_states(&self) -> Result<Vec<CatcherReal>> {
        let (w, h) = (self.cfg.width as u8, self.cfg.height as u8);
        let extra = match self.variant {
            Variant::Source => 0,
            Variant::Target => (self.cfg.width - self.cfg.width / 2) * self.cfg.width * self.cfg.height,
        };
        check_cap(self.cfg.width * self.cfg.width * self.cfg.height + extra, self.cfg.enumeration_cap)?;
        let mut out = Vec::new();
        for paddle in 0..w {
            for fruit_x in 0..w {
                for fruit_y in 0..h {
                    for &kind in self.kinds_at(fruit_x) {
                        out.push(CatcherReal { paddle, fruit_x, fruit_y, kind });
                    }
                }
            }
        }
        Ok(out)
    }

    fn sim_states(&self) -> Result<Vec<CatcherSim>> {
        let (w, h) = (self.cfg.width as u8, self.cfg.height as u8);
        check_cap(self.cfg.width * self.cfg.width * self.cfg.height, self.cfg.enumeration_cap)?;
        let mut out = Vec::with_capacity(self.cfg.width * self.cfg.width * self.cfg.height);
        for paddle in 0..w {
            for fruit_x in 0..w {
                for fruit_y in 0..h {
                    out.push(CatcherSim { paddle, fruit_x, fruit_y });
                }
            }
        }
        Ok(out)
    }

    fn real_fields(&self) -> &'static [&'static str] {
        REAL_FIELDS
    }

    fn sim_fields(&self) -> &'static [&'static str] {
        SIM_FIELDS
    }

    fn real_values(&self, s: &CatcherReal) -> Vec<i64> {
        let region = match self.region(s.fruit_x) {
            Region::Left => 0,
            Region::Right => 1,
        };
        let kind = match s.kind {
            FruitKind::Good => 0,
            FruitKind::Bad => 1,
        };
        vec![s.paddle.into(), s.fruit_x.into(), s.fruit_y.into(), region, kind]
    }

    fn sim_values(&self, s: &CatcherSim) -> Vec<i64> {
        vec![s.paddle.into(), s.fruit_x.into(), s.fruit_y.into()]
    }

    fn real_from_values(&self, v: &[i64]) -> Result<CatcherReal> {
        let [x_p, x_f, y_f, region, kind] = *v else {
            return Err(field_error("catcher real state", v));
        };
        let sim = self.sim_from_values(&[x_p, x_f, y_f])?;
        let kind = match kind {
            0 => FruitKind::Good,
            1 => FruitKind::Bad,
            _ => return Err(field_error("catcher real state", v)),
        };
        let expected_region = match self.region(sim.fruit_x) {
            Region::Left => 0,
            Region::Right => 1,
        };
        if region != expected_region || !self.kinds_at(sim.fruit_x).contains(&kind) {
            return Err(field_error("catcher real state", v));
        }
        Ok(CatcherReal { paddle: sim.paddle, fruit_x: sim.fruit_x, fruit_y: sim.fruit_y, kind })
    }

    fn sim_from_values(&self, v: &[i64]) -> Result<CatcherSim> {
        let [x_p, x_f, y_f] = *v else {
            return Err(field_error("catcher sim state", v));
        };
        let (w, h) = (self.cfg.width as i64, self.cfg.height as i64);
        if !(0..w).contains(&x_p) || !(0..w).contains(&x_f) || !(0..h).contains(&y_f) {
            return Err(field_error("catcher sim state", v));
        }
        Ok(CatcherSim { paddle: x_p as u8, fruit_x: x_f as u8, fruit_y: y_f as u8 })
    }
}
