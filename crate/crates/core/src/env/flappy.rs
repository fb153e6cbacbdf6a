//! FlappyBird on a coarse grid.
//!
//! The bird flies towards a pipe pair `dx` columns away. Pipes are either high
//! or low; in the target variant a low pipe may be made of copper, which the
//! agent cannot observe. Near a copper pipe flying high is heavily penalised and
//! flying low is rewarded, the opposite of the steel shaping reward.
//!
//! Each step the bird either flaps (velocity jumps to `flap_velocity`) or falls
//! (velocity drops by `gravity`, clamped to `-max_velocity`). Falling below row
//! 0 is a crash; the ceiling clamps. When `dx` reaches 0 the bird must be
//! strictly inside the gap, after which a fresh pipe spawns `width` columns away.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::{check_cap, field_error, Action, Environment, Step, Transition, Variant};
use crate::error::{Error, Result};

pub const UP: Action = 0;
pub const NOOP: Action = 1;

const ACTIONS: &[&str] = &["up", "noop"];
const REAL_FIELDS: &[&str] = &["y_t", "y_b", "y_a", "v_a", "dx", "pipe_material"];
const SIM_FIELDS: &[&str] = &["y_t", "y_b", "y_a", "v_a", "dx"];

/// Pipe type including the hidden material.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PipeKind {
    High,
    Low,
    LowCopper,
}

impl PipeKind {
    pub fn is_copper(self) -> bool {
        self == PipeKind::LowCopper
    }

    fn is_low(self) -> bool {
        self != PipeKind::High
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlappyConfig {
    /// Spawn distance; `dx` ranges over `1..=width`.
    pub width: usize,
    /// Rows; `y_a` ranges over `0..height`.
    pub height: usize,
    pub max_velocity: i8,
    pub flap_velocity: i8,
    pub gravity: i8,
    /// Gap of the high pipe as `(y_b, y_t)`; passable rows are strictly between.
    pub high_gap: (u8, u8),
    pub low_gap: (u8, u8),
    /// Probability that a spawned pipe is low.
    pub p_low: f64,
    /// Probability that a low pipe is copper (target variant only).
    pub copper_prob: f64,
    /// Steel shaping reward applies at `y_a >= fly_high`.
    pub fly_high: u8,
    /// Copper shaping reward applies at `y_a <= fly_low`.
    pub fly_low: u8,
    /// Copper penalty applies at `y_a >= danger` while `dx <= proximity`.
    pub danger: u8,
    pub proximity: u8,
    pub start_y: u8,
    pub pass_reward: f64,
    pub crash_reward: f64,
    pub shaping_reward: f64,
    pub danger_penalty: f64,
    pub horizon: usize,
    pub enumeration_cap: usize,
}

impl Default for FlappyConfig {
    fn default() -> Self {
        FlappyConfig {
            width: 15,
            height: 10,
            max_velocity: 2,
            flap_velocity: 2,
            gravity: 1,
            high_gap: (4, 8),
            low_gap: (1, 5),
            p_low: 0.5,
            copper_prob: 0.5,
            fly_high: 6,
            fly_low: 3,
            danger: 6,
            proximity: 3,
            start_y: 5,
            pass_reward: 10.0,
            crash_reward: -10.0,
            shaping_reward: 0.1,
            danger_penalty: -100.0,
            horizon: 200,
            enumeration_cap: super::DEFAULT_ENUMERATION_CAP,
        }
    }
}

impl FlappyConfig {
    pub fn validate(&self) -> Result<()> {
        let h = self.height;
        if self.width < 1 || h < 3 || self.width > u8::MAX as usize || h > u8::MAX as usize {
            return Err(Error::Config("flappybird grid dimensions out of range".into()));
        }
        if self.max_velocity < 1 || self.flap_velocity.abs() > self.max_velocity || self.gravity < 0 {
            return Err(Error::Config("flappybird velocity parameters inconsistent".into()));
        }
        for (lo, hi) in [self.high_gap, self.low_gap] {
            if lo >= hi || usize::from(hi) > h {
                return Err(Error::Config("flappybird pipe gap must satisfy y_b < y_t <= height".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.p_low) || !(0.0..=1.0).contains(&self.copper_prob) {
            return Err(Error::Config("flappybird probabilities must lie in [0, 1]".into()));
        }
        if usize::from(self.start_y) >= h {
            return Err(Error::Config("flappybird start_y outside the grid".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Config("flappybird horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlappyReal {
    pub pipe: PipeKind,
    pub y: u8,
    pub velocity: i8,
    pub dx: u8,
}

/// Agent-visible state; `low` stands in for the `(y_t, y_b)` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlappySim {
    pub low: bool,
    pub y: u8,
    pub velocity: i8,
    pub dx: u8,
}

#[derive(Debug, Clone)]
pub struct FlappyBird {
    cfg: FlappyConfig,
    variant: Variant,
}

impl FlappyBird {
    pub fn new(cfg: FlappyConfig, variant: Variant) -> Result<Self> {
        cfg.validate()?;
        Ok(FlappyBird { cfg, variant })
    }

    pub fn config(&self) -> &FlappyConfig {
        &self.cfg
    }

    fn gap(&self, low: bool) -> (u8, u8) {
        if low {
            self.cfg.low_gap
        } else {
            self.cfg.high_gap
        }
    }

    fn pipe_kinds(&self) -> &'static [PipeKind] {
        match self.variant {
            Variant::Source => &[PipeKind::High, PipeKind::Low],
            Variant::Target => &[PipeKind::High, PipeKind::Low, PipeKind::LowCopper],
        }
    }

    fn spawn_distribution(&self) -> Vec<(PipeKind, f64)> {
        let p_low = self.cfg.p_low;
        let mut out = vec![(PipeKind::High, 1.0 - p_low)];
        match self.variant {
            Variant::Source => out.push((PipeKind::Low, p_low)),
            Variant::Target => {
                out.push((PipeKind::Low, p_low * (1.0 - self.cfg.copper_prob)));
                out.push((PipeKind::LowCopper, p_low * self.cfg.copper_prob));
            }
        }
        out.retain(|&(_, p)| p > 0.0);
        out
    }

    fn sample_pipe(&self, rng: &mut dyn RngCore) -> PipeKind {
        if !rng.gen_bool(self.cfg.p_low) {
            PipeKind::High
        } else if self.variant == Variant::Target && rng.gen_bool(self.cfg.copper_prob) {
            PipeKind::LowCopper
        } else {
            PipeKind::Low
        }
    }

    /// Deterministic part of a step. After `Outcome::Passed` the caller spawns
    /// the next pipe.
    fn advance(&self, s: &FlappyReal, a: Action) -> Result<(FlappyReal, f64, Outcome)> {
        self.check_action(a)?;
        let c = &self.cfg;
        let velocity = if a == UP {
            c.flap_velocity
        } else {
            (s.velocity - c.gravity).max(-c.max_velocity)
        };
        let raw_y = i16::from(s.y) + i16::from(velocity);
        if raw_y < 0 {
            let next = FlappyReal { y: 0, velocity, ..*s };
            return Ok((next, c.crash_reward, Outcome::Crash));
        }
        let y = raw_y.min(c.height as i16 - 1) as u8;
        let dx = s.dx - 1;
        let mut reward = 0.0;
        if s.pipe.is_copper() {
            if y <= c.fly_low {
                reward += c.shaping_reward;
            }
            if y >= c.danger && dx <= c.proximity {
                reward += c.danger_penalty;
            }
        } else if y >= c.fly_high {
            reward += c.shaping_reward;
        }
        let next = FlappyReal { pipe: s.pipe, y, velocity, dx };
        if dx > 0 {
            return Ok((next, reward, Outcome::Flying));
        }
        let (y_b, y_t) = self.gap(s.pipe.is_low());
        if y > y_b && y < y_t {
            Ok((next, reward + c.pass_reward, Outcome::Passed))
        } else {
            Ok((next, c.crash_reward, Outcome::Crash))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Flying,
    Passed,
    Crash,
}

impl Environment for FlappyBird {
    type Real = FlappyReal;
    type Sim = FlappySim;

    fn name(&self) -> &'static str {
        "flappybird"
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

    fn observe(&self, s: &FlappyReal) -> FlappySim {
        FlappySim { low: s.pipe.is_low(), y: s.y, velocity: s.velocity, dx: s.dx }
    }

    fn reset(&self, rng: &mut dyn RngCore) -> FlappyReal {
        let pipe = self.sample_pipe(rng);
        FlappyReal { pipe, y: self.cfg.start_y, velocity: 0, dx: self.cfg.width as u8 }
    }

    fn step(&self, s: &FlappyReal, a: Action, rng: &mut dyn RngCore) -> Result<Step<FlappyReal>> {
        let (next, reward, outcome) = self.advance(s, a)?;
        Ok(match outcome {
            Outcome::Flying => Step { next, reward, done: false },
            Outcome::Crash => Step { next, reward, done: true },
            Outcome::Passed => {
                let next = FlappyReal { pipe: self.sample_pipe(rng), dx: self.cfg.width as u8, ..next };
                Step { next, reward, done: false }
            }
        })
    }

    fn transitions(&self, s: &FlappyReal, a: Action) -> Result<Vec<Transition<FlappyReal>>> {
        let (next, reward, outcome) = self.advance(s, a)?;
        Ok(match outcome {
            Outcome::Flying => vec![Transition { prob: 1.0, next, reward, done: false }],
            Outcome::Crash => vec![Transition { prob: 1.0, next, reward, done: true }],
            Outcome::Passed => self
                .spawn_distribution()
                .into_iter()
                .map(|(pipe, prob)| Transition {
                    prob,
                    next: FlappyReal { pipe, dx: self.cfg.width as u8, ..next },
                    reward,
                    done: false,
                })
                .collect(),
        })
    }

    fn is_terminal(&self, _s: &FlappyReal) -> bool {
        false
    }

    fn real_states(&self) -> Result<Vec<FlappyReal>> {
        let kinds = self.pipe_kinds();
        let v = self.cfg.max_velocity;
        let size = kinds.len() * self.cfg.height * (2 * v as usize + 1) * self.cfg.width;
        check_cap(size, self.cfg.enumeration_cap)?;
        let mut out = Vec::with_capacity(size);
        for &pipe in kinds {
            for y in 0..self.cfg.height as u8 {
                for velocity in -v..=v {
                    for dx in 1..=self.cfg.width as u8 {
                        out.push(FlappyReal { pipe, y, velocity, dx });
                    }
                }
            }
        }
        Ok(out)
    }

    fn sim_states(&self) -> Result<Vec<FlappySim>> {
        let v = self.cfg.max_velocity;
        let size = 2 * self.cfg.height * (2 * v as usize + 1) * self.cfg.width;
        check_cap(size, self.cfg.enumeration_cap)?;
        let mut out = Vec::with_capacity(size);
        for low in [false, true] {
            for y in 0..self.cfg.height as u8 {
                for velocity in -v..=v {
                    for dx in 1..=self.cfg.width as u8 {
                        out.push(FlappySim { low, y, velocity, dx });
                    }
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

    fn real_values(&self, s: &FlappyReal) -> Vec<i64> {
        let mut v = self.sim_values(&self.observe(s));
        v.push(i64::from(s.pipe.is_copper()));
        v
    }

    fn sim_values(&self, s: &FlappySim) -> Vec<i64> {
        let (y_b, y_t) = self.gap(s.low);
        vec![y_t.into(), y_b.into(), s.y.into(), s.velocity.into(), s.dx.into()]
    }

    fn real_from_values(&self, v: &[i64]) -> Result<FlappyReal> {
        let [.., material] = *v else {
            return Err(field_error("flappybird real state", v));
        };
        if v.len() != REAL_FIELDS.len() {
            return Err(field_error("flappybird real state", v));
        }
        let sim = self.sim_from_values(&v[..5])?;
        let pipe = match (sim.low, material) {
            (false, 0) => PipeKind::High,
            (true, 0) => PipeKind::Low,
            (true, 1) if self.variant == Variant::Target => PipeKind::LowCopper,
            _ => return Err(field_error("flappybird real state", v)),
        };
        Ok(FlappyReal { pipe, y: sim.y, velocity: sim.velocity, dx: sim.dx })
    }

    fn sim_from_values(&self, v: &[i64]) -> Result<FlappySim> {
        let [y_t, y_b, y, velocity, dx] = *v else {
            return Err(field_error("flappybird sim state", v));
        };
        let gap = (y_b, y_t);
        let low = if gap == (self.cfg.low_gap.0.into(), self.cfg.low_gap.1.into()) {
            true
        } else if gap == (self.cfg.high_gap.0.into(), self.cfg.high_gap.1.into()) {
            false
        } else {
            return Err(field_error("flappybird sim state", v));
        };
        let vmax = i64::from(self.cfg.max_velocity);
        if !(0..self.cfg.height as i64).contains(&y)
            || !(-vmax..=vmax).contains(&velocity)
            || !(1..=self.cfg.width as i64).contains(&dx)
        {
            return Err(field_error("flappybird sim state", v));
        }
        Ok(FlappySim { low, y: y as u8, velocity: velocity as i8, dx: dx as u8 })
    }
}
