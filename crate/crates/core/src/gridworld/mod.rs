//! Procedural gridworld ladder.
//!
//! Five task families with increasing interaction depth:
//!
//! | family | success condition |
//! |--------|-------------------|
//! | A | issue `done` next to the object named by the mission; any `done` ends the episode |
//! | B | pick up the named object and carry it onto the delivery cell |
//! | C | pick up the key, unlock the door, reach the goal |
//! | D | move the blocker off the door, unlock it, pick up the box behind it |
//! | E | move the blocker, open the box to reveal the key, unlock, reach the goal |
//!
//! Rewards are sparse: `1 - 0.9 * step_count / max_steps` on success, zero
//! otherwise. Every step emits an 11-dimensional behaviour feature vector
//! that the trajectory encoder consumes.

mod env;
mod episode;
mod layout;

pub use env::{features, Action, GridEnv, StepOutcome, N_ACTIONS, OBS_DIM};
pub use episode::{
    evaluate_policy, read_episodes_jsonl, rollout_episode, write_episodes_jsonl, Episode,
    EpisodeRecord, EpisodeSet, Evaluation, FnPolicy, Policy, RandomPolicy, StepFeature,
    FEATURE_DIM,
};
pub use layout::GridState;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
    C,
    D,
    E,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::A, Family::B, Family::C, Family::D, Family::E];

    /// Position on the skill ladder.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_letter(c: char) -> Option<Family> {
        match c {
            'A' => Some(Family::A),
            'B' => Some(Family::B),
            'C' => Some(Family::C),
            'D' => Some(Family::D),
            'E' => Some(Family::E),
            _ => None,
        }
    }

    fn standard_dims(self) -> (usize, usize) {
        match self {
            Family::A | Family::B | Family::C => (10, 10),
            Family::D | Family::E => (12, 12),
        }
    }

    /// Smallest grid (including the border wall) on which the layout fits.
    fn min_dims(self) -> usize {
        match self {
            Family::A | Family::B => 4,
            Family::C => 5,
            Family::D | Family::E => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Standard,
    Small,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub width: usize,
    pub height: usize,
    pub max_steps: usize,
    pub seed: u64,
    #[serde(default)]
    pub variant: Variant,
}

impl TaskSpec {
    /// Default geometry for a family: `max_steps = 4·W·H`; the small variant
    /// halves both the grid dimensions and `max_steps`.
    pub fn new(family: Family, variant: Variant, seed: u64) -> Self {
        let (w, h) = family.standard_dims();
        let max_steps = 4 * w * h;
        match variant {
            Variant::Standard => TaskSpec {
                family,
                width: w,
                height: h,
                max_steps,
                seed,
                variant,
            },
            Variant::Small => TaskSpec {
                family,
                width: w / 2,
                height: h / 2,
                max_steps: max_steps / 2,
                seed,
                variant,
            },
        }
    }

    pub fn standard(family: Family, seed: u64) -> Self {
        Self::new(family, Variant::Standard, seed)
    }

    pub fn small(family: Family, seed: u64) -> Self {
        Self::new(family, Variant::Small, seed)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 4 || self.height < 4 {
            return Err(Error::Config(format!(
                "grid must be at least 4x4, got {}x{}",
                self.width, self.height
            )));
        }
        let min = self.family.min_dims();
        if self.width < min || self.height < min {
            return Err(Error::Config(format!(
                "family {} needs at least {min}x{min}, got {}x{}",
                self.family.letter(),
                self.width,
                self.height
            )));
        }
        if self.max_steps < self.width * self.height {
            return Err(Error::Config(format!(
                "max_steps {} below W*H = {}",
                self.max_steps,
                self.width * self.height
            )));
        }
        Ok(())
    }
}

/// Contents of one grid cell. The discriminant is the observation channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Empty = 0,
    Wall = 1,
    Key = 2,
    Ball = 3,
    Box = 4,
    DoorLocked = 5,
    DoorClosed = 6,
    DoorOpen = 7,
    Goal = 8,
    Blocker = 9,
}

pub const N_CELL_KINDS: usize = 10;

impl Cell {
    pub fn passable(self) -> bool {
        matches!(self, Cell::Empty | Cell::Goal | Cell::DoorOpen)
    }

    pub fn object(self) -> Option<Object> {
        match self {
            Cell::Key => Some(Object::Key),
            Cell::Ball => Some(Object::Ball),
            Cell::Box => Some(Object::Box),
            Cell::Blocker => Some(Object::Blocker),
            _ => None,
        }
    }
}

/// Objects that can be carried.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Object {
    Key = 0,
    Ball = 1,
    Box = 2,
    Blocker = 3,
}

impl Object {
    pub fn cell(self) -> Cell {
        match self {
            Object::Key => Cell::Key,
            Object::Ball => Cell::Ball,
            Object::Box => Cell::Box,
            Object::Blocker => Cell::Blocker,
        }
    }
}

/// Sticky task-event indicators, in feature order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EventFlags {
    pub has_key: bool,
    pub has_ball: bool,
    pub has_box: bool,
    pub door_open: bool,
    pub box_toggled: bool,
    pub delivered: bool,
}

impl EventFlags {
    pub fn as_array(&self) -> [bool; 6] {
        [
            self.has_key,
            self.has_ball,
            self.has_box,
            self.door_open,
            self.box_toggled,
            self.delivered,
        ]
    }

    /// True when no flag set in `self` is cleared in `next`.
    pub fn monotone_to(&self, next: &EventFlags) -> bool {
        self.as_array()
            .iter()
            .zip(next.as_array())
            .all(|(&a, b)| !a || b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_variant_halves_geometry() {
        let s = TaskSpec::small(Family::A, 0);
        let t = TaskSpec::standard(Family::A, 0);
        assert_eq!(s.width * 2, t.width);
        assert_eq!(s.max_steps * 2, t.max_steps);
        assert!(s.validate().is_ok());
        for f in Family::ALL {
            assert!(TaskSpec::small(f, 3).validate().is_ok());
            assert!(TaskSpec::standard(f, 3).validate().is_ok());
        }
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let mut s = TaskSpec::standard(Family::A, 1);
        s.width = 3;
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = TaskSpec::standard(Family::A, 1);
        s.max_steps = 10;
        assert!(s.validate().is_err());
    }
}
