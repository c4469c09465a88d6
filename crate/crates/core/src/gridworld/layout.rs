use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Cell, EventFlags, Family, Object, TaskSpec};
use crate::rng::{mix, rng_from, Rng};

/// Full simulator state. Coordinates are `(x, y)` with `x` along the width.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Cell>,
    pub agent_pos: (usize, usize),
    /// 0 = east, 1 = south, 2 = west, 3 = north.
    pub agent_dir: u8,
    pub carried: Option<Object>,
    pub step_count: usize,
    pub flags: EventFlags,
    pub mission: u8,
    /// Box cell that hides the key (family E).
    pub hidden_key: Option<(usize, usize)>,
}

impl GridState {
    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, c: Cell) {
        self.cells[y * self.width + x] = c;
    }

    /// Cell coordinates `dist` steps ahead and `lateral` steps to the right of
    /// the agent, or `None` when off the grid.
    pub fn relative(&self, dist: i64, lateral: i64) -> Option<(usize, usize)> {
        let (fx, fy) = dir_vec(self.agent_dir);
        // right-hand vector is the forward vector rotated clockwise
        let (rx, ry) = (-fy, fx);
        let x = self.agent_pos.0 as i64 + dist * fx + lateral * rx;
        let y = self.agent_pos.1 as i64 + dist * fy + lateral * ry;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some((x as usize, y as usize))
        }
    }

    pub fn front(&self) -> Option<(usize, usize)> {
        self.relative(1, 0)
    }

    pub fn front_cell(&self) -> Cell {
        self.front().map_or(Cell::Wall, |(x, y)| self.cell(x, y))
    }

    pub fn count(&self, c: Cell) -> usize {
        self.cells.iter().filter(|&&k| k == c).count()
    }

    /// Hash key for episodic visit counting: position, heading, carried
    /// object, door states in raster order and event flags.
    pub fn count_key(&self) -> u64 {
        let mut h = mix(self.agent_pos.0 as u64 ^ ((self.agent_pos.1 as u64) << 16));
        h = mix(h ^ u64::from(self.agent_dir));
        h = mix(h ^ self.carried.map_or(0, |o| o as u64 + 1));
        for (i, c) in self.cells.iter().enumerate() {
            if matches!(c, Cell::DoorLocked | Cell::DoorClosed | Cell::DoorOpen) {
                h = mix(h ^ ((i as u64) << 8) ^ (*c as u64));
            }
        }
        for (i, f) in self.flags.as_array().iter().enumerate() {
            if *f {
                h = mix(h ^ (0x100 + i as u64));
            }
        }
        h
    }

    /// Deterministic layout for `spec` from its own seed.
    pub fn initial(spec: &TaskSpec) -> GridState {
        generate(spec, spec.seed)
    }
}

pub(crate) fn dir_vec(d: u8) -> (i64, i64) {
    match d & 3 {
        0 => (1, 0),
        1 => (0, 1),
        2 => (-1, 0),
        _ => (0, -1),
    }
}

fn bordered(w: usize, h: usize) -> Vec<Cell> {
    let mut cells = vec![Cell::Empty; w * h];
    for y in 0..h {
        for x in 0..w {
            if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                cells[y * w + x] = Cell::Wall;
            }
        }
    }
    cells
}

/// Interior cells with `x` in `xs` that are currently empty.
fn free_cells(
    cells: &[Cell],
    w: usize,
    h: usize,
    xs: std::ops::Range<usize>,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 1..h - 1 {
        for x in xs.clone() {
            if cells[y * w + x] == Cell::Empty {
                out.push((x, y));
            }
        }
    }
    out
}

fn take(rng: &mut Rng, pool: &mut Vec<(usize, usize)>) -> (usize, usize) {
    let i = rng.random_range(0..pool.len());
    pool.swap_remove(i)
}

pub(crate) fn generate(spec: &TaskSpec, seed: u64) -> GridState {
    let mut rng = rng_from(mix(seed ^ 0xA5A5_0000 ^ spec.family as u64));
    let (w, h) = (spec.width, spec.height);
    let mut cells = bordered(w, h);
    let mut mission = 0u8;
    let mut hidden_key = None;
    let agent_pos;

    match spec.family {
        Family::A | Family::B => {
            let mut pool = free_cells(&cells, w, h, 1..w - 1);
            let mut kinds = if spec.family == Family::A {
                vec![Object::Ball, Object::Box, Object::Key]
            } else {
                vec![Object::Ball, Object::Box]
            };
            kinds.shuffle(&mut rng);
            let target = kinds[0];
            mission = target as u8;
            let n_objects = if spec.family == Family::A {
                // interior of at most 3x3 cells: one distractor; larger rooms: two
                if (w - 2) * (h - 2) <= 9 {
                    2
                } else {
                    3
                }
            } else {
                2
            };
            agent_pos = take(&mut rng, &mut pool);
            for &k in kinds.iter().take(n_objects) {
                let (x, y) = take(&mut rng, &mut pool);
                cells[y * w + x] = k.cell();
            }
            if spec.family == Family::B {
                let (x, y) = take(&mut rng, &mut pool);
                cells[y * w + x] = Cell::Goal;
            }
        }
        Family::C => {
            let xw = rng.random_range(2..=w - 3);
            let yd = rng.random_range(1..h - 1);
            for y in 1..h - 1 {
                cells[y * w + xw] = Cell::Wall;
            }
            cells[yd * w + xw] = Cell::DoorLocked;
            let mut left = free_cells(&cells, w, h, 1..xw);
            let mut right = free_cells(&cells, w, h, xw + 1..w - 1);
            agent_pos = take(&mut rng, &mut left);
            let (kx, ky) = take(&mut rng, &mut left);
            cells[ky * w + kx] = Cell::Key;
            let (gx, gy) = take(&mut rng, &mut right);
            cells[gy * w + gx] = Cell::Goal;
        }
        Family::D | Family::E => {
            let xw = rng.random_range(3..=w - 3);
            let yd = rng.random_range(1..h - 1);
            for y in 1..h - 1 {
                cells[y * w + xw] = Cell::Wall;
            }
            cells[yd * w + xw] = Cell::DoorLocked;
            cells[yd * w + xw - 1] = Cell::Blocker;
            let mut left = free_cells(&cells, w, h, 1..xw);
            let mut right = free_cells(&cells, w, h, xw + 1..w - 1);
            agent_pos = take(&mut rng, &mut left);
            if spec.family == Family::D {
                let (kx, ky) = take(&mut rng, &mut left);
                cells[ky * w + kx] = Cell::Key;
                let (bx, by) = take(&mut rng, &mut left);
                cells[by * w + bx] = Cell::Ball;
                let (gx, gy) = take(&mut rng, &mut right);
                cells[gy * w + gx] = Cell::Box;
            } else {
                let (bx, by) = take(&mut rng, &mut left);
                cells[by * w + bx] = Cell::Box;
                hidden_key = Some((bx, by));
                let (gx, gy) = take(&mut rng, &mut right);
                cells[gy * w + gx] = Cell::Goal;
            }
        }
    }

    let mut state = GridState {
        width: w,
        height: h,
        cells,
        agent_pos,
        agent_dir: rng.random_range(0..4),
        carried: None,
        step_count: 0,
        flags: EventFlags::default(),
        mission,
        hidden_key,
    };
    if spec.family == Family::A {
        // never start already facing the target
        let target = target_cell(&state);
        while state.front_cell() == target {
            state.agent_dir = (state.agent_dir + 1) & 3;
        }
    }
    state
}

pub(crate) fn target_cell(state: &GridState) -> Cell {
    match state.mission {
        0 => Cell::Key,
        1 => Cell::Ball,
        _ => Cell::Box,
    }
}
