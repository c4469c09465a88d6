use serde::{Deserialize, Serialize};

use super::layout::{generate, target_cell};
use super::{Cell, Family, GridState, Object, TaskSpec, N_CELL_KINDS};
use crate::{Error, Result};

pub const N_ACTIONS: usize = 7;
const VIEW: usize = 5;
/// Egocentric 5x5 one-hot window + heading + carried object + mission.
pub const OBS_DIM: usize = VIEW * VIEW * N_CELL_KINDS + 4 + 5 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Left = 0,
    Right = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl Action {
    pub fn from_index(i: usize) -> Result<Action> {
        Ok(match i {
            0 => Action::Left,
            1 => Action::Right,
            2 => Action::Forward,
            3 => Action::Pickup,
            4 => Action::Drop,
            5 => Action::Toggle,
            6 => Action::Done,
            _ => return Err(Error::Usage(format!("action {i} outside 0..7"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Eleven-feature behaviour vector for `state` after executing `action`.
pub fn features(state: &GridState, action: usize, spec: &TaskSpec) -> [f64; 11] {
    let clip = |v: f64| v.clamp(0.0, 1.0);
    let mut f = [0.0; 11];
    f[0] = clip(state.agent_pos.0 as f64 / (spec.width.saturating_sub(1)).max(1) as f64);
    f[1] = clip(state.agent_pos.1 as f64 / (spec.height.saturating_sub(1)).max(1) as f64);
    f[2] = clip(f64::from(state.agent_dir) / 3.0);
    f[3] = clip(state.step_count as f64 / spec.max_steps as f64);
    f[4] = if N_ACTIONS > 1 {
        clip(action as f64 / (N_ACTIONS - 1) as f64)
    } else {
        action as f64
    };
    for (i, flag) in state.flags.as_array().iter().enumerate() {
        f[5 + i] = if *flag { 1.0 } else { 0.0 };
    }
    f
}

/// One environment instance. Owns its state; not shareable across threads
/// while stepping.
#[derive(Debug, Clone)]
pub struct GridEnv {
    spec: TaskSpec,
    state: GridState,
    done: bool,
}

impl GridEnv {
    pub fn new(spec: TaskSpec) -> Result<GridEnv> {
        spec.validate()?;
        Ok(GridEnv {
            state: GridState::initial(&spec),
            spec,
            done: false,
        })
    }

    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn state(&self) -> &GridState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Fresh procedural layout for a new episode.
    pub fn reset(&mut self, layout_seed: u64) {
        self.state = generate(&self.spec, layout_seed);
        self.done = false;
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome> {
        if self.done {
            return Err(Error::Usage("step called on a finished episode".into()));
        }
        let action = Action::from_index(action)?;
        let (success, terminal) = transition(&mut self.state, &self.spec, action);
        let timeout = self.state.step_count >= self.spec.max_steps;
        let reward = if success {
            1.0 - 0.9 * (self.state.step_count as f64 / self.spec.max_steps as f64)
        } else {
            0.0
        };
        self.done = success || terminal || timeout;
        Ok(StepOutcome {
            reward,
            done: self.done,
            success,
        })
    }

    pub fn observe(&self, out: &mut [f64]) {
        observe(&self.state, out);
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut v = vec![0.0; OBS_DIM];
        self.observe(&mut v);
        v
    }
}

fn observe(s: &GridState, out: &mut [f64]) {
    debug_assert_eq!(out.len(), OBS_DIM);
    out.fill(0.0);
    let half = (VIEW / 2) as i64;
    for dist in 0..VIEW as i64 {
        for lat in -half..=half {
            let cell = s.relative(dist, lat).map_or(Cell::Wall, |(x, y)| s.cell(x, y));
            let row = (VIEW as i64 - 1 - dist) as usize;
            let col = (lat + half) as usize;
            out[(row * VIEW + col) * N_CELL_KINDS + cell as usize] = 1.0;
        }
    }
    let mut off = VIEW * VIEW * N_CELL_KINDS;
    out[off + usize::from(s.agent_dir & 3)] = 1.0;
    off += 4;
    out[off + s.carried.map_or(0, |o| o as usize + 1)] = 1.0;
    off += 5;
    out[off + usize::from(s.mission).min(3)] = 1.0;
}

/// Apply one action in place. Returns `(success, terminal)`; `terminal`
/// marks an episode ended by the agent without success.
fn transition(s: &mut GridState, spec: &TaskSpec, action: Action) -> (bool, bool) {
    s.step_count += 1;
    let front = s.front();
    let mut success = false;
    match action {
        Action::Left => s.agent_dir = (s.agent_dir + 3) & 3,
        Action::Right => s.agent_dir = (s.agent_dir + 1) & 3,
        Action::Forward => {
            if let Some((x, y)) = front {
                let c = s.cell(x, y);
                if c.passable() {
                    s.agent_pos = (x, y);
                    if c == Cell::Goal {
                        match spec.family {
                            Family::B => {
                                if s.carried.map(Object::cell) == Some(target_cell(s)) {
                                    s.flags.delivered = true;
                                    success = true;
                                }
                            }
                            Family::C | Family::E => success = true,
                            _ => {}
                        }
                    }
                }
            }
        }
        Action::Pickup => {
            if let (Some((x, y)), None) = (front, s.carried) {
                let c = s.cell(x, y);
                let sealed_box = c == Cell::Box && s.hidden_key == Some((x, y));
                if let (Some(obj), false) = (c.object(), sealed_box) {
                    s.carried = Some(obj);
                    s.set(x, y, Cell::Empty);
                    match obj {
                        Object::Key => s.flags.has_key = true,
                        Object::Ball => s.flags.has_ball = true,
                        Object::Box => s.flags.has_box = true,
                        Object::Blocker => {}
                    }
                    if spec.family == Family::D && obj == Object::Box {
                        success = true;
                    }
                }
            }
        }
        Action::Drop => {
            if let (Some((x, y)), Some(obj)) = (front, s.carried) {
                if s.cell(x, y) == Cell::Empty {
                    s.set(x, y, obj.cell());
                    s.carried = None;
                }
            }
        }
        Action::Toggle => {
            if let Some((x, y)) = front {
                match s.cell(x, y) {
                    Cell::DoorLocked if s.carried == Some(Object::Key) => {
                        s.set(x, y, Cell::DoorOpen);
                        s.flags.door_open = true;
                    }
                    Cell::DoorClosed => {
                        s.set(x, y, Cell::DoorOpen);
                        s.flags.door_open = true;
                    }
                    Cell::DoorOpen => s.set(x, y, Cell::DoorClosed),
                    Cell::Box if s.hidden_key == Some((x, y)) => {
                        s.set(x, y, Cell::Key);
                        s.hidden_key = None;
                        s.flags.box_toggled = true;
                    }
                    _ => {}
                }
            }
        }
        Action::Done => {
            // go-to tasks end on `done`: success only next to the target
            if spec.family == Family::A {
                return (next_to_target(s), true);
            }
        }
    }
    (success, false)
}

/// Target object in one of the four neighbouring cells.
fn next_to_target(s: &GridState) -> bool {
    let target = target_cell(s);
    let (x, y) = s.agent_pos;
    [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)].iter().any(|(dx, dy)| {
        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
        nx >= 0 && ny >= 0 && (nx as usize) < s.width && (ny as usize) < s.height && s.cell(nx as usize, ny as usize) == target
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{EventFlags, Variant};

    fn open_room(w: usize, h: usize) -> GridState {
        let mut cells = vec![Cell::Empty; w * h];
        for y in 0..h {
            for x in 0..w {
                if x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    cells[y * w + x] = Cell::Wall;
                }
            }
        }
        GridState {
            width: w,
            height: h,
            cells,
            agent_pos: (1, 1),
            agent_dir: 0,
            carried: None,
            step_count: 0,
            flags: EventFlags::default(),
            mission: 0,
            hidden_key: None,
        }
    }

    fn env_with(spec: TaskSpec, state: GridState) -> GridEnv {
        GridEnv {
            spec,
            state,
            done: false,
        }
    }

    #[test]
    fn success_reward_follows_formula() {
        let spec = TaskSpec {
            family: Family::C,
            width: 10,
            height: 10,
            max_steps: 100,
            seed: 0,
            variant: Variant::Standard,
        };
        let mut st = open_room(10, 10);
        st.set(2, 1, Cell::Goal);
        st.step_count = 9;
        let mut env = env_with(spec, st);
        let out = env.step(Action::Forward as usize).unwrap();
        assert!(out.success && out.done);
        assert!((out.reward - 0.91).abs() < 1e-15);
        assert!(env.step(0).is_err());
    }

    #[test]
    fn reward_formula_exact_for_all_step_counts() {
        for max_steps in [25usize, 100, 400] {
            for s in 1..=max_steps {
                let spec = TaskSpec {
                    family: Family::C,
                    width: 5,
                    height: 5,
                    max_steps,
                    seed: 0,
                    variant: Variant::Standard,
                };
                let mut st = open_room(5, 5);
                st.set(2, 1, Cell::Goal);
                st.step_count = s - 1;
                let mut env = env_with(spec, st);
                let out = env.step(Action::Forward as usize).unwrap();
                assert_eq!(out.reward, 1.0 - 0.9 * (s as f64 / max_steps as f64));
            }
        }
    }

    #[test]
    fn timeout_gives_zero() {
        let spec = TaskSpec::small(Family::C, 4);
        let mut env = GridEnv::new(spec).unwrap();
        let mut last = None;
        for _ in 0..spec.max_steps {
            // spinning never succeeds
            last = Some(env.step(Action::Left as usize).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.success);
        assert_eq!(last.reward, 0.0);
    }

    #[test]
    fn goto_needs_done_next_to_target() {
        let spec = TaskSpec::standard(Family::A, 0);
        let mut st = open_room(10, 10);
        st.mission = 1;
        st.set(2, 1, Cell::Ball);
        let mut env = env_with(spec, st.clone());
        assert!(!env.step(Action::Left as usize).unwrap().done);
        assert!(!env.step(Action::Right as usize).unwrap().done);
        let out = env.step(Action::Done as usize).unwrap();
        assert!(out.success && out.done && out.reward > 0.0);

        st.agent_pos = (3, 3);
        let mut env = env_with(spec, st);
        let out = env.step(Action::Done as usize).unwrap();
        assert!(out.done && !out.success);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn wall_blocks_forward() {
        let spec = TaskSpec::standard(Family::C, 0);
        let mut st = open_room(10, 10);
        st.agent_dir = 3; // north, wall ahead
        let mut env = env_with(spec, st);
        env.step(Action::Forward as usize).unwrap();
        assert_eq!(env.state().agent_pos, (1, 1));
        assert_eq!(env.state().step_count, 1);
    }

    #[test]
    fn feature_normalisation() {
        let spec = TaskSpec {
            family: Family::A,
            width: 8,
            height: 8,
            max_steps: 256,
            seed: 0,
            variant: Variant::Standard,
        };
        let mut st = open_room(8, 8);
        st.agent_pos = (0, 0);
        let f = features(&st, 0, &spec);
        assert_eq!(&f[..5], &[0.0; 5]);
        st.agent_dir = 3;
        st.agent_pos = (7, 0);
        let f = features(&st, 6, &spec);
        assert_eq!(f[2], 1.0);
        assert_eq!(f[0], 1.0);
        assert_eq!(f[4], 1.0);
    }

    #[test]
    fn doorkey_solution_sets_flags() {
        // wall column at x=2 with a locked door at (2,1); key at (1,2); goal (3,1)
        let spec = TaskSpec::small(Family::C, 0);
        let mut st = open_room(5, 5);
        for y in 1..4 {
            st.set(2, y, Cell::Wall);
        }
        st.set(2, 1, Cell::DoorLocked);
        st.set(1, 2, Cell::Key);
        st.set(3, 1, Cell::Goal);
        st.agent_pos = (1, 1);
        st.agent_dir = 1; // facing the key
        let mut env = env_with(spec, st);
        env.step(Action::Pickup as usize).unwrap();
        assert!(env.state().flags.has_key);
        env.step(Action::Left as usize).unwrap(); // now east
        env.step(Action::Toggle as usize).unwrap();
        assert!(env.state().flags.door_open);
        env.step(Action::Forward as usize).unwrap();
        let out = env.step(Action::Forward as usize).unwrap();
        assert!(out.success);
    }

    #[test]
    fn observation_is_one_hot_per_cell() {
        let env = GridEnv::new(TaskSpec::standard(Family::E, 9)).unwrap();
        let obs = env.observation();
        assert_eq!(obs.len(), OBS_DIM);
        let window: f64 = obs[..VIEW * VIEW * N_CELL_KINDS].iter().sum();
        assert_eq!(window, (VIEW * VIEW) as f64);
        assert_eq!(obs.iter().sum::<f64>(), (VIEW * VIEW + 3) as f64);
    }
}
