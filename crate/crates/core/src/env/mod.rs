//! Deterministic 4-connected grid mazes where any state can serve as a goal.
//!
//! Coordinates are `(x, y)` with `x` growing to the right and `y` growing
//! upwards, so the last line of a layout file is `y = 0`.

mod corpus;
mod layout;

use std::collections::VecDeque;
use std::fmt;

pub use corpus::{builtin, default_horizon, load_layout, BUILTIN_NAMES, FILE_HORIZON};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Up, Action::Down, Action::Left, Action::Right];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("action index {i} out of range")))
    }
}

/// Position plus the step counter within the current episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub cell: Cell,
    pub step: usize,
}

/// A maze: wall bitmap, fixed start, evaluation goals and episode horizon.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MazeSpec {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    start: Cell,
    goals: Vec<Cell>,
    horizon: usize,
}

impl MazeSpec {
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        start: Cell,
        goals: Vec<Cell>,
        horizon: usize,
    ) -> Result<Self> {
        if width == 0 || height == 0 || walls.len() != width * height {
            return Err(Error::InvalidInput(format!(
                "wall bitmap of {} entries does not fit {width}x{height}",
                walls.len()
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        let spec = Self { width, height, walls, start, goals, horizon };
        if !spec.is_free(start) {
            return Err(Error::InvalidInput(format!("start cell {start} is a wall or out of bounds")));
        }
        if let Some(g) = spec.goals.iter().find(|g| !spec.is_free(**g)) {
            return Err(Error::InvalidInput(format!("goal cell {g} is a wall or out of bounds")));
        }
        Ok(spec)
    }

    /// Parses the text layout format (`#` wall, `.` free, `S` start,
    /// `G` evaluation goal, `*` start that is also a goal).
    pub fn parse(text: &str, horizon: usize) -> Result<Self> {
        layout::parse(text, horizon)
    }

    pub fn to_layout_string(&self) -> String {
        layout::render(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn with_horizon(mut self, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        self.horizon = horizon;
        Ok(self)
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[self.index(c)]
    }

    pub fn is_free(&self, c: Cell) -> bool {
        !self.is_wall(c)
    }

    /// Row-major index with `y` as the row.
    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, index: usize) -> Cell {
        Cell::new(index % self.width, index / self.width)
    }

    pub fn num_cells(&self) -> usize {
        self.width * self.height
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.num_cells()).map(|i| self.cell_at(i)).filter(|c| self.is_free(*c)).collect()
    }

    /// Free cells reachable from the start.
    pub fn reachable_cells(&self) -> Vec<Cell> {
        let dist = self.distances_from(self.start);
        (0..self.num_cells())
            .filter(|&i| dist[i].is_some())
            .map(|i| self.cell_at(i))
            .collect()
    }

    /// Where `action` leads from `c`, ignoring the step counter.
    pub fn next_cell(&self, c: Cell, action: Action) -> Cell {
        let target = match action {
            Action::Up => (c.y + 1 < self.height).then(|| Cell::new(c.x, c.y + 1)),
            Action::Down => c.y.checked_sub(1).map(|y| Cell::new(c.x, y)),
            Action::Left => c.x.checked_sub(1).map(|x| Cell::new(x, c.y)),
            Action::Right => (c.x + 1 < self.width).then(|| Cell::new(c.x + 1, c.y)),
        };
        match target {
            Some(t) if self.is_free(t) => t,
            _ => c,
        }
    }

    pub fn reset(&self) -> EnvState {
        EnvState { cell: self.start, step: 0 }
    }

    /// Moves one cell unless blocked; the step counter always advances.
    pub fn step(&self, state: EnvState, action: Action) -> Result<EnvState> {
        if state.step >= self.horizon {
            return Err(Error::EpisodeExhausted { step: state.step, horizon: self.horizon });
        }
        Ok(EnvState { cell: self.next_cell(state.cell, action), step: state.step + 1 })
    }

    /// Normalized coordinates `(x / (w-1), y / (h-1))`; a degenerate axis maps to 0.
    pub fn featurize(&self, c: Cell) -> [f64; 2] {
        let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        [norm(c.x, self.width), norm(c.y, self.height)]
    }

    /// Shortest-path lengths from `from` to every cell; `None` for walls and
    /// unreachable cells.
    pub fn distances_from(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_cells()];
        if self.is_wall(from) {
            return dist;
        }
        let mut queue = VecDeque::new();
        dist[self.index(from)] = Some(0);
        queue.push_back(from);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].expect("queued cells have distances");
            for a in Action::ALL {
                let n = self.next_cell(c, a);
                let slot = &mut dist[self.index(n)];
                if slot.is_none() {
                    *slot = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    /// Ground-truth temporal distance: the length of the shortest action
    /// sequence from `a` to `b`, or `None` when `b` is unreachable.
    pub fn bfs_distance(&self, a: Cell, b: Cell) -> Result<Option<usize>> {
        for c in [a, b] {
            if self.is_wall(c) {
                return Err(Error::InvalidInput(format!("{c} is a wall or out of bounds")));
            }
        }
        Ok(self.distances_from(a)[self.index(b)])
    }

    /// All-pairs distance table over `cells`, row `i` holding distances from `cells[i]`.
    pub fn distance_table(&self, cells: &[Cell]) -> Vec<Vec<Option<usize>>> {
        cells
            .iter()
            .map(|&a| {
                let d = self.distances_from(a);
                cells.iter().map(|&b| d[self.index(b)]).collect()
            })
            .collect()
    }

    /// Stable 64-bit FNV-1a digest of the rendered layout.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_layout_string().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
