//! Occupancy grids, planning instances and the 8-connected move model.
//!
//! Cells are stored row-major with `1` for an obstacle and `0` for free
//! space. Everything outside the grid counts as an obstacle, so no planner
//! ever wraps around an edge.

mod generate;
mod io;

use std::collections::VecDeque;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use generate::{generate_map, GeneratorKind};
pub use io::{load_map, parse_map, save_map, write_map, MAP_FORMAT_VERSION};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: usize, height: usize },
    #[error("density {0} is outside [0, 0.6)")]
    DensityOutOfRange(f64),
    #[error("occupancy has {found} cells, expected {expected}")]
    CellCount { expected: usize, found: usize },
    #[error("occupancy value {0} at index {1} is not 0 or 1")]
    NonBinary(u8, usize),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("row {row} has {found} characters, expected {expected}")]
    InconsistentRowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("expected {expected} rows, found {found}")]
    RowCount { expected: usize, found: usize },
    #[error("illegal character {ch:?} at row {row}, column {col}")]
    IllegalCharacter { row: usize, col: usize, ch: char },
    #[error("no two mutually reachable free cells")]
    NoValidPair,
    #[error("cell {0} is out of bounds")]
    OutOfBounds(Coord),
    #[error("cell {0} is an obstacle")]
    Blocked(Coord),
    #[error("start and goal are the same cell {0}")]
    StartIsGoal(Coord),
    #[error("goal {goal} is not reachable from start {start}")]
    Unreachable { start: Coord, goal: Coord },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord {
    pub row: usize,
    pub col: usize,
}

impl Coord {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.row, self.col)
    }
}

/// Binary occupancy grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GridMap {
    width: usize,
    height: usize,
    occupancy: Vec<u8>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, occupancy: Vec<u8>) -> Result<Self, MapError> {
        if width < 2 || height < 2 {
            return Err(MapError::InvalidDimensions { width, height });
        }
        if occupancy.len() != width * height {
            return Err(MapError::CellCount {
                expected: width * height,
                found: occupancy.len(),
            });
        }
        if let Some((i, &v)) = occupancy.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(MapError::NonBinary(v, i));
        }
        Ok(Self {
            width,
            height,
            occupancy,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self, MapError> {
        Self::new(width, height, vec![0; width * height])
    }

    /// Builds a map from rows of `.` (free) and `#` (obstacle).
    pub fn from_rows<S: AsRef<str>>(rows: &[S]) -> Result<Self, MapError> {
        let text: Vec<&str> = rows.iter().map(AsRef::as_ref).collect();
        io::parse_rows(&text, text.len(), text.first().map_or(0, |r| r.chars().count()))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn occupancy(&self) -> &[u8] {
        &self.occupancy
    }

    pub fn index(&self, c: Coord) -> usize {
        c.row * self.width + c.col
    }

    pub fn coord(&self, index: usize) -> Coord {
        Coord::new(index / self.width, index % self.width)
    }

    pub fn contains(&self, c: Coord) -> bool {
        c.row < self.height && c.col < self.width
    }

    pub fn is_free(&self, c: Coord) -> bool {
        self.contains(c) && self.occupancy[self.index(c)] == 0
    }

    /// Signed lookup; anything off the grid is blocked.
    pub fn free_at(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.occupancy[row as usize * self.width + col as usize] == 0
    }

    pub fn set(&mut self, c: Coord, blocked: bool) {
        let i = self.index(c);
        self.occupancy[i] = u8::from(blocked);
    }

    pub fn obstacle_count(&self) -> usize {
        self.occupancy.iter().filter(|&&v| v == 1).count()
    }

    /// Free neighbours of `index` under the move model, in fixed row-major
    /// direction order, together with the step cost.
    pub fn neighbors(&self, index: usize) -> Neighbors<'_> {
        let c = self.coord(index);
        Neighbors {
            map: self,
            row: c.row as isize,
            col: c.col as isize,
            dir: 0,
        }
    }

    /// Connected free components under the move model, each sorted by
    /// index; components are ordered by their smallest index.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.len()];
        let mut out = Vec::new();
        let mut queue = VecDeque::new();
        for seed in 0..self.len() {
            if self.occupancy[seed] != 0 || label[seed] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut members = vec![seed];
            label[seed] = id;
            queue.push_back(seed);
            while let Some(i) = queue.pop_front() {
                for (n, _) in self.neighbors(i) {
                    if label[n] == usize::MAX {
                        label[n] = id;
                        members.push(n);
                        queue.push_back(n);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Renders the map in the textual row format (`.`/`#`).
    pub fn to_rows(&self) -> Vec<String> {
        self.occupancy
            .chunks(self.width)
            .map(|row| row.iter().map(|&v| if v == 1 { '#' } else { '.' }).collect())
            .collect()
    }
}

/// The eight move directions in row-major order.
pub const DIRECTIONS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

pub struct Neighbors<'a> {
    map: &'a GridMap,
    row: isize,
    col: isize,
    dir: usize,
}

impl Iterator for Neighbors<'_> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<Self::Item> {
        while self.dir < DIRECTIONS.len() {
            let (dr, dc) = DIRECTIONS[self.dir];
            self.dir += 1;
            let (r, c) = (self.row + dr, self.col + dc);
            if !self.map.free_at(r, c) {
                continue;
            }
            let diagonal = dr != 0 && dc != 0;
            // no corner cutting
            if diagonal && !(self.map.free_at(self.row + dr, self.col) && self.map.free_at(self.row, self.col + dc)) {
                continue;
            }
            let cost = if diagonal { SQRT_2 } else { 1.0 };
            return Some((r as usize * self.map.width + c as usize, cost));
        }
        None
    }
}

/// Octile distance, the exact obstacle-free cost under the move model.
pub fn octile(a: Coord, b: Coord) -> f64 {
    let dr = a.row.abs_diff(b.row) as f64;
    let dc = a.col.abs_diff(b.col) as f64;
    dr.max(dc) + (SQRT_2 - 1.0) * dr.min(dc)
}

/// A map with a start and goal cell: the unit of planning and training.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PlanInstance {
    map: GridMap,
    start: Coord,
    goal: Coord,
}

impl PlanInstance {
    /// Validates both endpoints and that the goal is reachable.
    pub fn new(map: GridMap, start: Coord, goal: Coord) -> Result<Self, MapError> {
        for c in [start, goal] {
            if !map.contains(c) {
                return Err(MapError::OutOfBounds(c));
            }
            if !map.is_free(c) {
                return Err(MapError::Blocked(c));
            }
        }
        if start == goal {
            return Err(MapError::StartIsGoal(start));
        }
        if !reachable(&map, start, goal) {
            return Err(MapError::Unreachable { start, goal });
        }
        Ok(Self { map, start, goal })
    }

    /// Skips the reachability check. Planners still report unreachable
    /// goals, so this is only for exercising those error paths.
    pub fn new_unchecked(map: GridMap, start: Coord, goal: Coord) -> Self {
        Self { map, start, goal }
    }

    pub fn map(&self) -> &GridMap {
        &self.map
    }

    pub fn start(&self) -> Coord {
        self.start
    }

    pub fn goal(&self) -> Coord {
        self.goal
    }

    pub fn start_index(&self) -> usize {
        self.map.index(self.start)
    }

    pub fn goal_index(&self) -> usize {
        self.map.index(self.goal)
    }
}

fn reachable(map: &GridMap, from: Coord, to: Coord) -> bool {
    let target = map.index(to);
    let mut seen = vec![false; map.len()];
    let mut queue = VecDeque::from([map.index(from)]);
    seen[map.index(from)] = true;
    while let Some(i) = queue.pop_front() {
        if i == target {
            return true;
        }
        for (n, _) in map.neighbors(i) {
            if !seen[n] {
                seen[n] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

/// Samples a start/goal pair uniformly from the largest free component.
pub fn sample_instance(map: &GridMap, seed: u64) -> Result<PlanInstance, MapError> {
    let components = map.components();
    // ties go to the component with the smallest first index
    let largest = components
        .iter()
        .fold(None::<&Vec<usize>>, |best, c| match best {
            Some(b) if b.len() >= c.len() => Some(b),
            _ => Some(c),
        })
        .ok_or(MapError::NoValidPair)?;
    if largest.len() < 2 {
        return Err(MapError::NoValidPair);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = largest.len();
    let s = rng.random_range(0..n);
    let mut g = rng.random_range(0..n - 1);
    if g >= s {
        g += 1;
    }
    Ok(PlanInstance {
        map: map.clone(),
        start: map.coord(largest[s]),
        goal: map.coord(largest[g]),
    })
}
