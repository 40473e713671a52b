//! Classical reference planners on 8-connected grids with octile costs:
//! Dijkstra, (weighted) A* and Jump Point Search.

mod best_first;
mod jps;

use std::cmp::Ordering;
use std::time::Duration;

use thiserror::Error;

use crate::gridmap::{Coord, GridMap, SQRT_2};

pub use best_first::{astar, dijkstra, distances_from};
pub use jps::{jps, jps_detailed, JpsOutcome};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("goal {goal} is unreachable from {start}")]
    UnreachableGoal { start: Coord, goal: Coord },
    #[error("heuristic weight must be >= 1, got {0}")]
    InvalidWeight(f64),
}

/// Movement costs shared by every planner and by the path-length loss.
/// Diagonal moves need both adjacent orthogonal cells free.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostModel;

impl CostModel {
    pub const STRAIGHT: f64 = 1.0;
    pub const DIAGONAL: f64 = SQRT_2;
    pub const CORNER_CUTTING: bool = false;

    pub fn step_cost(a: Coord, b: Coord) -> f64 {
        if a.row != b.row && a.col != b.col {
            Self::DIAGONAL
        } else {
            Self::STRAIGHT
        }
    }
}

/// Outcome of one planning call.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub width: usize,
    pub height: usize,
    /// Start to goal, consecutive cells 8-adjacent.
    pub path: Vec<Coord>,
    pub path_matrix: Vec<u8>,
    pub closed_matrix: Vec<u8>,
    /// Number of ones in `closed_matrix`.
    pub expansions: usize,
    /// Cells in the order they were expanded (jump points for JPS).
    pub expansion_order: Vec<Coord>,
    pub cost: f64,
    pub elapsed: Duration,
}

impl SearchResult {
    pub(crate) fn assemble(
        map: &GridMap,
        path: Vec<Coord>,
        closed_matrix: Vec<u8>,
        expansion_order: Vec<Coord>,
        elapsed: Duration,
    ) -> Self {
        let mut path_matrix = vec![0u8; map.len()];
        for c in &path {
            path_matrix[map.index(*c)] = 1;
        }
        let cost = path_cost(&path);
        let expansions = closed_matrix.iter().filter(|&&v| v == 1).count();
        Self {
            width: map.width(),
            height: map.height(),
            path,
            path_matrix,
            closed_matrix,
            expansions,
            expansion_order,
            cost,
            elapsed,
        }
    }

    /// Number of cells on the path.
    pub fn path_cells(&self) -> usize {
        self.path_matrix.iter().filter(|&&v| v == 1).count()
    }
}

/// Sum of per-step octile costs along a path.
pub fn path_cost(path: &[Coord]) -> f64 {
    path.windows(2)
        .map(|w| CostModel::step_cost(w[0], w[1]))
        .sum()
}

/// Score differences below this are ties. Octile costs are sums of 1 and √2
/// whose genuine differences on desk-scale maps are many orders larger, so
/// this only absorbs rounding from summing in different orders.
pub const TIE_EPSILON: f64 = 1e-9;

/// Open-list key: lower score first, then lower heuristic, then lower
/// row-major index.
#[derive(Debug, Clone, Copy)]
pub(crate) struct OpenKey {
    pub score: f64,
    pub h: f64,
    pub index: usize,
}

impl OpenKey {
    pub(crate) fn precedes(&self, other: &OpenKey) -> bool {
        compare_keys(self, other) == Ordering::Less
    }
}

pub(crate) fn compare_keys(a: &OpenKey, b: &OpenKey) -> Ordering {
    let tied = |x: f64, y: f64| (x - y).abs() <= TIE_EPSILON || x == y;
    if !tied(a.score, b.score) {
        return a.score.total_cmp(&b.score);
    }
    if !tied(a.h, b.h) {
        return a.h.total_cmp(&b.h);
    }
    a.index.cmp(&b.index)
}

/// Min-heap adapter.
#[derive(Debug, Clone, Copy)]
pub(crate) struct HeapEntry(pub OpenKey);

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        compare_keys(&self.0, &other.0) == Ordering::Equal
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        compare_keys(&other.0, &self.0)
    }
}

/// True when `candidate` is a strict improvement over `current`.
pub(crate) fn improves(candidate: f64, current: f64) -> bool {
    candidate < current - TIE_EPSILON
}

pub(crate) fn backtrack(map: &GridMap, parent: &[usize], goal: usize) -> Vec<Coord> {
    let mut path = vec![map.coord(goal)];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        path.push(map.coord(cur));
    }
    path.reverse();
    path
}
