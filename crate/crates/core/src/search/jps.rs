//! Jump Point Search for 8-connected grids without corner cutting.
//!
//! Straight scans stop at cells with a forced neighbour; diagonal scans stop
//! wherever one of their two straight sub-scans finds a jump point. The
//! closed matrix marks every expanded jump point and every cell any scan
//! stepped on, so corridor-heavy maps with frequent turns show their true
//! scanning cost.

use std::collections::BinaryHeap;
use std::time::Instant;

use super::{improves, HeapEntry, OpenKey, SearchError, SearchResult};
use crate::gridmap::{octile, Coord, GridMap, PlanInstance, DIRECTIONS};

#[derive(Debug, Clone)]
pub struct JpsOutcome {
    pub result: SearchResult,
    /// Jump points in expansion order.
    pub jump_points: Vec<Coord>,
}

pub fn jps(instance: &PlanInstance) -> Result<SearchResult, SearchError> {
    jps_detailed(instance).map(|o| o.result)
}

pub fn jps_detailed(instance: &PlanInstance) -> Result<JpsOutcome, SearchError> {
    let started = Instant::now();
    let mut search = Jps {
        map: instance.map(),
        goal: instance.goal(),
        touched: vec![0; instance.map().len()],
    };
    let map = instance.map();
    let n = map.len();
    let (start, goal) = (instance.start_index(), instance.goal_index());
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut expanded = vec![false; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    let key = |i: usize, gi: f64| {
        let h = octile(map.coord(i), instance.goal());
        HeapEntry(OpenKey {
            score: gi + h,
            h,
            index: i,
        })
    };
    g[start] = 0.0;
    heap.push(key(start, 0.0));
    while let Some(HeapEntry(top)) = heap.pop() {
        let cur = top.index;
        if expanded[cur] {
            continue;
        }
        expanded[cur] = true;
        search.touched[cur] = 1;
        order.push(map.coord(cur));
        if cur == goal {
            let path = interpolate(map, &parent, goal);
            let jump_points = order.clone();
            let result =
                SearchResult::assemble(map, path, search.touched, order, started.elapsed());
            return Ok(JpsOutcome {
                result,
                jump_points,
            });
        }
        let here = map.coord(cur);
        let from = (parent[cur] != usize::MAX).then(|| map.coord(parent[cur]));
        for dir in search.successor_directions(here, from) {
            let Some(jp) = search.jump(here, dir) else {
                continue;
            };
            let ji = map.index(jp);
            if expanded[ji] {
                continue;
            }
            let candidate = g[cur] + octile(here, jp);
            if improves(candidate, g[ji]) {
                g[ji] = candidate;
                parent[ji] = cur;
                heap.push(key(ji, candidate));
            }
        }
    }
    Err(SearchError::UnreachableGoal {
        start: instance.start(),
        goal: instance.goal(),
    })
}

struct Jps<'a> {
    map: &'a GridMap,
    goal: Coord,
    touched: Vec<u8>,
}

impl Jps<'_> {
    fn free(&self, r: isize, c: isize) -> bool {
        self.map.free_at(r, c)
    }

    fn can_step(&self, r: isize, c: isize, (dr, dc): (isize, isize)) -> bool {
        if !self.free(r + dr, c + dc) {
            return false;
        }
        dr == 0 || dc == 0 || (self.free(r + dr, c) && self.free(r, c + dc))
    }

    /// Pruned directions to scan from `here`, given the jump point it was
    /// reached from.
    fn successor_directions(&self, here: Coord, from: Option<Coord>) -> Vec<(isize, isize)> {
        let (r, c) = (here.row as isize, here.col as isize);
        let Some(p) = from else {
            return DIRECTIONS
                .iter()
                .copied()
                .filter(|&d| self.can_step(r, c, d))
                .collect();
        };
        let dr = (r - p.row as isize).signum();
        let dc = (c - p.col as isize).signum();
        let mut dirs = Vec::with_capacity(5);
        if dr != 0 && dc != 0 {
            for d in [(dr, 0), (0, dc), (dr, dc)] {
                if self.can_step(r, c, d) {
                    dirs.push(d);
                }
            }
        } else {
            // straight travel: forward, plus both perpendiculars and the
            // forward diagonals, which covers every forced neighbour
            let (pr, pc) = (dc, dr);
            let cands = [
                (dr, dc),
                (dr + pr, dc + pc),
                (dr - pr, dc - pc),
                (pr, pc),
                (-pr, -pc),
            ];
            for d in cands {
                if self.can_step(r, c, d) {
                    dirs.push(d);
                }
            }
        }
        dirs
    }

    /// Scans from `from` in `dir`; returns the first jump point found.
    fn jump(&mut self, from: Coord, dir: (isize, isize)) -> Option<Coord> {
        let (mut r, mut c) = (from.row as isize, from.col as isize);
        let (dr, dc) = dir;
        let diagonal = dr != 0 && dc != 0;
        loop {
            if !self.can_step(r, c, dir) {
                return None;
            }
            r += dr;
            c += dc;
            let here = Coord::new(r as usize, c as usize);
            self.touched[self.map.index(here)] = 1;
            if here == self.goal {
                return Some(here);
            }
            if diagonal {
                if self.jump(here, (dr, 0)).is_some() || self.jump(here, (0, dc)).is_some() {
                    return Some(here);
                }
            } else if self.has_forced_neighbor(r, c, dir) {
                return Some(here);
            }
        }
    }

    fn has_forced_neighbor(&self, r: isize, c: isize, (dr, dc): (isize, isize)) -> bool {
        if dr == 0 {
            (self.free(r - 1, c) && !self.free(r - 1, c - dc))
                || (self.free(r + 1, c) && !self.free(r + 1, c - dc))
        } else {
            (self.free(r, c - 1) && !self.free(r - dr, c - 1))
                || (self.free(r, c + 1) && !self.free(r - dr, c + 1))
        }
    }
}

/// Expands the jump-point chain into unit steps. Every segment is straight
/// or a pure diagonal.
fn interpolate(map: &GridMap, parent: &[usize], goal: usize) -> Vec<Coord> {
    let mut points = vec![map.coord(goal)];
    let mut cur = goal;
    while parent[cur] != usize::MAX {
        cur = parent[cur];
        points.push(map.coord(cur));
    }
    points.reverse();
    let mut path = vec![points[0]];
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let dr = (b.row as isize - a.row as isize).signum();
        let dc = (b.col as isize - a.col as isize).signum();
        let (mut r, mut c) = (a.row as isize, a.col as isize);
        while (r, c) != (b.row as isize, b.col as isize) {
            r += dr;
            c += dc;
            path.push(Coord::new(r as usize, c as usize));
        }
    }
    path
}
