use std::collections::BinaryHeap;
use std::time::Instant;

use super::{backtrack, improves, HeapEntry, OpenKey, SearchError, SearchResult};
use crate::gridmap::{octile, GridMap, PlanInstance};

/// Uniform-cost search; the optimality oracle for everything else.
pub fn dijkstra(instance: &PlanInstance) -> Result<SearchResult, SearchError> {
    best_first(instance, |_| 0.0, 1.0)
}

/// A* with `f = g + weight·h` and the octile heuristic. `weight > 1` gives
/// weighted A*.
pub fn astar(instance: &PlanInstance, weight: f64) -> Result<SearchResult, SearchError> {
    if !(weight >= 1.0) || !weight.is_finite() {
        return Err(SearchError::InvalidWeight(weight));
    }
    let map = instance.map();
    let goal = instance.goal();
    best_first(instance, |i| octile(map.coord(i), goal), weight)
}

fn best_first(
    instance: &PlanInstance,
    heuristic: impl Fn(usize) -> f64,
    weight: f64,
) -> Result<SearchResult, SearchError> {
    let started = Instant::now();
    let map = instance.map();
    let n = map.len();
    let (start, goal) = (instance.start_index(), instance.goal_index());
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![0u8; n];
    let mut order = Vec::new();
    let mut heap = BinaryHeap::new();
    let key = |i: usize, gi: f64| {
        let h = heuristic(i);
        HeapEntry(OpenKey {
            score: gi + weight * h,
            h,
            index: i,
        })
    };
    g[start] = 0.0;
    heap.push(key(start, 0.0));
    while let Some(HeapEntry(top)) = heap.pop() {
        let cur = top.index;
        if closed[cur] == 1 {
            continue;
        }
        closed[cur] = 1;
        order.push(map.coord(cur));
        if cur == goal {
            let path = backtrack(map, &parent, goal);
            return Ok(SearchResult::assemble(map, path, closed, order, started.elapsed()));
        }
        for (nb, step) in map.neighbors(cur) {
            if closed[nb] == 1 {
                continue;
            }
            let candidate = g[cur] + step;
            if improves(candidate, g[nb]) {
                g[nb] = candidate;
                parent[nb] = cur;
                heap.push(key(nb, candidate));
            }
        }
    }
    Err(SearchError::UnreachableGoal {
        start: instance.start(),
        goal: instance.goal(),
    })
}

/// Exact shortest-path distances from `source` to every cell (∞ where
/// unreachable).
pub fn distances_from(map: &GridMap, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; map.len()];
    let mut done = vec![false; map.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapEntry(OpenKey {
        score: 0.0,
        h: 0.0,
        index: source,
    }));
    while let Some(HeapEntry(top)) = heap.pop() {
        let cur = top.index;
        if done[cur] {
            continue;
        }
        done[cur] = true;
        for (nb, step) in map.neighbors(cur) {
            let candidate = dist[cur] + step;
            if !done[nb] && improves(candidate, dist[nb]) {
                dist[nb] = candidate;
                heap.push(HeapEntry(OpenKey {
                    score: candidate,
                    h: 0.0,
                    index: nb,
                }));
            }
        }
    }
    dist
}
