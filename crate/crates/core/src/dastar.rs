//! Matrix-form A* with a differentiable node selection.
//!
//! The search keeps the open list `O`, closed list `C`, accumulated costs
//! `S` and heuristic `H` as matrices over the map and repeatedly selects the
//! open cell minimising `S + H + P`, where `P` is a non-negative bias supplied
//! by the caller (usually the encoder). `P` only reorders selection; costs in
//! `S` are always exact octile costs, so every reported path cost is exact.
//!
//! Selections are hard one-hot matrices in the forward pass and carry the
//! gradient of the masked temperature softmax in the backward pass. The
//! closed matrix is the sum of all selections and the path matrix the sum of
//! the selections of cells on the backtracked path, so a loss on either
//! reaches `P`.
//!
//! With `P = 0` the selection order is exactly classical A*; with
//! `P = (ω - 1)·H` it is exactly weighted A* with weight `ω`.

use std::collections::BinaryHeap;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::autodiff::{masked_softmax, BackwardRule, Graph, Tensor, TensorError, Var};
use crate::gridmap::{octile, Coord, GridMap, PlanInstance};
use crate::search::{backtrack, improves, HeapEntry, OpenKey, SearchResult};

#[derive(Debug, Error)]
pub enum DAStarError {
    #[error("open list exhausted: goal {goal} unreachable from {start}")]
    UnreachableGoal { start: Coord, goal: Coord },
    #[error("search exceeded {0} iterations")]
    IterationCapExceeded(usize),
    #[error("prediction factor has shape {found:?}, map is {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("prediction factor must be finite and non-negative (cell {0} is {1})")]
    InvalidFactor(usize, f64),
    #[error("cell {0} is not on the open list")]
    NotOpen(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DAStarConfig {
    /// Softmax temperature; `None` means `sqrt(H·W)` of the map.
    pub tau: Option<f64>,
    /// Selection cap; `None` means `H·W`.
    pub max_iters: Option<usize>,
    /// Lower the cost of cells already on the open list when a cheaper
    /// route is found (standard best-first rule). When off, the first cost
    /// assigned to a cell is kept.
    pub relax_open: bool,
    /// Only the last `K` selections contribute gradients; `None` keeps all.
    pub backprop_window: Option<usize>,
}

impl Default for DAStarConfig {
    fn default() -> Self {
        Self {
            tau: None,
            max_iters: None,
            relax_open: true,
            backprop_window: None,
        }
    }
}

impl DAStarConfig {
    pub fn tau_for(&self, map: &GridMap) -> f64 {
        self.tau
            .unwrap_or_else(|| ((map.width() * map.height()) as f64).sqrt())
    }

    pub fn max_iters_for(&self, map: &GridMap) -> usize {
        self.max_iters.unwrap_or(map.width() * map.height())
    }

    fn validate(&self) -> Result<(), DAStarError> {
        if let Some(t) = self.tau {
            if !(t > 0.0) || !t.is_finite() {
                return Err(DAStarError::InvalidConfig(format!("tau {t}")));
            }
        }
        if self.max_iters == Some(0) {
            return Err(DAStarError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if self.backprop_window == Some(0) {
            return Err(DAStarError::InvalidConfig("backprop_window must be >= 1".into()));
        }
        Ok(())
    }
}

/// Octile distance from every cell to `goal`, shape `[height, width]`.
pub fn heuristic_matrix(width: usize, height: usize, goal: Coord) -> Tensor {
    Tensor::from_fn(&[height, width], |i| octile(Coord::new(i / width, i % width), goal))
}

/// `P = (ω - 1)·H`, the bias under which the search is weighted A*.
pub fn weighted_astar_factor(instance: &PlanInstance, weight: f64) -> Tensor {
    let map = instance.map();
    let mut h = heuristic_matrix(map.width(), map.height(), instance.goal());
    h.data_mut().iter_mut().for_each(|v| *v *= weight - 1.0);
    h
}

fn check_factor(map: &GridMap, p: &Tensor) -> Result<(), DAStarError> {
    if p.shape() != [map.height(), map.width()] {
        return Err(DAStarError::ShapeMismatch {
            expected: vec![map.height(), map.width()],
            found: p.shape().to_vec(),
        });
    }
    if let Some((i, &v)) = p.data().iter().enumerate().find(|(_, v)| !(**v >= 0.0) || !v.is_finite()) {
        return Err(DAStarError::InvalidFactor(i, v));
    }
    Ok(())
}

/// A cost written by [`SearchState::expand`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Relaxation {
    pub index: usize,
    pub cost: f64,
    pub newly_opened: bool,
}

/// Search matrices. `O`, `C` are binary; `S` is `+∞` off `O ∪ C`.
#[derive(Debug, Clone)]
pub struct SearchState<'a> {
    map: &'a GridMap,
    open: Vec<f64>,
    closed: Vec<f64>,
    s: Vec<f64>,
    h: Vec<f64>,
    p: Vec<f64>,
    parents: Vec<usize>,
    start: usize,
    goal: usize,
    relax_open: bool,
}

impl<'a> SearchState<'a> {
    pub fn new(instance: &'a PlanInstance, p: &Tensor) -> Result<Self, DAStarError> {
        let map = instance.map();
        check_factor(map, p)?;
        let n = map.len();
        let (start, goal) = (instance.start_index(), instance.goal_index());
        let mut open = vec![0.0; n];
        let mut s = vec![f64::INFINITY; n];
        open[start] = 1.0;
        s[start] = 0.0;
        Ok(Self {
            map,
            open,
            closed: vec![0.0; n],
            s,
            h: heuristic_matrix(map.width(), map.height(), instance.goal()).into_data(),
            p: p.data().to_vec(),
            parents: vec![usize::MAX; n],
            start,
            goal,
            relax_open: true,
        })
    }

    pub fn with_relax_open(mut self, relax: bool) -> Self {
        self.relax_open = relax;
        self
    }

    fn matrix(&self, data: &[f64]) -> Tensor {
        Tensor::new(vec![self.map.height(), self.map.width()], data.to_vec()).expect("map-shaped")
    }

    pub fn open(&self) -> Tensor {
        self.matrix(&self.open)
    }

    pub fn closed(&self) -> Tensor {
        self.matrix(&self.closed)
    }

    pub fn costs(&self) -> Tensor {
        self.matrix(&self.s)
    }

    pub fn heuristic(&self) -> Tensor {
        self.matrix(&self.h)
    }

    pub fn factor(&self) -> Tensor {
        self.matrix(&self.p)
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        (self.parents[index] != usize::MAX).then_some(self.parents[index])
    }

    pub fn start_onehot(&self) -> Tensor {
        self.onehot(self.start)
    }

    pub fn goal_onehot(&self) -> Tensor {
        self.onehot(self.goal)
    }

    pub fn onehot(&self, index: usize) -> Tensor {
        let mut t = Tensor::zeros(&[self.map.height(), self.map.width()]);
        t.data_mut()[index] = 1.0;
        t
    }

    fn key(&self, i: usize) -> OpenKey {
        OpenKey {
            score: self.s[i] + self.h[i] + self.p[i],
            h: self.h[i],
            index: i,
        }
    }

    /// `S + H + P`.
    pub fn scores(&self) -> Tensor {
        Tensor::from_fn(&[self.map.height(), self.map.width()], |i| self.s[i] + self.h[i] + self.p[i])
    }

    /// Index of the open cell with the lowest `S + H + P` (ties: lower `H`,
    /// then lower index), by a full scan of `O`.
    pub fn select(&self) -> Result<usize, DAStarError> {
        let mut best: Option<OpenKey> = None;
        for i in (0..self.open.len()).filter(|&i| self.open[i] != 0.0) {
            let k = self.key(i);
            if best.is_none_or(|b| k.precedes(&b)) {
                best = Some(k);
            }
        }
        best.map(|k| k.index).ok_or(DAStarError::UnreachableGoal {
            start: self.map.coord(self.start),
            goal: self.map.coord(self.goal),
        })
    }

    /// One-hot selection matrix `N'`.
    pub fn select_node(&self) -> Result<Tensor, DAStarError> {
        self.select().map(|i| self.onehot(i))
    }

    /// Records `N'` in `graph`: hard forward, softmax backward into `p`.
    pub fn select_node_recorded(&self, graph: &mut Graph, p: Var, tau: f64) -> Result<Var, DAStarError> {
        let index = self.select()?;
        let base = Tensor::from_fn(&[self.map.height(), self.map.width()], |i| self.s[i] + self.h[i]);
        let base = graph.constant(base);
        let scores = graph.add(base, p)?;
        Ok(graph.straight_through_select(scores, &self.open(), tau, Some(index))?)
    }

    /// Moves `index` from `O` to `C` and relaxes its free, unclosed
    /// neighbours.
    pub fn expand(&mut self, index: usize) -> Result<Vec<Relaxation>, DAStarError> {
        if self.open[index] == 0.0 {
            return Err(DAStarError::NotOpen(index));
        }
        self.open[index] = 0.0;
        self.closed[index] = 1.0;
        let mut out = Vec::new();
        for (nb, step) in self.map.neighbors(index) {
            if self.closed[nb] != 0.0 {
                continue;
            }
            let was_open = self.open[nb] != 0.0;
            if was_open && !self.relax_open {
                continue;
            }
            let candidate = self.s[index] + step;
            if improves(candidate, self.s[nb]) {
                self.s[nb] = candidate;
                self.parents[nb] = index;
                self.open[nb] = 1.0;
                out.push(Relaxation {
                    index: nb,
                    cost: candidate,
                    newly_opened: !was_open,
                });
            }
        }
        Ok(out)
    }

    /// Marks `index` closed without relaxing neighbours (goal selection).
    fn close(&mut self, index: usize) {
        self.open[index] = 0.0;
        self.closed[index] = 1.0;
    }

    pub fn path_to(&self, index: usize) -> Vec<Coord> {
        backtrack(self.map, &self.parents, index)
    }

    fn check_invariants(&self) -> bool {
        (0..self.open.len()).all(|i| {
            self.open[i] * self.closed[i] == 0.0
                && (self.s[i].is_finite() == (self.open[i] + self.closed[i] > 0.0))
        })
    }
}

/// What happened at one selection, enough to replay the search.
#[derive(Debug, Clone)]
pub struct TraceStep {
    pub selected: usize,
    pub relaxations: Vec<(usize, f64)>,
}

/// Replay log of one search.
#[derive(Debug, Clone)]
pub struct SearchTrace {
    pub width: usize,
    pub height: usize,
    pub start: usize,
    pub tau: f64,
    pub steps: Vec<TraceStep>,
    pub on_path: Vec<bool>,
    heuristic: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DAStarOutcome {
    pub result: SearchResult,
    pub trace: SearchTrace,
}

impl DAStarOutcome {
    /// Count of ones in the closed matrix.
    pub fn search_area(&self) -> usize {
        self.result.expansions
    }
}

/// Runs the search for a fixed bias `P` without recording gradients.
pub fn search(instance: &PlanInstance, p: &Tensor, config: &DAStarConfig) -> Result<DAStarOutcome, DAStarError> {
    config.validate()?;
    let started = Instant::now();
    let map = instance.map();
    let mut state = SearchState::new(instance, p)?.with_relax_open(config.relax_open);
    let cap = config.max_iters_for(map);
    let mut heap = BinaryHeap::new();
    heap.push(HeapEntry(state.key(state.start)));
    let mut steps = Vec::new();
    let mut order = Vec::new();
    loop {
        if steps.len() == cap {
            return Err(DAStarError::IterationCapExceeded(cap));
        }
        // the heap mirrors the open matrix; stale entries belong to closed cells
        let selected = loop {
            match heap.pop() {
                Some(HeapEntry(k)) if state.closed[k.index] == 0.0 => break k.index,
                Some(_) => continue,
                None => {
                    return Err(DAStarError::UnreachableGoal {
                        start: instance.start(),
                        goal: instance.goal(),
                    })
                }
            }
        };
        order.push(map.coord(selected));
        if selected == state.goal {
            state.close(selected);
            steps.push(TraceStep {
                selected,
                relaxations: Vec::new(),
            });
            break;
        }
        let relaxations = state.expand(selected)?;
        for r in &relaxations {
            heap.push(HeapEntry(state.key(r.index)));
        }
        steps.push(TraceStep {
            selected,
            relaxations: relaxations.iter().map(|r| (r.index, r.cost)).collect(),
        });
    }
    debug_assert!(state.check_invariants());
    let path = state.path_to(state.goal);
    let mut on_path = vec![false; map.len()];
    for c in &path {
        on_path[map.index(*c)] = true;
    }
    let closed: Vec<u8> = state.closed.iter().map(|&v| v as u8).collect();
    let result = SearchResult::assemble(map, path, closed, order, started.elapsed());
    let trace = SearchTrace {
        width: map.width(),
        height: map.height(),
        start: state.start,
        tau: config.tau_for(map),
        steps,
        on_path,
        heuristic: state.h,
    };
    Ok(DAStarOutcome { result, trace })
}

/// Search output inside a graph: `closed` and `path` are `[H, W]` nodes
/// whose backward pass reaches `p`.
#[derive(Debug, Clone)]
pub struct RecordedSearch {
    pub outcome: DAStarOutcome,
    pub closed: Var,
    pub path: Var,
}

/// Runs the search on the value of `p` and records `C` and `μ` as
/// differentiable functions of it. The selections are replayed in the
/// backward pass instead of being stored as separate nodes.
pub fn search_recorded(
    graph: &mut Graph,
    instance: &PlanInstance,
    p: Var,
    config: &DAStarConfig,
) -> Result<RecordedSearch, DAStarError> {
    let outcome = search(instance, graph.value(p), config)?;
    let trace = Arc::new(outcome.trace.clone());
    let first = config
        .backprop_window
        .map_or(0, |k| trace.steps.len().saturating_sub(k));
    let shape = [instance.map().height(), instance.map().width()];
    let closed_value = Tensor::new(
        shape.to_vec(),
        outcome.result.closed_matrix.iter().map(|&v| f64::from(v)).collect(),
    )?;
    let path_value = Tensor::new(
        shape.to_vec(),
        outcome.result.path_matrix.iter().map(|&v| f64::from(v)).collect(),
    )?;
    let closed = graph.custom(
        &[p],
        closed_value,
        Box::new(SelectionBackward {
            trace: Arc::clone(&trace),
            first,
            path_only: false,
        }),
    );
    let path = graph.custom(
        &[p],
        path_value,
        Box::new(SelectionBackward {
            trace,
            first,
            path_only: true,
        }),
    );
    Ok(RecordedSearch {
        outcome,
        closed,
        path,
    })
}

/// Reference route for [`search_recorded`]: one graph node per selection,
/// summed explicitly. Same forward values and gradients, much more memory.
pub fn search_recorded_stepwise(
    graph: &mut Graph,
    instance: &PlanInstance,
    p: Var,
    config: &DAStarConfig,
) -> Result<RecordedSearch, DAStarError> {
    config.validate()?;
    let started = Instant::now();
    let map = instance.map();
    let tau = config.tau_for(map);
    let cap = config.max_iters_for(map);
    let p_value = graph.value(p).clone();
    let mut state = SearchState::new(instance, &p_value)?.with_relax_open(config.relax_open);
    let mut selections = Vec::new();
    let mut steps = Vec::new();
    let mut order = Vec::new();
    loop {
        if steps.len() == cap {
            return Err(DAStarError::IterationCapExceeded(cap));
        }
        let selected = state.select()?;
        let node = state.select_node_recorded(graph, p, tau)?;
        selections.push((selected, node));
        order.push(map.coord(selected));
        if selected == state.goal {
            state.close(selected);
            steps.push(TraceStep {
                selected,
                relaxations: Vec::new(),
            });
            break;
        }
        let relax = state.expand(selected)?;
        steps.push(TraceStep {
            selected,
            relaxations: relax.iter().map(|r| (r.index, r.cost)).collect(),
        });
    }
    let path = state.path_to(state.goal);
    let mut on_path = vec![false; map.len()];
    for c in &path {
        on_path[map.index(*c)] = true;
    }
    let first = config
        .backprop_window
        .map_or(0, |k| selections.len().saturating_sub(k));
    let shape = [map.height(), map.width()];
    // selections before the window enter as constants
    let mut closed_var = graph.constant(Tensor::zeros(&shape));
    let mut path_var = graph.constant(Tensor::zeros(&shape));
    for (t, &(selected, node)) in selections.iter().enumerate() {
        let node = if t < first {
            let frozen = graph.value(node).clone();
            graph.constant(frozen)
        } else {
            node
        };
        closed_var = graph.add(closed_var, node)?;
        if on_path[selected] {
            path_var = graph.add(path_var, node)?;
        }
    }
    let closed: Vec<u8> = state.closed.iter().map(|&v| v as u8).collect();
    let result = SearchResult::assemble(map, path, closed, order, started.elapsed());
    let trace = SearchTrace {
        width: map.width(),
        height: map.height(),
        start: state.start,
        tau,
        steps,
        on_path,
        heuristic: state.h,
    };
    Ok(RecordedSearch {
        outcome: DAStarOutcome { result, trace },
        closed: closed_var,
        path: path_var,
    })
}

struct SelectionBackward {
    trace: Arc<SearchTrace>,
    first: usize,
    path_only: bool,
}

impl BackwardRule for SelectionBackward {
    fn backward(&self, upstream: &[f64], inputs: &[&Tensor]) -> Vec<Option<Vec<f64>>> {
        let trace = &*self.trace;
        let p = inputs[0].data();
        let n = trace.width * trace.height;
        let mut grad = vec![0.0; n];
        let mut s = vec![f64::INFINITY; n];
        let mut open: Vec<usize> = vec![trace.start];
        let mut slot = vec![usize::MAX; n];
        slot[trace.start] = 0;
        s[trace.start] = 0.0;
        let mut scores = Vec::new();
        for (t, step) in trace.steps.iter().enumerate() {
            if t >= self.first && (!self.path_only || trace.on_path[step.selected]) {
                scores.clear();
                scores.extend(open.iter().map(|&j| s[j] + trace.heuristic[j] + p[j]));
                let ones = vec![1.0; open.len()];
                let soft = masked_softmax(&scores, &ones, trace.tau).unwrap_or_default();
                let mean: f64 = open.iter().zip(&soft).map(|(&j, y)| y * upstream[j]).sum();
                for (&j, y) in open.iter().zip(&soft) {
                    grad[j] -= y * (upstream[j] - mean) / trace.tau;
                }
            }
            // replay: remove the selection, apply its relaxations
            let pos = slot[step.selected];
            open.swap_remove(pos);
            if pos < open.len() {
                slot[open[pos]] = pos;
            }
            slot[step.selected] = usize::MAX;
            for &(j, cost) in &step.relaxations {
                s[j] = cost;
                if slot[j] == usize::MAX {
                    slot[j] = open.len();
                    open.push(j);
                }
            }
        }
        vec![Some(grad)]
    }
}
