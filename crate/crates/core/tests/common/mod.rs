//! Shared oracles for the integration tests.
#![allow(dead_code)]

use iastar::autodiff::{Graph, Tensor, Var};
use iastar::dastar::{search, DAStarConfig};
use iastar::gridmap::Coord;
use iastar::trainer::path_length_loss;
use iastar::gridmap::{generate_map, sample_instance, GeneratorKind, GridMap, PlanInstance, DIRECTIONS};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Uniform values with magnitude at least `gap`, away from kinks at zero.
pub fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = rng.random_range(gap..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

/// Builds `⟨f(inputs), R⟩` and returns its value.
fn probe_value(inputs: &[Tensor], r: &Tensor, f: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.value(out).data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Largest norm-wise relative error between the backward pass and central
/// differences of the probe `⟨f(inputs), R⟩`, over at most `max_coords`
/// sampled coordinates per input.
pub fn fd_check(
    rng: &mut ChaCha8Rng,
    inputs: &[Tensor],
    max_coords: usize,
    f: impl Fn(&mut Graph, &[Var]) -> Var,
) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = f(&mut g, &vars);
    let r = uniform(rng, g.value(out).shape(), -1.0, 1.0);
    let grads = g.backward_with_seed(out, &r).expect("backward");
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k], input.shape());
        let coords: Vec<usize> = if input.len() <= max_coords {
            (0..input.len()).collect()
        } else {
            (0..max_coords).map(|_| rng.random_range(0..input.len())).collect()
        };
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for &c in &coords {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[c] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[c] -= FD_STEP;
            let numeric = (probe_value(&plus, &r, &f) - probe_value(&minus, &r, &f)) / (2.0 * FD_STEP);
            let a = analytic.data()[c];
            diff += (a - numeric).powi(2);
            na += a * a;
            nn += numeric * numeric;
        }
        let scale = na.sqrt().max(nn.sqrt());
        if scale > 1e-12 {
            worst = worst.max(diff.sqrt() / scale);
        }
    }
    worst
}

/// Cost of a path by summing octile step costs.
pub fn step_sum(path: &[iastar::gridmap::Coord]) -> f64 {
    path.windows(2)
        .map(|w| {
            let dr = w[0].row.abs_diff(w[1].row);
            let dc = w[0].col.abs_diff(w[1].col);
            if dr + dc == 2 { std::f64::consts::SQRT_2 } else { 1.0 }
        })
        .sum()
}

/// Bellman-Ford distances from `source` under the 8-connected
/// no-corner-cutting move model, written independently of the library.
pub fn bellman_ford(map: &GridMap, source: usize) -> Vec<f64> {
    let (w, h) = (map.width() as isize, map.height() as isize);
    let free = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w && map.occupancy()[(r * w + c) as usize] == 0;
    let mut dist = vec![f64::INFINITY; map.len()];
    dist[source] = 0.0;
    loop {
        let mut changed = false;
        for i in 0..map.len() {
            if !dist[i].is_finite() {
                continue;
            }
            let (r, c) = ((i as isize) / w, (i as isize) % w);
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    if (dr, dc) == (0, 0) || !free(r + dr, c + dc) {
                        continue;
                    }
                    if dr != 0 && dc != 0 && !(free(r + dr, c) && free(r, c + dc)) {
                        continue;
                    }
                    let cost = if dr != 0 && dc != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                    let j = ((r + dr) * w + c + dc) as usize;
                    if dist[i] + cost < dist[j] - 1e-12 {
                        dist[j] = dist[i] + cost;
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            return dist;
        }
    }
}

/// True when consecutive cells are free 8-neighbours without corner cutting.
pub fn path_is_valid(map: &GridMap, path: &[iastar::gridmap::Coord]) -> bool {
    path.iter().all(|c| map.is_free(*c))
        && path.windows(2).all(|p| {
            let (a, b) = (p[0], p[1]);
            let dr = b.row as isize - a.row as isize;
            let dc = b.col as isize - a.col as isize;
            DIRECTIONS.contains(&(dr, dc))
                && (dr == 0
                    || dc == 0
                    || (map.free_at(a.row as isize + dr, a.col as isize) && map.free_at(a.row as isize, a.col as isize + dc)))
        })
}

/// Deterministic instances of one kind.
pub fn instances(kind: GeneratorKind, size: usize, density: f64, count: usize, seed: u64) -> Vec<PlanInstance> {
    (0..count as u64)
        .map(|i| {
            let mut s = seed.wrapping_mul(1_000_003).wrapping_add(i * 7919);
            loop {
                let map = generate_map(kind, size, size, density, s).expect("valid generator args");
                if let Ok(inst) = sample_instance(&map, s ^ 0xA5A5) {
                    return inst;
                }
                s = s.wrapping_add(1);
            }
        })
        .collect()
}

/// Instances cycling through all generator kinds.
pub fn mixed_instances(size: usize, count: usize, seed: u64) -> Vec<PlanInstance> {
    (0..count)
        .map(|i| {
            let kind = GeneratorKind::ALL[i % 3];
            instances(kind, size, 0.25, 1, seed.wrapping_add(i as u64)).pop().unwrap()
        })
        .collect()
}

/// Dense 0/1 matrix of an instance's shape.
pub fn matrix(inst: &PlanInstance, cells: &[u8]) -> Tensor {
    let m = inst.map();
    Tensor::new(vec![m.height(), m.width()], cells.iter().map(|&v| f64::from(v)).collect()).unwrap()
}

/// Value of the convolutional length loss.
pub fn length_of(mu: &Tensor) -> f64 {
    let mut g = Graph::new();
    let v = g.leaf(mu.clone());
    let l = path_length_loss(&mut g, v).unwrap();
    g.value(l).item()
}

/// Parent chains from dA* runs with random factors on empty 24x24 maps:
/// `(instance, path, path matrix)`.
pub fn random_backtracked_paths(count: usize, seed: u64) -> Vec<(PlanInstance, Vec<Coord>, Vec<u8>)> {
    let cfg = DAStarConfig::default();
    let mut r = rng(seed);
    (0..count)
        .map(|i| {
            let map = GridMap::empty(24, 24).unwrap();
            let inst = sample_instance(&map, seed + i as u64).unwrap();
            let p = uniform(&mut r, &[24, 24], 0.0, [0.5, 5.0, 20.0, 60.0][i % 4]);
            let res = search(&inst, &p, &cfg).unwrap().result;
            (inst, res.path, res.path_matrix)
        })
        .collect()
}
