use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Coord, GridMap, MapError};

const MIN_GENERATED_SIDE: usize = 8;
const MAX_DENSITY: f64 = 0.6;
const ROOM_PITCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    /// Axis-aligned blocks of 1 to 4 cells per side scattered uniformly.
    RandomBlocks,
    /// Recursive-backtracker maze with one-cell walls. Density is unused.
    Maze,
    /// Rooms separated by walls with two-cell doorways, plus block clutter
    /// up to the requested density.
    Rooms,
}

impl GeneratorKind {
    pub const ALL: [GeneratorKind; 3] = [Self::RandomBlocks, Self::Maze, Self::Rooms];

    pub fn name(self) -> &'static str {
        match self {
            Self::RandomBlocks => "random-blocks",
            Self::Maze => "maze",
            Self::Rooms => "rooms",
        }
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GeneratorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown generator kind {s:?}"))
    }
}

/// Generates a map deterministically from `(kind, width, height, density, seed)`.
pub fn generate_map(
    kind: GeneratorKind,
    width: usize,
    height: usize,
    density: f64,
    seed: u64,
) -> Result<GridMap, MapError> {
    if width < MIN_GENERATED_SIDE || height < MIN_GENERATED_SIDE {
        return Err(MapError::InvalidDimensions { width, height });
    }
    if !(0.0..MAX_DENSITY).contains(&density) {
        return Err(MapError::DensityOutOfRange(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = GridMap::empty(width, height)?;
    match kind {
        GeneratorKind::RandomBlocks => {
            let target = (density * (width * height) as f64).round() as usize;
            scatter_blocks(&mut map, target, &mut rng);
        }
        GeneratorKind::Maze => carve_maze(&mut map, &mut rng),
        GeneratorKind::Rooms => {
            build_rooms(&mut map, &mut rng);
            let target = (density * (width * height) as f64).round() as usize;
            scatter_blocks(&mut map, target, &mut rng);
        }
    }
    Ok(map)
}

/// Adds random blocks until the map holds `target` obstacles.
fn scatter_blocks(map: &mut GridMap, target: usize, rng: &mut ChaCha8Rng) {
    let (w, h) = (map.width(), map.height());
    let mut count = map.obstacle_count();
    while count < target {
        let bh = rng.random_range(1..=4usize);
        let bw = rng.random_range(1..=4usize);
        let r0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..w);
        'block: for r in r0..(r0 + bh).min(h) {
            for c in c0..(c0 + bw).min(w) {
                if count == target {
                    break 'block;
                }
                let cell = Coord::new(r, c);
                if map.is_free(cell) {
                    map.set(cell, true);
                    count += 1;
                }
            }
        }
    }
}

fn carve_maze(map: &mut GridMap, rng: &mut ChaCha8Rng) {
    let (w, h) = (map.width(), map.height());
    for i in 0..map.len() {
        let c = map.coord(i);
        map.set(c, true);
    }
    // maze cells sit at odd coordinates; walls between them are one cell thick
    let rows = (h - 1) / 2;
    let cols = (w - 1) / 2;
    let cell = |i: usize, j: usize| Coord::new(2 * i + 1, 2 * j + 1);
    let mut visited = vec![false; rows * cols];
    let first = (rng.random_range(0..rows), rng.random_range(0..cols));
    let mut stack = vec![first];
    visited[first.0 * cols + first.1] = true;
    map.set(cell(first.0, first.1), false);
    let steps: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
    while let Some(&(i, j)) = stack.last() {
        let mut options: Vec<(usize, usize)> = steps
            .iter()
            .filter_map(|&(di, dj)| {
                let (ni, nj) = (i as isize + di, j as isize + dj);
                (ni >= 0 && nj >= 0 && (ni as usize) < rows && (nj as usize) < cols)
                    .then_some((ni as usize, nj as usize))
            })
            .filter(|&(ni, nj)| !visited[ni * cols + nj])
            .collect();
        if options.is_empty() {
            stack.pop();
            continue;
        }
        options.shuffle(rng);
        let (ni, nj) = options[0];
        visited[ni * cols + nj] = true;
        map.set(Coord::new(i + ni + 1, j + nj + 1), false);
        map.set(cell(ni, nj), false);
        stack.push((ni, nj));
    }
}

fn build_rooms(map: &mut GridMap, rng: &mut ChaCha8Rng) {
    let (w, h) = (map.width(), map.height());
    let wall_rows: Vec<usize> = (ROOM_PITCH - 1..h - 1).step_by(ROOM_PITCH).collect();
    let wall_cols: Vec<usize> = (ROOM_PITCH - 1..w - 1).step_by(ROOM_PITCH).collect();
    for &r in &wall_rows {
        for c in 0..w {
            map.set(Coord::new(r, c), true);
        }
    }
    for &c in &wall_cols {
        for r in 0..h {
            map.set(Coord::new(r, c), true);
        }
    }
    let bounds = |walls: &[usize], len: usize| -> Vec<(usize, usize)> {
        let mut spans = Vec::new();
        let mut lo = 0;
        for &x in walls {
            spans.push((lo, x));
            lo = x + 1;
        }
        spans.push((lo, len));
        spans
    };
    let row_spans = bounds(&wall_rows, h);
    let col_spans = bounds(&wall_cols, w);
    // one doorway per wall segment between two neighbouring rooms
    for &r in &wall_rows {
        for &(c0, c1) in &col_spans {
            open_door(map, rng, c0, c1, |x| Coord::new(r, x));
        }
    }
    for &c in &wall_cols {
        for &(r0, r1) in &row_spans {
            open_door(map, rng, r0, r1, |x| Coord::new(x, c));
        }
    }
}

fn open_door(
    map: &mut GridMap,
    rng: &mut ChaCha8Rng,
    lo: usize,
    hi: usize,
    at: impl Fn(usize) -> Coord,
) {
    if hi <= lo {
        return;
    }
    let width = 2.min(hi - lo);
    let pos = rng.random_range(lo..=hi - width);
    for x in pos..pos + width {
        map.set(at(x), false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_density_is_empty() {
        let m = generate_map(GeneratorKind::RandomBlocks, 8, 8, 0.0, 7).unwrap();
        assert_eq!(m.obstacle_count(), 0);
    }

    #[test]
    fn block_density_close_to_target() {
        let m = generate_map(GeneratorKind::RandomBlocks, 32, 32, 0.25, 7).unwrap();
        let count = m.obstacle_count() as i64;
        assert!((count - 256).abs() <= 32, "count {count}");
    }

    #[test]
    fn argument_checks() {
        assert!(matches!(
            generate_map(GeneratorKind::Maze, 7, 20, 0.0, 1),
            Err(MapError::InvalidDimensions { .. })
        ));
        assert!(matches!(
            generate_map(GeneratorKind::RandomBlocks, 20, 20, 0.6, 1),
            Err(MapError::DensityOutOfRange(_))
        ));
        assert!(matches!(
            generate_map(GeneratorKind::Rooms, 20, 20, -0.1, 1),
            Err(MapError::DensityOutOfRange(_))
        ));
    }

    #[test]
    fn maze_walls_are_one_cell_thick() {
        let m = generate_map(GeneratorKind::Maze, 33, 33, 0.0, 1).unwrap();
        // no 2x2 block of wall strictly inside the border
        for r in 1..31 {
            for c in 1..31 {
                let all = [(r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)]
                    .iter()
                    .all(|&(r, c)| !m.is_free(Coord::new(r, c)));
                assert!(!all, "2x2 wall block at ({r},{c})");
            }
        }
        // every maze cell is open
        for r in (1..32).step_by(2) {
            for c in (1..32).step_by(2) {
                assert!(m.is_free(Coord::new(r, c)));
            }
        }
    }

    #[test]
    fn kinds_roundtrip_names() {
        for k in GeneratorKind::ALL {
            assert_eq!(k.name().parse::<GeneratorKind>().unwrap(), k);
        }
        assert!("cave".parse::<GeneratorKind>().is_err());
    }
}
