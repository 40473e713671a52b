//! Dataset directories: `map_NNNN.map` files plus an `instances.csv` index
//! holding one start/goal pair per map.

use std::fs;
use std::io::Write;
use std::path::Path;

use iastar::gridmap::{generate_map, load_map, sample_instance, save_map, Coord, GeneratorKind, PlanInstance};

use crate::{runtime, CliError};

const INDEX: &str = "instances.csv";
const HEADER: &str = "file,start_row,start_col,goal_row,goal_col";
/// Fresh maps tried per entry before giving up on finding a valid pair.
const ATTEMPTS: u64 = 64;

fn derive(seed: u64, i: u64, attempt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i.wrapping_mul(1_000_003))
        .wrapping_add(attempt.wrapping_mul(7919))
}

/// Writes `count` maps and their index; returns the number written.
pub fn generate(
    kind: GeneratorKind,
    width: usize,
    height: usize,
    density: f64,
    count: usize,
    seed: u64,
    dir: &Path,
) -> Result<usize, CliError> {
    // Validate arguments once up front so errors are usage errors.
    generate_map(kind, width, height, density, seed).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(dir).map_err(runtime)?;
    let mut index = String::from(HEADER);
    index.push('\n');
    for i in 0..count as u64 {
        let inst = (0..ATTEMPTS)
            .find_map(|a| {
                let s = derive(seed, i, a);
                let map = generate_map(kind, width, height, density, s).ok()?;
                sample_instance(&map, s ^ 0x5EED).ok()
            })
            .ok_or_else(|| CliError::Runtime(format!("no valid start/goal pair for map {i}")))?;
        let name = format!("map_{i:04}.map");
        save_map(inst.map(), &dir.join(&name)).map_err(runtime)?;
        let (s, g) = (inst.start(), inst.goal());
        index.push_str(&format!("{name},{},{},{},{}\n", s.row, s.col, g.row, g.col));
    }
    let mut f = fs::File::create(dir.join(INDEX)).map_err(runtime)?;
    f.write_all(index.as_bytes()).map_err(runtime)?;
    Ok(count)
}

fn parse_row(line: &str, lineno: usize) -> Result<(String, Coord, Coord), CliError> {
    let bad = || CliError::Usage(format!("{INDEX} line {lineno}: expected `{HEADER}`"));
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    let [file, sr, sc, gr, gc] = fields[..] else {
        return Err(bad());
    };
    let n = |s: &str| s.parse::<usize>().map_err(|_| bad());
    Ok((file.to_string(), Coord::new(n(sr)?, n(sc)?), Coord::new(n(gr)?, n(gc)?)))
}

/// Reads every instance listed in the directory index, in file order.
pub fn load(dir: &Path) -> Result<Vec<PlanInstance>, CliError> {
    let text = fs::read_to_string(dir.join(INDEX))
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", dir.join(INDEX).display())))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (file, start, goal) = parse_row(line, k + 1)?;
        let map = load_map(dir.join(&file)).map_err(|e| CliError::Usage(format!("{file}: {e}")))?;
        out.push(PlanInstance::new(map, start, goal).map_err(|e| CliError::Usage(format!("{file}: {e}")))?);
    }
    if out.is_empty() {
        return Err(CliError::Usage(format!("{} lists no instances", dir.join(INDEX).display())));
    }
    Ok(out)
}
