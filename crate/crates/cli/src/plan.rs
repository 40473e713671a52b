//! The `plan` subcommand.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde_json::{json, Value};

use iastar::autodiff::Tensor;
use iastar::dastar::{self, weighted_astar_factor, DAStarConfig};
use iastar::encoder::EncoderModel;
use iastar::gridmap::{load_map, Coord, MapError, PlanInstance};
use iastar::search::{astar, dijkstra, jps, SearchResult};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Algo {
    Astar,
    Wastar,
    Jps,
    Dijkstra,
    Dastar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Emit {
    Path,
    Closed,
    Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PSource {
    Zero,
    Weighted(f64),
    Model(PathBuf),
}

fn parse_p_source(s: &str) -> Result<PSource, String> {
    if s == "zero" {
        return Ok(PSource::Zero);
    }
    if let Some(w) = s.strip_prefix("wastar:") {
        return match w.parse::<f64>() {
            Ok(w) if w >= 1.0 && w.is_finite() => Ok(PSource::Weighted(w)),
            _ => Err(format!("weight must be a number >= 1, got {w:?}")),
        };
    }
    match s.strip_prefix("model:") {
        Some(p) if !p.is_empty() => Ok(PSource::Model(PathBuf::from(p))),
        _ => Err("expected zero, wastar:W or model:CKPT".into()),
    }
}

fn parse_cell(s: &str) -> Result<Coord, String> {
    let (r, c) = s.split_once(',').ok_or("expected r,c")?;
    let n = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("bad coordinate {v:?}"));
    Ok(Coord::new(n(r)?, n(c)?))
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_enum, default_value = "astar")]
    algo: Algo,
    /// Heuristic weight for `wastar`.
    #[arg(long, default_value_t = 2.0)]
    weight: f64,
    #[arg(long)]
    map: PathBuf,
    #[arg(long, value_parser = parse_cell)]
    start: Coord,
    #[arg(long, value_parser = parse_cell)]
    goal: Coord,
    #[arg(long, value_enum, default_value = "path")]
    emit: Emit,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Bias for `dastar`: zero, wastar:W or model:CKPT.
    #[arg(long, value_parser = parse_p_source, default_value = "zero")]
    p_source: PSource,
}

fn solve(args: &PlanArgs, inst: &PlanInstance) -> Result<(SearchResult, Option<usize>), CliError> {
    let planning = |e: &dyn std::fmt::Display| CliError::Planning(e.to_string());
    let classical = |r: Result<SearchResult, _>| r.map(|r| (r, None)).map_err(|e: iastar::search::SearchError| planning(&e));
    match args.algo {
        Algo::Astar => classical(astar(inst, 1.0)),
        Algo::Wastar => {
            if !(args.weight >= 1.0) {
                return Err(CliError::Usage(format!("--weight must be >= 1, got {}", args.weight)));
            }
            classical(astar(inst, args.weight))
        }
        Algo::Jps => classical(jps(inst)),
        Algo::Dijkstra => classical(dijkstra(inst)),
        Algo::Dastar => {
            let map = inst.map();
            let p = match &args.p_source {
                PSource::Zero => Tensor::zeros(&[map.height(), map.width()]),
                PSource::Weighted(w) => weighted_astar_factor(inst, *w),
                PSource::Model(path) => EncoderModel::load(path)
                    .and_then(|m| m.predict(inst))
                    .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?,
            };
            let out = dastar::search(inst, &p, &DAStarConfig::default()).map_err(|e| planning(&e))?;
            let area = out.search_area();
            Ok((out.result, Some(area)))
        }
    }
}

fn cells(list: impl Iterator<Item = Coord>) -> Value {
    Value::Array(list.map(|c| json!([c.row, c.col])).collect())
}

fn render_json(args: &PlanArgs, r: &SearchResult, area: Option<usize>) -> Value {
    let mut v = json!({
        "cost": r.cost,
        "expansions": r.expansions,
        "elapsed_s": r.elapsed.as_secs_f64(),
    });
    if args.emit != Emit::Metrics {
        v["path"] = cells(r.path.iter().copied());
    }
    if let Some(a) = area {
        v["search_area"] = json!(a);
    }
    if args.emit == Emit::Closed {
        let w = r.width;
        v["closed"] = cells(
            r.closed_matrix
                .iter()
                .enumerate()
                .filter(|(_, &c)| c == 1)
                .map(|(i, _)| Coord::new(i / w, i % w)),
        );
    }
    v
}

/// Map drawing: `#` obstacle, `*` path, `o` closed off the path, `S`/`G`.
fn render_text(args: &PlanArgs, inst: &PlanInstance, r: &SearchResult, area: Option<usize>) -> String {
    let mut s = format!("cost {:.6}\nexpansions {}\nelapsed_s {:.6}\n", r.cost, r.expansions, r.elapsed.as_secs_f64());
    if let Some(a) = area {
        s.push_str(&format!("search_area {a}\n"));
    }
    if args.emit == Emit::Metrics {
        return s;
    }
    let map = inst.map();
    for row in 0..map.height() {
        for col in 0..map.width() {
            let c = Coord::new(row, col);
            let i = map.index(c);
            let ch = if c == inst.start() {
                'S'
            } else if c == inst.goal() {
                'G'
            } else if !map.is_free(c) {
                '#'
            } else if r.path_matrix[i] == 1 {
                '*'
            } else if args.emit == Emit::Closed && r.closed_matrix[i] == 1 {
                'o'
            } else {
                '.'
            };
            s.push(ch);
        }
        s.push('\n');
    }
    s
}

pub fn run(args: &PlanArgs) -> Result<(), CliError> {
    let map = load_map(&args.map).map_err(|e| CliError::Usage(format!("{}: {e}", args.map.display())))?;
    let inst = PlanInstance::new(map, args.start, args.goal).map_err(|e| match e {
        MapError::Io(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Planning(e.to_string()),
    })?;
    let (result, area) = solve(args, &inst)?;
    match args.format {
        Format::Json => println!("{}", render_json(args, &result, area)),
        Format::Text => print!("{}", render_text(args, &inst, &result, area)),
    }
    Ok(())
}
