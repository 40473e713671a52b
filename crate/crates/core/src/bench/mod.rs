//! Benchmark harness: sample instances per map kind and size, run each
//! method next to classical A* and aggregate the comparison metrics.

pub mod metrics;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tensor;
use crate::dastar::{self, weighted_astar_factor, DAStarConfig};
use crate::encoder::{EncoderError, EncoderModel};
use crate::gridmap::{generate_map, sample_instance, GeneratorKind, MapError, PlanInstance};
use crate::search::{astar, dijkstra, jps};

use metrics::{al_metric, exp_metric, mean_std, rt_metric};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("zero reference {0}")]
    ZeroReference(&'static str),
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("plan file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialPlan {
    pub sizes: Vec<usize>,
    pub kinds: Vec<GeneratorKind>,
    /// Instances per (kind, size).
    pub trials: usize,
    pub seed: u64,
    /// Obstacle density for the random-blocks and rooms generators.
    pub density: f64,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            sizes: vec![64, 128, 256],
            kinds: GeneratorKind::ALL.to_vec(),
            trials: 10,
            seed: 42,
            density: 0.2,
        }
    }
}

impl TrialPlan {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let plan: TrialPlan = toml::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.trials == 0 {
            return Err(BenchError::InvalidPlan("trials must be >= 1".into()));
        }
        if self.sizes.is_empty() || self.kinds.is_empty() {
            return Err(BenchError::InvalidPlan("sizes and kinds must be non-empty".into()));
        }
        if let Some(s) = self.sizes.iter().find(|&&s| s < 8) {
            return Err(BenchError::InvalidPlan(format!("size {s} < 8")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FactorSource {
    Zero,
    Weighted(f64),
    Model(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Method {
    Astar,
    WeightedAstar(f64),
    Jps,
    Dijkstra,
    DAstar(FactorSource),
}

impl Method {
    /// Without a meaningful runtime comparison.
    pub fn omits_rt(&self) -> bool {
        matches!(self, Method::Jps)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Astar => f.write_str("astar"),
            Method::WeightedAstar(w) => write!(f, "wastar:{w}"),
            Method::Jps => f.write_str("jps"),
            Method::Dijkstra => f.write_str("dijkstra"),
            Method::DAstar(FactorSource::Zero) => f.write_str("dastar:zero"),
            Method::DAstar(FactorSource::Weighted(w)) => write!(f, "dastar:wastar:{w}"),
            Method::DAstar(FactorSource::Model(p)) => write!(f, "dastar:model={}", p.display()),
        }
    }
}

fn parse_weight(s: &str, whole: &str) -> Result<f64, BenchError> {
    s.parse::<f64>()
        .ok()
        .filter(|w| *w >= 1.0 && w.is_finite())
        .ok_or_else(|| BenchError::UnknownMethod(whole.to_string()))
}

impl FromStr for Method {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "astar" => Method::Astar,
            "jps" => Method::Jps,
            "dijkstra" => Method::Dijkstra,
            "dastar" | "dastar:zero" => Method::DAstar(FactorSource::Zero),
            _ => {
                if let Some(w) = s.strip_prefix("wastar:") {
                    Method::WeightedAstar(parse_weight(w, s)?)
                } else if let Some(w) = s.strip_prefix("dastar:wastar:") {
                    Method::DAstar(FactorSource::Weighted(parse_weight(w, s)?))
                } else if let Some(p) = s.strip_prefix("dastar:model=").filter(|p| !p.is_empty()) {
                    Method::DAstar(FactorSource::Model(PathBuf::from(p)))
                } else {
                    return Err(BenchError::UnknownMethod(s.to_string()));
                }
            }
        })
    }
}

/// Parses a comma-separated method list.
pub fn parse_methods(list: &str) -> Result<Vec<Method>, BenchError> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::parse).collect()
}

/// One method on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub kind: GeneratorKind,
    pub size: usize,
    pub trial: usize,
    pub method: String,
    pub search_area: Option<usize>,
    /// Closed cells not on the path.
    pub extra_area: Option<usize>,
    pub reference_area: usize,
    pub length: Option<f64>,
    pub al: Option<f64>,
    pub exp: Option<f64>,
    pub rt: Option<f64>,
    pub time_s: Option<f64>,
    pub reference_time_s: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub kind: GeneratorKind,
    pub size: usize,
    pub method: String,
    pub metric: &'static str,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<MetricRow>,
    pub records: Vec<InstanceRecord>,
}

/// Search area, path cell count and path cost.
type Outcome = (usize, usize, f64);

enum Runner {
    Classical(Method),
    DAstar(Factor),
}

enum Factor {
    Fixed(Option<f64>),
    Model(EncoderModel),
}

impl Runner {
    fn new(method: &Method) -> Result<Self, BenchError> {
        Ok(match method {
            Method::DAstar(FactorSource::Zero) => Runner::DAstar(Factor::Fixed(None)),
            Method::DAstar(FactorSource::Weighted(w)) => Runner::DAstar(Factor::Fixed(Some(*w))),
            Method::DAstar(FactorSource::Model(p)) => Runner::DAstar(Factor::Model(EncoderModel::load(p)?)),
            other => Runner::Classical(other.clone()),
        })
    }

    fn run(&self, inst: &PlanInstance, config: &DAStarConfig) -> Result<Outcome, String> {
        let classical = |r: Result<crate::search::SearchResult, _>| {
            r.map(|r| (r.expansions, r.path_cells(), r.cost))
                .map_err(|e: crate::search::SearchError| e.to_string())
        };
        match self {
            Runner::Classical(Method::Astar) => classical(astar(inst, 1.0)),
            Runner::Classical(Method::WeightedAstar(w)) => classical(astar(inst, *w)),
            Runner::Classical(Method::Jps) => classical(jps(inst)),
            Runner::Classical(_) => classical(dijkstra(inst)),
            Runner::DAstar(factor) => {
                let map = inst.map();
                let p = match factor {
                    Factor::Fixed(None) => Tensor::zeros(&[map.height(), map.width()]),
                    Factor::Fixed(Some(w)) => weighted_astar_factor(inst, *w),
                    Factor::Model(m) => m.predict(inst).map_err(|e| e.to_string())?,
                };
                dastar::search(inst, &p, config)
                    .map(|o| (o.search_area(), o.result.path_cells(), o.result.cost))
                    .map_err(|e| e.to_string())
            }
        }
    }
}

/// One warm-up call, then the median wall time of three.
fn timed<T>(mut f: impl FnMut() -> T) -> (T, f64) {
    let mut out = f();
    let mut times = Vec::with_capacity(3);
    for _ in 0..3 {
        let t = Instant::now();
        out = f();
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    (out, times[1])
}

/// SplitMix64 finaliser used to derive per-instance seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic instance for `(kind, size, trial)` under `plan`.
pub fn plan_instance(plan: &TrialPlan, kind: GeneratorKind, size: usize, trial: usize) -> Result<PlanInstance, BenchError> {
    let base = mix(mix(mix(plan.seed, kind as u64), size as u64), trial as u64);
    let mut last = MapError::NoValidPair;
    for attempt in 0..64 {
        let seed = mix(base, attempt);
        let map = generate_map(kind, size, size, plan.density, seed)?;
        match sample_instance(&map, mix(seed, 1)) {
            Ok(inst) => return Ok(inst),
            Err(e) => last = e,
        }
    }
    Err(last.into())
}

pub fn run_benchmark(plan: &TrialPlan, methods: &[Method], out: Option<&Path>) -> Result<BenchReport, BenchError> {
    plan.validate()?;
    let runners = methods.iter().map(Runner::new).collect::<Result<Vec<_>, _>>()?;
    let config = DAStarConfig::default();
    let mut records = Vec::new();
    for &kind in &plan.kinds {
        for &size in &plan.sizes {
            for trial in 0..plan.trials {
                let inst = plan_instance(plan, kind, size, trial)?;
                let (reference, ref_time) = timed(|| astar(&inst, 1.0));
                let reference = reference.map_err(|e| BenchError::InvalidPlan(e.to_string()))?;
                let reference_area = reference.expansions;
                for (method, runner) in methods.iter().zip(&runners) {
                    // A* is its own reference, so Rt is exactly zero for it
                    let (outcome, t) = if *method == Method::Astar {
                        (Ok((reference_area, reference.path_cells(), reference.cost)), ref_time)
                    } else {
                        timed(|| runner.run(&inst, &config))
                    };
                    let mut rec = InstanceRecord {
                        kind,
                        size,
                        trial,
                        method: method.to_string(),
                        search_area: None,
                        extra_area: None,
                        reference_area,
                        length: None,
                        al: None,
                        exp: None,
                        rt: None,
                        time_s: None,
                        reference_time_s: ref_time,
                        failure: None,
                    };
                    match outcome {
                        Ok((area, path_cells, length)) => {
                            let extra = area.saturating_sub(path_cells);
                            rec.search_area = Some(area);
                            rec.extra_area = Some(extra);
                            rec.length = Some(length);
                            rec.al = Some(al_metric(extra, length));
                            rec.exp = Some(exp_metric(reference_area, area)?);
                            rec.time_s = Some(t);
                            if !method.omits_rt() {
                                rec.rt = rt_metric(ref_time, t).ok();
                            }
                        }
                        Err(e) => rec.failure = Some(e),
                    }
                    records.push(rec);
                }
            }
        }
    }
    let report = BenchReport {
        rows: aggregate(&records),
        records,
    };
    if let Some(dir) = out {
        write_outputs(&report, methods, dir)?;
    }
    Ok(report)
}

/// Mean/std per (kind, size, method, metric); failed instances only count
/// towards `failures`.
pub fn aggregate(records: &[InstanceRecord]) -> Vec<MetricRow> {
    let mut groups: BTreeMap<(usize, usize), Vec<&InstanceRecord>> = BTreeMap::new();
    let mut method_order: Vec<&str> = Vec::new();
    let mut key_order: Vec<(GeneratorKind, usize)> = Vec::new();
    for r in records {
        let m = method_order.iter().position(|&m| m == r.method).unwrap_or_else(|| {
            method_order.push(&r.method);
            method_order.len() - 1
        });
        let k = key_order.iter().position(|&k| k == (r.kind, r.size)).unwrap_or_else(|| {
            key_order.push((r.kind, r.size));
            key_order.len() - 1
        });
        groups.entry((k, m)).or_default().push(r);
    }
    let mut rows = Vec::new();
    for ((k, m), recs) in groups {
        let (kind, size) = key_order[k];
        let method = method_order[m].to_string();
        let mut push = |metric: &'static str, values: Vec<f64>| {
            let (mean, std) = mean_std(&values);
            rows.push(MetricRow {
                kind,
                size,
                method: method.clone(),
                metric,
                mean,
                std,
            });
        };
        push("Exp", recs.iter().filter_map(|r| r.exp).collect());
        if recs.iter().any(|r| r.rt.is_some()) {
            push("Rt", recs.iter().filter_map(|r| r.rt).collect());
        }
        push("AL", recs.iter().filter_map(|r| r.al).collect());
        push("PL", recs.iter().filter_map(|r| r.length).collect());
        let failures = recs.iter().filter(|r| r.failure.is_some()).count() as f64;
        push("failures", vec![failures]);
    }
    rows
}

pub fn write_results_csv(out: &mut impl Write, rows: &[MetricRow]) -> std::io::Result<()> {
    writeln!(out, "kind,size,method,metric,mean,std")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.kind, r.size, r.method, r.metric, r.mean, r.std)?;
    }
    Ok(())
}

pub fn write_instances_jsonl(out: &mut impl Write, records: &[InstanceRecord]) -> Result<(), BenchError> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

/// Methods as rows, `mean(std)` cells, one block per (kind, size).
pub fn render_table(rows: &[MetricRow], methods: &[Method]) -> String {
    let mut s = String::new();
    let mut blocks: Vec<(GeneratorKind, usize)> = Vec::new();
    for r in rows {
        if !blocks.contains(&(r.kind, r.size)) {
            blocks.push((r.kind, r.size));
        }
    }
    let cell = |kind, size, method: &str, metric| {
        rows.iter()
            .find(|r| r.kind == kind && r.size == size && r.method == method && r.metric == metric)
            .map_or("-".to_string(), |r| format!("{:.2}({:.2})", r.mean, r.std))
    };
    for (kind, size) in blocks {
        s.push_str(&format!("{kind} {size}x{size}\n"));
        s.push_str(&format!("{:<28}{:>18}{:>18}{:>18}{:>18}{:>9}\n", "method", "Exp", "Rt", "AL", "PL", "failed"));
        for m in methods {
            let name = m.to_string();
            let failed = rows
                .iter()
                .find(|r| r.kind == kind && r.size == size && r.method == name && r.metric == "failures")
                .map_or(0.0, |r| r.mean);
            s.push_str(&format!(
                "{:<28}{:>18}{:>18}{:>18}{:>18}{:>9}\n",
                name,
                cell(kind, size, &name, "Exp"),
                cell(kind, size, &name, "Rt"),
                cell(kind, size, &name, "AL"),
                cell(kind, size, &name, "PL"),
                failed
            ));
        }
        s.push('\n');
    }
    s
}

pub fn write_outputs(report: &BenchReport, methods: &[Method], dir: &Path) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("results.csv"))?);
    write_results_csv(&mut f, &report.rows)?;
    f.flush()?;
    let mut f = std::io::BufWriter::new(fs::File::create(dir.join("instances.jsonl"))?);
    write_instances_jsonl(&mut f, &report.records)?;
    f.flush()?;
    fs::write(dir.join("table.txt"), render_table(&report.rows, methods))?;
    Ok(())
}
