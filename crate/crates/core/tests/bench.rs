use iastar::bench::metrics::{al_metric, mean_std};
use iastar::bench::{aggregate, parse_methods, run_benchmark, InstanceRecord, TrialPlan};
use iastar::gridmap::GeneratorKind;

fn plan(sizes: Vec<usize>, kinds: Vec<GeneratorKind>, trials: usize) -> TrialPlan {
    TrialPlan {
        sizes,
        kinds,
        trials,
        ..TrialPlan::default()
    }
}

fn without_timing(records: &[InstanceRecord]) -> Vec<InstanceRecord> {
    records
        .iter()
        .cloned()
        .map(|mut r| {
            r.rt = None;
            r.time_s = None;
            r.reference_time_s = 0.0;
            r
        })
        .collect()
}

#[test]
fn same_seed_gives_identical_non_timing_output() {
    let p = plan(vec![16, 24], GeneratorKind::ALL.to_vec(), 3);
    let methods = parse_methods("astar,wastar:2,jps,dijkstra,dastar:zero").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = run_benchmark(&p, &methods, Some(&dir.path().join("a"))).unwrap();
    let b = run_benchmark(&p, &methods, Some(&dir.path().join("b"))).unwrap();
    assert_eq!(without_timing(&a.records), without_timing(&b.records));
    let strip = |name: &str| -> String {
        std::fs::read_to_string(dir.path().join(name).join("results.csv"))
            .unwrap()
            .lines()
            .filter(|l| !l.contains(",Rt,"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip("a"), strip("b"));
    for f in ["results.csv", "instances.jsonl", "table.txt"] {
        assert!(dir.path().join("a").join(f).exists());
    }
}

#[test]
fn aggregates_recompute_from_instance_log() {
    let p = plan(vec![16], vec![GeneratorKind::RandomBlocks, GeneratorKind::Rooms], 6);
    let methods = parse_methods("astar,wastar:1.5,dastar:wastar:3").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = run_benchmark(&p, &methods, Some(dir.path())).unwrap();
    let text = std::fs::read_to_string(dir.path().join("instances.jsonl")).unwrap();
    let records: Vec<InstanceRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(records == report.records, "instance log does not round-trip");
    for r in &records {
        let al = al_metric(r.extra_area.unwrap(), r.length.unwrap());
        assert!((al - r.al.unwrap()).abs() < 1e-9);
    }
    for row in aggregate(&records).iter().filter(|r| r.metric == "AL") {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| r.kind == row.kind && r.size == row.size && r.method == row.method)
            .map(|r| al_metric(r.extra_area.unwrap(), r.length.unwrap()))
            .collect();
        let (mean, std) = mean_std(&values);
        assert!((mean - row.mean).abs() < 1e-9 && (std - row.std).abs() < 1e-9);
    }
}

#[test]
fn optimal_planners_agree_on_length() {
    let p = plan(vec![32], GeneratorKind::ALL.to_vec(), 5);
    let report = run_benchmark(&p, &parse_methods("astar,dijkstra,jps").unwrap(), None).unwrap();
    let rows: Vec<_> = report.rows.iter().filter(|r| r.metric == "PL").collect();
    for kind in GeneratorKind::ALL {
        let pl: Vec<f64> = rows.iter().filter(|r| r.kind == kind).map(|r| r.mean).collect();
        assert_eq!(pl.len(), 3);
        assert!(pl.iter().all(|v| (v - pl[0]).abs() < 1e-9), "{kind}: {pl:?}");
    }
    assert!(report.rows.iter().all(|r| !(r.method == "jps" && r.metric == "Rt")));
}

#[test]
fn weighted_astar_saves_expansions_on_random_blocks() {
    let p = plan(vec![64], vec![GeneratorKind::RandomBlocks], 10);
    let report = run_benchmark(&p, &parse_methods("wastar:2").unwrap(), None).unwrap();
    let exp = report.rows.iter().find(|r| r.metric == "Exp").unwrap();
    assert!(exp.mean > 0.0, "{}", exp.mean);
}

#[test]
fn astar_alone_has_zero_exp_and_rt() {
    let p = plan(vec![16], vec![GeneratorKind::Maze], 4);
    let report = run_benchmark(&p, &parse_methods("astar").unwrap(), None).unwrap();
    for metric in ["Exp", "Rt"] {
        let row = report.rows.iter().find(|r| r.metric == metric).unwrap();
        assert_eq!((row.mean, row.std), (0.0, 0.0));
    }
}
