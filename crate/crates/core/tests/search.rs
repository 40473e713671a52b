mod common;

use common::{bellman_ford, mixed_instances, path_is_valid, step_sum};
use iastar::gridmap::{GeneratorKind, GridMap, PlanInstance, Coord, SQRT_2};
use iastar::search::{astar, dijkstra, distances_from, jps, jps_detailed};

#[test]
fn dijkstra_matches_bellman_ford() {
    for inst in mixed_instances(32, 200, 11) {
        let r = dijkstra(&inst).unwrap();
        let bf = bellman_ford(inst.map(), inst.start_index());
        assert!((r.cost - bf[inst.goal_index()]).abs() < 1e-9);
        assert!(path_is_valid(inst.map(), &r.path));
        assert!((step_sum(&r.path) - r.cost).abs() < 1e-9);
        assert_eq!(r.path.first(), Some(&inst.start()));
        assert_eq!(r.path.last(), Some(&inst.goal()));
    }
}

#[test]
fn distance_field_matches_bellman_ford() {
    for inst in mixed_instances(24, 20, 3) {
        let d = distances_from(inst.map(), inst.start_index());
        let bf = bellman_ford(inst.map(), inst.start_index());
        for (a, b) in d.iter().zip(&bf) {
            assert!(a == b || (a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}

#[test]
fn unit_weight_astar_and_jps_are_optimal() {
    for inst in mixed_instances(32, 200, 12) {
        let d = dijkstra(&inst).unwrap();
        let a = astar(&inst, 1.0).unwrap();
        let j = jps(&inst).unwrap();
        assert!((a.cost - d.cost).abs() < 1e-9);
        assert!((j.cost - d.cost).abs() < 1e-9);
        assert!(path_is_valid(inst.map(), &j.path));
        assert!(a.expansions <= d.expansions);
    }
}

#[test]
fn weighted_astar_mostly_expands_less() {
    let insts = mixed_instances(32, 200, 13);
    let mut fewer = 0;
    for inst in &insts {
        let opt = dijkstra(inst).unwrap();
        let a1 = astar(inst, 1.0).unwrap();
        let a2 = astar(inst, 2.0).unwrap();
        assert!(a2.cost >= opt.cost - 1e-9);
        assert!(path_is_valid(inst.map(), &a2.path));
        if a2.expansions <= a1.expansions {
            fewer += 1;
        }
    }
    assert!(fewer * 10 >= insts.len() * 9, "{fewer}/200");
}

#[test]
fn jps_on_open_map_touches_few_jump_points() {
    let map = GridMap::empty(64, 64).unwrap();
    let inst = PlanInstance::new(map, Coord::new(3, 5), Coord::new(60, 41)).unwrap();
    let a = astar(&inst, 1.0).unwrap();
    let j = jps_detailed(&inst).unwrap();
    assert!((j.result.cost - a.cost).abs() < 1e-9);
    assert!(j.jump_points.len() * 10 < a.expansions, "{} vs {}", j.jump_points.len(), a.expansions);
}

#[test]
fn empty_corner_to_corner() {
    let inst = PlanInstance::new(GridMap::empty(8, 8).unwrap(), Coord::new(0, 0), Coord::new(7, 7)).unwrap();
    for r in [dijkstra(&inst).unwrap(), astar(&inst, 1.0).unwrap(), jps(&inst).unwrap()] {
        assert!((r.cost - 7.0 * SQRT_2).abs() < 1e-12);
    }
}

#[test]
fn maze_instances_are_solved_by_all_planners() {
    for inst in common::instances(GeneratorKind::Maze, 33, 0.0, 20, 5) {
        let d = dijkstra(&inst).unwrap();
        let j = jps(&inst).unwrap();
        assert!((d.cost - j.cost).abs() < 1e-9);
    }
}
