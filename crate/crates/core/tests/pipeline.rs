//! End-to-end run through the library: generate, plan with both experts,
//! persist, train briefly, then evaluate.

use std::collections::HashMap;

use motion_forge::dataset::{self, Expert, ProblemRecord};
use motion_forge::eval_metrics::{self, Controller, EvalConfig};
use motion_forge::policy::{self, CloudBudget, PolicyParams, PolicyProfile, TrainConfig};
use motion_forge::{seeding, RobotModel};

const SEED: u64 = 404;

fn planned(robot: &RobotModel, expert: Expert, count: u64) -> Vec<ProblemRecord> {
    let base: Vec<ProblemRecord> = (0..count)
        .map(|id| ProblemRecord::from_problem(dataset::generate_problem(dataset::balanced_kind(id), SEED, id, robot).unwrap(), SEED))
        .collect();
    dataset::plan_records(&base, expert, robot, 20.0, SEED, 1)
        .into_iter()
        .filter_map(|o| o.record)
        .collect()
}

#[test]
fn records_survive_persistence_and_replay_perfectly() {
    let robot = RobotModel::panda();
    let dir = tempfile::tempdir().unwrap();
    for expert in [Expert::Global, Expert::Hybrid] {
        let records = planned(&robot, expert, 9);
        assert!(!records.is_empty(), "{expert:?} solved nothing");
        let path = dir.path().join(format!("{expert:?}.jsonl"));
        let manifest = dataset::write_records(&path, &records, SEED).unwrap();
        assert_eq!(manifest.record_count, records.len());
        let (_, back) = dataset::read_records(&path).unwrap();
        assert_eq!(back, records);
        assert!(back.iter().all(|r| r.revalidate(&robot).unwrap().verdict));

        let replay: HashMap<u64, _> = back.iter().map(|r| (r.problem_id, r.trajectory.clone().unwrap())).collect();
        let problems: Vec<_> = back.iter().map(ProblemRecord::problem).collect();
        let report = eval_metrics::evaluate_dataset(&Controller::ExpertReplay(replay), &problems, &robot, &EvalConfig::default()).unwrap();
        assert_eq!(report.success_rate, 1.0, "{expert:?}");
    }
}

#[test]
fn short_training_lowers_the_loss_and_round_trips() {
    let robot = RobotModel::panda();
    let records = planned(&robot, Expert::Hybrid, 6);
    let set = dataset::training_set(&records);
    assert!(!set.examples.is_empty());
    let config = TrainConfig {
        epochs: 3,
        batch_size: 8,
        lr: 1e-3,
        budget: CloudBudget {
            obstacle: 256,
            robot: 128,
            target: 128,
        },
        seed: SEED,
        ..TrainConfig::default()
    };
    let mut params = PolicyParams::new(PolicyProfile::desk(), &mut seeding::stream(SEED, 0));
    let curve = policy::train(&mut params, &robot, &set, &config, |_, _| {}).unwrap();
    assert_eq!(curve.len(), 3);
    assert!(curve[2].total < curve[0].total, "{curve:?}");

    let mut bytes = Vec::new();
    policy::write_checkpoint(&params, &mut bytes).unwrap();
    let back = policy::read_checkpoint(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    policy::write_checkpoint(&back, &mut again).unwrap();
    assert_eq!(bytes, again);
}
