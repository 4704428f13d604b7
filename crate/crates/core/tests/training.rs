use std::fs;

use hilight::data::{gen_needles, SynthSpec};
use hilight::solver::{OracleConfig, OracleSolver, SolveRequest, Solver, SolverOutput};
use hilight::trainer::{train, train_from, Checkpoint, Model, OptimizerState, TrainConfig};
use hilight::{Error, Result};

fn data() -> Vec<hilight::data::Instance> {
    gen_needles(&SynthSpec::new(200, 9), 12).unwrap()
}

fn oracle() -> OracleSolver {
    OracleSolver::new(OracleConfig::default(), Default::default(), "\n").unwrap()
}

fn cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_same_run() {
    let d = data();
    let a = train(&d, &oracle(), &cfg(60), None).unwrap();
    let b = train(&d, &oracle(), &cfg(60), None).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.log, b.log);

    let c = train(&d, &oracle(), &TrainConfig { seed: 18, ..cfg(60) }, None).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn zero_steps_leaves_initial_model() {
    let d = data();
    let c = cfg(0);
    let run = train(&d, &oracle(), &c, None).unwrap();
    assert!(run.log.is_empty());
    assert_eq!(run.model, Model::init(&d, c.gamma, c.tau, c.init_bias).unwrap());
}

#[test]
fn initial_mean_probability_is_gamma() {
    let d = data();
    let m = Model::init(&d, 0.15, 1.0, None).unwrap();
    let (prep, scores) = m.score_instance(&d[0]).unwrap();
    assert!((scores.mean_over(prep.ctx.omega()) - 0.15).abs() < 1e-9);
}

#[test]
fn every_step_respects_the_budget() {
    let run = train(&data(), &oracle(), &cfg(80), None).unwrap();
    for r in &run.log {
        assert!(r.occupancy <= 1.0 + 1e-12, "step {} occupancy {}", r.step, r.occupancy);
        assert_eq!(r.rewards.len(), 4);
    }
}

#[test]
fn writes_log_and_periodic_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        checkpoint_every: 10,
        ..cfg(25)
    };
    let run = train(&data(), &oracle(), &c, Some(dir.path())).unwrap();
    let log = fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 25);
    for step in [10, 20] {
        assert!(dir.path().join(format!("checkpoint-{step}.json")).is_file());
    }
    let ck = Checkpoint::load(dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(ck.step, 25);
    assert_eq!(ck.model, run.model);
}

#[test]
fn resume_continues_the_optimizer_clock() {
    let d = data();
    let first = train(&d, &oracle(), &cfg(20), None).unwrap();
    let more = train_from(&d, &oracle(), &cfg(20), first.model.clone(), first.optimizer.clone(), None).unwrap();
    assert_eq!(more.optimizer.t, first.optimizer.t + 20);
}

struct Down;

impl Solver for Down {
    fn solve(&self, _: SolveRequest<'_>) -> Result<SolverOutput> {
        Err(Error::SolverUnavailable {
            attempts: 3,
            last: "connection refused".into(),
        })
    }
}

#[test]
fn failure_budget_aborts_with_partial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let c = TrainConfig {
        failure_budget: 5,
        ..cfg(50)
    };
    let err = train(&data(), &Down, &c, Some(dir.path())).unwrap_err();
    assert!(matches!(err, Error::SolverUnavailable { .. }), "{err}");
    assert!(dir.path().join("checkpoint.json").is_file());
}

#[test]
fn optimizer_state_starts_empty() {
    let o = OptimizerState::new(7);
    assert_eq!(o.t, 0);
    assert!(o.m.weights.iter().all(|&x| x == 0.0));
}
