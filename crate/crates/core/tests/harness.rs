use std::cell::RefCell;
use std::fs;
use std::rc::Rc;

use hetlearn::diagnostics::windowed_max_increase;
use hetlearn::game_model::{MatrixGame, StochasticGame};
use hetlearn::matrix_learners::StageObservation;
use hetlearn::rng::{trial_rng, trial_seed, TrialRng};
use hetlearn::sim_harness::export::{trial_csv_path, RECORD_COLUMNS};
use hetlearn::sim_harness::{
    aggregate_records, export, import, play_stage, preset, render_svg, run_experiment, run_trial,
    write_run_dir, Format, Record, Scenario, ScenarioConfig, StageAgent, StageOutcome,
};
use hetlearn::Error;
use nalgebra::DMatrix;

fn matrix_vs_stationary(horizon: u64, log_interval: u64) -> ScenarioConfig {
    let text = format!(
        r#"{{
        "dynamics": "matrix",
        "game": {{"states": 1, "actions": [2, 2], "gamma": 0.0,
                 "rewards": [[[[1, -1], [-1, 1]]], [[[-1, 1], [1, -1]]]],
                 "kernel": [[[[1], [1]], [[1], [1]]]]}},
        "agents": [
            {{"theta": 1, "tau": 0.01, "knows_payoff": true, "alpha": {{"scale": 1, "exponent": 0.9}}}},
            {{"stationary": [[0.3, 0.7]]}}
        ],
        "horizon": {horizon},
        "log_interval": {log_interval}
    }}"#
    );
    serde_json::from_str(&text).unwrap()
}

fn pennies_self_play(horizon: u64, log_interval: u64, n_trials: u64) -> ScenarioConfig {
    let text = format!(
        r#"{{
        "dynamics": "matrix",
        "game": {{"states": 1, "actions": [2, 2], "gamma": 0.0,
                 "rewards": [[[[1, -1], [-1, 1]]], [[[-1, 1], [1, -1]]]],
                 "kernel": [[[[1], [1]], [[1], [1]]]]}},
        "agents": [
            {{"theta": 1, "tau": 0.002, "knows_payoff": true, "alpha": {{"scale": 1, "exponent": 0.9}}}},
            {{"theta": 1, "tau": 0.002, "knows_payoff": true, "alpha": {{"scale": 1, "exponent": 0.9}}}}
        ],
        "horizon": {horizon},
        "log_interval": {log_interval},
        "n_trials": {n_trials}
    }}"#
    );
    serde_json::from_str(&text).unwrap()
}

fn short_preset(name: &str, horizon: u64, n_trials: u64) -> Scenario {
    let mut cfg = preset(name).unwrap();
    cfg.horizon = horizon;
    cfg.n_trials = n_trials;
    cfg.log_interval = 500;
    Scenario::resolve(&cfg).unwrap()
}

#[test]
fn ten_stage_trace_has_ten_rows_and_eleven_lines() {
    let scenario = Scenario::resolve(&matrix_vs_stationary(10, 1)).unwrap();
    let trace = run_trial(&scenario, 0).unwrap();
    assert_eq!(trace.rows.len(), 10);
    assert_eq!(trace.log_stages, (1..=10).collect::<Vec<_>>());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    export(&trace.rows, Format::Csv, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], RECORD_COLUMNS.join(","));
}

#[test]
fn row_count_is_ceiling_of_horizon_over_interval() {
    for (horizon, interval) in [(10, 3), (9, 3), (1, 1000), (2500, 1000)] {
        let scenario = Scenario::resolve(&matrix_vs_stationary(horizon, interval)).unwrap();
        let trace = run_trial(&scenario, 0).unwrap();
        assert_eq!(
            trace.rows.len() as u64,
            horizon.div_ceil(interval),
            "{horizon}/{interval}"
        );
        assert!(trace.log_stages.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(*trace.log_stages.last().unwrap(), horizon);
    }
}

#[test]
fn json_export_round_trips() {
    let scenario = short_preset("scenario2", 3000, 1);
    let trace = run_trial(&scenario, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.json");
    export(&trace.rows, Format::Json, &path).unwrap();
    assert_eq!(Format::from_path(&path), Format::Json);
    assert_eq!(import(Format::Json, &path).unwrap(), trace.rows);
}

#[test]
fn csv_export_is_lossless() {
    let scenario = short_preset("scenario3", 3000, 2);
    let result = run_experiment(&scenario, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agg.csv");
    export(&result.aggregate.rows, Format::Csv, &path).unwrap();
    let back = import(Format::Csv, &path).unwrap();
    assert_eq!(back, result.aggregate.rows);
    // Shortest representation: 0.1 stays "0.1".
    let row = Record {
        k: 1,
        state: 0,
        agent: 1,
        v_est_mean: 0.1,
        v_est_std: None,
        v_star: Some(1.0 / 3.0),
        bound_lo: None,
        bound_hi: None,
        delta: None,
        tracking_err: None,
        lyapunov: None,
    };
    export(&[row.clone()], Format::Csv, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(
        text.lines().nth(1).unwrap(),
        "1,0,1,0.1,,0.3333333333333333,,,,,"
    );
    assert_eq!(import(Format::Csv, &path).unwrap(), vec![row]);
}

#[test]
fn export_reports_path_on_io_failure() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub").join("rows.csv");
    match export(&[], Format::Csv, &target) {
        Err(Error::Io { path, .. }) => assert!(path.starts_with(&blocker)),
        other => panic!("expected an I/O error, got {other:?}"),
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let scenario = short_preset("scenario1", 5000, 8);
    let one = run_experiment(&scenario, 1).unwrap();
    let many = run_experiment(&scenario, 8).unwrap();
    assert_eq!(one, many);
    assert_eq!(
        run_experiment(&scenario, 3).unwrap().aggregate,
        one.aggregate
    );

    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    write_run_dir(dirs[0].path(), &scenario, &one).unwrap();
    write_run_dir(dirs[1].path(), &scenario, &many).unwrap();
    for name in [
        "run.json",
        "aggregate.csv",
        "plot.svg",
        "trials/trial_0.csv",
        "trials/trial_7.csv",
    ] {
        let a = fs::read(dirs[0].path().join(name)).unwrap();
        let b = fs::read(dirs[1].path().join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn rerun_gives_identical_trace() {
    let scenario = short_preset("scenario2", 4000, 1);
    let a = run_trial(&scenario, 3).unwrap();
    let b = run_trial(&scenario, 3).unwrap();
    assert_eq!(a, b);
    assert_ne!(run_trial(&scenario, 4).unwrap().rows, a.rows);
}

#[test]
fn single_trial_has_zero_std() {
    let scenario = short_preset("scenario1", 2000, 1);
    let result = run_experiment(&scenario, 1).unwrap();
    assert_eq!(result.aggregate.n_trials, 1);
    assert!(result
        .aggregate
        .rows
        .iter()
        .all(|r| r.v_est_std == Some(0.0)));
}

#[test]
fn aggregate_matches_exported_trials() {
    let scenario = short_preset("scenario3", 4000, 5);
    let result = run_experiment(&scenario, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_run_dir(dir.path(), &scenario, &result).unwrap();

    let traces: Vec<Vec<Record>> = (0..5)
        .map(|id| import(Format::Csv, &trial_csv_path(dir.path(), id)).unwrap())
        .collect();
    let recomputed = aggregate_records(&traces).unwrap();
    let stored = import(Format::Csv, &dir.path().join("aggregate.csv")).unwrap();
    assert_eq!(recomputed.len(), stored.len());
    for (a, b) in recomputed.iter().zip(&stored) {
        assert_eq!((a.k, a.state, a.agent), (b.k, b.state, b.agent));
        assert!((a.v_est_mean - b.v_est_mean).abs() <= 1e-12);
        assert!((a.v_est_std.unwrap() - b.v_est_std.unwrap()).abs() <= 1e-12);
        assert!(a.v_est_std.unwrap() >= 0.0);
    }
}

#[test]
fn mismatched_layouts_are_rejected() {
    let a = run_trial(&short_preset("scenario1", 1000, 1), 0)
        .unwrap()
        .rows;
    let b = run_trial(&short_preset("scenario1", 1500, 1), 0)
        .unwrap()
        .rows;
    assert!(matches!(
        aggregate_records(&[a, b]),
        Err(Error::Structural(_))
    ));
    assert!(aggregate_records(&[]).is_err());
}

#[test]
fn empty_aggregate_cannot_be_plotted() {
    let labels = ["a".to_string(), "b".to_string()];
    assert!(render_svg(&[], &labels, true).is_err());
}

#[test]
fn plot_has_one_mean_line_per_agent_and_state() {
    let scenario = short_preset("scenario1", 3000, 2);
    let result = run_experiment(&scenario, 1).unwrap();
    let svg = render_svg(&result.aggregate.rows, &scenario.labels(), true).unwrap();
    assert_eq!(svg.matches(r#"class="mean""#).count(), 4);
    assert_eq!(svg.matches(r#"class="bound""#).count(), 8);
    assert!(svg.contains("agent 1 (Full), s1") && svg.contains("agent 2 (None), s2"));

    let bound = 0.016_833_574_385_027_247;
    for r in &result.aggregate.rows {
        let v = r.v_star.unwrap();
        assert!((r.bound_hi.unwrap() - (v + bound)).abs() < 1e-15);
        assert!((r.bound_lo.unwrap() - (v - bound)).abs() < 1e-15);
    }
}

#[test]
fn visit_counters_are_conserved() {
    for name in ["scenario1", "scenario2", "scenario3"] {
        let horizon = 7_321;
        let scenario = short_preset(name, horizon, 1);
        let trace = run_trial(&scenario, 0).unwrap();
        assert_eq!(trace.state_visits.iter().sum::<u64>(), horizon);
        for agent in &trace.final_states {
            let visits: u64 = agent.visits.as_ref().unwrap().iter().sum();
            assert_eq!(
                visits + agent.pending as u64,
                horizon,
                "{name} agent {}",
                agent.agent
            );
            assert!(agent
                .v
                .as_ref()
                .unwrap()
                .iter()
                .all(|v| v.abs() <= 1.0 / 0.7 + 1e-12));
        }
    }
}

#[test]
fn trial_seeds_are_stable() {
    // Independently computed from the SplitMix64 reference implementation.
    assert_eq!(trial_seed(0, 0), 0xa706_dd2f_4d19_7e6f);
    assert_eq!(trial_seed(0, 1), 0x08b4_fda8_c892_b50e);
    assert_eq!(trial_seed(42, 7), 0x1606_2d6c_1339_e500);
    assert_eq!(trial_seed(2024, 29), 0x24a2_9547_52f4_ce1f);
    let scenario = short_preset("scenario1", 10, 1);
    assert_eq!(run_trial(&scenario, 1).unwrap().seed, trial_seed(0, 1));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Act {
        agent: usize,
        learned: usize,
    },
    Learn {
        agent: usize,
        opponent_action: Option<usize>,
    },
}

/// Records every call; acts by repeating the opponent's last observed action.
struct Spy {
    id: usize,
    log: Rc<RefCell<Vec<Event>>>,
    learned: usize,
    last_seen: usize,
}

impl StageAgent for Spy {
    fn observation_prob(&self) -> f64 {
        1.0
    }

    fn act(
        &mut self,
        _: &StochasticGame,
        _: usize,
        will_observe: bool,
        _: &mut TrialRng,
    ) -> hetlearn::Result<usize> {
        assert!(will_observe);
        self.log.borrow_mut().push(Event::Act {
            agent: self.id,
            learned: self.learned,
        });
        Ok(self.last_seen)
    }

    fn learn(&mut self, _: &StochasticGame, outcome: &StageOutcome) -> hetlearn::Result<()> {
        let StageObservation {
            opponent_action, ..
        } = outcome.observation;
        self.log.borrow_mut().push(Event::Learn {
            agent: self.id,
            opponent_action,
        });
        self.learned += 1;
        self.last_seen = opponent_action.unwrap();
        Ok(())
    }
}

#[test]
fn actions_are_chosen_before_any_learning() {
    let game =
        MatrixGame::zero_sum(DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0])).unwrap();
    let game = StochasticGame::from_matrix_game(&game, 0.0).unwrap();
    let log = Rc::new(RefCell::new(Vec::new()));
    let mut a = Spy {
        id: 0,
        log: log.clone(),
        learned: 0,
        last_seen: 0,
    };
    let mut b = Spy {
        id: 1,
        log: log.clone(),
        learned: 0,
        last_seen: 1,
    };
    let mut rng = trial_rng(0, 0);
    let mut expected_actions = [0, 1];
    for k in 0..50 {
        let result = play_stage(&game, [&mut a, &mut b], 0, &mut rng).unwrap();
        // Each agent copies what the other played in the previous stage.
        assert_eq!(result.actions, expected_actions);
        expected_actions = [result.actions[1], result.actions[0]];
        let events = log.borrow();
        let stage = &events[4 * k..4 * k + 4];
        assert_eq!(
            stage[0],
            Event::Act {
                agent: 0,
                learned: k
            }
        );
        assert_eq!(
            stage[1],
            Event::Act {
                agent: 1,
                learned: k
            }
        );
        assert!(matches!(stage[2], Event::Learn { agent: 0, .. }));
        assert!(matches!(stage[3], Event::Learn { agent: 1, .. }));
    }
}

#[test]
fn lyapunov_settles_in_self_play() {
    let scenario = Scenario::resolve(&pennies_self_play(100_000, 100, 1)).unwrap();
    let trace = run_trial(&scenario, 0).unwrap();
    let samples: Vec<(u64, f64)> = trace
        .rows
        .iter()
        .filter(|r| r.agent == 1)
        .map(|r| (r.k, r.lyapunov.unwrap()))
        .collect();
    assert!(samples.iter().all(|(_, v)| *v >= 0.0));
    let rise = windowed_max_increase(&samples, 10_000, 10_000);
    assert!(rise <= 0.05, "windowed maximum rose by {rise}");
    let last = samples.last().unwrap().1;
    assert!(
        last < samples[0].1,
        "V did not decrease: {} -> {last}",
        samples[0].1
    );
}
