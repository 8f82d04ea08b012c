use std::path::PathBuf;

use serde_json::Value;
use sitescout_core::agents::{AssistantState, ExplorerState, HumanMode};
use sitescout_core::geom::Point2;
use sitescout_core::gridmap::{compute_phi, merge_grids, OccupancyGrid};
use sitescout_core::mission::{
    replay_mission, run_mission, AbortReason, Mission, MissionEvent, OperatorCommand, Outcome,
};
use sitescout_core::msgbus::{BusError, HelpKind, Message};
use sitescout_core::scenario::{Scenario, ScriptedEvent};
use sitescout_core::simworld::build_world;

fn fixture(name: &str) -> Scenario {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    Scenario::load(p).unwrap()
}

fn lines(m: &Mission) -> Vec<Value> {
    m.metrics().iter().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn step_until(m: &mut Mission, mut f: impl FnMut(&Mission) -> bool) {
    while !f(m) {
        assert!(m.step(), "mission stopped before the condition held: {:?}", m.outcome());
    }
}

#[test]
fn single_room_done_without_help() {
    let m = run_mission(&fixture("single_room.toml"), None).unwrap();
    let r = m.result();
    assert_eq!(r.outcome, Outcome::Done);
    assert!(r.final_phi >= 99.0);
    assert!(r.help_requests.is_empty());
    assert!(m.phi_history().windows(2).all(|w| w[1] >= w[0]));
    assert!(r.distance["RA1"] > 0.0);
    assert_eq!(m.explorer_state(), &ExplorerState::Finished);
}

#[test]
fn metrics_lines_are_well_formed() {
    let m = run_mission(&fixture("single_room.toml"), None).unwrap();
    let ls = lines(&m);
    assert_eq!(ls.len() as u64, m.tick() + 1);
    for (i, l) in ls.iter().enumerate() {
        assert_eq!(l["v"], 1);
        assert_eq!(l["tick"].as_u64(), Some(i as u64));
        assert!(l["agents"].as_array().unwrap().iter().all(|a| a["state"].is_string()));
        // payload range 3 m is below the 4 m navigation range
        assert!(l["coverage"].as_f64().unwrap() <= l["phi"].as_f64().unwrap() + 1e-9);
    }
    assert_eq!(ls.last().unwrap()["outcome"]["status"], "Done");
}

#[test]
fn two_rooms_help_loop() {
    let m = run_mission(&fixture("two_rooms.toml"), None).unwrap();
    let r = m.result();
    assert_eq!(r.outcome, Outcome::Done);
    assert!(r.final_phi >= 95.0);

    let blocked = r.first_blocked.expect("mission never reported Blocked");
    assert!(blocked.phi > 60.0 && blocked.phi < 95.0, "blocked at {}", blocked.phi);

    assert_eq!(r.help_requests.len(), 1);
    let h = &r.help_requests[0];
    assert_eq!(h.request.kind, HelpKind::ManipulationNeeded);
    assert_eq!(h.request.requester, "RA1");
    assert_eq!(h.assigned_to.as_deref(), Some("RA2"));
    assert_eq!(h.grasps, vec![Point2::new(8.1, 3.7)]);
    assert_eq!(h.removed_obstacle.as_deref(), Some("trolley"));
    assert_eq!(h.resolution.as_deref(), Some("cleared"));

    assert!(!r.stale.is_empty());
    for s in &r.stale {
        assert!(s.cleared_at.is_some());
        assert!(s.reobservations <= 10);
    }
    assert!(m.world().obstacles().is_empty());
    assert_eq!(m.assistant_state("RA2"), Some(&AssistantState::Idle));

    // no removals happen before the first Blocked verdict, so phi cannot drop there
    let pre: Vec<f64> = m.phi_history()[..=blocked.tick as usize].to_vec();
    assert!(pre.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn snapshot_while_waiting_for_assist() {
    let mut m = Mission::new(&fixture("two_rooms.toml"), None).unwrap();
    step_until(&mut m, |m| {
        matches!(m.explorer_state(), ExplorerState::WaitingAssist { .. })
    });
    let s = m.snapshot();
    assert_eq!(s.pending_requests.len(), 1);
    assert_eq!(s.verdict, "Blocked");
    assert_eq!(s.agents.iter().find(|a| a.id == "RA1").unwrap().state, "WaitingAssist");
    let counted = s.map.as_ref().unwrap().count(sitescout_core::gridmap::CellState::Free);
    assert_eq!(counted, s.explored_free);
}

#[test]
fn snapshot_at_tick_zero_matches_initial_scans() {
    let sc = fixture("two_rooms.toml");
    let m = Mission::new(&sc, None).unwrap();
    let s = m.snapshot();
    assert_eq!(s.tick, 0);

    let built = sc.build().unwrap();
    let mut world = build_world(&built.setup).unwrap();
    let mut grids = Vec::new();
    for (_, scan) in world.initial_scans().unwrap() {
        let mut g = OccupancyGrid::new(*built.gt.spec()).unwrap();
        g.apply_scan(&scan).unwrap();
        grids.push(g);
    }
    let merged = merge_grids(grids.iter()).unwrap();
    assert_eq!(s.phi, compute_phi(&merged, &built.gt).unwrap().phi);
}

#[test]
fn snapshot_after_done() {
    let m = run_mission(&fixture("single_room.toml"), None).unwrap();
    let s = m.snapshot();
    assert_eq!(s.verdict, "Done");
    assert!(s.phi >= s.threshold);
    assert!(s.pending_requests.is_empty());
    assert_eq!(s.outcome, Outcome::Done);
}

#[test]
fn missing_manipulator_escalates() {
    let r = run_mission(&fixture("no_assistant.toml"), None).unwrap().result();
    match r.outcome {
        Outcome::Aborted { reason, .. } => assert_eq!(reason, AbortReason::EscalationUnserved),
        o => panic!("unexpected outcome {o:?}"),
    }
    assert_eq!(r.help_requests.len(), 1);
    assert!(r.final_phi < 95.0);
}

#[test]
fn master_failure_aborts_same_tick() {
    let sc = fixture("master_failure.toml");
    let kill = sc
        .file
        .events
        .iter()
        .find_map(|e| match e {
            ScriptedEvent::KillMaster { tick } => Some(*tick),
            _ => None,
        })
        .unwrap();
    let mut m = Mission::new(&sc, None).unwrap();
    step_until(&mut m, |m| m.tick() == kill - 1);
    assert!(!m.is_terminal());

    let master = m.master().clone();
    master.register_node("probe").unwrap();
    let probe = master.advertise("probe", "/probe").unwrap();
    probe
        .publish(Message::ObstacleCleared {
            request_id: 0,
            by: "probe".into(),
            obstacle_id: "x".into(),
            location: Point2::new(0.0, 0.0),
        })
        .unwrap();

    assert!(m.step());
    assert_eq!(m.tick(), kill);
    assert!(matches!(
        m.outcome(),
        Outcome::Aborted {
            reason: AbortReason::MasterLost,
            ..
        }
    ));
    let err = probe.publish(Message::AssistFailed {
        request_id: 0,
        by: "probe".into(),
        reason: "x".into(),
    });
    assert_eq!(err.unwrap_err(), BusError::MasterUnavailable);
    assert!(!m.step());
}

#[test]
fn identical_seeds_identical_bytes() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.range_noise = 0.03;
    let a = run_mission(&sc, Some(5)).unwrap();
    let b = run_mission(&sc, Some(5)).unwrap();
    assert_eq!(a.metrics(), b.metrics());
    assert_eq!(a.merged().export_map(), b.merged().export_map());
    assert_eq!(
        a.coverage().export_mask(a.world().spec()),
        b.coverage().export_mask(b.world().spec())
    );
    let c = run_mission(&sc, Some(6)).unwrap();
    assert_ne!(a.metrics(), c.metrics());
}

#[test]
fn operator_stop_halts_within_one_tick() {
    let mut m = Mission::new(&fixture("two_rooms.toml"), None).unwrap();
    step_until(&mut m, |m| m.tick() == 5);
    m.mailbox().push(OperatorCommand::Stop);
    assert!(m.step());
    assert_eq!(m.tick(), 5);
    assert!(matches!(
        m.outcome(),
        Outcome::Aborted {
            reason: AbortReason::OperatorStop,
            ..
        }
    ));
    assert_eq!(m.snapshot().outcome, *m.outcome());
}

#[test]
fn paused_mission_waits_for_start() {
    let mut m = Mission::new(&fixture("single_room.toml"), None).unwrap();
    m.pause_until_start();
    assert!(!m.step());
    assert_eq!(m.tick(), 0);
    m.mailbox().push(OperatorCommand::Start);
    assert!(m.step());
    assert_eq!(m.tick(), 1);
    m.mailbox().push(OperatorCommand::Start);
    m.step();
    assert!(m.events().iter().any(|(_, e)| matches!(
        e,
        MissionEvent::CommandRejected {
            command: OperatorCommand::Start,
            ..
        }
    )));
}

#[test]
fn teleop_and_bad_commands() {
    let mut m = Mission::new(&fixture("single_room.toml"), None).unwrap();
    let before = m.world().agent("RA1").unwrap().cell;
    m.mailbox().push(OperatorCommand::Teleop {
        agent: "RA1".into(),
        dc: 1,
        dr: 0,
    });
    m.mailbox().push(OperatorCommand::Teleop {
        agent: "ghost".into(),
        dc: 1,
        dr: 0,
    });
    m.mailbox().push(OperatorCommand::Teleop {
        agent: "RA1".into(),
        dc: 3,
        dr: 0,
    });
    m.step();
    let after = m.world().agent("RA1").unwrap().cell;
    assert_eq!((after.col, after.row), (before.col + 1, before.row));
    let rejected = m
        .events()
        .iter()
        .filter(|(_, e)| matches!(e, MissionEvent::CommandRejected { .. }))
        .count();
    assert_eq!(rejected, 2);
    assert_eq!(m.run_to_end().outcome, Outcome::Done);
}

#[test]
fn override_goal_moves_explorer() {
    let mut m = Mission::new(&fixture("single_room.toml"), None).unwrap();
    let target = Point2::new(8.9, 6.9);
    m.mailbox().push(OperatorCommand::OverrideGoal { point: target });
    m.step();
    assert!(matches!(
        m.explorer_state(),
        ExplorerState::NavigatingToGoal { frontier: None, .. }
    ));
    m.mailbox().push(OperatorCommand::OverrideGoal {
        point: Point2::new(f64::NAN, 1.0),
    });
    m.step();
    assert!(m
        .events()
        .iter()
        .any(|(_, e)| matches!(e, MissionEvent::CommandRejected { reason, .. } if reason.contains("finite"))));
}

#[test]
fn interactive_grasp_and_retry() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.human = HumanMode::Interactive;
    let mut m = Mission::new(&sc, None).unwrap();
    step_until(&mut m, |m| !m.snapshot().awaiting_grasp.is_empty());
    let id = m.snapshot().awaiting_grasp[0];

    // nothing happens without an operator
    for _ in 0..20 {
        m.step();
    }
    assert_eq!(m.snapshot().awaiting_grasp, vec![id]);

    // a click far from the handle fails and re-queries
    m.mailbox().push(OperatorCommand::GraspPoint {
        request_id: id,
        point: Point2::new(7.6, 2.0),
    });
    m.step();
    assert!(matches!(
        m.assistant_state("RA2"),
        Some(AssistantState::AwaitingGrasp { attempts: 1, .. })
    ));
    assert!(m
        .events()
        .iter()
        .any(|(_, e)| matches!(e, MissionEvent::RemovalFailed { request_id, .. } if *request_id == id)));

    m.mailbox().push(OperatorCommand::GraspPoint {
        request_id: id,
        point: Point2::new(8.15, 3.65),
    });
    let r = m.run_to_end();
    assert_eq!(r.outcome, Outcome::Done);
    assert_eq!(r.help_requests[0].grasps.len(), 2);
}

#[test]
fn grasp_retries_exhaust() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.human = HumanMode::Interactive;
    let mut m = Mission::new(&sc, None).unwrap();
    step_until(&mut m, |m| !m.snapshot().awaiting_grasp.is_empty());
    let id = m.snapshot().awaiting_grasp[0];
    for _ in 0..4 {
        m.mailbox().push(OperatorCommand::GraspPoint {
            request_id: id,
            point: Point2::new(7.6, 2.0),
        });
        m.step();
    }
    assert!(matches!(
        m.outcome(),
        Outcome::Aborted {
            reason: AbortReason::AssistFailed,
            ..
        }
    ));
}

#[test]
fn grasp_for_unknown_request_is_rejected() {
    let mut m = Mission::new(&fixture("single_room.toml"), None).unwrap();
    m.mailbox().push(OperatorCommand::GraspPoint {
        request_id: 99,
        point: Point2::new(1.0, 1.0),
    });
    m.step();
    assert!(m
        .events()
        .iter()
        .any(|(_, e)| matches!(e, MissionEvent::CommandRejected { .. })));
}

#[test]
fn high_res_request_goes_to_scanner() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.events.push(ScriptedEvent::HighResScan {
        tick: 3,
        point: [3.0, 6.0],
    });
    let m = run_mission(&sc, None).unwrap();
    let r = m.result();
    assert_eq!(r.outcome, Outcome::Done);
    let hr = r
        .help_requests
        .iter()
        .find(|h| h.request.kind == HelpKind::HighResScan)
        .unwrap();
    assert_eq!(hr.assigned_to.as_deref(), Some("RA2"));
    assert_eq!(hr.resolution.as_deref(), Some("captured"));
    assert_eq!(r.help_requests.len(), 2);
}

#[test]
fn tick_budget_aborts() {
    let mut sc = fixture("two_rooms.toml");
    sc.file.tick_budget = 10;
    let r = run_mission(&sc, None).unwrap().result();
    assert!(matches!(
        r.outcome,
        Outcome::Aborted {
            reason: AbortReason::TickBudget,
            ..
        }
    ));
    assert_eq!(r.ticks, 10);
}

#[test]
fn done_implies_threshold_and_no_pending() {
    for name in ["single_room.toml", "two_rooms.toml"] {
        let m = run_mission(&fixture(name), None).unwrap();
        let r = m.result();
        assert_eq!(r.outcome, Outcome::Done);
        assert!(r.final_phi >= r.threshold);
        assert!(r.help_requests.iter().all(|h| h.resolved_at.is_some()));
    }
}

#[test]
fn replay_reproduces_every_snapshot() {
    let sc = fixture("two_rooms.toml");
    let mut live = Mission::new(&sc, None).unwrap();
    live.pause_until_start();
    let mut snaps = vec![live.snapshot()];
    live.step();
    live.mailbox().push(OperatorCommand::Start);
    let script: Vec<(u64, OperatorCommand)> = vec![
        (
            4,
            OperatorCommand::Teleop {
                agent: "RA2".into(),
                dc: 0,
                dr: -1,
            },
        ),
        (
            9,
            OperatorCommand::OverrideGoal {
                point: Point2::new(4.0, 4.0),
            },
        ),
    ];
    while !live.is_terminal() {
        for (t, c) in &script {
            if *t == live.tick() {
                live.mailbox().push(c.clone());
            }
        }
        live.step();
        snaps.push(live.snapshot());
    }
    assert_eq!(live.command_log().len(), 3);

    let mut again = Mission::new(&sc, None).unwrap();
    again.pause_until_start();
    let mut replay_snaps = vec![again.snapshot()];
    let log = live.command_log().to_vec();
    let mut i = 0;
    while !again.is_terminal() {
        while i < log.len() && log[i].0 == again.tick() {
            again.mailbox().push(log[i].1.clone());
            i += 1;
        }
        if again.step() {
            replay_snaps.push(again.snapshot());
        }
    }
    assert_eq!(snaps.len(), replay_snaps.len());
    for (a, b) in snaps.iter().zip(&replay_snaps) {
        assert_eq!(a, b, "tick {}", a.tick);
    }
    assert_eq!(live.metrics(), again.metrics());

    let r = replay_mission(&sc, None, &log, true).unwrap();
    assert_eq!(r.metrics(), live.metrics());
}
