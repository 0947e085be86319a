mod common;

use common::{generated, manual, node, request};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secsched::agents::{GreedyLatency, RandomValid};
use secsched::simenv::{
    run_episode, run_episode_with, Action, EnvConfig, ReuseChoice, SimEnv, BUSY_CAP,
};
use secsched::Error;

const NEW: ReuseChoice = ReuseChoice::New;
const REUSE: ReuseChoice = ReuseChoice::Reuse;

// Image 100 MB at 100 MB/s plus 200 ms init at the reference memory.
const COLD_MS: f64 = 1200.0;

#[test]
fn three_request_timeline_matches_hand_simulation() {
    let sc = manual(
        vec![node(0, 4, 4096.0)],
        1,
        vec![
            request(0, 0.0, 0, 1.0, 512.0, 100.0),
            request(1, 500.0, 0, 1.0, 512.0, 100.0),
            request(2, 2000.0, 0, 1.0, 512.0, 100.0),
        ],
    );
    let mut env = SimEnv::new(sc, EnvConfig::default());
    env.reset(0).unwrap();

    // t=0: empty node, only New is possible
    assert_eq!(env.cluster().clock_ms, 0.0);
    assert_eq!(env.mask().choice[0], [false, true]);
    let out = env.step(Action::new(0, NEW)).unwrap();
    assert_eq!(out.breakdown.cold_ms, COLD_MS);
    assert_eq!(out.breakdown.total_ms, COLD_MS + 100.0);
    assert_eq!(out.reward, -1.3);

    // t=500: first container still busy until 1300
    assert_eq!(env.cluster().clock_ms, 500.0);
    assert_eq!(env.cluster().free_cpu_cores[0], 3.0);
    assert_eq!(env.cluster().free_mem_mb[0], 3584.0);
    assert_eq!(env.mask().choice[0], [false, true]);
    let out = env.step(Action::new(0, NEW)).unwrap();
    assert_eq!(out.reward, -1.3);

    // t=2000: both containers went idle at 1300 and 1800
    assert_eq!(env.cluster().clock_ms, 2000.0);
    assert_eq!(env.cluster().free_cpu_cores[0], 4.0);
    assert_eq!(env.cluster().free_mem_mb[0], 3072.0);
    assert_eq!(env.cluster().idle_count(0, 0), 2);
    assert_eq!(env.cluster().busy_count(0), 0);
    let out = env.step(Action::new(0, REUSE)).unwrap();
    assert_eq!(out.breakdown.cold_ms, 0.0);
    assert_eq!(out.breakdown.total_ms, 100.0);
    assert_eq!(out.reward, -0.1);
    assert!(out.done);
    assert_eq!(env.cluster().free_cpu_cores[0], 3.0);
    assert_eq!(env.cluster().idle_count(0, 0), 1);

    // oldest idle container (created first) was bound
    let busy: Vec<_> = env
        .cluster()
        .containers
        .values()
        .filter(|c| matches!(c.status, secsched::simenv::ContainerStatus::Busy { .. }))
        .collect();
    assert_eq!(busy.len(), 1);
    assert_eq!(busy[0].container_id, 0);
}

#[test]
fn deferred_request_waits_for_the_earliest_completion() {
    let sc = manual(
        vec![node(0, 2, 4096.0)],
        1,
        vec![request(0, 0.0, 0, 2.0, 512.0, 100.0), request(1, 10.0, 0, 2.0, 512.0, 100.0)],
    );
    let mut env = SimEnv::new(sc, EnvConfig::default());
    env.reset(0).unwrap();
    env.step(Action::new(0, NEW)).unwrap();
    assert_eq!(env.deferred(), 1);
    let finish = COLD_MS + 50.0;
    assert_eq!(env.cluster().clock_ms, finish);
    assert_eq!(env.current_wait_ms(), finish - 10.0);
    let out = env.step(Action::new(0, REUSE)).unwrap();
    assert_eq!(out.breakdown.wait_ms, finish - 10.0);
    assert_eq!(out.breakdown.total_ms, finish - 10.0 + 50.0);
    assert_eq!(out.reward, -(finish - 10.0 + 50.0) / 1000.0);
}

#[test]
fn strict_paper_rejects_deferral() {
    let sc = manual(
        vec![node(0, 2, 4096.0)],
        1,
        vec![request(0, 0.0, 0, 2.0, 512.0, 100.0), request(1, 10.0, 0, 2.0, 512.0, 100.0)],
    );
    let mut env = SimEnv::new(sc, EnvConfig::strict_paper());
    env.reset(0).unwrap();
    assert!(matches!(env.step(Action::new(0, NEW)), Err(Error::InfeasibleStrict { request_id: 1 })));
}

#[test]
fn never_fitting_request_is_unschedulable() {
    let sc = manual(vec![node(0, 8, 30_720.0)], 1, vec![request(0, 0.0, 0, 1.0, 65_536.0, 100.0)]);
    let mut env = SimEnv::new(sc, EnvConfig::default());
    assert!(matches!(env.reset(0), Err(Error::Unschedulable { request_id: 0 })));
}

#[test]
fn new_with_exact_memory_fills_the_node() {
    let sc = manual(vec![node(0, 4, 1024.0)], 1, vec![request(0, 0.0, 0, 1.0, 1024.0, 100.0)]);
    let mut env = SimEnv::new(sc.clone(), EnvConfig::default());
    env.reset(0).unwrap();
    assert!(env.mask().allows(Action::new(0, NEW)));
    env.step(Action::new(0, NEW)).unwrap();
    assert_eq!(env.cluster().free_mem_mb[0], 0.0);
    env.cluster().check_invariants(&sc).unwrap();
}

#[test]
fn reset_state_and_encoding() {
    let sc = generated(6, 8, 50, 3);
    let mut env = SimEnv::new(sc.clone(), EnvConfig::default());
    let s1 = env.reset(0).unwrap();
    assert_eq!(s1.len(), 4 * 6 + 8);
    for v in 0..6 {
        assert_eq!(&s1[4 * v..4 * v + 4], &[1.0, 1.0, 0.0, 0.0]);
    }
    let s2 = env.reset(0).unwrap();
    assert_eq!(s1, s2);
    let slo = sc.trace[0].slo_ms;
    assert_eq!(*s1.last().unwrap(), (slo / 400.0) as f32);

    let a = env.mask().valid_actions()[0];
    env.step(a).unwrap();
    if env.cluster().busy_count(a.node) == 1 {
        assert_eq!(env.observe()[4 * a.node + 3], 1.0 / BUSY_CAP as f32);
    }
}

#[test]
fn invalid_action_errors_or_remaps() {
    let sc = manual(vec![node(0, 4, 4096.0), node(1, 4, 4096.0)], 1, vec![request(0, 0.0, 0, 1.0, 512.0, 100.0)]);
    let mut strict = SimEnv::new(sc.clone(), EnvConfig::default());
    strict.reset(0).unwrap();
    assert!(matches!(strict.step(Action::new(0, REUSE)), Err(Error::InvalidAction { .. })));

    let mut lenient = SimEnv::new(sc, EnvConfig::training());
    lenient.reset(0).unwrap();
    let out = lenient.step(Action::new(0, REUSE)).unwrap();
    assert!(out.remapped);
    assert_eq!(out.applied, Action::new(0, NEW));
}

#[test]
fn capacity_safety_over_ten_thousand_random_steps() {
    let t0 = std::time::Instant::now();
    let sc = generated(8, 30, 10_000, 11);
    let mut env = SimEnv::new(sc.clone(), EnvConfig::default());
    env.reset(0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut placed = 0;
    while !env.is_done() {
        let a = *env.mask().valid_actions().choose(&mut rng).unwrap();
        env.step(a).unwrap();
        placed += 1;
        env.cluster().check_invariants(&sc).unwrap();
        for (v, spec) in sc.nodes.iter().enumerate() {
            let cpu = env.cluster().free_cpu_cores[v];
            let mem = env.cluster().free_mem_mb[v];
            assert!((0.0..=spec.cpu_cores as f64).contains(&cpu));
            assert!((0.0..=spec.mem_mb).contains(&mem));
        }
    }
    assert_eq!(placed, 10_000);
    assert!(t0.elapsed().as_secs() < 30);
}

#[test]
fn every_request_has_exactly_one_record() {
    let sc = generated(5, 10, 500, 2);
    let r = run_episode(&mut RandomValid::new(3), sc.clone(), EnvConfig::default(), 0).unwrap();
    let ids: Vec<u64> = r.records.iter().map(|x| x.request_id).collect();
    let expected: Vec<u64> = sc.trace.iter().map(|x| x.request_id).collect();
    assert_eq!(ids, expected);
    for rec in &r.records {
        if rec.new_container {
            assert!(rec.cold_ms > 0.0);
        } else {
            assert_eq!(rec.cold_ms, 0.0);
        }
    }
}

#[test]
fn reward_consistency() {
    let sc = generated(5, 10, 800, 9);
    for cfg in [EnvConfig::default(), EnvConfig { include_wait_in_reward: false, ..EnvConfig::default() }] {
        let r = run_episode(&mut RandomValid::new(1), sc.clone(), cfg, 0).unwrap();
        for rec in &r.records {
            let mut cost = rec.cold_ms + rec.comp_ms + rec.comm_ms;
            if cfg.include_wait_in_reward {
                cost += rec.wait_ms;
            }
            assert_eq!(rec.reward, -cost / 1000.0);
        }
    }
}

#[test]
fn strict_total_reward_is_negative_total_latency() {
    let sc = generated(6, 10, 300, 4);
    let r = run_episode(&mut GreedyLatency, sc, EnvConfig::strict_paper(), 0).unwrap();
    assert_eq!(r.deferred, 0);
    let total: f64 = r.records.iter().map(|x| x.total_ms).sum();
    assert!((r.total_reward + total / 1000.0).abs() < 1e-9 * total.max(1.0));
}

#[test]
fn single_node_places_everything_on_node_zero() {
    let sc = generated(1, 5, 200, 6);
    let r = run_episode(&mut GreedyLatency, sc, EnvConfig::default(), 0).unwrap();
    assert!(r.records.iter().all(|x| x.node_id == 0));
}

#[test]
fn episodes_are_byte_identical() {
    let sc = generated(5, 10, 400, 8);
    let run = || {
        let r = run_episode_with(&mut RandomValid::new(4), sc.clone(), EnvConfig::default(), 0, false).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

#[test]
fn keep_alive_zero_disables_reuse() {
    let sc = generated(4, 3, 300, 1);
    let cfg = EnvConfig { keep_alive_ms: 0.0, ..EnvConfig::default() };
    let r = run_episode(&mut GreedyLatency, sc, cfg, 0).unwrap();
    assert!(r.records.iter().all(|x| x.new_container));
}

#[test]
fn episode_csv_round_trip() {
    let sc = generated(4, 5, 100, 1);
    let r = run_episode_with(&mut GreedyLatency, sc, EnvConfig::default(), 0, false).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("episode.csv");
    r.save_csv(&p).unwrap();
    let header = std::fs::read_to_string(&p).unwrap();
    assert!(header.starts_with(
        "request_id,node_id,new_container,wait_ms,cold_ms,comp_ms,comm_ms,total_ms,slo_ms,slo_met,reward,decision_time_us\n"
    ));
    let back = secsched::simenv::EpisodeReport::load_csv(&p).unwrap();
    assert_eq!(back.records, r.records);
}
