mod common;

use common::generated;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secsched::agents::checkpoint::Checkpoint;
use secsched::agents::ppo::{
    compute_advantages, ppo_collect, ppo_update, surrogate, ActMode, ActorCritic, AdvantageMode, PpoConfig,
    PpoOptimizers, PpoTrainer, RolloutBatch, Trajectory, Transition,
};
use secsched::agents::RandomValid;
use secsched::simenv::{run_episode, state_len, Action, ActionMask, EnvConfig, ReuseChoice};

fn small_config() -> PpoConfig {
    PpoConfig {
        rollout_steps: 256,
        minibatch: 64,
        hidden: 32,
        reuse_hidden: 16,
        ..PpoConfig::default()
    }
}

fn rollout(seed: u64) -> (ActorCritic, RolloutBatch, PpoConfig) {
    let sc = generated(4, 6, 300, seed);
    let mut t = PpoTrainer::new(sc, EnvConfig::training(), small_config(), seed, 10_000).unwrap();
    let trajs = ppo_collect(std::slice::from_mut(&mut t.worker), &t.ac, 256, &mut t.rng).unwrap();
    let batch = RolloutBatch::from_trajectories(trajs, &t.config);
    (t.ac, batch, t.config)
}

#[test]
fn first_update_starts_on_policy() {
    let (ac, batch, cfg) = rollout(1);
    let (surr, clip) = surrogate(&ac, &batch, cfg.clip_eps).unwrap();
    let mean_adv = batch.advantages.iter().sum::<f64>() / batch.len() as f64;
    assert_eq!(clip, 0.0);
    assert_eq!(surr, mean_adv);

    let one_pass = PpoConfig { epochs: 1, minibatch: batch.len(), ..cfg };
    let mut ac2 = ac.clone();
    let mut opt = PpoOptimizers::new(&ac2, &one_pass);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let stats = ppo_update(&mut ac2, &mut opt, &batch, &one_pass, 0.01, &mut rng).unwrap();
    assert_eq!(stats.clip_fraction, 0.0);
    assert!((stats.surrogate - mean_adv).abs() < 1e-12);
    assert_ne!(ac2, ac);
}

#[test]
fn joint_log_prob_decomposes() {
    let (ac, batch, _) = rollout(2);
    for t in &batch.steps {
        assert_eq!(t.log_prob, t.log_prob_node + t.log_prob_reuse);
        let (lp1, lp2, h1, h2) = ac.evaluate(t).unwrap();
        assert_eq!(lp1, t.log_prob_node);
        assert_eq!(lp2, t.log_prob_reuse);
        assert!(h1 >= 0.0 && h2 >= 0.0);
    }
}

#[test]
fn masked_actions_are_never_sampled() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let ac = ActorCritic::new(state_len(n), n, 32, 16, &mut rng).unwrap();
    for _ in 0..2000 {
        let state: Vec<f32> = (0..state_len(n)).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mut choice = vec![[false, false]; n];
        let open = rng.gen_range(0..n);
        choice[open][1] = true;
        for c in choice.iter_mut() {
            if rng.gen_bool(0.3) {
                c[rng.gen_range(0..2)] = true;
            }
        }
        let mask = ActionMask { node: choice.iter().map(|c| c[0] || c[1]).collect(), choice };
        let out = ac.act(&state, &mask, ActMode::Sample(&mut rng)).unwrap();
        assert!(mask.allows(out.action));
        let greedy = ac.act::<ChaCha8Rng>(&state, &mask, ActMode::Greedy).unwrap();
        assert!(mask.allows(greedy.action));
    }
}

#[test]
fn learns_a_two_armed_bandit() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 2;
    let mut ac = ActorCritic::new(state_len(n), n, 16, 8, &mut rng).unwrap();
    let cfg = PpoConfig { epochs: 4, minibatch: 64, hidden: 16, reuse_hidden: 8, ..PpoConfig::default() };
    let mut opt = PpoOptimizers::new(&ac, &PpoConfig { actor_lr: 3e-3, ..cfg.clone() });
    let state = vec![0.5f32; state_len(n)];
    let mask = ActionMask { node: vec![true, true], choice: vec![[false, true]; 2] };
    for _ in 0..60 {
        let mut traj = Trajectory::default();
        for _ in 0..128 {
            let a = ac.act(&state, &mask, ActMode::Sample(&mut rng)).unwrap();
            assert_eq!(a.action.choice, ReuseChoice::New);
            traj.steps.push(Transition {
                state: state.clone(),
                node_mask: mask.node.clone(),
                choice_mask: [false, true],
                action: a.action,
                log_prob_node: a.log_prob_node,
                log_prob_reuse: a.log_prob_reuse,
                log_prob: a.log_prob,
                value: ac.value(&state).unwrap(),
                reward: if a.action.node == 0 { 1.0 } else { 0.0 },
                done: true,
                latency_ms: 0.0,
                slo_met: true,
            });
        }
        let batch = RolloutBatch::from_trajectories(vec![traj], &cfg);
        ppo_update(&mut ac, &mut opt, &batch, &cfg, 0.0, &mut rng).unwrap();
    }
    let p = ac.node_distribution(&state, &mask.node).unwrap().probs().unwrap();
    assert!(p[0] > 0.95, "p(best arm) = {}", p[0]);
}

#[test]
fn lambda_zero_equals_one_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, batch, _) = rollout(5);
    let mut traj = Trajectory { steps: batch.steps, bootstrap_value: rng.gen_range(-1.0..0.0) };
    for t in traj.steps.iter_mut() {
        t.done = rng.gen_bool(0.05);
    }
    let a = compute_advantages(&traj, 0.99, AdvantageMode::Gae { lambda: 0.0 });
    let b = compute_advantages(&traj, 0.99, AdvantageMode::OneStep);
    assert_eq!(a, b);
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let sc = generated(5, 6, 400, 6);
    let mut t = PpoTrainer::new(sc.clone(), EnvConfig::training(), small_config(), 6, 10_000).unwrap();
    t.update_once().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ppo.ckpt");
    t.checkpoint().unwrap().save(&path).unwrap();
    let back = ActorCritic::load_policy(&path, &sc).unwrap();
    assert_eq!(back, t.ac);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = sc.nodes.len();
    let mask = ActionMask { node: vec![true; n], choice: vec![[true, true]; n] };
    for _ in 0..100 {
        let s: Vec<f32> = (0..state_len(n)).map(|_| rng.gen_range(0.0..1.5)).collect();
        assert_eq!(back.value(&s).unwrap(), t.ac.value(&s).unwrap());
        let a = back.act::<ChaCha8Rng>(&s, &mask, ActMode::Greedy).unwrap();
        let b = t.ac.act::<ChaCha8Rng>(&s, &mask, ActMode::Greedy).unwrap();
        assert_eq!(a, b);
    }

    let other = generated(6, 6, 50, 1);
    assert!(ActorCritic::load_policy(&path, &other).is_err());
}

#[test]
fn resume_reproduces_the_next_update() {
    let sc = generated(4, 6, 300, 8);
    let mut a = PpoTrainer::new(sc.clone(), EnvConfig::training(), small_config(), 8, 10_000).unwrap();
    a.update_once().unwrap();
    a.update_once().unwrap();
    let bytes = a.checkpoint().unwrap().to_bytes().unwrap();
    let mut b = PpoTrainer::resume(sc, &Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    let ra = a.update_once().unwrap();
    let rb = b.update_once().unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.ac, b.ac);
    assert_eq!(a.worker.episode_actions, b.worker.episode_actions);
}

#[test]
fn trainer_rejects_bad_budgets() {
    let sc = generated(3, 4, 50, 1);
    assert!(PpoTrainer::new(sc.clone(), EnvConfig::training(), small_config(), 0, 0).is_err());
    assert!(PpoTrainer::new(sc.clone(), EnvConfig::training(), small_config(), 0, 100).is_err());
    let bad = PpoConfig { clip_eps: 0.0, ..small_config() };
    assert!(PpoTrainer::new(sc, EnvConfig::training(), bad, 0, 1000).is_err());
}

#[test]
fn entropy_bonus_anneals_linearly() {
    let sc = generated(3, 4, 300, 1);
    let mut t = PpoTrainer::new(sc, EnvConfig::training(), small_config(), 0, 1024).unwrap();
    assert_eq!(t.entropy_coef(), 0.01);
    t.update_once().unwrap();
    t.update_once().unwrap();
    assert!((t.entropy_coef() - 0.005).abs() < 1e-12);
}

#[test]
fn improves_on_random_in_a_small_cluster() {
    let mut wins = 0;
    for seed in 0..3 {
        let sc = generated(3, 5, 200, 40 + seed);
        let cfg = PpoConfig { hidden: 64, ..PpoConfig::default() };
        let mut t = PpoTrainer::new(sc.clone(), EnvConfig::training(), cfg, seed, 50_000).unwrap();
        t.run(|_| {}).unwrap();
        let first = t.curve.first().unwrap().mean_episode_reward;
        let last = t.curve.last().unwrap().mean_episode_reward;
        let ppo = run_episode(&mut t.policy(), sc.clone(), EnvConfig::default(), 0).unwrap();
        let random = run_episode(&mut RandomValid::new(seed), sc, EnvConfig::default(), 0).unwrap();
        assert!(last > first, "seed {seed}: reward {first} -> {last}");
        if ppo.mean_latency_ms() < random.mean_latency_ms() {
            wins += 1;
        }
    }
    assert_eq!(wins, 3);
}

#[test]
fn action_joint_index_round_trips() {
    for node in 0..7 {
        for choice in [ReuseChoice::Reuse, ReuseChoice::New] {
            let a = Action::new(node, choice);
            assert_eq!(Action::from_joint_index(a.joint_index()), a);
        }
    }
}
