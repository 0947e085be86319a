use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use secsched::scenario::{
    generate_functions, generate_scenario, generate_topology, generate_workload, load_csv_dir, Scenario,
    ScenarioParams, ZipfSampler,
};

#[test]
fn zipf_frequencies_match_the_law() {
    let n = 20;
    let samples = 1_000_000;
    for (i, beta) in [0.0, 0.5, 1.0, 1.5].into_iter().enumerate() {
        let z = ZipfSampler::new(n, beta).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + i as u64);
        let mut counts = vec![0u64; n];
        for _ in 0..samples {
            counts[z.sample(&mut rng)] += 1;
        }
        let norm: f64 = (1..=n).map(|r| (r as f64).powf(-beta)).sum();
        let tv: f64 = 0.5
            * counts
                .iter()
                .enumerate()
                .map(|(r, c)| (*c as f64 / samples as f64 - ((r + 1) as f64).powf(-beta) / norm).abs())
                .sum::<f64>();
        assert!(tv <= 0.005, "beta {beta}: total variation {tv}");
    }
}

#[test]
fn zipf_rejects_bad_parameters() {
    assert!(ZipfSampler::new(0, 1.0).is_err());
    assert!(ZipfSampler::new(5, -0.1).is_err());
    assert!(ZipfSampler::new(5, f64::NAN).is_err());
}

#[test]
fn generators_are_seed_deterministic() {
    assert_eq!(generate_topology(30, 4, 7).unwrap(), generate_topology(30, 4, 7).unwrap());
    assert_ne!(generate_topology(30, 4, 7).unwrap(), generate_topology(30, 4, 8).unwrap());
    let f = generate_functions(10, 1).unwrap();
    let nodes = generate_topology(5, 2, 1).unwrap();
    let a = generate_workload(&f, &nodes, 500, 1.0, 10.0, 3).unwrap();
    assert_eq!(a, generate_workload(&f, &nodes, 500, 1.0, 10.0, 3).unwrap());
    for w in a.windows(2) {
        assert!(w[0].arrival_ms <= w[1].arrival_ms);
    }
}

#[test]
fn nodes_of_a_type_share_their_profile() {
    let nodes = generate_topology(50, 5, 2).unwrap();
    for a in &nodes {
        assert!((0.0..=2000.0).contains(&a.pos_x) && (0.0..=2000.0).contains(&a.pos_y));
        for b in nodes.iter().filter(|b| b.type_id == a.type_id) {
            assert_eq!((a.cpu_cores, a.cpu_freq_ghz, a.mem_mb), (b.cpu_cores, b.cpu_freq_ghz, b.mem_mb));
        }
    }
}

#[test]
fn mean_arrival_rate() {
    let f = generate_functions(10, 1).unwrap();
    let nodes = generate_topology(5, 2, 1).unwrap();
    let t = generate_workload(&f, &nodes, 20_000, 1.0, 10.0, 9).unwrap();
    let rate = t.len() as f64 / (t.last().unwrap().arrival_ms / 1000.0);
    assert!((rate - 10.0).abs() < 0.3, "rate {rate}");
}

#[test]
fn json_and_csv_round_trips() {
    let p = ScenarioParams {
        num_nodes: 8,
        num_types: 3,
        num_functions: 12,
        num_requests: 300,
        seed: 5,
        ..ScenarioParams::default()
    };
    let sc = generate_scenario(&p).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("scenario.json");
    sc.save_json(&json).unwrap();
    assert_eq!(Scenario::load_json(&json).unwrap(), sc);

    let csv_dir = dir.path().join("csv");
    sc.save_dir(&csv_dir).unwrap();
    let back = load_csv_dir(&csv_dir, sc.link_model, sc.rng_seed).unwrap();
    assert_eq!(back, sc);
    assert_eq!(back.fingerprint(), sc.fingerprint());
}
