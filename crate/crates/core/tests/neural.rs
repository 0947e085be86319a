use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use secsched::neural::{
    clip_global_norm, masked_sample, Activation, AdamConfig, AdamState, CategoricalHead, InitConfig, Mlp, Real,
};

/// Max relative error between backprop and central differences of the
/// scalar loss `<f(x), g>`.
fn gradient_error<T: Real>(net: &Mlp<T>, x: &[T], g: &[T], h: f64) -> f64 {
    let grads = net.gradients(x, g).unwrap();
    let analytic = grads.flat();
    let loss = |n: &Mlp<T>| -> f64 {
        n.forward(x).unwrap().iter().zip(g).map(|(a, b)| (*a * *b).to_f64().unwrap()).sum()
    };
    let params = net.params_flat();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut p = params.clone();
        p[i] = params[i] + T::lit(h);
        probe.set_params_flat(&p).unwrap();
        let up = loss(&probe);
        p[i] = params[i] - T::lit(h);
        probe.set_params_flat(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].to_f64().unwrap();
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

fn random_net<T: Real>(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Mlp<T> {
    let init = InitConfig { hidden_gain: 1.0, output_gain: 1.0 };
    let mut net = Mlp::<T>::new(sizes, Activation::Identity, init, rng).unwrap();
    let p: Vec<T> = net.params_flat().iter().map(|_| T::lit(rng.gen_range(-0.5..0.5))).collect();
    net.set_params_flat(&p).unwrap();
    net
}

#[test]
fn f64_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..24 {
        let sizes: &[usize] = if i % 2 == 0 { &[8, 16, 4] } else { &[5, 7, 6, 3] };
        let net: Mlp<f64> = random_net(&mut rng, sizes);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..*sizes.last().unwrap()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = gradient_error(&net, &x, &g, 1e-5);
        assert!(err < 1e-5, "net {i}: relative error {err}");
    }
}

#[test]
fn f32_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let net: Mlp<f32> = random_net(&mut rng, &[8, 16, 4]);
        let x: Vec<f32> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic = net.gradients(&x, &g).unwrap().flat();

        // reference derivative from the same parameters held in f64
        let mut wide = Mlp::<f64>::zeros(&net.layer_sizes(), net.output_activation).unwrap();
        let params: Vec<f64> = net.params_flat().iter().map(|v| *v as f64).collect();
        let xw: Vec<f64> = x.iter().map(|v| *v as f64).collect();
        let gw: Vec<f64> = g.iter().map(|v| *v as f64).collect();
        let loss = |n: &Mlp<f64>| -> f64 { n.forward(&xw).unwrap().iter().zip(&gw).map(|(a, b)| a * b).sum() };
        let h = 1e-5;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += h;
            wide.set_params_flat(&p).unwrap();
            let up = loss(&wide);
            p[i] -= 2.0 * h;
            wide.set_params_flat(&p).unwrap();
            let numeric = (up - loss(&wide)) / (2.0 * h);
            let a = analytic[i] as f64;
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            assert!(err < 1e-2, "param {i}: relative error {err}");
        }
    }
}

#[test]
fn zero_and_scaled_output_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let net: Mlp<f64> = random_net(&mut rng, &[4, 6, 3]);
    let x = [0.1, -0.2, 0.3, 0.4];
    let zero = net.gradients(&x, &[0.0; 3]).unwrap();
    assert!(zero.flat().iter().all(|v| *v == 0.0));
    let g = [0.5, -1.0, 0.25];
    let base = net.gradients(&x, &g).unwrap().flat();
    let scaled = net.gradients(&x, &g.map(|v| 3.0 * v)).unwrap().flat();
    for (a, b) in base.iter().zip(&scaled) {
        assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn parameters_stay_finite_over_many_updates() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut net = Mlp::<f32>::new(&[6, 16, 16, 3], Activation::Identity, InitConfig::default(), &mut rng).unwrap();
    let mut opt = AdamState::new(&net, AdamConfig { lr: 1e-2, ..AdamConfig::default() });
    for _ in 0..10_000 {
        let x: Vec<f32> = (0..6).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let g: Vec<f32> = (0..3).map(|_| rng.gen_range(-100.0..100.0)).collect();
        let mut grads = net.gradients(&x, &g).unwrap();
        clip_global_norm(&mut [&mut grads], 10.0);
        opt.step(&mut net, &grads).unwrap();
    }
    assert!(net.all_finite());
}

#[test]
fn masked_probabilities_and_sampling() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.gen_range(2..12);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        mask[rng.gen_range(0..n)] = true;
        let head = CategoricalHead::new(&logits, Some(&mask)).unwrap();
        let p = head.probs().unwrap();
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        for i in 0..n {
            if !mask[i] {
                assert_eq!(p[i], 0.0);
            }
        }
        for _ in 0..20 {
            let (i, lp) = masked_sample(&head, &mut rng).unwrap();
            assert!(mask[i]);
            assert!((lp - p[i].ln()).abs() < 1e-9);
        }
    }
    let fair = CategoricalHead::new(&[0.0f64, 0.0], None).unwrap();
    let ones = (0..100_000).filter(|_| masked_sample(&fair, &mut rng).unwrap().0 == 1).count();
    let f = ones as f64 / 100_000.0;
    assert!((0.49..=0.51).contains(&f));
}
