use drcsim::dqn::{gradient, sgd_step, MlpParams, Workspace};
use drcsim::env::Action;
use drcsim::rng::stream;
use drcsim::selftest::max_gradient_error;
use rand::Rng;

#[test]
fn gradient_matches_finite_differences() {
    let err = max_gradient_error(gradient, 100, 99);
    assert!(err < 1e-4, "max relative error {err:e}");
}

#[test]
fn full_batch_descent_fits_fixed_targets() {
    let mut rng = stream(21, 0);
    let data: Vec<([f64; 6], Action, f64)> = (0..8)
        .map(|_| {
            let x: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            (x, Action::from_index(rng.random_range(0..2)), rng.random_range(-1.0..1.0))
        })
        .collect();
    let mut params = MlpParams::glorot(&[6, 64, 64, 2], &mut stream(21, 3));
    let mut ws = Workspace::new(&params);
    let mut grad = MlpParams::zeros(&params.sizes());
    let loss = |p: &MlpParams| {
        data.iter()
            .map(|(x, a, y)| 0.5 * (y - p.forward(x)[a.index()]).powi(2))
            .sum::<f64>()
            / data.len() as f64
    };
    let mut prev = loss(&params);
    let mut steps = 0;
    while prev >= 1e-3 {
        assert!(steps < 2_000_000, "loss still {prev} after {steps} steps");
        grad.fill(0.0);
        for (x, a, y) in &data {
            params.accumulate_gradient(x, *a, *y, 1.0 / data.len() as f64, &mut ws, &mut grad);
        }
        sgd_step(&mut params, &grad, 0.01);
        let now = loss(&params);
        assert!(now <= prev, "loss rose from {prev} to {now} at step {steps}");
        prev = now;
        steps += 1;
    }
}

#[test]
fn gradient_is_zero_at_exact_fit() {
    let p = MlpParams::glorot(&[6, 64, 64, 2], &mut stream(3, 3));
    let x = [0.4, 1.0, 0.0, 0.0, 1.0, 1.0];
    for a in Action::ALL {
        let y = p.forward(&x)[a.index()];
        assert!(gradient(&p, &x, a, y).values().all(|g| g == 0.0));
    }
}
