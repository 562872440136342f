#![allow(dead_code)]

use esmc_core::inference::{init_state, sweep, TrainConfig, VariationalState};
use esmc_core::model::HyperParams;
use esmc_core::{Dataset, ExpertConfig, LabelMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Minimizes `f` with Nelder-Mead, restarting from the incumbent until a
/// restart no longer improves it.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], scale: f64) -> (Vec<f64>, f64) {
    let mut best = x0.to_vec();
    let mut fbest = f(&best);
    let mut step = scale;
    for _ in 0..40 {
        let (x, fx) = nm_run(&f, &best, step, 20_000);
        let improved = fbest - fx;
        if fx < fbest {
            best = x;
            fbest = fx;
        }
        if improved <= 1e-15 * fbest.abs().max(1.0) {
            if step < 1e-7 {
                break;
            }
            step *= 0.1;
        }
    }
    (best, fbest)
}

fn nm_run(f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = simplex
            .iter()
            .skip(1)
            .map(|x| {
                x.iter()
                    .zip(&simplex[0])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if spread < 1e-12 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|x| x[d]).sum::<f64>() / n as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|d| centroid[d] + t * (simplex[n][d] - centroid[d]))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                for i in 1..=n {
                    for d in 0..n {
                        simplex[i][d] = simplex[0][d] + 0.5 * (simplex[i][d] - simplex[0][d]);
                    }
                    values[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let i = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap();
    (simplex[i].clone(), values[i])
}

/// Five instances, two features, two labels; the last `unlabeled` rows carry no labels.
pub fn toy_data(seed: u64, unlabeled: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 5;
    let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.5..1.5));
    let nl = n - unlabeled;
    // Both labels see both values among the labeled rows.
    let labels = LabelMatrix::from_fn(nl, 2, |i, k| (i + k) % 2 == 0);
    Dataset::new(x, labels).unwrap()
}

pub fn toy_config(seed: u64) -> TrainConfig {
    let hp = HyperParams {
        latent_dim: 1,
        experts: ExpertConfig::new(2, 1.5).unwrap(),
        num_pseudo_c: 2,
        num_pseudo_z: 2,
        max_iters: 3,
        ..HyperParams::default()
    };
    let mut cfg = TrainConfig::new(hp);
    cfg.seed = seed;
    cfg.propagate_pseudo = false;
    cfg
}

/// A toy state a couple of sweeps away from its initialization.
pub fn toy_state(seed: u64, unlabeled: usize) -> (Dataset, TrainConfig, VariationalState) {
    let data = toy_data(seed, unlabeled);
    let cfg = toy_config(seed);
    let mut state = init_state(&data, &cfg).unwrap();
    for _ in 0..2 {
        sweep(&mut state, &data, &cfg).unwrap();
    }
    (data, cfg, state)
}
