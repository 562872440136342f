//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

mod common;

use std::time::Instant;

use common::{nelder_mead, toy_state};
use esmc_core::baseline::{fit_linear, sample_head_tail, score_linear, HeadTailConfig};
use esmc_core::dataio::{
    drop_instances, drop_labels, format_matrix_csv, format_sparse, parse_matrix_csv,
    parse_sparse_str,
};
use esmc_core::experts::*;
use esmc_core::inference::*;
use esmc_core::metrics::{auc, auc_macro_over, coverage, micro_f1_max, precision_at_k};
use esmc_core::model::{choose_num_experts, choose_num_pseudo, sample_dataset, HyperParams};
use esmc_core::predict::{model_from_json, model_to_json};
use esmc_core::{score, Dataset, ExpertConfig, LabelMatrix};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.4}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn expert_marginal_exactness() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for b in 1..=12 {
        for lam in [1.0, 2.5] {
            let cfg = ExpertConfig::new(b, lam).unwrap();
            for i in 1..=99 {
                let p = i as f64 / 100.0;
                let z = logit(p) / lam;
                let err =
                    (marginal_label_prob(z, &cfg) - brute_force_marginal(z, &cfg).unwrap()).abs();
                worst = worst.max(err);
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0,
        format!("max |diff| {worst:.2e}, {secs:.3} s"),
    )
}

fn curve_points() -> Outcome {
    let table = marginal_curves(&[1, 2, 5, 10, 20]).unwrap();
    let text = format_matrix_csv(&table, &["curves".into()]);
    let parsed = parse_matrix_csv(&text).unwrap();
    let mid = 50;
    let b20 = 0.5f64.powi(20) / (0.5f64.powi(20) + 0.5);
    let mut ok = parsed.nrows() == 101 && (parsed[(mid, 0)] - 0.5).abs() < 1e-15;
    ok &= (parsed[(mid, 1)] - 0.5).abs() < 1e-9;
    ok &= (parsed[(mid, 5)] - b20).abs() < 1e-9;
    ok &= (b20 - 1.9073e-6).abs() < 5e-11;
    let mut max_dev = 0.0f64;
    for i in 0..parsed.nrows() {
        for (j, b) in [1usize, 2, 5, 10, 20].iter().enumerate() {
            max_dev = max_dev
                .max((parsed[(i, j + 1)] - marginal_from_suitability(parsed[(i, 0)], *b)).abs());
        }
        if i > 0 {
            for j in 0..parsed.ncols() {
                ok &= parsed[(i, j)] >= parsed[(i - 1, j)];
            }
        }
    }
    ok &= max_dev <= 1e-9;
    outcome(
        ok,
        format!(
            "B=20 at 0.5 -> {:.6e}, csv max dev {max_dev:.1e}",
            parsed[(mid, 5)]
        ),
    )
}

fn bound_dominance() -> Outcome {
    let t = Instant::now();
    let mut min_slack = f64::INFINITY;
    let mut max_touch = 0.0f64;
    for i in 0..=2000 {
        let tt = -10.0 + i as f64 * 0.01;
        let s = sigmoid(tt);
        for j in 0..=1000 {
            let xi = j as f64 * 0.01;
            min_slack = min_slack.min(s - sigmoid_bound(tt, xi));
        }
    }
    for j in 0..=1000 {
        let xi = j as f64 * 0.01;
        for tt in [xi, -xi] {
            max_touch = max_touch.max((sigmoid_bound(tt, xi) - sigmoid(tt)).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        min_slack >= -1e-12 && max_touch < 1e-12 && secs < 1.0,
        format!("min slack {min_slack:.2e}, max touch error {max_touch:.2e}, {secs:.3} s"),
    )
}

fn update_optimality() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..2 {
        let (data, _, state) = toy_state(seed, 1);
        for which in [Layer::C, Layer::Z] {
            let mut closed = state.clone();
            update_q_u(&mut closed, &data, which).unwrap();
            let layer = |s: &VariationalState| match which {
                Layer::C => s.layer_c.clone(),
                Layer::Z => s.layer_z.clone(),
            };
            let base = layer(&state);
            let (m, out) = (base.value_mean.nrows(), base.value_mean.ncols());
            let mut start: Vec<f64> = base.value_mean.iter().copied().collect();
            for i in 0..m {
                for j in 0..=i {
                    start.push(base.value_cov_factor[(i, j)]);
                }
            }
            let apply = |p: &[f64]| {
                let mut s = state.clone();
                let l = match which {
                    Layer::C => &mut s.layer_c,
                    Layer::Z => &mut s.layer_z,
                };
                l.value_mean = DMatrix::from_column_slice(m, out, &p[..m * out]);
                let mut it = p[m * out..].iter();
                for i in 0..m {
                    for j in 0..=i {
                        l.value_cov_factor[(i, j)] = *it.next().unwrap();
                    }
                }
                s
            };
            let (best, _) = nelder_mead(|p| -elbo(&apply(p), &data).unwrap(), &start, 0.1);
            let num = layer(&apply(&best));
            let cl = layer(&closed);
            worst = worst.max((&num.value_mean - &cl.value_mean).abs().max());
            worst = worst.max((num.value_cov() - cl.value_cov()).abs().max());
        }
        let mut closed = state.clone();
        update_q_z(&mut closed, &data).unwrap();
        update_responsibilities(&mut closed, &data);
        let mut fresh = state.clone();
        update_responsibilities(&mut fresh, &data);
        update_bound_params(&mut fresh, &data, XiRule::Corrected);
        for i in 0..data.n_labeled() {
            for k in 0..data.num_labels() {
                let pos = data.labels.get(i, k);
                let clamp = state.z_clamp;
                let mut zq = state.clone();
                update_q_z(&mut zq, &data).unwrap();
                let f = |p: &[f64]| {
                    let mut s = state.clone();
                    s.z_mean[(i, k)] = if pos { p[0].max(clamp) } else { p[0] };
                    s.z_var[(i, k)] = p[1].exp();
                    -elbo(&s, &data).unwrap()
                };
                let (b, _) = nelder_mead(f, &[state.z_mean[(i, k)], state.z_var[(i, k)].ln()], 0.5);
                let mean = if pos { b[0].max(clamp) } else { b[0] };
                worst = worst.max((mean - zq.z_mean[(i, k)]).abs());
                worst = worst.max((b[1].exp() - zq.z_var[(i, k)]).abs());

                let f = |p: &[f64]| {
                    let mut s = state.clone();
                    s.bound.xi[(i, k)] = p[0];
                    -elbo(&s, &data).unwrap()
                };
                let (b, _) = nelder_mead(f, &[state.bound.xi[(i, k)] + 0.3], 0.2);
                worst = worst.max((b[0].abs() - fresh.bound.xi[(i, k)]).abs());

                if !pos {
                    let f = |p: &[f64]| {
                        let mut s = state.clone();
                        s.resp_rest[(i, k)] = sigmoid(p[0]);
                        -elbo(&s, &data).unwrap()
                    };
                    let (b, _) = nelder_mead(f, &[0.0], 0.5);
                    worst = worst.max((sigmoid(b[0]) - fresh.resp_rest[(i, k)]).abs());
                }
            }
        }
    }
    outcome(
        worst <= 1e-5,
        format!("max deviation from numeric optimum {worst:.2e}"),
    )
}

fn monotonicity() -> Outcome {
    let mut worst = 0.0f64;
    let mut sweeps = 0;
    for seed in SEEDS {
        let gen = HyperParams {
            latent_dim: 2,
            experts: ExpertConfig::new(2, 3.0).unwrap(),
            num_pseudo_c: 5,
            num_pseudo_z: 5,
            ..HyperParams::default()
        };
        let (data, _) = sample_dataset(&gen, 50, 0, 5, 6, 100 + seed).unwrap();
        let hp = HyperParams {
            latent_dim: 2,
            experts: ExpertConfig::new(choose_num_experts(&data.labels).unwrap(), 1.0).unwrap(),
            num_pseudo_c: choose_num_pseudo(50),
            num_pseudo_z: choose_num_pseudo(50),
            ..HyperParams::default()
        };
        let mut cfg = TrainConfig::new(hp);
        cfg.seed = seed;
        cfg.propagate_pseudo = false;
        let (_, trace) = train(&data, &cfg).unwrap();
        for w in trace.windows(2) {
            sweeps += 1;
            worst = worst.max((w[0] - w[1]) / w[0].abs());
        }
    }
    outcome(
        worst <= 1e-6,
        format!("{sweeps} sweeps, worst relative drop {worst:.2e}"),
    )
}

fn gradient_check() -> Outcome {
    let hp = HyperParams {
        latent_dim: 3,
        num_pseudo_c: 8,
        num_pseudo_z: 8,
        ..HyperParams::default()
    };
    let (data, _) = sample_dataset(&hp, 40, 0, 5, 6, 21).unwrap();
    let mut cfg = TrainConfig::new(hp);
    cfg.seed = 21;
    let mut state = init_state(&data, &cfg).unwrap();
    sweep(&mut state, &data, &cfg).unwrap();
    let rows = LatentRowModel::new(&state, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let i = rng.random_range(0..data.len());
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (_, g) = rows.objective_and_gradient(&state, i, &c);
        let h = 1e-5;
        let mut err = 0.0;
        let mut norm = 0.0;
        for d in 0..3 {
            let mut up = c.clone();
            let mut dn = c.clone();
            up[d] += h;
            dn[d] -= h;
            let fd = (rows.objective(&state, i, &up) - rows.objective(&state, i, &dn)) / (2.0 * h);
            err += (g[d] - fd).powi(2);
            norm += fd * fd;
        }
        worst = worst.max(err.sqrt() / norm.sqrt().max(1e-3));
    }
    outcome(
        worst <= 1e-5,
        format!("50 random rows, worst relative error {worst:.2e}"),
    )
}

/// The synthetic task: 300 labeled instances, F=10, L=3, K=25.
fn synthetic_task(seed: u64) -> (Dataset, Dataset) {
    let gen = HyperParams {
        latent_dim: 3,
        experts: ExpertConfig::new(3, 5.0).unwrap(),
        num_pseudo_c: choose_num_pseudo(300),
        num_pseudo_z: choose_num_pseudo(300),
        ..HyperParams::default()
    };
    let (data, _) = sample_dataset(&gen, 300, 0, 10, 25, seed).unwrap();
    let train_rows: Vec<usize> = (0..240).collect();
    let test_rows: Vec<usize> = (240..300).collect();
    (
        data.select_labeled(&train_rows),
        data.select_labeled(&test_rows),
    )
}

/// Trains with M from the pseudo-count rule and the given expert count.
fn fit(train_d: &Dataset, num_experts: usize, seed: u64) -> (esmc_core::TrainedModel, f64) {
    let m = choose_num_pseudo(train_d.len());
    let hp = HyperParams {
        latent_dim: 3,
        experts: ExpertConfig::new(num_experts, 1.0).unwrap(),
        num_pseudo_c: m,
        num_pseudo_z: m,
        ..HyperParams::default()
    };
    let mut cfg = TrainConfig::new(hp);
    cfg.seed = seed;
    let t = Instant::now();
    let (model, _) = train(train_d, &cfg).unwrap();
    (model, t.elapsed().as_secs_f64())
}

fn test_auc(model: &esmc_core::TrainedModel, test_d: &Dataset) -> f64 {
    auc(&score(model, &test_d.features).unwrap(), &test_d.labels).unwrap()
}

fn synthetic_recovery() -> Outcome {
    let mut aucs = vec![];
    let mut slowest = 0.0f64;
    for seed in SEEDS {
        let (train_d, test_d) = synthetic_task(seed);
        let b = choose_num_experts(&train_d.labels).unwrap();
        let (model, secs) = fit(&train_d, b, seed);
        slowest = slowest.max(secs);
        aucs.push(test_auc(&model, &test_d));
    }
    let med = median(aucs.clone());
    outcome(
        med >= 0.85 && slowest < 60.0,
        format!(
            "median AUC {med:?} [{}], slowest fit {slowest:.2} s",
            fmt_list(&aucs)
        ),
    )
}

fn missing_label_trend() -> Outcome {
    let (mut with_rule, mut single) = (vec![], vec![]);
    for seed in SEEDS {
        let (train_d, test_d) = synthetic_task(seed);
        let (dropped, _) = drop_labels(&train_d, 0.4, seed).unwrap();
        let b = choose_num_experts(&dropped.labels).unwrap();
        with_rule.push(test_auc(&fit(&dropped, b, seed).0, &test_d));
        single.push(test_auc(&fit(&dropped, 1, seed).0, &test_d));
    }
    let (a, b) = (median(with_rule.clone()), median(single.clone()));
    outcome(
        a >= b,
        format!(
            "median AUC rule-B {a:?} vs B=1 {b:?} [{} | {}]",
            fmt_list(&with_rule),
            fmt_list(&single)
        ),
    )
}

fn semi_supervised_trend() -> Outcome {
    let (mut semi, mut alone) = (vec![], vec![]);
    for seed in SEEDS {
        let (train_d, test_d) = synthetic_task(seed);
        let pooled = drop_instances(&train_d, 0.2, seed).unwrap();
        let labeled: Vec<usize> = (0..pooled.n_labeled()).collect();
        let subset = pooled.select_labeled(&labeled);
        let b = choose_num_experts(&subset.labels).unwrap();
        semi.push(test_auc(&fit(&pooled, b, seed).0, &test_d));
        alone.push(test_auc(&fit(&subset, b, seed).0, &test_d));
    }
    let (a, b) = (median(semi.clone()), median(alone.clone()));
    outcome(
        a >= b,
        format!(
            "median AUC with pool {a:?} vs labeled only {b:?} [{} | {}]",
            fmt_list(&semi),
            fmt_list(&alone)
        ),
    )
}

fn tail_label_contrast() -> Outcome {
    let cfg = HeadTailConfig {
        n: 1000,
        ..HeadTailConfig::default()
    };
    let (mut ours, mut linear) = (vec![], vec![]);
    for seed in SEEDS {
        let data = sample_head_tail(&cfg, seed).unwrap();
        let train_d = data.select_labeled(&(0..800).collect::<Vec<_>>());
        let test_d = data.select_labeled(&(800..1000).collect::<Vec<_>>());
        let lin = fit_linear(&train_d, 3, 1.0).unwrap();
        let s = score_linear(&lin, &test_d.features).unwrap();
        linear.push(auc_macro_over(&s, &test_d.labels, cfg.tail_range()).unwrap());
        let b = choose_num_experts(&train_d.labels).unwrap();
        let (model, _) = fit(&train_d, b, seed);
        let s = score(&model, &test_d.features).unwrap();
        ours.push(auc_macro_over(&s, &test_d.labels, cfg.tail_range()).unwrap());
    }
    let (a, b) = (median(ours.clone()), median(linear.clone()));
    outcome(
        a > b,
        format!(
            "median tail AUC {a:?} vs linear baseline {b:?} [{} | {}]",
            fmt_list(&ours),
            fmt_list(&linear)
        ),
    )
}

fn hyperparameter_rules() -> Outcome {
    let mut ok = choose_num_pseudo(5000) == 500
        && choose_num_pseudo(15000) == 150
        && choose_num_pseudo(30000) == 400;
    ok &= choose_num_pseudo(20000) == 400
        && choose_num_pseudo(9999) == 1000
        && choose_num_pseudo(10000) == 100;
    let ratio = |ones: usize, total: usize| {
        choose_num_experts(&LabelMatrix::from_fn(1, total, |_, k| k < ones)).unwrap()
    };
    ok &= ratio(10, 100) == 9
        && ratio(50, 100) == 1
        && ratio(1, 1000) == 100
        && ratio(1, 102) == 100
        && ratio(1, 101) == 100;
    ok &= ratio(1, 100) == 99 && ratio(99, 100) == 1;
    outcome(ok, "5000->500, 15000->150, 30000->400, ratio cap 100")
}

fn naive_auc(s: &DMatrix<f64>, y: &LabelMatrix) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..s.nrows() {
        let (mut wins, mut pairs) = (0.0, 0.0);
        for a in 0..s.ncols() {
            for b in 0..s.ncols() {
                if y.get(i, a) && !y.get(i, b) {
                    pairs += 1.0;
                    if s[(i, a)] > s[(i, b)] {
                        wins += 1.0;
                    } else if s[(i, a)] == s[(i, b)] {
                        wins += 0.5;
                    }
                }
            }
        }
        if pairs > 0.0 {
            total += wins / pairs;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Position (1-based) of label `k` in row `i` of the score ranking.
fn naive_rank(s: &DMatrix<f64>, i: usize, k: usize) -> usize {
    1 + (0..s.ncols())
        .filter(|&j| s[(i, j)] > s[(i, k)] || (s[(i, j)] == s[(i, k)] && j < k))
        .count()
}

fn naive_coverage(s: &DMatrix<f64>, y: &LabelMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let worst = (0..s.ncols())
            .filter(|&k| y.get(i, k))
            .map(|k| naive_rank(s, i, k))
            .max();
        total += worst.map_or(0.0, |r| (r - 1) as f64);
    }
    total / s.nrows() as f64
}

fn naive_precision(s: &DMatrix<f64>, y: &LabelMatrix, k: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let hits = (0..s.ncols())
            .filter(|&j| y.get(i, j) && naive_rank(s, i, j) <= k)
            .count();
        total += hits as f64 / k as f64;
    }
    total / s.nrows() as f64
}

fn naive_micro_f1(s: &DMatrix<f64>, y: &LabelMatrix) -> Option<f64> {
    let positives = y.count_ones();
    if positives == 0 {
        return None;
    }
    let mut best = 0.0f64;
    for &t in s.iter() {
        let (mut tp, mut pred) = (0, 0);
        for i in 0..s.nrows() {
            for k in 0..s.ncols() {
                if s[(i, k)] >= t {
                    pred += 1;
                    if y.get(i, k) {
                        tp += 1;
                    }
                }
            }
        }
        best = best.max(2.0 * tp as f64 / (pred + positives) as f64);
    }
    Some(best)
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut mismatches = 0;
    for _ in 0..100 {
        // Coarse scores so that ties are common.
        let s = DMatrix::from_fn(5, 7, |_, _| rng.random_range(0..6) as f64 / 5.0);
        let y = LabelMatrix::from_fn(5, 7, |_, _| rng.random_bool(0.3));
        match (auc(&s, &y).ok(), naive_auc(&s, &y)) {
            (a, b) if a == b => {}
            _ => mismatches += 1,
        }
        if coverage(&s, &y).unwrap() != naive_coverage(&s, &y) {
            mismatches += 1;
        }
        for k in 1..=7 {
            if precision_at_k(&s, &y, k).unwrap() != naive_precision(&s, &y, k) {
                mismatches += 1;
            }
        }
        if micro_f1_max(&s, &y).ok() != naive_micro_f1(&s, &y) {
            mismatches += 1;
        }
    }
    let lm = |rows: &[&[usize]], k| {
        LabelMatrix::from_index_lists(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>(), k)
            .unwrap()
    };
    let m = |r, v: &[f64]| DMatrix::from_row_slice(r, v.len() / r, v);
    let mut fixtures = auc(&m(1, &[0.9, 0.1, 0.8]), &lm(&[&[0]], 3)).unwrap() == 1.0;
    fixtures &= auc(&m(1, &[0.5, 0.5]), &lm(&[&[0]], 2)).unwrap() == 0.5;
    fixtures &= auc(
        &m(2, &[0.9, 0.1, 0.8, 0.5, 0.7, 0.2]),
        &lm(&[&[0], &[0]], 3),
    )
    .unwrap()
        == 0.75;
    let s = m(1, &[0.9, 0.1, 0.8, 0.2]);
    fixtures &= coverage(&s, &lm(&[&[0, 2]], 4)).unwrap() == 1.0;
    fixtures &= precision_at_k(&s, &lm(&[&[0, 1]], 4), 1).unwrap() == 1.0;
    fixtures &= precision_at_k(&s, &lm(&[&[0, 1]], 4), 3).unwrap() == 1.0 / 3.0;
    fixtures &= micro_f1_max(&m(2, &[0.9, 0.1, 0.2, 0.8]), &lm(&[&[0], &[1]], 2)).unwrap() == 1.0;
    outcome(
        mismatches == 0 && fixtures,
        format!(
            "100 random 5x7 cases, {mismatches} mismatches, hand fixtures {}",
            if fixtures { "ok" } else { "WRONG" }
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let (train_d, _) = synthetic_task(9);
    let b = choose_num_experts(&train_d.labels).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let (m1, _) = fit(&train_d, b, 9);
    let (m2, _) = fit(&train_d, b, 9);
    esmc_core::save_model(&m1, &p1).unwrap();
    esmc_core::save_model(&m2, &p2).unwrap();
    let same_bytes = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();
    let loaded = esmc_core::load_model(&p1).unwrap();
    let round_trip =
        loaded == m1 && model_to_json(&loaded, None).unwrap() == model_to_json(&m1, None).unwrap();
    let reparsed = model_from_json(&model_to_json(&m1, None).unwrap()).unwrap() == m1;
    let text = format_sparse(&train_d);
    let back = parse_sparse_str(&text).unwrap();
    let data_ok = back == train_d && format_sparse(&back) == text;
    outcome(
        same_bytes && round_trip && reparsed && data_ok,
        format!(
            "identical bytes {same_bytes}, model round trip {}, dataset round trip {data_ok}",
            round_trip && reparsed
        ),
    )
}

fn main() {
    let criteria: [Criterion; 13] = [
        ("expert-marginal exactness", expert_marginal_exactness),
        ("curve points", curve_points),
        ("bound dominance", bound_dominance),
        ("coordinate-update optimality", update_optimality),
        ("ELBO monotonicity", monotonicity),
        ("gradient correctness", gradient_check),
        ("synthetic recovery", synthetic_recovery),
        ("missing-label trend", missing_label_trend),
        ("semi-supervised trend", semi_supervised_trend),
        ("tail-label contrast", tail_label_contrast),
        ("hyperparameter rules", hyperparameter_rules),
        ("metric oracles", metric_oracles),
        ("determinism and persistence", determinism_and_persistence),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if let Some(f) = &filter {
            if !name.contains(f.as_str()) {
                continue;
            }
        }
        let t = Instant::now();
        let result = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name}: {} ({:.1} s)",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
