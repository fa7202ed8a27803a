//! End-to-end acceptance suite. Runs every criterion sequentially inside
//! one test (criterion 8 mutates ATTNMIL_THREADS, so the criteria must
//! not run concurrently) and prints one pass/fail line per criterion.
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! lines on success.

use std::cell::RefCell;
use std::time::{Duration, Instant};

use attnmil::dataset::{
    fit_standardizer, generate_synthetic, Bag, Instance, Label, MilDataset, SyntheticSpec,
};
use attnmil::eval::{
    compare_reports, oversample_negative_bags, roc_auc, run_crossval, wilcoxon_signed_rank,
    CrossvalOptions, EvalReport, RocPoint, SizePolicy,
};
use attnmil::models::{
    attention_pool, attn_mil_forward, bag_loss_gradient, bce_loss, predict_bag,
    train_attention_mil, train_minet, train_misvm, AttentionMilModel, AttentionParams, Method,
    TrainConfig,
};
use attnmil::nncore::{grad_check, Mode};
use attnmil::persist::{load_model, save_model, ModelKind, TrainedBundle};
use attnmil::rng::Rng;

fn random_bag(rng: &mut Rng, dim: usize, k: usize, label: Label) -> Bag {
    let instances = (0..k)
        .map(|_| Instance {
            features: (0..dim).map(|_| rng.next_gaussian()).collect(),
        })
        .collect();
    Bag {
        bag_id: "b".into(),
        label,
        instances,
        padding: vec![false; k],
        witness: None,
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        hidden_dims: vec![8],
        embed_dim: 6,
        attention_dim: 4,
        dropout_rate: 0.0,
        ..TrainConfig::default()
    }
}

// 1. Analytic gradients match central finite differences on >= 10 random
//    small attention models (dropout off), max relative error < 1e-4,
//    in under 30 seconds.
fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..10u64 {
        let mut rng = Rng::from_seed(100 + seed);
        let dim = 4 + (seed as usize % 13).min(12); // D <= 16
        let cfg = TrainConfig {
            hidden_dims: vec![8],
            embed_dim: 2 + (seed as usize % 7), // M <= 8
            attention_dim: 4,
            dropout_rate: 0.0,
            ..TrainConfig::default()
        };
        let model = AttentionMilModel::init(dim, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let k = 1 + (seed as usize % 5);
        let label = if seed % 2 == 0 { Label::Positive } else { Label::Negative };
        let bag = random_bag(&mut rng, dim, k, label);
        let (_, analytic) = bag_loss_gradient(&model, &bag, label).map_err(|e| e.to_string())?;
        let params = model.flatten_params();
        let probe = RefCell::new(model.clone());
        let loss = |p: &[f64]| -> f64 {
            let mut m = probe.borrow_mut();
            m.set_params(p);
            let mut r = Rng::from_seed(0);
            let (prob, _) = attn_mil_forward(&m, &bag, Mode::Infer, &mut r).unwrap();
            bce_loss(prob, label.as_u8()).0
        };
        let report = grad_check(&loss, &params, &analytic, 1e-5);
        worst = worst.max(report.max_rel_err);
        if report.max_rel_err >= 1e-4 {
            return Err(format!(
                "seed {seed}: max rel err {:.3e} at param {}",
                report.max_rel_err, report.worst_index
            ));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(30) {
        return Err(format!("took {elapsed:.1?} (> 30 s)"));
    }
    Ok(format!("worst rel err {worst:.3e}, {elapsed:.1?}"))
}

// 2. Attention weights over 1000 random bags: non-negative, sum to 1
//    within 1e-9; permuting instances permutes alpha and moves the
//    probability by < 1e-12.
fn criterion_2() -> Result<String, String> {
    let mut rng = Rng::from_seed(200);
    let m = 5;
    for i in 0..1000 {
        let params = AttentionParams::init(4, m, &mut rng);
        let k = rng.next_range(1, 12);
        let embeddings: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..m).map(|_| rng.next_gaussian()).collect())
            .collect();
        let (_, alphas) = attention_pool(&embeddings, &params).map_err(|e| e.to_string())?;
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("bag {i}: alpha sum {sum}"));
        }
        if alphas.iter().any(|&a| a < 0.0) {
            return Err(format!("bag {i}: negative alpha"));
        }
    }
    // permutation invariance through the full model
    let cfg = small_config();
    for seed in 0..50u64 {
        let mut rng = Rng::from_seed(250 + seed);
        let dim = 6;
        let model = AttentionMilModel::init(dim, &cfg, &mut rng).map_err(|e| e.to_string())?;
        let k = rng.next_range(2, 8);
        let bag = random_bag(&mut rng, dim, k, Label::Positive);
        let (p, _, report) = predict_bag(&model, &bag).map_err(|e| e.to_string())?;
        let mut perm: Vec<usize> = (0..k).collect();
        rng.shuffle(&mut perm);
        let permuted = Bag {
            instances: perm.iter().map(|&i| bag.instances[i].clone()).collect(),
            ..bag.clone()
        };
        let (p2, _, report2) = predict_bag(&model, &permuted).map_err(|e| e.to_string())?;
        if (p - p2).abs() >= 1e-12 {
            return Err(format!("seed {seed}: probability moved by {:.3e}", (p - p2).abs()));
        }
        for (slot, &src) in perm.iter().enumerate() {
            if (report2.weights[slot] - report.weights[src]).abs() >= 1e-12 {
                return Err(format!("seed {seed}: alpha not permuted at slot {slot}"));
            }
        }
    }
    Ok("1000 bags normalized, 50 permutations stable".into())
}

fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

// 3. Pair-rule AUC equals trapezoidal ROC area within 1e-12 on 100
//    random tied score sets of size 200; hand case returns 0.75 exactly.
fn criterion_3() -> Result<String, String> {
    let mut rng = Rng::from_seed(300);
    for i in 0..100 {
        let n = 200;
        // quantize to one decimal so ties are guaranteed
        let scores: Vec<f64> = (0..n)
            .map(|_| (rng.next_f64() * 10.0).round() / 10.0)
            .collect();
        let mut truth: Vec<u8> = (0..n).map(|_| (rng.next_f64() < 0.4) as u8).collect();
        truth[0] = 0;
        truth[1] = 1;
        let (auc, points) = roc_auc(&scores, &truth)
            .map_err(|e| e.to_string())?
            .ok_or("AUC undefined")?;
        let area = trapezoid_area(&points);
        if (auc - area).abs() > 1e-12 {
            return Err(format!("set {i}: pair-rule {auc} vs trapezoid {area}"));
        }
    }
    let (auc, _) = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1])
        .map_err(|e| e.to_string())?
        .ok_or("AUC undefined")?;
    if auc != 0.75 {
        return Err(format!("hand case: {auc} != 0.75"));
    }
    Ok("100 tied sets match trapezoid, hand case 0.75".into())
}

// Independent oracle: exhaustive sign-flip enumeration with f64 midranks.
fn wilcoxon_oracle(a: &[f64], b: &[f64]) -> Option<f64> {
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let m = diffs.len();
    if m == 0 {
        return Some(1.0);
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| diffs[i].abs().partial_cmp(&diffs[j].abs()).unwrap());
    let mut ranks = vec![0.0; m];
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && diffs[order[j + 1]].abs() == diffs[order[i]].abs() {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let w_plus: f64 = (0..m).filter(|&i| diffs[i] > 0.0).map(|i| ranks[i]).sum();
    let w_minus: f64 = (0..m).filter(|&i| diffs[i] < 0.0).map(|i| ranks[i]).sum();
    let w_obs = w_plus.min(w_minus);
    let total: f64 = ranks.iter().sum();
    let mut count = 0u64;
    for mask in 0u64..(1 << m) {
        let wp: f64 = (0..m).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if wp.min(total - wp) <= w_obs {
            count += 1;
        }
    }
    Some(count as f64 / (1u64 << m) as f64)
}

// 4. Exact Wilcoxon p equals exhaustive enumeration on 50 random paired
//    samples (m <= 12); identical pairs give 1.0; swap symmetry holds.
fn criterion_4() -> Result<String, String> {
    let mut rng = Rng::from_seed(400);
    for i in 0..50 {
        let n = rng.next_range(3, 12);
        // coarse grid so zero and tied differences occur
        let a: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 6.0).round() / 2.0).collect();
        let b: Vec<f64> = (0..n).map(|_| (rng.next_f64() * 6.0).round() / 2.0).collect();
        let p = wilcoxon_signed_rank(&a, &b).map_err(|e| e.to_string())?;
        let expected = wilcoxon_oracle(&a, &b).unwrap();
        if p != expected {
            return Err(format!("sample {i}: p {p} vs enumeration {expected}"));
        }
        let swapped = wilcoxon_signed_rank(&b, &a).map_err(|e| e.to_string())?;
        if swapped != p {
            return Err(format!("sample {i}: swap changed p {p} -> {swapped}"));
        }
    }
    let same = vec![0.3, 0.5, 0.9, 0.1];
    let p = wilcoxon_signed_rank(&same, &same).map_err(|e| e.to_string())?;
    if p != 1.0 {
        return Err(format!("identical pairs: p {p} != 1.0"));
    }
    Ok("50 samples match 2^m enumeration".into())
}

// 5. Paper-shaped synthetic benchmark: 110 bags (82/28), witness shift
//    2.0, D=103, lr 1e-4, 500 epochs, 5x5-fold -> mean AUC >= 0.90 and
//    the planted witness takes the maximal alpha in >= 80% of correctly
//    classified positive test bags. Under 5 minutes single-threaded.
fn criterion_5() -> Result<String, String> {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticSpec {
        n_pos: 82,
        n_neg: 28,
        feature_dim: 103,
        witness_shift: 2.0,
        n_signal_dims: 30,
        seed: 42,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default(); // lr 1e-4, 500 epochs, standardize
    let options = CrossvalOptions {
        repetitions: 5,
        k: 5,
        master_seed: 7,
        size_policy: SizePolicy::Empirical,
    };
    let report =
        run_crossval(&ds, Method::AttentionMil, &cfg, &options).map_err(|e| e.to_string())?;
    let auc = report
        .summary(false)
        .into_iter()
        .find(|s| s.metric == "auc")
        .and_then(|s| s.mean)
        .ok_or("mean AUC undefined")?;
    if auc < 0.90 {
        return Err(format!("mean AUC {auc:.3} < 0.90"));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for pred in &report.predictions {
        if pred.true_label != 1 || pred.predicted_label != 1 {
            continue;
        }
        let bag = ds.bags.iter().find(|b| b.bag_id == pred.bag_id).unwrap();
        let alphas = pred.attention.as_ref().ok_or("missing attention weights")?;
        let argmax = alphas
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        total += 1;
        if Some(argmax) == bag.witness {
            hits += 1;
        }
    }
    let frac = hits as f64 / total as f64;
    if frac < 0.80 {
        return Err(format!(
            "witness top-alpha in {:.1}% of {total} bags (< 80%)",
            frac * 100.0
        ));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(300) {
        return Err(format!("took {elapsed:.1?} (> 5 min)"));
    }
    Ok(format!(
        "mean AUC {auc:.3}, witness top-alpha {:.1}% ({total} bags), {elapsed:.0?}",
        frac * 100.0
    ))
}

// 6. Oversampling direction: on 20%-negative synthetic data, paired runs
//    with S=24 vs S=0 over 20 repetitions give the higher mean AUC to
//    oversampling in >= 15 repetitions with Wilcoxon p < 0.05. Under 15
//    minutes.
fn criterion_6() -> Result<String, String> {
    let start = Instant::now();
    let ds = generate_synthetic(&SyntheticSpec {
        n_pos: 32,
        n_neg: 8,
        feature_dim: 20,
        witness_shift: 1.0,
        n_signal_dims: 3,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .map_err(|e| e.to_string())?;
    let options = CrossvalOptions {
        repetitions: 20,
        k: 4,
        master_seed: 3,
        size_policy: SizePolicy::Empirical,
    };
    let run = |s: usize| -> Result<EvalReport, String> {
        let cfg = TrainConfig {
            epochs: 200,
            oversample_count: s,
            ..TrainConfig::default()
        };
        run_crossval(&ds, Method::AttentionMil, &cfg, &options).map_err(|e| e.to_string())
    };
    let with = run(24)?;
    let without = run(0)?;
    let va = with.repetition_values("auc");
    let vb = without.repetition_values("auc");
    let mut wins = 0usize;
    for (a, b) in va.iter().zip(&vb) {
        if let (Some(a), Some(b)) = (a, b) {
            if a > b {
                wins += 1;
            }
        }
    }
    if wins < 15 {
        return Err(format!("oversampling won only {wins}/20 repetitions"));
    }
    let comparisons = compare_reports(&with, &without).map_err(|e| e.to_string())?;
    let auc_cmp = comparisons.iter().find(|c| c.metric == "auc").unwrap();
    let p = auc_cmp.p_value.ok_or("AUC p-value undefined")?;
    if p >= 0.05 {
        return Err(format!("Wilcoxon p {p:.4} >= 0.05"));
    }
    if auc_cmp.direction != "a" {
        return Err(format!("direction {} (expected oversampled run)", auc_cmp.direction));
    }
    let elapsed = start.elapsed();
    if elapsed > Duration::from_secs(900) {
        return Err(format!("took {elapsed:.1?} (> 15 min)"));
    }
    Ok(format!("oversampling won {wins}/20 repetitions, p {p:.1e}, {elapsed:.0?}"))
}

fn tiny_dataset() -> MilDataset {
    generate_synthetic(&SyntheticSpec {
        n_pos: 16,
        n_neg: 9,
        feature_dim: 5,
        bag_size_range: (1, 4),
        witness_shift: 2.0,
        n_signal_dims: 2,
        seed: 5,
    })
    .unwrap()
}

// 7. Counting checks: 20x5 crossval emits exactly 100 fold records;
//    oversampling an 88-bag fold with S=60 yields 148 training bags; no
//    synthetic bag reaches a test fold.
fn criterion_7() -> Result<String, String> {
    let ds = tiny_dataset();
    let cfg = TrainConfig {
        epochs: 1,
        oversample_count: 6,
        ..TrainConfig::default()
    };
    let options = CrossvalOptions {
        repetitions: 20,
        k: 5,
        master_seed: 1,
        size_policy: SizePolicy::Empirical,
    };
    let report =
        run_crossval(&ds, Method::AttentionMil, &cfg, &options).map_err(|e| e.to_string())?;
    if report.records.len() != 100 {
        return Err(format!("{} fold records (expected 100)", report.records.len()));
    }
    if let Some(p) = report
        .predictions
        .iter()
        .find(|p| p.bag_id.starts_with("synthetic:"))
    {
        return Err(format!("synthetic bag {} scored in a test fold", p.bag_id));
    }
    // an 88-bag training fold plus 60 synthetic negatives
    let fold = generate_synthetic(&SyntheticSpec {
        n_pos: 66,
        n_neg: 22,
        feature_dim: 5,
        bag_size_range: (1, 4),
        witness_shift: 2.0,
        n_signal_dims: 2,
        seed: 6,
    })
    .map_err(|e| e.to_string())?;
    let mut rng = Rng::from_seed(8);
    let grown = oversample_negative_bags(&fold.bags, 60, SizePolicy::Empirical, &mut rng)
        .map_err(|e| e.to_string())?;
    if grown.len() != 148 {
        return Err(format!("{} training bags after S=60 (expected 148)", grown.len()));
    }
    Ok("100 records, 88+60=148 bags, test folds clean".into())
}

// 8. Determinism: identical config and master seed give byte-identical
//    report files regardless of ATTNMIL_THREADS.
fn criterion_8() -> Result<String, String> {
    let ds = tiny_dataset();
    let cfg = TrainConfig {
        epochs: 2,
        oversample_count: 4,
        ..TrainConfig::default()
    };
    let options = CrossvalOptions {
        repetitions: 3,
        k: 5,
        master_seed: 9,
        size_policy: SizePolicy::Empirical,
    };
    let render = |report: &EvalReport| {
        format!(
            "{}{}{}{}",
            report.records_csv(),
            report.summary_csv(),
            report.predictions_csv(),
            report.roc_csv()
        )
    };
    let mut outputs = Vec::new();
    for threads in ["1", "4", "3"] {
        std::env::set_var("ATTNMIL_THREADS", threads);
        let report =
            run_crossval(&ds, Method::AttentionMil, &cfg, &options).map_err(|e| e.to_string())?;
        outputs.push(render(&report));
    }
    std::env::remove_var("ATTNMIL_THREADS");
    if outputs.iter().any(|o| *o != outputs[0]) {
        return Err("reports differ across thread counts".into());
    }
    Ok("byte-identical across 1/3/4 worker threads".into())
}

// 9. Persistence round-trip: save -> load -> predict matches in-memory
//    predictions within 1e-15 for all three model kinds.
fn criterion_9() -> Result<String, String> {
    let ds = tiny_dataset();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let standardizer = fit_standardizer(&ds.bags).map_err(|e| e.to_string())?;

    let (attn, _) = train_attention_mil(&ds.bags, &cfg).map_err(|e| e.to_string())?;
    let (minet, _) = train_minet(&ds.bags, &cfg).map_err(|e| e.to_string())?;
    let mut rng = Rng::from_seed(cfg.seed);
    let svm = train_misvm(&ds.bags, cfg.svm_lambda, cfg.svm_inner_epochs, cfg.svm_max_outer_iters, &mut rng)
        .map_err(|e| e.to_string())?;

    let bundles = [
        TrainedBundle {
            model: ModelKind::AttentionMil(attn),
            standardizer: Some(standardizer),
            pad_to: None,
        },
        TrainedBundle {
            model: ModelKind::MiNet(minet),
            standardizer: None,
            pad_to: Some(4),
        },
        TrainedBundle {
            model: ModelKind::MiSvm(svm),
            standardizer: None,
            pad_to: None,
        },
    ];
    for (i, bundle) in bundles.iter().enumerate() {
        let path = dir.path().join(format!("model{i}.txt"));
        save_model(bundle, &path).map_err(|e| e.to_string())?;
        let loaded = load_model(&path).map_err(|e| e.to_string())?;
        for bag in &ds.bags {
            let (s0, l0, _) = bundle.predict(bag).map_err(|e| e.to_string())?;
            let (s1, l1, _) = loaded.predict(bag).map_err(|e| e.to_string())?;
            if (s0 - s1).abs() > 1e-15 || l0 != l1 {
                return Err(format!(
                    "{}: score {s0} vs {s1} on {}",
                    bundle.model.kind_name(),
                    bag.bag_id
                ));
            }
        }
    }
    Ok("all three kinds round-trip within 1e-15".into())
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Result<String, String>); 9] = [
        ("gradient correctness", criterion_1),
        ("attention normalization", criterion_2),
        ("AUC oracle equivalence", criterion_3),
        ("Wilcoxon correctness", criterion_4),
        ("synthetic benchmark", criterion_5),
        ("oversampling direction", criterion_6),
        ("counting checks", criterion_7),
        ("determinism", criterion_8),
        ("persistence round-trip", criterion_9),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} ({name}): pass — {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("criterion {} ({name}): FAIL — {detail}", i + 1);
            }
        }
    }
    assert_eq!(failures, 0, "{failures} acceptance criteria failed");
}
