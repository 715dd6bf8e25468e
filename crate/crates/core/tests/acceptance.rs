//! Acceptance suite: one PASS / FAIL / BLOCKED line per criterion.
//!
//! Runs as a plain binary (`harness = false`). By default the process exits
//! 0 and the summary line carries the verdict; set `PIETSP_ACCEPTANCE_STRICT=1`
//! to exit non-zero when any criterion is not met. The real-data criteria
//! read a corpus JSON from `PIETSP_DC_CORPUS` and report BLOCKED without it.

use std::collections::HashSet;
use std::path::PathBuf;
use std::time::Instant;

use pietsp::bench::{bench_inference, linear_fit, synthetic_sample, BenchConfig, Precision, TrackingAllocator};
use pietsp::checkpoint::Checkpoint;
use pietsp::dataset::{
    gen_synthetic, load_corpus, prepare_corpus, split_users, Pattern, PreparedSample, SplitRatios, SyntheticSpec,
};
use pietsp::metrics::{ndcg_at_k, phr, rank_all, recall_at_k, top_k, MetricAccumulator};
use pietsp::model::{init_params, logits, pe_forward, pi_forward, Dims, ModelParams, Variant, SLOTS, SLOT_COUNT};
use pietsp::tensor::Matrix;
use pietsp::trainer::{
    bce_loss, evaluate, evaluate_with, fit, personal_frequency_scores, sample_gradients, TrainConfig, TrainState,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Clone, Copy, PartialEq)]
enum Verdict {
    Pass,
    Fail,
    Blocked,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn outcome(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_params(rng: &mut ChaCha8Rng, vocab: usize, dim: usize, max_len: usize) -> ModelParams {
    let mut p = init_params(vocab, dim, max_len, rng.random()).unwrap();
    for slot in p.slices_mut() {
        for x in slot.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn random_sample(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize, n_max: usize) -> PreparedSample {
    let steps = rng.random_range(1..=max_len);
    let pool: Vec<usize> = {
        let mut ids: Vec<usize> = (0..vocab).collect();
        ids.shuffle(rng);
        ids.truncate(rng.random_range(1..=n_max.min(vocab)));
        ids
    };
    let history: Vec<Vec<usize>> = (0..steps)
        .map(|_| {
            let mut set: Vec<usize> = pool.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
            if set.is_empty() {
                set.push(pool[rng.random_range(0..pool.len())]);
            }
            set
        })
        .collect();
    let target: Vec<usize> = (0..rng.random_range(1..4))
        .map(|_| rng.random_range(0..vocab))
        .collect();
    PreparedSample::from_history(&history, &target, max_len, vocab).unwrap()
}

fn random_order(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn permutation_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut pe_err, mut pi_err, mut y_err) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(1..=32);
        let k = rng.random_range(1..=16);
        let d = rng.random_range(1..=16);
        let vocab = 40;
        let p = random_params(&mut rng, vocab, d, k);

        let z = Matrix::from_vec(
            n,
            k + d,
            (0..n * (k + d)).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let order = random_order(&mut rng, n);
        let zp = z.select_rows(&order);
        let (out, _) = pe_forward(&z, &p).unwrap();
        let (out_p, _) = pe_forward(&zp, &p).unwrap();
        pe_err = pe_err.max(max_abs_diff(out.select_rows(&order).as_slice(), out_p.as_slice()));

        let zt = Matrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let (s, _) = pi_forward(&zt, &p).unwrap();
        let (s_p, _) = pi_forward(&zt.select_rows(&order), &p).unwrap();
        pi_err = pi_err.max(max_abs_diff(&s, &s_p));

        let sample = random_sample(&mut rng, vocab, k, 32);
        let order = random_order(&mut rng, sample.universe_size());
        let permuted = sample.permuted(&order);
        let y = logits(&sample.index_map, &sample.membership, &p, Variant::Full).unwrap();
        let y_p = logits(&permuted.index_map, &permuted.membership, &p, Variant::Full).unwrap();
        y_err = y_err.max(max_abs_diff(&y, &y_p));
    }
    outcome(
        pe_err <= 1e-12 && pi_err <= 1e-12 && y_err <= 1e-9,
        format!(
            "1000 instances; PE equivariance {pe_err:.1e}, PI invariance {pi_err:.1e}, output invariance {y_err:.1e}"
        ),
    )
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let h = 1e-5;
    let mut worst = (0.0f64, "");
    let mut instances = 0;
    for variant in [
        Variant::Full,
        Variant::WithoutElementEvaluator,
        Variant::WithoutGlobalEvaluator,
    ] {
        for _ in 0..4 {
            let (vocab, dim, k) = (14, rng.random_range(2..6), rng.random_range(1..5));
            let p = random_params(&mut rng, vocab, dim, k);
            let s = random_sample(&mut rng, vocab, k, 8);
            let (_, analytic) = sample_gradients(&s, &p, variant).unwrap();
            let loss = |q: &ModelParams| {
                let y = logits(&s.index_map, &s.membership, q, variant).unwrap();
                bce_loss(&y, &s.target_multi_hot(), 0.0, q).unwrap().0
            };
            for (slot, info) in SLOTS.iter().enumerate() {
                let numeric: Vec<f64> = (0..p.slices()[slot].len())
                    .map(|i| {
                        let (mut plus, mut minus) = (p.clone(), p.clone());
                        plus.slices_mut()[slot][i] += h;
                        minus.slices_mut()[slot][i] -= h;
                        (loss(&plus) - loss(&minus)) / (2.0 * h)
                    })
                    .collect();
                let a = analytic.slices()[slot];
                let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
                let scale = norm(a).max(norm(&numeric));
                let rel = if scale < 1e-12 {
                    norm(&diff)
                } else {
                    norm(&diff) / scale
                };
                if rel > worst.0 {
                    worst = (rel, info.name);
                }
            }
            instances += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.0 < 1e-5 && secs < 60.0,
        format!(
            "{instances} instances x {SLOT_COUNT} slots, 3 variants; worst relative error {:.2e} ({}); {secs:.1}s",
            worst.0, worst.1
        ),
    )
}

/// Reference metrics written without the library's ranking code.
mod oracle {
    use std::collections::HashSet;

    pub fn ranking(scores: &[f64]) -> Vec<usize> {
        let mut pairs: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        // bubble-free insertion sort keeps the oracle obviously correct
        for i in 1..pairs.len() {
            let mut j = i;
            while j > 0 {
                let (a, b) = (pairs[j - 1], pairs[j]);
                let before = b.1 > a.1 || (b.1 == a.1 && b.0 < a.0);
                if !before {
                    break;
                }
                pairs.swap(j - 1, j);
                j -= 1;
            }
        }
        pairs.into_iter().map(|(i, _)| i).collect()
    }

    pub fn recall(ranked: &[usize], truth: &HashSet<usize>, k: usize) -> f64 {
        let hits = ranked.iter().take(k).filter(|i| truth.contains(i)).count();
        hits as f64 / truth.len() as f64
    }

    pub fn ndcg(ranked: &[usize], truth: &HashSet<usize>, k: usize) -> f64 {
        let mut dcg = 0.0;
        for (pos, id) in ranked.iter().take(k).enumerate() {
            if truth.contains(id) {
                dcg += 1.0 / (pos as f64 + 2.0).log2();
            }
        }
        let mut ideal = 0.0;
        for pos in 0..truth.len().min(k) {
            ideal += 1.0 / (pos as f64 + 2.0).log2();
        }
        dcg / ideal
    }

    pub fn hit(ranked: &[usize], truth: &HashSet<usize>, k: usize) -> bool {
        ranked.iter().take(k).any(|i| truth.contains(i))
    }
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut worst = 0.0f64;
    let mut order_mismatch = 0;
    let k_list = [1, 5, 10, 20];
    let mut acc = MetricAccumulator::new(&k_list);
    let mut sums = [[0.0f64; 3]; 4];
    let mut hit_lists: Vec<Vec<bool>> = vec![Vec::new(); 4];
    for _ in 0..10_000 {
        let n = rng.random_range(1..60);
        // coarse scores force plenty of ties
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 * 0.25).collect();
        let truth_len = rng.random_range(1..=n.min(6));
        let truth_vec: Vec<usize> = {
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut rng);
            ids.truncate(truth_len);
            ids
        };
        let truth: HashSet<usize> = truth_vec.iter().copied().collect();
        let reference = oracle::ranking(&scores);
        let full = rank_all(&scores);
        if full != reference {
            order_mismatch += 1;
        }
        acc.add(&top_k(&scores, 20), &truth_vec);
        for (i, &k) in k_list.iter().enumerate() {
            let top = top_k(&scores, k);
            let r = recall_at_k(&top, &truth_vec).unwrap();
            let nd = ndcg_at_k(&top, &truth_vec, k).unwrap();
            let (ro, no) = (
                oracle::recall(&reference, &truth, k),
                oracle::ndcg(&reference, &truth, k),
            );
            worst = worst.max((r - ro).abs()).max((nd - no).abs());
            sums[i][0] += ro;
            sums[i][1] += no;
            hit_lists[i].push(oracle::hit(&reference, &truth, k));
        }
    }
    let report = acc.finish();
    for i in 0..k_list.len() {
        let oracle_phr = hit_lists[i].iter().filter(|&&h| h).count() as f64 / 10_000.0;
        worst = worst
            .max((report.recall[i] - sums[i][0] / 10_000.0).abs())
            .max((report.ndcg[i] - sums[i][1] / 10_000.0).abs())
            .max((report.phr[i] - oracle_phr).abs())
            .max((phr(&hit_lists[i]).unwrap() - oracle_phr).abs());
    }
    let rank1 = ndcg_at_k(&[4, 1, 2], &[4], 1).unwrap();
    let rank2 = ndcg_at_k(&[1, 4], &[4], 2).unwrap();
    let spots = rank1 == 1.0 && rank2 == 1.0 / 3f64.log2() && format!("{rank2:.5}") == "0.63093";
    outcome(
        worst <= 1e-12 && order_mismatch == 0 && spots,
        format!("10000 instances; max deviation {worst:.1e}; ranking mismatches {order_mismatch}; rank-1 {rank1}, rank-2 {rank2:.5}"),
    )
}

fn periodic_corpus(seed: u64) -> pietsp::dataset::Corpus {
    gen_synthetic(&SyntheticSpec {
        users: 50,
        vocab_size: 100,
        history_len: 8,
        pattern: Pattern::Periodic,
        seed,
    })
    .unwrap()
}

struct PeriodicRun {
    recall10: f64,
    phr10: f64,
    epochs: usize,
    secs: f64,
}

/// Trains on the periodic corpus with the default configuration, stopping
/// after `epoch_budget` epochs, and evaluates the best checkpoint on test users.
fn periodic_run(variant: Variant, epoch_budget: usize) -> PeriodicRun {
    let start = Instant::now();
    let cfg = TrainConfig {
        variant,
        seed: 7,
        ..TrainConfig::default()
    };
    let corpus = periodic_corpus(7);
    let split = split_users(&corpus, cfg.split, cfg.seed).unwrap();
    let max_len = split.train.max_history_len();
    let train = prepare_corpus(&split.train, max_len).unwrap();
    let val = prepare_corpus(&split.val, max_len).unwrap();
    let test = prepare_corpus(&split.test, max_len).unwrap();
    let dims = Dims {
        vocab_size: corpus.vocab_size,
        dim: cfg.dim,
        max_len,
    };
    let mut state = TrainState::new(cfg.clone(), dims).unwrap();
    while !state.finished() && state.epochs_done < epoch_budget {
        state.step_epoch(&train, &val).unwrap();
    }
    let report = evaluate(&test, &state.best_params, variant, &cfg.k_list).unwrap();
    PeriodicRun {
        recall10: report.recall_at(10).unwrap(),
        phr10: report.phr_at(10).unwrap(),
        epochs: state.epochs_done,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn learnability() -> Outcome {
    let run = periodic_run(Variant::Full, 20);
    let mut detail = format!(
        "after {} epochs: Recall@10 {:.4}, PHR@10 {:.4}, {:.2}s",
        run.epochs, run.recall10, run.phr10, run.secs
    );
    let ok = run.recall10 >= 0.99 && run.phr10 == 1.0 && run.secs < 120.0;
    if !ok {
        let long = periodic_run(Variant::Full, 100);
        detail.push_str(&format!(
            "; with the full 100-epoch budget: Recall@10 {:.4}, PHR@10 {:.4} after {} epochs",
            long.recall10, long.phr10, long.epochs
        ));
    }
    outcome(ok, detail)
}

fn dc_corpus_path() -> Option<PathBuf> {
    std::env::var_os("PIETSP_DC_CORPUS")
        .map(PathBuf::from)
        .filter(|p| p.exists())
}

struct DcRun {
    ndcg10: f64,
    recall10: f64,
    baseline_ndcg10: f64,
    epochs: usize,
    best_epoch: usize,
}

fn dc_run() -> Option<DcRun> {
    let path = dc_corpus_path()?;
    let (corpus, _) = load_corpus(&path).expect("DC corpus loads");
    let cfg = TrainConfig::default();
    let split = split_users(&corpus, SplitRatios::default(), cfg.seed).unwrap();
    let max_len = split.train.max_history_len();
    let train = prepare_corpus(&split.train, max_len).unwrap();
    let val = prepare_corpus(&split.val, max_len).unwrap();
    let test = prepare_corpus(&split.test, max_len).unwrap();
    let dims = Dims {
        vocab_size: corpus.vocab_size,
        dim: cfg.dim,
        max_len,
    };
    let fitted = fit(&train, &val, &cfg, dims).unwrap();
    let report = evaluate(&test, &fitted.best_params, cfg.variant, &cfg.k_list).unwrap();
    let baseline = evaluate_with(&test, &cfg.k_list, |s| Ok(personal_frequency_scores(s))).unwrap();
    Some(DcRun {
        ndcg10: report.ndcg_at(10).unwrap(),
        recall10: report.recall_at(10).unwrap(),
        baseline_ndcg10: baseline.ndcg_at(10).unwrap(),
        epochs: fitted.state.epochs_done,
        best_epoch: fitted.best_epoch,
    })
}

fn blocked() -> Outcome {
    Outcome {
        verdict: Verdict::Blocked,
        detail: "set PIETSP_DC_CORPUS to the converted DC corpus JSON; the corpus is not bundled".into(),
    }
}

fn real_data(run: Option<&DcRun>) -> Outcome {
    let Some(r) = run else { return blocked() };
    let in_band = (r.ndcg10 - 0.3463).abs() <= 0.025 && (r.recall10 - 0.4635).abs() <= 0.025;
    let beats_baseline = r.ndcg10 >= 1.10 * r.baseline_ndcg10;
    outcome(
        in_band || beats_baseline,
        format!(
            "nDCG@10 {:.4}, Recall@10 {:.4} (band {}); baseline nDCG@10 {:.4} ({:+.1}% relative)",
            r.ndcg10,
            r.recall10,
            if in_band { "met" } else { "missed" },
            r.baseline_ndcg10,
            100.0 * (r.ndcg10 / r.baseline_ndcg10 - 1.0)
        ),
    )
}

fn convergence(run: Option<&DcRun>) -> Outcome {
    let Some(r) = run else { return blocked() };
    outcome(
        r.epochs <= 25,
        format!("stopped after {} epochs, best epoch {}", r.epochs, r.best_epoch),
    )
}

fn mean_time(n: usize, k: usize, e: usize, d: usize, runs: usize, batch: usize) -> (f64, Option<usize>) {
    let params = init_params(e, d, k, 5).unwrap();
    let samples: Vec<PreparedSample> = (0..4).map(|i| synthetic_sample(n, k, e, 0.3, i).unwrap()).collect();
    let cfg = BenchConfig {
        runs,
        batch_size: batch,
        precision: Precision::F32,
        workers: 1,
    };
    let r = bench_inference(&samples, &params, Variant::Full, &cfg, "grid").unwrap();
    (r.mean_sample_time_s, r.peak_heap_bytes)
}

fn complexity_scaling() -> Outcome {
    let grid: Vec<usize> = (6..=12).map(|p| 1usize << p).collect();
    let (e, d) = (8192, 32);
    let xs: Vec<f64> = grid.iter().map(|&v| v as f64).collect();
    let n_times: Vec<f64> = grid.iter().map(|&n| mean_time(n, 16, e, d, 12, 8).0).collect();
    let k_times: Vec<f64> = grid.iter().map(|&k| mean_time(64, k, e, d, 12, 8).0).collect();
    let (_, _, r2_n) = linear_fit(&xs, &n_times);
    let (_, _, r2_k) = linear_fit(&xs, &k_times);
    let (t_small, mem_small) = mean_time(256, 16, 4096, d, 40, 16);
    let (t_large, mem_large) = mean_time(256, 16, 8192, d, 40, 16);
    let ratio = t_large / t_small;
    let mem_ratio = match (mem_small, mem_large) {
        (Some(a), Some(b)) if a > 0 => b as f64 / a as f64,
        _ => f64::NAN,
    };
    outcome(
        r2_n >= 0.95 && r2_k >= 0.95 && ratio <= 2.4,
        format!(
            "R² in N {r2_n:.4}, R² in K {r2_k:.4} over 64..4096; |E| 4096→8192 time x{ratio:.2}, peak heap x{mem_ratio:.2}"
        ),
    )
}

fn ablation_direction() -> Outcome {
    let full = periodic_run(Variant::Full, 100).recall10;
    let no_ee = periodic_run(Variant::WithoutElementEvaluator, 100).recall10;
    let no_ge = periodic_run(Variant::WithoutGlobalEvaluator, 100).recall10;
    outcome(
        full >= no_ee && no_ee >= no_ge,
        format!("Recall@10: full {full:.4}, without EE {no_ee:.4}, without GE {no_ge:.4}"),
    )
}

fn determinism_and_persistence() -> Outcome {
    let corpus = periodic_corpus(11);
    let cfg = TrainConfig {
        seed: 11,
        max_epochs: 6,
        patience: 6,
        ..TrainConfig::default()
    };
    let split = split_users(&corpus, cfg.split, cfg.seed).unwrap();
    let max_len = split.train.max_history_len();
    let train = prepare_corpus(&split.train, max_len).unwrap();
    let val = prepare_corpus(&split.val, max_len).unwrap();
    let dims = Dims {
        vocab_size: corpus.vocab_size,
        dim: cfg.dim,
        max_len,
    };

    let a = fit(&train, &val, &cfg, dims).unwrap();
    let b = fit(&train, &val, &cfg, dims).unwrap();
    let ck_a = Checkpoint::from_state(&a.state).to_json().unwrap();
    let ck_b = Checkpoint::from_state(&b.state).to_json().unwrap();
    let identical = ck_a == ck_b;

    let restored = Checkpoint::from_json(&ck_a).unwrap().train_state().unwrap();
    let round_trip = restored
        .params
        .slices()
        .iter()
        .zip(a.state.params.slices())
        .all(|(x, y)| x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
        && restored.opt == a.state.opt;

    let mut first = TrainState::new(cfg.clone(), dims).unwrap();
    for _ in 0..3 {
        first.step_epoch(&train, &val).unwrap();
    }
    let saved = Checkpoint::from_state(&first).to_json().unwrap();
    let mut resumed = Checkpoint::from_json(&saved).unwrap().train_state().unwrap();
    resumed.run(&train, &val).unwrap();
    let resume_err = resumed
        .params
        .slices()
        .iter()
        .zip(a.state.params.slices())
        .map(|(x, y)| max_abs_diff(x, y))
        .fold(0.0, f64::max);

    outcome(
        identical && round_trip && resume_err <= 1e-12,
        format!("two runs identical: {identical}; round trip bit-exact: {round_trip}; resume vs uninterrupted max diff {resume_err:.1e}"),
    )
}

fn main() {
    let strict = std::env::var("PIETSP_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let dc = dc_run();
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let criteria: Vec<(&str, Check)> = vec![
        ("permutation properties", Box::new(permutation_properties)),
        ("gradient correctness", Box::new(gradient_correctness)),
        ("metric oracles", Box::new(metric_oracles)),
        ("learnability on periodic data", Box::new(learnability)),
        ("real-data reproduction (DC)", Box::new(|| real_data(dc.as_ref()))),
        ("convergence speed (DC)", Box::new(|| convergence(dc.as_ref()))),
        ("complexity scaling", Box::new(complexity_scaling)),
        ("ablation direction", Box::new(ablation_direction)),
        ("determinism and persistence", Box::new(determinism_and_persistence)),
    ];
    let mut passed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = match o.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Blocked => "BLOCKED",
        };
        passed += usize::from(o.verdict == Verdict::Pass);
        println!("[{tag}] criterion {}: {name}: {}", i + 1, o.detail);
    }
    println!("acceptance: {passed}/{} criteria met", criteria.len());
    if strict && passed != criteria.len() {
        std::process::exit(1);
    }
}
