//! Acceptance suite. Runs as a plain binary so that every criterion reports a
//! single PASS/FAIL line; the process exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use coldbias_core::analysis::concentration;
use coldbias_core::coldgen::{mlp_loss_and_gradient, Activation, MlpParams};
use coldbias_core::data::{cosine, load_interactions, norm, read_matrix, write_emb, FeatureMatrix, InteractionTable};
use coldbias_core::data::emb::{decode_emb, encode_emb};
use coldbias_core::experiment::{run_pipeline, ExperimentConfig, PipelineOutcome};
use coldbias_core::metrics::{evaluate, gini_diversity, mdg_aggregates, mdg_at_k, ndcg_at_k, recall_at_k, ItemMdgTable};
use coldbias_core::mitigate::{mean_std, normalize_to, scale_embeddings};
use coldbias_core::ranking::{
    prediction_counts, rank_of_item, rank_topk, rank_topk_serial, Exclusions, RankedList, RankingLog, ScoredItem,
};
use coldbias_core::warm::{bpr_gradient, bpr_objective, FactorModel, Triple};
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn scaling_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mu_w = 1.7;
    let vectors: Vec<FeatureMatrix> = (0..10_000)
        .map(|_| {
            let d = rng.random_range(1..=64);
            let magnitude = 10f64.powf(rng.random_range(-3.0..3.0));
            let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = norm(&v);
            v.iter_mut().for_each(|x| *x *= magnitude / n);
            FeatureMatrix::from_vec(1, d, v).unwrap()
        })
        .collect();
    let before: Vec<f64> = vectors.iter().map(|v| norm(v.row(0))).collect();
    let (_, std_before) = mean_std(&before);
    let mut worst_mag: f64 = 0.0;
    for alpha in [0.5, 1.0, 2.0, 5.0] {
        let mut after = Vec::with_capacity(vectors.len());
        for (v, &m) in vectors.iter().zip(&before) {
            let s = scale_embeddings(v, mu_w, alpha).map_err(|e| e.to_string())?;
            let got = norm(s.row(0));
            let want = (m + alpha * mu_w) / (1.0 + alpha);
            let rel = (got - want).abs() / want;
            worst_mag = worst_mag.max(rel);
            ensure(rel < 1e-6, || format!("alpha {alpha}: magnitude {got} vs {want}"))?;
            let c = cosine(v.row(0), s.row(0));
            ensure((c - 1.0).abs() < 1e-9, || format!("alpha {alpha}: cosine {c}"))?;
            after.push(got);
        }
        let (_, std_after) = mean_std(&after);
        let factor = std_after / std_before;
        let want = 1.0 / (1.0 + alpha);
        ensure(((factor - want) / want).abs() < 1e-9, || {
            format!("alpha {alpha}: std factor {factor} vs {want}")
        })?;
    }
    Ok(format!("10000 vectors x 4 alphas, worst magnitude rel err {worst_mag:.1e}"))
}

fn limit_behavior() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let users = random_matrix(&mut rng, 200, 16, 1.0);
    let mut cold = random_matrix(&mut rng, 500, 16, 1.0);
    // spread magnitudes so that the limits actually change the rankings
    for r in 0..cold.rows() {
        let s = 10f64.powf(rng.random_range(-1.0..1.0));
        cold.row_mut(r).iter_mut().for_each(|x| *x *= s);
    }
    let warm = random_matrix(&mut rng, 300, 16, 1.0);
    let mu_w = coldbias_core::warm_mean_magnitude(&warm).map_err(|e| e.to_string())?;
    let pool: Vec<usize> = (0..500).collect();
    let ids: Vec<usize> = (0..200).collect();
    let rank = |items: &FeatureMatrix, k| rank_topk(&users, items, &pool, &ids, k, None).map_err(|e| e.to_string());
    let mut changed = 0;
    for k in [20, 50] {
        let raw = rank(&cold, k)?;
        let zero = rank(&scale_embeddings(&cold, mu_w, 0.0).map_err(|e| e.to_string())?, k)?;
        ensure(raw == zero, || format!("k {k}: alpha 0 changed the lists"))?;
        let huge = rank(&scale_embeddings(&cold, mu_w, 1e9).map_err(|e| e.to_string())?, k)?;
        let normalized = rank(&normalize_to(&cold, mu_w), k)?;
        for (a, b) in huge.lists().iter().zip(normalized.lists()) {
            ensure(a.items() == b.items(), || format!("k {k}: alpha 1e9 differs from normalized"))?;
        }
        changed += raw.lists().iter().zip(huge.lists()).filter(|(a, b)| a.items() != b.items()).count();
    }
    Ok(format!("200 users x 500 items at k 20 and 50; {changed} lists move between the limits"))
}

fn metric_oracles() -> Check {
    ensure((ndcg_at_k(&[7, 3], &[3], 20) - 0.63093).abs() < 1e-5, || "hand NDCG".into())?;
    ensure(gini_diversity(&[0, 0, 0, 4]).map_err(|e| e.to_string())? == 0.25, || "hand Gini".into())?;
    ensure(mdg_at_k(&[1, 3], 20).map_err(|e| e.to_string())? == 0.75, || "hand MDG".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(103);
    for case in 0..1000 {
        let nu = rng.random_range(1..=10);
        let ni = rng.random_range(1..=10);
        let (u, v) = if case % 2 == 0 {
            (tie_heavy_matrix(&mut rng, nu, 3), tie_heavy_matrix(&mut rng, ni, 3))
        } else {
            (random_matrix(&mut rng, nu, 3, 1.0), random_matrix(&mut rng, ni, 3, 1.0))
        };
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for a in 0..nu {
            for b in 0..ni {
                if rng.random_bool(0.3) {
                    pairs.push((a, b));
                }
            }
        }
        if pairs.is_empty() {
            pairs.push((rng.random_range(0..nu), rng.random_range(0..ni)));
        }
        let holdout = InteractionTable::new(nu, ni, pairs).map_err(|e| e.to_string())?;
        let k = rng.random_range(1..=ni + 1);
        let pool: Vec<usize> = (0..ni).collect();
        let users: Vec<usize> = (0..nu).collect();
        let log = rank_topk(&u, &v, &pool, &users, k, None).map_err(|e| e.to_string())?;
        let ev = evaluate(&log, &holdout, k).map_err(|e| e.to_string())?;

        let relevant = holdout.user_items();
        let (mut nd, mut rc, mut n) = (0.0, 0.0, 0);
        let mut item_ranks: Vec<Vec<usize>> = vec![Vec::new(); ni];
        let mut counts = vec![0u64; ni];
        for a in 0..nu {
            let order: Vec<usize> = full_sort(u.row(a), &v, &pool, &[]).iter().map(|x| x.0).collect();
            for &i in order.iter().take(k) {
                counts[i] += 1;
            }
            if relevant[a].is_empty() {
                continue;
            }
            let (o_nd, o_rc) = (ndcg_oracle(&order, &relevant[a], k), recall_oracle(&order, &relevant[a], k));
            ensure(close(ndcg_at_k(&order, &relevant[a], k), o_nd, 1e-9), || format!("case {case}: ndcg"))?;
            ensure(close(recall_at_k(&order, &relevant[a], k), o_rc, 1e-9), || format!("case {case}: recall"))?;
            nd += o_nd;
            rc += o_rc;
            n += 1;
            for &i in &relevant[a] {
                item_ranks[i].push(order.iter().position(|&x| x == i).unwrap() + 1);
            }
        }
        let mut mdgs = Vec::new();
        for ranks in item_ranks.iter().filter(|r| !r.is_empty()) {
            let o = mdg_oracle(ranks, k);
            ensure(close(mdg_at_k(ranks, k).map_err(|e| e.to_string())?, o, 1e-9), || format!("case {case}: mdg"))?;
            mdgs.push(o);
        }
        let (lo, hi, all) = mdg_aggregates_oracle(&mdgs);
        let table = ItemMdgTable { items: (0..mdgs.len()).collect(), target_users: vec![1; mdgs.len()], mdg: mdgs };
        let agg = mdg_aggregates(&table).map_err(|e| e.to_string())?;
        let x = ev.values;
        let pairs_to_check = [
            ("ndcg", x.ndcg, nd / n as f64),
            ("recall", x.recall, rc / n as f64),
            ("min80", x.mdg_min80, lo),
            ("max5", x.mdg_max5, hi),
            ("all", x.mdg_all, all),
            ("min80 direct", agg.min80, lo),
            ("max5 direct", agg.max5, hi),
            ("gini", x.gini_div, gini_diversity_oracle(&counts)),
        ];
        for (name, got, want) in pairs_to_check {
            ensure(close(got, want, 1e-9), || format!("case {case}: {name} {got} vs {want}"))?;
        }
    }
    Ok("1000 instances plus the three hand examples".into())
}

fn ranking_engine() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let threads = rayon::ThreadPoolBuilder::new().num_threads(4).build().map_err(|e| e.to_string())?;
    for case in 0..500 {
        let nu = rng.random_range(1..=100);
        let ni = rng.random_range(1..=100);
        let d = rng.random_range(1..=8);
        let (u, v) = if case % 3 == 0 {
            (tie_heavy_matrix(&mut rng, nu, d), tie_heavy_matrix(&mut rng, ni, d))
        } else {
            (random_matrix(&mut rng, nu, d, 1.0), random_matrix(&mut rng, ni, d, 1.0))
        };
        let mut pool: Vec<usize> = (0..ni).collect();
        pool.shuffle(&mut rng);
        let excl: Vec<Vec<usize>> = (0..nu)
            .map(|_| pool.iter().copied().filter(|_| rng.random_bool(0.05)).take(pool.len() - 1).collect())
            .collect();
        let exclusions = Exclusions::from_lists(excl.clone());
        let users: Vec<usize> = (0..nu).collect();
        let k = rng.random_range(1..=ni + 3);
        let parallel = threads
            .install(|| rank_topk(&u, &v, &pool, &users, k, Some(&exclusions)))
            .map_err(|e| e.to_string())?;
        let serial = rank_topk_serial(&u, &v, &pool, &users, k, Some(&exclusions)).map_err(|e| e.to_string())?;
        ensure(parallel == serial, || format!("case {case}: threaded output differs"))?;
        for (&user, list) in serial.users().iter().zip(serial.lists()) {
            let oracle = full_sort(u.row(user), &v, &pool, &excl[user]);
            let want: Vec<usize> = oracle.iter().take(k).map(|x| x.0).collect();
            ensure(list.items() == want, || format!("case {case} user {user}: top-k differs"))?;
            let full = full_sort(u.row(user), &v, &pool, &[]);
            let target = pool[rng.random_range(0..pool.len())];
            let r = rank_of_item(u.row(user), &v, &pool, target).map_err(|e| e.to_string())?;
            let want = full.iter().position(|x| x.0 == target).unwrap() + 1;
            ensure(r == want, || format!("case {case}: rank_of_item {r} vs {want}"))?;
        }
    }
    Ok("500 matrices up to 100x100, serial == 4 threads".into())
}

fn gradient_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let d = rng.random_range(1..=4);
        let model = FactorModel {
            user_embeddings: random_matrix(&mut rng, 3, d, 1.0),
            item_embeddings: random_matrix(&mut rng, 4, d, 1.0),
        };
        let triples: Vec<Triple> = (0..6)
            .map(|_| {
                let pos = rng.random_range(0..4);
                let neg = (pos + rng.random_range(1..4)) % 4;
                Triple { user: rng.random_range(0..3), pos, neg }
            })
            .collect();
        let lambda = rng.random_range(0.0..0.1);
        let (gu, gi) = bpr_gradient(&model, &triples, lambda);
        let mut params = model.user_embeddings.as_slice().to_vec();
        params.extend_from_slice(model.item_embeddings.as_slice());
        let nu = 3 * d;
        let numeric = numeric_gradient(&params, 1e-4, |p| {
            let m = FactorModel {
                user_embeddings: FeatureMatrix::from_vec(3, d, p[..nu].to_vec()).unwrap(),
                item_embeddings: FeatureMatrix::from_vec(4, d, p[nu..].to_vec()).unwrap(),
            };
            bpr_objective(&m, &triples, lambda)
        });
        let mut analytic = gu.as_slice().to_vec();
        analytic.extend_from_slice(gi.as_slice());
        let err = relative_error(&analytic, &numeric);
        worst = worst.max(err);
        ensure(err < 1e-4, || format!("bpr case {case}: relative error {err}"))?;

        let (n, p, h, out) = (5, rng.random_range(2..6), rng.random_range(2..5), rng.random_range(1..4));
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let params = MlpParams::init(p, h, out, act, case);
        let x = random_matrix(&mut rng, n, p, 1.0);
        let y = random_matrix(&mut rng, n, out, 1.0);
        let (_, g1, g2) = mlp_loss_and_gradient(&params, &x, &y);
        let split = p * h;
        let mut theta = params.w1.as_slice().to_vec();
        theta.extend_from_slice(params.w2.as_slice());
        let numeric = numeric_gradient(&theta, 1e-5, |t| {
            let q = MlpParams {
                w1: FeatureMatrix::from_vec(p, h, t[..split].to_vec()).unwrap(),
                w2: FeatureMatrix::from_vec(h, out, t[split..].to_vec()).unwrap(),
                activation: act,
            };
            mlp_loss_and_gradient(&q, &x, &y).0
        });
        let mut analytic = g1.as_slice().to_vec();
        analytic.extend_from_slice(g2.as_slice());
        let err = relative_error(&analytic, &numeric);
        worst = worst.max(err);
        ensure(err < 1e-4, || format!("mlp case {case}: relative error {err}"))?;
    }
    Ok(format!("20 BPR + 20 MLP instances, worst relative error {worst:.1e}"))
}

struct PipelineRun {
    outcome: PipelineOutcome,
    elapsed: Duration,
    model: String,
    _dir: tempfile::TempDir,
}

fn default_pipeline() -> &'static std::result::Result<PipelineRun, String> {
    static RUN: OnceLock<std::result::Result<PipelineRun, String>> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig { out_dir: dir.path().join("out"), ..Default::default() };
        let start = Instant::now();
        let outcome = run_pipeline(&cfg).map_err(|e| e.to_string())?;
        Ok(PipelineRun { outcome, elapsed: start.elapsed(), model: cfg.encoder.tag().to_string(), _dir: dir })
    })
}

fn bias_inheritance() -> Check {
    let run = default_pipeline().as_ref().map_err(Clone::clone)?;
    let out = &run.outcome;
    let metric = |r: usize, alpha: f64| {
        out.report(r, &run.model, "test", alpha, 20)
            .map(|m| m.values)
            .ok_or_else(|| format!("no test report for run {r} alpha {alpha}"))
    };
    let mut passing = 0;
    let mut notes = Vec::new();
    for s in &out.runs {
        let base = metric(s.run, 0.0)?;
        let sel = metric(s.run, s.selected_alpha)?;
        let gini = |a| metric(s.run, a).map(|v| v.gini_div);
        let flags = [
            s.warm_magnitude_popularity > 0.5,
            s.cold_magnitude_count > 0.3,
            sel.gini_div > base.gini_div && gini(1.0)? <= gini(3.0)? && gini(3.0)? <= gini(5.0)?,
            sel.mdg_min80 > base.mdg_min80 && sel.mdg_min80 >= 1.1 * base.mdg_min80,
            sel.ndcg >= 0.9 * base.ndcg,
        ];
        if flags.iter().all(|&f| f) {
            passing += 1;
        }
        let marks: String = flags.iter().zip("abcde".chars()).map(|(&f, c)| if f { c } else { '-' }).collect();
        notes.push(format!("seed {} [{marks}] alpha {}", s.seed, s.selected_alpha));
    }
    ensure(run.elapsed < Duration::from_secs(300), || format!("pipeline took {:?}", run.elapsed))?;
    let detail = format!("{passing}/{} seeds: {}", out.runs.len(), notes.join(", "));
    ensure(passing >= 4, || detail.clone())?;
    Ok(detail)
}

fn concentration_stats() -> Check {
    // four users, k = 2, pool of five; counts 4, 3, 1, 0, 0
    let scored = |items: &[usize]| RankedList(items.iter().map(|&item| ScoredItem { item, score: 0.0 }).collect());
    let log = RankingLog::new(
        2,
        vec![10, 11, 12, 13, 14],
        vec![0, 1, 2, 3],
        vec![scored(&[10, 11]), scored(&[10, 12]), scored(&[10, 11]), scored(&[11, 10])],
    )
    .map_err(|e| e.to_string())?;
    let counts = prediction_counts(&log);
    ensure(counts.counts == [4, 3, 1, 0, 0], || format!("fixture counts {:?}", counts.counts))?;
    let c = concentration(&counts, 2, 2, 4).map_err(|e| e.to_string())?;
    ensure(c.top_n_share == 7.0 / 8.0 && c.zero_pred_items == 2 && c.total_slots == 8, || {
        format!("fixture stats {c:?}")
    })?;

    let run = default_pipeline().as_ref().map_err(Clone::clone)?;
    let mut passing = 0;
    let mut notes = Vec::new();
    for s in &run.outcome.runs {
        let (b, t) = (&s.concentration_base, &s.concentration_selected);
        if t.top_n_share < b.top_n_share && t.zero_pred_items < b.zero_pred_items {
            passing += 1;
        }
        notes.push(format!(
            "seed {} share {:.3}->{:.3} zero {}->{}",
            s.seed, b.top_n_share, t.top_n_share, b.zero_pred_items, t.zero_pred_items
        ));
    }
    let detail = format!("fixture exact; pipeline {passing}/{} seeds: {}", run.outcome.runs.len(), notes.join(", "));
    ensure(passing >= 4, || detail.clone())?;
    Ok(detail)
}

fn files_with_extension(root: &Path, ext: &str) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).into_iter().flatten().flatten() {
            let path = entry.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.extension().is_some_and(|e| e == ext) {
                found.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    found.sort();
    found
}

fn determinism() -> Check {
    let first = default_pipeline().as_ref().map_err(Clone::clone)?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = ExperimentConfig { out_dir: dir.path().join("out"), ..Default::default() };
    let second = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let (a, b) = (&first.outcome.out_dir, &second.out_dir);
    let read = |p: PathBuf| fs::read(&p).map_err(|e| format!("{}: {e}", p.display()));
    ensure(read(a.join("metrics.csv"))? == read(b.join("metrics.csv"))?, || "metrics.csv differs".into())?;
    let embs = files_with_extension(a, "emb");
    ensure(!embs.is_empty(), || "no EMB1 files written".into())?;
    ensure(embs == files_with_extension(b, "emb"), || "different EMB1 file sets".into())?;
    for rel in &embs {
        ensure(read(a.join(rel))? == read(b.join(rel))?, || format!("{} differs", rel.display()))?;
    }
    Ok(format!("metrics.csv and {} EMB1 files byte-identical", embs.len()))
}

fn format_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut shapes = vec![(0, 0), (5, 0), (0, 7), (1, 1), (1, 33)];
    while shapes.len() < 100 {
        shapes.push((rng.random_range(0..60), rng.random_range(0..40)));
    }
    for (case, &(rows, cols)) in shapes.iter().enumerate() {
        // values representable in f32, since the format stores f32
        let values: Vec<f64> = (0..rows * cols)
            .map(|_| {
                let v: f32 = rng.random_range(-1e4..1e4);
                v as f64
            })
            .collect();
        let m = FeatureMatrix::from_vec(rows, cols, values).map_err(|e| e.to_string())?;
        let bytes = encode_emb(&m).map_err(|e| e.to_string())?;
        ensure(decode_emb(&bytes).map_err(|e| e.to_string())? == m, || format!("case {case}: in-memory round trip"))?;
        let path = dir.path().join(format!("m{case}.emb"));
        write_emb(&path, &m).map_err(|e| e.to_string())?;
        let back = read_matrix(&path).map_err(|e| e.to_string())?;
        ensure(back == m, || format!("case {case} ({rows}x{cols}): file round trip"))?;
    }

    let fixture = dir.path().join("interactions.tsv");
    fs::write(
        &fixture,
        "# user\titem\nu1\ti1\nu1\ti2\n\nu2\ti1\nu1\ti1\n  # indented comment\nu3\ti3\nu2\ti1\nu3\ti2\n",
    )
    .map_err(|e| e.to_string())?;
    let loaded = load_interactions(&fixture).map_err(|e| e.to_string())?;
    let t = &loaded.table;
    ensure((t.num_users(), t.num_items(), t.len()) == (3, 3, 5), || {
        format!("fixture table {}x{} with {} pairs", t.num_users(), t.num_items(), t.len())
    })?;
    Ok("100 matrices incl. empty and single-row; fixture 3 users x 3 items, 5 pairs".into())
}

/// Id, name, check and time limit.
type Criterion = (u32, &'static str, fn() -> Check, Option<Duration>);

fn main() {
    let criteria: [Criterion; 9] = [
        (1, "scaling exactness", scaling_exactness, Some(Duration::from_secs(5))),
        (2, "limit behavior", limit_behavior, Some(Duration::from_secs(10))),
        (3, "metric oracles", metric_oracles, Some(Duration::from_secs(30))),
        (4, "ranking engine", ranking_engine, Some(Duration::from_secs(30))),
        (5, "gradient checks", gradient_checks, Some(Duration::from_secs(10))),
        (6, "bias inheritance", bias_inheritance, Some(Duration::from_secs(300))),
        (7, "concentration statistics", concentration_stats, None),
        (8, "determinism", determinism, None),
        (9, "format round trip", format_round_trip, None),
    ];
    let mut failed = 0;
    for (id, name, check, limit) in criteria {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&result, limit) {
            if elapsed > limit {
                result = Err(format!("took {elapsed:.2?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(detail) => println!("criterion {id} ({name}): PASS [{elapsed:.2?}] {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} ({name}): FAIL [{elapsed:.2?}] {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
