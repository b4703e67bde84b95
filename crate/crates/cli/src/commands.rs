//! One function per subcommand.

use std::path::{Path, PathBuf};

use coldbias_core::analysis::{
    concentration, fig1_table, fig3_table, most_predicted, neighbor_popularity, percentile_curve,
};
use coldbias_core::data::{read_matrix, write_emb, write_interactions};
use coldbias_core::experiment::{
    aggregate_reports, anchor_magnitude, compare_runs, comparison_csv, encoder_stage, evaluated_users,
    load_dataset, run_pipeline, split_stage, warm_stage, write_sidecar, DataSource, ExperimentConfig,
};
use coldbias_core::metrics::{evaluate as evaluate_log, write_item_mdg_csv, MetricValues};
use coldbias_core::mitigate::scale_embeddings;
use coldbias_core::ranking::{prediction_counts, rank_topk, read_ranking_csv, write_ranking_csv, RankingLog};
use coldbias_core::{generate_cold, Error, FactorModel, MetricReport, Result};
use serde_json::{json, Value};

use crate::workdir::*;
use crate::PoolArg;

/// The single run the stage commands reproduce: run 0 of the pipeline.
fn run_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.run_seed(0)
}

pub fn generate(cfg: &ExperimentConfig) -> Result<()> {
    if !matches!(cfg.data, DataSource::Synthetic(_)) {
        return Err(Error::Config("generate needs a synthetic data source".into()));
    }
    let dir = Workdir::open(cfg)?;
    let data = load_dataset(cfg)?;
    let tsv = dir.path(INTERACTIONS);
    write_interactions(&tsv, &data.interactions, &data.user_labels, &data.item_labels)?;

    // Reading the file back numbers items in first-seen order and drops items
    // nobody interacted with, so the feature rows are written in that order.
    let mut seen = vec![false; data.interactions.num_items()];
    let mut order = Vec::new();
    for &(_, i) in data.interactions.pairs() {
        if !seen[i] {
            seen[i] = true;
            order.push(i);
        }
    }
    let dropped = seen.len() - order.len();
    if dropped > 0 {
        log::warn!("{dropped} items without interactions are left out of the written dataset");
    }
    let features = dir.path(FEATURES);
    write_emb(&features, &data.features.select_rows(&order)?)?;
    let extra = json!({ "items": order.len(), "dropped_items": dropped });
    write_sidecar(&tsv, cfg, cfg.seed, extra.clone())?;
    write_sidecar(&features, cfg, cfg.seed, extra)?;
    log::info!(
        "wrote {} interactions over {} users and {} items",
        data.interactions.len(),
        data.interactions.num_users(),
        order.len()
    );
    Ok(())
}

pub fn split(cfg: &ExperimentConfig) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let data = dir.dataset(cfg)?;
    let splits = split_stage(cfg, &data, run_seed(cfg))?;
    let path = dir.path(SPLIT);
    write_json(&path, &splits)?;
    write_sidecar(&path, cfg, run_seed(cfg), json!({}))?;
    log::info!(
        "{} warm, {} cold-val, {} cold-test items",
        splits.warm_items.len(),
        splits.cold_val_items.len(),
        splits.cold_test_items.len()
    );
    Ok(())
}

pub fn train_warm(cfg: &ExperimentConfig) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let splits = dir.splits()?;
    let model = warm_stage(cfg, &splits, run_seed(cfg))?;
    for (name, m) in [(WARM_USERS, &model.user_embeddings), (WARM_ITEMS, &model.item_embeddings)] {
        let path = dir.path(name);
        write_emb(&path, m)?;
        write_sidecar(&path, cfg, run_seed(cfg), json!({ "rows": m.rows(), "cols": m.cols() }))?;
    }
    log::info!("trained {} warm item embeddings", model.item_embeddings.rows());
    Ok(())
}

fn warm_model(dir: &Workdir) -> Result<FactorModel> {
    Ok(FactorModel {
        user_embeddings: dir.matrix(WARM_USERS, "train-warm")?,
        item_embeddings: dir.matrix(WARM_ITEMS, "train-warm")?,
    })
}

pub fn train_cold(cfg: &ExperimentConfig) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let data = dir.dataset(cfg)?;
    let splits = dir.splits()?;
    let model = warm_model(&dir)?;
    let seed = run_seed(cfg);
    let encoder = encoder_stage(cfg, &data.features, &splits, &model, seed)?;
    let generated = generate_cold(&encoder, &data.features)?;
    let mu_w = anchor_magnitude(cfg, &splits, &model, &generated)?;

    let path = dir.path(ENCODER);
    write_json(&path, &encoder)?;
    write_sidecar(&path, cfg, seed, json!({ "kind": cfg.encoder.tag() }))?;
    for pool in [PoolArg::Val, PoolArg::Test] {
        let (items, _) = pool_of(&splits, pool);
        let path = dir.cold(pool);
        write_emb(&path, &generated.select_rows(items)?)?;
        write_sidecar(&path, cfg, seed, json!({ "pool": pool.name(), "alpha": 0.0 }))?;
    }
    let path = dir.path(ANCHOR);
    write_json(&path, &json!({ "mu_w": mu_w, "mu_source": cfg.scaling.mu_source }))?;
    write_sidecar(&path, cfg, seed, json!({}))?;
    log::info!("generated cold embeddings; warm mean magnitude {mu_w:.6}");
    Ok(())
}

pub fn scale(cfg: &ExperimentConfig, pool: PoolArg) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let cold = dir.matrix(&format!("cold_{}.emb", pool.name()), "train-cold")?;
    let mu_w = anchor(&dir)?;
    let alpha = cfg.scaling.alpha;
    if alpha == 0.0 {
        log::warn!("alpha is 0; the scaled embeddings equal the input");
    }
    let scaled = scale_embeddings(&cold, mu_w, alpha)?;
    let path = dir.scaled(pool);
    write_emb(&path, &scaled)?;
    write_sidecar(&path, cfg, run_seed(cfg), json!({ "pool": pool.name(), "alpha": alpha, "mu_w": mu_w }))?;
    log::info!("scaled {} {} embeddings with alpha {alpha}", scaled.rows(), pool.name());
    Ok(())
}

pub fn rank(cfg: &ExperimentConfig, pool: PoolArg, scaled: bool, items: Option<PathBuf>, k: Option<usize>) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let data = dir.dataset(cfg)?;
    let splits = dir.splits()?;
    let users = dir.matrix(WARM_USERS, "train-warm")?;
    let source = match items {
        Some(p) => p,
        None if scaled => dir.input(&format!("cold_{}_scaled.emb", pool.name()), "scale")?,
        None => dir.input(&format!("cold_{}.emb", pool.name()), "train-cold")?,
    };
    let (pool_items, holdout) = pool_of(&splits, pool);
    let vectors = scatter(pool_items, &read_matrix(&source)?, data.interactions.num_items())?;
    let who = evaluated_users(holdout, &splits.warm_train.user_items());
    let k = k.unwrap_or_else(|| cfg.max_k());
    let log = rank_topk(&users, &vectors, pool_items, &who, k, None)?;
    let path = dir.ranking(pool);
    write_ranking_csv(&path, &log, &data.user_labels, &data.item_labels)?;
    let extra = json!({ "pool": pool.name(), "k": k, "items": source.display().to_string() });
    write_sidecar(&path, cfg, run_seed(cfg), extra)?;
    log::info!("ranked {} items for {} users at k {k}", pool_items.len(), who.len());
    Ok(())
}

fn load_ranking(dir: &Workdir, cfg: &ExperimentConfig, pool: PoolArg, ranking: Option<PathBuf>) -> Result<RankingLog> {
    let data = dir.dataset(cfg)?;
    let splits = dir.splits()?;
    let path = match ranking {
        Some(p) => p,
        None => dir.input(&format!("ranking_{}.csv", pool.name()), "rank")?,
    };
    let (items, _) = pool_of(&splits, pool);
    read_ranking_csv(&path, &index_of(&data.user_labels), &index_of(&data.item_labels), items.to_vec())
}

fn cutoff(log: &RankingLog, k: usize) -> Result<RankingLog> {
    if k > log.k() {
        return Err(Error::Config(format!(
            "cutoff {k} exceeds the ranking depth {}; rerun `rank` with a larger --k",
            log.k()
        )));
    }
    Ok(log.truncated(k))
}

pub fn evaluate(cfg: &ExperimentConfig, pool: PoolArg, ranking: Option<PathBuf>, k: Option<usize>) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let data = dir.dataset(cfg)?;
    let splits = dir.splits()?;
    let log = load_ranking(&dir, cfg, pool, ranking)?;
    let (_, holdout) = pool_of(&splits, pool);
    let ks = k.map_or_else(|| cfg.ks.clone(), |k| vec![k]);
    let mut csv = format!("pool,k,num_users,{}\n", MetricValues::NAMES.join(","));
    let mut rows = Vec::new();
    for &k in &ks {
        let e = evaluate_log(&cutoff(&log, k)?, holdout, k)?;
        let v = e.values.to_array().map(|x| format!("{x:.6}")).join(",");
        csv.push_str(&format!("{},{k},{},{v}\n", pool.name(), e.num_users));
        let mdg_path = dir.path(&format!("item_mdg_{}_k{k}.csv", pool.name()));
        write_item_mdg_csv(&mdg_path, &e.item_mdg, &data.item_labels)?;
        write_sidecar(&mdg_path, cfg, run_seed(cfg), json!({ "pool": pool.name(), "k": k }))?;
        rows.push(json!({ "pool": pool.name(), "k": k, "num_users": e.num_users, "values": e.values }));
    }
    let csv_path = dir.path(&format!("metrics_{}.csv", pool.name()));
    write_text(&csv_path, &csv)?;
    write_sidecar(&csv_path, cfg, run_seed(cfg), json!({ "ks": ks }))?;
    let json_path = dir.path(&format!("metrics_{}.json", pool.name()));
    write_json(&json_path, &rows)?;
    write_sidecar(&json_path, cfg, run_seed(cfg), json!({ "ks": ks }))?;
    print!("{csv}");
    Ok(())
}

pub fn analyze(
    cfg: &ExperimentConfig,
    pool: PoolArg,
    ranking: Option<PathBuf>,
    items: Option<PathBuf>,
    k: Option<usize>,
) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let data = dir.dataset(cfg)?;
    let splits = dir.splits()?;
    let k = k.unwrap_or(cfg.select_k);
    let log = cutoff(&load_ranking(&dir, cfg, pool, ranking)?, k)?;
    let (pool_items, holdout) = pool_of(&splits, pool);
    let counts = prediction_counts(&log);
    let labels = Some(data.item_labels.as_slice());
    let seed = run_seed(cfg);
    let name = pool.name();
    let emit = |file: String, text: String, extra: Value| -> Result<()> {
        let path = dir.path(&file);
        write_text(&path, &text)?;
        write_sidecar(&path, cfg, seed, extra)
    };

    emit(format!("fig1_{name}.csv"), fig1_table(&counts, holdout)?.to_csv(labels), json!({ "k": k }))?;

    let subset = most_predicted(&counts, cfg.neighbor_subset_frac);
    let warm_pop = splits.warm_train.restrict_items(&splits.warm_items)?.popularity();
    let neighbors = cfg.neighbors.min(splits.warm_items.len());
    let fig2 = neighbor_popularity(&subset, &data.features, &splits.warm_items, &warm_pop, neighbors)?;
    emit(format!("fig2_{name}.csv"), fig2.to_csv(labels), json!({ "k": k, "neighbors": neighbors }))?;

    let source = match items {
        Some(p) => p,
        None => dir.input(&format!("cold_{name}.emb"), "train-cold")?,
    };
    let vectors = scatter(pool_items, &read_matrix(&source)?, data.interactions.num_items())?;
    let extra = json!({ "k": k, "items": source.display().to_string() });
    emit(format!("fig3_{name}.csv"), fig3_table(&counts, &vectors)?.to_csv(labels), extra)?;

    emit(format!("fig4_{name}.csv"), percentile_curve(&counts)?.to_csv(None), json!({ "k": k }))?;

    let stats = concentration(&counts, cfg.top_n.min(pool_items.len()), k, log.users().len())?;
    let path = dir.path(&format!("concentration_{name}.json"));
    write_json(&path, &stats)?;
    write_sidecar(&path, cfg, seed, json!({ "k": k }))?;
    println!(
        "top-{} share {:.4}, {} of {} items never recommended at k {k}",
        stats.top_n, stats.top_n_share, stats.zero_pred_items, stats.pool_size
    );
    Ok(())
}

pub fn pipeline(cfg: &ExperimentConfig) -> Result<()> {
    let outcome = run_pipeline(cfg)?;
    for s in &outcome.runs {
        log::info!(
            "run {} (seed {}): selected alpha {}, top-{} share {:.3} -> {:.3}",
            s.run,
            s.seed,
            s.selected_alpha,
            s.concentration_base.top_n,
            s.concentration_base.top_n_share,
            s.concentration_selected.top_n_share
        );
    }
    let tag = cfg.encoder.tag();
    let ms = format!("{tag}_ms");
    println!("model,alpha,k,{}", MetricValues::NAMES.join(","));
    for row in aggregate_reports(&outcome.reports) {
        let shown = row.pool == "test" && (row.model == ms || (row.model == tag && row.alpha == Some(0.0)));
        if shown {
            let alpha = row.alpha.map_or_else(|| "selected".to_string(), |a| a.to_string());
            let v = row.mean.to_array().map(|x| format!("{x:.4}")).join(",");
            println!("{},{alpha},{},{v}", row.model, row.k);
        }
    }
    log::info!("results in {}", outcome.out_dir.display());
    Ok(())
}

/// `MODEL` or `MODEL@ALPHA`.
fn parse_group(spec: &str) -> Result<(String, Option<f64>)> {
    match spec.split_once('@') {
        None => Ok((spec.to_string(), None)),
        Some((model, alpha)) => alpha
            .parse::<f64>()
            .map(|a| (model.to_string(), Some(a)))
            .map_err(|_| Error::Config(format!("bad alpha in `{spec}`"))),
    }
}

fn select_group(reports: &[MetricReport], spec: &str, pool: &str, k: usize) -> Result<Vec<MetricReport>> {
    let (model, alpha) = parse_group(spec)?;
    let mut out: Vec<MetricReport> = reports
        .iter()
        .filter(|r| r.model == model && r.pool == pool && r.k == k && alpha.is_none_or(|a| r.alpha == a))
        .cloned()
        .collect();
    out.sort_by_key(|r| r.run);
    if out.is_empty() {
        return Err(Error::Config(format!("no reports match `{spec}` on pool {pool} at k {k}")));
    }
    Ok(out)
}

pub fn compare(
    cfg: &ExperimentConfig,
    reports: Option<PathBuf>,
    base: Option<String>,
    treated: Option<String>,
    pool: PoolArg,
    k: Option<usize>,
) -> Result<()> {
    let dir = Workdir::open(cfg)?;
    let path = match reports {
        Some(p) => p,
        None => dir.input("metrics.json", "pipeline")?,
    };
    let all = read_reports(&path)?;
    let tag = cfg.encoder.tag();
    let base = base.unwrap_or_else(|| format!("{tag}@0"));
    let treated = treated.unwrap_or_else(|| format!("{tag}_ms"));
    let k = k.unwrap_or(cfg.select_k);
    let rows = compare_runs(
        &select_group(&all, &base, pool.name(), k)?,
        &select_group(&all, &treated, pool.name(), k)?,
    )?;
    let csv = comparison_csv(&rows);
    let out = dir.path("comparison.csv");
    write_text(&out, &csv)?;
    write_sidecar(&out, cfg, cfg.seed, json!({ "base": base, "treated": treated, "pool": pool.name(), "k": k }))?;
    print!("{csv}");
    Ok(())
}

fn read_reports(path: &Path) -> Result<Vec<MetricReport>> {
    let v: Value = read_json(path)?;
    let runs = v
        .get("runs")
        .cloned()
        .ok_or_else(|| Error::Serde(format!("{}: missing `runs`", path.display())))?;
    serde_json::from_value(runs).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}
