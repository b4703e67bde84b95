//! End-to-end experiment: data, split, warm model, cold encoder, alpha sweep,
//! evaluation, diagnostics and reports.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{DataSource, ExperimentConfig};
use super::select::select_alpha_at;
use crate::analysis::{
    concentration, fig1_table, fig3_table, most_predicted, neighbor_popularity, percentile_curve,
    spearman, ConcentrationStats,
};
use crate::coldgen::{fit_encoder, generate_cold, ColdEncoder, EncoderConfig, KnnScorer};
use crate::data::{
    build_features, generate_synthetic, load_interactions, read_matrix, split_dataset, write_emb,
    DatasetSplits, FeatureMatrix, InteractionTable,
};
use crate::error::{Error, Result};
use crate::metrics::{
    evaluate, mdg_aggregates, write_item_mdg_csv, Evaluation, ItemMdgTable, MdgAggregates,
    MetricReport, MetricValues,
};
use crate::mitigate::{mean_std, scale_embeddings, warm_mean_magnitude, MuSource};
use crate::ranking::{rank_topk, top_k_of, write_ranking_csv, Exclusions, RankingLog};
use crate::warm::{train_warm_with_validation, BprConfig, FactorModel};

const LOCK_FILE: &str = ".lock";
const STALE_FILE: &str = "STALE";

/// Interactions and content features with external labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub interactions: InteractionTable,
    pub features: FeatureMatrix,
    pub user_labels: Vec<String>,
    pub item_labels: Vec<String>,
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(s) => {
            // the experiment seed owns all randomness
            let s = crate::data::SyntheticConfig { seed: cfg.seed, ..s.clone() };
            let data = generate_synthetic(&s)?;
            let user_labels = (0..s.num_users).map(|u| format!("u{u}")).collect();
            let item_labels = (0..s.num_items).map(|i| format!("i{i}")).collect();
            Ok(Dataset {
                interactions: data.interactions,
                features: data.features,
                user_labels,
                item_labels,
            })
        }
        DataSource::Files { interactions, features } => {
            let loaded = load_interactions(interactions)?;
            let modes = features
                .iter()
                .map(|p| read_matrix(p))
                .collect::<Result<Vec<_>>>()?;
            let features = build_features(&modes)?;
            if features.rows() != loaded.table.num_items() {
                return Err(Error::Dimension(format!(
                    "{} feature rows for {} items",
                    features.rows(),
                    loaded.table.num_items()
                )));
            }
            Ok(Dataset {
                interactions: loaded.table,
                features,
                user_labels: loaded.user_ids,
                item_labels: loaded.item_ids,
            })
        }
    }
}

/// Per-stage seed derived from a run seed.
pub fn stage_seed(run_seed: u64, stage: u64) -> u64 {
    run_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(stage.wrapping_mul(0xbf58_476d_1ce4_e5b9))
}

const SPLIT_STAGE: u64 = 1;
const WARM_STAGE: u64 = 2;
const ENCODER_STAGE: u64 = 3;

/// One cold pool: its items, holdout interactions and the users evaluated.
struct Pool<'a> {
    name: &'static str,
    items: &'a [usize],
    holdout: &'a InteractionTable,
    users: Vec<usize>,
}

/// Users with at least one holdout interaction and at least one training
/// interaction; `train_items` is indexed by user.
pub fn evaluated_users(holdout: &InteractionTable, train_items: &[Vec<usize>]) -> Vec<usize> {
    holdout
        .user_items()
        .iter()
        .enumerate()
        .filter(|(u, h)| !h.is_empty() && !train_items[*u].is_empty())
        .map(|(u, _)| u)
        .collect()
}

/// Everything computed for one run, before anything touches the disk.
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub reports: Vec<MetricReport>,
    pub splits: DatasetSplits,
    pub warm_model: FactorModel,
    pub encoder: ColdEncoder,
    /// Encoder output for every item, indexed globally.
    pub generated: FeatureMatrix,
    /// Unscaled and selected-alpha test evaluations at `select_k`.
    pub test_base: Evaluation,
    pub test_selected: Evaluation,
    pub test_logs: BTreeMap<String, RankingLog>,
    pub fig4: Vec<(f64, Evaluation)>,
    pub knn_test: RankingLog,
    pub warm_as_cold: Option<(Evaluation, Evaluation)>,
    pub pooled: Option<Evaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub selected_alpha: f64,
    pub mu_w: f64,
    pub mu_source: MuSource,
    /// Spearman correlation of warm item magnitude with training popularity.
    pub warm_magnitude_popularity: f64,
    /// Spearman correlation of cold test magnitude with prediction count at
    /// alpha 0 and `select_k`.
    pub cold_magnitude_count: f64,
    pub cold_magnitude_mean: f64,
    pub cold_magnitude_std: f64,
    pub concentration_base: ConcentrationStats,
    pub concentration_selected: ConcentrationStats,
    pub num_warm_items: usize,
    pub num_cold_val_items: usize,
    pub num_cold_test_items: usize,
}

/// Global item-vector matrix with the warm model's rows at the warm items.
fn warm_global(model: &FactorModel, warm_items: &[usize], num_items: usize) -> FeatureMatrix {
    let d = model.latent_dim();
    let mut out = FeatureMatrix::zeros(num_items, d);
    for (local, &g) in warm_items.iter().enumerate() {
        out.row_mut(g).copy_from_slice(model.item_embeddings.row(local));
    }
    out
}

fn knn_log(
    scorer: &KnnScorer,
    train_items: &[Vec<usize>],
    pool: &[usize],
    users: &[usize],
    k: usize,
) -> Result<RankingLog> {
    let lists = users
        .par_iter()
        .map(|&u| {
            let scores = scorer.scores(&train_items[u], pool)?;
            Ok(top_k_of(pool, &scores, k))
        })
        .collect::<Result<Vec<_>>>()?;
    RankingLog::new(k, pool.to_vec(), users.to_vec(), lists)
}

fn report(
    model: &str,
    pool: &Pool,
    alpha: f64,
    k: usize,
    run: usize,
    seed: u64,
    eval: &Evaluation,
) -> MetricReport {
    MetricReport {
        model: model.to_string(),
        pool: pool.name.to_string(),
        alpha,
        k,
        run,
        seed,
        num_users: eval.num_users,
        num_items: pool.items.len(),
        values: eval.values,
    }
}

/// Item split of the run with seed `run_seed`.
pub fn split_stage(cfg: &ExperimentConfig, data: &Dataset, run_seed: u64) -> Result<DatasetSplits> {
    split_dataset(
        &data.interactions,
        &data.features,
        &cfg.split,
        stage_seed(run_seed, SPLIT_STAGE),
    )
    .map_err(Error::in_stage("split"))
}

/// BPR model over the warm items; item rows follow `splits.warm_items`.
pub fn warm_stage(cfg: &ExperimentConfig, splits: &DatasetSplits, run_seed: u64) -> Result<FactorModel> {
    let warm_cfg = BprConfig {
        seed: stage_seed(run_seed, WARM_STAGE),
        ..cfg.warm.clone()
    };
    let train_local = splits.warm_train.restrict_items(&splits.warm_items)?;
    let val_local = splits.warm_val.restrict_items(&splits.warm_items)?;
    train_warm_with_validation(&train_local, Some(&val_local), &warm_cfg).map_err(Error::in_stage("train-warm"))
}

/// The encoder configuration of the run, with its seed derived from `run_seed`.
pub fn encoder_config(cfg: &ExperimentConfig, run_seed: u64) -> EncoderConfig {
    match &cfg.encoder {
        EncoderConfig::Mlp(m) => EncoderConfig::Mlp(crate::coldgen::MlpConfig {
            seed: stage_seed(run_seed, ENCODER_STAGE),
            ..m.clone()
        }),
        other => other.clone(),
    }
}

/// Fits the cold encoder on the warm items' content and warm embeddings.
pub fn encoder_stage(
    cfg: &ExperimentConfig,
    features: &FeatureMatrix,
    splits: &DatasetSplits,
    warm_model: &FactorModel,
    run_seed: u64,
) -> Result<ColdEncoder> {
    let warm_features = features.select_rows(&splits.warm_items)?;
    fit_encoder(&warm_features, &warm_model.item_embeddings, &encoder_config(cfg, run_seed))
        .map_err(Error::in_stage("train-cold"))
}

/// The scaling anchor selected by `cfg.scaling.mu_source`. `generated` holds
/// encoder output for every item, indexed globally.
pub fn anchor_magnitude(
    cfg: &ExperimentConfig,
    splits: &DatasetSplits,
    warm_model: &FactorModel,
    generated: &FeatureMatrix,
) -> Result<f64> {
    match cfg.scaling.mu_source {
        MuSource::WarmEmbeddings => warm_mean_magnitude(&warm_model.item_embeddings),
        MuSource::GeneratedWarm => warm_mean_magnitude(&generated.select_rows(&splits.warm_items)?),
    }
    .map_err(Error::in_stage("scale"))
}

/// Runs every in-memory stage of run `run`.
pub fn run_once(cfg: &ExperimentConfig, data: &Dataset, run: usize) -> Result<RunArtifacts> {
    let seed = cfg.run_seed(run);
    let splits = split_stage(cfg, data, seed)?;
    let train_local = splits.warm_train.restrict_items(&splits.warm_items)?;
    let warm_model = warm_stage(cfg, &splits, seed)?;
    let encoder_cfg = encoder_config(cfg, seed);
    let encoder = encoder_stage(cfg, &data.features, &splits, &warm_model, seed)?;
    let generated = generate_cold(&encoder, &data.features).map_err(Error::in_stage("train-cold"))?;
    let mu_w = anchor_magnitude(cfg, &splits, &warm_model, &generated)?;

    let train_items = splits.warm_train.user_items();
    let val = Pool {
        name: "val",
        items: &splits.cold_val_items,
        holdout: &splits.cold_val,
        users: evaluated_users(&splits.cold_val, &train_items),
    };
    let test = Pool {
        name: "test",
        items: &splits.cold_test_items,
        holdout: &splits.cold_test,
        users: evaluated_users(&splits.cold_test, &train_items),
    };
    for p in [&val, &test] {
        if p.users.is_empty() {
            return Err(Error::in_stage("rank")(Error::Empty(format!(
                "no user with both training and cold {} interactions",
                p.name
            ))));
        }
    }

    let users = &warm_model.user_embeddings;
    let max_k = cfg.max_k();
    let tag = encoder_cfg.tag();
    let mut reports = Vec::new();
    // alpha -> (val evals by k, test evals by k)
    let mut sweep: Vec<(f64, Vec<Evaluation>, Vec<Evaluation>)> = Vec::new();
    let mut test_logs = BTreeMap::new();
    for alpha in cfg.alphas() {
        let emb = scale_embeddings(&generated, mu_w, alpha).map_err(Error::in_stage("scale"))?;
        let mut evals = [Vec::new(), Vec::new()];
        for (slot, pool) in [&val, &test].into_iter().enumerate() {
            let log = rank_topk(users, &emb, pool.items, &pool.users, max_k, None)
                .map_err(Error::in_stage("rank"))?;
            for &k in &cfg.ks {
                let e = evaluate(&log, pool.holdout, k).map_err(Error::in_stage("evaluate"))?;
                reports.push(report(tag, pool, alpha, k, run, seed, &e));
                evals[slot].push(e);
            }
            if pool.name == "test" {
                test_logs.insert(alpha_label(alpha), log);
            }
        }
        let [v, t] = evals;
        sweep.push((alpha, v, t));
    }

    let scorer = KnnScorer::new(&data.features, cfg.knn).map_err(Error::in_stage("knn"))?;
    let mut knn_test = None;
    for pool in [&val, &test] {
        let log = knn_log(&scorer, &train_items, pool.items, &pool.users, max_k)
            .map_err(Error::in_stage("knn"))?;
        for &k in &cfg.ks {
            let e = evaluate(&log, pool.holdout, k).map_err(Error::in_stage("evaluate"))?;
            reports.push(report("knn", pool, 0.0, k, run, seed, &e));
        }
        knn_test = Some(log);
    }

    let selected_alpha = select_alpha_at(
        &reports.iter().filter(|r| r.model == tag && r.pool == "val").cloned().collect::<Vec<_>>(),
        cfg.user_acc_budget,
        cfg.select_k,
    );
    let ms_tag = format!("{tag}_ms");
    let k_slot = |k: usize| cfg.ks.iter().position(|&x| x == k).unwrap();
    let selected = sweep
        .iter()
        .find(|(a, _, _)| *a == selected_alpha)
        .expect("selected alpha is part of the sweep");
    for (j, &k) in cfg.ks.iter().enumerate() {
        reports.push(report(&ms_tag, &test, selected_alpha, k, run, seed, &selected.2[j]));
    }

    let sk = k_slot(cfg.select_k);
    let test_base = sweep[0].2[sk].clone();
    let test_selected = selected.2[sk].clone();
    let fig4 = sweep.iter().map(|(a, _, t)| (*a, t[sk].clone())).collect();

    // magnitude diagnostics
    let warm_pop = train_local.popularity();
    let warm_mags = warm_model.item_embeddings.row_norms();
    let warm_magnitude_popularity = spearman(
        &warm_mags,
        &warm_pop.iter().map(|&c| c as f64).collect::<Vec<_>>(),
    )
    .map_err(Error::in_stage("analyze"))?;
    let cold_mags: Vec<f64> = splits
        .cold_test_items
        .iter()
        .map(|&i| crate::data::norm(generated.row(i)))
        .collect();
    let base_counts: Vec<f64> = test_base.counts.counts.iter().map(|&c| c as f64).collect();
    let cold_magnitude_count = spearman(&cold_mags, &base_counts).map_err(Error::in_stage("analyze"))?;
    let (cold_magnitude_mean, cold_magnitude_std) = mean_std(&cold_mags);
    let conc = |e: &Evaluation| {
        concentration(&e.counts, cfg.top_n.min(e.counts.counts.len()), cfg.select_k, e.num_users)
    };
    let concentration_base = conc(&test_base).map_err(Error::in_stage("analyze"))?;
    let concentration_selected = conc(&test_selected).map_err(Error::in_stage("analyze"))?;

    let warm_as_cold = if cfg.diagnostics.warm_as_cold {
        Some(warm_as_cold_stage(cfg, &splits, &warm_model, &generated, &train_items)?)
    } else {
        None
    };
    let pooled = if cfg.diagnostics.pooled {
        Some(pooled_stage(cfg, &splits, users, &generated, &train_items)?)
    } else {
        None
    };

    Ok(RunArtifacts {
        summary: RunSummary {
            run,
            seed,
            selected_alpha,
            mu_w,
            mu_source: cfg.scaling.mu_source,
            warm_magnitude_popularity,
            cold_magnitude_count,
            cold_magnitude_mean,
            cold_magnitude_std,
            concentration_base,
            concentration_selected,
            num_warm_items: splits.warm_items.len(),
            num_cold_val_items: splits.cold_val_items.len(),
            num_cold_test_items: splits.cold_test_items.len(),
        },
        reports,
        splits,
        warm_model,
        encoder,
        generated,
        test_base,
        test_selected,
        test_logs,
        fig4,
        knn_test: knn_test.expect("two pools ranked"),
        warm_as_cold,
        pooled,
    })
}

/// Warm items ranked by the warm model and by the content encoder, against
/// the warm test interactions.
fn warm_as_cold_stage(
    cfg: &ExperimentConfig,
    splits: &DatasetSplits,
    model: &FactorModel,
    generated: &FeatureMatrix,
    train_items: &[Vec<usize>],
) -> Result<(Evaluation, Evaluation)> {
    let n = generated.rows();
    let users = evaluated_users(&splits.warm_test, train_items);
    let excl = Exclusions::from_lists(train_items.to_vec());
    let warm_vectors = warm_global(model, &splits.warm_items, n);
    let mut out = Vec::new();
    for items in [&warm_vectors, generated] {
        let log = rank_topk(
            &model.user_embeddings,
            items,
            &splits.warm_items,
            &users,
            cfg.select_k,
            Some(&excl),
        )
        .map_err(Error::in_stage("warm-as-cold"))?;
        out.push(evaluate(&log, &splits.warm_test, cfg.select_k).map_err(Error::in_stage("warm-as-cold"))?);
    }
    let cold = out.pop().unwrap();
    Ok((out.pop().unwrap(), cold))
}

/// Both cold pools ranked together without scaling.
fn pooled_stage(
    cfg: &ExperimentConfig,
    splits: &DatasetSplits,
    users: &FeatureMatrix,
    generated: &FeatureMatrix,
    train_items: &[Vec<usize>],
) -> Result<Evaluation> {
    let mut pool: Vec<usize> = splits
        .cold_val_items
        .iter()
        .chain(&splits.cold_test_items)
        .copied()
        .collect();
    pool.sort_unstable();
    let pairs = splits
        .cold_val
        .pairs()
        .iter()
        .chain(splits.cold_test.pairs())
        .copied()
        .collect();
    let holdout = InteractionTable::new(splits.cold_val.num_users(), splits.cold_val.num_items(), pairs)?;
    let who = evaluated_users(&holdout, train_items);
    let log = rank_topk(users, generated, &pool, &who, cfg.select_k, None).map_err(Error::in_stage("pooled"))?;
    evaluate(&log, &holdout, cfg.select_k).map_err(Error::in_stage("pooled"))
}

fn alpha_label(alpha: f64) -> String {
    format!("{alpha}")
}

/// Aggregate over runs of one (model, pool, alpha, k) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub model: String,
    pub pool: String,
    /// `None` for the selected-alpha rows, whose alpha varies across runs.
    pub alpha: Option<f64>,
    pub k: usize,
    pub num_runs: usize,
    pub mean: MetricValues,
    /// Sample standard deviation; 0 for a single run.
    pub std: MetricValues,
}

/// Model, pool, alpha (none for the selected-alpha rows), k and per-run values.
type Group = (String, String, Option<f64>, usize, Vec<[f64; 6]>);

pub fn aggregate_reports(reports: &[MetricReport]) -> Vec<AggregateRow> {
    let mut groups: Vec<Group> = Vec::new();
    for r in reports {
        let alpha = (!r.model.ends_with("_ms")).then_some(r.alpha);
        let key_eq = |g: &Group| {
            g.0 == r.model && g.1 == r.pool && g.2 == alpha && g.3 == r.k
        };
        match groups.iter_mut().find(|g| key_eq(g)) {
            Some(g) => g.4.push(r.values.to_array()),
            None => groups.push((r.model.clone(), r.pool.clone(), alpha, r.k, vec![r.values.to_array()])),
        }
    }
    groups
        .into_iter()
        .map(|(model, pool, alpha, k, rows)| {
            let n = rows.len() as f64;
            let mut mean = [0.0; 6];
            let mut std = [0.0; 6];
            for j in 0..6 {
                mean[j] = rows.iter().map(|r| r[j]).sum::<f64>() / n;
                if rows.len() > 1 {
                    let ss: f64 = rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum();
                    std[j] = (ss / (n - 1.0)).sqrt();
                }
            }
            AggregateRow {
                model,
                pool,
                alpha,
                k,
                num_runs: rows.len(),
                mean: MetricValues::from_array(mean),
                std: MetricValues::from_array(std),
            }
        })
        .collect()
}

/// Per-run rows followed by a `mean` and a `std` row per group.
pub fn metrics_csv(reports: &[MetricReport]) -> String {
    let mut out = String::from(MetricReport::CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    for g in aggregate_reports(reports) {
        let alpha = g.alpha.map_or_else(|| "selected".to_string(), |a| a.to_string());
        for (label, v) in [("mean", g.mean), ("std", g.std)] {
            out.push_str(&format!(
                "{},{},{},{},{},,,,{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                g.model, g.pool, alpha, g.k, label, v.ndcg, v.recall, v.mdg_min80, v.mdg_max5, v.mdg_all, v.gini_div
            ));
        }
    }
    out
}

fn sidecar_with(path: &Path, label: &str, seed: u64, base_seed: u64, config: &Value, extra: Value) -> Result<()> {
    let mut meta = json!({
        "file": label,
        "seed": seed,
        "base_seed": base_seed,
        "config": config,
    });
    if let (Value::Object(m), Value::Object(e)) = (&mut meta, extra) {
        m.extend(e);
    }
    let mut name = path.as_os_str().to_owned();
    name.push(".sidecar.json");
    let side = PathBuf::from(name);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&side, text + "\n").map_err(|e| Error::io(side, e))
}

/// Writes `<path>.sidecar.json` recording the configuration and seed that
/// produced `path`, merged with the fields of `extra` (a JSON object).
pub fn write_sidecar(path: &Path, cfg: &ExperimentConfig, seed: u64, extra: Value) -> Result<()> {
    let config = serde_json::to_value(cfg).map_err(|e| Error::Serde(e.to_string()))?;
    let label = path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    sidecar_with(path, &label, seed, cfg.seed, &config, extra)
}

/// Writes files under the output directory, each with a JSON sidecar holding
/// the configuration and seed that produced it.
struct Emitter {
    root: PathBuf,
    config: Value,
    base_seed: u64,
}

impl Emitter {
    fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    fn sidecar(&self, rel: &str, seed: u64, extra: Value) -> Result<()> {
        sidecar_with(&self.path(rel), rel, seed, self.base_seed, &self.config, extra)
    }

    fn text(&self, rel: &str, body: &str, seed: u64, extra: Value) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        self.sidecar(rel, seed, extra)
    }

    fn json<T: Serialize>(&self, rel: &str, value: &T, seed: u64) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
        self.text(rel, &(text + "\n"), seed, json!({}))
    }

    fn emb(&self, rel: &str, m: &FeatureMatrix, seed: u64, extra: Value) -> Result<()> {
        write_emb(&self.path(rel), m)?;
        self.sidecar(rel, seed, extra)
    }

    fn with<F: FnOnce(&Path) -> Result<()>>(&self, rel: &str, seed: u64, extra: Value, f: F) -> Result<()> {
        f(&self.path(rel))?;
        self.sidecar(rel, seed, extra)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<RunSummary>,
    pub reports: Vec<MetricReport>,
    /// MDG aggregates over per-item MDG averaged across runs, when requested:
    /// `(unscaled, selected alpha)`.
    pub pooled_mdg: Option<(MdgAggregates, MdgAggregates)>,
}

impl PipelineOutcome {
    /// The report of `run` for (`model`, `pool`, `alpha`, `k`).
    pub fn report(&self, run: usize, model: &str, pool: &str, alpha: f64, k: usize) -> Option<&MetricReport> {
        self.reports
            .iter()
            .find(|r| r.run == run && r.model == model && r.pool == pool && r.alpha == alpha && r.k == k)
    }
}

/// Holds the output directory for the duration of a run.
struct DirLock(PathBuf);

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| {
                if e.kind() == std::io::ErrorKind::AlreadyExists {
                    Error::Config(format!(
                        "{} is locked by another pipeline (remove {} if stale)",
                        dir.display(),
                        path.display()
                    ))
                } else {
                    Error::io(&path, e)
                }
            })?;
        Ok(Self(path))
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// Runs the configured experiment and writes all reports under `cfg.out_dir`.
/// On failure a `STALE` marker naming the failing stage is left behind.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    cfg.validate()?;
    let lock = DirLock::acquire(&cfg.out_dir)?;
    let stale = cfg.out_dir.join(STALE_FILE);
    let _ = fs::remove_file(&stale);
    let result = run_and_write(cfg);
    if let Err(e) = &result {
        let _ = fs::write(&stale, format!("{e}\n"));
    }
    drop(lock);
    result
}

fn run_and_write(cfg: &ExperimentConfig) -> Result<PipelineOutcome> {
    let data = load_dataset(cfg).map_err(Error::in_stage("load"))?;
    let out = Emitter {
        root: cfg.out_dir.clone(),
        config: serde_json::to_value(cfg).map_err(|e| Error::Serde(e.to_string()))?,
        base_seed: cfg.seed,
    };
    let labels = &data.item_labels;
    let mut runs = Vec::new();
    let mut reports = Vec::new();
    let mut pooled_items: [BTreeMap<usize, (f64, usize)>; 2] = Default::default();

    for run in 0..cfg.num_runs {
        log::info!("run {run}: seed {}", cfg.run_seed(run));
        let a = run_once(cfg, &data, run)?;
        let seed = a.summary.seed;
        let dir = format!("run_{run}");
        let p = |name: &str| format!("{dir}/{name}");
        fs::create_dir_all(out.path(&dir)).map_err(|e| Error::io(out.path(&dir), e))?;
        let stage = Error::in_stage;

        (|| -> Result<()> {
            let warm_extra = json!({ "warm": BprConfig { seed: stage_seed(seed, WARM_STAGE), ..cfg.warm.clone() } });
            out.emb(&p("warm_users.emb"), &a.warm_model.user_embeddings, seed, warm_extra.clone())?;
            out.emb(&p("warm_items.emb"), &a.warm_model.item_embeddings, seed, warm_extra)?;
            out.text(
                &p("warm_items.tsv"),
                &a.splits.warm_items.iter().map(|&i| format!("{}\n", labels[i])).collect::<String>(),
                seed,
                json!({ "rows_of": "warm_items.emb" }),
            )?;
            match &a.encoder {
                ColdEncoder::Linear { weights, lambda } => {
                    out.emb(&p("encoder.emb"), weights, seed, json!({ "kind": "ridge", "lambda": lambda }))?
                }
                ColdEncoder::Mlp { params, cfg: m } => {
                    out.emb(&p("encoder_w1.emb"), &params.w1, seed, json!({ "kind": "mlp", "mlp": m }))?;
                    out.emb(&p("encoder_w2.emb"), &params.w2, seed, json!({ "kind": "mlp", "mlp": m }))?;
                }
            }
            out.json(&p("encoder.json"), &a.encoder, seed)?;
            for (name, items) in [("cold_val", &a.splits.cold_val_items), ("cold_test", &a.splits.cold_test_items)] {
                out.emb(
                    &p(&format!("{name}.emb")),
                    &a.generated.select_rows(items)?,
                    seed,
                    json!({ "items": items.iter().map(|&i| &labels[i]).collect::<Vec<_>>() }),
                )?;
            }
            let scaled = scale_embeddings(&a.generated.select_rows(&a.splits.cold_test_items)?, a.summary.mu_w, a.summary.selected_alpha)?;
            out.emb(
                &p("cold_test_scaled.emb"),
                &scaled,
                seed,
                json!({ "alpha": a.summary.selected_alpha, "mu_w": a.summary.mu_w }),
            )?;
            Ok(())
        })()
        .map_err(stage("persist-models"))?;

        (|| -> Result<()> {
            let users = &data.user_labels;
            for (alpha, label) in [(0.0, "alpha0"), (a.summary.selected_alpha, "selected")] {
                let log = &a.test_logs[&alpha_label(alpha)];
                out.with(&p(&format!("ranking_test_{label}.csv")), seed, json!({ "alpha": alpha }), |path| {
                    write_ranking_csv(path, log, users, labels)
                })?;
            }
            out.with(&p("ranking_test_knn.csv"), seed, json!({}), |path| {
                write_ranking_csv(path, &a.knn_test, users, labels)
            })?;

            out.text(&p("fig1.csv"), &fig1_table(&a.test_base.counts, &a.splits.cold_test)?.to_csv(Some(labels)), seed, json!({ "alpha": 0.0 }))?;
            let subset = most_predicted(&a.test_base.counts, cfg.neighbor_subset_frac);
            let warm_pop = a.splits.warm_train.restrict_items(&a.splits.warm_items)?.popularity();
            let neighbors = cfg.neighbors.min(a.splits.warm_items.len());
            let fig2 = neighbor_popularity(&subset, &data.features, &a.splits.warm_items, &warm_pop, neighbors)?;
            out.text(&p("fig2.csv"), &fig2.to_csv(Some(labels)), seed, json!({ "neighbors": neighbors }))?;
            out.text(&p("fig3.csv"), &fig3_table(&a.test_base.counts, &a.generated)?.to_csv(Some(labels)), seed, json!({ "alpha": 0.0 }))?;
            for (alpha, e) in &a.fig4 {
                if let Ok(t) = percentile_curve(&e.counts) {
                    out.text(&p(&format!("fig4_alpha{alpha}.csv")), &t.to_csv(None), seed, json!({ "alpha": alpha }))?;
                }
            }
            let conc = json!({
                "k": cfg.select_k,
                "alpha0": a.summary.concentration_base,
                "selected": a.summary.concentration_selected,
                "selected_alpha": a.summary.selected_alpha,
            });
            out.json(&p("concentration.json"), &conc, seed)?;
            for (e, label) in [(&a.test_base, "alpha0"), (&a.test_selected, "selected")] {
                out.with(&p(&format!("item_mdg_test_{label}.csv")), seed, json!({}), |path| {
                    write_item_mdg_csv(path, &e.item_mdg, labels)
                })?;
            }
            if let Some((warm, cold)) = &a.warm_as_cold {
                out.text(&p("fig1_warm.csv"), &fig1_table(&warm.counts, &a.splits.warm_test)?.to_csv(Some(labels)), seed, json!({}))?;
                out.text(&p("fig1_warm_as_cold.csv"), &fig1_table(&cold.counts, &a.splits.warm_test)?.to_csv(Some(labels)), seed, json!({}))?;
            }
            if let Some(e) = &a.pooled {
                let mut pairs = a.splits.cold_val.pairs().to_vec();
                pairs.extend_from_slice(a.splits.cold_test.pairs());
                let holdout = InteractionTable::new(a.splits.cold_val.num_users(), a.splits.cold_val.num_items(), pairs)?;
                out.text(&p("fig1_pooled.csv"), &fig1_table(&e.counts, &holdout)?.to_csv(Some(labels)), seed, json!({}))?;
            }
            out.json(&p("summary.json"), &a.summary, seed)?;
            Ok(())
        })()
        .map_err(stage("analyze"))?;

        if cfg.diagnostics.verbose_mdg {
            for (acc, e) in pooled_items.iter_mut().zip([&a.test_base, &a.test_selected]) {
                for (&i, &m) in e.item_mdg.items.iter().zip(&e.item_mdg.mdg) {
                    let slot = acc.entry(i).or_insert((0.0, 0));
                    slot.0 += m;
                    slot.1 += 1;
                }
            }
        }
        runs.push(a.summary);
        reports.extend(a.reports);
    }

    let pooled_mdg = if cfg.diagnostics.verbose_mdg {
        let agg = |acc: &BTreeMap<usize, (f64, usize)>| {
            let table = ItemMdgTable {
                items: acc.keys().copied().collect(),
                target_users: acc.values().map(|v| v.1).collect(),
                mdg: acc.values().map(|v| v.0 / v.1 as f64).collect(),
            };
            mdg_aggregates(&table)
        };
        let pair = (agg(&pooled_items[0])?, agg(&pooled_items[1])?);
        out.json("mdg_pooled.json", &json!({ "alpha0": pair.0, "selected": pair.1 }), cfg.seed)?;
        Some(pair)
    } else {
        None
    };

    out.text("metrics.csv", &metrics_csv(&reports), cfg.seed, json!({ "num_runs": cfg.num_runs }))
        .map_err(Error::in_stage("report"))?;
    out.json(
        "metrics.json",
        &json!({ "runs": reports, "aggregate": aggregate_reports(&reports) }),
        cfg.seed,
    )?;
    out.json("summary.json", &runs, cfg.seed)?;
    let config_text = cfg.to_toml_string()?;
    out.text("config.toml", &config_text, cfg.seed, json!({}))?;

    Ok(PipelineOutcome {
        out_dir: cfg.out_dir.clone(),
        runs,
        reports,
        pooled_mdg,
    })
}
