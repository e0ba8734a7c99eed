//! End-to-end runs: catalog, splits, features, verification, prediction,
//! scoring and reports, driven by one TOML config.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! catalog/    manifest (or generated synthetic dataset) and dataset stats
//! splits/     one split file per configured split
//! features/   feature cache, unless REID_CACHE_DIR points elsewhere
//! decisions/  pair decisions plus the key they were computed under
//! graph/      accepted edge list, per-split components, predictions, conflicts
//! reports/    report tables, time-gap curve (csv, png), bias summary, run manifest
//! ```
//!
//! Everything under `reports/` is a pure function of the config with paths
//! stripped, so two runs with the same config produce identical bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::evaluation::{
    score_closed, score_open, time_gap_curve, write_closed_reports, write_open_reports, ClosedSetReport,
    GapBucket, OpenSetReport, SplitScore, TimeGapCurve,
};
use crate::features::{extract_features, params_hash, CacheKey, FeatureCache, FeatureSet, GrayImage, SiftParams};
use crate::geomverify::{load_decisions, save_decisions, verify_unordered, PairDecision, VerifyParams};
use crate::matchgraph::{propagate_identities, MatchGraph, PredictionSet};
use crate::par::{self, Execution};
use crate::splitgen::{
    classify_problem, random_split_matched, time_cutoff_split, time_proportion_split, validate_split, ProblemKind,
    QueryWindow, Split,
};
use crate::synthgen::{self, SynthConfig, SynthMeta};

/// Overrides the feature cache directory.
pub const CACHE_ENV: &str = "REID_CACHE_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CatalogSource {
    Manifest(PathBuf),
    Synth(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum SplitSpecPolicy {
    TimeProportion {
        proportion: f64,
    },
    TimeCutoff {
        cutoff: NaiveDate,
        #[serde(default)]
        window: QueryWindow,
    },
    RandomMatched {
        /// Name of an earlier time-aware split whose per-individual
        /// reference counts are matched.
        template: String,
        /// Defaults to the run seed.
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub name: String,
    #[serde(flatten)]
    pub policy: SplitSpecPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub catalog: CatalogSource,
    #[serde(default)]
    pub splits: Vec<SplitSpec>,
    #[serde(default)]
    pub features: SiftParams,
    #[serde(default)]
    pub verify: VerifyParams,
    /// Worker threads; `None` uses all cores.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default)]
    pub seed: u64,
    /// Verify only pairs among each image's `k` nearest neighbours by mean
    /// descriptor. An approximation; off by default.
    #[serde(default)]
    pub blocking_top_k: Option<usize>,
    /// Limit identity propagation to paths of at most this many edges.
    #[serde(default)]
    pub max_hops: Option<usize>,
    /// Feature cache directory; `REID_CACHE_DIR` takes precedence.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn new(out_dir: impl Into<PathBuf>, catalog: CatalogSource) -> Self {
        PipelineConfig {
            out_dir: out_dir.into(),
            catalog,
            splits: Vec::new(),
            features: SiftParams::default(),
            verify: VerifyParams::default(),
            workers: None,
            execution: Execution::default(),
            seed: 0,
            blocking_top_k: None,
            max_hops: None,
            cache_dir: None,
        }
    }

    /// Parses a config; relative paths are taken relative to `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        rebase(&mut cfg.out_dir);
        if let CatalogSource::Manifest(p) = &mut cfg.catalog {
            rebase(p);
        }
        if let Some(p) = &mut cfg.cache_dir {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.splits.is_empty() {
            return Err(Error::Config("at least one split is required".into()));
        }
        let mut seen: BTreeMap<&str, &SplitSpecPolicy> = BTreeMap::new();
        for s in &self.splits {
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("bad split name `{}`", s.name)));
            }
            match &s.policy {
                SplitSpecPolicy::TimeProportion { proportion } if !(*proportion > 0.0 && *proportion < 1.0) => {
                    return Err(Error::Config(format!("split `{}`: proportion must lie in (0, 1)", s.name)));
                }
                SplitSpecPolicy::RandomMatched { template, .. } => match seen.get(template.as_str()) {
                    None => {
                        return Err(Error::Config(format!(
                            "split `{}`: template `{template}` is not an earlier split",
                            s.name
                        )))
                    }
                    Some(SplitSpecPolicy::RandomMatched { .. }) => {
                        return Err(Error::Config(format!(
                            "split `{}`: template `{template}` must be time-aware",
                            s.name
                        )))
                    }
                    Some(_) => {}
                },
                _ => {}
            }
            if seen.insert(&s.name, &s.policy).is_some() {
                return Err(Error::Config(format!("duplicate split name `{}`", s.name)));
            }
        }
        match &self.catalog {
            CatalogSource::Manifest(p) if !p.is_file() => {
                return Err(Error::Config(format!("manifest {} does not exist", p.display())))
            }
            CatalogSource::Synth(c) => c.validate()?,
            _ => {}
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.blocking_top_k == Some(0) {
            return Err(Error::Config("blocking_top_k must be at least 1".into()));
        }
        Ok(())
    }

    /// Hash of everything that affects results; output and cache paths excluded.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.cache_dir = None;
        c.workers = None;
        c.execution = Execution::default();
        if let CatalogSource::Manifest(p) = &mut c.catalog {
            *p = p.file_name().map(PathBuf::from).unwrap_or_default();
        }
        params_hash(&c)
    }

    fn feature_cache_dir(&self) -> PathBuf {
        match std::env::var_os(CACHE_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.cache_dir.clone().unwrap_or_else(|| self.out_dir.join("features")),
        }
    }
}

/// Loads a manifest or generates (or reuses) the synthetic dataset under
/// `dir`. Returns the catalog and whether an existing dataset was reused.
pub fn materialize_catalog(source: &CatalogSource, dir: &Path, exec: Execution) -> Result<(Catalog, bool)> {
    match source {
        CatalogSource::Manifest(p) => Ok((Catalog::ingest_manifest(p)?, true)),
        CatalogSource::Synth(cfg) => {
            let synth_dir = dir.join("synth");
            let meta_path = synth_dir.join(synthgen::META_FILE);
            let manifest = synth_dir.join(synthgen::MANIFEST_FILE);
            let reusable = fs::read(&meta_path)
                .ok()
                .and_then(|b| serde_json::from_slice::<SynthMeta>(&b).ok())
                .is_some_and(|m| &m.config == cfg);
            if reusable && manifest.is_file() {
                let cat = Catalog::ingest_manifest(&manifest)?;
                if cat.records().iter().all(|r| cat.resolve_path(r).is_file()) {
                    return Ok((cat, true));
                }
            }
            let out = synthgen::generate_dataset(cfg, &synth_dir, exec)?;
            Ok((out.catalog, false))
        }
    }
}

pub fn build_split(
    spec: &SplitSpec,
    catalog: &Catalog,
    earlier: &BTreeMap<String, Split>,
    default_seed: u64,
) -> Result<Split> {
    let mut split = match &spec.policy {
        SplitSpecPolicy::TimeProportion { proportion } => time_proportion_split(catalog, *proportion)?,
        SplitSpecPolicy::TimeCutoff { cutoff, window } => time_cutoff_split(catalog, *cutoff, *window)?,
        SplitSpecPolicy::RandomMatched { template, seed } => {
            let t = earlier
                .get(template)
                .ok_or_else(|| Error::Config(format!("unknown template split `{template}`")))?;
            random_split_matched(catalog, t, seed.unwrap_or(default_seed))?
        }
    };
    split.name = spec.name.clone();
    Ok(split)
}

/// Width and height of the region features are extracted from.
fn region_size(catalog: &Catalog, image_id: &str) -> Result<(u32, u32)> {
    let rec = catalog.get(image_id).ok_or_else(|| Error::UnknownImage(image_id.into()))?;
    if let Some(b) = rec.bbox {
        return Ok((b.w, b.h));
    }
    let path = catalog.resolve_path(rec);
    image::image_dimensions(&path).map_err(|source| Error::Decode { path, source })
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractStats {
    pub n_images: usize,
    pub cache_hits: usize,
}

/// Features of `image_ids` in the given order, through the cache.
/// Also returns each image's cache file stem.
pub fn extract_all(
    catalog: &Catalog,
    image_ids: &[String],
    params: &SiftParams,
    cache: &FeatureCache,
    exec: Execution,
) -> Result<(Vec<FeatureSet>, Vec<String>, ExtractStats)> {
    let phash = params_hash(params);
    let results = par::map(exec, image_ids, |id| -> Result<(FeatureSet, String, bool)> {
        let rec = catalog.get(id).ok_or_else(|| Error::UnknownImage(id.clone()))?;
        let path = catalog.resolve_path(rec);
        let key = CacheKey::for_file(&path, rec.bbox, &phash)?;
        let (w, h) = region_size(catalog, id)?;
        if let Some(fs_) = cache.load(&key, w, h) {
            return Ok((fs_, key.file_stem(), true));
        }
        let img = GrayImage::open(&path)?;
        let fs_ = extract_features(&img, rec.bbox, params).map_err(|e| match e {
            Error::ImageTooSmall { .. } | Error::BBoxOutside { .. } => {
                Error::Contract(format!("image `{id}`: {e}"))
            }
            e => e,
        })?;
        cache.store(&key, &fs_)?;
        Ok((fs_, key.file_stem(), false))
    });
    let mut feats = Vec::with_capacity(results.len());
    let mut stems = Vec::with_capacity(results.len());
    let mut stats = ExtractStats {
        n_images: image_ids.len(),
        cache_hits: 0,
    };
    for r in results {
        let (f, s, hit) = r?;
        feats.push(f);
        stems.push(s);
        stats.cache_hits += hit as usize;
    }
    Ok((feats, stems, stats))
}

/// Index pairs `(i, j)`, `i < j`, to verify. Without blocking, all pairs.
pub fn candidate_pairs(feats: &[FeatureSet], blocking_top_k: Option<usize>) -> Vec<(u32, u32)> {
    let n = feats.len();
    let Some(k) = blocking_top_k else {
        let mut all = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                all.push((i as u32, j as u32));
            }
        }
        return all;
    };
    let means: Vec<Vec<f32>> = feats.iter().map(FeatureSet::mean_descriptor).collect();
    let mut set = BTreeSet::new();
    for i in 0..n {
        let mut d: Vec<(f32, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let s: f32 = means[i].iter().zip(&means[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                (s, j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in d.iter().take(k) {
            set.insert((i.min(j) as u32, i.max(j) as u32));
        }
    }
    set.into_iter().collect()
}

/// Verifies the pairs, each in canonical id order.
pub fn verify_all(
    ids: &[String],
    feats: &[FeatureSet],
    pairs: &[(u32, u32)],
    params: &VerifyParams,
    exec: Execution,
) -> Vec<PairDecision> {
    par::map(exec, pairs, |&(i, j)| {
        let (i, j) = (i as usize, j as usize);
        verify_unordered((&ids[i], &feats[i]), (&ids[j], &feats[j]), params)
    })
}

/// Match graph over a split's reference and query images.
pub fn split_graph(decisions: &[PairDecision], split: &Split) -> Result<MatchGraph> {
    let inside = |id: &String| split.reference.contains(id) || split.query.contains(id);
    let edges: Vec<(&str, &str)> = decisions
        .iter()
        .filter(|d| d.decision.accepted && inside(&d.image_a) && inside(&d.image_b))
        .map(|d| (d.image_a.as_str(), d.image_b.as_str()))
        .collect();
    MatchGraph::from_edges(
        split.reference.iter().chain(&split.query).map(String::as_str),
        &edges,
    )
}

/// Differences between two scores over the same query universe; `a` is
/// usually the random split and `b` its time-aware template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSummary {
    pub split_a: String,
    pub split_b: String,
    pub recall_a: Option<f64>,
    pub recall_b: Option<f64>,
    pub precision_a: Option<f64>,
    pub precision_b: Option<f64>,
    /// `recall_a - recall_b`.
    pub recall_delta: Option<f64>,
    pub precision_delta: Option<f64>,
    /// `recall_a / recall_b`; above 1 means `a` overestimates.
    pub recall_ratio: Option<f64>,
    pub precision_ratio: Option<f64>,
}

pub fn compare_splits(a: &SplitScore, b: &SplitScore) -> Result<BiasSummary> {
    if a.n_query != b.n_query {
        return Err(Error::Contract(format!(
            "`{}` has {} query images, `{}` has {}",
            a.split, a.n_query, b.split, b.n_query
        )));
    }
    if let (Some(ua), Some(ub)) = (&a.universe, &b.universe) {
        if ua != ub {
            return Err(Error::Contract(format!(
                "`{}` and `{}` are evaluated over different images",
                a.split, b.split
            )));
        }
    }
    let delta = |x: Option<f64>, y: Option<f64>| Some(x? - y?);
    let quotient = |x: Option<f64>, y: Option<f64>| {
        let (x, y) = (x?, y?);
        (y > 0.0).then(|| x / y)
    };
    Ok(BiasSummary {
        split_a: a.split.clone(),
        split_b: b.split.clone(),
        recall_a: a.recall,
        recall_b: b.recall,
        precision_a: a.precision,
        precision_b: b.precision,
        recall_delta: delta(a.recall, b.recall),
        precision_delta: delta(a.precision, b.precision),
        recall_ratio: quotient(a.recall, b.recall),
        precision_ratio: quotient(a.precision, b.precision),
    })
}

pub fn write_bias<W: Write>(rows: &[BiasSummary], out: W) -> Result<()> {
    let pct = crate::evaluation::format_pct;
    let pp = |v: Option<f64>| v.map(|v| format!("{:+.1}", v * 100.0)).unwrap_or_else(|| "NA".into());
    let r2 = |v: Option<f64>| v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "NA".into());
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "split_a",
        "split_b",
        "recall_a",
        "recall_b",
        "recall_delta_pp",
        "recall_ratio",
        "precision_a",
        "precision_b",
        "precision_delta_pp",
        "precision_ratio",
    ])?;
    for r in rows {
        w.write_record([
            r.split_a.clone(),
            r.split_b.clone(),
            pct(r.recall_a),
            pct(r.recall_b),
            pp(r.recall_delta),
            r2(r.recall_ratio),
            pct(r.precision_a),
            pct(r.precision_b),
            pp(r.precision_delta),
            r2(r.precision_ratio),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<bias>", e))?;
    Ok(())
}

/// Bar chart of the per-bucket acceptance proportion; empty buckets stay blank.
pub fn curve_png(curve: &TimeGapCurve) -> image::RgbImage {
    const W: u32 = 480;
    const H: u32 = 300;
    const MARGIN: u32 = 30;
    let mut img = image::RgbImage::from_pixel(W, H, image::Rgb([255, 255, 255]));
    let axis = image::Rgb([0, 0, 0]);
    let grid = image::Rgb([220, 220, 220]);
    let plot_h = H - 2 * MARGIN;
    for tick in 0..=4 {
        let y = H - MARGIN - tick * plot_h / 4;
        for x in MARGIN..W - MARGIN {
            img.put_pixel(x, y, if tick == 0 { axis } else { grid });
        }
    }
    for y in MARGIN..=H - MARGIN {
        img.put_pixel(MARGIN, y, axis);
    }
    let slot = (W - 2 * MARGIN) / GapBucket::ALL.len() as u32;
    for (i, b) in GapBucket::ALL.iter().enumerate() {
        let Some(p) = curve.cell(*b).proportion() else { continue };
        let bar = (p * plot_h as f64).round() as u32;
        let x0 = MARGIN + i as u32 * slot + slot / 5;
        for x in x0..x0 + slot * 3 / 5 {
            for y in H - MARGIN - bar..H - MARGIN {
                img.put_pixel(x, y, image::Rgb([70, 110, 160]));
            }
        }
    }
    img
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub policy: String,
    pub problem: String,
    pub n_reference: usize,
    pub n_query: usize,
    pub n_excluded: usize,
    pub universe: String,
}

/// Provenance of a report bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub rng: String,
    pub seed: u64,
    pub synth_master_seed: Option<u64>,
    pub config_hash: String,
    pub catalog_hash: String,
    pub sift_params_hash: String,
    pub verify_params_hash: String,
    pub blocking_top_k: Option<usize>,
    pub max_hops: Option<usize>,
    pub n_images: usize,
    pub n_pairs: usize,
    pub n_accepted: usize,
    pub splits: Vec<SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageStatus {
    pub stage: &'static str,
    /// Whether the stage reused cached outputs entirely.
    pub cache_hit: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub stages: Vec<StageStatus>,
    pub closed: Vec<(String, ClosedSetReport)>,
    pub open: Vec<(String, OpenSetReport)>,
    pub curve: TimeGapCurve,
    pub bias: Vec<BiasSummary>,
    pub manifest: RunManifest,
}

impl RunSummary {
    pub fn all_cache_hits(&self) -> bool {
        self.stages.iter().all(|s| s.cache_hit)
    }

    pub fn closed_report(&self, split: &str) -> Option<&ClosedSetReport> {
        self.closed.iter().find(|(n, _)| n == split).map(|(_, r)| r)
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> Result<()>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn decisions_key(stems: &[String], ids: &[String], verify: &VerifyParams, blocking: Option<usize>) -> String {
    let mut h = Sha256::new();
    for (id, stem) in ids.iter().zip(stems) {
        h.update(format!("{id}\t{stem}\n").as_bytes());
    }
    h.update(params_hash(verify).as_bytes());
    h.update(format!("{blocking:?}").as_bytes());
    hex::encode(h.finalize())
}

/// Runs every stage. Errors carry the name of the failing stage.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunSummary> {
    config.validate()?;
    par::with_workers(config.workers, || run_stages(config))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunSummary> {
    let exec = cfg.execution;
    let out = &cfg.out_dir;
    let dirs = ["catalog", "splits", "decisions", "graph", "reports"].map(|d| out.join(d));
    for d in &dirs {
        create_dir(d)?;
    }
    let [catalog_dir, splits_dir, decisions_dir, graph_dir, reports_dir] = dirs;
    let mut stages = Vec::new();

    // catalog
    let (catalog, hit) = materialize_catalog(&cfg.catalog, &catalog_dir, exec).map_err(|e| e.in_stage("catalog"))?;
    let stats = catalog.compute_stats();
    let mut manifest_bytes = Vec::new();
    catalog.write_manifest(&mut manifest_bytes).map_err(|e| e.in_stage("catalog"))?;
    fs::write(catalog_dir.join("manifest.csv"), &manifest_bytes)
        .map_err(|e| Error::io(catalog_dir.join("manifest.csv"), e).in_stage("catalog"))?;
    let stats_csv = format!(
        "n_image,n_indiv,n_enc,span_days,timestamp_coverage\n{},{},{},{},{:.6}\n",
        stats.n_image, stats.n_indiv, stats.n_enc, stats.span_days, stats.timestamp_coverage
    );
    fs::write(catalog_dir.join("stats.csv"), &stats_csv).map_err(|e| Error::io(&catalog_dir, e))?;
    stages.push(StageStatus { stage: "catalog", cache_hit: hit });
    log::info!("catalog: {} images, {} individuals", stats.n_image, stats.n_indiv);

    // splits
    let mut splits: BTreeMap<String, Split> = BTreeMap::new();
    let mut order = Vec::new();
    for spec in &cfg.splits {
        let split = build_split(spec, &catalog, &splits, cfg.seed).map_err(|e| e.in_stage("split"))?;
        let report = validate_split(&split, &catalog);
        if !report.is_usable() {
            return Err(Error::UnusableSplit(format!("`{}`: {:?}", split.name, report.findings)).in_stage("split"));
        }
        split
            .save(splits_dir.join(format!("{}.csv", split.name)))
            .map_err(|e| e.in_stage("split"))?;
        order.push(spec.name.clone());
        splits.insert(spec.name.clone(), split);
    }
    stages.push(StageStatus { stage: "split", cache_hit: true });

    // features
    let ids: Vec<String> = splits
        .values()
        .flat_map(|s| s.reference.iter().chain(&s.query))
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let cache = FeatureCache::new(cfg.feature_cache_dir()).map_err(|e| e.in_stage("extract"))?;
    let (feats, stems, xs) =
        extract_all(&catalog, &ids, &cfg.features, &cache, exec).map_err(|e| e.in_stage("extract"))?;
    stages.push(StageStatus {
        stage: "extract",
        cache_hit: xs.cache_hits == xs.n_images,
    });
    log::info!("extract: {} images, {} from cache", xs.n_images, xs.cache_hits);

    // verify
    let key = decisions_key(&stems, &ids, &cfg.verify, cfg.blocking_top_k);
    let key_path = decisions_dir.join("decisions.key");
    let dec_path = decisions_dir.join("decisions.csv");
    let cached = fs::read_to_string(&key_path).ok().is_some_and(|k| k.trim() == key) && dec_path.is_file();
    let decisions = match cached.then(|| load_decisions(&dec_path)) {
        Some(Ok(d)) => d,
        _ => {
            let pairs = candidate_pairs(&feats, cfg.blocking_top_k);
            log::info!("verify: {} pairs", pairs.len());
            let d = verify_all(&ids, &feats, &pairs, &cfg.verify, exec);
            let _ = fs::remove_file(&key_path);
            save_decisions(&d, &dec_path).map_err(|e| e.in_stage("verify"))?;
            fs::write(&key_path, format!("{key}\n")).map_err(|e| Error::io(&key_path, e).in_stage("verify"))?;
            d
        }
    };
    stages.push(StageStatus { stage: "verify", cache_hit: cached });
    drop(feats);
    let n_accepted = decisions.iter().filter(|d| d.decision.accepted).count();

    // graph and predictions
    let all_edges = MatchGraph::from_edges(ids.iter().map(String::as_str), &{
        decisions
            .iter()
            .filter(|d| d.decision.accepted)
            .map(|d| (d.image_a.as_str(), d.image_b.as_str()))
            .collect::<Vec<_>>()
    })
    .map_err(|e| e.in_stage("predict"))?;
    write_file(&graph_dir.join("edges.txt"), |w| {
        all_edges.write_edge_list(w).map_err(|e| Error::io("edges.txt", e))
    })?;
    let mut predictions: BTreeMap<String, PredictionSet> = BTreeMap::new();
    for name in &order {
        let split = &splits[name];
        let graph = split_graph(&decisions, split).map_err(|e| e.in_stage("predict"))?;
        let preds = propagate_identities(&graph, split, &catalog, cfg.max_hops);
        write_file(&graph_dir.join(format!("{name}_components.csv")), |w| {
            graph.write_components(split, &catalog, w)
        })?;
        write_file(&graph_dir.join(format!("{name}_predictions.csv")), |w| preds.write(w))?;
        write_file(&graph_dir.join(format!("{name}_conflicts.csv")), |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["component_id", "identities", "query_images"])?;
            for k in &preds.conflicts {
                c.write_record([
                    k.component_id.to_string(),
                    k.identities.iter().cloned().collect::<Vec<_>>().join(";"),
                    k.query_images.join(";"),
                ])?;
            }
            c.flush().map_err(|e| Error::io("conflicts", e))
        })?;
        predictions.insert(name.clone(), preds);
    }
    stages.push(StageStatus { stage: "predict", cache_hit: true });

    // scores
    let mut closed = Vec::new();
    let mut open = Vec::new();
    let mut scores: BTreeMap<&str, SplitScore> = BTreeMap::new();
    let mut entries = Vec::new();
    for name in &order {
        let split = &splits[name];
        let kind = classify_problem(split, &catalog).kind;
        let preds = &predictions[name];
        match kind {
            ProblemKind::ClosedSet => {
                let r = score_closed(preds, split, &catalog).map_err(|e| e.in_stage("score"))?;
                scores.insert(name, SplitScore::closed(name, &r));
                closed.push((name.clone(), r));
            }
            ProblemKind::OpenSet => {
                let r = score_open(preds, split, &catalog).map_err(|e| e.in_stage("score"))?;
                scores.insert(name, SplitScore::open(name, &r));
                open.push((name.clone(), r));
            }
        }
        entries.push(SplitEntry {
            name: name.clone(),
            policy: split.policy.to_string(),
            problem: match kind {
                ProblemKind::ClosedSet => "closed_set",
                ProblemKind::OpenSet => "open_set",
            }
            .into(),
            n_reference: split.reference.len(),
            n_query: split.query.len(),
            n_excluded: split.excluded.len(),
            universe: crate::evaluation::universe_fingerprint(split),
        });
    }

    let dated: Vec<PairDecision> = decisions
        .iter()
        .filter(|d| {
            [&d.image_a, &d.image_b]
                .iter()
                .all(|id| catalog.get(id).is_some_and(|r| r.date.is_some()))
        })
        .cloned()
        .collect();
    let curve = time_gap_curve(&dated, &catalog).map_err(|e| e.in_stage("score"))?;
    drop(dated);

    let mut bias = Vec::new();
    for spec in &cfg.splits {
        if let SplitSpecPolicy::RandomMatched { template, .. } = &spec.policy {
            let b = compare_splits(&scores[spec.name.as_str()], &scores[template.as_str()])
                .map_err(|e| e.in_stage("report"))?;
            bias.push(b);
        }
    }
    stages.push(StageStatus { stage: "score", cache_hit: true });

    // reports
    let report = |name: &str, f: &mut dyn FnMut(&mut BufWriter<fs::File>) -> Result<()>| {
        write_file(&reports_dir.join(name), |w| f(w)).map_err(|e| e.in_stage("report"))
    };
    report("dataset.csv", &mut |w| {
        w.write_all(stats_csv.as_bytes()).map_err(|e| Error::io("dataset.csv", e))
    })?;
    if !closed.is_empty() {
        let rows: Vec<(&str, &ClosedSetReport)> = closed.iter().map(|(n, r)| (n.as_str(), r)).collect();
        report("closed_set.csv", &mut |w| write_closed_reports(&rows, w))?;
    }
    if !open.is_empty() {
        let rows: Vec<(&str, &OpenSetReport)> = open.iter().map(|(n, r)| (n.as_str(), r)).collect();
        report("open_set.csv", &mut |w| write_open_reports(&rows, w))?;
    }
    report("time_gap.csv", &mut |w| curve.write(w))?;
    let png = reports_dir.join("time_gap.png");
    curve_png(&curve)
        .save(&png)
        .map_err(|source| Error::Decode { path: png.clone(), source }.in_stage("report"))?;
    if !bias.is_empty() {
        report("bias.csv", &mut |w| write_bias(&bias, w))?;
    }

    let manifest = RunManifest {
        tool: "reid".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        rng: synthgen::SYNTH_RNG.into(),
        seed: cfg.seed,
        synth_master_seed: match &cfg.catalog {
            CatalogSource::Synth(s) => Some(s.master_seed),
            CatalogSource::Manifest(_) => None,
        },
        config_hash: cfg.fingerprint(),
        catalog_hash: hex::encode(Sha256::digest(&manifest_bytes)),
        sift_params_hash: params_hash(&cfg.features),
        verify_params_hash: params_hash(&cfg.verify),
        blocking_top_k: cfg.blocking_top_k,
        max_hops: cfg.max_hops,
        n_images: ids.len(),
        n_pairs: decisions.len(),
        n_accepted,
        splits: entries,
    };
    report("run_manifest.json", &mut |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w).map_err(|e| Error::io("run_manifest.json", e))
    })?;

    Ok(RunSummary {
        out_dir: out.clone(),
        stages,
        closed,
        open,
        curve,
        bias,
        manifest,
    })
}
