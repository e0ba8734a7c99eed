//! `reid`: run the re-identification pipeline end to end or one stage at a time.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 stage failure.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use reid_core::catalog::{Catalog, Orientation};
use reid_core::evaluation::{
    read_report_scores, score_closed, score_open, write_closed_reports, write_open_reports, SplitScore,
};
use reid_core::features::{read_feature_set, FeatureCache, SiftParams};
use reid_core::geomverify::{load_decisions, save_decisions, VerifyParams};
use reid_core::matchgraph::{propagate_identities, PredictionSet};
use reid_core::par::{self, Execution};
use reid_core::pipeline::{
    candidate_pairs, compare_splits, extract_all, run_pipeline, split_graph, verify_all, write_bias, PipelineConfig,
};
use reid_core::splitgen::{
    classify_problem, random_split_matched, time_cutoff_split, time_proportion_split, validate_split, ProblemKind,
    QueryWindow, Split,
};
use reid_core::synthgen::{generate_dataset, SynthConfig};
use reid_core::Error;

const FEATURE_INDEX: &str = "index.csv";

#[derive(Parser)]
#[command(name = "reid", version, about = "Feature-based photo re-identification with time-aware splits")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic encounter dataset.
    Synth(SynthArgs),
    /// Validate a manifest and print dataset statistics.
    Ingest(IngestArgs),
    /// Build a reference/query split.
    Split(SplitArgs),
    /// Extract and cache keypoint features.
    Extract(ExtractArgs),
    /// Verify image pairs and write pair decisions.
    Verify(VerifyArgs),
    /// Build the match graph and propagate identities.
    Predict(PredictArgs),
    /// Score predictions against a split.
    Score(ScoreArgs),
    /// Run the whole pipeline from a config file and write the report bundle.
    Report(ReportArgs),
    /// Compare two scored splits over the same query set.
    Compare(CompareArgs),
}

#[derive(clap::Args)]
struct ExecArgs {
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

impl ExecArgs {
    fn execution(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        }
    }
}

#[derive(clap::Args)]
struct SynthArgs {
    /// TOML file with generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    individuals: Option<usize>,
    #[arg(long)]
    encounters: Option<usize>,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    image_size: Option<u32>,
    #[arg(long)]
    drift_rate: Option<f64>,
    /// Comma-separated poses, e.g. `left,top-left,top`.
    #[arg(long, value_delimiter = ',')]
    poses: Option<Vec<Orientation>>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(clap::Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Write the normalized manifest and stats here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    TimeProportion,
    TimeCutoff,
    RandomMatched,
}

#[derive(Clone, Copy, ValueEnum)]
enum WindowArg {
    OneYear,
    Unbounded,
}

#[derive(clap::Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    policy: PolicyArg,
    #[arg(long, default_value_t = 0.5)]
    proportion: f64,
    /// First query date, YYYY-MM-DD.
    #[arg(long)]
    cutoff: Option<NaiveDate>,
    #[arg(long, value_enum, default_value = "one-year")]
    window: WindowArg,
    /// Split file whose reference counts a random split matches.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Name recorded in the split file; defaults to the output file stem.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

/// Parameter sections of a pipeline config, usable without the rest of it.
#[derive(Deserialize, Default)]
struct ParamsFile {
    #[serde(default)]
    features: SiftParams,
    #[serde(default)]
    verify: VerifyParams,
    max_hops: Option<usize>,
    blocking_top_k: Option<usize>,
}

fn load_params(path: Option<&Path>) -> Result<ParamsFile, Error> {
    match path {
        None => Ok(ParamsFile::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

#[derive(clap::Args)]
struct ExtractArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Feature cache directory.
    #[arg(long)]
    out: PathBuf,
    /// Only images in this split's reference and query sets.
    #[arg(long)]
    split: Option<PathBuf>,
    /// Pipeline config to take `[features]` from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_keypoints: Option<usize>,
    #[arg(long)]
    no_upsample: bool,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Directory written by `reid extract`.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Pipeline config to take `[verify]` and `blocking_top_k` from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_residual: Option<f64>,
    #[arg(long)]
    blocking_top_k: Option<usize>,
    #[arg(long)]
    cross_check: bool,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(clap::Args)]
struct PredictArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    decisions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write the edge list and component summary here.
    #[arg(long)]
    graph_dir: Option<PathBuf>,
    /// Pipeline config to take `max_hops` from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_hops: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Auto,
    Closed,
    Open,
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auto")]
    kind: KindArg,
}

#[derive(clap::Args)]
struct ReportArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    blocking_top_k: Option<usize>,
    #[arg(long)]
    max_hops: Option<usize>,
    #[arg(long)]
    max_residual: Option<f64>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CompareArgs {
    /// Report file holding the first split (usually the random one).
    #[arg(long)]
    a: PathBuf,
    /// Report file holding the second split (usually the time-aware one).
    #[arg(long)]
    b: PathBuf,
    /// Row to take from `--a`; needed when it has several.
    #[arg(long)]
    split_a: Option<String>,
    #[arg(long)]
    split_b: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Ingest(a) => ingest(a),
        Command::Split(a) => split(a),
        Command::Extract(a) => extract(a),
        Command::Verify(a) => verify(a),
        Command::Predict(a) => predict(a),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
        Command::Compare(a) => compare(a),
    }
}

fn ensure_parent(path: &Path) -> Result<(), Error> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, Error> {
    ensure_parent(path)?;
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(e.to_string()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(v) = a.individuals {
        cfg.n_individuals = v;
    }
    if let Some(v) = a.encounters {
        cfg.encounters_per_individual = v;
    }
    if let Some(v) = a.images {
        cfg.images_per_encounter = v;
    }
    if let Some(v) = a.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = a.image_size {
        cfg.image_size = v;
    }
    if let Some(v) = a.drift_rate {
        cfg.drift_rate = v;
    }
    if let Some(v) = a.poses {
        cfg.poses = v;
    }
    let exec = a.exec.execution();
    let out = par::with_workers(a.exec.workers, || generate_dataset(&cfg, &a.out, exec))?;
    println!(
        "wrote {} images to {} ({})",
        out.catalog.len(),
        a.out.display(),
        out.manifest_path.display()
    );
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let s = catalog.compute_stats();
    println!(
        "images {}  individuals {}  encounters {}  span {} days  dated {:.1}%",
        s.n_image,
        s.n_indiv,
        s.n_enc,
        s.span_days,
        s.timestamp_coverage * 100.0
    );
    if let Some(dir) = a.out {
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        catalog.save_manifest(dir.join("manifest.csv"))?;
        let mut w = create_file(&dir.join("stats.csv"))?;
        writeln!(
            w,
            "n_image,n_indiv,n_enc,span_days,timestamp_coverage\n{},{},{},{},{:.6}",
            s.n_image, s.n_indiv, s.n_enc, s.span_days, s.timestamp_coverage
        )
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(&dir, e))?;
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let mut split = match a.policy {
        PolicyArg::TimeProportion => time_proportion_split(&catalog, a.proportion)?,
        PolicyArg::TimeCutoff => {
            let cutoff = a
                .cutoff
                .ok_or_else(|| Error::Config("--cutoff is required for time-cutoff".into()))?;
            let window = match a.window {
                WindowArg::OneYear => QueryWindow::OneYear,
                WindowArg::Unbounded => QueryWindow::Unbounded,
            };
            time_cutoff_split(&catalog, cutoff, window)?
        }
        PolicyArg::RandomMatched => {
            let t = a
                .template
                .as_ref()
                .ok_or_else(|| Error::Config("--template is required for random-matched".into()))?;
            random_split_matched(&catalog, &Split::load(t)?, a.seed)?
        }
    };
    split.name = a
        .name
        .clone()
        .or_else(|| a.out.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| split.policy.name().to_string());
    let report = validate_split(&split, &catalog);
    for f in &report.findings {
        log::warn!("{f:?}");
    }
    if !report.is_usable() {
        return Err(Error::UnusableSplit(format!("{} findings", report.findings.len())));
    }
    ensure_parent(&a.out)?;
    split.save(&a.out)?;
    let class = classify_problem(&split, &catalog);
    println!(
        "{}: reference {}  query {}  excluded {}  {}",
        split.name,
        split.reference.len(),
        split.query.len(),
        split.excluded.len(),
        match class.kind {
            ProblemKind::ClosedSet => "closed set".to_string(),
            ProblemKind::OpenSet => format!("open set, {} new individuals", class.new_individual_ids.len()),
        }
    );
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let mut params = load_params(a.config.as_deref())?.features;
    if a.max_keypoints.is_some() {
        params.max_keypoints = a.max_keypoints;
    }
    if a.no_upsample {
        params.upsample = false;
    }
    let ids: Vec<String> = match &a.split {
        Some(p) => {
            let s = Split::load(p)?;
            s.reference.iter().chain(&s.query).cloned().collect::<BTreeSet<_>>().into_iter().collect()
        }
        None => catalog
            .records()
            .iter()
            .map(|r| r.image_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let cache = FeatureCache::new(&a.out)?;
    let exec = a.exec.execution();
    let (feats, stems, stats) = par::with_workers(a.exec.workers, || extract_all(&catalog, &ids, &params, &cache, exec))?;
    let mut w = csv::Writer::from_writer(create_file(&a.out.join(FEATURE_INDEX))?);
    w.write_record(["image_id", "cache_file", "width", "height", "n_keypoints"])?;
    for ((id, stem), f) in ids.iter().zip(&stems).zip(&feats) {
        w.write_record([
            id.clone(),
            format!("{stem}.wrfs"),
            f.width.to_string(),
            f.height.to_string(),
            f.len().to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    println!("{} images, {} from cache", stats.n_images, stats.cache_hits);
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let params_file = load_params(a.config.as_deref())?;
    let mut params = params_file.verify;
    if a.max_residual.is_some() {
        params.max_residual = a.max_residual;
    }
    if a.cross_check {
        params.matching.cross_check = true;
    }
    let blocking = a.blocking_top_k.or(params_file.blocking_top_k);

    let index = a.features.join(FEATURE_INDEX);
    let mut rdr = csv::Reader::from_path(&index)?;
    let mut rows: Vec<(String, PathBuf, u32, u32)> = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let num = |i: usize| {
            row[i]
                .parse::<u32>()
                .map_err(|_| Error::Cache(format!("bad size `{}` in {}", &row[i], index.display())))
        };
        if !catalog.contains(&row[0]) {
            return Err(Error::UnknownImage(row[0].to_string()));
        }
        rows.push((row[0].to_string(), a.features.join(&row[1]), num(2)?, num(3)?));
    }
    rows.sort_by(|x, y| x.0.cmp(&y.0));
    let ids: Vec<String> = rows.iter().map(|r| r.0.clone()).collect();
    let feats = rows
        .iter()
        .map(|(_, path, w, h)| {
            let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_feature_set(io::BufReader::new(f), *w, *h)
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let pairs = candidate_pairs(&feats, blocking);
    let exec = a.exec.execution();
    let decisions = par::with_workers(a.exec.workers, || verify_all(&ids, &feats, &pairs, &params, exec));
    ensure_parent(&a.out)?;
    save_decisions(&decisions, &a.out)?;
    let accepted = decisions.iter().filter(|d| d.decision.accepted).count();
    println!("{} pairs verified, {} accepted", decisions.len(), accepted);
    Ok(())
}

fn predict(a: PredictArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let split = Split::load(&a.split)?;
    let decisions = load_decisions(&a.decisions)?;
    for d in &decisions {
        for id in [&d.image_a, &d.image_b] {
            if !catalog.contains(id) {
                return Err(Error::UnknownImage(id.clone()));
            }
        }
    }
    let max_hops = a.max_hops.or(load_params(a.config.as_deref())?.max_hops);
    let graph = split_graph(&decisions, &split)?;
    let preds = propagate_identities(&graph, &split, &catalog, max_hops);
    let mut w = create_file(&a.out)?;
    preds.write(&mut w)?;
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if let Some(dir) = &a.graph_dir {
        let mut e = create_file(&dir.join("edges.txt"))?;
        graph
            .write_edge_list(&mut e)
            .and_then(|_| e.flush())
            .map_err(|err| Error::io(dir, err))?;
        let mut c = create_file(&dir.join(format!("{}_components.csv", split.name)))?;
        graph.write_components(&split, &catalog, &mut c)?;
        c.flush().map_err(|err| Error::io(dir, err))?;
    }
    println!(
        "{} of {} query images predicted, {} conflicting components",
        preds.n_predicted(),
        split.query.len(),
        preds.conflicts.len()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<(), Error> {
    let catalog = Catalog::ingest_manifest(&a.manifest)?;
    let split = Split::load(&a.split)?;
    let f = fs::File::open(&a.predictions).map_err(|e| Error::io(&a.predictions, e))?;
    let preds = PredictionSet::read(io::BufReader::new(f))?;
    let open = match a.kind {
        KindArg::Auto => classify_problem(&split, &catalog).kind == ProblemKind::OpenSet,
        KindArg::Closed => false,
        KindArg::Open => true,
    };
    let mut buf = Vec::new();
    if open {
        let r = score_open(&preds, &split, &catalog)?;
        println!("{}: {r}", split.name);
        write_open_reports(&[(split.name.as_str(), &r)], &mut buf)?;
    } else {
        let r = score_closed(&preds, &split, &catalog)?;
        println!("{}: {r}", split.name);
        write_closed_reports(&[(split.name.as_str(), &r)], &mut buf)?;
    }
    if let Some(out) = &a.out {
        let mut w = create_file(out)?;
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<(), Error> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(v) = a.out_dir {
        cfg.out_dir = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.workers.is_some() {
        cfg.workers = a.workers;
    }
    if a.sequential {
        cfg.execution = Execution::Sequential;
    }
    if a.blocking_top_k.is_some() {
        cfg.blocking_top_k = a.blocking_top_k;
    }
    if a.max_hops.is_some() {
        cfg.max_hops = a.max_hops;
    }
    if a.max_residual.is_some() {
        cfg.verify.max_residual = a.max_residual;
    }
    if a.cache_dir.is_some() {
        cfg.cache_dir = a.cache_dir;
    }
    let summary = run_pipeline(&cfg)?;
    for s in &summary.stages {
        log::info!("{}: {}", s.stage, if s.cache_hit { "cached" } else { "computed" });
    }
    for (name, r) in &summary.closed {
        println!("{name}: {r}");
    }
    for (name, r) in &summary.open {
        println!("{name}: {r}");
    }
    for b in &summary.bias {
        if let Some(ratio) = b.recall_ratio {
            println!("{} vs {}: recall ratio {ratio:.2}", b.split_a, b.split_b);
        }
    }
    println!("reports in {}", summary.out_dir.join("reports").display());
    Ok(())
}

fn pick(path: &Path, name: Option<&str>) -> Result<SplitScore, Error> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_report_scores(io::BufReader::new(f))?;
    match name {
        Some(n) => rows
            .into_iter()
            .find(|r| r.split == n)
            .ok_or_else(|| Error::Config(format!("no split `{n}` in {}", path.display()))),
        None if rows.len() == 1 => Ok(rows.into_iter().next().unwrap()),
        None => Err(Error::Config(format!(
            "{} holds {} splits; pick one with --split-a/--split-b",
            path.display(),
            rows.len()
        ))),
    }
}

fn compare(a: CompareArgs) -> Result<(), Error> {
    let sa = pick(&a.a, a.split_a.as_deref())?;
    let sb = pick(&a.b, a.split_b.as_deref())?;
    let bias = compare_splits(&sa, &sb).map_err(|e| Error::Config(e.to_string()))?;
    let mut buf = Vec::new();
    write_bias(std::slice::from_ref(&bias), &mut buf)?;
    io::stdout().write_all(&buf).map_err(|e| Error::io("<stdout>", e))?;
    if let Some(out) = &a.out {
        let mut w = create_file(out)?;
        w.write_all(&buf).and_then(|_| w.flush()).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
