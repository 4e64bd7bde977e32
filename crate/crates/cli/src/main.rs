//! `blendmorph`: simulate ternary blends, sweep compositions, cluster the
//! resulting morphologies, train composition-to-morphology classifiers and
//! render prediction maps.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::de::DeserializeOwned;
use serde::Serialize;

use blendmorph::gpc::{prediction_map, AugmentationConfig, GpcModel, DEFAULT_LENGTH_SCALE};
use blendmorph::imaging::{render_rgb, save_png};
use blendmorph::mlkit::{
    affinity_propagation, elbow_select, kmeans, pca_fit, pca_transform, read_labels, write_labels,
    AffinityConfig, LabelRow,
};
use blendmorph::pipeline::{
    labeled_slices, load_features, rule_labels, scatter_image, train_slice, LengthScale,
    SliceReport,
};
use blendmorph::snapshot::{write_gibbs_csv, write_snapshot};
use blendmorph::solver::{run, SimConfig};
use blendmorph::sweep::{read_manifest, run_sweep, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "blendmorph",
    version,
    about = "Ternary polymer-blend morphology pipeline"
)]
struct Cli {
    /// JSON configuration file (simulation config or sweep spec).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation.
    Simulate,
    /// Run a parameter sweep.
    Sweep(SweepArgs),
    /// Reduce and cluster the morphology images of a sweep.
    Cluster(ClusterArgs),
    /// Train one classifier per interaction-parameter slice.
    Train(TrainArgs),
    /// Render a composition map from a trained classifier.
    PredictMap(MapArgs),
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sweep spec (falls back to --config).
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Worker threads (overrides the spec).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Method {
    PcaKmeans,
    Affinity,
    Rule,
}

#[derive(Debug, Args, Serialize)]
struct ClusterArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum, default_value = "pca-kmeans")]
    method: Method,
    /// Retained principal components.
    #[arg(long, default_value_t = 10)]
    q: usize,
    /// Candidate cluster counts, `MIN..MAX`.
    #[arg(long, default_value = "1..8", value_parser = parse_k_range)]
    k_range: (usize, usize),
    /// Affinity-propagation preference (default: median similarity).
    #[arg(long, allow_hyphen_values = true)]
    preference: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    damping: f64,
    /// Side length of the resampled images.
    #[arg(long, default_value_t = 200)]
    image_size: u32,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// `run_id,label` CSV.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value_t = DEFAULT_LENGTH_SCALE)]
    length_scale: f64,
    /// Choose the length scale by marginal likelihood instead.
    #[arg(long)]
    optimize_length_scale: bool,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
struct MapArgs {
    #[arg(long)]
    model: PathBuf,
    /// `LO,HI`.
    #[arg(long, default_value = "0.1,0.8", value_parser = parse_range)]
    a0_range: (f64, f64),
    /// `LO,HI`.
    #[arg(long, default_value = "0.1,0.45", value_parser = parse_range)]
    b0_range: (f64, f64),
    /// `NAxNB` grid points.
    #[arg(long, default_value = "71x36", value_parser = parse_resolution)]
    resolution: (usize, usize),
}

fn parse_k_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let (lo, hi) = s
        .split_once("..")
        .ok_or_else(|| format!("expected MIN..MAX, got {s:?}"))?;
    let lo = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    Ok((
        lo.trim().parse().map_err(|e| format!("{e}"))?,
        hi.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn parse_resolution(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once('x')
        .ok_or_else(|| format!("expected NAxNB, got {s:?}"))?;
    Ok((
        a.trim().parse().map_err(|e| format!("{e}"))?,
        b.trim().parse().map_err(|e| format!("{e}"))?,
    ))
}

fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        anyhow::anyhow!(
            "{}: invalid value at `{}`: {}",
            path.display(),
            e.path(),
            e.inner()
        )
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Serialize)]
struct SimSummary<'a> {
    state_id: &'a str,
    completed: bool,
    diverged_at: Option<f64>,
    divergence_reason: Option<&'a str>,
    final_step: usize,
    final_t: f64,
    gibbs_first: f64,
    gibbs_last: f64,
    physical_time_unit_s: f64,
}

fn simulate(cli: &Cli) -> Result<()> {
    let path = cli.config.as_ref().context("simulate needs --config")?;
    let mut cfg: SimConfig = load_json(path)?;
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    cfg.validate()?;
    let out = out_dir(cli);
    create_dir(&out.join("snapshots"))?;
    write_json(&out.join("config_resolved.json"), &cfg)?;

    let res = run(&cfg)?;
    for s in &res.snapshots {
        write_snapshot(
            &out.join(format!("snapshots/step{:08}.chsnap", s.step)),
            &s.fields,
        )?;
    }
    let last = res.final_snapshot();
    write_snapshot(&out.join("final.chsnap"), &last.fields)?;
    save_png(&out.join("final.png"), &render_rgb(&last.fields))?;
    write_gibbs_csv(&out.join("gibbs.csv"), &res.gibbs_trace)?;
    let summary = SimSummary {
        state_id: res.state_id.as_str(),
        completed: res.completed(),
        diverged_at: res.diverged_at,
        divergence_reason: res.divergence_reason.as_deref(),
        final_step: last.step,
        final_t: last.t,
        gibbs_first: res.gibbs_trace[0].gibbs,
        gibbs_last: res.gibbs_trace[res.gibbs_trace.len() - 1].gibbs,
        physical_time_unit_s: cfg.params.physical_time_unit(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    info!("wall time {:.2} s", res.wall_time);
    println!(
        "state {} (t = {}, G {:e} -> {:e})",
        summary.state_id, summary.final_t, summary.gibbs_first, summary.gibbs_last
    );
    Ok(())
}

fn sweep(cli: &Cli, args: &SweepArgs) -> Result<()> {
    let path = args
        .spec
        .as_ref()
        .or(cli.config.as_ref())
        .context("sweep needs --spec or --config")?;
    let mut spec: SweepSpec = load_json(path)?;
    if let Some(out) = &cli.out {
        spec.out_dir = out.clone();
    }
    if let Some(jobs) = args.jobs {
        spec.parallelism = jobs;
    }
    if let Some(seed) = cli.seed {
        spec.base.base_seed = seed;
    }
    spec.validate()?;
    create_dir(&spec.out_dir)?;
    write_json(&spec.out_dir.join("config_resolved.json"), &spec)?;
    let outcome = run_sweep(&spec)?;
    let t = outcome.tally();
    println!(
        "{} runs ({} skipped): State1 {} State2 {} State3a {} State3b {}",
        outcome.records.len(),
        outcome.skipped.len(),
        t[0],
        t[1],
        t[2],
        t[3]
    );
    println!("manifest {}", outcome.manifest_path.display());
    Ok(())
}

#[derive(Serialize)]
struct ClusterSummary {
    method: Method,
    n_samples: usize,
    k: usize,
    flat_elbow: Option<bool>,
    converged: bool,
}

fn cluster(cli: &Cli, args: &ClusterArgs) -> Result<()> {
    let out = out_dir(cli);
    create_dir(&out)?;
    write_json(
        &out.join("config_resolved.json"),
        &(args, cli.seed.unwrap_or(0)),
    )?;
    if read_manifest(&args.manifest)?.is_empty() {
        bail!("{} lists no runs", args.manifest.display());
    }
    if args.method == Method::Rule {
        let labels = rule_labels(&args.manifest)?;
        write_labels(&out.join("labels.csv"), &labels)?;
        let mut classes: Vec<usize> = labels.iter().map(|l| l.label).collect();
        classes.sort_unstable();
        classes.dedup();
        write_json(
            &out.join("cluster_summary.json"),
            &ClusterSummary {
                method: args.method,
                n_samples: labels.len(),
                k: classes.len(),
                flat_elbow: None,
                converged: true,
            },
        )?;
        println!(
            "{} runs labelled into {} classes",
            labels.len(),
            classes.len()
        );
        return Ok(());
    }

    let (_, ds) = load_features(&args.manifest, args.image_size)?;
    let q = args.q.clamp(1, (ds.n_samples() - 1).min(ds.n_features()));
    let pca = pca_fit(&ds.x, q)?;
    pca.save(&out.join("pca.pcam"))?;
    let scores = pca_transform(&pca, &ds.x)?;
    let seed = cli.seed.unwrap_or(0);

    let (result, flat) = match args.method {
        Method::PcaKmeans => {
            let (k_min, k_max) = args.k_range;
            let k_max = k_max.min(ds.n_samples());
            let elbow = elbow_select(&scores, k_min, k_max, seed)?;
            let mut w = csv::Writer::from_path(out.join("wcss.csv"))?;
            w.write_record(["k", "wcss"])?;
            for (k, v) in &elbow.curve {
                w.write_record([k.to_string(), v.to_string()])?;
            }
            w.flush()?;
            (kmeans(&scores, elbow.k_star, seed)?, Some(elbow.flat))
        }
        _ => {
            let cfg = AffinityConfig {
                preference: args.preference,
                damping: args.damping,
                seed,
                ..AffinityConfig::default()
            };
            (affinity_propagation(&scores, cfg)?, None)
        }
    };
    let rows: Vec<LabelRow> = ds
        .ids
        .iter()
        .zip(&result.labels)
        .map(|(id, &label)| LabelRow {
            run_id: id.clone(),
            label,
        })
        .collect();
    write_labels(&out.join("labels.csv"), &rows)?;
    save_png(
        &out.join("scatter.png"),
        &scatter_image(&scores, &result.labels, 400),
    )?;
    write_json(
        &out.join("cluster_summary.json"),
        &ClusterSummary {
            method: args.method,
            n_samples: ds.n_samples(),
            k: result.k,
            flat_elbow: flat,
            converged: result.converged,
        },
    )?;
    println!("{} samples in {} clusters", ds.n_samples(), result.k);
    Ok(())
}

#[derive(Serialize)]
struct TrainEntry {
    chi: [f64; 3],
    model_path: Option<String>,
    error: Option<String>,
    report: Option<SliceReport>,
}

fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let out = out_dir(cli);
    create_dir(&out)?;
    let seed = cli.seed.unwrap_or(0);
    write_json(&out.join("config_resolved.json"), &(args, seed))?;
    let records = read_manifest(&args.manifest)?;
    let labels = read_labels(&args.labels)?;
    let slices = labeled_slices(&records, &labels)?;
    let aug = AugmentationConfig::default();
    let ell = if args.optimize_length_scale {
        LengthScale::Optimized
    } else {
        LengthScale::Fixed(args.length_scale)
    };
    let mut entries = Vec::new();
    for (i, (chi, pts)) in slices.iter().enumerate() {
        match train_slice(*chi, pts, args.test_fraction, seed, ell, &aug) {
            Ok((model, report)) => {
                let name = format!("gpc_slice{i}.gpcm");
                model.save(&out.join(&name))?;
                println!(
                    "slice chi=({}, {}, {}): test accuracy {:.3} on {} held-out runs",
                    chi[0], chi[1], chi[2], report.accuracy, report.n_test
                );
                entries.push(TrainEntry {
                    report: Some(report),
                    chi: *chi,
                    model_path: Some(name),
                    error: None,
                });
            }
            Err(e) => {
                log::warn!("slice chi={chi:?} not trained: {e}");
                println!(
                    "slice chi=({}, {}, {}): not trained ({e})",
                    chi[0], chi[1], chi[2]
                );
                entries.push(TrainEntry {
                    report: None,
                    chi: *chi,
                    model_path: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    write_json(&out.join("train_summary.json"), &entries)?;
    if entries.iter().all(|e| e.error.is_some()) {
        bail!("no slice could be trained");
    }
    Ok(())
}

fn predict_map(cli: &Cli, args: &MapArgs) -> Result<()> {
    let out = out_dir(cli);
    create_dir(&out)?;
    write_json(&out.join("config_resolved.json"), args)?;
    let model = GpcModel::load(&args.model)?;
    let map = prediction_map(&model, args.a0_range, args.b0_range, args.resolution)?;
    map.write_csv(&out.join("map.csv"))?;
    map.write_png(&out.join("map.png"))?;
    println!(
        "map {}x{} over a0 {:?}, b0 {:?} with {} classes",
        map.na,
        map.nb,
        args.a0_range,
        args.b0_range,
        map.classes.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let outcome = match &cli.command {
        Command::Simulate => simulate(&cli),
        Command::Sweep(a) => sweep(&cli, a),
        Command::Cluster(a) => cluster(&cli, a),
        Command::Train(a) => train(&cli, a),
        Command::PredictMap(a) => predict_map(&cli, a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
