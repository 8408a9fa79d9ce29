//! Command-line front end: synthetic data, the individual stages, training
//! and evaluation. Every output is a deterministic function of the inputs
//! and `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use vertid::cluster::{cluster_detections, ClusterConfig};
use vertid::domain::io::{
    load_case, load_detections, load_params, parse_json, read_text, save_case, save_detections, save_params,
    to_json, to_json_pretty, write_text,
};
use vertid::domain::{FusionParams, SpineCase, VertebraLabel};
use vertid::fusion::{fuse, initial_params, train_phi, PhiInit, TrainConfig};
use vertid::harness::{
    decode, evaluate, gen_cases, predict, ConfusionModel, Decode, DetectConfig, EvalReport, GenConfig, McConfig,
};
use vertid::losses::{sequence_loss, supcon_grad_rows, supcon_loss_rows, DEFAULT_TAU};
use vertid::uncertainty::{annotate_case, WeightMetric};
use vertid::{label_from_name, DistanceMode, Error, Result};

const CASE_SUFFIX: &str = ".case.json";
const DETECTIONS_SUFFIX: &str = ".detections.jsonl";

#[derive(Parser)]
#[command(name = "vertid", version, about = "Vertebra identification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of cases and detections.
    Gen(GenArgs),
    /// Cluster slice detections into ordered vertebra centers.
    Cluster(ClusterArgs),
    /// Attach uncertainty reports to every vertebra of a case.
    Uncertainty(UncertaintyArgs),
    /// Refine a case's label confidences by message fusion.
    Fuse(FuseArgs),
    /// Train the fusion matrices on a directory of labeled cases.
    TrainPhi(TrainArgs),
    /// Print the sequence loss of a label sequence.
    Score(ScoreArgs),
    /// Print the supervised contrastive loss of an embedding batch.
    Supcon(SupconArgs),
    /// Evaluate predictions on a directory of labeled cases.
    Eval(EvalArgs),
    /// Cluster, score uncertainty, fuse and evaluate a generated directory.
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Entropy,
    Variance,
}

impl From<MetricArg> for WeightMetric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Entropy => WeightMetric::Entropy,
            MetricArg::Variance => WeightMetric::Variance,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DistanceArg {
    Index,
    Physical,
}

impl From<DistanceArg> for DistanceMode {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Index => DistanceMode::Index,
            DistanceArg::Physical => DistanceMode::Physical,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DecodeArg {
    Argmax,
    Constrained,
}

impl From<DecodeArg> for Decode {
    fn from(d: DecodeArg) -> Self {
        match d {
            DecodeArg::Argmax => Decode::Argmax,
            DecodeArg::Constrained => Decode::Constrained,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Identity,
    #[value(name = "uniform_small")]
    UniformSmall,
}

impl From<InitArg> for PhiInit {
    fn from(i: InitArg) -> Self {
        match i {
            InitArg::Identity => PhiInit::Identity,
            InitArg::UniformSmall => PhiInit::UniformSmall,
        }
    }
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n_cases: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Full generator configuration as JSON; the flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_slices: Option<usize>,
    #[arg(long)]
    min_vertebrae: Option<usize>,
    #[arg(long)]
    max_vertebrae: Option<usize>,
    /// Probability mass on the true label; with --adjacent-mass rebuilds the confusion model.
    #[arg(long)]
    true_mass: Option<f64>,
    #[arg(long)]
    adjacent_mass: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    concentration: Option<f64>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long)]
    miss_rate: Option<f64>,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    knobs: ClusterKnobs,
}

#[derive(Args, Clone)]
struct ClusterKnobs {
    #[arg(long)]
    eps_pos: Option<f64>,
    #[arg(long)]
    min_pts: Option<usize>,
    #[arg(long)]
    eps_dim: Option<f64>,
    #[arg(long)]
    density_floor: Option<f64>,
}

impl ClusterKnobs {
    fn config(&self, ds: &vertid::Detections) -> Result<vertid::ClusterConfig> {
        let mut cfg = ClusterConfig::default_for(ds)?;
        if let Some(x) = self.eps_pos {
            cfg.eps_pos = x;
        }
        if let Some(x) = self.min_pts {
            cfg.min_pts = x;
        }
        if let Some(x) = self.eps_dim {
            cfg.eps_dim = x;
        }
        if let Some(x) = self.density_floor {
            cfg.density_floor = x;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct UncertaintyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "entropy")]
    metric: MetricArg,
}

#[derive(Args, Clone)]
struct FusionKnobs {
    /// Trained matrices; without it the identity matrices are used.
    #[arg(long)]
    params: Option<PathBuf>,
    #[arg(long)]
    hops: Option<usize>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long, value_enum)]
    distance: Option<DistanceArg>,
    #[arg(long, value_enum, default_value = "entropy")]
    metric: MetricArg,
    #[arg(long, value_enum, default_value = "argmax")]
    decode: DecodeArg,
}

impl FusionKnobs {
    fn params(&self) -> Result<vertid::Params> {
        let mut p = match &self.params {
            Some(path) => {
                let p: vertid::Params = load_params(path)?;
                if let Some(w) = self.window {
                    if w != p.window {
                        return Err(Error::Domain(format!(
                            "--window {w} differs from the window {} of {}",
                            p.window,
                            path.display()
                        )));
                    }
                }
                p
            }
            None => FusionParams::identity(
                self.theta.unwrap_or(0.1),
                self.hops.unwrap_or(3),
                self.window.unwrap_or(5),
                DistanceMode::Index,
            )?,
        };
        if let Some(t) = self.theta {
            p.theta = t;
        }
        if let Some(h) = self.hops {
            p.hops = h;
        }
        if let Some(d) = self.distance {
            p.distance_mode = d.into();
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    case: PathBuf,
    #[command(flatten)]
    knobs: FusionKnobs,
    /// Per-hop confidence snapshots.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of labeled `*.case.json` files.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_enum, default_value = "identity")]
    init: InitArg,
    #[arg(long, default_value_t = 100.0)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    theta: f64,
    #[arg(long, default_value_t = 3)]
    hops: usize,
    #[arg(long, default_value_t = 5)]
    window: usize,
    #[arg(long, value_enum, default_value = "index")]
    distance: DistanceArg,
    #[arg(long, value_enum, default_value = "entropy")]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch loss table.
    #[arg(long)]
    dump_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Comma-separated labels, as indices 0..23 or names such as T4.
    #[arg(long)]
    seq: String,
}

#[derive(Args)]
struct SupconArgs {
    /// JSON object with `vectors`, `labels` and optionally `tau`.
    #[arg(long = "in")]
    input: PathBuf,
    /// Temperature; overrides the file's value.
    #[arg(long)]
    tau: Option<f64>,
    /// Also print the gradient with respect to every embedding.
    #[arg(long)]
    grad: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of labeled `*.case.json` files.
    #[arg(long)]
    cases: PathBuf,
    /// Fuse before decoding; the flags below override the file.
    #[arg(long)]
    fuse: bool,
    #[command(flatten)]
    knobs: FusionKnobs,
    /// Full report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-class table as CSV.
    #[arg(long)]
    dump_csv: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    /// Directory written by `gen`.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cluster: ClusterKnobs,
    #[command(flatten)]
    knobs: FusionKnobs,
    #[arg(long)]
    dump_csv: Option<PathBuf>,
}

#[derive(Serialize)]
struct LabelsFile<'a> {
    case_id: &'a str,
    labels: Vec<VertebraLabel>,
}

#[derive(Deserialize)]
struct BatchFile {
    vectors: Vec<Vec<f64>>,
    labels: Vec<VertebraLabel>,
    #[serde(default)]
    tau: Option<f64>,
}

#[derive(Serialize)]
struct PipelineSummary {
    cases: usize,
    cluster_count_matches: usize,
    baseline: EvalReport,
    fused: EvalReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Uncertainty(a) => cmd_uncertainty(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::TrainPhi(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Supcon(a) => cmd_supcon(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Stems of the files in `dir` ending in `suffix`, sorted.
fn stems(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_error(dir, e))? {
        let entry = entry.map_err(|e| io_error(dir, e))?;
        if let Some(stem) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            out.push(stem.to_string());
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(Error::Domain(format!("no *{suffix} files in {}", dir.display())));
    }
    Ok(out)
}

fn load_dir(dir: &Path) -> Result<Vec<vertid::Case>> {
    stems(dir, CASE_SUFFIX)?
        .iter()
        .map(|s| load_case(&dir.join(format!("{s}{CASE_SUFFIX}"))))
        .collect()
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => parse_json(&read_text(p)?)?,
        None => GenConfig::default(),
    };
    cfg.seed = a.seed;
    cfg.n_cases = a.n_cases;
    if let Some(k) = a.k_slices {
        cfg.k_slices = k;
    }
    if let Some(lo) = a.min_vertebrae {
        cfg.vertebrae_range.0 = lo;
    }
    if let Some(hi) = a.max_vertebrae {
        cfg.vertebrae_range.1 = hi;
    }
    if a.true_mass.is_some() || a.adjacent_mass.is_some() {
        cfg.confusion = ConfusionModel::from_masses(
            a.true_mass.unwrap_or(cfg.confusion.true_mass),
            a.adjacent_mass.unwrap_or(cfg.confusion.adjacent1_mass),
        );
    }
    cfg.mc = McConfig {
        samples: a.samples.unwrap_or(cfg.mc.samples),
        concentration: a.concentration.unwrap_or(cfg.mc.concentration),
    };
    cfg.detect = DetectConfig {
        noise_rate: a.noise_rate.unwrap_or(cfg.detect.noise_rate),
        miss_rate: a.miss_rate.unwrap_or(cfg.detect.miss_rate),
        ..cfg.detect
    };
    let generated = gen_cases(&cfg)?;
    write_text(&a.out.join("gen_config.json"), &to_json_pretty(&cfg))?;
    for g in &generated {
        let id = &g.case.case_id;
        save_case(&g.case, &a.out.join(format!("{id}{CASE_SUFFIX}")))?;
        save_detections(&g.detections, &a.out.join(format!("{id}{DETECTIONS_SUFFIX}")))?;
    }
    println!("wrote {} cases to {}", generated.len(), a.out.display());
    Ok(())
}

fn cmd_cluster(a: ClusterArgs) -> Result<()> {
    let ds: vertid::Detections = load_detections(&a.input)?;
    let cfg = a.knobs.config(&ds)?;
    let c = cluster_detections(&ds, &cfg)?;
    write_text(&a.out, &to_json_pretty(&c.centers))?;
    println!(
        "{} centers from {} boxes (dropped: {} density, {} position, {} dimension)",
        c.centers.len(),
        ds.detections.len(),
        c.dropped.density,
        c.dropped.position,
        c.dropped.dimension
    );
    Ok(())
}

fn cmd_uncertainty(a: UncertaintyArgs) -> Result<()> {
    let mut case: vertid::Case = load_case(&a.input)?;
    annotate_case(&mut case, a.metric.into())?;
    save_case(&case, &a.out)?;
    for (i, v) in case.vertebrae.iter().enumerate() {
        let u = v.uncertainty.as_ref().expect("annotated");
        println!(
            "{i} entropy {} variance {} weight {}",
            u.entropy, u.variance, u.certainty_weight
        );
    }
    Ok(())
}

fn cmd_fuse(a: FuseArgs) -> Result<()> {
    let case: vertid::Case = load_case(&a.case)?;
    let params = a.knobs.params()?;
    let trace = fuse(&case, &params, a.knobs.metric.into())?;
    let labels = decode(trace.last(), a.knobs.decode.into())?;
    if let Some(path) = &a.trace {
        write_text(path, &to_json(&trace))?;
    }
    write_text(
        &a.out,
        &to_json_pretty(&LabelsFile {
            case_id: &case.case_id,
            labels: labels.clone(),
        }),
    )?;
    println!("{}", labels.iter().map(|l| l.name()).collect::<Vec<_>>().join(","));
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cases = load_dir(&a.train)?;
    let init = initial_params(a.theta, a.hops, a.window, a.distance.into(), a.init.into(), a.seed)?;
    let cfg = TrainConfig {
        learning_rate: a.lr,
        epochs: a.epochs,
        seed: a.seed,
        init: a.init.into(),
    };
    let report = train_phi(&cases, &init, &cfg, a.metric.into())?;
    save_params(&report.params, &a.out)?;
    if let Some(path) = &a.dump_csv {
        let mut csv = String::from("epoch,loss\n");
        for (e, l) in report.history.iter().enumerate() {
            csv.push_str(&format!("{e},{l}\n"));
        }
        write_text(path, &csv)?;
    }
    println!(
        "trained on {} cases: loss {} -> {}",
        cases.len(),
        report.initial_loss,
        report.best_loss
    );
    Ok(())
}

fn parse_label(token: &str) -> Result<usize> {
    let t = token.trim();
    match t.parse::<usize>() {
        Ok(i) => VertebraLabel::new(i).map(|l| l.index()),
        Err(_) => label_from_name(t).map(|l| l.index()),
    }
}

fn cmd_score(a: ScoreArgs) -> Result<()> {
    let seq = a.seq.split(',').map(parse_label).collect::<Result<Vec<_>>>()?;
    println!("{}", sequence_loss(&seq)?);
    Ok(())
}

fn cmd_supcon(a: SupconArgs) -> Result<()> {
    let batch: BatchFile = parse_json(&read_text(&a.input)?)?;
    let tau = a.tau.or(batch.tau).unwrap_or(DEFAULT_TAU);
    let loss = supcon_loss_rows(&batch.vectors, &batch.labels, tau)?;
    println!("loss {loss}");
    if a.grad {
        let g = supcon_grad_rows(&batch.vectors, &batch.labels, tau)?;
        println!("{}", to_json(&g));
    }
    Ok(())
}

fn predict_all(
    cases: &[vertid::Case],
    params: Option<&vertid::Params>,
    knobs: &FusionKnobs,
) -> Result<EvalReport> {
    let pairs = cases
        .iter()
        .map(|c| {
            let truth = c
                .truths()
                .ok_or_else(|| Error::Domain(format!("case {} lacks ground truth", c.case_id)))?;
            Ok((predict(c, params, knobs.decode.into(), knobs.metric.into())?, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&pairs)
}

fn print_report(tag: &str, r: &EvalReport) {
    println!(
        "{tag}: id_rate {} mse {} over {} vertebrae in {} cases ({} fully correct)",
        r.id_rate, r.mse, r.n_vertebrae, r.n_cases, r.cases_all_correct
    );
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cases = load_dir(&a.cases)?;
    let params = if a.fuse { Some(a.knobs.params()?) } else { None };
    let report = predict_all(&cases, params.as_ref(), &a.knobs)?;
    print_report(if a.fuse { "fused" } else { "baseline" }, &report);
    if let Some(path) = &a.out {
        write_text(path, &to_json_pretty(&report))?;
    }
    if let Some(path) = &a.dump_csv {
        write_text(path, &report.to_csv())?;
    }
    Ok(())
}

/// Replaces the stored centers by the clustered ones when the counts agree.
fn attach_centers(case: &mut SpineCase<f64>, centers: Vec<vertid::Center>) -> bool {
    if centers.len() != case.vertebrae.len() {
        return false;
    }
    for (v, c) in case.vertebrae.iter_mut().zip(centers) {
        v.center = c;
    }
    true
}

fn cmd_pipeline(a: PipelineArgs) -> Result<()> {
    let params = a.knobs.params()?;
    let metric: WeightMetric = a.knobs.metric.into();
    let mut cases = Vec::new();
    let mut matches = 0;
    for stem in stems(&a.dir, CASE_SUFFIX)? {
        let ds: vertid::Detections = load_detections(&a.dir.join(format!("{stem}{DETECTIONS_SUFFIX}")))?;
        let cfg = a.cluster.config(&ds)?;
        let centers = cluster_detections(&ds, &cfg)?.centers;
        write_text(&a.out.join(format!("{stem}.centers.json")), &to_json_pretty(&centers))?;

        let mut case: vertid::Case = load_case(&a.dir.join(format!("{stem}{CASE_SUFFIX}")))?;
        if attach_centers(&mut case, centers) {
            matches += 1;
        }
        annotate_case(&mut case, metric)?;
        save_case(&case, &a.out.join(format!("{stem}{CASE_SUFFIX}")))?;

        let trace = fuse(&case, &params, metric)?;
        let labels = decode(trace.last(), a.knobs.decode.into())?;
        write_text(
            &a.out.join(format!("{stem}.labels.json")),
            &to_json_pretty(&LabelsFile {
                case_id: &case.case_id,
                labels,
            }),
        )?;
        cases.push(case);
    }
    let baseline = predict_all(&cases, None, &a.knobs)?;
    let fused = predict_all(&cases, Some(&params), &a.knobs)?;
    print_report("baseline", &baseline);
    print_report("fused", &fused);
    println!("cluster count matched in {matches}/{} cases", cases.len());
    if let Some(path) = &a.dump_csv {
        write_text(path, &fused.to_csv())?;
    }
    let summary = PipelineSummary {
        cases: cases.len(),
        cluster_count_matches: matches,
        baseline,
        fused,
    };
    write_text(&a.out.join("report.json"), &to_json_pretty(&summary))?;
    Ok(())
}
