//! Command-line front end. Exit codes: 0 on success, 1 on usage errors,
//! 2 on data or numeric errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{self, Method};
use crate::clustering::{centroids, cluster_features, ClusterAssignment, MemoryBank};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{full_report, GroundTruth};
use crate::io::{
    read_features, read_ground_truth, read_identities, read_labels, read_matrix, read_quartet,
    write_ground_truth, write_json, write_labels, write_matrix, write_quartet,
};
use crate::labels::{Direction, LabelQuartet, ModalityLabels};
use crate::losses::{LossBanks, TrainingMode};
use crate::mult::{build_affinities, mult_associate_traced, MultAssociation};
use crate::pipeline::{loss_pass, run_trace, write_trace};
use crate::synth::{generate, GapMode, SynthSpec};
use crate::types::{FeatureMatrix, Modality, SoftLabelMatrix};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "XMOD_THREADS";

#[derive(Debug, Parser)]
#[command(name = "xmod", version, about = "Cross-modality pseudo-label association")]
struct Cli {
    /// JSON file overriding pipeline config defaults.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate seeded synthetic features and identities.
    Synth(SynthArgs),
    /// DBSCAN one feature file.
    Cluster(ClusterArgs),
    /// Cross-modality label association.
    Associate(AssociateArgs),
    /// Pair metrics of a label directory against identities.
    Eval(EvalArgs),
    /// Loss values for fixed features, labels and banks.
    LossReport(LossArgs),
    /// Label-quality trace over per-epoch feature snapshots.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    #[value(alias = "visible")]
    V,
    #[value(alias = "infrared")]
    R,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::V => Modality::Visible,
            ModalityArg::R => Modality::Infrared,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Mult,
    Otla,
    Greedy,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mult => Method::Mult,
            MethodArg::Otla => Method::OtlaOnly,
            MethodArg::Greedy => Method::GreedyCentroid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DirectionArg {
    V2r,
    R2v,
    Both,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum GapModeArg {
    Shared,
    PerId,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    #[value(name = "v-based")]
    VBased,
    #[value(name = "r-based")]
    RBased,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON file with generator parameters; flags override its fields.
    #[arg(long, value_name = "FILE")]
    params: Option<PathBuf>,
    #[arg(long)]
    ids: Option<usize>,
    #[arg(long)]
    per_id_v: Option<usize>,
    #[arg(long)]
    per_id_r: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long)]
    std: Option<f64>,
    #[arg(long)]
    gap: Option<f64>,
    #[arg(long, value_enum)]
    gap_mode: Option<GapModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for visible.mfv, infrared.mfv and gt.csv.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[arg(long, value_name = "FILE")]
    features: PathBuf,
    #[arg(long, value_enum)]
    modality: ModalityArg,
    /// Label CSV; noise rows get hard label -1.
    #[arg(long, value_name = "FILE")]
    out_labels: PathBuf,
    /// Prototype file, MFV1 for `.mfv`, CSV otherwise.
    #[arg(long, value_name = "FILE")]
    out_prototypes: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AssociateArgs {
    #[arg(long, value_name = "FILE")]
    visible: PathBuf,
    #[arg(long, value_name = "FILE")]
    infrared: PathBuf,
    /// Visible cluster labels; clustered from the features when absent.
    #[arg(long, value_name = "FILE", requires = "clusters_r")]
    clusters_v: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "clusters_v")]
    clusters_r: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "mult")]
    method: MethodArg,
    #[arg(long, value_enum, default_value = "both")]
    direction: DirectionArg,
    /// Write one inconsistency report per transfer iteration.
    #[arg(long)]
    trace: bool,
    /// Write the row-normalized affinities as MFV1 files.
    #[arg(long)]
    dump_affinities: bool,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory with intra_v.csv, cross_r.csv, intra_r.csv, cross_v.csv.
    #[arg(long, value_name = "DIR")]
    labels: PathBuf,
    /// Identities of both modalities, `modality,index,identity`.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["gt_v", "gt_r"])]
    gt: Option<PathBuf>,
    /// Visible identities, `index,identity`.
    #[arg(long, value_name = "FILE", requires = "gt_r")]
    gt_v: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "gt_v")]
    gt_r: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LossArgs {
    #[arg(long, value_name = "FILE")]
    visible: PathBuf,
    #[arg(long, value_name = "FILE")]
    infrared: PathBuf,
    #[arg(long, value_name = "DIR")]
    labels: PathBuf,
    /// Visible prototypes, one row per visible cluster.
    #[arg(long, value_name = "FILE")]
    bank_v: PathBuf,
    #[arg(long, value_name = "FILE")]
    bank_r: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Directory of epoch_{i}_visible / epoch_{i}_infrared feature files.
    #[arg(long, value_name = "DIR")]
    snapshots: PathBuf,
    #[arg(long, value_name = "FILE")]
    gt: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return 1;
    }
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json_file(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Cluster(a) => cluster(a, &cfg),
        Command::Associate(a) => associate(a, &cfg),
        Command::Eval(a) => eval(a, &cfg),
        Command::LossReport(a) => loss_report(a, &cfg),
        Command::Pipeline(a) => pipeline(a, &cfg),
    }
}

fn emit_json<T: serde::Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            let mut text = serde_json::to_string_pretty(value)?;
            text.push('\n');
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.params {
        Some(path) => {
            let text = fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?
        }
        None => SynthSpec::default(),
    };
    let set = |slot: &mut usize, v: Option<usize>| *slot = v.unwrap_or(*slot);
    set(&mut spec.num_ids, a.ids);
    set(&mut spec.per_id_v, a.per_id_v);
    set(&mut spec.per_id_r, a.per_id_r);
    set(&mut spec.dim, a.dim);
    spec.id_separation = a.separation.unwrap_or(spec.id_separation);
    spec.blob_std = a.std.unwrap_or(spec.blob_std);
    spec.modality_gap = a.gap.unwrap_or(spec.modality_gap);
    spec.seed = a.seed.unwrap_or(spec.seed);
    if let Some(mode) = a.gap_mode {
        spec.gap_mode = match mode {
            GapModeArg::Shared => GapMode::SharedOffset,
            GapModeArg::PerId => GapMode::PerIdOffset,
        };
    }
    let data = generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    write_matrix(&a.out.join("visible.mfv"), data.visible.data())?;
    write_matrix(&a.out.join("infrared.mfv"), data.infrared.data())?;
    write_ground_truth(&a.out.join("gt.csv"), &data.gt)
}

fn assignment_labels(assign: &ClusterAssignment, modality: Modality) -> Result<ModalityLabels> {
    let rows = assign.members();
    let hard: Vec<usize> = rows.iter().filter_map(|&i| assign.labels.get(i)).collect();
    let soft = SoftLabelMatrix::one_hot(&hard, assign.k().max(1))?;
    ModalityLabels::new(modality, modality, soft, rows, assign.len())
}

fn cluster(a: ClusterArgs, cfg: &PipelineConfig) -> Result<()> {
    let modality = a.modality.into();
    let features = read_features(&a.features, modality)?;
    let assign = cluster_features(&features, cfg)?;
    write_labels(&a.out_labels, &assignment_labels(&assign, modality)?)?;
    if let Some(path) = &a.out_prototypes {
        let bank = centroids(&features, &assign, cfg.tau, cfg.mu)?;
        write_matrix(path, &bank.prototypes)?;
    }
    Ok(())
}

fn read_assignment(path: &Path, modality: Modality, n: usize) -> Result<ClusterAssignment> {
    let labels = read_labels(path, modality, modality)?;
    if labels.total != n {
        return Err(Error::shape(format!(
            "{}: {} labels for {n} instances",
            path.display(),
            labels.total
        )));
    }
    Ok(ClusterAssignment {
        labels: labels.hard(),
    })
}

fn associate(a: AssociateArgs, cfg: &PipelineConfig) -> Result<()> {
    let fv = read_features(&a.visible, Modality::Visible)?;
    let fr = read_features(&a.infrared, Modality::Infrared)?;
    if fv.dim() != fr.dim() {
        return Err(Error::shape(format!(
            "visible features have dimension {}, infrared {}",
            fv.dim(),
            fr.dim()
        )));
    }
    let (av, ar) = match (&a.clusters_v, &a.clusters_r) {
        (Some(pv), Some(pr)) => (
            read_assignment(pv, Modality::Visible, fv.len())?,
            read_assignment(pr, Modality::Infrared, fr.len())?,
        ),
        _ => (cluster_features(&fv, cfg)?, cluster_features(&fr, cfg)?),
    };
    let directions: &[Direction] = match a.direction {
        DirectionArg::V2r => &[Direction::V2R],
        DirectionArg::R2v => &[Direction::R2V],
        DirectionArg::Both => &[Direction::V2R, Direction::R2V],
    };
    let method: Method = a.method.into();
    fs::create_dir_all(&a.out)?;
    let mut results = Vec::new();
    for &d in directions {
        let labels = if method == Method::Mult {
            let m = mult_associate_traced(&fv, &fr, &av, &ar, cfg, d, a.trace)?;
            if a.trace {
                write_transfer_trace(&a.out, d, &m)?;
            }
            m.labels
        } else {
            baselines::associate(method, &fv, &fr, &av, &ar, cfg, d)?
        };
        if a.dump_affinities {
            dump_affinities(&a.out, d, &fv, &fr, &av, &ar, cfg)?;
        }
        results.push(labels);
    }
    if results.len() == 2 {
        let r2v = results.pop().expect("two directions");
        let v2r = results.pop().expect("two directions");
        return write_quartet(&a.out, &LabelQuartet::from_directions(v2r, r2v)?);
    }
    let one = &results[0];
    let (intra, cross) = match one.direction {
        Direction::V2R => ("intra_v.csv", "cross_r.csv"),
        Direction::R2V => ("intra_r.csv", "cross_v.csv"),
    };
    write_labels(&a.out.join(intra), &one.intra)?;
    write_labels(&a.out.join(cross), &one.cross)
}

fn write_transfer_trace(out: &Path, d: Direction, m: &MultAssociation) -> Result<()> {
    let dir = out.join(format!("trace_{}", d.name()));
    fs::create_dir_all(&dir)?;
    for (t, report) in m.trace.iter().enumerate() {
        write_json(&dir.join(format!("iter_{t:04}.json")), report)?;
    }
    Ok(())
}

fn dump_affinities(
    out: &Path,
    d: Direction,
    fv: &FeatureMatrix,
    fr: &FeatureMatrix,
    av: &ClusterAssignment,
    ar: &ClusterAssignment,
    cfg: &PipelineConfig,
) -> Result<()> {
    let (src, tgt, sa, ta) = match d {
        Direction::V2R => (fv, fr, av, ar),
        Direction::R2V => (fr, fv, ar, av),
    };
    let aff = build_affinities(&src.select(&sa.members()), &tgt.select(&ta.members()), cfg)?;
    let dir = out.join(format!("affinities_{}", d.name()));
    fs::create_dir_all(&dir)?;
    for (name, m) in [
        ("ho_src", &aff.ho_src),
        ("ho_tgt", &aff.ho_tgt),
        ("he_st", &aff.he_st),
        ("he_ts", &aff.he_ts),
    ] {
        write_matrix(&dir.join(format!("{name}.mfv")), &m.values)?;
    }
    Ok(())
}

fn eval(a: EvalArgs, cfg: &PipelineConfig) -> Result<()> {
    let labels = read_quartet(&a.labels)?;
    let gt = match (&a.gt, &a.gt_v, &a.gt_r) {
        (Some(path), _, _) => read_ground_truth(path)?,
        (None, Some(pv), Some(pr)) => GroundTruth::new(read_identities(pv)?, read_identities(pr)?),
        _ => return Err(Error::InvalidInput("pass --gt, or both --gt-v and --gt-r".into())),
    };
    let report = full_report(&labels, &gt, cfg.include_self_pairs)?;
    emit_json(a.out.as_deref(), &report)
}

fn loss_report(a: LossArgs, cfg: &PipelineConfig) -> Result<()> {
    let fv = read_features(&a.visible, Modality::Visible)?;
    let fr = read_features(&a.infrared, Modality::Infrared)?;
    let labels = read_quartet(&a.labels)?;
    let mode = match a.mode {
        ModeArg::VBased => TrainingMode::VBased,
        ModeArg::RBased => TrainingMode::RBased,
    };
    let bank = |path: &Path, space| MemoryBank::new(read_matrix(path)?, cfg.tau, cfg.mu, space);
    let mut banks = LossBanks::for_mode(
        bank(&a.bank_v, Modality::Visible)?,
        bank(&a.bank_r, Modality::Infrared)?,
        mode,
    );
    let report = loss_pass(&fv, &fr, &labels, &mut banks, cfg, mode)?;
    emit_json(a.out.as_deref(), &report)
}

fn pipeline(a: PipelineArgs, cfg: &PipelineConfig) -> Result<()> {
    let gt = a.gt.as_deref().map(read_ground_truth).transpose()?;
    let rows = run_trace(&a.snapshots, cfg, gt.as_ref())?;
    write_trace(&a.out, &rows)
}
