//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage or configuration error, 3 training divergence, 4 gradient check
//! failure, 5 oracle deviation.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checks::{self, CheckModule};
use crate::config::RunConfig;
use crate::error::Error;
use crate::formats;
use crate::masks::{MaskSpec, WidthGeometry};
use crate::metrics::{axis_bin_report, segment_report, SEGMENTS};
use crate::objective::{loss_report, ObjectiveConfig};
use crate::oracle::{self, Suite};
use crate::report;
use crate::synth::{self, Preset};
use crate::train;
use crate::voxel::{Axis, ClassTable, DEFAULT_IGNORE_LABEL};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_GRADCHECK: i32 = 4;
pub const EXIT_ORACLE: i32 = 5;

#[derive(Parser, Debug)]
#[command(name = "scanssc", version, about = "Scan masks, toy training, gradient checks and axis-wise analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dump an attention mask as ASCII ('#' blocked, '.' allowed) and PGM.
    Masks(MasksArgs),
    /// Generate a synthetic label grid.
    Synth(SynthArgs),
    /// Fit the model to one scene.
    TrainToy(TrainArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Per-bin and per-segment metrics, CSV tables and SVG charts.
    Analyze(AnalyzeArgs),
    /// Compare fast paths against brute-force references.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
struct MasksArgs {
    #[arg(long)]
    axis: Axis,
    #[arg(long)]
    length: usize,
    /// Margin ratio in [0, 1]; defaults to the axis default.
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    flip: bool,
    /// Width geometry: hourglass or distance-rank.
    #[arg(long, default_value = "hourglass")]
    geometry: String,
    /// ASCII output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional PGM image path.
    #[arg(long)]
    pgm: Option<PathBuf>,
    /// PGM pixels per mask cell.
    #[arg(long, default_value_t = 8)]
    cell: usize,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    preset: String,
    /// X,Y,Z
    #[arg(long)]
    dims: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
    /// Also write a CSV voxel listing next to the grid.
    #[arg(long)]
    csv: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Defaults to a 4×4×2 grid with C = 8 and P = 5.
    #[arg(long)]
    config: Option<PathBuf>,
    /// primitives, scan-loss, objective, head or scan-module.
    #[arg(long)]
    module: Option<String>,
    #[arg(long, default_value_t = checks::DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check every coordinate of every parameter (slow for the full model).
    #[arg(long)]
    all_coords: bool,
    /// Scale the backward rule of one primitive by 1.5 (negative control).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Logits of the prediction; adds a loss report against the ground truth.
    #[arg(long)]
    logits: Option<PathBuf>,
    #[arg(long, default_value = "dep,wid,hgt")]
    axes: String,
    /// Bin counts for depth, width and height.
    #[arg(long, default_value = "256,256,32")]
    bins: String,
    #[arg(long, default_value_t = 20)]
    classes: usize,
    /// Scale each chart curve by its maximum.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// masks, scanloss, cumavg or fusion.
    #[arg(long)]
    suite: Option<String>,
    #[arg(long, default_value_t = 100)]
    trials: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Overrides the suite tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Where to write the worst trial; written on failure even if omitted.
    #[arg(long)]
    repro: Option<PathBuf>,
    /// Re-run the trial stored in a repro file.
    #[arg(long, conflicts_with = "suite")]
    replay: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
    Code(i32, String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Shape { .. } => Failure::Usage(e.to_string()),
            Error::Diverged { .. } => Failure::Code(EXIT_DIVERGED, e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> std::result::Result<Vec<T>, Failure> {
    s.split(',')
        .map(|p| p.trim().parse().map_err(|_| Failure::Usage(format!("bad {what} entry {p:?} in {s:?}"))))
        .collect()
}

fn parse_triple(what: &str, s: &str) -> std::result::Result<[usize; 3], Failure> {
    parse_list::<usize>(what, s)?
        .try_into()
        .map_err(|_| Failure::Usage(format!("{what} needs three comma-separated values, got {s:?}")))
}

fn init_threads() {
    if let Some(n) = std::env::var("SCANSSC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // A second call in the same process keeps the first pool.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    init_threads();
    let result = match cli.command {
        Command::Masks(a) => masks(a),
        Command::Synth(a) => synth_cmd(a),
        Command::TrainToy(a) => train_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Analyze(a) => analyze(a),
        Command::Oracle(a) => oracle_cmd(a),
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\nRun with --help for usage.");
            EXIT_USAGE
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            EXIT_RUNTIME
        }
        Err(Failure::Code(code, m)) => {
            eprintln!("{m}");
            code
        }
    }
}

fn masks(a: MasksArgs) -> CmdResult {
    let width_geometry = match a.geometry.as_str() {
        "hourglass" => WidthGeometry::Hourglass,
        "distance-rank" => WidthGeometry::DistanceRank,
        g => return Err(Failure::Usage(format!("unknown width geometry {g:?}"))),
    };
    let spec = MaskSpec {
        margin_ratio: a.margin.unwrap_or(crate::masks::default_margin(a.axis)),
        flipped: a.flip,
        width_geometry,
        ..MaskSpec::canonical(a.axis)
    };
    let mask = spec.build(a.length)?;
    formats::write_file(&a.out, mask.to_ascii().as_bytes())?;
    if let Some(p) = a.pgm {
        let mut buf = Vec::new();
        mask.write_pgm(&mut buf, a.cell).map_err(Error::from)?;
        formats::write_file(&p, &buf)?;
    }
    println!("{} mask, L = {}, {} of {} slots blocked", a.axis, a.length, a.length * a.length - mask.allowed_count(), a.length * a.length);
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> CmdResult {
    let preset: Preset = a.preset.parse()?;
    let dims = parse_triple("dims", &a.dims)?;
    let g = synth::generate(preset, dims, a.classes, a.seed)?;
    formats::write_grid(&a.out, &g)?;
    if a.csv {
        formats::write_file(&a.out.with_extension("csv"), formats::grid_to_csv(&g).as_bytes())?;
    }
    let occupied = g.labels().iter().filter(|&&l| l != 0).count();
    println!("{preset} {dims:?}: {occupied} of {} voxels occupied", g.labels().len());
    Ok(())
}

fn load_config(path: Option<&Path>, default: RunConfig) -> std::result::Result<RunConfig, Failure> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            Ok(RunConfig::parse(&text)?)
        }
        None => Ok(default),
    }
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref(), RunConfig::default())?;
    let gt = formats::read_grid(&a.gt)?;
    let table = cfg.class_table()?;
    let outcome = train::train_toy(&cfg, &gt, |step, r| log::info!("step {step}: total {:.6}", r.total))?;
    train::write_outputs(&a.out, &outcome, &gt, &table)?;
    println!(
        "{} steps: total loss {:.6} -> {:.6}, mIoU {} -> {}",
        cfg.steps,
        outcome.initial_total(),
        outcome.final_total(),
        fmt_opt(outcome.initial_metrics.miou),
        fmt_opt(outcome.final_metrics.miou)
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("null".into(), |v| format!("{v:.4}"))
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref(), checks::tiny_config())?;
    let module = a.module.as_deref().map(str::parse::<CheckModule>).transpose()?;
    let mut opts = checks::suite_options(a.seed);
    if a.all_coords {
        opts.max_coords_per_param = None;
    }
    if let Some(op) = &a.inject_fault {
        opts.tape_factory = checks::faulty_tape_factory(op).ok_or_else(|| {
            Failure::Usage(format!("cannot inject a fault into {op:?}; known: {}", checks::FAULTABLE_OPS.join(", ")))
        })?;
    }
    let groups = checks::run_suite(&cfg, module, &opts)?;
    let mut failures = Vec::new();
    for g in &groups {
        let status = if g.report.max_rel_error <= a.threshold { "ok" } else { "FAIL" };
        println!("{:<12} {:<18} max rel error {:.3e}  {status}", g.module.name(), g.case, g.report.max_rel_error);
        for p in g.report.failures(a.threshold) {
            failures.push(format!("{}/{}: {} ({:.3e} at coordinate {})", g.module, g.case, p.name, p.max_rel_error, p.worst_coord));
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Code(
            EXIT_GRADCHECK,
            format!("gradient check failed (threshold {:.1e}):\n  {}", a.threshold, failures.join("\n  ")),
        ))
    }
}

fn analyze(a: AnalyzeArgs) -> CmdResult {
    let pred = formats::read_grid(&a.pred)?;
    let gt = formats::read_grid(&a.gt)?;
    if pred.dims() != gt.dims() {
        return Err(Failure::Usage(format!("prediction dims {:?} differ from ground truth {:?}", pred.dims(), gt.dims())));
    }
    let axes: Vec<Axis> = parse_list("axes", &a.axes)?;
    let bins = parse_triple("bins", &a.bins)?;
    let table = if a.classes == 20 { ClassTable::semantic_kitti() } else { ClassTable::generic(a.classes)? };
    let p = table.num_classes();
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    let mut json = serde_json::Map::new();
    for axis in axes {
        let r = axis_bin_report(&pred, &gt, axis, bins[axis.index()], p, DEFAULT_IGNORE_LABEL)?;
        let name = axis.short_name();
        formats::write_file(&a.out.join(format!("bins_{name}.csv")), report::bin_csv(&r).as_bytes())?;
        formats::write_file(&a.out.join(format!("bins_{name}.svg")), report::bin_chart_svg(&r, a.normalize).as_bytes())?;
        json.insert(format!("bins_{name}"), serde_json::to_value(&r).map_err(Error::from)?);
        if gt.dims()[axis.index()] >= SEGMENTS {
            let s = segment_report(&pred, &gt, axis, p, DEFAULT_IGNORE_LABEL)?;
            formats::write_file(&a.out.join(format!("segments_{name}.csv")), report::segment_csv(&s).as_bytes())?;
            json.insert(format!("segments_{name}"), serde_json::to_value(&s).map_err(Error::from)?);
        } else {
            log::warn!("{axis} extent below {SEGMENTS}: no segment table");
        }
    }
    if let Some(path) = &a.logits {
        let logits = formats::read_logits(path)?;
        if logits.dims() != gt.dims() || logits.num_classes() != p {
            return Err(Failure::Usage(format!(
                "logits are {:?}×{} but the ground truth is {:?} with {p} classes",
                logits.dims(),
                logits.num_classes(),
                gt.dims()
            )));
        }
        let r = loss_report(&logits, &gt, &table, &ObjectiveConfig::default(), 0.0)?;
        json.insert("loss".into(), serde_json::to_value(r).map_err(Error::from)?);
    }
    let text = serde_json::to_string_pretty(&json).map_err(Error::from)? + "\n";
    formats::write_file(&a.out.join("report.json"), text.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn oracle_cmd(a: OracleArgs) -> CmdResult {
    if let Some(path) = &a.replay {
        let (stored, again) = oracle::replay(path)?;
        println!(
            "{} trial {}: recorded deviation {:e}, replayed {:e}",
            stored.suite, stored.worst.trial, stored.worst.deviation, again.deviation
        );
        return if again.deviation.to_bits() == stored.worst.deviation.to_bits() {
            Ok(())
        } else {
            Err(Failure::Code(EXIT_ORACLE, "replay did not reproduce the recorded deviation".into()))
        };
    }
    let suite: Suite = a
        .suite
        .as_deref()
        .ok_or_else(|| Failure::Usage("--suite or --replay is required".into()))?
        .parse()?;
    let o = oracle::run_suite(suite, a.trials, a.seed, a.tolerance)?;
    println!(
        "{suite}: {} trials, worst deviation {:e} (trial {}), tolerance {:e}",
        o.trials, o.worst.deviation, o.worst.trial, o.tolerance
    );
    if let Some(p) = &a.repro {
        oracle::write_repro(p, &o)?;
    }
    if o.passed() {
        Ok(())
    } else {
        let path = a.repro.clone().unwrap_or_else(|| PathBuf::from(format!("oracle-repro-{suite}.json")));
        if a.repro.is_none() {
            oracle::write_repro(&path, &o)?;
        }
        Err(Failure::Code(
            EXIT_ORACLE,
            format!("{suite} deviation above tolerance; repro written to {}", path.display()),
        ))
    }
}
