//! `soleprint`: one subcommand per pipeline step. Each run prints a single
//! JSON line on stdout and logs to stderr. Exit status is 2 for usage
//! errors and 1 for failures, whose JSON line names the error kind.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use soleprint::dataio::SplitRatios;
use soleprint::discriminant::Priors;
use soleprint::neuralnet::CamTarget;
use soleprint::raster::{Canvas, DetextureMode};

use dataset::DatasetArgs;

#[derive(Debug, Parser)]
#[command(name = "soleprint", version, about = "Footprint sex and age estimation pipeline")]
struct Cli {
    /// Seed for every random choice (splits, initialisation, synthetic data).
    #[arg(long, global = true, env = "SOLEPRINT_SEED", default_value_t = 42)]
    seed: u64,

    /// Worker threads for per-record work (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    /// More log output on stderr (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    /// Only log errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a manifest (and landmarks), load every image, write a clean
    /// manifest copy and a seeded split.
    Ingest(IngestArgs),
    /// Crop and composite every record; one PNG plus a JSON sidecar each.
    Preprocess(PreprocessArgs),
    /// Remove ridge texture from one image.
    Detexture(DetextureArgs),
    /// Build the three-kernel composite of one image.
    Composite(CompositeArgs),
    /// Generalised Procrustes superimposition of a landmark file.
    Gpa(ShapeArgs),
    /// Principal components of the Procrustes residuals.
    Pca(ShapeArgs),
    /// All pairwise inter-landmark distances as an LDA feature file.
    Distances(DistancesArgs),
    /// Two-class LDA on a feature file.
    Lda(LdaArgs),
    /// Black-pixel fractions in landmark-anchored sampling squares.
    Squares(SquaresArgs),
    /// Train the CNN for one scenario and save a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the test split.
    Evaluate(EvaluateArgs),
    /// Grad-CAM heatmap of a checkpoint on one composite.
    Gradcam(GradcamArgs),
    /// Run a scenario matrix and write the report file and table.
    Scenarios(ScenariosArgs),
    /// Render a results table from report JSON (ours or an external trainer's).
    Table(TableArgs),
    /// Composites, export CSV and split JSON for an external trainer.
    Export(ExportArgs),
    /// Write a synthetic two-population dataset to disk.
    Synth(SynthArgs),
    /// Synthetic CNN benchmark with the Grad-CAM localisation check.
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Args)]
struct SplitArgs {
    /// Existing split JSON; otherwise the split is drawn from --seed.
    #[arg(long)]
    split: Option<PathBuf>,

    /// train,val,test fractions or percentages.
    #[arg(long, default_value = "80,10,10")]
    ratios: SplitRatios,
}

#[derive(Debug, Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Output canvas, WxH.
    #[arg(long, default_value = "512x640")]
    canvas: Canvas,
    /// Build inputs for this scenario instead of plain fitted composites.
    #[arg(long, value_name = "ID")]
    scenario: Option<u32>,
    /// Mirror left prints to read as right feet.
    #[arg(long)]
    mirror: bool,
}

#[derive(Debug, Args)]
struct DetextureArgs {
    /// Input image.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    ppi: f64,
    /// close-ink fills furrows; open-ink deletes thin ink.
    #[arg(long, value_enum, default_value = "close-ink")]
    mode: ModeArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum ModeArg {
    CloseInk,
    OpenInk,
}

impl From<ModeArg> for DetextureMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::CloseInk => DetextureMode::CloseInk,
            ModeArg::OpenInk => DetextureMode::OpenInk,
        }
    }
}

#[derive(Debug, Args)]
struct CompositeArgs {
    /// Input image.
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200.0)]
    ppi: f64,
    /// Output canvas, WxH.
    #[arg(long, default_value = "512x640")]
    canvas: Canvas,
    /// Remove texture before compositing.
    #[arg(long)]
    detexture: bool,
}

#[derive(Debug, Args)]
struct ShapeArgs {
    /// Landmark CSV (`# ppi=` header, then id,index,x_px,y_px).
    #[arg(long)]
    landmarks: PathBuf,
    /// Manifest with sex and side; left feet are reflected and a
    /// coordinate feature file is written.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DistancesArgs {
    #[arg(long)]
    landmarks: PathBuf,
    /// Manifest supplying sex (and side) per id.
    #[arg(long)]
    manifest: PathBuf,
    /// Output feature CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LdaArgs {
    /// Feature CSV: id,sex,<features...>.
    #[arg(long)]
    features: PathBuf,
    /// Also report leave-one-out accuracy.
    #[arg(long)]
    jackknife: bool,
    #[arg(long, default_value = "empirical")]
    priors: Priors,
    /// Write the fitted model as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SquaresArgs {
    #[command(flatten)]
    data: DatasetArgs,
    /// `seven`, `three` or a JSON file of landmark pairs.
    #[arg(long, default_value = "seven")]
    config: String,
    /// Output feature CSV.
    #[arg(long)]
    out: PathBuf,
    /// Also write each record's texture tile here.
    #[arg(long)]
    tiles: Option<PathBuf>,
    #[arg(long, default_value_t = soleprint::raster::DEFAULT_INK_THRESHOLD)]
    ink_threshold: f64,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    /// Training config JSON (shared with external trainers).
    #[arg(long = "train-config", value_name = "PATH")]
    train_config: Option<PathBuf>,
    /// Head-only epochs with the backbone frozen
    #[arg(long)]
    epochs_head: Option<usize>,
    /// Whole-network fine-tuning epochs
    #[arg(long)]
    epochs_finetune: Option<usize>,
    /// Weight on the sex loss in the combined loss
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Network input size, WxH.
    #[arg(long)]
    input: Option<Canvas>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    train: TrainOverrides,
    /// Scenario id from the standard matrix.
    #[arg(long, default_value_t = 1)]
    scenario: u32,
    /// Mirror left prints to read as right feet.
    #[arg(long)]
    mirror: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 1)]
    scenario: u32,
    /// Network input size the checkpoint was trained on, WxH.
    #[arg(long, default_value = "128x160")]
    input: Canvas,
    /// Mirror left prints to read as right feet.
    #[arg(long)]
    mirror: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Composite PNG (as written by preprocess or export).
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value = "sex")]
    target: CamTarget,
    /// Network input size, WxH; the composite is resized to it.
    #[arg(long, default_value = "128x160")]
    input: Canvas,
    /// Output overlay PNG.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScenariosArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    split: SplitArgs,
    #[command(flatten)]
    train: TrainOverrides,
    /// Scenario file (array or object with scenarios/train/options);
    /// default is the standard seventeen.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only these scenario ids.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
    /// Mirror left prints to read as right feet.
    #[arg(long)]
    mirror: bool,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the text table here.
    #[arg(long)]
    table: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Report JSON: a report file, an array of reports or one report.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Write the text table here instead of stderr.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    split: SplitArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "512x640")]
    canvas: Canvas,
    /// Mirror left prints to read as right feet.
    #[arg(long)]
    mirror: bool,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Leave the heel mark out.
    #[arg(long)]
    no_mark: bool,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    /// Synthetic seeds, one run each.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Benchmark settings JSON; fields left out keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write per-seed results here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_logging(cli: &Cli) {
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Error,
        (false, 0) => log::LevelFilter::Warn,
        (false, 1) => log::LevelFilter::Info,
        (false, 2) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().target(env_logger::Target::Stderr).init();
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Ingest(_) => "ingest",
        Command::Preprocess(_) => "preprocess",
        Command::Detexture(_) => "detexture",
        Command::Composite(_) => "composite",
        Command::Gpa(_) => "gpa",
        Command::Pca(_) => "pca",
        Command::Distances(_) => "distances",
        Command::Lda(_) => "lda",
        Command::Squares(_) => "squares",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Gradcam(_) => "gradcam",
        Command::Scenarios(_) => "scenarios",
        Command::Table(_) => "table",
        Command::Export(_) => "export",
        Command::Synth(_) => "synth",
        Command::Benchmark(_) => "benchmark",
    }
}

fn run(cli: &Cli) -> soleprint::Result<Map<String, Value>> {
    let seed = cli.seed;
    match &cli.command {
        Command::Ingest(a) => commands::ingest(a, seed),
        Command::Preprocess(a) => commands::preprocess(a, seed),
        Command::Detexture(a) => commands::detexture(a),
        Command::Composite(a) => commands::composite(a),
        Command::Gpa(a) => commands::gpa(a),
        Command::Pca(a) => commands::pca(a),
        Command::Distances(a) => commands::distances(a),
        Command::Lda(a) => commands::lda(a),
        Command::Squares(a) => commands::squares(a, seed),
        Command::Train(a) => commands::train(a, seed),
        Command::Evaluate(a) => commands::evaluate(a, seed),
        Command::Gradcam(a) => commands::gradcam(a),
        Command::Scenarios(a) => commands::scenarios(a, seed),
        Command::Table(a) => commands::table(a),
        Command::Export(a) => commands::export(a, seed),
        Command::Synth(a) => commands::synth(a, seed),
        Command::Benchmark(a) => commands::benchmark(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(&cli);
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let name = command_name(&cli.command);
    log::info!("{name}: seed {}", cli.seed);
    let mut line = Map::new();
    line.insert("command".into(), json!(name));
    line.insert("seed".into(), json!(cli.seed));
    let code = match run(&cli) {
        Ok(fields) => {
            line.insert("status".into(), json!("ok"));
            line.extend(fields);
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            line.insert("status".into(), json!("error"));
            line.insert("error".into(), json!(e.kind()));
            line.insert("message".into(), json!(e.to_string()));
            ExitCode::from(1)
        }
    };
    println!("{}", Value::Object(line));
    code
}
