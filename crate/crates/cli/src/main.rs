use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use geodiv_core::aggregate::export::ExportFormat;
use geodiv_core::aggregate::Axis;
use geodiv_core::backend::BackendError;
use geodiv_core::fixture::{generate, FixtureSpec};
use geodiv_core::pipeline::{Pipeline, PipelineError, RunConfig, RunOverrides, Stage};

/// Geographical-diversity scoring of image collections.
#[derive(Parser)]
#[command(name = "geodiv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify every image as an indoor or outdoor scene.
    Classify(RunArgs),
    /// Ask the visibility pre-question for every entity question.
    Visibility(RunArgs),
    /// Answer every applicable question and apply the coverage rules.
    Vqa(RunArgs),
    /// Rate every image on the enabled socio-economic scales.
    Sevi(RunArgs),
    /// Compute axis and overall scores from cached replies.
    Score(RunArgs),
    /// Cross-country distances per question.
    Jsd(RunArgs),
    /// Score stability under image subsampling.
    Robustness(RunArgs),
    /// Compare cached replies with human annotations.
    Validate(RunArgs),
    /// Write the full score report.
    Report(RunArgs),
    /// Write a seeded planted dataset with a ready-to-run config.
    MockFixture(FixtureArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tabular,
    Structured,
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Catalog document; repeat to merge several.
    #[arg(long = "catalog")]
    catalogs: Vec<PathBuf>,
    /// Backend configuration (TOML).
    #[arg(long)]
    backend: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    coverage_threshold: Option<f64>,
    #[arg(long)]
    others_threshold: Option<f64>,
    /// Comma-separated axes to score.
    #[arg(long, value_delimiter = ',', value_parser = parse_axis)]
    axes: Option<Vec<Axis>>,
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated image budgets for the robustness stage.
    #[arg(long, value_delimiter = ',')]
    budgets: Option<Vec<usize>>,
    /// Comma-separated subsampling seeds for the robustness stage.
    #[arg(long, value_delimiter = ',')]
    robustness_seeds: Option<Vec<u64>>,
    /// Human annotations (JSONL) for the validate stage.
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 250)]
    images_per_slice: usize,
    /// Directory to write the fixture into.
    #[arg(long)]
    out: PathBuf,
}

fn parse_axis(s: &str) -> Result<Axis, String> {
    Axis::parse(s).ok_or_else(|| {
        let names: Vec<&str> = Axis::ALL.iter().map(|a| a.as_str()).collect();
        format!("unknown axis `{s}` (expected one of {})", names.join(", "))
    })
}

impl RunArgs {
    fn overrides(&self) -> RunOverrides {
        RunOverrides {
            manifest: self.manifest.clone(),
            catalogs: (!self.catalogs.is_empty()).then(|| self.catalogs.clone()),
            backend: self.backend.clone(),
            output: self.output.clone(),
            cache: self.cache.clone(),
            coverage_threshold: self.coverage_threshold,
            others_threshold: self.others_threshold,
            axes: self.axes.clone(),
            concurrency: self.concurrency,
            seed: self.seed,
            budgets: self.budgets.clone(),
            robustness_seeds: self.robustness_seeds.clone(),
            annotations: self.annotations.clone(),
            format: self.format.map(|f| match f {
                Format::Tabular => ExportFormat::Tabular,
                Format::Structured => ExportFormat::Structured,
            }),
        }
    }

    fn config(&self) -> Result<RunConfig, PipelineError> {
        let overrides = self.overrides();
        let config = match &self.config {
            Some(path) => {
                let mut c = RunConfig::load(path)?;
                c.apply(&overrides);
                c
            }
            None => RunConfig::from_overrides(&overrides)?,
        };
        Ok(config)
    }
}

fn exit_code(e: &PipelineError) -> u8 {
    match e {
        PipelineError::Config(_) | PipelineError::Backend(BackendError::Config(_)) => 2,
        PipelineError::StageOrder(_) => 3,
        PipelineError::Backend(_) => 4,
        PipelineError::Data(_) => 5,
        PipelineError::Io { .. } => 6,
    }
}

fn run_stage(stage: Stage, args: &RunArgs) -> Result<(), PipelineError> {
    let pipeline = Pipeline::open(args.config()?)?;
    let summary = pipeline.run(stage)?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn mock_fixture(args: &FixtureArgs) -> Result<(), PipelineError> {
    let fixture = generate(&FixtureSpec {
        images_per_slice: args.images_per_slice,
        ..FixtureSpec::seeded(args.seed)
    });
    let files = fixture.write(&args.out).map_err(|e| PipelineError::Io {
        path: args.out.display().to_string(),
        message: e.to_string(),
    })?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Classify(a) => run_stage(Stage::Classify, a),
        Command::Visibility(a) => run_stage(Stage::Visibility, a),
        Command::Vqa(a) => run_stage(Stage::Vqa, a),
        Command::Sevi(a) => run_stage(Stage::Sevi, a),
        Command::Score(a) => run_stage(Stage::Score, a),
        Command::Jsd(a) => run_stage(Stage::Jsd, a),
        Command::Robustness(a) => run_stage(Stage::Robustness, a),
        Command::Validate(a) => run_stage(Stage::Validate, a),
        Command::Report(a) => run_stage(Stage::Report, a),
        Command::MockFixture(a) => mock_fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
