use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use indirect::experiment::{fit_model, load_embeddings, load_labels, resolve_path, DATA_DIR_ENV};
use indirect::metrics::render_table;
use indirect::{
    run_experiment_on, run_sweep, write_embeddings, ErrorCategory, ExperimentConfig,
    ExperimentData, Method, Metric, Model, RetrievalReport, SweepAxis, SweepPoint,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

/// Learn and evaluate prompt-trained projections of image embeddings.
#[derive(Debug, Parser)]
#[command(name = "indirect", version)]
struct Cli {
    /// Directory that relative data paths are resolved against.
    #[arg(long, global = true, env = DATA_DIR_ENV)]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model for one seed and write it as JSON.
    Fit(FitArgs),
    /// Apply a fitted model to an embedding file.
    Transform(TransformArgs),
    /// Evaluate an embedding file against labels.
    Evaluate(EvaluateArgs),
    /// Fit, transform and evaluate for every seed.
    Run(ExperimentArgs),
    /// Run one experiment per target dimension or prompt count.
    Sweep(SweepArgs),
    /// Render saved reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Args, Default)]
struct ExperimentArgs {
    /// Experiment file (TOML or JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    text_emb: Option<PathBuf>,
    #[arg(long)]
    img_emb: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated seeds or a half-open range such as `0..5`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    /// Comma-separated metric names, e.g. `map_at_r,prec_at_1`.
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    /// Train on this many prompts sampled per seed.
    #[arg(long)]
    prompt_sample: Option<usize>,
    /// Write the JSON result here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
}

#[derive(Debug, Args)]
struct TransformArgs {
    /// Model JSON written by `fit`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    img_emb: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    img_emb: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Seeds for the k-means behind AMI and NMI.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<Seeds>,
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<Metric>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    /// Target dimensions to sweep, comma-separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "prompt_counts")]
    dims: Option<Vec<usize>>,
    /// Prompt sample sizes to sweep, comma-separated.
    #[arg(long, value_delimiter = ',')]
    prompt_counts: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Report JSON files; each becomes a column named after the file.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Emit the reports as one JSON object keyed by column name.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    let bad = |_| format!("invalid seed list {s:?}");
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(bad)?,
            b.trim().parse().map_err(bad)?,
        );
        if a >= b {
            return Err(format!("empty seed range {s:?}"));
        }
        return Ok(Seeds((a..b).collect()));
    }
    s.split(',')
        .map(|p| p.trim().parse().map_err(bad))
        .collect::<Result<_, _>>()
        .map(Seeds)
}

/// Failure that maps onto a process exit code.
#[derive(Debug)]
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn config(error: anyhow::Error) -> Self {
        Self {
            code: EXIT_CONFIG,
            error,
        }
    }
}

impl From<indirect::Error> for Failure {
    fn from(e: indirect::Error) -> Self {
        let code = match e.category() {
            ErrorCategory::Config => EXIT_CONFIG,
            ErrorCategory::Data => EXIT_DATA,
            ErrorCategory::Numerical => EXIT_NUMERICAL,
        };
        Self {
            code,
            error: e.into(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Self {
            code: EXIT_DATA,
            error: e.into(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn read_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::config)?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(anyhow::Error::from)
    } else {
        toml::from_str(&text).map_err(anyhow::Error::from)
    };
    parsed
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::config)
}

impl ExperimentArgs {
    fn to_config(&self) -> CliResult<ExperimentConfig> {
        let mut config = match (&self.config, self.method) {
            (Some(path), _) => read_config(path)?,
            (None, Some(method)) => ExperimentConfig::new(method),
            (None, None) => {
                return Err(Failure::config(anyhow!(
                    "either --config or --method is required"
                )))
            }
        };
        if let Some(m) = self.method {
            config.method = m;
        }
        if let Some(p) = &self.text_emb {
            config.text_emb = Some(p.clone());
        }
        if let Some(p) = &self.img_emb {
            config.img_emb = Some(p.clone());
        }
        if let Some(p) = &self.labels {
            config.labels = Some(p.clone());
        }
        if let Some(d) = self.dim {
            config.target_dim = d;
        }
        if let Some(s) = &self.seeds {
            config.seeds = s.0.clone();
        }
        if let Some(m) = &self.metrics {
            config.metrics = m.clone();
        }
        if self.prompt_sample.is_some() {
            config.prompt_sample = self.prompt_sample;
        }
        Ok(config)
    }
}

fn write_output(out: Option<&Path>, json: &impl serde::Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(json).map_err(indirect::Error::from)?;
    match out {
        Some(path) => fs::write(path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(|error| Failure {
                code: EXIT_DATA,
                error,
            }),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn print_table(name: &str, report: &RetrievalReport) {
    eprint!("{}", render_table(&[(name.to_string(), report)]));
}

fn fit(args: &FitArgs, data_dir: Option<&Path>) -> CliResult<()> {
    let config = args.experiment.to_config()?;
    let data = ExperimentData::load(&config, data_dir)?;
    let seed = config.seeds.first().copied().unwrap_or(0);
    let model = fit_model(
        &config,
        data.text.as_ref(),
        data.images.as_ref(),
        data.labels.as_ref(),
        seed,
    )?
    .ok_or_else(|| {
        Failure::config(anyhow!(
            "method {} has nothing to fit",
            config.method.name()
        ))
    })?;
    write_output(args.experiment.out.as_deref(), &model)
}

fn transform(args: &TransformArgs, data_dir: Option<&Path>) -> CliResult<()> {
    let text = fs::read_to_string(&args.model)
        .with_context(|| format!("reading {}", args.model.display()))
        .map_err(Failure::config)?;
    let model: Model = serde_json::from_str(&text)
        .with_context(|| format!("parsing model {}", args.model.display()))
        .map_err(Failure::config)?;
    let images = load_embeddings(&resolve_path(&args.img_emb, data_dir))?;
    let reduced = model.apply(&images)?;
    let mut out = BufWriter::new(File::create(&args.out)?);
    write_embeddings(&reduced, &mut out)?;
    out.flush()?;
    Ok(())
}

fn evaluate(args: &EvaluateArgs, data_dir: Option<&Path>) -> CliResult<()> {
    let mut config = ExperimentConfig::new(Method::ClipPassthrough);
    config.img_emb = Some(args.img_emb.clone());
    config.labels = Some(args.labels.clone());
    if let Some(s) = &args.seeds {
        config.seeds = s.0.clone();
    }
    if let Some(m) = &args.metrics {
        config.metrics = m.clone();
    }
    let data = ExperimentData {
        text: None,
        images: Some(load_embeddings(&resolve_path(&args.img_emb, data_dir))?),
        labels: Some(load_labels(&resolve_path(&args.labels, data_dir))?),
    };
    let report = run_experiment_on(&config, &data)?;
    print_table("embeddings", &report);
    write_output(args.out.as_deref(), &report)
}

fn run(args: &ExperimentArgs, data_dir: Option<&Path>) -> CliResult<()> {
    let config = args.to_config()?;
    let data = ExperimentData::load(&config, data_dir)?;
    let report = run_experiment_on(&config, &data)?;
    print_table(config.method.name(), &report);
    write_output(args.out.as_deref(), &report)
}

fn sweep(args: &SweepArgs, data_dir: Option<&Path>) -> CliResult<()> {
    let mut config = args.experiment.to_config()?;
    if let Some(d) = &args.dims {
        config.sweep = Some(SweepAxis::TargetDim(d.clone()));
    }
    if let Some(p) = &args.prompt_counts {
        config.sweep = Some(SweepAxis::PromptCount(p.clone()));
    }
    let axis = config
        .sweep
        .clone()
        .ok_or_else(|| Failure::config(anyhow!("no sweep axis: pass --dims or --prompt-counts")))?;
    let data = ExperimentData::load(&config, data_dir)?;
    let points = run_sweep(&config, &data, &axis);
    let columns: Vec<(String, &RetrievalReport)> = points
        .iter()
        .filter_map(|p| p.report.as_ref().map(|r| (p.value.to_string(), r)))
        .collect();
    if !columns.is_empty() {
        eprint!("{}", render_table(&columns));
    }
    for SweepPoint { value, error, .. } in &points {
        if let Some(e) = error {
            eprintln!("{value}: {e}");
        }
    }
    write_output(args.experiment.out.as_deref(), &points)
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()));
        let report: RetrievalReport = text
            .and_then(|t| serde_json::from_str(&t).map_err(Into::into))
            .with_context(|| format!("loading report {}", path.display()))
            .map_err(|error| Failure {
                code: EXIT_DATA,
                error,
            })?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        reports.push((name, report));
    }
    if args.json {
        let merged: serde_json::Map<String, serde_json::Value> = reports
            .iter()
            .map(|(n, r)| Ok((n.clone(), serde_json::to_value(r)?)))
            .collect::<Result<_, serde_json::Error>>()
            .map_err(indirect::Error::from)?;
        return write_output(None, &merged);
    }
    let columns: Vec<(String, &RetrievalReport)> =
        reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", render_table(&columns));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let data_dir = cli.data_dir.as_deref();
    let result = match &cli.command {
        Command::Fit(a) => fit(a, data_dir),
        Command::Transform(a) => transform(a, data_dir),
        Command::Evaluate(a) => evaluate(a, data_dir),
        Command::Run(a) => run(a, data_dir),
        Command::Sweep(a) => sweep(a, data_dir),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists_and_ranges() {
        assert_eq!(parse_seeds("0..5").unwrap().0, vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3, 1,4").unwrap().0, vec![3, 1, 4]);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = std::env::temp_dir().join(format!("indirect-cli-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("exp.toml");
        fs::write(&path, "method = \"pca\"\ntarget_dim = 16\nseeds = [1, 2]\n").unwrap();
        let args = ExperimentArgs {
            config: Some(path),
            dim: Some(8),
            ..Default::default()
        };
        let c = args.to_config().unwrap();
        assert_eq!(
            (c.method, c.target_dim, c.seeds),
            (Method::Pca, 8, vec![1, 2])
        );
        fs::remove_dir_all(dir).unwrap();
    }

    #[test]
    fn missing_method_is_a_config_failure() {
        let err = ExperimentArgs::default().to_config().unwrap_err();
        assert_eq!(err.code, EXIT_CONFIG);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
