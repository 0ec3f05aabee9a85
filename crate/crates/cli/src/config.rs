use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Deserialize;

use patch_critic::calibration::ThresholdPolicy;
use patch_critic::critic::{CriticVariant, ParseMode, PatchView, DEFAULT_MAX_TOKENS, DEFAULT_TEMPERATURE};
use patch_critic::dataset::{ComplexityUnit, DatasetFormat, DatasetPaths};

/// Settings shared by every command. Each may also be given in the config
/// file under the same name with `-` replaced by `_`.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML config file; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Task-instance file.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    /// Dataset format: jsonl or json.
    #[arg(long, global = true)]
    pub format: Option<String>,
    /// Candidate-patch sidecar (JSONL).
    #[arg(long, global = true)]
    pub candidates: Option<PathBuf>,
    /// Ground-truth labels sidecar (JSONL).
    #[arg(long, global = true)]
    pub labels: Option<PathBuf>,
    /// Pre-commit snapshot sidecar (JSONL).
    #[arg(long, global = true)]
    pub snapshots: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Replay cache directory.
    #[arg(long, global = true)]
    pub cache: Option<PathBuf>,
    /// Generation model id.
    #[arg(long, global = true)]
    pub model: Option<String>,
    /// Maximum parallel provider calls.
    #[arg(long, global = true)]
    pub concurrency: Option<usize>,
    /// Root seed for every randomized step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Treat every cache miss as an error instead of calling a provider.
    #[arg(long, global = true)]
    pub offline: bool,
    #[arg(long, global = true)]
    pub confidence_max: Option<f64>,
    #[arg(long, global = true)]
    pub complexity_min: Option<f64>,
    /// chars or lines.
    #[arg(long, global = true)]
    pub complexity_unit: Option<String>,
    /// Skip the confidence/complexity policy in `aggregate`.
    #[arg(long, global = true)]
    pub no_calibration: bool,
    /// strict or lenient.
    #[arg(long, global = true)]
    pub parse_mode: Option<String>,
    /// Override the patch rendering of every variant: default or function.
    #[arg(long, global = true)]
    pub patch_view: Option<String>,
    /// Recorded embeddings (JSONL of digest/vector); otherwise the HTTP provider.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, global = true)]
    pub embed_model: Option<String>,
    #[arg(long, global = true)]
    pub embed_max_chars: Option<usize>,
    /// Fraction of instances (by sorted id) used to fit the similarity threshold.
    #[arg(long, global = true)]
    pub validation_fraction: Option<f64>,
    /// Pass probability of the random baseline; defaults to the label frequency.
    #[arg(long, global = true)]
    pub p_pass: Option<f64>,
    /// Score fail/failure as the positive class.
    #[arg(long, global = true)]
    pub flip_positive: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<PathBuf>,
    format: Option<String>,
    candidates: Option<PathBuf>,
    labels: Option<PathBuf>,
    snapshots: Option<PathBuf>,
    output: Option<PathBuf>,
    cache: Option<PathBuf>,
    model: Option<String>,
    concurrency: Option<usize>,
    seed: Option<u64>,
    offline: Option<bool>,
    confidence_max: Option<f64>,
    complexity_min: Option<f64>,
    complexity_unit: Option<String>,
    calibrate: Option<bool>,
    parse_mode: Option<String>,
    patch_view: Option<String>,
    embeddings: Option<PathBuf>,
    embed_model: Option<String>,
    embed_max_chars: Option<usize>,
    validation_fraction: Option<f64>,
    p_pass: Option<f64>,
    flip_positive: Option<bool>,
    temperature: Option<f64>,
    max_tokens: Option<u32>,
    variants: Option<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: DatasetPaths,
    pub output: PathBuf,
    pub cache: PathBuf,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub concurrency: usize,
    pub seed: u64,
    pub offline: bool,
    pub policy: ThresholdPolicy,
    pub calibrate: bool,
    pub parse_mode: ParseMode,
    pub patch_view: Option<PatchView>,
    pub embeddings: Option<PathBuf>,
    pub embed_model: String,
    pub embed_max_chars: Option<usize>,
    pub validation_fraction: f64,
    pub p_pass: Option<f64>,
    pub flip_positive: bool,
    pub variants: Vec<String>,
}

fn resolve(base: &Path, p: Option<PathBuf>) -> Option<PathBuf> {
    p.map(|p| if p.is_relative() { base.join(p) } else { p })
}

impl RunConfig {
    pub fn load(args: &ConfigArgs) -> Result<Self> {
        let (file, base) = match &args.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                let file: FileConfig =
                    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
                (file, path.parent().map(Path::to_path_buf).unwrap_or_default())
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        let pick =
            |cli: &Option<PathBuf>, from_file: Option<PathBuf>| cli.clone().or_else(|| resolve(&base, from_file));

        let Some(instances) = pick(&args.dataset, file.dataset) else {
            bail!("no dataset given (use --dataset or `dataset` in the config file)");
        };
        let format: DatasetFormat = args
            .format
            .clone()
            .or(file.format)
            .unwrap_or_else(|| "jsonl".into())
            .parse()?;
        let complexity_unit: ComplexityUnit = match args.complexity_unit.clone().or(file.complexity_unit) {
            Some(s) => s.parse().map_err(anyhow::Error::msg)?,
            None => ComplexityUnit::default(),
        };
        let policy = ThresholdPolicy {
            confidence_max: args.confidence_max.or(file.confidence_max).unwrap_or(65.0),
            complexity_min: args.complexity_min.or(file.complexity_min).unwrap_or(50.0),
            complexity_unit,
        };
        policy.validate()?;
        let parse_mode = match args.parse_mode.clone().or(file.parse_mode).as_deref() {
            None | Some("strict") => ParseMode::Strict,
            Some("lenient") => ParseMode::Lenient,
            Some(other) => bail!("unknown parse mode `{other}` (expected strict or lenient)"),
        };
        let patch_view = match args.patch_view.clone().or(file.patch_view) {
            Some(s) => Some(s.parse::<PatchView>().map_err(anyhow::Error::msg)?),
            None => None,
        };
        let concurrency = args.concurrency.or(file.concurrency).unwrap_or(4);
        if concurrency < 1 {
            bail!("concurrency must be at least 1");
        }
        let validation_fraction = args.validation_fraction.or(file.validation_fraction).unwrap_or(0.2);
        if !(0.0..=1.0).contains(&validation_fraction) {
            bail!("validation_fraction must be within 0..=1");
        }
        let temperature = file.temperature.unwrap_or(DEFAULT_TEMPERATURE);
        let max_tokens = file.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS);
        if temperature < 0.0 || max_tokens < 1 {
            bail!("temperature must be >= 0 and max_tokens >= 1");
        }
        let variants = file.variants.unwrap_or_default();
        for v in &variants {
            check_approach(v)?;
        }
        let output = pick(&args.output, file.output).unwrap_or_else(|| PathBuf::from("out"));
        let cache = pick(&args.cache, file.cache).unwrap_or_else(|| output.join("cache"));

        Ok(RunConfig {
            dataset: DatasetPaths {
                instances,
                format,
                candidates: pick(&args.candidates, file.candidates),
                labels: pick(&args.labels, file.labels),
                snapshots: pick(&args.snapshots, file.snapshots),
            },
            output,
            cache,
            model: args.model.clone().or(file.model).unwrap_or_else(|| "default".into()),
            temperature,
            max_tokens,
            concurrency,
            seed: args.seed.or(file.seed).unwrap_or(0),
            offline: args.offline || file.offline.unwrap_or(false),
            policy,
            calibrate: !args.no_calibration && file.calibrate.unwrap_or(true),
            parse_mode,
            patch_view,
            embeddings: pick(&args.embeddings, file.embeddings),
            embed_model: args
                .embed_model
                .clone()
                .or(file.embed_model)
                .unwrap_or_else(|| "default".into()),
            embed_max_chars: args.embed_max_chars.or(file.embed_max_chars),
            validation_fraction,
            p_pass: args.p_pass.or(file.p_pass),
            flip_positive: args.flip_positive || file.flip_positive.unwrap_or(false),
            variants,
        })
    }
}

pub const RANDOM: &str = "random";
pub const EDIT_DISTANCE: &str = "edit_distance";

/// Accepts critic variant names and the two baselines.
pub fn check_approach(name: &str) -> Result<()> {
    if name == RANDOM || name == EDIT_DISTANCE || name.parse::<CriticVariant>().is_ok() {
        Ok(())
    } else {
        bail!("unknown variant `{name}`")
    }
}
