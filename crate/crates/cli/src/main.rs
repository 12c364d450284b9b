use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use zsl_emotion::experiment::{
    cmd_cache, cmd_expand, cmd_run, BackendKind, CacheAction, CorpusFormatKind, CorpusSpec,
    ExpandFormat, RunConfig, SampleSpec,
};
use zsl_emotion::nli::ScoringMode;
use zsl_emotion::remote::ENDPOINT_ENV;
use zsl_emotion::{Error, Result};

/// Zero-shot emotion classification with NLI prompt methods.
#[derive(Parser)]
#[command(name = "zsl-emotion", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print every hypothesis generated by the configured methods.
    Expand {
        #[command(flatten)]
        prompts: PromptArgs,
        /// Print `method<TAB>label<TAB>hypothesis` rows instead of groups.
        #[arg(long)]
        tsv: bool,
    },
    /// Score a corpus and write predictions and reports.
    Run {
        #[command(flatten)]
        prompts: PromptArgs,
        #[command(flatten)]
        run: Box<RunArgs>,
    },
    /// Inspect a score cache.
    Cache {
        #[arg(value_enum)]
        action: CacheCmd,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Cache directory; overrides the config's `cache_dir`.
        #[arg(long)]
        cache_dir: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheCmd {
    Stats,
    Verify,
}

#[derive(Args)]
struct PromptArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated method ids.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Comma-separated label ids.
    #[arg(long, value_delimiter = ',')]
    labels: Option<Vec<String>>,
    #[arg(long)]
    representation_table: Option<PathBuf>,
    /// Custom method file (TOML); repeatable.
    #[arg(long = "custom-method")]
    custom_methods: Vec<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// JSONL corpus; use a config file for delimited corpora.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    corpus_name: Option<String>,
    #[arg(long)]
    ensemble: bool,
    #[arg(long)]
    oracle: bool,
    /// Comma-separated ensemble members.
    #[arg(long, value_delimiter = ',')]
    ensemble_methods: Option<Vec<String>>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    /// Sidecar URL; also read from ZSL_EMOTION_ENDPOINT.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model_id: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    in_flight: Option<usize>,
    /// Sample size; requires --seed.
    #[arg(long, requires = "seed")]
    sample: Option<usize>,
    #[arg(long, requires = "sample")]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Mock,
    Remote,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    ThreeWay,
    Binary,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

impl PromptArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(m) = self.methods {
            cfg.methods = m;
        }
        if let Some(l) = self.labels {
            cfg.labels = l;
        }
        if self.representation_table.is_some() {
            cfg.representation_table = self.representation_table;
        }
        if !self.custom_methods.is_empty() {
            cfg.custom_methods = self.custom_methods;
        }
    }
}

impl RunArgs {
    fn apply(self, cfg: &mut RunConfig) {
        if let Some(path) = self.corpus {
            cfg.corpus = Some(CorpusSpec {
                name: None,
                path,
                format: CorpusFormatKind::Jsonl,
                delimited: None,
                mapping: Default::default(),
                skip_malformed: false,
            });
        }
        if let (Some(name), Some(c)) = (self.corpus_name, cfg.corpus.as_mut()) {
            c.name = Some(name);
        }
        cfg.ensemble |= self.ensemble;
        cfg.oracle |= self.oracle;
        if self.ensemble_methods.is_some() {
            cfg.ensemble_methods = self.ensemble_methods;
        }
        if let Some(b) = self.backend {
            cfg.backend.kind = match b {
                BackendArg::Mock => BackendKind::Mock,
                BackendArg::Remote => BackendKind::Remote,
            };
        }
        if self.endpoint.is_some() {
            cfg.backend.endpoint = self.endpoint;
        }
        if let Some(m) = self.model_id {
            cfg.backend.model_id = m;
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::ThreeWay => ScoringMode::ThreeWay,
                ModeArg::Binary => ScoringMode::Binary,
            };
        }
        if self.cache_dir.is_some() {
            cfg.cache_dir = self.cache_dir;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(n) = self.in_flight {
            cfg.in_flight = n;
        }
        if let (Some(n), Some(seed)) = (self.sample, self.seed) {
            cfg.sample = Some(SampleSpec { n, seed });
        }
        if let Some(d) = self.output_dir {
            cfg.output_dir = d;
        }
    }
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Expand { prompts, tsv } => {
            let mut cfg = load_config(prompts.config.as_deref())?;
            prompts.apply(&mut cfg);
            let format = if tsv {
                ExpandFormat::Tsv
            } else {
                ExpandFormat::Grouped
            };
            print!("{}", cmd_expand(&cfg, format)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { prompts, run } => {
            let mut cfg = load_config(prompts.config.as_deref())?;
            prompts.apply(&mut cfg);
            run.apply(&mut cfg);
            if cfg.backend.kind == BackendKind::Remote && cfg.backend.endpoint.is_none() {
                log::info!("endpoint not configured; falling back to {ENDPOINT_ENV}");
            }
            let summary = cmd_run(&cfg)?;
            println!("run_dir\t{}", summary.run_dir.display());
            println!("config_hash\t{}", summary.config_hash);
            println!("instances\t{}", summary.instances);
            println!("unique_pairs\t{}", summary.unique_pairs);
            println!("backend_requests\t{}", summary.backend_requests);
            println!("cache_hits\t{}", summary.cache_hits);
            for s in &summary.report.sources {
                println!(
                    "{}\tP={:.3}\tR={:.3}\tF1={:.3}",
                    s.source, s.macro_avg.precision, s.macro_avg.recall, s.macro_avg.f1
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Cache {
            action,
            config,
            cache_dir,
        } => {
            let dir = match cache_dir {
                Some(d) => d,
                None => load_config(config.as_deref())?
                    .cache_dir
                    .ok_or_else(|| Error::Config("no cache directory given".into()))?,
            };
            let action = match action {
                CacheCmd::Stats => CacheAction::Stats,
                CacheCmd::Verify => CacheAction::Verify,
            };
            let outcome = cmd_cache(&dir, action)?;
            print!("{}", outcome.text);
            Ok(if outcome.clean {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(4)
            })
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
