use std::io::Read;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use recaudit::catalog::DEFAULT_FUZZY_THRESHOLD;
use recaudit::{builtin_attributes, load_catalog, load_config, parse_response, ConfigError, RunError};

/// Counterfactual bias audits of LLM recommenders.
#[derive(Debug, Parser)]
#[command(name = "recaudit", version)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a config file and print its digest.
    Validate { config: PathBuf },
    /// Run an experiment and write its artifact and report.
    Run {
        config: PathBuf,
        /// Override max_concurrency from the config.
        #[arg(long)]
        concurrency: Option<usize>,
    },
    /// Build one report from one or more run directories.
    Report {
        #[arg(required = true)]
        artifacts: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// List the built-in sensitive attributes.
    Attributes {
        #[arg(long)]
        category: Option<String>,
    },
    /// Parse a response file (or stdin with `-`) against a catalog.
    Parse {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long, default_value = "catalog")]
        domain: String,
        #[arg(long, default_value_t = 20)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_FUZZY_THRESHOLD)]
        threshold: f64,
        response: PathBuf,
    },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => config_failure(c),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn config_failure(e: ConfigError) -> Failure {
    match e {
        ConfigError::Io { .. } => Failure::Runtime(e.to_string()),
        other => Failure::Invalid(other.to_string()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Validate { config } => {
            let c = load_config(&config).map_err(config_failure)?;
            println!("ok {}", c.digest);
            println!(
                "model {} | {} catalog(s) | {} attribute(s) | k={} | seeds={:?} | prag={}",
                c.model_id,
                c.catalogs.len(),
                c.attributes.len(),
                c.k,
                c.seeds,
                c.prag_mode
            );
            Ok(())
        }
        Command::Run { config, concurrency } => {
            let mut c = load_config(&config).map_err(config_failure)?;
            if let Some(n) = concurrency {
                if n == 0 {
                    return Err(Failure::Invalid("--concurrency must be >= 1".into()));
                }
                c.max_concurrency = n;
            }
            let outcome = recaudit::run(&c)?;
            let a = &outcome.artifact;
            println!("artifact {}", outcome.artifact_path.display());
            println!(
                "records {} | exclusions {} | backend calls {} | cache hits {}",
                a.record_count(),
                a.exclusion_count(),
                a.stats.backend_calls,
                a.stats.cache_hits
            );
            for f in &outcome.report_files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Report { artifacts, out } => {
            for f in recaudit::runner::report_dirs(&artifacts, &out)? {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Attributes { category } => {
            let attrs = builtin_attributes(category.as_deref()).map_err(|e| Failure::Invalid(e.to_string()))?;
            for a in attrs {
                println!("{}\t{}\t{}", a.id, a.category, a.phrase);
            }
            Ok(())
        }
        Command::Parse {
            catalog,
            domain,
            k,
            threshold,
            response,
        } => {
            if k == 0 {
                return Err(Failure::Invalid("--k must be >= 1".into()));
            }
            let catalog = load_catalog(&catalog, &domain).map_err(|e| Failure::Runtime(e.to_string()))?;
            let text = if response.as_os_str() == "-" {
                let mut s = String::new();
                std::io::stdin()
                    .read_to_string(&mut s)
                    .map_err(|e| Failure::Runtime(e.to_string()))?;
                s
            } else {
                std::fs::read_to_string(&response)
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", response.display())))?
            };
            let list = parse_response(&text, &catalog, k, threshold).map_err(|e| Failure::Runtime(e.to_string()))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&list).expect("ranked list serializes")
            );
            Ok(())
        }
    }
}
