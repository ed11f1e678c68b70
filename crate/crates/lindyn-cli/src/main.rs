use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lindyn_cli::experiments::audit;
use lindyn_cli::{run, validate, ExperimentConfig, RunError};

#[derive(Parser)]
#[command(name = "lindyn", version, about = "Learning-dynamics experiments for two-layer linear networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its CSV/JSON artifacts and manifest.
    Run(ConfigArgs),
    /// Print what `run` would object to; exits 2 if anything.
    Validate(ConfigArgs),
    /// Random-initialisation tools.
    Init {
        #[command(subcommand)]
        command: InitCommand,
    },
}

#[derive(Subcommand)]
enum InitCommand {
    /// Monte Carlo balance statistics of a random initialisation scheme.
    Audit(AuditArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    experiment: Option<String>,
    /// Comma-separated λ values, e.g. `-2,0,2`.
    #[arg(long, allow_hyphen_values = true)]
    lambda: Option<String>,
    /// Layer widths `n_in,n_h,n_out`.
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Any other setting as `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", allow_hyphen_values = true)]
    set: Vec<String>,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long, default_value = "lecun")]
    scheme: String,
    #[arg(long, default_value = "160,80,120")]
    dims: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// First- and second-layer scales for the scaled scheme.
    #[arg(long, default_value = "0.5,1.5")]
    alphas: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig, RunError> {
    let text = match &args.config {
        Some(path) => Some(
            fs::read_to_string(path)
                .map_err(|source| RunError::Io { context: format!("reading {}", path.display()), source })?,
        ),
        None => None,
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    let mut put = |k: &str, v: &Option<String>| {
        if let Some(v) = v {
            pairs.push((k.to_string(), v.clone()));
        }
    };
    put("experiment", &args.experiment);
    put("lambda", &args.lambda);
    put("dims", &args.dims);
    put("eta", &args.eta);
    put("steps", &args.steps);
    put("seed", &args.seed);
    put("output_dir", &args.out.as_ref().map(|p| p.display().to_string()));
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| lindyn_cli::ConfigError::Field {
            field: kv.clone(),
            message: "expected key=value".into(),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(ExperimentConfig::from_sources(text.as_deref(), &pairs)?)
}

fn report(err: &RunError) -> ExitCode {
    match err {
        RunError::Invalid(diags) => {
            for d in diags {
                eprintln!("{d}");
            }
        }
        e => eprintln!("error: {e}"),
    }
    ExitCode::from(err.exit_code() as u8)
}

fn run_and_print(cfg: &ExperimentConfig) -> ExitCode {
    match run(cfg) {
        Ok(m) => {
            for f in &m.files {
                println!("{}", cfg.output_dir.join(&f.path).display());
            }
            println!("{}", lindyn_cli::manifest_path(cfg).display());
            ExitCode::SUCCESS
        }
        Err(e) => report(&e),
    }
}

fn audit_config(a: &AuditArgs) -> Result<ExperimentConfig, RunError> {
    let mut pairs = vec![
        ("experiment".to_string(), "init_audit".to_string()),
        ("dims".into(), a.dims.clone()),
        ("seed".into(), a.seed.to_string()),
        ("trials".into(), a.trials.to_string()),
        ("schemes".into(), a.scheme.clone()),
        ("alphas".into(), a.alphas.clone()),
    ];
    if let Some(out) = &a.out {
        pairs.push(("output_dir".into(), out.display().to_string()));
    }
    Ok(ExperimentConfig::from_sources(None, &pairs)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match load(&args) {
            Ok(cfg) => run_and_print(&cfg),
            Err(e) => report(&e),
        },
        Command::Validate(args) => match load(&args) {
            Ok(cfg) => {
                let diags = validate(&cfg);
                for d in &diags {
                    println!("{d}");
                }
                if diags.is_empty() {
                    println!("ok: {}", cfg.experiment);
                    ExitCode::SUCCESS
                } else {
                    ExitCode::from(2)
                }
            }
            Err(e) => report(&e),
        },
        Command::Init { command: InitCommand::Audit(a) } => {
            let cfg = match audit_config(&a) {
                Ok(c) => c,
                Err(e) => return report(&e),
            };
            let diags = validate(&cfg);
            if !diags.is_empty() {
                return report(&RunError::Invalid(diags));
            }
            match audit::run_audit(&cfg) {
                Ok(rep) => {
                    for s in &rep.schemes {
                        println!(
                            "{}: mean diagonal {:.6} ± {:.2e} (expected {:.6}), var diag {:.4e} (2c = {:.4e}), var off-diag {:.4e} (c = {:.4e})",
                            s.scheme,
                            s.mc.mean_lambda,
                            s.mc.stderr_mean,
                            s.expected_mean,
                            s.mc.var_diag,
                            2.0 * s.coef,
                            s.mc.var_offdiag,
                            s.coef
                        );
                    }
                    run_and_print(&cfg)
                }
                Err(e) => report(&e),
            }
        }
    }
}
