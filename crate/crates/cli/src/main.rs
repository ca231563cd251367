use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use perturbvamp::harness::{
    load_coefficients, run_experiment, write_aggregate_csv, write_trace_csv, ExperimentResult, ExperimentSpec,
    PerturbationKind, SignalSource,
};
use perturbvamp::{BernoulliGaussianPrior, Error, Mode, VampConfig};

mod config;

use config::{parse_modes, Config, SCHEMA_HELP};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "perturbvamp", version, about = "Sparse recovery under structured sensing-matrix perturbations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for trials (default: available parallelism).
    #[arg(long, env = "PERTURBVAMP_THREADS")]
    threads: Option<usize>,
    /// Comma list of oracle, pi, pc.
    #[arg(long, value_parser = parse_mode_list)]
    modes: Option<ModeList>,
}

/// Wrapper so clap treats the comma list as one value.
#[derive(Clone, Debug)]
struct ModeList(Vec<Mode>);

fn parse_mode_list(raw: &str) -> Result<ModeList, String> {
    parse_modes(raw).map(ModeList)
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a Monte-Carlo experiment and write trace.csv, aggregate.csv and manifest.txt.
    #[command(after_help = SCHEMA_HELP)]
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Single realization at N = 512, SNR_w = 30 dB, SNR_e = 20 dB: prints NMSE per iteration.
    Demo {
        #[command(flatten)]
        common: Common,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Diverged(String),
}

impl Failure {
    fn from_core(err: Error) -> Self {
        match err {
            Error::Io(e) => Failure::Io(e.to_string()),
            other => Failure::Config(other.to_string()),
        }
    }
}

fn build_pool(threads: Option<usize>) -> Result<(), Failure> {
    if let Some(t) = threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(format!("cannot size the thread pool: {e}")))?;
    }
    Ok(())
}

fn to_spec(config: &Config) -> Result<ExperimentSpec, Failure> {
    let prior = BernoulliGaussianPrior::new(config.rho, config.mu_x, config.sigma_x2).map_err(Failure::from_core)?;
    let signal = match &config.coeff_path {
        None => SignalSource::Prior,
        Some(path) => {
            let coeffs = load_coefficients(path, Some(config.n)).map_err(|e| match e {
                Error::Io(io) => Failure::Io(format!("{}: {io}", path.display())),
                other => Failure::Config(other.to_string()),
            })?;
            log::info!("loaded {} coefficients, nonzero fraction {:.4}", config.n, coeffs.sparsity);
            SignalSource::Fixed(Arc::new(coeffs.values))
        }
    };
    let spec = ExperimentSpec {
        name: config.name.clone(),
        n: config.n,
        ratio: config.ratio,
        prior,
        perturbation: config.kind,
        snr_w_db: config.snr_w_db,
        snr_e_db: config.snr_e_db.clone(),
        trials: config.trials,
        seed: config.seed,
        modes: config.modes.clone(),
        solver: VampConfig {
            max_iters: config.max_iters,
            gamma1_init: config.gamma1_init,
            damping: config.damping,
            stop_tol: config.stop_tol,
            pc_route: config.pc_route,
            ..VampConfig::default()
        },
        signal,
    };
    spec.validate().map_err(Failure::from_core)?;
    Ok(spec)
}

fn write_outputs(out: &Path, config: &Config, result: &ExperimentResult) -> Result<(), Failure> {
    let io = |what: &str, e: std::io::Error| Failure::Io(format!("{what}: {e}"));
    fs::create_dir_all(out).map_err(|e| io(&out.display().to_string(), e))?;
    let trace = out.join("trace.csv");
    let file = File::create(&trace).map_err(|e| io(&trace.display().to_string(), e))?;
    write_trace_csv(BufWriter::new(file), result).map_err(|e| io(&trace.display().to_string(), e))?;
    let aggregate = out.join("aggregate.csv");
    let file = File::create(&aggregate).map_err(|e| io(&aggregate.display().to_string(), e))?;
    write_aggregate_csv(BufWriter::new(file), result).map_err(|e| io(&aggregate.display().to_string(), e))?;
    let manifest = out.join("manifest.txt");
    let text = format!(
        "# perturbvamp {}\n# rerun: perturbvamp run --config manifest.txt --out <dir>\n{}",
        env!("CARGO_PKG_VERSION"),
        config.to_text()
    );
    fs::write(&manifest, text).map_err(|e| io(&manifest.display().to_string(), e))
}

fn cmd_run(config_path: &Path, out: &Path, common: &Common) -> Result<(), Failure> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", config_path.display())))?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let (mut config, defaulted) = Config::parse(&text, &config_path.display().to_string(), base)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let defaults = Config::default().to_text();
    for key in defaulted {
        let line = defaults.lines().find(|l| l.starts_with(&format!("{key} ="))).unwrap_or(key);
        eprintln!("notice: `{key}` not set, using default `{line}`");
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(ModeList(modes)) = &common.modes {
        config.modes = modes.clone();
    }
    let spec = to_spec(&config)?;
    build_pool(common.threads)?;

    let result = run_experiment(&spec).map_err(Failure::from_core)?;
    write_outputs(out, &config, &result)?;
    if result.all_diverged() {
        return Err(Failure::Diverged(format!(
            "every run diverged ({} runs); see trace.csv and aggregate.csv",
            result.total_diverged()
        )));
    }
    if result.total_diverged() > 0 {
        eprintln!(
            "warning: {} runs diverged and were left out of the means",
            result.total_diverged()
        );
    }
    Ok(())
}

fn demo_config(common: &Common) -> Config {
    Config {
        name: "demo".into(),
        kind: PerturbationKind::Gaussian,
        snr_e_db: vec![20.0],
        trials: 1,
        seed: common.seed.unwrap_or(1),
        modes: common.modes.clone().map_or_else(|| Mode::ALL.to_vec(), |m| m.0),
        ..Config::default()
    }
}

fn cmd_demo(common: &Common) -> Result<(), Failure> {
    let config = demo_config(common);
    let spec = to_spec(&config)?;
    build_pool(common.threads)?;
    let result = run_experiment(&spec).map_err(Failure::from_core)?;
    let trial = &result.trials[0];

    println!(
        "N = {}, M = {}, rho = {}, SNR_w = {} dB, SNR_e = {} dB, seed = {}",
        spec.n,
        spec.rows(),
        config.rho,
        config.snr_w_db,
        config.snr_e_db[0],
        config.seed
    );
    let mut header = format!("{:>4}", "iter");
    for o in &trial.outcomes {
        header.push_str(&format!(" {:>12}", o.mode.label()));
    }
    println!("{header}");
    for k in 0..config.max_iters {
        let mut line = format!("{k:>4}");
        for o in &trial.outcomes {
            match o.records.get(k).and_then(|r| r.nmse_db) {
                Some(v) => line.push_str(&format!(" {v:>12.4}")),
                None => line.push_str(&format!(" {:>12}", "-")),
            }
        }
        println!("{line}");
    }
    let mut last = format!("{:>4}", "final");
    for o in &trial.outcomes {
        match (o.final_nmse_db, &o.failure) {
            (Some(v), _) => last.push_str(&format!(" {v:>12.4}")),
            (None, _) => last.push_str(&format!(" {:>12}", "diverged")),
        }
    }
    println!("{last}");
    if result.all_diverged() {
        return Err(Failure::Diverged("every run diverged".into()));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run { config, out, common } => cmd_run(config, out, common),
        Command::Demo { common } => cmd_demo(common),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_IO)
        }
    }
}
