use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use mlop::experiment::{
    read_dataset, reproduce, rescore, run_on, write_dataset, write_report, ExperimentConfig,
    ReproduceOptions, EXPERIMENTS,
};
use mlop::{generate, load_cloud, DatasetKind, DatasetSpec, Error};

const OUT_ENV: &str = "MLOP_OUT_DIR";

#[derive(Parser)]
#[command(name = "mlop", version, about = "Manifold denoising and reconstruction of point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Reconstruct a dataset described by a config file.
    Run(RunArgs),
    /// Run one of the canned benchmark experiments.
    Reproduce(ReproduceArgs),
    /// Re-score the point sets of an earlier run.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON dataset spec; individual flags override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    kind: Option<DatasetKind>,
    #[arg(long)]
    count: Option<usize>,
    /// Uniform half-width, or the standard deviation for ellipse images.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ambient_dim: Option<usize>,
    #[arg(long)]
    reference_density: Option<usize>,
    #[arg(long)]
    radius: Option<f64>,
    /// Output directory [default: $MLOP_OUT_DIR/<kind>, else runs/<kind>].
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    config: PathBuf,
    /// Read the dataset written by `gen` instead of generating it.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReproduceArgs {
    /// One of o2, cone, cylinder2d, noise-sweep, cylinder6d, ellipses, pca-benchmark.
    name: String,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    threads: Option<usize>,
    /// Override the iteration budget of every run.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Directory written by `run` (Q_initial.csv, Q_final.csv, report.json).
    run: PathBuf,
    /// Dataset directory; regenerated from the recorded config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Where to write the new report [default: print to stdout].
    #[arg(long)]
    out: Option<PathBuf>,
}

fn default_out(name: &str) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
        .join(name)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> mlop::Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn gen(args: GenArgs) -> mlop::Result<()> {
    let mut spec = match &args.spec {
        Some(path) => read_json::<DatasetSpec>(path)?,
        None => {
            let kind = args
                .kind
                .ok_or_else(|| Error::Config("either --spec or --kind is required".into()))?;
            let count = args
                .count
                .ok_or_else(|| Error::Config("--count is required with --kind".into()))?;
            DatasetSpec::new(kind, count, 0.0, 0)
        }
    };
    if let Some(kind) = args.kind {
        spec.kind = kind;
    }
    if let Some(count) = args.count {
        spec.count = count;
    }
    if let Some(noise) = args.noise {
        spec.noise = noise;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    if let Some(n) = args.ambient_dim {
        spec.ambient_dim = Some(n);
    }
    if let Some(d) = args.reference_density {
        spec.reference_density = d;
    }
    if let Some(r) = args.radius {
        spec.radius = Some(r);
    }
    let dataset = generate(&spec)?;
    let out = args.out.unwrap_or_else(|| default_out(spec.kind.name()));
    write_dataset(&dataset, &out)?;
    info!("wrote {} points to {}", dataset.points.len(), out.display());
    Ok(())
}

fn run(args: RunArgs) -> mlop::Result<()> {
    let mut config = ExperimentConfig::from_json_file(&args.config)?;
    if let Some(k) = args.max_iters {
        config.solver.max_iters = k;
    }
    if let Some(t) = args.threads {
        config.solver.threads = Some(t);
    }
    if let Some(seed) = args.seed {
        config.solver.seed = seed;
    }
    let dataset = match &args.data {
        Some(dir) => {
            let dataset = read_dataset(dir)?;
            config.dataset = dataset.spec.clone();
            dataset
        }
        None => generate(&config.dataset)?,
    };
    config.validate()?;
    let out = args
        .out
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| default_out(&config.name));
    let outcome = run_on(&config, dataset)?;
    outcome.write(&out)?;
    let r = &outcome.report;
    info!(
        "{} iterations ({}), report at {}",
        r.iterations_run,
        if r.converged { "converged" } else { "iteration limit" },
        out.join("report.json").display()
    );
    Ok(())
}

fn reproduce_cmd(args: ReproduceArgs) -> mlop::Result<()> {
    if !EXPERIMENTS.contains(&args.name.as_str()) {
        return Err(Error::Config(format!(
            "unknown experiment `{}`; expected one of {}",
            args.name,
            EXPERIMENTS.join(", ")
        )));
    }
    let opts = ReproduceOptions {
        seed: args.seed,
        threads: args.threads,
        max_iters: args.max_iters,
    };
    let result = reproduce(&args.name, &opts)?;
    let out = args.out.unwrap_or_else(|| default_out(&args.name));
    result.write(&out)?;
    print!("{}", result.summary.to_csv());
    Ok(())
}

fn metrics(args: MetricsArgs) -> mlop::Result<()> {
    let old: mlop::ExperimentReport = read_json(&args.run.join("report.json"))?;
    let config: ExperimentConfig =
        serde_json::from_value(old.config.clone()).map_err(|e| Error::Config(format!("recorded config: {e}")))?;
    let dataset = match &args.data {
        Some(dir) => read_dataset(dir)?,
        None => generate(&config.dataset)?,
    };
    let q0 = load_cloud(args.run.join("Q_initial.csv"))?;
    let q = load_cloud(args.run.join("Q_final.csv"))?;
    let mut report = rescore(&config, &dataset, &q0, &q)?;
    report.iterations_run = old.iterations_run;
    report.converged = old.converged;
    match &args.out {
        Some(path) => write_report(&report, path)?,
        None => println!("{}", serde_json::to_string_pretty(&report).expect("report serialises")),
    }
    Ok(())
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        4
    } else if err.is_numerical() {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Reproduce(a) => reproduce_cmd(a),
        Command::Metrics(a) => metrics(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_class() {
        let io = Error::Io {
            path: "x".into(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        };
        assert_eq!(exit_code(&io), 4);
        assert_eq!(exit_code(&Error::Config("bad".into())), 2);
        assert_eq!(exit_code(&Error::NonFiniteGradient { iter: 3, point: 1 }), 3);
        let aborted = Error::Aborted {
            iter: 2,
            source: Box::new(Error::CoincidentPoints { a: 0, b: 1, distance: 0.0 }),
        };
        assert_eq!(exit_code(&aborted), 3);
    }

    #[test]
    fn default_output_root_honours_env() {
        // only this test touches the variable
        std::env::set_var(OUT_ENV, "/tmp/mlop-out");
        assert_eq!(default_out("cyl"), PathBuf::from("/tmp/mlop-out/cyl"));
        std::env::remove_var(OUT_ENV);
        assert_eq!(default_out("cyl"), PathBuf::from("runs/cyl"));
    }
}
