use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpg::experiment::{self, ExperimentConfig};
use cpg::trainer::Method;
use cpg::Error;

#[derive(Parser)]
#[command(name = "cpg", version, about = "Long-tailed semi-supervised training with controllable pseudo-labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// cpg, supervised_ce, supervised_la or consistency_ssl.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed and write histories, a summary and the resolved config.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write a long-format CSV for plotting.
        #[arg(long)]
        emit_plot_data: bool,
    },
    /// Welch t-test of two run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        /// Write comparison.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Five-row component ablation over the configured scenarios.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write the generated splits of every seed as CSV.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Summarize a registry snapshot.
    Inspect {
        path: PathBuf,
        #[arg(long)]
        num_classes: Option<usize>,
    },
}

fn load(common: &Common) -> cpg::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(name) = &common.method {
        cfg.method = serde_json::from_value(serde_json::Value::String(name.clone()))
            .map_err(|_| Error::InvalidConfig(format!("method: unknown method \"{name}\"")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn execute(cli: Cli) -> cpg::Result<()> {
    match cli.command {
        Command::Run {
            common,
            emit_plot_data,
        } => {
            let cfg = load(&common)?;
            let out = cfg.output_dir(common.out.as_deref());
            let result = experiment::run(&cfg, &out, emit_plot_data)?;
            for (name, m) in &result.summary.metrics {
                println!("{name:<17} {:.4} ± {:.4}", m.mean, m.std);
            }
            print_paths(&result.files);
        }
        Command::Compare { dir_a, dir_b, out } => {
            let cmp = experiment::compare(&dir_a, &dir_b)?;
            print!("{}", cmp.render());
            if let Some(out) = out {
                let out = experiment::apply_output_root(out);
                std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
                let path = out.join("comparison.json");
                std::fs::write(&path, serde_json::to_string_pretty(&cmp)?).map_err(|e| io(&path, e))?;
                print_paths(&[path]);
            }
        }
        Command::Ablate { common } => {
            let mut cfg = load(&common)?;
            cfg.method = Method::Cpg;
            let out = common
                .out
                .clone()
                .map(experiment::apply_output_root)
                .unwrap_or_else(|| cfg.output_dir(None).join("ablation"));
            let (matrix, files) = experiment::ablate(&cfg, &out)?;
            print!("{}", matrix.to_csv());
            print_paths(&files);
        }
        Command::GenData { common } => {
            let cfg = load(&common)?;
            let out = common
                .out
                .clone()
                .map(experiment::apply_output_root)
                .unwrap_or_else(|| experiment::apply_output_root(PathBuf::from("data")));
            print_paths(&experiment::gen_data(&cfg, &out)?);
        }
        Command::Inspect { path, num_classes } => {
            print!("{}", experiment::inspect(&path, num_classes)?);
        }
    }
    Ok(())
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
