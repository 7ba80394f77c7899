//! Experiment runner.
//!
//! ```text
//! dyadic-agg --scenario sinusoid1d --n 1024,4096,16384 --sigma 0.5,1,2 \
//!     --rule mean --orderings forward,backward --reps 50 --out results
//! dyadic-agg --scenario box2d --d 2 --n 64 --sigma 0.25 --orderings random
//! dyadic-agg --config table1.toml --emit csv,json,plot
//! ```
//!
//! Every list-valued `--n` / `--sigma` expands to one experiment cell per
//! combination. Failures print a JSON object `{"error": kind, "message": ..}`
//! on stderr and exit with status 2 (usage or configuration) or 1 (anything else).

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dyadic_agg::experiment::{
    emit_results, run_experiment, EmitFormat, EmitOptions, ExperimentConfig, LambdaSpec, OrderingSpec, RuleSpec,
};
use dyadic_agg::metrics::Region;
use dyadic_agg::signals::ScenarioId;
use dyadic_agg::Error;

const SCENARIO_HELP: &str = "\
Scenarios (theta*_i = f(i/n) in 1D; integer pixels (i1, i2) in 2D):
  pc1d        f = 2*1[1/5,2/5] + 1[2/5,3/5] + 2*1[3/5,4/5]
  pl1d        f = 6x on [0,1/3], 6-12x on [1/3,2/3], x-8/3 on [2/3,1]
  pq1d        f = 18x^2 on [0,1/3], -36(x-1/2-1/sqrt12)(x-1/2+1/sqrt12) on [1/3,2/3],
              18(x-1)^2 on [2/3,1]
  sinusoid1d  f = sin(2 pi x) + cos(5 pi x)
  box2d       1 if n/3 <= i1, i2 <= 2n/3, else 0
  circle2d    1 if |(i1, i2) - (n/2, n/2)| <= n/4, else 0
  sinusoid2d  sin(pi i1/n) sin(pi i2/n)
  file:PATH   values from a signal file (header `dyadic-signal d=D n=N encoding=text|binary`)

lambda=auto resolves to 2 max(|theta*|_inf, sigma sqrt(2 log N)) with N = n^d.";

#[derive(Debug, Parser)]
#[command(name = "dyadic-agg", version, about = "Run dyadic sleeping-experts aggregation experiments", after_help = SCENARIO_HELP)]
struct Cli {
    /// TOML file with ExperimentConfig keys; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<ScenarioId>,
    /// Side lengths (powers of two), comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    d: Option<usize>,
    /// Noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    sigma: Vec<f64>,
    /// `mean` or `vaw:<degree>`.
    #[arg(long)]
    rule: Option<RuleSpec>,
    /// `auto` or a positive value.
    #[arg(long)]
    lambda: Option<LambdaSpec>,
    /// forward, backward, random or random:<seed>; predictions are averaged.
    #[arg(long, value_delimiter = ',')]
    orderings: Vec<OrderingSpec>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON array of regions for per-region MSE.
    #[arg(long)]
    regions: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Any of csv, json, plot, trace.
    #[arg(long, value_delimiter = ',', default_value = "csv,json")]
    emit: Vec<EmitFormat>,
}

fn load_base(cli: &Cli) -> Result<toml::Table, Error> {
    let Some(path) = &cli.config else {
        return Ok(toml::Table::new());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    text.parse::<toml::Table>().map_err(|e| Error::Format {
        path: path.clone(),
        message: e.to_string(),
    })
}

fn build_cells(cli: &Cli) -> Result<Vec<ExperimentConfig>, Error> {
    let mut base = load_base(cli)?;
    let mut set = |key: &str, value: toml::Value| {
        base.insert(key.to_string(), value);
    };
    if let Some(s) = &cli.scenario {
        set("scenario", s.to_string().into());
    }
    if let Some(d) = cli.d {
        set("d", (d as i64).into());
    }
    if let Some(r) = &cli.rule {
        set("rule", r.to_string().into());
    }
    if let Some(l) = &cli.lambda {
        set("lambda", l.to_string().into());
    }
    if !cli.orderings.is_empty() {
        set(
            "orderings",
            toml::Value::Array(cli.orderings.iter().map(|o| o.to_string().into()).collect()),
        );
    }
    if let Some(r) = cli.reps {
        set("reps", (r as i64).into());
    }
    if let Some(s) = cli.seed {
        set("seed", (s as i64).into());
    }

    let ns: Vec<Option<usize>> = if cli.n.is_empty() {
        vec![None]
    } else {
        cli.n.iter().copied().map(Some).collect()
    };
    let sigmas: Vec<Option<f64>> = if cli.sigma.is_empty() {
        vec![None]
    } else {
        cli.sigma.iter().copied().map(Some).collect()
    };
    let regions: Vec<Region> = match &cli.regions {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Format {
                path: path.clone(),
                message: e.to_string(),
            })?
        }
        None => Vec::new(),
    };

    let mut cells = Vec::new();
    for n in &ns {
        for sigma in &sigmas {
            let mut table = base.clone();
            if let Some(n) = n {
                table.insert("n".into(), (*n as i64).into());
            }
            if let Some(s) = sigma {
                table.insert("sigma".into(), (*s).into());
            }
            let mut cell: ExperimentConfig = table
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
            if !regions.is_empty() {
                cell.regions = regions.clone();
            }
            cell.validate()?;
            cells.push(cell);
        }
    }
    Ok(cells)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.kind().to_string();
            let detail = e.to_string();
            let report = serde_json::json!({ "error": "usage", "message": message, "detail": detail.trim() });
            eprintln!("{report}");
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            match e {
                Error::Config(_) | Error::Validation(_) | Error::InvalidArgument(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cells = build_cells(cli)?;
    println!(
        "{:<12} {:>2} {:>7} {:>6} {:>8} {:>7} {:>5} {:>10} {:>10} {:>8}",
        "scenario", "d", "n", "sigma", "lambda", "rule", "reps", "mse_mean", "mse_se", "seconds"
    );
    let mut results = Vec::with_capacity(cells.len());
    for cell in &cells {
        let r = run_experiment(cell)?;
        println!(
            "{:<12} {:>2} {:>7} {:>6} {:>8.4} {:>7} {:>5} {:>10.5} {:>10.5} {:>8.2}",
            cell.scenario.to_string(),
            cell.d,
            cell.n,
            cell.sigma,
            r.lambda,
            cell.rule.to_string(),
            cell.reps,
            r.mse_mean,
            r.mse_se,
            r.seconds
        );
        for row in &r.regions {
            println!(
                "    region {:<24} size {:>8} mse {:.5} (se {:.5})",
                row.region.to_string(),
                row.size,
                row.mse_mean,
                row.mse_se
            );
        }
        results.push(r);
    }
    let written = emit_results(
        &results,
        &EmitOptions {
            dir: cli.out.clone(),
            formats: cli.emit.clone(),
        },
    )?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
