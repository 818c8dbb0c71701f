mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{Command, RunConfig, OUT_DIR_ENV};

#[derive(Parser)]
#[command(name = "ganmc", version, about = "WGAN-based Monte Carlo designs for treatment-effect estimators")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config and the environment).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for replications (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    Subsample,
    Architecture,
    Size,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the covariate and outcome generators.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Generator steps for both stages.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        n_critic: Option<usize>,
    },
    /// Write synthetic observed rows drawn from trained models.
    Generate {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long, short = 'n', default_value_t = 0)]
        rows: usize,
        #[arg(long)]
        treated_fraction: Option<f64>,
    },
    /// Draw a population with both potential outcomes.
    Population {
        #[arg(long)]
        models: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        treated_fraction: Option<f64>,
    },
    /// Monte Carlo comparison of estimators on a population file.
    Simulate {
        #[arg(long)]
        population: Option<PathBuf>,
        /// Comma-separated estimator names, e.g. DIFF,DR-LM.
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        #[arg(long)]
        reps: Option<usize>,
        /// Rows per draw.
        #[arg(long, short = 'n')]
        draw_size: Option<usize>,
    },
    /// Fidelity diagnostics comparing real and generated tables.
    Diagnose {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        generated: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Subsample, architecture or training-size robustness study.
    Robustness {
        #[arg(long, value_enum)]
        protocol: Protocol,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        fraction: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        architectures: Option<Vec<String>>,
    },
}

#[derive(Serialize)]
struct ErrorBody {
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    violations: Vec<String>,
}

#[derive(Serialize)]
struct ErrorDoc {
    error: ErrorBody,
}

fn fail(kind: &str, message: String, violations: Vec<String>, code: u8) -> ExitCode {
    let doc = ErrorDoc {
        error: ErrorBody {
            kind: kind.into(),
            message,
            violations,
        },
    };
    eprintln!("{}", serde_json::to_string(&doc).expect("error serializes"));
    ExitCode::from(code)
}

fn resolve(common: &Common, cmd: &Cmd) -> Result<(RunConfig, Command), String> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.output_dir = Some(dir.into());
        }
    }
    if let Some(o) = &common.out {
        cfg.output_dir = Some(o.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = Some(s);
    }
    if let Some(t) = common.threads {
        cfg.simulate.threads = t;
    }
    let which = match cmd {
        Cmd::Train { data, steps, batch_size, n_critic } => {
            if let Some(d) = data {
                cfg.data = Some(d.clone());
            }
            let mut ty = cfg.train_y();
            for t in [&mut cfg.train, &mut ty] {
                if let Some(s) = steps {
                    t.total_steps = *s;
                }
                if let Some(b) = batch_size {
                    t.batch_size = *b;
                }
                if let Some(k) = n_critic {
                    t.n_critic = *k;
                }
            }
            cfg.train_y = Some(ty);
            Command::Train
        }
        Cmd::Generate { models, treated_fraction, .. } => {
            if let Some(m) = models {
                cfg.models = Some(m.clone());
            }
            if let Some(f) = treated_fraction {
                cfg.population.treated_fraction = Some(*f);
            }
            Command::Generate
        }
        Cmd::Population { models, size, treated_fraction } => {
            if let Some(m) = models {
                cfg.models = Some(m.clone());
            }
            if let Some(s) = size {
                cfg.population.size = *s;
            }
            if let Some(f) = treated_fraction {
                cfg.population.treated_fraction = Some(*f);
            }
            Command::Population
        }
        Cmd::Simulate { population, estimators, reps, draw_size } => {
            if let Some(p) = population {
                cfg.population.file = Some(p.clone());
            }
            if let Some(list) = estimators {
                cfg.simulate.estimators = list
                    .iter()
                    .map(|s| s.parse().map_err(|e: ganmc::Error| e.to_string()))
                    .collect::<Result<_, _>>()?;
            }
            if let Some(r) = reps {
                cfg.simulate.reps = *r;
            }
            if let Some(n) = draw_size {
                cfg.simulate.n = Some(*n);
            }
            Command::Simulate
        }
        Cmd::Diagnose { real, generated, bins } => {
            if let Some(r) = real {
                cfg.diagnose.real = Some(r.clone());
            }
            if let Some(g) = generated {
                cfg.diagnose.generated = Some(g.clone());
            }
            if let Some(b) = bins {
                cfg.diagnose.bins = *b;
            }
            Command::Diagnose
        }
        Cmd::Robustness { data, runs, fraction, fractions, architectures, .. } => {
            if let Some(d) = data {
                cfg.data = Some(d.clone());
            }
            if let Some(r) = runs {
                cfg.robustness.runs = *r;
            }
            if let Some(f) = fraction {
                cfg.robustness.fraction = *f;
            }
            if let Some(f) = fractions {
                cfg.robustness.fractions = f.clone();
            }
            if let Some(a) = architectures {
                cfg.robustness.architectures = a.clone();
            }
            Command::Robustness
        }
    };
    Ok((cfg, which))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, which) = match resolve(&cli.common, &cli.cmd) {
        Ok(v) => v,
        Err(e) => return fail("config", e, Vec::new(), 2),
    };
    let mut v = config::violations(&cfg, which);
    if let Cmd::Generate { rows: 0, .. } = cli.cmd {
        v.push("generate needs --rows greater than 0".into());
    }
    if which == Command::Simulate && cfg.simulate.n.is_none() {
        v.push("simulate.n (draw size) is required".into());
    }
    if !v.is_empty() {
        return fail("config", format!("{} configuration violation(s)", v.len()), v, 2);
    }
    let result = match &cli.cmd {
        Cmd::Train { .. } => commands::train(&cfg),
        Cmd::Generate { rows, .. } => commands::generate(&cfg, *rows),
        Cmd::Population { .. } => commands::population(&cfg),
        Cmd::Simulate { .. } => commands::simulate(&cfg),
        Cmd::Diagnose { .. } => commands::diagnose(&cfg),
        Cmd::Robustness { protocol, .. } => commands::robustness(
            &cfg,
            match protocol {
                Protocol::Subsample => commands::Study::Subsample,
                Protocol::Architecture => commands::Study::Architecture,
                Protocol::Size => commands::Study::Size,
            },
        ),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.kind() == "config" { 2 } else { 1 };
            fail(e.kind(), e.to_string(), Vec::new(), code)
        }
    }
}
