//! Command-line front end: train, infer, generate, augment, metrics,
//! geodesic, and synthetic-fixture generation.

mod commands;
mod config;
mod error;
mod svg;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "svfd",
    about = "Diffeomorphic registration of weighted point clouds with latent shape codes",
    version
)]
struct Cli {
    /// JSON config file with flat dotted keys (overrides defaults).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single config key, e.g. --set train.epochs=50 (overrides
    /// the file).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    /// Worker threads (default: available cores; 1 forces a single thread).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run single-threaded. Results are split-invariant either way; this
    /// just pins the thread count to 1.
    #[arg(long, global = true, default_value_t = false)]
    deterministic: bool,

    /// Print the effective configuration with provenance and exit.
    #[arg(long, global = true, default_value_t = false)]
    dump_config: bool,

    /// Seed override (shorthand for --set train.seed=N).
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model on a shape cohort and write a checkpoint.
    Train {
        /// Template (reference) shape file: OBJ or PLY.
        #[arg(long)]
        template: PathBuf,
        /// Source shape files.
        #[arg(long, num_args = 1.., required = true)]
        sources: Vec<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Epoch count override (shorthand for --set train.epochs=N).
        #[arg(long)]
        epochs: Option<usize>,
        /// Write an intermediate checkpoint every N epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Fit the latent code of an unseen shape against a frozen checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shape file to register.
        #[arg(long)]
        shape: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample latent codes and generate synthetic shapes from the template.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// gaussian: draw from N(0, code covariance); interpolate: blend two
        /// training codes; code-file: read codes from JSON.
        #[arg(long, value_parser = ["gaussian", "interpolate", "code-file"], default_value = "gaussian")]
        mode: String,
        /// Number of shapes to generate (gaussian mode).
        #[arg(long, default_value_t = 4)]
        n: usize,
        /// Two training-code ids for interpolate mode.
        #[arg(long, num_args = 2)]
        ids: Option<Vec<String>>,
        /// Interpolation parameters in [0, 1] for interpolate mode.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.5, 0.75])]
        ts: Vec<f64>,
        /// JSON file with code vectors for code-file mode.
        #[arg(long)]
        code_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate quality-gated synthetic variants of a vessel-model dataset.
    Augment {
        /// Directory holding paired <name>.ply meshes and <name>.json vessel
        /// models.
        #[arg(long)]
        models: PathBuf,
        /// Number of accepted variants to produce.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate discrepancy measures between two shapes.
    Metrics {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Measures to compute (repeatable); default: all feasible without
        /// flags.
        #[arg(long = "measure")]
        measures: Vec<String>,
        /// Normal-penalty weight; enables NCD.
        #[arg(long)]
        w_n: Option<f64>,
        /// Sinkhorn temperature; enables SD.
        #[arg(long)]
        epsilon: Option<f64>,
        /// Sinkhorn annealing factor.
        #[arg(long)]
        scaling: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export intermediate flow snapshots of a registration as numbered PLY
    /// files.
    Geodesic {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shape file whose forward path is exported.
        #[arg(long)]
        shape: PathBuf,
        /// Training-code id conditioning the flow (alternative: --code-file).
        #[arg(long)]
        id: Option<String>,
        /// JSON file holding one code vector.
        #[arg(long)]
        code_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic test shapes (mesh PLY plus vessel-model JSON).
    Synth {
        #[arg(long, value_parser = ["sphere", "ellipsoid", "tube", "tube-bent", "y-branch"])]
        kind: String,
        /// Face-count target.
        #[arg(long, default_value_t = 960)]
        resolution: usize,
        /// Ellipsoid semi-axes.
        #[arg(long, value_delimiter = ',', default_values_t = [1.2, 1.0, 0.8])]
        semi_axes: Vec<f64>,
        /// Tube/branch radius.
        #[arg(long, default_value_t = 0.1)]
        radius: f64,
        /// Tube/trunk length.
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        /// Output file stem (writes <stem>.ply and, for vessels,
        /// <stem>.json).
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit with its own code 2; usage problems are
            // validation failures here
            let _ = e.print();
            std::process::exit(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| CliError::validation(format!("thread pool: {e}")))?;
    }
    let mut named: Vec<(&'static str, Option<serde_json::Value>)> = Vec::new();
    if let Some(seed) = cli.seed {
        named.push(("train.seed", Some(seed.into())));
    }
    if let Command::Train { epochs, .. } = &cli.command {
        if let Some(e) = epochs {
            named.push(("train.epochs", Some((*e).into())));
        }
    }
    let config = config::RunConfig::load(cli.config.as_deref(), &cli.sets, &named)?;
    if cli.dump_config {
        println!("{}", serde_json::to_string_pretty(&config.dump())?);
        return Ok(());
    }

    match cli.command {
        Command::Train {
            template,
            sources,
            out,
            checkpoint_every,
            ..
        } => commands::train(&config, &template, &sources, &out, checkpoint_every),
        Command::Infer {
            checkpoint,
            shape,
            out,
        } => commands::infer(&config, &checkpoint, &shape, &out),
        Command::Generate {
            checkpoint,
            mode,
            n,
            ids,
            ts,
            code_file,
            out,
        } => commands::generate(
            &config,
            &checkpoint,
            &mode,
            n,
            ids.as_deref(),
            &ts,
            code_file.as_deref(),
            &out,
        ),
        Command::Augment { models, n, out } => commands::augment(&config, &models, n, &out),
        Command::Metrics {
            a,
            b,
            measures,
            w_n,
            epsilon,
            scaling,
            out,
        } => commands::metrics(&a, &b, &measures, w_n, epsilon, scaling, out.as_deref()),
        Command::Geodesic {
            checkpoint,
            shape,
            id,
            code_file,
            out,
        } => commands::geodesic(
            &config,
            &checkpoint,
            &shape,
            id.as_deref(),
            code_file.as_deref(),
            &out,
        ),
        Command::Synth {
            kind,
            resolution,
            semi_axes,
            radius,
            length,
            out,
        } => commands::synth(&kind, resolution, &semi_axes, radius, length, &out),
    }
}
