//! `lrc`: compress toy convolutional networks by low-rank response
//! approximation, as composable subcommands with file handoffs.
//!
//! Exit codes: 0 success, 1 validation/usage error, 2 numerical failure.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lrc_core::approx::{SolverConfig, SolverMode};
use lrc_core::model::{gen_toy_dataset, io, toy_cnn, train_toy, Layer};
use lrc_core::pipeline::{
    benchmark, compress_network, evaluate, plan_from_network, spectra_from_network, SampleBudget,
};
use lrc_core::rank_select::{greedy_select, ComplexityModel, LayerSpectrum, RankPlan};
use lrc_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lrc", version, about = "Low-rank compression of toy convolutional networks")]
struct Cli {
    /// Seed that all randomness derives from.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker threads; must be >= 1. Execution is currently single-threaded,
    /// the flag is accepted for forward compatibility.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Verbose logging on stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural toy dataset (TOYD v1 file).
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long, default_value_t = 512)]
        n: usize,
        /// Number of pattern classes (2..=16).
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Image side length (16 or 32).
        #[arg(long, default_value_t = 16)]
        hw: usize,
    },
    /// Train the toy CNN on a dataset and save it (LRCM v1 directory).
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 12)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Base filter count of the architecture.
        #[arg(long, default_value_t = 16)]
        width: usize,
    },
    /// Write per-layer PCA energy spectra as JSON.
    Spectra {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Images sampled per layer.
        #[arg(long, default_value_t = 256)]
        images: usize,
        /// Positions sampled per image.
        #[arg(long, default_value_t = 4)]
        positions: usize,
    },
    /// Greedy whole-model rank selection under a target speedup.
    Plan {
        #[arg(long)]
        spectra: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        target_speedup: f64,
        /// Pin a layer's rank: --pin LAYER=RANK (repeatable).
        #[arg(long = "pin", value_parser = parse_pin)]
        pins: Vec<(usize, usize)>,
        /// Drop the restore-layer (d * d') term from reported speedups.
        #[arg(long)]
        no_restore_term: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compress a model and save the result.
    Compress {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Rank plan JSON produced by `plan`.
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Explicit ranks: "full" or "LAYER=RANK,LAYER=RANK".
        #[arg(long)]
        ranks: Option<String>,
        /// Plan internally for this whole-model speedup.
        #[arg(long)]
        target_speedup: Option<f64>,
        #[arg(long, value_enum, default_value_t = ModeArg::Asymmetric)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.01)]
        lambda_warm: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda_final: f64,
        /// Iterations per penalty phase.
        #[arg(long, default_value_t = 25)]
        iters: usize,
        /// Ridge added to the sample covariance; defaults to automatic.
        #[arg(long)]
        ridge: Option<f64>,
        #[arg(long, default_value_t = 256)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        positions: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate and write a report JSON here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Evaluate a compressed model against its original.
    Eval {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        compressed: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 256)]
        images: usize,
        #[arg(long, default_value_t = 4)]
        positions: usize,
        /// Write the report JSON here (a table always goes to stdout).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Measure wall-clock speedup too (adds a nondeterministic field).
        #[arg(long)]
        bench: bool,
        #[arg(long, default_value_t = 7)]
        reps: usize,
    },
    /// Median forward-pass wall clock of a model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 9)]
        reps: usize,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Linear,
    Nonlinear,
    Asymmetric,
}

impl From<ModeArg> for SolverMode {
    fn from(m: ModeArg) -> SolverMode {
        match m {
            ModeArg::Linear => SolverMode::Linear,
            ModeArg::Nonlinear => SolverMode::NonlinearSymmetric,
            ModeArg::Asymmetric => SolverMode::NonlinearAsymmetric,
        }
    }
}

fn parse_pin(s: &str) -> std::result::Result<(usize, usize), String> {
    let (layer, rank) = s
        .split_once('=')
        .ok_or_else(|| format!("pin '{s}' must look like LAYER=RANK"))?;
    let layer = layer
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("pin layer '{layer}': {e}"))?;
    let rank = rank
        .trim()
        .parse::<usize>()
        .map_err(|e| format!("pin rank '{rank}': {e}"))?;
    Ok((layer, rank))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return if ok { ExitCode::SUCCESS } else { ExitCode::from(1) };
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Validation("--threads must be >= 1".into()));
    }
    let seed = cli.seed;
    match cli.command {
        Command::GenData { out, n, classes, hw } => {
            let data = gen_toy_dataset(seed, n, classes, hw)?;
            io::save_dataset(&data, &out)?;
            println!(
                "wrote {} images ({}x{}, {} classes) to {}",
                n,
                hw,
                hw,
                classes,
                out.display()
            );
            Ok(())
        }
        Command::Train {
            data,
            out,
            epochs,
            lr,
            width,
        } => {
            let dataset = io::load_dataset(&data)?;
            let net = toy_cnn(dataset.hw, dataset.num_classes, width, seed)?;
            let trained = train_toy(&net, &dataset, epochs, lr, seed)?;
            let acc = lrc_core::model::accuracy(&trained, &dataset)?;
            io::save_network(&trained, &out)?;
            println!(
                "trained {} epochs, train accuracy {:.4}, saved to {}",
                epochs,
                acc,
                out.display()
            );
            Ok(())
        }
        Command::Spectra {
            model,
            data,
            out,
            images,
            positions,
        } => {
            let net = io::load_network(&model)?;
            let dataset = io::load_dataset(&data)?;
            let budget = SampleBudget::new(images, positions, seed);
            let spectra = spectra_from_network(&net, &dataset, &budget)?;
            std::fs::write(&out, serde_json::to_string_pretty(&spectra)?)?;
            for s in &spectra {
                let total: f64 = s.eigenvalues.iter().sum();
                println!(
                    "layer {}: d = {}, total energy {:.6e}",
                    s.layer_idx,
                    s.eigenvalues.len(),
                    total
                );
            }
            println!("wrote spectra to {}", out.display());
            Ok(())
        }
        Command::Plan {
            spectra,
            model,
            target_speedup,
            pins,
            no_restore_term,
            out,
        } => {
            let spectra: Vec<LayerSpectrum> =
                serde_json::from_str(&std::fs::read_to_string(&spectra)?)?;
            let net = io::load_network(&model)?;
            let mut complexity = ComplexityModel::from_network(&net)?;
            if no_restore_term {
                complexity = complexity.without_restore_term();
            }
            let pinned: BTreeMap<usize, usize> = pins.into_iter().collect();
            let plan = greedy_select(&spectra, &complexity, target_speedup, &pinned)?;
            plan.save(&out)?;
            println!(
                "ranks {:?}, predicted speedup {:.3}x, energy {:.6e}",
                plan.ranks, plan.predicted_speedup, plan.energy_objective
            );
            println!("wrote plan to {}", out.display());
            Ok(())
        }
        Command::Compress {
            model,
            data,
            plan,
            ranks,
            target_speedup,
            mode,
            lambda_warm,
            lambda_final,
            iters,
            ridge,
            images,
            positions,
            out,
            report,
        } => {
            let given = [plan.is_some(), ranks.is_some(), target_speedup.is_some()]
                .iter()
                .filter(|&&b| b)
                .count();
            if given != 1 {
                return Err(Error::Validation(
                    "give exactly one of --plan, --ranks, --target-speedup".into(),
                ));
            }
            let net = io::load_network(&model)?;
            let dataset = io::load_dataset(&data)?;
            let budget = SampleBudget::new(images, positions, seed);
            let rank_plan = if let Some(path) = plan {
                RankPlan::load(&path)?
            } else if let Some(spec) = ranks {
                ranks_from_spec(&net, &spec)?
            } else {
                plan_from_network(&net, &dataset, target_speedup.unwrap(), &budget)?
            };
            let config = SolverConfig {
                lambda_warm,
                lambda_final,
                iters_per_phase: iters,
                ridge,
                mode: mode.into(),
            };
            let (compressed, solves) =
                compress_network(&net, &dataset, &rank_plan, &config, &budget)?;
            io::save_network(&compressed, &out)?;
            for s in &solves {
                println!(
                    "layer {}: d {} -> d' {}, final objective {:.6e}",
                    s.layer_idx, s.d, s.d_prime, s.result.final_nonlinear_objective
                );
            }
            println!("wrote compressed model to {}", out.display());
            if let Some(report_path) = report {
                let eval_budget = SampleBudget::new(images, positions, seed ^ 0x5EED_5EED_5EED_5EED);
                let mut rep = evaluate(&net, &compressed, &dataset, &eval_budget)?;
                rep.energy_objective = Some(rank_plan.energy_objective);
                std::fs::write(&report_path, rep.to_json()?)?;
                print!("{}", rep.render_table());
                println!("wrote report to {}", report_path.display());
            }
            Ok(())
        }
        Command::Eval {
            orig,
            compressed,
            data,
            images,
            positions,
            out,
            bench,
            reps,
        } => {
            let orig_net = io::load_network(&orig)?;
            let comp_net = io::load_network(&compressed)?;
            let dataset = io::load_dataset(&data)?;
            let budget = SampleBudget::new(images, positions, seed);
            let mut report = evaluate(&orig_net, &comp_net, &dataset, &budget)?;
            if bench {
                let orig_bench = benchmark(&orig_net, &dataset, reps)?;
                let comp_bench = benchmark(&comp_net, &dataset, reps)?;
                report.measured_speedup = Some(orig_bench.median_secs / comp_bench.median_secs);
            }
            print!("{}", report.render_table());
            if let Some(path) = out {
                std::fs::write(&path, report.to_json()?)?;
                println!("wrote report to {}", path.display());
            }
            Ok(())
        }
        Command::Bench { model, data, reps } => {
            let net = io::load_network(&model)?;
            let dataset = io::load_dataset(&data)?;
            let result = benchmark(&net, &dataset, reps)?;
            println!(
                "median {:.3} ms per forward pass (min {:.3}, max {:.3}, {} reps)",
                result.median_secs * 1e3,
                result.min_secs * 1e3,
                result.max_secs * 1e3,
                reps
            );
            Ok(())
        }
    }
}

/// Parse "--ranks full" or "--ranks 0=8,2=4" into a plan.
fn ranks_from_spec(net: &lrc_core::model::Network, spec: &str) -> Result<RankPlan> {
    let mut ranks = BTreeMap::new();
    if spec.trim() == "full" {
        for idx in net.conv_indices() {
            if let Layer::Conv(conv) = &net.layers[idx] {
                ranks.insert(idx, conv.d);
            }
        }
    } else {
        for part in spec.split(',') {
            let (layer, rank) = parse_pin(part).map_err(Error::Validation)?;
            ranks.insert(layer, rank);
        }
    }
    if ranks.is_empty() {
        return Err(Error::Validation(format!("no ranks parsed from '{spec}'")));
    }
    Ok(RankPlan {
        ranks,
        fixed: BTreeSet::new(),
        predicted_speedup: 0.0,
        energy_objective: 0.0,
    })
}
