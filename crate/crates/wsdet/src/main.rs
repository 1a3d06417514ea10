use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use wsdet::data;
use wsdet::experiment::{self, ExperimentConfig};
use wsdet::metrics::ApInterpolation;
use wsdet::variants::VariantSpec;

#[derive(Parser)]
#[command(name = "wsdet", version, about = "Self-paced weakly-supervised detection benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/test dataset pair to disk.
    Generate {
        /// Experiment config (TOML) providing the synthetic dataset section.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for train.jsonl and test.jsonl.
        #[arg(long)]
        out: PathBuf,
        /// Override the generator seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured variants over the configured seeds.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the built-in demo configuration.
        #[arg(long, conflicts_with = "config")]
        demo: bool,
        /// Output directory for records, checkpoints and the summary CSV.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured seed list (comma separated).
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the configured variant list (comma separated).
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<VariantSpec>>,
        /// Override the number of self-paced iterations M.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the initial pace ratio r_1.
        #[arg(long)]
        r1: Option<f64>,
    },
    /// Render SVG trend charts from a finished run directory.
    Plot {
        #[arg(long)]
        run_dir: PathBuf,
    },
    /// Re-score a saved checkpoint against a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Disable the regression head at evaluation time.
        #[arg(long)]
        no_regression: bool,
        #[arg(long, default_value_t = 0.3)]
        nms_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        iou_min: f64,
        /// Use eleven-point AP interpolation instead of all-point.
        #[arg(long)]
        eleven_point: bool,
    },
    /// Print the variant flag table.
    Describe,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> wsdet::Result<()> {
    match cli.command {
        Command::Generate { config, out, seed } => {
            let config = ExperimentConfig::load(config)?;
            let mut synth = config
                .dataset
                .synthetic
                .clone()
                .ok_or_else(|| wsdet::Error::InvalidConfig("config has no synthetic dataset".into()))?;
            if let Some(seed) = seed {
                synth.seed = seed;
            }
            let (train, test) = data::generate_train_test(&synth, config.dataset.test_images)?;
            std::fs::create_dir_all(&out)?;
            let train_path = out.join("train.jsonl");
            let test_path = out.join("test.jsonl");
            data::save(&train, &train_path)?;
            data::save(&test, &test_path)?;
            println!("wrote {} ({} images)", train_path.display(), train.len());
            println!("wrote {} ({} images)", test_path.display(), test.len());
        }
        Command::Run { config, demo, out, seeds, variants, iterations, r1 } => {
            let mut config = match (config, demo) {
                (Some(path), _) => ExperimentConfig::load(path)?,
                (None, true) => ExperimentConfig::demo(),
                (None, false) => {
                    return Err(wsdet::Error::InvalidConfig(
                        "pass --config <file> or --demo".into(),
                    ))
                }
            };
            if let Some(seeds) = seeds {
                config.seeds = seeds;
            }
            if let Some(variants) = variants {
                config.variants = variants;
            }
            if let Some(iterations) = iterations {
                config.protocol.iterations = iterations;
            }
            if let Some(r1) = r1 {
                config.protocol.r1 = r1;
            }
            config.validate()?;
            let summary = experiment::run(&config, &out)?;
            println!("run complete: {}", summary.out_dir.display());
            for row in &summary.rows {
                let precision = row
                    .precision_mean
                    .map(|p| format!("{:.1}%", 100.0 * p))
                    .unwrap_or_else(|| "-".into());
                println!(
                    "  {:<18} W{}  mAP {:5.1}%  CorLoc {:5.1}%  precision {}",
                    row.variant.to_string(),
                    row.t,
                    100.0 * row.map_mean,
                    100.0 * row.corloc_mean,
                    precision
                );
            }
        }
        Command::Plot { run_dir } => {
            for path in experiment::plot(run_dir)? {
                println!("wrote {}", path.display());
            }
        }
        Command::Eval { checkpoint, dataset, no_regression, nms_threshold, iou_min, eleven_point } => {
            let interp =
                if eleven_point { ApInterpolation::ElevenPoint } else { ApInterpolation::AllPoint };
            let report = experiment::eval_checkpoint(
                checkpoint,
                dataset,
                !no_regression,
                nms_threshold,
                iou_min,
                interp,
            )?;
            for (k, ap) in report.per_class_ap.iter().enumerate() {
                match ap {
                    Some(v) => println!("class_{:<3} AP {:6.2}%", k + 1, 100.0 * v),
                    None => println!("class_{:<3} AP      - (no ground truth)", k + 1),
                }
            }
            println!(
                "mAP {:.2}% over {} images, {} detections",
                100.0 * report.map,
                report.images_evaluated,
                report.detections_evaluated
            );
        }
        Command::Describe => {
            print!("{}", experiment::describe_variants());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn variant_parses_from_cli_names() {
        assert_eq!("sp".parse::<VariantSpec>().unwrap(), VariantSpec::Sp);
        assert_eq!(
            "No-reg-train-test".parse::<VariantSpec>().unwrap(),
            VariantSpec::NoRegTrainTest
        );
        assert!("bogus".parse::<VariantSpec>().is_err());
    }
}
