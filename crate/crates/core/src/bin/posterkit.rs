//! Command-line front end for the poster pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use posterkit::config::RunConfig;
use posterkit::pipeline::{self, EvaluateInputs, GenerateOptions};

#[derive(Parser)]
#[command(name = "posterkit", version, about = "Generate and evaluate research posters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
    /// Working directory for stage artifacts (default: config, then ./work).
    #[arg(long, value_name = "DIR")]
    workdir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> posterkit::error::Result<(RunConfig, PathBuf)> {
        let config = RunConfig::load(&self.config)?;
        let workdir = self
            .workdir
            .clone()
            .or_else(|| config.workdir.clone())
            .unwrap_or_else(|| PathBuf::from("work"));
        Ok((config, workdir))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build a poster from a paper (PDF or markdown).
    Generate {
        /// Input paper (.pdf or .md).
        paper: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Reuse valid artifacts from a previous run in the workdir.
        #[arg(long)]
        resume: bool,
        /// Refine panels on parallel worker threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Score a generated poster (similarity, relevance, fluency, judge).
    Evaluate {
        /// The generated poster (.pptx or image).
        generated: PathBuf,
        /// Ground-truth poster image for visual similarity.
        #[arg(long, value_name = "FILE")]
        ground_truth: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
        /// Skip the model judge (numeric metrics only).
        #[arg(long)]
        skip_judge: bool,
    },
    /// Quiz workflow: question generation, administration, scoring.
    Quiz {
        #[command(subcommand)]
        action: QuizAction,
    },
    /// Batch generate + evaluate over a directory of paper/poster pairs.
    Bench {
        /// Directory of `<id>/paper.pdf|md` (+ optional `<id>/poster.png`).
        root: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Output directory for per-pair workdirs and the report.
        #[arg(long, value_name = "DIR", default_value = "bench-out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum QuizAction {
    /// Generate both question sets from the parsed document.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Have each configured reader answer both sets from the poster.
    Run {
        /// Poster shown to the readers.
        poster: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score persisted answers and write the report.
    Score {
        /// Poster used for the text-density term.
        poster: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn run(cli: Cli) -> posterkit::error::Result<()> {
    match cli.command {
        Command::Generate { paper, common, resume, parallel } => {
            let (config, workdir) = common.load()?;
            let options = GenerateOptions { resume, parallel: parallel.then_some(true) };
            let outcome = pipeline::cmd_generate(&paper, &config, &workdir, options)?;
            println!("poster: {}", outcome.poster.display());
            if let Some(tokens) = &outcome.manifest.tokens {
                let totals = tokens.grand_total();
                print!("tokens: {} in / {} out", totals.input(), totals.output());
                match tokens.cost_usd {
                    Some(cost) => println!(" (est. ${cost:.4})"),
                    None => println!(),
                }
            }
            Ok(())
        }
        Command::Evaluate { generated, ground_truth, common, skip_judge } => {
            let (config, workdir) = common.load()?;
            let inputs = EvaluateInputs {
                generated: &generated,
                ground_truth: ground_truth.as_deref(),
                workdir: Some(workdir.as_path()),
                skip_judge,
            };
            let report = pipeline::cmd_evaluate(&inputs, &config)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
            println!("visual similarity:  {}", fmt(report.visual_similarity));
            println!("figure relevance:   {}", fmt(report.figure_relevance));
            println!("perplexity:         {}", fmt(report.ppl));
            for (name, score) in &report.scores {
                println!("judge {name}: {} ({})", score.score, score.reason);
            }
            println!("aesthetic avg:      {}", fmt(report.aesthetic_avg));
            println!("information avg:    {}", fmt(report.information_avg));
            println!("overall:            {}", fmt(report.overall));
            if report.incomplete {
                println!("note: some judge criteria are missing");
            }
            Ok(())
        }
        Command::Quiz { action } => match action {
            QuizAction::Gen { common } => {
                let (config, workdir) = common.load()?;
                let (verbatim, interpretive) = pipeline::cmd_quiz_gen(&config, &workdir)?;
                println!(
                    "generated {} verbatim and {} interpretive questions",
                    verbatim.items.len(),
                    interpretive.items.len()
                );
                Ok(())
            }
            QuizAction::Run { poster, common } => {
                let (config, workdir) = common.load()?;
                pipeline::cmd_quiz_run(&poster, &config, &workdir)?;
                println!("answers recorded for {} readers", config.quiz.readers.len());
                Ok(())
            }
            QuizAction::Score { poster, common } => {
                let (config, workdir) = common.load()?;
                let report = pipeline::cmd_quiz_score(&poster, &config, &workdir)?;
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.2}"));
                println!("verbatim avg:      {} (density {})", fmt(report.v_avg_raw), fmt(report.v_avg_density));
                println!("interpretive avg:  {} (density {})", fmt(report.i_avg_raw), fmt(report.i_avg_density));
                println!("overall:           {} (density {})", fmt(report.overall_raw), fmt(report.overall_density));
                Ok(())
            }
        },
        Command::Bench { root, common, out } => {
            let (config, _) = common.load()?;
            let report = pipeline::cmd_bench(&root, &config, &out)?;
            let succeeded = report.rows.iter().filter(|r| r.ok).count();
            println!("{succeeded}/{} pairs succeeded", report.rows.len());
            if let Some(mean) = &report.mean {
                let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
                println!(
                    "mean: vis_sim {} fig_rel {} ppl {} overall {}",
                    fmt(mean.visual_similarity),
                    fmt(mean.figure_relevance),
                    fmt(mean.ppl),
                    fmt(mean.overall)
                );
            }
            println!("report: {}", out.join("bench.csv").display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
