use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

use jplda::eval::{calibration_identity, eer, ScoredTrials};
use jplda::hypothesis::PriorConfig;
use jplda::io;
use jplda::oracle::gaussian_llr_oracle;
use jplda::scoring::ScoringSession;
use jplda::synth::{self, Assignment, DatasetSpec};
use jplda::Error;

/// Oracle agreement threshold for `check`.
const CHECK_TOLERANCE: f64 = 1e-8;

#[derive(Parser, Debug)]
#[command(name = "jplda", version, about = "Multi-condition joint PLDA scoring toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Score a trial list with the closed-form LLR.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        enroll: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        trials: PathBuf,
        /// Condition priors; conditions not listed default to 0.5.
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
        threads: u64,
    },
    /// Sample a labeled dataset from a model.
    Synth {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        speakers: u64,
        /// Comma-separated label counts, one per condition.
        #[arg(long, value_delimiter = ',')]
        conditions: Vec<usize>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        per_speaker: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = AssignmentArg::Uniform)]
        assignment: AssignmentArg,
        /// Writes `<prefix>.emb` and `<prefix>.labels`.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Generate a labeled target/nontarget benchmark.
    Benchmark {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long)]
        targets: usize,
        #[arg(long)]
        nontargets: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes `<prefix>.enroll`, `<prefix>.test` and `<prefix>.key`.
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Report EER and the calibration identity of a score file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Trial list with target/nontarget labels.
        #[arg(long)]
        key: PathBuf,
    },
    /// Compare the closed-form scorer against the brute-force oracle.
    Check {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials_count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a random valid model.
    RandomModel {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        speaker_rank: usize,
        /// Comma-separated ranks, one per condition.
        #[arg(long, value_delimiter = ',')]
        condition_ranks: Vec<usize>,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long)]
        diagonal: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AssignmentArg {
    Uniform,
    RoundRobin,
}

fn load_priors(path: Option<&PathBuf>, n: usize) -> anyhow::Result<PriorConfig> {
    match path {
        Some(p) => io::read_priors(p, n).with_context(|| format!("reading priors {}", p.display())),
        None => Ok(PriorConfig::uniform(n)),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Score {
            model,
            enroll,
            test,
            trials,
            priors,
            out,
            threads,
        } => {
            let model = io::load_model(&model).with_context(|| format!("loading model {}", model.display()))?;
            let priors = load_priors(priors.as_ref(), model.num_conditions())?;
            let enroll = io::read_embeddings(&enroll)?;
            let test = io::read_embeddings(&test)?;
            let trials = io::read_trials(&trials)?;
            let session = ScoringSession::new(&model, &priors)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads as usize)
                .build()?;
            let scores = pool.install(|| session.score_trials(&enroll, &test, &trials))?;
            io::write_scores(&out, &trials, &scores)?;
        }
        Command::Synth {
            model,
            speakers,
            conditions,
            per_speaker,
            seed,
            assignment,
            out_prefix,
        } => {
            let model = io::load_model(&model)?;
            let spec = DatasetSpec {
                speakers: speakers as usize,
                condition_cardinalities: conditions,
                samples_per_speaker: per_speaker as usize,
                assignment: match assignment {
                    AssignmentArg::Uniform => Assignment::UniformRandom,
                    AssignmentArg::RoundRobin => Assignment::RoundRobin,
                },
            };
            let ds = synth::sample_dataset(&model, &spec, seed)?;
            io::write_embeddings(io::with_suffix(&out_prefix, ".emb"), &ds.to_table())?;
            io::write_labels(
                io::with_suffix(&out_prefix, ".labels"),
                &ds.ids,
                &ds.speaker_labels,
                &ds.condition_labels,
            )?;
        }
        Command::Benchmark {
            model,
            priors,
            targets,
            nontargets,
            seed,
            out_prefix,
        } => {
            let model = io::load_model(&model)?;
            let priors = load_priors(priors.as_ref(), model.num_conditions())?;
            let b = synth::make_benchmark(&model, &priors, targets, nontargets, seed)?;
            io::write_embeddings(io::with_suffix(&out_prefix, ".enroll"), &b.enroll)?;
            io::write_embeddings(io::with_suffix(&out_prefix, ".test"), &b.test)?;
            io::write_trials(io::with_suffix(&out_prefix, ".key"), &b.trials)?;
        }
        Command::Eval { scores, key } => {
            let scores = io::read_scores(&scores)?;
            let key = io::read_trials(&key)?;
            let mut labels = std::collections::HashMap::new();
            for t in &key {
                let Some(target) = t.target else {
                    bail!("key trial {}/{} has no target/nontarget label", t.enroll_id, t.test_id);
                };
                labels.insert((t.enroll_id.as_str(), t.test_id.as_str()), target);
            }
            let mut s = Vec::with_capacity(scores.len());
            let mut l = Vec::with_capacity(scores.len());
            for r in &scores {
                let Some(&target) = labels.get(&(r.enroll_id.as_str(), r.test_id.as_str())) else {
                    bail!("scored trial {}/{} is not in the key", r.enroll_id, r.test_id);
                };
                s.push(r.score);
                l.push(target);
            }
            let trials = ScoredTrials::new(s, l)?;
            println!("EER {:.4}", eer(&trials)?);
            println!("calibration_identity {:.4}", calibration_identity(&trials)?);
        }
        Command::Check {
            model,
            priors,
            trials_count,
            seed,
        } => {
            let model = io::load_model(&model)?;
            let priors = load_priors(priors.as_ref(), model.num_conditions())?;
            let session = ScoringSession::new(&model, &priors)?;
            let half = trials_count / 2;
            let bench = synth::make_benchmark(&model, &priors, half, trials_count - half, seed)?;
            let mut max_dev = 0.0f64;
            for t in &bench.trials {
                let e = bench.enroll.get(&t.enroll_id).expect("benchmark id");
                let x = bench.test.get(&t.test_id).expect("benchmark id");
                let fast = session.llr(e, x)?;
                let slow = gaussian_llr_oracle(&model, &priors, e, x)?;
                max_dev = max_dev.max((fast - slow).abs());
            }
            println!("trials {trials_count}");
            println!("max_abs_deviation {max_dev:.3e}");
            if !(max_dev <= CHECK_TOLERANCE) {
                bail!("oracle deviation {max_dev:e} exceeds {CHECK_TOLERANCE:e}");
            }
        }
        Command::RandomModel {
            dim,
            speaker_rank,
            condition_ranks,
            scale,
            diagonal,
            seed,
            out,
        } => {
            if dim == 0 {
                bail!("--dim must be positive");
            }
            let model = synth::random_model(dim, speaker_rank, &condition_ranks, scale, diagonal, seed)?;
            io::save_model(&out, &model)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let excluded = err
                .chain()
                .any(|e| matches!(e.downcast_ref::<Error>(), Some(Error::AllHypothesesExcluded(_))));
            ExitCode::from(if excluded { 2 } else { 1 })
        }
    }
}
