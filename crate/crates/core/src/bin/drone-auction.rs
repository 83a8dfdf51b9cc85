use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use drone_auction::bidding::ValuationDistribution;
use drone_auction::harness::{
    paper_cases, run_candidate_demo, run_false_bid_sweep, run_gap_distribution, run_mechanism_bars,
    run_revenue_cdf, run_revenue_curve, sampled_cases, DlaSource, ExperimentFile, ExperimentSpec,
    MechanismKind, FALSE_BID_PROFILE,
};
use drone_auction::mechanisms::false_rate_grid;
use drone_auction::neural::{save_checkpoint, train_with_log, write_train_log};
use drone_auction::scenario::{load_scenario, Scenario};

#[derive(Parser)]
#[command(
    name = "drone-auction",
    version,
    about = "Delivery-drone auction simulator; every command writes CSV"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network; writes the training log and optionally a checkpoint.
    Train(Common),
    /// Held-out DLA revenue after every training iteration.
    RevenueCurve(Common),
    /// Empirical revenue CDF per mechanism and bidder count.
    RevenueCdf {
        #[command(flatten)]
        common: Common,
        /// Where to write the percentile summary [default: <out>.summary.csv].
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Sorted per-trial DLA minus SPA revenue.
    Gap(Common),
    /// SPA, FPA and DLA revenue per case.
    Bars {
        #[command(flatten)]
        common: Common,
        /// Draw cases from --dist instead of using the bundled bid table.
        #[arg(long)]
        sampled: bool,
        #[arg(long, default_value_t = 10)]
        cases: usize,
    },
    /// One bidder misreports its value by each false rate.
    FalseBid {
        #[command(flatten)]
        common: Common,
        /// Truthful bids of every bidder.
        #[arg(long, value_delimiter = ',')]
        profile: Option<Vec<f64>>,
        /// Zero-based index of the misreporting bidder.
        #[arg(long, default_value_t = 0)]
        target: usize,
        #[arg(long, value_delimiter = ',')]
        rates: Option<Vec<f64>>,
    },
    /// Candidate screening for a scenario (--config, default: bundled).
    Candidates(Common),
}

#[derive(Args, Clone, Default)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV [default: stdout].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment TOML, or a scenario TOML for `candidates`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    bidders: Option<Vec<usize>>,
    /// uniform:a,b | ratio:dmin,dmax,pmin,pmax | empirical
    #[arg(long)]
    dist: Option<ValuationDistribution>,
    #[arg(long)]
    iterations: Option<usize>,
    /// Softmax sharpness used in training.
    #[arg(long)]
    k_quality: Option<f64>,
    /// Checkpoint to write (`train`) or to load instead of training.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated subset of spa, fpa, dla, myerson.
    #[arg(long, value_delimiter = ',')]
    mechanisms: Option<Vec<MechanismKind>>,
    /// Use the identity network (SPA with zero reserve) as DLA.
    #[arg(long)]
    identity: bool,
}

impl Common {
    /// Defaults, then the --config file, then flags.
    fn spec(&self, defaults: ExperimentSpec, checkpoint_is_input: bool) -> Result<ExperimentSpec> {
        let mut spec = defaults;
        if let Some(path) = &self.config {
            ExperimentFile::load(path)?.apply(&mut spec)?;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(b) = &self.bidders {
            spec.bidders = b.clone();
        }
        if let Some(d) = &self.dist {
            spec.distribution = d.clone();
        }
        if let Some(i) = self.iterations {
            spec.train.iterations = i;
        }
        if let Some(k) = self.k_quality {
            spec.train.softmax_quality = k;
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(m) = &self.mechanisms {
            spec.mechanisms = m.clone();
        }
        if self.identity {
            spec.dla = DlaSource::Identity;
        } else if let (true, Some(path)) = (checkpoint_is_input, &self.checkpoint) {
            spec.dla = DlaSource::Checkpoint(path.clone());
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => {
            let spec = c.spec(ExperimentSpec::default(), false)?;
            let n = spec.bidders[0];
            let (params, log) = train_with_log(&spec.distribution, n, &spec.train_config())?;
            write_train_log(output(c.out.as_deref())?, &log)?;
            if let Some(path) = &c.checkpoint {
                save_checkpoint(path, &params)?;
            }
        }
        Command::RevenueCurve(c) => {
            let spec = c.spec(ExperimentSpec::default(), true)?;
            run_revenue_curve(&spec, output(c.out.as_deref())?)?;
        }
        Command::RevenueCdf { common: c, summary } => {
            let spec = c.spec(ExperimentSpec::default(), true)?;
            let summary_path = summary.or_else(|| {
                c.out.as_ref().map(|p| {
                    let mut s = p.clone().into_os_string();
                    s.push(".summary.csv");
                    PathBuf::from(s)
                })
            });
            let summary_out: Box<dyn Write> = match &summary_path {
                Some(p) => output(Some(p))?,
                None => Box::new(io::sink()),
            };
            run_revenue_cdf(&spec, output(c.out.as_deref())?, summary_out)?;
        }
        Command::Gap(c) => {
            let defaults = ExperimentSpec {
                trials: 300,
                ..ExperimentSpec::default()
            };
            let spec = c.spec(defaults, true)?;
            run_gap_distribution(&spec, output(c.out.as_deref())?)?;
        }
        Command::Bars {
            common: c,
            sampled,
            cases,
        } => {
            let defaults = ExperimentSpec {
                bidders: vec![5],
                ..ExperimentSpec::default()
            };
            let spec = c.spec(defaults, true)?;
            let (profiles, source) = if sampled {
                if cases == 0 {
                    bail!("--cases must be >= 1");
                }
                (sampled_cases(&spec, cases), spec.distribution.to_string())
            } else {
                (paper_cases(), "paper-table".to_string())
            };
            run_mechanism_bars(&spec, &profiles, &source, output(c.out.as_deref())?)?;
        }
        Command::FalseBid {
            common: c,
            profile,
            target,
            rates,
        } => {
            let profile = profile.unwrap_or_else(|| FALSE_BID_PROFILE.to_vec());
            let defaults = ExperimentSpec {
                bidders: vec![profile.len()],
                ..ExperimentSpec::default()
            };
            let spec = c.spec(defaults, true)?;
            let rates = rates.unwrap_or_else(false_rate_grid);
            run_false_bid_sweep(&spec, &profile, target, &rates, output(c.out.as_deref())?)?;
        }
        Command::Candidates(c) => {
            let scenario = match &c.config {
                Some(path) => load_scenario(path)?,
                None => Scenario::bundled(),
            };
            run_candidate_demo(&scenario, output(c.out.as_deref())?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
