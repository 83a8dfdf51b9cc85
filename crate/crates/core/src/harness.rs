//! Experiment drivers. Each `run_*` writes one CSV table and returns the
//! numbers behind it.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use crate::bidding::{select_candidates, ProfileBatch, ValuationDistribution};
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{revenues, AnalyticMyerson, FirstPrice, Mechanism, SecondPrice};
use crate::neural::{
    hard_revenue, load_checkpoint, run_neural, train, Mode, MonotoneNet, NeuralAuction, TrainConfig, Trainer,
};
use crate::par::Execution;
use crate::rng;
use crate::scenario::{DeliveryRequest, Scenario};

/// Bid sample table: ten five-bidder cases.
pub const PAPER_BID_TABLE: [[f64; 5]; 10] = [
    [0.6802, 0.4398, 0.8589, 0.7860, 0.9420],
    [0.4552, 0.5123, 0.7315, 0.7600, 0.8045],
    [0.5243, 0.5373, 0.7308, 0.8233, 0.8677],
    [0.6319, 0.7585, 0.8090, 0.8902, 0.9144],
    [0.4284, 0.4567, 0.5891, 0.7790, 0.8126],
    [0.3749, 0.6617, 0.7290, 0.8664, 0.9306],
    [0.3347, 0.6277, 0.4597, 0.6433, 0.9502],
    [0.3958, 0.6565, 0.7721, 0.8753, 0.9711],
    [0.5070, 0.5135, 0.5687, 0.6221, 0.8643],
    [0.1269, 0.4253, 0.5004, 0.8880, 0.9848],
];

/// False-bid profile: bidder 0 values the job at 0.8408 and the best rival
/// bids 0.7832. The three other rivals are arbitrary lower bids.
pub const FALSE_BID_PROFILE: [f64; 5] = [0.8408, 0.7832, 0.6802, 0.5891, 0.4398];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismKind {
    Spa,
    Fpa,
    Dla,
    Myerson,
}

impl MechanismKind {
    pub fn label(self) -> &'static str {
        match self {
            MechanismKind::Spa => "SPA",
            MechanismKind::Fpa => "FPA",
            MechanismKind::Dla => "DLA",
            MechanismKind::Myerson => "Myerson",
        }
    }
}

impl FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spa" => Ok(MechanismKind::Spa),
            "fpa" => Ok(MechanismKind::Fpa),
            "dla" => Ok(MechanismKind::Dla),
            "myerson" | "analytic-myerson" => Ok(MechanismKind::Myerson),
            other => Err(Error::Parse(format!("unknown mechanism '{other}'"))),
        }
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Where the neural auction's parameters come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DlaSource {
    /// Trained afresh for each bidder count.
    Train,
    /// `φ(b) = b`, i.e. SPA with a zero reserve.
    Identity,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mechanisms: Vec<MechanismKind>,
    pub bidders: Vec<usize>,
    pub distribution: ValuationDistribution,
    pub trials: usize,
    pub train: TrainConfig,
    pub dla: DlaSource,
    /// Held-out profiles for the revenue curve.
    pub eval_profiles: usize,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            mechanisms: vec![MechanismKind::Spa, MechanismKind::Dla],
            bidders: vec![5, 10],
            distribution: ValuationDistribution::Uniform { lo: 0.0, hi: 1.0 },
            trials: 100_000,
            train: TrainConfig::default(),
            dla: DlaSource::Train,
            eval_profiles: 4096,
            seed: 0,
        }
    }
}

/// Optional overrides read from an experiment TOML file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub mechanisms: Option<Vec<MechanismKind>>,
    pub bidders: Option<Vec<usize>>,
    pub distribution: Option<String>,
    pub trials: Option<usize>,
    pub eval_profiles: Option<usize>,
    pub seed: Option<u64>,
    /// `"train"` or `"identity"`; ignored when `checkpoint` is set.
    pub dla: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub train: Option<TrainConfig>,
}

impl ExperimentFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn apply(self, spec: &mut ExperimentSpec) -> Result<()> {
        if let Some(m) = self.mechanisms {
            spec.mechanisms = m;
        }
        if let Some(b) = self.bidders {
            spec.bidders = b;
        }
        if let Some(d) = self.distribution {
            spec.distribution = d.parse()?;
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(e) = self.eval_profiles {
            spec.eval_profiles = e;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(t) = self.train {
            spec.train = t;
        }
        match (self.checkpoint, self.dla.as_deref()) {
            (Some(path), _) => spec.dla = DlaSource::Checkpoint(path),
            (None, Some("train")) => spec.dla = DlaSource::Train,
            (None, Some("identity")) => spec.dla = DlaSource::Identity,
            (None, Some(other)) => {
                return Err(invalid(
                    "dla",
                    format!("expected train or identity, got '{other}'"),
                ))
            }
            (None, None) => {}
        }
        Ok(())
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials", "must be >= 1"));
        }
        if self.bidders.is_empty() {
            return Err(invalid("bidders", "need at least one bidder count"));
        }
        if self.bidders.iter().any(|&n| n < 2) {
            return Err(invalid("bidders", "every bidder count must be >= 2"));
        }
        if self.mechanisms.is_empty() {
            return Err(invalid("mechanisms", "need at least one mechanism"));
        }
        if self.eval_profiles == 0 {
            return Err(invalid("eval_profiles", "must be >= 1"));
        }
        self.distribution.validate()?;
        self.train.validate()
    }

    /// Training config with this experiment's seed.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            rng_seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn neural_auction(&self, bidders: usize) -> Result<NeuralAuction> {
        let cfg = self.train_config();
        let params = match &self.dla {
            DlaSource::Train => train(&self.distribution, bidders, &cfg)?,
            DlaSource::Identity => MonotoneNet::identity(bidders, cfg.tied),
            DlaSource::Checkpoint(path) => {
                let net = load_checkpoint(path)?;
                if net.bidders != bidders {
                    return Err(invalid(
                        "checkpoint",
                        format!("trained for {} bidders, experiment needs {bidders}", net.bidders),
                    ));
                }
                net
            }
        };
        Ok(NeuralAuction { params, cfg })
    }

    pub fn mechanism(&self, kind: MechanismKind, bidders: usize) -> Result<Box<dyn Mechanism>> {
        Ok(match kind {
            MechanismKind::Spa => Box::new(SecondPrice::default()),
            MechanismKind::Fpa => Box::new(FirstPrice::default()),
            MechanismKind::Dla => Box::new(self.neural_auction(bidders)?),
            MechanismKind::Myerson => match self.distribution {
                ValuationDistribution::Uniform { lo, hi } => Box::new(AnalyticMyerson::new(lo, hi)),
                _ => {
                    return Err(invalid(
                        "mechanisms",
                        "analytic Myerson needs a uniform distribution",
                    ))
                }
            },
        })
    }

    /// Profiles shared by every mechanism evaluated at `bidders`.
    pub fn profiles(&self, bidders: usize, count: usize) -> ProfileBatch {
        let seed = rng::derive_seed(self.seed, rng::EVAL, bidders as u64);
        ProfileBatch::sample_chunked(
            &self.distribution,
            bidders,
            count,
            seed,
            rng::MONTE_CARLO,
            Execution::default(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStats {
    pub count: usize,
    pub mean: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Percentile `q ∈ [0, 100]` of sorted data, interpolating linearly between
/// order statistics at rank `q/100·(n − 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

impl SummaryStats {
    pub fn from_samples(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("samples", "need at least one sample"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self::from_sorted(&sorted))
    }

    fn from_sorted(sorted: &[f64]) -> Self {
        SummaryStats {
            count: sorted.len(),
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p25: percentile(sorted, 25.0),
            p50: percentile(sorted, 50.0),
            p75: percentile(sorted, 75.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub bidders: usize,
    pub iteration: usize,
    pub loss: f64,
    pub dla_revenue: f64,
    pub spa_revenue: f64,
}

/// Trains a fresh network per bidder count and records its hard-mode
/// revenue on a held-out set after every iteration.
pub fn run_revenue_curve<W: Write>(spec: &ExperimentSpec, out: W) -> Result<Vec<CurvePoint>> {
    spec.validate()?;
    if !spec.mechanisms.contains(&MechanismKind::Dla) {
        return Err(invalid("mechanisms", "the revenue curve needs DLA"));
    }
    let mut points = Vec::new();
    for &n in &spec.bidders {
        let held_out = spec.profiles(n, spec.eval_profiles);
        let spa = mean(&revenues(
            &SecondPrice::default(),
            &held_out,
            Execution::default(),
        )?);
        let mut trainer = Trainer::new(spec.distribution.clone(), n, spec.train_config())?;
        for _ in 0..spec.train.iterations {
            let record = trainer.step()?;
            points.push(CurvePoint {
                bidders: n,
                iteration: record.iteration,
                loss: record.loss,
                dla_revenue: hard_revenue(&trainer.params, &held_out, &trainer.cfg, Execution::default())?,
                spa_revenue: spa,
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bidders", "iteration", "loss", "dla_revenue", "spa_revenue"])?;
    for p in &points {
        w.write_record([
            p.bidders.to_string(),
            p.iteration.to_string(),
            p.loss.to_string(),
            p.dla_revenue.to_string(),
            p.spa_revenue.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(points)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RevenueSeries {
    pub mechanism: MechanismKind,
    pub bidders: usize,
    /// Per-auction revenue, ascending.
    pub sorted: Vec<f64>,
    pub stats: SummaryStats,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Per-auction revenue of every `(mechanism, n)` pair on common profiles.
pub fn revenue_series(spec: &ExperimentSpec) -> Result<Vec<RevenueSeries>> {
    spec.validate()?;
    let mut series = Vec::new();
    for &n in &spec.bidders {
        let batch = spec.profiles(n, spec.trials);
        for &kind in &spec.mechanisms {
            let mechanism = spec.mechanism(kind, n)?;
            let mut sorted = revenues(mechanism.as_ref(), &batch, Execution::default())?;
            sorted.sort_by(f64::total_cmp);
            let stats = SummaryStats::from_sorted(&sorted);
            series.push(RevenueSeries {
                mechanism: kind,
                bidders: n,
                sorted,
                stats,
            });
        }
    }
    Ok(series)
}

/// Empirical CDF rows `mechanism,bidders,rank,revenue,cdf`, plus a summary
/// table `mechanism,bidders,count,mean,p25,p50,p75`.
pub fn run_revenue_cdf<W: Write, S: Write>(
    spec: &ExperimentSpec,
    out: W,
    summary: S,
) -> Result<Vec<RevenueSeries>> {
    if spec.trials < 100 {
        return Err(invalid("trials", "the revenue CDF needs at least 100 trials"));
    }
    let series = revenue_series(spec)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mechanism", "bidders", "rank", "revenue", "cdf"])?;
    for s in &series {
        let count = s.sorted.len() as f64;
        for (i, r) in s.sorted.iter().enumerate() {
            w.write_record([
                s.mechanism.label().to_string(),
                s.bidders.to_string(),
                (i + 1).to_string(),
                r.to_string(),
                ((i + 1) as f64 / count).to_string(),
            ])?;
        }
    }
    w.flush()?;
    write_summary(summary, &series)?;
    Ok(series)
}

pub fn write_summary<W: Write>(out: W, series: &[RevenueSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mechanism", "bidders", "count", "mean", "p25", "p50", "p75"])?;
    for s in series {
        w.write_record([
            s.mechanism.label().to_string(),
            s.bidders.to_string(),
            s.stats.count.to_string(),
            s.stats.mean.to_string(),
            s.stats.p25.to_string(),
            s.stats.p50.to_string(),
            s.stats.p75.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Sorted per-trial `DLA − SPA` revenue at the first bidder count.
pub fn run_gap_distribution<W: Write>(spec: &ExperimentSpec, out: W) -> Result<Vec<f64>> {
    spec.validate()?;
    if spec.trials < 2 {
        return Err(invalid("trials", "the gap distribution needs at least 2 trials"));
    }
    let n = spec.bidders[0];
    let batch = spec.profiles(n, spec.trials);
    let dla = revenues(&spec.neural_auction(n)?, &batch, Execution::default())?;
    let spa = revenues(&SecondPrice::default(), &batch, Execution::default())?;
    let mut gaps: Vec<f64> = dla.iter().zip(&spa).map(|(d, s)| d - s).collect();
    gaps.sort_by(f64::total_cmp);
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rank", "gap"])?;
    for (i, g) in gaps.iter().enumerate() {
        w.write_record([(i + 1).to_string(), g.to_string()])?;
    }
    w.flush()?;
    Ok(gaps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarCase {
    pub case: usize,
    pub spa: f64,
    pub fpa: f64,
    pub dla: f64,
}

impl BarCase {
    /// `SPA ≤ DLA ≤ FPA`.
    pub fn ordered(&self) -> bool {
        self.spa <= self.dla && self.dla <= self.fpa
    }
}

/// SPA, FPA and DLA revenue on each case. `cases` are truthful bid
/// profiles; `source` names where they came from and is copied to every
/// row.
pub fn run_mechanism_bars<W: Write>(
    spec: &ExperimentSpec,
    cases: &[Vec<f64>],
    source: &str,
    out: W,
) -> Result<Vec<BarCase>> {
    spec.validate()?;
    let n = cases
        .first()
        .map(Vec::len)
        .ok_or_else(|| invalid("cases", "need at least one case"))?;
    if cases.iter().any(|c| c.len() != n) {
        return Err(invalid("cases", "every case needs the same bidder count"));
    }
    let dla = spec.neural_auction(n)?;
    let mut bars = Vec::with_capacity(cases.len());
    for (i, bids) in cases.iter().enumerate() {
        bars.push(BarCase {
            case: i + 1,
            spa: SecondPrice::default().run(bids)?.revenue,
            fpa: FirstPrice::default().run(bids)?.revenue,
            dla: dla.run(bids)?.revenue,
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case", "source", "spa", "fpa", "dla", "spa_le_dla_le_fpa"])?;
    for b in &bars {
        w.write_record([
            b.case.to_string(),
            source.to_string(),
            b.spa.to_string(),
            b.fpa.to_string(),
            b.dla.to_string(),
            b.ordered().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(bars)
}

/// The bid sample table as profiles.
pub fn paper_cases() -> Vec<Vec<f64>> {
    PAPER_BID_TABLE.iter().map(|r| r.to_vec()).collect()
}

/// `count` cases drawn from the experiment's distribution at its first
/// bidder count.
pub fn sampled_cases(spec: &ExperimentSpec, count: usize) -> Vec<Vec<f64>> {
    let batch = spec.profiles(spec.bidders[0], count);
    batch.rows().map(<[f64]>::to_vec).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FalseBidRow {
    pub mechanism: MechanismKind,
    pub rate: f64,
    pub bid: f64,
    /// Softmax win probability for DLA; the hard indicator otherwise.
    pub win_probability: f64,
    pub wins: bool,
    pub payment: f64,
    pub utility: f64,
    pub truthful_utility: f64,
}

/// The target bidder reports `rate·true_value` while the rest of `profile`
/// stays truthful.
pub fn run_false_bid_sweep<W: Write>(
    spec: &ExperimentSpec,
    profile: &[f64],
    target: usize,
    rates: &[f64],
    out: W,
) -> Result<Vec<FalseBidRow>> {
    spec.validate()?;
    if target >= profile.len() {
        return Err(invalid(
            "target",
            format!("bidder {target} not in a profile of {}", profile.len()),
        ));
    }
    if rates.is_empty() || rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(invalid("false_rates", "need positive, finite rates"));
    }
    let value = profile[target];
    let n = profile.len();
    let mut rows = Vec::new();
    for &kind in &spec.mechanisms {
        let mechanism = spec.mechanism(kind, n)?;
        let dla = match kind {
            MechanismKind::Dla => Some(spec.neural_auction(n)?),
            _ => None,
        };
        let truthful = mechanism.run(profile)?.utility(target, value);
        for &rate in rates {
            let mut bids = profile.to_vec();
            bids[target] = rate * value;
            let o = mechanism.run(&bids)?;
            let win_probability = match &dla {
                Some(d) => run_neural(&d.params, &bids, &d.cfg, Mode::Soft)?.allocation_probs[target],
                None => o.allocation[target],
            };
            rows.push(FalseBidRow {
                mechanism: kind,
                rate,
                bid: bids[target],
                win_probability,
                wins: o.winner == Some(target),
                payment: o.payments[target],
                utility: o.utility(target, value),
                truthful_utility: truthful,
            });
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "mechanism",
        "false_rate",
        "bid",
        "win_probability",
        "wins",
        "payment",
        "utility",
        "truthful_utility",
    ])?;
    for r in &rows {
        w.write_record([
            r.mechanism.label().to_string(),
            r.rate.to_string(),
            r.bid.to_string(),
            r.win_probability.to_string(),
            r.wins.to_string(),
            r.payment.to_string(),
            r.utility.to_string(),
            r.truthful_utility.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}

/// Screening result for every delivery drone of the scenario.
pub fn run_candidate_demo<W: Write>(scenario: &Scenario, out: W) -> Result<Vec<usize>> {
    scenario.validate()?;
    let selection = select_candidates(scenario);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "drone",
        "base_station",
        "distance_m",
        "min_velocity",
        "required_energy",
        "remaining_energy",
        "candidate",
        "bid",
    ])?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for a in &selection.assessments {
        w.write_record([
            (a.drone + 1).to_string(),
            (a.base_station + 1).to_string(),
            a.distance.to_string(),
            opt(a.min_velocity),
            a.required_energy.to_string(),
            a.remaining_energy.to_string(),
            a.candidate.to_string(),
            opt(a.valuation.map(|v| v.value)),
        ])?;
    }
    w.flush()?;
    Ok(selection.candidates())
}

/// Requests on the `data_amounts × latencies` grid whose candidate set is
/// exactly `target` (zero-based drone indices).
pub fn calibrate_request(
    scenario: &Scenario,
    target: &[usize],
    data_amounts: &[f64],
    latencies: &[f64],
) -> Vec<DeliveryRequest> {
    let mut hits = Vec::new();
    let mut probe = scenario.clone();
    for &d in data_amounts {
        for &t in latencies {
            probe.request = DeliveryRequest {
                data_amount: d,
                max_latency: t,
                ..scenario.request
            };
            if select_candidates(&probe).candidates() == target {
                hits.push(probe.request);
            }
        }
    }
    hits
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn quick_spec() -> ExperimentSpec {
        ExperimentSpec {
            bidders: vec![5],
            trials: 200,
            dla: DlaSource::Identity,
            train: TrainConfig {
                iterations: 3,
                ..TrainConfig::default()
            },
            eval_profiles: 64,
            ..ExperimentSpec::default()
        }
    }

    #[test]
    fn percentiles_interpolate() {
        let s = SummaryStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.p25, 1.75);
        assert_eq!(s.p50, 2.5);
        assert_eq!(s.p75, 3.25);
        assert_eq!(s.mean, 2.5);
        let flat = SummaryStats::from_samples(&[0.7; 10]).unwrap();
        assert_eq!((flat.p25, flat.p50, flat.p75), (0.7, 0.7, 0.7));
        assert!(SummaryStats::from_samples(&[]).is_err());
    }

    #[test]
    fn spa_median_matches_order_statistic() {
        // Median of the 2nd highest of five U[0,1] draws solves
        // 5x⁴ − 4x⁵ = 1/2.
        let mut x = 0.5f64;
        for _ in 0..100 {
            let f = 5.0 * x.powi(4) - 4.0 * x.powi(5) - 0.5;
            let df = 20.0 * x.powi(3) - 20.0 * x.powi(4);
            x -= f / df;
        }
        let spec = ExperimentSpec {
            trials: 100_000,
            mechanisms: vec![MechanismKind::Spa],
            ..quick_spec()
        };
        let series = revenue_series(&spec).unwrap();
        assert_abs_diff_eq!(series[0].stats.p50, x, epsilon = 0.005);
        assert_abs_diff_eq!(x, 0.686, epsilon = 1e-3);
    }

    #[test]
    fn curve_has_one_row_per_iteration() {
        let spec = ExperimentSpec {
            dla: DlaSource::Train,
            train: TrainConfig {
                iterations: 1,
                ..TrainConfig::default()
            },
            ..quick_spec()
        };
        let mut buf = Vec::new();
        let points = run_revenue_curve(&spec, &mut buf).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 2);
    }

    #[test]
    fn identity_gaps_are_zero() {
        let spec = ExperimentSpec {
            trials: 300,
            ..quick_spec()
        };
        let mut buf = Vec::new();
        let gaps = run_gap_distribution(&spec, &mut buf).unwrap();
        assert_eq!(gaps.len(), 300);
        assert!(gaps.iter().all(|g| *g == 0.0));
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 301);
    }

    #[test]
    fn paper_bars() {
        let mut buf = Vec::new();
        let bars = run_mechanism_bars(&quick_spec(), &paper_cases(), "paper-table", &mut buf).unwrap();
        assert_eq!(bars.len(), 10);
        assert_eq!((bars[0].spa, bars[0].fpa), (0.8589, 0.9420));
        assert!(bars.iter().all(|b| b.dla == b.spa));
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 11);
    }

    #[test]
    fn false_bid_sweep_under_spa() {
        let spec = ExperimentSpec {
            mechanisms: vec![MechanismKind::Spa],
            ..quick_spec()
        };
        let rows =
            run_false_bid_sweep(&spec, &FALSE_BID_PROFILE, 0, &[0.5, 1.0, 2.0], std::io::sink()).unwrap();
        assert_abs_diff_eq!(rows[0].bid, 0.4204, epsilon = 1e-12);
        assert!(!rows[0].wins);
        assert_eq!(rows[0].utility, 0.0);
        assert_abs_diff_eq!(rows[1].utility, 0.0576, epsilon = 1e-12);
        assert_eq!(rows[2].payment, 0.7832);
        assert_eq!(rows[2].utility, rows[2].truthful_utility);
    }

    #[test]
    fn bundled_candidates() {
        let mut buf = Vec::new();
        let c = run_candidate_demo(&Scenario::bundled(), &mut buf).unwrap();
        assert_eq!(c, vec![0, 1, 2, 3, 4]);
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 16);
    }

    #[test]
    fn tight_latency_admits_nobody() {
        let mut s = Scenario::bundled();
        s.request.max_latency = s.request.transfer_time() * 0.5;
        assert!(run_candidate_demo(&s, std::io::sink()).unwrap().is_empty());
    }

    #[test]
    fn colocated_drones_are_all_candidates() {
        let mut s = Scenario::bundled();
        let here = s.surveillance.position;
        s.base_stations = vec![here];
        for d in &mut s.delivery_drones {
            d.position = here;
            d.remaining_energy = d.spec.pack_energy();
        }
        assert_eq!(run_candidate_demo(&s, std::io::sink()).unwrap().len(), 15);
    }

    #[test]
    fn bundled_request_is_on_the_calibration_grid() {
        let s = Scenario::bundled();
        let data: Vec<f64> = (1..=10).map(|i| i as f64 * 100.0).collect();
        let latency: Vec<f64> = (30..=90).map(|i| i as f64 * 10.0).collect();
        let hits = calibrate_request(&s, &[0, 1, 2, 3, 4], &data, &latency);
        assert!(hits.contains(&s.request), "{hits:?}");
    }

    #[test]
    fn experiment_file_overrides() {
        let file: ExperimentFile = toml::from_str(
            "bidders = [3]\ndistribution = \"uniform:0.5,1\"\ndla = \"identity\"\n[train]\niterations = 7\n",
        )
        .unwrap();
        let mut spec = ExperimentSpec::default();
        file.apply(&mut spec).unwrap();
        assert_eq!(spec.bidders, vec![3]);
        assert_eq!(spec.dla, DlaSource::Identity);
        assert_eq!(spec.train.iterations, 7);
        assert_eq!(
            spec.distribution,
            ValuationDistribution::Uniform { lo: 0.5, hi: 1.0 }
        );
        assert!(toml::from_str::<ExperimentFile>("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_specs() {
        for spec in [
            ExperimentSpec {
                trials: 0,
                ..quick_spec()
            },
            ExperimentSpec {
                bidders: vec![1],
                ..quick_spec()
            },
        ] {
            assert!(spec.validate().is_err());
        }
        let ratio = ExperimentSpec {
            mechanisms: vec![MechanismKind::Myerson],
            distribution: ValuationDistribution::ratio(0.0, 1.0, 0.5, 1.0).unwrap(),
            ..quick_spec()
        };
        assert!(revenue_series(&ratio).is_err());
    }
}
