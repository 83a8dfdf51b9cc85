//! Single-item auction rules and property checkers.

use std::io::Write;

use crate::bidding::{BidProfile, ProfileBatch, ValuationDistribution, SAMPLE_CHUNK};
use crate::error::{invalid, Error, Result};
use crate::par::{map_chunks, Execution};
use crate::rng;

/// Tolerance for the IR and IC checks.
pub const PROPERTY_TOL: f64 = 1e-9;
/// A deviation gaining more than this is an empirical IC violation.
pub const IC_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismConfig {
    /// Seller's cost per unit allocated; subtracted from each payment in the
    /// revenue.
    pub processing_cost: f64,
    pub reserve: Option<f64>,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            processing_cost: 0.0,
            reserve: None,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.processing_cost >= 0.0) {
            return Err(invalid("processing_cost", "must be >= 0"));
        }
        if let Some(r) = self.reserve {
            if !r.is_finite() {
                return Err(invalid("reserve", "must be finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionOutcome {
    pub winner: Option<usize>,
    /// Win probability per bidder.
    pub allocation: Vec<f64>,
    pub payments: Vec<f64>,
    pub revenue: f64,
    /// `bid·g − p`, i.e. utilities assuming bids are truthful.
    pub utilities: Vec<f64>,
}

impl AuctionOutcome {
    /// Deterministic outcome: `winner` (if any) gets the item and pays
    /// `payment`, everyone else pays nothing.
    pub fn single_winner(bids: &[f64], winner: Option<usize>, payment: f64, cfg: &MechanismConfig) -> Self {
        let n = bids.len();
        let mut allocation = vec![0.0; n];
        let mut payments = vec![0.0; n];
        if let Some(w) = winner {
            allocation[w] = 1.0;
            payments[w] = payment;
        }
        Self::from_parts(bids, winner, allocation, payments, cfg)
    }

    pub fn from_parts(
        bids: &[f64],
        winner: Option<usize>,
        allocation: Vec<f64>,
        payments: Vec<f64>,
        cfg: &MechanismConfig,
    ) -> Self {
        let revenue = payments
            .iter()
            .zip(&allocation)
            .map(|(p, g)| (p - cfg.processing_cost) * g)
            .sum();
        let utilities = bids
            .iter()
            .zip(&allocation)
            .zip(&payments)
            .map(|((v, g), p)| v * g - p)
            .collect();
        AuctionOutcome {
            winner,
            allocation,
            payments,
            revenue,
            utilities,
        }
    }

    /// Utility of bidder `i` if its true value is `value`.
    pub fn utility(&self, i: usize, value: f64) -> f64 {
        value * self.allocation[i] - self.payments[i]
    }
}

/// Index of the largest bid; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Largest value over all indices except `skip`.
pub fn max_excluding(values: &[f64], skip: usize) -> Option<f64> {
    values
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != skip)
        .map(|(_, &v)| v)
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

/// A sealed-bid single-item auction.
pub trait Mechanism: Sync {
    fn name(&self) -> &str;
    fn run(&self, bids: &[f64]) -> Result<AuctionOutcome>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FirstPrice(pub MechanismConfig);

#[derive(Debug, Clone, Copy, Default)]
pub struct SecondPrice(pub MechanismConfig);

/// Myerson's optimal auction for i.i.d. `U[lo, hi]` values.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticMyerson {
    pub lo: f64,
    pub hi: f64,
    pub cfg: MechanismConfig,
}

impl AnalyticMyerson {
    pub fn new(lo: f64, hi: f64) -> Self {
        AnalyticMyerson {
            lo,
            hi,
            cfg: MechanismConfig::default(),
        }
    }
}

impl Mechanism for FirstPrice {
    fn name(&self) -> &str {
        "FPA"
    }

    fn run(&self, bids: &[f64]) -> Result<AuctionOutcome> {
        let cfg = &self.0;
        let top = argmax(bids).ok_or_else(|| Error::Auction("no bids".into()))?;
        let winner = match cfg.reserve {
            Some(r) if bids[top] < r => None,
            _ => Some(top),
        };
        Ok(AuctionOutcome::single_winner(bids, winner, bids[top], cfg))
    }
}

impl Mechanism for SecondPrice {
    fn name(&self) -> &str {
        "SPA"
    }

    fn run(&self, bids: &[f64]) -> Result<AuctionOutcome> {
        let cfg = &self.0;
        let top = argmax(bids).ok_or_else(|| Error::Auction("no bids".into()))?;
        let second = max_excluding(bids, top);
        let price = match (second, cfg.reserve) {
            (Some(s), Some(r)) => s.max(r),
            (Some(s), None) => s,
            (None, Some(r)) => r,
            (None, None) => {
                return Err(Error::Auction(
                    "second price undefined for a single bid without a reserve".into(),
                ))
            }
        };
        let winner = match cfg.reserve {
            Some(r) if bids[top] < r => None,
            _ => Some(top),
        };
        Ok(AuctionOutcome::single_winner(bids, winner, price, cfg))
    }
}

/// `v − (1 − F(v)) / f(v)` for `U[lo, hi]`, which is `2v − hi`.
pub fn analytic_virtual_value(v: f64, lo: f64, hi: f64) -> Result<f64> {
    let slack = 1e-12 * (hi - lo).abs().max(1.0);
    if !(v >= lo - slack && v <= hi + slack) {
        return Err(Error::OutsideSupport { value: v, lo, hi });
    }
    Ok(2.0 * v - hi)
}

fn inverse_virtual_value(y: f64, hi: f64) -> f64 {
    (y + hi) / 2.0
}

impl Mechanism for AnalyticMyerson {
    fn name(&self) -> &str {
        "Myerson"
    }

    fn run(&self, bids: &[f64]) -> Result<AuctionOutcome> {
        let phi = bids
            .iter()
            .map(|&b| analytic_virtual_value(b, self.lo, self.hi))
            .collect::<Result<Vec<_>>>()?;
        let top = argmax(&phi).ok_or_else(|| Error::Auction("no bids".into()))?;
        if phi[top] < 0.0 {
            return Ok(AuctionOutcome::single_winner(bids, None, 0.0, &self.cfg));
        }
        let threshold = max_excluding(&phi, top).unwrap_or(0.0).max(0.0);
        let price = inverse_virtual_value(threshold, self.hi);
        Ok(AuctionOutcome::single_winner(bids, Some(top), price, &self.cfg))
    }
}

pub fn run_fpa(bids: &BidProfile, cfg: &MechanismConfig) -> Result<AuctionOutcome> {
    FirstPrice(*cfg).run(&bids.bids)
}

pub fn run_spa(bids: &BidProfile, cfg: &MechanismConfig) -> Result<AuctionOutcome> {
    SecondPrice(*cfg).run(&bids.bids)
}

pub fn run_analytic_myerson(
    bids: &BidProfile,
    lo: f64,
    hi: f64,
    cfg: &MechanismConfig,
) -> Result<AuctionOutcome> {
    AnalyticMyerson { lo, hi, cfg: *cfg }.run(&bids.bids)
}

/// True iff every bidder ends with non-negative utility at its true value.
pub fn check_ir(outcome: &AuctionOutcome, true_values: &[f64]) -> bool {
    true_values
        .iter()
        .enumerate()
        .all(|(i, &v)| outcome.utility(i, v) >= -PROPERTY_TOL)
}

/// True iff nobody pays more than its budget.
pub fn check_bb(outcome: &AuctionOutcome, budgets: &[f64]) -> bool {
    outcome.payments.iter().zip(budgets).all(|(p, b)| *p <= *b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcReport {
    /// Largest utility gain of a misreport over truth-telling.
    pub max_gain: f64,
    /// Bidder and factor achieving `max_gain`.
    pub worst: Option<(usize, f64)>,
    pub per_bidder: Vec<f64>,
}

impl IcReport {
    pub fn holds(&self) -> bool {
        self.max_gain <= IC_TOL
    }
}

/// Misreport sweep: bidder `i` reports `r·v_i` for each factor `r` while the
/// others keep their bids from `profile`.
pub fn check_ic_empirical(
    mechanism: &dyn Mechanism,
    profile: &[f64],
    true_values: &[f64],
    deviation_grid: &[f64],
) -> Result<IcReport> {
    if deviation_grid.is_empty() {
        return Err(invalid("deviation_grid", "must be nonempty"));
    }
    if profile.len() != true_values.len() {
        return Err(invalid("true_values", "one value per bidder"));
    }
    let mut report = IcReport {
        max_gain: f64::NEG_INFINITY,
        worst: None,
        per_bidder: vec![f64::NEG_INFINITY; profile.len()],
    };
    let mut bids = profile.to_vec();
    for (i, &value) in true_values.iter().enumerate() {
        bids[i] = value;
        let truthful = mechanism.run(&bids)?.utility(i, value);
        for &r in deviation_grid {
            bids[i] = r * value;
            let gain = mechanism.run(&bids)?.utility(i, value) - truthful;
            if gain > report.per_bidder[i] {
                report.per_bidder[i] = gain;
            }
            if gain > report.max_gain {
                report.max_gain = gain;
                report.worst = Some((i, r));
            }
        }
        bids[i] = profile[i];
    }
    Ok(report)
}

/// The factor grid 0.2, 0.4, ..., 2.0.
pub fn false_rate_grid() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 5.0).collect()
}

/// Per-profile revenue of `mechanism` over a batch, in batch order.
pub fn revenues(mechanism: &dyn Mechanism, batch: &ProfileBatch, exec: Execution) -> Result<Vec<f64>> {
    let parts = map_chunks(exec, batch.len(), SAMPLE_CHUNK, |_, range| {
        range
            .map(|t| mechanism.run(batch.row(t)).map(|o| o.revenue))
            .collect::<Result<Vec<f64>>>()
    });
    Ok(parts.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// Mean revenue of each mechanism over the same `count` profiles, drawn
/// chunk by chunk as in [`ProfileBatch::sample_chunked`] without holding
/// them all in memory.
pub fn mean_revenues(
    mechanisms: &[&dyn Mechanism],
    dist: &ValuationDistribution,
    bidders: usize,
    count: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(invalid("trials", "must be >= 1"));
    }
    let parts = map_chunks(exec, count, SAMPLE_CHUNK, |c, range| {
        let mut r = rng::stream(seed, rng::MONTE_CARLO, c as u64);
        let batch = ProfileBatch::sample(dist, bidders, range.len(), &mut r);
        let mut sums = vec![0.0; mechanisms.len()];
        for row in batch.rows() {
            for (m, sum) in mechanisms.iter().zip(sums.iter_mut()) {
                *sum += m.run(row)?.revenue;
            }
        }
        Ok::<_, Error>(sums)
    });
    let mut total = vec![0.0; mechanisms.len()];
    for part in parts {
        for (t, s) in total.iter_mut().zip(part?) {
            *t += s;
        }
    }
    Ok(total.into_iter().map(|t| t / count as f64).collect())
}

/// One row per bidder plus a revenue footer.
pub fn write_outcome<W: Write>(out: W, bids: &[f64], outcome: &AuctionOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bidder", "bid", "allocation", "payment", "utility"])?;
    for (i, b) in bids.iter().enumerate() {
        w.write_record([
            i.to_string(),
            b.to_string(),
            outcome.allocation[i].to_string(),
            outcome.payments[i].to_string(),
            outcome.utilities[i].to_string(),
        ])?;
    }
    w.write_record(["revenue", "", "", "", &outcome.revenue.to_string()])?;
    w.flush()?;
    Ok(())
}
