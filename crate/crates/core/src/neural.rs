//! Trainable revenue-maximizing auction.
//!
//! Each bid is mapped through a strictly increasing min-max network
//! `φ(b) = min_k max_j (w_kj·b + β_kj)`, `w = exp(θ)`. A dummy slot fixed at 0
//! competes with the transformed bids; the winner pays `φ⁻¹` of the best
//! competing transformed bid. Training replaces the argmax by a softmax and
//! ascends expected revenue with plain SGD.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bidding::{ProfileBatch, ValuationDistribution};
use crate::error::{invalid, Error, Result};
use crate::mechanisms::{argmax, AuctionOutcome, Mechanism, MechanismConfig};
use crate::par::{map_chunks, Execution};
use crate::rng;

const CHECKPOINT_MAGIC: &str = "monotone-net v1";
/// Profiles per parallel work item when evaluating a batch.
const GRAD_CHUNK: usize = 32;

/// Parameters of the per-bidder (or tied) monotone networks.
///
/// `theta` and `beta` are laid out `[net][group][line]`; with `tied` there is
/// a single net shared by every bidder.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneNet {
    pub bidders: usize,
    pub groups: usize,
    pub lines: usize,
    pub tied: bool,
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl MonotoneNet {
    /// `φ(b) = b` for every bidder.
    pub fn identity(bidders: usize, tied: bool) -> Self {
        let nets = if tied { 1 } else { bidders };
        MonotoneNet {
            bidders,
            groups: 1,
            lines: 1,
            tied,
            theta: vec![0.0; nets],
            beta: vec![0.0; nets],
        }
    }

    /// `θ ~ U[ln s − 1, ln s]` and `β = −w·u` with `u ~ U[0, 1]`, so every
    /// line crosses zero inside `[0, 1]`.
    pub fn random<R: Rng + ?Sized>(
        bidders: usize,
        groups: usize,
        lines: usize,
        tied: bool,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(invalid("init_scale", "must be positive"));
        }
        let nets = if tied { 1 } else { bidders };
        let size = nets * groups * lines;
        let top = init_scale.ln();
        let theta: Vec<f64> = (0..size).map(|_| top - rng.gen::<f64>()).collect();
        let beta = theta.iter().map(|t| -t.exp() * rng.gen::<f64>()).collect();
        let net = MonotoneNet {
            bidders,
            groups,
            lines,
            tied,
            theta,
            beta,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bidders == 0 {
            return Err(invalid("bidders", "must be >= 1"));
        }
        if self.groups == 0 || self.lines == 0 {
            return Err(invalid("groups/lines", "K and J must be >= 1"));
        }
        let size = self.nets() * self.groups * self.lines;
        if self.theta.len() != size || self.beta.len() != size {
            return Err(invalid("params", format!("expected {size} weights and biases")));
        }
        if self.theta.iter().chain(&self.beta).any(|x| !x.is_finite()) {
            return Err(invalid("params", "non-finite parameter"));
        }
        if self.theta.iter().any(|t| !(t.exp() > 0.0 && t.exp().is_finite())) {
            return Err(invalid("theta", "effective weight underflows or overflows"));
        }
        Ok(())
    }

    pub fn nets(&self) -> usize {
        if self.tied {
            1
        } else {
            self.bidders
        }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    fn base(&self, bidder: usize) -> usize {
        let net = if self.tied { 0 } else { bidder };
        net * self.groups * self.lines
    }

    /// `φ_i(b)` and the flat index of the line that produced it.
    pub fn transform_active(&self, bidder: usize, b: f64) -> (f64, usize) {
        let base = self.base(bidder);
        let mut best = (f64::INFINITY, base);
        for k in 0..self.groups {
            let row = base + k * self.lines;
            let mut top = (f64::NEG_INFINITY, row);
            for idx in row..row + self.lines {
                let z = self.theta[idx].exp() * b + self.beta[idx];
                if z > top.0 {
                    top = (z, idx);
                }
            }
            if top.0 < best.0 {
                best = top;
            }
        }
        best
    }

    /// `φ_i⁻¹(y) = max_k min_j (y − β_kj) / w_kj` and its active line.
    pub fn inverse_active(&self, bidder: usize, y: f64) -> (f64, usize) {
        let base = self.base(bidder);
        let mut best = (f64::NEG_INFINITY, base);
        for k in 0..self.groups {
            let row = base + k * self.lines;
            let mut low = (f64::INFINITY, row);
            for idx in row..row + self.lines {
                let u = (y - self.beta[idx]) / self.theta[idx].exp();
                if u < low.0 {
                    low = (u, idx);
                }
            }
            if low.0 > best.0 {
                best = low;
            }
        }
        best
    }

    /// Bid at which bidder `i` ties the dummy slot.
    pub fn reserve(&self, bidder: usize) -> f64 {
        self.inverse_active(bidder, 0.0).0
    }
}

pub fn virtual_transform(params: &MonotoneNet, bidder: usize, b: f64) -> f64 {
    params.transform_active(bidder, b).0
}

pub fn virtual_inverse(params: &MonotoneNet, bidder: usize, y: f64) -> f64 {
    params.inverse_active(bidder, y).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Softmax allocation, used for training.
    Soft,
    /// Argmax allocation, used at inference.
    Hard,
}

/// Slot probabilities over `transformed` (which must end with the dummy).
pub fn allocate(transformed: &[f64], softmax_quality: f64, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Soft => softmax(transformed, softmax_quality),
        Mode::Hard => {
            let mut g = vec![0.0; transformed.len()];
            if let Some(w) = argmax(transformed) {
                g[w] = 1.0;
            }
            g
        }
    }
}

fn softmax(z: &[f64], k: f64) -> Vec<f64> {
    let top = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(k * v));
    let e: Vec<f64> = z.iter().map(|&v| (k * v - top).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// Slot of the largest transformed value other than `skip` (lowest index on
/// ties).
fn competitor(transformed: &[f64], skip: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in transformed.iter().enumerate() {
        if j != skip && (best == usize::MAX || v > transformed[best]) {
            best = j;
        }
    }
    best
}

/// `ReLU(max_{j≠i} b̄_j)`; zero when the dummy (last slot) wins.
pub fn payment_transformed(transformed: &[f64], winner_slot: usize) -> f64 {
    if winner_slot + 1 >= transformed.len() {
        return 0.0;
    }
    transformed[competitor(transformed, winner_slot)].max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Softmax sharpness `k`.
    pub softmax_quality: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub groups: usize,
    pub lines: usize,
    pub tied: bool,
    /// Initial effective weights lie in `[s/e, s]`.
    pub init_scale: f64,
    pub processing_cost: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            softmax_quality: 1.0,
            iterations: 500,
            batch_size: 128,
            learning_rate: 0.05,
            groups: 5,
            lines: 3,
            tied: true,
            init_scale: 100.0,
            processing_cost: 0.0,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.softmax_quality > 0.0 && self.softmax_quality.is_finite()) {
            return Err(invalid("softmax_quality", "must be > 0"));
        }
        if self.iterations == 0 {
            return Err(invalid("iterations", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be > 0"));
        }
        if self.groups == 0 || self.lines == 0 {
            return Err(invalid("groups/lines", "K and J must be >= 1"));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(invalid("init_scale", "must be > 0"));
        }
        if !(self.processing_cost >= 0.0) {
            return Err(invalid("processing_cost", "must be >= 0"));
        }
        Ok(())
    }

    fn mechanism_config(&self) -> MechanismConfig {
        MechanismConfig {
            processing_cost: self.processing_cost,
            reserve: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NeuralOutcome {
    pub mode: Mode,
    /// `φ_i(b_i)` followed by the dummy 0.
    pub transformed_bids: Vec<f64>,
    /// Over the N bidders and the dummy.
    pub allocation_probs: Vec<f64>,
    pub payments_transformed: Vec<f64>,
    /// In hard mode only the winner's entry is nonzero.
    pub payments_final: Vec<f64>,
    pub winner: Option<usize>,
    pub revenue: f64,
}

impl NeuralOutcome {
    pub fn to_auction_outcome(&self, bids: &[f64], cfg: &MechanismConfig) -> AuctionOutcome {
        let n = bids.len();
        AuctionOutcome::from_parts(
            bids,
            self.winner,
            self.allocation_probs[..n].to_vec(),
            self.payments_final.clone(),
            cfg,
        )
    }
}

fn check_bids(params: &MonotoneNet, bids: &[f64]) -> Result<()> {
    if bids.len() != params.bidders {
        return Err(invalid(
            "bids",
            format!("network has {} bidders, got {}", params.bidders, bids.len()),
        ));
    }
    if bids.iter().any(|b| !b.is_finite()) {
        return Err(invalid("bids", "must be finite"));
    }
    Ok(())
}

pub fn run_neural(
    params: &MonotoneNet,
    bids: &[f64],
    cfg: &TrainConfig,
    mode: Mode,
) -> Result<NeuralOutcome> {
    check_bids(params, bids)?;
    let n = bids.len();
    let mut z: Vec<f64> = (0..n).map(|i| virtual_transform(params, i, bids[i])).collect();
    z.push(0.0);
    let g = allocate(&z, cfg.softmax_quality, mode);
    let p0: Vec<f64> = (0..n).map(|i| payment_transformed(&z, i)).collect();
    let mut pay: Vec<f64> = (0..n)
        .map(|i| virtual_inverse(params, i, p0[i]).max(0.0))
        .collect();
    let winner = match mode {
        Mode::Soft => None,
        Mode::Hard => argmax(&z).filter(|&w| w < n),
    };
    if mode == Mode::Hard {
        for (i, p) in pay.iter_mut().enumerate() {
            if Some(i) != winner {
                *p = 0.0;
            }
        }
    }
    let revenue = (0..n).map(|i| g[i] * (pay[i] - cfg.processing_cost)).sum();
    Ok(NeuralOutcome {
        mode,
        transformed_bids: z,
        allocation_probs: g,
        payments_transformed: p0,
        payments_final: pay,
        winner,
        revenue,
    })
}

/// Hard-mode neural auction as a [`Mechanism`].
#[derive(Debug, Clone)]
pub struct NeuralAuction {
    pub params: MonotoneNet,
    pub cfg: TrainConfig,
}

impl Mechanism for NeuralAuction {
    fn name(&self) -> &str {
        "DLA"
    }

    fn run(&self, bids: &[f64]) -> Result<AuctionOutcome> {
        let o = run_neural(&self.params, bids, &self.cfg, Mode::Hard)?;
        Ok(o.to_auction_outcome(bids, &self.cfg.mechanism_config()))
    }
}

/// Gradient with respect to `theta` and `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub theta: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradient {
    fn zeros(len: usize) -> Self {
        Gradient {
            theta: vec![0.0; len],
            beta: vec![0.0; len],
        }
    }

    fn add_scaled(&mut self, other: &Gradient, scale: f64) {
        for (a, b) in self.theta.iter_mut().zip(&other.theta) {
            *a += scale * b;
        }
        for (a, b) in self.beta.iter_mut().zip(&other.beta) {
            *a += scale * b;
        }
    }
}

/// Soft-mode revenue of one profile; accumulates `∂R/∂params` into `grad`.
fn soft_revenue(params: &MonotoneNet, bids: &[f64], k: f64, c: f64, grad: Option<&mut Gradient>) -> f64 {
    let n = bids.len();
    let mut z = Vec::with_capacity(n + 1);
    let mut forward = Vec::with_capacity(n);
    for (i, &b) in bids.iter().enumerate() {
        let (v, idx) = params.transform_active(i, b);
        z.push(v);
        forward.push(idx);
    }
    z.push(0.0);
    let g = softmax(&z, k);

    // (competitor slot, inverse line, φ⁻¹ value) per bidder.
    let mut pricing = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for i in 0..n {
        let slot = competitor(&z, i);
        let (u, idx) = params.inverse_active(i, z[slot].max(0.0));
        pricing.push((slot, idx, u));
        q.push(u.max(0.0) - c);
    }
    let revenue: f64 = (0..n).map(|i| g[i] * q[i]).sum();

    if let Some(grad) = grad {
        let mut dz: Vec<f64> = (0..n).map(|m| k * g[m] * (q[m] - revenue)).collect();
        for i in 0..n {
            let (slot, idx, u) = pricing[i];
            if u <= 0.0 {
                continue;
            }
            let w = params.theta[idx].exp();
            grad.theta[idx] -= g[i] * u;
            grad.beta[idx] -= g[i] / w;
            if slot < n && z[slot] > 0.0 {
                dz[slot] += g[i] / w;
            }
        }
        for m in 0..n {
            let idx = forward[m];
            grad.theta[idx] += dz[m] * params.theta[idx].exp() * bids[m];
            grad.beta[idx] += dz[m];
        }
    }
    revenue
}

fn check_batch(params: &MonotoneNet, batch: &ProfileBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("batch", "must be nonempty"));
    }
    if batch.bidders != params.bidders {
        return Err(invalid(
            "batch",
            format!(
                "network has {} bidders, batch has {}",
                params.bidders, batch.bidders
            ),
        ));
    }
    Ok(())
}

/// Mean negative soft-mode revenue over the batch.
pub fn loss(params: &MonotoneNet, batch: &ProfileBatch, cfg: &TrainConfig) -> Result<f64> {
    check_batch(params, batch)?;
    let total: f64 = batch
        .rows()
        .map(|row| soft_revenue(params, row, cfg.softmax_quality, cfg.processing_cost, None))
        .sum();
    Ok(-total / batch.len() as f64)
}

/// Loss and its analytic gradient. Chunk results are reduced in order, so
/// the output does not depend on `exec`.
pub fn loss_and_grad(
    params: &MonotoneNet,
    batch: &ProfileBatch,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<(f64, Gradient)> {
    check_batch(params, batch)?;
    let parts = map_chunks(exec, batch.len(), GRAD_CHUNK, |_, range| {
        let mut grad = Gradient::zeros(params.len());
        let mut total = 0.0;
        for t in range {
            total += soft_revenue(
                params,
                batch.row(t),
                cfg.softmax_quality,
                cfg.processing_cost,
                Some(&mut grad),
            );
        }
        (total, grad)
    });
    let scale = -1.0 / batch.len() as f64;
    let mut grad = Gradient::zeros(params.len());
    let mut total = 0.0;
    for (t, g) in parts {
        total += t;
        grad.add_scaled(&g, scale);
    }
    Ok((total * scale, grad))
}

/// Mean hard-mode revenue over a batch.
pub fn hard_revenue(
    params: &MonotoneNet,
    batch: &ProfileBatch,
    cfg: &TrainConfig,
    exec: Execution,
) -> Result<f64> {
    check_batch(params, batch)?;
    let parts = map_chunks(exec, batch.len(), 1024, |_, range| {
        let mut total = 0.0;
        for t in range {
            total += run_neural(params, batch.row(t), cfg, Mode::Hard)?.revenue;
        }
        Ok::<_, Error>(total)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / batch.len() as f64)
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub soft_revenue: f64,
    /// Hard-mode revenue on the same batch, before the update.
    pub hard_revenue: f64,
}

/// Plain SGD over freshly sampled batches.
pub struct Trainer {
    pub params: MonotoneNet,
    pub cfg: TrainConfig,
    pub dist: ValuationDistribution,
    pub iteration: usize,
    pub exec: Execution,
}

impl Trainer {
    pub fn new(dist: ValuationDistribution, bidders: usize, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        dist.validate()?;
        let mut init = rng::stream(cfg.rng_seed, rng::TRAIN_INIT, 0);
        let params = MonotoneNet::random(
            bidders,
            cfg.groups,
            cfg.lines,
            cfg.tied,
            cfg.init_scale,
            &mut init,
        )?;
        Ok(Trainer {
            params,
            cfg,
            dist,
            iteration: 0,
            exec: Execution::default(),
        })
    }

    pub fn step(&mut self) -> Result<TrainRecord> {
        let mut r = rng::stream(self.cfg.rng_seed, rng::TRAIN_BATCH, self.iteration as u64);
        let batch = ProfileBatch::sample(&self.dist, self.params.bidders, self.cfg.batch_size, &mut r);
        let (loss, grad) = loss_and_grad(&self.params, &batch, &self.cfg, self.exec)?;
        let hard = hard_revenue(&self.params, &batch, &self.cfg, self.exec)?;
        self.iteration += 1;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss,
            });
        }
        let lr = self.cfg.learning_rate;
        for (p, d) in self.params.theta.iter_mut().zip(&grad.theta) {
            *p -= lr * d;
        }
        for (p, d) in self.params.beta.iter_mut().zip(&grad.beta) {
            *p -= lr * d;
        }
        if self.params.validate().is_err() {
            return Err(Error::Diverged {
                iteration: self.iteration,
                loss,
            });
        }
        Ok(TrainRecord {
            iteration: self.iteration,
            loss,
            soft_revenue: -loss,
            hard_revenue: hard,
        })
    }
}

/// Trains for `cfg.iterations` steps and returns the parameters and log.
pub fn train_with_log(
    dist: &ValuationDistribution,
    bidders: usize,
    cfg: &TrainConfig,
) -> Result<(MonotoneNet, Vec<TrainRecord>)> {
    let mut trainer = Trainer::new(dist.clone(), bidders, cfg.clone())?;
    let mut log = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        log.push(trainer.step()?);
    }
    Ok((trainer.params, log))
}

pub fn train(dist: &ValuationDistribution, bidders: usize, cfg: &TrainConfig) -> Result<MonotoneNet> {
    Ok(train_with_log(dist, bidders, cfg)?.0)
}

pub fn write_train_log<W: Write>(out: W, log: &[TrainRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "loss", "soft_revenue", "hard_revenue"])?;
    for r in log {
        w.write_record([
            r.iteration.to_string(),
            r.loss.to_string(),
            r.soft_revenue.to_string(),
            r.hard_revenue.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Text checkpoint:
///
/// ```text
/// monotone-net v1
/// bidders 5
/// groups 5
/// lines 3
/// tied true
/// theta
/// <one line per (net, group): `lines` values>
/// beta
/// <same shape>
/// ```
pub fn write_checkpoint<W: Write>(mut out: W, params: &MonotoneNet) -> Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "bidders {}", params.bidders)?;
    writeln!(out, "groups {}", params.groups)?;
    writeln!(out, "lines {}", params.lines)?;
    writeln!(out, "tied {}", params.tied)?;
    for (name, values) in [("theta", &params.theta), ("beta", &params.beta)] {
        writeln!(out, "{name}")?;
        for row in values.chunks(params.lines) {
            let text: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", text.join(" "))?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<MonotoneNet> {
    let bad = |msg: String| Error::Checkpoint(msg);
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        loop {
            match lines.next() {
                Some(line) => {
                    let line = line?;
                    if !line.trim().is_empty() {
                        return Ok(line.trim().to_string());
                    }
                }
                None => return Err(Error::Checkpoint("unexpected end of file".into())),
            }
        }
    };
    if next()? != CHECKPOINT_MAGIC {
        return Err(bad(format!("missing '{CHECKPOINT_MAGIC}' header")));
    }
    let mut header = |key: &str| -> Result<String> {
        let line = next()?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok(v.trim().to_string()),
            _ => Err(Error::Checkpoint(format!(
                "expected '{key} <value>', got '{line}'"
            ))),
        }
    };
    let count = |key: &str, v: String| -> Result<usize> {
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("bad {key}: '{v}'")))
    };
    let bidders = count("bidders", header("bidders")?)?;
    let groups = count("groups", header("groups")?)?;
    let lines_per = count("lines", header("lines")?)?;
    let tied_text = header("tied")?;
    let tied: bool = tied_text
        .parse()
        .map_err(|_| bad(format!("bad tied flag: '{tied_text}'")))?;
    if bidders == 0 || groups == 0 || lines_per == 0 {
        return Err(bad("dimensions must be >= 1".into()));
    }
    let rows = if tied { 1 } else { bidders } * groups;
    let mut block = |name: &str| -> Result<Vec<f64>> {
        let line = next()?;
        if line != name {
            return Err(Error::Checkpoint(format!("expected '{name}', got '{line}'")));
        }
        let mut values = Vec::with_capacity(rows * lines_per);
        for r in 0..rows {
            let line = next()?;
            let row = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Checkpoint(format!("{name} row {r}: {e}")))?;
            if row.len() != lines_per {
                return Err(Error::Checkpoint(format!(
                    "{name} row {r}: expected {lines_per} values, got {}",
                    row.len()
                )));
            }
            values.extend(row);
        }
        Ok(values)
    };
    let theta = block("theta")?;
    let beta = block("beta")?;
    let net = MonotoneNet {
        bidders,
        groups,
        lines: lines_per,
        tied,
        theta,
        beta,
    };
    net.validate().map_err(|e| bad(e.to_string()))?;
    Ok(net)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &MonotoneNet) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    write_checkpoint(BufWriter::new(file), params)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MonotoneNet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_checkpoint(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bidding::BidProfile;
    use crate::mechanisms::{run_spa, SecondPrice};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn two_lines() -> MonotoneNet {
        // Lines b and 2b − 1.
        MonotoneNet {
            bidders: 1,
            groups: 1,
            lines: 2,
            tied: true,
            theta: vec![0.0, 2f64.ln()],
            beta: vec![0.0, -1.0],
        }
    }

    fn small_random(seed: u64, bidders: usize, groups: usize, lines: usize, tied: bool) -> MonotoneNet {
        let mut r = rng::seeded(seed);
        MonotoneNet {
            bidders,
            groups,
            lines,
            tied,
            theta: (0..(if tied { 1 } else { bidders }) * groups * lines)
                .map(|_| r.gen_range(-1.0..1.0))
                .collect(),
            beta: (0..(if tied { 1 } else { bidders }) * groups * lines)
                .map(|_| r.gen_range(-1.0..1.0))
                .collect(),
        }
    }

    #[test]
    fn transform_examples() {
        let id = MonotoneNet::identity(1, true);
        assert_eq!(virtual_transform(&id, 0, 0.37), 0.37);
        assert_eq!(virtual_inverse(&id, 0, 0.37), 0.37);
        let net = two_lines();
        assert_abs_diff_eq!(virtual_transform(&net, 0, 0.0), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(virtual_transform(&net, 0, 2.0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(virtual_inverse(&net, 0, 3.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn allocation_examples() {
        let g = allocate(&[0.0; 5], 1.0, Mode::Soft);
        for p in &g {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-12);
        }
        let g = allocate(&[2.0, 1.0, 0.0], 1.0, Mode::Soft);
        assert_abs_diff_eq!(g[0], 0.665, epsilon = 1e-3);
        assert_abs_diff_eq!(g[1], 0.245, epsilon = 1e-3);
        assert_abs_diff_eq!(g[2], 0.090, epsilon = 1e-3);
        assert_eq!(allocate(&[-0.3, -0.1, 0.0], 1.0, Mode::Hard), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn payment_examples() {
        assert_eq!(payment_transformed(&[2.0, 1.0, 0.0], 0), 1.0);
        assert_eq!(payment_transformed(&[0.5, -0.2, 0.0], 0), 0.0);
        assert_eq!(payment_transformed(&[0.5, -0.2, 0.0], 2), 0.0);
    }

    #[test]
    fn identity_reduces_to_spa() {
        let row1 = [0.6802, 0.4398, 0.8589, 0.7860, 0.9420];
        let id = MonotoneNet::identity(5, true);
        let o = run_neural(&id, &row1, &TrainConfig::default(), Mode::Hard).unwrap();
        assert_eq!(o.winner, Some(4));
        assert_eq!(o.payments_final[4], 0.8589);
        let spa = run_spa(
            &BidProfile::from_bids(row1.to_vec()).unwrap(),
            &MechanismConfig::default(),
        )
        .unwrap();
        assert_eq!(o.revenue, spa.revenue);
    }

    #[test]
    fn loss_examples() {
        let id = MonotoneNet::identity(1, true);
        let batch = ProfileBatch::new(1, vec![1.0]).unwrap();
        assert_eq!(loss(&id, &batch, &TrainConfig::default()).unwrap(), 0.0);
        let id = MonotoneNet::identity(3, true);
        let zeros = ProfileBatch::new(3, vec![0.0; 12]).unwrap();
        assert_eq!(loss(&id, &zeros, &TrainConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn soft_allocation_sums_to_one() {
        let net = small_random(3, 4, 2, 3, false);
        let o = run_neural(&net, &[0.1, 0.5, 0.9, 0.3], &TrainConfig::default(), Mode::Soft).unwrap();
        assert_abs_diff_eq!(o.allocation_probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(o.payments_final.iter().all(|p| *p >= 0.0));
    }

    fn finite_difference(net: &MonotoneNet, batch: &ProfileBatch, cfg: &TrainConfig) -> Gradient {
        let h = 1e-6;
        let mut fd = Gradient::zeros(net.len());
        for idx in 0..net.len() {
            for (which, out) in [(0, &mut fd.theta), (1, &mut fd.beta)] {
                let mut plus = net.clone();
                let mut minus = net.clone();
                if which == 0 {
                    plus.theta[idx] += h;
                    minus.theta[idx] -= h;
                } else {
                    plus.beta[idx] += h;
                    minus.beta[idx] -= h;
                }
                out[idx] = (loss(&plus, batch, cfg).unwrap() - loss(&minus, batch, cfg).unwrap()) / (2.0 * h);
            }
        }
        fd
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            softmax_quality: 2.0,
            ..TrainConfig::default()
        };
        for seed in 0..5 {
            let net = small_random(seed, 3, 2, 2, false);
            let mut r = rng::seeded(seed + 100);
            let batch =
                ProfileBatch::sample(&ValuationDistribution::uniform(0.0, 1.0).unwrap(), 3, 8, &mut r);
            let (_, g) = loss_and_grad(&net, &batch, &cfg, Execution::Sequential).unwrap();
            let fd = finite_difference(&net, &batch, &cfg);
            let diff: f64 = g
                .theta
                .iter()
                .chain(&g.beta)
                .zip(fd.theta.iter().chain(&fd.beta))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let norm: f64 = fd.theta.iter().chain(&fd.beta).map(|x| x * x).sum::<f64>().sqrt();
            assert!(diff <= 1e-4 * norm.max(1e-8), "seed {seed}: {diff} vs {norm}");
        }
    }

    #[test]
    fn parallel_gradient_matches_sequential() {
        let net = small_random(9, 5, 5, 3, true);
        let mut r = rng::seeded(1);
        let batch = ProfileBatch::sample(&ValuationDistribution::uniform(0.0, 1.0).unwrap(), 5, 200, &mut r);
        let cfg = TrainConfig::default();
        let a = loss_and_grad(&net, &batch, &cfg, Execution::Sequential).unwrap();
        let b = loss_and_grad(&net, &batch, &cfg, Execution::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_is_deterministic() {
        let dist = ValuationDistribution::uniform(0.0, 1.0).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            rng_seed: 4,
            ..TrainConfig::default()
        };
        let (a, la) = train_with_log(&dist, 5, &cfg).unwrap();
        let (b, lb) = train_with_log(&dist, 5, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn degenerate_values_sell_at_the_common_value_or_not_at_all() {
        let c0 = 0.6;
        let dist = ValuationDistribution::ratio(c0, c0, 1.0, 1.0).unwrap();
        let cfg = TrainConfig {
            iterations: 100,
            rng_seed: 2,
            ..TrainConfig::default()
        };
        let net = train(&dist, 5, &cfg).unwrap();
        let o = run_neural(&net, &[c0; 5], &cfg, Mode::Hard).unwrap();
        match o.winner {
            Some(w) => assert_abs_diff_eq!(o.payments_final[w], c0, epsilon = 1e-9),
            None => assert_eq!(o.revenue, 0.0),
        }
    }

    #[test]
    fn divergence_is_reported() {
        let dist = ValuationDistribution::uniform(0.0, 1.0).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e300,
            iterations: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&dist, 3, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = small_random(5, 3, 2, 3, false);
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &net).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("monotone-net v1\nbidders 3\ngroups 2\nlines 3\ntied false\ntheta\n"));
        assert_eq!(read_checkpoint(&buf[..]).unwrap(), net);
    }

    #[test]
    fn malformed_checkpoints_are_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &small_random(5, 2, 1, 2, true)).unwrap();
        let text = String::from_utf8(buf).unwrap();
        for broken in [
            text.replace("monotone-net v1", "something else"),
            text.replace("lines 2", "lines 3"),
            text.replace("tied true", "tied maybe"),
            text.lines().take(7).collect::<Vec<_>>().join("\n"),
        ] {
            assert!(matches!(
                read_checkpoint(broken.as_bytes()),
                Err(Error::Checkpoint(_))
            ));
        }
    }

    #[test]
    fn neural_mechanism_matches_spa_with_identity() {
        let dla = NeuralAuction {
            params: MonotoneNet::identity(3, true),
            cfg: TrainConfig::default(),
        };
        let bids = [0.3, 0.9, 0.5];
        assert_eq!(
            dla.run(&bids).unwrap(),
            SecondPrice::default().run(&bids).unwrap()
        );
    }

    proptest! {
        #[test]
        fn transform_is_monotone_and_invertible(seed in any::<u64>(), x in 0.0f64..2.0, dx in 1e-6f64..1.0) {
            let net = small_random(seed, 2, 3, 3, false);
            for i in 0..2 {
                let lo = virtual_transform(&net, i, x);
                let hi = virtual_transform(&net, i, x + dx);
                prop_assert!(lo < hi);
                prop_assert!((virtual_inverse(&net, i, lo) - x).abs() <= 1e-6);
            }
        }
    }
}
