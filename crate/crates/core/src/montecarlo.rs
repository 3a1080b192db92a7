//! Exact event-driven simulation of the branching particle system.
//!
//! Each particle owns a ChaCha stream keyed by its genealogical label
//! (root label from seed and replicate index, child label from parent
//! label and birth order). Two runs that differ only in the offspring law
//! therefore share every trajectory that exists in both, which makes
//! inverse-CDF offspring sampling a monotone coupling.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::CbrwModel;
use crate::site::Site;

/// Default per-replicate particle cap.
pub const DEFAULT_PARTICLE_CAP: usize = 1_000_000;

/// Minimum number of surviving replicates for conditional estimates.
pub const MIN_SURVIVORS: u64 = 100;

const CHUNK: u64 = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub model: CbrwModel,
    pub start: Site,
    pub checkpoints: Vec<f64>,
    pub watch: Vec<Site>,
    pub replicates: u64,
    /// Index of the first replicate; shards of one run use disjoint ranges.
    pub first_replicate: u64,
    pub seed: u64,
    pub particle_cap: usize,
    /// Keep (replicate, t, y, count) records for every observation.
    pub keep_raw: bool,
}

impl SimConfig {
    pub fn new(model: CbrwModel, start: Site, checkpoints: Vec<f64>, watch: Vec<Site>, replicates: u64, seed: u64) -> Self {
        SimConfig {
            model,
            start,
            checkpoints,
            watch,
            replicates,
            first_replicate: 0,
            seed,
            particle_cap: DEFAULT_PARTICLE_CAP,
            keep_raw: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidSeed("replicate count must be at least 1".into()));
        }
        if self.first_replicate.checked_add(self.replicates).is_none() {
            return Err(Error::InvalidSeed(format!(
                "replicate range {} + {} overflows",
                self.first_replicate, self.replicates
            )));
        }
        if self.checkpoints.is_empty()
            || self.checkpoints.iter().any(|t| !(*t >= 0.0 && t.is_finite()))
            || self.checkpoints.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::InvalidParameter(
                "checkpoint times must be finite, nonnegative and ascending".into(),
            ));
        }
        let d = self.model.dimension();
        for s in std::iter::once(&self.start).chain(&self.watch) {
            if s.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.dim(),
                });
            }
        }
        if self.watch.is_empty() {
            return Err(Error::InvalidParameter("at least one watch point is required".into()));
        }
        Ok(())
    }
}

/// One observation μ(t; y) of one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RawRecord {
    pub replicate: u64,
    pub checkpoint: usize,
    pub watch: usize,
    pub count: u64,
}

/// Pooled simulation output. The histograms (value of μ → number of
/// replicates) are exact sufficient statistics for every estimator, so
/// pooling is integer addition.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimEstimates {
    #[serde(skip)]
    model: CbrwModel,
    pub start: Site,
    pub checkpoints: Vec<f64>,
    pub watch: Vec<Site>,
    /// (seed, first replicate, replicate count) of every pooled shard.
    pub shards: BTreeSet<(u64, u64, u64)>,
    /// `[checkpoint][watch]` histograms over completed replicates.
    pub histograms: Vec<Vec<BTreeMap<u64, u64>>>,
    /// (seed, replicate) pairs stopped at the particle cap.
    pub capped: BTreeSet<(u64, u64)>,
    #[serde(skip)]
    pub raw: Option<Vec<(u64, RawRecord)>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointEstimate {
    pub t: f64,
    pub replicates: u64,
    pub mean: f64,
    pub mean_se: f64,
    pub survival: f64,
    pub survival_se: f64,
    pub factorial2: f64,
    pub factorial2_se: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PgfEstimate {
    pub s: f64,
    pub value: f64,
    pub se: f64,
    pub survivors: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentEstimate {
    pub value: f64,
    pub se: f64,
}

/// Sample mean and standard error of g(μ) from a histogram.
fn moment<F: Fn(u64) -> f64>(hist: &BTreeMap<u64, u64>, g: F) -> (f64, f64, u64) {
    let n: u64 = hist.values().sum();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let nf = n as f64;
    let mean = hist.iter().map(|(&k, &c)| g(k) * c as f64).sum::<f64>() / nf;
    if n < 2 {
        return (mean, f64::INFINITY, n);
    }
    let ss: f64 = hist
        .iter()
        .map(|(&k, &c)| {
            let d = g(k) - mean;
            d * d * c as f64
        })
        .sum();
    (mean, (ss / (nf - 1.0) / nf).sqrt(), n)
}

impl SimEstimates {
    pub fn model(&self) -> &CbrwModel {
        &self.model
    }

    pub fn replicates(&self) -> u64 {
        self.shards.iter().map(|s| s.2).sum()
    }

    fn hist(&self, checkpoint: usize, watch: usize) -> &BTreeMap<u64, u64> {
        &self.histograms[checkpoint][watch]
    }

    fn locate(&self, t: f64, y: &Site) -> Result<(usize, usize)> {
        let c = self
            .checkpoints
            .iter()
            .position(|&c| (c - t).abs() <= 1e-12 * t.max(1.0))
            .ok_or_else(|| Error::InvalidParameter(format!("no checkpoint at t = {t}")))?;
        let w = self
            .watch
            .iter()
            .position(|w| w == y)
            .ok_or_else(|| Error::InvalidParameter(format!("{y} is not a watch point")))?;
        Ok((c, w))
    }

    /// Mean, survival frequency and second factorial moment of μ(t; y).
    pub fn point(&self, t: f64, y: &Site) -> Result<PointEstimate> {
        let (c, w) = self.locate(t, y)?;
        let h = self.hist(c, w);
        let (mean, mean_se, n) = moment(h, |k| k as f64);
        let (survival, survival_se, _) = moment(h, |k| if k > 0 { 1.0 } else { 0.0 });
        let (factorial2, factorial2_se, _) = moment(h, |k| k as f64 * (k as f64 - 1.0));
        Ok(PointEstimate {
            t: self.checkpoints[c],
            replicates: n,
            mean,
            mean_se,
            survival,
            survival_se,
            factorial2,
            factorial2_se,
        })
    }

    /// Sample mean of μ(t; y)^{1+δ}.
    pub fn fractional_moment(&self, t: f64, y: &Site, delta: f64) -> Result<MomentEstimate> {
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::OutOfDomain {
                name: "delta",
                value: delta,
                domain: "(0, 1]",
            });
        }
        let (c, w) = self.locate(t, y)?;
        let (value, se, _) = moment(self.hist(c, w), |k| (k as f64).powf(1.0 + delta));
        Ok(MomentEstimate { value, se })
    }

    /// E(s^μ | μ > 0) by the ratio estimator with a delta-method error.
    pub fn conditional_pgf(&self, t: f64, y: &Site, s: f64) -> Result<PgfEstimate> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::OutOfDomain {
                name: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        let (c, w) = self.locate(t, y)?;
        let h = self.hist(c, w);
        let n: u64 = h.values().sum();
        let survivors: u64 = h.iter().filter(|(k, _)| **k > 0).map(|(_, c)| c).sum();
        if survivors < MIN_SURVIVORS {
            return Err(Error::InsufficientSurvivors {
                t,
                survivors,
                needed: MIN_SURVIVORS,
            });
        }
        let nf = n as f64;
        let pow = |k: u64| if k == 0 { 0.0 } else { s.powf(k as f64) };
        let a_mean = h.iter().map(|(&k, &c)| pow(k) * c as f64).sum::<f64>() / nf;
        let b_mean = survivors as f64 / nf;
        let r = a_mean / b_mean;
        // per-replicate linearisation (A_i - r B_i) / B̄
        let ss: f64 = h
            .iter()
            .map(|(&k, &c)| {
                let b = if k > 0 { 1.0 } else { 0.0 };
                let l = pow(k) - r * b;
                l * l * c as f64
            })
            .sum();
        let se = (ss / (nf - 1.0) / nf).sqrt() / b_mean;
        Ok(PgfEstimate {
            s,
            value: r,
            se,
            survivors,
        })
    }

    /// Raw observations as CSV rows (replicate, t, y, count).
    pub fn raw_csv(&self) -> Option<String> {
        let raw = self.raw.as_ref()?;
        let mut out = String::from("replicate,t,y,count\n");
        for (seed, r) in raw {
            let y = self.watch[r.watch].coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
            out.push_str(&format!(
                "{seed}:{},{},{},{}\n",
                r.replicate, self.checkpoints[r.checkpoint], y, r.count
            ));
        }
        Some(out)
    }
}

/// Pools two runs of the same configuration over disjoint replicates.
pub fn merge_results(a: &SimEstimates, b: &SimEstimates) -> Result<SimEstimates> {
    if a.model != b.model || a.start != b.start || a.checkpoints != b.checkpoints || a.watch != b.watch {
        return Err(Error::ConfigMismatch(
            "model, start, checkpoints and watch points must agree".into(),
        ));
    }
    for &(seed, first, count) in &b.shards {
        for &(s2, f2, c2) in &a.shards {
            if seed == s2 && first < f2 + c2 && f2 < first + count {
                return Err(Error::ConfigMismatch(format!(
                    "replicates {first}..{} of seed {seed} are already pooled",
                    first + count
                )));
            }
        }
    }
    let mut out = a.clone();
    out.shards.extend(b.shards.iter().copied());
    out.capped.extend(b.capped.iter().copied());
    for (ca, cb) in out.histograms.iter_mut().zip(&b.histograms) {
        for (ha, hb) in ca.iter_mut().zip(cb) {
            for (&k, &c) in hb {
                *ha.entry(k).or_default() += c;
            }
        }
    }
    out.raw = match (&a.raw, &b.raw) {
        (Some(x), Some(y)) => {
            let mut v = x.clone();
            v.extend(y.iter().copied());
            v.sort_by_key(|(s, r)| (*s, r.replicate, r.checkpoint, r.watch));
            Some(v)
        }
        _ => None,
    };
    Ok(out)
}

/// An empty result for a configuration, the identity for merging.
pub fn empty_results(config: &SimConfig) -> SimEstimates {
    SimEstimates {
        model: config.model.clone(),
        start: config.start.clone(),
        checkpoints: config.checkpoints.clone(),
        watch: config.watch.clone(),
        shards: BTreeSet::new(),
        histograms: vec![vec![BTreeMap::new(); config.watch.len()]; config.checkpoints.len()],
        capped: BTreeSet::new(),
        raw: config.keep_raw.then(Vec::new),
    }
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finaliser
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn root_label(seed: u64, replicate: u64) -> u64 {
    mix(mix(seed) ^ replicate.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

fn child_label(parent: u64, birth: u64) -> u64 {
    mix(parent ^ mix(birth.wrapping_add(1)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Event {
    time: f64,
    slot: usize,
}

impl Eq for Event {}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, ties by slot
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.slot.cmp(&self.slot))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Jump distribution a(z)/a as a cumulative table.
struct JumpTable {
    offsets: Vec<Vec<i64>>,
    cumulative: Vec<f64>,
}

impl JumpTable {
    fn new(model: &CbrwModel) -> Self {
        let a = model.kernel().total_rate();
        let mut acc = 0.0;
        let mut offsets = Vec::new();
        let mut cumulative = Vec::new();
        for (z, r) in model.kernel().support() {
            acc += r / a;
            offsets.push(z.coords().to_vec());
            cumulative.push(acc);
        }
        *cumulative.last_mut().unwrap() = 1.0;
        JumpTable { offsets, cumulative }
    }

    fn pick(&self, u: f64) -> &[i64] {
        let i = self.cumulative.partition_point(|&c| c <= u);
        &self.offsets[i.min(self.offsets.len() - 1)]
    }
}

struct Population {
    d: usize,
    pos: Vec<i64>,
    rng: Vec<ChaCha8Rng>,
    label: Vec<u64>,
    children: Vec<u64>,
    live: Vec<bool>,
    free: Vec<usize>,
    alive: usize,
}

impl Population {
    fn spawn(&mut self, at: &[i64], label: u64) -> usize {
        let rng = ChaCha8Rng::seed_from_u64(label);
        self.alive += 1;
        if let Some(slot) = self.free.pop() {
            self.pos[slot * self.d..(slot + 1) * self.d].copy_from_slice(at);
            self.rng[slot] = rng;
            self.label[slot] = label;
            self.children[slot] = 0;
            self.live[slot] = true;
            slot
        } else {
            self.pos.extend_from_slice(at);
            self.rng.push(rng);
            self.label.push(label);
            self.children.push(0);
            self.live.push(true);
            self.rng.len() - 1
        }
    }

    fn at_origin(&self, slot: usize) -> bool {
        self.pos[slot * self.d..(slot + 1) * self.d].iter().all(|&c| c == 0)
    }
}

/// Outcome of one replicate: counts per [checkpoint][watch], or None if
/// the particle cap was hit.
fn run_replicate(config: &SimConfig, jumps: &JumpTable, replicate: u64) -> Option<Vec<Vec<u64>>> {
    let model = &config.model;
    let d = model.dimension();
    let a = model.kernel().total_rate();
    let alpha = model.alpha();
    let law = model.offspring();
    let mut pop = Population {
        d,
        pos: Vec::new(),
        rng: Vec::new(),
        label: Vec::new(),
        children: Vec::new(),
        live: Vec::new(),
        free: Vec::new(),
        alive: 0,
    };
    let mut heap = BinaryHeap::new();
    let root = pop.spawn(config.start.coords(), root_label(config.seed, replicate));
    let hold = |pop: &mut Population, slot: usize| -> f64 {
        let rate = if pop.at_origin(slot) { 1.0 } else { a };
        let e: f64 = pop.rng[slot].sample(Exp1);
        e / rate
    };
    let first = hold(&mut pop, root);
    heap.push(Event { time: first, slot: root });

    let mut out = vec![vec![0u64; config.watch.len()]; config.checkpoints.len()];
    let mut next_checkpoint = 0;
    let record = |pop: &Population, row: &mut Vec<u64>| {
        if pop.alive == 0 {
            return;
        }
        for (w, y) in config.watch.iter().enumerate() {
            let yc = y.coords();
            let mut count = 0u64;
            for slot in 0..pop.rng.len() {
                if pop.live[slot] && &pop.pos[slot * d..(slot + 1) * d] == yc {
                    count += 1;
                }
            }
            row[w] = count;
        }
    };

    loop {
        let next_time = heap.peek().map_or(f64::INFINITY, |e| e.time);
        while next_checkpoint < config.checkpoints.len() && config.checkpoints[next_checkpoint] < next_time {
            record(&pop, &mut out[next_checkpoint]);
            next_checkpoint += 1;
        }
        if next_checkpoint == config.checkpoints.len() || heap.is_empty() {
            break;
        }
        let Event { time, slot } = heap.pop().unwrap();
        let origin = pop.at_origin(slot);
        let u: f64 = pop.rng[slot].random();
        if origin && u < alpha {
            let v: f64 = pop.rng[slot].random();
            let xi = law.sample_inverse(v);
            let parent = pop.label[slot];
            let born = pop.children[slot];
            pop.free.push(slot);
            pop.live[slot] = false;
            pop.alive -= 1;
            if pop.alive as u64 + xi > config.particle_cap as u64 {
                return None;
            }
            let zero = vec![0i64; d];
            for k in 0..xi {
                let child = pop.spawn(&zero, child_label(parent, born + k));
                let dt = hold(&mut pop, child);
                heap.push(Event { time: time + dt, slot: child });
            }
        } else {
            // jump; at the origin reuse u conditioned on u >= α
            let w = if origin { (u - alpha) / (1.0 - alpha) } else { u };
            let z = jumps.pick(w);
            for (p, dz) in pop.pos[slot * d..(slot + 1) * d].iter_mut().zip(z) {
                *p += dz;
            }
            let dt = hold(&mut pop, slot);
            heap.push(Event { time: time + dt, slot });
        }
    }
    Some(out)
}

/// Simulates `config.replicates` independent replicates and pools them.
pub fn simulate_population(config: &SimConfig) -> Result<SimEstimates> {
    config.validate()?;
    let jumps = JumpTable::new(&config.model);
    let first = config.first_replicate;
    let last = first + config.replicates;
    let chunks: Vec<(u64, u64)> = (first..last)
        .step_by(CHUNK as usize)
        .map(|s| (s, (s + CHUNK).min(last)))
        .collect();
    let partial: Vec<SimEstimates> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut res = empty_results(config);
            for r in lo..hi {
                match run_replicate(config, &jumps, r) {
                    Some(counts) => {
                        for (c, row) in counts.iter().enumerate() {
                            for (w, &k) in row.iter().enumerate() {
                                *res.histograms[c][w].entry(k).or_default() += 1;
                                if let Some(raw) = res.raw.as_mut() {
                                    raw.push((
                                        config.seed,
                                        RawRecord {
                                            replicate: r,
                                            checkpoint: c,
                                            watch: w,
                                            count: k,
                                        },
                                    ));
                                }
                            }
                        }
                    }
                    None => {
                        res.capped.insert((config.seed, r));
                    }
                }
            }
            res
        })
        .collect();
    let mut total = empty_results(config);
    for p in &partial {
        for (ct, cp) in total.histograms.iter_mut().zip(&p.histograms) {
            for (ht, hp) in ct.iter_mut().zip(cp) {
                for (&k, &c) in hp {
                    *ht.entry(k).or_default() += c;
                }
            }
        }
        total.capped.extend(p.capped.iter().copied());
        if let (Some(t), Some(r)) = (total.raw.as_mut(), p.raw.as_ref()) {
            t.extend(r.iter().copied());
        }
    }
    total.shards.insert((config.seed, first, config.replicates));
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{validate_kernel, OffspringLaw};

    fn r1() -> CbrwModel {
        let raw = BTreeMap::from([(Site::from(1), 0.5), (Site::from(-1), 0.5)]);
        CbrwModel::new(
            validate_kernel(&raw, 1).unwrap(),
            0.5,
            OffspringLaw::table(vec![0.55, 0.0, 0.45]).unwrap(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn labels_are_distinct_for_siblings() {
        let p = root_label(7, 0);
        assert_ne!(child_label(p, 0), child_label(p, 1));
        assert_ne!(root_label(7, 0), root_label(7, 1));
        assert_ne!(root_label(7, 0), root_label(8, 0));
    }

    #[test]
    fn time_zero_sees_only_the_start() {
        let cfg = SimConfig::new(r1(), Site::from(1), vec![0.0], vec![Site::from(0), Site::from(1)], 50, 3);
        let res = simulate_population(&cfg).unwrap();
        assert_eq!(res.histograms[0][0], BTreeMap::from([(0, 50)]));
        assert_eq!(res.histograms[0][1], BTreeMap::from([(1, 50)]));
    }

    #[test]
    fn identical_seeds_are_reproducible() {
        let cfg = SimConfig::new(r1(), Site::from(0), vec![1.0, 5.0], vec![Site::from(0)], 300, 11);
        assert_eq!(simulate_population(&cfg).unwrap(), simulate_population(&cfg).unwrap());
    }

    #[test]
    fn overlapping_shards_cannot_merge() {
        let cfg = SimConfig::new(r1(), Site::from(0), vec![1.0], vec![Site::from(0)], 10, 1);
        let a = simulate_population(&cfg).unwrap();
        assert!(matches!(merge_results(&a, &a), Err(Error::ConfigMismatch(_))));
    }
}
