//! Mergeable streaming summaries.
//!
//! Every state here follows the same life cycle: `update` absorbs one item,
//! `merge` combines two states built on disjoint parts of a stream, and
//! `finalize` (or a query method) answers from the state alone. States are
//! plain values; workers own their own copy and only ever meet via `merge`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{MonitorError, Result};
use crate::kll::KllState;
use crate::seed;

/// Count, sum and sum of squares of a numeric stream.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentsState {
    pub tot: u64,
    pub sum: f64,
    pub sumsq: f64,
}

/// Finalized moments. `mean` and `std` are `None` for an empty state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentsSummary {
    pub count: u64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl MomentsState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, x: f64) -> Result<()> {
        if !x.is_finite() {
            return Err(MonitorError::InvalidValue(format!(
                "moments sketch only accepts finite values, got {x}"
            )));
        }
        self.tot += 1;
        self.sum += x;
        self.sumsq += x * x;
        Ok(())
    }

    pub fn merge(&mut self, other: &MomentsState) {
        self.tot += other.tot;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
    }

    /// Population (1/n) standard deviation. Multiply the variance by
    /// `n / (n - 1)` for the sample convention.
    pub fn finalize(&self) -> MomentsSummary {
        if self.tot == 0 {
            return MomentsSummary {
                count: 0,
                mean: None,
                std: None,
            };
        }
        let n = self.tot as f64;
        let mean = self.sum / n;
        let var = (self.sumsq / n - mean * mean).max(0.0);
        MomentsSummary {
            count: self.tot,
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.tot == 0 && (self.sum != 0.0 || self.sumsq != 0.0) {
            return Err(MonitorError::parse("tot", "empty state with nonzero sums"));
        }
        if !self.sum.is_finite() || !self.sumsq.is_finite() || self.sumsq < 0.0 {
            return Err(MonitorError::parse("sumsq", "sums must be finite, sumsq >= 0"));
        }
        Ok(())
    }
}

/// Occurrence counts per category label.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoricalCountState {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl CategoricalCountState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, label: &str) {
        *self.counts.entry(label.to_owned()).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn merge(&mut self, other: &CategoricalCountState) {
        for (label, c) in &other.counts {
            *self.counts.entry(label.clone()).or_insert(0) += c;
        }
        self.total += other.total;
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Empirical probability of `label`; zero for unseen labels or an empty state.
    pub fn frequency(&self, label: &str) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        self.counts.get(label).copied().unwrap_or(0) as f64 / self.total as f64
    }

    pub fn normalized(&self) -> BTreeMap<String, f64> {
        self.counts
            .keys()
            .map(|k| (k.clone(), self.frequency(k)))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let sum: u64 = self.counts.values().sum();
        if sum != self.total {
            return Err(MonitorError::parse(
                "total",
                format!("total {} does not equal sum of counts {sum}", self.total),
            ));
        }
        Ok(())
    }
}

/// Uniform reservoir sample (Algorithm R).
///
/// Replacement decisions are derived from `(seed, position)` so a state that
/// went through JSON keeps producing the same sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReservoirState<T> {
    pub capacity: usize,
    pub seen: u64,
    #[serde(rename = "seed")]
    pub rng_seed: u64,
    pub items: Vec<T>,
}

impl<T: Clone> ReservoirState<T> {
    pub fn new(capacity: usize, rng_seed: u64) -> Self {
        Self {
            capacity,
            seen: 0,
            rng_seed,
            items: Vec::with_capacity(capacity.min(1024)),
        }
    }

    pub fn update(&mut self, x: T) {
        self.seen += 1;
        if self.items.len() < self.capacity {
            self.items.push(x);
            return;
        }
        let j = seed::below(seed::derive(self.rng_seed, &[self.seen]), self.seen) as usize;
        if j < self.capacity {
            self.items[j] = x;
        }
    }

    /// Merge two reservoirs of equal capacity.
    ///
    /// When both streams fit, the result is the concatenation. Otherwise each
    /// output slot is filled from `self` with probability proportional to the
    /// part of `self`'s stream not yet represented (hypergeometric split),
    /// picking uniformly without replacement inside the chosen reservoir.
    pub fn merge(&mut self, other: &ReservoirState<T>) -> Result<()> {
        if self.capacity != other.capacity {
            return Err(MonitorError::Incompatible(format!(
                "reservoir capacities differ: {} vs {}",
                self.capacity, other.capacity
            )));
        }
        let total_seen = self.seen + other.seen;
        if self.items.len() + other.items.len() <= self.capacity
            && self.items.len() as u64 == self.seen
            && other.items.len() as u64 == other.seen
        {
            self.items.extend(other.items.iter().cloned());
            self.seen = total_seen;
            return Ok(());
        }

        let out_len = (self.capacity as u64).min(total_seen) as usize;
        let mut left = self.items.clone();
        let mut right = other.items.clone();
        let (mut left_rest, mut right_rest) = (self.seen, other.seen);
        let base = seed::derive(self.rng_seed, &[other.rng_seed, self.seen, other.seen]);
        let mut out = Vec::with_capacity(out_len);
        for slot in 0..out_len as u64 {
            let h = seed::derive(base, &[slot]);
            let take_left = seed::below(h, left_rest + right_rest) < left_rest;
            let pool = if take_left { &mut left } else { &mut right };
            let pick = seed::below(seed::mix64(h), pool.len() as u64) as usize;
            out.push(pool.swap_remove(pick));
            if take_left {
                left_rest -= 1;
            } else {
                right_rest -= 1;
            }
        }
        self.items = out;
        self.seen = total_seen;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let expect = (self.capacity as u64).min(self.seen) as usize;
        if self.items.len() != expect {
            return Err(MonitorError::parse(
                "items",
                format!("expected {expect} retained items, found {}", self.items.len()),
            ));
        }
        Ok(())
    }
}

/// Tagged serialized form of any sketch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SketchState {
    Moments(MomentsState),
    Categorical(CategoricalCountState),
    Reservoir(ReservoirState<serde_json::Value>),
    Kll(KllState),
}

impl SketchState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parse and check the structural invariants of the state.
    pub fn from_json(doc: &str) -> Result<Self> {
        let state: SketchState = serde_json::from_str(doc)?;
        match &state {
            SketchState::Moments(m) => m.validate()?,
            SketchState::Categorical(c) => c.validate()?,
            SketchState::Reservoir(r) => r.validate()?,
            SketchState::Kll(k) => k.validate()?,
        }
        Ok(state)
    }
}
