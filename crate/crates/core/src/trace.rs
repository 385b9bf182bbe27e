use serde::Serialize;

use crate::error::{Error, Result};
use crate::hydrology::{LakeParams, SECONDS_PER_HOUR};

/// Realized trajectory of one closed-loop (or open-loop) run.
///
/// `storages[0]` is the initial storage and `storages[t + 1]` the storage at
/// the end of hour `t`; `levels[t]` is the level of `storages[t + 1]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ClosedLoopTrace {
    pub levels: Vec<f64>,
    pub storages: Vec<f64>,
    pub releases: Vec<f64>,
    pub commands: Vec<f64>,
    pub inflows: Vec<f64>,
    pub demands: Vec<f64>,
    /// Hours in which the controller needed the softened dry constraint.
    pub recovery_hours: usize,
}

impl ClosedLoopTrace {
    pub fn with_initial_storage(s0: f64, capacity: usize) -> Self {
        let mut storages = Vec::with_capacity(capacity + 1);
        storages.push(s0);
        Self {
            levels: Vec::with_capacity(capacity),
            storages,
            releases: Vec::with_capacity(capacity),
            commands: Vec::with_capacity(capacity),
            inflows: Vec::with_capacity(capacity),
            demands: Vec::with_capacity(capacity),
            recovery_hours: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.releases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.releases.is_empty()
    }

    pub(crate) fn push(
        &mut self,
        params: &LakeParams,
        storage: f64,
        inflow: f64,
        demand: f64,
        command: f64,
        release: f64,
    ) {
        self.storages.push(storage);
        self.levels.push(params.level_of_storage_unchecked(storage));
        self.inflows.push(inflow);
        self.demands.push(demand);
        self.commands.push(command);
        self.releases.push(release);
    }

    /// `|final - initial - 3600 (sum q - sum r)|` relative to the largest
    /// storage in the trace.
    pub fn conservation_error(&self) -> f64 {
        let (Some(first), Some(last)) = (self.storages.first(), self.storages.last()) else {
            return 0.0;
        };
        let net: f64 = self
            .inflows
            .iter()
            .zip(&self.releases)
            .map(|(q, r)| q - r)
            .sum::<f64>()
            * SECONDS_PER_HOUR;
        let scale = self.storages.iter().fold(1.0f64, |m, s| m.max(s.abs()));
        (last - first - net).abs() / scale
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.len();
        if self.levels.len() != t
            || self.commands.len() != t
            || self.inflows.len() != t
            || self.demands.len() != t
            || self.storages.len() != t + 1
        {
            return Err(Error::Dimension("trace vectors have inconsistent lengths".into()));
        }
        Ok(())
    }
}
