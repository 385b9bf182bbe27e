//! Plant model of the regulated lake: hourly mass balance, level/storage
//! conversion, release saturation and daily aggregation.
//!
//! Units are carried as plain `f64`: storage in m³, level in m relative to the
//! gauge reference, flows in m³/s, time steps of one hour.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const HOURS_PER_DAY: usize = 24;

/// Physical constants of the lake and of the outlet structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LakeParams {
    /// Regulated surface, m².
    pub surface_area: f64,
    /// Level at zero regulated storage, m.
    pub level_offset: f64,
    /// Level above which the lakeside floods, m.
    pub flood_threshold: f64,
    /// Level below which the lake is considered dry, m.
    pub dry_threshold: f64,
    /// Minimum environmental flow, m³/s.
    pub mef: f64,
    /// Rating-curve coefficient `k` in `k (h + n)^e`.
    pub sat_k: f64,
    /// Rating-curve level shift `n`, m.
    pub sat_n: f64,
    /// Rating-curve exponent `e`.
    pub sat_e: f64,
}

impl Default for LakeParams {
    /// Lake Como constants.
    fn default() -> Self {
        Self {
            surface_area: 145_900_000.0,
            level_offset: -0.4,
            flood_threshold: 1.1,
            dry_threshold: -0.2,
            mef: 10.0,
            sat_k: 33.37,
            sat_n: 2.5,
            sat_e: 2.015,
        }
    }
}

impl LakeParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.surface_area,
            self.level_offset,
            self.flood_threshold,
            self.dry_threshold,
            self.mef,
            self.sat_k,
            self.sat_n,
            self.sat_e,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(domain("lake parameters must be finite"));
        }
        if self.surface_area <= 0.0 {
            return Err(domain("surface_area must be positive"));
        }
        if self.sat_k <= 0.0 || self.sat_e <= 0.0 {
            return Err(domain("sat_k and sat_e must be positive"));
        }
        if self.mef < 0.0 {
            return Err(domain("mef must be nonnegative"));
        }
        if self.dry_threshold >= self.flood_threshold {
            return Err(domain("dry_threshold must lie below flood_threshold"));
        }
        if self.level_offset >= self.dry_threshold {
            return Err(domain("level_offset must lie below dry_threshold"));
        }
        Ok(())
    }

    pub fn level_of_storage(&self, storage: f64) -> Result<f64> {
        if !(storage >= 0.0) {
            return Err(domain(format!("storage must be nonnegative, got {storage}")));
        }
        Ok(self.level_of_storage_unchecked(storage))
    }

    #[inline]
    pub(crate) fn level_of_storage_unchecked(&self, storage: f64) -> f64 {
        storage / self.surface_area + self.level_offset
    }

    pub fn storage_of_level(&self, level: f64) -> Result<f64> {
        if !(level >= self.level_offset) {
            return Err(domain(format!(
                "level {level} lies below the zero-storage offset {}",
                self.level_offset
            )));
        }
        Ok((level - self.level_offset) * self.surface_area)
    }

    /// Storage at the flood threshold.
    pub fn flood_storage(&self) -> f64 {
        (self.flood_threshold - self.level_offset) * self.surface_area
    }

    /// Storage at the dry threshold.
    pub fn dry_storage(&self) -> f64 {
        (self.dry_threshold - self.level_offset) * self.surface_area
    }

    fn rating_curve(&self, level: f64) -> f64 {
        // h + n > 0 wherever this is evaluated for physical parameters; guard the
        // power against a negative base anyway.
        self.sat_k * (level + self.sat_n).max(0.0).powf(self.sat_e)
    }

    /// Minimum and maximum feasible release at a given level.
    pub fn release_bounds(&self, level: f64) -> ReleaseBounds {
        if level <= self.level_offset {
            return ReleaseBounds { min: 0.0, max: 0.0 };
        }
        let max = self.rating_curve(level);
        let min = if level <= self.flood_threshold {
            self.mef.min(max)
        } else {
            max
        };
        ReleaseBounds { min, max }
    }
}

/// Interval of physically feasible releases, m³/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReleaseBounds {
    pub min: f64,
    pub max: f64,
}

impl ReleaseBounds {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min <= max) {
            return Err(domain(format!("inverted release bounds ({min}, {max})")));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn saturate(&self, command: f64) -> f64 {
        command.clamp(self.min, self.max)
    }
}

/// Clamp a commanded release into `bounds = (r_min, r_max)`.
pub fn saturate_release(bounds: (f64, f64), command: f64) -> Result<f64> {
    Ok(ReleaseBounds::new(bounds.0, bounds.1)?.saturate(command))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LakeState {
    /// Regulated storage, m³.
    pub storage: f64,
    /// Hours elapsed since the start of the scenario.
    pub time_index: usize,
}

impl LakeState {
    pub fn new(storage: f64, time_index: usize) -> Result<Self> {
        if !(storage >= 0.0) || !storage.is_finite() {
            return Err(domain(format!("storage must be finite and nonnegative, got {storage}")));
        }
        Ok(Self {
            storage,
            time_index,
        })
    }

    pub fn level(&self, params: &LakeParams) -> f64 {
        params.level_of_storage_unchecked(self.storage)
    }
}

/// Advance the lake by one hour.
///
/// Release bounds are evaluated at the level at the start of the hour. The
/// command is saturated into those bounds; if the resulting release would
/// empty the lake within the hour, the applied release is reduced so that the
/// storage lands exactly at zero. Returns the new state and the applied
/// release.
pub fn step_hourly(
    params: &LakeParams,
    state: LakeState,
    inflow: f64,
    command: f64,
) -> Result<(LakeState, f64)> {
    if !(inflow >= 0.0) || !inflow.is_finite() {
        return Err(domain(format!("inflow must be finite and nonnegative, got {inflow}")));
    }
    if !command.is_finite() {
        return Err(domain("release command must be finite"));
    }
    let bounds = params.release_bounds(state.level(params));
    let (storage, release) = mass_balance(state.storage, inflow, bounds.saturate(command), SECONDS_PER_HOUR);
    Ok((
        LakeState {
            storage,
            time_index: state.time_index + 1,
        },
        release,
    ))
}

/// Storage after `dt` seconds of constant flows, and the release actually
/// delivered: it is cut back if the lake would run empty.
#[inline]
pub(crate) fn mass_balance(storage: f64, inflow: f64, release: f64, dt: f64) -> (f64, f64) {
    let next = storage + dt * (inflow - release);
    if next < 0.0 {
        (0.0, storage / dt + inflow)
    } else {
        (next, release)
    }
}

/// Net storage change and mean release of one day of hourly flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DailyAggregate {
    pub storage_delta: f64,
    pub mean_release: f64,
}

pub fn aggregate_daily(hourly_inflows: &[f64], hourly_releases: &[f64]) -> Result<DailyAggregate> {
    if hourly_inflows.len() != HOURS_PER_DAY || hourly_releases.len() != HOURS_PER_DAY {
        return Err(domain(format!(
            "daily aggregation needs {HOURS_PER_DAY} hourly values, got {} inflows and {} releases",
            hourly_inflows.len(),
            hourly_releases.len()
        )));
    }
    let q: f64 = hourly_inflows.iter().sum();
    let r: f64 = hourly_releases.iter().sum();
    Ok(DailyAggregate {
        storage_delta: SECONDS_PER_HOUR * (q - r),
        mean_release: r / HOURS_PER_DAY as f64,
    })
}
