//! Inflow and demand scenarios: the synthetic year, the Gaussian intra-day
//! inflow pulse, and time-series file ingestion.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::hydrology::HOURS_PER_DAY;

/// Hourly inflow and demand over a whole number of days.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub inflow_hourly: Vec<f64>,
    pub demand_hourly: Vec<f64>,
    /// Hour of day at which the series starts.
    pub start_hour: usize,
    pub label: String,
}

impl Scenario {
    pub fn new(inflow_hourly: Vec<f64>, demand_hourly: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        let s = Self {
            inflow_hourly,
            demand_hourly,
            start_hour: 0,
            label: label.into(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.inflow_hourly.len();
        if self.demand_hourly.len() != t {
            return Err(Error::Dimension(format!(
                "inflow has {t} hours but demand has {}",
                self.demand_hourly.len()
            )));
        }
        if !t.is_multiple_of(HOURS_PER_DAY) {
            return Err(domain(format!("scenario length {t} is not a whole number of days")));
        }
        if self.start_hour >= HOURS_PER_DAY {
            return Err(domain("start_hour must be an hour of day"));
        }
        for (name, v) in [("inflow", &self.inflow_hourly), ("demand", &self.demand_hourly)] {
            if let Some(i) = v.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(domain(format!("{name} at hour {i} is {}", v[i])));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inflow_hourly.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inflow_hourly.is_empty()
    }

    pub fn days(&self) -> usize {
        self.len() / HOURS_PER_DAY
    }

    /// The first `hours` hours (a whole number of days).
    pub fn truncated(&self, hours: usize) -> Result<Self> {
        if hours > self.len() || !hours.is_multiple_of(HOURS_PER_DAY) {
            return Err(domain(format!("cannot truncate {} hours to {hours}", self.len())));
        }
        Ok(Self {
            inflow_hourly: self.inflow_hourly[..hours].to_vec(),
            demand_hourly: self.demand_hourly[..hours].to_vec(),
            start_hour: self.start_hour,
            label: self.label.clone(),
        })
    }

    /// Constant inflow and demand.
    pub fn constant(inflow: f64, demand: f64, days: usize) -> Result<Self> {
        Self::new(
            vec![inflow; days * HOURS_PER_DAY],
            vec![demand; days * HOURS_PER_DAY],
            format!("constant q={inflow} w={demand}"),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PulseShape {
    /// `a exp(-b (tau - mid)^2)`: a bell centred on `mid`.
    #[default]
    SquaredExponent,
    /// `a exp(-b (tau - mid))`, with the exponent taken literally.
    LiteralExponent,
}

/// Intra-day inflow pulse added on top of the daily inflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianInflowParams {
    pub amplitude: f64,
    pub decay: f64,
    pub mid_hour: f64,
    pub shape: PulseShape,
}

impl Default for GaussianInflowParams {
    fn default() -> Self {
        Self {
            amplitude: 50.0,
            decay: 0.06,
            mid_hour: 12.0,
            shape: PulseShape::SquaredExponent,
        }
    }
}

impl GaussianInflowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0) || !self.amplitude.is_finite() {
            return Err(domain("pulse amplitude must be finite and nonnegative"));
        }
        if !(self.decay > 0.0) || !self.decay.is_finite() {
            return Err(domain("pulse decay must be positive"));
        }
        if !(0.0..=23.0).contains(&self.mid_hour) {
            return Err(domain("pulse mid_hour must lie in [0, 23]"));
        }
        Ok(())
    }

    /// Pulse value at hour of day `tau`.
    pub fn pulse(&self, tau: f64) -> f64 {
        let d = tau - self.mid_hour;
        match self.shape {
            PulseShape::SquaredExponent => self.amplitude * (-self.decay * d * d).exp(),
            PulseShape::LiteralExponent => self.amplitude * (-self.decay * d).exp(),
        }
    }

    /// Mean of the pulse over the 24 hours of a day.
    pub fn daily_mean(&self) -> f64 {
        (0..HOURS_PER_DAY).map(|t| self.pulse(t as f64)).sum::<f64>() / HOURS_PER_DAY as f64
    }
}

/// Hold each daily value over its 24 hours and add the intra-day pulse, which
/// repeats every day.
pub fn synth_inflow(daily_values: &[f64], pulse: &GaussianInflowParams) -> Result<Vec<f64>> {
    pulse.validate()?;
    if let Some(d) = daily_values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(domain(format!("daily inflow on day {d} is {}", daily_values[d])));
    }
    let add: Vec<f64> = (0..HOURS_PER_DAY).map(|t| pulse.pulse(t as f64)).collect();
    let mut out = Vec::with_capacity(daily_values.len() * HOURS_PER_DAY);
    for &q in daily_values {
        for a in &add {
            let v = q + a;
            if v < 0.0 {
                log::warn!("synthetic inflow {v} clamped at zero");
            }
            out.push(v.max(0.0));
        }
    }
    Ok(out)
}

/// Repeat every daily value over 24 hours.
pub fn expand_daily(daily: &[f64]) -> Vec<f64> {
    daily
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, HOURS_PER_DAY))
        .collect()
}

/// Synthetic daily inflow, m³/s, for day `d` of a 365-day year: a base flow,
/// a broad late-spring snowmelt peak around day 150 and a sharper autumn rain
/// peak around day 305.
///
/// ```text
/// q(d) = 110 + 520 exp(-((d - 150) / 22)^2) + 450 exp(-((d - 305) / 10)^2)
/// ```
///
/// This is an illustrative profile, not a measured record.
pub fn synthetic_daily_inflow(d: usize) -> f64 {
    let d = d as f64;
    110.0 + 520.0 * (-((d - 150.0) / 22.0).powi(2)).exp() + 450.0 * (-((d - 305.0) / 10.0).powi(2)).exp()
}

/// Synthetic irrigation demand, m³/s, peaking mid-July and staying within
/// [30, 250]:
///
/// ```text
/// w(d) = 30 + 220 exp(-((d - 195) / 35)^2)
/// ```
pub fn synthetic_daily_demand(d: usize) -> f64 {
    let d = d as f64;
    30.0 + 220.0 * (-((d - 195.0) / 35.0).powi(2)).exp()
}

/// Options for [`synthetic_year`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SynthOptions {
    pub days: Option<usize>,
    pub pulse: Option<GaussianInflowParams>,
    /// Multiplicative noise amplitude on the daily inflow, with its seed.
    pub jitter: Option<(u64, f64)>,
}

/// The default synthetic scenario.
pub fn synthetic_year(opts: SynthOptions) -> Result<Scenario> {
    let days = opts.days.unwrap_or(365);
    let mut daily_q: Vec<f64> = (0..days).map(synthetic_daily_inflow).collect();
    if let Some((seed, frac)) = opts.jitter {
        if !(0.0..1.0).contains(&frac) {
            return Err(domain("jitter fraction must lie in [0, 1)"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for q in daily_q.iter_mut() {
            *q *= 1.0 + rng.gen_range(-frac..=frac);
        }
    }
    let daily_w: Vec<f64> = (0..days).map(synthetic_daily_demand).collect();
    let inflow = match opts.pulse {
        Some(p) => synth_inflow(&daily_q, &p)?,
        None => expand_daily(&daily_q),
    };
    let label = match opts.pulse {
        Some(_) => "synthetic year with intra-day pulse",
        None => "synthetic year",
    };
    Scenario::new(inflow, expand_daily(&daily_w), label)
}

/// Hourly demand from [`synthetic_daily_demand`], used when only an inflow
/// file is given.
pub fn default_demand(hours: usize) -> Vec<f64> {
    (0..hours / HOURS_PER_DAY)
        .flat_map(|d| std::iter::repeat_n(synthetic_daily_demand(d), HOURS_PER_DAY))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    InflowDaily,
    InflowHourly,
    DemandDaily,
    DemandHourly,
}

impl SeriesKind {
    pub fn header(self) -> [&'static str; 2] {
        match self {
            SeriesKind::InflowDaily | SeriesKind::InflowHourly => ["t", "q_m3s"],
            SeriesKind::DemandDaily | SeriesKind::DemandHourly => ["t", "w_m3s"],
        }
    }

    pub fn is_daily(self) -> bool {
        matches!(self, SeriesKind::InflowDaily | SeriesKind::DemandDaily)
    }
}

/// Read an `index,value` series and return it at hourly resolution.
pub fn load_timeseries(path: &Path, kind: SeriesKind) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, format!("unreadable header: {e}")))?
        .clone();
    let want = kind.header();
    if header.len() != 2 || header[0] != *want[0] || header[1] != *want[1] {
        return Err(parse_err(
            1,
            format!("expected header `{},{}`, found `{}`", want[0], want[1], header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut values = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let idx: usize = rec[0]
            .parse()
            .map_err(|_| parse_err(line, format!("bad index `{}`", &rec[0])))?;
        if idx != row {
            return Err(parse_err(line, format!("index {idx} breaks the contiguous sequence (expected {row})")));
        }
        let v: f64 = rec[1]
            .parse()
            .map_err(|_| parse_err(line, format!("bad value `{}`", &rec[1])))?;
        if !v.is_finite() || v < 0.0 {
            return Err(parse_err(line, format!("flow must be finite and nonnegative, got {v}")));
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(parse_err(2, "series is empty".into()));
    }
    if kind.is_daily() {
        Ok(expand_daily(&values))
    } else if values.len() % HOURS_PER_DAY != 0 {
        Err(parse_err(
            values.len() + 1,
            format!("hourly series has {} rows, not a multiple of 24", values.len()),
        ))
    } else {
        Ok(values)
    }
}

/// Write a series in the format read by [`load_timeseries`].
pub fn write_timeseries(path: &Path, kind: SeriesKind, values: &[f64]) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    let [a, b] = kind.header();
    writeln!(f, "{a},{b}").map_err(io)?;
    for (i, v) in values.iter().enumerate() {
        writeln!(f, "{i},{}", crate::report::fmt_sig(*v)).map_err(io)?;
    }
    f.flush().map_err(io)
}
