//! Cycle ingestion, the canonical cycle schema, and grid utilities.
//!
//! Benchmark cycling data ships in heterogeneous containers; this module
//! consumes *CSV exports* of them through a [`ColumnMap`] that names the
//! relevant columns and their units, and emits validated [`CycleData`] on a
//! uniform time grid. Downstream tools exchange cycles exclusively through
//! the canonical CSV schema:
//!
//! ```text
//! t_s,current_a,voltage_v,temp_c,ambient_c
//! ```
//!
//! UTF-8, `.` decimal separator, one row per sample, floats printed with
//! round-trip-exact formatting. Capacity, initial SOC and the cycle index
//! travel in configuration, not in the file.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::KeyValueFile;
use crate::error::{Error, Result};
use crate::model::{positive_finite, soc_profile, CycleData, Sample, GRID_TOLERANCE};

/// Exact header line of the canonical cycle CSV.
pub const CANONICAL_HEADER: &str = "t_s,current_a,voltage_v,temp_c,ambient_c";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeUnit {
    S,
    Ms,
    H,
}

impl std::str::FromStr for TimeUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" => Ok(TimeUnit::S),
            "ms" => Ok(TimeUnit::Ms),
            "h" => Ok(TimeUnit::H),
            other => Err(Error::Config(format!(
                "unknown time unit {other:?} (expected s, ms or h)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TempUnit {
    C,
    K,
}

impl std::str::FromStr for TempUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "C" | "c" => Ok(TempUnit::C),
            "K" | "k" => Ok(TempUnit::K),
            other => Err(Error::Config(format!(
                "unknown temperature unit {other:?} (expected C or K)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurrentSign {
    AsIs,
    Flipped,
}

impl std::str::FromStr for CurrentSign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_is" => Ok(CurrentSign::AsIs),
            "flipped" => Ok(CurrentSign::Flipped),
            other => Err(Error::Config(format!(
                "unknown current_sign {other:?} (expected as_is or flipped)"
            ))),
        }
    }
}

/// Where a cycle's ambient temperature comes from.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum AmbientSource {
    Column(String),
    /// Constant ambient in deg C (chamber setpoint).
    Constant(f64),
}

/// Mapping from a dataset's CSV export onto the model's channels.
///
/// The mapping file is flat key-value with exactly these keys:
///
/// ```text
/// time_col      = Time            # column names in the export header
/// current_col   = Current_measured
/// voltage_col   = Voltage_measured
/// temp_col      = Temperature_measured
/// ambient_col   = ...             # exactly one of ambient_col /
/// ambient_const = 24              # ambient_const must be present
/// time_unit     = s               # s | ms | h
/// temp_unit     = C               # C | K
/// current_sign  = as_is           # as_is | flipped
/// q0_ah         = 2.0
/// soc0          = 0.0
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColumnMap {
    pub time_col: String,
    pub current_col: String,
    pub voltage_col: String,
    pub temp_col: String,
    pub ambient: AmbientSource,
    pub time_unit: TimeUnit,
    pub temp_unit: TempUnit,
    pub current_sign: CurrentSign,
    pub q0_ah: f64,
    pub soc0: f64,
}

impl ColumnMap {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let kv = KeyValueFile::load(path)?;
        let map = Self::from_kv(&kv)?;
        kv.reject_unknown()?;
        Ok(map)
    }

    pub fn from_kv(kv: &KeyValueFile) -> Result<Self> {
        let ambient = match (kv.get("ambient_col"), kv.get("ambient_const")) {
            (Some(col), None) => AmbientSource::Column(col.to_string()),
            (None, Some(raw)) => {
                let value: f64 = raw.parse().map_err(|_| {
                    Error::Config(format!(
                        "{}: ambient_const has unparseable value {raw:?}",
                        kv.source()
                    ))
                })?;
                AmbientSource::Constant(value)
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(format!(
                    "{}: ambient_col and ambient_const are mutually exclusive",
                    kv.source()
                )))
            }
            (None, None) => {
                return Err(Error::Config(format!(
                    "{}: one of ambient_col or ambient_const is required",
                    kv.source()
                )))
            }
        };
        let q0_ah: f64 = kv.require_parsed("q0_ah")?;
        if !positive_finite(q0_ah) {
            return Err(Error::InvalidCapacity(q0_ah));
        }
        let soc0: f64 = kv.get_parsed("soc0")?.unwrap_or(0.0);
        if !(0.0..=1.0).contains(&soc0) {
            return Err(Error::InvalidSoc(soc0));
        }
        Ok(ColumnMap {
            time_col: kv.require("time_col")?.to_string(),
            current_col: kv.require("current_col")?.to_string(),
            voltage_col: kv.require("voltage_col")?.to_string(),
            temp_col: kv.require("temp_col")?.to_string(),
            ambient,
            time_unit: kv.require_parsed("time_unit")?,
            temp_unit: kv.require_parsed("temp_unit")?,
            current_sign: kv.get_parsed("current_sign")?.unwrap_or(CurrentSign::AsIs),
            q0_ah,
            soc0,
        })
    }
}

/// What happened while ingesting one file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    /// SOC samples the default bounds clamped (a data-quality signal:
    /// current noise or a misestimated capacity).
    pub clamp_events: usize,
    /// Final nominal sampling interval in seconds.
    pub dt_nominal: f64,
    /// Largest relative grid deviation observed *before* any resampling.
    pub dt_jitter_max: f64,
    pub warnings: Vec<String>,
}

fn convert_time(raw: f64, unit: TimeUnit) -> f64 {
    match unit {
        TimeUnit::S => raw,
        TimeUnit::Ms => raw / 1000.0,
        TimeUnit::H => raw * 3600.0,
    }
}

fn convert_temp(raw: f64, unit: TempUnit) -> f64 {
    match unit {
        TempUnit::C => raw,
        TempUnit::K => raw - 273.15,
    }
}

/// Round to three significant digits (nominal-dt derivation rule).
fn round_3_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let magnitude = 10f64.powi(x.abs().log10().floor() as i32 - 2);
    (x / magnitude).round() * magnitude
}

/// Median of consecutive time differences.
fn median_dt(samples: &[Sample]) -> f64 {
    let mut diffs: Vec<f64> = samples.windows(2).map(|w| w[1].t - w[0].t).collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = diffs.len();
    if n % 2 == 1 {
        diffs[n / 2]
    } else {
        0.5 * (diffs[n / 2 - 1] + diffs[n / 2])
    }
}

/// Linear interpolation of all channels onto the grid `t = 0, dt, 2dt, ...`
/// spanning the input; queries are clamped to the original span so the last
/// grid point never extrapolates.
fn resample_samples(samples: &[Sample], dt: f64) -> Result<Vec<Sample>> {
    if !positive_finite(dt) {
        return Err(Error::InvalidInterval(dt));
    }
    let t0 = samples[0].t;
    let t_last = samples[samples.len() - 1].t;
    let span = t_last - t0;
    if span < 2.0 * dt {
        return Err(Error::InvalidInterval(dt));
    }
    let n_out = (span / dt + 1e-9).floor() as usize + 1;
    let mut out = Vec::with_capacity(n_out);
    let mut seg = 0usize;
    for k in 0..n_out {
        let tq = (t0 + k as f64 * dt).min(t_last);
        while seg + 2 < samples.len() && samples[seg + 1].t < tq {
            seg += 1;
        }
        let (a, b) = (&samples[seg], &samples[seg + 1]);
        let w = (tq - a.t) / (b.t - a.t);
        out.push(Sample::new(
            k as f64 * dt,
            a.i + w * (b.i - a.i),
            a.v + w * (b.v - a.v),
            a.ts + w * (b.ts - a.ts),
            a.ta + w * (b.ta - a.ta),
        ));
    }
    Ok(out)
}

/// Ingest one cycle from a dataset CSV export.
///
/// Rows that fail to parse and rows that break time monotonicity are dropped
/// and counted, not fatal. The result is resampled onto a uniform grid when
/// the observed jitter exceeds the 1% contract (or unconditionally when
/// `resample_dt` is given), time is rebased to start at zero, and the cycle
/// is fully validated.
pub fn ingest_csv(
    path: impl AsRef<Path>,
    map: &ColumnMap,
    cycle_index: u32,
) -> Result<(CycleData, IngestReport)> {
    ingest_csv_with(path, map, cycle_index, None)
}

/// [`ingest_csv`] with an explicit resampling interval.
pub fn ingest_csv_with(
    path: impl AsRef<Path>,
    map: &ColumnMap,
    cycle_index: u32,
    resample_dt: Option<f64>,
) -> Result<(CycleData, IngestReport)> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => Error::io(
                display.clone(),
                std::io::Error::other(e.to_string()),
            ),
            _ => Error::Schema(format!("{display}: {e}")),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{display}: {e}")))?
        .clone();
    let find = |name: &str, mapped_by: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                mapped_by: mapped_by.to_string(),
                path: display.clone(),
            })
    };
    let col_t = find(&map.time_col, "time_col")?;
    let col_i = find(&map.current_col, "current_col")?;
    let col_v = find(&map.voltage_col, "voltage_col")?;
    let col_ts = find(&map.temp_col, "temp_col")?;
    let col_ta = match &map.ambient {
        AmbientSource::Column(name) => Some(find(name, "ambient_col")?),
        AmbientSource::Constant(_) => None,
    };

    let mut warnings = Vec::new();
    let mut rows_read = 0usize;
    let mut rows_dropped = 0usize;
    let mut samples: Vec<Sample> = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::Schema(format!("{display}: {e}")))?;
        rows_read += 1;
        let line = record
            .position()
            .map(|p| p.line())
            .unwrap_or(rows_read as u64 + 1);
        let cell = |idx: usize, what: &str| -> std::result::Result<f64, String> {
            let raw = record
                .get(idx)
                .ok_or_else(|| format!("line {line}: missing {what} cell; row dropped"))?;
            raw.parse::<f64>().map_err(|_| {
                format!("line {line}: unparseable {what} value {raw:?}; row dropped")
            })
        };
        let parsed = (|| -> std::result::Result<Sample, String> {
            let t = convert_time(cell(col_t, "time")?, map.time_unit);
            let mut i = cell(col_i, "current")?;
            if map.current_sign == CurrentSign::Flipped {
                i = -i;
            }
            let v = cell(col_v, "voltage")?;
            let ts = convert_temp(cell(col_ts, "temperature")?, map.temp_unit);
            let ta = match (&map.ambient, col_ta) {
                (_, Some(idx)) => convert_temp(cell(idx, "ambient")?, map.temp_unit),
                (AmbientSource::Constant(value), None) => *value,
                _ => unreachable!(),
            };
            let s = Sample::new(t, i, v, ts, ta);
            if [t, i, v, ts, ta].iter().any(|x| !x.is_finite()) {
                return Err(format!("line {line}: non-finite value; row dropped"));
            }
            Ok(s)
        })();
        match parsed {
            Ok(sample) => {
                if let Some(last) = samples.last() {
                    if sample.t <= last.t {
                        rows_dropped += 1;
                        warnings.push(format!(
                            "line {line}: non-monotonic time {} after {}; row dropped",
                            sample.t, last.t
                        ));
                        continue;
                    }
                }
                samples.push(sample);
            }
            Err(why) => {
                rows_dropped += 1;
                warnings.push(why);
            }
        }
    }

    if samples.len() < 2 {
        return Err(Error::EmptyCycle { path: display });
    }

    // Rebase time to cycle start.
    let t0 = samples[0].t;
    for s in &mut samples {
        s.t -= t0;
    }

    let dt_raw = median_dt(&samples);
    let dt_guess = round_3_sig(dt_raw);
    if !positive_finite(dt_guess) {
        return Err(Error::Schema(format!(
            "{display}: degenerate time column (median step {dt_raw})"
        )));
    }
    let dt_jitter_max = samples
        .windows(2)
        .map(|w| ((w[1].t - w[0].t) - dt_guess).abs() / dt_guess)
        .fold(0.0, f64::max);

    let (samples, dt_final) = match resample_dt {
        Some(dt) => {
            warnings.push(format!("resampled onto uniform grid at dt = {dt} s"));
            (resample_samples(&samples, dt)?, dt)
        }
        None if dt_jitter_max > GRID_TOLERANCE => {
            warnings.push(format!(
                "grid jitter {:.3}% exceeds {:.0}% tolerance; resampled at dt = {} s",
                dt_jitter_max * 100.0,
                GRID_TOLERANCE * 100.0,
                dt_guess
            ));
            (resample_samples(&samples, dt_guess)?, dt_guess)
        }
        None => (samples, dt_guess),
    };

    let cycle = CycleData::new(
        samples,
        dt_final,
        map.q0_ah,
        map.soc0,
        cycle_index,
        BTreeMap::new(),
    )?;

    let clamp_events = soc_profile(&cycle)?.clamp_events;
    if clamp_events > 0 {
        warnings.push(format!(
            "SOC clamped at {clamp_events} samples; check q0_ah and soc0"
        ));
    }

    let report = IngestReport {
        rows_read,
        rows_dropped,
        clamp_events,
        dt_nominal: dt_final,
        dt_jitter_max,
        warnings,
    };
    Ok((cycle, report))
}

/// Resample a cycle onto a uniform grid with the given interval.
///
/// Time is rebased to start at zero. Already-uniform input resampled at its
/// own dt is a no-op (the grid points coincide with the knots).
pub fn resample_uniform(cycle: &CycleData, dt: f64) -> Result<CycleData> {
    let samples = resample_samples(cycle.samples(), dt)?;
    CycleData::new(
        samples,
        dt,
        cycle.q0(),
        cycle.soc0(),
        cycle.cycle_index(),
        cycle.meta().clone(),
    )
}

/// Capacity fade in percent relative to nominal.
pub fn capacity_fade(q_cycle: f64, q_nominal: f64) -> f64 {
    100.0 * (1.0 - q_cycle / q_nominal)
}

/// Write a cycle in the canonical CSV schema.
pub fn write_canonical_csv(cycle: &CycleData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let mut out = String::with_capacity(cycle.len() * 48);
    out.push_str(CANONICAL_HEADER);
    out.push('\n');
    for s in cycle.samples() {
        out.push_str(&format!("{},{},{},{},{}\n", s.t, s.i, s.v, s.ts, s.ta));
    }
    let mut file =
        std::fs::File::create(path).map_err(|e| Error::io(display.clone(), e))?;
    file.write_all(out.as_bytes())
        .map_err(|e| Error::io(display, e))
}

/// Read a canonical cycle CSV back into [`CycleData`].
///
/// The header must match [`CANONICAL_HEADER`] byte for byte; any malformed
/// row is an error (this is the crate's own schema, so there is nothing to
/// salvage). Capacity, initial SOC and the index come from the caller.
pub fn read_canonical_csv(
    path: impl AsRef<Path>,
    q0_ah: f64,
    soc0: f64,
    cycle_index: u32,
) -> Result<CycleData> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(display.clone(), e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(header) if header == CANONICAL_HEADER => {}
        Some(header) => {
            return Err(Error::Schema(format!(
                "{display}: expected canonical header {CANONICAL_HEADER:?}, got {header:?}"
            )))
        }
        None => return Err(Error::EmptyCycle { path: display }),
    }
    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Schema(format!(
                "{display}:{}: expected 5 fields, got {}",
                lineno + 2,
                fields.len()
            )));
        }
        let mut values = [0.0f64; 5];
        for (slot, raw) in values.iter_mut().zip(&fields) {
            *slot = raw.parse().map_err(|_| {
                Error::Schema(format!(
                    "{display}:{}: unparseable value {raw:?}",
                    lineno + 2
                ))
            })?;
        }
        samples.push(Sample::new(
            values[0], values[1], values[2], values[3], values[4],
        ));
    }
    if samples.len() < 2 {
        return Err(Error::EmptyCycle { path: display });
    }
    let dt = round_3_sig(median_dt(&samples));
    CycleData::new(samples, dt, q0_ah, soc0, cycle_index, BTreeMap::new())
}
