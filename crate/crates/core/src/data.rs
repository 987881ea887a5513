//! Hourly series: CSV ingestion, hour-of-day reshaping, 7-day state windows
//! and a seeded synthetic generator.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Days of history in a state window.
pub const WINDOW: usize = 7;
/// Share of windows used for training.
pub const TRAIN_FRACTION: f64 = 0.8;
pub const CSV_HEADER: [&str; 4] = ["timestamp", "load_kw", "wt_kw", "pv_kw"];
const TS_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unexpected header {found:?}, expected timestamp,load_kw,wt_kw,pv_kw")]
    Header { found: Vec<String> },
    #[error("line {line}: {column} is negative ({value})")]
    Negative { line: usize, column: &'static str, value: f64 },
    #[error("line {line}: records must be exactly one hour apart, found {prev} then {next}")]
    Spacing { line: usize, prev: NaiveDateTime, next: NaiveDateTime },
    #[error("no complete day (24 hourly records) in the data")]
    NoCompleteDay,
    #[error("day {0} is incomplete but lies between complete days")]
    InteriorGap(NaiveDate),
    #[error("at least 8 complete days are required to build a state window, found {0}")]
    TooFewDays(usize),
    #[error("{series} hour {hour}: training values are constant ({value}), cannot min-max normalise")]
    ConstantSeries { series: Source, hour: usize, value: f64 },
    #[error("horizon must be at least one day")]
    EmptyHorizon,
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Load,
    Wt,
    Pv,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Load, Source::Wt, Source::Pv];

    pub fn key(self) -> &'static str {
        match self {
            Source::Load => "load",
            Source::Wt => "wt",
            Source::Pv => "pv",
        }
    }

    pub fn of(self, r: &HourlyRecord) -> f64 {
        match self {
            Source::Load => r.load_kw,
            Source::Wt => r.wt_kw,
            Source::Pv => r.pv_kw,
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourlyRecord {
    pub timestamp: NaiveDateTime,
    pub load_kw: f64,
    pub wt_kw: f64,
    pub pv_kw: f64,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.naive_local());
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

/// Reads and validates a CSV file with header `timestamp,load_kw,wt_kw,pv_kw`.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<HourlyRecord>, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    read_csv(file)
}

pub fn read_csv(reader: impl std::io::Read) -> Result<Vec<HourlyRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(DataError::Header { found: header });
    }
    let mut rows: Vec<(usize, HourlyRecord)> = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| DataError::Malformed { line, msg: e.to_string() })?;
        if rec.len() != 4 {
            return Err(DataError::Malformed { line, msg: format!("expected 4 fields, found {}", rec.len()) });
        }
        let timestamp = parse_timestamp(&rec[0])
            .ok_or_else(|| DataError::Malformed { line, msg: format!("bad timestamp `{}`", &rec[0]) })?;
        if timestamp.minute() != 0 || timestamp.second() != 0 {
            return Err(DataError::Malformed { line, msg: format!("timestamp {timestamp} is not on the hour") });
        }
        let mut vals = [0.0; 3];
        for (i, name) in ["load_kw", "wt_kw", "pv_kw"].into_iter().enumerate() {
            let v: f64 = rec[i + 1]
                .parse()
                .map_err(|_| DataError::Malformed { line, msg: format!("{name} `{}` is not a number", &rec[i + 1]) })?;
            if !v.is_finite() {
                return Err(DataError::Malformed { line, msg: format!("{name} is not finite") });
            }
            if v < 0.0 {
                return Err(DataError::Negative { line, column: name, value: v });
            }
            vals[i] = v;
        }
        rows.push((line, HourlyRecord { timestamp, load_kw: vals[0], wt_kw: vals[1], pv_kw: vals[2] }));
    }
    rows.sort_by_key(|(_, r)| r.timestamp);
    for w in rows.windows(2) {
        if w[1].1.timestamp - w[0].1.timestamp != Duration::hours(1) {
            let line = w[0].0.max(w[1].0);
            return Err(DataError::Spacing { line, prev: w[0].1.timestamp, next: w[1].1.timestamp });
        }
    }
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

fn fmt_value(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv(path: impl AsRef<Path>, records: &[HourlyRecord]) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.timestamp.format(TS_FORMAT).to_string(),
            fmt_value(r.load_kw),
            fmt_value(r.wt_kw),
            fmt_value(r.pv_kw),
        ])?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Complete days of one source: a start date and one 24-value row per day.
#[derive(Debug, Clone, PartialEq)]
pub struct DayMatrix {
    pub start: NaiveDate,
    pub days: Vec<[f64; 24]>,
}

impl DayMatrix {
    pub fn date(&self, day: usize) -> NaiveDate {
        self.start + Duration::days(day as i64)
    }
}

/// Groups records by calendar day, dropping incomplete leading and trailing
/// days.
pub fn day_matrix(records: &[HourlyRecord], source: Source) -> Result<DayMatrix, DataError> {
    let mut by_day: BTreeMap<NaiveDate, [Option<f64>; 24]> = BTreeMap::new();
    for r in records {
        by_day.entry(r.timestamp.date()).or_insert([None; 24])[r.timestamp.hour() as usize] = Some(source.of(r));
    }
    let complete: Vec<bool> = by_day.values().map(|d| d.iter().all(Option::is_some)).collect();
    let first = complete.iter().position(|&c| c).ok_or(DataError::NoCompleteDay)?;
    let last = complete.iter().rposition(|&c| c).unwrap();
    let dates: Vec<NaiveDate> = by_day.keys().copied().collect();
    let mut days = Vec::with_capacity(last - first + 1);
    for k in first..=last {
        if !complete[k] || (k > first && dates[k] - dates[k - 1] != Duration::days(1)) {
            let missing = if complete[k] { dates[k - 1] + Duration::days(1) } else { dates[k] };
            return Err(DataError::InteriorGap(missing));
        }
        let row = by_day[&dates[k]];
        days.push(std::array::from_fn(|h| row[h].unwrap()));
    }
    Ok(DayMatrix { start: dates[first], days })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSeries {
    pub hour: usize,
    pub source: Source,
    /// Date of `values[0]`.
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

/// Splits one source into 24 hour-of-day series over the complete days.
pub fn reshape_to_subseries(records: &[HourlyRecord], source: Source) -> Result<Vec<SubSeries>, DataError> {
    let m = day_matrix(records, source)?;
    Ok((0..24)
        .map(|hour| SubSeries { hour, source, start: m.start, values: m.days.iter().map(|d| d[hour]).collect() })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateWindow {
    pub history: [f64; WINDOW],
    pub target: f64,
    /// Index of the target day within the sub-series.
    pub day: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Vec<StateWindow>,
    pub test: Vec<StateWindow>,
    pub norm_min: f64,
    pub norm_max: f64,
}

impl SplitDataset {
    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.norm_min) / (self.norm_max - self.norm_min)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.norm_min + y * (self.norm_max - self.norm_min)
    }
}

pub fn train_count(windows: usize) -> usize {
    (TRAIN_FRACTION * windows as f64).round() as usize
}

/// Builds `len - 7` chronological windows, split 0.8:0.2, normalised with the
/// range of the values the training windows touch. Test values may fall
/// outside `[0, 1]`.
pub fn build_windows(series: &SubSeries) -> Result<SplitDataset, DataError> {
    let len = series.values.len();
    if len < WINDOW + 1 {
        return Err(DataError::TooFewDays(len));
    }
    let n = len - WINDOW;
    let n_train = train_count(n);
    let seen = &series.values[..n_train + WINDOW];
    let lo = seen.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = seen.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(DataError::ConstantSeries { series: series.source, hour: series.hour, value: lo });
    }
    let mut ds = SplitDataset { train: Vec::with_capacity(n_train), test: Vec::with_capacity(n - n_train), norm_min: lo, norm_max: hi };
    for t in 0..n {
        let history = std::array::from_fn(|k| ds.normalize(series.values[t + k]));
        let w = StateWindow { history, target: ds.normalize(series.values[t + WINDOW]), day: t + WINDOW };
        if t < n_train { ds.train.push(w) } else { ds.test.push(w) }
    }
    Ok(ds)
}

/// Shape parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub days: usize,
    pub start: NaiveDate,
    pub load_base_kw: f64,
    pub wt_rated_kw: f64,
    pub pv_peak_kw: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            days: 1825,
            start: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap(),
            load_base_kw: 80.0,
            wt_rated_kw: 30.0,
            pv_peak_kw: 25.0,
        }
    }
}

fn bump(x: f64, centre: f64, width: f64) -> f64 {
    (-((x - centre) / width).powi(2)).exp()
}

/// Normalised daily load shape with morning and evening peaks.
pub fn load_shape(hour: f64) -> f64 {
    0.72 + 0.22 * bump(hour, 9.5, 2.5) + 0.32 * bump(hour, 19.5, 2.2) - 0.12 * bump(hour, 3.5, 2.5)
}

/// Wind turbine power curve: cut-in 3 m/s, rated 12 m/s, cut-out 25 m/s.
pub fn power_curve(speed: f64, rated_kw: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..CUT_OUT).contains(&speed) {
        0.0
    } else if speed >= RATED {
        rated_kw
    } else {
        rated_kw * (speed.powi(3) - CUT_IN.powi(3)) / (RATED.powi(3) - CUT_IN.powi(3))
    }
}

/// Outputs below this share of the rating read as zero: the converter stays
/// disconnected until there is enough power to export.
pub const CONNECT_FRACTION: f64 = 0.02;

fn connected(p: f64, rating: f64) -> f64 {
    if p < CONNECT_FRACTION * rating { 0.0 } else { p }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Deterministic synthetic load / wind / solar series.
pub fn synthesize(cfg: &SynthConfig, seed: u64) -> Result<Vec<HourlyRecord>, DataError> {
    if cfg.days == 0 {
        return Err(DataError::EmptyHorizon);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::new(0.0, 1.0).unwrap();
    let tau = std::f64::consts::TAU;
    let mut out = Vec::with_capacity(cfg.days * 24);

    let mut load_level = 0.0f64;
    let mut wind_day = 0.0f64;
    let mut wind_hour = 0.0f64;
    let mut cloud = 1usize;
    let start = cfg.start.and_hms_opt(0, 0, 0).unwrap();

    for d in 0..cfg.days {
        let date = cfg.start + Duration::days(d as i64);
        let doy = date.ordinal0() as f64;
        let season = 1.0 + 0.10 * (tau * doy / 365.25).cos() + 0.05 * (2.0 * tau * (doy - 15.0) / 365.25).cos();
        let weekend = matches!(date.weekday(), chrono::Weekday::Sat | chrono::Weekday::Sun);
        let week = if weekend { 0.92 } else { 1.0 };
        load_level = 0.7 * load_level + 0.03 * std.sample(&mut rng);

        wind_day = 0.9 * wind_day + 0.6 * std.sample(&mut rng);
        let wind_mean = 8.5 + 1.0 * (tau * (doy - 30.0) / 365.25).cos() + wind_day;

        // clear / broken / overcast regimes with persistence
        cloud = if rng.random_bool(0.65) {
            cloud
        } else {
            match rng.random_range(0..10) {
                0..=4 => 0,
                5..=7 => 1,
                _ => 2,
            }
        };
        let (c_mean, c_sd) = [(0.95, 0.03), (0.65, 0.12), (0.25, 0.08)][cloud];
        let cloud_day = (c_mean + c_sd * std.sample(&mut rng)).clamp(0.05, 1.0);
        let day_len = 12.0 + 3.0 * (tau * (doy - 80.0) / 365.25).sin();
        let sunrise = 12.5 - day_len / 2.0;
        let pv_season = 0.8 + 0.2 * (tau * (doy - 80.0) / 365.25).sin();

        for h in 0..24 {
            let hf = h as f64;
            let load = cfg.load_base_kw * season * week * load_shape(hf) * (1.0 + load_level + 0.015 * std.sample(&mut rng));

            wind_hour = 0.6 * wind_hour + 0.35 * std.sample(&mut rng);
            let speed = (wind_mean + 2.0 * (tau * (hf - 15.0) / 24.0).cos() + wind_hour).max(0.0);
            let wt = connected(power_curve(speed, cfg.wt_rated_kw), cfg.wt_rated_kw);

            let t = hf + 0.5 - sunrise;
            let pv = if (0.0..day_len).contains(&t) {
                let bell = (std::f64::consts::PI * t / day_len).sin().powf(1.3);
                let jitter = (1.0 + 0.05 * std.sample(&mut rng)).max(0.0);
                connected(cfg.pv_peak_kw * pv_season * bell * cloud_day * jitter, cfg.pv_peak_kw)
            } else {
                0.0
            };

            out.push(HourlyRecord {
                timestamp: start + Duration::hours((d * 24 + h) as i64),
                load_kw: round4(load.max(0.0)),
                wt_kw: round4(wt.max(0.0)),
                pv_kw: round4(pv.max(0.0)),
            });
        }
    }
    Ok(out)
}
