//! Text formats: curve-matrix CSV, monthly SST tables, key-value configs,
//! report CSV and run manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use crate::bspline::{smooth_to_curve, BSplineBasis};
use crate::curves::{Curve, Grid};
use crate::error::{Error, Result};
use crate::pipeline::{CvScore, ErrorSummary, Method, PredictionReport, SpModelConfig};
use crate::sim::{ExperimentRow, ReplicateResult, Setup1Config, Setup2Config, SpreadReading};

/// B-spline functions used to smooth twelve monthly readings.
pub const SST_BASIS: usize = 11;
/// Plausible sea-surface temperature range in °C.
pub const SST_BOUNDS: (f64, f64) = (0.0, 40.0);

/// Write curves as CSV: a header of grid abscissae, then one row per curve.
pub fn write_curve_matrix(w: impl Write, curves: &[Curve]) -> Result<()> {
    let Some(first) = curves.first() else {
        return Err(Error::input("no curves to write"));
    };
    let mut out = csv::Writer::from_writer(w);
    out.write_record(first.grid().points().iter().map(|x| x.to_string()))
        .map_err(csv_error)?;
    for c in curves {
        if c.grid() != first.grid() {
            return Err(Error::dim("curves live on different grids"));
        }
        out.write_record(c.values().iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse { line, message: format!("not a number: '{}'", tok.trim()) })
}

/// Read the format written by [`write_curve_matrix`]. Lines starting with
/// `#` are skipped.
pub fn read_curve_matrix(r: impl Read) -> Result<Vec<Curve>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut grid: Option<Grid> = None;
    let mut curves = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let lineno = rec.position().map_or(0, |p| p.line() as usize);
        let vals: Vec<f64> = rec.iter().map(|s| parse_f64(s, lineno)).collect::<Result<_>>()?;
        match grid {
            None => {
                grid = Some(Grid::from_points(&vals).map_err(|e| Error::Parse { line: lineno, message: e.to_string() })?);
            }
            Some(g) => {
                if vals.len() != g.n_points() {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("{} values for a {}-point grid", vals.len(), g.n_points()),
                    });
                }
                curves.push(Curve::new(g, vals)?);
            }
        }
    }
    if curves.is_empty() {
        return Err(Error::input("curve file holds no curves"));
    }
    Ok(curves)
}

/// One monthly reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstRecord {
    pub year: i32,
    pub month: u8,
    pub sst: f64,
}

/// Options for [`ingest_sst`].
#[derive(Debug, Clone, PartialEq)]
pub struct SstOptions {
    /// Header name of the temperature column.
    pub region_column: String,
    /// Inclusive year range to keep.
    pub year_range: Option<(i32, i32)>,
    /// Years removed before smoothing.
    pub excluded_years: BTreeSet<i32>,
    pub grid: Grid,
}

impl Default for SstOptions {
    fn default() -> Self {
        Self {
            region_column: "NINO1+2".into(),
            year_range: None,
            excluded_years: BTreeSet::new(),
            grid: Grid::default(),
        }
    }
}

/// Smoothed annual curves and bookkeeping.
#[derive(Debug, Clone)]
pub struct SstDataset {
    pub years: Vec<i32>,
    pub curves: Vec<Curve>,
    /// Years dropped for incomplete months.
    pub incomplete_years: Vec<i32>,
    pub excluded_years: Vec<i32>,
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect()
}

/// Parse monthly records: a header naming a year column (`YR`/`YEAR`), a
/// month column (`MON`/`MONTH`) and the region column.
pub fn parse_sst_records(r: impl BufRead, region_column: &str) -> Result<Vec<SstRecord>> {
    let mut cols: Option<(usize, usize, usize)> = None;
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let fields = split_fields(&line);
        if fields.is_empty() || fields[0].starts_with('#') {
            continue;
        }
        let Some((yc, mc, rc)) = cols else {
            let find = |names: &[&str]| fields.iter().position(|f| names.iter().any(|n| f.eq_ignore_ascii_case(n)));
            let yc = find(&["YR", "YEAR"]);
            let mc = find(&["MON", "MONTH"]);
            let rc = find(&[region_column]);
            match (yc, mc, rc) {
                (Some(y), Some(m), Some(r)) => cols = Some((y, m, r)),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("header must name year, month and '{region_column}' columns"),
                    })
                }
            }
            continue;
        };
        let need = yc.max(mc).max(rc);
        if fields.len() <= need {
            return Err(Error::Parse { line: lineno, message: format!("expected at least {} fields", need + 1) });
        }
        let bad = |m: String| Error::Parse { line: lineno, message: m };
        let year: i32 = fields[yc].parse().map_err(|_| bad(format!("bad year '{}'", fields[yc])))?;
        let month: u8 = fields[mc].parse().map_err(|_| bad(format!("bad month '{}'", fields[mc])))?;
        if !(1..=12).contains(&month) {
            return Err(bad(format!("month {month} outside 1-12")));
        }
        let sst = parse_f64(fields[rc], lineno)?;
        if !(SST_BOUNDS.0..=SST_BOUNDS.1).contains(&sst) {
            return Err(bad(format!("temperature {sst} outside {:?} °C", SST_BOUNDS)));
        }
        out.push(SstRecord { year, month, sst });
    }
    if cols.is_none() {
        return Err(Error::input("SST file has no header"));
    }
    Ok(out)
}

/// Monthly abscissae on [0,1]: the middle of each month.
pub fn month_abscissae() -> Vec<f64> {
    (0..12).map(|m| (m as f64 + 0.5) / 12.0).collect()
}

/// Ingest monthly SST readings into one smoothed curve per year. Excluded
/// years are removed first; years without all twelve months are dropped with
/// a warning.
pub fn ingest_sst(r: impl BufRead, opts: &SstOptions) -> Result<SstDataset> {
    let records = parse_sst_records(r, &opts.region_column)?;
    let mut by_year: BTreeMap<i32, BTreeMap<u8, f64>> = BTreeMap::new();
    for rec in records {
        if let Some((lo, hi)) = opts.year_range {
            if rec.year < lo || rec.year > hi {
                continue;
            }
        }
        by_year.entry(rec.year).or_default().insert(rec.month, rec.sst);
    }
    let basis = BSplineBasis::cubic(SST_BASIS)?;
    let xs = month_abscissae();
    let mut ds = SstDataset { years: Vec::new(), curves: Vec::new(), incomplete_years: Vec::new(), excluded_years: Vec::new() };
    for (year, months) in by_year {
        if opts.excluded_years.contains(&year) {
            ds.excluded_years.push(year);
            continue;
        }
        if months.len() != 12 {
            log::warn!("year {year} has {} of 12 months; dropped", months.len());
            ds.incomplete_years.push(year);
            continue;
        }
        let ys: Vec<f64> = months.values().copied().collect();
        ds.curves.push(smooth_to_curve(&xs, &ys, &basis, opts.grid)?);
        ds.years.push(year);
    }
    Ok(ds)
}

/// `key = value` lines; `#` starts a comment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse { line: i + 1, message: format!("expected key = value, got '{line}'") });
            };
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Typed lookup; `None` when absent, an error when unparseable.
    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("invalid value '{v}' for '{key}'"))),
        }
    }

    /// Keys that none of `known` cover.
    pub fn unknown_keys(&self, known: &[&str]) -> Vec<String> {
        self.entries.keys().filter(|k| !known.contains(&k.as_str())).cloned().collect()
    }

    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Keys read by [`apply_sp_config`].
pub const SP_KEYS: &[&str] = &[
    "g", "l", "p", "d", "predictor_mode", "warp_mode", "dp_grid", "seed", "restarts", "p_max", "d_max",
    "max_iter", "tol",
];

/// Override `cfg` with the SP keys present in `kv`, then validate.
pub fn apply_sp_config(kv: &KvConfig, cfg: &mut SpModelConfig) -> Result<()> {
    if let Some(v) = kv.parsed("g")? {
        cfg.g = v;
    }
    if let Some(v) = kv.parsed("l")? {
        cfg.l = v;
    }
    for (key, slot) in [("p", &mut cfg.p), ("d", &mut cfg.d)] {
        match kv.get(key) {
            None => {}
            Some("auto") => *slot = None,
            Some(_) => *slot = kv.parsed(key)?,
        }
    }
    if let Some(v) = kv.parsed("predictor_mode")? {
        cfg.predictor_mode = v;
    }
    if let Some(v) = kv.parsed("warp_mode")? {
        cfg.warp_mode = v;
    }
    if let Some(v) = kv.parsed("dp_grid")? {
        cfg.dp_grid = v;
    }
    if let Some(v) = kv.parsed("seed")? {
        cfg.seed = v;
    }
    if let Some(v) = kv.parsed("restarts")? {
        cfg.restarts = v;
    }
    if let Some(v) = kv.parsed("p_max")? {
        cfg.search.p_max = v;
    }
    if let Some(v) = kv.parsed("d_max")? {
        cfg.search.d_max = v;
    }
    if let Some(v) = kv.parsed("max_iter")? {
        cfg.max_iter = v;
    }
    if let Some(v) = kv.parsed("tol")? {
        cfg.tol = v;
    }
    cfg.validate()
}

/// Echo of every SP field, for manifests.
pub fn sp_config_entries(cfg: &SpModelConfig) -> Vec<(String, String)> {
    let opt = |v: Option<usize>| v.map_or("auto".to_string(), |x| x.to_string());
    vec![
        ("g".into(), cfg.g.to_string()),
        ("l".into(), cfg.l.to_string()),
        ("p".into(), opt(cfg.p)),
        ("d".into(), opt(cfg.d)),
        ("predictor_mode".into(), cfg.predictor_mode.to_string()),
        ("warp_mode".into(), cfg.warp_mode.to_string()),
        ("dp_grid".into(), cfg.dp_grid.to_string()),
        ("seed".into(), cfg.seed.to_string()),
        ("restarts".into(), cfg.restarts.to_string()),
        ("p_max".into(), cfg.search.p_max.to_string()),
        ("d_max".into(), cfg.search.d_max.to_string()),
        ("max_iter".into(), cfg.max_iter.to_string()),
        ("tol".into(), cfg.tol.to_string()),
    ]
}

impl FromStr for SpreadReading {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "variance" | "var" => Ok(Self::Variance),
            "sd" | "stddev" => Ok(Self::StdDev),
            _ => Err(Error::Config(format!("unknown spread reading '{s}'"))),
        }
    }
}

impl std::fmt::Display for SpreadReading {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Variance => "variance",
            Self::StdDev => "sd",
        })
    }
}

fn parse_range(kv: &KvConfig, key: &str) -> Result<Option<(f64, f64)>> {
    let Some(v) = kv.get(key) else { return Ok(None) };
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("'{key}' must be 'lo,hi', got '{v}'"));
    if parts.len() != 2 {
        return Err(bad());
    }
    Ok(Some((parts[0].parse().map_err(|_| bad())?, parts[1].parse().map_err(|_| bad())?)))
}

/// Keys read by [`apply_setup1_config`] and [`apply_setup2_config`].
pub const SETUP_KEYS: &[&str] = &[
    "n", "tau", "p_diag", "beta", "lambda1", "seed", "replicates", "grid_points", "minor_spread",
    "spread_reading", "xi_range",
];

pub fn apply_setup1_config(kv: &KvConfig, c: &mut Setup1Config) -> Result<()> {
    if let Some(v) = kv.parsed("n")? {
        c.n = v;
    }
    if let Some(v) = kv.parsed("tau")? {
        c.tau = v;
    }
    if let Some(v) = kv.parsed("p_diag")? {
        c.p_diag = v;
    }
    if let Some(v) = kv.parsed("lambda1")? {
        c.lambda1 = v;
    }
    if let Some(v) = kv.parsed("seed")? {
        c.seed = v;
    }
    if let Some(v) = kv.parsed("replicates")? {
        c.n_replicates = v;
    }
    if let Some(v) = kv.parsed("grid_points")? {
        c.grid_points = v;
    }
    if let Some(v) = kv.parsed("minor_spread")? {
        c.minor_spread = v;
    }
    if let Some(v) = kv.parsed("spread_reading")? {
        c.spread_reading = v;
    }
    if let Some(v) = parse_range(kv, "xi_range")? {
        c.xi_range = v;
    }
    c.validate()
}

pub fn apply_setup2_config(kv: &KvConfig, c: &mut Setup2Config) -> Result<()> {
    if let Some(v) = kv.parsed("n")? {
        c.n = v;
    }
    if let Some(v) = kv.parsed("beta")? {
        c.beta = v;
    }
    if let Some(v) = kv.parsed("lambda1")? {
        c.lambda1 = v;
    }
    if let Some(v) = kv.parsed("seed")? {
        c.seed = v;
    }
    if let Some(v) = kv.parsed("replicates")? {
        c.n_replicates = v;
    }
    if let Some(v) = kv.parsed("grid_points")? {
        c.grid_points = v;
    }
    if let Some(v) = kv.parsed("minor_spread")? {
        c.minor_spread = v;
    }
    if let Some(v) = kv.parsed("spread_reading")? {
        c.spread_reading = v;
    }
    if let Some(v) = parse_range(kv, "xi_range")? {
        c.xi_range = v;
    }
    c.validate()
}

pub fn setup1_entries(c: &Setup1Config) -> Vec<(String, String)> {
    vec![
        ("setup".into(), "1".into()),
        ("n".into(), c.n.to_string()),
        ("tau".into(), c.tau.to_string()),
        ("p_diag".into(), c.p_diag.to_string()),
        ("lambda1".into(), c.lambda1.to_string()),
        ("seed".into(), c.seed.to_string()),
        ("replicates".into(), c.n_replicates.to_string()),
        ("grid_points".into(), c.grid_points.to_string()),
        ("minor_spread".into(), c.minor_spread.to_string()),
        ("spread_reading".into(), c.spread_reading.to_string()),
        ("xi_range".into(), format!("{},{}", c.xi_range.0, c.xi_range.1)),
    ]
}

pub fn setup2_entries(c: &Setup2Config) -> Vec<(String, String)> {
    vec![
        ("setup".into(), "2".into()),
        ("n".into(), c.n.to_string()),
        ("beta".into(), c.beta.to_string()),
        ("lambda1".into(), c.lambda1.to_string()),
        ("seed".into(), c.seed.to_string()),
        ("replicates".into(), c.n_replicates.to_string()),
        ("grid_points".into(), c.grid_points.to_string()),
        ("minor_spread".into(), c.minor_spread.to_string()),
        ("spread_reading".into(), c.spread_reading.to_string()),
        ("xi_range".into(), format!("{},{}", c.xi_range.0, c.xi_range.1)),
    ]
}

/// `method,metric,mean,sd` rows for each method's l2 and FR errors.
pub fn write_report(w: impl Write, summaries: &BTreeMap<Method, ErrorSummary>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "metric", "mean", "sd"]).map_err(csv_error)?;
    for (m, s) in summaries {
        let m = m.to_string();
        out.write_record([m.as_str(), "l2", &s.l2_mean.to_string(), &s.l2_sd.to_string()]).map_err(csv_error)?;
        out.write_record([m.as_str(), "fr", &s.fr_mean.to_string(), &s.fr_sd.to_string()]).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// `method,l2_mean,l2_sd,fr_mean,fr_sd,n,failures`, one row per method.
pub fn write_method_table(w: impl Write, summaries: &BTreeMap<Method, ErrorSummary>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["method", "l2_mean", "l2_sd", "fr_mean", "fr_sd", "n", "failures"]).map_err(csv_error)?;
    for (m, s) in summaries {
        out.write_record([
            m.to_string(),
            s.l2_mean.to_string(),
            s.l2_sd.to_string(),
            s.fr_mean.to_string(),
            s.fr_sd.to_string(),
            s.n.to_string(),
            s.failures.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Grid samples of a forecast: `t,predicted,amplitude,warping`.
pub fn write_prediction(w: impl Write, report: &PredictionReport) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "predicted", "amplitude", "warping"]).map_err(csv_error)?;
    let pts = report.predicted.grid().points();
    let cols = [report.predicted.values(), report.predicted_amplitude.values(), report.predicted_warping.values()];
    for (i, t) in pts.iter().enumerate() {
        out.write_record([t.to_string(), cols[0][i].to_string(), cols[1][i].to_string(), cols[2][i].to_string()])
            .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// `g,l,mean_l2,mean_fr,splits_used,skipped` per candidate.
pub fn write_cv_table(w: impl Write, scores: &BTreeMap<(usize, usize), CvScore>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["g", "l", "mean_l2", "mean_fr", "splits_used", "skipped"]).map_err(csv_error)?;
    for ((g, l), s) in scores {
        out.write_record([
            g.to_string(),
            l.to_string(),
            s.mean_l2.to_string(),
            s.mean_fr.to_string(),
            s.splits_used.to_string(),
            s.skipped.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Pooled experiment rows in table layout.
pub fn write_experiment_rows(mut w: impl Write, rows: &[ExperimentRow]) -> Result<()> {
    let Some(first) = rows.first() else {
        return Err(Error::input("no experiment rows"));
    };
    writeln!(w, "{}", first.csv_header())?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Per-replicate summaries: `replicate,method,l2_mean,l2_sd,fr_mean,fr_sd,n,failures`.
pub fn write_replicates(w: impl Write, reps: &[ReplicateResult]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["replicate", "method", "l2_mean", "l2_sd", "fr_mean", "fr_sd", "n", "failures"])
        .map_err(csv_error)?;
    for r in reps {
        let s = &r.summary;
        out.write_record([
            r.replicate.to_string(),
            r.method.to_string(),
            s.l2_mean.to_string(),
            s.l2_sd.to_string(),
            s.fr_mean.to_string(),
            s.fr_sd.to_string(),
            s.n.to_string(),
            s.failures.to_string(),
        ])
        .map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

/// Run manifest in the key-value format, readable by [`KvConfig::parse`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: impl Into<String>) -> Self {
        Self { command: command.into(), entries: Vec::new() }
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, prefix: &str, items: Vec<(String, String)>) {
        for (k, v) in items {
            self.entries.push((format!("{prefix}{k}"), v));
        }
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# run manifest")?;
        writeln!(w, "command = {}", self.command)?;
        writeln!(w, "version = {}", env!("CARGO_PKG_VERSION"))?;
        for (k, v) in &self.entries {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }
}
