use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use shapecast::io::{
    apply_setup1_config, apply_setup2_config, apply_sp_config, ingest_sst, read_curve_matrix, setup1_entries,
    setup2_entries, sp_config_entries, write_curve_matrix, write_cv_table, write_experiment_rows, write_method_table,
    write_prediction, write_replicates, KvConfig, Manifest, SstOptions, SETUP_KEYS, SP_KEYS,
};
use shapecast::pipeline::{
    mc_cross_validate, rolling_evaluate, sp_fit_predict, Method, PredictionReport, SpModelConfig,
};
use shapecast::amplitude::AoModel;
use shapecast::registration::{compose, mean_warp, register_sample_with, RegistrationOptions, WarpingFunction};
use shapecast::sim::{gen_setup1, gen_setup2, run_experiment, Setup1Config, Setup2Config, SetupConfig};
use shapecast::{Curve, Error, Grid, Result};

use crate::{Cli, Command, CvArgs, DataArgs, EvaluateArgs, ModelArgs, PredictArgs, SimulateArgs};

/// Keys understood by the driver itself, on top of the model and setup keys.
const DRIVER_KEYS: &[&str] = &[
    "command", "version", "setup", "method", "methods", "window", "format", "data", "region_column", "year_range",
    "excluded_years", "g_candidates", "l_candidates", "splits", "train_fraction", "curves_only",
];

const RESULT_PREFIX: &str = "result.";

const DEFAULT_WINDOW: usize = 50;
const DEFAULT_SPLITS: usize = 5;
const DEFAULT_TRAIN_FRACTION: f64 = 0.9;

pub fn run(cli: &Cli) -> Result<()> {
    let mut kv = match &cli.config {
        Some(path) => KvConfig::parse(&fs::read_to_string(path)?)?,
        None => KvConfig::default(),
    };
    let known: Vec<&str> = SP_KEYS.iter().chain(SETUP_KEYS).chain(DRIVER_KEYS).copied().collect();
    // A manifest doubles as a config; its `result.` entries are ignored.
    let unknown: Vec<String> =
        kv.unknown_keys(&known).into_iter().filter(|k| !k.starts_with(RESULT_PREFIX)).collect();
    if !unknown.is_empty() {
        return Err(Error::Config(format!("unknown config keys: {}", unknown.join(", "))));
    }
    set_opt(&mut kv, "seed", cli.seed);
    set_opt(&mut kv, "grid_points", cli.grid_points);
    set_opt(&mut kv, "dp_grid", cli.dp_grid);
    fs::create_dir_all(&cli.out_dir)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Simulate(a) => simulate(kv, a, out),
        Command::Register(a) => register(kv, a, out),
        Command::Predict(a) => predict(kv, a, out),
        Command::Evaluate(a) => evaluate(kv, a, out),
        Command::Cv(a) => cv(kv, a, out),
        Command::Ingest(a) => ingest(kv, a, out),
    }
}

fn set_opt<T: ToString>(kv: &mut KvConfig, key: &str, v: Option<T>) {
    if let Some(v) = v {
        kv.set(key, v);
    }
}

fn apply_model_args(kv: &mut KvConfig, m: &ModelArgs) {
    set_opt(kv, "g", m.g);
    set_opt(kv, "l", m.l);
    set_opt(kv, "p", m.order.as_deref());
    set_opt(kv, "d", m.dim.as_deref());
    set_opt(kv, "predictor_mode", m.predictor_mode.as_deref());
    set_opt(kv, "warp_mode", m.warp_mode.as_deref());
}

fn apply_data_args(kv: &mut KvConfig, d: &DataArgs) {
    kv.set("data", d.data.display());
    set_opt(kv, "format", d.format.as_deref());
    set_opt(kv, "region_column", d.region.as_deref());
    set_opt(kv, "year_range", d.years.as_deref());
    set_opt(kv, "excluded_years", d.exclude.as_deref());
}

fn sp_config(kv: &KvConfig) -> Result<SpModelConfig> {
    let mut cfg = SpModelConfig::default();
    apply_sp_config(kv, &mut cfg)?;
    Ok(cfg)
}

fn parse_list<T: FromStr>(key: &str, s: &str) -> Result<Vec<T>> {
    let items: Vec<T> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Error::Config(format!("bad entry '{t}' in '{key}'"))))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("'{key}' is empty")));
    }
    Ok(items)
}

fn methods(kv: &KvConfig) -> Result<Vec<Method>> {
    let mut m = parse_list::<Method>("methods", kv.get("methods").unwrap_or("sp,ao"))?;
    m.dedup();
    Ok(m)
}

fn parse_year_range(s: &str) -> Result<(i32, i32)> {
    let bad = || Error::Config(format!("year range must be 'lo-hi', got '{s}'"));
    let (lo, hi) = s.split_once(['-', ',']).ok_or_else(bad)?;
    let lo: i32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: i32 = hi.trim().parse().map_err(|_| bad())?;
    if lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn sst_options(kv: &KvConfig) -> Result<SstOptions> {
    let mut opts = SstOptions::default();
    if let Some(r) = kv.get("region_column") {
        opts.region_column = r.to_string();
    }
    if let Some(r) = kv.get("year_range") {
        opts.year_range = Some(parse_year_range(r)?);
    }
    if let Some(e) = kv.get("excluded_years") {
        opts.excluded_years = parse_list::<i32>("excluded_years", e)?.into_iter().collect::<BTreeSet<_>>();
    }
    if let Some(n) = kv.parsed::<usize>("grid_points")? {
        opts.grid = Grid::new(n).map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(opts)
}

fn looks_like_curve_matrix(text: &str) -> bool {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split(',').all(|t| t.trim().parse::<f64>().is_ok()))
}

/// Loaded series with the year of each curve when it came from SST text.
struct Series {
    curves: Vec<Curve>,
    years: Option<Vec<i32>>,
}

fn load_series(kv: &KvConfig) -> Result<Series> {
    let path = kv.get("data").ok_or_else(|| Error::Config("no input data given".into()))?;
    let text = fs::read_to_string(path)?;
    let format = kv.get("format").unwrap_or("auto");
    let as_curves = match format {
        "curves" => true,
        "sst" => false,
        "auto" => looks_like_curve_matrix(&text),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    };
    if !as_curves {
        let ds = ingest_sst(text.as_bytes(), &sst_options(kv)?)?;
        if ds.curves.is_empty() {
            return Err(Error::InvalidInput("no complete years in SST input".into()));
        }
        return Ok(Series { curves: ds.curves, years: Some(ds.years) });
    }
    let mut curves = read_curve_matrix(text.as_bytes())?;
    if let Some(n) = kv.parsed::<usize>("grid_points")? {
        let grid = Grid::new(n).map_err(|e| Error::Config(e.to_string()))?;
        if grid != curves[0].grid() {
            log::info!("resampling {} curves onto {n} grid points", curves.len());
            curves = curves
                .iter()
                .map(|c| Curve::new(grid, grid.points().iter().map(|&x| c.eval(x)).collect()))
                .collect::<Result<_>>()?;
        }
    }
    Ok(Series { curves, years: None })
}

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(out.join(name))?))
}

fn finish_manifest(manifest: &Manifest, kv: &KvConfig, out: &Path, name: &str) -> Result<()> {
    let mut m = Manifest::new(manifest.command.clone());
    let mut seen = BTreeSet::new();
    let from_kv = kv
        .entries()
        .iter()
        .filter(|(k, _)| !k.starts_with(RESULT_PREFIX) && *k != "command" && *k != "version")
        .map(|(k, v)| (k.clone(), v.clone()));
    for (k, v) in manifest.entries.iter().cloned().chain(from_kv) {
        if seen.insert(k.clone()) {
            m.push(k, v);
        }
    }
    let mut w = create(out, &format!("{name}.manifest"))?;
    m.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn simulate(mut kv: KvConfig, a: &SimulateArgs, out: &Path) -> Result<()> {
    set_opt(&mut kv, "setup", a.setup);
    set_opt(&mut kv, "tau", a.tau);
    set_opt(&mut kv, "p_diag", a.p);
    set_opt(&mut kv, "beta", a.beta);
    set_opt(&mut kv, "lambda1", a.lambda1);
    set_opt(&mut kv, "n", a.n);
    set_opt(&mut kv, "replicates", a.replicates);
    set_opt(&mut kv, "methods", a.methods.as_deref());
    if a.curves_only {
        kv.set("curves_only", true);
    }
    apply_model_args(&mut kv, &a.model);
    // One seed drives both the generator and the model.
    if kv.get("seed").is_none() {
        kv.set("seed", Setup1Config::default().seed);
    }
    let setup = match kv.parsed::<u8>("setup")?.unwrap_or(1) {
        1 => {
            let mut c = Setup1Config::default();
            apply_setup1_config(&kv, &mut c)?;
            SetupConfig::One(c)
        }
        2 => {
            let mut c = Setup2Config::default();
            apply_setup2_config(&kv, &mut c)?;
            SetupConfig::Two(c)
        }
        s => return Err(Error::Config(format!("setup must be 1 or 2, got {s}"))),
    };
    let sp = sp_config(&kv)?;
    let mut manifest = Manifest::new("simulate");
    match &setup {
        SetupConfig::One(c) => manifest.extend("", setup1_entries(c)),
        SetupConfig::Two(c) => manifest.extend("", setup2_entries(c)),
    }
    manifest.extend("", sp_config_entries(&sp));

    if kv.parsed::<bool>("curves_only")?.unwrap_or(false) {
        let series = match &setup {
            SetupConfig::One(c) => gen_setup1(c)?,
            SetupConfig::Two(c) => gen_setup2(c)?,
        };
        let mut w = create(out, "curves.csv")?;
        write_curve_matrix(&mut w, &series.curves)?;
        w.flush()?;
        let warps: Vec<Curve> = series.warps.iter().map(|g| g.curve().clone()).collect();
        let mut w = create(out, "warpings.csv")?;
        write_curve_matrix(&mut w, &warps)?;
        w.flush()?;
        return finish_manifest(&manifest, &kv, out, "simulate");
    }

    let methods = methods(&kv)?;
    manifest.push("methods", methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","));
    let result = run_experiment(&setup, &methods, &sp)?;
    let mut w = create(out, "simulate.csv")?;
    write_experiment_rows(&mut w, &result.rows)?;
    w.flush()?;
    let mut w = create(out, "replicates.csv")?;
    write_replicates(&mut w, &result.replicates)?;
    w.flush()?;
    for row in &result.rows {
        let (l2, fr) = row.table_cells();
        println!("{} l2 {l2} FR {fr}", row.method);
    }
    finish_manifest(&manifest, &kv, out, "simulate")
}

fn registration_options(cfg: &SpModelConfig, curves: &[Curve]) -> RegistrationOptions {
    RegistrationOptions { max_iter: cfg.max_iter, tol: cfg.tol, dp: cfg.dp_options(curves[0].grid().n_points()) }
}

fn write_years(out: &Path, years: &Option<Vec<i32>>) -> Result<()> {
    if let Some(years) = years {
        let mut w = create(out, "years.csv")?;
        writeln!(w, "year")?;
        for y in years {
            writeln!(w, "{y}")?;
        }
        w.flush()?;
    }
    Ok(())
}

fn register(mut kv: KvConfig, a: &DataArgs, out: &Path) -> Result<()> {
    apply_data_args(&mut kv, a);
    let cfg = sp_config(&kv)?;
    let series = load_series(&kv)?;
    let res = register_sample_with(&series.curves, &registration_options(&cfg, &series.curves))?;
    if !res.converged {
        log::warn!("registration stopped after {} iterations without converging", res.iterations);
    }
    let mut w = create(out, "amplitudes.csv")?;
    write_curve_matrix(&mut w, &res.amplitudes)?;
    w.flush()?;
    let warps: Vec<Curve> = res.warpings.iter().map(|g| g.curve().clone()).collect();
    let mut w = create(out, "warpings.csv")?;
    write_curve_matrix(&mut w, &warps)?;
    w.flush()?;
    let mut w = create(out, "template_srsf.csv")?;
    write_curve_matrix(&mut w, std::slice::from_ref(res.template_srsf.curve()))?;
    w.flush()?;
    write_years(out, &series.years)?;
    let mut manifest = Manifest::new("register");
    manifest.extend("", sp_config_entries(&cfg));
    manifest.push("result.n_curves", series.curves.len());
    manifest.push("result.iterations", res.iterations);
    manifest.push("result.converged", res.converged);
    finish_manifest(&manifest, &kv, out, "register")
}

/// Forecast for series too short to fit the state models: the pointwise mean
/// amplitude composed with the mean warp.
fn mean_forecast(curves: &[Curve], cfg: &SpModelConfig) -> Result<PredictionReport> {
    let res = register_sample_with(curves, &registration_options(cfg, curves))?;
    let grid = curves[0].grid();
    let n = res.amplitudes.len() as f64;
    let mut mean = vec![0.0; grid.n_points()];
    for a in &res.amplitudes {
        for (m, v) in mean.iter_mut().zip(a.values()) {
            *m += v / n;
        }
    }
    let amplitude = Curve::new(grid, mean)?;
    let warping = mean_warp(&res.warpings)?;
    Ok(PredictionReport {
        predicted: compose(&amplitude, &warping)?,
        predicted_amplitude: amplitude,
        predicted_warping: warping,
        l2_error: None,
        amplitude_error: None,
        registration_converged: res.converged,
    })
}

fn predict(mut kv: KvConfig, a: &PredictArgs, out: &Path) -> Result<()> {
    apply_data_args(&mut kv, &a.data);
    set_opt(&mut kv, "method", a.method.as_deref());
    apply_model_args(&mut kv, &a.model);
    let cfg = sp_config(&kv)?;
    let method: Method = kv.get("method").unwrap_or("sp").parse()?;
    let series = load_series(&kv)?;
    let curves = &series.curves;
    let (report, predictor) = match method {
        Method::Sp if curves.len() >= cfg.min_sample() => (sp_fit_predict(curves, &cfg)?, "sp"),
        Method::Sp => {
            log::warn!(
                "{} curves are fewer than the {} the SP model needs; forecasting the sample mean shape",
                curves.len(),
                cfg.min_sample()
            );
            (mean_forecast(curves, &cfg)?, "mean-shape")
        }
        Method::Ao => {
            let model = AoModel::fit(curves, cfg.p, cfg.d, cfg.search)?;
            let predicted = model.predict_next(curves)?;
            let report = PredictionReport {
                predicted_amplitude: predicted.clone(),
                predicted_warping: WarpingFunction::identity(predicted.grid()),
                predicted,
                l2_error: None,
                amplitude_error: None,
                registration_converged: true,
            };
            (report, "ao")
        }
    };
    let mut w = create(out, "prediction.csv")?;
    write_prediction(&mut w, &report)?;
    w.flush()?;
    let mut manifest = Manifest::new("predict");
    manifest.push("method", method);
    manifest.push("result.predictor", predictor);
    manifest.extend("", sp_config_entries(&cfg));
    manifest.push("result.n_curves", curves.len());
    manifest.push("result.registration_converged", report.registration_converged);
    finish_manifest(&manifest, &kv, out, "predict")
}

fn evaluate(mut kv: KvConfig, a: &EvaluateArgs, out: &Path) -> Result<()> {
    apply_data_args(&mut kv, &a.data);
    set_opt(&mut kv, "window", a.window);
    set_opt(&mut kv, "methods", a.methods.as_deref());
    apply_model_args(&mut kv, &a.model);
    let cfg = sp_config(&kv)?;
    let methods = methods(&kv)?;
    let window = kv.parsed::<usize>("window")?.unwrap_or(DEFAULT_WINDOW);
    let series = load_series(&kv)?;
    let summaries = rolling_evaluate(&series.curves, window, &methods, &cfg)?;
    let mut w = create(out, "evaluate.csv")?;
    write_method_table(&mut w, &summaries)?;
    w.flush()?;
    write_years(out, &series.years)?;
    for (m, s) in &summaries {
        println!("{m} l2 {:.3}({:.3}) FR {:.3}({:.3})", s.l2_mean, s.l2_sd, s.fr_mean, s.fr_sd);
    }
    let mut manifest = Manifest::new("evaluate");
    manifest.push("window", window);
    manifest.push("methods", methods.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(","));
    manifest.extend("", sp_config_entries(&cfg));
    manifest.push("result.n_curves", series.curves.len());
    finish_manifest(&manifest, &kv, out, "evaluate")
}

fn cv(mut kv: KvConfig, a: &CvArgs, out: &Path) -> Result<()> {
    apply_data_args(&mut kv, &a.data);
    set_opt(&mut kv, "g_candidates", a.g_candidates.as_deref());
    set_opt(&mut kv, "l_candidates", a.l_candidates.as_deref());
    set_opt(&mut kv, "splits", a.splits);
    set_opt(&mut kv, "train_fraction", a.train_fraction);
    apply_model_args(&mut kv, &a.model);
    let cfg = sp_config(&kv)?;
    let gs = parse_list::<usize>("g_candidates", kv.get("g_candidates").unwrap_or("3,4,5"))?;
    let ls = parse_list::<usize>("l_candidates", kv.get("l_candidates").unwrap_or("1,2,3"))?;
    let splits = kv.parsed::<usize>("splits")?.unwrap_or(DEFAULT_SPLITS);
    let frac = kv.parsed::<f64>("train_fraction")?.unwrap_or(DEFAULT_TRAIN_FRACTION);
    let series = load_series(&kv)?;
    let scores = mc_cross_validate(&series.curves, &gs, &ls, &cfg, splits, frac)?;
    let mut w = create(out, "cv.csv")?;
    write_cv_table(&mut w, &scores)?;
    w.flush()?;
    let best = best_candidate(&scores);
    let mut manifest = Manifest::new("cv");
    manifest.push("g_candidates", join(&gs));
    manifest.push("l_candidates", join(&ls));
    manifest.push("splits", splits);
    manifest.push("train_fraction", frac);
    manifest.extend("", sp_config_entries(&cfg));
    manifest.push("result.n_curves", series.curves.len());
    if let Some((g, l)) = best {
        println!("best g={g} l={l}");
        manifest.push("result.best_g", g);
        manifest.push("result.best_l", l);
    }
    finish_manifest(&manifest, &kv, out, "cv")
}

/// Lowest mean l² among candidates evaluated on every split.
fn best_candidate(scores: &BTreeMap<(usize, usize), shapecast::pipeline::CvScore>) -> Option<(usize, usize)> {
    scores
        .iter()
        .filter(|(_, s)| !s.skipped && s.mean_l2.is_finite())
        .min_by(|a, b| a.1.mean_l2.total_cmp(&b.1.mean_l2))
        .map(|(k, _)| *k)
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn ingest(mut kv: KvConfig, a: &DataArgs, out: &Path) -> Result<()> {
    apply_data_args(&mut kv, a);
    let opts = sst_options(&kv)?;
    let path = kv.get("data").unwrap_or_default().to_string();
    let ds = ingest_sst(BufReader::new(File::open(&path)?), &opts)?;
    if ds.curves.is_empty() {
        return Err(Error::InvalidInput("no complete years in SST input".into()));
    }
    let mut w = create(out, "curves.csv")?;
    write_curve_matrix(&mut w, &ds.curves)?;
    w.flush()?;
    write_years(out, &Some(ds.years.clone()))?;
    let mut manifest = Manifest::new("ingest");
    manifest.push("region_column", &opts.region_column);
    manifest.push("grid_points", opts.grid.n_points());
    manifest.push("result.n_curves", ds.curves.len());
    manifest.push("result.incomplete_years", ds.incomplete_years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(","));
    manifest.push("result.dropped_excluded_years", ds.excluded_years.iter().map(|y| y.to_string()).collect::<Vec<_>>().join(","));
    finish_manifest(&manifest, &kv, out, "ingest")
}
