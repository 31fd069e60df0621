//! One function per subcommand.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use mvdi::alpha_pca;
use mvdi::benchmarks::{Benchmark, BenchmarkKind};
use mvdi::evaluate::{dm_test, rolling_cv, CvConfig, CvReport, Forecaster};
use mvdi::panel::{self, Transform, TransformSpec};
use mvdi::pipeline::{self, FactorPipeline};
use mvdi::screening;
use mvdi::simulate::{self, NormalityConfig, PlantedConfig, SimConfig, Table3Config};
use mvdi::{FactorKind, MatrixSeries, NoiseKind, ScalarSeries};

use crate::config::Resolved;
use crate::error::CliError;
use crate::model::Bundle;
use crate::output::{ensure_dir, write_table};
use crate::{DataArgs, PlantedPreset};

pub const PIPELINE_LABEL: &str = "alpha_pca_lse";

fn transform_spec(path: Option<&Path>, center: bool) -> Result<TransformSpec, CliError> {
    Ok(match path {
        Some(p) => TransformSpec::from_path(p, center)?,
        None => TransformSpec {
            center,
            ..TransformSpec::identity()
        },
    })
}

fn load(data: &DataArgs) -> Result<(MatrixSeries, ScalarSeries), CliError> {
    let spec = transform_spec(data.transforms.as_deref(), data.center)?;
    Ok(panel::ingest(&data.panel, &data.target, &spec)?)
}

fn header(cfg: &Resolved, extra: &str) -> String {
    if extra.is_empty() {
        cfg.to_string()
    } else {
        format!("{cfg} {extra}")
    }
}

fn labelled_matrix(labels: &[String], m: &nalgebra::DMatrix<f64>) -> Vec<Vec<String>> {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut row = vec![l.clone()];
            row.extend((0..m.ncols()).map(|j| m[(i, j)].to_string()));
            row
        })
        .collect()
}

fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn forecast_rows(times: &[String], values: &[f64]) -> Vec<Vec<String>> {
    times.iter().zip(values).map(|(t, v)| vec![t.clone(), v.to_string()]).collect()
}

pub fn fit(cfg: &Resolved, data: &DataArgs, out: &Path) -> Result<(), CliError> {
    let (series, target) = load(data)?;
    let fitted = pipeline::fit(&series, &target, &cfg.pipeline())?;
    ensure_dir(out)?;
    let (k, r) = (fitted.factors.k(), fitted.factors.r());
    let extra = format!("k_used={k} r_used={r}");
    let head = header(cfg, &extra);

    let mut settings = BTreeMap::new();
    settings.insert("alpha".to_string(), cfg.alpha.to_string());
    settings.insert("k".to_string(), k.to_string());
    settings.insert("r".to_string(), r.to_string());
    settings.insert("horizon".to_string(), cfg.horizon.to_string());
    settings.insert("iterations".to_string(), fitted.loadings.iterations().to_string());
    settings.insert("converged".to_string(), fitted.loadings.converged().to_string());
    if let Some(t) = cfg.thresholds() {
        settings.insert("row_threshold".to_string(), t.row.to_string());
        settings.insert("col_threshold".to_string(), t.col.to_string());
    }
    Bundle::from_fit(&fitted, &series, settings).write(&out.join("model.csv"), &head)?;

    let kept_rows: Vec<String> = fitted.model.kept_rows.iter().map(|&i| series.row_labels()[i].clone()).collect();
    let kept_cols: Vec<String> = fitted.model.kept_cols.iter().map(|&j| series.col_labels()[j].clone()).collect();
    let mut h = vec!["row_id".to_string()];
    h.extend(numbered("factor_", k));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    write_table(&out.join("row_loadings.csv"), &head, &h, &labelled_matrix(&kept_rows, fitted.factors.row_loadings()))?;
    let mut h = vec!["col_id".to_string()];
    h.extend(numbered("factor_", r));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    write_table(&out.join("col_loadings.csv"), &head, &h, &labelled_matrix(&kept_cols, fitted.factors.col_loadings()))?;

    let mut rows = Vec::new();
    for (t, f) in fitted.factors.factors().iter().enumerate() {
        for j in 0..r {
            for i in 0..k {
                rows.push(vec![
                    series.time_index()[t].clone(),
                    (i + 1).to_string(),
                    (j + 1).to_string(),
                    f[(i, j)].to_string(),
                ]);
            }
        }
    }
    write_table(&out.join("factors.csv"), &head, &["time", "i", "j", "value"], &rows)?;

    let coef: Vec<Vec<String>> = fitted
        .loadings
        .alpha()
        .iter()
        .enumerate()
        .map(|(i, v)| vec!["alpha".into(), (i + 1).to_string(), v.to_string()])
        .chain(
            fitted
                .loadings
                .beta()
                .iter()
                .enumerate()
                .map(|(j, v)| vec!["beta".into(), (j + 1).to_string(), v.to_string()]),
        )
        .collect();
    write_table(&out.join("coefficients.csv"), &head, &["name", "index", "value"], &coef)?;

    let mut rows = Vec::new();
    let ratios = |axis: &str| -> Vec<f64> {
        match &fitted.dims {
            Some(d) if axis == "row" => d.row.ratios.clone(),
            Some(d) => d.col.ratios.clone(),
            None => Vec::new(),
        }
    };
    let work = match &fitted.screen {
        Some(sc) => sc.apply(&series)?,
        None => series.clone(),
    };
    let moments = alpha_pca::moment_matrices(&work, cfg.alpha)?;
    for (axis, eig) in [("row", &moments.row_eig().eigenvalues), ("col", &moments.col_eig().eigenvalues)] {
        let rat = ratios(axis);
        for (n, v) in eig.iter().enumerate() {
            rows.push(vec![
                axis.to_string(),
                (n + 1).to_string(),
                v.to_string(),
                rat.get(n).map_or_else(String::new, f64::to_string),
            ]);
        }
    }
    write_table(&out.join("scree.csv"), &head, &["axis", "index", "eigenvalue", "ratio"], &rows)?;

    let n_pairs = series.len() - cfg.horizon;
    let fv = fitted.fitted_values();
    write_table(
        &out.join("fitted.csv"),
        &head,
        &["time", "forecast"],
        &forecast_rows(&series.time_index()[..n_pairs], &fv[..n_pairs]),
    )?;
    if let Some(s) = &fitted.screen {
        write_screen(out, &head, &series, s)?;
    }
    println!("k={k} r={r}");
    Ok(())
}

pub fn forecast(
    cfg: &Resolved,
    model: &Path,
    panel_path: &Path,
    target: Option<&Path>,
    transforms: Option<&Path>,
    center: bool,
    out: &Path,
) -> Result<(), CliError> {
    let bundle = Bundle::read(model)?;
    let mut spec = transform_spec(transforms, center)?;
    let raw = panel::read_panel(File::open(panel_path)?)?;
    let target = match target {
        Some(p) => panel::read_target(File::open(p)?)?,
        None => {
            spec.target = Transform::None;
            raw.times.iter().map(|t| (t.clone(), 0.0)).collect()
        }
    };
    let (series, _) = panel::assemble(&raw, &target, &spec)?;
    let m = bundle.model_for(&series)?;
    let pred: Vec<f64> = series.matrices().iter().map(|x| m.predict(x)).collect::<Result<_, _>>()?;
    write_table(out, &header(cfg, ""), &["time", "forecast"], &forecast_rows(series.time_index(), &pred))
}

fn write_screen(out: &Path, head: &str, series: &MatrixSeries, s: &screening::ScreenResult) -> Result<(), CliError> {
    let mut rows = Vec::new();
    for (j, c) in series.col_labels().iter().enumerate() {
        for (i, r) in series.row_labels().iter().enumerate() {
            rows.push(vec![
                r.clone(),
                c.clone(),
                s.corr[(i, j)].to_string(),
                s.zero_variance.contains(&(i, j)).to_string(),
            ]);
        }
    }
    write_table(&out.join("correlations.csv"), head, &["row_id", "col_id", "corr", "zero_variance"], &rows)?;
    let scree = |order: Vec<(usize, f64)>, labels: &[String], kept: &[usize]| -> Vec<Vec<String>> {
        order
            .into_iter()
            .map(|(i, v)| vec![labels[i].clone(), v.to_string(), kept.contains(&i).to_string()])
            .collect()
    };
    write_table(
        &out.join("row_scree.csv"),
        head,
        &["row_id", "mean_abs_corr", "kept"],
        &scree(s.row_scree(), series.row_labels(), &s.kept_rows),
    )?;
    write_table(
        &out.join("col_scree.csv"),
        head,
        &["col_id", "mean_abs_corr", "kept"],
        &scree(s.col_scree(), series.col_labels(), &s.kept_cols),
    )
}

pub fn screen(cfg: &Resolved, data: &DataArgs, out: &Path) -> Result<(), CliError> {
    let (series, target) = load(data)?;
    let (row, col) = (cfg.row_threshold.unwrap_or(0.0), cfg.col_threshold.unwrap_or(0.0));
    let (refined, res) = screening::refine(&series, &target, row, col)?;
    ensure_dir(out)?;
    let head = header(cfg, "");
    write_screen(out, &head, &series, &res)?;
    panel::write_panel(&refined, File::create(out.join("refined_panel.csv"))?)?;
    println!("kept_rows={} kept_cols={}", res.kept_rows.len(), res.kept_cols.len());
    Ok(())
}

fn dims_label(cfg: &Resolved) -> (String, String) {
    match (cfg.k, cfg.r) {
        (Some(k), Some(r)) => (k.to_string(), r.to_string()),
        _ => ("est".into(), "est".into()),
    }
}

pub fn eval(cfg: &Resolved, data: &DataArgs, out: &Path, folds: usize, test_fraction: f64, benchmarks: bool) -> Result<(), CliError> {
    let (series, target) = load(data)?;
    let cv = CvConfig {
        folds,
        test_fraction,
        horizon: cfg.horizon,
    };
    let pipe = FactorPipeline::new(PIPELINE_LABEL, cfg.pipeline());
    let main = rolling_cv(&series, &target, &pipe, &cv)?;
    let main_loss = main.squared_errors();
    let (k, r) = dims_label(cfg);
    let thr = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    let row_of = |name: &str, rep: Result<&CvReport, String>, dm: (String, String)| -> Vec<String> {
        let mut row = vec![
            name.to_string(),
            cfg.alpha.to_string(),
            k.clone(),
            r.clone(),
            thr(cfg.row_threshold),
            thr(cfg.col_threshold),
        ];
        match rep {
            Ok(rep) => {
                row.push(rep.mean_msfe.to_string());
                row.push(dm.0);
                row.push(dm.1);
                row.push("ok".into());
                row.extend(rep.fold_msfe.iter().map(f64::to_string));
            }
            Err(kind) => {
                row.extend([String::new(), String::new(), String::new(), kind]);
                row.extend((0..folds).map(|_| String::new()));
            }
        }
        row
    };
    let mut rows = vec![row_of(PIPELINE_LABEL, Ok(&main), (String::new(), String::new()))];
    if benchmarks {
        for kind in BenchmarkKind::ALL {
            let b = Benchmark::new(kind);
            match rolling_cv(&series, &target, &b as &dyn Forecaster, &cv) {
                Ok(rep) => {
                    let dm = match dm_test(&main_loss, &rep.squared_errors(), cfg.horizon) {
                        Ok(d) => (d.statistic.to_string(), d.p_value.to_string()),
                        Err(e) => (format!("error:{}", e.kind()), String::new()),
                    };
                    rows.push(row_of(kind.as_str(), Ok(&rep), dm));
                }
                Err(e) => rows.push(row_of(kind.as_str(), Err(format!("error:{}", e.kind())), (String::new(), String::new()))),
            }
        }
    }
    let mut h: Vec<String> = [
        "method",
        "alpha",
        "k",
        "r",
        "row_threshold",
        "col_threshold",
        "mean_msfe",
        "dm_statistic",
        "dm_p_value",
        "status",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend(numbered("fold_", folds));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    let extra = format!("folds={folds} test_fraction={test_fraction}");
    write_table(out, &header(cfg, &extra), &h, &rows)
}

pub struct SimArgs {
    pub p: usize,
    pub q: usize,
    pub t: usize,
    pub factor_kind: FactorKind,
    pub noise_kind: NoiseKind,
    pub noise_scale: f64,
    pub target_noise_sd: f64,
    pub rep: u64,
}

pub fn simulate(cfg: &Resolved, a: &SimArgs, out: &Path) -> Result<(), CliError> {
    let mut sim = SimConfig::new(a.p, a.q, cfg.k.unwrap_or(3), cfg.r.unwrap_or(2), a.t);
    sim.factor_kind = a.factor_kind;
    sim.noise_kind = a.noise_kind;
    sim.noise_scale = a.noise_scale;
    sim.target_noise_sd = a.target_noise_sd;
    sim.horizon = cfg.horizon;
    sim.alpha_weight = cfg.alpha;
    sim.seed = cfg.seed_or_default();
    let (truth, series, target) = simulate::gen_replication(&sim, a.rep)?;
    ensure_dir(out)?;
    panel::emit(&series, &target, &out.join("panel.csv"), &out.join("target.csv"))?;
    let head = header(
        cfg,
        &format!(
            "p={} q={} t={} factor_kind={} noise_kind={} noise_scale={} target_noise_sd={} rep={}",
            a.p, a.q, a.t, a.factor_kind, a.noise_kind, a.noise_scale, a.target_noise_sd, a.rep
        ),
    );
    let mut h = vec!["row_id".to_string()];
    h.extend(numbered("factor_", sim.k));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    write_table(&out.join("true_row_loadings.csv"), &head, &h, &labelled_matrix(series.row_labels(), &truth.row_loadings))?;
    let mut h = vec!["col_id".to_string()];
    h.extend(numbered("factor_", sim.r));
    let h: Vec<&str> = h.iter().map(String::as_str).collect();
    write_table(&out.join("true_col_loadings.csv"), &head, &h, &labelled_matrix(series.col_labels(), &truth.col_loadings))?;
    let coef: Vec<Vec<String>> = truth
        .alpha
        .iter()
        .enumerate()
        .map(|(i, v)| vec!["alpha".into(), (i + 1).to_string(), v.to_string()])
        .chain(truth.beta.iter().enumerate().map(|(j, v)| vec!["beta".into(), (j + 1).to_string(), v.to_string()]))
        .collect();
    write_table(&out.join("true_coefficients.csv"), &head, &["name", "index", "value"], &coef)
}

pub fn planted(cfg: &Resolved, preset: PlantedPreset, out: &Path) -> Result<(), CliError> {
    let mut pc = match preset {
        PlantedPreset::Default => PlantedConfig::default(),
        PlantedPreset::Strong => PlantedConfig::strong(),
    };
    if let Some(s) = cfg.seed {
        pc.seed = s;
    }
    let fx = simulate::planted_fixture(&pc)?;
    ensure_dir(out)?;
    panel::emit(&fx.series, &fx.target, &out.join("panel.csv"), &out.join("target.csv"))?;
    println!("p={} q={} t={} seed={}", pc.p, pc.q, pc.t, pc.seed);
    Ok(())
}

fn keep(c: &SimConfig, filter: (Option<usize>, Option<usize>, Option<usize>)) -> bool {
    filter.0.is_none_or(|p| p == c.p) && filter.1.is_none_or(|q| q == c.q) && filter.2.is_none_or(|t| t == c.t)
}

pub fn mc(cfg: &Resolved, table: u8, reps: usize, filter: (Option<usize>, Option<usize>, Option<usize>), out: &Path) -> Result<(), CliError> {
    let seed = cfg.seed_or_default();
    let head = header(cfg, &format!("table={table} reps={reps}"));
    if table == 3 {
        let t3 = Table3Config::standard(reps, seed);
        let res = simulate::run_table3(&t3)?;
        let rows: Vec<Vec<String>> = res
            .rows
            .iter()
            .map(|r| {
                vec![
                    format!("{:.1}", r.alpha),
                    r.noisy_msfe.to_string(),
                    r.refined_msfe.to_string(),
                    r.reduction_pct.to_string(),
                    res.n_reps.to_string(),
                    res.n_failed.to_string(),
                    res.n_fallback.to_string(),
                    res.n_noise_removed.to_string(),
                    res.n_exact_screen.to_string(),
                ]
            })
            .collect();
        return write_table(
            out,
            &head,
            &[
                "alpha",
                "noisy_msfe",
                "refined_msfe",
                "reduction_pct",
                "n_reps",
                "n_failed",
                "n_fallback",
                "n_noise_removed",
                "n_exact_screen",
            ],
            &rows,
        );
    }
    let grid = if table == 1 {
        simulate::table1_grid(reps, seed)
    } else {
        simulate::table2_grid(reps, seed)
    };
    let cells: Vec<SimConfig> = grid.into_iter().filter(|c| keep(c, filter)).collect();
    if cells.is_empty() {
        return Err(CliError::Usage("no cell matches the --p/--q/--t filter".into()));
    }
    let results = if table == 1 {
        simulate::run_table1(&cells)?
    } else {
        simulate::run_table2(&cells)?
    };
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|c| {
            vec![
                c.table.to_string(),
                c.config.factor_kind.to_string(),
                c.config.noise_kind.to_string(),
                c.config.p.to_string(),
                c.config.q.to_string(),
                c.config.t.to_string(),
                c.mean.to_string(),
                c.sd.to_string(),
                c.n_reps.to_string(),
                c.n_failed.to_string(),
                c.config.seed.to_string(),
            ]
        })
        .collect();
    write_table(
        out,
        &head,
        &["table", "factor_kind", "noise_kind", "p", "q", "t", "mean", "sd", "n_reps", "n_failed", "cell_seed"],
        &rows,
    )
}

pub fn normality(cfg: &Resolved, reps: usize, fixed_panel: bool, out: &Path) -> Result<(), CliError> {
    let mut nc = NormalityConfig::standard(reps, cfg.seed_or_default());
    nc.fixed_panel = fixed_panel;
    let (samples, failed) = simulate::run_normality(&nc)?;
    ensure_dir(out)?;
    let head = header(cfg, &format!("reps={reps} fixed_panel={fixed_panel} failed={failed}"));
    let names: Vec<String> = samples
        .iter()
        .map(|s| format!("alpha={}:{}", s.alpha_weight, s.estimand.as_str()))
        .collect();
    let names_ref: Vec<&str> = names.iter().map(String::as_str).collect();
    let n = samples.iter().map(|s| s.standardized.len()).max().unwrap_or(0);
    let wide: Vec<Vec<String>> = (0..n)
        .map(|i| {
            samples
                .iter()
                .map(|s| s.standardized.get(i).map_or_else(String::new, f64::to_string))
                .collect()
        })
        .collect();
    write_table(&out.join("standardized.csv"), &head, &names_ref, &wide)?;
    let mut qq = Vec::new();
    for s in &samples {
        for (z, v) in &s.qq {
            qq.push(vec![s.alpha_weight.to_string(), s.estimand.as_str().into(), z.to_string(), v.to_string()]);
        }
    }
    write_table(&out.join("qq.csv"), &head, &["alpha", "estimand", "normal_quantile", "sample_quantile"], &qq)?;
    let summary: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let (mean, sd) = simulate::mean_sd(&s.errors);
            vec![
                s.alpha_weight.to_string(),
                s.estimand.as_str().into(),
                s.errors.len().to_string(),
                mean.to_string(),
                sd.to_string(),
                s.qq_corr.to_string(),
                s.zero_spread.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join("summary.csv"),
        &head,
        &["alpha", "estimand", "n", "mean_error", "sd_error", "qq_corr", "zero_spread"],
        &summary,
    )
}
