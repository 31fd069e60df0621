//! Data-generating processes and the Monte Carlo studies built on them.
//!
//! Every replication draws from its own ChaCha8 stream, selected by the
//! replication index, so results do not depend on how work is scheduled.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::alpha_pca;
use crate::bilinear_lse::{self, bilinear, LseConfig};
use crate::error::{Error, Result};
use crate::evaluate::{factor_loss, kron_loss, msfe, rotations};
use crate::linalg::kron;
use crate::pipeline::{self, DimChoice, PipelineConfig};
use crate::screening;
use crate::types::{default_time_index, FactorKind, Mar1Coefficients, MatrixSeries, NoiseKind, ScalarSeries, SimTruth};

/// Discarded steps before any MAR(1) path is recorded.
pub const BURN_IN: usize = 200;

/// Stream reserved for quantities shared by every replication of a study.
const SHARED_STREAM: u64 = u64::MAX;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a list of identifiers.
pub fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix64(master), |acc, p| splitmix64(acc ^ splitmix64(*p)))
}

/// Generator for replication `rep_index` under `seed`.
pub fn replication_rng(seed: u64, rep_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep_index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub r: usize,
    pub t: usize,
    pub horizon: usize,
    pub factor_kind: FactorKind,
    pub noise_kind: NoiseKind,
    pub alpha_weight: f64,
    pub replications: usize,
    pub seed: u64,
    /// Multiplies every entry of `E_t`.
    pub noise_scale: f64,
    /// Standard deviation of `e_t` in the target equation.
    pub target_noise_sd: f64,
}

impl SimConfig {
    pub fn new(p: usize, q: usize, k: usize, r: usize, t: usize) -> Self {
        Self {
            p,
            q,
            k,
            r,
            t,
            horizon: 1,
            factor_kind: FactorKind::MatrixNormal,
            noise_kind: NoiseKind::Iid,
            alpha_weight: 0.0,
            replications: 200,
            seed: 0,
            noise_scale: 1.0,
            target_noise_sd: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 || self.k == 0 || self.r == 0 || self.k > self.p || self.r > self.q {
            return Err(Error::InvalidInput(format!(
                "need 1 <= k <= p and 1 <= r <= q (p={}, q={}, k={}, r={})",
                self.p, self.q, self.k, self.r
            )));
        }
        if self.horizon == 0 || self.t <= self.horizon || self.t < 2 {
            return Err(Error::InvalidInput(format!("need T > h >= 1 (T={}, h={})", self.t, self.horizon)));
        }
        if self.replications == 0 {
            return Err(Error::InvalidInput("replications must be at least 1".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.target_noise_sd >= 0.0) || !(self.alpha_weight >= -1.0) {
            return Err(Error::InvalidInput("noise scales must be >= 0 and alpha >= -1".into()));
        }
        Ok(())
    }
}

fn uniform_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| rng.sample(StandardNormal))
}

fn ar_diagonal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let c: f64 = rng.random_range(-1.0..1.0);
            if c.abs() < 1.0 {
                break c;
            }
        })
        .collect()
}

/// `diag(left) M diag(right)`.
fn scale_diag(m: &DMatrix<f64>, left: &[f64], right: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| left[i] * m[(i, j)] * right[j])
}

/// `n` consecutive states of `Z_t = diag(a) Z_{t-1} diag(b) + N(0, 1)` after the burn-in.
fn mar1_path(rng: &mut ChaCha8Rng, coef: &Mar1Coefficients, n: usize) -> Vec<DMatrix<f64>> {
    let (rows, cols) = (coef.left.len(), coef.right.len());
    let mut z = DMatrix::zeros(rows, cols);
    let mut out = Vec::with_capacity(n);
    for step in 0..BURN_IN + n {
        z = scale_diag(&z, &coef.left, &coef.right) + normal_matrix(rng, rows, cols);
        if step >= BURN_IN {
            out.push(z.clone());
        }
    }
    out
}

/// Lower Cholesky factor of the matrix with unit diagonal and `1/n` elsewhere.
pub fn equicorrelation_factor(n: usize) -> DMatrix<f64> {
    let off = 1.0 / n as f64;
    let m = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { off });
    Cholesky::new(m).map(|c| c.l()).unwrap_or_else(|| DMatrix::identity(n, n))
}

/// Quantities held fixed within one replication.
#[derive(Debug, Clone)]
pub struct Design {
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
    pub factor_ar: Option<Mar1Coefficients>,
    pub noise_ar: Option<Mar1Coefficients>,
}

pub fn draw_design(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<Design> {
    let row_loadings = uniform_matrix(rng, cfg.p, cfg.k);
    let col_loadings = uniform_matrix(rng, cfg.q, cfg.r);
    let factor_ar = match cfg.factor_kind {
        FactorKind::MatrixNormal => None,
        FactorKind::Mar1 => Some(Mar1Coefficients::new(ar_diagonal(rng, cfg.k), ar_diagonal(rng, cfg.r))?),
    };
    let noise_ar = match cfg.noise_kind {
        NoiseKind::Mar1 => Some(Mar1Coefficients::new(ar_diagonal(rng, cfg.p), ar_diagonal(rng, cfg.q))?),
        _ => None,
    };
    let alpha = loop {
        let a: DVector<f64> = DVector::from_fn(cfg.k, |_, _| rng.sample(StandardNormal));
        let n = a.norm();
        if n > 0.0 {
            break a / n;
        }
    };
    let beta = DVector::from_fn(cfg.r, |_, _| rng.sample(StandardNormal));
    Ok(Design {
        row_loadings,
        col_loadings,
        alpha,
        beta,
        factor_ar,
        noise_ar,
    })
}

fn draw_factors(cfg: &SimConfig, design: &Design, rng: &mut ChaCha8Rng, n: usize) -> Vec<DMatrix<f64>> {
    match &design.factor_ar {
        None => (0..n).map(|_| normal_matrix(rng, cfg.k, cfg.r)).collect(),
        Some(coef) => mar1_path(rng, coef, n),
    }
}

fn draw_noise(cfg: &SimConfig, design: &Design, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let raw = match cfg.noise_kind {
        NoiseKind::Iid => (0..cfg.t).map(|_| normal_matrix(rng, cfg.p, cfg.q)).collect(),
        NoiseKind::Mar1 => {
            let coef = design.noise_ar.as_ref().expect("MAR(1) noise needs coefficients");
            mar1_path(rng, coef, cfg.t)
        }
        NoiseKind::RowColCorr => {
            let a = equicorrelation_factor(cfg.p);
            let b_t = equicorrelation_factor(cfg.q).transpose();
            (0..cfg.t).map(|_| &a * normal_matrix(rng, cfg.p, cfg.q) * &b_t).collect::<Vec<_>>()
        }
    };
    if cfg.noise_scale == 1.0 {
        raw
    } else {
        raw.into_iter().map(|e| e * cfg.noise_scale).collect()
    }
}

/// Panel and target drawn for a given design.
pub fn draw_panel(
    cfg: &SimConfig,
    design: &Design,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<DMatrix<f64>>, MatrixSeries, ScalarSeries)> {
    let h = cfg.horizon;
    // F_{1-h}, ..., F_T; the first h only feed the first targets
    let all_factors = draw_factors(cfg, design, rng, cfg.t + h);
    let noise = draw_noise(cfg, design, rng);
    let e: Vec<f64> = (0..cfg.t)
        .map(|_| cfg.target_noise_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let factors = all_factors[h..].to_vec();
    let c_t = design.col_loadings.transpose();
    let xs: Vec<_> = factors
        .iter()
        .zip(&noise)
        .map(|(f, e)| &design.row_loadings * f * &c_t + e)
        .collect();
    let y: Vec<f64> = (0..cfg.t)
        .map(|t| bilinear(design.alpha.as_slice(), &all_factors[t], design.beta.as_slice()) + e[t])
        .collect();
    let idx = default_time_index(cfg.t);
    Ok((factors, MatrixSeries::new(xs, idx.clone())?, ScalarSeries::new(y, idx)?))
}

fn truth_from(cfg: &SimConfig, design: Design, factors: Vec<DMatrix<f64>>, rep_index: u64) -> SimTruth {
    SimTruth {
        row_loadings: design.row_loadings,
        col_loadings: design.col_loadings,
        factors,
        alpha: design.alpha,
        beta: design.beta,
        factor_kind: cfg.factor_kind,
        noise_kind: cfg.noise_kind,
        factor_ar: design.factor_ar,
        noise_ar: design.noise_ar,
        sigma2: cfg.target_noise_sd * cfg.target_noise_sd,
        horizon: cfg.horizon,
        seed: cfg.seed,
        rep_index,
    }
}

/// One replication: design and panel both drawn from stream `rep_index`.
pub fn gen_replication(cfg: &SimConfig, rep_index: u64) -> Result<(SimTruth, MatrixSeries, ScalarSeries)> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep_index);
    let design = draw_design(cfg, &mut rng)?;
    let (factors, x, y) = draw_panel(cfg, &design, &mut rng)?;
    Ok((truth_from(cfg, design, factors, rep_index), x, y))
}

/// Mean over `t` of the spectral factor loss for one replication.
pub fn replication_factor_loss(cfg: &SimConfig, k: usize, r: usize, rep_index: u64) -> Result<f64> {
    let (truth, x, _) = gen_replication(cfg, rep_index)?;
    let est = alpha_pca::fit(&x, k, r, cfg.alpha_weight)?;
    let rot = rotations(&truth, &est)?;
    let losses = factor_loss(&truth, &est, &rot)?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// Kronecker log-loss of the fitted loadings for one replication.
pub fn replication_kron_loss(cfg: &SimConfig, rep_index: u64) -> Result<f64> {
    let (truth, x, y) = gen_replication(cfg, rep_index)?;
    let est = alpha_pca::fit(&x, cfg.k, cfg.r, cfg.alpha_weight)?;
    let loadings = bilinear_lse::fit(est.factors(), y.values(), cfg.horizon, &LseConfig::default())?;
    let rot = rotations(&truth, &est)?;
    kron_loss(&truth, &loadings, &rot)
}

/// One cell of a loss table.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub table: u8,
    pub config: SimConfig,
    pub mean: f64,
    pub sd: f64,
    pub n_reps: usize,
    pub n_failed: usize,
    /// Per-replication values of the successful replications, by index.
    pub values: Vec<f64>,
}

/// Sample mean and standard deviation (denominator `n - 1`).
pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_reps<F>(reps: usize, f: F) -> (Vec<f64>, usize)
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    let out: Vec<Result<f64>> = (0..reps as u64).into_par_iter().map(f).collect();
    let failed = out.iter().filter(|r| r.is_err()).count();
    (out.into_iter().filter_map(|r| r.ok()).collect(), failed)
}

fn cell_seed(master: u64, table: u8, cfg: &SimConfig) -> u64 {
    derive_seed(
        master,
        &[
            table as u64,
            cfg.p as u64,
            cfg.q as u64,
            cfg.t as u64,
            cfg.factor_kind as u64,
            cfg.noise_kind as u64,
        ],
    )
}

pub const TABLE_SIZES: [(usize, usize); 3] = [(5, 10), (10, 10), (20, 20)];
pub const TABLE2_T: [usize; 4] = [100, 200, 400, 5000];

/// Factor-loss grid: three sizes, `T` in `{pq/2, pq, 2pq}`, six DGPs.
pub fn table1_grid(replications: usize, master_seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for fk in FactorKind::ALL {
        for nk in NoiseKind::ALL {
            for (p, q) in TABLE_SIZES {
                for t in [p * q / 2, p * q, 2 * p * q] {
                    let mut cfg = SimConfig::new(p, q, 3, 2, t);
                    cfg.factor_kind = fk;
                    cfg.noise_kind = nk;
                    cfg.replications = replications;
                    cfg.seed = cell_seed(master_seed, 1, &cfg);
                    out.push(cfg);
                }
            }
        }
    }
    out
}

/// Loading-loss grid: three sizes, `T` in `{100, 200, 400, 5000}`, six DGPs.
pub fn table2_grid(replications: usize, master_seed: u64) -> Vec<SimConfig> {
    let mut out = Vec::new();
    for fk in FactorKind::ALL {
        for nk in NoiseKind::ALL {
            for (p, q) in TABLE_SIZES {
                for t in TABLE2_T {
                    let mut cfg = SimConfig::new(p, q, 3, 2, t);
                    cfg.factor_kind = fk;
                    cfg.noise_kind = nk;
                    cfg.replications = replications;
                    cfg.seed = cell_seed(master_seed, 2, &cfg);
                    out.push(cfg);
                }
            }
        }
    }
    out
}

pub fn run_table1_cell(cfg: &SimConfig) -> Result<CellResult> {
    cfg.validate()?;
    let (values, n_failed) = run_reps(cfg.replications, |i| replication_factor_loss(cfg, cfg.k, cfg.r, i));
    let (mean, sd) = mean_sd(&values);
    Ok(CellResult {
        table: 1,
        config: *cfg,
        mean,
        sd,
        n_reps: values.len(),
        n_failed,
        values,
    })
}

pub fn run_table2_cell(cfg: &SimConfig) -> Result<CellResult> {
    cfg.validate()?;
    let (values, n_failed) = run_reps(cfg.replications, |i| replication_kron_loss(cfg, i));
    let (mean, sd) = mean_sd(&values);
    Ok(CellResult {
        table: 2,
        config: *cfg,
        mean,
        sd,
        n_reps: values.len(),
        n_failed,
        values,
    })
}

pub fn run_table1(cells: &[SimConfig]) -> Result<Vec<CellResult>> {
    cells.iter().map(run_table1_cell).collect()
}

pub fn run_table2(cells: &[SimConfig]) -> Result<Vec<CellResult>> {
    cells.iter().map(run_table2_cell).collect()
}

/// Screening study: a signal panel padded with pure-noise rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table3Config {
    pub signal: SimConfig,
    pub extra_rows: usize,
    pub extra_cols: usize,
    pub threshold: f64,
    pub train_fraction: f64,
    pub alphas: Vec<f64>,
}

impl Table3Config {
    pub fn standard(replications: usize, master_seed: u64) -> Self {
        let mut signal = SimConfig::new(10, 10, 3, 2, 1000);
        signal.factor_kind = FactorKind::Mar1;
        signal.noise_kind = NoiseKind::Iid;
        signal.replications = replications;
        signal.seed = cell_seed(master_seed, 3, &signal);
        Self {
            signal,
            extra_rows: 5,
            extra_cols: 5,
            threshold: 0.06,
            train_fraction: 0.8,
            alphas: (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect(),
        }
    }
}

/// Appends `extra_rows` rows and `extra_cols` columns of N(0,1) noise to every observation.
pub fn pad_with_noise(series: &MatrixSeries, extra_rows: usize, extra_cols: usize, rng: &mut ChaCha8Rng) -> Result<MatrixSeries> {
    let (p, q) = (series.nrows(), series.ncols());
    let values = series
        .matrices()
        .iter()
        .map(|x| {
            let mut out = normal_matrix(rng, p + extra_rows, q + extra_cols);
            out.view_mut((0, 0), (p, q)).copy_from(x);
            out
        })
        .collect();
    let mut rows = series.row_labels().to_vec();
    rows.extend((0..extra_rows).map(|i| format!("noise_r{}", i + 1)));
    let mut cols = series.col_labels().to_vec();
    cols.extend((0..extra_cols).map(|j| format!("noise_c{}", j + 1)));
    MatrixSeries::with_labels(values, series.time_index().to_vec(), rows, cols)
}

/// Per-replication outcome of the screening study.
#[derive(Debug, Clone, PartialEq)]
pub struct Table3Rep {
    pub noisy: Vec<f64>,
    pub refined: Vec<f64>,
    pub kept_rows: Vec<usize>,
    pub kept_cols: Vec<usize>,
    /// Screening left too few rows or columns and the full panel was used.
    pub fell_back: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Row {
    pub alpha: f64,
    pub noisy_msfe: f64,
    pub refined_msfe: f64,
    /// `100 (noisy - refined) / noisy`, from the means.
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table3Result {
    pub rows: Vec<Table3Row>,
    pub n_reps: usize,
    pub n_failed: usize,
    pub n_fallback: usize,
    /// Replications in which every padded row and column was removed and every signal one kept.
    pub n_exact_screen: usize,
    /// Replications in which every padded row and column was removed.
    pub n_noise_removed: usize,
    pub reps: Vec<Table3Rep>,
}

fn test_msfe(fit: &pipeline::FittedPipeline, x: &MatrixSeries, y: &ScalarSeries, start: usize, h: usize) -> Result<f64> {
    let n_pairs = x.len() - h;
    let pred: Vec<f64> = (start..n_pairs)
        .map(|t| fit.model.predict(x.get(t)))
        .collect::<Result<_>>()?;
    msfe(&pred, &y.values()[start + h..])
}

pub fn table3_replication(cfg: &Table3Config, rep_index: u64) -> Result<Table3Rep> {
    let sig = &cfg.signal;
    let mut rng = replication_rng(sig.seed, rep_index);
    let design = draw_design(sig, &mut rng)?;
    let (_, x_signal, y) = draw_panel(sig, &design, &mut rng)?;
    let x = pad_with_noise(&x_signal, cfg.extra_rows, cfg.extra_cols, &mut rng)?;
    let h = sig.horizon;
    let n_pairs = x.len() - h;
    let start = (cfg.train_fraction * n_pairs as f64).round() as usize;
    let train_x = x.window(0, start + 1)?;
    let train_y = ScalarSeries::new(y.values()[..=start].to_vec(), y.time_index()[..=start].to_vec())?;

    let screen = screening::correlation_map(&train_x, &train_y)
        .and_then(|m| screening::screen(m, cfg.threshold, cfg.threshold));
    let usable = match &screen {
        Ok(s) => s.kept_rows.len() >= sig.k && s.kept_cols.len() >= sig.r,
        Err(Error::AllRemoved { .. }) => false,
        Err(e) => return Err(Error::InvalidInput(e.to_string())),
    };
    let (kept_rows, kept_cols) = match (&screen, usable) {
        (Ok(s), true) => (s.kept_rows.clone(), s.kept_cols.clone()),
        _ => ((0..x.nrows()).collect(), (0..x.ncols()).collect()),
    };
    let refined_train = train_x.select(&kept_rows, &kept_cols)?;
    let refined_full = x.select(&kept_rows, &kept_cols)?;

    let mut noisy = Vec::with_capacity(cfg.alphas.len());
    let mut refined = Vec::with_capacity(cfg.alphas.len());
    for &alpha in &cfg.alphas {
        let pc = PipelineConfig {
            alpha_weight: alpha,
            dims: DimChoice::Fixed { k: sig.k, r: sig.r },
            screening: None,
            lse: LseConfig::default(),
            horizon: h,
        };
        let full = pipeline::fit(&train_x, &train_y, &pc)?;
        noisy.push(test_msfe(&full, &x, &y, start, h)?);
        let sub = pipeline::fit(&refined_train, &train_y, &pc)?;
        refined.push(test_msfe(&sub, &refined_full, &y, start, h)?);
    }
    Ok(Table3Rep {
        noisy,
        refined,
        kept_rows,
        kept_cols,
        fell_back: !usable,
    })
}

pub fn run_table3(cfg: &Table3Config) -> Result<Table3Result> {
    cfg.signal.validate()?;
    let out: Vec<Result<Table3Rep>> = (0..cfg.signal.replications as u64)
        .into_par_iter()
        .map(|i| table3_replication(cfg, i))
        .collect();
    let n_failed = out.iter().filter(|r| r.is_err()).count();
    let reps: Vec<Table3Rep> = out.into_iter().filter_map(|r| r.ok()).collect();
    if reps.is_empty() {
        return Err(Error::Degenerate("every screening replication failed".into()));
    }
    let n = reps.len() as f64;
    let rows = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(a, &alpha)| {
            let noisy_msfe = reps.iter().map(|r| r.noisy[a]).sum::<f64>() / n;
            let refined_msfe = reps.iter().map(|r| r.refined[a]).sum::<f64>() / n;
            Table3Row {
                alpha,
                noisy_msfe,
                refined_msfe,
                reduction_pct: 100.0 * (noisy_msfe - refined_msfe) / noisy_msfe,
            }
        })
        .collect();
    let (p, q) = (cfg.signal.p, cfg.signal.q);
    let noise_removed = |r: &Table3Rep| r.kept_rows.iter().all(|&i| i < p) && r.kept_cols.iter().all(|&j| j < q);
    Ok(Table3Result {
        rows,
        n_reps: reps.len(),
        n_failed,
        n_fallback: reps.iter().filter(|r| r.fell_back).count(),
        n_exact_screen: reps
            .iter()
            .filter(|r| noise_removed(r) && r.kept_rows.len() == p && r.kept_cols.len() == q)
            .count(),
        n_noise_removed: reps.iter().filter(|r| !r.fell_back && noise_removed(r)).count(),
        reps,
    })
}

/// Sampling study of the loading estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalityConfig {
    pub sim: SimConfig,
    pub alphas: Vec<f64>,
    /// Reuse one panel draw for every replication (a degenerate check).
    pub fixed_panel: bool,
}

impl NormalityConfig {
    pub fn standard(replications: usize, master_seed: u64) -> Self {
        let mut sim = SimConfig::new(10, 10, 3, 2, 400);
        sim.replications = replications;
        sim.seed = derive_seed(master_seed, &[4]);
        Self {
            sim,
            alphas: vec![-1.0, 0.0, 1.0],
            fixed_panel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimand {
    Alpha1,
    Beta1,
    Kron1,
}

impl Estimand {
    pub const ALL: [Estimand; 3] = [Estimand::Alpha1, Estimand::Beta1, Estimand::Kron1];

    pub fn as_str(self) -> &'static str {
        match self {
            Estimand::Alpha1 => "alpha_1",
            Estimand::Beta1 => "beta_1",
            Estimand::Kron1 => "kron_1",
        }
    }
}

/// Standardized sampling errors of one estimand at one `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalitySample {
    pub alpha_weight: f64,
    pub estimand: Estimand,
    /// Raw first-coordinate estimates after sign alignment.
    pub estimates: Vec<f64>,
    /// Estimate minus its rotated target.
    pub errors: Vec<f64>,
    pub standardized: Vec<f64>,
    /// `(normal quantile, sorted standardized value)` pairs.
    pub qq: Vec<(f64, f64)>,
    pub qq_corr: f64,
    pub zero_spread: bool,
}

/// Blom plotting positions mapped through the standard normal quantile.
pub fn normal_scores(n: usize) -> Vec<f64> {
    let z = Normal::new(0.0, 1.0).expect("standard normal");
    let nf = n as f64;
    (1..=n).map(|i| z.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect()
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    crate::screening::pearson(a, b).unwrap_or(0.0)
}

/// Builds the standardized sample, QQ pairs and QQ correlation.
pub fn summarize_sample(alpha_weight: f64, estimand: Estimand, estimates: Vec<f64>, errors: Vec<f64>) -> NormalitySample {
    let (mean, sd) = mean_sd(&errors);
    let zero_spread = !(sd >= 1e-10);
    let standardized: Vec<f64> = if zero_spread {
        vec![0.0; errors.len()]
    } else {
        errors.iter().map(|e| (e - mean) / sd).collect()
    };
    let mut sorted = standardized.clone();
    sorted.sort_by(f64::total_cmp);
    let scores = normal_scores(sorted.len());
    let qq_corr = if zero_spread { 0.0 } else { correlation(&scores, &sorted) };
    NormalitySample {
        alpha_weight,
        estimand,
        estimates,
        errors,
        standardized,
        qq: scores.into_iter().zip(sorted).collect(),
        qq_corr,
        zero_spread,
    }
}

/// `[(estimate, error)]` for the three estimands in one replication.
fn normality_replication(
    sim: &SimConfig,
    design: &Design,
    alpha_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<[(f64, f64); 3]> {
    let (factors, x, y) = draw_panel(sim, design, rng)?;
    let truth = truth_from(sim, design.clone(), factors, 0);
    let est = alpha_pca::fit(&x, sim.k, sim.r, alpha_weight)?;
    let loadings = bilinear_lse::fit(est.factors(), y.values(), sim.horizon, &LseConfig::default())?;
    let rot = rotations(&truth, &est)?;
    let a_rot = rot.h_r.tr_mul(&truth.alpha);
    let b_rot = rot.h_c.tr_mul(&truth.beta);
    let a_norm = a_rot.norm();
    if !(a_norm > 0.0) {
        return Err(Error::Degenerate("rotated alpha is zero".into()));
    }
    let a_target = &a_rot / a_norm;
    let b_target = b_rot.clone() * a_norm;
    let (mut a_hat, mut b_hat) = (loadings.alpha().clone(), loadings.beta().clone());
    if a_hat.dot(&a_target) < 0.0 {
        a_hat.neg_mut();
        b_hat.neg_mut();
    }
    let kron_hat = kron(b_hat.as_slice(), a_hat.as_slice());
    let kron_target = kron(b_rot.as_slice(), a_rot.as_slice());
    Ok([
        (a_hat[0], a_hat[0] - a_target[0]),
        (b_hat[0], b_hat[0] - b_target[0]),
        (kron_hat[0], kron_hat[0] - kron_target[0]),
    ])
}

/// Samples for every `alpha` and estimand; the design is shared by all replications.
pub fn run_normality(cfg: &NormalityConfig) -> Result<(Vec<NormalitySample>, usize)> {
    let sim = &cfg.sim;
    sim.validate()?;
    let design = draw_design(sim, &mut replication_rng(sim.seed, SHARED_STREAM))?;
    let mut samples = Vec::new();
    let mut failed = 0;
    for (ai, &alpha) in cfg.alphas.iter().enumerate() {
        let out: Vec<Result<[(f64, f64); 3]>> = (0..sim.replications as u64)
            .into_par_iter()
            .map(|i| {
                let stream = if cfg.fixed_panel { SHARED_STREAM - 1 } else { i };
                let mut rng = replication_rng(derive_seed(sim.seed, &[ai as u64]), stream);
                normality_replication(sim, &design, alpha, &mut rng)
            })
            .collect();
        failed += out.iter().filter(|r| r.is_err()).count();
        let ok: Vec<[(f64, f64); 3]> = out.into_iter().filter_map(|r| r.ok()).collect();
        for (e, estimand) in Estimand::ALL.into_iter().enumerate() {
            let estimates = ok.iter().map(|row| row[e].0).collect();
            let errors = ok.iter().map(|row| row[e].1).collect();
            samples.push(summarize_sample(alpha, estimand, estimates, errors));
        }
    }
    Ok((samples, failed))
}

/// Shape and strength of the planted-factor fixture.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedConfig {
    pub p: usize,
    pub q: usize,
    pub t: usize,
    pub signal_rows: usize,
    pub signal_cols: usize,
    pub k: usize,
    pub r: usize,
    /// Diagonal of both MAR(1) factor coefficient matrices.
    pub persistence: f64,
    pub signal_noise_sd: f64,
    pub pure_noise_sd: f64,
    pub target_noise_sd: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            p: 14,
            q: 10,
            t: 107,
            signal_rows: 10,
            signal_cols: 7,
            k: 2,
            r: 2,
            persistence: 0.9,
            signal_noise_sd: 0.8,
            pure_noise_sd: 2.0,
            target_noise_sd: 0.3,
            seed: 2,
        }
    }
}

impl PlantedConfig {
    /// Every cell loads on a `3 x 2` factor with little noise.
    pub fn strong() -> Self {
        Self {
            signal_rows: 14,
            signal_cols: 10,
            k: 3,
            r: 2,
            persistence: 0.5,
            signal_noise_sd: 0.3,
            ..Self::default()
        }
    }
}

/// A centred panel whose leading `signal_rows x signal_cols` block carries a
/// low-rank factor structure that drives the target; the remaining rows and
/// columns are pure noise.
#[derive(Debug, Clone)]
pub struct PlantedFixture {
    pub series: MatrixSeries,
    pub target: ScalarSeries,
    pub config: PlantedConfig,
}

pub fn planted_fixture(cfg: &PlantedConfig) -> Result<PlantedFixture> {
    if cfg.signal_rows > cfg.p || cfg.signal_cols > cfg.q || cfg.k > cfg.signal_rows || cfg.r > cfg.signal_cols || cfg.t < 3 {
        return Err(Error::InvalidInput("planted block does not fit the panel".into()));
    }
    let mut rng = replication_rng(cfg.seed, 0);
    let rr = uniform_matrix(&mut rng, cfg.signal_rows, cfg.k);
    let cc = uniform_matrix(&mut rng, cfg.signal_cols, cfg.r);
    let coef = Mar1Coefficients::new(vec![cfg.persistence; cfg.k], vec![cfg.persistence; cfg.r])?;
    let factors = mar1_path(&mut rng, &coef, cfg.t);
    let alpha = {
        let a: DVector<f64> = DVector::from_fn(cfg.k, |_, _| rng.sample(StandardNormal));
        a.normalize()
    };
    let beta = DVector::from_fn(cfg.r, |_, _| rng.sample::<f64, _>(StandardNormal));
    let c_t = cc.transpose();
    let mut xs: Vec<DMatrix<f64>> = factors
        .iter()
        .map(|f| {
            let mut x = normal_matrix(&mut rng, cfg.p, cfg.q) * cfg.pure_noise_sd;
            let block = &rr * f * &c_t + normal_matrix(&mut rng, cfg.signal_rows, cfg.signal_cols) * cfg.signal_noise_sd;
            x.view_mut((0, 0), (cfg.signal_rows, cfg.signal_cols)).copy_from(&block);
            x
        })
        .collect();
    let mut y = vec![0.0; cfg.t];
    for t in 1..cfg.t {
        y[t] = bilinear(alpha.as_slice(), &factors[t - 1], beta.as_slice())
            + cfg.target_noise_sd * rng.sample::<f64, _>(StandardNormal);
    }
    y[0] = cfg.target_noise_sd * rng.sample::<f64, _>(StandardNormal);
    let xbar = alpha_pca::mean_matrix(&xs);
    for x in &mut xs {
        *x -= &xbar;
    }
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    for v in &mut y {
        *v -= ybar;
    }
    let idx = default_time_index(cfg.t);
    Ok(PlantedFixture {
        series: MatrixSeries::new(xs, idx.clone())?,
        target: ScalarSeries::new(y, idx)?,
        config: cfg.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replication_is_deterministic() {
        let mut cfg = SimConfig::new(5, 4, 2, 2, 30);
        cfg.seed = 99;
        cfg.factor_kind = FactorKind::Mar1;
        cfg.noise_kind = NoiseKind::Mar1;
        let (_, a, ya) = gen_replication(&cfg, 3).unwrap();
        let (_, b, yb) = gen_replication(&cfg, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ya, yb);
        let (_, c, _) = gen_replication(&cfg, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn target_follows_lagged_factors() {
        let mut cfg = SimConfig::new(4, 3, 2, 1, 20);
        cfg.target_noise_sd = 0.0;
        cfg.noise_scale = 0.0;
        let (truth, x, y) = gen_replication(&cfg, 0).unwrap();
        truth.check().unwrap();
        for t in 1..20 {
            let fit = bilinear(truth.alpha.as_slice(), &truth.factors[t - 1], truth.beta.as_slice());
            assert!((y.values()[t] - fit).abs() < 1e-12);
        }
        let expect = &truth.row_loadings * &truth.factors[5] * truth.col_loadings.transpose();
        assert!((x.get(5) - expect).amax() < 1e-12);
    }

    #[test]
    fn scalar_row_col_noise_is_standard() {
        assert_eq!(equicorrelation_factor(1), DMatrix::identity(1, 1));
    }

    #[test]
    fn equicorrelation_factor_reproduces_covariance() {
        let a = equicorrelation_factor(3);
        let u = &a * a.transpose();
        assert!((u[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((u[(0, 2)] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn grids_have_expected_sizes() {
        assert_eq!(table1_grid(1, 7).len(), 54);
        assert_eq!(table2_grid(1, 7).len(), 72);
        assert_eq!(Table3Config::standard(1, 0).alphas.len(), 21);
    }

    #[test]
    fn blom_scores_are_symmetric() {
        let s = normal_scores(5);
        assert!((s[0] + s[4]).abs() < 1e-12);
        assert!(s[2].abs() < 1e-12);
    }

    #[test]
    fn mean_sd_hand_case() {
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0_f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn fixed_panel_without_noise_flags_zero_spread() {
        let mut cfg = NormalityConfig::standard(6, 1);
        cfg.sim.t = 60;
        cfg.sim.target_noise_sd = 0.0;
        cfg.fixed_panel = true;
        cfg.alphas = vec![0.0];
        let (samples, failed) = run_normality(&cfg).unwrap();
        assert_eq!(failed, 0);
        assert_eq!(samples.len(), 3);
        assert!(samples.iter().all(|s| s.zero_spread));
    }

    #[test]
    fn planted_fixture_shape() {
        let fx = planted_fixture(&PlantedConfig::default()).unwrap();
        assert_eq!((fx.series.len(), fx.series.nrows(), fx.series.ncols()), (107, 14, 10));
        let m = alpha_pca::mean_matrix(fx.series.matrices());
        assert!(m.amax() < 1e-12);
    }
}
