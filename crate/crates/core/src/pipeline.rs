//! The full forecasting pipeline: optional screening, alpha-PCA, bilinear LSE.

use nalgebra::{DMatrix, DVector};

use crate::alpha_pca::{self, DimEstimate, DimSelectConfig};
use crate::bilinear_lse::{self, bilinear, LseConfig};
use crate::error::{Error, Result};
use crate::evaluate::{Forecaster, TestInputs};
use crate::screening::{self, ScreenResult};
use crate::types::{project_factor, validate, FactorEstimate, LoadingEstimate, MatrixSeries, ScalarSeries};

/// How the factor counts are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DimChoice {
    Fixed { k: usize, r: usize },
    /// Eigenvalue-ratio estimate; `None` uses the default search limits.
    Estimate(Option<DimSelectConfig>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub row: f64,
    pub col: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub alpha_weight: f64,
    pub dims: DimChoice,
    pub screening: Option<Thresholds>,
    pub lse: LseConfig,
    pub horizon: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            alpha_weight: 0.0,
            dims: DimChoice::Estimate(None),
            screening: None,
            lse: LseConfig::default(),
            horizon: 1,
        }
    }
}

/// Everything needed to forecast from a new full-size observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastModel {
    pub p: usize,
    pub q: usize,
    pub kept_rows: Vec<usize>,
    pub kept_cols: Vec<usize>,
    pub row_loadings: DMatrix<f64>,
    pub col_loadings: DMatrix<f64>,
    pub alpha: DVector<f64>,
    pub beta: DVector<f64>,
}

impl ForecastModel {
    pub fn new(
        p: usize,
        q: usize,
        kept_rows: Vec<usize>,
        kept_cols: Vec<usize>,
        row_loadings: DMatrix<f64>,
        col_loadings: DMatrix<f64>,
        alpha: DVector<f64>,
        beta: DVector<f64>,
    ) -> Result<Self> {
        if kept_rows.iter().any(|&i| i >= p) || kept_cols.iter().any(|&j| j >= q) {
            return Err(Error::InvalidInput("kept index out of range".into()));
        }
        if row_loadings.shape() != (kept_rows.len(), alpha.len()) || col_loadings.shape() != (kept_cols.len(), beta.len()) {
            return Err(Error::DimensionMismatch {
                expected: format!("loadings {}x{} and {}x{}", kept_rows.len(), alpha.len(), kept_cols.len(), beta.len()),
                actual: format!("{:?} and {:?}", row_loadings.shape(), col_loadings.shape()),
            });
        }
        Ok(Self {
            p,
            q,
            kept_rows,
            kept_cols,
            row_loadings,
            col_loadings,
            alpha,
            beta,
        })
    }

    /// Factor matrix of a full `p x q` observation.
    pub fn factor(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.shape() != (self.p, self.q) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.p, self.q),
                actual: format!("{}x{}", x.nrows(), x.ncols()),
            });
        }
        let sub = DMatrix::from_fn(self.kept_rows.len(), self.kept_cols.len(), |a, b| {
            x[(self.kept_rows[a], self.kept_cols[b])]
        });
        Ok(project_factor(&self.row_loadings, &self.col_loadings, &sub))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<f64> {
        let f = self.factor(x)?;
        Ok(bilinear(self.alpha.as_slice(), &f, self.beta.as_slice()))
    }
}

#[derive(Debug, Clone)]
pub struct FittedPipeline {
    pub config: PipelineConfig,
    pub screen: Option<ScreenResult>,
    pub dims: Option<DimEstimate>,
    pub factors: FactorEstimate,
    pub loadings: LoadingEstimate,
    pub model: ForecastModel,
}

impl FittedPipeline {
    /// `alpha' F_hat_t beta` for every time point of the estimation sample.
    pub fn fitted_values(&self) -> Vec<f64> {
        self.factors
            .factors()
            .iter()
            .map(|f| bilinear(self.loadings.alpha().as_slice(), f, self.loadings.beta().as_slice()))
            .collect()
    }
}

/// Fits the pipeline on `series` and `target`, which share a time index.
/// Screening correlates each cell with the contemporaneous target.
pub fn fit(series: &MatrixSeries, target: &ScalarSeries, cfg: &PipelineConfig) -> Result<FittedPipeline> {
    validate(series, target, cfg.horizon)?;
    let (p, q) = (series.nrows(), series.ncols());
    let (work, screen) = match cfg.screening {
        Some(t) => {
            let (refined, res) = screening::refine(series, target, t.row, t.col)?;
            (refined, Some(res))
        }
        None => (series.clone(), None),
    };
    let moments = alpha_pca::moment_matrices(&work, cfg.alpha_weight)?;
    let (k, r, dims) = match cfg.dims {
        DimChoice::Fixed { k, r } => (k, r, None),
        DimChoice::Estimate(sel) => {
            let sel = sel.unwrap_or_else(|| DimSelectConfig::default_for(work.nrows(), work.ncols()));
            let d = alpha_pca::estimate_dims_with_moments(&moments, &sel)?;
            (d.k, d.r, Some(d))
        }
    };
    if k > work.nrows() || r > work.ncols() {
        return Err(Error::InsufficientData {
            needed: if k > work.nrows() { k } else { r },
            available: if k > work.nrows() { work.nrows() } else { work.ncols() },
        });
    }
    let factors = alpha_pca::fit_with_moments(&work, &moments, k, r)?;
    let loadings = bilinear_lse::fit(factors.factors(), target.values(), cfg.horizon, &cfg.lse)?;
    let (kept_rows, kept_cols) = match &screen {
        Some(s) => (s.kept_rows.clone(), s.kept_cols.clone()),
        None => ((0..p).collect(), (0..q).collect()),
    };
    let model = ForecastModel::new(
        p,
        q,
        kept_rows,
        kept_cols,
        factors.row_loadings().clone(),
        factors.col_loadings().clone(),
        loadings.alpha().clone(),
        loadings.beta().clone(),
    )?;
    Ok(FittedPipeline {
        config: *cfg,
        screen,
        dims,
        factors,
        loadings,
        model,
    })
}

/// The pipeline as a rolling-evaluation method.
#[derive(Debug, Clone)]
pub struct FactorPipeline {
    pub label: String,
    pub config: PipelineConfig,
}

impl FactorPipeline {
    pub fn new(label: impl Into<String>, config: PipelineConfig) -> Self {
        Self {
            label: label.into(),
            config,
        }
    }
}

impl Forecaster for FactorPipeline {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn min_train_pairs(&self) -> usize {
        match self.config.dims {
            DimChoice::Fixed { k, r } => 5 * (k + r),
            DimChoice::Estimate(_) => 1,
        }
    }

    fn fit_predict(&self, train_x: &MatrixSeries, train_y: &ScalarSeries, horizon: usize, test: TestInputs<'_>) -> Result<Vec<f64>> {
        let cfg = PipelineConfig { horizon, ..self.config };
        let fitted = fit(train_x, train_y, &cfg)?;
        test.x.iter().map(|x| fitted.model.predict(x)).collect()
    }
}
