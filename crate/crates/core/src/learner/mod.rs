//! Training of the GHH regressor.
//!
//! The objective has three terms:
//!
//! - classification: `γ_c‖ω‖² + (1/K) Σ max(0, 1 − yᵢ F(xᵢ))²`;
//! - shape: `(γ_s/K_p) Σ_{positives} Σ_n ‖w_{nη} ⋆ xᵢ − (w_{nη}ᵀxᵢ) h‖²`, where
//!   `η = ηᵢ(n)` is the active hyperplane, `⋆` is per-channel circular
//!   correlation and `h` the [`ShapeTemplate`]; in training it is replaced by
//!   the Fourier-domain form with `SᵢᵀSᵢ` averaged over positives;
//! - temporal: `(γ_t/K) Σᵢ Σ_{j ∈ Nᵢ} (F(xᵢ) − F(xⱼ))²` over samples at the same
//!   location in other images.
//!
//! Hyperplanes are added one at a time (component by component), each
//! initialized by a ridge fit to the current margin residuals and refined by
//! trust-region Newton; randomized refinement sweeps follow.

mod core;
mod cv;
mod shape;

pub use self::core::{
    GhhParams, LossWeights, NewtonConfig, ObjectiveTerms, Problem, RefineStats, State, TraceRecord,
};
pub use cv::{cross_validate, log_space, validation_score, write_cv_csv, CvGrid, CvResult, CvRow};
pub use shape::{
    mean_shape_matrices, precompute_shape_quadratic, shape_template, ShapeOperator, ShapeQuadratic,
    ShapeTemplate,
};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghh::{active_index, GhhModel, Hyperplane};
use crate::imagekit::dft::{circular_correlation, RealDft2};
use crate::imagekit::{FeaturePatch, Normalization, NUM_CHANNELS};
use crate::trainset::{fit_pca_upto, project, TrainingSet};

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub gamma_t: f64,
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
    /// Zero-crossing radius of the template; `None` means `(patch_size − 1) / 4`.
    pub beta: Option<f64>,
    /// Train in PCA coordinates.
    pub use_pca: bool,
    /// Reduced dimension; `None` means `min(1024, rank)`.
    pub pca_dim: Option<usize>,
    pub refine_sweeps: usize,
    pub newton_iters: usize,
    pub newton_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub initial_radius: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma_c: 1e-3,
            gamma_s: 1e-4,
            gamma_t: 1e-1,
            n: 4,
            m: 4,
            alpha: 1.0,
            beta: None,
            use_pca: true,
            pca_dim: None,
            refine_sweeps: 3,
            newton_iters: 20,
            newton_tol: 1e-6,
            cg_tol: 1e-6,
            cg_max_iter: 250,
            initial_radius: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn beta_for(&self, patch_size: usize) -> f64 {
        self.beta.unwrap_or((patch_size as f64 - 1.0) / 4.0)
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            hinge: 1.0,
            gamma_c: self.gamma_c,
            gamma_s: self.gamma_s,
            gamma_t: self.gamma_t,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_c", self.gamma_c),
            ("gamma_s", self.gamma_s),
            ("gamma_t", self.gamma_t),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0")));
            }
        }
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument("N and M must be at least 1".into()));
        }
        if !(self.alpha > 0.0) || self.beta.is_some_and(|b| !(b > 0.0)) {
            return Err(Error::InvalidArgument("alpha and beta must be positive".into()));
        }
        if !(self.initial_radius > 0.0) {
            return Err(Error::InvalidArgument("initial trust radius must be positive".into()));
        }
        Ok(())
    }
}

/// Derivative of a loss with respect to every filter tap and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradient {
    pub n: usize,
    pub m: usize,
    /// Piece `n·M + m`, channel-major taps.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl ModelGradient {
    fn from_pieces(n: usize, m: usize, pieces: Vec<Vec<f64>>) -> Self {
        let mut weights = Vec::with_capacity(pieces.len());
        let mut bias = Vec::with_capacity(pieces.len());
        for mut g in pieces {
            bias.push(g.pop().expect("bias entry"));
            weights.push(g);
        }
        Self { n, m, weights, bias }
    }

    pub fn weights(&self, n: usize, m: usize) -> &[f64] {
        &self.weights[n * self.m + m]
    }

    pub fn bias(&self, n: usize, m: usize) -> f64 {
        self.bias[n * self.m + m]
    }
}

impl GhhParams {
    pub fn from_model(model: &GhhModel) -> Self {
        let (n, m) = (model.n(), model.m());
        let mut p = GhhParams::zeros(n, m, NUM_CHANNELS * model.patch_size() * model.patch_size());
        p.delta = model.delta().iter().map(|&d| d as f64).collect();
        for nn in 0..n {
            for mm in 0..m {
                let plane = model.plane(nn, mm);
                p.weights[nn * m + mm] = plane.flat_weights();
                p.bias[nn * m + mm] = plane.bias;
            }
        }
        p
    }

    /// Spatial model from full-resolution parameters.
    pub fn to_model(&self, patch_size: usize, normalization: Normalization) -> Result<GhhModel> {
        let planes = (0..self.n)
            .map(|n| {
                (0..self.m)
                    .map(|m| {
                        let k = self.piece(n, m);
                        Hyperplane::from_flat(patch_size, &self.weights[k], self.bias[k])
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let delta = self.delta.iter().map(|&d| if d < 0.0 { -1 } else { 1 }).collect();
        GhhModel::new(patch_size, delta, planes, normalization)
    }
}

fn check_model_set(model: &GhhModel, ts: &TrainingSet) -> Result<()> {
    if model.patch_size() != ts.patch_size() {
        return Err(Error::Dimension(format!(
            "model patch size {} differs from sample patch size {}",
            model.patch_size(),
            ts.patch_size()
        )));
    }
    if ts.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    Ok(())
}

fn model_loss(
    model: &GhhModel,
    ts: &TrainingSet,
    shape: &ShapeOperator,
    weights: LossWeights,
) -> Result<(ObjectiveTerms, ModelGradient)> {
    check_model_set(model, ts)?;
    let data = ts.to_matrix();
    let problem = Problem::new(&data, shape, weights)?;
    let state = problem.state(GhhParams::from_model(model))?;
    let eval = problem.evaluate(&state);
    let grad = problem.full_gradient(&state, &eval);
    Ok((eval.terms, ModelGradient::from_pieces(model.n(), model.m(), grad)))
}

/// `γ_c‖ω‖² + (1/K) Σ max(0, 1 − yᵢ F(xᵢ))²` and its gradient.
pub fn loss_classification(model: &GhhModel, ts: &TrainingSet, gamma_c: f64) -> Result<(f64, ModelGradient)> {
    let w = LossWeights {
        hinge: 1.0,
        gamma_c,
        gamma_s: 0.0,
        gamma_t: 0.0,
    };
    let (t, g) = model_loss(model, ts, &ShapeOperator::Zero, w)?;
    Ok((t.total, g))
}

/// `(γ_t/K) Σᵢ Σ_{j ∈ Nᵢ} (F(xᵢ) − F(xⱼ))²` and its gradient.
pub fn loss_temporal(model: &GhhModel, ts: &TrainingSet, gamma_t: f64) -> Result<(f64, ModelGradient)> {
    let w = LossWeights {
        hinge: 0.0,
        gamma_c: 0.0,
        gamma_s: 0.0,
        gamma_t,
    };
    let (t, g) = model_loss(model, ts, &ShapeOperator::Zero, w)?;
    Ok((t.total, g))
}

/// Exact spatial shape loss with per-channel circular correlation.
pub fn loss_shape_spatial(model: &GhhModel, ts: &TrainingSet, tmpl: &ShapeTemplate, gamma_s: f64) -> Result<f64> {
    check_model_set(model, ts)?;
    let p = model.patch_size();
    if tmpl.size() != p {
        return Err(Error::Dimension("template size differs from the model patch size".into()));
    }
    let positives: Vec<&FeaturePatch> = ts.positives().map(|s| &s.patch).collect();
    if positives.is_empty() {
        log::warn!("no positive samples: the shape term is zero");
        return Ok(0.0);
    }
    let mut total = crate::numeric::CompensatedSum::new();
    for x in &positives {
        for n in 0..model.n() {
            let plane = model.plane(n, active_index(model, x, n)?);
            for c in 0..NUM_CHANNELS {
                let w = plane.filters[c].taps();
                let xc = x.channel(c);
                let lin = crate::numeric::dot(w, xc);
                let corr = circular_correlation(w, xc, p);
                for (r, h) in corr.iter().zip(tmpl.rolled()) {
                    total.add((r - lin * h).powi(2));
                }
            }
        }
    }
    Ok(gamma_s / positives.len() as f64 * total.value())
}

/// `(γ_s/K_p) Σ_nm K_nm W_nmᵀ Q W_nm` with its gradient mapped back to taps.
///
/// Fails with [`Error::StaleOccupancy`] if the model changed since `sq` was
/// built or refreshed.
pub fn loss_shape_fourier(model: &GhhModel, sq: &ShapeQuadratic, gamma_s: f64) -> Result<(f64, ModelGradient)> {
    if sq.revision() != model.revision() {
        return Err(Error::StaleOccupancy {
            built: sq.revision(),
            current: model.revision(),
        });
    }
    if sq.size() != model.patch_size() {
        return Err(Error::Dimension("shape quadratic size differs from the model".into()));
    }
    let (n_comp, m_planes) = (model.n(), model.m());
    let p2 = model.patch_size() * model.patch_size();
    let mut grad = vec![vec![0.0; NUM_CHANNELS * p2 + 1]; n_comp * m_planes];
    if sq.num_positives() == 0 {
        return Ok((0.0, ModelGradient::from_pieces(n_comp, m_planes, grad)));
    }
    let dft = RealDft2::new(model.patch_size());
    let scale = gamma_s / sq.num_positives() as f64;
    let mut value = crate::numeric::CompensatedSum::new();
    for n in 0..n_comp {
        for m in 0..m_planes {
            let count = sq.occupancy()[n][m] as f64;
            if count == 0.0 {
                continue;
            }
            let plane = model.plane(n, m);
            let g = &mut grad[n * m_planes + m];
            for c in 0..NUM_CHANNELS {
                let wt = nalgebra::DVector::from_vec(dft.forward(plane.filters[c].taps()));
                let qw = sq.q(c) * &wt;
                value.add(count * wt.dot(&qw));
                let back = dft.inverse((qw * (2.0 * scale * count)).as_slice());
                g[c * p2..(c + 1) * p2].copy_from_slice(&back);
            }
        }
    }
    Ok((scale * value.value(), ModelGradient::from_pieces(n_comp, m_planes, grad)))
}

/// Per-sample Fourier shape loss without the mean approximation:
/// `(γ_s/K_p) Σᵢ Σ_n ‖Sᵢ W_{nηᵢ(n)}‖²` with `Sᵢ W = D(x̃ᵢ) W − H (x̃ᵢᵀ W)`.
pub fn loss_shape_fourier_exact(
    model: &GhhModel,
    ts: &TrainingSet,
    tmpl: &ShapeTemplate,
    gamma_s: f64,
) -> Result<f64> {
    check_model_set(model, ts)?;
    if tmpl.size() != model.patch_size() {
        return Err(Error::Dimension("template size differs from the model patch size".into()));
    }
    let dft = RealDft2::new(model.patch_size());
    let h = tmpl.spectrum();
    let kp = ts.num_positives();
    if kp == 0 {
        return Ok(0.0);
    }
    let spectra: Vec<Vec<Vec<f64>>> = model
        .planes()
        .iter()
        .map(|row| {
            row.iter()
                .map(|pl| pl.filters.iter().flat_map(|f| dft.forward(f.taps())).collect())
                .collect()
        })
        .collect();
    let p2 = dft.len();
    let mut total = crate::numeric::CompensatedSum::new();
    for s in ts.positives() {
        let xt: Vec<Vec<f64>> = (0..NUM_CHANNELS).map(|c| dft.forward(s.patch.channel(c))).collect();
        let blocks: Vec<_> = xt.iter().map(|x| dft.correlation_blocks(x)).collect();
        for (n, row) in spectra.iter().enumerate() {
            let wt = &row[active_index(model, &s.patch, n)?];
            for c in 0..NUM_CHANNELS {
                let w = &wt[c * p2..(c + 1) * p2];
                let lin = crate::numeric::dot(&xt[c], w);
                for (dw, hv) in blocks[c].apply(w).iter().zip(h) {
                    total.add((dw - lin * hv).powi(2));
                }
            }
        }
    }
    Ok(gamma_s / kp as f64 * total.value())
}

fn full_resolution_shape(ts: &TrainingSet, tmpl: &ShapeTemplate, gamma_s: f64) -> ShapeOperator {
    if gamma_s == 0.0 {
        return ShapeOperator::Zero;
    }
    let positives: Vec<&FeaturePatch> = ts.positives().map(|s| &s.patch).collect();
    ShapeOperator::fourier(tmpl.size(), mean_shape_matrices(&positives, tmpl))
}

/// The full training objective (shape term in its mean-approximated form).
pub fn total_objective(
    model: &GhhModel,
    ts: &TrainingSet,
    tmpl: &ShapeTemplate,
    cfg: &TrainConfig,
) -> Result<ObjectiveTerms> {
    let shape = full_resolution_shape(ts, tmpl, cfg.gamma_s);
    Ok(model_loss(model, ts, &shape, cfg.loss_weights())?.0)
}

/// Trust-region Newton on hyperplane `(n, m)` of a full-resolution model.
pub fn newton_refine(
    model: &GhhModel,
    index: (usize, usize),
    ts: &TrainingSet,
    tmpl: &ShapeTemplate,
    cfg: &TrainConfig,
) -> Result<GhhModel> {
    let (n, m) = index;
    if n >= model.n() || m >= model.m() {
        return Err(Error::InvalidArgument(format!("hyperplane ({n},{m}) out of range")));
    }
    check_model_set(model, ts)?;
    let shape = full_resolution_shape(ts, tmpl, cfg.gamma_s);
    let data = ts.to_matrix();
    let problem = Problem::new(&data, &shape, cfg.loss_weights())?;
    let mut state = problem.state(GhhParams::from_model(model))?;
    let k = state.params.piece(n, m);
    problem.refine_piece(&mut state, k, &NewtonConfig::from(cfg))?;
    let mut out = model.clone();
    out.set_plane(
        n,
        m,
        Hyperplane::from_flat(model.patch_size(), &state.params.weights[k], state.params.bias[k])?,
    )?;
    Ok(out)
}

/// A trained model and its objective trace.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: GhhModel,
    pub trace: Vec<TraceRecord>,
    /// Dimension the optimization ran in.
    pub reduced_dim: usize,
}

/// Greedy training from an empty model; see the module docs.
pub fn train_greedy(ts: &TrainingSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut trace = Vec::new();
    let mut out = train_greedy_traced(ts, cfg, &mut trace)?;
    out.trace = trace;
    Ok(out)
}

/// Like [`train_greedy`], appending to `trace` as it goes so that the records
/// up to a failure remain available. The returned outcome's trace is empty.
pub fn train_greedy_traced(ts: &TrainingSet, cfg: &TrainConfig, trace: &mut Vec<TraceRecord>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let kp = ts.num_positives();
    if kp == 0 || kp == ts.len() {
        return Err(Error::InvalidArgument(
            "training needs both positive and negative samples".into(),
        ));
    }
    let p = ts.patch_size();
    let data = ts.to_matrix();
    let q = if cfg.gamma_s > 0.0 {
        let tmpl = shape_template(cfg.alpha, cfg.beta_for(p), p)?;
        let positives: Vec<&FeaturePatch> = ts.positives().map(|s| &s.patch).collect();
        Some(mean_shape_matrices(&positives, &tmpl))
    } else {
        None
    };
    let (params, pca) = if cfg.use_pca {
        let basis = fit_pca_upto(&data, cfg.pca_dim.unwrap_or(1024))?;
        log::info!("PCA: {} -> {} dimensions", data.dim, basis.dim());
        let reduced = project(&data, &basis)?;
        let shape = q
            .map(|q| ShapeOperator::reduced(p, &q, &basis))
            .unwrap_or_default();
        let problem = Problem::new(&reduced, &shape, cfg.loss_weights())?;
        let reduced_params = problem.train(cfg, trace)?;
        let mut full = reduced_params.clone();
        full.dim = data.dim;
        for k in 0..full.weights.len() {
            let w = basis.lift(&reduced_params.weights[k]);
            full.bias[k] -= crate::numeric::dot(&w, &basis.mean);
            full.weights[k] = w;
        }
        (full, Some(basis))
    } else {
        let shape = q.map(|q| ShapeOperator::fourier(p, q)).unwrap_or_default();
        let problem = Problem::new(&data, &shape, cfg.loss_weights())?;
        (problem.train(cfg, trace)?, None)
    };
    let reduced_dim = pca.as_ref().map_or(data.dim, |b| b.dim());
    let mut model = params.to_model(p, *ts.normalization())?;
    model.pca = pca;
    Ok(TrainOutcome {
        model,
        trace: Vec::new(),
        reduced_dim,
    })
}

/// Writes the trace as JSON lines.
pub fn write_trace<W: Write>(mut out: W, trace: &[TraceRecord]) -> Result<()> {
    for r in trace {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}
