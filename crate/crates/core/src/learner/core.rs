//! Objective, per-hyperplane trust-region Newton and greedy growth on plain
//! feature vectors (full-resolution patches or their PCA coordinates).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::shape::ShapeOperator;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::numeric::{axpy, conjugate_gradient, dot, norm, steihaug_cg, CompensatedSum};
use crate::trainset::SampleMatrix;

const NONE: usize = usize::MAX;

/// GHH parameters over `dim`-dimensional inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GhhParams {
    pub n: usize,
    pub m: usize,
    pub dim: usize,
    pub delta: Vec<f64>,
    /// Piece `k = n·M + m`.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Hyperplanes in use per component; absent ones are ignored.
    pub present: Vec<usize>,
}

impl GhhParams {
    /// All pieces present, zero weights, positive signs.
    pub fn zeros(n: usize, m: usize, dim: usize) -> Self {
        Self {
            n,
            m,
            dim,
            delta: vec![1.0; n],
            weights: vec![vec![0.0; dim]; n * m],
            bias: vec![0.0; n * m],
            present: vec![m; n],
        }
    }

    /// No piece present yet.
    pub fn empty(n: usize, m: usize, dim: usize) -> Self {
        Self {
            present: vec![0; n],
            ..Self::zeros(n, m, dim)
        }
    }

    pub fn piece(&self, n: usize, m: usize) -> usize {
        n * self.m + m
    }

    /// `F(x)`; components without hyperplanes contribute nothing.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut f = 0.0;
        for n in 0..self.n {
            let best = (0..self.present[n])
                .map(|m| {
                    let k = self.piece(n, m);
                    dot(&self.weights[k], x) + self.bias[k]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if self.present[n] > 0 {
                f += self.delta[n] * best;
            }
        }
        f
    }
}

/// Relative weights of the objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Multiplier of the mean squared hinge (1 for the full objective).
    pub hinge: f64,
    pub gamma_c: f64,
    pub gamma_s: f64,
    pub gamma_t: f64,
}

/// Objective value broken down by term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    /// `γ_c‖ω‖²` plus the weighted mean squared hinge.
    pub classification: f64,
    pub shape: f64,
    pub temporal: f64,
    pub total: f64,
}

/// Samples plus the objective definition.
pub struct Problem<'a> {
    data: &'a SampleMatrix,
    shape: &'a ShapeOperator,
    weights: LossWeights,
    group_of: Vec<usize>,
    positives: Vec<usize>,
}

/// Cached per-piece quantities for a parameter set.
#[derive(Clone, Debug)]
pub struct State {
    pub params: GhhParams,
    resp: Vec<Vec<f64>>,
    quad: Vec<f64>,
    norm_sq: Vec<f64>,
}

/// Everything derived from the current responses.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub f: Vec<f64>,
    /// `active[i·N + n]`: winning hyperplane of component `n` on sample `i`.
    pub active: Vec<usize>,
    /// `max(0, 1 − yᵢ Fᵢ)`.
    pub violation: Vec<f64>,
    /// `∂L/∂Fᵢ` of the hinge and temporal terms.
    pub dldf: Vec<f64>,
    /// `K_nm` per piece.
    pub occupancy: Vec<usize>,
    pub terms: ObjectiveTerms,
}

/// Trust-region Newton settings for one hyperplane.
#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub max_iter: usize,
    pub grad_tol: f64,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
    pub initial_radius: f64,
}

impl From<&TrainConfig> for NewtonConfig {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            max_iter: cfg.newton_iters,
            grad_tol: cfg.newton_tol,
            cg_tol: cfg.cg_tol,
            cg_max_iter: cfg.cg_max_iter,
            initial_radius: cfg.initial_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RefineStats {
    pub iterations: usize,
    pub accepted: usize,
    pub objective: f64,
}

/// One line of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub phase: String,
    pub component: Option<usize>,
    pub plane: Option<usize>,
    pub sweep: Option<usize>,
    pub newton_iterations: usize,
    pub classification: f64,
    pub shape: f64,
    pub temporal: f64,
    pub objective: f64,
}

impl<'a> Problem<'a> {
    pub fn new(data: &'a SampleMatrix, shape: &'a ShapeOperator, weights: LossWeights) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("empty training set".into()));
        }
        for (name, v) in [
            ("hinge", weights.hinge),
            ("gamma_c", weights.gamma_c),
            ("gamma_s", weights.gamma_s),
            ("gamma_t", weights.gamma_t),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        let shape_dim = match shape {
            ShapeOperator::Zero => data.dim,
            ShapeOperator::Dense(q) => q.nrows(),
            ShapeOperator::Fourier { dft, q } => dft.len() * q.len(),
        };
        if shape_dim != data.dim {
            return Err(Error::Dimension(format!(
                "shape operator acts on {shape_dim} dimensions, samples have {}",
                data.dim
            )));
        }
        let mut group_of = vec![NONE; data.len()];
        for (g, members) in data.groups.iter().enumerate() {
            for &i in members {
                group_of[i] = g;
            }
        }
        let positives = (0..data.len()).filter(|&i| data.labels[i] > 0.0).collect();
        Ok(Self {
            data,
            shape,
            weights,
            group_of,
            positives,
        })
    }

    pub fn data(&self) -> &SampleMatrix {
        self.data
    }

    pub fn weights(&self) -> LossWeights {
        self.weights
    }

    pub fn num_positives(&self) -> usize {
        self.positives.len()
    }

    fn responses(&self, z: &[f64], b: f64) -> Vec<f64> {
        (0..self.data.len()).map(|i| dot(self.data.row(i), z) + b).collect()
    }

    fn shape_active(&self) -> bool {
        self.weights.gamma_s > 0.0 && !self.positives.is_empty() && !self.shape.is_zero()
    }

    fn quad(&self, z: &[f64]) -> f64 {
        if self.shape_active() {
            self.shape.quad(z)
        } else {
            0.0
        }
    }

    pub fn state(&self, params: GhhParams) -> Result<State> {
        if params.dim != self.data.dim {
            return Err(Error::Dimension(format!(
                "parameters have dimension {}, samples {}",
                params.dim, self.data.dim
            )));
        }
        let resp = (0..params.n * params.m)
            .map(|k| self.responses(&params.weights[k], params.bias[k]))
            .collect();
        let quad = params.weights.iter().map(|z| self.quad(z)).collect();
        let norm_sq = params.weights.iter().map(|z| dot(z, z)).collect();
        Ok(State {
            params,
            resp,
            quad,
            norm_sq,
        })
    }

    pub fn evaluate(&self, state: &State) -> Evaluation {
        self.evaluate_inner(state, None)
    }

    fn evaluate_inner(&self, state: &State, trial: Option<(usize, &[f64], f64, f64)>) -> Evaluation {
        let p = &state.params;
        let k_total = self.data.len();
        let kf = k_total as f64;
        let col = |k: usize| -> &[f64] {
            match trial {
                Some((t, c, _, _)) if t == k => c,
                _ => &state.resp[k],
            }
        };
        let quad = |k: usize| match trial {
            Some((t, _, q, _)) if t == k => q,
            _ => state.quad[k],
        };
        let norm_sq = |k: usize| match trial {
            Some((t, _, _, s)) if t == k => s,
            _ => state.norm_sq[k],
        };

        let mut f = vec![0.0; k_total];
        let mut active = vec![NONE; k_total * p.n];
        for n in 0..p.n {
            let cnt = p.present[n];
            if cnt == 0 {
                continue;
            }
            let cols: Vec<&[f64]> = (0..cnt).map(|m| col(p.piece(n, m))).collect();
            for i in 0..k_total {
                let mut best = cols[0][i];
                let mut bm = 0;
                for (m, c) in cols.iter().enumerate().skip(1) {
                    if c[i] > best {
                        best = c[i];
                        bm = m;
                    }
                }
                active[i * p.n + n] = bm;
                f[i] += p.delta[n] * best;
            }
        }

        let w = self.weights;
        let mut reg = CompensatedSum::new();
        for n in 0..p.n {
            for m in 0..p.present[n] {
                reg.add(norm_sq(p.piece(n, m)));
            }
        }
        let mut hinge = CompensatedSum::new();
        let mut violation = vec![0.0; k_total];
        let mut dldf = vec![0.0; k_total];
        for i in 0..k_total {
            let y = self.data.labels[i];
            let v = (1.0 - y * f[i]).max(0.0);
            violation[i] = v;
            hinge.add(v * v);
            dldf[i] = -w.hinge * 2.0 / kf * y * v;
        }
        let classification = w.gamma_c * reg.value() + w.hinge * hinge.value() / kf;

        let mut occupancy = vec![0usize; p.n * p.m];
        for &i in &self.positives {
            for n in 0..p.n {
                let m = active[i * p.n + n];
                if m != NONE {
                    occupancy[p.piece(n, m)] += 1;
                }
            }
        }
        let shape = if self.shape_active() {
            let s: CompensatedSum = (0..p.n * p.m).map(|k| occupancy[k] as f64 * quad(k)).collect();
            w.gamma_s / self.positives.len() as f64 * s.value()
        } else {
            0.0
        };

        let mut temporal = CompensatedSum::new();
        if w.gamma_t > 0.0 {
            for members in &self.data.groups {
                let g = members.len();
                if g < 2 {
                    continue;
                }
                let mean = members.iter().map(|&i| f[i]).sum::<f64>() / g as f64;
                let mut s = CompensatedSum::new();
                for &i in members {
                    let d = f[i] - mean;
                    s.add(d * d);
                    dldf[i] += w.gamma_t / kf * 4.0 * g as f64 * d;
                }
                temporal.add(2.0 * g as f64 * s.value());
            }
        }
        let temporal = w.gamma_t / kf * temporal.value();
        Evaluation {
            f,
            active,
            violation,
            dldf,
            occupancy,
            terms: ObjectiveTerms {
                classification,
                shape,
                temporal,
                total: classification + shape + temporal,
            },
        }
    }

    /// Gradient with respect to piece `k`: `dim` weight entries then the bias.
    pub fn piece_gradient(&self, state: &State, eval: &Evaluation, k: usize) -> Vec<f64> {
        let p = &state.params;
        let (n, m) = (k / p.m, k % p.m);
        let dim = p.dim;
        let mut g = vec![0.0; dim + 1];
        let mut gb = CompensatedSum::new();
        for i in 0..self.data.len() {
            if eval.active[i * p.n + n] == m {
                let c = eval.dldf[i] * p.delta[n];
                if c != 0.0 {
                    axpy(c, self.data.row(i), &mut g[..dim]);
                    gb.add(c);
                }
            }
        }
        g[dim] = gb.value();
        let z = &p.weights[k];
        axpy(2.0 * self.weights.gamma_c, z, &mut g[..dim]);
        if self.shape_active() && eval.occupancy[k] > 0 {
            let c = 2.0 * self.weights.gamma_s * eval.occupancy[k] as f64 / self.positives.len() as f64;
            axpy(c, &self.shape.apply(z), &mut g[..dim]);
        }
        g
    }

    /// Gradients of every piece.
    pub fn full_gradient(&self, state: &State, eval: &Evaluation) -> Vec<Vec<f64>> {
        (0..state.params.n * state.params.m)
            .map(|k| self.piece_gradient(state, eval, k))
            .collect()
    }

    fn piece_hessian<'s>(&'s self, state: &'s State, eval: &'s Evaluation, k: usize) -> PieceHessian<'s> {
        let p = &state.params;
        let (n, m) = (k / p.m, k % p.m);
        let members: Vec<usize> = (0..self.data.len())
            .filter(|&i| eval.active[i * p.n + n] == m)
            .collect();
        let shape_coef = if self.shape_active() {
            2.0 * self.weights.gamma_s * eval.occupancy[k] as f64 / self.positives.len() as f64
        } else {
            0.0
        };
        PieceHessian {
            problem: self,
            eval,
            members,
            delta: p.delta[n],
            shape_coef,
            scratch: vec![0.0; self.data.len()],
        }
    }

    /// Trust-region Newton on piece `k` with every other piece fixed.
    ///
    /// Inside each step the active sets are frozen; the true objective is
    /// evaluated at the trial point and the step is kept only if it lowers it.
    pub fn refine_piece(&self, state: &mut State, k: usize, cfg: &NewtonConfig) -> Result<RefineStats> {
        let dim = state.params.dim;
        let mut eval = self.evaluate(state);
        check_finite(&eval)?;
        let mut radius = cfg.initial_radius;
        let mut stats = RefineStats {
            objective: eval.terms.total,
            ..Default::default()
        };
        let mut g0 = None;
        for _ in 0..cfg.max_iter {
            stats.iterations += 1;
            let g = self.piece_gradient(state, &eval, k);
            let gn = norm(&g);
            let g0 = *g0.get_or_insert(gn);
            if gn <= 1e-14 || gn <= cfg.grad_tol * g0 {
                break;
            }
            let mut hess = self.piece_hessian(state, &eval, k);
            let cg = steihaug_cg(&g, radius, cfg.cg_tol, cfg.cg_max_iter, |v, out| hess.apply(v, out));
            let s = cg.step;
            if norm(&s) == 0.0 {
                break;
            }
            let mut hs = vec![0.0; dim + 1];
            hess.apply(&s, &mut hs);
            let predicted = -(dot(&g, &s) + 0.5 * dot(&s, &hs));

            let mut z = state.params.weights[k].clone();
            axpy(1.0, &s[..dim], &mut z);
            let b = state.params.bias[k] + s[dim];
            let col = self.responses(&z, b);
            let quad = self.quad(&z);
            let nz = dot(&z, &z);
            let trial = self.evaluate_inner(state, Some((k, &col, quad, nz)));
            check_finite(&trial)?;
            let actual = eval.terms.total - trial.terms.total;
            let rho = if predicted > 0.0 { actual / predicted } else { -1.0 };
            if actual > 0.0 {
                state.params.weights[k] = z;
                state.params.bias[k] = b;
                state.resp[k] = col;
                state.quad[k] = quad;
                state.norm_sq[k] = nz;
                eval = trial;
                stats.accepted += 1;
            }
            if rho < 0.25 {
                radius *= 0.25;
            } else if rho > 0.75 && cg.hit_boundary {
                radius *= 2.0;
            }
            let scale = 1.0 + norm(&state.params.weights[k]) + state.params.bias[k].abs();
            if radius < 1e-12 * scale {
                break;
            }
        }
        stats.objective = eval.terms.total;
        Ok(stats)
    }

    fn set_piece(&self, state: &mut State, k: usize, z: Vec<f64>, b: f64) {
        state.resp[k] = self.responses(&z, b);
        state.quad[k] = self.quad(&z);
        state.norm_sq[k] = dot(&z, &z);
        state.params.weights[k] = z;
        state.params.bias[k] = b;
    }

    /// `argmin (1/K) Σ (zᵀxᵢ + b − tᵢ)² + λ‖z‖²`.
    fn ridge_fit(&self, targets: &[f64], lambda: f64, cfg: &NewtonConfig) -> (Vec<f64>, f64) {
        let data = self.data;
        let (k, dim) = (data.len(), data.dim);
        let kf = k as f64;
        let mut mean = vec![0.0; dim];
        for i in 0..k {
            axpy(1.0 / kf, data.row(i), &mut mean);
        }
        let tbar = targets.iter().sum::<f64>() / kf;
        let mut rhs = vec![0.0; dim];
        for i in 0..k {
            axpy((targets[i] - tbar) / kf, data.row(i), &mut rhs);
        }
        // Σ (tᵢ − t̄) x̄ vanishes, so rhs is already centered.
        let mut tmp = vec![0.0; k];
        let z = conjugate_gradient(&rhs, 1e-10, cfg.cg_max_iter.max(50), |v, out| {
            let mv = dot(&mean, v);
            for (i, t) in tmp.iter_mut().enumerate() {
                *t = (dot(data.row(i), v) - mv) / kf;
            }
            out.iter_mut().zip(v).for_each(|(o, vi)| *o = (lambda + 1e-12) * vi);
            let mut shift = 0.0;
            for (i, &t) in tmp.iter().enumerate() {
                axpy(t, data.row(i), out);
                shift += t;
            }
            axpy(-shift, &mean, out);
        });
        let b = tbar - dot(&z, &mean);
        (z, b)
    }

    /// Greedy hyperplane addition followed by randomized refinement sweeps.
    pub fn train(&self, cfg: &TrainConfig, trace: &mut Vec<TraceRecord>) -> Result<GhhParams> {
        if cfg.n == 0 || cfg.m == 0 {
            return Err(Error::InvalidArgument("N and M must be at least 1".into()));
        }
        let k_total = self.data.len();
        let newton = NewtonConfig::from(cfg);
        let (n_comp, m_planes) = (cfg.n, cfg.m);
        let mut state = self.state(GhhParams::empty(n_comp, m_planes, self.data.dim))?;
        let mut eval = self.evaluate(&state);
        let mut record = |eval: &Evaluation, phase: &str, comp, plane, sweep, iters| {
            trace.push(TraceRecord {
                step: trace.len(),
                phase: phase.into(),
                component: comp,
                plane,
                sweep,
                newton_iterations: iters,
                classification: eval.terms.classification,
                shape: eval.terms.shape,
                temporal: eval.terms.temporal,
                objective: eval.terms.total,
            });
        };
        record(&eval, "init", None, None, None, 0);

        for n in 0..n_comp {
            for m in 0..m_planes {
                let k = state.params.piece(n, m);
                let before = eval.terms.total;
                let residual: Vec<f64> = (0..k_total)
                    .map(|i| self.data.labels[i] * eval.violation[i])
                    .collect();
                let mut best: Option<(State, Evaluation, usize)> = None;
                let signs: &[f64] = if m == 0 { &[1.0, -1.0] } else { &[0.0] };
                for &sign in signs {
                    let mut cand = state.clone();
                    let targets: Vec<f64> = if m == 0 {
                        cand.params.delta[n] = sign;
                        residual.iter().map(|r| sign * r).collect()
                    } else {
                        let d = cand.params.delta[n];
                        (0..k_total)
                            .map(|i| state.resp[state.params.piece(n, eval.active[i * n_comp + n])][i] + d * residual[i])
                            .collect()
                    };
                    cand.params.present[n] = m + 1;
                    let (z, b) = self.ridge_fit(&targets, cfg.gamma_c, &newton);
                    self.set_piece(&mut cand, k, z, b);
                    let stats = self.refine_piece(&mut cand, k, &newton)?;
                    let e = self.evaluate(&cand);
                    if best.as_ref().is_none_or(|(_, be, _)| e.terms.total < be.terms.total) {
                        best = Some((cand, e, stats.iterations));
                    }
                }
                let (cand, e, iters) = best.expect("at least one candidate");
                if e.terms.total <= before {
                    state = cand;
                    eval = e;
                } else {
                    log::warn!(
                        "hyperplane ({n},{m}) did not improve the objective ({:.6e} > {before:.6e}); adding it dormant",
                        e.terms.total
                    );
                    state.params.present[n] = m + 1;
                    let b = if m == 0 {
                        state.params.delta[n] = 1.0;
                        0.0
                    } else {
                        (0..k_total)
                            .map(|i| state.resp[state.params.piece(n, eval.active[i * n_comp + n])][i])
                            .fold(f64::INFINITY, f64::min)
                            - 1.0
                    };
                    self.set_piece(&mut state, k, vec![0.0; self.data.dim], b);
                    eval = self.evaluate(&state);
                }
                record(&eval, "add", Some(n), Some(m), None, iters);
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n_comp * m_planes).collect();
        for sweep in 0..cfg.refine_sweeps {
            order.shuffle(&mut rng);
            for &k in &order {
                let stats = self.refine_piece(&mut state, k, &newton)?;
                eval = self.evaluate(&state);
                record(&eval, "refine", Some(k / m_planes), Some(k % m_planes), Some(sweep), stats.iterations);
            }
        }
        Ok(state.params)
    }
}

fn check_finite(eval: &Evaluation) -> Result<()> {
    if eval.terms.total.is_finite() {
        Ok(())
    } else {
        Err(Error::Numerical(format!(
            "objective is not finite (classification {}, shape {}, temporal {})",
            eval.terms.classification, eval.terms.shape, eval.terms.temporal
        )))
    }
}

/// Generalized Hessian of the objective restricted to one piece, with the
/// active sets and hinge set frozen at `eval`.
struct PieceHessian<'s> {
    problem: &'s Problem<'s>,
    eval: &'s Evaluation,
    members: Vec<usize>,
    delta: f64,
    shape_coef: f64,
    scratch: Vec<f64>,
}

impl PieceHessian<'_> {
    fn apply(&mut self, v: &[f64], out: &mut [f64]) {
        let pr = self.problem;
        let data = pr.data;
        let dim = data.dim;
        let kf = data.len() as f64;
        let w = pr.weights;
        let (vz, vb) = (&v[..dim], v[dim]);
        out.iter_mut().for_each(|o| *o = 0.0);

        // dF_i along v for active members.
        let du = &mut self.scratch;
        du.iter_mut().for_each(|x| *x = 0.0);
        for &i in &self.members {
            du[i] = self.delta * (dot(data.row(i), vz) + vb);
        }
        let mut coef: Vec<f64> = self
            .members
            .iter()
            .map(|&i| {
                if self.eval.violation[i] > 0.0 {
                    w.hinge * 2.0 / kf * du[i]
                } else {
                    0.0
                }
            })
            .collect();
        if w.gamma_t > 0.0 {
            let mut group_mean = std::collections::HashMap::new();
            for (c, &i) in coef.iter_mut().zip(&self.members) {
                let g = pr.group_of[i];
                if g == NONE {
                    continue;
                }
                let members = &data.groups[g];
                if members.len() < 2 {
                    continue;
                }
                let mean = *group_mean
                    .entry(g)
                    .or_insert_with(|| members.iter().map(|&j| du[j]).sum::<f64>() / members.len() as f64);
                *c += w.gamma_t / kf * 4.0 * members.len() as f64 * (du[i] - mean);
            }
        }
        let mut ob = 0.0;
        for (&c, &i) in coef.iter().zip(&self.members) {
            let c = c * self.delta;
            if c != 0.0 {
                axpy(c, data.row(i), &mut out[..dim]);
                ob += c;
            }
        }
        out[dim] = ob;
        axpy(2.0 * w.gamma_c, vz, &mut out[..dim]);
        if self.shape_coef > 0.0 {
            axpy(self.shape_coef, &pr.shape.apply(vz), &mut out[..dim]);
        }
    }
}
