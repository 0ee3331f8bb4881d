//! Multidimensional two-parameter IRT baseline.
//!
//! `P(correct) = σ(αᵢᵀθₘ − βᵢ)`, fitted by MAP with unit Gaussian priors on
//! every parameter. Fitting alternates first-order updates over item blocks
//! `(αᵢ, βᵢ)` and ability blocks `θₘ`; each block step is backtracked until it
//! lowers that block's objective, so the total objective never increases.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::datamodel::PerformanceMatrix;
use crate::error::{Error, Result};
use crate::estimators::{self, EstimateReport, SubsetScores};
use crate::math::{self, bernoulli_ll, dot, sigmoid, Matrix};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IrtConfig {
    pub dim: usize,
    pub max_sweeps: usize,
    /// Convergence: total improvement over `window` sweeps below `tol`.
    pub tol: f64,
    pub window: usize,
    pub prior_std: f64,
    pub init_std: f64,
    /// Gradient steps per block per sweep.
    pub inner_steps: usize,
}

impl Default for IrtConfig {
    fn default() -> Self {
        IrtConfig {
            dim: 3,
            max_sweeps: 500,
            tol: 1e-6,
            window: 10,
            prior_std: 1.0,
            init_std: 0.1,
            inner_steps: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrtModel {
    pub dim: usize,
    pub item_ids: Vec<alloc::string::String>,
    pub model_ids: Vec<alloc::string::String>,
    /// n_items × dim discriminations.
    pub alphas: Matrix,
    pub betas: Vec<f64>,
    /// n_models × dim abilities.
    pub thetas: Matrix,
    pub seed: u64,
    pub config: IrtConfig,
    /// Negative log-posterior after every sweep (index 0 is the initial value).
    pub nll_history: Vec<f64>,
}

impl IrtModel {
    pub fn final_nll(&self) -> f64 {
        self.nll_history.last().copied().unwrap_or(f64::NAN)
    }

    pub fn predict(&self, item: usize, theta: &[f64]) -> f64 {
        irt_predict(self.alphas.row(item), self.betas[item], theta)
    }
}

/// `σ(αᵀθ − β)`.
#[inline]
pub fn irt_predict(alpha: &[f64], beta: f64, theta: &[f64]) -> f64 {
    sigmoid(dot(alpha, theta) - beta)
}

/// Generic backtracked gradient step on a block objective.
///
/// `f` evaluates the block objective, `grad` returns objective and gradient.
/// `step` is adapted in place (grown on success, halved on failure).
fn block_descent<F, G>(params: &mut [f64], step: &mut f64, steps: usize, f: F, grad: G)
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]) -> f64,
{
    let mut g = vec![0.0; params.len()];
    let mut trial = vec![0.0; params.len()];
    for _ in 0..steps {
        let f0 = grad(params, &mut g);
        let gn2: f64 = g.iter().map(|v| v * v).sum();
        if gn2 < 1e-20 {
            return;
        }
        let mut accepted = false;
        for _ in 0..30 {
            for ((t, p), gv) in trial.iter_mut().zip(params.iter()).zip(&g) {
                *t = p - *step * gv;
            }
            let f1 = f(&trial);
            if f1 <= f0 - 1e-4 * *step * gn2 {
                params.copy_from_slice(&trial);
                *step = (*step * 1.5).min(100.0);
                accepted = true;
                break;
            }
            *step *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

struct ItemData<'a> {
    y: &'a [f64],
}

fn item_objective(p: &[f64], thetas: &Matrix, data: &ItemData, prior_prec: f64) -> f64 {
    let dim = thetas.cols();
    let (alpha, beta) = (&p[..dim], p[dim]);
    let mut nll = 0.0;
    for (m, &y) in data.y.iter().enumerate() {
        nll -= bernoulli_ll(y, dot(alpha, thetas.row(m)) - beta);
    }
    nll + 0.5 * prior_prec * p.iter().map(|v| v * v).sum::<f64>()
}

fn item_gradient(p: &[f64], thetas: &Matrix, data: &ItemData, prior_prec: f64, g: &mut [f64]) -> f64 {
    let dim = thetas.cols();
    let (alpha, beta) = (&p[..dim], p[dim]);
    g.iter_mut().zip(p).for_each(|(gv, v)| *gv = prior_prec * v);
    let mut nll = 0.5 * prior_prec * p.iter().map(|v| v * v).sum::<f64>();
    for (m, &y) in data.y.iter().enumerate() {
        let th = thetas.row(m);
        let z = dot(alpha, th) - beta;
        nll -= bernoulli_ll(y, z);
        let r = sigmoid(z) - y;
        for (gv, t) in g[..dim].iter_mut().zip(th) {
            *gv += r * t;
        }
        g[dim] -= r;
    }
    nll
}

/// Frozen item parameters and one model's outcomes on a subset of items.
struct AbilityData<'a> {
    alphas: &'a Matrix,
    betas: &'a [f64],
    items: &'a [usize],
    y: &'a [f64],
}

/// Objective (and optionally gradient) of one ability vector.
fn ability_objective(theta: &[f64], data: &AbilityData, prior_prec: f64, g: Option<&mut [f64]>) -> f64 {
    let mut nll = 0.5 * prior_prec * theta.iter().map(|v| v * v).sum::<f64>();
    match g {
        None => {
            for (&i, &y) in data.items.iter().zip(data.y) {
                nll -= bernoulli_ll(y, dot(data.alphas.row(i), theta) - data.betas[i]);
            }
        }
        Some(g) => {
            g.iter_mut().zip(theta).for_each(|(gv, v)| *gv = prior_prec * v);
            for (&i, &y) in data.items.iter().zip(data.y) {
                let alpha = data.alphas.row(i);
                let z = dot(alpha, theta) - data.betas[i];
                nll -= bernoulli_ll(y, z);
                let r = sigmoid(z) - y;
                for (gv, a) in g.iter_mut().zip(alpha) {
                    *gv += r * a;
                }
            }
        }
    }
    nll
}

/// Full negative log-posterior.
pub fn negative_log_posterior(matrix: &PerformanceMatrix, alphas: &Matrix, betas: &[f64], thetas: &Matrix, prior_std: f64) -> f64 {
    let prec = 1.0 / (prior_std * prior_std);
    let mut nll = 0.0;
    for m in 0..matrix.n_models() {
        for i in 0..matrix.n_items() {
            nll -= bernoulli_ll(matrix.score(m, i), dot(alphas.row(i), thetas.row(m)) - betas[i]);
        }
    }
    let prior: f64 = alphas.as_slice().iter().chain(betas).chain(thetas.as_slice()).map(|v| v * v).sum();
    nll + 0.5 * prec * prior
}

/// MAP fit of the M2PL model to a complete score matrix.
pub fn fit_irt(matrix: &PerformanceMatrix, config: &IrtConfig, seed: u64) -> Result<IrtModel> {
    let (n_models, n_items, dim) = (matrix.n_models(), matrix.n_items(), config.dim);
    if n_models < 2 || n_items < 2 {
        return Err(Error::InvalidArgument("IRT needs at least two models and two items".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("IRT dimension must be positive".into()));
    }
    let prec = 1.0 / (config.prior_std * config.prior_std);
    let mut rng = rng::substream(seed, rng::IRT);
    let mut alphas = Matrix::zeros(n_items, dim);
    let mut betas = vec![0.0; n_items];
    let mut thetas = Matrix::zeros(n_models, dim);
    for v in alphas.as_mut_slice().iter_mut().chain(betas.iter_mut()).chain(thetas.as_mut_slice()) {
        *v = rng::normal(&mut rng, 0.0, config.init_std);
    }
    // columns of the matrix, one per item
    let columns: Vec<Vec<f64>> = (0..n_items)
        .map(|i| (0..n_models).map(|m| matrix.score(m, i)).collect())
        .collect();
    let mut item_steps = vec![0.1; n_items];
    let mut model_steps = vec![0.1; n_models];
    let mut history = vec![negative_log_posterior(matrix, &alphas, &betas, &thetas, config.prior_std)];
    let mut block = vec![0.0; dim + 1];
    let all_items: Vec<usize> = (0..n_items).collect();

    for sweep in 1..=config.max_sweeps {
        for i in 0..n_items {
            block[..dim].copy_from_slice(alphas.row(i));
            block[dim] = betas[i];
            let data = ItemData { y: &columns[i] };
            block_descent(
                &mut block,
                &mut item_steps[i],
                config.inner_steps,
                |p| item_objective(p, &thetas, &data, prec),
                |p, g| item_gradient(p, &thetas, &data, prec, g),
            );
            alphas.row_mut(i).copy_from_slice(&block[..dim]);
            betas[i] = block[dim];
        }
        for m in 0..n_models {
            let data = AbilityData {
                alphas: &alphas,
                betas: &betas,
                items: &all_items,
                y: matrix.row(m),
            };
            let mut theta = thetas.row(m).to_vec();
            block_descent(
                &mut theta,
                &mut model_steps[m],
                config.inner_steps,
                |t| ability_objective(t, &data, prec, None),
                |t, g| ability_objective(t, &data, prec, Some(g)),
            );
            thetas.row_mut(m).copy_from_slice(&theta);
        }
        let nll = negative_log_posterior(matrix, &alphas, &betas, &thetas, config.prior_std);
        if nll.is_nan() {
            return Err(Error::IrtNan { sweep });
        }
        history.push(nll);
        if history.len() > config.window {
            let old = history[history.len() - 1 - config.window];
            if old - nll < config.tol {
                break;
            }
        }
    }
    Ok(IrtModel {
        dim,
        item_ids: matrix.item_ids().to_vec(),
        model_ids: matrix.model_ids().to_vec(),
        alphas,
        betas,
        thetas,
        seed,
        config: *config,
        nll_history: history,
    })
}

/// Item embedding `(αᵢ, βᵢ)`, one row per item.
pub fn irt_item_coords(model: &IrtModel) -> Matrix {
    let mut out = Matrix::zeros(model.betas.len(), model.dim + 1);
    for i in 0..model.betas.len() {
        out.row_mut(i)[..model.dim].copy_from_slice(model.alphas.row(i));
        out[(i, model.dim)] = model.betas[i];
    }
    out
}

/// MAP ability for a new model from its scores on `items` only.
pub fn fit_ability(model: &IrtModel, items: &[usize], scores: &[f64]) -> Result<Vec<f64>> {
    let prec = 1.0 / (model.config.prior_std * model.config.prior_std);
    let data = AbilityData {
        alphas: &model.alphas,
        betas: &model.betas,
        items,
        y: scores,
    };
    let mut theta = vec![0.0; model.dim];
    let mut step = 0.1;
    let mut prev = ability_objective(&theta, &data, prec, None);
    let mut stall = 0;
    for _ in 0..model.config.max_sweeps {
        block_descent(
            &mut theta,
            &mut step,
            model.config.inner_steps,
            |t| ability_objective(t, &data, prec, None),
            |t, g| ability_objective(t, &data, prec, Some(g)),
        );
        let cur = ability_objective(&theta, &data, prec, None);
        if !cur.is_finite() {
            return Err(Error::AbilityDivergence);
        }
        stall = if prev - cur < model.config.tol { stall + 1 } else { 0 };
        prev = cur;
        if stall >= model.config.window {
            break;
        }
    }
    if theta.iter().all(|v| v.is_finite()) {
        Ok(theta)
    } else {
        Err(Error::AbilityDivergence)
    }
}

/// IRT++ estimate for one target model.
///
/// The anchor estimate is the weighted subset average. The IRT estimate
/// keeps observed scores on the subset and predicts the rest from an ability
/// fitted to the subset alone. The two are blended exactly like the
/// cluster and regression estimates in [`estimators::combine`].
pub fn irt_pp_estimate(model: &IrtModel, ss: &SubsetScores) -> Result<EstimateReport> {
    let n = model.betas.len();
    let idx = &ss.selection.indices;
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(Error::InvalidArgument(alloc::format!("selected item {bad} is not in the fitted model")));
    }
    let theta = fit_ability(model, idx, &ss.scores)?;
    let mut observed = vec![None; n];
    for (&i, &y) in idx.iter().zip(&ss.scores) {
        observed[i] = Some(y);
    }
    let total: f64 = (0..n)
        .map(|i| observed[i].unwrap_or_else(|| model.predict(i, &theta)))
        .sum();
    let irt_est = total / n as f64;
    let predicted: Vec<f64> = idx.iter().map(|&i| model.predict(i, &theta)).collect();
    Ok(estimators::combine(estimators::cluster_estimate(ss), irt_est, ss, &predicted))
}

/// Mean Bernoulli log-loss of predictions against outcomes.
pub fn log_loss(predictions: &[f64], outcomes: &[f64]) -> f64 {
    let eps = 1e-12;
    predictions
        .iter()
        .zip(outcomes)
        .map(|(&p, &y)| {
            let p = p.clamp(eps, 1.0 - eps);
            -(y * math::ln(p) + (1.0 - y) * math::ln(1.0 - p))
        })
        .sum::<f64>()
        / predictions.len() as f64
}
