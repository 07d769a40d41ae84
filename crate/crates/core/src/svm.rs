//! Linear soft-margin SVM, one-vs-one, trained by dual coordinate ascent.
//!
//! Each binary subproblem maximizes the L1-loss dual
//!
//! ```text
//! D(a) = sum_i a_i - 1/2 |w(a)|^2,   w(a) = sum_i a_i y_i x_i,   0 <= a_i <= C
//! ```
//!
//! over inputs augmented with a constant 1, so the last component of `w`
//! is the bias. One coordinate is optimized exactly per step (clipped
//! Newton step on a quadratic) with `w` kept up to date, costing `O(d)`.
//! A run stops once a full pass and a follow-up audit both see every
//! projected gradient within `eps`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{check_input, vote_winner, PixelClassifier};
use crate::error::{Error, Result};
use crate::labels::{SampleSet, Scaler};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub c: f64,
    pub eps: f64,
    /// Cap on full passes over the data per binary subproblem.
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            c: 1.0,
            eps: 0.01,
            max_iter: 1000,
            seed: 42,
        }
    }
}

/// Result of one dual solve.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Weights over the augmented input; the last entry is the bias.
    pub w: Vec<f64>,
    pub passes: usize,
    pub converged: bool,
    /// Largest projected-gradient magnitude at the final iterate.
    pub max_violation: f64,
    /// Dual objective after every coordinate update (only when tracing).
    pub trace: Vec<f64>,
}

/// Projected gradient of the dual (minimization form) at coordinate `i`.
fn projected_gradient(g: f64, alpha: f64, c: f64) -> f64 {
    if alpha <= 0.0 {
        g.min(0.0)
    } else if alpha >= c {
        g.max(0.0)
    } else {
        g
    }
}

fn dot_aug(w: &[f64], x: &[f64]) -> f64 {
    let d = x.len();
    x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + w[d]
}

pub fn dual_objective(alpha: &[f64], w: &[f64]) -> f64 {
    alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Largest projected-gradient magnitude of `(alpha, w)` on the data.
pub fn max_kkt_violation(x: &[f64], y: &[f64], d: usize, alpha: &[f64], w: &[f64], c: f64) -> f64 {
    x.chunks_exact(d)
        .zip(y)
        .zip(alpha)
        .map(|((xi, &yi), &a)| projected_gradient(yi * dot_aug(w, xi) - 1.0, a, c).abs())
        .fold(0.0, f64::max)
}

/// Solves one binary dual. `x` is `n x d` row-major, `y` holds +-1.
pub fn solve_dual(
    x: &[f64],
    y: &[f64],
    d: usize,
    c: f64,
    eps: f64,
    max_iter: usize,
    seed: u64,
    trace: bool,
) -> DualSolution {
    let n = y.len();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; d + 1];
    let qdiag: Vec<f64> = x
        .chunks_exact(d)
        .map(|xi| xi.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng::seeded(seed);
    let mut log = Vec::new();
    let mut objective = 0.0;
    let mut passes = 0;
    let mut converged = false;

    while passes < max_iter {
        order.shuffle(&mut rng);
        let mut pass_max = 0f64;
        for &i in &order {
            let xi = &x[i * d..(i + 1) * d];
            let g = y[i] * dot_aug(&w, xi) - 1.0;
            let pg = projected_gradient(g, alpha[i], c);
            pass_max = pass_max.max(pg.abs());
            if pg == 0.0 {
                continue;
            }
            let old = alpha[i];
            alpha[i] = (old - g / qdiag[i]).clamp(0.0, c);
            let delta = alpha[i] - old;
            if delta == 0.0 {
                continue;
            }
            let step = delta * y[i];
            for (wj, xj) in w.iter_mut().zip(xi) {
                *wj += step * xj;
            }
            w[d] += step;
            if trace {
                objective += -delta * g - 0.5 * delta * delta * qdiag[i];
                log.push(objective);
            }
        }
        passes += 1;
        if pass_max <= eps && max_kkt_violation(x, y, d, &alpha, &w, c) <= eps {
            converged = true;
            break;
        }
    }
    let max_violation = max_kkt_violation(x, y, d, &alpha, &w, c);
    DualSolution {
        alpha,
        w,
        passes,
        converged,
        max_violation,
        trace: log,
    }
}

/// One pairwise machine: positive decision votes for `positive`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    pub positive: u8,
    pub negative: u8,
    pub w: Vec<f64>,
    pub b: f64,
    /// Nonzero dual variables as `(training sample index, alpha)`.
    pub support: Vec<(usize, f64)>,
    pub passes: usize,
    pub converged: bool,
    pub max_violation: f64,
}

impl BinaryMachine {
    pub fn decision(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.w).map(|(a, b)| a * b).sum::<f64>() + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    classes: Vec<u8>,
    pairwise: Vec<BinaryMachine>,
    scaler: Scaler,
    config: SvmConfig,
    warnings: Vec<String>,
}

impl SvmModel {
    pub fn classes(&self) -> &[u8] {
        &self.classes
    }
    pub fn pairwise(&self) -> &[BinaryMachine] {
        &self.pairwise
    }
    pub fn scaler(&self) -> &Scaler {
        &self.scaler
    }
    pub fn config(&self) -> &SvmConfig {
        &self.config
    }
    /// Checks that one machine exists per class pair, in pair order, with
    /// weights matching the scaler's dimension.
    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k < 2 || !self.classes.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Validation("SVM classes must be at least 2 and strictly increasing".into()));
        }
        let pairs = self
            .classes
            .iter()
            .enumerate()
            .flat_map(|(i, &a)| self.classes[i + 1..].iter().map(move |&b| (a, b)));
        if self.pairwise.len() != k * (k - 1) / 2 {
            return Err(Error::Validation(format!("{} machines for {k} classes", self.pairwise.len())));
        }
        for (m, (a, b)) in self.pairwise.iter().zip(pairs) {
            if (m.positive, m.negative) != (a, b) || m.w.len() != self.scaler.dim() || !m.b.is_finite() {
                return Err(Error::Validation(format!("machine {a} vs {b} is malformed")));
            }
        }
        Ok(())
    }

    /// Non-convergence notices collected during training.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Pairwise decision values for an input that is already standardized.
    pub fn decision_values_scaled(&self, z: &[f64]) -> Vec<f64> {
        self.pairwise.iter().map(|m| m.decision(z)).collect()
    }

    /// Pairwise decision values for a raw feature vector.
    pub fn decision_values(&self, x: &[f32]) -> Result<Vec<f64>> {
        check_input(x, self.scaler.dim())?;
        let mut z = vec![0.0; x.len()];
        self.scaler.transform_into(x, &mut z);
        Ok(self.decision_values_scaled(&z))
    }

    /// Majority vote over pairwise decisions (`>= 0` votes positive).
    pub fn vote(&self, decisions: &[f64]) -> (u8, Vec<(u8, usize)>) {
        let mut votes: Vec<(u8, usize)> = self.classes.iter().map(|&c| (c, 0)).collect();
        for (m, &dv) in self.pairwise.iter().zip(decisions) {
            let winner = if dv >= 0.0 { m.positive } else { m.negative };
            let slot = self.classes.binary_search(&winner).expect("pair classes in model");
            votes[slot].1 += 1;
        }
        (vote_winner(&votes).expect("at least two classes"), votes)
    }
}

/// Predicts the class of a raw feature vector; the stored scaler is applied
/// exactly once.
pub fn svm_predict(model: &SvmModel, x: &[f32]) -> Result<(u8, Vec<(u8, usize)>)> {
    let dv = model.decision_values(x)?;
    Ok(model.vote(&dv))
}

impl PixelClassifier for SvmModel {
    fn n_features(&self) -> usize {
        self.scaler.dim()
    }
    fn predict_pixel(&self, x: &[f32]) -> Result<u8> {
        svm_predict(self, x).map(|(c, _)| c)
    }
}

/// Per-pair audit of a trained model against its training samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PairAudit {
    pub positive: u8,
    pub negative: u8,
    /// Largest projected-gradient magnitude over the pair's samples.
    pub max_violation: f64,
    /// `max |w - sum_i alpha_i y_i x_i|` over augmented coordinates.
    pub weight_residual: f64,
    pub alpha_in_box: bool,
}

/// Recomputes KKT conditions from the stored dual variables.
pub fn audit_kkt(model: &SvmModel, samples: &SampleSet) -> Vec<PairAudit> {
    let d = samples.n_features();
    let c = model.config.c;
    model
        .pairwise
        .iter()
        .map(|m| {
            let mut alpha = vec![0.0; samples.len()];
            for &(i, a) in &m.support {
                alpha[i] = a;
            }
            let mut w_sum = vec![0.0; d + 1];
            let mut max_violation = 0f64;
            let mut in_box = true;
            let wb: Vec<f64> = m.w.iter().copied().chain([m.b]).collect();
            for (i, &label) in samples.labels().iter().enumerate() {
                let y = if label == m.positive {
                    1.0
                } else if label == m.negative {
                    -1.0
                } else {
                    continue;
                };
                let mut z = vec![0.0; d];
                model.scaler.transform_into(samples.row(i), &mut z);
                let g = y * m.decision(&z) - 1.0;
                max_violation = max_violation.max(projected_gradient(g, alpha[i], c).abs());
                in_box &= (0.0..=c).contains(&alpha[i]);
                for (s, zj) in w_sum.iter_mut().zip(z.iter().chain([&1.0])) {
                    *s += alpha[i] * y * zj;
                }
            }
            let weight_residual = w_sum.iter().zip(&wb).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            PairAudit {
                positive: m.positive,
                negative: m.negative,
                max_violation,
                weight_residual,
                alpha_in_box: in_box,
            }
        })
        .collect()
}

/// Trains `k (k - 1) / 2` pairwise machines on standardized features.
/// Running out of passes is reported through [`SvmModel::warnings`], not
/// as an error.
pub fn train_linear_svm(samples: &SampleSet, config: &SvmConfig) -> Result<SvmModel> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no training samples".into()));
    }
    let classes = samples.classes();
    if classes.len() < 2 {
        return Err(Error::DegenerateModel(format!(
            "SVM needs at least 2 classes, found {classes:?}"
        )));
    }
    if !(config.c > 0.0 && config.eps > 0.0 && config.max_iter > 0) {
        return Err(Error::Validation("C, eps and max_iter must be positive".into()));
    }
    let d = samples.n_features();
    let scaler = Scaler::fit(samples)?;
    // standardize in f64, matching the path taken at prediction time
    let mut scaled = vec![0.0; samples.len() * d];
    for (i, out) in scaled.chunks_exact_mut(d).enumerate() {
        scaler.transform_into(samples.row(i), out);
    }
    let pairs: Vec<(u8, u8)> = classes
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| classes[i + 1..].iter().map(move |&b| (a, b)))
        .collect();

    let pairwise: Vec<BinaryMachine> = pairs
        .par_iter()
        .enumerate()
        .map(|(p, &(pos, neg))| {
            let members: Vec<usize> = (0..samples.len())
                .filter(|&i| samples.labels()[i] == pos || samples.labels()[i] == neg)
                .collect();
            let mut x = Vec::with_capacity(members.len() * d);
            let mut y = Vec::with_capacity(members.len());
            for &i in &members {
                x.extend_from_slice(&scaled[i * d..(i + 1) * d]);
                y.push(if samples.labels()[i] == pos { 1.0 } else { -1.0 });
            }
            let sol = solve_dual(&x, &y, d, config.c, config.eps, config.max_iter, rng::derive(config.seed, &[p as u64]), false);
            let support = members
                .iter()
                .zip(&sol.alpha)
                .filter(|(_, &a)| a != 0.0)
                .map(|(&i, &a)| (i, a))
                .collect();
            BinaryMachine {
                positive: pos,
                negative: neg,
                b: sol.w[d],
                w: sol.w[..d].to_vec(),
                support,
                passes: sol.passes,
                converged: sol.converged,
                max_violation: sol.max_violation,
            }
        })
        .collect();

    let warnings: Vec<String> = pairwise
        .iter()
        .filter(|m| !m.converged)
        .map(|m| {
            format!(
                "pair ({}, {}) stopped after {} passes with KKT violation {:.4} > eps {}",
                m.positive, m.negative, m.passes, m.max_violation, config.eps
            )
        })
        .collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(SvmModel {
        classes,
        pairwise,
        scaler,
        config: config.clone(),
        warnings,
    })
}
