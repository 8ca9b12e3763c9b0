//! Diagnosis machinery for outcome-constrained baselines on the linear
//! model: the path-combination effect of the protected feature, restricted
//! and penalty-constrained least squares, signed relative deviation
//! matrices, and threshold-sweep / approval-rate audits.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{DataError, Dataset};
use crate::model::linear_solve;
use crate::sim::{LinearTheta, ThetaSlot};

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error("design matrix is singular")]
    SingularDesign,
    #[error("constraint residual {residual} did not reach {target} after {iterations} iterations")]
    Nonconvergence { residual: f64, target: f64, iterations: usize },
    #[error("monte-carlo mode requires noise scales (sigma_m, sigma_l)")]
    MissingSigma,
    #[error("prediction vectors have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} policies, got {got}")]
    NotEnoughPolicies { needed: usize, got: usize },
    #[error("thresholds must be strictly decreasing: {0}")]
    BadThresholds(String),
    #[error("baseline policy `{0}` not found")]
    UnknownBaseline(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Which constraint set produced a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintKind {
    Unconstrained,
    /// theta_A_Y = theta_A_M = 0 (protected coefficients dropped).
    ZeroProtected,
    /// theta_A_Y = 0 and theta_M_Y + theta_L_Y * theta_M_L = 0
    /// (direct effect plus the mediated combination).
    ZeroCombination,
}

/// A fitted linear model over the (A, C, M, L, Y) equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub theta: LinearTheta,
    pub constraint: ConstraintKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Path-combination effect of the protected feature on the outcome:
/// `theta_A_Y + theta_A_M * (theta_M_Y + theta_L_Y * theta_M_L)`.
pub fn compute_pse(fit: &LinearFit) -> f64 {
    let th = &fit.theta;
    th.a_y + th.a_m * (th.m_y + th.l_y * th.m_l)
}

fn columns_acmly(dataset: &Dataset) -> Result<[Vec<f64>; 5], AuditError> {
    Ok([
        dataset.column_as_f64("A")?,
        dataset.column_as_f64("C")?,
        dataset.column_as_f64("M")?,
        dataset.column_as_f64("L")?,
        dataset.column_as_f64("Y")?,
    ])
}

fn ols_equation(regressors: &[&[f64]], y: &[f64]) -> Result<Vec<f64>, AuditError> {
    let n = y.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| regressors.iter().map(|r| r[i]).collect()).collect();
    crate::model::ols(&rows, y).map_err(|_| AuditError::SingularDesign)
}

/// Unconstrained per-equation OLS: M on (A, C); L on (A, C, M); Y on
/// (A, C, M, L).
pub fn fit_linear_unconstrained(dataset: &Dataset) -> Result<LinearFit, AuditError> {
    let [a, c, m, l, y] = columns_acmly(dataset)?;
    let bm = ols_equation(&[&a, &c], &m)?;
    let bl = ols_equation(&[&a, &c, &m], &l)?;
    let by = ols_equation(&[&a, &c, &m, &l], &y)?;
    Ok(LinearFit {
        theta: LinearTheta {
            a_m: bm[0],
            c_m: bm[1],
            m_intercept: bm[2],
            a_l: bl[0],
            c_l: bl[1],
            m_l: bl[2],
            l_intercept: bl[3],
            a_y: by[0],
            c_y: by[1],
            m_y: by[2],
            l_y: by[3],
            y_intercept: by[4],
        },
        constraint: ConstraintKind::Unconstrained,
        seed: None,
    })
}

/// Constrained fit with `theta_A_Y = theta_A_M = 0`: the remaining
/// coefficients are the exact OLS solutions of the restricted regressions
/// (M on C; L on A, C, M; Y on C, M, L).
pub fn fit_constrained_nabi(dataset: &Dataset) -> Result<LinearFit, AuditError> {
    let [a, c, m, l, y] = columns_acmly(dataset)?;
    let bm = ols_equation(&[&c], &m)?;
    let bl = ols_equation(&[&a, &c, &m], &l)?;
    let by = ols_equation(&[&c, &m, &l], &y)?;
    Ok(LinearFit {
        theta: LinearTheta {
            a_m: 0.0,
            c_m: bm[0],
            m_intercept: bm[1],
            a_l: bl[0],
            c_l: bl[1],
            m_l: bl[2],
            l_intercept: bl[3],
            a_y: 0.0,
            c_y: by[0],
            m_y: by[1],
            l_y: by[2],
            y_intercept: by[3],
        },
        constraint: ConstraintKind::ZeroProtected,
        seed: None,
    })
}

const KILBERTUS_TOL: f64 = 1e-6;

/// Constrained fit with `theta_A_Y = 0` and
/// `theta_M_Y + theta_L_Y * theta_M_L = 0`.
///
/// The bilinear constraint couples the L and Y equations, so the total
/// squared error is minimized by an augmented-Lagrangian penalty with exact
/// block-coordinate solves, started from a seed-dependent random point. The
/// problem has multiple local minima; different seeds legitimately return
/// different solutions.
pub fn fit_constrained_kilbertus(dataset: &Dataset, seed: u64) -> Result<LinearFit, AuditError> {
    let [a, c, m, l, y] = columns_acmly(dataset)?;
    let n = a.len() as f64;

    // M-equation is untouched by the constraints: exact OLS of M on (A, C).
    let bm = ols_equation(&[&a, &c], &m)?;

    // Gram matrices of the L design (A, C, M, 1) and Y design (C, M, L, 1).
    let gram = |cols: [&[f64]; 3], target: &[f64]| {
        let mut g = DMatrix::<f64>::zeros(4, 4);
        let mut v = DVector::<f64>::zeros(4);
        for i in 0..target.len() {
            let x = [cols[0][i], cols[1][i], cols[2][i], 1.0];
            for r in 0..4 {
                v[r] += x[r] * target[i];
                for s in 0..4 {
                    g[(r, s)] += x[r] * x[s];
                }
            }
        }
        (g / n, v / n)
    };
    let (gl, vl) = gram([&a, &c, &m], &l);
    let (gy, vy) = gram([&c, &m, &l], &y);

    // beta_l = (a_l, c_l, m_l, l0); beta_y = (c_y, m_y, l_y, y0).
    const ML: usize = 2; // index of m_l in beta_l
    const MY: usize = 1; // index of m_y in beta_y
    const LY: usize = 2; // index of l_y in beta_y

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = Normal::new(0.0, 2.0).expect("positive std");
    let mut beta_l = DVector::<f64>::from_fn(4, |_, _| init.sample(&mut rng));
    let mut beta_y = DVector::<f64>::from_fn(4, |_, _| init.sample(&mut rng));

    let constraint = |bl: &DVector<f64>, by: &DVector<f64>| by[MY] + by[LY] * bl[ML];

    let mut lambda = 0.0;
    let mut mu = 10.0;
    let mut residual = constraint(&beta_l, &beta_y).abs();
    let max_outer = 120;
    for _outer in 0..max_outer {
        // Inner: alternate exact block minimization. Each block problem is a
        // linear system because the penalty is quadratic in the block once
        // the other block is held fixed.
        for _sweep in 0..200 {
            let prev_l = beta_l.clone();
            let prev_y = beta_y.clone();

            // L block: penalty (lambda + mu*c) * l_y acts on the m_l slot.
            let kappa = beta_y[LY];
            let mut lhs = gl.clone() * 2.0;
            lhs[(ML, ML)] += mu * kappa * kappa;
            let mut rhs = vl.clone() * 2.0;
            rhs[ML] -= kappa * (lambda + mu * beta_y[MY]);
            beta_l = solve_small(&lhs, &rhs)?;

            // Y block: constraint is u' beta_y with u = e_my + m_l * e_ly.
            let mut u = DVector::<f64>::zeros(4);
            u[MY] = 1.0;
            u[LY] = beta_l[ML];
            let lhs = gy.clone() * 2.0 + &u * u.transpose() * mu;
            let rhs = vy.clone() * 2.0 - &u * lambda;
            beta_y = solve_small(&lhs, &rhs)?;

            let delta = (&beta_l - &prev_l).amax().max((&beta_y - &prev_y).amax());
            if delta < 1e-13 {
                break;
            }
        }

        let c_now = constraint(&beta_l, &beta_y);
        residual = c_now.abs();
        if residual <= 1e-12 {
            break;
        }
        lambda += mu * c_now;
        mu = (mu * 4.0).min(1e12);
    }

    if residual > KILBERTUS_TOL {
        return Err(AuditError::Nonconvergence {
            residual,
            target: KILBERTUS_TOL,
            iterations: max_outer,
        });
    }

    Ok(LinearFit {
        theta: LinearTheta {
            a_m: bm[0],
            c_m: bm[1],
            m_intercept: bm[2],
            a_l: beta_l[0],
            c_l: beta_l[1],
            m_l: beta_l[2],
            l_intercept: beta_l[3],
            a_y: 0.0,
            c_y: beta_y[0],
            m_y: beta_y[1],
            l_y: beta_y[2],
            y_intercept: beta_y[3],
        },
        constraint: ConstraintKind::ZeroCombination,
        seed: Some(seed),
    })
}

fn solve_small(lhs: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, AuditError> {
    linear_solve(lhs.clone(), rhs.clone())
        .map(DVector::from_vec)
        .map_err(|_| AuditError::SingularDesign)
}

/// Residuals of the two combination constraints, for postcondition checks.
pub fn kilbertus_residuals(fit: &LinearFit) -> (f64, f64) {
    (fit.theta.a_y.abs(), (fit.theta.m_y + fit.theta.l_y * fit.theta.m_l).abs())
}

/// Signed relative deviation of each fitted slot from the ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationMatrix {
    pub entries: Vec<DeviationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationEntry {
    pub slot: ThetaSlot,
    pub fitted: f64,
    pub truth: f64,
    /// `(fitted - truth) / |truth|`; `None` when the truth is zero (the
    /// absolute deviation is still reported).
    pub relative: Option<f64>,
    pub absolute: f64,
}

pub fn deviation_matrix(fit: &LinearFit, truth: &LinearTheta) -> DeviationMatrix {
    let entries = ThetaSlot::ALL
        .iter()
        .map(|&slot| {
            let fitted = fit.theta.get(slot);
            let t = truth.get(slot);
            DeviationEntry {
                slot,
                fitted,
                truth: t,
                relative: if t == 0.0 { None } else { Some((fitted - t) / t.abs()) },
                absolute: fitted - t,
            }
        })
        .collect();
    DeviationMatrix { entries }
}

impl DeviationMatrix {
    pub fn entry(&self, slot: ThetaSlot) -> &DeviationEntry {
        self.entries.iter().find(|e| e.slot == slot).expect("all slots present")
    }

    /// Largest |relative| over slots with nonzero truth.
    pub fn max_abs_relative(&self) -> f64 {
        self.entries
            .iter()
            .filter_map(|e| e.relative)
            .map(f64::abs)
            .fold(0.0, f64::max)
    }
}

/// Feature values of one row for the constrained predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub a: f64,
    pub c: f64,
    pub m: f64,
    pub l: f64,
}

/// Prediction mode: direct linear forward on observed (A, C, M, L), or the
/// marginalizing mode that samples intermediate (M, L) from the fitted
/// structural equations given (A, C) and averages the outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PredictMode {
    PlugIn,
    MonteCarlo { samples: usize, seed: u64, sigma_m: Option<f64>, sigma_l: Option<f64> },
}

pub fn predict_constrained(fit: &LinearFit, row: &LinearRow, mode: PredictMode) -> Result<f64, AuditError> {
    let th = &fit.theta;
    let forward_y =
        |a: f64, c: f64, m: f64, l: f64| th.a_y * a + th.c_y * c + th.m_y * m + th.l_y * l + th.y_intercept;
    match mode {
        PredictMode::PlugIn => Ok(forward_y(row.a, row.c, row.m, row.l)),
        PredictMode::MonteCarlo { samples, seed, sigma_m, sigma_l } => {
            let (sm, sl) = match (sigma_m, sigma_l) {
                (Some(sm), Some(sl)) => (sm, sl),
                _ => return Err(AuditError::MissingSigma),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let mut draw = |sigma: f64| if sigma == 0.0 { 0.0 } else { sigma * normal.sample(&mut rng) };
            let mut total = 0.0;
            for _ in 0..samples.max(1) {
                let m = th.a_m * row.a + th.c_m * row.c + th.m_intercept + draw(sm);
                let l = th.a_l * row.a + th.c_l * row.c + th.m_l * m + th.l_intercept + draw(sl);
                total += forward_y(row.a, row.c, m, l);
            }
            Ok(total / samples.max(1) as f64)
        }
    }
}

/// Closed-form marginal expectation of the outcome given (A, C), pushing
/// expectations through the fitted equations. The zero-mean noise drops out.
pub fn marginal_expectation(fit: &LinearFit, a: f64, c: f64) -> f64 {
    let th = &fit.theta;
    let em = th.a_m * a + th.c_m * c + th.m_intercept;
    let el = th.a_l * a + th.c_l * c + th.m_l * em + th.l_intercept;
    th.a_y * a + th.c_y * c + th.m_y * em + th.l_y * el + th.y_intercept
}

/// A named prediction vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub name: String,
    pub predictions: Vec<f64>,
}

/// Shares of each group within one cell of the sweep (always-rejected or
/// always-accepted). Shares are `None` when the cell is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellShares {
    pub count: usize,
    pub shares: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    /// Approval rate per policy, in policy order.
    pub approval_rates: Vec<f64>,
    pub always_rejected: CellShares,
    pub always_accepted: CellShares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub policies: Vec<String>,
    /// Distinct group labels in first-appearance order.
    pub groups: Vec<String>,
    pub rows: Vec<SweepRow>,
}

/// For each threshold (strictly decreasing), computes per-policy approval
/// rates and the group composition of the rows every policy rejects
/// (prediction <= threshold for all policies) or accepts (> threshold for
/// all).
pub fn threshold_sweep(
    policies: &[Policy],
    thresholds: &[f64],
    groups: &[String],
) -> Result<SweepTable, AuditError> {
    if policies.len() < 2 {
        return Err(AuditError::NotEnoughPolicies { needed: 2, got: policies.len() });
    }
    let n = groups.len();
    for policy in policies {
        if policy.predictions.len() != n {
            return Err(AuditError::LengthMismatch(policy.predictions.len(), n));
        }
    }
    for pair in thresholds.windows(2) {
        if pair[1] >= pair[0] {
            return Err(AuditError::BadThresholds(format!("{} then {}", pair[0], pair[1])));
        }
    }

    let mut group_levels: Vec<String> = Vec::new();
    for g in groups {
        if !group_levels.contains(g) {
            group_levels.push(g.clone());
        }
    }

    let mut rows = Vec::with_capacity(thresholds.len());
    for &threshold in thresholds {
        let approval_rates: Vec<f64> = policies
            .iter()
            .map(|p| p.predictions.iter().filter(|&&v| v > threshold).count() as f64 / n as f64)
            .collect();

        let cell = |rejected: bool| {
            let mut counts = vec![0usize; group_levels.len()];
            let mut total = 0usize;
            for (i, group) in groups.iter().enumerate() {
                let in_cell = if rejected {
                    policies.iter().all(|p| p.predictions[i] <= threshold)
                } else {
                    policies.iter().all(|p| p.predictions[i] > threshold)
                };
                if in_cell {
                    total += 1;
                    let g = group_levels.iter().position(|l| l == group).expect("level known");
                    counts[g] += 1;
                }
            }
            CellShares {
                count: total,
                shares: counts
                    .iter()
                    .map(|&c| if total == 0 { None } else { Some(c as f64 / total as f64) })
                    .collect(),
            }
        };

        rows.push(SweepRow {
            threshold,
            approval_rates,
            always_rejected: cell(true),
            always_accepted: cell(false),
        });
    }

    Ok(SweepTable {
        policies: policies.iter().map(|p| p.name.clone()).collect(),
        groups: group_levels,
        rows,
    })
}

/// Approval rate and delta versus a baseline policy, per policy, per group,
/// and per optional ground-truth stratum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateTable {
    pub threshold: f64,
    pub baseline: String,
    pub cells: Vec<RateCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCell {
    pub policy: String,
    pub group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<String>,
    pub count: usize,
    pub rate: f64,
    pub delta_vs_baseline: f64,
}

pub fn approval_rates(
    policies: &[Policy],
    threshold: f64,
    groups: &[String],
    strata: Option<&[String]>,
    baseline: &str,
) -> Result<RateTable, AuditError> {
    let n = groups.len();
    for policy in policies {
        if policy.predictions.len() != n {
            return Err(AuditError::LengthMismatch(policy.predictions.len(), n));
        }
    }
    if let Some(strata) = strata {
        if strata.len() != n {
            return Err(AuditError::LengthMismatch(strata.len(), n));
        }
    }
    if !policies.iter().any(|p| p.name == baseline) {
        return Err(AuditError::UnknownBaseline(baseline.to_owned()));
    }

    let mut group_levels: Vec<String> = Vec::new();
    for g in groups {
        if !group_levels.contains(g) {
            group_levels.push(g.clone());
        }
    }
    let stratum_levels: Vec<Option<String>> = match strata {
        None => vec![None],
        Some(strata) => {
            let mut levels = Vec::new();
            for s in strata {
                if !levels.contains(s) {
                    levels.push(s.clone());
                }
            }
            levels.into_iter().map(Some).collect()
        }
    };

    let rate_of = |policy: &Policy, group: &str, stratum: &Option<String>| -> (usize, f64) {
        let mut cell = 0usize;
        let mut approved = 0usize;
        for i in 0..n {
            if groups[i] != group {
                continue;
            }
            if let (Some(level), Some(strata)) = (stratum.as_ref(), strata) {
                if &strata[i] != level {
                    continue;
                }
            }
            cell += 1;
            if policy.predictions[i] > threshold {
                approved += 1;
            }
        }
        (cell, if cell == 0 { 0.0 } else { approved as f64 / cell as f64 })
    };

    let baseline_policy = policies.iter().find(|p| p.name == baseline).expect("checked");
    let mut cells = Vec::new();
    for policy in policies {
        for group in &group_levels {
            for stratum in &stratum_levels {
                let (count, rate) = rate_of(policy, group, stratum);
                let (_, base_rate) = rate_of(baseline_policy, group, stratum);
                cells.push(RateCell {
                    policy: policy.name.clone(),
                    group: group.clone(),
                    stratum: stratum.clone(),
                    count,
                    rate,
                    delta_vs_baseline: rate - base_rate,
                });
            }
        }
    }

    Ok(RateTable { threshold, baseline: baseline.to_owned(), cells })
}
