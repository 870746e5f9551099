//! Constrained sparse regression: sequentially thresholded quadratic
//! programming with per-column threshold bounds, automatic selection of the
//! sparsity parameter, and group sparsity across a parameter ensemble.
//!
//! For threshold `lambda` a column survives when
//! `L_k <= |w_k| <= U_k` with `L_k = lambda max(1, ||b||/||G_k||)` and
//! `U_k = (1/lambda) min(1, ||b||/||G_k||)`; forced columns always survive.
//! `lambda` is picked as the smallest minimizer of
//! `||G (w(lambda) - w0)|| / ||G w0|| + ||w(lambda)||_0 / J` over a log grid,
//! where `w0` is the constrained full-support solution.

use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::qp::{kkt_audit, solve, KktReport, QpProblem};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Linear constraints on one equation's coefficient vector.
#[derive(Debug, Clone)]
pub struct ConstraintBlock {
    /// Equality rows, `A w = 0`.
    pub eq: DMatrix<f64>,
    /// Inequality rows, `C w <= d`.
    pub ineq: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl ConstraintBlock {
    pub fn none(n: usize) -> Self {
        ConstraintBlock {
            eq: DMatrix::zeros(0, n),
            ineq: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.eq.nrows() == 0 && self.ineq.nrows() == 0
    }
}

/// One equation's regression data.
#[derive(Debug, Clone)]
pub struct RegressionSystem {
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    pub col_norms: Vec<f64>,
    pub b_norm: f64,
    pub forced: Vec<usize>,
}

impl RegressionSystem {
    pub fn new(g: DMatrix<f64>, b: DVector<f64>, forced: Vec<usize>) -> Self {
        let col_norms = (0..g.ncols()).map(|j| g.column(j).norm()).collect();
        let b_norm = b.norm();
        RegressionSystem {
            g,
            b,
            col_norms,
            b_norm,
            forced,
        }
    }

    pub fn ncols(&self) -> usize {
        self.g.ncols()
    }

    fn lower(&self, k: usize, lambda: f64) -> f64 {
        if self.col_norms[k] == 0.0 {
            return f64::INFINITY;
        }
        lambda * (self.b_norm / self.col_norms[k]).max(1.0)
    }

    fn upper(&self, k: usize, lambda: f64) -> f64 {
        if self.col_norms[k] == 0.0 {
            return f64::NEG_INFINITY;
        }
        (self.b_norm / self.col_norms[k]).min(1.0) / lambda
    }
}

#[derive(Debug, Clone)]
pub struct MstlsOptions {
    pub lambda_grid: Vec<f64>,
    pub qp_tol: f64,
    pub qp_max_iter: usize,
    pub max_threshold_iters: usize,
    pub exec: ExecMode,
}

impl Default for MstlsOptions {
    fn default() -> Self {
        MstlsOptions {
            lambda_grid: default_lambda_grid(),
            qp_tol: 1e-10,
            qp_max_iter: 1000,
            max_threshold_iters: 100,
            exec: ExecMode::Parallel,
        }
    }
}

/// 100 log-spaced points in [1e-4, 1].
pub fn default_lambda_grid() -> Vec<f64> {
    let n = 100;
    (0..n)
        .map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// Per-lambda record of the sparsity path.
#[derive(Debug, Clone, Serialize)]
pub struct PathPoint {
    pub lambda: f64,
    pub loss: f64,
    pub support: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct MstlsResult {
    /// Coefficients in the same (scaled) space as the input system.
    pub w: DVector<f64>,
    pub support: Vec<usize>,
    pub lambda: f64,
    pub path: Vec<PathPoint>,
    pub kkt: Option<KktReport>,
}

/// Constrained least squares restricted to a support set. Columns are
/// unit-normalized inside the solve and coefficients unscaled afterwards.
pub fn qp_on_support(
    sys: &RegressionSystem,
    constraints: &ConstraintBlock,
    support: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<(DVector<f64>, Option<KktReport>)> {
    let n = sys.ncols();
    if support.is_empty() {
        return Ok((DVector::zeros(n), None));
    }
    let k_rows = sys.g.nrows();
    let mut g_sub = DMatrix::zeros(k_rows, support.len());
    let mut scale = Vec::with_capacity(support.len());
    for (j, &col) in support.iter().enumerate() {
        let norm = sys.col_norms[col];
        let s = if norm > 0.0 { norm } else { 1.0 };
        scale.push(s);
        for r in 0..k_rows {
            g_sub[(r, j)] = sys.g[(r, col)] / s;
        }
    }
    // restrict constraints to the support and apply the same column scaling
    // a coefficient on the scaled column is w_col * scale_j, so constraint
    // entries divide by the column scale
    let mut eq_rows = Vec::new();
    for r in 0..constraints.eq.nrows() {
        let row: Vec<f64> = support
            .iter()
            .enumerate()
            .map(|(j, &col)| constraints.eq[(r, col)] / scale[j])
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            eq_rows.push(row.iter().map(|v| v / norm).collect::<Vec<f64>>());
        }
    }
    let mut ineq_rows = Vec::new();
    let mut d_vals = Vec::new();
    for r in 0..constraints.ineq.nrows() {
        let row: Vec<f64> = support
            .iter()
            .enumerate()
            .map(|(j, &col)| constraints.ineq[(r, col)] / scale[j])
            .collect();
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            ineq_rows.push(row.iter().map(|v| v / norm).collect::<Vec<f64>>());
            d_vals.push(constraints.d[r] / norm);
        } else if constraints.d[r] < -tol {
            return Err(Error::QpInfeasible(format!(
                "inequality row {r} is infeasible on the support"
            )));
        }
    }
    let problem = QpProblem {
        g: g_sub,
        b: sys.b.clone(),
        eq: DMatrix::from_fn(eq_rows.len(), support.len(), |r, c| eq_rows[r][c]),
        ineq: DMatrix::from_fn(ineq_rows.len(), support.len(), |r, c| ineq_rows[r][c]),
        d: DVector::from_vec(d_vals),
        tol,
        max_iter,
    };
    let sol = solve(&problem)?;
    let report = kkt_audit(&problem, &sol);
    let mut w = DVector::zeros(n);
    for (j, &col) in support.iter().enumerate() {
        w[col] = sol.w[j] / scale[j];
    }
    Ok((w, Some(report)))
}

fn threshold_support(sys: &RegressionSystem, w: &DVector<f64>, lambda: f64) -> Vec<usize> {
    (0..sys.ncols())
        .filter(|&k| {
            if sys.forced.contains(&k) {
                return true;
            }
            let a = w[k].abs();
            a >= sys.lower(k, lambda) && a <= sys.upper(k, lambda)
        })
        .collect()
}

/// One inner sequential-thresholding run at fixed `lambda`, starting from the
/// full-support solution `w0`.
pub fn mstls_step(
    sys: &RegressionSystem,
    constraints: &ConstraintBlock,
    lambda: f64,
    w0: &DVector<f64>,
    opts: &MstlsOptions,
) -> Result<(DVector<f64>, Vec<usize>)> {
    if !(lambda > 0.0) {
        return Err(Error::Regression(format!("lambda must be positive, got {lambda}")));
    }
    let mut w = w0.clone();
    let mut support = threshold_support(sys, &w, lambda);
    for _ in 0..opts.max_threshold_iters {
        let (w_new, _) = qp_on_support(sys, constraints, &support, opts.qp_tol, opts.qp_max_iter)?;
        let support_new = threshold_support(sys, &w_new, lambda);
        w = w_new;
        if support_new == support {
            return Ok((w, support));
        }
        support = support_new;
    }
    Ok((w, support))
}

fn loss_of(sys: &RegressionSystem, w: &DVector<f64>, w0: &DVector<f64>, support_len: usize) -> f64 {
    let gw0 = &sys.g * w0;
    let denom = gw0.norm();
    let sparsity = support_len as f64 / sys.ncols() as f64;
    if denom == 0.0 {
        return sparsity;
    }
    (&sys.g * w - gw0).norm() / denom + sparsity
}

/// Full MSTLS with automatic lambda selection (smallest minimizer of the
/// loss over the grid).
pub fn select_lambda(
    sys: &RegressionSystem,
    constraints: &ConstraintBlock,
    opts: &MstlsOptions,
) -> Result<MstlsResult> {
    let (w0, _) = qp_on_support(
        sys,
        constraints,
        &(0..sys.ncols()).collect::<Vec<_>>(),
        opts.qp_tol,
        opts.qp_max_iter,
    )?;
    let runs: Vec<Result<(DVector<f64>, Vec<usize>)>> =
        map_indexed(opts.exec, opts.lambda_grid.len(), |i| {
            mstls_step(sys, constraints, opts.lambda_grid[i], &w0, opts)
        });
    let mut path = Vec::with_capacity(runs.len());
    let mut best: Option<(f64, usize)> = None;
    let mut solutions = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let (w, support) = run?;
        let loss = loss_of(sys, &w, &w0, support.len());
        path.push(PathPoint {
            lambda: opts.lambda_grid[i],
            loss,
            support: support.clone(),
        });
        solutions.push((w, support));
        // strict less-than keeps the smallest lambda on ties
        if best.map_or(true, |(l, _)| loss < l) {
            best = Some((loss, i));
        }
    }
    let (_, idx) = best.ok_or_else(|| Error::Regression("empty lambda grid".into()))?;
    let (w, support) = solutions[idx].clone();
    // final audited solve on the chosen support
    let (w_final, kkt) = qp_on_support(sys, constraints, &support, opts.qp_tol, opts.qp_max_iter)?;
    let w = if support.is_empty() { w } else { w_final };
    Ok(MstlsResult {
        w,
        support,
        lambda: opts.lambda_grid[idx],
        path,
        kkt,
    })
}

/// Group-sparse MSTLS over a parameter ensemble sharing one library: the
/// thresholding couples supports through `sum_p L^(p) <= sum_p |w^(p)| <=
/// sum_p U^(p)`, while the per-system QP solves stay independent.
pub fn group_select_lambda(
    systems: &[RegressionSystem],
    constraints: &[ConstraintBlock],
    opts: &MstlsOptions,
) -> Result<Vec<MstlsResult>> {
    if systems.is_empty() {
        return Err(Error::Regression("empty ensemble".into()));
    }
    let n = systems[0].ncols();
    if systems.iter().any(|s| s.ncols() != n) {
        return Err(Error::Regression(
            "ensemble systems use inconsistent libraries".into(),
        ));
    }
    if systems.len() != constraints.len() {
        return Err(Error::Regression(
            "one constraint block per system required".into(),
        ));
    }
    let full: Vec<usize> = (0..n).collect();
    let w0: Vec<DVector<f64>> = systems
        .iter()
        .zip(constraints)
        .map(|(s, c)| qp_on_support(s, c, &full, opts.qp_tol, opts.qp_max_iter).map(|r| r.0))
        .collect::<Result<_>>()?;

    let group_support = |ws: &[DVector<f64>], lambda: f64| -> Vec<usize> {
        (0..n)
            .filter(|&k| {
                if systems[0].forced.contains(&k) {
                    return true;
                }
                let mut lo = 0.0;
                let mut hi = 0.0;
                let mut amp = 0.0;
                for (p, sys) in systems.iter().enumerate() {
                    lo += sys.lower(k, lambda);
                    hi += sys.upper(k, lambda);
                    amp += ws[p][k].abs();
                }
                amp >= lo && amp <= hi
            })
            .collect()
    };

    type LambdaRun = (Vec<DVector<f64>>, Vec<usize>, f64);
    let runs: Vec<Result<LambdaRun>> = map_indexed(opts.exec, opts.lambda_grid.len(), |i| {
        let lambda = opts.lambda_grid[i];
        let mut ws = w0.clone();
        let mut support = group_support(&ws, lambda);
        for _ in 0..opts.max_threshold_iters {
            let mut next = Vec::with_capacity(systems.len());
            for (p, sys) in systems.iter().enumerate() {
                let (w, _) =
                    qp_on_support(sys, &constraints[p], &support, opts.qp_tol, opts.qp_max_iter)?;
                next.push(w);
            }
            let support_new = group_support(&next, lambda);
            ws = next;
            if support_new == support {
                break;
            }
            support = support_new;
        }
        let loss: f64 = systems
            .iter()
            .enumerate()
            .map(|(p, sys)| loss_of(sys, &ws[p], &w0[p], support.len()))
            .sum();
        Ok((ws, support, loss))
    });

    let mut best: Option<(f64, usize)> = None;
    let mut all: Vec<LambdaRun> = Vec::with_capacity(runs.len());
    for (i, run) in runs.into_iter().enumerate() {
        let r = run?;
        if best.map_or(true, |(l, _)| r.2 < l) {
            best = Some((r.2, i));
        }
        all.push(r);
    }
    let (_, idx) = best.ok_or_else(|| Error::Regression("empty lambda grid".into()))?;
    let lambda = opts.lambda_grid[idx];
    let (ws, support, _) = &all[idx];
    let mut out = Vec::with_capacity(systems.len());
    for (p, sys) in systems.iter().enumerate() {
        let (w_final, kkt) =
            qp_on_support(sys, &constraints[p], support, opts.qp_tol, opts.qp_max_iter)?;
        let w = if support.is_empty() {
            ws[p].clone()
        } else {
            w_final
        };
        let path = all
            .iter()
            .enumerate()
            .map(|(i, (_, s, loss))| PathPoint {
                lambda: opts.lambda_grid[i],
                loss: *loss,
                support: s.clone(),
            })
            .collect();
        out.push(MstlsResult {
            w,
            support: support.clone(),
            lambda,
            path,
            kkt,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_system(
        rows: usize,
        cols: usize,
        planted: &[(usize, f64)],
        seed: u64,
    ) -> RegressionSystem {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        let mut w = DVector::zeros(cols);
        for &(k, v) in planted {
            w[k] = v;
        }
        let b = &g * &w;
        RegressionSystem::new(g, b, vec![])
    }

    #[test]
    fn large_lambda_keeps_only_forced() {
        // all column norms equal to ||b||: L_k = lambda >= U_k = 1/lambda for lambda >= 1
        let g = DMatrix::identity(4, 4) * 2.0;
        let b = DVector::from_row_slice(&[2.0, 0.0, 0.0, 0.0]);
        let mut sys = RegressionSystem::new(g, b, vec![3]);
        sys.col_norms = vec![2.0; 4];
        sys.b_norm = 2.0;
        let opts = MstlsOptions::default();
        let w0 = DVector::from_row_slice(&[1.0, 0.5, 0.5, 0.5]);
        let (_, support) =
            mstls_step(&sys, &ConstraintBlock::none(4), 1.5, &w0, &opts).unwrap();
        assert_eq!(support, vec![3]);
    }

    #[test]
    fn planted_sparse_recovery_with_window() {
        let planted = [(2usize, 1.4), (7usize, -0.8), (15usize, 0.5)];
        let sys = random_system(100, 20, &planted, 11);
        let none = ConstraintBlock::none(20);
        let opts = MstlsOptions::default();
        let (w0, _) = qp_on_support(&sys, &none, &(0..20).collect::<Vec<_>>(), 1e-10, 1000).unwrap();

        // brute-force sweep: find the lambda window with exact support recovery
        let want: Vec<usize> = vec![2, 7, 15];
        let mut window = Vec::new();
        for &lambda in &opts.lambda_grid {
            let (w, support) = mstls_step(&sys, &none, lambda, &w0, &opts).unwrap();
            if support == want {
                for &(k, v) in &planted {
                    assert!(((w[k] - v) / v).abs() < 1e-6, "coefficient {k}");
                }
                window.push(lambda);
            }
        }
        assert!(!window.is_empty(), "no recovery window found");

        // automatic selection lands inside the verified window
        let result = select_lambda(&sys, &none, &opts).unwrap();
        assert_eq!(result.support, want);
        assert!(window.contains(&result.lambda));
    }

    #[test]
    fn single_column_exact_system_picks_smallest_lambda() {
        let g = DMatrix::from_fn(30, 1, |r, _| ((r * r + 1) as f64 * 0.01).sin() + 1.2);
        let w_true = DVector::from_row_slice(&[0.7]);
        let b = &g * &w_true;
        let sys = RegressionSystem::new(g, b, vec![]);
        let opts = MstlsOptions::default();
        let result = select_lambda(&sys, &ConstraintBlock::none(1), &opts).unwrap();
        // every keep-window lambda has identical loss; smallest must win
        let min_loss = result
            .path
            .iter()
            .map(|p| p.loss)
            .fold(f64::INFINITY, f64::min);
        let first = result
            .path
            .iter()
            .find(|p| p.loss <= min_loss)
            .unwrap()
            .lambda;
        assert_eq!(result.lambda, first);
        assert!((result.w[0] - 0.7).abs() < 1e-8);
    }

    #[test]
    fn lambda_to_zero_keeps_full_support() {
        let planted = [(0usize, 1.0), (1, 0.5), (2, -0.25), (3, 2.0)];
        let sys = random_system(40, 4, &planted, 3);
        let opts = MstlsOptions::default();
        let (w0, _) =
            qp_on_support(&sys, &ConstraintBlock::none(4), &[0, 1, 2, 3], 1e-10, 1000).unwrap();
        let (_, support) =
            mstls_step(&sys, &ConstraintBlock::none(4), 1e-9, &w0, &opts).unwrap();
        assert_eq!(support, vec![0, 1, 2, 3]);
    }

    #[test]
    fn group_of_one_reduces_to_single_system() {
        let planted = [(2usize, 1.4), (7usize, -0.8)];
        let sys = random_system(80, 12, &planted, 5);
        let none = ConstraintBlock::none(12);
        let opts = MstlsOptions::default();
        let single = select_lambda(&sys, &none, &opts).unwrap();
        let group = group_select_lambda(
            std::slice::from_ref(&sys),
            std::slice::from_ref(&none),
            &opts,
        )
        .unwrap();
        assert_eq!(single.support, group[0].support);
        assert_eq!(single.lambda, group[0].lambda);
        assert_eq!(single.w.as_slice(), group[0].w.as_slice());
    }

    #[test]
    fn identical_systems_give_identical_coefficients() {
        let planted = [(1usize, 0.9), (5usize, -1.1)];
        let sys = random_system(60, 10, &planted, 17);
        let none = ConstraintBlock::none(10);
        let opts = MstlsOptions::default();
        let out = group_select_lambda(
            &[sys.clone(), sys],
            &[none.clone(), none],
            &opts,
        )
        .unwrap();
        assert_eq!(out[0].w.as_slice(), out[1].w.as_slice());
        assert_eq!(out[0].support, out[1].support);
    }

    #[test]
    fn shared_support_with_different_coefficients() {
        // four systems, same support {1, 4, 9}, different coefficient values
        let mut systems = Vec::new();
        let mut expected = Vec::new();
        for p in 0..4 {
            let scale = 1.0 + 0.4 * p as f64;
            let planted = [
                (1usize, 1.2 * scale),
                (4usize, -0.6 * scale),
                (9usize, 0.35 * scale),
            ];
            systems.push(random_system(120, 14, &planted, 100 + p as u64));
            expected.push(planted);
        }
        let blocks: Vec<ConstraintBlock> = (0..4).map(|_| ConstraintBlock::none(14)).collect();
        let opts = MstlsOptions::default();
        let out = group_select_lambda(&systems, &blocks, &opts).unwrap();
        for (p, result) in out.iter().enumerate() {
            assert_eq!(result.support, vec![1, 4, 9], "system {p}");
            for &(k, v) in &expected[p] {
                assert!(
                    ((result.w[k] - v) / v).abs() < 1e-5,
                    "system {p} coefficient {k}: {} vs {v}",
                    result.w[k]
                );
            }
        }
    }

    #[test]
    fn forced_terms_survive_every_lambda() {
        let planted = [(0usize, 2.0), (3usize, 0.01)];
        let mut sys = random_system(60, 8, &planted, 23);
        sys.forced = vec![3, 5];
        let none = ConstraintBlock::none(8);
        let opts = MstlsOptions::default();
        for &lambda in &[1e-4, 1e-2, 0.5, 1.0] {
            let (w0, _) =
                qp_on_support(&sys, &none, &(0..8).collect::<Vec<_>>(), 1e-10, 1000).unwrap();
            let (_, support) = mstls_step(&sys, &none, lambda, &w0, &opts).unwrap();
            assert!(support.contains(&3), "lambda {lambda}");
            assert!(support.contains(&5), "lambda {lambda}");
        }
    }

    #[test]
    fn constrained_solution_respects_equality() {
        // plant a model satisfying w0 + w1 = 0 and require it
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let g = DMatrix::from_fn(50, 6, |_, _| rng.gen_range(-1.0..1.0));
        let mut w = DVector::zeros(6);
        w[0] = 1.3;
        w[1] = -1.3;
        w[4] = 0.7;
        let b = &g * &w;
        let sys = RegressionSystem::new(g, b, vec![]);
        let mut block = ConstraintBlock::none(6);
        block.eq = DMatrix::from_fn(1, 6, |_, c| if c <= 1 { 1.0 } else { 0.0 });
        let opts = MstlsOptions::default();
        let result = select_lambda(&sys, &block, &opts).unwrap();
        assert!((result.w[0] + result.w[1]).abs() < 1e-8);
        assert_eq!(result.support, vec![0, 1, 4]);
        assert!(result.kkt.unwrap().satisfied(1e-8));
    }
}
