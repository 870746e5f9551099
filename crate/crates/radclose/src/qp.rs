//! Dense convex quadratic programming by a primal-dual interior-point method.
//!
//! Problems have the least-squares form `min ||G w - b||^2` subject to
//! `A w = 0` and `C w <= d`. The origin must be feasible (`d >= 0`), which
//! holds for every constraint set assembled in this crate; the zero vector
//! anchors feasibility even when many inequality rows touch it, a degenerate
//! configuration that defeats naive active-set pivoting. Equality-only
//! problems short-circuit to one KKT solve.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// K x n least-squares matrix.
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Equality rows, `A w = 0`.
    pub eq: DMatrix<f64>,
    /// Inequality rows and right-hand side, `C w <= d`.
    pub ineq: DMatrix<f64>,
    pub d: DVector<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl QpProblem {
    pub fn unconstrained(g: DMatrix<f64>, b: DVector<f64>) -> Self {
        let n = g.ncols();
        QpProblem {
            g,
            b,
            eq: DMatrix::zeros(0, n),
            ineq: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
            tol: 1e-10,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub w: DVector<f64>,
    pub iterations: usize,
    /// Indices of inequality rows active at the solution.
    pub active: Vec<usize>,
    /// Multipliers of the reduced equality block.
    pub eq_multipliers: DVector<f64>,
    /// `(row, multiplier)` for inequality rows with nonnegligible duals.
    pub ineq_multipliers: Vec<(usize, f64)>,
}

/// KKT residuals of a solution, computed independently of the solve path.
#[derive(Debug, Clone, serde::Serialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_ineq: f64,
    /// Most negative inequality multiplier (>= -tol at an optimum).
    pub dual_min: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn satisfied(&self, tol: f64) -> bool {
        self.stationarity <= tol
            && self.primal_eq <= tol
            && self.primal_ineq <= tol
            && self.dual_min >= -tol
            && self.complementarity <= tol
    }
}

const RANK_CUTOFF: f64 = 1e-12;
/// Static regularization of the KKT systems.
const KKT_REG: f64 = 1e-13;

/// Rows of `m` that are independent, chosen greedily in index order.
fn independent_rows(m: &DMatrix<f64>) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..m.nrows() {
        let mut row = m.row(i).transpose();
        let norm0 = row.norm();
        if norm0 <= RANK_CUTOFF {
            continue;
        }
        for b in &basis {
            let proj = row.dot(b);
            row -= b * proj;
        }
        if row.norm() > 1e-10 * norm0 {
            basis.push(row.normalize());
            keep.push(i);
        }
    }
    keep
}

/// Solve the symmetric KKT system
/// `[[M, A'], [A, -reg I]] [dw; dy] = [r1; r2]` by full-pivot LU.
fn kkt_solve(
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = m.ncols();
    let me = a.nrows();
    let mut kkt = DMatrix::zeros(n + me, n + me);
    kkt.view_mut((0, 0), (n, n)).copy_from(m);
    if me > 0 {
        kkt.view_mut((0, n), (n, me)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (me, n)).copy_from(a);
        for i in 0..me {
            kkt[(n + i, n + i)] = -KKT_REG;
        }
    }
    let mut rhs = DVector::zeros(n + me);
    rhs.rows_mut(0, n).copy_from(r1);
    if me > 0 {
        rhs.rows_mut(n, me).copy_from(r2);
    }
    let lu = kkt.clone().full_piv_lu();
    let mut sol = lu.solve(&rhs)?;
    // two passes of iterative refinement; the library terms are highly
    // correlated and the normal-equations block can be extremely
    // ill-conditioned
    for _ in 0..2 {
        let residual = &rhs - &kkt * &sol;
        if let Some(correction) = lu.solve(&residual) {
            sol += correction;
        }
    }
    Some((
        sol.rows(0, n).into_owned(),
        if me > 0 {
            sol.rows(n, me).into_owned()
        } else {
            DVector::zeros(0)
        },
    ))
}

/// Solve the QP. The origin must be feasible.
///
/// Stalls from extreme Gram-matrix conditioning retry with a larger static
/// ridge; the independent [`kkt_audit`] remains the arbiter of solution
/// quality on the unregularized problem.
pub fn solve(problem: &QpProblem) -> Result<QpSolution> {
    let mut last = None;
    for reg in [KKT_REG, 1e-10, 1e-7] {
        match solve_with_reg(problem, reg) {
            Ok(sol) => return Ok(sol),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap())
}

fn solve_with_reg(problem: &QpProblem, reg: f64) -> Result<QpSolution> {
    let n = problem.g.ncols();
    let tol = problem.tol;
    for i in 0..problem.d.len() {
        if problem.d[i] < -tol {
            return Err(Error::QpInfeasible(format!(
                "origin infeasible: d[{i}] = {:.3e}",
                problem.d[i]
            )));
        }
    }
    let mut h = problem.g.transpose() * &problem.g;
    for i in 0..n {
        h[(i, i)] += reg;
    }
    let gtb = problem.g.transpose() * &problem.b;
    let scale = h.amax().max(gtb.amax()).max(1.0);

    // reduce the equality block once
    let eq_keep = independent_rows(&problem.eq);
    let a = DMatrix::from_fn(eq_keep.len(), n, |r, c| problem.eq[(eq_keep[r], c)]);
    let me = a.nrows();
    let mi = problem.ineq.nrows();
    let c_mat = &problem.ineq;
    let d = &problem.d;

    if mi == 0 {
        // single KKT solve; the system solves H w + A' y = G' b, matching
        // the stationarity convention grad + A' y = 0
        let (w, y) = kkt_solve(&h, &a, &gtb, &DVector::zeros(me))
            .ok_or_else(|| Error::QpInfeasible("singular KKT system".into()))?;
        return Ok(QpSolution {
            w,
            iterations: 1,
            active: Vec::new(),
            eq_multipliers: y,
            ineq_multipliers: Vec::new(),
        });
    }

    // crossover: guess the active set from the complementarity partition,
    // then refine it with a warm-started active-set loop (solve the active
    // KKT system exactly, add the worst violated row or drop the most
    // negative multiplier) until the solution verifies
    let try_crossover = |s: &DVector<f64>,
                         z: &DVector<f64>,
                         iterations: usize|
     -> Option<QpSolution> {
        let mut guess: Vec<usize> = (0..mi).filter(|&i| z[i] > s[i]).collect();
        for _ in 0..(2 * (mi + 1)) {
            let mut stacked = DMatrix::zeros(me + guess.len(), n);
            if me > 0 {
                stacked.rows_mut(0, me).copy_from(&a);
            }
            for (k, &i) in guess.iter().enumerate() {
                stacked.row_mut(me + k).copy_from(&c_mat.row(i));
            }
            let keep = independent_rows(&stacked);
            let red = DMatrix::from_fn(keep.len(), n, |r, c| stacked[(keep[r], c)]);
            let mut rhs2 = DVector::zeros(keep.len());
            for (r, &row) in keep.iter().enumerate() {
                if row >= me {
                    rhs2[r] = d[guess[row - me]];
                }
            }
            // solve [[H, M'], [M, -reg]] [w; lam] = [G'b; rhs2]
            let (w_x, lam) = kkt_solve(&h, &red, &gtb, &rhs2)?;

            // most violated inactive row, if any
            let mut worst = (0usize, tol * (1.0 + w_x.amax()));
            let mut violated = false;
            for i in 0..mi {
                if guess.contains(&i) {
                    continue;
                }
                let v = c_mat.row(i).transpose().dot(&w_x) - d[i];
                if v > worst.1 {
                    worst = (i, v);
                    violated = true;
                }
            }
            if violated {
                guess.push(worst.0);
                guess.sort_unstable();
                continue;
            }
            // most negative multiplier among the kept active rows, if any
            let lam_scale = 1.0 + lam.amax();
            let mut drop = None;
            let mut most_negative = -tol.sqrt() * lam_scale;
            for (r, &row) in keep.iter().enumerate() {
                if row >= me && lam[r] < most_negative {
                    most_negative = lam[r];
                    drop = Some(guess[row - me]);
                }
            }
            if let Some(i) = drop {
                guess.retain(|&g| g != i);
                continue;
            }
            // verified: assemble the solution
            let mut ineq_multipliers = Vec::new();
            let mut active = Vec::new();
            for (r, &row) in keep.iter().enumerate() {
                if row >= me {
                    active.push(guess[row - me]);
                    ineq_multipliers.push((guess[row - me], lam[r].max(0.0)));
                }
            }
            let eq_mult = DVector::from_fn(me, |r, _| {
                keep.iter()
                    .position(|&row| row == r)
                    .map_or(0.0, |pos| lam[pos])
            });
            return Some(QpSolution {
                w: w_x,
                iterations,
                active,
                eq_multipliers: eq_mult,
                ineq_multipliers,
            });
        }
        None
    };

    // infeasible-start primal-dual path following
    let mut w: DVector<f64> = DVector::zeros(n);
    let mut y: DVector<f64> = DVector::zeros(me);
    let mut s: DVector<f64> = DVector::from_fn(mi, |i, _| d[i].max(1.0));
    let mut z: DVector<f64> = DVector::from_element(mi, 1.0);

    let mut iterations = 0usize;
    loop {
        let r_d = &h * &w - &gtb + a.transpose() * &y + c_mat.transpose() * &z;
        let r_a = &a * &w;
        let r_c = c_mat * &w + &s - d;
        let mu = s.dot(&z) / mi as f64;

        let converged = r_d.amax() <= tol * scale
            && (me == 0 || r_a.amax() <= tol * (1.0 + w.amax()))
            && r_c.amax() <= tol * (1.0 + w.amax())
            && mu <= tol * scale;
        if converged {
            break;
        }
        // endgame: once complementarity and primal feasibility are resolved,
        // degenerate duals can dither forever; cross over to a direct solve
        // on the guessed active set
        if mu <= tol * scale && r_c.amax() <= (tol * scale).sqrt() {
            if let Some(sol) = try_crossover(&s, &z, iterations) {
                return Ok(sol);
            }
        }
        if iterations >= problem.max_iter {
            if let Some(sol) = try_crossover(&s, &z, iterations) {
                return Ok(sol);
            }
            return Err(Error::QpNonConvergence {
                iterations,
                residual: (r_d.amax() / scale).max(mu / scale),
            });
        }
        iterations += 1;

        // normal-equations reduction with D = diag(z/s)
        let dvec = DVector::from_fn(mi, |i, _| z[i] / s[i]);
        let mut m = h.clone();
        for r in 0..mi {
            let row = c_mat.row(r);
            let dr = dvec[r];
            // M += d_r * c_r' c_r
            for i in 0..n {
                let ci = row[i];
                if ci == 0.0 {
                    continue;
                }
                for j in 0..n {
                    m[(i, j)] += dr * ci * row[j];
                }
            }
        }

        // predictor (sigma = 0) to size the centering parameter
        let v0 = DVector::from_fn(mi, |i, _| -z[i] + dvec[i] * r_c[i]);
        let r1 = -&r_d - c_mat.transpose() * &v0;
        let r2 = -&r_a;
        let Some((dw_aff, _)) = kkt_solve(&m, &a, &r1, &r2) else {
            return Err(Error::QpNonConvergence {
                iterations,
                residual: r_d.amax() / scale,
            });
        };
        let ds_aff = -&r_c - c_mat * &dw_aff;
        let dz_aff = &v0 + DVector::from_fn(mi, |i, _| dvec[i] * (c_mat.row(i) * &dw_aff)[0]);
        let mut alpha_aff = 1.0f64;
        for i in 0..mi {
            if ds_aff[i] < 0.0 {
                alpha_aff = alpha_aff.min(-s[i] / ds_aff[i]);
            }
            if dz_aff[i] < 0.0 {
                alpha_aff = alpha_aff.min(-z[i] / dz_aff[i]);
            }
        }
        let mu_aff = (0..mi)
            .map(|i| (s[i] + alpha_aff * ds_aff[i]) * (z[i] + alpha_aff * dz_aff[i]))
            .sum::<f64>()
            / mi as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector with centering and the second-order Mehrotra term
        let v = DVector::from_fn(mi, |i, _| {
            (sigma * mu - ds_aff[i] * dz_aff[i]) / s[i] - z[i] + dvec[i] * r_c[i]
        });
        let r1 = -&r_d - c_mat.transpose() * &v;
        let Some((dw, dy)) = kkt_solve(&m, &a, &r1, &r2) else {
            return Err(Error::QpNonConvergence {
                iterations,
                residual: r_d.amax() / scale,
            });
        };
        let ds = -&r_c - c_mat * &dw;
        let dz = &v + DVector::from_fn(mi, |i, _| dvec[i] * (c_mat.row(i) * &dw)[0]);

        // separate primal and dual step lengths
        let mut alpha_p = 1.0f64;
        let mut alpha_d = 1.0f64;
        for i in 0..mi {
            if ds[i] < 0.0 {
                alpha_p = alpha_p.min(-0.995 * s[i] / ds[i]);
            }
            if dz[i] < 0.0 {
                alpha_d = alpha_d.min(-0.995 * z[i] / dz[i]);
            }
        }
        alpha_p = alpha_p.min(1.0);
        alpha_d = alpha_d.min(1.0);
        if std::env::var_os("RADCLOSE_QP_TRACE").is_some() && iterations % 25 == 0 {
            log::warn!(
                "qp iter {iterations}: mu {mu:.3e} r_d {:.3e} r_c {:.3e} a_p {alpha_p:.2e} a_d {alpha_d:.2e} sigma {sigma:.2e}",
                r_d.amax() / scale,
                r_c.amax()
            );
        }
        // the primal infeasibility r_c couples w and s, so they must move
        // together; y and z advance with the dual step
        w += &dw * alpha_p;
        s += &ds * alpha_p;
        y += &dy * alpha_d;
        z += &dz * alpha_d;
        for i in 0..mi {
            s[i] = s[i].max(1e-300);
            z[i] = z[i].max(1e-300);
        }
    }

    // every row keeps its dual so the audit sees the full stationarity sum;
    // the active list reports rows with vanishing slack
    let s_floor = tol.sqrt() * (1.0 + s.amax());
    let mut active = Vec::new();
    let mut ineq_multipliers = Vec::with_capacity(mi);
    for i in 0..mi {
        if s[i] < s_floor && z[i] > tol.sqrt() * (1.0 + z.amax()) {
            active.push(i);
        }
        ineq_multipliers.push((i, z[i]));
    }
    Ok(QpSolution {
        w,
        iterations,
        active,
        eq_multipliers: y,
        ineq_multipliers,
    })
}

/// Recompute KKT residuals for a solution, independent of the solver path.
pub fn kkt_audit(problem: &QpProblem, solution: &QpSolution) -> KktReport {
    let h = problem.g.transpose() * &problem.g;
    let gtb = problem.g.transpose() * &problem.b;
    let grad = &h * &solution.w - &gtb;
    let scale = h.amax().max(gtb.amax()).max(1.0);

    // stationarity: grad + A' lambda + C_act' mu = 0
    let mut resid = grad.clone();
    let eq_keep = independent_rows(&problem.eq);
    for (r, &row) in eq_keep.iter().enumerate() {
        if r < solution.eq_multipliers.len() {
            resid += problem.eq.row(row).transpose() * solution.eq_multipliers[r];
        }
    }
    let mut dual_min = 0.0f64;
    let mut complementarity = 0.0f64;
    for &(i, mu) in &solution.ineq_multipliers {
        resid += problem.ineq.row(i).transpose() * mu;
        dual_min = dual_min.min(mu);
        let slack = problem.d[i] - problem.ineq.row(i).transpose().dot(&solution.w);
        complementarity = complementarity.max((mu * slack).abs());
    }
    let primal_eq = if problem.eq.nrows() > 0 {
        (&problem.eq * &solution.w).amax()
    } else {
        0.0
    };
    let primal_ineq = if problem.ineq.nrows() > 0 {
        let viol = &problem.ineq * &solution.w - &problem.d;
        viol.iter().cloned().fold(0.0f64, f64::max)
    } else {
        0.0
    };
    KktReport {
        stationarity: resid.amax() / scale,
        primal_eq,
        primal_ineq,
        dual_min,
        complementarity: complementarity / scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_problem() -> (DMatrix<f64>, DVector<f64>) {
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.2, 0.1, 1.1, 0.9, -0.3, 0.4, 0.8]);
        let b = DVector::from_row_slice(&[1.0, -0.5, 0.7, 0.2]);
        (g, b)
    }

    #[test]
    fn unconstrained_matches_normal_equations() {
        let (g, b) = small_problem();
        let problem = QpProblem::unconstrained(g.clone(), b.clone());
        let sol = solve(&problem).unwrap();
        let h = g.transpose() * &g;
        let oracle = h.cholesky().unwrap().solve(&(g.transpose() * &b));
        assert!((sol.w - oracle).norm() < 1e-8);
    }

    #[test]
    fn equality_constraint_matches_kkt_oracle() {
        // min ||Gw - b||^2 s.t. w1 + w2 = 0; closed-form 3x3 KKT system
        let (g, b) = small_problem();
        let mut problem = QpProblem::unconstrained(g.clone(), b.clone());
        problem.eq = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let sol = solve(&problem).unwrap();

        let h = g.transpose() * &g;
        let gtb = g.transpose() * &b;
        let mut kkt = DMatrix::zeros(3, 3);
        kkt[(0, 0)] = h[(0, 0)];
        kkt[(0, 1)] = h[(0, 1)];
        kkt[(1, 0)] = h[(1, 0)];
        kkt[(1, 1)] = h[(1, 1)];
        kkt[(0, 2)] = 1.0;
        kkt[(1, 2)] = 1.0;
        kkt[(2, 0)] = 1.0;
        kkt[(2, 1)] = 1.0;
        let rhs = DVector::from_row_slice(&[gtb[0], gtb[1], 0.0]);
        let full = kkt.lu().solve(&rhs).unwrap();
        assert!((sol.w[0] - full[0]).abs() < 1e-8);
        assert!((sol.w[1] - full[1]).abs() < 1e-8);
        let audit = kkt_audit(&problem, &sol);
        assert!(audit.satisfied(1e-7), "{audit:?}");
    }

    #[test]
    fn active_inequality_has_positive_multiplier() {
        // min ||w - 1||^2 s.t. w <= 0.5: optimum at the bound
        let g = DMatrix::identity(1, 1);
        let b = DVector::from_row_slice(&[1.0]);
        let mut problem = QpProblem::unconstrained(g, b);
        problem.ineq = DMatrix::from_row_slice(1, 1, &[1.0]);
        problem.d = DVector::from_row_slice(&[0.5]);
        let sol = solve(&problem).unwrap();
        assert!((sol.w[0] - 0.5).abs() < 1e-8);
        assert_eq!(sol.active, vec![0]);
        let audit = kkt_audit(&problem, &sol);
        assert!(audit.satisfied(1e-7), "{audit:?}");
        assert!(sol.ineq_multipliers[0].1 > 0.0);
    }

    #[test]
    fn inactive_inequality_is_ignored() {
        let (g, b) = small_problem();
        let unconstrained = solve(&QpProblem::unconstrained(g.clone(), b.clone())).unwrap();
        let mut problem = QpProblem::unconstrained(g, b);
        problem.ineq = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        problem.d = DVector::from_row_slice(&[1e3]);
        let sol = solve(&problem).unwrap();
        assert!((sol.w - unconstrained.w).norm() < 1e-8);
        assert!(sol.active.is_empty());
    }

    #[test]
    fn infeasible_origin_rejected() {
        let (g, b) = small_problem();
        let mut problem = QpProblem::unconstrained(g, b);
        problem.ineq = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        problem.d = DVector::from_row_slice(&[-1.0]);
        assert!(matches!(solve(&problem), Err(Error::QpInfeasible(_))));
    }

    #[test]
    fn binding_combination_of_eq_and_ineq() {
        // 3 variables, one equality, one inequality that binds
        let g = DMatrix::identity(3, 3);
        let b = DVector::from_row_slice(&[2.0, -1.0, 1.0]);
        let mut problem = QpProblem::unconstrained(g, b);
        problem.eq = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        problem.ineq = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        problem.d = DVector::from_row_slice(&[0.3]);
        let sol = solve(&problem).unwrap();
        assert!(sol.w[0] <= 0.3 + 1e-8);
        assert!((problem.eq.row(0).transpose().dot(&sol.w)).abs() < 1e-8);
        let audit = kkt_audit(&problem, &sol);
        assert!(audit.satisfied(1e-7), "{audit:?}");
    }

    #[test]
    fn deterministic_resolve() {
        let (g, b) = small_problem();
        let mut problem = QpProblem::unconstrained(g, b);
        problem.ineq = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        problem.d = DVector::from_row_slice(&[0.2, 0.1]);
        let s1 = solve(&problem).unwrap();
        let s2 = solve(&problem).unwrap();
        assert_eq!(s1.w.as_slice(), s2.w.as_slice());
    }

    #[test]
    fn redundant_equality_rows_are_reduced() {
        let (g, b) = small_problem();
        let mut problem = QpProblem::unconstrained(g, b);
        // the same constraint row repeated, plus a zero row
        problem.eq = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 0.0, 0.0]);
        let sol = solve(&problem).unwrap();
        assert!((sol.w[0] + sol.w[1]).abs() < 1e-8);
    }

    #[test]
    fn degenerate_origin_constraints() {
        // many d = 0 rows touching the feasible origin; the optimum sits on
        // several of them simultaneously
        let g = DMatrix::identity(3, 3);
        let b = DVector::from_row_slice(&[1.0, 1.0, 1.0]);
        let mut problem = QpProblem::unconstrained(g, b);
        let mut rows = Vec::new();
        for i in 0..12 {
            let phi = i as f64 * 0.5;
            rows.push([phi.cos(), phi.sin(), 0.3 * (phi * 1.7).sin()]);
        }
        problem.ineq = DMatrix::from_fn(12, 3, |r, c| rows[r][c]);
        problem.d = DVector::zeros(12);
        let sol = solve(&problem).unwrap();
        let audit = kkt_audit(&problem, &sol);
        assert!(audit.satisfied(1e-6), "{audit:?}");
        assert!(audit.primal_ineq <= 1e-8);
    }
}
