//! Linear constraints on closure coefficients: black-body equilibria as
//! equalities, hyperbolicity and linear source stability as inequalities.
//!
//! Coefficients follow the stored convention `d/dt u = sum w_j D_j f_j`, so
//! the conservative flux of the F equation is `p^F = -sum w_j f_j` and the
//! hyperbolicity condition `d p^F / d e >= 0` becomes the row
//! `sum_j w_j d f_j / d e <= 0` at each evaluation state. The stability rows
//! bound the source Jacobian: `dq^F/dF <= 0`, `dq^s/dT <= -(alpha/c) dq^s/dS`,
//! and `dq^s/dS <= alpha / rho_cv`. All rows are unit-normalized; the zero
//! coefficient vector is always feasible.

use crate::dataset::MomentDataset;
use crate::mstls::ConstraintBlock;
use crate::physics::UnitSystem;
use crate::termlib::{eval_powers, Slot, TermKind, TermLibrary};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// A state point `(e, F, T, S)`.
pub type State = [f64; 4];

/// Black-body equilibrium family: `(rho_cv T + a T^4, 0, T, (alpha/c) T)`.
/// The last entry is `a sigma_P(T) T^4`, linear in T for this opacity class.
pub fn equilibrium_states(
    t_grid: &[f64],
    rho_cv: f64,
    alpha: f64,
    units: &UnitSystem,
) -> Vec<State> {
    let a = units.radiation_a();
    t_grid
        .iter()
        .map(|&t| [rho_cv * t + a * t.powi(4), 0.0, t, alpha / units.c * t])
        .collect()
}

/// The default constraint temperature grid `linspace(0, 4 T_max, 7)`.
pub fn default_t_grid(t_max: f64) -> Vec<f64> {
    (0..7).map(|i| 4.0 * t_max * i as f64 / 6.0).collect()
}

/// Product grid for the hyperbolicity constraint:
/// `linspace(0, e_max, p_max) x linspace(0, F_max, p_max+1) x linspace(0, T_max, p_max+1)`.
pub fn default_hyperbolicity_grid(e_max: f64, f_max: f64, t_max: f64, p_max: usize) -> Vec<State> {
    let lin = |hi: f64, count: usize| -> Vec<f64> {
        (0..count)
            .map(|i| hi * i as f64 / (count - 1) as f64)
            .collect()
    };
    let es = lin(e_max, p_max);
    let fs = lin(f_max, p_max + 1);
    let ts = lin(t_max, p_max + 1);
    let mut out = Vec::with_capacity(es.len() * fs.len() * ts.len());
    for &e in &es {
        for &f in &fs {
            for &t in &ts {
                out.push([e, f, t, 0.0]);
            }
        }
    }
    out
}

/// The 20 inflow-boundary states `u(0, t_i)` evenly sampled in time.
pub fn inflow_boundary_states(ds: &MomentDataset, count: usize, inflow_ix: usize) -> Vec<State> {
    let nt = ds.nt();
    (0..count)
        .map(|k| {
            let it = if count == 1 {
                0
            } else {
                k * (nt - 1) / (count - 1)
            };
            [
                ds.e[[inflow_ix, it]],
                ds.f[[inflow_ix, it]],
                ds.temp[[inflow_ix, it]],
                ds.s[[inflow_ix, it]],
            ]
        })
        .collect()
}

fn normalize_rows(rows: Vec<Vec<f64>>, d: Vec<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let ncols = rows.first().map_or(0, |r| r.len());
    let mut m = DMatrix::zeros(rows.len(), ncols);
    let mut dv = DVector::zeros(rows.len());
    for (r, (row, di)) in rows.into_iter().zip(d).enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale = if norm > 0.0 { norm } else { 1.0 };
        for (c, v) in row.into_iter().enumerate() {
            m[(r, c)] = v / scale;
        }
        dv[r] = di / scale;
    }
    (m, dv)
}

/// Equality rows enforcing that sources vanish on the equilibrium family.
/// Derivative columns are zero; equations without sources contribute no rows.
pub fn build_equality(library: &TermLibrary, equilibria: &[State]) -> DMatrix<f64> {
    let sources = library.source_indices();
    if sources.is_empty() {
        return DMatrix::zeros(0, library.len());
    }
    let mut rows = Vec::with_capacity(equilibria.len());
    for u in equilibria {
        let mut row = vec![0.0; library.len()];
        for (j, term) in library.terms.iter().enumerate() {
            if term.kind != TermKind::Source {
                continue;
            }
            match term.eval_point(u[0], u[1], u[2], u[3]) {
                Ok(v) => row[j] = v,
                Err(_) => {
                    // genuinely singular entry: excluded with a warning
                    log::warn!(
                        "equality row at T = {} skips singular term {}",
                        u[2],
                        term.label()
                    );
                    row[j] = 0.0;
                }
            }
        }
        rows.push(row);
    }
    let d = vec![0.0; rows.len()];
    normalize_rows(rows, d).0
}

/// Hyperbolicity rows `sum_j w_j df_j/de <= 0` over flux columns.
pub fn build_hyperbolicity(library: &TermLibrary, states: &[State]) -> (DMatrix<f64>, DVector<f64>) {
    let mut rows = Vec::with_capacity(states.len());
    for u in states {
        let mut row = vec![0.0; library.len()];
        for (j, term) in library.terms.iter().enumerate() {
            if term.kind != TermKind::Flux {
                continue;
            }
            if let Some((mult, powers)) = term.derivative(Slot::E) {
                row[j] = mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
        }
        rows.push(row);
    }
    let d = vec![0.0; rows.len()];
    normalize_rows(rows, d)
}

/// Inequality rows bounding the source Jacobian.
pub struct SourceStability {
    /// `dq^F/dF <= 0` rows over the F library.
    pub f_rows: (DMatrix<f64>, DVector<f64>),
    /// `dq^s/dT + (alpha/c) dq^s/dS <= 0` and `dq^s/dS <= alpha/rho_cv` rows
    /// over the S library.
    pub s_rows: (DMatrix<f64>, DVector<f64>),
    /// Evaluation states skipped because a negative temperature power made a
    /// row singular.
    pub skipped: usize,
}

pub fn build_source_stability(
    f_library: &TermLibrary,
    s_library: &TermLibrary,
    states: &[State],
    alpha: f64,
    rho_cv: f64,
    units: &UnitSystem,
) -> SourceStability {
    let mut skipped = 0usize;
    let mut f_c = Vec::new();
    for u in states {
        let mut row = vec![0.0; f_library.len()];
        let mut singular = false;
        for (j, term) in f_library.terms.iter().enumerate() {
            if term.kind != TermKind::Source {
                continue;
            }
            if let Some((mult, powers)) = term.derivative(Slot::F) {
                match eval_powers(&powers, u[0], u[1], u[2], u[3]) {
                    Ok(v) => row[j] = mult * v,
                    Err(_) => {
                        singular = true;
                        break;
                    }
                }
            }
        }
        if singular {
            // negative temperature powers of the flux-damping terms blow up
            // at this node; skip rather than regularize
            log::warn!("source-stability node at T = {} skipped (singular)", u[2]);
            skipped += 1;
            continue;
        }
        f_c.push(row);
    }
    let f_len = f_c.len();
    let f_rows = normalize_rows(f_c, vec![0.0; f_len]);

    let mut s_c = Vec::new();
    let mut s_d = Vec::new();
    let ratio = alpha / units.c;
    for u in states {
        // family: dq/dT + (alpha/c) dq/dS <= 0
        let mut row = vec![0.0; s_library.len()];
        for (j, term) in s_library.terms.iter().enumerate() {
            if term.kind != TermKind::Source {
                continue;
            }
            let mut entry = 0.0;
            if let Some((mult, powers)) = term.derivative(Slot::T) {
                entry += mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
            if let Some((mult, powers)) = term.derivative(Slot::S) {
                entry += ratio * mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
            row[j] = entry;
        }
        s_c.push(row);
        s_d.push(0.0);
    }
    for u in states {
        // family: dq/dS <= alpha / rho_cv
        let mut row = vec![0.0; s_library.len()];
        for (j, term) in s_library.terms.iter().enumerate() {
            if term.kind != TermKind::Source {
                continue;
            }
            if let Some((mult, powers)) = term.derivative(Slot::S) {
                row[j] = mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
        }
        s_c.push(row);
        s_d.push(alpha / rho_cv);
    }
    let s_rows = normalize_rows(s_c, s_d);
    SourceStability {
        f_rows,
        s_rows,
        skipped,
    }
}

/// Constraint-count bookkeeping, emitted with regression reports.
#[derive(Debug, Clone, Serialize)]
pub struct ConstraintReport {
    pub equality_rows: [usize; 4],
    pub hyperbolicity_rows: usize,
    pub stability_f_rows: usize,
    pub stability_s_rows: usize,
    pub skipped_singular_nodes: usize,
}

impl ConstraintReport {
    pub fn total_equality(&self) -> usize {
        self.equality_rows.iter().sum()
    }

    pub fn total_inequality(&self) -> usize {
        self.hyperbolicity_rows + self.stability_f_rows + self.stability_s_rows
    }
}

/// Per-slot constraint blocks in physical coefficient space.
pub struct ConstraintSet {
    pub blocks: [ConstraintBlock; 4],
    pub report: ConstraintReport,
}

/// Assemble the full constraint set for one dataset.
///
/// Equalities are enforced on the 7-point equilibrium temperature grid.
/// Hyperbolicity rows run over the product state grid together with the
/// boundary samples; source stability over the equilibria and the boundary
/// samples. (With every node regular this yields the nominal 48 + 20 + 3*27
/// rows; the T = 0 node of the flux-damping family is singular under negative
/// temperature powers and is skipped.)
pub fn assemble_constraints(
    libraries: &[TermLibrary; 4],
    ds: &MomentDataset,
    alpha: f64,
    units: &UnitSystem,
    p_max: usize,
    boundary_count: usize,
) -> ConstraintSet {
    let stat = |field: &ndarray::Array2<f64>| field.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let e_max = stat(&ds.e);
    let f_max = stat(&ds.f);
    let t_max = stat(&ds.temp);
    let rho_cv = ds.params.rho_cv;

    let t_grid = default_t_grid(t_max);
    let equilibria = equilibrium_states(&t_grid, rho_cv, alpha, units);
    let inflow_ix = 0;
    let boundary = inflow_boundary_states(ds, boundary_count, inflow_ix);

    let mut hyper_states = default_hyperbolicity_grid(e_max, f_max, t_max, p_max);
    hyper_states.extend_from_slice(&boundary);
    let mut stability_states = equilibria.clone();
    stability_states.extend_from_slice(&boundary);

    let eq: Vec<DMatrix<f64>> = libraries
        .iter()
        .map(|lib| build_equality(lib, &equilibria))
        .collect();
    let (hyper_c, hyper_d) = build_hyperbolicity(&libraries[Slot::F.index()], &hyper_states);
    let stability = build_source_stability(
        &libraries[Slot::F.index()],
        &libraries[Slot::S.index()],
        &stability_states,
        alpha,
        rho_cv,
        units,
    );

    let report = ConstraintReport {
        equality_rows: [
            eq[0].nrows(),
            eq[1].nrows(),
            eq[2].nrows(),
            eq[3].nrows(),
        ],
        hyperbolicity_rows: hyper_c.nrows(),
        stability_f_rows: stability.f_rows.0.nrows(),
        stability_s_rows: stability.s_rows.0.nrows(),
        skipped_singular_nodes: stability.skipped,
    };

    // F equation: equalities plus hyperbolicity plus flux damping rows
    let f_ineq_rows = hyper_c.nrows() + stability.f_rows.0.nrows();
    let nf = libraries[Slot::F.index()].len();
    let mut f_ineq = DMatrix::zeros(f_ineq_rows, nf);
    let mut f_d = DVector::zeros(f_ineq_rows);
    f_ineq.rows_mut(0, hyper_c.nrows()).copy_from(&hyper_c);
    f_d.rows_mut(0, hyper_d.len()).copy_from(&hyper_d);
    f_ineq
        .rows_mut(hyper_c.nrows(), stability.f_rows.0.nrows())
        .copy_from(&stability.f_rows.0);
    f_d.rows_mut(hyper_d.len(), stability.f_rows.1.len())
        .copy_from(&stability.f_rows.1);

    let blocks = [
        ConstraintBlock {
            eq: eq[0].clone(),
            ineq: DMatrix::zeros(0, libraries[0].len()),
            d: DVector::zeros(0),
        },
        ConstraintBlock {
            eq: eq[1].clone(),
            ineq: f_ineq,
            d: f_d,
        },
        ConstraintBlock {
            eq: eq[2].clone(),
            ineq: DMatrix::zeros(0, libraries[2].len()),
            d: DVector::zeros(0),
        },
        ConstraintBlock {
            eq: eq[3].clone(),
            ineq: stability.s_rows.0.clone(),
            d: stability.s_rows.1.clone(),
        },
    ];
    ConstraintSet { blocks, report }
}

impl ConstraintSet {
    /// Transform one slot's block into the scaled coefficient space used by
    /// the regression: a physical coefficient is `w_scaled * kb / kcol`, so
    /// constraint entries multiply by `kb / kcol`.
    pub fn scaled_block(
        &self,
        slot: Slot,
        library: &TermLibrary,
        scales: &crate::weakform::ScaleInfo,
    ) -> ConstraintBlock {
        let src = &self.blocks[slot.index()];
        let kb = scales.b_kappa(slot);
        let factors: Vec<f64> = library
            .terms
            .iter()
            .map(|t| kb / scales.column_kappa(t))
            .collect();
        let map = |m: &DMatrix<f64>| {
            DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * factors[c])
        };
        ConstraintBlock {
            eq: map(&src.eq),
            ineq: map(&src.ineq),
            d: src.d.clone(),
        }
    }
}

/// One a-posteriori violation record.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub condition: &'static str,
    pub ix: usize,
    pub it: usize,
    pub value: f64,
    pub threshold: f64,
}

/// Check the hyperbolicity and source-stability conditions pointwise over a
/// dataset for a given coefficient assignment (term, physical coefficient).
pub fn audit_pointwise(
    f_terms: &[(crate::termlib::Term, f64)],
    s_terms: &[(crate::termlib::Term, f64)],
    ds: &MomentDataset,
    alpha: f64,
    rho_cv: f64,
    units: &UnitSystem,
    eps_rel: f64,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    let ratio = alpha / units.c;
    for it in 0..ds.nt() {
        for ix in 0..ds.nx() {
            let u = [
                ds.e[[ix, it]],
                ds.f[[ix, it]],
                ds.temp[[ix, it]],
                ds.s[[ix, it]],
            ];
            // hyperbolicity: sum w df/de <= 0 (up to scale-relative slack)
            let mut val = 0.0;
            let mut scale = 0.0;
            for (term, w) in f_terms {
                if term.kind != TermKind::Flux {
                    continue;
                }
                if let Some((mult, powers)) = term.derivative(Slot::E) {
                    let v = w * mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
                    val += v;
                    scale += v.abs();
                }
            }
            if val > eps_rel * scale.max(1e-300) {
                violations.push(Violation {
                    condition: "hyperbolicity",
                    ix,
                    it,
                    value: val,
                    threshold: eps_rel * scale,
                });
            }
            // flux damping: dq^F/dF <= 0
            let mut val = 0.0;
            let mut scale = 0.0;
            for (term, w) in f_terms {
                if term.kind != TermKind::Source {
                    continue;
                }
                if let Some((mult, powers)) = term.derivative(Slot::F) {
                    let v = w * mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
                    val += v;
                    scale += v.abs();
                }
            }
            if val > eps_rel * scale.max(1e-300) {
                violations.push(Violation {
                    condition: "flux-damping",
                    ix,
                    it,
                    value: val,
                    threshold: eps_rel * scale,
                });
            }
            // opacity-source stability pair
            let mut dt_val = 0.0;
            let mut ds_val = 0.0;
            let mut scale = 0.0;
            for (term, w) in s_terms {
                if term.kind != TermKind::Source {
                    continue;
                }
                if let Some((mult, powers)) = term.derivative(Slot::T) {
                    let v = w * mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
                    dt_val += v;
                    scale += v.abs();
                }
                if let Some((mult, powers)) = term.derivative(Slot::S) {
                    let v = w * mult * eval_powers(&powers, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
                    ds_val += v;
                    scale += v.abs();
                }
            }
            if dt_val + ratio * ds_val > eps_rel * scale.max(1e-300) {
                violations.push(Violation {
                    condition: "opacity-source-trace",
                    ix,
                    it,
                    value: dt_val + ratio * ds_val,
                    threshold: eps_rel * scale,
                });
            }
            let bound = alpha / rho_cv;
            if ds_val > bound + eps_rel * scale.max(bound) {
                violations.push(Violation {
                    condition: "opacity-source-rate",
                    ix,
                    it,
                    value: ds_val,
                    threshold: bound,
                });
            }
        }
    }
    violations
}
