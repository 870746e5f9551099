//! Conservative finite-volume forward solver: WENO5 in space with local
//! Lax-Friedrichs splitting, embedded Dormand-Prince 4(5) in time, and
//! quadratic-in-time Dirichlet boundaries fed by data samples.
//!
//! The integrated system is `d/dt u + d/dx p(u) = q(u)` over
//! `u = (e, F, T, S)`; wave speeds for the splitting come from the
//! characteristic set `{0, d, (b +- sqrt(b^2 + 4a))/2}` of the flux Jacobian.
//! Positivity of `T` and `S` is monitored, never clipped: the first violation
//! aborts the run with its location.

use crate::closure::ClosureModel;
use crate::dataset::{Grid, MomentDataset, ProblemParams, Provenance};
use crate::error::{Error, Result};
use crate::physics::{OpacitySpec, UnitSystem, PI4, ROSSELAND_INTEGRAL};
use crate::termlib::Slot;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub const WENO_EPS: f64 = 1e-6;

/// Balance law with pointwise flux, source, and wave-speed bound.
pub trait BalanceLaw: Sync {
    fn flux(&self, u: &[f64; 4]) -> Result<[f64; 4]>;
    fn source(&self, u: &[f64; 4]) -> Result<[f64; 4]>;
    fn max_speed(&self, u: &[f64; 4]) -> f64;
}

impl BalanceLaw for ClosureModel {
    fn flux(&self, u: &[f64; 4]) -> Result<[f64; 4]> {
        // conservative flux is the negative of the +dx aggregate
        Ok([
            -self.flux_aggregate(Slot::E, u)?,
            -self.flux_aggregate(Slot::F, u)?,
            0.0,
            -self.flux_aggregate(Slot::S, u)?,
        ])
    }

    fn source(&self, u: &[f64; 4]) -> Result<[f64; 4]> {
        Ok([
            self.source_aggregate(Slot::E, u)?,
            self.source_aggregate(Slot::F, u)?,
            self.source_aggregate(Slot::T, u)?,
            self.source_aggregate(Slot::S, u)?,
        ])
    }

    fn max_speed(&self, u: &[f64; 4]) -> f64 {
        self.max_wave_speed(u)
    }
}

/// Quadratic-in-time fit `v(t) = c0 + c1 t + c2 t^2` to boundary samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QuadraticFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl QuadraticFit {
    pub fn constant(v: f64) -> Self {
        QuadraticFit {
            c0: v,
            c1: 0.0,
            c2: 0.0,
        }
    }

    /// Least-squares fit; needs at least 3 samples. Times are shifted and
    /// scaled internally for conditioning.
    pub fn fit(ts: &[f64], vs: &[f64]) -> Result<Self> {
        if ts.len() < 3 || ts.len() != vs.len() {
            return Err(Error::InvalidArgument(format!(
                "quadratic fit needs >= 3 samples, got {}",
                ts.len()
            )));
        }
        let t0 = ts[0];
        let scale = (ts[ts.len() - 1] - t0).max(1e-300);
        let mut ata = [[0.0f64; 3]; 3];
        let mut atb = [0.0f64; 3];
        for (&t, &v) in ts.iter().zip(vs) {
            let s = (t - t0) / scale;
            let row = [1.0, s, s * s];
            for i in 0..3 {
                for j in 0..3 {
                    ata[i][j] += row[i] * row[j];
                }
                atb[i] += row[i] * v;
            }
        }
        let m = nalgebra::Matrix3::from_fn(|r, c| ata[r][c]);
        let b = nalgebra::Vector3::from_row_slice(&atb);
        let sol = m
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidArgument("degenerate quadratic fit".into()))?;
        // unscale: v = a + b s + c s^2 with s = (t - t0)/scale
        let (a, bb, c) = (sol[0], sol[1], sol[2]);
        let c2 = c / (scale * scale);
        let c1 = bb / scale - 2.0 * c2 * t0;
        let c0 = a - bb * t0 / scale + c2 * t0 * t0;
        Ok(QuadraticFit { c0, c1, c2 })
    }

    pub fn value(&self, t: f64) -> f64 {
        self.c0 + self.c1 * t + self.c2 * t * t
    }
}

/// Ghost-cell policy for one variable on one side.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub enum BoundaryKind {
    /// Time-dependent boundary value; both ghosts take it.
    Dirichlet(QuadraticFit),
    /// Zero-gradient outflow.
    Copy,
    /// Reflection; `odd` flips the sign (used for F).
    Mirror { odd: bool },
}

/// Per-variable boundary treatment for one side, in slot order (e, F, T, S).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SideBoundary {
    pub kinds: [BoundaryKind; 4],
}

impl SideBoundary {
    pub fn outflow() -> Self {
        SideBoundary {
            kinds: [BoundaryKind::Copy; 4],
        }
    }

    /// Dirichlet for (e, F, S); T carries no flux and copies.
    pub fn dirichlet(e: QuadraticFit, f: QuadraticFit, s: QuadraticFit) -> Self {
        SideBoundary {
            kinds: [
                BoundaryKind::Dirichlet(e),
                BoundaryKind::Dirichlet(f),
                BoundaryKind::Copy,
                BoundaryKind::Dirichlet(s),
            ],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverConfig {
    pub rel_tol: f64,
    /// Absolute tolerance as a fraction of each variable's initial scale.
    pub abs_tol_scale: f64,
    pub cfl: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rel_tol: 1e-6,
            abs_tol_scale: 1e-8,
            cfl: 0.45,
            max_steps: 2_000_000,
        }
    }
}

/// Left-biased WENO5 reconstruction at the `i+1/2` interface from
/// `{i-2, .., i+2}` cell values.
pub fn weno5_left(f: &[f64; 5]) -> f64 {
    let q0 = (2.0 * f[0] - 7.0 * f[1] + 11.0 * f[2]) / 6.0;
    let q1 = (-f[1] + 5.0 * f[2] + 2.0 * f[3]) / 6.0;
    let q2 = (2.0 * f[2] + 5.0 * f[3] - f[4]) / 6.0;
    let b0 = 13.0 / 12.0 * (f[0] - 2.0 * f[1] + f[2]).powi(2)
        + 0.25 * (f[0] - 4.0 * f[1] + 3.0 * f[2]).powi(2);
    let b1 = 13.0 / 12.0 * (f[1] - 2.0 * f[2] + f[3]).powi(2) + 0.25 * (f[1] - f[3]).powi(2);
    let b2 = 13.0 / 12.0 * (f[2] - 2.0 * f[3] + f[4]).powi(2)
        + 0.25 * (3.0 * f[2] - 4.0 * f[3] + f[4]).powi(2);
    let a0 = 0.1 / ((WENO_EPS + b0) * (WENO_EPS + b0));
    let a1 = 0.6 / ((WENO_EPS + b1) * (WENO_EPS + b1));
    let a2 = 0.3 / ((WENO_EPS + b2) * (WENO_EPS + b2));
    let s = a0 + a1 + a2;
    (a0 * q0 + a1 * q1 + a2 * q2) / s
}

/// Right-biased reconstruction at `i+1/2`: the mirror of the left-biased one
/// applied to the reversed stencil `{i+3, .., i-1}`.
pub fn weno5_right(f: &[f64; 5]) -> f64 {
    let rev = [f[4], f[3], f[2], f[1], f[0]];
    weno5_left(&rev)
}

fn ghost_value(
    kind: &BoundaryKind,
    t: f64,
    edge: f64,
    interior: f64,
) -> f64 {
    match kind {
        BoundaryKind::Dirichlet(fit) => fit.value(t),
        BoundaryKind::Copy => edge,
        BoundaryKind::Mirror { odd } => {
            if *odd {
                -interior
            } else {
                interior
            }
        }
    }
}

/// Spatial operator: fills `out` with `-dp/dx + q` and returns the boundary
/// fluxes `(left, right)` of the conserved first component for bookkeeping.
fn spatial_rhs<M: BalanceLaw>(
    model: &M,
    states: &[[f64; 4]],
    t: f64,
    dx: f64,
    left: &SideBoundary,
    right: &SideBoundary,
    out: &mut [[f64; 4]],
) -> Result<([f64; 4], [f64; 4])> {
    let n = states.len();
    // extended state: three ghost entries per side (the outermost replicates,
    // so two ghost values carry all boundary data)
    let mut ext: Vec<[f64; 4]> = Vec::with_capacity(n + 6);
    let mut lg1 = [0.0; 4];
    let mut lg2 = [0.0; 4];
    let mut rg1 = [0.0; 4];
    let mut rg2 = [0.0; 4];
    for k in 0..4 {
        lg1[k] = ghost_value(&left.kinds[k], t, states[0][k], states[0][k]);
        lg2[k] = ghost_value(&left.kinds[k], t, states[0][k], states[1][k]);
        rg1[k] = ghost_value(&right.kinds[k], t, states[n - 1][k], states[n - 1][k]);
        rg2[k] = ghost_value(&right.kinds[k], t, states[n - 1][k], states[n - 2][k]);
    }
    ext.push(lg2);
    ext.push(lg2);
    ext.push(lg1);
    ext.extend_from_slice(states);
    ext.push(rg1);
    ext.push(rg2);
    ext.push(rg2);

    let ne = ext.len();
    let mut fluxes = Vec::with_capacity(ne);
    let mut speeds = Vec::with_capacity(ne);
    for u in &ext {
        fluxes.push(model.flux(u)?);
        speeds.push(model.max_speed(u));
    }

    // interface j sits at x_{j-1/2} between interior cells j-1 and j, whose
    // extended indices are c = j+2 and c+1
    let mut f_hat = vec![[0.0; 4]; n + 1];
    for (j, fh) in f_hat.iter_mut().enumerate() {
        let c = j + 2;
        let alpha = speeds[(c - 2)..(c + 4).min(ne)]
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        for k in 0..4 {
            let mut plus = [0.0; 5];
            let mut minus = [0.0; 5];
            for (s, (pv, mv)) in plus.iter_mut().zip(minus.iter_mut()).enumerate() {
                let ip = c - 2 + s;
                let im = c - 1 + s;
                *pv = 0.5 * (fluxes[ip][k] + alpha * ext[ip][k]);
                *mv = 0.5 * (fluxes[im][k] - alpha * ext[im][k]);
            }
            fh[k] = weno5_left(&plus) + weno5_right(&minus);
        }
    }

    for i in 0..n {
        let q = model.source(&states[i])?;
        for k in 0..4 {
            out[i][k] = -(f_hat[i + 1][k] - f_hat[i][k]) / dx + q[k];
        }
    }
    Ok((f_hat[0], f_hat[n]))
}

/// Dormand-Prince 5(4) coefficients.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

pub struct Simulation<'a, M: BalanceLaw> {
    pub model: &'a M,
    pub x: Grid,
    pub left: SideBoundary,
    pub right: SideBoundary,
    pub config: SolverConfig,
}

pub struct SimResult {
    pub fields: [Array2<f64>; 4],
    pub steps: usize,
    pub rejected: usize,
    /// Largest embedded error estimate among accepted steps.
    pub max_error_estimate: f64,
}

impl<'a, M: BalanceLaw> Simulation<'a, M> {
    /// Integrate from `ic` over the uniform output time grid, recording the
    /// state at every output point (the stepper lands on them exactly).
    pub fn run(&self, ic: &[[f64; 4]], t_grid: &Grid) -> Result<SimResult> {
        let n = self.x.n;
        if ic.len() != n {
            return Err(Error::InvalidArgument(
                "initial condition length differs from grid".into(),
            ));
        }
        if n < 16 {
            return Err(Error::InvalidArgument("solver needs at least 16 cells".into()));
        }
        let dx = self.x.step;
        let nt = t_grid.n;
        let mut fields = [
            Array2::zeros((n, nt)),
            Array2::zeros((n, nt)),
            Array2::zeros((n, nt)),
            Array2::zeros((n, nt)),
        ];
        let mut state: Vec<[f64; 4]> = ic.to_vec();
        let record = |fields: &mut [Array2<f64>; 4], state: &[[f64; 4]], it: usize| {
            for i in 0..n {
                for k in 0..4 {
                    fields[k][[i, it]] = state[i][k];
                }
            }
        };
        record(&mut fields, &state, 0);

        // per-variable error scales from the initial condition
        let mut scales = [0.0f64; 4];
        for u in &state {
            for k in 0..4 {
                scales[k] = scales[k].max(u[k].abs());
            }
        }
        for s in &mut scales {
            if *s == 0.0 {
                *s = 1.0;
            }
        }

        let mut t = t_grid.start;
        let mut steps = 0usize;
        let mut rejected = 0usize;
        let mut max_err = 0.0f64;

        // initial dt from the CFL bound
        let speed0 = state
            .iter()
            .map(|u| self.model.max_speed(u))
            .fold(1e-300, f64::max);
        let mut dt = self.config.cfl * dx / speed0;

        let mut k_stages: Vec<Vec<[f64; 4]>> = vec![vec![[0.0; 4]; n]; 7];
        let mut stage_state = vec![[0.0; 4]; n];

        for it in 1..nt {
            let t_target = t_grid.coord(it);
            while t < t_target - 1e-15 * t_target.abs().max(1e-300) {
                if steps + rejected > self.config.max_steps {
                    return Err(Error::StepUnderflow { time: t, dt });
                }
                // CFL ceiling from the current state
                let speed = state
                    .iter()
                    .map(|u| self.model.max_speed(u))
                    .fold(1e-300, f64::max);
                dt = dt.min(self.config.cfl * dx / speed);
                if t + dt > t_target {
                    dt = t_target - t;
                }
                if !(dt > 0.0) || dt < 1e-18 * t_target.max(1e-300) {
                    return Err(Error::StepUnderflow { time: t, dt });
                }

                // Dormand-Prince stages
                let mut blow_up: Option<Error> = None;
                for s in 0..7 {
                    for i in 0..n {
                        let mut acc = state[i];
                        for (j, kj) in k_stages.iter().enumerate().take(s) {
                            let a = DP_A[s][j];
                            if a != 0.0 {
                                for kvar in 0..4 {
                                    acc[kvar] += dt * a * kj[i][kvar];
                                }
                            }
                        }
                        stage_state[i] = acc;
                    }
                    let (stage_out, rest) = k_stages.split_at_mut(s + 1);
                    let _ = rest;
                    match spatial_rhs(
                        self.model,
                        &stage_state,
                        t + DP_C[s] * dt,
                        dx,
                        &self.left,
                        &self.right,
                        &mut stage_out[s],
                    ) {
                        Ok(_) => {}
                        Err(e) => {
                            blow_up = Some(e);
                            break;
                        }
                    }
                }
                if let Some(e) = blow_up {
                    // a stage left the model's domain (negative temperature
                    // powers); treat like an error-controlled rejection
                    dt *= 0.25;
                    rejected += 1;
                    if dt < 1e-18 * t_target.max(1e-300) {
                        return Err(e);
                    }
                    continue;
                }

                // 5th-order candidate and embedded error
                let mut err = 0.0f64;
                for i in 0..n {
                    for k in 0..4 {
                        let mut v5 = state[i][k];
                        let mut v4 = state[i][k];
                        for s in 0..7 {
                            v5 += dt * DP_B5[s] * k_stages[s][i][k];
                            v4 += dt * DP_B4[s] * k_stages[s][i][k];
                        }
                        stage_state[i][k] = v5;
                        let tol = self.config.abs_tol_scale * scales[k]
                            + self.config.rel_tol * v5.abs();
                        err = err.max(((v5 - v4) / tol).abs());
                    }
                }
                if err > 1.0 {
                    rejected += 1;
                    dt *= (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
                    continue;
                }
                // accepted: positivity monitor on T and S
                for (i, u) in stage_state.iter().enumerate() {
                    if u[3] < 0.0 {
                        return Err(Error::ClosureBlowUp {
                            variable: "sigma_E E",
                            cell: i,
                            time: t + dt,
                        });
                    }
                    if u[2] < 0.0 {
                        return Err(Error::ClosureBlowUp {
                            variable: "T",
                            cell: i,
                            time: t + dt,
                        });
                    }
                }
                state.copy_from_slice(&stage_state);
                t += dt;
                steps += 1;
                max_err = max_err.max(err);
                dt *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
            }
            t = t_target;
            record(&mut fields, &state, it);
        }
        Ok(SimResult {
            fields,
            steps,
            rejected,
            max_error_estimate: max_err,
        })
    }
}

/// Run a closure model and package the output as a dataset.
pub fn simulate_closure(
    model: &ClosureModel,
    x: Grid,
    t_grid: Grid,
    ic: &[[f64; 4]],
    left: SideBoundary,
    right: SideBoundary,
    config: SolverConfig,
    params: ProblemParams,
) -> Result<MomentDataset> {
    let sim = Simulation {
        model,
        x,
        left,
        right,
        config,
    };
    let result = sim.run(ic, &t_grid)?;
    let [e, f, t, s] = result.fields;
    MomentDataset::new(
        x,
        t_grid,
        e,
        f,
        t,
        s,
        params,
        Provenance::new("closure-forward", "-"),
    )
}

/// Reference closures usable as verification oracles and data generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceKind {
    /// Isotropic-pressure first-moment closure with a Rosseland flux sink and
    /// a stable relaxation form for the opacity moment.
    P1,
}

/// Build a reference closure as a constant-coefficient model within the
/// standard libraries (caps 4, 3), so learned-model machinery applies to it
/// unchanged.
pub fn reference_closure(
    kind: ReferenceKind,
    gamma: f64,
    rho_cv: f64,
    units: &UnitSystem,
) -> Result<ClosureModel> {
    match kind {
        ReferenceKind::P1 => {
            let mut model = ClosureModel::analytic_skeleton(
                4,
                3,
                crate::closure::ClosureParams {
                    gamma,
                    t_in_cubed: 1e9,
                },
                rho_cv,
                units,
            )?;
            let c = units.c;
            let alpha = OpacitySpec::larsen(gamma)?.alpha(units);
            let f_lib = &model.libraries[Slot::F.index()];
            let set = |lib: &crate::termlib::TermLibrary,
                       coeffs: &mut Vec<f64>,
                       powers: crate::termlib::Powers,
                       w: f64| {
                let j = lib
                    .terms
                    .iter()
                    .position(|t| t.powers == powers)
                    .expect("term in library");
                coeffs[j] = w;
            };
            let p = |e: i32, f: i32, t: i32, s: i32| crate::termlib::Powers { e, f, t, s };
            // dt F = dx(-(c^2/3) e + (c^2 rho_cv / 3) T) - c sigma_R(T) F
            let mut f_coeffs = model.coeffs[Slot::F.index()].clone();
            set(f_lib, &mut f_coeffs, p(1, 0, 0, 0), -c * c / 3.0);
            set(f_lib, &mut f_coeffs, p(0, 0, 1, 0), c * c * rho_cv / 3.0);
            let sigma_r_coeff = 4.0 * PI4 / (15.0 * ROSSELAND_INTEGRAL) * gamma;
            set(f_lib, &mut f_coeffs, p(0, 1, -3, 0), -c * sigma_r_coeff);
            model.coeffs[Slot::F.index()] = f_coeffs;
            // dt S = dx(-kappa F) + beta ((alpha/c) T S - S^2) / s_scale:
            // advection of the opacity moment plus relaxation onto the
            // equilibrium family S = (alpha/c) T
            let s_lib = &model.libraries[Slot::S.index()];
            let mut s_coeffs = model.coeffs[Slot::S.index()].clone();
            let kappa = 0.5 * alpha / (c * c);
            set(s_lib, &mut s_coeffs, p(0, 1, 0, 0), -kappa);
            // relaxation rate ~ (alpha / rho_cv) at the equilibrium scale
            let s_scale = alpha / c * 1000.0; // S at T ~ 1e3 eV
            let beta = 0.5 * alpha / rho_cv / s_scale;
            set(s_lib, &mut s_coeffs, p(0, 0, 1, 1), beta * alpha / c);
            set(s_lib, &mut s_coeffs, p(0, 0, 0, 2), -beta);
            model.coeffs[Slot::S.index()] = s_coeffs;
            model.notes.push("P1 reference closure".into());
            Ok(model)
        }
    }
}

/// Gray-diffusion reference: `dE/dt = d/dx (v/sigma0 dE/dx) - c sigma0 (E - a T^4)`
/// with `rho_cv dT/dt = c sigma0 (E - a T^4)`, integrated by operator
/// splitting with implicit diffusion and a locally conservative reaction.
pub struct GrayDiffusion {
    pub sigma0: f64,
    pub v: f64,
    pub rho_cv: f64,
    pub units: UnitSystem,
    /// Reaction on/off, for pure-diffusion verification runs.
    pub with_reaction: bool,
}

impl GrayDiffusion {
    /// Advance `(E, T)` by `steps` of size `dt` on a uniform grid with
    /// zero-flux walls. Returns the fields at the final time.
    pub fn run(
        &self,
        e0: &[f64],
        t0: &[f64],
        dx: f64,
        dt: f64,
        steps: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = e0.len();
        let mut e = e0.to_vec();
        let mut temp = t0.to_vec();
        let d = self.v / self.sigma0;
        let r = d * dt / (dx * dx);
        let a_rad = self.units.radiation_a();
        for _ in 0..steps {
            // implicit diffusion: (I - dt D Lap) e_new = e, Thomas solve
            let mut lower = vec![-r; n];
            let mut diag = vec![1.0 + 2.0 * r; n];
            let mut upper = vec![-r; n];
            // zero-flux boundary stencils
            diag[0] = 1.0 + r;
            diag[n - 1] = 1.0 + r;
            lower[0] = 0.0;
            upper[n - 1] = 0.0;
            let mut rhs = e.clone();
            for i in 1..n {
                let m = lower[i] / diag[i - 1];
                diag[i] -= m * upper[i - 1];
                rhs[i] -= m * rhs[i - 1];
            }
            e[n - 1] = rhs[n - 1] / diag[n - 1];
            for i in (0..n - 1).rev() {
                e[i] = (rhs[i] - upper[i] * e[i + 1]) / diag[i];
            }
            if self.with_reaction {
                // pointwise implicit exchange conserving E + rho_cv T
                for i in 0..n {
                    let total = e[i] + self.rho_cv * temp[i];
                    let mut t_new = temp[i];
                    for _ in 0..50 {
                        let e_bal = total - self.rho_cv * t_new;
                        let g = self.rho_cv * (t_new - temp[i])
                            - dt * self.units.c * self.sigma0 * (e_bal - a_rad * t_new.powi(4));
                        let dg = self.rho_cv
                            + dt * self.units.c
                                * self.sigma0
                                * (self.rho_cv + 4.0 * a_rad * t_new.powi(3));
                        let step = g / dg;
                        t_new -= step;
                        if step.abs() <= 1e-13 * t_new.abs().max(1e-300) {
                            break;
                        }
                    }
                    e[i] = total - self.rho_cv * t_new;
                    temp[i] = t_new;
                }
            }
        }
        (e, temp)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closure::{ClosureModel, ClosureParams};

    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    /// Linear two-field wave model: dt e = -dx F, dt F = -(cc/3) dx e.
    fn wave_model(cc: f64) -> ClosureModel {
        let mut m = ClosureModel::analytic_skeleton(
            2,
            2,
            ClosureParams {
                gamma: 1e9,
                t_in_cubed: 1e9,
            },
            1e23,
            &units(),
        )
        .unwrap();
        // silence the analytic T relaxation for the pure wave test
        m.coeffs[2] = vec![0.0, 0.0];
        let lib = &m.libraries[1];
        let j = lib
            .terms
            .iter()
            .position(|t| {
                t.powers
                    == crate::termlib::Powers {
                        e: 1,
                        f: 0,
                        t: 0,
                        s: 0,
                    }
            })
            .unwrap();
        m.coeffs[1][j] = -cc / 3.0;
        m
    }

    #[test]
    fn weno_constant_is_exact() {
        let v = weno5_left(&[3.7; 5]);
        assert!((v - 3.7).abs() <= 2.0 * f64::EPSILON * 3.7);
        let v = weno5_right(&[3.7; 5]);
        assert!((v - 3.7).abs() <= 2.0 * f64::EPSILON * 3.7);
    }

    #[test]
    fn weno_smooth_convergence_order() {
        // feed exact cell averages of sin; the interface reconstruction is
        // then 5th-order accurate (amplitude keeps beta >> eps)
        let err_at = |n: usize| -> f64 {
            let h = 2.0 * std::f64::consts::PI / n as f64;
            let amp = 10.0;
            let avg = |i: i64| -> f64 {
                let xl = i as f64 * h - 0.5 * h;
                let xr = i as f64 * h + 0.5 * h;
                amp * (xl.cos() - xr.cos()) / h
            };
            let mut max_err = 0.0f64;
            for i in 0..n as i64 {
                let f = [avg(i - 2), avg(i - 1), avg(i), avg(i + 1), avg(i + 2)];
                let rec = weno5_left(&f);
                let exact = amp * ((i as f64 + 0.5) * h).sin();
                max_err = max_err.max((rec - exact).abs());
            }
            max_err
        };
        let e1 = err_at(32);
        let e2 = err_at(64);
        let e3 = err_at(128);
        let slope1 = (e1 / e2).log2();
        let slope2 = (e2 / e3).log2();
        assert!(slope1 > 4.5, "slope {slope1}");
        assert!(slope2 > 4.5, "slope {slope2}");
    }

    #[test]
    fn weno_no_new_extrema_on_step_data() {
        let f = [0.0, 0.0, 1.0, 1.0, 1.0];
        let v = weno5_left(&f);
        assert!(v >= -1e-12 && v <= 1.0 + 1e-12, "{v}");
        let f = [1.0, 1.0, 1.0, 0.0, 0.0];
        let v = weno5_left(&f);
        assert!(v >= -1e-12 && v <= 1.0 + 1e-12, "{v}");
    }

    #[test]
    fn quadratic_fit_recovers_polynomial() {
        let ts: Vec<f64> = (0..9).map(|i| 1e-12 * i as f64).collect();
        let vs: Vec<f64> = ts.iter().map(|&t| 2.0 + 3e10 * t - 4e21 * t * t).collect();
        let fit = QuadraticFit::fit(&ts, &vs).unwrap();
        for &t in &ts {
            let v = 2.0 + 3e10 * t - 4e21 * t * t;
            assert!((fit.value(t) - v).abs() < 1e-9 * v.abs().max(1.0));
        }
        assert!(QuadraticFit::fit(&ts[..2], &vs[..2]).is_err());
    }

    #[test]
    fn interior_update_telescopes_to_boundary_fluxes() {
        // the e component has no source, so sum dx * rhs_e = f_left - f_right
        let m = wave_model(9e20);
        let n = 64;
        let dx = 1.0 / n as f64;
        let states: Vec<[f64; 4]> = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * dx;
                [(x * 6.0).sin() + 2.0, (x * 4.4).cos(), 1.0, 0.1]
            })
            .collect();
        let mut out = vec![[0.0; 4]; n];
        let (fl, fr) = spatial_rhs(
            &m,
            &states,
            0.0,
            dx,
            &SideBoundary::outflow(),
            &SideBoundary::outflow(),
            &mut out,
        )
        .unwrap();
        let total: f64 = out.iter().map(|r| r[0] * dx).sum();
        let expect = fl[0] - fr[0];
        assert!(
            (total - expect).abs() <= 1e-12 * expect.abs().max(1.0),
            "{total} vs {expect}"
        );
    }

    #[test]
    fn rhs_mirror_equivariance() {
        let m = wave_model(9e20);
        let n = 48;
        let dx = 1.0 / n as f64;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let states: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(1.0..2.0),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(0.5..1.5),
                    rng.gen_range(0.1..0.9),
                ]
            })
            .collect();
        let mirrored: Vec<[f64; 4]> = states
            .iter()
            .rev()
            .map(|u| [u[0], -u[1], u[2], u[3]])
            .collect();
        let mut out = vec![[0.0; 4]; n];
        let mut out_m = vec![[0.0; 4]; n];
        let bc = SideBoundary {
            kinds: [
                BoundaryKind::Mirror { odd: false },
                BoundaryKind::Mirror { odd: true },
                BoundaryKind::Mirror { odd: false },
                BoundaryKind::Mirror { odd: false },
            ],
        };
        spatial_rhs(&m, &states, 0.0, dx, &bc, &bc, &mut out).unwrap();
        spatial_rhs(&m, &mirrored, 0.0, dx, &bc, &bc, &mut out_m).unwrap();
        let parity = [1.0, -1.0, 1.0, 1.0];
        let scale = out
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            for k in 0..4 {
                let lhs = out_m[n - 1 - i][k];
                let rhs = parity[k] * out[i][k];
                assert!(
                    (lhs - rhs).abs() <= 1e-12 * scale,
                    "cell {i} comp {k}: {lhs} vs {rhs}"
                );
            }
        }
    }

    #[test]
    fn p1_pulse_speed_is_c_over_sqrt3() {
        let u = units();
        let m = wave_model(u.c * u.c);
        let n = 512;
        let length = 4.0;
        let x = Grid {
            start: length / (2.0 * n as f64),
            step: length / n as f64,
            n,
        };
        let x0 = 2.0;
        let ic: Vec<[f64; 4]> = (0..n)
            .map(|i| {
                let xi = x.coord(i);
                [
                    1.0 + (-(xi - x0) * (xi - x0) / 0.01).exp(),
                    0.0,
                    1.0,
                    0.1,
                ]
            })
            .collect();
        let t_final = 1.5 / (u.c / 3f64.sqrt());
        let t_grid = Grid {
            start: 0.0,
            step: t_final / 4.0,
            n: 5,
        };
        let sim = Simulation {
            model: &m,
            x,
            left: SideBoundary::outflow(),
            right: SideBoundary::outflow(),
            config: SolverConfig::default(),
        };
        let out = sim.run(&ic, &t_grid).unwrap();
        // right-moving peak position at the final time
        let mut best = (0usize, 0.0);
        for i in n / 2..n {
            let v = out.fields[0][[i, 4]] - 1.0;
            if v > best.1 {
                best = (i, v);
            }
        }
        let measured = x.coord(best.0) - x0;
        let expected = u.c / 3f64.sqrt() * t_final;
        assert!(
            ((measured - expected) / expected).abs() < 0.02,
            "front at {measured} vs {expected}"
        );
    }

    #[test]
    fn dalembert_half_split_profile() {
        // two counter-propagating halves: e(x, t) = (e0(x-at) + e0(x+at))/2
        let m = wave_model(3.0); // wave speed 1
        let n = 1024;
        let length = 4.0;
        let x = Grid {
            start: length / (2.0 * n as f64),
            step: length / n as f64,
            n,
        };
        let pulse = |xi: f64| (-(xi - 2.0) * (xi - 2.0) / 0.04).exp();
        let ic: Vec<[f64; 4]> = (0..n)
            .map(|i| [1.0 + pulse(x.coord(i)), 0.0, 1.0, 0.1])
            .collect();
        let t_final = 0.8;
        let t_grid = Grid {
            start: 0.0,
            step: t_final,
            n: 2,
        };
        let mut config = SolverConfig::default();
        config.rel_tol = 1e-8;
        let sim = Simulation {
            model: &m,
            x,
            left: SideBoundary::outflow(),
            right: SideBoundary::outflow(),
            config,
        };
        let out = sim.run(&ic, &t_grid).unwrap();
        let mut max_err = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..n {
            let xi = x.coord(i);
            let exact = 1.0 + 0.5 * (pulse(xi - t_final) + pulse(xi + t_final));
            let got = out.fields[0][[i, 1]];
            max_err = max_err.max((got - exact).abs());
            scale = scale.max((exact - 1.0).abs());
        }
        assert!(max_err / scale < 1e-4, "relative error {}", max_err / scale);
    }

    #[test]
    fn blackbody_dirichlet_state_is_stationary() {
        let u = units();
        let m = ClosureModel::analytic_skeleton(
            4,
            3,
            ClosureParams {
                gamma: 1e9,
                t_in_cubed: 1e9,
            },
            1e23,
            &u,
        )
        .unwrap();
        let alpha = OpacitySpec::larsen(1e9).unwrap().alpha(&u);
        let t_star = 400.0f64;
        let a = u.radiation_a();
        let eq = [
            1e23 * t_star + a * t_star.powi(4),
            0.0,
            t_star,
            alpha / u.c * t_star,
        ];
        let n = 64;
        let x = Grid {
            start: 0.5 / n as f64,
            step: 1.0 / n as f64,
            n,
        };
        let ic = vec![eq; n];
        let bc = SideBoundary::dirichlet(
            QuadraticFit::constant(eq[0]),
            QuadraticFit::constant(eq[1]),
            QuadraticFit::constant(eq[3]),
        );
        let t_grid = Grid {
            start: 0.0,
            step: 1e-11,
            n: 3,
        };
        let sim = Simulation {
            model: &m,
            x,
            left: bc.clone(),
            right: bc,
            config: SolverConfig::default(),
        };
        let out = sim.run(&ic, &t_grid).unwrap();
        for i in 0..n {
            for (k, &ref_v) in eq.iter().enumerate() {
                let got = out.fields[k][[i, 2]];
                let denom = if ref_v == 0.0 { eq[0] } else { ref_v };
                assert!(
                    ((got - ref_v) / denom).abs() < 1e-6,
                    "component {k} cell {i}: {got} vs {ref_v}"
                );
            }
        }
    }

    #[test]
    fn self_convergence_within_error_estimate() {
        let m = wave_model(3.0);
        let pulse = |xi: f64| (-(xi - 2.0) * (xi - 2.0) / 0.04).exp();
        let run = |n: usize| -> (Vec<f64>, f64) {
            let x = Grid {
                start: 4.0 / (2.0 * n as f64),
                step: 4.0 / n as f64,
                n,
            };
            let ic: Vec<[f64; 4]> = (0..n)
                .map(|i| [1.0 + pulse(x.coord(i)), 0.0, 1.0, 0.1])
                .collect();
            let t_grid = Grid {
                start: 0.0,
                step: 0.5,
                n: 2,
            };
            let sim = Simulation {
                model: &m,
                x,
                left: SideBoundary::outflow(),
                right: SideBoundary::outflow(),
                config: SolverConfig::default(),
            };
            let out = sim.run(&ic, &t_grid).unwrap();
            (
                (0..n).map(|i| out.fields[0][[i, 1]]).collect(),
                out.max_error_estimate,
            )
        };
        let (coarse, _) = run(128);
        let (fine, _) = run(256);
        // compare on the coarse grid
        let mut diff = 0.0f64;
        for i in 0..128 {
            diff = diff.max((coarse[i] - 0.5 * (fine[2 * i] + fine[2 * i + 1])).abs());
        }
        // the spatial scheme dominates; the difference stays small
        assert!(diff < 5e-3, "coarse-fine difference {diff}");
    }

    #[test]
    fn negative_s_reports_blow_up() {
        // a model that forces S negative: dt S = -rate * T with S0 tiny
        let mut m = ClosureModel::analytic_skeleton(
            2,
            2,
            ClosureParams {
                gamma: 1e9,
                t_in_cubed: 1e9,
            },
            1e23,
            &units(),
        )
        .unwrap();
        m.coeffs[2] = vec![0.0, 0.0];
        let s_lib = &m.libraries[3];
        let j = s_lib
            .terms
            .iter()
            .position(|t| {
                t.kind == crate::termlib::TermKind::Source
                    && t.powers
                        == crate::termlib::Powers {
                            e: 0,
                            f: 0,
                            t: 1,
                            s: 0,
                        }
            })
            .unwrap();
        m.coeffs[3][j] = -1.0;
        let n = 32;
        let x = Grid {
            start: 0.5 / n as f64,
            step: 1.0 / n as f64,
            n,
        };
        let ic = vec![[1.0, 0.0, 1.0, 1e-3]; n];
        let t_grid = Grid {
            start: 0.0,
            step: 1.0,
            n: 2,
        };
        let sim = Simulation {
            model: &m,
            x,
            left: SideBoundary::outflow(),
            right: SideBoundary::outflow(),
            config: SolverConfig::default(),
        };
        match sim.run(&ic, &t_grid) {
            Err(Error::ClosureBlowUp { variable, .. }) => assert_eq!(variable, "sigma_E E"),
            other => panic!("expected blow-up, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn p1_reference_equilibria_are_blackbody() {
        let u = units();
        let m = reference_closure(ReferenceKind::P1, 1e9, 1e23, &u).unwrap();
        let alpha = OpacitySpec::larsen(1e9).unwrap().alpha(&u);
        let a = u.radiation_a();
        for t_star in [1.0f64, 200.0, 900.0] {
            let eq = [
                1e23 * t_star + a * t_star.powi(4),
                0.0,
                t_star,
                alpha / u.c * t_star,
            ];
            let src = m.source(&eq).unwrap();
            let scale = alpha / u.c * t_star * (alpha / 1e23);
            for k in 0..4 {
                assert!(
                    src[k].abs() <= 1e-10 * scale.max(1e-300),
                    "T* = {t_star}, component {k}: {}",
                    src[k]
                );
            }
        }
    }

    #[test]
    fn gray_diffusion_heat_kernel_spreading() {
        // constant sigma, no reaction: variance grows by 2 D t
        let u = units();
        let gd = GrayDiffusion {
            sigma0: 2.0,
            v: u.c / 3.0,
            rho_cv: 1e23,
            units: u,
            with_reaction: false,
        };
        let n = 400;
        let dx = 0.01;
        let x0 = 2.0;
        let sigma2_0 = 0.02f64;
        let e0: Vec<f64> = (0..n)
            .map(|i| {
                let x = (i as f64 + 0.5) * dx;
                (-(x - x0) * (x - x0) / (2.0 * sigma2_0)).exp()
            })
            .collect();
        let t0 = vec![1.0; n];
        let d = gd.v / gd.sigma0;
        let t_total = 0.5 * sigma2_0 / d; // grow variance by 100%
        let steps = 400;
        let (e1, _) = gd.run(&e0, &t0, dx, t_total / steps as f64, steps);
        let variance = |e: &[f64]| -> f64 {
            let mass: f64 = e.iter().sum();
            let mean: f64 = e
                .iter()
                .enumerate()
                .map(|(i, v)| (i as f64 + 0.5) * dx * v)
                .sum::<f64>()
                / mass;
            e.iter()
                .enumerate()
                .map(|(i, v)| {
                    let x = (i as f64 + 0.5) * dx;
                    (x - mean) * (x - mean) * v
                })
                .sum::<f64>()
                / mass
        };
        let grown = variance(&e1) - variance(&e0);
        let expected = 2.0 * d * t_total;
        assert!(
            ((grown - expected) / expected).abs() < 0.05,
            "variance growth {grown} vs {expected}"
        );
    }
}
