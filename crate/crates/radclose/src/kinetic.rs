//! Reference kinetic solver: 1D multifrequency transport along exact
//! characteristics on discrete polar angles, with an implicit Picard-coupled
//! temperature update.
//!
//! Each step traces every (group, angle, cell) ray back over `c dt`, applying
//! the analytic exponential update through piecewise-constant cells. The
//! discrete angle set produces the same wavefront artifacts as a deterministic
//! particle code: moment fields carry jumps at the `mu_m c t` fronts. The
//! per-cell temperature update is defined from the accumulated ray
//! absorption-emission drops, which makes the discrete total-energy balance an
//! identity up to roundoff.

use crate::dataset::{json_hash, Grid, MomentDataset, ProblemParams, Provenance};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::physics::{OpacitySpec, UnitSystem};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum InflowSide {
    #[default]
    Left,
    Right,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransportConfig {
    pub domain_length: f64,
    pub n_cells: usize,
    /// Discrete polar angle count; even, >= 2.
    pub m_omega: usize,
    pub groups: usize,
    /// Photon-energy range of the group grid in eV; log-spaced edges.
    pub group_lo: f64,
    pub group_hi: f64,
    pub dt: f64,
    pub n_steps: usize,
    pub t_in: f64,
    pub t_o: f64,
    pub rho_cv: f64,
    /// Opacity scale; zero switches the material off entirely.
    pub gamma: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
    pub inflow: InflowSide,
    /// Radiation temperature of the far wall; 0 means vacuum (no re-entrant
    /// radiation), the default.
    pub bath_temp: f64,
}

impl TransportConfig {
    /// Typical configuration with the group grid spanning the cold-material
    /// absorption edge through the hot drive spectrum.
    pub fn new(
        domain_length: f64,
        n_cells: usize,
        m_omega: usize,
        groups: usize,
        dt: f64,
        n_steps: usize,
        t_in: f64,
        t_o: f64,
        rho_cv: f64,
        gamma: f64,
    ) -> Self {
        TransportConfig {
            domain_length,
            n_cells,
            m_omega,
            groups,
            group_lo: 0.1 * t_o.max(1e-6),
            group_hi: 50.0 * t_in.max(1.0),
            dt,
            n_steps,
            t_in,
            t_o,
            rho_cv,
            gamma,
            picard_tol: 1e-10,
            picard_max: 200,
            inflow: InflowSide::Left,
            bath_temp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_omega < 2 || self.m_omega % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "m_omega must be even and >= 2, got {}",
                self.m_omega
            )));
        }
        if self.groups < 1 || self.group_lo <= 0.0 || self.group_hi <= self.group_lo {
            return Err(Error::InvalidArgument(
                "group edges must be positive and increasing".into(),
            ));
        }
        if !(self.dt > 0.0) || self.n_steps == 0 || self.n_cells < 4 {
            return Err(Error::InvalidArgument("invalid step/grid sizes".into()));
        }
        if !(self.picard_tol > 0.0) || self.picard_max == 0 {
            return Err(Error::InvalidArgument("invalid Picard controls".into()));
        }
        if self.t_in < 0.0 || !(self.t_o > 0.0) || !(self.rho_cv > 0.0) || self.gamma < 0.0 {
            return Err(Error::InvalidArgument("invalid physical parameters".into()));
        }
        Ok(())
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams {
            gamma: self.gamma,
            t_in: self.t_in,
            t_o: self.t_o,
            rho_cv: self.rho_cv,
            domain_length: self.domain_length,
            m_omega: self.m_omega,
            groups: self.groups,
        }
    }
}

/// Group/angle discretization derived from a config.
#[derive(Debug, Clone)]
pub struct Discretization {
    pub mu: Vec<f64>,
    pub w: Vec<f64>,
    /// Representative photon energy per group (eV).
    pub hnu: Vec<f64>,
    /// Group width as an ordinary frequency (1/s).
    pub dnu: Vec<f64>,
    pub dx: f64,
}

impl Discretization {
    pub fn build(cfg: &TransportConfig, units: &UnitSystem) -> Discretization {
        let (mu, w) = gauss_legendre(cfg.m_omega);
        let mut hnu = Vec::with_capacity(cfg.groups);
        let mut dnu = Vec::with_capacity(cfg.groups);
        let ratio = (cfg.group_hi / cfg.group_lo).ln();
        let edge = |g: usize| cfg.group_lo * (ratio * g as f64 / cfg.groups as f64).exp();
        for g in 0..cfg.groups {
            let (lo, hi) = (edge(g), edge(g + 1));
            hnu.push((lo * hi).sqrt());
            dnu.push((hi - lo) / units.h);
        }
        Discretization {
            mu,
            w,
            hnu,
            dnu,
            dx: cfg.domain_length / cfg.n_cells as f64,
        }
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }
}

/// Group-angle intensities and material temperature.
#[derive(Debug, Clone)]
pub struct KineticState {
    /// Intensities indexed (group, angle, cell), in slab units where the
    /// isotropic equilibrium intensity integrates to `a T^4`.
    pub intensity: Array3<f64>,
    pub temp: Array1<f64>,
}

/// Slab-normalized Planck source: `2 pi B(nu, T)` so that an isotropic field
/// equal to it carries energy density `a T^4`.
fn planck_slab(units: &UnitSystem, hnu: f64, t: f64) -> f64 {
    2.0 * std::f64::consts::PI * units.planck_b(hnu / units.h, t)
}

/// Isotropic black-body state at the initial temperature.
pub fn equilibrium_state(cfg: &TransportConfig, disc: &Discretization, units: &UnitSystem) -> KineticState {
    let mut intensity = Array3::zeros((cfg.groups, cfg.m_omega, cfg.n_cells));
    for g in 0..cfg.groups {
        let b = planck_slab(units, disc.hnu[g], cfg.t_o);
        intensity.slice_mut(ndarray::s![g, .., ..]).fill(b);
    }
    KineticState {
        intensity,
        temp: Array1::from_elem(cfg.n_cells, cfg.t_o),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub picard_iterations: usize,
    pub picard_residual: f64,
    /// Exact discrete boundary energy gain of the step (per unit volume sum).
    pub boundary_energy: f64,
    pub total_energy: f64,
}

pub struct TransportOutput {
    pub dataset: MomentDataset,
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_state: KineticState,
}

/// Moment fields extracted from one kinetic state.
#[derive(Debug, Clone)]
pub struct MomentFields {
    pub e_rad: Vec<f64>,
    pub flux: Vec<f64>,
    /// `c <mu^2>`; the streaming-limit weighting of the second angular moment.
    pub eddington: Vec<f64>,
    /// Cells where the radiation energy vanished and the isotropic sentinel
    /// `c/3` was substituted.
    pub eddington_fallback: Vec<bool>,
    pub sigma_e_e: Vec<f64>,
}

/// Angle/frequency quadrature of the moments. `sigma_of` maps
/// `(group, cell temperature)` to an opacity.
pub fn extract_moments<F: Fn(usize, f64) -> f64>(
    intensity: &Array3<f64>,
    temp: &Array1<f64>,
    disc: &Discretization,
    units: &UnitSystem,
    sigma_of: F,
) -> MomentFields {
    let (groups, m_omega, n_cells) = intensity.dim();
    let mut e_rad = vec![0.0; n_cells];
    let mut flux = vec![0.0; n_cells];
    let mut second = vec![0.0; n_cells];
    let mut sigma_e_e = vec![0.0; n_cells];
    for g in 0..groups {
        for m in 0..m_omega {
            let wdn = disc.w[m] * disc.dnu[g];
            let mu = disc.mu[m];
            for i in 0..n_cells {
                let val = intensity[[g, m, i]];
                e_rad[i] += wdn * val;
                flux[i] += wdn * mu * val;
                second[i] += wdn * mu * mu * val;
            }
        }
        for i in 0..n_cells {
            let sg = sigma_of(g, temp[i]);
            let mut acc = 0.0;
            for m in 0..m_omega {
                acc += disc.w[m] * intensity[[g, m, i]];
            }
            sigma_e_e[i] += disc.dnu[g] * sg * acc / units.c;
        }
    }
    let mut eddington = vec![0.0; n_cells];
    let mut fallback = vec![false; n_cells];
    for i in 0..n_cells {
        if e_rad[i] > 0.0 {
            eddington[i] = units.c * second[i] / e_rad[i];
        } else {
            eddington[i] = units.c / 3.0;
            fallback[i] = true;
        }
        e_rad[i] /= units.c;
    }
    MomentFields {
        e_rad,
        flux,
        eddington,
        eddington_fallback: fallback,
        sigma_e_e,
    }
}

/// Change of variables to the conserved total energy `e = E + rho_cv T`.
pub fn to_state_variables(e_rad: &[f64], temp: &[f64], rho_cv: f64) -> Vec<f64> {
    e_rad
        .iter()
        .zip(temp)
        .map(|(er, t)| er + rho_cv * t)
        .collect()
}

struct SweepResult {
    intensity: Array2<f64>,
    /// Per-cell `I_before - I_after` accumulated along ray segments.
    drops: Vec<f64>,
    /// `sum_i I_foot(i) - sum_i I_old(i)`, the exact shift-boundary gain.
    shift_gain: f64,
}

/// Trace all rays of one (group, angle) pair for one step.
#[allow(clippy::too_many_arguments)]
fn sweep_group_angle(
    i_old: &Array2<f64>,
    g: usize,
    mu: f64,
    cfg: &TransportConfig,
    disc: &Discretization,
    sigma_cells: &[f64],
    b_cells: &[f64],
    b_wall: f64,
    b_bath: f64,
) -> SweepResult {
    let n = cfg.n_cells;
    let dx = disc.dx;
    let length = cfg.domain_length;
    let c_dt = crate::physics::C_CM_S * cfg.dt;
    let shift = mu * c_dt;
    let mut out = Array2::zeros((1, n));
    let mut drops = vec![0.0; n];
    let mut foot_sum = 0.0;
    let mut old_sum = 0.0;

    let inflow_left = cfg.inflow == InflowSide::Left;
    // face values seen by feet in the half-cell next to each wall; only mu > 0
    // feet reach the left zone and only mu < 0 feet the right zone
    let left_edge = if inflow_left { b_wall } else { b_bath };
    let right_edge = if inflow_left { b_bath } else { b_wall };
    let interp = |xf: f64| -> f64 {
        let u = xf / dx - 0.5;
        if u <= 0.0 {
            let frac = (xf / (0.5 * dx)).clamp(0.0, 1.0);
            return left_edge * (1.0 - frac) + i_old[[g, 0]] * frac;
        }
        let j = u.floor() as usize;
        if j >= n - 1 {
            let frac = ((xf - (length - 0.5 * dx)) / (0.5 * dx)).clamp(0.0, 1.0);
            return i_old[[g, n - 1]] * (1.0 - frac) + right_edge * frac;
        }
        let frac = u - j as f64;
        i_old[[g, j]] * (1.0 - frac) + i_old[[g, j + 1]] * frac
    };
    for i in 0..n {
        let target = disc.cell_center(i);
        let foot = target - shift;
        let (mut value, start) = if mu > 0.0 {
            if foot >= 0.0 {
                (interp(foot), foot)
            } else {
                (left_edge, 0.0)
            }
        } else if foot <= length {
            (interp(foot), foot)
        } else {
            (right_edge, length)
        };
        foot_sum += value;
        old_sum += i_old[[g, i]];

        // march through cells from the start position to the target center
        let dir = if mu > 0.0 { 1.0 } else { -1.0 };
        let mut pos = start;
        let mut guard = 0;
        while guard < n + 2 {
            guard += 1;
            let r = pos / dx;
            let cell = if dir > 0.0 {
                (r.floor() as isize).clamp(0, n as isize - 1) as usize
            } else {
                let rf = r.ceil() - 1.0;
                (rf as isize).clamp(0, n as isize - 1) as usize
            };
            let next_edge = if dir > 0.0 {
                ((cell + 1) as f64) * dx
            } else {
                (cell as f64) * dx
            };
            let seg_end = if dir > 0.0 {
                next_edge.min(target)
            } else {
                next_edge.max(target)
            };
            let ell = (seg_end - pos).abs();
            if ell > 0.0 {
                let tau = sigma_cells[cell] * ell / mu.abs();
                // I <- I + (B - I)(1 - e^{-tau}); drop telescopes exactly
                let em = -(-tau).exp_m1();
                let drop = (value - b_cells[cell]) * em;
                drops[cell] += drop;
                value -= drop;
            }
            pos = seg_end;
            if (dir > 0.0 && pos >= target) || (dir < 0.0 && pos <= target) {
                break;
            }
        }
        out[[0, i]] = value;
    }
    SweepResult {
        intensity: out,
        drops,
        shift_gain: foot_sum - old_sum,
    }
}

/// Advance the coupled system over `cfg.n_steps`, emitting moments each step.
pub fn run_transport(cfg: &TransportConfig) -> Result<TransportOutput> {
    let units = UnitSystem::default();
    let disc = Discretization::build(cfg, &units);
    let state = equilibrium_state(cfg, &disc, &units);
    run_transport_from(cfg, state)
}

/// Advance from a caller-supplied initial state.
pub fn run_transport_from(cfg: &TransportConfig, mut state: KineticState) -> Result<TransportOutput> {
    cfg.validate()?;
    let units = UnitSystem::default();
    let disc = Discretization::build(cfg, &units);
    let opacity = if cfg.gamma > 0.0 {
        Some(OpacitySpec::larsen(cfg.gamma)?)
    } else {
        None
    };
    let sigma_of = |g: usize, t: f64| -> f64 {
        match &opacity {
            Some(op) => op
                .sigma(disc.hnu[g] / units.h, t.max(0.0), &units)
                .unwrap_or(0.0),
            None => 0.0,
        }
    };
    let n = cfg.n_cells;
    let nt = cfg.n_steps + 1;
    let mut fields = [
        Array2::zeros((n, nt)),
        Array2::zeros((n, nt)),
        Array2::zeros((n, nt)),
        Array2::zeros((n, nt)),
    ];
    let record = |fields: &mut [Array2<f64>; 4], state: &KineticState, it: usize| {
        let m = extract_moments(&state.intensity, &state.temp, &disc, &units, sigma_of);
        let e_tot = to_state_variables(&m.e_rad, state.temp.as_slice().unwrap(), cfg.rho_cv);
        for i in 0..n {
            fields[0][[i, it]] = e_tot[i];
            fields[1][[i, it]] = m.flux[i];
            fields[2][[i, it]] = state.temp[i];
            fields[3][[i, it]] = m.sigma_e_e[i];
        }
    };
    record(&mut fields, &state, 0);

    let mut diagnostics = Vec::with_capacity(cfg.n_steps);
    for step in 0..cfg.n_steps {
        let mut t_guess = state.temp.clone();
        let mut result: Option<(Array3<f64>, Vec<f64>, f64)> = None;
        let mut iterations = 0;
        let mut residual = f64::INFINITY;
        while iterations < cfg.picard_max {
            iterations += 1;
            // frozen opacities and sources at the current temperature iterate
            let sigma_cells: Vec<Vec<f64>> = (0..cfg.groups)
                .map(|g| (0..n).map(|i| sigma_of(g, t_guess[i])).collect())
                .collect();
            let b_cells: Vec<Vec<f64>> = (0..cfg.groups)
                .map(|g| {
                    (0..n)
                        .map(|i| planck_slab(&units, disc.hnu[g], t_guess[i]))
                        .collect()
                })
                .collect();
            let wall_temp = cfg.t_in;
            // parallel over groups; deterministic reduce in index order
            let per_group: Vec<(Array3<f64>, Vec<f64>, f64)> =
                map_indexed(ExecMode::Parallel, cfg.groups, |g| {
                    let mut ig = Array3::zeros((1, cfg.m_omega, n));
                    let mut drops_e = vec![0.0; n];
                    let mut shift_e = 0.0;
                    let b_wall = planck_slab(&units, disc.hnu[g], wall_temp);
                    let b_bath = planck_slab(&units, disc.hnu[g], cfg.bath_temp);
                    let i_old_g = state
                        .intensity
                        .slice(ndarray::s![g, .., ..])
                        .to_owned();
                    for m in 0..cfg.m_omega {
                        let res = sweep_group_angle(
                            &i_old_g,
                            m,
                            disc.mu[m],
                            cfg,
                            &disc,
                            &sigma_cells[g],
                            &b_cells[g],
                            b_wall,
                            b_bath,
                        );
                        let wdn = disc.w[m] * disc.dnu[g];
                        for i in 0..n {
                            ig[[0, m, i]] = res.intensity[[0, i]];
                            drops_e[i] += wdn * res.drops[i];
                        }
                        shift_e += wdn * res.shift_gain;
                    }
                    (ig, drops_e, shift_e)
                });
            let mut intensity = Array3::zeros((cfg.groups, cfg.m_omega, n));
            let mut deposit = vec![0.0; n];
            let mut boundary = 0.0;
            for (g, (ig, drops_e, shift_e)) in per_group.iter().enumerate() {
                intensity
                    .slice_mut(ndarray::s![g, .., ..])
                    .assign(&ig.slice(ndarray::s![0, .., ..]));
                for i in 0..n {
                    deposit[i] += drops_e[i];
                }
                boundary += shift_e;
            }
            // implicit temperature update defined by the ray bookkeeping
            let mut t_new = Array1::zeros(n);
            for i in 0..n {
                t_new[i] = state.temp[i] + deposit[i] / (units.c * cfg.rho_cv);
                if t_new[i] < 0.0 {
                    return Err(Error::NegativeTemperature {
                        cell: i,
                        value: t_new[i],
                    });
                }
            }
            residual = t_new
                .iter()
                .zip(t_guess.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max)
                / t_new.iter().cloned().fold(cfg.t_o, f64::max);
            let converged = residual <= cfg.picard_tol;
            t_guess = t_new;
            result = Some((intensity, deposit, boundary / units.c));
            if converged {
                break;
            }
        }
        if residual > cfg.picard_tol {
            return Err(Error::PicardNonConvergence {
                iterations,
                residual,
            });
        }
        let (intensity, _deposit, boundary_energy) = result.unwrap();
        state.intensity = intensity;
        state.temp = t_guess;
        record(&mut fields, &state, step + 1);
        let total_energy: f64 = (0..n).map(|i| fields[0][[i, step + 1]]).sum::<f64>() * disc.dx;
        diagnostics.push(StepDiagnostics {
            step,
            picard_iterations: iterations,
            picard_residual: residual,
            boundary_energy: boundary_energy * disc.dx,
            total_energy,
        });
    }

    let [e, f, t, s] = fields;
    let dataset = MomentDataset::new(
        Grid {
            start: 0.5 * disc.dx,
            step: disc.dx,
            n,
        },
        Grid {
            start: 0.0,
            step: cfg.dt,
            n: nt,
        },
        e,
        f,
        t,
        s,
        cfg.params(),
        Provenance::new("kinetic-characteristics", &json_hash(cfg)),
    )?;
    Ok(TransportOutput {
        dataset,
        diagnostics,
        final_state: state,
    })
}

/// Gauss-Legendre nodes and weights on [-1, 1], symmetrized exactly.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mu = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n / 2;
    for i in 0..m {
        // Newton iteration from the Chebyshev-like initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        let weight = 2.0 / ((1.0 - x * x) * dp * dp);
        // store the positive half descending toward zero, mirror exactly
        mu[n - 1 - i] = x;
        mu[i] = -x;
        w[n - 1 - i] = weight;
        w[i] = weight;
    }
    (mu, w)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
