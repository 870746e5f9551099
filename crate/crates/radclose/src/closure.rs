//! Closure models: sparse coefficient sets over the term libraries, plus the
//! log-linear parametrization over `(gamma, T_in^3)`.
//!
//! Coefficients are stored in the `d/dt u = sum_j w_j D_j f_j` convention, so
//! the conservative flux passed to the forward solver is the negative of the
//! per-slot flux aggregate.

use crate::error::{Error, Result};
use crate::physics::{kappa_l, OpacitySpec, UnitSystem, ERG_PER_EV};
use crate::termlib::{base_defaults, base_terms, Slot, Term, TermKind, TermLibrary};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Energy unit the coefficients are calibrated in. Fields handed to the
/// forward solver must use the same convention; `scale_from_ev` converts
/// eV-based energy densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum EnergyUnit {
    #[default]
    Ev,
    Erg,
}

impl EnergyUnit {
    pub fn scale_from_ev(&self) -> f64 {
        match self {
            EnergyUnit::Ev => 1.0,
            EnergyUnit::Erg => ERG_PER_EV,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ClosureParams {
    pub gamma: f64,
    pub t_in_cubed: f64,
}

/// A closed model: per-slot libraries with physical coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureModel {
    pub libraries: [TermLibrary; 4],
    pub coeffs: [Vec<f64>; 4],
    pub params: ClosureParams,
    pub rho_cv: f64,
    pub energy_unit: EnergyUnit,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl ClosureModel {
    pub fn new(
        libraries: [TermLibrary; 4],
        coeffs: [Vec<f64>; 4],
        params: ClosureParams,
        rho_cv: f64,
        energy_unit: EnergyUnit,
    ) -> Result<Self> {
        for (lib, c) in libraries.iter().zip(&coeffs) {
            if lib.len() != c.len() {
                return Err(Error::InvalidArgument(format!(
                    "slot {}: {} coefficients for {} terms",
                    lib.slot.name(),
                    c.len(),
                    lib.len()
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument("non-finite coefficient".into()));
            }
        }
        Ok(ClosureModel {
            libraries,
            coeffs,
            params,
            rho_cv,
            energy_unit,
            notes: Vec::new(),
        })
    }

    /// Model with only the base terms at their analytic defaults, plus the
    /// full candidate libraries zeroed out. Useful as a skeleton.
    pub fn analytic_skeleton(
        p_tot: i32,
        p_max: i32,
        params: ClosureParams,
        rho_cv: f64,
        units: &UnitSystem,
    ) -> Result<Self> {
        let (e_lib, t_lib) = base_terms();
        let f_lib = crate::termlib::build_f_library(p_tot, p_max)?;
        let s_lib = crate::termlib::build_sigma_library(p_tot, p_max)?;
        let alpha = OpacitySpec::larsen(params.gamma)?.alpha(units);
        let (w1, w2, w3) = base_defaults(alpha, rho_cv, units.c);
        let coeffs = [
            vec![w1],
            vec![0.0; f_lib.len()],
            vec![w2, w3],
            vec![0.0; s_lib.len()],
        ];
        ClosureModel::new([e_lib, f_lib, t_lib, s_lib], coeffs, params, rho_cv, EnergyUnit::Ev)
    }

    pub fn terms_with_coeffs(&self, slot: Slot) -> Vec<(Term, f64)> {
        self.libraries[slot.index()]
            .terms
            .iter()
            .cloned()
            .zip(self.coeffs[slot.index()].iter().cloned())
            .collect()
    }

    /// `sum_flux w_j f_j(u)`: the aggregate that enters the equation as
    /// `+d/dx(...)`; the conservative flux is its negative.
    pub fn flux_aggregate(&self, slot: Slot, u: &[f64; 4]) -> Result<f64> {
        let mut acc = 0.0;
        for (term, w) in self.libraries[slot.index()]
            .terms
            .iter()
            .zip(&self.coeffs[slot.index()])
        {
            if term.kind == TermKind::Flux && *w != 0.0 {
                acc += w * term.eval_point(u[0], u[1], u[2], u[3])?;
            }
        }
        Ok(acc)
    }

    pub fn source_aggregate(&self, slot: Slot, u: &[f64; 4]) -> Result<f64> {
        let mut acc = 0.0;
        for (term, w) in self.libraries[slot.index()]
            .terms
            .iter()
            .zip(&self.coeffs[slot.index()])
        {
            if term.kind == TermKind::Source && *w != 0.0 {
                acc += w * term.eval_point(u[0], u[1], u[2], u[3])?;
            }
        }
        Ok(acc)
    }

    /// Entries of the flux Jacobian needed for the wave-speed bound:
    /// `(d p^F/de, d p^F/dF, d p^s/dS)` with `p = -flux_aggregate`.
    pub fn speed_entries(&self, u: &[f64; 4]) -> (f64, f64, f64) {
        let mut a = 0.0;
        let mut b = 0.0;
        let mut d = 0.0;
        for (term, w) in self.libraries[Slot::F.index()]
            .terms
            .iter()
            .zip(&self.coeffs[Slot::F.index()])
        {
            if term.kind != TermKind::Flux || *w == 0.0 {
                continue;
            }
            if let Some((mult, p)) = term.derivative(Slot::E) {
                a -= w * mult * crate::termlib::eval_powers(&p, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
            if let Some((mult, p)) = term.derivative(Slot::F) {
                b -= w * mult * crate::termlib::eval_powers(&p, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
        }
        for (term, w) in self.libraries[Slot::S.index()]
            .terms
            .iter()
            .zip(&self.coeffs[Slot::S.index()])
        {
            if term.kind != TermKind::Flux || *w == 0.0 {
                continue;
            }
            if let Some((mult, p)) = term.derivative(Slot::S) {
                d -= w * mult * crate::termlib::eval_powers(&p, u[0], u[1], u[2], u[3]).unwrap_or(0.0);
            }
        }
        // the e-equation flux contributes to the characteristic pair through
        // the (e, F) block; its coefficient multiplies dx(F)
        (a, b, d)
    }

    /// Largest characteristic speed of the eigenvalue set
    /// `{0, d, (b +- sqrt(b^2 + 4a))/2}` at a state, robust to a locally
    /// negative discriminant.
    pub fn max_wave_speed(&self, u: &[f64; 4]) -> f64 {
        let (a, b, d) = self.speed_entries(u);
        let disc = b * b + 4.0 * a;
        let pair = if disc >= 0.0 {
            let r = disc.sqrt();
            (0.5 * (b + r)).abs().max((0.5 * (b - r)).abs())
        } else {
            // complex pair: modulus sqrt(-a)
            (-a).max(0.0).sqrt()
        };
        pair.max(d.abs())
    }

    /// Time derivatives of `(e, F, T, S)` given per-cell states and a spatial
    /// derivative provider for the flux aggregates.
    pub fn rhs_fields<D>(&self, states: &[[f64; 4]], ddx: D) -> Result<Vec<[f64; 4]>>
    where
        D: Fn(&[f64]) -> Vec<f64>,
    {
        let n = states.len();
        let mut out = vec![[0.0; 4]; n];
        for slot in Slot::ALL {
            let mut flux = Vec::with_capacity(n);
            let mut has_flux = false;
            for u in states {
                let p = self.flux_aggregate(slot, u)?;
                has_flux |= p != 0.0;
                flux.push(p);
            }
            let dflux = if has_flux {
                ddx(&flux)
            } else {
                vec![0.0; n]
            };
            for (i, u) in states.iter().enumerate() {
                out[i][slot.index()] = dflux[i] + self.source_aggregate(slot, u)?;
            }
        }
        Ok(out)
    }

    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// One term of a parametrized closure: `w = sign * w0 * gamma^eta_g * (T^3)^eta_t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamTerm {
    pub slot: Slot,
    pub term: Term,
    pub w0: f64,
    pub eta_t: f64,
    pub eta_g: f64,
    pub sign: f64,
    /// Relative l2 residual of the fit over the training ensemble.
    pub r2: f64,
}

impl ParamTerm {
    pub fn value_at(&self, gamma: f64, t_in_cubed: f64) -> f64 {
        self.sign * self.w0 * gamma.powf(self.eta_g) * t_in_cubed.powf(self.eta_t)
    }
}

/// Log-linear parametrization of a closure over `(gamma, T_in^3)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametrizedClosure {
    pub terms: Vec<ParamTerm>,
    pub caps: crate::termlib::Caps,
    pub rho_cv: f64,
    pub energy_unit: EnergyUnit,
    /// Cold-material temperature and domain length, for the validity gate.
    pub t_o: f64,
    pub domain_length: f64,
    /// Training parameter tags.
    pub training: Vec<ClosureParams>,
}

/// Validity threshold of the optically thin closure in `kappa_L`.
pub const KAPPA_GATE: f64 = 0.07;

/// Fit the log-linear relation per term over an ensemble of models sharing
/// one support. Requires at least 3 points spanning both parameters and
/// consistent coefficient signs.
pub fn fit_loglinear(ensemble: &[ClosureModel]) -> Result<ParametrizedClosure> {
    if ensemble.len() < 3 {
        return Err(Error::Regression(
            "log-linear fit needs at least 3 ensemble points".into(),
        ));
    }
    let first = &ensemble[0];
    for m in ensemble {
        if m.libraries[1] != first.libraries[1] || m.libraries[3] != first.libraries[3] {
            return Err(Error::Regression("ensemble libraries differ".into()));
        }
    }
    // design matrix [1, log10 gamma, log10 T^3]
    let p = ensemble.len();
    let x = DMatrix::from_fn(p, 3, |r, c| match c {
        0 => 1.0,
        1 => ensemble[r].params.gamma.log10(),
        _ => ensemble[r].params.t_in_cubed.log10(),
    });
    let xtx = x.transpose() * &x;
    let eig = xtx.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|&v| v < 1e-12 * max_ev) {
        return Err(Error::Regression(
            "rank-deficient design: training parameters are collinear".into(),
        ));
    }
    let solver = xtx.cholesky().ok_or_else(|| {
        Error::Regression("rank-deficient design: training parameters are collinear".into())
    })?;

    let mut terms = Vec::new();
    let mut bad_signs = Vec::new();
    for slot in [Slot::F, Slot::S, Slot::E, Slot::T] {
        let lib = &first.libraries[slot.index()];
        for (j, term) in lib.terms.iter().enumerate() {
            let values: Vec<f64> = ensemble.iter().map(|m| m.coeffs[slot.index()][j]).collect();
            if values.iter().all(|v| *v == 0.0) {
                continue;
            }
            let sign = values[0].signum();
            if values.iter().any(|v| v.signum() != sign || *v == 0.0) {
                bad_signs.push(term.label());
                continue;
            }
            let y = DVector::from_iterator(p, values.iter().map(|v| v.abs().log10()));
            let beta = solver.solve(&(x.transpose() * &y));
            let (w0, eta_g, eta_t) = (10f64.powf(beta[0]), beta[1], beta[2]);
            // relative l2 residual of the reconstructed coefficients
            let mut num = 0.0;
            let mut den = 0.0;
            for (r, v) in values.iter().enumerate() {
                let pred = sign
                    * w0
                    * ensemble[r].params.gamma.powf(eta_g)
                    * ensemble[r].params.t_in_cubed.powf(eta_t);
                num += (pred - v) * (pred - v);
                den += v * v;
            }
            terms.push(ParamTerm {
                slot,
                term: *term,
                w0,
                eta_t,
                eta_g,
                sign,
                r2: (num / den).sqrt(),
            });
        }
    }
    if !bad_signs.is_empty() {
        return Err(Error::SignInconsistency(bad_signs.join(", ")));
    }
    Ok(ParametrizedClosure {
        terms,
        caps: first.libraries[1].caps,
        rho_cv: first.rho_cv,
        energy_unit: first.energy_unit,
        t_o: 1.0,
        domain_length: 4.0,
        training: ensemble.iter().map(|m| m.params).collect(),
    })
}

/// Instantiate the parametrized closure at new parameters. The base block
/// uses its own fitted relations when present and the analytic defaults
/// otherwise. Returns the model and whether the point sits inside the
/// `kappa_L` validity region.
pub fn instantiate_at(
    pc: &ParametrizedClosure,
    gamma: f64,
    t_in_cubed: f64,
    units: &UnitSystem,
) -> Result<(ClosureModel, bool)> {
    if !(gamma > 0.0) || !(t_in_cubed > 0.0) {
        return Err(Error::InvalidArgument(
            "instantiation parameters must be positive".into(),
        ));
    }
    let (e_lib, t_lib) = base_terms();
    let f_lib = crate::termlib::build_f_library(pc.caps.p_tot, pc.caps.p_max)?;
    let s_lib = crate::termlib::build_sigma_library(pc.caps.p_tot, pc.caps.p_max)?;
    let alpha = OpacitySpec::larsen(gamma)?.alpha(units) * pc.energy_unit.scale_from_ev();
    let (w1, w2, w3) = base_defaults(alpha, pc.rho_cv, units.c);
    let mut coeffs = [
        vec![w1],
        vec![0.0; f_lib.len()],
        vec![w2, w3],
        vec![0.0; s_lib.len()],
    ];
    let libraries = [e_lib, f_lib, t_lib, s_lib];
    for pt in &pc.terms {
        let lib = &libraries[pt.slot.index()];
        let Some(j) = lib.terms.iter().position(|t| t == &pt.term) else {
            return Err(Error::Regression(format!(
                "parametrized term {} not present in the library",
                pt.term.label()
            )));
        };
        coeffs[pt.slot.index()][j] = pt.value_at(gamma, t_in_cubed);
    }
    let t_in = t_in_cubed.cbrt();
    let kl = kappa_l(pc.t_o, t_in, gamma, pc.domain_length, units)?;
    let valid = kl >= KAPPA_GATE;
    let mut model = ClosureModel::new(
        libraries,
        coeffs,
        ClosureParams { gamma, t_in_cubed },
        pc.rho_cv,
        pc.energy_unit,
    )?;
    model
        .notes
        .push(format!("instantiated at kappa_L = {kl:.4}"));
    if !valid {
        log::warn!("closure instantiated outside its validity region: kappa_L = {kl:.4} < {KAPPA_GATE}");
        model.notes.push("outside kappa_L validity region".into());
    }
    Ok((model, valid))
}

impl ParametrizedClosure {
    pub fn write_json(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Bundled reference parametrization of the optically thin closure,
/// calibrated in erg-based energy units on the nine most optically thin
/// training points of the standard parameter grid.
pub fn bundled_thin_closure() -> ParametrizedClosure {
    let powers = |e: i32, f: i32, t: i32, s: i32| crate::termlib::Powers { e, f, t, s };
    let mk = |slot: Slot, kind: TermKind, p: crate::termlib::Powers, w0: f64, eta_t: f64, eta_g: f64, r2: f64| {
        ParamTerm {
            slot,
            term: Term {
                slot,
                kind,
                powers: p,
                forced: false,
            },
            w0: w0.abs(),
            eta_t,
            eta_g,
            sign: w0.signum(),
            r2,
        }
    };
    use TermKind::{Flux, Source};
    let terms = vec![
        mk(Slot::F, Flux, powers(1, 0, 0, 0), -8.17e20, 1.56e-2, -1.87e-2, 2.31e-4),
        mk(Slot::F, Flux, powers(1, 2, 0, 0), 6.80e-4, -2.65, -2.02e-2, 2.86e-4),
        mk(Slot::F, Flux, powers(0, 4, 0, 0), -9.65e-27, -3.91, -1.01e-1, 8.11e-4),
        mk(Slot::S, Flux, powers(0, 1, 0, 0), -3.49e-2, -7.06e-1, 7.19e-1, 8.51e-3),
        mk(Slot::S, Flux, powers(0, 1, 0, 1), -4.01e-2, -1.39, 2.62e-2, 8.66e-4),
        mk(Slot::S, Flux, powers(0, 1, 0, 3), 8.95e-5, -2.38, -1.69, 3.30e-4),
        mk(Slot::S, Flux, powers(0, 3, 0, 0), 7.24e-26, -3.51, 8.03e-1, 3.33e-4),
        mk(Slot::S, Flux, powers(0, 3, 0, 1), 1.70e-26, -4.08, 5.72e-2, 2.11e-4),
        mk(Slot::S, Source, powers(0, 0, 0, 2), -8.60e9, -7.67e-1, -6.10e-1, 2.76e-2),
        mk(Slot::S, Source, powers(0, 0, 1, 1), 1.82e11, -7.67e-1, 3.90e-1, 9.69e-3),
        mk(Slot::S, Source, powers(1, 0, 0, 1), 3.07e7, -1.38, 1.07e-1, 2.45e-2),
        mk(Slot::S, Source, powers(1, 0, 1, 0), -6.50e8, -1.38, 1.11, 2.29e-2),
    ];
    // mark the four forced opacity sources as such in their Term records
    let terms = terms
        .into_iter()
        .map(|mut pt| {
            if pt.slot == Slot::S && pt.term.kind == Source {
                pt.term.forced = true;
            }
            pt
        })
        .collect();
    let training = [1e8f64, 10f64.powf(8.5), 1e9]
        .iter()
        .flat_map(|&g| {
            [1e9f64, 10f64.powf(9.5), 1e10]
                .iter()
                .map(move |&t3| ClosureParams {
                    gamma: g,
                    t_in_cubed: t3,
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ParametrizedClosure {
        terms,
        caps: crate::termlib::Caps { p_tot: 4, p_max: 3 },
        rho_cv: 1e23 * ERG_PER_EV,
        energy_unit: EnergyUnit::Erg,
        t_o: 1.0,
        domain_length: 4.0,
        training,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn units() -> UnitSystem {
        UnitSystem::default()
    }

    fn grid_params() -> Vec<ClosureParams> {
        let mut out = Vec::new();
        for g in [1e8, 10f64.powf(8.5), 1e9] {
            for t3 in [1e9, 10f64.powf(9.5), 1e10] {
                out.push(ClosureParams {
                    gamma: g,
                    t_in_cubed: t3,
                });
            }
        }
        out
    }

    fn synthetic_ensemble(plane: &[(Slot, usize, f64, f64, f64)]) -> Vec<ClosureModel> {
        grid_params()
            .into_iter()
            .map(|p| {
                let mut m = ClosureModel::analytic_skeleton(4, 3, p, 1e23, &units()).unwrap();
                for &(slot, j, w0, eta_t, eta_g) in plane {
                    m.coeffs[slot.index()][j] =
                        w0 * p.gamma.powf(eta_g) * p.t_in_cubed.powf(eta_t);
                }
                m
            })
            .collect()
    }

    #[test]
    fn exact_log_plane_recovery() {
        let plane = [
            (Slot::F, 0usize, -3.2e20, 0.013, -0.02),
            (Slot::S, 5usize, 1.7e-4, -1.2, 0.4),
        ];
        let ensemble = synthetic_ensemble(&plane);
        let pc = fit_loglinear(&ensemble).unwrap();
        for &(slot, j, w0, eta_t, eta_g) in &plane {
            let term = ensemble[0].libraries[slot.index()].terms[j];
            let pt = pc
                .terms
                .iter()
                .find(|pt| pt.slot == slot && pt.term == term)
                .unwrap();
            assert!(((pt.sign * pt.w0 - w0) / w0).abs() < 1e-10);
            assert!((pt.eta_t - eta_t).abs() < 1e-10);
            assert!((pt.eta_g - eta_g).abs() < 1e-10);
            assert!(pt.r2 < 1e-12);
        }
    }

    #[test]
    fn instantiate_then_fit_is_identity() {
        let pc = bundled_thin_closure();
        let ensemble: Vec<ClosureModel> = pc
            .training
            .iter()
            .map(|p| instantiate_at(&pc, p.gamma, p.t_in_cubed, &units()).unwrap().0)
            .collect();
        let refit = fit_loglinear(&ensemble).unwrap();
        for pt in &pc.terms {
            let got = refit
                .terms
                .iter()
                .find(|q| q.slot == pt.slot && q.term.powers == pt.term.powers)
                .unwrap();
            assert!(((got.w0 - pt.w0) / pt.w0).abs() < 1e-6, "{}", pt.term.label());
            assert!((got.eta_t - pt.eta_t).abs() < 1e-6);
            assert!((got.eta_g - pt.eta_g).abs() < 1e-6);
            assert_eq!(got.sign, pt.sign);
        }
    }

    #[test]
    fn residual_matches_normal_equations_oracle() {
        // perturb one coefficient off the plane and compare r2 with a direct
        // least-squares computation
        let plane = [(Slot::F, 0usize, -3.2e20, 0.013, -0.02)];
        let mut ensemble = synthetic_ensemble(&plane);
        for (k, m) in ensemble.iter_mut().enumerate() {
            m.coeffs[1][0] *= 1.0 + 0.01 * ((k as f64 * 1.7).sin());
        }
        let pc = fit_loglinear(&ensemble).unwrap();
        let pt = pc.terms.iter().find(|pt| pt.slot == Slot::F).unwrap();

        // oracle: normal equations on log10 |w|
        let p = ensemble.len();
        let x = DMatrix::from_fn(p, 3, |r, c| match c {
            0 => 1.0,
            1 => ensemble[r].params.gamma.log10(),
            _ => ensemble[r].params.t_in_cubed.log10(),
        });
        let y = DVector::from_iterator(p, ensemble.iter().map(|m| m.coeffs[1][0].abs().log10()));
        let beta = (x.transpose() * &x)
            .cholesky()
            .unwrap()
            .solve(&(x.transpose() * &y));
        let mut num = 0.0;
        let mut den = 0.0;
        for (r, m) in ensemble.iter().enumerate() {
            let pred = -10f64.powf(beta[0])
                * m.params.gamma.powf(beta[1])
                * m.params.t_in_cubed.powf(beta[2]);
            num += (pred - m.coeffs[1][0]) * (pred - m.coeffs[1][0]);
            den += m.coeffs[1][0] * m.coeffs[1][0];
        }
        let oracle = (num / den).sqrt();
        assert!((pt.r2 - oracle).abs() < 1e-12, "{} vs {oracle}", pt.r2);
    }

    #[test]
    fn sign_inconsistency_is_an_error() {
        let plane = [(Slot::F, 0usize, -3.2e20, 0.013, -0.02)];
        let mut ensemble = synthetic_ensemble(&plane);
        ensemble[4].coeffs[1][0] *= -1.0;
        let offending = ensemble[0].libraries[1].terms[0].label();
        match fit_loglinear(&ensemble) {
            Err(Error::SignInconsistency(list)) => assert!(list.contains(&offending)),
            other => panic!("expected sign error, got {other:?}"),
        }
    }

    #[test]
    fn collinear_parameters_rejected() {
        let plane = [(Slot::F, 0usize, -3.2e20, 0.013, -0.02)];
        let mut ensemble = synthetic_ensemble(&plane);
        // collapse all gammas onto one value
        for m in &mut ensemble {
            m.params.gamma = 1e9;
        }
        assert!(matches!(fit_loglinear(&ensemble), Err(Error::Regression(_))));
    }

    #[test]
    fn instantiation_scaling_power_law() {
        let pc = bundled_thin_closure();
        let term = crate::termlib::Powers {
            e: 0,
            f: 3,
            t: 0,
            s: 1,
        };
        let pt = pc
            .terms
            .iter()
            .find(|pt| pt.term.powers == term)
            .unwrap();
        let w_hi = pt.value_at(1e10, 1e10);
        let w_lo = pt.value_at(1e9, 1e9);
        let expect = 10f64.powf(pt.eta_t + pt.eta_g);
        assert!(((w_hi / w_lo) / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_gate_flags_thick_instantiations() {
        let pc = bundled_thin_closure();
        let u = units();
        let (_, valid_thin) = instantiate_at(&pc, 1e8, 1e10, &u).unwrap();
        assert!(valid_thin);
        let (model, valid_thick) = instantiate_at(&pc, 1e10, 1e8, &u).unwrap();
        assert!(!valid_thick);
        assert!(model.notes.iter().any(|n| n.contains("outside")));
    }

    #[test]
    fn blackbody_rhs_vanishes_for_analytic_base() {
        // uniform equilibrium state, no learned terms: all four derivatives 0
        let m = ClosureModel::analytic_skeleton(
            4,
            3,
            ClosureParams {
                gamma: 1e9,
                t_in_cubed: 1e9,
            },
            1e23,
            &units(),
        )
        .unwrap();
        let u = units();
        let alpha = OpacitySpec::larsen(1e9).unwrap().alpha(&u);
        let t_star = 700.0f64;
        let a = u.radiation_a();
        let state = [
            1e23 * t_star + a * t_star.powi(4),
            0.0,
            t_star,
            alpha / u.c * t_star,
        ];
        let states = vec![state; 8];
        let rhs = m
            .rhs_fields(&states, |f| vec![0.0; f.len()])
            .unwrap();
        let scale = alpha / 1e23 * t_star;
        for r in &rhs {
            for k in 0..4 {
                assert!(r[k].abs() <= 1e-8 * scale, "component {k}: {}", r[k]);
            }
        }
    }

    #[test]
    fn rhs_parity_under_mirror() {
        // random parity-safe model: rhs transforms as (even, odd, even, even)
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
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for slot in [1usize, 3] {
            for w in m.coeffs[slot].iter_mut() {
                *w = rng.gen_range(-1.0..1.0);
            }
        }
        let n = 16;
        let states: Vec<[f64; 4]> = (0..n)
            .map(|_| {
                [
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(0.5..2.0),
                    rng.gen_range(0.1..1.5),
                ]
            })
            .collect();
        let mirrored: Vec<[f64; 4]> = states
            .iter()
            .rev()
            .map(|u| [u[0], -u[1], u[2], u[3]])
            .collect();
        // central differences; mirror-antisymmetric by construction
        let ddx = |f: &[f64]| -> Vec<f64> {
            let n = f.len();
            (0..n)
                .map(|i| {
                    let l = if i == 0 { f[0] } else { f[i - 1] };
                    let r = if i == n - 1 { f[n - 1] } else { f[i + 1] };
                    (r - l) / 2.0
                })
                .collect()
        };
        let rhs = m.rhs_fields(&states, ddx).unwrap();
        let rhs_m = m.rhs_fields(&mirrored, ddx).unwrap();
        let parity = [1.0, -1.0, 1.0, 1.0];
        for i in 0..n {
            for k in 0..4 {
                let lhs = rhs_m[n - 1 - i][k];
                let rhs_v = parity[k] * rhs[i][k];
                assert!(
                    (lhs - rhs_v).abs() <= 1e-12 * rhs_v.abs().max(1e-12),
                    "cell {i} comp {k}: {lhs} vs {rhs_v}"
                );
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = ClosureModel::analytic_skeleton(
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
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.write_json(&path).unwrap();
        let back = ClosureModel::read_json(&path).unwrap();
        assert_eq!(m.coeffs, back.coeffs);
        assert_eq!(m.params, back.params);
    }
}
