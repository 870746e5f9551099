//! Candidate term libraries for the closure equations.
//!
//! Terms are monomials over the state `(e, F, T, S)` with `S = sigma_E E`.
//! Flux terms enter the model under a spatial derivative, source terms enter
//! directly. Reflection symmetry `(x, F) -> (-x, -F)` is built in at
//! enumeration time through the parity of the F power: flux terms of the F
//! equation carry even powers, its sources odd powers; flux terms of the S
//! equation carry odd powers, its sources none.

use crate::error::{Error, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Equation slot the term belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    E,
    F,
    T,
    S,
}

impl Slot {
    pub const ALL: [Slot; 4] = [Slot::E, Slot::F, Slot::T, Slot::S];

    pub fn name(&self) -> &'static str {
        match self {
            Slot::E => "e",
            Slot::F => "F",
            Slot::T => "T",
            Slot::S => "S",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            Slot::E => 0,
            Slot::F => 1,
            Slot::T => 2,
            Slot::S => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TermKind {
    /// Enters the equation under `d/dx`.
    Flux,
    /// Enters the equation directly.
    Source,
}

/// Monomial powers over the state variables. Only `t` may be negative, and
/// only for sources of the F equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub struct Powers {
    pub e: i32,
    pub f: i32,
    pub t: i32,
    pub s: i32,
}

impl Powers {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        for (name, p) in [("e", self.e), ("F", self.f), ("T", self.t), ("S", self.s)] {
            match p {
                0 => {}
                1 => parts.push(name.to_string()),
                _ => parts.push(format!("{name}^{p}")),
            }
        }
        if parts.is_empty() {
            "1".into()
        } else {
            parts.join("*")
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub slot: Slot,
    pub kind: TermKind,
    pub powers: Powers,
    /// Forced terms are exempt from thresholding during sparsification.
    pub forced: bool,
}

impl Term {
    pub fn label(&self) -> String {
        match self.kind {
            TermKind::Flux => format!("dx({})", self.powers.label()),
            TermKind::Source => self.powers.label(),
        }
    }

    /// Sign behaviour under `F -> -F`: +1 for even F power, -1 for odd.
    pub fn f_parity(&self) -> i32 {
        if self.powers.f % 2 == 0 {
            1
        } else {
            -1
        }
    }

    /// Evaluate the monomial at one state point. The F factor is evaluated
    /// first: a zero F with positive power annihilates the product before any
    /// negative temperature power can be formed.
    pub fn eval_point(&self, e: f64, f: f64, t: f64, s: f64) -> Result<f64> {
        let p = &self.powers;
        let mut value = 1.0;
        if p.f != 0 {
            if f == 0.0 {
                return Ok(0.0);
            }
            value *= f.powi(p.f);
        }
        if p.t != 0 {
            if p.t < 0 && t <= 0.0 {
                return Err(Error::Domain(format!(
                    "term {} evaluated at T = {t} with negative power",
                    self.label()
                )));
            }
            value *= t.powi(p.t);
        }
        if p.e != 0 {
            value *= e.powi(p.e);
        }
        if p.s != 0 {
            value *= s.powi(p.s);
        }
        Ok(value)
    }

    /// Partial derivative with respect to one state variable, as
    /// `(multiplier, reduced powers)`, or `None` when the derivative vanishes
    /// identically.
    pub fn derivative(&self, var: Slot) -> Option<(f64, Powers)> {
        let mut p = self.powers;
        let power = match var {
            Slot::E => &mut p.e,
            Slot::F => &mut p.f,
            Slot::T => &mut p.t,
            Slot::S => &mut p.s,
        };
        if *power == 0 {
            return None;
        }
        let mult = *power as f64;
        *power -= 1;
        Some((mult, p))
    }
}

/// Evaluate a reduced-power monomial produced by [`Term::derivative`] at a
/// state point, with the same F-first convention.
pub fn eval_powers(p: &Powers, e: f64, f: f64, t: f64, s: f64) -> Result<f64> {
    let term = Term {
        slot: Slot::F,
        kind: TermKind::Source,
        powers: *p,
        forced: false,
    };
    term.eval_point(e, f, t, s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Caps {
    pub p_tot: i32,
    pub p_max: i32,
}

/// Ordered term list for one equation slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermLibrary {
    pub slot: Slot,
    pub caps: Caps,
    /// Enumeration convention identifier recorded for portability.
    pub convention: String,
    pub terms: Vec<Term>,
}

impl TermLibrary {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn forced_indices(&self) -> Vec<usize> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.forced)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices of source (non-derivative) terms.
    pub fn source_indices(&self) -> Vec<usize> {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.kind == TermKind::Source)
            .map(|(i, _)| i)
            .collect()
    }

    /// Structural reflection-symmetry audit for this slot.
    pub fn parity_ok(&self) -> bool {
        self.terms.iter().all(|term| {
            let even = term.powers.f % 2 == 0;
            match (self.slot, term.kind) {
                // d/dx flips sign, so flux terms of an odd equation need even
                // integrands and vice versa
                (Slot::F, TermKind::Flux) => even,
                (Slot::F, TermKind::Source) => !even,
                (Slot::S, TermKind::Flux) => !even,
                (Slot::S, TermKind::Source) => even,
                (Slot::E, TermKind::Flux) => !even,
                (Slot::T, TermKind::Source) => even,
                _ => true,
            }
        })
    }

    /// Evaluate every term over a gridded state, returning one array per term.
    pub fn eval_fields(
        &self,
        e: &Array2<f64>,
        f: &Array2<f64>,
        t: &Array2<f64>,
        s: &Array2<f64>,
    ) -> Result<Vec<Array2<f64>>> {
        let dim = e.dim();
        let mut out = Vec::with_capacity(self.terms.len());
        for term in &self.terms {
            let mut arr = Array2::zeros(dim);
            for ((idx, v), (((ev, fv), tv), sv)) in arr
                .indexed_iter_mut()
                .zip(e.iter().zip(f.iter()).zip(t.iter()).zip(s.iter()))
            {
                let _ = idx;
                *v = term.eval_point(*ev, *fv, *tv, *sv)?;
            }
            out.push(arr);
        }
        Ok(out)
    }
}

/// Library for the radiation-flux equation: flux terms `dx(e^i F^{2j} T^k)`
/// with `1 <= i+j+k <= p_tot`, and sources `T^j F` with `|j| <= p_max`.
pub fn build_f_library(p_tot: i32, p_max: i32) -> Result<TermLibrary> {
    check_caps(p_tot, p_max)?;
    let mut terms = Vec::new();
    for i in 0..=p_max {
        for j in 0..=p_max {
            for k in 0..=p_max {
                let total = i + j + k;
                if total < 1 || total > p_tot {
                    continue;
                }
                terms.push(Term {
                    slot: Slot::F,
                    kind: TermKind::Flux,
                    powers: Powers {
                        e: i,
                        f: 2 * j,
                        t: k,
                        s: 0,
                    },
                    forced: false,
                });
            }
        }
    }
    for j in -p_max..=p_max {
        terms.push(Term {
            slot: Slot::F,
            kind: TermKind::Source,
            powers: Powers {
                e: 0,
                f: 1,
                t: j,
                s: 0,
            },
            forced: false,
        });
    }
    Ok(TermLibrary {
        slot: Slot::F,
        caps: Caps { p_tot, p_max },
        convention: "flux index-sum 1..=p_tot; sources T^j F, |j| <= p_max".into(),
        terms,
    })
}

/// Library for the opacity-moment equation: flux terms `dx(F^{2i+1} T^j S^k)`
/// with `0 <= i+j+k <= p_tot` (the bare `dx F` included), and sources
/// `e^i T^j S^k` with `1 <= i+j+k <= p_tot`, excluding the bare linear `S`
/// term, whose direction along the equilibrium family duplicates the forced
/// relaxation pair. `{eS, eT, TS, S^2}` are marked forced.
pub fn build_sigma_library(p_tot: i32, p_max: i32) -> Result<TermLibrary> {
    check_caps(p_tot, p_max)?;
    let mut terms = Vec::new();
    for i in 0..=p_max {
        for j in 0..=p_max {
            for k in 0..=p_max {
                if i + j + k > p_tot {
                    continue;
                }
                terms.push(Term {
                    slot: Slot::S,
                    kind: TermKind::Flux,
                    powers: Powers {
                        e: 0,
                        f: 2 * i + 1,
                        t: j,
                        s: k,
                    },
                    forced: false,
                });
            }
        }
    }
    let forced_set = [
        Powers {
            e: 1,
            f: 0,
            t: 0,
            s: 1,
        },
        Powers {
            e: 1,
            f: 0,
            t: 1,
            s: 0,
        },
        Powers {
            e: 0,
            f: 0,
            t: 1,
            s: 1,
        },
        Powers {
            e: 0,
            f: 0,
            t: 0,
            s: 2,
        },
    ];
    for i in 0..=p_max {
        for j in 0..=p_max {
            for k in 0..=p_max {
                let total = i + j + k;
                if total < 1 || total > p_tot {
                    continue;
                }
                let powers = Powers {
                    e: i,
                    f: 0,
                    t: j,
                    s: k,
                };
                // bare linear S excluded (documented convention)
                if (i, j, k) == (0, 0, 1) {
                    continue;
                }
                terms.push(Term {
                    slot: Slot::S,
                    kind: TermKind::Source,
                    powers,
                    forced: forced_set.contains(&powers),
                });
            }
        }
    }
    Ok(TermLibrary {
        slot: Slot::S,
        caps: Caps { p_tot, p_max },
        convention: "flux index-sum 0..=p_tot incl. dx(F); sources 1..=p_tot excl. bare S".into(),
        terms,
    })
}

/// Base terms of the total-energy and temperature equations. All are forced;
/// analytic default coefficients come from [`base_defaults`].
pub fn base_terms() -> (TermLibrary, TermLibrary) {
    let e_lib = TermLibrary {
        slot: Slot::E,
        caps: Caps { p_tot: 1, p_max: 1 },
        convention: "base".into(),
        terms: vec![Term {
            slot: Slot::E,
            kind: TermKind::Flux,
            powers: Powers {
                e: 0,
                f: 1,
                t: 0,
                s: 0,
            },
            forced: true,
        }],
    };
    let t_lib = TermLibrary {
        slot: Slot::T,
        caps: Caps { p_tot: 1, p_max: 1 },
        convention: "base".into(),
        terms: vec![
            Term {
                slot: Slot::T,
                kind: TermKind::Source,
                powers: Powers {
                    e: 0,
                    f: 0,
                    t: 1,
                    s: 0,
                },
                forced: true,
            },
            Term {
                slot: Slot::T,
                kind: TermKind::Source,
                powers: Powers {
                    e: 0,
                    f: 0,
                    t: 0,
                    s: 1,
                },
                forced: true,
            },
        ],
    };
    (e_lib, t_lib)
}

/// Analytic default coefficients `(w0_1, w0_2, w0_3) = (-1, -alpha/rho_cv, c/rho_cv)`.
pub fn base_defaults(alpha: f64, rho_cv: f64, c: f64) -> (f64, f64, f64) {
    (-1.0, -alpha / rho_cv, c / rho_cv)
}

fn check_caps(p_tot: i32, p_max: i32) -> Result<()> {
    if p_tot < 1 || p_max < 1 {
        return Err(Error::InvalidArgument(format!(
            "library caps must be >= 1, got p_tot = {p_tot}, p_max = {p_max}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{OpacitySpec, UnitSystem};

    #[test]
    fn paper_scale_counts() {
        assert_eq!(build_f_library(4, 3).unwrap().len(), 38);
        assert_eq!(build_sigma_library(4, 3).unwrap().len(), 62);
    }

    #[test]
    fn minimal_f_library_by_hand() {
        let lib = build_f_library(1, 1).unwrap();
        let labels: Vec<String> = lib.terms.iter().map(|t| t.label()).collect();
        assert_eq!(
            labels,
            vec!["dx(T)", "dx(F^2)", "dx(e)", "F*T^-1", "F", "F*T"]
        );
        assert_eq!(lib.len(), 6);
    }

    #[test]
    fn minimal_sigma_library_matches_brute_force() {
        let lib = build_sigma_library(1, 1).unwrap();
        // brute force under the shipped convention
        let mut expected = Vec::new();
        for i in 0..=1 {
            for j in 0..=1 {
                for k in 0..=1 {
                    if i + j + k <= 1 {
                        expected.push((TermKind::Flux, 2 * i + 1, j, k, 0));
                    }
                }
            }
        }
        for i in 0..=1i32 {
            for j in 0..=1i32 {
                for k in 0..=1i32 {
                    let tot = i + j + k;
                    if tot == 1 && (i, j, k) != (0, 0, 1) {
                        expected.push((TermKind::Source, 0, j, k, i));
                    }
                }
            }
        }
        assert_eq!(lib.len(), expected.len());
        for (term, (kind, f, t, s, e)) in lib.terms.iter().zip(&expected) {
            assert_eq!(term.kind, *kind);
            assert_eq!(term.powers.f, *f);
            assert_eq!(term.powers.t, *t);
            assert_eq!(term.powers.s, *s);
            assert_eq!(term.powers.e, *e);
        }
    }

    #[test]
    fn forced_set_is_the_relaxation_quadruple() {
        let lib = build_sigma_library(4, 3).unwrap();
        let forced: Vec<String> = lib
            .terms
            .iter()
            .filter(|t| t.forced)
            .map(|t| t.label())
            .collect();
        assert_eq!(forced, vec!["S^2", "T*S", "e*S", "e*T"]);
    }

    #[test]
    fn parity_audit_passes_constructively() {
        for lib in [
            build_f_library(4, 3).unwrap(),
            build_sigma_library(4, 3).unwrap(),
            base_terms().0,
            base_terms().1,
        ] {
            assert!(lib.parity_ok());
        }
    }

    #[test]
    fn enumeration_is_deterministic() {
        assert_eq!(build_f_library(4, 3).unwrap(), build_f_library(4, 3).unwrap());
        assert_eq!(
            build_sigma_library(3, 2).unwrap(),
            build_sigma_library(3, 2).unwrap()
        );
    }

    #[test]
    fn no_duplicate_terms() {
        for lib in [build_f_library(4, 3).unwrap(), build_sigma_library(4, 3).unwrap()] {
            let mut seen = std::collections::HashSet::new();
            for t in &lib.terms {
                assert!(seen.insert((t.kind, t.powers)), "duplicate {:?}", t);
            }
        }
    }

    #[test]
    fn base_defaults_satisfy_blackbody_identity() {
        let units = UnitSystem::default();
        let op = OpacitySpec::larsen(1e9).unwrap();
        let alpha = op.alpha(&units);
        let rho_cv = 1e23;
        let (w1, w2, w3) = base_defaults(alpha, rho_cv, units.c);
        assert_eq!(w1, -1.0);
        // at a black-body state: S* = a sigma_P(T) T^4 = (alpha / c) T
        let a = units.radiation_a();
        for t in [1.0, 300.0, 1000.0] {
            let s_star = a * op.sigma_p(t, &units).unwrap() * t.powi(4);
            let residual = w2 * t + w3 * s_star;
            assert!(
                residual.abs() < 1e-12 * (w2 * t).abs(),
                "T = {t}: residual {residual}"
            );
        }
    }

    #[test]
    fn eval_rules() {
        let term = Term {
            slot: Slot::F,
            kind: TermKind::Flux,
            powers: Powers {
                e: 1,
                f: 2,
                t: 0,
                s: 0,
            },
            forced: false,
        };
        assert_eq!(term.eval_point(2.0, 3.0, 5.0, 7.0).unwrap(), 18.0);

        // F-first rule: T^-3 F at F = 0 is 0 even when T = 0
        let singular = Term {
            slot: Slot::F,
            kind: TermKind::Source,
            powers: Powers {
                e: 0,
                f: 1,
                t: -3,
                s: 0,
            },
            forced: false,
        };
        assert_eq!(singular.eval_point(1.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
        assert!(singular.eval_point(1.0, 2.0, 0.0, 1.0).is_err());

        let s2 = Term {
            slot: Slot::S,
            kind: TermKind::Source,
            powers: Powers {
                e: 0,
                f: 0,
                t: 0,
                s: 2,
            },
            forced: false,
        };
        for v in [0.0, 1.5, 3.25e7] {
            assert_eq!(s2.eval_point(0.0, 0.0, 0.0, v).unwrap(), v * v);
        }
    }

    #[test]
    fn evaluated_parity_flips_with_f_sign() {
        let lib = build_sigma_library(2, 2).unwrap();
        let (e, f, t, s) = (1.3, -0.7, 2.1, 0.9);
        for term in &lib.terms {
            let plus = term.eval_point(e, f, t, s).unwrap();
            let minus = term.eval_point(e, -f, t, s).unwrap();
            if term.f_parity() == 1 {
                assert_eq!(plus, minus, "{}", term.label());
            } else {
                assert_eq!(plus, -minus, "{}", term.label());
            }
        }
    }

    #[test]
    fn descriptor_round_trips_through_json() {
        let lib = build_sigma_library(4, 3).unwrap();
        let json = serde_json::to_string(&lib).unwrap();
        let back: TermLibrary = serde_json::from_str(&json).unwrap();
        assert_eq!(lib, back);
    }

    #[test]
    fn derivative_reduces_powers() {
        let term = Term {
            slot: Slot::S,
            kind: TermKind::Source,
            powers: Powers {
                e: 2,
                f: 0,
                t: 1,
                s: 3,
            },
            forced: false,
        };
        let (mult, p) = term.derivative(Slot::S).unwrap();
        assert_eq!(mult, 3.0);
        assert_eq!(p.s, 2);
        assert!(term.derivative(Slot::F).is_none());
    }
}
