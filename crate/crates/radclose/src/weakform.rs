//! Separable rectified-polynomial test functions and weak-system assembly.
//!
//! The weak form of `d/dt u = sum_j w_j D_j f_j` sampled at a query point is
//! `(dpsi_t * u)(q) = sum_j w_j (K_j * f_j)(q)` with `K_j = dpsi_x` for flux
//! terms and `K_j = psi` for sources; convolutions run separably axis by axis
//! with trapezoid weights. Assembly happens on internally rescaled fields and
//! axes so that column magnitudes stay within floating-point range; the
//! monomial bookkeeping that maps scaled coefficients back to physical ones is
//! exact.

use crate::dataset::MomentDataset;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::termlib::{Slot, TermKind, TermLibrary};
use ndarray::{Array1, Array2};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

/// Test-function parameters along one axis, in scaled axis units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestParams {
    /// Polynomial power (real, >= max derivative order + 1).
    pub p: f64,
    /// Support half-width.
    pub a: f64,
    /// Samples on each side of the centre; `m = floor(a / delta)`.
    pub m: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EquationTestParams {
    pub x: TestParams,
    pub t: TestParams,
}

/// Discrete test function: trapezoid-weighted samples of `phi` and `phi'`.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub params: TestParams,
    pub delta: f64,
    /// `phi(l delta) * delta` for `l in -m..=m`.
    pub psi: Vec<f64>,
    /// `phi'(l delta) * delta`.
    pub dpsi: Vec<f64>,
}

/// `phi(v) = (1 - (v/a)^2)_+^p`.
pub fn phi(v: f64, p: f64, a: f64) -> f64 {
    let u = 1.0 - (v / a) * (v / a);
    if u <= 0.0 {
        0.0
    } else {
        u.powf(p)
    }
}

/// Analytic derivative of `phi`.
pub fn dphi(v: f64, p: f64, a: f64) -> f64 {
    let u = 1.0 - (v / a) * (v / a);
    if u <= 0.0 {
        0.0
    } else {
        -2.0 * p * v / (a * a) * u.powf(p - 1.0)
    }
}

/// `int phi dv = a B(1/2, p+1)` by the Beta function.
pub fn phi_integral(p: f64, a: f64) -> f64 {
    a * beta(0.5, p + 1.0)
}

/// `int v^2 phi dv = a^3 B(3/2, p+1)`.
pub fn phi_second_moment(p: f64, a: f64) -> f64 {
    a * a * a * beta(1.5, p + 1.0)
}

fn beta(x: f64, y: f64) -> f64 {
    libm::tgamma(x) * libm::tgamma(y) / libm::tgamma(x + y)
}

/// Standard deviation of the normalized power spectrum of `phi`,
/// `sqrt(p (4p+1) / (2 (2p-1))) / a` via `||phi'|| / ||phi||`.
pub fn spectral_std(p: f64, a: f64) -> f64 {
    (p * (4.0 * p + 1.0) / (2.0 * (2.0 * p - 1.0))).sqrt() / a
}

/// Build the discrete test function for grid spacing `delta`.
pub fn build_test_function(params: TestParams, delta: f64, max_deriv: usize) -> Result<TestFunction> {
    if params.p <= max_deriv as f64 {
        return Err(Error::WeakForm(format!(
            "test-function power {} does not keep {} derivatives continuous",
            params.p, max_deriv
        )));
    }
    if params.m < 1 {
        return Err(Error::WeakForm("test-function support below one sample".into()));
    }
    let m = params.m;
    let mut psi = Vec::with_capacity(2 * m + 1);
    let mut dpsi = Vec::with_capacity(2 * m + 1);
    for l in -(m as i64)..=(m as i64) {
        let v = l as f64 * delta;
        psi.push(phi(v, params.p, params.a) * delta);
        dpsi.push(dphi(v, params.p, params.a) * delta);
    }
    Ok(TestFunction {
        params,
        delta,
        psi,
        dpsi,
    })
}

/// Support radius that places the outermost sample exactly at value `tau`:
/// `a = m delta / sqrt(1 - tau^{1/p})`.
pub fn support_for_endpoint(m: usize, delta: f64, p: f64, tau: f64) -> f64 {
    m as f64 * delta / (1.0 - tau.powf(1.0 / p)).sqrt()
}

/// Estimate the signal/noise changepoint wavenumber of a one-sided magnitude
/// spectrum: the split minimizing the total squared residual of a two-piece
/// linear fit to the cumulative log-magnitude curve.
pub fn spectrum_changepoint(magnitudes: &[f64]) -> Option<usize> {
    let n = magnitudes.len();
    if n < 8 {
        return None;
    }
    let total: f64 = magnitudes.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    // degenerate spectrum: all energy at DC
    if magnitudes[1..].iter().sum::<f64>() < 1e-12 * magnitudes[0] {
        return None;
    }
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &m in magnitudes {
        acc += m;
        cumulative.push((acc / total).max(1e-300).ln());
    }
    let sse = |lo: usize, hi: usize| -> f64 {
        // least-squares line fit over cumulative[lo..=hi]
        let k = (hi - lo + 1) as f64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for (i, &y) in cumulative[lo..=hi].iter().enumerate() {
            let x = (lo + i) as f64;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
        let det = k * sxx - sx * sx;
        if det.abs() < 1e-300 {
            return 0.0;
        }
        let slope = (k * sxy - sx * sy) / det;
        let intercept = (sy - slope * sx) / k;
        cumulative[lo..=hi]
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let r = y - (slope * ((lo + i) as f64) + intercept);
                r * r
            })
            .sum()
    };
    let mut best = (f64::INFINITY, 0);
    for split in 2..n - 2 {
        let cost = sse(0, split) + sse(split, n - 1);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    if best.1 <= 1 {
        None
    } else {
        Some(best.1)
    }
}

/// Mean one-sided magnitude spectrum of a field along one axis.
fn axis_spectrum(field: &Array2<f64>, axis: usize) -> Vec<f64> {
    let (nx, nt) = field.dim();
    let n = if axis == 0 { nx } else { nt };
    let lanes = if axis == 0 { nt } else { nx };
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let half = n / 2 + 1;
    let mut mean = vec![0.0; half];
    let mut buf = vec![Complex::default(); n];
    for lane in 0..lanes {
        for i in 0..n {
            let v = if axis == 0 {
                field[[i, lane]]
            } else {
                field[[lane, i]]
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fft.process(&mut buf);
        for (k, slot) in mean.iter_mut().enumerate() {
            *slot += buf[k].norm();
        }
    }
    for v in &mut mean {
        *v /= lanes as f64;
    }
    mean
}

/// Select `(p, a)` for one axis from the data spectrum.
///
/// Solves the pair of decay conditions: the test function falls to `tau` one
/// spacing inside its support edge, and the changepoint wavenumber sits
/// `tau_hat` standard deviations into the normalized power spectrum of `phi`.
/// Falls back to `a = L/10, p = 4` on degenerate spectra; the support is
/// capped at a third of the axis extent.
pub fn select_axis_params(
    field: &Array2<f64>,
    axis: usize,
    delta: f64,
    tau: f64,
    tau_hat: f64,
    max_deriv: usize,
) -> TestParams {
    let n = if axis == 0 { field.dim().0 } else { field.dim().1 };
    let extent = delta * (n - 1) as f64;
    let p_min = (max_deriv as f64 + 1.0).max(2.0);
    let p_cap = 16.0;
    let finish = |a: f64, p: f64| -> TestParams {
        let a_capped = a.clamp(2.0 * delta, extent / 3.0);
        let m = ((a_capped / delta).floor() as usize).max(2);
        // re-anchor the support so the outermost sample sits exactly at tau
        let a_final = support_for_endpoint(m, delta, p, tau);
        TestParams { p, a: a_final, m }
    };
    let fallback = finish(extent / 10.0, 4.0);

    let spectrum = axis_spectrum(field, axis);
    let Some(k_star) = spectrum_changepoint(&spectrum) else {
        return fallback;
    };
    let omega_star = 2.0 * std::f64::consts::PI * k_star as f64 / (n as f64 * delta);
    // endpoint residual at the Fourier-matched support a(p)
    let residual = |p: f64| -> f64 {
        let a = tau_hat * spectral_std(p, 1.0) / omega_star;
        let edge = (a - delta).max(0.1 * delta);
        p * (1.0 - (edge / a) * (edge / a)).max(1e-300).ln() - tau.ln()
    };
    // scan for a sign change, then bisect
    let samples = 57;
    let mut bracket = None;
    let mut prev = (p_min, residual(p_min));
    for i in 1..=samples {
        let p = p_min + (p_cap - p_min) * i as f64 / samples as f64;
        let r = residual(p);
        if prev.1 == 0.0 || prev.1.signum() != r.signum() {
            bracket = Some((prev.0, p));
            break;
        }
        prev = (p, r);
    }
    let p = match bracket {
        Some((mut lo, mut hi)) => {
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                if residual(lo).signum() == residual(mid).signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        }
        // no solution in range: pick the closest endpoint
        None => {
            if residual(p_min).abs() < residual(p_cap).abs() {
                p_min
            } else {
                p_cap
            }
        }
    };
    let a = tau_hat * spectral_std(p, 1.0) / omega_star;
    finish(a, p.max(p_min))
}

/// Per-variable and per-axis reference scales used during assembly.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScaleInfo {
    /// max |field| for (e, F, T, S), floored at 1.
    pub field_refs: [f64; 4],
    pub x_ref: f64,
    pub t_ref: f64,
}

impl ScaleInfo {
    pub fn from_dataset(ds: &MomentDataset) -> ScaleInfo {
        let mut refs = [1.0; 4];
        for (i, (_, field)) in ds.fields().iter().enumerate() {
            let m = field.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            refs[i] = if m > 0.0 { m } else { 1.0 };
        }
        let x_ref = (ds.x.step * (ds.x.n - 1) as f64).max(ds.x.step);
        let t_ref = (ds.t.step * (ds.t.n - 1) as f64).max(ds.t.step);
        ScaleInfo {
            field_refs: refs,
            x_ref,
            t_ref,
        }
    }

    /// Merge ensemble scales so group regressions share one unit system.
    pub fn merged(all: &[ScaleInfo]) -> ScaleInfo {
        let mut out = all[0];
        for s in &all[1..] {
            for i in 0..4 {
                out.field_refs[i] = out.field_refs[i].max(s.field_refs[i]);
            }
            out.x_ref = out.x_ref.max(s.x_ref);
            out.t_ref = out.t_ref.max(s.t_ref);
        }
        out
    }

    /// `prod ref^power`, the scale factor of a monomial term.
    pub fn term_scale(&self, powers: &crate::termlib::Powers) -> f64 {
        self.field_refs[0].powi(powers.e)
            * self.field_refs[1].powi(powers.f)
            * self.field_refs[2].powi(powers.t)
            * self.field_refs[3].powi(powers.s)
    }

    /// Scale factor of a library column in the weak system.
    pub fn column_kappa(&self, term: &crate::termlib::Term) -> f64 {
        match term.kind {
            TermKind::Flux => self.term_scale(&term.powers) / self.x_ref,
            TermKind::Source => self.term_scale(&term.powers),
        }
    }

    /// Scale factor of the response column for one equation slot.
    pub fn b_kappa(&self, slot: Slot) -> f64 {
        self.field_refs[slot.index()] / self.t_ref
    }

    /// Physical coefficient from a scaled one.
    pub fn coeff_to_physical(&self, slot: Slot, term: &crate::termlib::Term, w_scaled: f64) -> f64 {
        w_scaled * self.b_kappa(slot) / self.column_kappa(term)
    }

    /// Scaled coefficient from a physical one.
    pub fn coeff_to_scaled(&self, slot: Slot, term: &crate::termlib::Term, w_phys: f64) -> f64 {
        w_phys * self.column_kappa(term) / self.b_kappa(slot)
    }
}

/// Convolution evaluation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ConvMethod {
    #[default]
    Direct,
    Fft,
}

/// Weak-form regression system for one equation.
#[derive(Debug, Clone)]
pub struct WeakSystem {
    pub slot: Slot,
    pub library: TermLibrary,
    /// K x J matrix in scaled space.
    pub g: Array2<f64>,
    pub b: Array1<f64>,
    pub col_norms: Vec<f64>,
    pub b_norm: f64,
    pub queries: Vec<(usize, usize)>,
    pub test_params: EquationTestParams,
}

#[derive(Debug, Clone)]
pub struct AssemblyOptions {
    pub tau: f64,
    pub tau_hat: f64,
    /// Minimum ratio of query points to columns.
    pub min_k_factor: usize,
    pub method: ConvMethod,
    pub exec: ExecMode,
    /// Override automatic test-function selection per slot.
    pub params_override: Option<[EquationTestParams; 4]>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            tau: 1e-4,
            tau_hat: 6.0,
            min_k_factor: 4,
            method: ConvMethod::Direct,
            exec: ExecMode::Parallel,
            params_override: None,
        }
    }
}

/// Separable convolution of one term field evaluated at query points.
///
/// `kernel_x`/`kernel_t` are trapezoid-weighted test-function samples; the
/// value at query `(qx, qt)` is `sum_{l,r} kx[l] kt[r] field[qx-l, qt-r]`.
fn convolve_at_queries(
    field: &Array2<f64>,
    kx: &[f64],
    kt: &[f64],
    queries: &[(usize, usize)],
    xs: &[usize],
) -> Vec<f64> {
    let (_, nt) = field.dim();
    let mx = (kx.len() - 1) / 2;
    let mt = (kt.len() - 1) / 2;
    // stage 1: convolve along x at the distinct query columns
    let mut stage: std::collections::HashMap<usize, Vec<f64>> = std::collections::HashMap::new();
    for &qx in xs {
        let mut row = vec![0.0; nt];
        for (jt, slot) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (li, &k) in kx.iter().enumerate() {
                let l = li as i64 - mx as i64;
                let ix = (qx as i64 - l) as usize;
                acc += k * field[[ix, jt]];
            }
            *slot = acc;
        }
        stage.insert(qx, row);
    }
    // stage 2: convolve along t at each query
    queries
        .iter()
        .map(|&(qx, qt)| {
            let row = &stage[&qx];
            let mut acc = 0.0;
            for (ri, &k) in kt.iter().enumerate() {
                let r = ri as i64 - mt as i64;
                let jt = (qt as i64 - r) as usize;
                acc += k * row[jt];
            }
            acc
        })
        .collect()
}

/// Full-grid separable convolution via FFT; values outside the valid band are
/// unusable and never queried.
fn convolve_fft(field: &Array2<f64>, kx: &[f64], kt: &[f64]) -> Array2<f64> {
    let (nx, nt) = field.dim();
    let mut out = field.clone();
    out = conv_axis_fft(&out, kx, 0);
    out = conv_axis_fft(&out, kt, 1);
    let _ = (nx, nt);
    out
}

fn conv_axis_fft(field: &Array2<f64>, kernel: &[f64], axis: usize) -> Array2<f64> {
    let (nx, nt) = field.dim();
    let n = if axis == 0 { nx } else { nt };
    let lanes = if axis == 0 { nt } else { nx };
    let m = (kernel.len() - 1) / 2;
    let nfft = (n + kernel.len()).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);

    // kernel transform; kernel index l occupies slot l + m so the output of
    // the circular convolution at position q + m equals the correlation sum
    let mut kbuf = vec![Complex::default(); nfft];
    for (i, &k) in kernel.iter().enumerate() {
        kbuf[i] = Complex::new(k, 0.0);
    }
    fwd.process(&mut kbuf);

    let mut out = Array2::zeros((nx, nt));
    let mut buf = vec![Complex::default(); nfft];
    for lane in 0..lanes {
        buf.iter_mut().for_each(|c| *c = Complex::default());
        for i in 0..n {
            let v = if axis == 0 {
                field[[i, lane]]
            } else {
                field[[lane, i]]
            };
            buf[i] = Complex::new(v, 0.0);
        }
        fwd.process(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kbuf) {
            *b *= *k;
        }
        inv.process(&mut buf);
        let scale = 1.0 / nfft as f64;
        // kernel offset l sits at slot l + m, so output q lives at q + m
        for q in 0..n {
            let idx = q + m;
            if idx < nfft {
                let v = buf[idx].re * scale;
                if axis == 0 {
                    out[[q, lane]] = v;
                } else {
                    out[[lane, q]] = v;
                }
            }
        }
    }
    out
}

/// Build query points for one equation; strides shrink until `K >= factor * J`.
fn build_queries(
    nx: usize,
    nt: usize,
    mx: usize,
    mt: usize,
    j_cols: usize,
    factor: usize,
) -> Result<(Vec<(usize, usize)>, Vec<usize>)> {
    if nx < 2 * mx + 2 || nt < 2 * mt + 2 {
        return Err(Error::WeakForm(format!(
            "test-function support ({mx}, {mt}) does not fit the data grid ({nx}, {nt})"
        )));
    }
    let mut sx = mx.max(1);
    let mut st = mt.max(1);
    loop {
        let xs: Vec<usize> = (mx..nx - mx).step_by(sx).collect();
        let ts: Vec<usize> = (mt..nt - mt).step_by(st).collect();
        let k = xs.len() * ts.len();
        if k >= factor * j_cols || (sx == 1 && st == 1) {
            if k <= j_cols {
                return Err(Error::WeakForm(format!(
                    "only {k} query points for {j_cols} columns"
                )));
            }
            let queries: Vec<(usize, usize)> = ts
                .iter()
                .flat_map(|&qt| xs.iter().map(move |&qx| (qx, qt)))
                .collect();
            return Ok((queries, xs));
        }
        if sx > 1 {
            sx = sx / 2 + usize::from(sx / 2 == 0);
        }
        if st > 1 {
            st = st / 2 + usize::from(st / 2 == 0);
        }
    }
}

/// Assemble the weak system for every equation slot of the model.
///
/// `libraries` holds the per-slot term lists in slot order (e, F, T, S).
/// `scales` lets an ensemble share one scaling; pass `None` to derive it from
/// this dataset.
pub fn assemble_weak_systems(
    ds: &MomentDataset,
    libraries: &[TermLibrary; 4],
    opts: &AssemblyOptions,
    scales: Option<ScaleInfo>,
) -> Result<(Vec<WeakSystem>, ScaleInfo)> {
    let scales = scales.unwrap_or_else(|| ScaleInfo::from_dataset(ds));
    let (nx, nt) = ds.e.dim();
    // scaled fields and axis spacings
    let scaled: Vec<Array2<f64>> = ds
        .fields()
        .iter()
        .enumerate()
        .map(|(i, (_, f))| f.mapv(|v| v / scales.field_refs[i]))
        .collect();
    let dxh = ds.x.step / scales.x_ref;
    let dth = ds.t.step / scales.t_ref;

    let mut systems = Vec::with_capacity(4);
    for (slot_idx, slot) in Slot::ALL.iter().enumerate() {
        let library = &libraries[slot_idx];
        if library.is_empty() {
            continue;
        }
        let params = match &opts.params_override {
            Some(all) => all[slot_idx],
            None => EquationTestParams {
                x: select_axis_params(&scaled[slot_idx], 0, dxh, opts.tau, opts.tau_hat, 1),
                t: select_axis_params(&scaled[slot_idx], 1, dth, opts.tau, opts.tau_hat, 1),
            },
        };
        let tf_x = build_test_function(params.x, dxh, 1)?;
        let tf_t = build_test_function(params.t, dth, 1)?;
        let (queries, xs) = build_queries(
            nx,
            nt,
            params.x.m,
            params.t.m,
            library.len(),
            opts.min_k_factor,
        )?;
        let k = queries.len();

        // response column: (dpsi_t x psi_x) * u
        let u = &scaled[slot_idx];
        let b_vals = match opts.method {
            ConvMethod::Direct => convolve_at_queries(u, &tf_x.psi, &tf_t.dpsi, &queries, &xs),
            ConvMethod::Fft => {
                let full = convolve_fft(u, &tf_x.psi, &tf_t.dpsi);
                queries.iter().map(|&(qx, qt)| full[[qx, qt]]).collect()
            }
        };
        let b = Array1::from_vec(b_vals);

        // library columns, parallel over terms
        let cols: Vec<Result<Vec<f64>>> = map_indexed(opts.exec, library.len(), |j| {
            let term = &library.terms[j];
            let mut field = Array2::zeros((nx, nt));
            for ix in 0..nx {
                for it in 0..nt {
                    field[[ix, it]] = term.eval_point(
                        scaled[0][[ix, it]],
                        scaled[1][[ix, it]],
                        scaled[2][[ix, it]],
                        scaled[3][[ix, it]],
                    )?;
                }
            }
            let kernel_x: &[f64] = if term.kind == TermKind::Flux {
                &tf_x.dpsi
            } else {
                &tf_x.psi
            };
            let vals = match opts.method {
                ConvMethod::Direct => convolve_at_queries(&field, kernel_x, &tf_t.psi, &queries, &xs),
                ConvMethod::Fft => {
                    let full = convolve_fft(&field, kernel_x, &tf_t.psi);
                    queries.iter().map(|&(qx, qt)| full[[qx, qt]]).collect()
                }
            };
            Ok(vals)
        });

        let mut g = Array2::zeros((k, library.len()));
        for (j, col) in cols.into_iter().enumerate() {
            let col = col?;
            for (q, v) in col.into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::WeakForm(format!(
                        "non-finite weak entry in column {}",
                        library.terms[j].label()
                    )));
                }
                g[[q, j]] = v;
            }
        }
        let col_norms: Vec<f64> = (0..library.len())
            .map(|j| g.column(j).mapv(|v| v * v).sum().sqrt())
            .collect();
        let b_norm = b.mapv(|v| v * v).sum().sqrt();
        systems.push(WeakSystem {
            slot: *slot,
            library: library.clone(),
            g,
            b,
            col_norms,
            b_norm,
            queries,
            test_params: params,
        });
    }
    Ok((systems, scales))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Grid, MomentDataset, ProblemParams, Provenance};
    use crate::termlib::{Powers, Term};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn mkparams() -> ProblemParams {
        ProblemParams {
            gamma: 1e9,
            t_in: 1000.0,
            t_o: 1.0,
            rho_cv: 1e23,
            domain_length: 4.0,
            m_omega: 8,
            groups: 16,
        }
    }

    fn dataset_from(e: Array2<f64>, f: Array2<f64>, gx: Grid, gt: Grid) -> MomentDataset {
        let ones = Array2::ones(e.dim());
        MomentDataset::new(
            gx,
            gt,
            e,
            f,
            ones.clone(),
            ones,
            mkparams(),
            Provenance::new("test", "x"),
        )
        .unwrap()
    }

    #[test]
    fn dphi_vanishes_at_origin() {
        assert_eq!(dphi(0.0, 4.0, 1.0), 0.0);
    }

    #[test]
    fn rejects_low_power() {
        let params = TestParams {
            p: 1.0,
            a: 0.5,
            m: 4,
        };
        assert!(build_test_function(params, 0.1, 1).is_err());
    }

    #[test]
    fn beta_integral_matches_trapezoid() {
        let (p, a) = (4.0, 0.73);
        let n = 129;
        let h = 2.0 * a / (n - 1) as f64;
        let mut trap = 0.0;
        for i in 0..n {
            let v = -a + i as f64 * h;
            let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
            trap += w * phi(v, p, a) * h;
        }
        let closed = phi_integral(p, a);
        assert!(((trap - closed) / closed).abs() < 1e-6);
    }

    #[test]
    fn support_sample_count() {
        let p = 4.0;
        let delta = 0.1;
        let m = 7;
        let a = support_for_endpoint(m, delta, p, 1e-4);
        let tf = build_test_function(TestParams { p, a, m }, delta, 1).unwrap();
        let nonzero = tf.psi.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nonzero, 2 * m + 1);
        assert_eq!(tf.psi.len(), 2 * ((a / delta).floor() as usize) + 1);
        // endpoint value is exactly tau by construction
        let endpoint = phi(m as f64 * delta, p, a);
        assert!(((endpoint - 1e-4) / 1e-4).abs() < 1e-10);
    }

    #[test]
    fn changepoint_recovers_two_piece_break() {
        // construct magnitudes whose cumulative log curve is exactly two lines
        // with a break at k = 25
        let break_at = 25usize;
        let n = 128;
        let log_c = |k: usize| -> f64 {
            if k <= break_at {
                0.2 * k as f64
            } else {
                0.2 * break_at as f64 + 0.002 * (k - break_at) as f64
            }
        };
        let mut mags = vec![log_c(0).exp()];
        for k in 1..n {
            mags.push(log_c(k).exp() - log_c(k - 1).exp());
        }
        let k = spectrum_changepoint(&mags).unwrap();
        assert!(
            (break_at - 3..=break_at + 3).contains(&k),
            "changepoint {k}, expected near {break_at}"
        );
    }

    #[test]
    fn degenerate_spectrum_falls_back() {
        let flat = Array2::from_elem((64, 32), 3.0);
        let params = select_axis_params(&flat, 0, 0.1, 1e-4, 6.0, 1);
        // fallback support is a tenth of the extent
        assert!((params.a - 6.3 * 0.1 / (1.0 - 1e-4f64.powf(1.0 / 4.0)).sqrt()).abs() < 0.2);
        assert_eq!(params.p, 4.0);
    }

    #[test]
    fn low_frequency_signal_gets_capped_support() {
        let n = 256;
        let delta = 1.0 / n as f64;
        let field = Array2::from_shape_fn((n, 16), |(i, _)| {
            (2.0 * std::f64::consts::PI * 2.0 * i as f64 * delta).sin()
        });
        let params = select_axis_params(&field, 0, delta, 1e-4, 6.0, 1);
        let extent = delta * (n - 1) as f64;
        // support grows to the cap when there is no noise floor
        assert!(params.a >= extent / 5.0, "a = {}", params.a);
        assert!(params.a <= extent / 2.9);
    }

    #[test]
    fn constant_in_time_field_gives_zero_b() {
        let nx = 64;
        let nt = 40;
        let gx = Grid {
            start: 0.0,
            step: 1.0 / nx as f64,
            n: nx,
        };
        let gt = Grid {
            start: 0.0,
            step: 1.0,
            n: nt,
        };
        let e = Array2::from_shape_fn((nx, nt), |(i, _)| (i as f64 * 0.1).sin() + 2.0);
        let ds = dataset_from(e, Array2::ones((nx, nt)), gx, gt);
        let (e_lib, t_lib) = crate::termlib::base_terms();
        let f_lib = crate::termlib::build_f_library(1, 1).unwrap();
        let s_lib = crate::termlib::build_sigma_library(1, 1).unwrap();
        let (systems, _) = assemble_weak_systems(
            &ds,
            &[e_lib, f_lib, t_lib, s_lib],
            &AssemblyOptions::default(),
            None,
        )
        .unwrap();
        let e_sys = &systems[0];
        for &v in e_sys.b.iter() {
            assert!(v.abs() < 1e-12, "b entry {v}");
        }
    }

    #[test]
    fn manufactured_quadratic_matches_closed_form() {
        // u(x, t) = x^2 t; weak response entry has the closed form
        // [xq^2 I0x + I2x] * I0t per the moment integrals of phi
        let nx = 401;
        let nt = 301;
        let gx = Grid {
            start: 0.0,
            step: 1.0 / (nx - 1) as f64,
            n: nx,
        };
        let gt = Grid {
            start: 0.0,
            step: 1.0 / (nt - 1) as f64,
            n: nt,
        };
        let u = Array2::from_shape_fn((nx, nt), |(i, j)| {
            let x = gx.coord(i);
            let t = gt.coord(j);
            x * x * t
        });
        let (px, pt) = (4.0, 4.0);
        let (mx, mt) = (60usize, 45usize);
        let ax = support_for_endpoint(mx, gx.step, px, 1e-10);
        let at = support_for_endpoint(mt, gt.step, pt, 1e-10);
        let tfx = build_test_function(
            TestParams {
                p: px,
                a: ax,
                m: mx,
            },
            gx.step,
            1,
        )
        .unwrap();
        let tft = build_test_function(
            TestParams {
                p: pt,
                a: at,
                m: mt,
            },
            gt.step,
            1,
        )
        .unwrap();
        let (qx, qt) = (200usize, 150usize);
        let val = convolve_at_queries(&u, &tfx.psi, &tft.dpsi, &[(qx, qt)], &[qx])[0];
        let i0x = phi_integral(px, ax);
        let i2x = phi_second_moment(px, ax);
        let i0t = phi_integral(pt, at);
        let x_q = gx.coord(qx);
        let expected = (x_q * x_q * i0x + i2x) * i0t;
        assert!(
            ((val - expected) / expected).abs() < 1e-6,
            "{val} vs {expected}"
        );
    }

    #[test]
    fn advection_regression_recovers_minus_one() {
        // u_t = -u_x for u(x,t) = g(x - t); regressing b on the dx(u) column
        // must return -1
        let nx = 257;
        let nt = 257;
        let gx = Grid {
            start: 0.0,
            step: 4.0 / (nx - 1) as f64,
            n: nx,
        };
        let gt = Grid {
            start: 0.0,
            step: 1.0 / (nt - 1) as f64,
            n: nt,
        };
        let u = Array2::from_shape_fn((nx, nt), |(i, j)| {
            let x = gx.coord(i);
            let t = gt.coord(j);
            (-(x - 1.2 - t) * (x - 1.2 - t) / 0.08).exp()
        });
        let ds = dataset_from(u.clone(), u, gx, gt);
        // single-term library: flux dx(e) on the e slot
        let lib = TermLibrary {
            slot: Slot::E,
            caps: crate::termlib::Caps { p_tot: 1, p_max: 1 },
            convention: "test".into(),
            terms: vec![Term {
                slot: Slot::E,
                kind: TermKind::Flux,
                powers: Powers {
                    e: 1,
                    f: 0,
                    t: 0,
                    s: 0,
                },
                forced: true,
            }],
        };
        let empty = TermLibrary {
            slot: Slot::F,
            caps: crate::termlib::Caps { p_tot: 1, p_max: 1 },
            convention: "test".into(),
            terms: vec![],
        };
        let mut e2 = empty.clone();
        e2.slot = Slot::T;
        let mut e3 = empty.clone();
        e3.slot = Slot::S;
        let (systems, scales) = assemble_weak_systems(
            &ds,
            &[lib, empty, e2, e3],
            &AssemblyOptions::default(),
            None,
        )
        .unwrap();
        let sys = &systems[0];
        let num: f64 = sys.g.column(0).iter().zip(sys.b.iter()).map(|(g, b)| g * b).sum();
        let den: f64 = sys.g.column(0).iter().map(|g| g * g).sum();
        let w_scaled = num / den;
        let w_phys = scales.coeff_to_physical(Slot::E, &sys.library.terms[0], w_scaled);
        assert!(
            (w_phys + 1.0).abs() < 1e-4,
            "recovered coefficient {w_phys}"
        );
    }

    #[test]
    fn fft_matches_direct_summation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let nx = 96;
        let nt = 80;
        let field = Array2::from_shape_fn((nx, nt), |_| rng.gen_range(-1.0..1.0));
        let p = 4.0;
        let (mx, mt) = (9usize, 7usize);
        let ax = support_for_endpoint(mx, 0.1, p, 1e-4);
        let at = support_for_endpoint(mt, 0.2, p, 1e-4);
        let tfx = build_test_function(TestParams { p, a: ax, m: mx }, 0.1, 1).unwrap();
        let tft = build_test_function(TestParams { p, a: at, m: mt }, 0.2, 1).unwrap();
        let full = convolve_fft(&field, &tfx.dpsi, &tft.psi);
        let mut queries = Vec::new();
        let mut xs = Vec::new();
        for qx in (mx..nx - mx).step_by(5) {
            xs.push(qx);
            for qt in (mt..nt - mt).step_by(7) {
                queries.push((qx, qt));
            }
        }
        let direct = convolve_at_queries(&field, &tfx.dpsi, &tft.psi, &queries, &xs);
        let scale: f64 = direct.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (k, &(qx, qt)) in queries.iter().enumerate() {
            assert!(
                (full[[qx, qt]] - direct[k]).abs() <= 1e-12 * scale.max(1.0),
                "mismatch at ({qx}, {qt}): {} vs {}",
                full[[qx, qt]],
                direct[k]
            );
        }
    }

    #[test]
    fn query_count_scales_with_columns() {
        let (queries, _) = build_queries(200, 150, 10, 12, 62, 4).unwrap();
        assert!(queries.len() >= 4 * 62);
        assert!(build_queries(24, 24, 10, 10, 62, 4).is_err());
    }
}
