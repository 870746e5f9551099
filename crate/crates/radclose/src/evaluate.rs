//! Relative error metrics between closure solutions and reference data, and
//! the parameter-sweep report rows.

use crate::dataset::MomentDataset;
use crate::error::{Error, Result};
use serde::Serialize;
use std::io::Write;

/// Metrics for one state variable.
#[derive(Debug, Clone, Serialize)]
pub struct VariableMetrics {
    /// Relative L1 error over the whole spacetime domain.
    pub err_l1: f64,
    /// Relative L1 error per time slice; `None` marks an undefined slice
    /// (zero reference mass), excluded from aggregates rather than poisoning
    /// them.
    pub err_l1_j: Vec<Option<f64>>,
    /// Relative integrated error per time slice.
    pub err_int_j: Vec<Option<f64>>,
    pub undefined_slices: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub e: VariableMetrics,
    pub f: VariableMetrics,
    pub t: VariableMetrics,
    pub s: VariableMetrics,
}

impl MetricReport {
    pub fn variable(&self, name: &str) -> Option<&VariableMetrics> {
        match name {
            "e" => Some(&self.e),
            "f" => Some(&self.f),
            "t" => Some(&self.t),
            "s" => Some(&self.s),
            _ => None,
        }
    }

    /// One row per time index: `t, var, err_l1_j, err_int_j` for plotting.
    pub fn write_series_csv<W: Write>(&self, t_coords: &[f64], mut out: W) -> Result<()> {
        writeln!(out, "t,variable,err_l1_j,err_int_j")?;
        for (name, vm) in [("e", &self.e), ("F", &self.f), ("T", &self.t), ("S", &self.s)] {
            for (j, &tc) in t_coords.iter().enumerate() {
                let l1 = vm.err_l1_j[j].map_or(String::new(), |v| v.to_string());
                let int = vm.err_int_j[j].map_or(String::new(), |v| v.to_string());
                writeln!(out, "{tc},{name},{l1},{int}")?;
            }
        }
        Ok(())
    }
}

fn grids_match(a: &MomentDataset, b: &MomentDataset) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * x.abs().max(y.abs()).max(1e-300);
    a.nx() == b.nx()
        && a.nt() == b.nt()
        && close(a.x.start, b.x.start)
        && close(a.x.step, b.x.step)
        && close(a.t.start, b.t.start)
        && close(a.t.step, b.t.step)
}

fn variable_metrics(cand: &ndarray::Array2<f64>, refr: &ndarray::Array2<f64>) -> VariableMetrics {
    let (nx, nt) = refr.dim();
    let mut num_total = 0.0;
    let mut den_total = 0.0;
    let mut err_l1_j = Vec::with_capacity(nt);
    let mut err_int_j = Vec::with_capacity(nt);
    let mut undefined = Vec::new();
    for j in 0..nt {
        let mut num = 0.0;
        let mut den = 0.0;
        let mut diff_sum = 0.0;
        let mut ref_sum = 0.0;
        for i in 0..nx {
            let d = cand[[i, j]] - refr[[i, j]];
            num += d.abs();
            den += refr[[i, j]].abs();
            diff_sum += d;
            ref_sum += refr[[i, j]];
        }
        num_total += num;
        den_total += den;
        if den == 0.0 || ref_sum == 0.0 {
            undefined.push(j);
            err_l1_j.push(None);
            err_int_j.push(None);
        } else {
            err_l1_j.push(Some(num / den));
            err_int_j.push(Some(diff_sum.abs() / ref_sum.abs()));
        }
    }
    VariableMetrics {
        err_l1: if den_total > 0.0 {
            num_total / den_total
        } else {
            0.0
        },
        err_l1_j,
        err_int_j,
        undefined_slices: undefined,
    }
}

/// The three relative error metrics per variable. Grids must match; resample
/// the candidate first when they do not.
pub fn metrics(candidate: &MomentDataset, reference: &MomentDataset) -> Result<MetricReport> {
    if !grids_match(candidate, reference) {
        return Err(Error::Dataset(format!(
            "metric grids differ: ({}, {}) vs ({}, {}); resample first",
            candidate.nx(),
            candidate.nt(),
            reference.nx(),
            reference.nt()
        )));
    }
    Ok(MetricReport {
        e: variable_metrics(&candidate.e, &reference.e),
        f: variable_metrics(&candidate.f, &reference.f),
        t: variable_metrics(&candidate.temp, &reference.temp),
        s: variable_metrics(&candidate.s, &reference.s),
    })
}

/// One parameter-sweep grid point.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub t_in_cubed: f64,
    pub kappa_l: f64,
    pub training: bool,
    pub inside_validity: bool,
    pub reference_missing: bool,
    pub blow_up: bool,
    /// Spacetime relative L1 errors for (e, F, T, S) when evaluated.
    pub err_l1: Option<[f64; 4]>,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    writeln!(
        out,
        "gamma,t_in_cubed,kappa_l,training,inside_validity,reference_missing,blow_up,err_e,err_F,err_T,err_S"
    )?;
    for r in rows {
        let errs = r.err_l1.map_or(vec![String::new(); 4], |e| {
            e.iter().map(|v| v.to_string()).collect()
        });
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.gamma,
            r.t_in_cubed,
            r.kappa_l,
            r.training,
            r.inside_validity,
            r.reference_missing,
            r.blow_up,
            errs[0],
            errs[1],
            errs[2],
            errs[3]
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Grid, ProblemParams, Provenance};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn make(nx: usize, nt: usize, f: impl Fn(usize, usize) -> f64) -> MomentDataset {
        let arr = Array2::from_shape_fn((nx, nt), |(i, j)| f(i, j));
        MomentDataset::new(
            Grid {
                start: 0.0,
                step: 1.0,
                n: nx,
            },
            Grid {
                start: 0.0,
                step: 1.0,
                n: nt,
            },
            arr.clone(),
            arr.clone(),
            arr.clone(),
            arr,
            ProblemParams {
                gamma: 1e9,
                t_in: 1000.0,
                t_o: 1.0,
                rho_cv: 1e23,
                domain_length: 4.0,
                m_omega: 8,
                groups: 16,
            },
            Provenance::new("test", "x"),
        )
        .unwrap()
    }

    #[test]
    fn identical_data_gives_zero() {
        let a = make(8, 5, |i, j| (i * j + 1) as f64);
        let m = metrics(&a, &a).unwrap();
        assert_eq!(m.e.err_l1, 0.0);
        assert!(m.e.err_l1_j.iter().all(|v| v == &Some(0.0)));
    }

    #[test]
    fn homogeneous_scaling_by_ten_percent() {
        let a = make(8, 5, |i, j| (i + j + 1) as f64);
        let mut b = a.clone();
        b.e.mapv_inplace(|v| 1.1 * v);
        let m = metrics(&b, &a).unwrap();
        assert!((m.e.err_l1 - 0.1).abs() < 1e-12);
        for j in 0..5 {
            assert!((m.e.err_int_j[j].unwrap() - 0.1).abs() < 1e-12);
            assert!((m.e.err_l1_j[j].unwrap() - 0.1).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_definite_int_metric_is_norm_difference() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let a = make(12, 6, |_, _| 0.0);
        let mut refr = a.clone();
        let mut cand = a.clone();
        refr.e.mapv_inplace(|_| rng.gen_range(0.5..2.0));
        cand.e
            .assign(&refr.e.mapv(|v| v * rng.gen_range(0.9..1.3)));
        let m = metrics(&cand, &refr).unwrap();
        for j in 0..6 {
            let c_norm: f64 = (0..12).map(|i| cand.e[[i, j]].abs()).sum();
            let r_norm: f64 = (0..12).map(|i| refr.e[[i, j]].abs()).sum();
            let expect = (c_norm - r_norm).abs() / r_norm;
            assert!((m.e.err_int_j[j].unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn integrated_error_bounded_by_l1() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let refr = make(16, 8, |_, _| 1.0);
        let mut cand = refr.clone();
        cand.e.mapv_inplace(|v| v + rng.gen_range(-0.4..0.4));
        let m = metrics(&cand, &refr).unwrap();
        for j in 0..8 {
            assert!(m.e.err_int_j[j].unwrap() <= m.e.err_l1_j[j].unwrap() + 1e-15);
        }
    }

    #[test]
    fn common_rescaling_invariance() {
        let refr = make(10, 4, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0));
        let mut cand = refr.clone();
        cand.e.mapv_inplace(|v| v + 0.3);
        let m1 = metrics(&cand, &refr).unwrap();
        let cand2 = cand.scale_energy(7.5);
        let refr2 = refr.scale_energy(7.5);
        let m2 = metrics(&cand2, &refr2).unwrap();
        assert!((m1.e.err_l1 - m2.e.err_l1).abs() < 1e-14);
    }

    #[test]
    fn zero_denominator_slice_is_flagged() {
        let refr = make(6, 3, |i, j| if j == 0 { 0.0 } else { (i + 1) as f64 });
        let mut cand = refr.clone();
        cand.f.mapv_inplace(|v| v + 0.1);
        let m = metrics(&cand, &refr).unwrap();
        assert_eq!(m.f.err_l1_j[0], None);
        assert_eq!(m.f.undefined_slices, vec![0]);
        assert!(m.f.err_l1_j[1].is_some());
    }

    #[test]
    fn mismatched_grids_rejected() {
        let a = make(8, 5, |_, _| 1.0);
        let b = make(10, 5, |_, _| 1.0);
        assert!(metrics(&a, &b).is_err());
    }

    #[test]
    fn sweep_csv_shape() {
        let rows = vec![
            SweepRow {
                gamma: 1e9,
                t_in_cubed: 1e9,
                kappa_l: 0.2,
                training: true,
                inside_validity: true,
                reference_missing: false,
                blow_up: false,
                err_l1: Some([0.1, 0.2, 0.05, 0.3]),
            },
            SweepRow {
                gamma: 1e10,
                t_in_cubed: 1e8,
                kappa_l: 0.003,
                training: false,
                inside_validity: false,
                reference_missing: true,
                blow_up: true,
                err_l1: None,
            },
        ];
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(2).unwrap().ends_with("true,true,,,,"));
    }
}
