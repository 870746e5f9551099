//! Pipeline orchestration: a structured configuration plus the subcommand
//! implementations binding generation, learning, simulation, and evaluation.

use crate::closure::{
    fit_loglinear, instantiate_at, ClosureModel, ClosureParams, EnergyUnit, ParametrizedClosure,
};
use crate::constraints::{assemble_constraints, audit_pointwise, ConstraintReport};
use crate::dataset::{json_hash, MomentDataset};
use crate::error::{Error, Result};
use crate::evaluate::{metrics, MetricReport, SweepRow};
use crate::kinetic::{run_transport, InflowSide, TransportConfig};
use crate::mstls::{group_select_lambda, MstlsOptions, RegressionSystem};
use crate::physics::{kappa_l, OpacitySpec, UnitSystem};
use crate::solver::{simulate_closure, QuadraticFit, SideBoundary, SolverConfig};
use crate::termlib::{base_terms, build_f_library, build_sigma_library, Slot, TermLibrary};
use crate::weakform::{assemble_weak_systems, AssemblyOptions, ScaleInfo, WeakSystem};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub domain_length: f64,
    pub t_in: f64,
    pub t_o: f64,
    pub gamma: f64,
    /// Volumetric heat capacity (eV/cm^3 per eV). The default keeps material
    /// and radiation energy comparable at the nominal drive temperature, so
    /// the temperature relaxation rate stays integrable by the explicit
    /// forward solver.
    pub rho_cv: f64,
}

impl Default for ProblemBlock {
    fn default() -> Self {
        ProblemBlock {
            domain_length: 4.0,
            t_in: 1000.0,
            t_o: 1.0,
            gamma: 1e9,
            rho_cv: 1e23,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticBlock {
    pub n_cells: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub m_omega: usize,
    pub groups: usize,
    pub picard_tol: f64,
    pub picard_max: usize,
}

impl Default for KineticBlock {
    fn default() -> Self {
        KineticBlock {
            n_cells: 1024,
            dt: 1e-12,
            n_steps: 200,
            m_omega: 8,
            groups: 32,
            picard_tol: 1e-10,
            picard_max: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningBlock {
    pub p_tot: i32,
    pub p_max: i32,
    pub tau: f64,
    pub tau_hat: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_count: usize,
    pub boundary_samples: usize,
    /// Training subdomain in physical units.
    pub train_x: (f64, f64),
    pub train_t: (f64, f64),
    pub min_query_factor: usize,
}

impl Default for LearningBlock {
    fn default() -> Self {
        LearningBlock {
            p_tot: 4,
            p_max: 3,
            tau: 1e-4,
            tau_hat: 6.0,
            lambda_min: 1e-4,
            lambda_max: 1.0,
            lambda_count: 100,
            boundary_samples: 20,
            train_x: (0.0, 2.0),
            train_t: (0.0, 1e-10),
            min_query_factor: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    /// The forward grid uses the data meshwidth times this divisor.
    pub grid_divisor: usize,
    pub rel_tol: f64,
    pub abs_tol_scale: f64,
    pub cfl: f64,
    /// Fit window for the boundary quadratics; defaults to the training
    /// window so extrapolation runs never peek at future boundary data.
    pub bc_window: Option<(f64, f64)>,
}

impl Default for SolverBlock {
    fn default() -> Self {
        SolverBlock {
            grid_divisor: 2,
            rel_tol: 1e-6,
            abs_tol_scale: 1e-8,
            cfl: 0.45,
            bc_window: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub gamma_grid: Vec<f64>,
    pub t_in_cubed_grid: Vec<f64>,
    pub training_gammas: Vec<f64>,
    pub training_t_in_cubed: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        let half = 10f64.powf(0.5);
        SweepBlock {
            gamma_grid: vec![1e8, 1e8 * half, 1e9, 1e9 * half, 1e10],
            t_in_cubed_grid: vec![1e8, 1e8 * half, 1e9, 1e9 * half, 1e10],
            training_gammas: vec![1e8, 1e8 * half, 1e9],
            training_t_in_cubed: vec![1e9, 1e9 * half, 1e10],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub problem: ProblemBlock,
    #[serde(default)]
    pub kinetic: KineticBlock,
    #[serde(default)]
    pub learning: LearningBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            problem: ProblemBlock::default(),
            kinetic: KineticBlock::default(),
            learning: LearningBlock::default(),
            solver: SolverBlock::default(),
            sweep: SweepBlock::default(),
        }
    }
}

fn default_schema() -> u32 {
    CONFIG_SCHEMA_VERSION
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{e}")))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: cfg.schema_version,
                expected: CONFIG_SCHEMA_VERSION,
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.problem;
        if !(p.domain_length > 0.0 && p.t_in > 0.0 && p.t_o > 0.0 && p.gamma > 0.0 && p.rho_cv > 0.0)
        {
            return Err(Error::Config("problem block values must be positive".into()));
        }
        if self.learning.lambda_min <= 0.0 || self.learning.lambda_max <= self.learning.lambda_min {
            return Err(Error::Config("lambda grid bounds invalid".into()));
        }
        if self.learning.p_tot < 1 || self.learning.p_max < 1 {
            return Err(Error::Config("library caps must be >= 1".into()));
        }
        if self.solver.grid_divisor == 0 {
            return Err(Error::Config("grid divisor must be >= 1".into()));
        }
        self.transport_config().validate()
    }

    pub fn hash(&self) -> String {
        json_hash(self)
    }

    pub fn transport_config(&self) -> TransportConfig {
        let mut t = TransportConfig::new(
            self.problem.domain_length,
            self.kinetic.n_cells,
            self.kinetic.m_omega,
            self.kinetic.groups,
            self.kinetic.dt,
            self.kinetic.n_steps,
            self.problem.t_in,
            self.problem.t_o,
            self.problem.rho_cv,
            self.problem.gamma,
        );
        t.picard_tol = self.kinetic.picard_tol;
        t.picard_max = self.kinetic.picard_max;
        t.inflow = InflowSide::Left;
        t
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        let n = self.lambda_count();
        (0..n)
            .map(|i| {
                let f = i as f64 / (n - 1).max(1) as f64;
                self.learning.lambda_min
                    * (self.learning.lambda_max / self.learning.lambda_min).powf(f)
            })
            .collect()
    }

    fn lambda_count(&self) -> usize {
        self.learning.lambda_count.max(2)
    }

    pub fn libraries(&self) -> Result<[TermLibrary; 4]> {
        let (e_lib, t_lib) = base_terms();
        let f_lib = build_f_library(self.learning.p_tot, self.learning.p_max)?;
        let s_lib = build_sigma_library(self.learning.p_tot, self.learning.p_max)?;
        Ok([e_lib, f_lib, t_lib, s_lib])
    }
}

/// Generate one kinetic dataset at the configured parameters.
pub fn generate(config: &PipelineConfig, out_dir: &Path) -> Result<PathBuf> {
    config.validate()?;
    let out = run_transport(&config.transport_config())?;
    let dir = out_dir.join("dataset");
    out.dataset.write(&dir)?;
    let diag_path = out_dir.join("diagnostics.json");
    std::fs::write(&diag_path, serde_json::to_string_pretty(&out.diagnostics)?)?;
    Ok(dir)
}

/// Per-equation regression summary for the report.
#[derive(Debug, Clone, Serialize)]
pub struct EquationReport {
    pub slot: String,
    pub lambda: f64,
    pub support: Vec<String>,
    pub residual_rel: f64,
    pub kkt_satisfied: Option<bool>,
    pub test_params: crate::weakform::EquationTestParams,
}

#[derive(Debug, Clone, Serialize)]
pub struct LearnReport {
    pub datasets: Vec<String>,
    pub constraint_report: Vec<ConstraintReport>,
    pub equations: Vec<Vec<EquationReport>>,
    pub audit_violations: Vec<usize>,
    pub config_hash: String,
}

pub struct LearnOutput {
    pub models: Vec<ClosureModel>,
    pub report: LearnReport,
}

fn to_regression(sys: &WeakSystem) -> RegressionSystem {
    let (k, j) = sys.g.dim();
    let g = DMatrix::from_fn(k, j, |r, c| sys.g[[r, c]]);
    let b = DVector::from_iterator(k, sys.b.iter().cloned());
    RegressionSystem::new(g, b, sys.library.forced_indices())
}

/// Learn constrained closure models from one or more datasets; several
/// datasets couple through group sparsity and share one library and scaling.
pub fn learn(config: &PipelineConfig, datasets: &[MomentDataset]) -> Result<LearnOutput> {
    if datasets.is_empty() {
        return Err(Error::InvalidArgument("no datasets given".into()));
    }
    let units = UnitSystem::default();
    let libraries = config.libraries()?;
    let lb = &config.learning;

    // training slices and a shared scaling
    let slices: Vec<MomentDataset> = datasets
        .iter()
        .map(|ds| ds.slice_physical(lb.train_x, lb.train_t))
        .collect::<Result<_>>()?;
    let per_ds_scales: Vec<ScaleInfo> = slices.iter().map(ScaleInfo::from_dataset).collect();
    let scales = ScaleInfo::merged(&per_ds_scales);

    let opts = AssemblyOptions {
        tau: lb.tau,
        tau_hat: lb.tau_hat,
        min_k_factor: lb.min_query_factor,
        ..AssemblyOptions::default()
    };
    let mstls_opts = MstlsOptions {
        lambda_grid: config.lambda_grid(),
        ..MstlsOptions::default()
    };

    // weak systems and constraints per dataset
    let mut systems: Vec<Vec<WeakSystem>> = Vec::with_capacity(slices.len());
    let mut constraint_sets = Vec::with_capacity(slices.len());
    let mut constraint_reports = Vec::with_capacity(slices.len());
    for slice in &slices {
        let (sys, _) = assemble_weak_systems(slice, &libraries, &opts, Some(scales))?;
        let alpha = OpacitySpec::larsen(slice.params.gamma)?.alpha(&units);
        let cs = assemble_constraints(
            &libraries,
            slice,
            alpha,
            &units,
            lb.p_max as usize,
            lb.boundary_samples,
        );
        constraint_reports.push(cs.report.clone());
        systems.push(sys);
        constraint_sets.push(cs);
    }

    // group MSTLS per equation slot
    let mut coeff_sets: Vec<[Vec<f64>; 4]> = vec![Default::default(); slices.len()];
    let mut eq_reports: Vec<Vec<EquationReport>> = vec![Vec::new(); slices.len()];
    for (slot_pos, slot) in Slot::ALL.iter().enumerate() {
        let regs: Vec<RegressionSystem> = systems
            .iter()
            .map(|s| to_regression(&s[slot_pos]))
            .collect();
        let blocks: Vec<crate::mstls::ConstraintBlock> = constraint_sets
            .iter()
            .map(|cs| cs.scaled_block(*slot, &libraries[slot.index()], &scales))
            .collect();
        let results = group_select_lambda(&regs, &blocks, &mstls_opts)?;
        for (p, result) in results.into_iter().enumerate() {
            let lib = &libraries[slot.index()];
            let w_phys: Vec<f64> = lib
                .terms
                .iter()
                .zip(result.w.iter())
                .map(|(term, w)| scales.coeff_to_physical(*slot, term, *w))
                .collect();
            let resid = (&regs[p].g * &result.w - &regs[p].b).norm()
                / regs[p].b_norm.max(1e-300);
            eq_reports[p].push(EquationReport {
                slot: slot.name().into(),
                lambda: result.lambda,
                support: result
                    .support
                    .iter()
                    .map(|&j| lib.terms[j].label())
                    .collect(),
                residual_rel: resid,
                kkt_satisfied: result.kkt.as_ref().map(|k| k.satisfied(1e-7)),
                test_params: systems[p][slot_pos].test_params,
            });
            coeff_sets[p][slot.index()] = w_phys;
        }
    }

    // package models and audit them on their training slices
    let mut models = Vec::with_capacity(slices.len());
    let mut audit_counts = Vec::with_capacity(slices.len());
    for (p, slice) in slices.iter().enumerate() {
        let model = ClosureModel::new(
            libraries.clone(),
            coeff_sets[p].clone(),
            ClosureParams {
                gamma: slice.params.gamma,
                t_in_cubed: slice.params.t_in.powi(3),
            },
            slice.params.rho_cv,
            EnergyUnit::Ev,
        )?;
        let alpha = OpacitySpec::larsen(slice.params.gamma)?.alpha(&units);
        let violations = audit_pointwise(
            &model.terms_with_coeffs(Slot::F),
            &model.terms_with_coeffs(Slot::S),
            slice,
            alpha,
            slice.params.rho_cv,
            &units,
            1e-8,
        );
        audit_counts.push(violations.len());
        models.push(model);
    }

    Ok(LearnOutput {
        models,
        report: LearnReport {
            datasets: datasets
                .iter()
                .map(|d| d.provenance.config_hash.clone())
                .collect(),
            constraint_report: constraint_reports,
            equations: eq_reports,
            audit_violations: audit_counts,
            config_hash: config.hash(),
        },
    })
}

/// Forward-simulate a closure against a dataset's initial and boundary data.
///
/// The simulation grid coarsens the data meshwidth by the configured divisor;
/// boundary quadratics are fit over `bc_window` (the training window by
/// default) at the inflow side, with outflow on the other side. Models
/// calibrated in a different energy unit convert in and out transparently.
pub fn simulate(
    config: &PipelineConfig,
    model: &ClosureModel,
    data: &MomentDataset,
) -> Result<MomentDataset> {
    let sb = &config.solver;
    let scale = model.energy_unit.scale_from_ev();
    let data_scaled;
    let data_ref = if scale != 1.0 {
        data_scaled = data.scale_energy(scale);
        &data_scaled
    } else {
        data
    };

    let nx_sim = (data_ref.nx() / sb.grid_divisor).max(16);
    let sim_data = data_ref.resample(nx_sim, data_ref.nt(), true)?;
    let x = sim_data.x;
    let t_grid = sim_data.t;

    let ic: Vec<[f64; 4]> = (0..nx_sim)
        .map(|i| {
            [
                sim_data.e[[i, 0]],
                sim_data.f[[i, 0]],
                sim_data.temp[[i, 0]],
                sim_data.s[[i, 0]],
            ]
        })
        .collect();

    // inflow boundary quadratics from the original-resolution data
    let window = sb.bc_window.unwrap_or(config.learning.train_t);
    let j0 = data_ref.t.nearest(window.0);
    let j1 = data_ref.t.nearest(window.1).max(j0 + 2);
    let ts: Vec<f64> = (j0..=j1).map(|j| data_ref.t.coord(j)).collect();
    let fit_var = |field: &ndarray::Array2<f64>| -> Result<QuadraticFit> {
        let vs: Vec<f64> = (j0..=j1).map(|j| field[[0, j]]).collect();
        QuadraticFit::fit(&ts, &vs)
    };
    let left = SideBoundary::dirichlet(
        fit_var(&data_ref.e)?,
        fit_var(&data_ref.f)?,
        fit_var(&data_ref.s)?,
    );
    let right = SideBoundary::outflow();

    let solver_cfg = SolverConfig {
        rel_tol: sb.rel_tol,
        abs_tol_scale: sb.abs_tol_scale,
        cfl: sb.cfl,
        ..SolverConfig::default()
    };
    let out = simulate_closure(
        model,
        x,
        t_grid,
        &ic,
        left,
        right,
        solver_cfg,
        data.params.clone(),
    )?;
    if scale != 1.0 {
        Ok(out.scale_energy(1.0 / scale))
    } else {
        Ok(out)
    }
}

/// Compare a candidate dataset against a reference, resampling the reference
/// when allowed.
pub fn evaluate(
    candidate: &MomentDataset,
    reference: &MomentDataset,
    allow_resample: bool,
) -> Result<MetricReport> {
    if candidate.nx() == reference.nx() && candidate.nt() == reference.nt() {
        return metrics(candidate, reference);
    }
    if !allow_resample {
        return Err(Error::Dataset(
            "grids differ; pass --resample to subsample the reference".into(),
        ));
    }
    let reference = reference.resample(candidate.nx(), candidate.nt(), true)?;
    metrics(candidate, &reference)
}

/// Fit the log-linear parametrization from an ensemble of learned models.
pub fn extrapolate(config: &PipelineConfig, models: &[ClosureModel]) -> Result<ParametrizedClosure> {
    let mut pc = fit_loglinear(models)?;
    pc.t_o = config.problem.t_o;
    pc.domain_length = config.problem.domain_length;
    Ok(pc)
}

/// Run the parameter sweep: instantiate the closure at each grid point,
/// simulate against the reference when one is available, and tabulate.
pub fn sweep(
    config: &PipelineConfig,
    pc: &ParametrizedClosure,
    references: &dyn Fn(f64, f64) -> Option<MomentDataset>,
) -> Result<Vec<SweepRow>> {
    let units = UnitSystem::default();
    let mut rows = Vec::new();
    for &gamma in &config.sweep.gamma_grid {
        for &t3 in &config.sweep.t_in_cubed_grid {
            let t_in = t3.cbrt();
            let kl = kappa_l(config.problem.t_o, t_in, gamma, config.problem.domain_length, &units)?;
            let training = config
                .sweep
                .training_gammas
                .iter()
                .any(|g| (g / gamma - 1.0).abs() < 1e-9)
                && config
                    .sweep
                    .training_t_in_cubed
                    .iter()
                    .any(|t| (t / t3 - 1.0).abs() < 1e-9);
            let (model, inside) = instantiate_at(pc, gamma, t3, &units)?;
            let mut row = SweepRow {
                gamma,
                t_in_cubed: t3,
                kappa_l: kl,
                training,
                inside_validity: inside,
                reference_missing: true,
                blow_up: false,
                err_l1: None,
            };
            if let Some(reference) = references(gamma, t3) {
                row.reference_missing = false;
                match simulate(config, &model, &reference) {
                    Ok(sim) => {
                        let report = evaluate(&sim, &reference, true)?;
                        row.err_l1 =
                            Some([report.e.err_l1, report.f.err_l1, report.t.err_l1, report.s.err_l1]);
                    }
                    Err(Error::ClosureBlowUp { .. }) | Err(Error::StepUnderflow { .. }) => {
                        row.blow_up = true;
                    }
                    Err(e) => return Err(e),
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Run-directory manifest listing produced artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(self)?,
        )?;
        Ok(())
    }
}
