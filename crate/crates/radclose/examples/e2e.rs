use radclose::dataset::Grid;
use radclose::kinetic::run_transport;
use radclose::pipeline::{self, PipelineConfig};
use std::time::Instant;

fn main() {
    let mut cfg = PipelineConfig::default();
    cfg.kinetic.n_cells = 256;
    cfg.kinetic.groups = 16;
    cfg.kinetic.n_steps = 200;
    let t0 = Instant::now();
    let data = run_transport(&cfg.transport_config()).unwrap().dataset;
    println!("kinetic: {:?} (nx={}, nt={})", t0.elapsed(), data.nx(), data.nt());
    let _ = Grid { start: 0.0, step: 1.0, n: 2 };

    let t1 = Instant::now();
    let result = pipeline::learn(&cfg, std::slice::from_ref(&data)).unwrap();
    println!("learn: {:?}", t1.elapsed());
    let model = &result.models[0];
    for rep in &result.report.equations[0] {
        println!("eq {}: lambda={:.3e} resid={:.3e} kkt={:?} support={:?}",
            rep.slot, rep.lambda, rep.residual_rel, rep.kkt_satisfied, rep.support);
    }
    println!("audit violations: {:?}", result.report.audit_violations);
    println!("constraints: {:?}", result.report.constraint_report[0]);
    for slot in [radclose::termlib::Slot::E, radclose::termlib::Slot::T] {
        println!("{} coeffs: {:?}", slot.name(), model.coeffs[slot.index()]);
    }

    let t2 = Instant::now();
    match pipeline::simulate(&cfg, model, &data) {
        Ok(sim) => {
            println!("simulate: {:?} (nx={}, nt={})", t2.elapsed(), sim.nx(), sim.nt());
            let report = pipeline::evaluate(&sim, &data, true).unwrap();
            println!("err_L1: e={:.4} F={:.4} T={:.4} S={:.4}",
                report.e.err_l1, report.f.err_l1, report.t.err_l1, report.s.err_l1);
            // err_Int for e at later times
            let cutoff = 2e-11;
            let mut worst: f64 = 0.0;
            for (j, tv) in sim.t.coords().iter().enumerate() {
                if *tv > cutoff {
                    if let Some(v) = report.e.err_int_j[j] { worst = worst.max(v); }
                }
            }
            println!("worst err_Int(e) for t>2e-11: {:.4}", worst);
            let mut worst_t: f64 = 0.0;
            for (j, tv) in sim.t.coords().iter().enumerate() {
                if *tv > cutoff {
                    if let Some(v) = report.t.err_l1_j[j] { worst_t = worst_t.max(v); }
                }
            }
            println!("worst err_L1,j(T) for t>2e-11: {:.4}", worst_t);
        }
        Err(e) => println!("simulate FAILED: {e}"),
    }
}
