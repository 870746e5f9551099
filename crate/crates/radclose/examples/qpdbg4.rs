use radclose::kinetic::run_transport;
use radclose::pipeline::PipelineConfig;
use radclose::weakform::{assemble_weak_systems, AssemblyOptions, ScaleInfo};
use radclose::constraints::assemble_constraints;
use radclose::physics::{OpacitySpec, UnitSystem};
use radclose::mstls::{qp_on_support, RegressionSystem, ConstraintBlock};
use nalgebra::{DMatrix, DVector};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let mut cfg = PipelineConfig::default();
    cfg.kinetic.n_cells = 256;
    cfg.kinetic.groups = 16;
    cfg.kinetic.n_steps = 200;
    let data = run_transport(&cfg.transport_config()).unwrap().dataset;
    let lb = &cfg.learning;
    let slice = data.slice_physical(lb.train_x, lb.train_t).unwrap();
    let libraries = cfg.libraries().unwrap();
    let scales = ScaleInfo::from_dataset(&slice);
    let (systems, _) = assemble_weak_systems(&slice, &libraries, &AssemblyOptions::default(), Some(scales)).unwrap();
    let units = UnitSystem::default();
    let alpha = OpacitySpec::larsen(slice.params.gamma).unwrap().alpha(&units);
    let cs = assemble_constraints(&libraries, &slice, alpha, &units, 3, 20);
    let slot = radclose::termlib::Slot::S;
    let sys = &systems[3];
    let (k, j) = sys.g.dim();
    let g = DMatrix::from_fn(k, j, |r, c| sys.g[[r, c]]);
    let b = DVector::from_iterator(k, sys.b.iter().cloned());
    let reg = RegressionSystem::new(g, b, sys.library.forced_indices());
    let block: ConstraintBlock = cs.scaled_block(slot, &libraries[slot.index()], &scales);
    let (w0, _) = qp_on_support(&reg, &block, &(0..j).collect::<Vec<_>>(), 1e-10, 1000).unwrap();
    let lambda = 4.534878508128584e-3;
    let mut support: Vec<usize> = (0..j).filter(|&kk| {
        if reg.forced.contains(&kk) { return true; }
        let a = w0[kk].abs();
        let lo = lambda * (reg.b_norm / reg.col_norms[kk]).max(1.0);
        let hi = (reg.b_norm / reg.col_norms[kk]).min(1.0) / lambda;
        a >= lo && a <= hi
    }).collect();
    for iter in 0..30 {
        println!("iter {iter}: support ({})", support.len());
        match qp_on_support(&reg, &block, &support, 1e-10, 1000) {
            Ok((w, _)) => {
                let s2: Vec<usize> = (0..j).filter(|&kk| {
                    if reg.forced.contains(&kk) { return true; }
                    let a = w[kk].abs();
                    let lo = lambda * (reg.b_norm / reg.col_norms[kk]).max(1.0);
                    let hi = (reg.b_norm / reg.col_norms[kk]).min(1.0) / lambda;
                    a >= lo && a <= hi
                }).collect();
                if s2 == support { println!("fixed point"); break; }
                support = s2;
            }
            Err(e) => { println!("   FAILED: {e}; support {:?}", support); break; }
        }
    }
}
