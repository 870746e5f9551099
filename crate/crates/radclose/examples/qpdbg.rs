use radclose::dataset::MomentDataset;
use radclose::kinetic::run_transport;
use radclose::pipeline::PipelineConfig;
use radclose::weakform::{assemble_weak_systems, AssemblyOptions, ScaleInfo};
use radclose::constraints::assemble_constraints;
use radclose::physics::{OpacitySpec, UnitSystem};
use radclose::mstls::{qp_on_support, RegressionSystem, ConstraintBlock};
use nalgebra::{DMatrix, DVector};

fn main() {
    let mut cfg = PipelineConfig::default();
    cfg.kinetic.n_cells = 256;
    cfg.kinetic.groups = 16;
    cfg.kinetic.n_steps = 200;
    let data = run_transport(&cfg.transport_config()).unwrap().dataset;
    let lb = &cfg.learning;
    let slice = data.slice_physical(lb.train_x, lb.train_t).unwrap();
    let libraries = cfg.libraries().unwrap();
    let scales = ScaleInfo::from_dataset(&slice);
    let opts = AssemblyOptions::default();
    let (systems, _) = assemble_weak_systems(&slice, &libraries, &opts, Some(scales)).unwrap();
    let units = UnitSystem::default();
    let alpha = OpacitySpec::larsen(slice.params.gamma).unwrap().alpha(&units);
    let cs = assemble_constraints(&libraries, &slice, alpha, &units, 3, 20);
    println!("report: {:?}", cs.report);
    for (pos, slot) in radclose::termlib::Slot::ALL.iter().enumerate() {
        let sys = &systems[pos];
        let (k, j) = sys.g.dim();
        let g = DMatrix::from_fn(k, j, |r, c| sys.g[[r, c]]);
        let b = DVector::from_iterator(k, sys.b.iter().cloned());
        let reg = RegressionSystem::new(g, b, sys.library.forced_indices());
        let block: ConstraintBlock = cs.scaled_block(*slot, &libraries[slot.index()], &scales);
        println!("slot {}: K={} J={} eq={} ineq={}", slot.name(), k, j, block.eq.nrows(), block.ineq.nrows());
        let t0 = std::time::Instant::now();
        match qp_on_support(&reg, &block, &(0..j).collect::<Vec<_>>(), 1e-10, 1000) {
            Ok((w, kkt)) => println!("  ok in {:?}; |w| max {:.3e}; kkt {:?}", t0.elapsed(), w.amax(), kkt.map(|k| k.satisfied(1e-7))),
            Err(e) => println!("  FAILED ({:?}): {e}", t0.elapsed()),
        }
    }
}
