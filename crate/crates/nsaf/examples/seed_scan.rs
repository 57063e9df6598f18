// temporary probe: heat-baseline slope quality per seed
use nsaf::analysis::{AnalysisEngine, Statement};
use nsaf::grid::Grid;
use nsaf::metrics::Q;
use nsaf::moments::{FluxSeries, ITensorSet, MomentTable, MAX_FLUX_BETA};
use nsaf::profiles::JQuadConfig;
use nsaf::solver::{self, geometric_snapshots, InitialKind, SolverConfig};

fn main() {
    let grid = Grid::new(2, 512, 256.0).unwrap();
    for seed in 1..=8u64 {
        let mut snapshot_times = geometric_snapshots(0.25, 1000.0, 64);
        snapshot_times.push(1.0);
        snapshot_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        snapshot_times.dedup();
        let config = SolverConfig {
            grid,
            dt: 0.25,
            t_end: 1000.0,
            snapshot_times,
            dealias: 2.0 / 3.0,
            amplitude: 1.0,
            kind: InitialKind::SeededRandomLocalized,
            seed,
            advection: false,
            tail_flag: 1e-8,
            tail_abort: 5e-2,
        };
        let traj = solver::run(&config).map_err(|e| { eprintln!("solver error: {e}"); e }).expect("linear run");
        let flux = FluxSeries::from_trajectory(&traj, MAX_FLUX_BETA).unwrap();
        let table = MomentTable::default();
        let set = ITensorSet::default();
        let engine = AnalysisEngine::new(
            &traj, &flux, &table, &set,
            nsaf::config::Tolerances::default(),
            JQuadConfig::default(),
        );
        let mut worst: f64 = 0.0;
        let mut line = format!("seed {seed:2}:");
        for m in [1u32, 2] {
            for q in [Q::One, Q::Inf] {
                let r = engine.decay_report(&Statement::HeatM { m, q }).unwrap();
                let dev = (r.slope - r.predicted).abs();
                worst = worst.max(dev);
                line.push_str(&format!(" m{m}q{}:{:+.3}", q.label(), r.slope - r.predicted));
            }
        }
        println!("{line}  worst {worst:.3} {}", if worst < 0.08 { "<== good" } else { "" });
    }
}
