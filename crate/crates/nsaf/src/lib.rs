//! Numerical laboratory for the 2D incompressible Navier-Stokes equations in
//! vorticity form: pseudo-spectral solver, heat-kernel expansion profiles,
//! moment tables with tail extrapolation, and decay-rate verification.

pub mod analysis;
pub mod config;
pub mod field;
pub mod fft;
pub mod grid;
pub mod identities;
pub mod kernel;
pub mod metrics;
pub mod moments;
pub mod pipeline;
pub mod profiles;
pub mod quad;
pub mod report;
pub mod solver;
pub mod spectral;
pub mod synthetic;

pub use field::{PhysicalField, SpectralField};
pub use grid::Grid;

/// Build the global rayon pool honoring the NSAF_THREADS cap. Safe to call
/// more than once; only the first call takes effect.
pub fn init_threads() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| {
        if let Ok(v) = std::env::var("NSAF_THREADS") {
            if let Ok(k) = v.trim().parse::<usize>() {
                if k >= 1 {
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(k)
                        .build_global()
                        .ok();
                }
            }
        }
    });
}
