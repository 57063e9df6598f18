//! Deterministic synthetic moment data.
//!
//! Scaling laws are properties of the profile construction, not of any
//! particular coefficient values, and several coefficients vanish identically
//! for radially symmetric runs. The scaling checks therefore run against a
//! table where every coefficient is a fixed nonzero pseudo-random number.

use rand::{Rng, SeedableRng};

use crate::grid::Grid;
use crate::moments::{
    build_i_tensor, lbeta_exact, lbeta_upto, IntegrandTag, ITensorSet, MomentEntry, MomentKey,
    MomentTable, MAX_FLUX_BETA,
};
use crate::profiles::{omega_sum, velocity_sum, ProfileContext, ProfileError, TermKind};

fn draw(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    let v: f64 = rng.gen_range(0.2..1.0);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

/// Moment table with nonzero entries for every key the assemblers read.
pub fn synthetic_table(seed: u64) -> MomentTable {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut table = MomentTable {
        entries: Default::default(),
        source: format!("synthetic-{seed}"),
    };
    let mut put = |key: MomentKey, value: f64| {
        table.entries.insert(
            key,
            MomentEntry {
                value,
                tail_fraction: 0.0,
                trunc_err: 0.0,
            },
        );
    };
    for a1 in 0..=5u32 {
        for a2 in 0..=(5 - a1) {
            put(
                MomentKey {
                    l: 0,
                    beta: [a1, a2],
                    tag: IntegrandTag::Omega0,
                },
                draw(&mut rng),
            );
        }
    }
    let pairs = [(1u8, 2u8), (2, 1)];
    for (l, b1, b2) in lbeta_upto(2) {
        for (h, j) in pairs {
            put(
                MomentKey {
                    l,
                    beta: [b1, b2],
                    tag: IntegrandTag::OmegaU { h, j },
                },
                draw(&mut rng),
            );
        }
    }
    for m in 1..=2u8 {
        for (l, b1, b2) in lbeta_exact(2 + m as u32) {
            for (h, j) in pairs {
                put(
                    MomentKey {
                        l,
                        beta: [b1, b2],
                        tag: IntegrandTag::OmegaUMinusI { h, j, m },
                    },
                    draw(&mut rng),
                );
            }
        }
    }
    table
}

/// Tensors built from profiles assembled with the synthetic table, plus the
/// matching IAtOne ledger entries.
pub fn synthetic_context(
    grid: Grid,
    seed: u64,
) -> Result<(MomentTable, ITensorSet), ProfileError> {
    let mut table = synthetic_table(seed);
    let empty = ITensorSet::default();
    let tensors = {
        let ctx = ProfileContext {
            grid,
            table: &table,
            itensors: &empty,
            flux: None,
        };
        let mut omegas = Vec::new();
        for ord in 2..=3u32 {
            omegas.push(omega_sum(&ctx, ord)?.sum.eval(grid, 1.0)?);
        }
        let mut ws = Vec::new();
        for i in 1..=2u32 {
            let mut pair = Vec::new();
            for j in 1..=2usize {
                let u = velocity_sum(&ctx, TermKind::U, i, j)?.sum.eval(grid, 1.0)?;
                let ut = velocity_sum(&ctx, TermKind::UT, i, j)?.sum.eval(grid, 1.0)?;
                pair.push(u.axpby(1.0, &ut, 1.0)?);
            }
            ws.push([pair.remove(0), pair.remove(0)]);
        }
        let mut set = ITensorSet::default();
        for p in 3..=4u32 {
            set.tensors
                .insert(p, build_i_tensor(p, grid, &omegas, &ws, 10)?);
        }
        set
    };
    for (&p, tensor) in &tensors.tensors {
        for b1 in 0..=MAX_FLUX_BETA {
            for b2 in 0..=(MAX_FLUX_BETA - b1) {
                for (h, k) in [(1u8, 2u8), (2, 1)] {
                    table.entries.insert(
                        MomentKey {
                            l: 0,
                            beta: [b1, b2],
                            tag: IntegrandTag::IAtOne { h, k, p: p as u8 },
                        },
                        MomentEntry {
                            value: tensor.moment(h as usize, k as usize, [b1, b2]),
                            tail_fraction: 0.0,
                            trunc_err: 0.0,
                        },
                    );
                }
            }
        }
    }
    Ok((table, tensors))
}
