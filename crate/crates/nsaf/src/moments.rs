//! Moment coefficients for the expansion profiles: spatial moments of the
//! initial vorticity, space-time moments of (w u) with power-law tail
//! extrapolation, renormalized variants, and the tensor of profile products
//! that approximates w u at high order.
//!
//! Index conventions (2D): the vorticity tensor is w_hk = eps_hk w with
//! eps_12 = 1, eps_21 = -1, so the only bilinear products are P_h = w u_h and
//! (w_hk u_h) = eps_hk P_h (no sum).

use std::collections::BTreeMap;

use thiserror::Error;

use crate::field::{FieldError, PhysicalField};
use crate::grid::Grid;
use crate::quad::{linear_fit, quadratic_integral, simpson_nonuniform, SeriesIntegral};
use crate::solver::Trajectory;

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("moment unreliable: outer-shell contribution {share:.3e} of value exceeds {limit:.3e}")]
    Unreliable { share: f64, limit: f64 },
    #[error("moment order {0} beyond supported range")]
    Order(u32),
    #[error("tail-divergent moment: fitted decay sigma = {sigma:.3} <= l + 1 = {limit}; renormalization order is wrong")]
    TailDivergent { sigma: f64, limit: f64 },
    #[error("tensor order p = {0} out of range 1..=n+2")]
    TensorOrder(u32),
    #[error("missing tensor of order p = {0}")]
    MissingTensor(u32),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub fn eps(h: usize, k: usize) -> f64 {
    match (h, k) {
        (1, 2) => 1.0,
        (2, 1) => -1.0,
        _ => 0.0,
    }
}

/// Identifies one coefficient in the ledger.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum IntegrandTag {
    /// spatial moment of w0
    Omega0,
    /// space-time moment of (w_hj u_h)
    OmegaU { h: u8, j: u8 },
    /// space-time moment of (w_hj u_h - sum_p I_{hj;n+p}(s) - I_{hj;n+m+2}(1+s))
    OmegaUMinusI { h: u8, j: u8, m: u8 },
    /// beta-moment of I_{hk;n+p} at time 1
    IAtOne { h: u8, k: u8, p: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MomentKey {
    pub l: u32,
    pub beta: [u32; 2],
    pub tag: IntegrandTag,
}

impl MomentKey {
    pub fn order(&self) -> u32 {
        2 * self.l + self.beta[0] + self.beta[1]
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MomentEntry {
    pub value: f64,
    pub tail_fraction: f64,
    pub trunc_err: f64,
}

/// Ledger of all computed moments for one run.
#[derive(Debug, Default)]
pub struct MomentTable {
    pub entries: BTreeMap<MomentKey, MomentEntry>,
    pub source: String,
}

impl MomentTable {
    pub fn get(&self, key: &MomentKey) -> Option<MomentEntry> {
        self.entries.get(key).copied()
    }

    pub fn value(&self, key: &MomentKey) -> f64 {
        self.entries.get(key).map(|e| e.value).unwrap_or(0.0)
    }
}

/// Trapezoidal (periodic-exact) moment of (-y)^alpha f, with the outer-shell
/// contribution reported as the truncation estimate.
pub fn spatial_moment(f: &PhysicalField, alpha: [u32; 2]) -> (f64, f64) {
    let grid = f.grid();
    let coords = grid.coords();
    let npts = grid.points();
    let mut value = 0.0;
    let mut shell = 0.0;
    for (idx, v) in f.data().iter().enumerate() {
        let (i, j) = (idx / npts, idx % npts);
        let w = (-coords[i]).powi(alpha[0] as i32) * (-coords[j]).powi(alpha[1] as i32) * v;
        value += w;
        if i < 4 || i >= npts - 4 || j < 4 || j >= npts - 4 {
            shell += w.abs();
        }
    }
    let vol = grid.cell_volume();
    (value * vol, shell * vol)
}

/// Gated variant used when filling the table.
pub fn spatial_moment_checked(
    f: &PhysicalField,
    alpha: [u32; 2],
    max_order: u32,
    gate: f64,
) -> Result<(f64, f64), MomentError> {
    let order = alpha[0] + alpha[1];
    if order > max_order {
        return Err(MomentError::Order(order));
    }
    let (value, trunc) = spatial_moment(f, alpha);
    let share = trunc / value.abs().max(1e-300);
    // the gate only makes sense when the moment itself is nontrivial
    if trunc > 0.0 && share > gate && value.abs() > 1e-30 {
        return Err(MomentError::Unreliable { share, limit: gate });
    }
    Ok((value, trunc))
}

/// Per-snapshot beta-moments of the products P_h = w u_h, the inputs to all
/// space-time moments.
#[derive(Debug)]
pub struct FluxSeries {
    pub times: Vec<f64>,
    /// moments[beta] -> per-component series, moments of (-y)^beta (w u_h)
    pub moments: BTreeMap<[u32; 2], [Vec<f64>; 2]>,
    pub trunc: BTreeMap<[u32; 2], [Vec<f64>; 2]>,
    /// || |w u| ||_L1 per snapshot, the scale used by gates and identities
    pub scale_l1: Vec<f64>,
    pub max_beta: u32,
    /// half box length, bounding the moment weights
    pub half_box: f64,
}

impl FluxSeries {
    pub fn from_trajectory(traj: &Trajectory, max_beta: u32) -> Result<Self, MomentError> {
        let mut times = Vec::new();
        let mut moments: BTreeMap<[u32; 2], [Vec<f64>; 2]> = BTreeMap::new();
        let mut trunc: BTreeMap<[u32; 2], [Vec<f64>; 2]> = BTreeMap::new();
        let mut scale_l1 = Vec::new();
        for b1 in 0..=max_beta {
            for b2 in 0..=(max_beta - b1) {
                moments.insert([b1, b2], [Vec::new(), Vec::new()]);
                trunc.insert([b1, b2], [Vec::new(), Vec::new()]);
            }
        }
        for snap in &traj.snapshots {
            times.push(snap.t);
            let p1 = snap.omega.pointwise_mul(&snap.u1)?;
            let p2 = snap.omega.pointwise_mul(&snap.u2)?;
            let mag = PhysicalField::magnitude(&p1, &p2)?;
            scale_l1.push(crate::metrics::weighted_norm(
                &mag,
                crate::metrics::NormSpec::plain(crate::metrics::Q::One),
            ));
            for (beta, series) in moments.iter_mut() {
                let (v1, e1) = spatial_moment(&p1, *beta);
                let (v2, e2) = spatial_moment(&p2, *beta);
                series[0].push(v1);
                series[1].push(v2);
                let tr = trunc.get_mut(beta).unwrap();
                tr[0].push(e1);
                tr[1].push(e2);
            }
        }
        Ok(Self {
            times,
            moments,
            trunc,
            scale_l1,
            max_beta,
            half_box: traj.snapshots[0].omega.grid().length() / 2.0,
        })
    }

    /// moment series of (w_hj u_h) = eps_hj P_h for one (h, j) pair
    pub fn pair_series(&self, h: usize, j: usize, beta: [u32; 2]) -> Vec<f64> {
        let sgn = eps(h, j);
        self.moments[&beta][h - 1].iter().map(|v| sgn * v).collect()
    }

    /// series of sum_h (w_hj u_h) moments (the flux vector component j)
    pub fn flux_series(&self, j: usize, beta: [u32; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.times.len()];
        for h in 1..=2 {
            let sgn = eps(h, j);
            if sgn != 0.0 {
                for (o, v) in out.iter_mut().zip(&self.moments[&beta][h - 1]) {
                    *o += sgn * v;
                }
            }
        }
        out
    }
}

/// Renormalization tensor I_{hk;n+p} at t = 1: sums of products
/// Omega_{hk;p-i} (U_{h;i} + U^T_{h;i}). Only the off-diagonal components
/// are nonzero in 2D.
#[derive(Debug)]
pub struct ITensor {
    pub p: u32,
    pub grid: Grid,
    /// component (1,2) and component (2,1)
    pub comp12: PhysicalField,
    pub comp21: PhysicalField,
    /// cached beta-moments of each component at t = 1
    pub beta_moments: BTreeMap<[u32; 2], [f64; 2]>,
}

impl ITensor {
    pub fn zero(p: u32, grid: Grid) -> Self {
        Self {
            p,
            grid,
            comp12: PhysicalField::zeros(grid, 1.0),
            comp21: PhysicalField::zeros(grid, 1.0),
            beta_moments: BTreeMap::new(),
        }
    }

    pub fn component(&self, h: usize, k: usize) -> Option<&PhysicalField> {
        match (h, k) {
            (1, 2) => Some(&self.comp12),
            (2, 1) => Some(&self.comp21),
            _ => None,
        }
    }

    /// integral (-y)^beta I_{hk;n+p}(1, y) dy
    pub fn moment(&self, h: usize, k: usize, beta: [u32; 2]) -> f64 {
        match (h, k) {
            (1, 2) => self.beta_moments.get(&beta).map(|m| m[0]).unwrap_or(0.0),
            (2, 1) => self.beta_moments.get(&beta).map(|m| m[1]).unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// sum_h of the beta-moment with second index c
    pub fn moment_sum_h(&self, c: usize, beta: [u32; 2]) -> f64 {
        self.moment(1, c, beta) + self.moment(2, c, beta)
    }

    pub fn l1_norm(&self) -> f64 {
        let spec = crate::metrics::NormSpec::plain(crate::metrics::Q::One);
        crate::metrics::weighted_norm(&self.comp12, spec)
            .max(crate::metrics::weighted_norm(&self.comp21, spec))
    }

    /// |integral I_{hk}(1)| relative to max(L1 norm, floor)
    pub fn zero_mean_defect(&self, floor: f64) -> f64 {
        let scale = self.l1_norm().max(floor);
        let a = self.moment(1, 2, [0, 0]).abs();
        let b = self.moment(2, 1, [0, 0]).abs();
        a.max(b) / scale
    }
}

/// Assemble I_{n+p} from profile fields evaluated at t = 1.
///
/// `omega_scalar[i]` is the scalar vorticity profile of order i+2 (the (1,2)
/// tensor component); `w[i][c]` is component c+1 of U_{.;i+1} + U^T_{.;i+1}.
pub fn build_i_tensor(
    p: u32,
    grid: Grid,
    omega_scalar: &[PhysicalField],
    w: &[[PhysicalField; 2]],
    max_moment: u32,
) -> Result<ITensor, MomentError> {
    let n = 2u32;
    if p == 0 || p > n + 2 {
        return Err(MomentError::TensorOrder(p));
    }
    if p <= 2 {
        return Ok(ITensor::zero(p, grid));
    }
    let mut c12 = PhysicalField::zeros(grid, 1.0);
    let mut c21 = PhysicalField::zeros(grid, 1.0);
    for i in 1..=(p - 2) {
        let omg = &omega_scalar[(p - i - 2) as usize]; // order p-i
        let wi = &w[(i - 1) as usize];
        c12 = c12.axpby(1.0, &omg.pointwise_mul(&wi[0])?, 1.0)?;
        c21 = c21.axpby(1.0, &omg.pointwise_mul(&wi[1])?, -1.0)?;
    }
    let mut beta_moments = BTreeMap::new();
    for b1 in 0..=max_moment {
        for b2 in 0..=(max_moment - b1) {
            let (m12, _) = spatial_moment(&c12, [b1, b2]);
            let (m21, _) = spatial_moment(&c21, [b1, b2]);
            beta_moments.insert([b1, b2], [m12, m21]);
        }
    }
    Ok(ITensor {
        p,
        grid,
        comp12: c12,
        comp21: c21,
        beta_moments,
    })
}

/// The set of tensors available to the renormalized moments, keyed by p.
#[derive(Debug, Default)]
pub struct ITensorSet {
    pub tensors: BTreeMap<u32, ITensor>,
}

impl ITensorSet {
    pub fn moment(&self, p: u32, h: usize, k: usize, beta: [u32; 2]) -> f64 {
        self.tensors
            .get(&p)
            .map(|t| t.moment(h, k, beta))
            .unwrap_or(0.0)
    }

    pub fn get(&self, p: u32) -> Result<&ITensor, MomentError> {
        self.tensors.get(&p).ok_or(MomentError::MissingTensor(p))
    }
}

/// Integration horizon for space-time moments.
#[derive(Debug, Clone, Copy)]
pub enum Horizon {
    /// tail-extrapolated integral over (0, infinity)
    Infinite,
    /// finite integral over (0, t]
    UpTo(f64),
}

/// n/2 + p/2 - |beta|/2, the decay exponent of the beta-moment of I_{n+p}.
fn i_moment_exponent(p: u32, beta: [u32; 2]) -> f64 {
    1.0 + p as f64 / 2.0 - (beta[0] + beta[1]) as f64 / 2.0
}

/// Space-time moment of one integrand tag, integral over s of
/// (-s)^l * [beta-moment of the integrand at time s].
///
/// Returns (value, tail_fraction). The snapshot grid carries the finite part
/// via composite Simpson; an infinite horizon adds a fitted power-law tail.
pub fn spacetime_moment(
    flux: &FluxSeries,
    itensors: &ITensorSet,
    key: &MomentKey,
    horizon: Horizon,
) -> Result<(f64, f64), MomentError> {
    let times = &flux.times;
    assert!(times.len() >= 3 && times[0] == 0.0);
    let l = key.l;
    let beta = key.beta;

    // raw moment series of the pair product, and the analytic subtractions
    let (h, j, subtract_ps, shifted_p): (usize, usize, Vec<u32>, Option<u32>) = match &key.tag {
        IntegrandTag::OmegaU { h, j } => (*h as usize, *j as usize, vec![], None),
        IntegrandTag::OmegaUMinusI { h, j, m } => {
            let ps: Vec<u32> = (3..=(*m as u32 + 1)).collect();
            (*h as usize, *j as usize, ps, Some(*m as u32 + 2))
        }
        _ => panic!("spacetime_moment expects an omega-u tag"),
    };
    let raw = flux.pair_series(h, j, beta);

    // combined integrand (-s)^l m_c(s) at the snapshot nodes s >= s1
    let m_combined = |i: usize| -> f64 {
        let s = times[i];
        let mut v = raw[i];
        for &p in &subtract_ps {
            v -= itensors.moment(p, h, j, beta) * s.powf(-i_moment_exponent(p, beta));
        }
        if let Some(p) = shifted_p {
            v -= itensors.moment(p, h, j, beta) * (1.0 + s).powf(-i_moment_exponent(p, beta));
        }
        v
    };
    let weight = |s: f64, m: f64| (-s).powi(l as i32) * m;

    let horizon_t = match horizon {
        Horizon::UpTo(t) => t,
        Horizon::Infinite => times[times.len() - 1],
    };
    let t_last = times[times.len() - 1];
    let s1 = times[1];
    let mut value = 0.0;

    // [0, s1]: quadratic interpolant for the raw part, closed forms for the
    // singular subtractions, adaptive quadrature for the shifted tensor
    let a_end = horizon_t.min(s1);
    if a_end > 0.0 {
        let raw_nodes = [
            (times[0], weight(times[0], raw[0])),
            (times[1], weight(times[1], raw[1])),
            (times[2], weight(times[2], raw[2])),
        ];
        value += quadratic_integral(raw_nodes, 0.0, a_end);
        let sign_l = if l % 2 == 0 { 1.0 } else { -1.0 };
        for &p in &subtract_ps {
            let im = itensors.moment(p, h, j, beta);
            if im == 0.0 {
                continue;
            }
            let expo = l as f64 - i_moment_exponent(p, beta);
            // integrable by construction of the renormalization orders
            assert!(expo > -1.0, "non-integrable subtraction at s = 0");
            let integral = a_end.powf(expo + 1.0) / (expo + 1.0);
            value -= sign_l * im * integral;
        }
        if let Some(p) = shifted_p {
            let im = itensors.moment(p, h, j, beta);
            if im != 0.0 {
                let e = -i_moment_exponent(p, beta);
                let integral = crate::quad::adaptive_simpson(
                    |s| s.powi(l as i32) * (1.0 + s).powf(e),
                    0.0,
                    a_end,
                    1e-11,
                );
                value -= sign_l * im * integral;
            }
        }
    }

    // [s1, horizon]: composite Simpson on the snapshot nodes
    if horizon_t > s1 {
        let xs: Vec<f64> = times[1..].to_vec();
        let ys: Vec<f64> = (1..times.len())
            .map(|i| weight(times[i], m_combined(i)))
            .collect();
        if horizon_t >= t_last {
            value += simpson_nonuniform(&xs, &ys);
        } else {
            value += SeriesIntegral::new(&xs, &ys).integrate_to(horizon_t);
        }
    }

    // tail beyond the last snapshot for the infinite horizon
    let mut tail_fraction = 0.0;
    if matches!(horizon, Horizon::Infinite) {
        let window_start = t_last / 10.0;
        let idx0 = times.iter().position(|&s| s >= window_start).unwrap();
        let window: Vec<(f64, f64)> = (idx0..times.len())
            .map(|i| (times[i], m_combined(i)))
            .collect();
        let scale = window.iter().map(|(_, v)| v.abs()).fold(0.0, f64::max);
        // structurally-zero series are grid noise; fitting a power law to
        // noise would report a spurious divergence. Gauge significance
        // against the largest possible moment of the bilinear term.
        let babs = (beta[0] + beta[1]) as i32;
        let sig = flux
            .scale_l1
            .iter()
            .fold(0.0f64, |m, v| m.max(*v))
            * flux.half_box.powi(babs);
        if scale > 0.0 && scale > 1e-6 * sig && window.len() >= 4 {
            let xs: Vec<f64> = window.iter().map(|(s, _)| s.ln()).collect();
            let ys: Vec<f64> = window
                .iter()
                .map(|(_, v)| v.abs().max(1e-300).ln())
                .collect();
            let (slope, intercept, _) = linear_fit(&xs, &ys);
            let sigma = -slope;
            let mean: f64 = window.iter().map(|(_, v)| *v).sum::<f64>();
            let sign = if mean >= 0.0 { 1.0 } else { -1.0 };
            // ignore tails at rounding level relative to the value
            if scale * t_last > 1e-13 * value.abs().max(1e-300) {
                if sigma <= l as f64 + 1.0 {
                    return Err(MomentError::TailDivergent {
                        sigma,
                        limit: l as f64 + 1.0,
                    });
                }
                let c = intercept.exp();
                let sign_l = if l % 2 == 0 { 1.0 } else { -1.0 };
                let tail =
                    sign_l * sign * c * t_last.powf(l as f64 + 1.0 - sigma) / (sigma - l as f64 - 1.0);
                value += tail;
                tail_fraction = tail.abs() / value.abs().max(1e-300);
            }
        }
    }

    Ok((value, tail_fraction))
}

/// Highest beta order kept in the flux series and the table.
pub const MAX_FLUX_BETA: u32 = 4;
/// Gate on the spatial truncation share of a table entry.
pub const SPATIAL_GATE: f64 = 0.05;

/// First half of the ledger: w0 moments and raw space-time moments. These
/// feed the low-order profiles from which the tensors are built.
pub fn build_base_table(
    traj: &Trajectory,
    flux: &FluxSeries,
    source: &str,
) -> Result<MomentTable, MomentError> {
    let mut table = MomentTable {
        entries: BTreeMap::new(),
        source: source.to_string(),
    };
    let itensors = ITensorSet::default();
    let w0 = &traj.snapshots[0].omega;
    for a1 in 0..=5u32 {
        for a2 in 0..=(5 - a1) {
            let (value, trunc) = spatial_moment(w0, [a1, a2]);
            table.entries.insert(
                MomentKey {
                    l: 0,
                    beta: [a1, a2],
                    tag: IntegrandTag::Omega0,
                },
                MomentEntry {
                    value,
                    tail_fraction: 0.0,
                    trunc_err: trunc,
                },
            );
        }
    }

    let pairs = [(1u8, 2u8), (2, 1)];
    // raw moments up to order 2: coefficients of U_m, U^T_m, Omega_m, m <= 2
    for (l, b1, b2) in lbeta_upto(2) {
        for (h, j) in pairs {
            let key = MomentKey {
                l,
                beta: [b1, b2],
                tag: IntegrandTag::OmegaU { h, j },
            };
            let (value, tail_fraction) =
                spacetime_moment(flux, &itensors, &key, Horizon::Infinite)?;
            let trunc = max_trunc(flux, [b1, b2], h as usize);
            table.entries.insert(
                key,
                MomentEntry {
                    value,
                    tail_fraction,
                    trunc_err: trunc,
                },
            );
        }
    }
    Ok(table)
}

/// Second half: renormalized moments and tensor moments, once the tensors
/// exist. The dependency is acyclic because the tensors only consume the
/// base-table profiles.
pub fn extend_moment_table(
    table: &mut MomentTable,
    flux: &FluxSeries,
    itensors: &ITensorSet,
) -> Result<(), MomentError> {
    let pairs = [(1u8, 2u8), (2, 1)];
    // renormalized moments at order n+m for m = 1, 2
    for m in 1..=2u8 {
        for (l, b1, b2) in lbeta_exact(2 + m as u32) {
            for (h, j) in pairs {
                let key = MomentKey {
                    l,
                    beta: [b1, b2],
                    tag: IntegrandTag::OmegaUMinusI { h, j, m },
                };
                let (value, tail_fraction) =
                    spacetime_moment(flux, itensors, &key, Horizon::Infinite)?;
                let trunc = max_trunc(flux, [b1, b2], h as usize);
                table.entries.insert(
                    key,
                    MomentEntry {
                        value,
                        tail_fraction,
                        trunc_err: trunc,
                    },
                );
            }
        }
    }

    // tensor moments at t = 1
    for (&p, tensor) in &itensors.tensors {
        for b1 in 0..=MAX_FLUX_BETA {
            for b2 in 0..=(MAX_FLUX_BETA - b1) {
                for (h, k) in pairs {
                    let value = tensor.moment(h as usize, k as usize, [b1, b2]);
                    table.entries.insert(
                        MomentKey {
                            l: 0,
                            beta: [b1, b2],
                            tag: IntegrandTag::IAtOne {
                                h,
                                k,
                                p: p as u8,
                            },
                        },
                        MomentEntry {
                            value,
                            tail_fraction: 0.0,
                            trunc_err: 0.0,
                        },
                    );
                }
            }
        }
    }
    Ok(())
}

fn max_trunc(flux: &FluxSeries, beta: [u32; 2], h: usize) -> f64 {
    flux.trunc[&beta][h - 1]
        .iter()
        .fold(0.0f64, |m, v| m.max(*v))
}

/// all (l, beta) with 2l + |beta| <= order
pub fn lbeta_upto(order: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for total in 0..=order {
        out.extend(lbeta_exact(total));
    }
    out
}

/// all (l, beta) with 2l + |beta| = order
pub fn lbeta_exact(order: u32) -> Vec<(u32, u32, u32)> {
    let mut out = Vec::new();
    for l in 0..=(order / 2) {
        let rem = order - 2 * l;
        for b1 in 0..=rem {
            out.push((l, b1, rem - b1));
        }
    }
    out
}

/// all alpha with |alpha| = order (2D)
pub fn alpha_exact(order: u32) -> Vec<[u32; 2]> {
    (0..=order).map(|a| [order - a, a]).collect()
}
