//! Assembly of the asymptotic-expansion profiles.
//!
//! Every named profile is a finite combination of composite heat kernels
//! weighted by moment coefficients, except J which needs a space-time
//! quadrature against the renormalization tensor.
//!
//! 2D index conventions as in the moments module: w_hk = eps_hk w, so the
//! initial-vorticity moments of w_0kj are eps_kj times the scalar moments,
//! and sums over the tensor index collapse to the single off-diagonal term.

use rustfft::num_complex::Complex64;
use thiserror::Error;

use crate::fft::forward;
use crate::field::{FieldError, PhysicalField};
use crate::grid::Grid;
use crate::kernel::{
    check_resolution, scalar_time_weight, KernelError, KernelShape, KernelSum, TimeWeightMode,
};
use crate::moments::{
    alpha_exact, eps, lbeta_exact, spacetime_moment, FluxSeries, Horizon, ITensorSet,
    IntegrandTag, MomentError, MomentKey, MomentTable,
};
use crate::quad::{geometric_panels, gl8_on};
use crate::spectral::SpectralError;

const DIM: u32 = 2;

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("profile order {order} unsupported for kind {kind:?}")]
    Order { kind: TermKind, order: u32 },
    #[error("missing moments: {0:?}")]
    MissingMoments(Vec<String>),
    #[error("finite-horizon coefficients need the flux series of the run")]
    MissingFlux,
    #[error("J quadrature did not converge: panel doubling changed the field by {ratio:.3e}")]
    QuadratureNonConvergence { ratio: f64 },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize)]
pub enum TermKind {
    Omega,
    U,
    UT,
    US,
    K,
    V,
    VT,
    Vtilde,
    VtildeT,
    J,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Component {
    /// velocity component j (1-based)
    Vel(u8),
    /// vorticity tensor entry (h, k)
    Vort(u8, u8),
}

/// One assembled profile field with its coefficient provenance.
#[derive(Debug)]
pub struct Profile {
    pub kind: TermKind,
    pub order: u32,
    pub component: Component,
    pub t: f64,
    pub field: PhysicalField,
    pub provenance: Vec<(String, f64)>,
}

/// Everything the assemblers read.
pub struct ProfileContext<'a> {
    pub grid: Grid,
    pub table: &'a MomentTable,
    pub itensors: &'a ITensorSet,
    pub flux: Option<&'a FluxSeries>,
}

impl<'a> ProfileContext<'a> {
    fn omega0_moment(&self, alpha: [u32; 2], missing: &mut Vec<String>) -> f64 {
        let key = MomentKey {
            l: 0,
            beta: alpha,
            tag: IntegrandTag::Omega0,
        };
        match self.table.get(&key) {
            Some(e) => e.value,
            None => {
                missing.push(format!("{key:?}"));
                0.0
            }
        }
    }

    /// sum over h of the (w_hc u_h) space-time moment, infinite horizon
    fn flux_moment(&self, c: usize, l: u32, beta: [u32; 2], missing: &mut Vec<String>) -> f64 {
        let mut total = 0.0;
        for h in 1..=2u8 {
            if eps(h as usize, c) == 0.0 {
                continue;
            }
            let key = MomentKey {
                l,
                beta,
                tag: IntegrandTag::OmegaU { h, j: c as u8 },
            };
            match self.table.get(&key) {
                Some(e) => total += e.value,
                None => missing.push(format!("{key:?}")),
            }
        }
        total
    }

    /// renormalized variant at order n+m
    fn renorm_moment(
        &self,
        c: usize,
        l: u32,
        beta: [u32; 2],
        m: u32,
        missing: &mut Vec<String>,
    ) -> f64 {
        let mut total = 0.0;
        for h in 1..=2u8 {
            if eps(h as usize, c) == 0.0 {
                continue;
            }
            let key = MomentKey {
                l,
                beta,
                tag: IntegrandTag::OmegaUMinusI {
                    h,
                    j: c as u8,
                    m: m as u8,
                },
            };
            match self.table.get(&key) {
                Some(e) => total += e.value,
                None => missing.push(format!("{key:?}")),
            }
        }
        total
    }

    /// finite-horizon coefficient, recomputed from the flux series
    fn finite_flux_moment(
        &self,
        c: usize,
        l: u32,
        beta: [u32; 2],
        renorm_m: Option<u32>,
        t: f64,
    ) -> Result<f64, ProfileError> {
        let flux = self.flux.ok_or(ProfileError::MissingFlux)?;
        let mut total = 0.0;
        for h in 1..=2u8 {
            if eps(h as usize, c) == 0.0 {
                continue;
            }
            let tag = match renorm_m {
                None => IntegrandTag::OmegaU { h, j: c as u8 },
                Some(m) => IntegrandTag::OmegaUMinusI {
                    h,
                    j: c as u8,
                    m: m as u8,
                },
            };
            let key = MomentKey { l, beta, tag };
            let (v, _) = spacetime_moment(flux, self.itensors, &key, Horizon::UpTo(t))?;
            total += v;
        }
        Ok(total)
    }
}

fn fact(k: u32) -> f64 {
    (1..=k).map(|v| v as f64).product::<f64>().max(1.0)
}

fn lbeta_fact(l: u32, beta: [u32; 2]) -> f64 {
    fact(l) * fact(beta[0]) * fact(beta[1])
}

fn sign_l(l: u32) -> f64 {
    if l % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

fn grad3(beta: [u32; 2]) -> [u32; 3] {
    [beta[0], beta[1], 0]
}

fn grad3_plus(beta: [u32; 2], axis: usize) -> [u32; 3] {
    let mut g = grad3(beta);
    g[axis] += 1;
    g
}

/// Kernel combination plus provenance; the symbolic form of a profile.
pub struct ProfileSum {
    pub sum: KernelSum,
    pub provenance: Vec<(String, f64)>,
}

/// Scalar vorticity profile Omega_{12;m} as a kernel sum, 2 <= m <= n+1.
pub fn omega_sum(ctx: &ProfileContext, m: u32) -> Result<ProfileSum, ProfileError> {
    if !(2..=DIM + 1).contains(&m) {
        return Err(ProfileError::Order {
            kind: TermKind::Omega,
            order: m,
        });
    }
    let mut missing = Vec::new();
    let mut sum = KernelSum::new();
    let mut prov = Vec::new();
    for alpha in alpha_exact(m) {
        let c = ctx.omega0_moment(alpha, &mut missing);
        prov.push((format!("omega0 alpha={alpha:?}"), c));
        sum.push(
            KernelShape {
                dt_order: 0,
                grad: grad3(alpha),
                riesz: vec![],
                inv_sqrt_pow: 0,
            },
            c / (fact(alpha[0]) * fact(alpha[1])),
        );
    }
    for (l, b1, b2) in lbeta_exact(m - 1) {
        let beta = [b1, b2];
        // + dt^l grad^beta d_k G with the h = 1 flux, k = 2
        let f1 = ctx.flux_moment(1, l, beta, &mut missing);
        prov.push((format!("flux c=1 l={l} beta={beta:?}"), f1));
        sum.push(
            KernelShape {
                dt_order: l,
                grad: grad3_plus(beta, 1),
                riesz: vec![],
                inv_sqrt_pow: 0,
            },
            f1 / lbeta_fact(l, beta),
        );
        // - dt^l grad^beta d_h G with the k = 2 flux, h = 1
        let f2 = ctx.flux_moment(2, l, beta, &mut missing);
        prov.push((format!("flux c=2 l={l} beta={beta:?}"), f2));
        sum.push(
            KernelShape {
                dt_order: l,
                grad: grad3_plus(beta, 0),
                riesz: vec![],
                inv_sqrt_pow: 0,
            },
            -f2 / lbeta_fact(l, beta),
        );
    }
    if !missing.is_empty() {
        return Err(ProfileError::MissingMoments(missing));
    }
    Ok(ProfileSum {
        sum,
        provenance: prov,
    })
}

/// Horizon selector for the U^S kinds.
enum UsHorizon {
    /// coefficients integrate over (0, t] at the evaluation time
    Live,
    /// coefficients frozen at a fixed horizon (scaling checks)
    Frozen(f64),
}

fn velocity_sum_inner(
    ctx: &ProfileContext,
    kind: TermKind,
    order: u32,
    j: usize,
    us: &UsHorizon,
    t: f64,
) -> Result<ProfileSum, ProfileError> {
    if !(1..=2 * DIM).contains(&order) {
        return Err(ProfileError::Order { kind, order });
    }
    let high = order > DIM; // renormalized orders n+1..2n
    let renorm_m = order.checked_sub(DIM).filter(|m| *m >= 1);
    let mut missing = Vec::new();
    let mut sum = KernelSum::new();
    let mut prov = Vec::new();

    if matches!(kind, TermKind::U) {
        // initial-data kernels grad^alpha R_k Lambda^-1 G, |alpha| = order+1
        let k = 3 - j; // the only tensor partner in 2D
        let sgn = eps(k, j);
        for alpha in alpha_exact(order + 1) {
            let m0 = ctx.omega0_moment(alpha, &mut missing);
            prov.push((format!("omega0 alpha={alpha:?}"), m0));
            sum.push(
                KernelShape {
                    dt_order: 0,
                    grad: grad3(alpha),
                    riesz: vec![(k - 1) as u8],
                    inv_sqrt_pow: 1,
                },
                -sgn * m0 / (fact(alpha[0]) * fact(alpha[1])),
            );
        }
    }

    for (l, b1, b2) in lbeta_exact(order) {
        let beta = [b1, b2];
        match kind {
            TermKind::U => {
                let c = if high {
                    ctx.renorm_moment(j, l, beta, renorm_m.unwrap(), &mut missing)
                } else {
                    ctx.flux_moment(j, l, beta, &mut missing)
                };
                prov.push((format!("duhamel c={j} l={l} beta={beta:?}"), c));
                sum.push(
                    KernelShape {
                        dt_order: l,
                        grad: grad3(beta),
                        riesz: vec![],
                        inv_sqrt_pow: 0,
                    },
                    -c / lbeta_fact(l, beta),
                );
            }
            TermKind::UT | TermKind::US => {
                for k in 1..=2usize {
                    let c = match kind {
                        TermKind::UT => {
                            if high {
                                ctx.renorm_moment(k, l, beta, renorm_m.unwrap(), &mut missing)
                            } else {
                                ctx.flux_moment(k, l, beta, &mut missing)
                            }
                        }
                        TermKind::US => {
                            let horizon = match us {
                                UsHorizon::Live => t,
                                UsHorizon::Frozen(tf) => *tf,
                            };
                            ctx.finite_flux_moment(k, l, beta, renorm_m, horizon)?
                        }
                        _ => unreachable!(),
                    };
                    prov.push((format!("duhamel c={k} l={l} beta={beta:?}"), c));
                    sum.push(
                        KernelShape {
                            dt_order: l,
                            grad: grad3(beta),
                            riesz: vec![(k - 1) as u8, (j - 1) as u8],
                            inv_sqrt_pow: 0,
                        },
                        -c / lbeta_fact(l, beta),
                    );
                }
            }
            _ => unreachable!("velocity kinds only"),
        }
    }
    if !missing.is_empty() {
        return Err(ProfileError::MissingMoments(missing));
    }
    Ok(ProfileSum {
        sum,
        provenance: prov,
    })
}

/// U / U^T kernel sums are time-independent; U^S needs the evaluation time.
pub fn velocity_sum(
    ctx: &ProfileContext,
    kind: TermKind,
    order: u32,
    j: usize,
) -> Result<ProfileSum, ProfileError> {
    assert!(matches!(kind, TermKind::U | TermKind::UT));
    velocity_sum_inner(ctx, kind, order, j, &UsHorizon::Live, 0.0)
}

/// Assemble Omega_m at time t, components (1,2) and (2,1).
pub fn omega_profile(ctx: &ProfileContext, m: u32, t: f64) -> Result<Vec<Profile>, ProfileError> {
    let ps = omega_sum(ctx, m)?;
    check_resolution(ctx.grid, t, m)?;
    let f12 = ps.sum.eval(ctx.grid, t)?;
    let f21 = f12.scaled(-1.0);
    Ok(vec![
        Profile {
            kind: TermKind::Omega,
            order: m,
            component: Component::Vort(1, 2),
            t,
            field: f12,
            provenance: ps.provenance.clone(),
        },
        Profile {
            kind: TermKind::Omega,
            order: m,
            component: Component::Vort(2, 1),
            t,
            field: f21,
            provenance: ps.provenance,
        },
    ])
}

/// Assemble U, U^T or U^S of the given total order (1..=2n) at time t.
/// `us_freeze` pins the U^S coefficient horizon for scaling checks.
pub fn velocity_term(
    ctx: &ProfileContext,
    kind: TermKind,
    order: u32,
    t: f64,
    us_freeze: Option<f64>,
) -> Result<Vec<Profile>, ProfileError> {
    assert!(matches!(kind, TermKind::U | TermKind::UT | TermKind::US));
    check_resolution(ctx.grid, t, order + 1)?;
    let us = match us_freeze {
        Some(tf) => UsHorizon::Frozen(tf),
        None => UsHorizon::Live,
    };
    let mut out = Vec::new();
    for j in 1..=2usize {
        let ps = velocity_sum_inner(ctx, kind, order, j, &us, t)?;
        let field = ps.sum.eval(ctx.grid, t)?;
        out.push(Profile {
            kind,
            order,
            component: Component::Vel(j as u8),
            t,
            field,
            provenance: ps.provenance,
        });
    }
    Ok(out)
}

/// Assemble K, V, V^T, Vtilde or Vtilde^T for correction index m (order n+m).
pub fn correction_term(
    ctx: &ProfileContext,
    kind: TermKind,
    m: u32,
    t: f64,
) -> Result<Vec<Profile>, ProfileError> {
    if !(1..=DIM).contains(&m) {
        return Err(ProfileError::Order { kind, order: m });
    }
    let order = DIM + m;
    check_resolution(ctx.grid, t, order)?;
    let nm = (DIM + m) as f64;
    let mut out = Vec::new();
    for j in 1..=2usize {
        let mut sum = KernelSum::new();
        let mut prov = Vec::new();
        match kind {
            TermKind::K => {
                for (l, b1, b2) in lbeta_exact(order) {
                    let beta = [b1, b2];
                    let a = -(nm + 2.0 - (b1 + b2) as f64) / 2.0;
                    let w = scalar_time_weight(l, a, TimeWeightMode::Finite(t))?;
                    for k in 1..=2usize {
                        let im = ctx.itensors.moment(m + 2, 3 - k, k, beta);
                        prov.push((format!("I(1) p={} c={k} beta={beta:?}", m + 2), im));
                        sum.push(
                            KernelShape {
                                dt_order: l,
                                grad: grad3(beta),
                                riesz: vec![(k - 1) as u8, (j - 1) as u8],
                                inv_sqrt_pow: 0,
                            },
                            -w * sign_l(l) * im / lbeta_fact(l, beta),
                        );
                    }
                    let imj = ctx.itensors.moment(m + 2, 3 - j, j, beta);
                    sum.push(
                        KernelShape {
                            dt_order: l,
                            grad: grad3(beta),
                            riesz: vec![],
                            inv_sqrt_pow: 0,
                        },
                        -w * sign_l(l) * imj / lbeta_fact(l, beta),
                    );
                }
            }
            TermKind::V | TermKind::VT => {
                for total in 1..=(order - 1) {
                    for (l, b1, b2) in lbeta_exact(total) {
                        let beta = [b1, b2];
                        let denom = nm - (2 * l + b1 + b2) as f64;
                        assert!(denom > 0.0, "V sum ranges below n+m by construction");
                        let t_pow = -nm / 2.0 + l as f64 + (b1 + b2) as f64 / 2.0;
                        let pref = 2.0 / denom;
                        match kind {
                            TermKind::V => {
                                let im = ctx.itensors.moment(m + 2, 3 - j, j, beta);
                                prov.push((
                                    format!("I(1) p={} c={j} beta={beta:?}", m + 2),
                                    im,
                                ));
                                sum.push_scaled(
                                    KernelShape {
                                        dt_order: l,
                                        grad: grad3(beta),
                                        riesz: vec![],
                                        inv_sqrt_pow: 0,
                                    },
                                    pref * sign_l(l) * im / lbeta_fact(l, beta),
                                    t_pow,
                                );
                            }
                            TermKind::VT => {
                                for k in 1..=2usize {
                                    let im = ctx.itensors.moment(m + 2, 3 - k, k, beta);
                                    prov.push((
                                        format!("I(1) p={} c={k} beta={beta:?}", m + 2),
                                        im,
                                    ));
                                    sum.push_scaled(
                                        KernelShape {
                                            dt_order: l,
                                            grad: grad3(beta),
                                            riesz: vec![(k - 1) as u8, (j - 1) as u8],
                                            inv_sqrt_pow: 0,
                                        },
                                        pref * sign_l(l) * im / lbeta_fact(l, beta),
                                        t_pow,
                                    );
                                }
                            }
                            _ => unreachable!(),
                        }
                    }
                }
            }
            TermKind::Vtilde | TermKind::VtildeT => {
                // built from I_{n+m}, identically zero for m <= 2 (so for all
                // of n = 2); the generic form keeps the tail weights honest
                if m >= 3 {
                    for (l, b1, b2) in lbeta_exact(order - 2) {
                        let beta = [b1, b2];
                        let a = -(nm - (b1 + b2) as f64) / 2.0;
                        let w = scalar_time_weight(l, a, TimeWeightMode::Tail(t))?;
                        match kind {
                            TermKind::Vtilde => {
                                let im = ctx.itensors.moment(m, 3 - j, j, beta);
                                sum.push(
                                    KernelShape {
                                        dt_order: l,
                                        grad: grad3(beta),
                                        riesz: vec![],
                                        inv_sqrt_pow: 0,
                                    },
                                    -w * sign_l(l) * im / lbeta_fact(l, beta),
                                );
                            }
                            TermKind::VtildeT => {
                                for k in 1..=2usize {
                                    let im = ctx.itensors.moment(m, 3 - k, k, beta);
                                    sum.push(
                                        KernelShape {
                                            dt_order: l,
                                            grad: grad3(beta),
                                            riesz: vec![(k - 1) as u8, (j - 1) as u8],
                                            inv_sqrt_pow: 0,
                                        },
                                        -w * sign_l(l) * im / lbeta_fact(l, beta),
                                    );
                                }
                            }
                            _ => unreachable!(),
                        }
                    }
                }
            }
            _ => panic!("correction kinds only"),
        }
        let field = if sum.is_empty() {
            PhysicalField::zeros(ctx.grid, t)
        } else {
            sum.eval(ctx.grid, t)?
        };
        out.push(Profile {
            kind,
            order,
            component: Component::Vel(j as u8),
            t,
            field,
            provenance: prov,
        });
    }
    Ok(out)
}

/// Quadrature parameters for the J profile.
#[derive(Debug, Clone, Copy)]
pub struct JQuadConfig {
    /// geometric panels per region, default 16
    pub panels: usize,
    /// extra Taylor orders carried by the analytic small-s branch
    pub taylor_extra: u32,
    /// verify that doubling the panels moves the field by < 1e-4
    pub check_convergence: bool,
}

impl Default for JQuadConfig {
    fn default() -> Self {
        Self {
            panels: 16,
            taylor_extra: 5,
            check_convergence: true,
        }
    }
}

/// The two kernel families of J: R_k R_j G against sum_h I_{hk}, and plain G
/// against sum_h I_{hj}.
fn j_eval_once(
    ctx: &ProfileContext,
    m: u32,
    t: f64,
    panels: usize,
    taylor_extra: u32,
) -> Result<[PhysicalField; 2], ProfileError> {
    let grid = ctx.grid;
    let npts = grid.points();
    let len = grid.len();
    let order = DIM + m; // Taylor subtraction order n+m
    let p_tensor = m + 2; // I_{n+m+2}


    // factor kernel sums of I(s): Omega_{p-i} and W_{c;i} = U + U^T
    let mut omega_prefs = Vec::new(); // order 2..=m+1
    for ord in 2..=(m + 1) {
        let ps = omega_sum(ctx, ord)?;
        omega_prefs.push(prefactor(&ps.sum, grid));
    }
    let mut w_prefs: Vec<[Vec<Complex64>; 2]> = Vec::new(); // i = 1..=m
    for i in 1..=m {
        let mut pair = Vec::new();
        for j in 1..=2usize {
            let u = velocity_sum(ctx, TermKind::U, i, j)?;
            let ut = velocity_sum(ctx, TermKind::UT, i, j)?;
            let mut acc = prefactor(&u.sum, grid);
            let other = prefactor(&ut.sum, grid);
            for (a, b) in acc.iter_mut().zip(&other) {
                *a += b;
            }
            pair.push(acc);
        }
        w_prefs.push([pair.remove(0), pair.remove(0)]);
    }

    // Riesz pair symbols rho_kj = -xi_k xi_j / |xi|^2 and frequency tables
    let freqs = grid.freqs();
    let xi_of = |idx: usize| [freqs[idx / npts], freqs[idx % npts]];
    let rho = |k: usize, j: usize, idx: usize| -> f64 {
        let xi = xi_of(idx);
        let q = xi[0] * xi[0] + xi[1] * xi[1];
        if q == 0.0 {
            0.0
        } else {
            -xi[k - 1] * xi[j - 1] / q
        }
    };

    // analytic branch point: scale-covariant t/16 unless the grid needs more
    let s_lo = (t / 16.0).max(2.25 * grid.dx() * grid.dx() * 1.01);
    check_resolution(grid, s_lo, order + 1)?;

    let mut panels_all = geometric_panels(s_lo, t / 2.0, panels, true);
    panels_all.extend(geometric_panels(t / 2.0, t, panels, false));

    let mut conv_acc = [
        vec![Complex64::default(); len],
        vec![Complex64::default(); len],
    ];
    let mut heat_s = vec![0.0f64; len];
    let mut heat_ts = vec![0.0f64; len];
    // numerically integrated (-s)^l beta-moments of T_k(s); keeping these
    // consistent with the grid products (rather than assuming the continuum
    // power law) makes the conv/Taylor cancellation exact on the grid
    let mut st_num: std::collections::BTreeMap<(u32, [u32; 2], usize), f64> =
        std::collections::BTreeMap::new();
    for total in 0..=order {
        for (l, b1, b2) in lbeta_exact(total) {
            for k in 1..=2usize {
                st_num.insert((l, [b1, b2], k), 0.0);
            }
        }
    }

    for (a, b) in panels_all {
        for (s, wgt) in gl8_on(a, b) {
            // exp tables for this node
            for idx in 0..len {
                let xi = xi_of(idx);
                let q = xi[0] * xi[0] + xi[1] * xi[1];
                heat_s[idx] = (-s * q).exp();
                heat_ts[idx] = (-(t - s) * q).exp();
            }
            // factor fields at time s
            let omega_fields: Vec<PhysicalField> = omega_prefs
                .iter()
                .map(|pref| inverse_of(pref, &heat_s, grid, s))
                .collect::<Result<_, _>>()?;
            let mut w_fields: Vec<[PhysicalField; 2]> = Vec::new();
            for pair in &w_prefs {
                w_fields.push([
                    inverse_of(&pair[0], &heat_s, grid, s)?,
                    inverse_of(&pair[1], &heat_s, grid, s)?,
                ]);
            }
            // I components at s: I_12 = sum_i Omega_{p-i} W_{1;i},
            // I_21 = -sum_i Omega_{p-i} W_{2;i}
            let mut i12 = PhysicalField::zeros(grid, s);
            let mut i21 = PhysicalField::zeros(grid, s);
            for i in 1..=m as usize {
                let omg = &omega_fields[(p_tensor as usize - i) - 2];
                i12 = i12.axpby(1.0, &omg.pointwise_mul(&w_fields[i - 1][0])?, 1.0)?;
                i21 = i21.axpby(1.0, &omg.pointwise_mul(&w_fields[i - 1][1])?, -1.0)?;
            }
            // T_k = sum_h I_hk: T_1 = I_21, T_2 = I_12
            let t_fields = [&i21, &i12];
            for ((l, beta, k), acc) in st_num.iter_mut() {
                let (mv, _) = crate::moments::spatial_moment(t_fields[*k - 1], *beta);
                *acc += wgt * (-s).powi(*l as i32) * mv;
            }
            let t1_hat = forward(&i21);
            let t2_hat = forward(&i12);
            for j in 1..=2usize {
                let acc = &mut conv_acc[j - 1];
                for idx in 0..len {
                    let conv = (rho(1, j, idx) * t1_hat.data()[idx]
                        + rho(2, j, idx) * t2_hat.data()[idx]
                        + if j == 1 {
                            t1_hat.data()[idx]
                        } else {
                            t2_hat.data()[idx]
                        })
                        * heat_ts[idx];
                    acc[idx] += conv * wgt;
                }
            }
        }
    }

    // Taylor part: kernels at (t, x) times integrated tensor moments;
    // subtracted orders over [s_lo, t], analytic extension over (0, s_lo].
    let mut out = Vec::new();
    for j in 1..=2usize {
        let mut taylor = KernelSum::new();
        for total in 0..=(order + taylor_extra) {
            for (l, b1, b2) in lbeta_exact(total) {
                let beta = [b1, b2];
                let subtracted = total <= order;
                for k in 1..=2usize {
                    // subtracted orders use the numerically integrated grid
                    // moments; the analytic extension below s_lo replaces the
                    // (conv - taylor) bracket and enters with opposite sign
                    let coeff = if subtracted {
                        st_num[&(l, beta, k)] / lbeta_fact(l, beta)
                    } else {
                        let e = l as f64 + ((b1 + b2) as f64 - (DIM + m) as f64 - 2.0) / 2.0;
                        let s_int = s_lo.powf(e + 1.0) / (e + 1.0);
                        let im = ctx.itensors.get(p_tensor)?.moment_sum_h(k, beta);
                        -sign_l(l) * im * s_int / lbeta_fact(l, beta)
                    };
                    if coeff != 0.0 {
                        taylor.push(
                            KernelShape {
                                dt_order: l,
                                grad: grad3(beta),
                                riesz: vec![(k - 1) as u8, (j - 1) as u8],
                                inv_sqrt_pow: 0,
                            },
                            coeff,
                        );
                        if k == j {
                            // plain-G family shares the T_j moments
                            taylor.push(
                                KernelShape {
                                    dt_order: l,
                                    grad: grad3(beta),
                                    riesz: vec![],
                                    inv_sqrt_pow: 0,
                                },
                                coeff,
                            );
                        }
                    }
                }
            }
        }
        // J = -(conv - taylor_subtracted) - small_s_extension; the taylor sum
        // above already carries the sign split per order
        let conv_field = crate::fft::inverse_real_unchecked(
            &crate::field::SpectralField::new(grid, conv_acc[j - 1].clone(), t)?,
        )?;
        let taylor_field = if taylor.is_empty() {
            PhysicalField::zeros(grid, t)
        } else {
            taylor.eval(grid, t)?
        };
        // note: the 1/L^n normalization is built into kernel evaluation but
        // not into the raw convolution accumulator
        let mut field = conv_field.scaled(-1.0).axpby(1.0, &taylor_field, 1.0)?;
        field = field.with_time_tag(t);
        out.push(field);
    }
    Ok([out.remove(0), out.remove(0)])
}

fn prefactor(sum: &KernelSum, grid: Grid) -> Vec<Complex64> {
    // symbol at t = 0 equals the heat-free prefactor
    let mut acc = vec![Complex64::default(); grid.len()];
    sum.accumulate_symbol(grid, 0.0, 1.0, &mut acc);
    acc
}

fn inverse_of(
    pref: &[Complex64],
    heat: &[f64],
    grid: Grid,
    s: f64,
) -> Result<PhysicalField, FieldError> {
    let data: Vec<Complex64> = pref
        .iter()
        .zip(heat)
        .map(|(p, h)| p * *h)
        .collect();
    crate::fft::inverse_real_unchecked(&crate::field::SpectralField::new(grid, data, s)?)
}

/// Assemble J_{n+m} at time t with its quadrature convergence check.
/// Returns the profiles and the observed panel-doubling ratio.
pub fn j_profile(
    ctx: &ProfileContext,
    m: u32,
    t: f64,
    quad: &JQuadConfig,
) -> Result<(Vec<Profile>, f64), ProfileError> {
    if !(1..=DIM).contains(&m) {
        return Err(ProfileError::Order {
            kind: TermKind::J,
            order: m,
        });
    }
    let coarse = j_eval_once(ctx, m, t, quad.panels, quad.taylor_extra)?;
    let (fields, ratio) = if quad.check_convergence {
        let fine = j_eval_once(ctx, m, t, quad.panels * 2, quad.taylor_extra)?;
        let scale = fine[0].max_abs().max(fine[1].max_abs());
        let mut diff = 0.0f64;
        for c in 0..2 {
            diff = coarse[c]
                .data()
                .iter()
                .zip(fine[c].data())
                .map(|(a, b)| (a - b).abs())
                .fold(diff, f64::max);
        }
        let ratio = if scale == 0.0 { 0.0 } else { diff / scale };
        if ratio > 1e-4 {
            return Err(ProfileError::QuadratureNonConvergence { ratio });
        }
        (fine, ratio)
    } else {
        (coarse, 0.0)
    };
    let provenance = vec![(format!("I tensor p={}", m + 2), 0.0)];
    let [f1, f2] = fields;
    Ok((
        vec![
            Profile {
                kind: TermKind::J,
                order: DIM + m,
                component: Component::Vel(1),
                t,
                field: f1,
                provenance: provenance.clone(),
            },
            Profile {
                kind: TermKind::J,
                order: DIM + m,
                component: Component::Vel(2),
                t,
                field: f2,
                provenance,
            },
        ],
        ratio,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{weighted_norm, NormSpec, Q};
    use crate::synthetic::{synthetic_context, synthetic_table};

    fn test_grid() -> Grid {
        Grid::new(2, 128, 40.0).unwrap()
    }

    #[test]
    fn zero_moment_table_gives_zero_profiles() {
        let mut table = synthetic_table(3);
        for e in table.entries.values_mut() {
            e.value = 0.0;
        }
        let set = ITensorSet::default();
        let ctx = ProfileContext {
            grid: test_grid(),
            table: &table,
            itensors: &set,
            flux: None,
        };
        for kind in [TermKind::U, TermKind::UT] {
            for order in 1..=4u32 {
                let p = velocity_term(&ctx, kind, order, 1.0, None).unwrap();
                assert_eq!(p[0].field.max_abs(), 0.0);
                assert_eq!(p[1].field.max_abs(), 0.0);
            }
        }
        let p = omega_profile(&ctx, 2, 1.0).unwrap();
        assert_eq!(p[0].field.max_abs(), 0.0);
        for kind in [TermKind::K, TermKind::V, TermKind::VT] {
            let p = correction_term(&ctx, kind, 1, 1.0).unwrap();
            assert_eq!(p[0].field.max_abs(), 0.0);
        }
    }

    #[test]
    fn vtilde_kinds_vanish_in_two_dimensions() {
        let (table, set) = synthetic_context(test_grid(), 5).unwrap();
        let ctx = ProfileContext {
            grid: test_grid(),
            table: &table,
            itensors: &set,
            flux: None,
        };
        for kind in [TermKind::Vtilde, TermKind::VtildeT] {
            for m in 1..=2u32 {
                let p = correction_term(&ctx, kind, m, 2.0).unwrap();
                assert_eq!(p[0].field.max_abs(), 0.0, "{kind:?} m={m}");
                assert_eq!(p[1].field.max_abs(), 0.0);
            }
        }
    }

    #[test]
    fn missing_moments_reported_by_key() {
        let table = MomentTable::default();
        let set = ITensorSet::default();
        let ctx = ProfileContext {
            grid: test_grid(),
            table: &table,
            itensors: &set,
            flux: None,
        };
        match velocity_term(&ctx, TermKind::U, 1, 1.0, None) {
            Err(ProfileError::MissingMoments(keys)) => assert!(!keys.is_empty()),
            other => panic!("expected MissingMoments, got {other:?}"),
        }
    }

    #[test]
    fn exact_scaling_of_kernel_profiles() {
        // construction-level scaling law on sqrt(t)-matched boxes
        let (table, set) = synthetic_context(test_grid(), 9).unwrap();
        let results = crate::identities::profile_scaling(
            &table,
            &set,
            128,
            40.0,
            crate::identities::IdentityTolerances::default(),
            false,
            &[1.0, 4.0],
        )
        .unwrap();
        for r in &results {
            assert!(
                r.pass,
                "{}: measured {:.3e} tol {:.1e}",
                r.id, r.measured, r.tolerance
            );
        }
    }

    #[test]
    fn j_profile_zero_tensor_is_zero() {
        let mut table = synthetic_table(3);
        for e in table.entries.values_mut() {
            e.value = 0.0;
        }
        let empty = ITensorSet::default();
        let grid = test_grid();
        let (omegas, ws) = {
            let ctx = ProfileContext {
                grid,
                table: &table,
                itensors: &empty,
                flux: None,
            };
            let omegas = vec![
                omega_sum(&ctx, 2).unwrap().sum.eval(grid, 1.0).unwrap(),
                omega_sum(&ctx, 3).unwrap().sum.eval(grid, 1.0).unwrap(),
            ];
            let zero = PhysicalField::zeros(grid, 1.0);
            (omegas, vec![[zero.clone(), zero.clone()], [zero.clone(), zero]])
        };
        let mut set = ITensorSet::default();
        for p in 3..=4u32 {
            set.tensors.insert(
                p,
                crate::moments::build_i_tensor(p, grid, &omegas, &ws, 10).unwrap(),
            );
        }
        let ctx = ProfileContext {
            grid,
            table: &table,
            itensors: &set,
            flux: None,
        };
        let (p, ratio) = j_profile(&ctx, 1, 1.0, &JQuadConfig::default()).unwrap();
        assert_eq!(p[0].field.max_abs(), 0.0);
        assert_eq!(ratio, 0.0);
    }

    #[test]
    fn j_profile_scaling_smoke() {
        // coarse-grid smoke test of the J quadrature scaling; the sharp
        // check runs in the acceptance suite at full resolution
        let mut vals = Vec::new();
        for t in [1.0f64, 4.0] {
            let grid = Grid::new(2, 128, 40.0 * t.sqrt()).unwrap();
            let (table, set) = synthetic_context(grid, 9).unwrap();
            let ctx = ProfileContext {
                grid,
                table: &table,
                itensors: &set,
                flux: None,
            };
            let quad = JQuadConfig {
                panels: 12,
                taylor_extra: 5,
                check_convergence: false,
            };
            let (p, _) = j_profile(&ctx, 1, t, &quad).unwrap();
            let norm = weighted_norm(&p[0].field, NormSpec::plain(Q::Inf));
            vals.push(norm * t.powf(1.0 + 1.5));
        }
        let dev = (vals[1] - vals[0]).abs() / vals[0].abs();
        assert!(dev < 2e-2, "J scaling deviation {dev:.3e}: {vals:?}");
    }
}

#[cfg(test)]
mod j_sharpness {
    use super::*;
    use crate::metrics::{weighted_norm, NormSpec, Q};
    use crate::synthetic::synthetic_context;

    #[test]
    #[ignore = "slow; exercised by the acceptance suite"]
    fn j_profile_scaling_sharp() {
        for q in [Q::One, Q::Inf] {
            for m in 1..=2u32 {
                let mut vals = Vec::new();
                for t in [1.0f64, 4.0, 16.0] {
                    let grid = Grid::new(2, 256, 40.0 * t.sqrt()).unwrap();
                    let (table, set) = synthetic_context(grid, 9).unwrap();
                    let ctx = ProfileContext {
                        grid,
                        table: &table,
                        itensors: &set,
                        flux: None,
                    };
                    let (p, ratio) = j_profile(&ctx, m, t, &JQuadConfig::default()).unwrap();
                    let comp = q.decay_exponent(2) + (2 + m) as f64 / 2.0;
                    let norm = weighted_norm(&p[0].field, NormSpec::plain(q));
                    vals.push(norm * t.powf(comp));
                    eprintln!("m={m} q={:?} t={t}: comp {:.9e} (conv {ratio:.2e})", q, vals.last().unwrap());
                }
                let base = vals[0];
                let dev = vals
                    .iter()
                    .map(|v| (v - base).abs() / base.abs())
                    .fold(0.0, f64::max);
                eprintln!("m={m} q={q:?}: deviation {dev:.3e}");
                assert!(dev < 1e-3, "m={m} q={q:?}: {vals:?}");
            }
        }
    }
}
