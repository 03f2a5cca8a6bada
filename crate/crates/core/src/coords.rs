//! Flat coordinates, the Hamiltonian densities `θ_{u,p}` and their
//! differentials, and residual checks for the three defining conditions of
//! the principal hierarchy.
//!
//! Every density is `θ = (1/2πi)∮_Γ Q(a, â) dz` for an integrand `Q` built
//! from `a`, `â`, `ζ = a − â`, fractional powers and logarithms. Residues at
//! ∞ and φ are turned into Γ-integrals with `Res_∞ = −∮/2πi` and
//! `Res_φ = +∮/2πi`. The differential is `((∂Q/∂a)_{≥−m+1}, (∂Q/∂â)_{≤n})`.
//!
//! Branches: `a^α` is continued from `a^{1/m} ~ z` at infinity and `â^β`
//! from the principal value of `â_{−n}^β` at φ. Logarithms whose argument
//! has winding zero are taken strictly on Γ.

use num_complex::Complex64 as C64;
use num_rational::Rational64;
use std::f64::consts::PI;

use crate::geometry::{c_op, euler, mu_of, nabla_form, r_entry, CoordIndex, RawCombo};
use crate::manifold::{pairing, Covector, ManifoldError, Point, Result};
use crate::series::{
    lagrange_invert, log_on_circle, power_on_circle, rechart_exact, Bound, ChartTag, CircleSamples, InversionKind,
    LogMode, Side, TruncatedSeries,
};

/// Highest density level used by default.
pub const MAX_LEVEL: usize = 3;

/// `θ_{u,p}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct DensityIndex {
    pub u: CoordIndex,
    pub p: usize,
}

impl DensityIndex {
    pub fn new(u: CoordIndex, p: usize) -> Self {
        DensityIndex { u, p }
    }

    fn at(&self, p: usize) -> Self {
        DensityIndex { u: self.u, p }
    }
}

impl std::fmt::Display for DensityIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "theta[{},{}]", self.u, self.p)
    }
}

/// `c_p = Σ_{k=1}^p 1/k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HarmonicConst {
    pub p: usize,
    pub value: Rational64,
}

impl HarmonicConst {
    pub fn new(p: usize) -> Self {
        let value = (1..=p as i64).map(|k| Rational64::new(1, k)).sum();
        HarmonicConst { p, value }
    }

    pub fn to_f64(&self) -> f64 {
        rat(self.value)
    }
}

/// `Γ(1 − i/d) / Γ(2 + p − i/d) = 1 / Π_{j=1}^{p+1} (j − i/d)`.
pub fn gamma_ratio(i: i64, d: i64, p: usize) -> Rational64 {
    let prod: Rational64 = (1..=p as i64 + 1).map(|j| Rational64::from_integer(j) - Rational64::new(i, d)).product();
    prod.recip()
}

/// A small rational as `f64`.
pub fn rat(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|k| k as f64).product()
}

fn c64(x: f64) -> C64 {
    C64::new(x, 0.0)
}

// ---------------------------------------------------------------------------
// Flat coordinates

/// `t_i = (1/2πi)∮_Γ z w^{−i−1} w′ dz` with `w = ζ^{1/s}`.
pub fn flat_t(pt: &Point, i: i64) -> Result<C64> {
    let d = pt.derived();
    let w = power_on_circle(&d.zeta, 1.0 / pt.s as f64, false)?;
    let dw = w.d_dz();
    let integrand = &(&d.z * &w.powi((-i - 1) as i32)) * &dw;
    Ok(integrand.contour_integral())
}

/// `h_1, …, h_{m−1}`: minus the `χ^{−j}` coefficients of the inverse of
/// `χ = ℓ^{1/m}` at infinity. The sign makes `h_j` dual to `∂ℓ/∂h_j = (ℓ′χ^{−j})_+`.
pub fn flat_h(pt: &Point) -> Result<Vec<C64>> {
    if pt.m < 2 {
        return Ok(Vec::new());
    }
    let d = pt.derived();
    let depth = pt.m - 1;
    let chi = d.ell_inf.power(Side::Top, 1.0 / pt.m as f64, d.depth as usize)?;
    let inv = lagrange_invert(&chi, InversionKind::AtInfinity, depth)?;
    Ok((1..pt.m as i64).map(|j| -inv.coeff(-j)).collect())
}

/// `ĥ_0, …, ĥ_n` from the inverse of `χ̂ = ℓ^{1/n}` at φ.
pub fn flat_hhat(pt: &Point) -> Result<Vec<C64>> {
    let d = pt.derived();
    let chi = d.ell_series.power(Side::Bottom, 1.0 / pt.n as f64, d.depth as usize)?;
    let inv = lagrange_invert(&chi, InversionKind::AtPole, pt.n)?;
    Ok((0..=pt.n as i64).map(|k| inv.coeff(-k)).collect())
}

pub fn flat_coordinate(pt: &Point, u: CoordIndex) -> Result<C64> {
    u.check(pt.m, pt.n)?;
    match u {
        CoordIndex::T(i) => flat_t(pt, i),
        CoordIndex::H(j) => Ok(flat_h(pt)?[(j - 1) as usize]),
        CoordIndex::Hhat(k) => Ok(flat_hhat(pt)?[k as usize]),
    }
}

// ---------------------------------------------------------------------------
// Branch-tracked powers and logarithms on Γ

/// `log(a/(z−φ)^m)`, vanishing at infinity.
pub fn log_a_normalized(pt: &Point) -> Result<CircleSamples> {
    let d = pt.derived();
    let g = &d.a / &d.w.powi(pt.m as i32);
    let mut l = log_on_circle(&g, LogMode::Strict)?;
    // the mean over Γ is the value at infinity
    let k = (l.mean().im / (2.0 * PI)).round();
    l = l.map(|v| v - C64::new(0.0, 2.0 * PI * k));
    Ok(l)
}

/// `log(â (z−φ)^n)`, equal to the principal `Log â_{−n}` at φ.
pub fn log_ahat_normalized(pt: &Point) -> Result<CircleSamples> {
    let d = pt.derived();
    let g = &d.ahat * &d.w.powi(pt.n as i32);
    let l = log_on_circle(&g, LogMode::Strict)?;
    let at_phi = (&l / &d.w).contour_integral();
    let target = pt.ahat_coeff(-(pt.n as i64)).ln();
    let k = ((at_phi - target).im / (2.0 * PI)).round();
    Ok(l.map(|v| v - C64::new(0.0, 2.0 * PI * k)))
}

/// `log(ζ^{m/s}/(z−φ)^m)`, strict on Γ, principal at `z = 1`.
pub fn log_zeta_normalized(pt: &Point) -> Result<CircleSamples> {
    let d = pt.derived();
    let zp = power_on_circle(&d.zeta, pt.m as f64 / pt.s as f64, false)?;
    Ok(log_on_circle(&(&zp / &d.w.powi(pt.m as i32)), LogMode::Strict)?)
}

/// `a^α` on Γ for `mα ∈ ℤ`.
pub fn pow_a(pt: &Point, la: &CircleSamples, alpha: f64) -> CircleSamples {
    let e = (alpha * pt.m as f64).round() as i32;
    let w = &pt.derived().w;
    w.zip(la, |wv, l| wv.powi(e) * (l * alpha).exp())
}

/// `â^β` on Γ for `nβ ∈ ℤ`.
pub fn pow_ahat(pt: &Point, lh: &CircleSamples, beta: f64) -> CircleSamples {
    let e = (-beta * pt.n as f64).round() as i32;
    let w = &pt.derived().w;
    w.zip(lh, |wv, l| wv.powi(e) * (l * beta).exp())
}

/// How the logarithms in the `t_{−s}` and `ĥ_n` densities are continued.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LogBranch {
    /// `log(ζ^{m/s}/a)` and `log(ζ^{m/s} â^{m/n})` taken directly, anchored
    /// at the principal value at `z = 1`.
    Direct,
    /// Split through `(z−φ)^m`: the normalized logs of `a` and `â` plus the
    /// strict `log(ζ^{m/s}/(z−φ)^m)`.
    Normalized,
}

/// Samples of `Q`, `∂Q/∂a`, `∂Q/∂â`.
#[derive(Clone, Debug)]
pub struct DensityParts {
    pub q: CircleSamples,
    pub qa: CircleSamples,
    pub qh: CircleSamples,
}

/// The integrand of `θ_{u,p}` and its partial derivatives on Γ.
pub fn density_parts(pt: &Point, di: DensityIndex, branch: LogBranch) -> Result<DensityParts> {
    di.u.check(pt.m, pt.n)?;
    let d = pt.derived();
    let ns = pt.n_samples();
    let (m, n, s) = (pt.m as f64, pt.n as f64, pt.s as f64);
    let p = di.p;
    let cp = HarmonicConst::new(p).to_f64();
    let zero = CircleSamples::zeros(ns);
    let a_pow = |k: usize| d.a.powi(k as i32);
    let h_pow = |k: usize| d.ahat.powi(k as i32);
    // a^{p−1}/(p−1)!, zero when p = 0
    let a_prev = if p == 0 { zero.clone() } else { &a_pow(p - 1) * (1.0 / factorial(p - 1)) };
    let h_prev = if p == 0 { zero.clone() } else { &h_pow(p - 1) * (1.0 / factorial(p - 1)) };
    let ap = &a_pow(p) * (1.0 / factorial(p));
    let hp = &h_pow(p) * (1.0 / factorial(p));
    let inv_zeta = d.zeta.recip();
    let logs = |branch: LogBranch| -> Result<(CircleSamples, CircleSamples)> {
        // (log(ζ^{m/s}/a), log(ζ^{m/s} â^{m/n}))
        match branch {
            LogBranch::Direct => {
                let zp = power_on_circle(&d.zeta, m / s, false)?;
                let hm = power_on_circle(&d.ahat, m / n, false)?;
                let l2 = log_on_circle(&(&zp / &d.a), LogMode::Strict)?;
                let l1 = log_on_circle(&(&zp * &hm), LogMode::Strict)?;
                Ok((l2, l1))
            }
            LogBranch::Normalized => {
                let lz = log_zeta_normalized(pt)?;
                let la = log_a_normalized(pt)?;
                let lh = log_ahat_normalized(pt)?;
                Ok((&lz - &la, &lz + &(&lh * (m / n))))
            }
        }
    };
    match di.u {
        CoordIndex::T(i) if i != -(pt.s as i64) => {
            let c = s / ((i as f64 + s) * factorial(p + 1));
            let zi = power_on_circle(&d.zeta, i as f64 / s, false)?;
            let zim1 = &zi * &inv_zeta;
            let phi = &a_pow(p + 1) - &h_pow(p + 1);
            let q = &(&zi * &phi) * c;
            let r = i as f64 / s;
            let qa = &(&(&zim1 * &phi) * (r * c)) + &(&(&zi * &a_pow(p)) * ((p + 1) as f64 * c));
            let qh = &(&(&zim1 * &phi) * (-r * c)) - &(&(&zi * &h_pow(p)) * ((p + 1) as f64 * c));
            Ok(DensityParts { q, qa, qh })
        }
        CoordIndex::T(_) => {
            let (l2, _) = logs(branch)?;
            let l2c = l2.map(|v| v + cp);
            let q = &(&ap * &l2c) * (s / m);
            let inner = &(&inv_zeta * (m / s)) - &d.a.recip();
            let qa = &(&(&a_prev * &l2c) + &(&ap * &inner)) * (s / m);
            let qh = -&(&ap * &inv_zeta);
            Ok(DensityParts { q, qa, qh })
        }
        CoordIndex::H(i) => {
            let k = rat(gamma_ratio(i, pt.m as i64, p));
            let alpha = 1.0 + p as f64 - i as f64 / m;
            let la = log_a_normalized(pt)?;
            let q = &pow_a(pt, &la, alpha) * k;
            let qa = &pow_a(pt, &la, alpha - 1.0) * (k * alpha);
            Ok(DensityParts { q, qa, qh: zero })
        }
        CoordIndex::Hhat(i) if i < pt.n as i64 => {
            let k = rat(gamma_ratio(i, pt.n as i64, p));
            let beta = 1.0 + p as f64 - i as f64 / n;
            let lh = log_ahat_normalized(pt)?;
            let q = &pow_ahat(pt, &lh, beta) * k;
            let qh = &pow_ahat(pt, &lh, beta - 1.0) * (k * beta);
            Ok(DensityParts { q, qa: zero, qh })
        }
        CoordIndex::Hhat(_) => {
            let (l2, l1) = logs(branch)?;
            let l1c = l1.map(|v| v - cp * m / n);
            let l2c = l2.map(|v| v + cp);
            let q = &(&(&hp * &l1c) - &(&ap * &l2c)) * (n / m);
            let ms_zeta = &inv_zeta * (m / s);
            let inner_a = &ms_zeta - &d.a.recip();
            let qa = &(&(&hp * &ms_zeta) - &(&(&a_prev * &l2c) + &(&ap * &inner_a))) * (n / m);
            let inner_h = &(&d.ahat.recip() * (m / n)) - &ms_zeta;
            let qh = &(&(&(&h_prev * &l1c) + &(&hp * &inner_h)) + &(&ap * &ms_zeta)) * (n / m);
            Ok(DensityParts { q, qa, qh })
        }
    }
}

/// `true` for the densities whose logarithms need the modified form.
pub fn is_log_case(pt: &Point, u: CoordIndex) -> bool {
    u == CoordIndex::T(-(pt.s as i64)) || u == CoordIndex::Hhat(pt.n as i64)
}

// ---------------------------------------------------------------------------
// Densities

/// `θ_{u,p}`: Γ-quadrature for `t_i` and the logarithmic cases, residues of
/// formal fractional powers for `h_i` and `ĥ_i`.
pub fn theta(pt: &Point, di: DensityIndex) -> Result<C64> {
    di.u.check(pt.m, pt.n)?;
    let d = pt.derived();
    let depth = d.depth as usize;
    match di.u {
        CoordIndex::H(i) => {
            let k = rat(gamma_ratio(i, pt.m as i64, di.p));
            let alpha = 1.0 + di.p as f64 - i as f64 / pt.m as f64;
            let a_inf = rechart_exact(&pt.a_series(), ChartTag::AtInfinity, d.depth)?;
            Ok(-a_inf.power(Side::Top, alpha, depth)?.residue()? * k)
        }
        CoordIndex::Hhat(i) if i < pt.n as i64 => {
            let k = rat(gamma_ratio(i, pt.n as i64, di.p));
            let beta = 1.0 + di.p as f64 - i as f64 / pt.n as f64;
            Ok(pt.ahat.power(Side::Bottom, beta, depth)?.residue()? * k)
        }
        _ => Ok(density_parts(pt, di, LogBranch::Direct)?.q.contour_integral()),
    }
}

/// `log(a/(z−φ)^m)` expanded at infinity.
fn log_a_series(pt: &Point) -> Result<TruncatedSeries> {
    let d = pt.derived();
    let depth = d.depth as usize;
    let a_inf = rechart_exact(&pt.a_series(), ChartTag::AtInfinity, d.depth)?;
    let wm = TruncatedSeries::monomial(pt.chart(), pt.m as i64, c64(1.0));
    let wm_inf = rechart_exact(&wm, ChartTag::AtInfinity, d.depth)?;
    let ratio = a_inf.mul(&wm_inf.power(Side::Top, -1.0, depth)?)?;
    Ok(ratio.log_normalized(Side::Top, depth)?)
}

/// `log(â (z−φ)^n)` expanded at φ, principal at φ.
fn log_ahat_series(pt: &Point) -> Result<TruncatedSeries> {
    let d = pt.derived();
    let l = pt.ahat.log_normalized(Side::Bottom, d.depth as usize)?;
    let c = TruncatedSeries::monomial(pt.chart(), 0, pt.ahat_coeff(-(pt.n as i64)).ln());
    Ok(l.add(&c)?)
}

/// The logarithmic densities `θ_{t_{−s},p}` and `θ_{ĥ_n,p}` in the form
/// where only `log(ζ^{m/s}/(z−φ)^m)` is integrated over Γ and the remaining
/// logarithms enter through residues at ∞ and φ.
pub fn theta_modified(pt: &Point, di: DensityIndex) -> Result<C64> {
    if !is_log_case(pt, di.u) {
        return Err(ManifoldError::Index(format!("{} has no modified form", di.u)));
    }
    let d = pt.derived();
    let (m, n, s) = (pt.m as f64, pt.n as f64, pt.s as f64);
    let p = di.p;
    let pf = factorial(p);
    let cp = HarmonicConst::new(p).to_f64();
    let lz = log_zeta_normalized(pt)?;
    let ap = &d.a.powi(p as i32) * (1.0 / pf);
    let a_inf = rechart_exact(&pt.a_series(), ChartTag::AtInfinity, d.depth)?;
    let ap_inf = pow_series(&a_inf, p)?.scale(c64(1.0 / pf));
    // Res_∞ (a^p/p!)(log((z−φ)^m/a) + c_p) dz
    let res_inf = {
        let l = log_a_series(pt)?.scale(c64(-1.0));
        let l = l.add(&TruncatedSeries::monomial(ChartTag::AtInfinity, 0, c64(cp)))?;
        ap_inf.mul(&l)?.residue()?
    };
    let gamma_a = (&ap * &lz).contour_integral();
    if di.u == CoordIndex::T(-(pt.s as i64)) {
        return Ok(gamma_a * (s / m) - res_inf * (s / m));
    }
    let hp = &d.ahat.powi(p as i32) * (1.0 / pf);
    let hp_series = pow_series(&pt.ahat, p)?.scale(c64(1.0 / pf));
    // Res_φ (â^p/p!)(log(â^{m/n}(z−φ)^m) − (m/n)c_p) dz
    let res_phi = {
        let l = log_ahat_series(pt)?.scale(c64(m / n));
        let l = l.sub(&TruncatedSeries::monomial(pt.chart(), 0, c64(cp * m / n)))?;
        hp_series.mul(&l)?.residue()?
    };
    let gamma_h = (&hp * &lz).contour_integral();
    Ok((gamma_h + res_phi - gamma_a + res_inf) * (n / m))
}

fn pow_series(f: &TruncatedSeries, p: usize) -> Result<TruncatedSeries> {
    let mut acc = TruncatedSeries::monomial(f.chart, 0, c64(1.0));
    for _ in 0..p {
        acc = acc.mul(f)?;
    }
    Ok(acc)
}

fn clip_covector(pt: &Point, parts: &DensityParts) -> Covector {
    Covector::new(
        parts.qa.clip(pt.phi, Bound::AtLeast(-(pt.m as i64) + 1)),
        parts.qh.clip(pt.phi, Bound::AtMost(pt.n as i64)),
    )
}

/// `dθ_{u,p}`.
pub fn d_theta(pt: &Point, di: DensityIndex) -> Result<Covector> {
    Ok(clip_covector(pt, &density_parts(pt, di, LogBranch::Direct)?))
}

/// `dθ_{u,p}` with the logarithms continued as in [`theta_modified`].
pub fn d_theta_modified(pt: &Point, di: DensityIndex) -> Result<Covector> {
    Ok(clip_covector(pt, &density_parts(pt, di, LogBranch::Normalized)?))
}

// ---------------------------------------------------------------------------
// Verifiers

/// `‖∇_∂ dθ_{u,p+1} − C_∂ dθ_{u,p}‖` modulo the kernel window. The field
/// derivative is a Richardson central difference along the raw direction.
pub fn verify_princon1(pt: &Point, di: DensityIndex, dir: &RawCombo) -> Result<f64> {
    let next = di.at(di.p + 1);
    let lhs = nabla_form(pt, dir, |q| d_theta_modified_or_plain(q, next))?;
    let rhs = c_op(pt, &dir.tangent(pt), &d_theta_modified_or_plain(pt, di)?)?;
    Ok(lhs.kernel_distance(&rhs, pt))
}

fn d_theta_modified_or_plain(pt: &Point, di: DensityIndex) -> Result<Covector> {
    if is_log_case(pt, di.u) {
        d_theta_modified(pt, di)
    } else {
        d_theta(pt, di)
    }
}

/// The right-hand side of the `Lie_E θ_{u,p}` table.
pub fn lie_e_expected(pt: &Point, di: DensityIndex) -> Result<C64> {
    let (m, n, s) = (pt.m, pt.n, pt.s);
    let p = di.p as f64;
    let th = theta(pt, di)?;
    let t0 = CoordIndex::T(0);
    let h0 = CoordIndex::Hhat(0);
    let prev = |u: CoordIndex| -> Result<C64> {
        if di.p == 0 {
            Ok(C64::new(0.0, 0.0))
        } else {
            theta(pt, DensityIndex::new(u, di.p - 1))
        }
    };
    let r = |u, v| -> Result<f64> { Ok(rat(r_entry(u, v, m, n, s)?)) };
    let inv_m = 1.0 / m as f64;
    // factor 1 + p + μ_u − 1/2 + 1/m for the homogeneous cases
    let factor = |u| -> Result<f64> { Ok(1.0 + p + rat(mu_of(u, m, n, s)? - Rational64::new(1, 2)) + inv_m) };
    Ok(if di.u == CoordIndex::T(-(s as i64)) {
        let coeff = r(t0, di.u)?;
        th * (p + inv_m) + (prev(t0)? + prev(h0)?) * coeff
    } else if di.u == CoordIndex::Hhat(n as i64) {
        th * (p + inv_m) + prev(h0)? * r(h0, di.u)? + prev(t0)? * r(t0, di.u)?
    } else {
        match di.u {
            CoordIndex::T(_) => th * factor(di.u)?,
            // μ_{h_i} = 1/2 − i/m enters with the opposite sign
            CoordIndex::H(i) => th * (1.0 + p - i as f64 / m as f64 + inv_m),
            CoordIndex::Hhat(i) => th * (1.0 + p - i as f64 / n as f64 + inv_m),
        }
    })
}

/// `|⟨dθ_{u,p}, E⟩ − Lie_E θ_{u,p}|` against the case table.
pub fn verify_princon2(pt: &Point, di: DensityIndex) -> Result<f64> {
    let lie = pairing(&d_theta(pt, di)?, &euler(pt));
    Ok((lie - lie_e_expected(pt, di)?).norm())
}

/// `max_u |θ_{u,0} − η_{uv} t^v|` over `t_i` with `|i| ≤ t_cap`, all `h_j`
/// and all `ĥ_k`.
pub fn verify_princon3(pt: &Point, t_cap: i64) -> Result<f64> {
    let (m, n, s) = (pt.m as i64, pt.n as i64, pt.s as i64);
    let h = flat_h(pt)?;
    let hh = flat_hhat(pt)?;
    let mut worst: f64 = 0.0;
    for u in CoordIndex::all(pt.m, pt.n, -t_cap..=t_cap) {
        let th = theta(pt, DensityIndex::new(u, 0))?;
        let lowered = match u {
            CoordIndex::T(i) => flat_t(pt, -s - i)? * (-s as f64),
            CoordIndex::H(j) => h[(m - j - 1) as usize] * m as f64,
            CoordIndex::Hhat(k) => hh[(n - k) as usize] * n as f64,
        };
        worst = worst.max((th - lowered).norm());
    }
    Ok(worst)
}

/// The scaling weight `d_u` with `E(u) = d_u u`: `1/m − i/s`, `1/m + i/m`,
/// `1/m + i/n`.
pub fn euler_weight(u: CoordIndex, m: usize, n: usize, s: usize) -> f64 {
    let (m, n, s) = (m as f64, n as f64, s as f64);
    match u {
        CoordIndex::T(i) => 1.0 / m - i as f64 / s,
        CoordIndex::H(i) => 1.0 / m + i as f64 / m,
        CoordIndex::Hhat(i) => 1.0 / m + i as f64 / n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{directional, flat_field, metric, shifted, RawDirection};
    use crate::manifold::{base, random_point, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn points(count: u64) -> Vec<Point> {
        let mut v = Vec::new();
        for (m, n, s) in [(2, 1, 1), (1, 1, 1), (3, 2, 3)] {
            for seed in 0..count {
                v.push(random_point(&ModelParams::new(m, n, s), seed).unwrap());
            }
        }
        v
    }

    fn all_densities(pt: &Point, p: usize) -> Vec<DensityIndex> {
        CoordIndex::all(pt.m, pt.n, -3..=2).into_iter().map(|u| DensityIndex::new(u, p)).collect()
    }

    #[test]
    fn harmonic_and_gamma() {
        assert_eq!(HarmonicConst::new(0).value, Rational64::from_integer(0));
        assert_eq!(HarmonicConst::new(3).value, Rational64::new(11, 6));
        // Γ(1/2)/Γ(5/2) = 1/((1/2)(3/2))
        assert_eq!(gamma_ratio(1, 2, 1), Rational64::new(4, 3));
        assert_eq!(gamma_ratio(0, 1, 2), Rational64::new(1, 6));
    }

    #[test]
    fn flat_t_joukowski() {
        // a = z, â = c/z: z(w) = w + Σ_k (−1)^k C_k c^{k+1} w^{−2k−1}
        let c = 0.1;
        let pt = Point::from_raw_parts(1, 1, 1, 8, C64::new(0.0, 0.0), &[C64::new(0.0, 0.0); 9], &{
            let mut h = vec![C64::new(0.0, 0.0); 9];
            h[0] = c64(c);
            h
        });
        let catalan = [1.0, 1.0, 2.0, 5.0, 14.0];
        assert!((flat_t(&pt, 1).unwrap() - 1.0).norm() < 1e-12);
        for (k, ck) in catalan.iter().enumerate() {
            let want = (-1f64).powi(k as i32) * ck * c.powi(k as i32 + 1);
            let got = flat_t(&pt, -(2 * k as i64) - 1).unwrap();
            assert!((got - want).norm() < 1e-10, "k = {k}: {got} vs {want}");
        }
        for i in [0, 2, -2, -4] {
            assert!(flat_t(&pt, i).unwrap().norm() < 1e-12);
        }
        assert!(flat_t(&pt, 40).unwrap().norm() < 1e-10);
    }

    #[test]
    fn flat_h_examples() {
        // m = 2, ℓ = z² + a₀ (φ = 0): χ = z(1 + a₀/z²)^{1/2}, h₁ = −a₀/2
        let a0 = c64(0.3);
        let mut a = vec![C64::new(0.0, 0.0); 9];
        a[8] = a0;
        let mut h = vec![C64::new(0.0, 0.0); 9];
        h[0] = c64(0.2);
        let pt = Point::from_raw_parts(2, 1, 1, 8, C64::new(0.0, 0.0), &a, &h);
        assert!((flat_h(&pt).unwrap()[0] - a0 * 0.5).norm() < 1e-13);
        // Möbius case: ℓ's pole part c/(z−φ) alone gives ĥ₀ = φ, ĥ₁ = c
        let phi = C64::new(0.1, -0.2);
        let pt = Point::from_raw_parts(1, 1, 1, 8, phi, &[C64::new(0.0, 0.0); 9], &h);
        let hh = flat_hhat(&pt).unwrap();
        assert!((hh[0] - phi - 0.0).norm() < 1e-13, "{hh:?}");
        assert!((hh[1] - 0.2).norm() < 1e-13);
    }

    #[test]
    fn flat_fields_are_coordinate_derivatives() {
        // ∂u/∂v = δ along the flat fields, via the η round trip u ↦ raw direction
        for pt in points(2) {
            let idx = CoordIndex::all(pt.m, pt.n, -2..=2);
            for &v in &idx {
                let field = flat_field(&pt, v).unwrap();
                let dir = RawCombo::from_tangent(&pt, &field);
                for &u in &idx {
                    let du = directional(&pt, &dir, |q| flat_coordinate(q, u)).unwrap();
                    let want = if u == v { 1.0 } else { 0.0 };
                    // t_{<0} fields have tails beyond the raw window; from_tangent truncates them
                    assert!((du - want).norm() < 5e-5, "{u} along {v}: {du}");
                }
            }
        }
    }

    #[test]
    fn euler_scales_flat_coordinates() {
        for pt in points(2) {
            let e = RawCombo::euler(&pt);
            for u in CoordIndex::all(pt.m, pt.n, -2..=2) {
                let du = directional(&pt, &e, |q| flat_coordinate(q, u)).unwrap();
                let want = flat_coordinate(&pt, u).unwrap() * euler_weight(u, pt.m, pt.n, pt.s);
                assert!((du - want).norm() < 1e-7, "{u}: {du} vs {want}");
            }
        }
    }

    #[test]
    fn jacobian_transports_metric_table() {
        for pt in points(1) {
            let idx = CoordIndex::all(pt.m, pt.n, -1..=1);
            for &u in &idx {
                for &v in &idx {
                    let g = metric(&pt, &flat_field(&pt, u).unwrap(), &flat_field(&pt, v).unwrap()).unwrap();
                    let want = crate::geometry::flat_metric_entry(u, v, pt.m, pt.n, pt.s);
                    assert!((g - want).norm() < 1e-8);
                }
            }
        }
    }

    #[test]
    fn simple_densities() {
        // θ_{ĥ_0,0} = â_{−1} for n = 1
        let mut h = vec![C64::new(0.0, 0.0); 9];
        h[0] = c64(2.0);
        h[1] = c64(0.3);
        let pt = Point::from_raw_parts(1, 1, 1, 8, C64::new(0.1, 0.0), &[C64::new(0.0, 0.0); 9], &h);
        let th = theta(&pt, DensityIndex::new(CoordIndex::Hhat(0), 0)).unwrap();
        assert!((th - 2.0).norm() < 1e-13);
        let dt = d_theta(&pt, DensityIndex::new(CoordIndex::Hhat(0), 0)).unwrap();
        assert!(dt.omega.sup_norm() < 1e-14);
        assert!((&dt.omegahat - &CircleSamples::constant(256, c64(1.0))).sup_norm() < 1e-13);
        // θ_{h_1,0} = 0 for a = z² exactly
        let mut h = vec![C64::new(0.0, 0.0); 9];
        h[0] = c64(0.2);
        let pt = Point::from_raw_parts(2, 1, 1, 8, C64::new(0.0, 0.0), &[C64::new(0.0, 0.0); 9], &h);
        assert!(theta(&pt, DensityIndex::new(CoordIndex::H(1), 0)).unwrap().norm() < 1e-14);
    }

    #[test]
    fn q_recursion() {
        for pt in points(2) {
            for p in 0..MAX_LEVEL {
                for di in all_densities(&pt, p) {
                    for branch in [LogBranch::Direct, LogBranch::Normalized] {
                        let lo = density_parts(&pt, di, branch).unwrap();
                        let hi = density_parts(&pt, di.at(p + 1), branch).unwrap();
                        let err = (&(&hi.qa + &hi.qh) - &lo.q).sup_norm();
                        assert!(err < 1e-10, "{di}: {err}");
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for pt in points(2) {
            for p in 0..2 {
                for di in all_densities(&pt, p) {
                    let dir = RawCombo::random(&pt, &mut rng);
                    let fd = directional(&pt, &dir, |q| theta(q, di)).unwrap();
                    let an = pairing(&d_theta(&pt, di).unwrap(), &dir.tangent(&pt));
                    assert!((fd - an).norm() < 1e-6 * (1.0 + fd.norm()), "{di}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn modified_log_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for pt in points(2) {
            for p in 0..3 {
                for u in [CoordIndex::T(-(pt.s as i64)), CoordIndex::Hhat(pt.n as i64)] {
                    let di = DensityIndex::new(u, p);
                    // the normalized Γ-integrand and the residue form agree in value
                    let direct = density_parts(&pt, di, LogBranch::Normalized).unwrap().q.contour_integral();
                    let modified = theta_modified(&pt, di).unwrap();
                    assert!((direct - modified).norm() < 1e-10, "{di}: {direct} vs {modified}");
                    let dir = RawCombo::random(&pt, &mut rng);
                    let fd = directional(&pt, &dir, |q| theta_modified(q, di)).unwrap();
                    let an = pairing(&d_theta(&pt, di).unwrap(), &dir.tangent(&pt));
                    assert!((fd - an).norm() < 1e-6 * (1.0 + fd.norm()), "{di}: {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn princon3_on_random_points() {
        for pt in points(3) {
            let r = verify_princon3(&pt, 4).unwrap();
            assert!(r < 1e-7, "{r}");
        }
    }

    #[test]
    fn princon3_base_point_by_hand() {
        // m = n = s = 1, a = z, â = c/(z−φ): z(w) = w + c/w + cφ/w² + …, so
        // t_0 = 0 and t_{−1} = c; θ_{t_0,0} = (1/2πi)∮ (a − â) dz = −c and
        // θ_{t_{−1},0} = (1/2πi)∮ log(1 − c/(z(z−φ))) dz = 0
        let params = ModelParams::new(1, 1, 1);
        let phi = C64::new(0.12, 0.05);
        let pt = base(&params, phi).unwrap();
        let c = pt.ahat_coeff(-1);
        let t0 = theta(&pt, DensityIndex::new(CoordIndex::T(0), 0)).unwrap();
        assert!((t0 + c).norm() < 1e-12, "{t0}");
        let tm = theta(&pt, DensityIndex::new(CoordIndex::T(-1), 0)).unwrap();
        assert!(tm.norm() < 1e-12, "{tm}");
        assert!(flat_t(&pt, 0).unwrap().norm() < 1e-12);
        assert!((flat_t(&pt, -1).unwrap() - c).norm() < 1e-12);
        assert!(verify_princon3(&pt, 4).unwrap() < 1e-10);
    }

    #[test]
    fn princon2_table() {
        for pt in points(2) {
            for p in 0..3 {
                for di in all_densities(&pt, p) {
                    let r = verify_princon2(&pt, di).unwrap();
                    assert!(r < 1e-6, "{di} at ({},{},{}): {r}", pt.m, pt.n, pt.s);
                }
            }
        }
    }

    #[test]
    fn princon2_example_factor() {
        // t_1, p = 0, (2,1,1): Lie_E θ = 2.5 θ
        let pt = random_point(&ModelParams::new(2, 1, 1), 3).unwrap();
        let di = DensityIndex::new(CoordIndex::T(1), 0);
        let th = theta(&pt, di).unwrap();
        assert!((lie_e_expected(&pt, di).unwrap() - th * 2.5).norm() < 1e-14);
    }

    #[test]
    fn princon1_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pt in points(1) {
            for p in 0..2 {
                for di in all_densities(&pt, p) {
                    let dir = RawCombo::random(&pt, &mut rng);
                    let r = verify_princon1(&pt, di, &dir).unwrap();
                    assert!(r < 1e-5, "{di} at ({},{},{}): {r}", pt.m, pt.n, pt.s);
                }
            }
            let zero = RawCombo::zero(&pt);
            assert_eq!(verify_princon1(&pt, DensityIndex::new(CoordIndex::T(1), 0), &zero).unwrap(), 0.0);
        }
    }

    #[test]
    fn raw_basis_gradients() {
        // d_theta against one-sided raw coordinate bumps
        let pt = random_point(&ModelParams::new(2, 1, 1), 9).unwrap();
        let di = DensityIndex::new(CoordIndex::H(1), 1);
        for dir in [RawDirection::DPhi, RawDirection::DA(0), RawDirection::DAhat(-1)] {
            let c = RawCombo::basis(&pt, dir).unwrap();
            let h = 1e-6;
            let fd = (theta(&shifted(&pt, &c, h), di).unwrap() - theta(&shifted(&pt, &c, -h), di).unwrap()) / (2.0 * h);
            let an = pairing(&d_theta(&pt, di).unwrap(), &c.tangent(&pt));
            assert!((fd - an).norm() < 1e-7, "{dir:?}: {fd} vs {an}");
        }
    }
}
