//! The Frobenius structure at a point: the metric η in both directions, the
//! Levi-Civita connection on vectors and one-forms, the product on
//! cotangent vectors and the operator `C_∂`, unity and Euler fields, the
//! flat coordinate vector fields, the spectrum data μ and R, and the
//! intersection form.
//!
//! Functions on Γ live in [`CircleSamples`]. Products with the formal
//! inverses `1/a′` (descending) and `1/â′` (ascending) are only ever needed
//! on finite exponent windows, which are computed exactly from finitely many
//! coefficients.

use num_complex::Complex64 as C64;
use num_rational::Rational64;
use rand::Rng;

use crate::manifold::{pairing, Covector, ManifoldError, Point, Result, TangentVec};
use crate::series::{
    power_on_circle, rechart_exact, samples_to_polynomial, Bound, ChartTag, CircleSamples, Side,
    TruncatedSeries,
};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Flat coordinate labels `t_i`, `h_j` (`1 ≤ j ≤ m−1`), `ĥ_k` (`0 ≤ k ≤ n`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum CoordIndex {
    T(i64),
    H(i64),
    Hhat(i64),
}

impl CoordIndex {
    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        let ok = match *self {
            CoordIndex::T(_) => true,
            CoordIndex::H(j) => 1 <= j && j < m as i64,
            CoordIndex::Hhat(k) => 0 <= k && k <= n as i64,
        };
        if ok {
            Ok(())
        } else {
            Err(ManifoldError::Index(format!("{self} for m = {m}, n = {n}")))
        }
    }

    /// All `h_j` and `ĥ_k`, and `t_i` for `i` in `t_range`.
    pub fn all(m: usize, n: usize, t_range: std::ops::RangeInclusive<i64>) -> Vec<CoordIndex> {
        let mut v: Vec<_> = t_range.map(CoordIndex::T).collect();
        v.extend((1..m as i64).map(CoordIndex::H));
        v.extend((0..=n as i64).map(CoordIndex::Hhat));
        v
    }
}

impl std::fmt::Display for CoordIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoordIndex::T(i) => write!(f, "t_{i}"),
            CoordIndex::H(j) => write!(f, "h_{j}"),
            CoordIndex::Hhat(k) => write!(f, "hhat_{k}"),
        }
    }
}

impl std::str::FromStr for CoordIndex {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (tag, idx) = s.split_once('_').ok_or_else(|| format!("expected <t|h|hhat>_<index>, got {s:?}"))?;
        let i: i64 = idx.parse().map_err(|_| format!("bad index in {s:?}"))?;
        match tag {
            "t" => Ok(CoordIndex::T(i)),
            "h" => Ok(CoordIndex::H(i)),
            "hhat" => Ok(CoordIndex::Hhat(i)),
            _ => Err(format!("unknown coordinate family {tag:?}")),
        }
    }
}

// ---------------------------------------------------------------------------
// Raw coordinate directions

/// One coordinate direction of the raw chart `(φ, a_i, â_i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawDirection {
    DPhi,
    DA(i64),
    DAhat(i64),
}

/// A constant-coefficient combination of raw directions, laid out like
/// [`Point::raw`]. Its action on `a` and `â` is exact:
/// `∂a = Σ δa_i (z−φ)^i − δφ Σ i a_i (z−φ)^{i−1}` and likewise for `â`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCombo {
    pub dphi: C64,
    pub da: Vec<C64>,
    pub dahat: Vec<C64>,
}

impl RawCombo {
    pub fn zero(p: &Point) -> Self {
        RawCombo { dphi: ZERO, da: vec![ZERO; p.tail_depth + 1], dahat: vec![ZERO; p.tail_depth + 1] }
    }

    pub fn basis(p: &Point, dir: RawDirection) -> Result<Self> {
        let mut c = Self::zero(p);
        let (alo, ahi) = p.a_window();
        let (hlo, hhi) = p.ahat_window();
        match dir {
            RawDirection::DPhi => c.dphi = C64::new(1.0, 0.0),
            RawDirection::DA(i) if (alo..=ahi).contains(&i) => c.da[(i - alo) as usize] = C64::new(1.0, 0.0),
            RawDirection::DAhat(i) if (hlo..=hhi).contains(&i) => {
                c.dahat[(i - hlo) as usize] = C64::new(1.0, 0.0)
            }
            _ => return Err(ManifoldError::Index(format!("{dir:?} outside the tail windows"))),
        }
        Ok(c)
    }

    pub fn from_vec(p: &Point, v: &[C64]) -> Self {
        let d = p.tail_depth + 1;
        assert_eq!(v.len(), 1 + 2 * d, "raw vector length");
        RawCombo { dphi: v[0], da: v[1..1 + d].to_vec(), dahat: v[1 + d..].to_vec() }
    }

    pub fn to_vec(&self) -> Vec<C64> {
        let mut v = vec![self.dphi];
        v.extend(&self.da);
        v.extend(&self.dahat);
        v
    }

    pub fn scale(&self, c: C64) -> Self {
        RawCombo {
            dphi: self.dphi * c,
            da: self.da.iter().map(|x| x * c).collect(),
            dahat: self.dahat.iter().map(|x| x * c).collect(),
        }
    }

    pub fn add(&self, o: &Self) -> Self {
        RawCombo {
            dphi: self.dphi + o.dphi,
            da: self.da.iter().zip(&o.da).map(|(x, y)| x + y).collect(),
            dahat: self.dahat.iter().zip(&o.dahat).map(|(x, y)| x + y).collect(),
        }
    }

    /// Random direction with coefficients decaying away from the heads.
    pub fn random(p: &Point, rng: &mut impl Rng) -> Self {
        let mut g = |scale: f64| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale;
        let d = p.tail_depth;
        let dphi = g(0.1);
        let da = (0..=d).map(|j| g(0.5f64.powi((d - j) as i32))).collect();
        let dahat = (0..=d).map(|j| g(0.2 * 0.5f64.powi(j as i32))).collect();
        RawCombo { dphi, da, dahat }
    }

    fn a_part(&self, p: &Point) -> TruncatedSeries {
        TruncatedSeries::polynomial(p.chart(), p.a_window().0, self.da.clone())
    }

    fn ahat_part(&self, p: &Point) -> TruncatedSeries {
        TruncatedSeries::polynomial(p.chart(), p.ahat_window().0, self.dahat.clone())
    }

    /// Exact `∂a`.
    pub fn da_series(&self, p: &Point) -> TruncatedSeries {
        self.a_part(p).sub(&p.a_tail.d_dz().scale(self.dphi)).expect("same chart")
    }

    /// Exact `∂â`.
    pub fn dahat_series(&self, p: &Point) -> TruncatedSeries {
        self.ahat_part(p).sub(&p.ahat.d_dz().scale(self.dphi)).expect("same chart")
    }

    pub fn tangent(&self, p: &Point) -> TangentVec {
        TangentVec::from_series(&self.da_series(p), &self.dahat_series(p), p.n_samples())
    }

    /// Exact `(∂₁∂₂a, ∂₁∂₂â)` for two constant fields.
    pub fn second(p: &Point, c1: &Self, c2: &Self) -> (TruncatedSeries, TruncatedSeries) {
        let part = |tail: &TruncatedSeries, d1: TruncatedSeries, d2: TruncatedSeries| {
            let mixed = d2.d_dz().scale(c1.dphi).add(&d1.d_dz().scale(c2.dphi)).expect("same chart");
            tail.d_dz().d_dz().scale(c1.dphi * c2.dphi).sub(&mixed).expect("same chart")
        };
        (
            part(&p.a_tail, c1.a_part(p), c2.a_part(p)),
            part(&p.ahat, c1.ahat_part(p), c2.ahat_part(p)),
        )
    }

    /// Raw direction whose action matches `t` on the tail windows: `δφ`
    /// from the `(z−φ)^{−n−1}` coefficient of `ξ̂`, then the tails.
    pub fn from_tangent(p: &Point, t: &TangentVec) -> Self {
        let n = p.n as i64;
        let (alo, ahi) = p.a_window();
        let (hlo, hhi) = p.ahat_window();
        let lead = p.ahat_coeff(-n);
        let dphi = t.xihat.coefficient(p.phi, -n - 1) / (lead * n as f64);
        let xi = t.xi.coefficients(p.phi, alo, ahi);
        let xh = t.xihat.coefficients(p.phi, hlo, hhi);
        let da = (alo..=ahi)
            .zip(xi)
            .map(|(k, x)| x + dphi * (k + 1) as f64 * p.a_coeff(k + 1))
            .collect();
        let dahat = (hlo..=hhi)
            .zip(xh)
            .map(|(k, x)| x + dphi * (k + 1) as f64 * p.ahat_coeff(k + 1))
            .collect();
        RawCombo { dphi, da, dahat }
    }

    /// The Euler field in raw coordinates: `δφ = φ/m`, `δa_i = (1 − i/m)a_i`,
    /// `δâ_i = (1 − i/m)â_i`.
    pub fn euler(p: &Point) -> Self {
        let m = p.m as f64;
        let (alo, ahi) = p.a_window();
        let (hlo, hhi) = p.ahat_window();
        RawCombo {
            dphi: p.phi / m,
            da: (alo..=ahi).map(|i| p.a_coeff(i) * (1.0 - i as f64 / m)).collect(),
            dahat: (hlo..=hhi).map(|i| p.ahat_coeff(i) * (1.0 - i as f64 / m)).collect(),
        }
    }
}

/// `p + h·c` in raw coordinates.
pub fn shifted(p: &Point, c: &RawCombo, h: f64) -> Point {
    let raw: Vec<C64> = p.raw().iter().zip(c.to_vec()).map(|(x, d)| x + d * h).collect();
    p.with_raw(&raw)
}

/// Values that can be combined linearly, for finite differences.
pub trait Linear: Sized {
    fn axpby(&self, a: f64, other: &Self, b: f64) -> Self;
}

impl Linear for C64 {
    fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        self * a + other * b
    }
}

impl Linear for Covector {
    fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        Covector::new(&(&self.omega * a) + &(&other.omega * b), &(&self.omegahat * a) + &(&other.omegahat * b))
    }
}

impl Linear for TangentVec {
    fn axpby(&self, a: f64, other: &Self, b: f64) -> Self {
        TangentVec::new(&(&self.xi * a) + &(&other.xi * b), &(&self.xihat * a) + &(&other.xihat * b))
    }
}

/// Default finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central difference at `h` and `h/2` combined by Richardson extrapolation.
pub fn richardson<T: Linear>(f: impl Fn(f64) -> Result<T>, h: f64) -> Result<T> {
    let central = |h: f64| -> Result<T> { Ok(f(h)?.axpby(0.5 / h, &f(-h)?, -0.5 / h)) };
    let d1 = central(h)?;
    let d2 = central(h / 2.0)?;
    Ok(d2.axpby(4.0 / 3.0, &d1, -1.0 / 3.0))
}

/// Directional derivative of a point function along a raw direction.
pub fn directional<T: Linear>(p: &Point, c: &RawCombo, f: impl Fn(&Point) -> Result<T>) -> Result<T> {
    richardson(|h| f(&shifted(p, c, h)), FD_STEP)
}

// ---------------------------------------------------------------------------
// Window helpers

/// Coefficients of `f·g` on `[lo, hi]`, requiring exactness there.
fn windowed_product(f: &TruncatedSeries, g: &TruncatedSeries, lo: i64, hi: i64) -> Result<TruncatedSeries> {
    if hi < lo {
        return Ok(TruncatedSeries::zero(f.chart));
    }
    Ok(f.mul(g)?.restrict(lo, hi)?)
}

fn poly_samples(f: &TruncatedSeries, n: usize) -> CircleSamples {
    f.eval_on_circle(n)
}

fn coeff_poly(fs: &CircleSamples, phi: C64, lo: i64, hi: i64) -> TruncatedSeries {
    if hi < lo {
        TruncatedSeries::zero(ChartTag::pole(phi))
    } else {
        samples_to_polynomial(fs, phi, lo, hi)
    }
}

fn mn(p: &Point) -> (i64, i64) {
    (p.m as i64, p.n as i64)
}

// ---------------------------------------------------------------------------
// The metric

/// `η·ω = (a′A_− − V_−, −â′A_+ + V_+)` with `A = ω + ω̂`, `V = ωa′ + ω̂â′`.
pub fn eta_lower(p: &Point, w: &Covector) -> TangentVec {
    let d = p.derived();
    let a = &w.omega + &w.omegahat;
    let v = &(&w.omega * &d.da) + &(&w.omegahat * &d.dahat);
    let xi = &(&d.da * &a.minus()) - &v.minus();
    let xihat = &v.plus() - &(&d.dahat * &a.plus());
    TangentVec::new(xi, xihat).clip(p)
}

/// `η^{−1}·ξ`. With `F = (ξ − ξ̂)/ζ′`:
/// `ω = −F_+ + (ξ/a′ − F_−)_{≥−m+1}` and `ω̂ = F_− + (−ξ̂/â′ + F_+)_{≤n}`.
pub fn eta_raise(p: &Point, t: &TangentVec) -> Result<Covector> {
    let d = p.derived();
    let (m, n) = mn(p);
    let ns = p.n_samples();
    let f = &t.dzeta() / &d.dzeta;
    let xi_top = coeff_poly(&t.xi, p.phi, 0, m - 2);
    let q = windowed_product(&xi_top, &d.inv_da, -m + 1, -1)?;
    let fm = f.coefficients(p.phi, -m + 1, -1);
    let low: Vec<C64> = (-m + 1..=-1).zip(fm).map(|(k, c)| q.coeff(k) - c).collect();
    let omega = &CircleSamples::from_coeffs(ns, p.phi, -m + 1, &low) - &f.plus();
    let xh_low = coeff_poly(&t.xihat, p.phi, -n - 1, -1);
    let r = windowed_product(&xh_low, &d.inv_dahat, 0, n)?;
    let fp = f.coefficients(p.phi, 0, n);
    let high: Vec<C64> = (0..=n).zip(fp).map(|(k, c)| c - r.coeff(k)).collect();
    let omegahat = &CircleSamples::from_coeffs(ns, p.phi, 0, &high) + &f.minus();
    Ok(Covector::new(omega, omegahat))
}

/// `P/ℓ′` expanded at infinity and at φ, for a closed polynomial `P`.
fn over_dell(p: &Point, num: &TruncatedSeries) -> Result<(TruncatedSeries, TruncatedSeries)> {
    let d = p.derived();
    let at_inf = rechart_exact(num, ChartTag::AtInfinity, d.depth)?.mul(&d.inv_dell_inf)?;
    let at_phi = num.mul(&d.inv_dell_pole)?;
    Ok((at_inf, at_phi))
}

/// `⟨∂₁,∂₂⟩ = −(1/2πi)∮ ∂₁ζ∂₂ζ/ζ′ dz − Res_∞ ∂₁ℓ∂₂ℓ/ℓ′ dz − Res_φ ∂₁ℓ∂₂ℓ/ℓ′ dz`.
pub fn metric(p: &Point, t1: &TangentVec, t2: &TangentVec) -> Result<C64> {
    let d = p.derived();
    let gamma = (&(&t1.dzeta() * &t2.dzeta()) / &d.dzeta).contour_integral();
    let prod = t1.dell(p).mul(&t2.dell(p))?;
    let (at_inf, at_phi) = over_dell(p, &prod)?;
    Ok(-gamma - at_inf.residue()? - at_phi.residue()?)
}

// ---------------------------------------------------------------------------
// Connection

/// `∇_{∂₁}∂₂` for constant raw fields. With `G = ∂₁ζ∂₂ζ/ζ′` and
/// `L = (∂₁ℓ∂₂ℓ/ℓ′)_{∞,+} + (∂₁ℓ∂₂ℓ/ℓ′)_{φ,−}`:
/// `(∂₁∂₂a − G_−′ − L′, ∂₁∂₂â + G_+′ − L′)`.
pub fn nabla_vec(p: &Point, c1: &RawCombo, c2: &RawCombo) -> Result<TangentVec> {
    let d = p.derived();
    let ns = p.n_samples();
    let t1 = c1.tangent(p);
    let t2 = c2.tangent(p);
    let g = &(&t1.dzeta() * &t2.dzeta()) / &d.dzeta;
    let prod = t1.dell(p).mul(&t2.dell(p))?;
    let l = ell_parts(p, &prod)?;
    let dl = poly_samples(&l.d_dz(), ns);
    let (dda, ddah) = RawCombo::second(p, c1, c2);
    let xi = &(&poly_samples(&dda, ns) - &g.minus().d_dz()) - &dl;
    let xihat = &(&poly_samples(&ddah, ns) + &g.plus().d_dz()) - &dl;
    Ok(TangentVec::new(xi, xihat))
}

/// `(P/ℓ′)_{∞,+} + (P/ℓ′)_{φ,−}` as a closed polynomial in the pole chart.
fn ell_parts(p: &Point, num: &TruncatedSeries) -> Result<TruncatedSeries> {
    let (at_inf, at_phi) = over_dell(p, num)?;
    let poly_inf = match at_inf.support() {
        Some((_, hi)) if hi >= 0 => rechart_exact(&at_inf.restrict(0, hi)?, p.chart(), 0)?,
        _ => TruncatedSeries::zero(p.chart()),
    };
    let pole_part = match at_phi.support() {
        Some((lo, _)) if lo <= -1 => at_phi.restrict(lo, -1)?,
        _ => TruncatedSeries::zero(p.chart()),
    };
    Ok(poly_inf.add(&pole_part)?)
}

/// `∇_∂ω` for a covector field given as a function of the point, with
/// `∂ω` by Richardson-extrapolated central differences along `c`:
///
/// `((∂ω − (ω′_+ − ω̂′_−)∂ζ/ζ′ − (ω′_− + ω̂′_−)∂ℓ/a′)_{≥−m+1},
///   (∂ω̂ + (ω′_+ − ω̂′_−)∂ζ/ζ′ − (ω′_+ + ω̂′_+)∂ℓ/â′)_{≤n})`.
pub fn nabla_form(p: &Point, c: &RawCombo, field: impl Fn(&Point) -> Result<Covector>) -> Result<Covector> {
    let w = field(p)?;
    let dw = directional(p, c, &field)?;
    nabla_form_with(p, &c.tangent(p), &w, &dw)
}

/// [`nabla_form`] with the field value and its derivative supplied.
pub fn nabla_form_with(p: &Point, t: &TangentVec, w: &Covector, dw: &Covector) -> Result<Covector> {
    let d = p.derived();
    let (m, n) = mn(p);
    let ns = p.n_samples();
    let q = &t.dzeta() / &d.dzeta;
    let x = &w.omega.d_dz().plus() - &w.omegahat.d_dz().minus();
    let wp = (&w.omega + &w.omegahat).d_dz();
    let dell = t.dell(p);
    let s1 = (&dw.omega - &(&x * &q)).clip(p.phi, Bound::AtLeast(-m + 1));
    let f1 = windowed_product(&coeff_poly(&wp, p.phi, -m + 1, -1), &dell.mul(&d.inv_da)?, -m + 1, -2)?;
    let s2 = (&dw.omegahat + &(&x * &q)).clip(p.phi, Bound::AtMost(n));
    let f2 = windowed_product(&coeff_poly(&wp, p.phi, 0, n), &dell.mul(&d.inv_dahat)?, 0, n)?;
    Ok(Covector::new(&s1 - &poly_samples(&f1, ns), &s2 - &poly_samples(&f2, ns)))
}

// ---------------------------------------------------------------------------
// Products

/// The product of two cotangent vectors.
pub fn star(p: &Point, w1: &Covector, w2: &Covector) -> Covector {
    let d = p.derived();
    let (m, n) = mn(p);
    let a1 = &w1.omega * &d.da;
    let a2 = &w2.omega * &d.da;
    let h1 = &w1.omegahat * &d.dahat;
    let h2 = &w2.omegahat * &d.dahat;
    let (a1p, a2p) = (a1.plus(), a2.plus());
    let s1 = &(&(&w2.omega * &a1p) - &(&w1.omega * &a2.minus())) - &(&(&w2.omega * &h1.minus()) + &(&w1.omega * &h2.minus()));
    let s2 = &(&(&w2.omegahat * &h1.plus()) - &(&w1.omegahat * &h2.minus()))
        + &(&(&w1.omegahat * &a2p) + &(&w2.omegahat * &a1p));
    Covector::new(s1.clip(p.phi, Bound::AtLeast(-m + 1)), s2.clip(p.phi, Bound::AtMost(n)))
}

/// `C_∂ω = η^{−1}(∂) * ω`, in the closed form built from `∂a/a′ − ∂ζ/ζ′`
/// and `∂â/â′ − ∂ζ/ζ′`.
pub fn c_op(p: &Point, t: &TangentVec, w: &Covector) -> Result<Covector> {
    let d = p.derived();
    let (m, n) = mn(p);
    let ns = p.n_samples();
    let q = &t.dzeta() / &d.dzeta;
    let v = &(&w.omega * &d.da) + &(&w.omegahat * &d.dahat);
    let (vm, vp) = (v.minus(), v.plus());
    let s1 = &(&(&t.xi * &w.omega) - &(&(&q * &d.da) * &w.omega)) + &(&q * &vm);
    let xa = windowed_product(&coeff_poly(&t.xi, p.phi, 0, m - 2), &d.inv_da, -m + 1, -1)?;
    let f1 = windowed_product(&xa, &coeff_poly(&vm, p.phi, -m + 1, -1), -m + 1, -2)?;
    let s2 = &(&(&t.xihat * &w.omegahat) - &(&(&q * &d.dahat) * &w.omegahat)) + &(&q * &vp);
    let xh = windowed_product(&coeff_poly(&t.xihat, p.phi, -n - 1, -1), &d.inv_dahat, 0, n)?;
    let f2 = windowed_product(&xh, &coeff_poly(&vp, p.phi, 0, n), 0, n)?;
    Ok(Covector::new(
        &s1.clip(p.phi, Bound::AtLeast(-m + 1)) - &poly_samples(&f1, ns),
        &s2.clip(p.phi, Bound::AtMost(n)) - &poly_samples(&f2, ns),
    ))
}

/// `e* = ((1/m)(z−φ)^{−m+1}, 0)`.
pub fn unity_covector(p: &Point) -> Covector {
    let ns = p.n_samples();
    let m = p.m as i64;
    let e = TruncatedSeries::monomial(p.chart(), -m + 1, C64::new(1.0 / p.m as f64, 0.0));
    Covector::new(e.eval_on_circle(ns), CircleSamples::zeros(ns))
}

/// The unity vector field: `(1/m)∂/∂h_{m−1}` for `m ≥ 2`, and
/// `∂/∂t_0 + ∂/∂ĥ_0` for `m = 1`.
pub fn unity_vector(p: &Point) -> Result<TangentVec> {
    if p.m >= 2 {
        Ok(flat_field(p, CoordIndex::H(p.m as i64 - 1))?.scale(C64::new(1.0 / p.m as f64, 0.0)))
    } else {
        Ok(flat_field(p, CoordIndex::T(0))?.add(&flat_field(p, CoordIndex::Hhat(0))?))
    }
}

/// `E = (a − z a′/m, â − z â′/m)` on Γ.
pub fn euler(p: &Point) -> TangentVec {
    let d = p.derived();
    let m = p.m as f64;
    let xi = &d.a - &(&(&d.z * &d.da) * (1.0 / m));
    let xihat = &d.ahat - &(&(&d.z * &d.dahat) * (1.0 / m));
    TangentVec::new(xi, xihat)
}

/// `g(ω₁, ω₂) = ⟨ω₁ * ω₂, E⟩`.
pub fn intersection_form(p: &Point, w1: &Covector, w2: &Covector) -> C64 {
    pairing(&star(p, w1, w2), &euler(p))
}

// ---------------------------------------------------------------------------
// Flat coordinate vector fields

/// `∂/∂u` as a tangent vector, from its action on `ζ` and `ℓ`:
/// `∂ζ/∂t_i = −ζ^{i/s}ζ′`, `∂ℓ/∂h_j = (ℓ′χ^{−j})_{∞,+}`,
/// `∂ℓ/∂ĥ_k = −(ℓ′χ̂^{−k})_{φ,−}`, and `∂a = ∂ζ_− + ∂ℓ`, `∂â = −∂ζ_+ + ∂ℓ`.
pub fn flat_field(p: &Point, u: CoordIndex) -> Result<TangentVec> {
    u.check(p.m, p.n)?;
    let d = p.derived();
    let ns = p.n_samples();
    let depth = d.depth as usize;
    match u {
        CoordIndex::T(i) => {
            let zp = power_on_circle(&d.zeta, i as f64 / p.s as f64, false)?;
            let dz = -&(&zp * &d.dzeta);
            Ok(TangentVec::new(dz.minus(), -&dz.plus()))
        }
        CoordIndex::H(j) => {
            let chi = d.ell_inf.power(Side::Top, -(j as f64) / p.m as f64, depth)?;
            let prod = d.dell_inf.mul(&chi)?;
            let dl = match prod.support() {
                Some((_, hi)) if hi >= 0 => rechart_exact(&prod.restrict(0, hi)?, p.chart(), 0)?,
                _ => TruncatedSeries::zero(p.chart()),
            };
            let s = dl.eval_on_circle(ns);
            Ok(TangentVec::new(s.clone(), s))
        }
        CoordIndex::Hhat(k) => {
            let chi = d.ell_series.power(Side::Bottom, -(k as f64) / p.n as f64, depth)?;
            let prod = d.dell_series.mul(&chi)?;
            let dl = match prod.support() {
                Some((lo, _)) if lo <= -1 => prod.restrict(lo, -1)?.scale(C64::new(-1.0, 0.0)),
                _ => TruncatedSeries::zero(p.chart()),
            };
            let s = dl.eval_on_circle(ns);
            Ok(TangentVec::new(s.clone(), s))
        }
    }
}

/// The constant `η_{uv}` of the flat pairing table.
pub fn flat_metric_entry(u: CoordIndex, v: CoordIndex, m: usize, n: usize, s: usize) -> f64 {
    let (m, n, s) = (m as i64, n as i64, s as i64);
    match (u, v) {
        (CoordIndex::T(i1), CoordIndex::T(i2)) if i1 + i2 == -s => -(s as f64),
        (CoordIndex::H(j1), CoordIndex::H(j2)) if j1 + j2 == m => m as f64,
        (CoordIndex::Hhat(k1), CoordIndex::Hhat(k2)) if k1 + k2 == n => n as f64,
        _ => 0.0,
    }
}

/// The index `v` with `η_{uv} ≠ 0`.
pub fn dual_index(u: CoordIndex, m: usize, n: usize, s: usize) -> CoordIndex {
    match u {
        CoordIndex::T(i) => CoordIndex::T(-(s as i64) - i),
        CoordIndex::H(j) => CoordIndex::H(m as i64 - j),
        CoordIndex::Hhat(k) => CoordIndex::Hhat(n as i64 - k),
    }
}

// ---------------------------------------------------------------------------
// Spectrum

/// `μ_u`: `i/s + 1/2` for `t_i`, `1/2 − i/m` for `h_i`, `1/2 − i/n` for `ĥ_i`.
pub fn mu_of(u: CoordIndex, m: usize, n: usize, s: usize) -> Result<Rational64> {
    u.check(m, n)?;
    let half = Rational64::new(1, 2);
    Ok(match u {
        CoordIndex::T(i) => Rational64::new(i, s as i64) + half,
        CoordIndex::H(i) => half - Rational64::new(i, m as i64),
        CoordIndex::Hhat(i) => half - Rational64::new(i, n as i64),
    })
}

/// `R^u_v`: `1 − s/m` for `u ∈ {t_0, ĥ_0}`, `v = t_{−s}`; `n/m + 1` for
/// `u = ĥ_0`, `v = ĥ_n`; `n/m − n/s` for `u = t_0`, `v = ĥ_n`; else 0.
pub fn r_entry(u: CoordIndex, v: CoordIndex, m: usize, n: usize, s: usize) -> Result<Rational64> {
    u.check(m, n)?;
    v.check(m, n)?;
    let (mi, ni, si) = (m as i64, n as i64, s as i64);
    let one = Rational64::from_integer(1);
    Ok(match (u, v) {
        (CoordIndex::T(0) | CoordIndex::Hhat(0), CoordIndex::T(i)) if i == -si => one - Rational64::new(si, mi),
        (CoordIndex::Hhat(0), CoordIndex::Hhat(k)) if k == ni => Rational64::new(ni, mi) + one,
        (CoordIndex::T(0), CoordIndex::Hhat(k)) if k == ni => Rational64::new(ni, mi) - Rational64::new(ni, si),
        _ => Rational64::from_integer(0),
    })
}

// ---------------------------------------------------------------------------
// Random test data

/// Random covector with coefficients on `ω ∈ [−m+1, K]`, `ω̂ ∈ [−K, n]`,
/// decaying by half per step away from the window edge.
pub fn random_covector(p: &Point, rng: &mut impl Rng, k: i64) -> Covector {
    let (m, n) = mn(p);
    let ns = p.n_samples();
    let mut g = |j: i64| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.5f64.powi(j as i32);
    let om: Vec<C64> = (0..=k + m - 1).map(&mut g).collect();
    let oh: Vec<C64> = (0..=k + n).rev().map(&mut g).collect();
    Covector::new(
        CircleSamples::from_coeffs(ns, p.phi, -m + 1, &om),
        CircleSamples::from_coeffs(ns, p.phi, -k, &oh),
    )
}

/// Random tangent vector with `ξ ∈ [−K, m−2]`, `ξ̂ ∈ [−n−1, K]`.
pub fn random_tangent(p: &Point, rng: &mut impl Rng, k: i64) -> TangentVec {
    let (m, n) = mn(p);
    let ns = p.n_samples();
    let mut g = |j: i64| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * 0.5f64.powi(j as i32);
    let xi: Vec<C64> = (0..=k + m - 2).rev().map(&mut g).collect();
    let xh: Vec<C64> = (0..=k + n + 1).map(&mut g).collect();
    TangentVec::new(
        CircleSamples::from_coeffs(ns, p.phi, -k, &xi),
        CircleSamples::from_coeffs(ns, p.phi, -n - 1, &xh),
    )
}

/// Largest deviation between two tangent vectors.
pub fn tangent_distance(a: &TangentVec, b: &TangentVec) -> f64 {
    a.sub(b).sup_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{random_point, ModelParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn configs() -> Vec<ModelParams> {
        vec![ModelParams::new(2, 1, 1), ModelParams::new(1, 1, 1), ModelParams::new(3, 2, 3)]
    }

    fn points(count: u64) -> Vec<Point> {
        let mut v = Vec::new();
        for params in configs() {
            for seed in 0..count {
                match random_point(&params, seed) {
                    Ok(p) => v.push(p),
                    Err(ManifoldError::Unsupported(..)) => {}
                    Err(e) => panic!("{e}"),
                }
            }
        }
        v
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn eta_round_trips() {
        for (k, p) in points(3).iter().enumerate() {
            let mut r = rng(k as u64);
            let w = random_covector(p, &mut r, 5);
            let back = eta_raise(p, &eta_lower(p, &w)).unwrap();
            assert!(back.kernel_distance(&w, p) < 1e-8, "{}", back.kernel_distance(&w, p));
            let t = random_tangent(p, &mut r, 5);
            let t2 = eta_lower(p, &eta_raise(p, &t).unwrap());
            assert!(tangent_distance(&t2, &t) < 1e-8, "{}", tangent_distance(&t2, &t));
        }
    }

    #[test]
    fn metric_matches_raised_pairing() {
        for (k, p) in points(3).iter().enumerate() {
            let mut r = rng(10 + k as u64);
            let t1 = random_tangent(p, &mut r, 5);
            let t2 = random_tangent(p, &mut r, 5);
            let g12 = metric(p, &t1, &t2).unwrap();
            let g21 = metric(p, &t2, &t1).unwrap();
            let via = pairing(&eta_raise(p, &t1).unwrap(), &t2);
            assert!((g12 - via).norm() < 1e-8, "{g12} vs {via}");
            assert!((g12 - g21).norm() < 1e-12);
        }
    }

    #[test]
    fn flat_pairing_table() {
        for p in points(2) {
            let idx = CoordIndex::all(p.m, p.n, -3..=2);
            let fields: Vec<_> = idx.iter().map(|&u| flat_field(&p, u).unwrap()).collect();
            for (a, fa) in idx.iter().zip(&fields) {
                for (b, fb) in idx.iter().zip(&fields) {
                    let g = metric(&p, fa, fb).unwrap();
                    let want = flat_metric_entry(*a, *b, p.m, p.n, p.s);
                    assert!((g - want).norm() < 1e-8, "{a} {b}: {g} vs {want}");
                }
            }
        }
    }

    #[test]
    fn unity_vector_is_image_of_unity_covector() {
        for p in points(3) {
            let e = unity_vector(&p).unwrap();
            let le = eta_lower(&p, &unity_covector(&p));
            assert!(tangent_distance(&e, &le) < 1e-10, "{}", tangent_distance(&e, &le));
        }
    }

    #[test]
    fn product_laws() {
        for (k, p) in points(3).iter().enumerate() {
            let mut r = rng(20 + k as u64);
            let w1 = random_covector(p, &mut r, 5);
            let w2 = random_covector(p, &mut r, 5);
            let w3 = random_covector(p, &mut r, 5);
            assert!(star(p, &w1, &w2).sub(&star(p, &w2, &w1)).sup_norm() < 1e-10);
            let lhs = star(p, &star(p, &w1, &w2), &w3);
            let rhs = star(p, &w1, &star(p, &w2, &w3));
            assert!(lhs.kernel_distance(&rhs, p) < 1e-8, "{}", lhs.kernel_distance(&rhs, p));
            let e = unity_covector(p);
            assert!(star(p, &e, &w1).kernel_distance(&w1, p) < 1e-10);
            assert!(star(p, &w1, &e).kernel_distance(&w1, p) < 1e-10);
        }
    }

    #[test]
    fn c_op_matches_star() {
        for (k, p) in points(3).iter().enumerate() {
            let mut r = rng(30 + k as u64);
            let t = random_tangent(p, &mut r, 5);
            let w = random_covector(p, &mut r, 5);
            let lhs = c_op(p, &t, &w).unwrap();
            let rhs = star(p, &eta_raise(p, &t).unwrap(), &w);
            assert!(lhs.kernel_distance(&rhs, p) < 1e-8, "{}", lhs.kernel_distance(&rhs, p));
            let e = unity_vector(p).unwrap();
            assert!(c_op(p, &e, &w).unwrap().kernel_distance(&w, p) < 1e-8);
        }
    }

    #[test]
    fn torsion_and_compatibility() {
        for (k, p) in points(2).iter().enumerate() {
            let mut r = rng(40 + k as u64);
            let c1 = RawCombo::random(p, &mut r);
            let c2 = RawCombo::random(p, &mut r);
            let c3 = RawCombo::random(p, &mut r);
            let n12 = nabla_vec(p, &c1, &c2).unwrap();
            let n21 = nabla_vec(p, &c2, &c1).unwrap();
            assert!(tangent_distance(&n12, &n21) < 1e-8);
            let lhs = directional(p, &c1, |q| metric(q, &c2.tangent(q), &c3.tangent(q))).unwrap();
            let n13 = nabla_vec(p, &c1, &c3).unwrap();
            let rhs = metric(p, &n12, &c3.tangent(p)).unwrap() + metric(p, &c2.tangent(p), &n13).unwrap();
            assert!((lhs - rhs).norm() < 1e-6 * (1.0 + lhs.norm()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn covariant_derivative_duality() {
        for (k, p) in points(2).iter().enumerate() {
            let mut r = rng(50 + k as u64);
            let c1 = RawCombo::random(p, &mut r);
            let c2 = RawCombo::random(p, &mut r);
            // a covector field depending on the point through a′ and â′
            let field = |q: &Point| -> Result<Covector> {
                let d = q.derived();
                let w = Covector::new(d.dahat.clip(q.phi, Bound::AtLeast(-(q.m as i64) + 1)), d.da.clip(q.phi, Bound::AtMost(q.n as i64)));
                Ok(w)
            };
            let lhs = directional(p, &c1, |q| Ok(pairing(&field(q)?, &c2.tangent(q)))).unwrap();
            let nw = nabla_form(p, &c1, field).unwrap();
            let rhs = pairing(&nw, &c2.tangent(p)) + pairing(&field(p).unwrap(), &nabla_vec(p, &c1, &c2).unwrap());
            assert!((lhs - rhs).norm() < 1e-6 * (1.0 + lhs.norm()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn eta_is_parallel() {
        for (k, p) in points(2).iter().enumerate() {
            let mut r = rng(60 + k as u64);
            let c1 = RawCombo::random(p, &mut r);
            let c2 = RawCombo::random(p, &mut r);
            let lhs = nabla_form(p, &c1, |q| eta_raise(q, &c2.tangent(q))).unwrap();
            let rhs = eta_raise(p, &nabla_vec(p, &c1, &c2).unwrap()).unwrap();
            assert!(lhs.kernel_distance(&rhs, p) < 1e-6, "{}", lhs.kernel_distance(&rhs, p));
        }
    }

    #[test]
    fn euler_routes_agree() {
        for p in points(3) {
            let e1 = euler(&p);
            let e2 = RawCombo::euler(&p).tangent(&p);
            assert!(tangent_distance(&e1, &e2) < 1e-12);
            // homogeneity: E·ζ + zζ′/m = ζ
            let d = p.derived();
            let lie = &e1.dzeta() + &(&(&d.z * &d.dzeta) * (1.0 / p.m as f64));
            assert!((&lie - &d.zeta).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn raw_tangent_round_trip() {
        for (k, p) in points(2).iter().enumerate() {
            let c = RawCombo::random(p, &mut rng(70 + k as u64));
            let back = RawCombo::from_tangent(p, &c.tangent(p));
            let err = c.to_vec().iter().zip(back.to_vec()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn mu_and_r_tables() {
        let half = Rational64::new(1, 2);
        assert_eq!(mu_of(CoordIndex::T(0), 2, 1, 1).unwrap(), half);
        assert_eq!(mu_of(CoordIndex::H(1), 2, 1, 1).unwrap(), Rational64::from_integer(0));
        assert_eq!(mu_of(CoordIndex::Hhat(1), 2, 1, 1).unwrap(), -half);
        assert_eq!(r_entry(CoordIndex::T(0), CoordIndex::T(-1), 2, 1, 1).unwrap(), half);
        assert_eq!(r_entry(CoordIndex::Hhat(0), CoordIndex::Hhat(1), 2, 1, 1).unwrap(), Rational64::new(3, 2));
        assert_eq!(r_entry(CoordIndex::T(0), CoordIndex::Hhat(1), 2, 1, 1).unwrap(), Rational64::new(-1, 2));
        assert_eq!(r_entry(CoordIndex::H(1), CoordIndex::T(-1), 2, 1, 1).unwrap(), Rational64::from_integer(0));
        assert!(mu_of(CoordIndex::H(2), 2, 1, 1).is_err());
        assert!(mu_of(CoordIndex::Hhat(2), 2, 1, 1).is_err());
    }

    #[test]
    fn intersection_form_laws() {
        for (k, p) in points(2).iter().enumerate() {
            let mut r = rng(80 + k as u64);
            let w1 = random_covector(p, &mut r, 5);
            let w2 = random_covector(p, &mut r, 5);
            let g12 = intersection_form(p, &w1, &w2);
            assert!((g12 - intersection_form(p, &w2, &w1)).norm() < 1e-10);
            let ge = intersection_form(p, &w1, &unity_covector(p));
            assert!((ge - pairing(&w1, &euler(p))).norm() < 1e-10);
        }
    }

    #[test]
    fn zero_inputs() {
        let p = random_point(&ModelParams::new(2, 1, 1), 0).unwrap();
        let ns = p.n_samples();
        assert_eq!(eta_lower(&p, &Covector::zero(ns)).sup_norm(), 0.0);
        assert_eq!(eta_raise(&p, &TangentVec::zero(ns)).unwrap().sup_norm(), 0.0);
    }

    #[test]
    fn coord_index_parse() {
        assert_eq!("t_-1".parse::<CoordIndex>().unwrap(), CoordIndex::T(-1));
        assert_eq!("hhat_0".parse::<CoordIndex>().unwrap(), CoordIndex::Hhat(0));
        assert_eq!(CoordIndex::H(3).to_string(), "h_3");
        assert!("x_1".parse::<CoordIndex>().is_err());
    }
}
