//! Loop space of the manifold: fields of points over a periodic grid in
//! `x`, the bracket `[f, g] = f_z g_x − g_z f_x`, the two Poisson tensors,
//! the Hamiltonians of the Whitham hierarchy, the Whitham and principal
//! flows, and a method-of-lines integrator with the dynamical checks built
//! on it.
//!
//! All nodes carry samples on the same circle Γ, so an `x`-derivative at
//! fixed `z` is a spectral derivative across nodes, one Γ-node at a time.
//! The splits `±` act along Γ and commute with both derivatives. The state
//! derivatives `a_x`, `â_x` are instead taken through the raw coordinates
//! and the chain rule for the moving center.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::coords::{self, d_theta, density_parts, gamma_ratio, rat, theta, DensityIndex, LogBranch};
use crate::geometry::{directional, random_covector, CoordIndex, RawCombo};
use crate::manifold::{self, pairing, validate, Covector, ManifoldError, ModelParams, Point, TangentVec};
use crate::series::{fourier, rechart_exact, synthesize, ChartTag, CircleSamples, SeriesError, Side};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

pub const DEFAULT_GRID: usize = 64;
/// Largest accepted spectral tail ratio of a loop field.
pub const SMOOTHNESS_LIMIT: f64 = 1e-6;
/// Step halvings tried before an evolution step is given up.
pub const MAX_HALVINGS: usize = 4;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("grid size {0} must be a power of two and at least 8")]
    Grid(usize),
    #[error("loop field not resolved in x (spectral tail ratio {0:.3e})")]
    NotSmooth(f64),
    #[error("node {node} invalid: {reason}")]
    InvalidNode { node: usize, reason: String },
    #[error("validity lost at step {step} after {halvings} step halvings")]
    ValidityLost { step: usize, halvings: usize },
    #[error("{0}")]
    Unsupported(String),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
}

impl From<SeriesError> for HierarchyError {
    fn from(e: SeriesError) -> Self {
        HierarchyError::Manifold(e.into())
    }
}

pub type Result<T> = std::result::Result<T, HierarchyError>;

// ---------------------------------------------------------------------------
// Spectral calculus in x

fn freq(j: usize, n: usize) -> f64 {
    if j < n / 2 {
        j as f64
    } else {
        j as f64 - n as f64
    }
}

/// Spectral derivative of a periodic sequence sampled at `x_j = 2πj/M`.
pub fn spectral_dx(values: &[C64]) -> Vec<C64> {
    let n = values.len();
    let mut f = fourier(values);
    for (j, c) in f.iter_mut().enumerate() {
        let k = if j == n / 2 { 0.0 } else { freq(j, n) };
        *c *= C64::new(0.0, k);
    }
    synthesize(&f)
}

/// Largest mode with `|k| ≥ M/4` relative to the largest nonconstant mode.
/// Sequences that are constant to rounding report 0.
pub fn spectral_tail(values: &[C64]) -> f64 {
    let (top, scale, mean) = tail_parts(values);
    if scale <= 1e-10 * mean.max(1.0) {
        0.0
    } else {
        top / scale
    }
}

fn tail_parts(values: &[C64]) -> (f64, f64, f64) {
    let n = values.len();
    let f = fourier(values);
    let mut top = 0.0f64;
    let mut scale = 0.0f64;
    for (j, c) in f.iter().enumerate().skip(1) {
        scale = scale.max(c.norm());
        if freq(j, n).abs() >= (n / 4) as f64 {
            top = top.max(c.norm());
        }
    }
    (top, scale, f[0].norm())
}

/// `∂_x` at fixed `z` of per-node samples, together with the spectral tail
/// ratio of the whole field.
fn dx_samples(field: &[CircleSamples]) -> (Vec<CircleSamples>, f64) {
    let mm = field.len();
    let ns = field[0].len();
    let mut out = vec![vec![ZERO; ns]; mm];
    let mut col = vec![ZERO; mm];
    let (mut top, mut scale, mut mean) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..ns {
        for j in 0..mm {
            col[j] = field[j].values[k];
        }
        let (t, s, m0) = tail_parts(&col);
        top = top.max(t);
        scale = scale.max(s);
        mean = mean.max(m0);
        for (j, v) in spectral_dx(&col).into_iter().enumerate() {
            out[j][k] = v;
        }
    }
    let tail = if scale <= 1e-10 * mean.max(1.0) { 0.0 } else { top / scale };
    (out.into_iter().map(CircleSamples::new).collect(), tail)
}

// ---------------------------------------------------------------------------
// Jets and the bracket

/// Samples on Γ of a function together with its `z`- and `x`-derivatives.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub v: CircleSamples,
    pub dz: CircleSamples,
    pub dx: CircleSamples,
}

impl Jet {
    pub fn plus(&self) -> Jet {
        Jet { v: self.v.plus(), dz: self.dz.plus(), dx: self.dx.plus() }
    }

    pub fn minus(&self) -> Jet {
        Jet { v: self.v.minus(), dz: self.dz.minus(), dx: self.dx.minus() }
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet { v: &self.v + &o.v, dz: &self.dz + &o.dz, dx: &self.dx + &o.dx }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet { v: &self.v - &o.v, dz: &self.dz - &o.dz, dx: &self.dx - &o.dx }
    }

    pub fn scale(&self, c: C64) -> Jet {
        Jet { v: self.v.scale(c), dz: self.dz.scale(c), dx: self.dx.scale(c) }
    }

    /// Product with the Leibniz rule in both variables.
    pub fn mul(&self, o: &Jet) -> Jet {
        Jet {
            v: &self.v * &o.v,
            dz: &(&self.dz * &o.v) + &(&self.v * &o.dz),
            dx: &(&self.dx * &o.v) + &(&self.v * &o.dx),
        }
    }
}

/// `[f, g] = f_z g_x − g_z f_x`.
pub fn bracket(f: &Jet, g: &Jet) -> CircleSamples {
    &(&f.dz * &g.dx) - &(&g.dz * &f.dx)
}

/// Jets of per-node samples: `d/dz` spectral on Γ, `∂_x` spectral across
/// nodes. Fails if the field is not resolved in `x`.
pub fn jets(values: Vec<CircleSamples>) -> Result<Vec<Jet>> {
    let (dx, tail) = dx_samples(&values);
    if tail > SMOOTHNESS_LIMIT {
        return Err(HierarchyError::NotSmooth(tail));
    }
    Ok(values.into_iter().zip(dx).map(|(v, dx)| Jet { dz: v.d_dz(), v, dx }).collect())
}

// ---------------------------------------------------------------------------
// Loop fields

/// A point of the loop space on the grid `x_j = 2πj/M`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopField {
    pub nodes: Vec<Point>,
}

impl LoopField {
    /// Checked constructor: grid size, validity of every node, smoothness.
    pub fn new(nodes: Vec<Point>) -> Result<Self> {
        let lf = LoopField { nodes };
        lf.check()?;
        Ok(lf)
    }

    pub fn unchecked(nodes: Vec<Point>) -> Self {
        LoopField { nodes }
    }

    pub fn from_fn(grid: usize, f: impl Fn(f64) -> Point) -> Result<Self> {
        check_grid(grid)?;
        LoopField::new((0..grid).map(|j| f(grid_x(grid, j))).collect())
    }

    /// The same point at every node.
    pub fn constant(p: &Point, grid: usize) -> Result<Self> {
        LoopField::from_fn(grid, |_| p.clone())
    }

    /// `raw(x) = raw₀ + ε(A cos x + B sin 2x)` with seeded complex `A`, `B`
    /// whose entries decay by 0.2 per exponent step away from the head of
    /// each window. Redraws until every node is valid.
    pub fn perturbed(base: &Point, grid: usize, eps: f64, seed: u64) -> Result<Self> {
        check_grid(grid)?;
        let raw0 = base.raw();
        let d = base.tail_depth;
        let weight = |c: usize| -> f64 {
            match c {
                0 => 1.0,
                c if c <= d + 1 => 0.2f64.powi((d + 1 - c) as i32),
                c => 0.2f64.powi((c - d - 2) as i32),
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = None;
        for _ in 0..20 {
            let mut draw = || -> Vec<C64> {
                (0..raw0.len())
                    .map(|c| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * weight(c))
                    .collect()
            };
            let (a, b) = (draw(), draw());
            let nodes: Vec<Point> = (0..grid)
                .map(|j| {
                    let x = grid_x(grid, j);
                    let raw: Vec<C64> =
                        (0..raw0.len()).map(|c| raw0[c] + (a[c] * x.cos() + b[c] * (2.0 * x).sin()) * eps).collect();
                    base.with_raw(&raw)
                })
                .collect();
            match LoopField::new(nodes) {
                Ok(lf) => return Ok(lf),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    pub fn grid_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn x(&self, j: usize) -> f64 {
        grid_x(self.grid_size(), j)
    }

    pub fn params(&self) -> ModelParams {
        let p = &self.nodes[0];
        ModelParams::new(p.m, p.n, p.s).with_tail_depth(p.tail_depth).with_samples(p.n_samples())
    }

    pub fn raw(&self) -> Vec<Vec<C64>> {
        self.nodes.iter().map(|p| p.raw()).collect()
    }

    pub fn with_raw(&self, raw: &[Vec<C64>]) -> LoopField {
        LoopField { nodes: self.nodes.iter().zip(raw).map(|(p, r)| p.with_raw(r)).collect() }
    }

    /// Largest [`spectral_tail`] over the raw components.
    pub fn smoothness(&self) -> f64 {
        let raw = self.raw();
        (0..raw[0].len())
            .map(|c| spectral_tail(&raw.iter().map(|r| r[c]).collect::<Vec<_>>()))
            .fold(0.0, f64::max)
    }

    pub fn check(&self) -> Result<()> {
        check_grid(self.grid_size())?;
        let bad = self.nodes.par_iter().enumerate().find_map_first(|(j, p)| {
            let rep = validate(p);
            (!rep.passed()).then(|| (j, rep.failures().join(", ")))
        });
        if let Some((node, reason)) = bad {
            return Err(HierarchyError::InvalidNode { node, reason });
        }
        let tail = self.smoothness();
        if tail > SMOOTHNESS_LIMIT {
            return Err(HierarchyError::NotSmooth(tail));
        }
        Ok(())
    }

    /// Spectral `∂_x` of the raw coordinates, as raw directions.
    pub fn raw_dx(&self) -> Vec<RawCombo> {
        let raw = self.raw();
        let cols: Vec<Vec<C64>> =
            (0..raw[0].len()).map(|c| spectral_dx(&raw.iter().map(|r| r[c]).collect::<Vec<_>>())).collect();
        self.nodes
            .iter()
            .enumerate()
            .map(|(j, p)| RawCombo::from_vec(p, &cols.iter().map(|col| col[j]).collect::<Vec<_>>()))
            .collect()
    }

    /// `(∂_x a, ∂_x â)` at fixed `z`: coefficient derivatives plus the
    /// chain term `−φ_x (tail)′` of the moving center.
    pub fn x_derivative(&self) -> Result<Vec<TangentVec>> {
        let tail = self.smoothness();
        if tail > SMOOTHNESS_LIMIT {
            return Err(HierarchyError::NotSmooth(tail));
        }
        Ok(self.nodes.par_iter().zip(self.raw_dx().par_iter()).map(|(p, c)| c.tangent(p)).collect())
    }

    /// Jets of `a` and `â` at every node.
    pub fn state_jets(&self) -> Result<Vec<(Jet, Jet)>> {
        let dx = self.x_derivative()?;
        Ok(self
            .nodes
            .iter()
            .zip(dx)
            .map(|(p, t)| {
                let d = p.derived();
                (
                    Jet { v: d.a.clone(), dz: d.da.clone(), dx: t.xi },
                    Jet { v: d.ahat.clone(), dz: d.dahat.clone(), dx: t.xihat },
                )
            })
            .collect())
    }

    /// `∫ f dx` by the trapezoid rule.
    pub fn integrate(&self, values: &[C64]) -> C64 {
        values.iter().sum::<C64>() * (2.0 * PI / values.len() as f64)
    }

    /// Largest raw coordinate.
    pub fn sup_norm(&self) -> f64 {
        self.raw().iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest raw coordinate difference.
    pub fn distance(&self, other: &LoopField) -> f64 {
        self.raw().iter().flatten().zip(other.raw().iter().flatten()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

fn grid_x(grid: usize, j: usize) -> f64 {
    2.0 * PI * j as f64 / grid as f64
}

fn check_grid(grid: usize) -> Result<()> {
    if grid < 8 || !grid.is_power_of_two() {
        return Err(HierarchyError::Grid(grid));
    }
    Ok(())
}

/// Covector field `w₀ + cos x·w₁ + sin 2x·w₂`; every node draws the same
/// coefficients in its own `(z−φ)` chart, so the field is smooth in `x`.
pub fn random_covector_field(lf: &LoopField, seed: u64, k: i64) -> Vec<Covector> {
    lf.nodes
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let x = lf.x(j);
            let draw = |s: u64| random_covector(p, &mut ChaCha8Rng::seed_from_u64(s), k);
            draw(seed).add(&draw(seed + 1).scale(C64::new(x.cos(), 0.0))).add(&draw(seed + 2).scale(C64::new((2.0 * x).sin(), 0.0)))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Poisson tensors

fn covector_jets(w: &[Covector]) -> Result<(Vec<Jet>, Vec<Jet>)> {
    let om = jets(w.iter().map(|c| c.omega.clone()).collect())?;
    let oh = jets(w.iter().map(|c| c.omegahat.clone()).collect())?;
    Ok((om, oh))
}

fn check_len(lf: &LoopField, w: &[Covector]) -> Result<()> {
    if w.len() != lf.grid_size() {
        return Err(HierarchyError::Unsupported(format!("{} covectors for {} nodes", w.len(), lf.grid_size())));
    }
    Ok(())
}

/// `P₁ω = ([ω,a]_− + [ω̂,â]_− − [ω_− + ω̂_−, a], −[ω,a]_+ − [ω̂,â]_+ + [ω_+ + ω̂_+, â])`.
pub fn p1_apply(lf: &LoopField, w: &[Covector]) -> Result<Vec<TangentVec>> {
    check_len(lf, w)?;
    let state = lf.state_jets()?;
    let (om, oh) = covector_jets(w)?;
    Ok((0..lf.grid_size())
        .into_par_iter()
        .map(|j| {
            let (a, ah) = &state[j];
            let ba = bracket(&om[j], a);
            let bh = bracket(&oh[j], ah);
            let lower = om[j].minus().add(&oh[j].minus());
            let upper = om[j].plus().add(&oh[j].plus());
            let xi = &(&ba.minus() + &bh.minus()) - &bracket(&lower, a);
            let xihat = &bracket(&upper, ah) - &(&ba.plus() + &bh.plus());
            TangentVec::new(xi, xihat)
        })
        .collect())
}

/// `P₂ω` with `B = [ω,a] + [ω̂,â]`, `g = ωa + ω̂â`,
/// `σ = (1/m)(1/2πi)∮_Γ B dz`:
/// `(B_− a − [g_−, a] − σa′, −B_+ â + [g_+, â] − σâ′)`.
pub fn p2_apply(lf: &LoopField, w: &[Covector]) -> Result<Vec<TangentVec>> {
    check_len(lf, w)?;
    let m = lf.nodes[0].m as f64;
    let state = lf.state_jets()?;
    let (om, oh) = covector_jets(w)?;
    Ok((0..lf.grid_size())
        .into_par_iter()
        .map(|j| {
            let (a, ah) = &state[j];
            let b = &bracket(&om[j], a) + &bracket(&oh[j], ah);
            let sigma = b.contour_integral() / m;
            let g = om[j].mul(a).add(&oh[j].mul(ah));
            let xi = &(&(&b.minus() * &a.v) - &bracket(&g.minus(), a)) - &(&a.dz * sigma);
            let xihat = &(&bracket(&g.plus(), ah) - &(&b.plus() * &ah.v)) - &(&ah.dz * sigma);
            TangentVec::new(xi, xihat)
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tensor {
    P1,
    P2,
}

/// `|∫(⟨w₁, P w₂⟩ + ⟨w₂, P w₁⟩) dx|`.
pub fn antisymmetry_residual(lf: &LoopField, tensor: Tensor, w1: &[Covector], w2: &[Covector]) -> Result<f64> {
    let apply = |w: &[Covector]| match tensor {
        Tensor::P1 => p1_apply(lf, w),
        Tensor::P2 => p2_apply(lf, w),
    };
    let (pw1, pw2) = (apply(w1)?, apply(w2)?);
    let dens: Vec<C64> = (0..lf.grid_size()).map(|j| pairing(&w1[j], &pw2[j]) + pairing(&w2[j], &pw1[j])).collect();
    Ok(lf.integrate(&dens).norm())
}

// ---------------------------------------------------------------------------
// Hamiltonians

/// `H_k = −(m/k)∫Res_∞ λ^k dx` and `Ĥ_k = (n/k)∫Res_φ λ̂^k dx`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HamiltonianIndex {
    H(usize),
    Hhat(usize),
}

impl fmt::Display for HamiltonianIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamiltonianIndex::H(k) => write!(f, "H_{k}"),
            HamiltonianIndex::Hhat(k) => write!(f, "Hhat_{k}"),
        }
    }
}

impl HamiltonianIndex {
    fn k(&self) -> usize {
        match *self {
            HamiltonianIndex::H(k) | HamiltonianIndex::Hhat(k) => k,
        }
    }

    fn check(&self) -> manifold::Result<()> {
        if self.k() == 0 {
            return Err(ManifoldError::Index(format!("{self}: k must be positive")));
        }
        Ok(())
    }
}

/// `a^α` as a series at infinity, `λ^k` for `α = k/m`.
fn a_power_at_infinity(pt: &Point, alpha: f64) -> manifold::Result<crate::series::TruncatedSeries> {
    let d = pt.derived();
    let a_inf = rechart_exact(&pt.a_series(), ChartTag::AtInfinity, d.depth)?;
    Ok(a_inf.power(Side::Top, alpha, d.depth as usize)?)
}

/// `â^β` at φ with the principal branch of `â_{−n}^β`.
fn ahat_power_at_pole(pt: &Point, beta: f64) -> manifold::Result<crate::series::TruncatedSeries> {
    Ok(pt.ahat.power(Side::Bottom, beta, pt.derived().depth as usize)?)
}

/// The Hamiltonian density at one point.
pub fn hamiltonian_density(pt: &Point, h: HamiltonianIndex) -> manifold::Result<C64> {
    h.check()?;
    let k = h.k() as f64;
    match h {
        HamiltonianIndex::H(_) => {
            let m = pt.m as f64;
            Ok(-a_power_at_infinity(pt, k / m)?.residue()? * (m / k))
        }
        HamiltonianIndex::Hhat(_) => {
            let n = pt.n as f64;
            Ok(ahat_power_at_pole(pt, k / n)?.residue()? * (n / k))
        }
    }
}

/// Variational gradient: `(a^{k/m−1}, 0)` and `(0, â^{k/n−1})`, clipped to
/// the covector windows.
pub fn hamiltonian_gradient(pt: &Point, h: HamiltonianIndex) -> manifold::Result<Covector> {
    h.check()?;
    let k = h.k() as f64;
    let ns = pt.n_samples();
    let w = match h {
        HamiltonianIndex::H(_) => {
            let la = coords::log_a_normalized(pt)?;
            Covector::new(coords::pow_a(pt, &la, k / pt.m as f64 - 1.0), CircleSamples::zeros(ns))
        }
        HamiltonianIndex::Hhat(_) => {
            let lh = coords::log_ahat_normalized(pt)?;
            Covector::new(CircleSamples::zeros(ns), coords::pow_ahat(pt, &lh, k / pt.n as f64 - 1.0))
        }
    };
    Ok(w.clip(pt))
}

pub fn hamiltonian(lf: &LoopField, h: HamiltonianIndex) -> Result<C64> {
    LoopFunctional::hamiltonian(h).value(lf)
}

type DensityFn = Arc<dyn Fn(&Point) -> manifold::Result<C64> + Send + Sync>;
type GradientFn = Arc<dyn Fn(&Point) -> manifold::Result<Covector> + Send + Sync>;

/// A local functional `∫ f dx` with its density and variational gradient.
#[derive(Clone)]
pub struct LoopFunctional {
    pub name: String,
    density: DensityFn,
    gradient: GradientFn,
}

impl fmt::Debug for LoopFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LoopFunctional").field("name", &self.name).finish()
    }
}

impl LoopFunctional {
    pub fn new(name: impl Into<String>, density: DensityFn, gradient: GradientFn) -> Self {
        LoopFunctional { name: name.into(), density, gradient }
    }

    pub fn theta(di: DensityIndex) -> Self {
        LoopFunctional::new(di.to_string(), Arc::new(move |p| theta(p, di)), Arc::new(move |p| d_theta(p, di)))
    }

    pub fn hamiltonian(h: HamiltonianIndex) -> Self {
        LoopFunctional::new(
            h.to_string(),
            Arc::new(move |p| hamiltonian_density(p, h)),
            Arc::new(move |p| hamiltonian_gradient(p, h)),
        )
    }

    pub fn density(&self, p: &Point) -> manifold::Result<C64> {
        (self.density)(p)
    }

    pub fn gradient(&self, p: &Point) -> manifold::Result<Covector> {
        (self.gradient)(p)
    }

    pub fn densities(&self, lf: &LoopField) -> Result<Vec<C64>> {
        Ok(lf.nodes.par_iter().map(|p| self.density(p)).collect::<manifold::Result<Vec<_>>>()?)
    }

    pub fn gradients(&self, lf: &LoopField) -> Result<Vec<Covector>> {
        Ok(lf.nodes.par_iter().map(|p| self.gradient(p)).collect::<manifold::Result<Vec<_>>>()?)
    }

    pub fn value(&self, lf: &LoopField) -> Result<C64> {
        Ok(lf.integrate(&self.densities(lf)?))
    }

    /// `|∂_c f − ⟨df, ∂_c⟩|` at a point along a raw direction.
    pub fn gradient_residual(&self, p: &Point, dir: &RawCombo) -> Result<f64> {
        let fd = directional(p, dir, |q| self.density(q))?;
        Ok((fd - pairing(&self.gradient(p)?, &dir.tangent(p))).norm())
    }
}

// ---------------------------------------------------------------------------
// Flows

/// `S(k)`: `∂/∂s_k`; `Shat(k)`: `∂/∂ŝ_k`; `Shat0`: the logarithmic flow;
/// `Principal(u, p)`: `∂/∂T^{u,p}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FlowIndex {
    S(usize),
    Shat(usize),
    Shat0,
    Principal(CoordIndex, usize),
}

impl FlowIndex {
    pub fn check(&self, m: usize, n: usize) -> Result<()> {
        match *self {
            FlowIndex::S(0) | FlowIndex::Shat(0) => Err(HierarchyError::Unsupported(format!("{self}: k must be positive"))),
            FlowIndex::Principal(u, _) => Ok(u.check(m, n)?),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for FlowIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowIndex::S(k) => write!(f, "s{k}"),
            FlowIndex::Shat(k) => write!(f, "shat{k}"),
            FlowIndex::Shat0 => write!(f, "shat0"),
            FlowIndex::Principal(u, p) => write!(f, "{u}:{p}"),
        }
    }
}

impl FromStr for FlowIndex {
    type Err = String;

    /// `s<k>`, `shat<k>`, `shat0`, or `<coordinate>:<level>` such as `hhat_1:0`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        let bad = || format!("unrecognized flow '{s}' (expected s<k>, shat<k>, shat0 or <u>:<p>)");
        if let Some((u, p)) = t.split_once(':') {
            let u: CoordIndex = u.trim().parse().map_err(|_| bad())?;
            let p: usize = p.trim().parse().map_err(|_| bad())?;
            return Ok(FlowIndex::Principal(u, p));
        }
        let lower = t.to_ascii_lowercase();
        if let Some(k) = lower.strip_prefix("shat") {
            let k: usize = k.parse().map_err(|_| bad())?;
            return Ok(if k == 0 { FlowIndex::Shat0 } else { FlowIndex::Shat(k) });
        }
        if let Some(k) = lower.strip_prefix('s') {
            let k: usize = k.parse().map_err(|_| bad())?;
            if k > 0 {
                return Ok(FlowIndex::S(k));
            }
        }
        Err(bad())
    }
}

/// Generator `f` of a Whitham flow `∂(a, â) = ([f, a], [f, â])` at every
/// node. For the logarithmic flow only the derivatives of
/// `f = log(z−φ)` are meaningful; `v` holds principal values.
pub fn whitham_generator(lf: &LoopField, fl: FlowIndex) -> Result<Vec<Jet>> {
    let p0 = &lf.nodes[0];
    fl.check(p0.m, p0.n)?;
    let ns = p0.n_samples();
    let z = CircleSamples::identity(ns);
    match fl {
        FlowIndex::S(k) => {
            // (λ^k)_+ is a polynomial in z
            let polys = lf
                .nodes
                .par_iter()
                .map(|p| {
                    let s = a_power_at_infinity(p, k as f64 / p.m as f64)?;
                    Ok((0..=k as i64).map(|j| s.coeff(j)).collect::<Vec<_>>())
                })
                .collect::<manifold::Result<Vec<_>>>()?;
            let vals = polys.iter().map(|c| z.map(|zz| horner(c, zz))).collect();
            jets(vals)
        }
        FlowIndex::Shat(k) => {
            // −(λ̂^k)_−, exponents −k..−1 in (z−φ)
            let vals = lf
                .nodes
                .par_iter()
                .map(|p| {
                    let s = ahat_power_at_pole(p, k as f64 / p.n as f64)?;
                    let c: Vec<C64> = (-(k as i64)..=-1).map(|j| -s.coeff(j)).collect();
                    Ok(CircleSamples::from_coeffs(ns, p.phi, -(k as i64), &c))
                })
                .collect::<manifold::Result<Vec<_>>>()?;
            jets(vals)
        }
        FlowIndex::Shat0 => {
            let tail = lf.smoothness();
            if tail > SMOOTHNESS_LIMIT {
                return Err(HierarchyError::NotSmooth(tail));
            }
            Ok(lf
                .nodes
                .iter()
                .zip(lf.raw_dx())
                .map(|(p, c)| {
                    let inv = p.derived().w.recip();
                    Jet { v: p.derived().w.map(|w| w.ln()), dx: &inv * (-c.dphi), dz: inv }
                })
                .collect())
        }
        FlowIndex::Principal(..) => Err(HierarchyError::Unsupported(format!("{fl} is not a Whitham flow"))),
    }
}

fn horner(c: &[C64], z: C64) -> C64 {
    c.iter().rev().fold(ZERO, |acc, ci| acc * z + ci)
}

/// Right-hand side of a flow at every node.
pub fn flow_rhs(lf: &LoopField, fl: FlowIndex) -> Result<Vec<TangentVec>> {
    let p0 = &lf.nodes[0];
    fl.check(p0.m, p0.n)?;
    match fl {
        FlowIndex::Principal(u, p) => {
            let w = LoopFunctional::theta(DensityIndex::new(u, p + 1)).gradients(lf)?;
            p1_apply(lf, &w)
        }
        _ => {
            let f = whitham_generator(lf, fl)?;
            let state = lf.state_jets()?;
            Ok(f.iter().zip(&state).map(|(f, (a, ah))| TangentVec::new(bracket(f, a), bracket(f, ah))).collect())
        }
    }
}

/// A Whitham flow computed on `λ = a^{1/m}`, `λ̂ = â^{1/n}` and pushed
/// forward: `(mλ^{m−1}[f, λ], nλ̂^{n−1}[f, λ̂])`.
pub fn whitham_via_lambda(lf: &LoopField, fl: FlowIndex) -> Result<Vec<TangentVec>> {
    let f = whitham_generator(lf, fl)?;
    let (lam, lamh) = lf
        .nodes
        .par_iter()
        .map(|p| {
            let la = coords::log_a_normalized(p)?;
            let lh = coords::log_ahat_normalized(p)?;
            Ok((coords::pow_a(p, &la, 1.0 / p.m as f64), coords::pow_ahat(p, &lh, 1.0 / p.n as f64)))
        })
        .collect::<manifold::Result<Vec<_>>>()?
        .into_iter()
        .unzip::<_, _, Vec<_>, Vec<_>>();
    let (lam, lamh) = (jets(lam)?, jets(lamh)?);
    Ok((0..lf.grid_size())
        .map(|j| {
            let p = &lf.nodes[j];
            let (m, n) = (p.m as i32, p.n as i32);
            let xi = &(&lam[j].v.powi(m - 1) * &bracket(&f[j], &lam[j])) * m as f64;
            let xihat = &(&lamh[j].v.powi(n - 1) * &bracket(&f[j], &lamh[j])) * n as f64;
            TangentVec::new(xi, xihat)
        })
        .collect())
}

/// `P₁ dθ_{u,p}` through the density of level `p−1`:
/// `(−[(Q_{u,p−1})_−, a], [(Q_{u,p−1})_+, â])`.
pub fn p1_theta_via_density(lf: &LoopField, di: DensityIndex) -> Result<Vec<TangentVec>> {
    if di.p == 0 {
        return Err(HierarchyError::Unsupported("level 0 has no lower density".into()));
    }
    let lower = DensityIndex::new(di.u, di.p - 1);
    let q = lf
        .nodes
        .par_iter()
        .map(|p| Ok(density_parts(p, lower, LogBranch::Direct)?.q))
        .collect::<manifold::Result<Vec<_>>>()?;
    let q = jets(q)?;
    let state = lf.state_jets()?;
    Ok(q.iter()
        .zip(&state)
        .map(|(q, (a, ah))| TangentVec::new(-&bracket(&q.minus(), a), bracket(&q.plus(), ah)))
        .collect())
}

/// Closed form of `∂/∂T^{t_i,0}` (`i ≠ −s`) with `ζ = a − â`:
/// `a_t = −[ζ^{i/s}ζ′]_− a_x + [ζ^{i/s}ζ_x]_− a′`,
/// `â_t = [ζ^{i/s}ζ′]_+ â_x − [ζ^{i/s}ζ_x]_+ â′`.
pub fn example_t_flow(lf: &LoopField, i: i64) -> Result<Vec<TangentVec>> {
    let s = lf.nodes[0].s as i64;
    if i == -s {
        return Err(HierarchyError::Unsupported("use example_log_flow for t_{-s}".into()));
    }
    explicit_flow(lf, |p, zx| {
        let d = p.derived();
        let zi = crate::series::power_on_circle(&d.zeta, i as f64 / s as f64, false)?;
        Ok((&zi * &d.dzeta, &zi * zx))
    })
}

/// Closed form of `∂/∂T^{t_{−s},0}`: the kernels
/// `ζ′/ζ − s a′/(m a)` and `ζ_x/ζ − s a_x/(m a)`.
pub fn example_log_flow(lf: &LoopField) -> Result<Vec<TangentVec>> {
    let state = lf.state_jets()?;
    let mut j = 0usize;
    explicit_flow(lf, move |p, zx| {
        let d = p.derived();
        let r = p.s as f64 / p.m as f64;
        let ax = &state[j].0.dx;
        j += 1;
        let inv_z = d.zeta.recip();
        let inv_a = d.a.recip();
        let kz = &(&d.dzeta * &inv_z) - &(&(&d.da * &inv_a) * r);
        let kx = &(zx * &inv_z) - &(&(ax * &inv_a) * r);
        Ok((kz, kx))
    })
}

/// `(−K_z^− a_x + K_x^− a′, K_z^+ â_x − K_x^+ â′)` for kernels `(K_z, K_x)`
/// built per node from `ζ_x`.
fn explicit_flow(
    lf: &LoopField,
    mut kernels: impl FnMut(&Point, &CircleSamples) -> manifold::Result<(CircleSamples, CircleSamples)>,
) -> Result<Vec<TangentVec>> {
    let state = lf.state_jets()?;
    let mut out = Vec::with_capacity(lf.grid_size());
    for (p, (a, ah)) in lf.nodes.iter().zip(&state) {
        let zx = &a.dx - &ah.dx;
        let (kz, kx) = kernels(p, &zx)?;
        let xi = &(&kx.minus() * &a.dz) - &(&kz.minus() * &a.dx);
        let xihat = &(&kz.plus() * &ah.dx) - &(&kx.plus() * &ah.dz);
        out.push(TangentVec::new(xi, xihat));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Time evolution

/// Flow velocity in raw coordinates at every node.
pub fn raw_rhs(lf: &LoopField, fl: FlowIndex) -> Result<Vec<Vec<C64>>> {
    let t = flow_rhs(lf, fl)?;
    Ok(lf.nodes.par_iter().zip(t.par_iter()).map(|(p, t)| RawCombo::from_tangent(p, t).to_vec()).collect())
}

fn axpy(raw: &[Vec<C64>], k: &[Vec<C64>], h: f64) -> Vec<Vec<C64>> {
    raw.iter().zip(k).map(|(r, k)| r.iter().zip(k).map(|(r, k)| r + k * h).collect()).collect()
}

/// One explicit Euler step, unchecked.
pub fn euler_step(lf: &LoopField, fl: FlowIndex, dt: f64) -> Result<LoopField> {
    Ok(lf.with_raw(&axpy(&lf.raw(), &raw_rhs(lf, fl)?, dt)))
}

/// One classical Runge–Kutta step, unchecked.
pub fn rk4_step(lf: &LoopField, fl: FlowIndex, dt: f64) -> Result<LoopField> {
    let u = lf.raw();
    let k1 = raw_rhs(lf, fl)?;
    let k2 = raw_rhs(&lf.with_raw(&axpy(&u, &k1, dt / 2.0)), fl)?;
    let k3 = raw_rhs(&lf.with_raw(&axpy(&u, &k2, dt / 2.0)), fl)?;
    let k4 = raw_rhs(&lf.with_raw(&axpy(&u, &k3, dt)), fl)?;
    let next: Vec<Vec<C64>> = (0..u.len())
        .map(|j| {
            (0..u[j].len()).map(|c| u[j][c] + (k1[j][c] + (k2[j][c] + k3[j][c]) * 2.0 + k4[j][c]) * (dt / 6.0)).collect()
        })
        .collect();
    Ok(lf.with_raw(&next))
}

/// Checked step of size `dt`; on failure the step is retried as 2, 4, …
/// substeps, up to [`MAX_HALVINGS`] halvings.
fn checked_step(lf: &LoopField, fl: FlowIndex, dt: f64, step: usize) -> Result<LoopField> {
    for halving in 0..=MAX_HALVINGS {
        let parts = 1usize << halving;
        let h = dt / parts as f64;
        let mut cur = lf.clone();
        let mut ok = true;
        for _ in 0..parts {
            match rk4_step(&cur, fl, h).and_then(|next| next.check().map(|_| next)) {
                Ok(next) => cur = next,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(cur);
        }
    }
    Err(HierarchyError::ValidityLost { step, halvings: MAX_HALVINGS })
}

pub fn evolve(lf: &LoopField, fl: FlowIndex, dt: f64, steps: usize) -> Result<LoopField> {
    evolve_observed(lf, fl, dt, steps, |_, _, _| Ok(()))
}

/// [`evolve`] calling `observe(step, time, field)` on the initial field and
/// after every step.
pub fn evolve_observed(
    lf: &LoopField,
    fl: FlowIndex,
    dt: f64,
    steps: usize,
    mut observe: impl FnMut(usize, f64, &LoopField) -> Result<()>,
) -> Result<LoopField> {
    let p0 = &lf.nodes[0];
    fl.check(p0.m, p0.n)?;
    let mut cur = lf.clone();
    observe(0, 0.0, &cur)?;
    for step in 1..=steps {
        cur = checked_step(&cur, fl, dt, step)?;
        observe(step, step as f64 * dt, &cur)?;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Checks

/// `‖Φ¹Φ² − Φ²Φ¹‖/dt²` for explicit Euler maps `Φ = id + dt·F`. The value
/// is `‖[F₁, F₂]‖ + O(dt)`, so it halves with `dt` for commuting flows.
pub fn check_commutativity(lf: &LoopField, f1: FlowIndex, f2: FlowIndex, dt: f64) -> Result<f64> {
    if f1 == f2 {
        return Ok(0.0);
    }
    let a = euler_step(&euler_step(lf, f2, dt)?, f1, dt)?;
    let b = euler_step(&euler_step(lf, f1, dt)?, f2, dt)?;
    Ok(a.distance(&b) / (dt * dt))
}

/// Commutativity residuals at `dt, dt/2, dt/4`.
pub fn commutativity_sequence(lf: &LoopField, f1: FlowIndex, f2: FlowIndex, dt: f64) -> Result<[f64; 3]> {
    Ok([
        check_commutativity(lf, f1, f2, dt)?,
        check_commutativity(lf, f1, f2, dt / 2.0)?,
        check_commutativity(lf, f1, f2, dt / 4.0)?,
    ])
}

/// Flow of the density `θ_{u,p}` in the principal hierarchy: `∂/∂T^{u,p}`.
pub fn principal_flow(di: DensityIndex) -> FlowIndex {
    FlowIndex::Principal(di.u, di.p)
}

/// `∂θ/∂T` at every node by a central difference of RK4 steps `±dt`.
pub fn density_rate(lf: &LoopField, di: DensityIndex, fl: FlowIndex, dt: f64) -> Result<Vec<C64>> {
    let f = LoopFunctional::theta(di);
    let fwd = f.densities(&rk4_step(lf, fl, dt)?)?;
    let bwd = f.densities(&rk4_step(lf, fl, -dt)?)?;
    Ok(fwd.iter().zip(&bwd).map(|(a, b)| (a - b) / (2.0 * dt)).collect())
}

/// `∂θ/∂T = ⟨dθ, ∂/∂T⟩` at every node.
pub fn density_rate_pairing(lf: &LoopField, di: DensityIndex, fl: FlowIndex) -> Result<Vec<C64>> {
    let w = LoopFunctional::theta(di).gradients(lf)?;
    let t = flow_rhs(lf, fl)?;
    Ok(w.iter().zip(&t).map(|(w, t)| pairing(w, t)).collect())
}

/// Nodewise `max |∂θ₁/∂T^{d₂} − ∂θ₂/∂T^{d₁}|`.
pub fn check_tau_symmetry(lf: &LoopField, d1: DensityIndex, d2: DensityIndex, dt: f64) -> Result<f64> {
    if d1 == d2 {
        return Ok(0.0);
    }
    let l = density_rate(lf, d1, principal_flow(d2), dt)?;
    let r = density_rate(lf, d2, principal_flow(d1), dt)?;
    Ok(l.iter().zip(&r).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
}

/// Largest nodewise deviation between two vector fields on the loop.
pub fn field_distance(a: &[TangentVec], b: &[TangentVec]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a.sub(b).sup_norm()).fold(0.0, f64::max)
}

/// `max_j ‖P₁ dH_{k+m} − P₂ dH_k‖` (or the hatted version with `n`).
pub fn recursion_residual(lf: &LoopField, h: HamiltonianIndex) -> Result<f64> {
    let p = &lf.nodes[0];
    let upper = match h {
        HamiltonianIndex::H(k) => HamiltonianIndex::H(k + p.m),
        HamiltonianIndex::Hhat(k) => HamiltonianIndex::Hhat(k + p.n),
    };
    let lhs = p1_apply(lf, &LoopFunctional::hamiltonian(upper).gradients(lf)?)?;
    let rhs = p2_apply(lf, &LoopFunctional::hamiltonian(h).gradients(lf)?)?;
    Ok(field_distance(&lhs, &rhs))
}

/// Whitham flow against its first Hamiltonian form: `S(k)` with
/// `P₁ dH_{k+m}`, `Shat(k)` with `P₁ dĤ_{k+n}`.
pub fn whitham_hamiltonian_residual(lf: &LoopField, fl: FlowIndex) -> Result<f64> {
    let p = &lf.nodes[0];
    let h = match fl {
        FlowIndex::S(k) => HamiltonianIndex::H(k + p.m),
        FlowIndex::Shat(k) => HamiltonianIndex::Hhat(k + p.n),
        _ => return Err(HierarchyError::Unsupported(format!("{fl} has no polynomial Hamiltonian"))),
    };
    let lhs = flow_rhs(lf, fl)?;
    let rhs = p1_apply(lf, &LoopFunctional::hamiltonian(h).gradients(lf)?)?;
    Ok(field_distance(&lhs, &rhs))
}

/// `max_j ‖n·∂/∂ŝ₀ − ∂/∂T^{ĥ_n,0}‖`.
pub fn log_flow_residual(lf: &LoopField) -> Result<f64> {
    let n = lf.nodes[0].n;
    let lhs: Vec<TangentVec> =
        flow_rhs(lf, FlowIndex::Shat0)?.iter().map(|t| t.scale(C64::new(n as f64, 0.0))).collect();
    let rhs = flow_rhs(lf, FlowIndex::Principal(CoordIndex::Hhat(n as i64), 0))?;
    Ok(field_distance(&lhs, &rhs))
}

/// `Π_{j=1}^{p}(j − i/d) = Γ(1+p−i/d)/Γ(1−i/d)`.
fn rising(i: i64, d: i64, p: usize) -> f64 {
    if p == 0 {
        1.0
    } else {
        rat(gamma_ratio(i, d, p - 1).recip())
    }
}

/// One entry of the Hamiltonian/density identification table.
#[derive(Clone, Debug, PartialEq)]
pub struct Identification {
    pub hamiltonian: HamiltonianIndex,
    pub lhs: C64,
    pub rhs: C64,
}

impl Identification {
    pub fn residual(&self) -> f64 {
        (self.lhs - self.rhs).norm()
    }
}

/// For `p ≤ max_p`: `H_{m(p+1)−i}` against `∫θ_{h_i,p}`, `H_{m(p+1)}`
/// against `p!(∫θ_{t_0,p} + ∫θ_{ĥ_0,p})`, `Ĥ_{n(p+1)−i}` against `∫θ_{ĥ_i,p}`.
pub fn hamiltonian_identification(lf: &LoopField, max_p: usize) -> Result<Vec<Identification>> {
    let p0 = &lf.nodes[0];
    let (m, n) = (p0.m as i64, p0.n as i64);
    let integral = |u: CoordIndex, p: usize| LoopFunctional::theta(DensityIndex::new(u, p)).value(lf);
    let mut out = Vec::new();
    for p in 0..=max_p {
        for i in 1..m {
            let h = HamiltonianIndex::H((m * (p as i64 + 1) - i) as usize);
            out.push(Identification { hamiltonian: h, lhs: hamiltonian(lf, h)?, rhs: integral(CoordIndex::H(i), p)? * rising(i, m, p) });
        }
        let h = HamiltonianIndex::H((m * (p as i64 + 1)) as usize);
        let fact: f64 = (1..=p).map(|k| k as f64).product();
        let rhs = (integral(CoordIndex::T(0), p)? + integral(CoordIndex::Hhat(0), p)?) * fact;
        out.push(Identification { hamiltonian: h, lhs: hamiltonian(lf, h)?, rhs });
        for i in 0..n {
            let h = HamiltonianIndex::Hhat((n * (p as i64 + 1) - i) as usize);
            out.push(Identification { hamiltonian: h, lhs: hamiltonian(lf, h)?, rhs: integral(CoordIndex::Hhat(i), p)? * rising(i, n, p) });
        }
    }
    Ok(out)
}

/// `|H(T) − H(0)|` along `steps` RK4 steps of a flow.
pub fn hamiltonian_drift(lf: &LoopField, fl: FlowIndex, h: HamiltonianIndex, dt: f64, steps: usize) -> Result<f64> {
    let h0 = hamiltonian(lf, h)?;
    let end = evolve(lf, fl, dt, steps)?;
    Ok((hamiltonian(&end, h)? - h0).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::random_point;

    fn params() -> Vec<ModelParams> {
        vec![ModelParams::new(2, 1, 1), ModelParams::new(1, 1, 1)]
    }

    fn field(pr: &ModelParams, seed: u64) -> LoopField {
        let p = random_point(pr, seed).unwrap();
        LoopField::perturbed(&p, DEFAULT_GRID, 0.01, seed).unwrap()
    }

    #[test]
    fn spectral_dx_of_trig() {
        let m = 64;
        let v: Vec<C64> = (0..m).map(|j| C64::new((3.0 * grid_x(m, j)).sin(), 0.0)).collect();
        let d = spectral_dx(&v);
        for j in 0..m {
            assert!((d[j].re - 3.0 * (3.0 * grid_x(m, j)).cos()).abs() < 1e-12);
        }
        assert!(spectral_tail(&v) < 1e-14);
    }

    #[test]
    fn x_independent_field_has_zero_derivative() {
        let p = random_point(&ModelParams::new(2, 1, 1), 3).unwrap();
        let lf = LoopField::constant(&p, 16).unwrap();
        for t in lf.x_derivative().unwrap() {
            assert!(t.sup_norm() < 1e-14);
        }
    }

    #[test]
    fn moving_center_chain_term() {
        // φ(x) = φ₀ + 0.1 cos x with frozen coefficients: a_x = 0.1 sin x · (a − z^m)′
        let p = random_point(&ModelParams::new(2, 1, 1), 4).unwrap();
        let lf = LoopField::from_fn(32, |x| {
            let mut r = p.raw();
            r[0] += C64::new(0.1 * x.cos(), 0.0);
            p.with_raw(&r)
        })
        .unwrap();
        let dx = lf.x_derivative().unwrap();
        for (j, q) in lf.nodes.iter().enumerate() {
            let tail_prime = q.a_tail.d_dz().eval_on_circle(q.n_samples());
            let want = &tail_prime * (0.1 * lf.x(j).sin());
            assert!((&dx[j].xi - &want).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn x_derivative_matches_finite_differences() {
        // 8th-order centered differences of the closed-form loop, off grid
        let p = random_point(&ModelParams::new(2, 1, 1), 5).unwrap();
        let lf = LoopField::perturbed(&p, 32, 0.05, 9).unwrap();
        let raw0 = lf.raw();
        // recover the loop as a trigonometric interpolant of the nodes
        let at = |x: f64| -> Point {
            let mm = raw0.len();
            let r: Vec<C64> = (0..raw0[0].len())
                .map(|c| {
                    let f = fourier(&raw0.iter().map(|r| r[c]).collect::<Vec<_>>());
                    (0..mm).filter(|&j| j != mm / 2).map(|j| f[j] * C64::from_polar(1.0, freq(j, mm) * x)).sum()
                })
                .collect();
            p.with_raw(&r)
        };
        let h = 1e-2;
        let w = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
        let dx = lf.x_derivative().unwrap();
        for j in [0usize, 7, 19] {
            let x = lf.x(j);
            let mut fd = CircleSamples::zeros(p.n_samples());
            for (k, wk) in w.iter().enumerate() {
                let s = (k + 1) as f64 * h;
                fd = &fd + &(&(&at(x + s).derived().a - &at(x - s).derived().a) * (wk / h));
            }
            assert!((&fd - &dx[j].xi).sup_norm() < 1e-6, "node {j}: {}", (&fd - &dx[j].xi).sup_norm());
        }
    }

    #[test]
    fn bracket_identities() {
        let lf = field(&ModelParams::new(2, 1, 1), 1);
        let st = lf.state_jets().unwrap();
        let ns = lf.nodes[0].n_samples();
        let zjet = Jet { v: CircleSamples::identity(ns), dz: CircleSamples::constant(ns, C64::new(1.0, 0.0)), dx: CircleSamples::zeros(ns) };
        let logs = whitham_generator(&lf, FlowIndex::Shat0).unwrap();
        let raw_dx = lf.raw_dx();
        for (j, (a, _)) in st.iter().enumerate() {
            assert!((&bracket(&zjet, a) - &a.dx).sup_norm() < 1e-14);
            assert!(bracket(a, a).sup_norm() < 1e-14);
            // [log(z−φ), a] = a_x/(z−φ) + a′φ_x/(z−φ)
            let inv = lf.nodes[j].derived().w.recip();
            let want = &(&a.dx * &inv) + &(&(&a.dz * &inv) * raw_dx[j].dphi);
            assert!((&bracket(&logs[j], a) - &want).sup_norm() < 1e-12);
        }
    }

    #[test]
    fn poisson_tensors_vanish_on_constant_loops() {
        let p = random_point(&ModelParams::new(2, 1, 1), 6).unwrap();
        let lf = LoopField::constant(&p, 16).unwrap();
        let w: Vec<Covector> = vec![random_covector(&p, &mut ChaCha8Rng::seed_from_u64(1), 3); 16];
        for t in p1_apply(&lf, &w).unwrap().iter().chain(p2_apply(&lf, &w).unwrap().iter()) {
            assert!(t.sup_norm() < 1e-12);
        }
    }

    #[test]
    fn poisson_tensors_are_antisymmetric() {
        for pr in params() {
            let lf = field(&pr, 2);
            let w1 = random_covector_field(&lf, 10, 3);
            let w2 = random_covector_field(&lf, 20, 3);
            for t in [Tensor::P1, Tensor::P2] {
                let r = antisymmetry_residual(&lf, t, &w1, &w2).unwrap();
                assert!(r < 1e-8, "{t:?} ({},{},{}): {r:.3e}", pr.m, pr.n, pr.s);
            }
        }
    }

    #[test]
    fn hamiltonian_gradients_match_finite_differences() {
        let pr = ModelParams::new(2, 1, 1);
        let p = random_point(&pr, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for h in [HamiltonianIndex::H(1), HamiltonianIndex::H(3), HamiltonianIndex::Hhat(1), HamiltonianIndex::Hhat(2)] {
            let dir = RawCombo::random(&p, &mut rng);
            let r = LoopFunctional::hamiltonian(h).gradient_residual(&p, &dir).unwrap();
            assert!(r < 1e-6, "{h}: {r:.3e}");
        }
    }

    #[test]
    fn hamiltonians_of_pure_power() {
        // a = z^m exactly (zero tail): no z^{−1} term below k = m
        let pr = ModelParams::new(3, 1, 3);
        let p = random_point(&pr, 1).unwrap();
        let zero = vec![ZERO; p.tail_depth + 1];
        let q = Point::from_raw_parts(3, 1, 3, p.tail_depth, p.phi, &zero, &p.ahat_raw());
        for k in 1..3 {
            assert!(hamiltonian_density(&q, HamiltonianIndex::H(k)).unwrap().norm() < 1e-14);
        }
    }

    #[test]
    fn bihamiltonian_recursion() {
        for pr in params() {
            let lf = field(&pr, 3);
            for k in 1..=2 * pr.m {
                let r = recursion_residual(&lf, HamiltonianIndex::H(k)).unwrap();
                assert!(r < 1e-6, "H_{k}: {r:.3e}");
            }
            for k in 1..=2 * pr.n {
                let r = recursion_residual(&lf, HamiltonianIndex::Hhat(k)).unwrap();
                assert!(r < 1e-6, "Hhat_{k}: {r:.3e}");
            }
        }
    }

    #[test]
    fn whitham_flows_are_hamiltonian() {
        for pr in params() {
            let lf = field(&pr, 4);
            for fl in [FlowIndex::S(1), FlowIndex::S(2), FlowIndex::Shat(1), FlowIndex::Shat(2)] {
                let r = whitham_hamiltonian_residual(&lf, fl).unwrap();
                assert!(r < 1e-6, "{fl}: {r:.3e}");
            }
        }
    }

    #[test]
    fn derivation_property() {
        for pr in params() {
            let lf = field(&pr, 5);
            for fl in [FlowIndex::S(1), FlowIndex::S(3), FlowIndex::Shat(1), FlowIndex::Shat0] {
                let r = field_distance(&flow_rhs(&lf, fl).unwrap(), &whitham_via_lambda(&lf, fl).unwrap());
                assert!(r < 1e-8, "{fl}: {r:.3e}");
            }
        }
    }

    #[test]
    fn identification_table() {
        for pr in params() {
            let lf = field(&pr, 6);
            for e in hamiltonian_identification(&lf, 1).unwrap() {
                assert!(e.residual() < 1e-7, "{}: {} vs {}", e.hamiltonian, e.lhs, e.rhs);
            }
            let r = log_flow_residual(&lf).unwrap();
            assert!(r < 1e-6, "log flow: {r:.3e}");
        }
    }

    #[test]
    fn p1_of_density_gradients() {
        let pr = ModelParams::new(2, 1, 1);
        let lf = field(&pr, 7);
        for u in [CoordIndex::T(0), CoordIndex::T(1), CoordIndex::T(-1), CoordIndex::H(1), CoordIndex::Hhat(0), CoordIndex::Hhat(1)] {
            let di = DensityIndex::new(u, 1);
            let lhs = p1_apply(&lf, &LoopFunctional::theta(di).gradients(&lf).unwrap()).unwrap();
            let rhs = p1_theta_via_density(&lf, di).unwrap();
            let r = field_distance(&lhs, &rhs);
            assert!(r < 1e-8, "{di}: {r:.3e}");
        }
    }

    #[test]
    fn explicit_examples() {
        for pr in params() {
            let lf = field(&pr, 8);
            let s = pr.s as i64;
            for i in [-2, 0, 1, 2].into_iter().filter(|&i| i != -s) {
                let r = field_distance(&flow_rhs(&lf, FlowIndex::Principal(CoordIndex::T(i), 0)).unwrap(), &example_t_flow(&lf, i).unwrap());
                assert!(r < 1e-8, "t_{i}: {r:.3e}");
            }
            let r = field_distance(&flow_rhs(&lf, FlowIndex::Principal(CoordIndex::T(-s), 0)).unwrap(), &example_log_flow(&lf).unwrap());
            assert!(r < 1e-8, "t_-s: {r:.3e}");
        }
    }

    #[test]
    fn flow_index_round_trip() {
        for f in [FlowIndex::S(2), FlowIndex::Shat(1), FlowIndex::Shat0, FlowIndex::Principal(CoordIndex::Hhat(1), 0)] {
            assert_eq!(f.to_string().parse::<FlowIndex>().unwrap(), f);
        }
        assert!("s0".parse::<FlowIndex>().is_err());
    }

    #[test]
    fn commuting_flows_halve_with_dt() {
        let lf = field(&ModelParams::new(2, 1, 1), 11);
        assert_eq!(check_commutativity(&lf, FlowIndex::S(2), FlowIndex::S(2), 0.1).unwrap(), 0.0);
        for (f1, f2) in [(FlowIndex::S(1), FlowIndex::Shat(1)), (FlowIndex::Principal(CoordIndex::H(1), 0), FlowIndex::Principal(CoordIndex::Hhat(0), 0))] {
            let r = commutativity_sequence(&lf, f1, f2, 0.1).unwrap();
            for w in r.windows(2) {
                assert!((w[0] / w[1] - 2.0).abs() < 0.05, "{f1}/{f2}: {r:?}");
            }
        }
    }

    #[test]
    fn tau_symmetry_both_routes() {
        let lf = field(&ModelParams::new(2, 1, 1), 12);
        let d1 = DensityIndex::new(CoordIndex::H(1), 0);
        let d2 = DensityIndex::new(CoordIndex::Hhat(0), 0);
        assert_eq!(check_tau_symmetry(&lf, d1, d1, 1e-3).unwrap(), 0.0);
        let r = check_tau_symmetry(&lf, d1, d2, 1e-3).unwrap();
        assert!(r < 1e-4 * (1.0 + lf.sup_norm()), "{r:.3e}");
        // central differences against ⟨dθ, ∂/∂T⟩
        let fd = density_rate(&lf, d1, principal_flow(d2), 1e-3).unwrap();
        let ex = density_rate_pairing(&lf, d1, principal_flow(d2)).unwrap();
        let dev = fd.iter().zip(&ex).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(dev < 1e-5, "{dev:.3e}");
    }

    #[test]
    fn rk4_converges_at_fourth_order() {
        let lf = field(&ModelParams::new(1, 1, 1), 13);
        let run = |k: usize| evolve(&lf, FlowIndex::Shat0, 0.08 / k as f64, k).unwrap();
        let (a, b, c) = (run(1), run(2), run(4));
        let ratio = a.distance(&b) / b.distance(&c);
        assert!((ratio - 16.0).abs() < 2.0, "{ratio}");
    }

    #[test]
    fn hamiltonians_are_conserved() {
        let lf = field(&ModelParams::new(2, 1, 1), 14);
        let d = hamiltonian_drift(&lf, FlowIndex::Shat0, HamiltonianIndex::H(2), 1e-3, 20).unwrap();
        assert!(d < 1e-10, "{d:.3e}");
    }

    #[test]
    fn constant_loop_does_not_move() {
        let p = random_point(&ModelParams::new(2, 1, 1), 9).unwrap();
        let lf = LoopField::constant(&p, 8).unwrap();
        let end = evolve(&lf, FlowIndex::S(1), 0.1, 3).unwrap();
        assert!(end.distance(&lf) < 1e-13);
    }
}
