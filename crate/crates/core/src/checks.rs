//! Verification battery.
//!
//! Every suite evaluates a family of identities on seeded random points (or
//! loops around them) and reports the worst residual against a tolerance.
//! The same records drive the `verify` command and the acceptance tests.

use std::str::FromStr;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64 as C64;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coords::{is_log_case, verify_princon1, verify_princon2, verify_princon3, DensityIndex};
use crate::geometry::{
    directional, flat_field, flat_metric_entry, metric, nabla_vec, random_covector, star, tangent_distance,
    unity_covector, CoordIndex, RawCombo,
};
use crate::hierarchy::{
    antisymmetry_residual, check_tau_symmetry, commutativity_sequence, evolve_observed, example_log_flow,
    example_t_flow, field_distance, flow_rhs, hamiltonian, hamiltonian_identification, log_flow_residual,
    random_covector_field, recursion_residual, whitham_hamiltonian_residual, whitham_via_lambda, FlowIndex,
    HamiltonianIndex, LoopField, Tensor, DEFAULT_GRID,
};
use crate::manifold::{random_point, ModelParams, Point};
use crate::series::{
    lagrange_invert, power_on_circle, samples_to_series, ChartTag, CircleSamples, InversionKind, Side, Sign,
    TruncatedSeries, DEFAULT_GUARD,
};

type CheckResult = std::result::Result<f64, Box<dyn std::error::Error + Send + Sync>>;

/// Amplitude of the x-dependence of the loops used by the hierarchy suites.
pub const LOOP_AMPLITUDE: f64 = 0.01;

/// One group of checks, numbered as in the acceptance list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Flat,
    Princon3,
    Princon1,
    Princon2,
    Connection,
    Product,
    Whitham,
    Recursion,
    Dynamics,
    Infrastructure,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::Flat,
        Suite::Princon3,
        Suite::Princon1,
        Suite::Princon2,
        Suite::Connection,
        Suite::Product,
        Suite::Whitham,
        Suite::Recursion,
        Suite::Dynamics,
        Suite::Infrastructure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Flat => "flat",
            Suite::Princon3 => "princon3",
            Suite::Princon1 => "princon1",
            Suite::Princon2 => "princon2",
            Suite::Connection => "connection",
            Suite::Product => "product",
            Suite::Whitham => "whitham",
            Suite::Recursion => "recursion",
            Suite::Dynamics => "dynamics",
            Suite::Infrastructure => "infrastructure",
        }
    }

    /// Position in the acceptance list (1-based).
    pub fn criterion(self) -> usize {
        Suite::ALL.iter().position(|&s| s == self).unwrap() + 1
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Suite::ALL
            .iter()
            .copied()
            .find(|x| x.name() == s)
            .ok_or_else(|| format!("unknown suite {s:?}; expected one of {}", suite_names().join(", ")))
    }
}

fn suite_names() -> Vec<&'static str> {
    Suite::ALL.iter().map(|s| s.name()).collect()
}

/// Result of one check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub suite: Suite,
    pub id: String,
    /// The identity being tested, written out as a formula.
    pub anchor: String,
    pub measured: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Seconds.
    pub wall_time: f64,
}

/// Battery configuration. Tolerances are looked up per configuration under
/// `"<suite>.<check>"` in [`ModelParams::tolerances`].
#[derive(Clone, Debug)]
pub struct Battery {
    pub configs: Vec<ModelParams>,
    pub points: usize,
    pub seed: u64,
    pub grid: usize,
    /// Highest density level `p` entering the level-dependent checks.
    pub max_level: usize,
}

impl Default for Battery {
    fn default() -> Self {
        Battery {
            configs: vec![ModelParams::new(2, 1, 1), ModelParams::new(1, 1, 1)],
            points: 20,
            seed: 0,
            grid: DEFAULT_GRID,
            max_level: 2,
        }
    }
}

impl Battery {
    /// Runs the selected suites and returns the records sorted by id.
    pub fn run(&self, suites: &[Suite]) -> Vec<CheckRecord> {
        let samples: Vec<Sample> = self.configs.iter().map(|p| Sample::new(p.clone(), self)).collect();
        let mut jobs: Vec<(Suite, Option<&Sample>)> = Vec::new();
        for &suite in suites {
            if suite == Suite::Infrastructure {
                jobs.push((suite, None));
            } else {
                jobs.extend(samples.iter().map(|s| (suite, Some(s))));
            }
        }
        let mut records: Vec<CheckRecord> = jobs
            .par_iter()
            .flat_map_iter(|&(suite, sample)| match sample {
                Some(s) => s.run(suite),
                None => infrastructure(self.configs.first().cloned().unwrap_or_else(|| ModelParams::new(2, 1, 1)), self.seed),
            })
            .collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        records
    }
}

/// Worst residual, propagating NaN.
fn worst(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(0.0, |a: f64, b| if a.is_nan() || b.is_nan() { f64::NAN } else { a.max(b) })
}

fn par_worst<T: Sync>(items: &[T], f: impl Fn(usize, &T) -> CheckResult + Sync) -> CheckResult {
    let v = items.par_iter().enumerate().map(|(k, x)| f(k, x)).collect::<std::result::Result<Vec<f64>, _>>()?;
    Ok(worst(v))
}

struct Recorder<'a> {
    suite: Suite,
    params: &'a ModelParams,
    tag: String,
    out: Vec<CheckRecord>,
}

impl<'a> Recorder<'a> {
    fn new(suite: Suite, params: &'a ModelParams, tag: String) -> Self {
        Recorder { suite, params, tag, out: Vec::new() }
    }

    fn check(&mut self, name: &str, anchor: &str, default_tol: f64, f: impl FnOnce() -> CheckResult) {
        let key = format!("{}.{}", self.suite.name(), name);
        let tolerance = self.params.tol(&key, default_tol);
        let start = Instant::now();
        let (measured, error) = match f() {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        self.out.push(CheckRecord {
            suite: self.suite,
            id: format!("{key}{}", self.tag),
            anchor: anchor.to_string(),
            measured,
            tolerance,
            pass: error.is_none() && measured <= tolerance,
            error,
            wall_time: start.elapsed().as_secs_f64(),
        });
    }
}

/// Points and loops of one configuration, built on first use.
struct Sample {
    params: ModelParams,
    seed: u64,
    count: usize,
    grid: usize,
    max_level: usize,
    points: OnceLock<std::result::Result<Vec<Point>, String>>,
    loops: OnceLock<std::result::Result<Vec<LoopField>, String>>,
}

impl Sample {
    fn new(params: ModelParams, b: &Battery) -> Self {
        Sample { params, seed: b.seed, count: b.points, grid: b.grid, max_level: b.max_level, points: OnceLock::new(), loops: OnceLock::new() }
    }

    fn tag(&self) -> String {
        format!("@{},{},{}", self.params.m, self.params.n, self.params.s)
    }

    fn points(&self) -> std::result::Result<&[Point], String> {
        self.points
            .get_or_init(|| {
                (0..self.count as u64)
                    .into_par_iter()
                    .map(|k| random_point(&self.params, self.seed + k).map_err(|e| e.to_string()))
                    .collect()
            })
            .as_deref()
            .map_err(Clone::clone)
    }

    fn loops(&self) -> std::result::Result<&[LoopField], String> {
        self.loops
            .get_or_init(|| {
                let pts = self.points()?;
                pts.par_iter()
                    .enumerate()
                    .map(|(k, p)| {
                        LoopField::perturbed(p, self.grid, LOOP_AMPLITUDE, self.seed + k as u64).map_err(|e| e.to_string())
                    })
                    .collect()
            })
            .as_deref()
            .map_err(Clone::clone)
    }

    fn rng(&self, salt: u64, k: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(1_000_003).wrapping_add(salt * 10_007 + k as u64))
    }

    fn run(&self, suite: Suite) -> Vec<CheckRecord> {
        let mut r = Recorder::new(suite, &self.params, self.tag());
        let pts = || self.points().map_err(Into::<Box<dyn std::error::Error + Send + Sync>>::into);
        let lps = || self.loops().map_err(Into::<Box<dyn std::error::Error + Send + Sync>>::into);
        let (m, n, s) = (self.params.m, self.params.n, self.params.s);
        match suite {
            Suite::Flat => r.check("gram", "η(∂_u, ∂_v) = −s δ_{i+i′,−s}, m δ_{j+j′,m}, n δ_{k+k′,n}, else 0", 1e-6, || {
                par_worst(pts()?, |_, p| {
                    let idx = CoordIndex::all(m, n, -3..=3);
                    let fields = idx.iter().map(|&u| flat_field(p, u)).collect::<std::result::Result<Vec<_>, _>>()?;
                    let mut w: f64 = 0.0;
                    for (a, fa) in idx.iter().zip(&fields) {
                        for (b, fb) in idx.iter().zip(&fields) {
                            w = worst([w, (metric(p, fa, fb)? - flat_metric_entry(*a, *b, m, n, s)).norm()]);
                        }
                    }
                    Ok(w)
                })
            }),
            Suite::Princon3 => r.check("theta0", "θ_{u,0} = η_{uv} t^v", 1e-7, || {
                par_worst(pts()?, |_, p| Ok(verify_princon3(p, 3)?))
            }),
            Suite::Princon1 => {
                let run = |log: bool| {
                    par_worst(pts()?, |k, p| {
                        let mut rng = self.rng(1, k);
                        let mut w: f64 = 0.0;
                        for u in CoordIndex::all(m, n, -2..=2).into_iter().filter(|&u| is_log_case(p, u) == log) {
                            for lvl in 0..self.max_level {
                                for _ in 0..5 {
                                    let dir = RawCombo::random(p, &mut rng);
                                    w = worst([w, verify_princon1(p, DensityIndex::new(u, lvl), &dir)?]);
                                }
                            }
                        }
                        Ok(w)
                    })
                };
                r.check("regular", "∇_∂ dθ_{u,p+1} = C_∂ dθ_{u,p}", 1e-5, || run(false));
                r.check("log", "∇_∂ dθ_{u,p+1} = C_∂ dθ_{u,p}, u ∈ {t_{−s}, ĥ_n}", 1e-5, || run(true));
            }
            Suite::Princon2 => {
                let coupled = |u: CoordIndex| u == CoordIndex::T(-(s as i64)) || u == CoordIndex::Hhat(n as i64);
                let run = |want: bool| {
                    par_worst(pts()?, |_, p| {
                        let mut w: f64 = 0.0;
                        for u in CoordIndex::all(m, n, -3..=3).into_iter().filter(|&u| coupled(u) == want) {
                            for lvl in 0..=self.max_level {
                                w = worst([w, verify_princon2(p, DensityIndex::new(u, lvl))?]);
                            }
                        }
                        Ok(w)
                    })
                };
                r.check("homogeneous", "Lie_E θ_{u,p} = (p + μ_u + 1/2 + 1/m) θ_{u,p}", 1e-6, || run(false));
                r.check(
                    "coupled",
                    "Lie_E θ_{v,p} = (p + 1/m) θ_{v,p} + Σ_u R^u_v θ_{u,p−1}, R ∈ {1 − s/m, n/m + 1, n/m − n/s}",
                    1e-6,
                    || run(true),
                );
            }
            Suite::Connection => {
                let triples = |k: usize, p: &Point| {
                    let mut rng = self.rng(2, k);
                    (0..3).map(|_| [(); 3].map(|_| RawCombo::random(p, &mut rng))).collect::<Vec<_>>()
                };
                r.check("torsion", "∇_{∂₁}∂₂ − ∇_{∂₂}∂₁ = 0", 1e-8, || {
                    par_worst(pts()?, |k, p| {
                        let mut w: f64 = 0.0;
                        for [c1, c2, _] in triples(k, p) {
                            w = worst([w, tangent_distance(&nabla_vec(p, &c1, &c2)?, &nabla_vec(p, &c2, &c1)?)]);
                        }
                        Ok(w)
                    })
                });
                r.check("compatibility", "∂₁η(∂₂, ∂₃) = η(∇₁∂₂, ∂₃) + η(∂₂, ∇₁∂₃)", 1e-6, || {
                    par_worst(pts()?, |k, p| {
                        let mut w: f64 = 0.0;
                        for [c1, c2, c3] in triples(k, p) {
                            let lhs = directional(p, &c1, |q| metric(q, &c2.tangent(q), &c3.tangent(q)))?;
                            let rhs = metric(p, &nabla_vec(p, &c1, &c2)?, &c3.tangent(p))?
                                + metric(p, &c2.tangent(p), &nabla_vec(p, &c1, &c3)?)?;
                            w = worst([w, (lhs - rhs).norm() / (1.0 + lhs.norm())]);
                        }
                        Ok(w)
                    })
                });
            }
            Suite::Product => {
                let forms = |k: usize, p: &Point| {
                    let mut rng = self.rng(3, k);
                    [(); 3].map(|_| random_covector(p, &mut rng, 5))
                };
                r.check("commutativity", "ω₁ ∗ ω₂ = ω₂ ∗ ω₁", 1e-10, || {
                    par_worst(pts()?, |k, p| {
                        let [w1, w2, _] = forms(k, p);
                        Ok(star(p, &w1, &w2).sub(&star(p, &w2, &w1)).sup_norm())
                    })
                });
                r.check("associativity", "(ω₁ ∗ ω₂) ∗ ω₃ = ω₁ ∗ (ω₂ ∗ ω₃) mod kernel", 1e-8, || {
                    par_worst(pts()?, |k, p| {
                        let [w1, w2, w3] = forms(k, p);
                        Ok(star(p, &star(p, &w1, &w2), &w3).kernel_distance(&star(p, &w1, &star(p, &w2, &w3)), p))
                    })
                });
                r.check("unity", "e* ∗ ω = ω ∗ e* = ω mod kernel", 1e-8, || {
                    par_worst(pts()?, |k, p| {
                        let [w1, _, _] = forms(k, p);
                        let e = unity_covector(p);
                        Ok(worst([
                            star(p, &e, &w1).kernel_distance(&w1, p),
                            star(p, &w1, &e).kernel_distance(&w1, p),
                        ]))
                    })
                });
            }
            Suite::Whitham => {
                let si = s as i64;
                r.check("identification", "H_k, Ĥ_k = c ∫θ_{u,p} dx", 1e-7, || {
                    par_worst(lps()?, |_, lf| Ok(worst(hamiltonian_identification(lf, self.max_level.saturating_sub(1))?.iter().map(|e| e.residual()))))
                });
                r.check("log_flow", "P₁ dθ_{ĥ_n,1} = n ∂/∂ŝ₀", 1e-6, || par_worst(lps()?, |_, lf| Ok(log_flow_residual(lf)?)));
                r.check("example_t", "∂/∂T^{t_i,0}: explicit bracket form = P₁ dθ_{t_i,1}", 1e-8, || {
                    par_worst(lps()?, |_, lf| {
                        let mut w: f64 = 0.0;
                        for i in (-2..=2).filter(|&i| i != -si) {
                            let got = flow_rhs(lf, FlowIndex::Principal(CoordIndex::T(i), 0))?;
                            w = worst([w, field_distance(&got, &example_t_flow(lf, i)?)]);
                        }
                        Ok(w)
                    })
                });
                r.check("example_log", "∂/∂T^{t_{−s},0}: explicit bracket form = P₁ dθ_{t_{−s},1}", 1e-8, || {
                    par_worst(lps()?, |_, lf| {
                        let got = flow_rhs(lf, FlowIndex::Principal(CoordIndex::T(-si), 0))?;
                        Ok(field_distance(&got, &example_log_flow(lf)?))
                    })
                });
                r.check("hamiltonian_form", "∂/∂s_k = P₁ dH_{k+m}, ∂/∂ŝ_k = P₁ dĤ_{k+n}", 1e-6, || {
                    par_worst(lps()?, |_, lf| {
                        let flows = [FlowIndex::S(1), FlowIndex::S(2), FlowIndex::Shat(1), FlowIndex::Shat(2)];
                        let v = flows.iter().map(|&f| whitham_hamiltonian_residual(lf, f)).collect::<std::result::Result<Vec<_>, _>>()?;
                        Ok(worst(v))
                    })
                });
                r.check("derivation", "flows of λ pushed to a = λ^m equal the flows of a", 1e-8, || {
                    par_worst(lps()?, |_, lf| {
                        let mut w: f64 = 0.0;
                        for f in [FlowIndex::S(1), FlowIndex::S(3), FlowIndex::Shat(1), FlowIndex::Shat0] {
                            w = worst([w, field_distance(&flow_rhs(lf, f)?, &whitham_via_lambda(lf, f)?)]);
                        }
                        Ok(w)
                    })
                });
            }
            Suite::Recursion => {
                r.check("h", "P₁ dH_{k+m} = P₂ dH_k, k ≤ 2m", 1e-6, || {
                    par_worst(lps()?, |_, lf| {
                        let v = (1..=2 * m).map(|k| recursion_residual(lf, HamiltonianIndex::H(k))).collect::<std::result::Result<Vec<_>, _>>()?;
                        Ok(worst(v))
                    })
                });
                r.check("hhat", "P₁ dĤ_{k+n} = P₂ dĤ_k, k ≤ 2n", 1e-6, || {
                    par_worst(lps()?, |_, lf| {
                        let v = (1..=2 * n).map(|k| recursion_residual(lf, HamiltonianIndex::Hhat(k))).collect::<std::result::Result<Vec<_>, _>>()?;
                        Ok(worst(v))
                    })
                });
                for (name, t) in [("antisymmetry_p1", Tensor::P1), ("antisymmetry_p2", Tensor::P2)] {
                    r.check(name, "∫(⟨w₁, P w₂⟩ + ⟨w₂, P w₁⟩) dx = 0", 1e-8, || {
                        par_worst(lps()?, |k, lf| {
                            let salt = self.seed.wrapping_add(k as u64);
                            let w1 = random_covector_field(lf, salt.wrapping_mul(2), 3);
                            let w2 = random_covector_field(lf, salt.wrapping_mul(2) + 1, 3);
                            Ok(antisymmetry_residual(lf, t, &w1, &w2)?)
                        })
                    });
                }
            }
            Suite::Dynamics => {
                // h_1 exists only for m ≥ 2; t_1 plays its role otherwise
                let first = if m >= 2 { CoordIndex::H(1) } else { CoordIndex::T(1) };
                let d1 = DensityIndex::new(first, 0);
                let d2 = DensityIndex::new(CoordIndex::Hhat(0), 0);
                r.check("commutativity", "‖Φ₁Φ₂ − Φ₂Φ₁‖/dt² halves with dt (|ratio − 2|)", 0.3, || {
                    par_worst(lps()?, |_, lf| {
                        let mut w: f64 = 0.0;
                        for (f1, f2) in [
                            (FlowIndex::S(1), FlowIndex::Shat(1)),
                            (FlowIndex::Principal(d1.u, 0), FlowIndex::Principal(d2.u, 0)),
                        ] {
                            let seq = commutativity_sequence(lf, f1, f2, 0.1)?;
                            w = worst([w, (seq[0] / seq[1] - 2.0).abs(), (seq[1] / seq[2] - 2.0).abs()]);
                        }
                        Ok(w)
                    })
                });
                r.check("tau", "∂θ_{α,0}/∂T^{β,0} = ∂θ_{β,0}/∂T^{α,0}, relative to 1 + ‖field‖", 1e-4, || {
                    par_worst(lps()?, |_, lf| Ok(check_tau_symmetry(lf, d1, d2, 1e-3)? / (1.0 + lf.sup_norm())))
                });
                r.check("drift", "H_k, Ĥ_k constant along ∂/∂ŝ₀ (100 RK4 steps, dt = 1e−3)", 1e-6, || {
                    let hs: Vec<HamiltonianIndex> =
                        (1..=2 * m).map(HamiltonianIndex::H).chain((1..=2 * n).map(HamiltonianIndex::Hhat)).collect();
                    par_worst(lps()?, |_, lf| {
                        let h0 = hs.iter().map(|&h| hamiltonian(lf, h)).collect::<std::result::Result<Vec<_>, _>>()?;
                        let mut w: f64 = 0.0;
                        evolve_observed(lf, FlowIndex::Shat0, 1e-3, 100, |step, _, cur| {
                            if step % 10 == 0 {
                                for (&h, v0) in hs.iter().zip(&h0) {
                                    w = worst([w, (hamiltonian(cur, h)? - v0).norm()]);
                                }
                            }
                            Ok(())
                        })?;
                        Ok(w)
                    })
                });
            }
            Suite::Infrastructure => unreachable!("infrastructure runs once per battery"),
        }
        r.out
    }
}

// ---------------------------------------------------------------------------
// Series infrastructure

const TRIALS: usize = 20;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn crand(rng: &mut impl Rng, scale: f64) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

fn small_phi(rng: &mut impl Rng) -> C64 {
    C64::from_polar(0.4 * rng.gen::<f64>().sqrt(), std::f64::consts::TAU * rng.gen::<f64>())
}

fn infrastructure(params: ModelParams, seed: u64) -> Vec<CheckRecord> {
    let mut r = Recorder::new(Suite::Infrastructure, &params, String::new());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut seeds = || rng.gen::<u64>();
    let trials = |salt: u64, f: &(dyn Fn(&mut ChaCha8Rng) -> CheckResult + Sync)| -> CheckResult {
        let v = (0..TRIALS as u64)
            .into_par_iter()
            .map(|k| f(&mut ChaCha8Rng::seed_from_u64(salt.wrapping_add(k))))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(worst(v))
    };
    let ns = params.n_samples;

    let salt = seeds();
    r.check("partition", "f = f_+ + f_−", 1e-10, || {
        trials(salt, &|rng| {
            let lo = rng.gen_range(-8..=2);
            let coeffs: Vec<C64> = (0..rng.gen_range(1..=16)).map(|_| crand(rng, 5.0)).collect();
            let f = TruncatedSeries::polynomial(ChartTag::pole(small_phi(rng)), lo, coeffs);
            let back = f.project(Sign::Plus)?.add(&f.project(Sign::Minus)?)?;
            Ok(worst((lo - 1..=f.hi() + 1).map(|k| (back.coeff(k) - f.coeff(k)).norm())))
        })
    });

    let salt = seeds();
    r.check("product", "(fg)_k = Σ_i f_i g_{k−i} against exact rational convolution, relative", 1e-12, || {
        trials(salt, &|rng| {
            let draw = |rng: &mut ChaCha8Rng| -> Vec<Rational64> {
                (0..rng.gen_range(1..=8)).map(|_| Rational64::new(rng.gen_range(-20..20), rng.gen_range(1..9))).collect()
            };
            let (ra, rb) = (draw(rng), draw(rng));
            let (la, lb) = (rng.gen_range(-4..=0), rng.gen_range(-4..=0));
            let ch = ChartTag::pole(small_phi(rng));
            let to_c = |v: &[Rational64]| v.iter().map(|q| c(rat(q))).collect::<Vec<_>>();
            let p = TruncatedSeries::polynomial(ch, la, to_c(&ra)).mul(&TruncatedSeries::polynomial(ch, lb, to_c(&rb)))?;
            let mut exact = vec![Rational64::from_integer(0); ra.len() + rb.len() - 1];
            for (i, x) in ra.iter().enumerate() {
                for (j, y) in rb.iter().enumerate() {
                    exact[i + j] += x * y;
                }
            }
            Ok(worst(exact.iter().enumerate().map(|(i, e)| {
                let e = rat(e);
                (p.coeff(la + lb + i as i64) - c(e)).norm() / e.abs().max(1.0)
            })))
        })
    });

    let salt = seeds();
    r.check("quadrature", "(1/2πi)∮_Γ (z−φ)^k dz = δ_{k,−1}, |k| ≤ N/4, relative to max|f|", 1e-12, || {
        trials(salt, &|rng| {
            let phi = small_phi(rng);
            let q = ns as i64 / 4;
            Ok(worst((-q..=q).map(|k| {
                let f = CircleSamples::from_fn(ns, |z| (z - phi).powi(k as i32));
                let want = if k == -1 { 1.0 } else { 0.0 };
                (f.contour_integral() - c(want)).norm() / f.sup_norm().max(1.0)
            })))
        })
    });

    let salt = seeds();
    r.check("round_trip", "coefficients(samples(f)) = f on the guard-banded window", 1e-10, || {
        trials(salt, &|rng| {
            let phi = small_phi(rng);
            let coeffs: Vec<C64> = (0..17).map(|_| crand(rng, 1.0)).collect();
            let f = TruncatedSeries::polynomial(ChartTag::pole(phi), -8, coeffs);
            let back = samples_to_series(&f.eval_on_circle(ns), ChartTag::pole(phi), (-10, 10), DEFAULT_GUARD)?;
            Ok(worst((back.exact_lo..=back.exact_hi).map(|k| (back.coeff(k) - f.coeff(k)).norm())))
        })
    });

    let salt = seeds();
    r.check("branch", "(f^{1/s})^s = f samplewise on Γ", 1e-10, || {
        trials(salt, &|rng| {
            let s = rng.gen_range(1..=4);
            let g = crand(rng, 0.3);
            let f = CircleSamples::from_fn(ns, |z| z.powi(s) * (g * z + 1.0));
            let root = power_on_circle(&f, 1.0 / s as f64, false)?;
            Ok((&root.powi(s) - &f).sup_norm())
        })
    });

    let salt = seeds();
    r.check("integration_by_parts", "∮ f′g dz = −∮ f g′ dz", 1e-10, || {
        trials(salt, &|rng| {
            let ch = ChartTag::pole(small_phi(rng));
            let f = TruncatedSeries::polynomial(ch, -4, (0..9).map(|_| crand(rng, 1.0)).collect());
            let g = TruncatedSeries::polynomial(ch, -3, (0..9).map(|_| crand(rng, 1.0)).collect());
            let lhs = (&f.d_dz().eval_on_circle(ns) * &g.eval_on_circle(ns)).contour_integral();
            let rhs = (&f.eval_on_circle(ns) * &g.d_dz().eval_on_circle(ns)).contour_integral();
            Ok((lhs + rhs).norm())
        })
    });

    let salt = seeds();
    r.check("reciprocal", "f · f^{−1} = 1 on the exact window, relative", 1e-10, || {
        trials(salt, &|rng| {
            let ch = ChartTag::pole(small_phi(rng));
            let mut coeffs: Vec<C64> = (0..6).map(|_| crand(rng, 1.0)).collect();
            coeffs.push(c(rng.gen_range(0.5..2.0)));
            let f = TruncatedSeries::polynomial(ch, -3, coeffs);
            let inv = f.reciprocal_leading(Side::Top, 12)?;
            let p = f.mul(&inv)?;
            let scale = 1.0 + inv.coeffs.iter().map(|x| x.norm()).fold(0.0, f64::max);
            Ok(worst((p.exact_lo..=0).map(|k| (p.coeff(k) - c(if k == 0 { 1.0 } else { 0.0 })).norm() / scale)))
        })
    });

    let salt = seeds();
    r.check("lagrange", "f(z(χ)) = χ for inverses at ∞ and at φ, relative", 1e-10, || {
        trials(salt, &|rng| {
            let probes = [C64::new(40.0, 7.0), C64::new(-31.0, 28.0), C64::new(3.0, -45.0)];
            // at infinity: f = z + Σ_{k=1}^{5} f_k z^{−k}
            let mut top: Vec<C64> = (0..5).map(|_| crand(rng, 0.5)).collect();
            top.extend([c(0.0), c(1.0)]);
            let f = TruncatedSeries::polynomial(ChartTag::AtInfinity, -5, top);
            let inv = lagrange_invert(&f, InversionKind::AtInfinity, 24)?;
            // at the pole: f = c₋₁(z−φ)^{−1} + c₀ + c₁(z−φ) + c₂(z−φ)²
            let phi = small_phi(rng);
            let mut pc = vec![C64::from_polar(rng.gen_range(0.5..1.5), rng.gen_range(0.0..6.0))];
            pc.extend((0..3).map(|_| crand(rng, 0.3)));
            let g = TruncatedSeries::polynomial(ChartTag::pole(phi), -1, pc);
            let ginv = lagrange_invert(&g, InversionKind::AtPole, 24)?;
            let mut w: f64 = 0.0;
            for chi in probes {
                w = worst([w, (f.eval_at(inv.eval_at(chi)) - chi).norm() / chi.norm()]);
                w = worst([w, (g.eval_at(ginv.eval_at(chi)) - chi).norm() / chi.norm()]);
            }
            // ℓ = z² + 2: χ = ℓ^{1/2} inverts to z = χ − χ^{−1} + …
            let ell = TruncatedSeries::polynomial(ChartTag::AtInfinity, 0, vec![c(2.0), c(0.0), c(1.0)]);
            let chi = ell.power(Side::Top, 0.5, 8)?;
            let z = lagrange_invert(&chi, InversionKind::AtInfinity, 6)?;
            Ok(worst([w, (z.coeff(-1) + 1.0).norm()]))
        })
    });

    r.out
}

fn rat(q: &Rational64) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Records grouped by suite in acceptance order.
pub fn by_suite(records: &[CheckRecord]) -> Vec<(Suite, Vec<&CheckRecord>)> {
    Suite::ALL
        .iter()
        .map(|&s| (s, records.iter().filter(|r| r.suite == s).collect::<Vec<_>>()))
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Battery {
        Battery { points: 2, ..Battery::default() }
    }

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert_eq!(Suite::Flat.criterion(), 1);
        assert_eq!(Suite::Infrastructure.criterion(), 10);
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn worst_propagates_nan() {
        assert_eq!(worst([1.0, 3.0, 2.0]), 3.0);
        assert!(worst([1.0, f64::NAN, 2.0]).is_nan());
        assert_eq!(worst([]), 0.0);
    }

    #[test]
    fn small_battery_passes() {
        let recs = small().run(&[Suite::Flat, Suite::Princon3, Suite::Product, Suite::Infrastructure]);
        assert!(!recs.is_empty());
        for r in &recs {
            assert!(r.pass, "{} measured {:e} > {:e} ({:?})", r.id, r.measured, r.tolerance, r.error);
        }
        let ids: Vec<_> = recs.iter().map(|r| r.id.clone()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn zero_tolerance_forces_failures() {
        let mut b = small();
        for p in &mut b.configs {
            p.tolerances.insert("princon3.theta0".into(), 0.0);
        }
        let recs = b.run(&[Suite::Princon3]);
        assert!(recs.iter().all(|r| !r.pass && r.tolerance == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let strip = |v: Vec<CheckRecord>| v.into_iter().map(|r| (r.id, r.measured.to_bits())).collect::<Vec<_>>();
        let a = strip(small().run(&[Suite::Product, Suite::Infrastructure]));
        let b = strip(small().run(&[Suite::Product, Suite::Infrastructure]));
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_configuration_is_reported() {
        let b = Battery { configs: vec![ModelParams::new(3, 1, 2)], points: 1, ..Battery::default() };
        let recs = b.run(&[Suite::Flat]);
        assert_eq!(recs.len(), 1);
        assert!(!recs[0].pass && recs[0].error.is_some());
    }
}
