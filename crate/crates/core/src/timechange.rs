//! The linear time change `τ : [t1, T] → [t0, T]` fixing `T`, its action on
//! Brownian increments and on Poisson random measures, Monte Carlo checks of
//! the change-of-measure identity for the transformed measure, and exact
//! checks of the deterministic inequalities and identities of `τ`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{precondition, Error, Result};
use crate::model::LevyMeasureAtomic;
use crate::report::{fmt_f64, CsvTable};
use crate::stats::{chi_square_sf, poisson_pmf, MeanSe};
use crate::stochastics::{
    count_jumps, sample_brownian, sample_poisson_on, BrownianPath, PathGrid, PoissonPath, RngSeed,
    BROWNIAN_STREAM, POISSON_STREAM,
};

/// `τ(s) = t0 + τ̇ (s − t1)` with `τ̇ = (T − t0)/(T − t1)` and `γ = ln τ̇`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearTimeChange {
    t0: f64,
    t1: f64,
    horizon: f64,
    rate: f64,
    gamma: f64,
}

impl LinearTimeChange {
    pub fn new(t0: f64, t1: f64, horizon: f64) -> Result<Self> {
        for (what, t) in [("t0", t0), ("t1", t1)] {
            if !(t >= 0.0 && t < horizon) {
                return Err(Error::OutOfRange {
                    what,
                    value: t,
                    lo: 0.0,
                    hi: horizon,
                });
            }
        }
        let rate = if t0 == t1 { 1.0 } else { (horizon - t0) / (horizon - t1) };
        Ok(Self {
            t0,
            t1,
            horizon,
            rate,
            gamma: if t0 == t1 { 0.0 } else { rate.ln() },
        })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t1(&self) -> f64 {
        self.t1
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `τ̇`.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// `γ = ln τ̇`.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_identity(&self) -> bool {
        self.t0 == self.t1
    }

    pub fn tau(&self, s: f64) -> Result<f64> {
        if !(s >= self.t1 && s <= self.horizon) {
            return Err(Error::OutOfRange {
                what: "tau argument",
                value: s,
                lo: self.t1,
                hi: self.horizon,
            });
        }
        Ok(self.tau_unchecked(s))
    }

    pub fn tau_inverse(&self, r: f64) -> Result<f64> {
        if !(r >= self.t0 && r <= self.horizon) {
            return Err(Error::OutOfRange {
                what: "tau_inverse argument",
                value: r,
                lo: self.t0,
                hi: self.horizon,
            });
        }
        Ok(self.tau_inverse_unchecked(r))
    }

    pub(crate) fn tau_unchecked(&self, s: f64) -> f64 {
        if s == self.horizon {
            self.horizon
        } else if s == self.t1 {
            self.t0
        } else {
            self.t0 + self.rate * (s - self.t1)
        }
    }

    pub(crate) fn tau_inverse_unchecked(&self, r: f64) -> f64 {
        if r == self.horizon {
            self.horizon
        } else if r == self.t0 {
            self.t1
        } else {
            self.t1 + (r - self.t0) / self.rate
        }
    }

    /// `[t1, T]` grid whose nodes are the `τ⁻¹`-images of `grid`'s nodes.
    pub fn matched_grid(&self, grid: &PathGrid) -> Result<PathGrid> {
        self.check_source_grid(grid)?;
        PathGrid::from_nodes(grid.nodes().iter().map(|&r| self.tau_inverse_unchecked(r)).collect())
    }

    fn check_source_grid(&self, grid: &PathGrid) -> Result<()> {
        if grid.t_start() != self.t0 || grid.t_end() != self.horizon {
            return Err(Error::Shape(format!(
                "grid spans [{}, {}], time change expects [{}, {}]",
                grid.t_start(),
                grid.t_end(),
                self.t0,
                self.horizon
            )));
        }
        Ok(())
    }

    /// Whether `target` is the matched image of `source`.
    pub fn is_matched(&self, source: &PathGrid, target: &PathGrid) -> bool {
        source.n_steps() == target.n_steps()
            && source
                .nodes()
                .iter()
                .zip(target.nodes())
                .all(|(&r, &s)| self.tau_inverse_unchecked(r) == s)
    }
}

/// `ρ_τ(k) = exp{γk − (t1 − t0) Π(E)}`.
pub fn rho_tau(tc: &LinearTimeChange, k: u64, mass: f64) -> f64 {
    (tc.gamma * k as f64 - (tc.t1 - tc.t0) * mass).exp()
}

/// `g_τ(k) = exp{−γk + (t1 − t0) Π(E)}`, the reciprocal of [`rho_tau`].
pub fn g_tau(tc: &LinearTimeChange, k: u64, mass: f64) -> f64 {
    (-tc.gamma * k as f64 + (tc.t1 - tc.t0) * mass).exp()
}

/// Both densities for one jump count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KulikWeights {
    pub rho: f64,
    pub g: f64,
}

impl KulikWeights {
    pub fn new(tc: &LinearTimeChange, k: u64, mass: f64) -> Self {
        Self {
            rho: rho_tau(tc, k, mass),
            g: g_tau(tc, k, mass),
        }
    }
}

/// `τ(μ)`: a measure on `[t0, T]` mapped to `[t1, T]` by `r ↦ τ⁻¹(r)`, marks kept.
pub fn kulik_transform(tc: &LinearTimeChange, mu: &PoissonPath) -> Result<PoissonPath> {
    if mu.t_start() != tc.t0 || mu.t_end() != tc.horizon {
        return Err(Error::Shape(format!(
            "measure spans [{}, {}], time change expects [{}, {}]",
            mu.t_start(),
            mu.t_end(),
            tc.t0,
            tc.horizon
        )));
    }
    Ok(mu.remap(tc.t1, tc.horizon, |r| tc.tau_inverse_unchecked(r)))
}

/// `W_t = B_{τ(t)}/√τ̇` on the matched grid: `ΔW_k = ΔB_k/√τ̇`.
pub fn timechange_brownian(tc: &LinearTimeChange, b: &BrownianPath, target: &PathGrid) -> Result<BrownianPath> {
    tc.check_source_grid(b.grid())?;
    if !tc.is_matched(b.grid(), target) {
        return Err(Error::Shape("target grid is not the τ⁻¹-image of the source grid".into()));
    }
    let scale = tc.rate.sqrt();
    let increments = if tc.is_identity() {
        b.increments().to_vec()
    } else {
        b.increments().iter().map(|db| db / scale).collect()
    };
    BrownianPath::from_increments(target.clone(), b.dim(), increments)
}

/// One counting window `[t1, s] × Δ`; `atoms = None` means `Δ = E`.
#[derive(Debug, Clone, PartialEq)]
pub struct KulikWindow {
    pub s: f64,
    pub atoms: Option<Vec<usize>>,
}

impl KulikWindow {
    pub fn all_atoms(s: f64) -> Self {
        Self { s, atoms: None }
    }
}

type CountFn = Arc<dyn Fn(&[u64]) -> f64 + Send + Sync>;

/// Bounded test function of the window counts. The built-in variants act on
/// the first window.
#[derive(Clone)]
pub enum TestFunction {
    /// `1{k = m}`.
    Indicator(u64),
    /// `k`.
    Count,
    /// `k²`.
    CountSquared,
    Custom { name: String, f: CountFn },
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl TestFunction {
    pub fn custom(name: impl Into<String>, f: impl Fn(&[u64]) -> f64 + Send + Sync + 'static) -> Self {
        Self::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `{1{k=m} : m ≤ 6} ∪ {k, k²}`.
    pub fn builtin_family() -> Vec<Self> {
        let mut v: Vec<Self> = (0..=6).map(Self::Indicator).collect();
        v.push(Self::Count);
        v.push(Self::CountSquared);
        v
    }

    pub fn name(&self) -> String {
        match self {
            Self::Indicator(m) => format!("indicator_{m}"),
            Self::Count => "count".into(),
            Self::CountSquared => "count_squared".into(),
            Self::Custom { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, counts: &[u64]) -> f64 {
        match self {
            Self::Indicator(m) => f64::from(counts[0] == *m),
            Self::Count => counts[0] as f64,
            Self::CountSquared => (counts[0] as f64).powi(2),
            Self::Custom { f, .. } => f(counts),
        }
    }

    /// `E φ(K)` for `K ~ Poisson(mean)` when known in closed form.
    pub fn poisson_expectation(&self, mean: f64) -> Option<f64> {
        match self {
            Self::Indicator(m) => Some(poisson_pmf(mean, *m)),
            Self::Count => Some(mean),
            Self::CountSquared => Some(mean + mean * mean),
            Self::Custom { .. } => None,
        }
    }
}

/// One row of an identity or bound check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub quantity: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub analytic: Option<f64>,
    pub pass: bool,
    /// Informational rows are reported but do not decide the overall verdict.
    pub gating: bool,
}

impl CheckRow {
    pub fn gate(quantity: impl Into<String>, estimate: f64, se: f64, analytic: Option<f64>, pass: bool) -> Self {
        Self {
            quantity: quantity.into(),
            estimate,
            standard_error: se,
            analytic,
            pass,
            gating: true,
        }
    }

    pub fn info(quantity: impl Into<String>, estimate: f64, se: f64, analytic: Option<f64>, pass: bool) -> Self {
        Self {
            gating: false,
            ..Self::gate(quantity, estimate, se, analytic, pass)
        }
    }
}

/// Collection of [`CheckRow`]s with CSV columns
/// `quantity, estimate, standard_error, analytic_value_if_any, pass`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
}

pub type IdentityReport = CheckReport;
pub type BoundReport = CheckReport;

impl CheckReport {
    pub fn pass(&self) -> bool {
        self.rows.iter().filter(|r| r.gating).all(|r| r.pass)
    }

    pub fn failures(&self) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| r.gating && !r.pass).collect()
    }

    pub fn row(&self, quantity: &str) -> Option<&CheckRow> {
        self.rows.iter().find(|r| r.quantity == quantity)
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.rows.extend(other.rows);
    }

    pub fn header() -> CsvTable {
        CsvTable::new(&["quantity", "estimate", "standard_error", "analytic_value_if_any", "pass"])
    }

    pub fn to_table(&self) -> CsvTable {
        let mut t = Self::header();
        for r in &self.rows {
            t.push(vec![
                r.quantity.clone(),
                fmt_f64(r.estimate),
                fmt_f64(r.standard_error),
                r.analytic.map(fmt_f64).unwrap_or_default(),
                if r.pass { "true" } else { "false" }.into(),
            ]);
        }
        t
    }
}

/// Seed streams of the two sides of the Monte Carlo identity.
const TRANSFORMED_SIDE: u64 = 1;
const WEIGHTED_SIDE: u64 = 2;

struct KulikSample {
    /// `φ(τ(μ))`, `g_τ·φ(τ(μ))`.
    transformed: (f64, f64),
    /// `ρ_τ·φ(η)`, `φ(η)`.
    direct: (f64, f64),
}

fn window_counts(
    path: &PoissonPath,
    t1: f64,
    windows: &[KulikWindow],
    buf: &mut Vec<u64>,
) -> Result<()> {
    buf.clear();
    for w in windows {
        buf.push(count_jumps(path, (t1, w.s), w.atoms.as_deref())?);
    }
    Ok(())
}

/// Monte Carlo check of `E φ(τ(μ) counts) = E[ρ_τ φ(η counts)]` and of the
/// reverse form `E[g_τ φ(τ(μ) counts)] = E φ(η counts)`.
///
/// `μ` is sampled on `[t0, T]` and transformed; `η` is sampled independently on
/// `[t1, T]`. Each pair passes when the estimates differ by at most three
/// combined standard errors. For built-in test functions and a single window
/// the Poisson closed form under the `τ`-clock is reported as the analytic value.
pub fn verify_kulik_identity(
    tc: &LinearTimeChange,
    levy: &LevyMeasureAtomic,
    windows: &[KulikWindow],
    phi: &TestFunction,
    n_paths: usize,
    seed: RngSeed,
) -> Result<IdentityReport> {
    Ok(verify_kulik_family(tc, levy, windows, std::slice::from_ref(phi), n_paths, seed)?.remove(0))
}

/// As [`verify_kulik_identity`] for several test functions on common samples.
pub fn verify_kulik_family(
    tc: &LinearTimeChange,
    levy: &LevyMeasureAtomic,
    windows: &[KulikWindow],
    phis: &[TestFunction],
    n_paths: usize,
    seed: RngSeed,
) -> Result<Vec<IdentityReport>> {
    if n_paths < 100 {
        return Err(precondition(format!("n_paths = {n_paths}; need at least 100")));
    }
    if windows.is_empty() {
        return Err(precondition("at least one counting window is required"));
    }
    for w in windows {
        if !(w.s >= tc.t1 && w.s <= tc.horizon) {
            return Err(Error::OutOfRange {
                what: "window end",
                value: w.s,
                lo: tc.t1,
                hi: tc.horizon,
            });
        }
        if let Some(atoms) = &w.atoms {
            if let Some(&j) = atoms.iter().find(|&&j| j >= levy.len()) {
                return Err(precondition(format!("atom {j} out of range")));
            }
        }
    }
    let mass = levy.total_mass();
    let (t0, t1, horizon) = (tc.t0, tc.t1, tc.horizon);

    let samples: Vec<Vec<KulikSample>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<Vec<KulikSample>> {
            let mu = sample_poisson_on(t0, horizon, levy, seed.derive(TRANSFORMED_SIDE).path(p, POISSON_STREAM));
            let image = kulik_transform(tc, &mu)?;
            let eta = sample_poisson_on(t1, horizon, levy, seed.derive(WEIGHTED_SIDE).path(p, POISSON_STREAM));
            let g = g_tau(tc, image.len() as u64, mass);
            let rho = rho_tau(tc, eta.len() as u64, mass);
            let mut ci = Vec::with_capacity(windows.len());
            let mut ce = Vec::with_capacity(windows.len());
            window_counts(&image, t1, windows, &mut ci)?;
            window_counts(&eta, t1, windows, &mut ce)?;
            phis.iter()
                .map(|phi| {
                    let a = phi.eval(&ci);
                    let b = phi.eval(&ce);
                    let s = KulikSample {
                        transformed: (a, g * a),
                        direct: (rho * b, b),
                    };
                    let all = [s.transformed.0, s.transformed.1, s.direct.0, s.direct.1];
                    if all.iter().all(|v| v.is_finite()) {
                        Ok(s)
                    } else {
                        Err(Error::TestFunction(format!(
                            "{} at counts {ci:?} / {ce:?}",
                            phi.name()
                        )))
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let analytic_mean = if windows.len() == 1 {
        let w = &windows[0];
        Some((tc.tau_unchecked(w.s) - t0) * levy.mass_of(w.atoms.as_deref()))
    } else {
        None
    };

    let mut reports = Vec::with_capacity(phis.len());
    for (i, phi) in phis.iter().enumerate() {
        let col = |f: fn(&KulikSample) -> f64| -> MeanSe {
            MeanSe::of(&samples.iter().map(|row| f(&row[i])).collect::<Vec<_>>())
        };
        let l = col(|s| s.transformed.0);
        let lg = col(|s| s.transformed.1);
        let r = col(|s| s.direct.0);
        let rp = col(|s| s.direct.1);
        let analytic = analytic_mean.and_then(|m| phi.poisson_expectation(m));
        let name = phi.name();
        // The closed form gates only for 1{k = 0}; other rows are diagnostics.
        let analytic_gates = matches!(phi, TestFunction::Indicator(0));
        let side = |label: &str, m: MeanSe, a: Option<f64>| {
            let ok = a.map_or(true, |a| m.covers(a, 3.0));
            if analytic_gates && a.is_some() {
                CheckRow::gate(format!("{name}:{label}"), m.mean, m.se, a, ok)
            } else {
                CheckRow::info(format!("{name}:{label}"), m.mean, m.se, a, ok)
            }
        };
        let diff = |label: &str, a: MeanSe, b: MeanSe| {
            let se = a.se + b.se;
            let d = a.mean - b.mean;
            CheckRow::gate(format!("{name}:{label}"), d, se, Some(0.0), d.abs() <= 3.0 * se)
        };
        let rows = vec![
            side("transformed", l, analytic),
            side("rho_weighted", r, analytic),
            diff("difference", l, r),
            CheckRow::info(format!("{name}:g_weighted_transformed"), lg.mean, lg.se, None, true),
            CheckRow::info(format!("{name}:untransformed"), rp.mean, rp.se, None, true),
            diff("reverse_difference", lg, rp),
        ];
        reports.push(CheckReport { rows });
    }
    Ok(reports)
}

/// Result of a goodness-of-fit test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// `ρ_τ`-weighted histogram of `η([t1, s] × Δ)` against
/// `Poisson((τ(s) − t0) Π(Δ))`.
///
/// Weighted bin frequencies are correlated and heteroscedastic, so the
/// statistic is the Mahalanobis form `n (m̂ − p)ᵀ Ŝ⁻¹ (m̂ − p)` over bins with
/// at least 20 expected samples (the tail bin is dropped as it is implied by
/// the others), asymptotically `χ²` with one degree of freedom per bin.
pub fn weighted_count_chi_square(
    tc: &LinearTimeChange,
    levy: &LevyMeasureAtomic,
    window: &KulikWindow,
    n_paths: usize,
    seed: RngSeed,
) -> Result<ChiSquareTest> {
    let mass = levy.total_mass();
    let mean = (tc.tau(window.s)? - tc.t0) * levy.mass_of(window.atoms.as_deref());
    let mut n_bins = 0;
    while poisson_pmf(mean, n_bins as u64) * n_paths as f64 >= 20.0 {
        n_bins += 1;
    }
    if n_bins == 0 {
        return Err(precondition("no bin has enough expected samples"));
    }
    let samples: Vec<(u64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<(u64, f64)> {
            let eta = sample_poisson_on(tc.t1, tc.horizon, levy, seed.path(p, POISSON_STREAM));
            let k = count_jumps(&eta, (tc.t1, window.s), window.atoms.as_deref())?;
            Ok((k, rho_tau(tc, eta.len() as u64, mass)))
        })
        .collect::<Result<_>>()?;

    let n = n_paths as f64;
    let mut m = DVector::<f64>::zeros(n_bins);
    for &(k, w) in &samples {
        if (k as usize) < n_bins {
            m[k as usize] += w / n;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(n_bins, n_bins);
    for &(k, w) in &samples {
        for a in 0..n_bins {
            let va = if k as usize == a { w } else { 0.0 } - m[a];
            for b in 0..n_bins {
                let vb = if k as usize == b { w } else { 0.0 } - m[b];
                cov[(a, b)] += va * vb / (n - 1.0);
            }
        }
    }
    let p = DVector::from_iterator(n_bins, (0..n_bins).map(|c| poisson_pmf(mean, c as u64)));
    let resid = &m - &p;
    let solved = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numeric {
            step: 0,
            detail: "weighted bin covariance is singular".into(),
        })?
        .solve(&resid);
    let statistic = n * resid.dot(&solved);
    Ok(ChiSquareTest {
        statistic,
        dof: n_bins,
        p_value: chi_square_sf(statistic, n_bins as f64),
    })
}

/// Sample covariance between `W_T − W_{t1}` and `τ(μ)([t1, s] × Δ)` built from
/// one Brownian path and one Poisson measure on `[t0, T]` per sample.
pub fn independence_cross_covariance(
    tc: &LinearTimeChange,
    levy: &LevyMeasureAtomic,
    window: &KulikWindow,
    n_steps: usize,
    n_paths: usize,
    seed: RngSeed,
) -> Result<MeanSe> {
    let grid = PathGrid::new(tc.t0, tc.horizon, n_steps)?;
    let target = tc.matched_grid(&grid)?;
    let pairs: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|p| -> Result<(f64, f64)> {
            let b = sample_brownian(&grid, 1, seed.path(p, BROWNIAN_STREAM));
            let w = timechange_brownian(tc, &b, &target)?;
            let mu = sample_poisson_on(tc.t0, tc.horizon, levy, seed.path(p, POISSON_STREAM));
            let image = kulik_transform(tc, &mu)?;
            let k = count_jumps(&image, (tc.t1, window.s), window.atoms.as_deref())?;
            Ok((w.increments().iter().sum(), k as f64))
        })
        .collect::<Result<_>>()?;
    let mean_k = pairs.iter().map(|p| p.1).sum::<f64>() / n_paths as f64;
    let prods: Vec<f64> = pairs.iter().map(|(w, k)| w * (k - mean_k)).collect();
    Ok(MeanSe::of(&prods))
}

fn le_rounded(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs * (1.0 + 1e-12) + 1e-15
}

/// Equality up to `tol` relative to `scale`, the magnitude of the summands.
fn rel_eq(a: f64, b: f64, scale: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * scale.max(a.abs()).max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Checks, for `t0, t1 ∈ [0, T − δ]`,
/// `|1 − 1/τ̇| = |t1 − t0|/(T − t0)`, `sup_r |τ⁻¹(r) − r| = |t0 − t1|` (at `r = t0`),
/// `|1 − √τ̇| ≤ |t0 − t1|/(T − t1)` and the combined bound with `C_δ = 1 + 2/δ`.
pub fn check_deterministic_bounds(tc: &LinearTimeChange, delta: f64, r_grid: &[f64]) -> Result<BoundReport> {
    let horizon = tc.horizon;
    if !(delta > 0.0) || tc.t0 > horizon - delta || tc.t1 > horizon - delta {
        return Err(precondition(format!(
            "need t0, t1 ≤ T − δ; got t0 = {}, t1 = {}, T − δ = {}",
            tc.t0,
            tc.t1,
            horizon - delta
        )));
    }
    let gap = (tc.t0 - tc.t1).abs();
    let q1 = (1.0 - 1.0 / tc.rate).abs();
    let q1_exact = gap / (horizon - tc.t0);
    let mut q2 = 0.0f64;
    for &r in r_grid {
        q2 = q2.max((tc.tau_inverse(r)? - r).abs());
    }
    let q2_sup = (tc.tau_inverse_unchecked(tc.t0) - tc.t0).abs();
    let q3 = (1.0 - tc.rate.sqrt()).abs();
    let q3_bound = gap / (horizon - tc.t1);
    let c_delta = 1.0 + 2.0 / delta;
    let lhs = q1 + q2.max(q2_sup) + q3;

    Ok(CheckReport {
        rows: vec![
            CheckRow::gate("one_minus_inv_rate", q1, 0.0, Some(q1_exact), rel_eq(q1, q1_exact, 1.0, 1e-12)),
            CheckRow::gate("sup_inverse_shift_grid", q2, 0.0, Some(gap), le_rounded(q2, gap)),
            CheckRow::gate("inverse_shift_at_t0", q2_sup, 0.0, Some(gap), rel_eq(q2_sup, gap, 1.0, 1e-12)),
            CheckRow::gate("one_minus_sqrt_rate", q3, 0.0, Some(q3_bound), le_rounded(q3, q3_bound)),
            CheckRow::gate("combined", lhs, 0.0, Some(c_delta * gap), le_rounded(lhs, c_delta * gap)),
        ],
    })
}

/// Exact identities and inequalities of the pair `τ_i : [t_i, T] → [t_λ, T]`,
/// `t_λ = λt0 + (1 − λ)t1`, on `s_grid ⊂ [t_λ, T]`, for `t0, t1 ∈ [0, T − δ]`.
///
/// Equalities are checked to `1e−12` relative to the magnitude of their
/// summands. Gating inequality constants:
/// `C_δ = 1 + 1/δ + √T/(2δ^{3/2})` for the difference bound, `1/δ` for the
/// weighted first-order bound and `1/δ²` for the second-order bound. The
/// first-order bound with `1/(2δ)` is reported as an informational row; it
/// fails near `t0 ≈ t1 ≈ T − δ`, where the ratio tends to `1/δ`.
pub fn double_timechange_identities(
    t0: f64,
    t1: f64,
    horizon: f64,
    lambda: f64,
    delta: f64,
    s_grid: &[f64],
) -> Result<IdentityReport> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::OutOfRange {
            what: "lambda",
            value: lambda,
            lo: 0.0,
            hi: 1.0,
        });
    }
    if !(delta > 0.0) || !(t0 >= 0.0 && t1 >= 0.0) || t0 > horizon - delta || t1 > horizon - delta {
        return Err(precondition(format!(
            "need t0, t1 ∈ [0, T − δ]; got t0 = {t0}, t1 = {t1}, T = {horizon}, δ = {delta}"
        )));
    }
    let mu = 1.0 - lambda;
    let t_lam = lambda * t0 + mu * t1;
    let tc0 = LinearTimeChange::new(t_lam, t0, horizon)?;
    let tc1 = LinearTimeChange::new(t_lam, t1, horizon)?;
    let (r0, r1) = (tc0.rate, tc1.rate);
    let gap = (t0 - t1).abs();
    let ll = lambda * mu;
    let mut rows = Vec::new();

    // convex combination of the inverses
    let mut worst = 0.0f64;
    let mut comb_ok = true;
    let mut diff_lhs = 0.0f64;
    for &s in s_grid {
        let a = tc0.tau_inverse(s)?;
        let b = tc1.tau_inverse(s)?;
        let lhs = lambda * a + mu * b;
        let scale = lambda * a.abs() + mu * b.abs();
        comb_ok &= rel_eq(lhs, s, scale, 1e-12);
        worst = worst.max((lhs - s).abs() / scale.max(s.abs()).max(f64::MIN_POSITIVE));
        diff_lhs = diff_lhs.max((a - b).abs());
    }
    rows.push(CheckRow::gate("convex_inverse_max_rel_error", worst, 0.0, Some(0.0), comb_ok));

    // drift cancellation
    let a = lambda * (1.0 - 1.0 / r0);
    let b = -mu * (1.0 - 1.0 / r1);
    let c = ll / (horizon - t_lam) * (t0 - t1);
    let scale = lambda * (1.0f64).max(1.0 / r0) + mu * (1.0f64).max(1.0 / r1);
    rows.push(CheckRow::gate("drift_cancellation_lhs", a, 0.0, Some(c), rel_eq(a, c, scale, 1e-12)));
    rows.push(CheckRow::gate("drift_cancellation_mid", b, 0.0, Some(c), rel_eq(b, c, scale, 1e-12)));

    // difference bound
    let inv = |r: f64| 1.0 / r;
    let isq = |r: f64| 1.0 / r.sqrt();
    let diff = diff_lhs + (inv(r0) - inv(r1)).abs() + (isq(r0) - isq(r1)).abs();
    let c_diff = 1.0 + 1.0 / delta + horizon.sqrt() / (2.0 * delta.powf(1.5));
    rows.push(CheckRow::gate("difference_bound", diff, 0.0, Some(c_diff * gap), le_rounded(diff, c_diff * gap)));

    // first-order weighted bound
    let first = lambda * (1.0 - isq(r0)).abs() + mu * (1.0 - isq(r1)).abs();
    rows.push(CheckRow::gate(
        "first_order_bound",
        first,
        0.0,
        Some(ll * gap / delta),
        le_rounded(first, ll * gap / delta),
    ));
    let half = ll * gap / (2.0 * delta);
    rows.push(CheckRow::info("first_order_bound_half_constant", first, 0.0, Some(half), le_rounded(first, half)));

    // second-order bound
    let second = (lambda * (1.0 - isq(r0)) + mu * (1.0 - isq(r1))).abs();
    let bound2 = ll * gap * gap / (delta * delta);
    rows.push(CheckRow::gate("second_order_bound", second, 0.0, Some(bound2), le_rounded(second, bound2)));

    Ok(CheckReport { rows })
}
