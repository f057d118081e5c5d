//! Empirical Lipschitz and semiconcavity constants of a value function on
//! `[t_lo, T − δ] × [a, b]`, and their blow-up as `δ → 0`.

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{precondition, Error, Result};
use crate::hjb::ValueGrid;
use crate::model::ModelSpec;
use crate::report::{fmt_f64, CsvTable};
use crate::stats::normal_cdf;
use crate::stochastics::RngSeed;

/// A value function with a rectangular domain.
pub trait ValueOracle: Sync {
    fn value(&self, t: f64, x: f64) -> Result<f64>;
    /// `((t_lo, t_hi), (x_lo, x_hi))`.
    fn hull(&self) -> ((f64, f64), (f64, f64));
    /// `(Δt, Δx)` of the underlying grid; zero for closed forms.
    fn resolution(&self) -> (f64, f64) {
        (0.0, 0.0)
    }
    /// Sub-interval of the state hull where truncation effects are negligible.
    fn safe_x(&self) -> (f64, f64) {
        self.hull().1
    }
}

/// `−E|x + G|` with `G ~ N(0, T − t)`.
pub fn closed_form_counterexample(t: f64, x: f64, horizon: f64) -> Result<f64> {
    if !(t >= 0.0 && t <= horizon) {
        return Err(Error::OutOfRange {
            what: "time",
            value: t,
            lo: 0.0,
            hi: horizon,
        });
    }
    let s = (horizon - t).sqrt();
    if s == 0.0 {
        return Ok(-x.abs());
    }
    Ok(-(s * (2.0 / PI).sqrt() * (-x * x / (2.0 * s * s)).exp() + x * (1.0 - 2.0 * normal_cdf(-x / s))))
}

/// Closed-form counterexample value on `[0, T] × [−x_reach, x_reach]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CounterexampleOracle {
    pub horizon: f64,
    pub x_reach: f64,
}

impl CounterexampleOracle {
    pub fn new(horizon: f64) -> Self {
        Self { horizon, x_reach: 6.0 }
    }
}

impl ValueOracle for CounterexampleOracle {
    fn value(&self, t: f64, x: f64) -> Result<f64> {
        closed_form_counterexample(t, x, self.horizon)
    }

    fn hull(&self) -> ((f64, f64), (f64, f64)) {
        ((0.0, self.horizon), (-self.x_reach, self.x_reach))
    }
}

/// Any closure on a rectangle.
pub struct FnOracle<F> {
    f: F,
    t_range: (f64, f64),
    x_range: (f64, f64),
}

impl<F: Fn(f64, f64) -> f64 + Sync> FnOracle<F> {
    pub fn new(f: F, t_range: (f64, f64), x_range: (f64, f64)) -> Self {
        Self { f, t_range, x_range }
    }
}

impl<F: Fn(f64, f64) -> f64 + Sync> ValueOracle for FnOracle<F> {
    fn value(&self, t: f64, x: f64) -> Result<f64> {
        let ((t0, t1), (x0, x1)) = self.hull();
        if !(t >= t0 && t <= t1) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                lo: t0,
                hi: t1,
            });
        }
        if !(x >= x0 && x <= x1) {
            return Err(Error::OutOfRange {
                what: "state",
                value: x,
                lo: x0,
                hi: x1,
            });
        }
        Ok((self.f)(t, x))
    }

    fn hull(&self) -> ((f64, f64), (f64, f64)) {
        (self.t_range, self.x_range)
    }
}

/// A solved finite-difference grid, with the states within
/// `4 (sup|β| + √T sup|σ|)` of the edges excluded from probing.
pub struct GridOracle<'a> {
    grid: &'a ValueGrid,
    margin: f64,
}

impl<'a> GridOracle<'a> {
    pub fn new(grid: &'a ValueGrid, model: &ModelSpec) -> Self {
        let g = grid.grid();
        let xs = g.xs();
        let levy = model.levy();
        let (mut beta, mut sig) = (0.0f64, 0.0f64);
        for u in model.controls().iter() {
            for k in [0, g.n_t() / 2, g.n_t()] {
                let t = g.t(k);
                for &x in &xs {
                    sig = sig.max(model.diffusion_1d(t, x, u).abs());
                    for j in 0..levy.len() {
                        beta = beta.max(model.jump_1d(t, x, u, levy.atom(j)).abs());
                    }
                }
            }
        }
        let span = g.t_end() - g.t_start();
        Self {
            grid,
            margin: 4.0 * (beta + span.sqrt() * sig),
        }
    }

    pub fn margin(&self) -> f64 {
        self.margin
    }
}

impl ValueOracle for GridOracle<'_> {
    fn value(&self, t: f64, x: f64) -> Result<f64> {
        self.grid.evaluate(t, x)
    }

    fn hull(&self) -> ((f64, f64), (f64, f64)) {
        let g = self.grid.grid();
        ((g.t_start(), g.t_end()), (g.x_min(), g.x_max()))
    }

    fn resolution(&self) -> (f64, f64) {
        let g = self.grid.grid();
        (g.dt(), g.dx())
    }

    fn safe_x(&self) -> (f64, f64) {
        let g = self.grid.grid();
        (g.x_min() + self.margin, g.x_max() - self.margin)
    }
}

/// Which displacements the probes use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ProbeMode {
    /// Cycle through pure `Δt`, pure `Δx` and general displacements.
    #[default]
    Joint,
    TimeOnly,
    SpaceOnly,
}

/// Probe design for one `δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub delta: f64,
    /// `[a, b]`; `a == b` probes a single state (time displacements only).
    pub x_box: (f64, f64),
    pub n_pairs: usize,
    pub n_triples: usize,
    pub lambdas: Vec<f64>,
    /// Floor on the minimum separation of each axis; the effective value is
    /// `max(floor, 4 · resolution)`.
    pub separation_floor: f64,
    pub mode: ProbeMode,
}

impl ProbePlan {
    pub fn new(delta: f64, x_box: (f64, f64)) -> Self {
        Self {
            delta,
            x_box,
            n_pairs: 2000,
            n_triples: 2000,
            lambdas: vec![0.25, 0.5, 0.75],
            separation_floor: 1e-3,
            mode: ProbeMode::Joint,
        }
    }

    pub fn with_mode(mut self, mode: ProbeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_counts(mut self, n_pairs: usize, n_triples: usize) -> Self {
        self.n_pairs = n_pairs;
        self.n_triples = n_triples;
        self
    }

    fn region(&self, oracle: &dyn ValueOracle) -> Result<Region> {
        let ((t_lo, t_end), _) = oracle.hull();
        let (safe_lo, safe_hi) = oracle.safe_x();
        if !(self.delta > 0.0) {
            return Err(precondition(format!("delta {} must be positive", self.delta)));
        }
        let t_hi = t_end - self.delta;
        let (a, b) = self.x_box;
        if !(a <= b) || a < safe_lo || b > safe_hi {
            return Err(Error::OutOfRange {
                what: "probe box",
                value: if a < safe_lo { a } else { b },
                lo: safe_lo,
                hi: safe_hi,
            });
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0 && l < 1.0)) {
            return Err(precondition("semiconcavity weights must lie in (0, 1)"));
        }
        let (rt, rx) = oracle.resolution();
        let sep_t = self.separation_floor.max(4.0 * rt);
        let sep_x = self.separation_floor.max(4.0 * rx);
        let time_room = t_hi - t_lo >= 4.0 * sep_t;
        let space_room = b - a >= 4.0 * sep_x;
        let kinds: &[Kind] = match (self.mode, time_room, space_room) {
            (ProbeMode::Joint, true, true) => &[Kind::Time, Kind::Space, Kind::General],
            (ProbeMode::Joint | ProbeMode::TimeOnly, true, _) => &[Kind::Time],
            (ProbeMode::Joint | ProbeMode::SpaceOnly, _, true) => &[Kind::Space],
            _ => {
                return Err(precondition(format!(
                    "probe region [{t_lo}, {t_hi}] x [{a}, {b}] admits no separation of 4 x ({sep_t}, {sep_x})"
                )))
            }
        };
        Ok(Region {
            t: (t_lo, t_hi),
            x: (a, b),
            sep: (sep_t, sep_x),
            kinds: kinds.to_vec(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Time,
    Space,
    General,
}

struct Region {
    t: (f64, f64),
    x: (f64, f64),
    sep: (f64, f64),
    kinds: Vec<Kind>,
}

impl Region {
    /// Probe `i`: a pair of points, drawn from its own seed so that the first
    /// `n` probes do not depend on how many follow.
    fn pair(&self, seed: RngSeed, i: usize) -> ([f64; 2], [f64; 2]) {
        let mut rng = seed.derive(i as u64).rng();
        let kind = self.kinds[i % self.kinds.len()];
        let mult = [1.0, 2.0, 4.0][rng.random_range(0..3)];
        let (dt, dx) = match kind {
            Kind::Time => (mult * self.sep.0, 0.0),
            Kind::Space => (0.0, mult * self.sep.1),
            Kind::General => (mult * self.sep.0, [1.0, 2.0, 4.0][rng.random_range(0..3)] * self.sep.1),
        };
        // a quarter of the probes touch the late edge, where the constants peak
        let t0 = if rng.random_bool(0.25) {
            self.t.1 - dt
        } else {
            self.t.0 + rng.random::<f64>() * (self.t.1 - self.t.0 - dt)
        };
        let x0 = self.x.0 + rng.random::<f64>() * (self.x.1 - self.x.0 - dx);
        let (xa, xb) = if rng.random_bool(0.5) { (x0, x0 + dx) } else { (x0 + dx, x0) };
        ([t0, xa], [t0 + dt, xb])
    }
}

fn max_ratio(values: Vec<Result<f64>>) -> Result<f64> {
    let mut best = 0.0f64;
    for v in values {
        let v = v?;
        if v.is_nan() {
            return Err(Error::Numeric {
                step: 0,
                detail: "probe ratio is NaN".into(),
            });
        }
        best = best.max(v);
    }
    Ok(best)
}

/// Largest `|V(p0) − V(p1)| / (|Δt| + |Δx|)` over the plan's pairs.
pub fn estimate_lipschitz(oracle: &dyn ValueOracle, plan: &ProbePlan, seed: RngSeed) -> Result<f64> {
    let region = plan.region(oracle)?;
    let ratios = (0..plan.n_pairs)
        .into_par_iter()
        .map(|i| {
            let (p0, p1) = region.pair(seed, i);
            let dv = oracle.value(p0[0], p0[1])? - oracle.value(p1[0], p1[1])?;
            Ok(dv.abs() / ((p1[0] - p0[0]).abs() + (p1[1] - p0[1]).abs()))
        })
        .collect();
    max_ratio(ratios)
}

/// Largest `[λV(p0) + (1−λ)V(p1) − V(p_λ)] / [λ(1−λ)(|Δt|² + |Δx|²)]` over
/// the plan's triples, clamped below at 0.
pub fn estimate_semiconcavity(oracle: &dyn ValueOracle, plan: &ProbePlan, seed: RngSeed) -> Result<f64> {
    let region = plan.region(oracle)?;
    let seed = seed.derive(0x5C);
    let ratios = (0..plan.n_triples)
        .into_par_iter()
        .map(|i| {
            let (p0, p1) = region.pair(seed, i);
            let lam = plan.lambdas[i / region.kinds.len() % plan.lambdas.len()];
            let mid = [lam * p0[0] + (1.0 - lam) * p1[0], lam * p0[1] + (1.0 - lam) * p1[1]];
            let deficit = lam * oracle.value(p0[0], p0[1])? + (1.0 - lam) * oracle.value(p1[0], p1[1])?
                - oracle.value(mid[0], mid[1])?;
            let d2 = (p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2);
            Ok((deficit / (lam * (1.0 - lam) * d2)).max(0.0))
        })
        .collect();
    max_ratio(ratios)
}

/// One `(δ, quantity)` estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityRow {
    pub delta: f64,
    pub quantity: &'static str,
    pub estimate: f64,
    pub analytic: Option<f64>,
    pub n_probes: usize,
}

/// Estimates across `δ` with fitted exponents `C_δ ∝ δ^e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub rows: Vec<RegularityRow>,
    pub lipschitz_exponent: f64,
    pub semiconcavity_exponent: f64,
}

impl RegularityReport {
    pub fn estimates(&self, quantity: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.quantity == quantity)
            .map(|r| (r.delta, r.estimate))
            .collect()
    }

    /// Columns `delta, quantity, estimate, analytic_if_known, n_probes`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["delta", "quantity", "estimate", "analytic_if_known", "n_probes"]);
        for r in &self.rows {
            t.push(vec![
                fmt_f64(r.delta),
                r.quantity.to_string(),
                fmt_f64(r.estimate),
                r.analytic.map(fmt_f64).unwrap_or_default(),
                r.n_probes.to_string(),
            ]);
        }
        t
    }
}

/// Closed-form constants of the counterexample at `x = 0` under time probes.
pub fn counterexample_constants(delta: f64) -> (f64, f64) {
    let c = (2.0 / PI).sqrt();
    (0.5 * c * delta.powf(-0.5), 0.125 * c * delta.powf(-1.5))
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("{} points; at least 3 are required", points.len())));
    }
    if let Some(&(x, y)) = points.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(Error::Fit(format!("cannot take logarithms of ({x}, {y})")));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Both estimates at each `δ` (strictly decreasing, at least 3), with the
/// plan template's box and counts, and the fitted blow-up exponents.
/// `analytic` supplies known constants per `δ`.
pub fn blowup_profile(
    oracle: &dyn ValueOracle,
    deltas: &[f64],
    template: &ProbePlan,
    seed: RngSeed,
    analytic: Option<&dyn Fn(f64) -> (f64, f64)>,
) -> Result<RegularityReport> {
    if deltas.len() < 3 {
        return Err(Error::Fit(format!("{} delta values; at least 3 are required", deltas.len())));
    }
    if deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(precondition("delta values must be strictly decreasing"));
    }
    let mut rows = Vec::with_capacity(2 * deltas.len());
    for (i, &delta) in deltas.iter().enumerate() {
        let plan = ProbePlan {
            delta,
            ..template.clone()
        };
        let s = seed.derive(i as u64);
        let known = analytic.map(|f| f(delta));
        rows.push(RegularityRow {
            delta,
            quantity: "lipschitz",
            estimate: estimate_lipschitz(oracle, &plan, s)?,
            analytic: known.map(|k| k.0),
            n_probes: plan.n_pairs,
        });
        rows.push(RegularityRow {
            delta,
            quantity: "semiconcavity",
            estimate: estimate_semiconcavity(oracle, &plan, s)?,
            analytic: known.map(|k| k.1),
            n_probes: plan.n_triples,
        });
    }
    let mut report = RegularityReport {
        rows,
        lipschitz_exponent: f64::NAN,
        semiconcavity_exponent: f64::NAN,
    };
    report.lipschitz_exponent = log_log_slope(&report.estimates("lipschitz"))?;
    report.semiconcavity_exponent = log_log_slope(&report.estimates("semiconcavity"))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::{solve_ipde, SpaceTimeGrid};
    use crate::model::lookup_model;
    use proptest::prelude::*;

    fn within(a: f64, b: f64, rel: f64) -> bool {
        (a / b - 1.0).abs() <= rel
    }

    #[test]
    fn closed_form_examples() {
        let c = (2.0 / PI).sqrt();
        assert!((closed_form_counterexample(0.0, 0.0, 1.0).unwrap() + c).abs() < 1e-15);
        assert_eq!(closed_form_counterexample(1.0, -0.7, 1.0).unwrap(), -0.7);
        assert!((closed_form_counterexample(0.0, 1.0, 1.0).unwrap() + 1.1666309).abs() < 1e-7);
        assert!(closed_form_counterexample(1.1, 0.0, 1.0).is_err());
        // symmetric in x
        let a = closed_form_counterexample(0.3, 0.8, 1.0).unwrap();
        assert!((a - closed_form_counterexample(0.3, -0.8, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn trivial_oracles() {
        let plan = ProbePlan::new(0.1, (-1.0, 1.0)).with_counts(300, 300);
        let flat = FnOracle::new(|_, _| 3.0, (0.0, 1.0), (-2.0, 2.0));
        assert_eq!(estimate_lipschitz(&flat, &plan, RngSeed(1)).unwrap(), 0.0);
        assert_eq!(estimate_semiconcavity(&flat, &plan, RngSeed(1)).unwrap(), 0.0);

        let slope = FnOracle::new(|_, x| x, (0.0, 1.0), (-2.0, 2.0));
        assert!((estimate_lipschitz(&slope, &plan, RngSeed(1)).unwrap() - 1.0).abs() < 1e-10);

        let affine = FnOracle::new(|t, x| 2.0 * t - 0.5 * x + 1.0, (0.0, 1.0), (-2.0, 2.0));
        // zero up to rounding of the values over a squared separation of 1e-6
        assert!(estimate_semiconcavity(&affine, &plan, RngSeed(2)).unwrap() < 1e-7);

        // x² has deficit exactly λ(1−λ)Δx², the concave −x² a negative one
        let cup = FnOracle::new(|_, x| x * x, (0.0, 1.0), (-2.0, 2.0));
        let cap = FnOracle::new(|_, x| -x * x, (0.0, 1.0), (-2.0, 2.0));
        let space = plan.clone().with_mode(ProbeMode::SpaceOnly);
        assert!((estimate_semiconcavity(&cup, &space, RngSeed(3)).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(estimate_semiconcavity(&cap, &space, RngSeed(3)).unwrap(), 0.0);
    }

    #[test]
    fn counterexample_constants_at_x0() {
        let o = CounterexampleOracle::new(1.0);
        let (lip, semi) = counterexample_constants(0.1);
        assert!((lip - 1.2616).abs() < 1e-4);
        assert!((semi - 3.154).abs() < 1e-3);
        let plan = ProbePlan::new(0.1, (0.0, 0.0)).with_mode(ProbeMode::TimeOnly);
        assert!(within(estimate_lipschitz(&o, &plan, RngSeed(4)).unwrap(), lip, 0.10));
        assert!(within(estimate_semiconcavity(&o, &plan, RngSeed(4)).unwrap(), semi, 0.15));
    }

    #[test]
    fn counterexample_blowup() {
        let o = CounterexampleOracle::new(1.0);
        let plan = ProbePlan::new(0.4, (0.0, 0.0)).with_mode(ProbeMode::TimeOnly);
        let r = blowup_profile(&o, &[0.4, 0.2, 0.1, 0.05], &plan, RngSeed(5), Some(&counterexample_constants)).unwrap();
        assert!((r.lipschitz_exponent + 0.5).abs() < 0.1, "{}", r.lipschitz_exponent);
        assert!((r.semiconcavity_exponent + 1.5).abs() < 0.15, "{}", r.semiconcavity_exponent);
        assert_eq!(r.to_table().rows.len(), 8);
        assert!(blowup_profile(&o, &[0.4, 0.2], &plan, RngSeed(5), None).is_err());
        assert!(blowup_profile(&o, &[0.1, 0.2, 0.4], &plan, RngSeed(5), None).is_err());
    }

    #[test]
    fn smooth_value_has_flat_profile() {
        let o = FnOracle::new(|t, x| x * x + 1.0 - t, (0.0, 1.0), (-3.0, 3.0));
        let plan = ProbePlan::new(0.4, (-1.0, 1.0));
        let r = blowup_profile(&o, &[0.4, 0.2, 0.1, 0.05], &plan, RngSeed(6), None).unwrap();
        assert!(r.lipschitz_exponent.abs() < 0.15);
        assert!(r.semiconcavity_exponent.abs() < 0.15);
    }

    #[test]
    fn probes_outside_the_region_are_rejected() {
        let o = CounterexampleOracle::new(1.0);
        assert!(estimate_lipschitz(&o, &ProbePlan::new(0.1, (-7.0, 0.0)), RngSeed(0)).is_err());
        assert!(estimate_lipschitz(&o, &ProbePlan::new(0.0, (0.0, 1.0)), RngSeed(0)).is_err());
        assert!(estimate_lipschitz(&o, &ProbePlan::new(0.9999, (0.0, 0.0)), RngSeed(0)).is_err());
    }

    #[test]
    fn grid_oracle_tracks_the_closed_form() {
        let m = lookup_model("counterexample").unwrap();
        let g = SpaceTimeGrid::with_cfl(&m, -6.0, 6.0, 0.02, 0.0, 0.5).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        let o = GridOracle::new(&v, &m);
        assert!((o.margin() - 4.0).abs() < 1e-12);
        for delta in [0.4, 0.2, 0.1] {
            let plan = ProbePlan::new(delta, (0.0, 0.0)).with_mode(ProbeMode::TimeOnly);
            let (lip, semi) = counterexample_constants(delta);
            assert!(within(estimate_lipschitz(&o, &plan, RngSeed(7)).unwrap(), lip, 0.25));
            assert!(within(estimate_semiconcavity(&o, &plan, RngSeed(7)).unwrap(), semi, 0.25));
        }
        assert!(estimate_lipschitz(&o, &ProbePlan::new(0.1, (-3.0, 0.0)), RngSeed(0)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn estimates_grow_with_the_probe_set(n in 10usize..200, extra in 1usize..200, seed in 0u64..1000) {
            let o = CounterexampleOracle::new(1.0);
            let small = ProbePlan::new(0.2, (-1.0, 1.0)).with_counts(n, n);
            let big = small.clone().with_counts(n + extra, n + extra);
            prop_assert!(estimate_lipschitz(&o, &big, RngSeed(seed)).unwrap() >= estimate_lipschitz(&o, &small, RngSeed(seed)).unwrap());
            prop_assert!(estimate_semiconcavity(&o, &big, RngSeed(seed)).unwrap() >= estimate_semiconcavity(&o, &small, RngSeed(seed)).unwrap());
        }

        #[test]
        fn shift_and_scale(shift in -5.0f64..5.0, scale in 0.1f64..10.0, seed in 0u64..1000) {
            let plan = ProbePlan::new(0.2, (-1.0, 1.0)).with_counts(200, 200);
            let base = FnOracle::new(|t: f64, x: f64| (x * 1.3).sin() * (1.5 - t) + x.abs(), (0.0, 1.0), (-2.0, 2.0));
            let moved = FnOracle::new(move |t: f64, x: f64| scale * ((x * 1.3).sin() * (1.5 - t) + x.abs()) + shift, (0.0, 1.0), (-2.0, 2.0));
            let s = RngSeed(seed);
            let (l0, c0) = (estimate_lipschitz(&base, &plan, s).unwrap(), estimate_semiconcavity(&base, &plan, s).unwrap());
            let (l1, c1) = (estimate_lipschitz(&moved, &plan, s).unwrap(), estimate_semiconcavity(&moved, &plan, s).unwrap());
            prop_assert!((l1 - scale * l0).abs() <= 1e-6 * (1.0 + scale * l0));
            prop_assert!((c1 - scale * c0).abs() <= 1e-4 * (1.0 + scale * c0));
        }
    }
}
