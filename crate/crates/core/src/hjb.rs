//! Explicit finite differences for the one-dimensional integro-PDE
//!
//! `∂_t V + min_u { L^u V + B^u V + f(t, x, V, σ ∂_x V, V(x + β) − V, u) } = 0`,
//! `V(T, x) = Φ(x)`.

use rayon::prelude::*;

use crate::error::{precondition, Error, Result};
use crate::model::{DriverArgs, ModelSpec};
use crate::report::{fmt_f64, CsvTable};

/// Uniform grid `x_i = x_min + i Δx` for `i = 0..=n_x` and
/// `t_k = t_start + k Δt` for `k = 0..=n_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid {
    x_min: f64,
    x_max: f64,
    n_x: usize,
    t_start: f64,
    t_end: f64,
    n_t: usize,
}

impl SpaceTimeGrid {
    pub fn new(x_min: f64, x_max: f64, n_x: usize, t_start: f64, t_end: f64, n_t: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite() && x_min < x_max) {
            return Err(precondition(format!("empty x-range [{x_min}, {x_max}]")));
        }
        if n_x < 2 {
            return Err(precondition("at least 2 space cells are required"));
        }
        if !(t_start.is_finite() && t_end.is_finite() && t_start < t_end) {
            return Err(precondition(format!("empty time range [{t_start}, {t_end}]")));
        }
        if n_t == 0 {
            return Err(precondition("at least one time step is required"));
        }
        Ok(Self {
            x_min,
            x_max,
            n_x,
            t_start,
            t_end,
            n_t,
        })
    }

    /// Grid on `[x_min, x_max] × [t_start, T]` with spacing `dx` and the fewest
    /// time steps with `Δt ≤ fraction · cfl_max_dt`.
    pub fn with_cfl(model: &ModelSpec, x_min: f64, x_max: f64, dx: f64, t_start: f64, fraction: f64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::OutOfRange {
                what: "CFL fraction",
                value: fraction,
                lo: 0.0,
                hi: 1.0,
            });
        }
        let n_x = cells_for(x_min, x_max, dx)?;
        let dx = (x_max - x_min) / n_x as f64;
        let t_end = model.horizon();
        let span = t_end - t_start;
        let max_dt = cfl_max_dt(model, x_min, x_max, dx, span);
        let n_t = (span / (fraction * max_dt)).ceil().max(1.0) as usize;
        Self::new(x_min, x_max, n_x, t_start, t_end, n_t)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    /// Number of space cells; there are `n_x + 1` nodes.
    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_x as f64
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t_start) / self.n_t as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        if i == self.n_x {
            self.x_max
        } else {
            self.x_min + i as f64 * self.dx()
        }
    }

    pub fn t(&self, k: usize) -> f64 {
        if k == self.n_t {
            self.t_end
        } else {
            self.t_start + k as f64 * self.dt()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.n_x).map(|i| self.x(i)).collect()
    }
}

fn cells_for(x_min: f64, x_max: f64, dx: f64) -> Result<usize> {
    if !(dx > 0.0 && dx.is_finite()) {
        return Err(precondition(format!("space step {dx} must be positive")));
    }
    let cells = (x_max - x_min) / dx;
    let n = cells.round();
    if !(n >= 2.0) || (cells - n).abs() > 1e-6 * n {
        return Err(precondition(format!(
            "space step {dx} does not divide [{x_min}, {x_max}] into at least 2 cells"
        )));
    }
    Ok(n as usize)
}

/// Explicit-step budget `1 / (sup σ²/Δx² + sup|b|/Δx + 2Π(E) + L_f)`, with
/// sups over the controls, the space nodes and sampled times (and never below
/// the declared bounds). Returns `cap` when every term vanishes.
pub fn cfl_max_dt(model: &ModelSpec, x_min: f64, x_max: f64, dx: f64, cap: f64) -> f64 {
    let declared = model.bounds();
    let mut sig = declared.diffusion.sup;
    let mut drift = declared.drift.sup;
    let horizon = model.horizon();
    let n_cells = ((x_max - x_min) / dx).round().max(1.0) as usize;
    const TIMES: usize = 32;
    for u in model.controls().iter() {
        for s in 0..=TIMES {
            let t = horizon * s as f64 / TIMES as f64;
            for i in 0..=n_cells {
                let x = x_min + (x_max - x_min) * i as f64 / n_cells as f64;
                sig = sig.max(model.diffusion_1d(t, x, u).abs());
                drift = drift.max(model.drift_1d(t, x, u).abs());
            }
        }
    }
    let rate = sig * sig / (dx * dx) + drift / dx + 2.0 * model.levy().total_mass() + declared.driver.lip;
    if rate > 0.0 {
        (1.0 / rate).min(cap)
    } else {
        cap
    }
}

/// `V(t_k, x_i)` on every node of a [`SpaceTimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    grid: SpaceTimeGrid,
    /// Row-major: `values[k * (n_x + 1) + i]`.
    values: Vec<f64>,
}

impl ValueGrid {
    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.grid
    }

    pub fn row(&self, k: usize) -> &[f64] {
        let w = self.grid.n_x + 1;
        &self.values[k * w..(k + 1) * w]
    }

    pub fn value(&self, k: usize, i: usize) -> f64 {
        self.row(k)[i]
    }

    /// Bilinear interpolation in `(t, x)`.
    pub fn evaluate(&self, t: f64, x: f64) -> Result<f64> {
        let g = &self.grid;
        if !(t >= g.t_start && t <= g.t_end) {
            return Err(Error::OutOfRange {
                what: "time",
                value: t,
                lo: g.t_start,
                hi: g.t_end,
            });
        }
        if !(x >= g.x_min && x <= g.x_max) {
            return Err(Error::OutOfRange {
                what: "state",
                value: x,
                lo: g.x_min,
                hi: g.x_max,
            });
        }
        let (k, a) = locate(t, g.t_start, g.dt(), g.n_t);
        let (i, b) = locate(x, g.x_min, g.dx(), g.n_x);
        let lerp = |row: &[f64]| match b {
            0.0 => row[i],
            1.0 => row[i + 1],
            _ => row[i] + b * (row[i + 1] - row[i]),
        };
        Ok(match a {
            0.0 => lerp(self.row(k)),
            1.0 => lerp(self.row(k + 1)),
            _ => {
                let lo = lerp(self.row(k));
                lo + a * (lerp(self.row(k + 1)) - lo)
            }
        })
    }

    /// Dump with columns `t, x, V`.
    pub fn to_table(&self) -> CsvTable {
        self.to_table_sampled(self.grid.n_t + 1)
    }

    /// As [`ValueGrid::to_table`] on at most `rows` time rows, evenly spaced
    /// and always including both ends.
    pub fn to_table_sampled(&self, rows: usize) -> CsvTable {
        let mut t = CsvTable::new(&["t", "x", "V"]);
        let xs: Vec<String> = self.grid.xs().into_iter().map(fmt_f64).collect();
        let n = self.grid.n_t;
        let mut ks: Vec<usize> = if rows > n {
            (0..=n).collect()
        } else {
            let r = rows.max(2) - 1;
            (0..=r).map(|j| j * n / r).collect()
        };
        ks.dedup();
        for k in ks {
            let time = fmt_f64(self.grid.t(k));
            for (x, v) in xs.iter().zip(self.row(k)) {
                t.push(vec![time.clone(), x.clone(), fmt_f64(*v)]);
            }
        }
        t
    }
}

/// Cell index and fractional position of `v` on a uniform axis of `n` cells.
/// Positions within `1e-9` cells of a node snap to it.
fn locate(v: f64, start: f64, step: f64, n: usize) -> (usize, f64) {
    let mut s = (v - start) / step;
    if (s - s.round()).abs() < 1e-9 {
        s = s.round();
    }
    let i = (s.max(0.0).floor() as usize).min(n - 1);
    (i, (s - i as f64).clamp(0.0, 1.0))
}

/// Linear interpolation of a row at `x`, constant beyond the grid.
fn interpolate(row: &[f64], x_min: f64, dx: f64, x: f64) -> f64 {
    let n = row.len() - 1;
    let s = (x - x_min) / dx;
    if s <= 0.0 {
        return row[0];
    }
    if s >= n as f64 {
        return row[n];
    }
    let i = s.floor() as usize;
    let a = s - i as f64;
    if a == 0.0 {
        row[i]
    } else {
        row[i] + a * (row[i + 1] - row[i])
    }
}

/// Backward explicit sweep of the integro-PDE from `V(T) = Φ`, with the
/// pointwise minimum over the model's control set.
pub fn solve_ipde(model: &ModelSpec, grid: &SpaceTimeGrid) -> Result<ValueGrid> {
    if model.dim() != 1 {
        return Err(precondition("the finite-difference solver handles d = 1"));
    }
    if grid.t_end != model.horizon() {
        return Err(precondition(format!(
            "grid ends at {}, model horizon is {}",
            grid.t_end,
            model.horizon()
        )));
    }
    let dx = grid.dx();
    let dt = grid.dt();
    let max_dt = cfl_max_dt(model, grid.x_min, grid.x_max, dx, f64::INFINITY);
    if dt > max_dt {
        return Err(Error::Stability { dt, max_dt });
    }
    let w = grid.n_x + 1;
    let xs = grid.xs();
    let levy = model.levy();
    let nj = levy.len();
    let marks: Vec<&[f64]> = (0..nj).map(|j| levy.atom(j)).collect();
    let pis = levy.weights();
    let controls = model.controls();

    let mut values = vec![0.0; (grid.n_t + 1) * w];
    for (slot, &x) in values[grid.n_t * w..].iter_mut().zip(&xs) {
        *slot = model.terminal_1d(x);
        if !slot.is_finite() {
            return Err(Error::NonFiniteCoefficient {
                coefficient: "terminal".into(),
                input: format!("x = {x}"),
            });
        }
    }

    for k in (0..grid.n_t).rev() {
        let t = grid.t(k);
        let (head, tail) = values.split_at_mut((k + 1) * w);
        let next = &tail[..w];
        let cur = &mut head[k * w..];
        cur.par_iter_mut().enumerate().try_for_each(|(i, out)| -> Result<()> {
            let x = xs[i];
            let v = next[i];
            // constant extrapolation at the ends makes boundary differences one-sided
            let left = if i == 0 { v } else { next[i - 1] };
            let right = if i + 1 == w { v } else { next[i + 1] };
            let d2 = (right - 2.0 * v + left) / (dx * dx);
            let d1 = (right - left) / (2.0 * dx);
            let fwd = (right - v) / dx;
            let bwd = (v - left) / dx;
            let mut p = vec![0.0; nj];
            let mut best = f64::INFINITY;
            for u in controls.iter() {
                let b = model.drift_1d(t, x, u);
                let sig = model.diffusion_1d(t, x, u);
                let mut gen = 0.5 * sig * sig * d2 + if b > 0.0 { b * fwd } else { b * bwd };
                for j in 0..nj {
                    let beta = model.jump_1d(t, x, u, marks[j]);
                    let target = x + beta;
                    if !target.is_finite() {
                        return Err(Error::Numeric {
                            step: k,
                            detail: format!("jump target {target} at x = {x}"),
                        });
                    }
                    p[j] = interpolate(next, grid.x_min, dx, target) - v;
                    gen += pis[j] * (p[j] - beta * d1);
                }
                let z = [d1 * sig];
                let f = model.driver(&DriverArgs {
                    t,
                    x: &[x],
                    y: v,
                    z: &z,
                    p: &p,
                    u,
                });
                best = best.min(gen + f);
            }
            let new = v + dt * best;
            if !new.is_finite() {
                return Err(Error::Numeric {
                    step: k,
                    detail: format!("non-finite value at x = {x}"),
                });
            }
            *out = new;
            Ok(())
        })?;
    }
    Ok(ValueGrid { grid: *grid, values })
}

/// Bilinear evaluation of a solved grid; see [`ValueGrid::evaluate`].
pub fn evaluate_value(vg: &ValueGrid, t: f64, x: f64) -> Result<f64> {
    vg.evaluate(t, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lookup_model, ControlSet, LevyMeasureAtomic};
    use proptest::prelude::*;

    fn heat(horizon: f64) -> ModelSpec {
        ModelSpec::builder("heat", 1, horizon)
            .diffusion(|_, _, _, o| o[0] = 1.0)
            .build()
            .unwrap()
    }

    #[test]
    fn cfl_examples() {
        let m = heat(1.0);
        assert!((cfl_max_dt(&m, -1.0, 1.0, 0.05, 1.0) - 0.0025).abs() < 1e-15);
        let zero = ModelSpec::builder("zero", 1, 1.0).build().unwrap();
        assert_eq!(cfl_max_dt(&zero, -1.0, 1.0, 0.05, 0.7), 0.7);
        let a = cfl_max_dt(&m, -1.0, 1.0, 0.05, 1.0);
        let b = cfl_max_dt(&m, -1.0, 1.0, 0.1, 1.0);
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn stability_is_enforced() {
        let m = heat(1.0);
        let g = SpaceTimeGrid::new(-1.0, 1.0, 40, 0.0, 1.0, 100).unwrap();
        assert!(matches!(solve_ipde(&m, &g), Err(Error::Stability { .. })));
        let ok = SpaceTimeGrid::with_cfl(&m, -1.0, 1.0, 0.05, 0.0, 0.5).unwrap();
        assert!(ok.dt() <= 0.00125 + 1e-15);
        assert_eq!(ok.n_x(), 40);
        assert!(SpaceTimeGrid::with_cfl(&m, -1.0, 1.0, 0.3, 0.0, 0.5).is_err());
    }

    #[test]
    fn constants_are_preserved_exactly() {
        let m = lookup_model("lq_jump").unwrap();
        let m = ModelSpec::builder("c", 1, 1.0)
            .levy(m.levy().clone())
            .drift({
                let b = m.clone();
                move |t, x, u, o| b.drift(t, x, u, o)
            })
            .diffusion({
                let b = m.clone();
                move |t, x, u, o| b.diffusion(t, x, u, o)
            })
            .jump(move |t, x, u, e, o| m.jump(t, x, u, e, o))
            .controls(ControlSet::scalar(&[-0.5, 0.0, 0.5]).unwrap())
            .terminal(|_| 1.75)
            .build()
            .unwrap();
        let g = SpaceTimeGrid::with_cfl(&m, -3.0, 3.0, 0.1, 0.0, 0.5).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        for k in 0..=g.n_t() {
            assert!(v.row(k).iter().all(|&x| x == 1.75));
        }
    }

    #[test]
    fn counterexample_matches_the_closed_form() {
        let m = lookup_model("counterexample").unwrap();
        let g = SpaceTimeGrid::with_cfl(&m, -6.0, 6.0, 0.02, 0.0, 0.5).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        for t in [0.0, 0.25, 0.5, 0.75] {
            let exact = -(2.0 / std::f64::consts::PI).sqrt() * (1.0f64 - t).sqrt();
            let got = v.evaluate(t, 0.0).unwrap();
            assert!((got / exact - 1.0).abs() < 0.01, "t = {t}: {got} vs {exact}");
        }
    }

    #[test]
    fn heat_moment() {
        let m = lookup_model("heat_quadratic").unwrap();
        let g = SpaceTimeGrid::with_cfl(&m, -6.0, 6.0, 0.05, 0.0, 0.5).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        for t in [0.0, 0.5, 0.9] {
            let got = v.evaluate(t, 0.0).unwrap();
            assert!((got / (1.0 - t) - 1.0).abs() < 0.01, "t = {t}: {got}");
        }
    }

    #[test]
    fn interpolation_examples() {
        let m = heat(1.0).with_terminal(|x| x[0].sin(), Default::default());
        let g = SpaceTimeGrid::with_cfl(&m, -1.0, 1.0, 0.1, 0.0, 1.0).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        assert_eq!(v.evaluate(g.t(3), g.x(7)).unwrap(), v.value(3, 7));
        let mid = v.evaluate(g.t(2), 0.5 * (g.x(4) + g.x(5))).unwrap();
        assert!((mid - 0.5 * (v.value(2, 4) + v.value(2, 5))).abs() < 1e-14);
        assert_eq!(v.evaluate(1.0, g.x(4)).unwrap(), g.x(4).sin());
        assert!(v.evaluate(1.2, 0.0).is_err());
        assert!(v.evaluate(0.0, -1.5).is_err());
        assert_eq!(v.to_table().rows.len(), (g.n_t() + 1) * 21);
        let few = v.to_table_sampled(3);
        assert_eq!(few.rows.len(), 3 * 21);
        assert_eq!(few.rows.last().unwrap()[0], "1");
    }

    #[test]
    fn more_controls_never_increase_the_value() {
        let m = lookup_model("lq_jump").unwrap();
        let small = m.with_controls(ControlSet::scalar(&[0.0]).unwrap());
        let g = SpaceTimeGrid::with_cfl(&m, -4.0, 4.0, 0.1, 0.5, 0.5).unwrap();
        let big = solve_ipde(&m, &g).unwrap();
        let one = solve_ipde(&small, &g).unwrap();
        for k in 0..=g.n_t() {
            for (a, b) in big.row(k).iter().zip(one.row(k)) {
                assert!(a <= b);
            }
        }
    }

    #[test]
    fn nonlocal_term_vanishes_on_linear_terminal() {
        // β = e independent of x; one explicit step of a linear Φ stays linear
        let m = ModelSpec::builder("lin", 1, 1.0)
            .levy(LevyMeasureAtomic::scalar(&[-0.4, 0.6], &[1.0, 2.0]).unwrap())
            .jump(|_, _, _, e, o| o[0] = e[0])
            .terminal(|x| 2.0 * x[0] - 1.0)
            .build()
            .unwrap();
        let g = SpaceTimeGrid::new(-5.0, 5.0, 100, 0.99, 1.0, 1).unwrap();
        let v = solve_ipde(&m, &g).unwrap();
        for i in 0..=100 {
            let x = g.x(i);
            if x - 0.4 > -5.0 && x + 0.6 < 5.0 && i > 0 && i < 100 {
                assert!((v.value(0, i) - v.value(1, i)).abs() < 1e-12, "x = {x}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scheme_is_monotone(
            a in proptest::collection::vec(-2.0f64..2.0, 6),
            bump in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let knots: Vec<f64> = a.clone();
            let lower = move |x: f64| {
                let s = ((x + 3.0) / 1.2).clamp(0.0, 4.999);
                let i = s.floor() as usize;
                knots[i] + (s - i as f64) * (knots[i + 1] - knots[i])
            };
            let upper = {
                let lower = lower.clone();
                let bump = bump.clone();
                move |x: f64| lower(x) + bump[((x + 3.0) / 1.2).clamp(0.0, 5.0) as usize]
            };
            let base = lookup_model("pure_jump").unwrap();
            let base = ModelSpec::builder("mono", 1, 0.5)
                .levy(base.levy().clone())
                .jump(move |t, x, u, e, o| base.jump(t, x, u, e, o))
                .drift(|_, x, _, o| o[0] = (x[0]).sin())
                .diffusion(|_, _, _, o| o[0] = 0.7)
                .build()
                .unwrap();
            let m1 = base.with_terminal(move |x| lower(x[0]), Default::default());
            let m2 = base.with_terminal(move |x| upper(x[0]), Default::default());
            let g = SpaceTimeGrid::with_cfl(&m1, -3.0, 3.0, 0.1, 0.0, 1.0).unwrap();
            let v1 = solve_ipde(&m1, &g).unwrap();
            let v2 = solve_ipde(&m2, &g).unwrap();
            for k in 0..=g.n_t() {
                for (x, y) in v1.row(k).iter().zip(v2.row(k)) {
                    prop_assert!(x <= y);
                }
            }
        }
    }
}
