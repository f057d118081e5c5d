//! Backward regression solver for the BSDE with jumps along a fixed control.
//!
//! From `Y_N = Φ(X_N)`, each step estimates
//! `Z_k = Ê[Y_{k+1} ΔB_k | X_k] / Δt`,
//! `U_k(e_j) = Ê[Y_{k+1} (N_{j,k} − π_j Δt) | X_k] / (π_j Δt)` and
//! `Y_k = Ê[Y_{k+1} | X_k] + f(t_k, X_k, Ê[Y_{k+1} | X_k], Z_k, U_k, u_k) Δt`,
//! all three on the same regression partition.

mod regression;

use rayon::prelude::*;

use crate::error::{precondition, Error, Result};
use crate::model::{DriverArgs, ModelSpec};
use crate::report::{fmt_f64, CsvTable};
use crate::stats::MeanSe;
use crate::sde::{simulate_forward, simulate_timechanged_forward, ControlPolicy, SdePath};
use crate::stochastics::{sample_path_noise, BrownianPath, PathGrid, PoissonPath, RngSeed};
use crate::timechange::{kulik_transform, timechange_brownian, LinearTimeChange};

pub use regression::{Partition, RegressionBasisConfig};

/// One-dimensional forward sample with its driving noise, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardEnsemble {
    grid: PathGrid,
    n_paths: usize,
    n_atoms: usize,
    /// `X_k(p)` at index `k * n_paths + p`.
    states: Vec<f64>,
    /// `ΔB_k(p)` at index `k * n_paths + p`.
    increments: Vec<f64>,
    /// `N_{j,k}(p)` at index `(k * n_paths + p) * n_atoms + j`.
    counts: Vec<u16>,
    /// Control index used on step `k` by path `p`.
    controls: Vec<u16>,
}

struct PathRecord {
    states: Vec<f64>,
    increments: Vec<f64>,
    counts: Vec<u16>,
    controls: Vec<usize>,
}

fn record(path: &SdePath, b: &BrownianPath, mu: &PoissonPath, grid: &PathGrid, n_atoms: usize) -> Result<PathRecord> {
    Ok(PathRecord {
        states: path.states().to_vec(),
        increments: b.increments().to_vec(),
        counts: mu.step_counts(grid, n_atoms)?,
        controls: path.controls().to_vec(),
    })
}

impl ForwardEnsemble {
    /// Assembles an ensemble from simulated paths and the noise that drove them.
    pub fn from_paths(
        model: &ModelSpec,
        paths: &[SdePath],
        brownian: &[BrownianPath],
        poisson: &[PoissonPath],
    ) -> Result<Self> {
        if paths.is_empty() {
            return Err(precondition("ensemble must contain at least one path"));
        }
        if paths.len() != brownian.len() || paths.len() != poisson.len() {
            return Err(Error::Shape("one Brownian and one Poisson record per path".into()));
        }
        if model.dim() != 1 {
            return Err(precondition("the regression solver handles d = 1"));
        }
        let grid = paths[0].grid().clone();
        let n_atoms = model.levy().len();
        let records = paths
            .iter()
            .zip(brownian.iter().zip(poisson))
            .map(|(p, (b, mu))| {
                if p.grid() != &grid || b.grid() != &grid {
                    return Err(Error::Shape("all paths must share one grid".into()));
                }
                record(p, b, mu, &grid, n_atoms)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(grid, n_atoms, records))
    }

    fn assemble(grid: PathGrid, n_atoms: usize, records: Vec<PathRecord>) -> Self {
        let n_paths = records.len();
        let n = grid.n_steps();
        let mut states = vec![0.0; (n + 1) * n_paths];
        let mut increments = vec![0.0; n * n_paths];
        let mut counts = vec![0u16; n * n_paths * n_atoms];
        let mut controls = vec![0u16; n * n_paths];
        for (p, r) in records.into_iter().enumerate() {
            for k in 0..=n {
                states[k * n_paths + p] = r.states[k];
            }
            for k in 0..n {
                increments[k * n_paths + p] = r.increments[k];
                controls[k * n_paths + p] = r.controls[k] as u16;
                let src = &r.counts[k * n_atoms..(k + 1) * n_atoms];
                let at = (k * n_paths + p) * n_atoms;
                counts[at..at + n_atoms].copy_from_slice(src);
            }
        }
        Self {
            grid,
            n_paths,
            n_atoms,
            states,
            increments,
            counts,
            controls,
        }
    }

    fn generate(
        model: &ModelSpec,
        n_paths: usize,
        grid: &PathGrid,
        sim: impl Fn(u64) -> Result<PathRecord> + Sync,
    ) -> Result<Self> {
        if n_paths == 0 {
            return Err(precondition("ensemble must contain at least one path"));
        }
        if model.dim() != 1 {
            return Err(precondition("the regression solver handles d = 1"));
        }
        if model.controls().len() > u16::MAX as usize {
            return Err(precondition("too many controls"));
        }
        let records = (0..n_paths as u64)
            .into_par_iter()
            .map(&sim)
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::assemble(grid.clone(), model.levy().len(), records))
    }

    /// Simulates `n_paths` forward paths from `x0` on `grid`; path `p` uses the
    /// noise derived from `(seed, p)`.
    pub fn simulate(
        model: &ModelSpec,
        policy: &ControlPolicy,
        x0: f64,
        grid: &PathGrid,
        n_paths: usize,
        seed: RngSeed,
    ) -> Result<Self> {
        let levy = model.levy();
        Self::generate(model, n_paths, grid, |p| {
            let (b, mu) = sample_path_noise(grid, 1, levy, seed, p);
            let path = simulate_forward(model, policy, &[x0], grid, &b, &mu)?;
            record(&path, &b, &mu, grid, levy.len())
        })
    }

    /// Time-changed forward paths on `grid ⊂ [t0, T]` with `x1` as initial state.
    pub fn simulate_timechanged(
        model: &ModelSpec,
        tc: &LinearTimeChange,
        policy: &ControlPolicy,
        x1: f64,
        grid: &PathGrid,
        n_paths: usize,
        seed: RngSeed,
    ) -> Result<Self> {
        let levy = model.levy();
        Self::generate(model, n_paths, grid, |p| {
            let (b, mu) = sample_path_noise(grid, 1, levy, seed, p);
            let path = simulate_timechanged_forward(model, tc, &[x1], grid, policy, &b, &mu)?;
            record(&path, &b, &mu, grid, levy.len())
        })
    }

    /// Plain forward paths on the `τ⁻¹`-matched image of `grid`, driven by
    /// `(W, τ(μ))` built from the same per-path noise as
    /// [`ForwardEnsemble::simulate_timechanged`].
    pub fn simulate_matched(
        model: &ModelSpec,
        tc: &LinearTimeChange,
        policy: &ControlPolicy,
        x1: f64,
        grid: &PathGrid,
        n_paths: usize,
        seed: RngSeed,
    ) -> Result<Self> {
        let levy = model.levy();
        let matched = tc.matched_grid(grid)?;
        let policy = policy.time_changed(tc);
        Self::generate(model, n_paths, &matched, |p| {
            let (b, mu) = sample_path_noise(grid, 1, levy, seed, p);
            let w = timechange_brownian(tc, &b, &matched)?;
            let image = kulik_transform(tc, &mu)?;
            let path = simulate_forward(model, &policy, &[x1], &matched, &w, &image)?;
            record(&path, &w, &image, &matched, levy.len())
        })
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// `X_k` across paths.
    pub fn states_at(&self, k: usize) -> &[f64] {
        &self.states[k * self.n_paths..(k + 1) * self.n_paths]
    }

    /// `ΔB_k` across paths.
    pub fn increments_at(&self, k: usize) -> &[f64] {
        &self.increments[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn count(&self, k: usize, p: usize, j: usize) -> u16 {
        self.counts[(k * self.n_paths + p) * self.n_atoms + j]
    }

    pub fn control(&self, k: usize, p: usize) -> usize {
        self.controls[k * self.n_paths + p] as usize
    }
}

/// Solver options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BsdeConfig {
    pub basis: RegressionBasisConfig,
    /// Re-evaluate the driver once at the explicit `Y_k`.
    pub picard: bool,
}

impl BsdeConfig {
    pub fn binning(bins: usize) -> Self {
        Self {
            basis: RegressionBasisConfig::Binning { bins },
            picard: false,
        }
    }
}

/// Regression output for one step: the partition and the coefficients of
/// `Ê[Y_{k+1} | X_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFit {
    pub partition: Partition,
    pub cond: Vec<f64>,
}

/// Pathwise `Y`, `Z` and `U` with the per-step fits.
///
/// `Z_k(p)` and `U_k(p)` are leave-one-out fits: path `p` is dropped from
/// its own regression, so they do not see its step-`k` noise.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    grid: PathGrid,
    n_paths: usize,
    n_atoms: usize,
    /// `Y_k(p)` at index `k * n_paths + p`.
    y: Vec<f64>,
    /// `Z_k(p)` at index `k * n_paths + p`.
    z: Vec<f64>,
    /// `U_k(e_j)(p)` at index `(k * n_atoms + j) * n_paths + p`.
    u: Vec<f64>,
    fits: Vec<StepFit>,
    y0: f64,
}

impl BsdeSolution {
    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    /// Ensemble mean of `Y_0`.
    pub fn y0(&self) -> f64 {
        self.y0
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn fits(&self) -> &[StepFit] {
        &self.fits
    }

    pub fn z(&self, k: usize, p: usize) -> f64 {
        self.z[k * self.n_paths + p]
    }

    pub fn u(&self, k: usize, j: usize, p: usize) -> f64 {
        self.u[(k * self.n_atoms + j) * self.n_paths + p]
    }

    pub fn y_mean(&self, k: usize) -> f64 {
        self.y(k).iter().sum::<f64>() / self.n_paths as f64
    }

    pub fn z_mean(&self, k: usize) -> f64 {
        (0..self.n_paths).map(|p| self.z(k, p)).sum::<f64>() / self.n_paths as f64
    }

    pub fn u_mean(&self, k: usize, j: usize) -> f64 {
        (0..self.n_paths).map(|p| self.u(k, j, p)).sum::<f64>() / self.n_paths as f64
    }

    /// Largest node difference of `Y`, `Z` and `U` against another solution
    /// on the same number of nodes and paths.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.n_paths != other.n_paths || self.grid.n_steps() != other.grid.n_steps() {
            return Err(Error::Shape("solutions differ in paths or steps".into()));
        }
        if self.n_atoms != other.n_atoms {
            return Err(Error::Shape("solutions differ in atoms".into()));
        }
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        Ok(diff(&self.y, &other.y).max(diff(&self.z, &other.z)).max(diff(&self.u, &other.u)))
    }

    /// Solution dump with columns `node, time, quantity, value`.
    pub fn to_table(&self) -> CsvTable {
        let mut t = CsvTable::new(&["node", "time", "quantity", "value"]);
        let n = self.grid.n_steps();
        for k in 0..=n {
            let node = k.to_string();
            let time = fmt_f64(self.grid.time(k));
            let mut row = |q: String, v: f64| t.push(vec![node.clone(), time.clone(), q, fmt_f64(v)]);
            if k == 0 {
                row("y0".into(), self.y0);
            }
            row("Y_mean".into(), self.y_mean(k));
            if k < n {
                row("Z_mean".into(), self.z_mean(k));
                for j in 0..self.n_atoms() {
                    row(format!("U_{j}_mean"), self.u_mean(k, j));
                }
            }
        }
        t
    }
}

/// How each discrete step reads its coefficients.
struct Dynamics<'a> {
    /// Driver time on step `k`.
    time: &'a (dyn Fn(usize) -> f64 + Sync),
    /// Multiplier of `Δt_k` in front of the driver.
    driver_dt: f64,
    /// Multiplier of `Δt_k` in the jump compensator.
    jump_dt: f64,
    /// The driver receives `z_scale · Z`.
    z_scale: f64,
}

fn solve(
    model: &ModelSpec,
    ensemble: &ForwardEnsemble,
    config: &BsdeConfig,
    dynamics: &Dynamics<'_>,
    reuse: Option<&[StepFit]>,
) -> Result<BsdeSolution> {
    if model.dim() != 1 {
        return Err(precondition("the regression solver handles d = 1"));
    }
    let levy = model.levy();
    if levy.len() != ensemble.n_atoms {
        return Err(Error::Shape(format!(
            "model has {} atoms, ensemble records {}",
            levy.len(),
            ensemble.n_atoms
        )));
    }
    let grid = &ensemble.grid;
    let n = grid.n_steps();
    let np = ensemble.n_paths;
    let nj = levy.len();
    if let Some(fits) = reuse {
        if fits.len() != n || fits.iter().any(|f| f.partition.n_paths() != np) {
            return Err(Error::Shape("reused fits do not match the ensemble".into()));
        }
    }
    config.basis.validate()?;

    let mut y = vec![0.0; (n + 1) * np];
    for (slot, &x) in y[n * np..].iter_mut().zip(ensemble.states_at(n)) {
        *slot = model.terminal(&[x]);
    }
    let mut fits: Vec<Option<StepFit>> = vec![None; n];
    let mut z_all = vec![0.0; n * np];
    let mut u_all = vec![0.0; n * nj * np];
    let mut work = vec![0.0; np];

    for k in (0..n).rev() {
        let xs = ensemble.states_at(k);
        let db = ensemble.increments_at(k);
        let dt = grid.dt(k);
        let (head, tail) = y.split_at_mut((k + 1) * np);
        let y_next = &tail[..np];
        let y_k = &mut head[k * np..];

        let partition = match reuse {
            Some(f) => f[k].partition.clone(),
            None => config.basis.fit(xs)?,
        };
        let cond = partition.project(y_next, k)?;
        // Centering by Ê[Y_{k+1} | X_k] leaves the conditional expectations
        // unchanged since the noise increments are centered given X_k.
        let centered: Vec<f64> = (0..np).map(|p| y_next[p] - partition.eval(&cond, p)).collect();
        // Leave-one-out keeps Z_k(p), U_k(p) independent of path p's own
        // increments, otherwise the noise skew biases the residual mean.
        let loo = |work: &mut [f64], out: &mut [f64], scale: f64| -> Result<()> {
            let coef = partition.project(work, k)?;
            for (p, o) in out.iter_mut().enumerate() {
                *o = partition.eval_loo(&coef, work[p], p) / scale;
            }
            Ok(())
        };
        for (w, (yc, d)) in work.iter_mut().zip(centered.iter().zip(db)) {
            *w = yc * d;
        }
        let z_k = &mut z_all[k * np..(k + 1) * np];
        loo(&mut work, z_k, dt)?;
        let u_k = &mut u_all[k * nj * np..(k + 1) * nj * np];
        for j in 0..nj {
            let h = levy.weight(j) * dynamics.jump_dt * dt;
            for (p, w) in work.iter_mut().enumerate() {
                *w = centered[p] * (f64::from(ensemble.count(k, p, j)) - h);
            }
            loo(&mut work, &mut u_k[j * np..(j + 1) * np], h)?;
        }
        let (z_k, u_k) = (&*z_k, &*u_k);

        let t = (dynamics.time)(k);
        let h = dynamics.driver_dt * dt;
        let fit = StepFit { partition, cond };
        y_k.par_iter_mut().enumerate().try_for_each(|(p, out)| -> Result<()> {
            let x = [xs[p]];
            let c = fit.partition.eval(&fit.cond, p);
            let zv = [dynamics.z_scale * z_k[p]];
            let mut pv = [0.0; 8];
            let mut heap;
            let pslot: &mut [f64] = if nj <= pv.len() {
                &mut pv[..nj]
            } else {
                heap = vec![0.0; nj];
                &mut heap
            };
            for (j, s) in pslot.iter_mut().enumerate() {
                *s = u_k[j * np + p];
            }
            let u = model.controls().get(ensemble.control(k, p));
            let f = |yy: f64| {
                model.driver(&DriverArgs {
                    t,
                    x: &x,
                    y: yy,
                    z: &zv,
                    p: pslot,
                    u,
                })
            };
            let mut v = c + f(c) * h;
            if config.picard {
                v = c + f(v) * h;
            }
            if !v.is_finite() {
                return Err(Error::Numeric {
                    step: k,
                    detail: format!("non-finite Y at path {p}"),
                });
            }
            *out = v;
            Ok(())
        })?;
        fits[k] = Some(fit);
    }

    let y0 = y[..np].iter().sum::<f64>() / np as f64;
    if !y0.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            detail: "y0 is not finite".into(),
        });
    }
    Ok(BsdeSolution {
        grid: grid.clone(),
        n_paths: np,
        n_atoms: nj,
        y,
        z: z_all,
        u: u_all,
        fits: fits.into_iter().map(|f| f.expect("every step fitted")).collect(),
        y0,
    })
}

/// Backward regression along the controls recorded in `ensemble`.
pub fn solve_bsde_regression(model: &ModelSpec, ensemble: &ForwardEnsemble, config: &BsdeConfig) -> Result<BsdeSolution> {
    let grid = &ensemble.grid;
    let time = |k: usize| grid.time(k);
    solve(
        model,
        ensemble,
        config,
        &Dynamics {
            time: &time,
            driver_dt: 1.0,
            jump_dt: 1.0,
            z_scale: 1.0,
        },
        None,
    )
}

/// As [`solve_bsde_regression`], reusing the regression partitions of an
/// earlier solution on an ensemble with the same number of paths and steps.
pub fn solve_bsde_with_fits(
    model: &ModelSpec,
    ensemble: &ForwardEnsemble,
    config: &BsdeConfig,
    fits: &[StepFit],
) -> Result<BsdeSolution> {
    let grid = &ensemble.grid;
    let time = |k: usize| grid.time(k);
    solve(
        model,
        ensemble,
        config,
        &Dynamics {
            time: &time,
            driver_dt: 1.0,
            jump_dt: 1.0,
            z_scale: 1.0,
        },
        Some(fits),
    )
}

/// Backward regression of the time-changed BSDE on `[t0, T]`: driver
/// `(1/τ̇) f(τ⁻¹(t_k), X, y, √τ̇ z, p, u)` and jump integrator compensated by
/// `Π(de) dr / τ̇`. `ensemble` must come from
/// [`ForwardEnsemble::simulate_timechanged`] (or equivalent) on `[t0, T]`.
pub fn solve_timechanged_bsde(
    model: &ModelSpec,
    tc: &LinearTimeChange,
    ensemble: &ForwardEnsemble,
    config: &BsdeConfig,
    reuse: Option<&[StepFit]>,
) -> Result<BsdeSolution> {
    let grid = &ensemble.grid;
    if grid.t_start() != tc.t0() || grid.t_end() != tc.horizon() {
        return Err(Error::Shape(format!(
            "ensemble spans [{}, {}], time change expects [{}, {}]",
            grid.t_start(),
            grid.t_end(),
            tc.t0(),
            tc.horizon()
        )));
    }
    let inv: Vec<f64> = grid.nodes().iter().map(|&r| tc.tau_inverse_unchecked(r)).collect();
    let time = |k: usize| inv[k];
    let (driver_dt, z_scale) = if tc.is_identity() {
        (1.0, 1.0)
    } else {
        (1.0 / tc.rate(), tc.rate().sqrt())
    };
    solve(
        model,
        ensemble,
        config,
        &Dynamics {
            time: &time,
            driver_dt,
            jump_dt: driver_dt,
            z_scale,
        },
        reuse,
    )
}

/// `Ỹ_k = Y_k`, `Z̃_k = Z_k/√τ̇`, `Ũ_k = U_k`, re-indexed from the matched
/// `[t1, T]` grid onto its `τ`-image in `[t0, T]`.
pub fn transform_bsde_solution(tc: &LinearTimeChange, sol: &BsdeSolution) -> Result<BsdeSolution> {
    let g = &sol.grid;
    if g.t_start() != tc.t1() || g.t_end() != tc.horizon() {
        return Err(Error::Shape(format!(
            "solution spans [{}, {}], time change expects [{}, {}]",
            g.t_start(),
            g.t_end(),
            tc.t1(),
            tc.horizon()
        )));
    }
    if tc.is_identity() {
        return Ok(sol.clone());
    }
    let grid = PathGrid::from_nodes(g.nodes().iter().map(|&s| tc.tau_unchecked(s)).collect())?;
    let scale = tc.rate().sqrt();
    Ok(BsdeSolution {
        grid,
        n_paths: sol.n_paths,
        n_atoms: sol.n_atoms,
        y: sol.y.clone(),
        z: sol.z.iter().map(|c| c / scale).collect(),
        u: sol.u.clone(),
        fits: sol.fits.clone(),
        y0: sol.y0,
    })
}

/// Stepwise martingale residuals `Y_{k+1} − Y_k − Z_k ΔB_k − Σ_j U_k(e_j)(N_{j,k} − π_j Δt)`
/// across paths, one vector per step.
pub fn martingale_residuals(model: &ModelSpec, ensemble: &ForwardEnsemble, sol: &BsdeSolution) -> Vec<Vec<f64>> {
    let levy = model.levy();
    let np = ensemble.n_paths;
    (0..ensemble.grid.n_steps())
        .map(|k| {
            let dt = ensemble.grid.dt(k);
            let db = ensemble.increments_at(k);
            let (yk, yn) = (sol.y(k), sol.y(k + 1));
            (0..np)
                .map(|p| {
                    let mut r = yn[p] - yk[p] - sol.z(k, p) * db[p];
                    for j in 0..levy.len() {
                        r -= sol.u(k, j, p) * (f64::from(ensemble.count(k, p, j)) - levy.weight(j) * dt);
                    }
                    r
                })
                .collect()
        })
        .collect()
}

/// Ensemble mean of each step's martingale residual. The standard error
/// adds the sampling error of the martingale increment
/// `Z_k ΔB_k + Σ_j U_k(e_j)(N_{j,k} − π_j Δt)` in quadrature: the regressed
/// `Ê[Y_{k+1} | X_k]` absorbs the increment's ensemble mean, which the
/// residual then carries with the opposite sign.
pub fn martingale_residual_means(model: &ModelSpec, ensemble: &ForwardEnsemble, sol: &BsdeSolution) -> Vec<MeanSe> {
    let levy = model.levy();
    let np = ensemble.n_paths;
    martingale_residuals(model, ensemble, sol)
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let dt = ensemble.grid.dt(k);
            let db = ensemble.increments_at(k);
            let m: Vec<f64> = (0..np)
                .map(|p| {
                    let mut v = sol.z(k, p) * db[p];
                    for j in 0..levy.len() {
                        v += sol.u(k, j, p) * (f64::from(ensemble.count(k, p, j)) - levy.weight(j) * dt);
                    }
                    v
                })
                .collect();
            let rs = MeanSe::of(r);
            let ms = MeanSe::of(&m);
            MeanSe {
                se: rs.se.hypot(ms.se),
                ..rs
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lookup_model, LevyMeasureAtomic};

    fn unit_grid(n: usize) -> PathGrid {
        PathGrid::new(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn constant_terminal_zero_driver() {
        let m = ModelSpec::builder("const", 1, 1.0)
            .levy(LevyMeasureAtomic::scalar(&[-0.5, 0.3], &[1.0, 1.5]).unwrap())
            .diffusion(|_, _, _, o| o[0] = 0.5)
            .terminal(|_| 2.5)
            .build()
            .unwrap();
        let g = unit_grid(20);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 4000, RngSeed(1)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(10)).unwrap();
        assert!(s.y.iter().all(|&v| (v - 2.5).abs() < 1e-12));
        assert!((s.y0() - 2.5).abs() < 1e-12);
        for k in 0..20 {
            for p in 0..4000 {
                assert_eq!(s.z(k, p), 0.0);
                assert_eq!(s.u(k, 0, p), 0.0);
                assert_eq!(s.u(k, 1, p), 0.0);
            }
        }
    }

    #[test]
    fn counterexample_y0() {
        let m = lookup_model("counterexample").unwrap();
        let g = unit_grid(100);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 100_000, RngSeed(2)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(50)).unwrap();
        let exact = -(2.0 / std::f64::consts::PI).sqrt();
        assert!(((s.y0() - exact) / exact).abs() < 0.02, "{}", s.y0());
    }

    #[test]
    fn linear_driver_ode() {
        let m = ModelSpec::builder("ode", 1, 1.0)
            .driver(|a| -a.y)
            .terminal(|_| 1.0)
            .build()
            .unwrap();
        let g = unit_grid(100);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 200, RngSeed(3)).unwrap();
        let exact = (-1.0f64).exp();
        for picard in [false, true] {
            let cfg = BsdeConfig { basis: RegressionBasisConfig::Binning { bins: 4 }, picard };
            let s = solve_bsde_regression(&m, &e, &cfg).unwrap();
            assert!(((s.y0() - exact) / exact).abs() < 0.01, "{}", s.y0());
        }
    }

    #[test]
    fn zero_driver_telescopes() {
        for name in ["lq_jump", "pure_jump", "controlled_drift"] {
            let m = lookup_model(name).unwrap();
            let g = unit_grid(25);
            let pol = ControlPolicy::Constant(0);
            let e = ForwardEnsemble::simulate(&m, &pol, 0.3, &g, 5000, RngSeed(4)).unwrap();
            let mean_phi = e.states_at(25).iter().map(|&x| m.terminal_1d(x)).sum::<f64>() / 5000.0;
            let zero = ModelSpec::builder(name, 1, 1.0)
                .levy(m.levy().clone())
                .terminal({
                    let m = m.clone();
                    move |x| m.terminal(x)
                })
                .build()
                .unwrap();
            for basis in [
                RegressionBasisConfig::Binning { bins: 20 },
                RegressionBasisConfig::Polynomial { degree: 3 },
            ] {
                let s = solve_bsde_regression(&zero, &e, &BsdeConfig { basis, picard: false }).unwrap();
                assert!((s.y0() - mean_phi).abs() <= 1e-12 * (1.0 + mean_phi.abs()), "{name} {basis:?}");
            }
        }
    }

    #[test]
    fn terminal_row_is_exact() {
        let m = lookup_model("lq_jump").unwrap();
        let g = unit_grid(10);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(1), 1.0, &g, 1000, RngSeed(5)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(10)).unwrap();
        for (y, &x) in s.y(10).iter().zip(e.states_at(10)) {
            assert_eq!(y.to_bits(), m.terminal_1d(x).to_bits());
        }
    }

    #[test]
    fn martingale_residuals_are_centered() {
        let base = lookup_model("lq_jump").unwrap();
        let m = ModelSpec::builder("lq_zero_driver", 1, 1.0)
            .levy(base.levy().clone())
            .drift({
                let b = base.clone();
                move |t, x, u, o| b.drift(t, x, u, o)
            })
            .diffusion({
                let b = base.clone();
                move |t, x, u, o| b.diffusion(t, x, u, o)
            })
            .jump({
                let b = base.clone();
                move |t, x, u, e, o| b.jump(t, x, u, e, o)
            })
            .terminal(move |x| base.terminal(x))
            .build()
            .unwrap();
        let g = unit_grid(20);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 20_000, RngSeed(6)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(40)).unwrap();
        for (k, ms) in martingale_residual_means(&m, &e, &s).iter().enumerate() {
            assert!(ms.covers(0.0, 3.0), "step {k}: {ms:?}");
        }
    }

    #[test]
    fn transform_examples() {
        let m = lookup_model("lq_jump").unwrap();
        let tc = LinearTimeChange::new(0.2, 0.5, 1.0).unwrap();
        let g0 = PathGrid::new(0.2, 1.0, 16).unwrap();
        let pol = ControlPolicy::Constant(1);
        let e = ForwardEnsemble::simulate_matched(&m, &tc, &pol, 0.1, &g0, 500, RngSeed(7)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(5)).unwrap();
        let t = transform_bsde_solution(&tc, &s).unwrap();
        assert_eq!(t.y0(), s.y0());
        assert_eq!(t.grid().t_start(), 0.2);
        for p in [0, 17, 499] {
            assert!((t.z(3, p) - s.z(3, p) / 1.6f64.sqrt()).abs() < 1e-15);
            assert_eq!(t.u(3, 1, p), s.u(3, 1, p));
        }
        let id = LinearTimeChange::new(0.5, 0.5, 1.0).unwrap();
        assert_eq!(transform_bsde_solution(&id, &s).unwrap(), s);
        assert!(transform_bsde_solution(&LinearTimeChange::new(0.1, 0.3, 1.0).unwrap(), &s).is_err());
    }

    #[test]
    fn time_changed_bsde_matches_the_transformed_solution() {
        for name in ["lq_jump", "counterexample", "pure_jump"] {
            let m = lookup_model(name).unwrap();
            let tc = LinearTimeChange::new(0.1, 0.4, 1.0).unwrap();
            let g0 = PathGrid::new(0.1, 1.0, 30).unwrap();
            let pol = ControlPolicy::Constant(0);
            let cfg = BsdeConfig::binning(20);
            let direct_e = ForwardEnsemble::simulate_timechanged(&m, &tc, &pol, 0.2, &g0, 4000, RngSeed(8)).unwrap();
            let matched_e = ForwardEnsemble::simulate_matched(&m, &tc, &pol, 0.2, &g0, 4000, RngSeed(8)).unwrap();
            let matched = solve_bsde_regression(&m, &matched_e, &cfg).unwrap();
            let transformed = transform_bsde_solution(&tc, &matched).unwrap();
            // identical regressions: exact at the recursion level
            let direct = solve_timechanged_bsde(&m, &tc, &direct_e, &cfg, Some(&matched.fits)).unwrap();
            let err = direct.max_abs_diff(&transformed).unwrap();
            assert!(err <= 1e-9, "{name}: {err}");
            // independent regressions: within the Monte Carlo noise
            let free = solve_timechanged_bsde(&m, &tc, &direct_e, &cfg, None).unwrap();
            assert!((free.y0() - transformed.y0()).abs() < 1e-9 + 0.05 * (1.0 + free.y0().abs()), "{name}");
        }
    }

    #[test]
    fn basis_errors() {
        let m = lookup_model("lq_jump").unwrap();
        let g = unit_grid(5);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 30, RngSeed(9)).unwrap();
        assert!(matches!(
            solve_bsde_regression(&m, &e, &BsdeConfig::binning(20)),
            Err(Error::Basis(_))
        ));
        assert!(matches!(
            solve_bsde_regression(&m, &e, &BsdeConfig::binning(0)),
            Err(Error::Basis(_))
        ));
        let other = ModelSpec::builder("no_jumps", 1, 1.0)
            .levy(LevyMeasureAtomic::empty(1))
            .build()
            .unwrap();
        assert!(matches!(solve_bsde_regression(&other, &e, &BsdeConfig::binning(2)), Err(Error::Shape(_))));
    }

    #[test]
    fn solution_table_layout() {
        let m = lookup_model("pure_jump").unwrap();
        let g = unit_grid(2);
        let e = ForwardEnsemble::simulate(&m, &ControlPolicy::Constant(0), 0.0, &g, 100, RngSeed(1)).unwrap();
        let s = solve_bsde_regression(&m, &e, &BsdeConfig::binning(4)).unwrap();
        let t = s.to_table();
        assert_eq!(t.header, vec!["node", "time", "quantity", "value"]);
        let quantities: Vec<&str> = t.rows.iter().map(|r| r[2].as_str()).collect();
        assert_eq!(
            quantities,
            vec!["y0", "Y_mean", "Z_mean", "U_0_mean", "U_1_mean", "Y_mean", "Z_mean", "U_0_mean", "U_1_mean", "Y_mean"]
        );
    }

    #[test]
    fn from_paths_matches_simulate() {
        let m = lookup_model("lq_jump").unwrap();
        let g = unit_grid(8);
        let pol = ControlPolicy::Constant(2);
        let mut paths = Vec::new();
        let mut bs = Vec::new();
        let mut mus = Vec::new();
        for p in 0..50 {
            let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(3), p);
            paths.push(simulate_forward(&m, &pol, &[0.5], &g, &b, &mu).unwrap());
            bs.push(b);
            mus.push(mu);
        }
        let a = ForwardEnsemble::from_paths(&m, &paths, &bs, &mus).unwrap();
        let b = ForwardEnsemble::simulate(&m, &pol, 0.5, &g, 50, RngSeed(3)).unwrap();
        assert_eq!(a, b);
    }
}
