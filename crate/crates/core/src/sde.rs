//! Euler–Maruyama integration of the controlled jump-diffusion and of its
//! time-changed form on `[t0, T]`.
//!
//! Jump coefficients are frozen at the left endpoint of the step containing
//! the jump, and the compensator `−Δt Σ_j π_j β(t_k, X_k, u_k, e_j)` is added
//! on every step.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{ControlSet, ModelSpec};
use crate::report::{fmt_f64, CsvTable};
use crate::stochastics::{BrownianPath, PathGrid, PoissonPath};
use crate::timechange::LinearTimeChange;

type FeedbackFn = Arc<dyn Fn(f64, &[f64]) -> usize + Send + Sync>;

/// Deterministic grid controls or a feedback map, as indices into the model's
/// [`ControlSet`].
#[derive(Clone)]
pub enum ControlPolicy {
    Constant(usize),
    /// One control per grid step.
    PiecewiseConstant(Vec<usize>),
    Feedback(FeedbackFn),
}

impl fmt::Debug for ControlPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(i) => write!(f, "Constant({i})"),
            Self::PiecewiseConstant(v) => write!(f, "PiecewiseConstant({v:?})"),
            Self::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}

impl ControlPolicy {
    pub fn feedback(f: impl Fn(f64, &[f64]) -> usize + Send + Sync + 'static) -> Self {
        Self::Feedback(Arc::new(f))
    }

    pub fn index(&self, k: usize, t: f64, x: &[f64]) -> usize {
        match self {
            Self::Constant(i) => *i,
            Self::PiecewiseConstant(v) => v[k],
            Self::Feedback(f) => f(t, x),
        }
    }

    /// The policy `s ↦ u(τ(s), ·)` read on the `τ⁻¹`-matched grid; grid
    /// controls keep their per-step values.
    pub fn time_changed(&self, tc: &LinearTimeChange) -> Self {
        match self {
            Self::Feedback(f) => {
                let f = Arc::clone(f);
                let tc = *tc;
                Self::feedback(move |s, x| f(tc.tau_unchecked(s), x))
            }
            other => other.clone(),
        }
    }

    fn check(&self, controls: &ControlSet, n_steps: usize) -> Result<()> {
        let bad = |i: usize| Error::Precondition(format!("control index {i} outside U (|U| = {})", controls.len()));
        match self {
            Self::Constant(i) if *i >= controls.len() => Err(bad(*i)),
            Self::PiecewiseConstant(v) => {
                if v.len() != n_steps {
                    return Err(Error::Shape(format!("{} grid controls for {n_steps} steps", v.len())));
                }
                match v.iter().find(|&&i| i >= controls.len()) {
                    Some(&i) => Err(bad(i)),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

/// States `X_k` at the grid nodes, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SdePath {
    grid: PathGrid,
    dim: usize,
    states: Vec<f64>,
    /// Controls used on each step.
    controls: Vec<usize>,
    pub path_id: Option<u64>,
}

impl SdePath {
    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.grid.n_steps())
    }

    pub fn controls(&self) -> &[usize] {
        &self.controls
    }

    /// Largest componentwise difference between node states of two paths.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.states
            .iter()
            .zip(&other.states)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// How the coefficients enter one Euler step.
struct Scaling<'a> {
    /// Time at which coefficients are read on step `k`.
    coef_time: &'a dyn Fn(usize) -> f64,
    drift: f64,
    diffusion: f64,
    /// Factor of the extra deterministic drift `Δt Σ π_j β_j`.
    extra_compensator: f64,
}

fn check_inputs(model: &ModelSpec, x0: &[f64], grid: &PathGrid, b: &BrownianPath, mu: &PoissonPath) -> Result<()> {
    let d = model.dim();
    if x0.len() != d || b.dim() != d {
        return Err(Error::Shape(format!(
            "model dimension {d}, initial state {}, Brownian dimension {}",
            x0.len(),
            b.dim()
        )));
    }
    if b.grid() != grid {
        return Err(Error::Shape("Brownian path lives on a different grid".into()));
    }
    if mu.t_start() != grid.t_start() || mu.t_end() != grid.t_end() {
        return Err(Error::Shape(format!(
            "Poisson path spans [{}, {}], grid spans [{}, {}]",
            mu.t_start(),
            mu.t_end(),
            grid.t_start(),
            grid.t_end()
        )));
    }
    if let Some(&m) = mu.marks().iter().find(|&&m| m as usize >= model.levy().len()) {
        return Err(Error::Shape(format!("mark index {m} outside the Lévy atom list")));
    }
    Ok(())
}

fn euler(
    model: &ModelSpec,
    policy: &ControlPolicy,
    x0: &[f64],
    grid: &PathGrid,
    b: &BrownianPath,
    mu: &PoissonPath,
    scaling: &Scaling<'_>,
) -> Result<SdePath> {
    check_inputs(model, x0, grid, b, mu)?;
    let n = grid.n_steps();
    policy.check(model.controls(), n)?;
    let d = model.dim();
    let levy = model.levy();

    let mut states = Vec::with_capacity((n + 1) * d);
    states.extend_from_slice(x0);
    let mut controls = Vec::with_capacity(n);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut beta = vec![0.0; d];
    let mut comp = vec![0.0; d];
    let times = mu.times();
    let marks = mu.marks();
    let mut jump = 0usize;

    for k in 0..n {
        let t_k = grid.time(k);
        let t_next = grid.time(k + 1);
        let dt = grid.dt(k);
        let s = (scaling.coef_time)(k);
        let ui = policy.index(k, t_k, &x);
        if ui >= model.controls().len() {
            return Err(Error::Precondition(format!("feedback returned control index {ui}")));
        }
        controls.push(ui);
        let u = model.controls().get(ui);

        model.drift(s, &x, u, &mut drift);
        model.diffusion(s, &x, u, &mut sigma);
        let db = b.increment(k);
        for i in 0..d {
            let mut v = x[i] + scaling.drift * drift[i] * dt;
            let mut noise = 0.0;
            for j in 0..d {
                noise += sigma[i * d + j] * db[j];
            }
            v += scaling.diffusion * noise;
            next[i] = v;
        }

        if !levy.is_empty() {
            comp.fill(0.0);
            for (j, e) in levy.atoms().iter().enumerate() {
                model.jump(s, &x, u, e, &mut beta);
                let w = levy.weight(j);
                for i in 0..d {
                    comp[i] += w * beta[i];
                }
            }
            for i in 0..d {
                next[i] += -dt * comp[i];
                if scaling.extra_compensator != 0.0 {
                    next[i] += scaling.extra_compensator * dt * comp[i];
                }
            }
            while jump < times.len() && times[jump] <= t_next {
                debug_assert!(times[jump] > t_k);
                model.jump(s, &x, u, levy.atom(marks[jump] as usize), &mut beta);
                for i in 0..d {
                    next[i] += beta[i];
                }
                jump += 1;
            }
        }

        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k, time: t_k });
        }
        std::mem::swap(&mut x, &mut next);
        states.extend_from_slice(&x);
    }

    Ok(SdePath {
        grid: grid.clone(),
        dim: d,
        states,
        controls,
        path_id: None,
    })
}

/// Euler–Maruyama recursion
/// `X_{k+1} = X_k + bΔt + σΔB_k + Σ_{r_i ∈ (t_k, t_{k+1}]} β(e_{j_i}) − Δt Σ_j π_j β(e_j)`
/// with every coefficient read at `(t_k, X_k, u_k)`.
pub fn simulate_forward(
    model: &ModelSpec,
    policy: &ControlPolicy,
    x0: &[f64],
    grid: &PathGrid,
    b: &BrownianPath,
    mu: &PoissonPath,
) -> Result<SdePath> {
    let time = |k: usize| grid.time(k);
    euler(
        model,
        policy,
        x0,
        grid,
        b,
        mu,
        &Scaling {
            coef_time: &time,
            drift: 1.0,
            diffusion: 1.0,
            extra_compensator: 0.0,
        },
    )
}

/// Euler recursion of the time-changed dynamics on `[t0, T]`: coefficients read
/// at `τ⁻¹(t_k)`, drift scaled by `1/τ̇`, diffusion by `1/√τ̇`, jumps against the
/// compensated measure plus the deterministic drift `(1 − 1/τ̇) Δt Σ_j π_j β_j`.
pub fn simulate_timechanged_forward(
    model: &ModelSpec,
    tc: &LinearTimeChange,
    x1: &[f64],
    grid: &PathGrid,
    policy: &ControlPolicy,
    b: &BrownianPath,
    mu: &PoissonPath,
) -> Result<SdePath> {
    if grid.t_start() != tc.t0() || grid.t_end() != tc.horizon() {
        return Err(Error::Shape(format!(
            "grid spans [{}, {}], time change expects [{}, {}]",
            grid.t_start(),
            grid.t_end(),
            tc.t0(),
            tc.horizon()
        )));
    }
    let inv_times: Vec<f64> = grid.nodes().iter().map(|&r| tc.tau_inverse_unchecked(r)).collect();
    let time = |k: usize| inv_times[k];
    let rate = tc.rate();
    let (drift, diffusion, extra) = if tc.is_identity() {
        (1.0, 1.0, 0.0)
    } else {
        (1.0 / rate, 1.0 / rate.sqrt(), 1.0 - 1.0 / rate)
    };
    euler(
        model,
        policy,
        x1,
        grid,
        b,
        mu,
        &Scaling {
            coef_time: &time,
            drift,
            diffusion,
            extra_compensator: extra,
        },
    )
}

/// Both routes of the time-change consistency check for one noise sample:
/// (a) the time-changed recursion on `grid ⊂ [t0, T]`; (b) the plain recursion
/// on the `τ⁻¹`-matched grid driven by `(W, τ(μ))`. Returns the largest node
/// difference.
pub fn timechange_consistency(
    model: &ModelSpec,
    tc: &LinearTimeChange,
    x1: &[f64],
    grid: &PathGrid,
    policy: &ControlPolicy,
    b: &BrownianPath,
    mu: &PoissonPath,
) -> Result<f64> {
    let direct = simulate_timechanged_forward(model, tc, x1, grid, policy, b, mu)?;
    let matched = tc.matched_grid(grid)?;
    let w = crate::timechange::timechange_brownian(tc, b, &matched)?;
    let image = crate::timechange::kulik_transform(tc, mu)?;
    let reindexed = simulate_forward(model, &policy.time_changed(tc), x1, &matched, &w, &image)?;
    Ok(direct.max_abs_diff(&reindexed))
}

/// Path dump with columns `path_id, time, component, value`.
pub fn sde_paths_table(paths: &[SdePath]) -> CsvTable {
    let mut t = CsvTable::new(&["path_id", "time", "component", "value"]);
    for (i, p) in paths.iter().enumerate() {
        let id = p.path_id.unwrap_or(i as u64).to_string();
        for k in 0..=p.grid.n_steps() {
            for (c, v) in p.state(k).iter().enumerate() {
                t.push(vec![id.clone(), fmt_f64(p.grid.time(k)), c.to_string(), fmt_f64(*v)]);
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{lookup_model, model_names, CoefBound, DeclaredBounds, LevyMeasureAtomic};
    use crate::stats::MeanSe;
    use crate::stochastics::{sample_path_noise, RngSeed};

    fn zero_model() -> ModelSpec {
        ModelSpec::builder("zero", 1, 1.0)
            .levy(LevyMeasureAtomic::scalar(&[1.0], &[2.0]).unwrap())
            .build()
            .unwrap()
    }

    #[test]
    fn zero_coefficients_keep_the_state() {
        let m = zero_model();
        let g = PathGrid::new(0.0, 1.0, 50).unwrap();
        let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(1), 0);
        let p = simulate_forward(&m, &ControlPolicy::Constant(0), &[0.7], &g, &b, &mu).unwrap();
        assert!(p.states().iter().all(|&x| x == 0.7));
        let tc = LinearTimeChange::new(0.0, 0.5, 1.0).unwrap();
        let q = simulate_timechanged_forward(&m, &tc, &[0.7], &g, &ControlPolicy::Constant(0), &b, &mu).unwrap();
        assert!(q.states().iter().all(|&x| x == 0.7));
    }

    #[test]
    fn constant_drift_is_exact() {
        let m = ModelSpec::builder("c", 1, 1.0)
            .drift(|_, _, _, out| out[0] = 0.25)
            .build()
            .unwrap();
        let g = PathGrid::new(0.2, 1.0, 40).unwrap();
        let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(3), 0);
        let p = simulate_forward(&m, &ControlPolicy::Constant(0), &[1.0], &g, &b, &mu).unwrap();
        assert!((p.terminal()[0] - (1.0 + 0.25 * 0.8)).abs() < 1e-14);
        assert_eq!(p.state(0), &[1.0]);
    }

    #[test]
    fn pure_jump_is_a_martingale() {
        let m = lookup_model("pure_jump").unwrap();
        let g = PathGrid::new(0.0, 1.0, 20).unwrap();
        let inc: Vec<f64> = (0..100_000)
            .map(|p| {
                let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(5), p);
                let path = simulate_forward(&m, &ControlPolicy::Constant(0), &[0.0], &g, &b, &mu).unwrap();
                path.terminal()[0]
            })
            .collect();
        let s = MeanSe::of(&inc);
        assert!(s.covers(0.0, 3.0), "{s:?}");
    }

    #[test]
    fn identity_time_change_reproduces_forward() {
        for name in model_names() {
            let m = lookup_model(name).unwrap();
            let g = PathGrid::new(0.3, 1.0, 30).unwrap();
            let tc = LinearTimeChange::new(0.3, 0.3, 1.0).unwrap();
            let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(9), 2);
            let pol = ControlPolicy::Constant(m.controls().len() - 1);
            let a = simulate_forward(&m, &pol, &[0.4], &g, &b, &mu).unwrap();
            let c = simulate_timechanged_forward(&m, &tc, &[0.4], &g, &pol, &b, &mu).unwrap();
            assert_eq!(a, c, "{name}");
        }
    }

    #[test]
    fn matched_grid_routes_agree() {
        for name in model_names() {
            let m = lookup_model(name).unwrap();
            let n_u = m.controls().len();
            for seed in 0..20u64 {
                let tc = LinearTimeChange::new(0.1 + 0.01 * seed as f64, 0.5 - 0.015 * seed as f64, 1.0).unwrap();
                let g = PathGrid::new(tc.t0(), 1.0, 64).unwrap();
                let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(seed), 0);
                let feedback = ControlPolicy::feedback(move |t, x| ((t * 7.0 + x[0].abs()) as usize) % n_u);
                let grid_ctl = ControlPolicy::PiecewiseConstant((0..64).map(|k| k % n_u).collect());
                for pol in [feedback, grid_ctl] {
                    let err = timechange_consistency(&m, &tc, &[0.3], &g, &pol, &b, &mu).unwrap();
                    assert!(err <= 1e-9, "{name} seed {seed}: {err}");
                }
            }
        }
    }

    #[test]
    fn no_jumps_means_pure_diffusion_euler() {
        let m = lookup_model("lq_jump").unwrap();
        let bare = m.without_jumps();
        let g = PathGrid::new(0.0, 1.0, 25).unwrap();
        let (b, _) = sample_path_noise(&g, 1, m.levy(), RngSeed(1), 0);
        let mu = PoissonPath::empty(0.0, 1.0);
        let p = simulate_forward(&bare, &ControlPolicy::Constant(2), &[0.5], &g, &b, &mu).unwrap();
        let u = bare.controls().get(2);
        let mut x = 0.5;
        for k in 0..25 {
            let t = g.time(k);
            x = x + bare.drift_1d(t, x, u) * g.dt(k) + bare.diffusion_1d(t, x, u) * b.increment(k)[0];
            assert_eq!(p.state(k + 1)[0], x);
        }
    }

    #[test]
    fn strong_error_shrinks_with_the_step() {
        let m = lookup_model("lq_jump").unwrap();
        let fine_n = 256;
        let fine = PathGrid::new(0.0, 1.0, fine_n).unwrap();
        let pol = ControlPolicy::feedback(|_, x| if x[0] > 0.0 { 0 } else { 2 });
        let mut err = [0.0f64; 2];
        let n_paths = 4000;
        for p in 0..n_paths {
            let (b, mu) = sample_path_noise(&fine, 1, m.levy(), RngSeed(17), p);
            let reference = simulate_forward(&m, &pol, &[0.2], &fine, &b, &mu).unwrap().terminal()[0];
            for (slot, n) in [32usize, 64].into_iter().enumerate() {
                let g = PathGrid::new(0.0, 1.0, n).unwrap();
                let r = fine_n / n;
                let inc: Vec<f64> = (0..n).map(|k| b.increments()[k * r..(k + 1) * r].iter().sum()).collect();
                let bc = BrownianPath::from_increments(g.clone(), 1, inc).unwrap();
                let x = simulate_forward(&m, &pol, &[0.2], &g, &bc, &mu).unwrap().terminal()[0];
                err[slot] += (x - reference).abs() / n_paths as f64;
            }
        }
        let ratio = err[1] / err[0];
        assert!((0.3..=0.8).contains(&ratio), "errors {err:?}, ratio {ratio}");
    }

    #[test]
    fn blow_up_reports_the_step() {
        let m = ModelSpec::builder("explode", 1, 1.0)
            .drift(|_, x, _, out| out[0] = x[0] * x[0] * 1e100)
            .bounds(DeclaredBounds {
                drift: CoefBound::new(1.0, 1.0),
                ..DeclaredBounds::default()
            })
            .build()
            .unwrap();
        let g = PathGrid::new(0.0, 1.0, 10).unwrap();
        let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(0), 0);
        match simulate_forward(&m, &ControlPolicy::Constant(0), &[1e10], &g, &b, &mu) {
            Err(Error::BlowUp { step, .. }) => assert!(step < 10),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn shape_errors() {
        let m = lookup_model("pure_jump").unwrap();
        let g = PathGrid::new(0.0, 1.0, 10).unwrap();
        let other = PathGrid::new(0.0, 1.0, 5).unwrap();
        let (b, mu) = sample_path_noise(&other, 1, m.levy(), RngSeed(0), 0);
        assert!(simulate_forward(&m, &ControlPolicy::Constant(0), &[0.0], &g, &b, &mu).is_err());
        let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(0), 0);
        assert!(simulate_forward(&m, &ControlPolicy::Constant(3), &[0.0], &g, &b, &mu).is_err());
        assert!(simulate_forward(&m, &ControlPolicy::Constant(0), &[0.0, 1.0], &g, &b, &mu).is_err());
    }

    #[test]
    fn simulation_is_deterministic() {
        let m = lookup_model("lq_jump").unwrap();
        let g = PathGrid::new(0.0, 1.0, 30).unwrap();
        let pol = ControlPolicy::feedback(|t, x| if x[0] > t { 0 } else { 1 });
        let run = || {
            let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(21), 4);
            simulate_forward(&m, &pol, &[0.1], &g, &b, &mu).unwrap()
        };
        let (a, b) = (run(), run());
        assert!(a.states().iter().zip(b.states()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn path_table_layout() {
        let m = zero_model();
        let g = PathGrid::new(0.0, 1.0, 2).unwrap();
        let (b, mu) = sample_path_noise(&g, 1, m.levy(), RngSeed(1), 0);
        let p = simulate_forward(&m, &ControlPolicy::Constant(0), &[1.0], &g, &b, &mu).unwrap();
        let t = sde_paths_table(&[p]);
        assert_eq!(t.header, vec!["path_id", "time", "component", "value"]);
        assert_eq!(t.rows.len(), 3);
        assert_eq!(t.rows[2], vec!["0", "1", "0", "1"]);
    }
}
