//! Sampled check of the declared sup bounds and Lipschitz constants.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{CoefBound, DriverArgs, ModelSpec};
use crate::error::{precondition, Error, Result};
use crate::stochastics::RngSeed;

/// Slack before an observed ratio counts as exceeding a declared constant.
const SLACK: f64 = 1.01;

/// Observed behaviour of one coefficient against its declared bound.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientCheck {
    pub coefficient: &'static str,
    pub declared: CoefBound,
    /// Largest `|Δcoef| / |Δinput|` over the sampled pairs.
    pub max_ratio: f64,
    /// Largest observed magnitude.
    pub max_abs: f64,
    pub lip_flagged: bool,
    pub sup_flagged: bool,
}

impl CoefficientCheck {
    pub fn flagged(&self) -> bool {
        self.lip_flagged || self.sup_flagged
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub model: String,
    pub sample_count: usize,
    pub checks: Vec<CoefficientCheck>,
}

impl ValidationReport {
    pub fn flagged(&self) -> Vec<&CoefficientCheck> {
        self.checks.iter().filter(|c| c.flagged()).collect()
    }

    pub fn is_clean(&self) -> bool {
        self.checks.iter().all(|c| !c.flagged())
    }

    pub fn check(&self, coefficient: &str) -> Option<&CoefficientCheck> {
        self.checks.iter().find(|c| c.coefficient == coefficient)
    }
}

struct Tracker {
    coefficient: &'static str,
    declared: CoefBound,
    max_ratio: f64,
    max_abs: f64,
}

impl Tracker {
    fn new(coefficient: &'static str, declared: CoefBound) -> Self {
        Self {
            coefficient,
            declared,
            max_ratio: 0.0,
            max_abs: 0.0,
        }
    }

    fn observe(&mut self, diff: f64, dist: f64, a: f64, b: f64) {
        if dist > 0.0 {
            self.max_ratio = self.max_ratio.max(diff / dist);
        }
        self.max_abs = self.max_abs.max(a).max(b);
    }

    fn finish(self) -> CoefficientCheck {
        let tol = |d: f64| SLACK * d + 1e-12;
        CoefficientCheck {
            coefficient: self.coefficient,
            declared: self.declared,
            max_ratio: self.max_ratio,
            max_abs: self.max_abs,
            lip_flagged: self.max_ratio > tol(self.declared.lip),
            sup_flagged: self.max_abs > tol(self.declared.sup),
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn ensure_finite(name: &str, values: &[f64], input: impl FnOnce() -> String) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteCoefficient {
            coefficient: name.to_string(),
            input: input(),
        })
    }
}

/// A sampled point `(t, x)` together with driver slots.
#[derive(Clone)]
struct Sample {
    t: f64,
    x: Vec<f64>,
    y: f64,
    z: Vec<f64>,
    p: Vec<f64>,
}

struct Sampler<'a> {
    model: &'a ModelSpec,
    rng: ChaCha8Rng,
}

impl Sampler<'_> {
    fn point(&mut self) -> Sample {
        let m = self.model;
        let (lo, hi) = m.bounds().state_box;
        let r = m.bounds().value_radius;
        let Self { rng, .. } = self;
        Sample {
            t: rng.random_range(0.0..=m.horizon()),
            x: (0..m.dim()).map(|_| rng.random_range(lo..=hi)).collect(),
            y: rng.random_range(-r..=r),
            z: (0..m.dim()).map(|_| rng.random_range(-r..=r)).collect(),
            p: (0..m.levy().len()).map(|_| rng.random_range(-r..=r)).collect(),
        }
    }

    /// A nearby point differing in one coordinate family only. Global pairs miss
    /// local slopes of nonlinear coefficients; these catch them.
    fn perturb(&mut self, s: &Sample, family: usize) -> Sample {
        let m = self.model;
        let (lo, hi) = m.bounds().state_box;
        let r = m.bounds().value_radius;
        let h = 1e-4 * (hi - lo).max(m.horizon());
        let step = |rng: &mut ChaCha8Rng, v: f64, a: f64, b: f64| {
            let d = rng.random_range(-h..=h);
            (v + d).clamp(a, b)
        };
        let mut out = s.clone();
        let rng = &mut self.rng;
        match family {
            0 => out.t = step(rng, s.t, 0.0, m.horizon()),
            1 => {
                for xi in &mut out.x {
                    *xi = step(rng, *xi, lo, hi);
                }
            }
            2 => out.y = step(rng, s.y, -r, r),
            3 => {
                for zi in &mut out.z {
                    *zi = step(rng, *zi, -r, r);
                }
            }
            _ => {
                for pi in &mut out.p {
                    *pi = step(rng, *pi, -r, r);
                }
            }
        }
        out
    }
}

/// Samples `sample_count` pairs of points in `[0, T] × box` (plus driver slots)
/// and reports, per coefficient, the largest difference quotient and magnitude.
///
/// Half the pairs are independent uniform draws; the rest are local pairs that
/// move a single coordinate family. Distances: `|Δt| + |Δx|` for the state
/// coefficients, adding `|Δy| + |Δz| + ‖Δp‖_{L²(Π)}` for the driver and using
/// `|Δx|` alone for the terminal cost. The jump coefficient is compared in the
/// `L⁴(Π)` norm. Each pair shares one control drawn from `U`.
pub fn validate_model(spec: &ModelSpec, sample_count: usize, seed: RngSeed) -> Result<ValidationReport> {
    if sample_count < 2 {
        return Err(precondition(format!("sample_count = {sample_count}; need at least 2")));
    }
    let d = spec.dim();
    let levy = spec.levy();
    let b = spec.bounds();
    let mut sampler = Sampler { model: spec, rng: seed.rng() };

    let mut drift = Tracker::new("drift", b.drift);
    let mut diffusion = Tracker::new("diffusion", b.diffusion);
    let mut jump = Tracker::new("jump", b.jump);
    let mut driver = Tracker::new("driver", b.driver);
    let mut terminal = Tracker::new("terminal", b.terminal);

    let mut b1 = vec![0.0; d];
    let mut b2 = vec![0.0; d];
    let mut s1 = vec![0.0; d * d];
    let mut s2 = vec![0.0; d * d];
    let mut j1 = vec![0.0; d];
    let mut j2 = vec![0.0; d];

    for i in 0..sample_count {
        let u_idx = sampler.rng.random_range(0..spec.controls().len());
        let u = spec.controls().get(u_idx);
        let p1 = sampler.point();
        let p2 = if i % 2 == 0 {
            sampler.point()
        } else {
            let family = (i / 2) % 5;
            sampler.perturb(&p1, family)
        };
        let describe = |p: &Sample| format!("t = {}, x = {:?}, u = {:?}", p.t, p.x, u);

        let dt = (p1.t - p2.t).abs();
        let dx = diff_norm(&p1.x, &p2.x);
        let dist = dt + dx;

        spec.drift(p1.t, &p1.x, u, &mut b1);
        spec.drift(p2.t, &p2.x, u, &mut b2);
        ensure_finite("drift", &b1, || describe(&p1))?;
        ensure_finite("drift", &b2, || describe(&p2))?;
        drift.observe(diff_norm(&b1, &b2), dist, norm(&b1), norm(&b2));

        spec.diffusion(p1.t, &p1.x, u, &mut s1);
        spec.diffusion(p2.t, &p2.x, u, &mut s2);
        ensure_finite("diffusion", &s1, || describe(&p1))?;
        ensure_finite("diffusion", &s2, || describe(&p2))?;
        diffusion.observe(diff_norm(&s1, &s2), dist, norm(&s1), norm(&s2));

        let mut l4 = 0.0;
        for (j, e) in levy.atoms().iter().enumerate() {
            spec.jump(p1.t, &p1.x, u, e, &mut j1);
            spec.jump(p2.t, &p2.x, u, e, &mut j2);
            ensure_finite("jump", &j1, || format!("{}, e = {e:?}", describe(&p1)))?;
            ensure_finite("jump", &j2, || format!("{}, e = {e:?}", describe(&p2)))?;
            l4 += levy.weight(j) * diff_norm(&j1, &j2).powi(4);
            jump.observe(0.0, 0.0, norm(&j1), norm(&j2));
        }
        if !levy.is_empty() && dist > 0.0 {
            jump.observe(l4.powf(0.25), dist, 0.0, 0.0);
        }

        let f = |p: &Sample, y: f64, z: &[f64], q: &[f64]| {
            spec.driver(&DriverArgs { t: p.t, x: &p.x, y, z, p: q, u })
        };
        let f1 = f(&p1, p1.y, &p1.z, &p1.p);
        let f2 = f(&p2, p2.y, &p2.z, &p2.p);
        ensure_finite("driver", &[f1, f2], || describe(&p1))?;
        let dp = levy
            .weights()
            .iter()
            .zip(p1.p.iter().zip(&p2.p))
            .map(|(w, (a, c))| w * (a - c).powi(2))
            .sum::<f64>()
            .sqrt();
        let driver_dist = dist + (p1.y - p2.y).abs() + diff_norm(&p1.z, &p2.z) + dp;
        let zero_z = vec![0.0; d];
        let zero_p = vec![0.0; levy.len()];
        let f1_0 = f(&p1, 0.0, &zero_z, &zero_p);
        let f2_0 = f(&p2, 0.0, &zero_z, &zero_p);
        ensure_finite("driver", &[f1_0, f2_0], || describe(&p1))?;
        driver.observe((f1 - f2).abs(), driver_dist, f1_0.abs(), f2_0.abs());

        let g1 = spec.terminal(&p1.x);
        let g2 = spec.terminal(&p2.x);
        ensure_finite("terminal", &[g1, g2], || describe(&p1))?;
        terminal.observe((g1 - g2).abs(), dx, g1.abs(), g2.abs());
    }

    Ok(ValidationReport {
        model: spec.name().to_string(),
        sample_count,
        checks: vec![
            drift.finish(),
            diffusion.finish(),
            jump.finish(),
            driver.finish(),
            terminal.finish(),
        ],
    })
}
