//! Built-in benchmark models, selectable by name with scalar overrides.

use std::collections::BTreeMap;

use super::{CoefBound, ControlSet, DeclaredBounds, LevyMeasureAtomic, ModelSpec};
use crate::error::{Error, Result};

/// Scalar parameter overrides, keyed by parameter name.
pub type ModelParams = BTreeMap<String, f64>;

pub struct RegistryEntry {
    pub name: &'static str,
    pub summary: &'static str,
    /// `(name, default, meaning)`.
    pub params: &'static [(&'static str, f64, &'static str)],
    build: fn(&Resolved) -> Result<ModelSpec>,
}

pub static REGISTRY: &[RegistryEntry] = &[
    RegistryEntry {
        name: "counterexample",
        summary: "X = x + B, Phi(x) = -|x|, no jumps, no driver, U = {0}",
        params: &[("horizon", 1.0, "terminal time T")],
        build: counterexample,
    },
    RegistryEntry {
        name: "pure_jump",
        summary: "compensated jumps of size +-a, beta(e) = e, Phi(x) = x",
        params: &[
            ("horizon", 1.0, "terminal time T"),
            ("jump_size", 1.0, "mark magnitude a"),
            ("rate_up", 1.0, "intensity of the +a atom"),
            ("rate_down", 1.0, "intensity of the -a atom"),
        ],
        build: pure_jump,
    },
    RegistryEntry {
        name: "controlled_drift",
        summary: "b = u, sigma = 1, Phi(x) = min(|x|, cap), U = {-1, 0, 1}",
        params: &[
            ("horizon", 1.0, "terminal time T"),
            ("cap", 3.0, "terminal cost saturation level"),
        ],
        build: controlled_drift,
    },
    RegistryEntry {
        name: "lq_jump",
        summary: "mean-reverting drift plus control, time-dependent sigma, state-modulated jumps, \
                  f = -c y + u^2/2, Phi(x) = min(x^2, cap)",
        params: &[
            ("horizon", 1.0, "terminal time T"),
            ("kappa", 0.5, "mean-reversion speed"),
            ("reach", 4.0, "saturation scale R of the drift, b = -kappa R tanh(x/R) + u"),
            ("sigma0", 0.4, "diffusion at t = 0"),
            ("sigma_slope", 0.2, "diffusion growth per unit time"),
            ("jump_mod", 0.25, "state modulation a of beta = e (1 + a tanh x)"),
            ("discount", 0.2, "driver coefficient c"),
            ("cap", 4.0, "terminal cost saturation level"),
        ],
        build: lq_jump,
    },
    RegistryEntry {
        name: "heat_quadratic",
        summary: "X = x + B, Phi(x) = min(x^2, cap), no jumps, U = {0}",
        params: &[
            ("horizon", 1.0, "terminal time T"),
            ("cap", 36.0, "terminal cost saturation level"),
        ],
        build: heat_quadratic,
    },
];

/// Names of the built-in models, in registry order.
pub fn model_names() -> Vec<&'static str> {
    REGISTRY.iter().map(|e| e.name).collect()
}

/// Looks a model up with its default parameters.
pub fn lookup_model(name: &str) -> Result<ModelSpec> {
    lookup_model_with(name, &ModelParams::new())
}

/// Looks a model up and applies scalar overrides; unknown keys are rejected.
pub fn lookup_model_with(name: &str, overrides: &ModelParams) -> Result<ModelSpec> {
    let entry = REGISTRY
        .iter()
        .find(|e| e.name == name)
        .ok_or_else(|| Error::UnknownModel {
            name: name.to_string(),
            valid: model_names().iter().map(|s| s.to_string()).collect(),
        })?;
    let mut values: BTreeMap<&'static str, f64> =
        entry.params.iter().map(|&(k, v, _)| (k, v)).collect();
    for (key, &value) in overrides {
        let Some(slot) = values.get_mut(key.as_str()) else {
            return Err(Error::UnknownParameter {
                model: name.to_string(),
                param: key.clone(),
                accepted: entry.params.iter().map(|p| p.0.to_string()).collect(),
            });
        };
        if !value.is_finite() {
            return Err(Error::InvalidModel(format!("parameter `{key}` = {value}")));
        }
        *slot = value;
    }
    (entry.build)(&Resolved { model: name, values })
}

struct Resolved<'a> {
    model: &'a str,
    values: BTreeMap<&'static str, f64>,
}

impl Resolved<'_> {
    fn get(&self, key: &str) -> f64 {
        self.values[key]
    }

    fn positive(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        if v > 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidModel(format!(
                "{}: parameter `{key}` = {v} must be positive",
                self.model
            )))
        }
    }

    fn nonnegative(&self, key: &str) -> Result<f64> {
        let v = self.get(key);
        if v >= 0.0 {
            Ok(v)
        } else {
            Err(Error::InvalidModel(format!(
                "{}: parameter `{key}` = {v} must be nonnegative",
                self.model
            )))
        }
    }
}

fn unit_brownian_bounds(terminal: CoefBound, half_width: f64) -> DeclaredBounds {
    DeclaredBounds {
        state_box: (-half_width, half_width),
        diffusion: CoefBound::new(1.0, 0.0),
        terminal,
        ..DeclaredBounds::default()
    }
}

fn counterexample(p: &Resolved) -> Result<ModelSpec> {
    let horizon = p.positive("horizon")?;
    ModelSpec::builder("counterexample", 1, horizon)
        .diffusion(|_, _, _, out| out[0] = 1.0)
        .terminal(|x| -x[0].abs())
        .bounds(unit_brownian_bounds(CoefBound::new(6.0, 1.0), 6.0))
        .build()
}

fn heat_quadratic(p: &Resolved) -> Result<ModelSpec> {
    let horizon = p.positive("horizon")?;
    let cap = p.positive("cap")?;
    let half_width = cap.sqrt();
    ModelSpec::builder("heat_quadratic", 1, horizon)
        .diffusion(|_, _, _, out| out[0] = 1.0)
        .terminal(move |x| (x[0] * x[0]).min(cap))
        .bounds(unit_brownian_bounds(
            CoefBound::new(cap, 2.0 * half_width),
            half_width,
        ))
        .build()
}

fn pure_jump(p: &Resolved) -> Result<ModelSpec> {
    let horizon = p.positive("horizon")?;
    let a = p.positive("jump_size")?;
    let up = p.positive("rate_up")?;
    let down = p.positive("rate_down")?;
    ModelSpec::builder("pure_jump", 1, horizon)
        .jump(|_, _, _, e, out| out[0] = e[0])
        .terminal(|x| x[0])
        .levy(LevyMeasureAtomic::scalar(&[a, -a], &[up, down])?)
        .bounds(DeclaredBounds {
            state_box: (-6.0, 6.0),
            jump: CoefBound::new(a, 0.0),
            terminal: CoefBound::new(6.0, 1.0),
            ..DeclaredBounds::default()
        })
        .build()
}

fn controlled_drift(p: &Resolved) -> Result<ModelSpec> {
    let horizon = p.positive("horizon")?;
    let cap = p.positive("cap")?;
    ModelSpec::builder("controlled_drift", 1, horizon)
        .drift(|_, _, u, out| out[0] = u[0])
        .diffusion(|_, _, _, out| out[0] = 1.0)
        .terminal(move |x| x[0].abs().min(cap))
        .controls(ControlSet::scalar(&[-1.0, 0.0, 1.0])?)
        .bounds(DeclaredBounds {
            state_box: (-6.0, 6.0),
            drift: CoefBound::new(1.0, 0.0),
            diffusion: CoefBound::new(1.0, 0.0),
            terminal: CoefBound::new(cap, 1.0),
            ..DeclaredBounds::default()
        })
        .build()
}

const LQ_CONTROLS: [f64; 3] = [-0.5, 0.0, 0.5];
const LQ_MARKS: [f64; 2] = [-0.5, 0.3];
const LQ_RATES: [f64; 2] = [1.0, 1.5];

fn lq_jump(p: &Resolved) -> Result<ModelSpec> {
    let horizon = p.positive("horizon")?;
    let kappa = p.nonnegative("kappa")?;
    let reach = p.positive("reach")?;
    let sigma0 = p.get("sigma0");
    let slope = p.get("sigma_slope");
    let jump_mod = p.get("jump_mod");
    let discount = p.get("discount");
    let cap = p.positive("cap")?;
    if jump_mod.abs() >= 1.0 {
        return Err(Error::InvalidModel(format!(
            "lq_jump: |jump_mod| = {} must be below 1",
            jump_mod.abs()
        )));
    }

    let u_max = LQ_CONTROLS.iter().fold(0.0f64, |m, u| m.max(u.abs()));
    let e_max = LQ_MARKS.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let l4_marks = LQ_MARKS
        .iter()
        .zip(LQ_RATES)
        .map(|(e, w)| w * e.powi(4))
        .sum::<f64>()
        .powf(0.25);

    ModelSpec::builder("lq_jump", 1, horizon)
        .drift(move |_, x, u, out| out[0] = -kappa * reach * (x[0] / reach).tanh() + u[0])
        .diffusion(move |t, _, _, out| out[0] = sigma0 + slope * t)
        .jump(move |_, x, _, e, out| out[0] = e[0] * (1.0 + jump_mod * x[0].tanh()))
        .driver(move |a| -discount * a.y + 0.5 * a.u[0] * a.u[0])
        .terminal(move |x| (x[0] * x[0]).min(cap))
        .levy(LevyMeasureAtomic::scalar(&LQ_MARKS, &LQ_RATES)?)
        .controls(ControlSet::scalar(&LQ_CONTROLS)?)
        .bounds(DeclaredBounds {
            state_box: (-8.0, 8.0),
            drift: CoefBound::new(kappa * reach + u_max, kappa),
            diffusion: CoefBound::new(
                sigma0.abs().max((sigma0 + slope * horizon).abs()),
                slope.abs(),
            ),
            jump: CoefBound::new(e_max * (1.0 + jump_mod.abs()), jump_mod.abs() * l4_marks),
            driver: CoefBound::new(0.5 * u_max * u_max, discount.abs()),
            terminal: CoefBound::new(cap, 2.0 * cap.sqrt()),
            value_radius: 1.0,
        })
        .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_entry() {
        let m = lookup_model("counterexample").unwrap();
        assert_eq!(m.terminal_1d(0.0), 0.0);
        assert_eq!(m.diffusion_1d(0.7, -3.0, &[0.0]), 1.0);
        assert_eq!(m.controls().len(), 1);
        assert!(m.levy().is_empty());
    }

    #[test]
    fn pure_jump_entry() {
        let m = lookup_model("pure_jump").unwrap();
        assert!(m.levy().total_mass() > 0.0);
        for x in [-2.0, 0.0, 5.0] {
            assert_eq!(m.diffusion_1d(0.5, x, &[0.0]), 0.0);
        }
        assert_eq!(m.jump_1d(0.1, 2.0, &[0.0], &[-1.0]), -1.0);
    }

    #[test]
    fn unknown_model_lists_valid_names() {
        let err = lookup_model("nosuchmodel").unwrap_err();
        match &err {
            Error::UnknownModel { valid, .. } => {
                assert!(valid.iter().any(|n| n == "lq_jump"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("counterexample"));
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let mut p = ModelParams::new();
        p.insert("horizon".into(), 2.0);
        assert_eq!(lookup_model_with("counterexample", &p).unwrap().horizon(), 2.0);
        p.insert("bogus".into(), 1.0);
        assert!(matches!(
            lookup_model_with("counterexample", &p),
            Err(Error::UnknownParameter { .. })
        ));
        let mut bad = ModelParams::new();
        bad.insert("horizon".into(), -1.0);
        assert!(lookup_model_with("pure_jump", &bad).is_err());
    }

    #[test]
    fn lq_jump_coefficients() {
        let m = lookup_model("lq_jump").unwrap();
        assert_eq!(m.controls().len(), 3);
        assert!((m.diffusion_1d(1.0, 0.0, &[0.0]) - 0.6).abs() < 1e-15);
        assert_eq!(m.terminal_1d(10.0), 4.0);
        assert_eq!(m.drift_1d(0.0, 0.0, &[0.5]), 0.5);
    }
}
