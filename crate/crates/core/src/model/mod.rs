//! Coefficient bundle of the controlled jump-diffusion system.
//!
//! A [`ModelSpec`] carries the drift `b(t, x, u)`, diffusion `σ(t, x, u)`,
//! jump coefficient `β(t, x, u, e)`, BSDE driver `f(t, x, y, z, p, u)` and
//! terminal cost `Φ(x)`, together with a finite atomic Lévy measure, a finite
//! control set and declared bounds used by the validators and the CFL rule.
//!
//! Coefficients are plain closures; vector-valued coefficients write into a
//! caller-provided output slice so hot loops never allocate.

mod registry;
mod validate;

use std::fmt;
use std::sync::Arc;

use crate::error::{precondition, Error, Result};

pub use registry::{lookup_model, lookup_model_with, model_names, ModelParams, RegistryEntry, REGISTRY};
pub use validate::{validate_model, CoefficientCheck, ValidationReport};

/// Finite Lévy measure `Π = Σ_j π_j δ_{e_j}` on `ℝⁿ \ {0}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevyMeasureAtomic {
    mark_dim: usize,
    atoms: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl LevyMeasureAtomic {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::InvalidModel(format!(
                "{} atoms but {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        let mark_dim = atoms.first().map_or(1, Vec::len);
        for (j, (atom, &w)) in atoms.iter().zip(&weights).enumerate() {
            if atom.len() != mark_dim || mark_dim == 0 {
                return Err(Error::InvalidModel(format!(
                    "atom {j} has dimension {}, expected {mark_dim}",
                    atom.len()
                )));
            }
            if atom.iter().all(|&c| c == 0.0) {
                return Err(Error::InvalidModel(format!("atom {j} is the origin")));
            }
            if atom.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidModel(format!("atom {j} is not finite")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "atom {j} has weight {w}; weights must be positive and finite"
                )));
            }
        }
        Ok(Self {
            mark_dim,
            atoms,
            weights,
        })
    }

    /// The zero measure: no jumps at all.
    pub fn empty(mark_dim: usize) -> Self {
        Self {
            mark_dim,
            atoms: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// One-dimensional marks.
    pub fn scalar(marks: &[f64], weights: &[f64]) -> Result<Self> {
        Self::new(marks.iter().map(|&e| vec![e]).collect(), weights.to_vec())
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom(&self, j: usize) -> &[f64] {
        &self.atoms[j]
    }

    pub fn atoms(&self) -> &[Vec<f64>] {
        &self.atoms
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Π(E)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `Π(Δ)` for an atom subset; `None` means all of `E`.
    pub fn mass_of(&self, subset: Option<&[usize]>) -> f64 {
        match subset {
            None => self.total_mass(),
            Some(idx) => idx.iter().map(|&j| self.weights[j]).sum(),
        }
    }

    /// Measure whose atom list is `self` followed by `other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if !self.is_empty() && !other.is_empty() && self.mark_dim != other.mark_dim {
            return Err(Error::InvalidModel("mark dimensions differ".into()));
        }
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        let mut weights = self.weights.clone();
        weights.extend_from_slice(&other.weights);
        if atoms.is_empty() {
            return Ok(Self::empty(self.mark_dim));
        }
        Self::new(atoms, weights)
    }
}

/// `Π(E) = Σ_j π_j`.
pub fn levy_total_mass(levy: &LevyMeasureAtomic) -> f64 {
    levy.total_mass()
}

/// Finite control set `U ⊂ ℝᵐ`. Controls are referred to by index.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    values: Vec<Vec<f64>>,
}

impl ControlSet {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidModel("control set is empty".into()));
        }
        for (i, a) in values.iter().enumerate() {
            if values[..i].contains(a) {
                return Err(Error::InvalidModel(format!("duplicate control {a:?}")));
            }
        }
        Ok(Self { values })
    }

    pub fn scalar(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&u| vec![u]).collect())
    }

    /// `U = {0}`.
    pub fn trivial() -> Self {
        Self {
            values: vec![vec![0.0]],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(Vec::as_slice)
    }
}

/// Sup-norm bound and Lipschitz constant of one coefficient on the declared box.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CoefBound {
    pub sup: f64,
    pub lip: f64,
}

impl CoefBound {
    pub const ZERO: Self = Self { sup: 0.0, lip: 0.0 };

    pub fn new(sup: f64, lip: f64) -> Self {
        Self { sup, lip }
    }
}

/// Declared metadata: validated by [`validate_model`], consumed by the CFL rule.
#[derive(Debug, Clone, PartialEq)]
pub struct DeclaredBounds {
    /// Each state component ranges over this interval.
    pub state_box: (f64, f64),
    pub drift: CoefBound,
    pub diffusion: CoefBound,
    /// `lip` is the `L⁴(Π)` Lipschitz constant of `β`; `sup` bounds `|β|`.
    pub jump: CoefBound,
    /// `lip` is the Lipschitz constant in `(t, x, y, z, p)`; `sup` bounds `|f(t, x, 0, 0, 0, u)|`.
    pub driver: CoefBound,
    pub terminal: CoefBound,
    /// Range `[-r, r]` over which the driver's `y`, `z`, `p` slots are sampled.
    pub value_radius: f64,
}

impl Default for DeclaredBounds {
    fn default() -> Self {
        Self {
            state_box: (-1.0, 1.0),
            drift: CoefBound::ZERO,
            diffusion: CoefBound::ZERO,
            jump: CoefBound::ZERO,
            driver: CoefBound::ZERO,
            terminal: CoefBound::ZERO,
            value_radius: 1.0,
        }
    }
}

/// Arguments of the driver `f(t, x, y, z, p, u)`; `p` holds one value per Lévy atom.
#[derive(Debug, Clone, Copy)]
pub struct DriverArgs<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: f64,
    pub z: &'a [f64],
    pub p: &'a [f64],
    pub u: &'a [f64],
}

pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes the `d × d` matrix row-major.
pub type DiffusionFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync>;
pub type DriverFn = Arc<dyn Fn(&DriverArgs<'_>) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// The full coefficient bundle. Immutable once built; cheap to clone.
#[derive(Clone)]
pub struct ModelSpec {
    name: String,
    dim: usize,
    horizon: f64,
    drift: DriftFn,
    diffusion: DiffusionFn,
    jump: JumpFn,
    driver: DriverFn,
    terminal: TerminalFn,
    levy: LevyMeasureAtomic,
    controls: ControlSet,
    bounds: DeclaredBounds,
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("levy", &self.levy)
            .field("controls", &self.controls)
            .field("bounds", &self.bounds)
            .finish_non_exhaustive()
    }
}

impl ModelSpec {
    /// Starts a model with every coefficient identically zero, `Φ ≡ 0`,
    /// no jumps and `U = {0}`.
    pub fn builder(name: impl Into<String>, dim: usize, horizon: f64) -> ModelBuilder {
        ModelBuilder {
            spec: ModelSpec {
                name: name.into(),
                dim,
                horizon,
                drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
                diffusion: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
                jump: Arc::new(|_, _, _, _, out: &mut [f64]| out.fill(0.0)),
                driver: Arc::new(|_| 0.0),
                terminal: Arc::new(|_| 0.0),
                levy: LevyMeasureAtomic::empty(dim),
                controls: ControlSet::trivial(),
                bounds: DeclaredBounds::default(),
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn levy(&self) -> &LevyMeasureAtomic {
        &self.levy
    }

    pub fn controls(&self) -> &ControlSet {
        &self.controls
    }

    pub fn bounds(&self) -> &DeclaredBounds {
        &self.bounds
    }

    pub fn drift(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, u, out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, u, out)
    }

    pub fn jump(&self, t: f64, x: &[f64], u: &[f64], e: &[f64], out: &mut [f64]) {
        (self.jump)(t, x, u, e, out)
    }

    pub fn driver(&self, args: &DriverArgs<'_>) -> f64 {
        (self.driver)(args)
    }

    pub fn terminal(&self, x: &[f64]) -> f64 {
        (self.terminal)(x)
    }

    // Scalar shorthands for the one-dimensional solvers.

    pub fn drift_1d(&self, t: f64, x: f64, u: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.drift)(t, &[x], u, &mut out);
        out[0]
    }

    pub fn diffusion_1d(&self, t: f64, x: f64, u: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.diffusion)(t, &[x], u, &mut out);
        out[0]
    }

    pub fn jump_1d(&self, t: f64, x: f64, u: &[f64], e: &[f64]) -> f64 {
        let mut out = [0.0];
        (self.jump)(t, &[x], u, e, &mut out);
        out[0]
    }

    pub fn terminal_1d(&self, x: f64) -> f64 {
        (self.terminal)(&[x])
    }

    /// Same coefficients with a different control set (e.g. a singleton).
    pub fn with_controls(&self, controls: ControlSet) -> Self {
        Self {
            controls,
            ..self.clone()
        }
    }

    /// Same coefficients with a different terminal cost.
    pub fn with_terminal<F>(&self, terminal: F, bound: CoefBound) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut bounds = self.bounds.clone();
        bounds.terminal = bound;
        Self {
            terminal: Arc::new(terminal),
            bounds,
            ..self.clone()
        }
    }

    /// Same coefficients with a different driver.
    pub fn with_driver<F>(&self, driver: F, bound: CoefBound) -> Self
    where
        F: Fn(&DriverArgs<'_>) -> f64 + Send + Sync + 'static,
    {
        let mut bounds = self.bounds.clone();
        bounds.driver = bound;
        Self {
            driver: Arc::new(driver),
            bounds,
            ..self.clone()
        }
    }

    /// Same coefficients, jumps removed.
    pub fn without_jumps(&self) -> Self {
        Self {
            levy: LevyMeasureAtomic::empty(self.levy.mark_dim()),
            ..self.clone()
        }
    }
}

pub struct ModelBuilder {
    spec: ModelSpec,
}

impl ModelBuilder {
    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.drift = Arc::new(f);
        self
    }

    pub fn diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.diffusion = Arc::new(f);
        self
    }

    pub fn jump<F>(mut self, f: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.spec.jump = Arc::new(f);
        self
    }

    pub fn driver<F>(mut self, f: F) -> Self
    where
        F: Fn(&DriverArgs<'_>) -> f64 + Send + Sync + 'static,
    {
        self.spec.driver = Arc::new(f);
        self
    }

    pub fn terminal<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        self.spec.terminal = Arc::new(f);
        self
    }

    pub fn levy(mut self, levy: LevyMeasureAtomic) -> Self {
        self.spec.levy = levy;
        self
    }

    pub fn controls(mut self, controls: ControlSet) -> Self {
        self.spec.controls = controls;
        self
    }

    pub fn bounds(mut self, bounds: DeclaredBounds) -> Self {
        self.spec.bounds = bounds;
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let s = &self.spec;
        if s.dim == 0 {
            return Err(precondition("model dimension must be at least 1"));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(precondition(format!("horizon {} must be positive", s.horizon)));
        }
        let (lo, hi) = s.bounds.state_box;
        if !(lo < hi) {
            return Err(precondition(format!("empty state box [{lo}, {hi}]")));
        }
        Ok(self.spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn total_mass_examples() {
        let two = LevyMeasureAtomic::scalar(&[1.0, -1.0], &[0.5, 1.5]).unwrap();
        assert_eq!(levy_total_mass(&two), 2.0);
        assert_eq!(levy_total_mass(&LevyMeasureAtomic::empty(1)), 0.0);
        let one = LevyMeasureAtomic::scalar(&[0.3], &[1.0]).unwrap();
        assert_eq!(levy_total_mass(&one), 1.0);
    }

    #[test]
    fn atoms_must_be_nonzero_with_positive_weight() {
        assert!(LevyMeasureAtomic::scalar(&[0.0], &[1.0]).is_err());
        assert!(LevyMeasureAtomic::scalar(&[1.0], &[0.0]).is_err());
        assert!(LevyMeasureAtomic::scalar(&[1.0], &[-2.0]).is_err());
        assert!(LevyMeasureAtomic::new(vec![vec![1.0, 0.0], vec![1.0]], vec![1.0, 1.0]).is_err());
        // zero in one component only is still a valid mark
        assert!(LevyMeasureAtomic::new(vec![vec![0.0, 2.0]], vec![1.0]).is_ok());
    }

    #[test]
    fn control_set_rejects_empty_and_duplicates() {
        assert!(ControlSet::new(vec![]).is_err());
        assert!(ControlSet::scalar(&[1.0, 0.0, 1.0]).is_err());
        assert_eq!(ControlSet::scalar(&[-1.0, 0.0, 1.0]).unwrap().len(), 3);
    }

    #[test]
    fn builder_defaults_are_zero() {
        let m = ModelSpec::builder("zero", 1, 1.0).build().unwrap();
        assert_eq!(m.drift_1d(0.3, 2.0, &[0.0]), 0.0);
        assert_eq!(m.diffusion_1d(0.3, 2.0, &[0.0]), 0.0);
        assert_eq!(m.terminal_1d(5.0), 0.0);
        assert!(m.levy().is_empty());
        assert!(ModelSpec::builder("bad", 1, 0.0).build().is_err());
    }

    proptest::proptest! {
        #[test]
        fn total_mass_is_additive_under_concatenation(
            a in proptest::collection::vec(0.01f64..10.0, 0..6),
            b in proptest::collection::vec(0.01f64..10.0, 0..6),
        ) {
            let marks = |n: usize| (0..n).map(|i| i as f64 + 1.0).collect::<Vec<_>>();
            let la = LevyMeasureAtomic::scalar(&marks(a.len()), &a).unwrap();
            let lb = LevyMeasureAtomic::scalar(&marks(b.len()), &b).unwrap();
            let joined = la.concat(&lb).unwrap();
            let lhs = levy_total_mass(&joined);
            let rhs = levy_total_mass(&la) + levy_total_mass(&lb);
            proptest::prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs));
        }
    }
}
