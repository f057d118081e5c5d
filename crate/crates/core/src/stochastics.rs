//! Reproducible samplers for the driving noise: Brownian increments on a
//! time grid and finite-activity Poisson random measures with atomic marks.
//!
//! Every path draws from its own ChaCha stream whose key is a pure function
//! of `(master seed, path index, noise kind)`, so ensembles do not depend on
//! how the paths are scheduled across threads.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Poisson, StandardNormal};

use crate::error::{precondition, Error, Result};
use crate::model::LevyMeasureAtomic;
use crate::report::{fmt_f64, CsvTable};

/// Time nodes `t_0 < t_1 < … < t_N` of a discretized interval.
#[derive(Debug, Clone, PartialEq)]
pub struct PathGrid {
    nodes: Vec<f64>,
}

impl PathGrid {
    /// Uniform grid `t_k = t_start + kΔt`; the last node is `t_end` exactly.
    pub fn new(t_start: f64, t_end: f64, n_steps: usize) -> Result<Self> {
        if n_steps == 0 {
            return Err(precondition("grid needs at least one step"));
        }
        if !(t_start < t_end) || !t_start.is_finite() || !t_end.is_finite() {
            return Err(precondition(format!("empty interval [{t_start}, {t_end}]")));
        }
        let dt = (t_end - t_start) / n_steps as f64;
        let mut nodes: Vec<f64> = (0..n_steps).map(|k| t_start + k as f64 * dt).collect();
        nodes.push(t_end);
        Self::from_nodes(nodes)
    }

    /// Arbitrary strictly increasing nodes; used for τ⁻¹-matched grids.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(precondition("grid needs at least two nodes"));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(precondition("grid nodes must be finite and strictly increasing"));
        }
        Ok(Self { nodes })
    }

    pub fn n_steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_start(&self) -> f64 {
        self.nodes[0]
    }

    pub fn t_end(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Length of step `k`, i.e. `t_{k+1} − t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Step containing `r`, using half-open steps `(t_k, t_{k+1}]`.
    pub fn step_of(&self, r: f64) -> Option<usize> {
        if !(r > self.t_start() && r <= self.t_end()) {
            return None;
        }
        Some(self.nodes.partition_point(|&t| t < r) - 1)
    }
}

/// Master seed of a reproducible experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct RngSeed(pub u64);

/// Stream tags keep Brownian and Poisson draws of one path independent.
pub const BROWNIAN_STREAM: u64 = 0x42;
pub const POISSON_STREAM: u64 = 0x50;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngSeed {
    /// Seed of child `index`; a pure function of `(self, index)`.
    pub fn derive(self, index: u64) -> Self {
        Self(splitmix64(splitmix64(self.0) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93)))
    }

    /// Seed of path `p` for a given noise stream.
    pub fn path(self, p: u64, stream: u64) -> Self {
        self.derive(p).derive(stream)
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

/// Brownian increments `ΔB_k`, each a `dim`-vector, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: PathGrid,
    dim: usize,
    increments: Vec<f64>,
}

impl BrownianPath {
    pub fn from_increments(grid: PathGrid, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || increments.len() != grid.n_steps() * dim {
            return Err(Error::Shape(format!(
                "{} increments for {} steps of dimension {dim}",
                increments.len(),
                grid.n_steps()
            )));
        }
        Ok(Self {
            grid,
            dim,
            increments,
        })
    }

    pub fn grid(&self) -> &PathGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `B_{t_k}`; zero at `k = 0`.
    pub fn value_at(&self, k: usize) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        for step in 0..k {
            for (bi, db) in b.iter_mut().zip(self.increment(step)) {
                *bi += db;
            }
        }
        b
    }
}

/// Jump times in `(t_start, t_end]` with indices into the Lévy atom list.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonPath {
    t_start: f64,
    t_end: f64,
    times: Vec<f64>,
    marks: Vec<u32>,
}

impl PoissonPath {
    pub fn new(t_start: f64, t_end: f64, times: Vec<f64>, marks: Vec<u32>, n_atoms: usize) -> Result<Self> {
        if !(t_start < t_end) {
            return Err(precondition(format!("empty interval [{t_start}, {t_end}]")));
        }
        if times.len() != marks.len() {
            return Err(Error::Shape(format!("{} times but {} marks", times.len(), marks.len())));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(precondition("jump times must be strictly increasing"));
        }
        if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
            if !(first > t_start && last <= t_end) {
                return Err(Error::OutOfRange {
                    what: "jump time",
                    value: if first <= t_start { first } else { last },
                    lo: t_start,
                    hi: t_end,
                });
            }
        }
        if let Some(&m) = marks.iter().find(|&&m| m as usize >= n_atoms) {
            return Err(precondition(format!("mark index {m} but only {n_atoms} atoms")));
        }
        Ok(Self {
            t_start,
            t_end,
            times,
            marks,
        })
    }

    pub fn empty(t_start: f64, t_end: f64) -> Self {
        Self {
            t_start,
            t_end,
            times: Vec::new(),
            marks: Vec::new(),
        }
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[u32] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn jumps(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.times.iter().zip(&self.marks).map(|(&t, &m)| (t, m as usize))
    }

    /// Same marks, times mapped through an increasing map onto a new interval.
    pub(crate) fn remap(&self, t_start: f64, t_end: f64, map: impl Fn(f64) -> f64) -> Self {
        Self {
            t_start,
            t_end,
            times: self.times.iter().map(|&r| map(r)).collect(),
            marks: self.marks.clone(),
        }
    }

    /// Jump counts per `(step, atom)` on `grid`, step-major.
    pub fn step_counts(&self, grid: &PathGrid, n_atoms: usize) -> Result<Vec<u16>> {
        let mut counts = vec![0u16; grid.n_steps() * n_atoms];
        for (r, j) in self.jumps() {
            let k = grid.step_of(r).ok_or(Error::OutOfRange {
                what: "jump time",
                value: r,
                lo: grid.t_start(),
                hi: grid.t_end(),
            })?;
            let c = &mut counts[k * n_atoms + j];
            *c = c.saturating_add(1);
        }
        Ok(counts)
    }
}

/// I.i.d. centered Gaussian increments with variance `Δt_k` per component.
pub fn sample_brownian(grid: &PathGrid, dim: usize, seed: RngSeed) -> BrownianPath {
    let mut rng = seed.rng();
    let mut increments = Vec::with_capacity(grid.n_steps() * dim.max(1));
    for k in 0..grid.n_steps() {
        let sd = grid.dt(k).sqrt();
        for _ in 0..dim.max(1) {
            let g: f64 = rng.sample(StandardNormal);
            increments.push(sd * g);
        }
    }
    BrownianPath {
        grid: grid.clone(),
        dim: dim.max(1),
        increments,
    }
}

/// Count-then-uniform sampler of the Poisson random measure on the grid's interval.
pub fn sample_poisson_measure(grid: &PathGrid, levy: &LevyMeasureAtomic, seed: RngSeed) -> PoissonPath {
    sample_poisson_on(grid.t_start(), grid.t_end(), levy, seed)
}

/// As [`sample_poisson_measure`] on an explicit interval `(a, b]`.
pub fn sample_poisson_on(a: f64, b: f64, levy: &LevyMeasureAtomic, seed: RngSeed) -> PoissonPath {
    let mass = levy.total_mass();
    let length = b - a;
    let mean = mass * length;
    if levy.is_empty() || mean <= 0.0 {
        return PoissonPath::empty(a, b);
    }
    let mut rng = seed.rng();
    let count = Poisson::new(mean)
        .expect("positive finite Poisson mean")
        .sample(&mut rng) as usize;
    let pick = WeightedIndex::new(levy.weights()).expect("positive weights");
    loop {
        // (a, b]: b − U·length with U ∈ [0, 1)
        let mut times: Vec<f64> = (0..count)
            .map(|_| b - rng.random::<f64>() * length)
            .filter(|&t| t > a)
            .collect();
        if times.len() < count {
            continue;
        }
        times.sort_by(f64::total_cmp);
        if times.windows(2).any(|w| w[0] == w[1]) {
            continue;
        }
        let marks = (0..count).map(|_| pick.sample(&mut rng) as u32).collect();
        return PoissonPath {
            t_start: a,
            t_end: b,
            times,
            marks,
        };
    }
}

/// Brownian and Poisson noise of path `p` of an ensemble with master seed `master`.
pub fn sample_path_noise(
    grid: &PathGrid,
    dim: usize,
    levy: &LevyMeasureAtomic,
    master: RngSeed,
    p: u64,
) -> (BrownianPath, PoissonPath) {
    (
        sample_brownian(grid, dim, master.path(p, BROWNIAN_STREAM)),
        sample_poisson_measure(grid, levy, master.path(p, POISSON_STREAM)),
    )
}

/// `μ((a, b] × Δ)`; `None` as filter means all atoms.
pub fn count_jumps(path: &PoissonPath, window: (f64, f64), mark_filter: Option<&[usize]>) -> Result<u64> {
    let (a, b) = window;
    if !(a >= path.t_start && b <= path.t_end && a <= b) {
        return Err(Error::OutOfRange {
            what: "count window",
            value: if a < path.t_start { a } else { b },
            lo: path.t_start,
            hi: path.t_end,
        });
    }
    let lo = path.times.partition_point(|&t| t <= a);
    let hi = path.times.partition_point(|&t| t <= b);
    let n = match mark_filter {
        None => hi - lo,
        Some(set) => path.marks[lo..hi]
            .iter()
            .filter(|&&m| set.contains(&(m as usize)))
            .count(),
    };
    Ok(n as u64)
}

/// Path dump with columns `path_id, kind, time, component_or_atom, value`.
/// Brownian rows carry `B_{t_k}`; jump rows carry one row per jump with value 1.
pub fn paths_table(paths: &[(BrownianPath, PoissonPath)]) -> CsvTable {
    let mut table = CsvTable::new(&["path_id", "kind", "time", "component_or_atom", "value"]);
    for (id, (b, mu)) in paths.iter().enumerate() {
        let mut level = vec![0.0; b.dim()];
        for k in 0..=b.grid().n_steps() {
            if k > 0 {
                for (l, db) in level.iter_mut().zip(b.increment(k - 1)) {
                    *l += db;
                }
            }
            for (c, v) in level.iter().enumerate() {
                table.push(vec![
                    id.to_string(),
                    "brownian".into(),
                    fmt_f64(b.grid().time(k)),
                    c.to_string(),
                    fmt_f64(*v),
                ]);
            }
        }
        for (r, j) in mu.jumps() {
            table.push(vec![id.to_string(), "jump".into(), fmt_f64(r), j.to_string(), "1".into()]);
        }
    }
    table
}
