//! Conditional-expectation estimators on a one-dimensional state sample.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Regression basis for `Ê[· | X_k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegressionBasisConfig {
    /// Piecewise-constant fit on equal-frequency bins of `X_k`.
    Binning { bins: usize },
    /// Least squares on the monomials `1, z, …, z^degree` of the standardized state.
    Polynomial { degree: usize },
}

impl Default for RegressionBasisConfig {
    fn default() -> Self {
        Self::Binning { bins: 50 }
    }
}

impl RegressionBasisConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Binning { bins: 0 } => Err(Error::Basis("at least one bin is required".into())),
            _ => Ok(()),
        }
    }

    /// Builds the estimator for the sample `xs`.
    pub fn fit(&self, xs: &[f64]) -> Result<Partition> {
        self.validate()?;
        match *self {
            Self::Binning { bins } => Partition::bins(xs, bins),
            Self::Polynomial { degree } => Partition::polynomial(xs, degree),
        }
    }
}

/// A fitted projection operator for one time step. Coefficients produced by
/// [`Partition::project`] are evaluated pathwise with [`Partition::eval`].
#[derive(Debug, Clone, PartialEq)]
pub enum Partition {
    Bins {
        assign: Vec<u32>,
        sizes: Vec<u32>,
    },
    Polynomial {
        features: Vec<f64>,
        n_features: usize,
        center: f64,
        scale: f64,
        gram: DMatrix<f64>,
        leverage: Vec<f64>,
    },
}

impl Partition {
    fn bins(xs: &[f64], bins: usize) -> Result<Self> {
        let n = xs.len();
        if n < 2 * bins {
            return Err(Error::Basis(format!(
                "{n} paths cannot fill {bins} bins with at least 2 paths each; use at most {} bins",
                n / 2
            )));
        }
        let mut order: Vec<u32> = (0..n as u32).collect();
        order.sort_by(|&a, &b| xs[a as usize].total_cmp(&xs[b as usize]).then(a.cmp(&b)));

        // Equal-frequency cut ranks, pushed right past runs of tied states so
        // equal states always share a bin.
        let mut cuts = Vec::with_capacity(bins);
        let mut prev = 0usize;
        for b in 1..bins {
            let mut c = (b * n) / bins;
            if c <= prev {
                continue;
            }
            while c < n && xs[order[c] as usize] == xs[order[c - 1] as usize] {
                c += 1;
            }
            if c - prev >= 2 && n - c >= 2 {
                cuts.push(c);
                prev = c;
            }
        }
        cuts.push(n);

        let mut assign = vec![0u32; n];
        let mut sizes = Vec::with_capacity(cuts.len());
        let mut start = 0;
        for (b, &end) in cuts.iter().enumerate() {
            for &i in &order[start..end] {
                assign[i as usize] = b as u32;
            }
            sizes.push((end - start) as u32);
            start = end;
        }
        Ok(Self::Bins { assign, sizes })
    }

    fn polynomial(xs: &[f64], degree: usize) -> Result<Self> {
        let n = xs.len();
        if n < degree + 2 {
            return Err(Error::Basis(format!("{n} paths for a degree-{degree} polynomial")));
        }
        let center = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - center).powi(2)).sum::<f64>() / n as f64;
        let scale = var.sqrt();
        // the number of distinct states caps the usable degree
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let degree = if scale > 0.0 { degree.min(sorted.len() - 1) } else { 0 };
        let m = degree + 1;
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut features = Vec::with_capacity(n * m);
        for &x in xs {
            let z = (x - center) / scale;
            let mut p = 1.0;
            for _ in 0..m {
                features.push(p);
                p *= z;
            }
        }
        let a = DMatrix::from_row_slice(n, m, &features);
        let gram = a.transpose() * &a;
        let inv = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Basis("polynomial Gram matrix is not positive definite; lower the degree".into()))?
            .inverse();
        let leverage = features
            .chunks_exact(m)
            .map(|row| {
                let v = DVector::from_column_slice(row);
                v.dot(&(&inv * &v))
            })
            .collect();
        Ok(Self::Polynomial {
            features,
            n_features: m,
            center,
            scale,
            gram,
            leverage,
        })
    }

    pub fn n_paths(&self) -> usize {
        match self {
            Self::Bins { assign, .. } => assign.len(),
            Self::Polynomial { features, n_features, .. } => features.len() / n_features,
        }
    }

    /// Number of bins, or of polynomial coefficients.
    pub fn n_coefficients(&self) -> usize {
        match self {
            Self::Bins { sizes, .. } => sizes.len(),
            Self::Polynomial { n_features, .. } => *n_features,
        }
    }

    /// Coefficients of `Ê[v | X]` for one pathwise sample `v`.
    pub fn project(&self, v: &[f64], step: usize) -> Result<Vec<f64>> {
        let coef = match self {
            Self::Bins { assign, sizes } => {
                let mut sums = vec![0.0; sizes.len()];
                for (&b, &x) in assign.iter().zip(v) {
                    sums[b as usize] += x;
                }
                sums.iter().zip(sizes).map(|(s, &c)| s / c as f64).collect::<Vec<_>>()
            }
            Self::Polynomial {
                features,
                n_features,
                gram,
                ..
            } => {
                let m = *n_features;
                let mut rhs = DVector::<f64>::zeros(m);
                for (row, &x) in features.chunks_exact(m).zip(v) {
                    for (r, f) in rhs.iter_mut().zip(row) {
                        *r += f * x;
                    }
                }
                let chol = gram.clone().cholesky().ok_or_else(|| Error::Numeric {
                    step,
                    detail: "polynomial Gram matrix is not positive definite; lower the degree".into(),
                })?;
                chol.solve(&rhs).iter().copied().collect()
            }
        };
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric {
                step,
                detail: "regression produced a non-finite coefficient".into(),
            });
        }
        Ok(coef)
    }

    /// Fitted value for path `p`.
    pub fn eval(&self, coef: &[f64], p: usize) -> f64 {
        match self {
            Self::Bins { assign, .. } => coef[assign[p] as usize],
            Self::Polynomial {
                features, n_features, ..
            } => features[p * n_features..(p + 1) * n_features]
                .iter()
                .zip(coef)
                .map(|(f, c)| f * c)
                .sum(),
        }
    }

    /// Diagonal of the hat matrix at path `p`.
    pub fn leverage(&self, p: usize) -> f64 {
        match self {
            Self::Bins { assign, sizes } => 1.0 / f64::from(sizes[assign[p] as usize]),
            Self::Polynomial { leverage, .. } => leverage[p],
        }
    }

    /// Leave-one-out fitted value at path `p`, where `coef` was projected
    /// from a sample whose `p`-th entry is `own`.
    pub fn eval_loo(&self, coef: &[f64], own: f64, p: usize) -> f64 {
        let h = self.leverage(p);
        let fitted = self.eval(coef, p);
        if h >= 0.999 {
            return fitted;
        }
        (fitted - h * own) / (1.0 - h)
    }

    /// Fitted value at an arbitrary state (polynomial) or for the bin of path `p`.
    pub fn eval_at(&self, coef: &[f64], x: f64) -> Option<f64> {
        match self {
            Self::Bins { .. } => None,
            Self::Polynomial { center, scale, .. } => {
                let z = (x - center) / scale;
                Some(coef.iter().rev().fold(0.0, |acc, c| acc * z + c))
            }
        }
    }
}
