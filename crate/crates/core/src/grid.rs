//! Tabulated one-dimensional densities.

use crate::error::{Error, Result};
use crate::quad::{cumulative_trapezoid, trapezoid};

/// Tolerance on the trapezoid integral of a normalized grid.
pub const NORMALIZATION_TOL: f64 = 1e-6;

/// A density tabulated on strictly increasing points.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    points: Vec<f64>,
    values: Vec<f64>,
    normalized: bool,
}

impl DensityGrid {
    /// Builds an unnormalized grid after validating points and values.
    pub fn new(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidGrid("need at least two points".into()));
        }
        if points.len() != values.len() {
            return Err(Error::InvalidGrid(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGrid("non-finite point".into()));
        }
        if let Some(i) = points.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "points not strictly increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "value {} at index {i} is negative or non-finite",
                values[i]
            )));
        }
        Ok(Self {
            points,
            values,
            normalized: false,
        })
    }

    /// Tabulates `f` on `points`.
    pub fn from_fn(points: Vec<f64>, mut f: impl FnMut(f64) -> Result<f64>) -> Result<Self> {
        let values = points.iter().map(|&p| f(p)).collect::<Result<Vec<_>>>()?;
        Self::new(points, values)
    }

    /// Builds a grid and normalizes it.
    pub fn normalized_from(points: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        Self::new(points, values)?.normalize()
    }

    /// Rescales values so the trapezoid integral is one.
    pub fn normalize(mut self) -> Result<Self> {
        let total = self.integral();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidGrid(format!("cannot normalize, integral is {total}")));
        }
        for v in &mut self.values {
            *v /= total;
        }
        self.normalized = true;
        Ok(self)
    }

    /// Rescales values so that `value_at(anchor) == 1`.
    pub fn scaled_to_one_at(mut self, anchor: f64) -> Result<Self> {
        let v = self.value_at(anchor);
        if !(v > 0.0) {
            return Err(Error::ZeroReferenceDensity { at: anchor });
        }
        for x in &mut self.values {
            *x /= v;
        }
        if let Ok(i) = self.points.binary_search_by(|p| p.total_cmp(&anchor)) {
            self.values[i] = 1.0;
        }
        self.normalized = false;
        Ok(self)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn lower(&self) -> f64 {
        self.points[0]
    }

    pub fn upper(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    /// Trapezoid integral of the values.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.points, &self.values)
    }

    fn require_normalized(&self) -> Result<()> {
        let integral = self.integral();
        if !self.normalized || (integral - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::UnnormalizedGrid { integral });
        }
        Ok(())
    }

    /// Linear interpolation of the density; zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        if x < self.lower() || x > self.upper() {
            return 0.0;
        }
        let i = self.points.partition_point(|&p| p <= x);
        if i == 0 {
            return self.values[0];
        }
        if i >= self.points.len() {
            return self.values[self.values.len() - 1];
        }
        let (x0, x1) = (self.points[i - 1], self.points[i]);
        let t = (x - x0) / (x1 - x0);
        self.values[i - 1] + t * (self.values[i] - self.values[i - 1])
    }

    /// Trapezoid CDF at every grid point.
    pub fn cdf_values(&self) -> Result<Vec<f64>> {
        self.require_normalized()?;
        let mut c = cumulative_trapezoid(&self.points, &self.values);
        let last = *c.last().unwrap();
        for v in &mut c {
            *v /= last;
        }
        Ok(c)
    }

    /// CDF at `x`, integrating the piecewise-linear density exactly.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        let c = self.cdf_values()?;
        if x <= self.lower() {
            return Ok(0.0);
        }
        if x >= self.upper() {
            return Ok(1.0);
        }
        let i = self.points.partition_point(|&p| p <= x) - 1;
        let (x0, x1) = (self.points[i], self.points[i + 1]);
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let dx = x - x0;
        let slope = (f1 - f0) / (x1 - x0);
        let total = self.integral();
        Ok(c[i] + (f0 * dx + 0.5 * slope * dx * dx) / total)
    }

    /// Quantile by linear interpolation of the tabulated CDF.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain("quantile", format!("probability {p} outside [0, 1]")));
        }
        let c = self.cdf_values()?;
        Ok(interpolate_inverse(&self.points, &c, p))
    }

    /// Several quantiles, sharing one CDF evaluation.
    pub fn quantiles(&self, probs: &[f64]) -> Result<Vec<f64>> {
        let c = self.cdf_values()?;
        probs
            .iter()
            .map(|&p| {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::domain("quantile", format!("probability {p} outside [0, 1]")));
                }
                Ok(interpolate_inverse(&self.points, &c, p))
            })
            .collect()
    }

    /// Mean by trapezoid quadrature of x·f(x).
    pub fn mean(&self) -> Result<f64> {
        self.require_normalized()?;
        let xf: Vec<f64> = self.points.iter().zip(&self.values).map(|(x, f)| x * f).collect();
        Ok(trapezoid(&self.points, &xf) / self.integral())
    }

    /// Standard deviation by trapezoid quadrature.
    pub fn sd(&self) -> Result<f64> {
        let mean = self.mean()?;
        let f: Vec<f64> = self
            .points
            .iter()
            .zip(&self.values)
            .map(|(x, f)| (x - mean).powi(2) * f)
            .collect();
        Ok((trapezoid(&self.points, &f) / self.integral()).sqrt())
    }

    /// Maps the grid through a monotone increasing change of variables,
    /// applying the Jacobian `dx/dy` at each point.
    pub fn transform(&self, forward: impl Fn(f64) -> f64, jacobian: impl Fn(f64) -> f64) -> Result<Self> {
        let points: Vec<f64> = self.points.iter().map(|&x| forward(x)).collect();
        let values: Vec<f64> = self
            .points
            .iter()
            .zip(&self.values)
            .map(|(&x, &v)| v * jacobian(x))
            .collect();
        let g = Self::new(points, values)?;
        if self.normalized {
            g.normalize()
        } else {
            Ok(g)
        }
    }
}

/// Inverse of a nondecreasing tabulated function `c` over `x` at level `p`.
pub(crate) fn interpolate_inverse(x: &[f64], c: &[f64], p: f64) -> f64 {
    if p <= c[0] {
        // Leftmost point at which the CDF leaves zero.
        let i = c.iter().rposition(|&v| v <= c[0]).unwrap_or(0);
        return x[i];
    }
    let n = c.len();
    if p >= c[n - 1] {
        let i = c.iter().position(|&v| v >= c[n - 1]).unwrap_or(n - 1);
        return x[i];
    }
    let i = c.partition_point(|&v| v < p);
    let (c0, c1) = (c[i - 1], c[i]);
    if c1 <= c0 {
        return x[i];
    }
    let t = (p - c0) / (c1 - c0);
    x[i - 1] + t * (x[i] - x[i - 1])
}

/// `n` equally spaced points on [lo, hi].
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let h = (hi - lo) / (n - 1) as f64;
            let mut v: Vec<f64> = (0..n).map(|i| lo + h * i as f64).collect();
            v[n - 1] = hi;
            v
        }
    }
}

/// `n` logarithmically spaced points on [lo, hi], lo > 0.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = linspace(a, b, n).into_iter().map(f64::exp).collect();
    if let Some(first) = v.first_mut() {
        *first = lo;
    }
    if let Some(last) = v.last_mut() {
        *last = hi;
    }
    v
}

/// Kolmogorov–Smirnov distance between two CDFs compared on a common point set.
pub fn ks_distance(a: &DensityGrid, b: &DensityGrid) -> Result<f64> {
    let mut pts: Vec<f64> = a.points().iter().chain(b.points()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let mut d: f64 = 0.0;
    for &x in &pts {
        d = d.max((a.cdf(x)? - b.cdf(x)?).abs());
    }
    Ok(d)
}

/// KS distance between a grid and an analytic CDF, evaluated on the grid points.
pub fn ks_distance_to(a: &DensityGrid, cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let c = a.cdf_values()?;
    let mut d: f64 = 0.0;
    for (x, ca) in a.points().iter().zip(c) {
        d = d.max((ca - cdf(*x)?).abs());
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> DensityGrid {
        DensityGrid::normalized_from(linspace(0.0, 1.0, 101), vec![1.0; 101]).unwrap()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(DensityGrid::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(DensityGrid::new(vec![0.0, 1.0], vec![1.0, -1.0]).is_err());
        assert!(DensityGrid::new(vec![0.0, 1.0], vec![1.0, f64::NAN]).is_err());
        assert!(DensityGrid::new(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn uniform_moments_and_quantiles() {
        let g = uniform();
        assert!((g.quantile(0.95).unwrap() - 0.95).abs() < 1e-12);
        assert!((g.mean().unwrap() - 0.5).abs() < 1e-12);
        assert!((g.sd().unwrap() - 1.0 / 12f64.sqrt()).abs() < 1e-4);
    }

    #[test]
    fn unnormalized_grid_is_rejected() {
        let g = DensityGrid::new(linspace(0.0, 1.0, 11), vec![2.0; 11]).unwrap();
        assert!(matches!(g.quantile(0.5), Err(Error::UnnormalizedGrid { .. })));
    }

    #[test]
    fn cdf_inside_cells_is_exact_for_linear_density() {
        let g = DensityGrid::normalized_from(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        assert!((g.cdf(0.5).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn scaled_to_one_is_exact_at_grid_point() {
        let g = DensityGrid::new(linspace(0.0, 2.0, 7), vec![0.3, 0.7, 1.1, 1.9, 1.3, 1.0, 0.2]).unwrap();
        let s = g.scaled_to_one_at(linspace(0.0, 2.0, 7)[3]).unwrap();
        assert_eq!(s.values()[3], 1.0);
    }

    #[test]
    fn ks_of_identical_grids_is_zero() {
        assert_eq!(ks_distance(&uniform(), &uniform()).unwrap(), 0.0);
    }
}
