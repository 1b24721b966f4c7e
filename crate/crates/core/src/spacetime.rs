//! Explicit Lorentzian metrics of globally hyperbolic product form on
//! R x R^{n-1}, their Christoffel symbols, and causal classification of
//! tangent vectors. The chart is a single global coordinate box and the
//! coordinate field along x^0 is declared future-pointing.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::CoordBox;

/// Relative step for finite-difference metric derivatives.
pub const FD_REL_STEP: f64 = 1e-5;

/// Width of the numerical null band, relative to the Euclidean size of p.
pub const TOL_NULL: f64 = 1e-9;

/// Affine scalar field c + g . x, the parametric form used for conformal
/// factors in scenario files.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct AffineField {
    pub constant: f64,
    pub gradient: Vec<f64>,
}

impl AffineField {
    pub fn constant(c: f64, n: usize) -> Self {
        AffineField {
            constant: c,
            gradient: vec![0.0; n],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self
                .gradient
                .iter()
                .zip(x.iter())
                .map(|(g, v)| g * v)
                .sum::<f64>()
    }

    pub fn gradient_at(&self, _x: &[f64]) -> Vec<f64> {
        self.gradient.clone()
    }
}

/// Metric components supplied as code, for tests and custom studies.
pub struct CustomMetric {
    pub components: Box<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>,
    pub christoffel: Option<Box<dyn Fn(&[f64]) -> Christoffel + Send + Sync>>,
}

impl fmt::Debug for CustomMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomMetric")
    }
}

#[derive(Clone, Debug)]
pub enum MetricKind {
    /// diag(-1, 1, ..., 1)
    Minkowski,
    /// e^{phi(x)} eta with an affine phi
    ConformalMinkowski { phi: AffineField },
    /// -dt^2 + a(t)^2 (dx^1)^2 + ... with a(t) = a0 + a1 t
    DiagonalWarped { a0: f64, a1: f64 },
    /// componentwise g(x), optionally with analytic Christoffel symbols
    CustomAnalytic(Arc<CustomMetric>),
}

/// Explicit Lorentzian metric on a global coordinate chart box.
#[derive(Clone, Debug)]
pub struct MetricSpec {
    pub n: usize,
    pub kind: MetricKind,
    pub chart_box: CoordBox,
}

impl MetricSpec {
    pub fn minkowski(n: usize, chart_box: CoordBox) -> Self {
        MetricSpec {
            n,
            kind: MetricKind::Minkowski,
            chart_box,
        }
    }

    pub fn conformal_minkowski(n: usize, phi: AffineField, chart_box: CoordBox) -> Self {
        assert_eq!(phi.gradient.len(), n);
        MetricSpec {
            n,
            kind: MetricKind::ConformalMinkowski { phi },
            chart_box,
        }
    }

    pub fn diagonal_warped(n: usize, a0: f64, a1: f64, chart_box: CoordBox) -> Self {
        MetricSpec {
            n,
            kind: MetricKind::DiagonalWarped { a0, a1 },
            chart_box,
        }
    }

    pub fn custom(n: usize, metric: CustomMetric, chart_box: CoordBox) -> Self {
        MetricSpec {
            n,
            kind: MetricKind::CustomAnalytic(Arc::new(metric)),
            chart_box,
        }
    }

    pub fn in_chart(&self, x: &[f64]) -> bool {
        self.chart_box.contains(x)
    }

    /// Metric components g(x). Symmetric with g_00 < 0 on the chart.
    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.n;
        let g = match &self.kind {
            MetricKind::Minkowski => minkowski_matrix(n),
            MetricKind::ConformalMinkowski { phi } => {
                let scale = phi.eval(x).exp();
                minkowski_matrix(n) * scale
            }
            MetricKind::DiagonalWarped { a0, a1 } => {
                let a = a0 + a1 * x[0];
                let mut g = DMatrix::zeros(n, n);
                g[(0, 0)] = -1.0;
                for i in 1..n {
                    g[(i, i)] = a * a;
                }
                g
            }
            MetricKind::CustomAnalytic(custom) => {
                let g = (custom.components)(x);
                if (g.clone() - g.transpose()).amax() > 1e-12 {
                    return Err(Error::Evaluation {
                        coords: x.to_vec(),
                    });
                }
                g
            }
        };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                coords: x.to_vec(),
            });
        }
        Ok(g)
    }

    pub fn inverse_metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric_at(x)?;
        g.try_inverse().ok_or_else(|| Error::SingularMetric {
            coords: x.to_vec(),
        })
    }

    /// g(p, q) at x.
    pub fn inner(&self, x: &[f64], p: &[f64], q: &[f64]) -> Result<f64> {
        let g = self.metric_at(x)?;
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                acc += g[(i, j)] * p[i] * q[j];
            }
        }
        Ok(acc)
    }

    /// Christoffel symbols at x: analytic where the metric family admits
    /// them, otherwise central finite differences of the components.
    pub fn christoffel(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.n;
        match &self.kind {
            MetricKind::Minkowski => Ok(Christoffel::zeros(n)),
            MetricKind::ConformalMinkowski { phi } => {
                let base = Christoffel::zeros(n);
                let g = minkowski_matrix(n);
                conformal_christoffel(&base, &g, &phi.gradient_at(x))
            }
            MetricKind::DiagonalWarped { a0, a1 } => {
                let a = a0 + a1 * x[0];
                if a.abs() < 1e-14 {
                    return Err(Error::SingularMetric {
                        coords: x.to_vec(),
                    });
                }
                let mut gamma = Christoffel::zeros(n);
                for i in 1..n {
                    *gamma.at_mut(0, i, i) = a * a1;
                    *gamma.at_mut(i, 0, i) = a1 / a;
                    *gamma.at_mut(i, i, 0) = a1 / a;
                }
                Ok(gamma)
            }
            MetricKind::CustomAnalytic(custom) => {
                if let Some(gamma_fn) = &custom.christoffel {
                    Ok(gamma_fn(x))
                } else {
                    self.christoffel_fd(x)
                }
            }
        }
    }

    /// Christoffel symbols from central differences of the metric.
    pub fn christoffel_fd(&self, x: &[f64]) -> Result<Christoffel> {
        let n = self.n;
        let g_inv = self.inverse_metric_at(x)?;
        // dg[k] = d g / d x^k
        let mut dg = Vec::with_capacity(n);
        for k in 0..n {
            let step = FD_REL_STEP * x[k].abs().max(1.0);
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += step;
            xm[k] -= step;
            let gp = self.metric_at(&xp)?;
            let gm = self.metric_at(&xm)?;
            dg.push((gp - gm) / (2.0 * step));
        }
        let mut gamma = Christoffel::zeros(n);
        for a in 0..n {
            for l in 0..n {
                for m in l..n {
                    let mut acc = 0.0;
                    for nu in 0..n {
                        acc += 0.5
                            * g_inv[(a, nu)]
                            * (dg[l][(nu, m)] + dg[m][(nu, l)] - dg[nu][(l, m)]);
                    }
                    *gamma.at_mut(a, l, m) = acc;
                    *gamma.at_mut(a, m, l) = acc;
                }
            }
        }
        Ok(gamma)
    }

    /// Classify p at x by the sign of g(p, p), with a null band of relative
    /// width `TOL_NULL`, and orient causal vectors against the coordinate
    /// time field.
    pub fn causal_class(&self, x: &[f64], p: &[f64]) -> Result<CausalClass> {
        let e2: f64 = p.iter().map(|v| v * v).sum();
        if e2 == 0.0 {
            return Err(Error::ZeroVector);
        }
        let g = self.metric_at(x)?;
        let mut gpp = 0.0;
        let mut g0p = 0.0;
        for i in 0..self.n {
            g0p += g[(0, i)] * p[i];
            for j in 0..self.n {
                gpp += g[(i, j)] * p[i] * p[j];
            }
        }
        let kind = if gpp.abs() <= TOL_NULL * e2 {
            CausalKind::Lightlike
        } else if gpp < 0.0 {
            CausalKind::Timelike
        } else {
            CausalKind::Spacelike
        };
        let direction = match kind {
            CausalKind::Spacelike => TimeDirection::None,
            _ => {
                if g0p < 0.0 {
                    TimeDirection::Future
                } else {
                    TimeDirection::Past
                }
            }
        };
        let mass = match kind {
            CausalKind::Lightlike => Some(0.0),
            CausalKind::Timelike => Some((-gpp).sqrt()),
            CausalKind::Spacelike => None,
        };
        Ok(CausalClass {
            kind,
            direction,
            mass,
        })
    }

    pub fn is_future_causal(&self, x: &[f64], p: &[f64]) -> bool {
        matches!(
            self.causal_class(x, p),
            Ok(CausalClass {
                kind: CausalKind::Timelike | CausalKind::Lightlike,
                direction: TimeDirection::Future,
                ..
            })
        )
    }

    pub fn is_future_timelike(&self, x: &[f64], p: &[f64]) -> bool {
        matches!(
            self.causal_class(x, p),
            Ok(CausalClass {
                kind: CausalKind::Timelike,
                direction: TimeDirection::Future,
                ..
            })
        )
    }

    /// Future-pointing null vector at x with the given spatial part: the
    /// time component solves g(p, p) = 0 for the product-form metric.
    pub fn null_lift(&self, x: &[f64], spatial: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(spatial.len(), self.n - 1);
        let g = self.metric_at(x)?;
        // Product form: no time-space cross terms in the supported families.
        let mut quad = 0.0;
        for i in 1..self.n {
            for j in 1..self.n {
                quad += g[(i, j)] * spatial[i - 1] * spatial[j - 1];
            }
        }
        let g00 = g[(0, 0)];
        if g00 >= 0.0 {
            return Err(Error::SingularMetric {
                coords: x.to_vec(),
            });
        }
        let p0 = (quad / -g00).sqrt();
        let mut p = Vec::with_capacity(self.n);
        p.push(p0);
        p.extend_from_slice(spatial);
        Ok(p)
    }
}

fn minkowski_matrix(n: usize) -> DMatrix<f64> {
    let mut g = DMatrix::identity(n, n);
    g[(0, 0)] = -1.0;
    g
}

/// Connection coefficients, flat-packed as [alpha][lambda][mu].
#[derive(Clone, Debug, PartialEq)]
pub struct Christoffel {
    pub n: usize,
    data: Vec<f64>,
}

impl Christoffel {
    pub fn zeros(n: usize) -> Self {
        Christoffel {
            n,
            data: vec![0.0; n * n * n],
        }
    }

    #[inline]
    pub fn at(&self, alpha: usize, lambda: usize, mu: usize) -> f64 {
        self.data[(alpha * self.n + lambda) * self.n + mu]
    }

    #[inline]
    pub fn at_mut(&mut self, alpha: usize, lambda: usize, mu: usize) -> &mut f64 {
        &mut self.data[(alpha * self.n + lambda) * self.n + mu]
    }

    /// Gamma^alpha_{lambda mu} p^lambda p^mu for each alpha.
    pub fn contract(&self, p: &[f64], out: &mut [f64]) {
        let n = self.n;
        for a in 0..n {
            let mut acc = 0.0;
            let base = a * n * n;
            for l in 0..n {
                let row = base + l * n;
                let pl = p[l];
                if pl == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for m in 0..n {
                    inner += self.data[row + m] * p[m];
                }
                acc += pl * inner;
            }
            out[a] = acc;
        }
    }

    pub fn max_lower_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in 0..self.n {
            for l in 0..self.n {
                for m in 0..self.n {
                    worst = worst.max((self.at(a, l, m) - self.at(a, m, l)).abs());
                }
            }
        }
        worst
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Connection of e^{phi} g from the connection of g:
/// correction (1/2)(delta^k_j d_i phi + delta^k_i d_j phi - g_ij g^{kl} d_l phi).
pub fn conformal_christoffel(
    gamma: &Christoffel,
    g: &DMatrix<f64>,
    dphi: &[f64],
) -> Result<Christoffel> {
    let n = gamma.n;
    let g_inv = g.clone().try_inverse().ok_or(Error::SingularMetric {
        coords: vec![f64::NAN; n],
    })?;
    // grad^k phi = g^{kl} d_l phi
    let mut grad_up = vec![0.0; n];
    for k in 0..n {
        for l in 0..n {
            grad_up[k] += g_inv[(k, l)] * dphi[l];
        }
    }
    let mut out = gamma.clone();
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut corr = 0.0;
                if k == j {
                    corr += dphi[i];
                }
                if k == i {
                    corr += dphi[j];
                }
                corr -= g[(i, j)] * grad_up[k];
                *out.at_mut(k, i, j) += 0.5 * corr;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CausalKind {
    Timelike,
    Lightlike,
    Spacelike,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeDirection {
    Future,
    Past,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CausalClass {
    pub kind: CausalKind,
    pub direction: TimeDirection,
    pub mass: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn default_chart(n: usize) -> CoordBox {
        CoordBox::cube_around(&vec![0.0; n], 10.0)
    }

    #[test]
    fn minkowski_components() {
        let spec = MetricSpec::minkowski(3, default_chart(3));
        let g = spec.metric_at(&[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(1, 1)], 1.0);
        assert_eq!(g[(2, 2)], 1.0);
        assert_eq!(g[(0, 1)], 0.0);
    }

    #[test]
    fn conformal_with_zero_field_is_minkowski() {
        let spec = MetricSpec::conformal_minkowski(
            3,
            AffineField::constant(0.0, 3),
            default_chart(3),
        );
        let g = spec.metric_at(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(g[(0, 0)], -1.0);
        assert_eq!(g[(1, 1)], 1.0);
    }

    #[test]
    fn diagonal_warped_components() {
        let spec = MetricSpec::diagonal_warped(3, 1.0, 0.1, default_chart(3));
        let g = spec.metric_at(&[1.0, 0.0, 0.0]).unwrap();
        assert!((g[(1, 1)] - 1.21).abs() < 1e-15);
        assert!((g[(2, 2)] - 1.21).abs() < 1e-15);
        assert_eq!(g[(0, 0)], -1.0);
    }

    #[test]
    fn minkowski_christoffel_vanishes() {
        let spec = MetricSpec::minkowski(4, default_chart(4));
        let gamma = spec.christoffel(&[0.0; 4]).unwrap();
        assert_eq!(gamma, Christoffel::zeros(4));
    }

    #[test]
    fn warped_christoffel_hand_values() {
        let spec = MetricSpec::diagonal_warped(3, 1.0, 0.1, default_chart(3));
        let gamma = spec.christoffel(&[0.0, 0.0, 0.0]).unwrap();
        // a = 1, a' = 0.1 at t = 0
        assert!((gamma.at(0, 1, 1) - 0.1).abs() < 1e-14);
        assert!((gamma.at(1, 0, 1) - 0.1).abs() < 1e-14);
        assert!((gamma.at(1, 1, 0) - 0.1).abs() < 1e-14);
        assert_eq!(gamma.at(0, 0, 0), 0.0);
    }

    /// Independent finite-difference oracle: derivatives of the metric
    /// components fed into the textbook formula.
    fn fd_christoffel_oracle(spec: &MetricSpec, x: &[f64]) -> Christoffel {
        let n = spec.n;
        let g_inv = spec.inverse_metric_at(x).unwrap();
        let h = 1e-5;
        let mut dg = Vec::new();
        for k in 0..n {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[k] += h;
            xm[k] -= h;
            dg.push((spec.metric_at(&xp).unwrap() - spec.metric_at(&xm).unwrap()) / (2.0 * h));
        }
        let mut gamma = Christoffel::zeros(n);
        for a in 0..n {
            for l in 0..n {
                for m in 0..n {
                    let mut acc = 0.0;
                    for nu in 0..n {
                        acc += 0.5
                            * g_inv[(a, nu)]
                            * (dg[l][(nu, m)] + dg[m][(nu, l)] - dg[nu][(l, m)]);
                    }
                    *gamma.at_mut(a, l, m) = acc;
                }
            }
        }
        gamma
    }

    #[test]
    fn conformal_christoffel_matches_fd_oracle() {
        let phi = AffineField {
            constant: 0.0,
            gradient: vec![0.0, 0.3, 0.0],
        };
        let spec = MetricSpec::conformal_minkowski(3, phi, default_chart(3));
        for x in [[0.0, 0.0, 0.0], [0.5, -1.0, 2.0], [1.5, 0.7, -0.3]] {
            let analytic = spec.christoffel(&x).unwrap();
            let oracle = fd_christoffel_oracle(&spec, &x);
            assert!(
                analytic.max_abs_diff(&oracle) < 1e-6,
                "mismatch {:.3e}",
                analytic.max_abs_diff(&oracle)
            );
        }
    }

    #[test]
    fn warped_christoffel_matches_fd_oracle() {
        let spec = MetricSpec::diagonal_warped(3, 1.0, 0.1, default_chart(3));
        for x in [[0.0, 0.0, 0.0], [1.0, 0.5, -0.5], [2.0, -2.0, 1.0]] {
            let analytic = spec.christoffel(&x).unwrap();
            let oracle = fd_christoffel_oracle(&spec, &x);
            assert!(analytic.max_abs_diff(&oracle) < 1e-6);
        }
    }

    #[test]
    fn conformal_correction_vanishes_for_constant_field() {
        let spec = MetricSpec::diagonal_warped(3, 1.0, 0.05, default_chart(3));
        let x = [0.4, 0.1, -0.2];
        let gamma = spec.christoffel(&x).unwrap();
        let g = spec.metric_at(&x).unwrap();
        let rescaled = conformal_christoffel(&gamma, &g, &[0.0, 0.0, 0.0]).unwrap();
        assert!(gamma.max_abs_diff(&rescaled) < 1e-15);
    }

    #[test]
    fn conformal_correction_on_warped_matches_fd_of_rescaled_metric() {
        // phi = 0.1 x^0 on the warped background, compared against the
        // finite-difference connection of e^{phi} g.
        let base = MetricSpec::diagonal_warped(3, 1.0, 0.1, default_chart(3));
        let phi = AffineField {
            constant: 0.0,
            gradient: vec![0.1, 0.0, 0.0],
        };
        let phi2 = phi.clone();
        let rescaled = MetricSpec::custom(
            3,
            CustomMetric {
                components: Box::new(move |x: &[f64]| {
                    let mut g = DMatrix::zeros(3, 3);
                    let a = 1.0 + 0.1 * x[0];
                    g[(0, 0)] = -1.0;
                    g[(1, 1)] = a * a;
                    g[(2, 2)] = a * a;
                    g * phi2.eval(x).exp()
                }),
                christoffel: None,
            },
            default_chart(3),
        );
        for x in [[0.2, 0.3, -0.1], [1.0, -0.5, 0.4]] {
            let gamma = base.christoffel(&x).unwrap();
            let g = base.metric_at(&x).unwrap();
            let formula = conformal_christoffel(&gamma, &g, &phi.gradient_at(&x)).unwrap();
            let oracle = fd_christoffel_oracle(&rescaled, &x);
            assert!(
                formula.max_abs_diff(&oracle) < 1e-5,
                "diff {:.3e}",
                formula.max_abs_diff(&oracle)
            );
        }
    }

    #[test]
    fn causal_classification_examples() {
        let spec = MetricSpec::minkowski(3, default_chart(3));
        let x = [0.0, 0.0, 0.0];
        let c = spec.causal_class(&x, &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.kind, CausalKind::Timelike);
        assert_eq!(c.direction, TimeDirection::Future);
        assert!((c.mass.unwrap() - 1.0).abs() < 1e-12);

        let c = spec.causal_class(&x, &[1.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.kind, CausalKind::Lightlike);
        assert_eq!(c.direction, TimeDirection::Future);
        assert_eq!(c.mass, Some(0.0));

        let c = spec.causal_class(&x, &[0.0, 1.0, 0.0]).unwrap();
        assert_eq!(c.kind, CausalKind::Spacelike);
        assert_eq!(c.direction, TimeDirection::None);
        assert_eq!(c.mass, None);

        assert!(matches!(
            spec.causal_class(&x, &[0.0, 0.0, 0.0]),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn null_lift_is_lightlike() {
        let spec = MetricSpec::diagonal_warped(3, 1.0, 0.1, default_chart(3));
        let x = [0.7, 0.2, -0.4];
        let p = spec.null_lift(&x, &[0.6, -0.8]).unwrap();
        let gpp = spec.inner(&x, &p, &p).unwrap();
        assert!(gpp.abs() < 1e-12);
        assert!(spec.is_future_causal(&x, &p));
    }
}
