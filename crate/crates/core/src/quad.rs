//! Gauss-Legendre rules and the compactly supported bump profiles used for
//! mollifiers, cutoffs and kernel windows.

use std::f64::consts::PI;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre polynomial; accurate to
/// machine precision for the node counts used here (n <= 64).
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-based initial guess.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(n, x);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Integrate `f` over [a, b] with an `n`-point Gauss-Legendre rule.
pub fn integrate<F: FnMut(f64) -> f64>(a: f64, b: f64, n: usize, mut f: F) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights.iter()) {
        acc += w * f(mid + half * x);
    }
    acc * half
}

/// Normalisation constant of the standard bump exp(-1/(1-r^2)) on (-1, 1).
fn bump_mass() -> f64 {
    // The profile is smooth and flat at the endpoints; a 64-point rule
    // resolves it to machine precision. Cached after the first call.
    use std::sync::OnceLock;
    static MASS: OnceLock<f64> = OnceLock::new();
    *MASS.get_or_init(|| integrate(-1.0, 1.0, 64, bump_profile))
}

fn bump_profile(r: f64) -> f64 {
    if r.abs() < 1.0 {
        (-1.0 / (1.0 - r * r)).exp()
    } else {
        0.0
    }
}

/// Unit-mass mollifier kernel of width `eps`: support (-eps, eps), integral 1.
pub fn mollifier(u: f64, eps: f64) -> f64 {
    bump_profile(u / eps) / (bump_mass() * eps)
}

/// Smooth transition that is 0 for t <= 0 and 1 for t >= 1.
pub fn smooth_step(t: f64) -> f64 {
    let rise = decay(t);
    let fall = decay(1.0 - t);
    rise / (rise + fall)
}

fn decay(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

/// Radial plateau bump: 1 on |r| <= 1/2, 0 on |r| >= 1, smooth monotone in between.
pub fn plateau(r: f64) -> f64 {
    smooth_step(2.0 * (1.0 - r.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1.
        let val = integrate(0.0, 1.0, 4, |x| x.powi(7));
        assert!((val - 0.125).abs() < 1e-14);
        let val = integrate(-2.0, 3.0, 8, |x| 3.0 * x * x);
        assert!((val - (27.0 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn mollifier_has_unit_mass_and_compact_support() {
        for &eps in &[0.3, 0.05] {
            let mass = integrate(-eps, eps, 64, |u| mollifier(u, eps));
            assert!((mass - 1.0).abs() < 1e-12, "mass {mass}");
            assert_eq!(mollifier(eps * 1.0001, eps), 0.0);
            assert_eq!(mollifier(-2.0 * eps, eps), 0.0);
        }
    }

    #[test]
    fn plateau_is_one_inside_and_zero_outside() {
        assert_eq!(plateau(0.0), 1.0);
        assert_eq!(plateau(0.49), 1.0);
        assert_eq!(plateau(1.0), 0.0);
        assert!(plateau(0.75) > 0.0 && plateau(0.75) < 1.0);
    }
}
