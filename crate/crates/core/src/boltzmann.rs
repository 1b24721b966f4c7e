//! Small-data solver for the collisional Cauchy problem by fixed-point
//! iteration on the flow-integrated equation, plus the first and second
//! linearizations of the source-to-solution map.
//!
//! The iteration caches the current iterate and its collision term on a
//! rectilinear phase grid; multilinear interpolation breaks the otherwise
//! unbounded recursion of nested functional evaluation. Evaluation of the
//! returned solution outside the grid box is zero by the grid convention.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::collision::{q_full, q_full_concentrated, CollisionKernel, SigmaQuadRule};
use crate::error::{Error, Result};
use crate::grid::{GridAxis, RectGrid};
use crate::kinetic::{integrate_backward_over_box, vlasov_solve, PhaseDensity, Support};
use crate::spacetime::MetricSpec;

#[derive(Clone, Debug)]
pub struct SolveConfig {
    /// Phase-grid axes over the base coordinates (time first).
    pub x_axes: Vec<GridAxis>,
    /// Phase-grid axes over the momentum coordinates.
    pub p_axes: Vec<GridAxis>,
    /// Sup-norm change on the grid below which the iteration stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Admissible source amplitude; the iteration refuses larger data.
    pub max_source_norm: Option<f64>,
    /// Nodes per momentum axis of the collision quadrature.
    pub sigma_nodes: usize,
    /// Backward-flow integration step.
    pub flow_step: f64,
    /// Number of random phase points for the residual check.
    pub validation_points: usize,
    pub seed: u64,
}

impl SolveConfig {
    pub fn validate(&self, spec: &MetricSpec, kernel: &CollisionKernel) -> Result<()> {
        let n = spec.n;
        if self.x_axes.len() != n || self.p_axes.len() != n {
            return Err(Error::Config {
                pointer: "/solver/grid".into(),
                message: format!("expected {n} axes for x and p"),
            });
        }
        if self.tol <= 0.0 {
            return Err(Error::Config {
                pointer: "/solver/tol".into(),
                message: "tolerance must be positive".into(),
            });
        }
        // The momentum axes must cover the kernel's momentum windows, or
        // collision contributions would be silently truncated.
        for d in 0..n {
            if self.p_axes[d].lo > kernel.momentum_box.lo[d]
                || self.p_axes[d].hi < kernel.momentum_box.hi[d]
            {
                return Err(Error::Config {
                    pointer: format!("/solver/p_axes/{d}"),
                    message: "momentum grid does not cover the kernel momentum box".into(),
                });
            }
        }
        Ok(())
    }

    fn axes(&self) -> Vec<GridAxis> {
        let mut axes = self.x_axes.clone();
        axes.extend(self.p_axes.clone());
        axes
    }
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    /// Sup-norm grid change per sweep.
    pub changes: Vec<f64>,
    /// Ratios of consecutive changes once both are defined.
    pub contraction_ratios: Vec<f64>,
    /// Sup of the integrated-equation residual over the validation sample.
    pub residual_max: f64,
    pub source_sup: f64,
    pub solution_sup: f64,
    /// Measured stability constant: solution sup over source sup.
    pub stability_constant: f64,
}

/// Estimate the sup norm of a density by sampling its support box.
pub fn estimate_sup(
    dens: &PhaseDensity,
    spec: &MetricSpec,
    seed: u64,
    samples: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = dens
        .support
        .base
        .clone()
        .unwrap_or_else(|| spec.chart_box.clone());
    let momentum = dens
        .support
        .momentum
        .clone()
        .unwrap_or_else(|| spec.chart_box.clone());
    let mut sup: f64 = 0.0;
    for _ in 0..samples {
        let x: Vec<f64> = base
            .lo
            .iter()
            .zip(base.hi.iter())
            .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
            .collect();
        let p: Vec<f64> = momentum
            .lo
            .iter()
            .zip(momentum.hi.iter())
            .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
            .collect();
        sup = sup.max(dens.eval(&x, &p)?.abs());
    }
    Ok(sup)
}

/// Solve the collisional Cauchy problem with source `f` by Picard iteration
/// on the integrated equation, starting from the collisionless solution.
pub fn boltzmann_solve(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    f: &PhaseDensity,
    cfg: &SolveConfig,
) -> Result<(PhaseDensity, SolveDiagnostics)> {
    cfg.validate(spec, kernel)?;
    let n = spec.n;
    let axes = cfg.axes();
    let rule = SigmaQuadRule::for_kernel(kernel, cfg.sigma_nodes);

    let source_sup = estimate_sup(f, spec, cfg.seed ^ 0x5eed, 4000)?;
    if let Some(max_norm) = cfg.max_source_norm {
        if source_sup > max_norm {
            return Err(Error::NoContraction {
                iterations: 0,
                last_change: source_sup,
            });
        }
    }

    // Collisionless part of every iterate; computed once.
    let u0 = vlasov_solve(spec, f, cfg.flow_step)?;
    let u0_grid = fill_grid(&axes, n, |x, p| u0.eval(x, p))?;

    let mut current = u0_grid.values.clone();
    let mut changes: Vec<f64> = Vec::new();
    let mut grow_streak = 0usize;
    let mut iterations = 0usize;

    loop {
        iterations += 1;
        if iterations > cfg.max_iter {
            return Err(Error::NoContraction {
                iterations: iterations - 1,
                last_change: changes.last().copied().unwrap_or(f64::NAN),
            });
        }
        let u_prev =
            PhaseDensity::grid_cached(RectGrid::from_values(axes.clone(), current.clone()), n);
        // Collision term of the previous iterate, cached over the kernel's
        // base box at the solver's resolution.
        let q_axes = collision_axes(&cfg.x_axes, &cfg.p_axes, kernel);
        let q_grid = fill_grid(&q_axes, n, |x, p| {
            q_full(kernel, &rule, &u_prev, &u_prev, x, p)
        })?;
        let q_interp = PhaseDensity::grid_cached(q_grid, n);

        // Sweep: integrated equation with the cached collision term.
        let coll_grid = fill_grid(&axes, n, |x, p| {
            integrate_backward_over_box(spec, x, p, &kernel.base_box, cfg.flow_step, |xs, ps| {
                q_interp.eval(xs, ps)
            })
        })?;
        let mut change: f64 = 0.0;
        let mut new_vals = vec![0.0; current.len()];
        for i in 0..current.len() {
            let v = u0_grid.values[i] + coll_grid.values[i];
            change = change.max((v - current[i]).abs());
            new_vals[i] = v;
        }
        current = new_vals;
        if let Some(&last) = changes.last() {
            if change > last {
                grow_streak += 1;
                if grow_streak >= 3 {
                    return Err(Error::NoContraction {
                        iterations,
                        last_change: change,
                    });
                }
            } else {
                grow_streak = 0;
            }
        }
        changes.push(change);
        if change < cfg.tol {
            break;
        }
    }

    let final_grid = RectGrid::from_values(axes.clone(), current);
    let solution_sup = final_grid.max_abs();
    let u = PhaseDensity::grid_cached(final_grid, n);

    // Residual of the integrated equation on a fresh random sample, with
    // the collision term evaluated live (not through the sweep cache).
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xda7a);
    let bb = u.grid().unwrap().bounding_box();
    let points: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.validation_points)
        .map(|_| {
            let x: Vec<f64> = (0..n)
                .map(|d| bb.lo[d] + (bb.hi[d] - bb.lo[d]) * rng.gen::<f64>())
                .collect();
            let p: Vec<f64> = (0..n)
                .map(|d| bb.lo[n + d] + (bb.hi[n + d] - bb.lo[n + d]) * rng.gen::<f64>())
                .collect();
            (x, p)
        })
        .collect();
    let residuals: Vec<f64> = points
        .par_iter()
        .map(|(x, p)| -> Result<f64> {
            let coll = integrate_backward_over_box(
                spec,
                x,
                p,
                &kernel.base_box,
                cfg.flow_step,
                |xs, ps| q_full(kernel, &rule, &u, &u, xs, ps),
            )?;
            let free = u0.eval(x, p)?;
            Ok((u.eval(x, p)? - free - coll).abs())
        })
        .collect::<Result<_>>()?;
    let residual_max = residuals.iter().fold(0.0f64, |m, v| m.max(*v));

    let contraction_ratios = changes
        .windows(2)
        .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
        .collect();
    let diag = SolveDiagnostics {
        iterations,
        changes,
        contraction_ratios,
        residual_max,
        source_sup,
        solution_sup,
        stability_constant: if source_sup > 0.0 {
            solution_sup / source_sup
        } else {
            0.0
        },
    };
    Ok((u, diag))
}

/// Axes of the collision-term cache: base axes clamped to the kernel's base
/// box (the collision term vanishes outside), momentum axes as configured.
fn collision_axes(
    x_axes: &[GridAxis],
    p_axes: &[GridAxis],
    kernel: &CollisionKernel,
) -> Vec<GridAxis> {
    let mut axes = Vec::with_capacity(x_axes.len() + p_axes.len());
    for (d, ax) in x_axes.iter().enumerate() {
        let lo = ax.lo.max(kernel.base_box.lo[d]);
        let hi = ax.hi.min(kernel.base_box.hi[d]);
        if lo < hi {
            axes.push(GridAxis::new(lo, hi, ax.count));
        } else {
            axes.push(ax.clone());
        }
    }
    axes.extend(p_axes.iter().cloned());
    axes
}

fn fill_grid<F>(axes: &[GridAxis], n: usize, f: F) -> Result<RectGrid>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let err = std::sync::Mutex::new(None);
    let grid = RectGrid::fill(axes.to_vec(), |point| match f(&point[..n], &point[n..]) {
        Ok(v) => v,
        Err(e) => {
            *err.lock().unwrap() = Some(e);
            0.0
        }
    });
    match err.into_inner().unwrap() {
        Some(e) => Err(e),
        None => Ok(grid),
    }
}

/// Quadrature strategy for the bilinear collision source of the second
/// linearization.
#[derive(Clone, Debug)]
pub enum SecondLinQuad {
    /// Fixed tensor rule over the kernel momentum box.
    Rule(SigmaQuadRule),
    /// Nodes tightened to the densities' momentum supports; for sources far
    /// narrower than the kernel windows.
    Concentrated { nodes: usize },
}

/// The bilinear collision source of the second linearization:
/// Q[v_f, v_h] + Q[v_h, v_f] with v = transported sources.
pub fn phi_second_source(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    quad: &SecondLinQuad,
    f: &PhaseDensity,
    h: &PhaseDensity,
    flow_step: f64,
) -> Result<PhaseDensity> {
    let v_f = vlasov_solve(spec, f, flow_step)?;
    let v_h = vlasov_solve(spec, h, flow_step)?;
    Ok(second_lin_source_of(kernel, quad, v_f, v_h))
}

/// Source built from already-computed transported beams.
pub fn second_lin_source_of(
    kernel: &CollisionKernel,
    quad: &SecondLinQuad,
    v_f: PhaseDensity,
    v_h: PhaseDensity,
) -> PhaseDensity {
    let kernel = kernel.clone();
    let quad = quad.clone();
    let base = kernel.base_box.clone();
    PhaseDensity::analytic(
        move |x, p| {
            let value = match &quad {
                SecondLinQuad::Rule(rule) => q_full(&kernel, rule, &v_f, &v_h, x, p)
                    .and_then(|a| Ok(a + q_full(&kernel, rule, &v_h, &v_f, x, p)?)),
                SecondLinQuad::Concentrated { nodes } => {
                    q_full_concentrated(&kernel, *nodes, &v_f, &v_h, x, p).and_then(|a| {
                        Ok(a + q_full_concentrated(&kernel, *nodes, &v_h, &v_f, x, p)?)
                    })
                }
            };
            value.unwrap_or(f64::NAN)
        },
        Support {
            base: Some(base),
            momentum: None,
        },
        false,
    )
}

/// Direct second linearization: transport of the bilinear collision source.
pub fn phi_second_direct(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    quad: &SecondLinQuad,
    f: &PhaseDensity,
    h: &PhaseDensity,
    flow_step: f64,
) -> Result<PhaseDensity> {
    let source = phi_second_source(spec, kernel, quad, f, h, flow_step)?;
    vlasov_solve(spec, &source, flow_step)
}

/// Second linearization by the mixed second difference of the nonlinear
/// solver at amplitude `epsilon`:
/// (Phi(eps f + eps h) - Phi(eps f) - Phi(eps h)) / eps^2.
pub fn phi_second_polarization(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    f: &PhaseDensity,
    h: &PhaseDensity,
    epsilon: f64,
    cfg: &SolveConfig,
) -> Result<PhaseDensity> {
    let f_sup = estimate_sup(f, spec, cfg.seed ^ 1, 2000)?;
    let h_sup = estimate_sup(h, spec, cfg.seed ^ 2, 2000)?;
    if let Some(max_norm) = cfg.max_source_norm {
        if epsilon * (f_sup + h_sup) > max_norm {
            return Err(Error::NoContraction {
                iterations: 0,
                last_change: epsilon * (f_sup + h_sup),
            });
        }
    }
    let combined = PhaseDensity::sum(vec![f.clone(), h.clone()]).scale(epsilon);
    let (u_both, _) = boltzmann_solve(spec, kernel, &combined, cfg)?;
    let (u_f, _) = boltzmann_solve(spec, kernel, &f.clone().scale(epsilon), cfg)?;
    let (u_h, _) = boltzmann_solve(spec, kernel, &h.clone().scale(epsilon), cfg)?;
    let inv = 1.0 / (epsilon * epsilon);
    Ok(PhaseDensity::sum(vec![
        u_both.scale(inv),
        u_f.scale(-inv),
        u_h.scale(-inv),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collision::{BuiltinKernelParams, MomentumBump};
    use crate::grid::CoordBox;
    use crate::quad::plateau;

    fn chart(n: usize) -> CoordBox {
        CoordBox::cube_around(&vec![0.0; n], 20.0)
    }

    fn small_kernel(spec: &MetricSpec) -> CollisionKernel {
        let window = CoordBox::cube_around(&vec![0.6, 0.0, 0.0], 0.5);
        let params = BuiltinKernelParams {
            r0: 0.4,
            r1: 1.6,
            pad: 0.3,
            reference_spatial_dir: vec![1.0, 0.0],
            bump_q: MomentumBump {
                center: vec![1.3, -0.1, 0.0],
                radius: 0.8,
            },
            bump_p_out: MomentumBump {
                center: vec![1.3, 0.2, 0.1],
                radius: 0.8,
            },
            radius_q_out: 0.8,
        };
        CollisionKernel::builtin(spec, &window, &params).unwrap()
    }

    fn bump_source(amplitude: f64) -> PhaseDensity {
        let base = CoordBox::cube_around(&vec![0.15, 0.0, 0.0], 0.35);
        let momentum = CoordBox::cube_around(&vec![1.3, 0.0, 0.0], 0.8);
        let b2 = base.clone();
        let m2 = momentum.clone();
        PhaseDensity::analytic(
            move |x, p| {
                let mut acc = amplitude;
                for d in 0..3 {
                    let cx = 0.5 * (b2.lo[d] + b2.hi[d]);
                    let half = 0.5 * (b2.hi[d] - b2.lo[d]);
                    acc *= plateau((x[d] - cx).abs() / half);
                    if acc == 0.0 {
                        return 0.0;
                    }
                    let cp = 0.5 * (m2.lo[d] + m2.hi[d]);
                    let halfp = 0.5 * (m2.hi[d] - m2.lo[d]);
                    acc *= plateau((p[d] - cp).abs() / halfp);
                    if acc == 0.0 {
                        return 0.0;
                    }
                }
                acc
            },
            Support {
                base: Some(base),
                momentum: Some(momentum),
            },
            amplitude >= 0.0,
        )
    }

    fn small_config() -> SolveConfig {
        SolveConfig {
            x_axes: vec![
                GridAxis::new(-0.3, 1.6, 6),
                GridAxis::new(-1.2, 1.2, 6),
                GridAxis::new(-1.2, 1.2, 6),
            ],
            p_axes: vec![
                GridAxis::new(0.2, 2.4, 6),
                GridAxis::new(-1.1, 1.1, 6),
                GridAxis::new(-1.1, 1.1, 6),
            ],
            tol: 1e-7,
            max_iter: 25,
            max_source_norm: None,
            sigma_nodes: 3,
            flow_step: 0.05,
            validation_points: 40,
            seed: 42,
        }
    }

    #[test]
    fn zero_source_converges_immediately() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let cfg = small_config();
        let f = bump_source(0.0);
        let (u, diag) = boltzmann_solve(&spec, &kernel, &f, &cfg).unwrap();
        assert_eq!(diag.iterations, 1);
        assert_eq!(u.grid().unwrap().max_abs(), 0.0);
    }

    #[test]
    fn solver_converges_geometrically_for_small_data() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let cfg = small_config();
        let f = bump_source(0.05);
        let (u, diag) = boltzmann_solve(&spec, &kernel, &f, &cfg).unwrap();
        assert!(diag.iterations >= 2);
        for r in diag.contraction_ratios.iter().skip(1) {
            assert!(*r < 1.0, "ratios {:?}", diag.contraction_ratios);
        }
        assert!(
            diag.residual_max < 10.0 * cfg.tol,
            "residual {}",
            diag.residual_max
        );
        assert!(diag.stability_constant > 0.0);
        assert!(u.grid().unwrap().max_abs() > 0.0);
    }

    #[test]
    fn solution_vanishes_below_the_slice() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let mut cfg = small_config();
        cfg.x_axes[0] = GridAxis::new(-0.5, 1.6, 7);
        let f = bump_source(0.05);
        let (u, _) = boltzmann_solve(&spec, &kernel, &f, &cfg).unwrap();
        for k in 0..20 {
            let x = [-0.45, -1.0 + 0.1 * k as f64, 0.3];
            let p = [1.3, 0.1, -0.1];
            assert_eq!(u.eval(&x, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn first_linearization_error_is_second_order() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let cfg = small_config();
        let f = bump_source(1.0);
        let v0 = vlasov_solve(&spec, &f, cfg.flow_step).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = Vec::new();
        for _ in 0..60 {
            let x: Vec<f64> = (0..3)
                .map(|d| {
                    cfg.x_axes[d].lo + (cfg.x_axes[d].hi - cfg.x_axes[d].lo) * rng.gen::<f64>()
                })
                .collect();
            let p: Vec<f64> = (0..3)
                .map(|d| {
                    cfg.p_axes[d].lo + (cfg.p_axes[d].hi - cfg.p_axes[d].lo) * rng.gen::<f64>()
                })
                .collect();
            pts.push((x, p));
        }
        let mut errs = Vec::new();
        for eps in [2e-2, 1e-2, 5e-3] {
            let (u, _) = boltzmann_solve(&spec, &kernel, &f.clone().scale(eps), &cfg).unwrap();
            let mut sup: f64 = 0.0;
            for (x, p) in &pts {
                let diff = u.eval(x, p).unwrap() - eps * v0.eval(x, p).unwrap();
                sup = sup.max(diff.abs());
            }
            errs.push(sup);
        }
        let slope = (errs[0] / errs[2]).ln() / 4.0f64.ln();
        assert!((slope - 2.0).abs() < 0.2, "slope {slope}, errors {errs:?}");
    }

    #[test]
    fn second_linearization_direct_is_symmetric() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let quad = SecondLinQuad::Rule(SigmaQuadRule::for_kernel(&kernel, 3));
        let f = bump_source(0.4);
        let h = bump_source(0.7);
        let w_fh = phi_second_direct(&spec, &kernel, &quad, &f, &h, 0.05).unwrap();
        let w_hf = phi_second_direct(&spec, &kernel, &quad, &h, &f, 0.05).unwrap();
        let x = [1.1, 0.2, -0.1];
        let p = [1.4, 0.2, 0.0];
        let a = w_fh.eval(&x, &p).unwrap();
        let b = w_hf.eval(&x, &p).unwrap();
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");

        // Zero first argument kills the bilinear source.
        let w0 = phi_second_direct(&spec, &kernel, &quad, &f.clone().scale(0.0), &h, 0.05).unwrap();
        assert_eq!(w0.eval(&x, &p).unwrap(), 0.0);

        // Zero kernel kills it too.
        let zero_kernel = CollisionKernel::zero(3);
        let quad0 = SecondLinQuad::Rule(SigmaQuadRule::for_kernel(&zero_kernel, 3));
        let wz = phi_second_direct(&spec, &zero_kernel, &quad0, &f, &h, 0.05).unwrap();
        assert_eq!(wz.eval(&x, &p).unwrap(), 0.0);
    }

    #[test]
    fn polarization_approaches_direct_second_derivative() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = small_kernel(&spec);
        let mut cfg = small_config();
        cfg.tol = 1e-10;
        let f = bump_source(1.0);
        let h = bump_source(0.8);
        let quad = SecondLinQuad::Rule(SigmaQuadRule::for_kernel(&kernel, 3));
        let direct = phi_second_direct(&spec, &kernel, &quad, &f, &h, cfg.flow_step).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut pts = Vec::new();
        for _ in 0..15 {
            let x: Vec<f64> = (0..3)
                .map(|d| {
                    cfg.x_axes[d].lo + (cfg.x_axes[d].hi - cfg.x_axes[d].lo) * rng.gen::<f64>()
                })
                .collect();
            let p: Vec<f64> = (0..3)
                .map(|d| {
                    cfg.p_axes[d].lo + (cfg.p_axes[d].hi - cfg.p_axes[d].lo) * rng.gen::<f64>()
                })
                .collect();
            pts.push((x, p));
        }
        let direct_vals: Vec<f64> = pts
            .iter()
            .map(|(x, p)| direct.eval(x, p).unwrap())
            .collect();

        let mut sups = Vec::new();
        let mut sign = 0.0;
        for eps in [2e-2, 1e-2, 5e-3] {
            let pol = phi_second_polarization(&spec, &kernel, &f, &h, eps, &cfg).unwrap();
            let pol_vals: Vec<f64> = pts.iter().map(|(x, p)| pol.eval(x, p).unwrap()).collect();
            if sign == 0.0 {
                let corr: f64 = pol_vals
                    .iter()
                    .zip(direct_vals.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                sign = corr.signum();
            }
            let sup = pol_vals
                .iter()
                .zip(direct_vals.iter())
                .map(|(a, b)| (a - sign * b).abs())
                .fold(0.0f64, f64::max);
            sups.push(sup);
        }
        assert_eq!(sign, 1.0, "global sign between polarization and direct");
        let slope = (sups[0] / sups[2]).ln() / 4.0f64.ln();
        assert!(slope >= 0.8, "slope {slope}, sups {sups:?}");
    }
}
