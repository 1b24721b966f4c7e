//! Phase-space densities, mollified delta sources on initial submanifolds,
//! and the transport solution operator that integrates a source along the
//! backward geodesic flow.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geodesics::{Flow, FlowState};
use crate::grid::{CoordBox, RectGrid};
use crate::quad::{gauss_legendre, mollifier, plateau};
use crate::spacetime::MetricSpec;

/// Default backward-flow integration step.
pub const DEFAULT_FLOW_STEP: f64 = 2e-2;

/// Gauss-Legendre nodes per flow step, fixed so derived oracle values are
/// reproducible.
pub const FLOW_QUAD_NODES: usize = 8;

/// Initial data on a Cauchy slice: a single timelike phase point, or an
/// (n-2)-parameter family of initial vectors around one.
#[derive(Clone, Debug)]
pub enum PatchShape {
    Point {
        x: Vec<f64>,
        p: Vec<f64>,
    },
    Patch {
        center_x: Vec<f64>,
        center_p: Vec<f64>,
        /// Orthonormal (Euclidean) momentum directions, n-2 of them.
        frame: Vec<Vec<f64>>,
        /// Half-width of the parameter box; the cutoff vanishes at the rim.
        extent: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SourcePatch {
    pub shape: PatchShape,
    /// Mollification width.
    pub epsilon: f64,
    /// Coordinate time of the Cauchy slice carrying the patch.
    pub cauchy_time: f64,
}

impl SourcePatch {
    pub fn point(x: Vec<f64>, p: Vec<f64>, epsilon: f64, cauchy_time: f64) -> Self {
        SourcePatch {
            shape: PatchShape::Point { x, p },
            epsilon,
            cauchy_time,
        }
    }

    pub fn patch(
        center_x: Vec<f64>,
        center_p: Vec<f64>,
        frame: Vec<Vec<f64>>,
        extent: f64,
        epsilon: f64,
        cauchy_time: f64,
    ) -> Self {
        SourcePatch {
            shape: PatchShape::Patch {
                center_x,
                center_p,
                frame,
                extent,
            },
            epsilon,
            cauchy_time,
        }
    }

    pub fn base_point(&self) -> &[f64] {
        match &self.shape {
            PatchShape::Point { x, .. } => x,
            PatchShape::Patch { center_x, .. } => center_x,
        }
    }

    pub fn center_momentum(&self) -> &[f64] {
        match &self.shape {
            PatchShape::Point { p, .. } => p,
            PatchShape::Patch { center_p, .. } => center_p,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.shape {
            PatchShape::Point { x, .. } => {
                if (x[0] - self.cauchy_time).abs() > 1e-12 {
                    return Err(Error::DegenerateInput(
                        "point source must sit on the Cauchy slice".into(),
                    ));
                }
            }
            PatchShape::Patch {
                center_x, extent, ..
            } => {
                if self.epsilon >= *extent {
                    return Err(Error::Mollification {
                        epsilon: self.epsilon,
                        extent: *extent,
                    });
                }
                if (center_x[0] - self.cauchy_time).abs() > 1e-12 {
                    return Err(Error::DegenerateInput(
                        "patch must sit on the Cauchy slice".into(),
                    ));
                }
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::DegenerateInput(
                "mollification width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Support information carried by every density: evaluation outside a
/// declared box is exactly zero.
#[derive(Clone, Debug, Default)]
pub struct Support {
    pub base: Option<CoordBox>,
    pub momentum: Option<CoordBox>,
}

impl Support {
    pub fn contains(&self, x: &[f64], p: &[f64]) -> bool {
        self.base.as_ref().map_or(true, |b| b.contains(x))
            && self.momentum.as_ref().map_or(true, |b| b.contains(p))
    }
}

type AnalyticFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;

enum Repr {
    Zero,
    Analytic(Arc<AnalyticFn>),
    Mollified(MollifiedSource),
    Transported(Box<Transported>),
    GridCached(Arc<RectGrid>),
    Scaled(f64, Box<PhaseDensity>),
    Sum(Vec<PhaseDensity>),
}

impl fmt::Debug for Repr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Repr::Zero => "Zero",
            Repr::Analytic(_) => "Analytic",
            Repr::Mollified(_) => "Mollified",
            Repr::Transported(_) => "Transported",
            Repr::GridCached(_) => "GridCached",
            Repr::Scaled(..) => "Scaled",
            Repr::Sum(_) => "Sum",
        };
        write!(f, "{name}")
    }
}

impl Clone for Repr {
    fn clone(&self) -> Self {
        match self {
            Repr::Zero => Repr::Zero,
            Repr::Analytic(f) => Repr::Analytic(f.clone()),
            Repr::Mollified(m) => Repr::Mollified(m.clone()),
            Repr::Transported(t) => Repr::Transported(t.clone()),
            Repr::GridCached(g) => Repr::GridCached(g.clone()),
            Repr::Scaled(a, d) => Repr::Scaled(*a, d.clone()),
            Repr::Sum(parts) => Repr::Sum(parts.clone()),
        }
    }
}

/// Evaluable scalar field on the phase bundle.
#[derive(Clone, Debug)]
pub struct PhaseDensity {
    pub support: Support,
    pub nonneg: bool,
    repr: Repr,
}

impl PhaseDensity {
    pub fn zero() -> Self {
        PhaseDensity {
            support: Support::default(),
            nonneg: true,
            repr: Repr::Zero,
        }
    }

    pub fn analytic<F>(f: F, support: Support, nonneg: bool) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        PhaseDensity {
            support,
            nonneg,
            repr: Repr::Analytic(Arc::new(f)),
        }
    }

    /// Density over a phase grid (x axes first, then p axes); zero outside.
    pub fn grid_cached(grid: RectGrid, n: usize) -> Self {
        assert_eq!(grid.axes.len(), 2 * n);
        let bb = grid.bounding_box();
        let support = Support {
            base: Some(CoordBox::new(bb.lo[..n].to_vec(), bb.hi[..n].to_vec())),
            momentum: Some(CoordBox::new(bb.lo[n..].to_vec(), bb.hi[n..].to_vec())),
        };
        PhaseDensity {
            support,
            nonneg: false,
            repr: Repr::GridCached(Arc::new(grid)),
        }
    }

    pub fn scale(self, a: f64) -> Self {
        PhaseDensity {
            support: self.support.clone(),
            nonneg: self.nonneg && a >= 0.0,
            repr: Repr::Scaled(a, Box::new(self)),
        }
    }

    pub fn sum(parts: Vec<PhaseDensity>) -> Self {
        let mut base: Option<CoordBox> = None;
        let mut momentum: Option<CoordBox> = None;
        let mut all_boxed = true;
        for part in &parts {
            match &part.support.base {
                Some(b) => base = Some(base.map_or(b.clone(), |acc| acc.hull(b))),
                None => all_boxed = false,
            }
            match &part.support.momentum {
                Some(b) => momentum = Some(momentum.map_or(b.clone(), |acc| acc.hull(b))),
                None => {}
            }
        }
        let support = Support {
            base: if all_boxed { base } else { None },
            momentum: if parts.iter().all(|p| p.support.momentum.is_some()) {
                momentum
            } else {
                None
            },
        };
        let nonneg = parts.iter().all(|p| p.nonneg);
        PhaseDensity {
            support,
            nonneg,
            repr: Repr::Sum(parts),
        }
    }

    pub fn eval(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        if !self.support.contains(x, p) {
            return Ok(0.0);
        }
        match &self.repr {
            Repr::Zero => Ok(0.0),
            Repr::Analytic(f) => Ok(f(x, p)),
            Repr::Mollified(m) => Ok(m.eval(x, p)),
            Repr::Transported(t) => t.eval(x, p),
            Repr::GridCached(grid) => {
                let mut point = Vec::with_capacity(x.len() + p.len());
                point.extend_from_slice(x);
                point.extend_from_slice(p);
                Ok(grid.interp(&point))
            }
            Repr::Scaled(a, inner) => Ok(a * inner.eval(x, p)?),
            Repr::Sum(parts) => {
                let mut acc = 0.0;
                for part in parts {
                    acc += part.eval(x, p)?;
                }
                Ok(acc)
            }
        }
    }

    pub fn grid(&self) -> Option<&RectGrid> {
        match &self.repr {
            Repr::GridCached(g) => Some(g),
            _ => None,
        }
    }
}

/// Smooth approximation of the (cut off) delta distribution of a source
/// patch: a tensor-product bump of width epsilon transverse to the patch,
/// times the smooth radial cutoff over the patch parameters.
#[derive(Clone, Debug)]
struct MollifiedSource {
    patch: SourcePatch,
    /// Orthonormal completion of the patch frame inside momentum space.
    transverse: Vec<Vec<f64>>,
}

impl MollifiedSource {
    fn eval(&self, x: &[f64], p: &[f64]) -> f64 {
        let eps = self.patch.epsilon;
        match &self.patch.shape {
            PatchShape::Point { x: cx, p: cp } => {
                let mut acc = 1.0;
                for (xi, ci) in x.iter().zip(cx.iter()) {
                    acc *= mollifier(xi - ci, eps);
                    if acc == 0.0 {
                        return 0.0;
                    }
                }
                for (pi, ci) in p.iter().zip(cp.iter()) {
                    acc *= mollifier(pi - ci, eps);
                    if acc == 0.0 {
                        return 0.0;
                    }
                }
                acc
            }
            PatchShape::Patch {
                center_x,
                center_p,
                frame,
                extent,
            } => {
                let mut acc = 1.0;
                for (xi, ci) in x.iter().zip(center_x.iter()) {
                    acc *= mollifier(xi - ci, eps);
                    if acc == 0.0 {
                        return 0.0;
                    }
                }
                let dp: Vec<f64> = p.iter().zip(center_p.iter()).map(|(a, b)| a - b).collect();
                let mut sigma_sq = 0.0;
                for dir in frame {
                    let s: f64 = dir.iter().zip(dp.iter()).map(|(a, b)| a * b).sum();
                    sigma_sq += s * s;
                }
                acc *= plateau(sigma_sq.sqrt() / extent);
                if acc == 0.0 {
                    return 0.0;
                }
                for dir in &self.transverse {
                    let w: f64 = dir.iter().zip(dp.iter()).map(|(a, b)| a * b).sum();
                    acc *= mollifier(w, eps);
                    if acc == 0.0 {
                        return 0.0;
                    }
                }
                acc
            }
        }
    }
}

/// Build the smooth nonnegative density approximating the patch delta.
pub fn mollified_delta_source(patch: &SourcePatch) -> Result<PhaseDensity> {
    patch.validate()?;
    let eps = patch.epsilon;
    let (base, momentum, transverse) = match &patch.shape {
        PatchShape::Point { x, p } => (
            CoordBox::cube_around(x, eps),
            CoordBox::cube_around(p, eps),
            Vec::new(),
        ),
        PatchShape::Patch {
            center_x,
            center_p,
            frame,
            extent,
        } => {
            let n = center_p.len();
            let transverse = orthonormal_completion(frame, n);
            // Per-coordinate momentum bound: patch spread plus mollification.
            let lo: Vec<f64> = (0..n)
                .map(|i| {
                    let spread: f64 = frame.iter().map(|d| d[i].abs()).sum::<f64>() * extent;
                    center_p[i] - spread - eps
                })
                .collect();
            let hi: Vec<f64> = (0..n)
                .map(|i| {
                    let spread: f64 = frame.iter().map(|d| d[i].abs()).sum::<f64>() * extent;
                    center_p[i] + spread + eps
                })
                .collect();
            (
                CoordBox::cube_around(center_x, eps),
                CoordBox::new(lo, hi),
                transverse,
            )
        }
    };
    Ok(PhaseDensity {
        support: Support {
            base: Some(base),
            momentum: Some(momentum),
        },
        nonneg: true,
        repr: Repr::Mollified(MollifiedSource {
            patch: patch.clone(),
            transverse,
        }),
    })
}

/// Orthonormal (Euclidean) basis of the orthogonal complement of `frame`.
fn orthonormal_completion(frame: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = frame.to_vec();
    let mut out = Vec::new();
    for i in 0..n {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        for b in &basis {
            let proj: f64 = b.iter().zip(v.iter()).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b.iter()) {
                *vi -= proj * bi;
            }
        }
        let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-10 {
            let unit: Vec<f64> = v.iter().map(|a| a / norm).collect();
            basis.push(unit.clone());
            out.push(unit);
        }
    }
    out
}

/// The transport solution: source integrated along the backward flow.
#[derive(Clone, Debug)]
struct Transported {
    spec: MetricSpec,
    source: PhaseDensity,
    step: f64,
}

impl Transported {
    fn eval(&self, x: &[f64], p: &[f64]) -> Result<f64> {
        let k = self
            .source
            .support
            .base
            .as_ref()
            .expect("transported source carries a base box");
        integrate_backward_over_box(&self.spec, x, p, k, self.step, |xs, ps| {
            self.source.eval(xs, ps)
        })
    }
}

/// Solution operator of the transport Cauchy problem with vanishing data in
/// the past: evaluation integrates the source along the backward flow over
/// the parameter range where the base point stays inside the source's
/// support box, by eight-point Gauss-Legendre on RK4 steps.
pub fn vlasov_solve(spec: &MetricSpec, f: &PhaseDensity, step: f64) -> Result<PhaseDensity> {
    if f.support.base.is_none() {
        return Err(Error::DegenerateInput(
            "transport source needs a compact base support box".into(),
        ));
    }
    Ok(PhaseDensity {
        support: Support::default(),
        nonneg: f.nonneg,
        repr: Repr::Transported(Box::new(Transported {
            spec: spec.clone(),
            source: f.clone(),
            step,
        })),
    })
}

/// Integrate `integrand` along the backward flow from (x, p) over every
/// parameter stretch whose base point lies in `k`. Backward parameters are
/// measured positively; the result is the integral over s in [-l, 0] of the
/// integrand at the flow state.
pub fn integrate_backward_over_box<F>(
    spec: &MetricSpec,
    x: &[f64],
    p: &[f64],
    k: &CoordBox,
    step: f64,
    integrand: F,
) -> Result<f64>
where
    F: Fn(&[f64], &[f64]) -> Result<f64>,
{
    let flow = Flow::new(spec);
    let brackets = backward_box_brackets(spec, &flow, x, p, k, step)?;
    let (nodes, weights) = gauss_legendre(FLOW_QUAD_NODES);
    let mut total = 0.0;
    for bracket in &brackets {
        // March from the bracket start (smaller backward parameter) to the
        // end in RK4 steps, applying the quadrature rule inside each step.
        let mut s = bracket.s_start;
        let mut state = bracket.state_at_start.clone();
        while s < bracket.s_end - 1e-15 {
            let dt = step.min(bracket.s_end - s);
            let mid = 0.5 * dt;
            for (node, w) in nodes.iter().zip(weights.iter()) {
                let offset = mid + mid * node;
                let (st, _) = flow.state_at(&state.x, &state.p, -offset, step)?;
                total += w * mid * integrand(&st.x, &st.p)?;
            }
            let (xn, pn) = flow.rk4_step(&state.x, &state.p, -dt)?;
            state = FlowState {
                s: 0.0,
                x: xn,
                p: pn,
            };
            s += dt;
        }
    }
    Ok(total)
}

struct BoxBracket {
    /// Backward parameter of the bracket start (closer to the evaluation point).
    s_start: f64,
    s_end: f64,
    state_at_start: FlowState,
}

/// Locate the backward-parameter intervals on which the base point lies in
/// `k`, scanning with a step adapted to the box and refining interval edges
/// by bisection. Future-directed momenta allow skipping ahead while the
/// base time is above the box.
fn backward_box_brackets(
    spec: &MetricSpec,
    flow: &Flow,
    x: &[f64],
    p: &[f64],
    k: &CoordBox,
    step: f64,
) -> Result<Vec<BoxBracket>> {
    let p_norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
    if p_norm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let min_edge = k
        .lo
        .iter()
        .zip(k.hi.iter())
        .map(|(a, b)| b - a)
        .fold(f64::INFINITY, f64::min);
    let scan = (0.4 * min_edge / p_norm).max(1e-12).min(step.max(1e-12) * 16.0);
    let time_monotone = p[0] > 0.0;

    let mut cur = FlowState {
        s: 0.0,
        x: x.to_vec(),
        p: p.to_vec(),
    };
    let mut brackets: Vec<BoxBracket> = Vec::new();
    let mut open: Option<(f64, FlowState)> = None;
    if k.contains(&cur.x) {
        open = Some((0.0, cur.clone()));
    }
    let s_cap = {
        let diam: f64 = spec
            .chart_box
            .lo
            .iter()
            .zip(spec.chart_box.hi.iter())
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        4.0 * diam / p_norm
    };
    let max_iters = 4_000_000usize;
    for _ in 0..max_iters {
        // Fast-forward while strictly above the box in time.
        let mut ds = scan;
        if time_monotone && cur.p[0] > 0.0 {
            let gap = cur.x[0] - k.hi[0];
            if gap > 0.0 {
                ds = (0.9 * gap / cur.p[0]).max(scan);
            } else if cur.x[0] < k.lo[0] {
                // Below the box and moving further down: done.
                break;
            }
        }
        let (xn, pn) = flow.rk4_step(&cur.x, &cur.p, -ds)?;
        if !spec.in_chart(&xn) {
            if open.is_some() {
                return Err(Error::ChartExit {
                    partial_bound: cur.s,
                });
            }
            break;
        }
        let next = FlowState {
            s: cur.s + ds,
            x: xn,
            p: pn,
        };
        let was_in = k.contains(&cur.x);
        let is_in = k.contains(&next.x);
        match (was_in, is_in) {
            (false, true) => {
                // Refine the entry edge between cur (outside) and next (inside).
                let s_entry = refine_edge(flow, &cur, ds, k, false)?;
                let (st, _) = flow.state_at(&cur.x, &cur.p, -(s_entry - cur.s), scan)?;
                open = Some((
                    s_entry,
                    FlowState {
                        s: 0.0,
                        x: st.x,
                        p: st.p,
                    },
                ));
            }
            (true, false) => {
                let s_exit = refine_edge(flow, &cur, ds, k, true)?;
                let (start_s, start_state) = open.take().expect("bracket was open");
                brackets.push(BoxBracket {
                    s_start: start_s,
                    s_end: s_exit,
                    state_at_start: start_state,
                });
            }
            _ => {}
        }
        cur = next;
        if cur.s > s_cap {
            break;
        }
    }
    if let Some((start_s, start_state)) = open.take() {
        // Scan ended while inside the box (cap reached); close at the cap.
        brackets.push(BoxBracket {
            s_start: start_s,
            s_end: cur.s,
            state_at_start: start_state,
        });
    }
    Ok(brackets)
}

/// Bisect the box-membership transition inside (cur.s, cur.s + ds): when
/// `from_inside`, cur is inside and the crossing leaves the box.
fn refine_edge(
    flow: &Flow,
    cur: &FlowState,
    ds: f64,
    k: &CoordBox,
    from_inside: bool,
) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = ds;
    for _ in 0..60 {
        if hi - lo < 1e-9 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let (st, _) = flow.state_at(&cur.x, &cur.p, -mid, ds)?;
        let inside = k.contains(&st.x);
        if inside == from_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(cur.s + 0.5 * (lo + hi))
}

/// Sample a density onto a phase grid (x axes first, then p axes). The
/// cached copy evaluates by multilinear interpolation and is exactly zero
/// outside the grid box.
pub fn cache_density(
    dens: &PhaseDensity,
    x_axes: Vec<crate::grid::GridAxis>,
    p_axes: Vec<crate::grid::GridAxis>,
) -> Result<PhaseDensity> {
    let n = x_axes.len();
    assert_eq!(p_axes.len(), n);
    let mut axes = x_axes;
    axes.extend(p_axes);
    let err = std::sync::Mutex::new(None);
    let grid = RectGrid::fill(axes, |point| match dens.eval(&point[..n], &point[n..]) {
        Ok(v) => v,
        Err(e) => {
            *err.lock().unwrap() = Some(e);
            0.0
        }
    });
    if let Some(e) = err.into_inner().unwrap() {
        return Err(e);
    }
    Ok(PhaseDensity::grid_cached(grid, n))
}

/// Central difference of `u` along the geodesic flow at (x, p) with
/// parameter step `h_fd`, minus `f` there: the pointwise transport residual.
pub fn flow_derivative_residual(
    spec: &MetricSpec,
    u: &PhaseDensity,
    f: &PhaseDensity,
    x: &[f64],
    p: &[f64],
    h_fd: f64,
) -> Result<f64> {
    let flow = Flow::new(spec);
    let int_step = (h_fd / 8.0).min(DEFAULT_FLOW_STEP);
    let (fwd, _) = flow.state_at(x, p, h_fd, int_step)?;
    let (bwd, _) = flow.state_at(x, p, -h_fd, int_step)?;
    let du = (u.eval(&fwd.x, &fwd.p)? - u.eval(&bwd.x, &bwd.p)?) / (2.0 * h_fd);
    Ok(du - f.eval(x, p)?)
}
