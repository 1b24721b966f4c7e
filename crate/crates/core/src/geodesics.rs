//! Geodesic flow integration on the chart, exit times from compact
//! coordinate boxes, null-geodesic shooting against worldlines, and
//! flowouts of initial submanifolds with a numeric transversality check.
//!
//! All integration is fixed-step classical RK4 on the first-order system
//! dx/ds = p, dp/ds = -Gamma(x) p p; paths that leave the chart box
//! terminate with a flag.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::CoordBox;
use crate::kinetic::{PatchShape, SourcePatch};
use crate::spacetime::{Christoffel, MetricKind, MetricSpec};

/// Default RK4 step.
pub const DEFAULT_STEP: f64 = 1e-3;

/// Default lower bound on the flowout transversality singular value.
pub const TRANSVERSALITY_THRESHOLD: f64 = 1e-4;

/// Resolution of bracketing bisections (exit times, connection parameters).
const BISECT_TOL: f64 = 1e-9;

/// Direction-grid size per angular dimension for null shooting.
const SHOOT_GRID: usize = 64;

/// Number of local refinement rounds for null shooting.
const SHOOT_REFINEMENTS: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub s: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// Acceleration -Gamma^a_{lm} p^l p^m, specialised per metric family so the
/// hot loop stays allocation-free for the shipped backgrounds.
enum Accel {
    Zero,
    Constant(Christoffel),
    Warped { a0: f64, a1: f64 },
    General,
}

/// Fixed-step geodesic integrator on a metric chart.
pub struct Flow<'a> {
    pub spec: &'a MetricSpec,
    accel: Accel,
}

impl<'a> Flow<'a> {
    pub fn new(spec: &'a MetricSpec) -> Self {
        let accel = match &spec.kind {
            MetricKind::Minkowski => Accel::Zero,
            MetricKind::ConformalMinkowski { phi } => {
                if phi.gradient.iter().all(|g| *g == 0.0) {
                    Accel::Zero
                } else {
                    let gamma = spec
                        .christoffel(&spec.chart_box.center())
                        .expect("affine conformal factor has constant symbols");
                    Accel::Constant(gamma)
                }
            }
            MetricKind::DiagonalWarped { a0, a1 } => Accel::Warped { a0: *a0, a1: *a1 },
            MetricKind::CustomAnalytic(_) => Accel::General,
        };
        Flow { spec, accel }
    }

    fn accel_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.accel {
            Accel::Zero => out.fill(0.0),
            Accel::Constant(gamma) => {
                gamma.contract(p, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
            Accel::Warped { a0, a1 } => {
                let a = a0 + a1 * x[0];
                let spatial_sq: f64 = p[1..].iter().map(|v| v * v).sum();
                out[0] = -a * a1 * spatial_sq;
                let rate = a1 / a;
                for i in 1..p.len() {
                    out[i] = -2.0 * rate * p[0] * p[i];
                }
            }
            Accel::General => {
                let gamma = self.spec.christoffel(x)?;
                gamma.contract(p, out);
                for v in out.iter_mut() {
                    *v = -*v;
                }
            }
        }
        Ok(())
    }

    /// One RK4 step of size `h` (sign of `h` sets the direction).
    pub fn rk4_step(&self, x: &[f64], p: &[f64], h: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = x.len();
        let mut k = vec![0.0; n];

        // k1
        let k1x = p.to_vec();
        self.accel_into(x, p, &mut k)?;
        let k1p = k.clone();

        // k2
        let x2: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1x[i]).collect();
        let p2: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * k1p[i]).collect();
        let k2x = p2.clone();
        self.accel_into(&x2, &p2, &mut k)?;
        let k2p = k.clone();

        // k3
        let x3: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2x[i]).collect();
        let p3: Vec<f64> = (0..n).map(|i| p[i] + 0.5 * h * k2p[i]).collect();
        let k3x = p3.clone();
        self.accel_into(&x3, &p3, &mut k)?;
        let k3p = k.clone();

        // k4
        let x4: Vec<f64> = (0..n).map(|i| x[i] + h * k3x[i]).collect();
        let p4: Vec<f64> = (0..n).map(|i| p[i] + h * k3p[i]).collect();
        let k4x = p4.clone();
        self.accel_into(&x4, &p4, &mut k)?;
        let k4p = k;

        let sixth = h / 6.0;
        let xn: Vec<f64> = (0..n)
            .map(|i| x[i] + sixth * (k1x[i] + 2.0 * k2x[i] + 2.0 * k3x[i] + k4x[i]))
            .collect();
        let pn: Vec<f64> = (0..n)
            .map(|i| p[i] + sixth * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + k4p[i]))
            .collect();
        if xn.iter().chain(pn.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Integration);
        }
        Ok((xn, pn))
    }

    /// State at parameter `t` (either sign), stopping at the chart boundary.
    /// Returns the reached state and whether the chart was exited early.
    pub fn state_at(&self, x: &[f64], p: &[f64], t: f64, h: f64) -> Result<(FlowState, bool)> {
        let mut cur = FlowState {
            s: 0.0,
            x: x.to_vec(),
            p: p.to_vec(),
        };
        if t == 0.0 {
            return Ok((cur, false));
        }
        let dir = t.signum();
        let h = h.abs();
        loop {
            let remaining = (t - cur.s).abs();
            if remaining < 1e-15 {
                return Ok((cur, false));
            }
            let step = dir * h.min(remaining);
            let (xn, pn) = self.rk4_step(&cur.x, &cur.p, step)?;
            if !self.spec.in_chart(&xn) {
                return Ok((cur, true));
            }
            cur = FlowState {
                s: cur.s + step,
                x: xn,
                p: pn,
            };
        }
    }
}

#[derive(Clone, Debug)]
pub struct GeodesicPath {
    pub samples: Vec<FlowState>,
    pub h: f64,
    pub mass_shell_drift: f64,
    pub exited_chart: bool,
}

impl GeodesicPath {
    pub fn end(&self) -> &FlowState {
        self.samples.last().expect("path has at least one sample")
    }
}

/// Integrate the geodesic through (x, p) over [0, T] (or [T, 0] for T < 0)
/// with step `h`, recording every step. Terminates early with a flag when
/// the base point leaves the chart box.
pub fn geodesic_flow(
    spec: &MetricSpec,
    x: &[f64],
    p: &[f64],
    t_final: f64,
    h: f64,
) -> Result<GeodesicPath> {
    if p.iter().all(|v| *v == 0.0) {
        return Err(Error::ZeroVector);
    }
    if !spec.in_chart(x) {
        return Err(Error::ChartExit { partial_bound: 0.0 });
    }
    let flow = Flow::new(spec);
    let gpp0 = spec.inner(x, p, p)?;
    let mut samples = vec![FlowState {
        s: 0.0,
        x: x.to_vec(),
        p: p.to_vec(),
    }];
    let mut drift: f64 = 0.0;
    let mut exited = false;
    let dir = t_final.signum();
    let h_abs = h.abs();
    let mut s = 0.0;
    while (t_final - s).abs() > 1e-15 {
        let step = dir * h_abs.min((t_final - s).abs());
        let last = samples.last().unwrap();
        let (xn, pn) = flow.rk4_step(&last.x, &last.p, step)?;
        if !spec.in_chart(&xn) {
            exited = true;
            break;
        }
        s += step;
        let gpp = spec.inner(&xn, &pn, &pn)?;
        drift = drift.max((gpp - gpp0).abs());
        samples.push(FlowState { s, x: xn, p: pn });
    }
    if t_final < 0.0 {
        samples.reverse();
    }
    Ok(GeodesicPath {
        samples,
        h: h_abs,
        mass_shell_drift: drift,
        exited_chart: exited,
    })
}

/// Largest backward parameter at which the base point of the geodesic
/// through (x, p) still lies inside the coordinate box `k`; 0 when the
/// backward path never meets `k`.
///
/// The backward path is scanned with a step adapted to the thinnest edge of
/// `k`, every membership transition is bracketed, and the last inside-to-
/// outside transition is resolved by bisection to 1e-9.
pub fn exit_time(spec: &MetricSpec, x: &[f64], p: &[f64], k: &CoordBox) -> Result<f64> {
    let flow = Flow::new(spec);
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
    let scan = (0.4 * min_edge / p_norm).max(1e-12);

    let mut cur = FlowState {
        s: 0.0,
        x: x.to_vec(),
        p: p.to_vec(),
    };
    let mut last_inside: Option<FlowState> = None;
    let mut bracket: Option<(FlowState, f64)> = None; // (state at inside end, outside s)
    if k.contains(&cur.x) {
        last_inside = Some(cur.clone());
    }
    let max_steps = 2_000_000usize;
    for _ in 0..max_steps {
        let (xn, pn) = flow.rk4_step(&cur.x, &cur.p, -scan)?;
        let s_next = cur.s + scan;
        if !spec.in_chart(&xn) {
            // The chart exit is permanent by convention. If we are still
            // inside k the true exit time is unresolved.
            if k.contains(&cur.x) {
                return Err(Error::ChartExit {
                    partial_bound: cur.s,
                });
            }
            break;
        }
        let next = FlowState {
            s: s_next,
            x: xn,
            p: pn,
        };
        let was_in = k.contains(&cur.x);
        let is_in = k.contains(&next.x);
        if is_in {
            last_inside = Some(next.clone());
            bracket = None;
        } else if was_in {
            bracket = Some((cur.clone(), s_next));
        }
        cur = next;
        // Outside the hull of k and the start point and moving away: the
        // supported product metrics cannot re-enter once past the chart
        // scan; we stop when well past the box.
        if cur.s > 4.0 * chart_crossing_bound(spec, p_norm) {
            break;
        }
    }
    let Some(inside) = last_inside else {
        return Ok(0.0);
    };
    let Some((bracket_state, s_out)) = bracket else {
        // Inside at the final scan point means the loop ended while still
        // inside k, which the chart-exit branch above already excluded.
        return Ok(inside.s);
    };
    // Bisect between the bracketing states, integrating from the inside end.
    let mut lo = 0.0f64; // offset from bracket_state.s, inside
    let mut hi = s_out - bracket_state.s; // outside
    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        let (st, exited) = flow.state_at(&bracket_state.x, &bracket_state.p, -mid, scan)?;
        if !exited && k.contains(&st.x) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(bracket_state.s + 0.5 * (lo + hi))
}

fn chart_crossing_bound(spec: &MetricSpec, p_norm: f64) -> f64 {
    let diam: f64 = spec
        .chart_box
        .lo
        .iter()
        .zip(spec.chart_box.hi.iter())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    diam / p_norm.max(1e-300)
}

/// Result of a successful null-geodesic connection.
#[derive(Clone, Debug)]
pub struct NullConnection {
    /// Future-pointing null direction at the source event.
    pub direction: Vec<f64>,
    /// Worldline parameter of the arrival event.
    pub arrival: f64,
    /// Euclidean endpoint miss of the shot.
    pub miss: f64,
}

/// Shoot future null geodesics from `x` over a direction grid on the null
/// cone, refine by bisection on the signed miss against the worldline, and
/// return the connection with the smallest arrival parameter.
///
/// The worldline must be parametrised by coordinate time: `curve(s)[0] == s`
/// (constant curves with a degenerate window target a fixed event).
pub fn null_connect(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<NullConnection> {
    null_connect_oriented(spec, x, curve, window, h, 1.0)
}

/// Past-directed variant: shoots past null directions, reaching worldline
/// parameters below the source time.
pub fn null_connect_past(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<NullConnection> {
    null_connect_oriented(spec, x, curve, window, h, -1.0)
}

fn null_connect_oriented(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
    time_sign: f64,
) -> Result<NullConnection> {
    let n = spec.n;
    if window.0 <= x[0] && x[0] <= window.1 {
        let on_curve = curve(x[0]);
        let d2: f64 = on_curve
            .iter()
            .zip(x.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d2.sqrt() < 1e-12 {
            return Err(Error::DegenerateTarget);
        }
    }
    match n {
        2 => null_connect_n2(spec, x, curve, window, h, time_sign),
        3 => null_connect_n3(spec, x, curve, window, h, time_sign),
        _ => null_connect_generic(spec, x, curve, window, h, time_sign),
    }
}

fn oriented_null_lift(
    spec: &MetricSpec,
    x: &[f64],
    omega: &[f64],
    time_sign: f64,
) -> Result<Vec<f64>> {
    let mut p = spec.null_lift(x, omega)?;
    p[0] *= time_sign;
    Ok(p)
}

/// Miss of the null shot with spatial direction `omega`: the smallest
/// distance to the worldline segment along the integrated ray, with the
/// matching worldline parameter and the ray position there.
///
/// Distance to the segment is the spacetime Euclidean distance to the curve
/// point at the clamped parameter, which reduces to the equal-time spatial
/// distance while the ray time lies inside the window. The coarse march is
/// refined by golden-section minimisation along the ray, so true hits
/// resolve far below the sampling resolution.
fn shot_miss(
    spec: &MetricSpec,
    x: &[f64],
    omega: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<(f64, f64, Vec<f64>)> {
    let p = spec.null_lift(x, omega)?;
    let flow = Flow::new(spec);
    let dist = |st_x: &[f64]| -> f64 {
        let s_eff = st_x[0].clamp(window.0, window.1);
        let target = curve(s_eff);
        let mut d2 = (st_x[0] - s_eff) * (st_x[0] - s_eff);
        for (a, b) in st_x[1..].iter().zip(target[1..].iter()) {
            d2 += (a - b) * (a - b);
        }
        d2.sqrt()
    };
    let mut cur = FlowState {
        s: 0.0,
        x: x.to_vec(),
        p: p.clone(),
    };
    let mut best_d = dist(&cur.x);
    let mut best_state = cur.clone();
    let max_steps = 40_000_000usize;
    for _ in 0..max_steps {
        let (xn, pn) = flow.rk4_step(&cur.x, &cur.p, h)?;
        if !spec.in_chart(&xn) {
            break;
        }
        cur = FlowState {
            s: cur.s + h,
            x: xn,
            p: pn,
        };
        let d = dist(&cur.x);
        if d < best_d {
            best_d = d;
            best_state = cur.clone();
        }
        // Past the window top the time component alone exceeds the best
        // candidate: no future improvement possible.
        if cur.x[0] - window.1 > best_d {
            break;
        }
    }
    // Golden-section refinement along the ray around the best sample.
    let gold = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = -h;
    let mut b = h;
    let eval = |delta: f64| -> Result<f64> {
        let (st, _) = flow.state_at(&best_state.x, &best_state.p, delta, h)?;
        Ok(dist(&st.x))
    };
    let mut c = b - gold * (b - a);
    let mut d_pt = a + gold * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d_pt)?;
    for _ in 0..60 {
        if fc < fd {
            b = d_pt;
            d_pt = c;
            fd = fc;
            c = b - gold * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d_pt;
            fc = fd;
            d_pt = a + gold * (b - a);
            fd = eval(d_pt)?;
        }
        if (b - a).abs() < 1e-14 {
            break;
        }
    }
    let delta = 0.5 * (a + b);
    let (st, _) = flow.state_at(&best_state.x, &best_state.p, delta, h)?;
    let refined = dist(&st.x);
    if refined <= best_d {
        let s_eff = st.x[0].clamp(window.0, window.1);
        Ok((refined, s_eff, st.x))
    } else {
        let s_eff = best_state.x[0].clamp(window.0, window.1);
        Ok((best_d, s_eff, best_state.x))
    }
}

fn null_connect_n2(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<NullConnection> {
    let mut best: Option<NullConnection> = None;
    for omega in [[1.0], [-1.0]] {
        let (miss, s, _) = shot_miss(spec, x, &omega, curve, window, h)?;
        if miss < 1e-8 && best.as_ref().map_or(true, |b| s < b.arrival) {
            best = Some(NullConnection {
                direction: spec.null_lift(x, &omega)?,
                arrival: s,
                miss,
            });
        }
    }
    best.ok_or(Error::NoConnection)
}

fn null_connect_n3(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<NullConnection> {
    // Signed transverse miss: the 2d cross product of the ray's spatial
    // velocity with the offset to the target changes sign when the ray
    // sweeps past the worldline.
    let signed = |theta: f64| -> Result<(f64, f64, f64)> {
        let omega = [theta.cos(), theta.sin()];
        let p = spec.null_lift(x, &omega)?;
        let (miss, s, at) = shot_miss(spec, x, &omega, curve, window, h)?;
        let target = curve(s);
        let dx = [target[1] - at[1], target[2] - at[2]];
        // Spatial velocity is parallel-transported along the way; for the
        // sign only the initial sweep orientation matters.
        let cross = p[1] * dx[1] - p[2] * dx[0];
        Ok((miss, s, cross))
    };

    let mut thetas: Vec<f64> = (0..SHOOT_GRID)
        .map(|i| 2.0 * std::f64::consts::PI * i as f64 / SHOOT_GRID as f64)
        .collect();
    let mut evals: Vec<(f64, f64, f64, f64)> = Vec::new(); // theta, miss, s, sign
    for _ in 0..=SHOOT_REFINEMENTS {
        evals = thetas
            .iter()
            .map(|&t| signed(t).map(|(m, s, c)| (t, m, s, c)))
            .collect::<Result<_>>()?;
        let best = evals
            .iter()
            .cloned()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let span = if thetas.len() > 1 {
            thetas[1] - thetas[0]
        } else {
            0.1
        };
        thetas = (0..SHOOT_GRID)
            .map(|i| best.0 + span * (i as f64 / (SHOOT_GRID - 1) as f64 - 0.5) * 2.0)
            .collect();
    }
    // Bracket sign changes among consecutive refined samples and bisect.
    let mut connections: Vec<NullConnection> = Vec::new();
    for w in evals.windows(2) {
        let (t0, _, _, c0) = w[0];
        let (t1, _, _, c1) = w[1];
        if c0 == 0.0 || c0.signum() == c1.signum() {
            continue;
        }
        let mut lo = t0;
        let mut hi = t1;
        let mut c_lo = c0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            let (_, _, c_mid) = signed(mid)?;
            if c_mid.signum() == c_lo.signum() {
                lo = mid;
                c_lo = c_mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        let theta = 0.5 * (lo + hi);
        let (miss, s, _) = signed(theta)?;
        if miss < 1e-8 {
            connections.push(NullConnection {
                direction: spec.null_lift(x, &[theta.cos(), theta.sin()])?,
                arrival: s,
                miss,
            });
        }
    }
    connections
        .into_iter()
        .min_by(|a, b| a.arrival.total_cmp(&b.arrival))
        .ok_or(Error::NoConnection)
}

fn null_connect_generic(
    spec: &MetricSpec,
    x: &[f64],
    curve: &dyn Fn(f64) -> Vec<f64>,
    window: (f64, f64),
    h: f64,
) -> Result<NullConnection> {
    // Product grid over spherical angles with local refinement; adequate
    // for smooth backgrounds in higher dimension.
    let n = spec.n;
    let angles = n - 2;
    let mut center = vec![0.0; angles];
    let mut span = std::f64::consts::PI;
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for _ in 0..=SHOOT_REFINEMENTS + 2 {
        let steps = 8usize;
        let mut idx = vec![0usize; angles];
        loop {
            let ang: Vec<f64> = (0..angles)
                .map(|d| center[d] + span * (idx[d] as f64 / (steps - 1) as f64 - 0.5) * 2.0)
                .collect();
            let omega = spherical_direction(n - 1, &ang);
            let (miss, s, _) = shot_miss(spec, x, &omega, curve, window, h)?;
            if best.as_ref().map_or(true, |b| miss < b.0) {
                best = Some((miss, s, omega));
            }
            let mut d = 0;
            loop {
                if d == angles {
                    break;
                }
                idx[d] += 1;
                if idx[d] < steps {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == angles {
                break;
            }
        }
        if let Some((_, _, omega)) = &best {
            center = direction_angles(omega);
        }
        span /= 6.0;
    }
    let (miss, s, omega) = best.ok_or(Error::NoConnection)?;
    if miss < 1e-8 {
        Ok(NullConnection {
            direction: spec.null_lift(x, &omega)?,
            arrival: s,
            miss,
        })
    } else {
        Err(Error::NoConnection)
    }
}

fn spherical_direction(dim: usize, angles: &[f64]) -> Vec<f64> {
    // dim spatial components from dim-1 angles.
    let mut v = vec![0.0; dim];
    let mut sin_prod = 1.0;
    for (d, a) in angles.iter().enumerate() {
        v[d] = sin_prod * a.cos();
        sin_prod *= a.sin();
    }
    v[dim - 1] = sin_prod;
    v
}

fn direction_angles(omega: &[f64]) -> Vec<f64> {
    let dim = omega.len();
    let mut angles = vec![0.0; dim - 1];
    let mut tail: f64 = omega.iter().map(|v| v * v).sum();
    for d in 0..dim - 1 {
        tail = (tail - omega[d] * omega[d]).max(0.0);
        angles[d] = omega[d].atan2(tail.sqrt().copysign(1.0)).rem_euclid(std::f64::consts::PI);
    }
    angles
}

/// Future null geodesic from event `a` to event `b` (with b strictly later
/// in coordinate time), as a connection against the frozen worldline at b.
pub fn null_connect_events(
    spec: &MetricSpec,
    a: &[f64],
    b: &[f64],
    h: f64,
) -> Result<NullConnection> {
    if b[0] <= a[0] {
        return Err(Error::DegenerateInput(
            "target must be strictly later than the source".into(),
        ));
    }
    let b_owned = b.to_vec();
    let curve = move |_s: f64| b_owned.clone();
    // Degenerate window: the clamped segment distance becomes the spacetime
    // distance to the fixed event.
    null_connect(spec, a, &curve, (b[0], b[0]), h)
}

/// Sampled geodesic flowout of an initial patch: phase points of the
/// flowout, their base projections, and (optionally) the transversality
/// singular value against crossing directions at requested events.
#[derive(Clone, Debug)]
pub struct FlowoutSample {
    /// Patch parameter tuples, one per geodesic in the family.
    pub params: Vec<Vec<f64>>,
    /// Flow-time samples shared by all members.
    pub times: Vec<f64>,
    /// Phase points, indexed [param][time].
    pub phase_points: Vec<Vec<FlowState>>,
    /// Base projections, same indexing.
    pub base_points: Vec<Vec<Vec<f64>>>,
    /// Smallest singular value of the base-tangent matrix at each requested
    /// event, paired with the crossing direction supplied there.
    pub transversality: Vec<f64>,
    /// Largest mass-shell drift across the family.
    pub mass_shell_drift: f64,
}

/// Events at which transversality of the flowout must hold, each with the
/// velocity of the geodesic expected to cross there.
pub struct CrossingProbe {
    pub event: Vec<f64>,
    pub crossing_velocity: Vec<f64>,
}

pub fn flowout(
    spec: &MetricSpec,
    patch: &SourcePatch,
    window: (f64, f64),
    h: f64,
    params_per_axis: usize,
    probes: &[CrossingProbe],
    threshold: f64,
) -> Result<FlowoutSample> {
    let initials = patch_initials(patch, params_per_axis);
    for (_, (x0, p0)) in &initials {
        if !spec.is_future_timelike(x0, p0) {
            return Err(Error::DegenerateInput(
                "flowout initial vectors must be future timelike".into(),
            ));
        }
    }
    let steps = ((window.1 - window.0) / h).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps)
        .map(|i| window.0 + (window.1 - window.0) * i as f64 / steps as f64)
        .collect();
    let mut params = Vec::new();
    let mut phase_points = Vec::new();
    let mut base_points = Vec::new();
    let mut drift: f64 = 0.0;
    for (sigma, (x0, p0)) in &initials {
        let path = geodesic_flow(spec, x0, p0, window.1, h)?;
        drift = drift.max(path.mass_shell_drift);
        let flow = Flow::new(spec);
        let mut states = Vec::with_capacity(times.len());
        for &t in &times {
            let (st, _) = flow.state_at(x0, p0, t, h)?;
            states.push(st);
        }
        params.push(sigma.clone());
        base_points.push(states.iter().map(|st| st.x.clone()).collect());
        phase_points.push(states);
    }

    let mut transversality = Vec::new();
    for probe in probes {
        let sigma_min = flowout_transversality(spec, patch, &probe.event, &probe.crossing_velocity, h)?;
        if sigma_min < threshold {
            return Err(Error::Transversality {
                sigma_min,
                threshold,
            });
        }
        transversality.push(sigma_min);
    }

    Ok(FlowoutSample {
        params,
        times,
        phase_points,
        base_points,
        transversality,
        mass_shell_drift: drift,
    })
}

/// Initial phase points of the patch on its parameter grid.
fn patch_initials(patch: &SourcePatch, per_axis: usize) -> Vec<(Vec<f64>, (Vec<f64>, Vec<f64>))> {
    match &patch.shape {
        PatchShape::Point { x, p } => vec![(vec![], (x.clone(), p.clone()))],
        PatchShape::Patch {
            center_x,
            center_p,
            frame,
            extent,
        } => {
            let axes = frame.len();
            let mut out = Vec::new();
            let mut idx = vec![0usize; axes];
            loop {
                let sigma: Vec<f64> = idx
                    .iter()
                    .map(|&i| extent * (2.0 * i as f64 / (per_axis - 1) as f64 - 1.0))
                    .collect();
                let mut p = center_p.clone();
                for (k, dir) in frame.iter().enumerate() {
                    for (pi, di) in p.iter_mut().zip(dir.iter()) {
                        *pi += sigma[k] * di;
                    }
                }
                out.push((sigma, (center_x.clone(), p)));
                let mut d = 0;
                loop {
                    if d == axes {
                        break;
                    }
                    idx[d] += 1;
                    if idx[d] < per_axis {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
                if d == axes {
                    break;
                }
            }
            out
        }
    }
}

/// Smallest singular value of the matrix whose columns are the base-tangent
/// directions of the flowout at `event` together with the crossing velocity.
pub fn flowout_transversality(
    spec: &MetricSpec,
    patch: &SourcePatch,
    event: &[f64],
    crossing_velocity: &[f64],
    h: f64,
) -> Result<f64> {
    let n = spec.n;
    let flow = Flow::new(spec);
    // Locate the (sigma, t) preimage of the event by coarse search plus
    // Gauss-Newton polish on the squared distance.
    let (x0, p0_of): (Vec<f64>, Box<dyn Fn(&[f64]) -> Vec<f64>>) = match &patch.shape {
        PatchShape::Point { x, p } => {
            let p = p.clone();
            (x.clone(), Box::new(move |_s: &[f64]| p.clone()))
        }
        PatchShape::Patch {
            center_x,
            center_p,
            frame,
            ..
        } => {
            let center_p = center_p.clone();
            let frame = frame.clone();
            (
                center_x.clone(),
                Box::new(move |s: &[f64]| {
                    let mut p = center_p.clone();
                    for (k, dir) in frame.iter().enumerate() {
                        for (pi, di) in p.iter_mut().zip(dir.iter()) {
                            *pi += s[k] * di;
                        }
                    }
                    p
                }),
            )
        }
    };
    let axes = match &patch.shape {
        PatchShape::Point { .. } => 0,
        PatchShape::Patch { frame, .. } => frame.len(),
    };

    let eval_x = |sigma: &[f64], t: f64| -> Result<Vec<f64>> {
        let p0 = p0_of(sigma);
        let (st, _) = flow.state_at(&x0, &p0, t, h)?;
        Ok(st.x)
    };

    // Coarse search over sigma and t.
    let mut best = (vec![0.0; axes], 0.0, f64::INFINITY);
    let coarse = 9usize;
    let extent = match &patch.shape {
        PatchShape::Point { .. } => 0.0,
        PatchShape::Patch { extent, .. } => *extent,
    };
    let t_guess = event[0] - x0[0];
    let t_range = (t_guess.abs() * 0.5).max(0.5);
    let mut idx = vec![0usize; axes];
    loop {
        let sigma: Vec<f64> = idx
            .iter()
            .map(|&i| {
                if axes == 0 {
                    0.0
                } else {
                    extent * (2.0 * i as f64 / (coarse - 1) as f64 - 1.0)
                }
            })
            .collect();
        for j in 0..coarse {
            let t = t_guess + t_range * (2.0 * j as f64 / (coarse - 1) as f64 - 1.0);
            let xv = eval_x(&sigma, t)?;
            let d2: f64 = xv
                .iter()
                .zip(event.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d2 < best.2 {
                best = (sigma.clone(), t, d2);
            }
        }
        if axes == 0 {
            break;
        }
        let mut d = 0;
        loop {
            if d == axes {
                break;
            }
            idx[d] += 1;
            if idx[d] < coarse {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == axes {
            break;
        }
    }

    // Gauss-Newton polish in (sigma, t).
    let mut sigma = best.0.clone();
    let mut t = best.1;
    let fd = 1e-6;
    for _ in 0..40 {
        let x_now = eval_x(&sigma, t)?;
        let r: Vec<f64> = x_now.iter().zip(event.iter()).map(|(a, b)| a - b).collect();
        let rnorm: f64 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm < 1e-10 {
            break;
        }
        let mut jac = DMatrix::zeros(n, axes + 1);
        for k in 0..axes {
            let mut sp = sigma.clone();
            sp[k] += fd;
            let xp = eval_x(&sp, t)?;
            for i in 0..n {
                jac[(i, k)] = (xp[i] - x_now[i]) / fd;
            }
        }
        let xt = eval_x(&sigma, t + fd)?;
        for i in 0..n {
            jac[(i, axes)] = (xt[i] - x_now[i]) / fd;
        }
        let jt = jac.transpose();
        let lhs = &jt * &jac;
        let rhs = &jt * DMatrix::from_column_slice(n, 1, &r);
        let Some(delta) = lhs.lu().solve(&rhs) else {
            break;
        };
        for k in 0..axes {
            sigma[k] -= delta[(k, 0)];
        }
        t -= delta[(axes, 0)];
    }

    // Base-tangent directions at the located point.
    let x_now = eval_x(&sigma, t)?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for k in 0..axes {
        let mut sp = sigma.clone();
        sp[k] += fd;
        let xp = eval_x(&sp, t)?;
        cols.push(
            xp.iter()
                .zip(x_now.iter())
                .map(|(a, b)| (a - b) / fd)
                .collect(),
        );
    }
    // Flow direction of the family member through the point.
    let p0 = p0_of(&sigma);
    let (st, _) = flow.state_at(&x0, &p0, t, h)?;
    cols.push(st.p.clone());
    cols.push(crossing_velocity.to_vec());

    // Normalise columns so the singular value measures angle, not scale.
    let mut mat = DMatrix::zeros(n, cols.len());
    for (j, c) in cols.iter().enumerate() {
        let norm: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        for i in 0..n {
            mat[(i, j)] = c[i] / norm.max(1e-300);
        }
    }
    let svd = mat.svd(false, false);
    Ok(svd
        .singular_values
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(*v)))
}

/// Parallel transport of `v` along the straight coordinate segment from
/// `x0` with direction `d` (unit parameter length), by RK4 on the transport
/// equation.
pub fn parallel_transport_segment(
    spec: &MetricSpec,
    x0: &[f64],
    d: &[f64],
    v0: &[f64],
    length: f64,
    h: f64,
) -> Result<Vec<f64>> {
    let n = spec.n;
    let deriv = |s: f64, v: &[f64]| -> Result<Vec<f64>> {
        let x: Vec<f64> = x0.iter().zip(d.iter()).map(|(a, b)| a + s * b).collect();
        let gamma = spec.christoffel(&x)?;
        let mut out = vec![0.0; n];
        for a in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                for m in 0..n {
                    acc += gamma.at(a, l, m) * d[l] * v[m];
                }
            }
            out[a] = -acc;
        }
        Ok(out)
    };
    let steps = (length.abs() / h).ceil().max(1.0) as usize;
    let dt = length / steps as f64;
    let mut v = v0.to_vec();
    let mut s = 0.0;
    for _ in 0..steps {
        let k1 = deriv(s, &v)?;
        let v2: Vec<f64> = v.iter().zip(k1.iter()).map(|(a, b)| a + 0.5 * dt * b).collect();
        let k2 = deriv(s + 0.5 * dt, &v2)?;
        let v3: Vec<f64> = v.iter().zip(k2.iter()).map(|(a, b)| a + 0.5 * dt * b).collect();
        let k3 = deriv(s + 0.5 * dt, &v3)?;
        let v4: Vec<f64> = v.iter().zip(k3.iter()).map(|(a, b)| a + dt * b).collect();
        let k4 = deriv(s + dt, &v4)?;
        for i in 0..n {
            v[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        s += dt;
    }
    Ok(v)
}
