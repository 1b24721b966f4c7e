//! Time-separation function with analytic and fan-shooting backends,
//! observation-time functions along observer worldlines, earliest light
//! observation sets, and the causal-diamond membership test.

use crate::error::{Error, Result};
use crate::geodesics::{geodesic_flow, null_connect_events, Flow};
use crate::grid::CoordBox;
use crate::spacetime::{MetricKind, MetricSpec};

/// Chronology threshold: separations at or below this count as zero.
pub const TAU_TOL: f64 = 1e-9;

/// Resolution of the observation-time bisection in the curve parameter.
pub const OBS_S_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub enum TauBackend {
    /// Exact chord formula; valid on flat and constant-conformal-flat
    /// backgrounds.
    Analytic,
    /// Direction-search over timelike shots from x, refined locally.
    FanShooting {
        directions: usize,
        refinements: usize,
        step: f64,
    },
}

impl Default for TauBackend {
    fn default() -> Self {
        TauBackend::FanShooting {
            directions: 128,
            refinements: 2,
            step: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TauDetail {
    pub value: f64,
    /// Set when the direction search ended in the ambiguous band near the
    /// cone: the value is then only a lower bound.
    pub lower_bound_only: bool,
}

/// Pick the exact backend automatically where it applies.
pub fn preferred_backend(spec: &MetricSpec) -> TauBackend {
    match &spec.kind {
        MetricKind::Minkowski => TauBackend::Analytic,
        MetricKind::ConformalMinkowski { phi } if phi.gradient.iter().all(|g| *g == 0.0) => {
            TauBackend::Analytic
        }
        _ => TauBackend::default(),
    }
}

/// Supremal proper length of causal curves from x to y; zero when y is not
/// in the causal future of x.
pub fn time_separation(
    spec: &MetricSpec,
    x: &[f64],
    y: &[f64],
    backend: &TauBackend,
) -> Result<f64> {
    Ok(time_separation_detailed(spec, x, y, backend)?.value)
}

pub fn time_separation_detailed(
    spec: &MetricSpec,
    x: &[f64],
    y: &[f64],
    backend: &TauBackend,
) -> Result<TauDetail> {
    if y[0] <= x[0] {
        // Coordinate time is a global time function on the supported
        // product metrics, so nothing to the past (or simultaneous) is
        // reachable by a future causal curve.
        return Ok(TauDetail {
            value: 0.0,
            lower_bound_only: false,
        });
    }
    match backend {
        TauBackend::Analytic => {
            let scale = match &spec.kind {
                MetricKind::Minkowski => 1.0,
                MetricKind::ConformalMinkowski { phi }
                    if phi.gradient.iter().all(|g| *g == 0.0) =>
                {
                    (0.5 * phi.constant).exp()
                }
                _ => {
                    return Err(Error::DegenerateInput(
                        "analytic separation backend requires a flat or constant-conformal metric"
                            .into(),
                    ))
                }
            };
            let dt = y[0] - x[0];
            let dr2: f64 = x[1..]
                .iter()
                .zip(y[1..].iter())
                .map(|(a, b)| (b - a) * (b - a))
                .sum();
            let interval = dt * dt - dr2;
            Ok(TauDetail {
                value: if interval > 0.0 {
                    scale * interval.sqrt()
                } else {
                    0.0
                },
                lower_bound_only: false,
            })
        }
        TauBackend::FanShooting {
            directions,
            refinements,
            step,
        } => fan_shoot_tau(spec, x, y, *directions, *refinements, *step),
    }
}

/// Direction search for the timelike geodesic from x through y. The miss is
/// the spatial distance at the matched time level; hits give the proper
/// length along the shot, which for geodesics is the conserved mass times
/// the arrival parameter.
fn fan_shoot_tau(
    spec: &MetricSpec,
    x: &[f64],
    y: &[f64],
    directions: usize,
    refinements: usize,
    step: f64,
) -> Result<TauDetail> {
    let n = spec.n;
    let flow = Flow::new(spec);
    let dt = y[0] - x[0];

    // Shoot with p = (1, v); track spatial position at time level y^0.
    let miss_of = |v: &[f64]| -> Result<Option<(f64, f64, f64)>> {
        let mut p = Vec::with_capacity(n);
        p.push(1.0);
        p.extend_from_slice(v);
        if !spec.is_future_timelike(x, &p) {
            return Ok(None);
        }
        let gpp = spec.inner(x, &p, &p)?;
        let mut prev = crate::geodesics::FlowState {
            s: 0.0,
            x: x.to_vec(),
            p: p.clone(),
        };
        let max_steps = 10_000_000usize;
        for _ in 0..max_steps {
            let (xn, pn) = flow.rk4_step(&prev.x, &prev.p, step)?;
            if !spec.in_chart(&xn) {
                return Ok(None);
            }
            let next = crate::geodesics::FlowState {
                s: prev.s + step,
                x: xn,
                p: pn,
            };
            if next.x[0] >= y[0] {
                // Interpolate the crossing of the time level linearly.
                let f = (y[0] - prev.x[0]) / (next.x[0] - prev.x[0]);
                let s_arr = prev.s + f * step;
                let mut d2 = 0.0;
                for d in 1..n {
                    let xc = prev.x[d] + f * (next.x[d] - prev.x[d]);
                    d2 += (xc - y[d]) * (xc - y[d]);
                }
                return Ok(Some((d2.sqrt(), s_arr, (-gpp).sqrt())));
            }
            prev = next;
        }
        Ok(None)
    };

    // Coarse grid over the velocity ball, then local refinement.
    let per_axis = (directions as f64).powf(1.0 / (n - 1) as f64).ceil() as usize;
    let per_axis = per_axis.max(3);
    let mut center = vec![0.0; n - 1];
    // Aim at the chord first: in mildly curved charts the optimal direction
    // is near the straight-line velocity.
    for d in 1..n {
        center[d - 1] = (y[d] - x[d]) / dt;
    }
    let mut span = 1.0;
    let mut best: Option<(f64, f64, f64)> = None;
    for _round in 0..=refinements {
        let round_center = center.clone();
        let mut idx = vec![0usize; n - 1];
        loop {
            let v: Vec<f64> = (0..n - 1)
                .map(|d| {
                    round_center[d] + span * (2.0 * idx[d] as f64 / (per_axis - 1) as f64 - 1.0)
                })
                .collect();
            if let Some(hit) = miss_of(&v)? {
                if best.as_ref().map_or(true, |b| hit.0 < b.0) {
                    best = Some(hit);
                    // Centre of the next refinement round.
                    center = v.clone();
                }
            }
            let mut d = 0;
            loop {
                if d == n - 1 {
                    break;
                }
                idx[d] += 1;
                if idx[d] < per_axis {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n - 1 {
                break;
            }
        }
        span /= per_axis as f64 - 1.0;
    }
    let Some((miss, s_arr, mass)) = best else {
        return Ok(TauDetail {
            value: 0.0,
            lower_bound_only: false,
        });
    };
    let hit_tol = 1e-6 * dt.max(1.0);
    if miss < hit_tol {
        Ok(TauDetail {
            value: mass * s_arr,
            lower_bound_only: false,
        })
    } else if miss < 1e-2 * dt.max(1.0) {
        // Near-miss band: report what was achieved, flagged.
        Ok(TauDetail {
            value: mass * s_arr,
            lower_bound_only: true,
        })
    } else {
        Ok(TauDetail {
            value: 0.0,
            lower_bound_only: false,
        })
    }
}

/// Family of observer worldlines mu_a(s) = (s, a), a on a finite grid, with
/// a distinguished member at a = 0.
#[derive(Clone, Debug)]
pub struct ObserverFamily {
    pub a_grid: Vec<Vec<f64>>,
    pub s_range: (f64, f64),
    pub distinguished: usize,
}

impl ObserverFamily {
    /// Rectangular grid over the first `varying` spatial offsets (counts per
    /// axis), remaining offsets zero; the zero offset is the distinguished
    /// member and is inserted if the grid misses it.
    pub fn grid(n: usize, half_width: f64, count: usize, varying: usize) -> Self {
        let spatial = n - 1;
        let mut a_grid = Vec::new();
        let counts: Vec<usize> = (0..spatial)
            .map(|d| if d < varying { count } else { 1 })
            .collect();
        let mut idx = vec![0usize; spatial];
        loop {
            let a: Vec<f64> = (0..spatial)
                .map(|d| {
                    if counts[d] == 1 {
                        0.0
                    } else {
                        -half_width + 2.0 * half_width * idx[d] as f64 / (counts[d] - 1) as f64
                    }
                })
                .collect();
            a_grid.push(a);
            let mut d = 0;
            loop {
                if d == spatial {
                    break;
                }
                idx[d] += 1;
                if idx[d] < counts[d] {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == spatial {
                break;
            }
        }
        let distinguished = match a_grid
            .iter()
            .position(|a| a.iter().all(|v| v.abs() < 1e-14))
        {
            Some(i) => i,
            None => {
                a_grid.push(vec![0.0; spatial]);
                a_grid.len() - 1
            }
        };
        ObserverFamily {
            a_grid,
            s_range: (-1.0, 1.0),
            distinguished,
        }
    }

    pub fn curve(&self, idx: usize) -> impl Fn(f64) -> Vec<f64> + '_ {
        let a = &self.a_grid[idx];
        move |s: f64| {
            let mut e = Vec::with_capacity(a.len() + 1);
            e.push(s);
            e.extend_from_slice(a);
            e
        }
    }

    pub fn event(&self, idx: usize, s: f64) -> Vec<f64> {
        let mut e = Vec::with_capacity(self.a_grid[idx].len() + 1);
        e.push(s);
        e.extend_from_slice(&self.a_grid[idx]);
        e
    }

    /// Every member must be future timelike along its span, and the diamond
    /// must be visible: mu_a(start) strictly precedes the diamond bottom
    /// and the diamond top strictly precedes mu_a(end). Violations are
    /// rejected, not repaired.
    pub fn validate(
        &self,
        spec: &MetricSpec,
        diamond: &CausalDiamond,
        backend: &TauBackend,
    ) -> Result<()> {
        let samples = 9;
        for (i, _a) in self.a_grid.iter().enumerate() {
            for k in 0..samples {
                let s = self.s_range.0
                    + (self.s_range.1 - self.s_range.0) * k as f64 / (samples - 1) as f64;
                let x = self.event(i, s);
                if !spec.in_chart(&x) {
                    return Err(Error::Config {
                        pointer: format!("/observers/a_grid/{i}"),
                        message: "worldline leaves the chart".into(),
                    });
                }
                let mut vel = vec![0.0; spec.n];
                vel[0] = 1.0;
                if !spec.is_future_timelike(&x, &vel) {
                    return Err(Error::Config {
                        pointer: format!("/observers/a_grid/{i}"),
                        message: "worldline is not future timelike".into(),
                    });
                }
            }
            let start = self.event(i, self.s_range.0);
            let end = self.event(i, self.s_range.1);
            if time_separation(spec, &start, &diamond.x_minus, backend)? <= TAU_TOL {
                return Err(Error::Config {
                    pointer: format!("/observers/a_grid/{i}"),
                    message: "worldline start does not precede the diamond bottom".into(),
                });
            }
            if time_separation(spec, &diamond.x_plus, &end, backend)? <= TAU_TOL {
                return Err(Error::Config {
                    pointer: format!("/observers/a_grid/{i}"),
                    message: "diamond top does not precede the worldline end".into(),
                });
            }
        }
        Ok(())
    }
}

/// Chronological diamond between two events of the distinguished observer.
#[derive(Clone, Debug)]
pub struct CausalDiamond {
    pub s_minus: f64,
    pub s_plus: f64,
    pub x_minus: Vec<f64>,
    pub x_plus: Vec<f64>,
}

impl CausalDiamond {
    pub fn new(family: &ObserverFamily, s_minus: f64, s_plus: f64) -> Result<Self> {
        if s_minus >= s_plus {
            return Err(Error::Config {
                pointer: "/diamond".into(),
                message: "requires s_minus < s_plus".into(),
            });
        }
        Ok(CausalDiamond {
            s_minus,
            s_plus,
            x_minus: family.event(family.distinguished, s_minus),
            x_plus: family.event(family.distinguished, s_plus),
        })
    }

    pub fn contains(&self, spec: &MetricSpec, w: &[f64], backend: &TauBackend) -> Result<bool> {
        Ok(time_separation(spec, &self.x_minus, w, backend)? > TAU_TOL
            && time_separation(spec, w, &self.x_plus, backend)? > TAU_TOL)
    }
}

/// Earliest observer parameter at which mu_a enters the chronological
/// future of x, or the window top when it never does: bisection on the
/// monotone chronology indicator.
pub fn observation_time_plus(
    spec: &MetricSpec,
    curve: &dyn Fn(f64) -> Vec<f64>,
    s_range: (f64, f64),
    x: &[f64],
    backend: &TauBackend,
) -> Result<f64> {
    let chrono = |s: f64| -> Result<bool> {
        Ok(time_separation(spec, x, &curve(s), backend)? > TAU_TOL)
    };
    let mut hi = s_range.1 - 1e-9;
    if !chrono(hi)? {
        return Ok(s_range.1);
    }
    let mut lo = s_range.0 + 1e-9;
    if chrono(lo)? {
        return Ok(lo);
    }
    while hi - lo > OBS_S_TOL {
        let mid = 0.5 * (lo + hi);
        if chrono(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // The not-yet-chronological side: the separation to the returned event
    // is exactly zero, matching the optimality of the earliest observation.
    Ok(lo)
}

/// Latest observer parameter from which x can be reached chronologically,
/// or the window bottom: the past counterpart of the plus function.
pub fn observation_time_minus(
    spec: &MetricSpec,
    curve: &dyn Fn(f64) -> Vec<f64>,
    s_range: (f64, f64),
    x: &[f64],
    backend: &TauBackend,
) -> Result<f64> {
    let chrono = |s: f64| -> Result<bool> {
        Ok(time_separation(spec, &curve(s), x, backend)? > TAU_TOL)
    };
    let mut lo = s_range.0 + 1e-9;
    if !chrono(lo)? {
        return Ok(s_range.0);
    }
    let mut hi = s_range.1 - 1e-9;
    if chrono(hi)? {
        return Ok(hi);
    }
    while hi - lo > OBS_S_TOL {
        let mid = 0.5 * (lo + hi);
        if chrono(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// One earliest observation event per family member.
pub fn earliest_obs_set(
    spec: &MetricSpec,
    family: &ObserverFamily,
    w: &[f64],
    backend: &TauBackend,
) -> Result<Vec<Vec<f64>>> {
    let mut events = Vec::with_capacity(family.a_grid.len());
    for idx in 0..family.a_grid.len() {
        let curve = family.curve(idx);
        let s = observation_time_plus(spec, &curve, family.s_range, w, backend)?;
        events.push(family.event(idx, s));
    }
    Ok(events)
}

/// Whether the broken null path x -> y -> z admits a timelike shortcut:
/// true exactly when the two legs are not one null pre-geodesic.
pub fn shortcut_check(
    spec: &MetricSpec,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    backend: &TauBackend,
    step: f64,
) -> Result<bool> {
    let same = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b.iter())
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
            < 1e-12
    };
    if same(x, y) || same(y, z) {
        return Err(Error::DegenerateInput(
            "shortcut check needs three distinct events".into(),
        ));
    }
    // Validate the two null legs.
    null_connect_events(spec, x, y, step)?;
    null_connect_events(spec, y, z, step)?;
    Ok(time_separation(spec, x, z, backend)? > TAU_TOL)
}

/// Proper length of the timelike geodesic segment from (x, p) over [0, T]:
/// the conserved mass times the parameter length (used by reparametrisation
/// studies and tests).
pub fn geodesic_proper_length(
    spec: &MetricSpec,
    x: &[f64],
    p: &[f64],
    t_final: f64,
    step: f64,
) -> Result<f64> {
    let path = geodesic_flow(spec, x, p, t_final, step)?;
    let gpp = spec.inner(x, p, p)?;
    Ok((-gpp).max(0.0).sqrt() * (path.end().s - path.samples[0].s).abs())
}
