//! Admissible collision kernels, quadrature over the momentum-conservation
//! set {p + q = p' + q'}, and the gain/loss halves of the collision
//! operator. The volume element on the constraint set is Lebesgue measure
//! in the free momentum chart coordinates.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::CoordBox;
use crate::kinetic::{integrate_backward_over_box, PhaseDensity};
use crate::quad::{gauss_legendre, plateau, smooth_step};
use crate::spacetime::MetricSpec;

type KernelFn = dyn Fn(&[f64], &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync;

/// Radial window for one momentum slot of the builtin kernel.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct MomentumBump {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl MomentumBump {
    fn eval(&self, v: &[f64]) -> f64 {
        let d: f64 = v
            .iter()
            .zip(self.center.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        plateau(d / self.radius)
    }

    fn support_box(&self) -> CoordBox {
        CoordBox::cube_around(&self.center, self.radius)
    }
}

enum KernelRepr {
    Builtin(BuiltinKernel),
    Custom(Arc<KernelFn>),
}

impl fmt::Debug for KernelRepr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelRepr::Builtin(_) => write!(f, "Builtin"),
            KernelRepr::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Clone for KernelRepr {
    fn clone(&self) -> Self {
        match self {
            KernelRepr::Builtin(b) => KernelRepr::Builtin(b.clone()),
            KernelRepr::Custom(f) => KernelRepr::Custom(f.clone()),
        }
    }
}

#[derive(Clone, Debug)]
struct BuiltinKernel {
    /// Spatial window on which the cutoff equals one.
    window: CoordBox,
    /// Transition width of the spatial cutoff.
    pad: f64,
    r0: f64,
    r1: f64,
    bump_q: MomentumBump,
    bump_p_out: MomentumBump,
    bump_q_out: MomentumBump,
    /// Lightlike reference momentum used by the positivity test set.
    reference_lightlike: Vec<f64>,
}

impl BuiltinKernel {
    fn eval(&self, x: &[f64], p: &[f64], q: &[f64], p_out: &[f64], q_out: &[f64]) -> f64 {
        let chi = box_plateau(x, &self.window, self.pad);
        if chi == 0.0 {
            return 0.0;
        }
        let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        let beta = smooth_step((p_norm - self.r0) / (self.r1 - self.r0));
        if beta == 0.0 {
            return 0.0;
        }
        let gq = self.bump_q.eval(q);
        if gq == 0.0 {
            return 0.0;
        }
        let gp = self.bump_p_out.eval(p_out);
        if gp == 0.0 {
            return 0.0;
        }
        let gqo = self.bump_q_out.eval(q_out);
        chi * beta * gq * gp * gqo
    }
}

/// Smooth cutoff equal to one on the box, vanishing beyond `pad` outside it.
fn box_plateau(x: &[f64], window: &CoordBox, pad: f64) -> f64 {
    let mut acc = 1.0;
    for (v, (lo, hi)) in x.iter().zip(window.lo.iter().zip(window.hi.iter())) {
        let rise = smooth_step((v - (lo - pad)) / pad);
        let fall = smooth_step(((hi + pad) - v) / pad);
        acc *= rise * fall;
        if acc == 0.0 {
            return 0.0;
        }
    }
    acc
}

/// Collision weight with support metadata used for quadrature windows and
/// admissibility checks.
#[derive(Clone, Debug)]
pub struct CollisionKernel {
    /// Projection of the kernel support to the base manifold.
    pub base_box: CoordBox,
    /// First-argument shell radii: the kernel vanishes for |p| below r0 and
    /// its momentum step saturates above r1.
    pub shell: (f64, f64),
    /// Box covering the momentum support of all of q, p', q'.
    pub momentum_box: CoordBox,
    /// Declared bound on the integrated kernel weight.
    pub declared_l1: f64,
    repr: KernelRepr,
}

/// Parameters of the builtin separable kernel.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct BuiltinKernelParams {
    pub r0: f64,
    pub r1: f64,
    /// Spatial transition width outside the window.
    pub pad: f64,
    /// Lightlike reference momentum for the positivity test set; rescaled
    /// to sit above r1.
    pub reference_spatial_dir: Vec<f64>,
    pub bump_q: MomentumBump,
    pub bump_p_out: MomentumBump,
    /// Radius of the outgoing-q window; its center is derived from momentum
    /// conservation on the reference tuple.
    pub radius_q_out: f64,
}

impl CollisionKernel {
    /// Separable kernel: spatial cutoff over `window` times a momentum
    /// shell step in p times radial windows in q, p', q'. The q' window is
    /// centred at the momentum-conservation image of the window centers, so
    /// the positivity test set is non-empty by construction.
    pub fn builtin(spec: &MetricSpec, window: &CoordBox, params: &BuiltinKernelParams) -> Result<Self> {
        if params.r0 >= params.r1 {
            return Err(Error::KernelParam(format!(
                "shell radii must satisfy r0 < r1, got ({}, {})",
                params.r0, params.r1
            )));
        }
        if params.pad <= 0.0 {
            return Err(Error::KernelParam("pad must be positive".into()));
        }
        let n = spec.n;
        if window.dim() != n {
            return Err(Error::KernelParam("window dimension mismatch".into()));
        }
        // Future lightlike reference above the shell.
        let center = window.center();
        let mut p_hat = spec.null_lift(&center, &params.reference_spatial_dir)?;
        let norm: f64 = p_hat.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = 1.25 * params.r1;
        for v in p_hat.iter_mut() {
            *v *= target / norm;
        }
        let center_q_out: Vec<f64> = (0..n)
            .map(|i| p_hat[i] + params.bump_q.center[i] - params.bump_p_out.center[i])
            .collect();
        let bump_q_out = MomentumBump {
            center: center_q_out,
            radius: params.radius_q_out,
        };
        let base_box = window.pad(params.pad);
        let momentum_box = params
            .bump_q
            .support_box()
            .hull(&params.bump_p_out.support_box())
            .hull(&bump_q_out.support_box());
        let declared_l1 =
            ball_volume(n, params.bump_q.radius) * ball_volume(n, params.bump_p_out.radius);
        Ok(CollisionKernel {
            base_box,
            shell: (params.r0, params.r1),
            momentum_box,
            declared_l1,
            repr: KernelRepr::Builtin(BuiltinKernel {
                window: window.clone(),
                pad: params.pad,
                r0: params.r0,
                r1: params.r1,
                bump_q: params.bump_q.clone(),
                bump_p_out: params.bump_p_out.clone(),
                bump_q_out,
                reference_lightlike: p_hat,
            }),
        })
    }

    pub fn custom<F>(
        f: F,
        base_box: CoordBox,
        shell: (f64, f64),
        momentum_box: CoordBox,
        declared_l1: f64,
    ) -> Self
    where
        F: Fn(&[f64], &[f64], &[f64], &[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        CollisionKernel {
            base_box,
            shell,
            momentum_box,
            declared_l1,
            repr: KernelRepr::Custom(Arc::new(f)),
        }
    }

    pub fn zero(n: usize) -> Self {
        let unit = CoordBox::new(vec![0.0; n], vec![1.0; n]);
        CollisionKernel {
            base_box: unit.clone(),
            shell: (0.5, 1.0),
            momentum_box: unit,
            declared_l1: 0.0,
            repr: KernelRepr::Custom(Arc::new(|_, _, _, _, _| 0.0)),
        }
    }

    #[inline]
    pub fn eval(&self, x: &[f64], p: &[f64], q: &[f64], p_out: &[f64], q_out: &[f64]) -> f64 {
        if !self.base_box.contains(x) {
            return 0.0;
        }
        match &self.repr {
            KernelRepr::Builtin(b) => b.eval(x, p, q, p_out, q_out),
            KernelRepr::Custom(f) => f(x, p, q, p_out, q_out),
        }
    }

    /// Momentum windows of the q / p' / q' slots for the builtin kernel.
    pub fn slot_boxes(&self) -> Option<[CoordBox; 3]> {
        match &self.repr {
            KernelRepr::Builtin(b) => Some([
                b.bump_q.support_box(),
                b.bump_p_out.support_box(),
                b.bump_q_out.support_box(),
            ]),
            KernelRepr::Custom(_) => None,
        }
    }

    pub fn reference_lightlike(&self) -> Option<&[f64]> {
        match &self.repr {
            KernelRepr::Builtin(b) => Some(&b.reference_lightlike),
            KernelRepr::Custom(_) => None,
        }
    }
}

fn ball_volume(n: usize, r: f64) -> f64 {
    // V_n = V_{n-2} 2 pi r^2 / n, V_0 = 1, V_1 = 2r.
    let mut even = 1.0;
    let mut odd = 2.0 * r;
    if n == 0 {
        return 1.0;
    }
    if n == 1 {
        return odd;
    }
    let mut k = 2;
    loop {
        let next = if k % 2 == 0 { &mut even } else { &mut odd };
        *next *= 2.0 * std::f64::consts::PI * r * r / k as f64;
        if k == n {
            return *next;
        }
        k += 1;
    }
}

/// Tensor-product Gauss-Legendre rule over the free momentum coordinates.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SigmaQuadRule {
    pub nodes_q: usize,
    pub nodes_p_out: usize,
    pub box_q: CoordBox,
    pub box_p_out: CoordBox,
}

impl SigmaQuadRule {
    pub fn new(nodes_q: usize, nodes_p_out: usize, box_q: CoordBox, box_p_out: CoordBox) -> Self {
        assert!(nodes_q >= 2 && nodes_p_out >= 2);
        SigmaQuadRule {
            nodes_q,
            nodes_p_out,
            box_q,
            box_p_out,
        }
    }

    /// Rule matched to a kernel's momentum support.
    pub fn for_kernel(kernel: &CollisionKernel, nodes: usize) -> Self {
        SigmaQuadRule::new(
            nodes,
            nodes,
            kernel.momentum_box.clone(),
            kernel.momentum_box.clone(),
        )
    }
}

/// Per-axis nodes and weights of a tensor rule over `bbox`.
fn tensor_nodes(bbox: &CoordBox, per_axis: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (nodes, weights) = gauss_legendre(per_axis);
    let mut all_nodes = Vec::with_capacity(bbox.dim());
    let mut all_weights = Vec::with_capacity(bbox.dim());
    for d in 0..bbox.dim() {
        let mid = 0.5 * (bbox.lo[d] + bbox.hi[d]);
        let half = 0.5 * (bbox.hi[d] - bbox.lo[d]);
        all_nodes.push(nodes.iter().map(|t| mid + half * t).collect());
        all_weights.push(weights.iter().map(|w| w * half).collect());
    }
    (all_nodes, all_weights)
}

/// Iterate a multi-index over `counts`, calling `f` with the flat index set.
fn for_each_multi_index(counts: &[usize], mut f: impl FnMut(&[usize])) {
    let dims = counts.len();
    let mut idx = vec![0usize; dims];
    if counts.iter().any(|&c| c == 0) {
        return;
    }
    loop {
        f(&idx);
        let mut d = 0;
        loop {
            if d == dims {
                return;
            }
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Quadrature of `integrand(q, p', q')` over the conservation set at (x, p):
/// tensor nodes in the free coordinates (q, p'), with q' = p + q - p'
/// substituted exactly at every node.
pub fn sigma_quadrature<F>(rule: &SigmaQuadRule, _x: &[f64], p: &[f64], mut integrand: F) -> f64
where
    F: FnMut(&[f64], &[f64], &[f64]) -> f64,
{
    let n = p.len();
    let (qn, qw) = tensor_nodes(&rule.box_q, rule.nodes_q);
    let (pn, pw) = tensor_nodes(&rule.box_p_out, rule.nodes_p_out);
    let mut total = 0.0;
    let q_counts = vec![rule.nodes_q; n];
    let p_counts = vec![rule.nodes_p_out; n];
    let mut q = vec![0.0; n];
    let mut p_out = vec![0.0; n];
    let mut q_out = vec![0.0; n];
    for_each_multi_index(&q_counts, |qi| {
        let mut wq = 1.0;
        for d in 0..n {
            q[d] = qn[d][qi[d]];
            wq *= qw[d][qi[d]];
        }
        for_each_multi_index(&p_counts, |pi| {
            let mut w = wq;
            for d in 0..n {
                p_out[d] = pn[d][pi[d]];
                w *= pw[d][pi[d]];
                q_out[d] = p[d] + q[d] - p_out[d];
            }
            total += w * integrand(&q, &p_out, &q_out);
        });
    });
    total
}

/// Gain half of the collision operator (carries the sign of the full
/// operator's outgoing term):
/// -int u1(x, p') u2(x, q') A(x, p, q, p', q') dV.
pub fn q_gain(
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    if !kernel.base_box.contains(x) {
        return Ok(0.0);
    }
    let mut err = None;
    let val = sigma_quadrature(rule, x, p, |q, p_out, q_out| {
        let a = kernel.eval(x, p, q, p_out, q_out);
        if a == 0.0 {
            return 0.0;
        }
        let v1 = match u1.eval(x, p_out) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                return 0.0;
            }
        };
        if v1 == 0.0 {
            return 0.0;
        }
        let v2 = match u2.eval(x, q_out) {
            Ok(v) => v,
            Err(e) => {
                err = Some(e);
                return 0.0;
            }
        };
        v1 * v2 * a
    });
    match err {
        Some(e) => Err(e),
        None => Ok(-val),
    }
}

/// Loss half of the collision operator:
/// u1(x, p) int u2(x, q) A(x, p, q, p', q') dV.
pub fn q_loss(
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    if !kernel.base_box.contains(x) {
        return Ok(0.0);
    }
    let prefactor = u1.eval(x, p)?;
    if prefactor == 0.0 {
        return Ok(0.0);
    }
    let mut err = None;
    let val = sigma_quadrature(rule, x, p, |q, p_out, q_out| {
        let a = kernel.eval(x, p, q, p_out, q_out);
        if a == 0.0 {
            return 0.0;
        }
        match u2.eval(x, q) {
            Ok(v) => v * a,
            Err(e) => {
                err = Some(e);
                0.0
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(prefactor * val),
    }
}

/// Full collision operator: loss plus (signed) gain.
pub fn q_full(
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    Ok(q_loss(kernel, rule, u1, u2, x, p)? + q_gain(kernel, rule, u1, u2, x, p)?)
}

/// Gain evaluation with quadrature windows tightened to the momentum
/// supports of the densities; integrates over (p', q') with q substituted
/// by conservation. Used where the densities are far narrower than the
/// kernel windows. Same integral as `q_gain`, different node placement.
pub fn q_gain_concentrated(
    kernel: &CollisionKernel,
    nodes_per_axis: usize,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    if !kernel.base_box.contains(x) {
        return Ok(0.0);
    }
    let n = p.len();
    let slots = kernel.slot_boxes();
    let narrow = |slot: usize, dens: &PhaseDensity| -> Option<CoordBox> {
        let kernel_box = slots
            .as_ref()
            .map(|s| s[slot].clone())
            .unwrap_or_else(|| kernel.momentum_box.clone());
        match &dens.support.momentum {
            Some(b) => kernel_box.intersect(b),
            None => Some(kernel_box),
        }
    };
    let Some(box_p_out) = narrow(1, u1) else {
        return Ok(0.0);
    };
    let Some(box_q_out) = narrow(2, u2) else {
        return Ok(0.0);
    };
    let (pn, pw) = tensor_nodes(&box_p_out, nodes_per_axis);
    let (qn, qw) = tensor_nodes(&box_q_out, nodes_per_axis);
    let counts = vec![nodes_per_axis; n];

    // Pre-evaluate the separated density factors on their node sets.
    let mut p_nodes: Vec<(Vec<f64>, f64, f64)> = Vec::new(); // (p', weight, u1)
    let mut res: Result<()> = Ok(());
    for_each_multi_index(&counts, |pi| {
        if res.is_err() {
            return;
        }
        let mut w = 1.0;
        let mut v = vec![0.0; n];
        for d in 0..n {
            v[d] = pn[d][pi[d]];
            w *= pw[d][pi[d]];
        }
        match u1.eval(x, &v) {
            Ok(u) => p_nodes.push((v, w, u)),
            Err(e) => res = Err(e),
        }
    });
    res?;
    let mut q_nodes: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut res: Result<()> = Ok(());
    for_each_multi_index(&counts, |qi| {
        if res.is_err() {
            return;
        }
        let mut w = 1.0;
        let mut v = vec![0.0; n];
        for d in 0..n {
            v[d] = qn[d][qi[d]];
            w *= qw[d][qi[d]];
        }
        match u2.eval(x, &v) {
            Ok(u) => q_nodes.push((v, w, u)),
            Err(e) => res = Err(e),
        }
    });
    res?;

    let mut total = 0.0;
    let mut q_in = vec![0.0; n];
    for (p_out, wp, v1) in &p_nodes {
        if *v1 == 0.0 {
            continue;
        }
        for (q_out, wq, v2) in &q_nodes {
            if *v2 == 0.0 {
                continue;
            }
            for d in 0..n {
                q_in[d] = p_out[d] + q_out[d] - p[d];
            }
            let a = kernel.eval(x, p, &q_in, p_out, q_out);
            if a != 0.0 {
                total += wp * wq * v1 * v2 * a;
            }
        }
    }
    Ok(-total)
}

/// Loss evaluation with the q window tightened to the momentum support of
/// the second density. Same integral as `q_loss`, different node placement.
pub fn q_loss_concentrated(
    kernel: &CollisionKernel,
    nodes_per_axis: usize,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    if !kernel.base_box.contains(x) {
        return Ok(0.0);
    }
    let prefactor = u1.eval(x, p)?;
    if prefactor == 0.0 {
        return Ok(0.0);
    }
    let n = p.len();
    let slots = kernel.slot_boxes();
    let kernel_q = slots
        .as_ref()
        .map(|s| s[0].clone())
        .unwrap_or_else(|| kernel.momentum_box.clone());
    let box_q = match &u2.support.momentum {
        Some(b) => match kernel_q.intersect(b) {
            Some(i) => i,
            None => return Ok(0.0),
        },
        None => kernel_q,
    };
    let box_p_out = slots
        .as_ref()
        .map(|s| s[1].clone())
        .unwrap_or_else(|| kernel.momentum_box.clone());
    let (qn, qw) = tensor_nodes(&box_q, nodes_per_axis);
    let (pn, pw) = tensor_nodes(&box_p_out, nodes_per_axis);
    let counts = vec![nodes_per_axis; n];
    let mut q_nodes: Vec<(Vec<f64>, f64, f64)> = Vec::new();
    let mut res: Result<()> = Ok(());
    for_each_multi_index(&counts, |qi| {
        if res.is_err() {
            return;
        }
        let mut w = 1.0;
        let mut v = vec![0.0; n];
        for d in 0..n {
            v[d] = qn[d][qi[d]];
            w *= qw[d][qi[d]];
        }
        match u2.eval(x, &v) {
            Ok(u) => q_nodes.push((v, w, u)),
            Err(e) => res = Err(e),
        }
    });
    res?;
    let mut total = 0.0;
    let mut q_out = vec![0.0; n];
    let mut p_out = vec![0.0; n];
    for (q, wq, v2) in &q_nodes {
        if *v2 == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        for_each_multi_index(&counts, |pi| {
            let mut w = 1.0;
            for d in 0..n {
                p_out[d] = pn[d][pi[d]];
                w *= pw[d][pi[d]];
                q_out[d] = p[d] + q[d] - p_out[d];
            }
            let a = kernel.eval(x, p, q, &p_out, &q_out);
            if a != 0.0 {
                inner += w * a;
            }
        });
        total += wq * v2 * inner;
    }
    Ok(prefactor * total)
}

/// Full operator with support-tightened nodes for narrow densities.
pub fn q_full_concentrated(
    kernel: &CollisionKernel,
    nodes_per_axis: usize,
    u1: &PhaseDensity,
    u2: &PhaseDensity,
    x: &[f64],
    p: &[f64],
) -> Result<f64> {
    Ok(q_loss_concentrated(kernel, nodes_per_axis, u1, u2, x, p)?
        + q_gain_concentrated(kernel, nodes_per_axis, u1, u2, x, p)?)
}

/// Integral of the full collision operator along the backward flow from
/// (x, p), over the parameter range where the base point meets the kernel's
/// base box.
pub fn q_along_flow(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    u: &PhaseDensity,
    v: &PhaseDensity,
    x: &[f64],
    p: &[f64],
    step: f64,
) -> Result<f64> {
    integrate_backward_over_box(spec, x, p, &kernel.base_box, step, |xs, ps| {
        q_full(kernel, rule, u, v, xs, ps)
    })
}

/// Sampling-based admissibility report for the kernel support, positivity,
/// integrability and shell-vanishing conditions.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AdmissibilityReport {
    pub cond2_pass: bool,
    pub cond3_min_value: f64,
    pub cond3_pass: bool,
    pub cond4_max_l1: f64,
    pub declared_l1: f64,
    pub cond4_pass: bool,
    pub cond5_profile: Vec<(f64, f64)>,
    pub cond5_pass: bool,
}

impl AdmissibilityReport {
    pub fn all_pass(&self) -> bool {
        self.cond2_pass && self.cond3_pass && self.cond4_pass && self.cond5_pass
    }
}

pub fn check_admissible(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    seed: u64,
    samples: usize,
) -> Result<AdmissibilityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;

    // Condition 2: vanishing outside the compact base box.
    let mut cond2_pass = true;
    for _ in 0..samples {
        let mut x = kernel.base_box.center();
        let d = rng.gen_range(0..n);
        let half = 0.5 * (kernel.base_box.hi[d] - kernel.base_box.lo[d]);
        x[d] = kernel.base_box.hi[d] + half * (0.1 + rng.gen::<f64>());
        let p = random_future_causal(spec, &mut rng, &x, 2.0 * kernel.shell.1);
        let q = random_in_box(&mut rng, &kernel.momentum_box);
        let p_out = random_in_box(&mut rng, &kernel.momentum_box);
        let q_out: Vec<f64> = (0..n).map(|i| p[i] + q[i] - p_out[i]).collect();
        if kernel.eval(&x, &p, &q, &p_out, &q_out) != 0.0 {
            cond2_pass = false;
        }
    }

    // Condition 3: positivity on a lightlike test set over the window,
    // built around the kernel's reference tuple so momentum conservation
    // keeps all slots inside their windows.
    let mut cond3_min = f64::INFINITY;
    if let (Some(p_hat), Some(slots)) = (kernel.reference_lightlike(), kernel.slot_boxes()) {
        for _ in 0..samples {
            let x = random_in_box_shrunk(&mut rng, &kernel.base_box, 0.35);
            // Perturb the reference lightlike direction slightly, staying null.
            let mut spatial: Vec<f64> = p_hat[1..].to_vec();
            for v in spatial.iter_mut() {
                *v *= 1.0 + 0.02 * (rng.gen::<f64>() - 0.5);
            }
            let p = spec.null_lift(&x, &spatial)?;
            let q = jitter_around(&mut rng, &slots[0], 0.1);
            let p_out = jitter_around(&mut rng, &slots[1], 0.1);
            let q_out: Vec<f64> = (0..n).map(|i| p[i] + q[i] - p_out[i]).collect();
            let a = kernel.eval(&x, &p, &q, &p_out, &q_out);
            cond3_min = cond3_min.min(a);
        }
    } else {
        cond3_min = f64::NAN;
    }
    let cond3_pass = cond3_min.is_finite() && cond3_min > 0.0;

    // Condition 4: integrated weight bounded by the declared constant, also
    // for large momenta.
    let mut cond4_max: f64 = 0.0;
    for i in 0..samples {
        let x = random_in_box(&mut rng, &kernel.base_box);
        let scale = if i % 3 == 0 {
            20.0 * kernel.shell.1
        } else {
            2.0 * kernel.shell.1
        };
        let p = random_future_causal(spec, &mut rng, &x, scale);
        let l1 = sigma_quadrature(rule, &x, &p, |q, p_out, q_out| {
            kernel.eval(&x, &p, q, p_out, q_out).abs()
        });
        cond4_max = cond4_max.max(l1);
    }
    let cond4_pass = cond4_max <= kernel.declared_l1;

    // Condition 5: the scaling profile lambda -> |A(x, lambda p)|_L1
    // vanishes identically below the shell.
    let x = kernel.base_box.center();
    let p_ref = match kernel.reference_lightlike() {
        Some(p) => p.to_vec(),
        None => random_future_causal(spec, &mut rng, &x, 2.0 * kernel.shell.1),
    };
    let p_norm: f64 = p_ref.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lambda_shell = kernel.shell.0 / p_norm;
    let mut cond5_profile = Vec::new();
    let mut cond5_pass = true;
    for k in 0..=24 {
        let lambda = 2.5 * lambda_shell * k as f64 / 24.0;
        let p: Vec<f64> = p_ref.iter().map(|v| lambda * v).collect();
        let f = sigma_quadrature(rule, &x, &p, |q, p_out, q_out| {
            kernel.eval(&x, &p, q, p_out, q_out).abs()
        });
        if lambda * p_norm < kernel.shell.0 && f != 0.0 {
            cond5_pass = false;
        }
        cond5_profile.push((lambda, f));
    }

    Ok(AdmissibilityReport {
        cond2_pass,
        cond3_min_value: cond3_min,
        cond3_pass,
        cond4_max_l1: cond4_max,
        declared_l1: kernel.declared_l1,
        cond4_pass,
        cond5_profile,
        cond5_pass,
    })
}

/// Measured bound on the flow-integrated collision operator over random
/// unit-sup density pairs; the returned constant carries a safety factor.
pub fn measure_interaction_bound(
    spec: &MetricSpec,
    kernel: &CollisionKernel,
    rule: &SigmaQuadRule,
    step: f64,
    seed: u64,
    pairs: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let u = random_unit_density(&mut rng, kernel);
        let v = random_unit_density(&mut rng, kernel);
        for _ in 0..3 {
            let x = random_in_box(&mut rng, &kernel.base_box.pad(0.3));
            let p = random_future_causal(spec, &mut rng, &x, 2.0 * kernel.shell.1);
            let val = q_along_flow(spec, kernel, rule, &u, &v, &x, &p, step)?;
            worst = worst.max(val.abs());
        }
    }
    Ok(1.5 * worst.max(1e-12))
}

/// Random smooth density with sup exactly 1, supported in a box drawn
/// around the kernel's region of influence.
pub fn random_unit_density(rng: &mut ChaCha8Rng, kernel: &CollisionKernel) -> PhaseDensity {
    let nb = kernel.base_box.dim();
    let cx = random_in_box(rng, &kernel.base_box);
    let cp = random_in_box(rng, &kernel.momentum_box);
    let wx: Vec<f64> = (0..nb).map(|_| 0.3 + 0.7 * rng.gen::<f64>()).collect();
    let wp: Vec<f64> = (0..nb).map(|_| 0.3 + 0.7 * rng.gen::<f64>()).collect();
    let base = CoordBox {
        lo: cx.iter().zip(wx.iter()).map(|(c, w)| c - w).collect(),
        hi: cx.iter().zip(wx.iter()).map(|(c, w)| c + w).collect(),
    };
    let momentum = CoordBox {
        lo: cp.iter().zip(wp.iter()).map(|(c, w)| c - w).collect(),
        hi: cp.iter().zip(wp.iter()).map(|(c, w)| c + w).collect(),
    };
    let cx2 = cx.clone();
    let cp2 = cp.clone();
    let wx2 = wx.clone();
    let wp2 = wp.clone();
    PhaseDensity::analytic(
        move |x, p| {
            let mut acc = 1.0;
            for i in 0..cx2.len() {
                acc *= plateau((x[i] - cx2[i]).abs() / wx2[i]);
                if acc == 0.0 {
                    return 0.0;
                }
            }
            for i in 0..cp2.len() {
                acc *= plateau((p[i] - cp2[i]).abs() / wp2[i]);
                if acc == 0.0 {
                    return 0.0;
                }
            }
            acc
        },
        crate::kinetic::Support {
            base: Some(base),
            momentum: Some(momentum),
        },
        true,
    )
}

pub fn random_in_box(rng: &mut ChaCha8Rng, b: &CoordBox) -> Vec<f64> {
    b.lo.iter()
        .zip(b.hi.iter())
        .map(|(lo, hi)| lo + (hi - lo) * rng.gen::<f64>())
        .collect()
}

fn random_in_box_shrunk(rng: &mut ChaCha8Rng, b: &CoordBox, factor: f64) -> Vec<f64> {
    let c = b.center();
    (0..b.dim())
        .map(|d| {
            let half = 0.5 * (b.hi[d] - b.lo[d]) * factor;
            c[d] + half * (2.0 * rng.gen::<f64>() - 1.0)
        })
        .collect()
}

fn jitter_around(rng: &mut ChaCha8Rng, b: &CoordBox, rel: f64) -> Vec<f64> {
    let c = b.center();
    (0..b.dim())
        .map(|d| {
            let half = 0.5 * (b.hi[d] - b.lo[d]);
            c[d] + rel * half * (2.0 * rng.gen::<f64>() - 1.0)
        })
        .collect()
}

/// Random future causal momentum with Euclidean size near `scale`.
pub fn random_future_causal(
    spec: &MetricSpec,
    rng: &mut ChaCha8Rng,
    x: &[f64],
    scale: f64,
) -> Vec<f64> {
    let n = spec.n;
    loop {
        let spatial: Vec<f64> = (0..n - 1).map(|_| 2.0 * rng.gen::<f64>() - 1.0).collect();
        let tilt = 1.0 + rng.gen::<f64>(); // strictly inside the cone
        if let Ok(mut p) = spec.null_lift(x, &spatial) {
            if p[0] == 0.0 {
                continue;
            }
            p[0] *= tilt;
            let norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in p.iter_mut() {
                *v *= scale / norm;
            }
            if spec.is_future_causal(x, &p) {
                return p;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::Support;

    fn chart(n: usize) -> CoordBox {
        CoordBox::cube_around(&vec![0.0; n], 20.0)
    }

    fn test_kernel(spec: &MetricSpec) -> CollisionKernel {
        let window = CoordBox::cube_around(&vec![0.5, 0.0, 0.0], 0.6);
        let params = BuiltinKernelParams {
            r0: 0.5,
            r1: 2.0,
            pad: 0.4,
            reference_spatial_dir: vec![1.0, 0.0],
            bump_q: MomentumBump {
                center: vec![1.4, -0.2, 0.0],
                radius: 1.0,
            },
            bump_p_out: MomentumBump {
                center: vec![1.4, 0.3, 0.2],
                radius: 1.0,
            },
            radius_q_out: 1.0,
        };
        CollisionKernel::builtin(spec, &window, &params).unwrap()
    }

    #[test]
    fn builtin_rejects_inverted_shell() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let window = CoordBox::cube_around(&vec![0.0; 3], 0.5);
        let params = BuiltinKernelParams {
            r0: 2.0,
            r1: 0.5,
            pad: 0.2,
            reference_spatial_dir: vec![1.0, 0.0],
            bump_q: MomentumBump {
                center: vec![1.0, 0.0, 0.0],
                radius: 0.5,
            },
            bump_p_out: MomentumBump {
                center: vec![1.0, 0.0, 0.0],
                radius: 0.5,
            },
            radius_q_out: 0.5,
        };
        assert!(matches!(
            CollisionKernel::builtin(&spec, &window, &params),
            Err(Error::KernelParam(_))
        ));
    }

    #[test]
    fn builtin_positive_on_reference_tuple() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let x = vec![0.5, 0.0, 0.0];
        let p = kernel.reference_lightlike().unwrap().to_vec();
        let slots = kernel.slot_boxes().unwrap();
        let q = slots[0].center();
        let p_out = slots[1].center();
        let q_out: Vec<f64> = (0..3).map(|i| p[i] + q[i] - p_out[i]).collect();
        let a = kernel.eval(&x, &p, &q, &p_out, &q_out);
        assert!(a > 0.0, "kernel value {a}");
        // |p| above the shell top.
        let p_norm: f64 = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(p_norm > kernel.shell.1);
    }

    #[test]
    fn builtin_vanishes_below_shell_and_outside_base() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let slots = kernel.slot_boxes().unwrap();
        let q = slots[0].center();
        let p_out = slots[1].center();
        // lambda |p| below r0 kills the kernel for every outgoing choice.
        let p = vec![0.2, 0.1, 0.0];
        let q_out: Vec<f64> = (0..3).map(|i| p[i] + q[i] - p_out[i]).collect();
        assert_eq!(kernel.eval(&[0.5, 0.0, 0.0], &p, &q, &p_out, &q_out), 0.0);
        // outside the padded window in space.
        let p_hat = kernel.reference_lightlike().unwrap().to_vec();
        let q_out2: Vec<f64> = (0..3).map(|i| p_hat[i] + q[i] - p_out[i]).collect();
        assert_eq!(
            kernel.eval(&[5.0, 0.0, 0.0], &p_hat, &q, &p_out, &q_out2),
            0.0
        );
    }

    #[test]
    fn sigma_quadrature_is_exact_for_box_indicators() {
        let bq = CoordBox::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 0.5]);
        let bp = CoordBox::new(vec![-1.0, 0.0, 0.0], vec![1.0, 1.0, 1.0]);
        let rule = SigmaQuadRule::new(4, 4, bq.clone(), bp.clone());
        let v = sigma_quadrature(&rule, &[0.0; 3], &[1.0, 0.0, 0.0], |_, _, _| 1.0);
        let expected = bq.volume() * bp.volume();
        assert!((v - expected).abs() < 1e-10, "{v} vs {expected}");
    }

    #[test]
    fn sigma_quadrature_conserves_momentum_at_every_node() {
        let bq = CoordBox::cube_around(&vec![1.0, 0.0, 0.0], 0.7);
        let bp = CoordBox::cube_around(&vec![0.8, 0.2, 0.0], 0.7);
        let rule = SigmaQuadRule::new(3, 3, bq, bp);
        let p = vec![1.3, -0.4, 0.2];
        let mut max_violation: f64 = 0.0;
        sigma_quadrature(&rule, &[0.0; 3], &p, |q, p_out, q_out| {
            for d in 0..3 {
                max_violation = max_violation.max((p[d] + q[d] - p_out[d] - q_out[d]).abs());
            }
            0.0
        });
        assert_eq!(max_violation, 0.0);
    }

    #[test]
    fn sigma_quadrature_matches_riemann_oracle_for_shifted_integrand() {
        // Integrand depending only on q' = p + q - p'.
        let bq = CoordBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let bp = CoordBox::new(vec![0.0, 0.0], vec![1.0, 1.0]);
        let rule = SigmaQuadRule::new(8, 8, bq.clone(), bp.clone());
        let p = vec![0.3, 0.1];
        let f = |q_out: &[f64]| (q_out[0] - 0.2).cos() * (0.5 * q_out[1]).sin().powi(2);
        let got = sigma_quadrature(&rule, &[0.0; 2], &p, |_, _, q_out| f(q_out));

        // Dense midpoint Riemann sum at 4x the node density.
        let m = 32;
        let mut oracle = 0.0;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let q = [
                            (i as f64 + 0.5) / m as f64,
                            (j as f64 + 0.5) / m as f64,
                        ];
                        let p_out = [
                            (k as f64 + 0.5) / m as f64,
                            (l as f64 + 0.5) / m as f64,
                        ];
                        let q_out = [p[0] + q[0] - p_out[0], p[1] + q[1] - p_out[1]];
                        oracle += f(&q_out) / (m as f64).powi(4);
                    }
                }
            }
        }
        assert!((got - oracle).abs() < 1e-4, "{got} vs {oracle}");
    }

    #[test]
    fn sigma_quadrature_node_doubling_is_stable_for_smooth_integrands() {
        let bq = CoordBox::cube_around(&vec![0.5, 0.5], 0.5);
        let bp = CoordBox::cube_around(&vec![0.5, 0.5], 0.5);
        let p = vec![0.2, 0.4];
        let f = |q: &[f64], p_out: &[f64], q_out: &[f64]| {
            (q[0] + 0.3 * p_out[1]).cos() * (-q_out[0] * q_out[0] - 0.2 * q_out[1]).exp()
        };
        let r1 = SigmaQuadRule::new(6, 6, bq.clone(), bp.clone());
        let r2 = SigmaQuadRule::new(12, 12, bq, bp);
        let v1 = sigma_quadrature(&r1, &[0.0; 2], &p, f);
        let v2 = sigma_quadrature(&r2, &[0.0; 2], &p, f);
        assert!((v1 - v2).abs() < 1e-6, "{v1} vs {v2}");
    }

    fn gaussian_like(center_p: Vec<f64>, width: f64, base: CoordBox) -> PhaseDensity {
        let momentum = CoordBox::cube_around(&center_p, 4.0 * width);
        let cp = center_p.clone();
        PhaseDensity::analytic(
            move |_x, p| {
                let d2: f64 = p
                    .iter()
                    .zip(cp.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (-d2 / (2.0 * width * width)).exp()
            },
            Support {
                base: Some(base),
                momentum: Some(momentum),
            },
            true,
        )
    }

    #[test]
    fn gain_vanishes_for_disjoint_spatial_supports() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let rule = SigmaQuadRule::for_kernel(&kernel, 4);
        let far = CoordBox::cube_around(&vec![9.0, 9.0, 9.0], 0.3);
        let u1 = gaussian_like(vec![1.4, 0.0, 0.0], 0.5, far.clone());
        let u2 = gaussian_like(vec![1.4, 0.0, 0.0], 0.5, far);
        let x = vec![0.5, 0.0, 0.0];
        let p = kernel.reference_lightlike().unwrap().to_vec();
        assert_eq!(q_gain(&kernel, &rule, &u1, &u2, &x, &p).unwrap(), 0.0);
    }

    #[test]
    fn gain_vanishes_for_zero_kernel() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = CollisionKernel::zero(3);
        let rule = SigmaQuadRule::for_kernel(&kernel, 4);
        let b = CoordBox::cube_around(&vec![0.5, 0.0, 0.0], 2.0);
        let u = gaussian_like(vec![1.4, 0.0, 0.0], 0.5, b.clone());
        let v = gaussian_like(vec![1.2, 0.2, 0.0], 0.5, b);
        assert_eq!(
            q_gain(&kernel, &rule, &u, &v, &[0.5, 0.0, 0.0], &[2.6, 2.4, 0.0]).unwrap(),
            0.0
        );
    }

    #[test]
    fn gain_matches_dense_riemann_oracle() {
        // Smooth custom kernel in n = 2 so both quadratures converge fast
        // enough for a tight cross-check.
        let spec = MetricSpec::minkowski(2, chart(2));
        let base = CoordBox::cube_around(&vec![0.5, 0.0], 1.0);
        let mom = CoordBox::new(vec![-0.5, -0.5], vec![1.5, 1.5]);
        let w2 = 0.5f64 * 0.5;
        let kernel = CollisionKernel::custom(
            move |_x, _p, q: &[f64], p_out: &[f64], q_out: &[f64]| {
                let d2 = (q[0] - 0.6).powi(2)
                    + (q[1] - 0.2).powi(2)
                    + (p_out[0] - 0.4).powi(2)
                    + (p_out[1] - 0.3).powi(2)
                    + (q_out[0] - 0.7).powi(2)
                    + (q_out[1] + 0.1).powi(2);
                (-d2 / w2).exp()
            },
            base.clone(),
            (0.1, 0.5),
            mom.clone(),
            10.0,
        );
        let rule = SigmaQuadRule::new(16, 16, mom.clone(), mom.clone());
        let u1 = gaussian_like(vec![0.5, 0.2], 0.6, base.clone());
        let u2 = gaussian_like(vec![0.6, -0.1], 0.6, base);
        let x = vec![0.5, 0.0];
        let p = vec![0.8, 0.3];
        let got = q_gain(&kernel, &rule, &u1, &u2, &x, &p).unwrap();

        // Dense midpoint sum over the same boxes.
        let m = 100usize;
        let step = (mom.hi[0] - mom.lo[0]) / m as f64;
        let cell = step * step;
        let mut oracle = 0.0;
        for i in 0..m {
            for j in 0..m {
                let q = [
                    mom.lo[0] + (i as f64 + 0.5) * step,
                    mom.lo[1] + (j as f64 + 0.5) * step,
                ];
                for k in 0..m {
                    for l in 0..m {
                        let p_out = [
                            mom.lo[0] + (k as f64 + 0.5) * step,
                            mom.lo[1] + (l as f64 + 0.5) * step,
                        ];
                        let q_out = [p[0] + q[0] - p_out[0], p[1] + q[1] - p_out[1]];
                        let av = kernel.eval(&x, &p, &q, &p_out, &q_out);
                        let v1 = u1.eval(&x, &p_out).unwrap();
                        if v1 == 0.0 {
                            continue;
                        }
                        let v2 = u2.eval(&x, &q_out).unwrap();
                        oracle += v1 * v2 * av * cell * cell;
                    }
                }
            }
        }
        oracle = -oracle;
        assert!(
            (got - oracle).abs() < 1e-4 * oracle.abs().max(1e-12),
            "{got} vs {oracle}"
        );
    }

    #[test]
    fn loss_prefactor_short_circuits() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let rule = SigmaQuadRule::for_kernel(&kernel, 4);
        let b = CoordBox::cube_around(&vec![0.5, 0.0, 0.0], 2.0);
        // u1 supported on a momentum box that excludes the evaluation p.
        let u1 = gaussian_like(vec![1.4, 0.0, 0.0], 0.2, b.clone());
        let u2 = gaussian_like(vec![1.2, 0.1, 0.0], 0.5, b);
        let x = vec![0.5, 0.0, 0.0];
        let p = vec![9.0, 8.9, 0.0];
        assert_eq!(q_loss(&kernel, &rule, &u1, &u2, &x, &p).unwrap(), 0.0);
    }

    #[test]
    fn full_operator_is_bilinear() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let rule = SigmaQuadRule::for_kernel(&kernel, 4);
        let b = CoordBox::cube_around(&vec![0.5, 0.0, 0.0], 2.0);
        let u = gaussian_like(vec![1.4, 0.3, 0.0], 0.7, b.clone());
        let v = gaussian_like(vec![1.1, -0.2, 0.1], 0.6, b.clone());
        let w = gaussian_like(vec![1.3, 0.0, -0.2], 0.8, b);
        let x = vec![0.55, 0.05, -0.02];
        let p = kernel.reference_lightlike().unwrap().to_vec();

        let uv = PhaseDensity::sum(vec![u.clone(), v.clone()]);
        let lhs = q_full(&kernel, &rule, &uv, &w, &x, &p).unwrap();
        let rhs = q_full(&kernel, &rule, &u, &w, &x, &p).unwrap()
            + q_full(&kernel, &rule, &v, &w, &x, &p).unwrap();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");

        // Second slot.
        let lhs2 = q_full(&kernel, &rule, &w, &uv, &x, &p).unwrap();
        let rhs2 = q_full(&kernel, &rule, &w, &u, &x, &p).unwrap()
            + q_full(&kernel, &rule, &w, &v, &x, &p).unwrap();
        assert!((lhs2 - rhs2).abs() < 1e-10);
    }

    #[test]
    fn concentrated_gain_agrees_with_wide_rule() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let b = CoordBox::cube_around(&vec![0.5, 0.0, 0.0], 2.0);
        let u1 = gaussian_like(vec![1.4, 0.3, 0.2], 0.45, b.clone());
        let u2 = gaussian_like(vec![1.2, -0.1, 0.1], 0.45, b);
        let x = vec![0.5, 0.0, 0.0];
        let p = kernel.reference_lightlike().unwrap().to_vec();
        let rule = SigmaQuadRule::for_kernel(&kernel, 16);
        let wide = q_gain(&kernel, &rule, &u1, &u2, &x, &p).unwrap();
        let tight = q_gain_concentrated(&kernel, 12, &u1, &u2, &x, &p).unwrap();
        assert!(
            (wide - tight).abs() < 1e-2 * wide.abs().max(1e-12),
            "{wide} vs {tight}"
        );
    }

    #[test]
    fn admissibility_report_passes_for_builtin() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let rule = SigmaQuadRule::for_kernel(&kernel, 4);
        let report = check_admissible(&spec, &kernel, &rule, 7, 60).unwrap();
        assert!(report.cond2_pass);
        assert!(report.cond3_pass, "min value {}", report.cond3_min_value);
        assert!(
            report.cond4_pass,
            "L1 {} vs declared {}",
            report.cond4_max_l1, report.declared_l1
        );
        assert!(report.cond5_pass);
        assert!(report.all_pass());
    }

    #[test]
    fn interaction_bound_holds_on_fresh_pairs() {
        let spec = MetricSpec::minkowski(3, chart(3));
        let kernel = test_kernel(&spec);
        let rule = SigmaQuadRule::for_kernel(&kernel, 3);
        let c_a = measure_interaction_bound(&spec, &kernel, &rule, 0.05, 11, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..6 {
            let u = random_unit_density(&mut rng, &kernel);
            let v = random_unit_density(&mut rng, &kernel);
            let x = random_in_box(&mut rng, &kernel.base_box);
            let p = random_future_causal(&spec, &mut rng, &x, 2.5 * kernel.shell.1);
            let val = q_along_flow(&spec, &kernel, &rule, &u, &v, &x, &p, 0.05)
                .unwrap()
                .abs();
            assert!(val <= c_a, "value {val} exceeds measured bound {c_a}");
        }
    }
}
