use relboltz_core::geodesics::geodesic_flow;
use relboltz_core::grid::CoordBox;
use relboltz_core::spacetime::MetricSpec;

#[test]
#[ignore]
fn dump_drift_ratios() {
    for (a1, pvec) in [
        (0.1, [1.2, 0.5, -0.3]),
        (0.5, [2.0, 1.5, -0.8]),
        (0.8, [2.5, 2.0, -1.2]),
    ] {
        let chart = CoordBox::cube_around(&vec![0.0; 3], 20.0);
        let spec = MetricSpec::diagonal_warped(3, 1.0, a1, chart);
        let x = [0.0, 0.0, 0.0];
        let mut prev = None;
        println!("--- a1 = {a1}");
        for h in [4e-2, 2e-2, 1e-2, 5e-3, 2.5e-3] {
            let d = geodesic_flow(&spec, &x, &pvec, 2.0, h)
                .unwrap()
                .mass_shell_drift;
            if let Some(pd) = prev {
                println!("h={h:.1e} drift={d:.6e} ratio={:.3}", pd / d);
            } else {
                println!("h={h:.1e} drift={d:.6e}");
            }
            prev = Some(d);
        }
    }
}

#[test]
#[ignore]
fn dump_null_connect_sweep() {
    let chart = CoordBox::cube_around(&vec![0.0; 3], 20.0);
    let spec = MetricSpec::minkowski(3, chart);
    let x = [0.0, 0.0, 0.0];
    let target_theta = 0.4f64.atan2(1.0);
    println!("target theta = {target_theta}");
    for k in -3i32..=3 {
        let theta = target_theta + k as f64 * 0.002;
        let omega = [theta.cos(), theta.sin()];
        let p = spec.null_lift(&x, &omega).unwrap();
        // integrate and find closest approach to (s, 1, 0.4)
        let path = geodesic_flow(&spec, &x, &p, 3.0, 1e-3).unwrap();
        let mut best = (f64::INFINITY, 0.0, vec![0.0; 3]);
        for st in &path.samples {
            let t = st.x[0];
            if !(0.0..=3.0).contains(&t) {
                continue;
            }
            let d = ((st.x[1] - 1.0f64).powi(2) + (st.x[2] - 0.4).powi(2)).sqrt();
            if d < best.0 {
                best = (d, t, st.x.clone());
            }
        }
        let dx = [1.0 - best.2[1], 0.4 - best.2[2]];
        let cross = p[1] * dx[1] - p[2] * dx[0];
        println!("theta={theta:.5} miss={:.4e} s={:.4} cross={cross:.4e}", best.0, best.1);
    }
}
