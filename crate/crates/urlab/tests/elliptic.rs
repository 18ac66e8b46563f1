use std::f64::consts::PI;
use std::sync::Arc;
use urlab::elliptic::*;
use urlab::geometry::{make_boundary, BoundaryParams, DomainBox, Side};
use urlab::smoothdist::SmoothDistanceField;
use urlab::{Error, Exec, Mat, Point};

fn half_plane_box(lower: Point, upper: Point) -> DomainBox {
    let s = Arc::new(make_boundary(&BoundaryParams::Plane { n: 2, extent: 8.0, spacing: 1.0 / 64.0 }).unwrap());
    DomainBox::new(lower, upper, s, Side::OneSide).unwrap()
}

fn laplacian() -> OperatorSpec {
    OperatorSpec::new(1.0, 1.0, 2, Coefficient::Identity).unwrap()
}

/// Half-plane Green function of -Laplacian by images.
fn images(x: &Point, y: &Point) -> f64 {
    let ys = Point::new(y[0], -y[1], 0.0);
    ((x - ys).norm() / (x - y).norm()).ln() / (2.0 * PI)
}

fn node_values(g: &Grid, f: impl Fn(&Point) -> f64) -> Vec<f64> {
    (0..g.len()).map(|i| f(&g.node(i))).collect()
}

#[test]
fn manufactured_solution_is_second_order() {
    // u = e^x sin 2t solves -Laplacian u = 3 e^x sin 2t and vanishes on t = 0
    let exact = |x: &Point| x[0].exp() * (2.0 * x[1]).sin();
    let rhs = |x: &Point| 3.0 * x[0].exp() * (2.0 * x[1]).sin();
    let mut errs = Vec::new();
    for m in [8, 16, 32, 64] {
        let h = 1.0 / m as f64;
        let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
        let g = Arc::new(Grid::with_band(dom, h, h / 2.0).unwrap());
        let mut spec = laplacian();
        let sys = assemble(&mut spec, g.clone(), None, Exec::default()).unwrap();
        let opts = SolveOptions { tol: 1e-12, ..Default::default() };
        let (u, _) = solve_dirichlet(&sys, &node_values(&g, exact), Some(&node_values(&g, rhs)), &opts).unwrap();
        let err = (0..g.len()).map(|i| (u.scalar(i) - exact(&g.node(i))).abs()).fold(0.0, f64::max);
        errs.push(err);
    }
    for w in errs.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!(order >= 1.9, "order {order} from errors {errs:?}");
    }
}

#[test]
fn green_function_matches_images() {
    let h = 1.0 / 64.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 2.0, 0.0));
    let g = Arc::new(Grid::with_band(dom, h, h / 2.0).unwrap());
    let y = Point::new(0.0, 1.0, 0.0);
    let mut spec = laplacian();
    let outer = move |x: &Point| images(x, &y);
    let gs = green_function(&mut spec, g.clone(), None, &y, Some(&outer), &SolveOptions::default()).unwrap();
    assert_eq!(gs.placement_error, 0.0);
    assert_eq!(gs.report.positivity, Some(true));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.len() {
        let x = g.node(i);
        if g.delta(i) >= 8.0 * h && (x - y).norm() >= 8.0 * h {
            let o = images(&x, &y);
            num += (gs.field.scalar(i) - o).powi(2);
            den += o * o;
        }
    }
    let rel = (num / den).sqrt();
    assert!(rel <= 0.02, "relative L2 error {rel}");
}

#[test]
fn green_function_is_symmetric() {
    let h = 1.0 / 32.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.5, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let x = Point::new(-0.25, 0.5, 0.0);
    let y = Point::new(0.375, 0.75, 0.0);
    let opts = SolveOptions { tol: 1e-12, ..Default::default() };
    let gx = green_function(&mut laplacian(), g.clone(), None, &x, None, &opts).unwrap();
    let gy = green_function(&mut laplacian(), g.clone(), None, &y, None, &opts).unwrap();
    let a = gx.field.scalar(gy.pole_node);
    let b = gy.field.scalar(gx.pole_node);
    assert!((a - b).abs() <= 10.0 * opts.tol * a.abs().max(1.0), "{a} vs {b}");
}

#[test]
fn maximum_principle_on_identity_path() {
    let h = 1.0 / 32.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Diagonal([1.0, 3.0, 1.0])).unwrap();
    let sys = assemble(&mut spec, g.clone(), None, Exec::default()).unwrap();
    assert!(sys.m_matrix);
    let data = node_values(&g, |x| (3.0 * x[0]).sin().abs() * x[1]);
    let (u, _) = solve_dirichlet(&sys, &data, None, &SolveOptions::default()).unwrap();
    let hi = data.iter().cloned().fold(0.0, f64::max);
    assert!(u.values.iter().all(|&v| v >= -1e-12 && v <= hi + 1e-12));
}

#[test]
fn cross_terms_flag_lost_m_matrix_and_keep_linear_exactness() {
    let h = 1.0 / 16.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let a = Arc::new(|_: &Point, _: f64| Mat::new(2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 0.0));
    let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Custom(a)).unwrap();
    let sys = assemble(&mut spec, g.clone(), None, Exec::default()).unwrap();
    assert!(!sys.m_matrix);
    assert!(spec.lambda.unwrap() > 0.0);
    // symmetric assembly
    for r in 0..sys.matrix.rows {
        for p in sys.matrix.ptr[r]..sys.matrix.ptr[r + 1] {
            let c = sys.matrix.cols[p];
            assert!((sys.matrix.vals[p] - sys.matrix.get(c, r)).abs() < 1e-14);
        }
    }
    let lin = |x: &Point| 0.3 * x[0] + x[1];
    let (u, _) = solve_dirichlet(&sys, &node_values(&g, lin), None, &SolveOptions { tol: 1e-12, ..Default::default() }).unwrap();
    for i in 0..g.len() {
        assert!((u.scalar(i) - lin(&g.node(i))).abs() < 1e-9);
    }
}

#[test]
fn pole_placement_errors() {
    let h = 1.0 / 16.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let near = Point::new(0.0, 0.25, 0.0);
    let r = green_function(&mut laplacian(), g, None, &near, None, &SolveOptions::default());
    assert!(matches!(r, Err(Error::Placement(_))));
}

#[test]
fn solver_reports_non_convergence() {
    let h = 1.0 / 32.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let sys = assemble(&mut laplacian(), g.clone(), None, Exec::default()).unwrap();
    let data = node_values(&g, |x| x[1]);
    let opts = SolveOptions { max_iter: 3, ..Default::default() };
    match solve_dirichlet(&sys, &data, None, &opts) {
        Err(Error::Convergence { iterations, history, .. }) => {
            assert_eq!(iterations, 3);
            assert_eq!(history.len(), 4);
        }
        other => panic!("expected convergence error, got {other:?}"),
    }
}

#[test]
fn boundary_ball_solve_reproduces_t() {
    let h = 1.0 / 32.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let x = Point::new(0.0, 0.0, 0.0);
    let (u, rep) =
        solve_boundary_ball(&mut laplacian(), dom.clone(), h, h / 2.0, None, &x, 0.5, &|p: &Point| p[1], &SolveOptions::default()).unwrap();
    assert_eq!(rep.positivity, Some(true));
    for i in 0..u.grid.len() {
        if u.grid.kind(i) == NodeKind::Interior {
            assert!((u.scalar(i) - u.grid.node(i)[1]).abs() < 1e-8);
        }
    }
    let b = gradient_bound_check(&u).unwrap();
    assert!((b.sup - 1.0).abs() < 1e-6, "{b:?}");
    let zero = solve_boundary_ball(&mut laplacian(), dom.clone(), h, h / 2.0, None, &x, 0.5, &|_: &Point| 0.0, &SolveOptions::default());
    assert!(matches!(zero, Err(Error::Triviality(_))));
    let wide = solve_boundary_ball(&mut laplacian(), dom, h, h / 2.0, None, &x, 0.75, &|p: &Point| p[1], &SolveOptions::default());
    assert!(matches!(wide, Err(Error::Parameter(_))));
}

#[test]
fn jets_are_exact_on_quadratics() {
    let h = 1.0 / 16.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let u = GridField::from_fn(g.clone(), |x| 1.0 + x[0] * x[0] - 3.0 * x[0] * x[1] + 0.5 * x[1] * x[1]);
    let mut tested = 0;
    for i in 0..g.len() {
        if let Some(j) = jet(&u, i) {
            let x = g.node(i);
            assert!((j.grad[0] - (2.0 * x[0] - 3.0 * x[1])).abs() < 1e-10);
            assert!((j.grad[1] - (-3.0 * x[0] + x[1])).abs() < 1e-10);
            assert!((j.hess[(0, 0)] - 2.0).abs() < 1e-9);
            assert!((j.hess[(0, 1)] + 3.0).abs() < 1e-9);
            assert!((j.hess[(1, 1)] - 1.0).abs() < 1e-9);
            tested += 1;
        } else {
            assert!(g.delta(i) < 2.0 * h || g.kind(i) != NodeKind::Interior);
        }
    }
    assert!(tested > 0);
    let gg = derivative_field(&u, Derivative::GradOfGradNormSq, None, Exec::Sequential).unwrap();
    let i = g.nearest_node(&Point::new(0.25, 0.5, 0.0));
    let jt = jet(&u, i).unwrap();
    assert!((gg.vector(i) - jt.hess * jt.grad * 2.0).norm() < 1e-12);
}

#[test]
fn log_ratio_vanishes_for_u_equal_distance() {
    let s = Arc::new(make_boundary(&BoundaryParams::Plane { n: 2, extent: 8.0, spacing: 0.01 }).unwrap());
    let field = SmoothDistanceField::new(s.clone(), 1.0).unwrap();
    let dom = DomainBox::new(Point::new(-0.5, 0.0, 0.0), Point::new(0.5, 0.5, 0.0), s, Side::OneSide).unwrap();
    let h = 1.0 / 16.0;
    let g = Arc::new(Grid::new(dom, h).unwrap());
    // u = t and D = t / pi: ln(u / D) is constant
    let u = GridField::from_fn(g.clone(), |x| x[1]);
    let lg = derivative_field(&u, Derivative::LogRatioGrad, Some(&field), Exec::default()).unwrap();
    let mut count = 0;
    for i in 0..g.len() {
        if lg.defined[i] {
            assert!(lg.vector(i).norm() * g.delta(i) < 1e-3, "{}", lg.vector(i).norm());
            count += 1;
        }
    }
    assert!(count > 0);
    let neg = GridField::from_fn(g.clone(), |x| x[1] - 0.3);
    assert!(matches!(
        derivative_field(&neg, Derivative::LogRatioGrad, Some(&field), Exec::default()),
        Err(Error::Positivity(_))
    ));
}

#[test]
fn field_binary_round_trip() {
    let h = 1.0 / 16.0;
    let dom = half_plane_box(Point::new(-1.0, -0.5, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom.clone(), h).unwrap());
    assert!(g.count(NodeKind::Exterior) > 0);
    let mut u = GridField::from_fn(g, |x| x[0].sin() + x[1]);
    u.pole = Some(Point::new(0.0, 0.5, 0.0));
    let bytes = u.to_bytes();
    let back = GridField::from_bytes(&bytes, dom.clone()).unwrap();
    assert_eq!(back.values, u.values);
    assert_eq!(back.defined, u.defined);
    assert_eq!(back.pole, u.pole);
    assert_eq!(back.grid.kinds(), u.grid.kinds());
    assert!(GridField::from_bytes(&bytes[..bytes.len() - 1], dom).is_err());
    assert!(u.sidecar(&[("tol", "1e-9".into())]).contains("tol = 1e-9"));
}

#[test]
fn sequential_and_parallel_assembly_agree() {
    let h = 1.0 / 32.0;
    let dom = half_plane_box(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0));
    let g = Arc::new(Grid::new(dom, h).unwrap());
    let mut spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::LogOscillating { amplitude: 0.5 }).unwrap();
    let a = assemble(&mut spec, g.clone(), None, Exec::Sequential).unwrap();
    let b = assemble(&mut spec, g, None, Exec::Parallel).unwrap();
    assert_eq!(a.matrix.vals, b.matrix.vals);
    assert_eq!(a.matrix.cols, b.matrix.cols);
}
