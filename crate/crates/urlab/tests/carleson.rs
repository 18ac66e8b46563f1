use std::sync::Arc;
use urlab::carleson::*;
use urlab::dyadic::build_christ_cubes;
use urlab::elliptic::*;
use urlab::geometry::{make_boundary, BoundaryParams, BoundarySample, DomainBox, Side};
use urlab::smoothdist::SmoothDistanceField;
use urlab::{Error, Exec, Point};

fn plane(extent: f64, spacing: f64) -> Arc<BoundarySample> {
    Arc::new(make_boundary(&BoundaryParams::Plane { n: 2, extent, spacing }).unwrap())
}

fn half_plane_grid(s: &Arc<BoundarySample>, lo: Point, hi: Point, h: f64) -> Arc<Grid> {
    let dom = DomainBox::new(lo, hi, s.clone(), Side::OneSide).unwrap();
    Arc::new(Grid::new(dom, h).unwrap())
}

#[test]
fn half_disk_moment_gives_two_thirds() {
    let s = plane(2.0, 1.0 / 256.0);
    let r = 0.5;
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 512.0);
    let f = GridField::from_fn(g, move |x| x[1] / r);
    let (v, cells) = ball_integral(&f, 1.0, &Point::zeros(), r);
    let v = v.unwrap();
    assert!(cells > 0);
    assert!((v - 2.0 / 3.0).abs() < 5e-3, "{v}");
}

#[test]
fn zero_integrand_and_absent_balls() {
    let s = plane(2.0, 1.0 / 64.0);
    let forest = build_christ_cubes(&s, 0, 3).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 64.0);
    let zero = GridField::from_fn(g.clone(), |_| 0.0);
    let rep = carleson_norm(&zero, &s, &forest, &[1, 2, 3], BallPolicy::imposed(), Exec::default()).unwrap();
    assert_eq!(rep.sup, 0.0);
    assert!(!rep.balls.is_empty());
    let mut empty = zero.clone();
    empty.defined.iter_mut().for_each(|d| *d = false);
    let rep = carleson_norm(&empty, &s, &forest, &[2], BallPolicy::imposed(), Exec::default()).unwrap();
    assert_eq!(rep.absent(), rep.balls.len());
    assert!(rep.argmax.is_none());
    assert!(rep.to_csv(2).lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn scale_window_is_enforced() {
    let s = plane(2.0, 1.0 / 64.0);
    let forest = build_christ_cubes(&s, 0, 4).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 64.0);
    let f = GridField::from_fn(g, |_| 1.0);
    // 2^-4 < 8h
    let r = carleson_norm(&f, &s, &forest, &[4], BallPolicy::imposed(), Exec::default());
    assert!(matches!(r, Err(Error::Parameter(_))));
}

#[test]
fn constant_integrand_diverges_logarithmically() {
    let s = plane(2.0, 1.0 / 64.0);
    let forest = build_christ_cubes(&s, 0, 2).unwrap();
    let hs = [1.0 / 32.0, 1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0];
    let mut vals = Vec::new();
    for &h in &hs {
        let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), h);
        let f = GridField::from_fn(g, |_| 1.0);
        let rep = carleson_norm(&f, &s, &forest, &[1], BallPolicy::imposed(), Exec::default()).unwrap();
        vals.push(rep.sup);
    }
    let t = classify_trend(&hs, &vals, 0.01).unwrap();
    assert!(t.divergent, "{vals:?}");
    // each halving adds about 2 ln 2
    for dv in &t.increments {
        assert!((dv - 2.0 * 2f64.ln()).abs() < 0.1, "{dv}");
    }
}

#[test]
fn dilation_leaves_ball_values_unchanged() {
    let s = plane(2.0, 1.0 / 64.0);
    let big = Arc::new(s.transformed(Point::zeros(), 2.0));
    let g1 = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 64.0);
    let g2 = half_plane_grid(&big, Point::new(-2.0, 0.0, 0.0), Point::new(2.0, 2.0, 0.0), 1.0 / 32.0);
    let f = |x: &Point| (1.0 + x[0]).sin().abs() * x[1];
    let f1 = GridField::from_fn(g1, f);
    let f2 = GridField::from_fn(g2, move |x| f(&(x / 2.0)));
    let c = Point::new(0.125, 0.0, 0.0);
    let (a, _) = ball_integral(&f1, 1.0, &c, 0.25);
    let (b, _) = ball_integral(&f2, 1.0, &(c * 2.0), 0.5);
    assert!((a.unwrap() - b.unwrap()).abs() < 1e-12 * a.unwrap());
}

#[test]
fn monotone_in_the_integrand() {
    let s = plane(2.0, 1.0 / 64.0);
    let forest = build_christ_cubes(&s, 0, 3).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 64.0);
    let lo = GridField::from_fn(g.clone(), |x| x[1] * x[0].cos().abs());
    let hi = GridField::from_fn(g, |x| x[1]);
    let a = carleson_norm(&lo, &s, &forest, &[1, 2, 3], BallPolicy::imposed(), Exec::default()).unwrap();
    let b = carleson_norm(&hi, &s, &forest, &[1, 2, 3], BallPolicy::imposed(), Exec::Sequential).unwrap();
    for (x, y) in a.balls.iter().zip(&b.balls) {
        assert!(x.value.unwrap() <= y.value.unwrap());
    }
}

#[test]
fn linear_solution_integrands_vanish() {
    let s = plane(8.0, 1.0 / 256.0);
    let field = SmoothDistanceField::new(s.clone(), 1.0).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 32.0);
    let spec = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Identity).unwrap();
    let u = GridField::from_fn(g.clone(), |x| x[1]);
    for kind in [IntegrandKind::HessU, IntegrandKind::GradSqGradU, IntegrandKind::LogratioGrad, IntegrandKind::LogratioHess] {
        let f = build_integrand(kind, g.clone(), Some(&u), &field, &spec, Exec::default()).unwrap();
        assert!(f.warnings.is_empty());
        let max = f.field.values.iter().cloned().fold(0.0, f64::max);
        assert!(max < 1e-4, "{}: {max}", kind.tag());
        assert!(f.field.defined.iter().any(|&d| d));
    }
    // u = D itself
    let d = GridField::from_fn(g.clone(), |x| field.eval(x, 0).map(|e| e.d).unwrap_or(0.0));
    let f = build_integrand(IntegrandKind::LogratioGrad, g.clone(), Some(&d), &field, &spec, Exec::default()).unwrap();
    assert!(f.field.values.iter().all(|&v| v < 1e-9));
    assert!(matches!(
        build_integrand(IntegrandKind::HessU, g, None, &field, &spec, Exec::default()),
        Err(Error::Parameter(_))
    ));
}

#[test]
fn radial_solution_around_a_line() {
    let axis = Arc::new(make_boundary(&BoundaryParams::LowDimPlane { extent: 0.5, spacing: 1.0 / 32.0 }).unwrap());
    let field = SmoothDistanceField::new(axis.clone(), 1.0).unwrap();
    let dom = DomainBox::new(Point::new(-0.5, -0.5, -0.5), Point::new(0.5, 0.5, 0.5), axis, Side::Complement).unwrap();
    let g = Arc::new(Grid::new(dom, 1.0 / 16.0).unwrap());
    let spec = OperatorSpec::new(1.0, 1.0, 3, Coefficient::Identity).unwrap();
    let u = GridField::from_fn(g.clone(), |x| (x[1] * x[1] + x[2] * x[2]).sqrt());
    let f = build_integrand(IntegrandKind::HessU, g.clone(), Some(&u), &field, &spec, Exec::default()).unwrap();
    assert_eq!(f.warnings.len(), 1);
    // |hess u| = 1/|t| off the axis, so delta^2 |hess u| / u ~ 1
    let i = g.nearest_node(&Point::new(0.0, 0.25, 0.0));
    assert!((f.field.scalar(i) - 1.0).abs() < 0.05, "{}", f.field.scalar(i));
}

#[test]
fn dkp_examples() {
    let s = plane(4.0, 1.0 / 512.0);
    let field = SmoothDistanceField::new(s.clone(), 1.0).unwrap();
    let forest = build_christ_cubes(&s, 0, 2).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 0.5, 0.0), 1.0 / 32.0);
    let id = OperatorSpec::new(1.0, 1.0, 2, Coefficient::Identity).unwrap();
    let r = dkp_check(&id, g.clone(), &field, &forest, &[1], Exec::default()).unwrap();
    assert_eq!(r.sup_linf, 0.0);
    assert_eq!(r.carleson.sup, 0.0);
    let osc = OperatorSpec::new(1.0, 1.0, 2, Coefficient::LogOscillating { amplitude: 0.5 }).unwrap();
    let r = dkp_check(&osc, g, &field, &forest, &[1], Exec::default()).unwrap();
    // D |grad A| = 0.5 |cos ln t| sampled on the lattice rows t = j h, j >= 2
    let want = (2..=16).map(|j| 0.5 * (j as f64 / 32.0).ln().cos().abs()).fold(0.0, f64::max);
    assert!((r.sup_linf - want).abs() < 1e-6 * want, "{} vs {want}", r.sup_linf);
    assert!(r.carleson.sup > 0.0);
}

#[test]
fn report_serializations() {
    let s = plane(2.0, 1.0 / 64.0);
    let forest = build_christ_cubes(&s, 0, 2).unwrap();
    let g = half_plane_grid(&s, Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), 1.0 / 32.0);
    let f = GridField::from_fn(g, |x| x[1]);
    let rep = carleson_norm(&f, &s, &forest, &[1, 2], BallPolicy::imposed(), Exec::default()).unwrap();
    let csv = rep.to_csv(2);
    assert!(csv.starts_with("x,y,r,value,cells_used\n"));
    assert_eq!(csv.lines().count(), rep.balls.len() + 1);
    let js = rep.summary();
    assert_eq!(js["sup"].as_f64().unwrap(), rep.sup);
    assert!(rep.coverage > 0.0 && rep.coverage <= 1.0);
}
