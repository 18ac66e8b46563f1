use std::sync::Arc;
use urlab::dyadic::build_christ_cubes;
use urlab::elliptic::{Grid, GridField};
use urlab::geometry::{make_boundary, BoundaryParams, BoundarySample, DomainBox, Side};
use urlab::urdiag::*;
use urlab::{Error, Exec, Mat, Point};

fn line() -> BoundarySample {
    make_boundary(&BoundaryParams::Plane { n: 2, extent: 4.0, spacing: 1.0 / 128.0 }).unwrap()
}

fn cantor(generation: u32) -> BoundarySample {
    make_boundary(&BoundaryParams::FourCornerCantor { generation }).unwrap()
}

/// Grid search over lines through B(x, 2 ell): angle step pi/720, offset step ell/400.
fn brute_force_line_beta(sample: &BoundarySample, x: &Point, ell: f64, dist: impl Fn(&Point) -> f64) -> f64 {
    let atoms: Vec<Point> = sample.points().iter().filter(|y| (*y - x).norm() <= 2.0 * ell).copied().collect();
    let mut best = f64::INFINITY;
    for a in 0..720 {
        let th = std::f64::consts::PI * a as f64 / 720.0;
        let (t, nu) = (Point::new(th.cos(), th.sin(), 0.0), Point::new(-th.sin(), th.cos(), 0.0));
        for s in -800..=800 {
            let c = x + nu * (s as f64 * ell / 400.0);
            let first = atoms.iter().map(|y| (y - c).dot(&nu).abs()).fold(0.0, f64::max);
            let h = (c - x).norm();
            if h >= 2.0 * ell || first / ell >= best {
                continue;
            }
            let rho = (4.0 * ell * ell - h * h).sqrt();
            let pitch = ell / 32.0;
            let m = (rho / pitch).floor() as i64;
            let second = (-m..=m).map(|j| dist(&(c + t * (j as f64 * pitch)))).fold(0.0, f64::max);
            best = best.min((first + second) / ell);
        }
    }
    best
}

#[test]
fn straight_line_is_flat() {
    let s = line();
    let forest = build_christ_cubes(&s, 0, 4).unwrap();
    for q in 0..forest.cubes.len() {
        let b = bbeta_inf(&s, &forest, q).unwrap();
        assert!(b.value <= 1.0 / 32.0, "{}", b.value);
    }
}

#[test]
fn circle_against_brute_force() {
    let s = make_boundary(&BoundaryParams::Circle { radius: 1.0, count: 4096 }).unwrap();
    let x = Point::new(1.0, 0.0, 0.0);
    let circle = |y: &Point| (y.norm() - 1.0).abs();
    let mut prev = f64::INFINITY;
    for ell in [0.5, 0.25, 0.125, 0.0625] {
        let b = bbeta_at(&s, &x, ell).unwrap();
        let oracle = brute_force_line_beta(&s, &x, ell, circle);
        assert!(b.value <= b.seed_value);
        assert!(b.value <= oracle * 1.02 + 1e-3, "ell {ell}: {} vs {oracle}", b.value);
        assert!(b.value >= oracle * 0.9, "ell {ell}: {} vs {oracle}", b.value);
        if prev.is_finite() {
            // sagitta: halving the scale roughly halves the value
            let ratio = b.value / prev;
            assert!((0.4..0.6).contains(&ratio), "ell {ell}: ratio {ratio}");
        }
        prev = b.value;
    }
}

#[test]
fn cantor_top_cube_is_far_from_lines() {
    let s = cantor(3);
    let forest = build_christ_cubes(&s, 0, 0).unwrap();
    let b = bbeta_inf(&s, &forest, forest.roots()[0]).unwrap();
    assert!(b.value >= 0.15, "{}", b.value);
}

#[test]
fn rigid_motions_and_dilations() {
    let s = cantor(3);
    let x = s.points()[5];
    let a = bbeta_at(&s, &x, 0.25).unwrap().value;
    let shift = Point::new(0.3, -1.7, 0.0);
    let moved = s.transformed(shift, 3.0);
    let b = bbeta_at(&moved, &(x * 3.0 + shift), 0.75).unwrap().value;
    assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} vs {b}");
}

#[test]
fn too_few_atoms_is_a_fit_error() {
    let s = cantor(2);
    let r = bbeta_at(&s, &Point::new(5.0, 5.0, 0.0), 0.1);
    assert!(matches!(r, Err(Error::Fit(_))));
}

#[test]
fn bwgl_line_and_graph() {
    let s = line();
    let forest = build_christ_cubes(&s, 0, 5).unwrap();
    let r = bwgl_report(&s, &forest, 0.06, Exec::default()).unwrap();
    assert_eq!(r.max_ratio, 0.0);
    let g = make_boundary(&BoundaryParams::LipschitzGraph { slope: 0.1, frequency: 4.0, extent: 4.0, spacing: 1.0 / 256.0 }).unwrap();
    let forest = build_christ_cubes(&g, 0, 6).unwrap();
    let r = bwgl_report(&g, &forest, 0.3, Exec::default()).unwrap();
    assert!(r.max_ratio <= 1.0, "{}", r.max_ratio);
    assert!(matches!(bwgl_report(&g, &forest, 0.0, Exec::default()), Err(Error::Parameter(_))));
}

#[test]
fn bwgl_cantor_grows_with_depth_and_falls_with_eps() {
    let s = cantor(6);
    let mut ratios = Vec::new();
    for depth in 1..=4 {
        let forest = build_christ_cubes(&s, 0, depth).unwrap();
        let r = bwgl_report(&s, &forest, 0.1, Exec::default()).unwrap();
        ratios.push(r.max_ratio);
    }
    for w in ratios.windows(2) {
        assert!((w[1] - w[0] - 1.0).abs() < 0.25, "{ratios:?}");
    }
    let forest = build_christ_cubes(&s, 0, 3).unwrap();
    let mut prev = f64::INFINITY;
    for eps in [0.05, 0.1, 0.2, 0.4, 0.8] {
        let r = bwgl_report(&s, &forest, eps, Exec::Sequential).unwrap();
        assert!(r.max_ratio <= prev);
        prev = r.max_ratio;
    }
    let csv = bwgl_report(&s, &forest, 0.1, Exec::default()).unwrap().to_csv();
    assert!(csv.starts_with("cube_id,k,bbeta,is_bad\n"));
    assert!(csv.contains("\nroot,"));
}

fn square_grid() -> Arc<Grid> {
    let s = Arc::new(line());
    let dom = DomainBox::new(Point::new(-1.0, -1.0, 0.0), Point::new(1.0, 1.0, 0.0), s, Side::Complement).unwrap();
    Arc::new(Grid::new(dom, 1.0 / 32.0).unwrap())
}

fn dist_to_square(x: &Point) -> f64 {
    let dx = (x[0].abs() - 0.25).max(0.0);
    let dy = (x[1].abs() - 0.25).max(0.0);
    (dx * dx + dy * dy).sqrt()
}

#[test]
fn eikonal_plane_and_square() {
    let g = square_grid();
    let plane = GridField::from_fn(g.clone(), |x| x[1].abs());
    let r = eikonal_distance_check(&plane, 0.05, Exec::default()).unwrap();
    assert!(r.is_const_grad);
    assert!((r.c - 1.0).abs() < 1e-9);
    assert!(r.max_deviation < 1e-9);
    let sq = GridField::from_fn(g.clone(), |x| x[1] * x[1]);
    assert!(!eikonal_distance_check(&sq, 0.05, Exec::default()).unwrap().is_const_grad);
    for c in [0.5, 1.0, 2.0] {
        let f = GridField::from_fn(g.clone(), move |x| c * dist_to_square(x));
        let r = eikonal_distance_check(&f, 0.05, Exec::default()).unwrap();
        assert!(r.is_const_grad, "c {c}: oscillation {}", r.oscillation);
        assert!((r.c - c).abs() < 0.01 * c, "{}", r.c);
        assert!(r.max_deviation < 0.01, "{}", r.max_deviation);
    }
    let positive = GridField::from_fn(g, |x| 1.0 + x[0] * x[0]);
    assert!(matches!(eikonal_distance_check(&positive, 0.05, Exec::default()), Err(Error::Domain(_))));
}

#[test]
fn convex_bodies_hessian_structure() {
    let a = Mat::from_diagonal(&Point::new(1.0, 2.0, 3.0));
    for (body, t) in [
        (ConvexBodySpec::paraboloid(vec![1.0, 2.0]), 0.5),
        (ConvexBodySpec::paraboloid(vec![0.5]), 1.0),
        (ConvexBodySpec::ball(3, 2.0), 0.25),
    ] {
        let r = convex_distance_hessian(&body, t, &a).unwrap();
        let m = body.n - 1;
        assert!((r.fd - r.fd.transpose()).norm() < 1e-6);
        assert!(r.fd[(m, m)].abs() < 1e-5, "{}", r.fd[(m, m)]);
        for i in 0..m {
            let want = body.lambdas[i] / (1.0 + t * body.lambdas[i]);
            assert!((r.fd[(i, i)] - want).abs() < 1e-4 * want.max(1.0), "{} vs {want}", r.fd[(i, i)]);
            assert!((r.squared_form[(i, i)] - body.lambdas[i] / (1.0 + t * body.lambdas[i]).powi(2)).abs() < 1e-15);
        }
        assert!(r.l_delta < 0.0);
        assert!(r.discrepancy > 0.0);
    }
    let flat = convex_distance_hessian(&ConvexBodySpec::half_space(2), 1.0, &a).unwrap();
    assert!(flat.l_delta.abs() < 1e-6);
    assert_eq!(flat.squared_form.norm(), 0.0);
    assert!(matches!(
        convex_distance_hessian(&ConvexBodySpec::half_space(2), 0.0, &a),
        Err(Error::Parameter(_))
    ));
}
