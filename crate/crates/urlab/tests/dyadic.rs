use proptest::prelude::*;
use std::sync::Arc;
use urlab::dyadic::*;
use urlab::geometry::{make_boundary, BoundaryParams, BoundarySample, DomainBox, Side};
use urlab::{Error, Exec, Point};

fn sample(p: BoundaryParams) -> BoundarySample {
    make_boundary(&p).unwrap()
}

fn check_invariants(s: &BoundarySample, f: &CubeForest) {
    for k in f.k_min..=f.k_max {
        let mut seen = vec![false; s.len()];
        for &q in f.generation(k) {
            let c = &f.cubes[q];
            let tau = c.ell();
            for &i in &c.members {
                assert!(!seen[i], "atom {i} in two generation-{k} cubes");
                seen[i] = true;
                assert!((s.points()[i] - c.center).norm() <= tau);
            }
            // inner ball: every atom within a0 tau belongs to the cube
            for (i, p) in s.points().iter().enumerate() {
                if (p - c.center).norm() < f.a0 * tau {
                    assert!(c.members.binary_search(&i).is_ok());
                }
            }
            let mass: f64 = c.members.iter().map(|&i| s.weights()[i]).sum();
            assert!((mass - c.sigma_mass).abs() <= 1e-12 * mass);
            if !c.children.is_empty() {
                let mut union: Vec<usize> = c.children.iter().flat_map(|&ch| f.cubes[ch].members.clone()).collect();
                union.sort_unstable();
                assert_eq!(union, c.members);
            }
        }
        assert!(seen.iter().all(|&b| b), "generation {k} misses atoms");
    }
}

#[test]
fn forest_invariants_on_catalog_sets() {
    let sets = [
        (sample(BoundaryParams::FourCornerCantor { generation: 5 }), 0, 6),
        (sample(BoundaryParams::Plane { n: 2, extent: 1.0, spacing: 1.0 / 256.0 }), 0, 6),
        (sample(BoundaryParams::Circle { radius: 1.0, count: 2048 }), 0, 5),
        (sample(BoundaryParams::Plane { n: 3, extent: 0.5, spacing: 1.0 / 32.0 }), 0, 3),
        (sample(BoundaryParams::LipschitzGraph { slope: 1.0, frequency: 3.0, extent: 1.0, spacing: 1.0 / 256.0 }), 0, 5),
    ];
    for (s, k0, k1) in &sets {
        let f = build_christ_cubes(s, *k0, *k1).unwrap();
        assert!(f.a0 >= 0.25, "{:?}: a0 = {}", s.kind(), f.a0);
        check_invariants(s, &f);
    }
}

#[test]
fn line_cubes_are_intervals() {
    let spacing = 1.0 / 256.0;
    let s = sample(BoundaryParams::Plane { n: 2, extent: 1.0, spacing });
    let f = build_christ_cubes(&s, 0, 5).unwrap();
    for k in 0..=5 {
        let tau = 2f64.powi(-k);
        for &q in f.generation(k) {
            let c = &f.cubes[q];
            // atoms are ordered along the line, so an interval is a run of indices
            assert_eq!(c.members.last().unwrap() - c.members[0] + 1, c.members.len());
            assert!(c.sigma_mass >= tau - 1e-12 && c.sigma_mass <= tau + 2.0 * spacing, "{}", c.sigma_mass);
        }
    }
}

#[test]
fn cantor_cubes_are_the_construction_squares() {
    let g = 5;
    let s = sample(BoundaryParams::FourCornerCantor { generation: g });
    let f = build_christ_cubes(&s, 0, 6).unwrap();
    for j in 0..=3 {
        // generation-(j + 1) squares have side 4^-(j+1); an atom-centred cube at
        // k = 2j holds exactly one of them
        let k = 2 * j;
        let side = 4f64.powi(-(j + 1));
        let ids = f.generation(k);
        assert_eq!(ids.len(), 4usize.pow(j as u32 + 1));
        for &q in ids {
            let c = &f.cubes[q];
            assert!((c.sigma_mass - side).abs() < 1e-12);
            let x0 = (s.points()[c.members[0]][0] / side).floor();
            let y0 = (s.points()[c.members[0]][1] / side).floor();
            for &i in &c.members {
                assert_eq!((s.points()[i][0] / side).floor(), x0);
                assert_eq!((s.points()[i][1] / side).floor(), y0);
            }
        }
    }
}

#[test]
fn single_atom_and_resolution_errors() {
    let s = sample(BoundaryParams::Custom { n: 2, d: 1.0, points: vec![Point::new(0.3, 0.1, 0.0)], weights: vec![1.0] });
    let f = build_christ_cubes(&s, 0, 6).unwrap();
    assert_eq!(f.cubes.len(), 7);
    assert!(f.cubes.iter().all(|c| c.members == vec![0]));
    let c = sample(BoundaryParams::FourCornerCantor { generation: 3 });
    assert!(matches!(build_christ_cubes(&c, 0, 6), Err(Error::Resolution(_))));
    assert!(matches!(build_christ_cubes(&c, 3, 1), Err(Error::Parameter(_))));
}

#[test]
fn forest_export_rows() {
    let s = sample(BoundaryParams::FourCornerCantor { generation: 3 });
    let f = build_christ_cubes(&s, 0, 2).unwrap();
    let text = f.to_text();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows.len(), f.cubes.len());
    assert!(rows.iter().all(|r| r.len() == 2 + 2 + 2));
    assert_eq!(rows[0][5], "-1");
}

#[test]
fn packing_sum_examples() {
    let s = sample(BoundaryParams::FourCornerCantor { generation: 5 });
    let f = build_christ_cubes(&s, 0, 6).unwrap();
    let q0 = f.roots()[0];
    assert_eq!(packing_sum(&f, |_| false, q0, Exec::Sequential), 0.0);
    let all = packing_sum(&f, |_| true, q0, Exec::Parallel);
    assert!((all - 7.0).abs() < 1e-12, "{all}");
}

proptest! {
    #[test]
    fn packing_sum_is_monotone(cut in 0i32..7, threshold in 0.0f64..1.0) {
        let s = sample(BoundaryParams::FourCornerCantor { generation: 4 });
        let f = build_christ_cubes(&s, 0, 4).unwrap();
        let q0 = f.roots()[1];
        // strong predicate implies weak predicate
        let strong = |c: &Cube| c.k >= cut && c.center[0] > threshold;
        let weak = |c: &Cube| c.k >= cut;
        prop_assert!(packing_sum(&f, strong, q0, Exec::Sequential) <= packing_sum(&f, weak, q0, Exec::Sequential));
    }
}

fn half_plane() -> DomainBox {
    let s = Arc::new(sample(BoundaryParams::Plane { n: 2, extent: 2.0, spacing: 1.0 / 128.0 }));
    DomainBox::new(Point::new(-1.0, 0.0, 0.0), Point::new(1.0, 1.0, 0.0), s, Side::OneSide).unwrap()
}

#[test]
fn whitney_sandwich_and_half_plane_sizes() {
    let dom = half_plane();
    let w = build_whitney(&dom, 1.0 / 1024.0).unwrap();
    for c in &w.cubes {
        // cube-to-line distance is the height of the bottom face
        let dist = c.corner[1].max(0.0);
        assert_eq!(dist, c.dist);
        assert!(20.0 * c.side <= dist && dist < 40.0 * c.side);
    }
    for t in [0.5, 0.1, 0.02, 0.0625] {
        let q = w.locate(&Point::new(0.01, t, 0.0)).expect("covered");
        let side = w.cubes[q].side;
        assert!(side >= t / 41.0 && side <= t / 20.0, "t = {t}, side = {side}");
    }
    let uncovered = w.uncovered_where(&dom, |x| x[1] > 2f64.powi(-6), 20000, 1);
    assert!(uncovered < 1e-2, "{uncovered}");
    assert!(w.multiplicity >= 1 && w.multiplicity <= 16, "{}", w.multiplicity);
}

#[test]
fn whitney_around_a_point() {
    let s = Arc::new(sample(BoundaryParams::Custom { n: 2, d: 0.5, points: vec![Point::zeros()], weights: vec![1.0] }));
    let dom = DomainBox::new(Point::new(-2.0, -2.0, 0.0), Point::new(2.0, 2.0, 0.0), s, Side::Complement).unwrap();
    let w = build_whitney(&dom, 1.0 / 256.0).unwrap();
    for th in [0.1f64, 1.0, 2.5, 4.0] {
        let q = w.locate(&Point::new(th.cos(), th.sin(), 0.0)).expect("covered");
        let side = w.cubes[q].side;
        assert!(side >= 1.0 / 41.0 && side <= 1.0 / 20.0, "{side}");
    }
}

#[test]
fn whitney_rejects_bad_resolution() {
    assert!(matches!(build_whitney(&half_plane(), 0.0), Err(Error::Parameter(_))));
}
