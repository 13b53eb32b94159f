mod common;

use common::*;
use critlat_core::environment::EnvironmentSpec;
use critlat_core::flux::*;
use critlat_core::kernel::norm1;
use critlat_core::operator::TruncationPolicy;
use proptest::prelude::*;

fn nn_edge(base: [i64; 3], k: usize) -> ([i64; 3], [i64; 3]) {
    let mut b = base;
    b[k] += 1;
    (base, b)
}

proptest! {
    #[test]
    fn path_shape(u in prop::array::uniform3(-20i64..20), v in prop::array::uniform3(-20i64..20),
                  w in prop::array::uniform3(-9i64..9), d in 1usize..=3) {
        let mut u = u;
        let mut v = v;
        let mut w = w;
        for k in d..3 { u[k] = 0; v[k] = 0; w[k] = 0; }
        prop_assume!(u != v);
        let p = canonical_path(u, v, d).unwrap();
        let z = [v[0] - u[0], v[1] - u[1], v[2] - u[2]];
        prop_assert_eq!(p.steps.len() as i64, norm1(&z));
        prop_assert_eq!(p.steps[0].0, u);
        prop_assert_eq!(p.steps.last().unwrap().1, v);
        prop_assert!(p.steps.windows(2).all(|s| s[0].1 == s[1].0));
        // coordinates are adjusted in order
        let axes: Vec<usize> = p.steps.iter().map(|(a, b)| (0..3).find(|&k| a[k] != b[k]).unwrap()).collect();
        prop_assert!(axes.windows(2).all(|a| a[0] <= a[1]));
        let t = canonical_path([u[0] + w[0], u[1] + w[1], u[2] + w[2]], [v[0] + w[0], v[1] + w[1], v[2] + w[2]], d).unwrap();
        for (s, q) in p.steps.iter().zip(&t.steps) {
            prop_assert_eq!([s.0[0] + w[0], s.0[1] + w[1], s.0[2] + w[2]], q.0);
        }
    }

    #[test]
    fn edge_count_bound(base in prop::array::uniform3(-5i64..5), z in prop::array::uniform3(-6i64..6),
                        k in 0usize..3, d in 1usize..=3) {
        let mut base = base;
        let mut z = z;
        for j in d..3 { base[j] = 0; z[j] = 0; }
        let k = k % d;
        prop_assume!(z != [0; 3]);
        let e = nn_edge(base, k);
        let fast = path_edge_count(e, z).unwrap();
        let brute = path_edge_count_brute(e, z, d).unwrap();
        prop_assert_eq!(fast, brute);
        prop_assert!(fast as i64 <= norm1(&z));
    }
}

#[test]
fn edge_count_sharp_along_axis() {
    let e = nn_edge([0, 0, 0], 0);
    assert_eq!(path_edge_count_brute(e, [5, 0, 0], 2).unwrap(), 5);
    assert!(path_edge_count_brute(e, [0, 0, 0], 2).is_err());
}

#[test]
fn antisymmetry_and_divergence() {
    for (d, eps, seed) in [(1, 1.0 / 6.0, 1u64), (1, 1.0 / 8.0, 2), (2, 1.0 / 8.0, 3)] {
        let g = cube_grid(d, eps);
        let pol = TruncationPolicy::default_for(&g.domain);
        let p: Vec<f64> = [1.0, -0.4][..d].to_vec();
        let f = SolenoidalField::build(&two_point(seed, d), &g, &pol, &p).unwrap();
        assert!(f.max_divergence() <= 1e-10, "{}", f.max_divergence());
        for i in 0..g.len() {
            let x = g.site(i);
            for w in [[1, 0, 0], [3, 1, 0], [-2, 5, 0], [0, -1, 0]] {
                let mut w = w;
                for k in d..3 {
                    w[k] = 0;
                }
                if w == [0; 3] {
                    continue;
                }
                let y = [x[0] + w[0], x[1] + w[1], x[2] + w[2]];
                assert_eq!(f.value(&y, &x), -f.value(&x, &y));
            }
        }
    }
}

#[test]
fn flux_energy_brute_force_and_scaling() {
    let g = cube_grid(1, 1.0 / 8.0);
    let pol = TruncationPolicy::default_for(&g.domain);
    let env = two_point(6, 1);
    let f1 = SolenoidalField::build(&env, &g, &pol, &[1.0]).unwrap();
    let f2 = SolenoidalField::build(&env, &g, &pol, &[2.0]).unwrap();
    let e1 = f1.flux_energy();
    assert!((f2.flux_energy() - 4.0 * e1).abs() < 1e-12 * e1);
    // brute force over all nearest-neighbour pairs from U, using the gather route
    let kappa = critlat_core::solver::kappa_of(&g);
    let mut acc = 0.0;
    for i in 0..g.len() {
        let x = g.site(i);
        for s in [1i64, -1] {
            let y = [x[0] + s, 0, 0];
            let base = if s > 0 { x } else { y };
            let gv = s as f64 * f1.nn_value_direct(&base, 0);
            let sig = gv - env.value(&x, &y) * (s as f64);
            acc += sig * sig;
        }
    }
    let want = 0.125 / kappa * acc;
    assert!((e1 - want).abs() < 1e-10 * want, "{e1} {want}");
    let unit = SolenoidalField::build(&EnvironmentSpec::unit(1).unwrap(), &g, &pol, &[1.0]).unwrap();
    assert_eq!(unit.flux_energy(), 0.0);
}

#[test]
fn pathwise_upper_bound_many_seeds() {
    for (d, eps) in [(1, 1.0 / 8.0), (2, 1.0 / 8.0)] {
        let g = cube_grid(d, eps);
        let pol = TruncationPolicy::default_for(&g.domain);
        let p: Vec<f64> = vec![1.0; d];
        for seed in 0..8 {
            let r = energy_upper_bound_check(&two_point(seed, d), &g, &pol, &p, 1e-12).unwrap();
            assert!(r.holds && r.slack >= -1e-10 && r.bound > 0.0, "{d} {seed} {r:?}");
        }
        let r = energy_upper_bound_check(&EnvironmentSpec::unit(d).unwrap(), &g, &pol, &p, 1e-12).unwrap();
        assert!(r.nu <= 1e-12 && r.bound == 0.0);
    }
}
