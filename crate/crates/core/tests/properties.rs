use ndarray::{Array1, Array2, Axis};
use proptest::prelude::*;
use temi::features::FeatureSet;
use temi::heads::{ema_update, softmax_rows, Arch, HeadParams};
use temi::knn::{mine_knn, NeighborTable};
use temi::metrics::{ami, ari, diagnostics, hungarian_acc, nmi};
use temi::objective::{instance_weight, pmi, symmetrized_loss};
use temi::rng::rng_for;
use temi::theorem::{exact_expected_pmi, DiscreteModel};

fn normalize(v: Vec<f64>) -> Array1<f64> {
    let total: f64 = v.iter().sum();
    Array1::from_iter(v.into_iter().map(|x| x / total))
}

/// Strictly positive probability vectors of length `c`.
fn dist(c: usize) -> impl Strategy<Value = Array1<f64>> {
    prop::collection::vec(0.01f64..1.0, c).prop_map(normalize)
}

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pmi_beta_one_uniform_marginal((ps, pt) in (2usize..8).prop_flat_map(|c| (dist(c), dist(c)))) {
        let c = ps.len();
        let q = Array1::from_elem(c, 1.0 / c as f64);
        let got = pmi(ps.view(), pt.view(), q.view(), 1.0).unwrap();
        let expected = (c as f64).ln() + ps.dot(&pt).ln();
        prop_assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn pmi_beta_half_is_bhattacharyya((ps, pt) in (2usize..8).prop_flat_map(|c| (dist(c), dist(c)))) {
        let c = ps.len();
        let q = Array1::from_elem(c, 1.0 / c as f64);
        let got = pmi(ps.view(), pt.view(), q.view(), 0.5).unwrap();
        let bc: f64 = ps.iter().zip(&pt).map(|(a, b)| (a * b).sqrt()).sum();
        prop_assert!((got - (bc.ln() + (c as f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn instance_weight_bounds((a, b) in (2usize..8).prop_flat_map(|c| (dist(c), dist(c)))) {
        let w = instance_weight(a.view(), b.view());
        prop_assert!((0.0..=1.0).contains(&w));
        prop_assert!(w < 1.0, "soft inputs never reach weight 1");
    }

    #[test]
    fn loss_is_invariant_to_class_permutation(
        (v, perm, beta) in (2usize..7).prop_flat_map(|c| (prop::collection::vec(dist(c), 5), permutation(c), 0.51f64..=1.0))
    ) {
        let p = |x: &Array1<f64>| Array1::from_iter(perm.iter().map(|&k| x[k]));
        let a = symmetrized_loss(v[0].view(), v[1].view(), v[2].view(), v[3].view(), v[4].view(), beta).unwrap();
        let b = symmetrized_loss(p(&v[0]).view(), p(&v[1]).view(), p(&v[2]).view(), p(&v[3]).view(), p(&v[4]).view(), beta).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn forward_is_a_distribution(seed in any::<u64>(), x in matrix(4, 5, -50.0, 50.0), tau in 0.01f64..10.0) {
        let arch = Arch::new(5, 6, 7, 4).unwrap();
        let head = HeadParams::init(arch, &mut rng_for(seed, 0));
        for row in x.rows() {
            let p = head.forward(row, tau).unwrap();
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn softmax_ignores_constant_shift(logits in matrix(3, 6, -20.0, 20.0), shift in -1e3f64..1e3, tau in 0.05f64..5.0) {
        let a = softmax_rows(logits.view(), tau);
        let b = softmax_rows((&logits + shift).view(), tau);
        prop_assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn ema_stays_in_convex_hull(s1 in any::<u64>(), s2 in any::<u64>(), m in 0.001f64..0.999) {
        let arch = Arch::new(3, 4, 4, 2).unwrap();
        let mut teacher = HeadParams::init(arch, &mut rng_for(s1, 0));
        let student = HeadParams::init(arch, &mut rng_for(s2, 0));
        let before = teacher.clone();
        ema_update(&mut teacher, &student, m);
        for ((t, t0), s) in teacher.iter().zip(before.iter()).zip(student.iter()) {
            prop_assert!(*t >= t0.min(*s) && *t <= t0.max(*s));
        }
    }

    #[test]
    fn feature_round_trip(x in matrix(5, 3, -1e3, 1e3)) {
        let x32 = x.mapv(|v| v as f32 as f64);
        let fs = FeatureSet::new(x32.clone(), Some(vec![0, 1, 2, 0, 1]), "").unwrap();
        let mut bytes = Vec::new();
        fs.write_to(&mut bytes).unwrap();
        let back = FeatureSet::read_from(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(back.data(), &x32);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(bytes, again);
    }

    #[test]
    fn standardize_is_idempotent(x in matrix(6, 4, -100.0, 100.0)) {
        let once = FeatureSet::new(x, None, "").unwrap().standardize();
        let twice = once.standardize();
        prop_assert!(once.data().iter().zip(twice.data()).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn knn_matches_brute_force(x in matrix(12, 4, -1.0, 1.0), k in 1usize..6) {
        let fs = FeatureSet::new(x.clone(), None, "").unwrap();
        let nt = mine_knn(&fs, k).unwrap();
        prop_assert_eq!(nt.indices(), &brute_force_knn(&x, k));
    }

    #[test]
    fn cosine_ignores_row_scaling(x in matrix(10, 3, -1.0, 1.0), scales in prop::collection::vec(0.01f64..100.0, 10)) {
        let scaled = Array2::from_shape_fn(x.dim(), |(i, j)| x[[i, j]] * scales[i]);
        let a = mine_knn(&FeatureSet::new(x, None, "").unwrap(), 3).unwrap();
        let b = mine_knn(&FeatureSet::new(scaled, None, "").unwrap(), 3).unwrap();
        prop_assert_eq!(a.indices(), b.indices());
        prop_assert!(a.similarities().iter().zip(b.similarities()).all(|(p, q)| (p - q).abs() < 1e-5));
    }

    #[test]
    fn metrics_ignore_relabeling(
        (pred, truth, pp, tp) in (2usize..6, 2usize..6).prop_flat_map(|(kp, kt)| (
            prop::collection::vec(0..kp, 40),
            prop::collection::vec(0..kt, 40),
            permutation(kp),
            permutation(kt),
        ))
    ) {
        let pred2: Vec<usize> = pred.iter().map(|&l| pp[l]).collect();
        let truth2: Vec<usize> = truth.iter().map(|&l| tp[l]).collect();
        prop_assert_eq!(hungarian_acc(&pred, &truth).unwrap().acc, hungarian_acc(&pred2, &truth2).unwrap().acc);
        for f in [nmi, ari, ami] {
            let (a, b) = (f(&pred, &truth).unwrap(), f(&pred2, &truth2).unwrap());
            prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn diagnostics_bounds(x in matrix(20, 4, 0.0, 1.0)) {
        let probs = &x / &x.sum_axis(Axis(1)).mapv(|s| s.max(1e-12)).insert_axis(Axis(1));
        let probs = probs.mapv(|v| if v.is_finite() { v } else { 0.25 });
        prop_assume!(probs.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-9));
        let d = diagnostics(probs.view()).unwrap();
        let log_c = 4f64.ln();
        prop_assert!(d.marginal_entropy <= log_c + 1e-12);
        prop_assert!(d.conditional_entropy <= log_c + 1e-12);
        prop_assert!(d.kl_to_uniform >= -1e-12);
        prop_assert!(d.hard_kl_to_uniform >= -1e-12);
    }

    #[test]
    fn expected_pmi_column_permutation(seed in any::<u64>(), perm in permutation(4)) {
        let mut rng = rng_for(seed, 1);
        let model = DiscreteModel::random_soft(5, 3, &mut rng).unwrap();
        let q = Array2::from_shape_fn((5, 4), |(i, j)| 1.0 + ((seed >> ((i * 4 + j) % 60)) & 7) as f64);
        let q = &q / &q.sum_axis(Axis(1)).insert_axis(Axis(1));
        let permuted = Array2::from_shape_fn((5, 4), |(i, j)| q[[i, perm[j]]]);
        let a = exact_expected_pmi(&model, q.view()).unwrap().value;
        let b = exact_expected_pmi(&model, permuted.view()).unwrap().value;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a <= model.mutual_information() + 1e-10);
    }
}

/// Cosine similarities of every pair, sorted by (similarity desc, index asc),
/// self excluded.
fn brute_force_knn(x: &Array2<f64>, k: usize) -> Array2<usize> {
    let n = x.nrows();
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt().max(1e-12)).collect();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| (x.row(i).dot(&x.row(j)) / (norms[i] * norms[j]), j))
            .collect();
        cand.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (slot, (_, j)) in cand.into_iter().take(k).enumerate() {
            out[[i, slot]] = j;
        }
    }
    out
}

#[test]
fn neighbor_table_survives_round_trip() {
    let fs = FeatureSet::new(Array2::from_shape_fn((8, 3), |(i, j)| ((i * 7 + j * 3) % 5) as f64 - 2.0), None, "").unwrap();
    let nt = mine_knn(&fs, 3).unwrap();
    let mut bytes = Vec::new();
    nt.write_to(&mut bytes).unwrap();
    let back = NeighborTable::read_from(&mut bytes.as_slice()).unwrap();
    assert_eq!(back, nt);
}
