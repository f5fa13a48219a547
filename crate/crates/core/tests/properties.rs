use itkrm::adaptive::{prune_coherent, update_sparsity, ScoreHistory, SparsityState};
use itkrm::container::{read_matrix, write_matrix};
use itkrm::engine::{signal_update, threshold_support, top_s, CounterConfig};
use itkrm::image::{extract_patches, psnr, PatchConfig};
use itkrm::linalg::project_onto_span;
use itkrm::metrics::asym_distance;
use itkrm::omp::{approximation_power, omp, FlatAtom};
use itkrm::signal::SignalBatch;
use itkrm::{Dictionary, Support};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

/// Random dictionaries with columns bounded away from zero.
fn dictionary(d: usize, k: usize) -> impl Strategy<Value = Dictionary> {
    matrix(d, k)
        .prop_filter("columns too short", |m| m.column_iter().all(|c| c.norm() > 0.1))
        .prop_map(|m| Dictionary::from_columns(m).unwrap())
}

fn vector(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_map(DVector::from_vec)
        .prop_filter("near zero", |v| v.norm() > 0.1)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalised_columns(dico in dictionary(7, 11)) {
        for c in dico.matrix().column_iter() {
            prop_assert!((c.norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn distance_ignores_order_and_signs(
        (phi, perm, signs) in dictionary(6, 9).prop_flat_map(|p| {
            (Just(p), Just((0..9).collect::<Vec<usize>>()).prop_shuffle(), prop::collection::vec(any::<bool>(), 9))
        })
    ) {
        let cols: Vec<DVector<f64>> = perm
            .iter()
            .zip(&signs)
            .map(|(&i, &s)| phi.atom(i) * if s { -1.0 } else { 1.0 })
            .collect();
        let psi = Dictionary::from_vectors(&cols).unwrap();
        let (dist, _) = asym_distance(&phi, &psi).unwrap();
        prop_assert!(dist < 1e-6);
        let (self_dist, _) = asym_distance(&phi, &phi).unwrap();
        prop_assert!(self_dist < 1e-6);
    }

    #[test]
    fn projection_is_idempotent_and_orthogonal(dico in dictionary(8, 12), y in vector(8), s in 1usize..5) {
        let support = threshold_support(&dico, &y, s).unwrap();
        let p = project_onto_span(&dico, &support, &y).unwrap();
        let again = project_onto_span(&dico, &support, &p.projection).unwrap();
        prop_assert!((&again.projection - &p.projection).norm() < 1e-8);
        let r = p.residual(&y);
        for &k in support.indices() {
            prop_assert!(dico.atom(k).dot(&r).abs() < 1e-8);
        }
        prop_assert!(r.norm() <= y.norm() + 1e-12);
    }

    #[test]
    fn thresholding_ignores_scaling(dico in dictionary(8, 12), y in vector(8), s in 1usize..6, c in 0.01f64..100.0) {
        let base = threshold_support(&dico, &y, s).unwrap();
        prop_assert_eq!(&base, &threshold_support(&dico, &(&y * c), s).unwrap());
        prop_assert_eq!(&base, &threshold_support(&dico, &(&y * -c), s).unwrap());
    }

    #[test]
    fn top_s_keeps_largest(ips in prop::collection::vec(-1.0f64..1.0, 1..30), frac in 0.0f64..1.0) {
        let s = ((ips.len() as f64 * frac) as usize).max(1);
        let sel = top_s(&ips, s);
        prop_assert_eq!(sel.len(), s);
        prop_assert!(sel.windows(2).all(|w| w[0] < w[1]));
        let floor = sel.iter().map(|&k| ips[k].abs()).fold(f64::INFINITY, f64::min);
        for k in (0..ips.len()).filter(|k| !sel.contains(k)) {
            prop_assert!(ips[k].abs() <= floor);
        }
    }

    #[test]
    fn signal_update_is_odd(dico in dictionary(8, 12), y in vector(8), s in 1usize..5) {
        let cfg = CounterConfig { atom_log: Some(2.0), sparsity_log: Some(3.0) };
        let a = signal_update(&dico, &y, s, &cfg).unwrap();
        let b = signal_update(&dico, &(-&y), s, &cfg).unwrap();
        prop_assert_eq!(&a.support, &b.support);
        prop_assert!((&a.residual + &b.residual).norm() < 1e-10);
        prop_assert!((&a.coefficients + &b.coefficients).norm() < 1e-10);
        prop_assert_eq!(&a.score_hits, &b.score_hits);
        prop_assert_eq!(a.sparsity_hits, b.sparsity_hits);
        for j in 0..s {
            let k = a.support.indices()[j];
            prop_assert!((a.atom_increment(&dico, j) - b.atom_increment(&dico, j)).norm() < 1e-10, "atom {}", k);
        }
    }

    #[test]
    fn omp_residuals_shrink(dico in dictionary(6, 10), y in vector(6), s in 1usize..6) {
        let r = omp(&dico, &y, s).unwrap();
        prop_assert!(r.residual_energy.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        for &k in r.support.indices() {
            prop_assert!(dico.atom(k).dot(&r.residual).abs() < 1e-8);
        }
        prop_assert!((r.residual.norm_squared() - r.residual_energy.last().unwrap()).abs() < 1e-10);
    }

    #[test]
    fn approximation_error_is_monotone(dico in dictionary(6, 9), signals in matrix(6, 20), flat in any::<bool>()) {
        let batch = SignalBatch::from_matrix(signals);
        let rep = approximation_power(&dico, &batch, 5, FlatAtom { augment: flat, force: false }).unwrap();
        prop_assert!(rep.relative_error.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        prop_assert!(rep.relative_error.iter().all(|e| (0.0..=1.0).contains(e)));
    }

    #[test]
    fn sparsity_moves_by_at_most_one(s0 in 1usize..20, s_bar in 0usize..40, max_level in 1usize..25) {
        let s0 = s0.min(max_level);
        let mut st = SparsityState::new(s0);
        update_sparsity(&mut st, s_bar, max_level);
        prop_assert!(st.s_e.abs_diff(s0) <= 1);
        prop_assert!((1..=max_level).contains(&st.s_e));
        if s_bar == s0 {
            prop_assert_eq!(st.s_e, s0);
        }
    }

    #[test]
    fn merging_conserves_scores(dico in dictionary(4, 9), scores in prop::collection::vec(0u64..1000, 9), mu in 0.3f64..0.95) {
        let mut history = ScoreHistory::new(9, 3, 0);
        history.record(&scores).unwrap();
        let mut dico = dico;
        let merges = prune_coherent(&mut dico, &mut history, mu).unwrap();
        prop_assert_eq!(dico.len(), 9 - merges);
        prop_assert_eq!(history.len(), dico.len());
        let total: u64 = (0..history.len()).map(|k| history.most_recent(k)).sum();
        prop_assert_eq!(total, scores.iter().sum::<u64>());
    }

    #[test]
    fn container_round_trip(m in (0usize..6, 0usize..6).prop_flat_map(|(r, c)| matrix(r, c))) {
        let mut buf = Vec::new();
        write_matrix(&mut buf, &m).unwrap();
        prop_assert_eq!(buf.len(), 5 + 16 + 8 * m.len());
        prop_assert_eq!(read_matrix(buf.as_slice()).unwrap(), m);
    }

    #[test]
    fn patch_count_and_mean(h in 4usize..20, w in 4usize..20, p in 2usize..5, stride in 1usize..4, seed in any::<u64>()) {
        prop_assume!(p <= h && p <= w);
        let img = DMatrix::from_fn(h, w, |r, c| ((r * 31 + c * 17) as u64 ^ seed) as f64 % 255.0 / 255.0);
        let cfg = PatchConfig { patch_side: p, stride, remove_mean: true };
        let b = extract_patches(&img, &cfg).unwrap();
        prop_assert_eq!(b.len(), ((h - p) / stride + 1) * ((w - p) / stride + 1));
        prop_assert_eq!(b.dim(), p * p);
        for col in b.signals.column_iter() {
            prop_assert!(col.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_of_constant_offset(v in 0.0f64..1.0, delta in 1e-4f64..0.5) {
        let a = DMatrix::from_element(5, 7, v);
        let b = a.add_scalar(delta);
        prop_assert!((psnr(&a, &b).unwrap() + 20.0 * delta.log10()).abs() < 1e-9);
    }
}

#[test]
fn support_validation() {
    assert!(Support::new(vec![0, 0], 3).is_err());
    assert!(Support::new(vec![3], 3).is_err());
    assert!(Support::new(vec![2, 0], 3).is_ok());
}
