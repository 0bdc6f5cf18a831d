use mmr_core::attack::{inject, make_matrix, AttackKind, NoiseSpec};
use mmr_core::data::{generate, Class, GeneratorSpec, SoftLabel};
use mmr_core::fuzzy::{mean_embedding, target_distribution, update_assignments, update_centers, ClusterState};
use mmr_core::gmm::fit_gmm;
use mmr_core::hil::{detect, select_queries, RoundInfo};
use mmr_core::metrics::{increment, relative_efficiency};
use mmr_core::model::{ModelConfig, MmrModel};
use mmr_core::nn::loss::{cross_entropy, kl_divergence, reconstruction};
use mmr_core::nn::Layer;
use mmr_core::trainer::{correct_labels, omega};
use mmr_core::Tensor;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, lo: f64, hi: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(lo..hi, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn stochastic_rows(rows: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f64..=1.0, rows).prop_map(move |p| {
        let data = p.iter().flat_map(|&a| [a, 1.0 - a]).collect();
        Tensor::new(vec![rows, 2], data).unwrap()
    })
}

fn row_sums_ok(t: &Tensor, tol: f64) -> bool {
    (0..t.batch()).all(|i| (t.row(i).iter().sum::<f64>() - 1.0).abs() <= tol && t.row(i).iter().all(|&v| v >= 0.0))
}

fn class() -> impl Strategy<Value = Class> {
    prop_oneof![Just(Class::Stable), Just(Class::Unstable)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(5, 3, -40.0, 40.0)) {
        let y = Layer::Softmax.forward(&x).unwrap();
        prop_assert!(row_sums_ok(&y, 1e-12));
    }

    #[test]
    fn assignments_and_targets_are_distributions(
        z in matrix(12, 3, -5.0, 5.0),
        c in matrix(2, 3, -5.0, 5.0),
    ) {
        let state = ClusterState { centers: c, mean: mean_embedding(&z), fuzzifier: 2.0 };
        let q = update_assignments(&z, &state).unwrap();
        prop_assert!(row_sums_ok(&q, 1e-9));
        let (p, _) = target_distribution(&q).unwrap();
        prop_assert!(row_sums_ok(&p, 1e-9));
    }

    #[test]
    fn uniform_memberships_put_both_centers_on_the_mean(z in matrix(9, 4, -3.0, 3.0), m in 1.1f64..4.0) {
        let q = Tensor::filled(&[9, 2], 0.5);
        let (centers, _) = update_centers(&z, &q, m).unwrap();
        let mean = mean_embedding(&z);
        for j in 0..2 {
            for (a, b) in centers.row(j).iter().zip(&mean) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn correction_stays_on_the_simplex_and_skips_frozen(
        cases in prop::collection::vec((0.0f64..=1.0, class(), class(), any::<bool>()), 1..30),
        w in 0.0f64..=1.0,
    ) {
        let mut labels: Vec<SoftLabel> = cases.iter().map(|c| SoftLabel::new(c.0, 1.0 - c.0).unwrap()).collect();
        let before = labels.clone();
        let y_c: Vec<Class> = cases.iter().map(|c| c.1).collect();
        let y_clu: Vec<Class> = cases.iter().map(|c| c.2).collect();
        let frozen: Vec<bool> = cases.iter().map(|c| c.3).collect();
        correct_labels(&mut labels, &y_c, &y_clu, w, &frozen).unwrap();
        for i in 0..labels.len() {
            prop_assert!(labels[i].is_valid());
            if frozen[i] {
                prop_assert_eq!(labels[i], before[i]);
            } else if y_c[i] == y_clu[i] {
                // Agreeing predictors never move the label away from them.
                let k = y_c[i].index();
                prop_assert!(labels[i].probs()[k] >= before[i].probs()[k] - 1e-12);
            }
        }
    }

    #[test]
    fn omega_is_monotone_and_saturates(kappa in 0.001f64..0.5, t in 0usize..400) {
        prop_assert!(omega(kappa, t) <= omega(kappa, t + 1));
        prop_assert!((0.0..=1.0).contains(&omega(kappa, t)));
        let full = (1.0 / kappa).ceil() as usize;
        prop_assert_eq!(omega(kappa, full + t), 1.0);
    }

    #[test]
    fn detection_is_exactly_the_threshold_set(p in prop::collection::vec(0.0f64..=1.0, 0..60), tau in 0.0f64..1.0) {
        let d = detect(&p, tau);
        let mut sorted = d.clone();
        sorted.sort_unstable();
        let expected: Vec<usize> = (0..p.len()).filter(|&i| p[i] > tau).collect();
        prop_assert_eq!(sorted, expected);
        prop_assert!(d.windows(2).all(|w| p[w[0]] >= p[w[1]]));
    }

    #[test]
    fn query_selection_is_bounded_and_distinct(
        p in prop::collection::vec(0.0f64..=1.0, 1..80),
        annotated_bits in prop::collection::vec(any::<bool>(), 80),
        per in 0usize..20,
        dedupe in any::<bool>(),
    ) {
        let annotated = &annotated_bits[..p.len()];
        let d = detect(&p, 0.3);
        let items = select_queries(&d, &p, per, annotated, dedupe, RoundInfo { round: 0, epoch: 3 });
        prop_assert!(items.len() <= 2 * per);
        let mut ids: Vec<usize> = items.iter().map(|q| q.sample_id).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), items.len());
        for q in &items {
            prop_assert!(d.contains(&q.sample_id));
            prop_assert_eq!(q.duplicate, annotated[q.sample_id]);
            prop_assert!(!(dedupe && q.duplicate));
        }
    }

    #[test]
    fn gmm_ranking_ignores_loss_units(
        lo in prop::collection::vec(0.05f64..0.3, 20..60),
        hi in prop::collection::vec(1.0f64..2.0, 20..60),
        scale in 0.1f64..10.0,
    ) {
        let losses: Vec<f64> = lo.iter().chain(&hi).copied().collect();
        let scaled: Vec<f64> = losses.iter().map(|l| l * scale).collect();
        let a = fit_gmm(&losses).unwrap().p_false_all(&losses);
        let b = fit_gmm(&scaled).unwrap().p_false_all(&scaled);
        for i in 0..losses.len() {
            prop_assert!((a[i] - b[i]).abs() <= 1e-6);
        }
    }

    #[test]
    fn flipped_means_label_disagrees_with_truth(
        kind in prop_oneof![Just(AttackKind::Sym), Just(AttackKind::Asym)],
        ratio in 0.0f64..=0.5,
        seed in any::<u64>(),
        exact in any::<bool>(),
    ) {
        let ds = generate(&GeneratorSpec { n: 60, h: 2, w: 8, seed: 3, ..GeneratorSpec::default() }).unwrap();
        let out = inject(&ds, &NoiseSpec { exact, ..NoiseSpec::new(kind, ratio, seed) }).unwrap();
        for i in 0..out.len() {
            prop_assert_eq!(out.flipped_mask()[i], out.labels_train()[i].argmax() != out.labels_true()[i]);
        }
        let g = make_matrix(&NoiseSpec::new(kind, ratio, seed)).unwrap();
        for row in g.0 {
            prop_assert!((row[0] + row[1] - 1.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn efficiency_is_linear_in_delta(delta in -50.0f64..50.0, k in 0.0f64..30.0, dup in 0.01f64..1.0, c in 0.1f64..10.0) {
        let a = relative_efficiency(delta, k, dup, 100).unwrap().xi;
        let b = relative_efficiency(c * delta, k, dup, 100).unwrap().xi;
        prop_assert!((b - c * a).abs() <= 1e-9 * (1.0 + b.abs()));
    }

    #[test]
    fn increments_are_antisymmetric(a in 0.0f64..100.0, ca in 0usize..60, b in 0.0f64..100.0, cb in 0usize..60) {
        let x = increment(a, ca, b, cb);
        let y = increment(b, cb, a, ca);
        prop_assert_eq!(x.delta, -y.delta);
        prop_assert_eq!(x.k, -y.k);
    }

    #[test]
    fn losses_are_finite_and_nonnegative(
        probs in stochastic_rows(6),
        targets in stochastic_rows(6),
        x in matrix(6, 5, -3.0, 3.0),
        y in matrix(6, 5, -3.0, 3.0),
    ) {
        let ce = cross_entropy(&probs, &targets, None).unwrap().loss();
        let (kl, _) = kl_divergence(&probs, &targets).unwrap();
        let rec = reconstruction(&x, &y).unwrap().loss();
        for v in [ce, kl.loss(), rec] {
            prop_assert!(v.is_finite() && v >= -1e-12);
        }
    }
}

#[test]
fn conv_decoder_reproduces_the_input_shape() {
    for (h, w) in [(8, 8), (8, 16), (16, 32), (24, 40)] {
        let model = MmrModel::new(ModelConfig { embed_dim: 4, ..ModelConfig::default() }, h, w, 1).unwrap();
        let x = Tensor::zeros(&[2, 1, h, w]);
        assert_eq!(model.reconstruct(&x).unwrap().shape(), x.shape(), "{h}x{w}");
        assert_eq!(model.embed(&x).unwrap().shape(), &[2, 4]);
    }
}

#[test]
fn noise_free_envelopes_separate_the_classes() {
    // With one constant-amplitude channel the late-window energy of every
    // growing sample exceeds that of every decaying one.
    let ds = generate(&GeneratorSpec {
        n: 200,
        h: 1,
        w: 64,
        noise_sigma: 0.0,
        amplitude: (1.0, 1.0),
        frequency: (2.0, 2.0),
        phase: (0.0, 0.0),
        seed: 9,
        ..GeneratorSpec::default()
    })
    .unwrap();
    let energy = |i: usize| ds.sample(i)[48..].iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>();
    let max_stable = (0..ds.len())
        .filter(|&i| ds.labels_true()[i] == Class::Stable)
        .map(energy)
        .fold(0.0, f64::max);
    let min_unstable = (0..ds.len())
        .filter(|&i| ds.labels_true()[i] == Class::Unstable)
        .map(energy)
        .fold(f64::INFINITY, f64::min);
    assert!(min_unstable > max_stable, "{min_unstable} vs {max_stable}");
}
