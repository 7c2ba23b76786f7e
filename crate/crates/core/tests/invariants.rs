//! Property tests for the library-wide invariants.

mod support;

use proptest::prelude::*;

use amd_mil::aggregators::{amd_forward, AttentionConfig};
use amd_mil::mil::{bag_label_rule, pipeline_forward, AggregatorVariant, Bag, ModelParams};
use amd_mil::numerics::{softmax_rows, Matrix, Rng};
use amd_mil::synthdata::{generate_dataset, load_bags, save_bags, DatasetConfig};
use support::{in_convex_hull, random_matrix};

#[test]
fn hull_oracle_sanity() {
    let tri: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
    let verts: Vec<&[f64]> = tri.iter().map(|v| v.as_slice()).collect();
    assert!(in_convex_hull(&[0.25, 0.25], &verts, 1e-9));
    assert!(in_convex_hull(&[0.0, 0.0], &verts, 1e-9));
    assert!(!in_convex_hull(&[0.6, 0.6], &verts, 1e-9));
    assert!(!in_convex_hull(&[-0.1, 0.5], &verts, 1e-9));

    let tet: Vec<Vec<f64>> = vec![
        vec![0.0, 0.0, 0.0],
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    let verts: Vec<&[f64]> = tet.iter().map(|v| v.as_slice()).collect();
    assert!(in_convex_hull(&[0.2, 0.2, 0.2], &verts, 1e-9));
    assert!(!in_convex_hull(&[0.5, 0.5, 0.5], &verts, 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_always_stochastic(seed in 0u64..1000, rows in 1usize..8, cols in 1usize..8, scale in 0.1f64..50.0) {
        let mut rng = Rng::new(seed);
        let x = random_matrix(&mut rng, rows, cols).scale(scale);
        let y = softmax_rows(&x);
        for r in 0..rows {
            let sum: f64 = y.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(y.row(r).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn matmul_is_associative(seed in 0u64..1000) {
        let mut rng = Rng::new(seed);
        let a = random_matrix(&mut rng, 3, 4);
        let b = random_matrix(&mut rng, 4, 5);
        let c = random_matrix(&mut rng, 5, 2);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        for (l, r) in left.data().iter().zip(right.data()) {
            prop_assert!((l - r).abs() <= 1e-9);
        }
    }

    #[test]
    fn generated_labels_obey_the_bag_rule(seed in 0u64..500) {
        let cfg = DatasetConfig {
            seed,
            num_bags: 8,
            feature_dim: 4,
            n_range: (1, 6),
            witness_rate: 0.4,
            class_count: 2,
            separation: 1.0,
            noise_std: 1.0,
        };
        let bags = generate_dataset::<f32>(&cfg).unwrap();
        for bag in &bags {
            let labels = bag.instance_labels.as_ref().unwrap();
            prop_assert_eq!(bag_label_rule(labels).unwrap(), bag.label);
        }
    }

    #[test]
    fn bag_files_round_trip(seed in 0u64..200) {
        let cfg = DatasetConfig {
            seed,
            num_bags: 3,
            feature_dim: 3,
            n_range: (1, 5),
            witness_rate: 0.5,
            class_count: 2,
            separation: 1.5,
            noise_std: 0.7,
        };
        let bags = generate_dataset::<f32>(&cfg).unwrap();
        let dir = std::env::temp_dir().join(format!("amdmil_prop_rt_{seed}"));
        let _ = std::fs::remove_dir_all(&dir);
        let manifest = save_bags(&bags, &cfg, &dir).unwrap();
        let (_, loaded) = load_bags::<f32>(&manifest).unwrap();
        prop_assert_eq!(loaded, bags);
        let _ = std::fs::remove_dir_all(&dir);
    }
}

fn permuted_bag(bag: &Bag<f64>, perm: &[usize]) -> Bag<f64> {
    let d = bag.feature_dim();
    let mut data = Vec::with_capacity(bag.instances() * d);
    for &i in perm {
        data.extend_from_slice(bag.features.row(i));
    }
    Bag {
        features: Matrix::new(bag.instances(), d, data).unwrap(),
        label: bag.label,
        instance_labels: None,
        id: bag.id.clone(),
    }
}

/// Permuting instance rows permutes attention identically and leaves the
/// logits unchanged. Nyström and the pooling agent are excluded: their
/// contiguous-segment pooling is order-dependent by construction.
#[test]
fn permutation_equivariance_of_attention_and_logits() {
    let mut rng = Rng::new(321);
    let mut cfg = AttentionConfig::new(6);
    cfg.agent_count = 3;
    cfg.cnn_groups = 2;
    let variants = [
        AggregatorVariant::Mean,
        AggregatorVariant::Max,
        AggregatorVariant::Abmil,
        AggregatorVariant::Dense,
        AggregatorVariant::TrainableAgent,
        AggregatorVariant::AmdMask,
        AggregatorVariant::Amd,
    ];
    for trial in 0..10u64 {
        let n = 4 + (trial as usize % 5);
        let bag = Bag {
            features: random_matrix(&mut rng, n, 6),
            label: 0,
            instance_labels: None,
            id: format!("perm{trial}"),
        };
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let shuffled = permuted_bag(&bag, &perm);
        for variant in variants {
            let params = ModelParams::<f64>::init(variant, &cfg, 2, &mut Rng::new(500 + trial));
            let base = pipeline_forward(&bag, variant, &params, &cfg).unwrap();
            let moved = pipeline_forward(&shuffled, variant, &params, &cfg).unwrap();
            for (a, b) in base.logits.iter().zip(&moved.logits) {
                assert!(
                    (a - b).abs() <= 1e-6,
                    "{variant}: logits changed under permutation ({a} vs {b})"
                );
            }
            // max's attention proxy depends on exact argmax ties; skip it
            if variant == AggregatorVariant::Max {
                continue;
            }
            for (new_pos, &old_pos) in perm.iter().enumerate() {
                let a = base.attention[old_pos];
                let b = moved.attention[new_pos];
                assert!(
                    (a - b).abs() <= 1e-6,
                    "{variant}: attention not permuted consistently"
                );
            }
        }
    }
}

/// AMD with the class token held fixed: O[0] must not move under instance
/// permutation.
#[test]
fn amd_class_token_output_is_permutation_invariant() {
    let mut rng = Rng::new(99);
    let mut cfg = AttentionConfig::new(5);
    cfg.agent_count = 2;
    cfg.cnn_groups = 1;
    for trial in 0..20u64 {
        let n = 3 + (trial as usize % 6);
        let params = match ModelParams::<f64>::init(
            AggregatorVariant::Amd,
            &cfg,
            2,
            &mut Rng::new(700 + trial),
        ) {
            ModelParams::Attention(p) => p,
            _ => unreachable!(),
        };
        let features = random_matrix(&mut rng, n, 5);
        let mut h_rows = vec![params.class_token.value.row(0).to_vec()];
        for r in 0..n {
            h_rows.push(features.row(r).to_vec());
        }
        let h = Matrix::from_rows(&h_rows).unwrap();
        let (out_a, _) = amd_forward(&h, &params, &cfg, true).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let mut h2_rows = vec![params.class_token.value.row(0).to_vec()];
        for &i in &perm {
            h2_rows.push(features.row(i).to_vec());
        }
        let h2 = Matrix::from_rows(&h2_rows).unwrap();
        let (out_b, _) = amd_forward(&h2, &params, &cfg, true).unwrap();

        for (a, b) in out_a.out.row(0).iter().zip(out_b.out.row(0)) {
            assert!(
                (a - b).abs() <= 1e-6,
                "class-token output moved: {a} vs {b}"
            );
        }
    }
}
