//! Property tests for the structural invariants.

use gisnet::autodiff::{ops, Tensor};
use gisnet::graph::{block_diagonal_batch, gcn_forward, normalize_adjacency, SceneGraph};
use proptest::prelude::*;

fn arb_graph(max_n: usize) -> impl Strategy<Value = SceneGraph> {
    (1..=max_n).prop_flat_map(|n| {
        let edges = proptest::collection::vec((0..n, 0..n), 0..=n * 2);
        (Just(n), 0..n, edges).prop_map(|(n, target, raw)| {
            let edges: Vec<(usize, usize)> = raw.into_iter().filter(|(a, b)| a != b).collect();
            SceneGraph::new(n, target, edges).expect("valid graph")
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Block-diagonal batching never changes what a scene computes.
    #[test]
    fn gcn_batching_is_equivalent_to_per_scene_runs(
        graphs in proptest::collection::vec(arb_graph(6), 1..5),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let l = 4;
        let d = 3;
        let w0 = Tensor::uniform(vec![l, d], -1.0, 1.0, &mut rng);
        let w1 = Tensor::uniform(vec![d, d], -1.0, 1.0, &mut rng);
        let normalized: Vec<_> = graphs.iter().map(normalize_adjacency).collect();
        let features: Vec<Tensor> = graphs
            .iter()
            .map(|g| {
                let n = g.vertex_count();
                let vals: Vec<f64> = (0..n * l).map(|_| rng.random_range(-2.0..2.0)).collect();
                Tensor::from_vec(vec![n, l], vals).unwrap()
            })
            .collect();
        let batch = block_diagonal_batch(&normalized).unwrap();
        let stacked = {
            let mut vals = Vec::new();
            for f in &features {
                vals.extend_from_slice(f.values());
            }
            Tensor::from_vec(vec![batch.dim(), l], vals).unwrap()
        };
        let fused = gcn_forward(None, &stacked, &batch, &w0, &w1).unwrap();
        let mut offset = 0;
        for (g, f) in normalized.iter().zip(&features) {
            let single = gcn_forward(None, f, g, &w0, &w1).unwrap();
            for (i, v) in single.values().iter().enumerate() {
                let fused_v = fused.values()[offset * d + i];
                prop_assert!((fused_v - v).abs() < 1e-12);
            }
            offset += g.dim();
        }
    }

    /// Max pooling equals the brute-force window scan for any window shape
    /// that fits.
    #[test]
    fn maxpool_equals_window_scan(
        c in 1usize..4,
        h in 1usize..8,
        w in 1usize..8,
        ph in 1usize..4,
        pw in 1usize..4,
        seed in 0u64..1000,
    ) {
        prop_assume!(ph <= h && pw <= w);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let vals: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-5.0..5.0)).collect();
        let input = Tensor::from_vec(vec![c, h, w], vals.clone()).unwrap();
        let out = ops::maxpool2d(None, &input, (ph, pw)).unwrap();
        let (oh, ow) = (h / ph, w / pw);
        prop_assert_eq!(out.shape(), &[c, oh, ow]);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for p in 0..ph {
                        for q in 0..pw {
                            best = best.max(vals[ch * h * w + (i * ph + p) * w + (j * pw + q)]);
                        }
                    }
                    prop_assert_eq!(out.values()[ch * oh * ow + i * ow + j], best);
                }
            }
        }
    }

    /// Concatenation is exactly invertible by slicing, values and shapes.
    #[test]
    fn concat_then_slice_recovers_parts(
        lens in proptest::collection::vec(1usize..6, 1..5),
        seed in 0u64..1000,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let parts: Vec<Tensor> = lens
            .iter()
            .map(|&n| {
                let vals: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                Tensor::from_vec(vec![n], vals).unwrap()
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let joined = ops::concat(None, &refs).unwrap();
        prop_assert_eq!(joined.numel(), lens.iter().sum::<usize>());
        let mut offset = 0;
        for p in &parts {
            prop_assert_eq!(&joined.values()[offset..offset + p.numel()], p.values());
            offset += p.numel();
        }
    }
}
