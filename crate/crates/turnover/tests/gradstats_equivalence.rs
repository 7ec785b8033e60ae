//! The factorized-Gram route inside `subset_stats` must agree with statistics
//! computed from materialized flat per-example gradient vectors.

use turnover::gradstats::{contribution, cosine_similarity, subset_stats};
use turnover::nn::{init_params, per_example_gradients, ModelConfig, Network, Precision};
use turnover::rng::SplitMix64;
use turnover::tensor::Tensor;

fn setup(batch_n: usize) -> (Network<f64>, Tensor<f64>, Vec<usize>, Vec<u64>) {
    let cfg = ModelConfig::mlp(6, 10, 4, 3, Precision::F64);
    let net = init_params(&cfg).unwrap();
    let mut rng = SplitMix64::new(31);
    let data: Vec<f64> = (0..batch_n * 6).map(|_| rng.next_gaussian()).collect();
    let batch = Tensor::from_vec(&[batch_n, 6], data).unwrap();
    let labels: Vec<usize> = (0..batch_n).map(|_| rng.next_below(4) as usize).collect();
    let ids: Vec<u64> = (0..batch_n as u64).collect();
    (net, batch, labels, ids)
}

#[test]
fn factorized_stats_match_materialized_vectors() {
    let batch_n = 9;
    let (net, batch, labels, ids) = setup(batch_n);
    let tags: Vec<Option<&str>> = (0..batch_n)
        .map(|i| if i % 3 == 0 { Some("a") } else { Some("b") })
        .collect();
    let rows = subset_stats(&net, &batch, &labels, &tags, 0, 0).unwrap();

    let vectors = per_example_gradients(&net, &batch, &labels, &ids).unwrap();
    let mut g = vec![0.0f64; vectors[0].flat.len()];
    for v in &vectors {
        for (acc, &x) in g.iter_mut().zip(&v.flat) {
            *acc += x;
        }
    }
    for acc in &mut g {
        *acc /= batch_n as f64;
    }

    for row in &rows {
        let members: Vec<usize> = match row.subset_tag.as_str() {
            "full" => (0..batch_n).collect(),
            tag => (0..batch_n).filter(|&i| tags[i] == Some(tag)).collect(),
        };
        assert_eq!(row.n_examples, members.len());

        let member_vectors: Vec<_> = members.iter().map(|&i| vectors[i].clone()).collect();
        let expected_cos = cosine_similarity(&member_vectors);
        match (row.cosine_similarity, expected_cos.value) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-10, "{}: {a} vs {b}", row.subset_tag),
            (None, None) => {}
            other => panic!("cosine mismatch: {other:?}"),
        }

        let expected_contrib = members
            .iter()
            .map(|&i| contribution(&vectors[i].flat, &g).unwrap())
            .sum::<f64>()
            / members.len() as f64;
        let got = row.mean_contribution.unwrap();
        assert!(
            (got - expected_contrib).abs() < 1e-10,
            "{}: contribution {got} vs {expected_contrib}",
            row.subset_tag
        );

        let expected_norm = members
            .iter()
            .map(|&i| {
                vectors[i].flat.iter().map(|x| x * x).sum::<f64>().sqrt()
            })
            .sum::<f64>()
            / members.len() as f64;
        assert!((row.mean_grad_norm - expected_norm).abs() < 1e-10);
    }
}

#[test]
fn full_batch_mean_contribution_is_gradient_norm() {
    // With g the mean of the per-example gradients, mean_i (v_i . g)/||g|| = ||g||.
    let (net, batch, labels, _) = setup(12);
    let tags: Vec<Option<&str>> = vec![None; 12];
    let rows = subset_stats(&net, &batch, &labels, &tags, 0, 0).unwrap();
    assert_eq!(rows.len(), 1);
    let full = &rows[0];
    let vectors = per_example_gradients(
        &net,
        &batch,
        &labels,
        &(0..12u64).collect::<Vec<_>>(),
    )
    .unwrap();
    let mut g = vec![0.0f64; vectors[0].flat.len()];
    for v in &vectors {
        for (acc, &x) in g.iter_mut().zip(&v.flat) {
            *acc += x;
        }
    }
    for acc in &mut g {
        *acc /= 12.0;
    }
    let g_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let got = full.mean_contribution.unwrap();
    assert!(
        (got - g_norm).abs() < 1e-5 * g_norm.max(1.0),
        "mean contribution {got} vs ||g|| {g_norm}"
    );
}

#[test]
fn conv_fallback_matches_materialized_route() {
    let cfg = ModelConfig {
        input_shape: vec![1, 6, 6],
        layers: vec![
            turnover::nn::LayerSpec::Conv2d { in_ch: 1, out_ch: 3, kernel: 3, stride: 1, pad: 1 },
            turnover::nn::LayerSpec::Relu,
            turnover::nn::LayerSpec::MaxPool2d { k: 2 },
            turnover::nn::LayerSpec::Flatten,
            turnover::nn::LayerSpec::Dense { input: 27, output: 4 },
            turnover::nn::LayerSpec::SoftmaxHead { classes: 4 },
        ],
        init_seed: 8,
        precision: Precision::F64,
    };
    let net: Network<f64> = init_params(&cfg).unwrap();
    let mut rng = SplitMix64::new(6);
    let n = 5;
    let data: Vec<f64> = (0..n * 36).map(|_| rng.next_gaussian()).collect();
    let batch = Tensor::from_vec(&[n, 1, 6, 6], data).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.next_below(4) as usize).collect();
    let ids: Vec<u64> = (0..n as u64).collect();
    let tags: Vec<Option<&str>> = vec![Some("x"); n];

    let rows = subset_stats(&net, &batch, &labels, &tags, 3, 1).unwrap();
    let vectors = per_example_gradients(&net, &batch, &labels, &ids).unwrap();
    let expected = cosine_similarity(&vectors).value.unwrap();
    let full = rows.iter().find(|r| r.subset_tag == "full").unwrap();
    assert!((full.cosine_similarity.unwrap() - expected).abs() < 1e-10);
}
