#![allow(clippy::needless_range_loop)]

use fedchip::corpus::{generate_synthetic, Corpus, Metric};
use fedchip::divergence::{
    divergence_matrix, divergence_table, js_divergence, kl_divergence, pooled_histograms,
    Histogram, Measure,
};
use fedchip::partition::{partition_corpus, DirichletSpec};
use proptest::prelude::*;

fn seven_clients() -> Vec<Corpus> {
    let corpus = generate_synthetic(1500, 7).unwrap();
    let spec = DirichletSpec::new(1.0, 0.2).unwrap();
    partition_corpus(&corpus, 3, &spec, 7).unwrap().1
}

#[test]
fn kl_is_asymmetric_on_partitioned_data() {
    let subs = seven_clients();
    let mut witness = false;
    for metric in Metric::ALL {
        let m = divergence_matrix(&subs, metric, 50, Measure::Kl).unwrap();
        for i in 0..3 {
            assert_eq!(m[i][i], 0.0);
            for j in 0..3 {
                assert!(m[i][j] >= 0.0);
                witness |= (m[i][j] - m[j][i]).abs() > 0.0;
            }
        }
    }
    assert!(witness);
}

#[test]
fn jsd_matrix_is_bounded_and_symmetric() {
    let subs = seven_clients();
    for metric in Metric::ALL {
        let m = divergence_matrix(&subs, metric, 50, Measure::Jsd).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&m[i][j]));
                assert!((m[i][j] - m[j][i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn identical_clients_have_zero_divergence() {
    let c = generate_synthetic(100, 2).unwrap();
    let subs = vec![c.clone(), c];
    for row in divergence_table(&subs, 20, false).unwrap() {
        assert_eq!(row.value, 0.0);
    }
}

#[test]
fn histograms_share_pooled_edges() {
    let subs = seven_clients();
    let hs = pooled_histograms(&subs, Metric::Slack, 30).unwrap();
    assert!(hs.windows(2).all(|w| w[0].edges() == w[1].edges()));
}

#[test]
fn bits_are_nats_over_ln2() {
    let subs = seven_clients();
    let nats = divergence_table(&subs, 50, false).unwrap();
    let bits = divergence_table(&subs, 50, true).unwrap();
    for (n, b) in nats.iter().zip(&bits) {
        assert!((n.value / std::f64::consts::LN_2 - b.value).abs() <= 1e-12 * n.value.max(1.0));
    }
}

fn hist(weights: Vec<f64>) -> Histogram {
    let total: f64 = weights.iter().sum();
    let edges = (0..=weights.len()).map(|i| i as f64).collect();
    Histogram::from_probs(edges, weights.into_iter().map(|w| w / total).collect()).unwrap()
}

proptest! {
    #[test]
    fn gibbs_and_jsd_laws(
        (p, q) in (2usize..20).prop_flat_map(|b| (
            proptest::collection::vec(0.01f64..1.0, b),
            proptest::collection::vec(0.01f64..1.0, b),
        ))
    ) {
        let (p, q) = (hist(p), hist(q));
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
        let a = js_divergence(&p, &q).unwrap();
        let b = js_divergence(&q, &p).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-12).contains(&a));
    }
}
