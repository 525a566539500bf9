use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::net::small_net_8;
use crate::testutil::{assert_rel_close, gradient_check};

fn net(size: usize, seed: u64) -> RecognitionNet {
    RecognitionNet::build(small_net_8(8), [3, size, size], 8, seed).unwrap()
}

fn random_image(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0.05f32..0.95)).collect()).unwrap()
}

fn gram_oracle(x: &[f32], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut g = vec![0.0; c * c];
    for a in 0..c {
        for b in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for z in 0..w {
                    s += x[(a * h + y) * w + z] as f64 * x[(b * h + y) * w + z] as f64;
                }
            }
            g[a * c + b] = s / (c * h * w) as f64;
        }
    }
    g
}

fn tv_oracle(x: &[f32], c: usize, h: usize, w: usize) -> f64 {
    let at = |ch: usize, y: usize, z: usize| x[(ch * h + y) * w + z] as f64;
    let (mut v, mut hz) = (0.0, 0.0);
    for ch in 0..c {
        for y in 0..h {
            for z in 0..w {
                if y + 1 < h {
                    v += (at(ch, y + 1, z) - at(ch, y, z)).abs();
                }
                if z + 1 < w {
                    hz += (at(ch, y, z + 1) - at(ch, y, z)).abs();
                }
            }
        }
    }
    let nv = (c * (h - 1) * w).max(1) as f64;
    let nh = (c * h * (w - 1)).max(1) as f64;
    v / nv + hz / nh
}

/// The objective value in f64, as a function of the flat image.
fn value_f64(obj: &CompositeObjective, net: &RecognitionNet, shape: &[usize]) -> impl Fn(&[f64]) -> f64 {
    let (obj, net, shape) = (obj.clone(), net.clone(), shape.to_vec());
    move |x: &[f64]| {
        let mut tape = Tape::<f64>::new();
        let mut s = vec![1];
        s.extend_from_slice(&shape);
        let v = tape.constant(Tensor::new(s, x.to_vec()).unwrap());
        let rec = obj.record(&mut tape, v, &net).unwrap();
        tape.value(rec.total).data()[0]
    }
}

fn check_gradient(obj: &CompositeObjective, net: &RecognitionNet, image: &Tensor, seed: u64) {
    let (_, g) = evaluate_objective(obj, image, net).unwrap();
    let f = value_f64(obj, net, image.shape());
    let x: Vec<f64> = image.data().iter().map(|&v| v as f64).collect();
    let analytic: Vec<f64> = g.data().iter().map(|&v| v as f64).collect();
    let worst = gradient_check(f, &x, &analytic, 12, 1e-3, seed);
    assert!(worst <= 1e-2, "{:?}: worst rel err {worst}", obj.term_names());
}

#[test]
fn gram_matches_loop_oracle() {
    let x = random_image(&[4, 3, 5], 1);
    let g = gram(&x).unwrap();
    let o = gram_oracle(x.data(), 4, 3, 5);
    assert_eq!(g.channels, 4);
    assert_eq!(g.norm, 60.0);
    for (a, b) in g.values.iter().zip(&o) {
        assert_rel_close(*a, *b, 1e-9, 1e-12);
    }
    assert!(gram(&Tensor::zeros(&[2, 3])).is_err());
}

#[test]
fn gram_hand_case() {
    // Channel 0 = [1, 2], channel 1 = [3, 4] over a 1 x 2 map.
    let x = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let g = gram(&x).unwrap();
    assert_eq!(g.values, vec![5.0 / 4.0, 11.0 / 4.0, 11.0 / 4.0, 25.0 / 4.0]);
}

#[test]
fn total_variation_hand_cases() {
    let flat = Tensor::full(&[3, 4, 4], 0.3);
    assert_eq!(total_variation(&flat).unwrap(), 0.0);
    // Columns alternate 0, 1: every horizontal step is 1, vertical steps are 0.
    let stripes = Tensor::new(vec![1, 2, 2], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    assert!((total_variation(&stripes).unwrap() - 1.0).abs() < 1e-12);
    let x = random_image(&[3, 5, 6], 2);
    assert_rel_close(total_variation(&x).unwrap(), tv_oracle(x.data(), 3, 5, 6), 1e-5, 1e-9);
}

#[test]
fn content_and_style_vanish_on_own_image() {
    let n = net(16, 3);
    let x = random_image(&[3, 16, 16], 4);
    let stages = n.conv_stages();
    let r = representation(&n, &x, &stages).unwrap();
    assert_eq!(r.len(), stages.len());
    for &l in &stages {
        assert_eq!(content_loss(&r, &r, l).unwrap(), 0.0);
    }
    let sig = StyleSignature::from_image(&n, &x, &stages).unwrap();
    assert!(style_loss(&x, &sig, &n).unwrap().abs() < 1e-12);
    let y = random_image(&[3, 16, 16], 5);
    let ry = representation(&n, &y, &stages).unwrap();
    let c = content_loss(&r, &ry, stages[0]).unwrap();
    assert!(c > 0.0);
    assert_eq!(c, content_loss(&ry, &r, stages[0]).unwrap());
    assert!(style_loss(&y, &sig, &n).unwrap() > 0.0);
    assert!(content_loss(&r, &ry, 99).is_err());
}

#[test]
fn style_loss_matches_gram_definition() {
    let n = net(16, 6);
    let stages = n.conv_stages();
    let a = random_image(&[3, 16, 16], 7);
    let b = random_image(&[3, 16, 16], 8);
    let sig = StyleSignature::from_image(&n, &b, &stages)
        .unwrap()
        .with_weights(&[0.5, 2.0, 1.0])
        .unwrap();
    let ra = representation(&n, &a, &stages).unwrap();
    let mut expected = 0.0;
    for (l, target, w) in &sig.layers {
        let g = gram(ra.get(*l).unwrap()).unwrap();
        let ms: f64 = g
            .values
            .iter()
            .zip(&target.values)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            / g.values.len() as f64;
        expected += w * ms;
    }
    assert_rel_close(style_loss(&a, &sig, &n).unwrap(), expected, 1e-9, 1e-15);
    let (v, _) = CompositeObjective::single(ObjectiveTerm::StyleLoss { signature: sig }, 1.0, Direction::Minimize)
        .unwrap()
        .value(&a, &n)
        .unwrap();
    assert_rel_close(-v, expected, 1e-4, 1e-12);
}

#[test]
fn term_ranges() {
    let n = net(16, 9);
    for seed in 0..20 {
        let x = random_image(&[3, 16, 16], 100 + seed);
        for class in 0..8 {
            let obj = CompositeObjective::single(ObjectiveTerm::ClassProbability { class }, 1.0, Direction::Maximize)
                .unwrap();
            let (p, _) = obj.value(&x, &n).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
        let obj = CompositeObjective::single(ObjectiveTerm::LayerL2 { layer: 4 }, 1.0, Direction::Maximize).unwrap();
        assert!(obj.value(&x, &n).unwrap().0 >= 0.0);
    }
}

#[test]
fn composite_is_signed_weighted_sum() {
    let n = net(16, 10);
    let x = random_image(&[3, 16, 16], 11);
    let y = random_image(&[3, 16, 16], 12);
    let obj = CompositeObjective::new(vec![
        WeightedTerm {
            term: ObjectiveTerm::ClassLogit { class: 3 },
            weight: 2.0,
            direction: Direction::Maximize,
        },
        WeightedTerm {
            term: ObjectiveTerm::TotalVariation,
            weight: 0.5,
            direction: Direction::Minimize,
        },
        WeightedTerm {
            term: ObjectiveTerm::L2Distance { reference: y },
            weight: 0.1,
            direction: Direction::Minimize,
        },
    ])
    .unwrap();
    let (v, terms) = obj.value(&x, &n).unwrap();
    assert_rel_close(v, 2.0 * terms[0] - 0.5 * terms[1] - 0.1 * terms[2], 1e-5, 1e-9);
    assert_rel_close(terms[1], tv_oracle(x.data(), 3, 16, 16), 1e-5, 1e-9);
    let (ev, _) = evaluate_objective(&obj, &x, &n).unwrap();
    assert_eq!(ev, v);
}

#[test]
fn validation_rejects_out_of_range_terms() {
    let n = net(16, 13);
    let x = random_image(&[3, 16, 16], 14);
    let bad = [
        ObjectiveTerm::ClassLogit { class: 8 },
        ObjectiveTerm::Neuron {
            layer: 1,
            channel: 16,
            y: 0,
            x: 0,
        },
        ObjectiveTerm::Neuron {
            layer: 1,
            channel: 0,
            y: 16,
            x: 0,
        },
        ObjectiveTerm::ChannelMean { layer: 11, channel: 0 },
        ObjectiveTerm::LayerL2 { layer: 20 },
        ObjectiveTerm::ContentLoss {
            layer: 1,
            target: Tensor::zeros(&[1, 16, 4, 4]),
        },
        ObjectiveTerm::L2Distance {
            reference: Tensor::zeros(&[3, 8, 8]),
        },
    ];
    for term in bad {
        let obj = CompositeObjective::single(term, 1.0, Direction::Maximize).unwrap();
        assert!(evaluate_objective(&obj, &x, &n).is_err(), "{:?}", obj.term_names());
    }
    assert!(CompositeObjective::new(vec![]).is_err());
    assert!(CompositeObjective::single(ObjectiveTerm::TotalVariation, f64::NAN, Direction::Minimize).is_err());
    let obj = CompositeObjective::single(ObjectiveTerm::TotalVariation, 1.0, Direction::Minimize).unwrap();
    assert!(evaluate_objective(&obj, &Tensor::zeros(&[3, 8, 8]), &n).is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let n = net(16, 15);
    let x = random_image(&[3, 16, 16], 16);
    let other = random_image(&[3, 16, 16], 17);
    let stages = n.conv_stages();
    let terms = vec![
        ObjectiveTerm::ClassProbability { class: 2 },
        ObjectiveTerm::ClassLogit { class: 5 },
        ObjectiveTerm::Neuron {
            layer: 4,
            channel: 3,
            y: 4,
            x: 4,
        },
        ObjectiveTerm::ChannelMean { layer: 7, channel: 10 },
        ObjectiveTerm::LayerL2 { layer: 4 },
        ObjectiveTerm::content_from_image(&n, &other, stages[2]).unwrap(),
        ObjectiveTerm::StyleLoss {
            signature: StyleSignature::from_image(&n, &other, &stages).unwrap(),
        },
        ObjectiveTerm::TotalVariation,
        ObjectiveTerm::L2Distance { reference: other },
    ];
    for (i, term) in terms.into_iter().enumerate() {
        let obj = CompositeObjective::single(term, 1.0, Direction::Maximize).unwrap();
        check_gradient(&obj, &n, &x, 20 + i as u64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gram_is_symmetric_psd(c in 1usize..5, h in 1usize..5, w in 1usize..5, seed in 0u64..1000) {
        let x = random_image(&[c, h, w], seed);
        let g = gram(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 7);
        let v: Vec<f64> = (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut q = 0.0;
        for a in 0..c {
            for b in 0..c {
                prop_assert_eq!(g.get(a, b), g.get(b, a));
                q += v[a] * g.get(a, b) * v[b];
            }
        }
        prop_assert!(q >= -1e-12);
    }

    #[test]
    fn total_variation_nonnegative_and_shift_invariant(
        c in 1usize..4, h in 1usize..6, w in 1usize..6, seed in 0u64..1000, shift in -0.05f32..0.05,
    ) {
        let x = random_image(&[c, h, w], seed);
        let tv = total_variation(&x).unwrap();
        prop_assert!(tv >= 0.0);
        prop_assert!((tv - tv_oracle(x.data(), c, h, w)).abs() <= 1e-5 * tv.max(1e-3));
        let shifted = x.map(|v| v + shift).unwrap();
        prop_assert!((total_variation(&shifted).unwrap() - tv).abs() <= 1e-5);
    }
}
