use elf_tensor::checkpoint::{decode, encode};
use elf_tensor::ops::{avg_pool2d, conv2d, conv_output_len, max_pool2d, mul, relu, softmax_cross_entropy, sum_all};
use elf_tensor::{backward, grad, PrngState, Tensor, TensorError};
use proptest::prelude::*;

#[test]
fn backward_examples() {
    let x = Tensor::<f64>::zeros(&[2, 2]).requires_grad();
    let g = backward(&sum_all(&x)).unwrap();
    assert_eq!(g.get(&x).unwrap().to_vec(), vec![1.0; 4]);

    let x = Tensor::<f64>::from_f64s(&[1], &[3.0]).unwrap().requires_grad();
    let g = backward(&sum_all(&mul(&x, &x).unwrap())).unwrap();
    assert_eq!(g.get(&x).unwrap().to_vec(), vec![6.0]);
}

#[test]
fn unreachable_leaf_gets_zero_and_non_scalar_root_fails() {
    let x = Tensor::<f32>::ones(&[3]).requires_grad();
    let y = Tensor::<f32>::ones(&[2, 2]).requires_grad();
    let gs = grad(&sum_all(&x), &[&x, &y], false).unwrap();
    assert_eq!(gs[1].shape(), &[2, 2]);
    assert!(gs[1].data().iter().all(|&v| v == 0.0));

    assert!(matches!(backward(&relu(&x)), Err(TensorError::NonScalarRoot(_))));
}

#[test]
fn constants_never_receive_gradients() {
    let c = Tensor::<f32>::ones(&[2]);
    let w = Tensor::<f32>::ones(&[2]).requires_grad();
    let g = backward(&sum_all(&mul(&c, &w).unwrap())).unwrap();
    assert!(g.get(&c).is_none());
    assert_eq!(g.len(), 1);
}

#[test]
fn gradients_scale_linearly_with_the_loss() {
    let mut rng = PrngState::new(5);
    let logits: Vec<f64> = (0..12).map(|_| rng.next_uniform() * 4.0 - 2.0).collect();
    let kernel: Vec<f64> = (0..18).map(|_| rng.next_uniform() - 0.5).collect();
    let base = || {
        let x = Tensor::<f64>::from_vec(&[1, 2, 3, 2], logits.clone())
            .unwrap()
            .requires_grad();
        let k = Tensor::<f64>::from_vec(&[3, 2, 1, 3], kernel.clone())
            .unwrap()
            .requires_grad();
        (x, k)
    };
    let loss_of = |x: &Tensor<f64>, k: &Tensor<f64>| {
        let y = conv2d(x, k, None, 1, 1).unwrap();
        softmax_cross_entropy(&y.reshape(&[3, 10]).unwrap(), &[1, 0, 5]).unwrap()
    };
    let (x, k) = base();
    let reference = grad(&loss_of(&x, &k), &[&x, &k], false).unwrap();
    for a in [0.0, 1.0, 2.0] {
        let (x, k) = base();
        let scaled = loss_of(&x, &k).scale(a);
        let gs = grad(&scaled, &[&x, &k], false).unwrap();
        for (g, r) in gs.iter().zip(&reference) {
            for (gv, rv) in g.data().iter().zip(r.data()) {
                // power-of-two scale factors keep this exact; == treats ±0 alike
                assert_eq!(*gv, a * rv, "a = {a}");
            }
        }
    }
}

#[test]
fn f32_runs_are_bit_identical() {
    let run = || {
        let mut rng = PrngState::new(99);
        let x: Vec<f64> = (0..2 * 3 * 6 * 6).map(|_| rng.next_uniform()).collect();
        let k: Vec<f64> = (0..4 * 3 * 9).map(|_| rng.next_uniform() - 0.5).collect();
        let x = Tensor::<f32>::from_f64s(&[2, 3, 6, 6], &x).unwrap();
        let k = Tensor::<f32>::from_f64s(&[4, 3, 3, 3], &k).unwrap().requires_grad();
        let y = avg_pool2d(&relu(&conv2d(&x, &k, None, 1, 1).unwrap()), 2, 2).unwrap();
        let loss = sum_all(&mul(&y, &y).unwrap());
        (y, grad(&loss, &[&k], false).unwrap().remove(0))
    };
    let (y1, g1) = run();
    let (y2, g2) = run();
    assert!(y1.bit_eq(&y2));
    assert!(g1.bit_eq(&g2));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_and_pool_output_shapes(
        h in 1usize..=16,
        w in 1usize..=16,
        k in 1usize..=5,
        stride in 1usize..=3,
        pad in 0usize..=2,
    ) {
        let input = Tensor::<f32>::ones(&[1, 2, h, w]);
        let kernel = Tensor::<f32>::ones(&[3, 2, k, k]);
        let expect = |n: usize| (n + 2 * pad).checked_sub(k).map(|d| d / stride + 1);
        match (expect(h), expect(w)) {
            (Some(oh), Some(ow)) => {
                prop_assert_eq!(conv_output_len(h, k, stride, pad), Some(oh));
                let y = conv2d(&input, &kernel, None, stride, pad).unwrap();
                prop_assert_eq!(y.shape(), &[1, 3, oh, ow]);
            }
            _ => {
                let is_nonpositive = matches!(
                    conv2d(&input, &kernel, None, stride, pad),
                    Err(TensorError::NonPositiveOutput { .. })
                );
                prop_assert!(is_nonpositive);
            }
        }
        if k <= h && k <= w {
            let (oh, ow) = ((h - k) / stride + 1, (w - k) / stride + 1);
            let avg = avg_pool2d(&input, k, stride).unwrap();
            let max = max_pool2d(&input, k, stride).unwrap();
            prop_assert_eq!(avg.shape(), &[1, 2, oh, ow]);
            prop_assert_eq!(max.shape(), &[1, 2, oh, ow]);
        } else {
            prop_assert!(avg_pool2d(&input, k, stride).is_err());
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        tensors in prop::collection::vec(
            (
                "[a-z_.0-9]{0,12}",
                prop::collection::vec(1usize..4, 0..4),
                any::<u64>(),
            ),
            0..5,
        ),
    ) {
        let named32: Vec<(String, Tensor<f32>)> = tensors
            .iter()
            .map(|(name, shape, seed)| {
                let mut rng = PrngState::new(*seed);
                let n: usize = shape.iter().product();
                // raw bit patterns, including NaNs and infinities
                let data = (0..n).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
                (name.clone(), Tensor::from_vec(shape, data).unwrap())
            })
            .collect();
        let back = decode::<f32>(&encode(&named32)).unwrap();
        prop_assert_eq!(back.len(), named32.len());
        for ((n1, t1), (n2, t2)) in named32.iter().zip(&back) {
            prop_assert_eq!(n1, n2);
            prop_assert!(t1.bit_eq(t2));
        }
        let named64: Vec<(String, Tensor<f64>)> =
            named32.iter().map(|(n, t)| (n.clone(), t.cast::<f64>())).collect();
        let back = decode::<f64>(&encode(&named64)).unwrap();
        for ((_, t1), (_, t2)) in named64.iter().zip(&back) {
            prop_assert!(t1.bit_eq(t2));
        }
    }
}
