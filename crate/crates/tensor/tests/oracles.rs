//! Forward ops against naive loop implementations.

use elf_tensor::ops::{avg_pool2d, conv2d, linear, softmax_cross_entropy};
use elf_tensor::{PrngState, Tensor};

fn random(shape: &[usize], rng: &mut PrngState) -> Vec<f64> {
    let n: usize = shape.iter().product();
    (0..n).map(|_| rng.next_uniform() * 2.0 - 1.0).collect()
}

fn conv_oracle(
    x: &[f64],
    [n, c, h, w]: [usize; 4],
    k: &[f64],
    [o, _, kh, kw]: [usize; 4],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c + ic) * h + iy as usize) * w + ix as usize];
                                let kv = k[((oc * c + ic) * kh + i) * kw + j];
                                acc += xv * kv;
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    out
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = PrngState::new(11);
    let xs = [2, 3, 8, 8];
    let ks = [4, 3, 3, 3];
    let x = random(&xs, &mut rng);
    let k = random(&ks, &mut rng);
    let y = conv2d(
        &Tensor::<f64>::from_vec(&xs, x.clone()).unwrap(),
        &Tensor::<f64>::from_vec(&ks, k.clone()).unwrap(),
        None,
        2,
        1,
    )
    .unwrap();
    assert_eq!(y.shape(), &[2, 4, 4, 4]);
    let expected = conv_oracle(&x, xs, &k, ks, 2, 1);
    for (a, b) in y.data().iter().zip(&expected) {
        assert!((a - b).abs() < 1e-6);
    }

    // same check in f32 against the f64 oracle
    let y32 = conv2d(
        &Tensor::<f32>::from_f64s(&xs, &x).unwrap(),
        &Tensor::<f32>::from_f64s(&ks, &k).unwrap(),
        None,
        2,
        1,
    )
    .unwrap();
    for (a, b) in y32.data().iter().zip(&expected) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}

#[test]
fn avg_pool_matches_loop_oracle() {
    let mut rng = PrngState::new(12);
    let shape = [1, 2, 6, 6];
    let x = random(&shape, &mut rng);
    let y = avg_pool2d(&Tensor::<f64>::from_vec(&shape, x.clone()).unwrap(), 2, 2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 3, 3]);
    for c in 0..2 {
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for di in 0..2 {
                    for dj in 0..2 {
                        acc += x[(c * 6 + 2 * i + di) * 6 + 2 * j + dj];
                    }
                }
                let got = y.data()[(c * 3 + i) * 3 + j];
                assert!((got - acc / 4.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn linear_matches_loop_oracle() {
    let mut rng = PrngState::new(13);
    let x = random(&[4, 8], &mut rng);
    let w = random(&[8, 5], &mut rng);
    let b = random(&[5], &mut rng);
    let y = linear(
        &Tensor::<f64>::from_vec(&[4, 8], x.clone()).unwrap(),
        &Tensor::<f64>::from_vec(&[8, 5], w.clone()).unwrap(),
        &Tensor::<f64>::from_vec(&[5], b.clone()).unwrap(),
    )
    .unwrap();
    for i in 0..4 {
        for j in 0..5 {
            let expected: f64 = b[j] + (0..8).map(|d| x[i * 8 + d] * w[d * 5 + j]).sum::<f64>();
            assert!((y.data()[i * 5 + j] - expected).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_cross_entropy_matches_direct_formula() {
    let mut rng = PrngState::new(14);
    let logits: Vec<f64> = random(&[3, 5], &mut rng).iter().map(|v| v * 4.0).collect();
    let labels = [4usize, 0, 2];
    let expected: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let row = &logits[i * 5..(i + 1) * 5];
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            -(row[l].exp() / z).ln()
        })
        .sum::<f64>()
        / 3.0;
    let t = Tensor::<f32>::from_f64s(&[3, 5], &logits).unwrap();
    let got = softmax_cross_entropy(&t, &labels).unwrap().item() as f64;
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}
