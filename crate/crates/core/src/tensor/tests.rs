use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences for every input element.
fn check_gradients(shapes: &[&[usize]], f: impl Fn(&[Tensor]) -> Result<Tensor>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<Vec<f64>> = shapes.iter().map(|s| random(s, &mut rng)).collect();
    let vars: Vec<Tensor> = values
        .iter()
        .zip(shapes)
        .map(|(v, s)| Tensor::variable(v.clone(), s).unwrap())
        .collect();
    let out = f(&vars).unwrap();
    let grads = backward(&out).unwrap();
    let h = 1e-6;
    for (k, shape) in shapes.iter().enumerate() {
        let analytic = grads.get(&vars[k]).expect("gradient present").to_vec();
        for i in 0..values[k].len() {
            let eval = |delta: f64| {
                let inputs: Vec<Tensor> = values
                    .iter()
                    .zip(shapes)
                    .enumerate()
                    .map(|(j, (v, s))| {
                        let mut v = v.clone();
                        if j == k {
                            v[i] += delta;
                        }
                        Tensor::new(v, s).unwrap()
                    })
                    .collect();
                f(&inputs).unwrap().item().unwrap()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (numeric - analytic[i]).abs();
            assert!(
                err <= 1e-6 * (1.0 + numeric.abs()),
                "input {k} {shape:?} element {i}: numeric {numeric} vs analytic {}",
                analytic[i]
            );
        }
    }
}

/// Second-order check: the gradient of `||∇f||²` computed by double
/// backward must match central differences of the first-order gradient norm.
fn check_second_order(shape: &[usize], f: impl Fn(&Tensor) -> Result<Tensor>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = random(shape, &mut rng);
    let penalty = |x: &Tensor| -> Result<Tensor> {
        let y = f(x)?;
        let g = grad(&y, &[x], true)?.remove(0).expect("grad");
        g.square()?.sum()
    };
    let x = Tensor::variable(values.clone(), shape).unwrap();
    let p = penalty(&x).unwrap();
    let analytic = grad(&p, &[&x], false).unwrap().remove(0).unwrap().to_vec();
    let h = 1e-6;
    for i in 0..values.len() {
        let eval = |delta: f64| {
            let mut v = values.clone();
            v[i] += delta;
            let x = Tensor::variable(v, shape).unwrap();
            penalty(&x).unwrap().item().unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(
            (numeric - analytic[i]).abs() <= 1e-5 * (1.0 + numeric.abs()),
            "element {i}: numeric {numeric} vs analytic {}",
            analytic[i]
        );
    }
}

#[test]
fn elementwise_and_broadcast_gradients() {
    check_gradients(
        &[&[2, 3, 4], &[3, 1]],
        |t| t[0].mul(&t[1])?.add(&t[0])?.sub(&t[1])?.sum(),
        1,
    );
    check_gradients(
        &[&[2, 3], &[3]],
        |t| t[0].div(&t[1].square()?.add_scalar(1.0)?)?.tanh()?.sum(),
        2,
    );
    check_gradients(&[&[4, 5]], |t| t[0].sigmoid()?.scale(3.0)?.mean(), 3);
    check_gradients(
        &[&[4, 5]],
        |t| t[0].square()?.add_scalar(0.5)?.sqrt()?.abs()?.sum(),
        4,
    );
    check_gradients(
        &[&[2, 2, 3, 3]],
        |t| t[0].leaky_relu(0.2)?.relu()?.mean_keepdim(&[0, 2, 3])?.square()?.sum(),
        5,
    );
}

#[test]
fn shape_op_gradients() {
    check_gradients(
        &[&[2, 3, 2, 2], &[2, 1, 2, 2]],
        |t| {
            let c = Tensor::concat(&[t[0].clone(), t[1].clone()], 1)?;
            c.narrow(1, 1, 2)?.square()?.sum()?.add(&c.reshape(&[32])?.tanh()?.sum()?)
        },
        6,
    );
    check_gradients(
        &[&[1, 3, 1, 1]],
        |t| t[0].broadcast_to(&[2, 3, 4, 4])?.tanh()?.sum(),
        7,
    );
}

#[test]
fn convolution_gradients() {
    check_gradients(
        &[&[2, 3, 7, 6], &[4, 3, 4, 4]],
        |t| t[0].conv2d(&t[1], 2, 1)?.tanh()?.sum(),
        8,
    );
    check_gradients(
        &[&[2, 3, 4, 3], &[3, 2, 4, 4]],
        |t| t[0].conv_transpose2d(&t[1], 2, 1)?.square()?.sum(),
        9,
    );
    check_gradients(
        &[&[1, 2, 5, 5], &[3, 2, 3, 3]],
        |t| t[0].reflect_pad(1)?.conv2d(&t[1], 1, 0)?.sigmoid()?.sum(),
        10,
    );
}

#[test]
fn spatial_gradients() {
    check_gradients(
        &[&[1, 2, 3, 4]],
        |t| t[0].upsample_bilinear(4)?.tanh()?.sum(),
        11,
    );
    check_gradients(
        &[&[2, 1, 4, 6]],
        |t| t[0].max_pool2d(2, 2)?.square()?.sum(),
        12,
    );
    check_gradients(&[&[1, 1, 4, 4]], |t| t[0].reflect_pad(2)?.square()?.sum(), 13);
}

#[test]
fn second_order_through_convolutions() {
    let w1 = Tensor::new(
        random(&[3, 2, 4, 4], &mut ChaCha8Rng::seed_from_u64(20)),
        &[3, 2, 4, 4],
    )
    .unwrap();
    let w2 = Tensor::new(
        random(&[1, 3, 3, 3], &mut ChaCha8Rng::seed_from_u64(21)),
        &[1, 3, 3, 3],
    )
    .unwrap();
    check_second_order(
        &[2, 2, 8, 8],
        |x| x.conv2d(&w1, 2, 1)?.tanh()?.conv2d(&w2, 1, 1)?.square()?.mean(),
        22,
    );
}

#[test]
fn second_order_with_respect_to_weights() {
    // d/dw of ||d f / d x||² where f is a two-layer convolutional critic.
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let x_data = random(&[2, 2, 6, 6], &mut rng);
    let w_data = random(&[3, 2, 4, 4], &mut rng);
    let w2 = Tensor::new(random(&[1, 3, 3, 3], &mut rng), &[1, 3, 3, 3]).unwrap();
    let penalty = |w: &Tensor| -> Tensor {
        let x = Tensor::variable(x_data.clone(), &[2, 2, 6, 6]).unwrap();
        let norm = w.square().unwrap().sum().unwrap().sqrt().unwrap();
        let ws = w.div(&norm).unwrap();
        let y = x
            .conv2d(&ws, 2, 1)
            .unwrap()
            .leaky_relu(0.2)
            .unwrap()
            .conv2d(&w2, 1, 1)
            .unwrap()
            .mean()
            .unwrap();
        let g = grad(&y, &[&x], true).unwrap().remove(0).unwrap();
        g.square().unwrap().sum().unwrap().add_scalar(1e-12).unwrap().sqrt().unwrap().add_scalar(-1.0).unwrap().square().unwrap()
    };
    let w = Tensor::variable(w_data.clone(), &[3, 2, 4, 4]).unwrap();
    let analytic = grad(&penalty(&w), &[&w], false).unwrap().remove(0).unwrap().to_vec();
    let h = 1e-6;
    for i in 0..w_data.len() {
        let eval = |d: f64| {
            let mut v = w_data.clone();
            v[i] += d;
            penalty(&Tensor::variable(v, &[3, 2, 4, 4]).unwrap()).item().unwrap()
        };
        let numeric = (eval(h) - eval(-h)) / (2.0 * h);
        assert!(
            (numeric - analytic[i]).abs() <= 1e-5 * (1.0 + numeric.abs()),
            "w[{i}]: numeric {numeric} vs analytic {}",
            analytic[i]
        );
    }
}

#[test]
fn conv_transpose_is_adjoint_of_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let x = Tensor::new(random(&[2, 3, 8, 8], &mut rng), &[2, 3, 8, 8]).unwrap();
    let w = Tensor::new(random(&[4, 3, 4, 4], &mut rng), &[4, 3, 4, 4]).unwrap();
    let y = x.conv2d(&w, 2, 1).unwrap();
    let g = Tensor::new(random(y.shape(), &mut rng), y.shape()).unwrap();
    let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
    let xt = g.conv_transpose2d(&w, 2, 1).unwrap();
    assert_eq!(xt.shape(), x.shape());
    let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
    assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
}

#[test]
fn conv_matches_direct_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, ci, h, w, co, k, s, p) = (2, 2, 5, 6, 3, 3, 2, 1);
    let xd = random(&[n, ci, h, w], &mut rng);
    let wd = random(&[co, ci, k, k], &mut rng);
    let y = Tensor::new(xd.clone(), &[n, ci, h, w])
        .unwrap()
        .conv2d(&Tensor::new(wd.clone(), &[co, ci, k, k]).unwrap(), s, p)
        .unwrap();
    let (oh, ow) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    assert_eq!(y.shape(), &[n, co, oh, ow]);
    for b in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * s + ky) as isize - p as isize;
                                let ix = (ox * s + kx) as isize - p as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += xd[((b * ci + c) * h + iy as usize) * w + ix as usize]
                                        * wd[((o * ci + c) * k + ky) * k + kx];
                                }
                            }
                        }
                    }
                    let got = y.data()[((b * co + o) * oh + oy) * ow + ox];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn upsample_matches_half_pixel_bilinear() {
    let x = Tensor::new(vec![0.0, 1.0], &[1, 1, 1, 2]).unwrap();
    let y = x.upsample_bilinear(2).unwrap();
    assert_eq!(y.data(), &[0.0, 0.25, 0.75, 1.0, 0.0, 0.25, 0.75, 1.0]);
}

#[test]
fn no_grad_suppresses_recording() {
    let x = Tensor::variable(vec![1.0, 2.0], &[2]).unwrap();
    {
        let _guard = no_grad();
        assert!(!x.square().unwrap().requires_grad());
    }
    assert!(x.square().unwrap().requires_grad());
    assert!(backward(&Tensor::scalar(1.0)).is_err());
}

#[test]
fn gradients_accumulate_over_shared_inputs() {
    let x = Tensor::variable(vec![3.0], &[]).unwrap();
    let y = x.mul(&x).unwrap().add(&x).unwrap();
    let g = backward(&y).unwrap();
    assert_eq!(g.get(&x).unwrap().item().unwrap(), 7.0);
}
