//! Finite-difference checks for every differentiable primitive.

use super::check::{finite_diff_grad, max_rel_err};
use super::{gelu, kl_standard_normal, l1, mse, Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

fn rand_mat(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen::<f64>() * 2.0 - 1.0)
}

/// Checks analytic gradients of `build` (a scalar-valued graph over the
/// given leaves) against central finite differences on every leaf.
fn check_grads(leaves: &mut [Array2<f64>], build: impl Fn(&Tape<f64>, &[Var<f64>]) -> Var<f64>) {
    let tape = Tape::new();
    let vars: Vec<Var<f64>> = leaves.iter().map(|l| tape.param(l)).collect();
    let loss = build(&tape, &vars);
    let grads = tape.backward(&loss);

    for idx in 0..leaves.len() {
        let analytic = grads
            .wrt(&leaves[idx])
            .expect("leaf should receive a gradient")
            .clone();
        let others: Vec<Array2<f64>> = leaves.to_vec();
        let numeric = finite_diff_grad(&mut leaves[idx], STEP, |perturbed| {
            let t = Tape::new();
            let vs: Vec<Var<f64>> = others
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    if i == idx {
                        t.constant(perturbed.clone())
                    } else {
                        t.constant(l.clone())
                    }
                })
                .collect();
            build(&t, &vs).item()
        });
        let err = max_rel_err(&analytic, &numeric, 1e-4);
        assert!(err <= TOL, "leaf {idx}: rel err {err}");
    }
}

#[test]
fn matmul_and_transpose() {
    let mut r = rng(1);
    let mut leaves = vec![rand_mat(&mut r, 3, 4), rand_mat(&mut r, 4, 2)];
    check_grads(&mut leaves, |_, v| v[0].matmul(&v[1]).sum_all());
    let mut leaves = vec![rand_mat(&mut r, 3, 4)];
    check_grads(&mut leaves, |_, v| v[0].t().matmul(&v[0]).sum_all());
}

#[test]
fn elementwise_binary() {
    let mut r = rng(2);
    for op in 0..3 {
        let mut leaves = vec![rand_mat(&mut r, 3, 3), rand_mat(&mut r, 3, 3)];
        check_grads(&mut leaves, move |_, v| {
            let y = match op {
                0 => v[0].add(&v[1]),
                1 => v[0].sub(&v[1]),
                _ => v[0].mul(&v[1]),
            };
            y.mul(&y).sum_all()
        });
    }
}

#[test]
fn broadcasts() {
    let mut r = rng(3);
    let mut leaves = vec![rand_mat(&mut r, 4, 3), rand_mat(&mut r, 1, 3)];
    check_grads(&mut leaves, |_, v| v[0].add_row(&v[1]).mul(&v[0]).sum_all());
    let mut leaves = vec![rand_mat(&mut r, 4, 3), rand_mat(&mut r, 4, 1)];
    check_grads(&mut leaves, |_, v| v[0].add_col(&v[1]).mul(&v[0]).sum_all());
    let mut leaves = vec![rand_mat(&mut r, 4, 3), rand_mat(&mut r, 4, 1)];
    check_grads(&mut leaves, |_, v| v[0].mul_col(&v[1]).sum_all());
}

#[test]
fn scalar_ops() {
    let mut r = rng(4);
    let mut leaves = vec![rand_mat(&mut r, 3, 3)];
    check_grads(&mut leaves, |_, v| {
        v[0].scale(1.7).add_scalar(0.3).neg().mul(&v[0]).sum_all()
    });
}

#[test]
fn activations() {
    let mut r = rng(5);
    // keep entries away from relu/abs kinks
    let base: Array2<f64> =
        rand_mat(&mut r, 4, 4).mapv(|v| if v.abs() < 0.1 { v + 0.2 } else { v });
    for op in 0..6 {
        let mut leaves = vec![base.clone()];
        check_grads(&mut leaves, move |_, v| {
            let y = match op {
                0 => v[0].relu(),
                1 => v[0].sigmoid(),
                2 => v[0].tanh(),
                3 => v[0].exp(),
                4 => v[0].abs(),
                _ => gelu(&v[0]),
            };
            y.sum_all()
        });
    }
}

#[test]
fn positive_domain_ops() {
    let mut r = rng(6);
    let base = rand_mat(&mut r, 3, 3).mapv(|v| v.abs() + 0.5);
    for op in 0..3 {
        let mut leaves = vec![base.clone()];
        check_grads(&mut leaves, move |_, v| {
            let y = match op {
                0 => v[0].ln(),
                1 => v[0].sqrt(),
                _ => v[0].recip(),
            };
            y.sum_all()
        });
    }
}

#[test]
fn clamp_min_gradient() {
    let mut leaves = vec![Array2::from_shape_vec((1, 4), vec![-1.0, -0.2, 0.5, 2.0]).unwrap()];
    check_grads(&mut leaves, |_, v| {
        v[0].clamp_min(0.1).mul(&v[0]).sum_all()
    });
    // clamped region really blocks the gradient
    let tape = Tape::new();
    let x = Array2::from_shape_vec((1, 2), vec![-1.0, 1.0]).unwrap();
    let xv = tape.param(&x);
    let loss = xv.clamp_min(0.0).sum_all();
    let g = tape.backward(&loss);
    let gx = g.wrt(&x).unwrap();
    assert_eq!(gx[(0, 0)], 0.0);
    assert_eq!(gx[(0, 1)], 1.0);
}

#[test]
fn softmaxes() {
    let mut r = rng(7);
    for op in 0..3 {
        let mut leaves = vec![rand_mat(&mut r, 3, 5), rand_mat(&mut r, 3, 5)];
        check_grads(&mut leaves, move |_, v| {
            let y = match op {
                0 => v[0].softmax_rows(),
                1 => v[0].softmax_cols(),
                _ => v[0].log_softmax_rows(),
            };
            y.mul(&v[1]).sum_all()
        });
    }
}

#[test]
fn softmax_rows_normalizes() {
    let mut r = rng(8);
    let tape = Tape::new();
    let x = tape.constant(rand_mat(&mut r, 6, 9).mapv(|v| v * 30.0));
    let s = x.softmax_rows().value();
    for row in s.rows() {
        let total: f64 = row.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn layer_norm_gradients() {
    let mut r = rng(9);
    let mut leaves = vec![
        rand_mat(&mut r, 4, 6),
        rand_mat(&mut r, 1, 6).mapv(|v| v + 1.5),
        rand_mat(&mut r, 1, 6),
        rand_mat(&mut r, 4, 6),
    ];
    check_grads(&mut leaves, |_, v| {
        v[0].layer_norm(&v[1], &v[2], 1e-5).mul(&v[3]).sum_all()
    });
}

#[test]
fn reductions() {
    let mut r = rng(10);
    for op in 0..5 {
        let mut leaves = vec![rand_mat(&mut r, 3, 4)];
        check_grads(&mut leaves, move |_, v| {
            let sq = v[0].mul(&v[0]);
            match op {
                0 => sq.sum_all(),
                1 => sq.mean_all(),
                2 => sq.sum_rows().sum_all(),
                3 => sq.sum_cols().sum_all(),
                _ => sq.mean_rows().sum_all(),
            }
        });
    }
}

#[test]
fn slicing_and_concat() {
    let mut r = rng(11);
    let mut leaves = vec![rand_mat(&mut r, 5, 4)];
    check_grads(&mut leaves, |_, v| {
        v[0].slice_rows(1, 4).slice_cols(0, 2).mul(&v[0].slice_rows(0, 3).slice_cols(2, 4)).sum_all()
    });
    let mut leaves = vec![rand_mat(&mut r, 2, 3), rand_mat(&mut r, 3, 3)];
    check_grads(&mut leaves, |_, v| {
        let cat = Var::vcat(&[&v[0], &v[1]]);
        cat.mul(&cat).sum_all()
    });
    let mut leaves = vec![rand_mat(&mut r, 3, 2), rand_mat(&mut r, 3, 4)];
    check_grads(&mut leaves, |_, v| {
        let cat = Var::hcat(&[&v[0], &v[1]]);
        cat.mul(&cat).sum_all()
    });
}

#[test]
fn tiling_and_reshape() {
    let mut r = rng(12);
    let mut leaves = vec![rand_mat(&mut r, 2, 3), rand_mat(&mut r, 6, 3)];
    check_grads(&mut leaves, |_, v| v[0].tile_rows(3).mul(&v[1]).sum_all());
    let mut leaves = vec![rand_mat(&mut r, 2, 3), rand_mat(&mut r, 8, 3)];
    check_grads(&mut leaves, |_, v| {
        v[0].repeat_rows_each(4).mul(&v[1]).sum_all()
    });
    let mut leaves = vec![rand_mat(&mut r, 4, 6)];
    check_grads(&mut leaves, |_, v| {
        let y = v[0].reshape(8, 3);
        y.mul(&y).sum_all()
    });
}

#[test]
fn loss_helpers() {
    let mut r = rng(13);
    let mut leaves = vec![rand_mat(&mut r, 3, 4), rand_mat(&mut r, 3, 4)];
    check_grads(&mut leaves, |_, v| mse(&v[0], &v[1]));
    let a = rand_mat(&mut r, 3, 4);
    let b = a.mapv(|v| v + 0.7);
    let mut leaves = vec![a, b];
    check_grads(&mut leaves, |_, v| l1(&v[0], &v[1]));
    let mut leaves = vec![rand_mat(&mut r, 2, 5), rand_mat(&mut r, 2, 5)];
    check_grads(&mut leaves, |_, v| kl_standard_normal(&v[0], &v[1]));
}

#[test]
fn kl_is_zero_at_standard_normal() {
    let tape: Tape<f64> = Tape::new();
    let mean = tape.constant(Array2::zeros((1, 8)));
    let logvar = tape.constant(Array2::zeros((1, 8)));
    assert_eq!(kl_standard_normal(&mean, &logvar).item(), 0.0);
}

#[test]
fn param_dedup_accumulates() {
    // w used twice: loss = sum(w*a) + sum(w*b) → dw = a + b
    let w = Array2::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
    let a = Array2::from_shape_vec((1, 2), vec![3.0, 5.0]).unwrap();
    let b = Array2::from_shape_vec((1, 2), vec![7.0, 11.0]).unwrap();
    let tape = Tape::new();
    let w1 = tape.param(&w);
    let w2 = tape.param(&w);
    let loss = w1
        .mul(&tape.constant(a.clone()))
        .sum_all()
        .add(&w2.mul(&tape.constant(b.clone())).sum_all());
    let grads = tape.backward(&loss);
    assert_eq!(*grads.wrt(&w).unwrap(), &a + &b);
}

#[test]
fn unused_param_has_no_gradient() {
    let w = Array2::<f64>::ones((2, 2));
    let x = Array2::<f64>::ones((2, 2));
    let tape = Tape::new();
    let _ = tape.param(&w);
    let xv = tape.param(&x);
    let loss = xv.sum_all();
    let grads = tape.backward(&loss);
    assert!(grads.wrt(&w).is_none());
    assert!(grads.wrt(&x).is_some());
}
