//! Every op's backward is checked against central finite differences.

use ndarray::{ArrayD, IxDyn};
use sfd_autograd::check::{central_difference, rel_error};
use sfd_autograd::{
    concat_channels, conv2d, cosine_rows, global_avg_pool, linear, mean_rows, resize_nearest,
    spectral_normalize, Tape, Tensor, Var,
};

/// Deterministic pseudo-random tensor without pulling an RNG crate in.
fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let n: usize = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    ArrayD::from_shape_vec(IxDyn(shape), v).unwrap()
}

/// Checks d f / d inputs[k] for every element of every input.
fn check(inputs: Vec<Tensor>, f: impl for<'t> Fn(&[Var<'t>]) -> Var<'t>) {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&vars);
    let grads = tape.backward(out);
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k]);
        let analytic = analytic.as_standard_layout();
        for idx in 0..input.len() {
            let mut eval = |x: &Tensor| {
                let tape = Tape::new();
                let vars: Vec<Var> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| tape.constant(if j == k { x.clone() } else { t.clone() }))
                    .collect();
                f(&vars).item()
            };
            let numeric = central_difference(&mut eval, input, idx, 1e-6);
            let a = analytic.as_slice().unwrap()[idx];
            assert!(
                rel_error(a, numeric, 1e-6) < 1e-5,
                "input {k} elem {idx}: analytic {a} numeric {numeric}"
            );
        }
    }
}

/// Weighted sum so that every output element gets a distinct upstream grad.
fn weighted<'t>(v: Var<'t>, seed: u64) -> Var<'t> {
    let w = v.tape().constant(tensor(&v.shape(), seed));
    v.mul(w).sum_all()
}

#[test]
fn conv2d_stride1_pad1() {
    check(
        vec![tensor(&[2, 3, 5, 4], 1), tensor(&[4, 3, 3, 3], 2), tensor(&[4], 3)],
        |v| weighted(conv2d(v[0], v[1], Some(v[2]), 1, 1), 9),
    );
}

#[test]
fn conv2d_stride2() {
    check(
        vec![tensor(&[1, 2, 7, 6], 4), tensor(&[3, 2, 3, 3], 5), tensor(&[3], 6)],
        |v| weighted(conv2d(v[0], v[1], Some(v[2]), 2, 1), 10),
    );
}

#[test]
fn conv2d_1x1_without_bias() {
    check(vec![tensor(&[2, 3, 3, 3], 7), tensor(&[2, 3, 1, 1], 8)], |v| {
        weighted(conv2d(v[0], v[1], None, 1, 0), 11)
    });
}

#[test]
fn elementwise_chain() {
    check(vec![tensor(&[3, 4], 12), tensor(&[3, 4], 13)], |v| {
        let a = v[0].leaky_relu(0.2).mul(v[1]).add(v[0].scale(0.3));
        let b = a.sigmoid().add(v[1].log_sigmoid()).sub(v[0].add_scalar(0.1).one_minus());
        weighted(b.neg(), 14)
    });
}

#[test]
fn abs_ln_clamp() {
    // keep away from the kinks so finite differences are meaningful
    let x = tensor(&[6], 15).mapv(|v| if v.abs() < 0.05 { 0.3 } else { v });
    check(vec![x], |v| {
        let a = v[0].abs().add_scalar(0.5).ln();
        let c = v[0].clamp(-0.5, 0.5);
        weighted(a.add(c), 16)
    });
}

#[test]
fn resize_concat_pool() {
    check(vec![tensor(&[2, 2, 3, 3], 17), tensor(&[2, 1, 6, 6], 18)], |v| {
        let up = resize_nearest(v[0], 6, 6);
        let cat = concat_channels(&[up, v[1]]);
        weighted(global_avg_pool(cat), 19)
    });
}

#[test]
fn resize_to_non_multiple() {
    check(vec![tensor(&[1, 1, 3, 5], 20)], |v| {
        weighted(resize_nearest(v[0], 4, 7), 21)
    });
}

#[test]
fn linear_and_reshape() {
    check(
        vec![tensor(&[3, 5], 22), tensor(&[4, 5], 23), tensor(&[4], 24)],
        |v| weighted(linear(v[0], v[1], Some(v[2])).reshape(&[12]), 25),
    );
}

#[test]
fn cosine_rows_both_sides() {
    check(vec![tensor(&[3, 6], 26), tensor(&[6], 27)], |v| {
        weighted(cosine_rows(v[0], v[1]), 28)
    });
}

#[test]
fn mean_rows_grad() {
    check(vec![tensor(&[4, 3], 29)], |v| weighted(mean_rows(v[0]), 30));
}

#[test]
fn spectral_normalize_with_fixed_vectors() {
    let u = [0.6, -0.8];
    let v = [0.5, 0.5, 0.5, -0.5];
    let w = tensor(&[2, 1, 2, 2], 31).mapv(|x| x + 0.7);
    check(vec![w], move |vars| weighted(spectral_normalize(vars[0], &u, &v), 32));
}

#[test]
fn backward_skips_constants_and_accumulates_reuse() {
    let tape = Tape::new();
    let x = tape.param(tensor(&[3], 33));
    let c = tape.constant(tensor(&[3], 34));
    // x used twice: d/dx sum(x*x + c*x) = 2x + c
    let y = x.mul(x).add(c.mul(x)).sum_all();
    let g = tape.backward(y);
    let expect = &*x.value() * 2.0 + &*c.value();
    assert_eq!(g.get(x).unwrap(), &expect);
    assert!(g.get(c).is_none());
    assert!(!c.detach().requires_grad());
}

#[test]
fn two_backward_passes_share_one_recording() {
    let tape = Tape::new();
    let x = tape.param(tensor(&[2], 35));
    let h = x.scale(3.0);
    let a = h.sum_all();
    let b = h.mul(h).sum_all();
    let ga = tape.backward(a);
    let gb = tape.backward(b);
    assert_eq!(ga.get(x).unwrap(), &ArrayD::from_elem(IxDyn(&[2]), 3.0));
    let expect = x.value().mapv(|v| 18.0 * v);
    let got = gb.get(x).unwrap();
    for (g, e) in got.iter().zip(expect.iter()) {
        assert!((g - e).abs() < 1e-12);
    }
}
