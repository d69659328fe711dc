//! Finite-difference sweep over every differentiable tape op.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tcr_core::tensor::{grad_check, BatchNormState, Mode, Result, Tape, Tensor, Var, GRAD_CHECK_H};

type OpCase = (
    &'static str,
    Tensor,
    Box<dyn Fn(&mut Tape, Var) -> Result<Var>>,
);

fn scalarize(t: &mut Tape, v: Var) -> Result<Var> {
    // Weighted sum keeps the loss sensitive to every coordinate.
    let n = t.value(v).len();
    let flat = t.reshape(v, vec![n])?;
    let w = t.leaf(Tensor::vector(
        (0..n).map(|i| 0.3 + 0.1 * i as f64).collect(),
    ));
    let p = t.mul(flat, w)?;
    t.reduce_sum(p)
}

fn vec2(r: usize, c: usize, seed: u64) -> Tensor {
    let mut state = seed | 1;
    let data = (0..r * c)
        .map(|_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        })
        .collect();
    Tensor::matrix(r, c, data).unwrap()
}

#[test]
fn every_op_passes_grad_check() {
    let cases: Vec<OpCase> = vec![
        (
            "add",
            vec2(2, 3, 1),
            Box::new(|t, x| {
                let other = t.leaf(vec2(2, 3, 100));
                let y = t.add(x, other)?;
                scalarize(t, y)
            }),
        ),
        (
            "sub",
            vec2(2, 3, 2),
            Box::new(|t, x| {
                let other = t.leaf(vec2(2, 3, 101));
                let y = t.sub(other, x)?;
                scalarize(t, y)
            }),
        ),
        (
            "mul",
            vec2(2, 3, 3),
            Box::new(|t, x| {
                let other = t.leaf(vec2(2, 3, 102));
                let y = t.mul(x, other)?;
                scalarize(t, y)
            }),
        ),
        (
            "mul_self",
            vec2(2, 2, 4),
            Box::new(|t, x| {
                let y = t.mul(x, x)?;
                scalarize(t, y)
            }),
        ),
        (
            "add_scalar",
            vec2(1, 4, 5),
            Box::new(|t, x| {
                let y = t.add_scalar(x, 2.5)?;
                scalarize(t, y)
            }),
        ),
        (
            "mul_scalar",
            vec2(1, 4, 6),
            Box::new(|t, x| {
                let y = t.mul_scalar(x, -1.7)?;
                scalarize(t, y)
            }),
        ),
        (
            "relu",
            Tensor::vector(vec![-0.8, -0.2, 0.3, 1.4]),
            Box::new(|t, x| {
                let y = t.relu(x)?;
                scalarize(t, y)
            }),
        ),
        (
            "sigmoid",
            Tensor::vector(vec![-2.0, -0.3, 0.4, 3.0]),
            Box::new(|t, x| {
                let y = t.sigmoid(x)?;
                scalarize(t, y)
            }),
        ),
        (
            "concat_axis0",
            vec2(2, 3, 7),
            Box::new(|t, x| {
                let other = t.leaf(vec2(1, 3, 103));
                let y = t.concat(0, &[x, other, x])?;
                scalarize(t, y)
            }),
        ),
        (
            "concat_axis1",
            vec2(2, 2, 8),
            Box::new(|t, x| {
                let other = t.leaf(vec2(2, 3, 104));
                let y = t.concat(1, &[other, x])?;
                scalarize(t, y)
            }),
        ),
        (
            "reshape",
            vec2(2, 6, 9),
            Box::new(|t, x| {
                let y = t.reshape(x, vec![3, 4])?;
                scalarize(t, y)
            }),
        ),
        (
            "transpose",
            vec2(3, 2, 10),
            Box::new(|t, x| {
                let y = t.transpose(x)?;
                scalarize(t, y)
            }),
        ),
        (
            "reduce_sum",
            vec2(2, 3, 11),
            Box::new(|t, x| t.reduce_sum(x)),
        ),
        (
            "reduce_mean",
            vec2(2, 3, 12),
            Box::new(|t, x| t.reduce_mean(x)),
        ),
        (
            "matmul_lhs",
            vec2(3, 4, 13),
            Box::new(|t, x| {
                let rhs = t.leaf(vec2(4, 2, 105));
                let y = t.matmul(x, rhs)?;
                scalarize(t, y)
            }),
        ),
        (
            "matmul_rhs",
            vec2(4, 2, 14),
            Box::new(|t, x| {
                let lhs = t.leaf(vec2(3, 4, 106));
                let y = t.matmul(lhs, x)?;
                scalarize(t, y)
            }),
        ),
        (
            "softmax_masked",
            vec2(3, 4, 15),
            Box::new(|t, x| {
                let y = t.softmax_masked(x, Some(&[true, true, true, false]))?;
                scalarize(t, y)
            }),
        ),
        (
            "conv1d_input",
            vec2(3, 10, 16),
            Box::new(|t, x| {
                let w = t.leaf(Tensor::new(vec![2, 3, 3], vec2(6, 3, 107).data().to_vec()).unwrap());
                let y = t.conv1d(x, w, 2)?;
                scalarize(t, y)
            }),
        ),
        (
            "conv1d_kernels",
            Tensor::new(vec![2, 3, 3], vec2(6, 3, 17).data().to_vec()).unwrap(),
            Box::new(|t, w| {
                let x = t.leaf(Tensor::new(
                    vec![2, 3, 10],
                    vec2(6, 10, 108).data().to_vec(),
                )
                .unwrap());
                let y = t.conv1d(x, w, 2)?;
                scalarize(t, y)
            }),
        ),
        (
            "channel_bias",
            Tensor::vector(vec![0.3, -0.5]),
            Box::new(|t, b| {
                let x = t.leaf(Tensor::new(vec![2, 2, 4], vec2(4, 4, 109).data().to_vec()).unwrap());
                let y = t.channel_bias(x, b)?;
                scalarize(t, y)
            }),
        ),
        (
            "add_row",
            vec2(3, 4, 18),
            Box::new(|t, x| {
                let b = t.leaf(Tensor::vector(vec![0.1, -0.2, 0.3, 0.5]));
                let y = t.add_row(x, b)?;
                scalarize(t, y)
            }),
        ),
        (
            "batch_norm_train_x",
            vec2(4, 3, 19),
            Box::new(|t, x| {
                let gamma = t.leaf(Tensor::vector(vec![1.2, 0.8, -0.5]));
                let beta = t.leaf(Tensor::vector(vec![0.1, 0.0, -0.3]));
                let mut state = BatchNormState::new(3);
                let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Train)?;
                scalarize(t, y)
            }),
        ),
        (
            "batch_norm_train_gamma",
            Tensor::vector(vec![1.1, 0.9, 0.6]),
            Box::new(|t, gamma| {
                let x = t.leaf(vec2(4, 3, 110));
                let beta = t.leaf(Tensor::vector(vec![0.2, -0.1, 0.0]));
                let mut state = BatchNormState::new(3);
                let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Train)?;
                scalarize(t, y)
            }),
        ),
        (
            "batch_norm_3d",
            Tensor::new(vec![2, 3, 4], vec2(6, 4, 20).data().to_vec()).unwrap(),
            Box::new(|t, x| {
                let gamma = t.leaf(Tensor::vector(vec![0.9, 1.1, 0.7]));
                let beta = t.leaf(Tensor::vector(vec![0.0, 0.2, -0.2]));
                let mut state = BatchNormState::new(3);
                let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Train)?;
                scalarize(t, y)
            }),
        ),
        (
            "batch_norm_eval",
            vec2(2, 3, 21),
            Box::new(|t, x| {
                let gamma = t.leaf(Tensor::vector(vec![1.0, 1.3, 0.5]));
                let beta = t.leaf(Tensor::vector(vec![0.1, 0.0, 0.4]));
                let mut state = BatchNormState::new(3);
                state.running_mean = vec![0.2, -0.1, 0.05];
                state.running_var = vec![0.8, 1.5, 0.4];
                let y = t.batch_norm(x, gamma, beta, &mut state, Mode::Eval)?;
                scalarize(t, y)
            }),
        ),
        (
            "layer_norm_x",
            vec2(3, 5, 22),
            Box::new(|t, x| {
                let gamma = t.leaf(Tensor::vector(vec![1.0, 0.9, 1.2, 0.8, 1.1]));
                let beta = t.leaf(Tensor::vector(vec![0.0, 0.1, -0.1, 0.2, 0.0]));
                let y = t.layer_norm_rows(x, gamma, beta)?;
                scalarize(t, y)
            }),
        ),
        (
            "layer_norm_gamma",
            Tensor::vector(vec![1.0, 0.7, 1.4, 0.9]),
            Box::new(|t, gamma| {
                let x = t.leaf(vec2(3, 4, 111));
                let beta = t.leaf(Tensor::vector(vec![0.0; 4]));
                let y = t.layer_norm_rows(x, gamma, beta)?;
                scalarize(t, y)
            }),
        ),
        (
            "dropout",
            vec2(4, 4, 23),
            Box::new(|t, x| {
                // Reseeded per call so both finite-difference probes and the
                // tape pass see the same mask.
                let mut rng = ChaCha8Rng::seed_from_u64(42);
                let y = t.dropout(x, 0.4, &mut rng, Mode::Train)?;
                scalarize(t, y)
            }),
        ),
        (
            "gather_rows",
            vec2(4, 3, 24),
            Box::new(|t, x| {
                let y = t.gather_rows(x, &[3, 1, 1, 0])?;
                scalarize(t, y)
            }),
        ),
        (
            "max_pool_rows",
            Tensor::matrix(3, 2, vec![0.1, 0.9, 0.5, 0.2, -0.4, 0.3]).unwrap(),
            Box::new(|t, x| {
                let y = t.max_pool_rows(x)?;
                scalarize(t, y)
            }),
        ),
        (
            "mean_pool_rows",
            vec2(3, 4, 25),
            Box::new(|t, x| {
                let y = t.mean_pool_rows(x)?;
                scalarize(t, y)
            }),
        ),
    ];

    for (name, point, f) in cases {
        let err = grad_check(f.as_ref(), &point, GRAD_CHECK_H)
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(err <= 1e-6, "{name}: max rel err {err}");
    }
}
