//! Every tape op against central differences, over 20 seeds with random
//! shapes up to 8x8, plus algebraic properties of the forward kernels.

use eegtext_core::diffcore::{finite_difference_check, GradCheckOptions, ParameterStore, Tape, Tensor, Var};
use eegtext_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;

struct Case {
    store: ParameterStore,
    rows: usize,
    cols: usize,
    readout: Tensor,
}

fn case(seed: u64, min_cols: usize, positive: bool) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = rng.random_range(1..=8);
    let cols = rng.random_range(min_cols..=8);
    let mut store = ParameterStore::new();
    let mut a = Tensor::randn(rows, cols, 1.0, &mut rng);
    if positive {
        a = a.map(|v| v.abs() + 0.5);
    }
    store.insert("a", a, false);
    store.insert("b", Tensor::randn(rows, cols, 1.0, &mut rng), false);
    store.insert("row", Tensor::randn(1, cols, 1.0, &mut rng), false);
    store.insert("w", Tensor::randn(cols, 5, 1.0, &mut rng), false);
    store.insert("s", Tensor::scalar(rng.random_range(0.5..1.5)), false);
    store.insert("frozen", Tensor::randn(rows, cols, 1.0, &mut rng), true);
    let readout = Tensor::randn(16, 3, 1.0, &mut rng);
    Case {
        store,
        rows,
        cols,
        readout,
    }
}

/// Nonlinear scalar readout so that no op output is reduced symmetrically.
fn readout(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let (_, c) = tape.shape(out);
    let rows: Vec<f64> = (0..c).flat_map(|i| r.row(i).iter().copied()).collect();
    let w = tape.constant(Tensor::from_rows(c, 3, rows)?);
    let m = tape.matmul(out, w)?;
    let t = tape.tanh(m)?;
    tape.sum_all(t)
}

fn check<F>(name: &str, min_cols: usize, positive: bool, op: F)
where
    F: Fn(&mut Tape, &ParameterStore, &Case) -> Result<Var>,
{
    let opts = GradCheckOptions::default();
    for seed in 0..SEEDS {
        let c = case(seed, min_cols, positive);
        let report = finite_difference_check(
            name,
            &c.store,
            |tape, store| {
                let out = op(tape, store, &c)?;
                readout(tape, out, &c.readout)
            },
            &opts,
        )
        .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
        assert!(report.pass, "{name} seed {seed} ({}x{}): {report:?}", c.rows, c.cols);
    }
}

fn p(tape: &mut Tape, store: &ParameterStore, name: &str) -> Var {
    tape.param(store, name).unwrap()
}

#[test]
fn elementwise_ops() {
    check("add", 1, false, |t, s, _| {
        let (a, b) = (p(t, s, "a"), p(t, s, "b"));
        let f = p(t, s, "frozen");
        let x = t.add(a, b)?;
        t.add(x, f)
    });
    check("add_row", 1, false, |t, s, _| {
        let (a, r) = (p(t, s, "a"), p(t, s, "row"));
        t.add_row(a, r)
    });
    check("scale", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.scale(a, -1.7)
    });
    check("mul_scalar", 1, false, |t, s, _| {
        let (a, k) = (p(t, s, "a"), p(t, s, "s"));
        t.mul_scalar(a, k)
    });
    check("exp", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.exp(a)
    });
    check("log", 1, true, |t, s, _| {
        let a = p(t, s, "a");
        t.log(a)
    });
    check("tanh", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.tanh(a)
    });
    check("relu", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.relu(a)
    });
}

#[test]
fn row_wise_ops() {
    check("softmax_rows", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.softmax_rows(a)
    });
    check("log_softmax_rows", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.log_softmax_rows(a)
    });
    check("l2_normalize_rows", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.l2_normalize_rows(a)
    });
    check("layer_norm_rows", 2, false, |t, s, _| {
        let a = p(t, s, "a");
        t.layer_norm_rows(a, 1e-5)
    });
}

#[test]
fn reductions_and_shape_ops() {
    check("mean_rows", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.mean_rows(a)
    });
    check("mean_row_groups", 1, false, |t, s, c| {
        let a = p(t, s, "a");
        let b = p(t, s, "b");
        let ab = t.concat_rows(&[a, b])?;
        t.mean_row_groups(ab, c.rows)
    });
    check("sum_all", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        let x = t.sum_all(a)?;
        let y = t.mean_all(a)?;
        let b = p(t, s, "b");
        let xy = t.add(x, y)?;
        t.mul_scalar(b, xy)
    });
    check("concat_cols", 1, false, |t, s, _| {
        let (a, b) = (p(t, s, "a"), p(t, s, "b"));
        t.concat_cols(&[a, b])
    });
    check("transpose", 1, false, |t, s, _| {
        let a = p(t, s, "a");
        t.transpose(a)
    });
    check("slice", 1, false, |t, s, c| {
        let a = p(t, s, "a");
        t.slice(a, c.rows / 2, c.rows - c.rows / 2, c.cols / 3, c.cols - c.cols / 3)
    });
    check("gather_rows", 1, false, |t, s, c| {
        let a = p(t, s, "a");
        let idx: Vec<usize> = (0..2 * c.rows).map(|i| (i * 7 + 3) % c.rows).collect();
        t.gather_rows(a, &idx)
    });
    check("diag", 1, false, |t, s, _| {
        let (a, b) = (p(t, s, "a"), p(t, s, "b"));
        let bt = t.transpose(b)?;
        let sq = t.matmul(a, bt)?;
        t.diag(sq)
    });
}

#[test]
fn matrix_ops() {
    check("matmul", 1, false, |t, s, _| {
        let (a, w) = (p(t, s, "a"), p(t, s, "w"));
        t.matmul(a, w)
    });
    check("linear", 1, false, |t, s, _| {
        let (a, w) = (p(t, s, "a"), p(t, s, "w"));
        let b = p(t, s, "b");
        let bt = t.transpose(b)?;
        let wb = t.matmul(bt, a)?;
        let x = t.linear(a, wb, None)?;
        let y = t.linear(x, w, None)?;
        let r = t.constant(Tensor::filled(1, 5, 0.1));
        t.add_row(y, r)
    });
}

fn tensor(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-5.0f64..5.0, rows * cols).prop_map(move |d| Tensor::from_rows(rows, cols, d).unwrap())
}

fn shaped() -> impl Strategy<Value = Tensor> {
    (1usize..=8, 1usize..=8).prop_flat_map(|(r, c)| tensor(r, c))
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(t in shaped()) {
        let s = t.softmax_rows();
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn normalized_rows_have_unit_norm(t in shaped()) {
        let n = t.l2_normalize_rows();
        for r in 0..n.rows() {
            let norm: f64 = n.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if t.row(r).iter().any(|&v| v != 0.0) {
                prop_assert!((norm - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transpose_is_an_involution(t in shaped()) {
        prop_assert_eq!(t.transpose().transpose(), t);
    }

    #[test]
    fn matmul_transpose_identity((a, b) in (1usize..=6, 1usize..=6, 1usize..=6)
        .prop_flat_map(|(n, k, m)| (tensor(n, k), tensor(k, m))))
    {
        let lhs = a.matmul(&b).unwrap().transpose();
        let rhs = b.transpose().matmul(&a.transpose()).unwrap();
        for (x, y) in lhs.data().iter().zip(rhs.data()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn tape_forward_matches_tensor_kernels(t in shaped()) {
        let mut tape = Tape::new();
        let v = tape.constant(t.clone());
        let s = tape.softmax_rows(v).unwrap();
        let l = tape.log_softmax_rows(v).unwrap();
        let back = tape.exp(l).unwrap();
        prop_assert_eq!(tape.value(s), &t.softmax_rows());
        for (x, y) in tape.value(back).data().iter().zip(tape.value(s).data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
