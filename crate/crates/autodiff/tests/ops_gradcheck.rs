use autodiff::{gradcheck, Result, Tape, Tensor, Var, DEFAULT_EPS};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BAR: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Project an arbitrary-shape output onto a scalar with fixed random weights,
/// so every output entry gets a distinct upstream gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let w = random(tape.shape(out), &mut rng);
    let w = tape.constant(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

type OpFn = fn(&mut Tape, &[Var]) -> Result<Var>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 2]], |t, v| t.matmul(v[0], v[1])),
        ("batched_matmul", vec![vec![2, 3, 4], vec![2, 4, 3]], |t, v| t.matmul(v[0], v[1])),
        ("add_broadcast", vec![vec![3, 4], vec![4]], |t, v| t.add(v[0], v[1])),
        ("mul_broadcast", vec![vec![2, 3, 4], vec![2, 3, 1]], |t, v| t.mul(v[0], v[1])),
        ("scale", vec![vec![3, 4]], |t, v| Ok(t.scale(v[0], -1.7))),
        ("one_minus", vec![vec![3, 4]], |t, v| Ok(t.rsub_scalar(1.0, v[0]))),
        ("transpose", vec![vec![3, 4]], |t, v| t.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], |t, v| t.reshape(v[0], &[2, 6])),
        ("concat", vec![vec![3, 4], vec![3, 2]], |t, v| t.concat(&[v[0], v[1]])),
        ("slice", vec![vec![3, 4]], |t, v| t.slice(v[0], 1, 2)),
        ("relu", vec![vec![3, 4]], |t, v| Ok(t.relu(v[0]))),
        ("sigmoid", vec![vec![3, 4]], |t, v| Ok(t.sigmoid(v[0]))),
        ("softmax", vec![vec![3, 4]], |t, v| t.softmax(v[0])),
        ("masked_softmax", vec![vec![3, 4]], |t, v| {
            let mask = [true, false, true, true, false, true, true, true, true, true, false, false];
            t.masked_softmax(v[0], &mask)
        }),
        ("dropout", vec![vec![3, 4]], |t, v| t.dropout(v[0], 0.3, 11, true)),
        ("embedding", vec![vec![5, 4]], |t, v| t.embedding(v[0], &[0, 3, 3, 1, 4, 0], &[2, 3])),
        ("mean_axis0", vec![vec![3, 4]], |t, v| t.mean(v[0], 0)),
        ("mean_axis1", vec![vec![3, 4]], |t, v| t.mean(v[0], 1)),
        ("max_axis1", vec![vec![3, 4]], |t, v| t.max(v[0], 1)),
        ("unfold", vec![vec![1, 4, 3]], |t, v| t.unfold(v[0], 2)),
        ("cross_entropy", vec![vec![4, 3]], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ("sum", vec![vec![3, 4]], |t, v| Ok(t.sum(v[0]))),
    ]
}

#[test]
fn every_op_passes_gradcheck_on_five_seeds() {
    for (name, shapes, op) in op_cases() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs: Vec<Tensor> = shapes.iter().map(|s| random(s, &mut rng)).collect();
            let report = gradcheck(
                |tape, v| {
                    let out = op(tape, v)?;
                    project(tape, out, seed)
                },
                &inputs,
                DEFAULT_EPS,
            )
            .unwrap();
            assert!(
                report.worst() < BAR,
                "{name} seed {seed}: rel err {:?}",
                report.max_rel_err
            );
        }
    }
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

proptest! {
    #[test]
    fn matmul_matches_triple_loop(m in 1usize..=8, k in 1usize..=8, n in 1usize..=8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let expected = naive_matmul(a.data(), b.data(), m, k, n);
        let mut tape = Tape::new();
        let (va, vb) = (tape.constant(a), tape.constant(b));
        let c = tape.matmul(va, vb).unwrap();
        for (x, y) in tape.value(c).data().iter().zip(&expected) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn softmax_rows_normalized_and_positive(rows in 1usize..6, cols in 1usize..8, scale in 0.1f64..50.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_fn(&[rows, cols], |_| rng.random_range(-scale..scale));
        let mut tape = Tape::new();
        let v = tape.constant(x);
        let y = tape.softmax(v).unwrap();
        for row in tape.value(y).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn dropout_eval_is_identity(p in 0.0f64..0.99, seed in any::<u64>()) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 4], |i| i as f64));
        let y = tape.dropout(x, p, seed, false).unwrap();
        prop_assert_eq!(tape.value(y), tape.value(x));
    }
}
