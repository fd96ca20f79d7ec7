//! Central finite-difference checks for every differentiable tape op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::dsp::{log_mag_stft, StftConfig};

const H: f64 = 1e-5;
const RTOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Compares tape gradients of `build` against central differences over all
/// entries of all inputs; returns the worst relative L2 error.
fn check(inputs: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) -> f64 {
    let eval = |values: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(vars[k])
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = Vec::with_capacity(input.len());
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= H;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * H));
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        let rel = if norm < 1e-12 { diff } else { diff / norm };
        worst = worst.max(rel);
    }
    worst
}

/// Random projection that turns a tensor output into a scalar loss.
fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
    let (rows, cols) = tape.value(v).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random_tensor(&mut rng, rows, cols);
    tape.dot(v, w).unwrap()
}

#[test]
fn conv1d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..20 {
        let stride = 1 + case % 2;
        let kernel = [1, 3, 5][case % 3];
        let (t, ci, co) = (rng.gen_range(3..9), rng.gen_range(1..4), rng.gen_range(1..4));
        let inputs = [
            random_tensor(&mut rng, t, ci),
            random_tensor(&mut rng, kernel * ci, co),
            random_tensor(&mut rng, 1, co),
        ];
        let err = check(&inputs, |tape, v| {
            let y = tape.conv1d(v[0], v[1], v[2], kernel, stride).unwrap();
            project(tape, y, case as u64)
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn sum_of_conv_output_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = [
        random_tensor(&mut rng, 5, 2),
        random_tensor(&mut rng, 6, 1),
        random_tensor(&mut rng, 1, 1),
    ];
    let err = check(&inputs, |tape, v| {
        let y = tape.conv1d(v[0], v[1], v[2], 3, 1).unwrap();
        tape.dot(y, Tensor::from_vec(5, 1, vec![1.0; 5]).unwrap()).unwrap()
    });
    assert!(err < RTOL, "{err}");
}

#[test]
fn leaky_relu_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..20 {
        // keep entries away from the kink at zero
        let x = random_tensor(&mut rng, 6, 3).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
        let err = check(&[x], |tape, v| {
            let y = tape.leaky_relu(v[0], 0.01);
            project(tape, y, case)
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn upsample_and_concat_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..20 {
        let factor = 1 + (case as usize) % 3;
        let a = random_tensor(&mut rng, 4, 2);
        let b = random_tensor(&mut rng, 4 * factor, 3);
        let err = check(&[a, b], |tape, v| {
            let up = tape.upsample(v[0], factor).unwrap();
            let cat = tape.concat(up, v[1]).unwrap();
            project(tape, cat, case)
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn soft_quantization_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..20 {
        let z = random_tensor(&mut rng, 7, 1);
        let c = random_tensor(&mut rng, 4, 1);
        let alpha = rng.gen_range(0.5..8.0);
        let err = check(&[z, c], |tape, v| {
            let a = tape.soft_assign(v[0], v[1], alpha).unwrap();
            let q = tape.mix(a, v[1]).unwrap();
            project(tape, q, case)
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn soft_entropy_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for case in 0..20 {
        let z1 = random_tensor(&mut rng, 6, 1);
        let z2 = random_tensor(&mut rng, 3, 1);
        let c = random_tensor(&mut rng, 5, 1);
        let err = check(&[z1, z2, c], |tape, v| {
            let a1 = tape.soft_assign(v[0], v[2], 3.0).unwrap();
            let a2 = tape.soft_assign(v[1], v[2], 3.0).unwrap();
            let p = tape.mean_rows(&[a1, a2]).unwrap();
            tape.entropy_bits(p)
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn neg_snr_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for case in 0..20 {
        let est = random_tensor(&mut rng, 12, 1);
        let target: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = check(&[est], |tape, v| tape.neg_snr_db(v[0], &target).unwrap());
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn log_stft_l1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cfg = StftConfig { win: 16, hop: 4 };
    for case in 0..20 {
        let est = random_tensor(&mut rng, 40, 1);
        let reference: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let target = log_mag_stft(&reference, &cfg).unwrap();
        let err = check(&[est], |tape, v| tape.log_stft_l1(v[0], &target, cfg).unwrap());
        assert!(err < RTOL, "case {case}: {err}");
    }
}

#[test]
fn scalar_combinator_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for case in 0..20 {
        let a = random_tensor(&mut rng, 3, 2);
        let b = random_tensor(&mut rng, 3, 2);
        let err = check(&[a, b], |tape, v| {
            let pa = project(tape, v[0], case);
            let pb = project(tape, v[1], case + 100);
            let s = tape.weighted_sum(&[(pa, 2.5), (pb, -0.75)]).unwrap();
            let d = tape.abs_diff(s, 10.0).unwrap();
            tape.weighted_sum(&[(d, 0.3), (pa, 1.0)]).unwrap()
        });
        assert!(err < RTOL, "case {case}: {err}");
    }
}
