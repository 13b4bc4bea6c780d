//! Layer compositions and parameter initialization shared by the actor,
//! critic, and travel-time predictor.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use rand::Rng;

/// x W + b for x: n-by-d_in, W: d_in-by-d_out, b: d_out.
pub fn linear(tape: &mut Tape, x: Var, w: Var, b: Var) -> Var {
    let xw = tape.matmul(x, w);
    tape.add_row(xw, b)
}

/// Scaled dot-product multi-head attention over already-projected Q, K, V
/// (all n-by-d_model): per head softmax(Q_h K_h^T / sqrt(d_head)) V_h, heads
/// concatenated and projected by `w_o`.
pub fn mha_forward(tape: &mut Tape, q: Var, k: Var, v: Var, w_o: Var, heads: usize) -> Var {
    let d_model = tape.value(q).cols();
    assert_eq!(tape.value(k).cols(), d_model);
    assert_eq!(tape.value(v).cols(), d_model);
    assert_eq!(tape.value(k).rows(), tape.value(v).rows(), "K/V row mismatch");
    assert!(heads > 0 && d_model % heads == 0, "model dim not divisible by heads");
    let d_head = d_model / heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let lo = h * d_head;
        let hi = lo + d_head;
        let qh = tape.slice_cols(q, lo, hi);
        let kh = tape.slice_cols(k, lo, hi);
        let vh = tape.slice_cols(v, lo, hi);
        let kt = tape.transpose(kh);
        let scores = tape.matmul(qh, kt);
        let scaled = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scaled);
        outs.push(tape.matmul(attn, vh));
    }
    let concat = tape.concat_cols(&outs);
    tape.matmul(concat, w_o)
}

/// Xavier/Glorot uniform initialization for a 2-D weight.
pub fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::matrix(rows, cols, data)
}

/// Xavier-style init for a width-3 conv kernel [3, d_in, d_out].
pub fn xavier_conv<R: Rng>(rng: &mut R, d_in: usize, d_out: usize) -> Tensor {
    let bound = (6.0 / (3 * d_in + d_out) as f64).sqrt();
    let data = (0..3 * d_in * d_out)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::new(vec![3, d_in, d_out], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row_attention_returns_value_row() {
        // softmax over one score is 1, so the output is V (then projected by
        // the identity here).
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.3, -0.7]));
        let k = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let v = tape.constant(Tensor::matrix(1, 2, vec![5.0, -3.0]));
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let out = mha_forward(&mut tape, q, k, v, eye, 1);
        assert_eq!(tape.value(out).data(), &[5.0, -3.0]);
    }

    #[test]
    fn identical_keys_give_uniform_attention() {
        let mut tape = Tape::new();
        let q = tape.constant(Tensor::matrix(1, 2, vec![0.5, 0.5]));
        let k = tape.constant(Tensor::matrix(3, 2, vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]));
        let v = tape.constant(Tensor::matrix(3, 2, vec![3.0, 0.0, 0.0, 3.0, 3.0, 3.0]));
        let eye = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
        let out = mha_forward(&mut tape, q, k, v, eye, 1);
        // Uniform 1/3 weights average the value rows.
        for (got, want) in tape.value(out).data().iter().zip(&[2.0, 2.0]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    /// Scalar-by-scalar oracle for 2-head attention on a 2x4 input.
    #[test]
    fn two_head_attention_matches_hand_computation() {
        let q_in = [[0.2, -0.1, 0.4, 0.3], [-0.5, 0.6, 0.1, -0.2]];
        let k_in = [[0.1, 0.7, -0.3, 0.2], [0.4, -0.6, 0.5, 0.0]];
        let v_in = [[1.0, 2.0, 3.0, 4.0], [-1.0, 0.5, 0.25, -2.0]];

        // Oracle: plain loops, one head over columns 0..2, one over 2..4.
        let d_head = 2;
        let mut expect = [[0.0; 4]; 2];
        for h in 0..2 {
            let cols = [h * d_head, h * d_head + 1];
            for i in 0..2 {
                let mut scores = [0.0; 2];
                for (j, s) in scores.iter_mut().enumerate() {
                    for &c in &cols {
                        *s += q_in[i][c] * k_in[j][c];
                    }
                    *s /= (d_head as f64).sqrt();
                }
                let m = scores[0].max(scores[1]);
                let e = [(scores[0] - m).exp(), (scores[1] - m).exp()];
                let z = e[0] + e[1];
                let w = [e[0] / z, e[1] / z];
                for (ci, &c) in cols.iter().enumerate() {
                    expect[i][h * d_head + ci] = w[0] * v_in[0][c] + w[1] * v_in[1][c];
                }
            }
        }

        let mut tape = Tape::new();
        let flat = |m: &[[f64; 4]; 2]| m.iter().flatten().copied().collect::<Vec<_>>();
        let q = tape.constant(Tensor::matrix(2, 4, flat(&q_in)));
        let k = tape.constant(Tensor::matrix(2, 4, flat(&k_in)));
        let v = tape.constant(Tensor::matrix(2, 4, flat(&v_in)));
        let mut eye = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            eye.set2(i, i, 1.0);
        }
        let eye = tape.constant(eye);
        let out = mha_forward(&mut tape, q, k, v, eye, 2);
        for i in 0..2 {
            for j in 0..4 {
                let got = tape.value(out).at2(i, j);
                assert!(
                    (got - expect[i][j]).abs() < 1e-12,
                    "({i},{j}): got {got}, want {}",
                    expect[i][j]
                );
            }
        }
    }
}
