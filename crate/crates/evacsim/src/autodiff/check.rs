//! Central finite-difference gradient checking.

use super::store::ParamStore;
use super::tape::{Tape, Var};

const FD_EPS: f64 = 1e-5;

/// Maximum relative error between reverse-mode gradients and central finite
/// differences over every element of every parameter in `store`.
///
/// `build_loss` must construct the scalar loss on the given tape from the
/// given store; it is invoked repeatedly with perturbed parameter values.
pub fn max_rel_grad_error(
    store: &mut ParamStore,
    build_loss: &dyn Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    store.zero_grads();
    let mut tape = Tape::new();
    let loss = build_loss(&mut tape, store);
    tape.backward_into(loss, store).expect("backward failed");

    let eval = |s: &ParamStore| -> f64 {
        let mut t = Tape::new();
        let l = build_loss(&mut t, s);
        t.value(l).item()
    };

    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut worst: f64 = 0.0;
    for name in names {
        for i in 0..store.get(&name).numel() {
            let orig = store.get(&name).data()[i];
            store.get_mut(&name).data_mut()[i] = orig + FD_EPS;
            let up = eval(store);
            store.get_mut(&name).data_mut()[i] = orig - FD_EPS;
            let down = eval(store);
            store.get_mut(&name).data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * FD_EPS);
            let ad = store.grad(&name).data()[i];
            let err = (ad - fd).abs() / ad.abs().max(fd.abs()).max(1e-4);
            worst = worst.max(err);
        }
    }
    store.zero_grads();
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::layers::{linear, mha_forward, xavier, xavier_conv};
    use crate::autodiff::tensor::Tensor;

    fn rng() -> impl rand::Rng {
        crate::rng::stream(2024, 11)
    }

    #[test]
    fn sum_of_params_has_unit_gradients() {
        let mut store = ParamStore::new("test");
        store.insert("w", Tensor::matrix(2, 3, vec![0.5; 6]));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let loss = tape.sum(w);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").data(), &[1.0; 6]);
    }

    #[test]
    fn zero_scaled_loss_has_zero_gradients() {
        let mut store = ParamStore::new("test");
        store.insert("w", Tensor::vector(vec![1.0, 2.0]));
        let mut tape = Tape::new();
        let w = tape.param(&store, "w");
        let t = tape.tanh(w);
        let s = tape.sum(t);
        let loss = tape.scale(s, 0.0);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_twice_errors() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let loss = tape.mul(x, x);
        assert!(tape.backward(loss).is_ok());
        assert!(tape.backward(loss).is_err());
    }

    #[test]
    fn unreachable_parameter_gets_zero_gradient() {
        let mut store = ParamStore::new("test");
        store.insert("used", Tensor::scalar(3.0));
        store.insert("unused", Tensor::scalar(5.0));
        let mut tape = Tape::new();
        let u = tape.param(&store, "used");
        let _lonely = tape.param(&store, "unused");
        let loss = tape.mul(u, u);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("used").item(), 6.0);
        assert_eq!(store.grad("unused").item(), 0.0);
    }

    #[test]
    fn three_layer_net_passes_fd_check() {
        let mut rng = rng();
        let mut store = ParamStore::new("test");
        store.insert("w1", xavier(&mut rng, 4, 6));
        store.insert("b1", Tensor::zeros(&[6]));
        store.insert("w2", xavier(&mut rng, 6, 5));
        store.insert("b2", Tensor::zeros(&[5]));
        store.insert("w3", xavier(&mut rng, 5, 1));
        store.insert("b3", Tensor::zeros(&[1]));
        let x = Tensor::matrix(3, 4, (0..12).map(|i| ((i as f64) * 0.37).sin()).collect());

        let err = max_rel_grad_error(&mut store, &|tape, s| {
            let x = tape.constant(x.clone());
            let w1 = tape.param(s, "w1");
            let b1 = tape.param(s, "b1");
            let w2 = tape.param(s, "w2");
            let b2 = tape.param(s, "b2");
            let w3 = tape.param(s, "w3");
            let b3 = tape.param(s, "b3");
            let h1 = linear(tape, x, w1, b1);
            let h1 = tape.tanh(h1);
            let h2 = linear(tape, h1, w2, b2);
            let h2 = tape.relu(h2);
            let out = linear(tape, h2, w3, b3);
            let sq = tape.mul(out, out);
            tape.mean(sq)
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn every_primitive_passes_fd_check() {
        let mut rng = rng();
        let mut store = ParamStore::new("test");
        store.insert("a", xavier(&mut rng, 3, 4));
        store.insert("b", xavier(&mut rng, 3, 4));
        store.insert("m", xavier(&mut rng, 4, 3));
        store.insert("bias", Tensor::vector(vec![0.1, -0.2, 0.3, 0.4]));
        store.insert("k", xavier_conv(&mut rng, 4, 2));
        store.insert("kb", Tensor::vector(vec![0.05, -0.05]));

        let err = max_rel_grad_error(&mut store, &|tape, s| {
            let a = tape.param(s, "a");
            let b = tape.param(s, "b");
            let m = tape.param(s, "m");
            let bias = tape.param(s, "bias");
            let k = tape.param(s, "k");
            let kb = tape.param(s, "kb");

            let sum = tape.add(a, b);
            let diff = tape.sub(a, b);
            let prod = tape.mul(sum, diff);
            let biased = tape.add_row(prod, bias);
            let act = tape.tanh(biased);
            let mm = tape.matmul(act, m); // 3x3
            let sm = tape.softmax_rows(mm);
            let smt = tape.transpose(sm);
            let logd = tape.add_scalar(smt, 1.0);
            let logd = tape.ln(logd);
            let e = tape.exp(logd);
            let clamped = tape.clamp(e, 0.9, 1.6);
            let mn = tape.minimum(clamped, e);
            let pooled = tape.mean_rows(mn);
            let pooled2 = tape.reshape(pooled, &[1, 3]);
            let sliced = tape.slice_cols(pooled2, 0, 2);
            let cat = tape.concat_cols(&[sliced, pooled2]);
            let conv = tape.conv1d_same(a, k, kb); // 3x2
            let cs = tape.sum(conv);
            let ps = tape.sum(cat);
            let total = tape.add(cs, ps);
            let picked = tape.pick(mn, 4);
            tape.add(total, picked)
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn masked_softmax_ops_pass_fd_and_zero_masked_grads() {
        let mut store = ParamStore::new("test");
        store.insert("logits", Tensor::vector(vec![0.2, -1.3, 0.7, 2.0]));
        let mask = vec![true, false, true, true];

        let mask2 = mask.clone();
        let err = max_rel_grad_error(&mut store, &|tape, s| {
            let l = tape.param(s, "logits");
            let p = tape.masked_softmax(l, &mask2);
            let lp = tape.masked_log_softmax(l, &mask2);
            let plp = tape.mul(p, lp);
            let ent = tape.sum(plp);
            let chosen = tape.pick(lp, 2);
            tape.add(ent, chosen)
        });
        assert!(err < 1e-4, "max relative error {err}");

        // The masked logit must receive exactly zero gradient.
        store.zero_grads();
        let mut tape = Tape::new();
        let l = tape.param(&store, "logits");
        let p = tape.masked_softmax(l, &mask);
        let loss = tape.sum(p);
        tape.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("logits").data()[1], 0.0);

        // Masked probabilities are exactly zero and the rest sum to one.
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::vector(vec![5.0, 100.0, -3.0, 0.0]));
        let p = tape.masked_softmax(l, &mask);
        let pv = tape.value(p);
        assert_eq!(pv.data()[1], 0.0);
        let total: f64 = pv.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mha_passes_fd_check() {
        let mut rng = rng();
        let mut store = ParamStore::new("test");
        store.insert("wq", xavier(&mut rng, 4, 4));
        store.insert("wk", xavier(&mut rng, 4, 4));
        store.insert("wv", xavier(&mut rng, 4, 4));
        store.insert("wo", xavier(&mut rng, 4, 4));
        let x = Tensor::matrix(3, 4, (0..12).map(|i| ((i as f64) * 0.61).cos()).collect());

        let err = max_rel_grad_error(&mut store, &|tape, s| {
            let x = tape.constant(x.clone());
            let wq = tape.param(s, "wq");
            let wk = tape.param(s, "wk");
            let wv = tape.param(s, "wv");
            let wo = tape.param(s, "wo");
            let q = tape.matmul(x, wq);
            let k = tape.matmul(x, wk);
            let v = tape.matmul(x, wv);
            let out = mha_forward(tape, q, k, v, wo, 2);
            let sq = tape.mul(out, out);
            tape.mean(sq)
        });
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn softmax_rows_normalized_within_1e12() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::matrix(2, 3, vec![10.0, -4.0, 0.3, 1e3, 1e3, -1e3]));
        let p = tape.softmax_rows(x);
        for i in 0..2 {
            let row: f64 = (0..3).map(|j| tape.value(p).at2(i, j)).sum();
            assert!((row - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert!(tape.value(p).at2(i, j) >= 0.0);
            }
        }
    }
}
