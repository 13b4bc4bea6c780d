//! Reverse-mode differentiation over a recorded operation tape.
//!
//! Every operation appends a node holding its forward value and a backward
//! closure that maps the upstream gradient to per-parent gradients. Nodes are
//! appended in topological order, so one reverse sweep computes all
//! gradients.

use super::store::ParamStore;
use super::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn = Box<dyn Fn(&Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    parents: Vec<usize>,
    backward: Option<BackFn>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TapeError {
    #[error("backward() already consumed this tape")]
    AlreadyConsumed,
    #[error("backward() requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// (node id, parameter name) for every parameter leaf on this tape.
    bindings: Vec<(usize, String)>,
    consumed: bool,
}

/// Gradients by node id after a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, parents: Vec<usize>, backward: BackFn) -> Var {
        self.nodes.push(Node { value, parents, backward: Some(backward) });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that participates in the graph but is not a trainable
    /// parameter (inputs, masks, baselines).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    /// A leaf bound to a named parameter in `store`; its gradient is
    /// accumulated into the store by [`Tape::backward_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let v = self.constant(store.get(name).clone());
        self.bindings.push((v.0, name.to_string()));
        v
    }

    // ----- elementwise -----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x + y);
        self.push(value, vec![a.0, b.0], Box::new(|g| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip(self.value(b), |x, y| x - y);
        self.push(
            value,
            vec![a.0, b.0],
            Box::new(|g| vec![g.clone(), g.map(|x| -x)]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.zip(&bv, |x, y| x * y);
        self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |g| vec![g.zip(&bv, |x, y| x * y), g.zip(&av, |x, y| x * y)]),
        )
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push(value, vec![a.0], Box::new(move |g| vec![g.map(|x| x * c)]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, vec![a.0], Box::new(|g| vec![g.clone()]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let y = value.clone();
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| vec![g.zip(&y, |gi, yi| gi * (1.0 - yi * yi))]),
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let value = x.map(|v| v.max(0.0));
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| vec![g.zip(&x, |gi, xi| if xi > 0.0 { gi } else { 0.0 })]),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let y = value.clone();
        self.push(value, vec![a.0], Box::new(move |g| vec![g.zip(&y, |gi, yi| gi * yi)]))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let x = self.value(a).clone();
        let value = x.map(f64::ln);
        self.push(value, vec![a.0], Box::new(move |g| vec![g.zip(&x, |gi, xi| gi / xi)]))
    }

    /// Clamp to [lo, hi]; gradient flows only strictly inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let x = self.value(a).clone();
        let value = x.map(|v| v.clamp(lo, hi));
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                vec![g.zip(&x, |gi, xi| if xi > lo && xi < hi { gi } else { 0.0 })]
            }),
        )
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.zip(&bv, f64::min);
        self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |g| {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for i in 0..g.numel() {
                    let take_a = av.data()[i] <= bv.data()[i];
                    ga.data_mut()[i] = if take_a { g.data()[i] } else { 0.0 };
                    gb.data_mut()[i] = if take_a { 0.0 } else { g.data()[i] };
                }
                vec![ga, gb]
            }),
        )
    }

    // ----- linear algebra -----

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a).clone();
        let bv = self.value(b).clone();
        let value = av.matmul(&bv);
        self.push(
            value,
            vec![a.0, b.0],
            Box::new(move |g| vec![g.matmul(&bv.transpose()), av.transpose().matmul(g)]),
        )
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, vec![a.0], Box::new(|g| vec![g.transpose()]))
    }

    /// Broadcast-add a length-d vector to every row of an n-by-d matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(bias);
        assert_eq!(av.rank(), 2);
        assert_eq!(bv.rank(), 1);
        assert_eq!(av.cols(), bv.numel(), "bias width mismatch");
        let (n, d) = (av.rows(), av.cols());
        let mut value = av.clone();
        for i in 0..n {
            for j in 0..d {
                value.data_mut()[i * d + j] += bv.data()[j];
            }
        }
        self.push(
            value,
            vec![a.0, bias.0],
            Box::new(move |g| {
                let mut gb = vec![0.0; d];
                for i in 0..n {
                    for j in 0..d {
                        gb[j] += g.data()[i * d + j];
                    }
                }
                vec![g.clone(), Tensor::vector(gb)]
            }),
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let old_shape = self.value(a).shape().to_vec();
        let value = Tensor::new(shape.to_vec(), self.value(a).data().to_vec());
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| vec![Tensor::new(old_shape.clone(), g.data().to_vec())]),
        )
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2);
        let (n, d) = (av.rows(), av.cols());
        assert!(lo < hi && hi <= d);
        let mut out = Vec::with_capacity(n * (hi - lo));
        for i in 0..n {
            out.extend_from_slice(&av.data()[i * d + lo..i * d + hi]);
        }
        let value = Tensor::matrix(n, hi - lo, out);
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut ga = Tensor::zeros(&[n, d]);
                for i in 0..n {
                    for (j, col) in (lo..hi).enumerate() {
                        ga.set2(i, col, g.at2(i, j));
                    }
                }
                vec![ga]
            }),
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for &p in parts {
                let v = self.value(p);
                let d = v.cols();
                out.extend_from_slice(&v.data()[i * d..(i + 1) * d]);
            }
        }
        let value = Tensor::matrix(n, total, out);
        self.push(
            value,
            parts.iter().map(|p| p.0).collect(),
            Box::new(move |g| {
                let mut grads = Vec::with_capacity(widths.len());
                let mut offset = 0;
                for &w in &widths {
                    let mut part = Tensor::zeros(&[n, w]);
                    for i in 0..n {
                        for j in 0..w {
                            part.set2(i, j, g.at2(i, offset + j));
                        }
                    }
                    grads.push(part);
                    offset += w;
                }
                grads
            }),
        )
    }

    /// Stack one row taken from each input matrix (all n-by-d) into a
    /// (#inputs)-by-d matrix. Used to flip between edge-major and time-major
    /// layouts in the forecaster.
    pub fn gather_row_stack(&mut self, sources: &[Var], row: usize) -> Var {
        assert!(!sources.is_empty());
        let d = self.value(sources[0]).cols();
        let mut out = Vec::with_capacity(sources.len() * d);
        for &s in sources {
            let v = self.value(s);
            assert_eq!(v.cols(), d);
            out.extend_from_slice(&v.data()[row * d..(row + 1) * d]);
        }
        let value = Tensor::matrix(sources.len(), d, out);
        let shapes: Vec<(usize, usize)> = sources
            .iter()
            .map(|&s| (self.value(s).rows(), self.value(s).cols()))
            .collect();
        self.push(
            value,
            sources.iter().map(|s| s.0).collect(),
            Box::new(move |g| {
                shapes
                    .iter()
                    .enumerate()
                    .map(|(i, &(n, d))| {
                        let mut t = Tensor::zeros(&[n, d]);
                        for j in 0..d {
                            t.set2(row, j, g.at2(i, j));
                        }
                        t
                    })
                    .collect()
            }),
        )
    }

    // ----- reductions -----

    pub fn sum(&mut self, a: Var) -> Var {
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::scalar(self.value(a).data().iter().sum());
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| vec![Tensor::full(&shape, g.item())]),
        )
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean over rows: n-by-d -> length-d vector.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2);
        let (n, d) = (av.rows(), av.cols());
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..d {
                out[j] += av.at2(i, j);
            }
        }
        for v in &mut out {
            *v /= n as f64;
        }
        self.push(
            Tensor::vector(out),
            vec![a.0],
            Box::new(move |g| {
                let mut ga = Tensor::zeros(&[n, d]);
                for i in 0..n {
                    for j in 0..d {
                        ga.set2(i, j, g.data()[j] / n as f64);
                    }
                }
                vec![ga]
            }),
        )
    }

    /// Single element by flat index, as a scalar.
    pub fn pick(&mut self, a: Var, flat: usize) -> Var {
        let shape = self.value(a).shape().to_vec();
        let value = Tensor::scalar(self.value(a).data()[flat]);
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut t = Tensor::zeros(&shape);
                t.data_mut()[flat] = g.item();
                vec![t]
            }),
        )
    }

    // ----- softmax family -----

    /// Row-wise softmax of a 2-D input.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 2);
        let (n, d) = (av.rows(), av.cols());
        let mut value = Tensor::zeros(&[n, d]);
        for i in 0..n {
            let row = &av.data()[i * d..(i + 1) * d];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..d {
                value.set2(i, j, exps[j] / z);
            }
        }
        let y = value.clone();
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut ga = Tensor::zeros(&[n, d]);
                for i in 0..n {
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += g.at2(i, j) * y.at2(i, j);
                    }
                    for j in 0..d {
                        ga.set2(i, j, y.at2(i, j) * (g.at2(i, j) - dot));
                    }
                }
                vec![ga]
            }),
        )
    }

    /// Softmax over the unmasked entries of a vector; masked entries get
    /// exactly zero probability and zero gradient.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 1);
        assert_eq!(av.numel(), mask.len());
        assert!(mask.iter().any(|&m| m), "all entries masked");
        let mask = mask.to_vec();
        let x = av.data();
        let m = x
            .iter()
            .zip(&mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut value = Tensor::zeros(&[x.len()]);
        let mut z = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            if mask[i] {
                let e = (xi - m).exp();
                value.data_mut()[i] = e;
                z += e;
            }
        }
        for v in value.data_mut() {
            *v /= z;
        }
        let y = value.clone();
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut dot = 0.0;
                for i in 0..y.numel() {
                    if mask[i] {
                        dot += g.data()[i] * y.data()[i];
                    }
                }
                let mut ga = Tensor::zeros(&[y.numel()]);
                for i in 0..y.numel() {
                    if mask[i] {
                        ga.data_mut()[i] = y.data()[i] * (g.data()[i] - dot);
                    }
                }
                vec![ga]
            }),
        )
    }

    /// Log-softmax over the unmasked entries of a vector. Masked entries are
    /// written as 0.0 and must never be read; their gradient is zero.
    pub fn masked_log_softmax(&mut self, a: Var, mask: &[bool]) -> Var {
        let av = self.value(a);
        assert_eq!(av.rank(), 1);
        assert_eq!(av.numel(), mask.len());
        assert!(mask.iter().any(|&m| m), "all entries masked");
        let mask = mask.to_vec();
        let x = av.data();
        let m = x
            .iter()
            .zip(&mask)
            .filter(|(_, &keep)| keep)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = x
            .iter()
            .enumerate()
            .filter(|(i, _)| mask[*i])
            .map(|(_, &xi)| (xi - m).exp())
            .sum();
        let lse = m + z.ln();
        let mut value = Tensor::zeros(&[x.len()]);
        let mut probs = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            if mask[i] {
                value.data_mut()[i] = xi - lse;
                probs[i] = (xi - lse).exp();
            }
        }
        self.push(
            value,
            vec![a.0],
            Box::new(move |g| {
                let mut gsum = 0.0;
                for i in 0..probs.len() {
                    if mask[i] {
                        gsum += g.data()[i];
                    }
                }
                let mut ga = Tensor::zeros(&[probs.len()]);
                for i in 0..probs.len() {
                    if mask[i] {
                        ga.data_mut()[i] = g.data()[i] - probs[i] * gsum;
                    }
                }
                vec![ga]
            }),
        )
    }

    // ----- temporal convolution -----

    /// Width-3 1-D convolution along rows (time) with symmetric zero
    /// padding: y[t] = bias + sum_k x[t+k-1] W[k], for kernel W of shape
    /// [3, d_in, d_out].
    pub fn conv1d_same(&mut self, x: Var, kernel: Var, bias: Var) -> Var {
        let xv = self.value(x).clone();
        let wv = self.value(kernel).clone();
        let bv = self.value(bias).clone();
        assert_eq!(xv.rank(), 2);
        assert_eq!(wv.rank(), 3);
        assert_eq!(wv.shape()[0], 3, "kernel width must be 3");
        let (t_len, d_in) = (xv.rows(), xv.cols());
        assert_eq!(wv.shape()[1], d_in);
        let d_out = wv.shape()[2];
        assert_eq!(bv.numel(), d_out);
        let mut out = Tensor::zeros(&[t_len, d_out]);
        for t in 0..t_len {
            for o in 0..d_out {
                let mut acc = bv.data()[o];
                for k in 0..3usize {
                    let s = t as isize + k as isize - 1;
                    if s < 0 || s >= t_len as isize {
                        continue;
                    }
                    for i in 0..d_in {
                        acc += xv.at2(s as usize, i) * wv.at3(k, i, o);
                    }
                }
                out.set2(t, o, acc);
            }
        }
        self.push(
            out,
            vec![x.0, kernel.0, bias.0],
            Box::new(move |g| {
                let mut gx = Tensor::zeros(&[t_len, d_in]);
                let mut gw = Tensor::zeros(&[3, d_in, d_out]);
                let mut gb = vec![0.0; d_out];
                for t in 0..t_len {
                    for o in 0..d_out {
                        let go = g.at2(t, o);
                        gb[o] += go;
                        for k in 0..3usize {
                            let s = t as isize + k as isize - 1;
                            if s < 0 || s >= t_len as isize {
                                continue;
                            }
                            let s = s as usize;
                            for i in 0..d_in {
                                gx.set2(s, i, gx.at2(s, i) + go * wv.at3(k, i, o));
                                gw.set3(k, i, o, gw.at3(k, i, o) + go * xv.at2(s, i));
                            }
                        }
                    }
                }
                vec![gx, gw, Tensor::vector(gb)]
            }),
        )
    }

    // ----- backward -----

    /// Reverse sweep from a scalar loss. Consumes the tape: a second call is
    /// an error.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, TapeError> {
        if self.consumed {
            return Err(TapeError::AlreadyConsumed);
        }
        if self.value(loss).numel() != 1 {
            return Err(TapeError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].clone() else { continue };
            let node = &self.nodes[id];
            let Some(back) = &node.backward else { continue };
            let parent_grads = back(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (pid, pg) in node.parents.clone().into_iter().zip(parent_grads) {
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Backward sweep that accumulates parameter gradients into `store`.
    /// Parameters not reachable from the loss keep their (zero) gradient.
    pub fn backward_into(&mut self, loss: Var, store: &mut ParamStore) -> Result<(), TapeError> {
        let bindings = self.bindings.clone();
        let grads = self.backward(loss)?;
        for (id, name) in bindings {
            if let Some(g) = grads.grads[id].as_ref() {
                store.grad_mut(&name).add_assign(g);
            }
        }
        Ok(())
    }
}
