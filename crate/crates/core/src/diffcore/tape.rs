//! Reverse-mode differentiation over a fixed primitive set.
//!
//! The tape records eagerly: every op computes its output matrix when pushed,
//! so values are readable immediately after the forward pass. `backward`
//! replays the records in reverse and accumulates parameter gradients into the
//! owning `ParamStore`. A tape is built fresh for every forward pass and
//! confined to one thread.
//!
//! Primitives: affine map (linear), ReLU, row softmax, and soft-target cross
//! entropy, plus the elementwise add / scalar scale / full sum needed to
//! combine predictions and loss terms.

use crate::diffcore::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Probabilities are clamped from below at this floor before any log.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    Linear { x: NodeId, w: NodeId, b: NodeId },
    Relu { x: NodeId },
    Softmax { z: NodeId },
    CeSoft { p: NodeId, target: Matrix },
    Add { a: NodeId, b: NodeId },
    Scale { x: NodeId, c: f64 },
    SumAll { x: NodeId },
}

#[derive(Debug, Default)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Matrix>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, n: NodeId) -> &Matrix {
        &self.values[n.0]
    }

    /// Extract a 1x1 node as f64.
    pub fn scalar(&self, n: NodeId) -> Result<f64> {
        let v = self.value(n);
        if v.rows() != 1 || v.cols() != 1 {
            return Err(Error::shape("Tape::scalar", format!("expected 1x1, got {}", v.shape_str())));
        }
        Ok(v.get(0, 0))
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId(self.ops.len() - 1)
    }

    /// Leaf carrying fixed data (inputs, targets used as values).
    pub fn constant(&mut self, m: Matrix) -> NodeId {
        self.push(Op::Constant, m)
    }

    /// Leaf bound to a store parameter; snapshots the current value.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        self.push(Op::Param(id), store.value(id).clone())
    }

    /// out[i,j] = sum_d x[i,d] w[d,j] + b[0,j]
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let (xm, wm, bm) = (self.value(x), self.value(w), self.value(b));
        if xm.cols() != wm.rows() || bm.rows() != 1 || bm.cols() != wm.cols() {
            return Err(Error::shape(
                "linear",
                format!("x {} . w {} + b {}", xm.shape_str(), wm.shape_str(), bm.shape_str()),
            ));
        }
        let mut out = xm.matmul(wm)?;
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = out.get(i, j) + bm.get(0, j);
                out.set(i, j, v);
            }
        }
        Ok(self.push(Op::Linear { x, w, b }, out))
    }

    /// Elementwise max(0, x).
    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push(Op::Relu { x }, out)
    }

    /// Row-wise softmax with per-row max subtraction for stability.
    pub fn softmax(&mut self, z: NodeId) -> Result<NodeId> {
        let zm = self.value(z);
        if zm.cols() == 0 {
            return Err(Error::shape("softmax", "zero columns".to_string()));
        }
        let mut out = Matrix::zeros(zm.rows(), zm.cols());
        for i in 0..zm.rows() {
            let row = zm.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..zm.cols() {
                let e = (row[j] - max).exp();
                out.set(i, j, e);
                denom += e;
            }
            for j in 0..zm.cols() {
                out.set(i, j, out.get(i, j) / denom);
            }
        }
        Ok(self.push(Op::Softmax { z }, out))
    }

    /// Mean over rows of -target . log(max(p, LOG_FLOOR)).
    ///
    /// The target is data, not a differentiable node: gradients flow only
    /// into `p`. Negative target entries are rejected.
    pub fn ce_soft(&mut self, p: NodeId, target: Matrix) -> Result<NodeId> {
        let pm = self.value(p);
        if !pm.same_shape(&target) {
            return Err(Error::shape(
                "ce_soft",
                format!("p {} vs target {}", pm.shape_str(), target.shape_str()),
            ));
        }
        if pm.rows() == 0 {
            return Err(Error::shape("ce_soft", "empty batch".to_string()));
        }
        if let Some(t) = target.values().iter().find(|&&t| t < 0.0) {
            return Err(Error::InvalidArgument(format!("negative target entry {t}")));
        }
        let batch = pm.rows() as f64;
        let mut loss = 0.0;
        for (pv, tv) in pm.values().iter().zip(target.values()) {
            if *tv != 0.0 {
                loss -= tv * pv.max(LOG_FLOOR).ln();
            }
        }
        loss /= batch;
        let out = Matrix::from_vec(1, 1, vec![loss])?;
        Ok(self.push(Op::CeSoft { p, target }, out))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let out = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let out = self.value(x).scale(c);
        self.push(Op::Scale { x, c }, out)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.value(x).values().iter().sum();
        let out = Matrix::from_fn(1, 1, |_, _| s);
        self.push(Op::SumAll { x }, out)
    }

    /// Reverse pass from a scalar loss node.
    ///
    /// Zeroes all store gradients first, then accumulates; parameters not
    /// reachable from `loss` keep zero grad.
    pub fn backward(&self, loss: NodeId, store: &mut ParamStore) -> Result<()> {
        if self.ops.is_empty() || loss.0 >= self.ops.len() {
            return Err(Error::InvalidArgument(
                "backward requires a recorded forward pass".to_string(),
            ));
        }
        let lv = self.value(loss);
        if lv.rows() != 1 || lv.cols() != 1 {
            return Err(Error::shape("backward", format!("loss must be 1x1, got {}", lv.shape_str())));
        }
        store.zero_grads();

        let mut adjoints: Vec<Option<Matrix>> = vec![None; self.ops.len()];
        adjoints[loss.0] = Some(Matrix::from_fn(1, 1, |_, _| 1.0));

        for idx in (0..self.ops.len()).rev() {
            let Some(dout) = adjoints[idx].take() else { continue };
            match &self.ops[idx] {
                Op::Constant => {}
                Op::Param(pid) => store.accumulate_grad(*pid, &dout)?,
                Op::Linear { x, w, b } => {
                    let xm = self.value(*x);
                    let wm = self.value(*w);
                    let dx = dout.matmul(&wm.transpose())?;
                    let dw = xm.transpose().matmul(&dout)?;
                    let mut db = Matrix::zeros(1, dout.cols());
                    for i in 0..dout.rows() {
                        for j in 0..dout.cols() {
                            db.set(0, j, db.get(0, j) + dout.get(i, j));
                        }
                    }
                    accumulate(&mut adjoints, *x, dx)?;
                    accumulate(&mut adjoints, *w, dw)?;
                    accumulate(&mut adjoints, *b, db)?;
                }
                Op::Relu { x } => {
                    let xm = self.value(*x);
                    let dx = Matrix::from_fn(dout.rows(), dout.cols(), |i, j| {
                        if xm.get(i, j) > 0.0 {
                            dout.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoints, *x, dx)?;
                }
                Op::Softmax { z } => {
                    let s = self.value(idx_node(idx));
                    let mut dz = Matrix::zeros(dout.rows(), dout.cols());
                    for i in 0..dout.rows() {
                        let mut dot = 0.0;
                        for k in 0..dout.cols() {
                            dot += dout.get(i, k) * s.get(i, k);
                        }
                        for j in 0..dout.cols() {
                            dz.set(i, j, s.get(i, j) * (dout.get(i, j) - dot));
                        }
                    }
                    accumulate(&mut adjoints, *z, dz)?;
                }
                Op::CeSoft { p, target } => {
                    let pm = self.value(*p);
                    let scale = dout.get(0, 0) / pm.rows() as f64;
                    let dp = Matrix::from_fn(pm.rows(), pm.cols(), |i, j| {
                        let pv = pm.get(i, j);
                        let tv = target.get(i, j);
                        if tv != 0.0 && pv > LOG_FLOOR {
                            -scale * tv / pv
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adjoints, *p, dp)?;
                }
                Op::Add { a, b } => {
                    accumulate(&mut adjoints, *a, dout.clone())?;
                    accumulate(&mut adjoints, *b, dout)?;
                }
                Op::Scale { x, c } => {
                    accumulate(&mut adjoints, *x, dout.scale(*c))?;
                }
                Op::SumAll { x } => {
                    let xm = self.value(*x);
                    let g = dout.get(0, 0);
                    let dx = Matrix::from_fn(xm.rows(), xm.cols(), |_, _| g);
                    accumulate(&mut adjoints, *x, dx)?;
                }
            }
        }
        Ok(())
    }
}

fn idx_node(idx: usize) -> NodeId {
    NodeId(idx)
}

fn accumulate(adjoints: &mut [Option<Matrix>], n: NodeId, contribution: Matrix) -> Result<()> {
    match &mut adjoints[n.0] {
        Some(existing) => {
            *existing = existing.add(&contribution)?;
        }
        slot @ None => *slot = Some(contribution),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gradcheck;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn linear_identity_passthrough() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::identity(2));
        let w = tape.constant(Matrix::identity(2));
        let b = tape.constant(Matrix::zeros(1, 2));
        let out = tape.linear(x, w, b).unwrap();
        assert_eq!(*tape.value(out), Matrix::identity(2));
    }

    #[test]
    fn linear_bias_broadcast() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let w = tape.constant(Matrix::identity(2));
        let b = tape.constant(Matrix::from_rows(&[vec![3.0, 3.0]]).unwrap());
        let out = tape.linear(x, w, b).unwrap();
        assert_eq!(tape.value(out).row(0), &[4.0, 5.0]);
    }

    #[test]
    fn linear_rejects_shape_mismatch_with_report() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 3));
        let w = tape.constant(Matrix::zeros(4, 5));
        let b = tape.constant(Matrix::zeros(1, 5));
        let err = tape.linear(x, w, b).unwrap_err();
        assert!(err.to_string().contains("2x3"));
        assert!(err.to_string().contains("4x5"));
    }

    #[test]
    fn linear_matches_loop_oracle_with_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xm = Matrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0));
        let wm = Matrix::from_fn(4, 5, |_, _| rng.random_range(-1.0..1.0));
        let bm = Matrix::from_fn(1, 5, |_, _| rng.random_range(-1.0..1.0));
        let mut tape = Tape::new();
        let x = tape.constant(xm.clone());
        let w = tape.constant(wm.clone());
        let b = tape.constant(bm.clone());
        let out = tape.linear(x, w, b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut want = bm.get(0, j);
                for d in 0..4 {
                    want += xm.get(i, d) * wm.get(d, j);
                }
                assert!(close(tape.value(out).get(i, j), want, 1e-12));
            }
        }
    }

    #[test]
    fn relu_examples() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![-1.0, 0.0, 2.0]]).unwrap());
        let out = tape.relu(x);
        assert_eq!(tape.value(out).row(0), &[0.0, 0.0, 2.0]);

        let neg = tape.constant(Matrix::from_rows(&[vec![-3.0, -0.5]]).unwrap());
        let out = tape.relu(neg);
        assert_eq!(tape.value(out).row(0), &[0.0, 0.0]);

        let pos = tape.constant(Matrix::from_rows(&[vec![0.5, 3.0]]).unwrap());
        let out = tape.relu(pos);
        assert_eq!(tape.value(out).row(0), &[0.5, 3.0]);
    }

    #[test]
    fn softmax_uniform_analytic_and_shift_invariant() {
        let mut tape = Tape::new();
        for c in [-7.0, 0.0, 123.0] {
            let z = tape.constant(Matrix::from_rows(&[vec![c, c, c]]).unwrap());
            let out = tape.softmax(z).unwrap();
            for &v in tape.value(out).row(0) {
                assert!(close(v, 1.0 / 3.0, 1e-12));
            }
        }

        let z = tape.constant(Matrix::from_rows(&[vec![0.0, 3f64.ln()]]).unwrap());
        let out = tape.softmax(z).unwrap();
        assert!(close(tape.value(out).get(0, 0), 0.25, 1e-12));
        assert!(close(tape.value(out).get(0, 1), 0.75, 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let zm = Matrix::from_fn(4, 6, |_, _| rng.random_range(-5.0..5.0));
        let shifted = zm.map(|v| v + 100.0);
        let a = tape.constant(zm);
        let b = tape.constant(shifted);
        let sa = tape.softmax(a).unwrap();
        let sb = tape.softmax(b).unwrap();
        for (x, y) in tape.value(sa).values().iter().zip(tape.value(sb).values()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn ce_soft_examples_and_oracle() {
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap());
        let loss = tape.ce_soft(p, Matrix::from_rows(&[vec![0.0, 1.0]]).unwrap()).unwrap();
        assert!(close(tape.scalar(loss).unwrap(), 2f64.ln(), 1e-12));

        // all-zero target row contributes nothing
        let p = tape.constant(Matrix::from_rows(&[vec![0.2, 0.8], vec![0.5, 0.5]]).unwrap());
        let t = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let loss = tape.ce_soft(p, t).unwrap();
        assert!(close(tape.scalar(loss).unwrap(), 2f64.ln() / 2.0, 1e-12));

        // random soft targets vs direct per-element summation
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pm = Matrix::from_fn(3, 4, |_, _| rng.random_range(0.05..1.0));
        let tm = Matrix::from_fn(3, 4, |_, _| rng.random_range(0.0..1.0));
        let mut want = 0.0;
        for i in 0..3 {
            for j in 0..4 {
                want -= tm.get(i, j) * pm.get(i, j).ln();
            }
        }
        want /= 3.0;
        let p = tape.constant(pm);
        let loss = tape.ce_soft(p, tm).unwrap();
        assert!(close(tape.scalar(loss).unwrap(), want, 1e-12));
    }

    #[test]
    fn ce_soft_rejects_negative_target() {
        let mut tape = Tape::new();
        let p = tape.constant(Matrix::from_rows(&[vec![0.5, 0.5]]).unwrap());
        let err = tape.ce_soft(p, Matrix::from_rows(&[vec![-0.1, 1.0]]).unwrap()).unwrap_err();
        assert!(err.to_string().contains("negative target"));
    }

    #[test]
    fn backward_before_forward_rejected() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        assert!(tape.backward(NodeId(0), &mut store).is_err());
    }

    #[test]
    fn backward_linear_map_grad_is_x_transpose() {
        // loss = sum(x . w), x fixed => dloss/dw = x^T . ones
        let mut store = ParamStore::new();
        let w = store
            .register("w", Matrix::from_rows(&[vec![0.3, -0.2], vec![0.1, 0.4]]).unwrap())
            .unwrap();
        let xm = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();

        let mut tape = Tape::new();
        let x = tape.constant(xm.clone());
        let wn = tape.param(&store, w);
        let b = tape.constant(Matrix::zeros(1, 2));
        let y = tape.linear(x, wn, b).unwrap();
        let loss = tape.sum_all(y);
        tape.backward(loss, &mut store).unwrap();

        let ones = Matrix::from_fn(3, 2, |_, _| 1.0);
        let want = xm.transpose().matmul(&ones).unwrap();
        assert_eq!(*store.grad(w), want);
    }

    #[test]
    fn backward_relu_blocks_negative_preactivation() {
        let mut store = ParamStore::new();
        let w = store.register("w", Matrix::from_rows(&[vec![-1.0, 1.0]]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::from_rows(&[vec![1.0]]).unwrap());
        let wn = tape.param(&store, w);
        let b = tape.constant(Matrix::zeros(1, 2));
        let y = tape.linear(x, wn, b).unwrap();
        let r = tape.relu(y);
        let loss = tape.sum_all(r);
        tape.backward(loss, &mut store).unwrap();
        // first unit clamped at -1 -> zero grad; second passes through
        assert_eq!(store.grad(w).row(0), &[0.0, 1.0]);
    }

    #[test]
    fn backward_zeroes_unreachable_params() {
        let mut store = ParamStore::new();
        let used = store.register("used", Matrix::from_rows(&[vec![2.0]]).unwrap()).unwrap();
        let unused = store.register("unused", Matrix::from_rows(&[vec![2.0]]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let wn = tape.param(&store, used);
        let loss = tape.sum_all(wn);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad(used).get(0, 0), 1.0);
        assert_eq!(store.grad(unused).get(0, 0), 0.0);
    }

    // Central finite differences over a random composition of all primitives.
    #[test]
    fn gradcheck_full_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..10 {
            let batch = 1 + (case % 4);
            let din = 2 + (case % 5);
            let hidden = 2 + ((case * 3) % 6);
            let k = 2 + (case % 3);

            let mut store = ParamStore::new();
            let w1 = store
                .register("w1", Matrix::from_fn(din, hidden, |_, _| rng.random_range(-0.8..0.8)))
                .unwrap();
            let b1 = store
                .register("b1", Matrix::from_fn(1, hidden, |_, _| rng.random_range(-0.5..0.5)))
                .unwrap();
            let w2 = store
                .register("w2", Matrix::from_fn(hidden, k, |_, _| rng.random_range(-0.8..0.8)))
                .unwrap();
            let b2 = store
                .register("b2", Matrix::from_fn(1, k, |_, _| rng.random_range(-0.5..0.5)))
                .unwrap();
            let xm = Matrix::from_fn(batch, din, |_, _| rng.random_range(-1.0..1.0));
            let mut tm = Matrix::zeros(batch, k);
            for i in 0..batch {
                let hot = rng.random_range(0..k);
                tm.set(i, hot, 1.0);
            }

            let forward = |store: &ParamStore| -> crate::error::Result<f64> {
                let mut tape = Tape::new();
                let x = tape.constant(xm.clone());
                let w1n = tape.param(store, w1);
                let b1n = tape.param(store, b1);
                let h = tape.linear(x, w1n, b1n)?;
                let h = tape.relu(h);
                let w2n = tape.param(store, w2);
                let b2n = tape.param(store, b2);
                let z = tape.linear(h, w2n, b2n)?;
                let p = tape.softmax(z)?;
                tape.ce_soft(p, tm.clone()).and_then(|l| tape.scalar(l))
            };

            // analytic
            {
                let mut tape = Tape::new();
                let x = tape.constant(xm.clone());
                let w1n = tape.param(&store, w1);
                let b1n = tape.param(&store, b1);
                let h = tape.linear(x, w1n, b1n).unwrap();
                let h = tape.relu(h);
                let w2n = tape.param(&store, w2);
                let b2n = tape.param(&store, b2);
                let z = tape.linear(h, w2n, b2n).unwrap();
                let p = tape.softmax(z).unwrap();
                let loss = tape.ce_soft(p, tm.clone()).unwrap();
                tape.backward(loss, &mut store).unwrap();
            }

            let max_rel =
                gradcheck::max_relative_error(&mut store, &[w1, b1, w2, b2], 1e-5, forward).unwrap();
            assert!(max_rel < 1e-5, "case {case}: max relative error {max_rel}");
        }
    }
}
