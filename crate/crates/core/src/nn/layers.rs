use std::hash::{Hash, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm_acc, gemm_acc_t, Scalar, Tensor};
use super::NnError;

/// Affine layer `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    /// Kaiming-uniform (fan-in) weights, zero bias.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| T::from_f64(rng.random_range(-bound..bound)))
            .collect();
        Self {
            weight: Tensor::from_vec(&[fan_in, fan_out], data).expect("sized"),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[fan_in, fan_out]),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        if x.shape().len() != 2 || x.cols() != self.fan_in() {
            return Err(NnError::Shape(format!(
                "linear expects N x {}, got {:?}",
                self.fan_in(),
                x.shape()
            )));
        }
        let n = x.rows();
        let mut out = Tensor::zeros(&[n, self.fan_out()]);
        for i in 0..n {
            out.row_mut(i).copy_from_slice(self.bias.data());
        }
        gemm_acc(
            x.data(),
            n,
            self.fan_in(),
            self.weight.data(),
            self.fan_out(),
            out.data_mut(),
        );
        Ok(out)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`
    /// when `need_dx`.
    pub fn backward(
        &self,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut Linear<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let n = x.rows();
        let (cin, cout) = (self.fan_in(), self.fan_out());
        gemm_acc_t(x.data(), true, cin, n, dy.data(), false, cout, grads.weight.data_mut());
        let db = grads.bias.data_mut();
        for i in 0..n {
            for (b, &g) in db.iter_mut().zip(dy.row(i)) {
                *b = *b + g;
            }
        }
        need_dx.then(|| {
            let mut dx = Tensor::zeros(&[n, cin]);
            gemm_acc_t(dy.data(), false, n, cout, self.weight.data(), true, cin, dx.data_mut());
            dx
        })
    }
}

/// Stack of affine layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    /// Input of each executed layer (post-ReLU output of the one before).
    inputs: Vec<Tensor<T>>,
    pub output: Tensor<T>,
}

impl<T: Scalar> MlpTape<T> {
    /// Hashes which ReLU units are active, so callers can detect when a
    /// perturbation crosses a kink.
    pub fn hash_pattern<H: Hasher>(&self, h: &mut H) {
        for x in self.inputs.iter().skip(1) {
            for v in x.data() {
                (*v > T::zero()).hash(h);
            }
        }
    }
}

impl<T: Scalar> Mlp<T> {
    /// `widths = [in, h1, ..., out]`.
    pub fn init<R: Rng>(widths: &[usize], rng: &mut R) -> Self {
        Self {
            layers: widths
                .windows(2)
                .map(|w| Linear::init(w[0], w[1], rng))
                .collect(),
        }
    }

    /// Like [`Mlp::init`] with the output layer's weights scaled by `gain`,
    /// so a fresh head starts close to zero.
    pub fn init_head<R: Rng>(widths: &[usize], gain: f64, rng: &mut R) -> Self {
        let mut mlp = Self::init(widths, rng);
        if let Some(last) = mlp.layers.last_mut() {
            for w in last.weight.data_mut() {
                *w = T::from_f64(w.as_f64() * gain);
            }
        }
        mlp
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.fan_in(), l.fan_out()))
                .collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out())
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<MlpTape<T>, NnError> {
        self.forward_from(0, x.clone())
    }

    /// Runs layers `start..`; `x` is the (already activated) input of layer
    /// `start`.
    pub fn forward_from(&self, start: usize, x: Tensor<T>) -> Result<MlpTape<T>, NnError> {
        let mut inputs = Vec::with_capacity(self.layers.len() - start);
        let mut cur = x;
        for (i, layer) in self.layers.iter().enumerate().skip(start) {
            let mut y = layer.forward(&cur)?;
            if i + 1 < self.layers.len() {
                relu_inplace(&mut y);
            }
            inputs.push(cur);
            cur = y;
        }
        Ok(MlpTape {
            inputs,
            output: cur,
        })
    }

    pub fn backward(
        &self,
        tape: &MlpTape<T>,
        dy: Tensor<T>,
        grads: &mut Mlp<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        self.backward_from(0, tape, dy, grads, need_dx)
    }

    /// Backward through layers `start..` recorded in `tape`. The returned
    /// gradient is with respect to the input of layer `start`.
    pub fn backward_from(
        &self,
        start: usize,
        tape: &MlpTape<T>,
        dy: Tensor<T>,
        grads: &mut Mlp<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let mut d = dy;
        for (j, layer_idx) in (start..self.layers.len()).enumerate().rev() {
            let x = &tape.inputs[j];
            let first = j == 0;
            let dx = self.layers[layer_idx].backward(
                x,
                &d,
                &mut grads.layers[layer_idx],
                !first || need_dx,
            );
            match dx {
                Some(mut dx) if !first => {
                    // x is the ReLU output of the previous layer
                    relu_backward_inplace(&mut dx, x);
                    d = dx;
                }
                other => return other,
            }
        }
        None
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut Tensor<T>) {
    for v in x.data_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes `dx` wherever the ReLU output `y` is not positive.
pub fn relu_backward_inplace<T: Scalar>(dx: &mut Tensor<T>, y: &Tensor<T>) {
    for (g, &v) in dx.data_mut().iter_mut().zip(y.data()) {
        if !(v > T::zero()) {
            *g = T::zero();
        }
    }
}

/// Column-wise max over rows (the symmetric PointNet aggregation).
///
/// Returns the `1 x C` pooled row and, per column, the winning row; ties go
/// to the lowest row index.
pub fn maxpool_points<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>), NnError> {
    if x.shape().len() != 2 || x.rows() == 0 {
        return Err(NnError::EmptyInput);
    }
    let c = x.cols();
    let mut best: Vec<T> = x.row(0).to_vec();
    let mut arg = vec![0usize; c];
    for i in 1..x.rows() {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = i;
            }
        }
    }
    Ok((Tensor::from_vec(&[1, c], best).expect("sized"), arg))
}

/// Routes the pooled gradient `dpool` (length C) to the argmax rows of an
/// `n x C` gradient buffer.
pub fn maxpool_backward<T: Scalar>(dpool: &[T], argmax: &[usize], dx: &mut Tensor<T>) {
    let c = dx.cols();
    let data = dx.data_mut();
    for (j, (&g, &i)) in dpool.iter().zip(argmax).enumerate() {
        data[i * c + j] = data[i * c + j] + g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut l = Linear::<f64>::zeros(3, 3);
        for i in 0..3 {
            l.weight.data_mut()[i * 3 + i] = 1.0;
        }
        let mlp = Mlp { layers: vec![l] };
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.0, -0.25]]);
        assert_eq!(mlp.forward(&x).unwrap().output, x);
    }

    #[test]
    fn relu_blocks_negative_preactivations() {
        let mut first = Linear::<f64>::zeros(2, 2);
        first.bias.data_mut().copy_from_slice(&[-1.0, -2.0]);
        let mut second = Linear::<f64>::zeros(2, 1);
        second.weight.data_mut().copy_from_slice(&[1.0, 1.0]);
        let mlp = Mlp {
            layers: vec![first, second],
        };
        let x = Tensor::from_rows(&[[0.1, 0.2]]);
        let tape = mlp.forward(&x).unwrap();
        assert_eq!(tape.output.data(), &[0.0]);
        let mut grads = mlp.zeros_like();
        let dx = mlp
            .backward(&tape, Tensor::from_rows(&[[1.0]]), &mut grads, true)
            .unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0]);
        assert!(grads.layers[0].weight.data().iter().all(|v| *v == 0.0));
        assert_eq!(grads.layers[1].bias.data(), &[1.0]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::<f64>::init(&[3, 4, 2], &mut rng);
        assert!(mlp.forward(&Tensor::from_rows(&[[1.0, 2.0]])).is_err());
    }

    #[test]
    fn maxpool_basics() {
        let x = Tensor::<f64>::from_rows(&[[1.0, 5.0, -1.0]]);
        let (p, arg) = maxpool_points(&x).unwrap();
        assert_eq!(p.data(), x.data());
        assert_eq!(arg, vec![0, 0, 0]);

        let x = Tensor::<f64>::from_rows(&[[1.0, 2.0], [3.0, 2.0], [0.0, 4.0]]);
        let (p, arg) = maxpool_points(&x).unwrap();
        assert_eq!(p.data(), &[3.0, 4.0]);
        assert_eq!(arg, vec![1, 2]);
        let y = Tensor::<f64>::from_rows(&[[0.0, 4.0], [1.0, 2.0], [3.0, 2.0]]);
        assert_eq!(maxpool_points(&y).unwrap().0, p);

        // tie -> lowest row
        let t = Tensor::<f64>::from_rows(&[[2.0], [2.0]]);
        assert_eq!(maxpool_points(&t).unwrap().1, vec![0]);

        assert!(maxpool_points(&Tensor::<f64>::zeros(&[0, 3])).is_err());
    }

    /// Central differences through MLP + max-pool on a scalar objective.
    #[test]
    fn mlp_and_pool_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::<f64>::init(&[3, 6, 5, 4], &mut rng);
        let rows: Vec<[f64; 3]> = (0..9)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        let x = Tensor::from_rows(&rows);
        let wts = [0.3, -0.7, 1.1, 0.5];
        let objective = |m: &Mlp<f64>, x: &Tensor<f64>| -> f64 {
            let out = m.forward(x).unwrap().output;
            let (p, _) = maxpool_points(&out).unwrap();
            p.data().iter().zip(wts).map(|(a, b)| a * b).sum()
        };

        let tape = mlp.forward(&x).unwrap();
        let (_, arg) = maxpool_points(&tape.output).unwrap();
        let mut dout = Tensor::zeros(tape.output.shape());
        maxpool_backward(&wts, &arg, &mut dout);
        let mut grads = mlp.zeros_like();
        let dx = mlp.backward(&tape, dout, &mut grads, true).unwrap();

        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        let check = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for li in 0..mlp.layers.len() {
            for pi in 0..mlp.layers[li].weight.len() {
                let mut p = mlp.clone();
                p.layers[li].weight.data_mut()[pi] += eps;
                let mut m = mlp.clone();
                m.layers[li].weight.data_mut()[pi] -= eps;
                let num = (objective(&p, &x) - objective(&m, &x)) / (2.0 * eps);
                worst = worst.max(check(grads.layers[li].weight.data()[pi], num));
            }
        }
        for xi in 0..x.len() {
            let mut p = x.clone();
            p.data_mut()[xi] += eps;
            let mut m = x.clone();
            m.data_mut()[xi] -= eps;
            let num = (objective(&mlp, &p) - objective(&mlp, &m)) / (2.0 * eps);
            worst = worst.max(check(dx.data()[xi], num));
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
