use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::{matmul, matmul_tn};
use super::{NnError, Tensor2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Local derivative expressed through the activation output `y`.
    #[inline]
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Identity => 1.0,
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully-connected layer `y = act(x W + b)` with `W` stored `inputs × outputs`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub w: Tensor2,
    pub b: Vec<f64>,
    pub act: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseGrad {
    pub dw: Tensor2,
    pub db: Vec<f64>,
}

impl Dense {
    /// Uniform ±√(6/fan_in) weights, zero biases.
    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        let a = (6.0 / inputs.max(1) as f64).sqrt();
        let data = (0..inputs * outputs).map(|_| rng.random_range(-a..=a)).collect();
        Self {
            w: Tensor2::from_vec(inputs, outputs, data),
            b: vec![0.0; outputs],
            act,
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn n_params(&self) -> usize {
        self.w.rows() * self.w.cols() + self.b.len()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        if x.cols() != self.inputs() {
            return Err(NnError::ShapeMismatch(format!(
                "layer expects {} inputs, got {}",
                self.inputs(),
                x.cols()
            )));
        }
        let mut z = matmul(x, &self.w);
        for i in 0..z.rows() {
            for (v, &bj) in z.row_mut(i).iter_mut().zip(&self.b) {
                *v = self.act.apply(*v + bj);
            }
        }
        Ok(z)
    }

    /// Given the layer input `x`, its output `y` and `dL/dy`, returns parameter
    /// gradients and `dL/dx`.
    pub fn backward(&self, x: &Tensor2, y: &Tensor2, dy: &Tensor2) -> Result<(DenseGrad, Tensor2), NnError> {
        if dy.shape() != y.shape() || x.rows() != y.rows() {
            return Err(NnError::ShapeMismatch(format!(
                "upstream gradient {:?} vs output {:?}",
                dy.shape(),
                y.shape()
            )));
        }
        let mut dz = dy.clone();
        if self.act != Activation::Identity {
            for (g, &yv) in dz.as_mut_slice().iter_mut().zip(y.as_slice()) {
                *g *= self.act.derivative_from_output(yv);
            }
        }
        let dw = matmul_tn(x, &dz);
        let mut db = vec![0.0; self.outputs()];
        for i in 0..dz.rows() {
            for (acc, &g) in db.iter_mut().zip(dz.row(i)) {
                *acc += g;
            }
        }
        let dx = matmul(&dz, &self.w.transpose());
        Ok((DenseGrad { dw, db }, dx))
    }
}

/// Intermediate activations of a chain; `values[0]` is the input.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub values: Vec<Tensor2>,
}

impl MlpTrace {
    pub fn output(&self) -> &Tensor2 {
        self.values.last().expect("trace holds at least the input")
    }
}

/// A chain of dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self, NnError> {
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(NnError::ShapeMismatch(format!(
                    "layer outputs {} do not feed inputs {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Builds `sizes.len() - 1` layers; `acts[k]` is the activation of layer k.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], acts: &[Activation], rng: &mut R) -> Self {
        assert_eq!(sizes.len(), acts.len() + 1, "one activation per layer");
        let layers = sizes
            .windows(2)
            .zip(acts)
            .map(|(w, &a)| Dense::init(w[0], w[1], a, rng))
            .collect();
        Self { layers }
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<MlpTrace, NnError> {
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(x.clone());
        for layer in &self.layers {
            let y = layer.forward(values.last().unwrap())?;
            values.push(y);
        }
        Ok(MlpTrace { values })
    }

    pub fn predict(&self, x: &Tensor2) -> Result<Tensor2, NnError> {
        let Some((first, rest)) = self.layers.split_first() else {
            return Ok(x.clone());
        };
        let mut cur = first.forward(x)?;
        for layer in rest {
            cur = layer.forward(&cur)?;
        }
        Ok(cur)
    }

    pub fn backward(&self, trace: &MlpTrace, dy: &Tensor2) -> Result<(Vec<DenseGrad>, Tensor2), NnError> {
        if trace.values.len() != self.layers.len() + 1 {
            return Err(NnError::ShapeMismatch("trace does not match network depth".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut upstream = dy.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let (g, dx) = layer.backward(&trace.values[k], &trace.values[k + 1], &upstream)?;
            grads.push(g);
            upstream = dx;
        }
        grads.reverse();
        Ok((grads, upstream))
    }

    /// Parameters in checkpoint order: for each layer, `W` row-major then `b`.
    pub fn write_params(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            out.extend_from_slice(l.w.as_slice());
            out.extend_from_slice(&l.b);
        }
    }

    /// Inverse of [`Mlp::write_params`]; returns the number of values consumed.
    pub fn read_params(&mut self, src: &[f64]) -> Result<usize, NnError> {
        let need = self.n_params();
        if src.len() < need {
            return Err(NnError::ShapeMismatch(format!(
                "need {need} parameters, have {}",
                src.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.rows() * l.w.cols();
            l.w.as_mut_slice().copy_from_slice(&src[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&src[off..off + nb]);
            off += nb;
        }
        Ok(off)
    }
}

/// Flattens gradients in the same order as [`Mlp::write_params`].
pub fn write_grads(grads: &[DenseGrad], out: &mut Vec<f64>) {
    for g in grads {
        out.extend_from_slice(g.dw.as_slice());
        out.extend_from_slice(&g.db);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn loss(net: &Mlp, x: &Tensor2, w: &Tensor2) -> f64 {
        let y = net.predict(x).unwrap();
        y.as_slice().iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn activations_at_reference_points() {
        assert_eq!(Activation::Relu.apply(-3.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Sigmoid.derivative_from_output(0.5), 0.25);
    }

    #[test]
    fn identity_layer_passes_input() {
        let layer = Dense {
            w: Tensor2::identity(3),
            b: vec![0.0; 3],
            act: Activation::Identity,
        };
        let x = Tensor2::from_rows(&[vec![1.0, -2.0, 3.5]]);
        assert_eq!(layer.forward(&x).unwrap(), x);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::init(&[3, 2], &[Activation::Relu], &mut rng);
        let err = net.forward(&Tensor2::zeros(1, 4)).unwrap_err();
        assert!(matches!(err, NnError::ShapeMismatch(_)));
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let layer = Dense {
            w: Tensor2::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]),
            b: vec![0.0, 0.0],
            act: Activation::Identity,
        };
        let x = Tensor2::from_rows(&[vec![0.5, -1.0]]);
        let y = layer.forward(&x).unwrap();
        let g = Tensor2::from_rows(&[vec![2.0, 3.0]]);
        let (grad, dx) = layer.backward(&x, &y, &g).unwrap();
        assert_eq!(grad.dw, Tensor2::from_rows(&[vec![1.0, 1.5], vec![-2.0, -3.0]]));
        assert_eq!(grad.db, vec![2.0, 3.0]);
        assert_eq!(dx, Tensor2::from_rows(&[vec![8.0, 18.0]]));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init(&[2, 4, 1], &[Activation::Relu, Activation::Sigmoid], &mut rng);
        let x = Tensor2::from_rows(&[vec![0.3, -0.7], vec![1.0, 2.0]]);
        let trace = net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&trace, &Tensor2::zeros(2, 1)).unwrap();
        let mut flat = Vec::new();
        write_grads(&grads, &mut flat);
        assert!(flat.iter().all(|&v| v == 0.0));
        assert!(dx.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = Mlp::init(
            &[3, 5, 4, 2],
            &[Activation::Relu, Activation::Sigmoid, Activation::Identity],
            &mut rng,
        );
        let x = Tensor2::from_rows(&[vec![0.2, -0.4, 0.9], vec![-1.1, 0.3, 0.5], vec![0.7, 0.7, -0.2]]);
        let wts = Tensor2::from_rows(&[vec![1.0, -0.5], vec![0.3, 2.0], vec![-1.2, 0.4]]);
        let trace = net.forward(&x).unwrap();
        // Keep away from ReLU kinks so the finite difference is meaningful.
        assert!(trace.values[1].as_slice().iter().all(|v| *v == 0.0 || *v > 1e-3));
        let (grads, dx) = net.backward(&trace, &wts).unwrap();
        let mut analytic = Vec::new();
        write_grads(&grads, &mut analytic);
        let mut params = Vec::new();
        net.write_params(&mut params);
        let h = 1e-5;
        for k in 0..params.len() {
            let mut p = params.clone();
            p[k] += h;
            net.read_params(&p).unwrap();
            let up = loss(&net, &x, &wts);
            p[k] -= 2.0 * h;
            net.read_params(&p).unwrap();
            let down = loss(&net, &x, &wts);
            let fd = (up - down) / (2.0 * h);
            let err = (fd - analytic[k]).abs() / analytic[k].abs().max(fd.abs()).max(1e-6);
            assert!(err <= 1e-4, "param {k}: fd {fd} vs analytic {}", analytic[k]);
        }
        net.read_params(&params).unwrap();
        for k in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[k] += h;
            let up = loss(&net, &xp, &wts);
            xp.as_mut_slice()[k] -= 2.0 * h;
            let down = loss(&net, &xp, &wts);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - dx.as_slice()[k]).abs() <= 1e-4 * fd.abs().max(1e-6));
        }
    }

    #[test]
    fn rows_do_not_depend_on_batch_mates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(&[4, 16, 3], &[Activation::Relu, Activation::Sigmoid], &mut rng);
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect())
            .collect();
        let batch = net.predict(&Tensor2::from_rows(&rows)).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let single = net.predict(&Tensor2::from_rows(&[r.clone()])).unwrap();
            assert_eq!(single.row(0), batch.row(i));
        }
    }
}
