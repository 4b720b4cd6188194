use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_dim, fd_hvp, finite_or_numeric, ClientObjective, HvpKind, MinibatchRef};
use crate::error::{Error, Result};
use crate::paramspace::{DenseMatrix, ParamVector, SeededStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

/// Architecture of a supervised client model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// Multinomial logistic regression.
    Logistic,
    /// Fully connected network with the given hidden widths.
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl ModelSpec {
    /// input → 16 tanh → classes
    pub fn default_mlp() -> Self {
        ModelSpec::Mlp {
            hidden: vec![16],
            activation: Activation::Tanh,
        }
    }
}

/// Parameter layout and forward/backward passes for a [`ModelSpec`].
///
/// Parameters are stored layer by layer, each as a row-major `out × in`
/// weight block followed by `out` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_dim: usize,
    n_classes: usize,
    layers: Vec<(usize, usize)>,
}

impl Model {
    pub fn new(spec: &ModelSpec, input_dim: usize, n_classes: usize) -> Result<Self> {
        if input_dim == 0 || n_classes < 2 {
            return Err(Error::usage("model needs input_dim ≥ 1 and at least 2 classes"));
        }
        let mut widths = vec![input_dim];
        if let ModelSpec::Mlp { hidden, .. } = spec {
            if hidden.contains(&0) {
                return Err(Error::usage("hidden layer widths must be positive"));
            }
            widths.extend_from_slice(hidden);
        }
        widths.push(n_classes);
        let layers = widths.windows(2).map(|w| (w[0], w[1])).collect();
        Ok(Model {
            input_dim,
            n_classes,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|&(i, o)| o * i + o).sum()
    }

    /// Zeros for logistic regression, Glorot-uniform weights for hidden layers.
    pub fn init_params(&self, stream: &SeededStream) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        if self.layers.len() == 1 {
            out.resize(self.param_count(), 0.0);
        } else {
            let mut rng = stream.rng();
            for &(i, o) in &self.layers {
                let limit = (6.0 / (i + o) as f64).sqrt();
                out.extend((0..i * o).map(|_| rng.random_range(-limit..limit)));
                out.extend(std::iter::repeat_n(0.0, o));
            }
        }
        ParamVector::new(out).expect("finite initialisation")
    }

    /// Summed cross-entropy over `idx` and, optionally, its summed gradient.
    fn loss_grad(
        &self,
        params: &[f64],
        features: &DenseMatrix,
        labels: &[usize],
        idx: &mut dyn Iterator<Item = usize>,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for &(i, o) in &self.layers {
            offsets.push(off);
            off += o * i + o;
        }
        let depth = self.layers.len();
        let mut acts: Vec<Vec<f64>> = vec![Vec::new(); depth + 1];
        let mut loss = 0.0;
        let mut grad = grad;

        for e in idx {
            acts[0].clear();
            acts[0].extend_from_slice(features.row(e));
            for (l, &(inp, outp)) in self.layers.iter().enumerate() {
                let w = &params[offsets[l]..offsets[l] + outp * inp];
                let b = &params[offsets[l] + outp * inp..offsets[l] + outp * inp + outp];
                let (prev, rest) = acts.split_at_mut(l + 1);
                let a_in = &prev[l];
                let z = &mut rest[0];
                z.clear();
                for r in 0..outp {
                    let row = &w[r * inp..(r + 1) * inp];
                    let s: f64 = row.iter().zip(a_in).map(|(a, b)| a * b).sum::<f64>() + b[r];
                    z.push(if l + 1 < depth { s.tanh() } else { s });
                }
            }
            let logits = &acts[depth];
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
            let lse = max + sum_exp.ln();
            let y = labels[e];
            loss += lse - logits[y];

            if let Some(g) = grad.as_deref_mut() {
                let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp()).collect();
                delta[y] -= 1.0;
                for l in (0..depth).rev() {
                    let (inp, outp) = self.layers[l];
                    let a_in = &acts[l];
                    let base = offsets[l];
                    for r in 0..outp {
                        let d = delta[r];
                        let gw = &mut g[base + r * inp..base + (r + 1) * inp];
                        for (gv, av) in gw.iter_mut().zip(a_in) {
                            *gv += d * av;
                        }
                        g[base + outp * inp + r] += d;
                    }
                    if l > 0 {
                        let w = &params[base..base + outp * inp];
                        let mut prev = vec![0.0; inp];
                        for r in 0..outp {
                            let d = delta[r];
                            for (p, wv) in prev.iter_mut().zip(&w[r * inp..(r + 1) * inp]) {
                                *p += wv * d;
                            }
                        }
                        for (p, a) in prev.iter_mut().zip(a_in) {
                            *p *= 1.0 - a * a;
                        }
                        delta = prev;
                    }
                }
            }
        }
        loss
    }

    fn logits(&self, params: &[f64], row: &[f64]) -> Vec<f64> {
        let mut a = row.to_vec();
        let mut off = 0;
        for (l, &(inp, outp)) in self.layers.iter().enumerate() {
            let w = &params[off..off + outp * inp];
            let b = &params[off + outp * inp..off + outp * inp + outp];
            off += outp * inp + outp;
            a = (0..outp)
                .map(|r| {
                    let s: f64 = w[r * inp..(r + 1) * inp].iter().zip(&a).map(|(x, y)| x * y).sum::<f64>() + b[r];
                    if l + 1 < self.layers.len() {
                        s.tanh()
                    } else {
                        s
                    }
                })
                .collect();
        }
        a
    }

    pub fn predict(&self, params: &ParamVector, row: &[f64]) -> usize {
        let z = self.logits(params.as_slice(), row);
        let mut best = 0;
        for (k, v) in z.iter().enumerate() {
            if *v > z[best] {
                best = k;
            }
        }
        best
    }

    /// Mean cross-entropy (without weight decay) and accuracy on a labelled set.
    pub fn evaluate(&self, params: &ParamVector, features: &DenseMatrix, labels: &[usize]) -> Result<(f64, f64)> {
        check_dim(self.param_count(), params)?;
        if labels.is_empty() {
            return Ok((0.0, 0.0));
        }
        let loss = self.loss_grad(params.as_slice(), features, labels, &mut (0..labels.len()), None);
        let correct = (0..labels.len())
            .filter(|&e| self.predict(params, features.row(e)) == labels[e])
            .count();
        let n = labels.len() as f64;
        Ok((loss / n, correct as f64 / n))
    }
}

/// A client holding labelled examples and a [`Model`], with loss
/// `mean cross-entropy + (l2_decay/2)·‖x‖²`.
#[derive(Debug, Clone)]
pub struct SupervisedClient {
    id: usize,
    features: DenseMatrix,
    labels: Vec<usize>,
    model: Model,
    l2_decay: f64,
}

impl SupervisedClient {
    pub fn new(id: usize, features: DenseMatrix, labels: Vec<usize>, model: Model, l2_decay: f64) -> Result<Self> {
        if features.rows() != labels.len() || labels.is_empty() {
            return Err(Error::usage(format!(
                "client {id}: need one label per feature row and at least one example"
            )));
        }
        if features.cols() != model.input_dim() {
            return Err(Error::Dimension {
                expected: model.input_dim(),
                got: features.cols(),
            });
        }
        if labels.iter().any(|&y| y >= model.n_classes()) {
            return Err(Error::usage(format!("client {id}: label out of range")));
        }
        if !(l2_decay >= 0.0) {
            return Err(Error::usage("l2_decay must be non-negative"));
        }
        Ok(SupervisedClient {
            id,
            features,
            labels,
            model,
            l2_decay,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn batch_grad(&self, x: &ParamVector, idx: &mut dyn Iterator<Item = usize>, count: usize) -> Result<ParamVector> {
        check_dim(self.dim(), x)?;
        let mut g = vec![0.0; self.dim()];
        self.model
            .loss_grad(x.as_slice(), &self.features, &self.labels, idx, Some(&mut g));
        let inv = 1.0 / count as f64;
        for (gv, xv) in g.iter_mut().zip(x.as_slice()) {
            *gv = *gv * inv + self.l2_decay * xv;
        }
        finite_or_numeric(self.id, g, "gradient")
    }
}

impl ClientObjective for SupervisedClient {
    fn id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        self.model.param_count()
    }

    fn num_examples(&self) -> usize {
        self.labels.len()
    }

    fn value(&self, x: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let n = self.labels.len();
        let ce = self
            .model
            .loss_grad(x.as_slice(), &self.features, &self.labels, &mut (0..n), None);
        let v = ce / n as f64 + 0.5 * self.l2_decay * x.norm_sq();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric {
                client: self.id,
                msg: "non-finite loss".into(),
            })
        }
    }

    fn grad(&self, x: &ParamVector) -> Result<ParamVector> {
        let n = self.labels.len();
        self.batch_grad(x, &mut (0..n), n)
    }

    fn stoch_grad(&self, x: &ParamVector, batch: MinibatchRef<'_>) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::usage("empty minibatch"));
        }
        if batch.iter().any(|&i| i >= self.labels.len()) {
            return Err(Error::usage("minibatch index out of range"));
        }
        self.batch_grad(x, &mut batch.iter().copied(), batch.len())
    }

    fn hvp(&self, x: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        fd_hvp(self, x, v)
    }

    fn hvp_kind(&self) -> HvpKind {
        HvpKind::FiniteDifference
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::fd_grad;
    use rand_distr::StandardNormal;

    fn random_client(spec: &ModelSpec, seed: u64, n: usize, d: usize, c: usize, l2: f64) -> (SupervisedClient, ParamVector) {
        let stream = SeededStream::new(seed);
        let mut rng = stream.derive("data", 0).rng();
        let feats: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
        let model = Model::new(spec, d, c).unwrap();
        let mut x = model.init_params(&stream.derive("init", 0)).into_vec();
        for v in x.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        let client = SupervisedClient::new(0, DenseMatrix::new(n, d, feats).unwrap(), labels, model, l2).unwrap();
        (client, ParamVector::new(x).unwrap())
    }

    fn rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        a.dist(b).unwrap() / b.norm().max(1e-12)
    }

    #[test]
    fn logistic_bias_gradient_vanishes_on_balanced_data_at_origin() {
        let feats = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -0.7], vec![2.0, 1.0]]).unwrap();
        let model = Model::new(&ModelSpec::Logistic, 2, 2).unwrap();
        let c = SupervisedClient::new(0, feats, vec![0, 1, 0, 1], model, 0.1).unwrap();
        let g = c.grad(&ParamVector::zeros(c.dim())).unwrap();
        // layout: W (2×2) then biases
        assert_eq!(g[4], 0.0);
        assert_eq!(g[5], 0.0);
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let (c, x) = random_client(&ModelSpec::default_mlp(), 11, 30, 4, 3, 0.01);
        let g = c.grad(&x).unwrap();
        let fd = fd_grad(&c, &x, 1e-6).unwrap();
        assert!(rel_err(&g, &fd) < 1e-5, "rel err {}", rel_err(&g, &fd));
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let (c, x) = random_client(&ModelSpec::Logistic, 12, 25, 5, 4, 0.05);
        let fd = fd_grad(&c, &x, 1e-6).unwrap();
        assert!(rel_err(&c.grad(&x).unwrap(), &fd) < 1e-5);
    }

    #[test]
    fn logistic_hvp_matches_dense_hessian() {
        let (c, x) = random_client(&ModelSpec::Logistic, 13, 40, 3, 3, 0.02);
        let d = c.dim();
        assert!(d <= 20);
        let h = 1e-5;
        // dense Hessian from central differences of the analytic gradient
        let mut cols = Vec::with_capacity(d);
        for j in 0..d {
            let mut e = vec![0.0; d];
            e[j] = h;
            let e = ParamVector::new(e).unwrap();
            let gp = c.grad(&x.add(&e).unwrap()).unwrap();
            let gm = c.grad(&x.sub(&e).unwrap()).unwrap();
            cols.push(gp.sub(&gm).unwrap().scale(0.5 / h).unwrap());
        }
        let mut rng = SeededStream::new(99).rng();
        let v = ParamVector::new((0..d).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
        let mut dense = vec![0.0; d];
        for j in 0..d {
            for i in 0..d {
                dense[i] += cols[j][i] * v[j];
            }
        }
        let dense = ParamVector::new(dense).unwrap();
        let hv = c.hvp(&x, &v).unwrap();
        assert!(rel_err(&hv, &dense) < 1e-4);
    }

    #[test]
    fn hvp_is_symmetric() {
        for (seed, spec) in [(14, ModelSpec::default_mlp()), (17, ModelSpec::Logistic), (18, ModelSpec::default_mlp())] {
            let (c, x) = random_client(&spec, seed, 20, 3, 2, 0.0);
            let mut rng = SeededStream::new(seed).derive("probe", 0).rng();
            let mut draw = || ParamVector::new((0..c.dim()).map(|_| rng.sample(StandardNormal)).collect()).unwrap();
            for _ in 0..5 {
                let (u, v) = (draw(), draw());
                let hu = c.hvp(&x, &u).unwrap();
                let a = v.dot(&hu).unwrap();
                let b = u.dot(&c.hvp(&x, &v).unwrap()).unwrap();
                // relative to the Cauchy–Schwarz bound on either product
                let scale = (v.norm() * hu.norm()).max(a.abs());
                assert!((a - b).abs() <= 1e-10 * scale, "{a} vs {b}");
            }
            assert_eq!(c.hvp(&x, &ParamVector::zeros(c.dim())).unwrap().norm(), 0.0);
        }
    }

    #[test]
    fn epoch_of_minibatches_averages_to_full_gradient() {
        let (c, x) = random_client(&ModelSpec::default_mlp(), 15, 24, 3, 3, 0.1);
        let grads: Vec<ParamVector> = (0..4)
            .map(|b| c.stoch_grad(&x, &(6 * b..6 * b + 6).collect::<Vec<_>>()).unwrap())
            .collect();
        let avg = crate::paramspace::mean_reduce(&grads).unwrap();
        let g = c.grad(&x).unwrap();
        assert!(rel_err(&avg, &g) < 1e-9);
    }

    #[test]
    fn full_batch_stochastic_gradient_equals_gradient() {
        let (c, x) = random_client(&ModelSpec::Logistic, 16, 10, 2, 2, 0.0);
        let all: Vec<usize> = (0..10).collect();
        assert!(c.stoch_grad(&x, &all).unwrap().bit_eq(&c.grad(&x).unwrap()));
    }

    #[test]
    fn rejects_mismatched_input() {
        let model = Model::new(&ModelSpec::Logistic, 3, 2).unwrap();
        let feats = DenseMatrix::zeros(2, 2);
        assert!(SupervisedClient::new(0, feats, vec![0, 1], model, 0.0).is_err());
    }
}
