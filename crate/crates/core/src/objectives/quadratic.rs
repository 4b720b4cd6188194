use rand::Rng;
use rand_distr::StandardNormal;

use super::{check_dim, finite_or_numeric, ClientObjective, HvpKind, MinibatchRef};
use crate::error::{Error, Result};
use crate::paramspace::{DenseMatrix, ParamVector, SeededStream};

/// `fᵢ(x) = ½xᵀAx + bᵀx`, optionally with per-example linear noise.
///
/// Example `j` has objective `½xᵀAx + (b + eⱼ)ᵀx` where the offsets `eⱼ` sum
/// to zero, so the full gradient is exactly `Ax + b` and minibatch gradients
/// over equal-size batches average back to it.
#[derive(Debug, Clone)]
pub struct QuadraticClient {
    id: usize,
    a: DenseMatrix,
    b: ParamVector,
    noise: Vec<Vec<f64>>,
}

impl QuadraticClient {
    pub fn new(id: usize, a: DenseMatrix, b: ParamVector) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() != b.len() {
            return Err(Error::Dimension {
                expected: b.len(),
                got: a.rows(),
            });
        }
        if a.max_asymmetry() > 1e-14 {
            return Err(Error::usage(format!(
                "quadratic client {id}: matrix is not symmetric"
            )));
        }
        Ok(QuadraticClient {
            id,
            a,
            b,
            noise: Vec::new(),
        })
    }

    /// One-dimensional client `½a·x² + b·x`.
    pub fn scalar(id: usize, a: f64, b: f64) -> Result<Self> {
        Self::new(id, DenseMatrix::new(1, 1, vec![a])?, ParamVector::new(vec![b])?)
    }

    /// Attach zero-mean per-example gradient offsets.
    pub fn with_noise(mut self, offsets: Vec<Vec<f64>>) -> Result<Self> {
        let d = self.b.len();
        if offsets.iter().any(|o| o.len() != d) {
            return Err(Error::usage("noise offsets must match the client dimension"));
        }
        let n = offsets.len() as f64;
        for k in 0..d {
            let mean: f64 = offsets.iter().map(|o| o[k]).sum::<f64>() / n;
            let scale = offsets.iter().map(|o| o[k].abs()).fold(1.0, f64::max);
            if mean.abs() > 1e-12 * scale {
                return Err(Error::usage("noise offsets must average to zero"));
            }
        }
        self.noise = offsets;
        Ok(self)
    }

    /// Gaussian offsets with standard deviation `sigma`, centred to sum to zero.
    pub fn with_gaussian_noise(self, examples: usize, sigma: f64, stream: &SeededStream) -> Result<Self> {
        let d = self.b.len();
        let mut rng = stream.rng();
        let mut offsets: Vec<Vec<f64>> = (0..examples)
            .map(|_| (0..d).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        for k in 0..d {
            let mean = offsets.iter().map(|o| o[k]).sum::<f64>() / examples as f64;
            for o in offsets.iter_mut() {
                o[k] -= mean;
            }
        }
        self.with_noise(offsets)
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn offset(&self) -> &ParamVector {
        &self.b
    }
}

impl ClientObjective for QuadraticClient {
    fn id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn num_examples(&self) -> usize {
        self.noise.len().max(1)
    }

    fn value(&self, x: &ParamVector) -> Result<f64> {
        check_dim(self.dim(), x)?;
        let ax = self.a.matvec(x.as_slice())?;
        let quad: f64 = ax.iter().zip(x.as_slice()).map(|(a, b)| a * b).sum();
        let v = 0.5 * quad + self.b.dot(x)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric {
                client: self.id,
                msg: "non-finite value".into(),
            })
        }
    }

    fn grad(&self, x: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), x)?;
        let mut g = self.a.matvec(x.as_slice())?;
        for (gi, bi) in g.iter_mut().zip(self.b.as_slice()) {
            *gi += bi;
        }
        finite_or_numeric(self.id, g, "gradient")
    }

    fn stoch_grad(&self, x: &ParamVector, batch: MinibatchRef<'_>) -> Result<ParamVector> {
        if self.noise.is_empty() {
            return self.grad(x);
        }
        if batch.is_empty() {
            return Err(Error::usage("empty minibatch"));
        }
        check_dim(self.dim(), x)?;
        let mut g = self.a.matvec(x.as_slice())?;
        let inv = 1.0 / batch.len() as f64;
        for (k, gk) in g.iter_mut().enumerate() {
            let mut e = 0.0;
            for &j in batch {
                e += self.noise.get(j).ok_or_else(|| Error::usage("minibatch index out of range"))?[k];
            }
            *gk += self.b[k] + e * inv;
        }
        finite_or_numeric(self.id, g, "stochastic gradient")
    }

    fn hvp(&self, x: &ParamVector, v: &ParamVector) -> Result<ParamVector> {
        check_dim(self.dim(), x)?;
        check_dim(self.dim(), v)?;
        finite_or_numeric(self.id, self.a.matvec(v.as_slice())?, "Hessian-vector product")
    }

    fn hvp_kind(&self) -> HvpKind {
        HvpKind::Analytic
    }
}

/// `n` quadratic clients `Aᵢ = Ā + spread·Sᵢ`, `bᵢ` with mean zero across clients.
///
/// `Ā = MMᵀ/d + I` is positive definite and the symmetric perturbations `Sᵢ`
/// are centred across clients, so the mean objective has Hessian `Ā`.
pub fn make_quadratic_problem(
    n: usize,
    d: usize,
    spread: f64,
    stream: &SeededStream,
) -> Result<Vec<QuadraticClient>> {
    if n == 0 || d == 0 || !(spread >= 0.0) {
        return Err(Error::usage("make_quadratic_problem needs n ≥ 1, d ≥ 1, spread ≥ 0"));
    }
    let mut rng = stream.rng();
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let m: Vec<f64> = (0..d * d).map(|_| normal()).collect();
    let mut base = DenseMatrix::identity(d);
    for r in 0..d {
        for c in 0..d {
            let s: f64 = (0..d).map(|k| m[r * d + k] * m[c * d + k]).sum();
            base.set(r, c, base.get(r, c) + s / d as f64);
        }
    }

    let mut perturb: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut s = vec![0.0; d * d];
            for r in 0..d {
                for c in r..d {
                    let v = normal();
                    s[r * d + c] = v;
                    s[c * d + r] = v;
                }
            }
            s
        })
        .collect();
    let mut offsets: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| normal()).collect()).collect();
    center(&mut perturb);
    center(&mut offsets);

    perturb
        .into_iter()
        .zip(offsets)
        .enumerate()
        .map(|(i, (s, b))| {
            let mut a = base.clone();
            for r in 0..d {
                for c in 0..d {
                    a.set(r, c, base.get(r, c) + spread * s[r * d + c]);
                }
            }
            // restore exact symmetry lost to rounding in the centring step
            for r in 0..d {
                for c in 0..r {
                    a.set(r, c, a.get(c, r));
                }
            }
            QuadraticClient::new(i, a, ParamVector::new(b)?)
        })
        .collect()
}

fn center(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    for k in 0..width {
        let mean = rows.iter().map(|r| r[k]).sum::<f64>() / n;
        for r in rows.iter_mut() {
            r[k] -= mean;
        }
    }
}
