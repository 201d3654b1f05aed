//! Small tanh perceptrons used as the prober encoders and the projection head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{
    dot, l2_normalize_rows_backward, l2_normalize_rows_with_norms, matmul, matmul_nt, matmul_tn, Matrix,
    DEFAULT_NORM_EPS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`
    pub weight: Matrix,
    /// `1 × out`
    pub bias: Matrix,
}

impl Linear {
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Affine layers with tanh between them; the last layer is affine only. The
/// output can optionally be projected onto the unit sphere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub normalize_output: bool,
}

/// Intermediate values from `Mlp::forward` needed by `Mlp::backward`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; entries after the first are tanh outputs.
    inputs: Vec<Matrix>,
    normalized: Option<(Matrix, Vec<f64>)>,
}

/// Adjoints of one layer.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Matrix,
    pub bias: Matrix,
}

/// Random matrix with orthonormal rows (if `rows <= cols`) or columns.
pub(crate) fn semi_orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let (long, short) = if rows <= cols { (cols, rows) } else { (rows, cols) };
    // Gram-Schmidt on `short` random vectors of length `long`.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
    }
    let m = Matrix::from_rows(&basis).expect("equal lengths");
    if rows <= cols {
        m
    } else {
        m.transpose()
    }
}

impl Mlp {
    /// Layers with Gaussian weights of variance `1 / fan_in` and zero bias.
    pub fn gaussian(dims: &[usize], normalize_output: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid layer sizes {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| {
                let scale = 1.0 / (w[0] as f64).sqrt();
                let data = (0..w[0] * w[1])
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Linear {
                    weight: Matrix::from_vec(w[1], w[0], data).expect("sized"),
                    bias: Matrix::zeros(1, w[1]),
                }
            })
            .collect();
        Ok(Mlp {
            layers,
            normalize_output,
        })
    }

    /// A two-layer network `in → hidden → out` that starts close to an isometry
    /// on unit-norm inputs: the first layer has orthonormal columns, the second
    /// maps its range back through a random semi-orthogonal matrix. Small inputs
    /// keep tanh in its linear regime.
    pub fn near_isometric(input: usize, hidden: usize, output: usize, normalize_output: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input == 0 || hidden == 0 || output == 0 {
            return Err(Error::Parameter("layer sizes must be positive".into()));
        }
        let first = semi_orthogonal(hidden, input, rng);
        let mix = semi_orthogonal(output, input, rng);
        let second = matmul_nt(&mix, &first)?;
        Ok(Mlp {
            layers: vec![
                Linear {
                    weight: first,
                    bias: Matrix::zeros(1, hidden),
                },
                Linear {
                    weight: second,
                    bias: Matrix::zeros(1, output),
                },
            ],
            normalize_output,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, MlpCache)> {
        if x.cols() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = matmul_nt(&h, &layer.weight)?;
            a.add_row_broadcast(&layer.bias)?;
            inputs.push(h);
            h = if l < last { a.map(f64::tanh) } else { a };
        }
        let (out, normalized) = if self.normalize_output {
            let (y, norms) = l2_normalize_rows_with_norms(&h, DEFAULT_NORM_EPS)?;
            (y.clone(), Some((y, norms)))
        } else {
            (h, None)
        };
        Ok((out, MlpCache { inputs, normalized }))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Adjoints of every layer and of the input, given the output adjoint.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Matrix) -> Result<(Vec<LayerGrad>, Matrix)> {
        let mut g = match &cache.normalized {
            Some((y, norms)) => l2_normalize_rows_backward(y, norms, grad_out),
            None => grad_out.clone(),
        };
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[l];
            grads.push(LayerGrad {
                weight: matmul_tn(&g, input)?,
                bias: g.col_sums(),
            });
            g = matmul(&g, &layer.weight)?;
            if l > 0 {
                // input to layer l is tanh of the previous pre-activation
                for (gv, &h) in g.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *gv *= 1.0 - h * h;
                }
            }
        }
        grads.reverse();
        Ok((grads, g))
    }

    /// `self ← ω·self + (1−ω)·other`, layer by layer.
    pub fn blend_toward(&mut self, other: &Mlp, omega: f64) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::Dimension("networks differ in depth".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            blend(&mut a.weight, &b.weight, omega)?;
            blend(&mut a.bias, &b.bias, omega)?;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.shape() == b.weight.shape() && a.bias.shape() == b.bias.shape())
    }
}

/// Elementwise `target ← ω·target + (1−ω)·source`.
pub fn blend(target: &mut Matrix, source: &Matrix, omega: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&omega) {
        return Err(Error::Parameter(format!("blend weight must be in [0, 1], got {omega}")));
    }
    target.check_same_shape(source, "blend")?;
    for (t, &s) in target.as_mut_slice().iter_mut().zip(source.as_slice()) {
        *t = omega * *t + (1.0 - omega) * s;
    }
    Ok(())
}
