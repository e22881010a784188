use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainError;

pub const HIDDEN_WIDTH: usize = 256;

/// Two ReLU hidden layers and a scalar linear output.
///
/// Also used as the container for gradients and optimizer moments, which
/// share the parameter shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array2<f64>,
    pub b3: Array1<f64>,
}

pub type Gradients = MlpModel;

/// Activations kept from the forward pass for backpropagation.
struct Tape {
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    out: Array1<f64>,
}

fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

fn relu(z: &Array2<f64>) -> Array2<f64> {
    z.mapv(|v| v.max(0.0))
}

impl MlpModel {
    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(input_dim: usize, seed: u64) -> Self {
        MlpModel::init_with_width(input_dim, HIDDEN_WIDTH, seed)
    }

    pub fn init_with_width(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut he = |fan_in: usize, fan_out: usize| {
            let bound = (6.0 / fan_in.max(1) as f64).sqrt();
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-bound..bound))
        };
        MlpModel {
            w1: he(input_dim, hidden),
            b1: Array1::zeros(hidden),
            w2: he(hidden, hidden),
            b2: Array1::zeros(hidden),
            w3: he(hidden, 1),
            b3: Array1::zeros(1),
        }
    }

    pub fn zeros_like(other: &MlpModel) -> Self {
        MlpModel {
            w1: Array2::zeros(other.w1.raw_dim()),
            b1: Array1::zeros(other.b1.raw_dim()),
            w2: Array2::zeros(other.w2.raw_dim()),
            b2: Array1::zeros(other.b2.raw_dim()),
            w3: Array2::zeros(other.w3.raw_dim()),
            b3: Array1::zeros(other.b3.raw_dim()),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn hidden_width(&self) -> usize {
        self.w1.ncols()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Parameter tensors in a fixed order: w1, b1, w2, b2, w3, b3.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
            self.w3.as_slice().expect("standard layout"),
            self.b3.as_slice().expect("standard layout"),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("standard layout"),
            self.b1.as_slice_mut().expect("standard layout"),
            self.w2.as_slice_mut().expect("standard layout"),
            self.b2.as_slice_mut().expect("standard layout"),
            self.w3.as_slice_mut().expect("standard layout"),
            self.b3.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, features: &ArrayView2<'_, f64>) -> Result<(), TrainError> {
        if features.ncols() != self.input_dim() {
            return Err(TrainError::DimensionMismatch(format!(
                "features have width {}, model expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &ArrayView2<'_, f64>) -> Tape {
        let z1 = x.dot(&self.w1) + &self.b1;
        let a1 = relu(&z1);
        let z2 = a1.dot(&self.w2) + &self.b2;
        let a2 = relu(&z2);
        let out = (a2.dot(&self.w3) + &self.b3).column(0).to_owned();
        Tape { z1, a1, z2, a2, out }
    }

    /// Normalized-space predictions, one per row.
    pub fn forward(&self, features: ArrayView2<'_, f64>) -> Result<Array1<f64>, TrainError> {
        self.check_input(&features)?;
        Ok(self.run(&features).out)
    }

    /// Mean squared error and its gradient with respect to every parameter.
    pub fn loss_and_grad(
        &self,
        features: ArrayView2<'_, f64>,
        targets: &[f64],
    ) -> Result<(f64, Gradients), TrainError> {
        self.check_input(&features)?;
        if features.nrows() != targets.len() {
            return Err(TrainError::DimensionMismatch(format!(
                "{} rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if targets.is_empty() {
            return Err(TrainError::EmptyData("loss over zero rows".into()));
        }
        let n = targets.len() as f64;
        let tape = self.run(&features);
        let resid: Array1<f64> = &tape.out - &ndarray::aview1(targets);
        let loss = resid.iter().map(|r| r * r).sum::<f64>() / n;

        let dout = (resid * (2.0 / n)).insert_axis(Axis(1));
        let gw3 = tape.a2.t().dot(&dout);
        let gb3 = dout.sum_axis(Axis(0));
        let mut dz2 = dout.dot(&self.w3.t());
        Zip::from(&mut dz2).and(&tape.z2).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        let gw2 = tape.a1.t().dot(&dz2);
        let gb2 = dz2.sum_axis(Axis(0));
        let mut dz1 = dz2.dot(&self.w2.t());
        Zip::from(&mut dz1).and(&tape.z1).for_each(|d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        let gw1 = features.t().dot(&dz1);
        let gb1 = dz1.sum_axis(Axis(0));
        Ok((
            loss,
            MlpModel {
                w1: standard(gw1),
                b1: gb1,
                w2: standard(gw2),
                b2: gb2,
                w3: standard(gw3),
                b3: gb3,
            },
        ))
    }
}
