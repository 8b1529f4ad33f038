//! Fully connected network with ELU hidden layers and hand-written backprop.
//!
//! Weights are stored `(fan_in, fan_out)` so a batch `X` of shape
//! `(batch, fan_in)` maps to `X W + b`.

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

/// Element type for network tensors (`f32` for training, `f64` for checks).
pub trait Scalar:
    LinalgScalar + ScalarOperand + Float + FromPrimitive + Debug + Default + Send + Sync + 'static
{
    fn of(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub fn elu<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        x
    } else {
        x.exp_m1()
    }
}

pub fn elu_grad<F: Scalar>(x: F) -> F {
    if x > F::zero() {
        F::one()
    } else {
        x.exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Layer<F> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<F> {
    pub layers: Vec<Layer<F>>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache<F> {
    /// Input to each layer.
    inputs: Vec<Array2<F>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Array2<F>>,
}

impl<F: Scalar> Mlp<F> {
    /// `sizes = [input, hidden.., output]`.
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        Self {
            layers: sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform fan-in init `±sqrt(1/fan_in)` with zero biases; the output
    /// layer is further scaled by `output_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(sizes);
        let n = mlp.layers.len();
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let bound = (1.0 / layer.fan_in() as f64).sqrt();
            let scale = if i + 1 == n { output_scale } else { 1.0 };
            layer
                .weight
                .mapv_inplace(|_| F::of(rng.gen_range(-bound..bound) * scale));
        }
        mlp
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width()];
        s.extend(self.layers.iter().map(Layer::fan_out));
        s
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch {
                expected: self.input_width(),
                found: x.ncols(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if i + 1 < n {
                h.mapv_inplace(elu);
            }
        }
        Ok(h)
    }

    pub fn forward_cached(&self, x: ArrayView2<F>) -> Result<(Array2<F>, MlpCache<F>)> {
        self.check_input(&x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n - 1);
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            if i + 1 < n {
                h = z.mapv(elu);
                pre.push(z);
            } else {
                h = z;
            }
        }
        Ok((h, MlpCache { inputs, pre }))
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient with respect to the network output.
    pub fn backward(&self, cache: &MlpCache<F>, grad_output: &Array2<F>) -> Mlp<F> {
        let n = self.layers.len();
        let mut grads = Vec::with_capacity(n);
        let mut delta = grad_output.clone();
        for i in (0..n).rev() {
            let input = &cache.inputs[i];
            // `t().dot` may produce a column-major result; parameters are
            // always kept in standard layout so they can be viewed as slices.
            let weight = input.t().dot(&delta).as_standard_layout().into_owned();
            let bias = delta.sum_axis(Axis(0));
            grads.push(Layer { weight, bias });
            if i > 0 {
                let mut upstream = delta.dot(&self.layers[i].weight.t());
                Zip::from(&mut upstream)
                    .and(&cache.pre[i - 1])
                    .for_each(|g, &z| *g = *g * elu_grad(z));
                delta = upstream;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    /// Parameter tensors in a fixed order: per layer, weight then bias.
    pub fn tensors(&self) -> Vec<&[F]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                if !l.weight.is_standard_layout() {
                    l.weight = l.weight.as_standard_layout().into_owned();
                }
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<G: Scalar>(&self) -> Mlp<G> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: l.weight.mapv(|x| G::of(x.as_f64())),
                    bias: l.bias.mapv(|x| G::of(x.as_f64())),
                })
                .collect(),
        }
    }
}
