//! Multinomial logistic (softmax) regression with cross-entropy loss.

use crate::error::{Error, Result};
use crate::sign_codec::GradientVector;

use super::data::LabeledDataset;

pub const MIN_CLASSES: usize = 2;
pub const MAX_CLASSES: usize = 16;

/// Weights stored feature-major: entry `j * num_classes + k` links feature
/// `j` to class `k`. For MNIST this is 785 x 10 = 7850 parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    num_features: usize,
    num_classes: usize,
    weights: Vec<f64>,
}

/// Mean loss, accuracy and gradient over a dataset at the current weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalPass {
    pub gradient: GradientVector,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

impl SoftmaxModel {
    pub fn zeros(num_features: usize, num_classes: usize) -> Result<Self> {
        if num_features == 0 || !(MIN_CLASSES..=MAX_CLASSES).contains(&num_classes) {
            return Err(Error::invalid(format!(
                "need at least one feature and {MIN_CLASSES}..={MAX_CLASSES} classes"
            )));
        }
        Ok(Self {
            num_features,
            num_classes,
            weights: vec![0.0; num_features * num_classes],
        })
    }

    pub fn from_weights(
        num_features: usize,
        num_classes: usize,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let mut m = Self::zeros(num_features, num_classes)?;
        if weights.len() != m.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: m.weights.len(),
                actual: weights.len(),
            });
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights must be finite"));
        }
        m.weights = weights;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: &GradientVector) -> Result<()> {
        if weights.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: weights.dim(),
            });
        }
        self.weights.copy_from_slice(weights.as_slice());
        Ok(())
    }

    pub fn as_vector(&self) -> GradientVector {
        GradientVector::new(self.weights.clone()).expect("weights are finite and nonempty")
    }

    fn check(&self, ds: &LabeledDataset) -> Result<()> {
        if ds.num_features() != self.num_features || ds.num_classes() != self.num_classes {
            return Err(Error::invalid(format!(
                "model is {}x{} but data is {}x{}",
                self.num_features,
                self.num_classes,
                ds.num_features(),
                ds.num_classes()
            )));
        }
        if ds.is_empty() {
            return Err(Error::invalid("empty dataset"));
        }
        Ok(())
    }

    /// Mean loss and accuracy over `ds`, accumulating the summed (not yet
    /// averaged) gradient into `grad` when given.
    fn sweep<const K: usize>(
        &self,
        ds: &LabeledDataset,
        grad: Option<&mut [f64]>,
    ) -> (f64, usize) {
        let (w, _) = self.weights.as_chunks::<K>();
        let mut g_rows = grad.map(|g| g.as_chunks_mut::<K>().0);
        let (mut loss, mut correct) = (0.0, 0usize);
        for i in 0..ds.len() {
            let y = ds.labels()[i] as usize;
            let (cols, vals) = ds.row(i);
            let mut z = [0.0; K];
            for (&c, &x) in cols.iter().zip(vals) {
                let row = &w[c as usize];
                for k in 0..K {
                    z[k] += x * row[k];
                }
            }
            let mut argmax = 0;
            for k in 1..K {
                if z[k] > z[argmax] {
                    argmax = k;
                }
            }
            correct += usize::from(argmax == y);
            let max = z[argmax];
            let shifted_y = z[y] - max;
            let mut total = 0.0;
            for v in z.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            loss += total.ln() - shifted_y;
            if let Some(g) = g_rows.as_deref_mut() {
                for v in z.iter_mut() {
                    *v /= total;
                }
                z[y] -= 1.0;
                for (&c, &x) in cols.iter().zip(vals) {
                    let row = &mut g[c as usize];
                    for k in 0..K {
                        row[k] += x * z[k];
                    }
                }
            }
        }
        (loss, correct)
    }

    fn dispatch(&self, ds: &LabeledDataset, grad: Option<&mut [f64]>) -> (f64, usize) {
        macro_rules! by_classes {
            ($($k:literal)*) => {
                match self.num_classes {
                    $($k => self.sweep::<$k>(ds, grad),)*
                    _ => unreachable!("class count checked at construction"),
                }
            };
        }
        by_classes!(2 3 4 5 6 7 8 9 10 11 12 13 14 15 16)
    }

    /// Full-batch mean gradient, loss and accuracy over `ds`.
    pub fn local_pass(&self, ds: &LabeledDataset) -> Result<LocalPass> {
        self.check(ds)?;
        let mut grad = vec![0.0; self.weights.len()];
        let (loss, correct) = self.dispatch(ds, Some(&mut grad));
        let n = ds.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok(LocalPass {
            gradient: GradientVector::new(grad)?,
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }

    pub fn evaluate(&self, ds: &LabeledDataset) -> Result<Evaluation> {
        self.check(ds)?;
        let (loss, correct) = self.dispatch(ds, None);
        let n = ds.len() as f64;
        Ok(Evaluation {
            loss: loss / n,
            accuracy: correct as f64 / n,
        })
    }
}

/// Mean cross-entropy gradient of `model` over `ds`.
pub fn local_gradient(model: &SoftmaxModel, ds: &LabeledDataset) -> Result<GradientVector> {
    Ok(model.local_pass(ds)?.gradient)
}
