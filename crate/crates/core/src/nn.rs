//! Parameter storage and the two layer types the model is built from.

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub type ParamId = usize;

/// Which update group a parameter belongs to. Decoder groups can be frozen
/// for a step by the decoder-update mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Shared,
    Decoder(usize),
}

impl ParamGroup {
    pub(crate) fn code(self) -> i32 {
        match self {
            ParamGroup::Shared => -1,
            ParamGroup::Decoder(k) => k as i32,
        }
    }

    pub(crate) fn from_code(code: i32) -> Self {
        if code < 0 {
            ParamGroup::Shared
        } else {
            ParamGroup::Decoder(code as usize)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<S> {
    pub name: String,
    pub group: ParamGroup,
    pub value: Matrix<S>,
}

/// Flat, ordered collection of named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<S> {
    entries: Vec<ParamEntry<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, value: Matrix<S>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(ParamEntry { name, group, value });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix<S> {
        &self.entries[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<S> {
        &mut self.entries[id].value
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.entries[id].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), group: e.group, value: e.value.cast() })
                .collect(),
        }
    }

    /// Overwrites values from `other`, which must have the same layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) -> Result<(), String> {
        if self.entries.len() != other.entries.len() {
            return Err(format!(
                "parameter count mismatch: expected {}, found {}",
                self.entries.len(),
                other.entries.len()
            ));
        }
        for (mine, theirs) in self.entries.iter_mut().zip(&other.entries) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(format!(
                    "parameter layout mismatch at {}: expected {:?}, found {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                ));
            }
            mine.value = theirs.value.clone();
            mine.group = theirs.group;
        }
        Ok(())
    }
}

/// Uniform fan-in initialization, `U(-1/√fan_in, 1/√fan_in)`.
pub(crate) fn uniform_matrix<S: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, bound: f64) -> Matrix<S> {
    let data = (0..rows * cols).map(|_| S::lit(rng.gen_range(-bound..=bound))).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), group, uniform_matrix(rng, inputs, outputs, bound));
        let bias = store.add(format!("{name}.bias"), group, uniform_matrix(rng, 1, outputs, bound));
        Self { weight, bias, inputs, outputs }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// One-hidden-layer perceptron: `Linear → ReLU → Linear`.
#[derive(Debug, Clone, Copy)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        rng: &mut R,
        name: &str,
        group: ParamGroup,
        inputs: usize,
        hidden: usize,
        outputs: usize,
    ) -> Self {
        Self {
            hidden: Linear::new(store, rng, &format!("{name}.0"), group, inputs, hidden),
            output: Linear::new(store, rng, &format!("{name}.1"), group, hidden, outputs),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<'_, S>, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        self.output.forward(tape, h)
    }
}
