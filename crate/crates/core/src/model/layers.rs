//! Parameter storage and the dense building blocks of the network.

use crate::error::{Error, Result};
use crate::noise::{NoiseStream, Role};
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Named parameter arrays in a fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub(crate) fn push(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    /// Replaces every array, checking names and shapes against the current
    /// layout.
    pub fn assign(&mut self, names: &[String], tensors: Vec<Tensor<T>>) -> Result<()> {
        if names != self.names.as_slice() || tensors.len() != self.tensors.len() {
            return Err(Error::ConfigMismatch("parameter names differ from the model layout".into()));
        }
        for (i, t) in tensors.iter().enumerate() {
            if t.shape() != self.tensors[i].shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    self.names[i],
                    t.shape(),
                    self.tensors[i].shape()
                )));
            }
        }
        self.tensors = tensors;
        Ok(())
    }

    /// Records every array on `tape` (as trainable leaves when `trainable`).
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: bool) -> Bound<'t, T> {
        let vars = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on a tape, indexed like their [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound<'t, T: Scalar> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    pub fn var(&self, index: usize) -> Var<'t, T> {
        self.vars[index]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// How a layer's weights start out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    FanIn,
    Zero,
}

/// Builds parameter arrays with reproducible initial values.
pub(crate) struct Builder<'a, T> {
    pub store: &'a mut ParamStore<T>,
    pub seed: u64,
}

impl<T: Scalar> Builder<'_, T> {
    fn uniform(&mut self, shape: &[usize], bound: f64) -> Tensor<T> {
        let index = self.store.len() as u64;
        let mut s = NoiseStream::new(self.seed, 0, index, Role::Init);
        Tensor::from_fn(shape, |_| {
            let u: f64 = s.uniform();
            T::lit((2.0 * u - 1.0) * bound)
        })
    }

    pub fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, init: Init) -> Linear {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (w, b) = match init {
            Init::FanIn => (self.uniform(&[fan_in, fan_out], bound), self.uniform(&[fan_out], bound)),
            Init::Zero => (Tensor::zeros(&[fan_in, fan_out]), Tensor::zeros(&[fan_out])),
        };
        Linear {
            w: self.store.push(format!("{name}.w"), w),
            b: self.store.push(format!("{name}.b"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn mlp(&mut self, name: &str, fan_in: usize, hidden: usize, fan_out: usize, last: Init) -> Mlp {
        Mlp {
            hidden: self.linear(&format!("{name}.0"), fan_in, hidden, Init::FanIn),
            out: self.linear(&format!("{name}.1"), hidden, fan_out, last),
        }
    }

    pub fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> Lstm {
        let bound = 1.0 / (hidden as f64).sqrt();
        let wx = self.uniform(&[input, 4 * hidden], bound);
        let wh = self.uniform(&[hidden, 4 * hidden], bound);
        // gate order: input, forget, cell, output; forget bias starts at 1
        let b = Tensor::from_fn(&[4 * hidden], |i| {
            if (hidden..2 * hidden).contains(&i) {
                T::one()
            } else {
                T::zero()
            }
        });
        Lstm {
            wx: self.store.push(format!("{name}.wx"), wx),
            wh: self.store.push(format!("{name}.wh"), wh),
            b: self.store.push(format!("{name}.b"), b),
            input,
            hidden,
        }
    }
}

/// `x · W + b` on `[batch, fan_in]` inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    w: usize,
    b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.matmul(p.var(self.w))?.add(p.var(self.b))
    }

    /// Index of the bias array in the store.
    pub fn bias_index(&self) -> usize {
        self.b
    }
}

/// Two dense layers with a ReLU in between and a linear output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn forward<'t, T: Scalar>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let h = self.hidden.forward(p, x)?.relu();
        self.out.forward(p, h)
    }
}

/// Hidden and cell state of an [`Lstm`].
#[derive(Debug, Clone, Copy)]
pub struct LstmState<'t, T: Scalar> {
    pub h: Var<'t, T>,
    pub c: Var<'t, T>,
}

/// Single-layer LSTM cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    wx: usize,
    wh: usize,
    b: usize,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn zero_state<'t, T: Scalar>(&self, tape: &'t Tape<T>, batch: usize) -> LstmState<'t, T> {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, self.hidden])),
            c: tape.constant(Tensor::zeros(&[batch, self.hidden])),
        }
    }

    pub fn step<'t, T: Scalar>(
        &self,
        p: &Bound<'t, T>,
        x: Var<'t, T>,
        state: LstmState<'t, T>,
    ) -> Result<LstmState<'t, T>> {
        let gates = x
            .matmul(p.var(self.wx))?
            .add(state.h.matmul(p.var(self.wh))?)?
            .add(p.var(self.b))?;
        let n = self.hidden;
        let i = gates.slice(1, 0, n)?.sigmoid();
        let f = gates.slice(1, n, n)?.sigmoid();
        let g = gates.slice(1, 2 * n, n)?.tanh();
        let o = gates.slice(1, 3 * n, n)?.sigmoid();
        let c = f.mul(state.c)?.add(i.mul(g)?)?;
        let h = o.mul(c.tanh())?;
        Ok(LstmState { h, c })
    }
}
