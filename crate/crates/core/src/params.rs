//! Named parameter storage shared by every learnable component.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// What a parameter tensor is used for. Pruning only touches `Weight`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    /// Linear, convolution and transposed-convolution kernels.
    Weight,
    Bias,
    /// Scale/shift maps of adaptive instance normalization.
    AdaIn,
    /// Learnable positional-embedding parameters.
    Embedding,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::Weight => 0,
            ParamKind::Bias => 1,
            ParamKind::AdaIn => 2,
            ParamKind::Embedding => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ParamKind::Weight,
            1 => ParamKind::Bias,
            2 => ParamKind::AdaIn,
            3 => ParamKind::Embedding,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub path: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub data: Vec<f64>,
}

/// Parameters ordered by path. The order is stable and is the order used for
/// serialization, gradient vectors and pruning tie-breaks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn from_params(mut params: Vec<Param>) -> Result<Self> {
        params.sort_by(|a, b| a.path.cmp(&b.path));
        let mut index = HashMap::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            if p.shape.iter().product::<usize>() != p.data.len() {
                return Err(Error::invalid(format!("parameter `{}` has inconsistent shape", p.path)));
            }
            if index.insert(p.path.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate parameter `{}`", p.path)));
            }
        }
        Ok(ParamStore { params, index })
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn position(&self, path: &str) -> Option<usize> {
        self.index.get(path).copied()
    }

    pub fn get(&self, path: &str) -> Option<&Param> {
        self.position(path).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Param> {
        self.position(path).map(move |i| &mut self.params[i])
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Registers every parameter on the tape as a borrowed, differentiable leaf.
    pub fn bind<'s>(&'s self, tape: &mut Tape<'s>) -> Result<Bound<'s>> {
        let vars = self
            .params
            .iter()
            .map(|p| tape.param(&p.shape, &p.data))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bound { store: self, vars })
    }

    pub fn zeros_like(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.data.len()]).collect()
    }
}

/// Tape handles of a bound [`ParamStore`].
pub struct Bound<'s> {
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl Bound<'_> {
    pub fn var(&self, path: &str) -> Result<Var> {
        self.store
            .position(path)
            .map(|i| self.vars[i])
            .ok_or_else(|| Error::invalid(format!("unknown parameter `{path}`")))
    }

    pub fn has(&self, path: &str) -> bool {
        self.store.position(path).is_some()
    }

    /// Moves gradients out of the tape into `acc`, aligned with store order.
    pub fn accumulate_grads(&self, tape: &mut Tape, acc: &mut [Vec<f64>]) -> Result<()> {
        for (slot, &v) in acc.iter_mut().zip(&self.vars) {
            if let Some(g) = tape.grad(v)? {
                for (a, b) in slot.iter_mut().zip(g) {
                    *a += b;
                }
            }
        }
        Ok(())
    }
}

/// Collects parameters under a path prefix during model construction.
pub struct ParamBuilder<'r, R: Rng> {
    rng: &'r mut R,
    prefix: String,
    params: Vec<Param>,
}

impl<'r, R: Rng> ParamBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        ParamBuilder {
            rng,
            prefix: String::new(),
            params: Vec::new(),
        }
    }

    pub fn path(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        }
    }

    /// Runs `f` with `name` appended to the current prefix.
    pub fn scope<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let saved = std::mem::take(&mut self.prefix);
        self.prefix = if saved.is_empty() {
            name.to_string()
        } else {
            format!("{saved}.{name}")
        };
        let out = f(self);
        self.prefix = saved;
        out
    }

    /// Uniform `[−1/√fan_in, 1/√fan_in]` initialization.
    pub fn uniform(&mut self, name: &str, shape: &[usize], fan_in: usize, kind: ParamKind) {
        self.uniform_scaled(name, shape, fan_in, 1.0, kind);
    }

    /// [`Self::uniform`] with the bound multiplied by `gain`.
    pub fn uniform_scaled(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        gain: f64,
        kind: ParamKind,
    ) {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.push(name, shape, kind, data);
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], value: f64, kind: ParamKind) {
        let n = shape.iter().product();
        self.push(name, shape, kind, vec![value; n]);
    }

    fn push(&mut self, name: &str, shape: &[usize], kind: ParamKind, data: Vec<f64>) {
        let path = self.path(name);
        self.params.push(Param {
            path,
            shape: shape.to_vec(),
            kind,
            data,
        });
    }

    pub fn finish(self) -> Result<ParamStore> {
        ParamStore::from_params(self.params)
    }
}
