use vis_autodiff::{Expr, Shape, Tape};

use crate::{Result, VisError};

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Shape,
    pub values: Vec<f64>,
}

/// Named, ordered parameter values living outside any tape.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a parameter.
    pub fn insert(&mut self, name: &str, values: Vec<f64>, shape: impl Into<Shape>) {
        let shape = shape.into();
        assert_eq!(values.len(), shape.numel(), "parameter `{name}` size");
        let p = Param { name: name.to_string(), shape, values };
        match self.entries.iter_mut().find(|e| e.name == name) {
            Some(e) => *e = p,
            None => self.entries.push(p),
        }
    }

    pub fn with(mut self, name: &str, values: Vec<f64>, shape: impl Into<Shape>) -> Self {
        self.insert(name, values, shape);
        self
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.values.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|e| e.values.len()).sum()
    }

    pub fn snapshot(&self) -> Vec<(String, Vec<f64>)> {
        self.entries.iter().map(|e| (e.name.clone(), e.values.clone())).collect()
    }

    /// Registers every parameter as a variable on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        let exprs = self
            .entries
            .iter()
            .map(|e| tape.var(&e.name, e.values.clone(), e.shape.clone()))
            .collect();
        Bound { names: self.entries.iter().map(|e| e.name.clone()).collect(), exprs }
    }
}

/// Parameters bound to one tape, in store order.
pub struct Bound<'t> {
    names: Vec<String>,
    exprs: Vec<Expr<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Expr<'t>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.exprs[i])
            .ok_or_else(|| VisError::config(format!("no parameter named `{name}`")))
    }

    pub fn exprs(&self) -> &[Expr<'t>] {
        &self.exprs
    }
}
