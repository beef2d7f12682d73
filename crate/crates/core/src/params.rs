//! Named parameter storage and binding into autodiff graphs.

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::autograd::{Graph, Var};
use crate::error::{MadmError, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Parameters keyed by dotted names (`"unet.in.w"`), iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, Arc<Tensor>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.map.insert(name.into(), Arc::new(value));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name).map(|t| t.as_ref())
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.map.get_mut(name).map(Arc::make_mut)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_ref()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.map
            .iter_mut()
            .map(|(k, v)| (k.as_str(), Arc::make_mut(v)))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|t| t.len()).sum()
    }

    /// Entries whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefixes: &[&str]) -> ParamStore {
        ParamStore {
            map: self
                .map
                .iter()
                .filter(|(k, _)| prefixes.iter().any(|p| k.starts_with(p)))
                .map(|(k, v)| (k.clone(), Arc::clone(v)))
                .collect(),
        }
    }

    /// Copies every entry of `other` into `self`, replacing existing names.
    pub fn merge(&mut self, other: &ParamStore) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), Arc::clone(v));
        }
    }

    /// Checks both stores hold the same names with the same shapes.
    pub fn check_congruent(&self, other: &ParamStore) -> Result<()> {
        if self.map.len() != other.map.len() {
            return Err(MadmError::Shape(format!(
                "parameter sets differ in size: {} vs {}",
                self.map.len(),
                other.map.len()
            )));
        }
        for ((ka, va), (kb, vb)) in self.map.iter().zip(&other.map) {
            if ka != kb || va.shape() != vb.shape() {
                return Err(MadmError::Shape(format!(
                    "parameter {ka} {:?} does not match {kb} {:?}",
                    va.shape(),
                    vb.shape()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and exact bit patterns.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.map {
            h.update(k.as_bytes());
            for d in v.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for x in v.data() {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Creates one graph leaf per parameter. Leaves for which `trainable`
    /// returns true require gradients.
    pub fn bind(&self, g: &mut Graph, trainable: impl Fn(&str) -> bool) -> Bound {
        let vars = self
            .map
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(Arc::clone(v), trainable(k))))
            .collect();
        Bound { vars }
    }

    /// Binds everything as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        self.bind(g, |_| false)
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation for a conv layer
    /// `name.w : [cout, cin, k, k]` and `name.b : [cout]`.
    pub fn init_conv(&mut self, rng: &mut SeededRng, name: &str, cin: usize, cout: usize, k: usize) {
        let fan_in = (cin * k * k) as f64;
        let bound = 1.0 / fan_in.sqrt();
        let w: Vec<f64> = (0..cout * cin * k * k)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        let b: Vec<f64> = (0..cout).map(|_| rng.uniform_in(-bound, bound)).collect();
        self.insert(
            format!("{name}.w"),
            Tensor::from_vec(&[cout, cin, k, k], w).expect("sized"),
        );
        self.insert(format!("{name}.b"), Tensor::from_vec(&[cout], b).expect("sized"));
    }

    /// Same scheme for a dense layer `name.w : [out, inp]`, `name.b : [out]`.
    pub fn init_linear(&mut self, rng: &mut SeededRng, name: &str, inp: usize, out: usize) {
        let bound = 1.0 / (inp as f64).sqrt();
        let w: Vec<f64> = (0..out * inp).map(|_| rng.uniform_in(-bound, bound)).collect();
        let b: Vec<f64> = (0..out).map(|_| rng.uniform_in(-bound, bound)).collect();
        self.insert(format!("{name}.w"), Tensor::from_vec(&[out, inp], w).expect("sized"));
        self.insert(format!("{name}.b"), Tensor::from_vec(&[out], b).expect("sized"));
    }
}

/// Graph handles for a bound [`ParamStore`].
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn conv(&self, g: &mut Graph, name: &str, x: Var, stride: usize, pad: usize) -> Var {
        let w = self.var(&format!("{name}.w"));
        let b = self.var(&format!("{name}.b"));
        g.conv2d(x, w, Some(b), stride, pad)
    }

    /// Gradients of every bound parameter that received one.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| g.grad(v).map(|d| (k.clone(), d.to_vec())))
            .collect()
    }
}
