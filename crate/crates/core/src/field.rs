use crate::error::{Error, Result};
use crate::scalar::Scalar;
use num_complex::Complex64;

/// Grid function stored level-major: `data[n * nodes + k]`. Spatial fields
/// have a single level and `spatial == true`.
#[derive(Clone, Debug, PartialEq)]
pub struct Field<T = f64> {
    nodes: usize,
    levels: usize,
    spatial: bool,
    data: Vec<T>,
}

pub type ComplexField = Field<Complex64>;

impl<T: Scalar> Field<T> {
    pub fn zeros(nodes: usize, levels: usize) -> Self {
        Field {
            nodes,
            levels,
            spatial: false,
            data: vec![T::zero(); nodes * levels],
        }
    }

    pub fn spatial(values: Vec<T>) -> Self {
        Field {
            nodes: values.len(),
            levels: 1,
            spatial: true,
            data: values,
        }
    }

    pub fn constant(nodes: usize, levels: usize, c: T) -> Self {
        Field {
            nodes,
            levels,
            spatial: false,
            data: vec![c; nodes * levels],
        }
    }

    pub fn from_levels(levels: Vec<Vec<T>>, spatial: bool) -> Self {
        let nodes = levels.first().map_or(0, Vec::len);
        let n = levels.len();
        let data: Vec<T> = levels.into_iter().flatten().collect();
        assert_eq!(data.len(), nodes * n, "ragged levels");
        Field {
            nodes,
            levels: n,
            spatial: spatial && n == 1,
            data,
        }
    }

    pub fn from_raw(nodes: usize, levels: usize, spatial: bool, data: Vec<T>) -> Result<Self> {
        if data.len() != nodes * levels || (spatial && levels != 1) {
            return Err(Error::Data(format!(
                "{} values do not fit {nodes} nodes x {levels} levels",
                data.len()
            )));
        }
        Ok(Field {
            nodes,
            levels,
            spatial,
            data,
        })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn is_spatial(&self) -> bool {
        self.spatial
    }

    pub fn level(&self, n: usize) -> &[T] {
        &self.data[n * self.nodes..(n + 1) * self.nodes]
    }

    pub fn level_mut(&mut self, n: usize) -> &mut [T] {
        &mut self.data[n * self.nodes..(n + 1) * self.nodes]
    }

    pub fn set_level(&mut self, n: usize, v: &[T]) {
        self.level_mut(n).copy_from_slice(v);
    }

    pub fn values(&self) -> &[T] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Scalar, F: Fn(T) -> U>(&self, f: F) -> Field<U> {
        Field {
            nodes: self.nodes,
            levels: self.levels,
            spatial: self.spatial,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map<F: Fn(T, T) -> T>(&self, other: &Field<T>, f: F) -> Field<T> {
        assert_eq!(self.data.len(), other.data.len());
        Field {
            nodes: self.nodes,
            levels: self.levels,
            spatial: self.spatial,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn sub(&self, other: &Field<T>) -> Field<T> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field<T>) -> Field<T> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, s: f64) -> Field<T> {
        self.map(|a| a * s)
    }

    pub fn max_abs(&self) -> f64 {
        crate::scalar::max_abs(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Solver(format!("{what} contains non-finite entries")))
        }
    }

    /// Reverse the level order (t ↦ T − t on a uniform time grid).
    pub fn time_reversed(&self) -> Field<T> {
        let levels = (0..self.levels).rev().map(|n| self.level(n).to_vec()).collect();
        Field::from_levels(levels, self.spatial)
    }
}

impl Field<f64> {
    pub fn to_complex(&self) -> ComplexField {
        self.map(|x| Complex64::new(x, 0.0))
    }
}

impl ComplexField {
    pub fn re(&self) -> Field<f64> {
        self.map(|z| z.re)
    }

    pub fn im(&self) -> Field<f64> {
        self.map(|z| z.im)
    }

    pub fn conj(&self) -> ComplexField {
        self.map(|z| z.conj())
    }
}

/// `value = exp(log_envelope) * oscillator` node-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredField {
    pub log_envelope: Field<f64>,
    pub oscillator: ComplexField,
}

/// Largest envelope exponent that may be materialized.
pub const MAX_LOG_MAGNITUDE: f64 = 700.0;

impl FactoredField {
    pub fn new(log_envelope: Field<f64>, oscillator: ComplexField) -> Result<Self> {
        if log_envelope.values().len() != oscillator.values().len() {
            return Err(Error::Domain("envelope and oscillator shapes differ".into()));
        }
        Ok(FactoredField {
            log_envelope,
            oscillator,
        })
    }

    /// Envelope that depends on the time level only.
    pub fn with_time_envelope(log_env: &[f64], oscillator: ComplexField) -> Self {
        let nodes = oscillator.nodes();
        let levels = log_env.iter().map(|&l| vec![l; nodes]).collect();
        FactoredField {
            log_envelope: Field::from_levels(levels, false),
            oscillator,
        }
    }

    pub fn nodes(&self) -> usize {
        self.oscillator.nodes()
    }

    pub fn levels(&self) -> usize {
        self.oscillator.levels()
    }

    pub fn value(&self, n: usize, k: usize) -> Complex64 {
        let l = self.log_envelope.level(n)[k];
        self.oscillator.level(n)[k] * l.exp()
    }

    /// Materialize the product; refuses envelopes beyond `e^700`.
    pub fn unfactored(&self) -> Result<ComplexField> {
        let worst = self.log_envelope.values().iter().fold(f64::MIN, |a, &b| a.max(b));
        if worst > MAX_LOG_MAGNITUDE {
            return Err(Error::Range(format!(
                "envelope e^{worst:.1} overflows; keep the factored representation"
            )));
        }
        Ok(self.oscillator.zip_map(&self.log_envelope.to_complex(), |z, l| z * l.re.exp()))
    }

    pub fn add_oscillator(&self, other: &ComplexField) -> FactoredField {
        FactoredField {
            log_envelope: self.log_envelope.clone(),
            oscillator: self.oscillator.add(other),
        }
    }
}
