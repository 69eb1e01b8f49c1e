//! Learned attribute indexes.
//!
//! Each attribute label is one-hot encoded, pushed through an eight-layer
//! MLP and L2-normalized; the resulting unit vector positions the attribute
//! along the attribute axis of the field. Pairwise |cosine| between indexes
//! is penalized to keep attributes disentangled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mlp::{Activation, Mlp, MlpCache};

pub const INDEXER_DEPTH: usize = 8;
pub const INDEXER_WIDTH: usize = 64;
/// Keeps activations O(1) through the tanh stack.
pub const INDEXER_GAIN: f64 = 5.0 / 3.0;

pub const DEFAULT_ATTRIBUTES: [&str; 11] = [
    "Outer", "Top", "Skirts", "Dress", "Pants", "Rompers", "Hats", "Glasses", "Body", "Shoes", "Haircut",
];

/// Ordered, unique attribute names.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttributeCatalog {
    names: Vec<String>,
}

impl Default for AttributeCatalog {
    fn default() -> Self {
        Self {
            names: DEFAULT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AttributeCatalog {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config("a catalog needs at least two attributes".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Config("empty attribute name".into()));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate attribute `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, label: usize) -> &str {
        &self.names[label]
    }

    pub fn label(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::UnknownAttribute(name.to_string()))
    }

    /// Parse a comma-separated list of names into labels.
    pub fn parse_list(&self, csv: &str) -> Result<Vec<usize>> {
        csv.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| self.label(s))
            .collect()
    }
}

/// A unit-norm attribute index.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeIndex {
    vector: Vec<f64>,
    label: usize,
}

impl AttributeIndex {
    /// Normalize `raw`; fails if its norm is below `1e-12`.
    pub fn from_raw(label: usize, raw: &[f64]) -> Result<Self> {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::DegenerateIndex { label, norm });
        }
        Ok(Self {
            vector: raw.iter().map(|v| v / norm).collect(),
            label,
        })
    }

    pub fn vector(&self) -> &[f64] {
        &self.vector
    }

    pub fn label(&self) -> usize {
        self.label
    }
}

/// Eight dense layers mapping a one-hot label to a raw index vector.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexerMlp {
    pub mlp: Mlp,
}

impl IndexerMlp {
    pub fn new(labels: usize, attr_dim: usize, seed: u64) -> Self {
        Self::with_width(labels, attr_dim, INDEXER_WIDTH, seed)
    }

    pub fn with_width(labels: usize, attr_dim: usize, width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut widths = vec![labels];
        widths.extend(std::iter::repeat_n(width, INDEXER_DEPTH - 1));
        widths.push(attr_dim);
        Self {
            mlp: Mlp::gaussian_with_gain(&widths, Activation::Tanh, INDEXER_GAIN, &mut rng),
        }
    }

    pub fn from_mlp(mlp: Mlp) -> Result<Self> {
        mlp.validate()?;
        if mlp.layers.len() != INDEXER_DEPTH {
            return Err(Error::Shape(format!(
                "indexer needs {INDEXER_DEPTH} layers, got {}",
                mlp.layers.len()
            )));
        }
        Ok(Self { mlp })
    }

    pub fn labels(&self) -> usize {
        self.mlp.input_width()
    }

    pub fn attr_dim(&self) -> usize {
        self.mlp.output_width()
    }

    fn one_hot(&self, label: usize) -> Result<Vec<f64>> {
        let n = self.labels();
        if label >= n {
            return Err(Error::LabelOutOfRange { label, len: n });
        }
        let mut x = vec![0.0; n];
        x[label] = 1.0;
        Ok(x)
    }

    pub fn forward(&self, label: usize) -> Result<AttributeIndex> {
        let x = self.one_hot(label)?;
        AttributeIndex::from_raw(label, &self.mlp.forward(&x))
    }

    /// Forward pass keeping intermediates for [`IndexerMlp::backward`].
    pub fn forward_cached(&self, label: usize, cache: &mut MlpCache) -> Result<AttributeIndex> {
        let x = self.one_hot(label)?;
        let raw = self.mlp.forward_cached(&x, cache).to_vec();
        AttributeIndex::from_raw(label, &raw)
    }

    /// Indexes of every label in catalog order.
    pub fn all(&self) -> Result<Vec<AttributeIndex>> {
        (0..self.labels()).map(|l| self.forward(l)).collect()
    }

    /// Back-propagate a gradient on the normalized index through the
    /// normalization and the network.
    pub fn backward(&self, cache: &MlpCache, index: &AttributeIndex, grad_index: &[f64], grad_params: &mut [f64]) {
        let raw = cache.output();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = index.vector();
        let along: f64 = a.iter().zip(grad_index).map(|(x, g)| x * g).sum();
        let g_raw: Vec<f64> = grad_index.iter().zip(a).map(|(g, x)| (g - x * along) / norm).collect();
        self.mlp.backward(cache, &g_raw, grad_params, None);
    }
}

/// `a_i = norm(I(onehot(label)))`.
pub fn index_forward(mlp: &IndexerMlp, label: usize) -> Result<AttributeIndex> {
    mlp.forward(label)
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Orthogonal projection penalty: sum of |cos| over unordered pairs.
pub fn opr_loss(indexes: &[AttributeIndex]) -> f64 {
    let v: Vec<&[f64]> = indexes.iter().map(AttributeIndex::vector).collect();
    opr_loss_with_grad(&v).0
}

/// Penalty and its gradient with respect to each input vector.
pub fn opr_loss_with_grad(vectors: &[&[f64]]) -> (f64, Vec<Vec<f64>>) {
    let n = vectors.len();
    let mut grads: Vec<Vec<f64>> = vectors.iter().map(|v| vec![0.0; v.len()]).collect();
    if n < 2 {
        return (0.0, grads);
    }
    let norms: Vec<f64> = vectors
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut loss = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (vectors[i], vectors[j]);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let c = dot / (norms[i] * norms[j]);
            loss += c.abs();
            let s = if c > 0.0 {
                1.0
            } else if c < 0.0 {
                -1.0
            } else {
                0.0
            };
            if s == 0.0 {
                continue;
            }
            // d cos / d a = b / (|a||b|) - cos a / |a|^2
            for k in 0..a.len() {
                grads[i][k] += s * (b[k] / (norms[i] * norms[j]) - c * a[k] / (norms[i] * norms[i]));
                grads[j][k] += s * (a[k] / (norms[i] * norms[j]) - c * b[k] / (norms[j] * norms[j]));
            }
        }
    }
    (loss, grads)
}

/// Symmetric matrix of pairwise cosine similarities.
pub fn cosine_matrix(indexes: &[AttributeIndex]) -> Vec<Vec<f64>> {
    let n = indexes.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        m[i][i] = 1.0;
        for j in i + 1..n {
            let c = cosine(indexes[i].vector(), indexes[j].vector());
            m[i][j] = c;
            m[j][i] = c;
        }
    }
    m
}

/// Largest off-diagonal |cos| among the indexes.
pub fn max_abs_cosine(indexes: &[AttributeIndex]) -> f64 {
    let m = cosine_matrix(indexes);
    let mut best = 0.0f64;
    for (i, row) in m.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            if i != j {
                best = best.max(c.abs());
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Dense;

    fn unit(label: usize, v: &[f64]) -> AttributeIndex {
        AttributeIndex::from_raw(label, v).unwrap()
    }

    #[test]
    fn forward_is_unit_norm_and_deterministic() {
        let a = IndexerMlp::new(11, 16, 5);
        let b = IndexerMlp::new(11, 16, 5);
        for l in 0..11 {
            let ia = a.forward(l).unwrap();
            let n: f64 = ia.vector().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
            assert_eq!(ia, b.forward(l).unwrap());
        }
        assert_ne!(a.forward(0).unwrap().vector(), a.forward(1).unwrap().vector());
        assert_eq!(a.mlp.layers.len(), 8);
    }

    #[test]
    fn three_four_five_normalization() {
        // Eight layers of width 3; every hidden layer passes x through tanh,
        // so only the output layer carries the value (biases 3 and 4).
        let mut layers = vec![Dense::zeros(2, 3)];
        for _ in 0..6 {
            layers.push(Dense::zeros(3, 3));
        }
        let mut last = Dense::zeros(3, 3);
        last.bias = vec![3.0, 4.0, 0.0];
        layers.push(last);
        let idx = IndexerMlp::from_mlp(Mlp {
            layers,
            activation: Activation::Tanh,
        })
        .unwrap();
        let a = idx.forward(1).unwrap();
        assert!((a.vector()[0] - 0.6).abs() < 1e-15);
        assert!((a.vector()[1] - 0.8).abs() < 1e-15);
        assert_eq!(a.vector()[2], 0.0);
    }

    #[test]
    fn zero_output_is_degenerate() {
        let mut layers = vec![Dense::zeros(2, 3)];
        for _ in 0..7 {
            layers.push(Dense::zeros(3, 3));
        }
        let idx = IndexerMlp::from_mlp(Mlp {
            layers,
            activation: Activation::Tanh,
        })
        .unwrap();
        assert!(matches!(idx.forward(0), Err(Error::DegenerateIndex { .. })));
        assert!(matches!(idx.forward(2), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn opr_examples() {
        let e1 = unit(0, &[1.0, 0.0, 0.0]);
        let e2 = unit(1, &[0.0, 1.0, 0.0]);
        let d = unit(2, &[1.0, 1.0, 0.0]);
        assert_eq!(opr_loss(&[e1.clone(), e2.clone()]), 0.0);
        assert!((opr_loss(&[e1.clone(), e1.clone()]) - 1.0).abs() < 1e-15);
        let expected = 2.0 / 2f64.sqrt();
        assert!((opr_loss(&[e1.clone(), e2, d]) - expected).abs() < 1e-12);
        assert_eq!(opr_loss(&[e1]), 0.0);
    }

    #[test]
    fn cosine_matrix_examples() {
        let e = [unit(0, &[1.0, 0.0, 0.0]), unit(1, &[0.0, 0.0, 1.0])];
        assert_eq!(cosine_matrix(&e[..1]), vec![vec![1.0]]);
        assert_eq!(cosine_matrix(&e), vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let idx = IndexerMlp::new(5, 8, 1).all().unwrap();
        let m = cosine_matrix(&idx);
        for i in 0..5 {
            for j in 0..5 {
                let dot: f64 = idx[i].vector().iter().zip(idx[j].vector()).map(|(a, b)| a * b).sum();
                assert!((m[i][j] - dot.clamp(-1.0, 1.0)).abs() < 1e-12);
                assert_eq!(m[i][j], m[j][i]);
            }
        }
    }

    #[test]
    fn opr_gradient_matches_finite_differences() {
        let vs = vec![vec![0.3, -0.2, 0.9], vec![0.5, 0.5, -0.1], vec![-0.4, 0.8, 0.3]];
        let refs: Vec<&[f64]> = vs.iter().map(Vec::as_slice).collect();
        let (_, g) = opr_loss_with_grad(&refs);
        let h = 1e-6;
        for i in 0..3 {
            for k in 0..3 {
                let mut p = vs.clone();
                p[i][k] += h;
                let up = opr_loss_with_grad(&p.iter().map(Vec::as_slice).collect::<Vec<_>>()).0;
                p[i][k] -= 2.0 * h;
                let dn = opr_loss_with_grad(&p.iter().map(Vec::as_slice).collect::<Vec<_>>()).0;
                assert!(((up - dn) / (2.0 * h) - g[i][k]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn catalog_validation() {
        assert_eq!(AttributeCatalog::default().len(), 11);
        assert!(AttributeCatalog::new(vec!["A".into()]).is_err());
        assert!(AttributeCatalog::new(vec!["A".into(), "A".into()]).is_err());
        let c = AttributeCatalog::default();
        assert_eq!(c.parse_list("Body, Top").unwrap(), vec![8, 1]);
        assert!(matches!(c.parse_list("Cape"), Err(Error::UnknownAttribute(_))));
    }
}
