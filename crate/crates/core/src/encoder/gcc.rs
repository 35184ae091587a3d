//! Gaussian-weighted cluster centroids.
//!
//! `e_k = sum_i w_i(s_k) c_i^(k)` where `w` are the RBF weights of the
//! attribute's score and `c_i^(k)` are learnable centroid tokens.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{rbf_weights, rbf_weights_into, AnchorSet, AttributeAnchorSpec};
use crate::tensor::Matrix;
use crate::{Attribute, Error, QualityVector, Result};

/// Learnable centroid tokens: one `N_k x d` block per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidTable {
    dim: usize,
    blocks: Vec<Matrix>,
}

impl CentroidTable {
    pub fn zeros(specs: &AnchorSet, dim: usize) -> Self {
        Self {
            dim,
            blocks: specs.iter().map(|s| Matrix::zeros(s.len(), dim)).collect(),
        }
    }

    /// Entries drawn i.i.d. from `U[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn random<R: Rng + ?Sized>(specs: &AnchorSet, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(dim as f64);
        let blocks = specs
            .iter()
            .map(|s| Matrix::from_fn(s.len(), dim, |_, _| rng.random_range(-bound..=bound)))
            .collect();
        Self { dim, blocks }
    }

    /// Builds a table from explicit blocks in canonical attribute order.
    pub fn from_blocks(dim: usize, blocks: Vec<Matrix>) -> Result<Self> {
        if blocks.len() != Attribute::COUNT {
            return Err(Error::DimensionMismatch {
                context: "centroid table blocks",
                expected: Attribute::COUNT,
                actual: blocks.len(),
            });
        }
        if let Some(b) = blocks.iter().find(|b| b.cols() != dim) {
            return Err(Error::DimensionMismatch {
                context: "centroid width",
                expected: dim,
                actual: b.cols(),
            });
        }
        Ok(Self { dim, blocks })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block(&self, attr: Attribute) -> &Matrix {
        &self.blocks[attr.index()]
    }

    pub fn block_mut(&mut self, attr: Attribute) -> &mut Matrix {
        &mut self.blocks[attr.index()]
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Matrix] {
        &mut self.blocks
    }

    pub(crate) fn check_shape(&self, specs: &AnchorSet) -> Result<()> {
        for spec in specs.iter() {
            let rows = self.block(spec.attribute).rows();
            if rows != spec.len() {
                return Err(Error::DimensionMismatch {
                    context: "centroid rows vs anchors",
                    expected: spec.len(),
                    actual: rows,
                });
            }
        }
        Ok(())
    }
}

/// One `d`-wide embedding per attribute, concatenated in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    dim: usize,
    data: Vec<f64>,
}

impl ConditionEmbedding {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; Attribute::COUNT * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != Attribute::COUNT * dim {
            return Err(Error::DimensionMismatch {
                context: "condition embedding",
                expected: Attribute::COUNT * dim,
                actual: data.len(),
            });
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn attribute(&self, attr: Attribute) -> &[f64] {
        &self.data[attr.index() * self.dim..(attr.index() + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `e_k = sum_i w_i c_i` for a single attribute.
pub fn embed_attribute(
    s_k: f64,
    spec: &AttributeAnchorSpec,
    centroids: &Matrix,
) -> Result<Vec<f64>> {
    if centroids.rows() != spec.len() {
        return Err(Error::DimensionMismatch {
            context: "centroid rows vs anchors",
            expected: spec.len(),
            actual: centroids.rows(),
        });
    }
    let mut out = vec![0.0; centroids.cols()];
    let w = rbf_weights(s_k, spec);
    weighted_sum(&w, centroids, &mut out);
    Ok(out)
}

fn weighted_sum(w: &[f64], centroids: &Matrix, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for (wi, row) in w.iter().zip(centroids.rows_iter()) {
        for (o, c) in out.iter_mut().zip(row) {
            *o += wi * c;
        }
    }
}

/// Embeds all five attributes of `s` (order aes, wat, cla, ent, luma).
pub fn embed_vector(
    s: &QualityVector,
    table: &CentroidTable,
    specs: &AnchorSet,
) -> Result<ConditionEmbedding> {
    table.check_shape(specs)?;
    let mut out = ConditionEmbedding::zeros(table.dim);
    embed_vector_into(s, table, specs, out.as_mut_slice());
    Ok(out)
}

/// Shape-unchecked variant writing into a `5 * d` slice.
pub(crate) fn embed_vector_into(
    s: &QualityVector,
    table: &CentroidTable,
    specs: &AnchorSet,
    out: &mut [f64],
) {
    let d = table.dim;
    let mut w = [0.0; 64];
    for spec in specs.iter() {
        let attr = spec.attribute;
        let block = table.block(attr);
        let w = weight_buffer(&mut w, spec.len());
        rbf_weights_into(s.get(attr), spec, w);
        weighted_sum(w, block, &mut out[attr.index() * d..(attr.index() + 1) * d]);
    }
}

/// Uses the stack buffer when it is large enough.
fn weight_buffer(buf: &mut [f64; 64], n: usize) -> &mut [f64] {
    assert!(
        n <= buf.len(),
        "at most 64 anchors per attribute are supported"
    );
    &mut buf[..n]
}

/// Gradient of a loss with respect to the centroid table, given the upstream
/// gradient with respect to the condition embedding of `s`.
///
/// `d e_k / d c_i = w_i I`, so block `k` receives `w_i * g_k` in row `i`.
pub fn backprop_to_centroids(
    s: &QualityVector,
    specs: &AnchorSet,
    upstream: &ConditionEmbedding,
) -> Result<CentroidTable> {
    let mut grad = CentroidTable::zeros(specs, upstream.dim());
    accumulate_centroid_grad(s, specs, upstream.as_slice(), &mut grad)?;
    Ok(grad)
}

/// Adds the centroid gradient for one sample into `grad`.
pub(crate) fn accumulate_centroid_grad(
    s: &QualityVector,
    specs: &AnchorSet,
    upstream: &[f64],
    grad: &mut CentroidTable,
) -> Result<()> {
    let d = grad.dim;
    if upstream.len() != Attribute::COUNT * d {
        return Err(Error::DimensionMismatch {
            context: "upstream embedding gradient",
            expected: Attribute::COUNT * d,
            actual: upstream.len(),
        });
    }
    grad.check_shape(specs)?;
    let mut w = [0.0; 64];
    for spec in specs.iter() {
        let attr = spec.attribute;
        let g = &upstream[attr.index() * d..(attr.index() + 1) * d];
        let w = weight_buffer(&mut w, spec.len());
        rbf_weights_into(s.get(attr), spec, w);
        let block = grad.block_mut(attr);
        for (i, wi) in w.iter().enumerate() {
            for (gc, gk) in block.row_mut(i).iter_mut().zip(g) {
                *gc += wi * gk;
            }
        }
    }
    Ok(())
}
