//! Node-sampled fields over a [`GridDomain`] and the sup-norm reports used by
//! every certificate.

use crate::domain::GridDomain;
use crate::error::{LuzinError, Result};

/// Vector field sampled at every grid node, components interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledVectorField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl SampledVectorField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        let expect = domain.node_count() * domain.dim();
        if values.len() != expect {
            return Err(LuzinError::DimensionMismatch { expected: expect, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LuzinError::Parse("non-finite sample".into()));
        }
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: GridDomain) -> Self {
        let len = domain.node_count() * domain.dim();
        Self { domain, values: vec![0.0; len] }
    }

    /// Build from a closure evaluated at node positions.
    pub fn from_fn(domain: GridDomain, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let n = domain.dim();
        let total = domain.node_count();
        let mut values = vec![0.0; total * n];
        for node in 0..total {
            let pos = domain.node_position(&domain.node_multi_index(node));
            let v = f(&pos);
            assert_eq!(v.len(), n);
            values[node * n..(node + 1) * n].copy_from_slice(&v);
        }
        Self { domain, values }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, node: usize) -> &[f64] {
        let n = self.domain.dim();
        &self.values[node * n..(node + 1) * n]
    }

    pub fn set(&mut self, node: usize, v: &[f64]) {
        let n = self.domain.dim();
        self.values[node * n..(node + 1) * n].copy_from_slice(v);
    }

    pub fn magnitude(&self, node: usize) -> f64 {
        self.get(node).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Sup over all nodes of the Euclidean sample length (the X-norm).
    pub fn sup_magnitude(&self) -> f64 {
        (0..self.domain.node_count())
            .map(|i| self.magnitude(i))
            .fold(0.0, f64::max)
    }

    /// Sup restricted to nodes flagged in `node_mask`.
    pub fn sup_magnitude_on(&self, node_mask: &[bool]) -> f64 {
        assert_eq!(node_mask.len(), self.domain.node_count());
        (0..self.domain.node_count())
            .filter(|&i| node_mask[i])
            .map(|i| self.magnitude(i))
            .fold(0.0, f64::max)
    }

    /// Componentwise discrete integral: sum of samples times h^N.
    pub fn integral(&self) -> Vec<f64> {
        let n = self.domain.dim();
        let hv = self.domain.cell_volume();
        let mut acc = vec![0.0; n];
        for node in 0..self.domain.node_count() {
            for (a, c) in self.get(node).iter().enumerate() {
                acc[a] += c;
            }
        }
        for a in acc.iter_mut() {
            *a *= hv;
        }
        acc
    }

    /// Per-cell max of sample magnitudes over the cell's corner nodes.
    ///
    /// Cell predicates like `|v| > lambda` use this, which is conservative for
    /// measure bounds.
    pub fn cell_max_magnitude(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.domain.cell_count()];
        for cell in 0..self.domain.cell_count() {
            let m = self
                .domain
                .cell_corner_nodes(cell)
                .into_iter()
                .map(|nd| self.magnitude(nd))
                .fold(0.0, f64::max);
            out[cell] = m;
        }
        out
    }

    /// Multilinear interpolation at an arbitrary point. Clamps to the node grid.
    pub fn interpolate(&self, x: &[f64]) -> Vec<f64> {
        let n = self.domain.dim();
        let h = self.domain.spacing();
        let nd = self.domain.node_dims();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let u = (x[a] - self.domain.origin()[a]) / h;
            let mut i = u.floor();
            if i < 0.0 {
                i = 0.0;
            }
            let max_base = (nd[a] - 2) as f64;
            if i > max_base {
                i = max_base;
            }
            base[a] = i as usize;
            frac[a] = (u - i).clamp(0.0, 1.0);
        }
        let mut out = vec![0.0; n];
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = vec![0usize; n];
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + bit;
            }
            if w == 0.0 {
                continue;
            }
            let node = self.domain.node_index(&idx);
            for (o, c) in out.iter_mut().zip(self.get(node)) {
                *o += w * c;
            }
        }
        out
    }

    /// Discrete Lipschitz constant: max over node pairs adjacent along an axis
    /// of |df| / h.
    pub fn discrete_lipschitz(&self) -> f64 {
        let n = self.domain.dim();
        let nd = self.domain.node_dims();
        let h = self.domain.spacing();
        let mut best: f64 = 0.0;
        for node in 0..self.domain.node_count() {
            let idx = self.domain.node_multi_index(node);
            for a in 0..n {
                if idx[a] + 1 < nd[a] {
                    let mut jdx = idx.clone();
                    jdx[a] += 1;
                    let other = self.domain.node_index(&jdx);
                    let d: f64 = self
                        .get(node)
                        .iter()
                        .zip(self.get(other))
                        .map(|(p, q)| (p - q) * (p - q))
                        .sum::<f64>()
                        .sqrt();
                    best = best.max(d / h);
                }
            }
        }
        best
    }
}

/// Scalar field sampled at nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledScalarField {
    domain: GridDomain,
    values: Vec<f64>,
}

impl SampledScalarField {
    pub fn new(domain: GridDomain, values: Vec<f64>) -> Result<Self> {
        let expect = domain.node_count();
        if values.len() != expect {
            return Err(LuzinError::DimensionMismatch { expected: expect, got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LuzinError::Parse("non-finite sample".into()));
        }
        Ok(Self { domain, values })
    }

    pub fn zeros(domain: GridDomain) -> Self {
        let len = domain.node_count();
        Self { domain, values: vec![0.0; len] }
    }

    pub fn from_fn(domain: GridDomain, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let total = domain.node_count();
        let mut values = vec![0.0; total];
        for node in 0..total {
            let pos = domain.node_position(&domain.node_multi_index(node));
            values[node] = f(&pos);
        }
        Self { domain, values }
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn sup(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    pub fn interpolate(&self, x: &[f64]) -> f64 {
        // reuse the vector path with a single component
        let n = self.domain.dim();
        let h = self.domain.spacing();
        let nd = self.domain.node_dims();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for a in 0..n {
            let u = (x[a] - self.domain.origin()[a]) / h;
            let mut i = u.floor();
            if i < 0.0 {
                i = 0.0;
            }
            let max_base = (nd[a] - 2) as f64;
            if i > max_base {
                i = max_base;
            }
            base[a] = i as usize;
            frac[a] = (u - i).clamp(0.0, 1.0);
        }
        let mut out = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = vec![0usize; n];
            for a in 0..n {
                let bit = (corner >> a) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                idx[a] = base[a] + bit;
            }
            if w != 0.0 {
                out += w * self.values[self.domain.node_index(&idx)];
            }
        }
        out
    }
}

/// Sup-norm report with the convention `c1 = sup + grad_sup`, making the
/// norm-equivalence constant exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormReport {
    /// Sup of |phi| (the Z-norm).
    pub sup_norm: f64,
    /// Sup of |grad phi| (Euclidean length).
    pub grad_sup_norm: f64,
    /// Y-norm: sup_norm + grad_sup_norm, exactly.
    pub c1_norm: f64,
    /// X-norm of a vector field: sup of Euclidean sample lengths.
    pub x_norm: f64,
}

/// Norm-equivalence constant for the (sup, sup + grad-sup) convention.
pub const C0: f64 = 1.0;

/// Norms of a sampled vector field over its domain nodes.
pub fn norms_vector(field: &SampledVectorField) -> Result<NormReport> {
    if field.domain().is_empty() {
        return Err(LuzinError::EmptyDomain);
    }
    let node_mask = field.domain().node_mask();
    let x = field.sup_magnitude_on(&node_mask);
    Ok(NormReport { sup_norm: 0.0, grad_sup_norm: 0.0, c1_norm: 0.0, x_norm: x })
}

/// Norms of a scalar field (Z-norm only).
pub fn norms_scalar(field: &SampledScalarField) -> Result<NormReport> {
    if field.domain().is_empty() {
        return Err(LuzinError::EmptyDomain);
    }
    let s = field.sup();
    Ok(NormReport { sup_norm: s, grad_sup_norm: 0.0, c1_norm: s, x_norm: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_norms() {
        let d = GridDomain::unit_square(8);
        let f = SampledVectorField::zeros(d);
        let r = norms_vector(&f).unwrap();
        assert_eq!(r.x_norm, 0.0);
    }

    #[test]
    fn constant_field_x_norm() {
        let d = GridDomain::unit_square(8);
        let f = SampledVectorField::from_fn(d, |_| vec![3.0, 4.0]);
        let r = norms_vector(&f).unwrap();
        assert_eq!(r.x_norm, 5.0);
    }

    #[test]
    fn empty_domain_errors() {
        let d = GridDomain::unit_square(4);
        let empty = d.with_mask(vec![false; 16]);
        let f = SampledVectorField::zeros(empty);
        assert!(matches!(norms_vector(&f), Err(LuzinError::EmptyDomain)));
    }

    #[test]
    fn interpolation_reproduces_linear() {
        let d = GridDomain::unit_square(16);
        let f = SampledVectorField::from_fn(d, |x| vec![2.0 * x[0] - x[1], x[1]]);
        let v = f.interpolate(&[0.3712, 0.6401]);
        assert!((v[0] - (2.0 * 0.3712 - 0.6401)).abs() < 1e-12);
        assert!((v[1] - 0.6401).abs() < 1e-12);
    }

    #[test]
    fn integral_of_constant() {
        let d = GridDomain::unit_square(10);
        let f = SampledVectorField::from_fn(d, |_| vec![2.0, -1.0]);
        let i = f.integral();
        // 11^2 nodes * h^2 = 1.21
        assert!((i[0] - 2.0 * 1.21).abs() < 1e-12);
        assert!((i[1] + 1.21).abs() < 1e-12);
    }
}
