//! Grid-backed open domains with exact Lebesgue-measure accounting.
//!
//! A domain is a cell mask on a uniform grid: the open set is the interior of
//! the union of included cells. Measure is an exact integer count times h^N,
//! so every budget downstream is integer arithmetic scaled once.

use crate::error::{LuzinError, Result};

/// Open set in R^N represented as a cell mask over a uniform grid.
///
/// Cells are indexed row-major with the first axis slowest. Cell `k` spans
/// `origin + k*h .. origin + (k+1)*h` per axis. Nodes are cell corners; the
/// node grid has `dims[a] + 1` entries per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDomain {
    origin: Vec<f64>,
    dims: Vec<usize>,
    h: f64,
    mask: Vec<bool>,
}

impl GridDomain {
    pub fn new(origin: Vec<f64>, dims: Vec<usize>, h: f64, mask: Vec<bool>) -> Result<Self> {
        let n = origin.len();
        if n < 2 {
            return Err(LuzinError::DimensionMismatch { expected: 2, got: n });
        }
        if dims.len() != n {
            return Err(LuzinError::DimensionMismatch { expected: n, got: dims.len() });
        }
        let cells: usize = dims.iter().product();
        if mask.len() != cells {
            return Err(LuzinError::DimensionMismatch { expected: cells, got: mask.len() });
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(LuzinError::Parse(format!("invalid spacing {h}")));
        }
        Ok(Self { origin, dims, h, mask })
    }

    /// Full box: every cell included.
    pub fn full_box(origin: Vec<f64>, dims: Vec<usize>, h: f64) -> Result<Self> {
        let cells: usize = dims.iter().product();
        Self::new(origin, dims, h, vec![true; cells])
    }

    /// The unit square at `cells` per axis (2-D convenience used all over the tests).
    pub fn unit_square(cells: usize) -> Self {
        Self::full_box(vec![0.0, 0.0], vec![cells, cells], 1.0 / cells as f64)
            .expect("unit square is valid")
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cell_dims(&self) -> &[usize] {
        &self.dims
    }

    /// Node counts per axis (`dims + 1`).
    pub fn node_dims(&self) -> Vec<usize> {
        self.dims.iter().map(|&d| d + 1).collect()
    }

    pub fn cell_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn node_count(&self) -> usize {
        self.node_dims().iter().product()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn included_cells(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.iter().all(|&b| !b)
    }

    /// Flat index of a cell from its multi-index.
    pub fn cell_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        for (a, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.dims[a]);
            flat = flat * self.dims[a] + i;
        }
        flat
    }

    pub fn cell_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let n = self.dim();
        let mut idx = vec![0usize; n];
        for a in (0..n).rev() {
            idx[a] = flat % self.dims[a];
            flat /= self.dims[a];
        }
        idx
    }

    pub fn node_index(&self, idx: &[usize]) -> usize {
        let nd = self.node_dims();
        let mut flat = 0;
        for (a, &i) in idx.iter().enumerate() {
            debug_assert!(i < nd[a]);
            flat = flat * nd[a] + i;
        }
        flat
    }

    pub fn node_multi_index(&self, mut flat: usize) -> Vec<usize> {
        let nd = self.node_dims();
        let n = self.dim();
        let mut idx = vec![0usize; n];
        for a in (0..n).rev() {
            idx[a] = flat % nd[a];
            flat /= nd[a];
        }
        idx
    }

    /// Physical position of a node. Exact for dyadic spacings.
    pub fn node_position(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(a, &i)| self.origin[a] + self.h * i as f64)
            .collect()
    }

    /// Volume of one cell, h^N.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim() as i32)
    }

    /// Lebesgue measure of the domain: included cells times h^N.
    pub fn measure(&self) -> f64 {
        self.included_cells() as f64 * self.cell_volume()
    }

    /// Measure of a sub-mask. The mask must be a subset of the domain's cells.
    pub fn measure_of_mask(&self, mask: &[bool]) -> f64 {
        assert_eq!(mask.len(), self.mask.len(), "mask shape mismatch");
        debug_assert!(
            mask.iter().zip(&self.mask).all(|(&m, &d)| !m || d),
            "mask cells must be included in the domain"
        );
        mask.iter().filter(|&&b| b).count() as f64 * self.cell_volume()
    }

    /// Replace the mask, keeping grid geometry.
    pub fn with_mask(&self, mask: Vec<bool>) -> Self {
        assert_eq!(mask.len(), self.mask.len());
        Self { origin: self.origin.clone(), dims: self.dims.clone(), h: self.h, mask }
    }

    /// The corner-node flat indices of a cell.
    pub fn cell_corner_nodes(&self, cell: usize) -> Vec<usize> {
        let idx = self.cell_multi_index(cell);
        let n = self.dim();
        let mut out = Vec::with_capacity(1 << n);
        for corner in 0..(1usize << n) {
            let node_idx: Vec<usize> =
                (0..n).map(|a| idx[a] + ((corner >> a) & 1)).collect();
            out.push(self.node_index(&node_idx));
        }
        out
    }

    /// True when the node (by flat index) is a corner of at least one included cell.
    pub fn node_in_domain(&self, node: usize) -> bool {
        let nidx = self.node_multi_index(node);
        let n = self.dim();
        // enumerate up to 2^N incident cells
        for corner in 0..(1usize << n) {
            let mut ok = true;
            let mut cidx = vec![0usize; n];
            for a in 0..n {
                let off = (corner >> a) & 1;
                if nidx[a] < off || nidx[a] - off >= self.dims[a] {
                    ok = false;
                    break;
                }
                cidx[a] = nidx[a] - off;
            }
            if ok && self.mask[self.cell_index(&cidx)] {
                return true;
            }
        }
        false
    }

    /// Per-node inclusion flags (corner of some included cell).
    pub fn node_mask(&self) -> Vec<bool> {
        let total = self.node_count();
        let mut out = vec![false; total];
        // mark corners of included cells; cheaper than querying per node
        for cell in 0..self.cell_count() {
            if self.mask[cell] {
                for node in self.cell_corner_nodes(cell) {
                    out[node] = true;
                }
            }
        }
        out
    }

    /// Squared distance (in cell units) from each cell to the complement of the
    /// domain, where the complement includes everything outside the bounding box.
    ///
    /// Distance is the exact Euclidean box-to-region distance: per-axis gaps
    /// `max(0, |di| - 1)`, realized as an exact integer EDT over the complement
    /// dilated by one cell in each axis.
    pub fn complement_distance_sq_cells(&self) -> Vec<i64> {
        // pad by one ring so the exterior acts as complement
        let n = self.dim();
        let pdims: Vec<usize> = self.dims.iter().map(|&d| d + 2).collect();
        let ptotal: usize = pdims.iter().product();
        let mut source = vec![false; ptotal];

        let to_flat = |idx: &[usize]| -> usize {
            let mut f = 0;
            for (a, &i) in idx.iter().enumerate() {
                f = f * pdims[a] + i;
            }
            f
        };

        // complement cells (padded coordinates are shifted by +1)
        let mut idx = vec![0usize; n];
        loop {
            let inside = self.mask[self.cell_index(&idx)];
            if !inside {
                let pidx: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
                source[to_flat(&pidx)] = true;
            }
            if !increment(&mut idx, &self.dims) {
                break;
            }
        }
        // exterior ring
        let mut pidx = vec![0usize; n];
        loop {
            if pidx.iter().enumerate().any(|(a, &i)| i == 0 || i == pdims[a] - 1) {
                source[to_flat(&pidx)] = true;
            }
            if !increment(&mut pidx, &pdims) {
                break;
            }
        }

        // dilate sources by one cell in the box sense (3^N structuring element),
        // which turns centre-to-centre distance into box-to-box distance
        let dilated = dilate_box(&source, &pdims);

        let dist_sq = exact_edt_sq(&dilated, &pdims);

        // read back interior cells
        let mut out = vec![0i64; self.cell_count()];
        let mut idx = vec![0usize; n];
        loop {
            let pidx: Vec<usize> = idx.iter().map(|&i| i + 1).collect();
            out[self.cell_index(&idx)] = dist_sq[to_flat(&pidx)];
            if !increment(&mut idx, &self.dims) {
                break;
            }
        }
        out
    }

    /// The shrunken domain `{x in Omega : dist(x, complement) > a}` realized per
    /// cell: a cell stays iff its box distance to the complement is >= a, which
    /// makes every interior point of a kept cell lie strictly deeper than `a`.
    pub fn shrink(&self, a: f64) -> Self {
        assert!(a >= 0.0, "shrink distance must be nonnegative");
        if a == 0.0 {
            return self.clone();
        }
        let dist_sq = self.complement_distance_sq_cells();
        let h2 = self.h * self.h;
        let a2 = a * a;
        let mask: Vec<bool> = self
            .mask
            .iter()
            .zip(&dist_sq)
            .map(|(&inc, &d2)| inc && (d2 as f64) * h2 >= a2)
            .collect();
        self.with_mask(mask)
    }

    /// Check that another domain shares this grid (geometry, not mask).
    pub fn same_grid(&self, other: &GridDomain) -> bool {
        self.origin == other.origin && self.dims == other.dims && self.h == other.h
    }
}

/// Advance a multi-index in row-major order; false when exhausted.
pub(crate) fn increment(idx: &mut [usize], dims: &[usize]) -> bool {
    for a in (0..idx.len()).rev() {
        idx[a] += 1;
        if idx[a] < dims[a] {
            return true;
        }
        idx[a] = 0;
    }
    false
}

/// Box dilation by one cell (Chebyshev radius 1).
fn dilate_box(mask: &[bool], dims: &[usize]) -> Vec<bool> {
    let n = dims.len();
    let mut cur = mask.to_vec();
    // separable: dilate along one axis at a time
    for a in 0..n {
        let mut next = cur.clone();
        let stride: usize = dims[a + 1..].iter().product();
        let total: usize = dims.iter().product();
        for flat in 0..total {
            if cur[flat] {
                let coord = (flat / stride) % dims[a];
                if coord > 0 {
                    next[flat - stride] = true;
                }
                if coord + 1 < dims[a] {
                    next[flat + stride] = true;
                }
            }
        }
        cur = next;
    }
    cur
}

/// Exact squared Euclidean distance transform (integer lattice), sources at 0.
///
/// Felzenszwalb-Huttenlocher lower-envelope scan applied axis by axis.
fn exact_edt_sq(source: &[bool], dims: &[usize]) -> Vec<i64> {
    const INF: i64 = i64::MAX / 4;
    let total: usize = dims.iter().product();
    let mut f: Vec<i64> = source.iter().map(|&s| if s { 0 } else { INF }).collect();
    let n = dims.len();

    for a in 0..n {
        let len = dims[a];
        let stride: usize = dims[a + 1..].iter().product();
        let lines = total / len;
        let mut line = vec![0i64; len];
        let mut d = vec![0i64; len];
        let mut v = vec![0usize; len];
        let mut z = vec![0f64; len + 1];
        for li in 0..lines {
            // base offset of this line
            let outer = li / stride;
            let inner = li % stride;
            let base = outer * len * stride + inner;
            for i in 0..len {
                line[i] = f[base + i * stride];
            }
            dt_1d(&line, &mut d, &mut v, &mut z);
            for i in 0..len {
                f[base + i * stride] = d[i];
            }
        }
    }
    f
}

/// 1-D squared-distance transform via the parabola lower envelope.
fn dt_1d(f: &[i64], d: &mut [i64], v: &mut [usize], z: &mut [f64]) {
    const INF: i64 = i64::MAX / 4;
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sq = |x: i64| x * x;
    for q in 1..n {
        if f[q] >= INF && f[v[k]] >= INF {
            // both parabolas at infinity: keep the earlier one
            continue;
        }
        loop {
            let p = v[k];
            // intersection of parabolas rooted at p and q
            let s = if f[q] >= INF {
                f64::INFINITY
            } else if f[p] >= INF {
                f64::NEG_INFINITY
            } else {
                ((f[q] - f[p] + sq(q as i64) - sq(p as i64)) as f64) / (2.0 * (q as f64 - p as f64))
            };
            if s <= z[k] {
                if k == 0 {
                    v[0] = q;
                    z[0] = f64::NEG_INFINITY;
                    z[1] = f64::INFINITY;
                    break;
                }
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    let mut k2 = 0usize;
    for q in 0..n {
        while z[k2 + 1] < q as f64 {
            k2 += 1;
        }
        let p = v[k2];
        d[q] = if f[p] >= INF { INF } else { f[p] + sq(q as i64 - p as i64) };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn measure_full_unit_square() {
        let d = GridDomain::unit_square(64);
        assert_eq!(d.measure(), 1.0);
    }

    #[test]
    fn measure_empty_mask_is_zero() {
        let d = GridDomain::unit_square(8);
        let empty = d.with_mask(vec![false; 64]);
        assert_eq!(empty.measure(), 0.0);
    }

    #[test]
    fn measure_half_cells() {
        let d = GridDomain::unit_square(64);
        let mut mask = vec![false; d.cell_count()];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = i < d.cell_count() / 2;
        }
        let half = d.with_mask(mask);
        assert_eq!(half.measure(), 0.5);
    }

    #[test]
    fn measure_additivity_disjoint() {
        let d = GridDomain::unit_square(16);
        let mut a = vec![false; 256];
        let mut b = vec![false; 256];
        for i in 0..256 {
            if i % 3 == 0 {
                a[i] = true;
            } else if i % 3 == 1 {
                b[i] = true;
            }
        }
        let union: Vec<bool> = a.iter().zip(&b).map(|(&x, &y)| x || y).collect();
        let m = |mask: Vec<bool>| d.with_mask(mask).measure();
        assert_eq!(m(a.clone()) + m(b.clone()), m(union));
    }

    #[test]
    fn shrink_zero_is_identity() {
        let d = GridDomain::unit_square(32);
        assert_eq!(d.shrink(0.0), d);
    }

    #[test]
    fn shrink_unit_square_quarter() {
        // every interior point deeper than 0.25: open square of side 0.5
        let d = GridDomain::unit_square(64);
        let s = d.shrink(0.25);
        assert!((s.measure() - 0.25).abs() < 1e-12, "got {}", s.measure());
    }

    #[test]
    fn shrink_past_half_diameter_empty() {
        let d = GridDomain::unit_square(32);
        assert!(d.shrink(0.51).is_empty());
    }

    #[test]
    fn shrink_monotone() {
        let d = GridDomain::unit_square(32);
        let s1 = d.shrink(0.1);
        let s2 = d.shrink(0.2);
        for (a, b) in s1.mask().iter().zip(s2.mask()) {
            assert!(!b || *a, "shrink(0.2) must be contained in shrink(0.1)");
        }
    }

    #[test]
    fn shrink_exhaustion() {
        let d = GridDomain::unit_square(1024);
        let full = d.measure();
        let mut last = 0.0;
        for a in [0.1, 0.01, 0.001] {
            let frac = d.shrink(a).measure() / full;
            assert!(frac >= last);
            last = frac;
        }
        assert!(last > 0.99, "ratio should approach 1, got {last}");
    }

    #[test]
    fn shrink_matches_boundary_distance_oracle() {
        // on the full square the box distance to the complement has a closed form
        let cells = 20;
        let d = GridDomain::unit_square(cells);
        let h = d.spacing();
        let a = 0.17;
        let s = d.shrink(a);
        for cell in 0..d.cell_count() {
            let idx = d.cell_multi_index(cell);
            let dist = idx
                .iter()
                .map(|&i| (i.min(cells - 1 - i)) as f64 * h)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(s.mask()[cell], dist >= a, "cell {idx:?}");
        }
    }

    #[test]
    fn shrink_l_shape_handles_concave_corner() {
        // exclude a quadrant; diagonal distances to the notch must be exact
        let cells = 16;
        let d = GridDomain::unit_square(cells);
        let mut mask = vec![true; d.cell_count()];
        for cell in 0..d.cell_count() {
            let idx = d.cell_multi_index(cell);
            if idx[0] >= cells / 2 && idx[1] >= cells / 2 {
                mask[cell] = false;
            }
        }
        let l = d.with_mask(mask);
        let h = d.spacing();
        let a = 0.2;
        let s = l.shrink(a);
        // brute-force oracle: box distance to every complement cell and the exterior
        for cell in 0..l.cell_count() {
            if !l.mask()[cell] {
                assert!(!s.mask()[cell]);
                continue;
            }
            let idx = l.cell_multi_index(cell);
            let mut best = idx
                .iter()
                .map(|&i| (i.min(cells - 1 - i)) as f64 * h)
                .fold(f64::INFINITY, f64::min);
            for other in 0..l.cell_count() {
                if l.mask()[other] {
                    continue;
                }
                let oidx = l.cell_multi_index(other);
                let d2: f64 = idx
                    .iter()
                    .zip(&oidx)
                    .map(|(&i, &j)| {
                        let gap = (i as i64 - j as i64).abs().max(1) - 1;
                        (gap as f64 * h).powi(2)
                    })
                    .sum();
                best = best.min(d2.sqrt());
            }
            assert_eq!(s.mask()[cell], best >= a, "cell {idx:?}: dist {best}");
        }
    }

    #[test]
    fn three_dimensional_grid_smoke() {
        let d = GridDomain::full_box(vec![0.0; 3], vec![8, 8, 8], 0.125).unwrap();
        assert!((d.measure() - 1.0).abs() < 1e-12);
        let s = d.shrink(0.25);
        // kept: cells at box distance >= 0.25 = 2h from the boundary
        assert!((s.measure() - 0.125).abs() < 1e-12, "got {}", s.measure());
    }
}
