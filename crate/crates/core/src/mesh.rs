//! Kuhn triangulation of a refined subcell lattice.
//!
//! Each subcell (side `s = h / 2^level`) splits into N! simplices, one per
//! permutation: the simplex for `pi` is `{t_{pi(1)} >= ... >= t_{pi(N)}}` in
//! local coordinates. The lattice is anchored so that every ambient grid node
//! sits at the barycenter of the identity-permutation simplex of its subcell
//! (relative position ((N)/(N+1), ..., 1/(N+1))). That anchoring is what lets
//! per-simplex gradient data reproduce node samples exactly, and it keeps all
//! grid nodes at distance >= s/((N+1) sqrt 2) from the mesh skeleton.

use crate::domain::{increment, GridDomain};

/// Kuhn mesh over a masked box of subcells.
#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    origin: Vec<f64>,
    ambient_h: f64,
    level: u32,
    s: f64,
    /// Lower corner of the subcell index box (global subcell coordinates).
    lo: Vec<i64>,
    dims: Vec<usize>,
    mask: Vec<bool>,
    perms: Vec<Vec<usize>>,
    n: usize,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut items: Vec<usize> = (0..n).collect();
    fn rec(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        // lexicographic order via stable rotation
        for i in k..items.len() {
            items[k..=i].rotate_right(1);
            rec(k + 1, items, out);
            items[k..=i].rotate_left(1);
        }
    }
    rec(0, &mut items, &mut out);
    out
}

impl SimplicialMesh {
    /// Triangulate the included cells of `region` at the given refinement
    /// level: every included ambient cell contributes its 2^(N level) subcells.
    pub fn triangulate(region: &GridDomain, level: u32) -> Self {
        let n = region.dim();
        let f = 1i64 << level;
        let cdims = region.cell_dims();
        let lo = vec![0i64; n];
        let dims: Vec<usize> = cdims.iter().map(|&d| d << level).collect();
        let total: usize = dims.iter().product();
        let mut mask = vec![false; total];
        let mut sub = vec![0usize; n];
        loop {
            let cell: Vec<usize> = sub.iter().map(|&k| k / f as usize).collect();
            if region.mask()[region.cell_index(&cell)] {
                let mut flat = 0;
                for (a, &k) in sub.iter().enumerate() {
                    flat = flat * dims[a] + k;
                }
                mask[flat] = true;
            }
            if !increment(&mut sub, &dims) {
                break;
            }
        }
        Self {
            origin: region.origin().to_vec(),
            ambient_h: region.spacing(),
            level,
            s: region.spacing() / f as f64,
            lo,
            dims,
            mask,
            perms: permutations(n),
            n,
        }
    }

    /// Triangulate an explicit subcell mask (used by the pipeline, which
    /// selects support subcells and dilation rings itself).
    pub fn from_subcells(
        region: &GridDomain,
        level: u32,
        lo: Vec<i64>,
        dims: Vec<usize>,
        mask: Vec<bool>,
    ) -> Self {
        let n = region.dim();
        assert_eq!(lo.len(), n);
        assert_eq!(dims.len(), n);
        assert_eq!(mask.len(), dims.iter().product::<usize>());
        Self {
            origin: region.origin().to_vec(),
            ambient_h: region.spacing(),
            level,
            s: region.spacing() / (1i64 << level) as f64,
            lo,
            dims,
            mask,
            perms: permutations(n),
            n,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn subcell_size(&self) -> f64 {
        self.s
    }

    pub fn ambient_spacing(&self) -> f64 {
        self.ambient_h
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn subcell_dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn subcell_lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn subcell_mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn included_subcells(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn simplex_count(&self) -> usize {
        self.included_subcells() * self.perms.len()
    }

    /// Offset of grid nodes inside their subcell, in units of s:
    /// component a (0-based) is (N - a) / (N + 1).
    pub fn node_offset(&self) -> Vec<f64> {
        (0..self.n).map(|a| (self.n - a) as f64 / (self.n + 1) as f64).collect()
    }

    /// Physical lower corner of a subcell: origin + s * (k - gamma).
    pub fn subcell_origin(&self, k: &[i64]) -> Vec<f64> {
        let gamma = self.node_offset();
        (0..self.n)
            .map(|a| self.origin[a] + self.s * (k[a] as f64 - gamma[a]))
            .collect()
    }

    pub fn subcell_flat(&self, k: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for a in 0..self.n {
            let rel = k[a] - self.lo[a];
            if rel < 0 || rel >= self.dims[a] as i64 {
                return None;
            }
            flat = flat * self.dims[a] + rel as usize;
        }
        Some(flat)
    }

    pub fn subcell_multi(&self, mut flat: usize) -> Vec<i64> {
        let mut k = vec![0i64; self.n];
        for a in (0..self.n).rev() {
            k[a] = (flat % self.dims[a]) as i64 + self.lo[a];
            flat /= self.dims[a];
        }
        k
    }

    pub fn is_included(&self, k: &[i64]) -> bool {
        self.subcell_flat(k).map(|f| self.mask[f]).unwrap_or(false)
    }

    /// Barycenter of simplex (subcell k, permutation p).
    ///
    /// Computed as origin + s*k + s*(a - rank_a)/(N+1) per axis, which makes
    /// the identity-permutation barycenter coincide bitwise with the ambient
    /// node at k when k is a multiple of 2^level.
    pub fn barycenter(&self, k: &[i64], p: usize) -> Vec<f64> {
        let perm = &self.perms[p];
        let mut rank = vec![0usize; self.n];
        for (r, &axis) in perm.iter().enumerate() {
            rank[axis] = r;
        }
        (0..self.n)
            .map(|a| {
                let num = a as f64 - rank[a] as f64;
                self.origin[a] + self.s * k[a] as f64 + self.s * num / (self.n + 1) as f64
            })
            .collect()
    }

    /// True when the identity-permutation simplex of subcell `k` has an
    /// ambient grid node at its barycenter.
    pub fn is_node_subcell(&self, k: &[i64]) -> bool {
        let f = 1i64 << self.level;
        k.iter().all(|&ki| ki.rem_euclid(f) == 0)
    }

    /// Index of the identity permutation in `perms`.
    pub fn identity_perm(&self) -> usize {
        0
    }

    /// Volume of one simplex: s^N / N!.
    pub fn simplex_volume(&self) -> f64 {
        let fact: f64 = (1..=self.n).map(|i| i as f64).product();
        self.s.powi(self.n as i32) / fact
    }

    pub fn total_volume(&self) -> f64 {
        self.included_subcells() as f64 * self.s.powi(self.n as i32)
    }

    /// Diameter of every simplex: sqrt(N) * s.
    pub fn simplex_diameter(&self) -> f64 {
        (self.n as f64).sqrt() * self.s
    }

    /// Sum over included (simplex, face) pairs of the (N-1)-area of the face.
    /// Shared faces are counted from both sides.
    pub fn face_area_total(&self) -> f64 {
        let n = self.n;
        let fact: f64 = (1..n).map(|i| i as f64).product::<f64>().max(1.0);
        let per_simplex =
            self.s.powi(n as i32 - 1) / fact * (2.0 + std::f64::consts::SQRT_2 * (n as f64 - 1.0));
        self.simplex_count() as f64 * per_simplex
    }

    /// Local coordinates of `x` within subcell `k`: t = (x - subcell_origin)/s.
    pub fn local_coords(&self, x: &[f64], k: &[i64]) -> Vec<f64> {
        let o = self.subcell_origin(k);
        (0..self.n).map(|a| (x[a] - o[a]) / self.s).collect()
    }

    /// Subcell containing `x` together with its local coordinates.
    pub fn locate_subcell(&self, x: &[f64]) -> (Vec<i64>, Vec<f64>) {
        let gamma = self.node_offset();
        let mut k = vec![0i64; self.n];
        let mut t = vec![0.0; self.n];
        for a in 0..self.n {
            let u = (x[a] - self.origin[a]) / self.s + gamma[a];
            let f = u.floor();
            k[a] = f as i64;
            t[a] = u - f;
        }
        (k, t)
    }

    /// Permutation index sorting local coordinates descending (the containing
    /// Kuhn simplex). Ties resolve to the lexicographically first admissible
    /// permutation, deterministic.
    pub fn containing_perm(&self, t: &[f64]) -> usize {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.sort_by(|&a, &b| t[b].partial_cmp(&t[a]).unwrap().then(a.cmp(&b)));
        self.perms.iter().position(|p| p == &order).expect("all permutations present")
    }

    /// Signed distances (physical units, positive inside) from local point `t`
    /// to the N+1 face planes of simplex `perm`, pushed into `out`.
    ///
    /// Faces in order: {t_{pi(1)} = 1}, then the N-1 diagonals
    /// {t_{pi(j)} = t_{pi(j+1)}}, then {t_{pi(N)} = 0}.
    pub fn face_signed_distances(&self, t: &[f64], p: usize, out: &mut Vec<f64>) {
        let perm = &self.perms[p];
        out.clear();
        out.push(self.s * (1.0 - t[perm[0]]));
        for j in 0..self.n - 1 {
            out.push(self.s * (t[perm[j]] - t[perm[j + 1]]) / std::f64::consts::SQRT_2);
        }
        out.push(self.s * t[perm[self.n - 1]]);
    }

    /// Inward unit normal of face `f` (same ordering as signed distances).
    pub fn face_normal(&self, p: usize, f: usize, out: &mut [f64]) {
        let perm = &self.perms[p];
        out.iter_mut().for_each(|c| *c = 0.0);
        if f == 0 {
            out[perm[0]] = -1.0;
        } else if f == self.n {
            out[perm[self.n - 1]] = 1.0;
        } else {
            let j = f - 1;
            let inv = 1.0 / std::f64::consts::SQRT_2;
            out[perm[j]] = inv;
            out[perm[j + 1]] = -inv;
        }
    }

    /// Neighbour simplex across face `f` of (k, p): returns (k', p').
    /// The neighbour may fall outside the mesh box; the caller checks
    /// inclusion via [`Self::subcell_flat`].
    pub fn face_neighbor(&self, k: &[i64], p: usize, f: usize) -> (Vec<i64>, usize) {
        let perm = &self.perms[p];
        if f == 0 {
            // exit through t_{pi(1)} = 1: rotate permutation left
            let mut k2 = k.to_vec();
            k2[perm[0]] += 1;
            let mut perm2 = perm[1..].to_vec();
            perm2.push(perm[0]);
            (k2, self.perm_index(&perm2))
        } else if f == self.n {
            // exit through t_{pi(N)} = 0: rotate right
            let mut k2 = k.to_vec();
            k2[perm[self.n - 1]] -= 1;
            let mut perm2 = vec![perm[self.n - 1]];
            perm2.extend_from_slice(&perm[..self.n - 1]);
            (k2, self.perm_index(&perm2))
        } else {
            let j = f - 1;
            let mut perm2 = perm.clone();
            perm2.swap(j, j + 1);
            (k.to_vec(), self.perm_index(&perm2))
        }
    }

    fn perm_index(&self, perm: &[usize]) -> usize {
        self.perms.iter().position(|p| p == perm).expect("permutation exists")
    }

    /// Physical midpoint (vertex average) of face `f` of simplex (k, p).
    pub fn face_midpoint(&self, k: &[i64], p: usize, f: usize) -> Vec<f64> {
        let perm = &self.perms[p];
        let n = self.n;
        let mut rank = vec![0usize; n];
        for (r, &axis) in perm.iter().enumerate() {
            rank[axis] = r + 1; // 1-based rank
        }
        // vertices v_0 = 0, v_j = v_{j-1} + e_{pi(j)}; face f omits one vertex
        let omitted = if f == 0 {
            0
        } else if f == n {
            n
        } else {
            f // diagonal face j = f omits vertex v_j (1-based j = f)
        };
        let o = self.subcell_origin(k);
        (0..n)
            .map(|a| {
                // e_a appears in v_j for j >= rank[a]
                let mut count = (n + 1 - rank[a]) as f64;
                if omitted >= rank[a] {
                    count -= 1.0;
                }
                o[a] + self.s * count / n as f64
            })
            .collect()
    }

    /// Iterate over included subcells as (flat, multi-index).
    pub fn included_iter(&self) -> impl Iterator<Item = (usize, Vec<i64>)> + '_ {
        (0..self.mask.len()).filter(|&f| self.mask[f]).map(move |f| (f, self.subcell_multi(f)))
    }

    /// True when `x` lies within `r` (plane distance) of some face of an
    /// included simplex: the conservative skeleton tube.
    pub fn skeleton_within(&self, r: f64, x: &[f64]) -> bool {
        let n = self.n;
        let nperm = self.perms.len();
        let (k0, _) = self.locate_subcell(x);
        let mut sd = Vec::new();
        let mut offs = vec![0usize; n];
        let three = vec![3usize; n];
        let mut k = vec![0i64; n];
        loop {
            for a in 0..n {
                k[a] = k0[a] + offs[a] as i64 - 1;
            }
            if self.is_included(&k) {
                let t = self.local_coords(x, &k);
                for p in 0..nperm {
                    self.face_signed_distances(&t, p, &mut sd);
                    let min = sd.iter().cloned().fold(f64::INFINITY, f64::min);
                    if min > -r && min < r {
                        return true;
                    }
                }
            }
            if !increment(&mut offs, &three) {
                break;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_match_refinement() {
        // unit square, h = 1/2: 4 cells, 2 triangles each
        let d = GridDomain::unit_square(2);
        let m0 = SimplicialMesh::triangulate(&d, 0);
        assert_eq!(m0.simplex_count(), 8);
        let m1 = SimplicialMesh::triangulate(&d, 1);
        assert_eq!(m1.simplex_count(), 32);
    }

    #[test]
    fn tiling_volume_exact() {
        let d = GridDomain::unit_square(16);
        for level in [0u32, 1, 2] {
            let m = SimplicialMesh::triangulate(&d, level);
            assert!((m.total_volume() - d.measure()).abs() < 1e-12);
            assert!(
                (m.simplex_count() as f64 * m.simplex_volume() - d.measure()).abs() < 1e-12
            );
        }
    }

    #[test]
    fn diameter_bound() {
        let d = GridDomain::unit_square(8);
        let m = SimplicialMesh::triangulate(&d, 2);
        assert!((m.simplex_diameter() - 2f64.sqrt() * d.spacing() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn node_sits_at_identity_barycenter() {
        let d = GridDomain::unit_square(16);
        for level in [0u32, 1] {
            let m = SimplicialMesh::triangulate(&d, level);
            let f = 1i64 << level;
            for &(i, j) in &[(3i64, 5i64), (0, 0), (16, 16), (7, 11)] {
                let k = vec![i * f, j * f];
                assert!(m.is_node_subcell(&k));
                let b = m.barycenter(&k, m.identity_perm());
                let node = d.node_position(&[i as usize, j as usize]);
                assert_eq!(b, node, "barycenter must equal node bitwise");
            }
        }
    }

    #[test]
    fn node_clearance_from_skeleton() {
        let d = GridDomain::unit_square(8);
        let m = SimplicialMesh::triangulate(&d, 0);
        let node = d.node_position(&[4, 4]);
        let (_k, t) = m.locate_subcell(&node);
        let p = m.containing_perm(&t);
        assert_eq!(m.perms()[p], vec![0, 1], "node lies in the identity simplex");
        let mut sd = Vec::new();
        m.face_signed_distances(&t, p, &mut sd);
        let clearance = m.subcell_size() / (3.0 * 2f64.sqrt());
        for &s in &sd {
            assert!(s >= clearance - 1e-12, "face distance {s} below clearance {clearance}");
        }
    }

    #[test]
    fn face_neighbors_share_midpoint() {
        let d = GridDomain::unit_square(4);
        let m = SimplicialMesh::triangulate(&d, 1);
        let k = vec![3i64, 3];
        for p in 0..2 {
            for f in 0..=2 {
                let (k2, p2) = m.face_neighbor(&k, p, f);
                let mid1 = m.face_midpoint(&k, p, f);
                // find which face of the neighbour leads back
                let mut found = false;
                for f2 in 0..=2 {
                    let (k3, p3) = m.face_neighbor(&k2, p2, f2);
                    if k3 == k && p3 == p {
                        let mid2 = m.face_midpoint(&k2, p2, f2);
                        for (a, b) in mid1.iter().zip(&mid2) {
                            assert!((a - b).abs() < 1e-12, "midpoints differ: {mid1:?} {mid2:?}");
                        }
                        found = true;
                    }
                }
                assert!(found, "neighbour of neighbour must return");
            }
        }
    }

    #[test]
    fn signed_distances_positive_inside() {
        let d = GridDomain::unit_square(4);
        let m = SimplicialMesh::triangulate(&d, 0);
        // barycenter of each simplex is strictly inside it
        for (_, k) in m.included_iter().take(8) {
            for p in 0..m.perms().len() {
                let b = m.barycenter(&k, p);
                let t = m.local_coords(&b, &k);
                let mut sd = Vec::new();
                m.face_signed_distances(&t, p, &mut sd);
                for &s in &sd {
                    assert!(s > 0.0, "barycenter must be interior: {sd:?}");
                }
            }
        }
    }

    #[test]
    fn three_d_counts() {
        let d = GridDomain::full_box(vec![0.0; 3], vec![2, 2, 2], 0.5).unwrap();
        let m = SimplicialMesh::triangulate(&d, 0);
        assert_eq!(m.simplex_count(), 8 * 6);
        assert!((m.total_volume() - 1.0).abs() < 1e-12);
        // node barycenter coincidence in 3-D
        let k = vec![1i64, 1, 1];
        let b = m.barycenter(&k, m.identity_perm());
        let node = d.node_position(&[1, 1, 1]);
        assert_eq!(b, node);
    }
}
