//! The rough approximation pipeline: triangulate the support of the smoothed
//! field, attach per-simplex affine potential pieces, carve a thin tube
//! around the mesh skeleton, and blend into a global C1 potential whose
//! gradient matches the field at every grid node outside an explicit
//! exceptional set of controlled measure.

use crate::domain::{increment, GridDomain};
use crate::error::{LuzinError, Result};
use crate::field::SampledVectorField;
use crate::mesh::SimplicialMesh;
use crate::potential::EvaluablePotential;
use crate::preprocess::{
    choose_sigma, luzin_truncate, luzin_truncate_with_repair, mollify, restrict_to,
    TruncationResult,
};

/// How anchor constants for the per-simplex affine pieces are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorPolicy {
    /// psi_tau(b_tau) = 0: canonical, no global solve.
    Zero,
    /// Least-squares jump minimization across shared faces (clipped to the
    /// sup-norm budget). Keeps the blended gradient bounded when the field is
    /// close to a gradient.
    LeastSquares,
}

/// Per-simplex affine family psi.
#[derive(Debug, Clone)]
pub struct PlFamily {
    /// Gradient per (included subcell, permutation), N components each.
    pub gradients: Vec<f64>,
    /// Anchor constant per (included subcell, permutation).
    pub anchors: Vec<f64>,
    /// Max gradient magnitude.
    pub lambda: f64,
    /// Mesh oscillation of the source field.
    pub oscillation: f64,
}

/// Max over included subcells of the spread of the multilinearly interpolated
/// field over the subcell (evaluated at subcell corners and interior ambient
/// seam crossings, where a piecewise-multilinear function attains extremes).
pub fn oscillation(v2: &SampledVectorField, mesh: &SimplicialMesh) -> f64 {
    let n = mesh.dim();
    let h = mesh.ambient_spacing();
    let origin = mesh.origin().to_vec();
    let mut worst: f64 = 0.0;
    let mut coords: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (_, k) in mesh.included_iter() {
        let o = mesh.subcell_origin(&k);
        let s = mesh.subcell_size();
        for a in 0..n {
            coords[a].clear();
            coords[a].push(o[a]);
            coords[a].push(o[a] + s);
            // ambient node coordinates strictly inside the subcell span
            let lo_m = ((o[a] - origin[a]) / h).floor() as i64;
            for m in lo_m..=(lo_m + 2) {
                let pos = origin[a] + h * m as f64;
                if pos > o[a] + 1e-12 * h && pos < o[a] + s - 1e-12 * h {
                    coords[a].push(pos);
                }
            }
        }
        let dims: Vec<usize> = coords.iter().map(|c| c.len()).collect();
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(dims.iter().product());
        let mut idx = vec![0usize; n];
        let mut pt = vec![0.0; n];
        loop {
            for a in 0..n {
                pt[a] = coords[a][idx[a]];
            }
            vals.push(v2.interpolate(&pt));
            if !increment(&mut idx, &dims) {
                break;
            }
        }
        for i in 0..vals.len() {
            for j in i + 1..vals.len() {
                let d: f64 = vals[i]
                    .iter()
                    .zip(&vals[j])
                    .map(|(p, q)| (p - q) * (p - q))
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max(d);
            }
        }
    }
    worst
}

/// Cap on the blend radius: stay well clear of the grid nodes, which sit at
/// distance s/((N+1) sqrt 2) from the skeleton.
pub fn radius_cap(mesh: &SimplicialMesh) -> f64 {
    0.45 * mesh.subcell_size() / ((mesh.dim() + 1) as f64 * std::f64::consts::SQRT_2)
}

/// Build the affine family: gradients from the field at barycenters (exact
/// node samples where the lattice provides them), anchors per policy.
///
/// Preconditions: oscillation(v2, mesh) <= eta/2 and per-simplex sup within
/// theta/2; violations are errors so callers can refine and retry.
pub fn build_pl_potential(
    v2: &SampledVectorField,
    mesh: &SimplicialMesh,
    eta: f64,
    theta: f64,
    policy: AnchorPolicy,
) -> Result<PlFamily> {
    let osc = oscillation(v2, mesh);
    if osc > eta / 2.0 {
        return Err(LuzinError::OscillationBudget { oscillation: osc, budget: eta / 2.0 });
    }
    let n = mesh.dim();
    let nperm = mesh.perms().len();
    let slots = mesh.included_subcells();
    let mut gradients = vec![0.0; slots * nperm * n];
    let mut lambda: f64 = 0.0;

    let f = 1i64 << mesh.level();
    let mut slot = 0usize;
    for (_, k) in mesh.included_iter() {
        for p in 0..nperm {
            let g: Vec<f64> = if p == mesh.identity_perm() && k.iter().all(|&ki| ki.rem_euclid(f) == 0) {
                // barycenter coincides with an ambient node: exact sample
                let node_idx: Vec<usize> = k.iter().map(|&ki| (ki / f) as usize).collect();
                let in_range = node_idx
                    .iter()
                    .zip(v2.domain().node_dims())
                    .all(|(&i, d)| i < d);
                if in_range {
                    v2.get(v2.domain().node_index(&node_idx)).to_vec()
                } else {
                    v2.interpolate(&mesh.barycenter(&k, p))
                }
            } else {
                v2.interpolate(&mesh.barycenter(&k, p))
            };
            let mag = g.iter().map(|c| c * c).sum::<f64>().sqrt();
            lambda = lambda.max(mag);
            let base = (slot * nperm + p) * n;
            gradients[base..base + n].copy_from_slice(&g);
        }
        slot += 1;
    }

    let pad = mesh.simplex_diameter() + 2.0 * radius_cap(mesh);
    let affine_sup = lambda * pad;
    if affine_sup > theta / 2.0 {
        return Err(LuzinError::BudgetUnmet {
            what: "per-simplex sup (refine mesh)".into(),
            achieved: affine_sup,
            budget: theta / 2.0,
        });
    }

    let anchors = match policy {
        AnchorPolicy::Zero => vec![0.0; slots * nperm],
        AnchorPolicy::LeastSquares => {
            solve_anchors(v2, mesh, &gradients, theta / 2.0, pad)
        }
    };

    Ok(PlFamily { gradients, anchors, lambda, oscillation: osc })
}

/// Least-squares anchors: minimize the sum over shared faces of the squared
/// affine jump at the face midpoint. Simplices with zero gradient are pinned
/// to zero, grounding the graph; faces toward missing or pinned neighbours
/// keep their jump-to-zero terms. Conjugate gradients on the face-incidence
/// normal equations, then per-simplex clipping into the sup budget.
fn solve_anchors(
    _v2: &SampledVectorField,
    mesh: &SimplicialMesh,
    gradients: &[f64],
    theta_half: f64,
    pad: f64,
) -> Vec<f64> {
    let n = mesh.dim();
    let nperm = mesh.perms().len();
    let slots = mesh.included_subcells();
    let total = slots * nperm;
    let mut slot_of = vec![usize::MAX; mesh.subcell_mask().len()];
    for (i, (flat, _)) in mesh.included_iter().enumerate() {
        slot_of[flat] = i;
    }
    let sid = |flat: usize, p: usize| slot_of[flat] * nperm + p;

    let grad_of = |s: usize| &gradients[s * n..(s + 1) * n];
    let active: Vec<bool> = (0..total)
        .map(|s| grad_of(s).iter().any(|&c| c != 0.0))
        .collect();

    // oriented face list: (i, j_opt, g) with jump = c_i - c_j + g
    let mut faces: Vec<(usize, Option<usize>, f64)> = Vec::new();
    for (flat, k) in mesh.included_iter() {
        for p in 0..nperm {
            let i = sid(flat, p);
            let bi = mesh.barycenter(&k, p);
            for fidx in 0..=n {
                let (k2, p2) = mesh.face_neighbor(&k, p, fidx);
                let neighbor = mesh
                    .subcell_flat(&k2)
                    .filter(|&f2| mesh.subcell_mask()[f2])
                    .map(|f2| sid(f2, p2));
                let mid = mesh.face_midpoint(&k, p, fidx);
                let gi = grad_of(i);
                let aff_i: f64 = (0..n).map(|a| gi[a] * (mid[a] - bi[a])).sum();
                match neighbor {
                    Some(j) => {
                        // interior face: process once from the smaller id
                        if i < j {
                            let b2 = mesh.barycenter(&k2, p2);
                            let gj = grad_of(j);
                            let aff_j: f64 = (0..n).map(|a| gj[a] * (mid[a] - b2[a])).sum();
                            let g = aff_i - aff_j;
                            if active[i] || active[j] || g != 0.0 {
                                faces.push((i, Some(j), g));
                            }
                        }
                    }
                    None => {
                        // region boundary: blend against the zero function
                        if active[i] || aff_i != 0.0 {
                            faces.push((i, None, aff_i));
                        }
                    }
                }
            }
        }
    }

    // normal equations A c = b restricted to active unknowns (inactive pinned 0)
    let mut b = vec![0.0; total];
    for &(i, j, g) in &faces {
        if active[i] {
            b[i] -= g;
        }
        if let Some(j) = j {
            if active[j] {
                b[j] += g;
            }
        }
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(i, j, _) in &faces {
            let vi = if active[i] { v[i] } else { 0.0 };
            let vj = match j {
                Some(j) if active[j] => v[j],
                _ => 0.0,
            };
            let t = vi - vj;
            if active[i] {
                out[i] += t;
            }
            if let Some(j) = j {
                if active[j] {
                    out[j] -= t;
                }
            }
        }
    };

    let mut c = vec![0.0; total];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut ap = vec![0.0; total];
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut rs = dot(&r, &r);
    let tol = 1e-26 * rs.max(1e-300);
    let max_iter = 8 * (total as f64).sqrt() as usize + 200;
    for _ in 0..max_iter {
        if rs <= tol {
            break;
        }
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rs / pap;
        for i in 0..total {
            c[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..total {
            p[i] = r[i] + beta * p[i];
        }
    }

    // clip into the sup budget
    for s in 0..total {
        if !active[s] {
            c[s] = 0.0;
            continue;
        }
        let gmag = grad_of(s).iter().map(|x| x * x).sum::<f64>().sqrt();
        let allow = (theta_half - gmag * pad).max(0.0);
        c[s] = c[s].clamp(-allow, allow);
    }
    c
}

/// Tube around the mesh skeleton with certified measure upper bound.
#[derive(Debug, Clone, Copy)]
pub struct SkeletonTube {
    pub radius: f64,
    pub measure_upper: f64,
}

/// Choose the tube radius by halving from the geometric cap until the measure
/// upper bound (2 r times total face area) fits the budget.
pub fn skeleton_tube(
    mesh: &SimplicialMesh,
    budget: f64,
    _domain: &GridDomain,
) -> Result<SkeletonTube> {
    assert!(budget > 0.0, "tube budget must be positive");
    let area = mesh.face_area_total();
    if area == 0.0 {
        return Ok(SkeletonTube { radius: 0.0, measure_upper: 0.0 });
    }
    let floor = 1e-9 * mesh.subcell_size();
    let mut r = radius_cap(mesh);
    while 2.0 * r * area > budget {
        r /= 2.0;
        if r < floor {
            return Err(LuzinError::RefineAmbientGrid(format!(
                "tube radius fell below resolution floor {floor} before meeting budget {budget}"
            )));
        }
    }
    Ok(SkeletonTube { radius: r, measure_upper: 2.0 * r * area })
}

/// Assemble the blended potential from the affine family.
pub fn blend(family: &PlFamily, mesh: &SimplicialMesh, radius: f64) -> EvaluablePotential {
    EvaluablePotential::new(mesh.clone(), family.gradients.clone(), family.anchors.clone(), radius)
}

/// Options for [`rough_approximate`].
#[derive(Debug, Clone)]
pub struct RoughOptions {
    /// Maximum mesh refinement level before giving up.
    pub max_level: u32,
    pub anchor_policy: AnchorPolicy,
    /// Absolute tube measure budget; defaults to eps * measure / 4.
    pub tube_budget: Option<f64>,
    /// Enable the outlier repair pass with this deviation threshold.
    pub repair_threshold: Option<f64>,
}

impl Default for RoughOptions {
    fn default() -> Self {
        Self {
            max_level: 6,
            anchor_policy: AnchorPolicy::LeastSquares,
            tube_budget: None,
            repair_threshold: None,
        }
    }
}

/// Auditable output of the rough approximation.
#[derive(Debug, Clone)]
pub struct RoughCertificate {
    /// Good ambient cells; the exceptional set is their complement united
    /// with the skeleton tube.
    pub k_cells: Vec<bool>,
    pub phi: EvaluablePotential,
    pub eps_achieved: f64,
    pub eta_achieved: f64,
    pub theta_achieved: f64,
    pub mesh_level: u32,
    pub tube_radius: f64,
    pub tube_measure_upper: f64,
    pub excluded_cell_measure: f64,
    pub lambda: f64,
    pub oscillation: f64,
    pub sigma: f64,
    pub mollified: bool,
    /// Off-tube residual bound valid between nodes: oscillation plus the
    /// smoothing damage threshold.
    pub continuum_eta_bound: f64,
}

impl RoughCertificate {
    /// Point query: is `x` in the exceptional set (bad cell or tube)?
    pub fn in_exceptional(&self, domain: &GridDomain, x: &[f64]) -> bool {
        if self.phi.in_tube(x) {
            return true;
        }
        let h = domain.spacing();
        let mut idx = Vec::with_capacity(domain.dim());
        for a in 0..domain.dim() {
            let u = ((x[a] - domain.origin()[a]) / h).floor();
            if u < 0.0 || u >= domain.cell_dims()[a] as f64 {
                return false; // outside the box entirely
            }
            idx.push(u as usize);
        }
        !self.k_cells[domain.cell_index(&idx)]
    }

    /// Node flags for K (corner of some good cell).
    pub fn k_node_mask(&self, domain: &GridDomain) -> Vec<bool> {
        domain.with_mask(self.k_cells.clone()).node_mask()
    }
}

fn cells_where_diff_exceeds(
    a: &SampledVectorField,
    b: &SampledVectorField,
    threshold: f64,
) -> Vec<bool> {
    let domain = a.domain();
    let n = domain.dim();
    let mut diff = SampledVectorField::zeros(domain.clone());
    let mut tmp = vec![0.0; n];
    for node in 0..domain.node_count() {
        for c in 0..n {
            tmp[c] = a.get(node)[c] - b.get(node)[c];
        }
        diff.set(node, &tmp);
    }
    let cellmax = diff.cell_max_magnitude();
    cellmax
        .iter()
        .zip(domain.mask())
        .map(|(&m, &inc)| inc && m > threshold)
        .collect()
}

/// Subcell mask for the mesh: subcells of support cells dilated by two rings,
/// clipped to subcells that fit inside the domain with a blend margin.
fn mesh_region(
    domain: &GridDomain,
    support_cells: &[bool],
    level: u32,
) -> SimplicialMesh {
    let n = domain.dim();
    let f = 1usize << level;
    let dims: Vec<usize> = domain.cell_dims().iter().map(|&d| d << level).collect();
    let total: usize = dims.iter().product();
    let mut mask = vec![false; total];
    let mut sub = vec![0usize; n];
    loop {
        let cell: Vec<usize> = sub.iter().map(|&k| k / f).collect();
        if support_cells[domain.cell_index(&cell)] {
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
    // two rings of dilation (box)
    for _ in 0..2 {
        mask = dilate_subcells(&mask, &dims);
    }
    // clip to subcells fitting inside the domain with margin
    let mesh_probe = SimplicialMesh::from_subcells(
        domain,
        level,
        vec![0i64; n],
        dims.clone(),
        vec![false; total],
    );
    let margin = 0.12 * mesh_probe.subcell_size();
    let h = domain.spacing();
    let mut sub = vec![0usize; n];
    let mut flat = 0usize;
    loop {
        if mask[flat] {
            let k: Vec<i64> = sub.iter().map(|&q| q as i64).collect();
            let o = mesh_probe.subcell_origin(&k);
            // every ambient cell overlapped by the margin-dilated subcell must be included
            let mut fits = true;
            let mut lo_cell = vec![0i64; n];
            let mut spans = vec![0usize; n];
            for a in 0..n {
                let lo = o[a] - margin - domain.origin()[a];
                let hi = o[a] + mesh_probe.subcell_size() + margin - domain.origin()[a];
                lo_cell[a] = (lo / h).floor() as i64;
                let hi_cell = ((hi / h).ceil() as i64 - 1).max(lo_cell[a]);
                spans[a] = (hi_cell - lo_cell[a] + 1) as usize;
            }
            let mut off = vec![0usize; n];
            let mut cidx = vec![0usize; n];
            'fits: loop {
                for a in 0..n {
                    let c = lo_cell[a] + off[a] as i64;
                    if c < 0 || c >= domain.cell_dims()[a] as i64 {
                        fits = false;
                        break 'fits;
                    }
                    cidx[a] = c as usize;
                }
                if !domain.mask()[domain.cell_index(&cidx)] {
                    fits = false;
                    break;
                }
                if !increment(&mut off, &spans) {
                    break;
                }
            }
            if !fits {
                mask[flat] = false;
            }
        }
        flat += 1;
        if !increment(&mut sub, &dims) {
            break;
        }
    }
    SimplicialMesh::from_subcells(domain, level, vec![0i64; n], dims, mask)
}

fn dilate_subcells(mask: &[bool], dims: &[usize]) -> Vec<bool> {
    let n = dims.len();
    let mut cur = mask.to_vec();
    for a in 0..n {
        let stride: usize = dims[a + 1..].iter().product();
        let mut next = cur.clone();
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

/// The rough approximation: truncate, smooth, triangulate, blend; return a
/// certificate with all three budgets checked.
pub fn rough_approximate(
    v: &SampledVectorField,
    eps: f64,
    eta: f64,
    theta: f64,
    opts: &RoughOptions,
) -> Result<RoughCertificate> {
    assert!(eps > 0.0 && eta > 0.0 && theta > 0.0, "budgets must be positive");
    let domain = v.domain().clone();
    let mu = domain.measure();
    if mu == 0.0 {
        return Err(LuzinError::EmptyDomain);
    }
    let n = domain.dim();
    let h = domain.spacing();

    // Step 1: truncation with kappa = eps * mu / 4
    let kappa = eps * mu / 4.0;
    let trunc: TruncationResult = match opts.repair_threshold {
        Some(t) => luzin_truncate_with_repair(v, kappa, t)?,
        None => luzin_truncate(v, kappa)?,
    };
    let v1 = &trunc.v1;

    // Step 2: smoothing. The slack-driven sigma can be finer than the kernel
    // resolution; prefer a resolvable kernel when its smoothing damage stays
    // inside the budget share, otherwise fall back to restriction only,
    // shrinking sigma while the restriction damage is too large.
    let damage_share = eps * mu / 4.0;
    let sigma_slack = choose_sigma(&domain, eps / 4.0)?;
    let kernel_min = 20.0 * h;
    let mut chosen: Option<(f64, bool, SampledVectorField, Vec<bool>)> = None;
    {
        let sigma_m = sigma_slack.max(kernel_min);
        if !domain.shrink(4.0 * sigma_m / 5.0).is_empty() {
            if let Ok(v2) = mollify(v1, sigma_m) {
                let damage = cells_where_diff_exceeds(v1, &v2, eta / 2.0);
                if domain.measure_of_mask(&damage) <= damage_share {
                    chosen = Some((sigma_m, true, v2, damage));
                }
            }
        }
    }
    if chosen.is_none() {
        let mut sigma = sigma_slack;
        loop {
            let inner = domain.shrink(sigma);
            if !inner.is_empty() {
                let v2 = restrict_to(v1, &inner);
                let damage = cells_where_diff_exceeds(v1, &v2, eta / 2.0);
                if domain.measure_of_mask(&damage) <= damage_share {
                    chosen = Some((sigma, false, v2, damage));
                    break;
                }
            }
            sigma /= 2.0;
            if sigma < 2.0 * h {
                return Err(LuzinError::RefineAmbientGrid(
                    "smoothing damage exceeds budget at every resolvable sigma".into(),
                ));
            }
        }
    }
    let (sigma, mollified, v2, damage) = chosen.unwrap();

    // bad cells: truncation modifications plus smoothing damage
    let mut bad = vec![false; domain.cell_count()];
    for (i, b) in bad.iter_mut().enumerate() {
        *b = trunc.b_mask[i] || trunc.b_prime_mask[i] || damage[i];
    }
    let k_cells: Vec<bool> =
        domain.mask().iter().zip(&bad).map(|(&inc, &b)| inc && !b).collect();
    let excluded_cell_measure = domain.measure_of_mask(&bad);

    // support cells of the smoothed field
    let cellmax = v2.cell_max_magnitude();
    let support: Vec<bool> = cellmax
        .iter()
        .zip(domain.mask())
        .map(|(&m, &inc)| inc && m > 0.0)
        .collect();
    if support.iter().all(|&s| !s) {
        // zero field: trivial certificate
        let phi = EvaluablePotential::zero(n);
        let eta_achieved = max_node_residual(v, &phi, &domain, &k_cells);
        let cert = RoughCertificate {
            k_cells,
            phi,
            eps_achieved: excluded_cell_measure / mu,
            eta_achieved,
            theta_achieved: 0.0,
            mesh_level: 0,
            tube_radius: 0.0,
            tube_measure_upper: 0.0,
            excluded_cell_measure,
            lambda: trunc.lambda,
            oscillation: 0.0,
            sigma,
            mollified,
            continuum_eta_bound: eta / 2.0,
        };
        return finish_checks(cert, eps, eta, theta);
    }

    // Steps 4-5: refine until oscillation and sup budgets are met
    let mut built: Option<(SimplicialMesh, PlFamily)> = None;
    let mut last_err: Option<LuzinError> = None;
    for level in 0..=opts.max_level {
        let mesh = mesh_region(&domain, &support, level);
        if mesh.included_subcells() == 0 {
            last_err = Some(LuzinError::RefineAmbientGrid(
                "support region vanished under domain clipping".into(),
            ));
            continue;
        }
        match build_pl_potential(&v2, &mesh, eta, theta, opts.anchor_policy) {
            Ok(family) => {
                built = Some((mesh, family));
                break;
            }
            Err(e @ (LuzinError::OscillationBudget { .. } | LuzinError::BudgetUnmet { .. })) => {
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let (mesh, family) = match built {
        Some(b) => b,
        None => {
            return Err(LuzinError::RefineAmbientGrid(format!(
                "budgets unreachable at max level {}: {}",
                opts.max_level,
                last_err.map(|e| e.to_string()).unwrap_or_default()
            )))
        }
    };

    let tube_budget = opts.tube_budget.unwrap_or(eps * mu / 4.0);
    let tube = skeleton_tube(&mesh, tube_budget, &domain)?;
    let phi = blend(&family, &mesh, tube.radius);

    let eta_achieved = max_node_residual(v, &phi, &domain, &k_cells);
    let theta_achieved = phi.sup_bound();
    let cert = RoughCertificate {
        k_cells,
        eps_achieved: (excluded_cell_measure + tube.measure_upper) / mu,
        eta_achieved,
        theta_achieved,
        mesh_level: mesh.level(),
        tube_radius: tube.radius,
        tube_measure_upper: tube.measure_upper,
        excluded_cell_measure,
        lambda: trunc.lambda,
        oscillation: family.oscillation,
        sigma,
        mollified,
        continuum_eta_bound: family.oscillation + eta / 2.0,
        phi,
    };
    finish_checks(cert, eps, eta, theta)
}

fn finish_checks(
    cert: RoughCertificate,
    eps: f64,
    eta: f64,
    theta: f64,
) -> Result<RoughCertificate> {
    if cert.eps_achieved > eps {
        return Err(LuzinError::BudgetUnmet {
            what: "exceptional measure".into(),
            achieved: cert.eps_achieved,
            budget: eps,
        });
    }
    if cert.eta_achieved > eta {
        return Err(LuzinError::BudgetUnmet {
            what: "gradient accuracy".into(),
            achieved: cert.eta_achieved,
            budget: eta,
        });
    }
    if cert.theta_achieved > theta {
        return Err(LuzinError::BudgetUnmet {
            what: "potential sup-norm".into(),
            achieved: cert.theta_achieved,
            budget: theta,
        });
    }
    Ok(cert)
}

/// Max over nodes of good cells of |v(node) - grad phi(node)|.
pub fn max_node_residual(
    v: &SampledVectorField,
    phi: &EvaluablePotential,
    domain: &GridDomain,
    k_cells: &[bool],
) -> f64 {
    let nodes = domain.with_mask(k_cells.to_vec()).node_mask();
    let mut worst: f64 = 0.0;
    for node in 0..domain.node_count() {
        if !nodes[node] {
            continue;
        }
        let pos = domain.node_position(&domain.node_multi_index(node));
        let g = phi.gradient(&pos);
        let d: f64 = v
            .get(node)
            .iter()
            .zip(&g)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(d);
    }
    worst
}

/// Discrete circulation of a sampled field around an axis-aligned rectangle
/// of nodes (trapezoid rule along edges).
pub fn circulation_rect(
    v: &SampledVectorField,
    lo: &[usize; 2],
    hi: &[usize; 2],
) -> f64 {
    let domain = v.domain();
    assert_eq!(domain.dim(), 2);
    let h = domain.spacing();
    let val = |i: usize, j: usize, c: usize| v.get(domain.node_index(&[i, j]))[c];
    let mut circ = 0.0;
    // bottom: +x, top: -x
    for i in lo[0]..hi[0] {
        circ += 0.5 * (val(i, lo[1], 0) + val(i + 1, lo[1], 0)) * h;
        circ -= 0.5 * (val(i, hi[1], 0) + val(i + 1, hi[1], 0)) * h;
    }
    // right: +y, left: -y
    for j in lo[1]..hi[1] {
        circ += 0.5 * (val(hi[0], j, 1) + val(hi[0], j + 1, 1)) * h;
        circ -= 0.5 * (val(lo[0], j, 1) + val(lo[0], j + 1, 1)) * h;
    }
    circ
}

/// Circulation of an evaluable potential's gradient around the same loop,
/// computed from potential differences: exactly zero by telescoping.
pub fn circulation_rect_potential(
    phi: &EvaluablePotential,
    domain: &GridDomain,
    lo: &[usize; 2],
    hi: &[usize; 2],
) -> f64 {
    let pos = |i: usize, j: usize| domain.node_position(&[i, j]);
    let mut circ = 0.0;
    // walk the loop accumulating phi differences
    let mut prev = phi.eval(&pos(lo[0], lo[1]));
    let walk = |i: usize, j: usize, circ: &mut f64, prev: &mut f64| {
        let next = phi.eval(&pos(i, j));
        *circ += next - *prev;
        *prev = next;
    };
    for i in lo[0] + 1..=hi[0] {
        walk(i, lo[1], &mut circ, &mut prev);
    }
    for j in lo[1] + 1..=hi[1] {
        walk(hi[0], j, &mut circ, &mut prev);
    }
    for i in (lo[0]..hi[0]).rev() {
        walk(i, hi[1], &mut circ, &mut prev);
    }
    for j in (lo[1]..hi[1]).rev() {
        walk(lo[0], j, &mut circ, &mut prev);
    }
    circ
}
