//! Global assembly of the coupled tangent system via two interchangeable
//! backends, plus Dirichlet elimination and reaction recovery.
//!
//! The **loop** backend is the plain reference implementation: every call
//! re-evaluates shape functions, geometry, and each tangent term element by
//! element, exactly as a straightforward per-element finite element code
//! would.  The **batched** backend precomputes the geometry products once per
//! mesh, evaluates all Gauss-point integrand factors on flat arrays in a
//! single pass, and emits triplets in one sweep.  Both must agree to
//! round-off; the loop backend is the oracle.
//!
//! Block structure of the emitted system (`K d = F`, `F` = negative
//! residual):
//!
//! ```text
//! k_uu = sum_gp w |J| B_u' [(1-D) C + h P P' + h (eeq - em) Hess] B_u
//! k_ue = -sum_gp w |J| B_u' [dD ind C e + h P] N_e'
//! k_eu = -sum_gp w |J| h N_e (P' B_u)
//! k_ee = sum_gp w |J| [h N_e N_e' + g h c B_e' B_e + h c dg dD ind (B_e' grad) N_e']
//! f_u  = -sum_gp w |J| B_u' sigma
//! f_e  = sum_gp w |J| [h (eeq - em) N_e - g h c B_e' grad]
//! ```
//!
//! where `em` is the interpolated micro strain, `P = d(eeq)/d(strain)`,
//! `ind` the loading indicator, and `grad` the micro-strain gradient.  The
//! blocks are the exact Jacobian of the discrete residual, so assembled `K`
//! matches finite differences of `F`.

use crate::constitutive::{elasticity_matrix, MaterialParams};
use crate::error::{LgdmError, Result};
use crate::fem::{b_matrix, gauss_rule, geometry_map, shape_functions, QuadratureRule, ShapeEval};
use crate::mesh::{Constraint, ConstraintKind, DofMap, Mesh};
use crate::state::GpState;
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Assembly backend selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    /// Per-element reference assembly (recomputes everything each call).
    Loop,
    /// Whole-model flat-array assembly with precomputed geometry.
    Batched,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Backend::Loop => "loop",
            Backend::Batched => "batched",
        })
    }
}

impl std::str::FromStr for Backend {
    type Err = LgdmError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loop" => Ok(Backend::Loop),
            "batched" => Ok(Backend::Batched),
            other => Err(LgdmError::InvalidArgument(format!(
                "unknown backend '{other}' (expected 'loop' or 'batched')"
            ))),
        }
    }
}

/// Execution strategy for the batched backend.  `Parallel` falls back to
/// sequential when the `parallel` feature is disabled; results are identical
/// either way because every element writes a disjoint, pre-sized slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

/// Dense element blocks of the coupled tangent system.
#[derive(Debug, Clone)]
pub struct ElementBlocks {
    pub k_uu: Vec<f64>,
    pub k_ue: Vec<f64>,
    pub k_eu: Vec<f64>,
    pub k_ee: Vec<f64>,
    pub f_u: Vec<f64>,
    pub f_e: Vec<f64>,
}

/// Assembled global system in coordinate form.  The sparsity pattern is
/// fixed per mesh and shared; `extra` holds triplets appended by constraint
/// elimination.  Duplicate entries sum.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub n: usize,
    pub rows: Arc<Vec<usize>>,
    pub cols: Arc<Vec<usize>>,
    pub vals: Vec<f64>,
    pub extra: Vec<(usize, usize, f64)>,
    pub f: Vec<f64>,
}

impl SparseSystem {
    /// Iterates every triplet (pattern entries then extras).
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .zip(self.cols.iter())
            .zip(self.vals.iter())
            .map(|((&r, &c), &v)| (r, c, v))
            .chain(self.extra.iter().copied())
    }

    /// Dense copy for small-system tests and oracles.
    pub fn densify(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n * self.n];
        for (r, c, v) in self.triplets() {
            out[r * self.n + c] += v;
        }
        out
    }
}

/// Precomputed per-Gauss-point shape data and geometry products, flat over
/// all `nel * ngp` points.
struct BatchShape {
    /// Quadrature weight times Jacobian determinant.
    wdet: Vec<f64>,
    /// Strain-displacement matrix of the u field, `voigt * ncu` per point.
    b_u: Vec<f64>,
    /// Micro-field shape values, `nen` per point.
    n_e: Vec<f64>,
    /// Micro-field shape gradients, `dim * nen` per point (axis-major).
    b_e: Vec<f64>,
}

/// Assembler for one mesh/material pairing.  Owns the precomputed batched
/// shape data, the elasticity matrix, and the fixed triplet pattern shared by
/// both backends.
pub struct Assembler<'m> {
    pub mesh: &'m Mesh,
    pub dofmap: &'m DofMap,
    pub params: MaterialParams,
    pub c_matrix: Vec<f64>,
    rule: QuadratureRule,
    batch: BatchShape,
    rows: Arc<Vec<usize>>,
    cols: Arc<Vec<usize>>,
}

impl<'m> Assembler<'m> {
    pub fn new(mesh: &'m Mesh, dofmap: &'m DofMap, params: MaterialParams) -> Result<Self> {
        params.validate()?;
        let dim = mesh.dim;
        let v = crate::fem::voigt_size(dim);
        let ncu = dofmap.stride_u;
        let nen = dofmap.stride_e;
        let rule = gauss_rule(mesh.family_u);
        let ngp = rule.len();
        let npts = mesh.element_count * ngp;

        // Precompute shape data at every Gauss point of every element.
        let shapes_u: Vec<ShapeEval> = rule
            .points
            .iter()
            .map(|&p| shape_functions(mesh.family_u, p))
            .collect();
        let shapes_e: Vec<ShapeEval> = rule
            .points
            .iter()
            .map(|&p| shape_functions(mesh.family_e, p))
            .collect();

        let mut batch = BatchShape {
            wdet: vec![0.0; npts],
            b_u: vec![0.0; npts * v * ncu],
            n_e: vec![0.0; npts * nen],
            b_e: vec![0.0; npts * dim * nen],
        };
        for e in 0..mesh.element_count {
            let coords_u = mesh.elem_coords_u(e);
            let coords_e = mesh.elem_coords_e(e);
            for gp in 0..ngp {
                let i = e * ngp + gp;
                let (dn_dx_u, det) = geometry_map(&coords_u, &shapes_u[gp].dn_dxi, dim)
                    .map_err(|err| err.with_element(e))?;
                batch.wdet[i] = rule.weights[gp] * det;
                b_matrix(&dn_dx_u, dim, &mut batch.b_u[i * v * ncu..(i + 1) * v * ncu]);
                let (dn_dx_e, _) = geometry_map(&coords_e, &shapes_e[gp].dn_dxi, dim)
                    .map_err(|err| err.with_element(e))?;
                batch.n_e[i * nen..(i + 1) * nen].copy_from_slice(&shapes_e[gp].n);
                for q in 0..nen {
                    for r in 0..dim {
                        batch.b_e[i * dim * nen + r * nen + q] = dn_dx_e[q][r];
                    }
                }
            }
        }

        // Fixed triplet pattern, element-major, row-major within each block,
        // in block order k_uu, k_ue, k_eu, k_ee.
        let stride_k = ncu * ncu + 2 * ncu * nen + nen * nen;
        let mut rows = Vec::with_capacity(mesh.element_count * stride_k);
        let mut cols = Vec::with_capacity(mesh.element_count * stride_k);
        for e in 0..mesh.element_count {
            let du = dofmap.elem_dofs_u(e);
            let de = dofmap.elem_dofs_e(e);
            for &r in du {
                for &c in du {
                    rows.push(r);
                    cols.push(c);
                }
            }
            for &r in du {
                for &c in de {
                    rows.push(r);
                    cols.push(c);
                }
            }
            for &r in de {
                for &c in du {
                    rows.push(r);
                    cols.push(c);
                }
            }
            for &r in de {
                for &c in de {
                    rows.push(r);
                    cols.push(c);
                }
            }
        }

        Ok(Assembler {
            mesh,
            dofmap,
            params,
            c_matrix: elasticity_matrix(params.young, params.poisson, dim),
            rule,
            batch,
            rows: Arc::new(rows),
            cols: Arc::new(cols),
        })
    }

    pub fn gauss_points_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn point_count(&self) -> usize {
        self.mesh.element_count * self.rule.len()
    }

    /// Fresh virgin state sized for this assembler, with a uniform threshold.
    pub fn virgin_state(&self) -> GpState {
        GpState::new(
            self.point_count(),
            self.mesh.dim,
            vec![self.params.kappa0; self.point_count()],
            &self.params,
        )
    }

    /// Physical coordinates of every Gauss point (for defect fields).
    pub fn gauss_point_coords(&self) -> Vec<[f64; 3]> {
        let ngp = self.rule.len();
        let shapes: Vec<ShapeEval> = self
            .rule
            .points
            .iter()
            .map(|&p| shape_functions(self.mesh.family_u, p))
            .collect();
        let mut out = vec![[0.0; 3]; self.point_count()];
        for e in 0..self.mesh.element_count {
            let coords = self.mesh.elem_coords_u(e);
            for gp in 0..ngp {
                let mut x = [0.0; 3];
                for (a, c) in coords.iter().enumerate() {
                    for k in 0..3 {
                        x[k] += shapes[gp].n[a] * c[k];
                    }
                }
                out[e * ngp + gp] = x;
            }
        }
        out
    }

    /// Recomputes the kinematic fields and all derived state from the global
    /// solution vector.  The trial history is always measured against the
    /// committed (start-of-step) history, never the previous trial.
    pub fn update_state(
        &self,
        state: &mut GpState,
        solution: &[f64],
        committed_kappa: &[f64],
        backend: Backend,
    ) {
        let dim = self.mesh.dim;
        let v = state.voigt;
        let ncu = self.dofmap.stride_u;
        let nen = self.dofmap.stride_e;
        let ngp = self.rule.len();
        debug_assert_eq!(state.npts, self.point_count());
        debug_assert_eq!(committed_kappa.len(), state.npts);

        let mut u_el = vec![0.0; ncu];
        let mut e_el = vec![0.0; nen];
        match backend {
            Backend::Batched => {
                for e in 0..self.mesh.element_count {
                    gather(solution, self.dofmap.elem_dofs_u(e), &mut u_el);
                    gather(solution, self.dofmap.elem_dofs_e(e), &mut e_el);
                    for gp in 0..ngp {
                        let i = e * ngp + gp;
                        let b = &self.batch.b_u[i * v * ncu..(i + 1) * v * ncu];
                        let n_e = &self.batch.n_e[i * nen..(i + 1) * nen];
                        let b_e = &self.batch.b_e[i * dim * nen..(i + 1) * dim * nen];
                        kinematics_at_point(
                            state, i, b, n_e, b_e, &u_el, &e_el, v, dim, ncu, nen,
                        );
                        state.update_point(i, committed_kappa[i], &self.params, &self.c_matrix);
                    }
                }
            }
            Backend::Loop => {
                // Reference path: shape data recomputed from scratch.
                for e in 0..self.mesh.element_count {
                    gather(solution, self.dofmap.elem_dofs_u(e), &mut u_el);
                    gather(solution, self.dofmap.elem_dofs_e(e), &mut e_el);
                    let coords_u = self.mesh.elem_coords_u(e);
                    let coords_e = self.mesh.elem_coords_e(e);
                    for gp in 0..ngp {
                        let i = e * ngp + gp;
                        let p = self.rule.points[gp];
                        let su = shape_functions(self.mesh.family_u, p);
                        let se = shape_functions(self.mesh.family_e, p);
                        let (dn_dx_u, _) = geometry_map(&coords_u, &su.dn_dxi, dim)
                            .expect("geometry validated at construction");
                        let (dn_dx_e, _) = geometry_map(&coords_e, &se.dn_dxi, dim)
                            .expect("geometry validated at construction");
                        let mut b = vec![0.0; v * ncu];
                        b_matrix(&dn_dx_u, dim, &mut b);
                        let mut b_e = vec![0.0; dim * nen];
                        for q in 0..nen {
                            for r in 0..dim {
                                b_e[r * nen + q] = dn_dx_e[q][r];
                            }
                        }
                        kinematics_at_point(
                            state, i, &b, &se.n, &b_e, &u_el, &e_el, v, dim, ncu, nen,
                        );
                        state.update_point(i, committed_kappa[i], &self.params, &self.c_matrix);
                    }
                }
            }
        }
    }

    /// Assembles the global tangent and negative residual from the state.
    pub fn assemble(&self, state: &GpState, backend: Backend, exec: Execution) -> Result<SparseSystem> {
        if state.npts != self.point_count() || state.dim != self.mesh.dim {
            return Err(LgdmError::InvalidState(format!(
                "state sized for {} points (dim {}), assembler expects {} (dim {})",
                state.npts,
                state.dim,
                self.point_count(),
                self.mesh.dim
            )));
        }
        let ncu = self.dofmap.stride_u;
        let nen = self.dofmap.stride_e;
        let stride_k = ncu * ncu + 2 * ncu * nen + nen * nen;
        let stride_f = ncu + nen;
        let nel = self.mesh.element_count;
        let mut vals = vec![0.0; nel * stride_k];
        let mut fbuf = vec![0.0; nel * stride_f];

        match backend {
            Backend::Loop => {
                for e in 0..nel {
                    let blocks = self.element_blocks(e, state);
                    write_element(
                        &blocks,
                        &mut vals[e * stride_k..(e + 1) * stride_k],
                        &mut fbuf[e * stride_f..(e + 1) * stride_f],
                    );
                }
            }
            Backend::Batched => {
                let factors = self.compute_factors(state);
                let parallel = matches!(exec, Execution::Parallel) && cfg!(feature = "parallel");
                if parallel {
                    #[cfg(feature = "parallel")]
                    {
                        let dim = self.mesh.dim;
                        vals.par_chunks_mut(stride_k)
                            .zip(fbuf.par_chunks_mut(stride_f))
                            .enumerate()
                            .for_each_init(
                                || BatchScratch::new(dim, ncu, nen),
                                |scratch, (e, (kslice, fslice))| {
                                    self.batched_element(e, state, &factors, kslice, fslice, scratch);
                                },
                            );
                    }
                } else {
                    let mut scratch = BatchScratch::new(self.mesh.dim, ncu, nen);
                    for (e, (kslice, fslice)) in vals
                        .chunks_mut(stride_k)
                        .zip(fbuf.chunks_mut(stride_f))
                        .enumerate()
                    {
                        self.batched_element(e, state, &factors, kslice, fslice, &mut scratch);
                    }
                }
            }
        }

        // Scatter F sequentially in element order: deterministic sums.
        let n = self.dofmap.total_dofs();
        let mut f = vec![0.0; n];
        for e in 0..nel {
            let fe = &fbuf[e * stride_f..(e + 1) * stride_f];
            for (j, &dof) in self.dofmap.elem_dofs_u(e).iter().enumerate() {
                f[dof] += fe[j];
            }
            for (j, &dof) in self.dofmap.elem_dofs_e(e).iter().enumerate() {
                f[dof] += fe[ncu + j];
            }
        }

        Ok(SparseSystem {
            n,
            rows: Arc::clone(&self.rows),
            cols: Arc::clone(&self.cols),
            vals,
            extra: Vec::new(),
            f,
        })
    }

    /// Dense tangent blocks of one element: the reference (loop backend)
    /// integrand evaluation, term by term.
    pub fn element_blocks(&self, e: usize, state: &GpState) -> ElementBlocks {
        let dim = self.mesh.dim;
        let v = state.voigt;
        let ncu = self.dofmap.stride_u;
        let nen = self.dofmap.stride_e;
        let ngp = self.rule.len();
        let params = &self.params;
        let h = params.coupling_modulus;
        let cg = params.gradient_parameter;

        let coords_u = self.mesh.elem_coords_u(e);
        let coords_e = self.mesh.elem_coords_e(e);

        let mut blocks = ElementBlocks {
            k_uu: vec![0.0; ncu * ncu],
            k_ue: vec![0.0; ncu * nen],
            k_eu: vec![0.0; nen * ncu],
            k_ee: vec![0.0; nen * nen],
            f_u: vec![0.0; ncu],
            f_e: vec![0.0; nen],
        };

        for gp in 0..ngp {
            let i = e * ngp + gp;
            let p = self.rule.points[gp];
            let su = shape_functions(self.mesh.family_u, p);
            let se = shape_functions(self.mesh.family_e, p);
            let (dn_dx_u, det) = geometry_map(&coords_u, &su.dn_dxi, dim)
                .expect("geometry validated at construction");
            let (dn_dx_e, _) = geometry_map(&coords_e, &se.dn_dxi, dim)
                .expect("geometry validated at construction");
            let w = self.rule.weights[gp] * det;
            let mut b = vec![0.0; v * ncu];
            b_matrix(&dn_dx_u, dim, &mut b);

            let d = state.damage[i];
            let dd = state.ddamage[i];
            let ind = if state.loading[i] { 1.0 } else { 0.0 };
            let mismatch = h * (state.eeq[i] - state.micro[i]);
            let deeq = &state.deeq[i * v..(i + 1) * v];
            let hess = &state.heeq[i * v * v..(i + 1) * v * v];
            let strain = &state.strain[i * v..(i + 1) * v];
            let sigma = &state.sigma[i * v..(i + 1) * v];
            let grad = &state.grad_micro[i * dim..(i + 1) * dim];
            let (g, dg) = (state.g[i], state.dg[i]);

            // k_uu, term by term: (1-D) B'CB, then h (B'P)(B'P)',
            // then h (eeq - em) B' Hess B.
            let mut cb = vec![0.0; v * ncu];
            for r in 0..v {
                for j in 0..ncu {
                    let mut s = 0.0;
                    for t in 0..v {
                        s += self.c_matrix[r * v + t] * b[t * ncu + j];
                    }
                    cb[r * ncu + j] = s;
                }
            }
            for a in 0..ncu {
                for j in 0..ncu {
                    let mut s = 0.0;
                    for r in 0..v {
                        s += b[r * ncu + a] * cb[r * ncu + j];
                    }
                    blocks.k_uu[a * ncu + j] += w * (1.0 - d) * s;
                }
            }
            let mut bp = vec![0.0; ncu];
            for a in 0..ncu {
                let mut s = 0.0;
                for r in 0..v {
                    s += b[r * ncu + a] * deeq[r];
                }
                bp[a] = s;
            }
            for a in 0..ncu {
                for j in 0..ncu {
                    blocks.k_uu[a * ncu + j] += w * h * bp[a] * bp[j];
                }
            }
            let mut hb = vec![0.0; v * ncu];
            for r in 0..v {
                for j in 0..ncu {
                    let mut s = 0.0;
                    for t in 0..v {
                        s += hess[r * v + t] * b[t * ncu + j];
                    }
                    hb[r * ncu + j] = s;
                }
            }
            for a in 0..ncu {
                for j in 0..ncu {
                    let mut s = 0.0;
                    for r in 0..v {
                        s += b[r * ncu + a] * hb[r * ncu + j];
                    }
                    blocks.k_uu[a * ncu + j] += w * mismatch * s;
                }
            }

            // k_ue = -w B' (dD ind C strain + h P) N_e'.
            let mut t_vec = vec![0.0; v];
            for r in 0..v {
                let mut ce = 0.0;
                for t in 0..v {
                    ce += self.c_matrix[r * v + t] * strain[t];
                }
                t_vec[r] = dd * ind * ce + h * deeq[r];
            }
            let mut bt = vec![0.0; ncu];
            for a in 0..ncu {
                let mut s = 0.0;
                for r in 0..v {
                    s += b[r * ncu + a] * t_vec[r];
                }
                bt[a] = s;
            }
            for a in 0..ncu {
                for q in 0..nen {
                    blocks.k_ue[a * nen + q] -= w * bt[a] * se.n[q];
                }
            }

            // k_eu = -w h N_e (P' B).
            for q in 0..nen {
                for a in 0..ncu {
                    blocks.k_eu[q * ncu + a] -= w * h * se.n[q] * bp[a];
                }
            }

            // k_ee = w [h N N' + g h c B_e' B_e + h c dg dD ind (B_e'grad) N'].
            let mut beg = vec![0.0; nen];
            for q in 0..nen {
                let mut s = 0.0;
                for r in 0..dim {
                    s += dn_dx_e[q][r] * grad[r];
                }
                beg[q] = s;
            }
            for q1 in 0..nen {
                for q2 in 0..nen {
                    let mut bb = 0.0;
                    for r in 0..dim {
                        bb += dn_dx_e[q1][r] * dn_dx_e[q2][r];
                    }
                    blocks.k_ee[q1 * nen + q2] += w
                        * (h * se.n[q1] * se.n[q2]
                            + g * h * cg * bb
                            + h * cg * dg * dd * ind * beg[q1] * se.n[q2]);
                }
            }

            // f_u = -w B' sigma ; f_e = w [h (eeq - em) N - g h c B_e' grad].
            for a in 0..ncu {
                let mut s = 0.0;
                for r in 0..v {
                    s += b[r * ncu + a] * sigma[r];
                }
                blocks.f_u[a] -= w * s;
            }
            for q in 0..nen {
                blocks.f_e[q] += w * (mismatch * se.n[q] - g * h * cg * beg[q]);
            }
        }
        blocks
    }

    /// Single vectorized pass over all Gauss points producing the per-point
    /// integrand factors consumed by the batched element kernel.
    fn compute_factors(&self, state: &GpState) -> Factors {
        let v = state.voigt;
        let npts = state.npts;
        let h = self.params.coupling_modulus;
        let cg = self.params.gradient_parameter;
        let mut fx = Factors {
            m_mat: vec![0.0; npts * v * v],
            t_ue: vec![0.0; npts * v],
            p_eu: vec![0.0; npts * v],
            sig_w: vec![0.0; npts * v],
            c_ntn: vec![0.0; npts],
            c_btb: vec![0.0; npts],
            c_conv: vec![0.0; npts],
            sigbar_w: vec![0.0; npts],
        };
        for i in 0..npts {
            let w = self.batch.wdet[i];
            let d = state.damage[i];
            let dd = state.ddamage[i];
            let ind = if state.loading[i] { 1.0 } else { 0.0 };
            let mismatch = h * (state.eeq[i] - state.micro[i]);
            let deeq = &state.deeq[i * v..(i + 1) * v];
            let hess = &state.heeq[i * v * v..(i + 1) * v * v];
            let strain = &state.strain[i * v..(i + 1) * v];
            let m = &mut fx.m_mat[i * v * v..(i + 1) * v * v];
            for r in 0..v {
                for s in r..v {
                    let val = w
                        * ((1.0 - d) * self.c_matrix[r * v + s]
                            + h * deeq[r] * deeq[s]
                            + mismatch * hess[r * v + s]);
                    m[r * v + s] = val;
                    m[s * v + r] = val;
                }
            }
            for r in 0..v {
                let mut ce = 0.0;
                for t in 0..v {
                    ce += self.c_matrix[r * v + t] * strain[t];
                }
                fx.t_ue[i * v + r] = w * (dd * ind * ce + h * deeq[r]);
                fx.p_eu[i * v + r] = w * h * deeq[r];
                fx.sig_w[i * v + r] = w * state.sigma[i * v + r];
            }
            fx.c_ntn[i] = w * h;
            fx.c_btb[i] = w * state.g[i] * h * cg;
            fx.c_conv[i] = w * h * cg * state.dg[i] * dd * ind;
            fx.sigbar_w[i] = w * mismatch;
        }
        fx
    }

    /// Batched element kernel: consumes precomputed shape data and factor
    /// arrays, writes the element's triplet values and RHS slice.
    fn batched_element(
        &self,
        e: usize,
        state: &GpState,
        fx: &Factors,
        kslice: &mut [f64],
        fslice: &mut [f64],
        scratch: &mut BatchScratch,
    ) {
        let dim = self.mesh.dim;
        let v = state.voigt;
        let ncu = self.dofmap.stride_u;
        let nen = self.dofmap.stride_e;
        let ngp = self.rule.len();

        let (kuu, rest) = kslice.split_at_mut(ncu * ncu);
        let (kue, rest) = rest.split_at_mut(ncu * nen);
        let (keu, kee) = rest.split_at_mut(nen * ncu);
        let (fu, fe) = fslice.split_at_mut(ncu);

        for gp in 0..ngp {
            let i = e * ngp + gp;
            let b = &self.batch.b_u[i * v * ncu..(i + 1) * v * ncu];
            let n_e = &self.batch.n_e[i * nen..(i + 1) * nen];
            let b_e = &self.batch.b_e[i * dim * nen..(i + 1) * dim * nen];
            let m = &fx.m_mat[i * v * v..(i + 1) * v * v];

            // k_uu += B' (M B), exploiting symmetry of M B products.
            let mb = &mut scratch.mb[..v * ncu];
            for r in 0..v {
                for j in 0..ncu {
                    let mut s = 0.0;
                    for t in 0..v {
                        s += m[r * v + t] * b[t * ncu + j];
                    }
                    mb[r * ncu + j] = s;
                }
            }
            for a in 0..ncu {
                for j in a..ncu {
                    let mut s = 0.0;
                    for r in 0..v {
                        s += b[r * ncu + a] * mb[r * ncu + j];
                    }
                    kuu[a * ncu + j] += s;
                }
            }

            // k_ue -= (B' t) N' ; k_eu -= N (p' B).
            let t_vec = &fx.t_ue[i * v..(i + 1) * v];
            let p_vec = &fx.p_eu[i * v..(i + 1) * v];
            let sig = &fx.sig_w[i * v..(i + 1) * v];
            let bt = &mut scratch.bt[..ncu];
            let bp = &mut scratch.bp[..ncu];
            for a in 0..ncu {
                let mut st = 0.0;
                let mut sp = 0.0;
                let mut ss = 0.0;
                for r in 0..v {
                    let ba = b[r * ncu + a];
                    st += ba * t_vec[r];
                    sp += ba * p_vec[r];
                    ss += ba * sig[r];
                }
                bt[a] = st;
                bp[a] = sp;
                fu[a] -= ss;
            }
            for a in 0..ncu {
                for q in 0..nen {
                    kue[a * nen + q] -= bt[a] * n_e[q];
                }
            }
            for q in 0..nen {
                for a in 0..ncu {
                    keu[q * ncu + a] -= n_e[q] * bp[a];
                }
            }

            // k_ee and f_e.
            let grad = &state.grad_micro[i * dim..(i + 1) * dim];
            let (cn, cb, cc) = (fx.c_ntn[i], fx.c_btb[i], fx.c_conv[i]);
            let beg = &mut scratch.beg[..nen];
            for q in 0..nen {
                let mut s = 0.0;
                for r in 0..dim {
                    s += b_e[r * nen + q] * grad[r];
                }
                beg[q] = s;
            }
            for q1 in 0..nen {
                for q2 in 0..nen {
                    let mut bb = 0.0;
                    for r in 0..dim {
                        bb += b_e[r * nen + q1] * b_e[r * nen + q2];
                    }
                    kee[q1 * nen + q2] += cn * n_e[q1] * n_e[q2] + cb * bb + cc * beg[q1] * n_e[q2];
                }
            }
            let sb = fx.sigbar_w[i];
            for q in 0..nen {
                fe[q] += sb * n_e[q] - cb * beg[q];
            }
        }

        // Mirror the symmetric k_uu lower triangle.
        for a in 0..ncu {
            for j in 0..a {
                kuu[a * ncu + j] = kuu[j * ncu + a];
            }
        }
    }

    /// Unconstrained internal force vector of the displacement field,
    /// `sum B' sigma` over all elements (length `ndof_u`).
    pub fn internal_force(&self, state: &GpState) -> Vec<f64> {
        let v = state.voigt;
        let ncu = self.dofmap.stride_u;
        let ngp = self.rule.len();
        let mut f = vec![0.0; self.dofmap.ndof_u];
        for e in 0..self.mesh.element_count {
            let dofs = self.dofmap.elem_dofs_u(e);
            for gp in 0..ngp {
                let i = e * ngp + gp;
                let w = self.batch.wdet[i];
                let b = &self.batch.b_u[i * v * ncu..(i + 1) * v * ncu];
                let sigma = &state.sigma[i * v..(i + 1) * v];
                for (a, &dof) in dofs.iter().enumerate() {
                    let mut s = 0.0;
                    for r in 0..v {
                        s += b[r * ncu + a] * sigma[r];
                    }
                    f[dof] += w * s;
                }
            }
        }
        f
    }

    /// Reaction force: the internal force summed over the driven DOFs.
    pub fn reaction_force(&self, state: &GpState, constraints: &[Constraint]) -> f64 {
        let f = self.internal_force(state);
        constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::Driven)
            .map(|c| f[c.dof])
            .sum()
    }
}

struct Factors {
    /// Symmetrized, weight-scaled material tangent of k_uu, `voigt^2`/point.
    m_mat: Vec<f64>,
    t_ue: Vec<f64>,
    p_eu: Vec<f64>,
    sig_w: Vec<f64>,
    c_ntn: Vec<f64>,
    c_btb: Vec<f64>,
    c_conv: Vec<f64>,
    sigbar_w: Vec<f64>,
}

struct BatchScratch {
    mb: Vec<f64>,
    bt: Vec<f64>,
    bp: Vec<f64>,
    beg: Vec<f64>,
}

impl BatchScratch {
    fn new(dim: usize, ncu: usize, nen: usize) -> Self {
        let v = crate::fem::voigt_size(dim);
        BatchScratch {
            mb: vec![0.0; v * ncu],
            bt: vec![0.0; ncu],
            bp: vec![0.0; ncu],
            beg: vec![0.0; nen],
        }
    }
}

fn gather(solution: &[f64], dofs: &[usize], out: &mut [f64]) {
    for (o, &d) in out.iter_mut().zip(dofs) {
        *o = solution[d];
    }
}

/// Computes the kinematic fields (strain, interpolated micro strain and its
/// gradient) at point `i` from the element-local solution vectors.
#[allow(clippy::too_many_arguments)]
fn kinematics_at_point(
    state: &mut GpState,
    i: usize,
    b: &[f64],
    n_e: &[f64],
    b_e: &[f64],
    u_el: &[f64],
    e_el: &[f64],
    v: usize,
    dim: usize,
    ncu: usize,
    nen: usize,
) {
    for r in 0..v {
        let mut s = 0.0;
        for j in 0..ncu {
            s += b[r * ncu + j] * u_el[j];
        }
        state.strain[i * v + r] = s;
    }
    let mut m = 0.0;
    for q in 0..nen {
        m += n_e[q] * e_el[q];
    }
    state.micro[i] = m;
    for r in 0..dim {
        let mut s = 0.0;
        for q in 0..nen {
            s += b_e[r * nen + q] * e_el[q];
        }
        state.grad_micro[i * dim + r] = s;
    }
}

fn write_element(blocks: &ElementBlocks, kslice: &mut [f64], fslice: &mut [f64]) {
    let mut off = 0;
    for src in [&blocks.k_uu, &blocks.k_ue, &blocks.k_eu, &blocks.k_ee] {
        kslice[off..off + src.len()].copy_from_slice(src);
        off += src.len();
    }
    let ncu = blocks.f_u.len();
    fslice[..ncu].copy_from_slice(&blocks.f_u);
    fslice[ncu..].copy_from_slice(&blocks.f_e);
}

/// Symmetric Dirichlet elimination on the assembled system.
///
/// Constrained rows and columns are zeroed (column contributions moved to the
/// RHS), a unit diagonal is appended, and the RHS entry becomes the
/// prescribed increment: the step's displacement increment for driven DOFs on
/// the first iteration of a step, zero otherwise (the system solves for
/// corrections).
pub fn apply_dirichlet(
    system: &mut SparseSystem,
    constraints: &[Constraint],
    ndof_u: usize,
    step_increment: f64,
    first_iteration: bool,
) -> Result<()> {
    if constraints.is_empty() {
        return Ok(());
    }
    let mut prescribed: Vec<Option<f64>> = vec![None; system.n];
    for c in constraints {
        if c.dof >= ndof_u {
            return Err(LgdmError::UnsupportedConstraint(format!(
                "DOF {} is a micro-strain DOF; only displacement DOFs may be constrained",
                c.dof
            )));
        }
        let value = match c.kind {
            ConstraintKind::Fixed => 0.0,
            ConstraintKind::Driven => {
                if first_iteration {
                    step_increment
                } else {
                    0.0
                }
            }
        };
        prescribed[c.dof] = Some(value);
    }
    let rows = Arc::clone(&system.rows);
    let cols = Arc::clone(&system.cols);
    for ((&r, &c), v) in rows.iter().zip(cols.iter()).zip(system.vals.iter_mut()) {
        if prescribed[r].is_some() {
            *v = 0.0;
        } else if let Some(p) = prescribed[c] {
            system.f[r] -= *v * p;
            *v = 0.0;
        }
    }
    for (j, p) in prescribed.iter().enumerate() {
        if let Some(p) = p {
            system.extra.push((j, j, 1.0));
            system.f[j] = *p;
        }
    }
    Ok(())
}
