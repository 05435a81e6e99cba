//! Structured 1D/2D/3D mesh generation for the two coincident interpolation
//! fields, slit (notch) carving by node duplication, and the global DOF map.
//!
//! Node numbering is lexicographic by (x, y, z) so sparsity patterns and all
//! downstream outputs are reproducible.  Slit duplicates are appended after
//! the lattice nodes in ascending original-index order.

use crate::error::{LgdmError, Result};
use crate::fem::{gauss_rule, geometry_map, shape_functions, ElementFamily};
use std::collections::HashMap;

/// A two-field mesh: the displacement field and the micro-strain field share
/// element domains but may use different interpolation orders.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub family_u: ElementFamily,
    pub family_e: ElementFamily,
    pub node_coords_u: Vec<[f64; 3]>,
    pub node_coords_e: Vec<[f64; 3]>,
    /// Flat connectivity, stride `family_u.node_count()`.
    pub conn_u: Vec<usize>,
    /// Flat connectivity, stride `family_e.node_count()`.
    pub conn_e: Vec<usize>,
    pub element_count: usize,
    /// For each micro-strain node, the geometrically coincident displacement
    /// node (used when sampling u at output points).
    pub e_to_u: Vec<usize>,
}

impl Mesh {
    pub fn elem_conn_u(&self, e: usize) -> &[usize] {
        let n = self.family_u.node_count();
        &self.conn_u[e * n..(e + 1) * n]
    }

    pub fn elem_conn_e(&self, e: usize) -> &[usize] {
        let n = self.family_e.node_count();
        &self.conn_e[e * n..(e + 1) * n]
    }

    /// Coordinates of one element's displacement-field nodes.
    pub fn elem_coords_u(&self, e: usize) -> Vec<[f64; 3]> {
        self.elem_conn_u(e)
            .iter()
            .map(|&n| self.node_coords_u[n])
            .collect()
    }

    pub fn elem_coords_e(&self, e: usize) -> Vec<[f64; 3]> {
        self.elem_conn_e(e)
            .iter()
            .map(|&n| self.node_coords_e[n])
            .collect()
    }

    /// Total mesh volume computed by quadrature (length/area/volume by dim).
    pub fn quadrature_volume(&self) -> Result<f64> {
        let rule = gauss_rule(self.family_u);
        let shapes: Vec<_> = rule
            .points
            .iter()
            .map(|&p| shape_functions(self.family_u, p))
            .collect();
        let mut total = 0.0;
        for e in 0..self.element_count {
            let coords = self.elem_coords_u(e);
            for (s, w) in shapes.iter().zip(&rule.weights) {
                let (_, det) = geometry_map(&coords, &s.dn_dxi, self.dim)
                    .map_err(|err| err.with_element(e))?;
                total += w * det;
            }
        }
        Ok(total)
    }
}

/// Axis-aligned slit specification: the slit lies in the plane
/// `coord[normal_axis] == plane` and spans `coord[along_axis]` in
/// `[start, start + length)`; in 3D it extends through the full remaining
/// axis.  The tip node at `start + length` stays shared.
#[derive(Debug, Clone, Copy)]
pub struct NotchSpec {
    pub normal_axis: usize,
    pub plane: f64,
    pub along_axis: usize,
    pub start: f64,
    pub length: f64,
}

/// Global DOF numbering: all displacement DOFs first (node-major, component
/// minor), then one micro-strain DOF per micro-strain node.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub dim: usize,
    pub ndof_u: usize,
    pub ndof_e: usize,
    /// Flat per-element gather lists, stride `dim * family_u.node_count()`.
    pub gather_u: Vec<usize>,
    /// Flat per-element gather lists (global indices), stride
    /// `family_e.node_count()`.
    pub gather_e: Vec<usize>,
    pub stride_u: usize,
    pub stride_e: usize,
}

impl DofMap {
    pub fn total_dofs(&self) -> usize {
        self.ndof_u + self.ndof_e
    }

    pub fn elem_dofs_u(&self, e: usize) -> &[usize] {
        &self.gather_u[e * self.stride_u..(e + 1) * self.stride_u]
    }

    pub fn elem_dofs_e(&self, e: usize) -> &[usize] {
        &self.gather_e[e * self.stride_e..(e + 1) * self.stride_e]
    }
}

/// Displacement boundary condition on a single DOF.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Fixed,
    /// Driven DOFs advance by the step increment each load step; reactions
    /// are reported as the sum of their conjugate internal forces.
    Driven,
}

#[derive(Debug, Clone, Copy)]
pub struct Constraint {
    pub dof: usize,
    pub kind: ConstraintKind,
}

fn lattice_coord(i: i64, half_spacing: f64) -> f64 {
    i as f64 * half_spacing
}

/// Builds a structured mesh of a `dim`-dimensional box.
///
/// `extents` and `divisions` use the first `dim` entries.  1D pairs quadratic
/// displacement lines with linear micro-strain lines; 2D pairs 8-node
/// serendipity quads with 4-node quads (corners geometrically shared); 3D
/// uses trilinear hexahedra for both fields.
pub fn build_structured_mesh(dim: usize, extents: &[f64], divisions: &[usize]) -> Result<Mesh> {
    if !(1..=3).contains(&dim) {
        return Err(LgdmError::InvalidArgument(format!("dim must be 1..3, got {dim}")));
    }
    if extents.len() < dim || divisions.len() < dim {
        return Err(LgdmError::InvalidArgument(
            "extents/divisions shorter than dim".into(),
        ));
    }
    for a in 0..dim {
        if !(extents[a] > 0.0) {
            return Err(LgdmError::InvalidArgument(format!(
                "extent[{a}] must be > 0, got {}",
                extents[a]
            )));
        }
        if divisions[a] == 0 {
            return Err(LgdmError::InvalidArgument(format!("divisions[{a}] must be >= 1")));
        }
    }

    let n = [
        divisions[0] as i64,
        if dim > 1 { divisions[1] as i64 } else { 0 },
        if dim > 2 { divisions[2] as i64 } else { 0 },
    ];
    // Half spacings: the u-field lattice in 1D/2D includes mid-edge points.
    let half = [
        extents[0] / (2.0 * n[0] as f64),
        if dim > 1 { extents[1] / (2.0 * n[1] as f64) } else { 0.0 },
        if dim > 2 { extents[2] / (2.0 * n[2] as f64) } else { 0.0 },
    ];

    // Integer lattice points for each field, in units of half-spacing.
    let mut pts_u: Vec<[i64; 3]> = Vec::new();
    let mut pts_e: Vec<[i64; 3]> = Vec::new();
    let (family_u, family_e);
    match dim {
        1 => {
            family_u = ElementFamily::Line3;
            family_e = ElementFamily::Line2;
            for i in 0..=2 * n[0] {
                pts_u.push([i, 0, 0]);
            }
            for i in 0..=n[0] {
                pts_e.push([2 * i, 0, 0]);
            }
        }
        2 => {
            family_u = ElementFamily::Quad8;
            family_e = ElementFamily::Quad4;
            for i in 0..=2 * n[0] {
                for j in 0..=2 * n[1] {
                    if i % 2 == 1 && j % 2 == 1 {
                        continue;
                    }
                    pts_u.push([i, j, 0]);
                }
            }
            for i in 0..=n[0] {
                for j in 0..=n[1] {
                    pts_e.push([2 * i, 2 * j, 0]);
                }
            }
        }
        3 => {
            family_u = ElementFamily::Hex8;
            family_e = ElementFamily::Hex8;
            for i in 0..=n[0] {
                for j in 0..=n[1] {
                    for k in 0..=n[2] {
                        pts_u.push([2 * i, 2 * j, 2 * k]);
                    }
                }
            }
            pts_e = pts_u.clone();
        }
        _ => unreachable!(),
    }
    pts_u.sort_unstable();
    pts_e.sort_unstable();

    let index_u: HashMap<[i64; 3], usize> =
        pts_u.iter().enumerate().map(|(i, &p)| (p, i)).collect();
    let index_e: HashMap<[i64; 3], usize> =
        pts_e.iter().enumerate().map(|(i, &p)| (p, i)).collect();

    let to_coords = |pts: &[[i64; 3]]| -> Vec<[f64; 3]> {
        pts.iter()
            .map(|p| {
                [
                    lattice_coord(p[0], half[0]),
                    lattice_coord(p[1], half[1]),
                    lattice_coord(p[2], half[2]),
                ]
            })
            .collect()
    };
    let node_coords_u = to_coords(&pts_u);
    let node_coords_e = to_coords(&pts_e);
    let e_to_u: Vec<usize> = pts_e.iter().map(|p| index_u[p]).collect();

    // Elements in lexicographic (ex, ey, ez) order.
    let mut conn_u = Vec::new();
    let mut conn_e = Vec::new();
    let mut element_count = 0usize;
    match dim {
        1 => {
            for ex in 0..n[0] {
                conn_u.extend([index_u[&[2 * ex, 0, 0]], index_u[&[2 * ex + 1, 0, 0]], index_u[&[2 * ex + 2, 0, 0]]]);
                conn_e.extend([index_e[&[2 * ex, 0, 0]], index_e[&[2 * ex + 2, 0, 0]]]);
                element_count += 1;
            }
        }
        2 => {
            for ex in 0..n[0] {
                for ey in 0..n[1] {
                    let (x0, y0) = (2 * ex, 2 * ey);
                    // Corners counterclockwise from the lower-left, then
                    // midsides bottom, right, top, left.
                    conn_u.extend([
                        index_u[&[x0, y0, 0]],
                        index_u[&[x0 + 2, y0, 0]],
                        index_u[&[x0 + 2, y0 + 2, 0]],
                        index_u[&[x0, y0 + 2, 0]],
                        index_u[&[x0 + 1, y0, 0]],
                        index_u[&[x0 + 2, y0 + 1, 0]],
                        index_u[&[x0 + 1, y0 + 2, 0]],
                        index_u[&[x0, y0 + 1, 0]],
                    ]);
                    conn_e.extend([
                        index_e[&[x0, y0, 0]],
                        index_e[&[x0 + 2, y0, 0]],
                        index_e[&[x0 + 2, y0 + 2, 0]],
                        index_e[&[x0, y0 + 2, 0]],
                    ]);
                    element_count += 1;
                }
            }
        }
        3 => {
            for ex in 0..n[0] {
                for ey in 0..n[1] {
                    for ez in 0..n[2] {
                        let (x0, y0, z0) = (2 * ex, 2 * ey, 2 * ez);
                        let corners = [
                            [x0, y0, z0],
                            [x0 + 2, y0, z0],
                            [x0 + 2, y0 + 2, z0],
                            [x0, y0 + 2, z0],
                            [x0, y0, z0 + 2],
                            [x0 + 2, y0, z0 + 2],
                            [x0 + 2, y0 + 2, z0 + 2],
                            [x0, y0 + 2, z0 + 2],
                        ];
                        for c in corners {
                            conn_u.push(index_u[&c]);
                            conn_e.push(index_e[&c]);
                        }
                        element_count += 1;
                    }
                }
            }
        }
        _ => unreachable!(),
    }

    Ok(Mesh {
        dim,
        family_u,
        family_e,
        node_coords_u,
        node_coords_e,
        conn_u,
        conn_e,
        element_count,
        e_to_u,
    })
}

/// Carves a sharp slit into the mesh by duplicating the nodes on the slit
/// interior so elements on either side reference distinct copies.
///
/// A zero-length slit returns the mesh unchanged.  The slit must lie on a
/// mesh line: if its plane carries no nodes in the slit range, the geometry
/// is rejected.
pub fn carve_notch(mut mesh: Mesh, spec: &NotchSpec) -> Result<Mesh> {
    if spec.length <= 0.0 {
        return Ok(mesh);
    }
    if spec.normal_axis >= mesh.dim || spec.along_axis >= mesh.dim
        || spec.normal_axis == spec.along_axis
    {
        return Err(LgdmError::UnsupportedGeometry(format!(
            "notch axes invalid for dim {}: normal {}, along {}",
            mesh.dim, spec.normal_axis, spec.along_axis
        )));
    }

    // Geometric tolerance: a fraction of the smallest node spacing found on
    // the slit axis.
    let tol = {
        let mut xs: Vec<f64> = mesh
            .node_coords_u
            .iter()
            .map(|p| p[spec.along_axis])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        let mut min_gap = f64::INFINITY;
        for w in xs.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
        if min_gap.is_finite() { min_gap * 1e-6 } else { 1e-12 }
    };

    let on_slit = |p: &[f64; 3]| -> bool {
        (p[spec.normal_axis] - spec.plane).abs() <= tol
            && p[spec.along_axis] >= spec.start - tol
            && p[spec.along_axis] < spec.start + spec.length - tol
    };

    let dup_field = |coords: &mut Vec<[f64; 3]>| -> HashMap<usize, usize> {
        let mut map = HashMap::new();
        let orig_len = coords.len();
        for i in 0..orig_len {
            if on_slit(&coords[i]) {
                map.insert(i, coords.len());
                let p = coords[i];
                coords.push(p);
            }
        }
        map
    };
    let dup_u = dup_field(&mut mesh.node_coords_u);
    let dup_e = dup_field(&mut mesh.node_coords_e);
    if dup_u.is_empty() {
        return Err(LgdmError::UnsupportedGeometry(
            "notch plane carries no mesh nodes; slit must follow mesh lines".into(),
        ));
    }
    if dup_e.is_empty() {
        // Only mid-side nodes sit on the plane, so it bisects an element row
        // instead of following inter-element boundaries.
        return Err(LgdmError::UnsupportedGeometry(
            "notch plane cuts through element interiors; slit must follow element boundaries"
                .into(),
        ));
    }

    // Extend the coincidence map for the duplicates.
    let mut extra: Vec<(usize, usize)> = dup_e
        .iter()
        .map(|(&orig, &dup)| (dup, dup_u[&mesh.e_to_u[orig]]))
        .collect();
    extra.sort_unstable();
    let old_len = mesh.e_to_u.len();
    mesh.e_to_u.resize(old_len + extra.len(), 0);
    for (dup, u) in extra {
        mesh.e_to_u[dup] = u;
    }

    // Elements whose centroid lies above the slit plane reference the copies.
    let nen_u = mesh.family_u.node_count();
    let nen_e = mesh.family_e.node_count();
    for e in 0..mesh.element_count {
        let mut centroid = 0.0;
        for &n in &mesh.conn_u[e * nen_u..(e + 1) * nen_u] {
            centroid += mesh.node_coords_u[n][spec.normal_axis];
        }
        centroid /= nen_u as f64;
        if centroid > spec.plane {
            for n in &mut mesh.conn_u[e * nen_u..(e + 1) * nen_u] {
                if let Some(&d) = dup_u.get(n) {
                    *n = d;
                }
            }
            for n in &mut mesh.conn_e[e * nen_e..(e + 1) * nen_e] {
                if let Some(&d) = dup_e.get(n) {
                    *n = d;
                }
            }
        }
    }
    Ok(mesh)
}

/// Builds the global DOF map: displacement DOFs node-major (`dim` per node),
/// followed by one micro-strain DOF per micro-strain node.
pub fn build_dof_map(mesh: &Mesh) -> DofMap {
    let dim = mesh.dim;
    let ndof_u = dim * mesh.node_coords_u.len();
    let ndof_e = mesh.node_coords_e.len();
    let nen_u = mesh.family_u.node_count();
    let nen_e = mesh.family_e.node_count();
    let mut gather_u = Vec::with_capacity(mesh.element_count * nen_u * dim);
    let mut gather_e = Vec::with_capacity(mesh.element_count * nen_e);
    for e in 0..mesh.element_count {
        for &n in mesh.elem_conn_u(e) {
            for c in 0..dim {
                gather_u.push(dim * n + c);
            }
        }
        for &n in mesh.elem_conn_e(e) {
            gather_e.push(ndof_u + n);
        }
    }
    DofMap {
        dim,
        ndof_u,
        ndof_e,
        gather_u,
        gather_e,
        stride_u: nen_u * dim,
        stride_e: nen_e,
    }
}

impl LgdmError {
    /// Attaches the element index to an inverted-element error produced by
    /// the element-local geometry map.
    pub fn with_element(self, element: usize) -> Self {
        match self {
            LgdmError::InvertedElement { det_j, .. } => {
                LgdmError::InvertedElement { element, det_j }
            }
            other => other,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_counts() {
        let m = build_structured_mesh(1, &[100.0], &[4]).unwrap();
        assert_eq!(m.node_coords_u.len(), 9);
        assert_eq!(m.node_coords_e.len(), 5);
        assert_eq!(m.element_count, 4);
        let d = build_dof_map(&m);
        assert_eq!(d.ndof_u, 9);
        assert_eq!(d.ndof_e, 5);
        assert_eq!(d.total_dofs(), 14);
        assert_eq!(d.elem_dofs_e(0)[0], 9);
    }

    #[test]
    fn single_quad_counts() {
        let m = build_structured_mesh(2, &[1.0, 1.0], &[1, 1]).unwrap();
        assert_eq!(m.node_coords_u.len(), 8);
        assert_eq!(m.node_coords_e.len(), 4);
        assert_eq!(m.element_count, 1);
        let d = build_dof_map(&m);
        assert_eq!(d.ndof_u, 16);
        assert_eq!(d.ndof_e, 4);
    }

    #[test]
    fn single_hex_counts() {
        let m = build_structured_mesh(3, &[1.0, 1.0, 1.0], &[1, 1, 1]).unwrap();
        assert_eq!(m.node_coords_u.len(), 8);
        assert_eq!(m.node_coords_e.len(), 8);
        let d = build_dof_map(&m);
        assert_eq!(d.ndof_u, 24);
        assert_eq!(d.ndof_e, 8);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_structured_mesh(1, &[0.0], &[4]).is_err());
        assert!(build_structured_mesh(2, &[1.0, 1.0], &[0, 3]).is_err());
        assert!(build_structured_mesh(4, &[1.0; 4], &[1; 4]).is_err());
    }

    #[test]
    fn volumes_match_box() {
        let cases: [(usize, Vec<f64>, Vec<usize>, f64); 3] = [
            (1, vec![100.0], vec![7], 100.0),
            (2, vec![100.0, 50.0], vec![5, 3], 5000.0),
            (3, vec![10.0, 20.0, 5.0], vec![3, 4, 2], 1000.0),
        ];
        for (dim, ext, div, want) in cases {
            let m = build_structured_mesh(dim, &ext, &div).unwrap();
            let v = m.quadrature_volume().unwrap();
            assert!((v - want).abs() < 1e-10 * want, "dim {dim}: {v}");
        }
    }

    #[test]
    fn positive_jacobians_everywhere() {
        let m = build_structured_mesh(2, &[100.0, 100.0], &[4, 4]).unwrap();
        assert!(m.quadrature_volume().is_ok());
    }

    #[test]
    fn coincidence_map_is_geometric() {
        let m = build_structured_mesh(2, &[2.0, 3.0], &[2, 3]).unwrap();
        for (e_idx, &u_idx) in m.e_to_u.iter().enumerate() {
            assert_eq!(m.node_coords_e[e_idx], m.node_coords_u[u_idx]);
        }
    }

    #[test]
    fn notch_duplicates_interior_nodes_only() {
        // 2x2 mesh on [0,2]^2, slit at y=1 from x=0 of length 1: u-field
        // slit nodes at x in {0, 0.5} on y=1 (tip x=1 excluded), e-field at
        // x=0 only.
        let m = build_structured_mesh(2, &[2.0, 2.0], &[2, 2]).unwrap();
        let nu = m.node_coords_u.len();
        let ne = m.node_coords_e.len();
        let spec = NotchSpec {
            normal_axis: 1,
            plane: 1.0,
            along_axis: 0,
            start: 0.0,
            length: 1.0,
        };
        let n = carve_notch(m, &spec).unwrap();
        assert_eq!(n.node_coords_u.len(), nu + 2);
        assert_eq!(n.node_coords_e.len(), ne + 1);
        assert_eq!(n.element_count, 4);
        // Coincidence map still geometric after duplication.
        for (e_idx, &u_idx) in n.e_to_u.iter().enumerate() {
            assert_eq!(n.node_coords_e[e_idx], n.node_coords_u[u_idx]);
        }
        // The volume is unchanged: slits have zero measure.
        let v = n.quadrature_volume().unwrap();
        assert!((v - 4.0).abs() < 1e-12);
    }

    #[test]
    fn zero_length_notch_is_identity() {
        let m = build_structured_mesh(2, &[2.0, 2.0], &[2, 2]).unwrap();
        let before = m.node_coords_u.len();
        let spec = NotchSpec {
            normal_axis: 1,
            plane: 1.0,
            along_axis: 0,
            start: 0.0,
            length: 0.0,
        };
        let n = carve_notch(m, &spec).unwrap();
        assert_eq!(n.node_coords_u.len(), before);
    }

    #[test]
    fn misaligned_notch_rejected() {
        let m = build_structured_mesh(2, &[2.0, 2.0], &[2, 2]).unwrap();
        let spec = NotchSpec {
            normal_axis: 1,
            plane: 0.77,
            along_axis: 0,
            start: 0.0,
            length: 1.0,
        };
        assert!(carve_notch(m, &spec).is_err());
    }

    #[test]
    fn notch_in_3d_spans_thickness() {
        let m = build_structured_mesh(3, &[2.0, 2.0, 1.0], &[2, 2, 1]).unwrap();
        let nu = m.node_coords_u.len();
        let spec = NotchSpec {
            normal_axis: 1,
            plane: 1.0,
            along_axis: 0,
            start: 0.0,
            length: 1.0,
        };
        let n = carve_notch(m, &spec).unwrap();
        // One column of nodes at (x=0, y=1) across 2 z-levels duplicated.
        assert_eq!(n.node_coords_u.len(), nu + 2);
    }

    #[test]
    fn gather_lists_round_trip() {
        let m = build_structured_mesh(2, &[1.0, 1.0], &[2, 2]).unwrap();
        let d = build_dof_map(&m);
        for e in 0..m.element_count {
            let dofs_u = d.elem_dofs_u(e);
            let dofs_e = d.elem_dofs_e(e);
            let mut seen: Vec<usize> = dofs_u.to_vec();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen.len(), dofs_u.len(), "duplicate u DOF in element {e}");
            for &g in dofs_u {
                assert!(g < d.ndof_u);
            }
            for &g in dofs_e {
                assert!((d.ndof_u..d.total_dofs()).contains(&g));
            }
        }
    }

    #[test]
    fn lexicographic_node_order() {
        let m = build_structured_mesh(2, &[2.0, 2.0], &[2, 2]).unwrap();
        for w in m.node_coords_u.windows(2) {
            let a = (w[0][0], w[0][1], w[0][2]);
            let b = (w[1][0], w[1][1], w[1][2]);
            assert!(a < b, "nodes out of order: {a:?} !< {b:?}");
        }
    }
}
