//! Element-level machinery: shape functions, Gauss quadrature, isoparametric
//! geometry mapping and strain-displacement matrices in Voigt notation.
//!
//! Voigt ordering is (1D) `[e11]`, (2D) `[e11, e22, g12]`,
//! (3D) `[e11, e22, e33, g12, g23, g13]` with engineering shear `g = 2 e_offdiag`.

use crate::error::{LgdmError, Result};

/// Element families used by the two interpolation fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementFamily {
    /// 2-node linear line (micro-strain field in 1D).
    Line2,
    /// 3-node quadratic line (displacement field in 1D), node order (left, mid, right).
    Line3,
    /// 4-node bilinear quadrilateral (micro-strain field in 2D).
    Quad4,
    /// 8-node serendipity quadrilateral (displacement field in 2D).
    Quad8,
    /// 8-node trilinear hexahedron (both fields in 3D).
    Hex8,
}

impl ElementFamily {
    pub fn node_count(self) -> usize {
        match self {
            ElementFamily::Line2 => 2,
            ElementFamily::Line3 => 3,
            ElementFamily::Quad4 => 4,
            ElementFamily::Quad8 => 8,
            ElementFamily::Hex8 => 8,
        }
    }

    pub fn dim(self) -> usize {
        match self {
            ElementFamily::Line2 | ElementFamily::Line3 => 1,
            ElementFamily::Quad4 | ElementFamily::Quad8 => 2,
            ElementFamily::Hex8 => 3,
        }
    }
}

/// Number of Voigt strain components for a spatial dimension.
pub fn voigt_size(dim: usize) -> usize {
    match dim {
        1 => 1,
        2 => 3,
        3 => 6,
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// A quadrature rule on the reference element.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn gauss_1d(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        2 => {
            let a = 1.0 / 3.0_f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (3.0 / 5.0_f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        _ => panic!("unsupported 1D Gauss order {n}"),
    }
}

/// Full-integration Gauss rule for an element family.
///
/// line3 gets 3 points, quad8 gets 3x3, quad4 and hex8 get full 2x2 / 2x2x2.
/// Both fields of a coupled element share the displacement field's rule so
/// solution-dependent variables live at a single Gauss point set per element.
pub fn gauss_rule(family: ElementFamily) -> QuadratureRule {
    let order = match family {
        ElementFamily::Line2 => 2,
        ElementFamily::Line3 => 3,
        ElementFamily::Quad4 => 2,
        ElementFamily::Quad8 => 3,
        ElementFamily::Hex8 => 2,
    };
    let (pts, wts) = gauss_1d(order);
    let dim = family.dim();
    let mut points = Vec::new();
    let mut weights = Vec::new();
    match dim {
        1 => {
            for (p, w) in pts.iter().zip(&wts) {
                points.push([*p, 0.0, 0.0]);
                weights.push(*w);
            }
        }
        2 => {
            for (px, wx) in pts.iter().zip(&wts) {
                for (py, wy) in pts.iter().zip(&wts) {
                    points.push([*px, *py, 0.0]);
                    weights.push(wx * wy);
                }
            }
        }
        3 => {
            for (px, wx) in pts.iter().zip(&wts) {
                for (py, wy) in pts.iter().zip(&wts) {
                    for (pz, wz) in pts.iter().zip(&wts) {
                        points.push([*px, *py, *pz]);
                        weights.push(wx * wy * wz);
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    QuadratureRule { points, weights }
}

/// Shape functions and their reference-coordinate derivatives at one point.
#[derive(Debug, Clone)]
pub struct ShapeEval {
    pub n: Vec<f64>,
    pub dn_dxi: Vec<[f64; 3]>,
}

/// Evaluates shape functions and reference derivatives for `family` at a
/// local coordinate.  Satisfies partition of unity and the nodal
/// interpolation property.
pub fn shape_functions(family: ElementFamily, xi: [f64; 3]) -> ShapeEval {
    let (x, y, z) = (xi[0], xi[1], xi[2]);
    match family {
        ElementFamily::Line2 => ShapeEval {
            n: vec![0.5 * (1.0 - x), 0.5 * (1.0 + x)],
            dn_dxi: vec![[-0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
        },
        ElementFamily::Line3 => ShapeEval {
            n: vec![0.5 * x * (x - 1.0), 1.0 - x * x, 0.5 * x * (x + 1.0)],
            dn_dxi: vec![[x - 0.5, 0.0, 0.0], [-2.0 * x, 0.0, 0.0], [x + 0.5, 0.0, 0.0]],
        },
        ElementFamily::Quad4 => {
            const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
            const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
            let mut n = Vec::with_capacity(4);
            let mut dn = Vec::with_capacity(4);
            for a in 0..4 {
                n.push(0.25 * (1.0 + x * XI[a]) * (1.0 + y * ETA[a]));
                dn.push([
                    0.25 * XI[a] * (1.0 + y * ETA[a]),
                    0.25 * ETA[a] * (1.0 + x * XI[a]),
                    0.0,
                ]);
            }
            ShapeEval { n, dn_dxi: dn }
        }
        ElementFamily::Quad8 => {
            // Corners 0-3 counterclockwise from (-1,-1), midsides 4-7 starting
            // at the bottom edge.
            const XI: [f64; 4] = [-1.0, 1.0, 1.0, -1.0];
            const ETA: [f64; 4] = [-1.0, -1.0, 1.0, 1.0];
            let mut n = vec![0.0; 8];
            let mut dn = vec![[0.0; 3]; 8];
            for a in 0..4 {
                let (xa, ya) = (XI[a], ETA[a]);
                n[a] = 0.25 * (1.0 + x * xa) * (1.0 + y * ya) * (x * xa + y * ya - 1.0);
                dn[a] = [
                    0.25 * xa * (1.0 + y * ya) * (2.0 * x * xa + y * ya),
                    0.25 * ya * (1.0 + x * xa) * (x * xa + 2.0 * y * ya),
                    0.0,
                ];
            }
            // Midside nodes: (0,-1), (1,0), (0,1), (-1,0).
            n[4] = 0.5 * (1.0 - x * x) * (1.0 - y);
            dn[4] = [-x * (1.0 - y), -0.5 * (1.0 - x * x), 0.0];
            n[5] = 0.5 * (1.0 + x) * (1.0 - y * y);
            dn[5] = [0.5 * (1.0 - y * y), -y * (1.0 + x), 0.0];
            n[6] = 0.5 * (1.0 - x * x) * (1.0 + y);
            dn[6] = [-x * (1.0 + y), 0.5 * (1.0 - x * x), 0.0];
            n[7] = 0.5 * (1.0 - x) * (1.0 - y * y);
            dn[7] = [-0.5 * (1.0 - y * y), -y * (1.0 - x), 0.0];
            ShapeEval { n, dn_dxi: dn }
        }
        ElementFamily::Hex8 => {
            const XI: [f64; 8] = [-1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0];
            const ETA: [f64; 8] = [-1.0, -1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0];
            const ZETA: [f64; 8] = [-1.0, -1.0, -1.0, -1.0, 1.0, 1.0, 1.0, 1.0];
            let mut n = Vec::with_capacity(8);
            let mut dn = Vec::with_capacity(8);
            for a in 0..8 {
                let (xa, ya, za) = (XI[a], ETA[a], ZETA[a]);
                n.push(0.125 * (1.0 + x * xa) * (1.0 + y * ya) * (1.0 + z * za));
                dn.push([
                    0.125 * xa * (1.0 + y * ya) * (1.0 + z * za),
                    0.125 * ya * (1.0 + x * xa) * (1.0 + z * za),
                    0.125 * za * (1.0 + x * xa) * (1.0 + y * ya),
                ]);
            }
            ShapeEval { n, dn_dxi: dn }
        }
    }
}

/// Maps reference derivatives to physical derivatives: `dn_dx = dn_dxi * J^-1`.
///
/// Returns the physical derivatives and `det J`.  A non-positive Jacobian is
/// an error; the caller attaches the element index.
pub fn geometry_map(
    node_coords: &[[f64; 3]],
    dn_dxi: &[[f64; 3]],
    dim: usize,
) -> Result<(Vec<[f64; 3]>, f64)> {
    debug_assert_eq!(node_coords.len(), dn_dxi.len());
    // J[r][c] = d x_c / d xi_r
    let mut j = [[0.0_f64; 3]; 3];
    for r in 0..dim {
        for c in 0..dim {
            let mut s = 0.0;
            for (a, coords) in node_coords.iter().enumerate() {
                s += dn_dxi[a][r] * coords[c];
            }
            j[r][c] = s;
        }
    }
    let (det, inv) = invert(&j, dim);
    if !(det > 0.0) {
        return Err(LgdmError::InvertedElement { element: usize::MAX, det_j: det });
    }
    let mut dn_dx = vec![[0.0_f64; 3]; dn_dxi.len()];
    // dN_a/dx_c = sum_r dN_a/dxi_r * dxi_r/dx_c, with dxi_r/dx_c = inv[c][r].
    for (a, d) in dn_dxi.iter().enumerate() {
        for c in 0..dim {
            let mut s = 0.0;
            for r in 0..dim {
                s += d[r] * inv[c][r];
            }
            dn_dx[a][c] = s;
        }
    }
    Ok((dn_dx, det))
}

fn invert(j: &[[f64; 3]; 3], dim: usize) -> (f64, [[f64; 3]; 3]) {
    let mut inv = [[0.0_f64; 3]; 3];
    match dim {
        1 => {
            let det = j[0][0];
            inv[0][0] = 1.0 / det;
            (det, inv)
        }
        2 => {
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let id = 1.0 / det;
            inv[0][0] = j[1][1] * id;
            inv[0][1] = -j[0][1] * id;
            inv[1][0] = -j[1][0] * id;
            inv[1][1] = j[0][0] * id;
            (det, inv)
        }
        3 => {
            let c00 = j[1][1] * j[2][2] - j[1][2] * j[2][1];
            let c01 = j[1][2] * j[2][0] - j[1][0] * j[2][2];
            let c02 = j[1][0] * j[2][1] - j[1][1] * j[2][0];
            let det = j[0][0] * c00 + j[0][1] * c01 + j[0][2] * c02;
            let id = 1.0 / det;
            inv[0][0] = c00 * id;
            inv[1][0] = c01 * id;
            inv[2][0] = c02 * id;
            inv[0][1] = (j[0][2] * j[2][1] - j[0][1] * j[2][2]) * id;
            inv[1][1] = (j[0][0] * j[2][2] - j[0][2] * j[2][0]) * id;
            inv[2][1] = (j[0][1] * j[2][0] - j[0][0] * j[2][1]) * id;
            inv[0][2] = (j[0][1] * j[1][2] - j[0][2] * j[1][1]) * id;
            inv[1][2] = (j[0][2] * j[1][0] - j[0][0] * j[1][2]) * id;
            inv[2][2] = (j[0][0] * j[1][1] - j[0][1] * j[1][0]) * id;
            (det, inv)
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}

/// Builds the strain-displacement matrix `B_u` (voigt_size x dim*node_count,
/// row major) from physical shape derivatives.  DOF columns are node-major:
/// `(u_x0, u_y0, ..., u_x1, ...)`.
pub fn b_matrix(dn_dx: &[[f64; 3]], dim: usize, out: &mut [f64]) {
    let nen = dn_dx.len();
    let ncols = dim * nen;
    debug_assert_eq!(out.len(), voigt_size(dim) * ncols);
    out.fill(0.0);
    match dim {
        1 => {
            for (a, d) in dn_dx.iter().enumerate() {
                out[a] = d[0];
            }
        }
        2 => {
            for (a, d) in dn_dx.iter().enumerate() {
                let (cx, cy) = (2 * a, 2 * a + 1);
                out[cx] = d[0];
                out[ncols + cy] = d[1];
                out[2 * ncols + cx] = d[1];
                out[2 * ncols + cy] = d[0];
            }
        }
        3 => {
            for (a, d) in dn_dx.iter().enumerate() {
                let (cx, cy, cz) = (3 * a, 3 * a + 1, 3 * a + 2);
                out[cx] = d[0];
                out[ncols + cy] = d[1];
                out[2 * ncols + cz] = d[2];
                // g12
                out[3 * ncols + cx] = d[1];
                out[3 * ncols + cy] = d[0];
                // g23
                out[4 * ncols + cy] = d[2];
                out[4 * ncols + cz] = d[1];
                // g13
                out[5 * ncols + cx] = d[2];
                out[5 * ncols + cz] = d[0];
            }
        }
        _ => panic!("unsupported dimension {dim}"),
    }
}
