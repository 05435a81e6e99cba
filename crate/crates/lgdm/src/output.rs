//! Result writers: load-displacement CSV and legacy-ASCII VTK field files.
//!
//! All numeric output uses shortest round-trip formatting, so identical
//! results produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::fem::ElementFamily;
use crate::mesh::{DofMap, Mesh};
use crate::solver::{SimulationResult, Snapshot};

/// Renders the per-step load-displacement table.
pub fn load_displacement_csv(result: &SimulationResult) -> String {
    let mut out = String::from("step,applied_displacement_mm,reaction,iterations\n");
    for r in &result.steps {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.applied, r.reaction, r.iterations);
    }
    out
}

/// Writes the load-displacement table to `path`.
pub fn write_load_displacement_csv(result: &SimulationResult, path: &Path) -> Result<()> {
    std::fs::write(path, load_displacement_csv(result))?;
    Ok(())
}

fn vtk_cell_type(family: ElementFamily) -> usize {
    match family {
        ElementFamily::Line2 | ElementFamily::Line3 => 3,
        ElementFamily::Quad4 | ElementFamily::Quad8 => 9,
        ElementFamily::Hex8 => 12,
    }
}

/// Renders one snapshot as a legacy-ASCII VTK unstructured grid.
///
/// Points are the micro-strain field's nodes (the element corners);
/// displacement is sampled at the coincident displacement-field nodes.
/// Cell data carries element-averaged damage and history values.
pub fn vtk_fields(mesh: &Mesh, dofmap: &DofMap, snap: &Snapshot) -> String {
    let dim = mesh.dim;
    let npts = mesh.node_coords_e.len();
    let nen = mesh.family_e.node_count();
    let nel = mesh.element_count;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(out, "fracture fields, step {}", snap.step);
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(out, "POINTS {npts} double");
    for p in &mesh.node_coords_e {
        let _ = writeln!(out, "{} {} {}", p[0], p[1], p[2]);
    }

    let _ = writeln!(out, "CELLS {nel} {}", nel * (1 + nen));
    for e in 0..nel {
        let _ = write!(out, "{nen}");
        for &n in &mesh.conn_e[e * nen..(e + 1) * nen] {
            let _ = write!(out, " {n}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {nel}");
    let ct = vtk_cell_type(mesh.family_e);
    for _ in 0..nel {
        let _ = writeln!(out, "{ct}");
    }

    let _ = writeln!(out, "POINT_DATA {npts}");
    out.push_str("VECTORS displacement double\n");
    for n in 0..npts {
        let un = mesh.e_to_u[n];
        let mut comp = [0.0_f64; 3];
        for (d, c) in comp.iter_mut().enumerate().take(dim) {
            *c = snap.solution[un * dim + d];
        }
        let _ = writeln!(out, "{} {} {}", comp[0], comp[1], comp[2]);
    }
    out.push_str("SCALARS micro_equivalent_strain double 1\nLOOKUP_TABLE default\n");
    for n in 0..npts {
        let _ = writeln!(out, "{}", snap.solution[dofmap.ndof_u + n]);
    }

    let _ = writeln!(out, "CELL_DATA {nel}");
    out.push_str("SCALARS damage double 1\nLOOKUP_TABLE default\n");
    for v in &snap.damage_cell {
        let _ = writeln!(out, "{v}");
    }
    out.push_str("SCALARS history double 1\nLOOKUP_TABLE default\n");
    for v in &snap.kappa_cell {
        let _ = writeln!(out, "{v}");
    }
    out
}

/// Writes one snapshot as a legacy-ASCII VTK unstructured-grid file.
pub fn write_vtk_fields(mesh: &Mesh, dofmap: &DofMap, snap: &Snapshot, path: &Path) -> Result<()> {
    std::fs::write(path, vtk_fields(mesh, dofmap, snap))?;
    Ok(())
}

/// Writes every snapshot of a result as `fields_step_<N>.vtk` under `dir`.
pub fn write_all_snapshots(
    mesh: &Mesh,
    dofmap: &DofMap,
    result: &SimulationResult,
    dir: &Path,
) -> Result<()> {
    for snap in &result.snapshots {
        let path = dir.join(format!("fields_step_{:05}.vtk", snap.step));
        write_vtk_fields(mesh, dofmap, snap, &path)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_dof_map, build_structured_mesh};
    use crate::solver::StepRecord;
    use crate::GpState;

    fn dummy_result(records: Vec<StepRecord>) -> SimulationResult {
        SimulationResult {
            steps: records,
            snapshots: vec![],
            solution: vec![],
            final_state: GpState::new(1, 1, vec![1.0], &crate::problems::default_params(crate::ProblemId::Bar1d)),
        }
    }

    #[test]
    #[allow(clippy::excessive_precision)]
    fn csv_has_header_and_full_precision() {
        let res = dummy_result(vec![
            StepRecord { step: 1, applied: 2e-5, reaction: 0.123456789123456789, iterations: 3 },
            StepRecord { step: 2, applied: 4e-5, reaction: 0.0, iterations: 2 },
        ]);
        let csv = load_displacement_csv(&res);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "step,applied_displacement_mm,reaction,iterations");
        let row = lines.next().unwrap();
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[0], "1");
        let back: f64 = cols[2].parse().unwrap();
        assert_eq!(back, 0.123456789123456789);
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn single_hex_vtk_structure() {
        let mesh = build_structured_mesh(3, &[1.0, 1.0, 1.0], &[1, 1, 1]).unwrap();
        let dofmap = build_dof_map(&mesh);
        let snap = Snapshot {
            step: 4,
            solution: vec![0.0; dofmap.total_dofs()],
            damage_cell: vec![0.0],
            kappa_cell: vec![1e-4],
        };
        let text = vtk_fields(&mesh, &dofmap, &snap);
        assert!(text.contains("POINTS 8 double"));
        assert!(text.contains("CELLS 1 9"));
        assert!(text.contains("CELL_TYPES 1\n12"));
        assert!(text.contains("VECTORS displacement double"));
        assert!(text.contains("SCALARS damage double 1"));
        assert!(text.contains("SCALARS history double 1"));
        // virgin snapshot: damage cell data all zero
        let dmg_idx = text.find("SCALARS damage").unwrap();
        let after = &text[dmg_idx..];
        let val_line = after.lines().nth(2).unwrap();
        assert_eq!(val_line, "0");
    }

    #[test]
    fn quad_mesh_vtk_uses_corner_connectivity() {
        let mesh = build_structured_mesh(2, &[2.0, 2.0], &[2, 2]).unwrap();
        let dofmap = build_dof_map(&mesh);
        let snap = Snapshot {
            step: 1,
            solution: vec![0.0; dofmap.total_dofs()],
            damage_cell: vec![0.0; 4],
            kappa_cell: vec![0.0; 4],
        };
        let text = vtk_fields(&mesh, &dofmap, &snap);
        assert!(text.contains("POINTS 9 double"));
        assert!(text.contains("CELLS 4 20"));
        assert!(text.contains("CELL_TYPES 4\n9"));
    }
}
