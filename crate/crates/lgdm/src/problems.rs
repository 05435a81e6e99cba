//! Built-in benchmark problems: a 1D softening bar with a central defect and
//! 2D/3D single-edge-notch tension plates.
//!
//! Each problem resolves to a mesh, a displacement-control program, boundary
//! constraints, material parameters, and a per-Gauss-point damage threshold
//! field.  All geometry and material defaults are config-overridable.

use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::error::{LgdmError, Result};
use crate::mesh::{
    build_dof_map, build_structured_mesh, carve_notch, Constraint, ConstraintKind, DofMap, Mesh,
    NotchSpec,
};
use crate::MaterialParams;

/// Identifier for one of the built-in benchmark problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemId {
    /// 1D bar in tension with a weakened central region.
    Bar1d,
    /// Plane-strain square plate with a mid-height edge slit, pulled at the top.
    Sen2d,
    /// The 2D plate extruded through the thickness.
    Sen3d,
}

impl ProblemId {
    pub const ALL: [ProblemId; 3] = [ProblemId::Bar1d, ProblemId::Sen2d, ProblemId::Sen3d];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemId::Bar1d => "bar1d",
            ProblemId::Sen2d => "sen2d",
            ProblemId::Sen3d => "sen3d",
        }
    }
}

impl std::str::FromStr for ProblemId {
    type Err = LgdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bar1d" => Ok(ProblemId::Bar1d),
            "sen2d" => Ok(ProblemId::Sen2d),
            "sen3d" => Ok(ProblemId::Sen3d),
            other => Err(LgdmError::InvalidArgument(format!(
                "unknown problem '{other}'; valid ids: bar1d, sen2d, sen3d"
            ))),
        }
    }
}

impl std::fmt::Display for ProblemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fully resolved problem description: geometry, discretization, material,
/// and load program.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub id: ProblemId,
    /// Domain lengths per axis (mm); only the first `dim` entries are used.
    pub extents: [f64; 3],
    /// Element divisions per axis; only the first `dim` entries are used.
    pub divisions: [usize; 3],
    pub params: MaterialParams,
    /// Total applied displacement on the driven boundary (mm).
    pub total_displacement: f64,
    pub steps: usize,
    /// Bar problems: fraction of the bar length (centered) whose damage
    /// threshold is reduced.
    pub defect_fraction: f64,
    /// Bar problems: multiplier applied to the damage threshold inside the
    /// defect region.
    pub defect_ratio: f64,
    /// Notch problems: slit length as a fraction of the plate width.
    pub notch_fraction: f64,
}

impl ProblemSpec {
    /// Resolved defaults for the given problem.
    pub fn new(id: ProblemId) -> Self {
        let params = default_params(id);
        match id {
            ProblemId::Bar1d => ProblemSpec {
                id,
                extents: [100.0, 0.0, 0.0],
                divisions: [1000, 0, 0],
                params,
                total_displacement: 0.02,
                steps: 1000,
                defect_fraction: 0.1,
                defect_ratio: 0.9,
                notch_fraction: 0.0,
            },
            ProblemId::Sen2d => ProblemSpec {
                id,
                extents: [100.0, 100.0, 0.0],
                divisions: [100, 100, 0],
                params,
                total_displacement: 0.8,
                steps: 80,
                defect_fraction: 0.0,
                defect_ratio: 1.0,
                notch_fraction: 0.5,
            },
            ProblemId::Sen3d => ProblemSpec {
                id,
                extents: [100.0, 100.0, 10.0],
                divisions: [100, 100, 5],
                params,
                total_displacement: 0.8,
                steps: 80,
                defect_fraction: 0.0,
                defect_ratio: 1.0,
                notch_fraction: 0.5,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match self.id {
            ProblemId::Bar1d => 1,
            ProblemId::Sen2d => 2,
            ProblemId::Sen3d => 3,
        }
    }

    /// Displacement increment per load step on every driven DOF (mm).
    pub fn increment(&self) -> f64 {
        self.total_displacement / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        let dim = self.dim();
        for axis in 0..dim {
            if !(self.extents[axis] > 0.0) {
                return Err(LgdmError::InvalidArgument(format!(
                    "extents[{axis}] must be positive"
                )));
            }
            if self.divisions[axis] == 0 {
                return Err(LgdmError::InvalidArgument(format!(
                    "divisions[{axis}] must be >= 1"
                )));
            }
        }
        if self.steps == 0 {
            return Err(LgdmError::InvalidArgument("steps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.defect_fraction) {
            return Err(LgdmError::InvalidArgument(
                "defect_fraction must lie in [0, 1]".into(),
            ));
        }
        if !(self.defect_ratio > 0.0 && self.defect_ratio <= 1.0) {
            return Err(LgdmError::InvalidArgument(
                "defect_ratio must lie in (0, 1]".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.notch_fraction) {
            return Err(LgdmError::InvalidArgument(
                "notch_fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Builds the mesh (with the notch carved for the plate problems), the
    /// DOF map, and the boundary constraints.
    pub fn build(&self) -> Result<BuiltProblem> {
        self.validate()?;
        let dim = self.dim();
        let mut mesh = build_structured_mesh(dim, &self.extents[..dim], &self.divisions[..dim])?;
        if dim >= 2 && self.notch_fraction > 0.0 {
            let notch = NotchSpec {
                normal_axis: 1,
                plane: self.extents[1] / 2.0,
                along_axis: 0,
                start: 0.0,
                length: self.notch_fraction * self.extents[0],
            };
            mesh = carve_notch(mesh, &notch)?;
        }
        let dofmap = build_dof_map(&mesh);
        let constraints = self.constraints(&mesh, &dofmap);
        Ok(BuiltProblem {
            mesh,
            dofmap,
            constraints,
        })
    }

    /// Boundary constraints for the built mesh.
    ///
    /// Bar: left end fixed, right end driven.  Plates: bottom face fully
    /// fixed; the top face is driven vertically with the in-plane (and 3D
    /// out-of-plane) components held.
    fn constraints(&self, mesh: &Mesh, dofmap: &DofMap) -> Vec<Constraint> {
        let dim = dofmap.dim;
        let tol = 1e-9 * self.extents[..dim].iter().cloned().fold(1.0, f64::max);
        let mut out = Vec::new();
        match self.id {
            ProblemId::Bar1d => {
                for (n, c) in mesh.node_coords_u.iter().enumerate() {
                    if c[0].abs() <= tol {
                        out.push(Constraint {
                            dof: n,
                            kind: ConstraintKind::Fixed,
                        });
                    } else if (c[0] - self.extents[0]).abs() <= tol {
                        out.push(Constraint {
                            dof: n,
                            kind: ConstraintKind::Driven,
                        });
                    }
                }
            }
            ProblemId::Sen2d | ProblemId::Sen3d => {
                let height = self.extents[1];
                for (n, c) in mesh.node_coords_u.iter().enumerate() {
                    if c[1].abs() <= tol {
                        for comp in 0..dim {
                            out.push(Constraint {
                                dof: n * dim + comp,
                                kind: ConstraintKind::Fixed,
                            });
                        }
                    } else if (c[1] - height).abs() <= tol {
                        for comp in 0..dim {
                            out.push(Constraint {
                                dof: n * dim + comp,
                                kind: if comp == 1 {
                                    ConstraintKind::Driven
                                } else {
                                    ConstraintKind::Fixed
                                },
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Per-Gauss-point damage threshold field.  The bar's central defect
    /// region gets a reduced threshold; plate problems are uniform (the slit
    /// is geometric).
    pub fn kappa0_field(&self, asm: &Assembler) -> Vec<f64> {
        let base = self.params.kappa0;
        let coords = asm.gauss_point_coords();
        if self.id != ProblemId::Bar1d || self.defect_fraction == 0.0 || self.defect_ratio == 1.0 {
            return vec![base; coords.len()];
        }
        let length = self.extents[0];
        let lo = 0.5 * length * (1.0 - self.defect_fraction);
        let hi = 0.5 * length * (1.0 + self.defect_fraction);
        coords
            .iter()
            .map(|c| {
                if c[0] >= lo && c[0] <= hi {
                    base * self.defect_ratio
                } else {
                    base
                }
            })
            .collect()
    }
}

/// Mesh, DOF map, and constraints resolved from a [`ProblemSpec`].
#[derive(Debug)]
pub struct BuiltProblem {
    pub mesh: Mesh,
    pub dofmap: DofMap,
    pub constraints: Vec<Constraint>,
}

/// Documented default material parameters; these are representative
/// quasi-brittle values, not calibrated to any particular experiment.
pub fn default_params(id: ProblemId) -> MaterialParams {
    let base = MaterialParams {
        young: 30_000.0,
        poisson: 0.2,
        strength_ratio: 10.0,
        kappa0: 2e-5,
        alpha: 0.99,
        beta: 700.0,
        coupling_modulus: 30.0,
        gradient_parameter: 4.0,
        interaction_residual: 0.005,
        interaction_exponent: 5.0,
    };
    match id {
        ProblemId::Bar1d => base,
        // The plate problems soften more gently and average over a wider
        // gradient length so the fixed 80-step program tracks the crack.
        ProblemId::Sen2d | ProblemId::Sen3d => MaterialParams {
            kappa0: 1e-3,
            beta: 20.0,
            gradient_parameter: 100.0,
            ..base
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Assembler;

    #[test]
    fn defaults_match_load_programs() {
        let bar = ProblemSpec::new(ProblemId::Bar1d);
        assert_eq!(bar.steps, 1000);
        assert!((bar.increment() - 2e-5).abs() < 1e-18);
        let sen2 = ProblemSpec::new(ProblemId::Sen2d);
        assert_eq!(sen2.steps, 80);
        assert!((sen2.increment() - 0.01).abs() < 1e-15);
        let sen3 = ProblemSpec::new(ProblemId::Sen3d);
        assert_eq!(sen3.divisions, [100, 100, 5]);
        assert_eq!(sen3.divisions.iter().product::<usize>(), 50_000);
    }

    #[test]
    fn unknown_id_is_rejected() {
        let err = "bar2d".parse::<ProblemId>().unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bar1d") && msg.contains("sen2d") && msg.contains("sen3d"));
    }

    #[test]
    fn bar_constraints_pin_both_ends() {
        let mut spec = ProblemSpec::new(ProblemId::Bar1d);
        spec.divisions = [10, 0, 0];
        let built = spec.build().unwrap();
        let fixed: Vec<_> = built
            .constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::Fixed)
            .collect();
        let driven: Vec<_> = built
            .constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::Driven)
            .collect();
        assert_eq!(fixed.len(), 1);
        assert_eq!(driven.len(), 1);
        assert!(built.mesh.node_coords_u[fixed[0].dof][0].abs() < 1e-12);
        assert!((built.mesh.node_coords_u[driven[0].dof][0] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bar_defect_region_thresholds() {
        let mut spec = ProblemSpec::new(ProblemId::Bar1d);
        spec.divisions = [20, 0, 0];
        let built = spec.build().unwrap();
        let asm = Assembler::new(&built.mesh, &built.dofmap, spec.params).unwrap();
        let kappa0 = spec.kappa0_field(&asm);
        let coords = asm.gauss_point_coords();
        let base = spec.params.kappa0;
        for (k, c) in kappa0.iter().zip(&coords) {
            let inside = c[0] >= 45.0 && c[0] <= 55.0;
            let expect = if inside { 0.9 * base } else { base };
            assert!(
                (k - expect).abs() < 1e-18 * base.max(1.0),
                "x = {}, kappa0 = {k}",
                c[0]
            );
        }
        assert!(kappa0.iter().any(|k| *k < base));
    }

    #[test]
    fn sen2d_mesh_has_slit_and_boundary_constraints() {
        let mut spec = ProblemSpec::new(ProblemId::Sen2d);
        spec.divisions = [8, 8, 0];
        let built = spec.build().unwrap();
        // The slit duplicates nodes along y = 50 for x < 50.
        let unnotched = build_structured_mesh(2, &[100.0, 100.0], &[8, 8]).unwrap();
        assert!(built.mesh.node_coords_u.len() > unnotched.node_coords_u.len());
        // Bottom row fully fixed, top row driven in y and fixed in x.
        let dim = 2;
        let driven: Vec<_> = built
            .constraints
            .iter()
            .filter(|c| c.kind == ConstraintKind::Driven)
            .collect();
        assert!(!driven.is_empty());
        for c in &driven {
            let node = c.dof / dim;
            assert_eq!(c.dof % dim, 1);
            assert!((built.mesh.node_coords_u[node][1] - 100.0).abs() < 1e-9);
        }
        for c in &built.constraints {
            let node = c.dof / dim;
            let y = built.mesh.node_coords_u[node][1];
            assert!(y.abs() < 1e-9 || (y - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sen3d_builds_with_full_face_constraints() {
        let mut spec = ProblemSpec::new(ProblemId::Sen3d);
        spec.divisions = [4, 4, 2];
        let built = spec.build().unwrap();
        let dim = 3;
        let bottom_nodes: usize = built
            .mesh
            .node_coords_u
            .iter()
            .filter(|c| c[1].abs() < 1e-9)
            .count();
        let top_nodes: usize = built
            .mesh
            .node_coords_u
            .iter()
            .filter(|c| (c[1] - 100.0).abs() < 1e-9)
            .count();
        assert_eq!(built.constraints.len(), dim * (bottom_nodes + top_nodes));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ProblemSpec::new(ProblemId::Bar1d);
        spec.steps = 0;
        assert!(spec.validate().is_err());
        let mut spec = ProblemSpec::new(ProblemId::Sen2d);
        spec.notch_fraction = 1.0;
        assert!(spec.validate().is_err());
        let mut spec = ProblemSpec::new(ProblemId::Bar1d);
        spec.defect_ratio = 0.0;
        assert!(spec.validate().is_err());
    }
}
