//! A quasi-static fracture simulation engine built on a localizing
//! gradient-enhanced damage model, solved as a coupled two-field nonlinear
//! finite element problem.
//!
//! The crate pairs a per-element reference assembly backend with a batched
//! whole-model backend that must agree to round-off, and ships a benchmark
//! harness measuring the assembly / solve / state-update phase split.

// Index loops over flat per-Gauss-point slices mirror the tensor math and
// keep the two backends visibly parallel; `!(x > 0)` in validation is
// deliberate so NaN fails the check.
#![allow(clippy::needless_range_loop)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::too_many_arguments)]

pub mod assembly;
pub mod bench;
pub mod config;
pub mod constitutive;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod output;
pub mod problems;
pub mod solver;
pub mod state;

pub use assembly::{apply_dirichlet, Assembler, Backend, ElementBlocks, Execution, SparseSystem};
pub use bench::{run_benchmark, BackendTiming, TimingReport};
pub use config::{parse_config, OutputOptions, ResolvedConfig, SCHEMA_VERSION};
pub use constitutive::MaterialParams;
pub use error::{LgdmError, Result};
pub use mesh::{build_dof_map, build_structured_mesh, carve_notch, Constraint, ConstraintKind, DofMap, Mesh, NotchSpec};
pub use problems::{default_params, BuiltProblem, ProblemId, ProblemSpec};
pub use solver::{
    check_convergence, linear_solve, run_simulation, DriverConfig, NewtonConfig, PhaseSamples,
    SimulationResult, Snapshot, StepRecord,
};
pub use state::GpState;
