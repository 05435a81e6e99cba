//! TOML run configuration: a versioned, partially-specified file resolved
//! against the selected problem's defaults.
//!
//! The resolved configuration serializes back to the same format with every
//! key present, and re-parsing that echo reproduces it exactly.

use serde::{Deserialize, Serialize};

use crate::error::{LgdmError, Result};
use crate::problems::{ProblemId, ProblemSpec};
use crate::solver::NewtonConfig;
use crate::MaterialParams;

pub const SCHEMA_VERSION: u32 = 1;

/// Output controls resolved from the config file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    /// Write a field snapshot every this many steps (the final step is always
    /// written); 0 disables periodic snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputOptions {
    fn default() -> Self {
        OutputOptions { snapshot_every: 10 }
    }
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub schema_version: u32,
    pub problem: ProblemId,
    pub extents: [f64; 3],
    pub divisions: [usize; 3],
    pub total_displacement: f64,
    pub steps: usize,
    pub defect_fraction: f64,
    pub defect_ratio: f64,
    pub notch_fraction: f64,
    pub material: MaterialParams,
    pub newton: NewtonConfig,
    pub output: OutputOptions,
}

impl ResolvedConfig {
    pub fn spec(&self) -> ProblemSpec {
        ProblemSpec {
            id: self.problem,
            extents: self.extents,
            divisions: self.divisions,
            params: self.material,
            total_displacement: self.total_displacement,
            steps: self.steps,
            defect_fraction: self.defect_fraction,
            defect_ratio: self.defect_ratio,
            notch_fraction: self.notch_fraction,
        }
    }

    /// The canonical echo written into the output directory.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("resolved config serializes")
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PartialMaterial {
    young: Option<f64>,
    poisson: Option<f64>,
    strength_ratio: Option<f64>,
    kappa0: Option<f64>,
    alpha: Option<f64>,
    beta: Option<f64>,
    coupling_modulus: Option<f64>,
    gradient_parameter: Option<f64>,
    interaction_residual: Option<f64>,
    interaction_exponent: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PartialNewton {
    tol: Option<f64>,
    max_iterations: Option<usize>,
    divergence_factor: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct PartialOutput {
    snapshot_every: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    schema_version: u32,
    problem: ProblemId,
    extents: Option<Vec<f64>>,
    divisions: Option<Vec<usize>>,
    total_displacement: Option<f64>,
    steps: Option<usize>,
    defect_fraction: Option<f64>,
    defect_ratio: Option<f64>,
    notch_fraction: Option<f64>,
    #[serde(default)]
    material: PartialMaterial,
    #[serde(default)]
    newton: PartialNewton,
    #[serde(default)]
    output: PartialOutput,
}

fn config_err(path: &str, message: impl Into<String>) -> LgdmError {
    LgdmError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Parses a TOML configuration and resolves it against the problem defaults.
///
/// Unknown keys, a wrong schema version, and invariant violations (reported
/// with their key path) are all errors.
pub fn parse_config(text: &str) -> Result<ResolvedConfig> {
    let file: ConfigFile =
        toml::from_str(text).map_err(|e| config_err("", e.message().to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(config_err(
            "schema_version",
            format!(
                "unsupported schema_version {}; this build reads version {SCHEMA_VERSION}",
                file.schema_version
            ),
        ));
    }
    let defaults = ProblemSpec::new(file.problem);
    let dim = defaults.dim();
    // Arrays may be written with `dim` entries or padded to three.
    let fixed3 = |path: &'static str, v: Vec<f64>, fill: [f64; 3]| -> Result<[f64; 3]> {
        if v.len() != dim && v.len() != 3 {
            return Err(config_err(
                path,
                format!("expected {dim} or 3 entries, got {}", v.len()),
            ));
        }
        let mut out = fill;
        out[..v.len()].copy_from_slice(&v);
        Ok(out)
    };
    let extents = match file.extents {
        Some(v) => fixed3("extents", v, defaults.extents)?,
        None => defaults.extents,
    };
    let divisions = match file.divisions {
        Some(v) => {
            let as_f: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let fill = defaults.divisions.map(|x| x as f64);
            fixed3("divisions", as_f, fill)?.map(|x| x as usize)
        }
        None => defaults.divisions,
    };
    let m = &file.material;
    let dm = defaults.params;
    let material = MaterialParams {
        young: m.young.unwrap_or(dm.young),
        poisson: m.poisson.unwrap_or(dm.poisson),
        strength_ratio: m.strength_ratio.unwrap_or(dm.strength_ratio),
        kappa0: m.kappa0.unwrap_or(dm.kappa0),
        alpha: m.alpha.unwrap_or(dm.alpha),
        beta: m.beta.unwrap_or(dm.beta),
        coupling_modulus: m.coupling_modulus.unwrap_or(dm.coupling_modulus),
        gradient_parameter: m.gradient_parameter.unwrap_or(dm.gradient_parameter),
        interaction_residual: m.interaction_residual.unwrap_or(dm.interaction_residual),
        interaction_exponent: m.interaction_exponent.unwrap_or(dm.interaction_exponent),
    };
    let dn = NewtonConfig::default();
    let newton = NewtonConfig {
        tol: file.newton.tol.unwrap_or(dn.tol),
        max_iterations: file.newton.max_iterations.unwrap_or(dn.max_iterations),
        divergence_factor: file
            .newton
            .divergence_factor
            .unwrap_or(dn.divergence_factor),
    };
    let output = OutputOptions {
        snapshot_every: file
            .output
            .snapshot_every
            .unwrap_or(OutputOptions::default().snapshot_every),
    };
    let resolved = ResolvedConfig {
        schema_version: SCHEMA_VERSION,
        problem: file.problem,
        extents,
        divisions,
        total_displacement: file
            .total_displacement
            .unwrap_or(defaults.total_displacement),
        steps: file.steps.unwrap_or(defaults.steps),
        defect_fraction: file.defect_fraction.unwrap_or(defaults.defect_fraction),
        defect_ratio: file.defect_ratio.unwrap_or(defaults.defect_ratio),
        notch_fraction: file.notch_fraction.unwrap_or(defaults.notch_fraction),
        material,
        newton,
        output,
    };
    validate_resolved(&resolved)?;
    Ok(resolved)
}

fn validate_resolved(cfg: &ResolvedConfig) -> Result<()> {
    cfg.material.validate().map_err(|e| {
        let msg = match &e {
            LgdmError::InvalidArgument(m) => m.trim_start_matches("material: ").to_string(),
            other => format!("{other}"),
        };
        let key = msg.split_whitespace().next().unwrap_or("material");
        config_err(&format!("material.{key}"), msg)
    })?;
    cfg.newton.validate().map_err(|e| match e {
        LgdmError::InvalidArgument(m) => {
            let key = m.split_whitespace().next().unwrap_or("newton").to_string();
            config_err(&key, m)
        }
        other => other,
    })?;
    cfg.spec().validate().map_err(|e| match e {
        LgdmError::InvalidArgument(m) => {
            let key = m.split_whitespace().next().unwrap_or("problem").to_string();
            config_err(&key, m)
        }
        other => other,
    })
}
