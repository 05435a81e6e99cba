//! Benchmark harness: runs a problem per backend and repeat, recording
//! per-iteration wall times of the assembly, solve, and state-update phases.

use std::fmt::Write as _;
use std::time::Instant;

use crate::assembly::{Assembler, Backend, Execution};
use crate::error::{LgdmError, Result};
use crate::problems::ProblemSpec;
use crate::solver::{run_simulation, DriverConfig, NewtonConfig, PhaseSamples};

/// Timing record for one backend across all repeats.
#[derive(Debug, Clone)]
pub struct BackendTiming {
    pub backend: Backend,
    /// Per-iteration phase samples, concatenated over repeats (seconds).
    pub samples: PhaseSamples,
    /// Total wall time of each repeat (seconds).
    pub repeat_totals: Vec<f64>,
    /// Per-step reactions of the last repeat, used for cross-backend checks.
    pub reactions: Vec<f64>,
}

impl BackendTiming {
    /// Mean per-iteration `[assembly, solve, update]` times (seconds).
    pub fn means(&self) -> [f64; 3] {
        self.samples.means()
    }

    pub fn iterations(&self) -> usize {
        self.samples.iterations()
    }
}

/// Benchmark outcome across backends.
#[derive(Debug, Clone)]
pub struct TimingReport {
    pub problem: String,
    pub steps: usize,
    pub repeats: usize,
    pub backends: Vec<BackendTiming>,
}

impl TimingReport {
    /// Mean per-iteration assembly + update time for a backend, if present.
    pub fn assembly_update_mean(&self, backend: Backend) -> Option<f64> {
        self.backends
            .iter()
            .find(|b| b.backend == backend)
            .map(|b| {
                let m = b.means();
                m[0] + m[2]
            })
    }

    /// Structured plain-text rendering.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "benchmark problem: {}", self.problem);
        let _ = writeln!(out, "steps per run: {}", self.steps);
        let _ = writeln!(out, "repeats per backend: {}", self.repeats);
        for b in &self.backends {
            let [a, s, u] = b.means();
            let _ = writeln!(out, "\nbackend: {}", b.backend);
            let _ = writeln!(out, "  iterations timed: {}", b.iterations());
            let _ = writeln!(out, "  mean per-iteration assembly time: {a:.6e} s");
            let _ = writeln!(out, "  mean per-iteration solve time:    {s:.6e} s");
            let _ = writeln!(out, "  mean per-iteration update time:   {u:.6e} s");
            let _ = writeln!(out, "  mean per-iteration total (three phases): {:.6e} s", a + s + u);
            for (i, t) in b.repeat_totals.iter().enumerate() {
                let _ = writeln!(out, "  repeat {} wall time: {t:.6e} s", i + 1);
            }
        }
        if self.backends.len() >= 2 {
            out.push_str("\nspeedup ratios (first backend over each other, assembly + update):\n");
            let base = &self.backends[0];
            let bm = base.means();
            for b in &self.backends[1..] {
                let m = b.means();
                let ratio = (bm[0] + bm[2]) / (m[0] + m[2]);
                let _ = writeln!(out, "  {} / {}: {ratio:.3}", base.backend, b.backend);
            }
        }
        out
    }
}

/// Runs `spec` once per backend and repeat, timing the solver phases.
///
/// Repeats run sequentially so timings stay honest.  The per-step reactions
/// of every backend must agree to round-off, failing the benchmark otherwise.
pub fn run_benchmark(
    spec: &ProblemSpec,
    backends: &[Backend],
    repeats: usize,
    exec: Execution,
    newton: NewtonConfig,
) -> Result<TimingReport> {
    if repeats == 0 {
        return Err(LgdmError::InvalidArgument("repeats must be >= 1".into()));
    }
    if backends.is_empty() {
        return Err(LgdmError::InvalidArgument(
            "at least one backend must be benchmarked".into(),
        ));
    }
    let built = spec.build()?;
    let asm = Assembler::new(&built.mesh, &built.dofmap, spec.params)?;
    let kappa0 = spec.kappa0_field(&asm);

    let mut report = TimingReport {
        problem: spec.id.to_string(),
        steps: spec.steps,
        repeats,
        backends: Vec::new(),
    };
    for &backend in backends {
        let cfg = DriverConfig {
            newton,
            steps: spec.steps,
            increment: spec.increment(),
            backend,
            exec,
            snapshot_every: 0,
        };
        let mut samples = PhaseSamples::default();
        let mut repeat_totals = Vec::with_capacity(repeats);
        let mut reactions = Vec::new();
        for _ in 0..repeats {
            let t0 = Instant::now();
            let result = run_simulation(&asm, &built.constraints, kappa0.clone(), &cfg, Some(&mut samples))
                .map_err(|e| {
                    LgdmError::Solver(format!("benchmark run ({backend}) failed: {e}"))
                })?;
            repeat_totals.push(t0.elapsed().as_secs_f64());
            reactions = result.steps.iter().map(|r| r.reaction).collect();
        }
        report.backends.push(BackendTiming {
            backend,
            samples,
            repeat_totals,
            reactions,
        });
    }

    // Cross-backend physics check: reactions must match to round-off.
    let base = &report.backends[0];
    for other in &report.backends[1..] {
        for (i, (a, b)) in base.reactions.iter().zip(&other.reactions).enumerate() {
            let scale = a.abs().max(b.abs()).max(1e-12);
            if (a - b).abs() > 1e-8 * scale {
                return Err(LgdmError::InvalidState(format!(
                    "backend disagreement at step {}: {} gives {a}, {} gives {b}",
                    i + 1,
                    base.backend,
                    other.backend
                )));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemId;

    fn tiny_bar() -> ProblemSpec {
        let mut spec = ProblemSpec::new(ProblemId::Bar1d);
        spec.divisions = [8, 0, 0];
        spec.steps = 3;
        spec.total_displacement = 6e-5;
        spec
    }

    #[test]
    fn phase_sums_bounded_by_totals() {
        let spec = tiny_bar();
        let report = run_benchmark(
            &spec,
            &[Backend::Loop, Backend::Batched],
            1,
            Execution::Sequential,
            NewtonConfig::default(),
        )
        .unwrap();
        assert_eq!(report.backends.len(), 2);
        for b in &report.backends {
            assert!(b.iterations() >= spec.steps);
            let phase_sum: f64 = b.samples.assembly.iter().sum::<f64>()
                + b.samples.solve.iter().sum::<f64>()
                + b.samples.update.iter().sum::<f64>();
            let total: f64 = b.repeat_totals.iter().sum();
            assert!(phase_sum <= total, "phases {phase_sum} vs total {total}");
        }
        let text = report.render();
        assert!(text.contains("backend: loop"));
        assert!(text.contains("backend: batched"));
        assert!(text.contains("speedup ratios"));
    }

    #[test]
    fn identical_backend_speedup_is_near_unity() {
        let spec = tiny_bar();
        let report = run_benchmark(
            &spec,
            &[Backend::Batched, Backend::Batched],
            2,
            Execution::Sequential,
            NewtonConfig::default(),
        )
        .unwrap();
        let a = report.backends[0].means();
        let b = report.backends[1].means();
        let ra = a[0] + a[2];
        let rb = b[0] + b[2];
        let ratio = ra / rb;
        // generous noise band for CI-grade machines
        assert!(ratio > 0.2 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn zero_repeats_rejected() {
        let spec = tiny_bar();
        assert!(run_benchmark(
            &spec,
            &[Backend::Loop],
            0,
            Execution::Sequential,
            NewtonConfig::default()
        )
        .is_err());
    }
}
