//! Model to module in one call, plus the checks built on it.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::arch::ArchConfig;
use crate::isa::{emit, IsaError, Module};
use crate::lowering::{fuse_layers_with_report, insert_dm_layers, lower_graph, FusionReport, LowerError, MatrixProgram};
use crate::model_ir::{ComputationGraph, IrError, Tensor};
use crate::oracle::{compare, default_tolerance, graph_inputs, reduction_depth, run_reference, ComparisonReport};
use crate::planner::{plan, PlanError, TiledProgram};
use crate::simulator::{simulate, SimError, SimReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl PipelineError {
    pub fn is_io(&self) -> bool {
        match self {
            PipelineError::Ir(e) => e.is_io(),
            PipelineError::Isa(IsaError::Io(_)) => true,
            _ => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Compiled {
    /// Graph after DM insertion and, if enabled, fusion.
    pub graph: ComputationGraph,
    pub fusion: FusionReport,
    pub program: MatrixProgram,
    pub plan: TiledProgram,
    pub module: Module,
}

/// DM insertion, optional fusion, lowering, tiling and emission.
pub fn compile_graph(g: &ComputationGraph, arch: &ArchConfig, fuse: bool) -> Result<Compiled, PipelineError> {
    let explicit = insert_dm_layers(g)?;
    let (graph, fusion) = if fuse {
        fuse_layers_with_report(&explicit)
    } else {
        (explicit, FusionReport::default())
    };
    let program = lower_graph(&graph)?;
    let plan = plan(&program, arch)?;
    let module = emit(&plan, arch)?;
    Ok(Compiled {
        graph,
        fusion,
        program,
        plan,
        module,
    })
}

/// Reference outputs of `g`, keyed by the names the compiled module uses.
pub fn reference_for(g: &ComputationGraph, fusion: &FusionReport) -> Result<BTreeMap<String, Vec<f64>>, IrError> {
    let r = run_reference(g, &graph_inputs(g))?;
    Ok(r.into_iter().map(|(k, v)| (fusion.resolve(&k).to_string(), v)).collect())
}

/// Compares simulated outputs with the reference of the source graph.
/// `tol` defaults to the depth-scaled tolerance.
pub fn verify(
    g: &ComputationGraph,
    fusion: &FusionReport,
    outputs: &BTreeMap<String, Tensor>,
    tol: Option<f64>,
) -> Result<ComparisonReport, IrError> {
    let reference = reference_for(g, fusion)?;
    let tol = tol.unwrap_or_else(|| default_tolerance(reduction_depth(g)));
    Ok(compare(outputs, &reference, tol))
}

/// Compile, simulate and verify.
pub fn run(g: &ComputationGraph, arch: &ArchConfig, fuse: bool) -> Result<(Compiled, SimReport, ComparisonReport), PipelineError> {
    let c = compile_graph(g, arch, fuse)?;
    let r = simulate(&c.module, arch)?;
    let v = verify(g, &c.fusion, &r.outputs, None)?;
    Ok((c, r, v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{generate, BENCHMARKS};

    #[test]
    fn every_benchmark_verifies() {
        let arch = ArchConfig::default();
        for name in BENCHMARKS {
            let g = generate(name, 1).unwrap().graph().unwrap();
            let (_, r, v) = run(&g, &arch, true).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(v.pass, "{name}: {}", v.to_json());
            assert!(r.total_cycles > 0);
        }
    }
}
