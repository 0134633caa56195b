use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use gcvt_core::arch::ArchConfig as CoreArch;
use gcvt_core::bench;
use gcvt_core::isa::{read_program, Module as CoreModule};
use gcvt_core::lowering::FusionReport;
use gcvt_core::model_ir::{parse_model, parse_model_str, ComputationGraph};
use gcvt_core::pipeline::{compile_graph, verify as core_verify};
use gcvt_core::simulator::{report_breakdown, simulate as core_simulate, SimReport as CoreReport};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "ArchConfig", from_py_object)]
#[derive(Clone)]
struct ArchConfig {
    inner: CoreArch,
}

#[pymethods]
impl ArchConfig {
    #[new]
    #[pyo3(signature = (n_pe=7, p_ca=16, bank_depth=512, mem_bandwidth=128))]
    fn new(n_pe: usize, p_ca: usize, bank_depth: usize, mem_bandwidth: u64) -> PyResult<Self> {
        let mut inner = CoreArch::default().with_n_pe(n_pe).with_bank_depth(bank_depth);
        inner.p_ca = p_ca;
        inner.mem_bandwidth = mem_bandwidth;
        inner.validate().map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: CoreArch::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn n_pe(&self) -> usize {
        self.inner.n_pe
    }

    #[getter]
    fn p_ca(&self) -> usize {
        self.inner.p_ca
    }

    fn __repr__(&self) -> String {
        format!("ArchConfig(n_pe={}, p_ca={})", self.inner.n_pe, self.inner.p_ca)
    }
}

/// A parsed and validated model.
#[pyclass]
struct Model {
    graph: ComputationGraph,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            graph: parse_model_str(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(PathBuf::from).unwrap_or_default();
        Ok(Self {
            graph: parse_model(&text, &base).map_err(value_err)?,
        })
    }

    /// Seeded synthetic benchmark.
    #[staticmethod]
    fn benchmark(name: &str, seed: u64) -> PyResult<Self> {
        let b = bench::generate(name, seed).ok_or_else(|| PyValueError::new_err(format!("unknown benchmark {name}")))?;
        Ok(Self {
            graph: b.graph().map_err(value_err)?,
        })
    }

    #[getter]
    fn layers(&self) -> Vec<String> {
        self.graph.layers.iter().map(|l| l.id.clone()).collect()
    }

    /// Reference outputs in 64-bit arithmetic.
    fn reference(&self) -> PyResult<BTreeMap<String, Vec<f64>>> {
        gcvt_core::oracle::run_reference(&self.graph, &gcvt_core::oracle::graph_inputs(&self.graph)).map_err(value_err)
    }
}

#[pyclass]
struct Compiled {
    module: CoreModule,
    plan: String,
    fusion: FusionReport,
    tiles: usize,
}

#[pymethods]
impl Compiled {
    #[getter]
    fn instruction_count(&self) -> usize {
        self.module.instructions.len()
    }

    #[getter]
    fn tile_count(&self) -> usize {
        self.tiles
    }

    fn program_bytes(&self) -> Vec<u8> {
        self.module.program_bytes()
    }

    fn disassemble(&self) -> String {
        self.module.disassemble()
    }

    fn plan(&self) -> String {
        self.plan.clone()
    }

    /// Writes program.gcvi, image.bin and layout.json.
    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.module.write_to(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

#[pyclass]
struct SimReport {
    inner: CoreReport,
}

#[pymethods]
impl SimReport {
    #[getter]
    fn total_cycles(&self) -> u64 {
        self.inner.total_cycles
    }

    #[getter]
    fn pe_busy(&self) -> Vec<u64> {
        self.inner.pe_busy.clone()
    }

    /// Category -> cycles.
    fn breakdown(&self) -> BTreeMap<&'static str, u64> {
        self.inner.breakdown.rows().into_iter().map(|r| (r.category, r.cycles)).collect()
    }

    #[pyo3(signature = (format="text"))]
    fn format(&self, format: &str) -> PyResult<String> {
        report_breakdown(&self.inner, format).ok_or_else(|| PyValueError::new_err(format!("unknown format {format}")))
    }

    /// Output name -> (dims, values).
    fn outputs(&self) -> BTreeMap<String, (Vec<usize>, Vec<f32>)> {
        self.inner
            .outputs
            .iter()
            .map(|(k, t)| (k.clone(), (t.dims().to_vec(), t.values().to_vec())))
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

fn arch_or_default(arch: Option<&ArchConfig>) -> CoreArch {
    arch.map(|a| a.inner.clone()).unwrap_or_default()
}

#[pyfunction]
#[pyo3(signature = (model, arch=None, fuse=true))]
fn compile(model: &Model, arch: Option<&ArchConfig>, fuse: bool) -> PyResult<Compiled> {
    let c = compile_graph(&model.graph, &arch_or_default(arch), fuse).map_err(value_err)?;
    Ok(Compiled {
        plan: c.plan.dump(),
        tiles: c.plan.task_count(),
        module: c.module,
        fusion: c.fusion,
    })
}

#[pyfunction]
#[pyo3(signature = (compiled, arch=None))]
fn simulate(compiled: &Compiled, arch: Option<&ArchConfig>) -> PyResult<SimReport> {
    Ok(SimReport {
        inner: core_simulate(&compiled.module, &arch_or_default(arch)).map_err(value_err)?,
    })
}

/// Compares simulated outputs with the reference; returns the report JSON.
#[pyfunction]
#[pyo3(signature = (model, compiled, report, tol_ulps=None))]
fn verify(model: &Model, compiled: &Compiled, report: &SimReport, tol_ulps: Option<f64>) -> PyResult<(bool, String)> {
    let r = core_verify(&model.graph, &compiled.fusion, &report.inner.outputs, tol_ulps).map_err(value_err)?;
    Ok((r.pass, r.to_json()))
}

/// One line per instruction of an encoded program.
#[pyfunction]
fn disassemble(program: &[u8]) -> PyResult<Vec<String>> {
    Ok(read_program(program).map_err(value_err)?.iter().map(|i| i.to_string()).collect())
}

#[pyfunction]
fn benchmarks() -> Vec<&'static str> {
    bench::BENCHMARKS.to_vec()
}

#[pymodule]
fn gcvt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ArchConfig>()?;
    m.add_class::<Model>()?;
    m.add_class::<Compiled>()?;
    m.add_class::<SimReport>()?;
    m.add_function(wrap_pyfunction!(compile, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(disassemble, m)?)?;
    m.add_function(wrap_pyfunction!(benchmarks, m)?)?;
    Ok(())
}
