use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use gcvt::arch::ArchConfig;
use gcvt::bench::{generate, BENCHMARKS};
use gcvt::isa::{IsaError, Module};
use gcvt::lowering::{fuse_layers_with_report, insert_dm_layers};
use gcvt::model_ir::{parse_model, ComputationGraph};
use gcvt::oracle::{compare, default_tolerance, reduction_depth, run_reference};
use gcvt::pipeline::{compile_graph, PipelineError};
use gcvt::simulator::{report_breakdown, simulate, SimError};

#[derive(Parser)]
#[command(name = "gcvt", version, about = "Compile and simulate CNN/GNN models on a matrix accelerator")]
struct Cli {
    /// Write a JSON run manifest here.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a model to program.gcvi, image.bin, layout.json and plan.txt.
    Compile {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Skip layer fusion.
        #[arg(long)]
        no_fuse: bool,
    },
    /// Simulate a compiled directory; writes report.json and report.csv.
    Simulate {
        /// Compiled directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
    },
    /// Simulate and compare against the reference; writes verify.json.
    Verify {
        #[arg(long)]
        model: PathBuf,
        /// Compiled directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long)]
        tol_ulps: Option<f64>,
    },
    /// Write a synthetic benchmark model.
    Gen {
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(BENCHMARKS))]
        bench: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Failed(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Io(_) => 2,
        }
    }
}

fn io_err(p: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("{}: {e}", p.display()))
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Failed(e.to_string())
        }
    }
}

fn isa_failure(e: IsaError) -> Failure {
    match e {
        IsaError::Io(_) | IsaError::BadHeader | IsaError::Truncated(_) | IsaError::TrailingBytes => Failure::Io(e.to_string()),
        other => Failure::Failed(other.to_string()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::ImageSize { .. } | SimError::Address(_) => Failure::Io(e.to_string()),
        SimError::Isa(i) => isa_failure(i),
        other => Failure::Failed(other.to_string()),
    }
}

#[derive(Serialize, Default)]
struct RunManifest {
    command: String,
    model: Option<PathBuf>,
    arch: Option<PathBuf>,
    out: PathBuf,
    seed: Option<u64>,
    timings_ms: Vec<(String, f64)>,
}

struct Timer<'a> {
    m: &'a mut RunManifest,
    t: Instant,
}

impl Timer<'_> {
    fn lap(&mut self, what: &str) {
        let now = Instant::now();
        self.m.timings_ms.push((what.into(), (now - self.t).as_secs_f64() * 1e3));
        self.t = now;
    }
}

fn load_arch(p: Option<&Path>) -> Result<ArchConfig, Failure> {
    let Some(p) = p else {
        return Ok(ArchConfig::default());
    };
    let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
    ArchConfig::from_json(&text).map_err(|e| Failure::Failed(format!("{}: {e}", p.display())))
}

fn load_model(p: &Path) -> Result<ComputationGraph, Failure> {
    let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
    let base = p.parent().unwrap_or(Path::new("."));
    parse_model(&text, base).map_err(|e| {
        let msg = format!("{}: {e}", p.display());
        if e.is_io() {
            Failure::Io(msg)
        } else {
            Failure::Failed(msg)
        }
    })
}

fn write(p: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    std::fs::write(p, bytes).map_err(|e| io_err(p, e))
}

fn run(cmd: &Cmd, m: &mut RunManifest) -> Result<(), Failure> {
    let mut t = Timer { m, t: Instant::now() };
    match cmd {
        Cmd::Compile { model, arch, out, no_fuse } => {
            t.m.command = "compile".into();
            let arch = load_arch(arch.as_deref())?;
            let g = load_model(model)?;
            t.lap("parse");
            let c = compile_graph(&g, &arch, !no_fuse)?;
            t.lap("compile");
            c.module.write_to(out).map_err(isa_failure)?;
            write(&out.join("plan.txt"), c.plan.dump())?;
            t.lap("write");
            eprintln!(
                "compiled {} ops into {} tiles, {} instructions",
                c.program.ops.len(),
                c.plan.task_count(),
                c.module.instructions.len()
            );
        }
        Cmd::Simulate { out, arch } => {
            t.m.command = "simulate".into();
            let arch = load_arch(arch.as_deref())?;
            let module = Module::read_from(out).map_err(isa_failure)?;
            t.lap("load");
            let r = simulate(&module, &arch).map_err(sim_failure)?;
            t.lap("simulate");
            write(&out.join("report.json"), r.to_json())?;
            write(&out.join("report.csv"), report_breakdown(&r, "csv").expect("known format"))?;
            print!("{}", report_breakdown(&r, "text").expect("known format"));
        }
        Cmd::Verify { model, out, arch, tol_ulps } => {
            t.m.command = "verify".into();
            let arch = load_arch(arch.as_deref())?;
            let g = load_model(model)?;
            let module = Module::read_from(out).map_err(isa_failure)?;
            t.lap("load");
            let r = simulate(&module, &arch).map_err(sim_failure)?;
            t.lap("simulate");
            let reference = run_reference(&g, &gcvt::oracle::graph_inputs(&g)).map_err(|e| Failure::Failed(e.to_string()))?;
            let fusion = insert_dm_layers(&g).map(|x| fuse_layers_with_report(&x).1).unwrap_or_default();
            let reference = reference
                .into_iter()
                .map(|(k, v)| {
                    let name = if r.outputs.contains_key(&k) { k } else { fusion.resolve(&k).to_string() };
                    (name, v)
                })
                .collect();
            let tol = tol_ulps.unwrap_or_else(|| default_tolerance(reduction_depth(&g)));
            let report = compare(&r.outputs, &reference, tol);
            t.lap("reference");
            write(&out.join("verify.json"), report.to_json())?;
            println!(
                "{}: max {} ulp over {} outputs (tolerance {tol})",
                if report.pass { "PASS" } else { "FAIL" },
                report.max_ulps(),
                report.outputs.len()
            );
            if !report.pass {
                return Err(Failure::Failed("outputs differ from the reference".into()));
            }
        }
        Cmd::Gen { bench, seed, out } => {
            t.m.command = "gen".into();
            t.m.seed = Some(*seed);
            let b = generate(bench, *seed).expect("validated by clap");
            b.write_to(out).map_err(|e| io_err(out, e))?;
            t.lap("generate");
            eprintln!("wrote {}", out.join("model.json").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut m = RunManifest::default();
    match &cli.cmd {
        Cmd::Compile { model, arch, out, .. } | Cmd::Verify { model, arch, out, .. } => {
            m.model = Some(model.clone());
            m.arch = arch.clone();
            m.out = out.clone();
        }
        Cmd::Simulate { out, arch } => {
            m.arch = arch.clone();
            m.out = out.clone();
        }
        Cmd::Gen { out, .. } => m.out = out.clone(),
    }
    let result = run(&cli.cmd, &mut m);
    if let Some(p) = &cli.manifest {
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        if let Err(e) = std::fs::write(p, text) {
            eprintln!("error: {}: {e}", p.display());
            return ExitCode::from(2);
        }
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Failed(msg) | Failure::Io(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
