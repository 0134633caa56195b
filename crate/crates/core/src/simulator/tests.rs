use super::*;
use crate::isa::emit;
use crate::lowering::{fuse_layers, insert_dm_layers, interpret, lower_graph, MatrixProgram};
use crate::model_ir::parse_model_str;
use crate::planner::plan;

fn compile(prog: &MatrixProgram, arch: &ArchConfig) -> Module {
    emit(&plan(prog, arch).unwrap(), arch).unwrap()
}

fn lower(text: &str) -> MatrixProgram {
    let g = parse_model_str(text).unwrap();
    lower_graph(&fuse_layers(&insert_dm_layers(&g).unwrap())).unwrap()
}

const CNN_GNN: &str = r#"{
  "tensors": [
    {"id": "x", "seed": 1, "dims": [3, 8, 8]},
    {"id": "w", "seed": 2, "dims": [8, 3, 3, 3], "scale": 0.2},
    {"id": "lw", "seed": 3, "dims": [64, 16], "scale": 0.125}
  ],
  "graphs": [{"id": "a", "n": 8, "triples": [[0, 1, 0.5], [1, 0, 0.5], [2, 1, 0.5], [7, 7, 1.0], [3, 4, 0.25]]}],
  "layers": [
    {"id": "conv", "kind": "Conv", "params": {"c_in": 3, "c_out": 8, "k1": 3, "k2": 3, "padding": 1, "weight": "w"}, "inputs": ["x"]},
    {"id": "relu", "kind": "Activation", "params": {"kind": "relu"}, "inputs": ["conv"]},
    {"id": "mp", "kind": "MP", "params": {"graph": "a", "reduction": "max"}, "inputs": ["relu"]},
    {"id": "lin", "kind": "Linear", "params": {"f_in": 64, "f_out": 16, "weight": "lw"}, "inputs": ["mp"]}
  ]
}"#;

const ATTENTION_HEAD: &str = r#"{
  "tensors": [
    {"id": "h", "seed": 4, "dims": [24, 40]},
    {"id": "w", "seed": 5, "dims": [40, 20], "scale": 0.2}
  ],
  "layers": [
    {"id": "lin", "kind": "Linear", "params": {"f_in": 40, "f_out": 20, "weight": "w"}, "inputs": ["h"]},
    {"id": "att", "kind": "VIP", "params": {"graph": "g", "softmax": true}, "inputs": ["lin"]},
    {"id": "agg", "kind": "MP", "params": {}, "inputs": ["lin", "att"]}
  ],
  "graphs": [{"id": "g", "n": 24, "triples": "#;

/// Attention over a ring with chords: every vertex has three in-edges.
fn attention() -> String {
    let t: Vec<String> = (0..24)
        .flat_map(|v| [(v + 1) % 24, (v + 5) % 24, v].map(|u| format!("[{u}, {v}, 1.0]")))
        .collect();
    format!("{ATTENTION_HEAD}[{}]}}]}}", t.join(", "))
}

const POOL_NORM: &str = r#"{
  "tensors": [
    {"id": "x", "seed": 7, "dims": [4, 12, 12]},
    {"id": "w", "seed": 8, "dims": [6, 4, 3, 3], "scale": 0.2},
    {"id": "s", "seed": 9, "dims": [6]},
    {"id": "b", "seed": 10, "dims": [6]}
  ],
  "layers": [
    {"id": "conv", "kind": "Conv", "params": {"c_in": 4, "c_out": 6, "k1": 3, "k2": 3, "weight": "w"}, "inputs": ["x"]},
    {"id": "bn", "kind": "Norm", "params": {"scale": "s", "shift": "b"}, "inputs": ["conv"]},
    {"id": "pool", "kind": "Pool", "params": {"kind": "max", "window": 2}, "inputs": ["bn"]},
    {"id": "avg", "kind": "Pool", "params": {"kind": "avg", "window": 5}, "inputs": ["pool"]}
  ]
}"#;

fn assert_bitwise(prog: &MatrixProgram, arch: &ArchConfig) -> SimReport {
    let want = interpret(prog).unwrap().outputs(prog);
    let r = simulate(&compile(prog, arch), arch).unwrap();
    assert_eq!(r.outputs.len(), want.len());
    for (k, t) in &want {
        let got = &r.outputs[k];
        assert_eq!(got.dims(), t.dims(), "{k}");
        let a: Vec<u32> = got.values().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = t.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b, "{k}");
    }
    r
}

#[test]
fn empty_stream_takes_no_cycles() {
    let arch = ArchConfig::default();
    let r = simulate(&compile(&MatrixProgram::default(), &arch), &arch).unwrap();
    assert_eq!(r.total_cycles, 0);
    assert!(r.stages.is_empty());
}

#[test]
fn single_tile_timing() {
    let arch = ArchConfig::default().with_n_pe(1);
    let r = simulate(&compile(&crate::isa::tests::single_ddmm(), &arch), &arch).unwrap();
    // two 512-byte reads, 16x16x16 DDMM, one 512-byte write
    assert_eq!(r.total_cycles, 4 + 4 + 48 + 4);
    assert_eq!(r.breakdown.other, 48);
    assert_eq!(r.breakdown.memory_exposed, 12);
    assert_eq!(r.pe_busy, vec![48]);
}

#[test]
fn simulation_matches_interpreter_bitwise() {
    for text in [CNN_GNN.to_string(), attention(), POOL_NORM.to_string()] {
        let prog = lower(&text);
        for arch in [ArchConfig::default(), ArchConfig::default().with_bank_depth(2).with_n_pe(3)] {
            assert_bitwise(&prog, &arch);
        }
    }
}

#[test]
fn stage_cycles_add_up() {
    for text in [CNN_GNN.to_string(), attention(), POOL_NORM.to_string()] {
        let arch = ArchConfig::default().with_bank_depth(2);
        let r = assert_bitwise(&lower(&text), &arch);
        assert_eq!(r.stages.iter().map(|s| s.cycles).sum::<u64>(), r.total_cycles);
        assert_eq!(r.breakdown.total(), r.total_cycles);
        for s in &r.stages {
            assert_eq!(s.busy_by_provenance.values().sum::<u64>(), s.busy);
            assert!(s.busy <= s.compute_span);
        }
        assert!(r.utilization() <= 1.0);
    }
}

#[test]
fn more_pes_never_slow_independent_tiles() {
    let prog = lower(CNN_GNN);
    let arch = ArchConfig::default().with_bank_depth(1);
    let one = simulate(&compile(&prog, &arch.clone().with_n_pe(1)), &arch.clone().with_n_pe(1)).unwrap();
    let seven = simulate(&compile(&prog, &arch), &arch).unwrap();
    let span = |r: &SimReport| r.stages.iter().map(|s| s.compute_span).sum::<u64>();
    assert!(span(&seven) < span(&one));
    assert!(seven.total_cycles <= one.total_cycles);
}

#[test]
fn reads_outside_the_stage_are_rejected() {
    let arch = ArchConfig::default();
    let mut m = compile(&crate::isa::tests::single_ddmm(), &arch);
    m.instructions.remove(0);
    assert!(matches!(simulate(&m, &arch), Err(SimError::Malformed(_))));
    let mut m = compile(&crate::isa::tests::single_ddmm(), &arch);
    m.instructions.pop();
    assert!(matches!(simulate(&m, &arch), Err(SimError::Malformed(_))));
    let mut m = compile(&crate::isa::tests::single_ddmm(), &arch);
    m.image.pop();
    assert!(matches!(simulate(&m, &arch), Err(SimError::ImageSize { .. })));
}

#[test]
fn breakdown_formats() {
    let arch = ArchConfig::default();
    let r = simulate(&compile(&crate::isa::tests::single_ddmm(), &arch), &arch).unwrap();
    let csv = report_breakdown(&r, "csv").unwrap();
    assert!(csv.lines().any(|l| l.starts_with("Total,")));
    assert_eq!(csv.lines().count(), 7);
    assert!(report_breakdown(&r, "text").unwrap().contains("Memory-exposed"));
    let json: serde_json::Value = serde_json::from_str(&report_breakdown(&r, "json").unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 6);
    assert!(report_breakdown(&r, "xml").is_none());
    assert!(r.to_json().contains("total_cycles"));
}

#[test]
fn largest_remainder_is_exact() {
    let w: BTreeMap<Provenance, u64> = [(Provenance::Cnn, 1), (Provenance::Gnn, 1), (Provenance::Other, 1)].into();
    let s = report::largest_remainder(10, &w);
    assert_eq!(s.values().sum::<u64>(), 10);
    assert_eq!(s[&Provenance::Cnn], 4);
}
