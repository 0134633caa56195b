use super::*;
use crate::arch::ArchConfig;
use crate::lowering::{lower_linear, Def, MatrixProgram, OpKind, Provenance, Storage};
use crate::model_ir::{Shape, Tensor};
use crate::planner::plan;

use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

/// Golden encoding of DDMM 16x16x16, any PE, all addresses and flags 0.
const GOLDEN_DDMM: &str = "01ff100010001000000000000000000000000000000000000000000000000000";

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

#[test]
fn barrier_and_golden_encodings() {
    let b = Instruction::barrier().encode();
    assert_eq!(b[0], 0x20);
    assert!(b[1..].iter().all(|x| *x == 0));
    let mut d = Instruction::new(Opcode::Ddmm);
    d.dims = [16, 16, 16];
    assert_eq!(hex(&d.encode()), GOLDEN_DDMM);
}

#[test]
fn decode_rejects_bad_input() {
    assert_eq!(Instruction::decode(&[0u8; 32]), Err(IsaError::UnknownOpcode(0)));
    let mut b = Instruction::barrier().encode();
    b[31] = 1;
    assert_eq!(Instruction::decode(&b), Err(IsaError::ReservedBits));
    let mut b = Instruction::barrier().encode();
    b[25] = 1;
    assert!(matches!(Instruction::decode(&b), Err(IsaError::UnknownFlags(_))));
    assert!(Instruction::decode(&[1u8; 16]).is_err());
}

#[test]
fn program_file_round_trip() {
    let prog = vec![Instruction::new(Opcode::Pvva), Instruction::barrier()];
    let bytes = encode_program(&prog);
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(bytes.len(), 9 + 2 * INSTRUCTION_BYTES);
    assert_eq!(read_program(bytes.as_slice()).unwrap(), prog);
    assert_eq!(read_program(&bytes[..bytes.len() - 1]), Err(IsaError::Truncated(1)));
    let mut extra = bytes.clone();
    extra.push(0);
    assert_eq!(read_program(extra.as_slice()), Err(IsaError::TrailingBytes));
    assert_eq!(read_program(&b"GCVX"[..]), Err(IsaError::BadHeader));
}

/// `a (16x16) * b (16x16)` with both operands runtime inputs.
pub(crate) fn single_ddmm() -> MatrixProgram {
    let mut prog = MatrixProgram::default();
    let a = Tensor::new(vec![16, 16], (0..256).map(|v| (v % 7) as f32 * 0.25).collect()).unwrap();
    let b = Tensor::new(vec![16, 16], (0..256).map(|v| (v % 5) as f32 * 0.5 - 1.0).collect()).unwrap();
    let ia = prog.add_value("a".into(), 16, 16, Storage::Dense, Def::Input);
    let ib = prog.add_value("b".into(), 16, 16, Storage::Dense, Def::Input);
    prog.inputs.push(("a".into(), ia, a));
    prog.inputs.push(("b".into(), ib, b));
    let kind = OpKind::MatMul {
        lhs: ia,
        rhs: ib,
        dims: (16, 16, 16),
        lhs_sparsity_hint: 1.0,
    };
    let z = prog.push_op(kind, "z".into(), 16, 16, Storage::Dense, Provenance::Other, "mm");
    prog.outputs.push(("mm".into(), z, Shape::Matrix { rows: 16, cols: 16 }));
    prog
}

#[test]
fn empty_program_emits_nothing() {
    let arch = ArchConfig::default();
    let m = emit(&plan(&MatrixProgram::default(), &arch).unwrap(), &arch).unwrap();
    assert!(m.instructions.is_empty());
    assert!(m.image.is_empty());
}

#[test]
fn single_tile_emits_five_instructions() {
    let arch = ArchConfig::default();
    let m = emit(&plan(&single_ddmm(), &arch).unwrap(), &arch).unwrap();
    let ops: Vec<Opcode> = m.instructions.iter().map(|i| i.opcode).collect();
    assert_eq!(ops, vec![Opcode::MemRead, Opcode::MemRead, Opcode::Ddmm, Opcode::MemWrite, Opcode::Barrier]);
    assert_eq!(m.instructions[0].transfer_bytes(), 512);
    assert_eq!(m.image.len(), 3 * 512);
}

#[test]
fn two_layers_two_barriers() {
    let w = Tensor::identity(8);
    let mut prog = lower_linear(&w, &Tensor::new(vec![8, 8], vec![0.5; 64]).unwrap()).unwrap();
    let h = prog.outputs[0].1;
    let w2 = prog.add_constant("w2".into(), crate::lowering::Constant::Dense(Tensor::identity(8)));
    let kind = OpKind::MatMul {
        lhs: h,
        rhs: w2,
        dims: (8, 8, 8),
        lhs_sparsity_hint: 1.0,
    };
    let z = prog.push_op(kind, "z".into(), 8, 8, Storage::Dense, Provenance::Gnn, "second");
    prog.outputs = vec![("second".into(), z, Shape::Matrix { rows: 8, cols: 8 })];
    let arch = ArchConfig::default();
    let m = emit(&plan(&prog, &arch).unwrap(), &arch).unwrap();
    assert_eq!(m.count(Opcode::Barrier), 2);
    assert_eq!(m.layout.stages.len(), 2);
}

#[test]
fn emission_is_deterministic_and_round_trips() {
    let arch = ArchConfig::default();
    let tp = plan(&single_ddmm(), &arch).unwrap();
    let a = emit(&tp, &arch).unwrap();
    let b = emit(&tp, &arch).unwrap();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    a.write_to(dir.path()).unwrap();
    assert_eq!(Module::read_from(dir.path()).unwrap(), a);
}

#[test]
fn image_overflow_is_an_error() {
    let mut arch = ArchConfig::default();
    arch.external_memory_bytes = 1000;
    let tp = plan(&single_ddmm(), &arch).unwrap();
    assert!(matches!(emit(&tp, &arch), Err(IsaError::ImageOverflow { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn random_bytes_decode_or_error(bytes in proptest::collection::vec(any::<u8>(), 32)) {
        if let Ok(i) = Instruction::decode(&bytes) {
            prop_assert_eq!(i.encode().to_vec(), bytes);
        }
    }

    #[test]
    fn encode_decode_round_trip(op in 0usize..9, pe in any::<u8>(), dims in any::<[u16; 3]>(), nnz in any::<u32>(),
                                a in any::<u32>(), b in any::<u32>(), z in any::<u32>(), fl in 0u16..256, s in any::<u16>(), n in any::<u16>()) {
        let ops = [Opcode::Ddmm, Opcode::Spdmm, Opcode::Sddmm, Opcode::Psvm, Opcode::Pvva, Opcode::DmTransform, Opcode::MemRead, Opcode::MemWrite, Opcode::Barrier];
        let i = Instruction { opcode: ops[op], pe_hint: pe, dims, nnz, addr_a: a, addr_b: b, addr_z: z, flags: fl, shuffle_id: s, norm_id: n };
        prop_assert_eq!(Instruction::decode(&i.encode()).unwrap(), i);
    }
}
