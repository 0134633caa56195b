//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use gcvt::arch::ArchConfig;
use gcvt::bench::{generate, BENCHMARKS};
use gcvt::isa::{flags, Instruction, Opcode};
use gcvt::lowering::{
    fuse_layers_with_report, insert_dm_layers, lower_conv, Constant, Def, MatrixProgram, OpKind, Provenance, Shift,
    Storage,
};
use gcvt::model_ir::{coo_from_dense, parse_model_str, ConvParams, Reduction, Shape, SparseMatrix, Tensor, Triple};
use gcvt::oracle::{graph_inputs, run_reference};
use gcvt::pipeline::{compile_graph, run, verify};
use gcvt::planner::{plan, Primitive};
use gcvt::primitives::{ddmm, fp16_round, spdmm};
use gcvt::simulator::{schedule, simulate, SchedTask};

const TOL_ULPS: f64 = 2.0;
const RUNTIME_LIMIT: Duration = Duration::from_secs(60);
const SEEDS: std::ops::RangeInclusive<u64> = 1..=5;
/// SHA-256 of the tiny-gcn (seed 1) program and image under the default architecture.
const TINY_GCN_GOLDEN: &str = "00301394ca4c0eed8b778b4b483f09b34a36d729f22ff07fdb49d8eb74de4560";

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ceil(a: u64, b: u64) -> u64 {
    a.div_ceil(b)
}

fn ddmm_cycles(p: u64, s1: u64, s2: u64, s3: u64) -> u64 {
    ceil(s1, p) * ceil(s3, p) * (s2 + 2 * p)
}

fn spdmm_cycles(p: u64, nnz: u64, n: u64) -> u64 {
    ceil(nnz, p / 2) * ceil(n, p)
}

fn sddmm_cycles(p: u64, nnz: u64, s2: u64) -> u64 {
    ceil(nnz, p / 2) * ceil(s2, p)
}

fn fp16_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>, density: f64) -> Tensor {
    let n = dims.iter().product();
    let v = (0..n)
        .map(|_| if rng.gen_bool(density) { fp16_round(rng.gen_range(-2.0f32..2.0)) } else { 0.0 })
        .collect();
    Tensor::new(dims, v).unwrap()
}

fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize, nnz: usize) -> SparseMatrix {
    let mut cells = BTreeSet::new();
    while cells.len() < nnz {
        cells.insert((rng.gen_range(0..rows) as u32, rng.gen_range(0..cols) as u32));
    }
    let t = cells.into_iter().map(|(d, s)| Triple::new(s, d, 0.5)).collect();
    SparseMatrix::new(rows, cols, t).unwrap()
}

fn input(prog: &mut MatrixProgram, name: &str, t: Tensor) -> usize {
    let (r, c) = (t.dims()[0], t.dims()[1]);
    let id = prog.add_value(name.into(), r, c, Storage::Dense, Def::Input);
    prog.inputs.push((name.into(), id, t));
    id
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let arch = ArchConfig::default();
    let mut worst = 0.0f64;
    let mut runs = 0;
    for name in BENCHMARKS {
        for seed in SEEDS {
            let g = generate(name, seed).unwrap().graph().map_err(|e| format!("{name}/{seed}: {e}"))?;
            let c = compile_graph(&g, &arch, true).map_err(|e| format!("{name}/{seed}: {e}"))?;
            let r = simulate(&c.module, &arch).map_err(|e| format!("{name}/{seed}: {e}"))?;
            let v = verify(&g, &c.fusion, &r.outputs, Some(TOL_ULPS)).map_err(|e| e.to_string())?;
            ensure(v.pass, || format!("{name}/{seed}: {}", v.to_json()))?;
            worst = worst.max(v.max_ulps());
            runs += 1;
        }
    }
    let t = start.elapsed();
    ensure(t < RUNTIME_LIMIT, || format!("took {t:?}"))?;
    Ok(format!("{runs} runs within {TOL_ULPS} ulp (max {worst}), {:.1}s", t.as_secs_f64()))
}

fn single_task_cycles(prog: &MatrixProgram, arch: &ArchConfig) -> Result<(u64, u64), String> {
    let tp = plan(prog, arch).map_err(|e| e.to_string())?;
    ensure(tp.task_count() == 1, || format!("{} tasks", tp.task_count()))?;
    let m = gcvt::isa::emit(&tp, arch).map_err(|e| e.to_string())?;
    let r = simulate(&m, arch).map_err(|e| e.to_string())?;
    let t = tp.tasks().next().unwrap();
    let nnz = t.nnz as u64;
    Ok((r.pe_busy.iter().sum(), nnz))
}

fn cost_formulas() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..100 {
        let p = [4usize, 8, 16][case % 3];
        let arch = ArchConfig {
            p_ca: p,
            n_pe: 1,
            ..ArchConfig::default()
        };
        let (s1, s2, s3) = (rng.gen_range(1..=48), rng.gen_range(1..=48), rng.gen_range(1..=48));
        let nnz = rng.gen_range(0..=s1 * s2);

        let mut prog = MatrixProgram::default();
        let adj = prog.add_constant("a".into(), Constant::Sparse(random_pattern(&mut rng, s1, s2, nnz)));
        let h = input(&mut prog, "h", fp16_tensor(&mut rng, vec![s2, s3], 1.0));
        let kind = OpKind::SparseMatMul { adj, rhs: h, reduction: Reduction::Max, transposed: false };
        let z = prog.push_op(kind, "z".into(), s1, s3, Storage::Dense, Provenance::Gnn, "mp");
        prog.outputs.push(("mp".into(), z, Shape::Matrix { rows: s1, cols: s3 }));
        let (got, n) = single_task_cycles(&prog, &arch).map_err(|e| format!("SpDMM p={p} {s1}x{s2}x{s3} nnz={nnz}: {e}"))?;
        let want = spdmm_cycles(p as u64, n, s3 as u64);
        ensure(n == nnz as u64 && got == want, || format!("SpDMM p={p} nnz={nnz} s3={s3}: {got} vs {want}"))?;

        let nnz = rng.gen_range(0..=s1 * s3);
        let mut prog = MatrixProgram::default();
        let pat = prog.add_constant("pat".into(), Constant::Sparse(random_pattern(&mut rng, s1, s3, nnz)));
        let x = input(&mut prog, "x", fp16_tensor(&mut rng, vec![s1, s2], 1.0));
        let y = input(&mut prog, "y", fp16_tensor(&mut rng, vec![s3, s2], 1.0));
        let kind = OpKind::SampledMatMul { pattern: pat, lhs: x, rhs: y };
        let z = prog.push_op(kind, "s".into(), s1, s3, Storage::Scores { pattern: pat }, Provenance::Gnn, "vip");
        prog.outputs.push(("vip".into(), z, Shape::Scores { n: s1, nnz }));
        let (got, _) = single_task_cycles(&prog, &arch).map_err(|e| format!("SDDMM p={p} {s1}x{s2}x{s3} nnz={nnz}: {e}"))?;
        let want = sddmm_cycles(p as u64, nnz as u64, s2 as u64);
        ensure(got == want, || format!("SDDMM p={p} nnz={nnz} s2={s2}: {got} vs {want}"))?;
    }
    Ok("100 SpDMM and 100 SDDMM instructions match the formulas".into())
}

/// Wide-precision evaluation of the ops the convolution lowering emits.
fn eval_f64(prog: &MatrixProgram) -> Vec<f64> {
    let mut vals: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (_, id, t) in &prog.inputs {
        vals.insert(*id, t.values().iter().map(|v| *v as f64).collect());
    }
    let dense = |vals: &BTreeMap<usize, Vec<f64>>, id: usize| -> Vec<f64> {
        match prog.constants.get(&id) {
            Some(Constant::Dense(t)) => t.values().iter().map(|v| *v as f64).collect(),
            _ => vals[&id].clone(),
        }
    };
    let shifted = |src: &[f64], s: &Shift, p: usize| {
        let y = (p / s.dst_w) as isize + s.dr;
        let x = (p % s.dst_w) as isize + s.dc;
        if y < 0 || x < 0 || y >= s.src_h as isize || x >= s.src_w as isize {
            0.0
        } else {
            src[y as usize * s.src_w + x as usize]
        }
    };
    for op in &prog.ops {
        let o = prog.value(op.out);
        let (rows, cols) = (o.rows, o.cols);
        let out = match &op.kind {
            OpKind::MatMul { lhs, rhs, dims: (s1, s2, s3), .. } => {
                let (a, b) = (dense(&vals, *lhs), dense(&vals, *rhs));
                let mut z = vec![0.0; s1 * s3];
                for i in 0..*s1 {
                    for k in 0..*s2 {
                        for j in 0..*s3 {
                            z[i * s3 + j] += a[i * s2 + k] * b[k * s3 + j];
                        }
                    }
                }
                z
            }
            OpKind::Add { lhs, rhs, shifts } => {
                let (a, b) = (dense(&vals, *lhs), dense(&vals, *rhs));
                let (wa, wb) = (prog.value(*lhs).cols, prog.value(*rhs).cols);
                let mut z = vec![0.0; rows * cols];
                for r in 0..rows {
                    for p in 0..cols {
                        let va = match &shifts[0] {
                            Some(s) => shifted(&a[r * wa..(r + 1) * wa], s, p),
                            None => a[r * wa + p],
                        };
                        let vb = match &shifts[1] {
                            Some(s) => shifted(&b[r * wb..(r + 1) * wb], s, p),
                            None => b[r * wb + p],
                        };
                        z[r * cols + p] = va + vb;
                    }
                }
                z
            }
            OpKind::SparseMatMul { adj, rhs, transposed: true, .. } => {
                let Some(Constant::Sparse(a)) = prog.constants.get(adj) else { panic!("selection is constant") };
                let d = dense(&vals, *rhs);
                let w = prog.value(*rhs).cols;
                let mut z = vec![0.0; rows * cols];
                for t in a.triples() {
                    for r in 0..rows {
                        z[r * cols + t.dst as usize] += t.val as f64 * d[r * w + t.src as usize];
                    }
                }
                z
            }
            other => panic!("{} is not emitted by the convolution lowering", other.name()),
        };
        vals.insert(op.out, out);
    }
    vals.remove(&prog.outputs[0].1).unwrap()
}

fn conv_lowering() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut done = 0;
    while done < 50 {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..=2);
        let padding = rng.gen_range(0..=2);
        let (c_in, c_out) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let (h, w) = (rng.gen_range(k..=k + 6), rng.gen_range(k..=k + 6));
        let ints = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f32> { (0..n).map(|_| rng.gen_range(-3..=3) as f32).collect() };
        let x = ints(&mut rng, c_in * h * w);
        let wt = ints(&mut rng, c_out * c_in * k * k);
        let doc = serde_json::json!({
            "tensors": [
                {"id": "x", "dims": [c_in, h, w], "values": x},
                {"id": "w", "dims": [c_out, c_in, k, k], "values": wt}
            ],
            "layers": [{"id": "conv", "kind": "Conv", "params": {"c_in": c_in, "c_out": c_out, "k1": k, "k2": k,
                        "stride": stride, "padding": padding, "weight": "w"}, "inputs": ["x"]}]
        });
        let g = parse_model_str(&doc.to_string()).map_err(|e| e.to_string())?;
        let direct = &run_reference(&g, &graph_inputs(&g)).map_err(|e| e.to_string())?["conv"];
        let p = ConvParams { c_in, c_out, k1: k, k2: k, stride, padding, weight: "w".into() };
        let prog = lower_conv(&p, &g.tensors["w"], &g.tensors["x"]).map_err(|e| e.to_string())?;
        let lowered = eval_f64(&prog);
        ensure(&lowered == direct, || format!("k={k} stride={stride} pad={padding} c={c_in}->{c_out} {h}x{w}"))?;
        done += 1;
    }
    Ok("50 kn2row convolutions equal direct convolution exactly".into())
}

fn sparse_dense_agreement() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let (s1, s2, s3) = (rng.gen_range(1..=40), rng.gen_range(1..=40), rng.gen_range(1..=40));
        let density = rng.gen_range(0.0..=1.0);
        let x = fp16_tensor(&mut rng, vec![s1, s2], density);
        let y = fp16_tensor(&mut rng, vec![s2, s3], 1.0);
        let coo = coo_from_dense(&x, 0.0).map_err(|e| e.to_string())?;
        let a = spdmm(&coo, &y, Reduction::Sum, None).map_err(|e| e.to_string())?;
        let b = ddmm(&x, &y, None).map_err(|e| e.to_string())?;
        let bits = |t: &Tensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        ensure(bits(&a) == bits(&b), || format!("case {case}: {s1}x{s2}x{s3} density {density:.2}"))?;
    }
    Ok("100 random products bitwise equal".into())
}

fn mapping_optimality() -> Outcome {
    let arch = ArchConfig::default();
    let p = arch.p_ca as u64;
    let mut tiles = 0;
    for name in BENCHMARKS {
        for seed in SEEDS {
            let g = generate(name, seed).unwrap().graph().map_err(|e| e.to_string())?;
            let c = compile_graph(&g, &arch, true).map_err(|e| e.to_string())?;
            for t in c.plan.tasks() {
                let Some(alt) = t.alternative_cycles else { continue };
                let (t1, t2, t3, nnz) = (t.t1 as u64, t.t2 as u64, t.t3 as u64, t.nnz as u64);
                let d = ddmm_cycles(p, t1, t2, t3);
                let s = spdmm_cycles(p, nnz, if t.transposed { t1 } else { t3 });
                let (chosen, other) = match t.primitive {
                    Primitive::Ddmm => (d, s),
                    Primitive::Spdmm => (s, d),
                    other => return Err(format!("{name}: selectable tile mapped to {other:?}")),
                };
                ensure(chosen == t.cycles && other == alt && chosen <= other, || format!("{name}/{seed}: {t:?}"))?;
                tiles += 1;
            }
        }
    }

    // density sweep on a 64x64x64 product with a constant lhs
    let n = 64usize;
    let step = n;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut crossover = None;
    let mut last = Primitive::Spdmm;
    for nnz in (0..=n * n).step_by(step) {
        let mut prog = MatrixProgram::default();
        let mut w = vec![0.0f32; n * n];
        let mut cells: Vec<usize> = (0..n * n).collect();
        rand::seq::SliceRandom::shuffle(cells.as_mut_slice(), &mut rng);
        for &c in &cells[..nnz] {
            w[c] = 0.5;
        }
        let lhs = prog.add_constant("w".into(), Constant::Dense(Tensor::new(vec![n, n], w).unwrap()));
        let rhs = input(&mut prog, "x", fp16_tensor(&mut rng, vec![n, n], 1.0));
        let kind = OpKind::MatMul { lhs, rhs, dims: (n, n, n), lhs_sparsity_hint: nnz as f64 / (n * n) as f64 };
        let z = prog.push_op(kind, "z".into(), n, n, Storage::Dense, Provenance::Other, "mm");
        prog.outputs.push(("mm".into(), z, Shape::Matrix { rows: n, cols: n }));
        let tp = plan(&prog, &arch).map_err(|e| e.to_string())?;
        ensure(tp.task_count() == 1, || "sweep product was tiled".into())?;
        let prim = tp.tasks().next().unwrap().primitive;
        ensure(!(last == Primitive::Ddmm && prim == Primitive::Spdmm), || format!("mapping flips back at nnz {nnz}"))?;
        if prim == Primitive::Ddmm && crossover.is_none() {
            crossover = Some(nnz);
        }
        last = prim;
    }
    let crossover = crossover.ok_or("no crossover in the sweep")?;
    // ceil(nnz / (p/2)) * ceil(n/p) = ceil(n/p)^2 * (n + 2p)
    let analytic = (p / 2) * ceil(n as u64, p) * (n as u64 + 2 * p);
    ensure(crossover.abs_diff(analytic as usize) <= step, || format!("crossover {crossover} vs analytic {analytic}"))?;
    Ok(format!(
        "{tiles} selectable tiles optimal; crossover at density {:.4}, analytic {:.4}",
        crossover as f64 / (n * n) as f64,
        analytic as f64 / (n * n) as f64
    ))
}

fn dm_elimination() -> Outcome {
    let arch = ArchConfig::default();
    let mut notes = Vec::new();
    for name in ["tiny-fewshot", "tiny-stgcn", "tiny-cnn"] {
        let g = generate(name, 1).unwrap().graph().map_err(|e| e.to_string())?;
        let (_, r, _) = run(&g, &arch, true).map_err(|e| e.to_string())?;
        let (_, unfused, _) = run(&g, &arch, false).map_err(|e| e.to_string())?;
        ensure(r.breakdown.dm == 0, || format!("{name}: DM row {} cycles", r.breakdown.dm))?;
        notes.push(format!("{name} 0 (unfused {})", unfused.breakdown.dm));
    }
    for seed in SEEDS {
        let g = generate("tiny-patch", seed).unwrap().graph().map_err(|e| e.to_string())?;
        let (_, r, _) = run(&g, &arch, true).map_err(|e| e.to_string())?;
        let mut bound = 0;
        for s in &r.stages {
            ensure(s.dm_extra == s.dm_cycles.saturating_sub(s.compute_span), || format!("stage {}: {s:?}", s.label))?;
            bound += s.dm_cycles.saturating_sub(s.compute_span);
        }
        let streamed: u64 = r.stages.iter().map(|s| s.dm_cycles).sum();
        // 16 patches of 8 channels x 4 x 4 through the DM module
        ensure(streamed == ceil(16 * 128, arch.p_ca as u64), || format!("DM stream {streamed}"))?;
        ensure(r.breakdown.dm <= bound, || format!("tiny-patch/{seed}: DM {} > {bound}", r.breakdown.dm))?;
        if seed == 1 {
            notes.push(format!("tiny-patch {} <= {bound} of {streamed} streamed", r.breakdown.dm));
        }
    }
    Ok(notes.join(", "))
}

fn scheduler_properties() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..200 {
        let n = rng.gen_range(0..60);
        let c: Vec<u64> = (0..n).map(|_| rng.gen_range(1..500)).collect();
        let tasks: Vec<SchedTask> = c.iter().map(|c| SchedTask::independent(*c)).collect();
        let sum: u64 = c.iter().sum();
        let max = c.iter().copied().max().unwrap_or(0);
        let mut prev = u64::MAX;
        for pe in 1..=8 {
            let m = schedule(&tasks, pe).makespan;
            ensure(max <= m && m <= sum, || format!("case {case} n_pe {pe}: {m} outside [{max}, {sum}]"))?;
            ensure(pe != 1 || m == sum, || format!("case {case}: single PE {m} != {sum}"))?;
            ensure(m <= prev, || format!("case {case}: n_pe {pe} slower ({m} > {prev})"))?;
            ensure(m as f64 <= sum as f64 / pe as f64 + max as f64, || format!("case {case}: greedy bound"))?;
            prev = m;
        }
    }
    Ok("200 task sets, n_pe 1..=8".into())
}

fn isa_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ops = [
        Opcode::Ddmm,
        Opcode::Spdmm,
        Opcode::Sddmm,
        Opcode::Psvm,
        Opcode::Pvva,
        Opcode::DmTransform,
        Opcode::MemRead,
        Opcode::MemWrite,
        Opcode::Barrier,
    ];
    for n in 0..100_000 {
        let i = Instruction {
            opcode: ops[rng.gen_range(0..ops.len())],
            pe_hint: rng.gen(),
            dims: rng.gen(),
            nnz: rng.gen(),
            addr_a: rng.gen(),
            addr_b: rng.gen(),
            addr_z: rng.gen(),
            flags: rng.gen::<u16>() & flags::DEFINED,
            shuffle_id: rng.gen(),
            norm_id: rng.gen(),
        };
        ensure(Instruction::decode(&i.encode()) == Ok(i), || format!("instruction {n}: {i}"))?;
    }
    let arch = ArchConfig::default();
    let digest = || -> Result<String, String> {
        let g = generate("tiny-gcn", 1).unwrap().graph().map_err(|e| e.to_string())?;
        let m = compile_graph(&g, &arch, true).map_err(|e| e.to_string())?.module;
        let mut h = Sha256::new();
        h.update(m.program_bytes());
        h.update(&m.image);
        Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    };
    let (a, b) = (digest()?, digest()?);
    ensure(a == b, || "tiny-gcn binary differs between compilations".into())?;
    ensure(a == TINY_GCN_GOLDEN, || format!("tiny-gcn digest {a} != golden {TINY_GCN_GOLDEN}"))?;
    Ok(format!("100000 instructions; tiny-gcn sha256 {}", &a[..16]))
}

fn fusion_soundness() -> Outcome {
    let arch = ArchConfig::default();
    let mut stgcn = None;
    for name in BENCHMARKS {
        let g = generate(name, 1).unwrap().graph().map_err(|e| e.to_string())?;
        let (fused, report) = fuse_layers_with_report(&insert_dm_layers(&g).map_err(|e| e.to_string())?);
        let before = run_reference(&g, &graph_inputs(&g)).map_err(|e| e.to_string())?;
        let after = run_reference(&fused, &graph_inputs(&fused)).map_err(|e| e.to_string())?;
        for (k, v) in &before {
            let w = after.get(report.resolve(k)).ok_or_else(|| format!("{name}: output {k} lost"))?;
            let err = v.iter().zip(w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            ensure(v.len() == w.len() && err <= 1e-12, || format!("{name}/{k}: max diff {err}"))?;
        }
        let (_, rf, vf) = run(&g, &arch, true).map_err(|e| e.to_string())?;
        let (_, ru, vu) = run(&g, &arch, false).map_err(|e| e.to_string())?;
        ensure(vf.pass && vu.pass, || format!("{name}: simulated outputs off the reference"))?;
        ensure(rf.total_cycles <= ru.total_cycles, || format!("{name}: fused {} > unfused {}", rf.total_cycles, ru.total_cycles))?;
        if name == "tiny-stgcn" {
            stgcn = Some((rf.total_cycles, ru.total_cycles));
        }
    }
    let (f, u) = stgcn.ok_or("tiny-stgcn missing")?;
    ensure(f < u, || format!("tiny-stgcn fused {f} not below unfused {u}"))?;
    Ok(format!("tiny-stgcn {f} vs {u} cycles ({:.1}% faster)", 100.0 * (u - f) as f64 / u as f64))
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("oracle equivalence", oracle_equivalence),
        ("cost-formula exactness", cost_formulas),
        ("conv lowering correctness", conv_lowering),
        ("sparse/dense agreement", sparse_dense_agreement),
        ("sparsity-aware mapping", mapping_optimality),
        ("DM elimination", dm_elimination),
        ("scheduler properties", scheduler_properties),
        ("ISA round-trip", isa_round_trip),
        ("fusion soundness", fusion_soundness),
    ];
    let mut failed = 0;
    for (n, (name, check)) in checks.iter().enumerate() {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", n + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", n + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
