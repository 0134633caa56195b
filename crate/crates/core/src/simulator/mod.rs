//! Instruction-level execution with a cycle model of the PEs, the shared
//! memory channel and the data manipulation module.

mod exec;
mod report;
mod schedule;

pub use crate::arch::ArchConfig;
pub use report::{report_breakdown, Breakdown, BreakdownRow, SimReport, StageReport};
pub use schedule::{busy_union, schedule, SchedTask, Schedule, Slot, SWITCH_OVERHEAD};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::isa::{flags, Instruction, IsaError, Module, Opcode, Rect};
use crate::lowering::Provenance;
use exec::Machine;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error(transparent)]
    Isa(#[from] IsaError),
    #[error(transparent)]
    Arch(#[from] crate::arch::ArchError),
    #[error("word address {0} is outside the image")]
    Address(u64),
    #[error("image of {bytes} bytes does not match the layout's {words} words")]
    ImageSize { bytes: usize, words: u64 },
    #[error("malformed stream: {0}")]
    Malformed(String),
}

/// Resident word ranges of the current stage, with the cycle each became
/// available.
#[derive(Default)]
struct Residency(BTreeMap<u32, (u32, u64)>);

impl Residency {
    fn insert(&mut self, s: u32, e: u32, ready: u64) {
        if s >= e {
            return;
        }
        let hits: Vec<(u32, u32, u64)> = self
            .0
            .range(..e)
            .filter(|(_, (end, _))| *end > s)
            .map(|(a, (b, r))| (*a, *b, *r))
            .collect();
        for (a, b, r) in hits {
            self.0.remove(&a);
            if a < s {
                self.0.insert(a, (s, r));
            }
            if b > e {
                self.0.insert(e, (b, r));
            }
        }
        self.0.insert(s, (e, ready));
    }

    /// Latest ready time over `[s, e)`, or `None` if any word is missing.
    fn ready(&self, s: u32, e: u32) -> Option<u64> {
        let mut at = s;
        let mut ready = 0;
        while at < e {
            let (_, &(end, r)) = self.0.range(..=at).next_back()?;
            if end <= at {
                return None;
            }
            ready = ready.max(r);
            at = end;
        }
        Some(ready)
    }

    fn ready_rect(&self, r: &Rect) -> Option<u64> {
        r.ranges().into_iter().try_fold(0, |acc, (s, e)| Some(acc.max(self.ready(s, e)?)))
    }
}

fn kind_code(op: Opcode) -> u8 {
    op as u8
}

/// Cycles of a compute instruction from its own fields.
pub fn instruction_cycles(i: &Instruction, arch: &ArchConfig, layout: &crate::isa::Layout) -> Result<u64, SimError> {
    let cm = arch.cost_model();
    let [t1, t2, t3] = i.dims.map(u64::from);
    let nnz = i.nnz as u64;
    let bad = |e: crate::primitives::PrimitiveError| SimError::Malformed(format!("{}: {e}", i.opcode.mnemonic()));
    Ok(match i.opcode {
        Opcode::Ddmm => cm.ddmm(t1, t2, t3).map_err(bad)?,
        Opcode::Spdmm => cm.spdmm(nnz, if i.has(flags::TRANSPOSE) { t1 } else { t3 }).map_err(bad)?,
        Opcode::Sddmm => cm.sddmm(nnz, t2).map_err(bad)?,
        Opcode::Psvm | Opcode::Pvva => cm.psvm_pvva(t1, t3).map_err(bad)?,
        Opcode::DmTransform => {
            let e = layout.dm_entry(i)?;
            cm.dm_transform((e.rows * e.cols) as u64)
        }
        Opcode::MemRead | Opcode::MemWrite | Opcode::Barrier => 0,
    })
}

struct PendingWrite {
    instr: Instruction,
    region: usize,
}

/// Runs a module: functional results in stream order, timing per stage.
pub fn simulate(module: &Module, arch: &ArchConfig) -> Result<SimReport, SimError> {
    arch.validate()?;
    let layout = &module.layout;
    let mut m = Machine::new(&module.image, layout)?;
    let bw = arch.mem_bandwidth;
    let mut report = SimReport::empty(arch.n_pe);
    report.instructions = module.instructions.len();

    let mut now = 0u64;
    let mut mem_free = 0u64;
    let mut resident = Residency::default();
    let mut tasks: Vec<SchedTask> = Vec::new();
    let mut task_prov: Vec<Provenance> = Vec::new();
    let mut task_region: Vec<usize> = Vec::new();
    let mut chain_head: BTreeMap<u32, usize> = BTreeMap::new();
    let mut writes: Vec<PendingWrite> = Vec::new();
    let mut dm_cycles = 0u64;
    let mut dm_regions: Vec<usize> = Vec::new();
    let mut pending = false;

    let transfer = |bytes: u64| bytes.div_ceil(bw);

    for (pc, i) in module.instructions.iter().enumerate() {
        match i.opcode {
            Opcode::MemRead => {
                let (start, stride, row_words, rows) = i.transfer();
                let r = Rect {
                    start,
                    stride,
                    row_words,
                    rows: rows as u32,
                };
                let begin = mem_free.max(now);
                mem_free = begin + transfer(i.transfer_bytes());
                for (s, e) in r.ranges() {
                    if e as usize > m.mem.len() {
                        return Err(SimError::Address(e as u64));
                    }
                    resident.insert(s, e, mem_free);
                }
                pending = true;
            }
            Opcode::DmTransform => {
                let fp = layout.operand_footprint(i)?;
                let ready = ready_all(&resident, &fp, pc)?;
                m.execute(i)?;
                dm_cycles += instruction_cycles(i, arch, layout)?;
                let e = layout.dm_entry(i)?;
                resident.insert(i.addr_z, i.addr_z + (e.rows * e.cols) as u32, ready);
                dm_regions.push(layout.region_index(i.addr_z)?);
                pending = true;
            }
            op if op.is_compute() => {
                let fp = layout.operand_footprint(i)?;
                let ready = ready_all(&resident, &fp, pc)?;
                m.execute(i)?;
                let chain = if i.has(flags::ACCUMULATE) { chain_head.get(&i.addr_z).copied() } else { None };
                let idx = tasks.len();
                tasks.push(SchedTask {
                    cycles: instruction_cycles(i, arch, layout)?,
                    ready: ready.saturating_sub(now),
                    chain,
                    kind: kind_code(op),
                });
                chain_head.insert(i.addr_z, idx);
                let region = layout.region_index(i.addr_z)?;
                task_prov.push(layout.regions[region].provenance.unwrap_or(Provenance::Other));
                task_region.push(region);
                pending = true;
            }
            Opcode::MemWrite => {
                let (start, ..) = i.transfer();
                writes.push(PendingWrite {
                    instr: *i,
                    region: layout.region_index(start)?,
                });
                pending = true;
            }
            Opcode::Barrier => {
                let label = layout.stages.get(report.stages.len()).cloned().unwrap_or_default();
                let st = close_stage(
                    arch,
                    label,
                    now,
                    &mut mem_free,
                    &tasks,
                    &task_prov,
                    &task_region,
                    &writes,
                    dm_cycles,
                    &dm_regions,
                    &mut report,
                );
                now += st.cycles;
                mem_free = mem_free.max(now);
                report.stages.push(st);
                tasks.clear();
                task_prov.clear();
                task_region.clear();
                chain_head.clear();
                writes.clear();
                dm_regions.clear();
                dm_cycles = 0;
                resident = Residency::default();
                pending = false;
            }
            _ => unreachable!("all opcodes handled"),
        }
    }
    if pending {
        return Err(SimError::Malformed("stream does not end with a barrier".into()));
    }
    report.total_cycles = now;
    report.outputs = m.outputs()?;
    report.finalize();
    Ok(report)
}

fn ready_all(resident: &Residency, fp: &[Rect], pc: usize) -> Result<u64, SimError> {
    fp.iter().try_fold(0, |acc, r| {
        resident
            .ready_rect(r)
            .map(|x| acc.max(x))
            .ok_or_else(|| SimError::Malformed(format!("instruction {pc} reads words {} not transferred in this stage", r.start)))
    })
}

#[allow(clippy::too_many_arguments)]
fn close_stage(
    arch: &ArchConfig,
    label: String,
    now: u64,
    mem_free: &mut u64,
    tasks: &[SchedTask],
    prov: &[Provenance],
    regions: &[usize],
    writes: &[PendingWrite],
    dm_cycles: u64,
    dm_regions: &[usize],
    report: &mut SimReport,
) -> StageReport {
    let s = schedule(tasks, arch.n_pe);
    for (pe, b) in s.pe_busy.iter().enumerate() {
        report.pe_busy[pe] += b;
    }
    for w in writes {
        let producer = s
            .slots
            .iter()
            .zip(regions)
            .filter(|(_, r)| **r == w.region)
            .map(|(sl, _)| sl.finish)
            .max()
            .unwrap_or(0);
        let dm_ready = if dm_regions.contains(&w.region) { dm_cycles } else { 0 };
        let begin = (*mem_free).max(now + producer.max(dm_ready));
        *mem_free = begin + w.instr.transfer_bytes().div_ceil(arch.mem_bandwidth);
    }
    let compute_span = s.makespan;
    let end = (now + compute_span).max(*mem_free).max(now);
    let dm_extra = dm_cycles.saturating_sub(compute_span);
    let cycles = end - now + dm_extra;
    let union = busy_union(&s.slots);
    let mut by_prov: BTreeMap<Provenance, u64> = BTreeMap::new();
    for (sl, p) in s.slots.iter().zip(prov) {
        *by_prov.entry(*p).or_insert(0) += sl.finish - sl.start;
    }
    StageReport {
        label,
        cycles,
        compute_span,
        busy: union,
        busy_by_provenance: report::largest_remainder(union, &by_prov),
        dm_cycles,
        dm_extra,
        memory_exposed: cycles - union - dm_extra,
        tasks: tasks.len(),
    }
}

#[cfg(test)]
mod tests;
