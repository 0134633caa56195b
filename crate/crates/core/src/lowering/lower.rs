use std::collections::BTreeMap;

use crate::model_ir::{
    tensor_shape, ComputationGraph, ConvParams, DmMode, DmSpec, FusedOp, Layer,
    LayerOp, PoolKind, Reduction, Shape, SparseMatrix, Tensor, Triple,
};

use super::{
    Axis, Constant, Def, EpilogueOp, LowerError, MatrixProgram, OpKind, Provenance, Shift,
    Storage, ValueId,
};

fn layer_err(layer: &str, message: impl Into<String>) -> LowerError {
    LowerError::Layer {
        layer: layer.to_string(),
        message: message.into(),
    }
}

fn add_input(prog: &mut MatrixProgram, name: &str, t: &Tensor) -> Result<(ValueId, Shape), LowerError> {
    let shape = tensor_shape(t)?;
    let (rows, cols) = shape.as_matrix().expect("tensor shapes are matrices or maps");
    let id = prog.add_value(name.to_string(), rows, cols, Storage::Dense, Def::Input);
    let data = t.reshape(vec![rows, cols])?;
    prog.inputs.push((name.to_string(), id, data));
    Ok((id, shape))
}

/// Kernel position `(r, c)` of `w` as the `c_out x c_in` matrix `KM_iᵀ`.
fn kernel_slice(p: &ConvParams, w: &Tensor, r: usize, c: usize) -> Tensor {
    let mut v = Vec::with_capacity(p.c_out * p.c_in);
    for o in 0..p.c_out {
        for i in 0..p.c_in {
            v.push(w.values()[((o * p.c_in + i) * p.k1 + r) * p.k2 + c]);
        }
    }
    Tensor::new(vec![p.c_out, p.c_in], v).expect("slice dims match")
}

/// Column selection `out[oy][ox] = src[oy*stride + dr][ox*stride + dc]`
/// as a `(ho*wo) x (sh*sw)` selection matrix.
fn selection(sh: usize, sw: usize, ho: usize, wo: usize, stride: usize, dr: isize, dc: isize) -> SparseMatrix {
    let mut t = Vec::new();
    for oy in 0..ho {
        for ox in 0..wo {
            let y = (oy * stride) as isize + dr;
            let x = (ox * stride) as isize + dc;
            if y >= 0 && x >= 0 && (y as usize) < sh && (x as usize) < sw {
                t.push(Triple::new((y as usize * sw + x as usize) as u32, (oy * wo + ox) as u32, 1.0));
            }
        }
    }
    SparseMatrix::new(ho * wo, sh * sw, t).expect("selection indices in range")
}

pub(crate) fn emit_conv(
    prog: &mut MatrixProgram,
    p: &ConvParams,
    w: &Tensor,
    x: ValueId,
    (c, h, wd): (usize, usize, usize),
    layer: &str,
) -> Result<ValueId, LowerError> {
    if c != p.c_in || w.dims() != [p.c_out, p.c_in, p.k1, p.k2] {
        return Err(layer_err(layer, "weight or input channels do not match"));
    }
    let pad = p.padding;
    let (ho, wo) = crate::model_ir::conv_out_hw(h, wd, p.k1, p.k2, p.stride, pad)
        .ok_or_else(|| layer_err(layer, "kernel and padding leave an empty output"))?;
    let h1 = h + 2 * pad + 1 - p.k1;
    let w1 = wd + 2 * pad + 1 - p.k2;
    let prov = Provenance::Cnn;
    let mut terms: Vec<(ValueId, Option<Shift>)> = Vec::new();
    for r in 0..p.k1 {
        for cc in 0..p.k2 {
            let km = kernel_slice(p, w, r, cc);
            let hint = km.density();
            let i = r * p.k2 + cc;
            let kid = prog.add_constant(format!("{layer}.km{i}"), Constant::Dense(km));
            let v = prog.push_op(
                OpKind::MatMul {
                    lhs: kid,
                    rhs: x,
                    dims: (p.c_out, p.c_in, h * wd),
                    lhs_sparsity_hint: hint,
                },
                format!("{layer}.ofm{i}"),
                p.c_out,
                h * wd,
                Storage::Dense,
                prov,
                layer,
            );
            let shift = Shift {
                src_h: h,
                src_w: wd,
                dst_h: h1,
                dst_w: w1,
                dr: r as isize - pad as isize,
                dc: cc as isize - pad as isize,
            };
            let trivial = shift.dr == 0 && shift.dc == 0 && h1 == h && w1 == wd;
            terms.push((v, (!trivial).then_some(shift)));
        }
    }
    let mut level = 0;
    while terms.len() > 1 {
        let mut next = Vec::with_capacity(terms.len().div_ceil(2));
        for (n, pair) in terms.chunks(2).enumerate() {
            match pair {
                [a, b] => {
                    let v = prog.push_op(
                        OpKind::Add {
                            lhs: a.0,
                            rhs: b.0,
                            shifts: [a.1, b.1],
                        },
                        format!("{layer}.sum{level}_{n}"),
                        p.c_out,
                        h1 * w1,
                        Storage::Dense,
                        prov,
                        layer,
                    );
                    next.push((v, None));
                }
                [a] => next.push(*a),
                _ => unreachable!(),
            }
        }
        terms = next;
        level += 1;
    }
    let (v, shift) = terms[0];
    if p.stride == 1 && shift.is_none() {
        return Ok(v);
    }
    let (sh, sw, dr, dc) = match shift {
        Some(s) => (s.src_h, s.src_w, s.dr, s.dc),
        None => (h1, w1, 0, 0),
    };
    let sel = selection(sh, sw, ho, wo, p.stride, dr, dc);
    let sid = prog.add_constant(format!("{layer}.select"), Constant::Sparse(sel));
    Ok(prog.push_op(
        OpKind::SparseMatMul {
            adj: sid,
            rhs: v,
            reduction: Reduction::Sum,
            transposed: true,
        },
        format!("{layer}.out"),
        p.c_out,
        ho * wo,
        Storage::Dense,
        prov,
        layer,
    ))
}

pub(crate) fn emit_pool(
    prog: &mut MatrixProgram,
    kind: PoolKind,
    window: usize,
    stride: usize,
    x: ValueId,
    (c, h, w): (usize, usize, usize),
    layer: &str,
) -> Result<ValueId, LowerError> {
    let (ho, wo) = crate::model_ir::conv_out_hw(h, w, window, window, stride, 0)
        .ok_or_else(|| layer_err(layer, "pool window larger than input"))?;
    let val = match kind {
        PoolKind::Avg => 1.0 / (window * window) as f32,
        PoolKind::Max => 1.0,
    };
    let mut t = Vec::new();
    for oy in 0..ho {
        for ox in 0..wo {
            for dy in 0..window {
                for dx in 0..window {
                    let src = (oy * stride + dy) * w + ox * stride + dx;
                    t.push(Triple::new(src as u32, (oy * wo + ox) as u32, val));
                }
            }
        }
    }
    let sel = SparseMatrix::new(ho * wo, h * w, t)?;
    let sid = prog.add_constant(format!("{layer}.window"), Constant::Sparse(sel));
    let reduction = match kind {
        PoolKind::Avg => Reduction::Sum,
        PoolKind::Max => Reduction::Max,
    };
    Ok(prog.push_op(
        OpKind::SparseMatMul {
            adj: sid,
            rhs: x,
            reduction,
            transposed: true,
        },
        format!("{layer}.out"),
        c,
        ho * wo,
        Storage::Dense,
        Provenance::Cnn,
        layer,
    ))
}

fn input_program(input: &Tensor) -> Result<(MatrixProgram, ValueId, Shape), LowerError> {
    let mut prog = MatrixProgram::default();
    let (x, shape) = add_input(&mut prog, "x", input)?;
    Ok((prog, x, shape))
}

fn finish(mut prog: MatrixProgram, layer: &str, out: ValueId, shape: Shape) -> MatrixProgram {
    prog.outputs.push((layer.to_string(), out, shape));
    prog
}

fn feature_map(shape: &Shape, layer: &str) -> Result<(usize, usize, usize), LowerError> {
    match *shape {
        Shape::FeatureMap { c, h, w } => Ok((c, h, w)),
        ref s => Err(layer_err(layer, format!("expects a feature map, got {s}"))),
    }
}

/// kn2row lowering of one convolution applied to `input` (`c x h x w`).
pub fn lower_conv(p: &ConvParams, weight: &Tensor, input: &Tensor) -> Result<MatrixProgram, LowerError> {
    let (mut prog, x, shape) = input_program(input)?;
    let chw = feature_map(&shape, "conv")?;
    let out = emit_conv(&mut prog, p, weight, x, chw, "conv")?;
    let v = prog.value(out);
    let (ho, wo) = crate::model_ir::conv_out_hw(chw.1, chw.2, p.k1, p.k2, p.stride, p.padding).unwrap();
    debug_assert_eq!(v.cols, ho * wo);
    Ok(finish(prog, "conv", out, Shape::FeatureMap { c: p.c_out, h: ho, w: wo }))
}

pub fn lower_pool(kind: PoolKind, window: usize, stride: usize, input: &Tensor) -> Result<MatrixProgram, LowerError> {
    let (mut prog, x, shape) = input_program(input)?;
    let chw = feature_map(&shape, "pool")?;
    let out = emit_pool(&mut prog, kind, window, stride, x, chw, "pool")?;
    let (ho, wo) = crate::model_ir::conv_out_hw(chw.1, chw.2, window, window, stride, 0).unwrap();
    Ok(finish(prog, "pool", out, Shape::FeatureMap { c: chw.0, h: ho, w: wo }))
}

fn emit_mp(
    prog: &mut MatrixProgram,
    adj: ValueId,
    x: ValueId,
    reduction: Reduction,
    layer: &str,
) -> Result<ValueId, LowerError> {
    let (n, f) = (prog.value(x).rows, prog.value(x).cols);
    if prog.value(adj).rows != n || prog.value(adj).cols != n {
        return Err(layer_err(layer, format!("adjacency does not cover {n} vertices")));
    }
    Ok(prog.push_op(
        OpKind::SparseMatMul {
            adj,
            rhs: x,
            reduction,
            transposed: false,
        },
        format!("{layer}.out"),
        n,
        f,
        Storage::Dense,
        Provenance::Gnn,
        layer,
    ))
}

/// Message passing `A * H` with the given reduction.
pub fn lower_mp(adj: &SparseMatrix, reduction: Reduction, input: &Tensor) -> Result<MatrixProgram, LowerError> {
    let (mut prog, x, shape) = input_program(input)?;
    let a = prog.add_constant("adj".into(), Constant::Sparse(adj.clone()));
    let out = emit_mp(&mut prog, a, x, reduction, "mp")?;
    Ok(finish(prog, "mp", out, shape))
}

fn emit_linear(
    prog: &mut MatrixProgram,
    w: &Tensor,
    x: ValueId,
    prov: Provenance,
    layer: &str,
    wname: Option<ValueId>,
) -> Result<ValueId, LowerError> {
    let (f_in, f_out) = w.matrix_dims()?;
    let (n, cols) = (prog.value(x).rows, prog.value(x).cols);
    if cols != f_in {
        return Err(layer_err(layer, format!("weight expects {f_in} features, input has {cols}")));
    }
    let wid = match wname {
        Some(id) => id,
        None => prog.add_constant(format!("{layer}.weight"), Constant::Dense(w.clone())),
    };
    Ok(prog.push_op(
        OpKind::MatMul {
            lhs: x,
            rhs: wid,
            dims: (n, f_in, f_out),
            lhs_sparsity_hint: w.density(),
        },
        format!("{layer}.out"),
        n,
        f_out,
        Storage::Dense,
        prov,
        layer,
    ))
}

pub fn lower_linear(weight: &Tensor, input: &Tensor) -> Result<MatrixProgram, LowerError> {
    let (mut prog, x, _) = input_program(input)?;
    let out = emit_linear(&mut prog, weight, x, Provenance::Gnn, "linear", None)?;
    let v = prog.value(out);
    let shape = Shape::Matrix {
        rows: v.rows,
        cols: v.cols,
    };
    Ok(finish(prog, "linear", out, shape))
}

fn emit_vip(
    prog: &mut MatrixProgram,
    pattern: ValueId,
    x: ValueId,
    softmax: bool,
    layer: &str,
) -> Result<ValueId, LowerError> {
    let n = prog.value(x).rows;
    if prog.value(pattern).rows != n || prog.value(pattern).cols != n {
        return Err(layer_err(layer, format!("edge pattern does not cover {n} vertices")));
    }
    let out = prog.push_op(
        OpKind::SampledMatMul {
            pattern,
            lhs: x,
            rhs: x,
        },
        format!("{layer}.scores"),
        n,
        n,
        Storage::Scores { pattern },
        Provenance::Gnn,
        layer,
    );
    if softmax {
        prog.ops.last_mut().unwrap().epilogue.push(EpilogueOp::RowSoftmax);
    }
    Ok(out)
}

/// Edge scores `<h[dst], h[src]>` on `pattern`.
pub fn lower_vip(pattern: &SparseMatrix, softmax: bool, input: &Tensor) -> Result<MatrixProgram, LowerError> {
    let (mut prog, x, _) = input_program(input)?;
    let p = prog.add_constant("pattern".into(), Constant::Sparse(pattern.clone()));
    let out = emit_vip(&mut prog, p, x, softmax, "vip")?;
    let shape = Shape::Scores {
        n: pattern.n_rows(),
        nnz: pattern.nnz(),
    };
    Ok(finish(prog, "vip", out, shape))
}

struct GraphLowerer<'g> {
    g: &'g ComputationGraph,
    prog: MatrixProgram,
    /// Layer or input tensor id -> value currently holding it.
    values: BTreeMap<String, ValueId>,
    last_op: BTreeMap<String, usize>,
    constants: BTreeMap<String, ValueId>,
}

impl<'g> GraphLowerer<'g> {
    fn region(&self, id: &str, down: bool, depth: usize) -> Option<Provenance> {
        let l = self.g.layer(id)?;
        if depth > self.g.layers.len() {
            return None;
        }
        match &l.op {
            LayerOp::Conv(_) | LayerOp::Pool { .. } => Some(Provenance::Cnn),
            LayerOp::Mp { .. } | LayerOp::Vip { .. } => Some(Provenance::Gnn),
            _ if down => self
                .g
                .consumers(id)
                .iter()
                .find_map(|(c, _)| self.region(c, true, depth + 1)),
            _ => l.inputs.iter().find_map(|i| self.region(i, false, depth + 1)),
        }
    }

    /// Linear layers are accounted to the surrounding model portion.
    fn linear_provenance(&self, layer: &Layer) -> Provenance {
        layer
            .inputs
            .iter()
            .find_map(|i| self.region(i, false, 0))
            .or_else(|| self.region(&layer.id, true, 0))
            .unwrap_or(Provenance::Gnn)
    }

    fn constant(&mut self, key: &str, make: impl FnOnce() -> Constant) -> ValueId {
        if let Some(id) = self.constants.get(key) {
            return *id;
        }
        let id = self.prog.add_constant(key.to_string(), make());
        self.constants.insert(key.to_string(), id);
        id
    }

    fn tensor(&self, layer: &str, id: &str) -> Result<&'g Tensor, LowerError> {
        self.g
            .tensors
            .get(id)
            .ok_or_else(|| layer_err(layer, format!("missing tensor {id}")))
    }

    fn standalone_dm(&mut self, v: ValueId, dm: &DmSpec, raw: &Shape, eff: &Shape, layer: &str, streamed: bool) -> ValueId {
        let (rows, cols) = eff.as_matrix().expect("DM outputs are matrices");
        let in_hw = match *raw {
            Shape::FeatureMap { h, w, .. } => Some((h, w)),
            _ => None,
        };
        let out = self.prog.push_op(
            OpKind::Transpose {
                input: v,
                dm: dm.clone(),
                in_hw,
            },
            format!("{layer}.dm"),
            rows,
            cols,
            Storage::Dense,
            Provenance::Dm,
            layer,
        );
        self.prog.ops.last_mut().unwrap().streamed = streamed;
        out
    }

    /// Value feeding `slot` of `layer` after realising its DM attribute.
    fn slot_value(&mut self, layer: &Layer, slot: usize, dm: Option<&DmSpec>, eff: &Shape) -> Result<ValueId, LowerError> {
        let inp = &layer.inputs[slot];
        let v = *self
            .values
            .get(inp)
            .ok_or_else(|| layer_err(&layer.id, format!("input {inp} not lowered")))?;
        let raw = self.g.value_shape(inp).expect("validated graph has shapes");
        let Some(dm) = dm else {
            return Ok(v);
        };
        match dm.mode {
            DmMode::ChannelToNode => Ok(v),
            DmMode::PatchToNode => Ok(self.standalone_dm(v, dm, &raw, eff, &layer.id, true)),
            DmMode::NodeToChannel => {
                let Some(perm) = &dm.channel_of_node else {
                    return Ok(v);
                };
                if perm.iter().enumerate().all(|(i, p)| i == *p) {
                    return Ok(v);
                }
                let shuffle_ok = self.g.is_layer(inp)
                    && self.g.consumers(inp).len() == 1
                    && self.last_op.get(inp).is_some_and(|&o| {
                        self.prog.ops[o].out == v && self.prog.ops[o].output_shuffle.is_none()
                    });
                if shuffle_ok {
                    let o = self.last_op[inp];
                    self.prog.ops[o].output_shuffle = Some(perm.clone());
                    Ok(v)
                } else {
                    Ok(self.standalone_dm(v, dm, &raw, eff, &layer.id, false))
                }
            }
        }
    }

    fn epilogue_ops(&self, layer: &Layer, out_shape: &Shape) -> Result<Vec<EpilogueOp>, LowerError> {
        layer
            .epilogue
            .iter()
            .map(|e| self.fused_op(layer, e, out_shape))
            .collect()
    }

    fn fused_op(&self, layer: &Layer, e: &FusedOp, shape: &Shape) -> Result<EpilogueOp, LowerError> {
        Ok(match e {
            FusedOp::Relu => EpilogueOp::Relu,
            FusedOp::Norm { scale, shift } => {
                let axis = match shape {
                    Shape::FeatureMap { .. } => Axis::Row,
                    Shape::Matrix { .. } => Axis::Col,
                    Shape::Scores { .. } => return Err(layer_err(&layer.id, "Norm on edge scores")),
                };
                EpilogueOp::NormAffine {
                    scale: self.tensor(&layer.id, scale)?.values().to_vec(),
                    shift: self.tensor(&layer.id, shift)?.values().to_vec(),
                    axis,
                }
            }
        })
    }

    fn lower_layer(&mut self, layer: &Layer) -> Result<(), LowerError> {
        let eff = self
            .g
            .effective_inputs(layer)
            .map_err(|m| layer_err(&layer.id, m))?;
        let out_shape = self
            .g
            .shapes
            .get(&layer.id)
            .cloned()
            .ok_or_else(|| layer_err(&layer.id, "shape not inferred"))?;
        let first_op = self.prog.ops.len();
        let mut ins = Vec::new();
        for (slot, (shape, dm)) in eff.iter().enumerate() {
            ins.push(self.slot_value(layer, slot, dm.as_ref(), shape)?);
        }
        let id = layer.id.as_str();
        let out = match &layer.op {
            LayerOp::Conv(p) => {
                let chw = feature_map(&eff[0].0, id)?;
                let w = self.tensor(id, &p.weight)?;
                emit_conv(&mut self.prog, p, w, ins[0], chw, id)?
            }
            LayerOp::Pool { kind, window, stride } => {
                let chw = feature_map(&eff[0].0, id)?;
                emit_pool(&mut self.prog, *kind, *window, *stride, ins[0], chw, id)?
            }
            LayerOp::Mp { reduction, graph } => {
                let adj = match graph {
                    Some(gid) if ins.len() == 1 => {
                        let a = self.g.graphs[gid].clone();
                        self.constant(gid, || Constant::Sparse(a))
                    }
                    _ => ins[1],
                };
                emit_mp(&mut self.prog, adj, ins[0], *reduction, id)?
            }
            LayerOp::Linear { weight, .. } => {
                let w = self.tensor(id, weight)?;
                let wid = self.constant(weight, || Constant::Dense(w.clone()));
                let prov = self.linear_provenance(layer);
                emit_linear(&mut self.prog, w, ins[0], prov, id, Some(wid))?
            }
            LayerOp::Vip { graph, softmax } => {
                let a = self.g.graphs[graph].clone();
                let pid = self.constant(graph, || Constant::Sparse(a));
                emit_vip(&mut self.prog, pid, ins[0], *softmax, id)?
            }
            LayerOp::Dm(spec) => {
                let raw = self.g.value_shape(&layer.inputs[0]).expect("validated");
                self.standalone_dm(ins[0], spec, &raw, &out_shape, id, false)
            }
            LayerOp::Norm { .. } | LayerOp::Activation(_) => {
                let x = ins[0];
                if matches!(self.prog.value(x).storage, Storage::Scores { .. }) {
                    return Err(layer_err(id, "element-wise layer on edge scores must be fused"));
                }
                let rows = self.prog.value(x).rows;
                let cols = self.prog.value(x).cols;
                let ones = self.constant(&format!("ones{rows}"), || Constant::Vector(vec![1.0; rows]));
                let own = match &layer.op {
                    LayerOp::Activation(_) => FusedOp::Relu,
                    LayerOp::Norm { scale, shift } => FusedOp::Norm {
                        scale: scale.clone(),
                        shift: shift.clone(),
                    },
                    _ => unreachable!(),
                };
                let e = self.fused_op(layer, &own, &out_shape)?;
                let v = self.prog.push_op(
                    OpKind::ScaleRows { scale: ones, rhs: x },
                    format!("{id}.out"),
                    rows,
                    cols,
                    Storage::Dense,
                    Provenance::Other,
                    id,
                );
                self.prog.ops.last_mut().unwrap().epilogue.push(e);
                v
            }
        };
        let epi = self.epilogue_ops(layer, &out_shape)?;
        if !epi.is_empty() {
            let last = self.prog.ops.len() - 1;
            if last < first_op || self.prog.ops[last].out != out {
                return Err(layer_err(id, "epilogue has no producing op"));
            }
            self.prog.ops[last].epilogue.extend(epi);
        }
        if self.prog.ops.len() > first_op {
            self.last_op.insert(layer.id.clone(), self.prog.ops.len() - 1);
        }
        self.values.insert(layer.id.clone(), out);
        Ok(())
    }
}

/// Lowers a (typically fused) graph to a matrix program in topological
/// order. DM attributes are realised on the way: channel-to-node is free,
/// patch-to-node becomes one streamed DM op, node-to-channel becomes the
/// producer's output shuffle.
pub fn lower_graph(g: &ComputationGraph) -> Result<MatrixProgram, LowerError> {
    g.validate().map_err(crate::model_ir::IrError::from_violations)?;
    let mut lw = GraphLowerer {
        g,
        prog: MatrixProgram::default(),
        values: BTreeMap::new(),
        last_op: BTreeMap::new(),
        constants: BTreeMap::new(),
    };
    for name in g.input_tensors() {
        let (v, _) = add_input(&mut lw.prog, &name, &g.tensors[&name])?;
        lw.values.insert(name, v);
    }
    let order = g.topo_order().expect("validated graph is acyclic");
    for i in order {
        lw.lower_layer(&g.layers[i])?;
    }
    for out in g.output_layers() {
        let v = lw.values[&out];
        let shape = g.shapes[&out].clone();
        lw.prog.outputs.push((out, v, shape));
    }
    lw.prog.check_ssa()?;
    Ok(lw.prog)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_op_counts() {
        let p = |k: usize, stride: usize, padding: usize| ConvParams {
            c_in: 2,
            c_out: 3,
            k1: k,
            k2: k,
            stride,
            padding,
            weight: "w".into(),
        };
        let x = Tensor::zeros(vec![2, 5, 5]).unwrap();
        let count = |prog: &MatrixProgram, name: &str| prog.ops.iter().filter(|o| o.kind.name() == name).count();
        let w1 = Tensor::zeros(vec![3, 2, 1, 1]).unwrap();
        let prog = lower_conv(&p(1, 1, 0), &w1, &x).unwrap();
        assert_eq!((count(&prog, "MatMul"), count(&prog, "Add"), prog.ops.len()), (1, 0, 1));
        let w3 = Tensor::zeros(vec![3, 2, 3, 3]).unwrap();
        let prog = lower_conv(&p(3, 1, 1), &w3, &x).unwrap();
        assert_eq!((count(&prog, "MatMul"), count(&prog, "Add"), prog.ops.len()), (9, 8, 17));
        let prog = lower_conv(&p(3, 2, 1), &w3, &x).unwrap();
        assert_eq!(count(&prog, "SparseMatMul"), 1);
        assert!(prog.check_ssa().is_ok());
    }
}
