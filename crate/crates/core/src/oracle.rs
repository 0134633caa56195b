//! Wide-precision reference executor and output comparison.
//!
//! Layers are evaluated from their textbook definitions in `f64`: direct
//! convolution, explicit message passing, dense products. Nothing here goes
//! through the lowering or the primitives.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::model_ir::{
    ComputationGraph, DmMode, DmSpec, FusedOp, IrError, Layer, LayerOp, PoolKind, Reduction,
    Shape, SparseMatrix, Tensor,
};
use crate::primitives::{fp16_ordinal_distance, fp16_round_f64, fp16_ulp};

#[derive(Clone, Debug, PartialEq)]
enum Val {
    Dense(Vec<f64>),
    /// Edge values on the triples of `pattern`, in pattern order.
    Scores { pattern: SparseMatrix, vals: Vec<f64> },
}

impl Val {
    fn data(&self) -> &[f64] {
        match self {
            Val::Dense(v) => v,
            Val::Scores { vals, .. } => vals,
        }
    }
}

fn err(layer: &str, detail: impl Into<String>) -> IrError {
    IrError::BadParam {
        layer: layer.to_string(),
        message: detail.into(),
    }
}

fn wide(t: &Tensor) -> Vec<f64> {
    t.values().iter().map(|v| *v as f64).collect()
}

fn conv(x: &[f64], (c, h, w): (usize, usize, usize), p: &crate::model_ir::ConvParams, wt: &Tensor) -> Vec<f64> {
    let wv = wide(wt);
    let (ho, wo) = crate::model_ir::conv_out_hw(h, w, p.k1, p.k2, p.stride, p.padding).unwrap_or((0, 0));
    let mut out = vec![0.0; p.c_out * ho * wo];
    for o in 0..p.c_out {
        for oy in 0..ho {
            for ox in 0..wo {
                let mut s = 0.0;
                for i in 0..c {
                    for r in 0..p.k1 {
                        for q in 0..p.k2 {
                            let y = (oy * p.stride + r) as isize - p.padding as isize;
                            let xx = (ox * p.stride + q) as isize - p.padding as isize;
                            if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                continue;
                            }
                            let wv = wv[((o * p.c_in + i) * p.k1 + r) * p.k2 + q];
                            s += wv * x[(i * h + y as usize) * w + xx as usize];
                        }
                    }
                }
                out[(o * ho + oy) * wo + ox] = s;
            }
        }
    }
    out
}

fn pool(x: &[f64], (c, h, w): (usize, usize, usize), kind: PoolKind, k: usize, s: usize) -> Vec<f64> {
    let ho = (h - k) / s + 1;
    let wo = (w - k) / s + 1;
    let mut out = Vec::with_capacity(c * ho * wo);
    for ch in 0..c {
        for oy in 0..ho {
            for ox in 0..wo {
                let window = (0..k).flat_map(|dy| (0..k).map(move |dx| (dy, dx)));
                let vals = window.map(|(dy, dx)| x[(ch * h + oy * s + dy) * w + ox * s + dx]);
                out.push(match kind {
                    PoolKind::Max => vals.fold(f64::NEG_INFINITY, f64::max),
                    PoolKind::Avg => vals.sum::<f64>() / (k * k) as f64,
                });
            }
        }
    }
    out
}

/// `h_out[v] = rho({ e_uv * h[u] : u in N(v) })`.
fn message_passing(a: &SparseMatrix, vals: &[f64], h: &[f64], f: usize, reduction: Reduction) -> Vec<f64> {
    let n = a.n_rows();
    let mut out = vec![0.0; n * f];
    let mut seen = vec![false; n];
    for (t, e) in a.triples().iter().zip(vals) {
        let (u, v) = (t.src as usize, t.dst as usize);
        for j in 0..f {
            let m = e * h[u * f + j];
            let o = &mut out[v * f + j];
            match reduction {
                Reduction::Sum => *o += m,
                Reduction::Max => *o = if seen[v] { o.max(m) } else { m },
            }
        }
        seen[v] = true;
    }
    out
}

fn dm(x: &[f64], shape: &Shape, spec: &DmSpec) -> Vec<f64> {
    match (spec.mode, shape) {
        (DmMode::ChannelToNode, _) => x.to_vec(),
        (DmMode::PatchToNode, Shape::FeatureMap { c, h, w }) => {
            let (ph, pw) = spec.patch.unwrap_or((1, 1));
            let (gy, gx) = (h / ph, w / pw);
            let mut out = Vec::with_capacity(x.len());
            for py in 0..gy {
                for px in 0..gx {
                    for ch in 0..*c {
                        for dy in 0..ph {
                            for dx in 0..pw {
                                out.push(x[(ch * h + py * ph + dy) * w + px * pw + dx]);
                            }
                        }
                    }
                }
            }
            out
        }
        (DmMode::NodeToChannel, Shape::Matrix { rows, cols }) => {
            let mut out = vec![0.0; x.len()];
            for v in 0..*rows {
                let ch = spec.channel_of_node.as_ref().map_or(v, |p| p[v]);
                out[ch * cols..(ch + 1) * cols].copy_from_slice(&x[v * cols..(v + 1) * cols]);
            }
            out
        }
        _ => x.to_vec(),
    }
}

fn elementwise(g: &ComputationGraph, layer: &str, x: &mut Val, shape: &Shape, op: &FusedOp) -> Result<(), IrError> {
    let data = match x {
        Val::Dense(v) => v,
        Val::Scores { vals, .. } => vals,
    };
    match op {
        FusedOp::Relu => data.iter_mut().for_each(|v| *v = v.max(0.0)),
        FusedOp::Norm { scale, shift } => {
            let get = |id: &str| g.tensors.get(id).map(wide).ok_or_else(|| err(layer, format!("missing {id}")));
            let (sc, sh) = (get(scale)?, get(shift)?);
            let (rows, cols) = shape.as_matrix().ok_or_else(|| err(layer, "norm on scores"))?;
            let by_row = matches!(shape, Shape::FeatureMap { .. });
            for r in 0..rows {
                for c in 0..cols {
                    let ch = if by_row { r } else { c };
                    let v = &mut data[r * cols + c];
                    *v = *v * sc[ch] + sh[ch];
                }
            }
        }
    }
    Ok(())
}

fn softmax_by_dst(pattern: &SparseMatrix, vals: &mut [f64]) {
    let t = pattern.triples();
    let mut start = 0;
    while start < t.len() {
        let mut end = start;
        while end < t.len() && t[end].dst == t[start].dst {
            end += 1;
        }
        let m = vals[start..end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = vals[start..end].iter().map(|v| (v - m).exp()).sum();
        for v in &mut vals[start..end] {
            *v = (*v - m).exp() / s;
        }
        start = end;
    }
}

fn eval_layer(g: &ComputationGraph, layer: &Layer, env: &BTreeMap<String, (Val, Shape)>) -> Result<(Val, Shape), IrError> {
    let id = layer.id.as_str();
    let eff = g.effective_inputs(layer).map_err(|m| err(id, m))?;
    let mut ins: Vec<(Val, Shape)> = Vec::new();
    for (slot, (eff_shape, spec)) in eff.iter().enumerate() {
        let (v, raw) = env
            .get(&layer.inputs[slot])
            .ok_or_else(|| err(id, format!("{} evaluated out of order", layer.inputs[slot])))?;
        let v = match spec {
            Some(s) => Val::Dense(dm(v.data(), raw, s)),
            None => v.clone(),
        };
        ins.push((v, eff_shape.clone()));
    }
    let out_shape = g.shapes.get(id).cloned().ok_or_else(|| err(id, "shape unknown"))?;
    let x = ins[0].0.data();
    let mut out = match &layer.op {
        LayerOp::Conv(p) => {
            let Shape::FeatureMap { c, h, w } = ins[0].1 else {
                return Err(err(id, "conv input"));
            };
            Val::Dense(conv(x, (c, h, w), p, &g.tensors[&p.weight]))
        }
        LayerOp::Pool { kind, window, stride } => {
            let Shape::FeatureMap { c, h, w } = ins[0].1 else {
                return Err(err(id, "pool input"));
            };
            Val::Dense(pool(x, (c, h, w), *kind, *window, *stride))
        }
        LayerOp::Mp { reduction, graph } => {
            let f = ins[0].1.as_matrix().map(|m| m.1).unwrap_or(0);
            match (graph, ins.get(1)) {
                (_, Some((Val::Scores { pattern, vals }, _))) => Val::Dense(message_passing(pattern, vals, x, f, *reduction)),
                (Some(gid), None) => {
                    let a = &g.graphs[gid];
                    let e: Vec<f64> = a.triples().iter().map(|t| t.val as f64).collect();
                    Val::Dense(message_passing(a, &e, x, f, *reduction))
                }
                _ => return Err(err(id, "MP needs an adjacency")),
            }
        }
        LayerOp::Linear { f_in, f_out, weight } => {
            let w = wide(&g.tensors[weight]);
            let n = x.len() / f_in;
            let mut o = vec![0.0; n * f_out];
            for i in 0..n {
                for j in 0..*f_out {
                    o[i * f_out + j] = (0..*f_in).map(|k| x[i * f_in + k] * w[k * f_out + j]).sum();
                }
            }
            Val::Dense(o)
        }
        LayerOp::Vip { graph, softmax } => {
            let a = g.graphs[graph].clone();
            let f = ins[0].1.as_matrix().map(|m| m.1).unwrap_or(0);
            let mut vals: Vec<f64> = a
                .triples()
                .iter()
                .map(|t| {
                    let (u, v) = (t.src as usize, t.dst as usize);
                    (0..f).map(|j| x[v * f + j] * x[u * f + j]).sum()
                })
                .collect();
            if *softmax {
                softmax_by_dst(&a, &mut vals);
            }
            Val::Scores { pattern: a, vals }
        }
        LayerOp::Dm(spec) => Val::Dense(dm(x, &ins[0].1, spec)),
        LayerOp::Norm { scale, shift } => {
            let mut v = ins[0].0.clone();
            let op = FusedOp::Norm {
                scale: scale.clone(),
                shift: shift.clone(),
            };
            elementwise(g, id, &mut v, &out_shape, &op)?;
            v
        }
        LayerOp::Activation(_) => {
            let mut v = ins[0].0.clone();
            elementwise(g, id, &mut v, &out_shape, &FusedOp::Relu)?;
            v
        }
    };
    for op in &layer.epilogue {
        elementwise(g, id, &mut out, &out_shape, op)?;
    }
    Ok((out, out_shape))
}

/// Model input tensors of `g`.
pub fn graph_inputs(g: &ComputationGraph) -> BTreeMap<String, Tensor> {
    g.input_tensors()
        .into_iter()
        .map(|id| {
            let t = g.tensors[&id].clone();
            (id, t)
        })
        .collect()
}

/// Reference outputs of every graph output layer.
pub fn run_reference(g: &ComputationGraph, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Vec<f64>>, IrError> {
    let order = g
        .topo_order()
        .ok_or_else(|| IrError::from_violations(g.validate().err().unwrap_or_default()))?;
    run_reference_ordered(g, inputs, &order)
}

/// As [`run_reference`] with an explicit layer visit order, which must be
/// a topological order of `g`.
pub fn run_reference_ordered(
    g: &ComputationGraph,
    inputs: &BTreeMap<String, Tensor>,
    order: &[usize],
) -> Result<BTreeMap<String, Vec<f64>>, IrError> {
    g.validate().map_err(IrError::from_violations)?;
    let mut env: BTreeMap<String, (Val, Shape)> = BTreeMap::new();
    for (id, t) in inputs {
        let shape = crate::model_ir::tensor_shape(t)?;
        env.insert(id.clone(), (Val::Dense(wide(t)), shape));
    }
    for &i in order {
        let layer = &g.layers[i];
        let v = eval_layer(g, layer, &env)?;
        env.insert(layer.id.clone(), v);
    }
    Ok(g
        .output_layers()
        .into_iter()
        .map(|id| {
            let v = env[&id].0.data().to_vec();
            (id, v)
        })
        .collect())
}

/// Deepest reduction of any layer, the quantity the tolerance scales with.
pub fn reduction_depth(g: &ComputationGraph) -> usize {
    g.layers
        .iter()
        .map(|l| match &l.op {
            LayerOp::Conv(p) => p.c_in * p.k1 * p.k2,
            LayerOp::Linear { f_in, .. } => *f_in,
            LayerOp::Pool { window, .. } => window * window,
            LayerOp::Mp { graph: Some(gid), .. } => {
                let a = &g.graphs[gid];
                let mut deg = vec![0usize; a.n_rows()];
                a.triples().iter().for_each(|t| deg[t.dst as usize] += 1);
                deg.into_iter().max().unwrap_or(0)
            }
            LayerOp::Mp { .. } => g.value_shape(&l.inputs[0]).map_or(1, |s| s.as_matrix().map_or(1, |m| m.0)),
            LayerOp::Vip { .. } => g.value_shape(&l.inputs[0]).map_or(1, |s| s.as_matrix().map_or(1, |m| m.1)),
            _ => 1,
        })
        .max()
        .unwrap_or(1)
}

/// Default tolerance in fp16 ULPs: 2 up to depth 1024, then growing with
/// `log2(depth)`.
pub fn default_tolerance(depth: usize) -> f64 {
    if depth <= 1024 {
        2.0
    } else {
        2.0 * (depth as f64).log2() / 10.0
    }
}

/// Per-tensor, magnitude-scaled distance: `|a - b|` in ULPs of the larger
/// of the two tensors' maximum magnitudes. Symmetric in its arguments.
pub fn ulp_distances(a: &[f32], b: &[f32]) -> Vec<f64> {
    let scale = a
        .iter()
        .chain(b)
        .map(|v| v.abs() as f64)
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let ulp = fp16_ulp(scale);
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            if x == y {
                0.0
            } else {
                ((*x as f64) - (*y as f64)).abs() / ulp
            }
        })
        .collect()
}

/// Histogram buckets of ordinal fp16 distance.
pub const HISTOGRAM_BUCKETS: [&str; 7] = ["0", "1", "2", "3", "4-7", "8-15", "16+"];

fn bucket(d: u32) -> usize {
    match d {
        0..=3 => d as usize,
        4..=7 => 4,
        8..=15 => 5,
        _ => 6,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mismatch {
    pub index: usize,
    pub got: f32,
    pub want: f64,
    pub ulps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputComparison {
    pub name: String,
    pub elements: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub max_ulps: f64,
    pub histogram: [usize; 7],
    pub pass: bool,
    /// First failing elements, at most 16.
    pub failures: Vec<Mismatch>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub tolerance_ulps: f64,
    pub outputs: Vec<OutputComparison>,
    pub pass: bool,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn max_ulps(&self) -> f64 {
        self.outputs.iter().map(|o| o.max_ulps).fold(0.0, f64::max)
    }
}

/// Element-wise check of simulated outputs against the reference.
pub fn compare(sim: &BTreeMap<String, Tensor>, reference: &BTreeMap<String, Vec<f64>>, tol_ulps: f64) -> ComparisonReport {
    let mut outputs = Vec::new();
    for (name, want) in reference {
        let Some(got) = sim.get(name).map(|t| t.values()) else {
            outputs.push(OutputComparison {
                name: name.clone(),
                elements: want.len(),
                max_abs_error: f64::INFINITY,
                max_rel_error: f64::INFINITY,
                max_ulps: f64::INFINITY,
                histogram: [0; 7],
                pass: false,
                failures: Vec::new(),
            });
            continue;
        };
        let rounded: Vec<f32> = want.iter().map(|v| fp16_round_f64(*v)).collect();
        let ok_len = got.len() == want.len();
        let dist = ulp_distances(got, &rounded);
        let mut histogram = [0usize; 7];
        let (mut max_abs, mut max_rel, mut max_ulps) = (0.0f64, 0.0f64, 0.0f64);
        let mut failures = Vec::new();
        for (i, ((g, w), d)) in got.iter().zip(want).zip(&dist).enumerate() {
            let abs = (*g as f64 - w).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / w.abs().max(f64::MIN_POSITIVE));
            max_ulps = max_ulps.max(*d);
            histogram[bucket(fp16_ordinal_distance(*g, rounded[i]))] += 1;
            if *d > tol_ulps && failures.len() < 16 {
                failures.push(Mismatch {
                    index: i,
                    got: *g,
                    want: *w,
                    ulps: *d,
                });
            }
        }
        let pass = ok_len && max_ulps <= tol_ulps;
        outputs.push(OutputComparison {
            name: name.clone(),
            elements: want.len(),
            max_abs_error: max_abs,
            max_rel_error: max_rel,
            max_ulps,
            histogram,
            pass,
            failures,
        });
    }
    let pass = outputs.iter().all(|o| o.pass);
    ComparisonReport {
        tolerance_ulps: tol_ulps,
        outputs,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::parse_model_str;

    #[test]
    fn linear_identity_and_delta_conv() {
        let text = r#"{
          "tensors": [
            {"id": "x", "seed": 4, "dims": [2, 5, 5]},
            {"id": "w", "values": [0,0,0,0,1,0,0,0,0, 0,0,0,0,0,0,0,0,0, 0,0,0,0,0,0,0,0,0, 0,0,0,0,1,0,0,0,0], "dims": [2, 2, 3, 3]},
            {"id": "h", "seed": 5, "dims": [3, 4]},
            {"id": "eye", "values": [1,0,0,0, 0,1,0,0, 0,0,1,0, 0,0,0,1], "dims": [4, 4]}
          ],
          "layers": [
            {"id": "c", "kind": "Conv", "params": {"c_in": 2, "c_out": 2, "k1": 3, "k2": 3, "padding": 1, "weight": "w"}, "inputs": ["x"]},
            {"id": "l", "kind": "Linear", "params": {"f_in": 4, "f_out": 4, "weight": "eye"}, "inputs": ["h"]}
          ]
        }"#;
        let g = parse_model_str(text).unwrap();
        let out = run_reference(&g, &graph_inputs(&g)).unwrap();
        assert_eq!(out["c"], wide(&g.tensors["x"]));
        assert_eq!(out["l"], wide(&g.tensors["h"]));
    }

    #[test]
    fn compare_basics() {
        let t = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let sim: BTreeMap<_, _> = [("o".to_string(), t.clone())].into();
        let exact: BTreeMap<_, _> = [("o".to_string(), vec![1.0, 2.0, 3.0])].into();
        let r = compare(&sim, &exact, 2.0);
        assert!(r.pass);
        assert_eq!(r.outputs[0].max_abs_error, 0.0);
        // one ULP at scale 3 is 2^-9
        let off: BTreeMap<_, _> = [("o".to_string(), vec![1.0, 2.0, 3.0 + 2f64.powi(-9)])].into();
        let r = compare(&sim, &off, 2.0);
        assert!(r.pass);
        assert_eq!(r.outputs[0].max_ulps, 1.0);
        assert!(!compare(&sim, &off, 0.0).pass);
        assert_eq!(r.outputs[0].histogram[1], 1);
    }

    #[test]
    fn ulp_metric_is_symmetric() {
        let a = [1.0f32, -0.5, 7.0];
        let b = [1.0f32, -0.25, 7.5];
        assert_eq!(ulp_distances(&a, &b), ulp_distances(&b, &a));
    }

    #[test]
    fn tolerance_scaling() {
        assert_eq!(default_tolerance(3), 2.0);
        assert_eq!(default_tolerance(1024), 2.0);
        assert!((default_tolerance(4096) - 2.4).abs() < 1e-12);
    }

    #[test]
    fn lowered_program_matches_reference() {
        let text = r#"{
          "tensors": [
            {"id": "x", "seed": 1, "dims": [3, 8, 8]},
            {"id": "w", "seed": 2, "dims": [8, 3, 3, 3], "scale": 0.2},
            {"id": "lw", "seed": 3, "dims": [64, 16], "scale": 0.125}
          ],
          "graphs": [{"id": "a", "n": 8, "triples": [[0, 1, 0.5], [1, 0, 0.5], [2, 1, 0.5], [7, 7, 1.0], [3, 4, 0.25]]}],
          "layers": [
            {"id": "conv", "kind": "Conv", "params": {"c_in": 3, "c_out": 8, "k1": 3, "k2": 3, "padding": 1, "weight": "w"}, "inputs": ["x"]},
            {"id": "relu", "kind": "Activation", "params": {"kind": "relu"}, "inputs": ["conv"]},
            {"id": "mp", "kind": "MP", "params": {"graph": "a"}, "inputs": ["relu"]},
            {"id": "lin", "kind": "Linear", "params": {"f_in": 64, "f_out": 16, "weight": "lw"}, "inputs": ["mp"]}
          ]
        }"#;
        let g = parse_model_str(text).unwrap();
        let reference = run_reference(&g, &graph_inputs(&g)).unwrap();
        let fused = crate::lowering::fuse_layers(&crate::lowering::insert_dm_layers(&g).unwrap());
        let prog = crate::lowering::lower_graph(&fused).unwrap();
        let got = crate::lowering::interpret(&prog).unwrap().outputs(&prog);
        let r = compare(&got, &reference, 2.0);
        assert!(r.pass, "{}", r.to_json());
    }
}
