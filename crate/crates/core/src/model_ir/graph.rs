use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{DmMode, DmSpec, IrError, Layer, LayerOp, Shape, SparseMatrix, Tensor};

/// One data dependency with the producer's output shape.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub producer: String,
    pub consumer: String,
    pub slot: usize,
    pub shape: Shape,
}

/// A single invariant violation found by [`ComputationGraph::validate`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Cycle(Vec<String>),
    Unreachable(String),
    Shape {
        producer: String,
        consumer: String,
        detail: String,
    },
    Dangling { layer: String, name: String },
    DuplicateId(String),
    Invalid { layer: String, detail: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Cycle(ids) => write!(f, "cycle: [{}]", ids.join(",")),
            Violation::Unreachable(id) => write!(f, "unreachable: {id}"),
            Violation::Shape {
                producer,
                consumer,
                detail,
            } => write!(f, "shape mismatch {producer} -> {consumer}: {detail}"),
            Violation::Dangling { layer, name } => {
                write!(f, "dangling reference in {layer}: {name}")
            }
            Violation::DuplicateId(id) => write!(f, "duplicate id: {id}"),
            Violation::Invalid { layer, detail } => write!(f, "invalid layer {layer}: {detail}"),
        }
    }
}

/// The compiler's IR: layers, their resolved data, and inferred shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComputationGraph {
    pub layers: Vec<Layer>,
    pub tensors: BTreeMap<String, Tensor>,
    pub graphs: BTreeMap<String, SparseMatrix>,
    /// Output shape of every layer whose inputs could be resolved.
    pub shapes: BTreeMap<String, Shape>,
    pub edges: Vec<Edge>,
}

impl ComputationGraph {
    /// Assembles a graph and annotates whatever shapes can be inferred.
    /// Call [`ComputationGraph::validate`] to learn about problems.
    pub fn new(
        layers: Vec<Layer>,
        tensors: BTreeMap<String, Tensor>,
        graphs: BTreeMap<String, SparseMatrix>,
    ) -> Self {
        let mut g = Self {
            layers,
            tensors,
            graphs,
            shapes: BTreeMap::new(),
            edges: Vec::new(),
        };
        g.annotate();
        g
    }

    /// Like [`ComputationGraph::new`] but fails on the first violation.
    pub fn checked(
        layers: Vec<Layer>,
        tensors: BTreeMap<String, Tensor>,
        graphs: BTreeMap<String, SparseMatrix>,
    ) -> Result<Self, IrError> {
        let g = Self::new(layers, tensors, graphs);
        g.validate().map_err(IrError::from_violations)?;
        Ok(g)
    }

    pub fn layer(&self, id: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id == id)
    }

    pub fn layer_index(&self) -> BTreeMap<&str, usize> {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| (l.id.as_str(), i))
            .collect()
    }

    pub fn is_layer(&self, id: &str) -> bool {
        self.layers.iter().any(|l| l.id == id)
    }

    /// Consumers of `id` as `(consumer id, slot)`.
    pub fn consumers(&self, id: &str) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for l in &self.layers {
            for (slot, inp) in l.inputs.iter().enumerate() {
                if inp == id {
                    out.push((l.id.clone(), slot));
                }
            }
        }
        out
    }

    /// Layers fed only by tensors.
    pub fn input_layers(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| !l.inputs.is_empty() && l.inputs.iter().all(|i| !self.is_layer(i)))
            .map(|l| l.id.clone())
            .collect()
    }

    /// Layers nobody consumes, in document order.
    pub fn output_layers(&self) -> Vec<String> {
        let consumed: BTreeSet<&str> = self
            .layers
            .iter()
            .flat_map(|l| l.inputs.iter().map(|s| s.as_str()))
            .collect();
        self.layers
            .iter()
            .filter(|l| !consumed.contains(l.id.as_str()))
            .map(|l| l.id.clone())
            .collect()
    }

    /// Tensors that feed layers directly (model inputs).
    pub fn input_tensors(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        for l in &self.layers {
            for i in &l.inputs {
                if !self.is_layer(i) && self.tensors.contains_key(i) {
                    seen.insert(i.clone());
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Kahn topological order over layers (document order breaks ties).
    /// Returns `None` when the graph has a cycle.
    pub fn topo_order(&self) -> Option<Vec<usize>> {
        let index = self.layer_index();
        let mut indeg = vec![0usize; self.layers.len()];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); self.layers.len()];
        for (ci, l) in self.layers.iter().enumerate() {
            for inp in &l.inputs {
                if let Some(&pi) = index.get(inp.as_str()) {
                    indeg[ci] += 1;
                    succ[pi].push(ci);
                }
            }
        }
        let mut ready: BTreeSet<usize> = (0..self.layers.len()).filter(|i| indeg[*i] == 0).collect();
        let mut order = Vec::with_capacity(self.layers.len());
        while let Some(i) = ready.pop_first() {
            order.push(i);
            for &s in &succ[i] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.insert(s);
                }
            }
        }
        (order.len() == self.layers.len()).then_some(order)
    }

    /// Shape of a layer output or input tensor.
    pub fn value_shape(&self, id: &str) -> Option<Shape> {
        if let Some(s) = self.shapes.get(id) {
            return Some(s.clone());
        }
        if self.is_layer(id) {
            return None;
        }
        self.tensors.get(id).and_then(|t| tensor_shape(t).ok())
    }

    /// Input shapes of `layer` after the DM each slot needs, together with
    /// that DM (explicitly fused or implied by the layouts).
    pub fn effective_inputs(&self, layer: &Layer) -> Result<Vec<(Shape, Option<DmSpec>)>, String> {
        let mut out = Vec::new();
        for (slot, inp) in layer.inputs.iter().enumerate() {
            let shape = self
                .value_shape(inp)
                .ok_or_else(|| format!("shape of {inp} unknown"))?;
            let dm = match layer.dm_for_slot(slot) {
                Some(d) => Some(d.clone()),
                None => self.resolve_boundary(layer, slot, &shape)?,
            };
            let eff = match &dm {
                Some(d) => apply_dm(d, &shape)?,
                None => shape,
            };
            out.push((eff, dm));
        }
        Ok(out)
    }

    /// Picks the DM (if any) needed between `shape` and slot `slot` of
    /// `layer`. Errors when no mode reconciles the layouts.
    pub fn resolve_boundary(
        &self,
        layer: &Layer,
        slot: usize,
        shape: &Shape,
    ) -> Result<Option<DmSpec>, String> {
        if matches!(layer.op, LayerOp::Dm(_)) || layer.op.is_elementwise() {
            return Ok(None);
        }
        match shape {
            Shape::FeatureMap { .. } if layer.op.is_gnn_side() => {
                let mut candidates = Vec::new();
                if let Some(patch) = layer.hint.patch {
                    candidates.push(DmSpec {
                        mode: DmMode::PatchToNode,
                        patch: Some(patch),
                        hw: None,
                        channel_of_node: None,
                    });
                }
                candidates.push(DmSpec::channel_to_node());
                let mut last_err = String::new();
                for cand in candidates {
                    match apply_dm(&cand, shape) {
                        Ok(eff) => {
                            let mut shapes = self.slot_shapes_for(layer)?;
                            shapes[slot] = eff;
                            match output_shape(self, layer, &shapes) {
                                Ok(_) => return Ok(Some(cand)),
                                Err(e) => last_err = e,
                            }
                        }
                        Err(e) => last_err = e,
                    }
                }
                Err(format!("no DM mode maps {shape} onto {}: {last_err}", layer.id))
            }
            Shape::Matrix { .. } if layer.op.is_cnn_side() => {
                let hw = layer.hint.input_hw.ok_or_else(|| {
                    format!(
                        "{} consumes node features {shape} but declares no input_hw",
                        layer.id
                    )
                })?;
                Ok(Some(DmSpec {
                    mode: DmMode::NodeToChannel,
                    patch: None,
                    hw: Some(hw),
                    channel_of_node: layer.hint.channel_of_node.clone(),
                }))
            }
            _ => Ok(None),
        }
    }

    fn slot_shapes_for(&self, layer: &Layer) -> Result<Vec<Shape>, String> {
        layer
            .inputs
            .iter()
            .map(|i| self.value_shape(i).ok_or_else(|| format!("shape of {i} unknown")))
            .collect()
    }

    /// Recomputes `shapes` and `edges`.
    pub fn annotate(&mut self) {
        self.shapes.clear();
        self.edges.clear();
        let order = match self.topo_order() {
            Some(o) => o,
            None => return,
        };
        for i in order {
            let layer = self.layers[i].clone();
            let Ok(eff) = self.effective_inputs(&layer) else {
                continue;
            };
            let shapes: Vec<Shape> = eff.into_iter().map(|(s, _)| s).collect();
            if let Ok(out) = output_shape(self, &layer, &shapes) {
                self.shapes.insert(layer.id.clone(), out);
            }
        }
        let mut edges = Vec::new();
        for l in &self.layers {
            for (slot, inp) in l.inputs.iter().enumerate() {
                if let (true, Some(shape)) = (self.is_layer(inp), self.shapes.get(inp)) {
                    edges.push(Edge {
                        producer: inp.clone(),
                        consumer: l.id.clone(),
                        slot,
                        shape: shape.clone(),
                    });
                }
            }
        }
        self.edges = edges;
    }

    /// Every invariant violation; empty means the graph is valid.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        let mut ids = BTreeSet::new();
        for l in &self.layers {
            if !ids.insert(l.id.as_str()) || self.tensors.contains_key(&l.id) {
                v.push(Violation::DuplicateId(l.id.clone()));
            }
        }
        for l in &self.layers {
            if l.inputs.is_empty() {
                v.push(Violation::Invalid {
                    layer: l.id.clone(),
                    detail: "no inputs".into(),
                });
            }
            for inp in &l.inputs {
                if !self.is_layer(inp) && !self.tensors.contains_key(inp) {
                    v.push(Violation::Dangling {
                        layer: l.id.clone(),
                        name: inp.clone(),
                    });
                }
            }
            for name in referenced_data(&l.op) {
                let ok = self.tensors.contains_key(name) || self.graphs.contains_key(name);
                if !ok {
                    v.push(Violation::Dangling {
                        layer: l.id.clone(),
                        name: name.to_string(),
                    });
                }
            }
            if let Err(detail) = check_params(l) {
                v.push(Violation::Invalid {
                    layer: l.id.clone(),
                    detail,
                });
            }
        }
        if let Some(cycle) = self.find_cycle() {
            v.push(Violation::Cycle(cycle));
        }
        let index = self.layer_index();
        let mut reached = vec![false; self.layers.len()];
        let mut queue: VecDeque<usize> = self
            .input_layers()
            .iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect();
        for &q in &queue {
            reached[q] = true;
        }
        while let Some(i) = queue.pop_front() {
            let id = &self.layers[i].id;
            for (c, _) in self.consumers(id) {
                let ci = index[c.as_str()];
                if !reached[ci] {
                    reached[ci] = true;
                    queue.push_back(ci);
                }
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if !reached[i] {
                v.push(Violation::Unreachable(l.id.clone()));
            }
        }
        if self.topo_order().is_some() && v.is_empty() {
            v.extend(self.shape_violations());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    fn shape_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        for l in &self.layers {
            if self.shapes.contains_key(&l.id) {
                continue;
            }
            let producer = l.inputs.first().cloned().unwrap_or_default();
            let detail = match self.effective_inputs(l) {
                Err(e) => e,
                Ok(eff) => {
                    let shapes: Vec<Shape> = eff.into_iter().map(|(s, _)| s).collect();
                    match output_shape(self, l, &shapes) {
                        Err(e) => e,
                        Ok(_) => continue,
                    }
                }
            };
            // only report the first failing layer on a chain
            let upstream_failed = l
                .inputs
                .iter()
                .any(|i| self.is_layer(i) && !self.shapes.contains_key(i));
            if !upstream_failed {
                v.push(Violation::Shape {
                    producer,
                    consumer: l.id.clone(),
                    detail,
                });
            }
        }
        v
    }

    fn find_cycle(&self) -> Option<Vec<String>> {
        let index = self.layer_index();
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut color = vec![0u8; self.layers.len()];
        let mut stack: Vec<usize> = Vec::new();
        fn dfs(
            g: &ComputationGraph,
            index: &BTreeMap<&str, usize>,
            u: usize,
            color: &mut [u8],
            stack: &mut Vec<usize>,
        ) -> Option<Vec<String>> {
            color[u] = 1;
            stack.push(u);
            for (c, _) in g.consumers(&g.layers[u].id) {
                let ci = index[c.as_str()];
                if color[ci] == 1 {
                    let pos = stack.iter().position(|x| *x == ci).unwrap();
                    return Some(stack[pos..].iter().map(|i| g.layers[*i].id.clone()).collect());
                }
                if color[ci] == 0 {
                    if let Some(c) = dfs(g, index, ci, color, stack) {
                        return Some(c);
                    }
                }
            }
            stack.pop();
            color[u] = 2;
            None
        }
        for start in 0..self.layers.len() {
            if color[start] == 0 {
                if let Some(c) = dfs(self, &index, start, &mut color, &mut stack) {
                    return Some(c);
                }
            }
        }
        None
    }
}

/// Tensor and graph ids referenced by layer parameters.
pub fn referenced_data(op: &LayerOp) -> Vec<&str> {
    match op {
        LayerOp::Conv(p) => vec![p.weight.as_str()],
        LayerOp::Linear { weight, .. } => vec![weight.as_str()],
        LayerOp::Mp { graph, .. } => graph.iter().map(|s| s.as_str()).collect(),
        LayerOp::Vip { graph, .. } => vec![graph.as_str()],
        LayerOp::Norm { scale, shift } => vec![scale.as_str(), shift.as_str()],
        _ => Vec::new(),
    }
}

fn check_params(l: &Layer) -> Result<(), String> {
    match &l.op {
        LayerOp::Conv(p) => {
            if p.k1 == 0 || p.k2 == 0 || p.stride == 0 || p.c_in == 0 || p.c_out == 0 {
                return Err("conv needs k1, k2, stride, c_in, c_out >= 1".into());
            }
        }
        LayerOp::Pool { window, stride, .. } => {
            if *window == 0 || *stride == 0 {
                return Err("pool needs window, stride >= 1".into());
            }
        }
        LayerOp::Linear { f_in, f_out, .. } => {
            if *f_in == 0 || *f_out == 0 {
                return Err("linear needs f_in, f_out >= 1".into());
            }
        }
        _ => {}
    }
    let expected = match &l.op {
        LayerOp::Mp { graph: None, .. } => 2,
        LayerOp::Mp { .. } => 1,
        _ => 1,
    };
    if !l.inputs.is_empty() && l.inputs.len() != expected {
        return Err(format!("expected {expected} input(s), got {}", l.inputs.len()));
    }
    Ok(())
}

/// Shape view of an input tensor: rank 2 is a node-feature matrix, rank 3
/// (or rank 4 with batch 1) a feature map.
pub fn tensor_shape(t: &Tensor) -> Result<Shape, IrError> {
    match *t.dims() {
        [rows, cols] => Ok(Shape::Matrix { rows, cols }),
        [c, h, w] | [1, c, h, w] => Ok(Shape::FeatureMap { c, h, w }),
        _ => Err(IrError::BadDims(t.dims().to_vec())),
    }
}

/// Shape after a DM transformation.
pub fn apply_dm(spec: &DmSpec, shape: &Shape) -> Result<Shape, String> {
    match (spec.mode, shape) {
        (DmMode::ChannelToNode, Shape::FeatureMap { c, h, w }) => Ok(Shape::Matrix {
            rows: *c,
            cols: h * w,
        }),
        (DmMode::PatchToNode, Shape::FeatureMap { c, h, w }) => {
            let (ph, pw) = spec.patch.ok_or("PatchToNode needs a patch size")?;
            if ph == 0 || pw == 0 || h % ph != 0 || w % pw != 0 {
                return Err(format!("patch {ph}x{pw} does not tile {h}x{w}"));
            }
            Ok(Shape::Matrix {
                rows: (h / ph) * (w / pw),
                cols: c * ph * pw,
            })
        }
        (DmMode::NodeToChannel, Shape::Matrix { rows, cols }) => {
            let (h, w) = spec.hw.ok_or("NodeToChannel needs spatial dims")?;
            if h * w != *cols {
                return Err(format!("{rows}x{cols} node features do not fold into {h}x{w}"));
            }
            if let Some(perm) = &spec.channel_of_node {
                if !is_permutation(perm, *rows) {
                    return Err(format!("channel_of_node is not a permutation of 0..{rows}"));
                }
            }
            Ok(Shape::FeatureMap { c: *rows, h, w })
        }
        (mode, s) => Err(format!("{mode:?} cannot apply to {s}")),
    }
}

pub fn is_permutation(perm: &[usize], n: usize) -> bool {
    if perm.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    perm.iter().all(|&p| p < n && !std::mem::replace(&mut seen[p], true))
}

/// Output shape of `layer` given its effective (post-DM) input shapes.
pub fn output_shape(g: &ComputationGraph, layer: &Layer, inputs: &[Shape]) -> Result<Shape, String> {
    let first = inputs.first().ok_or("layer has no inputs")?;
    match &layer.op {
        LayerOp::Conv(p) => {
            let Shape::FeatureMap { c, h, w } = *first else {
                return Err(format!("Conv expects a feature map, got {first}"));
            };
            if c != p.c_in {
                return Err(format!("Conv c_in={} but input has {c} channels", p.c_in));
            }
            let wt = g.tensors.get(&p.weight).ok_or("missing conv weight")?;
            if wt.dims() != [p.c_out, p.c_in, p.k1, p.k2] {
                return Err(format!("conv weight dims {:?}", wt.dims()));
            }
            let (ho, wo) = conv_out_hw(h, w, p.k1, p.k2, p.stride, p.padding)
                .ok_or_else(|| format!("kernel {}x{} leaves no output on {h}x{w}", p.k1, p.k2))?;
            Ok(Shape::FeatureMap {
                c: p.c_out,
                h: ho,
                w: wo,
            })
        }
        LayerOp::Pool { window, stride, .. } => {
            let Shape::FeatureMap { c, h, w } = *first else {
                return Err(format!("Pool expects a feature map, got {first}"));
            };
            let (ho, wo) = conv_out_hw(h, w, *window, *window, *stride, 0)
                .ok_or_else(|| format!("pool window {window} larger than {h}x{w}"))?;
            Ok(Shape::FeatureMap { c, h: ho, w: wo })
        }
        LayerOp::Mp { graph, .. } => {
            let Shape::Matrix { rows, cols } = *first else {
                return Err(format!("MP expects node features, got {first}"));
            };
            let n = match (graph, inputs.get(1)) {
                (_, Some(Shape::Scores { n, .. })) => *n,
                (Some(gid), None) => {
                    let a = g.graphs.get(gid).ok_or("missing adjacency")?;
                    if a.n_rows() != a.n_cols() {
                        return Err("adjacency must be square".into());
                    }
                    a.n_rows()
                }
                (_, Some(other)) => return Err(format!("MP edge input must be scores, got {other}")),
                (None, None) => return Err("MP needs a graph or a score input".into()),
            };
            if n != rows {
                return Err(format!("MP over {n} vertices but input has {rows} rows"));
            }
            Ok(Shape::Matrix { rows, cols })
        }
        LayerOp::Linear { f_in, f_out, weight } => {
            let Shape::Matrix { rows, cols } = *first else {
                return Err(format!("Linear expects a matrix, got {first}"));
            };
            if cols != *f_in {
                return Err(format!("Linear f_in={f_in} but input has {cols} features"));
            }
            let wt = g.tensors.get(weight).ok_or("missing linear weight")?;
            if wt.dims() != [*f_in, *f_out] {
                return Err(format!("linear weight dims {:?}", wt.dims()));
            }
            Ok(Shape::Matrix { rows, cols: *f_out })
        }
        LayerOp::Vip { graph, .. } => {
            let Shape::Matrix { rows, .. } = *first else {
                return Err(format!("VIP expects node features, got {first}"));
            };
            let a = g.graphs.get(graph).ok_or("missing edge pattern")?;
            if a.n_rows() != rows || a.n_cols() != rows {
                return Err(format!(
                    "edge pattern {}x{} vs {rows} vertices",
                    a.n_rows(),
                    a.n_cols()
                ));
            }
            Ok(Shape::Scores { n: rows, nnz: a.nnz() })
        }
        LayerOp::Dm(spec) => apply_dm(spec, first),
        LayerOp::Norm { scale, shift } => {
            let ch = first.channels().ok_or("Norm cannot apply to scores")?;
            for t in [scale, shift] {
                let t = g.tensors.get(t).ok_or("missing norm parameter")?;
                if t.len() != ch {
                    return Err(format!("norm parameter has {} entries for {ch} channels", t.len()));
                }
            }
            Ok(first.clone())
        }
        LayerOp::Activation(_) => Ok(first.clone()),
    }
}

/// Output spatial extent of a strided window, `None` if empty.
pub fn conv_out_hw(
    h: usize,
    w: usize,
    k1: usize,
    k2: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize)> {
    let hp = h + 2 * padding;
    let wp = w + 2 * padding;
    if hp < k1 || wp < k2 || stride == 0 {
        return None;
    }
    Some(((hp - k1) / stride + 1, (wp - k2) / stride + 1))
}
