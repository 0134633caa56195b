//! JSON model documents.
//!
//! ```json
//! {
//!   "layers":  [{"id": "c1", "kind": "Conv", "params": {...}, "inputs": ["x"]}],
//!   "tensors": [{"id": "x", "file": "x.gcvt"}, {"id": "w", "seed": 3, "dims": [8, 3, 3, 3]}],
//!   "graphs":  [{"id": "g", "n": 25, "edge_file": "g.edges"}]
//! }
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};

use super::{
    parse_edge_list, read_tensor_file, ActivationKind, ComputationGraph, ConvParams, DmMode,
    DmSpec, FusedOp, IrError, Layer, LayerOp, LayoutHint, PoolKind, Reduction, SparseMatrix,
    Tensor, Triple,
};

/// How a tensor is declared in a model document.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorSource {
    File(String),
    /// Uniform values in `[-scale, scale)`, each kept with probability `density`.
    Seeded {
        seed: u64,
        dims: Vec<usize>,
        scale: f64,
        density: f64,
    },
    Inline { dims: Vec<usize>, values: Vec<f32> },
}

impl TensorSource {
    pub fn materialize(&self, base: &Path) -> Result<Tensor, IrError> {
        match self {
            TensorSource::File(f) => read_tensor_file(&base.join(f)),
            TensorSource::Seeded {
                seed,
                dims,
                scale,
                density,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let n: usize = dims.iter().product();
                let values = (0..n)
                    .map(|_| {
                        let keep = rng.gen::<f64>() < *density;
                        let v = rng.gen_range(-1.0..1.0) * scale;
                        if keep {
                            v as f32
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Tensor::new(dims.clone(), values)
            }
            TensorSource::Inline { dims, values } => Tensor::new(dims.clone(), values.clone()),
        }
    }
}

pub fn parse_model_str(text: &str) -> Result<ComputationGraph, IrError> {
    parse_model(text, Path::new("."))
}

/// Parses and validates a model document. Relative file references resolve
/// against `base`.
pub fn parse_model(text: &str, base: &Path) -> Result<ComputationGraph, IrError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IrError::Syntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let top = doc.as_object().ok_or_else(|| syntax("top level must be an object"))?;
    for key in top.keys() {
        if !matches!(key.as_str(), "layers" | "tensors" | "graphs") {
            return Err(syntax(&format!("unknown top-level key `{key}`")));
        }
    }
    let mut tensors = BTreeMap::new();
    for t in array(top, "tensors")? {
        let obj = t.as_object().ok_or_else(|| syntax("tensor entry must be an object"))?;
        let id = str_field(obj, "id", "tensor")?;
        let source = tensor_source(obj, &id)?;
        let tensor = source.materialize(base)?;
        if tensors.insert(id.clone(), tensor).is_some() {
            return Err(syntax(&format!("duplicate tensor id `{id}`")));
        }
    }
    let mut graphs = BTreeMap::new();
    for g in array(top, "graphs")? {
        let obj = g.as_object().ok_or_else(|| syntax("graph entry must be an object"))?;
        let id = str_field(obj, "id", "graph")?;
        let m = graph_source(obj, &id, base)?;
        if graphs.insert(id.clone(), m).is_some() {
            return Err(syntax(&format!("duplicate graph id `{id}`")));
        }
    }
    let mut layers = Vec::new();
    for l in array(top, "layers")? {
        layers.push(parse_layer(l)?);
    }
    ComputationGraph::checked(layers, tensors, graphs)
}

fn syntax(msg: &str) -> IrError {
    IrError::Syntax {
        line: 0,
        column: 0,
        message: msg.to_string(),
    }
}

fn array<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a [Value], IrError> {
    match obj.get(key) {
        None => Ok(&[]),
        Some(Value::Array(a)) => Ok(a),
        Some(_) => Err(syntax(&format!("`{key}` must be an array"))),
    }
}

fn str_field(obj: &Map<String, Value>, key: &str, what: &str) -> Result<String, IrError> {
    obj.get(key)
        .and_then(|v| v.as_str())
        .map(str::to_string)
        .ok_or_else(|| syntax(&format!("{what} entry needs string `{key}`")))
}

fn tensor_source(obj: &Map<String, Value>, id: &str) -> Result<TensorSource, IrError> {
    let dims = || -> Result<Vec<usize>, IrError> {
        serde_json::from_value(obj.get("dims").cloned().unwrap_or(Value::Null))
            .map_err(|_| syntax(&format!("tensor `{id}` needs integer `dims`")))
    };
    if let Some(f) = obj.get("file") {
        let f = f
            .as_str()
            .ok_or_else(|| syntax(&format!("tensor `{id}`: file must be a string")))?;
        return Ok(TensorSource::File(f.to_string()));
    }
    if let Some(values) = obj.get("values") {
        let values: Vec<f32> = serde_json::from_value(values.clone())
            .map_err(|_| syntax(&format!("tensor `{id}`: values must be numbers")))?;
        return Ok(TensorSource::Inline {
            dims: dims()?,
            values,
        });
    }
    if let Some(seed) = obj.get("seed") {
        let seed = seed
            .as_u64()
            .ok_or_else(|| syntax(&format!("tensor `{id}`: seed must be an integer")))?;
        let scale = obj.get("scale").and_then(Value::as_f64).unwrap_or(1.0);
        let density = obj.get("density").and_then(Value::as_f64).unwrap_or(1.0);
        return Ok(TensorSource::Seeded {
            seed,
            dims: dims()?,
            scale,
            density,
        });
    }
    Err(syntax(&format!("tensor `{id}` needs `file`, `values` or `seed`")))
}

fn graph_source(obj: &Map<String, Value>, id: &str, base: &Path) -> Result<SparseMatrix, IrError> {
    let n = obj
        .get("n")
        .and_then(Value::as_u64)
        .ok_or_else(|| syntax(&format!("graph `{id}` needs vertex count `n`")))? as usize;
    if let Some(f) = obj.get("edge_file").and_then(Value::as_str) {
        let path = base.join(f);
        let text = std::fs::read_to_string(&path).map_err(|source| IrError::Io {
            path: path.display().to_string(),
            source,
        })?;
        return parse_edge_list(&text, n);
    }
    if let Some(t) = obj.get("triples") {
        let raw: Vec<(u32, u32, f32)> = serde_json::from_value(t.clone())
            .map_err(|_| syntax(&format!("graph `{id}`: triples must be [src, dst, val]")))?;
        let triples = raw.into_iter().map(|(s, d, v)| Triple::new(s, d, v)).collect();
        return SparseMatrix::new(n, n, triples);
    }
    Err(syntax(&format!("graph `{id}` needs `edge_file` or `triples`")))
}

fn parse_layer(v: &Value) -> Result<Layer, IrError> {
    let obj = v.as_object().ok_or_else(|| syntax("layer entry must be an object"))?;
    let id = str_field(obj, "id", "layer")?;
    let kind = str_field(obj, "kind", "layer")?;
    let inputs: Vec<String> = serde_json::from_value(obj.get("inputs").cloned().unwrap_or(json!([])))
        .map_err(|_| syntax(&format!("layer `{id}`: inputs must be strings")))?;
    let empty = Map::new();
    let params = match obj.get("params") {
        None => &empty,
        Some(Value::Object(p)) => p,
        Some(_) => return Err(syntax(&format!("layer `{id}`: params must be an object"))),
    };
    let p = Params { id: &id, map: params };
    let op = match kind.as_str() {
        "Conv" => LayerOp::Conv(ConvParams {
            c_in: p.usize("c_in")?,
            c_out: p.usize("c_out")?,
            k1: p.usize("k1")?,
            k2: p.usize("k2")?,
            stride: p.usize_or("stride", 1)?,
            padding: p.usize_or("padding", 0)?,
            weight: p.string("weight")?,
        }),
        "MP" => LayerOp::Mp {
            reduction: p.parse_or("reduction", Reduction::Sum)?,
            graph: p.opt_string("graph")?,
        },
        "Linear" => LayerOp::Linear {
            f_in: p.usize("f_in")?,
            f_out: p.usize("f_out")?,
            weight: p.string("weight")?,
        },
        "VIP" => LayerOp::Vip {
            graph: p.string("graph")?,
            softmax: p.parse_or("softmax", false)?,
        },
        "DM" => LayerOp::Dm(DmSpec {
            mode: p.parse::<DmMode>("mode")?,
            patch: p.parse_or("patch", None)?,
            hw: p.parse_or("hw", None)?,
            channel_of_node: p.parse_or("channel_of_node", None)?,
        }),
        "Pool" => {
            let window = p.usize("window")?;
            LayerOp::Pool {
                kind: p.parse::<PoolKind>("kind")?,
                window,
                stride: p.usize_or("stride", window)?,
            }
        }
        "Norm" => LayerOp::Norm {
            scale: p.string("scale")?,
            shift: p.string("shift")?,
        },
        "Activation" => LayerOp::Activation(p.parse_or("kind", ActivationKind::Relu)?),
        other => {
            return Err(IrError::UnknownKind {
                layer: id.clone(),
                kind: other.to_string(),
            })
        }
    };
    let hint = if matches!(op, LayerOp::Dm(_)) {
        LayoutHint::default()
    } else {
        LayoutHint {
            patch: p.parse_or("patch", None)?,
            input_hw: p.parse_or("input_hw", None)?,
            channel_of_node: p.parse_or("channel_of_node", None)?,
        }
    };
    let epilogue = match obj.get("epilogue") {
        None => Vec::new(),
        Some(e) => parse_epilogue(e, &id)?,
    };
    let input_dm: Vec<Option<DmSpec>> = match obj.get("input_dm") {
        None => Vec::new(),
        Some(d) => serde_json::from_value(d.clone())
            .map_err(|e| syntax(&format!("layer `{id}`: input_dm: {e}")))?,
    };
    Ok(Layer {
        id,
        op,
        inputs,
        hint,
        epilogue,
        input_dm,
    })
}

fn parse_epilogue(v: &Value, id: &str) -> Result<Vec<FusedOp>, IrError> {
    let items = v
        .as_array()
        .ok_or_else(|| syntax(&format!("layer `{id}`: epilogue must be an array")))?;
    items
        .iter()
        .map(|item| {
            let op = item.get("op").and_then(Value::as_str).unwrap_or("");
            match op {
                "relu" => Ok(FusedOp::Relu),
                "norm" => {
                    let get = |k: &str| {
                        item.get(k)
                            .and_then(Value::as_str)
                            .map(str::to_string)
                            .ok_or_else(|| syntax(&format!("layer `{id}`: norm epilogue needs `{k}`")))
                    };
                    Ok(FusedOp::Norm {
                        scale: get("scale")?,
                        shift: get("shift")?,
                    })
                }
                other => Err(syntax(&format!("layer `{id}`: unknown epilogue op `{other}`"))),
            }
        })
        .collect()
}

struct Params<'a> {
    id: &'a str,
    map: &'a Map<String, Value>,
}

impl Params<'_> {
    fn bad(&self, key: &str, what: &str) -> IrError {
        IrError::BadParam {
            layer: self.id.to_string(),
            message: format!("`{key}` {what}"),
        }
    }

    fn usize(&self, key: &str) -> Result<usize, IrError> {
        self.map
            .get(key)
            .ok_or_else(|| self.bad(key, "is required"))?
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| self.bad(key, "must be a non-negative integer"))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize, IrError> {
        if self.map.contains_key(key) {
            self.usize(key)
        } else {
            Ok(default)
        }
    }

    fn string(&self, key: &str) -> Result<String, IrError> {
        self.opt_string(key)?.ok_or_else(|| self.bad(key, "is required"))
    }

    fn opt_string(&self, key: &str) -> Result<Option<String>, IrError> {
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.bad(key, "must be a string")),
        }
    }

    fn parse<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T, IrError> {
        let v = self.map.get(key).ok_or_else(|| self.bad(key, "is required"))?;
        serde_json::from_value(v.clone()).map_err(|e| self.bad(key, &format!("is invalid: {e}")))
    }

    fn parse_or<T: serde::de::DeserializeOwned>(&self, key: &str, default: T) -> Result<T, IrError> {
        if self.map.contains_key(key) {
            self.parse(key)
        } else {
            Ok(default)
        }
    }
}

/// Writes a graph back as a self-contained document (tensor values and
/// graph triples inline).
pub fn serialize_model(g: &ComputationGraph) -> String {
    let tensors: Vec<Value> = g
        .tensors
        .iter()
        .map(|(id, t)| json!({"id": id, "dims": t.dims(), "values": t.values()}))
        .collect();
    let graphs: Vec<Value> = g
        .graphs
        .iter()
        .map(|(id, m)| {
            let triples: Vec<Value> = m.triples().iter().map(|t| json!([t.src, t.dst, t.val])).collect();
            json!({"id": id, "n": m.n_rows(), "triples": triples})
        })
        .collect();
    let layers: Vec<Value> = g.layers.iter().map(layer_json).collect();
    let doc = json!({"layers": layers, "tensors": tensors, "graphs": graphs});
    serde_json::to_string_pretty(&doc).expect("model serializes")
}

fn layer_json(l: &Layer) -> Value {
    let mut params = Map::new();
    let mut put = |k: &str, v: Value| {
        params.insert(k.to_string(), v);
    };
    match &l.op {
        LayerOp::Conv(p) => {
            put("c_in", json!(p.c_in));
            put("c_out", json!(p.c_out));
            put("k1", json!(p.k1));
            put("k2", json!(p.k2));
            put("stride", json!(p.stride));
            put("padding", json!(p.padding));
            put("weight", json!(p.weight));
        }
        LayerOp::Mp { reduction, graph } => {
            put("reduction", json!(reduction));
            if let Some(g) = graph {
                put("graph", json!(g));
            }
        }
        LayerOp::Linear { f_in, f_out, weight } => {
            put("f_in", json!(f_in));
            put("f_out", json!(f_out));
            put("weight", json!(weight));
        }
        LayerOp::Vip { graph, softmax } => {
            put("graph", json!(graph));
            put("softmax", json!(softmax));
        }
        LayerOp::Dm(spec) => {
            put("mode", json!(spec.mode));
            if let Some(p) = spec.patch {
                put("patch", json!(p));
            }
            if let Some(hw) = spec.hw {
                put("hw", json!(hw));
            }
            if let Some(c) = &spec.channel_of_node {
                put("channel_of_node", json!(c));
            }
        }
        LayerOp::Pool { kind, window, stride } => {
            put("kind", json!(kind));
            put("window", json!(window));
            put("stride", json!(stride));
        }
        LayerOp::Norm { scale, shift } => {
            put("scale", json!(scale));
            put("shift", json!(shift));
        }
        LayerOp::Activation(k) => put("kind", json!(k)),
    }
    if let Some(p) = l.hint.patch {
        put("patch", json!(p));
    }
    if let Some(hw) = l.hint.input_hw {
        put("input_hw", json!(hw));
    }
    if let Some(c) = &l.hint.channel_of_node {
        put("channel_of_node", json!(c));
    }
    let mut obj = Map::new();
    obj.insert("id".into(), json!(l.id));
    obj.insert("kind".into(), json!(l.op.kind_name()));
    obj.insert("params".into(), Value::Object(params));
    obj.insert("inputs".into(), json!(l.inputs));
    if !l.epilogue.is_empty() {
        let ops: Vec<Value> = l
            .epilogue
            .iter()
            .map(|e| match e {
                FusedOp::Relu => json!({"op": "relu"}),
                FusedOp::Norm { scale, shift } => json!({"op": "norm", "scale": scale, "shift": shift}),
            })
            .collect();
        obj.insert("epilogue".into(), Value::Array(ops));
    }
    if !l.input_dm.is_empty() {
        obj.insert("input_dm".into(), serde_json::to_value(&l.input_dm).unwrap());
    }
    Value::Object(obj)
}
