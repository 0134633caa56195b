//! Seeded synthetic models.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::model_ir::{parse_edge_list, parse_model_str, ComputationGraph, IrError};

pub const BENCHMARKS: [&str; 6] = ["tiny-fewshot", "tiny-stgcn", "tiny-gcn", "tiny-cnn", "tiny-gat", "tiny-patch"];

/// A generated model document plus the edge files it references.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchModel {
    pub name: String,
    pub model: String,
    pub edge_files: Vec<(String, String)>,
}

impl BenchModel {
    /// Parses the model, resolving edge files from memory.
    pub fn graph(&self) -> Result<ComputationGraph, IrError> {
        let mut doc: Value = serde_json::from_str(&self.model).expect("generated model is JSON");
        for g in doc["graphs"].as_array_mut().into_iter().flatten() {
            let Some(f) = g.get("edge_file").and_then(Value::as_str).map(str::to_string) else {
                continue;
            };
            let (_, text) = self.edge_files.iter().find(|(n, _)| *n == f).expect("edge file generated");
            let n = g["n"].as_u64().unwrap_or(0) as usize;
            let m = parse_edge_list(text, n)?;
            let t: Vec<(u32, u32, f32)> = m.triples().iter().map(|t| (t.src, t.dst, t.val)).collect();
            let obj = g.as_object_mut().expect("graph entry");
            obj.remove("edge_file");
            obj.insert("triples".into(), json!(t));
        }
        parse_model_str(&doc.to_string())
    }

    /// Writes `model.json` and the edge files into `dir`.
    pub fn write_to(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("model.json"), &self.model)?;
        for (f, text) in &self.edge_files {
            std::fs::write(dir.join(f), text)?;
        }
        Ok(())
    }
}

struct Doc {
    seed: u64,
    tensors: Vec<Value>,
    graphs: Vec<Value>,
    layers: Vec<Value>,
}

impl Doc {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            tensors: Vec::new(),
            graphs: Vec::new(),
            layers: Vec::new(),
        }
    }

    fn tensor(&mut self, id: &str, dims: &[usize], scale: f64) {
        let seed = self.seed * 1000 + self.tensors.len() as u64;
        self.tensors.push(json!({"id": id, "seed": seed, "dims": dims, "scale": scale}));
    }

    /// Weight scaled by fan-in.
    fn weight(&mut self, id: &str, dims: &[usize], fan_in: usize) {
        self.tensor(id, dims, 1.0 / (fan_in as f64).sqrt());
    }

    fn graph(&mut self, id: &str, n: usize, edges: &BTreeSet<(u32, u32)>) {
        self.graphs.push(json!({"id": id, "n": n, "triples": normalized(edges)}));
    }

    fn layer(&mut self, id: &str, kind: &str, params: Value, inputs: &[&str]) {
        self.layers.push(json!({"id": id, "kind": kind, "params": params, "inputs": inputs}));
    }

    fn conv(&mut self, id: &str, input: &str, c_in: usize, c_out: usize, k: usize, stride: usize, padding: usize) {
        let w = format!("{id}.w");
        self.weight(&w, &[c_out, c_in, k, k], c_in * k * k);
        self.layer(
            id,
            "Conv",
            json!({"c_in": c_in, "c_out": c_out, "k1": k, "k2": k, "stride": stride, "padding": padding, "weight": w}),
            &[input],
        );
    }

    fn linear(&mut self, id: &str, input: &str, f_in: usize, f_out: usize) {
        let w = format!("{id}.w");
        self.weight(&w, &[f_in, f_out], f_in);
        self.layer(id, "Linear", json!({"f_in": f_in, "f_out": f_out, "weight": w}), &[input]);
    }

    fn relu(&mut self, id: &str, input: &str) {
        self.layer(id, "Activation", json!({"kind": "relu"}), &[input]);
    }

    fn finish(self) -> String {
        let doc = json!({"tensors": self.tensors, "graphs": self.graphs, "layers": self.layers});
        serde_json::to_string_pretty(&doc).expect("model serializes")
    }
}

/// `(src, dst, 1 / in-degree(dst))` in (dst, src) order.
fn normalized(edges: &BTreeSet<(u32, u32)>) -> Vec<(u32, u32, f32)> {
    let n = edges.iter().map(|(s, d)| s.max(d) + 1).max().unwrap_or(0) as usize;
    let mut deg = vec![0u32; n];
    for (_, d) in edges {
        deg[*d as usize] += 1;
    }
    let mut t: Vec<(u32, u32, f32)> = edges.iter().map(|&(s, d)| (s, d, 1.0 / deg[d as usize] as f32)).collect();
    t.sort_by_key(|&(s, d, _)| (d, s));
    t
}

/// Self loops plus `extra` random in-edges per vertex, made symmetric.
fn random_graph(rng: &mut ChaCha8Rng, n: usize, extra: usize) -> BTreeSet<(u32, u32)> {
    let mut e: BTreeSet<(u32, u32)> = (0..n as u32).map(|v| (v, v)).collect();
    for v in 0..n as u32 {
        for _ in 0..extra {
            let u = rng.gen_range(0..n as u32);
            e.insert((u, v));
            e.insert((v, u));
        }
    }
    e
}

/// A random tree over the joints, symmetric, with self loops.
fn skeleton(rng: &mut ChaCha8Rng, n: usize) -> BTreeSet<(u32, u32)> {
    let mut e: BTreeSet<(u32, u32)> = (0..n as u32).map(|v| (v, v)).collect();
    for v in 1..n as u32 {
        let parent = rng.gen_range(0..v);
        e.insert((parent, v));
        e.insert((v, parent));
    }
    e
}

fn fewshot(seed: u64, rng: &mut ChaCha8Rng) -> String {
    let mut d = Doc::new(seed);
    d.tensor("x", &[3, 16, 16], 1.0);
    d.conv("conv1", "x", 3, 8, 3, 1, 1);
    d.relu("relu1", "conv1");
    d.layer("pool1", "Pool", json!({"kind": "max", "window": 2}), &["relu1"]);
    d.conv("conv2", "pool1", 8, 25, 3, 1, 1);
    d.relu("relu2", "conv2");
    d.layer("pool2", "Pool", json!({"kind": "max", "window": 2}), &["relu2"]);
    d.layer("embed", "DM", json!({"mode": "ChannelToNode"}), &["pool2"]);
    d.graph("support", 25, &random_graph(rng, 25, 4));
    d.layer("mp1", "MP", json!({"graph": "support"}), &["embed"]);
    d.linear("fc1", "mp1", 16, 16);
    d.relu("relu3", "fc1");
    d.layer("mp2", "MP", json!({"graph": "support"}), &["relu3"]);
    d.linear("fc2", "mp2", 16, 5);
    d.finish()
}

fn stgcn(seed: u64, rng: &mut ChaCha8Rng) -> String {
    const JOINTS: usize = 25;
    let mut d = Doc::new(seed);
    d.tensor("x", &[JOINTS, 8, 8], 1.0);
    d.graph("skeleton", JOINTS, &skeleton(rng, JOINTS));
    let mut prev = "x".to_string();
    for b in 1..=3 {
        let conv = format!("tconv{b}");
        d.conv(&conv, &prev, JOINTS, JOINTS, 3, 1, 1);
        if b > 1 {
            let l = d.layers.last_mut().expect("just pushed");
            l["params"]["input_hw"] = json!([8, 8]);
            if b == 3 {
                let mut perm: Vec<usize> = (0..JOINTS).collect();
                perm.shuffle(rng);
                l["params"]["channel_of_node"] = json!(perm);
            }
        }
        let relu = format!("trelu{b}");
        d.relu(&relu, &conv);
        let mp = format!("gcn{b}");
        d.layer(&mp, "MP", json!({"graph": "skeleton"}), &[&relu]);
        prev = mp;
    }
    d.linear("head", &prev, 64, 10);
    d.finish()
}

fn gcn(seed: u64, rng: &mut ChaCha8Rng) -> (String, Vec<(String, String)>) {
    const V: usize = 1024;
    let mut d = Doc::new(seed);
    d.tensor("x", &[V, 32], 1.0);
    let edges = normalized(&random_graph(rng, V, 3));
    let mut text = format!("# {V} vertices, {} edges\n", edges.len());
    for (s, t, v) in &edges {
        text.push_str(&format!("{s} {t} {v}\n"));
    }
    d.graphs.push(json!({"id": "adj", "n": V, "edge_file": "adj.edges"}));
    d.layer("mp1", "MP", json!({"graph": "adj"}), &["x"]);
    d.linear("fc1", "mp1", 32, 16);
    d.relu("relu1", "fc1");
    d.layer("mp2", "MP", json!({"graph": "adj"}), &["relu1"]);
    d.linear("fc2", "mp2", 16, 8);
    (d.finish(), vec![("adj.edges".to_string(), text)])
}

fn cnn(seed: u64) -> String {
    let mut d = Doc::new(seed);
    d.tensor("x", &[3, 16, 16], 1.0);
    d.conv("conv1", "x", 3, 8, 3, 1, 1);
    d.tensor("bn.scale", &[8], 1.0);
    d.tensor("bn.shift", &[8], 0.5);
    d.layer("bn", "Norm", json!({"scale": "bn.scale", "shift": "bn.shift"}), &["conv1"]);
    d.relu("relu1", "bn");
    d.layer("pool1", "Pool", json!({"kind": "max", "window": 2}), &["relu1"]);
    d.conv("conv2", "pool1", 8, 16, 3, 2, 1);
    d.relu("relu2", "conv2");
    d.layer("pool2", "Pool", json!({"kind": "avg", "window": 2}), &["relu2"]);
    d.linear("fc", "pool2", 4, 10);
    d.finish()
}

fn gat(seed: u64, rng: &mut ChaCha8Rng) -> String {
    const V: usize = 32;
    let mut d = Doc::new(seed);
    d.tensor("x", &[V, 24], 1.0);
    d.graph("nbrs", V, &random_graph(rng, V, 3));
    d.linear("proj", "x", 24, 16);
    d.layer("att", "VIP", json!({"graph": "nbrs", "softmax": true}), &["proj"]);
    d.layer("agg", "MP", json!({}), &["proj", "att"]);
    d.relu("relu", "agg");
    d.linear("out", "relu", 16, 8);
    d.finish()
}

fn patch(seed: u64, rng: &mut ChaCha8Rng) -> String {
    let mut d = Doc::new(seed);
    d.tensor("x", &[3, 16, 16], 1.0);
    d.conv("stem", "x", 3, 8, 3, 1, 1);
    d.relu("relu", "stem");
    d.graph("grid", 16, &random_graph(rng, 16, 2));
    d.layer("mp", "MP", json!({"graph": "grid", "patch": [4, 4]}), &["relu"]);
    d.linear("fc", "mp", 128, 16);
    d.finish()
}

/// Generates benchmark `name` from `seed`.
pub fn generate(name: &str, seed: u64) -> Option<BenchModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, edge_files) = match name {
        "tiny-fewshot" => (fewshot(seed, &mut rng), Vec::new()),
        "tiny-stgcn" => (stgcn(seed, &mut rng), Vec::new()),
        "tiny-gcn" => gcn(seed, &mut rng),
        "tiny-cnn" => (cnn(seed), Vec::new()),
        "tiny-gat" => (gat(seed, &mut rng), Vec::new()),
        "tiny-patch" => (patch(seed, &mut rng), Vec::new()),
        _ => return None,
    };
    Some(BenchModel {
        name: name.to_string(),
        model,
        edge_files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_benchmark_parses_and_is_deterministic() {
        for name in BENCHMARKS {
            let a = generate(name, 3).unwrap();
            assert_eq!(a, generate(name, 3).unwrap());
            assert_ne!(a.model, generate(name, 4).unwrap().model, "{name}");
            a.graph().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(generate("tiny-resnet", 1).is_none());
    }

    #[test]
    fn vertex_counts() {
        let g = generate("tiny-stgcn", 7).unwrap().graph().unwrap();
        assert_eq!(g.graphs["skeleton"].n_rows(), 25);
        let g = generate("tiny-gcn", 1).unwrap().graph().unwrap();
        assert_eq!(g.graphs["adj"].n_rows(), 1024);
        let g = generate("tiny-fewshot", 1).unwrap().graph().unwrap();
        assert_eq!(g.graphs["support"].n_rows(), 25);
    }
}
