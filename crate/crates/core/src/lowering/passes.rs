use std::collections::BTreeMap;

use crate::model_ir::{ActivationKind, ComputationGraph, FusedOp, IrError, Layer, LayerOp};

use super::LowerError;

/// Makes every layout boundary explicit by inserting DM layers.
pub fn insert_dm_layers(g: &ComputationGraph) -> Result<ComputationGraph, LowerError> {
    g.validate().map_err(IrError::from_violations)?;
    let mut layers: Vec<Layer> = Vec::with_capacity(g.layers.len());
    let mut taken: Vec<String> = g
        .layers
        .iter()
        .map(|l| l.id.clone())
        .chain(g.tensors.keys().cloned())
        .collect();
    for layer in &g.layers {
        let mut layer = layer.clone();
        for slot in 0..layer.inputs.len() {
            if layer.dm_for_slot(slot).is_some() {
                continue;
            }
            let inp = layer.inputs[slot].clone();
            let shape = g
                .value_shape(&inp)
                .ok_or_else(|| LowerError::Program(format!("shape of {inp} unknown")))?;
            let dm = g
                .resolve_boundary(&layer, slot, &shape)
                .map_err(|detail| LowerError::NoDmMode {
                    producer: inp.clone(),
                    consumer: layer.id.clone(),
                    from: shape.clone(),
                    detail,
                })?;
            if let Some(spec) = dm {
                let mut id = format!("{inp}_to_{}", layer.id);
                while taken.contains(&id) {
                    id.push('_');
                }
                taken.push(id.clone());
                layers.push(Layer::new(id.clone(), LayerOp::Dm(spec), vec![inp]));
                layer.inputs[slot] = id;
            }
        }
        layers.push(layer);
    }
    let out = ComputationGraph::new(layers, g.tensors.clone(), g.graphs.clone());
    out.validate().map_err(IrError::from_violations)?;
    Ok(out)
}

/// What [`fuse_layers_with_report`] did.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FusionReport {
    /// Absorbed layer id -> id of the layer that now produces its value.
    pub aliases: BTreeMap<String, String>,
    /// Fusable layers left in place, with the reason.
    pub skipped: Vec<(String, String)>,
}

impl FusionReport {
    /// Final name of a layer output after fusion.
    pub fn resolve<'a>(&'a self, mut id: &'a str) -> &'a str {
        while let Some(next) = self.aliases.get(id) {
            id = next;
        }
        id
    }
}

fn epilogue_op(op: &LayerOp) -> FusedOp {
    match op {
        LayerOp::Activation(ActivationKind::Relu) => FusedOp::Relu,
        LayerOp::Norm { scale, shift } => FusedOp::Norm {
            scale: scale.clone(),
            shift: shift.clone(),
        },
        _ => unreachable!("only element-wise layers are absorbed"),
    }
}

fn absorb_elementwise(g: &ComputationGraph, report: &mut FusionReport) -> Option<ComputationGraph> {
    for (li, l) in g.layers.iter().enumerate() {
        if !l.op.is_elementwise() {
            continue;
        }
        let producer = &l.inputs[0];
        let Some(pi) = g.layers.iter().position(|p| &p.id == producer) else {
            note(report, &l.id, "input is a model tensor");
            continue;
        };
        if matches!(g.layers[pi].op, LayerOp::Dm(_)) {
            note(report, &l.id, "producer is a DM layer");
            continue;
        }
        let n = g.consumers(producer).len();
        if n != 1 {
            note(report, &l.id, &format!("producer {producer} has {n} consumers"));
            continue;
        }
        let mut layers = g.layers.clone();
        layers[pi].epilogue.push(epilogue_op(&l.op));
        let absorbed = layers.remove(li);
        for other in &mut layers {
            for inp in &mut other.inputs {
                if *inp == absorbed.id {
                    *inp = producer.clone();
                }
            }
        }
        report.aliases.insert(absorbed.id, producer.clone());
        return Some(ComputationGraph::new(layers, g.tensors.clone(), g.graphs.clone()));
    }
    None
}

fn absorb_dm(g: &ComputationGraph, report: &mut FusionReport) -> Option<ComputationGraph> {
    for (di, d) in g.layers.iter().enumerate() {
        let LayerOp::Dm(spec) = &d.op else {
            continue;
        };
        let consumers = g.consumers(&d.id);
        if consumers.is_empty() {
            note(report, &d.id, "DM output is a graph output");
            continue;
        }
        let blocked = consumers.iter().find(|(c, _)| {
            let op = &g.layer(c).expect("consumer exists").op;
            op.is_elementwise() || matches!(op, LayerOp::Dm(_))
        });
        if let Some((c, _)) = blocked {
            note(report, &d.id, &format!("consumer {c} cannot carry a layout attribute"));
            continue;
        }
        let mut layers = g.layers.clone();
        let removed = layers.remove(di);
        for (cid, slot) in consumers {
            let c = layers.iter_mut().find(|l| l.id == cid).expect("consumer exists");
            if c.input_dm.len() < c.inputs.len() {
                c.input_dm.resize(c.inputs.len(), None);
            }
            c.input_dm[slot] = Some(spec.clone());
            c.inputs[slot] = removed.inputs[0].clone();
        }
        report.aliases.insert(removed.id, removed.inputs[0].clone());
        return Some(ComputationGraph::new(layers, g.tensors.clone(), g.graphs.clone()));
    }
    None
}

fn note(report: &mut FusionReport, id: &str, reason: &str) {
    if !report.skipped.iter().any(|(l, _)| l == id) {
        report.skipped.push((id.to_string(), reason.to_string()));
    }
}

/// Folds Norm/Activation layers into their producers' epilogues and DM
/// layers into their consumers' input layouts, to a fixpoint.
pub fn fuse_layers_with_report(g: &ComputationGraph) -> (ComputationGraph, FusionReport) {
    let mut report = FusionReport::default();
    let mut cur = g.clone();
    loop {
        if let Some(next) = absorb_elementwise(&cur, &mut report) {
            cur = next;
            continue;
        }
        if let Some(next) = absorb_dm(&cur, &mut report) {
            cur = next;
            continue;
        }
        break;
    }
    // layers that were fused later may have been noted as skipped earlier
    report.skipped.retain(|(id, _)| cur.is_layer(id));
    (cur, report)
}

pub fn fuse_layers(g: &ComputationGraph) -> ComputationGraph {
    fuse_layers_with_report(g).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{parse_model_str, DmMode};

    const CONV_RELU_MP: &str = r#"{
      "tensors": [
        {"id": "x", "seed": 1, "dims": [3, 8, 8]},
        {"id": "w", "seed": 2, "dims": [8, 3, 3, 3]}
      ],
      "graphs": [{"id": "a", "n": 8, "triples": [[0, 1, 1.0], [1, 0, 1.0]]}],
      "layers": [
        {"id": "conv", "kind": "Conv", "params": {"c_in": 3, "c_out": 8, "k1": 3, "k2": 3, "padding": 1, "weight": "w"}, "inputs": ["x"]},
        {"id": "relu", "kind": "Activation", "params": {"kind": "relu"}, "inputs": ["conv"]},
        {"id": "mp", "kind": "MP", "params": {"graph": "a"}, "inputs": ["relu"]}
      ]
    }"#;

    #[test]
    fn dm_inserted_at_boundary() {
        let g = parse_model_str(CONV_RELU_MP).unwrap();
        let d = insert_dm_layers(&g).unwrap();
        assert_eq!(d.layers.len(), 4);
        let dm = d.layers.iter().find(|l| matches!(l.op, LayerOp::Dm(_))).unwrap();
        assert!(matches!(&dm.op, LayerOp::Dm(s) if s.mode == DmMode::ChannelToNode));
        assert_eq!(dm.inputs, vec!["relu".to_string()]);
        // no boundary left to insert
        assert_eq!(insert_dm_layers(&d).unwrap(), d);
    }

    #[test]
    fn fusion_absorbs_and_is_idempotent() {
        let g = insert_dm_layers(&parse_model_str(CONV_RELU_MP).unwrap()).unwrap();
        let (f, report) = fuse_layers_with_report(&g);
        assert_eq!(f.layers.len(), 2);
        assert_eq!(f.layers[0].epilogue, vec![FusedOp::Relu]);
        assert_eq!(
            f.layers[1].input_dm[0].as_ref().map(|d| d.mode),
            Some(DmMode::ChannelToNode)
        );
        assert_eq!(report.resolve("relu"), "conv");
        assert_eq!(fuse_layers(&f), f);
        assert!(f.validate().is_ok());
    }

    #[test]
    fn nothing_to_fuse_is_identity() {
        let text = r#"{
          "tensors": [{"id": "x", "seed": 1, "dims": [4, 4]}, {"id": "w", "seed": 2, "dims": [4, 4]}],
          "layers": [
            {"id": "a", "kind": "Linear", "params": {"f_in": 4, "f_out": 4, "weight": "w"}, "inputs": ["x"]},
            {"id": "b", "kind": "Linear", "params": {"f_in": 4, "f_out": 4, "weight": "w"}, "inputs": ["a"]}
          ]
        }"#;
        let g = parse_model_str(text).unwrap();
        assert_eq!(insert_dm_layers(&g).unwrap(), g);
        assert_eq!(fuse_layers(&g), g);
    }

    #[test]
    fn shared_producer_is_not_fused() {
        let text = r#"{
          "tensors": [{"id": "x", "seed": 1, "dims": [4, 4]}, {"id": "w", "seed": 2, "dims": [4, 4]}],
          "layers": [
            {"id": "a", "kind": "Linear", "params": {"f_in": 4, "f_out": 4, "weight": "w"}, "inputs": ["x"]},
            {"id": "r", "kind": "Activation", "params": {"kind": "relu"}, "inputs": ["a"]},
            {"id": "b", "kind": "Linear", "params": {"f_in": 4, "f_out": 4, "weight": "w"}, "inputs": ["a"]}
          ]
        }"#;
        let g = parse_model_str(text).unwrap();
        let (f, report) = fuse_layers_with_report(&g);
        assert_eq!(f, g);
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].1.contains("2 consumers"));
    }
}
