use serde::{Deserialize, Serialize};

/// Element-wise reduction of a message-passing layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    Sum,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Relu,
}

/// Layout transformation between feature maps and node features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DmMode {
    /// Each channel of a `C x H x W` map is one vertex with `H*W` features.
    ChannelToNode,
    /// Each `ph x pw` spatial patch is one vertex with `C*ph*pw` features.
    PatchToNode,
    /// Each vertex becomes one channel of an `H x W` map.
    NodeToChannel,
}

/// Fully resolved data-manipulation parameters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmSpec {
    pub mode: DmMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hw: Option<(usize, usize)>,
    /// NodeToChannel only: vertex `v` lands in channel `channel_of_node[v]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_of_node: Option<Vec<usize>>,
}

impl DmSpec {
    pub fn channel_to_node() -> Self {
        Self {
            mode: DmMode::ChannelToNode,
            patch: None,
            hw: None,
            channel_of_node: None,
        }
    }
}

/// Optional per-layer hints used when a DM layer has to be generated in
/// front of this layer.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutHint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_hw: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_of_node: Option<Vec<usize>>,
}

impl LayoutHint {
    pub fn is_empty(&self) -> bool {
        self.patch.is_none() && self.input_hw.is_none() && self.channel_of_node.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvParams {
    pub c_in: usize,
    pub c_out: usize,
    pub k1: usize,
    pub k2: usize,
    pub stride: usize,
    pub padding: usize,
    /// Tensor id of the `c_out x c_in x k1 x k2` kernel.
    pub weight: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LayerOp {
    Conv(ConvParams),
    Mp {
        reduction: Reduction,
        /// Adjacency graph id. Absent when edge values come from a VIP input.
        graph: Option<String>,
    },
    Linear {
        f_in: usize,
        f_out: usize,
        weight: String,
    },
    Vip {
        graph: String,
        softmax: bool,
    },
    Dm(DmSpec),
    Pool {
        kind: PoolKind,
        window: usize,
        stride: usize,
    },
    Norm {
        scale: String,
        shift: String,
    },
    Activation(ActivationKind),
}

impl LayerOp {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerOp::Conv(_) => "Conv",
            LayerOp::Mp { .. } => "MP",
            LayerOp::Linear { .. } => "Linear",
            LayerOp::Vip { .. } => "VIP",
            LayerOp::Dm(_) => "DM",
            LayerOp::Pool { .. } => "Pool",
            LayerOp::Norm { .. } => "Norm",
            LayerOp::Activation(_) => "Activation",
        }
    }

    /// Layers that consume `C x H x W` feature maps.
    pub fn is_cnn_side(&self) -> bool {
        matches!(self, LayerOp::Conv(_) | LayerOp::Pool { .. })
    }

    /// Layers that consume node-feature matrices.
    pub fn is_gnn_side(&self) -> bool {
        matches!(
            self,
            LayerOp::Mp { .. } | LayerOp::Vip { .. } | LayerOp::Linear { .. }
        )
    }

    /// Norm and Activation, which can be folded into a producer.
    pub fn is_elementwise(&self) -> bool {
        matches!(self, LayerOp::Norm { .. } | LayerOp::Activation(_))
    }
}

/// Element operation folded into a layer's output by fusion.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusedOp {
    Relu,
    Norm { scale: String, shift: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub id: String,
    pub op: LayerOp,
    /// Producer layer ids or input tensor ids, in slot order.
    pub inputs: Vec<String>,
    #[serde(default)]
    pub hint: LayoutHint,
    /// Element ops absorbed from following Norm/Activation layers.
    #[serde(default)]
    pub epilogue: Vec<FusedOp>,
    /// DM layers absorbed in front of each input slot.
    #[serde(default)]
    pub input_dm: Vec<Option<DmSpec>>,
}

impl Layer {
    pub fn new(id: impl Into<String>, op: LayerOp, inputs: Vec<String>) -> Self {
        Self {
            id: id.into(),
            op,
            inputs,
            hint: LayoutHint::default(),
            epilogue: Vec::new(),
            input_dm: Vec::new(),
        }
    }

    pub fn with_hint(mut self, hint: LayoutHint) -> Self {
        self.hint = hint;
        self
    }

    pub fn dm_for_slot(&self, slot: usize) -> Option<&DmSpec> {
        self.input_dm.get(slot).and_then(|d| d.as_ref())
    }
}

/// Tensor shape as seen on a graph edge (batch size is always one).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Shape {
    FeatureMap { c: usize, h: usize, w: usize },
    Matrix { rows: usize, cols: usize },
    /// Edge scores on a fixed pattern over `n` vertices.
    Scores { n: usize, nnz: usize },
}

impl Shape {
    pub fn elements(&self) -> usize {
        match *self {
            Shape::FeatureMap { c, h, w } => c * h * w,
            Shape::Matrix { rows, cols } => rows * cols,
            Shape::Scores { nnz, .. } => nnz,
        }
    }

    /// Row-major matrix view: feature maps are `C x (H*W)`.
    pub fn as_matrix(&self) -> Option<(usize, usize)> {
        match *self {
            Shape::FeatureMap { c, h, w } => Some((c, h * w)),
            Shape::Matrix { rows, cols } => Some((rows, cols)),
            Shape::Scores { .. } => None,
        }
    }

    /// Number of normalisation channels: rows of a feature map, columns of
    /// a node-feature matrix.
    pub fn channels(&self) -> Option<usize> {
        match *self {
            Shape::FeatureMap { c, .. } => Some(c),
            Shape::Matrix { cols, .. } => Some(cols),
            Shape::Scores { .. } => None,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match *self {
            Shape::FeatureMap { c, h, w } => vec![c, h, w],
            Shape::Matrix { rows, cols } => vec![rows, cols],
            Shape::Scores { nnz, .. } => vec![nnz.max(1)],
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::FeatureMap { c, h, w } => write!(f, "[{c},{h},{w}]"),
            Shape::Matrix { rows, cols } => write!(f, "[{rows},{cols}]"),
            Shape::Scores { n, nnz } => write!(f, "scores[{n};{nnz}]"),
        }
    }
}
