use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::KernelVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    HostCopy,
    BufferCopy,
    BufferToImage,
    Kernel,
    Clear,
}

impl OpKind {
    pub fn default_channel(self) -> Channel {
        match self {
            OpKind::HostCopy | OpKind::BufferCopy => Channel::Transfer,
            OpKind::BufferToImage => Channel::Transform,
            OpKind::Kernel | OpKind::Clear => Channel::Compute,
        }
    }

    pub fn needs_image_dims(self) -> bool {
        matches!(self, OpKind::BufferToImage | OpKind::Kernel | OpKind::Clear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Transfer,
    Transform,
    Compute,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Transfer, Channel::Transform, Channel::Compute];

    pub(crate) fn index(self) -> usize {
        match self {
            Channel::Transfer => 0,
            Channel::Transform => 1,
            Channel::Compute => 2,
        }
    }
}

/// One planned device operation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpNode {
    pub id: NodeId,
    pub kind: OpKind,
    pub payload_bytes: u64,
    pub image_dims: Option<(u32, u32)>,
    pub channel: Channel,
    pub deps: Vec<NodeId>,
    /// Stream item this node belongs to; `None` for setup work such as clears.
    pub item: Option<usize>,
    pub kernel: Option<KernelVariant>,
    /// Buffer-image pairs the owning variant keeps resident.
    pub image_slots: u8,
    /// Carries the device's start-up latency.
    pub warmup: bool,
}

impl OpNode {
    pub fn new(id: NodeId, kind: OpKind, payload_bytes: u64) -> Self {
        OpNode {
            id,
            kind,
            payload_bytes,
            image_dims: None,
            channel: kind.default_channel(),
            deps: Vec::new(),
            item: None,
            kernel: None,
            image_slots: 1,
            warmup: false,
        }
    }

    pub fn with_dims(mut self, width: u32, height: u32) -> Self {
        self.image_dims = Some((width, height));
        self
    }

    pub fn with_deps(mut self, deps: impl IntoIterator<Item = NodeId>) -> Self {
        self.deps.extend(deps);
        self
    }

    pub fn on_channel(mut self, channel: Channel) -> Self {
        self.channel = channel;
        self
    }

    pub fn for_item(mut self, item: usize) -> Self {
        self.item = Some(item);
        self
    }

    pub fn with_kernel(mut self, kernel: KernelVariant) -> Self {
        self.kernel = Some(kernel);
        self
    }

    pub fn with_slots(mut self, slots: u8) -> Self {
        self.image_slots = slots;
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("node {node} depends on unknown node {missing}")]
    UnknownDependency { node: NodeId, missing: NodeId },
    #[error("node {0} ({1:?}) needs image dimensions")]
    MissingDims(NodeId, OpKind),
}

/// Operations in enqueue order. The order of nodes sharing a channel is that channel's queue.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleGraph {
    nodes: Vec<OpNode>,
    index: HashMap<NodeId, usize>,
}

impl ScheduleGraph {
    pub fn new(nodes: Vec<OpNode>) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (pos, node) in nodes.iter().enumerate() {
            if index.insert(node.id, pos).is_some() {
                return Err(GraphError::DuplicateId(node.id));
            }
        }
        for node in &nodes {
            if node.kind.needs_image_dims() && node.image_dims.is_none() {
                return Err(GraphError::MissingDims(node.id, node.kind));
            }
            if let Some(&missing) = node.deps.iter().find(|d| !index.contains_key(d)) {
                return Err(GraphError::UnknownDependency { node: node.id, missing });
            }
        }
        Ok(ScheduleGraph { nodes, index })
    }

    pub fn nodes(&self) -> &[OpNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn position(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&OpNode> {
        self.position(id).map(|p| &self.nodes[p])
    }

    /// True when some chain of dependencies leads from `to` back to `from`.
    pub fn depends_on(&self, from: NodeId, to: NodeId) -> bool {
        let mut stack = vec![from];
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            let Some(node) = self.node(id) else { continue };
            for &d in &node.deps {
                if d == to {
                    return true;
                }
                if seen.insert(d) {
                    stack.push(d);
                }
            }
        }
        false
    }
}
