use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::graph::{Channel, NodeId, OpKind, OpNode, ScheduleGraph};
use super::profile::{DeviceProfile, KernelVariant};
use super::{round_half_up, DeviceError, Micros};

/// Prices a single node.
pub trait CostModel {
    fn duration(&self, node: &OpNode) -> Result<Micros, DeviceError>;
}

impl<C: CostModel + ?Sized> CostModel for &C {
    fn duration(&self, node: &OpNode) -> Result<Micros, DeviceError> {
        (**self).duration(node)
    }
}

impl CostModel for DeviceProfile {
    fn duration(&self, node: &OpNode) -> Result<Micros, DeviceError> {
        let unsat = |reason: String| DeviceError::Unsatisfiable { node: node.id, reason };
        let dims = || node.image_dims.ok_or_else(|| unsat("missing image dimensions".into()));
        let base = match node.kind {
            OpKind::HostCopy => {
                if node.payload_bytes == 0 {
                    return Err(unsat("empty host copy".into()));
                }
                self.host_copy_time(node.payload_bytes)
            }
            OpKind::BufferCopy => self.transfer_time(node.payload_bytes).map_err(|e| unsat(e.to_string()))?,
            OpKind::BufferToImage => {
                let (w, h) = dims()?;
                self.slotted_transform_time(w, h, node.image_slots)
                    .map_err(|e| unsat(e.to_string()))?
            }
            OpKind::Kernel => {
                let (w, h) = dims()?;
                self.check_dims(w, h).map_err(|e| unsat(e.to_string()))?;
                let variant = node.kernel.unwrap_or(KernelVariant::Image1);
                self.kernel_time(variant, w, h).map_err(|e| unsat(e.to_string()))?
            }
            OpKind::Clear => {
                // A device-side fill priced like one pass of the kernel.
                let (w, h) = dims()?;
                let variant = node.kernel.unwrap_or(KernelVariant::Image1);
                let rate = self.kernel_rate(variant).map_err(|e| unsat(e.to_string()))?;
                round_half_up(self.image_bytes(w, h) as f64 / (rate / 1e6))
            }
        };
        Ok(if node.warmup { base + self.warmup_us } else { base })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: Micros,
    pub end: Micros,
}

impl Span {
    pub fn duration(&self) -> Micros {
        self.end - self.start
    }
}

/// Simulated start and end of every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub entries: BTreeMap<NodeId, Span>,
    pub makespan: Micros,
    /// End of the setup (clear) work; timed totals are measured from here.
    pub origin: Micros,
}

impl Timeline {
    pub fn span(&self, id: NodeId) -> Option<Span> {
        self.entries.get(&id).copied()
    }

    /// Makespan excluding the setup work before [`Timeline::origin`].
    pub fn timed_span(&self) -> Micros {
        self.makespan - self.origin
    }
}

/// Executes `graph` on the virtual device.
///
/// A node starts once every dependency has finished and the node ahead of it on the same
/// channel has finished. A node that has to wait for something enqueued behind it on its own
/// channel can never start, and is reported as a cycle together with any true dependency cycle.
pub fn simulate<C: CostModel + ?Sized>(costs: &C, graph: &ScheduleGraph) -> Result<Timeline, DeviceError> {
    let nodes = graph.nodes();
    let n = nodes.len();
    let mut durations = Vec::with_capacity(n);
    for node in nodes {
        durations.push(costs.duration(node)?);
    }

    // Predecessors: explicit deps plus the previous node in the same channel queue.
    let mut successors: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pending = vec![0usize; n];
    let mut last_on_channel: [Option<usize>; 3] = [None; 3];
    for (pos, node) in nodes.iter().enumerate() {
        for dep in &node.deps {
            let dep_pos = graph.position(*dep).expect("graph validated its dependencies");
            successors[dep_pos].push(pos);
            pending[pos] += 1;
        }
        let lane = node.channel.index();
        if let Some(prev) = last_on_channel[lane] {
            successors[prev].push(pos);
            pending[pos] += 1;
        }
        last_on_channel[lane] = Some(pos);
    }

    let mut ready_at = vec![0 as Micros; n];
    let mut spans: Vec<Option<Span>> = vec![None; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&p| pending[p] == 0).collect();
    let mut done = 0usize;
    while let Some(pos) = queue.pop_front() {
        let start = ready_at[pos];
        let end = start + durations[pos];
        spans[pos] = Some(Span { start, end });
        done += 1;
        for &next in &successors[pos] {
            ready_at[next] = ready_at[next].max(end);
            pending[next] -= 1;
            if pending[next] == 0 {
                queue.push_back(next);
            }
        }
    }

    if done < n {
        let stuck: Vec<NodeId> = nodes
            .iter()
            .zip(&spans)
            .filter(|(_, s)| s.is_none())
            .map(|(node, _)| node.id)
            .take(16)
            .collect();
        return Err(DeviceError::DependencyCycle(stuck));
    }

    let mut entries = BTreeMap::new();
    let mut makespan = 0;
    let mut origin = 0;
    for (node, span) in nodes.iter().zip(spans) {
        let span = span.expect("every node was scheduled");
        makespan = makespan.max(span.end);
        if node.kind == OpKind::Clear {
            origin = origin.max(span.end);
        }
        entries.insert(node.id, span);
    }
    Ok(Timeline { entries, makespan, origin })
}

/// Total busy time per channel.
pub fn channel_busy(graph: &ScheduleGraph, timeline: &Timeline) -> Vec<(Channel, Micros)> {
    let mut busy = [0; 3];
    for node in graph.nodes() {
        if let Some(span) = timeline.span(node.id) {
            busy[node.channel.index()] += span.duration();
        }
    }
    Channel::ALL.into_iter().zip(busy).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Duration equals payload; keeps property tests independent of profile rounding.
    struct PayloadCost;

    impl CostModel for PayloadCost {
        fn duration(&self, node: &OpNode) -> Result<Micros, DeviceError> {
            Ok(node.payload_bytes)
        }
    }

    fn node(id: u32, channel: Channel, d: u64, deps: &[u32]) -> OpNode {
        OpNode::new(NodeId(id), OpKind::BufferCopy, d)
            .on_channel(channel)
            .with_deps(deps.iter().map(|&i| NodeId(i)))
    }

    #[test]
    fn single_kernel() {
        let k = OpNode::new(NodeId(0), OpKind::Kernel, 9).with_dims(3, 3);
        let g = ScheduleGraph::new(vec![k]).unwrap();
        assert_eq!(simulate(&PayloadCost, &g).unwrap().makespan, 9);
    }

    #[test]
    fn independent_channels_overlap() {
        let g = ScheduleGraph::new(vec![
            node(0, Channel::Transfer, 5, &[]),
            node(1, Channel::Compute, 7, &[]),
        ])
        .unwrap();
        assert_eq!(simulate(&PayloadCost, &g).unwrap().makespan, 7);
    }

    #[test]
    fn chain_on_one_channel() {
        let g = ScheduleGraph::new(vec![
            node(0, Channel::Transfer, 3, &[]),
            node(1, Channel::Transfer, 4, &[0]),
        ])
        .unwrap();
        let t = simulate(&PayloadCost, &g).unwrap();
        assert_eq!(t.makespan, 7);
        assert_eq!(t.span(NodeId(1)), Some(Span { start: 3, end: 7 }));
    }

    #[test]
    fn cycle_is_reported() {
        let g = ScheduleGraph::new(vec![
            node(0, Channel::Transfer, 1, &[1]),
            node(1, Channel::Compute, 1, &[0]),
        ])
        .unwrap();
        let err = simulate(&PayloadCost, &g).unwrap_err();
        assert!(err.to_string().contains("dependency cycle"));
    }

    #[test]
    fn waiting_on_a_later_node_of_the_same_queue_deadlocks() {
        let g = ScheduleGraph::new(vec![
            node(0, Channel::Transfer, 1, &[1]),
            node(1, Channel::Transfer, 1, &[]),
        ])
        .unwrap();
        assert!(matches!(simulate(&PayloadCost, &g), Err(DeviceError::DependencyCycle(_))));
    }

    #[test]
    fn unsatisfiable_node_names_its_id() {
        let p = DeviceProfile::synthetic_default();
        let t = OpNode::new(NodeId(42), OpKind::BufferToImage, 1).with_dims(20_000, 10);
        let g = ScheduleGraph::new(vec![t]).unwrap();
        match simulate(&p, &g).unwrap_err() {
            DeviceError::Unsatisfiable { node, reason } => {
                assert_eq!(node, NodeId(42));
                assert!(reason.contains("unsupported image size"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn warmup_is_added_once() {
        let mut p = DeviceProfile::synthetic_default();
        p.warmup_us = 250;
        let mut first = OpNode::new(NodeId(0), OpKind::BufferCopy, 1 << 22);
        first.warmup = true;
        let second = OpNode::new(NodeId(1), OpKind::BufferCopy, 1 << 22);
        let g = ScheduleGraph::new(vec![first, second]).unwrap();
        let t = simulate(&p, &g).unwrap();
        let copy = p.transfer_time(1 << 22).unwrap();
        assert_eq!(t.makespan, 2 * copy + 250);
    }

    prop_compose! {
        /// Random DAG: deps only point backwards, channel and duration random.
        fn random_dag()(len in 1usize..40)
            (specs in prop::collection::vec((0usize..3, 0u64..50, prop::collection::vec(any::<prop::sample::Index>(), 0..4)), len))
            -> Vec<OpNode> {
            specs.into_iter().enumerate().map(|(i, (ch, d, deps))| {
                let mut deps: Vec<u32> = if i == 0 { vec![] } else {
                    deps.iter().map(|ix| ix.index(i) as u32).collect()
                };
                deps.sort_unstable();
                deps.dedup();
                node(i as u32, Channel::ALL[ch], d, &deps)
            }).collect()
        }
    }

    proptest! {
        #[test]
        fn timeline_is_legal(nodes in random_dag()) {
            let g = ScheduleGraph::new(nodes).unwrap();
            let t = simulate(&PayloadCost, &g).unwrap();
            let mut last_end: [Option<Micros>; 3] = [None; 3];
            let mut max_end = 0;
            for n in g.nodes() {
                let s = t.span(n.id).unwrap();
                prop_assert_eq!(s.duration(), n.payload_bytes);
                for d in &n.deps {
                    prop_assert!(s.start >= t.span(*d).unwrap().end);
                }
                let lane = n.channel.index();
                if let Some(prev) = last_end[lane] {
                    prop_assert!(s.start >= prev);
                }
                last_end[lane] = Some(s.end);
                max_end = max_end.max(s.end);
            }
            prop_assert_eq!(t.makespan, max_end);
        }

        #[test]
        fn work_is_conserved(nodes in random_dag()) {
            let g = ScheduleGraph::new(nodes).unwrap();
            let t = simulate(&PayloadCost, &g).unwrap();
            let total: Micros = g.nodes().iter().map(|n| n.payload_bytes).sum();
            let busy = channel_busy(&g, &t);
            prop_assert!(busy.iter().all(|&(_, b)| t.makespan >= b));
            prop_assert!(t.makespan <= total);
        }

        #[test]
        fn simulation_is_deterministic(nodes in random_dag()) {
            let g = ScheduleGraph::new(nodes).unwrap();
            prop_assert_eq!(simulate(&PayloadCost, &g).unwrap(), simulate(&PayloadCost, &g).unwrap());
        }

        #[test]
        fn growing_a_payload_never_shrinks_makespan(nodes in random_dag(), pick in any::<prop::sample::Index>(), extra in 1u64..100) {
            let g = ScheduleGraph::new(nodes.clone()).unwrap();
            let before = simulate(&PayloadCost, &g).unwrap().makespan;
            let mut bigger = nodes;
            let i = pick.index(bigger.len());
            bigger[i].payload_bytes += extra;
            let g2 = ScheduleGraph::new(bigger).unwrap();
            prop_assert!(simulate(&PayloadCost, &g2).unwrap().makespan >= before);
        }

        #[test]
        fn profile_priced_payload_growth_is_monotone(nodes in random_dag(), pick in any::<prop::sample::Index>(), extra in 1u64..5_000_000) {
            let p = DeviceProfile::synthetic_default();
            let scale = |mut n: OpNode| { n.payload_bytes = n.payload_bytes * 100_000 + 1; n };
            let nodes: Vec<OpNode> = nodes.into_iter().map(scale).collect();
            let before = simulate(&p, &ScheduleGraph::new(nodes.clone()).unwrap()).unwrap().makespan;
            let mut bigger = nodes;
            let i = pick.index(bigger.len());
            bigger[i].payload_bytes += extra;
            let after = simulate(&p, &ScheduleGraph::new(bigger).unwrap()).unwrap().makespan;
            prop_assert!(after >= before);
        }
    }
}
