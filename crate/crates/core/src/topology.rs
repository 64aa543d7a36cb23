//! Physical quantum network: source, routing nodes, memory nodes and fibre.
//!
//! Insertion losses live on nodes, attenuation on links. A path charges every
//! node it traverses exactly once, including the source and the terminal
//! memory node.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SOURCE_LOSS_DB: f64 = 4.0;
pub const INTERMEDIATE_LOSS_DB: f64 = 8.0;
pub const MEMORY_LOSS_DB: f64 = 4.0;
pub const FIBER_ATTENUATION_DB_PER_KM: f64 = 0.2;
/// Group velocity in silica fibre (n ≈ 1.5).
pub const SIGNAL_SPEED_KM_PER_S: f64 = 2.0e5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Source,
    Intermediate,
    Entangling,
}

impl NodeKind {
    pub fn default_loss_db(self) -> f64 {
        match self {
            NodeKind::Source => SOURCE_LOSS_DB,
            NodeKind::Intermediate => INTERMEDIATE_LOSS_DB,
            NodeKind::Entangling => MEMORY_LOSS_DB,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: String,
    pub kind: NodeKind,
    pub insertion_loss_db: f64,
}

impl NodeSpec {
    /// A node carrying the default insertion loss for its kind.
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        NodeSpec { id: id.into(), kind, insertion_loss_db: kind.default_loss_db() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberLink {
    pub endpoints: (String, String),
    pub length_km: f64,
    #[serde(default = "default_attenuation")]
    pub attenuation_db_per_km: f64,
}

fn default_attenuation() -> f64 {
    FIBER_ATTENUATION_DB_PER_KM
}

impl FiberLink {
    pub fn new(a: impl Into<String>, b: impl Into<String>, length_km: f64) -> Self {
        FiberLink { endpoints: (a.into(), b.into()), length_km, attenuation_db_per_km: FIBER_ATTENUATION_DB_PER_KM }
    }

    pub fn loss_db(&self) -> f64 {
        self.attenuation_db_per_km * self.length_km
    }

    fn joins(&self, a: &str, b: &str) -> bool {
        let (x, y) = (&self.endpoints.0, &self.endpoints.1);
        (x == a && y == b) || (x == b && y == a)
    }
}

/// An ordered walk from the source to an entangling node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumPath {
    pub nodes: Vec<String>,
    pub links: Vec<FiberLink>,
    pub total_loss_db: f64,
    /// Photon transit time along the path (T_Q for this arm).
    pub propagation_delay_s: f64,
}

impl QuantumPath {
    pub fn length_km(&self) -> f64 {
        self.links.iter().map(|l| l.length_km).sum()
    }

    pub fn destination(&self) -> &str {
        self.nodes.last().map(String::as_str).unwrap_or_default()
    }

    pub fn intermediate_count(&self, topology: &Topology) -> usize {
        self.nodes.iter().filter(|id| topology.node(id).map(|n| n.kind) == Some(NodeKind::Intermediate)).count()
    }
}

/// Static network description. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    nodes: Vec<NodeSpec>,
    links: Vec<FiberLink>,
    signal_speed_km_per_s: f64,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Topology {
    pub fn new(nodes: Vec<NodeSpec>, links: Vec<FiberLink>, signal_speed_km_per_s: f64) -> Result<Self> {
        if !(signal_speed_km_per_s > 0.0 && signal_speed_km_per_s.is_finite()) {
            return Err(Error::Topology(format!(
                "signal speed must be positive and finite, got {signal_speed_km_per_s}"
            )));
        }
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if !(n.insertion_loss_db >= 0.0 && n.insertion_loss_db.is_finite()) {
                return Err(Error::Topology(format!(
                    "node {} has invalid insertion loss {}",
                    n.id, n.insertion_loss_db
                )));
            }
            if index.insert(n.id.clone(), i).is_some() {
                return Err(Error::Topology(format!("duplicate node id {}", n.id)));
            }
        }
        let sources = nodes.iter().filter(|n| n.kind == NodeKind::Source).count();
        if sources != 1 {
            return Err(Error::Topology(format!("expected exactly one source node, found {sources}")));
        }
        for l in &links {
            for end in [&l.endpoints.0, &l.endpoints.1] {
                if !index.contains_key(end) {
                    return Err(Error::Topology(format!("link references unknown node {end}")));
                }
            }
            if l.endpoints.0 == l.endpoints.1 {
                return Err(Error::Topology(format!("self-loop link at {}", l.endpoints.0)));
            }
            if !(l.length_km >= 0.0 && l.length_km.is_finite()) {
                return Err(Error::Topology(format!("link length must be >= 0, got {}", l.length_km)));
            }
            if !(l.attenuation_db_per_km >= 0.0 && l.attenuation_db_per_km.is_finite()) {
                return Err(Error::Topology(format!("attenuation must be >= 0, got {}", l.attenuation_db_per_km)));
            }
        }
        Ok(Topology { nodes, links, signal_speed_km_per_s, index })
    }

    pub fn nodes(&self) -> &[NodeSpec] {
        &self.nodes
    }

    pub fn links(&self) -> &[FiberLink] {
        &self.links
    }

    pub fn signal_speed_km_per_s(&self) -> f64 {
        self.signal_speed_km_per_s
    }

    pub fn node(&self, id: &str) -> Option<&NodeSpec> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn source(&self) -> &NodeSpec {
        self.nodes.iter().find(|n| n.kind == NodeKind::Source).expect("validated at construction")
    }

    fn link_between(&self, a: &str, b: &str) -> Option<&FiberLink> {
        self.links.iter().find(|l| l.joins(a, b))
    }

    /// Loss of an arbitrary connected walk, charging every listed node once.
    pub fn segment_loss_db(&self, node_ids: &[&str]) -> Result<f64> {
        let links = self.walk_links(node_ids)?;
        let node_loss: f64 = node_ids
            .iter()
            .map(|id| self.node(id).map(|n| n.insertion_loss_db))
            .sum::<Option<f64>>()
            .ok_or_else(|| Error::Topology("unknown node in walk".into()))?;
        Ok(node_loss + links.iter().map(|l| l.loss_db()).sum::<f64>())
    }

    fn walk_links(&self, node_ids: &[&str]) -> Result<Vec<FiberLink>> {
        if node_ids.is_empty() {
            return Err(Error::Topology("empty path".into()));
        }
        for id in node_ids {
            if self.node(id).is_none() {
                return Err(Error::Topology(format!("unknown node {id}")));
            }
        }
        node_ids
            .windows(2)
            .map(|w| {
                self.link_between(w[0], w[1])
                    .cloned()
                    .ok_or_else(|| Error::Topology(format!("path is disconnected between {} and {}", w[0], w[1])))
            })
            .collect()
    }

    /// Builds an explicit path; it must start at the source and be connected.
    pub fn path(&self, node_ids: &[&str]) -> Result<QuantumPath> {
        match node_ids.first() {
            Some(first) if *first == self.source().id => {}
            _ => return Err(Error::Topology("path must start at the source".into())),
        }
        let links = self.walk_links(node_ids)?;
        let total_loss_db = self.segment_loss_db(node_ids)?;
        let length: f64 = links.iter().map(|l| l.length_km).sum();
        Ok(QuantumPath {
            nodes: node_ids.iter().map(|s| s.to_string()).collect(),
            links,
            total_loss_db,
            propagation_delay_s: length / self.signal_speed_km_per_s,
        })
    }

    /// Fewest-hop path from the source to `dest`, passing only through
    /// intermediate nodes. Ties break by link declaration order.
    pub fn path_to(&self, dest: &str) -> Result<QuantumPath> {
        let dest_node = self.node(dest).ok_or_else(|| Error::Topology(format!("unknown node {dest}")))?;
        if dest_node.kind != NodeKind::Entangling {
            return Err(Error::Topology(format!("{dest} is not an entangling node")));
        }
        let source = self.source().id.as_str();
        let mut prev: HashMap<&str, &str> = HashMap::new();
        let mut queue = VecDeque::from([source]);
        prev.insert(source, source);
        while let Some(cur) = queue.pop_front() {
            if cur == dest {
                break;
            }
            if cur != source && self.node(cur).map(|n| n.kind) != Some(NodeKind::Intermediate) {
                continue;
            }
            for l in &self.links {
                let next = if l.endpoints.0 == cur {
                    l.endpoints.1.as_str()
                } else if l.endpoints.1 == cur {
                    l.endpoints.0.as_str()
                } else {
                    continue;
                };
                if !prev.contains_key(next) {
                    prev.insert(next, cur);
                    queue.push_back(next);
                }
            }
        }
        if !prev.contains_key(dest) {
            return Err(Error::Topology(format!("no path from source to {dest}")));
        }
        let mut walk = vec![dest];
        while let Some(&p) = prev.get(walk.last().unwrap()) {
            if p == *walk.last().unwrap() {
                break;
            }
            walk.push(p);
        }
        walk.reverse();
        self.path(&walk)
    }
}

/// Total loss of a source-rooted path.
pub fn path_loss_db(path: &QuantumPath) -> f64 {
    path.total_loss_db
}

/// Linear transmission for a loss in dB.
pub fn survival_probability(loss_db: f64) -> Result<f64> {
    if !(loss_db >= 0.0) {
        return Err(Error::Argument(format!("loss must be >= 0 dB, got {loss_db}")));
    }
    Ok(10f64.powf(-loss_db / 10.0))
}

/// Fibre transit time of a path; nodes add no delay.
pub fn arm_delay(path: &QuantumPath, signal_speed_km_per_s: f64) -> Result<f64> {
    if !(signal_speed_km_per_s > 0.0) {
        return Err(Error::Argument(format!("signal speed must be > 0, got {signal_speed_km_per_s}")));
    }
    Ok(path.length_km() / signal_speed_km_per_s)
}

/// Signed arrival skew `delay(b) - delay(a)` between two arms.
pub fn arrival_skew(a: &QuantumPath, b: &QuantumPath, signal_speed_km_per_s: f64) -> Result<f64> {
    Ok(arm_delay(b, signal_speed_km_per_s)? - arm_delay(a, signal_speed_km_per_s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single_hop(splits: &[f64]) -> Topology {
        // S -> r1 -> ... (fibre split into segments) -> R -> M
        let mut nodes = vec![NodeSpec::new("S", NodeKind::Source)];
        let mut links = Vec::new();
        let mut prev = "S".to_string();
        for (i, len) in splits.iter().enumerate() {
            let id = if i + 1 == splits.len() { "R".to_string() } else { format!("j{i}") };
            let kind = NodeKind::Intermediate;
            let mut n = NodeSpec::new(id.clone(), kind);
            if id != "R" {
                n.insertion_loss_db = 0.0; // splice point
            }
            nodes.push(n);
            links.push(FiberLink::new(prev.clone(), id.clone(), *len));
            prev = id;
        }
        nodes.push(NodeSpec::new("M", NodeKind::Entangling));
        links.push(FiberLink::new("R", "M", 0.0));
        Topology::new(nodes, links, SIGNAL_SPEED_KM_PER_S).unwrap()
    }

    #[test]
    fn loss_with_one_intermediate_over_50km() {
        for splits in [vec![50.0], vec![20.0, 30.0], vec![10.0, 10.0, 30.0]] {
            let t = single_hop(&splits);
            let p = t.path_to("M").unwrap();
            assert_abs_diff_eq!(path_loss_db(&p), 26.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn loss_zero_length_direct() {
        let t = Topology::new(
            vec![NodeSpec::new("S", NodeKind::Source), NodeSpec::new("M", NodeKind::Entangling)],
            vec![FiberLink::new("S", "M", 0.0)],
            SIGNAL_SPEED_KM_PER_S,
        )
        .unwrap();
        let p = t.path(&["S", "M"]).unwrap();
        assert_eq!(path_loss_db(&p), 8.0);
        assert_eq!(arm_delay(&p, SIGNAL_SPEED_KM_PER_S).unwrap(), 0.0);
    }

    #[test]
    fn loss_two_intermediates_100km() {
        let t = Topology::new(
            vec![
                NodeSpec::new("S", NodeKind::Source),
                NodeSpec::new("R1", NodeKind::Intermediate),
                NodeSpec::new("R2", NodeKind::Intermediate),
                NodeSpec::new("M", NodeKind::Entangling),
            ],
            vec![FiberLink::new("S", "R1", 40.0), FiberLink::new("R1", "R2", 35.0), FiberLink::new("R2", "M", 25.0)],
            SIGNAL_SPEED_KM_PER_S,
        )
        .unwrap();
        assert_abs_diff_eq!(t.path_to("M").unwrap().total_loss_db, 44.0, epsilon = 1e-12);
    }

    #[test]
    fn disconnected_path_is_rejected() {
        let t = single_hop(&[50.0]);
        assert!(matches!(t.path(&["S", "M"]), Err(Error::Topology(_))));
        assert!(matches!(t.path(&["R", "M"]), Err(Error::Topology(_))));
    }

    #[test]
    fn construction_invariants() {
        let two_sources = Topology::new(
            vec![NodeSpec::new("S", NodeKind::Source), NodeSpec::new("T", NodeKind::Source)],
            vec![],
            SIGNAL_SPEED_KM_PER_S,
        );
        assert!(two_sources.is_err());
        let mut neg = NodeSpec::new("S", NodeKind::Source);
        neg.insertion_loss_db = -1.0;
        assert!(Topology::new(vec![neg], vec![], SIGNAL_SPEED_KM_PER_S).is_err());
    }

    #[test]
    fn survival_examples() {
        assert_eq!(survival_probability(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(survival_probability(26.0).unwrap(), 0.002512, epsilon = 1e-6);
        assert_abs_diff_eq!(survival_probability(10.0).unwrap(), 0.1, epsilon = 1e-15);
        assert!(survival_probability(-0.1).is_err());
    }

    #[test]
    fn delay_examples() {
        let t = Topology::new(
            vec![
                NodeSpec::new("S", NodeKind::Source),
                NodeSpec::new("A", NodeKind::Entangling),
                NodeSpec::new("B", NodeKind::Entangling),
            ],
            vec![FiberLink::new("S", "A", 50.0), FiberLink::new("S", "B", 70.0)],
            SIGNAL_SPEED_KM_PER_S,
        )
        .unwrap();
        let a = t.path_to("A").unwrap();
        let b = t.path_to("B").unwrap();
        assert_abs_diff_eq!(arm_delay(&a, 2.0e5).unwrap(), 2.5e-4, epsilon = 1e-18);
        let skew = arrival_skew(&a, &b, 2.0e5).unwrap();
        assert_abs_diff_eq!(skew, 1.0e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(arrival_skew(&b, &a, 2.0e5).unwrap(), -skew, epsilon = 0.0);
        assert!(arm_delay(&a, 0.0).is_err());
    }

    #[test]
    fn path_does_not_route_through_other_memory_nodes() {
        let t = Topology::new(
            vec![
                NodeSpec::new("S", NodeKind::Source),
                NodeSpec::new("A", NodeKind::Entangling),
                NodeSpec::new("B", NodeKind::Entangling),
            ],
            vec![FiberLink::new("S", "A", 1.0), FiberLink::new("A", "B", 1.0)],
            SIGNAL_SPEED_KM_PER_S,
        )
        .unwrap();
        assert!(t.path_to("B").is_err());
    }

    proptest! {
        #[test]
        fn loss_is_additive_over_junctions(
            losses in proptest::collection::vec(0.0f64..12.0, 3..8),
            lengths in proptest::collection::vec(0.0f64..80.0, 7),
            cut in 1usize..6,
        ) {
            let n = losses.len();
            let cut = cut.min(n - 2);
            let mut nodes: Vec<NodeSpec> = (0..n).map(|i| {
                let kind = if i == 0 { NodeKind::Source } else if i + 1 == n { NodeKind::Entangling } else { NodeKind::Intermediate };
                NodeSpec { id: format!("n{i}"), kind, insertion_loss_db: losses[i] }
            }).collect();
            nodes.shrink_to_fit();
            let links = (1..n).map(|i| FiberLink::new(format!("n{}", i - 1), format!("n{i}"), lengths[i - 1])).collect();
            let t = Topology::new(nodes, links, SIGNAL_SPEED_KM_PER_S).unwrap();
            let ids: Vec<String> = (0..n).map(|i| format!("n{i}")).collect();
            let all: Vec<&str> = ids.iter().map(String::as_str).collect();
            let whole = t.path(&all).unwrap().total_loss_db;
            let head = t.segment_loss_db(&all[..=cut]).unwrap();
            let tail = t.segment_loss_db(&all[cut..]).unwrap();
            prop_assert!((whole - (head + tail - losses[cut])).abs() < 1e-9);
        }

        #[test]
        fn survival_is_monotone(a in 0.0f64..100.0, b in 0.0f64..100.0) {
            let (pa, pb) = (survival_probability(a).unwrap(), survival_probability(b).unwrap());
            prop_assert!((0.0..=1.0).contains(&pa));
            if a < b { prop_assert!(pa > pb); }
            if a > 0.0 { prop_assert!(pa < 1.0); }
        }
    }
}
