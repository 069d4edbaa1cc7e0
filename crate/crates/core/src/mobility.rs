//! Fixed-speed random waypoint movement on a [`WorldGraph`].
//!
//! Each tick an agent either picks a new destination (when its path is
//! exhausted) and stays put, or advances up to `speed` nodes along its queued
//! path.

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::world_graph::{NodeId, WorldGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgentKind {
    Person,
    Sensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub kind: AgentKind,
    position: NodeId,
    speed: u32,
    path: VecDeque<NodeId>,
    stranded: bool,
}

impl Agent {
    pub fn new(kind: AgentKind, position: NodeId, speed: u32) -> Result<Self> {
        if speed == 0 {
            return Err(Error::InvalidConfig("agent speed must be at least 1".into()));
        }
        Ok(Agent {
            kind,
            position,
            speed,
            path: VecDeque::new(),
            stranded: false,
        })
    }

    /// Agent with a pre-filled path. Every node of `path` must be adjacent to
    /// its predecessor, starting from `position`.
    pub fn with_path(
        kind: AgentKind,
        position: NodeId,
        speed: u32,
        path: impl IntoIterator<Item = NodeId>,
        g: &WorldGraph,
    ) -> Result<Self> {
        let mut agent = Self::new(kind, position, speed)?;
        if !g.contains(position) {
            return Err(Error::InvalidNode(position));
        }
        let mut prev = position;
        for node in path {
            if !g.contains(node) {
                return Err(Error::InvalidNode(node));
            }
            if !g.is_adjacent(prev, node) {
                return Err(Error::Domain(format!(
                    "path node {node} is not adjacent to {prev}"
                )));
            }
            agent.path.push_back(node);
            prev = node;
        }
        Ok(agent)
    }

    pub fn position(&self) -> NodeId {
        self.position
    }

    pub fn speed(&self) -> u32 {
        self.speed
    }

    pub fn path(&self) -> &VecDeque<NodeId> {
        &self.path
    }

    pub fn is_stranded(&self) -> bool {
        self.stranded
    }

    /// Advances the agent by one tick.
    ///
    /// With an empty path a destination is drawn uniformly from the nodes
    /// reachable from the current position (excluding it), the A* route is
    /// queued and the agent does not move. Otherwise it pops
    /// `min(speed, queued)` nodes and ends on the last one.
    pub fn step<R: Rng + ?Sized>(&mut self, g: &WorldGraph, rng: &mut R) -> Result<()> {
        if self.path.is_empty() {
            let reachable = g.reachable_from(self.position);
            if reachable.len() < 2 {
                if !self.stranded {
                    log::warn!(
                        "{:?} on isolated node {} cannot move",
                        self.kind,
                        self.position
                    );
                    self.stranded = true;
                }
                return Ok(());
            }
            // Uniform over reachable nodes other than the current one.
            let mut idx = rng.random_range(0..reachable.len() - 1);
            let own = reachable
                .binary_search(&self.position)
                .expect("position belongs to its own component");
            if idx >= own {
                idx += 1;
            }
            let route = g.astar_path(self.position, reachable[idx])?;
            self.path.extend(route.nodes.into_iter().skip(1));
            return Ok(());
        }

        let hops = (self.speed as usize).min(self.path.len());
        for _ in 0..hops {
            self.position = self.path.pop_front().expect("hops bounded by queue length");
        }
        Ok(())
    }
}

/// Places people followed by sensors uniformly at random on graph nodes.
/// Several agents may share a node.
pub fn init_population<R: Rng + ?Sized>(
    g: &WorldGraph,
    n_people: usize,
    n_sensors: usize,
    v_person: u32,
    v_sensor: u32,
    rng: &mut R,
) -> Result<Vec<Agent>> {
    if g.node_count() == 0 {
        return Err(Error::EmptyWorld);
    }
    let n = g.node_count();
    let mut agents = Vec::with_capacity(n_people + n_sensors);
    for _ in 0..n_people {
        agents.push(Agent::new(AgentKind::Person, rng.random_range(0..n), v_person)?);
    }
    for _ in 0..n_sensors {
        agents.push(Agent::new(AgentKind::Sensor, rng.random_range(0..n), v_sensor)?);
    }
    Ok(agents)
}
