//! Traversable world represented as an undirected graph with planar
//! coordinates.
//!
//! Worlds are either generated from an obstacle grid (one node per free cell,
//! 4-connected, unit edge weights) or loaded from a sectioned CSV file:
//!
//! ```text
//! nodes
//! 0,0.0,0.0
//! 1,1.0,0.0
//! edges
//! 0,1
//! ```
//!
//! Edge weights are always the Euclidean distance between the endpoints.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

#[derive(Debug, Clone)]
pub struct WorldGraph {
    coords: Vec<(f64, f64)>,
    adjacency: Vec<Vec<(NodeId, f64)>>,
    edge_count: usize,
    bbox: BoundingBox,
    /// Connected component id per node.
    component: Vec<usize>,
    /// Members of each component, ascending.
    components: Vec<Vec<NodeId>>,
}

/// A route returned by [`WorldGraph::astar_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub cost: f64,
}

impl WorldGraph {
    /// Builds a graph from node coordinates and an undirected edge list.
    ///
    /// Duplicate edges (in either orientation) are merged. Self loops and
    /// edges between coincident nodes are rejected because their weight would
    /// be zero.
    pub fn from_parts(coords: Vec<(f64, f64)>, edges: &[(NodeId, NodeId)]) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::EmptyWorld);
        }
        let n = coords.len();
        let mut unique = BTreeSet::new();
        for &(a, b) in edges {
            if a >= n {
                return Err(Error::InvalidNode(a));
            }
            if b >= n {
                return Err(Error::InvalidNode(b));
            }
            unique.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); n];
        for &(a, b) in &unique {
            let w = dist(coords[a], coords[b]);
            if w <= 0.0 || !w.is_finite() {
                return Err(Error::Domain(format!(
                    "edge {a}-{b} has non-positive length {w}"
                )));
            }
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for list in &mut adjacency {
            list.sort_by_key(|&(id, _)| id);
        }

        let bbox = coords.iter().fold(
            BoundingBox {
                min_x: f64::INFINITY,
                min_y: f64::INFINITY,
                max_x: f64::NEG_INFINITY,
                max_y: f64::NEG_INFINITY,
            },
            |b, &(x, y)| BoundingBox {
                min_x: b.min_x.min(x),
                min_y: b.min_y.min(y),
                max_x: b.max_x.max(x),
                max_y: b.max_y.max(y),
            },
        );

        let (component, components) = label_components(&adjacency);
        Ok(WorldGraph {
            coords,
            adjacency,
            edge_count: unique.len(),
            bbox,
            component,
            components,
        })
    }

    /// Builds a 4-connected grid world. `obstacles` is row-major with
    /// `rows * cols` entries, `true` marking a blocked cell. Node `(row, col)`
    /// sits at coordinates `x = col`, `y = row`; ids are assigned row-major
    /// over the free cells.
    pub fn grid(rows: usize, cols: usize, obstacles: &[bool]) -> Result<Self> {
        if obstacles.len() != rows * cols {
            return Err(Error::MaskShape {
                rows,
                cols,
                got: obstacles.len(),
            });
        }
        let mut cell_node = vec![None; rows * cols];
        let mut coords = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if !obstacles[r * cols + c] {
                    cell_node[r * cols + c] = Some(coords.len());
                    coords.push((c as f64, r as f64));
                }
            }
        }
        if coords.is_empty() {
            return Err(Error::EmptyWorld);
        }
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let Some(a) = cell_node[r * cols + c] else {
                    continue;
                };
                if c + 1 < cols {
                    if let Some(b) = cell_node[r * cols + c + 1] {
                        edges.push((a, b));
                    }
                }
                if r + 1 < rows {
                    if let Some(b) = cell_node[(r + 1) * cols + c] {
                        edges.push((a, b));
                    }
                }
            }
        }
        Self::from_parts(coords, &edges)
    }

    /// Open grid without obstacles.
    pub fn open_grid(rows: usize, cols: usize) -> Result<Self> {
        Self::grid(rows, cols, &vec![false; rows * cols])
    }

    /// Parses a grid of `.` (free) and `#` (obstacle) characters. Blank lines
    /// are ignored; all rows must have equal width.
    pub fn parse_grid_text(text: &str) -> Result<Self> {
        let mut width = None;
        let mut mask = Vec::new();
        let mut rows = 0;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let w = line.chars().count();
            match width {
                None => width = Some(w),
                Some(expected) if expected != w => {
                    return Err(Error::parse(
                        i + 1,
                        format!("row has width {w}, expected {expected}"),
                    ))
                }
                _ => {}
            }
            for ch in line.chars() {
                match ch {
                    '.' => mask.push(false),
                    '#' => mask.push(true),
                    other => {
                        return Err(Error::parse(i + 1, format!("unexpected character {other:?}")))
                    }
                }
            }
            rows += 1;
        }
        let cols = width.unwrap_or(0);
        Self::grid(rows, cols, &mask)
    }

    pub fn load_grid_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse_grid_text(&text)
    }

    /// Parses the sectioned node/edge CSV format. Node ids must cover
    /// `0..n` exactly once, in any order.
    pub fn parse_csv(text: &str) -> Result<Self> {
        enum Section {
            None,
            Nodes,
            Edges,
        }
        let mut section = Section::None;
        let mut nodes: Vec<Option<(f64, f64)>> = Vec::new();
        let mut node_lines: Vec<usize> = Vec::new();
        let mut edges = Vec::new();
        let mut edge_lines = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "nodes" => {
                    section = Section::Nodes;
                    continue;
                }
                "edges" => {
                    section = Section::Edges;
                    continue;
                }
                _ => {}
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            match section {
                Section::None => {
                    return Err(Error::parse(line_no, "data before a `nodes` header"));
                }
                Section::Nodes => {
                    if fields.len() != 3 {
                        return Err(Error::parse(line_no, "expected `id,x,y`"));
                    }
                    let id: NodeId = parse_field(fields[0], line_no, "node id")?;
                    let x: f64 = parse_field(fields[1], line_no, "x")?;
                    let y: f64 = parse_field(fields[2], line_no, "y")?;
                    if !x.is_finite() || !y.is_finite() {
                        return Err(Error::parse(line_no, "non-finite coordinate"));
                    }
                    if id >= nodes.len() {
                        nodes.resize(id + 1, None);
                        node_lines.resize(id + 1, 0);
                    }
                    if nodes[id].is_some() {
                        return Err(Error::parse(line_no, format!("duplicate node id {id}")));
                    }
                    nodes[id] = Some((x, y));
                    node_lines[id] = line_no;
                }
                Section::Edges => {
                    if fields.len() != 2 {
                        return Err(Error::parse(line_no, "expected `id_a,id_b`"));
                    }
                    let a: NodeId = parse_field(fields[0], line_no, "edge endpoint")?;
                    let b: NodeId = parse_field(fields[1], line_no, "edge endpoint")?;
                    if a == b {
                        return Err(Error::parse(line_no, format!("self loop on node {a}")));
                    }
                    edges.push((a, b));
                    edge_lines.push(line_no);
                }
            }
        }

        let mut coords = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.into_iter().enumerate() {
            match node {
                Some(c) => coords.push(c),
                None => {
                    return Err(Error::parse(
                        0,
                        format!("node ids are not dense: id {id} is missing"),
                    ))
                }
            }
        }
        let n = coords.len();
        for (&(a, b), &line_no) in edges.iter().zip(&edge_lines) {
            for end in [a, b] {
                if end >= n {
                    return Err(Error::parse(
                        line_no,
                        format!("edge endpoint {end} does not name a node"),
                    ));
                }
            }
            if dist(coords[a], coords[b]) <= 0.0 {
                return Err(Error::parse(
                    line_no,
                    format!("edge {a}-{b} joins coincident nodes"),
                ));
            }
        }
        Self::from_parts(coords, &edges)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse_csv(&text)
    }

    /// Serializes into the sectioned CSV format accepted by [`parse_csv`].
    ///
    /// [`parse_csv`]: WorldGraph::parse_csv
    pub fn to_csv(&self) -> String {
        let mut out = String::from("nodes\n");
        for (id, (x, y)) in self.coords.iter().enumerate() {
            let _ = writeln!(out, "{id},{x},{y}");
        }
        out.push_str("edges\n");
        for (a, b) in self.edges() {
            let _ = writeln!(out, "{a},{b}");
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::file(path, e))
    }

    pub fn node_count(&self) -> usize {
        self.coords.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn contains(&self, id: NodeId) -> bool {
        id < self.coords.len()
    }

    pub fn coords(&self, id: NodeId) -> (f64, f64) {
        self.coords[id]
    }

    pub fn neighbors(&self, id: NodeId) -> &[(NodeId, f64)] {
        &self.adjacency[id]
    }

    pub fn is_adjacent(&self, a: NodeId, b: NodeId) -> bool {
        self.adjacency[a]
            .binary_search_by_key(&b, |&(id, _)| id)
            .is_ok()
    }

    /// Undirected edges as `(a, b)` with `a < b`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.adjacency.iter().enumerate().flat_map(|(a, list)| {
            list.iter()
                .filter(move |&&(b, _)| a < b)
                .map(move |&(b, _)| (a, b))
        })
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> f64 {
        dist(self.coords[a], self.coords[b])
    }

    /// Nodes reachable from `id` (its connected component, including `id`).
    pub fn reachable_from(&self, id: NodeId) -> &[NodeId] {
        &self.components[self.component[id]]
    }

    pub fn same_component(&self, a: NodeId, b: NodeId) -> bool {
        self.component[a] == self.component[b]
    }

    /// Shortest path by A* with the Euclidean heuristic. Among frontier
    /// entries with equal f-cost the lowest node id is expanded first.
    pub fn astar_path(&self, src: NodeId, dst: NodeId) -> Result<Route> {
        for id in [src, dst] {
            if !self.contains(id) {
                return Err(Error::InvalidNode(id));
            }
        }
        if src == dst {
            return Ok(Route {
                nodes: vec![src],
                cost: 0.0,
            });
        }
        if !self.same_component(src, dst) {
            return Err(Error::NoPath { src, dst });
        }

        let n = self.node_count();
        let mut g_score = vec![f64::INFINITY; n];
        let mut parent = vec![usize::MAX; n];
        let mut closed = vec![false; n];
        let mut open = BinaryHeap::new();
        g_score[src] = 0.0;
        open.push(Frontier {
            f: self.distance(src, dst),
            node: src,
        });

        while let Some(Frontier { node, .. }) = open.pop() {
            if closed[node] {
                continue;
            }
            if node == dst {
                break;
            }
            closed[node] = true;
            for &(next, w) in &self.adjacency[node] {
                if closed[next] {
                    continue;
                }
                let tentative = g_score[node] + w;
                if tentative < g_score[next] {
                    g_score[next] = tentative;
                    parent[next] = node;
                    open.push(Frontier {
                        f: tentative + self.distance(next, dst),
                        node: next,
                    });
                }
            }
        }

        if !g_score[dst].is_finite() {
            return Err(Error::NoPath { src, dst });
        }
        let mut nodes = vec![dst];
        let mut cur = dst;
        while cur != src {
            cur = parent[cur];
            nodes.push(cur);
        }
        nodes.reverse();
        Ok(Route {
            nodes,
            cost: g_score[dst],
        })
    }

    /// Sum of edge weights along `nodes`, or `None` if two consecutive nodes
    /// are not adjacent.
    pub fn path_cost(&self, nodes: &[NodeId]) -> Option<f64> {
        nodes.windows(2).try_fold(0.0, |acc, w| {
            self.adjacency[w[0]]
                .iter()
                .find(|&&(id, _)| id == w[1])
                .map(|&(_, weight)| acc + weight)
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Frontier {
    f: f64,
    node: NodeId,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl Ord for Frontier {
    // Reversed so the max-heap pops the smallest f, then the smallest id.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T> {
    s.parse()
        .map_err(|_| Error::parse(line, format!("invalid {what}: {s:?}")))
}

fn label_components(adjacency: &[Vec<(NodeId, f64)>]) -> (Vec<usize>, Vec<Vec<NodeId>>) {
    let mut component = vec![usize::MAX; adjacency.len()];
    let mut components = Vec::new();
    let mut stack = Vec::new();
    for start in 0..adjacency.len() {
        if component[start] != usize::MAX {
            continue;
        }
        let id = components.len();
        let mut members = Vec::new();
        component[start] = id;
        stack.push(start);
        while let Some(node) = stack.pop() {
            members.push(node);
            for &(next, _) in &adjacency[node] {
                if component[next] == usize::MAX {
                    component[next] = id;
                    stack.push(next);
                }
            }
        }
        members.sort_unstable();
        components.push(members);
    }
    (component, components)
}
