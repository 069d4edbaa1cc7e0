//! Imperfect sensing and density accumulation.
//!
//! A sensor covering `n` people reports `Binomial(n, p) + Poisson(lambda)`
//! detections, so the expected reading is `p * n + lambda`. Readings are
//! accumulated per spatial bucket (sensed density `psi`) alongside the true
//! time-averaged occupancy (`phi`).

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{Agent, AgentKind};
use crate::theory::DensityVector;
use crate::world_graph::{NodeId, WorldGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    /// True-positive rate.
    pub p: f64,
    /// Expected false positives per sample.
    pub lambda: f64,
    /// Coverage radius in world units.
    pub radius: f64,
}

impl SensingParams {
    pub fn new(p: f64, lambda: f64, radius: f64) -> Result<Self> {
        let params = SensingParams { p, lambda, radius };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("p = {} outside [0, 1]", self.p)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidConfig(format!("radius = {} must be >= 0", self.radius)));
        }
        Ok(())
    }
}

/// Draws one sensor reading for `n_in_range` people.
pub fn sense<R: Rng + ?Sized>(n_in_range: u64, params: &SensingParams, rng: &mut R) -> u64 {
    let hits = if n_in_range == 0 || params.p == 0.0 {
        0
    } else if params.p == 1.0 {
        n_in_range
    } else {
        Binomial::new(n_in_range, params.p)
            .expect("p validated to [0, 1]")
            .sample(rng)
    };
    let false_pos = if params.lambda > 0.0 {
        let draw: f64 = Poisson::new(params.lambda)
            .expect("lambda validated positive")
            .sample(rng);
        draw as u64
    } else {
        0
    };
    hits + false_pos
}

/// Number of people whose node lies within `radius` (inclusive) of the
/// sensor's node.
pub fn people_in_range(sensor: &Agent, people: &[Agent], g: &WorldGraph, radius: f64) -> u64 {
    let (sx, sy) = g.coords(sensor.position());
    let r2 = radius * radius;
    people
        .iter()
        .filter(|a| a.kind == AgentKind::Person)
        .filter(|a| {
            let (x, y) = g.coords(a.position());
            let (dx, dy) = (x - sx, y - sy);
            dx * dx + dy * dy <= r2
        })
        .count() as u64
}

/// Assignment of graph nodes to density buckets.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketMap {
    node_bucket: Vec<usize>,
    centers: Vec<(f64, f64)>,
}

impl BucketMap {
    /// One bucket per node.
    pub fn identity(g: &WorldGraph) -> Self {
        BucketMap {
            node_bucket: (0..g.node_count()).collect(),
            centers: (0..g.node_count()).map(|id| g.coords(id)).collect(),
        }
    }

    /// Merges nodes falling in the same `factor x factor` cell of the plane,
    /// measured from the graph's bounding-box corner. Buckets are numbered
    /// row-major over non-empty cells; the bucket position is the mean of its
    /// nodes' coordinates.
    pub fn coarsened(g: &WorldGraph, factor: u32) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidConfig("bucket coarsening must be >= 1".into()));
        }
        if factor == 1 {
            return Ok(Self::identity(g));
        }
        let bbox = g.bbox();
        let f = factor as f64;
        let cell_of = |id: NodeId| {
            let (x, y) = g.coords(id);
            (
                ((y - bbox.min_y) / f).floor() as i64,
                ((x - bbox.min_x) / f).floor() as i64,
            )
        };
        let mut cells: BTreeMap<(i64, i64), Vec<NodeId>> = BTreeMap::new();
        for id in 0..g.node_count() {
            cells.entry(cell_of(id)).or_default().push(id);
        }
        let mut node_bucket = vec![0; g.node_count()];
        let mut centers = Vec::with_capacity(cells.len());
        for (bucket, members) in cells.values().enumerate() {
            let (mut sx, mut sy) = (0.0, 0.0);
            for &id in members {
                node_bucket[id] = bucket;
                let (x, y) = g.coords(id);
                sx += x;
                sy += y;
            }
            let k = members.len() as f64;
            centers.push((sx / k, sy / k));
        }
        Ok(BucketMap {
            node_bucket,
            centers,
        })
    }

    pub fn bucket_count(&self) -> usize {
        self.centers.len()
    }

    pub fn bucket_of(&self, node: NodeId) -> usize {
        self.node_bucket[node]
    }

    pub fn center(&self, bucket: usize) -> (f64, f64) {
        self.centers[bucket]
    }

    pub fn node_count(&self) -> usize {
        self.node_bucket.len()
    }
}

/// Per-bucket accumulators for sensed and true density.
#[derive(Debug, Clone)]
pub struct DensityField {
    buckets: BucketMap,
    sensed_sum: Vec<u64>,
    sensed_samples: Vec<u64>,
    truth_sum: Vec<u64>,
    truth_steps: u64,
    occupancy: Vec<u64>,
}

/// Densities at one instant of a run, indexed by bucket.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub psi: DensityVector,
    pub phi: DensityVector,
    pub samples: Vec<u64>,
}

impl DensityField {
    pub fn new(buckets: BucketMap) -> Self {
        let r = buckets.bucket_count();
        DensityField {
            buckets,
            sensed_sum: vec![0; r],
            sensed_samples: vec![0; r],
            truth_sum: vec![0; r],
            truth_steps: 0,
            occupancy: vec![0; r],
        }
    }

    pub fn buckets(&self) -> &BucketMap {
        &self.buckets
    }

    pub fn sensed_sum(&self) -> &[u64] {
        &self.sensed_sum
    }

    pub fn sensed_samples(&self) -> &[u64] {
        &self.sensed_samples
    }

    pub fn truth_sum(&self) -> &[u64] {
        &self.truth_sum
    }

    pub fn truth_steps(&self) -> u64 {
        self.truth_steps
    }

    /// Total number of sensor samples recorded so far.
    pub fn cumulative_samples(&self) -> u64 {
        self.sensed_samples.iter().sum()
    }

    /// Adds one sensed sample `reading` at `bucket`.
    pub fn add_sample(&mut self, bucket: usize, reading: u64) {
        self.sensed_sum[bucket] += reading;
        self.sensed_samples[bucket] += 1;
    }

    /// Records one tick: each sensor takes an independent measurement at its
    /// bucket, then the current person occupancy is added to the truth
    /// accumulators.
    pub fn record_step<R: Rng + ?Sized>(
        &mut self,
        g: &WorldGraph,
        agents: &[Agent],
        params: &SensingParams,
        rng: &mut R,
    ) {
        debug_assert_eq!(self.buckets.node_count(), g.node_count());
        for sensor in agents.iter().filter(|a| a.kind == AgentKind::Sensor) {
            let n = people_in_range(sensor, agents, g, params.radius);
            let reading = sense(n, params, rng);
            self.add_sample(self.buckets.bucket_of(sensor.position()), reading);
        }
        self.occupancy.iter_mut().for_each(|o| *o = 0);
        for person in agents.iter().filter(|a| a.kind == AgentKind::Person) {
            self.occupancy[self.buckets.bucket_of(person.position())] += 1;
        }
        for (sum, occ) in self.truth_sum.iter_mut().zip(&self.occupancy) {
            *sum += occ;
        }
        self.truth_steps += 1;
    }

    /// `psi(x) = sensed_sum / k_x` (0 for unsampled buckets) and
    /// `phi(x) = truth_sum / truth_steps`.
    pub fn snapshot(&self) -> Result<Snapshot> {
        if self.truth_steps == 0 {
            return Err(Error::NoSteps);
        }
        let psi = self
            .sensed_sum
            .iter()
            .zip(&self.sensed_samples)
            .map(|(&s, &k)| if k > 0 { s as f64 / k as f64 } else { 0.0 })
            .collect();
        let steps = self.truth_steps as f64;
        let phi = self.truth_sum.iter().map(|&t| t as f64 / steps).collect();
        Ok(Snapshot {
            psi: DensityVector::new(psi)?,
            phi: DensityVector::new(phi)?,
            samples: self.sensed_samples.clone(),
        })
    }
}

impl Snapshot {
    /// Writes `bucket_id,x,y,psi,phi,k_x` rows.
    pub fn write_csv<W: Write>(&self, buckets: &BucketMap, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bucket_id", "x", "y", "psi", "phi", "k_x"])?;
        for b in 0..self.psi.len() {
            let (x, y) = buckets.center(b);
            w.write_record([
                b.to_string(),
                x.to_string(),
                y.to_string(),
                self.psi[b].to_string(),
                self.phi[b].to_string(),
                self.samples[b].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads the `phi` column of a snapshot CSV.
pub fn read_phi_csv<R: std::io::Read>(input: R) -> Result<DensityVector> {
    let mut rdr = csv::Reader::from_reader(input);
    let col = rdr
        .headers()?
        .iter()
        .position(|h| h == "phi")
        .ok_or_else(|| Error::parse(1, "missing `phi` column"))?;
    let mut phi = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let v: f64 = row
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::parse(line, "invalid phi value"))?;
        phi.push(v);
    }
    DensityVector::new(phi)
}
