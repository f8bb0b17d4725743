//! The trajectory bank and the auxiliary distribution `h(t)` it induces.
//!
//! Training trajectories are clustered; `h` samples a cluster uniformly and then
//! a member of that cluster uniformly, so a trajectory's probability is
//! `1 / (K * |cluster|)`. Each training trajectory is stored once and that
//! weight is carried by [`TrajectoryBank::h_density`].

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{read_jsonl, write_jsonl};
use crate::error::{Error, Result};
use crate::kmeans::{kmeans_full, kmeans_minibatch};
use crate::types::{Example, Trajectory};

pub const BANK_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    MinibatchKmeans,
    FullKmeans,
    /// Single cluster: `h` is uniform over the bank.
    None,
}

impl FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minibatch_kmeans" | "minibatch" => Ok(ClusterMethod::MinibatchKmeans),
            "full_kmeans" | "full" => Ok(ClusterMethod::FullKmeans),
            "none" => Ok(ClusterMethod::None),
            _ => Err(Error::Argument(format!("unknown clustering method {s:?}"))),
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClusterMethod::MinibatchKmeans => "minibatch_kmeans",
            ClusterMethod::FullKmeans => "full_kmeans",
            ClusterMethod::None => "none",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterOptions {
    pub max_iters: usize,
    pub batch_size: usize,
    pub n_batches: usize,
}

impl Default for ClusterOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            batch_size: 256,
            n_batches: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankHeader {
    #[serde(rename = "M")]
    pub m: usize,
    pub dt: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub n: usize,
    pub version: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankEntry {
    pub id: u64,
    pub cluster: usize,
    #[serde(rename = "traj")]
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBank {
    header: BankHeader,
    entries: Vec<BankEntry>,
    members: Vec<Vec<usize>>,
    position: HashMap<u64, usize>,
}

impl TrajectoryBank {
    /// Validates and indexes a set of clustered entries.
    pub fn new(dt: f64, k: usize, entries: Vec<BankEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Argument("trajectory bank is empty".into()))?;
        let m = first.trajectory.len();
        let mut members = vec![Vec::new(); k];
        let mut position = HashMap::with_capacity(entries.len());
        for (pos, e) in entries.iter().enumerate() {
            if e.trajectory.len() != m {
                return Err(Error::Length {
                    expected: m,
                    actual: e.trajectory.len(),
                });
            }
            if e.cluster >= k {
                return Err(Error::Argument(format!(
                    "entry {} has cluster {} >= K = {k}",
                    e.id, e.cluster
                )));
            }
            if position.insert(e.id, pos).is_some() {
                return Err(Error::Argument(format!("duplicate bank id {}", e.id)));
            }
            members[e.cluster].push(pos);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::Argument(format!("cluster {c} is empty")));
        }
        let header = BankHeader {
            m,
            dt,
            k,
            n: entries.len(),
            version: BANK_VERSION,
        };
        Ok(Self {
            header,
            entries,
            members,
            position,
        })
    }

    pub fn header(&self) -> &BankHeader {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k(&self) -> usize {
        self.header.k
    }

    pub fn m(&self) -> usize {
        self.header.m
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<&BankEntry> {
        self.position.get(&id).map(|&p| &self.entries[p])
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Draws from `h`: a uniform cluster, then a uniform member of it.
    pub fn sample_h<R: Rng + ?Sized>(&self, rng: &mut R) -> &BankEntry {
        let cluster = &self.members[rng.random_range(0..self.members.len())];
        &self.entries[cluster[rng.random_range(0..cluster.len())]]
    }

    /// Probability that `h` emits the entry with this id.
    pub fn h_density(&self, id: u64) -> Option<f64> {
        self.get(id)
            .map(|e| 1.0 / (self.header.k as f64 * self.members[e.cluster].len() as f64))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.header, &self.entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, entries): (BankHeader, Vec<BankEntry>) = read_jsonl(path)?;
        if header.version != BANK_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported bank version {}", header.version),
            ));
        }
        if header.n != entries.len() {
            return Err(Error::parse(
                path,
                1,
                format!(
                    "header declares {} entries, file has {}",
                    header.n,
                    entries.len()
                ),
            ));
        }
        if let Some(i) = entries.iter().position(|e| e.trajectory.len() != header.m) {
            return Err(Error::parse(
                path,
                i + 2,
                format!("trajectory length differs from M = {}", header.m),
            ));
        }
        let bank = Self::new(header.dt, header.k, entries)
            .map_err(|e| Error::parse(path, 1, e.to_string()))?;
        Ok(bank)
    }
}

/// Clusters the ground-truth trajectories of `examples` into a bank with ids `0..n`.
pub fn build_bank(
    examples: &[Example],
    dt: f64,
    k: usize,
    method: ClusterMethod,
    seed: u64,
    options: ClusterOptions,
) -> Result<TrajectoryBank> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Argument("cannot build a bank from an empty dataset".into()))?;
    let dim = first.ground_truth.as_flat().len();
    let data: Vec<f64> = examples
        .iter()
        .flat_map(|e| e.ground_truth.as_flat().iter().copied())
        .collect();
    if data.len() != dim * examples.len() {
        return Err(Error::Shape(
            "ground-truth trajectories differ in length".into(),
        ));
    }
    let (k, assignments) = match method {
        ClusterMethod::None => (1, vec![0; examples.len()]),
        ClusterMethod::FullKmeans => (
            k,
            kmeans_full(&data, dim, k, options.max_iters, seed)?.assignments,
        ),
        ClusterMethod::MinibatchKmeans => (
            k,
            kmeans_minibatch(&data, dim, k, options.batch_size, options.n_batches, seed)?
                .assignments,
        ),
    };
    let entries = examples
        .iter()
        .zip(assignments)
        .enumerate()
        .map(|(i, (e, cluster))| BankEntry {
            id: i as u64,
            cluster,
            trajectory: e.ground_truth.clone(),
        })
        .collect();
    TrajectoryBank::new(dt, k, entries)
}
