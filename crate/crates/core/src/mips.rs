//! Maximum inner product search over unit-norm trajectory embeddings.
//!
//! Two variants share one result contract (score descending, id ascending on
//! ties): an exact scan and an inverted-file index that clusters the
//! embeddings with spherical k-means and scans only the lists whose centroids
//! best match the query.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::TrajectoryBank;
use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::types::{dot, Embedding, Trajectory};

pub const INDEX_VERSION: u32 = 1;

/// Tolerance on the unit norm of stored and query embeddings.
const UNIT_TOL: f64 = 1e-6;
/// Quantizer training points per list.
const TRAIN_POINTS_PER_LIST: usize = 100;
const QUANTIZER_ITERS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexVariant {
    Exact,
    Ivf { n_lists: usize, n_probe: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
struct InvertedLists {
    centroids: Vec<f64>,
    /// Positions into the embedding table, grouped by list.
    members: Vec<Vec<u32>>,
    n_probe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MipsIndex {
    dim: usize,
    embeddings: Vec<f64>,
    ids: Vec<u64>,
    ivf: Option<InvertedLists>,
}

fn by_score_then_id(a: &SearchHit, b: &SearchHit) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

impl MipsIndex {
    /// Embeds every bank trajectory and indexes the result.
    pub fn build(
        bank: &TrajectoryBank,
        params: &ModelParams,
        variant: IndexVariant,
        seed: u64,
    ) -> Result<Self> {
        let trajectories: Vec<&Trajectory> = bank.entries().iter().map(|e| &e.trajectory).collect();
        let embeddings = params.encode_trajectories(&trajectories)?;
        let ids = bank.entries().iter().map(|e| e.id).collect();
        Self::from_embeddings(ids, &embeddings, variant, seed)
    }

    pub fn from_embeddings(
        ids: Vec<u64>,
        embeddings: &[Embedding],
        variant: IndexVariant,
        seed: u64,
    ) -> Result<Self> {
        let n = embeddings.len();
        if n == 0 {
            return Err(Error::Argument("cannot index an empty set".into()));
        }
        if ids.len() != n {
            return Err(Error::Length {
                expected: n,
                actual: ids.len(),
            });
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Argument("index ids must be unique".into()));
        }
        let dim = embeddings[0].dim();
        let mut flat = Vec::with_capacity(n * dim);
        for e in embeddings {
            if e.dim() != dim {
                return Err(Error::Shape(format!(
                    "embedding dims {dim} and {}",
                    e.dim()
                )));
            }
            if (dot(e.values(), e.values()).sqrt() - 1.0).abs() > UNIT_TOL {
                return Err(Error::Argument("index embeddings must be unit-norm".into()));
            }
            flat.extend_from_slice(e.values());
        }
        let ivf = match variant {
            IndexVariant::Exact => None,
            IndexVariant::Ivf { n_lists, n_probe } => {
                if n_lists == 0 || n_lists > n {
                    return Err(Error::Argument(format!(
                        "n_lists must lie in 1..={n}, got {n_lists}"
                    )));
                }
                if n_probe == 0 {
                    return Err(Error::Argument("n_probe must be at least 1".into()));
                }
                Some(build_lists(&flat, dim, n_lists, n_probe.min(n_lists), seed))
            }
        };
        Ok(Self {
            dim,
            embeddings: flat,
            ids,
            ivf,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn variant(&self) -> IndexVariant {
        match &self.ivf {
            None => IndexVariant::Exact,
            Some(l) => IndexVariant::Ivf {
                n_lists: l.members.len(),
                n_probe: l.n_probe,
            },
        }
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Top `top_k` entries by inner product with `query`; fewer if the index is smaller.
    pub fn search(&self, query: &Embedding, top_k: usize) -> Result<Vec<SearchHit>> {
        let n_probe = self.ivf.as_ref().map_or(0, |l| l.n_probe);
        self.search_with_probe(query, top_k, n_probe)
    }

    /// Like [`MipsIndex::search`] with an explicit probe count (ignored by exact indexes).
    pub fn search_with_probe(
        &self,
        query: &Embedding,
        top_k: usize,
        n_probe: usize,
    ) -> Result<Vec<SearchHit>> {
        if top_k == 0 {
            return Err(Error::Argument("top_k must be at least 1".into()));
        }
        if query.dim() != self.dim {
            return Err(Error::Shape(format!(
                "query has dim {}, index has {}",
                query.dim(),
                self.dim
            )));
        }
        if (dot(query.values(), query.values()).sqrt() - 1.0).abs() > UNIT_TOL {
            return Err(Error::Argument("query must be unit-norm".into()));
        }
        let q = query.values();
        let hit = |pos: usize| SearchHit {
            id: self.ids[pos],
            score: dot(q, &self.embeddings[pos * self.dim..(pos + 1) * self.dim]),
        };
        let mut hits: Vec<SearchHit> = match &self.ivf {
            None => (0..self.len()).map(hit).collect(),
            Some(lists) => {
                let mut order: Vec<(f64, usize)> = lists
                    .centroids
                    .chunks_exact(self.dim)
                    .enumerate()
                    .map(|(l, c)| (dot(q, c), l))
                    .collect();
                order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                order
                    .iter()
                    .take(n_probe.clamp(1, lists.members.len()))
                    .flat_map(|&(_, l)| lists.members[l].iter().map(|&p| hit(p as usize)))
                    .collect()
            }
        };
        if hits.len() > top_k {
            hits.select_nth_unstable_by(top_k - 1, by_score_then_id);
            hits.truncate(top_k);
        }
        hits.sort_by(by_score_then_id);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let (variant, n_lists, n_probe) = match &self.ivf {
            None => ("exact", None, None),
            Some(l) => ("ivf", Some(l.members.len()), Some(l.n_probe)),
        };
        let header = IndexHeader {
            n: self.len(),
            d: self.dim,
            variant: variant.into(),
            n_lists,
            n_probe,
            version: INDEX_VERSION,
        };
        let io = |e| Error::io(path, e);
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer(&mut w, &header).map_err(|e| io(std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(io)?;
        let mut put = |bytes: &[u8]| w.write_all(bytes);
        for v in &self.embeddings {
            put(&v.to_le_bytes()).map_err(io)?;
        }
        for id in &self.ids {
            put(&id.to_le_bytes()).map_err(io)?;
        }
        if let Some(lists) = &self.ivf {
            for v in &lists.centroids {
                put(&v.to_le_bytes()).map_err(io)?;
            }
            let mut offset = 0u64;
            put(&offset.to_le_bytes()).map_err(io)?;
            for m in &lists.members {
                offset += m.len() as u64;
                put(&offset.to_le_bytes()).map_err(io)?;
            }
            for &p in lists.members.iter().flatten() {
                put(&u64::from(p).to_le_bytes()).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: IndexHeader = serde_json::from_slice(&line)
            .map_err(|e| Error::parse(path, 1, format!("bad index header: {e}")))?;
        if header.version != INDEX_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported index version {}", header.version),
            ));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let mut words = bytes
            .chunks_exact(8)
            .map(|c| <[u8; 8]>::try_from(c).expect("8-byte chunk"));
        let truncated = || Error::parse(path, 2, "index payload is truncated");
        let take_f64 = |n: usize, words: &mut dyn Iterator<Item = [u8; 8]>| -> Result<Vec<f64>> {
            let v: Vec<f64> = words.take(n).map(f64::from_le_bytes).collect();
            if v.len() == n {
                Ok(v)
            } else {
                Err(truncated())
            }
        };
        let (n, d) = (header.n, header.d);
        let embeddings = take_f64(n * d, &mut words)?;
        let ids: Vec<u64> = words.by_ref().take(n).map(u64::from_le_bytes).collect();
        if ids.len() != n {
            return Err(truncated());
        }
        let ivf = match (header.variant.as_str(), header.n_lists, header.n_probe) {
            ("exact", None, None) => None,
            ("ivf", Some(n_lists), Some(n_probe)) => {
                let centroids = take_f64(n_lists * d, &mut words)?;
                let offsets: Vec<u64> = words
                    .by_ref()
                    .take(n_lists + 1)
                    .map(u64::from_le_bytes)
                    .collect();
                let flat: Vec<u64> = words.by_ref().take(n).map(u64::from_le_bytes).collect();
                if offsets.len() != n_lists + 1
                    || flat.len() != n
                    || offsets.last() != Some(&(n as u64))
                {
                    return Err(truncated());
                }
                let members = offsets
                    .windows(2)
                    .map(|w| {
                        flat[w[0] as usize..w[1] as usize]
                            .iter()
                            .map(|&p| p as u32)
                            .collect()
                    })
                    .collect();
                Some(InvertedLists {
                    centroids,
                    members,
                    n_probe,
                })
            }
            _ => {
                return Err(Error::parse(
                    path,
                    1,
                    format!("unknown index variant {:?}", header.variant),
                ))
            }
        };
        if words.next().is_some() || bytes.len() % 8 != 0 {
            return Err(Error::parse(path, 2, "trailing bytes after index payload"));
        }
        Ok(Self {
            dim: d,
            embeddings,
            ids,
            ivf,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexHeader {
    n: usize,
    d: usize,
    variant: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_lists: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_probe: Option<usize>,
    version: u32,
}

fn nearest_centroid(x: &[f64], centroids: &[f64], dim: usize) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (l, c) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(x, c);
        if s > best.0 {
            best = (s, l);
        }
    }
    best.1
}

/// Spherical k-means on a seeded subsample, then assignment of every point.
fn build_lists(
    data: &[f64],
    dim: usize,
    n_lists: usize,
    n_probe: usize,
    seed: u64,
) -> InvertedLists {
    let n = data.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_train = n.min(TRAIN_POINTS_PER_LIST * n_lists);
    let mut train: Vec<usize> = sample(&mut rng, n, n_train).into_vec();
    train.sort_unstable();
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids: Vec<f64> = sample(&mut rng, n_train, n_lists)
        .into_iter()
        .flat_map(|p| row(train[p]).to_vec())
        .collect();

    let mut assign = vec![usize::MAX; n_train];
    for _ in 0..QUANTIZER_ITERS {
        let next: Vec<usize> = train
            .par_iter()
            .map(|&i| nearest_centroid(row(i), &centroids, dim))
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        let mut sums = vec![0.0; n_lists * dim];
        let mut counts = vec![0usize; n_lists];
        for (&i, &l) in train.iter().zip(&assign) {
            counts[l] += 1;
            sums[l * dim..(l + 1) * dim]
                .iter_mut()
                .zip(row(i))
                .for_each(|(s, x)| *s += x);
        }
        for l in 0..n_lists {
            let s = &sums[l * dim..(l + 1) * dim];
            let norm = dot(s, s).sqrt();
            if counts[l] > 0 && norm > 0.0 {
                centroids[l * dim..(l + 1) * dim]
                    .iter_mut()
                    .zip(s)
                    .for_each(|(c, x)| *c = x / norm);
            }
        }
    }

    let all: Vec<usize> = (0..n)
        .into_par_iter()
        .map(|i| nearest_centroid(row(i), &centroids, dim))
        .collect();
    let mut members = vec![Vec::new(); n_lists];
    for (i, l) in all.into_iter().enumerate() {
        members[l].push(i as u32);
    }
    InvertedLists {
        centroids,
        members,
        n_probe,
    }
}
