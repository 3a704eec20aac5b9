//! Labelled node-classification datasets: the chain generator, a planted
//! partition generator for audits, and plain-text ingestion.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{build_graph, Graph};
use crate::cgl::project_rows;
use crate::error::{input, Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{self, stream_rng};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: Vec<Option<usize>>,
    pub train_mask: Vec<usize>,
    pub test_mask: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(
        graph: Graph,
        features: FeatureMatrix,
        labels: Vec<Option<usize>>,
        train_mask: Vec<usize>,
        test_mask: Vec<usize>,
    ) -> Result<Self> {
        let n = graph.num_nodes();
        if features.rows() != n {
            return input(format!(
                "{} feature rows for {n} nodes",
                features.rows()
            ));
        }
        if labels.len() != n {
            return input(format!("{} label slots for {n} nodes", labels.len()));
        }
        let mut seen = vec![false; n];
        for &v in &train_mask {
            if v >= n || labels[v].is_none() {
                return input(format!("train node {v} is out of range or unlabeled"));
            }
            seen[v] = true;
        }
        for &v in &test_mask {
            if v >= n || labels[v].is_none() {
                return input(format!("test node {v} is out of range or unlabeled"));
            }
            if seen[v] {
                return input(format!("node {v} is in both train and test masks"));
            }
        }
        Ok(Self {
            graph,
            features,
            labels,
            train_mask,
            test_mask,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().flatten().max().map_or(0, |&c| c + 1)
    }

    /// The dataset restricted to `nodes` (relabelled by position); masks
    /// keep only the selected nodes.
    pub fn induced(&self, nodes: &[usize]) -> LabeledDataset {
        let mut position = vec![usize::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            position[v] = i;
        }
        let remap = |mask: &[usize]| -> Vec<usize> {
            let mut out: Vec<usize> = mask
                .iter()
                .filter(|&&v| position[v] != usize::MAX)
                .map(|&v| position[v])
                .collect();
            out.sort_unstable();
            out
        };
        LabeledDataset {
            graph: self.graph.induced(nodes),
            features: self.features.select_rows(nodes),
            labels: nodes.iter().map(|&v| self.labels[v]).collect(),
            train_mask: remap(&self.train_mask),
            test_mask: remap(&self.test_mask),
        }
    }

    /// Same nodes, features and masks on a different graph.
    pub fn with_graph(&self, graph: Graph) -> Result<LabeledDataset> {
        if graph.num_nodes() != self.num_nodes() {
            return input("replacement graph has a different node count");
        }
        Ok(LabeledDataset {
            graph,
            ..self.clone()
        })
    }

    /// Writes `edges.txt`, `features.csv`, `labels.csv` and `split.csv`
    /// into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut edges = String::new();
        for &(u, v) in self.graph.edges() {
            edges.push_str(&format!("{u} {v}\n"));
        }
        fs::write(dir.join("edges.txt"), edges)?;
        fs::write(dir.join("features.csv"), self.features.to_csv())?;
        let mut labels = String::new();
        for (v, c) in self.labels.iter().enumerate() {
            if let Some(c) = c {
                labels.push_str(&format!("{v},{c}\n"));
            }
        }
        fs::write(dir.join("labels.csv"), labels)?;
        let mut split: Vec<(usize, &str)> = self
            .train_mask
            .iter()
            .map(|&v| (v, "train"))
            .chain(self.test_mask.iter().map(|&v| (v, "test")))
            .collect();
        split.sort_unstable();
        let split: String = split.iter().map(|(v, s)| format!("{v},{s}\n")).collect();
        fs::write(dir.join("split.csv"), split)?;
        Ok(())
    }
}

/// Chain dataset sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChainPreset {
    ChainS,
    ChainM,
    ChainL,
    ChainX,
}

impl ChainPreset {
    /// `(num_chains, chain_len, num_classes, feat_dim)`.
    pub fn shape(self) -> (usize, usize, usize, usize) {
        match self {
            ChainPreset::ChainS => (6, 8, 2, 5),
            ChainPreset::ChainM => (6, 10, 2, 5),
            ChainPreset::ChainL => (6, 15, 2, 5),
            ChainPreset::ChainX => (10, 15, 2, 5),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "chain-s" => Ok(ChainPreset::ChainS),
            "chain-m" => Ok(ChainPreset::ChainM),
            "chain-l" => Ok(ChainPreset::ChainL),
            "chain-x" => Ok(ChainPreset::ChainX),
            other => input(format!(
                "unknown chain preset {other:?} (expected chain-s, chain-m, chain-l or chain-x)"
            )),
        }
    }

    pub fn generate(self, seed: u64) -> Result<LabeledDataset> {
        let (c, l, k, d) = self.shape();
        gen_chain_dataset(c, l, k, d, seed)
    }
}

/// Chains of `chain_len` nodes; chain `c` has class `c % num_classes`.
///
/// Only the first node of each chain carries information: a one-hot class
/// indicator in its first `num_classes` coordinates. Every other feature row
/// is zero, so classifying a node requires information to travel along its
/// chain. Edges are stored undirected.
pub fn gen_chain_dataset(
    num_chains: usize,
    chain_len: usize,
    num_classes: usize,
    feat_dim: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_chains == 0 || num_classes == 0 || chain_len == 0 {
        return input("chain dataset needs at least one chain, class and node per chain");
    }
    if num_chains % num_classes != 0 {
        return input(format!(
            "{num_chains} chains cannot be divided evenly into {num_classes} classes"
        ));
    }
    if feat_dim < num_classes {
        return input(format!(
            "feature dimension {feat_dim} is smaller than the class count {num_classes}"
        ));
    }
    let n = num_chains * chain_len;
    let mut edges = Vec::with_capacity(num_chains * (chain_len - 1));
    let mut features = FeatureMatrix::zeros(n, feat_dim);
    let mut labels = Vec::with_capacity(n);
    for chain in 0..num_chains {
        let class = chain % num_classes;
        let first = chain * chain_len;
        features.row_mut(first)[class] = 1.0;
        for i in 0..chain_len {
            labels.push(Some(class));
            if i > 0 {
                edges.push((first + i - 1, first + i));
            }
        }
    }
    let graph = build_graph(n, &edges)?;
    let (train, test) = default_split(&labels, seed);
    LabeledDataset::new(graph, features, labels, train, test)
}

/// The split rule used for generated and unsplit datasets: one sixth of the
/// labelled nodes for training and four times as many for testing, sampled
/// per class.
pub fn default_split(labels: &[Option<usize>], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let labeled = labels.iter().flatten().count();
    let n_train = ((labeled as f64 / 6.0).round() as usize).clamp(1.min(labeled), labeled);
    let n_test = (4 * n_train).min(labeled - n_train);
    stratified_split(labels, n_train, n_test, seed)
}

/// Draws `n_train` then `n_test` labelled nodes, allocating each quota
/// across classes in proportion to class size (largest remainder).
pub(crate) fn stratified_split(
    labels: &[Option<usize>],
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = stream_rng(rng::derive_seed(seed, rng::TAG_SPLIT, 0), 0);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (v, c) in labels.iter().enumerate() {
        if let Some(c) = c {
            by_class.entry(*c).or_default().push(v);
        }
    }
    for nodes in by_class.values_mut() {
        nodes.shuffle(&mut rng);
    }
    let mut pools: Vec<Vec<usize>> = by_class.into_values().collect();
    let train = take_proportional(&mut pools, n_train);
    let test = take_proportional(&mut pools, n_test);
    (train, test)
}

fn take_proportional(pools: &mut [Vec<usize>], count: usize) -> Vec<usize> {
    let total: usize = pools.iter().map(Vec::len).sum();
    let count = count.min(total);
    if count == 0 {
        return Vec::new();
    }
    let exact: Vec<f64> = pools
        .iter()
        .map(|p| count as f64 * p.len() as f64 / total as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..pools.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = count - quota.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if quota[i] < pools[i].len() {
            quota[i] += 1;
            missing -= 1;
        }
    }
    let mut taken = Vec::with_capacity(count);
    for (pool, q) in pools.iter_mut().zip(quota) {
        let keep = pool.len() - q;
        taken.extend(pool.drain(keep..));
    }
    taken.sort_unstable();
    taken
}

/// Parameters of the planted-partition generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Edge probability inside a class.
    pub p_in: f64,
    /// Edge probability across classes.
    pub p_out: f64,
    pub feat_dim: usize,
    /// Std of the Gaussian noise added to the one-hot class signal.
    pub feature_noise: f64,
    /// Fraction of nodes placed in the train mask; the rest are test nodes.
    pub train_fraction: f64,
}

/// Random homophilous graph: node `v` has class `v % num_classes`, features
/// are a noisy one-hot class indicator scaled to unit norm.
pub fn gen_planted_partition(params: &PlantedPartition, seed: u64) -> Result<LabeledDataset> {
    let PlantedPartition {
        num_nodes: n,
        num_classes: k,
        p_in,
        p_out,
        feat_dim,
        feature_noise,
        train_fraction,
    } = *params;
    if n == 0 || k == 0 || feat_dim < k {
        return input("planted partition needs nodes, classes and feat_dim >= classes");
    }
    for (name, p) in [("p_in", p_in), ("p_out", p_out), ("train_fraction", train_fraction)] {
        if !(0.0..=1.0).contains(&p) {
            return input(format!("{name} must lie in [0, 1], got {p}"));
        }
    }
    let mut rng = stream_rng(rng::derive_seed(seed, rng::TAG_DATASET, 0), 0);
    let labels: Vec<Option<usize>> = (0..n).map(|v| Some(v % k)).collect();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if u % k == v % k { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut features = FeatureMatrix::zeros(n, feat_dim);
    for v in 0..n {
        let row = features.row_mut(v);
        for x in row.iter_mut() {
            *x = feature_noise * rng::standard_normal(&mut rng);
        }
        row[v % k] += 1.0;
        let norm = crate::features::l2_norm(row);
        if norm > 0.0 {
            row.iter_mut().for_each(|x| *x /= norm);
        }
    }
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let (train, test) = stratified_split(&labels, n_train, n - n_train, seed);
    LabeledDataset::new(build_graph(n, &edges)?, features, labels, train, test)
}

/// Loads a dataset from an edge list, a feature CSV and a label CSV.
/// Masks follow [`default_split`] with seed 0.
pub fn load_dataset(edge_path: &Path, feature_path: &Path, label_path: &Path) -> Result<LabeledDataset> {
    load_dataset_with_split(edge_path, feature_path, label_path, None)
}

/// As [`load_dataset`], with masks read from a `node_id,train|test` file
/// when `split_path` is given.
pub fn load_dataset_with_split(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    split_path: Option<&Path>,
) -> Result<LabeledDataset> {
    let features = parse_features(feature_path)?;
    let n = features.rows();
    if n == 0 {
        return input(format!("{} has no feature rows", feature_path.display()));
    }
    let edges = parse_edges(edge_path)?;
    let graph = build_graph(n, &edges)?;
    let labels = parse_labels(label_path, n)?;
    let (train, test) = match split_path {
        Some(path) => parse_split(path, n)?,
        None => default_split(&labels, 0),
    };
    let features = project_rows(&features, 1.0);
    LabeledDataset::new(graph, features, labels, train, test)
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn content_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect())
}

fn parse_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    content_lines(path)?
        .into_iter()
        .map(|(no, line)| {
            let ids: Vec<&str> = line.split_whitespace().collect();
            if ids.len() != 2 {
                return Err(parse_error(path, no, format!("expected \"u v\", got {line:?}")));
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| parse_error(path, no, format!("invalid node id {t:?}")))
            };
            Ok((parse(ids[0])?, parse(ids[1])?))
        })
        .collect()
}

fn parse_features(path: &Path) -> Result<FeatureMatrix> {
    let mut rows = Vec::new();
    for (no, line) in content_lines(path)? {
        let row = line
            .split(',')
            .map(|t| {
                let t = t.trim();
                t.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_error(path, no, format!("invalid float {t:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first().map(Vec::len) {
            if row.len() != first {
                return input(format!(
                    "{}:{no}: row has {} values, expected {first}",
                    path.display(),
                    row.len()
                ));
            }
        }
        rows.push(row);
    }
    FeatureMatrix::from_rows(&rows)
}

fn parse_pair<'a>(path: &Path, no: usize, line: &'a str) -> Result<(usize, &'a str)> {
    let (node, rest) = line
        .split_once(',')
        .ok_or_else(|| parse_error(path, no, format!("expected two comma-separated fields, got {line:?}")))?;
    let node = node
        .trim()
        .parse::<usize>()
        .map_err(|_| parse_error(path, no, format!("invalid node id {node:?}")))?;
    Ok((node, rest.trim()))
}

fn parse_labels(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let mut labels = vec![None; n];
    for (no, line) in content_lines(path)? {
        let (node, class) = parse_pair(path, no, &line)?;
        let class = class
            .parse::<usize>()
            .map_err(|_| parse_error(path, no, format!("invalid class id {class:?}")))?;
        if node >= n {
            return input(format!(
                "{}:{no}: node {node} outside 0..{n}",
                path.display()
            ));
        }
        labels[node] = Some(class);
    }
    Ok(labels)
}

fn parse_split(path: &Path, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (no, line) in content_lines(path)? {
        let (node, tag) = parse_pair(path, no, &line)?;
        if node >= n {
            return input(format!(
                "{}:{no}: node {node} outside 0..{n}",
                path.display()
            ));
        }
        match tag {
            "train" => train.push(node),
            "test" => test.push(node),
            other => return Err(parse_error(path, no, format!("unknown split {other:?}"))),
        }
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
