//! Per-face feature fields, cluster trees and mask-driven part selection.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshops::Adjacency;
use crate::model::{Mesh, Part};
use crate::render::tensor::TensorBlock;
use crate::render::GBuffer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureSource {
    Builtin,
    Imported(String),
}

/// F x D per-face features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub dim: usize,
    pub data: Vec<f64>,
    pub source: FeatureSource,
}

impl FeatureField {
    pub fn new(dim: usize, data: Vec<f64>, source: FeatureSource) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not form rows of {dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite feature value".into()));
        }
        Ok(Self { dim, data, source })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, f: usize) -> &[f64] {
        &self.data[f * self.dim..(f + 1) * self.dim]
    }

    pub fn check_against(&self, mesh: &Mesh) -> Result<()> {
        if self.len() != mesh.face_count() {
            return Err(Error::ShapeMismatch(format!(
                "feature field has {} rows, mesh has {} faces",
                self.len(),
                mesh.face_count()
            )));
        }
        Ok(())
    }

    /// Reads an `[F, D]` tensor block; `meta.source` names the producer.
    pub fn from_tensor(block: &TensorBlock) -> Result<Self> {
        if block.shape.len() != 2 {
            return Err(Error::ShapeMismatch(format!("feature block must be [F, D], got {:?}", block.shape)));
        }
        let source = block
            .meta
            .get("source")
            .and_then(|v| v.as_str())
            .unwrap_or("imported")
            .to_string();
        Self::new(
            block.shape[1],
            block.data.iter().map(|&v| v as f64).collect(),
            FeatureSource::Imported(source),
        )
    }

    pub fn to_tensor(&self) -> TensorBlock {
        let source = match &self.source {
            FeatureSource::Builtin => "builtin".to_string(),
            FeatureSource::Imported(s) => s.clone(),
        };
        TensorBlock::new(vec![self.len(), self.dim], self.data.iter().map(|&v| v as f32).collect())
            .expect("shape matches")
            .with_meta("source", serde_json::Value::String(source))
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Built-in descriptor: normal, centroid in bbox-normalized coordinates and
/// mean dihedral angle to neighbours over pi, each block weighted.
pub fn builtin_features(mesh: &Mesh, weights: [f64; 3]) -> FeatureField {
    let adj = Adjacency::new(mesh);
    let (lo, hi) = mesh.bbox();
    let center = (lo + hi) * 0.5;
    let diag = (hi - lo).norm().max(1e-300);
    let normals: Vec<_> = (0..mesh.face_count()).map(|f| mesh.face_normal(f)).collect();
    let mut data = Vec::with_capacity(mesh.face_count() * 7);
    for f in 0..mesh.face_count() {
        let n = normals[f];
        let c = (mesh.face_centroid(f) - center) / diag;
        let nb = &adj.neighbors[f];
        let dihedral = if nb.is_empty() {
            0.0
        } else {
            nb.iter()
                .map(|&g| n.dot(&normals[g as usize]).clamp(-1.0, 1.0).acos())
                .sum::<f64>()
                / (nb.len() as f64 * std::f64::consts::PI)
        };
        data.extend([n.x * weights[0], n.y * weights[0], n.z * weights[0]]);
        data.extend([c.x * weights[1], c.y * weights[1], c.z * weights[1]]);
        data.push(dihedral * weights[2]);
    }
    FeatureField::new(7, data, FeatureSource::Builtin).expect("finite features")
}

/// Stand-in for learned part features: one orthonormal embedding per label.
/// With more labels than dimensions the embeddings are only unit length.
pub fn label_features(labels: &[u32], dim: usize, seed: u64) -> FeatureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for _ in 0..=max_label {
        loop {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if basis.len() < dim {
                for b in &basis {
                    let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-6 {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
                break;
            }
        }
    }
    let data = labels.iter().flat_map(|&l| basis[l as usize].clone()).collect();
    FeatureField::new(dim, data, FeatureSource::Imported("synthetic".into())).expect("finite")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentConfig {
    pub n_leaves: usize,
    /// Region-growing acceptance distance to the running region mean.
    pub grow_threshold: f64,
    pub feature_weights: [f64; 3],
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            n_leaves: 200,
            grow_threshold: 0.1,
            feature_weights: [1.0, 0.5, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub children: Option<[usize; 2]>,
    pub parent: Option<usize>,
    /// Feature-space centroid distance at which the children merged.
    pub cost: f64,
    /// Joins disconnected components, so its face-set is not edge-connected.
    pub is_virtual: bool,
    pub face_count: usize,
    #[serde(skip)]
    pub centroid: Vec<f64>,
    /// Range of this node's leaves in `ClusterTree::leaf_order`.
    #[serde(skip)]
    leaf_range: (usize, usize),
}

/// Binary merge tree. Leaves come first, ordered by their smallest face id;
/// internal nodes follow in merge order, so ids are stable for a given input.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
    pub n_leaves: usize,
    leaf_faces: Vec<Vec<u32>>,
    leaf_order: Vec<usize>,
    /// Face -> leaf id.
    pub leaf_of: Vec<usize>,
}

impl ClusterTree {
    pub fn faces(&self, node: usize) -> Vec<u32> {
        let (a, b) = self.nodes[node].leaf_range;
        let mut out: Vec<u32> = self.leaf_order[a..b]
            .iter()
            .flat_map(|&l| self.leaf_faces[l].iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn part(&self, node: usize) -> Result<Part> {
        self.node(node)?;
        Part::from_ids(self.faces(node))
    }

    pub fn node(&self, id: usize) -> Result<&TreeNode> {
        self.nodes
            .get(id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown node id {id}")))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        id < self.n_leaves
    }
}

struct Cluster {
    weight: f64,
    sum: Vec<f64>,
    min_face: u32,
    neighbors: BTreeSet<usize>,
    alive: bool,
}

impl Cluster {
    fn centroid(&self) -> Vec<f64> {
        self.sum.iter().map(|s| s / self.weight).collect()
    }
}

#[derive(PartialEq)]
struct Candidate {
    cost: f64,
    key: (u32, u32),
    a: usize,
    b: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // reversed: BinaryHeap pops the cheapest, ties by lowest smallest-face-id
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then_with(|| o.key.cmp(&self.key))
            .then_with(|| o.a.cmp(&self.a))
            .then_with(|| o.b.cmp(&self.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

struct Merge {
    a: usize,
    b: usize,
    cost: f64,
    is_virtual: bool,
}

/// Adjacency-constrained agglomeration; merged clusters are appended.
struct Agglomerator {
    clusters: Vec<Cluster>,
    heap: BinaryHeap<Candidate>,
    alive: usize,
}

impl Agglomerator {
    fn new(clusters: Vec<Cluster>) -> Self {
        let alive = clusters.len();
        let mut s = Self {
            clusters,
            heap: BinaryHeap::new(),
            alive,
        };
        for a in 0..s.clusters.len() {
            let nb: Vec<usize> = s.clusters[a].neighbors.iter().copied().filter(|&b| b > a).collect();
            for b in nb {
                s.push(a, b);
            }
        }
        s
    }

    fn push(&mut self, a: usize, b: usize) {
        let (ca, cb) = (&self.clusters[a], &self.clusters[b]);
        let cost = dist(&ca.centroid(), &cb.centroid());
        let key = (ca.min_face.min(cb.min_face), ca.min_face.max(cb.min_face));
        self.heap.push(Candidate { cost, key, a, b });
    }

    fn join(&mut self, a: usize, b: usize) -> usize {
        let id = self.clusters.len();
        let (ca, cb) = (&self.clusters[a], &self.clusters[b]);
        let mut neighbors: BTreeSet<usize> = ca.neighbors.union(&cb.neighbors).copied().collect();
        neighbors.remove(&a);
        neighbors.remove(&b);
        let merged = Cluster {
            weight: ca.weight + cb.weight,
            sum: ca.sum.iter().zip(&cb.sum).map(|(x, y)| x + y).collect(),
            min_face: ca.min_face.min(cb.min_face),
            neighbors: neighbors.clone(),
            alive: true,
        };
        self.clusters[a].alive = false;
        self.clusters[b].alive = false;
        for &n in &neighbors {
            let nb = &mut self.clusters[n].neighbors;
            nb.remove(&a);
            nb.remove(&b);
            nb.insert(id);
        }
        self.clusters.push(merged);
        self.alive -= 1;
        for n in neighbors {
            self.push(n, id);
        }
        id
    }

    /// Next adjacent merge, or a virtual one once adjacency is exhausted.
    fn step(&mut self) -> Option<Merge> {
        if self.alive <= 1 {
            return None;
        }
        while let Some(c) = self.heap.pop() {
            if self.clusters[c.a].alive && self.clusters[c.b].alive {
                self.join(c.a, c.b);
                return Some(Merge {
                    a: c.a,
                    b: c.b,
                    cost: c.cost,
                    is_virtual: false,
                });
            }
        }
        let live: Vec<usize> = (0..self.clusters.len()).filter(|&i| self.clusters[i].alive).collect();
        let mut best: Option<Candidate> = None;
        for (i, &a) in live.iter().enumerate() {
            for &b in &live[i + 1..] {
                let (ca, cb) = (&self.clusters[a], &self.clusters[b]);
                let c = Candidate {
                    cost: dist(&ca.centroid(), &cb.centroid()),
                    key: (ca.min_face.min(cb.min_face), ca.min_face.max(cb.min_face)),
                    a,
                    b,
                };
                if best.as_ref().map_or(true, |bc| c > *bc) {
                    best = Some(c);
                }
            }
        }
        let c = best?;
        self.join(c.a, c.b);
        Some(Merge {
            a: c.a,
            b: c.b,
            cost: c.cost,
            is_virtual: true,
        })
    }
}

/// Greedy region growing: each region accepts edge-neighbours whose feature
/// lies within `threshold` of the region's running area-weighted mean.
fn grow_regions(mesh: &Mesh, adj: &Adjacency, field: &FeatureField, threshold: f64) -> Vec<Vec<u32>> {
    let n = mesh.face_count();
    let mut region = vec![usize::MAX; n];
    let mut out = Vec::new();
    for seed in 0..n {
        if region[seed] != usize::MAX {
            continue;
        }
        let rid = out.len();
        let mut faces = vec![seed as u32];
        region[seed] = rid;
        let mut w = mesh.face_area(seed).max(1e-300);
        let mut sum: Vec<f64> = field.row(seed).iter().map(|v| v * w).collect();
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(f) = queue.pop_front() {
            for &g in &adj.neighbors[f] {
                let g = g as usize;
                if region[g] != usize::MAX {
                    continue;
                }
                let mean: Vec<f64> = sum.iter().map(|s| s / w).collect();
                if dist(field.row(g), &mean) <= threshold {
                    region[g] = rid;
                    let a = mesh.face_area(g).max(1e-300);
                    w += a;
                    sum.iter_mut().zip(field.row(g)).for_each(|(s, v)| *s += v * a);
                    faces.push(g as u32);
                    queue.push_back(g);
                }
            }
        }
        faces.sort_unstable();
        out.push(faces);
    }
    out
}

fn make_clusters(mesh: &Mesh, adj: &Adjacency, field: &FeatureField, groups: &[Vec<u32>]) -> Vec<Cluster> {
    let mut group_of = vec![0usize; mesh.face_count()];
    for (g, faces) in groups.iter().enumerate() {
        for &f in faces {
            group_of[f as usize] = g;
        }
    }
    groups
        .iter()
        .enumerate()
        .map(|(g, faces)| {
            let mut weight = 0.0;
            let mut sum = vec![0.0; field.dim];
            let mut neighbors = BTreeSet::new();
            for &f in faces {
                let a = mesh.face_area(f as usize).max(1e-300);
                weight += a;
                sum.iter_mut().zip(field.row(f as usize)).for_each(|(s, v)| *s += v * a);
                for &h in &adj.neighbors[f as usize] {
                    let gh = group_of[h as usize];
                    if gh != g {
                        neighbors.insert(gh);
                    }
                }
            }
            Cluster {
                weight,
                sum,
                min_face: faces[0],
                neighbors,
                alive: true,
            }
        })
        .collect()
}

pub fn build_cluster_tree(mesh: &Mesh, field: &FeatureField, cfg: &SegmentConfig) -> Result<ClusterTree> {
    if cfg.n_leaves < 2 {
        return Err(Error::InvalidInput("n_leaves must be at least 2".into()));
    }
    field.check_against(mesh)?;
    if mesh.face_count() == 0 {
        return Err(Error::EmptyGeometry);
    }
    let adj = Adjacency::new(mesh);
    let mut groups = grow_regions(mesh, &adj, field, cfg.grow_threshold);

    // unrecorded merges down to the leaf budget, never across components
    if groups.len() > cfg.n_leaves {
        let mut ag = Agglomerator::new(make_clusters(mesh, &adj, field, &groups));
        let mut members: Vec<Vec<u32>> = groups.clone();
        while ag.alive > cfg.n_leaves {
            if ag.heap.is_empty() {
                break;
            }
            match ag.step() {
                Some(m) if !m.is_virtual => {
                    let mut f = std::mem::take(&mut members[m.a]);
                    f.append(&mut std::mem::take(&mut members[m.b]));
                    members.push(f);
                }
                _ => break,
            }
        }
        groups = (0..ag.clusters.len())
            .filter(|&i| ag.clusters[i].alive)
            .map(|i| {
                let mut f = std::mem::take(&mut members[i]);
                f.sort_unstable();
                f
            })
            .collect();
    }
    groups.sort_by_key(|g| g[0]);
    let n_leaves = groups.len();

    let clusters = make_clusters(mesh, &adj, field, &groups);
    let mut nodes: Vec<TreeNode> = clusters
        .iter()
        .enumerate()
        .map(|(i, c)| TreeNode {
            id: i,
            children: None,
            parent: None,
            cost: 0.0,
            is_virtual: false,
            face_count: groups[i].len(),
            centroid: c.centroid(),
            leaf_range: (0, 0),
        })
        .collect();
    let mut ag = Agglomerator::new(clusters);
    while let Some(m) = ag.step() {
        let id = nodes.len();
        nodes[m.a].parent = Some(id);
        nodes[m.b].parent = Some(id);
        nodes.push(TreeNode {
            id,
            children: Some([m.a, m.b]),
            parent: None,
            cost: m.cost,
            is_virtual: m.is_virtual,
            face_count: nodes[m.a].face_count + nodes[m.b].face_count,
            centroid: ag.clusters[id].centroid(),
            leaf_range: (0, 0),
        });
    }
    let root = nodes.len() - 1;

    // depth-first leaf order so every node covers a contiguous range
    let mut leaf_order = Vec::with_capacity(n_leaves);
    let mut stack = vec![(root, false)];
    while let Some((id, done)) = stack.pop() {
        match (nodes[id].children, done) {
            (None, _) => {
                nodes[id].leaf_range = (leaf_order.len(), leaf_order.len() + 1);
                leaf_order.push(id);
            }
            (Some([a, b]), false) => {
                nodes[id].leaf_range.0 = leaf_order.len();
                stack.push((id, true));
                stack.push((b, false));
                stack.push((a, false));
            }
            (Some(_), true) => nodes[id].leaf_range.1 = leaf_order.len(),
        }
    }
    let mut leaf_of = vec![0usize; mesh.face_count()];
    for (l, faces) in groups.iter().enumerate() {
        for &f in faces {
            leaf_of[f as usize] = l;
        }
    }
    Ok(ClusterTree {
        nodes,
        root,
        n_leaves,
        leaf_faces: groups,
        leaf_order,
        leaf_of,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub part: Part,
    pub iou: f64,
    pub node_id: usize,
}

fn mask_pixels(mask: &[f32], gb: &GBuffer, threshold: f32) -> Result<Vec<bool>> {
    if mask.len() != gb.width * gb.height {
        return Err(Error::ShapeMismatch(format!(
            "mask has {} values, G-buffer {}x{}",
            mask.len(),
            gb.width,
            gb.height
        )));
    }
    let m: Vec<bool> = mask
        .iter()
        .zip(&gb.face_id)
        .map(|(&p, &f)| p >= threshold && f != crate::render::BACKGROUND)
        .collect();
    if !m.iter().any(|&x| x) {
        return Err(Error::EmptyMask);
    }
    Ok(m)
}

fn no_part(mut scored: Vec<(usize, f64)>) -> Error {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(3);
    Error::NoPartFound {
        best_iou: scored.first().map_or(0.0, |c| c.1),
        candidates: scored,
    }
}

/// Tree node whose visible pixels best match the thresholded mask.
pub fn select_part(tree: &ClusterTree, mask: &[f32], gb: &GBuffer, threshold: f32) -> Result<Selection> {
    let m = mask_pixels(mask, gb, threshold)?;
    let mut pos_of_leaf = vec![0usize; tree.n_leaves];
    for (pos, &l) in tree.leaf_order.iter().enumerate() {
        pos_of_leaf[l] = pos;
    }
    let mut px = vec![0u64; tree.n_leaves + 1];
    let mut hit = vec![0u64; tree.n_leaves + 1];
    let mut total_m = 0u64;
    for (i, &f) in gb.face_id.iter().enumerate() {
        total_m += m[i] as u64;
        if f == crate::render::BACKGROUND || f as usize >= tree.leaf_of.len() {
            continue;
        }
        let pos = pos_of_leaf[tree.leaf_of[f as usize]];
        px[pos + 1] += 1;
        hit[pos + 1] += m[i] as u64;
    }
    for i in 1..px.len() {
        px[i] += px[i - 1];
        hit[i] += hit[i - 1];
    }
    let scored: Vec<(usize, f64)> = tree
        .nodes
        .iter()
        .map(|n| {
            let (a, b) = n.leaf_range;
            let p = px[b] - px[a];
            let i = hit[b] - hit[a];
            let u = total_m + p - i;
            (n.id, if u == 0 { 0.0 } else { i as f64 / u as f64 })
        })
        .collect();
    let best = scored
        .iter()
        .copied()
        .max_by(|a, b| {
            a.1.total_cmp(&b.1)
                .then(tree.nodes[b.0].face_count.cmp(&tree.nodes[a.0].face_count))
                .then(b.0.cmp(&a.0))
        })
        .unwrap();
    if best.1 < 0.05 {
        return Err(no_part(scored));
    }
    Ok(Selection {
        part: tree.part(best.0)?,
        iou: best.1,
        node_id: best.0,
    })
}

/// Image-space IoU of one face set against the thresholded mask.
pub fn mask_iou(faces: &[u32], mask: &[f32], gb: &GBuffer, threshold: f32) -> Result<f64> {
    let m = mask_pixels(mask, gb, threshold)?;
    let mut inside = vec![false; gb.face_id.iter().filter(|&&f| f != u32::MAX).map(|&f| f as usize + 1).max().unwrap_or(0)];
    for &f in faces {
        if (f as usize) < inside.len() {
            inside[f as usize] = true;
        }
    }
    let (mut i, mut u) = (0u64, 0u64);
    for (k, &f) in gb.face_id.iter().enumerate() {
        let p = f != u32::MAX && inside[f as usize];
        i += (p && m[k]) as u64;
        u += (p || m[k]) as u64;
    }
    Ok(if u == 0 { 0.0 } else { i as f64 / u as f64 })
}

/// Click-to-adjust: union with `add` nodes, then difference with `remove` nodes.
pub fn adjust_part(part: &Part, add: &[usize], remove: &[usize], tree: &ClusterTree) -> Result<Part> {
    let mut faces: BTreeSet<u32> = part.face_ids().iter().copied().collect();
    for &n in add {
        tree.node(n)?;
        faces.extend(tree.faces(n));
    }
    for &n in remove {
        tree.node(n)?;
        for f in tree.faces(n) {
            faces.remove(&f);
        }
    }
    if faces.is_empty() {
        return Err(Error::EmptyPart);
    }
    Part::from_ids(faces.into_iter().collect())
}

/// Flat k-means segmentation used as the ablation baseline.
#[derive(Debug, Clone)]
pub struct KMeansSegmentation {
    pub labels: Vec<usize>,
    pub clusters: Vec<Vec<u32>>,
}

pub fn kmeans_segmentation(field: &FeatureField, k: usize, seed: u64, iterations: usize) -> Result<KMeansSegmentation> {
    use rand::Rng;
    let n = field.len();
    if k == 0 || n == 0 {
        return Err(Error::InvalidInput("k-means needs k > 0 and a non-empty field".into()));
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // k-means++ seeding
    let mut centers: Vec<Vec<f64>> = vec![field.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|f| dist(field.row(f), &centers[0]).powi(2)).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (f, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = f;
                    break;
                }
                r -= d;
            }
            pick
        };
        centers.push(field.row(next).to_vec());
        for f in 0..n {
            d2[f] = d2[f].min(dist(field.row(f), centers.last().unwrap()).powi(2));
        }
    }
    let mut labels = vec![0usize; n];
    for _ in 0..iterations.max(1) {
        let mut changed = false;
        for f in 0..n {
            let row = field.row(f);
            let best = (0..k)
                .min_by(|&a, &b| dist(row, &centers[a]).total_cmp(&dist(row, &centers[b])))
                .unwrap();
            changed |= labels[f] != best;
            labels[f] = best;
        }
        let mut sums = vec![vec![0.0; field.dim]; k];
        let mut counts = vec![0usize; k];
        for f in 0..n {
            counts[labels[f]] += 1;
            sums[labels[f]].iter_mut().zip(field.row(f)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        if !changed {
            break;
        }
    }
    let mut clusters = vec![Vec::new(); k];
    for (f, &l) in labels.iter().enumerate() {
        clusters[l].push(f as u32);
    }
    Ok(KMeansSegmentation { labels, clusters })
}

impl KMeansSegmentation {
    /// Same selection rule as the tree, over the flat clusters.
    pub fn select(&self, mask: &[f32], gb: &GBuffer, threshold: f32) -> Result<Selection> {
        let mut scored = Vec::new();
        for (c, faces) in self.clusters.iter().enumerate() {
            if !faces.is_empty() {
                scored.push((c, mask_iou(faces, mask, gb, threshold)?));
            }
        }
        let best = scored
            .iter()
            .copied()
            .max_by(|a, b| {
                a.1.total_cmp(&b.1)
                    .then(self.clusters[b.0].len().cmp(&self.clusters[a.0].len()))
                    .then(b.0.cmp(&a.0))
            })
            .ok_or(Error::EmptyGeometry)?;
        if best.1 < 0.05 {
            return Err(no_part(scored));
        }
        Ok(Selection {
            part: Part::from_ids(self.clusters[best.0].clone())?,
            iou: best.1,
            node_id: best.0,
        })
    }
}
