use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::lab::{lab_dist, LabImage};
use super::segmentation::{neighbors4, Segmentation};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlicParams {
    /// Compactness `m`; the per-step spatial cost is `0.5·m/S`.
    pub compactness: f64,
    pub max_iters: usize,
    /// Stop once fewer than this fraction of pixels change label.
    pub min_change: f64,
}

impl Default for SlicParams {
    fn default() -> Self {
        SlicParams {
            compactness: 10.0,
            max_iters: 10,
            min_change: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Seed {
    y: f64,
    x: f64,
    lab: [f64; 3],
}

#[derive(PartialEq)]
struct Item(f64, usize);

impl Eq for Item {}

impl Ord for Item {
    fn cmp(&self, o: &Self) -> Ordering {
        o.0.total_cmp(&self.0).then_with(|| o.1.cmp(&self.1))
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Geodesic SLIC with the default compactness and stopping rule.
pub fn slic_geodesic(lab: &LabImage, k: usize, max_iters: usize) -> Result<Segmentation> {
    slic_geodesic_with(
        lab,
        k,
        &SlicParams {
            max_iters,
            ..SlicParams::default()
        },
    )
}

pub fn slic_geodesic_with(lab: &LabImage, k: usize, params: &SlicParams) -> Result<Segmentation> {
    let (w, h) = (lab.width, lab.height);
    let n = w * h;
    if n == 0 || lab.data.len() != n {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("K = {k} must be in 1..={n}")));
    }
    if !(params.compactness > 0.0) || !params.compactness.is_finite() {
        return Err(Error::InvalidConfig("compactness must be positive".into()));
    }
    if k == 1 {
        return Segmentation::from_labels(w, h, vec![0; n]);
    }
    let s = (n as f64 / k as f64).sqrt();
    let eps_s = 0.5 * params.compactness / s;
    let mut seeds = initial_seeds(lab, k);
    let mut labels = vec![u32::MAX; n];

    let iters = params.max_iters.max(1);
    for it in 0..iters {
        let next = assign(lab, &seeds, s, eps_s);
        let changed = next.iter().zip(&labels).filter(|(a, b)| a != b).count();
        labels = next;
        if it + 1 == iters || (it > 0 && (changed as f64) < params.min_change * n as f64) {
            break;
        }
        seeds = update_seeds(lab, &labels, &seeds);
    }
    finalize(w, h, labels)
}

fn initial_seeds(lab: &LabImage, k: usize) -> Vec<Seed> {
    let (w, h) = (lab.width as f64, lab.height as f64);
    let nx = ((k as f64 * w / h).sqrt().ceil() as usize).clamp(1, lab.width);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, lab.height);
    let mut seeds = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        for ix in 0..nx {
            let y = (iy as f64 + 0.5) * h / ny as f64 - 0.5;
            let x = (ix as f64 + 0.5) * w / nx as f64 - 0.5;
            let src = sources(lab.width, lab.height, y, x);
            let mut m = [0.0; 3];
            for &p in &src {
                let c = lab.at(p);
                (0..3).for_each(|d| m[d] += c[d] / src.len() as f64);
            }
            seeds.push(Seed { y, x, lab: m });
        }
    }
    seeds
}

/// The up-to-four pixels surrounding a real-valued position.
fn sources(w: usize, h: usize, y: f64, x: f64) -> Vec<usize> {
    let ys = [y.floor(), y.ceil()].map(|v| v.clamp(0.0, (h - 1) as f64) as usize);
    let xs = [x.floor(), x.ceil()].map(|v| v.clamp(0.0, (w - 1) as f64) as usize);
    let mut v: Vec<usize> = ys.iter().flat_map(|&py| xs.iter().map(move |&px| py * w + px)).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Windowed multi-source Dijkstra from every seed, reduced to the
/// minimum-distance seed per pixel (ties to the lower seed index).
fn assign(lab: &LabImage, seeds: &[Seed], s: f64, eps_s: f64) -> Vec<u32> {
    let (w, h) = (lab.width, lab.height);
    let reached = par::map_slice(seeds, |seed| dijkstra(lab, seed, s, eps_s));
    let mut best = vec![f64::INFINITY; w * h];
    let mut labels = vec![u32::MAX; w * h];
    for (si, list) in reached.iter().enumerate() {
        for &(p, d) in list {
            if d < best[p] {
                best[p] = d;
                labels[p] = si as u32;
            }
        }
    }
    labels
}

fn dijkstra(lab: &LabImage, seed: &Seed, s: f64, eps_s: f64) -> Vec<(usize, f64)> {
    let (w, h) = (lab.width, lab.height);
    let y0 = (seed.y - s).ceil().max(0.0) as usize;
    let x0 = (seed.x - s).ceil().max(0.0) as usize;
    let y1 = ((seed.y + s).floor() as isize).clamp(0, h as isize - 1) as usize;
    let x1 = ((seed.x + s).floor() as isize).clamp(0, w as isize - 1) as usize;
    let (ww, wh) = (x1 + 1 - x0.min(x1 + 1), y1 + 1 - y0.min(y1 + 1));
    let local = |p: usize| {
        let (py, px) = (p / w, p % w);
        (py >= y0 && py <= y1 && px >= x0 && px <= x1).then(|| (py - y0) * ww + (px - x0))
    };
    let mut dist = vec![f64::INFINITY; ww * wh];
    let mut done = vec![false; ww * wh];
    let mut heap = BinaryHeap::new();
    for p in sources(w, h, seed.y, seed.x) {
        let Some(lp) = local(p) else { continue };
        let (py, px) = ((p / w) as f64, (p % w) as f64);
        let d0 = eps_s * ((py - seed.y).abs() + (px - seed.x).abs()) + lab_dist(lab.at(p), seed.lab);
        if d0 < dist[lp] {
            dist[lp] = d0;
            heap.push(Item(d0, p));
        }
    }
    let mut out = Vec::new();
    while let Some(Item(d, p)) = heap.pop() {
        let lp = local(p).expect("only window pixels are queued");
        if done[lp] {
            continue;
        }
        done[lp] = true;
        out.push((p, d));
        let cp = lab.at(p);
        for q in neighbors4(p, w, h).into_iter().flatten() {
            let Some(lq) = local(q) else { continue };
            if done[lq] {
                continue;
            }
            let nd = d + lab_dist(cp, lab.at(q)) + eps_s;
            if nd < dist[lq] {
                dist[lq] = nd;
                heap.push(Item(nd, q));
            }
        }
    }
    out
}

fn update_seeds(lab: &LabImage, labels: &[u32], seeds: &[Seed]) -> Vec<Seed> {
    let w = lab.width;
    let k = seeds.len();
    let mut sum = vec![[0.0f64; 5]; k];
    let mut count = vec![0usize; k];
    for (p, &l) in labels.iter().enumerate() {
        if l == u32::MAX {
            continue;
        }
        let c = lab.at(p);
        let acc = &mut sum[l as usize];
        acc[0] += (p / w) as f64;
        acc[1] += (p % w) as f64;
        (0..3).for_each(|d| acc[2 + d] += c[d]);
        count[l as usize] += 1;
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (p, &l) in labels.iter().enumerate() {
        if l != u32::MAX {
            members[l as usize].push(p);
        }
    }
    (0..k)
        .map(|i| {
            if count[i] == 0 {
                return seeds[i];
            }
            let n = count[i] as f64;
            let (mut y, mut x) = (sum[i][0] / n, sum[i][1] / n);
            let centre_pixel = (y.round() as usize) * w + x.round() as usize;
            if labels[centre_pixel] != i as u32 {
                // Non-convex cluster: move onto the closest member.
                let &p = members[i]
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = ((a / w) as f64 - y).powi(2) + ((a % w) as f64 - x).powi(2);
                        let db = ((b / w) as f64 - y).powi(2) + ((b % w) as f64 - x).powi(2);
                        da.total_cmp(&db)
                    })
                    .expect("nonempty");
                y = (p / w) as f64;
                x = (p % w) as f64;
            }
            Seed {
                y,
                x,
                lab: [sum[i][2] / n, sum[i][3] / n, sum[i][4] / n],
            }
        })
        .collect()
}

/// Keeps the largest component of every label, merges the remaining pieces
/// and unreached pixels into their largest neighbouring segment, and
/// relabels compactly in raster order.
fn finalize(w: usize, h: usize, labels: Vec<u32>) -> Result<Segmentation> {
    let n = w * h;
    // Connected components of equal raw label (unreached pixels group too).
    let mut comp = vec![usize::MAX; n];
    let mut comp_label = Vec::new();
    let mut comp_size = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_label.len();
        let l = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            for q in neighbors4(p, w, h).into_iter().flatten() {
                if comp[q] == usize::MAX && labels[q] == l {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        comp_label.push(l);
        comp_size.push(size);
    }
    let ncomp = comp_label.len();
    // A label's largest component survives; ties go to the earlier one.
    let mut keeper: std::collections::HashMap<u32, usize> = Default::default();
    for c in 0..ncomp {
        if comp_label[c] == u32::MAX {
            continue;
        }
        let e = keeper.entry(comp_label[c]).or_insert(c);
        if comp_size[c] > comp_size[*e] {
            *e = c;
        }
    }
    // Union-find over components: orphans point at the segment they join.
    let mut parent: Vec<usize> = (0..ncomp).collect();
    let mut alive: Vec<bool> = (0..ncomp)
        .map(|c| comp_label[c] != u32::MAX && keeper[&comp_label[c]] == c)
        .collect();
    let mut root_size: Vec<usize> = comp_size.clone();
    let mut comp_adj: Vec<Vec<usize>> = vec![Vec::new(); ncomp];
    for p in 0..n {
        let x = p % w;
        if x + 1 < w && comp[p] != comp[p + 1] {
            comp_adj[comp[p]].push(comp[p + 1]);
            comp_adj[comp[p + 1]].push(comp[p]);
        }
        if p + w < n && comp[p] != comp[p + w] {
            comp_adj[comp[p]].push(comp[p + w]);
            comp_adj[comp[p + w]].push(comp[p]);
        }
    }
    for a in &mut comp_adj {
        a.sort_unstable();
        a.dedup();
    }
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }
    loop {
        let mut progress = false;
        let mut pending = false;
        for c in 0..ncomp {
            if alive[c] || parent[c] != c {
                continue;
            }
            pending = true;
            let mut best: Option<usize> = None;
            for &d in &comp_adj[c] {
                let r = find(&mut parent, d);
                if r == c || !alive[r] {
                    continue;
                }
                if best.is_none_or(|b| root_size[r] > root_size[b] || (root_size[r] == root_size[b] && r < b)) {
                    best = Some(r);
                }
            }
            if let Some(r) = best {
                parent[c] = r;
                root_size[r] += root_size[c];
                progress = true;
            }
        }
        if !pending {
            break;
        }
        if !progress {
            // Nothing alive anywhere nearby: promote the first orphan.
            let c = (0..ncomp).find(|&c| !alive[c] && parent[c] == c).expect("pending orphan");
            alive[c] = true;
        }
    }
    let mut remap = vec![u32::MAX; ncomp];
    let mut next = 0u32;
    let mut out = vec![0u32; n];
    for p in 0..n {
        let r = find(&mut parent, comp[p]);
        if remap[r] == u32::MAX {
            remap[r] = next;
            next += 1;
        }
        out[p] = remap[r];
    }
    Segmentation::from_labels(w, h, out)
}
