//! Uniform voxel hash grid for radius and nearest-neighbor queries.

use std::collections::HashMap;

type Key = (i32, i32, i32);

pub struct VoxelIndex {
    cell: f64,
    points: Vec<[f64; 3]>,
    /// cell -> range into `order`
    cells: HashMap<Key, (u32, u32)>,
    order: Vec<u32>,
}

impl VoxelIndex {
    /// Builds an index over `points` with cubic cells of edge `cell` meters.
    pub fn new<'a, I>(points: I, cell: f64) -> Self
    where
        I: IntoIterator<Item = &'a [f32; 3]>,
    {
        assert!(cell > 0.0, "cell size must be positive");
        let points: Vec<[f64; 3]> = points
            .into_iter()
            .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
            .collect();
        let mut keyed: Vec<(Key, u32)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (key(p, cell), i as u32))
            .collect();
        keyed.sort_unstable();
        let mut cells = HashMap::new();
        let mut start = 0;
        while start < keyed.len() {
            let k = keyed[start].0;
            let mut end = start + 1;
            while end < keyed.len() && keyed[end].0 == k {
                end += 1;
            }
            cells.insert(k, (start as u32, end as u32));
            start = end;
        }
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        VoxelIndex {
            cell,
            points,
            cells,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bucket(&self, k: &Key) -> &[u32] {
        match self.cells.get(k) {
            Some(&(s, e)) => &self.order[s as usize..e as usize],
            None => &[],
        }
    }

    /// True if any indexed point lies within `radius` (inclusive) of `p`.
    pub fn any_within(&self, p: &[f64; 3], radius: f64) -> bool {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i32;
        let c = key(p, self.cell);
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    for &i in self.bucket(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                        if dist2(&self.points[i as usize], p) <= r2 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    /// Nearest indexed point to `p` as `(index, distance)`.
    pub fn nearest(&self, p: &[f64; 3]) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let c = key(p, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let mut ring = 0i32;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        for &i in self.bucket(&(c.0 + dx, c.1 + dy, c.2 + dz)) {
                            let d2 = dist2(&self.points[i as usize], p);
                            if best.is_none_or(|(_, b)| d2 < b) {
                                best = Some((i as usize, d2));
                            }
                        }
                    }
                }
            }
            // every unvisited cell is at least `ring * cell` away
            if let Some((_, b)) = best {
                if (ring as f64 * self.cell).powi(2) >= b {
                    break;
                }
            }
            ring += 1;
            if ring > 1 && self.cells.len() < (2 * ring as usize + 1).pow(3) {
                // the search box is larger than the occupied set; finish by scan
                return self.nearest_scan(p);
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt()))
    }

    fn nearest_scan(&self, p: &[f64; 3]) -> Option<(usize, f64)> {
        self.points
            .iter()
            .enumerate()
            .map(|(i, q)| (i, dist2(q, p)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, d2)| (i, d2.sqrt()))
    }
}

fn key(p: &[f64; 3], cell: f64) -> Key {
    (
        (p[0] / cell).floor() as i32,
        (p[1] / cell).floor() as i32,
        (p[2] / cell).floor() as i32,
    )
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

pub fn to_f64(p: &[f32; 3]) -> [f64; 3] {
    [p[0] as f64, p[1] as f64, p[2] as f64]
}
