//! Quadtree mesh of the unit square with 2:1 edge balance.
//!
//! Cells are identified by their dyadic key `(level, i, j)`; a cell of level
//! `l` covers `[i, i+1] x [j, j+1] / 2^l`. Vertices are keyed by integer
//! coordinates at the resolution of `max_level`, so geometric lookups are
//! exact.

use std::collections::{BTreeSet, HashMap};

use log::debug;
use thiserror::Error;

pub type CellId = usize;
pub type VertexId = usize;

/// Largest supported refinement level (keeps vertex keys within `u32`).
pub const MAX_SUPPORTED_LEVEL: u8 = 24;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("divisions per side must be a power of two and at least 2, got {0}")]
    BadDivisions(usize),
    #[error("invalid level window: min {min}, max {max}")]
    BadLevels { min: u8, max: u8 },
    #[error("crack segment x = {x0}, y in [{y_bot}, {y_top}] is malformed or touches no cell")]
    EmptyCrack { x0: f64, y_bot: f64, y_top: f64 },
}

/// Boundary parts of the unit square.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Boundary {
    /// y = 0
    Bottom,
    /// x = 1
    Right,
    /// y = 1
    Top,
    /// x = 0
    Left,
}

impl Boundary {
    pub const ALL: [Boundary; 4] = [Boundary::Bottom, Boundary::Right, Boundary::Top, Boundary::Left];

    /// Conventional label, Γ1..Γ4.
    pub fn label(self) -> &'static str {
        match self {
            Boundary::Bottom => "Γ1",
            Boundary::Right => "Γ2",
            Boundary::Top => "Γ3",
            Boundary::Left => "Γ4",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u8,
    pub i: u32,
    pub j: u32,
}

impl CellKey {
    pub fn new(level: u8, i: u32, j: u32) -> Self {
        CellKey { level, i, j }
    }

    pub fn size(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    pub fn origin(&self) -> [f64; 2] {
        let h = self.size();
        [self.i as f64 * h, self.j as f64 * h]
    }

    pub fn parent(&self) -> Option<CellKey> {
        (self.level > 0).then(|| CellKey::new(self.level - 1, self.i / 2, self.j / 2))
    }

    /// Children in counter-clockwise order starting at the lower-left one.
    pub fn children(&self) -> [CellKey; 4] {
        let (l, i, j) = (self.level + 1, 2 * self.i, 2 * self.j);
        [
            CellKey::new(l, i, j),
            CellKey::new(l, i + 1, j),
            CellKey::new(l, i + 1, j + 1),
            CellKey::new(l, i, j + 1),
        ]
    }

    pub fn ancestor_at(&self, level: u8) -> CellKey {
        debug_assert!(level <= self.level);
        let s = self.level - level;
        CellKey::new(level, self.i >> s, self.j >> s)
    }

    /// Same-level neighbour across `side`, if inside the domain.
    pub fn neighbor(&self, side: Boundary) -> Option<CellKey> {
        let n = 1u32 << self.level;
        let (i, j) = (self.i, self.j);
        match side {
            Boundary::Bottom => (j > 0).then(|| CellKey::new(self.level, i, j - 1)),
            Boundary::Top => (j + 1 < n).then(|| CellKey::new(self.level, i, j + 1)),
            Boundary::Left => (i > 0).then(|| CellKey::new(self.level, i - 1, j)),
            Boundary::Right => (i + 1 < n).then(|| CellKey::new(self.level, i + 1, j)),
        }
    }

    /// Children of `self` that touch the given side.
    fn children_on(&self, side: Boundary) -> [CellKey; 2] {
        let c = self.children();
        match side {
            Boundary::Bottom => [c[0], c[1]],
            Boundary::Right => [c[1], c[2]],
            Boundary::Top => [c[2], c[3]],
            Boundary::Left => [c[3], c[0]],
        }
    }

    fn corner_keys(&self, key_level: u8) -> [[u32; 2]; 4] {
        let s = 1u32 << (key_level - self.level);
        let (x0, y0) = (self.i * s, self.j * s);
        [[x0, y0], [x0 + s, y0], [x0 + s, y0 + s], [x0, y0 + s]]
    }
}

fn opposite(side: Boundary) -> Boundary {
    match side {
        Boundary::Bottom => Boundary::Top,
        Boundary::Top => Boundary::Bottom,
        Boundary::Left => Boundary::Right,
        Boundary::Right => Boundary::Left,
    }
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub key: CellKey,
    pub parent: Option<CellId>,
    pub children: Option<[CellId; 4]>,
    pub active: bool,
    /// Corner vertices, counter-clockwise from the lower-left corner.
    pub vertices: [VertexId; 4],
}

impl Cell {
    pub fn level(&self) -> u8 {
        self.key.level
    }

    pub fn size(&self) -> f64 {
        self.key.size()
    }
}

/// Provenance of a cell after [`QuadMesh::refine_and_coarsen`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CellOrigin {
    /// Unchanged old active cell.
    Same(CellId),
    /// Lies inside this old active cell.
    Refined(CellId),
    /// Replaces these four old active cells.
    Coarsened([CellId; 4]),
}

/// Old-to-new correspondence, indexed by the new active-cell ordinal.
#[derive(Clone, Debug, Default)]
pub struct CellCorrespondence {
    pub origin: Vec<CellOrigin>,
}

#[derive(Clone, Debug)]
pub struct QuadMesh {
    cells: Vec<Cell>,
    active: Vec<CellId>,
    active_ordinal: Vec<usize>,
    vertices: Vec<[f64; 2]>,
    vertex_keys: Vec<[u32; 2]>,
    vertex_lookup: HashMap<[u32; 2], VertexId>,
    cell_lookup: HashMap<CellKey, CellId>,
    hanging: Vec<(VertexId, [VertexId; 2])>,
    min_level: u8,
    max_level: u8,
}

const NOT_ACTIVE: usize = usize::MAX;

/// Uniform mesh with `divisions_per_side` cells per side that may later be
/// refined by `max_extra_levels` levels.
pub fn build_uniform(divisions_per_side: usize, max_extra_levels: u8) -> Result<QuadMesh, MeshError> {
    if divisions_per_side < 2 || !divisions_per_side.is_power_of_two() {
        return Err(MeshError::BadDivisions(divisions_per_side));
    }
    let level = divisions_per_side.trailing_zeros() as u8;
    let max_level = level.saturating_add(max_extra_levels);
    if max_level > MAX_SUPPORTED_LEVEL {
        return Err(MeshError::BadLevels { min: level, max: max_level });
    }
    let n = divisions_per_side as u32;
    let leaves: BTreeSet<CellKey> =
        (0..n).flat_map(|j| (0..n).map(move |i| CellKey::new(level, i, j))).collect();
    Ok(QuadMesh::from_leaves(level, max_level, &leaves))
}

impl QuadMesh {
    /// Builds the tree whose leaves are exactly `leaves`. The leaves must tile
    /// the unit square and have levels within `[min_level, max_level]`.
    pub fn from_leaves(min_level: u8, max_level: u8, leaves: &BTreeSet<CellKey>) -> QuadMesh {
        let mut all: BTreeSet<CellKey> = BTreeSet::new();
        for leaf in leaves {
            debug_assert!(leaf.level >= min_level && leaf.level <= max_level);
            for l in min_level..=leaf.level {
                all.insert(leaf.ancestor_at(l));
            }
        }

        // Pre-order traversal: roots row by row, children counter-clockwise.
        let n_roots = 1u32 << min_level;
        let mut cells: Vec<Cell> = Vec::with_capacity(all.len());
        let mut cell_lookup = HashMap::with_capacity(all.len());
        let mut stack: Vec<(CellKey, Option<CellId>)> = Vec::new();
        for j in 0..n_roots {
            for i in 0..n_roots {
                stack.push((CellKey::new(min_level, i, j), None));
                while let Some((key, parent)) = stack.pop() {
                    let id = cells.len();
                    cells.push(Cell { key, parent, children: None, active: false, vertices: [0; 4] });
                    cell_lookup.insert(key, id);
                    if let Some(p) = parent {
                        let slot = key.children_index();
                        let ch = cells[p].children.get_or_insert([usize::MAX; 4]);
                        ch[slot] = id;
                    }
                    if leaves.contains(&key) {
                        cells[id].active = true;
                    } else {
                        debug_assert!(all.contains(&key.children()[0]), "leaves do not tile the domain");
                        for c in key.children().iter().rev() {
                            stack.push((*c, Some(id)));
                        }
                    }
                }
            }
        }

        let active: Vec<CellId> = (0..cells.len()).filter(|&c| cells[c].active).collect();
        let mut active_ordinal = vec![NOT_ACTIVE; cells.len()];
        for (k, &c) in active.iter().enumerate() {
            active_ordinal[c] = k;
        }

        let mut vkeys: BTreeSet<(u32, u32)> = BTreeSet::new();
        for &c in &active {
            for [x, y] in cells[c].key.corner_keys(max_level) {
                vkeys.insert((y, x));
            }
        }
        let scale = 1.0 / (1u64 << max_level) as f64;
        let vertex_keys: Vec<[u32; 2]> = vkeys.iter().map(|&(y, x)| [x, y]).collect();
        let vertices: Vec<[f64; 2]> =
            vertex_keys.iter().map(|k| [k[0] as f64 * scale, k[1] as f64 * scale]).collect();
        let vertex_lookup: HashMap<[u32; 2], VertexId> =
            vertex_keys.iter().enumerate().map(|(v, k)| (*k, v)).collect();
        for cell in cells.iter_mut() {
            let ck = cell.key.corner_keys(max_level);
            for (a, k) in ck.iter().enumerate() {
                cell.vertices[a] = vertex_lookup[k];
            }
        }

        let mut hanging_set: BTreeSet<(VertexId, [VertexId; 2])> = BTreeSet::new();
        for &c in &active {
            let ck = cells[c].key.corner_keys(max_level);
            for e in 0..4 {
                let (a, b) = (ck[e], ck[(e + 1) % 4]);
                let (sx, sy) = (a[0] + b[0], a[1] + b[1]);
                if sx % 2 != 0 || sy % 2 != 0 {
                    continue;
                }
                if let Some(&m) = vertex_lookup.get(&[sx / 2, sy / 2]) {
                    let (va, vb) = (vertex_lookup[&a], vertex_lookup[&b]);
                    hanging_set.insert((m, [va.min(vb), va.max(vb)]));
                }
            }
        }

        QuadMesh {
            cells,
            active,
            active_ordinal,
            vertices,
            vertex_keys,
            vertex_lookup,
            cell_lookup,
            hanging: hanging_set.into_iter().collect(),
            min_level,
            max_level,
        }
    }

    pub fn min_level(&self) -> u8 {
        self.min_level
    }

    pub fn max_level(&self) -> u8 {
        self.max_level
    }

    /// Smallest admissible cell size, `2^-max_level`.
    pub fn h_min(&self) -> f64 {
        1.0 / (1u64 << self.max_level) as f64
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id]
    }

    /// Active cells in traversal order.
    pub fn active_cells(&self) -> &[CellId] {
        &self.active
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Position of an active cell in [`Self::active_cells`].
    pub fn active_ordinal(&self, id: CellId) -> Option<usize> {
        let k = self.active_ordinal[id];
        (k != NOT_ACTIVE).then_some(k)
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, v: VertexId) -> [f64; 2] {
        self.vertices[v]
    }

    pub fn find_cell(&self, key: &CellKey) -> Option<CellId> {
        self.cell_lookup.get(key).copied()
    }

    /// Vertex at the given point if it is a mesh vertex.
    pub fn find_vertex(&self, p: [f64; 2]) -> Option<VertexId> {
        let n = (1u64 << self.max_level) as f64;
        let (x, y) = (p[0] * n, p[1] * n);
        if x < 0.0 || y < 0.0 || x.fract() != 0.0 || y.fract() != 0.0 {
            return None;
        }
        self.vertex_lookup.get(&[x as u32, y as u32]).copied()
    }

    /// Vertices lying in the interior of an active cell's edge, with the two
    /// edge endpoints they are constrained to. Sorted by vertex id.
    pub fn hanging_nodes(&self) -> &[(VertexId, [VertexId; 2])] {
        &self.hanging
    }

    /// Boundary parts a vertex lies on.
    pub fn vertex_boundaries(&self, v: VertexId) -> Vec<Boundary> {
        let n = 1u32 << self.max_level;
        let [x, y] = self.vertex_keys[v];
        let mut out = Vec::new();
        if y == 0 {
            out.push(Boundary::Bottom);
        }
        if x == n {
            out.push(Boundary::Right);
        }
        if y == n {
            out.push(Boundary::Top);
        }
        if x == 0 {
            out.push(Boundary::Left);
        }
        out
    }

    pub fn on_boundary(&self, v: VertexId, b: Boundary) -> bool {
        let n = 1u32 << self.max_level;
        let [x, y] = self.vertex_keys[v];
        match b {
            Boundary::Bottom => y == 0,
            Boundary::Right => x == n,
            Boundary::Top => y == n,
            Boundary::Left => x == 0,
        }
    }

    /// Boundary tag of edge `e` (0 bottom, 1 right, 2 top, 3 left) of a cell.
    pub fn edge_boundary(&self, cell: CellId, e: usize) -> Option<Boundary> {
        let key = self.cells[cell].key;
        let side = [Boundary::Bottom, Boundary::Right, Boundary::Top, Boundary::Left][e];
        key.neighbor(side).is_none().then_some(side)
    }

    /// Active cell containing `p` (points on shared edges resolve to one of
    /// the adjacent cells).
    pub fn locate(&self, p: [f64; 2]) -> CellId {
        let n = 1u32 << self.min_level;
        let clampi = |t: f64| ((t * n as f64).floor().max(0.0) as u32).min(n - 1);
        let mut id = self.cell_lookup[&CellKey::new(self.min_level, clampi(p[0]), clampi(p[1]))];
        while let Some(ch) = self.cells[id].children {
            let [ox, oy] = self.cells[id].key.origin();
            let half = 0.5 * self.cells[id].key.size();
            let east = p[0] >= ox + half;
            let north = p[1] >= oy + half;
            id = ch[match (east, north) {
                (false, false) => 0,
                (true, false) => 1,
                (true, true) => 2,
                (false, true) => 3,
            }];
        }
        id
    }

    /// Bilinear interpolation weights of `p` in active cell `cell`.
    pub fn local_weights(&self, cell: CellId, p: [f64; 2]) -> [f64; 4] {
        let key = self.cells[cell].key;
        let [ox, oy] = key.origin();
        let h = key.size();
        let x = ((p[0] - ox) / h).clamp(0.0, 1.0);
        let y = ((p[1] - oy) / h).clamp(0.0, 1.0);
        [(1.0 - x) * (1.0 - y), x * (1.0 - y), x * y, (1.0 - x) * y]
    }

    /// Value of a continuous nodal field at `p`.
    pub fn evaluate(&self, field: &[f64], p: [f64; 2]) -> f64 {
        let c = self.locate(p);
        let w = self.local_weights(c, p);
        let vs = self.cells[c].vertices;
        (0..4).map(|a| w[a] * field[vs[a]]).sum()
    }

    /// Active cells whose closure meets the segment `{x0} x [y_bot, y_top]`,
    /// sorted by id.
    pub fn crack_line_cells(&self, x0: f64, y_top: f64, y_bot: f64) -> Result<Vec<CellId>, MeshError> {
        let err = MeshError::EmptyCrack { x0, y_bot, y_top };
        let ok = x0.is_finite()
            && y_top.is_finite()
            && y_bot.is_finite()
            && (0.0..=1.0).contains(&x0)
            && 0.0 <= y_bot
            && y_bot <= y_top
            && y_top <= 1.0;
        if !ok {
            return Err(err);
        }
        let out: Vec<CellId> = self
            .active
            .iter()
            .copied()
            .filter(|&c| {
                let key = self.cells[c].key;
                let [ox, oy] = key.origin();
                let h = key.size();
                ox <= x0 && x0 <= ox + h && oy <= y_top && oy + h >= y_bot
            })
            .collect();
        if out.is_empty() {
            return Err(err);
        }
        Ok(out)
    }

    /// Checks the 2:1 balance across every interior edge.
    pub fn is_balanced(&self) -> bool {
        let leaves: BTreeSet<CellKey> = self.active.iter().map(|&c| self.cells[c].key).collect();
        leaves.iter().all(|k| Boundary::ALL.iter().all(|&s| !needs_split_for(&leaves, k, s, self.min_level)))
    }

    /// Refines flagged cells (clipped at `max_level`), restores the 2:1
    /// balance and then coarsens sibling groups that are flagged in full and
    /// can merge without breaking the balance. Returns the new mesh together
    /// with the provenance of each new active cell.
    pub fn refine_and_coarsen(
        &self,
        refine: &BTreeSet<CellId>,
        coarsen: &BTreeSet<CellId>,
    ) -> (QuadMesh, CellCorrespondence) {
        let mut leaves: BTreeSet<CellKey> = self.active.iter().map(|&c| self.cells[c].key).collect();
        let mut queue: Vec<CellKey> = Vec::new();
        let mut dropped = 0usize;
        for &c in refine {
            let cell = &self.cells[c];
            if !cell.active || cell.key.level >= self.max_level {
                dropped += 1;
                continue;
            }
            split(&mut leaves, cell.key, &mut queue);
        }
        if dropped > 0 {
            debug!("{dropped} refinement flags dropped at the level cap or on inactive cells");
        }
        balance(&mut leaves, queue, self.min_level);

        // Coarsening: complete, flagged sibling groups only.
        let mut groups: BTreeSet<CellKey> = BTreeSet::new();
        for &c in coarsen {
            let cell = &self.cells[c];
            if !cell.active || refine.contains(&c) || cell.key.level <= self.min_level {
                continue;
            }
            groups.insert(cell.key.parent().expect("level above min has a parent"));
        }
        for parent in groups {
            let kids = parent.children();
            let all_flagged = kids.iter().all(|k| {
                leaves.contains(k)
                    && self.cell_lookup.get(k).is_some_and(|&id| coarsen.contains(&id) && !refine.contains(&id))
            });
            if !all_flagged {
                continue;
            }
            let safe = Boundary::ALL.iter().all(|&side| match parent.neighbor(side) {
                None => true,
                Some(nb) => nb
                    .children_on(opposite(side))
                    .iter()
                    .all(|c| covered_by_leaf(&leaves, c, self.min_level).is_some()),
            });
            if !safe {
                continue;
            }
            for k in kids {
                leaves.remove(&k);
            }
            leaves.insert(parent);
        }

        let mesh = QuadMesh::from_leaves(self.min_level, self.max_level, &leaves);
        let origin = mesh
            .active
            .iter()
            .map(|&c| {
                let key = mesh.cells[c].key;
                match self.cell_lookup.get(&key) {
                    Some(&old) if self.cells[old].active => CellOrigin::Same(old),
                    Some(&old) => {
                        let ch = self.cells[old].children.expect("inactive cell has children");
                        CellOrigin::Coarsened(ch)
                    }
                    None => {
                        let k = covered_by_leaf_in(self, &key).expect("new cell lies inside an old leaf");
                        CellOrigin::Refined(k)
                    }
                }
            })
            .collect();
        (mesh, CellCorrespondence { origin })
    }
}

impl CellKey {
    fn children_index(&self) -> usize {
        match (self.i % 2, self.j % 2) {
            (0, 0) => 0,
            (1, 0) => 1,
            (1, 1) => 2,
            _ => 3,
        }
    }
}

/// Leaf covering `key` (the key itself or one of its ancestors).
fn covered_by_leaf(leaves: &BTreeSet<CellKey>, key: &CellKey, min_level: u8) -> Option<CellKey> {
    (min_level..=key.level).rev().map(|l| key.ancestor_at(l)).find(|a| leaves.contains(a))
}

fn covered_by_leaf_in(mesh: &QuadMesh, key: &CellKey) -> Option<CellId> {
    (mesh.min_level..=key.level)
        .rev()
        .filter_map(|l| mesh.cell_lookup.get(&key.ancestor_at(l)))
        .find(|&&id| mesh.cells[id].active)
        .copied()
}

/// True if the leaf `key` forces its neighbour across `side` to split.
fn needs_split_for(leaves: &BTreeSet<CellKey>, key: &CellKey, side: Boundary, min_level: u8) -> bool {
    let Some(nb) = key.neighbor(side) else { return false };
    match covered_by_leaf(leaves, &nb, min_level) {
        Some(cover) => cover.level + 1 < key.level,
        None => false,
    }
}

fn split(leaves: &mut BTreeSet<CellKey>, key: CellKey, queue: &mut Vec<CellKey>) {
    if leaves.remove(&key) {
        for c in key.children() {
            leaves.insert(c);
            queue.push(c);
        }
    }
}

fn balance(leaves: &mut BTreeSet<CellKey>, mut queue: Vec<CellKey>, min_level: u8) {
    while let Some(key) = queue.pop() {
        if !leaves.contains(&key) {
            continue;
        }
        for side in Boundary::ALL {
            let Some(nb) = key.neighbor(side) else { continue };
            if let Some(cover) = covered_by_leaf(leaves, &nb, min_level) {
                if cover.level + 1 < key.level {
                    split(leaves, cover, &mut queue);
                    queue.push(key);
                }
            }
        }
    }
}
