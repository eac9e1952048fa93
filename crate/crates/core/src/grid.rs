//! Static grid description, topology application and nodal matrix assembly.
//!
//! A grid is a set of substations joined by lines. Every substation holds two
//! busbars; each grid element (line end, generator, load) is attached to one
//! of them by the [`TopologyVector`]. Applying a topology yields a
//! [`BusGraph`], whose energized buses are the electrical nodes of the DC
//! power-flow problem.
//!
//! Grid elements are indexed in a fixed layout used everywhere in the crate
//! (topology vectors, feature encoding, persisted arrays):
//!
//! ```text
//! [ line origin ends (L) | line extremity ends (L) | generators (G) | loads (D) ]
//! ```
//!
//! Busbar slots are indexed `2 * substation + busbar` with busbar 0 or 1, so a
//! grid with `K` substations has `2K` potential buses.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: String,
    #[serde(rename = "from")]
    pub sub_or: usize,
    #[serde(rename = "to")]
    pub sub_ex: usize,
    /// Series reactance in p.u.
    pub x: f64,
}

impl Line {
    pub fn susceptance(&self) -> f64 {
        1.0 / self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub substation: usize,
    /// Capacity in p.u.; dispatch is shared in proportion to it.
    pub p_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub id: String,
    pub substation: usize,
    /// Nominal consumption in p.u.
    pub p_nominal: f64,
}

fn default_base_mva() -> f64 {
    100.0
}

/// Static grid description. Construct through [`Grid::from_json_str`],
/// [`Grid::load`] or [`Grid::new`], all of which validate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub name: String,
    #[serde(default = "default_base_mva")]
    pub base_mva: f64,
    pub substations: usize,
    #[serde(rename = "slack")]
    pub slack_substation: usize,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
}

/// What a grid element is, resolved from its flat index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    LineOr(usize),
    LineEx(usize),
    Gen(usize),
    Load(usize),
}

impl Grid {
    pub fn new(grid: Grid) -> Result<Self> {
        grid.validate()?;
        Ok(grid)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let grid: Grid =
            serde_json::from_str(text).map_err(|e| Error::InvalidGrid(format!("cannot parse grid document: {e}")))?;
        Grid::new(grid)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid serializes")
    }

    /// The IEEE 14-bus test case shipped with the crate.
    pub fn ieee14() -> Self {
        Self::from_json_str(include_str!("../../../grids/ieee14.json")).expect("bundled IEEE 14 grid is valid")
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_elements(&self) -> usize {
        2 * self.lines.len() + self.generators.len() + self.loads.len()
    }

    /// Number of busbar slots, `2K`.
    pub fn n_slots(&self) -> usize {
        2 * self.substations
    }

    pub fn element(&self, index: usize) -> Element {
        let l = self.lines.len();
        let g = self.generators.len();
        if index < l {
            Element::LineOr(index)
        } else if index < 2 * l {
            Element::LineEx(index - l)
        } else if index < 2 * l + g {
            Element::Gen(index - 2 * l)
        } else {
            Element::Load(index - 2 * l - g)
        }
    }

    pub fn line_or_element(&self, line: usize) -> usize {
        line
    }

    pub fn line_ex_element(&self, line: usize) -> usize {
        self.lines.len() + line
    }

    pub fn gen_element(&self, gen: usize) -> usize {
        2 * self.lines.len() + gen
    }

    pub fn load_element(&self, load: usize) -> usize {
        2 * self.lines.len() + self.generators.len() + load
    }

    pub fn element_substation(&self, index: usize) -> usize {
        match self.element(index) {
            Element::LineOr(l) => self.lines[l].sub_or,
            Element::LineEx(l) => self.lines[l].sub_ex,
            Element::Gen(g) => self.generators[g].substation,
            Element::Load(d) => self.loads[d].substation,
        }
    }

    /// Flat indices of the elements attached to a substation.
    pub fn substation_elements(&self, sub: usize) -> Vec<usize> {
        (0..self.n_elements())
            .filter(|&e| self.element_substation(e) == sub)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.substations;
        if k < 2 {
            return Err(Error::InvalidGrid(format!(
                "a grid needs at least 2 substations, got {k}"
            )));
        }
        if self.slack_substation >= k {
            return Err(Error::InvalidGrid(format!(
                "slack substation {} out of range 0..{k}",
                self.slack_substation
            )));
        }
        for line in &self.lines {
            if line.sub_or >= k || line.sub_ex >= k {
                return Err(Error::InvalidGrid(format!(
                    "line {} references a missing substation",
                    line.id
                )));
            }
            if line.sub_or == line.sub_ex {
                return Err(Error::InvalidGrid(format!(
                    "line {} connects substation {} to itself",
                    line.id, line.sub_or
                )));
            }
            if !(line.x.is_finite() && line.x > 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "line {} has non-positive or non-finite reactance {}",
                    line.id, line.x
                )));
            }
        }
        for gen in &self.generators {
            if gen.substation >= k {
                return Err(Error::InvalidGrid(format!(
                    "generator {} references a missing substation",
                    gen.id
                )));
            }
            if !(gen.p_max.is_finite() && gen.p_max >= 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "generator {} has invalid capacity {}",
                    gen.id, gen.p_max
                )));
            }
        }
        for load in &self.loads {
            if load.substation >= k {
                return Err(Error::InvalidGrid(format!(
                    "load {} references a missing substation",
                    load.id
                )));
            }
            if !(load.p_nominal.is_finite() && load.p_nominal >= 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "load {} has invalid nominal power {}",
                    load.id, load.p_nominal
                )));
            }
        }
        let edges: Vec<(usize, usize)> = self.lines.iter().map(|l| (l.sub_or, l.sub_ex)).collect();
        let unreachable = count_unreachable(k, &edges, self.slack_substation);
        if unreachable > 0 {
            return Err(Error::InvalidGrid(format!(
                "{unreachable} substations are disconnected with every line in service"
            )));
        }
        Ok(())
    }
}

fn count_unreachable(n: usize, edges: &[(usize, usize)], root: usize) -> usize {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([root]);
    seen[root] = true;
    let mut reached = 1;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                reached += 1;
                queue.push_back(v);
            }
        }
    }
    n - reached
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Busbar {
    #[default]
    One,
    Two,
}

impl Busbar {
    pub fn index(self) -> usize {
        match self {
            Busbar::One => 0,
            Busbar::Two => 1,
        }
    }
}

/// Per-sample busbar assignment of every element plus line in-service flags.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopologyVector {
    pub element_bus: Vec<Busbar>,
    pub line_status: Vec<bool>,
}

impl TopologyVector {
    /// Everything on busbar 1, every line connected.
    pub fn reference(grid: &Grid) -> Self {
        TopologyVector {
            element_bus: vec![Busbar::One; grid.n_elements()],
            line_status: vec![true; grid.n_lines()],
        }
    }

    pub fn n_disconnected(&self) -> usize {
        self.line_status.iter().filter(|&&s| !s).count()
    }

    pub fn check_dims(&self, grid: &Grid) -> Result<()> {
        if self.element_bus.len() != grid.n_elements() {
            return Err(Error::DimensionMismatch {
                what: "topology element_bus",
                expected: grid.n_elements(),
                got: self.element_bus.len(),
            });
        }
        if self.line_status.len() != grid.n_lines() {
            return Err(Error::DimensionMismatch {
                what: "topology line_status",
                expected: grid.n_lines(),
                got: self.line_status.len(),
            });
        }
        Ok(())
    }

    /// Busbar slot (`2 * substation + busbar`) an element sits on.
    pub fn element_slot(&self, grid: &Grid, element: usize) -> usize {
        2 * grid.element_substation(element) + self.element_bus[element].index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub bus_a: usize,
    pub bus_b: usize,
    pub line: usize,
    pub susceptance: f64,
}

/// Energized electrical graph induced by a topology.
///
/// Buses are numbered compactly in increasing slot order.
#[derive(Debug, Clone, PartialEq)]
pub struct BusGraph {
    pub n_buses: usize,
    /// Compact bus index to busbar slot.
    pub bus_slot: Vec<usize>,
    /// Busbar slot to compact bus index, `None` when the busbar is empty.
    pub slot_bus: Vec<Option<usize>>,
    /// Element to bus; `None` for ends of disconnected lines.
    pub element_to_bus: Vec<Option<usize>>,
    /// One edge per connected line.
    pub edges: Vec<Edge>,
    /// `(origin bus, extremity bus)` per line, `None` when disconnected.
    pub line_buses: Vec<Option<(usize, usize)>>,
    pub line_susceptance: Vec<f64>,
    pub slack_bus: usize,
}

impl BusGraph {
    pub fn n_lines(&self) -> usize {
        self.line_buses.len()
    }

    /// Scatter a per-bus vector into the fixed `2K` slot layout (zeros elsewhere).
    pub fn to_slots(&self, per_bus: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.slot_bus.len()];
        for (bus, &slot) in self.bus_slot.iter().enumerate() {
            out[slot] = per_bus[bus];
        }
        out
    }

    /// Gather a per-bus vector from the `2K` slot layout.
    pub fn from_slots(&self, slots: &[f64]) -> Vec<f64> {
        self.bus_slot.iter().map(|&s| slots[s]).collect()
    }

    /// 1.0 on energized slots, 0.0 elsewhere.
    pub fn slot_mask(&self) -> Vec<f64> {
        self.slot_bus
            .iter()
            .map(|b| if b.is_some() { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Build the energized bus graph of `grid` under topology `tau`.
///
/// A busbar becomes a bus when it hosts a generator, a load or an end of a
/// connected line. The slack bus is busbar 1 of the slack substation, or
/// busbar 2 when busbar 1 is empty.
pub fn apply_topology(grid: &Grid, tau: &TopologyVector) -> Result<BusGraph> {
    tau.check_dims(grid)?;
    let n_slots = grid.n_slots();
    let n_elem = grid.n_elements();

    let live = |e: usize| match grid.element(e) {
        Element::LineOr(l) | Element::LineEx(l) => tau.line_status[l],
        Element::Gen(_) | Element::Load(_) => true,
    };

    let mut energized = vec![false; n_slots];
    for e in (0..n_elem).filter(|&e| live(e)) {
        energized[tau.element_slot(grid, e)] = true;
    }

    let mut slot_bus = vec![None; n_slots];
    let mut bus_slot = Vec::new();
    for (slot, _) in energized.iter().enumerate().filter(|(_, &on)| on) {
        slot_bus[slot] = Some(bus_slot.len());
        bus_slot.push(slot);
    }
    let n_buses = bus_slot.len();

    let slack_slot = 2 * grid.slack_substation;
    let slack_bus = slot_bus[slack_slot]
        .or(slot_bus[slack_slot + 1])
        .ok_or(Error::IslandedGrid {
            buses: n_buses,
            unreachable: n_buses,
        })?;

    let element_to_bus: Vec<Option<usize>> = (0..n_elem)
        .map(|e| live(e).then(|| slot_bus[tau.element_slot(grid, e)]).flatten())
        .collect();

    let mut edges = Vec::new();
    let mut line_buses = Vec::with_capacity(grid.n_lines());
    for (l, line) in grid.lines.iter().enumerate() {
        if tau.line_status[l] {
            let a = element_to_bus[grid.line_or_element(l)].expect("connected line end is energized");
            let b = element_to_bus[grid.line_ex_element(l)].expect("connected line end is energized");
            edges.push(Edge {
                bus_a: a,
                bus_b: b,
                line: l,
                susceptance: line.susceptance(),
            });
            line_buses.push(Some((a, b)));
        } else {
            line_buses.push(None);
        }
    }

    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.bus_a, e.bus_b)).collect();
    let unreachable = count_unreachable(n_buses, &pairs, slack_bus);
    if unreachable > 0 {
        return Err(Error::IslandedGrid {
            buses: n_buses,
            unreachable,
        });
    }

    Ok(BusGraph {
        n_buses,
        bus_slot,
        slot_bus,
        element_to_bus,
        edges,
        line_buses,
        line_susceptance: grid.lines.iter().map(Line::susceptance).collect(),
        slack_bus,
    })
}

/// Symmetric bus susceptance matrix: `y_ii = Σ b_ij`, `y_ij = -b_ij`.
///
/// Stored as the diagonal plus compressed rows of off-diagonal entries with
/// columns sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalMatrix {
    diag: Vec<f64>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NodalMatrix {
    /// Assemble from `(i, j, b)` branches; parallel branches are summed.
    pub fn from_branches(dim: usize, branches: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut diag = vec![0.0; dim];
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); dim];
        for (i, j, b) in branches {
            diag[i] += b;
            diag[j] += b;
            rows[i].push((j, -b));
            rows[j].push((i, -b));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                if cols.len() > *row_ptr.last().unwrap() && *cols.last().unwrap() == j {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        NodalMatrix {
            diag,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Off-diagonal entries `(j, y_ij)` of row `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.neighbors(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    /// `Y θ`.
    pub fn mul_vec(&self, theta: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.diag[i] * theta[i] + self.neighbors(i).map(|(j, y)| y * theta[j]).sum::<f64>())
            .collect()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            for (j, y) in self.neighbors(i) {
                m[(i, j)] = y;
            }
        }
        m
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.diag[i] + self.neighbors(i).map(|(_, y)| y).sum::<f64>())
            .collect()
    }

    pub fn nnz_offdiag(&self) -> usize {
        self.cols.len()
    }
}

pub fn build_nodal_matrix(bg: &BusGraph) -> NodalMatrix {
    NodalMatrix::from_branches(bg.n_buses, bg.edges.iter().map(|e| (e.bus_a, e.bus_b, e.susceptance)))
}

/// Flat model input: `[p_prod | p_load | element busbar (0/1) | line status (1/0)]`.
pub fn encode_features(grid: &Grid, tau: &TopologyVector, inj: &crate::dc::Injection) -> Result<Vec<f64>> {
    tau.check_dims(grid)?;
    inj.check_dims(grid)?;
    let mut x = Vec::with_capacity(feature_len(grid));
    x.extend_from_slice(&inj.p_prod);
    x.extend_from_slice(&inj.p_load);
    x.extend(tau.element_bus.iter().map(|b| b.index() as f64));
    x.extend(tau.line_status.iter().map(|&s| if s { 1.0 } else { 0.0 }));
    Ok(x)
}

pub fn feature_len(grid: &Grid) -> usize {
    grid.generators.len() + grid.loads.len() + grid.n_elements() + grid.n_lines()
}

/// Shape of a generated synthetic grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub substations: usize,
    pub lines: usize,
    pub generators: usize,
    pub loads: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Medium grid with the element counts of the 36-substation benchmark grid.
    pub fn medium() -> Self {
        SyntheticSpec {
            substations: 36,
            lines: 58,
            generators: 22,
            loads: 37,
            seed: 36,
        }
    }
}

/// Seeded random meshed grid: a ring over all substations plus random chords.
pub fn synthetic_grid(spec: &SyntheticSpec) -> Result<Grid> {
    let k = spec.substations;
    let ring = if k > 2 { k } else { 1 };
    if k < 2 || spec.lines < ring {
        return Err(Error::InvalidConfig(format!(
            "synthetic grid with {k} substations needs at least {ring} lines"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pairs: Vec<(usize, usize)> = if k == 2 {
        vec![(0, 1)]
    } else {
        (0..k).map(|i| (i, (i + 1) % k)).collect()
    };
    while pairs.len() < spec.lines {
        let a = rng.gen_range(0..k);
        let b = rng.gen_range(0..k);
        if a != b {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    let lines = pairs
        .into_iter()
        .enumerate()
        .map(|(i, (a, b))| Line {
            id: format!("line_{i}"),
            sub_or: a,
            sub_ex: b,
            x: rng.gen_range(0.05..0.35),
        })
        .collect();
    let generators = (0..spec.generators)
        .map(|i| Generator {
            id: format!("gen_{i}"),
            // The first generator always sits at the slack substation.
            substation: if i == 0 { 0 } else { rng.gen_range(0..k) },
            p_max: rng.gen_range(0.5..2.0),
        })
        .collect();
    let loads = (0..spec.loads)
        .map(|i| Load {
            id: format!("load_{i}"),
            substation: if i < k { (i + 1) % k } else { rng.gen_range(0..k) },
            p_nominal: rng.gen_range(0.05..0.5),
        })
        .collect();
    Grid::new(Grid {
        name: format!("synthetic_{k}"),
        base_mva: 100.0,
        substations: k,
        slack_substation: 0,
        lines,
        generators,
        loads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dc::Injection;

    fn line(from: usize, to: usize, x: f64) -> Line {
        Line {
            id: format!("{from}-{to}"),
            sub_or: from,
            sub_ex: to,
            x,
        }
    }

    pub(crate) fn triangle() -> Grid {
        Grid::new(Grid {
            name: "triangle".into(),
            base_mva: 100.0,
            substations: 3,
            slack_substation: 0,
            lines: vec![line(0, 1, 1.0), line(1, 2, 1.0), line(0, 2, 1.0)],
            generators: vec![Generator {
                id: "g0".into(),
                substation: 0,
                p_max: 1.0,
            }],
            loads: vec![
                Load {
                    id: "d1".into(),
                    substation: 1,
                    p_nominal: 0.4,
                },
                Load {
                    id: "d2".into(),
                    substation: 2,
                    p_nominal: 0.6,
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn ieee14_reference_topology() {
        let grid = Grid::ieee14();
        assert_eq!(grid.substations, 14);
        assert_eq!(grid.n_lines(), 20);
        assert_eq!(grid.generators.len(), 6);
        assert_eq!(grid.loads.len(), 11);
        let bg = apply_topology(&grid, &TopologyVector::reference(&grid)).unwrap();
        assert_eq!(bg.n_buses, 14);
        assert_eq!(bg.edges.len(), 20);
        assert_eq!(bg.slack_bus, 0);
    }

    #[test]
    fn two_substations_line_out_islands() {
        let grid = Grid::new(Grid {
            name: "pair".into(),
            base_mva: 100.0,
            substations: 2,
            slack_substation: 0,
            lines: vec![line(0, 1, 0.5)],
            generators: vec![Generator {
                id: "g".into(),
                substation: 0,
                p_max: 1.0,
            }],
            loads: vec![Load {
                id: "d".into(),
                substation: 1,
                p_nominal: 1.0,
            }],
        })
        .unwrap();
        let mut tau = TopologyVector::reference(&grid);
        tau.line_status[0] = false;
        assert!(matches!(apply_topology(&grid, &tau), Err(Error::IslandedGrid { .. })));
    }

    #[test]
    fn busbar_split_on_triangle() {
        // Substation 2 moves its load and the 1-2 line end to busbar 2;
        // the 0-2 line keeps busbar 1 alive, so the split adds one bus.
        let grid = triangle();
        let mut tau = TopologyVector::reference(&grid);
        tau.element_bus[grid.load_element(1)] = Busbar::Two;
        tau.element_bus[grid.line_ex_element(1)] = Busbar::Two;
        let bg = apply_topology(&grid, &tau).unwrap();
        assert_eq!(bg.n_buses, 4);
        assert_eq!(bg.bus_slot, vec![0, 2, 4, 5]);
        assert_eq!(bg.line_buses[1], Some((1, 3)));
        assert_eq!(bg.line_buses[2], Some((0, 2)));
    }

    #[test]
    fn empty_busbar_is_omitted_not_an_error() {
        let grid = triangle();
        let mut tau = TopologyVector::reference(&grid);
        for e in grid.substation_elements(1) {
            tau.element_bus[e] = Busbar::Two;
        }
        let bg = apply_topology(&grid, &tau).unwrap();
        assert_eq!(bg.n_buses, 3);
        assert_eq!(bg.slot_bus[2], None);
        assert_eq!(bg.slot_bus[3], Some(1));
    }

    #[test]
    fn lone_load_on_busbar_two_islands() {
        let grid = triangle();
        let mut tau = TopologyVector::reference(&grid);
        tau.element_bus[grid.load_element(0)] = Busbar::Two;
        assert!(matches!(
            apply_topology(&grid, &tau),
            Err(Error::IslandedGrid { unreachable: 1, .. })
        ));
    }

    #[test]
    fn topology_dimension_mismatch() {
        let grid = triangle();
        let mut tau = TopologyVector::reference(&grid);
        tau.line_status.pop();
        assert!(matches!(
            apply_topology(&grid, &tau),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nodal_matrix_single_line() {
        let y = NodalMatrix::from_branches(2, [(0, 1, 1.0 / 0.5)]);
        assert_eq!(y.to_dense(), DMatrix::from_row_slice(2, 2, &[2.0, -2.0, -2.0, 2.0]));
    }

    #[test]
    fn nodal_matrix_triangle() {
        let grid = triangle();
        let bg = apply_topology(&grid, &TopologyVector::reference(&grid)).unwrap();
        let y = build_nodal_matrix(&bg).to_dense();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(y[(i, j)], if i == j { 2.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn nodal_matrix_path() {
        let y = NodalMatrix::from_branches(3, [(0, 1, 1.0 / 0.2), (1, 2, 1.0 / 0.25)]);
        let expected = DMatrix::from_row_slice(3, 3, &[5.0, -5.0, 0.0, -5.0, 9.0, -4.0, 0.0, -4.0, 4.0]);
        assert!((y.to_dense() - expected).abs().max() < 1e-12);
    }

    #[test]
    fn nodal_matrix_parallel_lines_sum() {
        let y = NodalMatrix::from_branches(2, [(0, 1, 2.0), (1, 0, 3.0)]);
        assert_eq!(y.get(0, 1), -5.0);
        assert_eq!(y.get(1, 0), -5.0);
        assert_eq!(y.diag(), &[5.0, 5.0]);
        assert_eq!(y.nnz_offdiag(), 2);
    }

    #[test]
    fn feature_layout_ieee14() {
        let grid = Grid::ieee14();
        let tau = TopologyVector::reference(&grid);
        let inj = Injection::zeros(&grid);
        let x = encode_features(&grid, &tau, &inj).unwrap();
        assert_eq!(x.len(), 94);
        assert_eq!(feature_len(&grid), 94);
        assert!(x[..17 + 57].iter().all(|&v| v == 0.0));
        assert!(x[17 + 57..].iter().all(|&v| v == 1.0));

        let mut cut = tau.clone();
        cut.line_status[7] = false;
        let y = encode_features(&grid, &cut, &inj).unwrap();
        let diffs: Vec<usize> = (0..94).filter(|&i| x[i] != y[i]).collect();
        assert_eq!(diffs, vec![17 + 57 + 7]);
        assert_eq!(y[17 + 57 + 7], 0.0);
    }

    #[test]
    fn invalid_grids_rejected() {
        let mut g = triangle();
        g.lines[0].x = 0.0;
        assert!(g.validate().is_err());
        let mut g = triangle();
        g.loads[0].substation = 7;
        assert!(g.validate().is_err());
        let mut g = triangle();
        g.substations = 4;
        assert!(matches!(g.validate(), Err(Error::InvalidGrid(_))));
        assert!(Grid::from_json_str("{\"name\": 3}").is_err());
    }

    #[test]
    fn grid_json_round_trip() {
        let grid = Grid::ieee14();
        let back = Grid::from_json_str(&grid.to_json_string()).unwrap();
        assert_eq!(grid, back);
    }

    #[test]
    fn synthetic_medium_grid_shape() {
        let grid = synthetic_grid(&SyntheticSpec::medium()).unwrap();
        assert_eq!(grid.substations, 36);
        assert_eq!(grid.n_lines(), 58);
        assert_eq!(grid.generators.len(), 22);
        assert_eq!(grid.loads.len(), 37);
        let bg = apply_topology(&grid, &TopologyVector::reference(&grid)).unwrap();
        assert_eq!(bg.n_buses, 36);
        assert_eq!(synthetic_grid(&SyntheticSpec::medium()).unwrap(), grid);
    }
}
