//! Cell/edge geometry for finite-volume schemes.
//!
//! A [`Mesh`] is a list of cells with positive measure plus, for every cell
//! `j`, its edge set `E_j`: the neighbors `k` sharing a boundary piece of
//! positive length, with that length and the unit normal pointing out of `j`.
//! Only interior edges are stored, so the domain boundary is no-flow for every
//! scheme built on top of this type.
//!
//! The generators produce uniform 1D intervals and 2D rectangles. Interval
//! meshes also carry a dual mesh whose cells are owned by the nodes of the
//! P1 representation (midpoint-to-midpoint intervals), used by the
//! finite-volume-element backend.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// A point in the plane. 1D meshes use the first coordinate and keep the
/// second at zero.
pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshKind {
    /// Cell-centered finite volumes; the cell center is the centroid.
    Primal,
    /// Node-owned dual cells; the cell center is the node.
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub id: usize,
    /// Where the unknown lives: centroid (primal) or node (dual).
    pub center: Point,
    /// Midpoint of the cell, used for one-point source quadrature.
    pub quad_point: Point,
    /// Area in 2D, length in 1D.
    pub area: f64,
    /// True if the cell touches the domain boundary.
    pub boundary: bool,
}

/// One oriented edge `(j, k)` as seen from cell `j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub neighbor: usize,
    /// Edge length; identically 1 in 1D.
    pub length: f64,
    /// Unit normal pointing out of the owning cell.
    pub normal: Point,
    pub midpoint: Point,
    /// Distance between the two cell centers.
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    dimension: usize,
    kind: MeshKind,
    cells: Vec<Cell>,
    edges: Vec<Vec<Edge>>,
    volume: f64,
    dual: Option<Box<Mesh>>,
}

impl Mesh {
    /// Uniform partition of `[a, b]` into `n` cells, with its dual mesh.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Mesh> {
        if !(a.is_finite() && b.is_finite()) || b <= a {
            return Err(Error::InvalidGeometry(format!("interval [{a}, {b}] is empty")));
        }
        if n == 0 {
            return Err(Error::InvalidGeometry("interval mesh needs at least one cell".into()));
        }
        let h = (b - a) / n as f64;
        let face = |i: usize| if i == n { b } else { a + i as f64 * h };

        let cells = (0..n)
            .map(|j| {
                let c = [0.5 * (face(j) + face(j + 1)), 0.0];
                Cell {
                    id: j,
                    center: c,
                    quad_point: c,
                    area: face(j + 1) - face(j),
                    boundary: j == 0 || j + 1 == n,
                }
            })
            .collect::<Vec<_>>();
        let mut edges = vec![Vec::new(); n];
        for j in 0..n.saturating_sub(1) {
            let midpoint = [face(j + 1), 0.0];
            push_edge_pair(&mut edges, &cells, j, j + 1, 1.0, [1.0, 0.0], midpoint);
        }

        // Dual cells: node i owns [m_{i-1}, m_i] with m the cell midpoints,
        // clipped to the domain.
        let nodes = (0..=n).map(face).collect::<Vec<_>>();
        let bound = |i: usize| -> f64 {
            // right end of the dual cell of node i
            if i == n {
                b
            } else {
                cells[i].center[0]
            }
        };
        let dual_cells = (0..=n)
            .map(|i| {
                let left = if i == 0 { a } else { bound(i - 1) };
                let right = bound(i);
                Cell {
                    id: i,
                    center: [nodes[i], 0.0],
                    quad_point: [0.5 * (left + right), 0.0],
                    area: right - left,
                    boundary: i == 0 || i == n,
                }
            })
            .collect::<Vec<_>>();
        let mut dual_edges = vec![Vec::new(); n + 1];
        for (i, c) in cells.iter().enumerate() {
            let midpoint = [c.center[0], 0.0];
            push_edge_pair(&mut dual_edges, &dual_cells, i, i + 1, 1.0, [1.0, 0.0], midpoint);
        }
        let dual = Mesh {
            dimension: 1,
            kind: MeshKind::Dual,
            cells: dual_cells,
            edges: dual_edges,
            volume: b - a,
            dual: None,
        };

        Ok(Mesh {
            dimension: 1,
            kind: MeshKind::Primal,
            cells,
            edges,
            volume: b - a,
            dual: Some(Box::new(dual)),
        })
    }

    /// Uniform `nx` by `ny` rectangular cells on `[x0, x1] x [y0, y1]`.
    /// Cell `(ix, iy)` has id `iy * nx + ix`.
    pub fn rectangle(x: [f64; 2], y: [f64; 2], nx: usize, ny: usize) -> Result<Mesh> {
        if !(x.iter().chain(&y).all(|v| v.is_finite())) || x[1] <= x[0] || y[1] <= y[0] {
            return Err(Error::InvalidGeometry(format!("rectangle {x:?} x {y:?} is empty")));
        }
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidGeometry(format!("rectangle mesh needs positive counts, got {nx}x{ny}")));
        }
        let dx = (x[1] - x[0]) / nx as f64;
        let dy = (y[1] - y[0]) / ny as f64;
        let xf = |i: usize| if i == nx { x[1] } else { x[0] + i as f64 * dx };
        let yf = |i: usize| if i == ny { y[1] } else { y[0] + i as f64 * dy };

        let mut cells = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                let c = [0.5 * (xf(ix) + xf(ix + 1)), 0.5 * (yf(iy) + yf(iy + 1))];
                cells.push(Cell {
                    id: iy * nx + ix,
                    center: c,
                    quad_point: c,
                    area: (xf(ix + 1) - xf(ix)) * (yf(iy + 1) - yf(iy)),
                    boundary: ix == 0 || iy == 0 || ix + 1 == nx || iy + 1 == ny,
                });
            }
        }
        let mut edges = vec![Vec::new(); nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let j = iy * nx + ix;
                if ix + 1 < nx {
                    let len = yf(iy + 1) - yf(iy);
                    let mid = [xf(ix + 1), cells[j].center[1]];
                    push_edge_pair(&mut edges, &cells, j, j + 1, len, [1.0, 0.0], mid);
                }
                if iy + 1 < ny {
                    let len = xf(ix + 1) - xf(ix);
                    let mid = [cells[j].center[0], yf(iy + 1)];
                    push_edge_pair(&mut edges, &cells, j, j + nx, len, [0.0, 1.0], mid);
                }
            }
        }
        Ok(Mesh {
            dimension: 2,
            kind: MeshKind::Primal,
            cells,
            edges,
            volume: (x[1] - x[0]) * (y[1] - y[0]),
            dual: None,
        })
    }

    /// Assemble a mesh from explicit cells and oriented edge lists, checking
    /// the finite-volume axioms. This is the entry point for geometry that
    /// does not come from the uniform generators.
    pub fn from_parts(dimension: usize, cells: Vec<Cell>, edges: Vec<Vec<Edge>>) -> Result<Mesh> {
        if !(1..=2).contains(&dimension) {
            return Err(Error::InvalidGeometry(format!("dimension {dimension} unsupported")));
        }
        let volume = cells.iter().map(|c| c.area).sum();
        let mesh = Mesh { dimension, kind: MeshKind::Primal, cells, edges, volume, dual: None };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check positivity of measures, edge pairing, and normal antisymmetry.
    pub fn validate(&self) -> Result<()> {
        if self.cells.is_empty() || self.edges.len() != self.cells.len() {
            return Err(Error::InvalidGeometry("cell and edge lists disagree".into()));
        }
        for (j, cell) in self.cells.iter().enumerate() {
            if cell.id != j {
                return Err(Error::InvalidGeometry(format!("cell at position {j} has id {}", cell.id)));
            }
            if !(cell.area > 0.0) {
                return Err(Error::InvalidGeometry(format!("cell {j} has area {}", cell.area)));
            }
            for e in &self.edges[j] {
                if !(e.length > 0.0) || !(e.distance > 0.0) {
                    return Err(Error::InvalidGeometry(format!("edge ({j},{}) is degenerate", e.neighbor)));
                }
                let back = self
                    .edges
                    .get(e.neighbor)
                    .and_then(|list| list.iter().find(|b| b.neighbor == j))
                    .ok_or_else(|| Error::InvalidGeometry(format!("edge ({j},{}) has no partner", e.neighbor)))?;
                let negated = [-e.normal[0], -e.normal[1]];
                if back.length != e.length
                    || back.normal[0].to_bits() != negated[0].to_bits()
                    || back.normal[1].to_bits() != negated[1].to_bits()
                {
                    return Err(Error::InvalidGeometry(format!("edge ({j},{}) is not antisymmetric", e.neighbor)));
                }
            }
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn kind(&self) -> MeshKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    /// Measure of the whole domain.
    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn dual(&self) -> Option<&Mesh> {
        self.dual.as_deref()
    }

    /// The edge set `E_j` with geometry, normals outward from cell `j`.
    pub fn edge_neighbors(&self, j: usize) -> Result<&[Edge]> {
        self.edges
            .get(j)
            .map(Vec::as_slice)
            .ok_or(Error::Lookup { id: j, count: self.cells.len() })
    }

    /// Edges of cell `j`; panics on a bad id. For hot loops over known ids.
    pub fn edges_of(&self, j: usize) -> &[Edge] {
        &self.edges[j]
    }

    pub fn interior_edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Each interior edge once, as `(j, k, edge seen from j)` with `j < k`.
    pub fn unique_edges(&self) -> Vec<(usize, usize, Edge)> {
        let mut out = Vec::with_capacity(self.interior_edge_count());
        for (j, list) in self.edges.iter().enumerate() {
            for e in list {
                if e.neighbor > j {
                    out.push((j, e.neighbor, *e));
                }
            }
        }
        out
    }

    /// Largest `|j - k|` over all edges: the bandwidth of any operator that
    /// couples only edge neighbors.
    pub fn bandwidth(&self) -> usize {
        self.edges
            .iter()
            .enumerate()
            .flat_map(|(j, list)| list.iter().map(move |e| e.neighbor.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn centers(&self) -> impl Iterator<Item = Point> + '_ {
        self.cells.iter().map(|c| c.center)
    }

    /// Index of the cell whose center is nearest to `x` (lowest id on ties).
    pub fn nearest_cell(&self, x: Point) -> usize {
        let mut best = (0, f64::INFINITY);
        for c in &self.cells {
            let d = (c.center[0] - x[0]).powi(2) + (c.center[1] - x[1]).powi(2);
            if d < best.1 {
                best = (c.id, d);
            }
        }
        best.0
    }

    /// Green-Gauss gradients at cell centers, with face values the mean of
    /// the two adjacent cells and a mirror value on the no-flow boundary.
    /// On uniform meshes this is the central difference in the interior.
    pub fn cell_gradients(&self, values: &[f64]) -> Vec<Point> {
        self.cells
            .iter()
            .map(|c| {
                let uj = values[c.id];
                let mut g = [0.0; 2];
                for e in &self.edges[c.id] {
                    let w = 0.5 * (values[e.neighbor] - uj) * e.length / c.area;
                    g[0] += w * e.normal[0];
                    g[1] += w * e.normal[1];
                }
                g
            })
            .collect()
    }

    /// Plain-text dump: one `cell` line per cell and one `edge` line per
    /// oriented edge.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for c in &self.cells {
            let _ = writeln!(out, "cell {} {:.17e} {:.17e} {:.17e}", c.id, c.center[0], c.center[1], c.area);
        }
        for (j, list) in self.edges.iter().enumerate() {
            for e in list {
                let _ = writeln!(
                    out,
                    "edge {} {} {:.17e} {:.17e} {:.17e}",
                    j, e.neighbor, e.length, e.normal[0], e.normal[1]
                );
            }
        }
        out
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.dump().as_bytes())?;
        Ok(())
    }
}

fn push_edge_pair(
    edges: &mut [Vec<Edge>],
    cells: &[Cell],
    j: usize,
    k: usize,
    length: f64,
    normal: Point,
    midpoint: Point,
) {
    let (cj, ck) = (cells[j].center, cells[k].center);
    let distance = ((ck[0] - cj[0]).powi(2) + (ck[1] - cj[1]).powi(2)).sqrt();
    edges[j].push(Edge { neighbor: k, length, normal, midpoint, distance });
    edges[k].push(Edge { neighbor: j, length, normal: [-normal[0], -normal[1]], midpoint, distance });
}
