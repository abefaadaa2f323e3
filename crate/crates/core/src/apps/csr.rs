//! Compressed sparse row graphs and their on-disk formats.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::AppError;

const MAGIC: &[u8; 8] = b"MSIMCSR\0";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrGraph {
    pub row_ptr: Vec<u64>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f32>,
}

impl CsrGraph {
    pub fn num_vertices(&self) -> u32 {
        (self.row_ptr.len() - 1) as u32
    }

    pub fn num_edges(&self) -> u64 {
        self.col_idx.len() as u64
    }

    pub fn degree(&self, v: u32) -> u64 {
        self.row_ptr[v as usize + 1] - self.row_ptr[v as usize]
    }

    pub fn row(&self, v: u32) -> std::ops::Range<usize> {
        self.row_ptr[v as usize] as usize..self.row_ptr[v as usize + 1] as usize
    }

    /// Build from an edge list. Self-loops are dropped and, of duplicate
    /// edges, the first occurrence is kept.
    pub fn from_edges(n: u32, mut edges: Vec<(u32, u32, f32)>) -> CsrGraph {
        edges.retain(|&(u, v, _)| u != v);
        edges.sort_by_key(|&(u, v, _)| (u, v));
        edges.dedup_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0u64; n as usize + 1];
        for &(u, _, _) in &edges {
            row_ptr[u as usize + 1] += 1;
        }
        for i in 0..n as usize {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrGraph {
            row_ptr,
            col_idx: edges.iter().map(|e| e.1).collect(),
            values: edges.iter().map(|e| e.2).collect(),
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32, f32)> + '_ {
        (0..self.num_vertices()).flat_map(move |u| self.row(u).map(move |i| (u, self.col_idx[i], self.values[i])))
    }

    pub fn transpose(&self) -> CsrGraph {
        let n = self.num_vertices();
        let mut row_ptr = vec![0u64; n as usize + 1];
        for &c in &self.col_idx {
            row_ptr[c as usize + 1] += 1;
        }
        for i in 0..n as usize {
            row_ptr[i + 1] += row_ptr[i];
        }
        let mut fill: Vec<u64> = row_ptr[..n as usize].to_vec();
        let mut col_idx = vec![0u32; self.col_idx.len()];
        let mut values = vec![0f32; self.col_idx.len()];
        for (u, v, w) in self.edges() {
            let at = fill[v as usize] as usize;
            col_idx[at] = u;
            values[at] = w;
            fill[v as usize] += 1;
        }
        CsrGraph { row_ptr, col_idx, values }
    }

    /// Union of the graph and its transpose.
    pub fn symmetrize(&self) -> CsrGraph {
        let edges = self.edges().chain(self.edges().map(|(u, v, w)| (v, u, w))).collect();
        CsrGraph::from_edges(self.num_vertices(), edges)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let bad = |m: &str| Err(AppError::Dataset(m.into()));
        if self.row_ptr.is_empty() || self.row_ptr[0] != 0 {
            return bad("row_ptr must start at 0");
        }
        if self.row_ptr.windows(2).any(|w| w[0] > w[1]) {
            return bad("row_ptr must be non-decreasing");
        }
        if *self.row_ptr.last().unwrap() != self.col_idx.len() as u64 || self.values.len() != self.col_idx.len() {
            return bad("row_ptr[V] must equal the number of edges");
        }
        let n = self.num_vertices();
        if self.col_idx.iter().any(|&c| c >= n) {
            return bad("column index out of range");
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.num_vertices() as u64).to_le_bytes())?;
        w.write_all(&self.num_edges().to_le_bytes())?;
        for x in &self.row_ptr {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in &self.col_idx {
            w.write_all(&x.to_le_bytes())?;
        }
        for x in &self.values {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<CsrGraph, AppError> {
        let mut head = [0u8; 28];
        r.read_exact(&mut head).map_err(|e| AppError::Dataset(format!("truncated header: {e}")))?;
        if &head[..8] != MAGIC {
            return Err(AppError::Dataset("not a CSR file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(head[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(AppError::Dataset(format!("unsupported CSR version {version}")));
        }
        let v = u64::from_le_bytes(head[12..20].try_into().unwrap());
        let e = u64::from_le_bytes(head[20..28].try_into().unwrap());
        if v >= u32::MAX as u64 {
            return Err(AppError::Dataset(format!("too many vertices: {v}")));
        }
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let need = (v + 1) * 8 + e * 8;
        if buf.len() as u64 != need {
            return Err(AppError::Dataset(format!("expected {need} bytes of arrays, found {}", buf.len())));
        }
        let (rp, rest) = buf.split_at((v as usize + 1) * 8);
        let (ci, vals) = rest.split_at(e as usize * 4);
        let g = CsrGraph {
            row_ptr: rp.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect(),
            col_idx: ci.chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().unwrap())).collect(),
            values: vals.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> Result<CsrGraph, AppError> {
        let f = std::fs::File::open(path)?;
        CsrGraph::read_from(BufReader::new(f))
    }

    /// Parse a whitespace-separated `src dst [weight]` edge list. Lines
    /// starting with `#` or `%` are comments.
    pub fn parse_edge_list(r: impl BufRead) -> Result<CsrGraph, AppError> {
        let mut edges = Vec::new();
        let mut n = 0u32;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with('%') {
                continue;
            }
            let bad = || AppError::Dataset(format!("line {}: expected `src dst [weight]`", i + 1));
            let mut it = t.split_whitespace();
            let u: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let v: u32 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let w: f32 = match it.next() {
                Some(s) => s.parse().map_err(|_| bad())?,
                None => 1.0,
            };
            if u == u32::MAX || v == u32::MAX {
                return Err(bad());
            }
            n = n.max(u + 1).max(v + 1);
            edges.push((u, v, w));
        }
        Ok(CsrGraph::from_edges(n, edges))
    }

    pub fn load_edge_list(path: &Path) -> Result<CsrGraph, AppError> {
        let f = std::fs::File::open(path)?;
        CsrGraph::parse_edge_list(BufReader::new(f))
    }

    /// A fixed 64-vertex graph: a weighted 6x8 lattice with diagonal
    /// shortcuts, a directed ring of 10, a star of 5 and an isolated vertex.
    pub fn hand_graph() -> CsrGraph {
        let mut e = Vec::new();
        let id = |r: u32, c: u32| r * 8 + c;
        for r in 0..6 {
            for c in 0..8 {
                let w = 1.0 + ((r * 3 + c * 5) % 7) as f32;
                if c + 1 < 8 {
                    e.push((id(r, c), id(r, c + 1), w));
                }
                if r + 1 < 6 {
                    e.push((id(r + 1, c), id(r, c), w + 1.0));
                }
                if (r + c) % 4 == 0 && r + 1 < 6 && c + 1 < 8 {
                    e.push((id(r, c), id(r + 1, c + 1), 9.0));
                }
            }
        }
        for i in 0..10 {
            e.push((48 + i, 48 + (i + 1) % 10, (i % 3 + 1) as f32));
        }
        for i in 1..5 {
            e.push((58, 58 + i, i as f32));
        }
        e.push((58, 0, 2.0));
        CsrGraph::from_edges(64, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> CsrGraph {
        CsrGraph::from_edges(4, vec![(0, 1, 1.0), (0, 2, 2.0), (2, 3, 0.5), (0, 1, 9.0), (3, 3, 1.0)])
    }

    #[test]
    fn from_edges_drops_loops_and_duplicates() {
        let g = small();
        assert_eq!(g.row_ptr, [0, 2, 2, 3, 3]);
        assert_eq!(g.col_idx, [1, 2, 3]);
        assert_eq!(g.values, [1.0, 2.0, 0.5]);
        g.validate().unwrap();
    }

    #[test]
    fn binary_round_trip() {
        let g = small();
        let mut buf = Vec::new();
        g.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 28 + 5 * 8 + 3 * 8);
        assert_eq!(CsrGraph::read_from(&buf[..]).unwrap(), g);
        buf[0] = b'X';
        assert!(CsrGraph::read_from(&buf[..]).is_err());
    }

    #[test]
    fn truncated_file_is_rejected() {
        let mut buf = Vec::new();
        small().write_to(&mut buf).unwrap();
        buf.pop();
        assert!(CsrGraph::read_from(&buf[..]).is_err());
    }

    #[test]
    fn edge_list_import() {
        let text = "# comment\n0 1\n1 2 3.5\n\n% other\n2 0\n";
        let g = CsrGraph::parse_edge_list(text.as_bytes()).unwrap();
        assert_eq!(g.num_vertices(), 3);
        assert_eq!(g.values, [1.0, 3.5, 1.0]);
        assert!(CsrGraph::parse_edge_list("0 x\n".as_bytes()).is_err());
    }

    #[test]
    fn transpose_twice_is_identity() {
        let g = CsrGraph::hand_graph();
        assert_eq!(g.transpose().transpose(), g);
        assert_eq!(g.num_vertices(), 64);
        g.validate().unwrap();
    }

    #[test]
    fn symmetrize_contains_both_directions() {
        let s = small().symmetrize();
        assert_eq!(s.num_edges(), 6);
        assert!(s.row(3).map(|i| s.col_idx[i]).any(|c| c == 2));
    }
}
