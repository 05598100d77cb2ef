//! Legacy VTK and Matrix Market writers.

use std::io::Write;

use crate::error::Result;
use crate::geometry::CellMesh;
use crate::sparse::{CsrMatrix, Scalar};

/// Nodal vector field, three components per node.
pub struct PointField<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
}

/// ASCII unstructured grid with the hexahedra followed by the tagged
/// boundary quads. Cell data `tag` is `0` on volume cells and the facet tag
/// code on quads.
pub fn write_vtk<W: Write>(w: &mut W, mesh: &CellMesh, title: &str, fields: &[PointField<'_>]) -> Result<()> {
    let nn = mesh.n_nodes();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{}", title.replace('\n', " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nn} double")?;
    for p in &mesh.nodes {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2])?;
    }
    let nh = mesh.hexes.len();
    let nf = mesh.facets.len();
    writeln!(w, "CELLS {} {}", nh + nf, 9 * nh + 5 * nf)?;
    for h in &mesh.hexes {
        writeln!(w, "8 {} {} {} {} {} {} {} {}", h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7])?;
    }
    for f in &mesh.facets {
        writeln!(w, "4 {} {} {} {}", f.nodes[0], f.nodes[1], f.nodes[2], f.nodes[3])?;
    }
    writeln!(w, "CELL_TYPES {}", nh + nf)?;
    for _ in 0..nh {
        writeln!(w, "12")?;
    }
    for _ in 0..nf {
        writeln!(w, "9")?;
    }
    writeln!(w, "CELL_DATA {}", nh + nf)?;
    writeln!(w, "SCALARS tag int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for _ in 0..nh {
        writeln!(w, "0")?;
    }
    for f in &mesh.facets {
        writeln!(w, "{}", f.tag.code())?;
    }
    if !fields.is_empty() {
        writeln!(w, "POINT_DATA {nn}")?;
        for f in fields {
            assert_eq!(f.values.len(), 3 * nn, "field {} has the wrong length", f.name);
            writeln!(w, "VECTORS {} double", f.name.replace(' ', "_"))?;
            for v in f.values.chunks(3) {
                writeln!(w, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2])?;
            }
        }
    }
    Ok(())
}

/// Coordinate format, `general` symmetry, 1-based indices.
pub fn write_matrix_market<T: Scalar, W: Write>(w: &mut W, a: &CsrMatrix<T>) -> Result<()> {
    let field = if T::IS_COMPLEX { "complex" } else { "real" };
    writeln!(w, "%%MatrixMarket matrix coordinate {field} general")?;
    writeln!(w, "{} {} {}", a.n, a.n, a.nnz())?;
    for i in 0..a.n {
        for p in a.row_ptr[i]..a.row_ptr[i + 1] {
            let v = a.values[p];
            if T::IS_COMPLEX {
                writeln!(w, "{} {} {:.17e} {:.17e}", i + 1, a.col_idx[p] + 1, v.re(), v.im())?;
            } else {
                writeln!(w, "{} {} {:.17e}", i + 1, a.col_idx[p] + 1, v.re())?;
            }
        }
    }
    Ok(())
}

/// Entries of a Matrix Market coordinate file, 0-based.
pub fn read_matrix_market(s: &str) -> Result<(usize, Vec<(usize, usize, f64, f64)>)> {
    let bad = |m: &str| crate::Error::Config(format!("matrix market: {m}"));
    let mut lines = s.lines().filter(|l| !l.starts_with('%') && !l.trim().is_empty());
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("missing size line"))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad("size line")))
        .collect::<Result<_>>()?;
    if header.len() != 3 {
        return Err(bad("size line needs three integers"));
    }
    let mut out = Vec::with_capacity(header[2]);
    for l in lines {
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() < 3 {
            return Err(bad("short entry"));
        }
        let i: usize = t[0].parse().map_err(|_| bad("row index"))?;
        let j: usize = t[1].parse().map_err(|_| bad("column index"))?;
        let re: f64 = t[2].parse().map_err(|_| bad("value"))?;
        let im: f64 = if t.len() > 3 { t[3].parse().map_err(|_| bad("value"))? } else { 0.0 };
        out.push((i - 1, j - 1, re, im));
    }
    if out.len() != header[2] {
        return Err(bad("entry count mismatch"));
    }
    Ok((header[0], out))
}
