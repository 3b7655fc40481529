//! Plain-text exports: Matrix Market, legacy VTK and fixed-format CSV.

use std::io::Write;

use crate::error::Result;
use crate::mesh::ActiveMesh;
use crate::sparse::CsrMatrix;

/// 17 significant digits; the same bits always print the same text.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes the lower triangle of a symmetric matrix as `coordinate real symmetric`.
pub fn write_matrix_market<W: Write>(mut w: W, a: &CsrMatrix) -> Result<()> {
    let mut entries = Vec::new();
    for i in 0..a.n_rows {
        entries.extend(a.row(i).filter(|&(j, _)| j <= i).map(|(j, v)| (i, j, v)));
    }
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    writeln!(w, "{} {} {}", a.n_rows, a.n_cols, entries.len())?;
    for (i, j, v) in entries {
        writeln!(w, "{} {} {}", i + 1, j + 1, fmt_float(v))?;
    }
    Ok(())
}

/// ASCII unstructured grid of the active band with `h_T` per cell and an
/// optional nodal field.
pub fn write_vtk<W: Write>(mut w: W, mesh: &ActiveMesh, point_data: Option<(&str, &[f64])>) -> Result<()> {
    let n = mesh.n_dofs();
    let m = mesh.n_elements();
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "tracefem active mesh")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {n} double")?;
    for d in 0..n {
        let p = mesh.dof_point(d);
        writeln!(w, "{} {} 0", fmt_float(p.x), fmt_float(p.y))?;
    }
    writeln!(w, "CELLS {m} {}", 4 * m)?;
    for e in &mesh.element_dofs {
        writeln!(w, "3 {} {} {}", e[0], e[1], e[2])?;
    }
    writeln!(w, "CELL_TYPES {m}")?;
    for _ in 0..m {
        writeln!(w, "5")?;
    }
    writeln!(w, "CELL_DATA {m}")?;
    writeln!(w, "SCALARS h_T double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for h in mesh.element_sizes() {
        writeln!(w, "{}", fmt_float(*h))?;
    }
    if let Some((name, values)) = point_data {
        if values.len() != n {
            return Err(crate::Error::InvalidConfig(format!(
                "point field '{name}' has {} values for {n} points",
                values.len()
            )));
        }
        writeln!(w, "POINT_DATA {n}")?;
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values {
            writeln!(w, "{}", fmt_float(*v))?;
        }
    }
    Ok(())
}
