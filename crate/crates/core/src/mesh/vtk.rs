//! Legacy ASCII VTK unstructured-grid output (cell type 10, tetrahedra).

use super::TetMesh;
use std::io::{self, Write};

/// Nodal data attached to the exported grid.
pub enum PointData<'a> {
    Scalars(&'a str, &'a [f64]),
    /// Interleaved `x, y, z` per vertex.
    Vectors(&'a str, &'a [f64]),
}

pub fn write_vtk<W: Write>(out: &mut W, mesh: &TetMesh, title: &str, data: &[PointData<'_>]) -> io::Result<()> {
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "{}", title.lines().next().unwrap_or("mesh"))?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.num_vertices())?;
    for x in mesh.vertices() {
        writeln!(out, "{:e} {:e} {:e}", x.x, x.y, x.z)?;
    }
    writeln!(out, "CELLS {} {}", mesh.num_tets(), 5 * mesh.num_tets())?;
    for t in mesh.tets() {
        writeln!(out, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.num_tets())?;
    for _ in 0..mesh.num_tets() {
        writeln!(out, "10")?;
    }
    if data.is_empty() {
        return Ok(());
    }
    writeln!(out, "POINT_DATA {}", mesh.num_vertices())?;
    for field in data {
        match field {
            PointData::Scalars(name, values) => {
                check_len(values.len(), mesh.num_vertices(), name)?;
                writeln!(out, "SCALARS {name} double 1")?;
                writeln!(out, "LOOKUP_TABLE default")?;
                for v in values.iter() {
                    writeln!(out, "{v:e}")?;
                }
            }
            PointData::Vectors(name, values) => {
                check_len(values.len(), 3 * mesh.num_vertices(), name)?;
                writeln!(out, "VECTORS {name} double")?;
                for v in values.chunks_exact(3) {
                    writeln!(out, "{:e} {:e} {:e}", v[0], v[1], v[2])?;
                }
            }
        }
    }
    Ok(())
}

fn check_len(got: usize, expected: usize, name: &str) -> io::Result<()> {
    if got == expected {
        Ok(())
    } else {
        Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            format!("point data '{name}' has {got} values, expected {expected}"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_box_mesh, BoxBounds};

    #[test]
    fn writes_legacy_header_and_cells() {
        let m = build_box_mesh(BoxBounds::cube(2.0), 2.0).unwrap();
        let rho = vec![0.0; m.num_vertices()];
        let mut buf = Vec::new();
        write_vtk(&mut buf, &m, "box", &[PointData::Scalars("rho", &rho)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\nbox\nASCII\nDATASET UNSTRUCTURED_GRID\n"));
        assert!(text.contains("POINTS 27 double"));
        assert!(text.contains("CELLS 48 240"));
        assert_eq!(text.lines().filter(|l| *l == "10").count(), 48);
        assert!(text.contains("SCALARS rho double 1"));
        let bad = [PointData::Vectors("u", &rho)];
        assert!(write_vtk(&mut Vec::new(), &m, "box", &bad).is_err());
    }
}
