//! Legacy ASCII VTK unstructured grids: leaves as quads or hexahedra.

use std::io::{self, Write};

use shiftflow::fem::FlowState;
use shiftflow::octree::Octree;

/// Corner order of a VTK quad/hexahedron in terms of the tree's corner bits.
const QUAD: [usize; 4] = [0, 1, 3, 2];
const HEX: [usize; 8] = [0, 1, 3, 2, 4, 5, 7, 6];

/// Writes every leaf with its `marker` code as cell data, and velocity
/// (three components) and pressure as point data when `state` is given.
pub fn write_grid<W: Write>(mut w: W, title: &str, tree: &Octree, markers: &[u8], state: Option<&FlowState>) -> io::Result<()> {
    let dim = tree.dim();
    let nn = tree.num_nodes();
    let nl = tree.num_leaves();
    let (order, cell_type): (&[usize], u8) = if dim == 2 { (&QUAD, 9) } else { (&HEX, 12) };
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nn} double")?;
    for n in 0..nn {
        let p = tree.node_point(n);
        writeln!(w, "{} {} {}", p[0], p[1], if dim == 3 { p[2] } else { 0.0 })?;
    }
    writeln!(w, "CELLS {nl} {}", nl * (order.len() + 1))?;
    for l in 0..nl {
        let nodes = tree.leaf_nodes(l);
        write!(w, "{}", order.len())?;
        for &c in order {
            write!(w, " {}", nodes[c])?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {nl}")?;
    for _ in 0..nl {
        writeln!(w, "{cell_type}")?;
    }
    writeln!(w, "CELL_DATA {nl}")?;
    writeln!(w, "SCALARS marker int 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for m in markers {
        writeln!(w, "{m}")?;
    }
    if let Some(s) = state {
        writeln!(w, "POINT_DATA {nn}")?;
        writeln!(w, "VECTORS velocity double")?;
        for n in 0..nn {
            let u = s.velocity(n);
            writeln!(w, "{} {} {}", u[0], u[1], u[2])?;
        }
        writeln!(w, "SCALARS pressure double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for n in 0..nn {
            writeln!(w, "{}", s.pressure(n))?;
        }
    }
    Ok(())
}
