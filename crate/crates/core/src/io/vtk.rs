//! Legacy ASCII VTK output on the active cells.

use std::fmt::Write as _;
use std::path::Path;

use crate::mesh::QuadMesh;

/// Fields written with a snapshot.
pub struct Snapshot<'a> {
    pub airy: &'a [f64],
    pub phase: &'a [f64],
    pub crack: &'a [bool],
    /// One value per active cell.
    pub xi: &'a [f64],
}

/// Renders the snapshot as a legacy `UNSTRUCTURED_GRID` of quads (type 9).
pub fn render(mesh: &QuadMesh, s: &Snapshot<'_>, title: &str) -> String {
    let nv = mesh.n_vertices();
    let nc = mesh.n_active();
    let mut o = String::with_capacity(64 * nv + 64 * nc);
    o.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(o, "{}", title.replace('\n', " "));
    o.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(o, "POINTS {nv} double");
    for p in mesh.vertices() {
        let _ = writeln!(o, "{} {} 0", p[0], p[1]);
    }
    let _ = writeln!(o, "CELLS {nc} {}", 5 * nc);
    for &c in mesh.active_cells() {
        let v = mesh.cell(c).vertices;
        let _ = writeln!(o, "4 {} {} {} {}", v[0], v[1], v[2], v[3]);
    }
    let _ = writeln!(o, "CELL_TYPES {nc}");
    for _ in 0..nc {
        o.push_str("9\n");
    }
    let _ = writeln!(o, "POINT_DATA {nv}");
    scalars(&mut o, "airy", s.airy.iter().copied());
    scalars(&mut o, "phase", s.phase.iter().copied());
    scalars(&mut o, "crack", s.crack.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let _ = writeln!(o, "CELL_DATA {nc}");
    scalars(&mut o, "xi", s.xi.iter().copied());
    scalars(&mut o, "level", mesh.active_cells().iter().map(|&c| mesh.cell(c).level() as f64));
    o
}

fn scalars(o: &mut String, name: &str, vals: impl Iterator<Item = f64>) {
    let _ = writeln!(o, "SCALARS {name} double 1\nLOOKUP_TABLE default");
    for v in vals {
        let _ = writeln!(o, "{v}");
    }
}

pub fn write(path: &Path, mesh: &QuadMesh, s: &Snapshot<'_>, title: &str) -> std::io::Result<()> {
    std::fs::write(path, render(mesh, s, title))
}

/// Parsed legacy VTK file: point coordinates, cells and named scalar arrays.
#[derive(Debug, Default)]
pub struct VtkData {
    pub points: Vec<[f64; 3]>,
    pub cells: Vec<Vec<usize>>,
    pub cell_types: Vec<u32>,
    pub point_data: Vec<(String, Vec<f64>)>,
    pub cell_data: Vec<(String, Vec<f64>)>,
}

impl VtkData {
    pub fn point_field(&self, name: &str) -> Option<&[f64]> {
        self.point_data.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }

    pub fn cell_field(&self, name: &str) -> Option<&[f64]> {
        self.cell_data.iter().find(|f| f.0 == name).map(|f| f.1.as_slice())
    }
}

/// Reads back files produced by [`render`].
pub fn parse(text: &str) -> Result<VtkData, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    if !header.starts_with("# vtk DataFile Version") {
        return Err("missing VTK header".into());
    }
    let _title = lines.next();
    let mut d = VtkData::default();
    let mut in_cells = false;
    let mut tokens: Vec<&str> = Vec::new();
    for l in lines {
        tokens.extend(l.split_whitespace());
    }
    let mut i = 0;
    let next = |i: &mut usize| -> Result<&str, String> {
        let t = tokens.get(*i).copied().ok_or("unexpected end of file")?;
        *i += 1;
        Ok(t)
    };
    let num = |s: &str| s.parse::<f64>().map_err(|e| format!("{s}: {e}"));
    let int = |s: &str| s.parse::<usize>().map_err(|e| format!("{s}: {e}"));
    while i < tokens.len() {
        match next(&mut i)? {
            "ASCII" | "DATASET" | "UNSTRUCTURED_GRID" => {}
            "POINTS" => {
                let n = int(next(&mut i)?)?;
                next(&mut i)?;
                for _ in 0..n {
                    d.points.push([num(next(&mut i)?)?, num(next(&mut i)?)?, num(next(&mut i)?)?]);
                }
            }
            "CELLS" => {
                let n = int(next(&mut i)?)?;
                next(&mut i)?;
                for _ in 0..n {
                    let k = int(next(&mut i)?)?;
                    let mut c = Vec::with_capacity(k);
                    for _ in 0..k {
                        c.push(int(next(&mut i)?)?);
                    }
                    d.cells.push(c);
                }
            }
            "CELL_TYPES" => {
                let n = int(next(&mut i)?)?;
                for _ in 0..n {
                    d.cell_types.push(int(next(&mut i)?)? as u32);
                }
            }
            "POINT_DATA" => {
                next(&mut i)?;
                in_cells = false;
            }
            "CELL_DATA" => {
                next(&mut i)?;
                in_cells = true;
            }
            "SCALARS" => {
                let name = next(&mut i)?.to_string();
                next(&mut i)?;
                next(&mut i)?;
                if next(&mut i)? != "LOOKUP_TABLE" {
                    return Err("expected LOOKUP_TABLE".into());
                }
                next(&mut i)?;
                let n = if in_cells { d.cells.len() } else { d.points.len() };
                let mut vals = Vec::with_capacity(n);
                for _ in 0..n {
                    vals.push(num(next(&mut i)?)?);
                }
                if in_cells {
                    d.cell_data.push((name, vals));
                } else {
                    d.point_data.push((name, vals));
                }
            }
            other => return Err(format!("unexpected token {other}")),
        }
    }
    Ok(d)
}
