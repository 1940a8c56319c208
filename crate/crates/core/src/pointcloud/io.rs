//! ASCII OFF mesh reader and ASCII PLY point readers/writers.
//!
//! PLY vertices carry `x y z` plus an optional integer `label` property; the
//! colored writer adds `uchar red, green, blue` drawn from a fixed 27-entry
//! palette. Coordinates are written with 9 significant digits, so a written
//! file re-reads to exactly the value printed.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Mesh, PointCloud};
use crate::error::{Error, Result};

/// 27 visually distinct colors: a 3x3x3 grid over {40, 150, 250} per channel.
pub const PALETTE: [[u8; 3]; 27] = {
    let levels = [40u8, 150, 250];
    let mut table = [[0u8; 3]; 27];
    let mut i = 0;
    while i < 27 {
        table[i] = [levels[i % 3], levels[(i / 3) % 3], levels[(i / 9) % 3]];
        i += 1;
    }
    table
};

/// Color for an integer id (voxel ids wrap for `l > 3`).
pub fn palette_color(id: usize) -> [u8; 3] {
    PALETTE[id % PALETTE.len()]
}

/// 9-significant-digit decimal, fixed-exponent scientific form.
fn fmt_coord(v: f64) -> String {
    format!("{:.8e}", v)
}

struct Lines<R: BufRead> {
    reader: R,
    line_no: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Self { reader, line_no: 0 }
    }

    /// Next non-empty, non-comment line.
    fn next_content(&mut self) -> Result<Option<(usize, String)>> {
        loop {
            let mut buf = String::new();
            let n = self.reader.read_line(&mut buf)?;
            if n == 0 {
                return Ok(None);
            }
            self.line_no += 1;
            let trimmed = buf.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok(Some((self.line_no, trimmed.to_string())));
        }
    }

    fn expect_content(&mut self, what: &str) -> Result<(usize, String)> {
        self.next_content()?.ok_or_else(|| Error::Parse {
            line: self.line_no + 1,
            msg: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_field<T: std::str::FromStr>(token: &str, line: usize, what: &str) -> Result<T> {
    token.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} from {token:?}"),
    })
}

/// Read an ASCII OFF triangle mesh. Accepts counts either on the `OFF` line or
/// on the following line.
pub fn read_off(path: impl AsRef<Path>) -> Result<Mesh> {
    let mut lines = Lines::new(BufReader::new(File::open(path)?));
    let (header_line, header) = lines.expect_content("OFF header")?;
    let mut tokens: Vec<String>;
    if header == "OFF" {
        let (counts_line, counts) = lines.expect_content("vertex/face counts")?;
        tokens = counts.split_whitespace().map(str::to_string).collect();
        if tokens.len() < 2 {
            return Err(Error::Parse { line: counts_line, msg: "expected `V F [E]` counts".into() });
        }
    } else if let Some(rest) = header.strip_prefix("OFF") {
        tokens = rest.split_whitespace().map(str::to_string).collect();
        if tokens.len() < 2 {
            return Err(Error::Parse { line: header_line, msg: "expected `OFF V F [E]`".into() });
        }
    } else {
        return Err(Error::Parse { line: header_line, msg: format!("expected OFF header, got {header:?}") });
    }
    tokens.truncate(2);
    let v: usize = parse_field(&tokens[0], header_line, "vertex count")?;
    let f: usize = parse_field(&tokens[1], header_line, "face count")?;

    let mut vertices = Vec::with_capacity(v);
    for _ in 0..v {
        let (line, text) = lines.expect_content("vertex row")?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() < 3 {
            return Err(Error::Parse { line, msg: format!("vertex row needs 3 coordinates, got {}", cols.len()) });
        }
        vertices.push([
            parse_field(cols[0], line, "x")?,
            parse_field(cols[1], line, "y")?,
            parse_field(cols[2], line, "z")?,
        ]);
    }
    let mut faces = Vec::with_capacity(f);
    for _ in 0..f {
        let (line, text) = lines.expect_content("face row")?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        let n: usize = parse_field(cols[0], line, "face vertex count")?;
        if n != 3 || cols.len() < 4 {
            return Err(Error::Parse { line, msg: format!("only triangular faces supported, got {text:?}") });
        }
        let face = [
            parse_field(cols[1], line, "index")?,
            parse_field(cols[2], line, "index")?,
            parse_field(cols[3], line, "index")?,
        ];
        if face.iter().any(|&i: &usize| i >= v) {
            return Err(Error::Parse { line, msg: format!("face index out of range in {text:?}") });
        }
        faces.push(face);
    }
    Mesh::new(vertices, faces)
}

struct PlyHeader {
    vertex_count: usize,
    /// Column position of x, y, z, and optionally label.
    x: usize,
    y: usize,
    z: usize,
    label: Option<usize>,
    columns: usize,
}

fn parse_ply_header<R: BufRead>(lines: &mut Lines<R>) -> Result<PlyHeader> {
    let (line, magic) = lines.expect_content("ply magic")?;
    if magic != "ply" {
        return Err(Error::Parse { line, msg: format!("expected `ply`, got {magic:?}") });
    }
    let (line, format) = lines.expect_content("format line")?;
    if !format.starts_with("format ascii") {
        return Err(Error::Parse { line, msg: format!("only ascii PLY supported, got {format:?}") });
    }
    let mut vertex_count = None;
    let mut in_vertex_element = false;
    let mut props: Vec<String> = Vec::new();
    loop {
        let (line, text) = lines.expect_content("header line")?;
        if text == "end_header" {
            break;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        match cols[0] {
            "comment" => {}
            "element" => {
                if cols.len() < 3 {
                    return Err(Error::Parse { line, msg: format!("bad element line {text:?}") });
                }
                in_vertex_element = cols[1] == "vertex";
                if in_vertex_element {
                    vertex_count = Some(parse_field(cols[2], line, "vertex count")?);
                } else if parse_field::<usize>(cols[2], line, "element count")? != 0 {
                    return Err(Error::Parse {
                        line,
                        msg: format!("non-vertex element {:?} with nonzero count unsupported", cols[1]),
                    });
                }
            }
            "property" => {
                if in_vertex_element {
                    let name = cols.last().unwrap().to_string();
                    props.push(name);
                }
            }
            other => {
                return Err(Error::Parse { line, msg: format!("unexpected header keyword {other:?}") });
            }
        }
    }
    let vertex_count = vertex_count
        .ok_or(Error::Parse { line: lines.line_no, msg: "missing vertex element".into() })?;
    let find = |name: &str| props.iter().position(|p| p == name);
    let (x, y, z) = match (find("x"), find("y"), find("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(Error::Parse {
                line: lines.line_no,
                msg: "vertex element must declare x, y, z".into(),
            })
        }
    };
    Ok(PlyHeader { vertex_count, x, y, z, label: find("label"), columns: props.len() })
}

/// Read an ASCII PLY point file. A `label` property becomes per-point part
/// labels; color properties are ignored.
pub fn read_ply_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let mut lines = Lines::new(BufReader::new(File::open(path)?));
    let header = parse_ply_header(&mut lines)?;
    let mut points = Vec::with_capacity(header.vertex_count);
    let mut labels = header.label.map(|_| Vec::with_capacity(header.vertex_count));
    for _ in 0..header.vertex_count {
        let (line, text) = lines.expect_content("vertex row")?;
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() < header.columns {
            return Err(Error::Parse {
                line,
                msg: format!("vertex row has {} of {} columns", cols.len(), header.columns),
            });
        }
        points.push([
            parse_field(cols[header.x], line, "x")?,
            parse_field(cols[header.y], line, "y")?,
            parse_field(cols[header.z], line, "z")?,
        ]);
        if let (Some(col), Some(labels)) = (header.label, labels.as_mut()) {
            labels.push(parse_field::<usize>(cols[col], line, "label")?);
        }
    }
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let cloud = PointCloud::new(points, name)?;
    match labels {
        Some(l) => cloud.with_parts(l),
        None => Ok(cloud),
    }
}

fn ply_header(out: &mut impl Write, count: usize, with_label: bool, with_color: bool) -> Result<()> {
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "element vertex {count}")?;
    writeln!(out, "property double x")?;
    writeln!(out, "property double y")?;
    writeln!(out, "property double z")?;
    if with_label {
        writeln!(out, "property int label")?;
    }
    if with_color {
        writeln!(out, "property uchar red")?;
        writeln!(out, "property uchar green")?;
        writeln!(out, "property uchar blue")?;
    }
    writeln!(out, "end_header")?;
    Ok(())
}

/// Write points (and part labels, when present) as ASCII PLY.
pub fn write_ply_points(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let labels = cloud.part_labels.as_deref();
    ply_header(&mut out, cloud.len(), labels.is_some(), false)?;
    for (i, p) in cloud.points.iter().enumerate() {
        write!(out, "{} {} {}", fmt_coord(p[0]), fmt_coord(p[1]), fmt_coord(p[2]))?;
        if let Some(labels) = labels {
            write!(out, " {}", labels[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Write points colored by integer id through the fixed palette. The id is
/// also stored in the `label` property.
pub fn write_ply_colored(path: impl AsRef<Path>, cloud: &PointCloud, color_ids: &[usize]) -> Result<()> {
    if color_ids.len() != cloud.len() {
        return Err(Error::Dataset(format!(
            "{} color ids for {} points",
            color_ids.len(),
            cloud.len()
        )));
    }
    let mut out = BufWriter::new(File::create(path)?);
    ply_header(&mut out, cloud.len(), true, true)?;
    for (p, &id) in cloud.points.iter().zip(color_ids) {
        let [r, g, b] = palette_color(id);
        writeln!(
            out,
            "{} {} {} {id} {r} {g} {b}",
            fmt_coord(p[0]),
            fmt_coord(p[1]),
            fmt_coord(p[2])
        )?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn off_minimal_file() {
        let f = write_temp("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let mesh = read_off(f.path()).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
        assert_eq!(mesh.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_counts_on_header_line() {
        let f = write_temp("OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n");
        let mesh = read_off(f.path()).unwrap();
        assert_eq!(mesh.vertices.len(), 3);
    }

    #[test]
    fn off_truncated_reports_line() {
        let f = write_temp("OFF\n3 1 0\n0 0 0\n1 0 0\n");
        match read_off(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn off_bad_index_reports_line() {
        let f = write_temp("OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n");
        assert!(matches!(read_off(f.path()), Err(Error::Parse { line: 6, .. })));
    }

    #[test]
    fn ply_round_trip_exact_for_short_decimals() {
        let cloud = PointCloud::new(
            vec![[0.125, -0.5, 0.75], [1.0, 0.0, -0.25]],
            "rt",
        )
        .unwrap()
        .with_parts(vec![3, 1])
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.ply");
        write_ply_points(&path, &cloud).unwrap();
        let back = read_ply_points(&path).unwrap();
        assert_eq!(back.points, cloud.points);
        assert_eq!(back.part_labels, cloud.part_labels);
    }

    #[test]
    fn ply_double_round_trip_is_stable() {
        let mut r = crate::rng::stream(21, "plyrt");
        use rand::Rng;
        let pts: Vec<[f64; 3]> = (0..128)
            .map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)])
            .collect();
        let cloud = PointCloud::new(pts, "rt2").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ply");
        let p2 = dir.path().join("b.ply");
        write_ply_points(&p1, &cloud).unwrap();
        let once = read_ply_points(&p1).unwrap();
        write_ply_points(&p2, &once).unwrap();
        let twice = read_ply_points(&p2).unwrap();
        assert_eq!(once.points, twice.points);
        // One 9-digit quantization stays within 1e-8 of the source.
        for (a, b) in cloud.points.iter().zip(&once.points) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ply_truncated_is_parse_error() {
        let f = write_temp("ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n");
        assert!(matches!(read_ply_points(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn ply_binary_rejected() {
        let f = write_temp("ply\nformat binary_little_endian 1.0\nend_header\n");
        assert!(matches!(read_ply_points(f.path()), Err(Error::Parse { .. })));
    }

    #[test]
    fn colored_ply_uses_palette_exactly() {
        let cloud = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], "c").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        write_ply_colored(&path, &cloud, &[0, 26]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| l.contains(' ') && !l.starts_with(|c: char| c.is_alphabetic())).collect();
        let expect0 = PALETTE[0];
        let expect26 = PALETTE[26];
        assert!(rows[0].ends_with(&format!("0 {} {} {}", expect0[0], expect0[1], expect0[2])));
        assert!(rows[1].ends_with(&format!("26 {} {} {}", expect26[0], expect26[1], expect26[2])));
        // The colored file reads back as points + labels.
        let back = read_ply_points(&path).unwrap();
        assert_eq!(back.part_labels, Some(vec![0, 26]));
    }

    #[test]
    fn palette_has_distinct_entries() {
        for i in 0..27 {
            for j in (i + 1)..27 {
                assert_ne!(PALETTE[i], PALETTE[j]);
            }
        }
    }
}
