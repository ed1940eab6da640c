//! CFF1 field files and the JSON phase-point manifest.
//!
//! A CFF1 file is a short text header followed by a data block:
//!
//! ```text
//! CFF1
//! n=3
//! shape=sym2
//! points=16,16,16
//! period=6.283185307179586
//! encoding=binary
//! data
//! <block>
//! ```
//!
//! The block holds 64-bit floats in row-major point order (last axis fastest)
//! with the components of each point stored contiguously. `binary` blocks are
//! little-endian and round-trip bit-exactly; `text` blocks hold one value per
//! line in shortest round-trip decimal form. Symmetric tensors store the upper
//! triangle row by row, rank-3 tensors all `n³` entries.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::fields::PhasePoint;
use crate::grid::{Grid, GridSpec};
use crate::tensor::{Field, Shape, TensorComponents, TensorField};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    #[default]
    Binary,
    Text,
}

impl Encoding {
    fn name(self) -> &'static str {
        match self {
            Encoding::Binary => "binary",
            Encoding::Text => "text",
        }
    }
}

/// Parsed CFF1 header.
#[derive(Clone, Debug, PartialEq)]
pub struct CffHeader {
    pub n: usize,
    pub shape: Shape,
    pub points: Vec<usize>,
    pub period: f64,
    pub encoding: Encoding,
}

impl CffHeader {
    pub fn total_points(&self) -> usize {
        self.points.iter().product()
    }

    /// Checks the header against a grid.
    pub fn check(&self, grid: &Grid) -> Result<()> {
        let uniform = self.points.iter().all(|p| *p == grid.points_per_axis());
        if self.n != grid.dim() || !uniform || self.points.len() != grid.dim() {
            return Err(ForgeError::GridMismatch {
                expected: grid.total_points(),
                found: self.total_points(),
            });
        }
        if (self.period - grid.spec().period).abs() > 1e-12 * grid.spec().period {
            return Err(ForgeError::Format(format!(
                "period {} does not match grid period {}",
                self.period,
                grid.spec().period
            )));
        }
        Ok(())
    }
}

/// Serialises a field in CFF1 form.
pub fn encode<T: TensorComponents + ?Sized>(grid: &Grid, field: &T, encoding: Encoding) -> Vec<u8> {
    let n = grid.dim();
    let points = vec![grid.points_per_axis().to_string(); n].join(",");
    let mut out = format!(
        "CFF1\nn={n}\nshape={}\npoints={points}\nperiod={:?}\nencoding={}\ndata\n",
        field.shape().name(),
        grid.spec().period,
        encoding.name()
    )
    .into_bytes();
    let comps = field.components();
    for p in 0..grid.total_points() {
        for c in comps {
            let v = c.as_slice()[p];
            match encoding {
                Encoding::Binary => out.extend_from_slice(&v.to_le_bytes()),
                Encoding::Text => out.extend_from_slice(format!("{v:?}\n").as_bytes()),
            }
        }
    }
    out
}

fn header_value<'a>(line: &'a str, key: &str) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| ForgeError::Format(format!("expected `{key}=`, found `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| ForgeError::Format(format!("bad {what}: `{s}`")))
}

/// Parses a CFF1 byte stream.
pub fn decode(bytes: &[u8]) -> Result<(CffHeader, TensorField)> {
    let mut reader = BufReader::new(bytes);
    let mut lines = Vec::new();
    for _ in 0..7 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(ForgeError::Format("truncated header".into()));
        }
        lines.push(line.trim_end_matches(['\n', '\r']).to_string());
    }
    if lines[0] != "CFF1" {
        return Err(ForgeError::Format(format!("bad magic `{}`", lines[0])));
    }
    let n: usize = parse_num(header_value(&lines[1], "n")?, "dimension")?;
    let shape_name = header_value(&lines[2], "shape")?;
    let shape = Shape::parse(shape_name).ok_or_else(|| ForgeError::Format(format!("unknown shape `{shape_name}`")))?;
    let points = header_value(&lines[3], "points")?
        .split(',')
        .map(|s| parse_num(s, "point count"))
        .collect::<Result<Vec<usize>>>()?;
    if points.len() != n {
        return Err(ForgeError::Format(format!("{} point counts for n = {n}", points.len())));
    }
    let period: f64 = parse_num(header_value(&lines[4], "period")?, "period")?;
    let encoding = match header_value(&lines[5], "encoding")? {
        "binary" => Encoding::Binary,
        "text" => Encoding::Text,
        other => return Err(ForgeError::Format(format!("unknown encoding `{other}`"))),
    };
    if lines[6] != "data" {
        return Err(ForgeError::Format("missing `data` marker".into()));
    }
    let header = CffHeader {
        n,
        shape,
        points,
        period,
        encoding,
    };
    let total = header.total_points();
    let ncomp = shape.component_count(n);
    let mut rest = Vec::new();
    reader.read_to_end(&mut rest)?;
    let values: Vec<f64> = match encoding {
        Encoding::Binary => {
            if rest.len() != 8 * total * ncomp {
                return Err(ForgeError::Format(format!(
                    "binary block has {} bytes, expected {}",
                    rest.len(),
                    8 * total * ncomp
                )));
            }
            rest.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunk of 8")))
                .collect()
        }
        Encoding::Text => {
            let text = std::str::from_utf8(&rest).map_err(|_| ForgeError::Format("text block is not UTF-8".into()))?;
            let v = text
                .split_whitespace()
                .map(|s| parse_num(s, "value"))
                .collect::<Result<Vec<f64>>>()?;
            if v.len() != total * ncomp {
                return Err(ForgeError::Format(format!("text block has {} values, expected {}", v.len(), total * ncomp)));
            }
            v
        }
    };
    let comps = (0..ncomp)
        .map(|c| Field::from_vec((0..total).map(|p| values[p * ncomp + c]).collect()))
        .collect();
    Ok((header, TensorField { shape, comps }))
}

pub fn write_field<T: TensorComponents + ?Sized>(path: &Path, grid: &Grid, field: &T, encoding: Encoding) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(grid, field, encoding))?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(CffHeader, TensorField)> {
    decode(&fs::read(path)?)
}

/// Reads a field and checks it against `grid` and the expected shape.
pub fn read_field_on(path: &Path, grid: &Grid, shape: Shape) -> Result<TensorField> {
    let (h, f) = read_field(path)?;
    h.check(grid)?;
    if h.shape != shape {
        return Err(ForgeError::ShapeMismatch(format!(
            "{} holds a {} field, expected {}",
            path.display(),
            h.shape.name(),
            shape.name()
        )));
    }
    Ok(f)
}

/// JSON description of a phase point stored as CFF1 files. Relative paths
/// are resolved against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseManifest {
    pub grid: GridSpec,
    /// Effective `Λ` used for `Φ`.
    pub lambda: f64,
    pub metric: PathBuf,
    pub momentum: PathBuf,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Writes `<stem>.g.cff`, `<stem>.pi.cff` and `<stem>.json` into `dir`;
/// returns the manifest path.
pub fn write_phase_point(dir: &Path, stem: &str, grid: &Grid, p: &PhasePoint, encoding: Encoding) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let metric = PathBuf::from(format!("{stem}.g.cff"));
    let momentum = PathBuf::from(format!("{stem}.pi.cff"));
    write_field(&dir.join(&metric), grid, &p.g.0, encoding)?;
    write_field(&dir.join(&momentum), grid, &p.pi.0, encoding)?;
    let manifest = PhaseManifest {
        grid: grid.spec().clone(),
        lambda: grid.lambda(),
        metric,
        momentum,
    };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}

/// Loads a manifest and its fields; every field must match the manifest grid.
pub fn read_phase_point(path: &Path) -> Result<(PhaseManifest, Grid, PhasePoint)> {
    let manifest: PhaseManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
    let grid = Grid::new(manifest.grid.clone())?;
    let base = path.parent().unwrap_or(Path::new("."));
    let n = grid.dim();
    let g = read_field_on(&resolve(base, &manifest.metric), &grid, Shape::Sym2)?.into_sym(n);
    let pi = read_field_on(&resolve(base, &manifest.momentum), &grid, Shape::Sym2)?.into_sym(n);
    Ok((manifest, grid, PhasePoint::new(g, pi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::background;

    #[test]
    fn binary_and_text_round_trip_bit_exactly() {
        let grid = Grid::new(GridSpec::new(3, 8)).unwrap();
        let f = grid.random_sym(4, 2).unwrap();
        for enc in [Encoding::Binary, Encoding::Text] {
            let (h, back) = decode(&encode(&grid, &f, enc)).unwrap();
            assert_eq!(h.shape, Shape::Sym2);
            assert_eq!(h.points, vec![8, 8, 8]);
            h.check(&grid).unwrap();
            for (a, b) in back.comps.iter().zip(f.components()) {
                assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn rejects_bad_headers_and_blocks() {
        let grid = Grid::new(GridSpec::new(3, 4)).unwrap();
        let good = encode(&grid, &grid.random_scalar(1, 1).unwrap(), Encoding::Binary);
        assert!(matches!(decode(b"CFF2\n"), Err(ForgeError::Format(_))));
        assert!(matches!(decode(&good[..good.len() - 3]), Err(ForgeError::Format(_))));
        let text = String::from_utf8_lossy(&good[..60]).replace("shape=scalar", "shape=blob");
        assert!(decode(text.as_bytes()).is_err());
        let (h, _) = decode(&good).unwrap();
        let other = Grid::new(GridSpec::new(3, 8)).unwrap();
        assert!(matches!(h.check(&other), Err(ForgeError::GridMismatch { .. })));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::new(GridSpec::new(3, 4).with_tau(0.3)).unwrap();
        let p = background(&grid);
        let path = write_phase_point(dir.path(), "bg", &grid, &p, Encoding::Binary).unwrap();
        let (m, g2, q) = read_phase_point(&path).unwrap();
        assert_eq!(m.grid, *grid.spec());
        assert_eq!(g2.total_points(), grid.total_points());
        assert_eq!(q, p);
    }
}
