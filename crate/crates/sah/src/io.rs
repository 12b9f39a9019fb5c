//! Vector file I/O: fbin (u32 count, u32 dim, then count*dim f32, all
//! little-endian, row-major), CSV with an optional leading id column, and an
//! fvecs reader for conversion. Ground truth is JSON: query id -> user ids.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::vector::{DenseVector, ResultSet, VectorSet};

pub fn write_fbin(path: &Path, set: &VectorSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u32::<LittleEndian>(set.len() as u32)?;
    w.write_u32::<LittleEndian>(set.dim() as u32)?;
    for v in set.vectors() {
        for x in &v.coords {
            w.write_f32::<LittleEndian>(*x)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads an fbin file; ids are assigned 0..count in file order.
pub fn read_fbin(path: &Path) -> Result<VectorSet> {
    let mut r = BufReader::new(File::open(path)?);
    let count = r.read_u32::<LittleEndian>()? as usize;
    let dim = r.read_u32::<LittleEndian>()? as usize;
    if dim == 0 && count > 0 {
        return Err(Error::Format(format!(
            "{}: zero dimension with {count} vectors",
            path.display()
        )));
    }
    let mut vectors = Vec::with_capacity(count);
    for i in 0..count {
        let mut coords = Vec::with_capacity(dim);
        for _ in 0..dim {
            coords.push(r.read_f32::<LittleEndian>().map_err(|e| {
                Error::Format(format!("{}: truncated at vector {i}: {e}", path.display()))
            })?);
        }
        vectors.push(DenseVector::new(i as u32, coords));
    }
    VectorSet::new(dim, vectors)
}

/// Reads CSV, one vector per line. With `has_id`, the first column is the
/// integer id; otherwise ids are assigned 0..count in line order.
pub fn read_csv(path: &Path, has_id: bool) -> Result<VectorSet> {
    let r = BufReader::new(File::open(path)?);
    let mut vectors = Vec::new();
    let mut dim = None;
    for (line_no, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',').map(str::trim);
        let id = if has_id {
            let raw = fields.next().ok_or_else(|| {
                Error::Format(format!("{}:{}: empty line", path.display(), line_no + 1))
            })?;
            raw.parse::<u32>().map_err(|e| {
                Error::Format(format!(
                    "{}:{}: bad id {raw:?}: {e}",
                    path.display(),
                    line_no + 1
                ))
            })?
        } else {
            vectors.len() as u32
        };
        let coords: Vec<f32> = fields
            .map(|f| {
                f.parse::<f32>().map_err(|e| {
                    Error::Format(format!(
                        "{}:{}: bad value {f:?}: {e}",
                        path.display(),
                        line_no + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => dim = Some(coords.len()),
            Some(d) if d != coords.len() => {
                return Err(Error::Format(format!(
                    "{}:{}: {} values, expected {d}",
                    path.display(),
                    line_no + 1,
                    coords.len()
                )))
            }
            _ => {}
        }
        vectors.push(DenseVector::new(id, coords));
    }
    VectorSet::new(dim.unwrap_or(0), vectors)
}

pub fn write_csv(path: &Path, set: &VectorSet, with_id: bool) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in set.vectors() {
        let mut line = String::new();
        if with_id {
            line.push_str(&v.id.to_string());
        }
        for x in &v.coords {
            if !line.is_empty() {
                line.push(',');
            }
            line.push_str(&format!("{x}"));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads fvecs: per row, a u32 dimension followed by that many f32s.
pub fn read_fvecs(path: &Path) -> Result<VectorSet> {
    let mut r = BufReader::new(File::open(path)?);
    let mut vectors = Vec::new();
    let mut dim = None;
    loop {
        let row_dim = match r.read_u32::<LittleEndian>() {
            Ok(d) => d as usize,
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        };
        match dim {
            None => dim = Some(row_dim),
            Some(d) if d != row_dim => {
                return Err(Error::Format(format!(
                    "{}: row {} has dimension {row_dim}, expected {d}",
                    path.display(),
                    vectors.len()
                )))
            }
            _ => {}
        }
        let mut coords = Vec::with_capacity(row_dim);
        for _ in 0..row_dim {
            coords.push(r.read_f32::<LittleEndian>().map_err(|e| {
                Error::Format(format!(
                    "{}: truncated row {}: {e}",
                    path.display(),
                    vectors.len()
                ))
            })?);
        }
        vectors.push(DenseVector::new(vectors.len() as u32, coords));
    }
    VectorSet::new(dim.unwrap_or(0), vectors)
}

/// Reads a vector file by extension: .fbin, .csv, or .fvecs.
pub fn read_vectors(path: &Path) -> Result<VectorSet> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("fbin") => read_fbin(path),
        Some("csv") => read_csv(path, false),
        Some("fvecs") => read_fvecs(path),
        other => Err(Error::Format(format!(
            "{}: unsupported extension {other:?} (expected fbin, csv, or fvecs)",
            path.display()
        ))),
    }
}

pub fn write_truth(path: &Path, truth: &BTreeMap<u32, Vec<u32>>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, truth)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<u32, Vec<u32>>> {
    let mut buf = String::new();
    File::open(path)?.read_to_string(&mut buf)?;
    serde_json::from_str(&buf).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn truth_from_results(results: &[ResultSet]) -> BTreeMap<u32, Vec<u32>> {
    results
        .iter()
        .map(|r| (r.query_id, r.user_ids.iter().copied().collect()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_set() -> VectorSet {
        VectorSet::new(
            3,
            vec![
                DenseVector::new(0, vec![1.0, -2.5, 0.25]),
                DenseVector::new(1, vec![0.0, 3.5, -1.0]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn fbin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fbin");
        let set = sample_set();
        write_fbin(&path, &set).unwrap();
        let back = read_fbin(&path).unwrap();
        assert_eq!(back.dim(), 3);
        assert_eq!(back.len(), 2);
        for (a, b) in set.vectors().iter().zip(back.vectors()) {
            assert_eq!(a.coords, b.coords);
        }
        // header is 8 bytes; payload count*dim f32
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 2 * 3 * 4);
    }

    #[test]
    fn fbin_truncation_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fbin");
        write_fbin(&path, &sample_set()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_fbin(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip_with_and_without_ids() {
        let dir = tempfile::tempdir().unwrap();
        let set = sample_set();
        for with_id in [false, true] {
            let path = dir.path().join(format!("v{with_id}.csv"));
            write_csv(&path, &set, with_id).unwrap();
            let back = read_csv(&path, with_id).unwrap();
            assert_eq!(back.len(), 2);
            for (a, b) in set.vectors().iter().zip(back.vectors()) {
                assert_eq!(a.id, b.id);
                assert_eq!(a.coords, b.coords);
            }
        }
    }

    #[test]
    fn csv_ragged_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.csv");
        std::fs::write(&path, "1.0,2.0\n3.0\n").unwrap();
        assert!(matches!(read_csv(&path, false), Err(Error::Format(_))));
    }

    #[test]
    fn fvecs_reads_hand_built_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.fvecs");
        let mut bytes = Vec::new();
        for row in [[1.0f32, 2.0], [3.0, 4.0]] {
            bytes.write_u32::<LittleEndian>(2).unwrap();
            for x in row {
                bytes.write_f32::<LittleEndian>(x).unwrap();
            }
        }
        std::fs::write(&path, &bytes).unwrap();
        let set = read_fvecs(&path).unwrap();
        assert_eq!(set.dim(), 2);
        assert_eq!(set.get(1).coords, vec![3.0, 4.0]);
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("truth.json");
        let mut truth = BTreeMap::new();
        truth.insert(0u32, vec![1u32, 2, 3]);
        truth.insert(7u32, vec![]);
        write_truth(&path, &truth).unwrap();
        assert_eq!(read_truth(&path).unwrap(), truth);
    }
}
