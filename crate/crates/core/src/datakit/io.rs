//! Dataset directory:
//!
//! ```text
//! <dir>/manifest      text, one `key value...` entry per line
//! <dir>/query.bin     "MRDA" | version | count u64 | count × f32 | crc64
//! <dir>/target.bin    same framing
//! ```
//!
//! The manifest carries the schema version, dimensions, counts, seed, the
//! split of every subject and one `sample` line per paired sample, in array
//! order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, PairedSample, Split};
use crate::binio::{FrameReader, FrameWriter};
use crate::embedding_db::TargetShape;
use crate::error::{MrisError, Result};
use crate::types::RecordId;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const ARRAY_MAGIC: &[u8; 4] = b"MRDA";
const ARRAY_VERSION: u32 = 1;
const QUERY_FILE: &str = "query.bin";
const TARGET_FILE: &str = "target.bin";

pub fn dataset_save(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    fs::create_dir_all(dir).map_err(|e| MrisError::io(dir, e))?;
    let n = ds.samples.len();
    let mut m = String::new();
    let _ = writeln!(m, "schema mris-dataset {MANIFEST_SCHEMA}");
    let _ = writeln!(m, "query_dim {}", ds.query_dim);
    let _ = writeln!(m, "height {}", ds.shape.height);
    let _ = writeln!(m, "width {}", ds.shape.width);
    let _ = writeln!(m, "samples {n}");
    let _ = writeln!(m, "subjects {}", ds.splits.len());
    let _ = writeln!(m, "seed {}", ds.seed);
    let _ = writeln!(m, "array query {QUERY_FILE} {}", n * ds.query_dim);
    let _ = writeln!(m, "array target {TARGET_FILE} {}", n * ds.shape.len());
    for (subject, split) in &ds.splits {
        let _ = writeln!(m, "subject {subject} {}", split.name());
    }
    for s in &ds.samples {
        let prog = match s.progression {
            Some(true) => "1",
            Some(false) => "0",
            None => "-",
        };
        let _ = writeln!(m, "sample {} {} {} {prog}", s.id.subject, s.id.timepoint, s.stratum);
    }

    write_array(&dir.join(QUERY_FILE), ds.samples.iter().map(|s| s.query.as_slice()))?;
    write_array(&dir.join(TARGET_FILE), ds.samples.iter().map(|s| s.target.as_slice()))?;
    let path = dir.join("manifest");
    fs::write(&path, m).map_err(|e| MrisError::io(&path, e))
}

fn write_array<'a>(path: &Path, rows: impl Iterator<Item = &'a [f32]> + Clone) -> Result<()> {
    let count: usize = rows.clone().map(<[f32]>::len).sum();
    let mut w = FrameWriter::new(ARRAY_MAGIC);
    w.u32(ARRAY_VERSION);
    w.u64(count as u64);
    for r in rows {
        w.f32s(r);
    }
    w.write_to(path)
}

fn read_array(path: &Path, expected: usize) -> Result<Vec<f32>> {
    let mut r = FrameReader::open(path, ARRAY_MAGIC)?;
    r.version(ARRAY_VERSION)?;
    let count = r.u64()? as usize;
    if count != expected {
        return Err(MrisError::format(
            path,
            format!("array holds {count} values, manifest expects {expected}"),
        ));
    }
    let data = r.f32s(count)?;
    r.finish()?;
    Ok(data)
}

/// Writes one flat array in the dataset array format.
pub fn array_save(path: &Path, values: &[f32]) -> Result<()> {
    write_array(path, std::iter::once(values))
}

/// Reads a flat array written by [`array_save`].
pub fn array_load(path: &Path) -> Result<Vec<f32>> {
    let mut r = FrameReader::open(path, ARRAY_MAGIC)?;
    r.version(ARRAY_VERSION)?;
    let count = r.u64()? as usize;
    let data = r.f32s(count)?;
    r.finish()?;
    Ok(data)
}

struct ManifestSample {
    id: RecordId,
    stratum: u8,
    progression: Option<bool>,
}

pub fn dataset_load(dir: &Path) -> Result<Dataset> {
    let path = dir.join("manifest");
    let text = fs::read_to_string(&path).map_err(|e| MrisError::io(&path, e))?;
    let bad = |line: usize, why: &str| MrisError::format(&path, format!("line {}: {why}", line + 1));

    let mut scalars: BTreeMap<String, u64> = BTreeMap::new();
    let mut arrays: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut splits = BTreeMap::new();
    let mut entries = Vec::new();
    let mut schema_seen = false;

    for (ln, line) in text.lines().enumerate() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            [] => continue,
            ["schema", "mris-dataset", v] => {
                let v: u32 = v.parse().map_err(|_| bad(ln, "bad schema version"))?;
                if v != MANIFEST_SCHEMA {
                    return Err(bad(ln, &format!("unsupported schema version {v}")));
                }
                schema_seen = true;
            }
            ["array", name, file, count] => {
                let count = count.parse().map_err(|_| bad(ln, "bad array count"))?;
                arrays.insert(name.to_string(), (file.to_string(), count));
            }
            ["subject", name, split] => {
                let split = Split::parse(split).ok_or_else(|| bad(ln, "unknown split"))?;
                splits.insert(name.to_string(), split);
            }
            ["sample", subject, tp, stratum, prog] => {
                let progression = match *prog {
                    "1" => Some(true),
                    "0" => Some(false),
                    "-" => None,
                    _ => return Err(bad(ln, "bad progression flag")),
                };
                entries.push(ManifestSample {
                    id: RecordId::new(
                        *subject,
                        tp.parse().map_err(|_| bad(ln, "bad timepoint"))?,
                    ),
                    stratum: stratum.parse().map_err(|_| bad(ln, "bad stratum"))?,
                    progression,
                });
            }
            [key, value] => {
                let v = value.parse().map_err(|_| bad(ln, "bad integer"))?;
                scalars.insert(key.to_string(), v);
            }
            _ => return Err(bad(ln, "unrecognized entry")),
        }
    }
    if !schema_seen {
        return Err(MrisError::format(&path, "missing schema line"));
    }
    let get = |k: &str| {
        scalars
            .get(k)
            .copied()
            .ok_or_else(|| MrisError::format(&path, format!("missing `{k}`")))
    };
    let query_dim = get("query_dim")? as usize;
    let shape = TargetShape::new(get("height")? as usize, get("width")? as usize);
    let n = get("samples")? as usize;
    let seed = get("seed")?;
    if entries.len() != n {
        return Err(MrisError::format(
            &path,
            format!("manifest lists {} samples, header says {n}", entries.len()),
        ));
    }
    if get("subjects")? as usize != splits.len() {
        return Err(MrisError::format(&path, "subject count mismatch"));
    }

    let array = |name: &str, per_sample: usize| -> Result<Vec<f32>> {
        let (file, count) = arrays
            .get(name)
            .ok_or_else(|| MrisError::format(&path, format!("missing array `{name}`")))?;
        if *count != n * per_sample {
            return Err(MrisError::format(
                &path,
                format!("array `{name}` count {count} != {n} samples × {per_sample}"),
            ));
        }
        read_array(&dir.join(file), *count)
    };
    let queries = array("query", query_dim)?;
    let targets = array("target", shape.len())?;

    let samples = entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| PairedSample {
            id: e.id,
            query: queries[i * query_dim..(i + 1) * query_dim].to_vec(),
            target: targets[i * shape.len()..(i + 1) * shape.len()].to_vec(),
            stratum: e.stratum,
            progression: e.progression,
        })
        .collect();
    let ds = Dataset {
        query_dim,
        shape,
        seed,
        samples,
        splits,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datakit::{generate_synthetic, GeneratorConfig};

    fn small() -> Dataset {
        generate_synthetic(&GeneratorConfig {
            num_subjects: 15,
            latent_dim: 3,
            query_dim: 6,
            height: 2,
            width: 3,
            seed: 9,
            ..GeneratorConfig::default()
        })
        .unwrap()
        .dataset
    }

    #[test]
    fn round_trip_is_identical() {
        let dir = tempfile::tempdir().unwrap();
        let ds = small();
        dataset_save(&ds, dir.path()).unwrap();
        let back = dataset_load(dir.path()).unwrap();
        assert_eq!(back, ds);
        let manifest = fs::read(dir.path().join("manifest")).unwrap();
        let query = fs::read(dir.path().join(QUERY_FILE)).unwrap();
        dataset_save(&back, dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join("manifest")).unwrap(), manifest);
        assert_eq!(fs::read(dir.path().join(QUERY_FILE)).unwrap(), query);
    }

    #[test]
    fn single_array_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.bin");
        let v = vec![1.5f32, -0.0, f32::MIN_POSITIVE, 3.25];
        array_save(&path, &v).unwrap();
        let back = array_load(&path).unwrap();
        assert_eq!(back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn truncated_array_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        dataset_save(&small(), dir.path()).unwrap();
        let p = dir.path().join(TARGET_FILE);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        assert!(dataset_load(dir.path()).is_err());
    }

    #[test]
    fn manifest_count_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        dataset_save(&small(), dir.path()).unwrap();
        let p = dir.path().join("manifest");
        let text = fs::read_to_string(&p).unwrap();
        let line = text.lines().find(|l| l.starts_with("array query")).unwrap();
        let parts: Vec<&str> = line.split(' ').collect();
        let bumped = format!("array query {} {}", parts[2], parts[3].parse::<usize>().unwrap() + 6);
        fs::write(&p, text.replace(line, &bumped)).unwrap();
        let err = dataset_load(dir.path()).unwrap_err().to_string();
        assert!(err.contains("count"), "{err}");

        // drop a sample line
        dataset_save(&small(), dir.path()).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let last = text.lines().rev().find(|l| l.starts_with("sample")).unwrap();
        fs::write(&p, text.replace(&format!("{last}\n"), "")).unwrap();
        assert!(dataset_load(dir.path()).is_err());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        dataset_save(&small(), dir.path()).unwrap();
        let p = dir.path().join("manifest");
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("schema mris-dataset 1", "schema mris-dataset 2")).unwrap();
        assert!(dataset_load(dir.path()).unwrap_err().to_string().contains("version"));
    }
}
