//! IDX and CSV dataset files.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use alpool_core::{Dataset, Features};
use flate2::read::GzDecoder;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: byte {offset}: {msg}", path.display())]
    Idx {
        path: PathBuf,
        offset: usize,
        msg: String,
    },
    #[error("{}: row {row}: {msg}", path.display())]
    Csv {
        path: PathBuf,
        row: usize,
        msg: String,
    },
    #[error(transparent)]
    Dataset(#[from] alpool_core::Error),
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, LoadError> {
    let io = |source| LoadError::Io {
        path: path.to_owned(),
        source,
    };
    let mut file = File::open(path).map_err(io)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file).read_to_end(&mut bytes).map_err(io)?;
    } else {
        file.read_to_end(&mut bytes).map_err(io)?;
    }
    Ok(bytes)
}

/// Big-endian reader that reports the offset of whatever it fails on.
struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> LoadError {
        LoadError::Idx {
            path: self.path.to_owned(),
            offset,
            msg: msg.into(),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, LoadError> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], LoadError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(self.fail(
                self.bytes.len(),
                format!("truncated {what}: needed {n} bytes at offset {}", self.pos),
            ));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn expect_magic(&mut self, magic: u32) -> Result<(), LoadError> {
        let got = self.u32("magic number")?;
        if got != magic {
            return Err(self.fail(0, format!("bad magic 0x{got:08x}, expected 0x{magic:08x}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), LoadError> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

/// Images of an IDX file as `(count, rows * cols, pixels)`.
pub fn parse_idx_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), LoadError> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.expect_magic(IDX_IMAGES_MAGIC)?;
    let n = c.u32("image count")? as usize;
    let rows = c.u32("row count")? as usize;
    let cols = c.u32("column count")? as usize;
    let dim = rows * cols;
    if dim == 0 {
        return Err(c.fail(8, "images have zero pixels"));
    }
    let pixels = c.take(n * dim, "pixel data")?.to_vec();
    c.finish()?;
    Ok((n, dim, pixels))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, LoadError> {
    let mut c = Cursor { path, bytes, pos: 0 };
    c.expect_magic(IDX_LABELS_MAGIC)?;
    let n = c.u32("label count")? as usize;
    let labels = c.take(n, "label data")?.to_vec();
    c.finish()?;
    Ok(labels)
}

/// Loads an IDX image/label pair; `.gz` files are decompressed. Pixels are
/// scaled to [0, 1] and the class count is the largest label plus one.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, LoadError> {
    let (n, dim, pixels) = parse_idx_images(images_path, &read_bytes(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_bytes(labels_path)?)?;
    if labels.len() != n {
        return Err(LoadError::Idx {
            path: labels_path.to_owned(),
            offset: 4,
            msg: format!(
                "{} labels but {} images in {}",
                labels.len(),
                n,
                images_path.display()
            ),
        });
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let class_count = labels.iter().max().map_or(0, |&m| m + 1);
    let features = Features::new(dim, pixels.iter().map(|&p| f32::from(p) / 255.0).collect())?;
    let name = images_path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    Ok(Dataset::new(name, features, labels, class_count)?)
}

/// A CSV dataset with the label-name mapping (class `i` is `class_names[i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub dataset: Dataset,
    pub class_names: Vec<String>,
}

/// Reads a headed, comma-delimited table. Features are the non-label
/// columns in header order; labels are numbered by first appearance,
/// continuing `known_classes` when given.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    known_classes: &[String],
) -> Result<CsvDataset, LoadError> {
    let csv_err = |row: usize, msg: String| LoadError::Csv {
        path: path.to_owned(),
        row,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_err(0, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(0, e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Err(csv_err(0, "empty file".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| csv_err(0, format!("no column named '{label_column}'")))?;
    let dim = headers.len() - 1;
    let mut class_names = known_classes.to_vec();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_err(row, e.to_string()))?;
        if record.len() != headers.len() {
            return Err(csv_err(
                row,
                format!("{} fields, header has {}", record.len(), headers.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                let class = match class_names.iter().position(|c| c == field) {
                    Some(c) => c,
                    None => {
                        class_names.push(field.to_owned());
                        class_names.len() - 1
                    }
                };
                labels.push(class);
            } else {
                let v: f32 = field.trim().parse().map_err(|_| {
                    csv_err(row, format!("non-numeric value '{field}' in column '{}'", &headers[j]))
                })?;
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(csv_err(0, "no data rows".into()));
    }
    let features = Features::new(dim, data)?;
    let name = path
        .file_name()
        .map_or_else(String::new, |f| f.to_string_lossy().into_owned());
    let dataset = Dataset::new(name, features, labels, class_names.len())?;
    Ok(CsvDataset {
        dataset,
        class_names,
    })
}

/// Writes `dataset` as CSV: feature columns `f0..` then `label_column`
/// holding `class_names[label]`. Floats use the shortest round-trip form.
pub fn write_csv(
    path: &Path,
    dataset: &Dataset,
    class_names: &[String],
    label_column: &str,
) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let dim = dataset.features().dim();
    let mut header: Vec<String> = (0..dim).map(|j| format!("f{j}")).collect();
    header.push(label_column.to_owned());
    w.write_record(&header)?;
    for id in dataset.ids() {
        let mut rec: Vec<String> = dataset.row(id).iter().map(|v| v.to_string()).collect();
        rec.push(class_names[dataset.label(id)].clone());
        w.write_record(&rec)?;
    }
    crate::output::write_atomic(path, &w.into_inner()?)
}
