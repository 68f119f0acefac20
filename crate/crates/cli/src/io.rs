//! Embedding file formats.
//!
//! Binary layout (all integers little-endian):
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0 | 4 | magic `MXE1` |
//! | 4 | 2 | version, `1` |
//! | 6 | 4 | `d` |
//! | 10 | 4 | `B` |
//! | 14 | `8·d·B` | f64 payload, column-major |
//!
//! An optional label block follows: the byte `0x4C` and then `B` u32 labels.
//!
//! The CSV form has a `d,B` header line followed by one column per line.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::CliError;

pub const MAGIC: &[u8; 4] = b"MXE1";
pub const VERSION: u16 = 1;
pub const LABEL_MARKER: u8 = 0x4C;
const HEADER_LEN: usize = 14;

/// A `d×B` matrix of feature columns with optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub columns: DMatrix<f64>,
    pub labels: Option<Vec<u32>>,
}

impl EmbeddingFile {
    pub fn new(columns: DMatrix<f64>) -> Self {
        Self { columns, labels: None }
    }

    pub fn d(&self) -> usize {
        self.columns.nrows()
    }

    pub fn batch_size(&self) -> usize {
        self.columns.ncols()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let d = u32::try_from(self.d()).map_err(|_| CliError::Shape("d does not fit in 32 bits".into()))?;
        let b = u32::try_from(self.batch_size()).map_err(|_| CliError::Shape("B does not fit in 32 bits".into()))?;
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.columns.len() + 1 + 4 * self.batch_size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        // nalgebra storage is column-major already.
        for v in self.columns.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.batch_size() {
                return Err(CliError::Shape(format!(
                    "{} labels for {} columns",
                    labels.len(),
                    self.batch_size()
                )));
            }
            out.push(LABEL_MARKER);
            for l in labels {
                if *l == u32::MAX {
                    return Err(CliError::Shape("label 4294967295 is reserved".into()));
                }
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() < HEADER_LEN {
            return Err(CliError::Parse(format!(
                "truncated header: {} bytes, need {HEADER_LEN} (byte offset {})",
                bytes.len(),
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(CliError::Parse("bad magic at byte offset 0, expected MXE1".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(CliError::Parse(format!(
                "unsupported version {version} at byte offset 4"
            )));
        }
        let d = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
        let b = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
        if d == 0 || b == 0 {
            return Err(CliError::Parse(format!(
                "empty matrix {d}x{b} declared at byte offset 6"
            )));
        }
        let payload_len = d
            .checked_mul(b)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| CliError::Parse("payload size overflows at byte offset 6".into()))?;
        let payload_end = HEADER_LEN
            .checked_add(payload_len)
            .ok_or_else(|| CliError::Parse("payload size overflows at byte offset 6".into()))?;
        if bytes.len() < payload_end {
            return Err(CliError::Parse(format!(
                "truncated payload: expected {payload_len} bytes from byte offset {HEADER_LEN}, file ends at byte offset {}",
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(d * b);
        for (i, chunk) in bytes[HEADER_LEN..payload_end].chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(CliError::Parse(format!(
                    "non-finite value at byte offset {}",
                    HEADER_LEN + 8 * i
                )));
            }
            values.push(v);
        }
        let columns = DMatrix::from_vec(d, b, values);
        let rest = &bytes[payload_end..];
        if rest.is_empty() {
            return Ok(Self { columns, labels: None });
        }
        if rest[0] != LABEL_MARKER {
            return Err(CliError::Parse(format!(
                "unexpected byte 0x{:02X} at byte offset {payload_end}, expected label marker 0x4C",
                rest[0]
            )));
        }
        let label_bytes = &rest[1..];
        if label_bytes.len() != 4 * b {
            return Err(CliError::Parse(format!(
                "label block at byte offset {} has {} bytes, expected {}",
                payload_end + 1,
                label_bytes.len(),
                4 * b
            )));
        }
        let mut labels = Vec::with_capacity(b);
        for (i, chunk) in label_bytes.chunks_exact(4).enumerate() {
            let l = u32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            if l == u32::MAX {
                return Err(CliError::Parse(format!(
                    "reserved label value at byte offset {}",
                    payload_end + 1 + 4 * i
                )));
            }
            labels.push(l);
        }
        Ok(Self {
            columns,
            labels: Some(labels),
        })
    }

    /// `d,B` header, then each column on its own line with 17 significant
    /// digits. Labels are not part of the CSV form.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{}\n", self.d(), self.batch_size());
        for col in self.columns.column_iter() {
            let line: Vec<String> = col.iter().map(|v| format_f64(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CliError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines
            .next()
            .ok_or_else(|| CliError::Parse("line 1: missing `d,B` header".into()))?;
        let dims: Vec<&str> = header.split(',').map(str::trim).collect();
        let parse_dim = |s: &str| s.parse::<usize>().ok().filter(|&n| n > 0);
        let (d, b) = match dims.as_slice() {
            [d, b] => match (parse_dim(d), parse_dim(b)) {
                (Some(d), Some(b)) => (d, b),
                _ => {
                    return Err(CliError::Parse(format!(
                        "line {}: header must be two positive integers `d,B`",
                        hline + 1
                    )))
                }
            },
            _ => return Err(CliError::Parse(format!("line {}: header must be `d,B`", hline + 1))),
        };
        let mut values = Vec::with_capacity(d.saturating_mul(b).min(1 << 24));
        let mut rows = 0;
        for (idx, line) in lines {
            let lineno = idx + 1;
            if rows == b {
                return Err(CliError::Parse(format!("line {lineno}: more than {b} columns")));
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != d {
                return Err(CliError::Parse(format!(
                    "line {lineno}: expected {d} values, found {}",
                    fields.len()
                )));
            }
            for (k, f) in fields.iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| CliError::Parse(format!("line {lineno}: field {} `{f}` is not a number", k + 1)))?;
                if !v.is_finite() {
                    return Err(CliError::Parse(format!("line {lineno}: field {} is not finite", k + 1)));
                }
                values.push(v);
            }
            rows += 1;
        }
        if rows != b {
            return Err(CliError::Parse(format!(
                "line {}: expected {b} columns, found {rows}",
                text.lines().count() + 1
            )));
        }
        Ok(Self::new(DMatrix::from_vec(d, b, values)))
    }

    /// Reads either format, telling them apart by the magic bytes.
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        if bytes.starts_with(MAGIC) {
            return Self::from_bytes(&bytes).map_err(|e| e.with_context(path));
        }
        let text = String::from_utf8(bytes).map_err(|e| {
            CliError::Parse(format!(
                "{}: not MXE1 and not UTF-8 text (byte offset {})",
                path.display(),
                e.utf8_error().valid_up_to()
            ))
        })?;
        Self::from_csv(&text).map_err(|e| e.with_context(path))
    }

    /// Writes CSV when the extension is `.csv`, binary otherwise.
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            self.to_csv().into_bytes()
        } else {
            self.to_bytes()?
        };
        fs::write(path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }
}

/// Labels from a sidecar file: integers separated by commas or newlines.
pub fn read_labels(path: &Path) -> Result<Vec<u32>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        for field in line.split(',').map(str::trim).filter(|f| !f.is_empty()) {
            let l: u32 =
                field.parse().ok().filter(|&l| l != u32::MAX).ok_or_else(|| {
                    CliError::Parse(format!("{}: line {}: bad label `{field}`", path.display(), idx + 1))
                })?;
            labels.push(l);
        }
    }
    Ok(labels)
}

/// Scientific notation with 17 significant digits, enough to round-trip.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}
