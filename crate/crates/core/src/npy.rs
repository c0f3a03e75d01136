//! Minimal reader/writer for the NPY 1.0 array container.
//!
//! Only C-order little-endian `f4`/`f8` (widened to `f64` on read) and
//! `b1` arrays are supported, which covers every matrix this crate
//! exchanges.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    Bool,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::Bool => "|b1",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::Bool => 1,
        }
    }
}

/// A decoded array: C-order values widened to `f64` (booleans become 0/1).
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn header(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_str = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_str
    );
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 2 + 2 + dict.len() + 1;
    let pad = (64 - unpadded % 64) % 64;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

/// Encodes C-order `f64` values.
pub fn encode_f64(shape: &[usize], data: &[f64]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut out = header(Dtype::F64, shape);
    out.reserve(data.len() * 8);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = header(Dtype::F32, shape);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_bool(data: &[bool]) -> Vec<u8> {
    let mut out = header(Dtype::Bool, &[data.len()]);
    out.extend(data.iter().map(|&b| b as u8));
    out
}

/// Encodes a matrix in C (row-major) order.
pub fn encode_matrix(m: &DMatrix<f64>) -> Vec<u8> {
    let mut data = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        data.extend(m.row(r).iter().copied());
    }
    encode_f64(&[m.nrows(), m.ncols()], &data)
}

fn field<'a>(dict: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}':");
    let start = dict.find(&pat)? + pat.len();
    Some(dict[start..].trim_start())
}

fn parse_header(dict: &str) -> std::result::Result<(Dtype, bool, Vec<usize>), String> {
    let descr = field(dict, "descr").ok_or("missing descr")?;
    let dtype = if descr.starts_with("'<f8'") {
        Dtype::F64
    } else if descr.starts_with("'<f4'") {
        Dtype::F32
    } else if descr.starts_with("'|b1'") {
        Dtype::Bool
    } else {
        return Err(format!("unsupported dtype {}", descr.split(',').next().unwrap_or("")));
    };
    let fortran = field(dict, "fortran_order")
        .ok_or("missing fortran_order")?
        .starts_with("True");
    let shape_src = field(dict, "shape").ok_or("missing shape")?;
    let open = shape_src.find('(').ok_or("malformed shape")?;
    let close = shape_src.find(')').ok_or("malformed shape")?;
    let shape = shape_src[open + 1..close]
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|e| format!("bad shape entry {s}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((dtype, fortran, shape))
}

/// Decodes an NPY 1.0 byte stream.
pub fn decode(bytes: &[u8]) -> std::result::Result<NpyArray, String> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err("missing NPY magic".into());
    }
    if bytes[6] != 1 {
        return Err(format!("unsupported NPY version {}.{}", bytes[6], bytes[7]));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let body = 10 + hlen;
    if bytes.len() < body {
        return Err("truncated header".into());
    }
    let dict = std::str::from_utf8(&bytes[10..body]).map_err(|_| "header is not utf-8")?;
    let (dtype, fortran, shape) = parse_header(dict)?;
    if fortran {
        return Err("fortran_order arrays are not supported".into());
    }
    let count: usize = shape.iter().product();
    let payload = &bytes[body..];
    if payload.len() != count * dtype.width() {
        return Err(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count * dtype.width()
        ));
    }
    let data = match dtype {
        Dtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::Bool => payload.iter().map(|&b| (b != 0) as u8 as f64).collect(),
    };
    Ok(NpyArray { dtype, shape, data })
}

pub fn read(path: &Path) -> Result<NpyArray> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|message| Error::Npy {
        path: path.to_path_buf(),
        message,
    })
}

/// Reads a 2-D array, rejecting non-finite entries.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let arr = read(path)?;
    let (rows, cols) = match arr.shape[..] {
        [r, c] => (r, c),
        _ => {
            return Err(Error::Npy {
                path: path.to_path_buf(),
                message: format!("expected a 2-D array, found shape {:?}", arr.shape),
            })
        }
    };
    check_finite(&arr.data, cols, &path.display().to_string())?;
    Ok(DMatrix::from_row_slice(rows, cols, &arr.data))
}

/// Reads a 1-D array, rejecting non-finite entries.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let arr = read(path)?;
    if arr.shape.len() != 1 {
        return Err(Error::Npy {
            path: path.to_path_buf(),
            message: format!("expected a 1-D array, found shape {:?}", arr.shape),
        });
    }
    check_finite(&arr.data, 1, &path.display().to_string())?;
    Ok(arr.data)
}

pub fn read_bool(path: &Path) -> Result<Vec<bool>> {
    let arr = read(path)?;
    if arr.shape.len() != 1 {
        return Err(Error::Npy {
            path: path.to_path_buf(),
            message: format!("expected a 1-D array, found shape {:?}", arr.shape),
        });
    }
    Ok(arr.data.iter().map(|&v| v != 0.0).collect())
}

pub(crate) fn check_finite(data: &[f64], cols: usize, what: &str) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite {
            what: what.to_string(),
            row: i / cols.max(1),
            col: i % cols.max(1),
        }),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    write_atomic(path, &encode_matrix(m))
}

pub fn write_vector(path: &Path, v: &[f64]) -> Result<()> {
    write_atomic(path, &encode_f64(&[v.len()], v))
}

pub fn write_bool(path: &Path, v: &[bool]) -> Result<()> {
    write_atomic(path, &encode_bool(v))
}
