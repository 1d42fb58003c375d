//! Reading and writing the NPY binary array format (version 1.0).
//!
//! Only little-endian `float32`/`float64` arrays in C order are supported, which is
//! everything the extraction scripts emit. Values are widened to `f64` on read.
//! Version 2.0 headers (4-byte header length) are accepted when reading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";

const ALIGN: usize = 64;
/// Spare header room numpy leaves so the first axis can grow in place.
const GROWTH_DIGITS: usize = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    /// Bytes per stored value.
    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// A dense array as stored on disk: shape plus C-order values.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub dtype: Dtype,
}

impl NpyArray {
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn expect_rank(&self, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::WrongRank {
                expected: rank,
                found: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(()),
        }
    }
}

struct Header {
    dtype: Dtype,
    fortran_order: bool,
    shape: Vec<usize>,
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    read_npy_from(&mut BufReader::new(file))
}

pub fn read_npy_from<R: Read>(reader: &mut R) -> Result<NpyArray> {
    let mut preamble = [0u8; 8];
    reader
        .read_exact(&mut preamble)
        .map_err(|_| Error::BadHeader("file shorter than the npy preamble".into()))?;
    if &preamble[..6] != MAGIC {
        return Err(Error::BadHeader("missing \\x93NUMPY magic".into()));
    }
    let header_len = match preamble[6] {
        1 => {
            let mut buf = [0u8; 2];
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::BadHeader("truncated header length".into()))?;
            u16::from_le_bytes(buf) as usize
        }
        2 => {
            let mut buf = [0u8; 4];
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::BadHeader("truncated header length".into()))?;
            u32::from_le_bytes(buf) as usize
        }
        v => return Err(Error::BadHeader(format!("unsupported format version {v}"))),
    };
    let mut dict = vec![0u8; header_len];
    reader
        .read_exact(&mut dict)
        .map_err(|_| Error::BadHeader("truncated header dictionary".into()))?;
    let dict = std::str::from_utf8(&dict)
        .map_err(|_| Error::BadHeader("header is not valid ASCII".into()))?;
    let header = parse_header(dict)?;
    if header.fortran_order {
        return Err(Error::BadHeader("fortran_order arrays are not supported".into()));
    }

    let count = header
        .shape
        .iter()
        .try_fold(1usize, |acc, &n| acc.checked_mul(n))
        .ok_or_else(|| Error::BadHeader("shape overflows".into()))?;
    let width = header.dtype.width();
    let mut raw = vec![0u8; count * width];
    reader
        .read_exact(&mut raw)
        .map_err(|_| Error::BadHeader(format!("payload shorter than {count} elements")))?;
    let data = match header.dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        Dtype::F64 => raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    Ok(NpyArray {
        shape: header.shape,
        data,
        dtype: header.dtype,
    })
}

fn parse_header(dict: &str) -> Result<Header> {
    let descr = dict_value(dict, "descr")?;
    let descr = descr.trim().trim_matches(|c| c == '\'' || c == '"');
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(Error::BadHeader(format!("unsupported dtype {other:?}"))),
    };

    let fortran_order = match dict_value(dict, "fortran_order")?.trim() {
        "False" => false,
        "True" => true,
        other => {
            return Err(Error::BadHeader(format!(
                "fortran_order must be True or False, found {other:?}"
            )))
        }
    };

    let shape_src = dict_value(dict, "shape")?;
    let inner = shape_src
        .trim()
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::BadHeader(format!("shape is not a tuple: {shape_src:?}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::BadHeader(format!("bad shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Header {
        dtype,
        fortran_order,
        shape,
    })
}

/// Returns the raw source text of the value stored under `key` in the header dict.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let needle_sq = format!("'{key}'");
    let needle_dq = format!("\"{key}\"");
    let start = dict
        .find(&needle_sq)
        .map(|i| i + needle_sq.len())
        .or_else(|| dict.find(&needle_dq).map(|i| i + needle_dq.len()))
        .ok_or_else(|| Error::BadHeader(format!("header has no {key:?} key")))?;
    let rest = dict[start..].trim_start();
    let rest = rest
        .strip_prefix(':')
        .ok_or_else(|| Error::BadHeader(format!("expected ':' after {key:?}")))?
        .trim_start();
    // tuples may contain commas, so scan to the matching paren
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| Error::BadHeader(format!("unterminated value for {key:?}")))?;
    Ok(&rest[..end])
}

fn header_bytes(dtype: Dtype, shape: &[usize]) -> Vec<u8> {
    let shape_txt = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_txt
    );
    if let Some(first) = shape.first() {
        let digits = first.to_string().len();
        dict.extend(std::iter::repeat_n(' ', GROWTH_DIGITS.saturating_sub(digits)));
    }
    // magic(6) + version(2) + len(2) + dict + '\n' must be a multiple of ALIGN
    let unpadded = 10 + dict.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    dict.extend(std::iter::repeat_n(' ', pad));
    dict.push('\n');

    let mut out = Vec::with_capacity(10 + dict.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out
}

pub fn write_npy_to<W: Write>(
    writer: &mut W,
    shape: &[usize],
    data: &[f64],
    dtype: Dtype,
) -> std::io::Result<()> {
    let count: usize = shape.iter().product();
    assert_eq!(count, data.len(), "shape does not match value count");
    writer.write_all(&header_bytes(dtype, shape))?;
    match dtype {
        Dtype::F32 => {
            for v in data {
                writer.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Dtype::F64 => {
            for v in data {
                writer.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn write_npy(path: impl AsRef<Path>, shape: &[usize], data: &[f64], dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    write_npy_to(&mut writer, shape, data, dtype).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned() {
        for shape in [vec![3], vec![3, 4], vec![100, 768], vec![2, 3, 4, 5]] {
            let h = header_bytes(Dtype::F32, &shape);
            assert_eq!(h.len() % ALIGN, 0);
            assert_eq!(*h.last().unwrap(), b'\n');
        }
    }

    #[test]
    fn parses_numpy_style_header() {
        let h = parse_header("{'descr': '<f8', 'fortran_order': False, 'shape': (3, 4), }").unwrap();
        assert_eq!(h.shape, vec![3, 4]);
        assert_eq!(h.dtype, Dtype::F64);
        let h = parse_header("{'descr': '<f4', 'fortran_order': False, 'shape': (7,), }").unwrap();
        assert_eq!(h.shape, vec![7]);
    }

    #[test]
    fn rejects_big_endian_and_ints() {
        assert!(matches!(
            parse_header("{'descr': '>f8', 'fortran_order': False, 'shape': (3,), }"),
            Err(Error::BadHeader(_))
        ));
        assert!(matches!(
            parse_header("{'descr': '<i8', 'fortran_order': False, 'shape': (3,), }"),
            Err(Error::BadHeader(_))
        ));
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTNUMPY\x00\x00";
        assert!(matches!(
            read_npy_from(&mut &bytes[..]),
            Err(Error::BadHeader(_))
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut buf = Vec::new();
        write_npy_to(&mut buf, &[2, 2], &[1.0, 2.0, 3.0, 4.0], Dtype::F64).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_npy_from(&mut &buf[..]), Err(Error::BadHeader(_))));
    }

    #[test]
    fn f32_widening() {
        let mut buf = Vec::new();
        write_npy_to(&mut buf, &[3], &[0.1, -2.5, 1e10], Dtype::F32).unwrap();
        let arr = read_npy_from(&mut &buf[..]).unwrap();
        assert_eq!(arr.dtype, Dtype::F32);
        assert_eq!(arr.data, vec![0.1f32 as f64, -2.5, 1e10f32 as f64]);
    }
}
