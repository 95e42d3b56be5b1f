//! NPY v1.0 matrices: little-endian `<f4`/`<f8`, C order, 1-D or 2-D.
//!
//! A 1-D array of length `n` is read as an `n × 1` column. Concept matrices
//! are stored as `d0 × N`, one concept per column.

use std::fs;
use std::path::Path;

use faer::{Mat, MatRef};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = MAGIC.len() + 2 + 2;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl MatrixData {
    pub fn len(&self) -> usize {
        match self {
            MatrixData::F32(v) => v.len(),
            MatrixData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, k: usize) -> f64 {
        match self {
            MatrixData::F32(v) => f64::from(v[k]),
            MatrixData::F64(v) => v[k],
        }
    }
}

/// A named row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: MatrixData,
}

/// Decoding failure positioned at a byte offset into the file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyError {
    pub offset: u64,
    pub message: String,
}

impl NpyError {
    fn at(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset: offset as u64,
            message: message.into(),
        }
    }

    fn with_path(self, path: &Path) -> CliError {
        CliError::Format {
            path: path.to_path_buf(),
            offset: self.offset,
            message: self.message,
        }
    }
}

impl MatrixRecord {
    pub fn dtype(&self) -> Dtype {
        match self.data {
            MatrixData::F32(_) => Dtype::F32,
            MatrixData::F64(_) => Dtype::F64,
        }
    }

    /// Copies `m` into a record, narrowing to `f32` if asked.
    pub fn from_mat(name: impl Into<String>, m: MatRef<'_, f64>, dtype: Dtype) -> Self {
        let (rows, cols) = (m.nrows(), m.ncols());
        let values = (0..rows).flat_map(|i| (0..cols).map(move |j| m[(i, j)]));
        let data = match dtype {
            Dtype::F32 => MatrixData::F32(values.map(|x| x as f32).collect()),
            Dtype::F64 => MatrixData::F64(values.collect()),
        };
        Self {
            name: name.into(),
            rows,
            cols,
            data,
        }
    }

    /// Widens to an `f64` matrix.
    pub fn to_mat(&self) -> Mat<f64> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.data.get(i * self.cols + j))
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.rows.checked_mul(self.cols) != Some(self.data.len()) {
            return Err(format!(
                "shape {}×{} does not match {} values",
                self.rows,
                self.cols,
                self.data.len()
            ));
        }
        if let Some(k) = (0..self.data.len()).find(|&k| !self.data.get(k).is_finite()) {
            return Err(format!("non-finite value at element {k}"));
        }
        Ok(())
    }
}

/// Reads a matrix; the record is named after the file stem.
pub fn read_matrix(path: impl AsRef<Path>) -> Result<MatrixRecord> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode(&bytes, name).map_err(|e| e.with_path(path))
}

pub fn write_matrix(record: &MatrixRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(record).map_err(|message| CliError::Format {
        path: path.to_path_buf(),
        offset: 0,
        message,
    })?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Header bytes (preamble included) for a matrix of the given shape.
pub fn header_bytes(rows: usize, cols: usize, dtype: Dtype) -> Vec<u8> {
    let dict = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': ({}, {}), }}",
        dtype.descr(),
        rows,
        cols
    );
    let unpadded = PREAMBLE + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - PREAMBLE;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    out
}

pub fn encode(record: &MatrixRecord) -> std::result::Result<Vec<u8>, String> {
    record.validate()?;
    let mut out = header_bytes(record.rows, record.cols, record.dtype());
    out.reserve(record.data.len() * record.dtype().width());
    match &record.data {
        MatrixData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        MatrixData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], name: impl Into<String>) -> std::result::Result<MatrixRecord, NpyError> {
    if bytes.len() < PREAMBLE || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::at(0, "missing NPY magic string"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(NpyError::at(
            6,
            format!("unsupported NPY version {}.{}", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(NpyError::at(8, "header length runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .map_err(|e| NpyError::at(PREAMBLE + e.valid_up_to(), "header is not valid text"))?;
    let dict = HeaderParser::new(header, PREAMBLE).parse()?;

    let dtype = Dtype::from_descr(&dict.descr)
        .ok_or_else(|| NpyError::at(dict.descr_offset, format!("unsupported dtype '{}'", dict.descr)))?;
    if dict.fortran_order {
        return Err(NpyError::at(
            dict.fortran_offset,
            "fortran_order arrays are not supported",
        ));
    }
    let (rows, cols) = match dict.shape[..] {
        [n] => (n, 1),
        [r, c] => (r, c),
        _ => {
            return Err(NpyError::at(
                dict.shape_offset,
                format!("expected a 1-D or 2-D array, found {} dimensions", dict.shape.len()),
            ))
        }
    };
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| NpyError::at(dict.shape_offset, "shape overflows"))?;
    let payload = &bytes[data_start..];
    let width = dtype.width();
    if payload.len() != count * width {
        return Err(NpyError::at(
            data_start,
            format!("expected {} data bytes, found {}", count * width, payload.len()),
        ));
    }
    let non_finite = |k: usize| NpyError::at(data_start + k * width, "non-finite value");
    let data = match dtype {
        Dtype::F32 => {
            let mut v = Vec::with_capacity(count);
            for (k, chunk) in payload.chunks_exact(4).enumerate() {
                let x = f32::from_le_bytes(chunk.try_into().expect("chunk of 4"));
                if !x.is_finite() {
                    return Err(non_finite(k));
                }
                v.push(x);
            }
            MatrixData::F32(v)
        }
        Dtype::F64 => {
            let mut v = Vec::with_capacity(count);
            for (k, chunk) in payload.chunks_exact(8).enumerate() {
                let x = f64::from_le_bytes(chunk.try_into().expect("chunk of 8"));
                if !x.is_finite() {
                    return Err(non_finite(k));
                }
                v.push(x);
            }
            MatrixData::F64(v)
        }
    };
    Ok(MatrixRecord {
        name: name.into(),
        rows,
        cols,
        data,
    })
}

struct HeaderDict {
    descr: String,
    descr_offset: usize,
    fortran_order: bool,
    fortran_offset: usize,
    shape: Vec<usize>,
    shape_offset: usize,
}

/// Parser for the Python-literal dict in an NPY header.
struct HeaderParser<'a> {
    text: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(text: &'a str, base: usize) -> Self {
        Self {
            text: text.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn offset(&self) -> usize {
        self.base + self.pos
    }

    fn err(&self, message: impl Into<String>) -> NpyError {
        NpyError::at(self.offset(), message)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: u8) -> std::result::Result<(), NpyError> {
        self.skip_ws();
        if self.text.get(self.pos) == Some(&c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn string(&mut self) -> std::result::Result<String, NpyError> {
        self.skip_ws();
        let quote = match self.text.get(self.pos) {
            Some(&q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.text.len() && self.text[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.text.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.text[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn boolean(&mut self) -> std::result::Result<bool, NpyError> {
        self.skip_ws();
        for (word, value) in [("True", true), ("False", false)] {
            if self.text[self.pos..].starts_with(word.as_bytes()) {
                self.pos += word.len();
                return Ok(value);
            }
        }
        Err(self.err("expected True or False"))
    }

    fn shape(&mut self) -> std::result::Result<Vec<usize>, NpyError> {
        self.eat(b'(')?;
        let mut dims = Vec::new();
        loop {
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(dims);
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.pos < self.text.len() && self.text[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    let digits = std::str::from_utf8(&self.text[start..self.pos]).expect("ascii digits");
                    let n = digits
                        .parse()
                        .map_err(|_| NpyError::at(self.base + start, "dimension out of range"))?;
                    dims.push(n);
                    if self.peek() == Some(b',') {
                        self.pos += 1;
                    }
                }
                _ => return Err(self.err("malformed shape tuple")),
            }
        }
    }

    fn parse(mut self) -> std::result::Result<HeaderDict, NpyError> {
        self.eat(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key_offset = self.offset();
            let key = self.string()?;
            self.eat(b':')?;
            self.skip_ws();
            let value_offset = self.offset();
            match key.as_str() {
                "descr" => descr = Some((self.string()?, value_offset)),
                "fortran_order" => fortran = Some((self.boolean()?, value_offset)),
                "shape" => shape = Some((self.shape()?, value_offset)),
                other => return Err(NpyError::at(key_offset, format!("unexpected header key '{other}'"))),
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        if self.text[self.pos..].iter().any(|c| !c.is_ascii_whitespace()) {
            return Err(self.err("trailing bytes after header dict"));
        }
        if self.text.last() != Some(&b'\n') {
            return Err(NpyError::at(
                self.base + self.text.len().saturating_sub(1),
                "header must end in a newline",
            ));
        }
        let missing = |k: &str| NpyError::at(self.base, format!("header is missing '{k}'"));
        let (descr, descr_offset) = descr.ok_or_else(|| missing("descr"))?;
        let (fortran_order, fortran_offset) = fortran.ok_or_else(|| missing("fortran_order"))?;
        let (shape, shape_offset) = shape.ok_or_else(|| missing("shape"))?;
        Ok(HeaderDict {
            descr,
            descr_offset,
            fortran_order,
            fortran_offset,
            shape,
            shape_offset,
        })
    }
}
