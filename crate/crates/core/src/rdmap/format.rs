use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64;

use super::{Annotation, DatasetManifest, ManifestRecord, RDMap, RawADCCube, RdmapError, Split};

const MAGIC: &[u8; 4] = b"RDM1";
const HEADER_LEN: usize = 16;

/// Serialize an RD map: `"RDM1"`, height, width, reserved word (all u32
/// little-endian), then `height*width` f32 cells row-major.
pub fn encode_rdm(rd: &RDMap) -> Vec<u8> {
    let (h, w) = rd.intensity().dim();
    let mut out = Vec::with_capacity(HEADER_LEN + h * w * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &v in rd.intensity().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse bytes produced by [`encode_rdm`]. `origin` names the source in
/// errors.
pub fn decode_rdm(bytes: &[u8], origin: &Path) -> Result<RDMap, RdmapError> {
    let bad = || RdmapError::BadFormat { path: origin.to_path_buf() };
    if bytes.len() < HEADER_LEN {
        return Err(bad());
    }
    if &bytes[0..4] != MAGIC {
        return Err(RdmapError::BadMagic { path: origin.to_path_buf() });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let reserved = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if reserved != 0 || h == 0 || w == 0 {
        return Err(bad());
    }
    let expect = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(bad)?;
    if bytes.len() != expect {
        return Err(bad());
    }
    let mut cells = Vec::with_capacity(h * w);
    for chunk in bytes[HEADER_LEN..].chunks_exact(4) {
        cells.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    let grid = Array2::from_shape_vec((h, w), cells).expect("length checked above");
    RDMap::new(grid)
}

pub fn read_rdm(path: &Path) -> Result<RDMap, RdmapError> {
    let bytes = fs::read(path)
        .map_err(|source| RdmapError::Io { path: path.to_path_buf(), source })?;
    decode_rdm(&bytes, path)
}

pub fn write_rdm(path: &Path, rd: &RDMap) -> Result<(), RdmapError> {
    let io = |source| RdmapError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, encode_rdm(rd)).map_err(io)
}

impl DatasetManifest {
    /// Read a `manifest.jsonl`, one record per line, skipping blank lines.
    /// Every label is validated as an annotation at load time.
    pub fn load(path: &Path, split: Split) -> Result<Self, RdmapError> {
        let text = fs::read_to_string(path)
            .map_err(|source| RdmapError::Io { path: path.to_path_buf(), source })?;
        let mut records = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: ManifestRecord =
                serde_json::from_str(line).map_err(|e| RdmapError::MalformedManifest {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    reason: e.to_string(),
                })?;
            for &label in &record.labels {
                Annotation::from(label).validate().map_err(|reason| {
                    RdmapError::BadAnnotation { sample_id: record.sample_id.clone(), reason }
                })?;
            }
            records.push(record);
        }
        DatasetManifest::new(records, split).map_err(|e| match e {
            RdmapError::MalformedManifest { line, reason, .. } => {
                RdmapError::MalformedManifest { path: path.to_path_buf(), line, reason }
            }
            other => other,
        })
    }

    /// Write the manifest as JSONL, one record per line, creating parent
    /// directories as needed.
    pub fn save(&self, path: &Path) -> Result<(), RdmapError> {
        let io = |source| RdmapError::Io { path: path.to_path_buf(), source };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut buf = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut buf, record).expect("manifest records are serializable");
            buf.push(b'\n');
        }
        let mut file = fs::File::create(path).map_err(io)?;
        file.write_all(&buf).map_err(io)
    }
}

const ADC_MAGIC: &[u8; 4] = b"ADC1";

/// Serialize a raw ADC frame: `"ADC1"`, chirps, samples, reserved word (all
/// u32 little-endian), then `chirps*samples` complex cells row-major, each
/// as two f64 little-endian words (re, im).
pub fn encode_adc(cube: &RawADCCube) -> Vec<u8> {
    let (rows, cols) = cube.samples().dim();
    let mut out = Vec::with_capacity(HEADER_LEN + rows * cols * 16);
    out.extend_from_slice(ADC_MAGIC);
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in cube.samples().iter() {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    out
}

/// Parse bytes produced by [`encode_adc`].
pub fn decode_adc(bytes: &[u8], origin: &Path) -> Result<RawADCCube, RdmapError> {
    let bad = || RdmapError::BadFormat { path: origin.to_path_buf() };
    if bytes.len() < HEADER_LEN {
        return Err(bad());
    }
    if &bytes[0..4] != ADC_MAGIC {
        return Err(RdmapError::BadMagic { path: origin.to_path_buf() });
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let reserved = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
    if reserved != 0 || rows == 0 || cols == 0 {
        return Err(bad());
    }
    let expect = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(16))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(bad)?;
    if bytes.len() != expect {
        return Err(bad());
    }
    let mut cells = Vec::with_capacity(rows * cols);
    for chunk in bytes[HEADER_LEN..].chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        cells.push(Complex64::new(re, im));
    }
    let grid = Array2::from_shape_vec((rows, cols), cells).expect("length checked above");
    RawADCCube::new(grid)
}

pub fn read_adc(path: &Path) -> Result<RawADCCube, RdmapError> {
    let bytes = fs::read(path)
        .map_err(|source| RdmapError::Io { path: path.to_path_buf(), source })?;
    decode_adc(&bytes, path)
}

pub fn write_adc(path: &Path, cube: &RawADCCube) -> Result<(), RdmapError> {
    let io = |source| RdmapError::Io { path: path.to_path_buf(), source };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    fs::write(path, encode_adc(cube)).map_err(io)
}
