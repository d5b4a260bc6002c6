//! Reader for the IDX container used by MNIST and EMNIST, plain or gzipped.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let file = BufReader::new(File::open(path)?);
    let is_gz = path.extension().is_some_and(|e| e == "gz");
    let mut bytes = Vec::new();
    if is_gz {
        GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    parse_idx(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Format(format!("unsupported IDX dtype 0x{:02x}", bytes[2])));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let total: usize = dims.iter().product();
    if bytes.len() != header + total {
        return Err(Error::Format(format!(
            "IDX payload holds {} bytes, header declares {total}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(dims: &[usize], data: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(data);
    out
}

/// Transposes each square image in place; EMNIST ships column-major glyphs.
pub fn transpose_images(data: &mut [u8], side: usize) {
    for img in data.chunks_exact_mut(side * side) {
        for y in 0..side {
            for x in (y + 1)..side {
                img.swap(y * side + x, x * side + y);
            }
        }
    }
}
