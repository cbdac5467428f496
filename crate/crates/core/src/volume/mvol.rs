//! MVOL: a minimal volume file.
//!
//! ```text
//! MVOL1\n
//! {"dims":[nx,ny,nz],"spacing":[sx,sy,sz],"origin":[ox,oy,oz],"unit":"Gy","dtype":"f32le"}\n
//! <nx*ny*nz little-endian f32, x fastest>
//! ```
//!
//! Masks use `"dtype":"u8"` with one byte (0 or 1) per voxel. Grid values are
//! stored as f32, so writing an f64 grid quantises it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Grid3, GridGeometry, Role, StructureMask, Unit};
use crate::error::{Error, Result};

pub const MAGIC: &[u8] = b"MVOL1\n";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f32le")]
    F32Le,
    #[serde(rename = "u8")]
    U8,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    unit: Unit,
    dtype: Dtype,
}

fn bad(reason: impl Into<String>) -> Error {
    Error::Format {
        what: "MVOL".into(),
        reason: reason.into(),
    }
}

fn encode_header(geometry: &GridGeometry, unit: Unit, dtype: Dtype) -> Vec<u8> {
    let header = Header {
        dims: geometry.dims,
        spacing: geometry.spacing,
        origin: geometry.origin,
        unit,
        dtype,
    };
    let mut out = MAGIC.to_vec();
    out.extend(serde_json::to_vec(&header).expect("header serialises"));
    out.push(b'\n');
    out
}

fn decode_header(bytes: &[u8]) -> Result<(Header, GridGeometry, &[u8])> {
    let rest = bytes.strip_prefix(MAGIC).ok_or_else(|| bad("missing MVOL1 magic"))?;
    let nl = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("unterminated header line"))?;
    let header: Header =
        serde_json::from_slice(&rest[..nl]).map_err(|e| bad(format!("header: {e}")))?;
    let geometry = GridGeometry::new(header.dims, header.spacing, header.origin)?;
    let width = match header.dtype {
        Dtype::F32Le => 4,
        Dtype::U8 => 1,
    };
    let payload = &rest[nl + 1..];
    if payload.len() != geometry.voxel_count() * width {
        return Err(bad(format!(
            "payload is {} bytes, expected {}",
            payload.len(),
            geometry.voxel_count() * width
        )));
    }
    Ok((header, geometry, payload))
}

pub fn encode_grid(grid: &Grid3) -> Vec<u8> {
    let mut out = encode_header(&grid.geometry, grid.unit, Dtype::F32Le);
    out.reserve(grid.values.len() * 4);
    for &v in &grid.values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_grid(bytes: &[u8]) -> Result<Grid3> {
    let (header, geometry, payload) = decode_header(bytes)?;
    if header.dtype != Dtype::F32Le {
        return Err(bad("expected dtype f32le for a scalar grid"));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Grid3::new(geometry, values, header.unit)
}

pub fn encode_mask(mask: &StructureMask) -> Vec<u8> {
    let mut out = encode_header(&mask.geometry, Unit::Unitless, Dtype::U8);
    out.extend(mask.bits.iter().map(|&b| b as u8));
    out
}

pub fn decode_mask(bytes: &[u8], name: &str, role: Role) -> Result<StructureMask> {
    let (header, geometry, payload) = decode_header(bytes)?;
    if header.dtype != Dtype::U8 {
        return Err(bad("expected dtype u8 for a mask"));
    }
    let bits = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(bad(format!("mask byte {other} is not 0/1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    StructureMask::new(geometry, bits, name, role)
}

pub fn write_grid(path: impl AsRef<Path>, grid: &Grid3) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_grid(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<Grid3> {
    let path = path.as_ref();
    decode_grid(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &StructureMask) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mask(mask)).map_err(|e| Error::io(path, e))
}

pub fn read_mask(path: impl AsRef<Path>, name: &str, role: Role) -> Result<StructureMask> {
    let path = path.as_ref();
    decode_mask(&fs::read(path).map_err(|e| Error::io(path, e))?, name, role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_exact() {
        let g = GridGeometry::new([2, 1, 1], [1.0, 2.5, 3.0], [0.0, -1.5, 2.0]).unwrap();
        let grid = Grid3::new(g, vec![1.0, 2.0], Unit::Gy).unwrap();
        let bytes = encode_grid(&grid);
        let text = b"MVOL1\n{\"dims\":[2,1,1],\"spacing\":[1.0,2.5,3.0],\"origin\":[0.0,-1.5,2.0],\"unit\":\"Gy\",\"dtype\":\"f32le\"}\n";
        assert_eq!(&bytes[..text.len()], &text[..]);
        assert_eq!(&bytes[text.len()..], &[0, 0, 0x80, 0x3f, 0, 0, 0, 0x40]);
    }

    #[test]
    fn rejects_truncated_and_wrong_dtype() {
        let g = GridGeometry::unit([2, 2, 1]).unwrap();
        let grid = Grid3::filled(g, 3.0, Unit::Hu);
        let bytes = encode_grid(&grid);
        assert!(decode_grid(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode_mask(&bytes, "m", Role::Oar).is_err());
        assert!(decode_grid(b"MVOL2\n{}\n").is_err());
    }

    #[test]
    fn mask_bytes_must_be_binary() {
        let g = GridGeometry::unit([2, 1, 1]).unwrap();
        let m = StructureMask::new(g, vec![true, false], "m", Role::Oar).unwrap();
        let mut bytes = encode_mask(&m);
        assert_eq!(decode_mask(&bytes, "m", Role::Oar).unwrap(), m);
        *bytes.last_mut().unwrap() = 2;
        assert!(decode_mask(&bytes, "m", Role::Oar).is_err());
    }

    proptest! {
        #[test]
        fn f32_grids_roundtrip_bit_exactly(
            dims in prop::array::uniform3(1usize..5),
            spacing in prop::array::uniform3(0.1f64..10.0),
            origin in prop::array::uniform3(-100.0f64..100.0),
            seed in any::<u64>(),
        ) {
            let g = GridGeometry::new(dims, spacing, origin).unwrap();
            let mut x = seed;
            let values = (0..g.voxel_count()).map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                f32::from_bits((x >> 32) as u32 & 0x7f7f_ffff) as f64
            }).collect();
            let grid = Grid3::new(g, values, Unit::Gy).unwrap();
            let bytes = encode_grid(&grid);
            let back = decode_grid(&bytes).unwrap();
            prop_assert_eq!(&back.geometry, &grid.geometry);
            prop_assert!(back.values.iter().zip(&grid.values).all(|(a, b)| a.to_bits() == b.to_bits()));
            prop_assert_eq!(encode_grid(&back), bytes);
        }
    }
}
