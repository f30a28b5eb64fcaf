use std::io::{Read, Write};
use std::sync::Arc;

use super::field::ScalarField;
use super::grid::TorusGrid;
use crate::error::DomainError;

pub const MAGIC: &[u8; 4] = b"ACFD";
pub const VERSION: u32 = 1;

/// Raw contents of a field dump: the file does not record lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDump {
    pub dim: u8,
    pub counts: Vec<u64>,
    pub values: Vec<f64>,
}

impl FieldDump {
    pub fn into_field(self, lengths: &[f64]) -> Result<ScalarField, DomainError> {
        let res: Vec<usize> = self.counts.iter().map(|&c| c as usize).collect();
        let grid = Arc::new(TorusGrid::new(self.dim as usize, lengths, &res)?);
        ScalarField::new(grid, self.values)
    }
}

pub fn write_field<W: Write>(mut w: W, u: &ScalarField) -> Result<(), DomainError> {
    let g = u.grid();
    let mut buf = Vec::with_capacity(16 + 8 * g.dim() + 8 * g.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(g.dim() as u8);
    for &n in g.resolution() {
        buf.extend_from_slice(&(n as u64).to_le_bytes());
    }
    for v in u.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_field<R: Read>(mut r: R) -> Result<FieldDump, DomainError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let bad = |m: &str| DomainError::BadFormat(m.to_string());
    if bytes.len() < 9 || &bytes[..4] != MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = bytes[8];
    if !(2..=3).contains(&dim) {
        return Err(bad(&format!("dimension {dim}")));
    }
    let mut off = 9;
    let mut counts = Vec::with_capacity(dim as usize);
    for _ in 0..dim {
        let end = off + 8;
        let chunk = bytes.get(off..end).ok_or_else(|| bad("truncated header"))?;
        counts.push(u64::from_le_bytes(chunk.try_into().unwrap()));
        off = end;
    }
    let total: u64 = counts.iter().product();
    let expected = off + 8 * total as usize;
    if bytes.len() != expected {
        return Err(bad(&format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let values = bytes[off..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok(FieldDump { dim, counts, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_layout() {
        let g = Arc::new(TorusGrid::new(2, &[1.0, 2.0], &[8, 10]).unwrap());
        let u = ScalarField::from_fn(g.clone(), |x| x[0] + 10.0 * x[1]);
        let mut buf = Vec::new();
        write_field(&mut buf, &u).unwrap();
        assert_eq!(&buf[..4], b"ACFD");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf[8], 2);
        assert_eq!(u64::from_le_bytes(buf[9..17].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(buf[17..25].try_into().unwrap()), 10);
        assert_eq!(buf.len(), 25 + 8 * 80);
        // second value is node (0, 1): x = (0, 0.2)
        assert_eq!(f64::from_le_bytes(buf[33..41].try_into().unwrap()), 2.0);
        let back = read_field(&buf[..]).unwrap().into_field(&[1.0, 2.0]).unwrap();
        assert_eq!(back, u);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_field(&b"XXXX"[..]).is_err());
        let g = Arc::new(TorusGrid::new(2, &[1.0, 1.0], &[8, 8]).unwrap());
        let mut buf = Vec::new();
        write_field(&mut buf, &ScalarField::zeros(g)).unwrap();
        buf.pop();
        assert!(read_field(&buf[..]).is_err());
    }
}
