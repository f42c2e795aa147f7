//! Binary embedding bank ("LDEB") persistence.
//!
//! Layout, all little-endian:
//!
//! ```text
//! header (64 bytes): magic "LDEB" | version u32 | C u32 | count u64
//!                    | backend_id, ASCII zero-padded to 40 | 4 zero bytes
//! row (per entry):   id_len u16 | id bytes | C * f32
//! ```
//!
//! Rows are ordered by image id. Values are stored exactly as held in
//! memory (f32), so a round-trip is bit-lossless.

use super::{EmbedError, EmbeddingBank};
use std::fs;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"LDEB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
const BACKEND_ID_LEN: usize = 40;

pub fn bank_store(bank: &EmbeddingBank, path: &Path) -> Result<(), EmbedError> {
    if !bank.backend_id.is_ascii() || bank.backend_id.len() > BACKEND_ID_LEN {
        return Err(EmbedError::BadBackendId(bank.backend_id.clone()));
    }
    let mut bytes = Vec::with_capacity(HEADER_LEN + bank.len() * (2 + 8 + bank.dim * 4));
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(bank.dim as u32).to_le_bytes());
    bytes.extend_from_slice(&(bank.len() as u64).to_le_bytes());
    let mut id_field = [0u8; BACKEND_ID_LEN];
    id_field[..bank.backend_id.len()].copy_from_slice(bank.backend_id.as_bytes());
    bytes.extend_from_slice(&id_field);
    bytes.resize(HEADER_LEN, 0);
    for (id, values) in bank.iter() {
        if id.len() > u16::MAX as usize {
            return Err(EmbedError::IdTooLong(id.len()));
        }
        bytes.extend_from_slice(&(id.len() as u16).to_le_bytes());
        bytes.extend_from_slice(id.as_bytes());
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn bank_load(path: &Path) -> Result<EmbeddingBank, EmbedError> {
    let bytes = fs::read(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(EmbedError::Truncated("shorter than the header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(EmbedError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(EmbedError::BadVersion(version));
    }
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let id_field = &bytes[20..20 + BACKEND_ID_LEN];
    let id_end = id_field
        .iter()
        .position(|&b| b == 0)
        .unwrap_or(BACKEND_ID_LEN);
    let backend_id = std::str::from_utf8(&id_field[..id_end])
        .map_err(|_| EmbedError::BadBackendId("non-ASCII header".into()))?
        .to_string();

    let mut bank = EmbeddingBank::new(&backend_id, dim);
    let mut cursor = HEADER_LEN;
    for row in 0..count {
        if cursor + 2 > bytes.len() {
            return Err(EmbedError::Truncated(format!(
                "row {row} of {count}: missing id length"
            )));
        }
        let id_len = u16::from_le_bytes(bytes[cursor..cursor + 2].try_into().unwrap()) as usize;
        cursor += 2;
        if cursor + id_len + dim * 4 > bytes.len() {
            return Err(EmbedError::Truncated(format!(
                "row {row} of {count}: incomplete row"
            )));
        }
        let id = std::str::from_utf8(&bytes[cursor..cursor + id_len])
            .map_err(|_| EmbedError::Truncated(format!("row {row}: id is not UTF-8")))?
            .to_string();
        cursor += id_len;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(f32::from_le_bytes(
                bytes[cursor..cursor + 4].try_into().unwrap(),
            ));
            cursor += 4;
        }
        bank.insert(&id, values)?;
    }
    if cursor != bytes.len() {
        return Err(EmbedError::Truncated(format!(
            "{} trailing bytes after {count} rows",
            bytes.len() - cursor
        )));
    }
    Ok(bank)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{HashEncoder, TextEncoder};
    use tempfile::TempDir;

    fn sample_bank(entries: usize, dim: usize) -> EmbeddingBank {
        let enc = HashEncoder::new(dim);
        let mut bank = EmbeddingBank::new(&enc.backend_id(), dim);
        for i in 0..entries {
            let v = enc.encode(&format!("token{i} extra")).unwrap();
            bank.insert(&format!("s{i:04}"), v.values).unwrap();
        }
        bank
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let bank = sample_bank(3, 16);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        bank_store(&bank, &path).unwrap();
        let loaded = bank_load(&path).unwrap();
        assert_eq!(loaded, bank);
        // 0 ulp: values compare equal as raw bits.
        for (id, values) in bank.iter() {
            let got = loaded.get(id).unwrap();
            for (a, b) in values.iter().zip(got) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn header_fields_match_format() {
        let bank = sample_bank(2, 8);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        bank_store(&bank, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"LDEB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        let id = &bytes[20..20 + 7];
        assert_eq!(id, b"hash-c8");
        assert!(bytes[20 + 7..64].iter().all(|&b| b == 0));
    }

    #[test]
    fn file_size_follows_row_arithmetic() {
        // Header plus, per row, 2 id-length bytes + id bytes + C * 4.
        let bank = sample_bank(512, 512);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        bank_store(&bank, &path).unwrap();
        let expected: usize = HEADER_LEN
            + bank
                .iter()
                .map(|(id, _)| 2 + id.len() + 512 * 4)
                .sum::<usize>();
        let actual = std::fs::metadata(&path).unwrap().len() as usize;
        assert_eq!(actual, expected);
        // The vector payload alone is count * C * 4.
        assert_eq!(expected - HEADER_LEN - 512 * (2 + 5), 512 * 512 * 4);
    }

    #[test]
    fn count_exceeding_rows_is_truncation_error() {
        let bank = sample_bank(4, 8);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        bank_store(&bank, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // Claim 5 rows but provide 4.
        bytes[12..20].copy_from_slice(&5u64.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(bank_load(&path), Err(EmbedError::Truncated(_))));
    }

    #[test]
    fn trailing_garbage_is_rejected() {
        let bank = sample_bank(1, 4);
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        bank_store(&bank, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0xFF);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(bank_load(&path), Err(EmbedError::Truncated(_))));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("bank.ldeb");
        std::fs::write(&path, vec![0u8; 64]).unwrap();
        assert!(matches!(bank_load(&path), Err(EmbedError::BadMagic)));
    }

    #[test]
    fn too_long_backend_id_is_rejected() {
        let bank = EmbeddingBank::new(&"x".repeat(41), 4);
        let dir = TempDir::new().unwrap();
        assert!(matches!(
            bank_store(&bank, &dir.path().join("b.ldeb")),
            Err(EmbedError::BadBackendId(_))
        ));
    }
}
