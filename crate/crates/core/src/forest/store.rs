//! Forest persistence: a small framed container so stale or foreign files
//! fail loudly instead of deserializing garbage.
//!
//! Layout: 4 magic bytes, little-endian u16 format version, then the
//! bincode-encoded forest (config, feature names, training snapshot, trees).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Forest, ForestError};

const MAGIC: &[u8; 4] = b"CRFR";
const VERSION: u16 = 1;

pub fn save_forest(path: &Path, forest: &Forest) -> Result<(), ForestError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, forest)?;
    w.flush()?;
    Ok(())
}

pub fn load_forest(path: &Path) -> Result<Forest, ForestError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| ForestError::BadMagic)?;
    if &magic != MAGIC {
        return Err(ForestError::BadMagic);
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver).map_err(|_| ForestError::BadMagic)?;
    let version = u16::from_le_bytes(ver);
    if version != VERSION {
        return Err(ForestError::BadVersion(version));
    }
    let forest: Forest = bincode::deserialize_from(&mut r)?;
    Ok(forest)
}
