use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::ImageFormat;
use wavecomm::artifacts::atomic_write;
use wavecomm::dataset::sha256_hex;

use crate::ServiceError;

/// Returns PNG bytes for `source` scaled to fit `size`×`size`, generating
/// and caching them under `cache_dir` on first use.
pub fn cached_thumbnail(cache_dir: &Path, id: &str, source: &Path, size: u32) -> Result<Vec<u8>, ServiceError> {
    let cached = cache_dir.join(format!("{}.png", sha256_hex(id.as_bytes())));
    if let Ok(bytes) = fs::read(&cached) {
        return Ok(bytes);
    }
    let img = image::open(source).map_err(|e| ServiceError::Internal(format!("{}: {e}", source.display())))?;
    let thumb = if img.width() > size || img.height() > size {
        img.thumbnail(size, size)
    } else {
        img
    };
    let mut bytes = Vec::new();
    thumb
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| ServiceError::Internal(e.to_string()))?;
    fs::create_dir_all(cache_dir).map_err(|e| ServiceError::Internal(format!("{}: {e}", cache_dir.display())))?;
    atomic_write(&cached, &bytes)?;
    Ok(bytes)
}
