use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

/// Writes a model as pretty JSON: layer names, shapes and row-major values.
/// Floats round-trip exactly.
pub fn save<T: Serialize>(path: &Path, model: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(model)?;
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{GruCell, Linear};
    use crate::rng::stream;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = stream(9);
        let layers = (Linear::new(3, 5, &mut rng), GruCell::new(5, 4, &mut rng));
        let path = dir.path().join("nested/model.json");
        save(&path, &layers).unwrap();
        let back: (Linear, GruCell) = load(&path).unwrap();
        assert_eq!(back, layers);
    }
}
