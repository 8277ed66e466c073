//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form and parsed exactly, so save/load is bit-exact for finite values.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    payload: T,
}

pub fn to_string<T: Serialize>(format: &str, payload: &T) -> Result<String> {
    Ok(serde_json::to_string(&Envelope {
        format: format.to_string(),
        payload,
    })?)
}

pub fn from_str<T: DeserializeOwned>(format: &str, text: &str) -> Result<T> {
    let env: Envelope<serde_json::Value> = serde_json::from_str(text)?;
    if env.format != format {
        return Err(Error::Format {
            expected: format.to_string(),
            found: env.format,
        });
    }
    Ok(serde_json::from_value(env.payload)?)
}

pub fn save<T: Serialize>(path: impl AsRef<Path>, format: &str, payload: &T) -> Result<()> {
    fs::write(path, to_string(format, payload)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, format: &str) -> Result<T> {
    from_str(format, &fs::read_to_string(path)?)
}
