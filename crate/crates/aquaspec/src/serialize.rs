//! Versioned JSON serialization shared by all fitted-model types.
//!
//! Every document is `{"schema": "<name>", "version": N, "payload": {...}}`
//! so a reader can reject files written by an incompatible release.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SerializeError {
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: expected {expected:?} v{expected_version}, got {found:?} v{found_version}")]
    SchemaMismatch {
        expected: String,
        expected_version: u32,
        found: String,
        found_version: u32,
    },
}

/// Implemented by every serializable model type.
pub trait VersionedSchema {
    const SCHEMA: &'static str;
    const VERSION: u32;
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    schema: String,
    version: u32,
    payload: T,
}

pub fn to_versioned_json<T: Serialize + VersionedSchema>(value: &T) -> String {
    serde_json::to_string_pretty(&Envelope {
        schema: T::SCHEMA.to_string(),
        version: T::VERSION,
        payload: value,
    })
    .expect("model types serialize infallibly")
}

/// The schema/version check runs before the payload is decoded, so a
/// document of the wrong type reports the mismatch rather than a shape
/// error.
pub fn from_versioned_json<T: DeserializeOwned + VersionedSchema>(
    json: &str,
) -> Result<T, SerializeError> {
    let envelope: Envelope<serde_json::Value> = serde_json::from_str(json)?;
    if envelope.schema != T::SCHEMA || envelope.version != T::VERSION {
        return Err(SerializeError::SchemaMismatch {
            expected: T::SCHEMA.to_string(),
            expected_version: T::VERSION,
            found: envelope.schema,
            found_version: envelope.version,
        });
    }
    Ok(serde_json::from_value(envelope.payload)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize, PartialEq, Debug)]
    struct Demo {
        x: f64,
    }

    impl VersionedSchema for Demo {
        const SCHEMA: &'static str = "demo";
        const VERSION: u32 = 1;
    }

    #[test]
    fn round_trip_and_version_check() {
        let d = Demo { x: 1.5 };
        let json = to_versioned_json(&d);
        assert_eq!(from_versioned_json::<Demo>(&json).unwrap(), d);

        let tampered = json.replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(
            from_versioned_json::<Demo>(&tampered),
            Err(SerializeError::SchemaMismatch { .. })
        ));
    }
}
