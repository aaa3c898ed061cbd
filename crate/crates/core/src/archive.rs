//! JSON archive of synthesized closed-loop maps.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::poly::PolyVec;
use crate::synthesis::{AlphaParams, ClosedLoopMaps, SystemModel};

pub const FORMAT: &str = "polysls-clm/1";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    format: String,
    model_fingerprint: String,
    horizon: usize,
    alpha: AlphaParams,
    psi_x: PolyVec,
    psi_u: PolyVec,
    #[serde(default)]
    metadata: BTreeMap<String, Value>,
}

pub fn clm_to_string(clms: &ClosedLoopMaps, metadata: &BTreeMap<String, Value>) -> Result<String> {
    let doc = Document {
        format: FORMAT.to_string(),
        model_fingerprint: clms.model_fingerprint.clone(),
        horizon: clms.horizon,
        alpha: clms.alpha.clone(),
        psi_x: clms.psi_x.clone(),
        psi_u: clms.psi_u.clone(),
        metadata: metadata.clone(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

/// Parses an archive. With `model` given, the archive must have been built
/// for the same dynamics.
pub fn clm_from_str(
    text: &str,
    model: Option<&SystemModel>,
) -> Result<(ClosedLoopMaps, BTreeMap<String, Value>)> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: Document = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        Error::Parse {
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })?;
    if doc.format != FORMAT {
        return Err(Error::config(
            "format",
            format!("expected `{FORMAT}`, found `{}`", doc.format),
        ));
    }
    if doc.psi_x.dim() != doc.psi_u.dim() {
        return Err(Error::DimensionMismatch {
            what: "psi_u",
            expected: doc.psi_x.dim(),
            found: doc.psi_u.dim(),
        });
    }
    if let Some(m) = model {
        let expected = m.fingerprint();
        if expected != doc.model_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected,
                found: doc.model_fingerprint,
            });
        }
    }
    Ok((
        ClosedLoopMaps {
            psi_x: doc.psi_x,
            psi_u: doc.psi_u,
            horizon: doc.horizon,
            alpha: doc.alpha,
            model_fingerprint: doc.model_fingerprint,
        },
        doc.metadata,
    ))
}

pub fn save_clm(
    clms: &ClosedLoopMaps,
    metadata: &BTreeMap<String, Value>,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, clm_to_string(clms, metadata)?)?;
    Ok(())
}

pub fn load_clm(
    path: &Path,
    model: Option<&SystemModel>,
) -> Result<(ClosedLoopMaps, BTreeMap<String, Value>)> {
    clm_from_str(&std::fs::read_to_string(path)?, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::scalar_quadratic;
    use crate::synthesis::{SynthesisOptions, Synthesizer};

    fn clms() -> ClosedLoopMaps {
        let m = scalar_quadratic();
        let s = Synthesizer::new(&m, 2, SynthesisOptions::default()).unwrap();
        s.synthesize(&s.skeleton(0.37)).unwrap().1
    }

    #[test]
    fn round_trip_is_exact() {
        let c = clms();
        let text = clm_to_string(&c, &BTreeMap::new()).unwrap();
        let (back, meta) = clm_from_str(&text, Some(&scalar_quadratic())).unwrap();
        assert!(meta.is_empty());
        assert_eq!(back, c);
        for (a, b) in back.psi_u.components()[0]
            .terms()
            .iter()
            .zip(c.psi_u.components()[0].terms())
        {
            assert_eq!(a.coefficient.to_bits(), b.coefficient.to_bits());
        }
        assert_eq!(clm_to_string(&back, &BTreeMap::new()).unwrap(), text);
    }

    #[test]
    fn wrong_model_is_rejected() {
        let text = clm_to_string(&clms(), &BTreeMap::new()).unwrap();
        let other = SystemModel::scalar("other", &[(1, 0.5)]).unwrap();
        assert!(matches!(
            clm_from_str(&text, Some(&other)),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn bad_format_tag() {
        let text = clm_to_string(&clms(), &BTreeMap::new())
            .unwrap()
            .replace(FORMAT, "other/9");
        assert!(clm_from_str(&text, None).is_err());
    }
}
