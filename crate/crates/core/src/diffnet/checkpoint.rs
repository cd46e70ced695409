//! Model checkpoints: one line of canonical JSON holding the [`ArchSpec`],
//! a `\n`, then every parameter tensor as a GAIT record in layer order.

use std::path::Path;

use super::{ArchSpec, Classifier};
use crate::error::{Error, Result};
use crate::numcore::io::{decode_tensors, encode_tensors, write_atomic};

pub fn to_bytes(model: &Classifier) -> Vec<u8> {
    let mut out = serde_json::to_vec(model.arch()).expect("ArchSpec serializes");
    out.push(b'\n');
    out.extend(encode_tensors(&model.params().iter().collect::<Vec<_>>()));
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<Classifier> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("checkpoint header is not newline terminated".into()))?;
    let arch: ArchSpec = serde_json::from_slice(&bytes[..nl])?;
    let params = decode_tensors(&bytes[nl + 1..])?;
    Classifier::from_params(arch, params)
}

pub fn save(model: &Classifier, path: &Path) -> Result<()> {
    write_atomic(path, &to_bytes(model))
}

pub fn load(path: &Path) -> Result<Classifier> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| e.context(format!("loading checkpoint {}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::SeededRng;

    #[test]
    fn header_is_canonical_json_line() {
        let m = Classifier::zeros(ArchSpec::linear(2, 2, 1, 3)).unwrap();
        let bytes = to_bytes(&m);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        let header = std::str::from_utf8(&bytes[..nl]).unwrap();
        assert_eq!(
            header,
            r#"{"height":2,"width":2,"channels":1,"conv_channels":[],"hidden":[],"classes":3,"input_mean":0.0}"#
        );
        assert_eq!(&bytes[nl + 1..nl + 5], b"GAIT");
    }

    #[test]
    fn roundtrip_preserves_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let m = Classifier::new(ArchSpec::reference(8, 8, 3, 4), &mut SeededRng::new(3)).unwrap();
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.fingerprint(), m.fingerprint());
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_mismatched_params() {
        let m = Classifier::zeros(ArchSpec::linear(2, 2, 1, 3)).unwrap();
        let mut bytes = to_bytes(&m);
        bytes.truncate(bytes.len() - 8);
        assert!(from_bytes(&bytes).is_err());
    }
}
