//! Binary container of named `f64` tensors with a text manifest.
//!
//! Layout: a UTF-8 manifest terminated by a line `end`, followed by the
//! payload, which is every tensor's data as little-endian `f64`, back to back
//! in manifest order.
//!
//! ```text
//! setsim-checkpoint 1
//! meta step 120
//! tensor query.backbone.0.kernel 16,3,3,3 0 432
//! ...
//! payload 1234567
//! end
//! ```
//!
//! `tensor` lines give name, shape, element offset and element count;
//! `payload` gives the payload size in bytes. Meta values run to the end of
//! the line and may contain spaces but not newlines.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &str = "setsim-checkpoint 1";

/// Named tensors plus string metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    meta: BTreeMap<String, String>,
    tensors: Vec<(String, Tensor)>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && !name.contains(char::is_whitespace)
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        if !valid_name(key) || value.contains('\n') {
            return Err(Error::invalid("meta", format!("unusable key/value for {key:?}")));
        }
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn push_tensor(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if !valid_name(name) {
            return Err(Error::invalid("tensor name", format!("{name:?}")));
        }
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::invalid("tensor name", format!("duplicate {name:?}")));
        }
        self.tensors.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn tensors(&self) -> &[(String, Tensor)] {
        &self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        manifest.push_str(MAGIC);
        manifest.push('\n');
        for (k, v) in &self.meta {
            manifest.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0;
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("tensor {name} {} {offset} {}\n", dims.join(","), t.len()));
            offset += t.len();
        }
        manifest.push_str(&format!("payload {}\nend\n", offset * 8));
        let mut bytes = manifest.into_bytes();
        bytes.reserve(offset * 8);
        for (_, t) in &self.tensors {
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes
    }

    /// Parses a container. `origin` only labels error messages.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        parse(bytes).map_err(|reason| Error::Checkpoint {
            path: origin.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes, path)
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<Container, String> {
    let mut pos = 0;
    let mut next_line = |lineno: usize| -> std::result::Result<&str, String> {
        let rest = &bytes[pos..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| format!("manifest line {lineno}: unterminated (file truncated?)"))?;
        pos += len + 1;
        std::str::from_utf8(&rest[..len]).map_err(|_| format!("manifest line {lineno}: not UTF-8"))
    };

    let first = next_line(1)?;
    if first != MAGIC {
        return Err(format!("manifest line 1: expected {MAGIC:?}, found {first:?}"));
    }
    let mut container = Container::new();
    let mut layout: Vec<(String, Vec<usize>, usize, usize)> = Vec::new();
    let mut payload_bytes = None;
    let mut lineno = 1;
    loop {
        lineno += 1;
        let line = next_line(lineno)?;
        let err = |what: &str| format!("manifest line {lineno}: {what}: {line:?}");
        let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
        match kind {
            "end" if rest.is_empty() => break,
            "meta" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                if !valid_name(k) || container.meta.insert(k.to_string(), v.to_string()).is_some() {
                    return Err(err("bad or duplicate meta key"));
                }
            }
            "tensor" => {
                let fields: Vec<&str> = rest.split(' ').collect();
                let [name, dims, offset, count] = fields[..] else {
                    return Err(err("expected `tensor name dims offset count`"));
                };
                let shape = dims
                    .split(',')
                    .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| err("bad dims"))?;
                let offset: usize = offset.parse().map_err(|_| err("bad offset"))?;
                let count: usize = count.parse().map_err(|_| err("bad count"))?;
                if shape.iter().product::<usize>() != count {
                    return Err(err("count disagrees with shape"));
                }
                let expected = layout.last().map_or(0, |(_, _, o, c)| o + c);
                if offset != expected {
                    return Err(err(&format!("offset should be {expected}")));
                }
                if !valid_name(name) || layout.iter().any(|(n, ..)| n == name) {
                    return Err(err("bad or duplicate tensor name"));
                }
                layout.push((name.to_string(), shape, offset, count));
            }
            "payload" => {
                let n: usize = rest.parse().map_err(|_| err("bad payload size"))?;
                payload_bytes = Some(n);
            }
            _ => return Err(err("unknown manifest entry")),
        }
    }
    let declared = payload_bytes.ok_or("manifest has no payload line")?;
    let needed = layout.last().map_or(0, |(_, _, o, c)| o + c) * 8;
    if declared != needed {
        return Err(format!("payload line says {declared} bytes, tensors need {needed}"));
    }
    let payload = &bytes[pos..];
    if payload.len() != needed {
        return Err(format!(
            "payload is {} bytes, manifest declares {needed}",
            payload.len()
        ));
    }
    for (name, shape, offset, count) in layout {
        let data = payload[offset * 8..(offset + count) * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        container.tensors.push((name, t));
    }
    Ok(container)
}

/// Error for a container that parsed but lacks what the caller expected.
pub(crate) fn mismatch(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: PathBuf::from(path),
        reason: reason.into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.set_meta("step", 12).unwrap();
        c.set_meta("note", "two words").unwrap();
        c.push_tensor(
            "a",
            Tensor::new(&[2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -2.5, 0.1]).unwrap(),
        )
        .unwrap();
        c.push_tensor("b", Tensor::from_vec(vec![std::f64::consts::PI]))
            .unwrap();
        c
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes(), Path::new("mem")).unwrap();
        assert_eq!(back.meta(), c.meta());
        for ((n1, t1), (n2, t2)) in back.tensors().iter().zip(c.tensors()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for cut in 0..bytes.len() {
            let err = Container::from_bytes(&bytes[..cut], Path::new("t")).unwrap_err();
            assert!(matches!(err, Error::Checkpoint { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn manifest_tampering_is_rejected() {
        let bytes = sample().to_bytes();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        for (from, to) in [
            ("2,3 0 6", "3,3 0 6"),
            ("1 6 1", "1 7 1"),
            ("payload 56", "payload 64"),
            ("meta step", "meat step"),
        ] {
            assert!(text.contains(from), "{from}");
            let mut tampered = bytes.clone();
            let at = text.find(from).unwrap();
            tampered.splice(at..at + from.len(), to.bytes());
            assert!(
                Container::from_bytes(&tampered, Path::new("t")).is_err(),
                "{from} -> {to}"
            );
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::from_bytes(&extra, Path::new("t")).is_err());
    }

    #[test]
    fn rejects_bad_names() {
        let mut c = Container::new();
        assert!(c.push_tensor("has space", Tensor::from_vec(vec![1.0])).is_err());
        c.push_tensor("x", Tensor::from_vec(vec![1.0])).unwrap();
        assert!(c.push_tensor("x", Tensor::from_vec(vec![1.0])).is_err());
        assert!(c.set_meta("k", "line\nbreak").is_err());
    }
}
