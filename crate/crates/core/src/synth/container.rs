//! Binary dataset container.
//!
//! Layout: the 8-byte magic `ENSUQDS1`, a little-endian `u64` header length,
//! the JSON header, then every split's images as little-endian `f64` in the
//! order train, validation, ID test, OOD test, followed by all labels as
//! little-endian `u32` in the same order. The header carries the SHA-256 of
//! everything after it.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetSpec, LabeledImages, SplitDataset};
use crate::error::{Error, Result};
use crate::nn::params_io::{decode_f64s, encode_f64s};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"ENSUQDS1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: DatasetSpec,
    pixels: usize,
    counts: Counts,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Counts {
    train: usize,
    validation: usize,
    id_test: usize,
    ood_test: usize,
}

fn splits(d: &SplitDataset) -> [&LabeledImages; 4] {
    [&d.train, &d.validation, &d.id_test, &d.ood_test]
}

pub fn write_dataset(data: &SplitDataset, path: &Path) -> Result<()> {
    let mut payload = Vec::new();
    for split in splits(data) {
        payload.extend(encode_f64s(split.images.data()));
    }
    for split in splits(data) {
        for &label in &split.labels {
            payload.extend((label as u32).to_le_bytes());
        }
    }
    let header = Header {
        spec: data.spec.clone(),
        pixels: data.spec.pixels(),
        counts: Counts {
            train: data.train.len(),
            validation: data.validation.len(),
            id_test: data.id_test.len(),
            ood_test: data.ood_test.len(),
        },
        sha256: hex(&Sha256::digest(&payload)),
    };
    let header = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + header.len() + payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend((header.len() as u64).to_le_bytes());
    bytes.extend(header);
    bytes.extend(payload);
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<SplitDataset> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(corrupt("missing magic"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = 16usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header length past end of file"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    let payload = &bytes[body..];
    if hex(&Sha256::digest(payload)) != header.sha256 {
        return Err(corrupt("checksum mismatch"));
    }
    let c = &header.counts;
    let counts = [c.train, c.validation, c.id_test, c.ood_test];
    let total: usize = counts.iter().sum();
    let image_bytes = total * header.pixels * 8;
    if payload.len() != image_bytes + total * 4 {
        return Err(corrupt("payload size disagrees with header counts"));
    }
    let images = decode_f64s(&payload[..image_bytes]).ok_or_else(|| corrupt("image block"))?;
    let labels: Vec<usize> = payload[image_bytes..]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
        .collect();
    let mut parts = Vec::with_capacity(4);
    let (mut img_off, mut lab_off) = (0, 0);
    for n in counts {
        let rows = images[img_off..img_off + n * header.pixels].to_vec();
        parts.push(LabeledImages {
            images: Tensor::new(vec![n, header.pixels], rows)?,
            labels: labels[lab_off..lab_off + n].to_vec(),
        });
        img_off += n * header.pixels;
        lab_off += n;
    }
    let mut parts = parts.into_iter();
    let mut next = || parts.next().expect("four splits");
    Ok(SplitDataset {
        spec: header.spec,
        train: next(),
        validation: next(),
        id_test: next(),
        ood_test: next(),
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = DatasetSpec {
            per_class_train: 12,
            per_class_id_test: 3,
            per_class_ood_test: 2,
            ..DatasetSpec::default()
        };
        let data = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        write_dataset(&data, &path).unwrap();
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, data);
        let bits = |d: &SplitDataset| d.train.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&data));
    }

    #[test]
    fn tampered_payload_fails_checksum() {
        let spec = DatasetSpec {
            per_class_train: 4,
            per_class_id_test: 1,
            per_class_ood_test: 1,
            ..DatasetSpec::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.bin");
        write_dataset(&generate(&spec).unwrap(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_dataset(&path), Err(Error::Corrupt { .. })));
        std::fs::write(&path, b"nope").unwrap();
        assert!(read_dataset(&path).is_err());
    }
}
