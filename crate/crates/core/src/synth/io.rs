//! Binary dataset and split files.
//!
//! Dataset: `"DSET"`, version `u32`, subject count `u32`, then one record per
//! sample until end of file: subject id `u32`, label width `u32` (0 for the
//! target subject) followed by that many `f32` one-hot values, CSI rank `u32`
//! and extents `u32`, CSI values `f32`, skeleton rank and extents, skeleton
//! bytes. Integers and floats are little-endian.
//!
//! Split: `"SPLT"`, version `u32`, then the train, test-source and
//! test-target lists, each a `u32` count followed by `u32` indices.

use std::fs;
use std::path::{Path, PathBuf};

use super::csi::{CHANNELS, CSI_LEN, SUBCARRIERS};
use super::dataset::{Dataset, DatasetSplit, Sample};
use super::{CANVAS_H, CANVAS_W, WINDOW};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"DSET";
pub const SPLIT_MAGIC: &[u8; 4] = b"SPLT";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_extents(out: &mut Vec<u8>, extents: &[usize]) {
    put_u32(out, extents.len() as u32);
    for &e in extents {
        put_u32(out, e as u32);
    }
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("truncated {} at byte {}", self.what, self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().expect("4 bytes")))
    }

    pub fn magic(&mut self, expected: &[u8; 4]) -> Result<()> {
        let got = self.bytes(4)?;
        if got != expected {
            return Err(Error::Format(format!(
                "bad {} magic: expected {:?}, found {:?}",
                self.what,
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(got)
            )));
        }
        Ok(())
    }

    pub fn version(&mut self, expected: u32) -> Result<()> {
        let v = self.u32()?;
        if v != expected {
            return Err(Error::Format(format!(
                "unsupported {} version {v} (expected {expected})",
                self.what
            )));
        }
        Ok(())
    }

    fn extents(&mut self, expected: &[usize]) -> Result<()> {
        let rank = self.u32()? as usize;
        let got = (0..rank)
            .map(|_| self.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        if got != expected {
            return Err(Error::shape(self.what, format!("{expected:?}"), format!("{got:?}")));
        }
        Ok(())
    }
}

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + data.len() * (CSI_LEN * 4 + CANVAS_H * CANVAS_W + 64));
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, data.subjects as u32);
    let width = data.domains();
    for s in &data.samples {
        put_u32(&mut out, s.subject);
        match s.label {
            Some(k) => {
                put_u32(&mut out, width as u32);
                for i in 0..width {
                    out.extend_from_slice(&(if i == k { 1f32 } else { 0f32 }).to_le_bytes());
                }
            }
            None => put_u32(&mut out, 0),
        }
        put_extents(&mut out, &[SUBCARRIERS, WINDOW, CHANNELS]);
        for v in &s.csi {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_extents(&mut out, &[CANVAS_H, CANVAS_W]);
        out.extend_from_slice(&s.skeleton);
    }
    out
}

pub fn decode_dataset(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(buf, "dataset");
    r.magic(DATASET_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let subjects = r.u32()? as usize;
    if subjects < 2 {
        return Err(Error::Format(format!("dataset declares {subjects} subjects")));
    }
    let mut samples = Vec::new();
    while !r.at_end() {
        let subject = r.u32()?;
        if subject as usize >= subjects {
            return Err(Error::Format(format!("subject id {subject} out of range")));
        }
        let width = r.u32()? as usize;
        let label = if width == 0 {
            None
        } else {
            if width != subjects - 1 {
                return Err(Error::Format(format!(
                    "label width {width} does not match {} source subjects",
                    subjects - 1
                )));
            }
            let values = (0..width).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
            let hot: Vec<_> = (0..width).filter(|&i| values[i] == 1.0).collect();
            if hot.len() != 1 || values.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Format("domain label is not one-hot".into()));
            }
            Some(hot[0])
        };
        r.extents(&[SUBCARRIERS, WINDOW, CHANNELS])?;
        let csi = (0..CSI_LEN).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        r.extents(&[CANVAS_H, CANVAS_W])?;
        let skeleton = r.bytes(CANVAS_H * CANVAS_W)?.to_vec();
        samples.push(Sample {
            subject,
            label,
            csi,
            skeleton,
        });
    }
    Ok(Dataset { subjects, samples })
}

pub fn encode_split(split: &DatasetSplit) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(SPLIT_MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    for list in [&split.train, &split.test_source, &split.test_target] {
        put_u32(&mut out, list.len() as u32);
        for &i in list {
            put_u32(&mut out, i as u32);
        }
    }
    out
}

pub fn decode_split(buf: &[u8]) -> Result<DatasetSplit> {
    let mut r = Reader::new(buf, "split");
    r.magic(SPLIT_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let mut lists = Vec::with_capacity(3);
    for _ in 0..3 {
        let n = r.u32()? as usize;
        lists.push(
            (0..n)
                .map(|_| r.u32().map(|v| v as usize))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if !r.at_end() {
        return Err(Error::Format("trailing bytes after split lists".into()));
    }
    let test_target = lists.pop().expect("three lists");
    let test_source = lists.pop().expect("three lists");
    let train = lists.pop().expect("three lists");
    Ok(DatasetSplit {
        train,
        test_source,
        test_target,
    })
}

/// Companion split path: the dataset path with extension `split`.
pub fn split_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("split")
}

pub fn save_dataset(path: &Path, data: &Dataset, split: &DatasetSplit) -> Result<()> {
    fs::write(path, encode_dataset(data))?;
    fs::write(split_path(path), encode_split(split))?;
    Ok(())
}

/// Loads a dataset and its split, checking that split indices are in range
/// and that no target sample is listed for training.
pub fn load_dataset(path: &Path) -> Result<(Dataset, DatasetSplit)> {
    let data = decode_dataset(&fs::read(path)?)?;
    let split = decode_split(&fs::read(split_path(path))?)?;
    for &i in split.train.iter().chain(&split.test_source).chain(&split.test_target) {
        if i >= data.len() {
            return Err(Error::Format(format!("split index {i} out of range")));
        }
    }
    if split.train.iter().any(|&i| data.samples[i].label.is_none()) {
        return Err(Error::Format("split trains on an unlabeled sample".into()));
    }
    Ok((data, split))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{build_dataset, make_subjects};

    #[test]
    fn round_trip_is_bit_exact() {
        let subjects = make_subjects(2, 3).unwrap();
        let (data, split) = build_dataset(&subjects, 45, 2).unwrap();
        let bytes = encode_dataset(&data);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, data);
        assert_eq!(encode_dataset(&back), bytes);
        assert_eq!(decode_split(&encode_split(&split)).unwrap(), split);
    }

    #[test]
    fn rejects_corruption() {
        let subjects = make_subjects(2, 2).unwrap();
        let (data, _) = build_dataset(&subjects, 40, 2).unwrap();
        let mut bytes = encode_dataset(&data);
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
        bytes[0] = b'X';
        let err = decode_dataset(&bytes).unwrap_err().to_string();
        assert!(err.contains("DSET"), "{err}");
    }
}
