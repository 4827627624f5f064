//! Samples of (input feature planes, normalized radio map) and the `RMAP`
//! binary format.
//!
//! Layout: 4-byte magic `RMAP`, then little-endian `u32` fields version,
//! count, h_in, w_in, c_in, h_out, w_out (32 header bytes in total), then per
//! sample `c_in` input planes followed by one target plane, all little-endian
//! `f32`, row-major.

use crate::error::{Error, Result};
use crate::oracle::{trace_radio_map, OracleConfig};
use crate::scene::{generate_scene, rasterize_scene, SceneParams, FEATURE_CHANNELS};
use crate::tensor::{RngState, Tensor};
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

pub const MAGIC: &[u8; 4] = b"RMAP";
pub const VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub c_in: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub h_out: usize,
    pub w_out: usize,
    inputs: Vec<f32>,
    targets: Vec<f32>,
}

impl Dataset {
    pub fn new(c_in: usize, h_in: usize, w_in: usize, h_out: usize, w_out: usize) -> Self {
        Self {
            c_in,
            h_in,
            w_in,
            h_out,
            w_out,
            inputs: Vec::new(),
            targets: Vec::new(),
        }
    }

    pub fn input_len(&self) -> usize {
        self.c_in * self.h_in * self.w_in
    }

    pub fn target_len(&self) -> usize {
        self.h_out * self.w_out
    }

    pub fn len(&self) -> usize {
        self.targets.len() / self.target_len().max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f32] {
        let n = self.input_len();
        &self.inputs[i * n..(i + 1) * n]
    }

    pub fn target(&self, i: usize) -> &[f32] {
        let n = self.target_len();
        &self.targets[i * n..(i + 1) * n]
    }

    pub fn push(&mut self, input: &[f32], target: &[f32]) -> Result<()> {
        if input.len() != self.input_len() || target.len() != self.target_len() {
            return Err(Error::Contract(format!(
                "sample sizes {}/{} do not match dataset {}/{}",
                input.len(),
                target.len(),
                self.input_len(),
                self.target_len()
            )));
        }
        if input.iter().chain(target).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("dataset values must lie in [0, 1]".into()));
        }
        self.inputs.extend_from_slice(input);
        self.targets.extend_from_slice(target);
        Ok(())
    }

    /// Samples `indices` as `([B, channels, h_in, w_in], [B, 1, h_out, w_out])`,
    /// keeping the first `channels` input planes.
    pub fn batch(&self, indices: &[usize], channels: usize) -> Result<(Tensor, Tensor)> {
        if channels > self.c_in {
            return Err(Error::Contract(format!(
                "model needs {channels} input channels, dataset has {}",
                self.c_in
            )));
        }
        let plane = self.h_in * self.w_in;
        let mut x = Vec::with_capacity(indices.len() * channels * plane);
        let mut y = Vec::with_capacity(indices.len() * self.target_len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Contract(format!("sample {i} out of range for {} samples", self.len())));
            }
            x.extend_from_slice(&self.input(i)[..channels * plane]);
            y.extend_from_slice(self.target(i));
        }
        Ok((
            Tensor::new(&[indices.len(), channels, self.h_in, self.w_in], x)?,
            Tensor::new(&[indices.len(), 1, self.h_out, self.w_out], y)?,
        ))
    }

    /// Same samples, restricted to `indices` in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut out = Self::new(self.c_in, self.h_in, self.w_in, self.h_out, self.w_out);
        for &i in indices {
            out.inputs.extend_from_slice(self.input(i));
            out.targets.extend_from_slice(self.target(i));
        }
        out
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, self.len(), [self.h_in, self.w_in, self.c_in, self.h_out, self.w_out])?;
        let mut buf = Vec::with_capacity(4 * (self.input_len() + self.target_len()));
        for i in 0..self.len() {
            write_record(&mut w, &mut buf, self.input(i), self.target(i))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; HEADER_BYTES];
        r.read_exact(&mut header)
            .map_err(|_| Error::Format("truncated RMAP header".into()))?;
        if &header[..4] != MAGIC {
            return Err(Error::Format("not an RMAP dataset".into()));
        }
        let field = |k: usize| u32::from_le_bytes(header[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
        if field(0) != VERSION as usize {
            return Err(Error::Format(format!("unsupported dataset version {}", field(0))));
        }
        let n = field(1);
        let mut ds = Self::new(field(4), field(2), field(3), field(5), field(6));
        let record = ds.input_len() + ds.target_len();
        let mut bytes = vec![0u8; 4 * record];
        let mut floats = vec![0f32; record];
        for k in 0..n {
            r.read_exact(&mut bytes)
                .map_err(|_| Error::Format(format!("dataset truncated at record {k} of {n}")))?;
            for (f, c) in floats.iter_mut().zip(bytes.chunks_exact(4)) {
                *f = f32::from_le_bytes(c.try_into().unwrap());
            }
            let (x, y) = floats.split_at(ds.input_len());
            ds.push(x, y).map_err(|e| Error::Format(format!("record {k}: {e}")))?;
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(Error::Format(format!("trailing bytes after {n} records")));
        }
        Ok(ds)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + 4 * (self.inputs.len() + self.targets.len()));
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Hex SHA-256 of the serialized file.
    pub fn checksum(&self) -> String {
        let mut h = HashWriter(Sha256::new());
        self.write_to(&mut h).expect("hashing never fails");
        hex(&h.0.finalize())
    }
}

fn write_header<W: Write>(w: &mut W, count: usize, dims: [usize; 5]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in std::iter::once(count).chain(dims) {
        let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit the dataset header")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_record<W: Write>(w: &mut W, buf: &mut Vec<u8>, input: &[f32], target: &[f32]) -> Result<()> {
    buf.clear();
    for v in input.iter().chain(target) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(buf)?;
    Ok(())
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// What [`generate_dataset`] produces.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationSpec {
    pub count: usize,
    pub seed: u64,
    pub input_res: usize,
    pub output_res: usize,
    pub scene: SceneParams,
    pub oracle: OracleConfig,
}

/// Scene, input features and normalized radio map of sample `i`.
pub fn generate_sample(spec: &GenerationSpec, i: usize) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut rng = RngState::with_stream(spec.seed, i as u64);
    let scene = generate_scene(&mut rng, &spec.scene)?;
    let maps = rasterize_scene(&scene, spec.input_res, spec.input_res)?;
    let radio = trace_radio_map(&scene, &spec.oracle, spec.output_res, spec.output_res)?;
    Ok((maps.to_tensor().into_data(), radio.normalized))
}

fn generate_range(
    spec: &GenerationSpec,
    range: std::ops::Range<usize>,
    done: &AtomicUsize,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<Vec<(Vec<f32>, Vec<f32>)>> {
    range
        .into_par_iter()
        .map(|i| {
            let sample = generate_sample(spec, i)?;
            progress(done.fetch_add(1, Ordering::Relaxed) + 1);
            Ok(sample)
        })
        .collect()
}

/// Generate, rasterize and trace `count` scenes. Sample `i` draws from its own
/// random stream, so the result does not depend on scheduling; samples are
/// computed in parallel and stored in index order. `progress` receives the
/// number of finished samples.
pub fn generate_dataset(spec: &GenerationSpec, progress: &(dyn Fn(usize) + Sync)) -> Result<Dataset> {
    spec.scene.validate()?;
    spec.oracle.validate()?;
    let samples = generate_range(spec, 0..spec.count, &AtomicUsize::new(0), progress)?;
    let mut ds = Dataset::new(
        FEATURE_CHANNELS.len(),
        spec.input_res,
        spec.input_res,
        spec.output_res,
        spec.output_res,
    );
    for (x, y) in samples {
        ds.push(&x, &y)?;
    }
    Ok(ds)
}

/// Like [`generate_dataset`] but writes records to `w` in chunks of
/// `chunk` samples, so memory stays bounded. Returns the hex SHA-256 of the
/// bytes written, which equals [`Dataset::checksum`] of the same data.
pub fn generate_dataset_to<W: Write>(
    spec: &GenerationSpec,
    mut w: W,
    chunk: usize,
    progress: &(dyn Fn(usize) + Sync),
) -> Result<String> {
    spec.scene.validate()?;
    spec.oracle.validate()?;
    let mut h = HashWriter(Sha256::new());
    let dims = [spec.input_res, spec.input_res, FEATURE_CHANNELS.len(), spec.output_res, spec.output_res];
    let mut header = Vec::with_capacity(HEADER_BYTES);
    write_header(&mut header, spec.count, dims)?;
    w.write_all(&header)?;
    h.write_all(&header)?;
    let done = AtomicUsize::new(0);
    let mut buf = Vec::new();
    let mut start = 0;
    while start < spec.count {
        let end = (start + chunk.max(1)).min(spec.count);
        for (x, y) in generate_range(spec, start..end, &done, progress)? {
            if x.iter().chain(&y).any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Generation("generated value outside [0, 1]".into()));
            }
            write_record(&mut w, &mut buf, &x, &y)?;
            h.write_all(&buf)?;
        }
        start = end;
    }
    w.flush()?;
    Ok(hex(&h.0.finalize()))
}
