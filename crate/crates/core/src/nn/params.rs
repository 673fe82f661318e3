//! Learnable state, parameter groups, the optimizer, and checkpoint files.
//!
//! A checkpoint is two files: a binary blob of little-endian IEEE-754 doubles and a text header
//! describing it. The header starts with the line `EMIE1`, followed by `meta <key> <value>`
//! lines and one `tensor <name> <rows> <cols> <byte_offset>` line per tensor, in blob order.

use std::fmt;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::decode::{color_decoder, elevation_mlp, shared_color_decoder, EMBEDDING_DIM};
use super::mlp::Mlp;
use crate::error::{Error, Result};
use crate::scene::{CODE_DIM, NUM_CLASSES};

pub const CHECKPOINT_MAGIC: &str = "EMIE1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    ElevationMlp,
    ColorMlps,
    SemLogits,
    ColorCodes,
    DirectRgb,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningRates {
    pub elevation_mlp: f64,
    pub color_mlps: f64,
    pub sem_logits: f64,
    pub color_codes: f64,
    /// Explicit per-vertex RGB, only used by the direct-color ablation.
    pub direct_rgb: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            elevation_mlp: 0.01,
            color_mlps: 0.005,
            sem_logits: 0.1,
            color_codes: 0.005,
            direct_rgb: 0.05,
        }
    }
}

impl LearningRates {
    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::ElevationMlp => self.elevation_mlp,
            ParamGroup::ColorMlps => self.color_mlps,
            ParamGroup::SemLogits => self.sem_logits,
            ParamGroup::ColorCodes => self.color_codes,
            ParamGroup::DirectRgb => self.direct_rgb,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorVariant {
    /// One decoder per camera over the shared codes.
    PerCameraMlp,
    /// One decoder over `code ⊕ camera embedding`.
    SharedMlpEmbedding,
    /// Per-vertex RGB optimized directly, no decoder.
    DirectRgb,
}

impl fmt::Display for ColorVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ColorVariant::PerCameraMlp => "per_camera_mlp",
            ColorVariant::SharedMlpEmbedding => "shared_mlp_embedding",
            ColorVariant::DirectRgb => "direct_rgb",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ColorModel {
    PerCamera(Vec<(u32, Mlp)>),
    Shared {
        mlp: Mlp,
        cameras: Vec<u32>,
        /// One row per entry of `cameras`.
        embeddings: Array2<f64>,
    },
    Direct {
        rgb: Array2<f64>,
    },
}

impl ColorModel {
    pub fn variant(&self) -> ColorVariant {
        match self {
            ColorModel::PerCamera(_) => ColorVariant::PerCameraMlp,
            ColorModel::Shared { .. } => ColorVariant::SharedMlpEmbedding,
            ColorModel::Direct { .. } => ColorVariant::DirectRgb,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState {
    pub elevation: Mlp,
    pub color: ColorModel,
    /// `vertices x 5`.
    pub sem_logits: Array2<f64>,
    /// `vertices x 32`.
    pub color_codes: Array2<f64>,
}

/// Borrowed view of one named tensor.
pub struct Tensor<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub data: &'a mut [f64],
}

fn mlp_entries(prefix: &str, mlp: &Mlp) -> Vec<(String, [usize; 2])> {
    mlp.layers
        .iter()
        .enumerate()
        .flat_map(|(l, layer)| {
            [
                (format!("{prefix}.{l}.weight"), [layer.weight.nrows(), layer.weight.ncols()]),
                (format!("{prefix}.{l}.bias"), [layer.bias.len(), 1]),
            ]
        })
        .collect()
}

fn shape2(a: &Array2<f64>) -> [usize; 2] {
    [a.nrows(), a.ncols()]
}

impl ParamState {
    /// Seeded initialization. Logits ~ U(-0.01, 0.01), codes ~ U(-0.1, 0.1), embeddings ~
    /// U(-0.1, 0.1), direct RGB starts at mid gray.
    pub fn init(num_vertices: usize, cameras: &[u32], variant: ColorVariant, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let elevation = elevation_mlp(&mut rng);
        let mut cams = cameras.to_vec();
        cams.sort_unstable();
        cams.dedup();
        let color = match variant {
            ColorVariant::PerCameraMlp => {
                ColorModel::PerCamera(cams.iter().map(|&c| (c, color_decoder(&mut rng))).collect())
            }
            ColorVariant::SharedMlpEmbedding => {
                let mlp = shared_color_decoder(&mut rng);
                let embeddings =
                    Array2::from_shape_simple_fn((cams.len(), EMBEDDING_DIM), || rng.random_range(-0.1..0.1));
                ColorModel::Shared { mlp, cameras: cams.clone(), embeddings }
            }
            ColorVariant::DirectRgb => ColorModel::Direct {
                rgb: Array2::from_elem((num_vertices, 3), 0.5),
            },
        };
        let sem_logits =
            Array2::from_shape_simple_fn((num_vertices, NUM_CLASSES), || rng.random_range(-0.01..0.01));
        let color_codes =
            Array2::from_shape_simple_fn((num_vertices, CODE_DIM), || rng.random_range(-0.1..0.1));
        ParamState { elevation, color, sem_logits, color_codes }
    }

    pub fn num_vertices(&self) -> usize {
        self.sem_logits.nrows()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    fn layout(&self) -> Vec<(String, ParamGroup, [usize; 2])> {
        let mut out: Vec<(String, ParamGroup, [usize; 2])> = mlp_entries("elevation", &self.elevation)
            .into_iter()
            .map(|(n, s)| (n, ParamGroup::ElevationMlp, s))
            .collect();
        match &self.color {
            ColorModel::PerCamera(decoders) => {
                for (cam, mlp) in decoders {
                    out.extend(
                        mlp_entries(&format!("decoder.cam{cam}"), mlp)
                            .into_iter()
                            .map(|(n, s)| (n, ParamGroup::ColorMlps, s)),
                    );
                }
            }
            ColorModel::Shared { mlp, embeddings, .. } => {
                out.extend(
                    mlp_entries("decoder.shared", mlp)
                        .into_iter()
                        .map(|(n, s)| (n, ParamGroup::ColorMlps, s)),
                );
                out.push(("embeddings".into(), ParamGroup::ColorMlps, shape2(embeddings)));
            }
            ColorModel::Direct { rgb } => {
                out.push(("direct_rgb".into(), ParamGroup::DirectRgb, shape2(rgb)));
            }
        }
        out.push(("sem_logits".into(), ParamGroup::SemLogits, shape2(&self.sem_logits)));
        out.push(("color_codes".into(), ParamGroup::ColorCodes, shape2(&self.color_codes)));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor<'_>> {
        let mut data: Vec<&[f64]> = self.elevation.tensors();
        match &self.color {
            ColorModel::PerCamera(decoders) => {
                for (_, mlp) in decoders {
                    data.extend(mlp.tensors());
                }
            }
            ColorModel::Shared { mlp, embeddings, .. } => {
                data.extend(mlp.tensors());
                data.push(embeddings.as_slice().expect("standard layout"));
            }
            ColorModel::Direct { rgb } => data.push(rgb.as_slice().expect("standard layout")),
        }
        data.push(self.sem_logits.as_slice().expect("standard layout"));
        data.push(self.color_codes.as_slice().expect("standard layout"));
        self.layout()
            .into_iter()
            .zip(data)
            .map(|((name, group, shape), data)| Tensor { name, group, shape, data })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let layout = self.layout();
        let mut data: Vec<&mut [f64]> = self.elevation.tensors_mut();
        match &mut self.color {
            ColorModel::PerCamera(decoders) => {
                for (_, mlp) in decoders {
                    data.extend(mlp.tensors_mut());
                }
            }
            ColorModel::Shared { mlp, embeddings, .. } => {
                data.extend(mlp.tensors_mut());
                data.push(embeddings.as_slice_mut().expect("standard layout"));
            }
            ColorModel::Direct { rgb } => data.push(rgb.as_slice_mut().expect("standard layout")),
        }
        data.push(self.sem_logits.as_slice_mut().expect("standard layout"));
        data.push(self.color_codes.as_slice_mut().expect("standard layout"));
        layout
            .into_iter()
            .zip(data)
            .map(|((name, group, shape), data)| TensorMut { name, group, shape, data })
            .collect()
    }

    pub fn write_checkpoint(&self, bin_path: &Path, header_path: &Path, meta: &[(String, String)]) -> Result<()> {
        let mut header = format!("{CHECKPOINT_MAGIC}\n");
        for (k, v) in meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::invalid(format!("bad checkpoint metadata `{k}`")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut blob = Vec::new();
        for t in self.tensors() {
            header.push_str(&format!("tensor {} {} {} {}\n", t.name, t.shape[0], t.shape[1], blob.len()));
            for v in t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(bin_path, &blob).map_err(|e| Error::io(bin_path, e))?;
        fs::write(header_path, header).map_err(|e| Error::io(header_path, e))
    }

    /// Loads tensors into a state shaped like `template`; any name or shape difference is an error.
    pub fn read_checkpoint(template: &ParamState, bin_path: &Path, header_path: &Path) -> Result<(Self, Vec<(String, String)>)> {
        let header = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
        let blob = fs::read(bin_path).map_err(|e| Error::io(bin_path, e))?;
        let mut lines = header.lines();
        if lines.next() != Some(CHECKPOINT_MAGIC) {
            return Err(Error::parse(header_path, format!("missing `{CHECKPOINT_MAGIC}` magic")));
        }
        let mut meta = Vec::new();
        let mut entries = Vec::new();
        for line in lines {
            let tok: Vec<&str> = line.split_whitespace().collect();
            match tok.as_slice() {
                ["meta", k, rest @ ..] => meta.push((k.to_string(), rest.join(" "))),
                ["tensor", name, r, c, off] => {
                    let p = |s: &str| s.parse::<usize>().map_err(|e| Error::parse(header_path, e.to_string()));
                    entries.push((name.to_string(), [p(r)?, p(c)?], p(off)?));
                }
                [] => {}
                _ => return Err(Error::parse(header_path, format!("unrecognized line `{line}`"))),
            }
        }
        let mut state = template.clone();
        let tensors = state.tensors_mut();
        if tensors.len() != entries.len() {
            return Err(Error::shape(format!(
                "checkpoint has {} tensors, model expects {}",
                entries.len(),
                tensors.len()
            )));
        }
        for (t, (name, shape, off)) in tensors.into_iter().zip(entries) {
            if t.name != name || t.shape != shape {
                return Err(Error::shape(format!(
                    "checkpoint tensor {name} {shape:?} does not match model tensor {} {:?}",
                    t.name, t.shape
                )));
            }
            let end = off + 8 * t.data.len();
            let bytes = blob
                .get(off..end)
                .ok_or_else(|| Error::parse(bin_path, format!("tensor {name} runs past end of file")))?;
            for (dst, chunk) in t.data.iter_mut().zip(bytes.chunks_exact(8)) {
                *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
        }
        Ok((state, meta))
    }
}

/// The `meta` entries of a checkpoint header.
pub fn read_checkpoint_meta(header_path: &Path) -> Result<Vec<(String, String)>> {
    let header = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let mut lines = header.lines();
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(Error::parse(header_path, format!("missing `{CHECKPOINT_MAGIC}` magic")));
    }
    Ok(lines
        .filter_map(|l| l.strip_prefix("meta "))
        .filter_map(|l| l.split_once(' '))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect())
}

/// Adam over every tensor of a [`ParamState`], each at its group's learning rate.
#[derive(Debug, Clone)]
pub struct Optimizer {
    states: Vec<AdamState>,
    pub rates: LearningRates,
}

impl Optimizer {
    pub fn new(params: &ParamState, rates: LearningRates) -> Self {
        let states = params.tensors().iter().map(|t| AdamState::new(t.data.len())).collect();
        Optimizer { states, rates }
    }

    /// Updates every tensor whose group is not in `frozen`.
    pub fn step(&mut self, params: &mut ParamState, grads: &ParamState, frozen: &[ParamGroup]) -> Result<()> {
        let grads = grads.tensors();
        let tensors = params.tensors_mut();
        if grads.len() != tensors.len() || tensors.len() != self.states.len() {
            return Err(Error::shape("gradient state does not match parameters"));
        }
        for ((t, g), s) in tensors.into_iter().zip(grads).zip(&mut self.states) {
            if frozen.contains(&t.group) {
                continue;
            }
            s.step(t.data, g.data, self.rates.get(t.group))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_tensor_has_one_group() {
        for variant in [ColorVariant::PerCameraMlp, ColorVariant::SharedMlpEmbedding, ColorVariant::DirectRgb] {
            let p = ParamState::init(10, &[1, 0], variant, 7);
            let t = p.tensors();
            let names: std::collections::HashSet<_> = t.iter().map(|t| t.name.clone()).collect();
            assert_eq!(names.len(), t.len());
            for t in &t {
                assert_eq!(t.shape[0] * t.shape[1], t.data.len(), "{}", t.name);
            }
        }
    }

    #[test]
    fn init_ranges_and_determinism() {
        let a = ParamState::init(50, &[0, 1], ColorVariant::PerCameraMlp, 3);
        let b = ParamState::init(50, &[0, 1], ColorVariant::PerCameraMlp, 3);
        assert_eq!(a, b);
        assert!(a.sem_logits.iter().all(|v| v.abs() < 0.01));
        assert!(a.color_codes.iter().all(|v| v.abs() < 0.1));
        assert_eq!(a.color_codes.ncols(), 32);
        assert_eq!(a.sem_logits.ncols(), 5);
        // The elevation head starts at zero so predictions start at the trajectory prior.
        assert!(a.elevation.layers.last().unwrap().weight.iter().all(|&w| w == 0.0));
    }

    #[test]
    fn optimizer_uses_group_rates() {
        let mut p = ParamState::init(4, &[0], ColorVariant::PerCameraMlp, 1);
        let before = p.clone();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.data.fill(1.0);
        }
        let mut opt = Optimizer::new(&p, LearningRates::default());
        opt.step(&mut p, &g, &[]).unwrap();
        for (a, b) in p.tensors().iter().zip(before.tensors()) {
            let lr = LearningRates::default().get(a.group);
            for (x, y) in a.data.iter().zip(b.data) {
                assert!(((y - x) - lr).abs() < 1e-9 * lr.max(1.0), "{}", a.name);
            }
        }
    }

    #[test]
    fn frozen_groups_do_not_move() {
        let mut p = ParamState::init(4, &[0], ColorVariant::PerCameraMlp, 1);
        let before = p.clone();
        let mut g = p.zeros_like();
        for t in g.tensors_mut() {
            t.data.fill(0.5);
        }
        let mut opt = Optimizer::new(&p, LearningRates::default());
        opt.step(&mut p, &g, &[ParamGroup::ElevationMlp]).unwrap();
        assert_eq!(p.elevation, before.elevation);
        assert_ne!(p.sem_logits, before.sem_logits);
    }

    #[test]
    fn checkpoint_roundtrip_and_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (bin, hdr) = (dir.path().join("p.bin"), dir.path().join("p.hdr"));
        let p = ParamState::init(12, &[0, 1], ColorVariant::SharedMlpEmbedding, 11);
        let meta = vec![("vertices".to_string(), "12".to_string())];
        p.write_checkpoint(&bin, &hdr, &meta).unwrap();
        let text = fs::read_to_string(&hdr).unwrap();
        assert!(text.starts_with("EMIE1\nmeta vertices 12\ntensor elevation.0.weight 128 22 0\n"));
        let (q, m) = ParamState::read_checkpoint(&p.zeros_like(), &bin, &hdr).unwrap();
        assert_eq!(q, p);
        assert_eq!(m, meta);
        let other = ParamState::init(13, &[0, 1], ColorVariant::SharedMlpEmbedding, 11);
        assert!(ParamState::read_checkpoint(&other, &bin, &hdr).is_err());
        let direct = ParamState::init(12, &[0, 1], ColorVariant::DirectRgb, 11);
        assert!(ParamState::read_checkpoint(&direct, &bin, &hdr).is_err());
    }
}
