//! Windowed, batched optimization of the mesh state against camera frames and Lidar.

mod model;

pub use model::Model;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    rgb_loss, sem_loss, smooth_loss_window, total_loss, ElevationTargets, LossReport, LossTerms, LossWeights,
    VertexGrad, LOSS_CSV_HEADER,
};
use crate::nn::{encode_vertices, with_embedding, ColorModel, ColorVariant, ElevationPass, LearningRates, Optimizer, ParamGroup, ParamState};
use crate::render::{build_road_mask, splat};
use crate::scene::{Dataset, Frame, RoadMesh, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoElevationMlp,
    DirectRgb,
    SharedMlpEmbedding,
    NoSemantics,
    NoLidar,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoElevationMlp,
        Ablation::DirectRgb,
        Ablation::SharedMlpEmbedding,
        Ablation::NoSemantics,
        Ablation::NoLidar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoElevationMlp => "no_elevation_mlp",
            Ablation::DirectRgb => "direct_rgb",
            Ablation::SharedMlpEmbedding => "shared_mlp_embedding",
            Ablation::NoSemantics => "no_semantics",
            Ablation::NoLidar => "no_lidar",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown ablation `{s}`")))
    }
}

/// How the smoothness term is scaled before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothNormalization {
    /// Divide the double sum by the number of window vertices.
    VertexMean,
    /// Use the double sum as is.
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Along-track half-length of the observation window, meters.
    pub window_distance: f64,
    pub edge_length: f64,
    pub half_width: f64,
    /// Lidar neighborhood for elevation targets; defaults to `edge_length`.
    pub neighborhood_radius: Option<f64>,
    pub smoothness: SmoothNormalization,
    pub weights: LossWeights,
    pub learning_rates: LearningRates,
    pub ablations: Vec<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 8,
            epochs: 5,
            window_distance: 80.0,
            edge_length: 0.1,
            half_width: 15.0,
            neighborhood_radius: None,
            smoothness: SmoothNormalization::VertexMean,
            weights: LossWeights::default(),
            learning_rates: LearningRates::default(),
            ablations: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: TrainConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn has(&self, a: Ablation) -> bool {
        self.ablations.contains(&a)
    }

    pub fn with_ablation(mut self, a: Ablation) -> Self {
        if !self.has(a) {
            self.ablations.push(a);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        for (name, v) in [
            ("window_distance", self.window_distance),
            ("edge_length", self.edge_length),
            ("half_width", self.half_width),
            ("neighborhood_radius", self.radius()),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.has(Ablation::DirectRgb) && self.has(Ablation::SharedMlpEmbedding) {
            return Err(Error::invalid("direct_rgb and shared_mlp_embedding are mutually exclusive"));
        }
        self.weights.validate()
    }

    pub fn radius(&self) -> f64 {
        self.neighborhood_radius.unwrap_or(self.edge_length)
    }

    pub fn variant(&self) -> ColorVariant {
        if self.has(Ablation::DirectRgb) {
            ColorVariant::DirectRgb
        } else if self.has(Ablation::SharedMlpEmbedding) {
            ColorVariant::SharedMlpEmbedding
        } else {
            ColorVariant::PerCameraMlp
        }
    }

    /// Loss weights after ablations zero out terms.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if self.has(Ablation::NoSemantics) {
            w.sem = 0.0;
        }
        if self.has(Ablation::NoLidar) {
            w.z = 0.0;
        }
        w
    }
}

/// Frame indices `cursor..cursor + b`, clipped to the frame count.
pub fn sample_batch(num_frames: usize, batch_size: usize, cursor: usize) -> Vec<usize> {
    (cursor.min(num_frames)..(cursor + batch_size).min(num_frames)).collect()
}

/// Batch start cursors for one epoch, in a seeded random order.
pub fn epoch_schedule(num_frames: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut starts: Vec<usize> = (0..num_frames).step_by(batch_size.max(1)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    starts.shuffle(&mut rng);
    starts
}

/// Median trajectory index of the batch (lower median).
pub fn batch_center(frames: &[&Frame]) -> usize {
    let mut idx: Vec<usize> = frames.iter().map(|f| f.traj_index).collect();
    idx.sort_unstable();
    idx[(idx.len() - 1) / 2]
}

/// Vertices whose arc-length coordinate lies within `distance` of the arc length at
/// `center_index`, in ascending order.
pub fn observation_window(mesh: &RoadMesh, traj: &Trajectory, center_index: usize, distance: f64) -> Vec<u32> {
    let c = traj.arc_length_at(center_index.min(traj.len() - 1));
    mesh.vertices
        .iter()
        .enumerate()
        .filter(|(_, v)| (v.arc - c).abs() <= distance)
        .map(|(i, _)| i as u32)
        .collect()
}

struct FrameResult {
    rgb: f64,
    sem: f64,
    pixels: usize,
    camera: u32,
    drgb: VertexGrad,
    dlogits: VertexGrad,
}

/// Trains the model on a dataset. One optimizer step per batch.
pub struct Trainer<'a> {
    pub data: &'a Dataset,
    pub config: TrainConfig,
    pub model: Model,
    targets: ElevationTargets,
    optimizer: Optimizer,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(data: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        if data.frames.is_empty() {
            return Err(Error::invalid("dataset has no frames"));
        }
        let model = Model::new(
            &data.trajectory,
            &data.camera_ids(),
            config.edge_length,
            config.half_width,
            config.variant(),
            !config.has(Ablation::NoElevationMlp),
            config.seed,
        )?;
        let targets = ElevationTargets::new(&model.mesh, &data.lidar, config.radius())?;
        let optimizer = Optimizer::new(&model.params, config.learning_rates);
        info!(
            "mesh: {} vertices, {} faces; {} of them Lidar-supervised",
            model.mesh.len(),
            model.mesh.faces.len(),
            targets.supervised()
        );
        Ok(Trainer { data, config, model, targets, optimizer, iteration: 0 })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    fn frozen(&self) -> Vec<ParamGroup> {
        if self.model.use_elevation_mlp {
            vec![]
        } else {
            vec![ParamGroup::ElevationMlp]
        }
    }

    /// Runs every epoch, calling `on_iter` after each step.
    pub fn run(&mut self, mut on_iter: impl FnMut(usize, &LossReport)) -> Result<Vec<LossReport>> {
        let n = self.data.frames.len();
        let mut history = Vec::new();
        for epoch in 0..self.config.epochs {
            for cursor in epoch_schedule(n, self.config.batch_size, self.config.seed, epoch) {
                let batch = sample_batch(n, self.config.batch_size, cursor);
                let report = self.step(&batch)?;
                on_iter(self.iteration - 1, &report);
                history.push(report);
            }
            if let Some(last) = history.last() {
                info!("epoch {} done, last L_total {:.6}", epoch + 1, last.total);
            }
        }
        Ok(history)
    }

    /// One optimizer step on the frames at `batch` (indices into the dataset's frames).
    pub fn step(&mut self, batch: &[usize]) -> Result<LossReport> {
        let iter = self.iteration;
        let (report, grads) = self.loss_and_gradients(batch)?;
        if let Some(term) = report.non_finite_term() {
            return Err(Error::NonFinite { term, iter });
        }
        let frozen = self.frozen();
        self.optimizer.step(&mut self.model.params, &grads, &frozen)?;
        self.iteration += 1;
        debug!("iter {iter}: {}", report.csv_row(iter));
        Ok(report)
    }

    /// The batch loss and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, batch: &[usize]) -> Result<(LossReport, ParamState)> {
        let data = self.data;
        let model = &self.model;
        let mesh = &model.mesh;
        let weights = self.config.effective_weights();
        let frames: Vec<&Frame> = batch
            .iter()
            .map(|&i| data.frames.get(i).ok_or_else(|| Error::invalid(format!("frame {i} out of range"))))
            .collect::<Result<_>>()?;
        if frames.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let window = observation_window(mesh, &data.trajectory, batch_center(&frames), self.config.window_distance);
        let z0: Vec<f64> = window.iter().map(|&i| mesh.vertices[i as usize].z0).collect();

        // Elevations for the window.
        let (z_w, pass) = if model.use_elevation_mlp {
            let features = encode_vertices(mesh, &model.pe, &window);
            let (z, pass) = ElevationPass::run(&model.params.elevation, features.view(), &z0)?;
            (z, Some(pass))
        } else {
            (z0, None)
        };
        let mut z_full: Vec<f64> = mesh.vertices.iter().map(|v| v.z0).collect();
        for (&i, &z) in window.iter().zip(&z_w) {
            z_full[i as usize] = z;
        }

        // Window colors per camera, kept with what the backward pass needs.
        let codes_w = model.params.color_codes.select(Axis(0), &window.iter().map(|&i| i as usize).collect::<Vec<_>>());
        let mut cams: Vec<u32> = frames.iter().map(|f| f.camera_id).collect();
        cams.sort_unstable();
        cams.dedup();
        let colors = cams
            .iter()
            .map(|&cam| decode_window(&model.params.color, &codes_w, &window, cam))
            .collect::<Result<Vec<_>>>()?;
        let full_colors: Vec<Array2<f64>> = colors
            .iter()
            .map(|c| {
                let mut full = Array2::zeros((mesh.len(), 3));
                for (row, &i) in window.iter().enumerate() {
                    full.row_mut(i as usize).assign(&c.rgb.row(row));
                }
                full
            })
            .collect();

        // Render and compare every frame.
        let results: Vec<FrameResult> = frames
            .par_iter()
            .map(|f| {
                let camera = data.camera(f.camera_id)?;
                let ci = cams.binary_search(&f.camera_id).expect("camera listed");
                let view = splat(mesh, &z_full, window.iter().copied(), camera, &f.camera_from_world())?
                    .shade(full_colors[ci].view(), model.params.sem_logits.view())?;
                let mask = build_road_mask(&f.sem_labels, view.width, view.height)?;
                let (lr, grgb) = rgb_loss(&view, &f.rgb, &mask)?;
                let (ls, dlogits) = sem_loss(&view, &f.sem_labels, &mask, model.params.sem_logits.view())?;
                let drgb = VertexGrad::scatter(&view, &grgb, 3)?;
                Ok(FrameResult { rgb: lr.value, sem: ls.value, pixels: lr.count, camera: f.camera_id, drgb, dlogits })
            })
            .collect::<Result<_>>()?;

        let mut grads = model.params.zeros_like();
        let nb = frames.len() as f64;
        let mut terms = LossTerms::default();
        let mut pixels = 0;
        let mut drgb_w: Vec<Array2<f64>> = cams.iter().map(|_| Array2::zeros((window.len(), 3))).collect();
        for r in &results {
            terms.rgb += r.rgb / nb;
            terms.sem += r.sem / nb;
            pixels += r.pixels;
            let ci = cams.binary_search(&r.camera).expect("camera listed");
            for (k, &v) in r.drgb.ids.iter().enumerate() {
                let row = window.binary_search(&v).expect("splatted vertices are in the window");
                let mut dst = drgb_w[ci].row_mut(row);
                dst.scaled_add(weights.rgb / nb, &r.drgb.grad.row(k));
            }
            for (k, &v) in r.dlogits.ids.iter().enumerate() {
                grads.sem_logits.row_mut(v as usize).scaled_add(weights.sem / nb, &r.dlogits.grad.row(k));
            }
        }
        for (ci, c) in colors.iter().enumerate() {
            backward_window(&model.params.color, c, &drgb_w[ci], &window, &mut grads)?;
        }

        // Lidar and smoothness terms on the window elevations.
        let (lz, gz) = self.targets.loss(&window, &z_w)?;
        let (smooth_sum, gs) = smooth_loss_window(mesh, &window, &z_w)?;
        let smooth_scale = match self.config.smoothness {
            SmoothNormalization::VertexMean => 1.0 / window.len().max(1) as f64,
            SmoothNormalization::Sum => 1.0,
        };
        terms.z = lz.value;
        terms.smooth = smooth_sum * smooth_scale;
        if let Some(pass) = pass {
            let dz: Vec<f64> = gz
                .iter()
                .zip(&gs)
                .map(|(a, b)| weights.z * a + weights.smooth * smooth_scale * b)
                .collect();
            pass.backward(&model.params.elevation, &dz, &mut grads.elevation)?;
        }
        Ok((total_loss(terms, &weights, pixels, lz.count), grads))
    }
}

/// Decoded window colors for one camera plus the decoder cache.
struct WindowColors {
    camera: u32,
    rgb: Array2<f64>,
    cache: Option<crate::nn::MlpCache>,
}

fn decode_window(color: &ColorModel, codes_w: &Array2<f64>, window: &[u32], camera: u32) -> Result<WindowColors> {
    match color {
        ColorModel::PerCamera(decoders) => {
            let (_, mlp) = decoders
                .iter()
                .find(|(id, _)| *id == camera)
                .ok_or_else(|| Error::invalid(format!("no color decoder for camera {camera}")))?;
            let cache = mlp.forward_cached(codes_w.view())?;
            Ok(WindowColors { camera, rgb: cache.output.clone(), cache: Some(cache) })
        }
        ColorModel::Shared { mlp, cameras, embeddings } => {
            let row = cameras
                .iter()
                .position(|&c| c == camera)
                .ok_or_else(|| Error::invalid(format!("no embedding for camera {camera}")))?;
            let cache = mlp.forward_cached(with_embedding(codes_w.view(), embeddings.row(row)).view())?;
            Ok(WindowColors { camera, rgb: cache.output.clone(), cache: Some(cache) })
        }
        ColorModel::Direct { rgb } => {
            let ids: Vec<usize> = window.iter().map(|&i| i as usize).collect();
            Ok(WindowColors { camera, rgb: rgb.select(Axis(0), &ids), cache: None })
        }
    }
}

fn backward_window(
    color: &ColorModel,
    c: &WindowColors,
    drgb: &Array2<f64>,
    window: &[u32],
    grads: &mut ParamState,
) -> Result<()> {
    let scatter_codes = |dcodes: ndarray::ArrayView2<f64>, grads: &mut ParamState| {
        for (row, &i) in window.iter().enumerate() {
            grads.color_codes.row_mut(i as usize).scaled_add(1.0, &dcodes.row(row));
        }
    };
    match (color, &mut grads.color) {
        (ColorModel::PerCamera(decoders), ColorModel::PerCamera(gdec)) => {
            let k = decoders.iter().position(|(id, _)| *id == c.camera).expect("decoder exists");
            let dx = decoders[k].1.backward(c.cache.as_ref().expect("cached"), drgb.view(), &mut gdec[k].1)?;
            scatter_codes(dx.view(), grads);
        }
        (ColorModel::Shared { mlp, cameras, .. }, ColorModel::Shared { mlp: gmlp, embeddings: gemb, .. }) => {
            let row = cameras.iter().position(|&id| id == c.camera).expect("embedding exists");
            let dx = mlp.backward(c.cache.as_ref().expect("cached"), drgb.view(), gmlp)?;
            let d = crate::scene::CODE_DIM;
            let demb = dx.slice(s![.., d..]).sum_axis(Axis(0));
            gemb.row_mut(row).scaled_add(1.0, &demb);
            scatter_codes(dx.slice(s![.., ..d]), grads);
        }
        (ColorModel::Direct { .. }, ColorModel::Direct { rgb: grgb }) => {
            for (row, &i) in window.iter().enumerate() {
                grgb.row_mut(i as usize).scaled_add(1.0, &drgb.row(row));
            }
        }
        _ => return Err(Error::shape("gradient state has a different color model")),
    }
    Ok(())
}

/// Writes the loss history as CSV.
pub fn write_loss_csv(path: &Path, history: &[LossReport]) -> Result<()> {
    let mut out = String::from(LOSS_CSV_HEADER);
    out.push('\n');
    for (i, r) in history.iter().enumerate() {
        out.push_str(&r.csv_row(i));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Trains from scratch and returns the model with its loss history.
pub fn train(data: &Dataset, config: TrainConfig) -> Result<(Model, Vec<LossReport>)> {
    let mut t = Trainer::new(data, config)?;
    let history = t.run(|_, _| {})?;
    Ok((t.model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, Profile, SceneSpec};

    fn tiny_scene(profile: Profile) -> Dataset {
        let mut s = SceneSpec { route_length: 12.0, frame_spacing: 1.5, profile, ..SceneSpec::default() };
        for c in &mut s.cameras {
            (c.width, c.height, c.cx, c.cy, c.fx, c.fy) = (64, 24, 32.0, 12.0, 40.0, 40.0);
        }
        s.lidar.density = 4.0;
        s.road.half_width = 2.0;
        generate_scene(&s).unwrap().data
    }

    fn tiny_config(epochs: usize) -> TrainConfig {
        TrainConfig { epochs, edge_length: 0.5, half_width: 2.0, window_distance: 6.0, ..TrainConfig::default() }
    }

    #[test]
    fn schedule_covers_every_frame_once() {
        let starts = epoch_schedule(16, 8, 3, 0);
        assert_eq!(starts.len(), 2);
        let mut all: Vec<usize> = starts.iter().flat_map(|&c| sample_batch(16, 8, c)).collect();
        all.sort_unstable();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
        assert_eq!(sample_batch(10, 8, 8), vec![8, 9]);
    }

    #[test]
    fn schedule_is_seeded() {
        assert_eq!(epoch_schedule(200, 8, 7, 2), epoch_schedule(200, 8, 7, 2));
        assert_ne!(epoch_schedule(200, 8, 7, 2), epoch_schedule(200, 8, 7, 3));
        assert_ne!(epoch_schedule(200, 8, 7, 2), epoch_schedule(200, 8, 8, 2));
    }

    #[test]
    fn windows_respect_distance_and_cover_mesh() {
        let data = tiny_scene(Profile::Flat);
        let model = Model::new(&data.trajectory, &[0, 1], 0.5, 2.0, ColorVariant::PerCameraMlp, true, 0).unwrap();
        let mut seen = vec![false; model.mesh.len()];
        for c in 0..data.trajectory.len() {
            let w = observation_window(&model.mesh, &data.trajectory, c, 3.0);
            let arc = data.trajectory.arc_length_at(c);
            assert!(w.windows(2).all(|p| p[0] < p[1]));
            for &i in &w {
                assert!((model.mesh.vertices[i as usize].arc - arc).abs() <= 3.0);
                seen[i as usize] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let data = tiny_scene(Profile::Flat);
        let (model, history) = train(&data, tiny_config(0)).unwrap();
        assert!(history.is_empty());
        let init = ParamState::init(model.mesh.len(), &[0, 1], ColorVariant::PerCameraMlp, 0);
        assert_eq!(model.params, init);
    }

    #[test]
    fn loss_goes_down_on_flat_scene() {
        let data = tiny_scene(Profile::Flat);
        let (_, history) = train(&data, tiny_config(6)).unwrap();
        let per_epoch = history.len() / 6;
        let mean = |h: &[LossReport]| h.iter().map(|r| r.total).sum::<f64>() / h.len() as f64;
        let first = mean(&history[..per_epoch]);
        let last = mean(&history[history.len() - per_epoch..]);
        assert!(last < 0.7 * first, "{first} -> {last}");
    }

    #[test]
    fn frozen_elevation_without_mlp() {
        let data = tiny_scene(Profile::Ramp { slope: 0.05 });
        let cfg = tiny_config(1).with_ablation(Ablation::NoElevationMlp);
        let (model, _) = train(&data, cfg).unwrap();
        let init = ParamState::init(model.mesh.len(), &[0, 1], ColorVariant::PerCameraMlp, 0);
        assert_eq!(model.params.elevation, init.elevation);
        assert_ne!(model.params.color_codes, init.color_codes);
        let z0: Vec<f64> = model.mesh.vertices.iter().map(|v| v.z0).collect();
        assert_eq!(model.elevations().unwrap(), z0);
    }

    #[test]
    fn config_roundtrip_and_validation() {
        let cfg = TrainConfig::default().with_ablation(Ablation::NoLidar);
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.effective_weights().z, 0.0);
        let bad = TrainConfig::default().with_ablation(Ablation::DirectRgb).with_ablation(Ablation::SharedMlpEmbedding);
        assert!(bad.validate().is_err());
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
        assert!(TrainConfig::from_toml("unknown = 1").is_err());
        assert!("no_such".parse::<Ablation>().is_err());
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
        }
    }
}
