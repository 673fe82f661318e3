use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::nn::{
    decode_colors, decode_colors_with_embedding, params::read_checkpoint_meta, predict_elevations, ColorModel, ColorVariant, ParamState,
    PositionalEncoding,
};
use crate::render::{splat, RenderedView};
use crate::scene::{build_mesh_from_trajectory, Camera, Frame, RoadMesh, Trajectory};

/// The road mesh together with its learned state.
#[derive(Debug, Clone)]
pub struct Model {
    pub mesh: RoadMesh,
    pub pe: PositionalEncoding,
    pub params: ParamState,
    /// When false, elevations stay at the trajectory prior `z0`.
    pub use_elevation_mlp: bool,
    pub half_width: f64,
}

impl Model {
    pub fn new(
        traj: &Trajectory,
        cameras: &[u32],
        edge_length: f64,
        half_width: f64,
        variant: ColorVariant,
        use_elevation_mlp: bool,
        seed: u64,
    ) -> Result<Self> {
        let mesh = build_mesh_from_trajectory(traj, edge_length, half_width)?;
        let pe = PositionalEncoding::new(mesh.bbox)?;
        let params = ParamState::init(mesh.len(), cameras, variant, seed);
        Ok(Model { mesh, pe, params, use_elevation_mlp, half_width })
    }

    pub fn variant(&self) -> ColorVariant {
        self.params.color.variant()
    }

    pub fn camera_ids(&self) -> Vec<u32> {
        match &self.params.color {
            ColorModel::PerCamera(d) => d.iter().map(|(id, _)| *id).collect(),
            ColorModel::Shared { cameras, .. } => cameras.clone(),
            ColorModel::Direct { .. } => vec![],
        }
    }

    /// Final per-vertex elevations.
    pub fn elevations(&self) -> Result<Vec<f64>> {
        if self.use_elevation_mlp {
            predict_elevations(&self.mesh, &self.pe, &self.params.elevation)
        } else {
            Ok(self.mesh.vertices.iter().map(|v| v.z0).collect())
        }
    }

    /// Per-vertex colors as seen by `camera_id`, `N x 3`.
    pub fn vertex_colors(&self, camera_id: u32) -> Result<Array2<f64>> {
        let codes = self.params.color_codes.view();
        match &self.params.color {
            ColorModel::PerCamera(decoders) => decode_colors(codes, camera_id, decoders),
            ColorModel::Shared { mlp, cameras, embeddings } => {
                let row = cameras
                    .iter()
                    .position(|&c| c == camera_id)
                    .ok_or_else(|| Error::invalid(format!("no embedding for camera {camera_id}")))?;
                decode_colors_with_embedding(codes, embeddings.row(row), mlp)
            }
            ColorModel::Direct { rgb } => Ok(rgb.clone()),
        }
    }

    /// Argmax class per vertex.
    pub fn vertex_labels(&self) -> Vec<u8> {
        self.params
            .sem_logits
            .rows()
            .into_iter()
            .map(|r| {
                let mut best = 0;
                for (i, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = i;
                    }
                }
                best as u8
            })
            .collect()
    }

    /// Renders the whole mesh into a frame's camera.
    pub fn render(&self, z: &[f64], colors: &Array2<f64>, camera: &Camera, frame: &Frame) -> Result<RenderedView> {
        splat(&self.mesh, z, 0..self.mesh.len() as u32, camera, &frame.camera_from_world())?
            .shade(colors.view(), self.params.sem_logits.view())
    }

    fn meta(&self) -> Vec<(String, String)> {
        let ids: Vec<String> = self.camera_ids().iter().map(u32::to_string).collect();
        vec![
            ("vertices".into(), self.mesh.len().to_string()),
            ("edge_length".into(), self.mesh.edge_length.to_string()),
            ("half_width".into(), self.half_width.to_string()),
            ("variant".into(), self.variant().to_string()),
            ("elevation_mlp".into(), self.use_elevation_mlp.to_string()),
            ("cameras".into(), if ids.is_empty() { "-".into() } else { ids.join(",") }),
        ]
    }

    pub fn save(&self, bin: &Path, header: &Path) -> Result<()> {
        self.params.write_checkpoint(bin, header, &self.meta())
    }

    /// Rebuilds the mesh described by a checkpoint over `traj` and loads its parameters.
    pub fn load(traj: &Trajectory, bin: &Path, header: &Path) -> Result<Self> {
        let meta = read_checkpoint_meta(header)?;
        let get = |key: &str| {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::parse(header, format!("missing meta `{key}`")))
        };
        let num = |key: &str| get(key)?.parse::<f64>().map_err(|e| Error::parse(header, format!("{key}: {e}")));
        let variant = match get("variant")? {
            "per_camera_mlp" => ColorVariant::PerCameraMlp,
            "shared_mlp_embedding" => ColorVariant::SharedMlpEmbedding,
            "direct_rgb" => ColorVariant::DirectRgb,
            other => return Err(Error::parse(header, format!("unknown variant `{other}`"))),
        };
        let use_mlp = get("elevation_mlp")?
            .parse::<bool>()
            .map_err(|e| Error::parse(header, format!("elevation_mlp: {e}")))?;
        let cameras: Vec<u32> = match get("cameras")? {
            "-" => vec![],
            list => list
                .split(',')
                .map(|s| s.parse().map_err(|e| Error::parse(header, format!("cameras: {e}"))))
                .collect::<Result<_>>()?,
        };
        let mut model = Model::new(traj, &cameras, num("edge_length")?, num("half_width")?, variant, use_mlp, 0)?;
        let vertices = num("vertices")? as usize;
        if vertices != model.mesh.len() {
            return Err(Error::shape(format!(
                "checkpoint has {vertices} vertices but the scene mesh has {}",
                model.mesh.len()
            )));
        }
        model.params = ParamState::read_checkpoint(&model.params, bin, header)?.0;
        Ok(model)
    }
}
