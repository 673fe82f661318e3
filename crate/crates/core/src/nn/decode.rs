//! Elevation prediction and per-camera color decoding.

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;

use super::mlp::{Mlp, MlpCache, OutputActivation};
use super::pe::PositionalEncoding;
use crate::error::{Error, Result};
use crate::scene::{RoadMesh, CODE_DIM};

pub const ELEVATION_WIDTH: usize = 128;
/// Weight layers in the elevation network: 22 -> 128, six 128 -> 128, 128 -> 1.
pub const ELEVATION_LAYERS: usize = 8;
pub const COLOR_HIDDEN: usize = 16;
pub const EMBEDDING_DIM: usize = 8;

/// Rows per forward/backward chunk. Fixed so results do not depend on the thread count.
const CHUNK: usize = 2048;

pub fn elevation_layer_sizes() -> Vec<usize> {
    let mut sizes = vec![PositionalEncoding::OUTPUT_DIM];
    sizes.extend(std::iter::repeat_n(ELEVATION_WIDTH, ELEVATION_LAYERS - 1));
    sizes.push(1);
    sizes
}

pub fn elevation_mlp<R: Rng>(rng: &mut R) -> Mlp {
    Mlp::init(&elevation_layer_sizes(), OutputActivation::Identity, rng)
}

pub fn color_decoder<R: Rng>(rng: &mut R) -> Mlp {
    Mlp::init(&[CODE_DIM, COLOR_HIDDEN, 3], OutputActivation::Sigmoid, rng)
}

pub fn shared_color_decoder<R: Rng>(rng: &mut R) -> Mlp {
    Mlp::init(&[CODE_DIM + EMBEDDING_DIM, COLOR_HIDDEN, 3], OutputActivation::Sigmoid, rng)
}

/// Positional features for the given vertices, one row each.
pub fn encode_vertices(mesh: &RoadMesh, pe: &PositionalEncoding, ids: &[u32]) -> Array2<f64> {
    let mut out = Array2::zeros((ids.len(), PositionalEncoding::OUTPUT_DIM));
    for (row, &id) in out.rows_mut().into_iter().zip(ids) {
        let v = &mesh.vertices[id as usize];
        for (dst, src) in row.into_iter().zip(pe.encode(v.x, v.y)) {
            *dst = src;
        }
    }
    out
}

fn check_elevation_mlp(mlp: &Mlp) -> Result<()> {
    if mlp.input_dim() != PositionalEncoding::OUTPUT_DIM || mlp.output_dim() != 1 {
        return Err(Error::shape(format!(
            "elevation network must map {} -> 1, got {} -> {}",
            PositionalEncoding::OUTPUT_DIM,
            mlp.input_dim(),
            mlp.output_dim()
        )));
    }
    Ok(())
}

/// `z0 + residual(PE(x, y))` for every mesh vertex.
pub fn predict_elevations(mesh: &RoadMesh, pe: &PositionalEncoding, mlp: &Mlp) -> Result<Vec<f64>> {
    let ids: Vec<u32> = (0..mesh.len() as u32).collect();
    let features = encode_vertices(mesh, pe, &ids);
    let (z, _) = ElevationPass::run(mlp, features.view(), &mesh.vertices.iter().map(|v| v.z0).collect::<Vec<_>>())?;
    Ok(z)
}

/// Chunked elevation forward pass that keeps what the backward pass needs.
pub struct ElevationPass {
    caches: Vec<MlpCache>,
}

impl ElevationPass {
    /// Returns `z0 + residual` per feature row.
    pub fn run(mlp: &Mlp, features: ArrayView2<f64>, z0: &[f64]) -> Result<(Vec<f64>, Self)> {
        check_elevation_mlp(mlp)?;
        if features.nrows() != z0.len() {
            return Err(Error::shape("feature rows and z0 differ in length"));
        }
        let caches: Vec<MlpCache> = features
            .axis_chunks_iter(Axis(0), CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|chunk| mlp.forward_cached(chunk))
            .collect::<Result<_>>()?;
        let z = caches
            .iter()
            .flat_map(|c| c.output.column(0).to_vec())
            .zip(z0)
            .map(|(r, &z0)| z0 + r)
            .collect();
        Ok((z, ElevationPass { caches }))
    }

    /// Accumulates the network gradient for upstream `dL/dz_f` per row.
    pub fn backward(&self, mlp: &Mlp, dz: &[f64], grads: &mut Mlp) -> Result<()> {
        let rows: usize = self.caches.iter().map(|c| c.output.nrows()).sum();
        if dz.len() != rows {
            return Err(Error::shape("elevation gradient length mismatch"));
        }
        let mut offsets = Vec::with_capacity(self.caches.len());
        let mut off = 0;
        for c in &self.caches {
            offsets.push(off);
            off += c.output.nrows();
        }
        let partial: Vec<Mlp> = self
            .caches
            .par_iter()
            .zip(offsets)
            .map(|(cache, off)| {
                let n = cache.output.nrows();
                let up = ArrayView2::from_shape((n, 1), &dz[off..off + n]).expect("column view");
                let mut g = mlp.zeros_like();
                mlp.backward(cache, up, &mut g).map(|_| g)
            })
            .collect::<Result<_>>()?;
        for p in &partial {
            for (dst, src) in grads.tensors_mut().into_iter().zip(p.tensors()) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(())
    }
}

/// Decodes codes with the decoder registered for `camera_id`.
pub fn decode_colors(codes: ArrayView2<f64>, camera_id: u32, decoders: &[(u32, Mlp)]) -> Result<Array2<f64>> {
    let (_, mlp) = decoders
        .iter()
        .find(|(id, _)| *id == camera_id)
        .ok_or_else(|| Error::invalid(format!("no color decoder for camera {camera_id}")))?;
    mlp.forward(codes)
}

/// Appends the camera embedding to every code row.
pub fn with_embedding(codes: ArrayView2<f64>, embedding: ArrayView1<f64>) -> Array2<f64> {
    let (n, d) = codes.dim();
    let mut x = Array2::zeros((n, d + embedding.len()));
    x.slice_mut(s![.., ..d]).assign(&codes);
    x.slice_mut(s![.., d..]).assign(&embedding.broadcast((n, embedding.len())).expect("broadcast"));
    x
}

/// Decodes codes with one shared decoder fed `code ⊕ embedding`.
pub fn decode_colors_with_embedding(
    codes: ArrayView2<f64>,
    embedding: ArrayView1<f64>,
    shared: &Mlp,
) -> Result<Array2<f64>> {
    shared.forward(with_embedding(codes, embedding).view())
}

#[cfg(test)]
mod tests {
    use ndarray::Array1;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::scene::{build_mesh_from_trajectory, Pose, Trajectory};

    fn small_mesh() -> RoadMesh {
        let poses = (0..11)
            .map(|k| Pose::from_raw(k as f64, [k as f64, 0.0, 0.02 * k as f64], [1.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        build_mesh_from_trajectory(&Trajectory::new(poses).unwrap(), 0.5, 2.0).unwrap()
    }

    #[test]
    fn architecture_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = elevation_mlp(&mut rng);
        assert_eq!(e.layers.len(), 8);
        assert_eq!(e.layer_sizes(), vec![22, 128, 128, 128, 128, 128, 128, 128, 1]);
        assert_eq!(color_decoder(&mut rng).layer_sizes(), vec![32, 16, 3]);
        assert_eq!(shared_color_decoder(&mut rng).layer_sizes(), vec![40, 16, 3]);
    }

    #[test]
    fn zero_residual_keeps_initial_elevation() {
        let mesh = small_mesh();
        let pe = PositionalEncoding::new(mesh.bbox).unwrap();
        let mlp = Mlp::zeros(&elevation_layer_sizes(), OutputActivation::Identity);
        let z = predict_elevations(&mesh, &pe, &mlp).unwrap();
        assert!(z.iter().zip(&mesh.vertices).all(|(z, v)| *z == v.z0));
    }

    #[test]
    fn residual_bounded_by_network_output() {
        let mesh = small_mesh();
        let pe = PositionalEncoding::new(mesh.bbox).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut mlp = Mlp::init(&elevation_layer_sizes(), OutputActivation::Sigmoid, &mut rng);
        mlp.output = OutputActivation::Identity;
        let z = predict_elevations(&mesh, &pe, &mlp).unwrap();
        let ids: Vec<u32> = (0..mesh.len() as u32).collect();
        let raw = mlp.forward(encode_vertices(&mesh, &pe, &ids).view()).unwrap();
        let bound = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (z, v) in z.iter().zip(&mesh.vertices) {
            assert!((z - v.z0).abs() <= bound + 1e-12);
        }
    }

    #[test]
    fn wrong_elevation_shape() {
        let mesh = small_mesh();
        let pe = PositionalEncoding::new(mesh.bbox).unwrap();
        let mlp = Mlp::zeros(&[22, 4, 2], OutputActivation::Identity);
        assert!(predict_elevations(&mesh, &pe, &mlp).is_err());
    }

    #[test]
    fn zero_decoder_is_mid_gray_and_unknown_camera_errors() {
        let decoders = vec![(0u32, Mlp::zeros(&[32, 16, 3], OutputActivation::Sigmoid))];
        let codes = Array2::from_elem((4, 32), 0.3);
        let rgb = decode_colors(codes.view(), 0, &decoders).unwrap();
        assert!(rgb.iter().all(|&c| c == 0.5));
        assert!(decode_colors(codes.view(), 7, &decoders).is_err());
    }

    #[test]
    fn identical_embeddings_decode_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let shared = shared_color_decoder(&mut rng);
        let codes = Array2::from_shape_fn((6, 32), |(i, j)| ((i + 2 * j) % 7) as f64 * 0.05 - 0.1);
        let e = Array1::from_elem(EMBEDDING_DIM, 0.07);
        let a = decode_colors_with_embedding(codes.view(), e.view(), &shared).unwrap();
        let b = decode_colors_with_embedding(codes.view(), e.view(), &shared).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|&c| c > 0.0 && c < 1.0));
        let e2 = Array1::from_elem(EMBEDDING_DIM, -0.5);
        let c = decode_colors_with_embedding(codes.view(), e2.view(), &shared).unwrap();
        assert_ne!(a, c);
    }
}
