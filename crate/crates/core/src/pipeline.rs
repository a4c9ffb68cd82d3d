//! Strokes in, articulation out: the single prediction path shared by the
//! CLI and the HTTP service.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{finalize, InferConfig, PredictionBackend, PredictionInput};
use crate::model::{ArticulationSpec, Mesh};
use crate::render::{focal_crop, render_gbuffer, Camera, GBuffer, PixelRect};
use crate::segment::{select_part, ClusterTree, FeatureField, SegmentConfig};
use crate::sketch::{classify_strokes, rasterize_strokes, Stroke, StrokeSet};

pub const SCHEMA_VERSION: u32 = 1;

/// Focal rectangles grow by this factor before cropping.
pub const DEFAULT_FOCAL_EXPAND: f64 = 1.2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub infer: InferConfig,
    pub segment: SegmentConfig,
    pub feature_weights: [f64; 3],
    pub focal_expand: f64,
    pub mask_threshold: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            infer: InferConfig::default(),
            segment: SegmentConfig::default(),
            feature_weights: [1.0, 0.5, 1.0],
            focal_expand: DEFAULT_FOCAL_EXPAND,
            mask_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iou: f64,
    pub intent: String,
    pub hinge_snapped: Option<bool>,
    pub continuity_angle: Option<f64>,
    /// Rect actually rendered, in parent-view pixels, after expansion.
    pub focal_rect: PixelRect,
    pub backend: String,
}

/// Wire result of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub schema_version: u32,
    pub node_id: usize,
    pub face_ids: Vec<u32>,
    pub articulation: ArticulationSpec,
    pub diagnostics: Diagnostics,
}

impl Prediction {
    /// Canonical JSON bytes; CLI and HTTP emit exactly this.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("prediction serializes")
    }
}

/// Everything derived from the mesh once per session.
pub struct Prepared {
    pub mesh: Mesh,
    pub field: FeatureField,
    pub tree: ClusterTree,
}

impl Prepared {
    /// Uses `field` when given, the built-in geometric features otherwise.
    pub fn new(mesh: Mesh, field: Option<FeatureField>, cfg: &PipelineConfig) -> Result<Self> {
        let field = match field {
            Some(f) => f,
            None => crate::segment::builtin_features(&mesh, cfg.feature_weights),
        };
        field.check_against(&mesh)?;
        let tree = crate::segment::build_cluster_tree(&mesh, &field, &cfg.segment)?;
        Ok(Self { mesh, field, tree })
    }
}

/// Expanded rect and the crop camera that renders it.
pub fn focal_view(camera: &Camera, focal: Option<&PixelRect>, expand: f64) -> Result<(PixelRect, Camera)> {
    let full = PixelRect::full(camera.width, camera.height);
    match focal {
        None => Ok((full, camera.clone())),
        Some(r) if *r == full => Ok((full, camera.clone())),
        Some(r) => {
            let r = r.scaled(expand).expand_to_aspect(camera.width, camera.height);
            Ok((r, focal_crop(camera, &r)?))
        }
    }
}

/// Maps parent-view stroke points into the crop's pixel frame.
pub fn strokes_into(strokes: &[Stroke], rect: &PixelRect, width: usize, height: usize) -> Result<Vec<Stroke>> {
    let sx = width as f64 / rect.width();
    let sy = height as f64 / rect.height();
    strokes
        .iter()
        .map(|s| {
            let pts = s.points.iter().map(|p| [(p[0] - rect.x0) * sx, (p[1] - rect.y0) * sy]).collect();
            Stroke::new(pts, s.role)
        })
        .collect()
}

/// Classify, render, predict, select and snap.
pub fn predict(
    prepared: &Prepared,
    camera: &Camera,
    strokes: &StrokeSet,
    focal: Option<&PixelRect>,
    backend: &dyn PredictionBackend,
    cfg: &PipelineConfig,
) -> Result<Prediction> {
    camera.validate()?;
    let (rect, cam) = focal_view(camera, focal, cfg.focal_expand)?;
    for s in &strokes.strokes {
        s.check_bounds(camera.width, camera.height)?;
    }
    let local = strokes_into(&strokes.strokes, &rect, cam.width, cam.height)?;
    let intent = classify_strokes(&local, &cfg.infer.sketch)?;
    let gb = render_gbuffer(&prepared.mesh, &cam)?;
    if gb.foreground_count() == 0 {
        return Err(Error::EmptyMask);
    }
    let sketch = rasterize_strokes(&local, cam.width, cam.height);
    let input = PredictionInput {
        gbuffer: &gb,
        camera: &cam,
        mesh: &prepared.mesh,
        sketch: &sketch,
        intent: &intent,
        field: &prepared.field,
    };
    let raw = backend.predict(&input)?.validated(cam.width, cam.height)?;
    predict_from_raw(prepared, &raw, &cam, &gb, rect, backend.name(), intent.is_rotation(), cfg)
}

#[allow(clippy::too_many_arguments)]
fn predict_from_raw(
    prepared: &Prepared,
    raw: &crate::infer::RawPrediction,
    cam: &Camera,
    gb: &GBuffer,
    rect: PixelRect,
    backend: &str,
    rotation_intent: bool,
    cfg: &PipelineConfig,
) -> Result<Prediction> {
    let sel = select_part(&prepared.tree, &raw.mask2d, gb, cfg.mask_threshold)?;
    let fin = finalize(raw, &sel.part, &prepared.mesh, cam, gb, &cfg.infer)?;
    Ok(Prediction {
        schema_version: SCHEMA_VERSION,
        node_id: sel.node_id,
        face_ids: sel.part.face_ids().to_vec(),
        articulation: fin.articulation,
        diagnostics: Diagnostics {
            iou: sel.iou,
            intent: if rotation_intent { "rotation" } else { "translation" }.into(),
            hinge_snapped: fin.hinge_snapped,
            continuity_angle: fin.continuity_angle,
            focal_rect: rect,
            backend: backend.into(),
        },
    })
}
