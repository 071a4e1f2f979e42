//! The two try-on renderers. Both are deterministic functions of a scene and
//! a graphics vector and never touch pixels outside their mask.

pub mod color;
pub mod hair;
pub mod histogram;
pub mod lipstick;

use std::path::Path;

pub use hair::{recolor_swatch, render_hair, synthetic_swatch, HairParams};
pub use histogram::{extract_histograms, histogram_match, HistogramSet};
pub use lipstick::{apply_gloss, recolor_lips, render_lipstick, LipstickParams};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{Region, Scene};
use crate::schema::{load_schema, GraphicsVector, ParameterSchema, RendererId};

/// Width and height of the committed default swatch.
pub const DEFAULT_SWATCH_SIZE: (usize, usize) = (64, 32);
pub const DEFAULT_SWATCH_SEED: u64 = 32;

/// 8-bit levels, identical to `assets/swatch_default.png`.
pub fn default_swatch() -> Image {
    synthetic_swatch(DEFAULT_SWATCH_SIZE.0, DEFAULT_SWATCH_SIZE.1, DEFAULT_SWATCH_SEED).quantized()
}

/// A renderer bound to its schema (and swatch, for hair).
#[derive(Clone, Debug)]
pub struct Renderer {
    pub schema: ParameterSchema,
    swatch: Option<Image>,
}

impl Renderer {
    pub fn lipstick() -> Self {
        Self {
            schema: load_schema(RendererId::Lipstick),
            swatch: None,
        }
    }

    pub fn hair(swatch: Image) -> Self {
        Self {
            schema: load_schema(RendererId::Hair),
            swatch: Some(swatch),
        }
    }

    /// Lipstick, or hair with the swatch at `swatch` (the built-in default
    /// when `None`).
    pub fn for_id(id: RendererId, swatch: Option<&Path>) -> Result<Self> {
        Ok(match id {
            RendererId::Lipstick => Self::lipstick(),
            RendererId::Hair => Self::hair(match swatch {
                Some(p) => Image::load(p)?,
                None => default_swatch(),
            }),
        })
    }

    pub fn id(&self) -> RendererId {
        self.schema.renderer_id
    }

    /// The scene region this renderer edits.
    pub fn region(&self) -> Region {
        match self.id() {
            RendererId::Lipstick => Region::Lips,
            RendererId::Hair => Region::Hair,
        }
    }

    pub fn swatch(&self) -> Option<&Image> {
        self.swatch.as_ref()
    }

    /// Renders a validated graphics vector.
    pub fn render(&self, scene: &Scene, g: &GraphicsVector) -> Result<Image> {
        self.schema.ensure_valid(g)?;
        self.render_unchecked(scene, &g.values)
    }

    /// Renders from normalized coordinates (clamped into `[0, 1]`).
    pub fn render_normalized(&self, scene: &Scene, u: &[f64]) -> Result<Image> {
        let (g, _) = self.schema.denormalize(u)?;
        self.render_unchecked(scene, &g.values)
    }

    fn render_unchecked(&self, scene: &Scene, values: &[f64]) -> Result<Image> {
        match self.id() {
            RendererId::Lipstick => Ok(render_lipstick(scene, &LipstickParams::from_values(values))),
            RendererId::Hair => render_hair(
                scene,
                self.swatch.as_ref().expect("hair renderer has a swatch"),
                &HairParams::from_values(values),
            ),
        }
    }

    /// Fails when the scene has nothing for this renderer to edit.
    pub fn check_scene(&self, scene: &Scene) -> Result<()> {
        if scene.bbox(self.region()).is_none() {
            return Err(Error::data(format!(
                "scene {} has an empty {:?} mask",
                scene.id,
                self.region()
            )));
        }
        if let Some(s) = &self.swatch {
            if s.width < 8 || s.height < 8 {
                return Err(Error::data("swatch must be at least 8x8"));
            }
        }
        Ok(())
    }
}
