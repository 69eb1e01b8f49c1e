//! Renderable scenes and edit-by-exchange views.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::deform::{NonRigidMlp, Pose, TemplateSkeleton};
use crate::error::{Error, Result};
use crate::field::{FieldDims, SpaceAttributeField};
use crate::indexing::{AttributeCatalog, IndexerMlp};
use crate::render::{AttributeSlot, DecoderMlp, RenderOutput, RenderSettings, Renderer, DEFAULT_FEATURE_WIDTH};
use crate::sampling::{self, AttributeBBox, Camera};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderDefaults {
    pub settings: RenderSettings,
    pub resolution: usize,
    /// Attributes rendered when none are requested explicitly.
    pub active: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub catalog: AttributeCatalog,
    pub field: SpaceAttributeField,
    pub indexer: IndexerMlp,
    pub decoder: DecoderMlp,
    pub nonrigid: NonRigidMlp,
    pub template: TemplateSkeleton,
    /// One box per catalog label, in label order.
    pub bboxes: Vec<AttributeBBox>,
    pub defaults: RenderDefaults,
    /// Body-style tag the active set was drawn under.
    pub style: String,
}

impl Scene {
    /// Freshly initialized trainable scene with default template and boxes.
    pub fn new_random(catalog: AttributeCatalog, dims: FieldDims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let field = SpaceAttributeField::init(dims, &mut rng)?;
        let n = catalog.len();
        let bboxes = sampling::default_bboxes(&catalog);
        let scene = Self {
            indexer: IndexerMlp::new(n, dims.attr_dim, seed ^ 0x1d),
            decoder: DecoderMlp::new(dims.feature_dim, DEFAULT_FEATURE_WIDTH, seed ^ 0xdec),
            nonrigid: NonRigidMlp::new(seed ^ 0x0ff),
            template: TemplateSkeleton::humanoid(),
            field,
            bboxes,
            defaults: RenderDefaults {
                settings: RenderSettings::default(),
                resolution: sampling::DEFAULT_RES,
                active: (0..n).collect(),
            },
            style: String::new(),
            catalog,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.catalog.len();
        if self.indexer.labels() != n || self.bboxes.len() != n {
            return Err(Error::Shape(format!(
                "catalog has {n} attributes but the indexer takes {} and there are {} boxes",
                self.indexer.labels(),
                self.bboxes.len()
            )));
        }
        if self.indexer.attr_dim() != self.field.dims().attr_dim {
            return Err(Error::Shape(
                "indexer output width differs from the field's attribute width".into(),
            ));
        }
        for (l, b) in self.bboxes.iter().enumerate() {
            b.validate()?;
            if b.label != l {
                return Err(Error::Shape("bounding boxes must be listed in label order".into()));
            }
        }
        self.indexer.mlp.validate()?;
        self.decoder.validate()?;
        if self.decoder.input_width() != self.field.dims().feature_dim {
            return Err(Error::Shape(
                "decoder input width differs from the field feature width".into(),
            ));
        }
        self.nonrigid.validate()?;
        self.template.validate()?;
        self.defaults.settings.validate()?;
        if self.defaults.active.iter().any(|&l| l >= n) {
            return Err(Error::Shape("default active set refers to a missing label".into()));
        }
        Ok(())
    }

    pub fn view(&self) -> SceneView<'_> {
        SceneView::new(self)
    }

    pub fn renderer(&self, active: &[usize], pose: &Pose, settings: RenderSettings) -> Result<Renderer<'_>> {
        self.view().renderer(active, pose, settings)
    }

    pub fn render(&self, camera: &Camera, active: &[usize], pose: &Pose) -> Result<RenderOutput> {
        self.renderer(active, pose, self.defaults.settings.clone())?
            .render(camera)
    }

    pub fn rest_pose(&self) -> Pose {
        Pose::rest(self.template.joints.len())
    }
}

/// Render a scene with its default settings.
pub fn render_image(scene: &Scene, camera: &Camera, active: &[usize], pose: &Pose) -> Result<RenderOutput> {
    scene.render(camera, active, pose)
}

/// Target attribute and the identifier of the scene it is taken from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EditSpec {
    pub label: usize,
    pub source: String,
}

/// A base scene with some attributes' contributions taken from other
/// scenes. Sources are borrowed, never copied or mutated.
#[derive(Clone, Debug)]
pub struct SceneView<'a> {
    pub base: &'a Scene,
    overrides: Vec<(usize, &'a Scene)>,
}

impl<'a> SceneView<'a> {
    pub fn new(base: &'a Scene) -> Self {
        Self {
            base,
            overrides: Vec::new(),
        }
    }

    /// Take `label`'s contribution from `source`. Later swaps of the same
    /// label replace earlier ones.
    pub fn with_swap(mut self, source: &'a Scene, label: usize) -> Result<Self> {
        if source.catalog != self.base.catalog {
            return Err(Error::CatalogMismatch);
        }
        if label >= self.base.catalog.len() {
            return Err(Error::LabelOutOfRange {
                label,
                len: self.base.catalog.len(),
            });
        }
        self.overrides.retain(|(l, _)| *l != label);
        self.overrides.push((label, source));
        Ok(self)
    }

    pub fn source_of(&self, label: usize) -> &'a Scene {
        self.overrides
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, s)| *s)
            .unwrap_or(self.base)
    }

    /// Renderer over the base scene's decoder, template and boxes, with
    /// each active attribute contracted from its source scene.
    pub fn renderer(&self, active: &[usize], pose: &Pose, settings: RenderSettings) -> Result<Renderer<'a>> {
        let base = self.base;
        let mut slots = Vec::with_capacity(active.len());
        for (i, &label) in active.iter().enumerate() {
            if label >= base.catalog.len() {
                return Err(Error::LabelOutOfRange {
                    label,
                    len: base.catalog.len(),
                });
            }
            if active[..i].contains(&label) {
                return Err(Error::Config(format!(
                    "attribute `{}` listed twice",
                    base.catalog.name(label)
                )));
            }
            let src = self.source_of(label);
            let index = src.indexer.forward(label)?;
            slots.push(AttributeSlot {
                label,
                contribution: src.field.contract(&index)?,
                bbox: base.bboxes[label].clone(),
            });
        }
        Renderer::new(
            slots,
            &base.decoder,
            &base.nonrigid,
            &base.template,
            pose,
            settings,
            base.catalog.len(),
        )
    }

    pub fn render(&self, camera: &Camera, active: &[usize], pose: &Pose) -> Result<RenderOutput> {
        self.renderer(active, pose, self.base.defaults.settings.clone())?
            .render(camera)
    }
}

/// Composite view of `scene_a` with `spec.label` taken from `scene_b`.
pub fn edit_swap<'a>(scene_a: &'a Scene, scene_b: &'a Scene, spec: &EditSpec) -> Result<SceneView<'a>> {
    SceneView::new(scene_a).with_swap(scene_b, spec.label)
}
