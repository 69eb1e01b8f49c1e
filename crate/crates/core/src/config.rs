//! Human-readable scene configuration: catalog, boxes, compatibility rules.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::indexing::AttributeCatalog;
use crate::sampling::{self, AttributeBBox};

pub const DEFAULT_CONFIG: &str = include_str!("../config/default.toml");
pub const BODY: &str = "Body";

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    catalog: Option<RawCatalog>,
    #[serde(default)]
    bboxes: BTreeMap<String, RawBox>,
    compatibility: Option<RawCompat>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    names: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    min: [f64; 3],
    max: [f64; 3],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCompat {
    #[serde(default)]
    exclusive: Vec<[String; 2]>,
    #[serde(default)]
    tags: BTreeMap<String, RawTag>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTag {
    allowed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StyleTag {
    pub name: String,
    /// Allowed labels, sorted; always contains Body when the catalog has one.
    pub allowed: Vec<usize>,
}

/// Which attributes may be combined in one generated scene.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CompatibilityRules {
    pub tags: Vec<StyleTag>,
    /// Mutually exclusive pairs, stored with the lower label first.
    exclusive: Vec<(usize, usize)>,
    body: Option<usize>,
}

impl CompatibilityRules {
    pub fn new(catalog: &AttributeCatalog, tags: Vec<StyleTag>, pairs: &[(usize, usize)]) -> Result<Self> {
        let body = catalog.label(BODY).ok();
        let mut exclusive = Vec::new();
        for &(a, b) in pairs {
            if a == b || a >= catalog.len() || b >= catalog.len() {
                return Err(Error::Config(format!("invalid exclusive pair ({a}, {b})")));
            }
            if Some(a) == body || Some(b) == body {
                return Err(Error::Config("Body cannot be mutually exclusive with anything".into()));
            }
            let p = (a.min(b), a.max(b));
            if !exclusive.contains(&p) {
                exclusive.push(p);
            }
        }
        exclusive.sort_unstable();
        let mut tags = tags;
        for t in &mut tags {
            if t.allowed.iter().any(|&l| l >= catalog.len()) {
                return Err(Error::Config(format!("tag `{}` allows an unknown label", t.name)));
            }
            if let Some(b) = body {
                t.allowed.push(b);
            }
            t.allowed.sort_unstable();
            t.allowed.dedup();
        }
        Ok(Self { tags, exclusive, body })
    }

    /// Rules with no tags and no exclusions: every attribute allowed.
    pub fn permissive(catalog: &AttributeCatalog) -> Self {
        Self::new(
            catalog,
            vec![StyleTag {
                name: "any".into(),
                allowed: (0..catalog.len()).collect(),
            }],
            &[],
        )
        .expect("permissive rules are valid")
    }

    pub fn excludes(&self, a: usize, b: usize) -> bool {
        self.exclusive.binary_search(&(a.min(b), a.max(b))).is_ok()
    }

    pub fn exclusive_pairs(&self) -> &[(usize, usize)] {
        &self.exclusive
    }

    pub fn body(&self) -> Option<usize> {
        self.body
    }

    /// True when no two labels in `set` are exclusive.
    pub fn is_compatible(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| !self.excludes(a, b)))
    }

    /// Draw a tag, then up to `size` compatible attributes from it. Body is
    /// always included; the set is returned sorted by label.
    pub fn sample_set<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> (usize, Vec<usize>) {
        if self.tags.is_empty() {
            return (0, self.body.into_iter().collect());
        }
        let tag = rng.gen_range(0..self.tags.len());
        let mut set: Vec<usize> = self.body.into_iter().collect();
        let mut pool: Vec<usize> = self.tags[tag]
            .allowed
            .iter()
            .copied()
            .filter(|l| Some(*l) != self.body)
            .collect();
        pool.shuffle(rng);
        for l in pool {
            if set.len() >= size {
                break;
            }
            if set.iter().all(|&s| !self.excludes(s, l)) {
                set.push(l);
            }
        }
        set.sort_unstable();
        (tag, set)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub catalog: AttributeCatalog,
    /// One box per label, in label order.
    pub bboxes: Vec<AttributeBBox>,
    pub rules: CompatibilityRules,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::parse(DEFAULT_CONFIG).expect("built-in config is valid")
    }
}

impl SceneConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parse and validate. Missing sections fall back to the defaults;
    /// attributes without a box get the built-in default box.
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let catalog = match raw.catalog {
            Some(c) => AttributeCatalog::new(c.names)?,
            None => AttributeCatalog::default(),
        };
        let mut bboxes = sampling::default_bboxes(&catalog);
        for (name, b) in raw.bboxes {
            let label = catalog.label(&name)?;
            bboxes[label] = AttributeBBox::new(label, b.min, b.max)?;
        }
        let rules = match raw.compatibility {
            Some(c) => {
                let pairs = c
                    .exclusive
                    .iter()
                    .map(|[a, b]| Ok((catalog.label(a)?, catalog.label(b)?)))
                    .collect::<Result<Vec<_>>>()?;
                let tags = c
                    .tags
                    .into_iter()
                    .map(|(name, t)| {
                        let allowed = t.allowed.iter().map(|n| catalog.label(n)).collect::<Result<Vec<_>>>()?;
                        Ok(StyleTag { name, allowed })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let tags = if tags.is_empty() {
                    CompatibilityRules::permissive(&catalog).tags
                } else {
                    tags
                };
                CompatibilityRules::new(&catalog, tags, &pairs)?
            }
            None => CompatibilityRules::permissive(&catalog),
        };
        Ok(Self { catalog, bboxes, rules })
    }
}
