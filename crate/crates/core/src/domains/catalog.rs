use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::DomainError;
use crate::worldsim::{Affordance, ClassTable, Constraint, GeometryConfig, ObjectClass, Term};

/// Fixed placement spots without a supporting object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spot {
    /// Furniture slot on the floor plan.
    Anchor,
    /// Mounted on a wall at one of the layout heights.
    Wall,
    /// Free floor spot.
    Floor,
}

/// One weighted placement option for a class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prior {
    On { on: String, w: f64 },
    In { inside: String, w: f64 },
    At { at: Spot, w: f64 },
}

impl Prior {
    pub fn weight(&self) -> f64 {
        match self {
            Prior::On { w, .. } | Prior::In { w, .. } | Prior::At { w, .. } => *w,
        }
    }

    pub fn support(&self) -> Option<&str> {
        match self {
            Prior::On { on, .. } => Some(on),
            Prior::In { inside, .. } => Some(inside),
            Prior::At { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub room: [f64; 2],
    pub robot_start: [f64; 2],
    pub anchors: Vec<[f64; 2]>,
    pub walls: Vec<[f64; 2]>,
    pub wall_heights: Vec<f64>,
    pub floor_spots: Vec<[f64; 2]>,
    /// Uniform jitter applied to anchor positions.
    pub jitter: f64,
}

/// Goal whose constraints name classes; bound to instances per scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTemplate {
    pub id: String,
    pub text: String,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainCatalog {
    pub name: String,
    #[serde(default)]
    pub geometry: GeometryConfig,
    pub predicates: Vec<String>,
    pub classes: Vec<ObjectClass>,
    /// Movable classes that count as tools.
    pub tools: Vec<String>,
    /// Classes never placed by scene sampling; reserved for test-time substitution.
    #[serde(default)]
    pub held_out: Vec<String>,
    /// Similar-object table for the unseen-object suite.
    #[serde(default)]
    pub substitutions: BTreeMap<String, String>,
    /// Unrelated non-tool classes for the random-replacement suite.
    #[serde(default)]
    pub unrelated: Vec<String>,
    /// Same-category alternatives for goal substitution.
    #[serde(default)]
    pub goal_alternatives: BTreeMap<String, String>,
    pub layout: Layout,
    pub placement_priors: BTreeMap<String, Vec<Prior>>,
    /// Inclusive instance-count bounds; classes with priors default to exactly one.
    #[serde(default)]
    pub multiplicity: BTreeMap<String, [u32; 2]>,
    pub goals: Vec<GoalTemplate>,
    #[serde(skip)]
    table: Option<Arc<ClassTable>>,
}

const MINI_HOME: &str = include_str!("../../catalogs/mini-home.json");
const MINI_FACTORY: &str = include_str!("../../catalogs/mini-factory.json");
const HOME: &str = include_str!("../../catalogs/home.json");
const FACTORY: &str = include_str!("../../catalogs/factory.json");

impl DomainCatalog {
    pub const BUILTIN: [&'static str; 4] = ["mini-home", "mini-factory", "home", "factory"];

    pub fn builtin(name: &str) -> Result<Self, DomainError> {
        let src = match name {
            "mini-home" => MINI_HOME,
            "mini-factory" => MINI_FACTORY,
            "home" => HOME,
            "factory" => FACTORY,
            other => return Err(DomainError::UnknownDomain(other.to_string())),
        };
        Self::from_json(src)
    }

    pub fn from_json(src: &str) -> Result<Self, DomainError> {
        let mut c: DomainCatalog = serde_json::from_str(src)?;
        c.table = Some(Arc::new(ClassTable::new(c.predicates.clone(), c.classes.clone())?));
        c.validate()?;
        Ok(c)
    }

    pub fn from_path(path: &Path) -> Result<Self, DomainError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Built-in name or a path to a catalog JSON file.
    pub fn load(name_or_path: &str) -> Result<Self, DomainError> {
        if Self::BUILTIN.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else {
            Self::from_path(Path::new(name_or_path))
        }
    }

    pub fn table(&self) -> Arc<ClassTable> {
        self.table.clone().expect("catalog constructed through from_json")
    }

    pub fn class(&self, token: &str) -> Option<&ObjectClass> {
        self.classes.iter().find(|c| c.token == token)
    }

    pub fn is_tool(&self, token: &str) -> bool {
        self.tools.iter().any(|t| t == token)
    }

    pub fn goal(&self, id: &str) -> Option<&GoalTemplate> {
        self.goals.iter().find(|g| g.id == id)
    }

    pub fn count_bounds(&self, token: &str) -> [u32; 2] {
        self.multiplicity.get(token).copied().unwrap_or([1, 1])
    }

    /// Fingerprint of the catalog content.
    pub fn hash(&self) -> String {
        crate::sha256_hex(serde_json::to_string(self).expect("catalog serializes").as_bytes())
    }

    fn validate(&self) -> Result<(), DomainError> {
        let bad = |m: String| Err(DomainError::BadCatalog(m));
        let known = |t: &str| self.class(t).is_some();
        if !known("robot") {
            return bad("catalog needs a `robot` class".into());
        }
        for t in &self.tools {
            match self.class(t) {
                Some(c) if c.affordances.has(Affordance::Movable) => {}
                Some(_) => return bad(format!("tool `{t}` is not movable")),
                None => return bad(format!("unknown tool `{t}`")),
            }
        }
        for t in self.held_out.iter().chain(&self.unrelated).chain(self.substitutions.keys()).chain(self.substitutions.values()) {
            if !known(t) {
                return bad(format!("unknown class `{t}`"));
            }
        }
        for (k, v) in &self.goal_alternatives {
            if !known(k) || !known(v) {
                return bad(format!("goal alternative {k} -> {v} names an unknown class"));
            }
        }
        for (t, priors) in &self.placement_priors {
            if !known(t) {
                return bad(format!("priors for unknown class `{t}`"));
            }
            for p in priors {
                if !(p.weight() > 0.0) {
                    return bad(format!("non-positive prior weight for `{t}`"));
                }
                if let Some(s) = p.support() {
                    if !known(s) {
                        return bad(format!("`{t}` placed on unknown class `{s}`"));
                    }
                }
                if let Prior::In { inside, .. } = p {
                    if !self.class(inside).is_some_and(|c| c.affordances.has(Affordance::Container)) {
                        return bad(format!("`{t}` placed inside non-container `{inside}`"));
                    }
                }
            }
        }
        for (t, [lo, hi]) in &self.multiplicity {
            if !known(t) || lo > hi {
                return bad(format!("bad multiplicity for `{t}`"));
            }
        }
        if self.goals.is_empty() {
            return bad("catalog has no goals".into());
        }
        for g in &self.goals {
            if g.constraints.is_empty() {
                return bad(format!("goal `{}` has no constraints", g.id));
            }
            for c in &g.constraints {
                let mut tokens: Vec<&str> = c
                    .terms()
                    .into_iter()
                    .filter_map(|t| match t {
                        Term::Class(c) => Some(c.as_str()),
                        Term::Id(_) => None,
                    })
                    .collect();
                if let Constraint::Absent { class } = c {
                    tokens.push(class);
                }
                if let Some(t) = tokens.into_iter().find(|t| !known(t)) {
                    return bad(format!("goal `{}` references unknown class `{t}`", g.id));
                }
            }
        }
        Ok(())
    }
}
