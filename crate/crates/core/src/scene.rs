//! Scene description shared by the CLI, the service and the experiments.
//!
//! Scenes are stored as TOML key-value files:
//!
//! ```toml
//! table_height = 0.0
//! laptop_xy = [0.35, 0.15]
//! test_laptop_xy = [0.3, -0.2]
//! human_xy = [0.25, -0.6]
//! human_heading = 1.5707963267948966   # direction the human faces, radians
//! object_a_xyz = [0.45, 0.25, 0.05]
//! object_b_xyz = [0.45, -0.25, 0.05]
//! encoded_objects = ["laptop", "human"]  # objects written into raw-state slots
//!
//! [workspace]
//! min = [-0.3, -0.8, 0.0]
//! max = [0.85, 0.8, 0.9]
//! ```
//!
//! Every key is optional; missing keys take the defaults shown above.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FerlError, Result};

/// Environment variable naming the scene file used when no path is given.
pub const SCENE_ENV: &str = "FERL_SCENE";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bounds {
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = p;
        for i in 0..3 {
            out[i] = out[i].clamp(self.min[i], self.max[i]);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneObject {
    Laptop,
    Human,
    ObjectA,
    ObjectB,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scene {
    pub table_height: f64,
    pub laptop_xy: [f64; 2],
    /// Laptop position used by the `test_laptop_location` feature.
    pub test_laptop_xy: [f64; 2],
    pub human_xy: [f64; 2],
    pub human_heading: f64,
    pub object_a_xyz: [f64; 3],
    pub object_b_xyz: [f64; 3],
    pub encoded_objects: [SceneObject; 2],
    pub workspace: Bounds,
}

impl Default for Scene {
    fn default() -> Self {
        Scene {
            table_height: 0.0,
            laptop_xy: [0.35, 0.15],
            test_laptop_xy: [0.3, -0.2],
            human_xy: [0.25, -0.6],
            human_heading: std::f64::consts::FRAC_PI_2,
            object_a_xyz: [0.45, 0.25, 0.05],
            object_b_xyz: [0.45, -0.25, 0.05],
            encoded_objects: [SceneObject::Laptop, SceneObject::Human],
            workspace: Bounds {
                min: [-0.3, -0.8, 0.0],
                max: [0.85, 0.8, 0.9],
            },
        }
    }
}

impl Scene {
    /// Default scene with the between-objects pair written into the raw-state
    /// object slots.
    pub fn between_objects() -> Self {
        Scene {
            encoded_objects: [SceneObject::ObjectA, SceneObject::ObjectB],
            ..Scene::default()
        }
    }

    pub fn object_xyz(&self, object: SceneObject) -> [f64; 3] {
        match object {
            SceneObject::Laptop => [self.laptop_xy[0], self.laptop_xy[1], self.table_height],
            SceneObject::Human => [self.human_xy[0], self.human_xy[1], self.table_height],
            SceneObject::ObjectA => self.object_a_xyz,
            SceneObject::ObjectB => self.object_b_xyz,
        }
    }

    /// Height range above the table used to normalize the table feature.
    pub fn max_height_above_table(&self) -> f64 {
        self.workspace.max[2] - self.table_height
    }

    pub fn human_facing(&self) -> [f64; 2] {
        [self.human_heading.cos(), self.human_heading.sin()]
    }

    pub fn validate(&self) -> Result<()> {
        let ws = &self.workspace;
        if (0..3).any(|i| !(ws.min[i] < ws.max[i])) {
            return Err(FerlError::invalid("scene", "workspace min must be below max"));
        }
        if !(self.table_height < ws.max[2]) {
            return Err(FerlError::invalid("scene", "table above workspace ceiling"));
        }
        for object in [
            SceneObject::Laptop,
            SceneObject::Human,
            SceneObject::ObjectA,
            SceneObject::ObjectB,
        ] {
            let p = self.object_xyz(object);
            if !ws.contains(&p) {
                return Err(FerlError::invalid(
                    "scene",
                    format!("{object:?} at {p:?} outside workspace"),
                ));
            }
            if p[2] < self.table_height {
                return Err(FerlError::invalid(
                    "scene",
                    format!("{object:?} below the table"),
                ));
            }
        }
        let test = [self.test_laptop_xy[0], self.test_laptop_xy[1], self.table_height];
        if !ws.contains(&test) {
            return Err(FerlError::invalid("scene", "test laptop location outside workspace"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Scene> {
        let scene: Scene = toml::from_str(text).map_err(|e| FerlError::Config(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scene serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene> {
        let text = std::fs::read_to_string(path)?;
        Scene::from_toml_str(&text)
    }

    /// Scene from `$FERL_SCENE` when set, otherwise the default scene.
    pub fn from_env_or_default() -> Result<Scene> {
        match std::env::var_os(SCENE_ENV) {
            Some(path) => Scene::load(path),
            None => Ok(Scene::default()),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    /// Short stable fingerprint of the scene contents.
    pub fn hash_hex(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
