//! Scene and vocabulary types.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

use crate::geom::{BoxShape, PlacedBox, Pose};

/// Index into a [`Vocabulary`]. Id 0 is always the reserved room category.
pub type CategoryId = usize;

/// Name of the reserved room category.
pub const ROOM_CATEGORY: &str = "scene";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VocabError {
    #[error("duplicate category name `{0}`")]
    Duplicate(String),
    #[error("category name `{0}` is reserved")]
    Reserved(String),
    #[error("category name `{0}` must be lower-case and non-empty")]
    BadName(String),
}

/// Ordered list of category names. Index 0 is the room category `scene`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from object category names (the room category is
    /// inserted automatically at index 0).
    pub fn new<I: IntoIterator<Item = S>, S: AsRef<str>>(names: I) -> Result<Self, VocabError> {
        let mut v = Vocabulary {
            names: alloc::vec![ROOM_CATEGORY.to_string()],
        };
        for n in names {
            v.push(n.as_ref())?;
        }
        Ok(v)
    }

    pub fn push(&mut self, name: &str) -> Result<CategoryId, VocabError> {
        if name == ROOM_CATEGORY {
            return Err(VocabError::Reserved(name.to_string()));
        }
        if name.is_empty() || name.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(VocabError::BadName(name.to_string()));
        }
        if self.names.iter().any(|n| n == name) {
            return Err(VocabError::Duplicate(name.to_string()));
        }
        self.names.push(name.to_string());
        Ok(self.names.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<CategoryId> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: CategoryId) -> &str {
        &self.names[id]
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false // always holds the room category
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Object categories only (everything except the room).
    pub fn object_ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        1..self.names.len()
    }
}

/// One placed object: category, pose and box shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectInstance {
    pub category: CategoryId,
    pub pose: Pose,
    pub shape: BoxShape,
}

impl ObjectInstance {
    pub fn placed(&self) -> PlacedBox {
        PlacedBox {
            pose: self.pose,
            shape: self.shape,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SceneError {
    #[error("room object must use the reserved category 0 (`scene`)")]
    RoomCategory,
    #[error("an object uses the reserved room category")]
    ObjectIsRoom,
    #[error("scene holds {0} objects, more than the configured maximum {1}")]
    TooManyObjects(usize, usize),
}

/// A room plus an ordered list of objects inside it.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub room: ObjectInstance,
    pub objects: Vec<ObjectInstance>,
}

impl Scene {
    pub fn new(room: ObjectInstance, objects: Vec<ObjectInstance>) -> Result<Self, SceneError> {
        if room.category != 0 {
            return Err(SceneError::RoomCategory);
        }
        if objects.iter().any(|o| o.category == 0) {
            return Err(SceneError::ObjectIsRoom);
        }
        Ok(Scene { room, objects })
    }

    /// Checks the configured per-scene object budget.
    pub fn check_object_limit(&self, max_objects: usize) -> Result<(), SceneError> {
        if self.objects.len() > max_objects {
            Err(SceneError::TooManyObjects(self.objects.len(), max_objects))
        } else {
            Ok(())
        }
    }

    /// Distinct object categories present in the scene (sorted, deduplicated).
    pub fn present_categories(&self) -> Vec<CategoryId> {
        let mut ids: Vec<CategoryId> = self.objects.iter().map(|o| o.category).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Default cap on objects per scene.
pub const DEFAULT_MAX_OBJECTS: usize = 15;

/// Default minimum number of instances a category needs across the corpus
/// to stay in the vocabulary.
pub const DEFAULT_MIN_CATEGORY_COUNT: usize = 10;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Pose;

    fn obj(cat: CategoryId) -> ObjectInstance {
        ObjectInstance {
            category: cat,
            pose: Pose::identity(),
            shape: BoxShape::new([1.0, 1.0, 1.0]).unwrap(),
        }
    }

    #[test]
    fn vocabulary_is_stable_and_unique() {
        let v = Vocabulary::new(["bed", "sofa"]).unwrap();
        assert_eq!(v.id("scene"), Some(0));
        assert_eq!(v.id("bed"), Some(1));
        assert_eq!(v.id("sofa"), Some(2));
        assert_eq!(v.name(2), "sofa");
        assert_eq!(
            Vocabulary::new(["bed", "bed"]).unwrap_err(),
            VocabError::Duplicate("bed".into())
        );
        assert!(Vocabulary::new(["scene"]).is_err());
        assert!(Vocabulary::new(["Bed"]).is_err());
    }

    #[test]
    fn scene_validation() {
        let room = obj(0);
        assert!(Scene::new(room, alloc::vec![obj(1), obj(2)]).is_ok());
        assert!(Scene::new(obj(1), alloc::vec![]).is_err());
        assert!(Scene::new(room, alloc::vec![obj(0)]).is_err());
        let s = Scene::new(room, alloc::vec![obj(1); 16]).unwrap();
        assert!(s.check_object_limit(15).is_err());
        assert!(s.check_object_limit(16).is_ok());
    }
}
