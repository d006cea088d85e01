use super::{load_catalog, Catalog};

const BACKGROUND: &str = include_str!("../../data/catalogs/background.json");

const ENTITIES: &[(&str, &str)] = &[
    ("bag", include_str!("../../data/catalogs/entities/bag.json")),
    ("car", include_str!("../../data/catalogs/entities/car.json")),
    ("chair", include_str!("../../data/catalogs/entities/chair.json")),
    ("house", include_str!("../../data/catalogs/entities/house.json")),
    ("stove", include_str!("../../data/catalogs/entities/stove.json")),
    ("storefront", include_str!("../../data/catalogs/entities/storefront.json")),
];

/// The shipped background catalog (indoor and outdoor question sets).
pub fn builtin_background() -> Catalog {
    load_catalog(BACKGROUND.as_bytes()).expect("shipped background catalog is valid")
}

/// Shipped entity catalog for `entity`, if one is bundled.
pub fn builtin_entity(entity: &str) -> Option<Catalog> {
    ENTITIES
        .iter()
        .find(|(name, _)| *name == entity)
        .map(|(_, doc)| load_catalog(doc.as_bytes()).expect("shipped entity catalog is valid"))
}

/// Names and documents of every bundled entity catalog.
pub fn builtin_entities() -> Vec<(&'static str, Catalog)> {
    ENTITIES
        .iter()
        .map(|(name, doc)| (*name, load_catalog(doc.as_bytes()).expect("shipped entity catalog is valid")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{QuestionAxis, Scene};

    #[test]
    fn background_has_four_indoor_and_six_outdoor() {
        let bg = builtin_background();
        assert_eq!(bg.background_questions(Scene::Indoor).count(), 4);
        assert_eq!(bg.background_questions(Scene::Outdoor).count(), 6);
        assert_eq!(bg.questions.len(), 10);
    }

    #[test]
    fn entity_catalogs_merge_without_collisions() {
        let mut all: Vec<Catalog> = builtin_entities().into_iter().map(|(_, c)| c).collect();
        all.push(builtin_background());
        let merged = Catalog::merge(all).unwrap();
        for (name, _) in ENTITIES {
            assert!(merged.entity_questions(name).count() >= 1, "{name}");
        }
        assert!(merged
            .questions
            .iter()
            .filter(|q| q.axis == QuestionAxis::EntityAppearance)
            .all(|q| q.visibility_text.is_some()));
    }
}
