//! JSON object annotations.
//!
//! ```json
//! {"scene_id": "scene0000_00",
//!  "objects": [
//!    {"object_id": 1, "kind": "segmentation", "indices": [0, 1, 2]},
//!    {"object_id": 2, "kind": "bbox", "center": [1, 2, 0.5], "sizes": [0.4, 0.4, 1.0],
//!     "rotation": [[1, 0, 0], [0, 1, 0], [0, 0, 1]]},
//!    {"object_id": 3, "kind": "point", "point": [1, 2, 3]}]}
//! ```
//!
//! Box `sizes` are full extents along the box's local x, y, z axes;
//! `rotation` is row-major local-to-world and defaults to identity.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::scene::{AnnotationShape, ObjectAnnotation, OrientedBox};

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation schema violation in record {index}: {reason}")]
    SchemaViolation { index: usize, reason: String },
    #[error("annotation document: {0}")]
    Document(String),
    #[error("duplicate object id {0}")]
    DuplicateObjectId(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationFile {
    pub scene_id: String,
    pub objects: Vec<ObjectAnnotation>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawObject {
    object_id: u32,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    indices: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    center: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sizes: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    rotation: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    point: Option<[f64; 3]>,
    /// Free-form label kept for readability; not interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<String>,
}

fn convert(index: usize, raw: RawObject) -> Result<ObjectAnnotation, AnnotationError> {
    let violation = |reason: String| AnnotationError::SchemaViolation { index, reason };
    let RawObject {
        object_id,
        kind,
        indices,
        center,
        sizes,
        rotation,
        point,
        label: _,
    } = raw;
    let extra = |present: bool, field: &str| {
        if present {
            Err(violation(format!("field '{field}' not allowed for kind '{kind}'")))
        } else {
            Ok(())
        }
    };
    let shape = match kind.as_str() {
        "segmentation" => {
            extra(center.is_some() || sizes.is_some() || rotation.is_some(), "center/sizes/rotation")?;
            extra(point.is_some(), "point")?;
            AnnotationShape::Segmentation(indices.ok_or_else(|| violation("segmentation needs 'indices'".into()))?)
        }
        "bbox" => {
            extra(indices.is_some(), "indices")?;
            extra(point.is_some(), "point")?;
            let center = center.ok_or_else(|| violation("bbox needs 'center'".into()))?;
            let sizes = sizes.ok_or_else(|| violation("bbox needs 'sizes'".into()))?;
            let rotation = rotation
                .map(|r| Matrix3::from_row_slice(&r.concat()))
                .unwrap_or_else(Matrix3::identity);
            AnnotationShape::OrientedBox(OrientedBox {
                center: Vector3::from(center),
                sizes,
                rotation,
            })
        }
        "point" => {
            extra(indices.is_some(), "indices")?;
            extra(center.is_some() || sizes.is_some() || rotation.is_some(), "center/sizes/rotation")?;
            AnnotationShape::PointAnchor(Vector3::from(point.ok_or_else(|| violation("point needs 'point'".into()))?))
        }
        other => return Err(violation(format!("unknown kind '{other}'"))),
    };
    let ann = ObjectAnnotation { object_id, shape };
    ann.validate(None).map_err(|e| violation(e.to_string()))?;
    Ok(ann)
}

pub fn parse_annotations(text: &str) -> Result<AnnotationFile, AnnotationError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| AnnotationError::Document(e.to_string()))?;
    let scene_id = doc
        .get("scene_id")
        .and_then(Value::as_str)
        .ok_or_else(|| AnnotationError::Document("missing string 'scene_id'".into()))?
        .to_owned();
    let records = doc
        .get("objects")
        .and_then(Value::as_array)
        .ok_or_else(|| AnnotationError::Document("missing array 'objects'".into()))?;
    let mut seen = HashSet::new();
    let mut objects = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let raw: RawObject = serde_json::from_value(record.clone())
            .map_err(|e| AnnotationError::SchemaViolation { index, reason: e.to_string() })?;
        let ann = convert(index, raw)?;
        if !seen.insert(ann.object_id) {
            return Err(AnnotationError::DuplicateObjectId(ann.object_id));
        }
        objects.push(ann);
    }
    Ok(AnnotationFile { scene_id, objects })
}

pub fn read_annotations(path: impl AsRef<Path>) -> Result<AnnotationFile, AnnotationError> {
    parse_annotations(&fs::read_to_string(path)?)
}

pub fn encode_annotations(file: &AnnotationFile) -> String {
    let objects: Vec<RawObject> = file
        .objects
        .iter()
        .map(|a| {
            let mut raw = RawObject {
                object_id: a.object_id,
                kind: String::new(),
                indices: None,
                center: None,
                sizes: None,
                rotation: None,
                point: None,
                label: None,
            };
            match &a.shape {
                AnnotationShape::Segmentation(idx) => {
                    raw.kind = "segmentation".into();
                    raw.indices = Some(idx.clone());
                }
                AnnotationShape::OrientedBox(b) => {
                    raw.kind = "bbox".into();
                    raw.center = Some(b.center.into());
                    raw.sizes = Some(b.sizes);
                    let r = &b.rotation;
                    raw.rotation = Some(std::array::from_fn(|i| std::array::from_fn(|j| r[(i, j)])));
                }
                AnnotationShape::PointAnchor(p) => {
                    raw.kind = "point".into();
                    raw.point = Some((*p).into());
                }
            }
            raw
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "scene_id": file.scene_id, "objects": objects }))
        .expect("annotations serialize")
}

pub fn write_annotations(file: &AnnotationFile, path: impl AsRef<Path>) -> Result<(), AnnotationError> {
    fs::write(path, encode_annotations(file))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(objects: &str) -> String {
        format!(r#"{{"scene_id": "s0", "objects": [{objects}]}}"#)
    }

    #[test]
    fn point_record() {
        let f = parse_annotations(&doc(r#"{"object_id": 4, "kind": "point", "point": [1, 2, 3]}"#)).unwrap();
        assert_eq!(f.objects, vec![ObjectAnnotation::point(4, Vector3::new(1.0, 2.0, 3.0))]);
    }

    #[test]
    fn bbox_defaults_to_identity_rotation() {
        let f = parse_annotations(&doc(r#"{"object_id": 1, "kind": "bbox", "center": [0, 0, 1], "sizes": [1, 2, 3]}"#)).unwrap();
        let AnnotationShape::OrientedBox(b) = &f.objects[0].shape else { panic!() };
        assert_eq!(b.rotation, Matrix3::identity());
        assert_eq!(b.sizes, [1.0, 2.0, 3.0]);
    }

    #[test]
    fn mixed_fixture_keeps_order_and_round_trips() {
        let text = doc(
            r#"{"object_id": 7, "kind": "segmentation", "indices": [3, 1, 2], "label": "chair"},
               {"object_id": 2, "kind": "bbox", "center": [1, 2, 3], "sizes": [1, 1, 1],
                "rotation": [[0, -1, 0], [1, 0, 0], [0, 0, 1]]},
               {"object_id": 5, "kind": "point", "point": [0.5, 0.25, 0]}"#,
        );
        let f = parse_annotations(&text).unwrap();
        assert_eq!(f.scene_id, "s0");
        assert!(matches!(f.objects[0].shape, AnnotationShape::Segmentation(_)));
        assert!(matches!(f.objects[1].shape, AnnotationShape::OrientedBox(_)));
        assert!(matches!(f.objects[2].shape, AnnotationShape::PointAnchor(_)));
        let AnnotationShape::OrientedBox(b) = &f.objects[1].shape else { panic!() };
        assert_eq!(b.rotation[(0, 1)], -1.0);
        assert_eq!(parse_annotations(&encode_annotations(&f)).unwrap(), f);
    }

    #[test]
    fn schema_violations_name_the_record() {
        let cases = [
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "cone"}"#,
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "bbox", "center": [0, 0, 0]}"#,
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "segmentation", "indices": []}"#,
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "point", "point": [1, 2]}"#,
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "point", "point": [1, 2, 3], "indices": [1]}"#,
            r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 2, "kind": "bbox", "center": [0, 0, 0], "sizes": [1, 1, 1], "rotation": [[2, 0, 0], [0, 1, 0], [0, 0, 1]]}"#,
        ];
        for case in cases {
            match parse_annotations(&doc(case)) {
                Err(AnnotationError::SchemaViolation { index: 1, .. }) => {}
                other => panic!("{case}: {other:?}"),
            }
        }
    }

    #[test]
    fn duplicates_and_documents() {
        let dup = doc(r#"{"object_id": 1, "kind": "point", "point": [1, 2, 3]}, {"object_id": 1, "kind": "point", "point": [1, 2, 3]}"#);
        assert!(matches!(parse_annotations(&dup), Err(AnnotationError::DuplicateObjectId(1))));
        assert!(matches!(parse_annotations("[]"), Err(AnnotationError::Document(_))));
        assert!(matches!(parse_annotations("{"), Err(AnnotationError::Document(_))));
    }
}
