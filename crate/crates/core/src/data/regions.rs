//! Region files: one JSON object per line,
//! `{scene_id, width?, height?, boxes: [[x1,y1,x2,y2],..], features: [[..],..]}`.
//! When `width`/`height` are present the boxes are in pixels and get
//! normalised to the unit square on load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::spatial_graph::BoundingBox;

pub const MAX_REGIONS: usize = 100;

/// Boxes and feature rows describing one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionSet {
    pub scene_id: String,
    pub boxes: Vec<BoundingBox>,
    /// `N × D_in`
    pub features: Tensor,
}

impl RegionSet {
    pub fn new(scene_id: impl Into<String>, boxes: Vec<BoundingBox>, features: Tensor) -> Result<Self> {
        let r = RegionSet {
            scene_id: scene_id.into(),
            boxes,
            features,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn feature_width(&self) -> usize {
        self.features.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.boxes.len();
        if !(1..=MAX_REGIONS).contains(&n) {
            return Err(Error::Contract(format!(
                "scene {} has {n} regions; expected 1..={MAX_REGIONS}",
                self.scene_id
            )));
        }
        if self.features.shape().len() != 2 || self.features.rows() != n {
            return Err(Error::Contract(format!(
                "scene {}: {n} boxes but feature shape {:?}",
                self.scene_id,
                self.features.shape()
            )));
        }
        if !self.features.is_finite() {
            return Err(Error::Contract(format!("scene {}: non-finite feature", self.scene_id)));
        }
        for (index, b) in self.boxes.iter().enumerate() {
            b.validate().map_err(|reason| Error::InvalidBox {
                scene: self.scene_id.clone(),
                index,
                reason,
            })?;
        }
        Ok(())
    }

    /// Same scene with regions reordered: new region `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let rows = self.features.to_rows();
        let features = Tensor::from_rows(&perm.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>())
            .expect("permuted rows");
        RegionSet {
            scene_id: self.scene_id.clone(),
            boxes: perm.iter().map(|&i| self.boxes[i]).collect(),
            features,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RegionRecord {
    scene_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
    boxes: Vec<[f64; 4]>,
    features: Vec<Vec<f64>>,
}

/// A scene that parsed but failed validation.
#[derive(Clone, Debug, PartialEq)]
pub struct Rejection {
    pub line: usize,
    pub scene_id: String,
    pub reason: String,
}

/// Outcome of a tolerant load: valid scenes plus every rejection.
#[derive(Clone, Debug, Default)]
pub struct RegionLoad {
    pub scenes: Vec<RegionSet>,
    pub rejected: Vec<Rejection>,
}

fn schema(path: &Path, line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.display().to_string(),
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn check_fields(path: &Path, line: usize, v: &Value) -> Result<()> {
    let obj = v
        .as_object()
        .ok_or_else(|| schema(path, line, "<root>", "expected a JSON object"))?;
    match obj.get("scene_id") {
        Some(Value::String(_)) => {}
        Some(_) => return Err(schema(path, line, "scene_id", "expected a string")),
        None => return Err(schema(path, line, "scene_id", "missing")),
    }
    for key in ["width", "height"] {
        if let Some(x) = obj.get(key) {
            if !x.as_f64().is_some_and(|w| w.is_finite() && w > 0.0) {
                return Err(schema(path, line, key, "expected a positive number"));
            }
        }
    }
    let boxes = obj
        .get("boxes")
        .ok_or_else(|| schema(path, line, "boxes", "missing"))?
        .as_array()
        .ok_or_else(|| schema(path, line, "boxes", "expected an array"))?;
    for (i, b) in boxes.iter().enumerate() {
        let ok = b
            .as_array()
            .is_some_and(|c| c.len() == 4 && c.iter().all(Value::is_number));
        if !ok {
            return Err(schema(path, line, &format!("boxes[{i}]"), "expected [x1, y1, x2, y2]"));
        }
    }
    let features = obj
        .get("features")
        .ok_or_else(|| schema(path, line, "features", "missing"))?
        .as_array()
        .ok_or_else(|| schema(path, line, "features", "expected an array"))?;
    for (i, row) in features.iter().enumerate() {
        let ok = row
            .as_array()
            .is_some_and(|c| !c.is_empty() && c.iter().all(Value::is_number));
        if !ok {
            return Err(schema(
                path,
                line,
                &format!("features[{i}]"),
                "expected a non-empty array of numbers",
            ));
        }
    }
    Ok(())
}

fn to_region_set(rec: RegionRecord) -> Result<RegionSet> {
    let (sx, sy) = (rec.width.unwrap_or(1.0), rec.height.unwrap_or(1.0));
    let boxes = rec
        .boxes
        .iter()
        .map(|&[x1, y1, x2, y2]| BoundingBox::new(x1 / sx, y1 / sy, x2 / sx, y2 / sy))
        .collect();
    let features = Tensor::from_rows(&rec.features).map_err(|_| {
        Error::Contract(format!("scene {}: feature rows differ in width", rec.scene_id))
    })?;
    RegionSet::new(rec.scene_id, boxes, features)
}

/// Parses a region file. Schema violations abort with a line/field
/// diagnostic; scenes that parse but fail validation are collected.
pub fn read_regions(path: &Path) -> Result<RegionLoad> {
    let text = fs::read_to_string(path)?;
    let mut out = RegionLoad::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(raw).map_err(|e| schema(path, line, "<json>", e.to_string()))?;
        check_fields(path, line, &value)?;
        let rec: RegionRecord =
            serde_json::from_value(value).map_err(|e| schema(path, line, "<record>", e.to_string()))?;
        let scene_id = rec.scene_id.clone();
        match to_region_set(rec) {
            Ok(r) => out.scenes.push(r),
            Err(e) => out.rejected.push(Rejection {
                line,
                scene_id,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}

/// Strict load: any rejected scene fails the whole file, listing all of them.
pub fn load_regions(path: &Path) -> Result<Vec<RegionSet>> {
    let load = read_regions(path)?;
    if load.rejected.is_empty() {
        return Ok(load.scenes);
    }
    let report = load
        .rejected
        .iter()
        .map(|r| format!("line {} scene {}: {}", r.line, r.scene_id, r.reason))
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::Rejected {
        count: load.rejected.len(),
        report,
    })
}

pub fn region_record_json(r: &RegionSet) -> Result<String> {
    let rec = RegionRecord {
        scene_id: r.scene_id.clone(),
        width: None,
        height: None,
        boxes: r.boxes.iter().map(|b| b.to_array()).collect(),
        features: r.features.to_rows(),
    };
    Ok(serde_json::to_string(&rec)?)
}

/// Writes normalised scenes, one per line.
pub fn write_regions(path: &Path, scenes: &[RegionSet]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in scenes {
        writeln!(w, "{}", region_record_json(r)?)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, body: &str) -> std::path::PathBuf {
        let p = dir.path().join("regions.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn minimal_file_parses() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, r#"{"scene_id":"s0","boxes":[[0.1,0.1,0.5,0.5]],"features":[[1.0,2.0]]}"#);
        let scenes = load_regions(&p).unwrap();
        assert_eq!(scenes.len(), 1);
        assert_eq!(scenes[0].feature_width(), 2);
    }

    #[test]
    fn pixel_boxes_are_normalised() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            r#"{"scene_id":"s","width":200,"height":100,"boxes":[[20,10,100,50]],"features":[[0.0]]}"#,
        );
        let s = &load_regions(&p).unwrap()[0];
        assert_eq!(s.boxes[0], BoundingBox::new(0.1, 0.1, 0.5, 0.5));
    }

    #[test]
    fn inverted_box_names_the_scene() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            concat!(
                r#"{"scene_id":"good","boxes":[[0.1,0.1,0.5,0.5]],"features":[[1.0]]}"#,
                "\n",
                r#"{"scene_id":"bad-scene","boxes":[[0.6,0.1,0.5,0.5]],"features":[[1.0]]}"#
            ),
        );
        let err = load_regions(&p).unwrap_err().to_string();
        assert!(err.contains("bad-scene"), "{err}");
        let load = read_regions(&p).unwrap();
        assert_eq!(load.scenes.len(), 1);
        assert_eq!(load.rejected[0].line, 2);
    }

    #[test]
    fn schema_errors_name_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            concat!(
                r#"{"scene_id":"a","boxes":[[0.1,0.1,0.5,0.5]],"features":[[1.0]]}"#,
                "\n",
                r#"{"scene_id":"b","boxes":[[0.1,0.1,0.5]],"features":[[1.0]]}"#
            ),
        );
        match read_regions(&p).unwrap_err() {
            Error::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "boxes[0]");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn feature_rows_must_match_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, r#"{"scene_id":"x","boxes":[[0.1,0.1,0.5,0.5]],"features":[[1.0],[2.0]]}"#);
        assert!(matches!(load_regions(&p), Err(Error::Rejected { count: 1, .. })));
    }
}
