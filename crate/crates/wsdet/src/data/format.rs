//! Line-delimited dataset file format.
//!
//! The first line is a header record carrying the class count, feature
//! dimension, plane size and a format version; every following line is one
//! sample record. Numeric values are written in decimal with 9 significant
//! digits, so save -> load -> save is byte-identical. Field names are fixed
//! in docs/FORMAT.md.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ProposalBag, WeaklyLabeledDataset};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const FORMAT_NAME: &str = "wsdet-dataset";
pub const FORMAT_VERSION: u32 = 1;

/// Rounds to 9 significant decimal digits, the precision of the file format.
pub(crate) fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    num_classes: usize,
    feature_dim: usize,
    plane: [f64; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    image_id: String,
    #[serde(default)]
    mirrored: bool,
    labels: Vec<usize>,
    proposals: Vec<[f64; 4]>,
    features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    eval_gt: Vec<EvalGt>,
}

#[derive(Serialize, Deserialize)]
struct EvalGt(usize, f64, f64, f64, f64);

fn fmt_err(line: usize, message: impl std::fmt::Display) -> Error {
    Error::Format { line, message: message.to_string() }
}

pub fn save(dataset: &WeaklyLabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        num_classes: dataset.num_classes(),
        feature_dim: dataset.feature_dim(),
        plane: [round_sig9(dataset.plane().0), round_sig9(dataset.plane().1)],
    };
    writeln!(out, "{}", serde_json::to_string(&header).unwrap())?;
    for (i, bag) in dataset.samples().iter().enumerate() {
        let rec = Record {
            image_id: bag.image_id().to_string(),
            mirrored: bag.is_mirrored(),
            labels: bag.labels().iter().copied().collect(),
            proposals: bag
                .proposals()
                .iter()
                .map(|b| [round_sig9(b.x1()), round_sig9(b.y1()), round_sig9(b.x2()), round_sig9(b.y2())])
                .collect(),
            features: bag
                .features()
                .iter()
                .map(|f| f.iter().map(|&v| round_sig9(v)).collect())
                .collect(),
            eval_gt: dataset
                .eval_ground_truth(i)
                .iter()
                .map(|(c, b)| {
                    EvalGt(*c, round_sig9(b.x1()), round_sig9(b.y1()), round_sig9(b.x2()), round_sig9(b.y2()))
                })
                .collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&rec).unwrap())?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<WeaklyLabeledDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

    let (hline, htext) = lines.next().ok_or_else(|| fmt_err(1, "empty file: missing header"))?;
    let header: Header = serde_json::from_str(htext).map_err(|e| fmt_err(hline + 1, e))?;
    if header.format != FORMAT_NAME {
        return Err(fmt_err(hline + 1, format!("unknown format {:?}", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(fmt_err(hline + 1, format!("unsupported version {}", header.version)));
    }

    let mut samples = Vec::new();
    let mut eval_gt = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let rec: Record = serde_json::from_str(line).map_err(|e| fmt_err(lineno, e))?;
        let proposals: Vec<BBox> = rec
            .proposals
            .iter()
            .map(|&[x1, y1, x2, y2]| BBox::new(x1, y1, x2, y2))
            .collect::<Result<_>>()
            .map_err(|e| fmt_err(lineno, format!("proposals: {e}")))?;
        let labels: BTreeSet<usize> = rec.labels.iter().copied().collect();
        let bag = ProposalBag::new(rec.image_id, rec.mirrored, proposals, rec.features, labels)
            .map_err(|e| fmt_err(lineno, e))?;
        let gts: Vec<(usize, BBox)> = rec
            .eval_gt
            .iter()
            .map(|&EvalGt(c, x1, y1, x2, y2)| Ok((c, BBox::new(x1, y1, x2, y2)?)))
            .collect::<Result<_>>()
            .map_err(|e: Error| fmt_err(lineno, format!("eval_gt: {e}")))?;
        samples.push(bag);
        eval_gt.push(gts);
    }
    WeaklyLabeledDataset::new(
        samples,
        eval_gt,
        header.num_classes,
        header.feature_dim,
        (header.plane[0], header.plane[1]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::NamedTempFile;

    fn sample_dataset() -> WeaklyLabeledDataset {
        let bag = |id: &str, labels: &[usize]| {
            ProposalBag::new(
                id.into(),
                false,
                vec![BBox::new(0.5, 1.0, 10.25, 20.125).unwrap(), BBox::new(3.0, 3.0, 8.0, 9.0).unwrap()],
                vec![vec![0.1234567891234, -2.5], vec![1e-12, 3.0]],
                labels.iter().copied().collect(),
            )
            .unwrap()
        };
        WeaklyLabeledDataset::new(
            vec![bag("one", &[1]), bag("two", &[2, 3])],
            vec![vec![(1, BBox::new(0.5, 1.0, 10.25, 20.125).unwrap())], vec![]],
            3,
            2,
            (100.0, 100.0),
        )
        .unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let d = sample_dataset();
        let f1 = NamedTempFile::new().unwrap();
        save(&d, f1.path()).unwrap();
        let loaded = load(f1.path()).unwrap();
        let f2 = NamedTempFile::new().unwrap();
        save(&loaded, f2.path()).unwrap();
        assert_eq!(fs::read(f1.path()).unwrap(), fs::read(f2.path()).unwrap());
    }

    #[test]
    fn loaded_dataset_matches_when_values_are_canonical() {
        // values already at 9 significant digits survive the round trip exactly
        let d = sample_dataset();
        let f = NamedTempFile::new().unwrap();
        save(&d, f.path()).unwrap();
        let loaded = load(f.path()).unwrap();
        let again = NamedTempFile::new().unwrap();
        save(&loaded, again.path()).unwrap();
        let twice = load(again.path()).unwrap();
        assert_eq!(loaded, twice);
    }

    #[test]
    fn missing_labels_field_names_it() {
        let mut f = NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"format":"wsdet-dataset","version":1,"num_classes":2,"feature_dim":1,"plane":[10.0,10.0]}}"#
        )
        .unwrap();
        writeln!(f, r#"{{"image_id":"x","proposals":[[0.0,0.0,1.0,1.0]],"features":[[0.0]]}}"#).unwrap();
        let err = load(f.path()).unwrap_err().to_string();
        assert!(err.contains("labels"), "error should name the missing field: {err}");
        assert!(err.contains("line 2"), "error should name the line: {err}");
    }

    #[test]
    fn unknown_field_rejected() {
        let mut f = NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"format":"wsdet-dataset","version":1,"num_classes":2,"feature_dim":1,"plane":[10.0,10.0],"extra":1}}"#
        )
        .unwrap();
        assert!(load(f.path()).is_err());
    }

    #[test]
    fn hand_written_fixture_parses_to_known_values() {
        let mut f = NamedTempFile::new().unwrap();
        writeln!(
            f,
            r#"{{"format":"wsdet-dataset","version":1,"num_classes":2,"feature_dim":2,"plane":[50.0,50.0]}}"#
        )
        .unwrap();
        writeln!(
            f,
            r#"{{"image_id":"img_a","labels":[2],"proposals":[[1.0,2.0,11.0,22.0]],"features":[[0.25,-1.5]],"eval_gt":[[2,1.0,2.0,11.0,22.0]]}}"#
        )
        .unwrap();
        writeln!(
            f,
            r#"{{"image_id":"img_b","mirrored":true,"labels":[1,2],"proposals":[[0.0,0.0,5.0,5.0],[10.0,10.0,20.0,30.0]],"features":[[1.0,0.0],[0.0,1.0]]}}"#
        )
        .unwrap();
        let d = load(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.plane(), (50.0, 50.0));
        let a = &d.samples()[0];
        assert_eq!(a.image_id(), "img_a");
        assert!(!a.is_mirrored());
        assert_eq!(a.labels().iter().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(a.proposals()[0].x2(), 11.0);
        assert_eq!(a.feature(0), &[0.25, -1.5]);
        assert_eq!(d.eval_ground_truth(0), &[(2, BBox::new(1.0, 2.0, 11.0, 22.0).unwrap())]);
        let b = &d.samples()[1];
        assert!(b.is_mirrored());
        assert_eq!(b.num_proposals(), 2);
        assert!(d.eval_ground_truth(1).is_empty());
    }

    #[test]
    fn round_sig9_examples() {
        assert_eq!(round_sig9(0.1234567891234), 0.123456789);
        assert_eq!(round_sig9(123456789.1), 123456789.0);
        assert_eq!(round_sig9(0.0), 0.0);
        assert_eq!(round_sig9(-2.5), -2.5);
    }
}
