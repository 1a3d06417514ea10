//! Axis-aligned box arithmetic: IoU, greedy NMS and the box-regression
//! encoding used by the detector's spatial-regression head.
//!
//! Coordinates are continuous reals in an abstract image plane. Degenerate
//! boxes are rejected at construction and never clamped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An axis-aligned bounding box with strictly positive width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBox", into = "RawBox")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawBox(f64, f64, f64, f64);

impl TryFrom<RawBox> for BBox {
    type Error = Error;
    fn try_from(r: RawBox) -> Result<Self> {
        BBox::new(r.0, r.1, r.2, r.3)
    }
}

impl From<BBox> for RawBox {
    fn from(b: BBox) -> Self {
        RawBox(b.x1, b.y1, b.x2, b.y2)
    }
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if !(x1 < x2 && y1 < y2) || !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(Error::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Builds a box from center coordinates and extents.
    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Reflects the box about the vertical axis of a plane of the given width.
    pub fn mirrored(&self, plane_width: f64) -> BBox {
        BBox {
            x1: plane_width - self.x2,
            y1: self.y1,
            x2: plane_width - self.x1,
            y2: self.y2,
        }
    }
}

/// Intersection-over-union of two boxes. Symmetric, in [0, 1], and zero for
/// disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Greedy non-maxima suppression.
///
/// Repeatedly keeps the highest-scoring remaining detection and discards
/// every remaining detection whose IoU with it exceeds `iou_threshold`.
/// Score ties break by lowest input index. Output is sorted by descending
/// score.
pub fn nms(detections: &[(f64, BBox)], iou_threshold: f64) -> Vec<(f64, BBox)> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b].0.partial_cmp(&detections[a].0).unwrap().then(a.cmp(&b))
    });
    let mut kept: Vec<(f64, BBox)> = Vec::new();
    let mut suppressed = vec![false; detections.len()];
    for &i in &order {
        if suppressed[i] {
            continue;
        }
        kept.push(detections[i]);
        for &j in &order {
            if !suppressed[j] && j != i && iou(&detections[i].1, &detections[j].1) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    kept
}

/// Dimensionless regression deltas between a proposal box and a target box:
/// center offsets normalized by the proposal size and log size ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
}

impl RegressionTarget {
    pub fn zero() -> Self {
        Self { tx: 0.0, ty: 0.0, tw: 0.0, th: 0.0 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.tx, self.ty, self.tw, self.th]
    }
}

/// Encodes the delta that maps `proposal` onto `target`.
pub fn encode_regression(proposal: &BBox, target: &BBox) -> RegressionTarget {
    let (px, py) = proposal.center();
    let (gx, gy) = target.center();
    RegressionTarget {
        tx: (gx - px) / proposal.width(),
        ty: (gy - py) / proposal.height(),
        tw: (target.width() / proposal.width()).ln(),
        th: (target.height() / proposal.height()).ln(),
    }
}

/// Applies a regression delta to a proposal, inverting [`encode_regression`].
pub fn decode_regression(delta: &RegressionTarget, proposal: &BBox) -> Result<BBox> {
    let (px, py) = proposal.center();
    let cx = px + delta.tx * proposal.width();
    let cy = py + delta.ty * proposal.height();
    let w = proposal.width() * delta.tw.exp();
    let h = proposal.height() * delta.th.exp();
    BBox::from_center(cx, cy, w, h)
}
