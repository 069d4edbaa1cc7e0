//! Detector evaluation and sensing-parameter calibration.
//!
//! Detections are matched to ground truth greedily in descending score order
//! (Pascal VOC style): each detection claims the unmatched ground-truth box
//! with the highest IoU at or above the threshold, and anything left over is a
//! false positive or false negative. The sensing parameters are then fitted as
//! the least-squares line `measured = p * true + lambda`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::theory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let all_finite = [x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite());
        if !all_finite || x_max <= x_min || y_max <= y_min {
            return Err(Error::Domain(format!(
                "degenerate box ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        Ok(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::Domain(format!("score {score} outside [0, 1]")));
        }
        Ok(Detection { bbox, score })
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        return 0.0;
    }
    let inter = w * h;
    (inter / (a.area() + b.area() - inter)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub iou_min: f64,
    /// Boxes (detected and ground truth) shorter than this are ignored.
    pub min_height: f64,
    pub score_min: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            iou_min: 0.5,
            min_height: 120.0,
            score_min: 0.7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchResult {
    pub true_positives: Vec<(Detection, BBox)>,
    pub false_positives: Vec<Detection>,
    pub false_negatives: Vec<BBox>,
}

impl MatchResult {
    pub fn counts(&self) -> MatchCounts {
        MatchCounts {
            tp: self.true_positives.len(),
            fp: self.false_positives.len(),
            fn_: self.false_negatives.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl std::ops::AddAssign for MatchCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }
}

impl MatchCounts {
    /// `TP / (TP + FP)`, 1 when nothing was detected.
    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    /// `TP / (TP + FN)`, 1 when there was nothing to detect.
    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            1.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }
}

fn detection_order(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
        .then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
}

/// Greedy score-ordered matching. Ties in score are broken by lower `x_min`,
/// then lower `y_min`; ties in IoU by the earlier ground-truth box.
pub fn match_detections(dets: &[Detection], gts: &[BBox], params: &MatchParams) -> MatchResult {
    let gts: Vec<BBox> = gts
        .iter()
        .copied()
        .filter(|g| g.height() >= params.min_height)
        .collect();
    let mut dets: Vec<Detection> = dets
        .iter()
        .copied()
        .filter(|d| d.bbox.height() >= params.min_height && d.score >= params.score_min)
        .collect();
    dets.sort_by(detection_order);

    let mut taken = vec![false; gts.len()];
    let mut result = MatchResult::default();
    for det in dets {
        let mut best: Option<(usize, f64)> = None;
        for (i, gt) in gts.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let o = iou(&det.bbox, gt);
            if o >= params.iou_min && best.is_none_or(|(_, b)| o > b) {
                best = Some((i, o));
            }
        }
        match best {
            Some((i, _)) => {
                taken[i] = true;
                result.true_positives.push((det, gts[i]));
            }
            None => result.false_positives.push(det),
        }
    }
    result.false_negatives = gts
        .iter()
        .zip(&taken)
        .filter(|(_, &t)| !t)
        .map(|(g, _)| *g)
        .collect();
    result
}

/// Detections and ground truth grouped by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImageSet {
    pub detections: BTreeMap<String, Vec<Detection>>,
    pub ground_truth: BTreeMap<String, Vec<BBox>>,
}

impl ImageSet {
    pub fn image_ids(&self) -> BTreeSet<&str> {
        self.detections
            .keys()
            .chain(self.ground_truth.keys())
            .map(String::as_str)
            .collect()
    }

    /// Match counts summed over all images.
    pub fn evaluate(&self, params: &MatchParams) -> MatchCounts {
        let mut total = MatchCounts::default();
        for id in self.image_ids() {
            let dets = self.detections.get(id).map_or(&[][..], Vec::as_slice);
            let gts = self.ground_truth.get(id).map_or(&[][..], Vec::as_slice);
            total += match_detections(dets, gts, params).counts();
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall aggregated over all images at each score threshold.
pub fn pr_curve(
    images: &ImageSet,
    score_thresholds: &[f64],
    iou_min: f64,
    min_height: f64,
) -> Result<Vec<PrPoint>> {
    if score_thresholds.is_empty() {
        return Err(Error::Domain("at least one score threshold is required".into()));
    }
    Ok(score_thresholds
        .iter()
        .map(|&threshold| {
            let counts = images.evaluate(&MatchParams {
                iou_min,
                min_height,
                score_min: threshold,
            });
            PrPoint {
                threshold,
                precision: counts.precision(),
                recall: counts.recall(),
            }
        })
        .collect())
}

/// Thresholds `0.0, 0.1, ..., 1.0`.
pub fn default_thresholds() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

pub fn write_pr_csv<W: Write>(points: &[PrPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["threshold", "precision", "recall"])?;
    for p in points {
        w.write_record([
            p.threshold.to_string(),
            p.precision.to_string(),
            p.recall.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct BoxRow {
    image_id: String,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    score: Option<f64>,
}

fn read_box_rows<R: Read>(input: R, need_score: bool) -> Result<Vec<(String, BBox, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let row: BoxRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::parse(line, e.to_string()))?;
        let bbox = BBox::new(row.x_min, row.y_min, row.x_max, row.y_max)
            .map_err(|e| Error::parse(line, e.to_string()))?;
        let score = match (row.score, need_score) {
            (Some(s), _) => s,
            (None, true) => return Err(Error::parse(line, "missing score")),
            (None, false) => 1.0,
        };
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::parse(line, format!("score {score} outside [0, 1]")));
        }
        out.push((row.image_id, bbox, score));
    }
    Ok(out)
}

/// Reads `image_id,x_min,y_min,x_max,y_max,score`.
pub fn read_detections<R: Read>(input: R) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut map: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (id, bbox, score) in read_box_rows(input, true)? {
        map.entry(id).or_default().push(Detection { bbox, score });
    }
    Ok(map)
}

/// Reads `image_id,x_min,y_min,x_max,y_max`.
pub fn read_ground_truth<R: Read>(input: R) -> Result<BTreeMap<String, Vec<BBox>>> {
    let mut map: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
    for (id, bbox, _) in read_box_rows(input, false)? {
        map.entry(id).or_default().push(bbox);
    }
    Ok(map)
}

/// Least-squares fit of `measured = p * true + lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SensingFit {
    pub p: f64,
    pub lambda: f64,
    /// `None` with fewer than three points.
    pub stderr_p: Option<f64>,
    pub stderr_lambda: Option<f64>,
    pub n: usize,
    pub residual_sum_squares: f64,
    pub max_abs_residual: f64,
}

pub fn fit_sensing_params(pairs: &[(u64, f64)]) -> Result<SensingFit> {
    let n = pairs.len();
    let distinct: BTreeSet<u64> = pairs.iter().map(|&(t, _)| t).collect();
    if distinct.len() < 2 {
        return Err(Error::RankDeficient);
    }
    let nf = n as f64;
    let mean_x = pairs.iter().map(|&(t, _)| t as f64).sum::<f64>() / nf;
    let mean_y = pairs.iter().map(|&(_, m)| m).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(t, m) in pairs {
        let dx = t as f64 - mean_x;
        sxx += dx * dx;
        sxy += dx * (m - mean_y);
    }
    let p = sxy / sxx;
    let lambda = mean_y - p * mean_x;

    let residuals = pairs.iter().map(|&(t, m)| m - (p * t as f64 + lambda));
    let (rss, max_abs) = residuals.fold((0.0, 0.0_f64), |(s, mx), r| (s + r * r, mx.max(r.abs())));
    let (stderr_p, stderr_lambda) = if n > 2 {
        let sigma2 = rss / (nf - 2.0);
        (
            Some((sigma2 / sxx).sqrt()),
            Some((sigma2 * (1.0 / nf + mean_x * mean_x / sxx)).sqrt()),
        )
    } else {
        (None, None)
    };
    Ok(SensingFit {
        p,
        lambda,
        stderr_p,
        stderr_lambda,
        n,
        residual_sum_squares: rss,
        max_abs_residual: max_abs,
    })
}

/// Per-image `(true count, measured count)` pairs from an image set: the
/// true count is the number of ground-truth boxes kept by the height filter,
/// the measured count the number of detections passing both filters.
pub fn count_pairs(images: &ImageSet, params: &MatchParams) -> Vec<(u64, f64)> {
    images
        .image_ids()
        .into_iter()
        .map(|id| {
            let truth = images.ground_truth.get(id).map_or(0, |g| {
                g.iter().filter(|b| b.height() >= params.min_height).count()
            });
            let measured = images.detections.get(id).map_or(0, |d| {
                d.iter()
                    .filter(|x| x.bbox.height() >= params.min_height && x.score >= params.score_min)
                    .count()
            });
            (truth as u64, measured as f64)
        })
        .collect()
}

/// Reads `true_count,measured_count` pairs.
pub fn read_count_pairs<R: Read>(input: R) -> Result<Vec<(u64, f64)>> {
    #[derive(Deserialize)]
    struct Row {
        true_count: u64,
        measured_count: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    rdr.deserialize::<Row>()
        .map(|r| {
            r.map(|r| (r.true_count, r.measured_count)).map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                Error::parse(line, e.to_string())
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub fit: SensingFit,
    /// Mean sensed density.
    pub h_hat: f64,
    /// `(h_hat - lambda) / p`.
    pub unbiased_h: Option<f64>,
    /// `lambda / (4 (h_hat - lambda))`; `None` when uninformative.
    pub error_bound: Option<f64>,
    pub bound_informative: bool,
}

pub fn calibration_report(fit: &SensingFit, h_hat: f64) -> CalibrationReport {
    let error_bound = theory::bound_from_sampled_density(fit.lambda, h_hat).ok();
    CalibrationReport {
        fit: *fit,
        h_hat,
        unbiased_h: theory::unbiased_h(h_hat, fit.p, fit.lambda).ok(),
        bound_informative: error_bound.is_some(),
        error_bound,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn d(x0: f64, y0: f64, x1: f64, y1: f64, s: f64) -> Detection {
        Detection::new(b(x0, y0, x1, y1), s).unwrap()
    }

    fn loose() -> MatchParams {
        MatchParams {
            iou_min: 0.5,
            min_height: 0.0,
            score_min: 0.0,
        }
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(20.0, 20.0, 30.0, 30.0)), 0.0);
        // Touching edges share no area.
        assert_eq!(iou(&a, &b(10.0, 0.0, 20.0, 10.0)), 0.0);
        let half = iou(&a, &b(0.0, 5.0, 10.0, 15.0));
        assert!((half - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(Detection::new(b(0.0, 0.0, 1.0, 1.0), 1.2).is_err());
    }

    #[test]
    fn no_detections_all_missed() {
        let gts = [b(0.0, 0.0, 1.0, 1.0), b(2.0, 0.0, 3.0, 1.0), b(4.0, 0.0, 5.0, 1.0)];
        let r = match_detections(&[], &gts, &loose());
        assert_eq!(r.counts(), MatchCounts { tp: 0, fp: 0, fn_: 3 });
    }

    #[test]
    fn exact_hit() {
        let g = b(0.0, 0.0, 50.0, 200.0);
        let r = match_detections(&[d(0.0, 0.0, 50.0, 200.0, 0.9)], &[g], &MatchParams::default());
        assert_eq!(r.counts(), MatchCounts { tp: 1, fp: 0, fn_: 0 });
    }

    #[test]
    fn duplicate_detection_is_false_positive() {
        // Each detection overlaps the GT with IoU 0.7: width 7 of 10 inside.
        let g = b(0.0, 0.0, 10.0, 10.0);
        let d1 = d(0.0, 0.0, 7.0, 10.0, 0.8);
        let d2 = d(3.0, 0.0, 10.0, 10.0, 0.9);
        assert!((iou(&d1.bbox, &g) - 0.7).abs() < 1e-12);
        let r = match_detections(&[d1, d2], &[g], &loose());
        assert_eq!(r.counts(), MatchCounts { tp: 1, fp: 1, fn_: 0 });
        assert_eq!(r.true_positives[0].0.score, 0.9);
        assert_eq!(r.false_positives[0].score, 0.8);
    }

    #[test]
    fn filters_apply() {
        let params = MatchParams {
            iou_min: 0.5,
            min_height: 100.0,
            score_min: 0.5,
        };
        let small_gt = b(0.0, 0.0, 10.0, 50.0);
        let big_gt = b(100.0, 0.0, 150.0, 150.0);
        let r = match_detections(
            &[
                d(0.0, 0.0, 10.0, 50.0, 0.9),     // dropped: short
                d(100.0, 0.0, 150.0, 150.0, 0.4), // dropped: low score
            ],
            &[small_gt, big_gt],
            &params,
        );
        assert_eq!(r.counts(), MatchCounts { tp: 0, fp: 0, fn_: 1 });
    }

    #[test]
    fn order_invariance_with_equal_scores() {
        let gts = [b(0.0, 0.0, 10.0, 10.0), b(4.0, 0.0, 14.0, 10.0)];
        let dets = [d(2.0, 0.0, 12.0, 10.0, 0.5), d(0.0, 0.0, 10.0, 10.0, 0.5)];
        let mut rev = dets;
        rev.reverse();
        assert_eq!(
            match_detections(&dets, &gts, &loose()),
            match_detections(&rev, &gts, &loose())
        );
    }

    #[test]
    fn precision_recall_conventions() {
        let empty = MatchCounts::default();
        assert_eq!((empty.precision(), empty.recall()), (1.0, 1.0));
        let missed = MatchCounts { tp: 0, fp: 0, fn_: 4 };
        assert_eq!((missed.precision(), missed.recall()), (1.0, 0.0));
    }

    #[test]
    fn perfect_detector_curve() {
        let mut images = ImageSet::default();
        for i in 0..3 {
            let g = b(0.0, 0.0, 10.0, 10.0 + i as f64);
            images.ground_truth.insert(format!("img{i}"), vec![g]);
            images
                .detections
                .insert(format!("img{i}"), vec![Detection::new(g, 1.0).unwrap()]);
        }
        for pt in pr_curve(&images, &default_thresholds(), 0.5, 0.0).unwrap() {
            assert_eq!((pt.precision, pt.recall), (1.0, 1.0));
        }
        assert!(pr_curve(&images, &[], 0.5, 0.0).is_err());
    }

    #[test]
    fn exact_line_fit() {
        let pairs: Vec<(u64, f64)> = (0..10).map(|n| (n, 0.5 * n as f64 + 0.2)).collect();
        let fit = fit_sensing_params(&pairs).unwrap();
        assert!((fit.p - 0.5).abs() < 1e-12);
        assert!((fit.lambda - 0.2).abs() < 1e-12);
        assert!(fit.stderr_p.unwrap() < 1e-9);
        assert!(fit.residual_sum_squares < 1e-20);
    }

    #[test]
    fn residuals_orthogonal_to_predictor() {
        let pairs = [(0, 0.0), (1, 2.0), (2, 1.0), (3, 4.0), (5, 2.0), (5, 3.0)];
        let fit = fit_sensing_params(&pairs).unwrap();
        let dot: f64 = pairs
            .iter()
            .map(|&(t, m)| (m - fit.p * t as f64 - fit.lambda) * t as f64)
            .sum();
        let sum: f64 = pairs.iter().map(|&(t, m)| m - fit.p * t as f64 - fit.lambda).sum();
        assert!(dot.abs() < 1e-9);
        assert!(sum.abs() < 1e-9);
    }

    #[test]
    fn rank_deficient_fit() {
        assert!(matches!(
            fit_sensing_params(&[(2, 1.0), (2, 3.0)]),
            Err(Error::RankDeficient)
        ));
        assert!(matches!(fit_sensing_params(&[]), Err(Error::RankDeficient)));
        let two = fit_sensing_params(&[(0, 1.0), (2, 2.0)]).unwrap();
        assert_eq!(two.stderr_p, None);
    }

    #[test]
    fn report_bound() {
        let fit = SensingFit {
            p: 0.54,
            lambda: 0.117,
            stderr_p: None,
            stderr_lambda: None,
            n: 0,
            residual_sum_squares: 0.0,
            max_abs_residual: 0.0,
        };
        let r = calibration_report(&fit, 0.587);
        assert!((r.error_bound.unwrap() - 0.0622).abs() < 1e-4);
        assert!((r.unbiased_h.unwrap() - 0.8704).abs() < 1e-4);

        let zero = calibration_report(&SensingFit { lambda: 0.0, ..fit }, 0.587);
        assert_eq!(zero.error_bound, Some(0.0));

        let flat = calibration_report(&SensingFit { lambda: 0.587, ..fit }, 0.587);
        assert!(!flat.bound_informative);
        assert_eq!(flat.error_bound, None);
    }

    #[test]
    fn csv_inputs() {
        let dets = "image_id,x_min,y_min,x_max,y_max,score\na,0,0,10,20,0.9\na,5,5,15,25,0.3\nb,1,1,2,2,1\n";
        let map = read_detections(dets.as_bytes()).unwrap();
        assert_eq!(map["a"].len(), 2);
        assert_eq!(map["b"][0].score, 1.0);

        let gts = "image_id,x_min,y_min,x_max,y_max\na,0,0,10,20\n";
        assert_eq!(read_ground_truth(gts.as_bytes()).unwrap()["a"].len(), 1);

        let bad = "image_id,x_min,y_min,x_max,y_max,score\na,0,0,10,20,0.9\na,5,5,1,25,0.3\n";
        assert!(matches!(
            read_detections(bad.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
        let missing = "image_id,x_min,y_min,x_max,y_max\na,0,0,10,20\n";
        assert!(read_detections(missing.as_bytes()).is_err());
    }
}
