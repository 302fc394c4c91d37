//! Temporal action localization metrics: tIoU, AP/mAP at tIoU thresholds,
//! and per-class start/end boundary errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::DetectionSegment;
use crate::sim::{EventClass, EventSegment};

pub const DEFAULT_THRESHOLDS: [f64; 3] = [0.25, 0.5, 0.75];

/// A ground-truth event tagged with its trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtSegment {
    pub trial_id: u32,
    pub class: EventClass,
    pub start_s: f64,
    pub end_s: f64,
}

impl GtSegment {
    pub fn from_events(trial_id: u32, events: &[EventSegment]) -> Vec<Self> {
        events
            .iter()
            .map(|e| Self {
                trial_id,
                class: e.class,
                start_s: e.start_s,
                end_s: e.end_s,
            })
            .collect()
    }
}

/// Intersection over union of two intervals; 0 when they do not overlap.
pub fn tiou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = (a.1.min(b.1) - a.0.max(b.0)).max(0.0);
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if inter <= 0.0 || union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOutcome {
    /// Index into the detection slice.
    pub det: usize,
    /// Index into the ground-truth slice when this detection is a true positive.
    pub gt: Option<usize>,
}

/// Processing order: descending score, then earlier start, then lower trial id.
pub fn detection_order(dets: &[DetectionSegment]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&dets[i], &dets[j]);
        b.score
            .total_cmp(&a.score)
            .then(a.start_s.total_cmp(&b.start_s))
            .then(a.trial_id.cmp(&b.trial_id))
    });
    order
}

/// Greedy matching of one class. Each detection, in processing order, takes
/// the unmatched same-trial GT with the highest tIoU, if that tIoU ≥ `thr`.
/// Outcomes are returned in processing order.
pub fn match_detections(dets: &[DetectionSegment], gts: &[GtSegment], thr: f64) -> Vec<MatchOutcome> {
    let mut taken = vec![false; gts.len()];
    detection_order(dets)
        .into_iter()
        .map(|di| {
            let d = &dets[di];
            let mut best: Option<(usize, f64)> = None;
            for (gi, g) in gts.iter().enumerate() {
                if taken[gi] || g.trial_id != d.trial_id {
                    continue;
                }
                let iou = tiou((d.start_s, d.end_s), (g.start_s, g.end_s));
                if iou >= thr && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((gi, iou));
                }
            }
            if let Some((gi, _)) = best {
                taken[gi] = true;
            }
            MatchOutcome {
                det: di,
                gt: best.map(|b| b.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApResult {
    pub class: EventClass,
    pub threshold: f64,
    pub ap: f64,
    pub n_gt: usize,
    pub tp: usize,
    pub fp: usize,
}

/// AP of one class under the monotone precision envelope, integrated as a
/// step function over the recall increments. `None` when there is no GT.
pub fn average_precision(dets: &[DetectionSegment], gts: &[GtSegment], thr: f64) -> Option<f64> {
    ap_with_counts(dets, gts, thr).map(|(ap, _, _)| ap)
}

fn ap_with_counts(dets: &[DetectionSegment], gts: &[GtSegment], thr: f64) -> Option<(f64, usize, usize)> {
    if gts.is_empty() {
        return None;
    }
    let outcomes = match_detections(dets, gts, thr);
    let n_gt = gts.len() as f64;
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(outcomes.len());
    let mut is_tp = Vec::with_capacity(outcomes.len());
    for (k, o) in outcomes.iter().enumerate() {
        if o.gt.is_some() {
            tp += 1;
        }
        precision.push(tp as f64 / (k + 1) as f64);
        is_tp.push(o.gt.is_some());
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let ap = is_tp
        .iter()
        .zip(&precision)
        .filter(|(t, _)| **t)
        .map(|(_, p)| p / n_gt)
        .sum();
    Some((ap, tp, outcomes.len() - tp))
}

/// Mean of per-threshold mAPs.
pub fn avg_map(maps: &[f64]) -> f64 {
    maps.iter().sum::<f64>() / maps.len() as f64
}

/// Two-decimal percentage string, e.g. `0.7075 -> "70.75"`.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", 100.0 * fraction)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapResult {
    pub thresholds: Vec<f64>,
    pub per_class: Vec<ApResult>,
    /// Mean AP over included classes, one per threshold.
    pub map: Vec<f64>,
    pub avg_map: f64,
    /// Classes without ground truth, left out of every mean.
    pub excluded_classes: Vec<EventClass>,
}

pub fn map_at(dets: &[DetectionSegment], gts: &[GtSegment], thresholds: &[f64]) -> Result<MapResult> {
    if thresholds.is_empty() || thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
        return Err(Error::Validation(format!(
            "thresholds {thresholds:?} must lie in (0, 1]"
        )));
    }
    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    let mut map = vec![0.0; thresholds.len()];
    let mut n_included = 0;
    for class in EventClass::ALL {
        let g: Vec<GtSegment> = gts.iter().filter(|g| g.class == class).copied().collect();
        let d: Vec<DetectionSegment> = dets.iter().filter(|d| d.class == class).copied().collect();
        if g.is_empty() {
            excluded.push(class);
            continue;
        }
        n_included += 1;
        for (ti, &thr) in thresholds.iter().enumerate() {
            let (ap, tp, fp) = ap_with_counts(&d, &g, thr).expect("non-empty GT");
            map[ti] += ap;
            per_class.push(ApResult {
                class,
                threshold: thr,
                ap,
                n_gt: g.len(),
                tp,
                fp,
            });
        }
    }
    if n_included == 0 {
        return Err(Error::Validation("no ground-truth events to evaluate".into()));
    }
    for m in &mut map {
        *m /= n_included as f64;
    }
    Ok(MapResult {
        thresholds: thresholds.to_vec(),
        per_class,
        avg_map: avg_map(&map),
        map,
        excluded_classes: excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryErrorStats {
    pub class: EventClass,
    pub start_mean_s: f64,
    pub start_std_s: f64,
    pub end_mean_s: f64,
    pub end_std_s: f64,
    pub matched: usize,
    pub missed: usize,
}

fn mean_std(x: &[f64]) -> (f64, f64) {
    match x.len() {
        0 => (0.0, 0.0),
        1 => (x[0], 0.0),
        n => {
            let m = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (m, var.sqrt())
        }
    }
}

/// Per-class start/end errors. GTs are visited in start order; each takes the
/// unused same-trial detection with the highest positive tIoU.
pub fn boundary_errors(dets: &[DetectionSegment], gts: &[GtSegment]) -> Vec<BoundaryErrorStats> {
    EventClass::ALL
        .into_iter()
        .map(|class| {
            let mut g: Vec<&GtSegment> = gts.iter().filter(|g| g.class == class).collect();
            g.sort_by(|a, b| {
                a.start_s
                    .total_cmp(&b.start_s)
                    .then(a.trial_id.cmp(&b.trial_id))
                    .then(a.end_s.total_cmp(&b.end_s))
            });
            let d: Vec<&DetectionSegment> = dets.iter().filter(|d| d.class == class).collect();
            let mut used = vec![false; d.len()];
            let (mut ds, mut de) = (Vec::new(), Vec::new());
            let mut missed = 0;
            for gt in g {
                let mut best: Option<(usize, f64)> = None;
                for (i, det) in d.iter().enumerate() {
                    if used[i] || det.trial_id != gt.trial_id {
                        continue;
                    }
                    let iou = tiou((det.start_s, det.end_s), (gt.start_s, gt.end_s));
                    if iou > 0.0 && best.is_none_or(|(j, b)| iou > b || (iou == b && det.score > d[j].score)) {
                        best = Some((i, iou));
                    }
                }
                match best {
                    Some((i, _)) => {
                        used[i] = true;
                        ds.push((d[i].start_s - gt.start_s).abs());
                        de.push((d[i].end_s - gt.end_s).abs());
                    }
                    None => missed += 1,
                }
            }
            let (start_mean_s, start_std_s) = mean_std(&ds);
            let (end_mean_s, end_std_s) = mean_std(&de);
            BoundaryErrorStats {
                class,
                start_mean_s,
                start_std_s,
                end_mean_s,
                end_std_s,
                matched: ds.len(),
                missed,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfigEcho {
    pub thresholds: Vec<f64>,
    pub trials: Vec<u32>,
    pub n_gt: usize,
    pub n_detections: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub config: EvalConfigEcho,
    pub per_class: Vec<ApResult>,
    pub map: Vec<f64>,
    pub avg_map: f64,
    /// `map` as two-decimal percentages.
    pub map_pct: Vec<String>,
    pub avg_map_pct: String,
    pub excluded_classes: Vec<EventClass>,
    pub boundary_errors: Vec<BoundaryErrorStats>,
}

pub fn evaluate(
    dets: &[DetectionSegment],
    gts: &[GtSegment],
    thresholds: &[f64],
    trials: &[u32],
) -> Result<EvalReport> {
    let m = map_at(dets, gts, thresholds)?;
    Ok(EvalReport {
        config: EvalConfigEcho {
            thresholds: m.thresholds.clone(),
            trials: trials.to_vec(),
            n_gt: gts.len(),
            n_detections: dets.len(),
        },
        per_class: m.per_class,
        map_pct: m.map.iter().map(|&v| pct(v)).collect(),
        avg_map_pct: pct(m.avg_map),
        map: m.map,
        avg_map: m.avg_map,
        excluded_classes: m.excluded_classes,
        boundary_errors: boundary_errors(dets, gts),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gt(trial: u32, s: f64, e: f64) -> GtSegment {
        GtSegment {
            trial_id: trial,
            class: EventClass::GurneyEntering,
            start_s: s,
            end_s: e,
        }
    }

    fn det(trial: u32, s: f64, e: f64, score: f64) -> DetectionSegment {
        DetectionSegment {
            trial_id: trial,
            class: EventClass::GurneyEntering,
            start_s: s,
            end_s: e,
            score,
        }
    }

    #[test]
    fn tiou_fixtures() {
        assert_eq!(tiou((0.0, 10.0), (5.0, 15.0)), 5.0 / 15.0);
        assert_eq!(tiou((1.0, 2.0), (1.0, 2.0)), 1.0);
        assert_eq!(tiou((0.0, 1.0), (1.0, 2.0)), 0.0);
        assert_eq!(tiou((0.0, 1.0), (3.0, 4.0)), 0.0);
    }

    #[test]
    fn matching_rules() {
        let g = [gt(0, 0.0, 10.0)];
        let m = match_detections(&[det(0, 0.0, 10.0, 0.5)], &g, 0.5);
        assert_eq!(m[0].gt, Some(0));
        let m = match_detections(&[det(0, 0.0, 10.0, 0.5), det(0, 0.0, 10.0, 0.9)], &g, 0.5);
        assert_eq!(
            m,
            vec![MatchOutcome { det: 1, gt: Some(0) }, MatchOutcome { det: 0, gt: None }]
        );
        let m = match_detections(&[det(1, 0.0, 10.0, 0.5)], &g, 0.5);
        assert_eq!(m[0].gt, None);
        // Equal scores: earlier start goes first.
        let m = match_detections(&[det(0, 1.0, 10.0, 0.5), det(0, 0.0, 9.0, 0.5)], &g, 0.5);
        assert_eq!(m[0].det, 1);
    }

    #[test]
    fn ap_fixtures() {
        let g = [gt(0, 0.0, 10.0)];
        assert_eq!(average_precision(&[det(0, 0.0, 10.0, 1.0)], &g, 0.5), Some(1.0));
        // A: tIoU 0.6, B: tIoU 0.
        let a = det(0, 0.0, 6.0, 0.9);
        let b = det(0, 20.0, 30.0, 0.8);
        assert_eq!(tiou((a.start_s, a.end_s), (0.0, 10.0)), 0.6);
        assert_eq!(average_precision(&[a, b], &g, 0.5), Some(1.0));
        let g2 = [gt(0, 0.0, 10.0), gt(0, 20.0, 30.0)];
        let dets = [det(0, 0.0, 10.0, 0.9), det(0, 40.0, 50.0, 0.8), det(0, 20.0, 30.0, 0.7)];
        let ap = average_precision(&dets, &g2, 0.5).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-12);
        assert_eq!(average_precision(&dets, &[], 0.5), None);
        assert_eq!(average_precision(&[], &g2, 0.5), Some(0.0));
    }

    #[test]
    fn average_of_reported_maps() {
        assert_eq!(pct(avg_map(&[0.9352, 0.7564, 0.4309])), "70.75");
        assert_eq!(pct(avg_map(&[0.9244, 0.7946, 0.4689])), "72.93");
    }

    #[test]
    fn zero_gt_classes_are_excluded() {
        let g = [gt(0, 0.0, 10.0)];
        let extra = DetectionSegment {
            class: EventClass::PatientPreparation,
            ..det(0, 0.0, 5.0, 0.3)
        };
        let m = map_at(&[det(0, 0.0, 10.0, 0.9), extra], &g, &DEFAULT_THRESHOLDS).unwrap();
        assert_eq!(m.map, vec![1.0; 3]);
        assert_eq!(m.excluded_classes.len(), 4);
        assert!(map_at(&[], &[], &DEFAULT_THRESHOLDS).is_err());
        assert!(map_at(&[], &g, &[0.0]).is_err());
    }

    #[test]
    fn boundary_error_fixtures() {
        let g = [gt(0, 10.0, 20.0)];
        let stats = boundary_errors(&[det(0, 12.0, 19.0, 0.5)], &g);
        let s = stats[EventClass::GurneyEntering.index()];
        assert_eq!(
            (s.start_mean_s, s.end_mean_s, s.start_std_s, s.matched, s.missed),
            (2.0, 1.0, 0.0, 1, 0)
        );
        let s = boundary_errors(&[det(0, 30.0, 40.0, 0.5)], &g)[EventClass::GurneyEntering.index()];
        assert_eq!((s.matched, s.missed, s.start_mean_s), (0, 1, 0.0));
        let g2 = [gt(0, 0.0, 10.0), gt(0, 20.0, 30.0)];
        let d2 = [det(0, 1.0, 10.0, 0.5), det(0, 23.0, 30.0, 0.5)];
        let s = boundary_errors(&d2, &g2)[EventClass::GurneyEntering.index()];
        assert_eq!(s.start_mean_s, 2.0);
        assert!((s.start_std_s - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.end_std_s, 0.0);
    }

    /// Matching and AP written from the definitions with no shared code.
    fn oracle_ap(dets: &[DetectionSegment], gts: &[GtSegment], thr: f64) -> f64 {
        let mut remaining: Vec<usize> = (0..dets.len()).collect();
        let mut taken = vec![false; gts.len()];
        let mut flags = Vec::new();
        while !remaining.is_empty() {
            let mut pick = 0;
            for k in 1..remaining.len() {
                let (a, b) = (&dets[remaining[k]], &dets[remaining[pick]]);
                let better = a.score > b.score
                    || (a.score == b.score && a.start_s < b.start_s)
                    || (a.score == b.score && a.start_s == b.start_s && a.trial_id < b.trial_id);
                if better {
                    pick = k;
                }
            }
            let d = dets[remaining.remove(pick)];
            let cands: Vec<(usize, f64)> = gts
                .iter()
                .enumerate()
                .filter(|(gi, g)| !taken[*gi] && g.trial_id == d.trial_id)
                .map(|(gi, g)| {
                    let inter = (d.end_s.min(g.end_s) - d.start_s.max(g.start_s)).max(0.0);
                    let uni = d.end_s.max(g.end_s) - d.start_s.min(g.start_s);
                    let disjoint_union = (d.end_s - d.start_s) + (g.end_s - g.start_s);
                    let u = if inter > 0.0 { uni } else { disjoint_union };
                    (gi, inter / u)
                })
                .filter(|&(_, v)| v >= thr)
                .collect();
            let best = cands.iter().fold(None::<(usize, f64)>, |acc, &c| match acc {
                Some(a) if a.1 >= c.1 => Some(a),
                _ => Some(c),
            });
            if let Some((gi, _)) = best {
                taken[gi] = true;
            }
            flags.push(best.is_some());
        }
        let mut points = Vec::new();
        let mut tp = 0;
        for (k, f) in flags.iter().enumerate() {
            tp += *f as usize;
            points.push((tp as f64 / gts.len() as f64, tp as f64 / (k + 1) as f64));
        }
        let mut ap = 0.0;
        let mut prev_r = 0.0;
        for &(r, _) in &points {
            if r > prev_r {
                let p_interp = points.iter().filter(|q| q.0 >= r).map(|q| q.1).fold(0.0, f64::max);
                ap += (r - prev_r) * p_interp;
                prev_r = r;
            }
        }
        ap
    }

    fn small_instance() -> impl Strategy<Value = (Vec<DetectionSegment>, Vec<GtSegment>, f64)> {
        let seg = (0u32..2, 0u32..20, 1u32..10);
        let gts = prop::collection::vec(seg.clone(), 1..=4).prop_map(|v| {
            v.into_iter()
                .map(|(t, s, l)| gt(t, s as f64, (s + l) as f64))
                .collect::<Vec<_>>()
        });
        let dets = prop::collection::vec((seg, 0u32..5), 0..=8).prop_map(|v| {
            v.into_iter()
                .map(|((t, s, l), sc)| det(t, s as f64, (s + l) as f64, sc as f64 / 4.0))
                .collect::<Vec<_>>()
        });
        (dets, gts, prop::sample::select(vec![0.1, 0.25, 0.5, 0.75, 0.9]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1500))]

        #[test]
        fn ap_matches_oracle((dets, gts, thr) in small_instance()) {
            let ap = average_precision(&dets, &gts, thr).unwrap();
            prop_assert!((ap - oracle_ap(&dets, &gts, thr)).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn ap_ignores_score_scale((dets, gts, thr) in small_instance(), k in 0.01..100.0f64) {
            let scaled: Vec<_> = dets.iter().map(|d| DetectionSegment { score: d.score * k, ..*d }).collect();
            prop_assert_eq!(average_precision(&dets, &gts, thr), average_precision(&scaled, &gts, thr));
        }

        #[test]
        fn tiou_properties(a in 0.0..50.0f64, la in 0.01..20.0f64, b in 0.0..50.0f64, lb in 0.01..20.0f64) {
            let (x, y) = ((a, a + la), (b, b + lb));
            prop_assert_eq!(tiou(x, y), tiou(y, x));
            prop_assert_eq!(tiou(x, x), 1.0);
            prop_assert!((0.0..=1.0).contains(&tiou(x, y)));
        }
    }
}
