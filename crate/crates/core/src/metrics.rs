//! Intensity-uniformity and overlap metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn roi_values(img: &Image, mask: &Mask, what: &str) -> Result<Vec<f64>> {
    let v = img.masked_values(mask)?;
    if v.is_empty() {
        return Err(Error::contract(format!("{what} mask is empty")));
    }
    Ok(v)
}

/// Coefficient of variation in percent, `100 * sigma / mu` with population
/// sigma over the region of interest.
pub fn cv(img: &Image, roi: &Mask) -> Result<f64> {
    let (mean, std) = mean_std(&roi_values(img, roi, "ROI")?);
    if mean == 0.0 {
        return Err(Error::UndefinedMetric("CV of a zero-mean region".into()));
    }
    Ok(100.0 * std / mean)
}

/// Ratio of foreground mean to background standard deviation.
pub fn snr(img: &Image, fg: &Mask, bg: &Mask) -> Result<f64> {
    let (mu, _) = mean_std(&roi_values(img, fg, "foreground")?);
    let (_, sigma) = mean_std(&roi_values(img, bg, "background")?);
    if sigma == 0.0 {
        return Err(Error::UndefinedMetric("SNR with a noiseless background".into()));
    }
    Ok(mu / sigma)
}

pub fn snr_db(ratio: f64) -> f64 {
    20.0 * ratio.log10()
}

fn counts(a: &Mask, b: &Mask) -> Result<(usize, usize, usize)> {
    if !a.same_shape(b) {
        return Err(Error::dim("masks differ in shape"));
    }
    let inter = a.data().iter().zip(b.data()).filter(|(&x, &y)| x && y).count();
    Ok((inter, a.count(), b.count()))
}

/// `2|A n B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * i as f64 / (na + nb) as f64
    })
}

/// `|A n B| / |A u B|`; 1 when both masks are empty.
pub fn iou(a: &Mask, b: &Mask) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// `|P n G| / |P|`. An empty prediction scores 1 against an empty truth and
/// 0 otherwise.
pub fn ppv(pred: &Mask, truth: &Mask) -> Result<f64> {
    let (i, np, ng) = counts(pred, truth)?;
    Ok(match (np, ng) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        _ => i as f64 / np as f64,
    })
}

/// Pearson correlation of two equally long samples.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::dim("pearson needs two samples of equal length >= 2"));
    }
    let (ma, _) = mean_std(a);
    let (mb, _) = mean_std(b);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a constant sample".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Otsu threshold over a 256-bin histogram of the slice's range.
pub fn otsu_threshold(img: &Image) -> f64 {
    const BINS: usize = 256;
    let (lo, hi) = img.min_max();
    if !(hi > lo) {
        return lo;
    }
    let width = (hi - lo) / BINS as f64;
    let mut hist = [0usize; BINS];
    for &v in img.data() {
        let b = (((v - lo) / width) as usize).min(BINS - 1);
        hist[b] += 1;
    }
    let total = img.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_bin) = (-1.0, 0);
    for (i, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += i as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1).powi(2);
        if between > best {
            best = between;
            best_bin = i;
        }
    }
    lo + (best_bin as f64 + 1.0) * width
}

/// Foreground (above Otsu) and background (at or below) masks.
pub fn otsu_masks(img: &Image) -> (Mask, Mask) {
    let t = otsu_threshold(img);
    let fg = Mask::from_fn(img.height(), img.width(), |y, x| img.get(y, x) > t);
    let bg = Mask::from_fn(img.height(), img.width(), |y, x| img.get(y, x) <= t);
    (fg, bg)
}

/// One row of an evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub id: String,
    pub cv_before: f64,
    pub cv_after: f64,
    /// `None` when the background is noiseless.
    pub snr_before: Option<f64>,
    pub snr_after: Option<f64>,
}

impl MetricRecord {
    pub fn evaluate(id: &str, before: &Image, after: &Image, fg: &Mask, bg: &Mask) -> Result<Self> {
        Ok(MetricRecord {
            id: id.to_string(),
            cv_before: cv(before, fg)?,
            cv_after: cv(after, fg)?,
            snr_before: snr(before, fg, bg).ok(),
            snr_after: snr(after, fg, bg).ok(),
        })
    }
}

/// Means over rows; SNR means skip undefined entries.
pub fn aggregate(rows: &[MetricRecord]) -> MetricRecord {
    let n = rows.len().max(1) as f64;
    let opt_mean = |f: &dyn Fn(&MetricRecord) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(f).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    MetricRecord {
        id: "mean".into(),
        cv_before: rows.iter().map(|r| r.cv_before).sum::<f64>() / n,
        cv_after: rows.iter().map(|r| r.cv_after).sum::<f64>() / n,
        snr_before: opt_mean(&|r| r.snr_before),
        snr_after: opt_mean(&|r| r.snr_after),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(h: usize, w: usize, on: &[usize]) -> Mask {
        Mask::new(h, w, (0..h * w).map(|i| on.contains(&i)).collect()).unwrap()
    }

    #[test]
    fn cv_cases() {
        let all = mask(1, 2, &[0, 1]);
        assert_eq!(cv(&Image::new(1, 2, vec![1.0, 3.0]).unwrap(), &all).unwrap(), 50.0);
        assert_eq!(cv(&Image::filled(1, 2, 4.0), &all).unwrap(), 0.0);
        assert!(matches!(cv(&Image::zeros(1, 2), &all), Err(Error::UndefinedMetric(_))));
        assert!(cv(&Image::zeros(1, 2), &mask(1, 2, &[])).is_err());
    }

    #[test]
    fn snr_cases() {
        let img = Image::new(1, 4, vec![10.0, 10.0, 1.0, 3.0]).unwrap();
        let fg = mask(1, 4, &[0, 1]);
        let bg = mask(1, 4, &[2, 3]);
        assert_eq!(snr(&img, &fg, &bg).unwrap(), 10.0);
        let flat = Image::new(1, 4, vec![10.0, 10.0, 0.0, 0.0]).unwrap();
        assert!(matches!(snr(&flat, &fg, &bg), Err(Error::UndefinedMetric(_))));
        assert!((snr_db(10.0) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_cases() {
        let a = mask(2, 4, &[0, 1, 2, 3]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(ppv(&a, &a).unwrap(), 1.0);
        let b = mask(2, 4, &[4, 5, 6, 7]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(ppv(&a, &b).unwrap(), 0.0);
        let c = mask(2, 4, &[2, 3, 4, 5]);
        assert_eq!(dice(&a, &c).unwrap(), 0.5);
        assert!((iou(&a, &c).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(ppv(&a, &c).unwrap(), 0.5);
        let e = mask(2, 4, &[]);
        assert_eq!(
            (dice(&e, &e).unwrap(), iou(&e, &e).unwrap(), ppv(&e, &e).unwrap()),
            (1.0, 1.0, 1.0)
        );
        assert_eq!(ppv(&e, &a).unwrap(), 0.0);
        assert!(dice(&a, &mask(4, 2, &[])).is_err());
    }

    #[test]
    fn otsu_separates_two_levels() {
        let img = Image::from_fn(8, 8, |_, x| if x < 3 { 0.05 } else { 0.8 });
        let (fg, bg) = otsu_masks(&img);
        assert_eq!(fg.count(), 40);
        assert_eq!(bg.count(), 24);
        assert!(!fg.intersects(&bg));
    }

    #[test]
    fn pearson_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert!((pearson(&a, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&a, &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&a, &[1.0; 4]).is_err());
    }
}
