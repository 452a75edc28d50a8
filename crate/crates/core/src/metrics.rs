//! Evaluation metrics: MAE and cumulative score in rank-index units,
//! Pearson and Spearman correlation.

use serde::Serialize;

use crate::error::{CorfError, Result};

fn check_pair<T>(pred: &[T], truth: &[T]) -> Result<()> {
    if pred.is_empty() {
        return Err(CorfError::Empty("metric input"));
    }
    if pred.len() != truth.len() {
        return Err(CorfError::shape("metric input length", truth.len(), pred.len()));
    }
    Ok(())
}

fn abs_diff(a: usize, b: usize) -> usize {
    a.abs_diff(b)
}

/// Mean absolute error between rank indices.
pub fn mae(pred: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(pred, truth)?;
    let total: usize = pred.iter().zip(truth).map(|(&p, &t)| abs_diff(p, t)).sum();
    Ok(total as f64 / pred.len() as f64)
}

/// Fraction of samples within `level` ranks of the truth.
pub fn cs(pred: &[usize], truth: &[usize], level: usize) -> Result<f64> {
    check_pair(pred, truth)?;
    let hits = pred
        .iter()
        .zip(truth)
        .filter(|&(&p, &t)| abs_diff(p, t) <= level)
        .count();
    Ok(hits as f64 / pred.len() as f64)
}

/// Pearson linear correlation.
pub fn plcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CorfError::shape("correlation input length", a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(CorfError::UndefinedCorrelation("need at least two samples"));
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(CorfError::UndefinedCorrelation("zero variance"));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks, ties receiving the mean of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Spearman correlation: Pearson over average ranks.
pub fn srcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(CorfError::shape("correlation input length", a.len(), b.len()));
    }
    plcc(&average_ranks(a), &average_ranks(b))
}

/// Default cumulative-score levels.
pub const DEFAULT_CS_LEVELS: &[usize] = &[5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    /// Rank-index units.
    pub mae: f64,
    /// `mae · eta`.
    pub mae_label_units: f64,
    /// `(L, CS(L))` pairs in increasing `L`.
    pub cs: Vec<(usize, f64)>,
    /// `None` when either sequence has zero variance.
    pub plcc: Option<f64>,
    pub srcc: Option<f64>,
}

impl EvalReport {
    pub fn compute(pred: &[usize], truth: &[usize], eta: f64, cs_levels: &[usize]) -> Result<Self> {
        let mae = mae(pred, truth)?;
        let mut levels = cs_levels.to_vec();
        levels.sort_unstable();
        levels.dedup();
        let cs = levels
            .iter()
            .map(|&l| Ok((l, cs(pred, truth, l)?)))
            .collect::<Result<Vec<_>>>()?;
        let a: Vec<f64> = pred.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = truth.iter().map(|&v| v as f64).collect();
        let defined = |r: Result<f64>| -> Result<Option<f64>> {
            match r {
                Ok(v) => Ok(Some(v)),
                Err(CorfError::UndefinedCorrelation(_)) => Ok(None),
                Err(e) => Err(e),
            }
        };
        Ok(Self {
            n: pred.len(),
            mae,
            mae_label_units: mae * eta,
            cs,
            plcc: defined(plcc(&a, &b))?,
            srcc: defined(srcc(&a, &b))?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }

    /// Header for [`to_csv_row`](Self::to_csv_row): `n,mae,mae_label_units,cs_L...,plcc,srcc`.
    pub fn csv_header(&self) -> String {
        let mut cols = vec!["n".to_string(), "mae".into(), "mae_label_units".into()];
        cols.extend(self.cs.iter().map(|(l, _)| format!("cs_{l}")));
        cols.push("plcc".into());
        cols.push("srcc".into());
        cols.join(",")
    }

    /// Undefined correlations are written as empty fields.
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let mut cols = vec![self.n.to_string(), format!("{:?}", self.mae), format!("{:?}", self.mae_label_units)];
        cols.extend(self.cs.iter().map(|(_, v)| format!("{v:?}")));
        cols.push(opt(self.plcc));
        cols.push(opt(self.srcc));
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(mae(&[2, 3, 0], &[1, 2, 1]).unwrap(), 1.0);
        assert_eq!(mae(&[0, 1, 2, 1], &[0, 0, 0, 0]).unwrap(), 1.0);
        assert!(matches!(mae(&[], &[]), Err(CorfError::Empty(_))));
    }

    #[test]
    fn cs_examples() {
        assert_eq!(cs(&[4, 4], &[4, 4], 0).unwrap(), 1.0);
        assert_eq!(cs(&[0, 3, 6, 9], &[0, 0, 0, 0], 5).unwrap(), 0.5);
        assert_eq!(cs(&[0, 1, 1, 3], &[0, 1, 2, 3], 0).unwrap(), 0.75);
        assert!(cs(&[], &[], 1).is_err());
    }

    #[test]
    fn correlation_examples() {
        let a = [1.0, 4.0, 2.5, -3.0, 7.0];
        let b: Vec<f64> = a.iter().map(|x| 2.0 * x + 3.0).collect();
        assert!((plcc(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let rev: Vec<f64> = a.iter().map(|x| -x.powi(3)).collect();
        assert!((srcc(&a, &rev).unwrap() + 1.0).abs() < 1e-12);
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn correlation_errors() {
        assert!(matches!(plcc(&[1.0, 1.0], &[1.0, 2.0]), Err(CorfError::UndefinedCorrelation(_))));
        assert!(matches!(plcc(&[1.0], &[1.0]), Err(CorfError::UndefinedCorrelation(_))));
        assert!(plcc(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn report_fields() {
        let r = EvalReport::compute(&[0, 1, 2, 4], &[0, 1, 3, 3], 2.0, &[5, 0, 1]).unwrap();
        assert_eq!(r.n, 4);
        assert_eq!(r.mae, 0.5);
        assert_eq!(r.mae_label_units, 1.0);
        assert_eq!(r.cs, vec![(0, 0.5), (1, 1.0), (5, 1.0)]);
        assert_eq!(r.csv_header(), "n,mae,mae_label_units,cs_0,cs_1,cs_5,plcc,srcc");
        assert!(r.to_csv_row().starts_with("4,0.5,1.0,0.5,1.0,1.0,"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["mae"], 0.5);

        let flat = EvalReport::compute(&[0, 0], &[0, 1], 1.0, DEFAULT_CS_LEVELS).unwrap();
        assert_eq!(flat.plcc, None);
        assert!(flat.to_csv_row().ends_with(",,"));
    }

    proptest! {
        #[test]
        fn cs_monotone_and_reaches_one(pairs in proptest::collection::vec((0usize..10, 0usize..10), 1..50)) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let mut prev = 0.0;
            for l in 0..10 {
                let v = cs(&p, &t, l).unwrap();
                prop_assert!(v >= prev);
                prev = v;
            }
            prop_assert_eq!(cs(&p, &t, 9).unwrap(), 1.0);
        }

        #[test]
        fn correlations_bounded_and_invariant(
            a in proptest::collection::vec(-100.0f64..100.0, 3..40),
            scale in 0.1f64..10.0,
            shift in -50.0f64..50.0,
        ) {
            let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x.sin() * 10.0 + i as f64).collect();
            let (Ok(p), Ok(s)) = (plcc(&a, &b), srcc(&a, &b)) else { return Ok(()); };
            prop_assert!(p.abs() <= 1.0 + 1e-12 && s.abs() <= 1.0 + 1e-12);
            let a2: Vec<f64> = a.iter().map(|x| scale * x + shift).collect();
            prop_assert!((plcc(&a2, &b).unwrap() - p).abs() < 1e-9);
            prop_assert!((srcc(&a2, &b).unwrap() - s).abs() < 1e-12);
            let a3: Vec<f64> = a.iter().map(|x| x.powi(3) + x).collect();
            prop_assert!((srcc(&a3, &b).unwrap() - s).abs() < 1e-12);
        }
    }
}
