//! Cell-level building blocks of the preprocessing schemas.

use std::collections::HashMap;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use super::TransformError;

/// Joins the four merchant fields of a `Location`. U+241F never occurs in
/// the source data; an input containing it is rejected.
pub const LOCATION_SEPARATOR: char = '\u{241F}';

pub fn assemble_datetime(
    year: &str,
    month: &str,
    day: &str,
    time: &str,
) -> Result<NaiveDateTime, TransformError> {
    let bad_date = || TransformError::BadDate(format!("{year}-{month}-{day}"));
    let y: i32 = year.trim().parse().map_err(|_| bad_date())?;
    let m: u32 = month.trim().parse().map_err(|_| bad_date())?;
    let d: u32 = day.trim().parse().map_err(|_| bad_date())?;
    let date = NaiveDate::from_ymd_opt(y, m, d).ok_or_else(bad_date)?;
    let t = NaiveTime::parse_from_str(time.trim(), "%H:%M")
        .map_err(|_| TransformError::BadTime(time.to_string()))?;
    Ok(date.and_time(t))
}

/// Inverse of [`assemble_datetime`]: `(year, month, day, "HH:MM")`.
pub fn split_datetime(t: &NaiveDateTime, pad_month_day: bool) -> (String, String, String, String) {
    let (month, day) = if pad_month_day {
        (format!("{:02}", t.month()), format!("{:02}", t.day()))
    } else {
        (t.month().to_string(), t.day().to_string())
    };
    (
        t.year().to_string(),
        month,
        day,
        format!("{:02}:{:02}", t.hour(), t.minute()),
    )
}

/// Parses `$` + optional sign + plain decimal, e.g. `$134.09` or `$-52.00`.
pub fn parse_amount(raw: &str) -> Result<f64, TransformError> {
    let bad = || TransformError::BadAmount(raw.to_string());
    let body = raw.strip_prefix('$').ok_or_else(bad)?;
    let digits = body.strip_prefix(['-', '+']).unwrap_or(body);
    let (int, frac) = digits.split_once('.').unwrap_or((digits, ""));
    let plain = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if int.is_empty() || !plain(int) || !plain(frac) || (digits.contains('.') && frac.is_empty()) {
        return Err(bad());
    }
    body.parse().map_err(|_| bad())
}

pub fn format_amount(x: f64) -> String {
    format!("${x:.2}")
}

pub fn merge_location(name: &str, city: &str, state: &str, zip: &str) -> Result<String, TransformError> {
    let parts = [name, city, state, zip];
    if let Some(p) = parts.iter().find(|p| p.contains(LOCATION_SEPARATOR)) {
        return Err(TransformError::SeparatorCollision(p.to_string()));
    }
    Ok(parts.join(&LOCATION_SEPARATOR.to_string()))
}

pub fn split_location(location: &str) -> Result<[String; 4], TransformError> {
    let parts: Vec<&str> = location.split(LOCATION_SEPARATOR).collect();
    match parts.as_slice() {
        [a, b, c, d] => Ok([a.to_string(), b.to_string(), c.to_string(), d.to_string()]),
        _ => Err(TransformError::BadLocation(location.to_string())),
    }
}

/// Category ↔ contiguous integer code, codes assigned in first-occurrence
/// order. Codes travel as strings so the column stays categorical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "LabelMapRepr", into = "LabelMapRepr")]
pub struct LabelMap {
    pub column: String,
    backward: Vec<String>,
    forward: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct LabelMapRepr {
    column: String,
    categories: Vec<String>,
}

impl From<LabelMapRepr> for LabelMap {
    fn from(r: LabelMapRepr) -> Self {
        LabelMap::from_vocabulary(r.column, r.categories)
    }
}

impl From<LabelMap> for LabelMapRepr {
    fn from(m: LabelMap) -> Self {
        LabelMapRepr {
            column: m.column,
            categories: m.backward,
        }
    }
}

impl LabelMap {
    /// `vocabulary` must already be duplicate-free; later duplicates are ignored.
    pub fn from_vocabulary(column: impl Into<String>, vocabulary: Vec<String>) -> Self {
        let mut forward = HashMap::with_capacity(vocabulary.len());
        let mut backward = Vec::with_capacity(vocabulary.len());
        for v in vocabulary {
            if !forward.contains_key(&v) {
                forward.insert(v.clone(), backward.len());
                backward.push(v);
            }
        }
        LabelMap {
            column: column.into(),
            backward,
            forward,
        }
    }

    pub fn fit<'a>(column: impl Into<String>, values: impl IntoIterator<Item = &'a str>) -> Self {
        let vocab: indexmap::IndexSet<&str> = values.into_iter().collect();
        Self::from_vocabulary(column, vocab.into_iter().map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }

    pub fn categories(&self) -> &[String] {
        &self.backward
    }

    pub fn code(&self, value: &str) -> Option<usize> {
        self.forward.get(value).copied()
    }

    pub fn encode(&self, value: &str) -> Result<String, TransformError> {
        self.code(value)
            .map(|c| c.to_string())
            .ok_or_else(|| TransformError::UnseenCategory {
                column: self.column.clone(),
                value: value.to_string(),
            })
    }

    pub fn decode(&self, code: &str) -> Result<String, TransformError> {
        code.parse::<usize>()
            .ok()
            .and_then(|c| self.backward.get(c))
            .cloned()
            .ok_or_else(|| TransformError::UnseenCategory {
                column: self.column.clone(),
                value: code.to_string(),
            })
    }
}

fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

/// Equal-frequency bins over `sign(x)·ln(1+|x|)`.
///
/// `edges` holds the fitted minimum, the interior boundaries and the fitted
/// maximum in signed-log space; a value lands in the bin of the last interior
/// edge not above it, so out-of-range values clamp to the end bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBinning {
    pub column: String,
    pub bins: usize,
    pub edges: Vec<f64>,
    /// Median of the training values falling in each bin, in original units.
    pub representatives: Vec<f64>,
}

impl QuantileBinning {
    pub fn fit(column: impl Into<String>, values: &[f64], bins: usize) -> Result<Self, TransformError> {
        let column = column.into();
        let mut u: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).map(signed_log).collect();
        u.sort_by(f64::total_cmp);
        if bins == 0 || u.is_empty() || u[0] == u[u.len() - 1] {
            return Err(TransformError::DegenerateFit(column));
        }
        let n = u.len();
        let mut edges = vec![u[0]];
        for b in 1..bins {
            // first element of the b-th equal-frequency block
            let idx = (b * n).div_ceil(bins);
            if idx < n && u[idx] > *edges.last().expect("non-empty") {
                edges.push(u[idx]);
            }
        }
        edges.push(u[n - 1]);
        let mut binning = QuantileBinning {
            column,
            bins: edges.len() - 1,
            edges,
            representatives: Vec::new(),
        };

        let mut members: Vec<Vec<f64>> = vec![Vec::new(); binning.bins];
        for &x in values.iter().filter(|x| x.is_finite()) {
            members[binning.bin(x)].push(x);
        }
        binning.representatives = members
            .into_iter()
            .map(|mut m| {
                m.sort_by(f64::total_cmp);
                let k = m.len();
                if k % 2 == 1 {
                    m[k / 2]
                } else {
                    0.5 * (m[k / 2 - 1] + m[k / 2])
                }
            })
            .collect();
        Ok(binning)
    }

    pub fn bin(&self, x: f64) -> usize {
        let u = signed_log(x);
        let interior = &self.edges[1..self.edges.len() - 1];
        interior.partition_point(|&e| e <= u)
    }

    pub fn representative(&self, bin: usize) -> Option<f64> {
        self.representatives.get(bin).copied()
    }
}

/// Z-scoring with the population standard deviation, then a signed cube root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub column: String,
    pub mean: f64,
    pub std: f64,
}

impl StandardizationStats {
    pub fn fit(column: impl Into<String>, values: &[f64]) -> Result<Self, TransformError> {
        let column = column.into();
        let n = values.len() as f64;
        if values.is_empty() {
            return Err(TransformError::DegenerateFit(column));
        }
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if !(std > 0.0) {
            return Err(TransformError::DegenerateFit(column));
        }
        Ok(StandardizationStats { column, mean, std })
    }

    pub fn forward(&self, x: f64) -> f64 {
        ((x - self.mean) / self.std).cbrt()
    }

    pub fn inverse(&self, y: f64) -> f64 {
        self.mean + self.std * y * y * y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn datetime_assembly_and_split() {
        let t = assemble_datetime("2015", "7", "4", "13:05").unwrap();
        assert_eq!(t.to_string(), "2015-07-04 13:05:00");
        assert_eq!(
            split_datetime(&t, false),
            ("2015".into(), "7".into(), "4".into(), "13:05".into())
        );
        assert_eq!(split_datetime(&t, true).1, "07");
    }

    #[test]
    fn invalid_dates_and_times() {
        assert!(matches!(
            assemble_datetime("2015", "2", "30", "09:00"),
            Err(TransformError::BadDate(_))
        ));
        assert!(matches!(
            assemble_datetime("2015", "13", "1", "09:00"),
            Err(TransformError::BadDate(_))
        ));
        assert!(matches!(
            assemble_datetime("2015", "1", "1", "25:00"),
            Err(TransformError::BadTime(_))
        ));
    }

    #[test]
    fn amounts() {
        assert_eq!(parse_amount("$134.09").unwrap(), 134.09);
        assert_eq!(parse_amount("$-52.00").unwrap(), -52.0);
        assert_eq!(parse_amount("$7").unwrap(), 7.0);
        for bad in ["134.09", "$", "$1e3", "$inf", "$1.", "$ 3", "$--1"] {
            assert!(matches!(parse_amount(bad), Err(TransformError::BadAmount(_))), "{bad}");
        }
        assert_eq!(format_amount(-52.0), "$-52.00");
        assert_eq!(format_amount(134.09), "$134.09");
    }

    #[test]
    fn location_merge_and_split() {
        let merged = merge_location("12345", "La Verne", "CA", "91750").unwrap();
        assert_eq!(merged, "12345\u{241F}La Verne\u{241F}CA\u{241F}91750");
        assert_eq!(
            split_location(&merged).unwrap(),
            ["12345", "La Verne", "CA", "91750"].map(String::from)
        );
        assert!(matches!(
            merge_location("a\u{241F}b", "c", "d", "e"),
            Err(TransformError::SeparatorCollision(_))
        ));
        assert!(split_location("no separator").is_err());
    }

    #[test]
    fn label_codes_follow_first_occurrence() {
        let map = LabelMap::fit(
            "Use Chip",
            ["Swipe Transaction", "Chip Transaction", "Swipe Transaction", "Online Transaction"],
        );
        assert_eq!(map.encode("Chip Transaction").unwrap(), "1");
        for v in map.categories() {
            assert_eq!(&map.decode(&map.encode(v).unwrap()).unwrap(), v);
        }
        assert!(matches!(map.decode("3"), Err(TransformError::UnseenCategory { .. })));
        assert!(map.encode("Contactless").is_err());
        let json = serde_json::to_string(&map).unwrap();
        let back: LabelMap = serde_json::from_str(&json).unwrap();
        assert_eq!(back, map);
    }

    /// Equal-frequency assignment by rank, written independently of the
    /// edge search.
    fn rank_oracle(fit: &[f64], bins: usize, x: f64) -> usize {
        let mut sorted = fit.to_vec();
        sorted.sort_by(f64::total_cmp);
        let rank = sorted.iter().position(|&v| v == x).unwrap();
        rank * bins / sorted.len()
    }

    #[test]
    fn quantile_bins_on_one_to_hundred() {
        let fit: Vec<f64> = (1..=100).map(f64::from).collect();
        let q = QuantileBinning::fit("Amount", &fit, 10).unwrap();
        assert_eq!(q.edges.len(), 11);
        assert!(q.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(q.bin(5.0), 0);
        assert_eq!(q.bin(95.0), 9);
        for &x in &fit {
            assert_eq!(q.bin(x), rank_oracle(&fit, 10, x), "value {x}");
        }
        assert_eq!(q.bin(-1000.0), 0);
        assert_eq!(q.bin(1e9), 9);
        for b in 0..q.bins {
            assert_eq!(q.bin(q.representative(b).unwrap()), b);
        }
    }

    #[test]
    fn quantile_bins_tolerate_ties_and_negatives() {
        let fit = [-5.0, -5.0, 0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 2.0, 300.0];
        let q = QuantileBinning::fit("Amount", &fit, 10).unwrap();
        let k = q.edges.len();
        assert!(q.edges[..k - 1].windows(2).all(|w| w[0] < w[1]));
        assert!(q.edges[k - 2] <= q.edges[k - 1]);
        assert!(q.bins < 10);
        for b in 0..q.bins {
            assert_eq!(q.bin(q.representative(b).unwrap()), b);
        }
        assert!(matches!(
            QuantileBinning::fit("Amount", &[3.0; 8], 10),
            Err(TransformError::DegenerateFit(_))
        ));
    }

    #[test]
    fn cube_root_standardization() {
        let unit = StandardizationStats {
            column: "Amount".into(),
            mean: 0.0,
            std: 1.0,
        };
        assert_relative_eq!(unit.forward(8.0), 2.0, epsilon = 1e-12);
        assert_relative_eq!(unit.forward(-8.0), -2.0, epsilon = 1e-12);

        let s = StandardizationStats::fit("Amount", &[1.0, 2.0, 3.0]).unwrap();
        // independent: population variance of {1,2,3} is 2/3
        let std = (2.0f64 / 3.0).sqrt();
        assert_relative_eq!(s.mean, 2.0);
        assert_relative_eq!(s.std, std, epsilon = 1e-15);
        let z: f64 = 1.0 / std;
        assert_relative_eq!(s.forward(3.0), z.powf(1.0 / 3.0), epsilon = 1e-12);
        assert_relative_eq!(s.forward(3.0), 1.0699, epsilon = 1e-4);
        assert_relative_eq!(s.inverse(s.forward(-17.25)), -17.25, max_relative = 1e-12);
        assert!(StandardizationStats::fit("Amount", &[4.0, 4.0]).is_err());
    }
}
