//! Aggregate scores and inter-rater agreement for a completed study.
//!
//! Ratios that come from counts are kept as exact fractions ([`Ratio`]) so
//! the displayed two-decimal figures are rounded half-up from the exact
//! value rather than from a binary approximation.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::survey::{FavoriteImage, SurveyResponse};

/// Non-negative exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    pub const ZERO: Ratio = Ratio { num: 0, den: 1 };

    pub fn new(num: u64, den: u64) -> Self {
        assert!(den > 0, "zero denominator");
        Self { num, den }
    }

    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Decimal string rounded half-up at `dp` places.
    pub fn display(self, dp: u32) -> String {
        round_half_up_fraction(u128::from(self.num), u128::from(self.den), dp)
    }

    /// `100 * self`, rounded half-up at `dp` places.
    pub fn display_percent(self, dp: u32) -> String {
        round_half_up_fraction(u128::from(self.num) * 100, u128::from(self.den), dp)
    }
}

fn round_half_up_fraction(num: u128, den: u128, dp: u32) -> String {
    let scale = 10u128.pow(dp);
    let scaled = num * scale;
    let mut q = scaled / den;
    if 2 * (scaled % den) >= den {
        q += 1;
    }
    let int = q / scale;
    if dp == 0 {
        return format!("{int}");
    }
    let frac = q % scale;
    format!("{int}.{frac:0width$}", width = dp as usize)
}

/// Half-up rounding for values that are not exact fractions (e.g. SDs).
pub fn round_half_up(value: f64, dp: u32) -> String {
    let scale = libm::pow(10.0, f64::from(dp));
    let rounded = libm::floor(value.abs() * scale + 0.5) / scale;
    format!("{:.*}", dp as usize, rounded.copysign(value))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("{0} requires at least one value")]
    Empty(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdConvention {
    /// Divisor n - 1.
    #[default]
    Sample,
    /// Divisor n.
    Population,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

/// Arithmetic mean and standard deviation. A single value has SD 0 under
/// either convention.
pub fn overall_mean_sd(values: &[f64], convention: SdConvention) -> Result<MeanSd, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::Empty("overall_mean_sd"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let divisor = match convention {
        SdConvention::Sample if n > 1 => (n - 1) as f64,
        SdConvention::Sample => 1.0,
        SdConvention::Population => n as f64,
    };
    Ok(MeanSd {
        mean,
        sd: libm::sqrt(ss / divisor),
        n,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingPair {
    pub item_id: String,
    /// Lower rater id first.
    pub first: SurveyResponse,
    pub second: SurveyResponse,
}

impl RatingPair {
    /// Orders the two responses canonically. `None` if they do not share an
    /// item or come from the same rater.
    pub fn new(a: SurveyResponse, b: SurveyResponse) -> Option<Self> {
        if a.item_id != b.item_id || a.rater_id == b.rater_id {
            return None;
        }
        let (first, second) = if a.rater_id < b.rater_id { (a, b) } else { (b, a) };
        Some(Self {
            item_id: first.item_id.clone(),
            first,
            second,
        })
    }

    pub fn swapped(&self) -> Self {
        Self {
            item_id: self.item_id.clone(),
            first: self.second.clone(),
            second: self.first.clone(),
        }
    }

    fn scores(&self, field: Field) -> (u8, u8) {
        match field {
            Field::Rating => (self.first.rating, self.second.rating),
            Field::Distinctiveness => (self.first.distinctiveness, self.second.distinctiveness),
        }
    }

    fn abs_diff(&self, field: Field) -> u8 {
        let (a, b) = self.scores(field);
        a.abs_diff(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Rating,
    Distinctiveness,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IncompleteItem {
    pub item_id: String,
    pub responses: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pairing {
    pub pairs: Vec<RatingPair>,
    pub incomplete: Vec<IncompleteItem>,
}

/// Groups responses by item; items with exactly two responses from
/// distinct raters become pairs, everything else is reported incomplete.
/// Output is ordered by item id.
pub fn pair_responses(responses: &[SurveyResponse]) -> Pairing {
    let mut by_item: BTreeMap<&str, Vec<&SurveyResponse>> = BTreeMap::new();
    for r in responses {
        by_item.entry(r.item_id.as_str()).or_default().push(r);
    }
    let mut out = Pairing::default();
    for (item, group) in by_item {
        let pair = match group.as_slice() {
            [a, b] => RatingPair::new((*a).clone(), (*b).clone()),
            _ => None,
        };
        match pair {
            Some(p) => out.pairs.push(p),
            None => out.incomplete.push(IncompleteItem {
                item_id: item.to_owned(),
                responses: group.len(),
            }),
        }
    }
    out
}

/// Mean over pairs of `|first - second|` for `field`.
pub fn irr_mean_abs_diff(pairs: &[RatingPair], field: Field) -> Result<Ratio, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("irr_mean_abs_diff"));
    }
    let sum: u64 = pairs.iter().map(|p| u64::from(p.abs_diff(field))).sum();
    Ok(Ratio::new(sum, pairs.len() as u64))
}

/// Fraction of pairs whose scores differ by at most one point.
pub fn irr_within_one(pairs: &[RatingPair], field: Field) -> Result<Ratio, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("irr_within_one"));
    }
    let within = pairs.iter().filter(|p| p.abs_diff(field) <= 1).count() as u64;
    Ok(Ratio::new(within, pairs.len() as u64))
}

/// Fraction of pairs whose Q3 choices match; `none` matches `none`.
pub fn favorite_agreement(pairs: &[RatingPair]) -> Result<Ratio, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::Empty("favorite_agreement"));
    }
    let agree = pairs
        .iter()
        .filter(|p| p.first.favorite_image_id == p.second.favorite_image_id)
        .count() as u64;
    Ok(Ratio::new(agree, pairs.len() as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FavoriteShare {
    pub category: FavoriteImage,
    pub count: u64,
    /// Full precision, 0..=100.
    pub percent: f64,
    /// Rounded half-up to two decimals.
    pub percent_display: String,
}

/// Q3 counts over all responses, every category present (1, 2, 3, none).
pub fn favorite_distribution(responses: &[SurveyResponse]) -> Vec<FavoriteShare> {
    let total = responses.len() as u64;
    FavoriteImage::ALL
        .iter()
        .map(|&category| {
            let count = responses.iter().filter(|r| r.favorite_image_id == category).count() as u64;
            let share = if total == 0 { Ratio::ZERO } else { Ratio::new(count, total) };
            FavoriteShare {
                category,
                count,
                percent: share.to_f64() * 100.0,
                percent_display: share.display_percent(2),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemAggregate {
    pub item_id: String,
    pub mean_rating: f64,
    pub mean_distinctiveness: f64,
    pub abs_diff_rating: u8,
    pub abs_diff_distinctiveness: u8,
    pub favorite_agreement: bool,
}

impl ItemAggregate {
    pub fn from_pair(pair: &RatingPair) -> Self {
        let (r1, r2) = pair.scores(Field::Rating);
        let (d1, d2) = pair.scores(Field::Distinctiveness);
        Self {
            item_id: pair.item_id.clone(),
            mean_rating: f64::from(r1 + r2) / 2.0,
            mean_distinctiveness: f64::from(d1 + d2) / 2.0,
            abs_diff_rating: r1.abs_diff(r2),
            abs_diff_distinctiveness: d1.abs_diff(d2),
            favorite_agreement: pair.first.favorite_image_id == pair.second.favorite_image_id,
        }
    }
}

/// Raw counts behind the agreement figures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IrrCounts {
    pub pairs: u64,
    pub rating_abs_diff_sum: u64,
    pub rating_within_one: u64,
    pub distinct_abs_diff_sum: u64,
    pub distinct_within_one: u64,
    pub favorite_agreements: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IrrSummary {
    pub rating_mean_abs_diff: f64,
    pub rating_within_one_pct: f64,
    pub distinct_mean_abs_diff: f64,
    pub distinct_within_one_pct: f64,
    pub favorite_agreement_pct: f64,
}

pub const HISTOGRAM_BINS: usize = 8;

/// Per-item mean ratings binned at width 0.5 over [1, 5]; the last bin is
/// closed on the right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let edges = (0..=HISTOGRAM_BINS).map(|i| 1.0 + 0.5 * i as f64).collect();
        let mut counts = alloc::vec![0u64; HISTOGRAM_BINS];
        for v in values {
            counts[histogram_bin(v)] += 1;
        }
        Self { edges, counts }
    }
}

pub fn histogram_bin(value: f64) -> usize {
    let raw = libm::floor((value - 1.0) * 2.0);
    if raw < 0.0 {
        0
    } else {
        (raw as usize).min(HISTOGRAM_BINS - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub item_id: String,
    pub mean_rating: f64,
    pub mean_distinctiveness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_items: usize,
    pub n_responses: usize,
    pub n_incomplete: usize,
    pub sd_convention: SdConvention,
    pub overall_style_match: MeanSd,
    pub overall_distinctiveness: MeanSd,
    pub favorite_distribution: Vec<FavoriteShare>,
    pub irr: IrrSummary,
    pub irr_counts: IrrCounts,
    pub histogram: Histogram,
    pub scatter: Vec<ScatterPoint>,
    pub items: Vec<ItemAggregate>,
    pub incomplete: Vec<IncompleteItem>,
}

pub fn build_report(responses: &[SurveyResponse], convention: SdConvention) -> EvaluationReport {
    let Pairing { pairs, incomplete } = pair_responses(responses);
    let items: Vec<ItemAggregate> = pairs.iter().map(ItemAggregate::from_pair).collect();
    let zero = MeanSd {
        mean: 0.0,
        sd: 0.0,
        n: 0,
    };
    let ratings: Vec<f64> = items.iter().map(|i| i.mean_rating).collect();
    let distinct: Vec<f64> = items.iter().map(|i| i.mean_distinctiveness).collect();
    let overall_style_match = overall_mean_sd(&ratings, convention).unwrap_or(zero);
    let overall_distinctiveness = overall_mean_sd(&distinct, convention).unwrap_or(zero);

    let mut counts = IrrCounts {
        pairs: pairs.len() as u64,
        ..IrrCounts::default()
    };
    for item in &items {
        counts.rating_abs_diff_sum += u64::from(item.abs_diff_rating);
        counts.distinct_abs_diff_sum += u64::from(item.abs_diff_distinctiveness);
        counts.rating_within_one += u64::from(item.abs_diff_rating <= 1);
        counts.distinct_within_one += u64::from(item.abs_diff_distinctiveness <= 1);
        counts.favorite_agreements += u64::from(item.favorite_agreement);
    }
    let irr = if pairs.is_empty() {
        IrrSummary::default()
    } else {
        let ratio = |n: u64| Ratio::new(n, counts.pairs).to_f64();
        IrrSummary {
            rating_mean_abs_diff: ratio(counts.rating_abs_diff_sum),
            rating_within_one_pct: 100.0 * ratio(counts.rating_within_one),
            distinct_mean_abs_diff: ratio(counts.distinct_abs_diff_sum),
            distinct_within_one_pct: 100.0 * ratio(counts.distinct_within_one),
            favorite_agreement_pct: 100.0 * ratio(counts.favorite_agreements),
        }
    };

    let scatter = items
        .iter()
        .map(|i| ScatterPoint {
            item_id: i.item_id.clone(),
            mean_rating: i.mean_rating,
            mean_distinctiveness: i.mean_distinctiveness,
        })
        .collect();

    EvaluationReport {
        n_items: items.len(),
        n_responses: responses.len(),
        n_incomplete: incomplete.len(),
        sd_convention: convention,
        overall_style_match,
        overall_distinctiveness,
        favorite_distribution: favorite_distribution(responses),
        irr,
        irr_counts: counts,
        histogram: Histogram::of(ratings.iter().copied()),
        scatter,
        items,
        incomplete,
    }
}

impl EvaluationReport {
    fn ratio(&self, num: u64) -> Ratio {
        if self.irr_counts.pairs == 0 {
            Ratio::ZERO
        } else {
            Ratio::new(num, self.irr_counts.pairs)
        }
    }

    /// Two-decimal (three for mean absolute differences) figures, rounded
    /// half-up from exact counts where possible.
    pub fn display(&self) -> ReportDisplay {
        let c = &self.irr_counts;
        ReportDisplay {
            style_match_mean: round_half_up(self.overall_style_match.mean, 2),
            style_match_sd: round_half_up(self.overall_style_match.sd, 2),
            distinctiveness_mean: round_half_up(self.overall_distinctiveness.mean, 2),
            distinctiveness_sd: round_half_up(self.overall_distinctiveness.sd, 2),
            favorite_percents: self
                .favorite_distribution
                .iter()
                .map(|s| (s.category, s.percent_display.clone()))
                .collect(),
            rating_mean_abs_diff: self.ratio(c.rating_abs_diff_sum).display(3),
            rating_within_one_pct: self.ratio(c.rating_within_one).display_percent(2),
            distinct_mean_abs_diff: self.ratio(c.distinct_abs_diff_sum).display(3),
            distinct_within_one_pct: self.ratio(c.distinct_within_one).display_percent(2),
            favorite_agreement_pct: self.ratio(c.favorite_agreements).display_percent(2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportDisplay {
    pub style_match_mean: String,
    pub style_match_sd: String,
    pub distinctiveness_mean: String,
    pub distinctiveness_sd: String,
    pub favorite_percents: Vec<(FavoriteImage, String)>,
    pub rating_mean_abs_diff: String,
    pub rating_within_one_pct: String,
    pub distinct_mean_abs_diff: String,
    pub distinct_within_one_pct: String,
    pub favorite_agreement_pct: String,
}

impl fmt::Display for ReportDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Overall style match (Q1):   mean {} (SD {})", self.style_match_mean, self.style_match_sd)?;
        writeln!(
            f,
            "Visual distinctiveness (Q4): mean {} (SD {})",
            self.distinctiveness_mean, self.distinctiveness_sd
        )?;
        write!(f, "Favorite image (Q3):")?;
        for (category, pct) in &self.favorite_percents {
            match category {
                FavoriteImage::None => write!(f, " none {pct}%")?,
                other => write!(f, " image {} {pct}%", other.as_str())?,
            }
        }
        writeln!(f)?;
        writeln!(
            f,
            "IRR Q1: mean |diff| {}, within +-1 {}%",
            self.rating_mean_abs_diff, self.rating_within_one_pct
        )?;
        writeln!(
            f,
            "IRR Q4: mean |diff| {}, within +-1 {}%",
            self.distinct_mean_abs_diff, self.distinct_within_one_pct
        )?;
        write!(f, "IRR Q3: favorite agreement {}%", self.favorite_agreement_pct)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::Q2Pair;
    use alloc::vec;

    fn resp(id: u64, rater: &str, item: &str, rating: u8, distinct: u8, fav: FavoriteImage) -> SurveyResponse {
        SurveyResponse {
            id,
            rater_id: rater.into(),
            item_id: item.into(),
            rating,
            q2_elements: [Q2Pair::default(), Q2Pair::default()],
            favorite_image_id: fav,
            favorite_justification: String::new(),
            distinctiveness: distinct,
            submitted_at: String::new(),
        }
    }

    fn pair(r: (u8, u8), d: (u8, u8), f: (FavoriteImage, FavoriteImage)) -> RatingPair {
        RatingPair::new(resp(1, "a", "i", r.0, d.0, f.0), resp(2, "b", "i", r.1, d.1, f.1)).unwrap()
    }

    #[test]
    fn fraction_rounding() {
        assert_eq!(Ratio::new(36, 49).display(3), "0.735");
        assert_eq!(Ratio::new(59, 49).display(3), "1.204");
        assert_eq!(Ratio::new(44, 49).display_percent(2), "89.80");
        assert_eq!(Ratio::new(31, 49).display_percent(2), "63.27");
        assert_eq!(Ratio::new(20, 49).display_percent(2), "40.82");
        assert_eq!(Ratio::new(1, 8).display(2), "0.13");
        assert_eq!(Ratio::new(0, 5).display_percent(2), "0.00");
        assert_eq!(Ratio::new(7, 7).display_percent(2), "100.00");
        assert_eq!(round_half_up(0.70710678, 4), "0.7071");
        assert_eq!(round_half_up(2.5, 0), "3");
    }

    #[test]
    fn constant_list_has_zero_sd() {
        let m = overall_mean_sd(&[3.0, 3.0, 3.0], SdConvention::Sample).unwrap();
        assert_eq!((m.mean, m.sd), (3.0, 0.0));
    }

    #[test]
    fn two_point_sample_sd() {
        let m = overall_mean_sd(&[4.5, 3.5], SdConvention::Sample).unwrap();
        assert!((m.mean - 4.0).abs() < 1e-12);
        // |a-b| / sqrt(2)
        assert!((m.sd - 1.0 / core::f64::consts::SQRT_2).abs() < 1e-12);
        let p = overall_mean_sd(&[4.5, 3.5], SdConvention::Population).unwrap();
        assert!((p.sd - 0.5).abs() < 1e-12);
        assert_eq!(overall_mean_sd(&[], SdConvention::Sample), Err(MetricsError::Empty("overall_mean_sd")));
    }

    #[test]
    fn favorite_percentages() {
        let mut rs = Vec::new();
        let mut id = 0;
        for (fav, n) in [(FavoriteImage::Image1, 33), (FavoriteImage::Image2, 27), (FavoriteImage::Image3, 38)] {
            for _ in 0..n {
                id += 1;
                rs.push(resp(id, "r", "i", 3, 3, fav));
            }
        }
        let d = favorite_distribution(&rs);
        let shown: Vec<&str> = d.iter().map(|s| s.percent_display.as_str()).collect();
        assert_eq!(shown, vec!["33.67", "27.55", "38.78", "0.00"]);
        assert_eq!(d.iter().map(|s| s.count).sum::<u64>(), 98);

        let one = favorite_distribution(&[resp(1, "r", "i", 3, 3, FavoriteImage::None)]);
        assert_eq!(one[3].percent_display, "100.00");

        let uniform: Vec<_> = (0..9)
            .map(|i| resp(i, "r", "i", 3, 3, FavoriteImage::ALL[(i % 3) as usize]))
            .collect();
        let u = favorite_distribution(&uniform);
        assert_eq!(u[0].percent, u[1].percent);
        assert_eq!(u[1].percent, u[2].percent);
        assert_eq!(u[3].count, 0);
    }

    #[test]
    fn agreement_edge_cases() {
        use FavoriteImage::*;
        let same = vec![pair((3, 3), (2, 2), (Image1, Image1)); 4];
        assert_eq!(irr_mean_abs_diff(&same, Field::Rating).unwrap(), Ratio::new(0, 4));
        assert_eq!(irr_within_one(&same, Field::Rating).unwrap().display_percent(2), "100.00");
        assert_eq!(favorite_agreement(&same).unwrap().to_f64(), 1.0);
        let split = [pair((3, 3), (2, 2), (Image1, None))];
        assert_eq!(favorite_agreement(&split).unwrap().num, 0);
        let both_none = [pair((3, 3), (2, 2), (None, None))];
        assert_eq!(favorite_agreement(&both_none).unwrap().num, 1);
        assert!(irr_mean_abs_diff(&[], Field::Rating).is_err());
        assert!(irr_within_one(&[], Field::Distinctiveness).is_err());
        assert!(favorite_agreement(&[]).is_err());
    }

    #[test]
    fn pairing_reports_incomplete() {
        use FavoriteImage::*;
        let rs = vec![
            resp(1, "r1", "a", 4, 3, Image1),
            resp(2, "r2", "a", 5, 4, Image2),
            resp(3, "r1", "b", 4, 3, Image1),
        ];
        let p = pair_responses(&rs);
        assert_eq!(p.pairs.len(), 1);
        assert_eq!(p.incomplete, vec![IncompleteItem { item_id: "b".into(), responses: 1 }]);
        assert_eq!(p.pairs[0].first.rater_id, "r1");
        assert!(pair_responses(&[]).pairs.is_empty());
    }

    #[test]
    fn histogram_bins() {
        assert_eq!(histogram_bin(1.0), 0);
        assert_eq!(histogram_bin(1.5), 1);
        assert_eq!(histogram_bin(4.5), 7);
        assert_eq!(histogram_bin(5.0), 7);
        let h = Histogram::of([1.0, 2.0, 4.5, 5.0]);
        assert_eq!(h.edges.len(), 9);
        assert_eq!(h.counts, vec![1, 0, 1, 0, 0, 0, 0, 2]);
    }

    #[test]
    fn empty_report_is_zeroed() {
        let r = build_report(&[], SdConvention::Sample);
        assert_eq!(r.n_items, 0);
        assert_eq!(r.n_responses, 0);
        assert!(r.scatter.is_empty());
        assert_eq!(r.histogram.counts.iter().sum::<u64>(), 0);
        assert_eq!(r.irr, IrrSummary::default());
        let d = r.display();
        assert_eq!(d.style_match_mean, "0.00");
        assert_eq!(d.favorite_agreement_pct, "0.00");
    }
}
