use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{Error, Result};

/// Number of label categories.
pub const NUM_CATEGORIES: usize = 14;

/// Concrete forward transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionKind {
    MotionBlur,
    ElasticWarp,
    Refraction,
    DefocusBlur,
    LowLight,
    ColorJitter,
    Overexposure,
    Underexposure,
    Contrast,
    Saturation,
    Haze,
    Rain,
    Snow,
    Clouds,
    Raindrops,
    GaussianNoise,
    Pixelation,
}

impl DistortionKind {
    pub const ALL: [DistortionKind; 17] = [
        DistortionKind::MotionBlur,
        DistortionKind::ElasticWarp,
        DistortionKind::Refraction,
        DistortionKind::DefocusBlur,
        DistortionKind::LowLight,
        DistortionKind::ColorJitter,
        DistortionKind::Overexposure,
        DistortionKind::Underexposure,
        DistortionKind::Contrast,
        DistortionKind::Saturation,
        DistortionKind::Haze,
        DistortionKind::Rain,
        DistortionKind::Snow,
        DistortionKind::Clouds,
        DistortionKind::Raindrops,
        DistortionKind::GaussianNoise,
        DistortionKind::Pixelation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistortionKind::MotionBlur => "motion_blur",
            DistortionKind::ElasticWarp => "elastic_warp",
            DistortionKind::Refraction => "refraction",
            DistortionKind::DefocusBlur => "defocus_blur",
            DistortionKind::LowLight => "low_light",
            DistortionKind::ColorJitter => "color_jitter",
            DistortionKind::Overexposure => "overexposure",
            DistortionKind::Underexposure => "underexposure",
            DistortionKind::Contrast => "contrast",
            DistortionKind::Saturation => "saturation",
            DistortionKind::Haze => "haze",
            DistortionKind::Rain => "rain",
            DistortionKind::Snow => "snow",
            DistortionKind::Clouds => "clouds",
            DistortionKind::Raindrops => "raindrops",
            DistortionKind::GaussianNoise => "gaussian_noise",
            DistortionKind::Pixelation => "pixelation",
        }
    }

    /// Category under the default grouping.
    pub fn category(self) -> Category {
        Grouping::default().category(self)
    }

    pub fn needs_depth(self) -> bool {
        matches!(
            self,
            DistortionKind::Haze | DistortionKind::Rain | DistortionKind::Snow
        )
    }
}

impl fmt::Display for DistortionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistortionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DistortionKind::ALL
            .iter()
            .copied()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown distortion kind {:?}", s)))
    }
}

/// Label category; the classifier and prompts speak in these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MotionBlur,
    ElasticWarp,
    Refraction,
    DefocusBlur,
    LowLight,
    ColorShift,
    Brightness,
    Contrast,
    Haze,
    Rain,
    Snow,
    Clouds,
    GaussianNoise,
    Pixelation,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::MotionBlur,
        Category::ElasticWarp,
        Category::Refraction,
        Category::DefocusBlur,
        Category::LowLight,
        Category::ColorShift,
        Category::Brightness,
        Category::Contrast,
        Category::Haze,
        Category::Rain,
        Category::Snow,
        Category::Clouds,
        Category::GaussianNoise,
        Category::Pixelation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::MotionBlur => "motion_blur",
            Category::ElasticWarp => "elastic_warp",
            Category::Refraction => "refraction",
            Category::DefocusBlur => "defocus_blur",
            Category::LowLight => "low_light",
            Category::ColorShift => "color_shift",
            Category::Brightness => "brightness",
            Category::Contrast => "contrast",
            Category::Haze => "haze",
            Category::Rain => "rain",
            Category::Snow => "snow",
            Category::Clouds => "clouds",
            Category::GaussianNoise => "gaussian_noise",
            Category::Pixelation => "pixelation",
        }
    }

    /// Human-readable name used in standardized prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::MotionBlur => "motion blur",
            Category::ElasticWarp => "elastic warping",
            Category::Refraction => "refraction",
            Category::DefocusBlur => "defocus blur",
            Category::LowLight => "low light",
            Category::ColorShift => "color shift",
            Category::Brightness => "brightness",
            Category::Contrast => "contrast",
            Category::Haze => "haze",
            Category::Rain => "rain",
            Category::Snow => "snow",
            Category::Clouds => "clouds",
            Category::GaussianNoise => "noise",
            Category::Pixelation => "pixelation",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown category {:?}", s)))
    }
}

/// Mapping from concrete transforms to label categories.
///
/// Default: overexposure and underexposure share `brightness`; color jitter
/// and saturation share `color_shift`; raindrops share `rain`; every other
/// kind is its own category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grouping {
    map: BTreeMap<DistortionKind, Category>,
}

impl Default for Grouping {
    fn default() -> Self {
        use DistortionKind as K;
        let map = DistortionKind::ALL
            .iter()
            .map(|&k| {
                let c = match k {
                    K::MotionBlur => Category::MotionBlur,
                    K::ElasticWarp => Category::ElasticWarp,
                    K::Refraction => Category::Refraction,
                    K::DefocusBlur => Category::DefocusBlur,
                    K::LowLight => Category::LowLight,
                    K::ColorJitter | K::Saturation => Category::ColorShift,
                    K::Overexposure | K::Underexposure => Category::Brightness,
                    K::Contrast => Category::Contrast,
                    K::Haze => Category::Haze,
                    K::Rain | K::Raindrops => Category::Rain,
                    K::Snow => Category::Snow,
                    K::Clouds => Category::Clouds,
                    K::GaussianNoise => Category::GaussianNoise,
                    K::Pixelation => Category::Pixelation,
                };
                (k, c)
            })
            .collect();
        Self { map }
    }
}

impl Grouping {
    /// Custom grouping; must cover every kind.
    pub fn new(map: BTreeMap<DistortionKind, Category>) -> Result<Self> {
        if let Some(k) = DistortionKind::ALL.iter().find(|k| !map.contains_key(k)) {
            return Err(Error::invalid(format!("grouping does not cover {}", k)));
        }
        Ok(Self { map })
    }

    pub fn category(&self, kind: DistortionKind) -> Category {
        self.map[&kind]
    }

    pub fn kinds_of(&self, category: Category) -> Vec<DistortionKind> {
        self.map
            .iter()
            .filter(|(_, &c)| c == category)
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn kinds_to_labels(&self, kinds: impl IntoIterator<Item = DistortionKind>) -> LabelSet {
        kinds.into_iter().map(|k| self.category(k)).collect()
    }
}

/// Labels of a set of applied transforms under the default grouping.
pub fn kinds_to_labels(kinds: impl IntoIterator<Item = DistortionKind>) -> LabelSet {
    Grouping::default().kinds_to_labels(kinds)
}

/// Set of label categories, stored as a 14-bit mask.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelSet(u16);

impl LabelSet {
    pub const fn empty() -> Self {
        LabelSet(0)
    }

    pub const fn full() -> Self {
        LabelSet((1u16 << NUM_CATEGORIES) - 1)
    }

    pub fn from_bits(bits: u16) -> Result<Self> {
        if bits >> NUM_CATEGORIES != 0 {
            return Err(Error::invalid(format!(
                "label bits {:#x} exceed vocabulary",
                bits
            )));
        }
        Ok(LabelSet(bits))
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn single(c: Category) -> Self {
        LabelSet(1 << c.index())
    }

    pub fn insert(&mut self, c: Category) {
        self.0 |= 1 << c.index();
    }

    pub fn remove(&mut self, c: Category) {
        self.0 &= !(1 << c.index());
    }

    pub fn contains(self, c: Category) -> bool {
        self.0 & (1 << c.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn intersection(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & other.0)
    }

    pub fn difference(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 & !other.0)
    }

    pub fn complement(self) -> LabelSet {
        LabelSet(!self.0 & LabelSet::full().0)
    }

    pub fn is_subset(self, other: LabelSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: LabelSet) -> bool {
        self.0 & other.0 == 0
    }

    /// Categories in vocabulary order.
    pub fn iter(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    pub fn to_vec(self) -> Vec<Category> {
        self.iter().collect()
    }

    pub fn multi_hot(self) -> [f64; NUM_CATEGORIES] {
        let mut v = [0.0; NUM_CATEGORIES];
        for c in self.iter() {
            v[c.index()] = 1.0;
        }
        v
    }

    /// Inverse of [`LabelSet::multi_hot`]; entries must be exactly 0 or 1.
    pub fn from_multi_hot(v: &[f64]) -> Result<Self> {
        if v.len() != NUM_CATEGORIES {
            return Err(Error::DimensionMismatch(format!(
                "multi-hot vector of length {}",
                v.len()
            )));
        }
        let mut s = LabelSet::empty();
        for (i, &x) in v.iter().enumerate() {
            match x {
                x if x == 1.0 => s.insert(Category::ALL[i]),
                x if x == 0.0 => {}
                other => return Err(Error::invalid(format!("multi-hot entry {}", other))),
            }
        }
        Ok(s)
    }

    /// All subsets of `self`, including the empty set and `self`.
    pub fn subsets(self) -> Vec<LabelSet> {
        let members = self.to_vec();
        (0u32..(1 << members.len()))
            .map(|mask| {
                members
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| mask & (1 << i) != 0)
                    .map(|(_, &c)| c)
                    .collect()
            })
            .collect()
    }
}

impl FromIterator<Category> for LabelSet {
    fn from_iter<I: IntoIterator<Item = Category>>(iter: I) -> Self {
        let mut s = LabelSet::empty();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.iter().map(Category::name).collect();
        write!(f, "{{{}}}", names.join(", "))
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v: Vec<Category> = Vec::deserialize(d)?;
        Ok(v.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_is_total_and_surjective() {
        let g = Grouping::default();
        let labels = g.kinds_to_labels(DistortionKind::ALL);
        assert_eq!(labels, LabelSet::full());
        assert_eq!(labels.len(), 14);
    }

    #[test]
    fn merged_kinds_collapse() {
        use DistortionKind as K;
        assert_eq!(
            kinds_to_labels([K::Overexposure]),
            LabelSet::single(Category::Brightness)
        );
        assert_eq!(
            kinds_to_labels([K::Overexposure, K::Underexposure]).len(),
            1
        );
        let s = kinds_to_labels([K::Haze, K::Rain, K::MotionBlur]);
        assert_eq!(
            s,
            [Category::Haze, Category::Rain, Category::MotionBlur]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn multi_hot_agrees_with_set_view() {
        let s: LabelSet = [Category::Haze, Category::Pixelation].into_iter().collect();
        let v = s.multi_hot();
        assert_eq!(v.iter().sum::<f64>(), 2.0);
        assert_eq!(LabelSet::from_multi_hot(&v).unwrap(), s);
    }

    #[test]
    fn serde_uses_category_names() {
        let s: LabelSet = [Category::Snow, Category::Haze].into_iter().collect();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"["haze","snow"]"#);
        let back: LabelSet = serde_json::from_str(&j).unwrap();
        assert_eq!(back, s);
        assert!(serde_json::from_str::<LabelSet>(r#"["smog"]"#).is_err());
    }

    #[test]
    fn subsets_enumerates_power_set() {
        let s: LabelSet = [Category::Haze, Category::Rain, Category::Snow]
            .into_iter()
            .collect();
        assert_eq!(s.subsets().len(), 8);
    }

    #[test]
    fn custom_grouping_must_be_total() {
        let mut m = BTreeMap::new();
        m.insert(DistortionKind::Haze, Category::Haze);
        assert!(Grouping::new(m).is_err());
    }
}
