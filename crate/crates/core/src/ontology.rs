//! Activity ontology and the 41-bit input encoding.
//!
//! Raw activity labels from the source logs are coarsened into ten
//! model-facing categories. Each collapsed event is encoded as the
//! concatenation of three one-hot segments: hour of day (24), weekday (7)
//! and category (10).

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};

pub const NUM_CATEGORIES: usize = 10;
pub const HOURS: usize = 24;
pub const WEEKDAYS: usize = 7;
pub const FEATURE_DIM: usize = HOURS + WEEKDAYS + NUM_CATEGORIES;

const WEEKDAY_OFFSET: usize = HOURS;
const CATEGORY_OFFSET: usize = HOURS + WEEKDAYS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Category {
    PersonalHealthAndHygiene,
    Eat,
    Drink,
    Chores,
    Rest,
    Relax,
    Social,
    Work,
    LeaveHome,
    EnterHome,
    /// Never a model input or target.
    NotTracked,
}

impl Category {
    /// The ten model-facing categories in index order.
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::PersonalHealthAndHygiene,
        Category::Eat,
        Category::Drink,
        Category::Chores,
        Category::Rest,
        Category::Relax,
        Category::Social,
        Category::Work,
        Category::LeaveHome,
        Category::EnterHome,
    ];

    /// Stable index in `0..10`, or `None` for [`Category::NotTracked`].
    pub fn index(self) -> Option<usize> {
        match self {
            Category::NotTracked => None,
            c => Some(c as usize),
        }
    }

    pub fn from_index(index: usize) -> Option<Category> {
        Self::ALL.get(index).copied()
    }

    pub fn is_tracked(self) -> bool {
        self != Category::NotTracked
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::PersonalHealthAndHygiene => "PERSONAL_HEALTH_AND_HYGIENE",
            Category::Eat => "EAT",
            Category::Drink => "DRINK",
            Category::Chores => "CHORES",
            Category::Rest => "REST",
            Category::Relax => "RELAX",
            Category::Social => "SOCIAL",
            Category::Work => "WORK",
            Category::LeaveHome => "LEAVE_HOME",
            Category::EnterHome => "ENTER_HOME",
            Category::NotTracked => "NOT_TRACKED",
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
        let wanted = s.trim().to_ascii_uppercase().replace([' ', '-'], "_");
        Self::ALL
            .iter()
            .copied()
            .chain(std::iter::once(Category::NotTracked))
            .find(|c| c.name() == wanted)
            .ok_or_else(|| invalid_input(format!("unknown category {s:?}")))
    }
}

/// Built-in raw-label mapping.
const DEFAULT_MAPPING: &[(Category, &[&str])] = &[
    (
        Category::PersonalHealthAndHygiene,
        &[
            "evening meds",
            "morning meds",
            "take medicine",
            "exercise",
            "toilet",
            "groom",
            "dress",
            "r2.dress",
            "bathe",
            "personal hygiene",
            "r2.personal hygiene",
        ],
    ),
    (
        Category::Eat,
        &["eat", "eat breakfast", "r2.eat breakfast", "eat lunch", "eat dinner"],
    ),
    (Category::Drink, &["drink"]),
    (
        Category::Chores,
        &[
            "cook",
            "r1.cook breakfast",
            "cook lunch",
            "cook dinner",
            "cook breakfast",
            "wash dishes",
            "wash breakfast dishes",
            "wash lunch dishes",
            "wash dinner dishes",
            "laundry",
        ],
    ),
    (
        Category::Rest,
        &["nap", "sleep", "r1.sleep", "sleep out of bed", "go to sleep", "wake up"],
    ),
    (Category::Relax, &["relax", "watch tv", "read"]),
    (Category::Social, &["phone", "entertain guests"]),
    (
        Category::Work,
        &["work", "work at table", "work on computer", "work at desk"],
    ),
    (Category::LeaveHome, &["leave home"]),
    (Category::EnterHome, &["enter home"]),
    (
        Category::NotTracked,
        &["other activity", "step out", "bed toilet transition"],
    ),
];

/// Lowercases, trims and treats underscores as spaces (`Cook_Breakfast`).
fn normalize_label(raw: &str) -> String {
    raw.trim().to_lowercase().replace('_', " ")
}

/// Raw label to category lookup.
#[derive(Debug)]
pub struct OntologyMap {
    entries: HashMap<String, Category>,
    unknown: AtomicUsize,
}

impl Clone for OntologyMap {
    fn clone(&self) -> Self {
        Self {
            entries: self.entries.clone(),
            unknown: AtomicUsize::new(self.unknown_count()),
        }
    }
}

impl Default for OntologyMap {
    fn default() -> Self {
        let mut entries = HashMap::new();
        for &(category, labels) in DEFAULT_MAPPING {
            for label in labels {
                entries.insert(normalize_label(label), category);
            }
            // Category names map to themselves so canonical/synthetic logs
            // round-trip through the same parser.
            entries.insert(normalize_label(category.name()), category);
        }
        entries.insert(normalize_label(Category::NotTracked.name()), Category::NotTracked);
        Self {
            entries,
            unknown: AtomicUsize::new(0),
        }
    }
}

impl OntologyMap {
    pub fn empty() -> Self {
        Self {
            entries: HashMap::new(),
            unknown: AtomicUsize::new(0),
        }
    }

    pub fn insert(&mut self, raw: &str, category: Category) {
        self.entries.insert(normalize_label(raw), category);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of lookups that fell back to [`Category::NotTracked`].
    pub fn unknown_count(&self) -> usize {
        self.unknown.load(Ordering::Relaxed)
    }

    /// Reads `raw_label<TAB>CATEGORY` lines; `#` starts a comment line.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self> {
        let mut map = Self::empty();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (raw, cat) = trimmed.split_once('\t').ok_or_else(|| {
                invalid_input(format!("ontology line {}: expected raw_label<TAB>CATEGORY", lineno + 1))
            })?;
            if raw.trim().is_empty() {
                return Err(invalid_input(format!("ontology line {}: empty label", lineno + 1)));
            }
            map.insert(raw, cat.parse()?);
        }
        Ok(map)
    }

    /// Maps a raw label; unknown labels degrade to `NotTracked` and bump the
    /// warning counter.
    pub fn map_label(&self, raw: &str) -> Category {
        match self.entries.get(&normalize_label(raw)) {
            Some(&c) => c,
            None => {
                if self.unknown.fetch_add(1, Ordering::Relaxed) == 0 {
                    log::warn!("unknown activity label {raw:?} mapped to NOT_TRACKED");
                }
                Category::NotTracked
            }
        }
    }
}

/// One encoded event: one hot bit in each of the hour, weekday and
/// category segments of a 41-wide binary vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    hour: u8,
    weekday: u8,
    category: u8,
}

impl FeatureVector {
    /// Positions of the three set bits, in segment order.
    #[inline]
    pub fn set_indices(&self) -> [usize; 3] {
        [
            self.hour as usize,
            WEEKDAY_OFFSET + self.weekday as usize,
            CATEGORY_OFFSET + self.category as usize,
        ]
    }

    pub fn bits(&self) -> [bool; FEATURE_DIM] {
        let mut bits = [false; FEATURE_DIM];
        for i in self.set_indices() {
            bits[i] = true;
        }
        bits
    }

    pub fn category(&self) -> Category {
        Category::ALL[self.category as usize]
    }
}

pub fn encode_features(hour: u32, weekday: u32, category: Category) -> Result<FeatureVector> {
    if hour as usize >= HOURS {
        return Err(invalid_input(format!("hour {hour} out of range 0..24")));
    }
    if weekday as usize >= WEEKDAYS {
        return Err(invalid_input(format!("weekday {weekday} out of range 0..7")));
    }
    let category = category
        .index()
        .ok_or_else(|| invalid_input("NOT_TRACKED cannot be encoded"))?;
    Ok(FeatureVector {
        hour: hour as u8,
        weekday: weekday as u8,
        category: category as u8,
    })
}

/// Picks the most probable category; ties go to the lowest index.
pub fn decode_prediction(probs: &[f64]) -> Result<Category> {
    if probs.len() != NUM_CATEGORIES {
        return Err(invalid_input(format!(
            "expected {NUM_CATEGORIES} probabilities, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid_input("probabilities must be finite and nonnegative"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(invalid_input(format!("probabilities sum to {sum}, not 1")));
    }
    Ok(Category::ALL[argmax(probs)])
}

/// First index of the maximum.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn table_labels() {
        let map = OntologyMap::default();
        assert_eq!(map.map_label("cook breakfast"), Category::Chores);
        assert_eq!(map.map_label("watch TV"), Category::Relax);
        assert_eq!(map.map_label("  Cook_Breakfast "), Category::Chores);
        assert_eq!(map.map_label("bed toilet transition"), Category::NotTracked);
        assert_eq!(map.unknown_count(), 0);
        assert_eq!(map.map_label("zzz_unknown"), Category::NotTracked);
        assert_eq!(map.unknown_count(), 1);
    }

    #[test]
    fn every_category_reachable() {
        let map = OntologyMap::default();
        for c in Category::ALL {
            assert_eq!(map.map_label(&c.name().to_lowercase()), c);
        }
    }

    #[test]
    fn indices_are_stable() {
        for (i, c) in Category::ALL.iter().enumerate() {
            assert_eq!(c.index(), Some(i));
            assert_eq!(Category::from_index(i), Some(*c));
        }
        assert_eq!(Category::NotTracked.index(), None);
        assert_eq!(Category::Rest.index(), Some(4));
    }

    #[test]
    fn encode_examples() {
        let at = |h, d, c: usize| {
            encode_features(h, d, Category::ALL[c]).unwrap().set_indices()
        };
        assert_eq!(at(0, 0, 0), [0, 24, 31]);
        assert_eq!(at(13, 2, 4), [13, 26, 35]);
        assert_eq!(at(23, 6, 9), [23, 30, 40]);
    }

    #[test]
    fn encode_rejects_bad_input() {
        assert!(encode_features(24, 0, Category::Eat).is_err());
        assert!(encode_features(0, 7, Category::Eat).is_err());
        assert!(encode_features(0, 0, Category::NotTracked).is_err());
    }

    #[test]
    fn full_grid_has_three_bits() {
        for h in 0..24 {
            for d in 0..7 {
                for c in Category::ALL {
                    let bits = encode_features(h, d, c).unwrap().bits();
                    assert_eq!(bits.iter().filter(|b| **b).count(), 3);
                    assert_eq!(bits[..24].iter().filter(|b| **b).count(), 1);
                    assert_eq!(bits[24..31].iter().filter(|b| **b).count(), 1);
                    assert_eq!(bits[31..].iter().filter(|b| **b).count(), 1);
                }
            }
        }
    }

    #[test]
    fn decode_examples() {
        let mut onehot = [0.0; 10];
        onehot[0] = 1.0;
        assert_eq!(decode_prediction(&onehot).unwrap().index(), Some(0));
        assert_eq!(decode_prediction(&[0.1; 10]).unwrap().index(), Some(0));
        let p = [0.05, 0.05, 0.4, 0.1, 0.1, 0.1, 0.05, 0.05, 0.05, 0.05];
        assert_eq!(decode_prediction(&p).unwrap().index(), Some(2));
        assert!(decode_prediction(&[0.2; 10]).is_err());
        assert!(decode_prediction(&[0.5; 2]).is_err());
    }

    #[test]
    fn map_file_parsing() {
        let text = "# custom\nnap time\tREST\nmop floor\tCHORES\n\n";
        let map = OntologyMap::from_reader(text.as_bytes()).unwrap();
        assert_eq!(map.len(), 2);
        assert_eq!(map.map_label("Nap Time"), Category::Rest);
        assert!(OntologyMap::from_reader("no tab here\n".as_bytes()).is_err());
        assert!(OntologyMap::from_reader("x\tNOT_A_CATEGORY\n".as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn lookup_is_case_insensitive(idx in 0usize..45, upper in proptest::bool::ANY) {
            let map = OntologyMap::default();
            let labels: Vec<&str> = DEFAULT_MAPPING.iter().flat_map(|(_, l)| l.iter().copied()).collect();
            let label = labels[idx % labels.len()];
            let variant = if upper { label.to_uppercase() } else { label.to_lowercase() };
            prop_assert_eq!(map.map_label(&variant), map.map_label(label));
        }

        #[test]
        fn argmax_invariant_under_scaling(
            raw in proptest::collection::vec(0.0f64..1.0, 10),
            scale in 0.01f64..100.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 1e-3);
            let p: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let scaled: Vec<f64> = p.iter().map(|v| v * scale).collect();
            let s: f64 = scaled.iter().sum();
            let renorm: Vec<f64> = scaled.iter().map(|v| v / s).collect();
            prop_assert_eq!(decode_prediction(&p).unwrap(), decode_prediction(&renorm).unwrap());
        }
    }
}
