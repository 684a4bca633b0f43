//! Morphology truth-table ingestion and threshold categorization.
//!
//! The catalog is a CSV with a header row: one id column followed by 37
//! named response probabilities in [0,1]. Categorization addresses columns
//! by header name through a configurable alias table, so differently named
//! exports of the same table keep working.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESPONSE_COLUMNS: usize = 37;

/// The five morphology categories, in threshold-evaluation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    CompletelyRoundSmooth,
    InBetweenSmooth,
    CigarShapedSmooth,
    EdgeOn,
    Spiral,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::CompletelyRoundSmooth,
        Category::InBetweenSmooth,
        Category::CigarShapedSmooth,
        Category::EdgeOn,
        Category::Spiral,
    ];

    pub fn index(self) -> usize {
        match self {
            Category::CompletelyRoundSmooth => 0,
            Category::InBetweenSmooth => 1,
            Category::CigarShapedSmooth => 2,
            Category::EdgeOn => 3,
            Category::Spiral => 4,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Config(format!("no category with id {i}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::CompletelyRoundSmooth => "completely_round_smooth",
            Category::InBetweenSmooth => "in_between_smooth",
            Category::CigarShapedSmooth => "cigar_shaped_smooth",
            Category::EdgeOn => "edge_on",
            Category::Spiral => "spiral",
        }
    }
}

/// One catalog row: galaxy id plus all 37 response probabilities.
#[derive(Debug, Clone)]
pub struct CatalogRow {
    pub galaxy_id: String,
    pub responses: Vec<f64>,
}

/// Header-name mapping for the eight responses the thresholds use.
/// Defaults follow the published truth-table column naming.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnAliases {
    pub smooth: String,
    pub features_disk: String,
    pub edge_on_yes: String,
    pub edge_on_no: String,
    pub spiral_yes: String,
    pub completely_round: String,
    pub in_between: String,
    pub cigar_shaped: String,
}

impl Default for ColumnAliases {
    fn default() -> Self {
        Self {
            smooth: "Class1.1".into(),
            features_disk: "Class1.2".into(),
            edge_on_yes: "Class2.1".into(),
            edge_on_no: "Class2.2".into(),
            spiral_yes: "Class4.1".into(),
            completely_round: "Class7.1".into(),
            in_between: "Class7.2".into(),
            cigar_shaped: "Class7.3".into(),
        }
    }
}

/// Alias table resolved to response-vector positions for one catalog.
#[derive(Debug, Clone, Copy)]
pub struct ResolvedColumns {
    pub smooth: usize,
    pub features_disk: usize,
    pub edge_on_yes: usize,
    pub edge_on_no: usize,
    pub spiral_yes: usize,
    pub completely_round: usize,
    pub in_between: usize,
    pub cigar_shaped: usize,
}

impl ResolvedColumns {
    pub fn resolve(columns: &[String], aliases: &ColumnAliases) -> Result<Self> {
        let find = |name: &str| {
            columns
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Parse(format!("catalog is missing column `{name}`")))
        };
        Ok(Self {
            smooth: find(&aliases.smooth)?,
            features_disk: find(&aliases.features_disk)?,
            edge_on_yes: find(&aliases.edge_on_yes)?,
            edge_on_no: find(&aliases.edge_on_no)?,
            spiral_yes: find(&aliases.spiral_yes)?,
            completely_round: find(&aliases.completely_round)?,
            in_between: find(&aliases.in_between)?,
            cigar_shaped: find(&aliases.cigar_shaped)?,
        })
    }
}

// Threshold values per category rule.
pub const SMOOTH_MIN: f64 = 0.469;
pub const COMPLETELY_ROUND_MIN: f64 = 0.50;
pub const IN_BETWEEN_MIN: f64 = 0.50;
pub const CIGAR_MIN: f64 = 0.50;
pub const FEATURES_DISK_MIN: f64 = 0.430;
pub const EDGE_ON_YES_MIN: f64 = 0.602;
pub const EDGE_ON_NO_MIN: f64 = 0.715;
pub const SPIRAL_YES_MIN: f64 = 0.619;

/// Conjunctive threshold rules checked in category order 0..4; the first
/// match wins and rows matching nothing get `None`. The rules are not
/// provably disjoint at boundary values, so the fixed order keeps
/// categorization total and deterministic.
pub fn categorize(row: &CatalogRow, cols: &ResolvedColumns) -> Option<Category> {
    let r = &row.responses;
    if r[cols.smooth] >= SMOOTH_MIN && r[cols.completely_round] >= COMPLETELY_ROUND_MIN {
        return Some(Category::CompletelyRoundSmooth);
    }
    if r[cols.smooth] >= SMOOTH_MIN && r[cols.in_between] >= IN_BETWEEN_MIN {
        return Some(Category::InBetweenSmooth);
    }
    if r[cols.smooth] >= SMOOTH_MIN && r[cols.cigar_shaped] >= CIGAR_MIN {
        return Some(Category::CigarShapedSmooth);
    }
    if r[cols.features_disk] >= FEATURES_DISK_MIN && r[cols.edge_on_yes] >= EDGE_ON_YES_MIN {
        return Some(Category::EdgeOn);
    }
    if r[cols.edge_on_no] >= EDGE_ON_NO_MIN && r[cols.spiral_yes] >= SPIRAL_YES_MIN {
        return Some(Category::Spiral);
    }
    None
}

/// A parsed truth table.
#[derive(Debug, Clone)]
pub struct Catalog {
    /// The 37 response column names, in file order.
    pub columns: Vec<String>,
    pub rows: Vec<CatalogRow>,
}

impl Catalog {
    pub fn from_reader<R: Read>(reader: R) -> Result<Self> {
        let mut csv_reader = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = csv_reader
            .headers()
            .map_err(|e| Error::Parse(format!("catalog header: {e}")))?
            .clone();
        if header.len() != RESPONSE_COLUMNS + 1 {
            return Err(Error::Parse(format!(
                "catalog needs 1 id column + {RESPONSE_COLUMNS} response columns, got {}",
                header.len()
            )));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (line, record) in csv_reader.records().enumerate() {
            let record = record.map_err(|e| Error::Parse(format!("catalog row {}: {e}", line + 2)))?;
            if record.len() != RESPONSE_COLUMNS + 1 {
                return Err(Error::Parse(format!(
                    "catalog row {}: expected {} fields, got {}",
                    line + 2,
                    RESPONSE_COLUMNS + 1,
                    record.len()
                )));
            }
            let galaxy_id = record[0].trim().to_owned();
            let mut responses = Vec::with_capacity(RESPONSE_COLUMNS);
            for field in record.iter().skip(1) {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("catalog row {}: bad response `{field}`: {e}", line + 2)))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Parse(format!(
                        "catalog row {}: response {v} outside [0,1]",
                        line + 2
                    )));
                }
                responses.push(v);
            }
            rows.push(CatalogRow { galaxy_id, responses });
        }
        Ok(Self { columns, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(std::io::BufReader::new(file))
    }

    /// Categorize every row with the given alias table.
    pub fn categorize_all(&self, aliases: &ColumnAliases) -> Result<Vec<(String, Option<Category>)>> {
        let cols = ResolvedColumns::resolve(&self.columns, aliases)?;
        Ok(self
            .rows
            .iter()
            .map(|row| (row.galaxy_id.clone(), categorize(row, &cols)))
            .collect())
    }

    /// Galaxy ids per category, in catalog order.
    pub fn ids_by_category(&self, aliases: &ColumnAliases) -> Result<[Vec<String>; 5]> {
        let mut out: [Vec<String>; 5] = Default::default();
        for (id, cat) in self.categorize_all(aliases)? {
            if let Some(cat) = cat {
                out[cat.index()].push(id);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_with(values: &[(usize, f64)]) -> CatalogRow {
        let mut responses = vec![0.0; RESPONSE_COLUMNS];
        for &(i, v) in values {
            responses[i] = v;
        }
        CatalogRow { galaxy_id: "g".into(), responses }
    }

    fn default_cols() -> ResolvedColumns {
        // standard header order: Class1.1,Class1.2,Class1.3,Class2.1,...
        let columns = standard_columns();
        ResolvedColumns::resolve(&columns, &ColumnAliases::default()).unwrap()
    }

    fn standard_columns() -> Vec<String> {
        let spec: [(&str, usize); 11] = [
            ("Class1", 3),
            ("Class2", 2),
            ("Class3", 2),
            ("Class4", 2),
            ("Class5", 4),
            ("Class6", 2),
            ("Class7", 3),
            ("Class8", 7),
            ("Class9", 3),
            ("Class10", 3),
            ("Class11", 6),
        ];
        spec.iter()
            .flat_map(|&(name, n)| (1..=n).map(move |i| format!("{name}.{i}")))
            .collect()
    }

    #[test]
    fn standard_header_has_37_columns() {
        assert_eq!(standard_columns().len(), RESPONSE_COLUMNS);
    }

    #[test]
    fn round_smooth_thresholds() {
        let cols = default_cols();
        let row = row_with(&[(cols.smooth, 0.8), (cols.completely_round, 0.6)]);
        assert_eq!(categorize(&row, &cols), Some(Category::CompletelyRoundSmooth));
    }

    #[test]
    fn spiral_thresholds() {
        let cols = default_cols();
        let row = row_with(&[(cols.edge_on_no, 0.72), (cols.spiral_yes, 0.62)]);
        assert_eq!(categorize(&row, &cols), Some(Category::Spiral));
    }

    #[test]
    fn no_thresholds_met_is_none() {
        let cols = default_cols();
        let row = row_with(&[]);
        assert_eq!(categorize(&row, &cols), None);
    }

    #[test]
    fn first_match_wins_on_overlap() {
        let cols = default_cols();
        // satisfies both rule 0 and rule 1; order picks 0
        let row = row_with(&[
            (cols.smooth, 0.9),
            (cols.completely_round, 0.55),
            (cols.in_between, 0.55),
        ]);
        assert_eq!(categorize(&row, &cols), Some(Category::CompletelyRoundSmooth));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let header = format!("GalaxyID,{}", standard_columns().join(","));
        let good = format!(
            "{header}\n1001,{}\n",
            (0..RESPONSE_COLUMNS).map(|i| if i == 0 { "0.5" } else { "0.1" }).collect::<Vec<_>>().join(",")
        );
        let catalog = Catalog::from_reader(good.as_bytes()).unwrap();
        assert_eq!(catalog.rows.len(), 1);
        assert_eq!(catalog.rows[0].galaxy_id, "1001");
        assert_eq!(catalog.rows[0].responses[0], 0.5);

        let bad_value = format!("{header}\n1002,{}\n", vec!["1.5"; RESPONSE_COLUMNS].join(","));
        assert!(matches!(Catalog::from_reader(bad_value.as_bytes()), Err(Error::Parse(_))));

        let bad_width = "GalaxyID,Class1.1\n1,0.2\n";
        assert!(matches!(Catalog::from_reader(bad_width.as_bytes()), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_aliased_column_is_parse_error() {
        let mut columns = standard_columns();
        columns[0] = "Renamed".into();
        assert!(matches!(
            ResolvedColumns::resolve(&columns, &ColumnAliases::default()),
            Err(Error::Parse(_))
        ));
    }

    #[test]
    fn categorization_is_deterministic() {
        let cols = default_cols();
        let rows: Vec<CatalogRow> = (0..50)
            .map(|i| {
                row_with(&[
                    (cols.smooth, (i as f64 * 0.02) % 1.0),
                    (cols.completely_round, ((i * 7) as f64 * 0.013) % 1.0),
                    (cols.edge_on_no, ((i * 3) as f64 * 0.029) % 1.0),
                    (cols.spiral_yes, ((i * 11) as f64 * 0.017) % 1.0),
                ])
            })
            .collect();
        let first: Vec<_> = rows.iter().map(|r| categorize(r, &cols)).collect();
        let second: Vec<_> = rows.iter().map(|r| categorize(r, &cols)).collect();
        assert_eq!(first, second);
    }
}
