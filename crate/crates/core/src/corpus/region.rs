use std::collections::BTreeMap;
use std::sync::OnceLock;

use super::types::Region;
use super::CorpusError;

const BUNDLED: &str = include_str!("../../data/regions.tsv");

/// Country (ISO 3166-1 alpha-2) to region lookup.
#[derive(Debug, Clone)]
pub struct RegionTable {
    map: BTreeMap<String, Region>,
}

impl RegionTable {
    /// Parses the two-column table: `ISO<TAB>Region`, `#` comments allowed.
    /// Columns may also be separated by a comma or spaces.
    pub fn parse(text: &str) -> Result<Self, CorpusError> {
        let mut map = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line
                .split(|c: char| c == '\t' || c == ',' || c == ' ')
                .filter(|s| !s.is_empty());
            let (Some(code), Some(region), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(CorpusError::Malformed {
                    line: idx + 1,
                    message: format!("expected two columns, got {line:?}"),
                });
            };
            let region: Region = region.parse().map_err(|e| CorpusError::InvalidToken {
                line: idx + 1,
                source: e,
            })?;
            if map.insert(code.to_ascii_uppercase(), region).is_some() {
                return Err(CorpusError::Malformed {
                    line: idx + 1,
                    message: format!("duplicate country code {code}"),
                });
            }
        }
        Ok(Self { map })
    }

    pub fn bundled() -> &'static RegionTable {
        static TABLE: OnceLock<RegionTable> = OnceLock::new();
        TABLE.get_or_init(|| RegionTable::parse(BUNDLED).expect("bundled region table is valid"))
    }

    pub fn lookup(&self, country: &str) -> Result<Region, CorpusError> {
        self.map
            .get(&country.trim().to_ascii_uppercase())
            .copied()
            .ok_or_else(|| CorpusError::UnmappedCountry(country.to_string()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Region)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Maps a country code to its region using the bundled table.
pub fn map_region(country: &str) -> Result<Region, CorpusError> {
    RegionTable::bundled().lookup(country)
}
