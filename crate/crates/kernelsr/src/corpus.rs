//! Dataset manifests and user-study vote aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::write_atomic;

/// The three survey domain columns; `Other` is the catch-all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DomainGroup {
    Smartphone,
    GoogleStreetView,
    Other,
}

impl DomainGroup {
    pub const ALL: [DomainGroup; 3] = [
        DomainGroup::Smartphone,
        DomainGroup::GoogleStreetView,
        DomainGroup::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            DomainGroup::Smartphone => "Smartphone",
            DomainGroup::GoogleStreetView => "GoogleStreetView",
            DomainGroup::Other => "Other",
        }
    }

    fn parse(s: &str) -> Option<DomainGroup> {
        match s {
            "Smartphone" => Some(DomainGroup::Smartphone),
            "GoogleStreetView" => Some(DomainGroup::GoogleStreetView),
            "Other" => Some(DomainGroup::Other),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Image path; relative paths are resolved against the manifest's
    /// directory by [`load_manifest`].
    pub path: String,
    pub source_category: String,
    pub equipment: String,
    pub domain_group: DomainGroup,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

/// Loads and validates a manifest JSON file. Entry ids must be unique;
/// relative image paths are resolved against the manifest's directory.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| Error::format(path, format!("manifest json: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    for entry in &manifest.entries {
        if !seen.insert(entry.id.clone()) {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: format!("duplicate id {:?}", entry.id),
            });
        }
    }
    if let Some(base) = path.parent() {
        for entry in &mut manifest.entries {
            let p = Path::new(&entry.path);
            if p.is_relative() {
                entry.path = base.join(p).display().to_string();
            }
        }
    }
    Ok(manifest)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    write_atomic(path.as_ref(), json.as_bytes())
}

/// One survey response: which model's output looked best for an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub respondent_id: String,
    pub image_id: String,
    pub domain_group: DomainGroup,
    pub chosen_model: String,
}

/// Per-model, per-domain vote counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VoteTable {
    /// model -> domain -> count. BTreeMap keeps output deterministic.
    pub counts: BTreeMap<String, BTreeMap<DomainGroup, u64>>,
}

impl VoteTable {
    pub fn count(&self, model: &str, domain: DomainGroup) -> u64 {
        self.counts
            .get(model)
            .and_then(|row| row.get(&domain))
            .copied()
            .unwrap_or(0)
    }
}

/// Folds vote records into a table. Unknown model names create new rows.
pub fn aggregate_votes(records: &[VoteRecord]) -> VoteTable {
    let mut table = VoteTable::default();
    for record in records {
        if record.chosen_model.is_empty() {
            continue;
        }
        *table
            .counts
            .entry(record.chosen_model.clone())
            .or_default()
            .entry(record.domain_group)
            .or_insert(0) += 1;
    }
    table
}

/// Argmax model per domain; ties break toward the lexicographically
/// smaller model name. Domains with no votes are omitted.
pub fn winners(table: &VoteTable) -> BTreeMap<DomainGroup, String> {
    let mut out = BTreeMap::new();
    for domain in DomainGroup::ALL {
        let mut best: Option<(&str, u64)> = None;
        for (model, row) in &table.counts {
            let count = row.get(&domain).copied().unwrap_or(0);
            if count == 0 {
                continue;
            }
            best = match best {
                Some((bm, bc)) if bc > count || (bc == count && bm < model.as_str()) => {
                    Some((bm, bc))
                }
                _ => Some((model, count)),
            };
        }
        if let Some((model, _)) = best {
            out.insert(domain, model.to_string());
        }
    }
    out
}

/// Total votes cast per domain.
pub fn column_totals(table: &VoteTable) -> BTreeMap<DomainGroup, u64> {
    let mut out = BTreeMap::new();
    for row in table.counts.values() {
        for (domain, count) in row {
            *out.entry(*domain).or_insert(0) += count;
        }
    }
    out
}

/// Reads a votes CSV with header `respondent_id,image_id,domain_group,chosen_model`.
pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<VoteRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, format!("votes csv: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, format!("votes csv: {e}")))?
        .clone();
    let expected = ["respondent_id", "image_id", "domain_group", "chosen_model"];
    if headers.iter().ne(expected) {
        return Err(Error::format(
            path,
            format!("header must be {}", expected.join(",")),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2; // header is line 1
        let row = row.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if row.len() != 4 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 4 fields, found {}", row.len()),
            ));
        }
        let domain = DomainGroup::parse(&row[2]).ok_or_else(|| {
            Error::format(path, format!("line {line}: unknown domain_group {:?}", &row[2]))
        })?;
        if row[3].is_empty() {
            return Err(Error::format(path, format!("line {line}: empty chosen_model")));
        }
        records.push(VoteRecord {
            respondent_id: row[0].to_string(),
            image_id: row[1].to_string(),
            domain_group: domain,
            chosen_model: row[3].to_string(),
        });
    }
    Ok(records)
}

/// Renders the table as CSV (`model,Smartphone,GoogleStreetView,Other`),
/// rows sorted by model name, with `*` marking each domain's winner.
pub fn format_vote_table(table: &VoteTable) -> String {
    let winners = winners(table);
    let mut text = String::from("model,Smartphone,GoogleStreetView,Other\n");
    for (model, row) in &table.counts {
        write!(text, "{model}").expect("string write");
        for domain in DomainGroup::ALL {
            let count = row.get(&domain).copied().unwrap_or(0);
            let marker = if winners.get(&domain) == Some(model) { "*" } else { "" };
            write!(text, ",{count}{marker}").expect("string write");
        }
        text.push('\n');
    }
    text
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_votes() -> Vec<VoteRecord> {
        // Counts matching the shipped survey tally.
        let tallies: [(&str, [u64; 3]); 5] = [
            ("RealSR", [21, 7, 537]),
            ("USRNet", [5, 9, 120]),
            ("ESRGAN", [0, 3, 12]),
            ("EnhanceNet", [0, 1, 6]),
            ("DPSR", [4, 10, 315]),
        ];
        let mut records = Vec::new();
        for (model, counts) in tallies {
            for (d, &count) in DomainGroup::ALL.iter().zip(&counts) {
                for i in 0..count {
                    records.push(VoteRecord {
                        respondent_id: format!("r{:02}", i % 30),
                        image_id: format!("{}_{i}", d.as_str()),
                        domain_group: *d,
                        chosen_model: model.to_string(),
                    });
                }
            }
        }
        records
    }

    #[test]
    fn aggregates_reference_tallies() {
        let table = aggregate_votes(&reference_votes());
        assert_eq!(table.count("RealSR", DomainGroup::Smartphone), 21);
        assert_eq!(table.count("RealSR", DomainGroup::GoogleStreetView), 7);
        assert_eq!(table.count("RealSR", DomainGroup::Other), 537);
        assert_eq!(table.count("USRNet", DomainGroup::Smartphone), 5);
        assert_eq!(table.count("USRNet", DomainGroup::GoogleStreetView), 9);
        assert_eq!(table.count("USRNet", DomainGroup::Other), 120);
        assert_eq!(table.count("ESRGAN", DomainGroup::Other), 12);
        assert_eq!(table.count("EnhanceNet", DomainGroup::GoogleStreetView), 1);
        assert_eq!(table.count("DPSR", DomainGroup::Other), 315);
    }

    #[test]
    fn winners_match_reference_bold_cells() {
        let table = aggregate_votes(&reference_votes());
        let w = winners(&table);
        assert_eq!(w[&DomainGroup::Smartphone], "RealSR");
        assert_eq!(w[&DomainGroup::GoogleStreetView], "DPSR");
        assert_eq!(w[&DomainGroup::Other], "RealSR");
    }

    #[test]
    fn column_totals_reference() {
        let table = aggregate_votes(&reference_votes());
        let totals = column_totals(&table);
        assert_eq!(totals[&DomainGroup::Smartphone], 30);
        assert_eq!(totals[&DomainGroup::GoogleStreetView], 30);
        assert_eq!(totals[&DomainGroup::Other], 990);
    }

    #[test]
    fn empty_and_single_vote_tables() {
        let empty = aggregate_votes(&[]);
        assert!(empty.counts.is_empty());
        assert!(column_totals(&empty).is_empty());
        assert!(winners(&empty).is_empty());

        let one = aggregate_votes(&[VoteRecord {
            respondent_id: "r".into(),
            image_id: "i".into(),
            domain_group: DomainGroup::Other,
            chosen_model: "OnlyModel".into(),
        }]);
        assert_eq!(one.count("OnlyModel", DomainGroup::Other), 1);
        assert_eq!(winners(&one)[&DomainGroup::Other], "OnlyModel");
    }

    #[test]
    fn winner_ties_break_lexicographically() {
        let mk = |model: &str| VoteRecord {
            respondent_id: "r".into(),
            image_id: "i".into(),
            domain_group: DomainGroup::Smartphone,
            chosen_model: model.into(),
        };
        let table = aggregate_votes(&[mk("Zeta"), mk("Alpha")]);
        assert_eq!(winners(&table)[&DomainGroup::Smartphone], "Alpha");
    }

    #[test]
    fn winners_invariant_under_column_scaling() {
        let table = aggregate_votes(&reference_votes());
        let mut scaled = table.clone();
        for row in scaled.counts.values_mut() {
            if let Some(v) = row.get_mut(&DomainGroup::Other) {
                *v *= 3;
            }
        }
        assert_eq!(winners(&table), winners(&scaled));
    }

    #[test]
    fn aggregate_is_permutation_invariant() {
        let mut votes = reference_votes();
        let table = aggregate_votes(&votes);
        votes.reverse();
        assert_eq!(aggregate_votes(&votes), table);
    }

    #[test]
    fn manifest_round_trip_and_duplicate_detection() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            entries: vec![
                ManifestEntry {
                    id: "a".into(),
                    path: "lr/a.pgm".into(),
                    source_category: "Mobile Phone".into(),
                    equipment: "iPhone 11".into(),
                    domain_group: DomainGroup::Smartphone,
                },
                ManifestEntry {
                    id: "b".into(),
                    path: "/abs/b.pgm".into(),
                    source_category: "TV Broadcast".into(),
                    equipment: "BBC Pose".into(),
                    domain_group: DomainGroup::Other,
                },
            ],
        };
        let path = dir.path().join("m.json");
        save_manifest(&manifest, &path).unwrap();
        let back = load_manifest(&path).unwrap();
        assert_eq!(back.entries.len(), 2);
        assert!(back.entries[0].path.ends_with("lr/a.pgm"));
        assert!(Path::new(&back.entries[0].path).is_absolute());
        assert_eq!(back.entries[1].path, "/abs/b.pgm");

        // once paths are resolved, save/load is a fixed point
        let path2 = dir.path().join("m2.json");
        save_manifest(&back, &path2).unwrap();
        assert_eq!(load_manifest(&path2).unwrap(), back);

        let dup = DatasetManifest {
            entries: vec![manifest.entries[0].clone(), manifest.entries[0].clone()],
        };
        let dup_path = dir.path().join("dup.json");
        save_manifest(&dup, &dup_path).unwrap();
        match load_manifest(&dup_path) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("\"a\"")),
            other => panic!("expected duplicate-id error, got {other:?}"),
        }

        let empty_path = dir.path().join("empty.json");
        save_manifest(&DatasetManifest::default(), &empty_path).unwrap();
        assert!(load_manifest(&empty_path).unwrap().entries.is_empty());
    }

    #[test]
    fn manifest_rejects_unknown_domain() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"entries":[{"id":"x","path":"p","source_category":"c","equipment":"e","domain_group":"Tablet"}]}"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn votes_csv_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("votes.csv");
        std::fs::write(
            &path,
            "respondent_id,image_id,domain_group,chosen_model\nr01,img1,Smartphone,RealSR\nr02,img1,Other,DPSR\n",
        )
        .unwrap();
        let records = load_votes(&path).unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0].domain_group, DomainGroup::Smartphone);

        let bad = dir.path().join("bad.csv");
        std::fs::write(
            &bad,
            "respondent_id,image_id,domain_group,chosen_model\nr01,img1,Nowhere,RealSR\n",
        )
        .unwrap();
        match load_votes(&bad) {
            Err(Error::Format { reason, .. }) => assert!(reason.contains("line 2")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn vote_table_csv_marks_winners() {
        let table = aggregate_votes(&reference_votes());
        let text = format_vote_table(&table);
        assert!(text.starts_with("model,Smartphone,GoogleStreetView,Other\n"));
        assert!(text.contains("RealSR,21*,7,537*"));
        assert!(text.contains("DPSR,4,10*,315"));
        assert!(text.contains("EnhanceNet,0,1,6"));
    }
}
