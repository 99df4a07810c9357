//! File formats for election records.
//!
//! * CVR file: JSON array of `{"id": string|null, "phantom": bool, "votes": {contest: selection}}`
//! * Card file: JSON array of `{"imprinted_id": string|null, "votes": {...}}`, in pile order
//! * Manifest: CSV with header `contest_id,card_upper_bound`
//! * Contests file: JSON array of [`Contest`] objects (the manifest supplies the card bounds)

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BallotCard, Contest, Cvr, Election};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::parse(path.display().to_string(), e))
}

pub(crate) fn parse_json<T: DeserializeOwned>(text: &str, what: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::parse(what, e))
}

/// Deserialize TOML when the path ends in `.toml`, JSON otherwise.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    let what = path.display().to_string();
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::parse(what, e))
    } else {
        parse_json(&text, &what)
    }
}

pub fn parse_cvrs(text: &str, what: &str) -> Result<Vec<Cvr>> {
    parse_json(text, what)
}

pub fn parse_cards(text: &str, what: &str) -> Result<Vec<BallotCard>> {
    let mut cards: Vec<BallotCard> = parse_json(text, what)?;
    for (i, c) in cards.iter_mut().enumerate() {
        c.card_index = i;
    }
    Ok(cards)
}

pub fn parse_contests(text: &str, what: &str) -> Result<Vec<Contest>> {
    parse_json(text, what)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRow {
    contest_id: String,
    card_upper_bound: u64,
}

/// Parse the trusted card-count manifest.
pub fn parse_manifest(text: &str, what: &str) -> Result<BTreeMap<String, u64>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::parse(what, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["contest_id", "card_upper_bound"] {
        return Err(Error::parse(
            what,
            "expected header `contest_id,card_upper_bound`",
        ));
    }
    let mut bounds = BTreeMap::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| Error::parse(what, e))?;
        if bounds.insert(row.contest_id.clone(), row.card_upper_bound).is_some() {
            return Err(Error::parse(
                what,
                format!("contest `{}` listed twice", row.contest_id),
            ));
        }
    }
    Ok(bounds)
}

/// Assemble an election from file contents. Every contest must have a
/// manifest row and every manifest row must name a contest.
pub fn assemble_election(
    mut contests: Vec<Contest>,
    cvrs: Vec<Cvr>,
    manifest: &BTreeMap<String, u64>,
    cards: Option<Vec<BallotCard>>,
) -> Result<Election> {
    for c in &mut contests {
        c.card_upper_bound = *manifest.get(&c.contest_id).ok_or_else(|| {
            Error::parse("manifest", format!("no card upper bound for contest `{}`", c.contest_id))
        })?;
    }
    if let Some(extra) = manifest
        .keys()
        .find(|k| !contests.iter().any(|c| &c.contest_id == *k))
    {
        return Err(Error::parse("manifest", format!("unknown contest `{extra}`")));
    }
    let mut election = Election { contests, cvrs, cards };
    election.index_cards();
    Ok(election)
}

/// Paths of the files that make up one election.
#[derive(Clone, Debug)]
pub struct ElectionPaths<'a> {
    pub contests: &'a Path,
    pub cvrs: &'a Path,
    pub manifest: &'a Path,
    pub cards: Option<&'a Path>,
}

pub fn load_election(paths: &ElectionPaths<'_>) -> Result<Election> {
    let name = |p: &Path| p.display().to_string();
    let contests = parse_contests(&read_text(paths.contests)?, &name(paths.contests))?;
    let cvrs = parse_cvrs(&read_text(paths.cvrs)?, &name(paths.cvrs))?;
    let manifest = parse_manifest(&read_text(paths.manifest)?, &name(paths.manifest))?;
    let cards = match paths.cards {
        Some(p) => Some(parse_cards(&read_text(p)?, &name(p))?),
        None => None,
    };
    assemble_election(contests, cvrs, &manifest, cards)
}

pub fn to_pretty_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("election records serialize");
    s.push('\n');
    s
}

pub fn manifest_csv(contests: &[Contest]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for c in contests {
        w.serialize(ManifestRow {
            contest_id: c.contest_id.clone(),
            card_upper_bound: c.card_upper_bound,
        })
        .expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Serialized forms of an election, keyed by file name.
pub struct ElectionFiles {
    pub contests: String,
    pub cvrs: String,
    pub manifest: String,
    pub cards: Option<String>,
}

impl ElectionFiles {
    pub fn from_election(e: &Election) -> Self {
        ElectionFiles {
            contests: to_pretty_json(&e.contests),
            cvrs: to_pretty_json(&e.cvrs),
            manifest: manifest_csv(&e.contests),
            cards: e.cards.as_ref().map(|c| to_pretty_json(c)),
        }
    }

    pub fn parse(&self) -> Result<Election> {
        let cards = match &self.cards {
            Some(c) => Some(parse_cards(c, "cards")?),
            None => None,
        };
        assemble_election(
            parse_contests(&self.contests, "contests")?,
            parse_cvrs(&self.cvrs, "cvrs")?,
            &parse_manifest(&self.manifest, "manifest")?,
            cards,
        )
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("contests.json"), &self.contests)?;
        std::fs::write(dir.join("cvrs.json"), &self.cvrs)?;
        std::fs::write(dir.join("manifest.csv"), &self.manifest)?;
        if let Some(cards) = &self.cards {
            std::fs::write(dir.join("cards.json"), cards)?;
        }
        Ok(())
    }
}
