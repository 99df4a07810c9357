//! Live audits: the retrieved cards and their manual readings come from a
//! file or from a person at a prompt.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{Audit, Request};
use crate::error::{Error, Result};
use crate::model::{Contest, Selection, VoteRecord};
use crate::retrieval::CardRef;

/// What came back for one requested id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvrEntry {
    pub imprinted_id: Option<String>,
    pub votes: VoteRecord,
}

/// MVR file: JSON object mapping each requested id to the card that was
/// returned for it, or `null` when no card was returned.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MvrFile(BTreeMap<String, Option<MvrEntry>>);

impl MvrFile {
    pub fn parse(text: &str, what: &str) -> Result<Self> {
        crate::io::parse_json(text, what)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_text(path)?, &path.display().to_string())
    }

    pub fn insert(&mut self, id: impl Into<String>, entry: Option<MvrEntry>) {
        self.0.insert(id.into(), entry);
    }

    fn lookup(&self, id: &str) -> Option<(usize, &Option<MvrEntry>)> {
        self.0.iter().enumerate().find(|(_, (k, _))| *k == id).map(|(i, (_, v))| (i, v))
    }
}

/// Run the audit to completion with answers from an MVR file. Stops with
/// [`Error::MissingMvr`] naming the draw when a requested id has no entry.
pub fn run_with_mvr_file(audit: &mut Audit, mvrs: &MvrFile) -> Result<()> {
    while !audit.verdict().is_terminal() {
        let Some(pending) = audit.begin_draw()? else { break };
        let (card, mvr) = match &pending.request {
            Request::Retrieve { id } => {
                let (handle, entry) = mvrs.lookup(id).ok_or_else(|| Error::MissingMvr {
                    id: id.clone(),
                    draw: pending.draw,
                })?;
                match entry {
                    None => (None, None),
                    Some(e) => {
                        let mvr = (e.imprinted_id.as_deref() == Some(id.as_str())).then(|| e.votes.clone());
                        let card = CardRef {
                            handle,
                            imprinted_id: e.imprinted_id.clone(),
                        };
                        (Some(card), mvr)
                    }
                }
            }
            Request::Cached { .. } | Request::Phantom => (None, None),
        };
        audit.complete_draw(card, mvr)?;
    }
    Ok(())
}

const NO_CARD: &str = "-";
const ESCALATE: &str = "!";

fn read_answer<R: BufRead>(input: &mut R) -> Result<String> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::UnexpectedEof,
            "input ended during the audit",
        )));
    }
    Ok(line.trim().to_owned())
}

fn read_selection<R: BufRead, W: Write>(contest: &Contest, input: &mut R, out: &mut W) -> Result<Option<Selection>> {
    loop {
        write!(
            out,
            "  {}: candidate ({}), undervote, overvote, or blank if not on the card: ",
            contest.contest_id,
            contest.candidates.join(", ")
        )?;
        out.flush()?;
        let answer = read_answer(input)?;
        if answer.is_empty() {
            return Ok(None);
        }
        let sel = Selection::from(answer.clone());
        match &sel {
            Selection::Candidate(c) if !contest.has_candidate(c) => {
                writeln!(out, "  `{answer}` is not a candidate in {}", contest.contest_id)?;
            }
            _ => return Ok(Some(sel)),
        }
    }
}

/// Prompt a person for every retrieval. The prompt never shows the CVR, so
/// the reader transcribes the card without a reference to agree with.
pub fn run_interactive<R: BufRead, W: Write>(
    audit: &mut Audit,
    contests: &[Contest],
    input: &mut R,
    out: &mut W,
) -> Result<()> {
    let mut handles: BTreeMap<String, usize> = BTreeMap::new();
    while !audit.verdict().is_terminal() {
        let Some(pending) = audit.begin_draw()? else { break };
        let (card, mvr) = match &pending.request {
            Request::Phantom => {
                writeln!(out, "draw {}: phantom CVR, nothing to retrieve", pending.draw)?;
                (None, None)
            }
            Request::Cached { id } => {
                writeln!(out, "draw {}: id {id} was drawn before; reusing that card", pending.draw)?;
                (None, None)
            }
            Request::Retrieve { id } => {
                writeln!(out, "draw {}: retrieve the card imprinted `{id}`", pending.draw)?;
                write!(
                    out,
                    "  imprint on the returned card (blank if none, `{NO_CARD}` if no card, `{ESCALATE}` for a full hand count): "
                )?;
                out.flush()?;
                let answer = read_answer(input)?;
                if answer == ESCALATE {
                    audit.escalate(format!("requested at draw {}", pending.draw));
                    break;
                }
                if answer == NO_CARD {
                    (None, None)
                } else {
                    let imprinted_id = (!answer.is_empty()).then_some(answer);
                    let next = handles.len();
                    let handle = *handles.entry(id.clone()).or_insert(next);
                    let mvr = if imprinted_id.as_deref() == Some(id.as_str()) {
                        let mut votes = VoteRecord::new();
                        for contest in contests {
                            if let Some(sel) = read_selection(contest, input, out)? {
                                votes.insert(contest.contest_id.clone(), sel);
                            }
                        }
                        Some(votes)
                    } else {
                        writeln!(out, "  card does not bear the requested id; scored as least favorable")?;
                        None
                    };
                    (Some(CardRef { handle, imprinted_id }), mvr)
                }
            }
        };
        audit.complete_draw(card, mvr)?;
    }
    Ok(())
}
