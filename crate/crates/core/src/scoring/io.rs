//! Binary score files.
//!
//! Layout, little-endian:
//!
//! ```text
//! "SVSS" u32 version u64 n_views u64 problems
//! u32 table_len  category names joined by '\n'
//! u8 has_digest  [u8; 32] digest (zeros when absent)
//! n_views × { u16 category u16 object u16 pose u16 view
//!             f64 sum_individual f64 sum_global u64 n_problems f64 scaled }
//! ```

use std::fs;
use std::io::{self, Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::{ScoreEntry, ScoreTable, ScoringError};
use crate::dataset::ViewId;
use crate::Digest;

const MAGIC: &[u8; 4] = b"SVSS";
const VERSION: u32 = 1;

pub fn write_scores<W: Write>(
    table: &ScoreTable,
    w: &mut W,
    digest: Option<&Digest>,
) -> Result<(), ScoringError> {
    let mut categories: Vec<&str> = table
        .entries()
        .iter()
        .map(|e| e.id.category.as_str())
        .collect();
    categories.dedup();
    if categories.len() > u16::MAX as usize {
        return Err(ScoringError::Malformed("too many categories".into()));
    }
    let names = categories.join("\n");
    w.write_all(MAGIC)?;
    w.write_u32::<LE>(VERSION)?;
    w.write_u64::<LE>(table.len() as u64)?;
    w.write_u64::<LE>(table.problems)?;
    w.write_u32::<LE>(names.len() as u32)?;
    w.write_all(names.as_bytes())?;
    w.write_u8(digest.is_some() as u8)?;
    w.write_all(digest.map_or(&[0u8; Digest::LEN], |d| d.as_bytes()))?;
    let mut cat = 0u16;
    for e in table.entries() {
        if e.id.category != categories[cat as usize] {
            cat += 1;
        }
        w.write_u16::<LE>(cat)?;
        w.write_u16::<LE>(e.id.object_index)?;
        w.write_u16::<LE>(e.id.pose_index)?;
        w.write_u16::<LE>(e.id.view_index)?;
        w.write_f64::<LE>(e.sum_individual)?;
        w.write_f64::<LE>(e.sum_global)?;
        w.write_u64::<LE>(e.n_problems)?;
        w.write_f64::<LE>(e.scaled)?;
    }
    Ok(())
}

pub fn save_scores(
    table: &ScoreTable,
    path: impl AsRef<Path>,
    digest: Option<&Digest>,
) -> Result<(), ScoringError> {
    let mut buf = Vec::new();
    write_scores(table, &mut buf, digest)?;
    fs::write(path, buf)?;
    Ok(())
}

fn truncated(e: io::Error) -> ScoringError {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        ScoringError::Truncated
    } else {
        ScoringError::Io(e)
    }
}

pub fn read_scores(bytes: &[u8]) -> Result<(ScoreTable, Option<Digest>), ScoringError> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(truncated)?;
    if &magic != MAGIC {
        return Err(ScoringError::BadMagic);
    }
    let version = cur.read_u32::<LE>().map_err(truncated)?;
    if version != VERSION {
        return Err(ScoringError::UnsupportedVersion(version));
    }
    let n = cur.read_u64::<LE>().map_err(truncated)?;
    let problems = cur.read_u64::<LE>().map_err(truncated)?;
    let table_len = cur.read_u32::<LE>().map_err(truncated)? as usize;
    let mut names = vec![0u8; table_len];
    cur.read_exact(&mut names).map_err(truncated)?;
    let names = String::from_utf8(names)
        .map_err(|_| ScoringError::Malformed("category table is not UTF-8".into()))?;
    let categories: Vec<&str> = if names.is_empty() {
        Vec::new()
    } else {
        names.split('\n').collect()
    };
    let has_digest = cur.read_u8().map_err(truncated)?;
    let mut d = [0u8; Digest::LEN];
    cur.read_exact(&mut d).map_err(truncated)?;
    let digest = match has_digest {
        0 => None,
        1 => Some(Digest(d)),
        x => return Err(ScoringError::Malformed(format!("digest flag {x}"))),
    };

    const RECORD: u64 = 8 + 4 * 8;
    let remaining = bytes.len() as u64 - cur.position();
    if remaining < n.saturating_mul(RECORD) {
        return Err(ScoringError::Truncated);
    }
    if remaining > n * RECORD {
        return Err(ScoringError::Malformed(format!(
            "{} trailing bytes",
            remaining - n * RECORD
        )));
    }
    let mut entries = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let cat = cur.read_u16::<LE>()? as usize;
        let category = *categories
            .get(cat)
            .ok_or_else(|| ScoringError::Malformed(format!("category index {cat} out of range")))?;
        let id = ViewId::new(
            category,
            cur.read_u16::<LE>()?,
            cur.read_u16::<LE>()?,
            cur.read_u16::<LE>()?,
        );
        entries.push(ScoreEntry {
            id,
            sum_individual: cur.read_f64::<LE>()?,
            sum_global: cur.read_f64::<LE>()?,
            n_problems: cur.read_u64::<LE>()?,
            scaled: cur.read_f64::<LE>()?,
        });
    }
    Ok((ScoreTable::from_entries(entries, problems)?, digest))
}

pub fn load_scores(path: impl AsRef<Path>) -> Result<(ScoreTable, Option<Digest>), ScoringError> {
    read_scores(&fs::read(path)?)
}
