use std::io::{self, Write};

use super::{ProteinSequence, SeqError, SequenceSource};

/// Parses FASTA text into protein sequences.
///
/// Sequence lines are concatenated with all whitespace removed and letters
/// upper-cased. Offsets in errors are residue offsets within the record.
pub fn parse_fasta(bytes: &[u8]) -> Result<Vec<ProteinSequence>, SeqError> {
    let mut records = Vec::new();
    let mut current: Option<(String, Vec<u8>)> = None;

    for (line_no, line) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = strip_cr(line);
        if let Some(header) = line.strip_prefix(b">") {
            if let Some((id, residues)) = current.take() {
                records.push(finish(id, residues)?);
            }
            let header = String::from_utf8_lossy(header);
            let id = header.split_whitespace().next().unwrap_or("").to_string();
            current = Some((id, Vec::new()));
        } else if line.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        } else {
            match current.as_mut() {
                Some((_, residues)) => {
                    residues.extend(line.iter().copied().filter(|b| !b.is_ascii_whitespace()))
                }
                None => return Err(SeqError::MissingHeader { line: line_no + 1 }),
            }
        }
    }
    if let Some((id, residues)) = current.take() {
        records.push(finish(id, residues)?);
    }
    Ok(records)
}

fn strip_cr(line: &[u8]) -> &[u8] {
    line.strip_suffix(b"\r").unwrap_or(line)
}

fn finish(id: String, residues: Vec<u8>) -> Result<ProteinSequence, SeqError> {
    Ok(ProteinSequence::new(id, residues)?.with_source(SequenceSource::Fasta))
}

/// Writes records with sequence lines wrapped at `width` residues.
pub fn write_fasta<W: Write>(out: &mut W, seqs: &[ProteinSequence], width: usize) -> io::Result<()> {
    let width = width.max(1);
    for s in seqs {
        writeln!(out, ">{}", s.id())?;
        for chunk in s.residues().chunks(width) {
            out.write_all(chunk)?;
            out.write_all(b"\n")?;
        }
    }
    Ok(())
}
