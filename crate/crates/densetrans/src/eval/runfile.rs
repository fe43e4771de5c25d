//! Six-column whitespace run files:
//! `query_id Q0 question_id rank score tag`, rank starting at 1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::RankedList;
use crate::error::{Error, Result};

pub fn write_run_file(path: &Path, lists: &[RankedList], tag: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for list in lists {
        for (rank, (id, score)) in list.items().iter().enumerate() {
            writeln!(w, "{} Q0 {} {} {} {}", list.query_id, id, rank + 1, score, tag)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_run_file(path: &Path) -> Result<Vec<RankedList>> {
    let file = File::open(path).map_err(|e| Error::Format {
        path: path.display().to_string(),
        msg: format!("cannot open: {e}"),
    })?;
    let mut order: Vec<String> = Vec::new();
    let mut grouped: std::collections::HashMap<String, Vec<(String, f64)>> =
        std::collections::HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 6 {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                msg: format!("expected 6 whitespace-separated columns, got {}", parts.len()),
            });
        }
        let score: f64 = parts[4].parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg: format!("bad score {:?}", parts[4]),
        })?;
        let qid = parts[0].to_string();
        if !grouped.contains_key(&qid) {
            order.push(qid.clone());
        }
        grouped.entry(qid).or_default().push((parts[2].to_string(), score));
    }
    order
        .into_iter()
        .map(|qid| {
            let items = grouped.remove(&qid).unwrap();
            RankedList::new(qid, items)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_preserves_rankings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        let lists = vec![
            RankedList::new("q1", vec![("a".into(), 0.9), ("b".into(), 0.5)]).unwrap(),
            RankedList::new("q2", vec![("c".into(), 0.25)]).unwrap(),
        ];
        write_run_file(&path, &lists, "test").unwrap();
        let back = read_run_file(&path).unwrap();
        assert_eq!(back, lists);
    }

    #[test]
    fn malformed_line_reports_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.txt");
        std::fs::write(&path, "q1 Q0 a 1 0.5 tag\nq1 Q0 broken\n").unwrap();
        let err = read_run_file(&path).unwrap_err().to_string();
        assert!(err.contains(":2:"), "{err}");
    }
}
