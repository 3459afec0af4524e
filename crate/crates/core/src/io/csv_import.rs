use std::path::Path;

use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

/// Reads a CSV of embeddings whose header row is `dim0,dim1,...,dim{d-1}`.
pub fn read_csv_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let file = std::fs::File::open(path)?;
    read_csv_from(file)
}

pub fn read_csv_from<R: std::io::Read>(reader: R) -> Result<EmbeddingMatrix> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Csv(e.to_string()))?.clone();
    let d = headers.len();
    for (i, h) in headers.iter().enumerate() {
        if h != format!("dim{i}") {
            return Err(Error::Csv(format!(
                "header column {i} is {h:?}, expected \"dim{i}\""
            )));
        }
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Csv(e.to_string()))?;
        if record.len() != d {
            return Err(Error::Csv(format!(
                "row {row} has {} fields, expected {d}",
                record.len()
            )));
        }
        for (col, field) in record.iter().enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| Error::Csv(format!("row {row}, column {col}: cannot parse {field:?}")))?;
            data.push(v);
        }
        n += 1;
    }
    EmbeddingMatrix::new(n, d, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dim_header() {
        let text = "dim0,dim1\n1.5,2\n-3,4e-1\n";
        let m = read_csv_from(text.as_bytes()).unwrap();
        assert_eq!((m.n(), m.d()), (2, 2));
        assert_eq!(m.row(1), &[-3.0, 0.4]);
    }

    #[test]
    fn rejects_wrong_header() {
        let err = read_csv_from("a,b\n1,2\n".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("dim0"));
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(read_csv_from("dim0,dim1\n1,2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn rejects_nan() {
        assert!(read_csv_from("dim0\nNaN\n".as_bytes()).is_err());
    }
}
