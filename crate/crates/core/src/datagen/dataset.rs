use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imavae::CaseTag;
use crate::numkit::Matrix;

/// Observed table: treatment, outcome, optional covariates, features and,
/// for generated data, the true mediator.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    t: Vec<u8>,
    y: Vec<f64>,
    w: Option<Matrix>,
    x: Matrix,
    z_true: Option<Matrix>,
}

impl Dataset {
    pub fn new(
        t: Vec<u8>,
        y: Vec<f64>,
        w: Option<Matrix>,
        x: Matrix,
        z_true: Option<Matrix>,
    ) -> Result<Self> {
        let n = t.len();
        if y.len() != n {
            return Err(Error::dim("outcome column", n, y.len()));
        }
        if x.rows() != n {
            return Err(Error::dim("feature rows", n, x.rows()));
        }
        for (name, m) in [("covariate", &w), ("mediator", &z_true)] {
            if let Some(m) = m {
                if m.rows() != n {
                    return Err(Error::dim(format!("{name} rows"), n, m.rows()));
                }
                if m.cols() == 0 {
                    return Err(Error::Data(format!("{name} matrix has no columns")));
                }
            }
        }
        if let Some(row) = t.iter().position(|&v| v > 1) {
            return Err(Error::Domain {
                row: row + 1,
                column: "t".into(),
                message: format!("treatment must be 0 or 1, got {}", t[row]),
            });
        }
        let finite = y.iter().all(|v| v.is_finite())
            && x.is_finite()
            && w.as_ref().is_none_or(Matrix::is_finite)
            && z_true.as_ref().is_none_or(Matrix::is_finite);
        if !finite {
            return Err(Error::NonFinite {
                context: "dataset".into(),
            });
        }
        Ok(Dataset {
            t,
            y,
            w,
            x,
            z_true,
        })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t(&self) -> &[u8] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn w(&self) -> Option<&Matrix> {
        self.w.as_ref()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn z_true(&self) -> Option<&Matrix> {
        self.z_true.as_ref()
    }

    pub fn x_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn cov_dim(&self) -> usize {
        self.w.as_ref().map_or(0, Matrix::cols)
    }

    pub fn z_dim(&self) -> usize {
        self.z_true.as_ref().map_or(0, Matrix::cols)
    }

    /// Case b exactly when covariates are present.
    pub fn case(&self) -> CaseTag {
        if self.w.is_some() {
            CaseTag::B
        } else {
            CaseTag::A
        }
    }

    pub fn treated_count(&self) -> usize {
        self.t.iter().filter(|&&t| t == 1).count()
    }

    /// Rows in the given order (repeats allowed).
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            w: self.w.as_ref().map(|m| m.select_rows(idx)),
            x: self.x.select_rows(idx),
            z_true: self.z_true.as_ref().map(|m| m.select_rows(idx)),
        }
    }

    /// Same rows with the true mediator removed.
    pub fn without_truth(&self) -> Dataset {
        Dataset {
            z_true: None,
            ..self.clone()
        }
    }

    pub fn schema(&self) -> CsvSchema {
        CsvSchema {
            cov_dim: self.cov_dim(),
            x_dim: self.x_dim(),
            z_dim: self.z_dim(),
        }
    }

    /// Writes `t,y[,w..],x..[,z..]` with shortest round-trip float text.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        wtr.write_record(self.schema().header())?;
        let mut rec: Vec<String> = Vec::new();
        for r in 0..self.n() {
            rec.clear();
            rec.push(self.t[r].to_string());
            rec.push(self.y[r].to_string());
            for m in [self.w.as_ref(), Some(&self.x), self.z_true.as_ref()].into_iter().flatten() {
                rec.extend(m.row(r).iter().map(f64::to_string));
            }
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ASCII"))
    }

    pub fn read_csv<R: Read>(input: R, schema: Option<&CsvSchema>) -> Result<Dataset> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let schema = match schema {
            Some(s) => *s,
            None => CsvSchema::infer(&headers)?,
        };
        let index = schema.column_index(&headers)?;

        let mut t = Vec::new();
        let mut y = Vec::new();
        let mut w = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = r + 1;
            if rec.len() != headers.len() {
                return Err(Error::Domain {
                    row,
                    column: "*".into(),
                    message: format!("expected {} fields, found {}", headers.len(), rec.len()),
                });
            }
            let cell = |col: usize| -> Result<f64> {
                let text = &rec[col];
                let v: f64 = text.parse().map_err(|_| Error::Domain {
                    row,
                    column: headers[col].clone(),
                    message: format!("`{text}` is not a number"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Domain {
                        row,
                        column: headers[col].clone(),
                        message: "value is not finite".into(),
                    });
                }
                Ok(v)
            };
            let tv = cell(index.t)?;
            if tv != 0.0 && tv != 1.0 {
                return Err(Error::Domain {
                    row,
                    column: "t".into(),
                    message: format!("treatment must be 0 or 1, got {tv}"),
                });
            }
            t.push(tv as u8);
            y.push(cell(index.y)?);
            for &c in &index.w {
                w.push(cell(c)?);
            }
            for &c in &index.x {
                x.push(cell(c)?);
            }
            for &c in &index.z {
                z.push(cell(c)?);
            }
        }
        let n = t.len();
        let mat = |data: Vec<f64>, cols: usize| -> Result<Option<Matrix>> {
            if cols == 0 {
                Ok(None)
            } else {
                Matrix::from_vec(n, cols, data).map(Some)
            }
        };
        let w = mat(w, schema.cov_dim)?;
        let z = mat(z, schema.z_dim)?;
        let x = Matrix::from_vec(n, schema.x_dim, x)?;
        Dataset::new(t, y, w, x, z)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Loads a dataset, checking the header against `schema`.
pub fn load_dataset_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(std::io::BufReader::new(file), Some(schema))
}

/// Loads a dataset, taking the column layout from its header.
pub fn load_dataset_csv_inferred(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Dataset::read_csv(std::io::BufReader::new(file), None)
}

/// Column counts of a dataset CSV.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub cov_dim: usize,
    pub x_dim: usize,
    pub z_dim: usize,
}

struct ColumnIndex {
    t: usize,
    y: usize,
    w: Vec<usize>,
    x: Vec<usize>,
    z: Vec<usize>,
}

impl CsvSchema {
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "y".to_string()];
        h.extend((0..self.cov_dim).map(|i| format!("w{i}")));
        h.extend((0..self.x_dim).map(|i| format!("x{i}")));
        h.extend((0..self.z_dim).map(|i| format!("z{i}")));
        h
    }

    /// Counts `w*`, `x*`, `z*` columns; indices must run from 0 without gaps.
    pub fn infer(headers: &[String]) -> Result<Self> {
        let mut counts = [0usize; 3];
        for h in headers {
            if h == "t" || h == "y" {
                continue;
            }
            let slot = match h.chars().next() {
                Some('w') => 0,
                Some('x') => 1,
                Some('z') => 2,
                _ => return Err(Error::Schema(format!("unexpected column `{h}`"))),
            };
            if h[1..].parse::<usize>().is_err() {
                return Err(Error::Schema(format!("unexpected column `{h}`")));
            }
            counts[slot] += 1;
        }
        let schema = CsvSchema {
            cov_dim: counts[0],
            x_dim: counts[1],
            z_dim: counts[2],
        };
        if schema.x_dim == 0 {
            return Err(Error::Schema("missing column `x0`".into()));
        }
        Ok(schema)
    }

    fn column_index(&self, headers: &[String]) -> Result<ColumnIndex> {
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            if pos.insert(h.as_str(), i).is_some() {
                return Err(Error::Schema(format!("duplicate column `{h}`")));
            }
        }
        let expected = self.header();
        let find = |name: &str| {
            pos.get(name)
                .copied()
                .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
        };
        let idx = ColumnIndex {
            t: find("t")?,
            y: find("y")?,
            w: (0..self.cov_dim).map(|i| find(&format!("w{i}"))).collect::<Result<_>>()?,
            x: (0..self.x_dim).map(|i| find(&format!("x{i}"))).collect::<Result<_>>()?,
            z: (0..self.z_dim).map(|i| find(&format!("z{i}"))).collect::<Result<_>>()?,
        };
        if let Some(extra) = headers.iter().find(|h| !expected.contains(h)) {
            return Err(Error::Schema(format!("unexpected column `{extra}`")));
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_rows() -> Dataset {
        Dataset::new(
            vec![0, 1],
            vec![0.1, -2.5e-17],
            Some(Matrix::from_rows(&[vec![1.0 / 3.0], vec![-7.25]]).unwrap()),
            Matrix::from_rows(&[vec![0.5, 1e300], vec![f64::MIN_POSITIVE, -0.0]]).unwrap(),
            Some(Matrix::from_rows(&[vec![std::f64::consts::PI], vec![2.0]]).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = two_rows();
        let text = ds.to_csv_string().unwrap();
        assert!(text.starts_with("t,y,w0,x0,x1,z0\n"));
        let back = Dataset::read_csv(text.as_bytes(), Some(&ds.schema())).unwrap();
        for (a, b) in back.x().data().iter().zip(ds.x().data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back.y()[1].to_bits(), ds.y()[1].to_bits());
        assert_eq!(back, ds);
        assert_eq!(back.to_csv_string().unwrap(), text);
        let inferred = Dataset::read_csv(text.as_bytes(), None).unwrap();
        assert_eq!(inferred, ds);
    }

    #[test]
    fn missing_outcome_is_named() {
        let text = "t,x0\n0,1.0\n";
        let schema = CsvSchema {
            cov_dim: 0,
            x_dim: 1,
            z_dim: 0,
        };
        let err = Dataset::read_csv(text.as_bytes(), Some(&schema)).unwrap_err();
        assert!(matches!(&err, Error::Schema(m) if m.contains("`y`")), "{err}");
    }

    #[test]
    fn bad_treatment_cites_row() {
        let mut text = String::from("t,y,x0\n");
        for i in 0..10 {
            let t = if i == 6 { 2 } else { i % 2 };
            text.push_str(&format!("{t},0.5,1.0\n"));
        }
        let err = Dataset::read_csv(text.as_bytes(), None).unwrap_err();
        match err {
            Error::Domain { row, column, .. } => {
                assert_eq!(row, 7);
                assert_eq!(column, "t");
            }
            e => panic!("unexpected {e}"),
        }
        assert!(Dataset::read_csv("t,y,x0\n0,abc,1\n".as_bytes(), None).is_err());
        assert!(Dataset::read_csv("t,y,x0,q\n0,1,1,1\n".as_bytes(), None).is_err());
    }

    #[test]
    fn select_rows_and_case() {
        let ds = two_rows();
        assert_eq!(ds.case(), CaseTag::B);
        let s = ds.select_rows(&[1, 1, 0]);
        assert_eq!(s.t(), &[1, 1, 0]);
        assert_eq!(s.x().row(2), ds.x().row(0));
        assert_eq!(ds.without_truth().z_dim(), 0);
        assert!(Dataset::new(vec![0], vec![], None, Matrix::zeros(1, 1), None).is_err());
    }
}
