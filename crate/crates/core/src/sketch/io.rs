use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Point, Sketch, Stroke};
use crate::error::{Error, Result};

/// Record layout of a sketch line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `{"category": .., "strokes": [[[x,y],..],..], "labels": [[..],..]}`
    Native,
    /// `{"word": .., "drawing": [[xs, ys], ..]}`
    QuickDraw,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "native" => Ok(Format::Native),
            "quickdraw" => Ok(Format::QuickDraw),
            other => Err(Error::InvalidArgument(format!("unknown sketch format '{other}'"))),
        }
    }
}

#[derive(Deserialize)]
struct NativeRecord {
    #[serde(default)]
    category: String,
    strokes: Vec<Vec<[f64; 2]>>,
    #[serde(default)]
    labels: Option<Vec<Vec<i64>>>,
}

#[derive(Serialize)]
struct NativeRecordOut<'a> {
    category: &'a str,
    strokes: Vec<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<&'a [usize]>>,
}

#[derive(Deserialize)]
struct QuickDrawRecord {
    #[serde(default)]
    word: String,
    #[serde(default)]
    category: Option<String>,
    drawing: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    labels: Option<Vec<Vec<i64>>>,
}

/// Per-category class names; the number of classes is `classes.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub category: String,
    pub classes: Vec<String>,
}

impl LabelMap {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Parse one record.
pub fn parse_sketch(text: &str, format: Format) -> Result<Sketch> {
    let (category, strokes, labels) = match format {
        Format::Native => {
            let rec: NativeRecord =
                serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
            let strokes = rec
                .strokes
                .into_iter()
                .map(|s| s.into_iter().map(|[x, y]| Point::new(x, y)).collect())
                .collect::<Vec<Vec<Point>>>();
            (rec.category, strokes, rec.labels)
        }
        Format::QuickDraw => {
            let rec: QuickDrawRecord =
                serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
            let mut strokes = Vec::with_capacity(rec.drawing.len());
            for (r, s) in rec.drawing.into_iter().enumerate() {
                if s.len() < 2 {
                    return Err(Error::Parse(format!("stroke {r} needs xs and ys lists")));
                }
                let (xs, ys) = (&s[0], &s[1]);
                if xs.len() != ys.len() {
                    return Err(Error::Validation(format!(
                        "stroke {r} has {} xs and {} ys",
                        xs.len(),
                        ys.len()
                    )));
                }
                strokes.push(xs.iter().zip(ys).map(|(&x, &y)| Point::new(x, y)).collect());
            }
            (rec.category.unwrap_or(rec.word), strokes, rec.labels)
        }
    };

    if let Some(l) = &labels {
        if l.len() != strokes.len() {
            return Err(Error::Validation(format!(
                "{} label lists for {} strokes",
                l.len(),
                strokes.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(strokes.len());
    for (r, points) in strokes.into_iter().enumerate() {
        let stroke_labels = match &labels {
            None => None,
            Some(l) => {
                let mut v = Vec::with_capacity(l[r].len());
                for &c in &l[r] {
                    if c < 0 {
                        return Err(Error::Validation(format!("negative class {c} in stroke {r}")));
                    }
                    v.push(c as usize);
                }
                Some(v)
            }
        };
        out.push(Stroke { points, labels: stroke_labels });
    }
    let sketch = Sketch::new(category, out);
    sketch.validate()?;
    Ok(sketch)
}

/// Serialize a sketch as one native-format JSON line (no trailing newline).
pub fn to_native_line(sketch: &Sketch) -> String {
    let labels = if sketch.is_labeled() {
        Some(sketch.strokes.iter().map(|s| s.labels.as_deref().unwrap_or(&[])).collect())
    } else {
        None
    };
    let rec = NativeRecordOut {
        category: &sketch.category,
        strokes: sketch
            .strokes
            .iter()
            .map(|s| s.points.iter().map(|p| [p.x, p.y]).collect())
            .collect(),
        labels,
    };
    serde_json::to_string(&rec).expect("sketch serialization cannot fail")
}

/// Read every non-blank line of an NDJSON stream.
pub fn read_sketches<R: BufRead>(reader: R, format: Format) -> Result<Vec<Sketch>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sketch = parse_sketch(&line, format).map_err(|e| match e {
            Error::Parse(m) => Error::Parse(format!("line {}: {m}", i + 1)),
            Error::Validation(m) => Error::Validation(format!("line {}: {m}", i + 1)),
            other => other,
        })?;
        out.push(sketch);
    }
    Ok(out)
}

pub fn write_sketches<W: Write>(mut writer: W, sketches: &[Sketch]) -> Result<()> {
    for s in sketches {
        writeln!(writer, "{}", to_native_line(s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_native_record() {
        let s = parse_sketch(r#"{"strokes":[[[0,0],[10,0]]],"category":"t"}"#, Format::Native)
            .unwrap();
        assert_eq!(s.strokes.len(), 1);
        assert_eq!(s.point_count(), 2);
        assert_eq!(s.category, "t");
        assert!(!s.is_labeled());
    }

    #[test]
    fn quickdraw_transposes_xs_and_ys() {
        let s = parse_sketch(r#"{"drawing":[[[0,10],[0,0]]]}"#, Format::QuickDraw).unwrap();
        // zip xs with ys
        let xs = [0.0, 10.0];
        let ys = [0.0, 0.0];
        let expected: Vec<Point> = xs.iter().zip(&ys).map(|(&x, &y)| Point::new(x, y)).collect();
        assert_eq!(s.strokes[0].points, expected);
    }

    #[test]
    fn label_length_mismatch_is_rejected() {
        let err = parse_sketch(
            r#"{"strokes":[[[0,0],[10,0]]],"labels":[[0,1,0]],"category":"t"}"#,
            Format::Native,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_json_and_empty_strokes() {
        assert!(matches!(parse_sketch("{\"strokes\": [", Format::Native), Err(Error::Parse(_))));
        assert!(matches!(
            parse_sketch(r#"{"strokes":[[]],"category":"t"}"#, Format::Native),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            parse_sketch(r#"{"strokes":[],"category":"t"}"#, Format::Native),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn native_line_round_trip() {
        let line = r#"{"category":"cup","strokes":[[[1.5,2.0],[3.0,4.25]],[[7.0,8.0]]],"labels":[[0,1],[2]]}"#;
        let s = parse_sketch(line, Format::Native).unwrap();
        let again = parse_sketch(&to_native_line(&s), Format::Native).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn reader_reports_line_numbers() {
        let data = "{\"strokes\":[[[0,0]]]}\n\n{\"strokes\":[[]]}\n";
        let err = read_sketches(data.as_bytes(), Format::Native).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}
