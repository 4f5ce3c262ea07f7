use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use crate::layout::Layout;
use crate::{Result, UmapError};

/// Which input a layout was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SourceTag {
    Original,
    Lstm,
    Cnn,
}

impl SourceTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Original => "original",
            SourceTag::Lstm => "lstm",
            SourceTag::Cnn => "cnn",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = UmapError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "original" => Ok(SourceTag::Original),
            "lstm" => Ok(SourceTag::Lstm),
            "cnn" => Ok(SourceTag::Cnn),
            _ => Err(UmapError::Format(format!("unknown source tag {s:?}"))),
        }
    }
}

/// Layout rows as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedLayout {
    pub sample_index: Vec<usize>,
    pub layout: Layout,
    pub tags: Vec<Option<SourceTag>>,
}

/// Writes `sample_index,x,y[,source_tag]`. Without explicit indices rows are
/// numbered from zero.
pub fn write_layout_csv<W: Write>(
    w: W,
    layout: &Layout,
    sample_index: Option<&[usize]>,
    tag: Option<SourceTag>,
) -> Result<()> {
    if let Some(idx) = sample_index {
        if idx.len() != layout.len() {
            return Err(UmapError::Input(format!("{} indices for {} rows", idx.len(), layout.len())));
        }
    }
    let mut w = csv::Writer::from_writer(w);
    match tag {
        Some(_) => w.write_record(["sample_index", "x", "y", "source_tag"])?,
        None => w.write_record(["sample_index", "x", "y"])?,
    }
    for (r, p) in layout.coords.iter().enumerate() {
        let i = sample_index.map_or(r, |idx| idx[r]);
        let mut rec = vec![i.to_string(), p[0].to_string(), p[1].to_string()];
        if let Some(t) = tag {
            rec.push(t.as_str().to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_layout_csv<R: Read>(r: R) -> Result<TaggedLayout> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let tagged = match names.as_slice() {
        ["sample_index", "x", "y"] => false,
        ["sample_index", "x", "y", "source_tag"] => true,
        _ => return Err(UmapError::Format(format!("unexpected layout header {names:?}"))),
    };
    let mut out = TaggedLayout { sample_index: Vec::new(), layout: Layout { coords: Vec::new() }, tags: Vec::new() };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| UmapError::Format(format!("row {}: invalid {what}", line + 1));
        out.sample_index.push(rec[0].parse().map_err(|_| bad("sample_index"))?);
        let x: f64 = rec[1].parse().map_err(|_| bad("x"))?;
        let y: f64 = rec[2].parse().map_err(|_| bad("y"))?;
        if !x.is_finite() || !y.is_finite() {
            return Err(bad("coordinate"));
        }
        out.layout.coords.push([x, y]);
        out.tags.push(if tagged { Some(rec[3].parse()?) } else { None });
    }
    Ok(out)
}
