// SPDX-License-Identifier: MIT OR Apache-2.0

//! Feature streams, segmentations and their on-disk formats.
//!
//! A [`FeatureStream`] is a `T x D` row-major matrix where row order is the
//! temporal order. Two file layouts are supported:
//!
//! * CSV: one frame per row, optional header row, optional leading id column.
//! * Packed binary: `b"FSTR"`, `u32` version, `u64` T, `u64` D, then `T*D`
//!   little-endian `f32` values in row-major order.
//!
//! A [`Segmentation`] stores segment start indices. Index 0 is always present.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FSTR";
pub const FEATURE_VERSION: u32 = 1;
pub const SEGMENTATION_VERSION: u32 = 1;

/// Ordered per-frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStream {
    ids: Vec<String>,
    data: Vec<f64>,
    dim: usize,
}

pub(crate) fn synthetic_id(index: usize) -> String {
    format!("f{index:06}")
}

impl FeatureStream {
    /// Builds a stream from a flat row-major buffer.
    pub fn from_flat(dim: usize, data: Vec<f64>, ids: Option<Vec<String>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("feature dimension must be at least 1"));
        }
        if data.is_empty() {
            return Err(Error::validation(
                "feature stream must contain at least one frame",
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::validation(format!(
                "buffer of {} values is not a multiple of dimension {dim}",
                data.len()
            )));
        }
        let len = data.len() / dim;
        if let Some((pos, v)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Data {
                row: pos / dim,
                col: pos % dim,
                message: format!("non-finite value {v}"),
            });
        }
        let ids = match ids {
            Some(ids) if ids.len() != len => {
                return Err(Error::validation(format!(
                    "{} frame ids for {len} frames",
                    ids.len()
                )))
            }
            Some(ids) => ids,
            None => (0..len).map(synthetic_id).collect(),
        };
        Ok(Self { ids, data, dim })
    }

    /// Builds a stream from rows with synthetic frame ids.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::format(
                    Some(i + 1),
                    format!("expected {dim} values, found {}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::from_flat(dim, data, None)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false: a stream holds at least one frame.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Same frame ids, new feature values of possibly different width.
    pub(crate) fn with_values(&self, dim: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_flat(dim, data, Some(self.ids.clone()))
    }
}

/// On-disk feature layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    #[default]
    Csv,
    PackedBinary,
}

impl FeatureFormat {
    /// Sniffs the packed-binary magic, otherwise assumes CSV.
    pub fn detect(path: &Path) -> Result<Self> {
        let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic).map_err(|e| Error::io(path, e))?;
        Ok(if n == 4 && &magic == FEATURE_MAGIC {
            FeatureFormat::PackedBinary
        } else {
            FeatureFormat::Csv
        })
    }
}

/// CSV layout switches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CsvLayout {
    /// First line is a header and is skipped.
    pub header: bool,
    /// First column holds frame ids.
    pub ids: bool,
}

pub fn load_features(
    path: &Path,
    format: FeatureFormat,
    layout: CsvLayout,
) -> Result<FeatureStream> {
    match format {
        FeatureFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(BufReader::new(file), layout)
        }
        FeatureFormat::PackedBinary => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            read_packed(BufReader::new(file))
        }
    }
}

pub fn read_csv<R: Read>(reader: R, layout: CsvLayout) -> Result<FeatureStream> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(layout.header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let skip = usize::from(layout.ids);
    let mut ids = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    let mut frame = 0usize;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::format(Some(row), e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let width = record.len().saturating_sub(skip);
        match dim {
            None if width == 0 => {
                return Err(Error::format(Some(row), "row has no feature columns"));
            }
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(Error::format(
                    Some(row),
                    format!("ragged row: expected {d} columns, found {width}"),
                ));
            }
            Some(_) => {}
        }
        if layout.ids {
            ids.push(record[0].to_string());
        }
        for (col, field) in record.iter().skip(skip).enumerate() {
            let value: f64 = field.parse().map_err(|_| {
                Error::format(
                    Some(row),
                    format!("column {} is not a number: {field:?}", col + 1),
                )
            })?;
            if !value.is_finite() {
                return Err(Error::Data {
                    row: frame,
                    col,
                    message: format!("non-finite value {field}"),
                });
            }
            data.push(value);
        }
        frame += 1;
    }
    let dim = dim.ok_or_else(|| Error::format(None, "empty feature file"))?;
    FeatureStream::from_flat(dim, data, layout.ids.then_some(ids))
}

pub fn write_csv<W: Write>(stream: &FeatureStream, writer: W, layout: CsvLayout) -> Result<()> {
    let mut out = BufWriter::new(writer);
    let io = |e| Error::io("<csv writer>", e);
    if layout.header {
        let mut cols: Vec<String> = Vec::with_capacity(stream.dim() + 1);
        if layout.ids {
            cols.push("frame".into());
        }
        cols.extend((0..stream.dim()).map(|j| format!("x{j}")));
        writeln!(out, "{}", cols.join(",")).map_err(io)?;
    }
    for (id, row) in stream.ids().iter().zip(stream.rows()) {
        if layout.ids {
            write!(out, "{id},").map_err(io)?;
        }
        let line = row
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(out, "{line}").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_packed<R: Read>(mut reader: R) -> Result<FeatureStream> {
    let mut header = [0u8; 24];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::format(None, "truncated packed-binary header"))?;
    if &header[0..4] != FEATURE_MAGIC {
        return Err(Error::format(None, "bad magic, expected FSTR"));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != FEATURE_VERSION {
        return Err(Error::format(
            None,
            format!("unsupported version {version}"),
        ));
    }
    let len = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    if len == 0 || dim == 0 {
        return Err(Error::format(
            None,
            format!("empty stream in header (T={len}, D={dim})"),
        ));
    }
    let count = len
        .checked_mul(dim)
        .ok_or_else(|| Error::format(None, "header dimensions overflow"))?;
    let mut bytes = vec![0u8; count * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::format(None, format!("payload shorter than {len}x{dim} floats")))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    FeatureStream::from_flat(dim, data, None)
}

/// Writes the packed-binary layout. Values are narrowed to `f32`.
pub fn write_packed<W: Write>(stream: &FeatureStream, writer: W) -> Result<()> {
    let mut out = BufWriter::new(writer);
    let io = |e| Error::io("<binary writer>", e);
    out.write_all(FEATURE_MAGIC).map_err(io)?;
    out.write_all(&FEATURE_VERSION.to_le_bytes()).map_err(io)?;
    out.write_all(&(stream.len() as u64).to_le_bytes())
        .map_err(io)?;
    out.write_all(&(stream.dim() as u64).to_le_bytes())
        .map_err(io)?;
    for v in stream.as_flat() {
        out.write_all(&(*v as f32).to_le_bytes()).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn save_features(
    stream: &FeatureStream,
    path: &Path,
    format: FeatureFormat,
    layout: CsvLayout,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    match format {
        FeatureFormat::Csv => write_csv(stream, file, layout),
        FeatureFormat::PackedBinary => write_packed(stream, file),
    }
    .map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Method that produced a segmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Adwin,
    Ac,
    Rcluster,
    Kmeans,
    Meanshift,
    GroundTruth,
    /// Union split used as the label set of the fusion step.
    Candidates,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Source::Adwin => "adwin",
            Source::Ac => "ac",
            Source::Rcluster => "rcluster",
            Source::Kmeans => "kmeans",
            Source::Meanshift => "meanshift",
            Source::GroundTruth => "ground-truth",
            Source::Candidates => "candidates",
        };
        f.write_str(s)
    }
}

/// Contiguous segments over `num_frames` frames, stored as start indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segmentation {
    boundaries: Vec<usize>,
    num_frames: usize,
    source: Source,
}

impl Segmentation {
    pub fn new(boundaries: Vec<usize>, num_frames: usize, source: Source) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::validation(
                "segmentation must cover at least one frame",
            ));
        }
        if boundaries.first() != Some(&0) {
            return Err(Error::validation("boundaries must start at frame 0"));
        }
        if let Some(w) = boundaries.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::validation(format!(
                "boundaries not strictly increasing: {} then {}",
                w[0], w[1]
            )));
        }
        if let Some(&last) = boundaries.last() {
            if last >= num_frames {
                return Err(Error::validation(format!(
                    "boundary {last} outside stream of {num_frames} frames"
                )));
            }
        }
        Ok(Self {
            boundaries,
            num_frames,
            source,
        })
    }

    /// A single segment spanning the stream.
    pub fn whole(num_frames: usize, source: Source) -> Result<Self> {
        Self::new(vec![0], num_frames, source)
    }

    /// Maximal runs of equal labels become segments.
    pub fn from_labels<L: PartialEq>(labels: &[L], source: Source) -> Result<Self> {
        let mut boundaries = Vec::new();
        for (i, label) in labels.iter().enumerate() {
            if i == 0 || labels[i - 1] != *label {
                boundaries.push(i);
            }
        }
        Self::new(boundaries, labels.len(), source)
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn num_segments(&self) -> usize {
        self.boundaries.len()
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    /// Per-frame segment index.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = Vec::with_capacity(self.num_frames);
        for (j, (start, end)) in self.spans().enumerate() {
            labels.extend(std::iter::repeat_n(j, end + 1 - start));
        }
        labels
    }

    /// Inclusive `(start, end)` frame ranges.
    pub fn spans(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.boundaries.iter().enumerate().map(move |(j, &start)| {
            let end = self
                .boundaries
                .get(j + 1)
                .map_or(self.num_frames - 1, |next| next - 1);
            (start, end)
        })
    }

    /// Index of the segment containing `frame`.
    pub fn segment_of(&self, frame: usize) -> usize {
        self.boundaries.partition_point(|&b| b <= frame) - 1
    }

    /// Boundaries other than the implicit leading 0.
    pub fn interior(&self) -> &[usize] {
        &self.boundaries[1..]
    }

    pub fn to_document(&self, config: Option<serde_json::Value>) -> SegmentationDocument {
        SegmentationDocument {
            version: SEGMENTATION_VERSION,
            source: self.source,
            num_frames: self.num_frames,
            segments: self
                .spans()
                .map(|(start, end)| SegmentSpan { start, end })
                .collect(),
            config,
        }
    }
}

/// Ground-truth annotation; a segmentation tagged `ground-truth`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth(Segmentation);

impl GroundTruth {
    pub fn new(seg: Segmentation) -> Self {
        GroundTruth(seg.with_source(Source::GroundTruth))
    }

    pub fn segmentation(&self) -> &Segmentation {
        &self.0
    }
}

impl std::ops::Deref for GroundTruth {
    type Target = Segmentation;
    fn deref(&self) -> &Segmentation {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpan {
    pub start: usize,
    /// Inclusive.
    pub end: usize,
}

/// Serialized form of a [`Segmentation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentationDocument {
    pub version: u32,
    pub source: Source,
    pub num_frames: usize,
    pub segments: Vec<SegmentSpan>,
    /// Resolved run configuration, for provenance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl SegmentationDocument {
    pub fn to_segmentation(&self) -> Result<Segmentation> {
        if self.version != SEGMENTATION_VERSION {
            return Err(Error::validation(format!(
                "unsupported segmentation version {}",
                self.version
            )));
        }
        let mut expected_start = 0usize;
        let mut boundaries = Vec::with_capacity(self.segments.len());
        for (j, span) in self.segments.iter().enumerate() {
            if span.end < span.start {
                return Err(Error::validation(format!(
                    "segment {j} ends ({}) before it starts ({})",
                    span.end, span.start
                )));
            }
            if j == 0 && span.start != 0 {
                return Err(Error::validation("first segment must start at frame 0"));
            }
            if span.start < expected_start {
                return Err(Error::validation(format!(
                    "segment {j} starting at {} overlaps the previous segment",
                    span.start
                )));
            }
            if span.start > expected_start {
                return Err(Error::validation(format!(
                    "gap before segment {j}: frames {expected_start}..{} uncovered",
                    span.start
                )));
            }
            boundaries.push(span.start);
            expected_start = span.end + 1;
        }
        if self.segments.is_empty() {
            return Err(Error::validation("segmentation has no segments"));
        }
        if expected_start != self.num_frames {
            return Err(Error::validation(format!(
                "segments cover {expected_start} frames but num_frames is {}",
                self.num_frames
            )));
        }
        Segmentation::new(boundaries, self.num_frames, self.source)
    }
}

pub fn write_segmentation(
    seg: &Segmentation,
    path: &Path,
    config: Option<serde_json::Value>,
) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&seg.to_document(config))
        .map_err(|e| Error::Compute(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_segmentation(path: &Path) -> Result<Segmentation> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_segmentation(&text)
}

pub fn parse_segmentation(text: &str) -> Result<Segmentation> {
    let doc: SegmentationDocument =
        serde_json::from_str(text).map_err(|e| Error::format(Some(e.line()), e.to_string()))?;
    doc.to_segmentation()
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    load_segmentation(path).map(GroundTruth::new)
}
