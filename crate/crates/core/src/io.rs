//! MetaImage volume files, experiment manifests and metric reports.
//!
//! Volumes use a MetaImage subset. The text header lists, one `Key = value`
//! per line:
//!
//! ```text
//! ObjectType = Image
//! NDims = 3                      (4 for score volumes)
//! DimSize = nx ny nz [C]
//! ElementSpacing = sx sy sz [1.0]
//! ElementType = MET_UCHAR        (MET_FLOAT for score volumes)
//! ElementByteOrderMSB = False
//! ElementDataFile = LOCAL        (or a file name relative to the header)
//! ```
//!
//! `ElementDataFile` ends the header. With `LOCAL` the little-endian payload
//! follows the header newline in the same `.mha` file; otherwise it is read
//! from the named sibling file (`.mhd` + `.raw`). Payload order is x fastest,
//! then y, z, and for scores the channel slowest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{MetricFlag, MetricReport, OrganMetrics};
use crate::volume::{GridGeometry, LabelVolume, ScoreVolume, MAX_LABELS};

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Labels(LabelVolume),
    Scores(ScoreVolume<f32>),
}

impl Volume {
    pub fn geometry(&self) -> &GridGeometry {
        match self {
            Volume::Labels(v) => v.geometry(),
            Volume::Scores(v) => v.geometry(),
        }
    }

    pub fn kind(&self) -> ElementKind {
        match self {
            Volume::Labels(_) => ElementKind::Labels,
            Volume::Scores(_) => ElementKind::Scores,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    /// `MET_UCHAR`, 3 dimensions.
    Labels,
    /// `MET_FLOAT`, 4 dimensions.
    Scores,
}

/// Parsed header: what a volume holds without reading its payload.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub geometry: GridGeometry,
    pub kind: ElementKind,
    /// Channel count for scores, 1 for labels.
    pub channels: usize,
    pub data_file: DataFile,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataFile {
    /// Payload starts at this byte offset of the header file.
    Local(usize),
    External(PathBuf),
}

impl VolumeHeader {
    pub fn payload_bytes(&self) -> usize {
        let n = self.geometry.voxel_count() * self.channels;
        match self.kind {
            ElementKind::Labels => n,
            ElementKind::Scores => n * 4,
        }
    }
}

fn parse_list<T: std::str::FromStr>(path: &Path, key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split_whitespace()
        .map(|t| t.parse::<T>().map_err(|_| Error::header(path, key, format!("cannot parse `{t}`"))))
        .collect()
}

/// Parse the header of a `.mha`/`.mhd` file.
pub fn read_header(path: &Path) -> Result<VolumeHeader> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_header(path, &bytes)
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<VolumeHeader> {
    let mut fields: BTreeMap<String, String> = BTreeMap::new();
    let mut offset = 0;
    let mut data_file = None;
    while offset < bytes.len() {
        let end = bytes[offset..]
            .iter()
            .position(|&b| b == b'\n')
            .map_or(bytes.len(), |p| offset + p);
        let line = std::str::from_utf8(&bytes[offset..end])
            .map_err(|_| Error::Parse { path: path.into(), reason: "header is not UTF-8 text".into() })?
            .trim_end_matches('\r');
        offset = (end + 1).min(bytes.len());
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.into(),
            reason: format!("header line `{line}` is not `Key = value`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "ElementDataFile" {
            data_file = Some(if value == "LOCAL" {
                DataFile::Local(offset)
            } else {
                let dir = path.parent().unwrap_or(Path::new("."));
                DataFile::External(dir.join(value))
            });
            break;
        }
        fields.insert(key.to_string(), value.to_string());
    }
    let data_file = data_file.ok_or_else(|| Error::header(path, "ElementDataFile", "missing"))?;
    let get = |key: &str| -> Result<&str> {
        fields
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::header(path, key, "missing"))
    };

    if get("ObjectType")? != "Image" {
        return Err(Error::header(path, "ObjectType", "only `Image` is supported"));
    }
    let msb = fields
        .get("ElementByteOrderMSB")
        .or_else(|| fields.get("BinaryDataByteOrderMSB"))
        .ok_or_else(|| Error::header(path, "ElementByteOrderMSB", "missing"))?;
    if !msb.eq_ignore_ascii_case("false") {
        return Err(Error::header(path, "ElementByteOrderMSB", "only little-endian (False) payloads are supported"));
    }
    if fields.get("CompressedData").is_some_and(|v| !v.eq_ignore_ascii_case("false")) {
        return Err(Error::header(path, "CompressedData", "compressed payloads are not supported"));
    }
    let ndims: usize = get("NDims")?
        .parse()
        .map_err(|_| Error::header(path, "NDims", "not an integer"))?;
    let kind = match get("ElementType")? {
        "MET_UCHAR" => ElementKind::Labels,
        "MET_FLOAT" => ElementKind::Scores,
        other => {
            return Err(Error::header(path, "ElementType", format!("`{other}` is not MET_UCHAR or MET_FLOAT")))
        }
    };
    let expected_ndims = match kind {
        ElementKind::Labels => 3,
        ElementKind::Scores => 4,
    };
    if ndims != expected_ndims {
        return Err(Error::header(path, "NDims", format!("expected {expected_ndims} for this ElementType, got {ndims}")));
    }
    let dims: Vec<usize> = parse_list(path, "DimSize", get("DimSize")?)?;
    if dims.len() != ndims {
        return Err(Error::header(path, "DimSize", format!("expected {ndims} entries, got {}", dims.len())));
    }
    let spacing: Vec<f64> = parse_list(path, "ElementSpacing", get("ElementSpacing")?)?;
    if spacing.len() != ndims && spacing.len() != 3 {
        return Err(Error::header(path, "ElementSpacing", format!("expected {ndims} entries, got {}", spacing.len())));
    }
    let geometry = GridGeometry::new([dims[0], dims[1], dims[2]], [spacing[0], spacing[1], spacing[2]])
        .map_err(|e| Error::header(path, "DimSize/ElementSpacing", e.to_string()))?;
    let channels = match kind {
        ElementKind::Labels => 1,
        ElementKind::Scores => {
            let c = dims[3];
            if !(2..=MAX_LABELS).contains(&c) {
                return Err(Error::header(path, "DimSize", format!("channel count {c} outside 2..=256")));
            }
            c
        }
    };
    geometry
        .voxel_count()
        .checked_mul(channels * 4)
        .ok_or_else(|| Error::header(path, "DimSize", "volume too large"))?;
    Ok(VolumeHeader { geometry, kind, channels, data_file })
}

/// Read a label (`MET_UCHAR`) or score (`MET_FLOAT`) volume. The label
/// count of a label volume is inferred as `max(2, max label + 1)`.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    let external;
    let (payload, payload_path): (&[u8], &Path) = match &header.data_file {
        DataFile::Local(offset) => (&bytes[*offset..], path),
        DataFile::External(raw) => {
            external = fs::read(raw).map_err(|e| Error::io(raw, e))?;
            (&external, raw.as_path())
        }
    };
    let expected = header.payload_bytes();
    if payload.len() != expected {
        return Err(Error::Truncated { path: payload_path.into(), expected, actual: payload.len() });
    }
    let validation = |e: Error| Error::Parse { path: path.into(), reason: e.to_string() };
    match header.kind {
        ElementKind::Labels => LabelVolume::from_labels(header.geometry, payload.to_vec())
            .map(Volume::Labels)
            .map_err(validation),
        ElementKind::Scores => {
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            ScoreVolume::new(header.geometry, header.channels, data)
                .map(Volume::Scores)
                .map_err(validation)
        }
    }
}

pub fn read_labels(path: &Path) -> Result<LabelVolume> {
    match read_volume(path)? {
        Volume::Labels(v) => Ok(v),
        Volume::Scores(_) => Err(Error::Validation(format!(
            "{} holds scores (MET_FLOAT), expected a label volume",
            path.display()
        ))),
    }
}

fn format_header(geometry: &GridGeometry, kind: ElementKind, channels: usize, data_file: &str) -> String {
    let [nx, ny, nz] = geometry.dims();
    let [sx, sy, sz] = geometry.spacing();
    let (ndims, dims, spacing, element) = match kind {
        ElementKind::Labels => (3, format!("{nx} {ny} {nz}"), format!("{sx:?} {sy:?} {sz:?}"), "MET_UCHAR"),
        ElementKind::Scores => (
            4,
            format!("{nx} {ny} {nz} {channels}"),
            format!("{sx:?} {sy:?} {sz:?} 1.0"),
            "MET_FLOAT",
        ),
    };
    format!(
        "ObjectType = Image\nNDims = {ndims}\nDimSize = {dims}\nElementSpacing = {spacing}\n\
         ElementType = {element}\nElementByteOrderMSB = False\nElementDataFile = {data_file}\n"
    )
}

fn payload(volume: &Volume) -> Vec<u8> {
    match volume {
        Volume::Labels(v) => v.data().to_vec(),
        Volume::Scores(v) => v.data().iter().flat_map(|x| x.to_le_bytes()).collect(),
    }
}

/// Write a volume. A `.mhd` path gets a sibling `.raw` payload file; any
/// other extension (normally `.mha`) embeds the payload.
pub fn write_volume(volume: &Volume, path: &Path) -> Result<()> {
    let (geometry, channels) = match volume {
        Volume::Labels(v) => (v.geometry(), 1),
        Volume::Scores(v) => (v.geometry(), v.channels()),
    };
    let external = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mhd"));
    if external {
        let raw = path.with_extension("raw");
        let raw_name = raw
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::InvalidArgument(format!("unusable file name {}", path.display())))?
            .to_string();
        fs::write(&raw, payload(volume)).map_err(|e| Error::io(&raw, e))?;
        fs::write(path, format_header(geometry, volume.kind(), channels, &raw_name))
            .map_err(|e| Error::io(path, e))
    } else {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(format_header(geometry, volume.kind(), channels, "LOCAL").as_bytes())
            .and_then(|_| f.write_all(&payload(volume)))
            .map_err(|e| Error::io(path, e))
    }
}

pub fn write_labels(volume: &LabelVolume, path: &Path) -> Result<()> {
    write_volume(&Volume::Labels(volume.clone()), path)
}

/// One case: a reference mask plus the outputs of every ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseManifest {
    pub case_id: String,
    pub reference: PathBuf,
    pub model_outputs: Vec<PathBuf>,
}

/// Manifest file: organ names plus an ordered list of cases. Relative
/// paths are resolved against the manifest's directory.
///
/// ```toml
/// [labels]
/// 1 = "brainstem"
/// 2 = "spinal_cord"
///
/// [[cases]]
/// case_id = "case_000"
/// reference = "case_000/reference.mha"
/// model_outputs = ["case_000/model_0.mha", "case_000/model_1.mha"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub labels: BTreeMap<String, String>,
    pub cases: Vec<CaseManifest>,
}

impl Manifest {
    /// Organ labels with names, ascending.
    pub fn label_names(&self) -> Result<Vec<(u8, String)>> {
        let mut out = self
            .labels
            .iter()
            .map(|(k, v)| {
                k.parse::<u8>()
                    .ok()
                    .filter(|&l| l >= 1)
                    .map(|l| (l, v.clone()))
                    .ok_or_else(|| Error::Validation(format!("label key `{k}` is not an organ label in 1..=255")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_by_key(|(l, _)| *l);
        Ok(out)
    }

    /// Label count implied by the organ list.
    pub fn num_labels(&self) -> Result<usize> {
        Ok(self.label_names()?.last().map_or(2, |(l, _)| (*l as usize + 1).max(2)))
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseManifest> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }
}

/// Parse a manifest, resolve its paths and check every referenced volume:
/// headers must parse, payload sizes must match and all volumes of a case
/// must share one geometry, with model outputs of one element type.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), reason: e.to_string() })?;
    let base = path.parent().unwrap_or(Path::new("."));
    for case in &mut manifest.cases {
        case.reference = base.join(&case.reference);
        for m in &mut case.model_outputs {
            *m = base.join(&*m);
        }
    }
    validate_manifest(&manifest)?;
    Ok(manifest)
}

fn validate_manifest(manifest: &Manifest) -> Result<()> {
    let num_labels = manifest.num_labels()?;
    let mut seen = std::collections::HashSet::new();
    for case in &manifest.cases {
        if !seen.insert(case.case_id.as_str()) {
            return Err(Error::Validation(format!("duplicate case_id `{}`", case.case_id)));
        }
        if case.model_outputs.is_empty() {
            return Err(Error::Validation(format!("case `{}` lists no model outputs", case.case_id)));
        }
        let reference = check_payload(&case.reference)?;
        if reference.kind != ElementKind::Labels {
            return Err(Error::Validation(format!(
                "case `{}`: reference {} is not a label volume",
                case.case_id,
                case.reference.display()
            )));
        }
        let mut offenders = Vec::new();
        let mut kinds = Vec::new();
        for m in &case.model_outputs {
            let h = check_payload(m)?;
            if h.geometry != reference.geometry {
                offenders.push(format!("{} (dims {:?}, spacing {:?})", m.display(), h.geometry.dims(), h.geometry.spacing()));
            }
            if h.kind == ElementKind::Scores && h.channels != num_labels {
                return Err(Error::Validation(format!(
                    "case `{}`: {} has {} channels but the label map implies {num_labels}",
                    case.case_id,
                    m.display(),
                    h.channels
                )));
            }
            kinds.push(h.kind);
        }
        if !offenders.is_empty() {
            return Err(Error::GeometryMismatch(format!(
                "case `{}`: reference {} has dims {:?} spacing {:?}; mismatching: {}",
                case.case_id,
                case.reference.display(),
                reference.geometry.dims(),
                reference.geometry.spacing(),
                offenders.join(", ")
            )));
        }
        if kinds.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Validation(format!(
                "case `{}` mixes score and label model outputs",
                case.case_id
            )));
        }
    }
    Ok(())
}

fn check_payload(path: &Path) -> Result<VolumeHeader> {
    let header = read_header(path)?;
    let actual = match &header.data_file {
        DataFile::Local(offset) => fs::metadata(path).map_err(|e| Error::io(path, e))?.len() as usize - offset,
        DataFile::External(raw) => fs::metadata(raw).map_err(|e| Error::io(raw, e))?.len() as usize,
    };
    if actual != header.payload_bytes() {
        return Err(Error::Truncated { path: path.into(), expected: header.payload_bytes(), actual });
    }
    Ok(header)
}

pub fn write_manifest(manifest: &Manifest, path: &Path) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::Parse { path: path.into(), reason: e.to_string() })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load a case's reference with the manifest's label count.
pub fn load_reference(case: &CaseManifest, num_labels: usize) -> Result<LabelVolume> {
    let v = read_labels(&case.reference)?;
    align_labels(v, num_labels, &case.reference)
}

pub(crate) fn align_labels(v: LabelVolume, num_labels: usize, path: &Path) -> Result<LabelVolume> {
    if v.num_labels() > num_labels {
        return Err(Error::Validation(format!(
            "{} holds label {} beyond the manifest's organ list",
            path.display(),
            v.num_labels() - 1
        )));
    }
    v.with_num_labels(num_labels)
}

/// Load model outputs of a case, all scores or all label masks.
pub fn load_model_outputs(case: &CaseManifest, num_labels: usize) -> Result<Vec<Volume>> {
    case.model_outputs
        .iter()
        .map(|p| match read_volume(p)? {
            Volume::Labels(v) => align_labels(v, num_labels, p).map(Volume::Labels),
            s => Ok(s),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Toml,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "toml" => Ok(ReportFormat::Toml),
            other => Err(Error::InvalidArgument(format!("unknown report format `{other}`, expected csv or toml"))),
        }
    }
}

/// One row of an aggregate metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub case_id: String,
    pub label: u8,
    pub organ: String,
    pub method: String,
    pub mdta_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    pub volume_diff_cm3: f64,
    /// `;`-separated [`MetricFlag`] names, empty when every metric is defined.
    pub flags: String,
}

impl MetricRow {
    pub fn from_report(report: &MetricReport) -> Vec<MetricRow> {
        report
            .organs
            .iter()
            .map(|o: &OrganMetrics| MetricRow {
                case_id: report.case_id.clone(),
                label: o.label,
                organ: o.organ.clone(),
                method: report.method.clone(),
                mdta_mm: o.mdta_mm,
                hd95_mm: o.hd95_mm,
                volume_diff_cm3: o.volume_diff_cm3,
                flags: o.flags.iter().map(MetricFlag::as_str).collect::<Vec<_>>().join(";"),
            })
            .collect()
    }
}

pub fn write_metric_rows(rows: &[MetricRow], path: &Path) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Parse { path: path.into(), reason: e.to_string() };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metric_rows(path: &Path) -> Result<Vec<MetricRow>> {
    let csv_err = |e: csv::Error| Error::Parse { path: path.into(), reason: e.to_string() };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Write one case report as CSV rows or as a TOML document.
pub fn write_report(report: &MetricReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::Csv => write_metric_rows(&MetricRow::from_report(report), path),
        ReportFormat::Toml => {
            let text = toml::to_string(report).map_err(|e| Error::Parse { path: path.into(), reason: e.to_string() })?;
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn read_report(path: &Path) -> Result<MetricReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse { path: path.into(), reason: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn geom(d: [usize; 3], s: [f64; 3]) -> GridGeometry {
        GridGeometry::new(d, s).unwrap()
    }

    #[test]
    fn label_payload_is_raw_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.mhd");
        let v = LabelVolume::zeros(geom([2, 2, 2], [1.0; 3]), 2).unwrap();
        write_labels(&v, &path).unwrap();
        assert_eq!(fs::read(dir.path().join("z.raw")).unwrap(), vec![0u8; 8]);
        assert_eq!(read_labels(&path).unwrap(), v);
    }

    #[test]
    fn score_payload_is_little_endian_ieee() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mhd");
        let v = ScoreVolume::new(geom([1, 1, 1], [1.0; 3]), 2, vec![0.0f32, 1.0]).unwrap();
        write_volume(&Volume::Scores(v.clone()), &path).unwrap();
        assert_eq!(fs::read(dir.path().join("s.raw")).unwrap(), vec![0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f]);
        let header = fs::read_to_string(&path).unwrap();
        assert!(header.contains("NDims = 4\n"));
        assert!(header.contains("DimSize = 1 1 1 2\n"));
        assert_eq!(read_volume(&path).unwrap(), Volume::Scores(v));
    }

    #[test]
    fn spacing_header_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.mha");
        write_labels(&LabelVolume::zeros(geom([1, 1, 1], [0.5, 0.5, 2.0]), 2).unwrap(), &path).unwrap();
        let text = String::from_utf8_lossy(&fs::read(&path).unwrap()).to_string();
        assert!(text.contains("\nElementSpacing = 0.5 0.5 2.0\n"), "{text}");
    }

    #[test]
    fn smallest_local_label_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.mha");
        let mut bytes = b"ObjectType = Image\nNDims = 3\nDimSize = 4 4 4\nElementSpacing = 1 1 1\n\
ElementType = MET_UCHAR\nElementByteOrderMSB = False\nElementDataFile = LOCAL\n"
            .to_vec();
        let header_len = bytes.len();
        bytes.extend((0..64u8).map(|i| i % 3));
        fs::write(&path, &bytes).unwrap();
        let v = read_labels(&path).unwrap();
        assert_eq!(v.geometry().dims(), [4, 4, 4]);
        assert_eq!(v.num_labels(), 3);

        bytes.truncate(header_len + 63);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_volume(&path),
            Err(Error::Truncated { expected: 64, actual: 63, .. })
        ));
    }

    #[test]
    fn header_errors_name_the_key() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.mha");
        let good = "ObjectType = Image\nNDims = 3\nDimSize = 1 1 1\nElementSpacing = 1 1 1\n\
ElementType = MET_UCHAR\nElementByteOrderMSB = False\nElementDataFile = LOCAL\n";
        let cases = [
            ("DimSize = 1 1 1\n", "", "DimSize"),
            ("ElementSpacing = 1 1 1\n", "ElementSpacing = 1 x 1\n", "ElementSpacing"),
            ("ElementType = MET_UCHAR\n", "ElementType = MET_SHORT\n", "ElementType"),
            ("ElementByteOrderMSB = False\n", "ElementByteOrderMSB = True\n", "ElementByteOrderMSB"),
            ("NDims = 3\n", "NDims = 4\n", "NDims"),
            ("ElementDataFile = LOCAL\n", "", "ElementDataFile"),
            ("DimSize = 1 1 1\n", "DimSize = 1 0 1\n", "DimSize"),
        ];
        for (from, to, key) in cases {
            let text = good.replace(from, to);
            let mut bytes = text.clone().into_bytes();
            if text.contains("ElementDataFile") {
                bytes.push(0);
            }
            fs::write(&path, &bytes).unwrap();
            match read_volume(&path) {
                Err(Error::Header { key: k, .. }) => assert!(k.contains(key), "{k} vs {key}"),
                other => panic!("{key}: expected header error, got {other:?}"),
            }
        }
    }

    #[test]
    fn non_finite_scores_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.mha");
        let mut bytes = b"ObjectType = Image\nNDims = 4\nDimSize = 1 1 1 2\nElementSpacing = 1 1 1 1\n\
ElementType = MET_FLOAT\nElementByteOrderMSB = False\nElementDataFile = LOCAL\n"
            .to_vec();
        bytes.extend(0f32.to_le_bytes());
        bytes.extend(f32::NAN.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_volume(&path), Err(Error::Parse { .. })));
    }

    fn manifest_fixture(dir: &Path, dims: &[[usize; 3]]) -> PathBuf {
        let g0 = geom(dims[0], [1.0; 3]);
        write_labels(&LabelVolume::zeros(g0, 2).unwrap(), &dir.join("ref.mha")).unwrap();
        let mut outputs = Vec::new();
        for (i, d) in dims.iter().enumerate() {
            let name = format!("m{i}.mha");
            write_labels(&LabelVolume::zeros(geom(*d, [1.0; 3]), 2).unwrap(), &dir.join(&name)).unwrap();
            outputs.push(format!("\"{name}\""));
        }
        let text = format!(
            "[labels]\n1 = \"organ\"\n\n[[cases]]\ncase_id = \"c0\"\nreference = \"ref.mha\"\nmodel_outputs = [{}]\n",
            outputs.join(", ")
        );
        let path = dir.join("manifest.toml");
        fs::write(&path, text).unwrap();
        path
    }

    #[test]
    fn manifest_with_consistent_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest_fixture(dir.path(), &[[4, 4, 4]; 5]);
        let m = read_manifest(&path).unwrap();
        assert_eq!(m.cases[0].model_outputs.len(), 5);
        assert_eq!(m.label_names().unwrap(), vec![(1, "organ".to_string())]);
        assert_eq!(m.num_labels().unwrap(), 2);
    }

    #[test]
    fn manifest_geometry_mismatch_lists_offender() {
        let dir = tempfile::tempdir().unwrap();
        let path = manifest_fixture(dir.path(), &[[4, 4, 4], [4, 4, 5]]);
        let err = read_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::GeometryMismatch(_)));
        assert!(err.to_string().contains("m1.mha"), "{err}");
    }

    #[test]
    fn manifest_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.toml");
        fs::write(&path, "colour = \"blue\"\n[labels]\n\n[[cases]]\ncase_id=\"a\"\nreference=\"r\"\nmodel_outputs=[]\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn report_csv_rows() {
        let dir = tempfile::tempdir().unwrap();
        let report = MetricReport {
            case_id: "c1".into(),
            method: "staple".into(),
            organs: vec![
                OrganMetrics {
                    label: 1,
                    organ: "brainstem".into(),
                    mdta_mm: Some(0.5),
                    hd95_mm: Some(2.0),
                    volume_diff_cm3: -0.25,
                    flags: vec![],
                },
                OrganMetrics {
                    label: 2,
                    organ: "cord".into(),
                    mdta_mm: None,
                    hd95_mm: None,
                    volume_diff_cm3: -1.0,
                    flags: vec![MetricFlag::EmptyPrediction],
                },
            ],
        };
        let csv_path = dir.path().join("r.csv");
        write_report(&report, &csv_path, ReportFormat::Csv).unwrap();
        let text = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(
            text,
            "case_id,label,organ,method,mdta_mm,hd95_mm,volume_diff_cm3,flags\n\
             c1,1,brainstem,staple,0.5,2.0,-0.25,\n\
             c1,2,cord,staple,,,-1.0,empty-prediction\n"
        );
        assert_eq!(read_metric_rows(&csv_path).unwrap(), MetricRow::from_report(&report));

        let toml_path = dir.path().join("r.toml");
        write_report(&report, &toml_path, ReportFormat::Toml).unwrap();
        assert_eq!(read_report(&toml_path).unwrap(), report);
    }

    fn volume_strategy() -> impl Strategy<Value = Volume> {
        (1usize..5, 1usize..5, 1usize..5, 0.1f64..4.0, 0.1f64..4.0, 0.1f64..4.0, any::<bool>(), 2usize..4)
            .prop_flat_map(|(nx, ny, nz, sx, sy, sz, labels, c)| {
                let g = geom([nx, ny, nz], [sx, sy, sz]);
                let n = nx * ny * nz;
                if labels {
                    proptest::collection::vec(0u8..6, n)
                        .prop_map(move |d| Volume::Labels(LabelVolume::from_labels(g, d).unwrap()))
                        .boxed()
                } else {
                    proptest::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * c)
                        .prop_map(move |d| Volume::Scores(ScoreVolume::new(g, c, d).unwrap()))
                        .boxed()
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn write_read_roundtrip(v in volume_strategy(), external in any::<bool>()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join(if external { "v.mhd" } else { "v.mha" });
            write_volume(&v, &path).unwrap();
            let back = read_volume(&path).unwrap();
            prop_assert_eq!(&back, &v);
            // re-writing the re-read volume reproduces the file bytes
            let again = dir.path().join(if external { "w.mhd" } else { "w.mha" });
            write_volume(&back, &again).unwrap();
            if external {
                prop_assert_eq!(fs::read(path.with_extension("raw")).unwrap(), fs::read(again.with_extension("raw")).unwrap());
            } else {
                prop_assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
            }
        }

        #[test]
        fn corrupted_files_yield_typed_errors(v in volume_strategy(), cut in 0usize..400, flip in any::<u8>(), pos in 0usize..400) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("v.mha");
            write_volume(&v, &path).unwrap();
            let mut bytes = fs::read(&path).unwrap();
            let p = pos % bytes.len();
            bytes[p] ^= flip;
            bytes.truncate(bytes.len().saturating_sub(cut % 8));
            fs::write(&path, &bytes).unwrap();
            // must not panic; any failure is a typed error
            if let Ok(back) = read_volume(&path) {
                prop_assert!(back.geometry().voxel_count() > 0);
            }
        }
    }
}
