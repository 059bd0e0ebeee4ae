//! File formats: binary PGM, contour CSV, the weights container, run
//! configuration and results tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::AugPolicy;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RawImage};
use crate::metrics::{BinaryMask, Contour, Point};
use crate::model::{ModelGraph, UltraUNetConfig};
use crate::tensor::{Real, Shape4, Tensor4};
use crate::train::{DenoiserTrainConfig, MeanStd, TrainConfig};

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- PGM

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            what: "PGM",
            reason: reason.into(),
            offset: self.pos,
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.fail("expected a decimal number"));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.fail("number out of range"))
    }
}

/// Parses a binary (P5) PGM with maxval up to 65535.
pub fn decode_pgm(bytes: &[u8]) -> Result<RawImage> {
    let mut c = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let reason = if bytes.len() >= 2 && bytes[0] == b'P' {
            format!("unsupported format P{} (only binary grayscale P5)", bytes[1] as char)
        } else {
            "missing P5 magic".to_string()
        };
        return Err(c.fail(reason));
    }
    c.pos = 2;
    let w = c.number()?;
    let h = c.number()?;
    let maxval = c.number()?;
    if w == 0 || h == 0 {
        return Err(c.fail("zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(c.fail(format!("maxval {maxval} outside 1..=65535")));
    }
    if c.pos >= bytes.len() || !bytes[c.pos].is_ascii_whitespace() {
        return Err(c.fail("expected a single whitespace byte after the header"));
    }
    c.pos += 1;
    let bpp = if maxval > 255 { 2 } else { 1 };
    let need = w * h * bpp;
    let payload = &bytes[c.pos..];
    if payload.len() < need {
        c.pos = bytes.len();
        return Err(c.fail(format!("truncated payload: need {need} bytes, have {}", payload.len())));
    }
    let pixels: Vec<u16> = if bpp == 1 {
        payload[..need].iter().map(|&b| b as u16).collect()
    } else {
        payload[..need].chunks_exact(2).map(|p| u16::from_be_bytes([p[0], p[1]])).collect()
    };
    if let Some(i) = pixels.iter().position(|&p| p as usize > maxval) {
        c.pos += i * bpp;
        return Err(c.fail(format!("sample {} exceeds maxval {maxval}", pixels[i])));
    }
    Ok(RawImage {
        h,
        w,
        max_value: maxval as u16,
        pixels,
    })
}

/// 8-bit P5 with values rounded half-up from `[0, 1]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.w(), img.h()).into_bytes();
    out.extend(img.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8));
    out
}

pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.w(), mask.h()).into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

/// Reads a PGM as intensities in `[0, 1]` (divided by maxval).
pub fn decode_gray(bytes: &[u8]) -> Result<GrayImage> {
    let raw = decode_pgm(bytes)?;
    let s = 1.0 / raw.max_value as f32;
    GrayImage::from_vec(raw.h, raw.w, raw.pixels.iter().map(|&p| p as f32 * s).collect())
}

/// Pixels at or above half of maxval are foreground.
pub fn decode_mask(bytes: &[u8]) -> Result<BinaryMask> {
    let raw = decode_pgm(bytes)?;
    let half = raw.max_value as u32;
    BinaryMask::from_bits(raw.h, raw.w, raw.pixels.iter().map(|&p| 2 * p as u32 >= half).collect())
}

// ---------------------------------------------------------------- contour CSV

/// `x,y` header then one point per line.
pub fn encode_contour(c: &Contour) -> String {
    let mut s = String::from("x,y\n");
    for p in &c.points {
        // shortest representation that round-trips
        let _ = writeln!(s, "{},{}", p.x, p.y);
    }
    s
}

pub fn decode_contour(text: &str) -> Result<Contour> {
    let parse_err = |line: usize, reason: String| Error::Parse {
        what: "contour CSV",
        reason,
        line,
    };
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("x,y")) {
            continue;
        }
        let mut cells = line.split(',');
        let (Some(x), Some(y), None) = (cells.next(), cells.next(), cells.next()) else {
            return Err(parse_err(line_no, format!("expected two cells, got {line:?}")));
        };
        let num = |cell: &str| {
            cell.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line_no, format!("non-numeric cell {cell:?}")))
        };
        points.push(Point::new(num(x)?, num(y)?));
    }
    if points.is_empty() {
        return Err(parse_err(0, "no points".into()));
    }
    Ok(Contour::new(points))
}

// ---------------------------------------------------------------- weights

const MAGIC: &[u8; 4] = b"UUNW";
const VERSION: u8 = 1;

/// Named tensors as stored in a weights file.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightsFile {
    pub tensors: Vec<(String, Tensor4<f32>)>,
}

impl WeightsFile {
    pub fn from_graph<T: Real>(graph: &ModelGraph<T>) -> Self {
        WeightsFile {
            tensors: graph.params.iter().map(|(_, p)| (p.name.clone(), p.value.cast())).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(4);
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let fail = |pos: usize, reason: String| Error::Format {
            what: "weights file",
            reason,
            offset: pos,
        };
        let mut take = |n: usize| -> Result<&[u8]> {
            if bytes.len() - pos < n {
                return Err(fail(pos, format!("truncated: need {n} more bytes")));
            }
            pos += n;
            Ok(&bytes[pos - n..pos])
        };
        if take(4)? != MAGIC {
            return Err(fail(0, "bad magic (expected UUNW)".into()));
        }
        let version = take(1)?[0];
        if version != VERSION {
            return Err(fail(4, format!("unsupported version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = u16::from_le_bytes(take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(take(len)?)
                .map_err(|_| fail(0, "tensor name is not UTF-8".into()))?
                .to_string();
            let rank = take(1)?[0] as usize;
            if rank == 0 || rank > 4 {
                return Err(fail(0, format!("{name}: unsupported rank {rank}")));
            }
            let mut dims = [1usize; 4];
            for d in dims.iter_mut().skip(4 - rank) {
                *d = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
            }
            let shape = Shape4::new(dims[0], dims[1], dims[2], dims[3]);
            if !shape.is_valid() {
                return Err(fail(0, format!("{name}: invalid shape {shape}")));
            }
            let raw = take(shape.numel().checked_mul(4).ok_or_else(|| fail(0, "size overflow".into()))?)?;
            let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
            tensors.push((name, Tensor4::from_vec(shape, data)?));
        }
        if pos != bytes.len() {
            return Err(fail(pos, format!("{} trailing bytes", bytes.len() - pos)));
        }
        Ok(WeightsFile { tensors })
    }

    /// Copies every tensor into `graph`, which must have exactly the same
    /// names and shapes.
    pub fn load_into<T: Real>(&self, graph: &mut ModelGraph<T>) -> Result<()> {
        if self.tensors.len() != graph.params.len() {
            return Err(Error::WeightsMismatch(format!(
                "file has {} tensors, {} expects {}",
                self.tensors.len(),
                graph.name,
                graph.params.len()
            )));
        }
        let mut values = Vec::with_capacity(self.tensors.len());
        for (_, p) in graph.params.iter() {
            let (_, t) = self
                .tensors
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::WeightsMismatch(format!("tensor {} missing from file", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::WeightsMismatch(format!(
                    "tensor {}: file has {}, model expects {}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            values.push(t.cast());
        }
        graph.params.restore(&values)
    }
}

pub fn save_weights<T: Real>(graph: &ModelGraph<T>, path: &Path) -> Result<()> {
    write_file(path, WeightsFile::from_graph(graph).encode())
}

pub fn load_weights<T: Real>(graph: &mut ModelGraph<T>, path: &Path) -> Result<()> {
    WeightsFile::decode(&read_file(path)?)?.load_into(graph)
}

// ---------------------------------------------------------------- run config

/// Synthetic data selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub profile: String,
    pub test_profiles: Vec<String>,
    pub count: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            profile: "bright-wide".into(),
            test_profiles: vec!["dim-narrow".into(), "noisy-broad".into()],
            count: 600,
            size: 224,
            seed: 0,
        }
    }
}

/// Everything a CLI run needs. Unknown keys anywhere are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: UltraUNetConfig,
    pub train: TrainConfig,
    pub augment: AugPolicy,
    pub denoiser: DenoiserTrainConfig,
    pub data: DataConfig,
    pub hist_match: bool,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: UltraUNetConfig::default(),
            train: TrainConfig::default(),
            augment: AugPolicy::default(),
            denoiser: DenoiserTrainConfig::default(),
            data: DataConfig::default(),
            hist_match: false,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
        Self::from_json(text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.augment.validate()?;
        if self.data.count < 10 || self.data.size < 32 {
            return Err(Error::Config("data: need count >= 10 and size >= 32".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serialisable")
    }
}

// ---------------------------------------------------------------- results

/// One trial scored on one test profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub experiment: String,
    pub model: String,
    pub variant: String,
    pub train_profile: String,
    pub test_profile: String,
    pub trial: usize,
    pub seed: u64,
    pub dice: f64,
    pub msd: Option<f64>,
    pub msd_undefined: usize,
    pub frames: usize,
    pub epochs_run: usize,
    pub best_epoch: usize,
}

const RESULTS_HEADER: &str =
    "experiment,model,variant,train_profile,test_profile,trial,seed,dice,msd,msd_undefined,frames,epochs_run,best_epoch";

fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

/// Results table; wall-clock time lives in a separate timings file so this
/// one is reproducible byte for byte.
pub fn results_csv(rows: &[ResultsRow]) -> String {
    let mut s = String::from(RESULTS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.model,
            r.variant,
            r.train_profile,
            r.test_profile,
            r.trial,
            r.seed,
            fmt_f(r.dice),
            r.msd.map(fmt_f).unwrap_or_default(),
            r.msd_undefined,
            r.frames,
            r.epochs_run,
            r.best_epoch
        );
    }
    s
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultsRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == RESULTS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                what: "results CSV",
                reason: "unexpected header".into(),
                line: 1,
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fail = |reason: String| Error::Parse {
            what: "results CSV",
            reason,
            line: i + 1,
        };
        let c: Vec<&str> = line.split(',').collect();
        if c.len() != 13 {
            return Err(fail(format!("expected 13 cells, got {}", c.len())));
        }
        let num = |k: usize| c[k].parse::<f64>().map_err(|_| fail(format!("bad number {:?}", c[k])));
        let int = |k: usize| c[k].parse::<u64>().map_err(|_| fail(format!("bad integer {:?}", c[k])));
        rows.push(ResultsRow {
            experiment: c[0].into(),
            model: c[1].into(),
            variant: c[2].into(),
            train_profile: c[3].into(),
            test_profile: c[4].into(),
            trial: int(5)? as usize,
            seed: int(6)?,
            dice: num(7)?,
            msd: if c[8].is_empty() { None } else { Some(num(8)?) },
            msd_undefined: int(9)? as usize,
            frames: int(10)? as usize,
            epochs_run: int(11)? as usize,
            best_epoch: int(12)? as usize,
        });
    }
    Ok(rows)
}

/// Mean ± sample std of Dice and MSD per (experiment, model, variant,
/// train profile, test profile), in first-appearance order.
pub fn summary_csv(rows: &[ResultsRow]) -> String {
    let mut groups: Vec<((&str, &str, &str, &str, &str), Vec<&ResultsRow>)> = Vec::new();
    for r in rows {
        let key = (
            r.experiment.as_str(),
            r.model.as_str(),
            r.variant.as_str(),
            r.train_profile.as_str(),
            r.test_profile.as_str(),
        );
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut s = String::from("experiment,model,variant,train_profile,test_profile,trials,dice_mean,dice_std,msd_mean,msd_std\n");
    for ((e, m, v, tr, te), rs) in groups {
        let dice = MeanStd::of(&rs.iter().map(|r| r.dice).collect::<Vec<_>>()).unwrap_or_default();
        let msd = MeanStd::of(&rs.iter().filter_map(|r| r.msd).collect::<Vec<_>>());
        let _ = writeln!(
            s,
            "{e},{m},{v},{tr},{te},{},{},{},{},{}",
            rs.len(),
            fmt_f(dice.mean),
            fmt_f(dice.std),
            msd.map(|x| fmt_f(x.mean)).unwrap_or_default(),
            msd.map(|x| fmt_f(x.std)).unwrap_or_default()
        );
    }
    s
}

/// Run-directory layout.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        write_file(&p, bytes)?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_header_with_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([0u8, 255]);
        let raw = decode_pgm(&bytes).unwrap();
        assert_eq!((raw.w, raw.h, raw.pixels.clone()), (2, 1, vec![0, 255]));
    }

    #[test]
    fn truncated_pgm_reports_offset() {
        let bytes = b"P5 4 4 255\n\x00\x01".to_vec();
        match decode_pgm(&bytes) {
            Err(Error::Format { offset, reason, .. }) => {
                assert_eq!(offset, bytes.len());
                assert!(reason.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn results_csv_round_trip() {
        let row = ResultsRow {
            experiment: "train".into(),
            model: "ultraunet".into(),
            variant: "base".into(),
            train_profile: "bright-wide".into(),
            test_profile: "bright-wide".into(),
            trial: 1,
            seed: 42,
            dice: 0.8125,
            msd: None,
            msd_undefined: 2,
            frames: 10,
            epochs_run: 7,
            best_epoch: 3,
        };
        let csv = results_csv(&[row.clone()]);
        assert_eq!(parse_results_csv(&csv).unwrap(), vec![row]);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"train": {"lr": 0.1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"hist_matching": true}"#).is_err());
        let cfg = RunConfig::from_json(r#"{"train": {"lr0": 0.01}, "data": {"size": 64}}"#).unwrap();
        assert_eq!((cfg.train.lr0, cfg.data.size, cfg.train.batch), (0.01, 64, 3));
    }
}
