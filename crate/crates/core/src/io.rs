//! On-disk formats.
//!
//! * Model: little-endian binary, magic `JPLDA\0`, version `u32 = 1`, then
//!   `d`, `R_y`, `N` and the `N` condition ranks as `u32`, followed by `mu`,
//!   `V`, `U_1..U_N`, `D` as row-major `f64`.
//! * Embedding table: `id<TAB>x_1<TAB>...<TAB>x_d` per line.
//! * Trial list: `enroll_id<TAB>test_id[<TAB>target|nontarget]`.
//! * Priors: `condition.<j>.p_same_given_ss = <p>` / `..._ds = <p>`, `j` from 1.
//! * Scores: `enroll_id<TAB>test_id<TAB>score` with 17 significant digits.
//!
//! Text formats always use `.` decimals and tab delimiters. Blank lines and
//! lines starting with `#` are ignored on read.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hypothesis::PriorConfig;
use crate::model::ModelParams;

pub const MODEL_MAGIC: &[u8; 6] = b"JPLDA\0";
pub const MODEL_VERSION: u32 = 1;

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
}

// ---------------------------------------------------------------------------
// Model

pub fn encode_model(model: &ModelParams) -> Vec<u8> {
    let dim = model.dim();
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    let put_u32 = |out: &mut Vec<u8>, x: usize| {
        out.extend_from_slice(&u32::try_from(x).expect("dimension fits in u32").to_le_bytes())
    };
    put_u32(&mut out, MODEL_VERSION as usize);
    put_u32(&mut out, dim);
    put_u32(&mut out, model.speaker_rank());
    put_u32(&mut out, model.num_conditions());
    for r in model.condition_ranks() {
        put_u32(&mut out, r);
    }
    let put_matrix = |out: &mut Vec<u8>, m: &DMatrix<f64>| {
        for i in 0..m.nrows() {
            for k in 0..m.ncols() {
                out.extend_from_slice(&m[(i, k)].to_le_bytes());
            }
        }
    };
    for x in model.mu().iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    put_matrix(&mut out, model.v());
    for u in model.u() {
        put_matrix(&mut out, u);
    }
    put_matrix(&mut out, model.precision());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn u32(&mut self) -> Result<usize> {
        let bytes = self.take(4)?;
        Ok(u32::from_le_bytes(bytes.try_into().unwrap()) as usize)
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::TruncatedPayload {
                expected: self.pos + n,
                found: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(rows, cols, |i, k| {
            let off = self.pos + 8 * (i * cols + k);
            f64::from_le_bytes(self.buf[off..off + 8].try_into().unwrap())
        });
        self.pos += 8 * rows * cols;
        m
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..MODEL_MAGIC.len()] != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader {
        buf: bytes,
        pos: MODEL_MAGIC.len(),
    };
    let version = r.u32()? as u32;
    if version != MODEL_VERSION {
        return Err(Error::VersionUnsupported(version));
    }
    let dim = r.u32()?;
    let r_y = r.u32()?;
    let n = r.u32()?;
    let ranks = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;

    let floats = dim
        .checked_mul(1 + r_y + ranks.iter().sum::<usize>() + dim)
        .expect("header dimensions overflow");
    let expected = r.pos + 8 * floats;
    if bytes.len() != expected {
        if bytes.len() < expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        return Err(Error::InvalidArgument(format!(
            "model file has {} trailing bytes",
            bytes.len() - expected
        )));
    }

    let mu = DVector::from_column_slice(r.matrix(1, dim).as_slice());
    let v = r.matrix(dim, r_y);
    let u = ranks.iter().map(|&rk| r.matrix(dim, rk)).collect();
    let d = r.matrix(dim, dim);
    ModelParams::new(mu, v, u, d).map_err(|e| Error::ValidationFailed(Box::new(e)))
}

pub fn save_model(path: impl AsRef<Path>, model: &ModelParams) -> Result<()> {
    fs::write(path, encode_model(model))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    decode_model(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Embeddings

/// Id-addressable set of embeddings, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<String>,
    vectors: Vec<DVector<f64>>,
    index: HashMap<String, usize>,
    dim: usize,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<String>, vectors: Vec<DVector<f64>>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, |v| v.len());
        let mut index = HashMap::with_capacity(ids.len());
        for (i, (id, v)) in ids.iter().zip(&vectors).enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "embedding '{id}' has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate embedding id '{id}'")));
            }
        }
        Ok(Self {
            ids,
            vectors,
            index,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn vector(&self, i: usize) -> &DVector<f64> {
        &self.vectors[i]
    }

    pub fn get(&self, id: &str) -> Option<&DVector<f64>> {
        self.index_of(id).map(|i| &self.vectors[i])
    }
}

pub fn parse_embeddings(text: &str, path: &Path) -> Result<EmbeddingTable> {
    let mut ids = Vec::new();
    let mut vectors = Vec::new();
    for (ln, line) in content_lines(text) {
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(parse_err(path, ln, "missing embedding id"));
        }
        let values = fields
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, ln, format!("bad float '{f}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.push(id.to_string());
        vectors.push(DVector::from_vec(values));
    }
    EmbeddingTable::new(ids, vectors).map_err(|e| parse_err(path, 0, e.to_string()))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    parse_embeddings(&fs::read_to_string(path)?, path)
}

pub fn write_embeddings(path: impl AsRef<Path>, table: &EmbeddingTable) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (id, v) in table.ids.iter().zip(&table.vectors) {
        write!(w, "{id}")?;
        for x in v.iter() {
            // `{}` on f64 prints the shortest string that parses back exactly.
            write!(w, "\t{x}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Trials and keys

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    /// `Some(true)` for target, `Some(false)` for nontarget, `None` if unlabeled.
    pub target: Option<bool>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            target: None,
        }
    }

    pub fn labeled(enroll_id: impl Into<String>, test_id: impl Into<String>, target: bool) -> Self {
        Self {
            target: Some(target),
            ..Self::new(enroll_id, test_id)
        }
    }
}

pub fn parse_trials(text: &str, path: &Path) -> Result<Vec<Trial>> {
    content_lines(text)
        .map(|(ln, line)| {
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            let target = match fields.as_slice() {
                [_, _] => None,
                [_, _, "target"] => Some(true),
                [_, _, "nontarget"] => Some(false),
                [_, _, other] => {
                    return Err(parse_err(path, ln, format!("unknown trial label '{other}'")))
                }
                _ => return Err(parse_err(path, ln, "expected 2 or 3 tab-separated fields")),
            };
            if fields[0].is_empty() || fields[1].is_empty() {
                return Err(parse_err(path, ln, "empty id"));
            }
            Ok(Trial {
                enroll_id: fields[0].to_string(),
                test_id: fields[1].to_string(),
                target,
            })
        })
        .collect()
}

pub fn read_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    parse_trials(&fs::read_to_string(path)?, path)
}

pub fn write_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for t in trials {
        write!(w, "{}\t{}", t.enroll_id, t.test_id)?;
        match t.target {
            Some(true) => writeln!(w, "\ttarget")?,
            Some(false) => writeln!(w, "\tnontarget")?,
            None => writeln!(w)?,
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Priors

/// Parses a priors file for a model with `n` conditions. Conditions not
/// mentioned keep the default of 0.5 in both branches.
pub fn parse_priors(text: &str, path: &Path, n: usize) -> Result<PriorConfig> {
    let mut ss = vec![0.5; n];
    let mut ds = vec![0.5; n];
    for (ln, line) in content_lines(text) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| parse_err(path, ln, "expected 'key = value'"))?;
        let parts: Vec<&str> = key.trim().split('.').collect();
        let [ "condition", j, which ] = parts.as_slice() else {
            return Err(parse_err(path, ln, format!("unknown key '{}'", key.trim())));
        };
        let j: usize = j
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad condition index '{j}'")))?;
        if j == 0 || j > n {
            return Err(parse_err(
                path,
                ln,
                format!("condition index {j} outside 1..={n}"),
            ));
        }
        let p: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(path, ln, format!("bad probability '{}'", value.trim())))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(parse_err(path, ln, format!("probability {p} outside [0, 1]")));
        }
        match *which {
            "p_same_given_ss" => ss[j - 1] = p,
            "p_same_given_ds" => ds[j - 1] = p,
            other => return Err(parse_err(path, ln, format!("unknown prior '{other}'"))),
        }
    }
    PriorConfig::new(ss, ds)
}

pub fn read_priors(path: impl AsRef<Path>, n: usize) -> Result<PriorConfig> {
    let path = path.as_ref();
    parse_priors(&fs::read_to_string(path)?, path, n)
}

pub fn write_priors(path: impl AsRef<Path>, priors: &PriorConfig) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (j, (ss, ds)) in priors
        .p_same_given_ss()
        .iter()
        .zip(priors.p_same_given_ds())
        .enumerate()
    {
        writeln!(w, "condition.{}.p_same_given_ss = {ss}", j + 1)?;
        writeln!(w, "condition.{}.p_same_given_ds = {ds}", j + 1)?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Scores

/// 17 significant digits, enough to round-trip any finite `f64`.
pub fn format_score(score: f64) -> String {
    format!("{score:.16e}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub enroll_id: String,
    pub test_id: String,
    pub score: f64,
}

pub fn write_scores(path: impl AsRef<Path>, trials: &[Trial], scores: &[f64]) -> Result<()> {
    assert_eq!(trials.len(), scores.len());
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (t, s) in trials.iter().zip(scores) {
        writeln!(w, "{}\t{}\t{}", t.enroll_id, t.test_id, format_score(*s))?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_scores(text: &str, path: &Path) -> Result<Vec<ScoreRecord>> {
    content_lines(text)
        .map(|(ln, line)| {
            let fields: Vec<&str> = line.split('\t').collect();
            let [e, t, s] = fields.as_slice() else {
                return Err(parse_err(path, ln, "expected 3 tab-separated fields"));
            };
            let score = s
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(path, ln, format!("bad score '{s}'")))?;
            Ok(ScoreRecord {
                enroll_id: e.to_string(),
                test_id: t.to_string(),
                score,
            })
        })
        .collect()
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    let path = path.as_ref();
    parse_scores(&fs::read_to_string(path)?, path)
}

// ---------------------------------------------------------------------------
// Labels (synthetic datasets)

/// `id<TAB>speaker<TAB>c_1<TAB>...<TAB>c_N` per sample.
pub fn write_labels(
    path: impl AsRef<Path>,
    ids: &[String],
    speakers: &[usize],
    conditions: &[Vec<usize>],
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for (i, id) in ids.iter().enumerate() {
        write!(w, "{id}\t{}", speakers[i])?;
        for c in conditions {
            write!(w, "\t{}", c[i])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Label rows as `(id, speaker, condition labels)`.
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<(String, usize, Vec<usize>)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    content_lines(&text)
        .map(|(ln, line)| {
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default().to_string();
            let nums = fields
                .map(|f| {
                    f.trim()
                        .parse::<usize>()
                        .map_err(|_| parse_err(path, ln, format!("bad label '{f}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            let (spk, conds) = nums
                .split_first()
                .ok_or_else(|| parse_err(path, ln, "missing speaker label"))?;
            Ok((id, *spk, conds.to_vec()))
        })
        .collect()
}

/// `<prefix><suffix>` without treating the prefix as a directory.
pub fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_model() -> ModelParams {
        let dim = 4;
        let a = DMatrix::from_fn(dim, dim, |i, k| ((i * 3 + k) as f64 * 0.7).sin());
        let d = &a * a.transpose() + DMatrix::identity(dim, dim);
        let d = (&d + d.transpose()) * 0.5;
        ModelParams::new(
            DVector::from_fn(dim, |i, _| i as f64 / 3.0),
            DMatrix::from_fn(dim, 2, |i, k| (i as f64 + 0.1) / (k as f64 + 0.7)),
            vec![
                DMatrix::from_fn(dim, 1, |i, _| (i as f64).exp() * 1e-3),
                DMatrix::from_fn(dim, 3, |i, k| std::f64::consts::PI * (i + k) as f64),
            ],
            d,
        )
        .unwrap()
    }

    #[test]
    fn model_roundtrip_bitwise() {
        let m = sample_model();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(encode_model(&back), bytes);
        for (a, b) in m.precision().iter().zip(back.precision().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(back, m);
    }

    #[test]
    fn model_header_layout() {
        let bytes = encode_model(&sample_model());
        assert_eq!(&bytes[..6], b"JPLDA\0");
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        assert_eq!(u32_at(6), 1);
        assert_eq!(u32_at(10), 4);
        assert_eq!(u32_at(14), 2);
        assert_eq!(u32_at(18), 2);
        assert_eq!(u32_at(22), 1);
        assert_eq!(u32_at(26), 3);
        assert_eq!(bytes.len(), 30 + 8 * 4 * (1 + 2 + 1 + 3 + 4));
        // mu[1] = 1/3 directly after the header
        assert_eq!(f64::from_le_bytes(bytes[38..46].try_into().unwrap()), 1.0 / 3.0);
    }

    #[test]
    fn model_bad_magic() {
        let mut bytes = encode_model(&sample_model());
        bytes[..5].copy_from_slice(b"XPLDA");
        assert!(matches!(decode_model(&bytes), Err(Error::BadMagic)));
        assert!(matches!(decode_model(b"JPL"), Err(Error::BadMagic)));
    }

    #[test]
    fn model_bad_version() {
        let mut bytes = encode_model(&sample_model());
        bytes[6..10].copy_from_slice(&7u32.to_le_bytes());
        assert!(matches!(decode_model(&bytes), Err(Error::VersionUnsupported(7))));
    }

    #[test]
    fn model_truncated() {
        let bytes = encode_model(&sample_model());
        assert!(matches!(
            decode_model(&bytes[..bytes.len() - 8]),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_model(&bytes[..20]),
            Err(Error::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn model_validation_on_load() {
        let mut bytes = encode_model(&sample_model());
        let n = bytes.len();
        // Last float is D[3][3]; make it hugely negative.
        bytes[n - 8..].copy_from_slice(&(-1e6f64).to_le_bytes());
        assert!(matches!(decode_model(&bytes), Err(Error::ValidationFailed(_))));
    }

    #[test]
    fn embeddings_reject_duplicates_and_ragged() {
        let p = Path::new("x");
        assert!(parse_embeddings("a\t1\t2\na\t3\t4\n", p).is_err());
        assert!(parse_embeddings("a\t1\t2\nb\t3\n", p).is_err());
        assert!(parse_embeddings("a\t1\tx\n", p).is_err());
        let t = parse_embeddings("# comment\n\na\t1\t2\nb\t3\t4.5e-1\n", p).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.get("b").unwrap()[1], 0.45);
    }

    #[test]
    fn trials_parse_labels() {
        let p = Path::new("t");
        let trials = parse_trials("e1\tt1\ne2\tt2\ttarget\ne3\tt3\tnontarget\n", p).unwrap();
        assert_eq!(trials[0], Trial::new("e1", "t1"));
        assert_eq!(trials[1], Trial::labeled("e2", "t2", true));
        assert_eq!(trials[2], Trial::labeled("e3", "t3", false));
        assert!(parse_trials("e1\tt1\tmaybe\n", p).is_err());
        assert!(parse_trials("e1 t1\n", p).is_err());
        assert!(parse_trials("", p).unwrap().is_empty());
    }

    #[test]
    fn priors_parse() {
        let p = Path::new("p");
        let text = "# priors\ncondition.1.p_same_given_ss = 0.8\ncondition.2.p_same_given_ds=0.1\n";
        let priors = parse_priors(text, p, 2).unwrap();
        assert_eq!(priors.p_same_given_ss(), &[0.8, 0.5]);
        assert_eq!(priors.p_same_given_ds(), &[0.5, 0.1]);
        assert!(parse_priors("condition.3.p_same_given_ss = 0.5", p, 2).is_err());
        assert!(parse_priors("condition.1.p_same_given_ss = 1.5", p, 2).is_err());
        assert!(parse_priors("condition.1.p_other = 0.5", p, 2).is_err());
        assert!(parse_priors("speaker.p = 0.5", p, 2).is_err());
    }

    #[test]
    fn scores_reject_garbage() {
        let p = Path::new("s");
        assert!(parse_scores("a\tb\tnot-a-number\n", p).is_err());
        assert!(parse_scores("a\tb\n", p).is_err());
    }

    #[test]
    fn score_format_examples() {
        assert_eq!(format_score(1.0), "1.0000000000000000e0");
        assert_eq!(format_score(-0.1), "-1.0000000000000001e-1");
    }

    proptest! {
        #[test]
        fn score_text_roundtrips_exactly(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back: f64 = format_score(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
