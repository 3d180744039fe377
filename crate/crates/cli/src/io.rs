//! On-disk formats: SUPTOMO-VEC1 vectors with a text geometry header, P5 PGM
//! previews and versioned CSV curves.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use supertomo_core::solvers::TraceRecord;
use supertomo_core::{Image, ScanGeometry};

use crate::CliError;

pub const VEC_MAGIC: &[u8; 12] = b"SUPTOMO-VEC1";
pub const HEADER_VERSION: &str = "# supertomo-header v1";
pub const CURVE_VERSION: &str = "# supertomo-curve v1";
pub const CURVE_COLUMNS: &str = "k,seconds,f,tv,se";

/// Display window in cm⁻¹: at or below `WINDOW_LOW` is black, at or above
/// `WINDOW_HIGH` is white.
pub const WINDOW_LOW: f64 = 0.204;
pub const WINDOW_HIGH: f64 = 0.21675;

pub fn write_vec<W: Write>(mut w: W, values: &[f64]) -> Result<(), CliError> {
    let mut buf = Vec::with_capacity(20 + 8 * values.len());
    buf.extend_from_slice(VEC_MAGIC);
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(CliError::io("writing vector"))
}

pub fn read_vec<R: Read>(mut r: R) -> Result<Vec<f64>, CliError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(CliError::io("reading vector"))?;
    let body = buf
        .strip_prefix(VEC_MAGIC.as_slice())
        .ok_or_else(|| CliError::Format("missing SUPTOMO-VEC1 magic".into()))?;
    if body.len() < 8 {
        return Err(CliError::Format("truncated vector length".into()));
    }
    let (len, payload) = body.split_at(8);
    let len = u64::from_le_bytes(len.try_into().expect("8 bytes")) as usize;
    if payload.len() != len.saturating_mul(8) {
        return Err(CliError::Format(format!(
            "vector declares {len} values but holds {} bytes",
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

/// What a `.vec` file holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VecKind {
    Image,
    Sinogram,
}

impl VecKind {
    fn name(self) -> &'static str {
        match self {
            VecKind::Image => "image",
            VecKind::Sinogram => "sinogram",
        }
    }
}

pub fn format_header(kind: VecKind, geom: &ScanGeometry) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{HEADER_VERSION}");
    let _ = writeln!(s, "kind = {}", kind.name());
    let _ = writeln!(s, "grid_rows = {}", geom.grid_rows);
    let _ = writeln!(s, "grid_cols = {}", geom.grid_cols);
    let _ = writeln!(s, "pixel_size = {}", geom.pixel_size);
    let _ = writeln!(s, "n_angles = {}", geom.n_angles);
    let _ = writeln!(s, "n_rays = {}", geom.n_rays);
    let _ = writeln!(s, "ray_spacing = {}", geom.ray_spacing);
    s
}

pub fn parse_header(text: &str) -> Result<(VecKind, ScanGeometry), CliError> {
    let mut kind = None;
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Format(format!("header line `{line}` is not key = value")))?;
        let (k, v) = (k.trim(), v.trim());
        if k == "kind" {
            kind = Some(match v {
                "image" => VecKind::Image,
                "sinogram" => VecKind::Sinogram,
                other => return Err(CliError::Format(format!("unknown header kind `{other}`"))),
            });
        } else {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    fn field<T: std::str::FromStr>(
        fields: &std::collections::HashMap<String, String>,
        key: &str,
    ) -> Result<T, CliError> {
        fields
            .get(key)
            .ok_or_else(|| CliError::Format(format!("header lacks `{key}`")))?
            .parse()
            .map_err(|_| CliError::Format(format!("header `{key}` is not a number")))
    }
    let geom = ScanGeometry::new(
        field(&fields, "n_angles")?,
        field(&fields, "n_rays")?,
        field(&fields, "ray_spacing")?,
        field(&fields, "pixel_size")?,
        field(&fields, "grid_rows")?,
        field(&fields, "grid_cols")?,
    )
    .map_err(|e| CliError::Format(format!("header geometry: {e}")))?;
    let kind = kind.ok_or_else(|| CliError::Format("header lacks `kind`".into()))?;
    Ok((kind, geom))
}

/// Sidecar header path for a `.vec` file.
pub fn header_path(vec: &Path) -> PathBuf {
    vec.with_extension("hdr")
}

/// Writes `stem.vec` and `stem.hdr` under `dir`.
pub fn save_vec(
    dir: &Path,
    stem: &str,
    kind: VecKind,
    geom: &ScanGeometry,
    values: &[f64],
) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.vec"));
    let file = fs::File::create(&path).map_err(CliError::io_at(&path))?;
    write_vec(std::io::BufWriter::new(file), values)?;
    let hdr = header_path(&path);
    fs::write(&hdr, format_header(kind, geom)).map_err(CliError::io_at(&hdr))?;
    Ok(path)
}

/// Reads a `.vec` file and its header, checking the declared kind and length.
pub fn load_vec(path: &Path, want: VecKind) -> Result<(ScanGeometry, Vec<f64>), CliError> {
    let hdr = header_path(path);
    let text = fs::read_to_string(&hdr).map_err(CliError::io_at(&hdr))?;
    let (kind, geom) = parse_header(&text)?;
    if kind != want {
        return Err(CliError::Format(format!(
            "{} holds a {}, expected a {}",
            path.display(),
            kind.name(),
            want.name()
        )));
    }
    let file = fs::File::open(path).map_err(CliError::io_at(path))?;
    let values = read_vec(std::io::BufReader::new(file))?;
    let expected = match kind {
        VecKind::Image => geom.n_pixels(),
        VecKind::Sinogram => geom.n_measurements(),
    };
    if values.len() != expected {
        return Err(CliError::Format(format!(
            "{} holds {} values, header geometry needs {expected}",
            path.display(),
            values.len()
        )));
    }
    Ok((geom, values))
}

/// Gray level of `v` under the display window: linear, rounded half away
/// from zero, clamped to 0..=255.
pub fn gray_level(v: f64) -> u8 {
    let t = (v - WINDOW_LOW) / (WINDOW_HIGH - WINDOW_LOW) * 255.0;
    if t.is_nan() {
        0
    } else {
        t.round().clamp(0.0, 255.0) as u8
    }
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    out.extend(img.data().iter().map(|&v| gray_level(v)));
    out
}

pub fn save_pgm(dir: &Path, stem: &str, img: &Image) -> Result<PathBuf, CliError> {
    let path = dir.join(format!("{stem}.pgm"));
    fs::write(&path, encode_pgm(img)).map_err(CliError::io_at(&path))?;
    Ok(path)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row `k,seconds,f,tv,se`; floats use shortest round-trip form.
pub fn curve_row(t: &TraceRecord) -> String {
    format!("{},{},{},{},{}", t.k, t.seconds, t.f, t.tv, opt(t.se))
}

pub fn format_curve(trace: &[TraceRecord]) -> String {
    let mut s = format!("{CURVE_VERSION}\n{CURVE_COLUMNS}\n");
    for t in trace {
        s.push_str(&curve_row(t));
        s.push('\n');
    }
    s
}

/// A curve row read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub k: usize,
    pub seconds: f64,
    pub f: f64,
    pub tv: f64,
    pub se: Option<f64>,
}

impl From<&TraceRecord> for CurvePoint {
    fn from(t: &TraceRecord) -> Self {
        CurvePoint {
            k: t.k,
            seconds: t.seconds,
            f: t.f,
            tv: t.tv,
            se: t.se,
        }
    }
}

pub(crate) fn parse_curve_fields(fields: &[&str]) -> Result<CurvePoint, CliError> {
    let bad = |what: &str| CliError::Format(format!("curve row: bad {what} in `{}`", fields.join(",")));
    let [k, seconds, f, tv, se] = fields else {
        return Err(CliError::Format(format!("curve row has {} fields, expected 5", fields.len())));
    };
    Ok(CurvePoint {
        k: k.parse().map_err(|_| bad("k"))?,
        seconds: seconds.parse().map_err(|_| bad("seconds"))?,
        f: f.parse().map_err(|_| bad("f"))?,
        tv: tv.parse().map_err(|_| bad("tv"))?,
        se: if se.is_empty() {
            None
        } else {
            Some(se.parse().map_err(|_| bad("se"))?)
        },
    })
}

pub fn parse_curve(text: &str) -> Result<Vec<CurvePoint>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(CURVE_VERSION) {
        return Err(CliError::Format(format!("curve must start with `{CURVE_VERSION}`")));
    }
    if lines.next() != Some(CURVE_COLUMNS) {
        return Err(CliError::Format(format!("curve header must be `{CURVE_COLUMNS}`")));
    }
    lines
        .map(|l| parse_curve_fields(&l.split(',').collect::<Vec<_>>()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_end_points_and_midpoint() {
        assert_eq!(gray_level(0.204), 0);
        assert_eq!(gray_level(0.21675), 255);
        assert_eq!(gray_level(0.1), 0);
        assert_eq!(gray_level(0.5), 255);
        assert!(matches!(gray_level(0.2104), 127 | 128));
        assert_eq!(gray_level(f64::NAN), 0);
    }

    #[test]
    fn vec_round_trip_is_bitwise() {
        let values = [0.0, -0.0, 1.5, f64::MIN_POSITIVE, 1e300, -7.25];
        let mut buf = Vec::new();
        write_vec(&mut buf, &values).unwrap();
        assert_eq!(&buf[..12], VEC_MAGIC);
        assert_eq!(buf.len(), 20 + 8 * values.len());
        let back = read_vec(buf.as_slice()).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&values));
    }

    #[test]
    fn vec_rejects_bad_input() {
        assert!(read_vec(&b"SUPTOMO-CSR1\0\0\0\0\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_vec(&mut buf, &[1.0, 2.0]).unwrap();
        buf.pop();
        assert!(read_vec(buf.as_slice()).is_err());
    }

    #[test]
    fn header_round_trip() {
        let g = ScanGeometry::desk_scale();
        let text = format_header(VecKind::Sinogram, &g);
        assert_eq!(parse_header(&text).unwrap(), (VecKind::Sinogram, g));
        assert!(parse_header("kind = image\n").is_err());
    }

    #[test]
    fn pgm_layout() {
        let img = Image::new(2, 3, vec![0.0, 0.204, 0.21, 0.21675, 1.0, 0.2104]).unwrap();
        let pgm = encode_pgm(&img);
        let head = b"P5\n3 2\n255\n";
        assert_eq!(&pgm[..head.len()], head);
        assert_eq!(&pgm[head.len()..], &[0, 0, gray_level(0.21), 255, 255, gray_level(0.2104)]);
    }

    #[test]
    fn curve_round_trip() {
        let trace = vec![
            TraceRecord { k: 1, seconds: 0.0, f: 12.5, objective: 12.5, tv: 3.0, se: Some(0.1), ell: 0, step_norm: None },
            TraceRecord { k: 2, seconds: 0.25, f: 1.0 / 3.0, objective: 1.0, tv: 2.0, se: None, ell: 40, step_norm: Some(0.1) },
        ];
        let text = format_curve(&trace);
        let back = parse_curve(&text).unwrap();
        assert_eq!(back, trace.iter().map(CurvePoint::from).collect::<Vec<_>>());
        assert!(parse_curve("k,seconds,f,tv,se\n").is_err());
    }
}
