//! Metric evaluation of RF images and report emission (CSV, JSON, PNG).
//!
//! CSV columns, in order:
//!
//! `image, scenario, iterations, nrmse, ssim, ks_statistic, ks_critical,
//! ks_pass, cnr_db_1, gcnr_1, cnr_db_2, gcnr_2, ...`
//!
//! with one `cnr_db_i, gcnr_i` pair per ROI pair. Numbers are written with
//! nine significant digits; missing values are empty cells. Rows follow the
//! input order.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::envelope::{bmode, envelope, BModeImage, DEFAULT_DYNAMIC_RANGE_DB};
use super::store::{read_json, to_json};
use super::tensor_file::write_atomic;
use crate::beamformer::{ImageGrid, RfImage};
use crate::error::{Error, Result};
use crate::metrics::{
    circular_roi, cnr, gcnr, ks_test, nrmse, ssim, MetricsReport, PixelSet, RoiRole, RoiSpec, GCNR_BINS,
};
use crate::simulator::test_cysts;

pub const KS_ALPHA: f64 = 0.05;
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";

const ROI_COLOR: Rgb<u8> = Rgb([230, 40, 40]);
const BACKGROUND_COLOR: Rgb<u8> = Rgb([40, 200, 60]);

/// A region and the background it is contrasted against.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiPair {
    pub roi: RoiSpec,
    pub background: RoiSpec,
}

/// Pairs a flat ROI list: every `roi` entry is followed by its `background`.
pub fn pair_rois(specs: &[RoiSpec]) -> Result<Vec<RoiPair>> {
    if specs.len() % 2 != 0 {
        return Err(Error::invalid("ROI list must alternate roi and background entries"));
    }
    specs
        .chunks(2)
        .enumerate()
        .map(|(i, c)| match (c[0].role, c[1].role) {
            (RoiRole::Roi, RoiRole::Background) => Ok(RoiPair {
                roi: c[0].clone(),
                background: c[1].clone(),
            }),
            _ => Err(Error::invalid(format!(
                "ROI pair {}: expected a roi entry followed by a background entry",
                i + 1
            ))),
        })
        .collect()
}

pub fn flatten_rois(pairs: &[RoiPair]) -> Vec<RoiSpec> {
    pairs
        .iter()
        .flat_map(|p| [p.roi.clone(), p.background.clone()])
        .collect()
}

pub fn load_roi_file(path: &Path) -> Result<Vec<RoiPair>> {
    let specs: Vec<RoiSpec> = read_json(path)?;
    pair_rois(&specs).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

pub fn save_roi_file(path: &Path, pairs: &[RoiPair]) -> Result<()> {
    write_atomic(path, to_json(&flatten_rois(pairs))?.as_bytes())
}

/// ROI pairs for the two-cyst test phantom: a disk of 0.8 radii inside each
/// cyst and an equal disk of speckle beside it at the same depth.
pub fn test_phantom_rois() -> Vec<RoiPair> {
    test_cysts()
        .iter()
        .map(|c| RoiPair {
            roi: RoiSpec {
                center: c.center,
                radius: 0.8 * c.radius,
                role: RoiRole::Roi,
            },
            background: RoiSpec {
                center: [c.center[0] + 2.2 * c.radius, c.center[1]],
                radius: 0.8 * c.radius,
                role: RoiRole::Background,
            },
        })
        .collect()
}

fn gather(img: &ndarray::Array2<f64>, set: &PixelSet) -> Vec<f64> {
    set.iter().map(|&p| img[p]).collect()
}

/// Evaluates one image.
///
/// CNR and gCNR use the envelope for every ROI pair; NRMSE (RF) and SSIM
/// (B-mode) need `target`; KS compares B-mode intensities over the union of
/// background regions (the whole image when there are none) against
/// `reference`.
pub fn evaluate_image(
    name: &str,
    image: &RfImage,
    target: Option<&RfImage>,
    reference: Option<&RfImage>,
    pairs: &[RoiPair],
) -> Result<MetricsReport> {
    let grid = image.grid.clone();
    let check_grid = |other: &RfImage, what: &str| {
        if other.grid != grid {
            Err(Error::invalid(format!("{what} grid differs from the image grid")))
        } else {
            Ok(())
        }
    };
    let env = envelope(image)?;
    let mut report = MetricsReport {
        image: name.to_string(),
        scenario: None,
        iterations: None,
        cnr_db: Vec::with_capacity(pairs.len()),
        gcnr: Vec::with_capacity(pairs.len()),
        nrmse: None,
        ssim: None,
        ks: None,
    };
    let mut background: PixelSet = Vec::new();
    for pair in pairs {
        let roi = circular_roi(&pair.roi, &grid)?;
        let bg = circular_roi(&pair.background, &grid)?;
        report.cnr_db.push(cnr(&env, &roi, &bg)?);
        report.gcnr.push(gcnr(&env, &roi, &bg, GCNR_BINS)?);
        background.extend(bg);
    }
    background.sort_unstable();
    background.dedup();
    let img_bmode = bmode(&env, DEFAULT_DYNAMIC_RANGE_DB)?;
    if let Some(t) = target {
        check_grid(t, "target")?;
        report.nrmse = Some(nrmse(&image.data, &t.data)?);
        let t_bmode = bmode(&envelope(t)?, DEFAULT_DYNAMIC_RANGE_DB)?;
        report.ssim = Some(ssim(&img_bmode.data, &t_bmode.data)?);
    }
    if let Some(r) = reference {
        check_grid(r, "reference")?;
        if background.is_empty() {
            let (nz, nx) = image.data.dim();
            background = (0..nz).flat_map(|iz| (0..nx).map(move |ix| (iz, ix))).collect();
        }
        let r_bmode = bmode(&envelope(r)?, DEFAULT_DYNAMIC_RANGE_DB)?;
        report.ks = Some(ks_test(
            &gather(&img_bmode.data, &background),
            &gather(&r_bmode.data, &background),
            KS_ALPHA,
        )?);
    }
    report.validate()?;
    Ok(report)
}

fn num(v: f64) -> String {
    format!("{v:.8e}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Metrics as CSV text.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let n_pairs = reports.iter().map(|r| r.cnr_db.len()).max().unwrap_or(0);
    let mut out = String::from("image,scenario,iterations,nrmse,ssim,ks_statistic,ks_critical,ks_pass");
    for i in 1..=n_pairs {
        let _ = write!(out, ",cnr_db_{i},gcnr_{i}");
    }
    out.push('\n');
    for r in reports {
        let mut cells = vec![
            csv_field(&r.image),
            r.scenario.as_deref().map(csv_field).unwrap_or_default(),
            r.iterations.map(|n| n.to_string()).unwrap_or_default(),
            r.nrmse.map(num).unwrap_or_default(),
            r.ssim.map(num).unwrap_or_default(),
            r.ks.map(|k| num(k.statistic)).unwrap_or_default(),
            r.ks.map(|k| num(k.critical)).unwrap_or_default(),
            r.ks.map(|k| k.pass.to_string()).unwrap_or_default(),
        ];
        for i in 0..n_pairs {
            cells.push(r.cnr_db.get(i).copied().map(num).unwrap_or_default());
            cells.push(r.gcnr.get(i).copied().map(num).unwrap_or_default());
        }
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// B-mode panel input: the image and the regions to outline.
#[derive(Debug, Clone)]
pub struct Panel {
    pub bmode: BModeImage,
    pub grid: ImageGrid,
    pub rois: Vec<RoiPair>,
}

impl Panel {
    pub fn from_rf(image: &RfImage, rois: &[RoiPair]) -> Result<Self> {
        Ok(Self {
            bmode: bmode(&envelope(image)?, DEFAULT_DYNAMIC_RANGE_DB)?,
            grid: image.grid.clone(),
            rois: rois.to_vec(),
        })
    }
}

/// Renders a B-mode panel with physical aspect ratio: one row per depth
/// sample and columns stretched to the lateral pixel size.
pub fn render_bmode(panel: &Panel) -> RgbImage {
    let g = &panel.grid;
    let (nz, nx) = panel.bmode.data.dim();
    let width = ((nx as f64 * g.dx / g.dz).round() as usize).max(nx);
    let px = g.dx * nx as f64 / width as f64;
    let dr = panel.bmode.dynamic_range;
    let mut img = RgbImage::from_fn(width as u32, nz as u32, |c, r| {
        let ix = (c as usize * nx / width).min(nx - 1);
        let db = panel.bmode.data[(r as usize, ix)];
        let v = (((db + dr) / dr).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    let left = g.x0 - g.dx / 2.0;
    for pair in &panel.rois {
        for (spec, color) in [(&pair.roi, ROI_COLOR), (&pair.background, BACKGROUND_COLOR)] {
            let perimeter = 2.0 * std::f64::consts::PI * spec.radius;
            let n = ((perimeter / px.min(g.dz)) * 2.0).ceil().max(16.0) as usize;
            for k in 0..n {
                let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
                let x = spec.center[0] + spec.radius * a.cos();
                let z = spec.center[1] + spec.radius * a.sin();
                let c = ((x - left) / px).floor();
                let r = ((z - g.z0) / g.dz).round();
                if c >= 0.0 && r >= 0.0 && (c as usize) < width && (r as usize) < nz {
                    img.put_pixel(c as u32, r as u32, color);
                }
            }
        }
    }
    img
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    write_atomic(path, &bytes)
}

fn file_stem_for(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if s.is_empty() {
        "image".into()
    } else {
        s
    }
}

/// Writes `metrics.csv`, `metrics.json` and one `<image>.png` panel per
/// report into `outdir`. Returns the written paths.
pub fn emit_report(entries: &[(MetricsReport, Panel)], outdir: &Path) -> Result<Vec<PathBuf>> {
    if entries.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let reports: Vec<MetricsReport> = entries.iter().map(|(r, _)| r.clone()).collect();
    let csv = outdir.join(METRICS_CSV);
    write_atomic(&csv, reports_to_csv(&reports).as_bytes())?;
    let json = outdir.join(METRICS_JSON);
    write_atomic(&json, to_json(&reports)?.as_bytes())?;
    let mut written = vec![csv, json];
    let mut used = std::collections::HashSet::new();
    for (i, (report, panel)) in entries.iter().enumerate() {
        let mut stem = file_stem_for(&report.image);
        if !used.insert(stem.clone()) {
            stem = format!("{stem}_{i}");
            used.insert(stem.clone());
        }
        let path = outdir.join(format!("{stem}.png"));
        save_png(&path, &render_bmode(panel))?;
        written.push(path);
    }
    Ok(written)
}

/// Quantile pairs as a two-column CSV.
pub fn qq_to_csv(points: &[(f64, f64)]) -> String {
    let mut out = String::from("theoretical,sample\n");
    for &(x, y) in points {
        let _ = writeln!(out, "{},{}", num(x), num(y));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::KsResult;
    use ndarray::Array2;
    use proptest::prelude::*;

    fn report(name: &str, v: f64) -> MetricsReport {
        MetricsReport {
            image: name.into(),
            scenario: Some("J1_K15".into()),
            iterations: Some(5),
            cnr_db: vec![v, -v],
            gcnr: vec![0.25, 0.5],
            nrmse: Some(v.abs()),
            ssim: None,
            ks: Some(KsResult {
                statistic: 0.1,
                critical: 0.2,
                alpha: 0.05,
                pass: true,
            }),
        }
    }

    fn parse(csv: &str) -> Vec<Vec<String>> {
        csv.lines().map(|l| l.split(',').map(String::from).collect()).collect()
    }

    #[test]
    fn header_and_row_order() {
        let csv = reports_to_csv(&[report("a", 1.0)]);
        let rows = parse(&csv);
        assert_eq!(rows.len(), 2);
        assert_eq!(
            rows[0],
            "image,scenario,iterations,nrmse,ssim,ks_statistic,ks_critical,ks_pass,cnr_db_1,gcnr_1,cnr_db_2,gcnr_2"
                .split(',')
                .collect::<Vec<_>>()
        );
        assert_eq!(rows[1][4], "");
        let ab = parse(&reports_to_csv(&[report("a", 1.0), report("b", 2.0)]));
        let ba = parse(&reports_to_csv(&[report("b", 2.0), report("a", 1.0)]));
        assert_eq!(ab[1], ba[2]);
        assert_eq!(ab[2], ba[1]);
    }

    proptest! {
        #[test]
        fn numbers_round_trip_at_nine_digits(v in -1e6f64..1e6) {
            let rows = parse(&reports_to_csv(&[report("x", v)]));
            let back: f64 = rows[1][8].parse().unwrap();
            let tol = v.abs() * 5e-9 + f64::MIN_POSITIVE;
            prop_assert!((back - v).abs() <= tol);
        }
    }

    #[test]
    fn roi_pairing_is_strict() {
        let flat = flatten_rois(&test_phantom_rois());
        assert_eq!(pair_rois(&flat).unwrap(), test_phantom_rois());
        assert!(pair_rois(&flat[1..3]).is_err());
        assert!(pair_rois(&flat[..3]).is_err());
    }

    #[test]
    fn identical_images_score_perfectly() {
        let grid = ImageGrid::new(-2e-3, 0.2e-3, 21, 1e-3, 0.1e-3, 64).unwrap();
        let data = Array2::from_shape_fn((64, 21), |(i, j)| ((i * 7 + j * 3) as f64 * 0.9).sin());
        let img = RfImage::new(data, grid, vec![0.0]).unwrap();
        let pairs = vec![RoiPair {
            roi: RoiSpec {
                center: [-1e-3, 3e-3],
                radius: 0.6e-3,
                role: RoiRole::Roi,
            },
            background: RoiSpec {
                center: [1e-3, 3e-3],
                radius: 0.6e-3,
                role: RoiRole::Background,
            },
        }];
        let r = evaluate_image("a", &img, Some(&img), Some(&img), &pairs).unwrap();
        assert_eq!(r.nrmse, Some(0.0));
        assert!((r.ssim.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.ks.unwrap().statistic, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let panel = Panel::from_rf(&img, &pairs).unwrap();
        let files = emit_report(&[(r.clone(), panel.clone()), (r, panel)], dir.path()).unwrap();
        assert_eq!(files.len(), 4);
        let png = image::open(&files[2]).unwrap().to_rgb8();
        assert_eq!(png.height(), 64);
        assert_eq!(png.width(), 42);
        assert!(png.pixels().any(|p| *p == ROI_COLOR));
        assert!(png.pixels().any(|p| *p == BACKGROUND_COLOR));
    }
}
