//! Panel datasets as CSV.
//!
//! One row per subject and time:
//!
//! ```text
//! subject_id,group_id,time,split,x_0,...,x_{d-1}[,true_z0_0,...][,true_w_0,...]
//! ```
//!
//! `split` is `interp` or `extrap`. Floats are written with 17 significant
//! digits so values read back bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use menode_core::data::{PanelDataset, Subject};
use menode_core::Tensor;

use crate::error::{open, AppError, Result};

/// Shortest exact-enough form: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv<W: Write>(ds: &PanelDataset, out: W) -> Result<()> {
    let n_z0 = truth_dim(ds, |s| s.true_z0.as_ref());
    let n_w = truth_dim(ds, |s| s.true_w.as_ref());
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header: Vec<String> = ["subject_id", "group_id", "time", "split"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..ds.obs_dim).map(|j| format!("x_{j}")));
    header.extend((0..n_z0).map(|j| format!("true_z0_{j}")));
    header.extend((0..n_w).map(|j| format!("true_w_{j}")));
    w.write_record(&header).map_err(csv_err)?;
    for s in &ds.subjects {
        for (k, &t) in ds.times.iter().enumerate() {
            let mut rec = vec![
                s.id.to_string(),
                s.group.to_string(),
                fmt_f64(t),
                if k < ds.split { "interp" } else { "extrap" }.to_string(),
            ];
            rec.extend(s.obs.row(k).iter().map(|&v| fmt_f64(v)));
            push_truth(&mut rec, s.true_z0.as_ref(), n_z0);
            push_truth(&mut rec, s.true_w.as_ref(), n_w);
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn truth_dim(ds: &PanelDataset, f: impl Fn(&Subject) -> Option<&Vec<f64>>) -> usize {
    ds.subjects.iter().filter_map(|s| f(s).map(Vec::len)).max().unwrap_or(0)
}

fn push_truth(rec: &mut Vec<String>, v: Option<&Vec<f64>>, n: usize) {
    match v {
        Some(v) => rec.extend(v.iter().map(|&x| fmt_f64(x))),
        None => rec.extend(std::iter::repeat_n(String::new(), n)),
    }
}

pub fn write_csv_path(ds: &PanelDataset, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_csv(ds, std::io::BufWriter::new(f))
}

pub fn read_csv_path(path: &Path) -> Result<PanelDataset> {
    read_csv(std::io::BufReader::new(open(path)?))
}

struct Columns {
    subject: usize,
    group: usize,
    time: usize,
    split: usize,
    x: Vec<usize>,
    z0: Vec<usize>,
    w: Vec<usize>,
}

fn indexed(header: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix(prefix).and_then(|n| n.parse().ok()).map(|n| (n, i)))
        .collect();
    found.sort();
    found.into_iter().map(|(_, i)| i).collect()
}

impl Columns {
    fn from_header(h: &csv::StringRecord) -> Result<Self> {
        let find = |name: &str| {
            h.iter()
                .position(|c| c == name)
                .ok_or_else(|| AppError::MissingColumn(name.to_string()))
        };
        let cols = Columns {
            subject: find("subject_id")?,
            group: find("group_id")?,
            time: find("time")?,
            split: find("split")?,
            x: indexed(h, "x_"),
            z0: indexed(h, "true_z0_"),
            w: indexed(h, "true_w_"),
        };
        if cols.x.is_empty() {
            return Err(AppError::MissingColumn("x_0".into()));
        }
        Ok(cols)
    }
}

struct Partial {
    id: u64,
    group: u32,
    times: Vec<f64>,
    splits: Vec<bool>,
    obs: Vec<f64>,
    z0: Option<Vec<f64>>,
    w: Option<Vec<f64>>,
}

pub fn read_csv<R: Read>(input: R) -> Result<PanelDataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    let cols = Columns::from_header(&header)?;
    let d = cols.x.len();
    let mut subjects: Vec<Partial> = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| rec.get(i).unwrap_or("");
        let parse_f = |i: usize| -> Result<f64> {
            field(i).trim().parse::<f64>().map_err(|_| AppError::Parse {
                line,
                message: format!("column {:?}: not a number: {:?}", &header[i], field(i)),
            })
        };
        let id: u64 = field(cols.subject).trim().parse().map_err(|_| AppError::Parse {
            line,
            message: format!("bad subject_id {:?}", field(cols.subject)),
        })?;
        let group: u32 = field(cols.group).trim().parse().map_err(|_| AppError::Parse {
            line,
            message: format!("bad group_id {:?}", field(cols.group)),
        })?;
        let interp = match field(cols.split) {
            "interp" => true,
            "extrap" => false,
            other => {
                return Err(AppError::Parse {
                    line,
                    message: format!("split must be interp or extrap, got {other:?}"),
                })
            }
        };
        let t = parse_f(cols.time)?;
        let truth = |idx: &[usize]| -> Result<Option<Vec<f64>>> {
            if idx.is_empty() || idx.iter().all(|&i| field(i).is_empty()) {
                return Ok(None);
            }
            idx.iter().map(|&i| parse_f(i)).collect::<Result<Vec<_>>>().map(Some)
        };
        let z0 = truth(&cols.z0)?;
        let w = truth(&cols.w)?;
        let new_subject = subjects.last().is_none_or(|s| s.id != id);
        if new_subject {
            if subjects.iter().any(|s| s.id == id) {
                return Err(AppError::Parse {
                    line,
                    message: format!("rows of subject {id} are not contiguous"),
                });
            }
            subjects.push(Partial {
                id,
                group,
                times: Vec::new(),
                splits: Vec::new(),
                obs: Vec::new(),
                z0: z0.clone(),
                w: w.clone(),
            });
        }
        let s = subjects.last_mut().unwrap();
        if s.group != group || s.z0 != z0 || s.w != w {
            return Err(AppError::Parse {
                line,
                message: format!("subject {id} changes group or ground truth between rows"),
            });
        }
        s.times.push(t);
        s.splits.push(interp);
        for &i in &cols.x {
            s.obs.push(parse_f(i)?);
        }
    }

    let Some(first) = subjects.first() else {
        return Ok(PanelDataset {
            times: Vec::new(),
            split: 0,
            obs_dim: d,
            subjects: Vec::new(),
        });
    };
    let first_id = first.id;
    let times = first.times.clone();
    let splits = first.splits.clone();
    let split = splits.iter().take_while(|&&b| b).count();
    if splits[split..].iter().any(|&b| b) {
        return Err(AppError::Data(format!(
            "subject {first_id}: interp rows must precede extrap rows"
        )));
    }
    let mut out = Vec::with_capacity(subjects.len());
    for p in subjects {
        if p.times != times || p.splits != splits {
            return Err(AppError::Data(format!(
                "subject {} does not share the time grid of subject {first_id}",
                p.id
            )));
        }
        out.push(Subject {
            id: p.id,
            group: p.group,
            obs: Tensor::matrix(times.len(), d, p.obs),
            true_z0: p.z0,
            true_w: p.w,
        });
    }
    PanelDataset::new(times, split, d, out).map_err(|e| AppError::Data(e.to_string()))
}

fn csv_err(e: csv::Error) -> AppError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => AppError::Io(io),
        other => AppError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}
