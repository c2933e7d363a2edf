//! CSV and JSON serialization of datasets, bandit records and training traces.
//!
//! Tuple datasets are stored as a flat CSV (`o_minus,o,a,r,o_plus`) plus a
//! sidecar JSON file at `<csv path>.meta.json` holding metadata and `ν_O`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::kernel::TraceRow;
use crate::model::{BanditDataset, BanditTuple, InitObs, Obs, TransitionTuple, TupleDataset};

/// How observation columns are encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsKind {
    Discrete,
    Continuous,
}

/// Sidecar record stored next to a tuple CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSidecar {
    pub env_id: String,
    pub seed: u64,
    pub n: usize,
    pub gamma: f64,
    pub obs_kind: ObsKind,
    pub init_obs: InitObs,
}

#[derive(Debug, Serialize, Deserialize)]
struct TupleRow {
    o_minus: String,
    o: String,
    a: usize,
    r: f64,
    o_plus: String,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut s = csv.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Index as an integer, real vectors as `;`-separated decimals.
pub fn format_obs(o: &Obs) -> String {
    match o {
        Obs::Discrete(i) => i.to_string(),
        Obs::Continuous(v) => v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(";"),
    }
}

pub fn parse_obs(s: &str, kind: ObsKind) -> Result<Obs> {
    let s = s.trim();
    match kind {
        ObsKind::Discrete => s
            .parse::<usize>()
            .map(Obs::Discrete)
            .map_err(|_| Error::validation(format!("invalid discrete observation {s:?}"))),
        ObsKind::Continuous => {
            let v = s
                .split(';')
                .map(|p| p.trim().parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<SmallVec<[f64; 2]>>>()
                .ok_or_else(|| Error::validation(format!("invalid continuous observation {s:?}")))?;
            Ok(Obs::Continuous(v))
        }
    }
}

fn obs_kind_of(data: &TupleDataset) -> ObsKind {
    match data.tuples.first().map(|t| &t.o) {
        Some(Obs::Continuous(_)) => ObsKind::Continuous,
        _ => match &data.init_obs {
            InitObs::Samples(s) if matches!(s.first(), Some(Obs::Continuous(_))) => ObsKind::Continuous,
            _ => ObsKind::Discrete,
        },
    }
}

pub fn write_tuples_to<W: Write>(w: W, data: &TupleDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for t in &data.tuples {
        wtr.serialize(TupleRow {
            o_minus: format_obs(&t.o_minus),
            o: format_obs(&t.o),
            a: t.a,
            r: t.r,
            o_plus: format_obs(&t.o_plus),
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Write the tuple CSV and its sidecar. Population weights are not stored.
pub fn write_tuples(path: &Path, data: &TupleDataset) -> Result<()> {
    if data.weights.is_some() {
        return Err(Error::validation("weighted datasets cannot be written as tuple CSV"));
    }
    write_tuples_to(BufWriter::new(File::create(path)?), data)?;
    let side = DatasetSidecar {
        env_id: data.meta.env_id.clone(),
        seed: data.meta.seed,
        n: data.len(),
        gamma: data.meta.gamma,
        obs_kind: obs_kind_of(data),
        init_obs: data.init_obs.clone(),
    };
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar_path(path))?), &side)?;
    Ok(())
}

/// Parse tuple rows. Without a kind, a file whose observations are all
/// plain non-negative integers is read as discrete.
pub fn read_tuple_rows<R: Read>(r: R, kind: Option<ObsKind>) -> Result<(Vec<TransitionTuple>, ObsKind)> {
    let mut rdr = csv::Reader::from_reader(r);
    let rows: Vec<TupleRow> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    let kind = kind.unwrap_or_else(|| {
        let discrete = rows.iter().all(|row| {
            [&row.o_minus, &row.o, &row.o_plus].iter().all(|s| s.trim().parse::<usize>().is_ok())
        });
        if discrete {
            ObsKind::Discrete
        } else {
            ObsKind::Continuous
        }
    });
    let tuples = rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if !row.r.is_finite() {
                return Err(Error::validation(format!("row {i}: non-finite reward")));
            }
            Ok(TransitionTuple {
                o_minus: parse_obs(&row.o_minus, kind)?,
                o: parse_obs(&row.o, kind)?,
                a: row.a,
                r: row.r,
                o_plus: parse_obs(&row.o_plus, kind)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok((tuples, kind))
}

/// Read a tuple CSV, using its sidecar when present.
///
/// `gamma` overrides the stored discount. Without a sidecar `ν_O` falls back
/// to the empirical law of the `O` column and the discount must be supplied.
pub fn read_tuples(path: &Path, gamma: Option<f64>) -> Result<TupleDataset> {
    let side_path = sidecar_path(path);
    let side: Option<DatasetSidecar> = if side_path.exists() {
        Some(serde_json::from_reader(BufReader::new(File::open(&side_path)?))?)
    } else {
        None
    };
    let (tuples, kind) = read_tuple_rows(BufReader::new(File::open(path)?), side.as_ref().map(|s| s.obs_kind))?;
    if tuples.is_empty() {
        return Err(Error::validation(format!("{} holds no tuples", path.display())));
    }
    let gamma = gamma
        .or(side.as_ref().map(|s| s.gamma))
        .ok_or_else(|| Error::validation("discount not given and no sidecar metadata found"))?;
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::validation(format!("discount must lie in [0,1), got {gamma}")));
    }
    match side {
        Some(s) => {
            if s.n != tuples.len() {
                return Err(Error::validation(format!("sidecar records n={} but the CSV has {} rows", s.n, tuples.len())));
            }
            TupleDataset::new(tuples, s.init_obs, &s.env_id, s.seed, gamma)
        }
        None => {
            let init = match kind {
                ObsKind::Discrete => {
                    let k = tuples.iter().filter_map(|t| t.o.index()).max().unwrap_or(0) + 1;
                    let mut p = vec![0.0; k];
                    for t in &tuples {
                        p[t.o.index().unwrap_or(0)] += 1.0 / tuples.len() as f64;
                    }
                    InitObs::Exact(p)
                }
                ObsKind::Continuous => InitObs::Samples(tuples.iter().map(|t| t.o.clone()).collect()),
            };
            TupleDataset::new(tuples, init, "unknown", 0, gamma)
        }
    }
}

pub fn write_bandit(path: &Path, data: &BanditDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in &data.records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Read bandit records `o_minus,a,o,r`; sizes are taken from the largest index seen.
pub fn read_bandit(path: &Path) -> Result<BanditDataset> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    let records: Vec<BanditTuple> = rdr.deserialize().collect::<std::result::Result<_, _>>()?;
    if records.is_empty() {
        return Err(Error::validation(format!("{} holds no records", path.display())));
    }
    let size = |f: fn(&BanditTuple) -> usize| records.iter().map(f).max().unwrap_or(0) + 1;
    let (np, no, na) = (size(|r| r.o_minus), size(|r| r.o), size(|r| r.a));
    BanditDataset::new(records, None, np, no, na)
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(path)?));
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
