//! Dataset directory layout:
//!
//! ```text
//! meta.json          schema tag, generating grid, seeds, noise spec
//! samples.csv        sample,split,block,hour,v_slack
//! measurements.csv   sample,kind,location,value,sigma,pseudo,virtual
//! truth.csv          sample,bus,v,theta,p_set,q_set
//! ```
//!
//! Every CSV starts with a `# dsse-dataset/1` line. Floats are written with
//! Rust's shortest round-trip formatting, so load(save(d)) == d exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetMeta, Sample, Split};
use crate::acpf::InjectionSpec;
use crate::error::{Error, Result};
use crate::pf_equations::{Measurement, MeasurementKind, StateVector};

pub const DATASET_SCHEMA: &str = "dsse-dataset/1";

#[derive(Serialize, Deserialize)]
struct MetaFile {
    schema: String,
    slack: usize,
    n_buses: usize,
    #[serde(flatten)]
    meta: DatasetMeta,
}

fn write(dir: &Path, name: &str, body: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = ds.samples.first().ok_or_else(|| Error::Config("empty dataset".into()))?;
    let meta = MetaFile {
        schema: DATASET_SCHEMA.into(),
        slack: first.truth.slack(),
        n_buses: first.truth.n(),
        meta: ds.meta.clone(),
    };
    write(dir, "meta.json", &serde_json::to_string_pretty(&meta).expect("serializable"))?;

    let header = format!("# {DATASET_SCHEMA}\n");
    let mut samples = header.clone() + "sample,split,block,hour,v_slack\n";
    let mut meas = header.clone() + "sample,kind,location,value,sigma,pseudo,virtual\n";
    let mut truth = header + "sample,bus,v,theta,p_set,q_set\n";
    for (k, s) in ds.samples.iter().enumerate() {
        let _ = writeln!(samples, "{k},{},{},{},{}", ds.split[k].as_str(), s.block, s.hour, s.injections.v_slack);
        for m in &s.z {
            let _ = writeln!(
                meas,
                "{k},{},{},{},{},{},{}",
                m.kind.name(),
                m.kind.location(),
                m.value,
                m.sigma,
                u8::from(m.is_pseudo),
                u8::from(m.is_virtual)
            );
        }
        for i in 0..s.truth.n() {
            let _ = writeln!(
                truth,
                "{k},{i},{},{},{},{}",
                s.truth.v()[i],
                s.truth.theta()[i],
                s.injections.p[i],
                s.injections.q[i]
            );
        }
    }
    write(dir, "samples.csv", &samples)?;
    write(dir, "measurements.csv", &meas)?;
    write(dir, "truth.csv", &truth)
}

struct Rows {
    name: &'static str,
    lines: Vec<(usize, Vec<String>)>,
}

fn read_rows(dir: &Path, name: &'static str, width: usize) -> Result<Rows> {
    let path = dir.join(name);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == format!("# {DATASET_SCHEMA}") => {}
        _ => return Err(Error::Parse(format!("{name}: missing `# {DATASET_SCHEMA}` header"))),
    }
    lines.next();
    let mut out = Vec::new();
    for (no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(Error::Parse(format!("{name}:{}: expected {width} fields", no + 1)));
        }
        out.push((no + 1, fields));
    }
    Ok(Rows { name, lines: out })
}

fn num<T: std::str::FromStr>(rows: &Rows, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Parse(format!("{}:{line}: bad value {field:?}", rows.name)))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: MetaFile = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
    if meta.schema != DATASET_SCHEMA {
        return Err(Error::Parse(format!("unsupported dataset schema {:?}", meta.schema)));
    }
    let (n, slack) = (meta.n_buses, meta.slack);
    let count = meta.meta.n_samples;

    let rows = read_rows(dir, "samples.csv", 5)?;
    if rows.lines.len() != count {
        return Err(Error::Parse(format!("samples.csv lists {} samples, meta says {count}", rows.lines.len())));
    }
    let mut split = Vec::with_capacity(count);
    let mut header = Vec::with_capacity(count);
    for (line, f) in &rows.lines {
        let k: usize = num(&rows, *line, &f[0])?;
        if k != split.len() {
            return Err(Error::Parse(format!("samples.csv:{line}: samples out of order")));
        }
        split.push(match f[1].as_str() {
            "train" => Split::Train,
            "val" => Split::Val,
            "test" => Split::Test,
            other => return Err(Error::Parse(format!("samples.csv:{line}: unknown split {other:?}"))),
        });
        header.push((num::<usize>(&rows, *line, &f[2])?, num::<usize>(&rows, *line, &f[3])?, num::<f64>(&rows, *line, &f[4])?));
    }

    let mut z: Vec<Vec<Measurement>> = vec![Vec::new(); count];
    let rows = read_rows(dir, "measurements.csv", 7)?;
    for (line, f) in &rows.lines {
        let k: usize = num(&rows, *line, &f[0])?;
        let loc: usize = num(&rows, *line, &f[2])?;
        let kind = MeasurementKind::from_name(&f[1], loc)
            .ok_or_else(|| Error::Parse(format!("measurements.csv:{line}: unknown kind {:?}", f[1])))?;
        let sigma: f64 = num(&rows, *line, &f[4])?;
        if !(sigma > 0.0) || k >= count {
            return Err(Error::Parse(format!("measurements.csv:{line}: invalid record")));
        }
        z[k].push(Measurement {
            kind,
            value: num(&rows, *line, &f[3])?,
            sigma,
            is_pseudo: &f[5] == "1",
            is_virtual: &f[6] == "1",
        });
    }

    let mut truth = vec![(vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]); count];
    let rows = read_rows(dir, "truth.csv", 6)?;
    for (line, f) in &rows.lines {
        let k: usize = num(&rows, *line, &f[0])?;
        let i: usize = num(&rows, *line, &f[1])?;
        if k >= count || i >= n {
            return Err(Error::Parse(format!("truth.csv:{line}: index out of range")));
        }
        let t = &mut truth[k];
        t.0[i] = num(&rows, *line, &f[2])?;
        t.1[i] = num(&rows, *line, &f[3])?;
        t.2[i] = num(&rows, *line, &f[4])?;
        t.3[i] = num(&rows, *line, &f[5])?;
    }

    let samples = z
        .into_iter()
        .zip(truth)
        .zip(header)
        .map(|((z, (v, theta, p, q)), (block, hour, v_slack))| Sample {
            z,
            truth: StateVector::new_unchecked(v, theta, slack),
            injections: InjectionSpec { p, q, v_slack },
            hour,
            block,
        })
        .collect();
    Ok(Dataset { meta: meta.meta, samples, split })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_network;
    use crate::scenario::{generate_dataset, NoiseLevel, NoiseSpec, ScenarioConfig};

    #[test]
    fn dataset_round_trips_exactly() {
        let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
        let net = load_network(root.join("case14.grid")).unwrap();
        let cfg = ScenarioConfig::load(root.join("case14.scenario.json")).unwrap();
        let ds = generate_dataset(&net, &cfg, "case14.grid", 30, NoiseSpec::level(NoiseLevel::Default, 4), 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn rejects_missing_header() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("samples.csv"), "sample,split\n").unwrap();
        let err = read_rows(dir.path(), "samples.csv", 5).err().unwrap();
        assert!(err.to_string().contains(DATASET_SCHEMA));
    }
}
