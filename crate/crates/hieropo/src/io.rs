//! File formats: logged datasets (JSON Lines and CSV), ratings files,
//! policy and environment JSON, and schema-stamped results CSV.
//!
//! On the wire, task ids and actions are 1-based; in memory they are
//! 0-based. Every CSV output starts with a `# schema:` comment line naming
//! its versioned layout; JSON outputs carry a `schema` field. Floats are
//! written with shortest-roundtrip formatting, so identical inputs produce
//! byte-identical files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::envsim::{Environment, SlateSampler};
use crate::error::{Error, Result};
use crate::model::{HierModelConfig, LoggedDataset, LoggedRecord};
use crate::policy::{LearnedPolicy, LearnerKind, TaskBelief};
use crate::recsys::RatingsMatrix;

pub const DATASET_CSV_SCHEMA: &str = "hieropo.dataset.v1";
pub const RUN_CSV_SCHEMA: &str = "hieropo.results.run.v1";
pub const AGGREGATE_CSV_SCHEMA: &str = "hieropo.results.aggregate.v1";
pub const EVALUATION_CSV_SCHEMA: &str = "hieropo.results.evaluation.v1";
pub const POLICY_SCHEMA: &str = "hieropo.policy.v1";
pub const ENVIRONMENT_SCHEMA: &str = "hieropo.environment.v1";

const ENV_NOTE: &str = "simulator-only ground truth; the oracle fit is the \
                        one sanctioned consumer of mu_star";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let msg = e.to_string();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => io_err(path, io),
        _ => parse_err(path, 0, msg),
    }
}

// ---------------------------------------------------------------------------
// Generic JSON plumbing
// ---------------------------------------------------------------------------

/// Pretty-prints any serializable value as JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| parse_err(path, 0, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// Reads a JSON file, reporting the offending line on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| parse_err(path, e.line(), e.to_string()))
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

fn matrix_from_row_major(
    path: &Path,
    what: &str,
    d: usize,
    flat: &[f64],
) -> Result<DMatrix<f64>> {
    if flat.len() != d * d {
        return Err(parse_err(
            path,
            0,
            format!("{what}: expected {} entries ({d}x{d} row-major), got {}", d * d, flat.len()),
        ));
    }
    Ok(DMatrix::from_row_slice(d, d, flat))
}

// ---------------------------------------------------------------------------
// Logged datasets
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    m: usize,
    d: usize,
    #[serde(rename = "K")]
    k: usize,
}

#[derive(Serialize, Deserialize)]
struct RecordDto {
    task_id: usize,
    action: usize,
    features: Vec<f64>,
    reward: f64,
}

/// Writes a dataset as JSON Lines: one header object, then one record per
/// line with 1-based `task_id` and `action`.
pub fn write_dataset_jsonl(path: &Path, dataset: &LoggedDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = DatasetHeader {
        m: dataset.m(),
        d: dataset.d(),
        k: dataset.k(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| parse_err(path, 1, e.to_string()))?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for r in dataset.records() {
        let dto = RecordDto {
            task_id: r.task + 1,
            action: r.action + 1,
            features: r.features.iter().cloned().collect(),
            reward: r.reward,
        };
        serde_json::to_writer(&mut w, &dto).map_err(|e| parse_err(path, 0, e.to_string()))?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn record_from_dto(
    dto: RecordDto,
    path: &Path,
    line: usize,
    d: usize,
) -> Result<LoggedRecord> {
    if dto.task_id == 0 {
        return Err(parse_err(path, line, "task_id is 1-based and must be >= 1"));
    }
    if dto.action == 0 {
        return Err(parse_err(path, line, "action is 1-based and must be >= 1"));
    }
    if dto.features.len() != d {
        return Err(parse_err(
            path,
            line,
            format!("expected {d} features, got {}", dto.features.len()),
        ));
    }
    Ok(LoggedRecord {
        task: dto.task_id - 1,
        action: dto.action - 1,
        features: DVector::from_vec(dto.features),
        reward: dto.reward,
    })
}

/// Reads a JSON Lines dataset, reporting malformed lines by number
/// (1-based, counting the header). Whitespace-only lines are skipped.
pub fn read_dataset_jsonl(path: &Path) -> Result<LoggedDataset> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file: expected a header line"))?
        .map_err(|e| io_err(path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first)
        .map_err(|e| parse_err(path, 1, format!("bad header: {e}")))?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let dto: RecordDto = serde_json::from_str(&line)
            .map_err(|e| parse_err(path, lineno, e.to_string()))?;
        records.push(record_from_dto(dto, path, lineno, header.d)?);
    }
    LoggedDataset::new(header.m, header.d, header.k, records)
}

/// Writes the CSV dataset variant. The slate size and task count have no
/// column of their own, so they ride on the schema comment.
pub fn write_dataset_csv(path: &Path, dataset: &LoggedDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "# schema: {DATASET_CSV_SCHEMA} m={} K={}",
        dataset.m(),
        dataset.k()
    )
    .map_err(|e| io_err(path, e))?;
    let mut csv_w = csv::Writer::from_writer(w);
    let mut header = vec!["task_id".to_string(), "action".to_string(), "reward".to_string()];
    for j in 1..=dataset.d() {
        header.push(format!("f{j}"));
    }
    csv_w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for r in dataset.records() {
        let mut fields = vec![
            (r.task + 1).to_string(),
            (r.action + 1).to_string(),
            r.reward.to_string(),
        ];
        for v in r.features.iter() {
            fields.push(v.to_string());
        }
        csv_w.write_record(&fields).map_err(|e| csv_err(path, e))?;
    }
    csv_w.flush().map_err(|e| io_err(path, e))
}

fn schema_meta(line: &str) -> (Option<usize>, Option<usize>) {
    let mut m = None;
    let mut k = None;
    for token in line.split_whitespace() {
        if let Some(v) = token.strip_prefix("m=") {
            m = v.parse().ok();
        }
        if let Some(v) = token.strip_prefix("K=") {
            k = v.parse().ok();
        }
    }
    (m, k)
}

/// Reads the CSV dataset variant. Task count and slate size come from the
/// schema comment when present, and are otherwise inferred as the largest
/// observed task id and action.
pub fn read_dataset_csv(path: &Path) -> Result<LoggedDataset> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut m_meta = None;
    let mut k_meta = None;
    for line in text.lines() {
        if !line.trim_start().starts_with('#') {
            break;
        }
        let (m, k) = schema_meta(line);
        m_meta = m_meta.or(m);
        k_meta = k_meta.or(k);
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| csv_err(path, e))?
        .clone();
    if headers.len() < 4
        || &headers[0] != "task_id"
        || &headers[1] != "action"
        || &headers[2] != "reward"
    {
        return Err(parse_err(
            path,
            1,
            "expected columns task_id,action,reward,f1..fd",
        ));
    }
    let d = headers.len() - 3;

    let mut records = Vec::new();
    let mut max_task = 0usize;
    let mut max_action = 0usize;
    for result in rdr.into_records() {
        let record = result.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, got {}", headers.len(), record.len()),
            ));
        }
        let task_id: usize = record[0]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad task_id: {e}")))?;
        let action: usize = record[1]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad action: {e}")))?;
        let reward: f64 = record[2]
            .trim()
            .parse()
            .map_err(|e| parse_err(path, line, format!("bad reward: {e}")))?;
        let mut features = Vec::with_capacity(d);
        for j in 0..d {
            features.push(
                record[3 + j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(path, line, format!("bad feature f{}: {e}", j + 1)))?,
            );
        }
        max_task = max_task.max(task_id);
        max_action = max_action.max(action);
        records.push(record_from_dto(
            RecordDto {
                task_id,
                action,
                features,
                reward,
            },
            path,
            line,
            d,
        )?);
    }
    let m = match (m_meta, records.is_empty()) {
        (Some(m), _) => m,
        (None, false) => max_task,
        (None, true) => {
            return Err(parse_err(
                path,
                0,
                "cannot infer the task count from an empty CSV without schema metadata",
            ))
        }
    };
    let k = k_meta.unwrap_or(max_action);
    LoggedDataset::new(m, d, k, records)
}

/// Dispatches on the file extension: `.csv` reads the CSV variant,
/// everything else reads JSON Lines.
pub fn read_dataset_auto(path: &Path) -> Result<LoggedDataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_dataset_csv(path),
        _ => read_dataset_jsonl(path),
    }
}

// ---------------------------------------------------------------------------
// Ratings files
// ---------------------------------------------------------------------------

/// Reads ratings from a `user::item::rating[::timestamp]` file or a CSV
/// with columns (user, item, rating[, ...]). A leading header row and any
/// trailing columns are ignored; the format is sniffed per line.
pub fn read_ratings(path: &Path) -> Result<RatingsMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut triples = Vec::new();
    let mut first_data_line = true;
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains("::") {
            line.split("::").collect()
        } else {
            line.split(',').map(str::trim).collect()
        };
        if fields.len() < 3 {
            return Err(parse_err(
                path,
                lineno,
                "expected at least user, item, rating",
            ));
        }
        let user: u64 = match fields[0].parse() {
            Ok(u) => u,
            Err(_)
                if first_data_line
                    && fields[0].chars().any(|c| c.is_ascii_alphabetic()) =>
            {
                // A header row like "userId,movieId,rating".
                first_data_line = false;
                continue;
            }
            Err(e) => return Err(parse_err(path, lineno, format!("bad user id: {e}"))),
        };
        first_data_line = false;
        let item: u64 = fields[1]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad item id: {e}")))?;
        let rating: f64 = fields[2]
            .parse()
            .map_err(|e| parse_err(path, lineno, format!("bad rating: {e}")))?;
        triples.push((user, item, rating));
    }
    RatingsMatrix::from_triples(triples)
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TaskBeliefDto {
    mean: Vec<f64>,
    /// Row-major d*d covariance.
    cov: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    #[serde(default)]
    schema: String,
    learner: String,
    alpha: f64,
    d: usize,
    m: usize,
    tasks: Vec<TaskBeliefDto>,
}

/// Exports a policy so a separate process can evaluate it.
pub fn write_policy_json(path: &Path, policy: &LearnedPolicy) -> Result<()> {
    let dto = PolicyFile {
        schema: POLICY_SCHEMA.to_string(),
        learner: policy.learner().tag().to_string(),
        alpha: policy.alpha(),
        d: policy.d(),
        m: policy.m(),
        tasks: policy
            .tasks()
            .iter()
            .map(|t| TaskBeliefDto {
                mean: t.mean.iter().cloned().collect(),
                cov: row_major(&t.cov),
            })
            .collect(),
    };
    write_json(path, &dto)
}

pub fn read_policy_json(path: &Path) -> Result<LearnedPolicy> {
    let dto: PolicyFile = read_json(path)?;
    let learner = LearnerKind::parse(&dto.learner)?;
    if dto.tasks.len() != dto.m {
        return Err(parse_err(
            path,
            0,
            format!("header says m = {}, found {} tasks", dto.m, dto.tasks.len()),
        ));
    }
    let tasks = dto
        .tasks
        .iter()
        .enumerate()
        .map(|(i, t)| {
            if t.mean.len() != dto.d {
                return Err(parse_err(
                    path,
                    0,
                    format!("task {}: expected mean of length {}, got {}", i + 1, dto.d, t.mean.len()),
                ));
            }
            Ok(TaskBelief {
                mean: DVector::from_vec(t.mean.clone()),
                cov: matrix_from_row_major(path, &format!("task {} cov", i + 1), dto.d, &t.cov)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LearnedPolicy::from_parts(learner, dto.alpha, dto.d, tasks)
}

// ---------------------------------------------------------------------------
// Environments
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum SamplerDto {
    UniformCube {
        k: usize,
        d: usize,
    },
    ItemPool {
        k: usize,
        scale: f64,
        items: Vec<Vec<f64>>,
    },
}

#[derive(Serialize, Deserialize)]
struct ModelDto {
    mu_q: Vec<f64>,
    /// Row-major d*d.
    sigma_q: Vec<f64>,
    /// Row-major d*d.
    sigma_0: Vec<f64>,
    sigma: f64,
}

#[derive(Serialize, Deserialize)]
struct EnvironmentFile {
    #[serde(default)]
    schema: String,
    #[serde(default)]
    note: String,
    mu_star: Vec<f64>,
    thetas: Vec<Vec<f64>>,
    sigma: f64,
    sampler: SamplerDto,
    model: ModelDto,
}

fn rows_to_matrix(path: &Path, what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(parse_err(path, 0, format!("{what}: need at least one row")));
    }
    let d = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(parse_err(
                path,
                0,
                format!("{what}: row {} has length {}, expected {d}", i + 1, row.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
}

/// Writes the full simulator state, marked as ground truth learners must
/// not see.
pub fn write_environment_json(path: &Path, env: &Environment) -> Result<()> {
    let model = env.model();
    let dto = EnvironmentFile {
        schema: ENVIRONMENT_SCHEMA.to_string(),
        note: ENV_NOTE.to_string(),
        mu_star: env.mu_star().iter().cloned().collect(),
        thetas: env
            .thetas()
            .iter()
            .map(|t| t.iter().cloned().collect())
            .collect(),
        sigma: env.sigma(),
        sampler: match env.sampler() {
            SlateSampler::UniformCube { k, d } => SamplerDto::UniformCube { k: *k, d: *d },
            SlateSampler::ItemPool { items, k, scale } => SamplerDto::ItemPool {
                k: *k,
                scale: *scale,
                items: (0..items.nrows())
                    .map(|i| items.row(i).iter().cloned().collect())
                    .collect(),
            },
        },
        model: ModelDto {
            mu_q: model.mu_q().iter().cloned().collect(),
            sigma_q: row_major(model.sigma_q()),
            sigma_0: row_major(model.sigma_0()),
            sigma: model.sigma(),
        },
    };
    write_json(path, &dto)
}

pub fn read_environment_json(path: &Path) -> Result<Environment> {
    let dto: EnvironmentFile = read_json(path)?;
    let d = dto.mu_star.len();
    let model = HierModelConfig::new(
        DVector::from_vec(dto.model.mu_q),
        matrix_from_row_major(path, "model sigma_q", d, &dto.model.sigma_q)?,
        matrix_from_row_major(path, "model sigma_0", d, &dto.model.sigma_0)?,
        dto.model.sigma,
    )?;
    let sampler = match dto.sampler {
        SamplerDto::UniformCube { k, d } => SlateSampler::UniformCube { k, d },
        SamplerDto::ItemPool { k, scale, items } => SlateSampler::ItemPool {
            items: rows_to_matrix(path, "item pool", &items)?,
            k,
            scale,
        },
    };
    Environment::new(
        DVector::from_vec(dto.mu_star),
        dto.thetas.into_iter().map(DVector::from_vec).collect(),
        sampler,
        dto.sigma,
        model,
    )
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

/// One experiment run of one learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub learner: String,
    pub n: usize,
    pub m: usize,
    pub sigma_q: f64,
    pub run_id: usize,
    pub mean_suboptimality: f64,
    pub se: f64,
}

/// Mean and standard error over runs for one (axis value, learner) cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub learner: String,
    pub n: usize,
    pub m: usize,
    pub sigma_q: f64,
    pub n_runs: usize,
    pub mean_suboptimality: f64,
    pub se: f64,
}

/// One evaluated task (or the aggregate over tasks).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationRow {
    /// 1-based task id, or `"aggregate"` for the mean over tasks.
    pub task_id: String,
    pub learner: String,
    pub value_opt: f64,
    pub value_learned: f64,
    pub suboptimality: f64,
    pub mc_std_error: f64,
    pub n_eval: usize,
}

/// Writes rows as CSV behind a `# schema:` comment line. Headers come from
/// the row struct's field names.
pub fn write_csv_rows<T: Serialize>(path: &Path, schema: &str, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "# schema: {schema}").map_err(|e| io_err(path, e))?;
    let mut csv_w = csv::Writer::from_writer(w);
    for row in rows {
        csv_w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    csv_w.flush().map_err(|e| io_err(path, e))
}

/// Reads rows written by [`write_csv_rows`], skipping comment lines.
pub fn read_csv_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for result in rdr.deserialize() {
        out.push(result.map_err(|e| csv_err(path, e))?);
    }
    Ok(out)
}
