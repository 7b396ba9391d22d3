//! Scenario files: a cube, a network profile, clients, study tasks, a timed script, and
//! the assertions checked once the session is quiescent.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use holoproxy_core::protocol::{ClientId, Role};
use holoproxy_core::{Axis, CellId, Pose, Quat, ScreenConfig, Vec3};

use crate::netsim::{Latency, NetworkProfile};
use crate::oracle::TaskKind;

pub const SCENARIO_HEADER: &str = "holoproxy-scenario 1";

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {detail}")]
    Parse { line: usize, detail: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario did not settle within {limit_ms} ms of virtual time")]
    Timeout { limit_ms: f64 },
    #[error("{failed} assertion(s) failed")]
    AssertionFailed { failed: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CubeSource {
    /// Seeded synthetic cube; `seed` defaults to the scenario seed.
    Synthetic { countries: usize, years: usize, seed: Option<u64> },
    /// `location,year,value` CSV, relative paths resolved against the scenario file.
    Csv { path: PathBuf, measure: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClientSpec {
    pub id: ClientId,
    pub role: Role,
    pub join_ms: f64,
    /// Overrides the scenario latency on this client's links.
    pub latency: Option<Latency>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Tap { x: f64, y: f64 },
    TapCell(CellId),
    Axis { axis: Axis, index: usize },
    Pose(Pose),
    Project { axis: Axis, index: usize },
    Summarize,
    ClearProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub at_ms: f64,
    pub client: usize,
    pub action: Action,
}

/// Task parameters; `None` fields are drawn from the scenario seed.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskParams {
    Slice { axis: Axis, index: Option<usize> },
    Cells(Option<[CellId; 3]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub by: usize,
    pub at_ms: f64,
    pub params: TaskParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RandomActions {
    pub count: usize,
    pub clients: Vec<usize>,
    pub span_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expectation {
    /// Every client digest equals the server digest.
    Converge,
    /// Every task answer equals its brute-force oracle.
    Oracles,
    Selected(Vec<CellId>),
    /// Hand-written answer for task `n` (1-based).
    Answer { task: usize, cells: Vec<CellId> },
    PoseWriter { client: usize, seq: u64 },
    Projection(Option<(Axis, usize)>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub cube: CubeSource,
    pub screen: ScreenConfig,
    pub network: NetworkProfile,
    pub clients: Vec<ClientSpec>,
    pub tasks: Vec<TaskSpec>,
    pub random: Vec<RandomActions>,
    pub script: Vec<Step>,
    pub expect: Vec<Expectation>,
    pub timeout_ms: f64,
}

fn parse_cell(s: &str) -> Result<CellId, String> {
    let (l, y) = s.split_once(':').ok_or_else(|| format!("cell `{s}` is not LOCATION:YEAR"))?;
    let num = |t: &str| t.parse::<usize>().map_err(|_| format!("bad index `{t}` in cell `{s}`"));
    Ok(CellId::new(num(l)?, num(y)?))
}

fn parse_cells(words: &[&str]) -> Result<Vec<CellId>, String> {
    if words == ["none"] {
        return Ok(Vec::new());
    }
    words.iter().flat_map(|w| w.split(',')).filter(|w| !w.is_empty()).map(parse_cell).collect()
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} `{s}`"))
}

fn finite(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = num(s, what)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what} must be finite"))
    }
}

fn time(s: &str) -> Result<f64, String> {
    let v = finite(s, "time")?;
    if v < 0.0 {
        return Err("times cannot be negative".into());
    }
    Ok(v)
}

fn probability(s: &str) -> Result<f64, String> {
    let p = finite(s, "probability")?;
    if !(0.0..=1.0).contains(&p) {
        return Err(format!("probability {p} outside [0, 1]"));
    }
    Ok(p)
}

/// `key=value` words; bare words are rejected.
fn options<'a>(words: &[&'a str]) -> Result<BTreeMap<&'a str, &'a str>, String> {
    let mut out = BTreeMap::new();
    for w in words {
        let (k, v) = w.split_once('=').ok_or_else(|| format!("expected key=value, got `{w}`"))?;
        if out.insert(k, v).is_some() {
            return Err(format!("option `{k}` given twice"));
        }
    }
    Ok(out)
}

fn reject_unknown(opts: &BTreeMap<&str, &str>, known: &[&str]) -> Result<(), String> {
    match opts.keys().find(|k| !known.contains(k)) {
        Some(k) => Err(format!("unknown option `{k}`")),
        None => Ok(()),
    }
}

fn find_client(clients: &[ClientSpec], name: &str) -> Result<usize, String> {
    clients
        .iter()
        .position(|c| c.id.as_str() == name)
        .ok_or_else(|| format!("unknown client `{name}` (declare it with `client` first)"))
}

fn parse_action(words: &[&str]) -> Result<Action, String> {
    let axis = |s: &str| s.parse::<Axis>();
    match words {
        ["tap", x, y] => Ok(Action::Tap { x: finite(x, "x")?, y: finite(y, "y")? }),
        ["tap-cell", cell] => Ok(Action::TapCell(parse_cell(cell)?)),
        ["axis", a, i] => Ok(Action::Axis { axis: axis(a)?, index: num(i, "index")? }),
        ["project", a, i] => Ok(Action::Project { axis: axis(a)?, index: num(i, "index")? }),
        ["summarize"] => Ok(Action::Summarize),
        ["clear-projection"] => Ok(Action::ClearProjection),
        ["pose", rest @ ..] if rest.len() == 3 || rest.len() == 7 => {
            let v: Vec<f64> = rest.iter().map(|s| finite(s, "pose component")).collect::<Result<_, _>>()?;
            let q = if v.len() == 7 { Quat::new(v[3], v[4], v[5], v[6]) } else { Quat::identity() };
            Pose::new(Vec3::new(v[0], v[1], v[2]), q).map(Action::Pose).map_err(|e| e.to_string())
        }
        _ => Err(format!("unknown action `{}`", words.join(" "))),
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ScenarioError::Io { path: path.to_path_buf(), source: e })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses scenario text; `base` anchors relative dataset paths.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ScenarioError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()));
        let mut lines = lines.by_ref().filter(|(_, l)| !l.is_empty());
        match lines.next() {
            Some((_, l)) if l == SCENARIO_HEADER => {}
            Some((line, l)) => {
                return Err(ScenarioError::Parse { line, detail: format!("expected `{SCENARIO_HEADER}`, got `{l}`") })
            }
            None => return Err(ScenarioError::Parse { line: 1, detail: "empty scenario".into() }),
        }

        let mut name = None;
        let mut seed = 0u64;
        let mut cube = None;
        let mut screen = ScreenConfig::landscape(1200, 600).expect("default screen");
        let mut network = NetworkProfile::ideal();
        let mut clients: Vec<ClientSpec> = Vec::new();
        let mut tasks = Vec::new();
        let mut random = Vec::new();
        let mut script = Vec::new();
        let mut expect = Vec::new();
        let mut timeout_ms = 600_000.0;

        for (line, text) in lines {
            let words: Vec<&str> = text.split_whitespace().collect();
            let parsed: Result<(), String> = (|| {
                match words.as_slice() {
                    ["name", n] => name = Some(n.to_string()),
                    ["seed", s] => seed = num(s, "seed")?,
                    ["timeout", t] => timeout_ms = time(t)?,
                    ["screen", w, h] => {
                        screen = ScreenConfig::landscape(num(w, "width")?, num(h, "height")?)
                            .map_err(|e| e.to_string())?
                    }
                    ["cube", "synthetic", rest @ ..] => {
                        let o = options(rest)?;
                        reject_unknown(&o, &["countries", "years", "seed"])?;
                        let get = |k: &str| o.get(k).ok_or_else(|| format!("cube synthetic needs {k}="));
                        let countries: usize = num(get("countries")?, "countries")?;
                        let years: usize = num(get("years")?, "years")?;
                        if countries == 0 || years == 0 {
                            return Err("synthetic cube needs at least one country and year".into());
                        }
                        let seed = o.get("seed").map(|s| num(s, "seed")).transpose()?;
                        cube = Some(CubeSource::Synthetic { countries, years, seed });
                    }
                    ["cube", "csv", path, rest @ ..] => {
                        let o = options(rest)?;
                        reject_unknown(&o, &["measure"])?;
                        let measure = o.get("measure").unwrap_or(&"value").to_string();
                        cube = Some(CubeSource::Csv { path: base.join(path), measure });
                    }
                    ["network", rest @ ..] => {
                        let o = options(rest)?;
                        reject_unknown(&o, &["latency", "reorder", "dup"])?;
                        if let Some(l) = o.get("latency") {
                            network.latency = l.parse()?;
                        }
                        if let Some(r) = o.get("reorder") {
                            let (p, w) = r.split_once(':').ok_or("reorder=P:WINDOW_MS")?;
                            network.reorder_p = probability(p)?;
                            network.reorder_window_ms = time(w)?;
                        }
                        if let Some(d) = o.get("dup") {
                            network.dup_p = probability(d)?;
                        }
                    }
                    ["client", id, role, rest @ ..] => {
                        let id = ClientId::new(*id)?;
                        if id == ClientId::server() || clients.iter().any(|c| c.id == id) {
                            return Err(format!("client id `{id}` is taken"));
                        }
                        let o = options(rest)?;
                        reject_unknown(&o, &["join", "latency"])?;
                        let join_ms = o.get("join").map(|t| time(t)).transpose()?.unwrap_or(0.0);
                        let latency = o.get("latency").map(|l| l.parse()).transpose()?;
                        clients.push(ClientSpec { id, role: role.parse()?, join_ms, latency });
                    }
                    ["task", kind, rest @ ..] => {
                        let o = options(rest)?;
                        let by = find_client(&clients, o.get("by").ok_or("task needs by=CLIENT")?)?;
                        let at_ms = o.get("at").map(|t| time(t)).transpose()?.unwrap_or(0.0);
                        let (kind, params) = match *kind {
                            "range" | "order" => {
                                reject_unknown(&o, &["by", "at", "axis", "index"])?;
                                let axis = o.get("axis").map(|a| a.parse()).transpose()?.unwrap_or(Axis::Location);
                                let index = match o.get("index") {
                                    None | Some(&"random") => None,
                                    Some(i) => Some(num(i, "index")?),
                                };
                                let kind = if *kind == "range" { TaskKind::Range } else { TaskKind::Order };
                                (kind, TaskParams::Slice { axis, index })
                            }
                            "compare" => {
                                reject_unknown(&o, &["by", "at", "cells"])?;
                                let cells = match o.get("cells") {
                                    None | Some(&"random") => None,
                                    Some(c) => {
                                        let v = parse_cells(&[c])?;
                                        Some(<[CellId; 3]>::try_from(v).map_err(|_| "compare takes three cells")?)
                                    }
                                };
                                (TaskKind::Compare, TaskParams::Cells(cells))
                            }
                            other => return Err(format!("unknown task `{other}`")),
                        };
                        tasks.push(TaskSpec { kind, by, at_ms, params });
                    }
                    ["random-actions", rest @ ..] => {
                        let o = options(rest)?;
                        reject_unknown(&o, &["count", "clients", "span"])?;
                        let count = num(o.get("count").ok_or("random-actions needs count=")?, "count")?;
                        let list = o.get("clients").ok_or("random-actions needs clients=")?;
                        let clients = list.split(',').map(|c| find_client(&clients, c)).collect::<Result<Vec<_>, _>>()?;
                        let span_ms = time(o.get("span").unwrap_or(&"1000"))?;
                        random.push(RandomActions { count, clients, span_ms });
                    }
                    ["at", t, who, action @ ..] => {
                        script.push(Step { at_ms: time(t)?, client: find_client(&clients, who)?, action: parse_action(action)? });
                    }
                    ["expect", rest @ ..] => expect.push(match rest {
                        ["converge"] => Expectation::Converge,
                        ["oracles"] => Expectation::Oracles,
                        ["selected", cells @ ..] if !cells.is_empty() => Expectation::Selected(parse_cells(cells)?),
                        ["answer", n, cells @ ..] if !cells.is_empty() => {
                            let task: usize = num(n, "task number")?;
                            if task == 0 || task > tasks.len() {
                                return Err(format!("no task {task} declared above"));
                            }
                            Expectation::Answer { task, cells: parse_cells(cells)? }
                        }
                        ["pose-writer", who, seq] => {
                            Expectation::PoseWriter { client: find_client(&clients, who)?, seq: num(seq, "seq")? }
                        }
                        ["projection", "none"] => Expectation::Projection(None),
                        ["projection", a, i] => Expectation::Projection(Some((a.parse()?, num(i, "index")?))),
                        _ => return Err(format!("unknown expectation `{}`", rest.join(" "))),
                    }),
                    _ => return Err(format!("unrecognized line `{text}`")),
                }
                Ok(())
            })();
            parsed.map_err(|detail| ScenarioError::Parse { line, detail })?;
        }

        let invalid = |m: &str| ScenarioError::Invalid(m.to_string());
        let cube = cube.ok_or_else(|| invalid("missing `cube` line"))?;
        if clients.is_empty() {
            return Err(invalid("no clients declared"));
        }
        script.sort_by(|a: &Step, b: &Step| a.at_ms.total_cmp(&b.at_ms));
        Ok(Self {
            name: name.unwrap_or_else(|| "unnamed".into()),
            seed,
            cube,
            screen,
            network,
            clients,
            tasks,
            random,
            script,
            expect,
            timeout_ms,
        })
    }
}

impl std::str::FromStr for Action {
    type Err = String;

    /// One action in script syntax, e.g. `tap-cell 1:2` or `project year 3`.
    fn from_str(s: &str) -> Result<Self, String> {
        parse_action(&s.split_whitespace().collect::<Vec<_>>())
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Tap { x, y } => write!(f, "tap {x} {y}"),
            Action::TapCell(c) => write!(f, "tap-cell {c}"),
            Action::Axis { axis, index } => write!(f, "axis {axis} {index}"),
            Action::Pose(p) => {
                let (t, q) = (p.position, p.orientation);
                write!(f, "pose {} {} {} {} {} {} {}", t.x, t.y, t.z, q.w, q.x, q.y, q.z)
            }
            Action::Project { axis, index } => write!(f, "project {axis} {index}"),
            Action::Summarize => write!(f, "summarize"),
            Action::ClearProjection => write!(f, "clear-projection"),
        }
    }
}

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: [(&str, &str); 4] = [
    ("range_basic", include_str!("../scenarios/range_basic.scn")),
    ("order_basic", include_str!("../scenarios/order_basic.scn")),
    ("compare_basic", include_str!("../scenarios/compare_basic.scn")),
    ("convergence_stress", include_str!("../scenarios/convergence_stress.scn")),
];

pub fn bundled(name: &str) -> Option<Scenario> {
    let name = name.strip_suffix(".scn").unwrap_or(name);
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| Scenario::parse(text, Path::new(".")).expect("bundled scenarios parse"))
}
