//! Runs a scenario end to end: every interaction is an encoded frame crossing the
//! simulated network to an embedded [`SessionCore`], and every client mirrors the session
//! through a [`Replica`].

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::PathBuf;
use std::time::Instant;

use holoproxy_core::protocol::{
    decode, encode, ClientId, Envelope, ErrorCode, MessagePayload, PointPx, PoseWriter, Role, SessionId,
    SessionState,
};
use holoproxy_core::{load_dataset_with, tap_point, Axis, CellId, ChartLayout, DataCube, Pose, Quat, ScreenConfig, Vec3};
use holoproxy_server::{Observed, Replica, SessionCore};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::netsim::{micros_to_ms, ms_to_micros, Endpoint, Item, Micros, Network, NetworkProfile};
use crate::oracle::{oracle_compare, oracle_order, oracle_range, TaskKind};
use crate::report::{AssertionResult, LatencyHistogram, MessageCounts, ScenarioReport, TaskResult};
use crate::scenario::{Action, CubeSource, Expectation, Scenario, ScenarioError, Step, TaskParams};
use crate::synth::synthetic_cube;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's own seed.
    pub seed: Option<u64>,
    /// Writes the hub's session log here.
    pub log_path: Option<PathBuf>,
}

/// Task parameters after drawing the random ones.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Instance {
    Slice { axis: Axis, index: usize },
    Cells([CellId; 3]),
}

impl Instance {
    fn relevant(&self, cube: &DataCube) -> BTreeSet<CellId> {
        match *self {
            Instance::Slice { axis, index } => cube.slice(axis, index).into_iter().collect(),
            Instance::Cells(cells) => cells.into_iter().collect(),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Instance::Slice { axis, index } => format!("{axis} {index}"),
            Instance::Cells(c) => format!("{} {} {}", c[0], c[1], c[2]),
        }
    }
}

/// Everything fixed before the first event: the cube, task instances, the full script.
#[derive(Debug, Clone)]
pub struct Plan {
    pub seed: u64,
    pub cube: DataCube,
    pub instances: Vec<Instance>,
    pub script: Vec<Step>,
}

fn invalid(m: String) -> ScenarioError {
    ScenarioError::Invalid(m)
}

fn check_index(cube: &DataCube, axis: Axis, index: usize, what: &str) -> Result<(), ScenarioError> {
    if index < cube.axis_len(axis) {
        Ok(())
    } else {
        Err(invalid(format!("{what}: {axis} index {index} out of bounds (length {})", cube.axis_len(axis))))
    }
}

fn check_cell(cube: &DataCube, cell: CellId, what: &str) -> Result<(), ScenarioError> {
    if cube.contains(cell) {
        Ok(())
    } else {
        Err(invalid(format!("{what}: cell {cell} out of bounds")))
    }
}

fn random_action(rng: &mut ChaCha8Rng, cube: &DataCube, screen: &ScreenConfig) -> Action {
    let area = screen.selection_area;
    let axis = |rng: &mut ChaCha8Rng| if rng.random_bool(0.5) { Axis::Location } else { Axis::Year };
    match rng.random_range(0..10) {
        0..=3 => Action::Tap {
            x: area.x as f64 + rng.random_range(0.0..area.width as f64),
            y: area.y as f64 + rng.random_range(0.0..area.height as f64),
        },
        4 => Action::TapCell(CellId::new(
            rng.random_range(0..cube.location_count()),
            rng.random_range(0..cube.year_count()),
        )),
        5 => {
            let axis = axis(rng);
            Action::Axis { axis, index: rng.random_range(0..cube.axis_len(axis)) }
        }
        6 => {
            let q = Quat::from_axis_angle(Vec3::new(0.0, 1.0, 0.0), rng.random_range(-3.0..3.0));
            let t = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(0.2..1.0));
            Action::Pose(Pose::new(t, q).expect("unit rotation"))
        }
        7 => {
            let axis = axis(rng);
            Action::Project { axis, index: rng.random_range(0..cube.axis_len(axis)) }
        }
        8 => Action::Summarize,
        _ => Action::ClearProjection,
    }
}

impl Scenario {
    /// Loads the cube, draws random task instances and actions, and checks every reference.
    pub fn plan(&self, seed: Option<u64>) -> Result<Plan, ScenarioError> {
        let seed = seed.unwrap_or(self.seed);
        self.screen.validate().map_err(|e| invalid(e.to_string()))?;
        let cube = match &self.cube {
            CubeSource::Synthetic { countries, years, seed: s } => synthetic_cube(*countries, *years, s.unwrap_or(seed)),
            CubeSource::Csv { path, measure } => {
                let file = std::fs::File::open(path).map_err(|e| ScenarioError::Io { path: path.clone(), source: e })?;
                load_dataset_with(file, measure, "").map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
        };

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut instances = Vec::new();
        for (i, task) in self.tasks.iter().enumerate() {
            let what = format!("task {}", i + 1);
            instances.push(match &task.params {
                TaskParams::Slice { axis, index } => {
                    let index = index.unwrap_or_else(|| rng.random_range(0..cube.axis_len(*axis)));
                    check_index(&cube, *axis, index, &what)?;
                    Instance::Slice { axis: *axis, index }
                }
                TaskParams::Cells(cells) => {
                    let cells = match cells {
                        Some(c) => *c,
                        None => {
                            let all: Vec<CellId> = cube.cells().collect();
                            if all.len() < 3 {
                                return Err(invalid(format!("{what}: compare needs at least three cells")));
                            }
                            let pick: Vec<CellId> = all.choose_multiple(&mut rng, 3).copied().collect();
                            [pick[0], pick[1], pick[2]]
                        }
                    };
                    for c in cells {
                        check_cell(&cube, c, &what)?;
                    }
                    if oracle_compare(&cube, cells).is_none() {
                        return Err(invalid(format!("{what}: compare needs three distinct cells")));
                    }
                    Instance::Cells(cells)
                }
            });
        }

        let mut script = self.script.clone();
        for block in &self.random {
            for _ in 0..block.count {
                let at_ms = rng.random_range(0.0..=block.span_ms);
                let client = *block.clients.choose(&mut rng).expect("random-actions lists clients");
                script.push(Step { at_ms, client, action: random_action(&mut rng, &cube, &self.screen) });
            }
        }
        script.sort_by(|a, b| a.at_ms.total_cmp(&b.at_ms));
        for (i, step) in script.iter().enumerate() {
            let what = format!("script step {} ({})", i + 1, step.action);
            match step.action {
                Action::TapCell(c) => check_cell(&cube, c, &what)?,
                Action::Axis { axis, index } | Action::Project { axis, index } => {
                    check_index(&cube, axis, index, &what)?
                }
                _ => {}
            }
        }
        for e in &self.expect {
            match e {
                Expectation::Selected(cells) | Expectation::Answer { cells, .. } => {
                    for c in cells {
                        check_cell(&cube, *c, "expectation")?;
                    }
                }
                Expectation::Projection(Some((axis, index))) => check_index(&cube, *axis, *index, "expectation")?,
                _ => {}
            }
        }
        Ok(Plan { seed, cube, instances, script })
    }
}

impl Action {
    /// The request this action sends. `tap-cell` needs the chart layout to find its pixel.
    pub fn payload(&self, chart: Option<(&ChartLayout, &ScreenConfig)>) -> Option<MessagePayload> {
        Some(match self {
            Action::Tap { x, y } => MessagePayload::TapScreen { point_px: PointPx { x: *x, y: *y } },
            Action::TapCell(cell) => {
                let (layout, screen) = chart?;
                tap(*cell, &Ctx { layout, screen })
            }
            Action::Axis { axis, index } => MessagePayload::AxisTap { axis: *axis, index: *index },
            Action::Pose(pose) => MessagePayload::PoseUpdate { pose: *pose },
            Action::Project { axis, index } => MessagePayload::ProjectRequest { axis: *axis, index: *index },
            Action::Summarize => MessagePayload::SummarizeRequest {},
            Action::ClearProjection => MessagePayload::ClearProjection {},
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Timer {
    Join(usize),
    Step(usize),
    TaskReady(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    Clear,
    Summarize,
    Project,
    Plan,
    Tap,
    Probe { i: usize, selected: bool },
    Decide,
    Done,
}

/// A scripted study participant working through one task, one acknowledged request at a time.
#[derive(Debug)]
struct Participant {
    task: usize,
    kind: TaskKind,
    instance: Instance,
    phase: Phase,
    queue: VecDeque<CellId>,
    probed: Vec<(CellId, f64)>,
    awaiting: Option<u64>,
}

#[derive(Debug, Clone, Default)]
struct TaskProgress {
    started: bool,
    ready: bool,
    /// Hub seq bracket in which the answer's selections happened.
    start_seq: u64,
    end_seq: Option<u64>,
    failure: Option<String>,
}

struct Ctx<'a> {
    layout: &'a ChartLayout,
    screen: &'a ScreenConfig,
}

fn tap(cell: CellId, ctx: &Ctx<'_>) -> MessagePayload {
    let (x, y) = tap_point(cell, ctx.layout, ctx.screen);
    MessagePayload::TapScreen { point_px: PointPx { x, y } }
}

impl Participant {
    /// Next request, or `None` once the task is finished.
    fn advance(
        &mut self,
        state: &SessionState,
        last_seq: u64,
        ctx: &Ctx<'_>,
        progress: &mut TaskProgress,
    ) -> Result<Option<MessagePayload>, String> {
        loop {
            match self.phase {
                Phase::Clear => {
                    if let Some(&c) = state.selection.iter().next() {
                        return Ok(Some(tap(c, ctx)));
                    }
                    self.phase = if self.kind == TaskKind::Compare { Phase::Summarize } else { Phase::Project };
                }
                Phase::Summarize => {
                    self.phase = Phase::Probe { i: 0, selected: false };
                    return Ok(Some(MessagePayload::SummarizeRequest {}));
                }
                Phase::Project => {
                    let Instance::Slice { axis, index } = self.instance else { unreachable!("slice task") };
                    self.phase = Phase::Plan;
                    return Ok(Some(MessagePayload::ProjectRequest { axis, index }));
                }
                Phase::Plan => {
                    let Instance::Slice { axis, index } = self.instance else { unreachable!("slice task") };
                    let p = state.projection.as_ref().ok_or("no projection after ProjectRequest")?;
                    if (p.series_axis, p.fixed_index) != (axis, index) {
                        return Err(format!("projection shows {} {}", p.series_axis, p.fixed_index));
                    }
                    let mut idx: Vec<usize> = (0..p.values.len()).collect();
                    match self.kind {
                        TaskKind::Range => {
                            let (mut lo, mut hi) = (0, 0);
                            for i in 1..p.values.len() {
                                if p.values[i] < p.values[lo] {
                                    lo = i;
                                }
                                if p.values[i] > p.values[hi] {
                                    hi = i;
                                }
                            }
                            idx = if lo == hi { vec![lo] } else { vec![lo, hi] };
                        }
                        _ => idx.sort_by(|&a, &b| p.values[a].total_cmp(&p.values[b])),
                    }
                    self.queue = idx.into_iter().map(|i| p.cell(i)).collect();
                    progress.start_seq = last_seq;
                    self.phase = Phase::Tap;
                }
                Phase::Tap => match self.queue.pop_front() {
                    Some(c) => return Ok(Some(tap(c, ctx))),
                    None => self.phase = Phase::Done,
                },
                Phase::Probe { i, selected } => {
                    let Instance::Cells(cells) = self.instance else { unreachable!("compare task") };
                    if i == cells.len() {
                        self.phase = Phase::Decide;
                        continue;
                    }
                    if selected {
                        let s = state.summary.as_ref().ok_or("summary is not live")?;
                        if s.count != 1 {
                            return Err(format!("expected a one-cell summary, got {} cells", s.count));
                        }
                        self.probed.push((cells[i], s.sum));
                        self.phase = Phase::Probe { i: i + 1, selected: false };
                    } else {
                        self.phase = Phase::Probe { i, selected: true };
                    }
                    return Ok(Some(tap(cells[i], ctx)));
                }
                Phase::Decide => {
                    let (choice, _) = self
                        .probed
                        .iter()
                        .copied()
                        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                        .ok_or("nothing probed")?;
                    progress.start_seq = last_seq;
                    self.phase = Phase::Done;
                    return Ok(Some(tap(choice, ctx)));
                }
                Phase::Done => return Ok(None),
            }
        }
    }
}

struct SimClient {
    id: ClientId,
    role: Role,
    profile: NetworkProfile,
    replica: Replica,
    next_seq: u64,
    joined: bool,
    /// `(hub seq, cell)` for every selection this client saw applied.
    selects: Vec<(u64, CellId)>,
    sent_at: BTreeMap<u64, Micros>,
    tasks: VecDeque<usize>,
    active: Option<Participant>,
}

struct Sim<'a> {
    scenario: &'a Scenario,
    plan: &'a Plan,
    session: SessionId,
    core: SessionCore,
    members: BTreeMap<ClientId, usize>,
    clients: Vec<SimClient>,
    net: Network<Timer>,
    progress: Vec<TaskProgress>,
    latencies: Vec<f64>,
    hub_errors: u64,
}

impl Sim<'_> {
    fn send(&mut self, c: usize, payload: MessagePayload) -> u64 {
        let client = &mut self.clients[c];
        let seq = client.next_seq;
        client.next_seq += 1;
        let env = Envelope::new(self.session.clone(), client.id.clone(), seq, payload);
        client.sent_at.insert(seq, self.net.now());
        let profile = client.profile;
        self.net.send(Endpoint::Client(c), Endpoint::Server, encode(&env), &profile);
        seq
    }

    fn to_client(&mut self, c: usize, env: &Envelope) {
        let profile = self.clients[c].profile;
        self.net.send(Endpoint::Server, Endpoint::Client(c), encode(env), &profile);
    }

    fn server_receive(&mut self, from: usize, bytes: &[u8]) {
        let env = decode(bytes).expect("simulated clients send valid frames");
        let sender = env.client_id.clone();
        if !self.members.contains_key(&sender) {
            let MessagePayload::Hello { role, .. } = env.payload else {
                let reply = MessagePayload::Error { code: ErrorCode::HandshakeRequired, seq: 0, detail: String::new() };
                self.to_client(from, &Envelope::new(self.session.clone(), ClientId::server(), 0, reply));
                return;
            };
            debug_assert_eq!(role, self.clients[from].role);
            self.members.insert(sender.clone(), from);
            self.server_ingest(env);
            let snapshot = self.core.snapshot();
            self.to_client(from, &snapshot);
            return;
        }
        if !matches!(env.payload, MessagePayload::Heartbeat {}) {
            self.server_ingest(env);
        }
    }

    fn server_ingest(&mut self, env: Envelope) {
        let sender = env.client_id.clone();
        let out = self.core.ingest(env).expect("session log is writable");
        for o in out {
            let targets: Vec<usize> = self
                .members
                .iter()
                .filter(|(id, &c)| o.route.reaches(&sender, id, self.clients[c].role))
                .map(|(_, &c)| c)
                .collect();
            for c in targets {
                self.to_client(c, &o.envelope);
            }
        }
    }

    fn client_receive(&mut self, c: usize, bytes: &[u8]) {
        let env = decode(bytes).expect("hub sends valid frames");
        let observed = self.clients[c].replica.observe(&env);
        match observed {
            Observed::Snapshot => {
                self.clients[c].joined = true;
                self.try_start(c);
            }
            Observed::Delta => {
                if let MessagePayload::StateDelta { changes } = &env.payload {
                    for ch in changes {
                        if let holoproxy_core::protocol::Change::Select { cell } = ch {
                            self.clients[c].selects.push((env.seq, *cell));
                        }
                    }
                }
            }
            Observed::Ack(seq) => {
                if let Some(t) = self.clients[c].sent_at.remove(&seq) {
                    self.latencies.push(micros_to_ms(self.net.now() - t));
                }
                if self.clients[c].active.as_ref().is_some_and(|p| p.awaiting == Some(seq)) {
                    self.step_participant(c);
                }
            }
            Observed::Error { seq, detail, code } => {
                self.hub_errors += 1;
                self.clients[c].sent_at.remove(&seq);
                if let Some(p) = self.clients[c].active.take_if(|p| p.awaiting == Some(seq)) {
                    self.progress[p.task].failure = Some(format!("{code:?}: {detail}"));
                    self.try_start(c);
                }
            }
            _ => {}
        }
    }

    fn try_start(&mut self, c: usize) {
        let client = &mut self.clients[c];
        if !client.joined || client.active.is_some() {
            return;
        }
        let Some(&t) = client.tasks.front() else { return };
        if !self.progress[t].ready {
            return;
        }
        client.tasks.pop_front();
        self.progress[t].started = true;
        client.active = Some(Participant {
            task: t,
            kind: self.scenario.tasks[t].kind,
            instance: self.plan.instances[t],
            phase: Phase::Clear,
            queue: VecDeque::new(),
            probed: Vec::new(),
            awaiting: None,
        });
        self.step_participant(c);
    }

    fn step_participant(&mut self, c: usize) {
        let Some(mut p) = self.clients[c].active.take() else { return };
        let ctx = Ctx { layout: self.core.layout(), screen: self.core.screen() };
        let replica = &self.clients[c].replica;
        let state = replica.state().expect("participants start after the snapshot");
        let result = p.advance(state, replica.last_seq(), &ctx, &mut self.progress[p.task]);
        match result {
            Ok(Some(payload)) => {
                p.awaiting = Some(self.send(c, payload));
                self.clients[c].active = Some(p);
            }
            Ok(None) => {
                self.progress[p.task].end_seq = Some(self.clients[c].replica.last_seq());
                self.try_start(c);
            }
            Err(e) => {
                self.progress[p.task].failure = Some(e);
                self.try_start(c);
            }
        }
    }

    fn fire(&mut self, timer: Timer) {
        match timer {
            Timer::Join(c) => {
                let role = self.clients[c].role;
                let capabilities = match role {
                    Role::Proxy => holoproxy_core::protocol::Capability::phone(),
                    _ => holoproxy_core::protocol::Capability::headset(),
                };
                self.send(c, MessagePayload::Hello { role, capabilities });
            }
            Timer::Step(k) => {
                let step = &self.plan.script[k];
                let payload =
                    step.action.payload(Some((self.core.layout(), self.core.screen()))).expect("layout given");
                self.send(step.client, payload);
            }
            Timer::TaskReady(t) => {
                self.progress[t].ready = true;
                self.try_start(self.scenario.tasks[t].by);
            }
        }
    }
}

/// Runs with the scenario's own seed and no log.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioReport, ScenarioError> {
    run_scenario_with(scenario, &RunOptions::default())
}

pub fn run_scenario_with(scenario: &Scenario, opts: &RunOptions) -> Result<ScenarioReport, ScenarioError> {
    let wall = Instant::now();
    let plan = scenario.plan(opts.seed)?;
    let session = SessionId::new(format!("sim-{}", plan.cube.digest()[..8].to_owned())).expect("valid id");
    let core = match &opts.log_path {
        Some(path) => SessionCore::create_logged(session.clone(), plan.cube.clone(), scenario.screen, None, path)
            .map_err(|e| invalid(e.to_string()))?,
        None => SessionCore::new(session.clone(), plan.cube.clone(), scenario.screen),
    };

    let mut net_rng = ChaCha8Rng::seed_from_u64(plan.seed);
    net_rng.set_stream(2);
    let mut sim = Sim {
        scenario,
        plan: &plan,
        session,
        core,
        members: BTreeMap::new(),
        clients: scenario
            .clients
            .iter()
            .enumerate()
            .map(|(i, spec)| SimClient {
                id: spec.id.clone(),
                role: spec.role,
                profile: NetworkProfile { latency: spec.latency.unwrap_or(scenario.network.latency), ..scenario.network },
                replica: Replica::new(),
                next_seq: 1,
                joined: false,
                selects: Vec::new(),
                sent_at: BTreeMap::new(),
                tasks: scenario.tasks.iter().enumerate().filter(|(_, t)| t.by == i).map(|(t, _)| t).collect(),
                active: None,
            })
            .collect(),
        net: Network::new(net_rng),
        progress: vec![TaskProgress::default(); scenario.tasks.len()],
        latencies: Vec::new(),
        hub_errors: 0,
    };

    for (i, spec) in scenario.clients.iter().enumerate() {
        sim.net.schedule(ms_to_micros(spec.join_ms), Timer::Join(i));
    }
    for (k, step) in plan.script.iter().enumerate() {
        // a step never overtakes its client's Hello
        let join = scenario.clients[step.client].join_ms;
        sim.net.schedule(ms_to_micros(step.at_ms.max(join)), Timer::Step(k));
    }
    for (t, task) in scenario.tasks.iter().enumerate() {
        sim.net.schedule(ms_to_micros(task.at_ms), Timer::TaskReady(t));
    }

    let limit = ms_to_micros(scenario.timeout_ms);
    while let Some(item) = sim.net.next() {
        if sim.net.now() > limit {
            return Err(ScenarioError::Timeout { limit_ms: scenario.timeout_ms });
        }
        match item {
            Item::Timer(t) => sim.fire(t),
            Item::Frame { from: Endpoint::Client(c), to: Endpoint::Server, bytes, .. } => sim.server_receive(c, &bytes),
            Item::Frame { to: Endpoint::Client(c), bytes, .. } => sim.client_receive(c, &bytes),
            Item::Frame { .. } => unreachable!("no server-to-server links"),
        }
    }
    let last_event = sim.net.now();
    let p99 = sim.clients.iter().map(|c| c.profile.p99_ms()).fold(0.0, f64::max);
    sim.net.advance_to(last_event + ms_to_micros(3.0 * p99));

    build_report(sim, micros_to_ms(last_event), wall)
}

fn build_report(sim: Sim<'_>, last_event_ms: f64, wall: Instant) -> Result<ScenarioReport, ScenarioError> {
    let Sim { scenario, plan, core, clients, net, progress, latencies, hub_errors, .. } = sim;
    let state = core.state();
    let server_digest = core.digest();
    let applied = core.applied();
    let client_digests: BTreeMap<String, Option<String>> =
        clients.iter().map(|c| (c.id.to_string(), c.replica.digest())).collect();

    // answers are read from what a renderer saw; without one, from the participant itself
    let observer = clients.iter().position(|c| c.role == Role::Renderer);
    let tasks: Vec<TaskResult> = scenario
        .tasks
        .iter()
        .enumerate()
        .map(|(t, spec)| {
            let instance = plan.instances[t];
            let p = &progress[t];
            let expected = match (spec.kind, instance) {
                (TaskKind::Range, Instance::Slice { axis, index }) => {
                    let (lo, hi) = oracle_range(&plan.cube, axis, index).expect("validated");
                    vec![lo, hi]
                }
                (TaskKind::Order, Instance::Slice { axis, index }) => oracle_order(&plan.cube, axis, index).expect("validated"),
                (TaskKind::Compare, Instance::Cells(cells)) => vec![oracle_compare(&plan.cube, cells).expect("validated")],
                _ => unreachable!("task kinds and instances agree"),
            };
            let completed = p.end_seq.is_some() && p.failure.is_none();
            let answer = match (p.end_seq, completed) {
                (Some(end), true) => {
                    let watcher = &clients[observer.unwrap_or(spec.by)];
                    let relevant = instance.relevant(&plan.cube);
                    let seen: Vec<CellId> = watcher
                        .selects
                        .iter()
                        .filter(|(seq, cell)| *seq > p.start_seq && *seq <= end && relevant.contains(cell))
                        .map(|(_, cell)| *cell)
                        .collect();
                    match spec.kind {
                        TaskKind::Range => match seen.as_slice() {
                            [] => vec![],
                            [only] => vec![*only, *only],
                            [lo, hi, ..] => vec![*lo, *hi],
                        },
                        TaskKind::Order => seen,
                        TaskKind::Compare => seen.last().copied().into_iter().collect(),
                    }
                }
                _ => Vec::new(),
            };
            let detail = match (&p.failure, p.started) {
                (Some(f), _) => f.clone(),
                (None, false) => "never started".into(),
                (None, true) if p.end_seq.is_none() => "did not finish".into(),
                _ => String::new(),
            };
            TaskResult {
                task: t + 1,
                kind: spec.kind.name().to_string(),
                by: clients[spec.by].id.to_string(),
                instance: instance.describe(),
                completed,
                answer,
                expected,
                detail,
            }
        })
        .collect();

    let mut assertions = Vec::new();
    for e in &scenario.expect {
        match e {
            Expectation::Converge => {
                let stragglers: Vec<String> = client_digests
                    .iter()
                    .filter(|(_, d)| d.as_deref() != Some(server_digest.as_str()))
                    .map(|(c, _)| c.clone())
                    .collect();
                let detail = if stragglers.is_empty() { String::new() } else { format!("diverged: {}", stragglers.join(", ")) };
                assertions.push(AssertionResult::new("converge", stragglers.is_empty(), detail));
            }
            Expectation::Oracles => {
                for t in &tasks {
                    let ok = t.completed && t.answer == t.expected;
                    let detail = if ok { String::new() } else { format!("{} {}", t.detail, t.summary()).trim().to_string() };
                    assertions.push(AssertionResult::new(&format!("task {} {} matches oracle", t.task, t.kind), ok, detail));
                }
            }
            Expectation::Selected(cells) => {
                let want: BTreeSet<CellId> = cells.iter().copied().collect();
                let have: BTreeSet<CellId> = state.selection.iter().copied().collect();
                let show = |s: &BTreeSet<CellId>| s.iter().map(ToString::to_string).collect::<Vec<_>>().join(",");
                assertions.push(AssertionResult::new(
                    &format!("selected {}", if want.is_empty() { "none".into() } else { show(&want) }),
                    want == have,
                    format!("server has {}", if have.is_empty() { "none".into() } else { show(&have) }),
                ));
            }
            Expectation::Answer { task, cells } => {
                let t = &tasks[task - 1];
                assertions.push(AssertionResult::new(
                    &format!("task {task} answer {}", cells.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")),
                    t.completed && &t.answer == cells,
                    t.summary(),
                ));
            }
            Expectation::PoseWriter { client, seq } => {
                let want = PoseWriter { seq: *seq, client: clients[*client].id.clone() };
                let ok = state.pose_writer.as_ref() == Some(&want);
                let have = state.pose_writer.as_ref().map_or("none".into(), |w| format!("{} {}", w.client, w.seq));
                assertions.push(AssertionResult::new(&format!("pose-writer {} {seq}", want.client), ok, format!("server has {have}")));
            }
            Expectation::Projection(want) => {
                let have = state.projection.as_ref().map(|p| (p.series_axis, p.fixed_index));
                let show = |p: &Option<(Axis, usize)>| p.map_or("none".into(), |(a, i)| format!("{a} {i}"));
                assertions.push(AssertionResult::new(
                    &format!("projection {}", show(want)),
                    have == *want,
                    format!("server has {}", show(&have)),
                ));
            }
        }
    }

    let up = net.stats(|f, _| f != Endpoint::Server);
    let down = net.stats(|f, _| f == Endpoint::Server);
    let messages = MessageCounts {
        uplink_frames: up.frames,
        downlink_frames: down.frames,
        uplink_bytes: up.bytes,
        downlink_bytes: down.bytes,
        duplicated: up.duplicated + down.duplicated,
        delayed: up.delayed + down.delayed,
        applied,
        hub_errors,
    };
    core.close().map_err(|e| invalid(format!("closing the session log: {e}")))?;
    Ok(ScenarioReport {
        scenario: scenario.name.clone(),
        seed: plan.seed,
        cube_digest: plan.cube.digest(),
        passed: assertions.iter().all(|a| a.passed),
        server_digest,
        client_digests,
        assertions,
        tasks,
        messages,
        latency: LatencyHistogram::from_samples(latencies),
        last_event_ms,
        quiescent_ms: micros_to_ms(net.now()),
        wall_ms: wall.elapsed().as_secs_f64() * 1000.0,
    })
}
