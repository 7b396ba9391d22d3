//! The deterministic state reducer run by the hub, one envelope at a time.

use crate::interaction::{
    axis_select, haptic_encode, hit_test_mark, project_series, toggle_select, HapticMode, InteractionError,
    HAPTIC_PULSE_MS,
};
use crate::model::{summarize, CellId};
use crate::protocol::state::{selection_diff, Change, PoseWriter, SessionState};
use crate::protocol::wire::{ClientId, Envelope, ErrorCode, MessagePayload, Role};
use crate::{ChartLayout, DataCube, HapticCommand, ScreenConfig};

/// Where an outbound envelope goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// Only the client whose envelope was reduced.
    Sender,
    /// Every connected client, sender included.
    All,
    /// Every connected client announcing this role.
    Role(Role),
}

impl Route {
    /// Whether a member `client` announcing `role` receives an envelope reduced from `sender`.
    pub fn reaches(&self, sender: &ClientId, client: &ClientId, role: Role) -> bool {
        match self {
            Route::Sender => client == sender,
            Route::All => true,
            Route::Role(r) => *r == role,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outbound {
    pub route: Route,
    pub envelope: Envelope,
}

/// Immutable session inputs the reducer consults.
#[derive(Debug, Clone, Copy)]
pub struct ReduceContext<'a> {
    pub cube: &'a DataCube,
    pub layout: &'a ChartLayout,
    pub screen: &'a ScreenConfig,
}

struct Emitter<'e> {
    env: &'e Envelope,
    out: Vec<Outbound>,
}

impl Emitter<'_> {
    fn push(&mut self, state: &mut SessionState, route: Route, payload: MessagePayload) {
        state.outbound_seq += 1;
        let envelope = Envelope::new(self.env.session_id.clone(), ClientId::server(), state.outbound_seq, payload);
        self.out.push(Outbound { route, envelope });
    }

    fn ack(&mut self, state: &mut SessionState) {
        let seq = self.env.seq;
        self.push(state, Route::Sender, MessagePayload::Ack { seq });
    }

    fn delta(&mut self, state: &mut SessionState, changes: Vec<Change>) {
        if !changes.is_empty() {
            self.push(state, Route::All, MessagePayload::StateDelta { changes });
        }
    }

    fn error(&mut self, state: &mut SessionState, code: ErrorCode, detail: String) {
        let seq = self.env.seq;
        self.push(state, Route::Sender, MessagePayload::Error { code, seq, detail });
    }
}

/// Amplitude pulse for a tapped cell. A constant cube has no range to encode, so every tap
/// gets the full-strength pulse.
fn tap_pulse(cube: &DataCube, cell: CellId) -> HapticCommand {
    haptic_encode(cube.value(cell), cube.value_range(), HapticMode::Absolute)
        .unwrap_or(HapticCommand { amplitude: 1.0, duration_ms: HAPTIC_PULSE_MS })
}

/// Reduces one envelope into the session.
///
/// Envelopes whose `seq` is at or below the sender's watermark are duplicates: the
/// replicated state is left alone and only the `Ack` is re-emitted. Rejected requests
/// (out-of-bounds cells or indices, hub-only payloads) produce an `Error` for the sender and
/// leave the state, watermark included, untouched.
pub fn reduce(state: &SessionState, env: &Envelope, ctx: &ReduceContext<'_>) -> (SessionState, Vec<Outbound>) {
    let mut next = state.clone();
    let mut em = Emitter { env, out: Vec::new() };

    if env.seq <= state.watermark(&env.client_id) {
        em.ack(&mut next);
        return (next, em.out);
    }

    match apply(&mut next, &mut em, ctx) {
        Ok(()) => {
            next.watermarks.insert(env.client_id.clone(), env.seq);
            em.ack(&mut next);
        }
        Err((code, detail)) => {
            next = state.clone();
            em.out.clear();
            em.error(&mut next, code, detail);
        }
    }
    debug_assert_eq!(check_coherence(&next, ctx.cube), Ok(()));
    (next, em.out)
}

type Rejection = (ErrorCode, String);

fn rejection(e: InteractionError) -> Rejection {
    let code = match e {
        InteractionError::OutOfBoundsCell(_) => ErrorCode::OutOfBoundsCell,
        _ => ErrorCode::OutOfBoundsIndex,
    };
    (code, e.to_string())
}

fn apply(next: &mut SessionState, em: &mut Emitter<'_>, ctx: &ReduceContext<'_>) -> Result<(), Rejection> {
    let env = em.env;
    match &env.payload {
        MessagePayload::Hello { .. } | MessagePayload::Heartbeat {} => {}
        MessagePayload::TapScreen { point_px } => {
            if let Some(cell) = hit_test_mark((point_px.x, point_px.y), ctx.layout, ctx.screen) {
                let selection = toggle_select(&next.selection, ctx.cube, cell).map_err(rejection)?;
                let changes = selection_changes(next, selection, ctx.cube);
                em.delta(next, changes);
                let command = tap_pulse(ctx.cube, cell);
                em.push(next, Route::Role(Role::Proxy), MessagePayload::HapticPulse { command });
            }
        }
        MessagePayload::AxisTap { axis, index } => {
            let selection = axis_select(&next.selection, ctx.cube, *axis, *index).map_err(rejection)?;
            let changes = selection_changes(next, selection, ctx.cube);
            em.delta(next, changes);
        }
        MessagePayload::PoseUpdate { pose } => {
            let writer = PoseWriter { seq: env.seq, client: env.client_id.clone() };
            if next.pose_writer.as_ref().is_none_or(|current| writer > *current) {
                next.pose = *pose;
                next.pose_writer = Some(writer.clone());
                em.delta(next, vec![Change::Pose { pose: *pose, writer }]);
            }
        }
        MessagePayload::ProjectRequest { axis, index } => {
            let projection = project_series(ctx.cube, *axis, *index).map_err(rejection)?;
            next.projection = Some(projection.clone());
            em.delta(next, vec![Change::Projection { projection: Some(projection) }]);
        }
        MessagePayload::SummarizeRequest {} => {
            let summary = summarize(ctx.cube, next.selection.iter()).expect("selection stays in bounds");
            next.summary = Some(summary);
            em.delta(next, vec![Change::Summary { summary: Some(summary) }]);
        }
        MessagePayload::ClearProjection {} => {
            if next.projection.take().is_some() {
                em.delta(next, vec![Change::Projection { projection: None }]);
            }
        }
        other => {
            return Err((ErrorCode::UnexpectedPayload, format!("{} is sent by the hub only", other.tag())));
        }
    }
    Ok(())
}

/// Installs a new selection, refreshing a live summary; returns the replicated changes.
fn selection_changes(
    state: &mut SessionState,
    selection: crate::SelectionState,
    cube: &DataCube,
) -> Vec<Change> {
    let mut changes = selection_diff(&state.selection, &selection);
    state.selection = selection;
    if state.summary.is_some() {
        let summary = summarize(cube, state.selection.iter()).expect("selection stays in bounds");
        state.summary = Some(summary);
        changes.push(Change::Summary { summary: Some(summary) });
    }
    changes
}

/// Verifies the derived parts of a state against recomputation from the cube.
pub fn check_coherence(state: &SessionState, cube: &DataCube) -> Result<(), String> {
    if state.cube_digest != cube.digest() {
        return Err("state belongs to a different cube".into());
    }
    if let Some(cell) = state.selection.iter().find(|c| !cube.contains(**c)) {
        return Err(format!("selected cell {cell} out of bounds"));
    }
    if let Some(p) = &state.projection {
        let expected = project_series(cube, p.series_axis, p.fixed_index).map_err(|e| e.to_string())?;
        if *p != expected {
            return Err("stored projection differs from recomputation".into());
        }
    }
    if let Some(s) = &state.summary {
        let expected = summarize(cube, state.selection.iter()).map_err(|e| e.to_string())?;
        if *s != expected {
            return Err("stored summary differs from recomputation".into());
        }
    }
    if let Some(w) = &state.pose_writer {
        if w.seq > state.watermark(&w.client) {
            return Err(format!("pose writer {}@{} ahead of its watermark", w.client, w.seq));
        }
    }
    Ok(())
}
