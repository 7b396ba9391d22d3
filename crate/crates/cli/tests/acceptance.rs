//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! Every check compares the implementation against an oracle written here: brute-force scans,
//! naive accumulation, explicit 4×4 matrices, hand-built expected states.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use holoproxy_core::anchor::compose;
use holoproxy_core::protocol::{
    decode, encode, reduce, Capability, Change, ClientId, Envelope, ErrorCode, MessagePayload, PointPx, PoseWriter,
    ReduceContext, Role, SessionId, SessionState,
};
use holoproxy_core::{
    haptic_encode, hit_test_mark, layout_chart, summarize, Axis, CellId, DataCube, HapticCommand, HapticMode,
    PixelRect, Pose, Projection2D, Quat, ScreenConfig, SelectionState, SummaryStats, Vec3,
};
use holoproxy_server::{Client, Hub, ServerConfig, SessionCore};
use holoproxy_sim::{bundled, run_scenario_with, synthetic_cube, RunOptions};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_cube(r: &mut ChaCha8Rng, max_side: usize) -> DataCube {
    let l = r.random_range(1..=max_side);
    let y = r.random_range(1..=max_side);
    DataCube::new(
        (0..l).map(|i| format!("L{i}")).collect(),
        (0..y).map(|i| format!("{}", 1990 + i)).collect(),
        (0..l * y).map(|_| r.random_range(-500.0..1000.0)).collect(),
        "value",
        "",
    )
    .unwrap()
}

fn random_pose(r: &mut ChaCha8Rng) -> Pose {
    loop {
        let q = Quat::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if q.norm() > 1e-3 {
            let t = Vec3::new(r.random_range(-3.0..3.0), r.random_range(-3.0..3.0), r.random_range(-3.0..3.0));
            return Pose::new(t, q.normalized()).unwrap();
        }
    }
}

// ---- protocol round trip ----

fn any_f64(r: &mut ChaCha8Rng) -> f64 {
    match r.random_range(0..4) {
        0 => loop {
            let v = f64::from_bits(r.random());
            if v.is_finite() {
                break v;
            }
        },
        1 => r.random_range(-1e6..1e6),
        2 => [0.0, -0.0, 1.0, f64::MIN_POSITIVE, f64::MAX, f64::MIN, 0.1, 1e-300][r.random_range(0..8)],
        _ => r.random_range(0..1000) as f64 / 10.0,
    }
}

fn any_text(r: &mut ChaCha8Rng, max: usize) -> String {
    const ALPHABET: [char; 12] = ['a', 'Z', '0', ' ', '"', '\\', '\n', '\t', 'é', '年', '\u{1F600}', '\u{7f}'];
    (0..r.random_range(0..=max)).map(|_| ALPHABET[r.random_range(0..ALPHABET.len())]).collect()
}

fn any_token(r: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[u8] = b"abcxyzABC0123456789_.-";
    (0..r.random_range(1..=16)).map(|_| ALPHABET[r.random_range(0..ALPHABET.len())] as char).collect()
}

fn any_cell(r: &mut ChaCha8Rng) -> CellId {
    CellId::new(r.random_range(0..60), r.random_range(0..60))
}

fn any_axis(r: &mut ChaCha8Rng) -> Axis {
    if r.random() {
        Axis::Location
    } else {
        Axis::Year
    }
}

fn any_pose(r: &mut ChaCha8Rng) -> Pose {
    let p = random_pose(r);
    Pose { position: Vec3::new(any_f64(r), any_f64(r), any_f64(r)), ..p }
}

fn any_summary(r: &mut ChaCha8Rng) -> SummaryStats {
    if r.random_bool(0.2) {
        return SummaryStats { count: 0, sum: 0.0, min: None, max: None, mean: None };
    }
    SummaryStats { count: r.random_range(1..500), sum: any_f64(r), min: Some(any_f64(r)), max: Some(any_f64(r)), mean: Some(any_f64(r)) }
}

fn any_projection(r: &mut ChaCha8Rng) -> Projection2D {
    let n = r.random_range(0..8);
    Projection2D {
        series_axis: any_axis(r),
        fixed_index: r.random_range(0..40),
        labels: (0..n).map(|_| any_text(r, 6)).collect(),
        values: (0..n).map(|_| any_f64(r)).collect(),
        value_range: (any_f64(r), any_f64(r)),
    }
}

fn any_writer(r: &mut ChaCha8Rng) -> PoseWriter {
    PoseWriter { seq: r.random(), client: ClientId::new(any_token(r)).unwrap() }
}

fn any_change(r: &mut ChaCha8Rng) -> Change {
    match r.random_range(0..5) {
        0 => Change::Select { cell: any_cell(r) },
        1 => Change::Deselect { cell: any_cell(r) },
        2 => Change::Pose { pose: any_pose(r), writer: any_writer(r) },
        3 => Change::Projection { projection: r.random_bool(0.7).then(|| any_projection(r)) },
        _ => Change::Summary { summary: r.random_bool(0.7).then(|| any_summary(r)) },
    }
}

fn any_state(r: &mut ChaCha8Rng) -> SessionState {
    SessionState {
        cube_digest: (0..64).map(|_| char::from_digit(r.random_range(0..16), 16).unwrap()).collect(),
        selection: SelectionState { selected: (0..r.random_range(0..12)).map(|_| any_cell(r)).collect() },
        pose: any_pose(r),
        pose_writer: r.random_bool(0.5).then(|| any_writer(r)),
        projection: r.random_bool(0.5).then(|| any_projection(r)),
        summary: r.random_bool(0.5).then(|| any_summary(r)),
        watermarks: (0..r.random_range(0..4)).map(|_| (ClientId::new(any_token(r)).unwrap(), r.random())).collect(),
        outbound_seq: r.random(),
    }
}

fn any_payload(r: &mut ChaCha8Rng) -> MessagePayload {
    const ROLES: [Role; 3] = [Role::Proxy, Role::Renderer, Role::Observer];
    const CODES: [ErrorCode; 7] = [
        ErrorCode::OutOfBoundsCell,
        ErrorCode::OutOfBoundsIndex,
        ErrorCode::UnexpectedPayload,
        ErrorCode::HandshakeRequired,
        ErrorCode::UnknownSession,
        ErrorCode::DuplicateClient,
        ErrorCode::BadFrame,
    ];
    match r.random_range(0..13) {
        0 => MessagePayload::Hello {
            role: ROLES[r.random_range(0..3)],
            capabilities: Capability::ALL.iter().copied().filter(|_| r.random()).collect::<BTreeSet<_>>(),
        },
        1 => MessagePayload::TapScreen { point_px: PointPx { x: any_f64(r), y: any_f64(r) } },
        2 => MessagePayload::AxisTap { axis: any_axis(r), index: r.random_range(0..1000) },
        3 => MessagePayload::PoseUpdate { pose: any_pose(r) },
        4 => MessagePayload::ProjectRequest { axis: any_axis(r), index: r.random_range(0..1000) },
        5 => MessagePayload::SummarizeRequest {},
        6 => MessagePayload::ClearProjection {},
        7 => MessagePayload::HapticPulse {
            command: HapticCommand { amplitude: r.random_range(0.0..=1.0), duration_ms: r.random_range(1..=2000) },
        },
        8 => MessagePayload::StateDelta { changes: (0..r.random_range(0..6)).map(|_| any_change(r)).collect() },
        9 => MessagePayload::FullSnapshot { state: Box::new(any_state(r)) },
        10 => MessagePayload::Ack { seq: r.random() },
        11 => MessagePayload::Error { code: CODES[r.random_range(0..CODES.len())], seq: r.random(), detail: any_text(r, 20) },
        _ => MessagePayload::Heartbeat {},
    }
}

fn protocol_round_trip() -> Check {
    let start = Instant::now();
    let mut r = rng(1);
    let mut tags = BTreeSet::new();
    for i in 0..1000 {
        let env = Envelope::new(
            SessionId::new(any_token(&mut r)).unwrap(),
            ClientId::new(any_token(&mut r)).unwrap(),
            r.random(),
            any_payload(&mut r),
        );
        tags.insert(env.payload.tag());
        let frame = encode(&env);
        ensure(frame.iter().filter(|b| **b == b'\n').count() == 1 && frame.ends_with(b"\n"), || {
            format!("envelope {i}: frame is not a single line")
        })?;
        let back = decode(&frame).map_err(|e| format!("envelope {i}: {e}"))?;
        ensure(back == env, || format!("envelope {i} changed in transit: {env:?}"))?;
    }
    ensure(tags.len() == 13, || format!("only {} payload kinds generated", tags.len()))?;

    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let mut names: Vec<PathBuf> = std::fs::read_dir(&fixtures)
        .map_err(|e| format!("{}: {e}", fixtures.display()))?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "frame"))
        .collect();
    names.sort();
    ensure(names.len() >= 5, || format!("{} golden frames found", names.len()))?;
    for path in &names {
        let golden = std::fs::read(path).unwrap();
        let env = decode(&golden).map_err(|e| format!("{}: {e}", path.display()))?;
        ensure(encode(&env) == golden, || format!("{} is not reproduced byte for byte", path.display()))?;
    }
    // written out by hand from the wire format description
    let hello = Envelope::new(
        SessionId::new("demo").unwrap(),
        ClientId::new("phone-1").unwrap(),
        1,
        MessagePayload::Hello { role: Role::Proxy, capabilities: Capability::phone() },
    );
    let expected = concat!(
        r#"{"v":1,"session":"demo","client":"phone-1","seq":1,"payload":{"type":"Hello","body":"#,
        r#"{"role":"proxy","capabilities":["precise_input","vibrotactile","high_res_display"]}}}"#,
        "\n"
    );
    ensure(encode(&hello) == expected.as_bytes(), || format!("hello frame is {}", String::from_utf8_lossy(&encode(&hello))))?;
    let took = start.elapsed();
    ensure(took < Duration::from_secs(5), || format!("took {took:?}"))?;
    Ok(format!("1000 envelopes, {} golden frames, {:.2} s", names.len(), took.as_secs_f64()))
}

// ---- convergence ----

fn convergence() -> Check {
    let start = Instant::now();
    let stress = bundled("convergence_stress").ok_or("convergence_stress is not bundled")?;
    ensure(stress.network.reorder_p >= 0.2 && stress.network.dup_p >= 0.05, || format!("{:?}", stress.network))?;
    let mut converged = 0;
    for seed in 0..100 {
        let report = run_scenario_with(&stress, &RunOptions { seed: Some(seed), log_path: None })
            .map_err(|e| format!("seed {seed}: {e}"))?;
        let all_equal = report.client_digests.values().all(|d| d.as_deref() == Some(report.server_digest.as_str()));
        ensure(report.messages.duplicated > 0 && report.messages.delayed > 0, || format!("seed {seed}: no duplicates or delays"))?;
        converged += usize::from(all_equal && report.client_digests.len() == stress.clients.len());
    }
    let took = start.elapsed();
    ensure(converged == 100, || format!("{converged}/100 runs converged"))?;
    ensure(took < Duration::from_secs(60), || format!("took {took:?}"))?;
    Ok(format!("100/100 runs converged, {:.1} s", took.as_secs_f64()))
}

// ---- pose last-writer-wins ----

struct Reducer {
    cube: DataCube,
    layout: holoproxy_core::ChartLayout,
    screen: ScreenConfig,
}

impl Reducer {
    fn new() -> Self {
        let cube = synthetic_cube(4, 5, 1);
        let layout = layout_chart(&cube);
        Self { cube, layout, screen: ScreenConfig::landscape(1000, 500).unwrap() }
    }

    fn run(&self, log: &[Envelope]) -> SessionState {
        let ctx = ReduceContext { cube: &self.cube, layout: &self.layout, screen: &self.screen };
        log.iter().fold(SessionState::initial(&self.cube), |s, e| reduce(&s, e, &ctx).0)
    }

    /// The state a pose-only history must end in: initial state plus the winning pose.
    fn expected(&self, winner: &Envelope) -> String {
        let MessagePayload::PoseUpdate { pose } = winner.payload else { unreachable!() };
        let mut s = SessionState::initial(&self.cube);
        s.pose = pose;
        s.pose_writer = Some(PoseWriter { seq: winner.seq, client: winner.client_id.clone() });
        s.digest()
    }
}

fn pose_update(client: &str, seq: u64, r: &mut ChaCha8Rng) -> Envelope {
    Envelope::new(
        SessionId::new("lww").unwrap(),
        ClientId::new(client).unwrap(),
        seq,
        MessagePayload::PoseUpdate { pose: random_pose(r) },
    )
}

fn maximal(updates: &[Envelope]) -> &Envelope {
    let mut best = &updates[0];
    for u in updates {
        if u.seq > best.seq || (u.seq == best.seq && u.client_id.as_str() > best.client_id.as_str()) {
            best = u;
        }
    }
    best
}

fn pose_lww() -> Check {
    let red = Reducer::new();
    let mut r = rng(3);
    let keys: Vec<(&str, u64)> = ["a", "b", "proxy"].iter().flat_map(|c| (1..=3).map(move |s| (*c, s))).collect();
    let mut pairs = 0;
    for (i, &(c1, s1)) in keys.iter().enumerate() {
        for &(c2, s2) in &keys[i..] {
            let (u, v) = (pose_update(c1, s1, &mut r), pose_update(c2, s2, &mut r));
            let v = if (c1, s1) == (c2, s2) { u.clone() } else { v };
            let want = red.expected(maximal(&[u.clone(), v.clone()]));
            for order in [[u.clone(), v.clone()], [v.clone(), u.clone()]] {
                let got = red.run(&order).digest();
                ensure(got == want, || format!("{c1}:{s1} vs {c2}:{s2} in order {:?}", order.map(|e| e.seq)))?;
                pairs += 1;
            }
        }
    }
    for k in 0..1000 {
        let mut updates = Vec::new();
        for c in ["a", "b", "c", "proxy", "renderer"] {
            let mut seq = 0;
            for _ in 0..r.random_range(0..5) {
                seq += r.random_range(1..4);
                updates.push(pose_update(c, seq, &mut r));
            }
        }
        if updates.is_empty() {
            updates.push(pose_update("a", 1, &mut r));
        }
        let want = red.expected(maximal(&updates));
        // duplicates and arbitrary order
        for _ in 0..r.random_range(0..4) {
            let d = updates[r.random_range(0..updates.len())].clone();
            updates.push(d);
        }
        updates.shuffle(&mut r);
        ensure(red.run(&updates).digest() == want, || format!("schedule {k} of {} updates", updates.len()))?;
    }
    Ok(format!("{pairs} two-update orders, 1000 random schedules"))
}

// ---- hit testing ----

/// Index along one grid axis of an integer pixel, by integer arithmetic.
fn grid_index(px: u32, start: u32, len: u32, n: usize) -> Option<usize> {
    (px >= start && px < start + len).then(|| ((px - start) as usize * n) / len as usize)
}

fn hit_test() -> Check {
    let mut r = rng(4);
    let screens = [
        ScreenConfig::landscape(1000, 500).unwrap(),
        ScreenConfig::landscape(2400, 1080).unwrap(),
        ScreenConfig::new(800, 600, PixelRect::new(40, 100, 333, 400), PixelRect::new(400, 0, 400, 600)).unwrap(),
    ];
    let mut random_points = 0;
    let mut edge_points = 0;
    for (i, screen) in screens.iter().enumerate() {
        let cube = synthetic_cube(1 + 3 * i, 3 + 2 * i, i as u64);
        let layout = layout_chart(&cube);
        let (cols, rows) = (cube.year_count(), cube.location_count());
        let a = screen.selection_area;
        for _ in 0..10_000 / screens.len() + 1 {
            let (x, y) = (r.random_range(-10.0..screen.width_px as f64 + 10.0), r.random_range(-10.0..screen.height_px as f64 + 10.0));
            let u = (x - a.x as f64) / a.width as f64;
            let v = (y - a.y as f64) / a.height as f64;
            let mut hits = Vec::new();
            if a.x as f64 <= x && x < (a.x + a.width) as f64 && a.y as f64 <= y && y < (a.y + a.height) as f64 {
                for l in 0..rows {
                    for c in 0..cols {
                        let inside = c as f64 / cols as f64 <= u
                            && u < (c + 1) as f64 / cols as f64
                            && l as f64 / rows as f64 <= v
                            && v < (l + 1) as f64 / rows as f64;
                        if inside {
                            hits.push(CellId::new(l, c));
                        }
                    }
                }
            }
            ensure(hits.len() <= 1, || format!("scan found {hits:?}"))?;
            let got = hit_test_mark((x, y), &layout, screen);
            ensure(got == hits.first().copied(), || format!("({x}, {y}): {got:?} vs {hits:?}"))?;
            random_points += 1;
        }
        // every integer pixel on each row and column line, edges included
        for px in a.x.saturating_sub(1)..=a.x + a.width {
            for py in [a.y, a.y + a.height / 2, a.y + a.height - 1, a.y + a.height] {
                let want = grid_index(px, a.x, a.width, cols)
                    .zip(grid_index(py, a.y, a.height, rows))
                    .map(|(c, l)| CellId::new(l, c));
                let got = hit_test_mark((px as f64, py as f64), &layout, screen);
                ensure(got == want, || format!("pixel ({px}, {py}): {got:?} vs {want:?}"))?;
                edge_points += 1;
            }
        }
        for py in a.y.saturating_sub(1)..=a.y + a.height {
            let px = a.x;
            let want = grid_index(px, a.x, a.width, cols).zip(grid_index(py, a.y, a.height, rows)).map(|(c, l)| CellId::new(l, c));
            let got = hit_test_mark((px as f64, py as f64), &layout, screen);
            ensure(got == want, || format!("pixel ({px}, {py}): {got:?} vs {want:?}"))?;
            edge_points += 1;
        }
    }
    ensure(random_points >= 10_000, || format!("{random_points} points"))?;
    Ok(format!("{random_points} random points, {edge_points} pixel-grid points"))
}

// ---- summaries ----

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn aggregates() -> Check {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for k in 0..1000 {
        let cube = random_cube(&mut r, 12);
        let n = cube.location_count() * cube.year_count();
        let mut picks: Vec<CellId> = (0..r.random_range(0..=n.min(30)))
            .map(|_| CellId::new(r.random_range(0..cube.location_count()), r.random_range(0..cube.year_count())))
            .collect();
        let stats = summarize(&cube, &picks).map_err(|e| format!("pair {k}: {e}"))?;
        picks.sort();
        picks.dedup();
        let vals: Vec<f64> = picks.iter().map(|c| cube.values()[c.location * cube.year_count() + c.year]).collect();
        ensure(stats.count == vals.len(), || format!("pair {k}: count {} vs {}", stats.count, vals.len()))?;
        if vals.is_empty() {
            ensure(stats.min.is_none() && stats.max.is_none() && stats.mean.is_none() && stats.sum == 0.0, || format!("pair {k}: {stats:?}"))?;
            continue;
        }
        let mut sum = 0.0;
        let (mut min, mut max) = (vals[0], vals[0]);
        for &v in &vals {
            sum += v;
            min = min.min(v);
            max = max.max(v);
        }
        let mean = sum / vals.len() as f64;
        for (got, want) in [(stats.sum, sum), (stats.min.unwrap(), min), (stats.max.unwrap(), max), (stats.mean.unwrap(), mean)] {
            let e = rel_err(got, want);
            worst = worst.max(if sum.abs() < 1e-6 && got == stats.sum { 0.0 } else { e });
            // sums near zero are compared absolutely against the magnitudes involved
            let scale = vals.iter().map(|v| v.abs()).sum::<f64>();
            ensure(e <= 1e-9 || (got - want).abs() <= 1e-9 * scale, || format!("pair {k}: {got} vs {want}"))?;
        }
    }
    Ok(format!("1000 pairs, worst relative error {worst:.1e}"))
}

// ---- haptics ----

fn haptics() -> Check {
    let mut r = rng(6);
    let amp = |v: f64, range: (f64, f64), mode: HapticMode<f64>| haptic_encode(v, range, mode).map(|c| c.amplitude);
    for k in 0..10_000 {
        let lo = r.random_range(-1e6..1e6);
        let hi = lo + r.random_range(1e-3..1e6);
        let range = (lo, hi);
        let e = |x: Result<f64, _>| x.map_err(|e: holoproxy_core::InteractionError| format!("sample {k}: {e}"));
        ensure(e(amp(lo, range, HapticMode::Absolute))? == 0.1, || format!("sample {k}: min does not map to 0.1"))?;
        ensure(e(amp(hi, range, HapticMode::Absolute))? == 1.0, || format!("sample {k}: max does not map to 1.0"))?;
        let mut vs: Vec<f64> = (0..4).map(|_| r.random_range(lo - (hi - lo) * 0.2..hi + (hi - lo) * 0.2)).collect();
        vs.sort_by(f64::total_cmp);
        let amps = vs.iter().map(|v| e(amp(*v, range, HapticMode::Absolute))).collect::<Result<Vec<_>, _>>()?;
        ensure(amps.windows(2).all(|w| w[0] <= w[1]), || format!("sample {k}: not monotone {vs:?} -> {amps:?}"))?;
        ensure(amps.iter().all(|a| (0.1..=1.0).contains(a)), || format!("sample {k}: out of bounds {amps:?}"))?;
        for (i, v) in vs.iter().enumerate() {
            if (lo..=hi).contains(v) {
                let want = 0.1 + 0.9 * (v - lo) / (hi - lo);
                ensure((amps[i] - want).abs() <= 1e-9, || format!("sample {k}: {v} -> {} vs {want}", amps[i]))?;
            }
        }
        let (a, b) = (vs[0], vs[3]);
        let ab = e(amp(a, range, HapticMode::Difference(b)))?;
        let ba = e(amp(b, range, HapticMode::Difference(a)))?;
        ensure(ab == ba, || format!("sample {k}: difference mode is not symmetric, {ab} vs {ba}"))?;
        ensure((0.1..=1.0).contains(&ab), || format!("sample {k}: difference {ab} out of bounds"))?;
        ensure(e(amp(a, range, HapticMode::Difference(a)))? == 0.1, || format!("sample {k}: zero difference is not 0.1"))?;
    }
    Ok("10000 samples".into())
}

// ---- pose math ----

type M4 = [[f64; 4]; 4];

fn m4(p: &Pose) -> M4 {
    let Quat { w, x, y, z } = p.orientation;
    let t = p.position;
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y), t.x],
        [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x), t.y],
        [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y), t.z],
        [0.0, 0.0, 0.0, 1.0],
    ]
}

fn mul(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn max_diff(a: &M4, b: &M4) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn pose_math() -> Check {
    let mut r = rng(7);
    let mut worst = 0.0f64;
    for k in 0..10_000 {
        let (a, b, c) = (random_pose(&mut r), random_pose(&mut r), random_pose(&mut r));
        let oracle = mul(&mul(&m4(&a), &m4(&b)), &m4(&c));
        for got in [compose(&compose(&a, &b), &c), compose(&a, &compose(&b, &c))] {
            let d = max_diff(&m4(&got), &oracle);
            worst = worst.max(d);
            ensure(d <= 1e-9, || format!("triple {k}: differs from the matrix product by {d:e}"))?;
            let n = (got.orientation.norm() - 1.0).abs();
            ensure(n <= 1e-9, || format!("triple {k}: quaternion norm off by {n:e}"))?;
        }
    }
    Ok(format!("10000 triples, worst entry difference {worst:.1e}"))
}

// ---- study tasks ----

fn parse_cell(s: &str) -> CellId {
    let (l, y) = s.split_once(':').unwrap();
    CellId::new(l.parse().unwrap(), y.parse().unwrap())
}

fn brute_force(kind: &str, instance: &str, cube: &DataCube) -> Vec<CellId> {
    let value = |c: &CellId| cube.values()[c.location * cube.year_count() + c.year];
    let words: Vec<&str> = instance.split_whitespace().collect();
    if kind == "compare" {
        let cells: Vec<CellId> = words.iter().map(|w| parse_cell(w)).collect();
        let mut best = cells[0];
        for c in &cells[1..] {
            if value(c) < value(&best) || (value(c) == value(&best) && (c.location, c.year) < (best.location, best.year)) {
                best = *c;
            }
        }
        return vec![best];
    }
    let index: usize = words[1].parse().unwrap();
    let slice: Vec<CellId> = if words[0] == "location" {
        (0..cube.year_count()).map(|y| CellId::new(index, y)).collect()
    } else {
        (0..cube.location_count()).map(|l| CellId::new(l, index)).collect()
    };
    if kind == "range" {
        let (mut lo, mut hi) = (slice[0], slice[0]);
        for c in &slice {
            if value(c) < value(&lo) {
                lo = *c;
            }
            if value(c) > value(&hi) {
                hi = *c;
            }
        }
        return vec![lo, hi];
    }
    // selection sort: repeatedly take the first smallest remaining
    let mut rest = slice;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let mut m = 0;
        for i in 1..rest.len() {
            if value(&rest[i]) < value(&rest[m]) {
                m = i;
            }
        }
        out.push(rest.remove(m));
    }
    out
}

fn study_tasks() -> Check {
    let start = Instant::now();
    let mut lines = Vec::new();
    for name in ["range_basic", "order_basic", "compare_basic"] {
        let scenario = bundled(name).ok_or_else(|| format!("{name} is not bundled"))?;
        let holoproxy_sim::scenario::CubeSource::Synthetic { countries, years, seed } = scenario.cube else {
            return Err(format!("{name}: not a synthetic cube"));
        };
        ensure((countries, years) == (7, 10), || format!("{name}: {countries}x{years} cube"))?;
        let cube = synthetic_cube(countries, years, seed.unwrap_or(scenario.seed));

        let out = Command::new(env!("CARGO_BIN_EXE_holoproxy"))
            .args(["run", name, "--format", "json"])
            .output()
            .map_err(|e| format!("{name}: {e}"))?;
        ensure(out.status.code() == Some(0), || format!("{name}: exit {:?}", out.status.code()))?;
        let report: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| format!("{name}: {e}"))?;
        ensure(report["cube_digest"] == cube.digest(), || format!("{name}: ran on a different cube"))?;
        let tasks = report["tasks"].as_array().ok_or("no tasks")?;
        ensure(!tasks.is_empty(), || format!("{name}: no tasks"))?;
        for t in tasks {
            let kind = t["kind"].as_str().unwrap();
            let instance = t["instance"].as_str().unwrap();
            let answer: Vec<CellId> = t["answer"].as_array().unwrap().iter().map(|c| parse_cell(c.as_str().unwrap())).collect();
            let want = brute_force(kind, instance, &cube);
            ensure(t["completed"] == true && answer == want, || format!("{name}: {kind} on {instance}: {answer:?} vs {want:?}"))?;
            ensure(report["messages"]["uplink_frames"].as_u64().unwrap_or(0) > 0, || format!("{name}: no frames"))?;
            lines.push(format!("{kind} on {instance}"));
        }
    }
    let took = start.elapsed();
    ensure(took < Duration::from_secs(30), || format!("took {took:?}"))?;
    Ok(format!("{}, {:.1} s", lines.join("; "), took.as_secs_f64()))
}

// ---- crash and replay ----

fn workload(n: usize) -> Vec<MessagePayload> {
    let mut r = rng(9);
    (0..n)
        .map(|_| match r.random_range(0..6) {
            0 | 1 => MessagePayload::TapScreen { point_px: PointPx { x: r.random_range(0.0..600.0), y: r.random_range(0.0..600.0) } },
            2 => MessagePayload::AxisTap { axis: Axis::Year, index: r.random_range(0..5) },
            3 => MessagePayload::PoseUpdate { pose: random_pose(&mut r) },
            4 => MessagePayload::ProjectRequest { axis: Axis::Location, index: r.random_range(0..4) },
            _ => MessagePayload::SummarizeRequest {},
        })
        .collect()
}

async fn drive(addr: std::net::SocketAddr, session: &SessionId, id: &str, payloads: &[MessagePayload]) -> Result<(), String> {
    let mut c = Client::connect(addr, session.clone(), ClientId::new(id).unwrap(), Role::Proxy, Capability::phone())
        .await
        .map_err(|e| e.to_string())?;
    c.await_snapshot(Duration::from_secs(5)).await.map_err(|e| e.to_string())?;
    for p in payloads {
        let seq = c.send(p.clone()).await.map_err(|e| e.to_string())?;
        c.await_reply(seq, Duration::from_secs(5)).await.map_err(|e| e.to_string())?;
    }
    c.close().await.ok();
    Ok(())
}

/// Runs `phases` of (client, payloads) against a hub, one runtime per phase. With `crash`,
/// the first phase's runtime is torn down without closing the session and the second phase
/// runs on a new hub recovered from the log.
fn hub_run(log_dir: &std::path::Path, phases: &[(&str, &[MessagePayload])], crash: bool) -> Result<(String, u64), String> {
    let cube = synthetic_cube(4, 5, 2);
    let screen = ScreenConfig::landscape(1200, 600).unwrap();
    let cfg = ServerConfig { log_dir: Some(log_dir.to_path_buf()), ..ServerConfig::default() };
    let runtime = || tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();

    let rt = runtime();
    let (session, addr, hub) = rt.block_on(async {
        let hub = Hub::new(cfg.clone());
        let session = hub.create_session(cube.clone(), screen).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let server = hub.clone();
        tokio::spawn(async move { server.serve(listener).await });
        (session, addr, hub)
    });
    let log = log_dir.join(format!("{session}.log"));
    rt.block_on(drive(addr, &session, phases[0].0, phases[0].1))?;
    let (rt, addr, hub) = if crash {
        drop(hub);
        rt.shutdown_timeout(Duration::from_millis(100));
        let rt = runtime();
        let (addr, hub) = rt.block_on(async {
            let hub = Hub::new(cfg.clone());
            hub.install(SessionCore::recover(&log).map_err(|e| e.to_string())?);
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            let addr = listener.local_addr().unwrap();
            let server = hub.clone();
            tokio::spawn(async move { server.serve(listener).await });
            Ok::<_, String>((addr, hub))
        })?;
        (rt, addr, hub)
    } else {
        (rt, addr, hub)
    };
    for (id, payloads) in &phases[1..] {
        rt.block_on(drive(addr, &session, id, payloads))?;
    }
    let view = rt.block_on(hub.inspect(&session)).ok_or("session gone")?;
    rt.block_on(hub.close_session(&session)).ok_or("session gone")?.map_err(|e| e.to_string())?;
    let replayed = holoproxy_server::replay(&log).map_err(|e| e.to_string())?;
    ensure(replayed.digest == view.digest(), || "replay disagrees with the live session".into())?;
    Ok((view.digest(), view.applied))
}

fn crash_replay() -> Check {
    let payloads = workload(140);
    let mut done = Vec::new();
    for n in [1usize, 10, 100] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        // the first client's Hello counts as one applied message
        let (before, after) = payloads.split_at(n - 1);
        let phases: [(&str, &[MessagePayload]); 2] = [("phone", before), ("phone-2", after)];
        let (reference, applied) = hub_run(&dir.path().join("ref"), &phases, false)?;
        let (resumed, resumed_applied) = hub_run(&dir.path().join("crash"), &phases, true)?;
        ensure(resumed == reference && applied == resumed_applied, || {
            format!("N = {n}: {resumed} after {resumed_applied} vs {reference} after {applied}")
        })?;
        done.push(n.to_string());
    }
    Ok(format!("N = {} match the uninterrupted run", done.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("protocol round trip and golden frames", protocol_round_trip),
        ("convergence under reorder and duplication", convergence),
        ("pose last-writer-wins", pose_lww),
        ("hit test against exhaustive scan", hit_test),
        ("summaries against naive accumulation", aggregates),
        ("haptic mapping properties", haptics),
        ("pose composition against 4x4 matrices", pose_math),
        ("study tasks end to end", study_tasks),
        ("crash and replay", crash_replay),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
