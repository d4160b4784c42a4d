//! Brute-force reference implementations shared by the integration tests.
//! Each one is written from the documented rules, not from the library code.

#![allow(dead_code)]

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use volcap::camera::DistortionModel;
use volcap::filter::FilterParams;
use volcap::frame::DepthFrame;
use volcap::mesh::GridMesh;
use volcap::sync::{Action, Channel, RenderDecision, StreamPacket, SyncPolicy, SyncStats};

// ---------------------------------------------------------------- filter

/// Filters a whole stream one pixel at a time by rescanning the raw series.
pub fn reference_filter(frames: &[DepthFrame], params: &FilterParams) -> Vec<Vec<u16>> {
    let n_px = frames.first().map_or(0, |f| f.data().len());
    let mut outputs: Vec<Vec<u16>> = Vec::new();
    for t in 0..frames.len() {
        let now = frames[t].timestamp_us();
        let mut out = vec![0u16; n_px];
        for (px, slot) in out.iter_mut().enumerate() {
            let raw = |s: usize| frames[s].data()[px];
            let mut value = raw(t);

            // historic fill: newest valid raw reading within the window
            if value == 0 {
                for s in (0..t).rev() {
                    let ts = frames[s].timestamp_us();
                    if ts <= now && now - ts <= params.historic_window_ms * 1000 && raw(s) != 0 {
                        value = raw(s);
                        break;
                    }
                }
            }
            if t == 0 {
                *slot = value;
                continue;
            }
            let previous = outputs[t - 1][px];

            // small hold: mean of valid raw readings over the last small_n frames
            let lo = t.saturating_sub(params.small_n);
            let valid: Vec<f64> = (lo..t).map(raw).filter(|&d| d != 0).map(f64::from).collect();
            if !valid.is_empty() && value != 0 && previous != 0 {
                let mean = valid.iter().sum::<f64>() / valid.len() as f64;
                let thr = f64::from(params.small_threshold_mm);
                if (f64::from(value) - mean).abs() <= thr && (f64::from(previous) - mean).abs() <= thr {
                    value = previous;
                }
            }

            // large hold: valid-to-valid jumps above lambda over the last n2 frames
            if t >= 2 {
                let lo = t.saturating_sub(params.large_n2);
                let mut jumps = 0usize;
                for s in lo + 1..t {
                    let (a, b) = (raw(s - 1), raw(s));
                    if a != 0 && b != 0 && a.abs_diff(b) > params.large_lambda_mm {
                        jumps += 1;
                    }
                }
                if previous != 0 && jumps as f64 / params.large_n2 as f64 > params.large_ratio {
                    value = previous;
                }
            }
            *slot = value;
        }
        outputs.push(out);
    }
    outputs
}

// ---------------------------------------------------------------- sync

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Event {
    // arrivals sort before timers at equal times
    Arrival(usize),
    Timeout(u32),
}

#[derive(Debug, Clone, Copy)]
struct Open {
    first_us: u64,
    send_us: u64,
    depth: bool,
    color: bool,
}

/// Discrete-event simulation of the renderer over a priority queue of
/// arrivals and timeouts.
pub fn reference_sync(packets: &[StreamPacket], policy: &SyncPolicy) -> (Vec<RenderDecision>, SyncStats) {
    let wait = policy.out_of_order_wait_ms * 1000;
    let lag_frames = |from: u32, to: u32| u64::from(to - from) * 1000 >= policy.max_lag_ms * u64::from(policy.capture_fps);

    let mut queue: BinaryHeap<Reverse<(u64, Event)>> = packets
        .iter()
        .enumerate()
        .map(|(k, p)| Reverse((p.arrival_time_us, Event::Arrival(k))))
        .collect();
    let mut open: BTreeMap<u32, Open> = BTreeMap::new();
    let mut seen: HashSet<u32> = HashSet::new();
    let mut next_unsettled = 0u32;
    let mut on_screen: Option<u32> = None;
    let mut first_frame: Option<u32> = None;
    let mut moved_at = 0u64;
    let mut stats = SyncStats::default();
    let mut latency_us = 0u64;
    let mut log = Vec::new();

    let deadline = |o: &Open, moved_at: u64| (o.first_us + wait).max(moved_at);

    while let Some(Reverse((now, event))) = queue.pop() {
        match event {
            Event::Arrival(k) => {
                let p = &packets[k];
                let n = p.frame_number;
                let new = seen.insert(n);
                if new {
                    stats.frames += 1;
                    first_frame.get_or_insert(n);
                }
                if n < next_unsettled {
                    if new {
                        stats.superseded += 1;
                    }
                    continue;
                }
                let o = open.entry(n).or_insert(Open {
                    first_us: now,
                    send_us: p.send_time_us,
                    depth: false,
                    color: false,
                });
                match p.channel {
                    Channel::Depth => o.depth = true,
                    Channel::Color => o.color = true,
                }
            }
            Event::Timeout(n) => {
                let Some((&head, o)) = open.iter().next() else { continue };
                if head != n || deadline(o, moved_at) != now {
                    continue;
                }
                open.remove(&n);
                stats.skipped += 1;
                log.push(RenderDecision { time_us: now, action: Action::Skip(n) });
                on_screen = Some(n);
                next_unsettled = n + 1;
                moved_at = now;
            }
        }

        // render complete heads, then consider a jump, until neither applies
        loop {
            if let Some((&head, o)) = open.iter().next() {
                if o.depth && o.color {
                    latency_us += now - o.send_us;
                    open.remove(&head);
                    stats.rendered += 1;
                    log.push(RenderDecision { time_us: now, action: Action::Render(head) });
                    on_screen = Some(head);
                    next_unsettled = head + 1;
                    moved_at = now;
                    continue;
                }
            }
            let Some(reference) = on_screen.or(first_frame) else { break };
            let newest_complete = open.iter().filter(|(_, o)| o.depth && o.color).map(|(&n, _)| n).max();
            match newest_complete {
                Some(target) if target > reference && lag_frames(reference, target) => {
                    let dropped: Vec<u32> = open.keys().copied().filter(|&n| n < target).collect();
                    stats.superseded += dropped.len() as u64;
                    for n in dropped {
                        open.remove(&n);
                    }
                    latency_us += now - open[&target].send_us;
                    open.remove(&target);
                    stats.jumps += 1;
                    log.push(RenderDecision { time_us: now, action: Action::JumpTo(target) });
                    on_screen = Some(target);
                    next_unsettled = target + 1;
                    moved_at = now;
                }
                _ => break,
            }
        }

        if let Some((&head, o)) = open.iter().next() {
            queue.push(Reverse((deadline(o, moved_at), Event::Timeout(head))));
        }
    }

    let shown = stats.rendered + stats.jumps;
    if shown > 0 {
        stats.mean_render_latency_ms = latency_us as f64 / shown as f64 / 1000.0;
    }
    (log, stats)
}

/// Random arrival-ordered trace: frames `0, step, 2·step, …` with per-half
/// loss and delay, plus occasional long stalls.
pub fn random_trace(seed: u64, frames: u32) -> Vec<StreamPacket> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = rng.random_range(1..=3u32);
    let loss = rng.random_range(0.0..0.3);
    let mut packets = Vec::new();
    for k in 0..frames {
        let n = k * step;
        let send = u64::from(n) * 33_333;
        for channel in [Channel::Depth, Channel::Color] {
            if rng.random::<f64>() < loss {
                continue;
            }
            let mut delay = rng.random_range(0..120_000u64);
            if rng.random::<f64>() < 0.05 {
                delay += rng.random_range(100_000..400_000u64);
            }
            packets.push(StreamPacket::new(channel, n, send, send + delay).unwrap());
        }
    }
    packets.sort_by_key(|p| p.arrival_time_us);
    packets
}

// ---------------------------------------------------------------- mesh

fn distance(a: &nalgebra::Vector3<f64>, b: &nalgebra::Vector3<f64>) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt()
}

/// Triangles the fixed-diagonal quad split should emit: both halves of every
/// quad whose three corners are valid and pairwise under 0.1 m.
pub fn topology_oracle(mesh: &GridMesh) -> BTreeSet<[u32; 3]> {
    let grid = mesh.grid();
    let (p, v) = (mesh.positions(), mesh.valid());
    let mut out = BTreeSet::new();
    for i in 0..grid.rows - 1 {
        for j in 0..grid.cols - 1 {
            let tl = i * grid.cols + j;
            let (tr, bl, br) = (tl + 1, tl + grid.cols, tl + grid.cols + 1);
            for tri in [[tl, bl, br], [tl, br, tr]] {
                let ok = tri.iter().all(|&k| v[k])
                    && distance(&p[tri[0]], &p[tri[1]]) < 0.1
                    && distance(&p[tri[1]], &p[tri[2]]) < 0.1
                    && distance(&p[tri[2]], &p[tri[0]]) < 0.1;
                if ok {
                    out.insert(tri.map(|k| k as u32));
                }
            }
        }
    }
    out
}

/// Triangles of `candidates` whose edges are all under 0.1 m in `mesh`.
pub fn edge_check_oracle(mesh: &GridMesh, candidates: &[[u32; 3]]) -> BTreeSet<[u32; 3]> {
    let p = mesh.positions();
    candidates
        .iter()
        .filter(|t| (0..3).all(|e| distance(&p[t[e] as usize], &p[t[(e + 1) % 3] as usize]) < 0.1))
        .copied()
        .collect()
}

/// Valid vertices among the eight around `(i, j)` lying under 0.1 m away.
pub fn neighbor_count_oracle(mesh: &GridMesh, i: usize, j: usize) -> usize {
    let grid = mesh.grid();
    let k = i * grid.cols + j;
    if !mesh.valid()[k] {
        return 0;
    }
    let mut count = 0;
    for ni in i.saturating_sub(1)..=(i + 1).min(grid.rows - 1) {
        for nj in j.saturating_sub(1)..=(j + 1).min(grid.cols - 1) {
            let n = ni * grid.cols + nj;
            if n != k && mesh.valid()[n] && distance(&mesh.positions()[k], &mesh.positions()[n]) < 0.1 {
                count += 1;
            }
        }
    }
    count
}

// ---------------------------------------------------------------- projection

/// Rational radial plus tangential distortion, written out term by term.
pub fn reference_distort(x: f64, y: f64, d: &DistortionModel) -> (f64, f64) {
    let r2 = x * x + y * y;
    let radial = (1.0 + d.k1 * r2 + d.k2 * r2.powi(2) + d.k3 * r2.powi(3))
        / (1.0 + d.k4 * r2 + d.k5 * r2.powi(2) + d.k6 * r2.powi(3));
    let xx = x * radial + 2.0 * d.p1 * x * y + d.p2 * (r2 + 2.0 * x * x);
    let yy = y * radial + d.p1 * (r2 + 2.0 * y * y) + 2.0 * d.p2 * x * y;
    (xx, yy)
}

pub fn random_distortion(rng: &mut impl Rng) -> DistortionModel {
    DistortionModel {
        k1: rng.random_range(-0.5..0.5),
        k2: rng.random_range(-0.2..0.2),
        k3: rng.random_range(-0.05..0.05),
        k4: rng.random_range(-0.2..0.2),
        k5: rng.random_range(-0.05..0.05),
        k6: rng.random_range(-0.01..0.01),
        p1: rng.random_range(-0.01..0.01),
        p2: rng.random_range(-0.01..0.01),
    }
}
