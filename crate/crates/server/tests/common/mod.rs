#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trolley_core::record::{quantize, DecisionRecord, SubjectRole};
use trolley_core::scenario::{
    validate_scenario, ActorSpec, Corridor, Gender, Mode, Pose, Scenario, Side, Simulation, VictimAttributes,
};
use trolley_core::sim::{Barrier, Control, Hit, Outcome, SimParams, VehicleState};
use trolley_core::Vec2;
use trolley_server::catalog::ScenarioFile;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn load(name: &str) -> ScenarioFile {
    ScenarioFile::load(&fixture(name)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.gen_range(0..xs.len())]
}

fn word(rng: &mut ChaCha8Rng, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.gen_range(len);
    (0..n).map(|_| *pick(rng, alphabet) as char).collect()
}

/// A random value with a short decimal form or a full-precision one.
fn num(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let x = rng.gen_range(lo..hi);
    if rng.gen_bool(0.5) {
        (x * 4.0).round() / 4.0
    } else {
        x
    }
}

/// A scenario that passes validation.
pub fn random_scenario(rng: &mut ChaCha8Rng, test_num: u32) -> Scenario {
    loop {
        let x_min = num(rng, -20.0, -3.0);
        let x_max = num(rng, 3.0, 20.0);
        let y_end = num(rng, 40.0, 500.0);
        let mut groups = BTreeMap::new();
        for _ in 0..rng.gen_range(1..=3) {
            groups.insert(rng.gen_range(0..6u32), if rng.gen_bool(0.5) { Side::Left } else { Side::Right });
        }
        let ids: Vec<u32> = groups.keys().copied().collect();
        let mut actors = Vec::new();
        for i in 0..rng.gen_range(0..7) {
            let traits: Vec<String> = ["child", "elderly", "pregnant", "doctor"]
                .iter()
                .filter(|_| rng.gen_bool(0.2))
                .map(|t| t.to_string())
                .collect();
            let mut a = ActorSpec::pedestrian(
                format!("p{i}"),
                Vec2::new(num(rng, x_min, x_max), num(rng, 0.0, y_end)),
                VictimAttributes {
                    age: rng.gen_range(0..100),
                    gender: *pick(rng, &[Gender::Female, Gender::Male, Gender::Unspecified]),
                    group_id: *pick(rng, &ids),
                    traits,
                },
            );
            if rng.gen_bool(0.3) {
                a.radius = num(rng, 0.1, 2.0);
            }
            actors.push(a);
        }
        for i in 0..rng.gen_range(0..3) {
            let pos = Vec2::new(num(rng, x_min, x_max), num(rng, 0.0, y_end));
            let label = word(rng, b"abcxyz_.", 1..=6);
            let a = if rng.gen_bool(0.5) {
                ActorSpec::vehicle(format!("v{i}"), pos, label)
            } else {
                ActorSpec::prop(format!("o{i}"), pos, label)
            };
            actors.push(a.with_radius(num(rng, 0.1, 3.0)));
        }
        let s = Scenario {
            test_num,
            name: word(rng, b"abc XYZ_-#09", 0..=14),
            spawn: Pose {
                position: Vec2::new(num(rng, x_min + 1.25, x_max - 1.25), num(rng, -10.0, y_end - 5.0)),
                heading_deg: num(rng, -40.0, 40.0),
                speed: num(rng, 0.0, 30.0),
            },
            target: Some(Vec2::new(num(rng, x_min, x_max), num(rng, 0.0, y_end))),
            corridor: Corridor { x_min, x_max, y_end },
            groups,
            actors,
        };
        if validate_scenario(&s).iter().all(|d| !d.is_error()) {
            return s;
        }
    }
}

pub fn random_simulation(rng: &mut ChaCha8Rng) -> Simulation {
    let n = rng.gen_range(1..=4);
    let mut nums: Vec<u32> = Vec::new();
    while nums.len() < n {
        let k = rng.gen_range(0..1000);
        if !nums.contains(&k) {
            nums.push(k);
        }
    }
    Simulation {
        scenarios: nums.into_iter().map(|k| random_scenario(rng, k)).collect(),
        mode: Mode::All,
    }
}

pub fn random_record(rng: &mut ChaCha8Rng) -> DecisionRecord {
    let group = rng.gen_bool(0.8).then(|| rng.gen_range(0..20u32));
    DecisionRecord {
        session_id: word(rng, b"abcdef0123456789-_", 1..=16),
        test_num: rng.gen(),
        outcome: group.map_or(Outcome::Timeout, Outcome::Group),
        group_member_names: if group.is_some() {
            word(rng, b"abz019:|,_-", 1..=40)
        } else {
            String::new()
        },
        impact_speed: quantize(rng.gen_range(0.0..40.0)),
        tick: rng.gen_range(0..=1800),
        subject_role: if rng.gen_bool(0.5) { SubjectRole::Human } else { SubjectRole::Agent },
        scenario_name: word(rng, b"abc XYZ_-#09", 0..=20),
    }
}

pub fn random_control(rng: &mut ChaCha8Rng) -> Control {
    *pick(rng, &Control::ALL)
}

/// The update equations applied by hand: speed, then heading, then position.
pub fn hand_step(x: &mut f64, y: &mut f64, v: &mut f64, h: &mut f64, h_ref: f64, u: f64, p: &SimParams) {
    *v = (*v + p.a_auto * p.dt).min(p.v_max);
    *h = (*h + u * p.omega_max * p.dt).clamp(h_ref - p.theta_max, h_ref + p.theta_max);
    *x += *v * p.dt * libm::sin(*h);
    *y += *v * p.dt * libm::cos(*h);
}

/// Every actor in contact, nearest first then by name; otherwise the most
/// deeply penetrated wall, left before right before far on ties.
pub fn brute_force_hit(state: &VehicleState, s: &Scenario, p: &SimParams) -> Option<Hit> {
    let r = p.vehicle_radius;
    let mut touching: Vec<(f64, &str, usize)> = Vec::new();
    for (i, a) in s.actors.iter().enumerate() {
        let dx = state.position.x - a.position.x;
        let dy = state.position.y - a.position.y;
        let d = libm::sqrt(dx * dx + dy * dy);
        if d <= r + a.radius {
            touching.push((d, &a.name, i));
        }
    }
    touching.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    if let Some(&(_, _, i)) = touching.first() {
        return Some(Hit::Actor(i));
    }
    let (x, y, c) = (state.position.x, state.position.y, &s.corridor);
    let mut walls = Vec::new();
    if x - r < c.x_min {
        walls.push((c.x_min - (x - r), 0, Barrier::Left));
    }
    if x + r > c.x_max {
        walls.push(((x + r) - c.x_max, 1, Barrier::Right));
    }
    if y + r >= c.y_end {
        walls.push(((y + r) - c.y_end, 2, Barrier::Far));
    }
    walls.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    walls.first().map(|w| Hit::Barrier(w.2))
}
