//! Demonstration files: line-delimited transitions with an env header.
//!
//! ```text
//! demo env=grid hash=<sha256 of the env fingerprint> transitions=7
//! 0 7 2 6 0
//! 1 6 2 5 0
//! ...
//! ```
//!
//! Loading re-derives every transition from the environment, so a file can
//! only load against the exact environment it was recorded in, and the
//! text form round-trips bit-exactly.

use std::path::Path;

use super::{env_hash, make_expert_demo, Env, EnvError, ExpertDemo};

/// Canonical text form of a demo.
pub fn demo_to_string(env: &impl Env, demo: &ExpertDemo) -> String {
    let mut out = format!(
        "demo env={} hash={} transitions={}\n",
        env.name(),
        env_hash(env),
        demo.trajectory.len()
    );
    for (i, t) in demo.trajectory.transitions.iter().enumerate() {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            i,
            t.s.id,
            t.a.id,
            t.s_next.id,
            u8::from(t.terminal)
        ));
    }
    out
}

pub fn save_demo(env: &impl Env, demo: &ExpertDemo, path: &Path) -> Result<(), EnvError> {
    std::fs::write(path, demo_to_string(env, demo))?;
    Ok(())
}

pub fn load_demo(env: &impl Env, path: &Path) -> Result<ExpertDemo, EnvError> {
    demo_from_lines(env, &std::fs::read_to_string(path)?)
}

/// Parses and validates the text form against `env`.
pub fn demo_from_lines(env: &impl Env, text: &str) -> Result<ExpertDemo, EnvError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(EnvError::DemoSchema {
        line: 1,
        msg: "empty file".to_string(),
    })?;
    let expected_header_prefix = format!("demo env={} hash={}", env.name(), env_hash(env));
    if !header.starts_with(&expected_header_prefix) {
        return Err(EnvError::EnvMismatch {
            expected: expected_header_prefix,
            found: header.to_string(),
        });
    }

    struct Record {
        line: usize,
        s: usize,
        a: usize,
        s_next: usize,
        terminal: bool,
    }
    let mut records: Vec<Record> = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(EnvError::DemoSchema {
                line: line_no,
                msg: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<usize, EnvError> {
            s.parse().map_err(|_| EnvError::DemoSchema {
                line: line_no,
                msg: format!("invalid integer {s:?}"),
            })
        };
        let step = parse(fields[0])?;
        if step != records.len() {
            return Err(EnvError::DemoSchema {
                line: line_no,
                msg: format!("step index {step} out of order"),
            });
        }
        records.push(Record {
            line: line_no,
            s: parse(fields[1])?,
            a: parse(fields[2])?,
            s_next: parse(fields[3])?,
            terminal: match fields[4] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(EnvError::DemoSchema {
                        line: line_no,
                        msg: format!("terminal flag must be 0 or 1, found {other:?}"),
                    })
                }
            },
        });
    }
    if records.is_empty() {
        return Err(EnvError::DemoSchema {
            line: 1,
            msg: "demo has no transitions".to_string(),
        });
    }
    for w in records.windows(2) {
        if w[0].s_next != w[1].s {
            return Err(EnvError::ChainBroken {
                line: w[1].line,
                found: w[0].s_next,
                expected: w[1].s,
            });
        }
    }

    let s0 = env.state(records[0].s)?;
    let route: Vec<usize> = records.iter().map(|r| r.a).collect();
    let demo = make_expert_demo(env, &route, &s0)?;
    for (rec, t) in records.iter().zip(&demo.trajectory.transitions) {
        if rec.s_next != t.s_next.id || rec.terminal != t.terminal {
            return Err(EnvError::DemoSchema {
                line: rec.line,
                msg: format!(
                    "transition does not match environment dynamics (expected next={} terminal={})",
                    t.s_next.id,
                    u8::from(t.terminal)
                ),
            });
        }
    }
    Ok(demo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{fig1_expert_route, fig1_expert_start, fig1_world};

    fn fig1_demo() -> (crate::env::GridWorld, ExpertDemo) {
        let env = fig1_world();
        let demo = make_expert_demo(
            &env,
            &fig1_expert_route(),
            &env.state(fig1_expert_start()).unwrap(),
        )
        .unwrap();
        (env, demo)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (env, demo) = fig1_demo();
        let text = demo_to_string(&env, &demo);
        let loaded = demo_from_lines(&env, &text).unwrap();
        assert_eq!(loaded, demo);
        assert_eq!(demo_to_string(&env, &loaded), text);
    }

    #[test]
    fn save_and_load_through_files() {
        let (env, demo) = fig1_demo();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expert.demo");
        save_demo(&env, &demo, &path).unwrap();
        let loaded = load_demo(&env, &path).unwrap();
        assert_eq!(loaded, demo);
    }

    #[test]
    fn broken_chaining_is_rejected() {
        let (env, demo) = fig1_demo();
        let text = demo_to_string(&env, &demo);
        // Corrupt the second record's state id.
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[2] = "1 9 2 5 0".to_string();
        let err = demo_from_lines(&env, &lines.join("\n")).unwrap_err();
        assert!(matches!(err, EnvError::ChainBroken { line: 3, .. }));
    }

    #[test]
    fn wrong_env_is_rejected() {
        let (_, demo) = fig1_demo();
        let env = fig1_world();
        let text = demo_to_string(&env, &demo);
        let chain = crate::env::chain_world();
        assert!(matches!(
            demo_from_lines(&chain, &text),
            Err(EnvError::EnvMismatch { .. })
        ));
    }

    #[test]
    fn dynamics_mismatch_is_rejected() {
        let (env, demo) = fig1_demo();
        let text = demo_to_string(&env, &demo);
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        // Claim a mid-route transition is terminal; chaining stays intact.
        lines[3] = "2 5 2 4 1".to_string();
        let err = demo_from_lines(&env, &lines.join("\n")).unwrap_err();
        assert!(matches!(err, EnvError::DemoSchema { .. }));
    }
}
