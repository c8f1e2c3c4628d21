//! Physiological data model, test protocol constants, session file ingestion
//! and validity screening.

use thiserror::Error;

/// First stage of the incremental protocol, km/h.
pub const PROTOCOL_START_SPEED: f64 = 9.0;
/// Speed increment per stage below [`EARLY_PHASE_TOP`], km/h.
pub const EARLY_INCREMENT: f64 = 1.5;
/// Speed increment per stage from 14.5 km/h on, km/h.
pub const LATE_INCREMENT: f64 = 1.0;
/// Last stage of the 1.5 km/h phase, km/h.
pub const EARLY_PHASE_TOP: f64 = 13.5;
/// Minimum peak treadmill speed for a session to enter the cohort, km/h.
pub const MIN_VALID_PTS: f64 = 14.5;
/// Minimum number of lactate measurements for a valid session.
pub const MIN_LACTATE_POINTS: usize = 5;

const SPEED_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("insufficient peak treadmill speed {0} km/h (minimum 14.5)")]
    InsufficientPts(f64),
    #[error("insufficient lactate points: {0} (minimum 5)")]
    InsufficientLactatePoints(usize),
}

/// One completed stage of an incremental treadmill test.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// Treadmill speed, km/h.
    pub speed: f64,
    /// Capillary blood lactate at stage end, mmol/L. `None` when no sample
    /// was taken (aborted or skipped measurement).
    pub lactate: Option<f64>,
    /// Heart rate at stage end, beats/min.
    pub hr_end: f64,
    /// Heart rate after one minute of recovery, beats/min. May exceed
    /// `hr_end`; such anomalies are kept.
    pub hrr_1min: f64,
    /// Respiratory perceived exertion, Borg 0-10.
    pub rpe_respiratory: f64,
    /// Muscular perceived exertion, Borg 0-10.
    pub rpe_muscular: f64,
}

impl Stage {
    fn check(&self) -> Result<(), String> {
        if !(self.speed > 0.0) {
            return Err(format!("stage speed must be positive, got {}", self.speed));
        }
        if let Some(l) = self.lactate {
            if !(l >= 0.0) {
                return Err(format!("lactate must be non-negative, got {l}"));
            }
        }
        for (name, v) in [
            ("rpe_resp", self.rpe_respiratory),
            ("rpe_musc", self.rpe_muscular),
        ] {
            if !(0.0..=10.0).contains(&v) {
                return Err(format!("{name} outside Borg 0-10 scale: {v}"));
            }
        }
        Ok(())
    }

    /// Mean of the two perceived-exertion channels; the single RPEevo value
    /// used for modelling.
    pub fn rpe_mean(&self) -> f64 {
        0.5 * (self.rpe_respiratory + self.rpe_muscular)
    }
}

/// One athlete's raw incremental test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSession {
    pub athlete_id: String,
    pub stages: Vec<Stage>,
    /// Free-text notes recorded during the test.
    pub incidences: String,
}

impl TestSession {
    /// Builds a session, enforcing that stage speeds follow the protocol
    /// ladder from 9 km/h without gaps.
    pub fn new(
        athlete_id: impl Into<String>,
        stages: Vec<Stage>,
        incidences: impl Into<String>,
    ) -> Result<Self, DomainError> {
        let athlete_id = athlete_id.into();
        if stages.is_empty() {
            return Err(DomainError::Protocol(format!(
                "session {athlete_id} has no stages"
            )));
        }
        for s in &stages {
            s.check()
                .map_err(|msg| DomainError::Protocol(format!("{athlete_id}: {msg}")))?;
        }
        let last = stages.last().unwrap().speed;
        let ladder = protocol_speeds(last)?;
        if ladder.len() != stages.len()
            || stages
                .iter()
                .zip(&ladder)
                .any(|(s, &v)| (s.speed - v).abs() > SPEED_EPS)
        {
            return Err(DomainError::Protocol(format!(
                "{athlete_id}: stage speeds do not follow the protocol ladder"
            )));
        }
        Ok(Self {
            athlete_id,
            stages,
            incidences: incidences.into(),
        })
    }

    /// Peak treadmill speed: the speed of the last completed stage, km/h.
    pub fn pts(&self) -> f64 {
        self.stages.last().map(|s| s.speed).unwrap_or(0.0)
    }

    /// Number of stages carrying a lactate measurement.
    pub fn n_lactate_points(&self) -> usize {
        self.stages.iter().filter(|s| s.lactate.is_some()).count()
    }
}

/// A session that passed the validity screen (PTS >= 14.5 km/h, at least 5
/// lactate points).
#[derive(Debug, Clone)]
pub struct ValidatedSession {
    session: TestSession,
    n_lactate_points: usize,
}

impl ValidatedSession {
    pub fn session(&self) -> &TestSession {
        &self.session
    }

    pub fn n_lactate_points(&self) -> usize {
        self.n_lactate_points
    }

    pub fn athlete_id(&self) -> &str {
        &self.session.athlete_id
    }

    pub fn pts(&self) -> f64 {
        self.session.pts()
    }

    pub fn stages(&self) -> &[Stage] {
        &self.session.stages
    }
}

/// Speeds of the incremental protocol up to `max_speed`: 9, 10.5, 12, 13.5,
/// then 14.5, 15.5, ... km/h.
pub fn protocol_speeds(max_speed: f64) -> Result<Vec<f64>, DomainError> {
    if max_speed < PROTOCOL_START_SPEED - SPEED_EPS {
        return Err(DomainError::Protocol(format!(
            "max speed {max_speed} below protocol start {PROTOCOL_START_SPEED}"
        )));
    }
    let mut speeds = Vec::new();
    let mut v = PROTOCOL_START_SPEED;
    while v <= max_speed + SPEED_EPS {
        speeds.push(v);
        v += if v < EARLY_PHASE_TOP - SPEED_EPS {
            EARLY_INCREMENT
        } else {
            LATE_INCREMENT
        };
    }
    Ok(speeds)
}

/// Validity screen: PTS >= 14.5 km/h and at least 5 lactate measurements.
pub fn validate(session: TestSession) -> Result<ValidatedSession, DomainError> {
    let pts = session.pts();
    if pts < MIN_VALID_PTS - SPEED_EPS {
        return Err(DomainError::InsufficientPts(pts));
    }
    let n = session.n_lactate_points();
    if n < MIN_LACTATE_POINTS {
        return Err(DomainError::InsufficientLactatePoints(n));
    }
    Ok(ValidatedSession {
        session,
        n_lactate_points: n,
    })
}

pub const SESSION_HEADER: &str = "athlete_id,speed,lactate,hr_end,hrr_1min,rpe_resp,rpe_musc";
pub const SESSION_HEADER_NO_LACTATE: &str = "athlete_id,speed,hr_end,hrr_1min,rpe_resp,rpe_musc";

fn parse_f64(field: &str, name: &str, line: usize) -> Result<f64, DomainError> {
    field.trim().parse::<f64>().map_err(|_| DomainError::Parse {
        line,
        msg: format!("invalid {name} value {field:?}"),
    })
}

/// Parses a session file. Lines beginning with `#` are ignored. Accepts both
/// the full format (with a lactate column, `-` for missing values) and the
/// feature-only deployment format without a lactate column.
pub fn parse_sessions(content: &str) -> Result<Vec<TestSession>, DomainError> {
    let mut lines = content
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty());

    let (hline, header) = lines.next().ok_or(DomainError::Parse {
        line: 1,
        msg: "empty session file".into(),
    })?;
    let has_lactate = match header.trim() {
        SESSION_HEADER => true,
        SESSION_HEADER_NO_LACTATE => false,
        other => {
            return Err(DomainError::Parse {
                line: hline,
                msg: format!("unrecognized header {other:?}"),
            })
        }
    };
    let n_cols = if has_lactate { 7 } else { 6 };

    let mut sessions: Vec<TestSession> = Vec::new();
    let mut current_id: Option<String> = None;
    let mut stages: Vec<Stage> = Vec::new();

    fn flush(
        sessions: &mut Vec<TestSession>,
        id: Option<String>,
        stages: &mut Vec<Stage>,
    ) -> Result<(), DomainError> {
        if let Some(id) = id {
            sessions.push(TestSession::new(id, std::mem::take(stages), "")?);
        }
        Ok(())
    }

    for (line, raw) in lines {
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != n_cols {
            return Err(DomainError::Parse {
                line,
                msg: format!("expected {n_cols} fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if current_id.as_deref() != Some(id) {
            flush(&mut sessions, current_id.take(), &mut stages)?;
            if sessions.iter().any(|s| s.athlete_id == id) {
                return Err(DomainError::Parse {
                    line,
                    msg: format!("athlete {id:?} appears in non-contiguous blocks"),
                });
            }
            current_id = Some(id.to_string());
        }
        let mut col = 1;
        let speed = parse_f64(fields[col], "speed", line)?;
        col += 1;
        let lactate = if has_lactate {
            let f = fields[col].trim();
            col += 1;
            if f == "-" {
                None
            } else {
                Some(parse_f64(f, "lactate", line)?)
            }
        } else {
            None
        };
        let hr_end = parse_f64(fields[col], "hr_end", line)?;
        let hrr_1min = parse_f64(fields[col + 1], "hrr_1min", line)?;
        let rpe_respiratory = parse_f64(fields[col + 2], "rpe_resp", line)?;
        let rpe_muscular = parse_f64(fields[col + 3], "rpe_musc", line)?;
        stages.push(Stage {
            speed,
            lactate,
            hr_end,
            hrr_1min,
            rpe_respiratory,
            rpe_muscular,
        });
    }
    flush(&mut sessions, current_id.take(), &mut stages)?;
    Ok(sessions)
}

/// Serializes sessions in the full file format. `parse_sessions` followed by
/// `serialize_sessions` is byte-stable on well-formed inputs.
pub fn serialize_sessions(sessions: &[TestSession]) -> String {
    let mut out = String::new();
    out.push_str(SESSION_HEADER);
    out.push('\n');
    for s in sessions {
        for st in &s.stages {
            let lac = match st.lactate {
                Some(l) => format!("{l}"),
                None => "-".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.athlete_id, st.speed, lac, st.hr_end, st.hrr_1min, st.rpe_respiratory, st.rpe_muscular
            ));
        }
    }
    out
}
