//! Interactive teaching sessions: a teacher steers the simulated robot one
//! symbolic action at a time and the finished session becomes a
//! demonstration trace in the same format the oracle writes.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actions::{apply, ActionWire, Interaction, RejectReason, Status, SymbolicAction};
use crate::derive_seed;
use crate::domains::{instantiate_goal, sample_scene, DomainCatalog, DomainError};
use crate::oracle::{group_of, DemonstrationTrace, OracleError, Provenance, TraceRecord};
use crate::policy::Policy;
use crate::worldsim::{goal_check, GoalSpec, WorldState};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("malformed action: {0}")]
    MalformedAction(String),
    #[error("session is {0}; no further actions are accepted")]
    Conflict(SessionStatus),
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
    #[error("no policy is loaded for domain `{0}`")]
    NoPolicy(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Trace(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Active,
    GoalReached,
    Abandoned,
}

impl std::fmt::Display for SessionStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SessionStatus::Active => "active",
            SessionStatus::GoalReached => "goal_reached",
            SessionStatus::Abandoned => "abandoned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Advisory countdown; sessions are never closed when it runs out.
    pub timer_secs: u64,
    /// Suggestions returned per request.
    pub suggestions: usize,
    /// Seed of the session id stream.
    pub seed: u64,
    /// Directory finished traces are written to; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig { timer_secs: 600, suggestions: 3, seed: 0, out_dir: None }
    }
}

/// Body of a create request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub domain: String,
    pub scene_seed: u64,
    pub goal_id: String,
}

/// One teaching session. The action log holds applied actions only and
/// replays to `state` without noise.
#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub domain: String,
    pub scene_seed: u64,
    pub goal_id: String,
    pub goal: GoalSpec,
    pub initial: WorldState,
    pub state: WorldState,
    pub log: Vec<SymbolicAction>,
    /// States before each logged action.
    pub history: Vec<WorldState>,
    pub rejected: usize,
    pub started: SystemTime,
    pub status: SessionStatus,
    pub finished: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectView {
    pub id: u32,
    pub name: String,
    pub class: String,
    /// Floor coordinates of the object center.
    pub xy: [f64; 2],
    pub tier: u32,
    /// Predicates currently true.
    pub states: Vec<String>,
    pub tool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationView {
    pub relation: String,
    pub subject: String,
    pub object: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimerView {
    pub limit_secs: u64,
    pub elapsed_secs: u64,
    pub expired: bool,
}

/// Structured scene description a client renders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub id: String,
    pub domain: String,
    pub scene_seed: u64,
    pub goal_id: String,
    pub goal_text: String,
    pub status: SessionStatus,
    pub goal_reached: bool,
    pub step: usize,
    pub robot: String,
    pub robot_elevation: u32,
    pub holding: Option<String>,
    pub room: [f64; 2],
    pub objects: Vec<ObjectView>,
    pub relations: Vec<RelationView>,
    pub log: Vec<ActionWire>,
    pub timer: TimerView,
}

/// Result of one submitted action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub status: Status,
    pub reason: Option<RejectReason>,
    pub message: Option<String>,
    pub goal_reached: bool,
    pub view: StateView,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub action: ActionWire,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finished {
    pub path: Option<PathBuf>,
    pub trace: TraceRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassView {
    pub token: String,
    pub category: String,
    pub affordances: Vec<String>,
    pub states: Vec<String>,
    pub tool: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionView {
    pub name: String,
    pub arity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalView {
    pub id: String,
    pub text: String,
}

/// What a client needs to fill its dropdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogView {
    pub name: String,
    pub hash: String,
    pub classes: Vec<ClassView>,
    pub interactions: Vec<InteractionView>,
    pub goals: Vec<GoalView>,
}

impl CatalogView {
    pub fn new(catalog: &DomainCatalog) -> Self {
        CatalogView {
            name: catalog.name.clone(),
            hash: catalog.hash(),
            classes: catalog
                .classes
                .iter()
                .map(|c| ClassView {
                    token: c.token.clone(),
                    category: c.category.clone(),
                    affordances: c.affordances.iter().map(|a| a.name().to_string()).collect(),
                    states: c.states.clone(),
                    tool: catalog.is_tool(&c.token),
                })
                .collect(),
            interactions: Interaction::by_name().into_iter().map(|i| InteractionView { name: i.name().into(), arity: i.arity() }).collect(),
            goals: catalog.goals.iter().map(|g| GoalView { id: g.id.clone(), text: g.text.clone() }).collect(),
        }
    }
}

/// Teacher-facing explanation of a rejection.
pub fn reject_message(reason: RejectReason) -> &'static str {
    match reason {
        RejectReason::ObjectUnreachable => "The robot is not near that object or cannot reach its height. Move to it first.",
        RejectReason::ObjectEnclosed => "That object is inside a closed container. Open the container first.",
        RejectReason::GripperBusy => "The robot has one gripper and it is already holding something. Drop or place it first.",
        RejectReason::GripperEmpty => "The robot is not holding the object this action needs.",
        RejectReason::NotAffordance => "That object does not support this action.",
        RejectReason::ElevationMismatch => "The robot is at the wrong elevation for this action.",
        RejectReason::ArityMismatch => "This action takes a different number of objects.",
    }
}

impl Session {
    fn elapsed(&self) -> Duration {
        self.started.elapsed().unwrap_or_default()
    }

    pub fn view(&self, catalog: &DomainCatalog, config: &SessionConfig) -> StateView {
        let s = &self.state;
        let name = |id| s.objects.get(&id).map_or_else(String::new, |o| o.name.clone());
        let preds = &s.table().predicates;
        let objects = s
            .objects
            .values()
            .map(|o| ObjectView {
                id: o.id,
                name: o.name.clone(),
                class: o.class.clone(),
                xy: [o.position[0], o.position[1]],
                tier: o.height_level,
                states: preds.iter().zip(&o.state).filter(|(_, &on)| on).map(|(p, _)| p.clone()).collect(),
                tool: catalog.is_tool(&o.class),
            })
            .collect();
        let relations =
            s.edges.iter().map(|e| RelationView { relation: e.kind.name().into(), subject: name(e.subject), object: name(e.object) }).collect();
        let log = self.log.iter().zip(&self.history).map(|(a, st)| a.to_wire(st)).collect();
        let elapsed = self.elapsed().as_secs();
        StateView {
            id: self.id.clone(),
            domain: self.domain.clone(),
            scene_seed: self.scene_seed,
            goal_id: self.goal_id.clone(),
            goal_text: self.goal.text.clone(),
            status: self.status,
            goal_reached: self.status == SessionStatus::GoalReached,
            step: self.log.len(),
            robot: name(s.robot),
            robot_elevation: s.robot_elevation,
            holding: s.held().map(name),
            room: catalog.layout.room,
            objects,
            relations,
            log,
            timer: TimerView { limit_secs: config.timer_secs, elapsed_secs: elapsed, expired: elapsed >= config.timer_secs },
        }
    }

    /// Resolves and applies one wire action without noise.
    pub fn submit(&mut self, wire: &ActionWire) -> Result<(Status, Option<RejectReason>), SessionError> {
        if self.status != SessionStatus::Active || self.finished {
            return Err(SessionError::Conflict(if self.finished && self.status == SessionStatus::Active {
                SessionStatus::Abandoned
            } else {
                self.status
            }));
        }
        let action = wire.resolve(&self.state).map_err(|e| SessionError::MalformedAction(e.to_string()))?;
        let out = apply(&self.state, &action, 0.0, 0);
        if let Some(reason) = out.reason {
            self.rejected += 1;
            return Ok((out.status, Some(reason)));
        }
        self.history.push(std::mem::replace(&mut self.state, out.next_state));
        self.log.push(action);
        if goal_check(&self.state, &self.goal) {
            self.status = SessionStatus::GoalReached;
        }
        Ok((out.status, None))
    }

    /// The session as a trace; `meta` records timing and rejected attempts.
    pub fn to_trace(&self, config: &SessionConfig) -> Result<DemonstrationTrace, SessionError> {
        let mut t = DemonstrationTrace::record(
            &self.domain,
            self.scene_seed,
            &self.goal_id,
            self.goal.clone(),
            group_of(&self.goal_id, self.scene_seed),
            self.initial.clone(),
            self.log.clone(),
            Provenance::HumanUi,
            0,
        )?;
        let elapsed = self.elapsed().as_secs();
        t.meta = serde_json::json!({
            "session": self.id,
            "started_unix": self.started.duration_since(UNIX_EPOCH).unwrap_or_default().as_secs(),
            "elapsed_secs": elapsed,
            "timer_secs": config.timer_secs,
            "over_time": elapsed >= config.timer_secs,
            "rejected_actions": self.rejected,
        });
        Ok(t)
    }
}

/// Concurrent session store. Each session sits behind its own lock, so
/// actions on one session are serialized while sessions stay independent.
pub struct SessionService {
    pub config: SessionConfig,
    catalogs: Mutex<BTreeMap<String, Arc<DomainCatalog>>>,
    policies: BTreeMap<String, Arc<Policy>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl SessionService {
    pub fn new(config: SessionConfig) -> Self {
        SessionService {
            config,
            catalogs: Mutex::new(BTreeMap::new()),
            policies: BTreeMap::new(),
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    /// Registers a catalog under its name, replacing a built-in of the same name.
    pub fn add_catalog(&self, catalog: DomainCatalog) {
        self.catalogs.lock().expect("catalog lock").insert(catalog.name.clone(), Arc::new(catalog));
    }

    /// Enables suggestions for `domain`.
    pub fn add_policy(&mut self, domain: &str, policy: Policy) {
        self.policies.insert(domain.to_string(), Arc::new(policy));
    }

    /// Registered catalog, or the built-in of that name.
    pub fn catalog(&self, domain: &str) -> Result<Arc<DomainCatalog>, SessionError> {
        let mut map = self.catalogs.lock().expect("catalog lock");
        if let Some(c) = map.get(domain) {
            return Ok(c.clone());
        }
        let c = Arc::new(DomainCatalog::builtin(domain)?);
        map.insert(domain.to_string(), c.clone());
        Ok(c)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions.lock().expect("session map lock").get(id).cloned().ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn create(&self, req: &CreateRequest) -> Result<StateView, SessionError> {
        let catalog = self.catalog(&req.domain)?;
        let template = catalog.goal(&req.goal_id).ok_or_else(|| SessionError::UnknownGoal(req.goal_id.clone()))?;
        let initial = sample_scene(&catalog, req.scene_seed)?;
        let goal = instantiate_goal(template, &initial)?;
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("{:016x}", derive_seed(self.config.seed, "session", n));
        let status = if goal_check(&initial, &goal) { SessionStatus::GoalReached } else { SessionStatus::Active };
        let session = Session {
            id: id.clone(),
            domain: catalog.name.clone(),
            scene_seed: req.scene_seed,
            goal_id: req.goal_id.clone(),
            goal,
            state: initial.clone(),
            initial,
            log: Vec::new(),
            history: Vec::new(),
            rejected: 0,
            started: SystemTime::now(),
            status,
            finished: false,
        };
        let view = session.view(&catalog, &self.config);
        self.sessions.lock().expect("session map lock").insert(id, Arc::new(Mutex::new(session)));
        Ok(view)
    }

    pub fn get(&self, id: &str) -> Result<StateView, SessionError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session lock");
        Ok(s.view(&*self.catalog(&s.domain)?, &self.config))
    }

    pub fn submit(&self, id: &str, action: &ActionWire) -> Result<OutcomeView, SessionError> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session lock");
        let (status, reason) = s.submit(action)?;
        let view = s.view(&*self.catalog(&s.domain)?, &self.config);
        Ok(OutcomeView { status, reason, message: reason.map(|r| reject_message(r).to_string()), goal_reached: view.goal_reached, view })
    }

    /// Top actions of the domain's policy for the current state.
    pub fn suggest(&self, id: &str) -> Result<Vec<Suggestion>, SessionError> {
        let s = self.session(id)?;
        let s = s.lock().expect("session lock");
        let policy = self.policies.get(&s.domain).ok_or_else(|| SessionError::NoPolicy(s.domain.clone()))?;
        let steps: Vec<(WorldState, SymbolicAction)> = s.history.iter().cloned().zip(s.log.iter().copied()).collect();
        let history = policy.history_encodings(&steps);
        Ok(policy
            .suggest(&s.state, &s.goal, &history, self.config.suggestions)
            .into_iter()
            .map(|(a, score)| Suggestion { action: a.to_wire(&s.state), score })
            .collect())
    }

    /// Closes the session and writes its trace when an output directory is set.
    pub fn finish(&self, id: &str) -> Result<Finished, SessionError> {
        let s = self.session(id)?;
        let mut s = s.lock().expect("session lock");
        if s.finished {
            return Err(SessionError::Conflict(s.status));
        }
        let trace = s.to_trace(&self.config)?;
        trace.validate()?;
        let path = match &self.config.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let p = dir.join(format!("{}.jsonl", s.id));
                std::fs::write(&p, trace.to_json_line() + "\n")?;
                Some(p)
            }
            None => None,
        };
        s.finished = true;
        if s.status == SessionStatus::Active {
            s.status = SessionStatus::Abandoned;
        }
        Ok(Finished { path, trace: trace.to_record() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{plan, PlannerConfig};
    use crate::worldsim::RelationKind;

    fn service() -> SessionService {
        SessionService::new(SessionConfig::default())
    }

    fn req() -> CreateRequest {
        CreateRequest { domain: "mini-home".into(), scene_seed: 1, goal_id: "cube-in-box".into() }
    }

    #[test]
    fn create_lists_objects_relations_and_goal_text() {
        let svc = service();
        let v = svc.create(&req()).unwrap();
        assert_eq!(v.status, SessionStatus::Active);
        assert!(!v.goal_text.is_empty());
        assert!(v.objects.iter().any(|o| o.name == v.robot));
        assert!(!v.relations.is_empty());
        assert_eq!(v.timer.limit_secs, 600);
        assert_eq!(svc.get(&v.id).unwrap(), v);
    }

    #[test]
    fn move_to_adds_a_near_edge() {
        let svc = service();
        let v = svc.create(&req()).unwrap();
        let target = v.objects.iter().find(|o| o.name != v.robot && !v.relations.iter().any(|r| r.relation == "Near" && r.object == o.name && r.subject == v.robot)).unwrap();
        let out = svc.submit(&v.id, &ActionWire { name: "moveTo".into(), args: vec![target.name.clone()] }).unwrap();
        assert_eq!(out.status, Status::Applied);
        assert!(out.view.relations.iter().any(|r| r.relation == RelationKind::Near.name() && r.subject == v.robot && r.object == target.name));
        assert_eq!(out.view.step, 1);
    }

    #[test]
    fn rejections_and_malformed_actions_are_reported() {
        let svc = service();
        let v = svc.create(&req()).unwrap();
        let out = svc.submit(&v.id, &ActionWire { name: "drop".into(), args: vec![v.robot.clone()] }).unwrap();
        assert_eq!(out.status, Status::Rejected);
        assert!(out.reason.is_some() && out.message.is_some());
        assert_eq!(out.view.step, 0);
        assert!(matches!(svc.submit(&v.id, &ActionWire { name: "fly".into(), args: vec![v.robot.clone()] }), Err(SessionError::MalformedAction(_))));
        assert!(matches!(svc.submit(&v.id, &ActionWire { name: "pick".into(), args: vec!["ghost".into()] }), Err(SessionError::MalformedAction(_))));
        assert!(matches!(svc.get("nope"), Err(SessionError::UnknownSession(_))));
    }

    #[test]
    fn oracle_plan_reaches_the_goal_and_finishes_as_an_equivalent_trace() {
        let dir = tempfile::tempdir().unwrap();
        let svc = SessionService::new(SessionConfig { out_dir: Some(dir.path().into()), ..Default::default() });
        let v = svc.create(&req()).unwrap();
        let c = svc.catalog("mini-home").unwrap();
        let initial = sample_scene(&c, 1).unwrap();
        let goal = instantiate_goal(c.goal("cube-in-box").unwrap(), &initial).unwrap();
        let p = plan(&initial, &goal, &PlannerConfig::default()).unwrap();
        let oracle = DemonstrationTrace::record("mini-home", 1, "cube-in-box", goal, group_of("cube-in-box", 1), initial, p, Provenance::Oracle, 0).unwrap();
        let mut last = None;
        for (s, a) in oracle.steps() {
            last = Some(svc.submit(&v.id, &a.to_wire(&s)).unwrap());
        }
        assert!(last.unwrap().goal_reached);
        let late = svc.submit(&v.id, &ActionWire { name: "moveTo".into(), args: vec![v.robot.clone()] });
        assert!(matches!(late, Err(SessionError::Conflict(SessionStatus::GoalReached))));
        let done = svc.finish(&v.id).unwrap();
        let mut rec = done.trace.clone();
        assert_eq!(rec.provenance, Provenance::HumanUi);
        rec.provenance = Provenance::Oracle;
        rec.meta = serde_json::Value::Null;
        assert_eq!(serde_json::to_string(&rec).unwrap(), oracle.to_json_line());
        let written = std::fs::read_to_string(done.path.unwrap()).unwrap();
        let back: TraceRecord = serde_json::from_str(written.trim()).unwrap();
        DemonstrationTrace::from_record(back, c.table()).unwrap();
        assert!(matches!(svc.finish(&v.id), Err(SessionError::Conflict(_))));
    }

    #[test]
    fn finishing_early_abandons_and_suggestions_need_a_policy() {
        let svc = service();
        let v = svc.create(&req()).unwrap();
        assert!(matches!(svc.suggest(&v.id), Err(SessionError::NoPolicy(_))));
        let done = svc.finish(&v.id).unwrap();
        assert!(!done.trace.success);
        assert_eq!(svc.get(&v.id).unwrap().status, SessionStatus::Abandoned);
        assert!(matches!(svc.submit(&v.id, &ActionWire { name: "moveTo".into(), args: vec![v.robot] }), Err(SessionError::Conflict(SessionStatus::Abandoned))));
    }

    #[test]
    fn suggestions_come_from_the_policy() {
        let mut svc = service();
        let c = svc.catalog("mini-home").unwrap();
        svc.add_policy("mini-home", Policy::new(&c, crate::policy::tests::tiny()));
        let v = svc.create(&req()).unwrap();
        let s = svc.suggest(&v.id).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| (0.0..=1.0).contains(&x.score)));
        assert!(s.windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn catalog_view_marks_tools_and_arities() {
        let c = DomainCatalog::builtin("mini-home").unwrap();
        let v = CatalogView::new(&c);
        assert_eq!(v.interactions.len(), Interaction::ALL.len());
        assert!(v.classes.iter().any(|k| k.tool));
        assert!(v.interactions.iter().any(|i| i.name == "placeInside" && i.arity == 2));
    }
}
