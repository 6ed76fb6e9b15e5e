//! The environment formalism: typed parameters, element collections,
//! mutation operators, sampling, perturbation, and the environment distance
//! used for node selection.
//!
//! Environments pair immutable track parameters with a mutable multiset of
//! disc obstacles. Mutations add, subtract, or replace obstacles; parameters
//! never change after construction.

use rand::Rng;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Disc, TrackGeometry, END_ZONE_FRACTION};
use crate::sim::SystemState;

/// Name of the sole element collection of the obstructed-track type.
pub const OBSTACLE_COLLECTION: &str = "obstacles";

/// Monte-Carlo iterations per direction in the collection distance.
pub const COLLECTION_DISTANCE_SAMPLES: usize = 32;

/// Give up after this many rejected draws when a sampling domain is too tight.
pub const REJECTION_LIMIT: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown collection `{0}`")]
    UnknownCollection(String),
    #[error("element not present in collection: ({0:.6}, {1:.6}, r={2:.6})")]
    ElementNotPresent(f64, f64, f64),
    #[error("collection `{name}` would hold {got} elements, outside [{min}, {max:?}]")]
    CardinalityViolation {
        name: String,
        got: usize,
        min: usize,
        max: Option<usize>,
    },
    #[error("rejection sampling failed after {0} draws")]
    RejectionLimit(usize),
    #[error("environments have differing parameters")]
    IncompatibleEnvironments,
    #[error("initial state outside the drivable band")]
    InvalidScene,
    #[error("invalid environment type: {0}")]
    InvalidType(String),
}

/// Semantic type of an environment parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    ScalarFunction,
    Interval,
    Scalar,
}

/// Schema entry for one element collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollectionSpec {
    pub name: String,
    pub min: usize,
    pub max: Option<usize>,
    pub ordered: bool,
}

/// Declares which parameters and element collections an environment carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentType {
    pub params: Vec<(String, ParamKind)>,
    pub collections: Vec<CollectionSpec>,
}

impl EnvironmentType {
    /// The running scenario's type: track curve, range, and width parameters
    /// plus one unordered, unbounded obstacle collection.
    pub fn obstructed_track() -> Self {
        EnvironmentType {
            params: vec![
                ("curve".to_string(), ParamKind::ScalarFunction),
                ("range".to_string(), ParamKind::Interval),
                ("width".to_string(), ParamKind::Scalar),
            ],
            collections: vec![CollectionSpec {
                name: OBSTACLE_COLLECTION.to_string(),
                min: 0,
                max: None,
                ordered: false,
            }],
        }
    }

    pub fn with_obstacle_bounds(mut self, min: usize, max: Option<usize>) -> Self {
        for c in &mut self.collections {
            if c.name == OBSTACLE_COLLECTION {
                c.min = min;
                c.max = max;
            }
        }
        self
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for (i, c) in self.collections.iter().enumerate() {
            if self.collections[..i].iter().any(|o| o.name == c.name) {
                return Err(EnvError::InvalidType(format!(
                    "duplicate collection `{}`",
                    c.name
                )));
            }
            if let Some(max) = c.max {
                if c.min > max {
                    return Err(EnvError::InvalidType(format!(
                        "collection `{}` has min {} > max {}",
                        c.name, c.min, max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn collection(&self, name: &str) -> Option<&CollectionSpec> {
        self.collections.iter().find(|c| c.name == name)
    }
}

/// An environment-state: track parameters plus the obstacle multiset.
/// Parameters are immutable after construction; only the obstacle
/// collection is subject to mutation.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub track: TrackGeometry,
    pub obstacles: Vec<Disc>,
    pub ty: EnvironmentType,
}

impl Environment {
    pub fn new(track: TrackGeometry, obstacles: Vec<Disc>) -> Self {
        Environment {
            track,
            obstacles,
            ty: EnvironmentType::obstructed_track(),
        }
    }

    pub fn with_type(mut self, ty: EnvironmentType) -> Self {
        self.ty = ty;
        self
    }

    pub fn same_parameters(&self, other: &Environment) -> bool {
        self.track == other.track
    }

    /// Multiset equality of the obstacle collections.
    pub fn same_obstacles(&self, other: &Environment) -> bool {
        if self.obstacles.len() != other.obstacles.len() {
            return false;
        }
        let mut rest = other.obstacles.clone();
        for d in &self.obstacles {
            match rest.iter().position(|o| o == d) {
                Some(i) => {
                    rest.swap_remove(i);
                }
                None => return false,
            }
        }
        true
    }
}

/// The mutation operator: add, subtract, or replace collection elements.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MutationOp {
    Add,
    Subtract,
    Replace,
}

/// A meta-control: an edit to one element collection. Constructors enforce
/// the structural invariants (`Add` carries no removals, `Subtract` no
/// additions, `Replace` both).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mutation {
    collection: String,
    op: MutationOp,
    removed: Vec<Disc>,
    added: Vec<Disc>,
}

impl Mutation {
    pub fn add(elements: Vec<Disc>) -> Self {
        assert!(!elements.is_empty(), "add mutation needs elements");
        Mutation {
            collection: OBSTACLE_COLLECTION.to_string(),
            op: MutationOp::Add,
            removed: Vec::new(),
            added: elements,
        }
    }

    pub fn subtract(elements: Vec<Disc>) -> Self {
        assert!(!elements.is_empty(), "subtract mutation needs elements");
        Mutation {
            collection: OBSTACLE_COLLECTION.to_string(),
            op: MutationOp::Subtract,
            removed: elements,
            added: Vec::new(),
        }
    }

    pub fn replace(removed: Vec<Disc>, added: Vec<Disc>) -> Self {
        assert!(
            !removed.is_empty() && !added.is_empty(),
            "replace mutation needs both sides"
        );
        Mutation {
            collection: OBSTACLE_COLLECTION.to_string(),
            op: MutationOp::Replace,
            removed,
            added,
        }
    }

    pub fn with_collection(mut self, name: &str) -> Self {
        self.collection = name.to_string();
        self
    }

    pub fn collection(&self) -> &str {
        &self.collection
    }

    pub fn op(&self) -> MutationOp {
        self.op
    }

    pub fn removed(&self) -> &[Disc] {
        &self.removed
    }

    pub fn added(&self) -> &[Disc] {
        &self.added
    }

    /// All elements the mutation touches, removed then added.
    pub fn touched(&self) -> impl Iterator<Item = &Disc> {
        self.removed.iter().chain(self.added.iter())
    }
}

/// Apply a mutation, returning the successor environment. The input is left
/// untouched; removal takes one occurrence per listed element.
pub fn apply_mutation(env: &Environment, m: &Mutation) -> Result<Environment, EnvError> {
    let spec = env
        .ty
        .collection(m.collection())
        .ok_or_else(|| EnvError::UnknownCollection(m.collection().to_string()))?
        .clone();

    let mut obstacles = env.obstacles.clone();
    for d in m.removed() {
        match obstacles.iter().position(|o| o == d) {
            Some(i) => {
                obstacles.remove(i);
            }
            None => return Err(EnvError::ElementNotPresent(d.cx, d.cy, d.r)),
        }
    }
    obstacles.extend_from_slice(m.added());

    let n = obstacles.len();
    if n < spec.min || spec.max.is_some_and(|max| n > max) {
        return Err(EnvError::CardinalityViolation {
            name: spec.name.clone(),
            got: n,
            min: spec.min,
            max: spec.max,
        });
    }

    Ok(Environment {
        track: env.track,
        obstacles,
        ty: env.ty.clone(),
    })
}

/// A simulation input: an environment plus the initial system state.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub env: Environment,
    pub initial_state: SystemState,
}

impl Scene {
    pub fn new(env: Environment, initial_state: SystemState) -> Result<Self, EnvError> {
        if !env.track.in_band(initial_state.x, initial_state.y) {
            return Err(EnvError::InvalidScene);
        }
        Ok(Scene { env, initial_state })
    }
}

/// Inputs for drawing a fresh environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub track: TrackGeometry,
    pub obstacle_count: usize,
    pub obstacle_radius: f64,
}

impl SampleSpec {
    fn max_center_x(&self) -> f64 {
        self.track.end_zone_start - self.obstacle_radius
    }
}

/// Draw an environment: track parameters from the spec, obstacle centers
/// uniform over the drivable band with each full disc kept off the end zone.
///
/// The band has constant height, so x and y|x can be drawn directly; no
/// rejection loop is needed for a well-formed domain.
pub fn sample_env(
    ty: &EnvironmentType,
    spec: &SampleSpec,
    rng: &mut impl Rng,
) -> Result<Environment, EnvError> {
    let hi_x = spec.max_center_x();
    if spec.obstacle_count > 0 && (hi_x <= spec.track.x_start || spec.track.half_width <= 0.0) {
        return Err(EnvError::RejectionLimit(0));
    }
    let mut obstacles = Vec::with_capacity(spec.obstacle_count);
    for _ in 0..spec.obstacle_count {
        obstacles.push(sample_element(spec, rng)?);
    }
    Ok(Environment::new(spec.track, obstacles).with_type(ty.clone()))
}

/// Draw one obstacle from the sampling domain: center uniform over the
/// drivable band with the full disc off the end zone.
pub fn sample_element(spec: &SampleSpec, rng: &mut impl Rng) -> Result<Disc, EnvError> {
    if spec.max_center_x() <= spec.track.x_start || spec.track.half_width <= 0.0 {
        return Err(EnvError::RejectionLimit(0));
    }
    let x = rng.random_range(spec.track.x_start..spec.max_center_x());
    let y = spec.track.centerline_y(x)
        + rng.random_range(-spec.track.half_width..spec.track.half_width);
    Ok(Disc::new(x, y, spec.obstacle_radius))
}

/// Per-axis Gaussian noise for element perturbation. Radius noise defaults
/// to zero (the scenario holds r fixed) but can be enabled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbNoise {
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_r: f64,
}

impl PerturbNoise {
    pub fn positional(sigma_x: f64, sigma_y: f64) -> Self {
        PerturbNoise {
            sigma_x,
            sigma_y,
            sigma_r: 0.0,
        }
    }
}

fn normal_sample(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("valid sigma").sample(rng)
}

/// Build a replacement mutation that displaces `subset` by Gaussian noise,
/// rejecting draws until each new disc center is inside the drivable band
/// and the full disc is off the end zone.
pub fn perturb_elements(
    env: &Environment,
    subset: &[Disc],
    noise: PerturbNoise,
    rng: &mut impl Rng,
) -> Result<Mutation, EnvError> {
    for d in subset {
        if !env.obstacles.contains(d) {
            return Err(EnvError::ElementNotPresent(d.cx, d.cy, d.r));
        }
    }
    let mut added = Vec::with_capacity(subset.len());
    for d in subset {
        let mut attempts = 0;
        loop {
            let x = d.cx + normal_sample(rng, noise.sigma_x);
            let y = d.cy + normal_sample(rng, noise.sigma_y);
            let r = d.r + normal_sample(rng, noise.sigma_r);
            let ok = r > 0.0
                && env.track.in_band(x, y)
                && x + r <= env.track.end_zone_start
                && x - r >= env.track.x_start;
            if ok {
                added.push(Disc::new(x, y, r));
                break;
            }
            attempts += 1;
            if attempts >= REJECTION_LIMIT {
                return Err(EnvError::RejectionLimit(attempts));
            }
        }
    }
    Ok(Mutation::replace(subset.to_vec(), added))
}

/// Directed collection distance: average over sampled points inside random
/// discs of `from` of the Euclidean distance to the nearest disc of `to`.
fn directed_collection_distance(from: &[Disc], to: &[Disc], rng: &mut ChaCha8Rng) -> f64 {
    if from.is_empty() || to.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for _ in 0..COLLECTION_DISTANCE_SAMPLES {
        let d = &from[rng.random_range(0..from.len())];
        let radius = d.r * rng.random::<f64>().sqrt();
        let theta = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        let px = d.cx + radius * theta.cos();
        let py = d.cy + radius * theta.sin();
        let nearest = to
            .iter()
            .map(|o| (((px - o.cx).powi(2) + (py - o.cy).powi(2)).sqrt() - o.r).max(0.0))
            .fold(f64::INFINITY, f64::min);
        total += nearest;
    }
    total / COLLECTION_DISTANCE_SAMPLES as f64
}

/// Monte-Carlo distance between the obstacle collections of two environments
/// with identical parameters. Both directions run from the same derived
/// stream, so the result is exactly symmetric in its arguments.
pub fn env_distance(
    e1: &Environment,
    e2: &Environment,
    rng: &mut impl RngCore,
) -> Result<f64, EnvError> {
    if !e1.same_parameters(e2) {
        return Err(EnvError::IncompatibleEnvironments);
    }
    let stream = ChaCha8Rng::seed_from_u64(rng.next_u64());
    let forward = directed_collection_distance(&e1.obstacles, &e2.obstacles, &mut stream.clone());
    let backward = directed_collection_distance(&e2.obstacles, &e1.obstacles, &mut stream.clone());
    Ok(0.5 * (forward + backward))
}

// --- serialization -------------------------------------------------------
//
// Environment document: {"track": {"amplitude", "x_start", "x_end", "width"},
// "obstacles": [{"x", "y", "r"}, ...]}. Floats round-trip bit-exactly through
// the shortest decimal representation.

#[derive(Serialize, Deserialize)]
struct TrackDoc {
    amplitude: f64,
    x_start: f64,
    x_end: f64,
    width: f64,
}

#[derive(Serialize, Deserialize)]
struct EnvDoc {
    track: TrackDoc,
    obstacles: Vec<Disc>,
}

impl Environment {
    pub fn to_doc_string(&self) -> String {
        let doc = EnvDoc {
            track: TrackDoc {
                amplitude: self.track.amplitude,
                x_start: self.track.x_start,
                x_end: self.track.x_end,
                width: 2.0 * self.track.half_width,
            },
            obstacles: self.obstacles.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("environment serializes")
    }

    /// Parse an environment document. The end zone is not part of the wire
    /// format; pass the scenario's value or leave `None` for the default
    /// fraction of the x-range.
    pub fn from_doc_str(s: &str, end_zone_start: Option<f64>) -> Result<Self, serde_json::Error> {
        let doc: EnvDoc = serde_json::from_str(s)?;
        let mut track = TrackGeometry::new(
            doc.track.amplitude,
            doc.track.x_start,
            doc.track.x_end,
            doc.track.width / 2.0,
        );
        track.end_zone_start = end_zone_start.unwrap_or(
            doc.track.x_start + END_ZONE_FRACTION * (doc.track.x_end - doc.track.x_start),
        );
        Ok(Environment::new(track, doc.obstacles))
    }
}
