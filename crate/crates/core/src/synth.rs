//! Deterministic synthetic Bongard-problem generator with machine-readable
//! ground truth.
//!
//! Every generated puzzle carries the concept that separates its groups: a
//! conjunction of factor predicates drawn from the closed vocabulary
//! [`Factor`]. Left images always satisfy the concept, right images always
//! violate it. Generation is a pure function of `(concept, config)`.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bp::{BongardProblem, Image};

/// Retry budget for rejection sampling, per image.
const RETRY_BUDGET: usize = 1000;

/// Shapes with bounding-box side at or above this are "large".
const LARGE_MIN_SIZE: u32 = 16;

const SMALL_SIZES: [u32; 3] = [8, 10, 12];
const LARGE_SIZES: [u32; 3] = [18, 22, 26];

/// Minimum empty gap between bounding boxes of non-nested shapes.
const PLACEMENT_GAP: i64 = 2;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unsatisfiable concept: {0}")]
    UnsatisfiableConcept(String),
    #[error("shape {0} exceeds canvas (1-pixel margin required)")]
    OutOfCanvas(usize),
    #[error("puzzle carries no ground-truth scene descriptions")]
    NoGroundTruth,
    #[error("concept must contain at least one factor predicate")]
    EmptyConcept,
    #[error("concept lists factor {0:?} more than once")]
    DuplicateFactor(Factor),
}

/// The full vocabulary of variational factors the generator controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Factor {
    Numerosity,
    ShapeClass,
    Fill,
    Size,
    Enclosure,
}

impl Factor {
    pub const ALL: [Factor; 5] = [
        Factor::Numerosity,
        Factor::ShapeClass,
        Factor::Fill,
        Factor::Size,
        Factor::Enclosure,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeClass {
    Small,
    Large,
}

impl SizeClass {
    pub fn of(size: u32) -> Self {
        if size >= LARGE_MIN_SIZE {
            SizeClass::Large
        } else {
            SizeClass::Small
        }
    }
}

/// One decidable predicate over a scene, tied to the factor it varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "factor")]
pub enum FactorPredicate {
    /// Scene holds exactly `count` shapes.
    Numerosity { count: usize },
    /// At least one shape of `kind` is present.
    ShapeClass { kind: ShapeKind },
    /// Every shape has this fill state.
    Fill { filled: bool },
    /// Every shape belongs to the stated size class.
    Size { large: bool },
    /// Some shape encloses another (or none does).
    Enclosure { present: bool },
}

impl FactorPredicate {
    pub fn factor(&self) -> Factor {
        match self {
            FactorPredicate::Numerosity { .. } => Factor::Numerosity,
            FactorPredicate::ShapeClass { .. } => Factor::ShapeClass,
            FactorPredicate::Fill { .. } => Factor::Fill,
            FactorPredicate::Size { .. } => Factor::Size,
            FactorPredicate::Enclosure { .. } => Factor::Enclosure,
        }
    }

    pub fn holds(&self, scene: &SceneDescription) -> bool {
        match *self {
            FactorPredicate::Numerosity { count } => scene.shapes().len() == count,
            FactorPredicate::ShapeClass { kind } => {
                scene.shapes().iter().any(|s| s.kind == kind)
            }
            FactorPredicate::Fill { filled } => {
                scene.shapes().iter().all(|s| s.filled == filled)
            }
            FactorPredicate::Size { large } => scene
                .shapes()
                .iter()
                .all(|s| (SizeClass::of(s.size) == SizeClass::Large) == large),
            FactorPredicate::Enclosure { present } => {
                scene.containment().is_empty() != present
            }
        }
    }
}

/// The separating concept: a conjunction of predicates over distinct factors.
///
/// Left-group scenes satisfy the conjunction; right-group scenes violate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concept {
    factors: Vec<FactorPredicate>,
}

impl Concept {
    pub fn new(factors: Vec<FactorPredicate>) -> Result<Self, SynthError> {
        if factors.is_empty() {
            return Err(SynthError::EmptyConcept);
        }
        let mut seen = BTreeSet::new();
        for p in &factors {
            if !seen.insert(p.factor()) {
                return Err(SynthError::DuplicateFactor(p.factor()));
            }
        }
        Ok(Self { factors })
    }

    pub fn single(pred: FactorPredicate) -> Self {
        Self {
            factors: vec![pred],
        }
    }

    pub fn predicates(&self) -> &[FactorPredicate] {
        &self.factors
    }

    /// Number of active factors, `k = |K|`.
    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn active_factors(&self) -> BTreeSet<Factor> {
        self.factors.iter().map(|p| p.factor()).collect()
    }

    fn predicate_for(&self, factor: Factor) -> Option<&FactorPredicate> {
        self.factors.iter().find(|p| p.factor() == factor)
    }
}

/// Conjunction of every factor predicate in the concept.
pub fn concept_predicate(concept: &Concept, scene: &SceneDescription) -> bool {
    concept.factors.iter().all(|p| p.holds(scene))
}

/// One primitive: kind, center, bounding-box side, fill state.
///
/// Sizes are even; `size` is the bounding-box side for squares and triangles
/// and the diameter for circles (radius `size / 2`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub kind: ShapeKind,
    pub cx: i64,
    pub cy: i64,
    pub size: u32,
    pub filled: bool,
}

impl Shape {
    /// Inclusive ink bounding box `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (i64, i64, i64, i64) {
        let h = i64::from(self.size) / 2;
        match self.kind {
            ShapeKind::Square => (self.cx - h, self.cy - h, self.cx + h - 1, self.cy + h - 1),
            ShapeKind::Circle => (self.cx - h, self.cy - h, self.cx + h, self.cy + h),
            ShapeKind::Triangle => {
                (self.cx - h + 1, self.cy - h, self.cx + h - 1, self.cy + h - 1)
            }
        }
    }

    /// Whether a grid point is covered by the filled shape.
    pub fn contains_point(&self, x: i64, y: i64) -> bool {
        let h = i64::from(self.size) / 2;
        match self.kind {
            ShapeKind::Square => {
                x >= self.cx - h && x < self.cx + h && y >= self.cy - h && y < self.cy + h
            }
            ShapeKind::Circle => {
                let dx = x - self.cx;
                let dy = y - self.cy;
                dx * dx + dy * dy <= h * h
            }
            ShapeKind::Triangle => {
                // Row k below the apex admits a half-width of k/2.
                let k = y - (self.cy - h);
                k >= 0 && k < i64::from(self.size) && (x - self.cx).abs() <= k / 2
            }
        }
    }
}

/// Ground-truth description of one image: shapes plus derived containment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    shapes: Vec<Shape>,
    /// `(outer, inner)` index pairs.
    containment: Vec<(usize, usize)>,
}

impl SceneDescription {
    /// Build a scene, deriving containment from the shape geometry.
    ///
    /// A pair `(o, i)` is a containment when the inner bounding box lies
    /// strictly inside the outer bounding box and the inner center lies
    /// inside the outer shape.
    pub fn new(shapes: Vec<Shape>) -> Self {
        let mut containment = Vec::new();
        for (o, outer) in shapes.iter().enumerate() {
            let (ox0, oy0, ox1, oy1) = outer.bbox();
            for (i, inner) in shapes.iter().enumerate() {
                if o == i {
                    continue;
                }
                let (ix0, iy0, ix1, iy1) = inner.bbox();
                let bbox_strict = ox0 < ix0 && ix1 < ox1 && oy0 < iy0 && iy1 < oy1;
                if bbox_strict && outer.contains_point(inner.cx, inner.cy) {
                    containment.push((o, i));
                }
            }
        }
        Self {
            shapes,
            containment,
        }
    }

    pub fn empty() -> Self {
        Self {
            shapes: Vec::new(),
            containment: Vec::new(),
        }
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn containment(&self) -> &[(usize, usize)] {
        &self.containment
    }
}

/// Scene-level value of one factor; two images "differ in a factor" when
/// these values differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactorValue {
    Count(usize),
    Kinds(BTreeSet<ShapeKind>),
    Fills(BTreeSet<bool>),
    SizeClasses(BTreeSet<SizeClass>),
    Enclosed(bool),
}

pub fn factor_value(scene: &SceneDescription, factor: Factor) -> FactorValue {
    match factor {
        Factor::Numerosity => FactorValue::Count(scene.shapes().len()),
        Factor::ShapeClass => {
            FactorValue::Kinds(scene.shapes().iter().map(|s| s.kind).collect())
        }
        Factor::Fill => FactorValue::Fills(scene.shapes().iter().map(|s| s.filled).collect()),
        Factor::Size => FactorValue::SizeClasses(
            scene.shapes().iter().map(|s| SizeClass::of(s.size)).collect(),
        ),
        Factor::Enclosure => FactorValue::Enclosed(!scene.containment().is_empty()),
    }
}

/// Ground truth attached to a generated puzzle: the concept plus all twelve
/// scene descriptions (left group first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub concept: Concept,
    pub scenes: Vec<SceneDescription>,
}

/// Number of factors whose ground-truth value differs between images `i`
/// and `j` of a generated puzzle.
pub fn factor_count(bp: &BongardProblem, i: usize, j: usize) -> Result<usize, SynthError> {
    let gt = bp.ground_truth().ok_or(SynthError::NoGroundTruth)?;
    assert!(i < 12 && j < 12, "image index out of range");
    let a = &gt.scenes[i];
    let b = &gt.scenes[j];
    Ok(Factor::ALL
        .iter()
        .filter(|&&f| factor_value(a, f) != factor_value(b, f))
        .count())
}

/// Generator configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub max_shapes: usize,
    pub seed: u64,
    /// Derive each right image from its left counterpart by mutating only
    /// the concept's factors, mirroring hand-drawn "leading" pairs.
    pub leading_pairs: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas_w: 64,
            canvas_h: 64,
            max_shapes: 4,
            seed: 0,
            leading_pairs: false,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), SynthError> {
        if self.canvas_w < 16 || self.canvas_h < 16 {
            return Err(SynthError::UnsatisfiableConcept(format!(
                "canvas {}x{} below the 16-pixel minimum",
                self.canvas_w, self.canvas_h
            )));
        }
        if self.max_shapes == 0 {
            return Err(SynthError::UnsatisfiableConcept(
                "max_shapes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Rasterize a scene onto a blank canvas.
///
/// Filled shapes paint their interior; outline shapes paint a 1–2 pixel
/// boundary (the filled mask minus its 8-neighborhood erosion).
pub fn render_scene(
    scene: &SceneDescription,
    w: usize,
    h: usize,
) -> Result<Image, SynthError> {
    let mut img = Image::blank(w, h);
    for (idx, shape) in scene.shapes().iter().enumerate() {
        if !fits_canvas(shape, w, h) {
            return Err(SynthError::OutOfCanvas(idx));
        }
        paint_shape(&mut img, shape);
    }
    Ok(img)
}

fn fits_canvas(shape: &Shape, w: usize, h: usize) -> bool {
    let (x0, y0, x1, y1) = shape.bbox();
    x0 >= 1 && y0 >= 1 && x1 <= w as i64 - 2 && y1 <= h as i64 - 2
}

fn paint_shape(img: &mut Image, shape: &Shape) {
    let (x0, y0, x1, y1) = shape.bbox();
    let bw = (x1 - x0 + 1) as usize;
    let bh = (y1 - y0 + 1) as usize;
    // Local filled mask over the bounding box.
    let mut mask = vec![0u8; bw * bh];
    for y in y0..=y1 {
        for x in x0..=x1 {
            if shape.contains_point(x, y) {
                mask[(y - y0) as usize * bw + (x - x0) as usize] = 1;
            }
        }
    }
    let paint = if shape.filled {
        mask
    } else {
        outline_of(&mask, bw, bh)
    };
    for by in 0..bh {
        for bx in 0..bw {
            if paint[by * bw + bx] == 1 {
                img.set((x0 as usize) + bx, (y0 as usize) + by, 1);
            }
        }
    }
}

/// Mask minus its twice-eroded interior: a 2-pixel boundary ring, thick
/// enough to survive 4x block-average downsampling.
fn outline_of(mask: &[u8], w: usize, h: usize) -> Vec<u8> {
    let eroded = erode8(mask, w, h);
    let eroded = erode8(&eroded, w, h);
    mask.iter()
        .zip(&eroded)
        .map(|(&m, &e)| m & !e & 1)
        .collect()
}

/// 8-neighborhood erosion; pixels on the mask border erode.
fn erode8(mask: &[u8], w: usize, h: usize) -> Vec<u8> {
    let mut out = vec![0u8; mask.len()];
    for y in 0..h {
        for x in 0..w {
            if mask[y * w + x] == 0 {
                continue;
            }
            let mut interior = true;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        interior = false;
                        break 'scan;
                    }
                    if mask[ny as usize * w + nx as usize] == 0 {
                        interior = false;
                        break 'scan;
                    }
                }
            }
            if interior {
                out[y * w + x] = 1;
            }
        }
    }
    out
}

/// Generate a puzzle whose left scenes satisfy the concept and whose right
/// scenes violate it. Deterministic given `(concept, config.seed)`.
pub fn generate_bp(concept: &Concept, config: &SynthConfig) -> Result<BongardProblem, SynthError> {
    generate_bp_with_id(concept, config, 0)
}

/// [`generate_bp`] with an explicit puzzle id for dataset layouts.
pub fn generate_bp_with_id(
    concept: &Concept,
    config: &SynthConfig,
    id: u64,
) -> Result<BongardProblem, SynthError> {
    config.validate()?;
    check_feasible(concept, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut scenes: Vec<SceneDescription> = Vec::with_capacity(12);
    let mut right_scenes: Vec<SceneDescription> = Vec::with_capacity(6);
    for _ in 0..6 {
        if config.leading_pairs {
            let (left, right) = sample_leading_pair(concept, config, &mut rng)?;
            scenes.push(left);
            right_scenes.push(right);
        } else {
            scenes.push(sample_satisfying(concept, config, &mut rng)?);
        }
    }
    if config.leading_pairs {
        scenes.extend(right_scenes);
    } else {
        for _ in 0..6 {
            scenes.push(sample_violating(concept, config, &mut rng)?);
        }
    }

    // Group separation holds on every generated puzzle, by construction.
    for (i, scene) in scenes.iter().enumerate() {
        let sat = concept_predicate(concept, scene);
        assert_eq!(sat, i < 6, "group separation violated at image {i}");
    }

    let images: Vec<Image> = scenes
        .iter()
        .map(|s| render_scene(s, config.canvas_w, config.canvas_h))
        .collect::<Result<_, _>>()?;
    let left = images[..6].to_vec();
    let right = images[6..].to_vec();
    let gt = GroundTruth {
        concept: concept.clone(),
        scenes,
    };
    Ok(BongardProblem::new(id, left, right, Some(gt)).expect("generator produced 6+6 images"))
}

/// Cheap upfront infeasibility checks; everything subtler is left to the
/// rejection budget.
fn check_feasible(concept: &Concept, config: &SynthConfig) -> Result<(), SynthError> {
    let mut forced_count = None;
    let mut needs_pair = false;
    for p in concept.predicates() {
        match *p {
            FactorPredicate::Numerosity { count } => {
                if count == 0 || count > config.max_shapes {
                    return Err(SynthError::UnsatisfiableConcept(format!(
                        "numerosity {count} outside 1..={}",
                        config.max_shapes
                    )));
                }
                forced_count = Some(count);
            }
            FactorPredicate::Enclosure { present: true } => needs_pair = true,
            _ => {}
        }
    }
    if needs_pair {
        if let Some(c) = forced_count {
            if c < 2 {
                return Err(SynthError::UnsatisfiableConcept(
                    "enclosure requires at least two shapes".into(),
                ));
            }
        }
        if config.max_shapes < 2 {
            return Err(SynthError::UnsatisfiableConcept(
                "enclosure requires max_shapes >= 2".into(),
            ));
        }
    }
    Ok(())
}

fn sample_size(class: SizeClass, rng: &mut ChaCha8Rng) -> u32 {
    match class {
        SizeClass::Small => *SMALL_SIZES.choose(rng).unwrap(),
        SizeClass::Large => *LARGE_SIZES.choose(rng).unwrap(),
    }
}

fn random_kind(rng: &mut ChaCha8Rng) -> ShapeKind {
    *ShapeKind::ALL.choose(rng).unwrap()
}

fn bboxes_clear(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64), gap: i64) -> bool {
    a.2 + gap < b.0 || b.2 + gap < a.0 || a.3 + gap < b.1 || b.3 + gap < a.1
}

/// Sample a center for `kind`/`size` with the bbox inside the canvas margin
/// and clear of `others` by [`PLACEMENT_GAP`].
fn place_clear(
    kind: ShapeKind,
    size: u32,
    filled: bool,
    others: &[Shape],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Shape> {
    let w = config.canvas_w as i64;
    let h = config.canvas_h as i64;
    for _ in 0..64 {
        let half = i64::from(size) / 2 + 1;
        if w - half <= half || h - half <= half {
            return None;
        }
        let cx = rng.random_range(half..w - half);
        let cy = rng.random_range(half..h - half);
        let cand = Shape {
            kind,
            cx,
            cy,
            size,
            filled,
        };
        if !fits_canvas(&cand, config.canvas_w, config.canvas_h) {
            continue;
        }
        let bb = cand.bbox();
        if others
            .iter()
            .all(|o| bboxes_clear(bb, o.bbox(), PLACEMENT_GAP))
        {
            return Some(cand);
        }
    }
    None
}

/// Place `inner` strictly inside `outer` (bbox containment plus
/// center-inside-shape), clear of every other shape.
fn place_nested(
    kind: ShapeKind,
    size: u32,
    filled: bool,
    outer: &Shape,
    others: &[Shape],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<Shape> {
    let (ox0, oy0, ox1, oy1) = outer.bbox();
    for _ in 0..64 {
        let cx = rng.random_range(ox0..=ox1);
        let cy = rng.random_range(oy0..=oy1);
        let cand = Shape {
            kind,
            cx,
            cy,
            size,
            filled,
        };
        let (ix0, iy0, ix1, iy1) = cand.bbox();
        let strict = ox0 < ix0 && ix1 < ox1 && oy0 < iy0 && iy1 < oy1;
        if !strict || !outer.contains_point(cx, cy) {
            continue;
        }
        if !fits_canvas(&cand, config.canvas_w, config.canvas_h) {
            continue;
        }
        if others
            .iter()
            .all(|o| bboxes_clear(cand.bbox(), o.bbox(), PLACEMENT_GAP))
        {
            return Some(cand);
        }
    }
    None
}

/// Per-shape profile constraints derived from the concept (or free).
#[derive(Clone, Copy)]
struct ShapeConstraints {
    kind: Option<ShapeKind>,
    filled: Option<bool>,
    class: Option<SizeClass>,
    size: Option<u32>,
}

impl ShapeConstraints {
    fn free() -> Self {
        Self {
            kind: None,
            filled: None,
            class: None,
            size: None,
        }
    }
}

fn draw_profile(
    c: &ShapeConstraints,
    rng: &mut ChaCha8Rng,
) -> (ShapeKind, bool, u32) {
    let kind = c.kind.unwrap_or_else(|| random_kind(rng));
    let filled = c.filled.unwrap_or_else(|| rng.random_bool(0.5));
    let size = c.size.unwrap_or_else(|| {
        let class = c.class.unwrap_or_else(|| {
            if rng.random_bool(0.5) {
                SizeClass::Large
            } else {
                SizeClass::Small
            }
        });
        sample_size(class, rng)
    });
    (kind, filled, size)
}

/// One attempt at a random unconstrained scene. Nesting appears with
/// probability ~0.35 so that both polarities of the enclosure factor occur.
fn try_sample_random(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Option<SceneDescription> {
    let count = rng.random_range(1..=config.max_shapes);
    let nest = count >= 2 && rng.random_bool(0.35);
    build_scene(count, nest, &[], config, rng)
}

/// Build a scene of `count` shapes; `constraints[i]` pins shape `i`'s
/// profile. When `nest` is set, shape 0 is the outer and shape 1 the inner.
fn build_scene(
    count: usize,
    nest: bool,
    constraints: &[ShapeConstraints],
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<SceneDescription> {
    let get = |i: usize| {
        constraints
            .get(i)
            .copied()
            .unwrap_or_else(ShapeConstraints::free)
    };
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    if nest {
        debug_assert!(count >= 2);
        // Outer: default large outline (a filled outer would hide the inner).
        let mut oc = get(0);
        if oc.class.is_none() && oc.size.is_none() {
            oc.class = Some(SizeClass::Large);
        }
        if oc.filled.is_none() {
            oc.filled = Some(false);
        }
        let (okind, ofill, osize) = draw_profile(&oc, rng);
        let outer = place_clear(okind, osize, ofill, &[], config, rng)?;
        shapes.push(outer);

        let mut ic = get(1);
        if ic.class.is_none() && ic.size.is_none() {
            ic.class = Some(SizeClass::Small);
        }
        let (ikind, ifill, isize) = draw_profile(&ic, rng);
        if i64::from(isize) + 3 > i64::from(osize) {
            return None;
        }
        let inner = place_nested(ikind, isize, ifill, &shapes[0], &[], config, rng)?;
        shapes.push(inner);
    }
    while shapes.len() < count {
        let (kind, filled, size) = draw_profile(&get(shapes.len()), rng);
        let placed = place_clear(kind, size, filled, &shapes, config, rng)?;
        shapes.push(placed);
    }
    Some(SceneDescription::new(shapes))
}

/// Constrained sampling of a concept-satisfying scene.
fn sample_satisfying(
    concept: &Concept,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneDescription, SynthError> {
    for _ in 0..RETRY_BUDGET {
        if let Some(scene) = try_sample_satisfying(concept, config, rng) {
            if concept_predicate(concept, &scene) {
                return Ok(scene);
            }
        }
    }
    Err(SynthError::UnsatisfiableConcept(format!(
        "no satisfying scene within {RETRY_BUDGET} attempts"
    )))
}

fn try_sample_satisfying(
    concept: &Concept,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<SceneDescription> {
    let forced_fill = concept.predicate_for(Factor::Fill).map(|p| match *p {
        FactorPredicate::Fill { filled } => filled,
        _ => unreachable!(),
    });
    let forced_class = concept.predicate_for(Factor::Size).map(|p| match *p {
        FactorPredicate::Size { large } => {
            if large {
                SizeClass::Large
            } else {
                SizeClass::Small
            }
        }
        _ => unreachable!(),
    });
    let forced_kind = concept.predicate_for(Factor::ShapeClass).map(|p| match *p {
        FactorPredicate::ShapeClass { kind } => kind,
        _ => unreachable!(),
    });
    let nest = matches!(
        concept.predicate_for(Factor::Enclosure),
        Some(FactorPredicate::Enclosure { present: true })
    );
    let enclosure_false = matches!(
        concept.predicate_for(Factor::Enclosure),
        Some(FactorPredicate::Enclosure { present: false })
    );

    let mut count = match concept.predicate_for(Factor::Numerosity) {
        Some(FactorPredicate::Numerosity { count }) => *count,
        _ => rng.random_range(1..=config.max_shapes),
    };
    if nest && count < 2 {
        if concept.predicate_for(Factor::Numerosity).is_some() {
            return None; // caught upfront, defensive here
        }
        count = 2;
    }

    let base = ShapeConstraints {
        kind: None,
        filled: forced_fill,
        class: forced_class,
        size: None,
    };
    let mut constraints = vec![base; count.max(2)];
    if let Some(kind) = forced_kind {
        constraints[0].kind = Some(kind);
    }
    if nest {
        // Keep the nesting feasible inside the forced size class.
        if let Some(class) = forced_class {
            let (outer, inner) = match class {
                SizeClass::Small => (12, 8),
                SizeClass::Large => (26, 18),
            };
            constraints[0].size = Some(outer);
            constraints[1].size = Some(inner);
        }
    } else if config.leading_pairs && enclosure_false && count >= 2 {
        // The right-hand mutation will nest shape 1 inside shape 0; give it
        // a workable size gap now.
        let (osize, isize) = match forced_class {
            Some(SizeClass::Small) => (12, 8),
            Some(SizeClass::Large) => (26, 18),
            None => (26, 8),
        };
        constraints[0].size = Some(osize);
        constraints[1].size = Some(isize);
    }

    build_scene(count, nest, &constraints, config, rng)
}

/// Rejection-sample a scene that violates the concept.
fn sample_violating(
    concept: &Concept,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<SceneDescription, SynthError> {
    for _ in 0..RETRY_BUDGET {
        if let Some(scene) = try_sample_random(config, rng) {
            if !concept_predicate(concept, &scene) {
                return Ok(scene);
            }
        }
    }
    Err(SynthError::UnsatisfiableConcept(format!(
        "no violating scene within {RETRY_BUDGET} attempts"
    )))
}

/// Sample a satisfying scene plus a counterpart that differs from it in
/// exactly the concept's factors.
fn sample_leading_pair(
    concept: &Concept,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(SceneDescription, SceneDescription), SynthError> {
    for _ in 0..RETRY_BUDGET {
        let Some(left) = try_sample_satisfying(concept, config, rng) else {
            continue;
        };
        if !concept_predicate(concept, &left) {
            continue;
        }
        for _ in 0..8 {
            if let Some(right) = mutate_to_violate(&left, concept, config, rng) {
                return Ok((left, right));
            }
        }
    }
    Err(SynthError::UnsatisfiableConcept(format!(
        "no leading pair within {RETRY_BUDGET} attempts"
    )))
}

/// Mutate only the concept's factors so the result violates the concept
/// while every other factor value is preserved; untouched shapes keep
/// their positions, so counterparts stay visually close to the original.
fn mutate_to_violate(
    scene: &SceneDescription,
    concept: &Concept,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<SceneDescription> {
    let mut shapes = scene.shapes().to_vec();
    for pred in concept.predicates() {
        apply_mutation(&mut shapes, pred, config, rng)?;
    }
    let mutated = SceneDescription::new(shapes);
    if concept_predicate(concept, &mutated) {
        return None;
    }
    if mutated
        .shapes()
        .iter()
        .any(|s| !fits_canvas(s, config.canvas_w, config.canvas_h))
    {
        return None;
    }
    let active = concept.active_factors();
    for factor in Factor::ALL {
        if active.contains(&factor) {
            continue;
        }
        if factor_value(scene, factor) != factor_value(&mutated, factor) {
            return None;
        }
    }
    Some(mutated)
}


fn apply_mutation(
    shapes: &mut Vec<Shape>,
    pred: &FactorPredicate,
    config: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Option<()> {
    let scene = SceneDescription::new(shapes.clone());
    match *pred {
        FactorPredicate::Numerosity { .. } => {
            if shapes.len() < config.max_shapes {
                // Clone an existing profile so only the count changes.
                let template = *shapes.choose(rng)?;
                let added = place_clear(
                    template.kind,
                    template.size,
                    template.filled,
                    shapes,
                    config,
                    rng,
                )?;
                shapes.push(added);
            } else {
                // Remove a shape whose profile appears elsewhere and which
                // participates in no containment pair.
                let in_pair: BTreeSet<usize> = scene
                    .containment()
                    .iter()
                    .flat_map(|&(o, i)| [o, i])
                    .collect();
                let idx = (0..shapes.len()).find(|&i| {
                    if in_pair.contains(&i) {
                        return false;
                    }
                    let s = shapes[i];
                    let dup = |f: &dyn Fn(&Shape) -> bool| {
                        shapes.iter().enumerate().any(|(j, o)| j != i && f(o))
                    };
                    dup(&|o| o.kind == s.kind)
                        && dup(&|o| o.filled == s.filled)
                        && dup(&|o| SizeClass::of(o.size) == SizeClass::of(s.size))
                })?;
                shapes.remove(idx);
            }
        }
        FactorPredicate::ShapeClass { kind } => {
            // Replace every shape of `kind` so the kind set changes.
            let others: Vec<ShapeKind> =
                ShapeKind::ALL.iter().copied().filter(|&k| k != kind).collect();
            let replacement = *others.choose(rng)?;
            let mut changed = false;
            for s in shapes.iter_mut() {
                if s.kind == kind {
                    s.kind = replacement;
                    changed = true;
                }
            }
            if !changed {
                return None;
            }
        }
        FactorPredicate::Fill { .. } => {
            let idx = rng.random_range(0..shapes.len());
            shapes[idx].filled = !shapes[idx].filled;
        }
        FactorPredicate::Size { large } => {
            let in_pair: BTreeSet<usize> = scene
                .containment()
                .iter()
                .flat_map(|&(o, i)| [o, i])
                .collect();
            let candidates: Vec<usize> = (0..shapes.len())
                .filter(|i| !in_pair.contains(i))
                .collect();
            let idx = *candidates.choose(rng)?;
            let target = if large {
                SizeClass::Small
            } else {
                SizeClass::Large
            };
            let new_size = sample_size(target, rng);
            let others: Vec<Shape> = shapes
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != idx)
                .map(|(_, s)| *s)
                .collect();
            let moved = place_clear(
                shapes[idx].kind,
                new_size,
                shapes[idx].filled,
                &others,
                config,
                rng,
            )?;
            shapes[idx] = moved;
        }
        FactorPredicate::Enclosure { present } => {
            if present {
                // Break the nesting: move the inner shape into the clear.
                let &(_, inner) = scene.containment().first()?;
                let others: Vec<Shape> = shapes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != inner)
                    .map(|(_, s)| *s)
                    .collect();
                let s = shapes[inner];
                let moved = place_clear(s.kind, s.size, s.filled, &others, config, rng)?;
                shapes[inner] = moved;
            } else {
                // Create a nesting from two existing shapes.
                let mut pairs: Vec<(usize, usize)> = Vec::new();
                for o in 0..shapes.len() {
                    for i in 0..shapes.len() {
                        if o != i && i64::from(shapes[i].size) + 3 <= i64::from(shapes[o].size)
                        {
                            pairs.push((o, i));
                        }
                    }
                }
                let &(o, i) = pairs.choose(rng)?;
                let others: Vec<Shape> = shapes
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i && j != o)
                    .map(|(_, s)| *s)
                    .collect();
                let s = shapes[i];
                let nested =
                    place_nested(s.kind, s.size, s.filled, &shapes[o], &others, config, rng)?;
                shapes[i] = nested;
            }
        }
    }
    Some(())
}
