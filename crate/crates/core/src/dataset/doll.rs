//! Paper-doll specification, skeleton and layered vector geometry.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{
    joint, Keypoint, Keypoints, LabelMap, RgbImage, IMAGE_SIZE, LABEL_BOTTOM, LABEL_HAIR,
    LABEL_SKIN, LABEL_TOP,
};
use crate::nn::seeded_rng;

/// Index of each entry of [`PaperDollSpec::pose_params`].
pub mod pose {
    pub const TORSO_TILT: usize = 0;
    pub const R_SHOULDER: usize = 1;
    pub const R_ELBOW: usize = 2;
    pub const L_SHOULDER: usize = 3;
    pub const L_ELBOW: usize = 4;
    pub const R_HIP: usize = 5;
    pub const R_KNEE: usize = 6;
    pub const L_HIP: usize = 7;
    pub const L_KNEE: usize = 8;
    pub const HEAD_OFFSET: usize = 9;
    pub const COUNT: usize = 10;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HairStyle {
    Short,
    Long,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    Solid,
    Stripes,
    Dots,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentAttrs {
    /// 0 is sleeveless (top) or shorts (bottom), 1 is full length.
    pub sleeve_or_leg_length: f64,
    pub width: f64,
    pub base_color: [f64; 3],
    pub pattern: Pattern,
}

impl GarmentAttrs {
    fn validate(&self, field: &str) -> Result<()> {
        unit(
            &format!("{field}.sleeve_or_leg_length"),
            self.sleeve_or_leg_length,
        )?;
        unit(&format!("{field}.width"), self.width)?;
        for (i, c) in self.base_color.iter().enumerate() {
            unit(&format!("{field}.base_color[{i}]"), *c)?;
        }
        Ok(())
    }

    fn random(rng: &mut impl Rng) -> Self {
        GarmentAttrs {
            sleeve_or_leg_length: rng.random_range(0.0..=1.0),
            width: rng.random_range(0.0..=1.0),
            base_color: [
                rng.random_range(0.05..=0.95),
                rng.random_range(0.05..=0.95),
                rng.random_range(0.05..=0.95),
            ],
            pattern: match rng.random_range(0..3) {
                0 => Pattern::Solid,
                1 => Pattern::Stripes,
                _ => Pattern::Dots,
            },
        }
    }
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::validation(field, format!("{v} is outside [0, 1]")))
    }
}

/// Everything needed to draw one toy person. Construct with [`PaperDollSpec::new`] or
/// deserialize; both validate ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct PaperDollSpec {
    pub seed: u64,
    pub pose_params: [f64; pose::COUNT],
    pub body_tone: f64,
    pub hair_style: HairStyle,
    pub top: GarmentAttrs,
    pub bottom: GarmentAttrs,
}

#[derive(Deserialize)]
struct RawSpec {
    seed: u64,
    pose_params: [f64; pose::COUNT],
    body_tone: f64,
    hair_style: HairStyle,
    top: GarmentAttrs,
    bottom: GarmentAttrs,
}

impl TryFrom<RawSpec> for PaperDollSpec {
    type Error = Error;
    fn try_from(r: RawSpec) -> Result<Self> {
        PaperDollSpec::new(
            r.seed,
            r.pose_params,
            r.body_tone,
            r.hair_style,
            r.top,
            r.bottom,
        )
    }
}

impl PaperDollSpec {
    pub fn new(
        seed: u64,
        pose_params: [f64; pose::COUNT],
        body_tone: f64,
        hair_style: HairStyle,
        top: GarmentAttrs,
        bottom: GarmentAttrs,
    ) -> Result<Self> {
        let spec = PaperDollSpec {
            seed,
            pose_params,
            body_tone,
            hair_style,
            top,
            bottom,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pose_params.iter().enumerate() {
            if !(-1.0..=1.0).contains(p) {
                return Err(Error::validation(
                    format!("pose_params[{i}]"),
                    format!("{p} is outside [-1, 1]"),
                ));
            }
        }
        unit("body_tone", self.body_tone)?;
        self.top.validate("top")?;
        self.bottom.validate("bottom")
    }

    /// Random identity and pose drawn from `seed`.
    pub fn random(seed: u64) -> Self {
        let mut rng = seeded_rng(seed, 0x5bec);
        let mut pose_params = [0.0; pose::COUNT];
        for p in &mut pose_params {
            *p = rng.random_range(-1.0..=1.0);
        }
        let body_tone = rng.random_range(0.0..=1.0);
        let hair_style = match rng.random_range(0..3) {
            0 => HairStyle::Short,
            1 => HairStyle::Long,
            _ => HairStyle::None,
        };
        let top = GarmentAttrs::random(&mut rng);
        let bottom = GarmentAttrs::random(&mut rng);
        PaperDollSpec {
            seed,
            pose_params,
            body_tone,
            hair_style,
            top,
            bottom,
        }
    }

    pub fn with_pose(&self, pose_params: [f64; pose::COUNT]) -> Result<Self> {
        let mut s = self.clone();
        s.pose_params = pose_params;
        s.validate()?;
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
    fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
    fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }
    fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).dot(self.sub(o)).sqrt()
    }
}

/// Distance from `p` to segment `ab`, with the clamped projection parameter.
pub fn segment_distance(p: Vec2, a: Vec2, b: Vec2) -> (f64, f64) {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 == 0.0 {
        0.0
    } else {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    (p.dist(a.add(ab.scale(t))), t)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Disc {
        center: Vec2,
        radius: f64,
    },
    /// Disc restricted to `y <= max_y`.
    Cap {
        center: Vec2,
        radius: f64,
        max_y: f64,
    },
    Capsule {
        a: Vec2,
        b: Vec2,
        radius: f64,
    },
    /// Convex polygon, vertices in either winding.
    Polygon(Vec<Vec2>),
}

impl Shape {
    pub fn contains(&self, p: Vec2) -> bool {
        match self {
            Shape::Disc { center, radius } => p.dist(*center) <= *radius,
            Shape::Cap {
                center,
                radius,
                max_y,
            } => p.y <= *max_y && p.dist(*center) <= *radius,
            Shape::Capsule { a, b, radius } => segment_distance(p, *a, *b).0 <= *radius,
            Shape::Polygon(v) => {
                let mut sign = 0.0f64;
                for i in 0..v.len() {
                    let c = v[(i + 1) % v.len()].sub(v[i]).cross(p.sub(v[i]));
                    if c != 0.0 {
                        if sign != 0.0 && c.signum() != sign {
                            return false;
                        }
                        sign = c.signum();
                    }
                }
                true
            }
        }
    }
}

/// What a layer is painted with.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Paint {
    Skin,
    Hair,
    Top,
    Bottom,
}

impl Paint {
    pub fn label(self) -> u8 {
        match self {
            Paint::Skin => LABEL_SKIN,
            Paint::Hair => LABEL_HAIR,
            Paint::Top => LABEL_TOP,
            Paint::Bottom => LABEL_BOTTOM,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub paint: Paint,
    pub shapes: Vec<Shape>,
}

impl Layer {
    pub fn contains(&self, p: Vec2) -> bool {
        self.shapes.iter().any(|s| s.contains(p))
    }
}

pub const UPPER_ARM: f64 = 11.0;
pub const FOREARM: f64 = 10.0;
pub const THIGH: f64 = 12.0;
pub const SHIN: f64 = 11.0;
pub const ARM_RADIUS: f64 = 2.4;
pub const FOREARM_RADIUS: f64 = 2.1;
pub const THIGH_RADIUS: f64 = 3.0;
pub const SHIN_RADIUS: f64 = 2.6;
pub const HEAD_RADIUS: f64 = 5.5;
pub const SLEEVE_RADIUS: f64 = 3.3;

/// Joint positions and layered shapes of one doll; the renderer and the labeler both read
/// from this, so the two can never disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct DollGeometry {
    /// The 14 analytic OpenPose joints, in keypoint order.
    pub joints: [Vec2; 14],
    pub head_center: Vec2,
    /// Painter's order, back to front.
    pub layers: Vec<Layer>,
}

/// Prefix of the polyline `pts` of arc length `len` as capsules.
fn polyline_prefix(pts: &[Vec2], len: f64, radius: f64) -> Vec<Shape> {
    let mut out = Vec::new();
    let mut left = len;
    for w in pts.windows(2) {
        if left <= 0.0 {
            break;
        }
        let seg = w[0].dist(w[1]);
        let t = (left / seg).min(1.0);
        out.push(Shape::Capsule {
            a: w[0],
            b: w[0].add(w[1].sub(w[0]).scale(t)),
            radius,
        });
        left -= seg;
    }
    out
}

impl DollGeometry {
    pub fn new(spec: &PaperDollSpec) -> Self {
        Self::shifted(spec, 0.0, 0.0)
    }

    /// Geometry translated rigidly by `(dx, dy)` pixels.
    pub fn shifted(spec: &PaperDollSpec, dx: f64, dy: f64) -> Self {
        let p = &spec.pose_params;
        let tilt = 0.22 * p[pose::TORSO_TILT];
        let up = Vec2::new(tilt.sin(), -tilt.cos());
        let down = up.scale(-1.0);
        let right = Vec2::new(tilt.cos(), tilt.sin());

        let mid_hip = Vec2::new(32.0 + dx, 37.0 + dy);
        let neck = mid_hip.add(up.scale(18.0));
        let r_shoulder = neck.sub(right.scale(7.5));
        let l_shoulder = neck.add(right.scale(7.5));
        let r_hip = mid_hip.sub(right.scale(4.5));
        let l_hip = mid_hip.add(right.scale(4.5));
        let head_center = neck
            .add(up.scale(7.5))
            .add(right.scale(2.5 * p[pose::HEAD_OFFSET]));

        // Outward angle from the downward torso axis; `side` is -1 for the image-left limb.
        let limb_dir = |base: Vec2, phi: f64, side: f64| {
            base.scale(phi.cos()).add(right.scale(side * phi.sin()))
        };
        let arm = |shoulder: Vec2, ps: f64, pe: f64, side: f64| {
            let phi_s = 0.3 + 0.7 * ps;
            let phi_e = phi_s + 0.8 * pe;
            let elbow = shoulder.add(limb_dir(down, phi_s, side).scale(UPPER_ARM));
            let wrist = elbow.add(limb_dir(down, phi_e, side).scale(FOREARM));
            (elbow, wrist)
        };
        let gravity = Vec2::new(0.0, 1.0);
        let sideways = Vec2::new(1.0, 0.0);
        let leg = |hip: Vec2, ph: f64, pk: f64, side: f64| {
            let phi_h = 0.08 + 0.3 * ph;
            let phi_k = phi_h + 0.45 * pk;
            let dir = |phi: f64| {
                gravity
                    .scale(phi.cos())
                    .add(sideways.scale(side * phi.sin()))
            };
            let knee = hip.add(dir(phi_h).scale(THIGH));
            let ankle = knee.add(dir(phi_k).scale(SHIN));
            (knee, ankle)
        };
        let (r_elbow, r_wrist) = arm(r_shoulder, p[pose::R_SHOULDER], p[pose::R_ELBOW], -1.0);
        let (l_elbow, l_wrist) = arm(l_shoulder, p[pose::L_SHOULDER], p[pose::L_ELBOW], 1.0);
        let (r_knee, r_ankle) = leg(r_hip, p[pose::R_HIP], p[pose::R_KNEE], -1.0);
        let (l_knee, l_ankle) = leg(l_hip, p[pose::L_HIP], p[pose::L_KNEE], 1.0);

        let joints = [
            head_center,
            neck,
            r_shoulder,
            r_elbow,
            r_wrist,
            l_shoulder,
            l_elbow,
            l_wrist,
            r_hip,
            r_knee,
            r_ankle,
            l_hip,
            l_knee,
            l_ankle,
        ];

        let body = Layer {
            paint: Paint::Skin,
            shapes: vec![
                Shape::Disc {
                    center: head_center,
                    radius: HEAD_RADIUS,
                },
                Shape::Capsule {
                    a: neck,
                    b: head_center,
                    radius: 2.4,
                },
                Shape::Polygon(vec![r_shoulder, l_shoulder, l_hip, r_hip]),
                Shape::Capsule {
                    a: r_hip,
                    b: r_knee,
                    radius: THIGH_RADIUS,
                },
                Shape::Capsule {
                    a: r_knee,
                    b: r_ankle,
                    radius: SHIN_RADIUS,
                },
                Shape::Capsule {
                    a: l_hip,
                    b: l_knee,
                    radius: THIGH_RADIUS,
                },
                Shape::Capsule {
                    a: l_knee,
                    b: l_ankle,
                    radius: SHIN_RADIUS,
                },
            ],
        };

        let bw = 5.0 + 1.5 * spec.bottom.width;
        let pelvis_top = mid_hip.add(up.scale(2.5));
        let pelvis_bottom = mid_hip.add(down.scale(3.5));
        let mut bottom_shapes = vec![Shape::Polygon(vec![
            pelvis_top.sub(right.scale(bw)),
            pelvis_top.add(right.scale(bw)),
            pelvis_bottom.add(right.scale(bw + 0.5)),
            pelvis_bottom.sub(right.scale(bw + 0.5)),
        ])];
        let leg_len = (0.2 + 0.8 * spec.bottom.sleeve_or_leg_length) * (THIGH + SHIN);
        let leg_radius = THIGH_RADIUS + 0.6 + 1.4 * spec.bottom.width;
        bottom_shapes.extend(polyline_prefix(
            &[r_hip, r_knee, r_ankle],
            leg_len,
            leg_radius,
        ));
        bottom_shapes.extend(polyline_prefix(
            &[l_hip, l_knee, l_ankle],
            leg_len,
            leg_radius,
        ));
        let bottom = Layer {
            paint: Paint::Bottom,
            shapes: bottom_shapes,
        };

        let tw = 5.0 + 3.0 * spec.top.width;
        let waist = mid_hip.add(down.scale(1.0));
        let top_body = Layer {
            paint: Paint::Top,
            shapes: vec![Shape::Polygon(vec![
                r_shoulder.sub(right.scale(1.0)),
                l_shoulder.add(right.scale(1.0)),
                waist.add(right.scale(tw)),
                waist.sub(right.scale(tw)),
            ])],
        };

        let arms = Layer {
            paint: Paint::Skin,
            shapes: vec![
                Shape::Capsule {
                    a: r_shoulder,
                    b: r_elbow,
                    radius: ARM_RADIUS,
                },
                Shape::Capsule {
                    a: r_elbow,
                    b: r_wrist,
                    radius: FOREARM_RADIUS,
                },
                Shape::Capsule {
                    a: l_shoulder,
                    b: l_elbow,
                    radius: ARM_RADIUS,
                },
                Shape::Capsule {
                    a: l_elbow,
                    b: l_wrist,
                    radius: FOREARM_RADIUS,
                },
            ],
        };

        let sleeve_len = spec.top.sleeve_or_leg_length * (UPPER_ARM + FOREARM);
        let mut sleeve_shapes =
            polyline_prefix(&[r_shoulder, r_elbow, r_wrist], sleeve_len, SLEEVE_RADIUS);
        sleeve_shapes.extend(polyline_prefix(
            &[l_shoulder, l_elbow, l_wrist],
            sleeve_len,
            SLEEVE_RADIUS,
        ));
        let sleeves = Layer {
            paint: Paint::Top,
            shapes: sleeve_shapes,
        };

        let hc = head_center;
        let cap = Shape::Cap {
            center: hc,
            radius: HEAD_RADIUS + 0.8,
            max_y: hc.y - 1.0,
        };
        let hair_shapes = match spec.hair_style {
            HairStyle::None => vec![],
            HairStyle::Short => vec![cap],
            HairStyle::Long => vec![
                cap,
                Shape::Capsule {
                    a: Vec2::new(hc.x - 5.0, hc.y - 1.0),
                    b: Vec2::new(hc.x - 5.5, hc.y + 13.0),
                    radius: 2.2,
                },
                Shape::Capsule {
                    a: Vec2::new(hc.x + 5.0, hc.y - 1.0),
                    b: Vec2::new(hc.x + 5.5, hc.y + 13.0),
                    radius: 2.2,
                },
            ],
        };
        let hair = Layer {
            paint: Paint::Hair,
            shapes: hair_shapes,
        };

        DollGeometry {
            joints,
            head_center,
            layers: vec![body, bottom, top_body, arms, sleeves, hair],
        }
    }

    /// Label of the frontmost layer covering `p`, or background.
    pub fn label_at(&self, p: Vec2) -> u8 {
        self.layers
            .iter()
            .rev()
            .find(|l| l.contains(p))
            .map_or(0, |l| l.paint.label())
    }

    pub fn keypoints(&self) -> Keypoints {
        let mut kps = Keypoints::default();
        for (i, j) in self.joints.iter().enumerate() {
            kps.0[i] = Keypoint {
                x: j.x as f32,
                y: j.y as f32,
                visible: true,
            };
        }
        kps
    }
}

/// One rendered toy person.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub keypoints: Keypoints,
    pub seg: LabelMap,
    pub attrs: PaperDollSpec,
}

impl fmt::Display for HairStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HairStyle::Short => "short",
            HairStyle::Long => "long",
            HairStyle::None => "none",
        })
    }
}

fn lerp3(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

fn garment_color(attrs: &GarmentAttrs, x: usize, y: usize) -> [f64; 3] {
    let c = attrs.base_color;
    match attrs.pattern {
        Pattern::Solid => c,
        Pattern::Stripes => {
            if y % 6 < 3 {
                c
            } else {
                c.map(|v| 0.55 * v)
            }
        }
        Pattern::Dots => {
            let (fx, fy) = ((x % 6) as f64 - 2.5, (y % 6) as f64 - 2.5);
            if fx * fx + fy * fy <= 2.0 {
                c.map(|v| 0.45 * v + 0.55)
            } else {
                c
            }
        }
    }
}

const HAIR_COLORS: [[f64; 3]; 4] = [
    [0.15, 0.10, 0.05],
    [0.40, 0.22, 0.10],
    [0.80, 0.65, 0.30],
    [0.08, 0.08, 0.08],
];

/// Background and hair colors follow from the spec seed.
fn seed_colors(seed: u64) -> ([f64; 3], [f64; 3]) {
    let mut rng = seeded_rng(seed, 0xc010);
    let g: f64 = rng.random_range(0.75..=0.95);
    let bg = [
        g + rng.random_range(-0.04..=0.04),
        g + rng.random_range(-0.04..=0.04),
        g + rng.random_range(-0.04..=0.04),
    ];
    (bg, HAIR_COLORS[rng.random_range(0..HAIR_COLORS.len())])
}

/// Renders a validated spec.
pub fn render_person(spec: &PaperDollSpec) -> Result<Sample> {
    render_person_shifted(spec, 0.0, 0.0)
}

/// Renders with the whole doll translated by `(dx, dy)` pixels; keypoints move with it.
pub fn render_person_shifted(spec: &PaperDollSpec, dx: f64, dy: f64) -> Result<Sample> {
    spec.validate()?;
    let geo = DollGeometry::shifted(spec, dx, dy);
    let keypoints = geo.keypoints();
    for (i, k) in keypoints.0.iter().enumerate().filter(|(_, k)| k.visible) {
        let inside =
            (0.0..IMAGE_SIZE as f32).contains(&k.x) && (0.0..IMAGE_SIZE as f32).contains(&k.y);
        if !inside {
            return Err(Error::validation(
                "pose_params",
                format!("{} falls outside the canvas", joint::NAMES[i]),
            ));
        }
    }
    let skin = lerp3([0.96, 0.80, 0.69], [0.45, 0.30, 0.20], spec.body_tone);
    let (bg, hair) = seed_colors(spec.seed);
    let mut image = RgbImage::new(IMAGE_SIZE, IMAGE_SIZE);
    let mut seg = LabelMap::new(IMAGE_SIZE, IMAGE_SIZE);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let p = Vec2::new(x as f64, y as f64);
            let layer = geo.layers.iter().rev().find(|l| l.contains(p));
            let (label, color) = match layer.map(|l| l.paint) {
                None => (0, bg),
                Some(Paint::Skin) => (LABEL_SKIN, skin),
                Some(Paint::Hair) => (LABEL_HAIR, hair),
                Some(Paint::Top) => (LABEL_TOP, garment_color(&spec.top, x, y)),
                Some(Paint::Bottom) => (LABEL_BOTTOM, garment_color(&spec.bottom, x, y)),
            };
            seg.set(y, x, label);
            image.set_pixel(y, x, color.map(|v| v as f32));
        }
    }
    Ok(Sample {
        image,
        keypoints,
        seg,
        attrs: spec.clone(),
    })
}
