//! Custom CNN backbone and the prediction-head paradigms built on it.
//!
//! The backbone is `(conv, bn, relu, conv, bn, relu, maxpool) × 2` followed by
//! flatten. Heads:
//!
//! * `single_plant` / `single_disease`: one branch (dense, relu, dense, softmax)
//! * `powerset`: one branch over the joint (plant, disease) classes
//! * `multi_output`: a plant branch and a disease branch side by side
//! * `gsmo`: the two branches as a first stage, then cross-connected second
//!   stage heads: plant from `[features, disease probabilities]`, disease from
//!   `[features, plant probabilities]`

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{BatchNormArgs, Mode, Padding, ParamId, Parameter, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::labels::JointLabelSpace;
use crate::tensor::Tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    SinglePlant,
    SingleDisease,
    Powerset,
    MultiOutput,
    Gsmo,
}

impl HeadKind {
    pub fn groups(self) -> &'static [ParamGroup] {
        use ParamGroup::*;
        match self {
            HeadKind::SinglePlant => &[Backbone, PlantBranch],
            HeadKind::SingleDisease => &[Backbone, DiseaseBranch],
            HeadKind::Powerset => &[Backbone, JointBranch],
            HeadKind::MultiOutput => &[Backbone, PlantBranch, DiseaseBranch],
            HeadKind::Gsmo => &[
                Backbone,
                PlantBranch,
                DiseaseBranch,
                PlantHead2,
                DiseaseHead2,
            ],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::SinglePlant => "single_plant",
            HeadKind::SingleDisease => "single_disease",
            HeadKind::Powerset => "powerset",
            HeadKind::MultiOutput => "multi_output",
            HeadKind::Gsmo => "gsmo",
        }
    }
}

/// Named parameter groups; the unit of partial checkpoint loading and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Backbone,
    PlantBranch,
    DiseaseBranch,
    JointBranch,
    PlantHead2,
    DiseaseHead2,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Backbone,
        ParamGroup::PlantBranch,
        ParamGroup::DiseaseBranch,
        ParamGroup::JointBranch,
        ParamGroup::PlantHead2,
        ParamGroup::DiseaseHead2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Backbone => "backbone",
            ParamGroup::PlantBranch => "plant_branch",
            ParamGroup::DiseaseBranch => "disease_branch",
            ParamGroup::JointBranch => "joint_branch",
            ParamGroup::PlantHead2 => "plant_head2",
            ParamGroup::DiseaseHead2 => "disease_head2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown parameter group {s:?}")))
    }
}

pub fn default_pool(extent: usize) -> usize {
    if extent >= 128 {
        8
    } else {
        2
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackboneConfig {
    pub input_extent: usize,
    /// Output channels of the four convolutions.
    pub channels: [usize; 4],
    pub kernel: usize,
    pub pool: usize,
    pub bn_epsilon: f32,
    pub bn_momentum: f32,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::for_extent(32)
    }
}

impl BackboneConfig {
    pub fn for_extent(extent: usize) -> Self {
        BackboneConfig {
            input_extent: extent,
            channels: [32; 4],
            kernel: 3,
            pool: default_pool(extent),
            bn_epsilon: 1e-5,
            bn_momentum: 0.9,
        }
    }

    /// Spatial extent after both pooling stages.
    pub fn pooled_extent(&self) -> usize {
        self.input_extent.div_ceil(self.pool).div_ceil(self.pool)
    }

    pub fn flatten_dim(&self) -> usize {
        self.pooled_extent().pow(2) * self.channels[3]
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) || self.kernel == 0 || self.pool == 0 {
            return Err(Error::Config(format!(
                "backbone needs positive channels, kernel and pool: {self:?}"
            )));
        }
        if !(self.bn_epsilon > 0.0) {
            return Err(Error::Config(format!(
                "batch-norm epsilon {} must be > 0",
                self.bn_epsilon
            )));
        }
        let full_windows = (self.input_extent / (self.pool * self.pool)).pow(2) * self.channels[3];
        if full_windows == 0 {
            return Err(Error::Config(format!(
                "flatten dimension is 0: pool {} is too large for input extent {}",
                self.pool, self.input_extent
            )));
        }
        Ok(())
    }
}

/// Backbone plus the branch hidden width shared by every head kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GsmoConfig {
    pub backbone: BackboneConfig,
    pub hidden: usize,
}

impl Default for GsmoConfig {
    fn default() -> Self {
        GsmoConfig {
            backbone: BackboneConfig::default(),
            hidden: 128,
        }
    }
}

impl GsmoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("branch hidden width must be >= 1".into()));
        }
        self.backbone.validate()
    }
}

/// Name, group, shape and trainability of one parameter slot.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Slot {
    pub name: String,
    pub group: ParamGroup,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Init {
    He { fan_in: usize },
    Zeros,
    Ones,
}

fn branch_slots(slots: &mut Vec<Slot>, group: ParamGroup, input: usize, hidden: usize, out: usize) {
    let g = group.name();
    let mut push = |name: &str, shape: Vec<usize>, init| {
        slots.push(Slot {
            name: format!("{g}.{name}"),
            group,
            shape,
            trainable: true,
            init,
        })
    };
    push(
        "hidden.weight",
        vec![input, hidden],
        Init::He { fan_in: input },
    );
    push("hidden.bias", vec![hidden], Init::Zeros);
    push("out.weight", vec![hidden, out], Init::He { fan_in: hidden });
    push("out.bias", vec![out], Init::Zeros);
}

fn head_slots(slots: &mut Vec<Slot>, group: ParamGroup, input: usize, out: usize) {
    let g = group.name();
    slots.push(Slot {
        name: format!("{g}.weight"),
        group,
        shape: vec![input, out],
        trainable: true,
        init: Init::He { fan_in: input },
    });
    slots.push(Slot {
        name: format!("{g}.bias"),
        group,
        shape: vec![out],
        trainable: true,
        init: Init::Zeros,
    });
}

/// The ordered parameter layout implied by (kind, config, spaces).
pub(crate) fn layout(kind: HeadKind, config: &GsmoConfig, spaces: &JointLabelSpace) -> Vec<Slot> {
    let b = &config.backbone;
    let mut slots = Vec::new();
    let mut cin = 3;
    for (i, &cout) in b.channels.iter().enumerate() {
        let l = i + 1;
        let mut push = |name: String, shape: Vec<usize>, trainable, init| {
            slots.push(Slot {
                name,
                group: ParamGroup::Backbone,
                shape,
                trainable,
                init,
            })
        };
        let fan_in = b.kernel * b.kernel * cin;
        push(
            format!("backbone.conv{l}.kernel"),
            vec![b.kernel, b.kernel, cin, cout],
            true,
            Init::He { fan_in },
        );
        push(
            format!("backbone.conv{l}.bias"),
            vec![cout],
            true,
            Init::Zeros,
        );
        push(
            format!("backbone.bn{l}.gamma"),
            vec![cout],
            true,
            Init::Ones,
        );
        push(
            format!("backbone.bn{l}.beta"),
            vec![cout],
            true,
            Init::Zeros,
        );
        push(
            format!("backbone.bn{l}.running_mean"),
            vec![cout],
            false,
            Init::Zeros,
        );
        push(
            format!("backbone.bn{l}.running_var"),
            vec![cout],
            false,
            Init::Ones,
        );
        cin = cout;
    }
    let f = b.flatten_dim();
    let h = config.hidden;
    let (np, nd, nj) = (spaces.plant().len(), spaces.disease().len(), spaces.len());
    for &group in kind.groups() {
        match group {
            ParamGroup::Backbone => {}
            ParamGroup::PlantBranch => branch_slots(&mut slots, group, f, h, np),
            ParamGroup::DiseaseBranch => branch_slots(&mut slots, group, f, h, nd),
            ParamGroup::JointBranch => branch_slots(&mut slots, group, f, h, nj),
            ParamGroup::PlantHead2 => head_slots(&mut slots, group, f + nd, np),
            ParamGroup::DiseaseHead2 => head_slots(&mut slots, group, f + np, nd),
        }
    }
    slots
}

/// All parameters of one model plus the context needed to run it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    kind: HeadKind,
    config: GsmoConfig,
    spaces: JointLabelSpace,
    params: Vec<Parameter>,
    groups: Vec<ParamGroup>,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub enum Outputs {
    Plant(Var),
    Disease(Var),
    Joint(Var),
    MultiOutput {
        plant: Var,
        disease: Var,
    },
    Gsmo {
        p_temp: Var,
        d_temp: Var,
        p2: Var,
        d2: Var,
    },
}

impl Outputs {
    /// Read the probability tensors back from `tape`.
    pub fn probabilities(&self, tape: &Tape) -> Probabilities {
        let v = |x: Var| tape.value(x).clone();
        match *self {
            Outputs::Plant(p) => Probabilities::Plant(v(p)),
            Outputs::Disease(d) => Probabilities::Disease(v(d)),
            Outputs::Joint(j) => Probabilities::Joint(v(j)),
            Outputs::MultiOutput { plant, disease } => Probabilities::MultiOutput {
                plant: v(plant),
                disease: v(disease),
            },
            Outputs::Gsmo {
                p_temp,
                d_temp,
                p2,
                d2,
            } => Probabilities::Gsmo {
                p_temp: v(p_temp),
                d_temp: v(d_temp),
                p2: v(p2),
                d2: v(d2),
            },
        }
    }
}

/// Running-statistics update produced by a train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: ParamId,
    pub var: ParamId,
    pub stats: RunningStats,
}

pub struct ForwardPass {
    pub outputs: Outputs,
    pub features: Var,
    pub bn_updates: Vec<BnUpdate>,
}

/// Concrete probability tensors (eval convenience).
#[derive(Clone, Debug, PartialEq)]
pub enum Probabilities {
    Plant(Tensor),
    Disease(Tensor),
    Joint(Tensor),
    MultiOutput {
        plant: Tensor,
        disease: Tensor,
    },
    Gsmo {
        p_temp: Tensor,
        d_temp: Tensor,
        p2: Tensor,
        d2: Tensor,
    },
}

impl ModelParams {
    /// Fresh parameters: He-normal weights, zero biases, unit batch-norm scale.
    pub fn init(
        kind: HeadKind,
        config: &GsmoConfig,
        spaces: &JointLabelSpace,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if spaces.is_empty() {
            return Err(Error::Label(
                "cannot build a model over an empty label space".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let slots = layout(kind, config, spaces);
        let mut params = Vec::with_capacity(slots.len());
        let mut groups = Vec::with_capacity(slots.len());
        for (i, slot) in slots.into_iter().enumerate() {
            let n: usize = slot.shape.iter().product();
            let data = match slot.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::He { fan_in } => {
                    let normal = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt())
                        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                }
            };
            params.push(Parameter {
                id: ParamId(i),
                name: slot.name,
                value: Tensor::new(slot.shape, data)?,
                trainable: slot.trainable,
            });
            groups.push(slot.group);
        }
        Ok(ModelParams {
            kind,
            config: config.clone(),
            spaces: spaces.clone(),
            params,
            groups,
        })
    }

    pub(crate) fn from_parts(
        kind: HeadKind,
        config: GsmoConfig,
        spaces: JointLabelSpace,
        values: Vec<(Tensor, bool)>,
    ) -> Result<Self> {
        config.validate()?;
        let slots = layout(kind, &config, &spaces);
        if slots.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} parameters given, layout needs {}",
                values.len(),
                slots.len()
            )));
        }
        let mut params = Vec::with_capacity(slots.len());
        let mut groups = Vec::with_capacity(slots.len());
        for (i, (slot, (value, trainable))) in slots.into_iter().zip(values).enumerate() {
            params.push(Parameter {
                id: ParamId(i),
                name: slot.name,
                value,
                trainable: trainable && slot.trainable,
            });
            groups.push(slot.group);
        }
        Ok(ModelParams {
            kind,
            config,
            spaces,
            params,
            groups,
        })
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn config(&self) -> &GsmoConfig {
        &self.config
    }

    pub fn spaces(&self) -> &JointLabelSpace {
        &self.spaces
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn group_of(&self, id: ParamId) -> ParamGroup {
        self.groups[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of output units across the model's heads.
    pub fn output_units(&self) -> usize {
        let (np, nd, nj) = (
            self.spaces.plant().len(),
            self.spaces.disease().len(),
            self.spaces.len(),
        );
        match self.kind {
            HeadKind::SinglePlant => np,
            HeadKind::SingleDisease => nd,
            HeadKind::Powerset => nj,
            HeadKind::MultiOutput => np + nd,
            HeadKind::Gsmo => 2 * (np + nd),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Stop (or resume) optimizer updates for every parameter in `groups`.
    /// Batch-norm running statistics stay non-trainable regardless.
    pub fn set_trainable(&mut self, groups: &[ParamGroup], trainable: bool) {
        for (p, g) in self.params.iter_mut().zip(&self.groups) {
            if groups.contains(g) && !p.name.contains(".running_") {
                p.trainable = trainable;
            }
        }
    }

    /// Copy the named groups from `donor`, checking label spaces and shapes.
    pub fn load_groups_from(&mut self, donor: &ModelParams, groups: &[ParamGroup]) -> Result<()> {
        use crate::error::CheckpointError as CE;
        let wanted: Vec<ParamGroup> = groups
            .iter()
            .copied()
            .filter(|g| self.kind.groups().contains(g))
            .collect();
        if wanted.contains(&ParamGroup::Backbone) && donor.config.backbone != self.config.backbone {
            return Err(CE::ConfigMismatch {
                field: "backbone".into(),
                detail: format!("{:?} vs {:?}", donor.config.backbone, self.config.backbone),
            }
            .into());
        }
        let plant_dep = [
            ParamGroup::PlantBranch,
            ParamGroup::PlantHead2,
            ParamGroup::DiseaseHead2,
        ];
        let disease_dep = [
            ParamGroup::DiseaseBranch,
            ParamGroup::DiseaseHead2,
            ParamGroup::PlantHead2,
        ];
        for g in &wanted {
            if disease_dep.contains(g) && donor.spaces.disease() != self.spaces.disease() {
                return Err(CE::ConfigMismatch {
                    field: format!("disease head ({})", g.name()),
                    detail: format!(
                        "checkpoint has {} disease classes {:?}, model has {} {:?}",
                        donor.spaces.disease().len(),
                        donor.spaces.disease().names(),
                        self.spaces.disease().len(),
                        self.spaces.disease().names()
                    ),
                }
                .into());
            }
            if plant_dep.contains(g) && donor.spaces.plant() != self.spaces.plant() {
                return Err(CE::ConfigMismatch {
                    field: format!("plant head ({})", g.name()),
                    detail: format!(
                        "checkpoint has {} plant classes {:?}, model has {} {:?}",
                        donor.spaces.plant().len(),
                        donor.spaces.plant().names(),
                        self.spaces.plant().len(),
                        self.spaces.plant().names()
                    ),
                }
                .into());
            }
            if *g == ParamGroup::JointBranch && donor.spaces != self.spaces {
                return Err(CE::ConfigMismatch {
                    field: "joint head (joint_branch)".into(),
                    detail: format!(
                        "checkpoint has {} joint classes, model has {}",
                        donor.spaces.len(),
                        self.spaces.len()
                    ),
                }
                .into());
            }
        }
        let mut staged = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if !wanted.contains(&self.groups[i]) {
                continue;
            }
            let src = donor
                .by_name(&p.name)
                .ok_or_else(|| CE::MissingParameter(p.name.clone()))?;
            if src.value.shape() != p.value.shape() {
                return Err(CE::ShapeMismatch {
                    group: self.groups[i].name().into(),
                    name: p.name.clone(),
                    expected: p.value.shape().to_vec(),
                    found: src.value.shape().to_vec(),
                }
                .into());
            }
            staged.push((i, src.value.clone()));
        }
        for (i, v) in staged {
            self.params[i].value = v;
        }
        Ok(())
    }

    /// Register every parameter on `tape`; frozen ones become constants.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if p.trainable {
                    tape.param(p.id, p.value.clone())
                } else {
                    tape.constant(p.value.clone())
                }
            })
            .collect()
    }

    fn idx(&self, name: &str) -> usize {
        self.params
            .iter()
            .position(|p| p.name == name)
            .unwrap_or_else(|| panic!("parameter {name} missing from layout"))
    }

    fn check_images(&self, images: &Tensor) -> Result<()> {
        let e = self.config.backbone.input_extent;
        let s = images.shape();
        if s.len() != 4 || s[1] != e || s[2] != e || s[3] != 3 {
            return Err(Error::Shape(format!(
                "model expects N×{e}×{e}×3 images, got {s:?}"
            )));
        }
        Ok(())
    }

    fn backbone(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        images: Var,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<Var> {
        let b = &self.config.backbone;
        let mut x = images;
        for l in 1..=4 {
            let k = vars[self.idx(&format!("backbone.conv{l}.kernel"))];
            let bias = vars[self.idx(&format!("backbone.conv{l}.bias"))];
            x = tape.conv2d(x, k, bias, Padding::Same, 1)?;
            let gi = self.idx(&format!("backbone.bn{l}.gamma"));
            let bi = self.idx(&format!("backbone.bn{l}.beta"));
            let mi = self.idx(&format!("backbone.bn{l}.running_mean"));
            let vi = self.idx(&format!("backbone.bn{l}.running_var"));
            let (y, stats) = tape.batch_norm(
                x,
                vars[gi],
                vars[bi],
                BatchNormArgs {
                    mode,
                    running_mean: self.params[mi].value.data(),
                    running_var: self.params[vi].value.data(),
                    epsilon: b.bn_epsilon,
                    momentum: b.bn_momentum,
                },
            )?;
            if let Some(stats) = stats {
                updates.push(BnUpdate {
                    mean: ParamId(mi),
                    var: ParamId(vi),
                    stats,
                });
            }
            x = tape.relu(y);
            if l % 2 == 0 {
                x = tape.maxpool2d(x, b.pool)?;
            }
        }
        tape.flatten(x)
    }

    fn branch(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        group: ParamGroup,
        features: Var,
    ) -> Result<Var> {
        let g = group.name();
        let hw = vars[self.idx(&format!("{g}.hidden.weight"))];
        let hb = vars[self.idx(&format!("{g}.hidden.bias"))];
        let ow = vars[self.idx(&format!("{g}.out.weight"))];
        let ob = vars[self.idx(&format!("{g}.out.bias"))];
        let h = tape.dense(features, hw, hb)?;
        let h = tape.relu(h);
        let logits = tape.dense(h, ow, ob)?;
        Ok(tape.softmax(logits))
    }

    fn head2(&self, tape: &mut Tape, vars: &[Var], group: ParamGroup, input: Var) -> Result<Var> {
        let g = group.name();
        let w = vars[self.idx(&format!("{g}.weight"))];
        let b = vars[self.idx(&format!("{g}.bias"))];
        let logits = tape.dense(input, w, b)?;
        Ok(tape.softmax(logits))
    }

    /// Record the full forward pass on `tape`.
    pub fn forward(&self, tape: &mut Tape, images: &Tensor, mode: Mode) -> Result<ForwardPass> {
        self.check_images(images)?;
        let vars = self.bind(tape);
        let x = tape.constant(images.clone());
        let mut bn_updates = Vec::new();
        let features = self.backbone(tape, &vars, x, mode, &mut bn_updates)?;
        let outputs = match self.kind {
            HeadKind::SinglePlant => {
                Outputs::Plant(self.branch(tape, &vars, ParamGroup::PlantBranch, features)?)
            }
            HeadKind::SingleDisease => {
                Outputs::Disease(self.branch(tape, &vars, ParamGroup::DiseaseBranch, features)?)
            }
            HeadKind::Powerset => {
                Outputs::Joint(self.branch(tape, &vars, ParamGroup::JointBranch, features)?)
            }
            HeadKind::MultiOutput => Outputs::MultiOutput {
                plant: self.branch(tape, &vars, ParamGroup::PlantBranch, features)?,
                disease: self.branch(tape, &vars, ParamGroup::DiseaseBranch, features)?,
            },
            HeadKind::Gsmo => {
                let p_temp = self.branch(tape, &vars, ParamGroup::PlantBranch, features)?;
                let d_temp = self.branch(tape, &vars, ParamGroup::DiseaseBranch, features)?;
                let plant_in = tape.concat(features, d_temp)?;
                let disease_in = tape.concat(features, p_temp)?;
                let p2 = self.head2(tape, &vars, ParamGroup::PlantHead2, plant_in)?;
                let d2 = self.head2(tape, &vars, ParamGroup::DiseaseHead2, disease_in)?;
                Outputs::Gsmo {
                    p_temp,
                    d_temp,
                    p2,
                    d2,
                }
            }
        };
        Ok(ForwardPass {
            outputs,
            features,
            bn_updates,
        })
    }

    /// Flattened backbone features.
    pub fn features(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, images, mode)?;
        Ok(tape.value(pass.features).clone())
    }

    /// Probability outputs of every head.
    pub fn probabilities(&self, images: &Tensor, mode: Mode) -> Result<Probabilities> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, images, mode)?;
        Ok(pass.outputs.probabilities(&tape))
    }

    /// Store running statistics produced by a train-mode pass.
    pub fn apply_bn_updates(&mut self, updates: Vec<BnUpdate>) {
        for u in updates {
            self.params[u.mean.0]
                .value
                .data_mut()
                .copy_from_slice(&u.stats.mean);
            self.params[u.var.0]
                .value
                .data_mut()
                .copy_from_slice(&u.stats.var);
        }
    }

    /// Eval-mode predictions. Joint kinds give both ordinals; single kinds fill
    /// only their own side (the other is `None`).
    pub fn predict(&self, images: &Tensor) -> Result<Vec<(Option<usize>, Option<usize>)>> {
        self.decode(&self.probabilities(images, Mode::Eval)?)
    }

    /// Argmax decoding of head probabilities (ties go to the lowest ordinal).
    pub fn decode(&self, probs: &Probabilities) -> Result<Vec<(Option<usize>, Option<usize>)>> {
        Ok(match probs {
            Probabilities::Plant(p) => p
                .argmax_rows()
                .into_iter()
                .map(|a| (Some(a), None))
                .collect(),
            Probabilities::Disease(d) => d
                .argmax_rows()
                .into_iter()
                .map(|a| (None, Some(a)))
                .collect(),
            Probabilities::Joint(j) => j
                .argmax_rows()
                .into_iter()
                .map(|a| self.spaces.split(a).map(|(p, d)| (Some(p), Some(d))))
                .collect::<Result<_>>()?,
            Probabilities::MultiOutput { plant, disease } => zip_argmax(plant, disease),
            Probabilities::Gsmo { p2, d2, .. } => zip_argmax(p2, d2),
        })
    }
}

fn zip_argmax(p: &Tensor, d: &Tensor) -> Vec<(Option<usize>, Option<usize>)> {
    p.argmax_rows()
        .into_iter()
        .zip(d.argmax_rows())
        .map(|(a, b)| (Some(a), Some(b)))
        .collect()
}

/// A trained model (or pair of models) that produces (plant, disease) predictions.
#[derive(Clone, Debug)]
pub enum Predictor {
    Joint(ModelParams),
    /// The multi-model approach: independent plant and disease networks.
    Pair {
        plant: ModelParams,
        disease: ModelParams,
    },
}

impl Predictor {
    pub fn new(models: Vec<ModelParams>) -> Result<Self> {
        let mut models = models;
        match models.len() {
            1 => {
                let m = models.pop().unwrap();
                match m.kind() {
                    HeadKind::SinglePlant | HeadKind::SingleDisease => Err(Error::Config(format!(
                        "a {} model alone cannot predict both targets",
                        m.kind().name()
                    ))),
                    _ => Ok(Predictor::Joint(m)),
                }
            }
            2 => {
                let b = models.pop().unwrap();
                let a = models.pop().unwrap();
                match (a.kind(), b.kind()) {
                    (HeadKind::SinglePlant, HeadKind::SingleDisease) => Ok(Predictor::Pair {
                        plant: a,
                        disease: b,
                    }),
                    (HeadKind::SingleDisease, HeadKind::SinglePlant) => Ok(Predictor::Pair {
                        plant: b,
                        disease: a,
                    }),
                    (x, y) => Err(Error::Config(format!(
                        "two models must be single_plant + single_disease, got {} + {}",
                        x.name(),
                        y.name()
                    ))),
                }
            }
            n => Err(Error::Config(format!("expected 1 or 2 models, got {n}"))),
        }
    }

    pub fn spaces(&self) -> &JointLabelSpace {
        match self {
            Predictor::Joint(m) => m.spaces(),
            Predictor::Pair { plant, .. } => plant.spaces(),
        }
    }

    pub fn models(&self) -> Vec<&ModelParams> {
        match self {
            Predictor::Joint(m) => vec![m],
            Predictor::Pair { plant, disease } => vec![plant, disease],
        }
    }

    pub fn extent(&self) -> usize {
        self.models()[0].config().backbone.input_extent
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<(usize, usize)>> {
        match self {
            Predictor::Joint(m) => Ok(m
                .predict(images)?
                .into_iter()
                .map(|(p, d)| (p.unwrap(), d.unwrap()))
                .collect()),
            Predictor::Pair { plant, disease } => {
                let ps = plant.predict(images)?;
                let ds = disease.predict(images)?;
                Ok(ps
                    .into_iter()
                    .zip(ds)
                    .map(|((p, _), (_, d))| (p.unwrap(), d.unwrap()))
                    .collect())
            }
        }
    }
}
