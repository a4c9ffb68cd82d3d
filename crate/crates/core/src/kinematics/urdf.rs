//! URDF assembly: canonical writer, parser and structural validation.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meshops::{fmt_sig9, write_obj};
use crate::model::{ArticulationSpec, Mesh, MotionType, Vec3};

pub const DEFAULT_EFFORT: f64 = 100.0;
pub const DEFAULT_VELOCITY: f64 = 1.0;
pub const BASE_LINK: &str = "base_link";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UrdfJointType {
    Revolute,
    Continuous,
    Prismatic,
}

impl UrdfJointType {
    pub fn as_str(&self) -> &'static str {
        match self {
            UrdfJointType::Revolute => "revolute",
            UrdfJointType::Continuous => "continuous",
            UrdfJointType::Prismatic => "prismatic",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "revolute" => Some(Self::Revolute),
            "continuous" => Some(Self::Continuous),
            "prismatic" => Some(Self::Prismatic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrdfLink {
    pub name: String,
    /// OBJ file name relative to the URDF.
    pub mesh: String,
    /// Offset placing world-space mesh vertices in the link frame.
    pub visual_origin: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrdfJoint {
    pub name: String,
    pub joint_type: UrdfJointType,
    pub parent: String,
    pub child: String,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
    /// `(lower, upper)`; absent for continuous joints.
    pub limit: Option<(f64, f64)>,
    pub effort: f64,
    pub velocity: f64,
}

impl UrdfJoint {
    /// Articulation described by this joint, in URDF units.
    pub fn to_spec(&self) -> Result<ArticulationSpec> {
        let axis = Vec3::from(self.axis);
        let pivot = Vec3::from(self.origin);
        match self.joint_type {
            UrdfJointType::Continuous => ArticulationSpec::continuous(pivot, axis),
            UrdfJointType::Revolute => ArticulationSpec::rotation(pivot, axis, self.limit.map_or(0.0, |l| l.1)),
            UrdfJointType::Prismatic => ArticulationSpec::translation(axis, self.limit.map_or(0.0, |l| l.1)),
        }
    }
}

/// Base link first, then one link per movable part.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrdfAssembly {
    pub name: String,
    pub links: Vec<UrdfLink>,
    pub joints: Vec<UrdfJoint>,
}

fn round9(x: f64) -> f64 {
    fmt_sig9(x).parse().unwrap_or(x)
}

fn round3(v: &Vec3) -> [f64; 3] {
    [round9(v.x), round9(v.y), round9(v.z)]
}

fn xyz(v: &[f64; 3]) -> String {
    format!("{} {} {}", fmt_sig9(v[0]), fmt_sig9(v[1]), fmt_sig9(v[2]))
}

impl UrdfAssembly {
    /// Assembly for `movables` named `(link, joint)`; values are rounded to
    /// the 9 significant digits the XML carries.
    pub fn build(name: &str, movables: &[(String, String, ArticulationSpec)]) -> Result<Self> {
        let mut seen_links: HashSet<&str> = HashSet::from([BASE_LINK]);
        let mut seen_joints: HashSet<&str> = HashSet::new();
        let mut links = vec![UrdfLink {
            name: BASE_LINK.into(),
            mesh: format!("{BASE_LINK}.obj"),
            visual_origin: [0.0; 3],
        }];
        let mut joints = Vec::new();
        for (link, joint, spec) in movables {
            if !seen_links.insert(link) {
                return Err(Error::NameCollision(link.clone()));
            }
            if !seen_joints.insert(joint) {
                return Err(Error::NameCollision(joint.clone()));
            }
            let (joint_type, origin, limit) = match spec.motion_type() {
                MotionType::Rotation { continuous: true } => (UrdfJointType::Continuous, spec.pivot(), None),
                MotionType::Rotation { continuous: false } => {
                    (UrdfJointType::Revolute, spec.pivot(), Some((0.0, round9(spec.range_max()))))
                }
                MotionType::Translation => {
                    (UrdfJointType::Prismatic, Vec3::zeros(), Some((0.0, round9(spec.range_max()))))
                }
            };
            let origin = round3(&origin);
            links.push(UrdfLink {
                name: link.clone(),
                mesh: format!("{link}.obj"),
                visual_origin: origin.map(|c| if c == 0.0 { 0.0 } else { -c }),
            });
            joints.push(UrdfJoint {
                name: joint.clone(),
                joint_type,
                parent: BASE_LINK.into(),
                child: link.clone(),
                origin,
                axis: round3(&spec.axis()),
                limit,
                effort: DEFAULT_EFFORT,
                velocity: DEFAULT_VELOCITY,
            });
        }
        Ok(Self {
            name: name.to_string(),
            links,
            joints,
        })
    }

    /// Canonical XML: 2-space indent, fixed attribute order.
    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(s, "<robot name=\"{}\">", esc(&self.name));
        for l in &self.links {
            let _ = writeln!(s, "  <link name=\"{}\">", esc(&l.name));
            s.push_str("    <inertial>\n");
            s.push_str("      <origin xyz=\"0 0 0\" rpy=\"0 0 0\"/>\n");
            s.push_str("      <mass value=\"1\"/>\n");
            s.push_str("      <inertia ixx=\"1\" ixy=\"0\" ixz=\"0\" iyy=\"1\" iyz=\"0\" izz=\"1\"/>\n");
            s.push_str("    </inertial>\n");
            for tag in ["visual", "collision"] {
                let _ = writeln!(s, "    <{tag}>");
                let _ = writeln!(s, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(&l.visual_origin));
                s.push_str("      <geometry>\n");
                let _ = writeln!(s, "        <mesh filename=\"{}\"/>", esc(&l.mesh));
                s.push_str("      </geometry>\n");
                let _ = writeln!(s, "    </{tag}>");
            }
            s.push_str("  </link>\n");
        }
        for j in &self.joints {
            let _ = writeln!(s, "  <joint name=\"{}\" type=\"{}\">", esc(&j.name), j.joint_type.as_str());
            let _ = writeln!(s, "    <origin xyz=\"{}\" rpy=\"0 0 0\"/>", xyz(&j.origin));
            let _ = writeln!(s, "    <parent link=\"{}\"/>", esc(&j.parent));
            let _ = writeln!(s, "    <child link=\"{}\"/>", esc(&j.child));
            let _ = writeln!(s, "    <axis xyz=\"{}\"/>", xyz(&j.axis));
            match j.limit {
                Some((lo, hi)) => {
                    let _ = writeln!(
                        s,
                        "    <limit lower=\"{}\" upper=\"{}\" effort=\"{}\" velocity=\"{}\"/>",
                        fmt_sig9(lo),
                        fmt_sig9(hi),
                        fmt_sig9(j.effort),
                        fmt_sig9(j.velocity)
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "    <limit effort=\"{}\" velocity=\"{}\"/>",
                        fmt_sig9(j.effort),
                        fmt_sig9(j.velocity)
                    );
                }
            }
            s.push_str("  </joint>\n");
        }
        s.push_str("</robot>\n");
        s
    }

    /// Parses and validates a URDF document.
    pub fn parse(xml: &str) -> Result<Self> {
        let doc = roxmltree::Document::parse(xml).map_err(|e| Error::Parse {
            line: e.pos().row as usize,
            msg: e.to_string(),
        })?;
        let root = doc.root_element();
        if root.tag_name().name() != "robot" {
            return Err(invalid(root, "root element must be <robot>"));
        }
        let name = attr(root, "name")?.to_string();
        let mut links = Vec::new();
        let mut joints = Vec::new();
        for node in root.children().filter(|n| n.is_element()) {
            match node.tag_name().name() {
                "link" => {
                    let visual = child(node, "visual")?;
                    let mesh = child(child(visual, "geometry")?, "mesh")?;
                    let origin = match visual.children().find(|c| c.has_tag_name("origin")) {
                        Some(o) => parse_vec(o, "xyz")?,
                        None => [0.0; 3],
                    };
                    links.push(UrdfLink {
                        name: attr(node, "name")?.to_string(),
                        mesh: attr(mesh, "filename")?.to_string(),
                        visual_origin: origin,
                    });
                }
                "joint" => {
                    let ty = attr(node, "type")?;
                    let joint_type = UrdfJointType::parse(ty)
                        .ok_or_else(|| invalid(node, &format!("unsupported joint type `{ty}`")))?;
                    let origin = match node.children().find(|c| c.has_tag_name("origin")) {
                        Some(o) => parse_vec(o, "xyz")?,
                        None => [0.0; 3],
                    };
                    let axis = parse_vec(child(node, "axis")?, "xyz")?;
                    let limit_node = node.children().find(|c| c.has_tag_name("limit"));
                    let (limit, effort, velocity) = match limit_node {
                        Some(l) => {
                            let lim = match (l.attribute("lower"), l.attribute("upper")) {
                                (Some(_), Some(_)) => Some((num(l, "lower")?, num(l, "upper")?)),
                                _ => None,
                            };
                            (lim, num(l, "effort")?, num(l, "velocity")?)
                        }
                        None => (None, DEFAULT_EFFORT, DEFAULT_VELOCITY),
                    };
                    joints.push(UrdfJoint {
                        name: attr(node, "name")?.to_string(),
                        joint_type,
                        parent: attr(child(node, "parent")?, "link")?.to_string(),
                        child: attr(child(node, "child")?, "link")?.to_string(),
                        origin,
                        axis,
                        limit,
                        effort,
                        velocity,
                    });
                }
                _ => {}
            }
        }
        let asm = Self { name, links, joints };
        asm.validate()?;
        Ok(asm)
    }

    /// Structural checks: unique names, known parent/child links, a single
    /// root, unit axes and limits where the joint type requires them.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for l in &self.links {
            if !names.insert(l.name.as_str()) {
                return Err(Error::NameCollision(l.name.clone()));
            }
            if l.mesh.is_empty() {
                return Err(Error::InvalidInput(format!("link {} has no mesh", l.name)));
            }
        }
        let mut joint_names = HashSet::new();
        let mut parent_of: HashMap<&str, &str> = HashMap::new();
        for j in &self.joints {
            if !joint_names.insert(j.name.as_str()) {
                return Err(Error::NameCollision(j.name.clone()));
            }
            for l in [&j.parent, &j.child] {
                if !names.contains(l.as_str()) {
                    return Err(Error::InvalidInput(format!("joint {} references unknown link {l}", j.name)));
                }
            }
            if parent_of.insert(&j.child, &j.parent).is_some() {
                return Err(Error::InvalidInput(format!("link {} has two parents", j.child)));
            }
            let a = Vec3::from(j.axis);
            if (a.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidInput(format!("joint {} axis is not unit length", j.name)));
            }
            match (j.joint_type, j.limit) {
                (UrdfJointType::Continuous, _) => {}
                (_, Some((lo, hi))) if lo <= hi => {}
                _ => return Err(Error::InvalidInput(format!("joint {} needs lower ≤ upper limits", j.name))),
            }
        }
        let roots = self.links.iter().filter(|l| !parent_of.contains_key(l.name.as_str())).count();
        if roots != 1 {
            return Err(Error::InvalidInput(format!("expected one root link, found {roots}")));
        }
        // walking parents from any link must terminate at the root
        for l in &self.links {
            let mut cur = l.name.as_str();
            for _ in 0..=self.links.len() {
                match parent_of.get(cur) {
                    Some(p) => cur = p,
                    None => break,
                }
            }
            if parent_of.contains_key(cur) {
                return Err(Error::InvalidInput("joint graph has a cycle".into()));
            }
        }
        Ok(())
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('"', "&quot;").replace('<', "&lt;").replace('>', "&gt;")
}

fn invalid(node: roxmltree::Node, msg: &str) -> Error {
    let pos = node.document().text_pos_at(node.range().start);
    Error::Parse {
        line: pos.row as usize,
        msg: msg.to_string(),
    }
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str> {
    node.attribute(name)
        .ok_or_else(|| invalid(node, &format!("<{}> missing `{name}`", node.tag_name().name())))
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Result<roxmltree::Node<'a, 'i>> {
    node.children()
        .find(|c| c.has_tag_name(tag))
        .ok_or_else(|| invalid(node, &format!("<{}> missing <{tag}>", node.tag_name().name())))
}

fn num(node: roxmltree::Node, name: &str) -> Result<f64> {
    let s = attr(node, name)?;
    s.trim().parse().map_err(|_| invalid(node, &format!("`{name}` is not a number: {s}")))
}

fn parse_vec(node: roxmltree::Node, name: &str) -> Result<[f64; 3]> {
    let s = attr(node, name)?;
    let v: Vec<f64> = s
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| invalid(node, &format!("`{name}` is not a vector: {s}")))?;
    <[f64; 3]>::try_from(v).map_err(|_| invalid(node, &format!("`{name}` needs 3 components")))
}

/// Writes `model.urdf` and one OBJ per link into `out_dir` with default
/// names (`link_k`, `joint_k`, 1-based).
pub fn export_urdf(base: &Mesh, movables: &[(Mesh, ArticulationSpec)], out_dir: &Path) -> Result<UrdfAssembly> {
    let named: Vec<(String, String, Mesh, ArticulationSpec)> = movables
        .iter()
        .enumerate()
        .map(|(k, (m, s))| (format!("link_{}", k + 1), format!("joint_{}", k + 1), m.clone(), s.clone()))
        .collect();
    export_urdf_named("articulated_object", base, &named, out_dir)
}

pub fn export_urdf_named(
    name: &str,
    base: &Mesh,
    movables: &[(String, String, Mesh, ArticulationSpec)],
    out_dir: &Path,
) -> Result<UrdfAssembly> {
    let specs: Vec<(String, String, ArticulationSpec)> =
        movables.iter().map(|(l, j, _, s)| (l.clone(), j.clone(), s.clone())).collect();
    let asm = UrdfAssembly::build(name, &specs)?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join(&asm.links[0].mesh), write_obj(base))?;
    for (link, (_, _, mesh, _)) in asm.links[1..].iter().zip(movables) {
        std::fs::write(out_dir.join(&link.mesh), write_obj(mesh))?;
    }
    std::fs::write(out_dir.join("model.urdf"), asm.to_xml())?;
    Ok(asm)
}
