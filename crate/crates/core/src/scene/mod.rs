//! The scene tree.
//!
//! Nodes form a strict tree: every node except the root has exactly one
//! parent, and children keep their insertion order. Rendering consumes an
//! immutable [`SceneSnapshot`], the visible nodes flattened in pre-order with
//! their world matrices.

mod transform;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix4, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use transform::Transform;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("attaching {node} under {parent} would create a cycle")]
    CycleError { node: NodeId, parent: NodeId },
    #[error("the root node cannot be removed")]
    RootRemoval,
    #[error("invalid transform: {0}")]
    InvalidTransform(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u64);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Identifies a loaded volume pyramid in the render resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VolumeId(pub u64);

/// Identifies a transfer function in the render resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TfId(pub u64);

/// Identifies a sample filter in the render resources.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FilterId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Straight (non-premultiplied) RGBA.
    pub color: [f64; 4],
}

impl Mesh {
    pub fn new(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>, color: [f64; 4]) -> Result<Self, SceneError> {
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= vertices.len())) {
            return Err(SceneError::InvalidMesh(format!("triangle {t:?} indexes past {} vertices", vertices.len())));
        }
        Ok(Self { vertices, triangles, color })
    }

    /// An axis-aligned square in the plane `z`, centered on the z axis.
    pub fn quad_xy(half_extent: f64, z: f64, color: [f64; 4]) -> Self {
        let h = half_extent;
        Self {
            vertices: vec![
                Vector3::new(-h, -h, z),
                Vector3::new(h, -h, z),
                Vector3::new(h, h, z),
                Vector3::new(-h, h, z),
            ],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            color,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub color: [f64; 4],
}

/// A volume placed in the scene. Volume-local space spans
/// `[0, dims0 * voxel_size]` on each axis, in the pyramid's physical units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VolumeRef {
    pub volume: VolumeId,
    pub channel: u32,
    pub timepoint: u32,
    pub transfer_function: TfId,
    /// Overrides the frame's default sample filter when set.
    pub filter: Option<FilterId>,
}

/// Pinhole camera looking down its local -Z axis with +Y up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub near: f64,
    pub far: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self { fov_y: 45f64.to_radians(), near: 0.01, far: 1.0e6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionalLight {
    /// Direction the light travels, in node-local space.
    pub direction: Vector3<f64>,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Group,
    Mesh(Mesh),
    PointCloud(PointCloud),
    Volume(VolumeRef),
    Camera(Camera),
    DirectionalLight(DirectionalLight),
}

#[derive(Debug, Clone)]
pub struct SceneNode {
    pub id: NodeId,
    pub name: String,
    pub transform: Transform,
    pub visible: bool,
    pub payload: Arc<Payload>,
    children: Vec<NodeId>,
    parent: Option<NodeId>,
}

impl SceneNode {
    pub fn children(&self) -> &[NodeId] {
        &self.children
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }
}

/// One visible node with its world matrix, as handed to renderers.
#[derive(Debug, Clone)]
pub struct FlatRenderItem {
    pub id: NodeId,
    pub name: String,
    pub world: Matrix4<f64>,
    pub payload: Arc<Payload>,
}

/// Immutable pre-order list of visible nodes.
#[derive(Debug, Clone, Default)]
pub struct SceneSnapshot {
    pub items: Vec<FlatRenderItem>,
}

impl SceneSnapshot {
    pub fn item(&self, id: NodeId) -> Option<&FlatRenderItem> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn cameras(&self) -> impl Iterator<Item = (&FlatRenderItem, &Camera)> {
        self.items.iter().filter_map(|i| match &*i.payload {
            Payload::Camera(c) => Some((i, c)),
            _ => None,
        })
    }

    pub fn volumes(&self) -> impl Iterator<Item = (&FlatRenderItem, &VolumeRef)> {
        self.items.iter().filter_map(|i| match &*i.payload {
            Payload::Volume(v) => Some((i, v)),
            _ => None,
        })
    }

    pub fn meshes(&self) -> impl Iterator<Item = (&FlatRenderItem, &Mesh)> {
        self.items.iter().filter_map(|i| match &*i.payload {
            Payload::Mesh(m) => Some((i, m)),
            _ => None,
        })
    }

    pub fn point_clouds(&self) -> impl Iterator<Item = (&FlatRenderItem, &PointCloud)> {
        self.items.iter().filter_map(|i| match &*i.payload {
            Payload::PointCloud(p) => Some((i, p)),
            _ => None,
        })
    }

    pub fn lights(&self) -> impl Iterator<Item = (&FlatRenderItem, &DirectionalLight)> {
        self.items.iter().filter_map(|i| match &*i.payload {
            Payload::DirectionalLight(l) => Some((i, l)),
            _ => None,
        })
    }
}

/// A tree of nodes. Mutation is single-writer (`&mut self`); traversal takes
/// `&self` and is safe from any number of readers.
#[derive(Debug, Clone)]
pub struct Scene {
    nodes: HashMap<NodeId, SceneNode>,
    root: NodeId,
    next_id: u64,
}

impl Default for Scene {
    fn default() -> Self {
        Self::new()
    }
}

impl Scene {
    /// A scene holding only a root group.
    pub fn new() -> Self {
        let root = NodeId(0);
        let mut nodes = HashMap::new();
        nodes.insert(
            root,
            SceneNode {
                id: root,
                name: "root".into(),
                transform: Transform::IDENTITY,
                visible: true,
                payload: Arc::new(Payload::Group),
                children: Vec::new(),
                parent: None,
            },
        );
        Self { nodes, root, next_id: 1 }
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, id: NodeId) -> Result<&SceneNode, SceneError> {
        self.nodes.get(&id).ok_or(SceneError::UnknownNode(id))
    }

    fn node_mut(&mut self, id: NodeId) -> Result<&mut SceneNode, SceneError> {
        self.nodes.get_mut(&id).ok_or(SceneError::UnknownNode(id))
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// All node ids in ascending order.
    pub fn ids(&self) -> Vec<NodeId> {
        let mut ids: Vec<_> = self.nodes.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Append a new node as the last child of `parent`.
    pub fn add(
        &mut self,
        parent: NodeId,
        name: impl Into<String>,
        transform: Transform,
        payload: Payload,
    ) -> Result<NodeId, SceneError> {
        self.node(parent)?;
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.nodes.insert(
            id,
            SceneNode {
                id,
                name: name.into(),
                transform,
                visible: true,
                payload: Arc::new(payload),
                children: Vec::new(),
                parent: Some(parent),
            },
        );
        self.node_mut(parent)?.children.push(id);
        Ok(id)
    }

    pub fn set_transform(&mut self, id: NodeId, transform: Transform) -> Result<(), SceneError> {
        self.node_mut(id)?.transform = transform;
        Ok(())
    }

    pub fn set_visible(&mut self, id: NodeId, visible: bool) -> Result<(), SceneError> {
        self.node_mut(id)?.visible = visible;
        Ok(())
    }

    pub fn set_payload(&mut self, id: NodeId, payload: Payload) -> Result<(), SceneError> {
        self.node_mut(id)?.payload = Arc::new(payload);
        Ok(())
    }

    pub fn is_ancestor(&self, ancestor: NodeId, mut node: NodeId) -> bool {
        while let Some(parent) = self.nodes.get(&node).and_then(|n| n.parent) {
            if parent == ancestor {
                return true;
            }
            node = parent;
        }
        false
    }

    /// Move `node` (with its subtree) to the end of `new_parent`'s children.
    pub fn attach(&mut self, node: NodeId, new_parent: NodeId) -> Result<(), SceneError> {
        self.node(node)?;
        self.node(new_parent)?;
        if node == new_parent || self.is_ancestor(node, new_parent) || node == self.root {
            return Err(SceneError::CycleError { node, parent: new_parent });
        }
        let old_parent = self.node(node)?.parent.expect("non-root nodes have a parent");
        self.node_mut(old_parent)?.children.retain(|&c| c != node);
        self.node_mut(new_parent)?.children.push(node);
        self.node_mut(node)?.parent = Some(new_parent);
        Ok(())
    }

    /// Remove `node` and its whole subtree. Returns the removed ids.
    pub fn remove(&mut self, node: NodeId) -> Result<Vec<NodeId>, SceneError> {
        if node == self.root {
            return Err(SceneError::RootRemoval);
        }
        let parent = self.node(node)?.parent.expect("non-root nodes have a parent");
        self.node_mut(parent)?.children.retain(|&c| c != node);
        let mut removed = Vec::new();
        let mut stack = vec![node];
        while let Some(id) = stack.pop() {
            let n = self.nodes.remove(&id).expect("subtree nodes exist");
            stack.extend(n.children.iter().rev());
            removed.push(id);
        }
        Ok(removed)
    }

    /// Product of local matrices along the root-to-node path, root first.
    pub fn world_matrix(&self, id: NodeId) -> Result<Matrix4<f64>, SceneError> {
        let mut m = self.node(id)?.transform.local_matrix();
        let mut cur = self.node(id)?.parent;
        while let Some(p) = cur {
            let n = self.node(p)?;
            m = n.transform.local_matrix() * m;
            cur = n.parent;
        }
        Ok(m)
    }

    /// World matrix of every node, computed top-down in one pass.
    pub fn world_transforms(&self) -> HashMap<NodeId, Matrix4<f64>> {
        let mut out = HashMap::with_capacity(self.nodes.len());
        let mut stack = vec![(self.root, Matrix4::identity())];
        while let Some((id, parent_world)) = stack.pop() {
            let node = &self.nodes[&id];
            let world = parent_world * node.transform.local_matrix();
            stack.extend(node.children.iter().map(|&c| (c, world)));
            out.insert(id, world);
        }
        out
    }

    fn flatten_from(&self, start: NodeId, parent_world: Matrix4<f64>, out: &mut Vec<FlatRenderItem>) {
        let mut stack = vec![(start, parent_world)];
        while let Some((id, parent_world)) = stack.pop() {
            let node = &self.nodes[&id];
            if !node.visible {
                continue;
            }
            let world = parent_world * node.transform.local_matrix();
            out.push(FlatRenderItem { id, name: node.name.clone(), world, payload: node.payload.clone() });
            stack.extend(node.children.iter().rev().map(|&c| (c, world)));
        }
    }

    /// Visible nodes in pre-order (children in insertion order). An invisible
    /// node hides its entire subtree.
    pub fn flatten_visible(&self) -> SceneSnapshot {
        let mut items = Vec::new();
        self.flatten_from(self.root, Matrix4::identity(), &mut items);
        SceneSnapshot { items }
    }

    /// Same result as [`Scene::flatten_visible`], with the root's subtrees
    /// discovered on the rayon pool.
    pub fn flatten_visible_parallel(&self) -> SceneSnapshot {
        let root = &self.nodes[&self.root];
        if !root.visible {
            return SceneSnapshot::default();
        }
        let root_world = root.transform.local_matrix();
        let mut items = vec![FlatRenderItem {
            id: self.root,
            name: root.name.clone(),
            world: root_world,
            payload: root.payload.clone(),
        }];
        let parts: Vec<Vec<FlatRenderItem>> = root
            .children
            .par_iter()
            .map(|&child| {
                let mut part = Vec::new();
                self.flatten_from(child, root_world, &mut part);
                part
            })
            .collect();
        items.extend(parts.into_iter().flatten());
        SceneSnapshot { items }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(snapshot: &SceneSnapshot) -> Vec<NodeId> {
        snapshot.items.iter().map(|i| i.id).collect()
    }

    #[test]
    fn flatten_order_and_pruning() {
        let mut s = Scene::new();
        let root = s.root();
        let a = s.add(root, "a", Transform::IDENTITY, Payload::Group).unwrap();
        let b = s.add(root, "b", Transform::IDENTITY, Payload::Group).unwrap();
        let a1 = s.add(a, "a1", Transform::IDENTITY, Payload::Group).unwrap();
        assert_eq!(ids(&s.flatten_visible()), vec![root, a, a1, b]);
        s.set_visible(a, false).unwrap();
        assert_eq!(ids(&s.flatten_visible()), vec![root, b]);
        assert_eq!(ids(&s.flatten_visible_parallel()), vec![root, b]);
    }

    #[test]
    fn translations_compose() {
        let mut s = Scene::new();
        let a = s.add(s.root(), "a", Transform::from_translation(1.0, 0.0, 0.0), Payload::Group).unwrap();
        let b = s.add(a, "b", Transform::from_translation(0.0, 1.0, 0.0), Payload::Group).unwrap();
        let w = s.world_transforms()[&b];
        assert_eq!((w[(0, 3)], w[(1, 3)], w[(2, 3)]), (1.0, 1.0, 0.0));
        assert_eq!(s.world_matrix(b).unwrap(), w);
    }

    #[test]
    fn attach_moves_between_parents() {
        let mut s = Scene::new();
        let root = s.root();
        let a = s.add(root, "a", Transform::IDENTITY, Payload::Group).unwrap();
        let b = s.add(root, "b", Transform::IDENTITY, Payload::Group).unwrap();
        s.attach(b, a).unwrap();
        assert_eq!(s.node(root).unwrap().children(), &[a]);
        assert_eq!(s.node(a).unwrap().children(), &[b]);
        assert_eq!(s.node(b).unwrap().parent(), Some(a));
    }

    #[test]
    fn attach_rejects_cycles() {
        let mut s = Scene::new();
        let a = s.add(s.root(), "a", Transform::IDENTITY, Payload::Group).unwrap();
        let b = s.add(a, "b", Transform::IDENTITY, Payload::Group).unwrap();
        let c = s.add(b, "c", Transform::IDENTITY, Payload::Group).unwrap();
        assert_eq!(s.attach(a, c), Err(SceneError::CycleError { node: a, parent: c }));
        assert_eq!(s.attach(a, a), Err(SceneError::CycleError { node: a, parent: a }));
        assert!(matches!(s.attach(s.root(), a), Err(SceneError::CycleError { .. })));
        assert_eq!(s.attach(a, NodeId(99)), Err(SceneError::UnknownNode(NodeId(99))));
    }

    #[test]
    fn remove_drops_subtree() {
        let mut s = Scene::new();
        let a = s.add(s.root(), "a", Transform::IDENTITY, Payload::Group).unwrap();
        let b = s.add(a, "b", Transform::IDENTITY, Payload::Group).unwrap();
        assert_eq!(s.remove(a).unwrap(), vec![a, b]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.remove(s.root()), Err(SceneError::RootRemoval));
    }

    #[test]
    fn invalid_mesh_indices() {
        assert!(Mesh::new(vec![Vector3::zeros(); 2], vec![[0, 1, 2]], [1.0; 4]).is_err());
    }
}
