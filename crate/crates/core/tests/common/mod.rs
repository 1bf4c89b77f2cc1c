//! Independent reference implementations shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{Matrix4, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use oocv::cache::{BlockCache, CacheConfig};
use oocv::graph::{PassDesc, PassKind, PipelineDesc, DISPLAY};
use oocv::render::{RenderSettings, TransferFunction};
use oocv::scene::{NodeId, Payload, Scene, Transform, VolumeId};
use oocv::service::{decode_message, encode_message, CameraState, Session, SessionConfig, WireMessage};
use oocv::volume::{Block, BlockKey, BlockSource, ProceduralSource, ProceduralSpec, VolumeMeta};

// ---------------------------------------------------------------- volumes

pub fn warm_cache(source: Arc<dyn BlockSource>, capacity: u64) -> Arc<BlockCache> {
    let cache = BlockCache::new(source, CacheConfig { capacity }).unwrap();
    for key in cache.meta().clone().all_keys() {
        cache.request(&key).unwrap();
    }
    cache.pump_all().unwrap();
    Arc::new(cache)
}

/// Level-0 voxels of one channel/timepoint, x fastest.
pub fn dense_level0(src: &ProceduralSource, channel: u32, timepoint: u32) -> (Vec<u16>, [usize; 3]) {
    let d = src.meta().dims0;
    let mut out = Vec::with_capacity((d[0] * d[1] * d[2]) as usize);
    for z in 0..d[2] {
        for y in 0..d[1] {
            for x in 0..d[0] {
                out.push(src.value(0, [x, y, z], channel, timepoint));
            }
        }
    }
    (out, d.map(|v| v as usize))
}

/// Wraps a source and fails loudly when a block is read while `allowed` is
/// false. Used to prove that rendering never loads synchronously.
pub struct GuardedSource {
    inner: Arc<dyn BlockSource>,
    pub allowed: AtomicBool,
    pub violations: AtomicU64,
    pub reads: AtomicU64,
}

impl GuardedSource {
    pub fn new(inner: Arc<dyn BlockSource>) -> Arc<Self> {
        Arc::new(Self {
            inner,
            allowed: AtomicBool::new(false),
            violations: AtomicU64::new(0),
            reads: AtomicU64::new(0),
        })
    }

    pub fn with_io<R>(&self, f: impl FnOnce() -> R) -> R {
        self.allowed.store(true, Ordering::SeqCst);
        let r = f();
        self.allowed.store(false, Ordering::SeqCst);
        r
    }
}

impl BlockSource for GuardedSource {
    fn meta(&self) -> &VolumeMeta {
        self.inner.meta()
    }

    fn read_block(&self, key: &BlockKey) -> oocv::volume::Result<Block> {
        self.reads.fetch_add(1, Ordering::SeqCst);
        if !self.allowed.load(Ordering::SeqCst) {
            self.violations.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.read_block(key)
    }
}

// ---------------------------------------------------------------- raycaster oracle

/// Straightforward dense-array raycaster: level 0 only, one volume centered
/// on the origin with unit voxels, no cache and no blocks.
pub struct DenseOracle<'a> {
    pub data: &'a [u16],
    pub dims: [usize; 3],
    pub norm: f64,
    pub tf: &'a TransferFunction,
    pub camera: CameraState,
    pub step: f64,
    pub reference_step: f64,
    pub background: [f64; 4],
    pub early_termination: f64,
    pub mip: bool,
}

fn tf_eval(tf: &TransferFunction, s: f64) -> [f64; 4] {
    let pts = tf.points();
    let s = s.clamp(0.0, 1.0);
    for w in pts.windows(2) {
        if s >= w[0].x && s < w[1].x {
            let f = (s - w[0].x) / (w[1].x - w[0].x);
            return [0, 1, 2, 3].map(|c| w[0].rgba[c] + f * (w[1].rgba[c] - w[0].rgba[c]));
        }
    }
    pts[pts.len() - 1].rgba
}

impl DenseOracle<'_> {
    fn voxel(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[(z * self.dims[1] + y) * self.dims[0] + x] as f64
    }

    fn trilinear(&self, p: [f64; 3]) -> f64 {
        let mut i0 = [0usize; 3];
        let mut i1 = [0usize; 3];
        let mut f = [0f64; 3];
        for a in 0..3 {
            let u = p[a] - 0.5;
            let fl = u.floor();
            f[a] = u - fl;
            let max = (self.dims[a] - 1) as f64;
            i0[a] = fl.clamp(0.0, max) as usize;
            i1[a] = (fl + 1.0).clamp(0.0, max) as usize;
        }
        let mut v = 0.0;
        for n in 0..8 {
            let pick = |a: usize| n >> a & 1 == 1;
            let w: f64 = (0..3).map(|a| if pick(a) { f[a] } else { 1.0 - f[a] }).product();
            let idx: Vec<usize> = (0..3).map(|a| if pick(a) { i1[a] } else { i0[a] }).collect();
            v += w * self.voxel(idx[0], idx[1], idx[2]);
        }
        v / self.norm
    }

    /// Premultiplied RGBA per pixel, row 0 at the top.
    pub fn render(&self, width: u32, height: u32) -> Vec<[f64; 4]> {
        let c = &self.camera;
        let eye = Vector3::from(c.position);
        let f = (Vector3::from(c.target) - eye).normalize();
        let right = f.cross(&Vector3::from(c.up)).normalize();
        let up = right.cross(&f);
        let ty = (c.fov.to_radians() / 2.0).tan();
        let tx = ty * width as f64 / height as f64;
        let half = self.dims.map(|d| d as f64 / 2.0);
        let bg = self.background;
        let bg = [bg[0] * bg[3], bg[1] * bg[3], bg[2] * bg[3], bg[3]];
        let mut out = Vec::with_capacity((width * height) as usize);
        for j in 0..height {
            for i in 0..width {
                let sx = (2.0 * (i as f64 + 0.5) / width as f64 - 1.0) * tx;
                let sy = (1.0 - 2.0 * (j as f64 + 0.5) / height as f64) * ty;
                let d = (f + right * sx + up * sy).normalize();
                let acc = self.march(&eye, &d, half);
                out.push([0, 1, 2, 3].map(|k| acc[k] + (1.0 - acc[3]) * bg[k]));
            }
        }
        out
    }

    fn march(&self, eye: &Vector3<f64>, d: &Vector3<f64>, half: [f64; 3]) -> [f64; 4] {
        let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            if d[a] == 0.0 {
                if eye[a].abs() > half[a] {
                    return [0.0; 4];
                }
                continue;
            }
            let (u, v) = ((-half[a] - eye[a]) / d[a], (half[a] - eye[a]) / d[a]);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
        if t0 > t1 || t1 < 0.0 {
            return [0.0; 4];
        }
        let t0 = t0.max(0.01);
        let mut acc = [0.0f64; 4];
        let mut best = f64::NEG_INFINITY;
        let mut k = 0.0;
        loop {
            let t = t0 + (k + 0.5) * self.step;
            if t >= t1 {
                break;
            }
            k += 1.0;
            let p = eye + d * t;
            let s = self.trilinear([p.x + half[0], p.y + half[1], p.z + half[2]]);
            if self.mip {
                best = best.max(s);
                continue;
            }
            let [r, g, b, a] = tf_eval(self.tf, s);
            let a = if a <= 0.0 { 0.0 } else { 1.0 - (1.0 - a).powf(self.step / self.reference_step) };
            let w = (1.0 - acc[3]) * a;
            acc = [acc[0] + w * r, acc[1] + w * g, acc[2] + w * b, acc[3] + w];
            if acc[3] >= self.early_termination {
                break;
            }
        }
        if self.mip && best.is_finite() {
            let [r, g, b, a] = tf_eval(self.tf, best);
            acc = [a * r, a * g, a * b, a];
        }
        acc
    }
}

pub fn to_u8(px: &[[f64; 4]]) -> Vec<u8> {
    px.iter().flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)).collect()
}

pub fn max_abs_diff(a: &[u8], b: &[u8]) -> u8 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).max().unwrap_or(0)
}

// ---------------------------------------------------------------- cache model

/// Executable reference for the block cache: plain vectors, linear scans.
pub struct CacheModel {
    meta: VolumeMeta,
    capacity: u64,
    pinned: HashSet<BlockKey>,
    pinned_bytes: u64,
    /// Least recently used first.
    lru: Vec<BlockKey>,
    resident_bytes: u64,
    queue: Vec<(u32, u64, BlockKey)>,
    seq: u64,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl CacheModel {
    pub fn new(meta: &VolumeMeta, capacity: u64) -> Self {
        let coarsest = meta.levels - 1;
        let mut pinned = HashSet::new();
        let mut pinned_bytes = 0;
        for t in 0..meta.timepoints {
            for c in 0..meta.channels {
                for key in meta.keys_in_level(coarsest, c, t) {
                    pinned_bytes += meta.block_bytes(&key);
                    pinned.insert(key);
                }
            }
        }
        Self {
            meta: meta.clone(),
            capacity,
            pinned,
            pinned_bytes,
            lru: Vec::new(),
            resident_bytes: pinned_bytes,
            queue: Vec::new(),
            seq: 0,
            hits: 0,
            misses: 0,
            evictions: 0,
        }
    }

    fn resident(&self, key: &BlockKey) -> bool {
        self.pinned.contains(key) || self.lru.contains(key)
    }

    fn use_key(&mut self, key: &BlockKey) {
        if let Some(i) = self.lru.iter().position(|k| k == key) {
            let k = self.lru.remove(i);
            self.lru.push(k);
        }
    }

    fn enqueue(&mut self, key: BlockKey) -> bool {
        if self.resident(&key) || self.queue.iter().any(|(_, _, k)| *k == key) {
            return false;
        }
        self.seq += 1;
        self.queue.push((key.level, self.seq, key));
        true
    }

    /// Returns the level of the block handed back.
    pub fn resolve(&mut self, key: BlockKey) -> u32 {
        if self.resident(&key) {
            self.hits += 1;
            self.use_key(&key);
            return key.level;
        }
        self.misses += 1;
        let mut level = key.level + 1;
        while !self.resident(&key.ancestor(level)) {
            level += 1;
        }
        self.use_key(&key.ancestor(level));
        for l in key.level..level {
            self.enqueue(key.ancestor(l));
        }
        level
    }

    pub fn request(&mut self, key: BlockKey) -> bool {
        self.enqueue(key)
    }

    pub fn pump(&mut self, max: usize) -> usize {
        let mut loaded = 0;
        while loaded < max && !self.queue.is_empty() {
            let i = (0..self.queue.len()).min_by_key(|&i| (self.queue[i].0, self.queue[i].1)).unwrap();
            let (_, _, key) = self.queue.remove(i);
            if self.resident(&key) {
                continue;
            }
            loaded += 1;
            let bytes = self.meta.block_bytes(&key);
            if self.pinned_bytes + bytes > self.capacity {
                continue;
            }
            self.lru.push(key);
            self.resident_bytes += bytes;
            while self.resident_bytes > self.capacity {
                let victim = self.lru.remove(0);
                self.resident_bytes -= self.meta.block_bytes(&victim);
                self.evictions += 1;
            }
        }
        loaded
    }

    pub fn resident_keys(&self) -> Vec<BlockKey> {
        let mut v: Vec<_> = self.pinned.iter().chain(&self.lru).copied().collect();
        v.sort_unstable();
        v
    }

    pub fn resident_bytes(&self) -> u64 {
        self.resident_bytes
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }
}

pub fn random_key(rng: &mut impl Rng, meta: &VolumeMeta) -> BlockKey {
    let level = rng.gen_range(0..meta.levels);
    let g = meta.block_grid(level);
    BlockKey::new(
        level,
        [rng.gen_range(0..g[0]), rng.gen_range(0..g[1]), rng.gen_range(0..g[2])],
        rng.gen_range(0..meta.channels),
        rng.gen_range(0..meta.timepoints),
    )
}

/// Run one random trace against the real cache and the model. Returns the
/// first divergence, if any.
pub fn compare_cache_trace(rng: &mut impl Rng, ops: usize) -> Result<(), String> {
    let n = rng.gen_range(24..80);
    let mut spec = ProceduralSpec::noise(n, rng.gen());
    spec.dims = [n, rng.gen_range(16..80), rng.gen_range(8..64)];
    spec.block_size = 8;
    spec.channels = rng.gen_range(1..3);
    let source = Arc::new(ProceduralSource::new(spec).unwrap());
    let meta = source.meta().clone();
    let block = 8 * 8 * 8;
    let capacity = meta.coarsest_level_bytes() + rng.gen_range(0..40) * block + rng.gen_range(0..block);
    let cache = BlockCache::new(source, CacheConfig { capacity }).unwrap();
    let mut model = CacheModel::new(&meta, capacity);
    for op in 0..ops {
        match rng.gen_range(0..10) {
            0..=5 => {
                let key = random_key(rng, &meta);
                let got = cache.resolve_block(&key).unwrap();
                let want = model.resolve(key);
                if got.effective_level != want {
                    return Err(format!(
                        "op {op}: resolve {key} effective level {} vs model {want}",
                        got.effective_level
                    ));
                }
                if got.block.key != key.ancestor(want) {
                    return Err(format!("op {op}: resolve {key} returned block {}", got.block.key));
                }
            }
            6 => {
                let key = random_key(rng, &meta);
                let (a, b) = (cache.request(&key).unwrap(), model.request(key));
                if a != b {
                    return Err(format!("op {op}: request {key} queued {a} vs model {b}"));
                }
            }
            _ => {
                let max = rng.gen_range(0..6);
                let (a, b) = (cache.pump_loads(max).unwrap(), model.pump(max));
                if a != b {
                    return Err(format!("op {op}: pump({max}) loaded {a} vs model {b}"));
                }
            }
        }
        let s = cache.stats();
        let got = (s.hits, s.misses, s.evictions, s.resident_bytes, s.pending_loads as usize);
        let want = (model.hits, model.misses, model.evictions, model.resident_bytes(), model.pending());
        if got != want {
            return Err(format!("op {op}: (hits, misses, evictions, bytes, pending) {got:?} vs model {want:?}"));
        }
        if s.resident_bytes > capacity || s.peak_resident_bytes > capacity {
            return Err(format!("op {op}: resident {} over capacity {capacity}", s.resident_bytes));
        }
        if op % 97 == 0 && cache.resident_keys() != model.resident_keys() {
            return Err(format!("op {op}: resident sets differ"));
        }
    }
    if cache.resident_keys() != model.resident_keys() {
        return Err("final resident sets differ".into());
    }
    Ok(())
}

// ---------------------------------------------------------------- scene oracle

pub fn random_transform(rng: &mut impl Rng) -> Transform {
    let q = UnitQuaternion::from_quaternion(Quaternion::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.1..1.0),
    ));
    let t = Vector3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    let s = Vector3::new(rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
    Transform::new(t, *q.quaternion(), s).unwrap()
}

/// A mirror of the tree kept as plain parent/children maps.
pub struct TreeModel {
    pub parent: HashMap<NodeId, NodeId>,
    pub children: HashMap<NodeId, Vec<NodeId>>,
    pub local: HashMap<NodeId, Matrix4<f64>>,
    pub visible: HashMap<NodeId, bool>,
    pub root: NodeId,
}

impl TreeModel {
    pub fn world(&self, mut id: NodeId) -> Matrix4<f64> {
        let mut path = vec![id];
        while let Some(&p) = self.parent.get(&id) {
            path.push(p);
            id = p;
        }
        path.iter().rev().fold(Matrix4::identity(), |m, n| m * self.local[n])
    }

    pub fn flatten(&self) -> Vec<NodeId> {
        fn rec(m: &TreeModel, id: NodeId, out: &mut Vec<NodeId>) {
            if !m.visible[&id] {
                return;
            }
            out.push(id);
            for c in m.children.get(&id).into_iter().flatten() {
                rec(m, *c, out);
            }
        }
        let mut out = Vec::new();
        rec(self, self.root, &mut out);
        out
    }

    pub fn descendants(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(n) = stack.pop() {
            for c in self.children.get(&n).into_iter().flatten() {
                out.push(*c);
                stack.push(*c);
            }
        }
        out
    }
}

/// Random tree built by adds and re-attaches, with its model.
pub fn random_tree(rng: &mut impl Rng, max_nodes: usize) -> (Scene, TreeModel) {
    let mut scene = Scene::new();
    let root = scene.root();
    let mut m = TreeModel {
        parent: HashMap::new(),
        children: HashMap::new(),
        local: HashMap::from([(root, Matrix4::identity())]),
        visible: HashMap::from([(root, true)]),
        root,
    };
    let mut ids = vec![root];
    for i in 0..rng.gen_range(1..max_nodes) {
        let parent = ids[rng.gen_range(0..ids.len())];
        let t = random_transform(rng);
        let id = scene.add(parent, format!("n{i}"), t, Payload::Group).unwrap();
        m.parent.insert(id, parent);
        m.children.entry(parent).or_default().push(id);
        m.local.insert(id, t.local_matrix());
        let vis = rng.gen_bool(0.85);
        scene.set_visible(id, vis).unwrap();
        m.visible.insert(id, vis);
        ids.push(id);
    }
    for _ in 0..ids.len() / 3 {
        let node = ids[rng.gen_range(1..ids.len())];
        let target = ids[rng.gen_range(0..ids.len())];
        let cyclic = target == node || m.descendants(node).contains(&target);
        let r = scene.attach(node, target);
        assert_eq!(r.is_err(), cyclic, "attach {node:?} under {target:?}");
        if !cyclic {
            let old = m.parent[&node];
            m.children.get_mut(&old).unwrap().retain(|c| *c != node);
            m.children.entry(target).or_default().push(node);
            m.parent.insert(node, target);
        }
    }
    (scene, m)
}

// ---------------------------------------------------------------- render graph

/// Random pipeline over `n` passes. Inputs may point anywhere (including
/// later passes and unknown names), so many results are invalid.
pub fn random_pipeline(rng: &mut impl Rng, n: usize, valid_bias: bool) -> PipelineDesc {
    let name = |i: usize| if i == n - 1 { DISPLAY.to_string() } else { format!("a{i}") };
    let mut passes = Vec::new();
    for i in 0..n {
        let arity = rng.gen_range(0..3usize);
        let kind = [PassKind::Clear, PassKind::Tonemap, PassKind::Compose][arity];
        let inputs: Vec<String> = (0..arity)
            .map(|_| {
                if !valid_bias && rng.gen_bool(0.05) {
                    "missing".to_string()
                } else if valid_bias && i > 0 {
                    name(rng.gen_range(0..i))
                } else {
                    name(rng.gen_range(0..n))
                }
            })
            .collect();
        let kind = if valid_bias && i == 0 { PassKind::Clear } else { kind };
        let inputs = if kind == PassKind::Clear { Vec::new() } else { inputs };
        passes.push(PassDesc { name: format!("p{i}"), kind, inputs, output: name(i), params: Default::default() });
    }
    // shuffle declaration order so the scheduler has work to do
    for i in (1..passes.len()).rev() {
        passes.swap(i, rng.gen_range(0..=i));
    }
    PipelineDesc { name: "random".into(), passes }
}

/// Independent validity check: every input produced, no cycles (DFS colors).
pub fn pipeline_is_valid(desc: &PipelineDesc) -> bool {
    let producer: HashMap<&str, usize> = desc.passes.iter().enumerate().map(|(i, p)| (p.output.as_str(), i)).collect();
    if producer.len() != desc.passes.len() || !producer.contains_key(DISPLAY) {
        return false;
    }
    if desc.passes.iter().flat_map(|p| &p.inputs).any(|i| !producer.contains_key(i.as_str())) {
        return false;
    }
    fn visit(i: usize, desc: &PipelineDesc, producer: &HashMap<&str, usize>, color: &mut [u8]) -> bool {
        match color[i] {
            1 => return false,
            2 => return true,
            _ => {}
        }
        color[i] = 1;
        for input in &desc.passes[i].inputs {
            if !visit(producer[input.as_str()], desc, producer, color) {
                return false;
            }
        }
        color[i] = 2;
        true
    }
    let mut color = vec![0u8; desc.passes.len()];
    (0..desc.passes.len()).all(|i| visit(i, desc, &producer, &mut color))
}

/// Every producer precedes each of its consumers in `order` (pass names).
pub fn schedule_respects_edges(desc: &PipelineDesc, order: &[&str]) -> bool {
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let producer: HashMap<&str, &str> = desc.passes.iter().map(|p| (p.output.as_str(), p.name.as_str())).collect();
    order.len() == desc.passes.len()
        && desc.passes.iter().all(|p| p.inputs.iter().all(|i| pos[producer[i.as_str()]] < pos[p.name.as_str()]))
}

// ---------------------------------------------------------------- sessions

pub fn small_session(width: u32, height: u32, cache_bytes: u64) -> Session {
    Session::new(SessionConfig { width, height, cache_bytes, ..Default::default() })
}

/// A session holding one volume with the given transfer function and settings.
pub fn volume_session(
    source: Arc<dyn BlockSource>,
    tf: TransferFunction,
    settings: RenderSettings,
    camera: CameraState,
    size: (u32, u32),
    cache_bytes: u64,
) -> (Session, VolumeId) {
    let mut s = small_session(size.0, size.1, cache_bytes);
    let id = s.add_volume(source).unwrap();
    s.set_transfer_function(id, tf).unwrap();
    s.set_render_settings(settings).unwrap();
    s.set_camera(camera).unwrap();
    (s, id)
}

pub fn camera(position: [f64; 3], target: [f64; 3]) -> CameraState {
    CameraState { position, target, up: [0.0, 1.0, 0.0], fov: 45.0 }
}

// ---------------------------------------------------------------- fuzzing

const FUZZ_SEEDS: [&str; 10] = [
    r#"{"cmd":"ping"}"#,
    r#"{"cmd":"hello"}"#,
    r#"{"cmd":"load_volume","procedural":"radial:16"}"#,
    r#"{"cmd":"set_camera","position":[0,0,40],"target":[0,0,0]}"#,
    r#"{"cmd":"set_settings","step":2.0}"#,
    r#"{"cmd":"set_pipeline","pipeline":"mip"}"#,
    r#"{"cmd":"request_frame","format":"raw"}"#,
    r#"{"cmd":"set_transfer_function","volume_id":1,"points":[{"x":0,"rgba":[0,0,0,0]},{"x":1,"rgba":[1,1,1,1]}]}"#,
    r#"{"cmd":"set_size","width":8,"height":6}"#,
    r#"{"cmd":"stats"}"#,
];

fn mutate(rng: &mut impl Rng, mut bytes: Vec<u8>) -> Vec<u8> {
    for _ in 0..rng.gen_range(0..4) {
        if bytes.is_empty() {
            break;
        }
        let i = rng.gen_range(0..bytes.len());
        match rng.gen_range(0..4) {
            0 => bytes[i] = rng.gen(),
            1 => {
                bytes.remove(i);
            }
            2 => bytes.insert(i, rng.gen()),
            _ => bytes.truncate(i),
        }
    }
    bytes
}

/// Feed `count` blobs to one session: pure noise, noisy framing around valid
/// JSON, and mutated valid messages. Every blob must get at least one reply,
/// every reply must re-encode cleanly, and the session must still answer a
/// ping at the end. Returns the number of error replies.
pub fn fuzz_session(seed: u64, count: usize) -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = small_session(8, 6, 8 << 20);
    let mut errors = 0;
    for i in 0..count {
        let blob: Vec<u8> = match i % 3 {
            0 => (0..rng.gen_range(1..48)).map(|_| rng.gen()).collect(),
            1 => {
                let body = FUZZ_SEEDS[rng.gen_range(0..FUZZ_SEEDS.len())].as_bytes();
                let body = mutate(&mut rng, body.to_vec());
                let mut b = ((body.len() + 1) as u32).to_be_bytes().to_vec();
                b.push(if rng.gen_bool(0.9) { 1 } else { rng.gen() });
                b.extend(body);
                b
            }
            _ => {
                let v: Value = serde_json::from_str(FUZZ_SEEDS[rng.gen_range(0..FUZZ_SEEDS.len())]).unwrap();
                mutate(&mut rng, encode_message(&WireMessage::Control(v)))
            }
        };
        if blob.is_empty() {
            continue;
        }
        let replies = session.handle_bytes(&blob);
        if replies.is_empty() {
            return Err(format!("no reply to blob {i}: {blob:?}"));
        }
        errors += replies.iter().filter(|r| r.as_control().is_some_and(|v| v["cmd"] == "error")).count();
        for r in &replies {
            let bytes = encode_message(r);
            if decode_message(&bytes).map(|(m, _)| m).as_ref() != Ok(r) {
                return Err(format!("reply to blob {i} does not round-trip"));
            }
        }
    }
    let pong = session.handle_bytes(&encode_message(&WireMessage::Control(serde_json::json!({"cmd": "ping"}))));
    if pong.first().and_then(|m| m.as_control()).map(|v| v["cmd"] == "pong") != Some(true) {
        return Err("session stopped answering".into());
    }
    Ok(errors)
}
