//! Masked flow completion over latent grids.
//!
//! Known shell cells follow the analytic noise-to-shell trajectory, forbidden
//! cells follow the noise-to-empty trajectory, and only the remaining cells
//! are integrated with the backend velocity.

use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::grid::{cavity, dilate, OccupancyGrid};
use crate::kinematics::sweep_volume;
use crate::model::ArticulationSpec;
use crate::render::tensor::{read_blocks, write_blocks, TensorBlock};

pub const DEFAULT_CHANNELS: usize = 8;
pub const DEFAULT_LATENT_RES: usize = 16;

/// `channels × n³` floats, channel slowest, cells in [`OccupancyGrid`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    n: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(channels: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || n == 0 || data.len() != channels * n * n * n {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {channels}×{n}³ latent",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite latent value at {i}")));
        }
        Ok(Self { channels, n, data })
    }

    pub fn zeros(channels: usize, n: usize) -> Self {
        Self::constant(channels, n, 0.0)
    }

    pub fn constant(channels: usize, n: usize, v: f64) -> Self {
        Self {
            channels,
            n,
            data: vec![v; channels * n * n * n],
        }
    }

    /// Standard normal noise from a seeded ChaCha stream.
    pub fn noise(channels: usize, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..channels * n * n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        Self { channels, n, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cell_count(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, channel: usize, cell: usize) -> f64 {
        self.data[channel * self.cell_count() + cell]
    }

    pub fn check_shape(&self, other: &LatentGrid) -> Result<()> {
        if self.channels != other.channels || self.n != other.n {
            return Err(Error::ShapeMismatch(format!(
                "latent {}×{}³ vs {}×{}³",
                self.channels, self.n, other.channels, other.n
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &LatentGrid) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    fn map2(&self, other: &LatentGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_shape(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        })
    }

    /// `[C, n, n, n]` block; values are narrowed to f32.
    pub fn to_tensor(&self) -> TensorBlock {
        TensorBlock::new(
            vec![self.channels, self.n, self.n, self.n],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("shape matches")
    }

    pub fn from_tensor(block: &TensorBlock) -> Result<Self> {
        match block.shape.as_slice() {
            [c, a, b, d] if a == b && b == d => {
                Self::new(*c, *a, block.data.iter().map(|&v| v as f64).collect())
            }
            other => Err(Error::ShapeMismatch(format!("expected [C,n,n,n], got {other:?}"))),
        }
    }
}

impl std::ops::Deref for LatentGrid {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.data
    }
}

/// `t·z_shell + (1 − t)·eps`, elementwise.
pub fn analytic_state(z_shell: &LatentGrid, eps: &LatentGrid, t: f64) -> Result<LatentGrid> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidInput(format!("flow time {t} outside [0, 1]")));
    }
    z_shell.map2(eps, |z, e| t * z + (1.0 - t) * e)
}

/// Velocity field plus the occupancy codec it was trained with.
pub trait GenerativeBackend: Send + Sync {
    fn name(&self) -> &str;
    fn channels(&self) -> usize;
    fn encode(&self, grid: &OccupancyGrid) -> Result<LatentGrid>;
    /// Decodes into the cells of `frame`.
    fn decode(&self, z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid>;
    fn velocity(&self, z_t: &LatentGrid, t: f64, condition: &[u8]) -> Result<LatentGrid>;
}

/// Every channel carries the occupancy bit; decode thresholds the channel mean at 0.5.
pub fn identity_encode(grid: &OccupancyGrid, channels: usize) -> LatentGrid {
    let cells = grid.len();
    let mut data = Vec::with_capacity(channels * cells);
    for _ in 0..channels {
        data.extend(grid.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }));
    }
    LatentGrid {
        channels,
        n: grid.n(),
        data,
    }
}

pub fn identity_decode(z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
    if z.n != frame.n() {
        return Err(Error::ShapeMismatch(format!("latent n={} vs grid n={}", z.n, frame.n())));
    }
    let cells = z.cell_count();
    let out = (0..cells)
        .map(|i| {
            let mean = (0..z.channels).map(|c| z.data[c * cells + i]).sum::<f64>() / z.channels as f64;
            mean > 0.5
        })
        .collect();
    OccupancyGrid::from_cells(frame, out)
}

/// Conditional-flow oracle toward a fixed target. On the straight path from
/// `eps` its velocity `(target − z_t)/(1 − t)` equals `target − eps`, so Euler
/// steps land on the target.
#[derive(Debug, Clone)]
pub struct MockLinear {
    pub target: LatentGrid,
}

impl MockLinear {
    pub fn new(target: &OccupancyGrid, channels: usize) -> Self {
        Self {
            target: identity_encode(target, channels),
        }
    }

    fn oracle(&self, z_t: &LatentGrid, t: f64) -> Result<LatentGrid> {
        let remaining = 1.0 - t;
        if remaining <= 1e-12 {
            return Ok(LatentGrid::zeros(z_t.channels, z_t.n));
        }
        self.target.map2(z_t, |a, b| (a - b) / remaining)
    }
}

impl GenerativeBackend for MockLinear {
    fn name(&self) -> &str {
        "mock-linear"
    }
    fn channels(&self) -> usize {
        self.target.channels
    }
    fn encode(&self, grid: &OccupancyGrid) -> Result<LatentGrid> {
        Ok(identity_encode(grid, self.target.channels))
    }
    fn decode(&self, z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
        identity_decode(z, frame)
    }
    fn velocity(&self, z_t: &LatentGrid, t: f64, _condition: &[u8]) -> Result<LatentGrid> {
        self.oracle(z_t, t)
    }
}

/// Oracle velocity plus seeded Gaussian noise of scale `sigma`; the noise
/// stream is keyed by `(seed, t)`.
#[derive(Debug, Clone)]
pub struct MockNoisy {
    pub inner: MockLinear,
    pub sigma: f64,
    pub seed: u64,
}

impl GenerativeBackend for MockNoisy {
    fn name(&self) -> &str {
        "mock-noisy"
    }
    fn channels(&self) -> usize {
        self.inner.channels()
    }
    fn encode(&self, grid: &OccupancyGrid) -> Result<LatentGrid> {
        self.inner.encode(grid)
    }
    fn decode(&self, z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
        identity_decode(z, frame)
    }
    fn velocity(&self, z_t: &LatentGrid, t: f64, _condition: &[u8]) -> Result<LatentGrid> {
        let v = self.inner.oracle(z_t, t)?;
        let noise = LatentGrid::noise(v.channels, v.n, self.seed ^ t.to_bits().rotate_left(17));
        v.map2(&noise, |a, e| a + self.sigma * e)
    }
}

/// Velocity independent of state and time.
#[derive(Debug, Clone)]
pub struct ConstantVelocity {
    pub field: LatentGrid,
}

impl ConstantVelocity {
    pub fn seeded(channels: usize, n: usize, seed: u64, scale: f64) -> Self {
        let mut field = LatentGrid::noise(channels, n, seed);
        field.data.iter_mut().for_each(|v| *v *= scale);
        Self { field }
    }
}

impl GenerativeBackend for ConstantVelocity {
    fn name(&self) -> &str {
        "constant-velocity"
    }
    fn channels(&self) -> usize {
        self.field.channels
    }
    fn encode(&self, grid: &OccupancyGrid) -> Result<LatentGrid> {
        Ok(identity_encode(grid, self.field.channels))
    }
    fn decode(&self, z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
        identity_decode(z, frame)
    }
    fn velocity(&self, z_t: &LatentGrid, _t: f64, _condition: &[u8]) -> Result<LatentGrid> {
        z_t.check_shape(&self.field)?;
        Ok(self.field.clone())
    }
}

/// External velocity model behind a process boundary. The command receives
/// an input file holding the `[C,n,n,n]` state block (meta `t`) followed by
/// the condition bytes as a `[len]` block, and writes one velocity block of
/// the same shape. Encoding and decoding stay local (identity codec).
#[derive(Debug, Clone)]
pub struct TrellisAdapter {
    pub command: String,
    pub channels: usize,
    pub timeout: Duration,
}

impl TrellisAdapter {
    pub fn new(command: impl Into<String>, channels: usize) -> Self {
        Self {
            command: command.into(),
            channels,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Input stream the adapter command receives for one velocity query.
pub fn trellis_request(z_t: &LatentGrid, t: f64, condition: &[u8]) -> Vec<u8> {
    let state = z_t.to_tensor().with_meta("t", json!(t));
    let cond = TensorBlock::new(vec![condition.len()], condition.iter().map(|&b| b as f32).collect())
        .expect("shape matches")
        .with_meta("encoding", json!("bytes"));
    write_blocks(&[state, cond])
}

impl GenerativeBackend for TrellisAdapter {
    fn name(&self) -> &str {
        "trellis"
    }
    fn channels(&self) -> usize {
        self.channels
    }
    fn encode(&self, grid: &OccupancyGrid) -> Result<LatentGrid> {
        Ok(identity_encode(grid, self.channels))
    }
    fn decode(&self, z: &LatentGrid, frame: &OccupancyGrid) -> Result<OccupancyGrid> {
        identity_decode(z, frame)
    }
    fn velocity(&self, z_t: &LatentGrid, t: f64, condition: &[u8]) -> Result<LatentGrid> {
        let out = crate::infer::run_adapter_process(&self.command, &trellis_request(z_t, t, condition), self.timeout)?;
        let blocks = read_blocks(&out)?;
        let first = blocks.first().ok_or_else(|| Error::Backend("adapter returned no blocks".into()))?;
        let v = LatentGrid::from_tensor(first)?;
        z_t.check_shape(&v)?;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionConfig {
    pub steps: usize,
    pub seed: u64,
    pub k_max: usize,
    /// Stop once an iteration adds fewer than this fraction of the grid's cells.
    pub convergence: f64,
    pub erosion: usize,
    pub sweep_samples: usize,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            steps: 25,
            seed: 0,
            k_max: 15,
            convergence: 0.005,
            erosion: 1,
            sweep_samples: 64,
        }
    }
}

impl CompletionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 || self.k_max < 1 || !(self.convergence >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "completion config needs steps ≥ 2 and k_max ≥ 1 (got {} and {})",
                self.steps, self.k_max
            )));
        }
        Ok(())
    }
}

fn check_masks(m_occ: &[bool], m_void: &[bool], cells: usize) -> Result<()> {
    if m_occ.len() != cells || m_void.len() != cells {
        return Err(Error::ShapeMismatch(format!(
            "masks of {} and {} cells for a {cells}-cell latent",
            m_occ.len(),
            m_void.len()
        )));
    }
    let count = m_occ.iter().zip(m_void).filter(|(&a, &b)| a && b).count();
    if count > 0 {
        return Err(Error::OverlappingMasks { count });
    }
    Ok(())
}

/// One Euler step with masked regions pinned to their analytic states at `t + dt`.
#[allow(clippy::too_many_arguments)]
pub fn fused_step(
    z_t: &LatentGrid,
    t: f64,
    dt: f64,
    backend: &dyn GenerativeBackend,
    z_shell: &LatentGrid,
    z_empty: &LatentGrid,
    eps: &LatentGrid,
    m_occ: &[bool],
    m_void: &[bool],
    condition: &[u8],
) -> Result<LatentGrid> {
    z_t.check_shape(z_shell)?;
    z_t.check_shape(z_empty)?;
    z_t.check_shape(eps)?;
    let cells = z_t.cell_count();
    check_masks(m_occ, m_void, cells)?;
    let t_next = (t + dt).min(1.0);
    let shell_state = analytic_state(z_shell, eps, t_next)?;
    let empty_state = analytic_state(z_empty, eps, t_next)?;
    let all_masked = m_occ.iter().zip(m_void).all(|(&a, &b)| a || b);
    let v = if all_masked {
        None
    } else {
        let v = backend.velocity(z_t, t, condition)?;
        z_t.check_shape(&v)?;
        Some(v)
    };
    let data = (0..z_t.data.len())
        .map(|i| {
            let cell = i % cells;
            if m_occ[cell] {
                shell_state.data[i]
            } else if m_void[cell] {
                empty_state.data[i]
            } else {
                let v = v.as_ref().expect("velocity computed for free cells");
                z_t.data[i] + dt * v.data[i]
            }
        })
        .collect();
    LatentGrid::new(z_t.channels, z_t.n, data)
}

/// Integrates from seeded noise at t = 0 to t = 1 with the shell cells as
/// `M_occ` and `m_void` as the forbidden mask.
pub fn run_flow(
    shell: &OccupancyGrid,
    m_void: &OccupancyGrid,
    backend: &dyn GenerativeBackend,
    config: &CompletionConfig,
    condition: &[u8],
) -> Result<LatentGrid> {
    config.validate()?;
    shell.check_frame(m_void)?;
    let z_shell = backend.encode(shell)?;
    let z_empty = backend.encode(&shell.like())?;
    let eps = LatentGrid::noise(z_shell.channels, z_shell.n, config.seed);
    let dt = 1.0 / config.steps as f64;
    let mut z = eps.clone();
    for s in 0..config.steps {
        let t = s as f64 * dt;
        z = fused_step(&z, t, dt, backend, &z_shell, &z_empty, &eps, shell.cells(), m_void.cells(), condition)?;
    }
    Ok(z)
}

/// Complement of `shell ∪ sweep ∪ interior`.
pub fn compute_void_mask(
    shell: &OccupancyGrid,
    sweep: &OccupancyGrid,
    interior: &OccupancyGrid,
) -> Result<OccupancyGrid> {
    Ok(shell.union(sweep)?.union(interior)?.complement())
}

/// `generated ∩ (shell ∪ sweep ∪ interior)`.
pub fn prune_strict(
    generated: &OccupancyGrid,
    shell: &OccupancyGrid,
    sweep: &OccupancyGrid,
    interior: &OccupancyGrid,
) -> Result<OccupancyGrid> {
    generated.intersection(&shell.union(sweep)?.union(interior)?)
}

/// Kinematic envelope of a completion run.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub sweep: OccupancyGrid,
    pub interior: OccupancyGrid,
    pub void_strict: OccupancyGrid,
    /// Void mask eroded by the configured radius; cells beyond the grid
    /// border count as void, so only the interface with the valid zone moves.
    pub void_loose: OccupancyGrid,
}

pub fn envelope(
    shell: &OccupancyGrid,
    joint: &ArticulationSpec,
    moving: &OccupancyGrid,
    config: &CompletionConfig,
) -> Result<Envelope> {
    let sweep = sweep_volume(moving, joint, config.sweep_samples)?;
    let interior = cavity(shell);
    let void_strict = compute_void_mask(shell, &sweep, &interior)?;
    let void_loose = dilate(&void_strict.complement(), config.erosion).complement();
    Ok(Envelope {
        sweep,
        interior,
        void_strict,
        void_loose,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub new_cells: usize,
    pub occupied: usize,
}

#[derive(Debug, Clone)]
pub struct CompletionOutcome {
    pub grid: OccupancyGrid,
    pub growth: Vec<IterationReport>,
    pub converged: bool,
    /// Set when the progress callback stopped the run early.
    pub canceled: bool,
}

/// Repeated masked flow passes, each treating the previous result as shell.
pub fn iterative_complete(
    shell: &OccupancyGrid,
    joint: &ArticulationSpec,
    moving: &OccupancyGrid,
    backend: &dyn GenerativeBackend,
    config: &CompletionConfig,
    condition: &[u8],
) -> Result<CompletionOutcome> {
    iterative_complete_from(shell, 0, joint, moving, backend, config, condition, &mut |_| true)
}

/// Resumable form: `state` is the grid committed after `first_k` passes;
/// `progress` is called after every pass and returns false to cancel.
#[allow(clippy::too_many_arguments)]
pub fn iterative_complete_from(
    state: &OccupancyGrid,
    first_k: usize,
    joint: &ArticulationSpec,
    moving: &OccupancyGrid,
    backend: &dyn GenerativeBackend,
    config: &CompletionConfig,
    condition: &[u8],
    progress: &mut dyn FnMut(&IterationReport) -> bool,
) -> Result<CompletionOutcome> {
    config.validate()?;
    state.check_frame(moving)?;
    let env = envelope(state, joint, moving, config)?;
    let threshold = config.convergence * state.len() as f64;
    let mut current = state.clone();
    let mut growth = Vec::new();
    for k in first_k..config.k_max {
        let pass = CompletionConfig {
            seed: config.seed.wrapping_add(k as u64),
            ..*config
        };
        // grown cells never enter the loose void, so the masks stay disjoint
        let void = env.void_loose.difference(&current)?;
        let z = run_flow(&current, &void, backend, &pass, condition)?;
        let decoded = backend.decode(&z, &current)?;
        let next = decoded.union(&current)?;
        let report = IterationReport {
            iteration: k,
            new_cells: next.count() - current.count(),
            occupied: next.count(),
        };
        current = next;
        growth.push(report.clone());
        let keep_going = progress(&report);
        if (report.new_cells as f64) < threshold {
            return Ok(CompletionOutcome {
                grid: current,
                growth,
                converged: true,
                canceled: false,
            });
        }
        if !keep_going {
            return Ok(CompletionOutcome {
                grid: current,
                growth,
                converged: false,
                canceled: true,
            });
        }
    }
    Ok(CompletionOutcome {
        grid: current,
        growth,
        converged: false,
        canceled: false,
    })
}
