"""Trajectory engine on the product-state manifold.

Each site carries a two-component spinor. Between jumps all spinors follow
the coupled nonlinear equations

    d psi_i / dt = -i h_i(Psi) psi_i,
    h_i = Jx B_i^x sigma^x + Jy B_i^y sigma^y + Jz B_i^z sigma^z
          - i (gamma/2) sigma^+ sigma^-,

where B_i^alpha sums the Bloch vectors of the nearest neighbors of i. The
drift is integrated with classical RK4, recomputing the mean fields from the
intermediate state at every stage (Jacobi-style: all sites see the same stage
snapshot), and renormalizing after the full step. Decay is unraveled by
first-order jump sampling: per step each site jumps to the down state with
probability gamma * dt * |amp_up|^2, drawn in fixed site order.

All state-level functions accept leading batch dimensions, so an ensemble of
m trajectories can be advanced as one (m, n_sites, 2) array with a single
counter-based random stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericsError
from .lattice import LatticeGeometry
from .observables import Accumulator, Sample
from .state import bloch_vectors, is_dark, load_state_csv, plus_x_state, renormalize, save_state_csv

# minimum spinor norm tolerated after an un-normalized RK4 step
_STEP_NORM_FLOOR = 1e-12


@dataclass(frozen=True)
class ModelParams:
    """XYZ couplings and decay rate. gamma = 1 fixes the unit system: times
    are reported in 1/gamma and couplings in gamma. gamma = 0 is the unitary
    limit (no jumps), kept available for consistency tests."""

    jx: float
    jy: float
    jz: float
    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigError(f"gamma must be non-negative, got {self.gamma}")


@dataclass(frozen=True)
class StepConfig:
    dt: float = 0.01
    max_jump_prob: float = 0.05

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not 0.0 < self.max_jump_prob < 0.5:
            raise ConfigError(f"max_jump_prob must lie in (0, 0.5), got {self.max_jump_prob}")


@dataclass(frozen=True)
class TrajectoryConfig:
    t_total: float
    burn_in: float = 0.0
    sample_interval: float = 1.0
    seed: int = 0
    initial_state: str = "plus_x"  # plus_x | minus_x | path to a state snapshot CSV

    def __post_init__(self):
        if not 0.0 <= self.burn_in < self.t_total:
            raise ConfigError(f"burn_in must satisfy 0 <= burn_in < t_total, got {self.burn_in}")
        if not self.sample_interval > 0:
            raise ConfigError("sample_interval must be positive")


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream: (seed, stream) fully determines the draw
    sequence. Trajectory k of an ensemble uses stream index k, so ensembles
    reproduce independently of scheduling order."""

    seed: int
    stream: int = 0

    ALGORITHM = "philox4x64"

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed % 2**64, self.stream % 2**64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def mean_fields(amps: np.ndarray, geometry: LatticeGeometry) -> np.ndarray:
    """B_i^alpha = sum over neighbors j of <sigma_j^alpha>, shape (..., n, 3)."""
    return bloch_vectors(amps)[..., geometry.neighbor_table, :].sum(axis=-2)


def local_effective_hamiltonian(b, p: ModelParams) -> np.ndarray:
    """Non-Hermitian 2x2 generator for one site given its mean field (bx,by,bz)."""
    bx, by, bz = float(b[0]), float(b[1]), float(b[2])
    off = p.jx * bx - 1j * p.jy * by
    return np.array(
        [[p.jz * bz - 0.5j * p.gamma, off], [np.conj(off), -p.jz * bz]],
        dtype=np.complex128,
    )


def _derivatives(amps: np.ndarray, geometry: LatticeGeometry, p: ModelParams) -> np.ndarray:
    """d psi / dt = -i h(Psi) psi evaluated sitewise from the given snapshot."""
    b = mean_fields(amps, geometry)
    a = p.jx * b[..., 0]
    c = p.jy * b[..., 1]
    e = p.jz * b[..., 2]
    u = amps[..., 0]
    d = amps[..., 1]
    off = a - 1j * c  # upper off-diagonal of h
    out = np.empty_like(amps)
    out[..., 0] = -1j * ((e - 0.5j * p.gamma) * u + off * d)
    out[..., 1] = -1j * (np.conj(off) * u - e * d)
    return out


def deterministic_step(
    amps: np.ndarray,
    geometry: LatticeGeometry,
    p: ModelParams,
    dt: float,
    active: np.ndarray | None = None,
) -> np.ndarray:
    """One RK4 step of the no-jump drift, renormalized afterwards.

    ``active`` masks the sites being advanced; masked-out sites hold their
    value through every stage (they still source the mean fields).
    """
    mask = None if active is None else active[..., None].astype(float)

    def f(x):
        k = _derivatives(x, geometry, p)
        return k if mask is None else k * mask

    k1 = f(amps)
    k2 = f(amps + (0.5 * dt) * k1)
    k3 = f(amps + (0.5 * dt) * k2)
    k4 = f(amps + dt * k3)
    out = amps + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    norm2 = out[..., 0].real ** 2 + out[..., 0].imag ** 2 + out[..., 1].real ** 2 + out[..., 1].imag ** 2
    if np.any(norm2 < _STEP_NORM_FLOOR**2):
        raise NumericsError("spinor norm collapsed during a drift step; reduce dt")
    return renormalize(out)


def jump_probabilities(amps: np.ndarray, p: ModelParams, dt: float) -> np.ndarray:
    """First-order per-site jump probabilities gamma * dt * |amp_up|^2."""
    u = amps[..., 0]
    return (p.gamma * dt) * (u.real**2 + u.imag**2)


def apply_jump(i: int, amps: np.ndarray) -> np.ndarray:
    """Collapse site i to the down state (0, 1); other sites untouched."""
    u = amps[..., i, 0]
    if np.any(u.real**2 + u.imag**2 == 0.0):
        raise NumericsError(f"jump applied to site {i} with no up-amplitude")
    out = amps.copy()
    out[..., i, 0] = 0.0
    out[..., i, 1] = 1.0
    return out


def advance(
    amps: np.ndarray,
    geometry: LatticeGeometry,
    p: ModelParams,
    step: StepConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """One full time step: jump sampling from the pre-step state, collapses,
    then the masked drift step. Returns (new state, jumped index array).

    The jumped indices have one row per event: (site,) for a single state,
    (trajectory, site) for a batch.
    """
    if p.gamma * step.dt > step.max_jump_prob:
        raise ConfigError(
            f"gamma*dt = {p.gamma * step.dt:g} exceeds max_jump_prob = {step.max_jump_prob:g}"
        )
    probs = jump_probabilities(amps, p, step.dt)
    draws = rng.random(size=probs.shape)
    jumped = draws < probs
    if jumped.any():
        amps = amps.copy()
        amps[jumped, :] = (0.0, 1.0)
        new = deterministic_step(amps, geometry, p, step.dt, active=~jumped)
    else:
        new = deterministic_step(amps, geometry, p, step.dt)
    return new, np.argwhere(jumped)


def initial_product_state(traj: TrajectoryConfig, n_sites: int) -> np.ndarray:
    """Resolve the configured initial state; refuses the artificial dark state.

    The all-down product state is an exact fixed point of the restricted
    dynamics for every parameter choice (an artifact of the manifold), so a
    run started there can never leave it.
    """
    if traj.initial_state == "plus_x":
        amps = plus_x_state(n_sites, +1)
    elif traj.initial_state == "minus_x":
        amps = plus_x_state(n_sites, -1)
    else:
        amps = load_state_csv(traj.initial_state)
        if amps.shape[0] != n_sites:
            raise ConfigError(
                f"snapshot has {amps.shape[0]} sites, geometry has {n_sites}"
            )
        amps = renormalize(amps)
    if is_dark(bloch_vectors(amps)):
        raise ConfigError(
            "initial state is the all-down dark state, an exact fixed point of the "
            "product-manifold dynamics; start with finite in-plane magnetization"
        )
    return amps


@dataclass
class TrajectoryResult:
    samples: list[Sample]
    trapped_at: float | None
    total_jumps: int
    seed: int
    stream: int

    def post_burn_in(self) -> list[Sample]:
        return [s for s in self.samples if not s.burn_in]


def _steps_per_sample(traj: TrajectoryConfig, step: StepConfig) -> int:
    if traj.sample_interval < step.dt:
        raise ConfigError("sample_interval must be at least dt")
    return max(1, int(round(traj.sample_interval / step.dt)))


def run_trajectory(
    geometry: LatticeGeometry,
    p: ModelParams,
    traj: TrajectoryConfig,
    step: StepConfig = StepConfig(),
    stream: int = 0,
) -> TrajectoryResult:
    """Run one trajectory, sampling every sample_interval (rounded to whole
    steps). Bit-reproducible for fixed (seed, stream, configs).

    Once the state reaches the all-down dark state the remainder is marked
    trapped and integration short-circuits: the dark state is exact, so later
    samples simply repeat the frozen Bloch vectors.
    """
    rng = RngStream(traj.seed, stream).generator()
    amps = initial_product_state(traj, geometry.n_sites)
    n_steps = int(round(traj.t_total / step.dt))
    spp = _steps_per_sample(traj, step)

    bloch = bloch_vectors(amps)
    samples = [Sample(0.0, bloch, burn_in=0.0 < traj.burn_in, jumps_in_interval=0)]
    trapped_at = None
    total_jumps = 0
    jumps_since = 0
    for n in range(1, n_steps + 1):
        t = n * step.dt
        if trapped_at is None:
            amps, jumped = advance(amps, geometry, p, step, rng)
            total_jumps += len(jumped)
            jumps_since += len(jumped)
        if n % spp == 0:
            if trapped_at is None:
                bloch = bloch_vectors(amps)
                if is_dark(bloch):
                    trapped_at = t
            samples.append(Sample(t, bloch, burn_in=t < traj.burn_in, jumps_in_interval=jumps_since))
            jumps_since = 0
    return TrajectoryResult(samples, trapped_at, total_jumps, traj.seed, stream)


def run_ensemble(
    geometry: LatticeGeometry,
    p: ModelParams,
    traj: TrajectoryConfig,
    step: StepConfig,
    n_traj: int,
    stream: int = 0,
) -> tuple[np.ndarray, np.ndarray]:
    """Advance n_traj independent trajectories as one batched state.

    Returns (times, bloch) with bloch of shape (n_times, n_traj, n_sites, 3),
    sampled on the same cadence as :func:`run_trajectory`. The whole batch
    shares a single counter-based stream (rows stay independent because each
    step draws one variate per site per trajectory); use run_trajectory with
    per-trajectory stream indices when scheduling across workers instead.
    """
    rng = RngStream(traj.seed, stream).generator()
    single = initial_product_state(traj, geometry.n_sites)
    amps = np.broadcast_to(single, (n_traj,) + single.shape).copy()
    n_steps = int(round(traj.t_total / step.dt))
    spp = _steps_per_sample(traj, step)
    times = [0.0]
    blochs = [bloch_vectors(amps)]
    for n in range(1, n_steps + 1):
        amps, _ = advance(amps, geometry, p, step, rng)
        if n % spp == 0:
            times.append(n * step.dt)
            blochs.append(bloch_vectors(amps))
    return np.asarray(times), np.asarray(blochs)


# -- checkpointing ------------------------------------------------------------

def save_checkpoint(prefix: str, amps: np.ndarray, t: float,
                    rng: np.random.Generator, accumulator: Accumulator | None = None) -> None:
    """Write a resumable snapshot: state CSV plus a key-value resume record
    holding the time, the full bit-generator state, and accumulator partials."""
    save_state_csv(f"{prefix}_state.csv", amps)
    st = rng.bit_generator.state
    kv = {
        "time": repr(float(t)),
        "rng_algorithm": st["bit_generator"],
        "rng_counter": ",".join(str(v) for v in st["state"]["counter"]),
        "rng_key": ",".join(str(v) for v in st["state"]["key"]),
        "rng_buffer": ",".join(str(v) for v in st["buffer"]),
        "rng_buffer_pos": str(st["buffer_pos"]),
        "rng_has_uint32": str(st["has_uint32"]),
        "rng_uinteger": str(st["uinteger"]),
    }
    if accumulator is not None:
        kv.update(accumulator.to_kv())
    with open(f"{prefix}_resume.txt", "w") as fh:
        for key, value in kv.items():
            fh.write(f"{key} = {value}\n")


def load_checkpoint(prefix: str) -> tuple[np.ndarray, float, np.random.Generator, Accumulator]:
    amps = load_state_csv(f"{prefix}_state.csv")
    kv = {}
    with open(f"{prefix}_resume.txt") as fh:
        for line in fh:
            if "=" in line:
                key, _, value = line.partition("=")
                kv[key.strip()] = value.strip()
    if kv.get("rng_algorithm") != "Philox":
        raise ConfigError(f"unsupported bit generator in resume record: {kv.get('rng_algorithm')}")
    bitgen = np.random.Philox()
    bitgen.state = {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array([int(v) for v in kv["rng_counter"].split(",")], dtype=np.uint64),
            "key": np.array([int(v) for v in kv["rng_key"].split(",")], dtype=np.uint64),
        },
        "buffer": np.array([int(v) for v in kv["rng_buffer"].split(",")], dtype=np.uint64),
        "buffer_pos": int(kv["rng_buffer_pos"]),
        "has_uint32": int(kv["rng_has_uint32"]),
        "uinteger": int(kv["rng_uinteger"]),
    }
    acc = Accumulator.from_kv({k: v for k, v in kv.items() if k.startswith("acc_")})
    return amps, float(kv["time"]), np.random.Generator(bitgen), acc
