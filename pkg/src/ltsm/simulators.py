"""The three gray-box simulators and their analytic joint scores.

Each model factorizes as p(theta) p(z | theta) p(x | theta, z) with theta the
scalar parameter of interest (carried as a length-1 vector), z the internal
latents, and x the observation:

  gaussian   theta ~ N(0,1); z|theta ~ N(theta,1); x|z ~ N(z,1).
             grad_theta log p(theta,z,x) = -theta + (z - theta)
  mixture    theta ~ N(0,1); z|theta ~ Bernoulli(sigmoid(theta));
             x|z ~ Categorical(phi_z) over K classes.
             grad = -theta + (z - sigmoid(theta))
  galton     theta ~ N(0,1); z_i|theta ~ Bernoulli(sigmoid(theta)), i=1..R;
             x = init_pos + sum_i (2 z_i - 1), init_pos = num_nails // 2.
             grad = -theta + sum_i (z_i - sigmoid(theta))

Reference posteriors: the Gaussian model is conjugate (theta | x ~ N(x/3, 2/3));
the discrete models use rejection over simulator draws that hit the target
observation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import UnreachableObservationError, UnsupportedTaskError
from .sde import NoiseSchedule
from .serialize import fmt17

GAUSSIAN = "gaussian"
MIXTURE = "mixture_categorical"
GALTON = "galton"

# phi^(0), phi^(1) are instantiated once from softmaxed N(0,1) logits and held
# fixed; this seed pins the default pair.
PHI_SEED = 20240806

REJECTION_BUDGET = 10**8
REJECTION_RATE_FLOOR = 1e-6
_REJECTION_CHUNK = 1_000_000


def sigmoid(u):
    u = np.asarray(u, dtype=float)
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out if out.ndim else float(out)


def _default_phis(k: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(PHI_SEED)
    logits = rng.standard_normal((2, k))
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    phis = e / e.sum(axis=1, keepdims=True)
    return phis[0], phis[1]


@dataclass
class GaussianSim:
    sim_id: str = field(default=GAUSSIAN, init=False)
    theta_dim: int = field(default=1, init=False)
    latent_dim: int = field(default=1, init=False)

    def params(self) -> dict:
        return {}

    def sample_batch(self, n: int, rng: np.random.Generator):
        theta = rng.standard_normal((n, 1))
        z = theta + rng.standard_normal((n, 1))
        x = z[:, 0] + rng.standard_normal(n)
        return theta, z, x

    def validate_support(self, z, x):
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
            raise ValueError("gaussian draws must be finite")

    def joint_score(self, theta, z, x):
        return -theta + (z - theta)


@dataclass
class MixtureCategoricalSim:
    phi0: np.ndarray = None
    phi1: np.ndarray = None
    sim_id: str = field(default=MIXTURE, init=False)
    theta_dim: int = field(default=1, init=False)
    latent_dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.phi0 is None or self.phi1 is None:
            d0, d1 = _default_phis(10)
            self.phi0 = d0 if self.phi0 is None else self.phi0
            self.phi1 = d1 if self.phi1 is None else self.phi1
        self.phi0 = np.asarray(self.phi0, dtype=float)
        self.phi1 = np.asarray(self.phi1, dtype=float)
        if self.phi0.shape != self.phi1.shape or self.phi0.ndim != 1:
            raise ValueError("phi0 and phi1 must be 1-D with equal length")
        for name, phi in (("phi0", self.phi0), ("phi1", self.phi1)):
            if np.any(phi < 0) or abs(phi.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must lie on the probability simplex")

    @property
    def n_classes(self) -> int:
        return len(self.phi0)

    def params(self) -> dict:
        return {"phi0": self.phi0.tolist(), "phi1": self.phi1.tolist()}

    def sample_batch(self, n: int, rng: np.random.Generator):
        theta = rng.standard_normal((n, 1))
        z = (rng.random(n) < sigmoid(theta[:, 0])).astype(float)
        u = rng.random(n)
        last = self.n_classes - 1
        x0 = np.minimum(np.searchsorted(np.cumsum(self.phi0), u), last)
        x1 = np.minimum(np.searchsorted(np.cumsum(self.phi1), u), last)
        x = np.where(z > 0.5, x1, x0).astype(float)
        return theta, z[:, None], x

    def validate_support(self, z, x):
        z = np.asarray(z)
        x = np.asarray(x)
        if not np.all(np.isin(np.round(z), (0, 1))):
            raise ValueError("mixture latent z must be a bit in {0, 1}")
        xi = np.round(x)
        if np.any(xi != x) or np.any(xi < 0) or np.any(xi >= self.n_classes):
            raise ValueError(f"mixture observation must be a class in 0..{self.n_classes - 1}")

    def joint_score(self, theta, z, x):
        return -theta + (z - sigmoid(theta))


@dataclass
class GaltonSim:
    rows: int = 10
    num_nails: int = 21
    sim_id: str = field(default=GALTON, init=False)
    theta_dim: int = field(default=1, init=False)

    def __post_init__(self):
        if self.rows < 1:
            raise ValueError("need at least one row of nails")
        if self.rows > self.init_pos:
            raise ValueError("rows must not exceed init_pos or the ball can leave the board")

    @property
    def init_pos(self) -> int:
        return self.num_nails // 2

    @property
    def latent_dim(self) -> int:
        return self.rows

    def params(self) -> dict:
        return {"rows": self.rows, "num_nails": self.num_nails}

    def readout(self, z):
        """Deterministic bin: init_pos + sum of the +-1 steps 2 z_i - 1."""
        z = np.asarray(z, dtype=float)
        return self.init_pos - self.rows + 2.0 * z.sum(axis=-1)

    def sample_batch(self, n: int, rng: np.random.Generator):
        theta = rng.standard_normal((n, 1))
        z = (rng.random((n, self.rows)) < sigmoid(theta)).astype(float)
        return theta, z, self.readout(z)

    def validate_support(self, z, x):
        z = np.asarray(z)
        x = np.asarray(x)
        if not np.all(np.isin(np.round(z), (0, 1))):
            raise ValueError("galton latents must be bits")
        lo, hi = self.init_pos - self.rows, self.init_pos + self.rows
        if np.any(x < lo) or np.any(x > hi) or np.any((x - self.init_pos + self.rows) % 2 != 0):
            raise ValueError(f"galton bin must lie in [{lo}, {hi}] with matching parity")

    def joint_score(self, theta, z, x):
        z = np.asarray(z, dtype=float)
        bounce_sum = (z - sigmoid(theta)).sum(axis=-1, keepdims=z.ndim == 2)
        return -theta + bounce_sum


SimulatorSpec = GaussianSim | MixtureCategoricalSim | GaltonSim


def make_simulator(sim_id: str, **params) -> SimulatorSpec:
    if sim_id == GAUSSIAN:
        return GaussianSim()
    if sim_id == MIXTURE:
        if "k" in params:
            phi0, phi1 = _default_phis(int(params.pop("k")))
            params.setdefault("phi0", phi0)
            params.setdefault("phi1", phi1)
        return MixtureCategoricalSim(**params)
    if sim_id == GALTON:
        return GaltonSim(**params)
    raise ValueError(f"unknown simulator '{sim_id}'")


@dataclass
class JointDraw:
    theta: np.ndarray
    z: np.ndarray
    x: float
    sim_id: str


@dataclass
class Dataset:
    """Column store of M ancestral draws; draw(i) yields the i-th JointDraw."""

    spec: SimulatorSpec
    theta: np.ndarray  # (M, d)
    z: np.ndarray  # (M, L)
    x: np.ndarray  # (M,)
    seed: int

    def __len__(self) -> int:
        return len(self.x)

    def draw(self, i: int) -> JointDraw:
        return JointDraw(self.theta[i].copy(), self.z[i].copy(), float(self.x[i]), self.spec.sim_id)


def simulate(spec: SimulatorSpec, rng: np.random.Generator) -> JointDraw:
    """One ancestral draw from p(theta) p(z|theta) p(x|theta,z)."""
    theta, z, x = spec.sample_batch(1, rng)
    return JointDraw(theta[0], z[0], float(x[0]), spec.sim_id)


def joint_score(spec: SimulatorSpec, theta, z, x):
    """Analytic grad_theta log p(theta, z, x); validates (z, x) support."""
    theta = np.asarray(theta, dtype=float)
    z = np.asarray(z, dtype=float)
    spec.validate_support(z, x)
    return spec.joint_score(theta, z, x)


def generate_dataset(spec: SimulatorSpec, m: int, seed: int) -> Dataset:
    if m < 1:
        raise ValueError(f"dataset size must be >= 1, got {m}")
    rng = np.random.default_rng(seed)
    theta, z, x = spec.sample_batch(m, rng)
    return Dataset(spec, theta, z, x, seed)


def gaussian_true_score(theta_t, t, x, sched: NoiseSchedule):
    """Exact conditional diffused score for the Gaussian model:
    (alpha(t) x/3 - theta_t) / (1 - alpha(t)^2 / 3)."""
    alpha = sched.alpha(t)
    return (alpha * np.asarray(x) / 3.0 - np.asarray(theta_t)) / (1.0 - alpha**2 / 3.0)


def gaussian_clean_posterior_score(theta0, x):
    """Exact clean conditional score grad log N(theta0; x/3, 2/3)."""
    return (np.asarray(x) / 3.0 - np.asarray(theta0)) / (2.0 / 3.0)


def reference_posterior(
    spec: SimulatorSpec,
    x_star,
    n: int,
    seed: int,
    budget: int = REJECTION_BUDGET,
) -> np.ndarray:
    """n reference samples of theta ~ p(theta | x_star), shape (n, d)."""
    return posterior_joint_draws(spec, x_star, n, seed, budget)[0]


def posterior_joint_draws(
    spec: SimulatorSpec,
    x_star,
    n: int,
    seed: int,
    budget: int = REJECTION_BUDGET,
):
    """(theta, z) pairs from p(theta, z | x_star).

    Gaussian: conjugate closed form, theta|x ~ N(x/3, 2/3) and
    z|theta,x ~ N((theta + x)/2, 1/2). Discrete tasks: rejection over
    simulator draws, keeping the latents of accepted draws.
    """
    if n < 1:
        raise ValueError("need at least one posterior sample")
    rng = np.random.default_rng(seed)
    if isinstance(spec, GaussianSim):
        theta = x_star / 3.0 + np.sqrt(2.0 / 3.0) * rng.standard_normal((n, 1))
        z = (theta + x_star) / 2.0 + np.sqrt(0.5) * rng.standard_normal((n, 1))
        return theta, z

    spec.validate_support(np.zeros(spec.latent_dim), x_star)
    kept_theta, kept_z = [], []
    kept = 0
    drawn = 0
    while kept < n:
        if drawn >= budget:
            rate = kept / drawn
            raise UnreachableObservationError(
                f"{spec.sim_id}: acceptance rate {rate:.3g} for x*={x_star} "
                f"after {drawn} draws (floor {REJECTION_RATE_FLOOR})"
            )
        chunk = min(_REJECTION_CHUNK, budget - drawn)
        theta, z, x = spec.sample_batch(chunk, rng)
        hit = x == x_star
        kept_theta.append(theta[hit])
        kept_z.append(z[hit])
        kept += int(hit.sum())
        drawn += chunk
        if drawn >= 10 * _REJECTION_CHUNK and kept / drawn < REJECTION_RATE_FLOOR:
            raise UnreachableObservationError(
                f"{spec.sim_id}: acceptance rate {kept / drawn:.3g} below floor for x*={x_star}"
            )
    theta = np.concatenate(kept_theta)[:n]
    z = np.concatenate(kept_z)[:n]
    return theta, z


def gaussian_spec_or_raise(spec: SimulatorSpec, what: str) -> GaussianSim:
    if not isinstance(spec, GaussianSim):
        raise UnsupportedTaskError(f"{what} is only defined for the gaussian task, not {spec.sim_id}")
    return spec


def save_dataset(path, data: Dataset) -> None:
    """CSV with a provenance comment line and one row per draw."""
    d, latent = data.theta.shape[1], data.z.shape[1]
    header = [f"theta_{i}" for i in range(d)] + [f"z_{i}" for i in range(latent)] + ["x"]
    comment = f"sim={data.spec.sim_id} seed={data.seed} M={len(data)} params={_canonical_params(data.spec)}"
    lines = ["# " + comment, ",".join(header)]
    for i in range(len(data)):
        row = list(data.theta[i]) + list(data.z[i]) + [data.x[i]]
        lines.append(",".join(fmt17(v) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _canonical_params(spec: SimulatorSpec) -> str:
    return json.dumps(spec.params(), sort_keys=True, separators=(",", ":"))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        comment = fh.readline().strip()
        header = fh.readline().strip().split(",")
        body = np.loadtxt(fh, delimiter=",", ndmin=2)
    if not comment.startswith("# "):
        raise ValueError(f"{path}: missing dataset provenance comment")
    meta = dict(part.split("=", 1) for part in comment[2:].split(" ", 3))
    spec = make_simulator(meta["sim"], **json.loads(meta["params"]))
    d = sum(c.startswith("theta_") for c in header)
    latent = sum(c.startswith("z_") for c in header)
    theta, z, x = body[:, :d], body[:, d : d + latent], body[:, d + latent]
    if len(body) != int(meta["M"]):
        raise ValueError(f"{path}: row count {len(body)} != declared M={meta['M']}")
    spec.validate_support(z, x)
    return Dataset(spec, theta, z, x, int(meta["seed"]))
