"""System geometry, synthetic user-link channels and channel statistics.

Beams sit on a hexagonal grid and are grouped row-major into ``M`` clusters
of ``k`` consecutive beams.  Feeds sit on a denser hexagonal grid over the
same footprint.  The amplitude of the link between user ``u`` and feed ``j``
is ``g0 * exp(-alpha * d**2)`` with ``d`` the planar user-to-feed distance.

Two phase models are available:

``"geometric"`` (default)
    ``theta_uj = phi_u + kappa * <p_u, f_j>`` with ``phi_u`` uniform per user
    and trial, and ``kappa = pi / (beam_radius * feed_spacing)``.  The phase
    depends on where the user lands inside the beam, so the expected channel
    Gramians keep a non-trivial (non-diagonal) structure.
``"iid"``
    ``theta_uj`` i.i.d. uniform on ``[0, 2 pi)`` per entry and trial.  The
    expected Gramians are then diagonal.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from .errors import ConfigError

PHASE_MODELS = ("geometric", "iid")

SCENARIO_KEYS = frozenset(
    {"N", "M", "k", "n", "k_bar", "P", "beam_radius", "g0", "alpha",
     "gramian_samples", "gramian_seed", "phase_model"}
)


def default_alpha(beam_radius: float) -> float:
    """Roll-off putting the power gain at one beam radius 3 dB below peak."""
    return math.log(2.0) / (2.0 * beam_radius**2)


@dataclass(frozen=True)
class ScenarioConfig:
    N: int
    M: int
    k: int
    n: int
    k_bar: int = 0
    P: float | None = None
    beam_radius: float = 1.0
    g0: float = 1.0
    alpha: float | None = None
    gramian_samples: int = 500
    gramian_seed: int = 20170601
    phase_model: str = "geometric"
    K: int | None = None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "ScenarioConfig":
        unknown = set(data) - SCENARIO_KEYS - {"K"}
        if unknown:
            raise ConfigError(f"unknown scenario key(s): {', '.join(sorted(unknown))}")
        missing = {"N", "M", "k", "n"} - set(data)
        if missing:
            raise ConfigError(f"missing scenario key(s): {', '.join(sorted(missing))}")
        return cls(**dict(data))


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario must be a JSON object")
    return ScenarioConfig.from_mapping(data)


@dataclass(frozen=True, eq=False)
class Scenario:
    """Static system description.

    Attributes mirror the configuration; ``beam_centers`` is ``(K, 2)``,
    ``feed_positions`` is ``(N, 2)`` and ``feed_sets[m]`` holds the sorted
    feed indices used by gateway ``m``.
    """

    N: int
    M: int
    k: int
    n: int
    k_bar: int
    P: float
    P_m: np.ndarray
    beam_radius: float
    g0: float
    alpha: float
    beam_centers: np.ndarray
    feed_positions: np.ndarray
    feed_spacing: float
    feed_sets: tuple[np.ndarray, ...]
    gramian_samples: int = 500
    gramian_seed: int = 20170601
    phase_model: str = "geometric"

    @property
    def K(self) -> int:
        return self.k * self.M

    def users(self, m: int) -> slice:
        return slice(m * self.k, (m + 1) * self.k)

    def with_power(self, P: float) -> "Scenario":
        """Copy with total power ``P`` split evenly across clusters."""
        return dataclasses.replace(self, P=float(P), P_m=np.full(self.M, float(P) / self.M))

    def mean_gain(self) -> np.ndarray:
        """Expected ``|H_uj|**2`` with every user at its beam center."""
        d2 = _sqdist(self.beam_centers, self.feed_positions)
        return self.g0**2 * np.exp(-2.0 * self.alpha * d2)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One draw of the ``K x N`` user-link channel."""

    H_tilde: np.ndarray
    feed_sets: tuple[np.ndarray, ...]
    k: int
    user_positions: np.ndarray
    trial_seed: int | None = None

    @property
    def M(self) -> int:
        return len(self.feed_sets)

    @property
    def n(self) -> int:
        return len(self.feed_sets[0])

    @property
    def K(self) -> int:
        return self.H_tilde.shape[0]


@dataclass(frozen=True, eq=False)
class ExpectedGramians:
    """Sample estimates of the channel Gramians.

    ``G[p, m]`` estimates ``E[H_pm^H H_pm]``, where ``H_pm`` is the channel
    from the feeds of gateway ``m`` to the users of cluster ``p``.
    """

    G: np.ndarray
    sample_count: int
    seed: int

    def __getitem__(self, pm: tuple[int, int]) -> np.ndarray:
        return self.G[pm]

    @property
    def M(self) -> int:
        return self.G.shape[0]


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a[:, np.newaxis, :] - b[np.newaxis, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def hex_beam_centers(K: int, beam_radius: float) -> np.ndarray:
    """``K`` beam centers on a hexagonal grid, filled row-major."""
    spacing = math.sqrt(3.0) * beam_radius
    ncols = max(1, math.ceil(math.sqrt(K)))
    idx = np.arange(K)
    row, col = idx // ncols, idx % ncols
    x = (col + 0.5 * (row % 2)) * spacing
    y = row * spacing * math.sqrt(3.0) / 2.0
    return np.column_stack([x, y]).astype(float)


def hex_feed_positions(N: int, beam_centers: np.ndarray, spacing: float) -> np.ndarray:
    """``N`` lattice points covering the beam footprint.

    Points are ranked by distance to the nearest beam center, then distance
    to the footprint centroid, then lattice order.
    """
    centroid = beam_centers.mean(axis=0)
    extent = np.max(np.linalg.norm(beam_centers - centroid, axis=1)) if len(beam_centers) else 0.0
    L = int(math.ceil(extent / spacing + math.sqrt(N) + 2))
    jj, ii = np.meshgrid(np.arange(-L, L + 1), np.arange(-L, L + 1), indexing="ij")
    jj, ii = jj.ravel(), ii.ravel()
    x = (ii + 0.5 * (np.abs(jj) % 2)) * spacing
    y = jj * spacing * math.sqrt(3.0) / 2.0
    pts = np.column_stack([x, y]) + centroid
    dmin = np.sqrt(_sqdist(pts, beam_centers).min(axis=1))
    dcen = np.linalg.norm(pts - centroid, axis=1)
    order = np.lexsort((np.arange(len(pts)), np.round(dcen, 9), np.round(dmin, 9)))
    return pts[order[:N]]


def select_feeds(mean_gain: np.ndarray, k: int, n: int) -> tuple[np.ndarray, ...]:
    """Pick, per cluster, the ``n`` feeds with the largest summed mean gain.

    Clusters are the consecutive row blocks of size ``k`` in ``mean_gain``.
    Ties go to the lower feed index; sets are returned sorted and may
    overlap across clusters.
    """
    mean_gain = np.asarray(mean_gain, dtype=float)
    K, N = mean_gain.shape
    if K % k:
        raise ConfigError(f"mean_gain has {K} rows, not a multiple of k={k}")
    if n > N:
        raise ConfigError("n > N")
    sets = []
    for m in range(K // k):
        score = mean_gain[m * k:(m + 1) * k].sum(axis=0)
        if np.count_nonzero(score > 0) < n:
            raise ConfigError(f"insufficient coverage for cluster {m}: fewer than {n} feeds with positive gain")
        top = np.argsort(-score, kind="stable")[:n]
        sets.append(np.sort(top))
    return tuple(sets)


def _validate(cfg: ScenarioConfig) -> None:
    for name in ("N", "M", "k", "n"):
        v = getattr(cfg, name)
        if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")
    if cfg.k > cfg.n:
        raise ConfigError("k > n")
    if cfg.n > cfg.N:
        raise ConfigError("n > N")
    if cfg.K is not None and cfg.K != cfg.k * cfg.M:
        raise ConfigError("K != k*M")
    if not isinstance(cfg.k_bar, (int, np.integer)) or cfg.k_bar < 0:
        raise ConfigError(f"k_bar must be a nonnegative integer, got {cfg.k_bar!r}")
    if cfg.k_bar > cfg.n - cfg.k:
        raise ConfigError("k_bar > n - k")
    if cfg.k_bar > cfg.k * (cfg.M - 1):
        raise ConfigError("k_bar exceeds the number of off-cluster users")
    if cfg.P is not None and not cfg.P > 0:
        raise ConfigError("P must be > 0")
    if not cfg.beam_radius > 0:
        raise ConfigError("beam_radius must be > 0")
    if not cfg.g0 > 0:
        raise ConfigError("g0 must be > 0")
    if cfg.alpha is not None and cfg.alpha < 0:
        raise ConfigError("alpha must be >= 0")
    if cfg.gramian_samples < 1:
        raise ConfigError("gramian_samples must be >= 1")
    if cfg.phase_model not in PHASE_MODELS:
        raise ConfigError(f"phase_model must be one of {PHASE_MODELS}, got {cfg.phase_model!r}")


def build_scenario(config: ScenarioConfig | Mapping[str, Any]) -> Scenario:
    """Lay out beams and feeds and pick the feed subset of every gateway."""
    cfg = config if isinstance(config, ScenarioConfig) else ScenarioConfig.from_mapping(config)
    _validate(cfg)
    K = cfg.k * cfg.M
    P = float(cfg.P) if cfg.P is not None else float(K)
    alpha = default_alpha(cfg.beam_radius) if cfg.alpha is None else float(cfg.alpha)
    beams = hex_beam_centers(K, cfg.beam_radius)
    feed_spacing = math.sqrt(3.0) * cfg.beam_radius * math.sqrt(K / cfg.N)
    feeds = hex_feed_positions(cfg.N, beams, feed_spacing)
    scen = Scenario(
        N=cfg.N, M=cfg.M, k=cfg.k, n=cfg.n, k_bar=cfg.k_bar,
        P=P, P_m=np.full(cfg.M, P / cfg.M),
        beam_radius=float(cfg.beam_radius), g0=float(cfg.g0), alpha=alpha,
        beam_centers=beams, feed_positions=feeds, feed_spacing=feed_spacing,
        feed_sets=(),
        gramian_samples=int(cfg.gramian_samples), gramian_seed=int(cfg.gramian_seed),
        phase_model=cfg.phase_model,
    )
    return dataclasses.replace(scen, feed_sets=select_feeds(scen.mean_gain(), cfg.k, cfg.n))


def _draw_channel(scenario: Scenario, rng: np.random.Generator, jitter: bool = True) -> tuple[np.ndarray, np.ndarray]:
    K, N = scenario.K, scenario.N
    # positions are always drawn first so every phase model sees the same users
    radius = scenario.beam_radius * np.sqrt(rng.random(K))
    angle = 2.0 * np.pi * rng.random(K)
    offsets = np.column_stack([radius * np.cos(angle), radius * np.sin(angle)])
    pos = scenario.beam_centers + (offsets if jitter else 0.0)
    amp = scenario.g0 * np.exp(-scenario.alpha * _sqdist(pos, scenario.feed_positions))
    if scenario.phase_model == "iid":
        theta = 2.0 * np.pi * rng.random((K, N))
    else:
        kappa = np.pi / (scenario.beam_radius * scenario.feed_spacing)
        theta = 2.0 * np.pi * rng.random(K)[:, np.newaxis] + kappa * (pos @ scenario.feed_positions.T)
    return amp * np.exp(1j * theta), pos


def sample_channel(scenario: Scenario, trial_seed: int, jitter: bool = True) -> ChannelRealization:
    """Draw the user-link channel for one trial.

    Users land uniformly inside their beam disc (exactly at the beam center
    when ``jitter`` is false).  The result is a pure function of
    ``(scenario, trial_seed, jitter)``.
    """
    rng = np.random.default_rng(trial_seed)
    H, pos = _draw_channel(scenario, rng, jitter)
    return ChannelRealization(H_tilde=H, feed_sets=scenario.feed_sets, k=scenario.k,
                              user_positions=pos, trial_seed=trial_seed)


def cluster_block(ch: ChannelRealization, m: int, p: int) -> np.ndarray:
    """``H_mp``: rows of cluster ``m``'s users, columns of gateway ``p``'s feeds."""
    M = ch.M
    if not (0 <= m < M and 0 <= p < M):
        raise IndexError(f"cluster indices ({m}, {p}) out of range for M={M}")
    rows = slice(m * ch.k, (m + 1) * ch.k)
    return ch.H_tilde[rows][:, ch.feed_sets[p]]


def single_gateway_view(ch: ChannelRealization) -> ChannelRealization:
    """The same channel seen by one gateway serving every user on every feed."""
    N = ch.H_tilde.shape[1]
    return ChannelRealization(H_tilde=ch.H_tilde, feed_sets=(np.arange(N),), k=ch.K,
                              user_positions=ch.user_positions, trial_seed=ch.trial_seed)


def _gramian_rng(seed: int) -> np.random.Generator:
    # tag keeps these draws disjoint from trial streams seeded with the same integer
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**63 - 1), 0x6772616D]))


def estimate_expected_gramians(scenario: Scenario, samples: int | None = None, seed: int | None = None,
                               jitter: bool = True) -> ExpectedGramians:
    """Sample-mean estimate of ``E[H_pm^H H_pm]`` for every cluster pair."""
    samples = scenario.gramian_samples if samples is None else int(samples)
    seed = scenario.gramian_seed if seed is None else int(seed)
    if samples < 1:
        raise ValueError("samples must be >= 1")
    M, k, n = scenario.M, scenario.k, scenario.n
    rng = _gramian_rng(seed)
    acc = np.zeros((M, M, n, n), dtype=complex)
    for _ in range(samples):
        H, _pos = _draw_channel(scenario, rng, jitter)
        for m in range(M):
            blocks = H[:, scenario.feed_sets[m]].reshape(M, k, n)
            acc[:, m] += np.einsum("pki,pkj->pij", blocks.conj(), blocks)
    acc /= samples
    G = 0.5 * (acc + np.conj(np.swapaxes(acc, -1, -2)))
    return ExpectedGramians(G=G, sample_count=samples, seed=seed)


def mismatched(scenario: Scenario, alpha_factor: float = 2.0) -> Scenario:
    """Same layout and feed sets, roll-off scaled by ``alpha_factor``."""
    return dataclasses.replace(scenario, alpha=scenario.alpha * alpha_factor)
