"""Network geometry and mmWave channel generation.

Channels follow a sparse Saleh-Valenzuela model with UPA steering vectors at
every node.  Array layout convention: element ``(n_x, n_y)`` of an
``Nx x Ny`` array sits at flat index ``n_y * Nx + n_x`` (n_y-major).

Array shapes used throughout the package::

    Hbar : (B, K, N_r, N_t)   direct BS -> user links
    G    : (B, R, M, N_t)     BS -> RIS links
    V    : (R, K, N_r, M)     RIS -> user links
"""

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kvconfig import format_kv, parse_kv

log = logging.getLogger(__name__)

SPEED_OF_LIGHT = 299_792_458.0

# Default deployment (BS b at (0, 40(b-1), 6), RIS r at (100 r, 220, 4),
# users uniform in a 240 m x 160 m rectangle at 1.8 m height).
BS_SPACING = 40.0
BS_HEIGHT = 6.0
RIS_SPACING = 100.0
RIS_Y = 220.0
RIS_HEIGHT = 4.0
USER_AREA = (240.0, 160.0)
USER_HEIGHT = 1.8


def dbm_to_watts(dbm):
    """The one place where dBm values become linear watts."""
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def near_square_shape(n):
    """Factor ``n`` as ``(Nx, Ny)`` with ``Nx >= Ny`` and Ny as large as possible."""
    ny = max(d for d in range(1, math.isqrt(n) + 1) if n % d == 0)
    return (n // ny, ny)


@dataclass
class Scenario:
    """System parameters and node positions.

    Powers are linear watts; ``P_b`` is the per-BS budget shared by all BSs.
    """

    B: int = 6
    K: int = 4
    R: int = 3
    N_t: int = 32
    N_r: int = 8
    M: int = 64
    N_RF: int = 4
    f_c: float = 28e9
    P_b: float = 1e-3
    sigma2: float = float(dbm_to_watts(-85.0))
    bs_positions: list = None
    ris_positions: list = None
    user_positions: list = None
    omega: list = None
    L: int = 4
    spacing_ratio: float = 0.5
    los_enabled: bool = True
    strict_angles: bool = False
    nlos_excess_db: float = 10.0
    direct_excess_db: float = 0.0
    ris_gain_db: float = 0.0
    bs_shape: list = None
    ris_shape: list = None
    user_shape: list = None
    seed: int = 0

    def __post_init__(self):
        if self.bs_positions is None:
            self.bs_positions = [[0.0, BS_SPACING * b, BS_HEIGHT] for b in range(self.B)]
        if self.ris_positions is None:
            self.ris_positions = [
                [RIS_SPACING * (r + 1), RIS_Y, RIS_HEIGHT] for r in range(self.R)
            ]
        if self.omega is None:
            self.omega = [1.0 / self.K] * self.K
        for name, n in (("bs_shape", self.N_t), ("ris_shape", self.M), ("user_shape", self.N_r)):
            if getattr(self, name) is None:
                setattr(self, name, list(near_square_shape(n)))
        self.validate()

    def validate(self):
        counts = dict(B=self.B, K=self.K, R=self.R, N_t=self.N_t, N_r=self.N_r,
                      M=self.M, N_RF=self.N_RF, L=self.L)
        for name, value in counts.items():
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.N_RF > self.N_t:
            raise ValueError(f"N_RF={self.N_RF} exceeds N_t={self.N_t}")
        if not self.P_b > 0:
            raise ValueError(f"P_b must be positive, got {self.P_b!r}")
        if not self.sigma2 > 0:
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")
        if not self.los_enabled and self.L < 2:
            raise ValueError("los_enabled=false needs L >= 2 so that NLoS paths remain")
        omega = np.asarray(self.omega, dtype=float)
        if omega.shape != (self.K,) or np.any(omega <= 0) or abs(omega.sum() - 1.0) > 1e-9:
            raise ValueError(f"omega must hold K={self.K} positive weights summing to 1")
        for name, n_nodes in (("bs_positions", self.B), ("ris_positions", self.R)):
            if np.shape(getattr(self, name)) != (n_nodes, 3):
                raise ValueError(f"{name} must have shape ({n_nodes}, 3)")
        if self.user_positions is not None and np.shape(self.user_positions) != (self.K, 3):
            raise ValueError(f"user_positions must have shape ({self.K}, 3)")
        for name, n in (("bs_shape", self.N_t), ("ris_shape", self.M), ("user_shape", self.N_r)):
            nx, ny = getattr(self, name)
            if nx * ny != n:
                raise ValueError(f"{name}={getattr(self, name)} does not factor {n} elements")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.f_c

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_config_text(self):
        return format_kv(self.to_dict())

    @classmethod
    def from_config_text(cls, text):
        return cls.from_dict(parse_kv(text))

    @classmethod
    def from_dict(cls, mapping):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(mapping) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**mapping)


@dataclass(frozen=True)
class PathSpec:
    """One propagation path: complex gain, departure and arrival angles."""

    gain: complex
    aod: tuple  # (azimuth, elevation) at the transmitter
    aoa: tuple  # (azimuth, elevation) at the receiver
    is_los: bool = False


@dataclass(frozen=True)
class ChannelSet:
    """All link matrices of one channel realization.

    ``paths`` optionally records the generating paths, keyed by
    ``("H", b, k)``, ``("G", b, r)`` and ``("V", r, k)``.
    """

    Hbar: np.ndarray
    G: np.ndarray
    V: np.ndarray
    paths: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        for name in ("Hbar", "G", "V"):
            arr = np.array(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        B, K, N_r, N_t = self.Hbar.shape
        if self.G.shape[0] != B or self.G.shape[3] != N_t:
            raise ValueError(f"G shape {self.G.shape} inconsistent with Hbar {self.Hbar.shape}")
        R, M = self.G.shape[1], self.G.shape[2]
        if self.V.shape != (R, K, N_r, M):
            raise ValueError(f"V shape {self.V.shape}, expected {(R, K, N_r, M)}")

    @property
    def dims(self):
        B, K, N_r, N_t = self.Hbar.shape
        return dict(B=B, K=K, N_r=N_r, N_t=N_t, R=self.G.shape[1], M=self.G.shape[2])

    @property
    def V_stacked(self):
        """``V_k = [V_{1,k}, ..., V_{R,k}]`` for every user, shape (K, N_r, RM)."""
        R, K, N_r, M = self.V.shape
        return self.V.transpose(1, 2, 0, 3).reshape(K, N_r, R * M)

    @property
    def G_stacked(self):
        """``G_b`` with the per-RIS blocks stacked vertically, shape (B, RM, N_t)."""
        B, R, M, N_t = self.G.shape
        return self.G.reshape(B, R * M, N_t)

    def equivalent(self, phi):
        """Equivalent channels ``H_{b,k}`` for RIS vector ``phi``, shape (B, K, N_r, N_t)."""
        Vk = self.V_stacked
        Gb = self.G_stacked
        if phi.shape != (Gb.shape[1],):
            raise ValueError(f"phi has shape {phi.shape}, expected ({Gb.shape[1]},)")
        cascade = np.einsum("krm,m,bmt->bkrt", Vk, phi, Gb)
        return self.Hbar + cascade

    def with_ris_links_zeroed(self):
        return ChannelSet(self.Hbar.copy(), np.zeros_like(self.G), np.zeros_like(self.V))


def upa_steering(omega, varsigma, Nx, Ny, spacing_ratio=0.5):
    """Unit-norm UPA array response for azimuth ``omega`` and elevation ``varsigma``."""
    if Nx < 1 or Ny < 1:
        raise ValueError("array dimensions must be >= 1")
    nx = np.arange(Nx)
    ny = np.arange(Ny)
    phase = 2 * np.pi * spacing_ratio * (
        nx[None, :] * np.sin(omega) * np.sin(varsigma) + ny[:, None] * np.cos(varsigma)
    )
    return np.exp(1j * phase).reshape(-1) / np.sqrt(Nx * Ny)


def free_space_loss_db(distance, f_c):
    return 32.4 + 20 * np.log10(distance) + 20 * np.log10(f_c / 1e9)


def path_gain(distance, is_los, f_c, rng, nlos_excess_db=10.0):
    """Complex gain of one path.

    LoS: free-space magnitude with a uniform random phase.  NLoS: the LoS
    magnitude lowered by ``nlos_excess_db`` and scaled by a CN(0, 1) draw.
    """
    if not distance > 0:
        raise ValueError(f"distance must be positive, got {distance!r}")
    magnitude = 10.0 ** (-free_space_loss_db(distance, f_c) / 20.0)
    if is_los:
        return magnitude * np.exp(1j * rng.uniform(0.0, 2 * np.pi))
    small_scale = (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
    return magnitude * 10.0 ** (-nlos_excess_db / 20.0) * small_scale


def gen_sv_channel(tx_shape, rx_shape, paths, N1, N2, spacing_ratio=0.5):
    """``sqrt(N1 N2 / L) sum_l beta_l a_rx a_tx^H`` for the given paths, shape (N2, N1)."""
    if not paths:
        raise ValueError("at least one path is required")
    if tx_shape[0] * tx_shape[1] != N1 or rx_shape[0] * rx_shape[1] != N2:
        raise ValueError(
            f"array shapes {tx_shape}/{rx_shape} do not match N1={N1}, N2={N2}")
    H = np.zeros((N2, N1), dtype=complex)
    for p in paths:
        a_rx = upa_steering(*p.aoa, *rx_shape, spacing_ratio)
        a_tx = upa_steering(*p.aod, *tx_shape, spacing_ratio)
        H += p.gain * np.outer(a_rx, a_tx.conj())
    return np.sqrt(N1 * N2 / len(paths)) * H


def assemble_equivalent_channel(Hbar, V_k, G_b, phi):
    """``Hbar + V_k diag(phi) G_b`` for a single BS-user pair."""
    if V_k.shape[0] != Hbar.shape[0] or G_b.shape[1] != Hbar.shape[1]:
        raise ValueError("Hbar, V_k and G_b dimensions are inconsistent")
    if V_k.shape[1] != G_b.shape[0] or phi.shape != (G_b.shape[0],):
        raise ValueError("RIS dimension mismatch between V_k, G_b and phi")
    return Hbar + (V_k * phi[None, :]) @ G_b


_LINK_CODES = {"H": 0, "G": 1, "V": 2}


def _draw_paths(scn, kind, i, j, distance, rng_seed):
    # Independent streams for the LoS and NLoS draws of every link, so
    # toggling LoS leaves the NLoS paths untouched.
    elev_hi = 2 * np.pi if scn.strict_angles else np.pi

    def angles(rng):
        return ((rng.uniform(0, 2 * np.pi), rng.uniform(0, elev_hi)),
                (rng.uniform(0, 2 * np.pi), rng.uniform(0, elev_hi)))

    # Direct links may carry extra blockage loss; BS-RIS links an extra gain.
    excess = {"H": scn.direct_excess_db, "G": -scn.ris_gain_db}.get(kind, 0.0)
    scale = 10.0 ** (-excess / 20.0)
    paths = []
    base = [rng_seed, _LINK_CODES[kind], i, j]
    if scn.los_enabled:
        rng = np.random.default_rng(base + [0])
        aod, aoa = angles(rng)
        gain = scale * path_gain(distance, True, scn.f_c, rng)
        paths.append(PathSpec(gain, aod, aoa, True))
    rng = np.random.default_rng(base + [1])
    for _ in range(scn.L - 1):
        aod, aoa = angles(rng)
        gain = scale * path_gain(distance, False, scn.f_c, rng, scn.nlos_excess_db)
        paths.append(PathSpec(gain, aod, aoa, False))
    return paths


def sample_user_positions(K, rng):
    xy = rng.uniform((0.0, 0.0), USER_AREA, size=(K, 2))
    return np.column_stack([xy, np.full(K, USER_HEIGHT)]).tolist()


def build_scenario(config=None, seed=None):
    """Create a :class:`Scenario` and its :class:`ChannelSet`.

    ``config`` is a mapping of Scenario fields (or a Scenario).  When
    ``seed`` is given it overrides ``config["seed"]``.  User positions are
    drawn from the seed when not supplied.  The result is a pure function of
    ``(config, seed)``.
    """
    if isinstance(config, Scenario):
        config = config.to_dict()
    config = dict(config or {})
    if seed is not None:
        config["seed"] = int(seed)
    scn = Scenario.from_dict(config)
    if scn.user_positions is None:
        rng = np.random.default_rng([scn.seed, 99])
        scn.user_positions = sample_user_positions(scn.K, rng)
        scn.validate()

    bs = np.asarray(scn.bs_positions, dtype=float)
    ris = np.asarray(scn.ris_positions, dtype=float)
    users = np.asarray(scn.user_positions, dtype=float)
    sr = scn.spacing_ratio
    Hbar = np.empty((scn.B, scn.K, scn.N_r, scn.N_t), dtype=complex)
    G = np.empty((scn.B, scn.R, scn.M, scn.N_t), dtype=complex)
    V = np.empty((scn.R, scn.K, scn.N_r, scn.M), dtype=complex)
    paths = {}
    for b in range(scn.B):
        for k in range(scn.K):
            p = _draw_paths(scn, "H", b, k, np.linalg.norm(bs[b] - users[k]), scn.seed)
            Hbar[b, k] = gen_sv_channel(scn.bs_shape, scn.user_shape, p, scn.N_t, scn.N_r, sr)
            paths["H", b, k] = p
        for r in range(scn.R):
            p = _draw_paths(scn, "G", b, r, np.linalg.norm(bs[b] - ris[r]), scn.seed)
            G[b, r] = gen_sv_channel(scn.bs_shape, scn.ris_shape, p, scn.N_t, scn.M, sr)
            paths["G", b, r] = p
    for r in range(scn.R):
        for k in range(scn.K):
            p = _draw_paths(scn, "V", r, k, np.linalg.norm(ris[r] - users[k]), scn.seed)
            V[r, k] = gen_sv_channel(scn.ris_shape, scn.user_shape, p, scn.M, scn.N_r, sr)
            paths["V", r, k] = p
    log.debug("built scenario B=%d K=%d R=%d seed=%d", scn.B, scn.K, scn.R, scn.seed)
    return scn, ChannelSet(Hbar, G, V, paths)


def desk_config(**overrides):
    """Small configuration used by tests and quick experiments."""
    cfg = dict(B=2, K=2, R=1, N_t=8, N_RF=2, N_r=2, M=16)
    cfg.update(overrides)
    return cfg


# -- channel dumps ---------------------------------------------------------

def dump_channels(channels, path):
    """Write a ChannelSet as ``.npz`` (binary) or ``.csv`` (long format).

    CSV columns: ``link,i,j,row,col,re,im`` where ``link`` is ``H``
    (i=b, j=k), ``G`` (i=b, j=r) or ``V`` (i=r, j=k).
    """
    path = Path(path)
    if path.suffix == ".npz":
        np.savez(path, Hbar=channels.Hbar, G=channels.G, V=channels.V)
        return path
    if path.suffix != ".csv":
        raise ValueError(f"unsupported dump format {path.suffix!r} (use .npz or .csv)")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["link", "i", "j", "row", "col", "re", "im"])
        for name, arr in (("H", channels.Hbar), ("G", channels.G), ("V", channels.V)):
            for (i, j, row, col), val in np.ndenumerate(arr):
                writer.writerow([name, i, j, row, col, repr(float(val.real)), repr(float(val.imag))])
    return path


def load_channels(path):
    path = Path(path)
    if path.suffix == ".npz":
        with np.load(path) as data:
            return ChannelSet(data["Hbar"].copy(), data["G"].copy(), data["V"].copy())
    entries = {"H": [], "G": [], "V": []}
    with path.open(newline="") as fh:
        for rec in csv.DictReader(fh):
            idx = tuple(int(rec[c]) for c in ("i", "j", "row", "col"))
            entries[rec["link"]].append((idx, complex(float(rec["re"]), float(rec["im"]))))
    arrays = {}
    for name, items in entries.items():
        shape = tuple(max(ix[d] for ix, _ in items) + 1 for d in range(4))
        arr = np.zeros(shape, dtype=complex)
        for ix, val in items:
            arr[ix] = val
        arrays[name] = arr
    return ChannelSet(arrays["H"], arrays["G"], arrays["V"])
