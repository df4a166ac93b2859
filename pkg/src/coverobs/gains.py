"""Observer and controller gain synthesis.

The observer side follows the high-gain recipe: scale each diagonal block by
the gain ladder diag(theta^{n-1}, ..., theta, 1), place output-injection
poles on the scaled pair, and solve one Lyapunov equation per agent for the
consensus weighting matrix.  The controller side covers the inverter-network
benchmark: per-block pole placement plus the printed coupling-compensation
rows.

The coupling-gain threshold deserves a note.  The weight matrices scale
linearly with the coupling gain, so a threshold quoted in terms of their
norms would reference the quantity being chosen.  We evaluate the threshold
with the weights solved at unit coupling gain, which makes it a fixed number
that the chosen gain can be compared against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_continuous_lyapunov
from scipy.signal import place_poles

from .coverage import CoverAssignment
from .netgraph import NetworkPair, grounded_spectrum
from .plant import BlockPlant, assemble

LYAPUNOV_RESIDUAL_TOL = 1e-8


class GainsError(ValueError):
    pass


def spectral_abscissa(m: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(m).real))


def gamma_scaling(n: int, theta: float) -> np.ndarray:
    """Gain ladder diag(theta^{n-1}, ..., theta, 1)."""
    if theta < 1.0:
        raise GainsError(f"theta must be >= 1, got {theta}")
    return np.diag([theta ** (n - 1 - k) for k in range(n)])


def transform_block(
    A_ii: np.ndarray, C_i: np.ndarray, theta: float
) -> tuple[np.ndarray, np.ndarray]:
    """Similarity-scale a block: (G A G^-1 / theta^(n-1), C G^-1)."""
    n = A_ii.shape[0]
    g = gamma_scaling(n, theta)
    g_inv = np.diag(1.0 / np.diag(g))
    return g @ A_ii @ g_inv / theta ** (n - 1), C_i @ g_inv


def _rank(m: np.ndarray) -> int:
    s = np.linalg.svd(m, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > 1e-9 * s[0]))


def design_observer_gain(
    A_ii: np.ndarray, C_i: np.ndarray, theta: float, poles
) -> np.ndarray:
    """Output-injection gain placing the scaled block's poles as requested."""
    n = A_ii.shape[0]
    poles = [float(p) for p in poles]
    if len(poles) != n:
        raise GainsError(f"need {n} poles, got {len(poles)}")
    if any(p >= 0 for p in poles):
        raise GainsError("poles must be strictly negative")
    abar, cbar = transform_block(A_ii, C_i, theta)
    obs = np.vstack([cbar @ np.linalg.matrix_power(abar, k) for k in range(n)])
    if _rank(obs) < n:
        raise GainsError("block is not observable; cannot place poles")
    placed = place_poles(abar.T, cbar.T, poles)
    hbar = placed.gain_matrix.T
    if spectral_abscissa(abar - hbar @ cbar) >= 0:
        raise GainsError("placement failed to produce a Hurwitz block")
    return hbar


def solve_weight(F: np.ndarray, gamma: float) -> np.ndarray:
    """Symmetric positive definite P with F'P + PF = -2*gamma*I."""
    if gamma <= 0:
        raise GainsError(f"gamma must be positive, got {gamma}")
    if spectral_abscissa(F) >= 0:
        raise GainsError("weight equation needs a Hurwitz matrix")
    n = F.shape[0]
    rhs = -2.0 * gamma * np.eye(n)
    P = solve_continuous_lyapunov(F.T, rhs)
    # one refinement pass keeps the residual near round-off even when the
    # solution norm is large
    residual = F.T @ P + P @ F - rhs
    P = P - solve_continuous_lyapunov(F.T, residual)
    P = 0.5 * (P + P.T)
    res_norm = float(np.linalg.norm(F.T @ P + P @ F - rhs))
    if res_norm > LYAPUNOV_RESIDUAL_TOL:
        raise GainsError(f"weight residual {res_norm:.3e} exceeds tolerance")
    if np.min(np.linalg.eigvalsh(P)) <= 0:
        raise GainsError("weight matrix is not positive definite")
    return P


@dataclass(frozen=True)
class ControllerGains:
    """Static feedback blocks K_ij plus the estimate clamp level."""

    K_blocks: dict[tuple[int, int], np.ndarray]
    sat_level: float = 10.0

    def __post_init__(self):
        if self.sat_level <= 0:
            raise GainsError("sat_level must be positive")
        checked = {}
        for key, blk in self.K_blocks.items():
            b = np.asarray(blk, dtype=float).copy()
            b.setflags(write=False)
            checked[key] = b
        object.__setattr__(self, "K_blocks", checked)

    def K_block(self, i: int, j: int, m: int, n: int) -> np.ndarray:
        blk = self.K_blocks.get((i, j))
        return np.zeros((m, n)) if blk is None else blk

    def assemble_K(self, plant: BlockPlant) -> np.ndarray:
        K = np.zeros((plant.m * plant.N, plant.n * plant.N))
        for (i, j), blk in self.K_blocks.items():
            K[(i - 1) * plant.m : i * plant.m, (j - 1) * plant.n : j * plant.n] = blk
        return K

    def row_norm(self, i: int) -> float:
        """Norm of agent i's stacked feedback row."""
        rows = [blk for (di, _), blk in self.K_blocks.items() if di == i]
        if not rows:
            return 0.0
        return float(np.linalg.norm(np.hstack(rows), 2))


def design_controller_microgrid(
    plant: BlockPlant, poles=(-3.0, -4.0), sat_level: float = 10.0
) -> ControllerGains:
    """Benchmark feedback: local pole placement plus coupling rows.

    The off-diagonal rows repeat the coupling strength with positive sign
    rather than cancelling it; at the benchmark's default coupling magnitudes
    the distinction is far below solver precision.  The assembled closed loop
    is verified Hurwitz either way.
    """
    if plant.meta.get("kind") != "microgrid":
        raise GainsError("controller recipe is specific to the microgrid family")
    blocks: dict[tuple[int, int], np.ndarray] = {}
    for i in range(1, plant.N + 1):
        a = plant.A_blocks[(i, i)]
        b = plant.B_blocks[i]
        try:
            placed = place_poles(a, b, [float(p) for p in poles])
        except ValueError as exc:
            raise GainsError(f"pole placement failed for block {i}: {exc}") from exc
        blocks[(i, i)] = -placed.gain_matrix
        for j in plant.coupling_sources(i):
            blocks[(i, j)] = np.array([[plant.A_blocks[(i, j)][1, 0], 0.0]])
    gains = ControllerGains(K_blocks=blocks, sat_level=sat_level)
    A, B, _ = assemble(plant)
    if spectral_abscissa(A + B @ gains.assemble_K(plant)) >= 0:
        raise GainsError("assembled closed loop is not Hurwitz")
    return gains


# -------------------------------------------------------- spectral constants

def _cover_spectrum_floor(assignment: CoverAssignment, pair: NetworkPair) -> float:
    """Worst grounded consensus eigenvalue over all sets and anchor choices."""
    floor = np.inf
    for s in assignment.sets:
        if not s.members:
            continue
        for anchor in s.members:
            spectrum = grounded_spectrum(pair, s.members, anchor)
            floor = min(floor, spectrum.grounded_min_eig)
    if not np.isfinite(floor):
        raise GainsError("assignment has no nonempty cover sets")
    return float(floor)


def _spectral_constants(
    plant: BlockPlant,
    assignment: CoverAssignment,
    pair: NetworkPair,
    theta: float,
    controller: ControllerGains,
    poles,
) -> dict[str, float]:
    lam_floor = _cover_spectrum_floor(assignment, pair)
    lam_A = max(
        float(np.linalg.norm(plant.A_blocks[(i, i)] + plant.A_blocks[(i, i)].T, 2))
        for i in range(1, plant.N + 1)
    )
    lam_P = 0.0
    for i in range(1, plant.N + 1):
        hbar = design_observer_gain(
            plant.A_blocks[(i, i)], plant.C_blocks[i], theta, poles
        )
        abar, cbar = transform_block(plant.A_blocks[(i, i)], plant.C_blocks[i], theta)
        p_unit = solve_weight(abar - hbar @ cbar, 1.0)
        lam_P = max(lam_P, float(np.linalg.norm(p_unit, 2)))
    lam_bar = max(
        len(assignment.sets_of(i))
        * max(len(assignment.set_by_id(p).members) for p in assignment.sets_of(i))
        for i in range(1, plant.N + 1)
    )
    rho = np.sqrt(2.0) * max(
        controller.row_norm(i) for i in range(1, plant.N + 1)
    )
    A, B, _ = assemble(plant)
    return {
        "lambda_min_cover": lam_floor,
        "lambda_A": lam_A,
        "lambda_P": lam_P,
        "lambda_bar": float(lam_bar),
        "rho": float(rho),
        "norm_A": float(np.linalg.norm(A, 2)),
        "norm_B": float(np.linalg.norm(B, 2)),
    }


def _bound_from_constants(c: dict[str, float], theta: float, n: int) -> float:
    drive = c["lambda_A"] + 2.0 * c["lambda_P"] * c["lambda_bar"] * (
        c["norm_A"] + c["rho"] * c["norm_B"]
    )
    return drive / (2.0 * theta ** (n - 1) * c["lambda_min_cover"])


def gamma_lower_bound(
    plant: BlockPlant,
    assignment: CoverAssignment,
    pair: NetworkPair,
    theta: float,
    controller: ControllerGains,
    poles=None,
) -> float:
    """Coupling-gain threshold, evaluated with unit-gain weight matrices."""
    n = plant.n
    poles = poles if poles is not None else [-(k + 1.0) for k in range(n)]
    constants = _spectral_constants(plant, assignment, pair, theta, controller, poles)
    return _bound_from_constants(constants, theta, n)


# ------------------------------------------------------------ full design

@dataclass(frozen=True)
class ObserverDesign:
    """Everything the observer bank needs at run time."""

    theta: float
    gamma: float
    n: int
    poles: tuple[float, ...]
    policy: str
    Hbar: dict[int, np.ndarray]
    P: dict[int, np.ndarray]
    lambda_min_cover: float
    lambda_A: float
    lambda_P: float
    lambda_bar: float
    rho: float
    norm_A: float
    norm_B: float
    gamma_bound: float
    gamma_theta: np.ndarray = field(init=False, repr=False)
    Ptilde: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        g = gamma_scaling(self.n, self.theta)
        g.setflags(write=False)
        object.__setattr__(self, "gamma_theta", g)
        # Ptilde is the error weight pulled back to unscaled coordinates:
        # the certificate uses eps' P eps with eps = gamma_theta @ e, so the
        # weight on e is the congruence below.  A similarity transform here
        # loses symmetry and, with it, closed-loop stability at large theta.
        ptilde = {}
        for i, p in self.P.items():
            m = g @ p @ g
            m.setflags(write=False)
            ptilde[i] = m
        object.__setattr__(self, "Ptilde", ptilde)

    @property
    def stiff_scale(self) -> float:
        """gamma * theta^(n-1), the consensus-term magnitude."""
        return self.gamma * self.theta ** (self.n - 1)

    def injection_gain(self, i: int) -> np.ndarray:
        """Output-injection matrix applied to (y_i - C_i xhat)."""
        g_inv = np.diag(1.0 / np.diag(self.gamma_theta))
        return self.theta ** (self.n - 1) * g_inv @ self.Hbar[i]

    def consensus_weight(self, i: int) -> np.ndarray:
        """Self-estimate consensus coefficient gamma*theta^(n-1)*inv(Ptilde)."""
        return self.stiff_scale * np.linalg.inv(self.Ptilde[i])


def synthesize(
    plant: BlockPlant,
    assignment: CoverAssignment,
    pair: NetworkPair,
    theta: float,
    controller: ControllerGains,
    gamma: float | None = None,
    policy: str = "auto",
    poles=None,
) -> ObserverDesign:
    """Design the full observer parameter set for one theta.

    Policies: "auto" picks gamma = max(1.1 * bound, requested); "paper" uses
    the fixed schedule 100 * theta^2; "fixed" takes the request verbatim
    (the simulator then insists on --force when it sits below the bound).
    """
    n = plant.n
    pole_list = tuple(
        float(p) for p in (poles if poles is not None else [-(k + 1.0) for k in range(n)])
    )
    constants = _spectral_constants(
        plant, assignment, pair, theta, controller, pole_list
    )
    bound = _bound_from_constants(constants, theta, n)

    if policy == "auto":
        gamma_val = max(1.1 * bound, gamma if gamma is not None else 0.0)
    elif policy == "paper":
        gamma_val = 100.0 * theta * theta
    elif policy == "fixed":
        if gamma is None:
            raise GainsError("fixed policy needs an explicit gamma")
        gamma_val = float(gamma)
    else:
        raise GainsError(f"unknown gamma policy {policy!r}")

    hbar = {}
    weights = {}
    for i in range(1, plant.N + 1):
        hbar[i] = design_observer_gain(
            plant.A_blocks[(i, i)], plant.C_blocks[i], theta, pole_list
        )
        abar, cbar = transform_block(plant.A_blocks[(i, i)], plant.C_blocks[i], theta)
        weights[i] = solve_weight(abar - hbar[i] @ cbar, gamma_val)

    return ObserverDesign(
        theta=float(theta),
        gamma=float(gamma_val),
        n=n,
        poles=pole_list,
        policy=policy,
        Hbar=hbar,
        P=weights,
        gamma_bound=bound,
        **constants,
    )


# ------------------------------------------------------------------ file io

def save_design(design: ObserverDesign, path: str | Path, extra: dict | None = None) -> None:
    doc = {
        "theta": design.theta,
        "gamma": design.gamma,
        "n": design.n,
        "poles": list(design.poles),
        "policy": design.policy,
        "Hbar": {str(i): m.tolist() for i, m in design.Hbar.items()},
        "P": {str(i): m.tolist() for i, m in design.P.items()},
        "constants": {
            "lambda_min_cover": design.lambda_min_cover,
            "lambda_A": design.lambda_A,
            "lambda_P": design.lambda_P,
            "lambda_bar": design.lambda_bar,
            "rho": design.rho,
            "norm_A": design.norm_A,
            "norm_B": design.norm_B,
            "gamma_bound": design.gamma_bound,
        },
        "weight_transform": "congruence",
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_design(path: str | Path) -> ObserverDesign:
    try:
        doc = json.loads(Path(path).read_text())
        c = doc["constants"]
        return ObserverDesign(
            theta=float(doc["theta"]),
            gamma=float(doc["gamma"]),
            n=int(doc["n"]),
            poles=tuple(float(p) for p in doc["poles"]),
            policy=str(doc["policy"]),
            Hbar={int(i): np.array(m, dtype=float) for i, m in doc["Hbar"].items()},
            P={int(i): np.array(m, dtype=float) for i, m in doc["P"].items()},
            lambda_min_cover=float(c["lambda_min_cover"]),
            lambda_A=float(c["lambda_A"]),
            lambda_P=float(c["lambda_P"]),
            lambda_bar=float(c["lambda_bar"]),
            rho=float(c["rho"]),
            norm_A=float(c["norm_A"]),
            norm_B=float(c["norm_B"]),
            gamma_bound=float(c["gamma_bound"]),
        )
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GainsError):
            raise
        raise GainsError(f"cannot read design file {path}: {exc}") from exc


def save_controller(
    gains: ControllerGains, path: str | Path, manifest_hash: str | None = None
) -> None:
    doc = {
        "K": {f"{i},{j}": blk.tolist() for (i, j), blk in gains.K_blocks.items()},
        "sat_level": gains.sat_level,
    }
    if manifest_hash is not None:
        doc["manifest_hash"] = manifest_hash
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_controller(path: str | Path) -> ControllerGains:
    try:
        doc = json.loads(Path(path).read_text())
        blocks = {
            tuple(int(t) for t in key.split(",")): np.array(blk, dtype=float)
            for key, blk in doc["K"].items()
        }
        return ControllerGains(K_blocks=blocks, sat_level=float(doc["sat_level"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, GainsError):
            raise
        raise GainsError(f"cannot read controller file {path}: {exc}") from exc
