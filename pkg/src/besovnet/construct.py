"""Explicit construction of ReLU gadget networks and their assembly into a
norm-budgeted residual network approximating a B-spline series on a chart
cover, plus the dense-to-convolutional path conversion.

Every gadget carries a certified error bound computed at construction time,
and exactness guarantees that hold in floating point:

* squared-distance nets clip exactly at ``tau**2`` beyond the reach,
* indicator nets are exactly 1 inside the inner ball and exactly 0 outside
  the outer ball,
* spline nets are exactly 0 outside the atom's support box,
* the chart gate adds literally nothing to a block's output inside the
  inner ball and forces an exact 0 outside the outer ball.

Exactness is achieved by routing every "off" condition through a ReLU whose
pre-activation is strictly nonpositive there, never through cancellation of
rounded terms.  The piecewise-linear square approximants interpolate from
above, which is what makes the one-sided clips exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bspline import BSplineAtom, SparseSeries, eval_atom
from .network import DenseNet, DenseResNeXt, NormReport, dense_forward, norm_report


# ---------------------------------------------------------------------------
# layer-by-layer net builder
# ---------------------------------------------------------------------------


class Affine:
    """A linear functional (coefficients + bias) over one layer's units."""

    __slots__ = ("coeffs", "bias", "layer")

    def __init__(self, coeffs, bias: float, layer: int):
        self.coeffs = np.asarray(coeffs, dtype=float)
        self.bias = float(bias)
        self.layer = layer

    def __neg__(self) -> "Affine":
        return Affine(-self.coeffs, -self.bias, self.layer)

    def shifted(self, db: float) -> "Affine":
        return Affine(self.coeffs, self.bias + db, self.layer)


class NetBuilder:
    """Builds a dense ReLU net one layer at a time.

    Units of the next layer are scheduled as affine functionals of the
    current top layer via :meth:`unit`; :meth:`seal` materializes the layer.
    The final linear layer (no activation) comes from :meth:`finish`.
    """

    def __init__(self, in_dim: int):
        self.widths = [in_dim]
        self.rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._pending: list[Affine] = []

    @property
    def top(self) -> int:
        return len(self.widths) - 1

    @property
    def top_width(self) -> int:
        return self.widths[-1]

    def input_affine(self, coeffs, bias: float = 0.0) -> Affine:
        vec = np.zeros(self.widths[0])
        items = coeffs.items() if isinstance(coeffs, dict) else enumerate(coeffs)
        for idx, c in items:
            vec[idx] = c
        return Affine(vec, bias, 0)

    def lin(self, terms: dict[int, float], bias: float = 0.0) -> Affine:
        vec = np.zeros(self.top_width)
        for idx, c in terms.items():
            vec[idx] += c
        return Affine(vec, bias, self.top)

    def combine(self, parts, bias: float = 0.0) -> Affine:
        vec = np.zeros(self.top_width)
        total = bias
        for scale, aff in parts:
            if aff.layer != self.top:
                raise RuntimeError("affine references a stale layer")
            vec += scale * aff.coeffs
            total += scale * aff.bias
        return Affine(vec, total, self.top)

    def unit(self, affine: Affine) -> int:
        if affine.layer != self.top:
            raise RuntimeError("affine references a stale layer")
        self._pending.append(affine)
        return len(self._pending) - 1

    def seal(self):
        if not self._pending:
            raise RuntimeError("sealing an empty layer")
        W = np.stack([a.coeffs for a in self._pending])
        b = np.array([a.bias for a in self._pending])
        self.rows.append((W, b))
        self.widths.append(len(self._pending))
        self._pending = []

    def finish(self, outputs: list[Affine]) -> DenseNet:
        if self._pending:
            raise RuntimeError("unsealed layer pending")
        W = np.stack([a.coeffs for a in outputs])
        b = np.array([a.bias for a in outputs])
        return DenseNet(self.rows + [(W, b)])


# ---------------------------------------------------------------------------
# reusable columns (sawtooth squares, products, carries)
# ---------------------------------------------------------------------------


class SquareCol:
    """Piecewise-linear over-interpolant of ``t**2`` on ``[0, U]``.

    ``S`` sawtooth stages give certified error ``U**2 * 4**-(S+1)`` on the
    domain, exact 0 at ``t = 0``, and linear growth beyond the domain.
    Call :meth:`tick` once per layer (``S`` times, sealing in between);
    read :meth:`out` while the last stage's units are on top.  With
    ``S == 0`` no ticks are needed and the output is the chord ``U * t``.
    """

    def __init__(self, t: Affine, U: float):
        if U <= 0:
            raise ValueError("square domain bound must be positive")
        self.t = t
        self.U = float(U)
        self.stage = 0
        self.idx: tuple[int, int, int] | None = None

    def stage_pre(self, b: NetBuilder) -> tuple[Affine, Affine, Affine]:
        """Pre-activations of the next stage's (tooth, shifted tooth,
        accumulator) units, without scheduling them."""
        if self.stage == 0:
            y = Affine(self.t.coeffs / self.U, self.t.bias / self.U, self.t.layer)
            return y, y.shifted(-0.5), y
        a, bb, c = self.idx
        tooth = b.lin({a: 2.0, bb: -4.0})
        f = 4.0 ** -self.stage
        return tooth, tooth.shifted(-0.5), b.lin({c: 1.0, a: -2.0 * f, bb: 4.0 * f})

    def assign(self, ia: int, ib: int, ic: int):
        self.idx = (ia, ib, ic)
        self.stage += 1

    def tick(self, b: NetBuilder):
        pres = self.stage_pre(b)
        self.assign(*(b.unit(p) for p in pres))

    def out(self, b: NetBuilder) -> Affine:
        if self.stage == 0:
            if self.t.layer != b.top:
                raise RuntimeError("chord output read from a stale layer")
            return Affine(self.U * self.t.coeffs, self.U * self.t.bias, self.t.layer)
        a, bb, c = self.idx
        f = 4.0 ** -self.stage
        return b.combine([(self.U**2, b.lin({c: 1.0, a: -2.0 * f, bb: 4.0 * f}))])


def square_cert(U: float, S: int) -> float:
    """Certified sup error of the S-stage square interpolant on [0, U]."""
    return U**2 * 4.0 ** -(S + 1)


class CarryCol:
    """Keeps a nonnegative unit alive across layers."""

    def __init__(self, b: NetBuilder, idx: int):
        self._idx = idx

    def tick(self, b: NetBuilder):
        self._idx = b.unit(b.lin({self._idx: 1.0}))

    def ref(self, b: NetBuilder) -> Affine:
        return b.lin({self._idx: 1.0})


class SignedCarryCol:
    """Keeps a signed affine alive across layers as a (+, -) unit pair."""

    def __init__(self, affine: Affine):
        self._aff = affine
        self._pair: tuple[int, int] | None = None

    def tick(self, b: NetBuilder):
        aff = self._aff if self._pair is None else self.ref(b)
        self._pair = (b.unit(aff), b.unit(-aff))
        self._aff = None

    def ref(self, b: NetBuilder) -> Affine:
        if self._pair is None:
            return self._aff
        p, q = self._pair
        return b.lin({p: 1.0, q: -1.0})


class MultCol:
    """Approximate product via ``xy = (|x+y|^2 - |x|^2 - |y|^2) / 2``.

    The three square columns are identical and their units are scheduled
    interleaved by role, so the extracted difference cancels term by
    adjacent term in the fixed-order accumulation: if one factor is exactly
    0 the output is exactly 0 in floating point, not merely close to it.
    Consumes ``1 + S`` layers (abs layer + stages); certified error
    ``1.5 * U**2 * 4**-(S+1)`` where ``U`` bounds ``|x| + |y|`` on the
    accuracy domain.
    """

    def __init__(self, U: float, S: int):
        self.U, self.S = float(U), S
        self._pairs: list[tuple[int, int]] | None = None
        self.cols: list[SquareCol] | None = None
        self._ticks = 0

    @property
    def ticks_needed(self) -> int:
        return 1 + self.S

    def _make_cols(self, b: NetBuilder):
        self.cols = [
            SquareCol(b.lin({ip: 1.0, im: 1.0}), self.U) for ip, im in self._pairs
        ]

    def tick(self, b: NetBuilder, x: Affine | None = None, y: Affine | None = None):
        if self._pairs is None:
            if x is None or y is None:
                raise RuntimeError("first tick needs both factors")
            s = b.combine([(1.0, x), (1.0, y)])
            plus = [b.unit(a) for a in (s, x, y)]
            minus = [b.unit(-a) for a in (s, x, y)]
            self._pairs = list(zip(plus, minus))
        else:
            if self.cols is None:
                self._make_cols(b)
            pres = [col.stage_pre(b) for col in self.cols]
            idxs = [[0, 0, 0] for _ in self.cols]
            for role in range(3):
                for ci in range(len(self.cols)):
                    idxs[ci][role] = b.unit(pres[ci][role])
            for col, ix in zip(self.cols, idxs):
                col.assign(*ix)
        self._ticks += 1

    def out(self, b: NetBuilder) -> Affine:
        if self._ticks != self.ticks_needed:
            raise RuntimeError("product read before all layers were scheduled")
        if self.cols is None:  # S == 0: chord extraction off the abs pairs
            self._make_cols(b)
        outs = [c.out(b) for c in self.cols]
        return b.combine([(0.5, outs[0]), (-0.5, outs[1]), (-0.5, outs[2])])

    def cert_error(self) -> float:
        return 1.5 * square_cert(self.U, self.S)


@dataclass
class GadgetReport:
    """A constructed gadget plus its contract tag and measured behavior."""

    net: DenseNet
    contract: str
    measured_error: float
    depth: int
    width: int
    sq_norm: float
    cert_bound: float = math.nan
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# standalone gadgets: square, multiply gate, distance, indicator
# ---------------------------------------------------------------------------


def build_square(L: int, B: float) -> GadgetReport:
    """ReLU net approximating ``x**2`` on ``[0, 2B]`` with depth ``L``.

    ``L - 1`` sawtooth stages certify error ``4 B**2 4**-L``; exact at both
    endpoints (interpolation knots).
    """
    if L < 2:
        raise ValueError("depth must be at least 2 to host one sawtooth stage")
    if B <= 0:
        raise ValueError("input bound must be positive")
    b = NetBuilder(1)
    col = SquareCol(b.input_affine([1.0]), 2.0 * B)
    for _ in range(L - 1):
        col.tick(b)
        b.seal()
    net = b.finish([col.out(b)])

    grid = np.linspace(0.0, 2.0 * B, 1001)
    vals = dense_forward(net, grid[:, None]).ravel()
    err = float(np.max(np.abs(vals - grid**2)))
    return GadgetReport(
        net=net,
        contract="square-on-[0,2B]",
        measured_error=err,
        depth=net.depth,
        width=net.width,
        sq_norm=net.total_sq_norm(),
        cert_bound=square_cert(2.0 * B, L - 1),
        meta={"B": B},
    )


def build_multiply_gate(C: float) -> DenseNet:
    """Single-hidden-layer gate ``g(x, y) = -C relu(-x/C + y) + C relu(y)``.

    For ``0 <= x <= C`` and ``y in {0, 1}``: ``g(x, 1) = x``, ``g(x, 0) = 0``
    and ``g(0, y) = 0``; for intermediate ``y``, ``g = min(x, C y)``.
    """
    if C <= 0:
        raise ValueError("input cap must be positive")
    W1 = np.array([[-1.0 / C, 1.0], [0.0, 1.0]])
    W2 = np.array([[-C, C]])
    return DenseNet([(W1, None), (W2, None)])


def distance_cert(D: int, B: float, stages: int) -> float:
    """One-sided error bound of the distance core with given square stages."""
    return D * square_cert(2.0 * B, stages)


def _schedule_abs_pairs(b: NetBuilder, center: np.ndarray) -> list[tuple[int, int]]:
    return [
        (
            b.unit(b.input_affine({i: 1.0}, -center[i])),
            b.unit(b.input_affine({i: -1.0}, center[i])),
        )
        for i in range(center.size)
    ]


def build_distance_sq(center, L: int, B: float, tau: float) -> GadgetReport:
    """Net computing ``min(G, tau**2)`` with ``G`` an over-approximation of
    the squared distance ``d**2(x, c)`` on ``[-B, B]^D``.

    The squares interpolate from above, so ``G >= d**2`` everywhere on the
    domain and the output is exactly ``tau**2`` whenever ``d >= tau``; below
    the clip the error is at most the certified bound.
    """
    center = np.asarray(center, dtype=float)
    if L < 4:
        raise ValueError("depth must be >= 4 (abs layer, one square stage, clip)")
    if np.max(np.abs(center)) > B:
        raise ValueError("center coordinates exceed the declared bound")
    D = center.size
    stages = L - 3
    b = NetBuilder(D)
    pairs = _schedule_abs_pairs(b, center)
    b.seal()
    cols = [SquareCol(b.lin({p: 1.0, q: 1.0}), 2.0 * B) for p, q in pairs]
    for _ in range(stages):
        for col in cols:
            col.tick(b)
        b.seal()
    g = b.combine([(1.0, c.out(b)) for c in cols])
    clip = b.unit((-g).shifted(tau**2))  # relu(tau^2 - G)
    b.seal()
    net = b.finish([b.lin({clip: -1.0}, tau**2)])  # min(G, tau^2)

    rng = np.random.default_rng(0)
    pts = rng.uniform(-B, B, size=(2000, D))
    d2 = np.sum((pts - center) ** 2, axis=1)
    vals = dense_forward(net, pts).ravel()
    err = float(np.max(np.abs(vals - np.minimum(d2, tau**2))))
    return GadgetReport(
        net=net,
        contract="clipped-squared-distance",
        measured_error=err,
        depth=net.depth,
        width=net.width,
        sq_norm=net.total_sq_norm(),
        cert_bound=distance_cert(D, B, stages),
        meta={"B": B, "tau": tau, "center": center.tolist()},
    )


@dataclass
class ChartCover:
    """A ball cover of the data manifold with indicator-transition slack.

    Indicators are exactly 1 within radius ``r`` of their center and exactly
    0 beyond ``r_outer``; ``delta`` is the transition slack absorbing the
    distance-net error.  ``frames``/``origins`` optionally store each
    chart's linear projection to local coordinates.
    """

    centers: list
    r: float
    r_outer: float
    tau: float
    delta: float
    frames: list | None = None
    origins: list | None = None

    def __post_init__(self):
        self.centers = [np.asarray(c, dtype=float) for c in self.centers]
        if not self.centers:
            raise ValueError("cover needs at least one center")
        if self.r <= 0 or self.r_outer <= 0:
            raise ValueError("radii must be positive")
        if math.isfinite(self.tau) and self.r_outer > self.tau / 2:
            raise ValueError("outer radius must satisfy r_outer <= tau/2")
        if not self.r < self.r_outer - 2 * self.delta:
            raise ValueError("need r < r_outer - 2*delta")
        if self.frames is not None:
            self.frames = [np.asarray(f, dtype=float) for f in self.frames]
        if self.origins is not None:
            self.origins = [np.asarray(o, dtype=float) for o in self.origins]

    @property
    def n_charts(self) -> int:
        return len(self.centers)

    @property
    def ambient_dim(self) -> int:
        return self.centers[0].size

    def chart_map(self, i: int, d: int):
        """(frame, origin) for chart ``i``; defaults to the first ``d``
        ambient coordinates around the origin."""
        frame = (
            self.frames[i]
            if self.frames is not None
            else np.eye(self.ambient_dim)[:, :d]
        )
        origin = (
            self.origins[i] if self.origins is not None else np.zeros(self.ambient_dim)
        )
        return frame, origin

    def thresholds(self, cert: float) -> tuple[float, float]:
        """(t_in, den) for the squared-distance ramp; validates the slack."""
        if self.delta < cert:
            raise ValueError(
                f"transition slack delta={self.delta:g} is below the distance-net "
                f"error bound {cert:g}; increase depth or delta"
            )
        t_in = self.r**2 + self.delta
        den = self.r_outer**2 - self.r**2 - 2 * self.delta
        if den <= 0:
            raise ValueError(
                "squared-radius gap r_outer^2 - r^2 must exceed twice the slack"
            )
        return t_in, den


def build_indicator(cover: ChartCover, i: int, L: int, B: float = 1.0) -> DenseNet:
    """Soft chart indicator: exactly 1 for ``d(x, c_i) <= r``, exactly 0 for
    ``d(x, c_i) >= r_outer``, in ``[0, 1]`` between.

    Structure: squared-distance core, hinge ``relu(G - t_in)``, then the
    nested ramp ``relu(1 - hinge / den)``.  Both exact regimes come from a
    ReLU whose pre-activation has a strict one-sided margin, so they hold
    in floating point.
    """
    if L < 5:
        raise ValueError("depth must be >= 5 (abs, square stage, hinge, ramp)")
    center = np.asarray(cover.centers[i], dtype=float)
    stages = L - 4
    t_in, den = cover.thresholds(distance_cert(center.size, B, stages))
    b = NetBuilder(center.size)
    pairs = _schedule_abs_pairs(b, center)
    b.seal()
    cols = [SquareCol(b.lin({p: 1.0, q: 1.0}), 2.0 * B) for p, q in pairs]
    for _ in range(stages):
        for col in cols:
            col.tick(b)
        b.seal()
    g = b.combine([(1.0, c.out(b)) for c in cols])
    hinge = b.unit(g.shifted(-t_in))
    b.seal()
    ramp = b.unit(b.lin({hinge: -1.0 / den}, 1.0))
    b.seal()
    return b.finish([b.lin({ramp: 1.0})])


# ---------------------------------------------------------------------------
# spline value pipeline (standalone gadget and chart-gated block)
# ---------------------------------------------------------------------------


def _spline_coeffs(m: int) -> np.ndarray:
    return np.array(
        [(-1.0) ** j * math.comb(m + 1, j) / math.factorial(m) for j in range(m + 2)]
    )


def spline_min_depth(d: int, m: int, gated: bool) -> int:
    """Smallest depth the spline pipeline fits in (one stage everywhere)."""
    n_seq = (max(m - 2, 0) + (1 if m >= 3 else 0)) + (d - 1)
    if m == 1:
        base = 2 + 2 * (d - 1) + 1  # hinges, hats, chain, output
        return base + (1 if gated else 0)
    base = 1 + 1 + (1 if m == 2 else 0) + 2 * n_seq + 1
    if gated and not (m == 2 and d == 1):
        base += 1
    return base


def _stage_split(d: int, m: int, L: int, gated: bool) -> tuple[int, int, int]:
    """(S, S2, pad): term-square stages, stages per sequential product, and
    trailing identity padding."""
    min_l = spline_min_depth(d, m, gated)
    if L < min_l:
        raise ValueError(
            f"depth {L} insufficient for the spline pipeline with d={d}, m={m}"
            f"{' and chart gating' if gated else ''} (need >= {min_l})"
        )
    n_seq = (max(m - 2, 0) + (1 if m >= 3 else 0)) + (d - 1)
    budget = L - min_l
    if m == 1:
        if n_seq == 0:
            return 0, 1, budget
        per = budget // n_seq
        return 0, 1 + per, budget - per * n_seq
    per = budget // (n_seq + 1)
    extra = budget - per * (n_seq + 1)
    return 1 + per + extra, 1 + per, 0


@dataclass
class SplineValueNet:
    """A spline-atom value net plus its certified behavior."""

    net: DenseNet
    cert_inside: float
    value_bound: float
    delta: float
    plan: tuple[int, int, int]


def _run_mult(b: NetBuilder, col: MultCol, x: Affine, y_src, tickers):
    """Drive a MultCol to completion; ``y_src`` is a callable giving the
    second factor at the first tick; ``tickers`` are carried columns."""
    for t in range(col.ticks_needed):
        if t == 0:
            col.tick(b, x, y_src())
        else:
            col.tick(b)
        for c in tickers:
            c.tick(b)
        b.seal()
    return col.out(b)


def _build_spline_value(
    atom: BSplineAtom,
    L: int,
    delta: float | None,
    cover: ChartCover | None = None,
    chart_index: int = 0,
    coord_bound: float = 1.0,
) -> SplineValueNet:
    """Net computing the atom's basis value (coefficient 1), optionally gated
    by the chart indicator of ``cover.centers[chart_index]``.

    Ungated: input = local coordinates (dim d).  Gated: input = ambient
    coordinates; the value is multiplied (error-free outside the transition
    annulus) by the chart indicator.
    """
    m, d, k = atom.m, atom.dim, atom.k
    gated = cover is not None
    S, S2, pad = _stage_split(d, m, L, gated)

    coeffs = _spline_coeffs(m)
    U = m + 1.0
    abs_sum = float(np.sum(np.abs(coeffs)))
    eps_sq = square_cert(U, S) if m >= 2 else 0.0
    sum_cert = abs_sum * eps_sq

    if m >= 2:
        if delta is None:
            delta = min(
                (math.factorial(m) * max(sum_cert, 1e-300)) ** (1.0 / m), U / 4.0
            )
        edge_cert = delta**m / math.factorial(m)
    else:
        delta = 0.0
        edge_cert = 0.0

    # chart geometry
    if gated:
        D = cover.ambient_dim
        center = cover.centers[chart_index]
        frame, origin = cover.chart_map(chart_index, d)
        dist_stages = (S - 1) if m >= 2 else 0
        dist_bound = distance_cert(D, coord_bound, dist_stages)
        t_in, den = cover.thresholds(dist_bound)
        in_dim = D
    else:
        in_dim = d

    b = NetBuilder(in_dim)
    scale = 2.0**k
    if gated:
        u_in = [
            Affine(scale * frame[:, i], -scale * (frame[:, i] @ origin + atom.s[i]), 0)
            for i in range(d)
        ]
    else:
        u_in = [Affine(scale * np.eye(d)[i], -scale * atom.s[i], 0) for i in range(d)]

    # ---- layer 1: hinges (and distance abs pairs) --------------------------
    carries: list = []
    if m == 1:
        hinge_pairs = [
            (b.unit(u.shifted(-1.0)), b.unit(-u.shifted(-1.0))) for u in u_in
        ]
    else:
        term_idx = [[b.unit(u.shifted(-j)) for j in range(m + 2)] for u in u_in]
        if m == 2:
            edge_idx = [b.unit(u.shifted(-(U - delta))) for u in u_in]
        else:
            ramp_idx = [
                (b.unit((-u).shifted(U)), b.unit((-u).shifted(U - delta)))
                for u in u_in
            ]
    if gated:
        dist_pairs = _schedule_abs_pairs(b, center)
    b.seal()

    if m >= 2:
        if m == 2:
            edge_carries = [CarryCol(b, e) for e in edge_idx]
            carries += edge_carries
        else:
            ramp_carries = [(CarryCol(b, ra), CarryCol(b, rb)) for ra, rb in ramp_idx]
            for ra, rb in ramp_carries:
                carries += [ra, rb]
            tee_carries = [[CarryCol(b, t) for t in row] for row in term_idx]
            for row in tee_carries:
                carries += row
    if gated:
        dist_cols = [
            SquareCol(b.lin({p: 1.0, q: 1.0}), 2.0 * coord_bound)
            for p, q in dist_pairs
        ]

    sigma1: CarryCol | None = None

    def schedule_sigma1():
        g = b.combine([(1.0, c.out(b)) for c in dist_cols])
        return b.unit(g.shifted(-t_in))

    # ---- term squares (m >= 2) or hat layer (m == 1) -----------------------
    if m == 1:
        hat_idx = [
            b.unit(b.lin({a: -1.0, c: -1.0}, 1.0)) for a, c in hinge_pairs
        ]
        s1_idx = schedule_sigma1() if gated else None
        b.seal()
        gate_idx = hat_idx
        if gated:
            sigma1 = CarryCol(b, s1_idx)
        gate_bound_each = 1.0
        cert_dim = 0.0
        sq_cols = None
    else:
        sq_cols = [
            [SquareCol(b.lin({t: 1.0}), U) for t in row] for row in term_idx
        ]
        for step in range(S):
            for row in sq_cols:
                for col in row:
                    col.tick(b)
            for c in carries:
                c.tick(b)
            if gated and step < dist_stages:
                for col in dist_cols:
                    col.tick(b)
            s1_idx = schedule_sigma1() if gated and step == S - 1 else None
            b.seal()
        if gated:
            sigma1 = CarryCol(b, s1_idx)

    # ---- per-dimension values ----------------------------------------------
    lam_edge = None
    if m == 2:
        # conservative bound of the signed sum for edge-suppression sizing;
        # the gate OUTPUT is globally bounded by 1 + cert (cancellation holds
        # on the support and the gate kills everything beyond it)
        sum_sup = abs_sum * (U**2 + eps_sq)
        slope_bound = abs_sum * 2.0 * U
        lam_edge = (sum_sup + slope_bound * delta + 1.0) / delta
        cert_dim = sum_cert + edge_cert
        fold_chart = gated and d == 1
        if fold_chart:
            lam_y = (1.0 + sum_cert + 1.0) / den
        gate_idx = []
        for i in range(d):
            total = b.combine(
                [(coeffs[j], sq_cols[i][j].out(b)) for j in range(m + 2)]
            )
            parts = [(1.0, total), (-lam_edge, edge_carries[i].ref(b))]
            if fold_chart:
                parts.append((-lam_y, sigma1.ref(b)))
            gate_idx.append(b.unit(b.combine(parts)))
        if gated and not fold_chart:
            sigma1.tick(b)
        b.seal()
        gate_bound_each = 1.0 + cert_dim
        if fold_chart:
            value = b.lin({gate_idx[0]: 1.0})
            net = _pad_and_finish(b, value, L, signed=False)
            return SplineValueNet(net, cert_dim, gate_bound_each, delta, (S, S2, pad))
    elif m >= 3:
        # power chains to t^m, then the edge-ramp product gate
        pow_cert = eps_sq
        pow_bound = U**2 + eps_sq
        cur_pows = [[col.out(b) for col in row] for row in sq_cols]
        # note: affines over the top layer; consumed immediately by MultCols
        for _power in range(m - 2):
            mcols = [
                [MultCol(U=pow_bound + U, S=S2) for _ in range(m + 2)] for _ in range(d)
            ]
            for t in range(1 + S2):
                for i in range(d):
                    for j in range(m + 2):
                        if t == 0:
                            mcols[i][j].tick(
                                b, cur_pows[i][j], tee_carries[i][j].ref(b)
                            )
                        else:
                            mcols[i][j].tick(b)
                for c in carries:
                    c.tick(b)
                if sigma1 is not None:
                    sigma1.tick(b)
                b.seal()
            cur_pows = [[mc.out(b) for mc in row] for row in mcols]
            pow_cert = mcols[0][0].cert_error() + U * pow_cert
            pow_bound = pow_bound * U + pow_cert
        sig_cert = abs_sum * pow_cert
        # the signed sum cancels down to the basis value on the support, so
        # its local magnitude (all the product gate needs) is 1 + cert
        sig_local = 1.0 + sig_cert
        # product with the right-edge ramp rho in [0, 1]
        gcols = [MultCol(U=sig_local + 1.0, S=S2) for _ in range(d)]
        for t in range(1 + S2):
            for i in range(d):
                if t == 0:
                    ra, rb = ramp_carries[i]
                    rho = b.combine(
                        [(1.0 / delta, ra.ref(b)), (-1.0 / delta, rb.ref(b))]
                    )
                    sig = b.combine(
                        [
                            (coeffs[j], cur_pows[i][j])
                            for j in range(m + 2)
                        ]
                    )
                    gcols[i].tick(b, sig, rho)
                else:
                    gcols[i].tick(b)
            for c in carries:
                c.tick(b)
            if sigma1 is not None:
                sigma1.tick(b)
            b.seal()
        gate_vals = [g.out(b) for g in gcols]
        cert_dim = gcols[0].cert_error() + sig_cert + edge_cert
        gate_bound_each = 1.0 + cert_dim

    # ---- cross-dimension product chain -------------------------------------
    if m >= 3:
        pending = [SignedCarryCol(aff) for aff in gate_vals[1:]]
        cur = gate_vals[0]
    else:
        pending = [CarryCol(b, g) for g in gate_idx[1:]]
        cur = b.lin({gate_idx[0]: 1.0})
    cur_cert = cert_dim
    cur_bound = gate_bound_each
    for _ in range(1, d):
        nxt = pending[0]
        rest = pending[1:]
        col = MultCol(U=cur_bound + gate_bound_each, S=S2)
        tickers = list(rest)
        if sigma1 is not None:
            tickers.append(sigma1)
        cur = _run_mult(b, col, cur, lambda: nxt.ref(b), tickers)
        cur_cert = col.cert_error() + gate_bound_each * cur_cert + cur_bound * cert_dim
        cur_bound = cur_bound * gate_bound_each + cur_cert
        pending = rest

    # ---- chart gate (when not folded) ---------------------------------------
    if gated:
        lam_y = (cur_bound + 1.0) / den
        gate = b.unit(b.combine([(1.0, cur), (-lam_y, sigma1.ref(b))]))
        b.seal()
        cur = b.lin({gate: 1.0})
        signed = False
    else:
        signed = True

    net = _pad_and_finish(b, cur, L, signed=signed)
    return SplineValueNet(net, cur_cert, cur_bound, delta, (S, S2, pad))


def _pad_and_finish(b: NetBuilder, value: Affine, L: int, signed: bool) -> DenseNet:
    """Carry ``value`` through identity layers until depth ``L`` is reached,
    then finish with a single-output affine."""
    while b.top + 1 < L:
        if signed:
            ip = b.unit(value)
            im = b.unit(-value)
            b.seal()
            value = b.lin({ip: 1.0, im: -1.0})
        else:
            ip = b.unit(value)
            b.seal()
            value = b.lin({ip: 1.0})
    if b.top + 1 > L:
        raise RuntimeError(f"pipeline overflowed depth {L} (at {b.top + 1})")
    return b.finish([value])


def build_bspline_net(
    atom: BSplineAtom, L: int, delta: float | None = None
) -> GadgetReport:
    """ReLU net approximating the tensor-product spline atom (coefficient 1).

    Exactly 0 outside the support box, within the certified bound inside.
    ``m == 1`` atoms are represented exactly (nested-hinge hats); higher
    orders use gated signed sums of squared hinges with error decaying
    exponentially in the depth.
    """
    built = _build_spline_value(atom, L, delta)
    measured, grid_meta = _measure_spline_error(built.net, atom)
    bal = balanced_sq_norm(block_embed(built.net, atom.dim, atom.dim + 2, atom.dim + 1))
    norm_const = bal / (
        2.0 ** (2.0 * atom.k / built.net.depth) * atom.dim * atom.m * built.net.depth
    )
    return GadgetReport(
        net=built.net,
        contract="spline-atom",
        measured_error=measured,
        depth=built.net.depth,
        width=built.net.width,
        sq_norm=built.net.total_sq_norm(),
        cert_bound=built.cert_inside,
        meta={
            "k": atom.k,
            "m": atom.m,
            "d": atom.dim,
            "delta": built.delta,
            "balanced_sq_norm": bal,
            "norm_constant": norm_const,
            **grid_meta,
        },
    )


def _measure_spline_error(net: DenseNet, atom: BSplineAtom) -> tuple[float, dict]:
    lo, hi = atom.support_box()
    span = hi - lo
    n = max(5, int(round(41 ** (1 / atom.dim))))
    axes = [
        np.linspace(l - 0.25 * s, h + 0.25 * s, n)
        for l, h, s in zip(lo, hi, span)
    ]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([mm.ravel() for mm in mesh], axis=1)
    ref = eval_atom(BSplineAtom(m=atom.m, k=atom.k, s=atom.s, a=1.0), pts)
    vals = dense_forward(net, pts).ravel()
    inside = np.all((pts > lo) & (pts < hi), axis=1)
    err_inside = float(np.max(np.abs(vals - ref)[inside])) if np.any(inside) else 0.0
    outside_exact = bool(np.all(vals[~inside] == 0.0))
    return err_inside, {"outside_exact_on_grid": outside_exact}


# ---------------------------------------------------------------------------
# bias removal, embedding, rebalancing
# ---------------------------------------------------------------------------


def remove_bias(net: DenseNet) -> DenseNet:
    """Bias-free equivalent of width + 1: ``f'([x, 1]) = f(x)`` exactly.

    Interior layers become ``[[W, b], [0, 1]]`` (the appended unit carries
    the constant 1); the last layer becomes ``[W_L, b_L]``.  The squared
    norm grows by exactly ``depth - 1`` (the carried ones).
    """
    L = net.depth
    rows = []
    for idx, (W, bias) in enumerate(net.layers):
        b = np.zeros(W.shape[0]) if bias is None else bias
        if idx < L - 1:
            top = np.hstack([W, b[:, None]])
            carry = np.zeros((1, W.shape[1] + 1))
            carry[0, -1] = 1.0
            rows.append((np.vstack([top, carry]), None))
        else:
            rows.append((np.hstack([W, b[:, None]]), None))
    return DenseNet(rows)


def block_embed(
    net: DenseNet, ambient_dim: int, pad_width: int, readout_index: int
) -> DenseNet:
    """Embed a scalar-output gadget into a residual building block.

    The block maps the padded vector ``[x, 1, accumulators]`` to a vector of
    the same width whose only nonzero coordinate is ``readout_index``; the
    constant-1 coordinate feeds the gadget biases (bias-free block).
    """
    if net.out_dim != 1:
        raise ValueError("block gadgets must have a single output")
    if net.in_dim != ambient_dim:
        raise ValueError("gadget input dimension disagrees with the ambient one")
    if pad_width < ambient_dim + 2:
        raise ValueError("padded width must cover input, bias 1 and an accumulator")
    L = net.depth
    rows = []
    for idx, (W, bias) in enumerate(net.layers):
        b = np.zeros(W.shape[0]) if bias is None else bias
        if idx == 0:
            top = np.zeros((W.shape[0] + 1, pad_width))
            top[:-1, :ambient_dim] = W
            top[:-1, ambient_dim] = b
            top[-1, ambient_dim] = 1.0
            rows.append((top, None))
        elif idx < L - 1:
            top = np.hstack([W, b[:, None]])
            carry = np.zeros((1, W.shape[1] + 1))
            carry[0, -1] = 1.0
            rows.append((np.vstack([top, carry]), None))
        else:
            out = np.zeros((pad_width, W.shape[1] + 1))
            out[readout_index, :-1] = W[0]
            out[readout_index, -1] = b[0]
            rows.append((out, None))
    return DenseNet(rows)


def rebalance(net: DenseNet, product: float = 1.0, sign: float = 1.0) -> DenseNet:
    """Equalize per-layer Frobenius norms of a bias-free net by per-layer
    rescaling (1-homogeneity), making the represented function ``sign *
    product`` times the original.  ``product = 0`` zeroes the network."""
    if not net.is_bias_free():
        raise ValueError("rebalancing requires a bias-free network")
    L = net.depth
    norms = [float(np.linalg.norm(W)) for W, _ in net.layers]
    if product == 0.0 or any(n == 0.0 for n in norms):
        return DenseNet([(np.zeros_like(W), None) for W, _ in net.layers])
    log_t = (math.log(product) + sum(math.log(n) for n in norms)) / L
    t = math.exp(log_t)
    layers = []
    for idx, (W, _) in enumerate(net.layers):
        c = t / norms[idx]
        if idx == L - 1:
            c *= sign
        layers.append((W * c, None))
    return DenseNet(layers)


def balanced_sq_norm(net: DenseNet) -> float:
    """Total squared norm after optimal per-layer rebalancing:
    ``L * (prod_l ||W_l||_F^2)^(1/L)`` (0 when any layer is zero)."""
    L = net.depth
    total = 0.0
    for W, bias in net.layers:
        n = float(np.sum(W * W))
        if bias is not None:
            n += float(np.sum(bias * bias))
        if n == 0.0:
            return 0.0
        total += math.log(n)
    return L * math.exp(total / L)


# ---------------------------------------------------------------------------
# assembly into a residual network
# ---------------------------------------------------------------------------


@dataclass
class AssembleResult:
    """Assembled residual network with its norm report and certificates."""

    net: DenseResNeXt
    report: NormReport
    cert_bound: float
    scale: float
    norm_constant: float
    block_certs: list


def assemble_resnext(
    series_per_chart: list[SparseSeries],
    cover: ChartCover,
    L: int,
    budget_mode: bool = True,
    n_blocks: int | None = None,
    paths_per_block: int | None = None,
    coord_bound: float = 1.0,
) -> AssembleResult:
    """Assemble one building block per (chart, atom) into a residual network.

    Each block computes ``a * basis_value * indicator`` routed to the
    accumulator channel, with weights balanced so each block's per-layer
    norms are equal and scaled by ``|a|^(1/L)`` (sign on the last layer).
    With ``budget_mode`` the residual weights are globally rescaled so the
    total residual norm stops growing with the atom count (the readout
    compensates by ``c**-L``), matching the norm-budgeted class.
    """
    if len(series_per_chart) != cover.n_charts:
        raise ValueError("need one series per chart")
    D = cover.ambient_dim
    pad_width = D + 2
    acc = D + 1

    jobs = [
        (i, atom)
        for i, series in enumerate(series_per_chart)
        for atom in series.atoms
    ]
    total = len(jobs)
    if total == 0:
        raise ValueError("nothing to assemble: all series are empty")
    if n_blocks is None and paths_per_block is None:
        n_blocks = max(1, int(math.isqrt(total)))
        paths_per_block = math.ceil(total / n_blocks)
    elif n_blocks is None:
        n_blocks = math.ceil(total / paths_per_block)
    elif paths_per_block is None:
        paths_per_block = math.ceil(total / n_blocks)
    if n_blocks * paths_per_block < total:
        raise ValueError(
            f"grid {n_blocks}x{paths_per_block} cannot hold {total} building blocks"
        )

    blocks_flat = []
    block_certs = []
    cert_total = 0.0
    for i, atom in jobs:
        built = _build_spline_value(
            atom, L, None, cover=cover, chart_index=i, coord_bound=coord_bound
        )
        embedded = block_embed(built.net, D, pad_width, acc)
        scaled = rebalance(embedded, product=abs(atom.a), sign=math.copysign(1.0, atom.a))
        blocks_flat.append(scaled)
        block_certs.append(built.cert_inside)
        cert_total += abs(atom.a) * built.cert_inside

    zero_template = blocks_flat[0]
    while len(blocks_flat) < n_blocks * paths_per_block:
        blocks_flat.append(
            DenseNet([(np.zeros_like(W), None) for W, _ in zero_template.layers])
        )

    blocks = [
        blocks_flat[n * paths_per_block : (n + 1) * paths_per_block]
        for n in range(n_blocks)
    ]

    scale = 1.0
    if budget_mode:
        p = series_per_chart[0].params.p
        wnorm = _joint_weighted_norm(series_per_chart)
        if wnorm > 0:
            exponent = 1.0 - (2.0 / (p * L) if math.isfinite(p) else 0.0)
            scale = math.sqrt(total**-exponent * wnorm ** (-2.0 / L))
            blocks = [
                [
                    DenseNet([(W * scale, None) for W, _ in net.layers])
                    for net in row
                ]
                for row in blocks
            ]

    w_out = np.zeros(pad_width)
    w_out[acc] = scale**-L
    net = DenseResNeXt(
        blocks=blocks,
        input_dim=D,
        pad_width=pad_width,
        w_out=w_out,
        readout_indices=[acc],
    )
    report = norm_report(net)
    return AssembleResult(
        net=net,
        report=report,
        cert_bound=cert_total,
        scale=scale,
        norm_constant=report.b_res_actual / L,
        block_certs=block_certs,
    )


def _joint_weighted_norm(series_list: list[SparseSeries]) -> float:
    p = series_list[0].params.p
    scaled = np.array(
        [2.0**a.k * abs(a.a) for s in series_list for a in s.atoms]
    )
    if scaled.size == 0:
        return 0.0
    if math.isinf(p):
        return float(scaled.max())
    return float(np.sum(scaled**p) ** (1.0 / p))


# ---------------------------------------------------------------------------
# dense path -> convolutional path
# ---------------------------------------------------------------------------


@dataclass
class ConvPathReport:
    """Kernels realizing a dense network as a convolutional path."""

    kernels: list
    l0: int
    channels: int
    total_sq_norm: float


def fnn_to_cnn(net: DenseNet, K: int) -> ConvPathReport:
    """Convolutional path whose first output position reproduces a bias-free
    dense network on length-``h`` single-channel signals.

    Depth is ``L' + L0 - 1`` with ``L0 = ceil((h-1)/(K-1))``; channel count
    at most ``4 w'``.  Stage one accumulates the first dense layer with a
    running (positive, negative) pair per output neuron while shifting the
    signal left by ``K - 1`` per layer; remaining layers act per position.
    The total squared kernel norm is at most ``4 sum ||W'||_F^2 + 4 w' L0``.
    """
    if K <= 1:
        raise ValueError("kernel size must exceed 1")
    if not net.is_bias_free():
        raise ValueError("convert biases first (remove_bias)")
    h = net.in_dim
    weights = [W for W, _ in net.layers]
    w1 = weights[0]
    copies = w1.shape[0]
    l0 = max(1, math.ceil((h - 1) / (K - 1)))
    kernels = []

    if l0 == 1:
        ker = np.zeros((copies, K, 1))
        ker[:, :h, 0] = w1
        kernels.append(ker)
    else:
        # channel layout per copy j: 4j + (0: x+, 1: x-, 2: pos, 3: neg)
        covered = K
        ker = np.zeros((4 * copies, K, 1))
        for j in range(copies):
            ker[4 * j + 0, K - 1, 0] = 1.0
            ker[4 * j + 1, K - 1, 0] = -1.0
            ker[4 * j + 2, :K, 0] = w1[j, :K]
            ker[4 * j + 3, :K, 0] = -w1[j, :K]
        kernels.append(ker)
        for step in range(2, l0 + 1):
            new_cover = min(step * (K - 1) + 1, h)
            chunk = range(covered, new_cover)
            last = step == l0
            out_ch = copies if last else 4 * copies
            ker = np.zeros((out_ch, K, 4 * copies))
            for j in range(copies):
                if last:
                    ker[j, 0, 4 * j + 2] = 1.0
                    ker[j, 0, 4 * j + 3] = -1.0
                    for t in chunk:
                        tap = t - (step - 1) * (K - 1)
                        ker[j, tap, 4 * j + 0] = w1[j, t]
                        ker[j, tap, 4 * j + 1] = -w1[j, t]
                else:
                    ker[4 * j + 0, K - 1, 4 * j + 0] = 1.0
                    ker[4 * j + 1, K - 1, 4 * j + 1] = 1.0
                    ker[4 * j + 2, 0, 4 * j + 2] = 1.0
                    ker[4 * j + 3, 0, 4 * j + 3] = 1.0
                    for t in chunk:
                        tap = t - (step - 1) * (K - 1)
                        w = w1[j, t]
                        if w >= 0:
                            ker[4 * j + 2, tap, 4 * j + 0] = w
                            ker[4 * j + 3, tap, 4 * j + 1] = w
                        else:
                            ker[4 * j + 2, tap, 4 * j + 1] = -w
                            ker[4 * j + 3, tap, 4 * j + 0] = -w
            kernels.append(ker)
            covered = new_cover

    for Wl in weights[1:]:
        ker = np.zeros((Wl.shape[0], K, Wl.shape[1]))
        ker[:, 0, :] = Wl
        kernels.append(ker)

    total = float(sum(np.sum(k * k) for k in kernels))
    return ConvPathReport(
        kernels=kernels, l0=l0, channels=max(k.shape[0] for k in kernels), total_sq_norm=total
    )
