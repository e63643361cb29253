"""Self-contained second-order cone programming solver.

Solves  min c'v  s.t.  G v + s = h,  s in K,  where K is a product of a
nonnegative orthant block and second-order cone blocks. The implementation
is a primal-dual path-following method on the homogeneous self-dual
embedding with Nesterov-Todd scaling and a predictor-corrector step, so
primal infeasibility is detected via a Farkas certificate instead of by
iteration blowup. Dense linear algebra throughout; intended for the small
(tens of variables) recovery programs this package generates, not as a
general-purpose solver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

_TINY = 1e-14
# Residuals are driven well below the reported tolerance so that solutions
# survive strict constraint substitution; the gap stops at the tolerance.
_FEAS_FACTOR = 1e-2


@dataclass(frozen=True)
class ConeSpec:
    """Product cone: ``l`` nonnegative coordinates, then SOC blocks of the given dims."""

    l: int
    socs: tuple = ()

    def __post_init__(self):
        if self.l < 0 or any(d < 1 for d in self.socs):
            raise ValueError("invalid cone specification")
        object.__setattr__(self, "socs", tuple(int(d) for d in self.socs))

    @property
    def m(self) -> int:
        return self.l + sum(self.socs)

    @property
    def degree(self) -> int:
        return self.l + len(self.socs)


@dataclass
class SocpResult:
    status: str                  # optimal | primal_infeasible | dual_infeasible | max_iters
    x: np.ndarray | None
    s: np.ndarray | None = field(default=None, repr=False)
    z: np.ndarray | None = field(default=None, repr=False)
    objective: float = np.nan
    iterations: int = 0
    pres: float = np.nan
    dres: float = np.nan
    gap: float = np.nan


class _Cone:
    """Grouped index structure so same-dimension SOC blocks vectorize."""

    def __init__(self, spec: ConeSpec):
        self.spec = spec
        self.l = spec.l
        self.m = spec.m
        groups: dict[int, list[np.ndarray]] = {}
        offset = spec.l
        for d in spec.socs:
            groups.setdefault(d, []).append(np.arange(offset, offset + d))
            offset += d
        self.groups = [(d, np.array(rows)) for d, rows in sorted(groups.items())]
        # Flat scatter indices for writing (k, d, d) blocks into an (m, m) matrix.
        self.block_scatter = [
            (idx[:, :, None] * self.m + idx[:, None, :]).ravel() for _, idx in self.groups
        ]

    def identity(self) -> np.ndarray:
        e = np.zeros(self.m)
        e[: self.l] = 1.0
        for _, idx in self.groups:
            e[idx[:, 0]] = 1.0
        return e

    def min_margin(self, u: np.ndarray) -> float:
        """Distance-like interior margin; positive iff strictly inside."""
        margins = [np.inf]
        if self.l:
            margins.append(u[: self.l].min())
        for d, idx in self.groups:
            blocks = u[idx]
            if d == 1:
                margins.append(blocks[:, 0].min())
            else:
                margins.append((blocks[:, 0] - np.linalg.norm(blocks[:, 1:], axis=1)).min())
        return float(min(margins))

    def max_step(self, u: np.ndarray, du: np.ndarray) -> float:
        """Largest t >= 0 with u + t du still in the cone, from interior u."""
        return self.max_step_many(((u, du),))

    def max_step_many(self, pairs) -> float:
        """Joint step bound over several (point, direction) pairs."""
        t = np.inf
        coeffs_a, coeffs_b, coeffs_c = [], [], []
        for u, du in pairs:
            if self.l:
                neg = du[: self.l] < 0
                if np.any(neg):
                    t = min(t, float((-u[: self.l][neg] / du[: self.l][neg]).min()))
            for d, idx in self.groups:
                ub, db = u[idx], du[idx]
                if d == 1:
                    neg = db[:, 0] < 0
                    if np.any(neg):
                        t = min(t, float((-ub[:, 0][neg] / db[:, 0][neg]).min()))
                    continue
                coeffs_c.append(np.maximum(ub[:, 0] ** 2 - np.einsum("ij,ij->i", ub[:, 1:], ub[:, 1:]), _TINY))
                coeffs_b.append(2.0 * (ub[:, 0] * db[:, 0] - np.einsum("ij,ij->i", ub[:, 1:], db[:, 1:])))
                coeffs_a.append(db[:, 0] ** 2 - np.einsum("ij,ij->i", db[:, 1:], db[:, 1:]))
        if coeffs_a:
            t = min(t, _smallest_positive_root_vec(
                np.concatenate(coeffs_a), np.concatenate(coeffs_b), np.concatenate(coeffs_c)
            ))
        return t

    def product(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Blockwise Jordan product (elementwise on the orthant)."""
        out = np.empty(self.m)
        out[: self.l] = u[: self.l] * v[: self.l]
        for _, idx in self.groups:
            ub, vb = u[idx], v[idx]
            out[idx[:, 0]] = np.einsum("ij,ij->i", ub, vb)
            out[idx[:, 1:].reshape(-1)] = (
                ub[:, :1] * vb[:, 1:] + vb[:, :1] * ub[:, 1:]
            ).reshape(-1)
        return out

    def jordan_solve(self, lam: np.ndarray, d: np.ndarray) -> np.ndarray:
        """Solve lam o r = d blockwise."""
        out = np.empty(self.m)
        out[: self.l] = d[: self.l] / lam[: self.l]
        for _, idx in self.groups:
            lb, db = lam[idx], d[idx]
            det = lb[:, 0] ** 2 - np.einsum("ij,ij->i", lb[:, 1:], lb[:, 1:])
            r0 = (lb[:, 0] * db[:, 0] - np.einsum("ij,ij->i", lb[:, 1:], db[:, 1:])) / det
            out[idx[:, 0]] = r0
            out[idx[:, 1:].reshape(-1)] = ((db[:, 1:] - r0[:, None] * lb[:, 1:]) / lb[:, :1]).reshape(-1)
        return out


def _smallest_positive_root_vec(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    # q(t) = a t^2 + b t + c with q(0) = c > 0; min over blocks of the first
    # positive zero, inf when a block never crosses.
    lin = np.abs(a) < _TINY
    disc = b * b - 4.0 * a * c
    sq = np.sqrt(np.maximum(disc, 0.0))
    qq = -0.5 * (b + np.copysign(sq, b))  # stable pairing
    with np.errstate(divide="ignore", invalid="ignore"):
        r1 = np.where((~lin) & (disc >= 0.0), qq / a, np.inf)
        r2 = np.where((np.abs(qq) > _TINY) & (disc >= 0.0) & ~lin, c / qq, np.inf)
        rlin = np.where(lin & (b < -_TINY), -c / np.where(lin, b, 1.0), np.inf)
    r1 = np.where(r1 > _TINY, r1, np.inf)
    r2 = np.where(r2 > _TINY, r2, np.inf)
    out = min(r1.min(initial=np.inf), r2.min(initial=np.inf), rlin.min(initial=np.inf))
    return float(out)


class _Scaling:
    """Nesterov-Todd scaling W with W z = W^{-1} s = lam.

    W and its inverse are materialized as dense block-diagonal matrices; at
    the problem sizes this solver targets, dense matvecs beat repeated
    blockwise applications by a wide margin.
    """

    def __init__(self, cone: _Cone, s: np.ndarray, z: np.ndarray):
        self.cone = cone
        m, l = cone.m, cone.l
        W = np.zeros((m, m))
        Winv = np.zeros((m, m))
        if l:
            w_lp = np.sqrt(s[:l] / z[:l])
            d = np.arange(l)
            W[d, d] = w_lp
            Winv[d, d] = 1.0 / w_lp
        for (d, idx), scatter in zip(cone.groups, cone.block_scatter):
            sb, zb = s[idx], z[idx]
            if d == 1:
                eta = np.sqrt(sb[:, 0] / zb[:, 0])
                W[idx[:, 0], idx[:, 0]] = eta
                Winv[idx[:, 0], idx[:, 0]] = 1.0 / eta
                continue
            sres = np.sqrt(np.maximum(sb[:, 0] ** 2 - np.einsum("ij,ij->i", sb[:, 1:], sb[:, 1:]), _TINY))
            zres = np.sqrt(np.maximum(zb[:, 0] ** 2 - np.einsum("ij,ij->i", zb[:, 1:], zb[:, 1:]), _TINY))
            sbar, zbar = sb / sres[:, None], zb / zres[:, None]
            dot = np.maximum(np.einsum("ij,ij->i", sbar, zbar), -1.0 + 1e-14)
            gamma = np.sqrt((1.0 + dot) / 2.0)
            wbar = sbar.copy()
            wbar[:, 0] += zbar[:, 0]
            wbar[:, 1:] -= zbar[:, 1:]
            wbar /= (2.0 * gamma)[:, None]
            eta = np.sqrt(sres / zres)
            # Hyperbolic Householder form [[w0, w1'], [w1, I + w1 w1'/(1+w0)]];
            # the inverse flips the sign of the tail block.
            k = idx.shape[0]
            tail = np.einsum("ki,kj->kij", wbar[:, 1:], wbar[:, 1:]) / (1.0 + wbar[:, 0])[:, None, None]
            tail += np.eye(d - 1)[None]
            blocks = np.empty((k, d, d))
            blocks[:, 0, 0] = wbar[:, 0]
            blocks[:, 1:, 1:] = tail
            blocks[:, 0, 1:] = wbar[:, 1:]
            blocks[:, 1:, 0] = wbar[:, 1:]
            W.flat[scatter] = (blocks * eta[:, None, None]).ravel()
            blocks[:, 0, 1:] = -wbar[:, 1:]
            blocks[:, 1:, 0] = -wbar[:, 1:]
            Winv.flat[scatter] = (blocks / eta[:, None, None]).ravel()
        self.W = W
        self.Winv = Winv
        self.lam = W @ z

    def apply_W(self, u: np.ndarray) -> np.ndarray:
        return self.W @ u

    def apply_Winv(self, u: np.ndarray) -> np.ndarray:
        return self.Winv @ u

    def scale_rows_inv(self, G: np.ndarray) -> np.ndarray:
        return self.Winv @ G


def _shift_into_cone(cone: _Cone, u: np.ndarray) -> np.ndarray:
    margin = cone.min_margin(u)
    if margin > 0:
        return u
    return u + (1.0 - margin) * cone.identity()


def _jitter_point(cone: _Cone, u: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = u.copy()
    l = cone.l
    out[:l] *= np.exp(rng.uniform(-0.4, 0.4, size=l))
    for d, idx in cone.groups:
        f = np.exp(rng.uniform(-0.4, 0.4, size=idx.shape[0]))
        out[idx[:, 0]] *= f
        if d > 1:
            g = rng.uniform(0.5, 0.95, size=idx.shape[0])
            out[idx[:, 1:].reshape(-1)] = (out[idx[:, 1:]] * (f * g)[:, None]).reshape(-1)
    return out


def solve_socp(
    c: np.ndarray,
    G: np.ndarray,
    h: np.ndarray,
    cone_spec: ConeSpec,
    tol: float = 1e-7,
    max_iters: int = 200,
    init_rng: np.random.Generator | None = None,
) -> SocpResult:
    """Solve min c'v s.t. h - G v in K.

    ``init_rng``, if given, randomizes the otherwise deterministic starting
    point (used to check that the reported optimum is initialization
    independent, as it must be for a convex program).
    """
    c = np.asarray(c, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    cone = _Cone(cone_spec)
    m, n = G.shape
    if m != cone.m or c.shape != (n,) or h.shape != (m,):
        raise ValueError("inconsistent problem dimensions")

    e = cone.identity()
    nu = cone_spec.degree + 1
    feas_tol = max(tol * _FEAS_FACTOR, 1e-11)
    res_c = max(1.0, np.linalg.norm(c))
    res_h = max(1.0, np.linalg.norm(h))
    norm_G = max(1.0, np.linalg.norm(G))

    # Least-squares initialization, shifted into the cone interior.
    eye_n = np.eye(n)
    reg0 = 1e-12 * max(1.0, np.trace(G.T @ G) / n)
    M0 = G.T @ G + reg0 * eye_n
    cho0 = sla.cho_factor(M0, check_finite=False)
    x = sla.cho_solve(cho0, G.T @ h, check_finite=False)
    s = _shift_into_cone(cone, h - G @ x)
    z = _shift_into_cone(cone, -G @ sla.cho_solve(cho0, c, check_finite=False))
    tau, kappa = 1.0, 1.0
    if init_rng is not None:
        s = _jitter_point(cone, s, init_rng)
        z = _jitter_point(cone, z, init_rng)
        tau = float(np.exp(init_rng.uniform(-0.3, 0.3)))
        kappa = float(np.exp(init_rng.uniform(-0.3, 0.3)))

    def metrics(x_, s_, z_, tau_):
        xt, st, zt = x_ / tau_, s_ / tau_, z_ / tau_
        pres = np.linalg.norm(G @ xt + st - h) / res_h
        dres = np.linalg.norm(G.T @ zt + c) / res_c
        gap = st @ zt
        relgap = gap / max(1.0, abs(c @ xt))
        return pres, dres, gap, relgap

    best = None       # (score, x, s, z, tau, pres, dres, gap, relgap)
    best_pinf = best_dinf = np.inf
    best_opt_score = best_cert_score = np.inf
    status, iters = "max_iters", 0
    stall = 0

    for it in range(1, max_iters + 1):
        iters = it
        mu = (s @ z + tau * kappa) / nu
        pres, dres, gap, relgap = metrics(x, s, z, tau)

        hz, cx = h @ z, c @ x
        pinf_res = np.linalg.norm(G.T @ z) / (norm_G * (-hz)) if hz < -_TINY else np.inf
        dinf_res = np.linalg.norm(G @ x + s) / (norm_G * (-cx)) if cx < -_TINY else np.inf
        best_pinf = min(best_pinf, pinf_res)
        best_dinf = min(best_dinf, dinf_res)

        # Progress means approaching either optimality or a Farkas certificate.
        opt_score = max(pres, dres, relgap)
        cert_score = min(pinf_res, dinf_res)
        if (
            best is None
            or opt_score < 0.99 * best_opt_score
            or cert_score < 0.99 * best_cert_score
        ):
            stall = 0
        else:
            stall += 1
        best_opt_score = min(best_opt_score, opt_score)
        best_cert_score = min(best_cert_score, cert_score)
        if best is None or opt_score < best[0]:
            best = (opt_score, x.copy(), s.copy(), z.copy(), tau, pres, dres, gap, relgap)

        if pres <= feas_tol and dres <= feas_tol and relgap <= tol:
            status = "optimal"
            best = (max(pres, dres, relgap), x.copy(), s.copy(), z.copy(), tau, pres, dres, gap, relgap)
            break
        if pinf_res <= tol:
            status = "primal_infeasible"
            break
        if dinf_res <= tol:
            status = "dual_infeasible"
            break

        if stall >= 6 or mu <= 1e-14 * max(1.0, res_h):
            break  # no further progress attainable; classify best iterate below

        scaling = _Scaling(cone, s, z)
        lam = scaling.lam
        W, Winv = scaling.W, scaling.Winv
        Ghat = Winv @ G
        GhatT = Ghat.T
        M = GhatT @ Ghat  # symmetric PSD form of G' W^-2 G
        reg = 1e-13 * max(1.0, np.trace(M) / n)
        cho = None
        for _ in range(4):
            try:
                cho = sla.cho_factor(M + reg * eye_n, check_finite=False, lower=True)
                break
            except np.linalg.LinAlgError:
                reg *= 1e3
        if cho is None:
            break

        refine = mu < 1e-3 * max(1.0, res_h)  # digits only matter near convergence

        def kkt(p, q):
            # [0 G'; G -W^2] [dx; dz] = [p; q], with one refinement pass.
            # Scaling applications stay chained (never squared matrices):
            # the refinement residual needs the cancellation structure.
            dx = sla.cho_solve(cho, p + GhatT @ (Winv @ q), check_finite=False)
            dz = Winv @ (Winv @ (G @ dx - q))
            if refine:
                r1 = p - G.T @ dz
                r2 = q - (G @ dx - W @ (W @ dz))
                ex = sla.cho_solve(cho, r1 + GhatT @ (Winv @ r2), check_finite=False)
                dx = dx + ex
                dz = dz + Winv @ (Winv @ (G @ ex - r2))
            return dx, dz

        rx = G.T @ z + c * tau
        rz = s + G @ x - h * tau
        rtau = kappa + c @ x + h @ z
        dx2, dz2 = kkt(-c, h)
        denom_tau = c @ dx2 + h @ dz2 - kappa / tau

        def direction(f, d_s, d_kappa):
            v = cone.jordan_solve(lam, d_s)
            dx1, dz1 = kkt(-f * rx, -f * rz - scaling.apply_W(v))
            dtau = (-f * rtau - d_kappa / tau - c @ dx1 - h @ dz1) / denom_tau
            dx = dx1 + dtau * dx2
            dz = dz1 + dtau * dz2
            ds = -f * rz + h * dtau - G @ dx
            dkappa = (d_kappa - kappa * dtau) / tau
            return dx, dz, ds, dtau, dkappa

        def max_step(ds, dz, dtau, dkappa):
            t = cone.max_step_many(((s, ds), (z, dz)))
            if dtau < 0:
                t = min(t, -tau / dtau)
            if dkappa < 0:
                t = min(t, -kappa / dkappa)
            return t

        # Predictor.
        lam_sq = cone.product(lam, lam)
        dxa, dza, dsa, dtaua, dkappaa = direction(1.0, -lam_sq, -tau * kappa)
        alpha_aff = min(1.0, max_step(dsa, dza, dtaua, dkappaa))
        mu_aff = (
            (s + alpha_aff * dsa) @ (z + alpha_aff * dza)
            + (tau + alpha_aff * dtaua) * (kappa + alpha_aff * dkappaa)
        ) / nu
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3))

        # Corrector; fall back to pure centering when the second-order term
        # wrecks the step (common once many blocks sit at the cone apex).
        eta_s = scaling.apply_Winv(dsa)
        eta_z = scaling.apply_W(dza)
        d_s = -lam_sq + sigma * mu * e - cone.product(eta_s, eta_z)
        d_kappa = -tau * kappa + sigma * mu - dtaua * dkappaa
        dx, dz, ds, dtau, dkappa = direction(1.0 - sigma, d_s, d_kappa)
        alpha = min(1.0, 0.99 * max_step(ds, dz, dtau, dkappa))
        if alpha < 0.2 * alpha_aff:
            sigma = max(sigma, 0.5)
            d_s = -lam_sq + sigma * mu * e
            d_kappa = -tau * kappa + sigma * mu
            dx, dz, ds, dtau, dkappa = direction(1.0 - sigma, d_s, d_kappa)
            alpha = min(1.0, 0.99 * max_step(ds, dz, dtau, dkappa))

        # Roundoff can make the quadratic step bound slightly optimistic near
        # the boundary; back off until the new point is strictly interior.
        while alpha > 1e-13 and not (
            cone.min_margin(s + alpha * ds) > 0
            and cone.min_margin(z + alpha * dz) > 0
            and tau + alpha * dtau > 0
            and kappa + alpha * dkappa > 0
        ):
            alpha *= 0.5
        if not np.isfinite(alpha) or alpha <= 1e-13:
            break
        x = x + alpha * dx
        z = z + alpha * dz
        s = s + alpha * ds
        tau += alpha * dtau
        kappa += alpha * dkappa

    if status in ("primal_infeasible", "dual_infeasible"):
        return SocpResult(status, None, None, None, np.nan, iters, np.nan, np.nan, np.nan)

    _, bx, bs, bz, btau, pres, dres, gap, relgap = best
    xt, st, zt = bx / btau, bs / btau, bz / btau
    if status != "optimal":
        # A stalled run may still be usable: accept near-optimal feasible
        # iterates with a looser gap. Infeasibility is only ever declared on
        # the strict in-loop certificate; a loose certificate test cannot
        # distinguish infeasibility from optimality with a positive value.
        if pres <= tol and dres <= tol and relgap <= np.sqrt(tol):
            status = "optimal"
    return SocpResult(status, xt, st, zt, float(c @ xt), iters, pres, dres, gap)
