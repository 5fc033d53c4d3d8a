"""Dense primal-dual interior-point solver for small conic programs.

Solves

    minimize    trace(C @ X) + c_f @ u
    subject to  trace(A_i @ X) + f_i @ u == b_i
                trace(G_j @ X) + g_j @ u <= h_j
                X block-diagonal positive semidefinite, u unrestricted

where the cone is a product of PSD blocks; order-1 blocks degenerate to
ordinary nonnegative LP variables, and the optional unrestricted block u
serves LP formulations with sign-free unknowns.  Inequalities are converted
internally to equalities with order-1 slack blocks, so one code path serves
both LPs and SDPs.

The algorithm is a Mehrotra predictor-corrector method with Nesterov-Todd
scaling on the homogeneous self-dual embedding, which detects primal and
dual infeasibility and returns the corresponding Farkas certificates.
Everything is dense; intended problem sizes are a few hundred rows and
block orders up to ~200.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

__all__ = [
    "ConicProblem",
    "ConicSolution",
    "SolverOptions",
    "SolverError",
    "solve_sdp",
    "solve_lp",
    "dump_problem",
]


class SolverError(ValueError):
    """Raised for malformed problems (dimension mismatch, oversized cone)."""


@dataclass(frozen=True)
class SolverOptions:
    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    psd_tol: float = 1e-9
    max_iter: int = 200
    step_frac: float = 0.99
    dim_cap: int = 200


@dataclass
class ConicProblem:
    """Conic program data over a product of PSD blocks.

    blocks:       orders of the cone blocks, e.g. (4, 1, 1); sum = d.
    objective:    symmetric (d, d) matrix C.
    equalities:   list of (A_i, b_i) with A_i symmetric (d, d).
    inequalities: list of (G_j, h_j) meaning trace(G_j @ X) <= h_j.

    Only the diagonal blocks of the constraint matrices participate; any
    off-block entries are ignored (they contribute nothing against a
    block-diagonal X).

    Scalar problems may additionally carry an unrestricted variable block:
    free_objective holds its cost vector and eq_free / ineq_free its
    constraint columns (one row per constraint).  The `lp` constructor
    fills these; SDP assemblies do not use them.
    """

    blocks: tuple[int, ...]
    objective: np.ndarray
    equalities: list[tuple[np.ndarray, float]] = field(default_factory=list)
    inequalities: list[tuple[np.ndarray, float]] = field(default_factory=list)
    free_objective: np.ndarray | None = None
    eq_free: np.ndarray | None = None
    ineq_free: np.ndarray | None = None

    @property
    def dim(self) -> int:
        return int(sum(self.blocks))

    @property
    def n_free(self) -> int:
        return 0 if self.free_objective is None else int(np.size(self.free_objective))

    @staticmethod
    def lp(
        c: np.ndarray,
        a_eq: np.ndarray | None = None,
        b_eq: np.ndarray | None = None,
        a_ub: np.ndarray | None = None,
        b_ub: np.ndarray | None = None,
        c_free: np.ndarray | None = None,
        a_eq_free: np.ndarray | None = None,
        a_ub_free: np.ndarray | None = None,
    ) -> "ConicProblem":
        """All-scalar problem: min c@v + c_free@u over v >= 0 and u free,
        subject to A_eq v + A_eq_free u = b_eq and A_ub v + A_ub_free u <= b_ub."""
        c = np.asarray(c, dtype=float).ravel()
        d = c.size
        nf = 0 if c_free is None else np.asarray(c_free).size
        prob = ConicProblem(
            blocks=(1,) * d, objective=np.diag(c),
            free_objective=None if nf == 0 else np.asarray(c_free, dtype=float).ravel(),
        )
        eq_free, ineq_free = [], []
        if a_eq is not None:
            a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
            fr = (np.zeros((a_eq.shape[0], nf)) if a_eq_free is None
                  else np.atleast_2d(np.asarray(a_eq_free, dtype=float)))
            for i, (row, rhs) in enumerate(zip(a_eq, np.asarray(b_eq, dtype=float).ravel())):
                prob.equalities.append((np.diag(row), float(rhs)))
                eq_free.append(fr[i])
        if a_ub is not None:
            a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
            fr = (np.zeros((a_ub.shape[0], nf)) if a_ub_free is None
                  else np.atleast_2d(np.asarray(a_ub_free, dtype=float)))
            for j, (row, rhs) in enumerate(zip(a_ub, np.asarray(b_ub, dtype=float).ravel())):
                prob.inequalities.append((np.diag(row), float(rhs)))
                ineq_free.append(fr[j])
        if nf:
            prob.eq_free = np.array(eq_free) if eq_free else np.zeros((0, nf))
            prob.ineq_free = np.array(ineq_free) if ineq_free else np.zeros((0, nf))
        return prob


@dataclass
class ConicSolution:
    status: str  # optimal | primal_infeasible | dual_infeasible | max_iter | numerical_failure
    X: np.ndarray | None
    y: np.ndarray
    lam: np.ndarray
    S: np.ndarray | None
    primal_objective: float
    dual_objective: float
    gap: float
    rel_gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    free: np.ndarray | None = None
    certificate: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# symmetric vectorization per block (off-diagonals scaled by sqrt 2 so that
# the Euclidean inner product of svecs equals the trace inner product)

_SQRT2 = np.sqrt(2.0)


def _svec_maps(d: int):
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, _SQRT2)
    return iu, scale


def _svec(m: np.ndarray, iu, scale) -> np.ndarray:
    return m[iu] * scale


def _smat(v: np.ndarray, d: int, iu, scale) -> np.ndarray:
    m = np.zeros((d, d))
    m[iu] = v / scale
    m = m + m.T
    m[np.diag_indices(d)] *= 0.5
    return m


class _Cone:
    """Product cone: dense PSD blocks (order >= 2) + one pooled diagonal part."""

    def __init__(self, blocks: tuple[int, ...]):
        self.blocks = blocks
        self.mat_sizes = [d for d in blocks if d >= 2]
        self.p = sum(1 for d in blocks if d == 1)
        self.maps = [_svec_maps(d) for d in self.mat_sizes]
        self.svl = [d * (d + 1) // 2 for d in self.mat_sizes]
        self.nx = sum(self.svl) + self.p
        self.nu = sum(self.mat_sizes) + self.p  # barrier degree

    def split(self, v: np.ndarray):
        mats, off = [], 0
        for d, (iu, scale), ln in zip(self.mat_sizes, self.maps, self.svl):
            mats.append(_smat(v[off:off + ln], d, iu, scale))
            off += ln
        return mats, v[off:]

    def join(self, mats, diag) -> np.ndarray:
        parts = [_svec(m, iu, scale) for m, (iu, scale) in zip(mats, self.maps)]
        parts.append(np.asarray(diag, dtype=float))
        return np.concatenate(parts) if parts else np.zeros(0)

    def identity(self) -> np.ndarray:
        return self.join([np.eye(d) for d in self.mat_sizes], np.ones(self.p))


def _guard(lam_diag: np.ndarray) -> np.ndarray:
    return np.maximum(lam_diag, 1e-300)


class _Scaling:
    """Nesterov-Todd scaling point of the pair (x, s)."""

    def __init__(self, cone: _Cone, x_mats, x_diag, s_mats, s_diag):
        self.cone = cone
        self.r, self.rinv, self.lam_mats = [], [], []
        for xm, sm in zip(x_mats, s_mats):
            lx = sla.cholesky(xm, lower=True)
            ls = sla.cholesky(sm, lower=True)
            u, sig, _ = sla.svd(lx.T @ ls)
            sig = np.maximum(sig, 1e-300)
            sq = np.sqrt(sig)
            r = lx @ u / sq
            rinv = (u * sq).T @ sla.solve_triangular(lx, np.eye(lx.shape[0]), lower=True)
            self.r.append(r)
            self.rinv.append(rinv)
            self.lam_mats.append(sig)
        self.w_diag = np.sqrt(x_diag / s_diag) if cone.p else np.zeros(0)
        self.lam_diag = np.sqrt(x_diag * s_diag) if cone.p else np.zeros(0)

    def apply_w(self, v: np.ndarray) -> np.ndarray:
        """W(v) with W = R R^T per block: M -> W M W; diagonal part scaled by w^2."""
        mats, diag = self.cone.split(v)
        out = []
        for m, r in zip(mats, self.r):
            w = r @ r.T
            out.append(w @ m @ w)
        return self.cone.join(out, diag * self.w_diag**2)

    def scale_x(self, v: np.ndarray):
        """R^{-1} M R^{-T} per block; diagonal / w."""
        mats, diag = self.cone.split(v)
        out = [rinv @ m @ rinv.T for m, rinv in zip(mats, self.rinv)]
        return out, (diag / self.w_diag if self.cone.p else diag)

    def scale_s(self, v: np.ndarray):
        """R^T M R per block; diagonal * w."""
        mats, diag = self.cone.split(v)
        out = [r.T @ m @ r for m, r in zip(mats, self.r)]
        return out, (diag * self.w_diag if self.cone.p else diag)


class _RefinedSolver:
    """Cholesky solve with escalating regularization + iterative refinement.

    One refinement pass per solve recovers most of the accuracy lost to the
    extreme conditioning of the Schur complement near convergence.
    """

    def __init__(self, m: np.ndarray, refine: int = 2):
        self.m = m
        self.refine = refine
        scale = max(np.trace(m) / max(m.shape[0], 1), 1.0)
        jitter = 0.0
        for _ in range(6):
            try:
                self.fac = sla.cho_factor(m + jitter * np.eye(m.shape[0]), lower=True)
                return
            except np.linalg.LinAlgError:
                jitter = scale * 1e-14 if jitter == 0.0 else jitter * 100.0
        raise np.linalg.LinAlgError("Schur system not positive definite")

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        x = sla.cho_solve(self.fac, rhs)
        for _ in range(self.refine):
            x = x + sla.cho_solve(self.fac, rhs - self.m @ x)
        return x


class _Canon:
    """Canonicalized problem: min c@x + cf@u s.t. A x + F u = b, x in cone."""

    def __init__(self, prob: ConicProblem, options: SolverOptions):
        blocks = tuple(int(d) for d in prob.blocks)
        if any(d < 1 for d in blocks):
            raise SolverError("cone block orders must be >= 1")
        d_tot = sum(blocks)
        if blocks and max(blocks) > options.dim_cap:
            raise SolverError(
                f"largest cone block has order {max(blocks)}, exceeding the cap "
                f"of {options.dim_cap}"
            )
        if d_tot == 0 and not prob.inequalities:
            raise SolverError(
                "a problem with no cone variables needs at least one inequality"
            )
        n_ineq = len(prob.inequalities)
        self.cone = _Cone(blocks + (1,) * n_ineq)
        self.n_eq = len(prob.equalities)
        self.n_ineq = n_ineq
        self.d_tot = d_tot
        self.nf = prob.n_free

        obj = np.asarray(prob.objective, dtype=float)
        if obj.shape != (d_tot, d_tot):
            raise SolverError(
                f"objective must be {d_tot}x{d_tot} for cone blocks {blocks}, "
                f"got {obj.shape}"
            )

        edges = np.cumsum((0,) + blocks)
        self._spans = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]
        self._is_mat = [b - a >= 2 for a, b in self._spans]

        def embed(full: np.ndarray, extra: np.ndarray) -> np.ndarray:
            full = 0.5 * (full + full.T)
            mats = [full[a:b, a:b] for (a, b), im in zip(self._spans, self._is_mat) if im]
            diag = np.array(
                [full[a, a] for (a, b), im in zip(self._spans, self._is_mat) if not im]
            )
            return self.cone.join(mats, np.concatenate([diag, extra]))

        rows, b = [], []
        for i, (a_i, b_i) in enumerate(prob.equalities):
            a_i = np.asarray(a_i, dtype=float)
            if a_i.shape != (d_tot, d_tot):
                raise SolverError(f"equality {i}: matrix shape {a_i.shape} != ({d_tot}, {d_tot})")
            rows.append(embed(a_i, np.zeros(n_ineq)))
            b.append(float(b_i))
        for j, (g_j, h_j) in enumerate(prob.inequalities):
            g_j = np.asarray(g_j, dtype=float)
            if g_j.shape != (d_tot, d_tot):
                raise SolverError(f"inequality {j}: matrix shape {g_j.shape} != ({d_tot}, {d_tot})")
            slack = np.zeros(n_ineq)
            slack[j] = 1.0
            rows.append(embed(g_j, slack))
            b.append(float(h_j))

        self.k = len(rows)
        if self.k == 0:
            raise SolverError("at least one constraint is required")
        self.A = np.vstack(rows)
        self.b = np.asarray(b)
        self.c = embed(obj, np.zeros(n_ineq))

        if self.nf:
            eq_free = prob.eq_free if prob.eq_free is not None else np.zeros((self.n_eq, self.nf))
            ineq_free = (prob.ineq_free if prob.ineq_free is not None
                         else np.zeros((n_ineq, self.nf)))
            self.F = np.vstack([np.atleast_2d(eq_free), np.atleast_2d(ineq_free)])
            if self.F.shape != (self.k, self.nf):
                raise SolverError(
                    f"free-variable columns have shape {self.F.shape}, expected "
                    f"({self.k}, {self.nf})"
                )
            self.cf = np.asarray(prob.free_objective, dtype=float).ravel()
        else:
            self.F = np.zeros((self.k, 0))
            self.cf = np.zeros(0)

        # row/objective equilibration: assembled rows can differ in norm by
        # orders of magnitude, which wrecks the Schur conditioning near the
        # optimum; duals and residuals are mapped back when packaging
        norms = np.sqrt(np.einsum("ij,ij->i", self.A, self.A)
                        + np.einsum("ij,ij->i", self.F, self.F))
        self.row_scale = np.maximum(norms, 1e-8)
        self.A /= self.row_scale[:, None]
        self.F /= self.row_scale[:, None]
        self.b = self.b / self.row_scale
        self.obj_scale = max(1.0, float(np.sqrt(self.c @ self.c + self.cf @ self.cf)))
        self.c = self.c / self.obj_scale
        self.cf = self.cf / self.obj_scale

        # stacked per-mat-block constraint matrices for the Schur product
        self._blk_stacks = []
        off = 0
        for bi, (dk, ln) in enumerate(zip(self.cone.mat_sizes, self.cone.svl)):
            iu, scale = self.cone.maps[bi]
            stack = np.zeros((self.k, dk, dk))
            seg = self.A[:, off:off + ln] / scale
            stack[:, iu[0], iu[1]] = seg
            stack += np.transpose(stack, (0, 2, 1))
            stack[:, np.arange(dk), np.arange(dk)] *= 0.5
            self._blk_stacks.append(stack)
            off += ln
        self._diag_cols = self.A[:, off:]

    def schur(self, scaling: _Scaling) -> np.ndarray:
        m = np.zeros((self.k, self.k))
        off = 0
        for bi, (stack, ln) in enumerate(zip(self._blk_stacks, self.cone.svl)):
            w = scaling.r[bi] @ scaling.r[bi].T
            waw = np.einsum("ij,kjl,lm->kim", w, stack, w, optimize=True)
            iu, scale = self.cone.maps[bi]
            svecs = waw[:, iu[0], iu[1]] * scale
            m += self.A[:, off:off + ln] @ svecs.T
            off += ln
        if self.cone.p:
            w2 = scaling.w_diag**2
            m += (self._diag_cols * w2) @ self._diag_cols.T
        return 0.5 * (m + m.T)

    def strip_slacks(self, x: np.ndarray, s: np.ndarray):
        """Map cone vectors back to full (d_tot, d_tot) block-diagonal matrices."""
        x_mats, x_diag = self.cone.split(x)
        s_mats, s_diag = self.cone.split(s)
        xf = np.zeros((self.d_tot, self.d_tot))
        sf = np.zeros((self.d_tot, self.d_tot))
        mi = di = 0
        for (a, b), im in zip(self._spans, self._is_mat):
            if im:
                xf[a:b, a:b] = x_mats[mi]
                sf[a:b, a:b] = s_mats[mi]
                mi += 1
            else:
                xf[a, a] = x_diag[di]
                sf[a, a] = s_diag[di]
                di += 1
        return xf, sf


def solve_sdp(problem: ConicProblem, options: SolverOptions | None = None) -> ConicSolution:
    """Solve a conic program; never raises for solver-side failure, returns status."""
    options = options or SolverOptions()
    canon = _Canon(problem, options)
    return _ipm(canon, options)


def solve_lp(problem: ConicProblem, options: SolverOptions | None = None) -> ConicSolution:
    """Solve an all-scalar (LP) conic program through the same interior-point path."""
    if any(d != 1 for d in problem.blocks):
        raise SolverError("solve_lp requires all cone blocks of order 1")
    return solve_sdp(problem, options)


def _ipm(canon: _Canon, opt: SolverOptions) -> ConicSolution:
    cone = canon.cone
    A, b, c, k = canon.A, canon.b, canon.c, canon.k
    F, cf, nf = canon.F, canon.cf, canon.nf

    x = cone.identity()
    s = cone.identity()
    u = np.zeros(nf)
    y = np.zeros(k)
    tau, kappa = 1.0, 1.0
    nu = cone.nu + 1

    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(np.concatenate([c, cf]))
    rscale = canon.row_scale
    norm_b_orig = 1.0 + np.linalg.norm(b * rscale)
    norm_c_orig = 1.0 + canon.obj_scale * np.linalg.norm(np.concatenate([c, cf]))

    def dehomogenized():
        """Convergence metrics are measured on the original (unscaled) data."""
        xh, uh, yh, sh = x / tau, u / tau, y / tau, s / tau
        pobj = c @ xh + cf @ uh
        dobj = b @ yh
        pvec = A @ xh + F @ uh - b
        dvec = np.concatenate([-A.T @ yh - sh + c, -F.T @ yh + cf])
        pres = np.linalg.norm(pvec * rscale) / norm_b_orig
        dres = canon.obj_scale * np.linalg.norm(dvec) / norm_c_orig
        gap = xh @ sh
        scale = canon.obj_scale
        relgap = scale * gap / (1.0 + scale * abs(pobj) + scale * abs(dobj))
        return xh, uh, yh, sh, pobj, dobj, gap, relgap, pres, dres

    best = None
    best_score = np.inf
    status = "max_iter"
    iters = 0
    centering_budget = 5
    since_best = 0

    for iters in range(1, opt.max_iter + 1):
        r_p = A @ x + F @ u - b * tau
        r_d = -A.T @ y - s + c * tau
        r_f = -F.T @ y + cf * tau
        r_g = b @ y - c @ x - cf @ u - kappa
        mu = (x @ s + tau * kappa) / nu

        point = dehomogenized()
        pres_, dres_, relgap_ = point[-2], point[-1], point[-3]
        score = max(pres_, dres_, relgap_)
        if score < best_score - 1e-16:
            best_score = score
            best = point
            since_best = 0
        else:
            since_best += 1
        if pres_ <= opt.feas_tol and dres_ <= opt.feas_tol and relgap_ <= opt.gap_tol:
            best = point
            status = "optimal"
            break
        if since_best >= 20:
            status = "max_iter"  # no measurable progress; stop early
            break

        # infeasibility certificates
        by = b @ y
        cx = c @ x + cf @ u
        if by > 0:
            cert_res = np.linalg.norm(np.concatenate([A.T @ y + s, F.T @ y])) / by
            if cert_res <= opt.feas_tol * norm_c and tau * norm_b <= 1e-6 * kappa:
                status = "primal_infeasible"
                break
        if cx < 0:
            cert_res = np.linalg.norm(A @ x + F @ u) / (-cx)
            if cert_res <= opt.feas_tol * norm_b and tau * norm_c <= 1e-6 * kappa:
                status = "dual_infeasible"
                break

        try:
            x_mats, x_diag = cone.split(x)
            s_mats, s_diag = cone.split(s)
            scaling = _Scaling(cone, x_mats, x_diag, s_mats, s_diag)
            m_solver = _RefinedSolver(canon.schur(scaling))
            wc = scaling.apply_w(c)
            awc = A @ wc
            if nf:
                minv_f = m_solver.solve(F)
                sf_solver = _RefinedSolver(F.T @ minv_f)

            def direction(sigma, corr_mats, corr_diag, corr_tau):
                eta = 1.0 - sigma
                g_mats = []
                for sig, corr in zip(scaling.lam_mats, corr_mats):
                    rhs = -np.diag(sig**2) - corr
                    rhs[np.diag_indices_from(rhs)] += sigma * mu
                    g_mats.append(2.0 * rhs / np.add.outer(sig, sig))
                lam_d = _guard(scaling.lam_diag)
                g_diag = (sigma * mu - scaling.lam_diag**2 - corr_diag) / lam_d
                d_u = cone.join(
                    [r @ g @ r.T for r, g in zip(scaling.r, g_mats)],
                    scaling.w_diag * g_diag,
                )
                dct = sigma * mu - tau * kappa - corr_tau

                wrd = scaling.apply_w(r_d)
                r1 = -eta * r_p + eta * (A @ wrd) - A @ d_u
                v1 = b + awc
                if nf:
                    m_r1 = m_solver.solve(r1)
                    m_v1 = m_solver.solve(v1)
                    du0 = sf_solver.solve(F.T @ m_r1 - eta * r_f)
                    du1 = sf_solver.solve(F.T @ m_v1 - cf)
                    u1 = m_r1 - minv_f @ du0
                    u2 = m_v1 - minv_f @ du1
                else:
                    du0 = du1 = np.zeros(0)
                    u1 = m_solver.solve(r1)
                    u2 = m_solver.solve(v1)
                denom = (b - awc) @ u2 + c @ wc - cf @ du1 + kappa / tau
                numer = (
                    -eta * r_g + c @ d_u - eta * (c @ wrd) + dct / tau
                    - (b - awc) @ u1 + cf @ du0
                )
                dtau = numer / denom
                dy = u1 + dtau * u2
                dfree = du0 + dtau * du1
                ds = -A.T @ dy + c * dtau + eta * r_d
                dx = d_u - scaling.apply_w(ds)
                dkappa = (dct - kappa * dtau) / tau
                return dx, dfree, dy, ds, dtau, dkappa

            zero_mats = [np.zeros((d, d)) for d in cone.mat_sizes]
            zero_diag = np.zeros(cone.p)
            dxa, dua, dya, dsa, dtaua, dkappaa = direction(0.0, zero_mats, zero_diag, 0.0)

            ex_mats, ex_diag = scaling.scale_x(dxa)
            fs_mats, fs_diag = scaling.scale_s(dsa)
            a_aff = min(1.0, _step_length(scaling, ex_mats, ex_diag, fs_mats, fs_diag,
                                          tau, kappa, dtaua, dkappaa))
            mu_aff = (
                (x + a_aff * dxa) @ (s + a_aff * dsa)
                + (tau + a_aff * dtaua) * (kappa + a_aff * dkappaa)
            ) / nu
            sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 0.0, 1.0 - 1e-12))

            corr_mats = [0.5 * (e @ f + f @ e) for e, f in zip(ex_mats, fs_mats)]
            corr_diag = ex_diag * fs_diag
            dx, dfree, dy, ds, dtau, dkappa = direction(
                sigma, corr_mats, corr_diag, dtaua * dkappaa)

            ex_mats, ex_diag = scaling.scale_x(dx)
            fs_mats, fs_diag = scaling.scale_s(ds)
            a_max = _step_length(scaling, ex_mats, ex_diag, fs_mats, fs_diag,
                                 tau, kappa, dtau, dkappa)
            alpha = min(1.0, opt.step_frac * a_max)
            if not np.isfinite(alpha):
                status = "numerical_failure"
                break
            if alpha <= 1e-13 and centering_budget > 0:
                # combined step collapsed: re-center once and try again
                centering_budget -= 1
                dx, dfree, dy, ds, dtau, dkappa = direction(
                    1.0 - 1e-12, zero_mats, zero_diag, 0.0)
                ex_mats, ex_diag = scaling.scale_x(dx)
                fs_mats, fs_diag = scaling.scale_s(ds)
                a_max = _step_length(scaling, ex_mats, ex_diag, fs_mats, fs_diag,
                                     tau, kappa, dtau, dkappa)
                alpha = min(1.0, opt.step_frac * a_max)
            if alpha <= 1e-13:
                status = "max_iter"  # stalled; best iterate already recorded
                break

            x = x + alpha * dx
            s = s + alpha * ds
            u = u + alpha * dfree
            y = y + alpha * dy
            tau += alpha * dtau
            kappa += alpha * dkappa
        except (np.linalg.LinAlgError, sla.LinAlgError):
            status = "numerical_failure"
            break
    else:
        status = "max_iter"

    return _package(canon, best, status, iters, x, u, y, s, tau, kappa)


def _step_length(scaling, ex_mats, ex_diag, fs_mats, fs_diag, tau, kappa, dtau, dkappa):
    alpha = np.inf
    for sig, e in zip(scaling.lam_mats, ex_mats):
        isq = 1.0 / np.sqrt(sig)
        lo = sla.eigvalsh((isq[:, None] * e) * isq[None, :])[0]
        if lo < 0:
            alpha = min(alpha, -1.0 / lo)
    for sig, f in zip(scaling.lam_mats, fs_mats):
        isq = 1.0 / np.sqrt(sig)
        lo = sla.eigvalsh((isq[:, None] * f) * isq[None, :])[0]
        if lo < 0:
            alpha = min(alpha, -1.0 / lo)
    if scaling.cone.p:
        lam = _guard(scaling.lam_diag)
        for vec in (ex_diag, fs_diag):
            ratio = vec / lam
            neg = ratio < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-1.0 / ratio[neg])))
    if dtau < 0:
        alpha = min(alpha, -tau / dtau)
    if dkappa < 0:
        alpha = min(alpha, -kappa / dkappa)
    return alpha


def _package(canon, best, status, iters, x, u, y, s, tau, kappa) -> ConicSolution:
    n_eq, n_ineq = canon.n_eq, canon.n_ineq

    if status in ("primal_infeasible", "dual_infeasible"):
        if status == "primal_infeasible":
            yc = y / canon.row_scale
            yc = yc / ((canon.b * canon.row_scale) @ yc)
            certificate = {"y": yc[:n_eq], "lam": np.maximum(-yc[n_eq:], 0.0)}
        else:
            # scaled ray has c_scaled @ x < 0; the original costs carry obj_scale
            ray_scale = -(canon.c @ x + canon.cf @ u) * canon.obj_scale
            xf, _ = canon.strip_slacks(x / ray_scale, s)
            certificate = {"X": xf, "free": u / ray_scale}
        return ConicSolution(
            status=status, X=None, y=y[:n_eq], lam=np.maximum(-y[n_eq:], 0.0), S=None,
            primal_objective=np.nan, dual_objective=np.nan, gap=np.nan, rel_gap=np.nan,
            primal_residual=np.nan, dual_residual=np.nan, iterations=iters,
            free=None, certificate=certificate,
        )

    xh, uh, yh, sh, pobj, dobj, gap, relgap, pres, dres = best
    xf, sf = canon.strip_slacks(xh, sh)
    # undo the equilibration: duals pick up obj_scale / row_scale factors
    y_orig = yh * canon.obj_scale / canon.row_scale
    scale = canon.obj_scale
    return ConicSolution(
        status=status, X=xf, y=y_orig[:n_eq], lam=np.maximum(-y_orig[n_eq:], 0.0),
        S=sf * scale,
        primal_objective=float(pobj * scale), dual_objective=float(dobj * scale),
        gap=float(gap * scale), rel_gap=float(relgap),
        primal_residual=float(pres), dual_residual=float(dres),
        iterations=iters, free=uh if canon.nf else None, certificate=None,
    )


def dump_problem(problem: ConicProblem, fh) -> None:
    """Write the assembled problem in a sparse text format, one entry per line:

        <row> <block> <i> <j> <value>

    Row 0 is the objective; rows 1..n_eq are equalities; the remainder are
    inequalities.  Right-hand sides appear as `rhs <row> <value>` lines and
    block orders as a leading `blocks` line.  Free-variable columns, when
    present, appear as `free <row> <index> <value>` lines.  Intended for
    cross-checking the assembly against an external solver.
    """
    own = False
    if isinstance(fh, str):
        fh = open(fh, "w", encoding="utf-8")
        own = True
    try:
        fh.write("blocks " + " ".join(str(d) for d in problem.blocks) + "\n")
        edges = np.cumsum((0,) + tuple(problem.blocks))

        def emit(row_no: int, mat: np.ndarray, free_row: np.ndarray | None):
            mat = 0.5 * (np.asarray(mat, float) + np.asarray(mat, float).T)
            for bi, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
                blk = mat[a:b, a:b]
                for i in range(blk.shape[0]):
                    for j in range(i, blk.shape[1]):
                        if blk[i, j] != 0.0:
                            fh.write(f"{row_no} {bi} {i} {j} {blk[i, j]!r}\n")
            if free_row is not None:
                for idx, v in enumerate(free_row):
                    if v != 0.0:
                        fh.write(f"free {row_no} {idx} {float(v)!r}\n")

        nf = problem.n_free
        emit(0, problem.objective, problem.free_objective if nf else None)
        row = 1
        for i, (a_i, b_i) in enumerate(problem.equalities):
            emit(row, a_i, problem.eq_free[i] if nf and problem.eq_free is not None else None)
            fh.write(f"rhs {row} {float(b_i)!r}\n")
            row += 1
        for j, (g_j, h_j) in enumerate(problem.inequalities):
            emit(row, g_j, problem.ineq_free[j] if nf and problem.ineq_free is not None else None)
            fh.write(f"rhs {row} {float(h_j)!r}\n")
            row += 1
    finally:
        if own:
            fh.close()
