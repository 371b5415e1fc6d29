"""Numba internals of the hierarchical kernel-summation backend.

Flat-array octree (quadtree in 2D) over the sampling cube.  Well-separated
cluster pairs are approximated by Chebyshev tensor-grid interpolation of the
kernel (black-box scheme, applied identically to the distance kernel and its
d gradient kernels); everything else is summed directly.

All loops accumulate in a fixed order so results are reproducible; ``prange``
only spans iterations with disjoint outputs.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

MAX_DEPTH = 24


def chebyshev_tables(order: int):
    """Chebyshev nodes, basis table, and 1D multipole transfer matrices.

    Returns (nodes, basis, m2m_lo, m2m_hi) where ``basis[k, q]`` holds
    c_k * T_k(t_q) so that the q-th Lagrange value at x is
    sum_k T_k(x) * basis[k, q], and the m2m matrices map child-node values
    onto parent basis coefficients for the low/high half intervals.
    """
    n = order
    q = np.arange(n)
    theta = (2 * q + 1) * np.pi / (2 * n)
    nodes = np.cos(theta)
    t_table = np.cos(np.outer(np.arange(n), theta))  # T_k(t_q)
    basis = t_table * (2.0 / n)
    basis[0] *= 0.5

    def lagrange_at(x):
        tk = np.cos(np.outer(np.arange(n), np.arccos(np.clip(x, -1, 1))))
        return tk.T @ basis  # (len(x), n): L_q(x)

    m2m = []
    for sign in (-1.0, 1.0):
        child_nodes = sign * 0.5 + nodes * 0.5
        m2m.append(np.ascontiguousarray(lagrange_at(child_nodes).T))  # (a, q)
    return nodes, basis, m2m[0], m2m[1]


def tensor_transfer_matrices(order: int, dims: int):
    """Per-octant (m x m) multipole transfer matrices, m = order**dims."""
    _, _, lo, hi = chebyshev_tables(order)
    n_child = 2**dims
    m = order**dims
    mats = np.empty((n_child, m, m))
    for oct_id in range(n_child):
        factors = []
        for ax in range(dims):
            # Build axis 0 as the slowest tensor index.
            bit = (oct_id >> ax) & 1
            factors.append(hi if bit else lo)
        mat = factors[0]
        for f in factors[1:]:
            mat = np.kron(mat, f)
        mats[oct_id] = mat
    return mats


def tensor_axis_indices(order: int, dims: int):
    """Decode flat tensor index -> per-axis node index, axis 0 slowest."""
    m = order**dims
    idx = np.empty((dims, m), dtype=np.int64)
    flat = np.arange(m)
    for ax in range(dims - 1, -1, -1):
        idx[ax] = flat % order
        flat //= order
    return idx


@njit(cache=True)
def build_tree(pos, leaf_size, max_nodes):
    """Geometric octree over the cube covering all points.

    Returns (status, n_nodes, perm, centers, halves, starts, ends,
    children, parents, octants, is_leaf).  status != 0 means max_nodes was
    too small and the build must be retried with more capacity.
    """
    p, d = pos.shape
    n_child = 2**d

    half = 1.0
    for i in range(p):
        for l in range(d):
            a = abs(pos[i, l])
            if a > half:
                half = a
    half *= 1.0 + 1e-12

    perm = np.arange(p)
    scratch = np.empty(p, dtype=np.int64)
    centers = np.zeros((max_nodes, d))
    halves = np.zeros(max_nodes)
    starts = np.zeros(max_nodes, dtype=np.int64)
    ends = np.zeros(max_nodes, dtype=np.int64)
    children = np.full((max_nodes, n_child), -1, dtype=np.int64)
    parents = np.full(max_nodes, -1, dtype=np.int64)
    octants = np.zeros(max_nodes, dtype=np.int64)
    is_leaf = np.zeros(max_nodes, dtype=np.bool_)

    halves[0] = half
    starts[0] = 0
    ends[0] = p
    n_nodes = 1

    stack = np.empty(max_nodes, dtype=np.int64)
    stack[0] = 0
    sp = 1
    counts = np.zeros(n_child, dtype=np.int64)
    offsets = np.zeros(n_child + 1, dtype=np.int64)
    depth_of = np.zeros(max_nodes, dtype=np.int64)

    while sp > 0:
        sp -= 1
        node = stack[sp]
        start, end = starts[node], ends[node]
        if end - start <= leaf_size or depth_of[node] >= MAX_DEPTH:
            is_leaf[node] = True
            continue

        for c in range(n_child):
            counts[c] = 0
        for idx in range(start, end):
            j = perm[idx]
            oct_id = 0
            for l in range(d):
                if pos[j, l] > centers[node, l]:
                    oct_id |= 1 << l
            scratch[idx - start] = oct_id
            counts[oct_id] += 1
        offsets[0] = 0
        for c in range(n_child):
            offsets[c + 1] = offsets[c] + counts[c]
        # Stable scatter into octant order.
        cursor = offsets[:n_child].copy()
        tmp = np.empty(end - start, dtype=np.int64)
        for idx in range(start, end):
            oct_id = scratch[idx - start]
            tmp[cursor[oct_id]] = perm[idx]
            cursor[oct_id] += 1
        for idx in range(start, end):
            perm[idx] = tmp[idx - start]

        for c in range(n_child):
            if counts[c] == 0:
                continue
            if n_nodes >= max_nodes:
                return 1, n_nodes, perm, centers, halves, starts, ends, children, parents, octants, is_leaf
            child = n_nodes
            n_nodes += 1
            for l in range(d):
                sign = 1.0 if (c >> l) & 1 else -1.0
                centers[child, l] = centers[node, l] + sign * halves[node] * 0.5
            halves[child] = halves[node] * 0.5
            starts[child] = start + offsets[c]
            ends[child] = start + offsets[c + 1]
            parents[child] = node
            octants[child] = c
            depth_of[child] = depth_of[node] + 1
            children[node, c] = child
            stack[sp] = child
            sp += 1

    return 0, n_nodes, perm, centers, halves, starts, ends, children, parents, octants, is_leaf


@njit(cache=True)
def dual_traverse(n_nodes, centers, halves, children, is_leaf, theta, max_pairs):
    """Enumerate admissible (far) and leaf-leaf (near) ordered node pairs.

    Admissibility: circumradii satisfy r_t + r_s <= theta * center distance.
    The larger node is split first, so pairs form at the coarsest admissible
    level.  Returns (status, far pairs, near pairs); status != 0 requests a
    retry with larger max_pairs.
    """
    d = centers.shape[1]
    rad = np.sqrt(float(d))
    far_t = np.empty(max_pairs, dtype=np.int64)
    far_s = np.empty(max_pairs, dtype=np.int64)
    near_t = np.empty(max_pairs, dtype=np.int64)
    near_s = np.empty(max_pairs, dtype=np.int64)
    n_far = 0
    n_near = 0

    stack = np.empty((4 * max_pairs, 2), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    sp = 1
    n_child = children.shape[1]

    while sp > 0:
        sp -= 1
        t = stack[sp, 0]
        s = stack[sp, 1]
        dist2 = 0.0
        for l in range(d):
            diff = centers[t, l] - centers[s, l]
            dist2 += diff * diff
        dist = np.sqrt(dist2)
        r_t = halves[t] * rad
        r_s = halves[s] * rad
        if r_t + r_s <= theta * dist:
            if n_far >= max_pairs:
                return 1, far_t[:0], far_s[:0], near_t[:0], near_s[:0]
            far_t[n_far] = t
            far_s[n_far] = s
            n_far += 1
            continue
        t_leaf = is_leaf[t]
        s_leaf = is_leaf[s]
        if t_leaf and s_leaf:
            if n_near >= max_pairs:
                return 1, far_t[:0], far_s[:0], near_t[:0], near_s[:0]
            near_t[n_near] = t
            near_s[n_near] = s
            n_near += 1
            continue
        split_t = (not t_leaf) and (s_leaf or halves[t] >= halves[s])
        if split_t:
            for c in range(n_child):
                ch = children[t, c]
                if ch >= 0:
                    if sp >= stack.shape[0]:
                        return 1, far_t[:0], far_s[:0], near_t[:0], near_s[:0]
                    stack[sp, 0] = ch
                    stack[sp, 1] = s
                    sp += 1
        else:
            for c in range(n_child):
                ch = children[s, c]
                if ch >= 0:
                    if sp >= stack.shape[0]:
                        return 1, far_t[:0], far_s[:0], near_t[:0], near_s[:0]
                    stack[sp, 0] = t
                    stack[sp, 1] = ch
                    sp += 1

    return 0, far_t[:n_far], far_s[:n_far], near_t[:n_near], near_s[:n_near]


@njit(cache=True)
def group_by_target(pair_t, pair_s, n_nodes):
    """Stable counting sort of pairs by target node; returns CSR layout."""
    n_pairs = pair_t.shape[0]
    counts = np.zeros(n_nodes + 1, dtype=np.int64)
    for q in range(n_pairs):
        counts[pair_t[q] + 1] += 1
    for i in range(n_nodes):
        counts[i + 1] += counts[i]
    cursor = counts[:-1].copy()
    sorted_s = np.empty(n_pairs, dtype=np.int64)
    for q in range(n_pairs):
        t = pair_t[q]
        sorted_s[cursor[t]] = pair_s[q]
        cursor[t] += 1
    return counts, sorted_s


@njit(cache=True, inline="always")
def _axis_basis(xhat, basis, out):
    """Lagrange-Chebyshev basis values L_q(xhat) via T_k recurrence."""
    n = basis.shape[0]
    for q in range(n):
        out[q] = 0.0
    t_prev = 1.0
    t_cur = xhat
    for q in range(n):
        out[q] += basis[0, q]
    if n > 1:
        for q in range(n):
            out[q] += t_cur * basis[1, q]
    for k in range(2, n):
        t_next = 2.0 * xhat * t_cur - t_prev
        t_prev = t_cur
        t_cur = t_next
        for q in range(n):
            out[q] += t_cur * basis[k, q]


@njit(cache=True, parallel=True)
def p2m(pos, starts, ends, is_leaf, centers, halves, basis, order, multipoles):
    """Anterpolate unit particle weights onto leaf Chebyshev grids.

    ``pos`` is in leaf-contiguous (sorted) order.
    """
    n_nodes = multipoles.shape[0]
    d = pos.shape[1]
    m = multipoles.shape[1]
    for node in prange(n_nodes):
        if not is_leaf[node]:
            continue
        ax_basis = np.empty((d, order))
        for j in range(starts[node], ends[node]):
            for l in range(d):
                xhat = (pos[j, l] - centers[node, l]) / halves[node]
                if xhat > 1.0:
                    xhat = 1.0
                elif xhat < -1.0:
                    xhat = -1.0
                _axis_basis(xhat, basis, ax_basis[l])
            for a in range(m):
                w = 1.0
                rem = a
                for l in range(d - 1, -1, -1):
                    w *= ax_basis[l, rem % order]
                    rem //= order
                multipoles[node, a] += w


@njit(cache=True)
def m2m(n_nodes, parents, octants, transfer, multipoles):
    """Accumulate child multipoles into parents, deepest nodes first."""
    m = multipoles.shape[1]
    for node in range(n_nodes - 1, 0, -1):
        par = parents[node]
        mat = transfer[octants[node]]
        for a in range(m):
            acc = 0.0
            for b in range(m):
                acc += mat[a, b] * multipoles[node, b]
            multipoles[par, a] += acc


@njit(cache=True, parallel=True)
def m2l(far_off, far_src, centers, halves, cheb_nodes, ax_idx, eps2, multipoles, locals_):
    """Kernel interaction between well-separated cluster tensor grids.

    locals_ has shape (n_nodes, 1 + d, m): slot 0 accumulates the distance
    kernel, slots 1..d its gradient kernels.
    """
    n_nodes = locals_.shape[0]
    d = centers.shape[1]
    m = multipoles.shape[1]
    for t in prange(n_nodes):
        if far_off[t] == far_off[t + 1]:
            continue
        xpts = np.empty((m, 3))
        ypts = np.empty((m, 3))
        xpts[:, 2] = 0.0
        ypts[:, 2] = 0.0
        for a in range(m):
            for l in range(d):
                xpts[a, l] = centers[t, l] + halves[t] * cheb_nodes[ax_idx[l, a]]
        for q in range(far_off[t], far_off[t + 1]):
            s = far_src[q]
            for b in range(m):
                for l in range(d):
                    ypts[b, l] = centers[s, l] + halves[s] * cheb_nodes[ax_idx[l, b]]
            for a in range(m):
                xx = xpts[a, 0]
                xy = xpts[a, 1]
                xz = xpts[a, 2]
                v0 = 0.0
                v1 = 0.0
                v2 = 0.0
                v3 = 0.0
                for b in range(m):
                    w = multipoles[s, b]
                    dx = xx - ypts[b, 0]
                    dy = xy - ypts[b, 1]
                    dz = xz - ypts[b, 2]
                    r2 = eps2 + dx * dx + dy * dy + dz * dz
                    h = np.sqrt(r2)
                    v0 += h * w
                    if h > 0.0:
                        inv = w / h
                        v1 += dx * inv
                        v2 += dy * inv
                        v3 += dz * inv
                locals_[t, 0, a] += v0
                locals_[t, 1, a] += v1
                locals_[t, 2, a] += v2
                if d == 3:
                    locals_[t, 3, a] += v3


@njit(cache=True)
def l2l(n_nodes, parents, octants, transfer, locals_):
    """Push parent local expansions down onto child grids, root first."""
    m = locals_.shape[2]
    n_k = locals_.shape[1]
    for node in range(1, n_nodes):
        par = parents[node]
        mat = transfer[octants[node]]
        for k in range(n_k):
            for b in range(m):
                acc = 0.0
                for a in range(m):
                    acc += mat[a, b] * locals_[par, k, a]
                locals_[node, k, b] += acc


@njit(cache=True, parallel=True)
def l2p(pos, starts, ends, is_leaf, centers, halves, basis, order, locals_, val, grad):
    """Evaluate leaf local expansions at the leaf's particles (sorted order)."""
    n_nodes = locals_.shape[0]
    d = pos.shape[1]
    m = locals_.shape[2]
    for node in prange(n_nodes):
        if not is_leaf[node]:
            continue
        ax_basis = np.empty((d, order))
        for j in range(starts[node], ends[node]):
            for l in range(d):
                xhat = (pos[j, l] - centers[node, l]) / halves[node]
                if xhat > 1.0:
                    xhat = 1.0
                elif xhat < -1.0:
                    xhat = -1.0
                _axis_basis(xhat, basis, ax_basis[l])
            for a in range(m):
                w = 1.0
                rem = a
                for l in range(d - 1, -1, -1):
                    w *= ax_basis[l, rem % order]
                    rem //= order
                val[j] += w * locals_[node, 0, a]
                for l in range(d):
                    grad[j, l] += w * locals_[node, 1 + l, a]


@njit(cache=True, parallel=True)
def near_field(pos, starts, ends, near_off, near_src, eps2, val, grad):
    """Direct particle sums over non-separated leaf pairs (sorted order).

    Self pairs include the i == j term, whose kernel value is eps and whose
    gradient contribution is zero.
    """
    n_nodes = near_off.shape[0] - 1
    d = pos.shape[1]
    for t in prange(n_nodes):
        if near_off[t] == near_off[t + 1]:
            continue
        for q in range(near_off[t], near_off[t + 1]):
            s = near_src[q]
            j_lo = starts[s]
            j_hi = ends[s]
            for i in range(starts[t], ends[t]):
                xi = pos[i, 0]
                yi = pos[i, 1]
                zi = pos[i, 2] if d == 3 else 0.0
                v = 0.0
                gx = 0.0
                gy = 0.0
                gz = 0.0
                for j in range(j_lo, j_hi):
                    dx = xi - pos[j, 0]
                    dy = yi - pos[j, 1]
                    r2 = eps2 + dx * dx + dy * dy
                    dz = 0.0
                    if d == 3:
                        dz = zi - pos[j, 2]
                        r2 += dz * dz
                    h = np.sqrt(r2)
                    v += h
                    if h > 0.0:
                        inv = 1.0 / h
                        gx += dx * inv
                        gy += dy * inv
                        gz += dz * inv
                val[i] += v
                grad[i, 0] += gx
                grad[i, 1] += gy
                if d == 3:
                    grad[i, 2] += gz


@njit(cache=True)
def direct_sums_subset(pos, targets, eps2, val, grad):
    """Exact kernel sums for a subset of target particles (error probes)."""
    p, d = pos.shape
    for it in range(targets.shape[0]):
        i = targets[it]
        v = 0.0
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for j in range(p):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            r2 = eps2 + dx * dx + dy * dy
            dz = 0.0
            if d == 3:
                dz = pos[i, 2] - pos[j, 2]
                r2 += dz * dz
            h = np.sqrt(r2)
            v += h
            if h > 0.0:
                inv = 1.0 / h
                gx += dx * inv
                gy += dy * inv
                gz += dz * inv
        val[it] = v
        grad[it, 0] = gx
        grad[it, 1] = gy
        if d == 3:
            grad[it, 2] = gz


@njit(cache=True, parallel=True)
def direct_sums(pos, eps2, val, grad):
    """Exact all-pairs kernel sums, one ordered row per particle."""
    p, d = pos.shape
    for i in prange(p):
        v = 0.0
        gx = 0.0
        gy = 0.0
        gz = 0.0
        for j in range(p):
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            r2 = eps2 + dx * dx + dy * dy
            dz = 0.0
            if d == 3:
                dz = pos[i, 2] - pos[j, 2]
                r2 += dz * dz
            h = np.sqrt(r2)
            v += h
            if h > 0.0:
                inv = 1.0 / h
                gx += dx * inv
                gy += dy * inv
                gz += dz * inv
        val[i] = v
        grad[i, 0] = gx
        grad[i, 1] = gy
        if d == 3:
            grad[i, 2] = gz
