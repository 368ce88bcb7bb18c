"""Hot numeric kernels: shortest paths and exact optimal transport.

Everything here is jitted through :mod:`nricci.accel` and restricted to
plain numpy arrays so the pure-numpy fallback path stays valid. The
transportation solver is a primal simplex on the transportation polytope
(least-cost greedy start completed to a spanning basis, dual pricing from
the basis tree, pivot cycles found by tree ascent) with a Bland-rule
fallback against degenerate cycling, so the returned optimum is exact up
to float arithmetic.
"""

import numpy as np

from .accel import njit

# status codes for transport_simplex
TRANSPORT_OK = 0
TRANSPORT_NO_CONVERGENCE = 1

_PIVOT_TOL = 1e-11


@njit(cache=True)
def dijkstra_csr(indptr, indices, weights, source, targets_mask, n_targets):
    """Single-source shortest distances on a CSR graph.

    Stops early once ``n_targets`` nodes flagged in ``targets_mask`` are
    settled; pass an all-ones mask with ``n_targets = n_nodes`` for a full
    run. Unreached nodes keep distance inf.
    """
    n = indptr.size - 1
    dist = np.full(n, np.inf)
    done = np.zeros(n, np.uint8)
    cap = indices.size + 2
    heap_d = np.empty(cap, np.float64)
    heap_v = np.empty(cap, np.int64)

    dist[source] = 0.0
    heap_d[0] = 0.0
    heap_v[0] = source
    size = 1
    remaining = n_targets

    while size > 0:
        d0 = heap_d[0]
        u = heap_v[0]
        size -= 1
        heap_d[0] = heap_d[size]
        heap_v[0] = heap_v[size]
        k = 0
        while True:
            c = 2 * k + 1
            if c >= size:
                break
            if c + 1 < size and heap_d[c + 1] < heap_d[c]:
                c += 1
            if heap_d[c] < heap_d[k]:
                heap_d[k], heap_d[c] = heap_d[c], heap_d[k]
                heap_v[k], heap_v[c] = heap_v[c], heap_v[k]
                k = c
            else:
                break

        if done[u]:
            continue
        done[u] = 1
        if targets_mask[u]:
            remaining -= 1
            if remaining == 0:
                break

        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            if done[v]:
                continue
            nd = d0 + weights[e]
            if nd < dist[v]:
                dist[v] = nd
                heap_d[size] = nd
                heap_v[size] = v
                k = size
                size += 1
                while k > 0:
                    p = (k - 1) // 2
                    if heap_d[k] < heap_d[p]:
                        heap_d[k], heap_d[p] = heap_d[p], heap_d[k]
                        heap_v[k], heap_v[p] = heap_v[p], heap_v[k]
                        k = p
                    else:
                        break
    return dist


@njit(cache=True)
def transport_simplex(a, b, cost):
    """Exact minimum-cost transport between histograms a (m,) and b (n,).

    Returns ``(plan, objective, status)`` where plan has row sums a and
    column sums b. Supplies and demands must balance (equal totals up to
    float noise).
    """
    m = a.size
    n = b.size
    nb = m + n - 1

    basis_i = np.empty(nb, np.int64)
    basis_j = np.empty(nb, np.int64)
    basis_f = np.empty(nb, np.float64)
    in_basis = np.zeros((m, n), np.uint8)

    # least-cost greedy start: allocate along cells in ascending cost,
    # retiring exactly one row/column per allocation (the exhausted one)
    order = np.argsort(cost.ravel())
    ra = a.copy()
    rb = b.copy()
    row_on = np.ones(m, np.uint8)
    col_on = np.ones(n, np.uint8)
    nbas = 0
    for t in range(m * n):
        cell = order[t]
        i = cell // n
        j = cell % n
        if row_on[i] == 0 or col_on[j] == 0:
            continue
        f = ra[i] if ra[i] < rb[j] else rb[j]
        if f < 0.0:
            f = 0.0
        basis_i[nbas] = i
        basis_j[nbas] = j
        basis_f[nbas] = f
        in_basis[i, j] = 1
        nbas += 1
        ra[i] -= f
        rb[j] -= f
        if ra[i] <= rb[j]:
            row_on[i] = 0
        else:
            col_on[j] = 0
        if nbas == nb:
            break

    # the greedy cells form a forest; complete it to a spanning basis with
    # zero-flow cells joining distinct components, cheapest first
    if nbas < nb:
        uf = np.empty(m + n, np.int64)
        for p in range(m + n):
            uf[p] = p
        for k in range(nbas):
            # union via naive find with path halving
            x = basis_i[k]
            while uf[x] != x:
                uf[x] = uf[uf[x]]
                x = uf[x]
            y = m + basis_j[k]
            while uf[y] != y:
                uf[y] = uf[uf[y]]
                y = uf[y]
            if x != y:
                uf[x] = y
        for t in range(m * n):
            cell = order[t]
            i = cell // n
            j = cell % n
            if in_basis[i, j] == 1:
                continue
            x = i
            while uf[x] != x:
                uf[x] = uf[uf[x]]
                x = uf[x]
            y = m + j
            while uf[y] != y:
                uf[y] = uf[uf[y]]
                y = uf[y]
            if x == y:
                continue
            uf[x] = y
            basis_i[nbas] = i
            basis_j[nbas] = j
            basis_f[nbas] = 0.0
            in_basis[i, j] = 1
            nbas += 1
            if nbas == nb:
                break

    # bipartite tree nodes: rows are 0..m-1, columns are m..m+n-1
    nn = m + n
    u = np.empty(m, np.float64)
    v = np.empty(n, np.float64)
    inc_cnt = np.empty(nn, np.int64)
    inc_ptr = np.empty(nn + 1, np.int64)
    inc_cell = np.empty(2 * nb, np.int64)
    cursor = np.empty(nn, np.int64)
    parent_node = np.empty(nn, np.int64)
    parent_cell = np.empty(nn, np.int64)
    depth = np.empty(nn, np.int64)
    visited = np.empty(nn, np.uint8)
    stack = np.empty(nn, np.int64)
    path_a = np.empty(nn, np.int64)  # cells from the entering column up
    path_b = np.empty(nn, np.int64)  # cells from the entering row up

    # most-negative pricing first, Bland's rule after the soft cap to
    # guarantee termination on degenerate instances
    soft_cap = 50 * (m + n) + 200
    hard_cap = 10000 * (m + n) + 10000
    it = 0
    status = TRANSPORT_OK

    while True:
        it += 1
        if it > hard_cap:
            status = TRANSPORT_NO_CONVERGENCE
            break

        # incidence lists of the basis tree (counting sort, O(nb))
        for p in range(nn):
            inc_cnt[p] = 0
        for k in range(nb):
            inc_cnt[basis_i[k]] += 1
            inc_cnt[m + basis_j[k]] += 1
        inc_ptr[0] = 0
        for p in range(nn):
            inc_ptr[p + 1] = inc_ptr[p] + inc_cnt[p]
            cursor[p] = inc_ptr[p]
        for k in range(nb):
            a = basis_i[k]
            b = m + basis_j[k]
            inc_cell[cursor[a]] = k
            cursor[a] += 1
            inc_cell[cursor[b]] = k
            cursor[b] += 1

        # one DFS from row 0 assigns every dual and the parent structure
        for p in range(nn):
            visited[p] = 0
        u[0] = 0.0
        visited[0] = 1
        parent_node[0] = -1
        parent_cell[0] = -1
        depth[0] = 0
        stack[0] = 0
        top = 1
        seen = 1
        while top > 0:
            top -= 1
            node = stack[top]
            for t in range(inc_ptr[node], inc_ptr[node + 1]):
                k = inc_cell[t]
                ik = basis_i[k]
                jk = m + basis_j[k]
                other = jk if node == ik else ik
                if visited[other] == 0:
                    visited[other] = 1
                    parent_node[other] = node
                    parent_cell[other] = k
                    depth[other] = depth[node] + 1
                    if other >= m:
                        v[other - m] = cost[ik, other - m] - u[ik]
                    else:
                        u[other] = cost[other, basis_j[k]] - v[basis_j[k]]
                    stack[top] = other
                    top += 1
                    seen += 1
        if seen < nn:
            # basis tree lost connectivity — numerical corruption
            status = TRANSPORT_NO_CONVERGENCE
            break

        # entering cell
        ei = -1
        ej = -1
        if it <= soft_cap:
            best = -_PIVOT_TOL
            for p in range(m):
                up = u[p]
                for q in range(n):
                    if in_basis[p, q] == 0:
                        rc = cost[p, q] - up - v[q]
                        if rc < best:
                            best = rc
                            ei = p
                            ej = q
        else:
            for p in range(m):
                if ei >= 0:
                    break
                up = u[p]
                for q in range(n):
                    if in_basis[p, q] == 0:
                        rc = cost[p, q] - up - v[q]
                        if rc < -_PIVOT_TOL:
                            ei = p
                            ej = q
                            break
        if ei < 0:
            break

        # pivot cycle = entering cell + the tree path between its endpoints,
        # found by lifting the deeper endpoint to their common ancestor
        na = ei
        nb_node = m + ej
        len_a = 0
        len_b = 0
        while depth[na] > depth[nb_node]:
            path_b[len_b] = parent_cell[na]
            len_b += 1
            na = parent_node[na]
        while depth[nb_node] > depth[na]:
            path_a[len_a] = parent_cell[nb_node]
            len_a += 1
            nb_node = parent_node[nb_node]
        while na != nb_node:
            path_b[len_b] = parent_cell[na]
            len_b += 1
            na = parent_node[na]
            path_a[len_a] = parent_cell[nb_node]
            len_a += 1
            nb_node = parent_node[nb_node]

        # cycle cell sequence: entering (+), then path cells from the
        # entering column back to the entering row, signs alternating -,+,...
        path_len = len_a + len_b
        if path_len < 1 or path_len % 2 == 0:
            status = TRANSPORT_NO_CONVERGENCE
            break

        # theta = min flow over minus-positions (even path positions);
        # ties resolve to the first minimum in walk order
        theta = np.inf
        leave_t = -1
        for t in range(0, path_len, 2):
            k = path_a[t] if t < len_a else path_b[path_len - 1 - t]
            f = basis_f[k]
            if f < theta:
                theta = f
                leave_t = t
        if theta < 0.0:
            theta = 0.0

        for t in range(path_len):
            k = path_a[t] if t < len_a else path_b[path_len - 1 - t]
            if t % 2 == 0:
                basis_f[k] -= theta
            else:
                basis_f[k] += theta

        leave_k = path_a[leave_t] if leave_t < len_a else path_b[path_len - 1 - leave_t]
        in_basis[basis_i[leave_k], basis_j[leave_k]] = 0
        basis_i[leave_k] = ei
        basis_j[leave_k] = ej
        basis_f[leave_k] = theta
        in_basis[ei, ej] = 1

    plan = np.zeros((m, n), np.float64)
    obj = 0.0
    for k in range(nb):
        f = basis_f[k]
        if f < 0.0:
            f = 0.0
        plan[basis_i[k], basis_j[k]] += f
        obj += f * cost[basis_i[k], basis_j[k]]
    return plan, obj, status


@njit(cache=True)
def sinkhorn(a, b, cost, reg, max_iter, tol):
    """Entropy-regularized transport (approximate; never an acceptance path)."""
    m = a.size
    n = b.size
    K = np.exp(-cost / reg)
    u = np.ones(m, np.float64) / m
    v = np.ones(n, np.float64) / n
    for it in range(max_iter):
        Kv = K @ v
        for p in range(m):
            u[p] = a[p] / (Kv[p] + 1e-300)
        Ktu = K.T @ u
        for q in range(n):
            v[q] = b[q] / (Ktu[q] + 1e-300)
        if it % 10 == 9:
            err = 0.0
            Kv = K @ v
            for p in range(m):
                err += abs(u[p] * Kv[p] - a[p])
            if err < tol:
                break
    plan = (u.reshape(m, 1) * K) * v.reshape(1, n)
    obj = 0.0
    for p in range(m):
        for q in range(n):
            obj += plan[p, q] * cost[p, q]
    return plan, obj
