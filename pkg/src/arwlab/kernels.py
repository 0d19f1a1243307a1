"""Hot inner loops, compiled with numba.

Everything here is deterministic given the 64-bit seeds: instruction
stacks are keyed by (site, height), loop colours by (site, loop index),
and excursion shapes by (site, loop index, colour), so replays under a
different toppling order read exactly the same randomness.

Torus moves go through a precomputed (n_sites, 2d) neighbour table; the
kernels release the GIL, so replicated runs can be fanned out to a
thread pool without per-process recompilation.
"""

import numpy as np
from numba import njit, uint64

from .rng import (
    TAG_GAMMA,
    TAG_LOOP_I,
    TAG_LOOP_J,
    TAG_REF_INSTR,
    TAG_WALK,
    keyed_u64,
    xorshift_next,
    xorshift_out,
)

# status codes shared by the stabilization kernels
OK = 0
STEP_BUDGET = 1
WALK_BUDGET = 2

PROC_LOWEST = 0
PROC_SELECT = 1


@njit(cache=True, nogil=True)
def walk_excursion(neighbors, origin, wseed, cap, visited_mask, visited_list):
    """Excursion from origin, killed at the first return.

    Marks every site hit strictly before the return (origin included) in
    visited_mask and visited_list.  Returns (count, steps, status); the
    caller is responsible for clearing visited_mask afterwards.
    """
    state = wseed
    if state == uint64(0):
        state = uint64(0x9E3779B97F4A7C15)
    visited_mask[origin] = True
    visited_list[0] = origin
    count = 1
    pos = origin
    steps = 0
    two_d = neighbors.shape[1]
    while True:
        if steps >= cap:
            return count, steps, WALK_BUDGET
        state = xorshift_next(state)
        direction = int(xorshift_out(state) % uint64(two_d))
        pos = neighbors[pos, direction]
        steps += 1
        if pos == origin:
            return count, steps, OK
        if not visited_mask[pos]:
            visited_mask[pos] = True
            visited_list[count] = pos
            count += 1


@njit(cache=True, nogil=True)
def hit_before_return(neighbors, x, y, wseed, cap):
    """1 if the walk from x hits y before returning to x, 0 otherwise, -1 on cap."""
    state = wseed
    if state == uint64(0):
        state = uint64(0x9E3779B97F4A7C15)
    pos = x
    steps = 0
    two_d = neighbors.shape[1]
    while steps < cap:
        state = xorshift_next(state)
        direction = int(xorshift_out(state) % uint64(two_d))
        pos = neighbors[pos, direction]
        steps += 1
        if pos == y:
            return 1
        if pos == x:
            return 0
    return -1


@njit(cache=True, nogil=True)
def hitting_mc(neighbors, x, y, samples, seed, cap):
    """Monte Carlo count of excursions from x that reach y before returning."""
    hits = 0
    capped = 0
    for i in range(samples):
        wseed = keyed_u64(seed, uint64(TAG_WALK), uint64(i), uint64(0))
        res = hit_before_return(neighbors, x, y, wseed, cap)
        if res == 1:
            hits += 1
        elif res < 0:
            capped += 1
    return hits, capped


@njit(cache=True, nogil=True)
def excursion_size_mc(neighbors, x, samples, seed, cap):
    """Support sizes of repeated excursions from x (for distribution tests)."""
    n_sites = neighbors.shape[0]
    visited_mask = np.zeros(n_sites, dtype=np.bool_)
    visited_list = np.empty(n_sites, dtype=np.int64)
    sizes = np.empty(samples, dtype=np.int64)
    capped = 0
    for i in range(samples):
        wseed = keyed_u64(seed, uint64(TAG_WALK), uint64(i), uint64(1))
        count, _, status = walk_excursion(neighbors, x, wseed, cap,
                                          visited_mask, visited_list)
        for k in range(count):
            visited_mask[visited_list[k]] = False
        if status != OK:
            capped += 1
            sizes[i] = -1
        else:
            sizes[i] = count
    return sizes, capped


@njit(cache=True, nogil=True)
def reference_stabilize(neighbors, counts, asleep, odometer, in_a,
                        thr, seed, budget):
    """Drive the site-wise reference model until stable or out of budget.

    counts/asleep/odometer are updated in place; odometer counts every
    instruction consumed at each site.  Toppling order is a FIFO drain
    (pop a site, topple it until locally stable); any legal order gives
    the same final state and odometer.  Returns (status, consumed).
    """
    n_sites = counts.shape[0]
    cap = n_sites + 1
    queue = np.empty(cap, dtype=np.int64)
    in_queue = np.zeros(n_sites, dtype=np.bool_)
    head = 0
    tail = 0
    for s in range(n_sites):
        if counts[s] > 0 and not asleep[s]:
            queue[tail] = s
            tail += 1
            if tail == cap:
                tail = 0
            in_queue[s] = True
    consumed = 0
    two_d = uint64(neighbors.shape[1])
    while head != tail:
        x = queue[head]
        head += 1
        if head == cap:
            head = 0
        while counts[x] > 0 and not asleep[x]:
            if consumed >= budget:
                return STEP_BUDGET, consumed
            u = keyed_u64(seed, uint64(TAG_REF_INSTR), uint64(x),
                          uint64(odometer[x]))
            if in_a[x] and u < thr:
                # sleep instruction: effective only for a lone particle
                if counts[x] == 1:
                    asleep[x] = True
            else:
                # conditional on the jump branch the residual bits stay
                # uniform, so the direction comes from the same draw
                ud = u - thr if (in_a[x] and u >= thr) else u
                y = neighbors[x, int(ud % two_d)]
                counts[x] -= 1
                if asleep[y]:
                    asleep[y] = False
                counts[y] += 1
                if not in_queue[y] and y != x:
                    queue[tail] = y
                    tail += 1
                    if tail == cap:
                        tail = 0
                    in_queue[y] = True
            odometer[x] += 1
            consumed += 1
        in_queue[x] = False
    return OK, consumed


@njit(cache=True, nogil=True)
def _pairwise_dist(n, ndim, strides, c_sites):
    nc = c_sites.shape[0]
    out = np.empty((nc, nc), dtype=np.int32)
    for i in range(nc):
        out[i, i] = 0
        for k in range(i + 1, nc):
            a = c_sites[i]
            b = c_sites[k]
            best = 0
            for ax in range(ndim):
                stride = strides[ax]
                ca = (a // stride) % n
                cb = (b // stride) % n
                dd = ca - cb
                if dd < 0:
                    dd = -dd
                if n - dd < dd:
                    dd = n - dd
                if dd > best:
                    best = dd
            out[i, k] = best
            out[k, i] = best
    return out


@njit(cache=True, nogil=True)
def _greedy_net(dist_c, sep):
    """Maximal sep-separated subset in canonical order (indices into C)."""
    nc = dist_c.shape[0]
    net = np.empty(nc, dtype=np.int64)
    m = 0
    for i in range(nc):
        ok = True
        for t in range(m):
            if dist_c[i, net[t]] <= sep:
                ok = False
                break
        if ok:
            net[m] = i
            m += 1
    return net[:m]


@njit(cache=True, nogil=True)
def select_site(R, c_sites, dist_c, net, sel_r):
    """Constructive choice of an active site with many sleepers nearby.

    Implements: pick the net point whose 8r-ball holds the most sleepers,
    then follow sleeping sites towards the active set and return the
    first active site seen within distance 4r of the path.
    """
    nc = c_sites.shape[0]
    r8 = 8 * sel_r
    r4 = 4 * sel_r
    best_y = -1
    best_count = -1
    for t in range(net.shape[0]):
        yi = net[t]
        cnt = 0
        for k in range(nc):
            if (not R[c_sites[k]]) and dist_c[yi, k] <= r8:
                cnt += 1
        if cnt > best_count:
            best_count = cnt
            best_y = yi
    y = best_y
    if R[c_sites[y]]:
        return c_sites[y]
    # BFS from y through sleeping sites, 8r-adjacency, stop at first active
    bfs_q = np.empty(nc, dtype=np.int64)
    parent = np.full(nc, -2, dtype=np.int64)
    head = 0
    tail = 0
    bfs_q[tail] = y
    tail += 1
    parent[y] = -1
    goal = -1
    while head < tail and goal < 0:
        cu = bfs_q[head]
        head += 1
        for k in range(nc):
            if parent[k] != -2 or dist_c[cu, k] > r8 or k == cu:
                continue
            parent[k] = cu
            if R[c_sites[k]]:
                goal = k
                break
            bfs_q[tail] = k
            tail += 1
    if goal < 0:
        # not 8r-connected as promised; fall back to the lowest active site
        for k in range(nc):
            if R[c_sites[k]]:
                return c_sites[k]
        return c_sites[0]
    # path from y to goal, then the first path vertex that sees activity
    path = np.empty(nc, dtype=np.int64)
    plen = 0
    cu = goal
    while cu >= 0:
        path[plen] = cu
        plen += 1
        cu = parent[cu]
    for t in range(plen - 1, -1, -1):
        yj = path[t]
        for k in range(nc):
            if R[c_sites[k]] and dist_c[yj, k] <= r4:
                return c_sites[k]
    return c_sites[goal]


@njit(cache=True, nogil=True)
def cluster_stabilize(n, ndim, strides, neighbors,
                      R, hod, lod,
                      c_sites, c_mask, star,
                      wstar_targets, wstar_off,
                      thr, seed,
                      proc_mode, sel_r,
                      beta_num, beta_den,
                      budget, walk_cap,
                      track_b,
                      colour_counts, exit_log, out):
    """Stabilize one level-0 cluster in place: topple f(R cap C) until stable.

    Wake rules: a non-distinguished site wakes sleeping sites of C covered
    by its excursion; the distinguished site ``star`` wakes the sleeping
    sites listed in wstar_targets[wstar_off[j]:wstar_off[j+1]] for a loop
    of colour j (possibly outside C), and never wakes anyone in C.

    out[0:8] = status, steps, sleeps_star, loops_star, n_b_visits,
               exit_count, exit_violations, active_in_c_after.
    exit_log rows record (active count in C, star active flag) at each
    exit from the high-activity set B, up to the log capacity.
    """
    n_sites = R.shape[0]
    nc = c_sites.shape[0]
    n_colours = wstar_off.shape[0] - 1
    log_cap = exit_log.shape[0]

    visited_mask = np.zeros(n_sites, dtype=np.bool_)
    visited_list = np.empty(n_sites, dtype=np.int64)

    if proc_mode == PROC_SELECT:
        dist_c = _pairwise_dist(n, ndim, strides, c_sites)
        net = _greedy_net(dist_c, 8 * sel_r)
    else:
        dist_c = np.empty((1, 1), dtype=np.int32)
        net = np.empty(0, dtype=np.int64)

    cur = 0
    for k in range(nc):
        if R[c_sites[k]]:
            cur += 1

    steps = 0
    sleeps_star = 0
    loops_star = 0
    status = OK
    in_b = cur * beta_den > beta_num * nc
    n_b = 1 if (track_b and in_b) else 0
    beta_floor = (beta_num * nc) // beta_den
    exit_count = 0
    exit_viol = 0

    while cur > 0:
        if steps >= budget:
            status = STEP_BUDGET
            break
        # toppling procedure: distinguished vertex first, then the rule
        if R[star]:
            x = star
        elif proc_mode == PROC_SELECT and cur * beta_den <= beta_num * nc:
            x = select_site(R, c_sites, dist_c, net, sel_r)
        else:
            x = -1
            for k in range(nc):
                if R[c_sites[k]]:
                    x = c_sites[k]
                    break
        u = keyed_u64(seed, uint64(TAG_LOOP_I), uint64(x), uint64(hod[x]))
        if u < thr:
            # sleep
            R[x] = False
            hod[x] += 1
            cur -= 1
            if x == star:
                sleeps_star += 1
            steps += 1
            if track_b and in_b and not (cur * beta_den > beta_num * nc):
                in_b = False
                star_active = 1 if R[star] else 0
                if exit_count < log_cap:
                    exit_log[exit_count, 0] = cur
                    exit_log[exit_count, 1] = star_active
                exit_count += 1
                if cur != beta_floor or star_active == 1:
                    exit_viol += 1
        else:
            # loop of colour j
            uj = keyed_u64(seed, uint64(TAG_LOOP_J), uint64(x), uint64(lod[x]))
            j = 0
            while j < 64 and (uj >> uint64(j)) & uint64(1) == uint64(0):
                j += 1
            # walk only when the loop could wake someone
            do_walk = False
            if x == star:
                if j < n_colours:
                    for t in range(wstar_off[j], wstar_off[j + 1]):
                        if not R[wstar_targets[t]]:
                            do_walk = True
                            break
            else:
                if cur < nc:
                    do_walk = True
            if do_walk:
                wseed = keyed_u64(seed, uint64(TAG_GAMMA) + uint64(j),
                                  uint64(x), uint64(lod[x]))
                count, _, wstatus = walk_excursion(
                    neighbors, x, wseed, walk_cap, visited_mask, visited_list)
                if wstatus != OK:
                    for t in range(count):
                        visited_mask[visited_list[t]] = False
                    status = WALK_BUDGET
                    break
                if x == star:
                    for t in range(wstar_off[j], wstar_off[j + 1]):
                        y = wstar_targets[t]
                        if visited_mask[y] and not R[y]:
                            R[y] = True
                else:
                    for t in range(count):
                        y = visited_list[t]
                        if c_mask[y] and not R[y]:
                            # sleeping member of C covered by the loop
                            R[y] = True
                            cur += 1
                            if track_b and not in_b and \
                                    cur * beta_den > beta_num * nc:
                                in_b = True
                                n_b += 1
                for t in range(count):
                    visited_mask[visited_list[t]] = False
            hod[x] += 1
            lod[x] += 1
            steps += 1
            if x == star:
                loops_star += 1
                jj = j if j < 64 else 63
                colour_counts[jj] += 1

    out[0] = status
    out[1] = steps
    out[2] = sleeps_star
    out[3] = loops_star
    out[4] = n_b
    out[5] = exit_count
    out[6] = exit_viol
    out[7] = cur
    return status
