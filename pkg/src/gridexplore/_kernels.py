"""Compiled grid search kernels (4-connected BFS and A*)."""

import heapq

import numpy as np
from numba import njit

_DX = np.array([1, 0, -1, 0], dtype=np.int64)
_DY = np.array([0, 1, 0, -1], dtype=np.int64)


@njit(cache=True)
def bfs_distances(passable, sx, sy):
    """Step distances from (sx, sy) over 4-connected passable cells; -1 if unreachable."""
    h, w = passable.shape
    dist = np.full((h, w), -1, dtype=np.int64)
    if sx < 0 or sy < 0 or sx >= w or sy >= h or not passable[sy, sx]:
        return dist
    queue = np.empty(h * w, dtype=np.int64)
    head = 0
    tail = 0
    dist[sy, sx] = 0
    queue[tail] = sy * w + sx
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        cy = cur // w
        cx = cur - cy * w
        d = dist[cy, cx] + 1
        for k in range(4):
            nx = cx + _DX[k]
            ny = cy + _DY[k]
            if 0 <= nx < w and 0 <= ny < h and passable[ny, nx] and dist[ny, nx] < 0:
                dist[ny, nx] = d
                queue[tail] = ny * w + nx
                tail += 1
    return dist


@njit(cache=True)
def astar(passable, sx, sy, gx, gy):
    """A* with Manhattan heuristic. Returns (n, 2) int array of (x, y), empty if no path.

    Ties on f are broken toward smaller heuristic, then smaller flat index, so the
    result is fully deterministic.
    """
    h, w = passable.shape
    empty = np.empty((0, 2), dtype=np.int64)
    if sx < 0 or sy < 0 or sx >= w or sy >= h or gx < 0 or gy < 0 or gx >= w or gy >= h:
        return empty
    if not passable[sy, sx] or not passable[gy, gx]:
        return empty
    start = sy * w + sx
    goal = gy * w + gx
    g = np.full(h * w, -1, dtype=np.int64)
    parent = np.full(h * w, -1, dtype=np.int64)
    closed = np.zeros(h * w, dtype=np.bool_)
    g[start] = 0
    h0 = abs(sx - gx) + abs(sy - gy)
    heap = [(h0, h0, start)]
    found = False
    while len(heap) > 0:
        f, hh, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        closed[cur] = True
        if cur == goal:
            found = True
            break
        cy = cur // w
        cx = cur - cy * w
        ng = g[cur] + 1
        for k in range(4):
            nx = cx + _DX[k]
            ny = cy + _DY[k]
            if 0 <= nx < w and 0 <= ny < h and passable[ny, nx]:
                nb = ny * w + nx
                if closed[nb]:
                    continue
                if g[nb] < 0 or ng < g[nb]:
                    g[nb] = ng
                    parent[nb] = cur
                    nh = abs(nx - gx) + abs(ny - gy)
                    heapq.heappush(heap, (ng + nh, nh, nb))
    if not found:
        return empty
    n = g[goal] + 1
    out = np.empty((n, 2), dtype=np.int64)
    cur = goal
    for i in range(n - 1, -1, -1):
        cy = cur // w
        out[i, 0] = cur - cy * w
        out[i, 1] = cy
        cur = parent[cur]
    return out


@njit(cache=True)
def first_true(mask):
    """Index of the first True along axis 1, or -1 per row."""
    n, m = mask.shape
    out = np.full(n, -1, dtype=np.int64)
    for i in range(n):
        for j in range(m):
            if mask[i, j]:
                out[i] = j
                break
    return out


@njit(cache=True)
def view_gains(states, counts, cand_x, cand_y, dx, dy, valid, mode):
    """Per-candidate value of a 360 degree view over a believed map.

    Rays stop at obstacle cells (state 2, or outside the grid); unexplored cells (state 0)
    are transparent. mode 0 counts distinct unexplored cells seen, mode 1 sums
    1/sqrt(count + 1) over all distinct cells seen.
    """
    h, w = states.shape
    n = cand_x.shape[0]
    R, L = dx.shape
    out = np.zeros(n)
    stamp = np.full((h, w), -1, dtype=np.int64)
    for i in range(n):
        acc = 0.0
        for r in range(R):
            for k in range(L):
                if not valid[r, k]:
                    break
                x = cand_x[i] + dx[r, k]
                y = cand_y[i] + dy[r, k]
                if x < 0 or y < 0 or x >= w or y >= h:
                    break
                st = states[y, x]
                if st == 2:
                    break
                if stamp[y, x] == i:
                    continue
                stamp[y, x] = i
                if mode == 0:
                    if st == 0:
                        acc += 1.0
                else:
                    acc += 1.0 / np.sqrt(counts[y, x] + 1.0)
        out[i] = acc
    return out


@njit(cache=True)
def first_blocked(blocked, x0, y0, dx, dy, valid):
    """Index along each ray of the first blocked (or out-of-grid) cell, -1 if none."""
    h, w = blocked.shape
    R, L = dx.shape
    out = np.full(R, -1, dtype=np.int64)
    for r in range(R):
        for k in range(L):
            if not valid[r, k]:
                break
            x = x0 + dx[r, k]
            y = y0 + dy[r, k]
            if x < 0 or y < 0 or x >= w or y >= h or blocked[y, x]:
                out[r] = k
                break
    return out


@njit(cache=True)
def action_distances(passable, sx, sy, sh, n_headings, bucket):
    """Fewest actions (forward / turn left / turn right) to reach each cell.

    BFS over (cell, heading) states from (sx, sy, sh); bucket[h] is the cardinal
    direction index that Forward follows at heading h. Returns -1 where unreachable.
    """
    h, w = passable.shape
    H = n_headings
    seen = np.full((H, h, w), -1, dtype=np.int64)
    best = np.full((h, w), -1, dtype=np.int64)
    if sx < 0 or sy < 0 or sx >= w or sy >= h or not passable[sy, sx]:
        return best
    queue = np.empty(H * h * w, dtype=np.int64)
    head = 0
    tail = 0
    seen[sh, sy, sx] = 0
    best[sy, sx] = 0
    queue[tail] = (sh * h + sy) * w + sx
    tail += 1
    while head < tail:
        cur = queue[head]
        head += 1
        hd = cur // (h * w)
        rem = cur - hd * h * w
        cy = rem // w
        cx = rem - cy * w
        d = seen[hd, cy, cx] + 1
        # turns
        for dh in (1, H - 1):
            nh = (hd + dh) % H
            if seen[nh, cy, cx] < 0:
                seen[nh, cy, cx] = d
                queue[tail] = (nh * h + cy) * w + cx
                tail += 1
        k = bucket[hd]
        nx = cx + _DX[k]
        ny = cy + _DY[k]
        if 0 <= nx < w and 0 <= ny < h and passable[ny, nx] and seen[hd, ny, nx] < 0:
            seen[hd, ny, nx] = d
            if best[ny, nx] < 0:
                best[ny, nx] = d
            queue[tail] = (hd * h + ny) * w + nx
            tail += 1
    return best
