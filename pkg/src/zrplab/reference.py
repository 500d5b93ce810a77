"""Pure-Python pile-level engine, used to certify the compiled kernels.

Consumes the exact same Philox candidate stream as the compiled counts
kernel (one block per candidate, identical float operations), but tracks
particle identities in ordered piles per the graphical rules: the mark
addresses the particle at height n, particles above it shift down, and the
mover lands at the top of its destination pile.  Every event asserts the
projection, conservation and height invariants.  Tiny systems only.
"""

from __future__ import annotations

import math

import numpy as np

from .rng import draw_candidate


class ReferenceTrace:
    def __init__(self):
        self.events = []          # (t, x, n, u, h, accepted)
        self.piles = None
        self.counts = None


def evolve_reference(rate, counts0, t_end, seed, replica, stream, *, torus=True):
    """Replay the counts kernel in Python with full pile bookkeeping."""
    counts = [int(c) for c in counts0]
    n_sites = len(counts)
    piles = []
    nid = 0
    for x in range(n_sites):
        pile = list(range(nid, nid + counts[x]))
        nid += counts[x]
        piles.append(pile)
    slot_site = [x for x in range(n_sites) for _ in range(counts[x])]
    m = nid
    total_rate = rate.gamma_plus * m
    thr = rate.thinning_thresholds(max(256, max(counts) + 64))
    k0 = np.uint64(int(seed) & 0xFFFFFFFF)
    k1 = np.uint64((int(seed) >> 32) & 0xFFFFFFFF)
    rep = np.uint64(replica)
    st = np.uint64(stream)
    trace = ReferenceTrace()
    if m == 0:
        trace.piles = piles
        trace.counts = counts
        return trace

    t = 0.0
    idx = 0
    while True:
        u_dt, u_pick, u_acc = draw_candidate(np.uint64(idx), rep, st, k0, k1)
        idx += 1
        gap = -math.log1p(-u_dt) / total_rate
        t_next = t + gap
        if t_next >= t_end:
            break
        t = t_next
        scaled = u_pick * m
        p = int(scaled)
        if p >= m:
            p = m - 1
        x = slot_site[p]
        k = counts[x]
        nh = (scaled - p) * k
        n = int(nh) + 1
        if n > k:
            n = k
        h = -1 if (nh - (n - 1)) < 0.5 else 1
        accepted = u_acc <= (thr[n - 1] if n <= len(thr) else rate.gamma_tail / rate.gamma_plus)
        y = x
        moved = False
        if accepted:
            y = x + h
            if torus:
                y %= n_sites
                moved = True
            elif 0 <= y < n_sites:
                moved = True
            else:
                y = x
        trace.events.append((t, x, n, u_acc, h, accepted and moved))
        if moved:
            mover = piles[x].pop(n - 1)   # particles above height n drop by one
            piles[y].append(mover)        # mover lands on top of the next pile
            counts[x] -= 1
            counts[y] += 1
            slot_site[p] = y
        # invariants, asserted on every event
        assert all(len(piles[z]) == counts[z] for z in range(n_sites)), "projection"
        assert sum(counts) == m, "conservation"
    trace.piles = piles
    trace.counts = counts
    return trace
