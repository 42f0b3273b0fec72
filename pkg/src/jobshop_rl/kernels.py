"""Integer scheduling kernels (numba-compiled unless disabled, see ``_jit``).

Instances enter as the dense arrays of ``Instance.to_arrays``: ``machines``
and ``times`` of shape ``(n, width)`` and per-job task counts ``lengths``.
Every kernel replays the same decision rule as ``env.step``: the chosen
job's next task starts at max(job ready, machine ready).
"""

import numpy as np

from ._jit import jit

RUNNING = 0
EXHAUSTED = 1
TARGET_REACHED = 2

# ctl slots of the resumable search
C_DEPTH, C_MAKESPAN, C_INCUMBENT, C_NODES, C_STATUS, C_FRESH = range(6)


@jit
def decode_sequence(machines, times, lengths, num_machines, actions):
    """Replay ``actions``; returns (starts, makespan) or makespan -1 on an illegal action."""
    n = lengths.shape[0]
    starts = np.full(machines.shape, -1, dtype=np.int64)
    nxt = np.zeros(n, dtype=np.int64)
    jr = np.zeros(n, dtype=np.int64)
    mr = np.zeros(num_machines, dtype=np.int64)
    ms = 0
    for t in range(actions.shape[0]):
        a = actions[t]
        if a < 0 or a >= n or nxt[a] >= lengths[a]:
            return starts, -1
        i = nxt[a]
        k = machines[a, i]
        s = max(jr[a], mr[k])
        c = s + times[a, i]
        starts[a, i] = s
        jr[a] = c
        mr[k] = c
        nxt[a] = i + 1
        if c > ms:
            ms = c
    return starts, ms


@jit
def spt_sequence(machines, times, lengths, num_machines):
    """Shortest-processing-time dispatch over job heads, ties to the lowest job index."""
    n = lengths.shape[0]
    total = 0
    for j in range(n):
        total += lengths[j]
    seq = np.empty(total, dtype=np.int64)
    nxt = np.zeros(n, dtype=np.int64)
    jr = np.zeros(n, dtype=np.int64)
    mr = np.zeros(num_machines, dtype=np.int64)
    ms = 0
    for t in range(total):
        best = -1
        best_p = 0
        for j in range(n):
            if nxt[j] < lengths[j]:
                p = times[j, nxt[j]]
                if best < 0 or p < best_p:
                    best = j
                    best_p = p
        i = nxt[best]
        k = machines[best, i]
        c = max(jr[best], mr[k]) + times[best, i]
        jr[best] = c
        mr[k] = c
        nxt[best] = i + 1
        if c > ms:
            ms = c
        seq[t] = best
    return seq, ms


@jit
def random_makespans(machines, times, lengths, num_machines, uniforms):
    """Makespan of one uniformly random rollout per row of ``uniforms`` (shape (R, T))."""
    n = lengths.shape[0]
    rows = uniforms.shape[0]
    total = uniforms.shape[1]
    out = np.empty(rows, dtype=np.int64)
    nxt = np.zeros(n, dtype=np.int64)
    jr = np.zeros(n, dtype=np.int64)
    mr = np.zeros(num_machines, dtype=np.int64)
    for r in range(rows):
        nxt[:] = 0
        jr[:] = 0
        mr[:] = 0
        ms = 0
        for t in range(total):
            cnt = 0
            for j in range(n):
                if nxt[j] < lengths[j]:
                    cnt += 1
            pick = int(uniforms[r, t] * cnt)
            if pick >= cnt:
                pick = cnt - 1
            a = -1
            for j in range(n):
                if nxt[j] < lengths[j]:
                    if pick == 0:
                        a = j
                        break
                    pick -= 1
            i = nxt[a]
            k = machines[a, i]
            c = max(jr[a], mr[k]) + times[a, i]
            jr[a] = c
            mr[k] = c
            nxt[a] = i + 1
            if c > ms:
                ms = c
        out[r] = ms
    return out


@jit
def root_lower_bound(times, lengths, machines, num_machines):
    n = lengths.shape[0]
    load = np.zeros(num_machines, dtype=np.int64)
    lb = 0
    for j in range(n):
        work = 0
        for i in range(lengths[j]):
            work += times[j, i]
            load[machines[j, i]] += times[j, i]
        if work > lb:
            lb = work
    for k in range(num_machines):
        if load[k] > lb:
            lb = load[k]
    return lb


@jit
def bnb_search(machines, times, lengths, nxt, jr, mr, remj, remm,
               cand, ncand, pos, chosen, sv_jr, sv_mr, sv_ms, best, ctl,
               budget, target):
    """Resumable depth-first branch and bound over decision sequences.

    All search state lives in the caller's arrays, so the caller can stop after
    ``budget`` nodes, check a clock and call again. Children of a node are
    ordered by (earliest start, job index); a child is pruned when
    max(makespan, job ready + job work left, machine ready + machine work left)
    is not below the incumbent. Stops early once the incumbent is <= target.
    """
    n = lengths.shape[0]
    nm = mr.shape[0]
    total = cand.shape[0]
    depth = ctl[C_DEPTH]
    ms = ctl[C_MAKESPAN]
    inc = ctl[C_INCUMBENT]
    nodes = ctl[C_NODES]
    status = RUNNING
    if ctl[C_FRESH] == 1:
        ctl[C_FRESH] = 0
        depth = 0
        c = 0
        for j in range(n):
            if nxt[j] < lengths[j]:
                est = max(jr[j], mr[machines[j, nxt[j]]])
                q = c
                while q > 0:
                    o = cand[0, q - 1]
                    oest = max(jr[o], mr[machines[o, nxt[o]]])
                    if oest > est:
                        cand[0, q] = o
                        q -= 1
                    else:
                        break
                cand[0, q] = j
                c += 1
        ncand[0] = c
        pos[0] = 0
    if inc <= target:
        status = TARGET_REACHED
    done = 0
    while status == RUNNING and done < budget:
        d = depth
        if pos[d] >= ncand[d]:
            if d == 0:
                status = EXHAUSTED
                break
            depth = d - 1
            u = depth
            a = chosen[u]
            nxt[a] -= 1
            i = nxt[a]
            k = machines[a, i]
            p = times[a, i]
            jr[a] = sv_jr[u]
            mr[k] = sv_mr[u]
            ms = sv_ms[u]
            remj[a] += p
            remm[k] += p
            continue
        a = cand[d, pos[d]]
        pos[d] += 1
        i = nxt[a]
        k = machines[a, i]
        p = times[a, i]
        sv_jr[d] = jr[a]
        sv_mr[d] = mr[k]
        sv_ms[d] = ms
        c_done = max(jr[a], mr[k]) + p
        jr[a] = c_done
        mr[k] = c_done
        if c_done > ms:
            ms = c_done
        nxt[a] = i + 1
        remj[a] -= p
        remm[k] -= p
        chosen[d] = a
        nodes += 1
        done += 1

        prune = False
        if d == total - 1:
            if ms < inc:
                inc = ms
                for t in range(total):
                    best[t] = chosen[t]
            prune = True
        else:
            lb = ms
            for j in range(n):
                if remj[j] > 0 and jr[j] + remj[j] > lb:
                    lb = jr[j] + remj[j]
            for kk in range(nm):
                if remm[kk] > 0 and mr[kk] + remm[kk] > lb:
                    lb = mr[kk] + remm[kk]
            if lb >= inc:
                prune = True
        if prune:
            nxt[a] -= 1
            jr[a] = sv_jr[d]
            mr[k] = sv_mr[d]
            ms = sv_ms[d]
            remj[a] += p
            remm[k] += p
            if inc <= target:
                status = TARGET_REACHED
            continue
        depth = d + 1
        e = depth
        c = 0
        for j in range(n):
            if nxt[j] < lengths[j]:
                est = max(jr[j], mr[machines[j, nxt[j]]])
                q = c
                while q > 0:
                    o = cand[e, q - 1]
                    oest = max(jr[o], mr[machines[o, nxt[o]]])
                    if oest > est:
                        cand[e, q] = o
                        q -= 1
                    else:
                        break
                cand[e, q] = j
                c += 1
        ncand[e] = c
        pos[e] = 0
    ctl[C_DEPTH] = depth
    ctl[C_MAKESPAN] = ms
    ctl[C_INCUMBENT] = inc
    ctl[C_NODES] = nodes
    ctl[C_STATUS] = status
    return status
