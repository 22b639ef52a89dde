"""Compiled replication kernel.

``FastSimulation`` runs the same model as ``engine.Simulation`` with all state
held in numpy arrays and the event loop compiled by numba.  It reads the
same named uniform streams in the same order and breaks ties the same way,
so for a given scenario, seed and replication both engines produce identical
counters.  The object engine remains the reference; this one exists because
a year of Calais traffic is close to a million lorries.

Uniforms are pre-drawn into per-stream buffers.  The kernel returns to
Python whenever a buffer runs low or a state array needs to grow, and then
carries on from where it stopped.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, types
from numba.experimental import structref

from .analysis import RunCounters
from .berth import BerthMode
from .core import _BLOCK, Side, make_stream
from .network import NodeKind, cumulative
from .screening import ProfileCache

# node kinds (same codes as the object engine)
_SHED, _BERTH, _SINK, _ROUTER, _JUMP, _SOURCE = range(6)
_KIND_CODE = {
    NodeKind.SERVICE_SHED: _SHED,
    NodeKind.BERTH: _BERTH,
    NodeKind.SINK: _SINK,
    NodeKind.PROB_ROUTER: _ROUTER,
    NodeKind.SHORTEST_QUEUE_ROUTER: _ROUTER,
    NodeKind.JUMP: _JUMP,
    NodeKind.SOURCE: _SOURCE,
}
_NONE, _FIXED, _PROB, _SHORTEST = -1, 0, 1, 2
_FAMILY = {"Constant": 0, "Exponential": 1, "Uniform": 2, "Triangular": 3}

# event kinds (EventKind values)
_ARRIVAL, _SERVICE_END, _SQUAD, _DEPART, _SAMPLE = 0, 2, 3, 4, 5

# kernel return codes
DONE, REFILL, GROW = 0, 1, 2

# integer scalars in S.iv
(HEAP_N, SEQ, ARRIVALS, CLAND_ARR, MISSED, FPOS, TPOS, SCREENINGS, BERTH_CHECKS,
 BALKED, EXITS, IN_SYS, CLAND_IN_SYS, BLOCKED, EVENTS, FREE_N, PARKED_N, ELIG_N,
 EVER_PARKED, BCHECKS, TICKS, WORK_HEAD, WORK_LEN, SAMPLE_N, PHASE, N_IV) = range(26)
# float scalars in S.fv
NOW, TIS, N_FV = range(3)

_STREAM_LEN = 8 * _BLOCK
# uniforms every stream keeps in reserve; checked every 16 events
_LOW_WATER = _BLOCK

MODEL_FIELDS = (
    "kind", "jump", "shed_of", "rmode", "rfixed", "rstart", "rend", "rtarget", "rcum",
    "node_of_shed", "servers", "cap", "exit_buf", "applies", "drop", "has_sensor",
    "svc_fam", "svc_p", "svc_stream", "scr_stream", "shed_tp", "shed_fp", "shed_det",
    "load_alpha", "load_q0", "load_floor",
    "src_node", "src_base", "src_peak", "src_flat", "src_stream", "profile",
    "cland_p", "soft_frac", "com_cum", "cargo_stream", "routing_stream",
    "berth_node", "berth_recheck", "dwell_fam", "dwell_p", "dwell_stream",
    "sq_fam", "sq_p", "sq_stream", "sq_tp", "sq_fp", "sq_det",
    "sample_interval", "total_servers",
)

STATE_FIELDS = (
    "iv", "fv", "ubuf", "upos", "ufill",
    "h_t", "h_i",
    "l_side", "l_com", "l_cland", "l_carried", "l_flag", "l_det", "l_tok", "l_ppos",
    "l_epos", "l_created", "free",
    "q", "q_head", "q_len", "buf", "buf_n", "fin", "fin_n",
    "w_hold", "w_lorry", "w_head", "w_len",
    "busy", "served", "balked", "maxq", "area", "last",
    "work", "parked", "elig", "det_counts",
    "s_t", "s_det", "s_miss", "s_q",
    "pend", "pend_base", "pend_t",
)


# Model and state are passed around as struct references: one pointer per
# call, where a tuple of arrays would cost a reference-count update per array.
@structref.register
class ModelType(types.StructRef):
    def preprocess_fields(self, fields):
        return tuple((name, types.unliteral(typ)) for name, typ in fields)


@structref.register
class StateType(types.StructRef):
    def preprocess_fields(self, fields):
        return tuple((name, types.unliteral(typ)) for name, typ in fields)


class Model(structref.StructRefProxy):
    pass


class State(structref.StructRefProxy):
    pass


structref.define_proxy(Model, ModelType, list(MODEL_FIELDS))
structref.define_proxy(State, StateType, list(STATE_FIELDS))


# -- primitives ---------------------------------------------------------------

@njit(cache=True)
def _draw(S, s):
    i = S.upos[s]
    if i >= S.ufill[s]:
        raise RuntimeError("uniform buffer exhausted inside an event")
    S.upos[s] = i + 1
    return S.ubuf[s, i]


@njit(cache=True)
def _sample(fam, p, S, s):
    if fam == 0:
        return p[0]
    u = _draw(S, s)
    if fam == 1:
        return -p[0] * math.log(1.0 - u)
    if fam == 2:
        return p[0] + p[1] * u
    if u < p[2]:
        return p[0] + math.sqrt(u * p[3])
    return p[1] - math.sqrt((1.0 - u) * p[4])


@njit(cache=True)
def _categorical(cum, lo, hi, u):
    x = u * cum[hi - 1]
    i = 0
    while lo + i < hi and cum[lo + i] <= x:
        i += 1
    n = hi - lo
    return i if i < n else n - 1


@njit(cache=True)
def _less(ht, hi, i, j):
    return ht[i] < ht[j] or (ht[i] == ht[j] and hi[i, 0] < hi[j, 0])


@njit(cache=True)
def _swap(ht, hi, i, j):
    ht[i], ht[j] = ht[j], ht[i]
    for c in range(4):
        hi[i, c], hi[j, c] = hi[j, c], hi[i, c]


@njit(cache=True)
def _heap_push(ht, hi, iv, now, t, k, a, b):
    if t < now:
        raise RuntimeError("event scheduled before the current time")
    n = iv[HEAP_N]
    if n >= ht.shape[0]:
        raise RuntimeError("event heap overflow")
    ht[n] = t
    hi[n, 0] = iv[SEQ]
    hi[n, 1] = k
    hi[n, 2] = a
    hi[n, 3] = b
    iv[SEQ] += 1
    iv[HEAP_N] = n + 1
    while n > 0:
        parent = (n - 1) >> 1
        if _less(ht, hi, n, parent):
            _swap(ht, hi, n, parent)
            n = parent
        else:
            break


@njit(cache=True)
def _push(S, t, k, a, b):
    _heap_push(S.h_t, S.h_i, S.iv, S.fv[NOW], t, k, a, b)


@njit(cache=True)
def _pop(ht, hi, iv):
    """Move the earliest event to the slot just past the heap; return that slot."""
    n = iv[HEAP_N] - 1
    iv[HEAP_N] = n
    _swap(ht, hi, 0, n)
    i = 0
    while True:
        left = 2 * i + 1
        if left >= n:
            break
        best = left
        if left + 1 < n and _less(ht, hi, left + 1, left):
            best = left + 1
        if _less(ht, hi, best, i):
            _swap(ht, hi, best, i)
            i = best
        else:
            break
    return n


# -- lorries ------------------------------------------------------------------

@njit(cache=True)
def _alloc(S):
    n = S.iv[FREE_N]
    if n == 0:
        raise RuntimeError("lorry table overflow")
    S.iv[FREE_N] = n - 1
    return S.free[n - 1]


@njit(cache=True)
def _leave(M, S, slot, balked):
    now = S.fv[NOW]
    S.iv[IN_SYS] -= 1
    if balked:
        S.iv[BALKED] += 1
    else:
        S.iv[EXITS] += 1
        S.fv[TIS] += now - S.l_created[slot]
    if S.l_carried[slot]:
        S.iv[CLAND_IN_SYS] -= 1
        if S.l_det[slot] >= 0:
            S.det_counts[S.l_det[slot]] += 1
        else:
            S.iv[MISSED] += 1
    S.free[S.iv[FREE_N]] = slot
    S.iv[FREE_N] += 1


@njit(cache=True)
def _resolve(S, slot, tp, fp, stream, det_key):
    """Screening outcome: 0 TP, 1 FN, 2 FP, 3 TN (see ``Outcome``)."""
    u = _draw(S, stream)
    if S.l_cland[slot]:
        hit = u < tp
        if hit:
            S.l_cland[slot] = 0
            if S.l_det[slot] < 0:
                S.l_det[slot] = det_key
        outcome = 0 if hit else 1
    else:
        hit = u < fp
        outcome = 2 if hit else 3
    S.l_flag[slot] = 1 if hit else 0
    S.iv[SCREENINGS] += 1
    if outcome == 0:
        S.iv[TPOS] += 1
    elif outcome == 2:
        S.iv[FPOS] += 1
    return outcome


# -- sheds --------------------------------------------------------------------

@njit(cache=True)
def _touch(S, s):
    now = S.fv[NOW]
    S.area[s] += (S.q_len[s] + S.busy[s] + S.buf_n[s]) * (now - S.last[s])
    S.last[s] = now


@njit(cache=True)
def _has_room(M, S, s):
    return M.cap[s] < 0 or S.q_len[s] < M.cap[s]


@njit(cache=True)
def _can_start(M, S, s):
    return S.busy[s] < M.servers[s] and S.buf_n[s] < M.exit_buf[s]


@njit(cache=True)
def _admit(M, S, s, slot):
    _touch(S, s)
    if S.q_len[s] == 0 and _can_start(M, S, s):
        S.busy[s] += 1
        return True
    qc = S.q.shape[1]
    n = S.q_len[s]
    if n >= qc:
        raise RuntimeError("shed queue overflow")
    S.q[s, (S.q_head[s] + n) % qc] = slot
    S.q_len[s] = n + 1
    if n + 1 > S.maxq[s]:
        S.maxq[s] = n + 1
    return False


@njit(cache=True)
def _start_next(M, S, s):
    if S.q_len[s] > 0 and _can_start(M, S, s):
        _touch(S, s)
        S.busy[s] += 1
        h = S.q_head[s]
        slot = S.q[s, h]
        S.q_head[s] = (h + 1) % S.q.shape[1]
        S.q_len[s] -= 1
        return slot
    return -1


@njit(cache=True)
def _complete(M, S, s, slot):
    S.served[s] += 1
    if S.buf_n[s] < M.exit_buf[s]:
        _touch(S, s)
        S.busy[s] -= 1
        S.buf[s, S.buf_n[s]] = slot
        S.buf_n[s] += 1
        return True
    S.fin[s, S.fin_n[s]] = slot
    S.fin_n[s] += 1
    return False


@njit(cache=True)
def _release(S, s, slot):
    _touch(S, s)
    n = S.buf_n[s]
    i = 0
    while S.buf[s, i] != slot:
        i += 1
    for j in range(i, n - 1):
        S.buf[s, j] = S.buf[s, j + 1]
    n -= 1
    S.buf_n[s] = n
    if S.fin_n[s] > 0:
        nxt = S.fin[s, 0]
        for j in range(S.fin_n[s] - 1):
            S.fin[s, j] = S.fin[s, j + 1]
        S.fin_n[s] -= 1
        S.busy[s] -= 1
        S.buf[s, n] = nxt
        S.buf_n[s] = n + 1
        return nxt
    return -1


@njit(cache=True)
def _work_push(S, s):
    cap = S.work.shape[0]
    n = S.iv[WORK_LEN]
    if n >= cap:
        raise RuntimeError("work list overflow")
    S.work[(S.iv[WORK_HEAD] + n) % cap] = s
    S.iv[WORK_LEN] = n + 1


# -- Berth --------------------------------------------------------------------

@njit(cache=True)
def _swap_remove(items, pos, n, slot):
    i = pos[slot]
    if i < 0:
        return n
    pos[slot] = -1
    n -= 1
    last = items[n]
    if i < n:
        items[i] = last
        pos[last] = i
    return n


@njit(cache=True)
def _unpark(S, slot):
    S.iv[PARKED_N] = _swap_remove(S.parked, S.l_ppos, S.iv[PARKED_N], slot)
    S.iv[ELIG_N] = _swap_remove(S.elig, S.l_epos, S.iv[ELIG_N], slot)
    S.l_tok[slot] = -1


# -- movement -----------------------------------------------------------------

@njit(cache=True)
def _pick(M, S, nid, slot):
    c = S.l_side[slot] * 2 + S.l_flag[slot]
    mode = M.rmode[nid, c]
    if mode == _FIXED:
        return M.rfixed[nid, c]
    lo, hi = M.rstart[nid, c], M.rend[nid, c]
    if mode == _PROB:
        return M.rtarget[lo + _categorical(M.rcum, lo, hi, _draw(S, M.routing_stream))]
    if mode == _SHORTEST:
        best = M.rtarget[lo]
        bs = M.shed_of[best]
        best_load = S.q_len[bs] + S.busy[bs]
        for i in range(lo + 1, hi):
            s = M.shed_of[M.rtarget[i]]
            load = S.q_len[s] + S.busy[s]
            if load < best_load:
                best, best_load = M.rtarget[i], load
        return best
    raise RuntimeError("no outgoing edge admits the lorry")


@njit(cache=True)
def _next_stop(M, S, nid, slot):
    nid = _pick(M, S, nid, slot)
    while True:
        k = M.kind[nid]
        if k == _SHED:
            a = M.applies[M.shed_of[nid]]
            if a == 2 or a == S.l_side[slot]:
                return nid
            nid = _pick(M, S, nid, slot)
        elif k == _ROUTER:
            nid = _pick(M, S, nid, slot)
        elif k == _JUMP:
            nid = M.jump[nid]
        else:
            return nid


@njit(cache=True)
def _enter(M, S, dest, slot, holder):
    k = M.kind[dest]
    now = S.fv[NOW]
    if k == _SHED:
        s = M.shed_of[dest]
        if not _has_room(M, S, s):
            if M.drop[s]:
                S.balked[s] += 1
                _leave(M, S, slot, True)
                return True
            wc = S.w_hold.shape[1]
            n = S.w_len[s]
            if n >= wc:
                raise RuntimeError("waiter list overflow")
            j = (S.w_head[s] + n) % wc
            S.w_hold[s, j] = holder
            S.w_lorry[s, j] = slot
            S.w_len[s] = n + 1
            S.iv[BLOCKED] += 1
            return False
        if _admit(M, S, s, slot):
            _push(S, now + _sample(M.svc_fam[s], M.svc_p[s], S, M.svc_stream[s]),
                  _SERVICE_END, s, slot)
        return True
    if k == _BERTH:
        n = S.iv[PARKED_N]
        if n >= S.parked.shape[0]:
            raise RuntimeError("Berth overflow")
        S.parked[n] = slot
        S.l_ppos[slot] = n
        S.iv[PARKED_N] = n + 1
        n = S.iv[ELIG_N]
        S.elig[n] = slot
        S.l_epos[slot] = n
        S.iv[ELIG_N] = n + 1
        S.iv[EVER_PARKED] += 1
        S.l_tok[slot] = S.iv[EVER_PARKED]
        _push(S, now + _sample(M.dwell_fam, M.dwell_p, S, M.dwell_stream),
              _DEPART, slot, S.iv[EVER_PARKED])
        return True
    _leave(M, S, slot, False)
    return True


@njit(cache=True)
def _forward(M, S, nid, slot, holder):
    return _enter(M, S, _next_stop(M, S, nid, slot), slot, holder)


@njit(cache=True)
def _forward_from_shed(M, S, s, slot):
    while slot >= 0:
        if not _forward(M, S, M.node_of_shed[s], slot, s):
            return
        slot = _release(S, s, slot)
        _work_push(S, s)


@njit(cache=True)
def _pump(M, S, s):
    now = S.fv[NOW]
    while True:
        slot = _start_next(M, S, s)
        if slot < 0:
            break
        _push(S, now + _sample(M.svc_fam[s], M.svc_p[s], S, M.svc_stream[s]),
              _SERVICE_END, s, slot)
    wc = S.w_hold.shape[1]
    while S.w_len[s] > 0 and _has_room(M, S, s):
        h = S.w_head[s]
        holder, slot = S.w_hold[s, h], S.w_lorry[s, h]
        S.w_head[s] = (h + 1) % wc
        S.w_len[s] -= 1
        S.iv[BLOCKED] -= 1
        if _admit(M, S, s, slot):
            _push(S, now + _sample(M.svc_fam[s], M.svc_p[s], S, M.svc_stream[s]),
                  _SERVICE_END, s, slot)
        if holder >= 0:
            _forward_from_shed(M, S, holder, _release(S, holder, slot))
            _work_push(S, holder)


@njit(cache=True)
def _settle(M, S):
    cap = S.work.shape[0]
    while S.iv[WORK_LEN] > 0:
        s = S.work[S.iv[WORK_HEAD]]
        S.iv[WORK_HEAD] = (S.iv[WORK_HEAD] + 1) % cap
        S.iv[WORK_LEN] -= 1
        _pump(M, S, s)


# -- arrivals -----------------------------------------------------------------

@njit(cache=True)
def _resolve_pending(M, S, i):
    """Finish drawing source ``i``'s next arrival; False when uniforms ran out."""
    peak = M.src_peak[i]
    base = S.pend_base[i]
    st = M.src_stream[i]
    if peak <= 0.0:
        S.pend[i] = 0
        return True
    if M.src_flat[i]:
        if S.ufill[st] - S.upos[st] < 1:
            return False
        gap = -math.log(1.0 - _draw(S, st)) / peak
        S.pend[i] = 0
        _push(S, base + gap, _ARRIVAL, i, 0)
        return True
    t = S.pend_t[i]
    rate = M.src_base[i]
    while True:
        if S.ufill[st] - S.upos[st] < 2:
            S.pend_t[i] = t
            return False
        t -= math.log(1.0 - _draw(S, st)) / peak
        hour = int(t // 60.0) % 168
        if _draw(S, st) * peak < rate * M.profile[hour] / 60.0:
            break
    S.pend[i] = 0
    _push(S, base + (t - base), _ARRIVAL, i, 0)
    return True


@njit(cache=True)
def _on_arrival(M, S, i):
    now = S.fv[NOW]
    cs = M.cargo_stream
    clandestine = _draw(S, cs) < M.cland_p
    side = 0 if _draw(S, cs) < M.soft_frac else 1
    com = 0
    if M.com_cum.shape[0] > 1:
        com = _categorical(M.com_cum, 0, M.com_cum.shape[0], _draw(S, cs))
    slot = _alloc(S)
    S.l_side[slot] = side
    S.l_com[slot] = com
    S.l_cland[slot] = 1 if clandestine else 0
    S.l_carried[slot] = 1 if clandestine else 0
    S.l_flag[slot] = 0
    S.l_det[slot] = -1
    S.l_tok[slot] = -1
    S.l_ppos[slot] = -1
    S.l_epos[slot] = -1
    S.l_created[slot] = now
    S.iv[ARRIVALS] += 1
    S.iv[IN_SYS] += 1
    if clandestine:
        S.iv[CLAND_ARR] += 1
        S.iv[CLAND_IN_SYS] += 1
    _forward(M, S, M.src_node[i], slot, -1)
    S.pend[i] = 1
    S.pend_base[i] = now
    S.pend_t[i] = now


# -- other events -------------------------------------------------------------

@njit(cache=True)
def _on_service_end(M, S, s, slot):
    if M.has_sensor[s]:
        side, com = S.l_side[slot], S.l_com[slot]
        tp = M.shed_tp[s, side, com]
        if M.load_alpha != 0.0 and S.l_cland[slot]:
            degraded = tp * (1.0 - M.load_alpha * max(0, S.q_len[s] - M.load_q0))
            tp = min(tp, max(M.load_floor, degraded))
        _resolve(S, slot, tp, M.shed_fp[s, side, com], M.scr_stream[s], M.shed_det[s])
    if _complete(M, S, s, slot):
        _forward_from_shed(M, S, s, slot)
    _pump(M, S, s)
    _settle(M, S)


@njit(cache=True)
def _on_squad(M, S, i):
    now = S.fv[NOW]
    st = M.sq_stream[i]
    S.iv[TICKS] += 1
    n = S.iv[ELIG_N]
    if n > 0:
        pick = int(_draw(S, st) * n)
        if pick > n - 1:
            pick = n - 1
        slot = S.elig[pick]
        side, com = S.l_side[slot], S.l_com[slot]
        outcome = _resolve(S, slot, M.sq_tp[i, side, com], M.sq_fp[i, side, com], st,
                           M.sq_det[i, side])
        S.iv[BCHECKS] += 1
        S.iv[BERTH_CHECKS] += 1
        if not M.berth_recheck:
            S.iv[ELIG_N] = _swap_remove(S.elig, S.l_epos, S.iv[ELIG_N], slot)
        if outcome == 0:
            _unpark(S, slot)
            _forward(M, S, M.berth_node, slot, -1)
    _push(S, now + _sample(M.sq_fam[i], M.sq_p[i], S, st), _SQUAD, i, 0)


@njit(cache=True)
def _on_depart(M, S, slot, token):
    if S.l_tok[slot] != token or S.l_ppos[slot] < 0:
        return
    _unpark(S, slot)
    _forward(M, S, M.berth_node, slot, -1)


@njit(cache=True)
def _check_conservation(S):
    detected = 0
    for k in range(S.det_counts.shape[0]):
        detected += S.det_counts[k]
    if S.iv[ARRIVALS] != S.iv[EXITS] + S.iv[IN_SYS] + S.iv[BALKED]:
        raise AssertionError("lorry conservation violated")
    if detected + S.iv[MISSED] + S.iv[CLAND_IN_SYS] != S.iv[CLAND_ARR]:
        raise AssertionError("clandestine conservation violated")
    return detected


@njit(cache=True)
def _on_sample(M, S):
    now = S.fv[NOW]
    n = S.iv[SAMPLE_N]
    if n >= S.s_t.shape[0]:
        raise RuntimeError("sample table overflow")
    S.s_t[n] = now
    S.s_det[n] = _check_conservation(S)
    S.s_miss[n] = S.iv[MISSED]
    for s in range(S.q_len.shape[0]):
        S.s_q[n, s] = S.q_len[s]
    S.iv[SAMPLE_N] = n + 1
    _push(S, now + M.sample_interval, _SAMPLE, 0, 0)


# -- run loop -----------------------------------------------------------------

@njit(cache=True)
def _needs(M, S, scan):
    """REFILL, GROW or DONE (nothing to do).  Per-stream and per-shed checks
    only run when ``scan`` is set; their margins cover many events."""
    if 2 * (S.iv[HEAP_N] + M.total_servers) + 64 > S.h_t.shape[0]:
        return GROW
    if 2 * S.iv[FREE_N] < S.free.shape[0]:
        return GROW
    if 2 * S.iv[PARKED_N] + 2 > S.parked.shape[0]:
        return GROW
    if S.iv[SAMPLE_N] + 2 > S.s_t.shape[0]:
        return GROW
    if not scan:
        return DONE
    for st in range(S.upos.shape[0]):
        if S.ufill[st] - S.upos[st] < _LOW_WATER:
            return REFILL
    qc, wc = S.q.shape[1], S.w_hold.shape[1]
    for s in range(S.q_len.shape[0]):
        if 2 * S.q_len[s] + 2 > qc or 2 * S.w_len[s] + 2 > wc:
            return GROW
    return DONE


@njit(cache=True)
def _extend(a, size, fill):
    out = np.full(size, fill, a.dtype)
    out[:a.shape[0]] = a
    return out


@njit(cache=True)
def _extend_rows(a, rows):
    out = np.zeros((rows, a.shape[1]), a.dtype)
    out[:a.shape[0]] = a
    return out


@njit(cache=True)
def _unroll(ring, head, length, width):
    """Copy each row's ring contents to the front of a wider array."""
    out = np.zeros((ring.shape[0], width), ring.dtype)
    cap = ring.shape[1]
    for s in range(ring.shape[0]):
        for j in range(length[s]):
            out[s, j] = ring[s, (head[s] + j) % cap]
    return out


@njit(cache=True)
def _grow(M, S):
    """Double whichever state arrays are at least half full."""
    iv = S.iv
    h = S.h_t.shape[0]
    need = 2 * (iv[HEAP_N] + M.total_servers) + 64
    if need > h:
        size = max(2 * h, 2 * need)
        S.h_t = _extend(S.h_t, size, 0.0)
        S.h_i = _extend_rows(S.h_i, size)
    lc = S.free.shape[0]
    if 2 * iv[FREE_N] < lc:
        size = 2 * lc
        S.l_side = _extend(S.l_side, size, 0)
        S.l_com = _extend(S.l_com, size, 0)
        S.l_cland = _extend(S.l_cland, size, 0)
        S.l_carried = _extend(S.l_carried, size, 0)
        S.l_flag = _extend(S.l_flag, size, 0)
        S.l_det = _extend(S.l_det, size, -1)
        S.l_tok = _extend(S.l_tok, size, -1)
        S.l_ppos = _extend(S.l_ppos, size, -1)
        S.l_epos = _extend(S.l_epos, size, -1)
        S.l_created = _extend(S.l_created, size, 0.0)
        nf = iv[FREE_N]
        free = np.empty(size, np.int64)
        free[:nf] = S.free[:nf]
        for j in range(lc):
            free[nf + j] = size - 1 - j
        S.free = free
        iv[FREE_N] = nf + lc
        # the work list is empty between events
        S.work = np.zeros(size, np.int64)
        iv[WORK_HEAD] = 0
    pc = S.parked.shape[0]
    if 2 * iv[PARKED_N] + 2 > pc:
        S.parked = _extend(S.parked, 2 * pc, 0)
        S.elig = _extend(S.elig, 2 * pc, 0)
    sc = S.s_t.shape[0]
    if iv[SAMPLE_N] + 2 > sc:
        S.s_t = _extend(S.s_t, 2 * sc, 0.0)
        S.s_det = _extend(S.s_det, 2 * sc, 0)
        S.s_miss = _extend(S.s_miss, 2 * sc, 0)
        S.s_q = _extend_rows(S.s_q, 2 * sc)
    qc, wc = S.q.shape[1], S.w_hold.shape[1]
    q_full, w_full = False, False
    for s in range(S.q_len.shape[0]):
        q_full = q_full or 2 * S.q_len[s] + 2 > qc
        w_full = w_full or 2 * S.w_len[s] + 2 > wc
    if q_full:
        S.q = _unroll(S.q, S.q_head, S.q_len, 2 * qc)
        S.q_head[:] = 0
    if w_full:
        S.w_hold = _unroll(S.w_hold, S.w_head, S.w_len, 2 * wc)
        S.w_lorry = _unroll(S.w_lorry, S.w_head, S.w_len, 2 * wc)
        S.w_head[:] = 0


@njit(cache=True)
def _run(M, S, t_end):
    n_src = S.pend.shape[0]
    if S.iv[PHASE] == 0:
        for i in range(n_src):
            S.pend[i] = 1
            S.pend_base[i] = 0.0
            S.pend_t[i] = 0.0
        S.iv[PHASE] = 1
    for i in range(n_src):
        if S.pend[i] and not _resolve_pending(M, S, i):
            return REFILL
    if S.iv[PHASE] == 1:
        for i in range(M.sq_fam.shape[0]):
            _push(S, _sample(M.sq_fam[i], M.sq_p[i], S, M.sq_stream[i]), _SQUAD, i, 0)
        if M.sample_interval > 0.0:
            _push(S, M.sample_interval, _SAMPLE, 0, 0)
        S.iv[PHASE] = 2
    scan = True
    while True:
        status = _needs(M, S, scan)
        scan = (S.iv[EVENTS] & 15) == 0
        if status == GROW:
            _grow(M, S)
        elif status == REFILL:
            return REFILL
        if S.iv[HEAP_N] == 0 or S.h_t[0] > t_end:
            return DONE
        n = _pop(S.h_t, S.h_i, S.iv)
        t, k, a, b = S.h_t[n], S.h_i[n, 1], S.h_i[n, 2], S.h_i[n, 3]
        if t < S.fv[NOW]:
            raise RuntimeError("clock moved backwards")
        S.fv[NOW] = t
        S.iv[EVENTS] += 1
        if k == _ARRIVAL:
            _on_arrival(M, S, a)
            if not _resolve_pending(M, S, a):
                return REFILL
        elif k == _SERVICE_END:
            _on_service_end(M, S, a, b)
        elif k == _SQUAD:
            _on_squad(M, S, a)
        elif k == _DEPART:
            _on_depart(M, S, a, b)
        else:
            _on_sample(M, S)


@njit(cache=True)
def _snapshot(S):
    return (S.det_counts, S.s_t, S.s_det, S.s_miss, S.s_q, S.q_len, S.busy, S.buf_n,
            S.served, S.area, S.last)


# -- Python side --------------------------------------------------------------

def _dist_code(spec):
    """Family code plus the five precomputed parameters the kernel samples from."""
    p = spec.params
    out = np.zeros(5)
    fam = spec.family
    if fam == "Triangular":
        a, c, b = p
        if b == a:
            out[0] = a
            return 0, out
        out[:] = (a, b, (c - a) / (b - a), (b - a) * (c - a), (b - a) * (b - c))
        return 3, out
    if fam == "Uniform":
        out[0], out[1] = p[0], p[1] - p[0]
        return 2, out
    out[0] = p[0]
    return _FAMILY[fam], out


class FastSimulation:
    """Array-backed replication with the same inputs and outputs as ``Simulation``."""

    def __init__(self, scenario, master_seed: int | None = None, replication: int = 0,
                 sample_interval: float | None = None):
        self.scenario = scenario
        self.master_seed = scenario.run.seed if master_seed is None else int(master_seed)
        self.replication = int(replication)
        self.sample_interval = (scenario.run.sample_interval if sample_interval is None
                                else sample_interval)
        self._names: list[str] = []
        self._generators: list = []
        values = self._build_model()
        self.M = Model(*(values[name] for name in MODEL_FIELDS))
        self._values = values
        self.S = self._initial_state()

    # -- model tables -------------------------------------------------------

    def _stream(self, name: str) -> int:
        self._names.append(name)
        self._generators.append(make_stream(self.master_seed, self.replication, name).generator)
        return len(self._names) - 1

    def _build_model(self):
        sc = self.scenario
        graph = sc.graph
        ids = list(graph.nodes)
        index = {nid: i for i, nid in enumerate(ids)}
        self._ids = ids
        n = len(ids)
        kind = np.array([_KIND_CODE[graph.nodes[nid].kind] for nid in ids], dtype=np.int64)
        jump = np.full(n, -1, dtype=np.int64)
        for nid in ids:
            node = graph.nodes[nid]
            if node.kind is NodeKind.JUMP:
                jump[index[nid]] = index[graph.jumps[node.label]]

        shed_ids = [nid for nid in ids if graph.nodes[nid].kind is NodeKind.SERVICE_SHED]
        self._shed_ids = shed_ids
        ns = len(shed_ids)
        shed_of = np.full(n, -1, dtype=np.int64)
        for s, nid in enumerate(shed_ids):
            shed_of[index[nid]] = s

        commodities = [c for c, _ in sc.arrivals.commodity_mix]
        nc = len(commodities)
        det_keys: list[tuple] = []

        def det_key(key):
            if key not in det_keys:
                det_keys.append(key)
            return det_keys.index(key)

        servers = np.zeros(ns, dtype=np.int64)
        cap = np.full(ns, -1, dtype=np.int64)
        exit_buf = np.zeros(ns, dtype=np.int64)
        applies = np.full(ns, 2, dtype=np.int64)
        drop = np.zeros(ns, dtype=np.int64)
        has_sensor = np.zeros(ns, dtype=np.int64)
        svc_fam = np.zeros(ns, dtype=np.int64)
        svc_p = np.zeros((ns, 5))
        svc_stream = np.zeros(ns, dtype=np.int64)
        scr_stream = np.zeros(ns, dtype=np.int64)
        shed_tp = np.zeros((ns, 2, nc))
        shed_fp = np.zeros((ns, 2, nc))
        shed_det = np.full(ns, -1, dtype=np.int64)
        for s, nid in enumerate(shed_ids):
            spec = graph.nodes[nid].shed
            servers[s] = spec.servers
            if spec.queue_capacity is not None:
                cap[s] = spec.queue_capacity
            exit_buf[s] = spec.exit_buffers
            applies[s] = {"Soft": 0, "Hard": 1, "Both": 2}[spec.applies_to.value]
            drop[s] = spec.full_policy == "drop"
            svc_fam[s], svc_p[s] = _dist_code(spec.service_time)
            svc_stream[s] = self._stream(f"service:{nid}")
            if spec.sensor is not None:
                has_sensor[s] = 1
                scr_stream[s] = self._stream(f"screen:{nid}")
                cache = ProfileCache(sc.drm, sc.containment, spec.drm_scenario or sc.drm_scenario)
                for side in Side:
                    for c, com in enumerate(commodities):
                        prof = cache.get(spec.sensor, side, com)
                        shed_tp[s, side, c] = prof.tp_rate
                        shed_fp[s, side, c] = prof.fp_rate
                shed_det[s] = det_key((nid, spec.sensor))
        routing_stream = self._stream("routing")

        rmode = np.full((n, 4), _NONE, dtype=np.int64)
        rfixed = np.full((n, 4), -1, dtype=np.int64)
        rstart = np.zeros((n, 4), dtype=np.int64)
        rend = np.zeros((n, 4), dtype=np.int64)
        targets: list[int] = []
        cums: list[float] = []
        for nid in ids:
            node = graph.nodes[nid]
            if node.kind in (NodeKind.SINK, NodeKind.JUMP):
                continue
            i = index[nid]
            for side in Side:
                for flagged in (False, True):
                    c = side * 2 + flagged
                    edges = graph.matching_edges(nid, side, flagged)
                    if not edges:
                        continue
                    if node.kind is NodeKind.SHORTEST_QUEUE_ROUTER:
                        rmode[i, c] = _SHORTEST
                        weights = [1.0] * len(edges)
                    elif len(edges) == 1:
                        rmode[i, c] = _FIXED
                        rfixed[i, c] = index[edges[0].target]
                        continue
                    else:
                        rmode[i, c] = _PROB
                        weights = [1.0 if e.p is None else e.p for e in edges]
                    rstart[i, c] = len(targets)
                    targets.extend(index[e.target] for e in edges)
                    cums.extend(cumulative(weights))
                    rend[i, c] = len(targets)

        berth_node, recheck = -1, 0
        dwell_fam, dwell_p, dwell_stream = 0, np.zeros(5), 0
        squads = ()
        berth_nodes = graph.of_kind(NodeKind.BERTH)
        if berth_nodes:
            berth_nid = berth_nodes[0].id
            berth_node = index[berth_nid]
            recheck = int(sc.berth.mode is BerthMode.RECHECK)
            dwell_fam, dwell_p = _dist_code(sc.berth.dwell_time)
            dwell_stream = self._stream("dwell")
            squads = sc.berth.squads
        nsq = len(squads)
        sq_fam = np.zeros(nsq, dtype=np.int64)
        sq_p = np.zeros((nsq, 5))
        sq_stream = np.zeros(nsq, dtype=np.int64)
        sq_tp = np.zeros((nsq, 2, nc))
        sq_fp = np.zeros((nsq, 2, nc))
        sq_det = np.zeros((nsq, 2), dtype=np.int64)
        if nsq:
            cache = ProfileCache(sc.drm, sc.containment, sc.drm_scenario)
            for q, squad in enumerate(squads):
                sq_fam[q], sq_p[q] = _dist_code(squad.check_interval)
                sq_stream[q] = self._stream(f"squad:{q}")
                for side in Side:
                    sensor = squad.soft_sensor if side is Side.SOFT else squad.hard_action
                    sq_det[q, side] = det_key((berth_nid, sensor))
                    for c, com in enumerate(commodities):
                        prof = cache.get(sensor, side, com)
                        sq_tp[q, side, c] = prof.tp_rate
                        sq_fp[q, side, c] = prof.fp_rate

        arrivals = sc.arrivals
        cargo_stream = self._stream("cargo")
        sources = graph.of_kind(NodeKind.SOURCE)
        total_share = sum(s.share for s in sources)
        src_node, src_base, src_peak, src_flat, src_stream = [], [], [], [], []
        for s in sources:
            spec = type(arrivals)(
                base_rate=arrivals.base_rate * (s.share / total_share),
                profile=arrivals.profile,
                clandestine_probability=arrivals.clandestine_probability,
                soft_fraction=arrivals.soft_fraction,
                commodity_mix=arrivals.commodity_mix,
            )
            src_node.append(index[s.id])
            src_base.append(spec.base_rate)
            src_peak.append(spec.peak_rate)
            src_flat.append(int(spec.flat))
            src_stream.append(self._stream(f"arrivals:{s.id}"))

        self._det_keys = det_keys
        self._commodities = commodities
        load = sc.load_modifier
        return dict(
            kind=kind, jump=jump, shed_of=shed_of, rmode=rmode, rfixed=rfixed,
            rstart=rstart, rend=rend,
            rtarget=np.array(targets or [0], dtype=np.int64),
            rcum=np.array(cums or [1.0]),
            node_of_shed=np.array([index[nid] for nid in shed_ids], dtype=np.int64),
            servers=servers, cap=cap, exit_buf=exit_buf, applies=applies, drop=drop,
            has_sensor=has_sensor, svc_fam=svc_fam, svc_p=svc_p, svc_stream=svc_stream,
            scr_stream=scr_stream, shed_tp=shed_tp, shed_fp=shed_fp, shed_det=shed_det,
            load_alpha=float(load.alpha), load_q0=int(load.q0), load_floor=float(load.floor),
            src_node=np.array(src_node, dtype=np.int64), src_base=np.array(src_base),
            src_peak=np.array(src_peak), src_flat=np.array(src_flat, dtype=np.int64),
            src_stream=np.array(src_stream, dtype=np.int64),
            profile=np.array(arrivals.profile, dtype=float),
            cland_p=float(arrivals.clandestine_probability),
            soft_frac=float(arrivals.soft_fraction),
            com_cum=np.array(cumulative(w for _, w in arrivals.commodity_mix)),
            cargo_stream=cargo_stream, routing_stream=routing_stream,
            berth_node=berth_node, berth_recheck=recheck, dwell_fam=int(dwell_fam),
            dwell_p=dwell_p, dwell_stream=dwell_stream,
            sq_fam=sq_fam, sq_p=sq_p, sq_stream=sq_stream, sq_tp=sq_tp, sq_fp=sq_fp,
            sq_det=sq_det,
            sample_interval=float(self.sample_interval or 0.0),
            total_servers=int(servers.sum()),
        )

    def _initial_state(self):
        m = self._values
        ns = len(self._shed_ids)
        nst = len(self._names)
        n_src = len(m["src_node"])
        lorries = 4096
        i8 = np.int64
        smax = max(int(m["servers"].max()) if ns else 1, 1)
        bmax = max(int(m["exit_buf"].max()) if ns else 1, 1)
        arrays = dict(
            iv=np.zeros(N_IV, dtype=i8), fv=np.zeros(N_FV),
            ubuf=np.zeros((nst, _STREAM_LEN)), upos=np.zeros(nst, dtype=i8),
            ufill=np.zeros(nst, dtype=i8),
            h_t=np.zeros(1024), h_i=np.zeros((1024, 4), dtype=i8),
            l_side=np.zeros(lorries, dtype=i8), l_com=np.zeros(lorries, dtype=i8),
            l_cland=np.zeros(lorries, dtype=i8), l_carried=np.zeros(lorries, dtype=i8),
            l_flag=np.zeros(lorries, dtype=i8), l_det=np.full(lorries, -1, dtype=i8),
            l_tok=np.full(lorries, -1, dtype=i8), l_ppos=np.full(lorries, -1, dtype=i8),
            l_epos=np.full(lorries, -1, dtype=i8), l_created=np.zeros(lorries),
            free=np.arange(lorries - 1, -1, -1, dtype=i8),
            q=np.zeros((ns, 256), dtype=i8), q_head=np.zeros(ns, dtype=i8),
            q_len=np.zeros(ns, dtype=i8),
            buf=np.zeros((ns, bmax), dtype=i8), buf_n=np.zeros(ns, dtype=i8),
            fin=np.zeros((ns, smax), dtype=i8), fin_n=np.zeros(ns, dtype=i8),
            w_hold=np.zeros((ns, 64), dtype=i8), w_lorry=np.zeros((ns, 64), dtype=i8),
            w_head=np.zeros(ns, dtype=i8), w_len=np.zeros(ns, dtype=i8),
            busy=np.zeros(ns, dtype=i8), served=np.zeros(ns, dtype=i8),
            balked=np.zeros(ns, dtype=i8), maxq=np.zeros(ns, dtype=i8),
            area=np.zeros(ns), last=np.zeros(ns),
            work=np.zeros(lorries, dtype=i8),
            parked=np.zeros(1024, dtype=i8), elig=np.zeros(1024, dtype=i8),
            det_counts=np.zeros(max(len(self._det_keys), 1), dtype=i8),
            s_t=np.zeros(64), s_det=np.zeros(64, dtype=i8), s_miss=np.zeros(64, dtype=i8),
            s_q=np.zeros((64, ns), dtype=i8),
            pend=np.zeros(n_src, dtype=i8), pend_base=np.zeros(n_src), pend_t=np.zeros(n_src),
        )
        arrays["iv"][FREE_N] = lorries
        # these are never reallocated, so the Python side can keep using them
        self._iv, self._fv = arrays["iv"], arrays["fv"]
        self._ubuf, self._upos, self._ufill = arrays["ubuf"], arrays["upos"], arrays["ufill"]
        self._refill()
        return State(*(arrays[name] for name in STATE_FIELDS))

    # -- buffer management --------------------------------------------------

    def _refill(self):
        ubuf, upos, ufill = self._ubuf, self._upos, self._ufill
        for st, gen in enumerate(self._generators):
            pos, fill = upos[st], ufill[st]
            if fill - pos >= _STREAM_LEN // 2:
                continue
            rest = fill - pos
            ubuf[st, :rest] = ubuf[st, pos:fill]
            while rest + _BLOCK <= _STREAM_LEN:
                ubuf[st, rest:rest + _BLOCK] = gen.random(_BLOCK)
                rest += _BLOCK
            upos[st], ufill[st] = 0, rest

    # -- running ------------------------------------------------------------

    def run_until(self, t_end: float) -> RunCounters:
        while _run(self.M, self.S, float(t_end)) == REFILL:
            self._refill()
        return self._counters(t_end)

    def _counters(self, t_end) -> RunCounters:
        iv = self._iv
        (det_counts, s_t, s_det, s_miss, s_q, q_len, busy, buf_n,
         served, area, last) = _snapshot(self.S)
        c = RunCounters(replication=self.replication)
        c.horizon = t_end
        c.arrivals = int(iv[ARRIVALS])
        c.clandestine_arrivals = int(iv[CLAND_ARR])
        c.detected = {key: int(n) for key, n in zip(self._det_keys, det_counts) if n}
        c.missed = int(iv[MISSED])
        c.false_positives = int(iv[FPOS])
        c.true_positives = int(iv[TPOS])
        c.screenings = int(iv[SCREENINGS])
        c.berth_checks = int(iv[BERTH_CHECKS])
        c.squad_ticks = int(iv[TICKS])
        c.balked = int(iv[BALKED])
        c.exits = int(iv[EXITS])
        c.in_flight_at_end = int(iv[IN_SYS])
        c.clandestine_in_flight = int(iv[CLAND_IN_SYS])
        c.blocked_at_end = int(iv[BLOCKED])
        c.parked_at_end = int(iv[PARKED_N])
        c.time_in_system = float(self._fv[TIS])
        c.events = int(iv[EVENTS])
        n = int(iv[SAMPLE_N])
        c.sample_times = s_t[:n].tolist()
        c.sample_detected = s_det[:n].tolist()
        c.sample_missed = s_miss[:n].tolist()
        if n:
            c.queue_samples = {nid: s_q[:n, s].tolist() for s, nid in enumerate(self._shed_ids)}
        mean = {}
        for s, nid in enumerate(self._shed_ids):
            # same accumulation as ShedState.mean_content
            content = int(q_len[s] + busy[s] + buf_n[s])
            area[s] += content * (t_end - float(last[s]))
            last[s] = t_end
            mean[nid] = float(area[s]) / t_end if t_end > 0 else 0.0
        c.mean_in_system = mean
        c.served = {nid: int(served[s]) for s, nid in enumerate(self._shed_ids)}
        if not c.conserved():
            raise AssertionError("conservation violated")
        return c

