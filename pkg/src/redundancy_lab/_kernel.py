"""JIT-compiled next-event simulation of the central queue.

Departures are drawn by picking a busy server with probability proportional
to its speed and completing the earliest job compatible with it; this is the
same as giving each job the summed speed of the servers whose first
compatible job it is.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _state_index(qtype, length, n_types, offsets):
    idx = 0
    base = 1
    for i in range(length):
        idx += qtype[i] * base
        base *= n_types
    return offsets[length] + idx


@njit(cache=True, nogil=True)
def simulate(masks, speeds, cum_probs, arrival_rate, horizon, warmup, rng,
             hist_cap, state_depth, state_offsets, laplace_s, record_stride, record_cap):
    n_types = masks.shape[0]
    n_servers = speeds.shape[0]
    n_z = laplace_s.shape[1]

    type_hist = np.zeros((n_types, hist_cap + 1))
    server_hist = np.zeros((n_servers, hist_cap + 1))
    total_hist = np.zeros(hist_cap + 1)
    type_area = np.zeros(n_types)
    if state_depth > 0:
        state_time = np.zeros(state_offsets[state_depth + 1])
    else:
        state_time = np.zeros(1)

    done = np.zeros(n_types, dtype=np.int64)
    sum_v = np.zeros(n_types)
    sum_v2 = np.zeros(n_types)
    sum_w = np.zeros(n_types)
    sum_w2 = np.zeros(n_types)
    lap_v = np.zeros((n_types, n_z))

    rec_type = np.zeros(record_cap, dtype=np.int64)
    rec_arr = np.zeros(record_cap)
    rec_start = np.zeros(record_cap)
    rec_done = np.zeros(record_cap)
    n_rec = 0
    eligible = 0

    cap = 1024
    qtype = np.zeros(cap, dtype=np.int64)
    qarr = np.zeros(cap)
    qstart = np.zeros(cap)
    length = 0

    counts = np.zeros(n_types, dtype=np.int64)
    replicas = np.zeros(n_servers, dtype=np.int64)

    now = 0.0
    events = 0
    max_len = 0
    while True:
        busy_rate = 0.0
        for n in range(n_servers):
            if replicas[n] > 0:
                busy_rate += speeds[n]
        total_rate = arrival_rate + busy_rate
        dt = -np.log(1.0 - rng.random()) / total_rate
        t_next = now + dt

        lo = max(now, warmup)
        hi = min(t_next, horizon)
        if hi > lo:
            w = hi - lo
            for k in range(n_types):
                c = counts[k]
                type_hist[k, c if c < hist_cap else hist_cap] += w
                type_area[k] += w * c
            for n in range(n_servers):
                r = replicas[n]
                server_hist[n, r if r < hist_cap else hist_cap] += w
            total_hist[length if length < hist_cap else hist_cap] += w
            if length <= state_depth:
                state_time[_state_index(qtype, length, n_types, state_offsets)] += w
        if t_next >= horizon:
            break
        now = t_next
        events += 1

        u = rng.random() * total_rate
        if u < arrival_rate:
            # arrival
            v = u / arrival_rate
            k = 0
            while k < n_types - 1 and v >= cum_probs[k]:
                k += 1
            if length == cap:
                new_cap = 2 * cap
                nt = np.zeros(new_cap, dtype=np.int64)
                na = np.zeros(new_cap)
                ns = np.zeros(new_cap)
                nt[:cap] = qtype
                na[:cap] = qarr
                ns[:cap] = qstart
                qtype, qarr, qstart = nt, na, ns
                cap = new_cap
            m = masks[k]
            idle_hit = False
            for n in range(n_servers):
                if (m >> n) & 1:
                    if replicas[n] == 0:
                        idle_hit = True
                    replicas[n] += 1
            qtype[length] = k
            qarr[length] = now
            qstart[length] = now if idle_hit else -1.0
            length += 1
            counts[k] += 1
            if length > max_len:
                max_len = length
        else:
            # departure: pick a busy server proportionally to its speed
            v = u - arrival_rate
            server = -1
            acc = 0.0
            for n in range(n_servers):
                if replicas[n] > 0 and speeds[n] > 0.0:
                    acc += speeds[n]
                    server = n
                    if v < acc:
                        break
            bit = np.int64(1) << server
            covered = np.int64(0)
            pos = 0
            while (masks[qtype[pos]] & bit) == 0:
                covered |= masks[qtype[pos]]
                pos += 1
            k = qtype[pos]
            m = masks[k]
            freed = m & ~covered
            a = qarr[pos]
            s = qstart[pos]
            if a >= warmup:
                sojourn = now - a
                wait = s - a
                done[k] += 1
                sum_v[k] += sojourn
                sum_v2[k] += sojourn * sojourn
                sum_w[k] += wait
                sum_w2[k] += wait * wait
                for j in range(n_z):
                    lap_v[k, j] += np.exp(-laplace_s[k, j] * sojourn)
                if eligible % record_stride == 0 and n_rec < record_cap:
                    rec_type[n_rec] = k
                    rec_arr[n_rec] = a
                    rec_start[n_rec] = s
                    rec_done[n_rec] = now
                    n_rec += 1
                eligible += 1
            for i in range(pos, length - 1):
                qtype[i] = qtype[i + 1]
                qarr[i] = qarr[i + 1]
                qstart[i] = qstart[i + 1]
            length -= 1
            counts[k] -= 1
            for n in range(n_servers):
                if (m >> n) & 1:
                    replicas[n] -= 1
            # servers released by the departure move to their next compatible job
            i = pos
            while freed != 0 and i < length:
                mi = masks[qtype[i]]
                if mi & freed:
                    if qstart[i] < 0.0:
                        qstart[i] = now
                    freed &= ~mi
                i += 1

    observed = horizon - warmup
    return (type_hist, server_hist, total_hist, type_area, state_time,
            done, sum_v, sum_v2, sum_w, sum_w2, lap_v,
            rec_type[:n_rec].copy(), rec_arr[:n_rec].copy(), rec_start[:n_rec].copy(),
            rec_done[:n_rec].copy(), events, observed, max_len)
