"""Pure-Python twin of the compiled simulation kernel.

Used when the Cython extension is unavailable.  Every draw must match
the compiled kernel bit for bit, so both sides implement the same
xoshiro256** generator seeded through splitmix64.
"""

import math

import numpy as np

KERNEL = "python"

_MASK = 0xFFFFFFFFFFFFFFFF


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & _MASK


class Rng:
    """xoshiro256** stream; deterministic function of the 64-bit seed."""

    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, seed):
        sm = seed & _MASK
        state = []
        for _ in range(4):
            sm = (sm + 0x9E3779B97F4A7C15) & _MASK
            z = sm
            z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
            z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
            state.append(z ^ (z >> 31))
        self.s0, self.s1, self.s2, self.s3 = state

    def next_u64(self):
        result = (_rotl((self.s1 * 5) & _MASK, 7) * 9) & _MASK
        t = (self.s1 << 17) & _MASK
        self.s2 ^= self.s0
        self.s3 ^= self.s1
        self.s1 ^= self.s2
        self.s0 ^= self.s3
        self.s2 ^= t
        self.s3 = _rotl(self.s3, 45)
        return result

    def uniform(self):
        # 53-bit mantissa, in [0, 1)
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def exponential(self, rate):
        return -math.log(1.0 - self.uniform()) / rate

    def draw_u64(self, n):
        return np.array([self.next_u64() for _ in range(n)], dtype=np.uint64)

    def draw_uniform(self, n):
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)


def ga_eval(code, pa, pb, x):
    """Abandonment probability at offered wait x for an encoded law.

    code 0: step function, breakpoints pa / values pb (right continuous)
    code 1: exponential mixture tail, weights pa / rates pb (a weight
            deficit is an atom at zero, i.e. immediate balking)
    code 2: Weibull with rate pa[0], shape pa[1]
    code 3: Erlang with pa[0] stages of rate pa[1]
    """
    if code == 0:
        i = len(pa) - 1
        while pa[i] > x:
            i -= 1
        return pb[i]
    if code == 1:
        tail = 0.0
        for i in range(len(pa)):
            tail += pa[i] * math.exp(-pb[i] * x)
        return 1.0 - tail
    if code == 2:
        if x <= 0.0:
            return 0.0
        return 1.0 - math.exp(-((pa[0] * x) ** pa[1]))
    k = int(pa[0])
    rx = pa[1] * x
    term = 1.0
    acc = 1.0
    for i in range(1, k):
        term *= rx / i
        acc += term
    return 1.0 - math.exp(-rx) * acc


def sim_wait_batches(cumw, m, s, mu, code, pa, pb,
                     warm, per_batch, batches, x1, x2, seed):
    """Virtual-wait process tallies, one row per batch of arrivals.

    cumw holds per phase the cumulative event rates: first the m hidden
    transitions (zero on the diagonal slot), then the m arrival
    transitions, so cumw[j, 2m-1] is the total event rate of phase j.
    Columns of the result: arrivals, zero-wait, abandoned, served after
    a positive wait, summed waits, summed squared waits, and served
    positive waits not exceeding x1 resp. x2.
    """
    rng = Rng(seed)
    out = np.zeros((batches, 8))
    total = warm + per_batch * batches
    smu = s * mu
    phase = 0
    busy = 0
    v = 0.0
    done = 0
    while done < total:
        row = cumw[phase]
        map_rate = row[2 * m - 1]
        if busy < s:
            tot = map_rate + busy * mu
            u = rng.uniform() * tot
            if u < busy * mu:
                busy -= 1
                continue
            u -= busy * mu
            e = 0
            while e < 2 * m - 1 and row[e] <= u:
                e += 1
            if e < m:
                phase = e
                continue
            phase = e - m
            # arrival finding a free server: zero wait, always served
            if done >= warm:
                k = (done - warm) // per_batch
                out[k, 0] += 1.0
                out[k, 1] += 1.0
            done += 1
            busy += 1
            if busy == s:
                v = rng.exponential(smu)
        else:
            dt = rng.exponential(map_rate)
            if dt >= v:
                v = 0.0
                busy = s - 1
                continue
            v -= dt
            u = rng.uniform() * map_rate
            e = 0
            while e < 2 * m - 1 and row[e] <= u:
                e += 1
            if e < m:
                phase = e
                continue
            phase = e - m
            served = rng.uniform() >= ga_eval(code, pa, pb, v)
            if done >= warm:
                k = (done - warm) // per_batch
                out[k, 0] += 1.0
                if served:
                    out[k, 3] += 1.0
                    out[k, 4] += v
                    out[k, 5] += v * v
                    if v <= x1:
                        out[k, 6] += 1.0
                    if v <= x2:
                        out[k, 7] += 1.0
                else:
                    out[k, 2] += 1.0
            done += 1
            if served:
                v += rng.exponential(smu)
    return out


def sim_passage(cumw, m, s, mu, code, pa, pb, kind_actual,
                a, b, tau, theta0_cum, pi0_cum, reps, seed):
    """Count races won against a deterministic deadline tau.

    Virtual kind: the wait level must reach b (upward via workload
    jumps, downward by draining) before the deadline.  Actual kind: a
    joining arrival must face a wait of at least b before the deadline.
    """
    rng = Rng(seed)
    smu = s * mu
    floor = b if (not kind_actual and b < a) else 0.0
    hits = 0
    for _ in range(reps):
        u = rng.uniform()
        phase = 0
        while phase < m - 1 and theta0_cum[phase] <= u:
            phase += 1
        if a > 0.0:
            busy = s
            v = a
        else:
            u = rng.uniform()
            busy = 0
            while busy < s - 1 and pi0_cum[busy] <= u:
                busy += 1
            v = 0.0
        t = 0.0
        while True:
            row = cumw[phase]
            map_rate = row[2 * m - 1]
            if busy < s:
                tot = map_rate + busy * mu
                dt = rng.exponential(tot)
                if t + dt >= tau:
                    break
                t += dt
                u = rng.uniform() * tot
                if u < busy * mu:
                    busy -= 1
                    continue
                u -= busy * mu
                e = 0
                while e < 2 * m - 1 and row[e] <= u:
                    e += 1
                if e < m:
                    phase = e
                    continue
                phase = e - m
                busy += 1
                if busy == s:
                    v = rng.exponential(smu)
                    if not kind_actual and floor == 0.0 and v >= b:
                        hits += 1
                        break
            else:
                dt = rng.exponential(map_rate)
                t_floor = t + (v - floor)
                if floor > 0.0 and t_floor <= t + dt and t_floor <= tau:
                    hits += 1  # drained down into the target level
                    break
                if tau <= t + dt and tau <= t_floor:
                    break
                if t_floor <= t + dt:
                    t = t_floor
                    v = 0.0
                    busy = s - 1
                    continue
                t += dt
                v -= dt
                u = rng.uniform() * map_rate
                e = 0
                while e < 2 * m - 1 and row[e] <= u:
                    e += 1
                if e < m:
                    phase = e
                    continue
                phase = e - m
                if kind_actual and v >= b:
                    if rng.uniform() >= ga_eval(code, pa, pb, v):
                        hits += 1
                        break
                    continue
                if rng.uniform() < ga_eval(code, pa, pb, v):
                    continue
                v += rng.exponential(smu)
                if not kind_actual and floor == 0.0 and v >= b:
                    hits += 1
                    break
    return hits
