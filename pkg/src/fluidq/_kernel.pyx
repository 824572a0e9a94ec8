# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled simulation kernel.

Random stream: xoshiro256** seeded through splitmix64.  The pure-Python
twin in _kernel_py.py implements the same generator and must produce
bit-identical streams; tests compare the two draw for draw.
"""

from libc.math cimport exp, log, pow

import numpy as np

cimport numpy as cnp

cnp.import_array()

KERNEL = "cython"

ctypedef unsigned long long u64


cdef inline u64 _rotl(u64 x, int k) nogil:
    return (x << k) | (x >> (64 - k))


cdef inline u64 _splitmix_next(u64 *state) nogil:
    cdef u64 z
    state[0] += <u64>0x9E3779B97F4A7C15
    z = state[0]
    z = (z ^ (z >> 30)) * <u64>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <u64>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef class Rng:
    """xoshiro256** stream; deterministic function of the 64-bit seed."""

    cdef u64 s0, s1, s2, s3

    def __init__(self, seed):
        cdef u64 sm = <u64>(seed & 0xFFFFFFFFFFFFFFFF)
        self.s0 = _splitmix_next(&sm)
        self.s1 = _splitmix_next(&sm)
        self.s2 = _splitmix_next(&sm)
        self.s3 = _splitmix_next(&sm)

    cdef u64 _next(self) nogil:
        cdef u64 result = _rotl(self.s1 * 5, 7) * 9
        cdef u64 t = self.s1 << 17
        self.s2 ^= self.s0
        self.s3 ^= self.s1
        self.s1 ^= self.s2
        self.s0 ^= self.s3
        self.s2 ^= t
        self.s3 = _rotl(self.s3, 45)
        return result

    cdef double _uniform(self) nogil:
        # 53-bit mantissa, in [0, 1)
        return (self._next() >> 11) * (1.0 / 9007199254740992.0)

    cdef double _exponential(self, double rate) nogil:
        return -log(1.0 - self._uniform()) / rate

    def next_u64(self):
        return self._next()

    def uniform(self):
        return self._uniform()

    def exponential(self, double rate):
        return self._exponential(rate)

    def draw_u64(self, Py_ssize_t n):
        cdef cnp.ndarray[cnp.uint64_t, ndim=1] out = np.empty(n, dtype=np.uint64)
        cdef Py_ssize_t i
        for i in range(n):
            out[i] = self._next()
        return out

    def draw_uniform(self, Py_ssize_t n):
        cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
        cdef Py_ssize_t i
        for i in range(n):
            out[i] = self._uniform()
        return out


cdef double _ga_eval(int code, double[::1] pa, double[::1] pb, double x) nogil:
    cdef Py_ssize_t i, k
    cdef double tail, term, acc, rx
    if code == 0:
        i = pa.shape[0] - 1
        while pa[i] > x:
            i -= 1
        return pb[i]
    if code == 1:
        tail = 0.0
        for i in range(pa.shape[0]):
            tail += pa[i] * exp(-pb[i] * x)
        return 1.0 - tail
    if code == 2:
        if x <= 0.0:
            return 0.0
        return 1.0 - exp(-pow(pa[0] * x, pa[1]))
    k = <Py_ssize_t>pa[0]
    rx = pa[1] * x
    term = 1.0
    acc = 1.0
    for i in range(1, k):
        term *= rx / i
        acc += term
    return 1.0 - exp(-rx) * acc


def ga_eval(int code, double[::1] pa, double[::1] pb, double x):
    """Abandonment probability at offered wait x for an encoded law.

    code 0: step function, breakpoints pa / values pb (right continuous)
    code 1: exponential mixture tail, weights pa / rates pb (a weight
            deficit is an atom at zero, i.e. immediate balking)
    code 2: Weibull with rate pa[0], shape pa[1]
    code 3: Erlang with pa[0] stages of rate pa[1]
    """
    return _ga_eval(code, pa, pb, x)


def sim_wait_batches(double[:, ::1] cumw, int m, int s, double mu,
                     int code, double[::1] pa, double[::1] pb,
                     long warm, long per_batch, int batches,
                     double x1, double x2, object seed):
    """Virtual-wait process tallies, one row per batch of arrivals.

    cumw holds per phase the cumulative event rates: first the m hidden
    transitions (zero on the diagonal slot), then the m arrival
    transitions, so cumw[j, 2m-1] is the total event rate of phase j.
    Columns of the result: arrivals, zero-wait, abandoned, served after
    a positive wait, summed waits, summed squared waits, and served
    positive waits not exceeding x1 resp. x2.
    """
    cdef Rng rng = Rng(seed)
    out_arr = np.zeros((batches, 8))
    cdef double[:, ::1] out = out_arr
    cdef long total = warm + per_batch * batches
    cdef double smu = s * mu
    cdef int phase = 0, busy = 0, e
    cdef double v = 0.0, dt, u, tot, map_rate
    cdef long done = 0, k
    cdef bint served
    with nogil:
        while done < total:
            map_rate = cumw[phase, 2 * m - 1]
            if busy < s:
                tot = map_rate + busy * mu
                u = rng._uniform() * tot
                if u < busy * mu:
                    busy -= 1
                    continue
                u -= busy * mu
                e = 0
                while e < 2 * m - 1 and cumw[phase, e] <= u:
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
                    v = rng._exponential(smu)
            else:
                dt = rng._exponential(map_rate)
                if dt >= v:
                    v = 0.0
                    busy = s - 1
                    continue
                v -= dt
                u = rng._uniform() * map_rate
                e = 0
                while e < 2 * m - 1 and cumw[phase, e] <= u:
                    e += 1
                if e < m:
                    phase = e
                    continue
                phase = e - m
                served = rng._uniform() >= _ga_eval(code, pa, pb, v)
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
                    v += rng._exponential(smu)
    return out_arr


def sim_passage(double[:, ::1] cumw, int m, int s, double mu,
                int code, double[::1] pa, double[::1] pb, bint kind_actual,
                double a, double b, double tau,
                double[::1] theta0_cum, double[::1] pi0_cum,
                long reps, object seed):
    """Count races won against a deterministic deadline tau.

    Virtual kind: the wait level must reach b (upward via workload
    jumps, downward by draining) before the deadline.  Actual kind: a
    joining arrival must face a wait of at least b before the deadline.
    """
    cdef Rng rng = Rng(seed)
    cdef double smu = s * mu
    cdef double floor = b if (not kind_actual and b < a) else 0.0
    cdef long hits = 0, rep
    cdef int phase, busy, e
    cdef double v, t, dt, u, tot, map_rate, t_floor
    with nogil:
        for rep in range(reps):
            u = rng._uniform()
            phase = 0
            while phase < m - 1 and theta0_cum[phase] <= u:
                phase += 1
            if a > 0.0:
                busy = s
                v = a
            else:
                u = rng._uniform()
                busy = 0
                while busy < s - 1 and pi0_cum[busy] <= u:
                    busy += 1
                v = 0.0
            t = 0.0
            while True:
                map_rate = cumw[phase, 2 * m - 1]
                if busy < s:
                    tot = map_rate + busy * mu
                    dt = rng._exponential(tot)
                    if t + dt >= tau:
                        break
                    t += dt
                    u = rng._uniform() * tot
                    if u < busy * mu:
                        busy -= 1
                        continue
                    u -= busy * mu
                    e = 0
                    while e < 2 * m - 1 and cumw[phase, e] <= u:
                        e += 1
                    if e < m:
                        phase = e
                        continue
                    phase = e - m
                    busy += 1
                    if busy == s:
                        v = rng._exponential(smu)
                        if not kind_actual and floor == 0.0 and v >= b:
                            hits += 1
                            break
                else:
                    dt = rng._exponential(map_rate)
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
                    u = rng._uniform() * map_rate
                    e = 0
                    while e < 2 * m - 1 and cumw[phase, e] <= u:
                        e += 1
                    if e < m:
                        phase = e
                        continue
                    phase = e - m
                    if kind_actual and v >= b:
                        if rng._uniform() >= _ga_eval(code, pa, pb, v):
                            hits += 1
                            break
                        continue
                    if rng._uniform() < _ga_eval(code, pa, pb, v):
                        continue
                    v += rng._exponential(smu)
                    if not kind_actual and floor == 0.0 and v >= b:
                        hits += 1
                        break
    return hits
