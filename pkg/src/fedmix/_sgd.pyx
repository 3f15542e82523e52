# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled weighted minibatch SGD kernel.

Same contract as ``fedmix._sgd_py.sgd_steps``; results agree with the NumPy
version up to floating-point summation order.
"""
from libc.math cimport exp
from libc.stdlib cimport malloc, free
from libc.stdint cimport int64_t


cdef inline double _dot(const double *a, const double *b, Py_ssize_t n) noexcept nogil:
    # four independent accumulators so the reduction is not latency-bound
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t k = 0
    while k + 4 <= n:
        s0 += a[k] * b[k]
        s1 += a[k + 1] * b[k + 1]
        s2 += a[k + 2] * b[k + 2]
        s3 += a[k + 3] * b[k + 3]
        k += 4
    while k < n:
        s0 += a[k] * b[k]
        k += 1
    return (s0 + s1) + (s2 + s3)


cdef inline void _axpy(double r, const double *x, double *out, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        out[k] += r * x[k]


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


def sgd_steps(double[:, ::1] thetas, const double[:, ::1] X, const double[::1] y,
              const double[:, ::1] q, const int64_t[:, ::1] batches, double step,
              int loss_code, int num_classes):
    cdef Py_ssize_t M = thetas.shape[0]
    cdef Py_ssize_t P = thetas.shape[1]
    cdef Py_ssize_t d = X.shape[1]
    cdef Py_ssize_t J = batches.shape[0]
    cdef Py_ssize_t B = batches.shape[1]
    cdef Py_ssize_t C = num_classes if loss_code == 2 else 1
    cdef Py_ssize_t j, b, i, m, k, c, label
    cdef double w, s, r, mx, tot, scale
    cdef double *grad
    cdef double *buf

    if B == 0 or J == 0:
        return thetas
    scale = step / B
    grad = <double *> malloc(M * P * sizeof(double))
    buf = <double *> malloc(C * sizeof(double))
    if grad == NULL or buf == NULL:
        free(grad)
        free(buf)
        raise MemoryError()
    try:
        with nogil:
            for j in range(J):
                for k in range(M * P):
                    grad[k] = 0.0
                for b in range(B):
                    i = batches[j, b]
                    for m in range(M):
                        w = q[i, m]
                        if w == 0.0:
                            continue
                        if loss_code == 2:
                            label = <Py_ssize_t> y[i]
                            mx = -1e308
                            for c in range(C):
                                s = _dot(&thetas[m, c * d], &X[i, 0], d)
                                buf[c] = s
                                if s > mx:
                                    mx = s
                            tot = 0.0
                            for c in range(C):
                                buf[c] = exp(buf[c] - mx)
                                tot = tot + buf[c]
                            for c in range(C):
                                r = buf[c] / tot
                                if c == label:
                                    r = r - 1.0
                                _axpy(r * w, &X[i, 0], &grad[m * P + c * d], d)
                        else:
                            s = _dot(&thetas[m, 0], &X[i, 0], d)
                            if loss_code == 1:
                                r = (_sigmoid(s) - y[i]) * w
                            else:
                                r = (s - y[i]) * w
                            _axpy(r, &X[i, 0], &grad[m * P], d)
                for m in range(M):
                    for k in range(P):
                        thetas[m, k] -= scale * grad[m * P + k]
    finally:
        free(grad)
        free(buf)
    return thetas
