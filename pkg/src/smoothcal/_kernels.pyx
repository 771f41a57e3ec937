# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: forward pass, fused loss/gradient, and a fused
multi-epoch training loop for the common full-batch case.

Matrix products are dispatched straight to BLAS; the surrounding glue
(softmax, ReLU masks, loss, optimizer updates) is fused C from
_kernels_impl.h. The arithmetic mirrors the numpy fallback
(`smoothcal._kernels_py`) and the generic loop in `smoothcal.nn`; results
agree to floating-point round-off. Everything is single-threaded;
concurrency happens at the process level, so the GIL is simply held.
"""

from libc.math cimport isfinite
from libc.string cimport memcpy, memset

import numpy as np

cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

NAME = "compiled"

cdef double PROB_FLOOR = 1e-12

cdef extern from "_kernels_impl.h":
    void sc_fill_rows(Py_ssize_t n, Py_ssize_t p, const double *b, double *out)
    void sc_relu_inplace(Py_ssize_t size, double *z)
    void sc_relu_mask(Py_ssize_t size, const double *act, double *delta)
    void sc_softmax_rows(Py_ssize_t n, Py_ssize_t k, const double *logits,
                         double inv_t, double *out)
    double sc_soft_ce(Py_ssize_t n, Py_ssize_t k, const double *probs,
                      const double *y, double floor_p)
    void sc_output_delta(Py_ssize_t size, const double *probs, const double *y,
                         double scale, double *delta)
    void sc_colsum(Py_ssize_t n, Py_ssize_t cols, const double *delta, double *gb)
    void sc_add_scaled(Py_ssize_t size, double coeff, const double *src,
                       double *dst)
    double sc_sum_squares(Py_ssize_t size, const double *w)
    void sc_adam_step(Py_ssize_t size, double *p, const double *g, double *m,
                      double *v, double lr, double b1, double b2, double eps,
                      double c1, double c2)
    void sc_sgdm_step(Py_ssize_t size, double *p, const double *g, double *vel,
                      double lr, double momentum)


cdef inline double* _ptr(cnp.ndarray a):
    return <double*> cnp.PyArray_DATA(a)


cdef cnp.ndarray _as_c(object a):
    return np.ascontiguousarray(a, dtype=np.float64)


# Row-major wrappers around Fortran dgemm (everything below is row-major;
# BLAS sees the transposed problem).

cdef void _matmul(Py_ssize_t n, Py_ssize_t m, Py_ssize_t p,
                  const double *a, const double *w, double beta, double *out):
    """out = a(n x m) @ w(m x p) [+ out when beta is 1]."""
    cdef int mm = <int> p, nn = <int> n, kk = <int> m
    cdef int lda = <int> p, ldb = <int> m, ldc = <int> p
    cdef double alpha = 1.0
    dgemm("N", "N", &mm, &nn, &kk, &alpha, <double*> w, &lda,
          <double*> a, &ldb, &beta, out, &ldc)


cdef void _matmul_at_b(Py_ssize_t n, Py_ssize_t rows, Py_ssize_t cols,
                       const double *act, const double *delta, double *gw):
    """gw = act(n x rows)^T @ delta(n x cols)."""
    cdef int mm = <int> cols, nn = <int> rows, kk = <int> n
    cdef int lda = <int> cols, ldb = <int> rows, ldc = <int> cols
    cdef double alpha = 1.0, beta = 0.0
    dgemm("N", "T", &mm, &nn, &kk, &alpha, <double*> delta, &lda,
          <double*> act, &ldb, &beta, gw, &ldc)


cdef void _matmul_a_bt(Py_ssize_t n, Py_ssize_t rows, Py_ssize_t cols,
                       const double *delta, const double *w, double *out):
    """out = delta(n x cols) @ w(rows x cols)^T."""
    cdef int mm = <int> rows, nn = <int> n, kk = <int> cols
    cdef int lda = <int> cols, ldb = <int> cols, ldc = <int> rows
    cdef double alpha = 1.0, beta = 0.0
    dgemm("T", "N", &mm, &nn, &kk, &alpha, <double*> w, &lda,
          <double*> delta, &ldb, &beta, out, &ldc)


cdef void _affine(Py_ssize_t n, cnp.ndarray a, cnp.ndarray w,
                  cnp.ndarray b, cnp.ndarray out):
    sc_fill_rows(n, w.shape[1], _ptr(b), _ptr(out))
    _matmul(n, w.shape[0], w.shape[1], _ptr(a), _ptr(w), 1.0, _ptr(out))


cdef cnp.ndarray _forward_into(list weights, list biases, cnp.ndarray x,
                               list scratch, double inv_t, cnp.ndarray probs):
    """Forward pass writing each layer's activation into ``scratch``."""
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t li
    cdef cnp.ndarray a = x, w, b, act
    for li in range(n_layers):
        w = weights[li]
        b = biases[li]
        act = scratch[li]
        _affine(n, a, w, b, act)
        if li < n_layers - 1:
            sc_relu_inplace(n * act.shape[1], _ptr(act))
        a = act
    sc_softmax_rows(n, a.shape[1], _ptr(a), inv_t, _ptr(probs))
    return probs


def forward(list weights, list biases, x, double temperature=1.0):
    """Probabilities for every row of ``x``; hidden layers are ReLU."""
    cdef cnp.ndarray xc = _as_c(x)
    cdef Py_ssize_t n = xc.shape[0]
    cdef Py_ssize_t last = len(weights) - 1
    ws = [_as_c(w) for w in weights]
    bs = [_as_c(b) for b in biases]
    scratch = [np.empty((n, (<cnp.ndarray> w).shape[1])) for w in ws]
    cdef cnp.ndarray probs = np.empty((n, (<cnp.ndarray> ws[last]).shape[1]))
    _forward_into(ws, bs, xc, scratch, 1.0 / temperature, probs)
    return probs


def loss_and_grads(list weights, list biases, x, targets,
                   double temperature=1.0, double weight_decay=0.0):
    """Mean soft cross-entropy plus L2 penalty, with gradients per layer."""
    cdef cnp.ndarray x_arr = _as_c(x)
    cdef cnp.ndarray y_arr = _as_c(targets)
    ws = [_as_c(w) for w in weights]
    bs = [_as_c(b) for b in biases]
    cdef Py_ssize_t n_layers = len(ws)
    cdef Py_ssize_t n = x_arr.shape[0]
    cdef Py_ssize_t li, rows, cols
    cdef double inv_t = 1.0 / temperature

    scratch = [np.empty((n, (<cnp.ndarray> w).shape[1])) for w in ws]
    cdef Py_ssize_t k = (<cnp.ndarray> ws[n_layers - 1]).shape[1]
    cdef cnp.ndarray probs = np.empty((n, k))
    _forward_into(ws, bs, x_arr, scratch, inv_t, probs)

    cdef double loss = sc_soft_ce(n, k, _ptr(probs), _ptr(y_arr), PROB_FLOOR)
    cdef cnp.ndarray w
    if weight_decay != 0.0:
        for li in range(n_layers):
            w = ws[li]
            loss += 0.5 * weight_decay * sc_sum_squares(w.shape[0] * w.shape[1], _ptr(w))

    grads_w = [None] * n_layers
    grads_b = [None] * n_layers
    cdef cnp.ndarray delta = np.empty((n, k))
    sc_output_delta(n * k, _ptr(probs), _ptr(y_arr), inv_t / n, _ptr(delta))

    cdef cnp.ndarray act, gw, gb, new_delta
    for li in range(n_layers - 1, -1, -1):
        act = x_arr if li == 0 else scratch[li - 1]
        rows = act.shape[1]
        cols = delta.shape[1]
        gw = np.empty((rows, cols))
        gb = np.empty(cols)
        w = ws[li]
        _matmul_at_b(n, rows, cols, _ptr(act), _ptr(delta), _ptr(gw))
        sc_colsum(n, cols, _ptr(delta), _ptr(gb))
        if weight_decay != 0.0:
            sc_add_scaled(rows * cols, weight_decay, _ptr(w), _ptr(gw))
        grads_w[li] = gw
        grads_b[li] = gb
        if li > 0:
            new_delta = np.empty((n, rows))
            _matmul_a_bt(n, rows, cols, _ptr(delta), _ptr(w), _ptr(new_delta))
            sc_relu_mask(n * rows, _ptr(act), _ptr(new_delta))
            delta = new_delta

    return loss, grads_w, grads_b


def train_run(list weights, list biases, x_tr, y_tr, x_val, y_val,
              str optimizer, double lr, Py_ssize_t max_epochs,
              Py_ssize_t patience, double momentum, double weight_decay,
              double temperature, order=None, Py_ssize_t batch_size=0):
    """Fused training loop with early stopping.

    Full-batch when ``order`` is None; otherwise ``order`` is an
    (max_epochs, n) int64 matrix of per-epoch instance permutations and
    ``batch_size`` slices each epoch into mini-batch update steps, exactly
    like the generic loop in `smoothcal.nn`. Inputs are copied, never
    mutated. Returns (best_weights, best_biases, train_losses, val_losses,
    best_epoch, stopped_epoch, diverged_epoch, diverged_loss);
    diverged_epoch is -1 unless a non-finite loss appeared.
    """
    cdef cnp.ndarray xt = _as_c(x_tr), yt = _as_c(y_tr)
    cdef cnp.ndarray xv = _as_c(x_val), yv = _as_c(y_val)
    cdef Py_ssize_t n_layers = len(weights)
    cdef Py_ssize_t n = xt.shape[0], n_val = xv.shape[0]
    cdef cnp.ndarray order_arr = None
    cdef long long* order_p = NULL
    if order is not None:
        order_arr = np.ascontiguousarray(order, dtype=np.int64)
        if order_arr.ndim != 2 or order_arr.shape[0] < max_epochs or order_arr.shape[1] != n:
            raise ValueError("order must be (max_epochs, n)")
        order_p = <long long*> cnp.PyArray_DATA(order_arr)
        if batch_size < 1:
            raise ValueError("batch_size required with an order matrix")
    cdef double inv_t = 1.0 / temperature
    cdef bint use_adam = optimizer == "adam"
    cdef double b1 = 0.9, b2 = 0.999, adam_eps = 1e-8
    cdef Py_ssize_t adam_t = 0

    work_w = [_as_c(w).copy() for w in weights]
    work_b = [_as_c(b).copy() for b in biases]
    best_w = [w.copy() for w in work_w]
    best_b = [b.copy() for b in work_b]

    # Per-layer scratch, reused across epochs.
    cdef Py_ssize_t li
    acts, val_acts, gws, gbs, deltas = [], [], [], [], []
    opt_mw, opt_vw, opt_mb, opt_vb = [], [], [], []
    cdef cnp.ndarray w
    for li in range(n_layers):
        w = work_w[li]
        acts.append(np.empty((n, w.shape[1])))
        val_acts.append(np.empty((n_val, w.shape[1])))
        gws.append(np.empty((w.shape[0], w.shape[1])))
        gbs.append(np.empty(w.shape[1]))
        deltas.append(np.empty((n, w.shape[1])))
        opt_mw.append(np.zeros((w.shape[0], w.shape[1])))
        opt_vw.append(np.zeros((w.shape[0], w.shape[1])))
        opt_mb.append(np.zeros(w.shape[1]))
        opt_vb.append(np.zeros(w.shape[1]))
    cdef Py_ssize_t k = (<cnp.ndarray> work_w[n_layers - 1]).shape[1]
    cdef cnp.ndarray val_probs = np.empty((n_val, k))
    cdef cnp.ndarray probs = np.empty((n, k))
    cdef cnp.ndarray xb = np.empty((n, xt.shape[1]))
    cdef cnp.ndarray yb = np.empty((n, k))

    cdef cnp.ndarray tr_hist = np.empty(max_epochs)
    cdef cnp.ndarray val_hist = np.empty(max_epochs)
    cdef double* tr_hist_p = _ptr(tr_hist)
    cdef double* val_hist_p = _ptr(val_hist)

    cdef double best_val = np.inf
    cdef Py_ssize_t best_epoch = -1, since_best = 0, stopped = 0
    cdef Py_ssize_t epoch, rows, cols, b0, bsz, i, d = xt.shape[1], n_batches
    cdef double loss, epoch_loss, val_loss, c1 = 1.0, c2 = 1.0
    cdef double* xt_p = _ptr(xt)
    cdef double* yt_p = _ptr(yt)
    cdef long long row
    cdef cnp.ndarray act, bb, gw, gb, delta, prev_delta, mw, vw, mb, vb, bxv, byv
    cdef bint diverged = False

    for epoch in range(max_epochs):
        epoch_loss = 0.0
        n_batches = 0
        b0 = 0
        while b0 < n:
            if order_p == NULL:
                bxv, byv, bsz = xt, yt, n
                b0 = n
            else:
                bsz = batch_size if b0 + batch_size <= n else n - b0
                for i in range(bsz):
                    row = order_p[epoch * n + b0 + i]
                    memcpy(_ptr(xb) + i * d, xt_p + row * d, d * sizeof(double))
                    memcpy(_ptr(yb) + i * k, yt_p + row * k, k * sizeof(double))
                bxv, byv = xb[:bsz], yb[:bsz]
                b0 += bsz

            _forward_into(work_w, work_b, bxv, [a[:bsz] for a in acts], inv_t, probs[:bsz])
            loss = sc_soft_ce(bsz, k, _ptr(probs), _ptr(byv), PROB_FLOOR)
            if weight_decay != 0.0:
                for li in range(n_layers):
                    w = work_w[li]
                    loss += 0.5 * weight_decay * sc_sum_squares(w.shape[0] * w.shape[1], _ptr(w))
            if not isfinite(loss):
                diverged = True
                break

            delta = deltas[n_layers - 1]
            sc_output_delta(bsz * k, _ptr(probs), _ptr(byv), inv_t / bsz, _ptr(delta))
            for li in range(n_layers - 1, -1, -1):
                act = bxv if li == 0 else acts[li - 1]
                rows = act.shape[1]
                cols = (<cnp.ndarray> deltas[li]).shape[1]
                gw = gws[li]
                gb = gbs[li]
                w = work_w[li]
                _matmul_at_b(bsz, rows, cols, _ptr(act), _ptr(delta), _ptr(gw))
                sc_colsum(bsz, cols, _ptr(delta), _ptr(gb))
                if weight_decay != 0.0:
                    sc_add_scaled(rows * cols, weight_decay, _ptr(w), _ptr(gw))
                if li > 0:
                    prev_delta = deltas[li - 1]
                    _matmul_a_bt(bsz, rows, cols, _ptr(delta), _ptr(w), _ptr(prev_delta))
                    sc_relu_mask(bsz * rows, _ptr(act), _ptr(prev_delta))
                    delta = prev_delta

            if use_adam:
                adam_t += 1
                c1 = 1.0 - b1 ** adam_t
                c2 = 1.0 - b2 ** adam_t
            for li in range(n_layers):
                w = work_w[li]
                bb = work_b[li]
                gw = gws[li]
                gb = gbs[li]
                rows = w.shape[0]
                cols = w.shape[1]
                if use_adam:
                    mw = opt_mw[li]
                    vw = opt_vw[li]
                    mb = opt_mb[li]
                    vb = opt_vb[li]
                    sc_adam_step(rows * cols, _ptr(w), _ptr(gw), _ptr(mw), _ptr(vw),
                                 lr, b1, b2, adam_eps, c1, c2)
                    sc_adam_step(cols, _ptr(bb), _ptr(gb), _ptr(mb), _ptr(vb),
                                 lr, b1, b2, adam_eps, c1, c2)
                else:
                    mw = opt_mw[li]
                    mb = opt_mb[li]
                    sc_sgdm_step(rows * cols, _ptr(w), _ptr(gw), _ptr(mw), lr, momentum)
                    sc_sgdm_step(cols, _ptr(bb), _ptr(gb), _ptr(mb), lr, momentum)

            epoch_loss += loss
            n_batches += 1

        if diverged:
            return (best_w, best_b, tr_hist[:stopped].tolist(),
                    val_hist[:stopped].tolist(), best_epoch, stopped, epoch, loss)
        epoch_loss /= n_batches

        _forward_into(work_w, work_b, xv, val_acts, inv_t, val_probs)
        val_loss = sc_soft_ce(n_val, k, _ptr(val_probs), _ptr(yv), PROB_FLOOR)
        if not isfinite(val_loss):
            return (best_w, best_b, tr_hist[:stopped].tolist(),
                    val_hist[:stopped].tolist(), best_epoch, stopped, epoch, val_loss)

        tr_hist_p[epoch] = epoch_loss
        val_hist_p[epoch] = val_loss
        stopped = epoch + 1

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            for li in range(n_layers):
                w = work_w[li]
                bb = work_b[li]
                memcpy(_ptr(<cnp.ndarray> best_w[li]), _ptr(w),
                       w.shape[0] * w.shape[1] * sizeof(double))
                memcpy(_ptr(<cnp.ndarray> best_b[li]), _ptr(bb),
                       bb.shape[0] * sizeof(double))
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break

    if best_epoch < 0:
        best_w, best_b = work_w, work_b
    return (best_w, best_b, tr_hist[:stopped].tolist(), val_hist[:stopped].tolist(),
            best_epoch, stopped, -1, 0.0)
