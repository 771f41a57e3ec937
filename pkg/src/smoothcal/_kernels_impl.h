/* Elementwise hot-loop primitives for the MLP kernels.
 *
 * Matrix products go through BLAS (see _kernels.pyx); these cover the
 * fused glue around them. All arrays are contiguous float64. The restrict
 * qualifiers let the compiler vectorize the loops; keep outputs distinct
 * from inputs when calling.
 */

#ifndef SMOOTHCAL_KERNELS_IMPL_H
#define SMOOTHCAL_KERNELS_IMPL_H

#include <math.h>
#include <stddef.h>
#include <string.h>

static void sc_fill_rows(ptrdiff_t n, ptrdiff_t p, const double *restrict b,
                         double *restrict out) {
    for (ptrdiff_t i = 0; i < n; i++)
        memcpy(out + i * p, b, (size_t)p * sizeof(double));
}

static void sc_relu_inplace(ptrdiff_t size, double *restrict z) {
    for (ptrdiff_t i = 0; i < size; i++)
        if (z[i] < 0.0) z[i] = 0.0;
}

/* Zero entries of delta wherever the matching activation was clamped. */
static void sc_relu_mask(ptrdiff_t size, const double *restrict act,
                         double *restrict delta) {
    for (ptrdiff_t i = 0; i < size; i++)
        if (act[i] <= 0.0) delta[i] = 0.0;
}

/* Row-wise softmax of logits * inv_t. */
static void sc_softmax_rows(ptrdiff_t n, ptrdiff_t k, const double *restrict logits,
                            double inv_t, double *restrict out) {
    for (ptrdiff_t i = 0; i < n; i++) {
        const double *restrict zrow = logits + i * k;
        double *restrict prow = out + i * k;
        double m = zrow[0] * inv_t;
        for (ptrdiff_t j = 1; j < k; j++) {
            const double v = zrow[j] * inv_t;
            if (v > m) m = v;
        }
        double s = 0.0;
        for (ptrdiff_t j = 0; j < k; j++) {
            const double e = exp(zrow[j] * inv_t - m);
            prow[j] = e;
            s += e;
        }
        for (ptrdiff_t j = 0; j < k; j++)
            prow[j] /= s;
    }
}

/* Mean over rows of -sum_j y * log(max(p, floor)). */
static double sc_soft_ce(ptrdiff_t n, ptrdiff_t k, const double *restrict probs,
                         const double *restrict y, double floor_p) {
    double total = 0.0;
    for (ptrdiff_t i = 0; i < n * k; i++) {
        const double p = probs[i] < floor_p ? floor_p : probs[i];
        total -= y[i] * log(p);
    }
    return total / (double)n;
}

static void sc_output_delta(ptrdiff_t size, const double *restrict probs,
                            const double *restrict y, double scale,
                            double *restrict delta) {
    for (ptrdiff_t i = 0; i < size; i++)
        delta[i] = (probs[i] - y[i]) * scale;
}

/* gb = column sums of delta. */
static void sc_colsum(ptrdiff_t n, ptrdiff_t cols, const double *restrict delta,
                      double *restrict gb) {
    memset(gb, 0, (size_t)cols * sizeof(double));
    for (ptrdiff_t i = 0; i < n; i++) {
        const double *restrict drow = delta + i * cols;
        for (ptrdiff_t j = 0; j < cols; j++)
            gb[j] += drow[j];
    }
}

static void sc_add_scaled(ptrdiff_t size, double coeff, const double *restrict src,
                          double *restrict dst) {
    for (ptrdiff_t i = 0; i < size; i++)
        dst[i] += coeff * src[i];
}

static double sc_sum_squares(ptrdiff_t size, const double *restrict w) {
    double total = 0.0;
    for (ptrdiff_t i = 0; i < size; i++)
        total += w[i] * w[i];
    return total;
}

/* Bias-corrected Adam; c1 = 1 - b1^t, c2 = 1 - b2^t. */
static void sc_adam_step(ptrdiff_t size, double *restrict p, const double *restrict g,
                         double *restrict m, double *restrict v, double lr,
                         double b1, double b2, double eps, double c1, double c2) {
    for (ptrdiff_t i = 0; i < size; i++) {
        m[i] = b1 * m[i] + (1.0 - b1) * g[i];
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps);
    }
}

static void sc_sgdm_step(ptrdiff_t size, double *restrict p, const double *restrict g,
                         double *restrict vel, double lr, double momentum) {
    for (ptrdiff_t i = 0; i < size; i++) {
        vel[i] = momentum * vel[i] - lr * g[i];
        p[i] += vel[i];
    }
}

#endif /* SMOOTHCAL_KERNELS_IMPL_H */
