#include "kelab/ops.hpp"

#include <algorithm>
#include <cmath>

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>
#endif

#include "kelab/threading.hpp"

namespace kelab {

namespace {

bool tracing(const Tensor& a) { return Tape::active() && a.requires_grad(); }
bool tracing(const Tensor& a, const Tensor& b) {
    return Tape::active() && (a.requires_grad() || b.requires_grad());
}

void check_2d(const Tensor& t, const char* op) {
    if (t.ndim() != 2) throw ShapeError(std::string(op) + ": expected 2-d tensor, got " + shape_str(t.shape()));
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// C += A[r x k] * B[k x c]
void gemm_nn_acc(const double* a, const double* b, double* c, int64_t r, int64_t k, int64_t cc) {
    parallel_for(r, [=](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            double* crow = c + i * cc;
            const double* arow = a + i * k;
            for (int64_t p = 0; p < k; ++p) {
                const double av = arow[p];
                if (av == 0.0) continue;
                const double* brow = b + p * cc;
                for (int64_t j = 0; j < cc; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

// Dot product with a fixed 4-lane x 2-accumulator reduction order, so the
// result is identical on every run. Plain `acc += a[p]*b[p]` cannot
// vectorize without float reassociation, which we do not enable globally.
inline double fixed_order_dot(const double* a, const double* b, int64_t k) {
#if defined(__AVX2__) && defined(__FMA__)
    __m256d s0 = _mm256_setzero_pd();
    __m256d s1 = _mm256_setzero_pd();
    int64_t p = 0;
    for (; p + 8 <= k; p += 8) {
        s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + p), _mm256_loadu_pd(b + p), s0);
        s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + p + 4), _mm256_loadu_pd(b + p + 4), s1);
    }
    __m256d s = _mm256_add_pd(s0, s1);
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, s);
    double acc = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; p < k; ++p) acc += a[p] * b[p];
    return acc;
#else
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    int64_t p = 0;
    for (; p + 4 <= k; p += 4) {
        a0 += a[p] * b[p];
        a1 += a[p + 1] * b[p + 1];
        a2 += a[p + 2] * b[p + 2];
        a3 += a[p + 3] * b[p + 3];
    }
    double acc = (a0 + a1) + (a2 + a3);
    for (; p < k; ++p) acc += a[p] * b[p];
    return acc;
#endif
}

// C += A[r x k] * B[c x k]^T
void gemm_nt_acc(const double* a, const double* b, double* c, int64_t r, int64_t k, int64_t cc) {
    parallel_for(r, [=](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const double* arow = a + i * k;
            double* crow = c + i * cc;
            for (int64_t j = 0; j < cc; ++j) {
                crow[j] += fixed_order_dot(arow, b + j * k, k);
            }
        }
    });
}

// C += A[n x r]^T * B[n x k]  (C is [r x k]). Outer loop over n keeps the
// reads of A contiguous per row chunk; per C element the additions still
// happen in ascending p order, so results are bit-stable.
void gemm_tn_acc(const double* a, const double* b, double* c, int64_t n, int64_t r, int64_t k) {
    parallel_for(r, [=](int64_t i0, int64_t i1) {
        for (int64_t p = 0; p < n; ++p) {
            const double* acol = a + p * r;
            const double* brow = b + p * k;
            for (int64_t row = i0; row < i1; ++row) {
                const double av = acol[row];
                if (av == 0.0) continue;
                double* crow = c + row * k;
                for (int64_t j = 0; j < k; ++j) crow[j] += av * brow[j];
            }
        }
    });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul");
    check_2d(b, "matmul");
    if (a.dim(1) != b.dim(0)) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    const int64_t r = a.dim(0), k = a.dim(1), c = b.dim(1);
    Tensor out = mark_output(Tensor::zeros({r, c}));
    gemm_nn_acc(a.data(), b.data(), out.data(), r, k, c);
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        Tape::active()->record("matmul", out, [a, b, out, r, k, c]() mutable {
            const double* gy = out.grad();
            if (a.requires_grad()) gemm_nt_acc(gy, b.data(), a.grad(), r, c, k);
            if (b.requires_grad()) gemm_tn_acc(a.data(), gy, b.grad(), r, k, c);
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    check_2d(a, "matmul_nt");
    check_2d(b, "matmul_nt");
    if (a.dim(1) != b.dim(1)) {
        throw ShapeError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()) + "^T");
    }
    const int64_t r = a.dim(0), k = a.dim(1), c = b.dim(0);
    Tensor out = mark_output(Tensor::zeros({r, c}));
    gemm_nt_acc(a.data(), b.data(), out.data(), r, k, c);
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        Tape::active()->record("matmul_nt", out, [a, b, out, r, k, c]() mutable {
            const double* gy = out.grad();
            if (a.requires_grad()) gemm_nn_acc(gy, b.data(), a.grad(), r, c, k);
            if (b.requires_grad()) gemm_tn_acc(gy, a.data(), b.grad(), r, c, k);
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = mark_output(Tensor::zeros(a.shape()));
    const int64_t n = out.numel();
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        Tape::active()->record("add", out, [a, b, out, n]() mutable {
            const double* gy = out.grad();
            if (a.requires_grad()) {
                double* g = a.grad();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i];
            }
            if (b.requires_grad()) {
                double* g = b.grad();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    Tensor out = mark_output(Tensor::zeros(a.shape()));
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tracing(a, b)) {
        out.set_requires_grad(true);
        Tape::active()->record("mul", out, [a, b, out, n]() mutable {
            const double* gy = out.grad();
            if (a.requires_grad()) {
                double* g = a.grad();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                double* g = b.grad();
                for (int64_t i = 0; i < n; ++i) g[i] += gy[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = mark_output(Tensor::zeros(a.shape()));
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * s;
    if (tracing(a)) {
        out.set_requires_grad(true);
        Tape::active()->record("scale", out, [a, out, s, n]() mutable {
            const double* gy = out.grad();
            double* g = a.grad();
            for (int64_t i = 0; i < n; ++i) g[i] += gy[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    const int64_t n = a.numel();
    for (int64_t i = 0; i < n; ++i) acc += a.data()[i];
    Tensor out = mark_output(Tensor::scalar(acc));
    if (tracing(a)) {
        out.set_requires_grad(true);
        Tape::active()->record("sum", out, [a, out, n]() mutable {
            const double gy = out.grad()[0];
            double* g = a.grad();
            for (int64_t i = 0; i < n; ++i) g[i] += gy;
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& table, const std::vector<int>& ids) {
    check_2d(table, "gather_rows");
    const int64_t rows = table.dim(0), d = table.dim(1);
    for (int id : ids) {
        if (id < 0 || id >= rows) {
            throw ValidationError("gather_rows: id " + std::to_string(id) + " out of range [0, " +
                                  std::to_string(rows) + ")");
        }
    }
    const int64_t n = static_cast<int64_t>(ids.size());
    Tensor out = mark_output(Tensor::zeros({n, d}));
    for (int64_t i = 0; i < n; ++i) {
        std::copy_n(table.data() + ids[static_cast<size_t>(i)] * d, d, out.data() + i * d);
    }
    if (tracing(table)) {
        out.set_requires_grad(true);
        Tape::active()->record("gather_rows", out, [table, out, ids, n, d]() mutable {
            const double* gy = out.grad();
            double* g = table.grad();
            for (int64_t i = 0; i < n; ++i) {
                double* grow = g + ids[static_cast<size_t>(i)] * d;
                const double* gyrow = gy + i * d;
                for (int64_t j = 0; j < d; ++j) grow[j] += gyrow[j];
            }
        });
    }
    return out;
}

Tensor rmsnorm_rows(const Tensor& x, const Tensor& gain, double eps) {
    check_2d(x, "rmsnorm_rows");
    const int64_t n = x.dim(0), d = x.dim(1);
    if (gain.ndim() != 1 || gain.dim(0) != d) {
        throw ShapeError("rmsnorm_rows: gain " + shape_str(gain.shape()) + " does not match width " +
                         std::to_string(d));
    }
    Tensor out = mark_output(Tensor::zeros({n, d}));
    auto inv = std::make_shared<std::vector<double>>(static_cast<size_t>(n));
    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            const double* xr = x.data() + i * d;
            double ms = 0.0;
            for (int64_t j = 0; j < d; ++j) ms += xr[j] * xr[j];
            ms /= static_cast<double>(d);
            const double iv = 1.0 / std::sqrt(ms + eps);
            (*inv)[static_cast<size_t>(i)] = iv;
            double* yr = out.data() + i * d;
            for (int64_t j = 0; j < d; ++j) yr[j] = gain.data()[j] * xr[j] * iv;
        }
    });
    if (tracing(x, gain)) {
        out.set_requires_grad(true);
        Tape::active()->record("rmsnorm_rows", out, [x, gain, out, inv, n, d]() mutable {
            const double* gy = out.grad();
            if (x.requires_grad()) {
                double* gx = x.grad();
                parallel_for(n, [&](int64_t i0, int64_t i1) {
                    for (int64_t i = i0; i < i1; ++i) {
                        const double* xr = x.data() + i * d;
                        const double* gyr = gy + i * d;
                        const double iv = (*inv)[static_cast<size_t>(i)];
                        double s = 0.0;
                        for (int64_t j = 0; j < d; ++j) s += gyr[j] * gain.data()[j] * xr[j];
                        const double coef = s * iv * iv * iv / static_cast<double>(d);
                        double* gxr = gx + i * d;
                        for (int64_t j = 0; j < d; ++j) {
                            gxr[j] += gain.data()[j] * gyr[j] * iv - xr[j] * coef;
                        }
                    }
                });
            }
            if (gain.requires_grad()) {
                double* gg = gain.grad();
                for (int64_t i = 0; i < n; ++i) {
                    const double iv = (*inv)[static_cast<size_t>(i)];
                    const double* xr = x.data() + i * d;
                    const double* gyr = gy + i * d;
                    for (int64_t j = 0; j < d; ++j) gg[j] += gyr[j] * xr[j] * iv;
                }
            }
        });
    }
    return out;
}

Tensor swiglu(const Tensor& gate_pre, const Tensor& up) {
    if (gate_pre.shape() != up.shape()) {
        throw ShapeError("swiglu: shape mismatch " + shape_str(gate_pre.shape()) + " vs " +
                         shape_str(up.shape()));
    }
    Tensor out = mark_output(Tensor::zeros(gate_pre.shape()));
    const int64_t n = out.numel();
    const double* g = gate_pre.data();
    const double* u = up.data();
    for (int64_t i = 0; i < n; ++i) {
        const double z = g[i];
        out.data()[i] = z * sigmoid(z) * u[i];
    }
    if (tracing(gate_pre, up)) {
        out.set_requires_grad(true);
        Tape::active()->record("swiglu", out, [gate_pre, up, out, n]() mutable {
            const double* gy = out.grad();
            const double* g = gate_pre.data();
            const double* u = up.data();
            if (gate_pre.requires_grad()) {
                double* gg = gate_pre.grad();
                for (int64_t i = 0; i < n; ++i) {
                    const double s = sigmoid(g[i]);
                    // d/dz [z*sigma(z)] = sigma(z) * (1 + z*(1 - sigma(z)))
                    gg[i] += gy[i] * u[i] * s * (1.0 + g[i] * (1.0 - s));
                }
            }
            if (up.requires_grad()) {
                double* gu = up.grad();
                for (int64_t i = 0; i < n; ++i) gu[i] += gy[i] * g[i] * sigmoid(g[i]);
            }
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& logits, double temperature) {
    check_2d(logits, "softmax_rows");
    if (!(temperature > 0.0)) {
        throw ConfigError("softmax_rows: temperature must be positive, got " + std::to_string(temperature));
    }
    const int64_t r = logits.dim(0), c = logits.dim(1);
    Tensor out = mark_output(Tensor::zeros({r, c}));
    for (int64_t i = 0; i < r; ++i) {
        const double* zr = logits.data() + i * c;
        double* yr = out.data() + i * c;
        double mx = zr[0];
        for (int64_t j = 1; j < c; ++j) mx = std::max(mx, zr[j]);
        double total = 0.0;
        for (int64_t j = 0; j < c; ++j) {
            yr[j] = std::exp((zr[j] - mx) / temperature);
            total += yr[j];
        }
        for (int64_t j = 0; j < c; ++j) yr[j] /= total;
    }
    if (tracing(logits)) {
        out.set_requires_grad(true);
        Tape::active()->record("softmax_rows", out, [logits, out, temperature, r, c]() mutable {
            const double* gy = out.grad();
            double* gz = logits.grad();
            for (int64_t i = 0; i < r; ++i) {
                const double* yr = out.data() + i * c;
                const double* gyr = gy + i * c;
                double dot = 0.0;
                for (int64_t j = 0; j < c; ++j) dot += gyr[j] * yr[j];
                for (int64_t j = 0; j < c; ++j) {
                    gz[i * c + j] += yr[j] * (gyr[j] - dot) / temperature;
                }
            }
        });
    }
    return out;
}

AttentionResult causal_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                 int64_t batch, int64_t seq_len, int n_heads,
                                 double temperature) {
    check_2d(q, "causal_attention");
    if (q.shape() != k.shape() || q.shape() != v.shape()) {
        throw ShapeError("causal_attention: q/k/v shapes disagree");
    }
    if (!(temperature > 0.0)) {
        throw ConfigError("causal_attention: temperature must be positive");
    }
    const int64_t d = q.dim(1);
    if (q.dim(0) != batch * seq_len || n_heads <= 0 || d % n_heads != 0) {
        throw ShapeError("causal_attention: rows/head layout mismatch for " + shape_str(q.shape()));
    }
    const int64_t hd = d / n_heads;
    const double alpha = 1.0 / (std::sqrt(static_cast<double>(hd)) * temperature);

    Tensor out = mark_output(Tensor::zeros(q.shape()));
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<size_t>(batch * n_heads * seq_len * seq_len), 0.0);

    const int64_t lanes = batch * n_heads;
    parallel_for(lanes, [&](int64_t l0, int64_t l1) {
        std::vector<double> row(static_cast<size_t>(seq_len));
        for (int64_t lane = l0; lane < l1; ++lane) {
            const int64_t b = lane / n_heads;
            const int64_t h = lane % n_heads;
            const int64_t base = b * seq_len;
            const int64_t col = h * hd;
            double* pl = probs->data() + lane * seq_len * seq_len;
            for (int64_t j = 0; j < seq_len; ++j) {
                const double* qr = q.data() + (base + j) * d + col;
                double mx = -1e300;
                for (int64_t i = 0; i <= j; ++i) {
                    const double* kr = k.data() + (base + i) * d + col;
                    row[static_cast<size_t>(i)] = fixed_order_dot(qr, kr, hd) * alpha;
                    mx = std::max(mx, row[static_cast<size_t>(i)]);
                }
                double total = 0.0;
                for (int64_t i = 0; i <= j; ++i) {
                    row[static_cast<size_t>(i)] = std::exp(row[static_cast<size_t>(i)] - mx);
                    total += row[static_cast<size_t>(i)];
                }
                double* orow = out.data() + (base + j) * d + col;
                for (int64_t i = 0; i <= j; ++i) {
                    const double a = row[static_cast<size_t>(i)] / total;
                    pl[j * seq_len + i] = a;
                    const double* vr = v.data() + (base + i) * d + col;
                    for (int64_t p = 0; p < hd; ++p) orow[p] += a * vr[p];
                }
            }
        }
    });

    if (tracing(q, k) || tracing(v)) {
        out.set_requires_grad(true);
        Tape::active()->record(
            "causal_attention", out,
            [q, k, v, out, probs, batch, seq_len, n_heads, hd, d, alpha]() mutable {
                const double* gy = out.grad();
                double* gq = q.requires_grad() ? q.grad() : nullptr;
                double* gk = k.requires_grad() ? k.grad() : nullptr;
                double* gv = v.requires_grad() ? v.grad() : nullptr;
                const int64_t lanes = batch * n_heads;
                parallel_for(lanes, [&](int64_t l0, int64_t l1) {
                    std::vector<double> da(static_cast<size_t>(seq_len));
                    for (int64_t lane = l0; lane < l1; ++lane) {
                        const int64_t b = lane / n_heads;
                        const int64_t h = lane % n_heads;
                        const int64_t base = b * seq_len;
                        const int64_t col = h * hd;
                        const double* pl = probs->data() + lane * seq_len * seq_len;
                        for (int64_t j = 0; j < seq_len; ++j) {
                            const double* gor = gy + (base + j) * d + col;
                            const double* arow = pl + j * seq_len;
                            // dV and dA
                            double dot = 0.0;
                            for (int64_t i = 0; i <= j; ++i) {
                                const double* vr = v.data() + (base + i) * d + col;
                                const double s = fixed_order_dot(gor, vr, hd);
                                da[static_cast<size_t>(i)] = s;
                                dot += s * arow[i];
                                if (gv) {
                                    double* gvr = gv + (base + i) * d + col;
                                    for (int64_t p = 0; p < hd; ++p) gvr[p] += arow[i] * gor[p];
                                }
                            }
                            if (!gq && !gk) continue;
                            // dS = A .* (dA - rowdot), then into q/k.
                            const double* qr = q.data() + (base + j) * d + col;
                            for (int64_t i = 0; i <= j; ++i) {
                                const double ds = arow[i] * (da[static_cast<size_t>(i)] - dot) * alpha;
                                if (ds == 0.0) continue;
                                const double* kr = k.data() + (base + i) * d + col;
                                if (gq) {
                                    double* gqr = gq + (base + j) * d + col;
                                    for (int64_t p = 0; p < hd; ++p) gqr[p] += ds * kr[p];
                                }
                                if (gk) {
                                    double* gkr = gk + (base + i) * d + col;
                                    for (int64_t p = 0; p < hd; ++p) gkr[p] += ds * qr[p];
                                }
                            }
                        }
                    }
                });
            });
    }
    return {out, probs};
}

Tensor cross_entropy_mean(const Tensor& logits, const std::vector<int>& targets,
                          const std::vector<uint8_t>& mask) {
    check_2d(logits, "cross_entropy_mean");
    const int64_t n = logits.dim(0), vocab = logits.dim(1);
    if (static_cast<int64_t>(targets.size()) != n || static_cast<int64_t>(mask.size()) != n) {
        throw ShapeError("cross_entropy_mean: targets/mask length must equal logits rows");
    }
    int64_t m = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (!mask[static_cast<size_t>(i)]) continue;
        ++m;
        const int t = targets[static_cast<size_t>(i)];
        if (t < 0 || t >= vocab) {
            throw ValidationError("cross_entropy_mean: target id " + std::to_string(t) + " out of range");
        }
    }
    if (m == 0) throw ValidationError("cross_entropy_mean: all positions are masked");

    const bool needs_grad = tracing(logits);
    // softmax rows are kept for the backward pass instead of re-running exp
    auto probs = needs_grad ? std::make_shared<std::vector<double>>(logits.values()) : nullptr;
    std::vector<double> partial(static_cast<size_t>(n), 0.0);
    parallel_for(n, [&](int64_t i0, int64_t i1) {
        for (int64_t i = i0; i < i1; ++i) {
            if (!mask[static_cast<size_t>(i)]) continue;
            const double* zr = logits.data() + i * vocab;
            double mx = zr[0];
            for (int64_t j = 1; j < vocab; ++j) mx = std::max(mx, zr[j]);
            double total = 0.0;
            double* pr = probs ? probs->data() + i * vocab : nullptr;
            for (int64_t j = 0; j < vocab; ++j) {
                const double e = std::exp(zr[j] - mx);
                if (pr) pr[j] = e;
                total += e;
            }
            if (pr) {
                for (int64_t j = 0; j < vocab; ++j) pr[j] /= total;
            }
            partial[static_cast<size_t>(i)] =
                mx + std::log(total) - zr[targets[static_cast<size_t>(i)]];
        }
    });
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += partial[static_cast<size_t>(i)];
    Tensor out = mark_output(Tensor::scalar(acc / static_cast<double>(m)));

    if (needs_grad) {
        out.set_requires_grad(true);
        Tape::active()->record("cross_entropy_mean", out,
                               [logits, out, targets, mask, probs, n, vocab, m]() mutable {
            const double gl = out.grad()[0] / static_cast<double>(m);
            double* gz = logits.grad();
            parallel_for(n, [&](int64_t i0, int64_t i1) {
                for (int64_t i = i0; i < i1; ++i) {
                    if (!mask[static_cast<size_t>(i)]) continue;
                    const double* pr = probs->data() + i * vocab;
                    double* gr = gz + i * vocab;
                    for (int64_t j = 0; j < vocab; ++j) gr[j] += gl * pr[j];
                    gr[targets[static_cast<size_t>(i)]] -= gl;
                }
            });
        });
    }
    return out;
}

GatedFfnResult gated_ffn_forward(const Tensor& x, const Tensor& gate, const Tensor& up,
                                 const Tensor& down) {
    Tensor g = matmul_nt(x, gate);
    Tensor u = matmul_nt(x, up);
    Tensor h = swiglu(g, u);
    Tensor out = matmul(h, down);
    Tensor coeff = Tensor::zeros(h.shape());
    const int64_t n = h.numel();
    for (int64_t i = 0; i < n; ++i) coeff.data()[i] = std::abs(h.data()[i]);
    return {out, coeff};
}

Tensor relu_gate_coeff(const Tensor& gate_pre, const Tensor& up) {
    if (gate_pre.shape() != up.shape()) {
        throw ShapeError("relu_gate_coeff: shape mismatch");
    }
    Tensor coeff = Tensor::zeros(gate_pre.shape());
    const int64_t n = coeff.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double g = gate_pre.data()[i] > 0.0 ? gate_pre.data()[i] : 0.0;
        coeff.data()[i] = std::max(g * up.data()[i], 0.0);
    }
    return coeff;
}

Tensor finite_diff_grad(const std::function<double()>& f, Tensor params, double h) {
    if (!(h > 0.0)) throw ConfigError("finite_diff_grad: h must be positive");
    Tensor g = Tensor::zeros(params.shape());
    const int64_t n = params.numel();
    double* p = params.data();
    for (int64_t i = 0; i < n; ++i) {
        const double saved = p[i];
        p[i] = saved + h;
        const double fp = f();
        p[i] = saved - h;
        const double fm = f();
        p[i] = saved;
        g.data()[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace kelab
