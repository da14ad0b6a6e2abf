#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "gnem/tensor.hpp"

namespace gnem {

/// Handle to a node on a Tape.
struct Var {
  uint32_t i = UINT32_MAX;
  bool valid() const { return i != UINT32_MAX; }
};

enum class Reduction { Sum, Mean };

/// Reverse-mode tape. Every primitive records the forward value and a closure
/// that scatters the upstream gradient to its inputs. Nodes only ever refer to
/// earlier nodes, so walking the tape backwards visits each node once in
/// reverse topological order. backward() is deterministic: identical tapes
/// produce bit-identical gradients.
template <typename T>
class Tape {
 public:
  // -- node access ----------------------------------------------------------

  const Tensor<T>& val(Var v) const { return nodes_[v.i].value; }

  /// Gradient of the last backward() pass; zeros if the node was unreachable.
  const Tensor<T>& grad(Var v) {
    ensure_grad(v.i);
    return nodes_[v.i].grad;
  }

  bool requires_grad(Var v) const { return nodes_[v.i].requires_grad; }

  size_t size() const { return nodes_.size(); }

  // -- leaves ----------------------------------------------------------------

  Var input(Tensor<T> value, bool requires_grad_flag) {
    return push(std::move(value), requires_grad_flag, {});
  }

  Var constant(Tensor<T> value) { return push(std::move(value), false, {}); }

  // -- primitives ------------------------------------------------------------

  Var matmul(Var a, Var b) {
    const auto& A = val(a);
    const auto& B = val(b);
    GNEM_CHECK(A.cols() == B.rows(), "matmul shapes ", A.rows(), "x", A.cols(), " * ",
               B.rows(), "x", B.cols());
    Tensor<T> out({A.rows(), B.cols()});
    kernel::gemm(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.cols());
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  const auto& A = t.val(a);
                  const auto& B = t.val(b);
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    kernel::gemm_nt(g.data(), B.data(), t.nodes_[a.i].grad.data(), g.rows(),
                                    g.cols(), B.rows(), true);
                  }
                  if (t.requires_grad(b)) {
                    t.ensure_grad(b.i);
                    kernel::gemm_tn(A.data(), g.data(), t.nodes_[b.i].grad.data(), A.rows(),
                                    A.cols(), g.cols(), true);
                  }
                });
  }

  /// a * b^T
  Var matmul_nt(Var a, Var b) {
    const auto& A = val(a);
    const auto& B = val(b);
    GNEM_CHECK(A.cols() == B.cols(), "matmul_nt shapes ", A.rows(), "x", A.cols(), " * (",
               B.rows(), "x", B.cols(), ")^T");
    Tensor<T> out({A.rows(), B.rows()});
    kernel::gemm_nt(A.data(), B.data(), out.data(), A.rows(), A.cols(), B.rows());
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;  // [m, n]
                  const auto& A = t.val(a);             // [m, k]
                  const auto& B = t.val(b);             // [n, k]
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    kernel::gemm(g.data(), B.data(), t.nodes_[a.i].grad.data(), g.rows(),
                                 g.cols(), B.cols(), true);
                  }
                  if (t.requires_grad(b)) {
                    t.ensure_grad(b.i);
                    kernel::gemm_tn(g.data(), A.data(), t.nodes_[b.i].grad.data(), g.rows(),
                                    g.cols(), A.cols(), true);
                  }
                });
  }

  Var add(Var a, Var b) { return binary_elemwise(a, b, /*sign=*/T(1)); }
  Var sub(Var a, Var b) { return binary_elemwise(a, b, /*sign=*/T(-1)); }

  Var hadamard(Var a, Var b) {
    const auto& A = val(a);
    const auto& B = val(b);
    GNEM_CHECK(A.same_shape(B), "hadamard shape mismatch: ", A.numel(), " vs ", B.numel());
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * B[i];
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  const auto& A = t.val(a);
                  const auto& B = t.val(b);
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * B[i];
                  }
                  if (t.requires_grad(b)) {
                    t.ensure_grad(b.i);
                    auto& gb = t.nodes_[b.i].grad;
                    for (size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * A[i];
                  }
                });
  }

  /// Row-wise bias: out[i,:] = a[i,:] + bias. The only broadcast in the kernel.
  Var add_rowvec(Var a, Var bias) {
    const auto& A = val(a);
    const auto& B = val(bias);
    GNEM_CHECK(B.numel() == A.cols(), "add_rowvec: bias size ", B.numel(), " vs cols ",
               A.cols());
    Tensor<T> out(A.shape());
    for (size_t r = 0; r < A.rows(); ++r)
      for (size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c) + B[c];
    return push(std::move(out), requires_grad(a) || requires_grad(bias),
                [a, bias](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                  }
                  if (t.requires_grad(bias)) {
                    t.ensure_grad(bias.i);
                    auto& gb = t.nodes_[bias.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < g.cols(); ++c) gb[c] += g.at(r, c);
                  }
                });
  }

  /// alpha * a + beta, scalar constants.
  Var affine(Var a, T alpha, T beta = T(0)) {
    const auto& A = val(a);
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = alpha * A[i] + beta;
    return push(std::move(out), requires_grad(a), [a, alpha](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a.i].grad;
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += alpha * g[i];
    });
  }

  /// out[i,:] = a[i,:] * s[i]; s has one scalar per row.
  Var row_scale(Var a, Var s) {
    const auto& A = val(a);
    const auto& S = val(s);
    GNEM_CHECK(S.numel() == A.rows(), "row_scale: ", S.numel(), " scales for ", A.rows(),
               " rows");
    Tensor<T> out(A.shape());
    for (size_t r = 0; r < A.rows(); ++r)
      for (size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c) * S[r];
    return push(std::move(out), requires_grad(a) || requires_grad(s),
                [a, s](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  const auto& A = t.val(a);
                  const auto& S = t.val(s);
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < g.cols(); ++c) ga.at(r, c) += g.at(r, c) * S[r];
                  }
                  if (t.requires_grad(s)) {
                    t.ensure_grad(s.i);
                    auto& gs = t.nodes_[s.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r) {
                      T acc = 0;
                      for (size_t c = 0; c < g.cols(); ++c) acc += g.at(r, c) * A.at(r, c);
                      gs[r] += acc;
                    }
                  }
                });
  }

  /// Column-wise concatenation of two row-aligned matrices.
  Var concat_cols(Var a, Var b) {
    const auto& A = val(a);
    const auto& B = val(b);
    GNEM_CHECK(A.rows() == B.rows(), "concat_cols rows ", A.rows(), " vs ", B.rows());
    size_t ca = A.cols(), cb = B.cols();
    Tensor<T> out({A.rows(), ca + cb});
    for (size_t r = 0; r < A.rows(); ++r) {
      std::copy(A.row(r), A.row(r) + ca, out.row(r));
      std::copy(B.row(r), B.row(r) + cb, out.row(r) + ca);
    }
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b, ca, cb](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < ca; ++c) ga.at(r, c) += g.at(r, c);
                  }
                  if (t.requires_grad(b)) {
                    t.ensure_grad(b.i);
                    auto& gb = t.nodes_[b.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < cb; ++c) gb.at(r, c) += g.at(r, ca + c);
                  }
                });
  }

  Var sigmoid(Var a) {
    const auto& A = val(a);
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = kernel::sigmoid(A[i]);
    return push(std::move(out), requires_grad(a), [a](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.nodes_[self].value;
      auto& ga = t.nodes_[a.i].grad;
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  }

  Var gelu(Var a) {
    const auto& A = val(a);
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = kernel::gelu(A[i]);
    return push(std::move(out), requires_grad(a), [a](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      const auto& g = t.nodes_[self].grad;
      const auto& x = t.val(a);
      auto& ga = t.nodes_[a.i].grad;
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * kernel::gelu_grad(x[i]);
    });
  }

  Var softmax_rows(Var a) {
    const auto& A = val(a);
    Tensor<T> out = A;
    for (size_t r = 0; r < out.rows(); ++r) kernel::softmax_row(out.row(r), out.cols());
    return push(std::move(out), requires_grad(a), [a](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      const auto& g = t.nodes_[self].grad;
      const auto& y = t.nodes_[self].value;
      auto& ga = t.nodes_[a.i].grad;
      for (size_t r = 0; r < g.rows(); ++r) {
        T inner = 0;
        for (size_t c = 0; c < g.cols(); ++c) inner += g.at(r, c) * y.at(r, c);
        for (size_t c = 0; c < g.cols(); ++c)
          ga.at(r, c) += y.at(r, c) * (g.at(r, c) - inner);
      }
    });
  }

  /// Row-wise layer norm with learned gamma/beta.
  Var layernorm(Var a, Var gamma, Var beta, T eps = T(1e-5)) {
    const auto& A = val(a);
    const auto& G = val(gamma);
    const auto& Bt = val(beta);
    size_t n = A.cols();
    GNEM_CHECK(G.numel() == n && Bt.numel() == n, "layernorm: gamma/beta size ", G.numel(),
               "/", Bt.numel(), " vs cols ", n);
    Tensor<T> out(A.shape());
    Tensor<T> xhat(A.shape());
    Tensor<T> inv_std({A.rows()});
    for (size_t r = 0; r < A.rows(); ++r) {
      T mu = 0;
      for (size_t c = 0; c < n; ++c) mu += A.at(r, c);
      mu /= T(n);
      T var = 0;
      for (size_t c = 0; c < n; ++c) {
        T d = A.at(r, c) - mu;
        var += d * d;
      }
      var /= T(n);
      T istd = T(1) / std::sqrt(var + eps);
      inv_std[r] = istd;
      for (size_t c = 0; c < n; ++c) {
        xhat.at(r, c) = (A.at(r, c) - mu) * istd;
        out.at(r, c) = G[c] * xhat.at(r, c) + Bt[c];
      }
    }
    return push(std::move(out), requires_grad(a) || requires_grad(gamma) || requires_grad(beta),
                [a, gamma, beta, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  const auto& G = t.val(gamma);
                  size_t n = g.cols();
                  if (t.requires_grad(gamma)) {
                    t.ensure_grad(gamma.i);
                    auto& gg = t.nodes_[gamma.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < n; ++c) gg[c] += g.at(r, c) * xhat.at(r, c);
                  }
                  if (t.requires_grad(beta)) {
                    t.ensure_grad(beta.i);
                    auto& gb = t.nodes_[beta.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r)
                      for (size_t c = 0; c < n; ++c) gb[c] += g.at(r, c);
                  }
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t r = 0; r < g.rows(); ++r) {
                      T sum_dxhat = 0, sum_dxhat_xhat = 0;
                      for (size_t c = 0; c < n; ++c) {
                        T dxh = g.at(r, c) * G[c];
                        sum_dxhat += dxh;
                        sum_dxhat_xhat += dxh * xhat.at(r, c);
                      }
                      for (size_t c = 0; c < n; ++c) {
                        T dxh = g.at(r, c) * G[c];
                        ga.at(r, c) += inv_std[r] / T(n) *
                                       (T(n) * dxh - sum_dxhat -
                                        xhat.at(r, c) * sum_dxhat_xhat);
                      }
                    }
                  }
                });
  }

  /// Gather rows of a table; index -1 yields a zero row and gets no gradient.
  Var embedding_lookup(Var table, std::vector<int64_t> indices) {
    const auto& Tb = val(table);
    size_t d = Tb.cols();
    Tensor<T> out({indices.size(), d});
    for (size_t i = 0; i < indices.size(); ++i) {
      int64_t ix = indices[i];
      if (ix < 0) continue;
      GNEM_CHECK(size_t(ix) < Tb.rows(), "embedding index ", ix, " out of range ", Tb.rows());
      std::copy(Tb.row(size_t(ix)), Tb.row(size_t(ix)) + d, out.row(i));
    }
    return push(std::move(out), requires_grad(table),
                [table, indices = std::move(indices)](Tape& t, uint32_t self) {
                  if (!t.requires_grad(table)) return;
                  t.ensure_grad(table.i);
                  const auto& g = t.nodes_[self].grad;
                  auto& gt = t.nodes_[table.i].grad;
                  size_t d = g.cols();
                  for (size_t i = 0; i < indices.size(); ++i) {
                    int64_t ix = indices[i];
                    if (ix < 0) continue;
                    kernel::axpy(T(1), g.row(i), gt.row(size_t(ix)), d);
                  }
                });
  }

  /// Multi-head scaled dot-product attention over flattened [batch*len, dim]
  /// sequences. When causal, query position i attends to key positions
  /// j <= i + (kv_len - q_len). Softmax probabilities are kept for backward.
  Var attention(Var q, Var k, Var v, size_t batch, size_t heads, bool causal) {
    const auto& Q = val(q);
    const auto& K = val(k);
    const auto& V = val(v);
    size_t dim = Q.cols();
    GNEM_CHECK(K.cols() == dim && V.cols() == dim, "attention dims q=", dim, " k=", K.cols(),
               " v=", V.cols());
    GNEM_CHECK(dim % heads == 0, "attention: dim ", dim, " not divisible by heads ", heads);
    GNEM_CHECK(Q.rows() % batch == 0 && K.rows() % batch == 0, "attention: ragged batch");
    GNEM_CHECK(K.rows() == V.rows(), "attention: k/v length mismatch");
    size_t q_len = Q.rows() / batch;
    size_t kv_len = K.rows() / batch;
    size_t dh = dim / heads;
    T scale = T(1) / std::sqrt(T(dh));
    int64_t offset = int64_t(kv_len) - int64_t(q_len);

    Tensor<T> out({Q.rows(), dim});
    Tensor<T> probs({batch * heads * q_len, kv_len});
    for (size_t b = 0; b < batch; ++b) {
      for (size_t h = 0; h < heads; ++h) {
        for (size_t i = 0; i < q_len; ++i) {
          const T* qrow = Q.row(b * q_len + i) + h * dh;
          T* prow = probs.row((b * heads + h) * q_len + i);
          size_t allowed = causal ? std::min(kv_len, size_t(int64_t(i) + offset + 1)) : kv_len;
          for (size_t j = 0; j < kv_len; ++j) {
            prow[j] = j < allowed
                          ? scale * kernel::dot(qrow, K.row(b * kv_len + j) + h * dh, dh)
                          : -std::numeric_limits<T>::infinity();
          }
          kernel::softmax_row(prow, kv_len);
          T* orow = out.row(b * q_len + i) + h * dh;
          std::fill(orow, orow + dh, T(0));
          for (size_t j = 0; j < allowed; ++j)
            kernel::axpy(prow[j], V.row(b * kv_len + j) + h * dh, orow, dh);
        }
      }
    }
    return push(
        std::move(out), requires_grad(q) || requires_grad(k) || requires_grad(v),
        [q, k, v, batch, heads, q_len, kv_len, dh, scale,
         probs = std::move(probs)](Tape& t, uint32_t self) {
          const auto& g = t.nodes_[self].grad;
          const auto& Q = t.val(q);
          const auto& K = t.val(k);
          const auto& V = t.val(v);
          bool need_q = t.requires_grad(q), need_k = t.requires_grad(k),
               need_v = t.requires_grad(v);
          if (need_q) t.ensure_grad(q.i);
          if (need_k) t.ensure_grad(k.i);
          if (need_v) t.ensure_grad(v.i);
          std::vector<T> dprob(kv_len);
          for (size_t b = 0; b < batch; ++b) {
            for (size_t h = 0; h < heads; ++h) {
              for (size_t i = 0; i < q_len; ++i) {
                const T* go = g.row(b * q_len + i) + h * dh;
                const T* prow = probs.row((b * heads + h) * q_len + i);
                // dV and dP
                for (size_t j = 0; j < kv_len; ++j) {
                  dprob[j] = kernel::dot(go, V.row(b * kv_len + j) + h * dh, dh);
                  if (need_v && prow[j] != T(0))
                    kernel::axpy(prow[j], go, t.nodes_[v.i].grad.row(b * kv_len + j) + h * dh,
                                 dh);
                }
                // softmax backward -> dscore, then into q and k
                T inner = 0;
                for (size_t j = 0; j < kv_len; ++j) inner += dprob[j] * prow[j];
                for (size_t j = 0; j < kv_len; ++j) {
                  T ds = prow[j] * (dprob[j] - inner) * scale;
                  if (ds == T(0)) continue;
                  if (need_q)
                    kernel::axpy(ds, K.row(b * kv_len + j) + h * dh,
                                 t.nodes_[q.i].grad.row(b * q_len + i) + h * dh, dh);
                  if (need_k)
                    kernel::axpy(ds, Q.row(b * q_len + i) + h * dh,
                                 t.nodes_[k.i].grad.row(b * kv_len + j) + h * dh, dh);
                }
              }
            }
          }
        });
  }

  /// Cross-entropy from raw logits against integer targets. Supports -inf
  /// logits for masked-out vocabulary entries; target entries must be finite.
  Var cross_entropy_from_logits(Var logits, std::vector<int> targets,
                                Reduction red = Reduction::Mean) {
    const auto& L = val(logits);
    GNEM_CHECK(targets.size() == L.rows(), "cross_entropy: ", targets.size(),
               " targets for ", L.rows(), " rows");
    size_t V = L.cols();
    Tensor<T> probs(L.shape());
    T loss = 0;
    for (size_t r = 0; r < L.rows(); ++r) {
      int tr = targets[r];
      GNEM_CHECK(tr >= 0 && size_t(tr) < V, "cross_entropy target ", tr, " out of range ", V);
      const T* row = L.row(r);
      T mx = row[0];
      for (size_t c = 1; c < V; ++c) mx = std::max(mx, row[c]);
      T sum = 0;
      T* prow = probs.row(r);
      for (size_t c = 0; c < V; ++c) {
        prow[c] = std::exp(row[c] - mx);
        sum += prow[c];
      }
      for (size_t c = 0; c < V; ++c) prow[c] /= sum;
      loss += -(row[size_t(tr)] - mx - std::log(sum));
    }
    T norm = red == Reduction::Mean ? T(1) / T(L.rows()) : T(1);
    Tensor<T> out = Tensor<T>::scalar(loss * norm);
    return push(std::move(out), requires_grad(logits),
                [logits, targets = std::move(targets), probs = std::move(probs),
                 norm](Tape& t, uint32_t self) {
                  if (!t.requires_grad(logits)) return;
                  t.ensure_grad(logits.i);
                  T gs = t.nodes_[self].grad[0] * norm;
                  auto& gl = t.nodes_[logits.i].grad;
                  for (size_t r = 0; r < gl.rows(); ++r) {
                    const T* prow = probs.row(r);
                    T* grow = gl.row(r);
                    for (size_t c = 0; c < gl.cols(); ++c) grow[c] += gs * prow[c];
                    grow[size_t(targets[r])] -= gs;
                  }
                });
  }

  /// Rows scaled to unit L2 norm (cosine-similarity prep).
  Var l2_normalize_rows(Var a, T eps = T(1e-12)) {
    const auto& A = val(a);
    Tensor<T> out(A.shape());
    Tensor<T> inv_norm({A.rows()});
    for (size_t r = 0; r < A.rows(); ++r) {
      T nrm = std::sqrt(kernel::squared_l2(A.row(r), A.cols()));
      inv_norm[r] = T(1) / std::max(nrm, eps);
      for (size_t c = 0; c < A.cols(); ++c) out.at(r, c) = A.at(r, c) * inv_norm[r];
    }
    return push(std::move(out), requires_grad(a),
                [a, inv_norm = std::move(inv_norm)](Tape& t, uint32_t self) {
                  if (!t.requires_grad(a)) return;
                  t.ensure_grad(a.i);
                  const auto& g = t.nodes_[self].grad;
                  const auto& y = t.nodes_[self].value;
                  auto& ga = t.nodes_[a.i].grad;
                  for (size_t r = 0; r < g.rows(); ++r) {
                    T inner = 0;
                    for (size_t c = 0; c < g.cols(); ++c) inner += g.at(r, c) * y.at(r, c);
                    for (size_t c = 0; c < g.cols(); ++c)
                      ga.at(r, c) += (g.at(r, c) - y.at(r, c) * inner) * inv_norm[r];
                  }
                });
  }

  Var sum(Var a) {
    const auto& A = val(a);
    T s = 0;
    for (size_t i = 0; i < A.numel(); ++i) s += A[i];
    return push(Tensor<T>::scalar(s), requires_grad(a), [a](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      T gs = t.nodes_[self].grad[0];
      auto& ga = t.nodes_[a.i].grad;
      for (size_t i = 0; i < ga.numel(); ++i) ga[i] += gs;
    });
  }

  Var mean(Var a) { return affine(sum(a), T(1) / T(val(a).numel())); }

  /// Identity forward, zero gradient backward.
  Var stop_gradient(Var a) { return push(val(a), false, {}); }

  /// Metadata-only reshape.
  Var reshape(Var a, std::vector<size_t> shape) {
    Tensor<T> out = val(a).reshaped(shape);
    return push(std::move(out), requires_grad(a), [a](Tape& t, uint32_t self) {
      if (!t.requires_grad(a)) return;
      t.ensure_grad(a.i);
      const auto& g = t.nodes_[self].grad;
      auto& ga = t.nodes_[a.i].grad;
      for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  /// Inverted dropout; identity when p == 0.
  Var dropout(Var a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    GNEM_CHECK(p < 1.0, "dropout probability must be < 1, got ", p);
    const auto& A = val(a);
    Tensor<T> mask(A.shape());
    T keep_scale = T(1.0 / (1.0 - p));
    for (size_t i = 0; i < mask.numel(); ++i)
      mask[i] = rng.uniform() < p ? T(0) : keep_scale;
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] * mask[i];
    return push(std::move(out), requires_grad(a),
                [a, mask = std::move(mask)](Tape& t, uint32_t self) {
                  if (!t.requires_grad(a)) return;
                  t.ensure_grad(a.i);
                  const auto& g = t.nodes_[self].grad;
                  auto& ga = t.nodes_[a.i].grad;
                  for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * mask[i];
                });
  }

  // -- reverse pass -----------------------------------------------------------

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss) {
    GNEM_CHECK(val(loss).numel() == 1, "backward needs a scalar loss, got ",
               val(loss).numel(), " elements");
    for (auto& n : nodes_) n.grad = Tensor<T>();
    ensure_grad(loss.i);
    nodes_[loss.i].grad[0] = T(1);
    for (uint32_t i = loss.i + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.requires_grad || !n.backward_fn || n.grad.empty()) continue;
      n.backward_fn(*this, i);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    std::function<void(Tape&, uint32_t)> backward_fn;
    bool requires_grad = false;
  };

  Var push(Tensor<T> value, bool requires_grad_flag,
           std::function<void(Tape&, uint32_t)> fn) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad_flag;
    if (requires_grad_flag) n.backward_fn = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{uint32_t(nodes_.size() - 1)};
  }

  Var binary_elemwise(Var a, Var b, T sign) {
    const auto& A = val(a);
    const auto& B = val(b);
    GNEM_CHECK(A.same_shape(B), "elementwise shape mismatch: rank ", A.rank(), " numel ",
               A.numel(), " vs rank ", B.rank(), " numel ", B.numel());
    Tensor<T> out(A.shape());
    for (size_t i = 0; i < A.numel(); ++i) out[i] = A[i] + sign * B[i];
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                [a, b, sign](Tape& t, uint32_t self) {
                  const auto& g = t.nodes_[self].grad;
                  if (t.requires_grad(a)) {
                    t.ensure_grad(a.i);
                    auto& ga = t.nodes_[a.i].grad;
                    for (size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
                  }
                  if (t.requires_grad(b)) {
                    t.ensure_grad(b.i);
                    auto& gb = t.nodes_[b.i].grad;
                    for (size_t i = 0; i < g.numel(); ++i) gb[i] += sign * g[i];
                  }
                });
  }

  void ensure_grad(uint32_t i) {
    if (nodes_[i].grad.empty()) nodes_[i].grad = Tensor<T>::zeros(nodes_[i].value.shape());
  }

  std::vector<Node> nodes_;
};

}  // namespace gnem
