#include "metadiffub/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "metadiffub/errors.hpp"

namespace metadiffub {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

ConstMap view(const NDArray& a) { return ConstMap(a.data().data(), a.rows(), a.cols()); }
MutMap view(NDArray& a) { return MutMap(a.data().data(), a.rows(), a.cols()); }

void require_rank2(const NDArray& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + " expects a rank-2 operand, got " +
                     shape_string(a.shape()));
  }
}

void require_same_shape(const NDArray& a, const NDArray& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + " shape mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

Tape* tape_of(Var a) {
  if (!a.tape) throw ContractError("operation on a detached Var");
  return a.tape;
}

Tape* tape_of(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
  return tape_of(a);
}

}  // namespace

const NDArray& Var::value() const {
  if (!tape) throw ContractError("value() on a detached Var");
  return tape->value(id);
}

NDArray Gradients::of(std::size_t id) const {
  if (id < grads_.size() && grads_[id].shape() == tape_->value(id).shape()) return grads_[id];
  return NDArray(tape_->value(id).shape());
}

NDArray Gradients::of(Var v) const { return of(v.id); }

Var Tape::leaf(NDArray value) { return record(std::move(value), nullptr); }

Var Tape::constant(NDArray value) { return record(std::move(value), nullptr); }

Var Tape::record(NDArray value, BackwardFn backward) {
  nodes_.push_back(Node{std::move(value), std::move(backward)});
  return Var{this, nodes_.size() - 1};
}

NDArray& Tape::slot(std::vector<NDArray>& grads, std::size_t id) const {
  NDArray& g = grads[id];
  if (g.shape() != nodes_[id].value.shape()) g = NDArray(nodes_[id].value.shape());
  return g;
}

Gradients Tape::backward(Var loss) const {
  if (loss.tape != this) throw ContractError("loss node belongs to another tape");
  if (value(loss.id).size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " +
                        shape_string(value(loss.id).shape()));
  }
  std::vector<NDArray> grads(loss.id + 1);
  slot(grads, loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    const Node& node = nodes_[i];
    if (!node.backward || grads[i].empty()) continue;
    node.backward(grads[i], grads);
  }
  return Gradients(this, std::move(grads));
}

// ---------------------------------------------------------------------------
// elementwise

Var add(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  NDArray out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] += bs[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), [tape, ia, ib](const NDArray& g, std::vector<NDArray>& gs) {
    auto gd = g.data();
    auto ga = tape->slot(gs, ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
    auto gb = tape->slot(gs, ib).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i];
  });
}

Var sub(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  NDArray out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] -= bs[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), [tape, ia, ib](const NDArray& g, std::vector<NDArray>& gs) {
    auto gd = g.data();
    auto ga = tape->slot(gs, ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
    auto gb = tape->slot(gs, ib).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gb[i] -= gd[i];
  });
}

Var mul(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  NDArray out = a.value();
  auto bs = b.value().data();
  auto os = out.data();
  for (std::size_t i = 0; i < os.size(); ++i) os[i] *= bs[i];
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), [tape, ia, ib](const NDArray& g, std::vector<NDArray>& gs) {
    auto gd = g.data();
    auto xa = tape->value(ia).data();
    auto xb = tape->value(ib).data();
    auto ga = tape->slot(gs, ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * xb[i];
    auto gb = tape->slot(gs, ib).data();
    for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i] * xa[i];
  });
}

Var scale(Var a, double factor) {
  Tape* tape = tape_of(a);
  NDArray out = a.value();
  for (auto& x : out.data()) x *= factor;
  const std::size_t ia = a.id;
  return tape->record(std::move(out),
                      [tape, ia, factor](const NDArray& g, std::vector<NDArray>& gs) {
                        auto gd = g.data();
                        auto ga = tape->slot(gs, ia).data();
                        for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += factor * gd[i];
                      });
}

Var add_row(Var a, Var row) {
  Tape* tape = tape_of(a, row);
  const NDArray& x = a.value();
  const NDArray& r = row.value();
  require_rank2(x, "add_row");
  if (r.size() != x.cols()) throw ShapeError("add_row: bias width does not match columns");
  NDArray out = x;
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t j = 0; j < n; ++j) dst[j] += r[j];
  }
  const std::size_t ia = a.id, ir = row.id;
  return tape->record(std::move(out), [tape, ia, ir](const NDArray& g, std::vector<NDArray>& gs) {
    auto gd = g.data();
    auto ga = tape->slot(gs, ia).data();
    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i];
    auto gr = tape->slot(gs, ir).data();
    const std::size_t n = gr.size();
    for (std::size_t i = 0; i < gd.size(); ++i) gr[i % n] += gd[i];
  });
}

Var matmul(Var a, Var b) {
  Tape* tape = tape_of(a, b);
  NDArray out = matmul(a.value(), b.value());
  const std::size_t ia = a.id, ib = b.id;
  return tape->record(std::move(out), [tape, ia, ib](const NDArray& g, std::vector<NDArray>& gs) {
    const NDArray& xa = tape->value(ia);
    const NDArray& xb = tape->value(ib);
    if (g.empty()) return;
    if (xa.cols() == 0) return;
    view(tape->slot(gs, ia)).noalias() += view(g) * view(xb).transpose();
    view(tape->slot(gs, ib)).noalias() += view(xa).transpose() * view(g);
  });
}

Var transpose(Var a) {
  Tape* tape = tape_of(a);
  const NDArray& x = a.value();
  require_rank2(x, "transpose");
  NDArray out = NDArray::matrix(x.cols(), x.rows());
  view(out) = view(x).transpose();
  const std::size_t ia = a.id;
  return tape->record(std::move(out), [tape, ia](const NDArray& g, std::vector<NDArray>& gs) {
    view(tape->slot(gs, ia)) += view(g).transpose();
  });
}

namespace {

// Elementwise op whose derivative is expressed through input x and output y.
template <typename F, typename D>
Var pointwise(Var a, F f, D deriv) {
  Tape* tape = tape_of(a);
  const NDArray& x = a.value();
  NDArray out(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  const std::size_t ia = a.id;
  const std::size_t self = tape->size();
  return tape->record(std::move(out),
                      [tape, ia, self, deriv](const NDArray& g, std::vector<NDArray>& gs) {
                        auto xs = tape->value(ia).data();
                        auto ys = tape->value(self).data();
                        auto gd = g.data();
                        auto ga = tape->slot(gs, ia).data();
                        for (std::size_t i = 0; i < gd.size(); ++i) {
                          ga[i] += gd[i] * deriv(xs[i], ys[i]);
                        }
                      });
}

double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

Var exp(Var a) {
  return pointwise(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return pointwise(a, [](double x) { return std::log(x); },
                   [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return pointwise(a, [](double x) { return std::tanh(x); },
                   [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return pointwise(a, stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Var log_sigmoid(Var a) {
  return pointwise(
      a, [](double x) { return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x)))); },
      [](double x, double) { return 1.0 - stable_sigmoid(x); });
}

Var gelu(Var a) {
  return pointwise(
      a,
      [](double x) {
        return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
      },
      [](double x, double) {
        const double u = kGeluC * (x + 0.044715 * x * x * x);
        const double t = std::tanh(u);
        const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
      });
}

// ---------------------------------------------------------------------------
// normalisers

Var softmax(Var a, int axis) {
  Tape* tape = tape_of(a);
  require_rank2(a.value(), "softmax");
  if (axis < 0) axis += 2;
  if (axis != 0 && axis != 1) throw ShapeError("softmax axis out of range");
  NDArray out = softmax(a.value(), axis);
  const std::size_t ia = a.id;
  const std::size_t self = tape->size();
  return tape->record(std::move(out),
                      [tape, ia, self, axis](const NDArray& g, std::vector<NDArray>& gs) {
                        const NDArray& y = tape->value(self);
                        NDArray& ga = tape->slot(gs, ia);
                        const std::size_t r = y.rows(), c = y.cols();
                        if (axis == 1) {
                          for (std::size_t i = 0; i < r; ++i) {
                            double dot = 0.0;
                            for (std::size_t j = 0; j < c; ++j) dot += g.at(i, j) * y.at(i, j);
                            for (std::size_t j = 0; j < c; ++j) {
                              ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                            }
                          }
                        } else {
                          for (std::size_t j = 0; j < c; ++j) {
                            double dot = 0.0;
                            for (std::size_t i = 0; i < r; ++i) dot += g.at(i, j) * y.at(i, j);
                            for (std::size_t i = 0; i < r; ++i) {
                              ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
                            }
                          }
                        }
                      });
}

Var log_softmax_rows(Var a) {
  Tape* tape = tape_of(a);
  const NDArray& x = a.value();
  require_rank2(x, "log_softmax_rows");
  if (x.cols() == 0) throw ShapeError("log_softmax over empty axis");
  NDArray out(x.shape());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto xr = x.row(i);
    const double mx = *std::max_element(xr.begin(), xr.end());
    double total = 0.0;
    for (double v : xr) total += std::exp(v - mx);
    const double lse = mx + std::log(total);
    auto yr = out.row(i);
    for (std::size_t j = 0; j < xr.size(); ++j) yr[j] = xr[j] - lse;
  }
  const std::size_t ia = a.id;
  const std::size_t self = tape->size();
  return tape->record(std::move(out), [tape, ia, self](const NDArray& g, std::vector<NDArray>& gs) {
    const NDArray& y = tape->value(self);
    NDArray& ga = tape->slot(gs, ia);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double total = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) total += g.at(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) {
        ga.at(i, j) += g.at(i, j) - std::exp(y.at(i, j)) * total;
      }
    }
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Tape* tape = tape_of(x, gamma);
  tape_of(x, beta);
  const NDArray& xv = x.value();
  require_rank2(xv, "layer_norm");
  const std::size_t r = xv.rows(), c = xv.cols();
  if (gamma.value().size() != c || beta.value().size() != c) {
    throw ShapeError("layer_norm: gain/bias width does not match columns");
  }
  NDArray out(xv.shape());
  NDArray normed(xv.shape());
  std::vector<double> inv_std(r);
  const auto gv = gamma.value().data();
  const auto bv = beta.value().data();
  for (std::size_t i = 0; i < r; ++i) {
    auto xr = xv.row(i);
    double mu = 0.0;
    for (double v : xr) mu += v;
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (double v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<double>(c);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[i] = is;
    auto nr = normed.row(i);
    auto yr = out.row(i);
    for (std::size_t j = 0; j < c; ++j) {
      nr[j] = (xr[j] - mu) * is;
      yr[j] = nr[j] * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id, ig = gamma.id, ib = beta.id;
  return tape->record(
      std::move(out),
      [tape, ix, ig, ib, normed = std::move(normed), inv_std = std::move(inv_std)](
          const NDArray& g, std::vector<NDArray>& gs) {
        const std::size_t r = g.rows(), c = g.cols();
        auto gv = tape->value(ig).data();
        auto gg = tape->slot(gs, ig).data();
        auto gb = tape->slot(gs, ib).data();
        NDArray& gx = tape->slot(gs, ix);
        std::vector<double> dn(c);
        for (std::size_t i = 0; i < r; ++i) {
          auto gr = g.row(i);
          auto nr = normed.row(i);
          double mean_dn = 0.0, mean_dn_n = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            gg[j] += gr[j] * nr[j];
            gb[j] += gr[j];
            dn[j] = gr[j] * gv[j];
            mean_dn += dn[j];
            mean_dn_n += dn[j] * nr[j];
          }
          mean_dn /= static_cast<double>(c);
          mean_dn_n /= static_cast<double>(c);
          auto xr = gx.row(i);
          for (std::size_t j = 0; j < c; ++j) {
            xr[j] += inv_std[i] * (dn[j] - mean_dn - nr[j] * mean_dn_n);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// structural

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows of nothing");
  Tape* tape = tape_of(parts.front());
  const std::size_t c = parts.front().value().cols();
  std::size_t r = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    require_rank2(p.value(), "concat_rows");
    if (p.value().cols() != c) throw ShapeError("concat_rows: column counts differ");
    r += p.value().rows();
    ids.push_back(p.id);
  }
  NDArray out = NDArray::matrix(r, c);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  return tape->record(std::move(out), [tape, ids](const NDArray& g, std::vector<NDArray>& gs) {
    std::size_t offset = 0;
    auto gd = g.data();
    for (std::size_t id : ids) {
      auto dst = tape->slot(gs, id).data();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += gd[offset + i];
      offset += dst.size();
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols of nothing");
  Tape* tape = tape_of(parts.front());
  const std::size_t r = parts.front().value().rows();
  std::size_t c = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    tape_of(p, parts.front());
    require_rank2(p.value(), "concat_cols");
    if (p.value().rows() != r) throw ShapeError("concat_cols: row counts differ");
    c += p.value().cols();
    ids.push_back(p.id);
  }
  NDArray out = NDArray::matrix(r, c);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    const NDArray& v = p.value();
    for (std::size_t i = 0; i < r; ++i) {
      auto src = v.row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + static_cast<std::ptrdiff_t>(offset));
    }
    offset += v.cols();
  }
  return tape->record(std::move(out), [tape, ids](const NDArray& g, std::vector<NDArray>& gs) {
    std::size_t offset = 0;
    for (std::size_t id : ids) {
      NDArray& dst = tape->slot(gs, id);
      for (std::size_t i = 0; i < dst.rows(); ++i) {
        auto gr = g.row(i);
        auto dr = dst.row(i);
        for (std::size_t j = 0; j < dr.size(); ++j) dr[j] += gr[offset + j];
      }
      offset += dst.cols();
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  Tape* tape = tape_of(a);
  const NDArray& x = a.value();
  require_rank2(x, "slice_rows");
  if (begin + count > x.rows()) throw IndexError("slice_rows out of range");
  const std::size_t c = x.cols();
  std::vector<double> data(x.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           x.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  const std::size_t ia = a.id;
  return tape->record(NDArray({count, c}, std::move(data)),
                      [tape, ia, begin](const NDArray& g, std::vector<NDArray>& gs) {
                        auto dst = tape->slot(gs, ia).data();
                        auto gd = g.data();
                        const std::size_t offset = begin * g.cols();
                        for (std::size_t i = 0; i < gd.size(); ++i) dst[offset + i] += gd[i];
                      });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape* tape = tape_of(a);
  const NDArray& x = a.value();
  require_rank2(x, "slice_cols");
  if (begin + count > x.cols()) throw IndexError("slice_cols out of range");
  NDArray out = NDArray::matrix(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto src = x.row(i).subspan(begin, count);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t ia = a.id;
  return tape->record(std::move(out), [tape, ia, begin](const NDArray& g, std::vector<NDArray>& gs) {
    NDArray& dst = tape->slot(gs, ia);
    for (std::size_t i = 0; i < g.rows(); ++i) {
      auto gr = g.row(i);
      auto dr = dst.row(i).subspan(begin, gr.size());
      for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  Tape* tape = tape_of(table);
  const NDArray& t = table.value();
  require_rank2(t, "gather_rows");
  const std::size_t c = t.cols();
  NDArray out = NDArray::matrix(indices.size(), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= t.rows()) throw IndexError("gather_rows index out of range");
    auto src = t.row(indices[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  const std::size_t it = table.id;
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return tape->record(std::move(out),
                      [tape, it, idx = std::move(idx)](const NDArray& g, std::vector<NDArray>& gs) {
                        NDArray& dst = tape->slot(gs, it);
                        for (std::size_t i = 0; i < idx.size(); ++i) {
                          auto gr = g.row(i);
                          auto dr = dst.row(idx[i]);
                          for (std::size_t j = 0; j < gr.size(); ++j) dr[j] += gr[j];
                        }
                      });
}

// ---------------------------------------------------------------------------
// reductions and losses

Var sum(Var a) {
  Tape* tape = tape_of(a);
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  const std::size_t ia = a.id;
  return tape->record(NDArray::scalar(total), [tape, ia](const NDArray& g, std::vector<NDArray>& gs) {
    const double gv = g[0];
    for (auto& x : tape->slot(gs, ia).data()) x += gv;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean of empty array");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var weighted_sse(Var pred, Var target, std::span<const double> row_weights) {
  Tape* tape = tape_of(pred, target);
  const NDArray& p = pred.value();
  const NDArray& t = target.value();
  require_same_shape(p, t, "weighted_sse");
  require_rank2(p, "weighted_sse");
  if (row_weights.size() != p.rows()) throw ShapeError("weighted_sse: one weight per row");
  double total = 0.0;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (row_weights[i] == 0.0) continue;
    auto pr = p.row(i);
    auto tr = t.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < pr.size(); ++j) s += (pr[j] - tr[j]) * (pr[j] - tr[j]);
    total += row_weights[i] * s;
  }
  const std::size_t ip = pred.id, it = target.id;
  std::vector<double> w(row_weights.begin(), row_weights.end());
  return tape->record(
      NDArray::scalar(total),
      [tape, ip, it, w = std::move(w)](const NDArray& g, std::vector<NDArray>& gs) {
        const NDArray& p = tape->value(ip);
        const NDArray& t = tape->value(it);
        NDArray& gp = tape->slot(gs, ip);
        NDArray& gt = tape->slot(gs, it);
        const double gv = g[0];
        for (std::size_t i = 0; i < p.rows(); ++i) {
          if (w[i] == 0.0) continue;
          auto pr = p.row(i);
          auto tr = t.row(i);
          auto gpr = gp.row(i);
          auto gtr = gt.row(i);
          for (std::size_t j = 0; j < pr.size(); ++j) {
            const double d = 2.0 * gv * w[i] * (pr[j] - tr[j]);
            gpr[j] += d;
            gtr[j] -= d;
          }
        }
      });
}

Var mse(Var pred, Var target) {
  const std::size_t r = pred.value().rows();
  const std::size_t n = pred.value().size();
  if (n == 0) throw ShapeError("mse of empty array");
  std::vector<double> w(r, 1.0 / static_cast<double>(n));
  return weighted_sse(pred, target, w);
}

Var cross_entropy(Var logits, std::span<const std::size_t> targets,
                  std::span<const double> row_weights) {
  const NDArray& x = logits.value();
  require_rank2(x, "cross_entropy");
  if (targets.size() != x.rows() || row_weights.size() != x.rows()) {
    throw ShapeError("cross_entropy: one target and weight per row");
  }
  Var lp = log_softmax_rows(logits);
  Tape* tape = lp.tape;
  const NDArray& l = lp.value();
  double total = 0.0;
  for (std::size_t i = 0; i < l.rows(); ++i) {
    if (targets[i] >= l.cols()) throw IndexError("cross_entropy target out of range");
    total -= row_weights[i] * l.at(i, targets[i]);
  }
  const std::size_t il = lp.id;
  std::vector<std::size_t> tg(targets.begin(), targets.end());
  std::vector<double> w(row_weights.begin(), row_weights.end());
  return tape->record(NDArray::scalar(total),
                      [tape, il, tg = std::move(tg), w = std::move(w)](const NDArray& g,
                                                                        std::vector<NDArray>& gs) {
                        NDArray& gl = tape->slot(gs, il);
                        for (std::size_t i = 0; i < tg.size(); ++i) gl.at(i, tg[i]) -= g[0] * w[i];
                      });
}

Var attention(Var q, Var k, Var v, std::size_t seq_len, std::size_t heads) {
  Tape* tape = tape_of(q, k);
  tape_of(q, v);
  const NDArray& qv = q.value();
  require_same_shape(qv, k.value(), "attention");
  require_same_shape(qv, v.value(), "attention");
  require_rank2(qv, "attention");
  const std::size_t rows = qv.rows(), d = qv.cols();
  if (seq_len == 0 || rows % seq_len != 0) throw ShapeError("attention: rows not a multiple of seq_len");
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const std::size_t blocks = rows / seq_len;
  const std::size_t dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  NDArray out(qv.shape());
  // probabilities for every (block, head), each seq_len x seq_len
  auto probs = std::make_shared<std::vector<RowMajor>>(blocks * heads);
  const auto outer = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
  using Block = Eigen::Map<const RowMajor, 0, Eigen::OuterStride<>>;
  using MutBlock = Eigen::Map<RowMajor, 0, Eigen::OuterStride<>>;
  const Eigen::Index L = static_cast<Eigen::Index>(seq_len);
  const Eigen::Index H = static_cast<Eigen::Index>(dh);
  for (std::size_t b = 0; b < blocks; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t off = b * seq_len * d + h * dh;
      Block Q(qv.data().data() + off, L, H, outer);
      Block K(k.value().data().data() + off, L, H, outer);
      Block V(v.value().data().data() + off, L, H, outer);
      RowMajor S = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < L; ++i) {
        const double mx = S.row(i).maxCoeff();
        S.row(i) = (S.row(i).array() - mx).exp().matrix();
        S.row(i) /= S.row(i).sum();
      }
      MutBlock O(out.data().data() + off, L, H, outer);
      O.noalias() = S * V;
      (*probs)[b * heads + h] = std::move(S);
    }
  }
  const std::size_t iq = q.id, ik = k.id, iv = v.id;
  return tape->record(
      std::move(out),
      [tape, iq, ik, iv, probs, seq_len, heads, blocks, dh, d, inv_sqrt](const NDArray& g,
                                                                          std::vector<NDArray>& gs) {
        const auto outer = Eigen::OuterStride<>(static_cast<Eigen::Index>(d));
        const Eigen::Index L = static_cast<Eigen::Index>(seq_len);
        const Eigen::Index H = static_cast<Eigen::Index>(dh);
        NDArray& gq = tape->slot(gs, iq);
        NDArray& gk = tape->slot(gs, ik);
        NDArray& gv = tape->slot(gs, iv);
        for (std::size_t b = 0; b < blocks; ++b) {
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = b * seq_len * d + h * dh;
            Block Q(tape->value(iq).data().data() + off, L, H, outer);
            Block K(tape->value(ik).data().data() + off, L, H, outer);
            Block V(tape->value(iv).data().data() + off, L, H, outer);
            Block dO(g.data().data() + off, L, H, outer);
            const RowMajor& P = (*probs)[b * heads + h];
            MutBlock dV(gv.data().data() + off, L, H, outer);
            dV.noalias() += P.transpose() * dO;
            RowMajor dP = dO * V.transpose();
            RowMajor dS = P.cwiseProduct(dP);
            for (Eigen::Index i = 0; i < L; ++i) {
              const double s = dS.row(i).sum();
              dS.row(i) -= P.row(i) * s;
            }
            dS *= inv_sqrt;
            MutBlock dQ(gq.data().data() + off, L, H, outer);
            dQ.noalias() += dS * K;
            MutBlock dK(gk.data().data() + off, L, H, outer);
            dK.noalias() += dS.transpose() * Q;
          }
        }
      });
}

}  // namespace metadiffub
