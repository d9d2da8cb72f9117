#include "geotoken/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "geotoken/errors.hpp"

namespace geotoken::ad {

const Tensor& Var::value() const { return tape_->value(*this); }

Var Tape::constant(Tensor value) {
  value.check_finite("constant");
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& param) {
  param.value.check_finite(param.name);
  nodes_.push_back(Node{param.value, {}, {}, &param, true});
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::string_view op, std::initializer_list<Var> inputs,
                 BackwardFn backward) {
  value.check_finite(op);
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [this](Var v) { return nodes_[v.index()].requires_grad; });
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backward) : BackwardFn{}, nullptr, needs});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad(Var v) {
  Node& n = nodes_[v.index()];
  if (n.grad.size() == 0) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

void Tape::backward(Var loss) {
  Node& root = nodes_[loss.index()];
  if (root.value.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + shape_string(root.value.shape()));
  }
  grad(loss).fill(1.0);
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param != nullptr) n.param->grad.accumulate(n.grad);
  }
}

// ---------------------------------------------------------------------------

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

}  // namespace

Var add(Var a, Var b) {
  Tape& t = a.tape();
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  out.accumulate(b.value());
  return t.record(std::move(out), "add", {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad(a).accumulate(g);
    if (tp.requires_grad(b)) tp.grad(b).accumulate(g);
  });
}

Var add_row_bias(Var a, Var bias) {
  Tape& t = a.tape();
  const Tensor& av = a.value();
  const Tensor& bv = bias.value();
  if (bv.size() != av.cols()) {
    throw ShapeError("add_row_bias: bias of " + std::to_string(bv.size()) + " for " +
                     shape_string(av.shape()));
  }
  Tensor out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  return t.record(std::move(out), "add_row_bias", {a, bias}, [a, bias](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad(a).accumulate(g);
    if (tp.requires_grad(bias)) {
      Tensor& gb = tp.grad(bias);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
    }
  });
}

Var scale(Var a, double s) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return t.record(std::move(out), "scale", {a}, [a, s](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Var mul(Var a, Var b) {
  Tape& t = a.tape();
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return t.record(std::move(out), "mul", {a, b}, [a, b](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& ga = tp.grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& gb = tp.grad(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Var sum(Var a) {
  Tape& t = a.tape();
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return t.record(Tensor::scalar(acc), "sum", {a}, [a](Tape& tp, const Tensor& g) {
    Tensor& ga = tp.grad(a);
    const double gv = g[0];
    for (auto& v : ga.data()) v += gv;
  });
}

Var matmul(Var a, Var b) {
  Tape& t = a.tape();
  Tensor out = matmul(a.value(), b.value());
  return t.record(std::move(out), "matmul", {a, b}, [a, b](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(a)) tp.grad(a).accumulate(matmul(g, transpose(tp.value(b))));
    if (tp.requires_grad(b)) tp.grad(b).accumulate(matmul(transpose(tp.value(a)), g));
  });
}

Var transpose(Var a) {
  Tape& t = a.tape();
  return t.record(transpose(a.value()), "transpose", {a}, [a](Tape& tp, const Tensor& g) {
    tp.grad(a).accumulate(transpose(g));
  });
}

Var relu(Var a) {
  Tape& t = a.tape();
  Tensor out = a.value();
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), "relu", {a}, [a](Tape& tp, const Tensor& g) {
    const Tensor& av = tp.value(a);
    Tensor& ga = tp.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av[i] > 0.0) ga[i] += g[i];
    }
  });
}

Var softmax_rows(Var x) {
  Tape& t = x.tape();
  Tensor out = softmax_rows(x.value());
  Tensor y = out;
  return t.record(std::move(out), "softmax_rows", {x}, [x, y = std::move(y)](Tape& tp, const Tensor& g) {
    Tensor& gx = tp.grad(x);
    for (std::size_t r = 0; r < y.rows(); ++r) {
      const auto yr = y.row(r);
      const auto gr = g.row(r);
      double dot = 0.0;
      for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * gr[j];
      auto out = gx.row(r);
      for (std::size_t j = 0; j < yr.size(); ++j) out[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  Tape& t = x.tape();
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.value().size() != n || bias.value().size() != n) {
    throw ShapeError("layer_norm_rows: gain/bias size does not match " + shape_string(xv.shape()));
  }
  Tensor xhat = Tensor::zeros_like(xv);
  std::vector<double> rstd(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    const auto in = xv.row(r);
    double mean = 0.0;
    for (double v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    auto out = xhat.row(r);
    for (std::size_t j = 0; j < n; ++j) out[j] = (in[j] - mean) * rstd[r];
  }
  Tensor out = xhat;
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t j = 0; j < n; ++j) row[j] = row[j] * gv[j] + bv[j];
  }
  return t.record(
      std::move(out), "layer_norm_rows", {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), rstd = std::move(rstd)](Tape& tp, const Tensor& g) {
        const Tensor& gv = tp.value(gain);
        const std::size_t n = gv.size();
        if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
          Tensor& gg = tp.grad(gain);
          Tensor& gb = tp.grad(bias);
          for (std::size_t r = 0; r < g.rows(); ++r) {
            const auto gr = g.row(r);
            const auto hr = xhat.row(r);
            for (std::size_t j = 0; j < n; ++j) {
              gg[j] += gr[j] * hr[j];
              gb[j] += gr[j];
            }
          }
        }
        if (!tp.requires_grad(x)) return;
        Tensor& gx = tp.grad(x);
        std::vector<double> dxhat(n);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          const auto gr = g.row(r);
          const auto hr = xhat.row(r);
          double mean_d = 0.0, mean_dh = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            dxhat[j] = gr[j] * gv[j];
            mean_d += dxhat[j];
            mean_dh += dxhat[j] * hr[j];
          }
          mean_d /= static_cast<double>(n);
          mean_dh /= static_cast<double>(n);
          auto out = gx.row(r);
          for (std::size_t j = 0; j < n; ++j) out[j] += rstd[r] * (dxhat[j] - mean_d - hr[j] * mean_dh);
        }
      });
}

Var embedding(Var table, std::span<const int> ids) {
  Tape& t = table.tape();
  const Tensor& tv = table.value();
  if (tv.rank() != 2) throw ShapeError("embedding: table must be a matrix");
  if (ids.empty()) throw ShapeError("embedding: empty id list");
  const std::size_t d = tv.cols();
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= tv.rows()) {
      throw IndexError("embedding: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(tv.rows()));
    }
    const auto src = tv.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return t.record(std::move(out), "embedding", {table},
                  [table, ids = std::vector<int>(ids.begin(), ids.end())](Tape& tp, const Tensor& g) {
                    Tensor& gt = tp.grad(table);
                    for (std::size_t i = 0; i < ids.size(); ++i) {
                      auto dst = gt.row(static_cast<std::size_t>(ids[i]));
                      const auto src = g.row(i);
                      for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
                    }
                  });
}

namespace {

struct CeTerms {
  double loss = 0.0;
  std::size_t kept = 0;
};

CeTerms validate_and_evaluate(const Tensor& logits, std::span<const int> targets,
                              const std::vector<bool>& keep) {
  if (logits.rank() != 2 || targets.size() != logits.rows() || keep.size() != logits.rows()) {
    throw ShapeError("cross_entropy: logits " + shape_string(logits.shape()) + " with " +
                     std::to_string(targets.size()) + " targets and " + std::to_string(keep.size()) +
                     " mask entries");
  }
  CeTerms terms;
  const std::size_t vocab = logits.cols();
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (!keep[r]) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " at position " +
                       std::to_string(r) + " outside vocabulary of " + std::to_string(vocab));
    }
    const auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    terms.loss += mx + std::log(total) - row[static_cast<std::size_t>(targets[r])];
    ++terms.kept;
  }
  if (terms.kept == 0) throw EmptyLossError("cross_entropy: every position is masked");
  terms.loss /= static_cast<double>(terms.kept);
  return terms;
}

}  // namespace

double cross_entropy_value(const Tensor& logits, std::span<const int> targets,
                           const std::vector<bool>& keep) {
  return validate_and_evaluate(logits, targets, keep).loss;
}

Var cross_entropy(Var logits, std::span<const int> targets, const std::vector<bool>& keep) {
  Tape& t = logits.tape();
  const CeTerms terms = validate_and_evaluate(logits.value(), targets, keep);
  return t.record(
      Tensor::scalar(terms.loss), "cross_entropy", {logits},
      [logits, targets = std::vector<int>(targets.begin(), targets.end()), keep,
       kept = terms.kept](Tape& tp, const Tensor& g) {
        const Tensor probs = softmax_rows(tp.value(logits));
        Tensor& gl = tp.grad(logits);
        const double w = g[0] / static_cast<double>(kept);
        for (std::size_t r = 0; r < probs.rows(); ++r) {
          if (!keep[r]) continue;
          const auto pr = probs.row(r);
          auto out = gl.row(r);
          for (std::size_t j = 0; j < pr.size(); ++j) out[j] += w * pr[j];
          out[static_cast<std::size_t>(targets[r])] -= w;
        }
      });
}

}  // namespace geotoken::ad
