#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace argus {

// Reverse-mode autodiff on a flat tape. Ops append nodes; backward() walks
// the tape in reverse creation order. Nodes whose inputs all have needs=false
// carry no closure, so frozen subgraphs cost nothing on the backward pass.
template <typename T>
class Tape {
public:
  struct Node {
    Mat<T> val;
    Mat<T> grad;  // lazily allocated on first accumulation
    std::function<void(Tape<T>&)> back;
    bool needs = false;
  };

  int push(Mat<T> v, bool needs) {
    nodes_.push_back(Node{std::move(v), Mat<T>(), nullptr, needs});
    return static_cast<int>(nodes_.size()) - 1;
  }

  void set_back(int i, std::function<void(Tape<T>&)> back) {
    nodes_[i].back = std::move(back);
  }

  const Mat<T>& val(int i) const { return nodes_[i].val; }
  Mat<T>& grad(int i) { return nodes_[i].grad; }
  bool needs(int i) const { return nodes_[i].needs; }
  bool has_grad(int i) const { return nodes_[i].grad.size() > 0; }
  size_t size() const { return nodes_.size(); }

  template <typename Expr>
  void add_grad(int i, const Expr& e) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0)
      n.grad = e;
    else
      n.grad += e;
  }

  void backward(int loss) {
    check_shape(val(loss).rows() == 1 && val(loss).cols() == 1,
                "backward expects a scalar loss node");
    nodes_[loss].grad = Mat<T>::Ones(1, 1);
    for (int i = loss; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.back && n.grad.size() > 0) n.back(*this);
    }
  }

  void clear() { nodes_.clear(); }

private:
  std::vector<Node> nodes_;
};

// Tape ops. Forward values are computed eagerly; the closure set on a node
// scatters that node's grad into its parents, guarding each parent with
// needs() so frozen branches never pay for gradient GEMMs.
namespace ad {

template <typename T>
int input(Tape<T>& t, Mat<T> v) {
  return t.push(std::move(v), false);
}

// Leaf that participates in backward; the caller reads grad() afterwards.
template <typename T>
int leaf(Tape<T>& t, Mat<T> v, bool needs = true) {
  return t.push(std::move(v), needs);
}

template <typename T>
int add(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).rows() == t.val(b).rows() &&
                  t.val(a).cols() == t.val(b).cols(),
              "add: shape mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(t.val(a) + t.val(b), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      if (t.needs(a)) t.add_grad(a, t.grad(id));
      if (t.needs(b)) t.add_grad(b, t.grad(id));
    });
  return id;
}

template <typename T>
int sub(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).rows() == t.val(b).rows() &&
                  t.val(a).cols() == t.val(b).cols(),
              "sub: shape mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(t.val(a) - t.val(b), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      if (t.needs(a)) t.add_grad(a, t.grad(id));
      if (t.needs(b)) t.add_grad(b, -t.grad(id));
    });
  return id;
}

template <typename T>
int scale(Tape<T>& t, int a, T c) {
  bool needs = t.needs(a);
  int id = t.push(Mat<T>(t.val(a) * c), needs);
  if (needs)
    t.set_back(id, [a, c, id](Tape<T>& t) { t.add_grad(a, t.grad(id) * c); });
  return id;
}

template <typename T>
int cmul(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).rows() == t.val(b).rows() &&
                  t.val(a).cols() == t.val(b).cols(),
              "cmul: shape mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(t.val(a).cwiseProduct(t.val(b)), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      if (t.needs(a)) t.add_grad(a, t.grad(id).cwiseProduct(t.val(b)));
      if (t.needs(b)) t.add_grad(b, t.grad(id).cwiseProduct(t.val(a)));
    });
  return id;
}

// Elementwise max; ties route the gradient to the first argument.
template <typename T>
int emax(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).rows() == t.val(b).rows() &&
                  t.val(a).cols() == t.val(b).cols(),
              "emax: shape mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(t.val(a).cwiseMax(t.val(b)), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      Mat<T> pick_a =
          (t.val(a).array() >= t.val(b).array()).template cast<T>().matrix();
      if (t.needs(a)) t.add_grad(a, t.grad(id).cwiseProduct(pick_a));
      if (t.needs(b))
        t.add_grad(b, t.grad(id).cwiseProduct(
                          (Mat<T>::Ones(pick_a.rows(), pick_a.cols()) - pick_a)));
    });
  return id;
}

template <typename T>
int matmul(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).cols() == t.val(b).rows(), "matmul: inner dim mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(Mat<T>(t.val(a) * t.val(b)), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      if (t.needs(a)) t.add_grad(a, t.grad(id) * t.val(b).transpose());
      if (t.needs(b)) t.add_grad(b, t.val(a).transpose() * t.grad(id));
    });
  return id;
}

// C = A * B^T
template <typename T>
int matmul_nt(Tape<T>& t, int a, int b) {
  check_shape(t.val(a).cols() == t.val(b).cols(), "matmul_nt: dim mismatch");
  bool needs = t.needs(a) || t.needs(b);
  int id = t.push(Mat<T>(t.val(a) * t.val(b).transpose()), needs);
  if (needs)
    t.set_back(id, [a, b, id](Tape<T>& t) {
      if (t.needs(a)) t.add_grad(a, t.grad(id) * t.val(b));
      if (t.needs(b)) t.add_grad(b, t.grad(id).transpose() * t.val(a));
    });
  return id;
}

// Broadcast add of a 1 x d row vector to every row.
template <typename T>
int add_rowvec(Tape<T>& t, int x, int r) {
  check_shape(t.val(r).rows() == 1 && t.val(r).cols() == t.val(x).cols(),
              "add_rowvec: need 1 x cols(x)");
  bool needs = t.needs(x) || t.needs(r);
  Mat<T> out = t.val(x);
  out.rowwise() += t.val(r).row(0);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [x, r, id](Tape<T>& t) {
      if (t.needs(x)) t.add_grad(x, t.grad(id));
      if (t.needs(r)) t.add_grad(r, t.grad(id).colwise().sum());
    });
  return id;
}

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

// tanh-approximation GELU; smooth everywhere, which keeps central-difference
// gradient checks tight.
template <typename T>
int gelu(Tape<T>& t, int a) {
  const Mat<T>& x = t.val(a);
  Mat<T> out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    double v = static_cast<double>(x(i));
    out(i) = static_cast<T>(
        0.5 * v * (1.0 + std::tanh(detail::kGeluC * (v + detail::kGeluA * v * v * v))));
  }
  bool needs = t.needs(a);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [a, id](Tape<T>& t) {
      const Mat<T>& x = t.val(a);
      Mat<T> d(x.rows(), x.cols());
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        double v = static_cast<double>(x(i));
        double u = detail::kGeluC * (v + detail::kGeluA * v * v * v);
        double th = std::tanh(u);
        double sech2 = 1.0 - th * th;
        d(i) = static_cast<T>(
            0.5 * (1.0 + th) +
            0.5 * v * sech2 * detail::kGeluC * (1.0 + 3.0 * detail::kGeluA * v * v));
      }
      t.add_grad(a, t.grad(id).cwiseProduct(d));
    });
  return id;
}

// Row-wise softmax; with causal=true entry (i, j) for j > i is masked out
// (used by the decoder's self-attention, where the matrix is square).
template <typename T>
int softmax_rows(Tape<T>& t, int a, bool causal = false) {
  Mat<T> x = t.val(a);
  if (causal) {
    check_shape(x.rows() == x.cols(), "causal softmax expects square scores");
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      for (Eigen::Index j = i + 1; j < x.cols(); ++j) x(i, j) = T(-1e30);
  }
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    T m = x.row(i).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (x.row(i).array() - m).exp();
    y.row(i) = (e / e.sum()).matrix();
  }
  bool needs = t.needs(a);
  int id = t.push(std::move(y), needs);
  if (needs)
    t.set_back(id, [a, id](Tape<T>& t) {
      const Mat<T>& y = t.val(id);
      const Mat<T>& dy = t.grad(id);
      Mat<T> dx(y.rows(), y.cols());
      for (Eigen::Index i = 0; i < y.rows(); ++i) {
        T dot = y.row(i).dot(dy.row(i));
        dx.row(i) =
            y.row(i).cwiseProduct(dy.row(i) - Mat<T>::Constant(1, y.cols(), dot));
      }
      t.add_grad(a, dx);
    });
  return id;
}

// Row-wise layer norm with learned gain/bias (1 x d each), eps 1e-5.
template <typename T>
int layer_norm(Tape<T>& t, int x, int g, int b) {
  const Mat<T>& X = t.val(x);
  const Eigen::Index d = X.cols();
  check_shape(t.val(g).rows() == 1 && t.val(g).cols() == d &&
                  t.val(b).rows() == 1 && t.val(b).cols() == d,
              "layer_norm: gain/bias must be 1 x d");
  constexpr double kEps = 1e-5;
  Mat<T> xhat(X.rows(), d);
  Mat<T> inv_sd(X.rows(), 1);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    T mu = X.row(i).mean();
    T var = (X.row(i).array() - mu).square().mean();
    T is = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var) + kEps));
    inv_sd(i, 0) = is;
    xhat.row(i) = (X.row(i).array() - mu).matrix() * is;
  }
  Mat<T> out = xhat;
  out.array().rowwise() *= t.val(g).row(0).array();
  out.rowwise() += t.val(b).row(0);
  bool needs = t.needs(x) || t.needs(g) || t.needs(b);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [x, g, b, id, xhat, inv_sd](Tape<T>& t) {
      const Mat<T>& dy = t.grad(id);
      if (t.needs(g))
        t.add_grad(g, dy.cwiseProduct(xhat).colwise().sum());
      if (t.needs(b)) t.add_grad(b, dy.colwise().sum());
      if (t.needs(x)) {
        const Eigen::Index d = dy.cols();
        Mat<T> dxhat = dy;
        dxhat.array().rowwise() *= t.val(g).row(0).array();
        Mat<T> dx(dy.rows(), d);
        for (Eigen::Index i = 0; i < dy.rows(); ++i) {
          T m1 = dxhat.row(i).mean();
          T m2 = dxhat.row(i).cwiseProduct(xhat.row(i)).mean();
          dx.row(i) = inv_sd(i, 0) *
                      (dxhat.row(i) - Mat<T>::Constant(1, d, m1) -
                       xhat.row(i) * m2);
        }
        t.add_grad(x, dx);
      }
    });
  return id;
}

template <typename T>
int concat_rows(Tape<T>& t, const std::vector<int>& parts) {
  check_shape(!parts.empty(), "concat_rows: empty list");
  Eigen::Index rows = 0, cols = t.val(parts[0]).cols();
  bool needs = false;
  for (int p : parts) {
    check_shape(t.val(p).cols() == cols, "concat_rows: col mismatch");
    rows += t.val(p).rows();
    needs = needs || t.needs(p);
  }
  Mat<T> out(rows, cols);
  Eigen::Index r = 0;
  for (int p : parts) {
    out.middleRows(r, t.val(p).rows()) = t.val(p);
    r += t.val(p).rows();
  }
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [parts, id](Tape<T>& t) {
      Eigen::Index r = 0;
      for (int p : parts) {
        Eigen::Index n = t.val(p).rows();
        if (t.needs(p)) t.add_grad(p, t.grad(id).middleRows(r, n));
        r += n;
      }
    });
  return id;
}

template <typename T>
int slice_rows(Tape<T>& t, int a, Eigen::Index r0, Eigen::Index n) {
  check_shape(r0 >= 0 && n >= 0 && r0 + n <= t.val(a).rows(),
              "slice_rows: out of range");
  bool needs = t.needs(a);
  int id = t.push(Mat<T>(t.val(a).middleRows(r0, n)), needs);
  if (needs)
    t.set_back(id, [a, r0, n, id](Tape<T>& t) {
      Mat<T> full = Mat<T>::Zero(t.val(a).rows(), t.val(a).cols());
      full.middleRows(r0, n) = t.grad(id);
      t.add_grad(a, full);
    });
  return id;
}

template <typename T>
int concat_cols(Tape<T>& t, const std::vector<int>& parts) {
  check_shape(!parts.empty(), "concat_cols: empty list");
  Eigen::Index cols = 0, rows = t.val(parts[0]).rows();
  bool needs = false;
  for (int p : parts) {
    check_shape(t.val(p).rows() == rows, "concat_cols: row mismatch");
    cols += t.val(p).cols();
    needs = needs || t.needs(p);
  }
  Mat<T> out(rows, cols);
  Eigen::Index c = 0;
  for (int p : parts) {
    out.middleCols(c, t.val(p).cols()) = t.val(p);
    c += t.val(p).cols();
  }
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [parts, id](Tape<T>& t) {
      Eigen::Index c = 0;
      for (int p : parts) {
        Eigen::Index n = t.val(p).cols();
        if (t.needs(p)) t.add_grad(p, t.grad(id).middleCols(c, n));
        c += n;
      }
    });
  return id;
}

template <typename T>
int slice_cols(Tape<T>& t, int a, Eigen::Index c0, Eigen::Index n) {
  check_shape(c0 >= 0 && n >= 0 && c0 + n <= t.val(a).cols(),
              "slice_cols: out of range");
  bool needs = t.needs(a);
  int id = t.push(Mat<T>(t.val(a).middleCols(c0, n)), needs);
  if (needs)
    t.set_back(id, [a, c0, n, id](Tape<T>& t) {
      Mat<T> full = Mat<T>::Zero(t.val(a).rows(), t.val(a).cols());
      full.middleCols(c0, n) = t.grad(id);
      t.add_grad(a, full);
    });
  return id;
}

// Embedding lookup: out.row(i) = table.row(ids[i]).
template <typename T>
int rows_gather(Tape<T>& t, int table, const std::vector<int>& ids) {
  const Mat<T>& E = t.val(table);
  for (int i : ids)
    check_shape(i >= 0 && i < E.rows(), "rows_gather: id out of range");
  Mat<T> out(static_cast<Eigen::Index>(ids.size()), E.cols());
  for (size_t i = 0; i < ids.size(); ++i) out.row(i) = E.row(ids[i]);
  bool needs = t.needs(table);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [table, ids, id](Tape<T>& t) {
      Mat<T> dE = Mat<T>::Zero(t.val(table).rows(), t.val(table).cols());
      for (size_t i = 0; i < ids.size(); ++i)
        dE.row(ids[i]) += t.grad(id).row(static_cast<Eigen::Index>(i));
      t.add_grad(table, dE);
    });
  return id;
}

// Mean over all entries -> 1x1.
template <typename T>
int mean_all(Tape<T>& t, int a) {
  const Mat<T>& x = t.val(a);
  check_shape(x.size() > 0, "mean_all: empty input");
  Mat<T> out(1, 1);
  out(0, 0) = x.mean();
  bool needs = t.needs(a);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [a, id](Tape<T>& t) {
      const Mat<T>& x = t.val(a);
      T s = t.grad(id)(0, 0) / static_cast<T>(x.size());
      t.add_grad(a, Mat<T>::Constant(x.rows(), x.cols(), s));
    });
  return id;
}

// Mean of 1x1 scalars (batch-mean of per-sample losses).
template <typename T>
int average_scalars(Tape<T>& t, const std::vector<int>& parts) {
  check_shape(!parts.empty(), "average_scalars: empty list");
  T acc = 0;
  bool needs = false;
  for (int p : parts) {
    check_shape(t.val(p).rows() == 1 && t.val(p).cols() == 1,
                "average_scalars: non-scalar part");
    acc += t.val(p)(0, 0);
    needs = needs || t.needs(p);
  }
  Mat<T> out(1, 1);
  out(0, 0) = acc / static_cast<T>(parts.size());
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [parts, id](Tape<T>& t) {
      T s = t.grad(id)(0, 0) / static_cast<T>(parts.size());
      Mat<T> g = Mat<T>::Constant(1, 1, s);
      for (int p : parts)
        if (t.needs(p)) t.add_grad(p, g);
    });
  return id;
}

// Mean cross-entropy over rows of logits against integer targets; rows whose
// target equals ignore_index contribute nothing. Throws UndefinedLossError
// when every row is ignored.
template <typename T>
int cross_entropy(Tape<T>& t, int logits, const std::vector<int>& targets,
                  int ignore_index = -1) {
  const Mat<T>& L = t.val(logits);
  check_shape(static_cast<Eigen::Index>(targets.size()) == L.rows(),
              "cross_entropy: one target per row");
  int n_valid = 0;
  for (int tgt : targets) {
    if (tgt == ignore_index) continue;
    check_shape(tgt >= 0 && tgt < L.cols(), "cross_entropy: target out of range");
    ++n_valid;
  }
  if (n_valid == 0)
    throw UndefinedLossError("cross_entropy: every position is ignored");
  Mat<T> probs(L.rows(), L.cols());
  T loss = 0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    T m = L.row(i).maxCoeff();
    Eigen::Array<T, 1, Eigen::Dynamic> e = (L.row(i).array() - m).exp();
    T z = e.sum();
    probs.row(i) = (e / z).matrix();
    if (targets[i] != ignore_index)
      loss += std::log(z) + m - L(i, targets[i]);
  }
  Mat<T> out(1, 1);
  out(0, 0) = loss / static_cast<T>(n_valid);
  bool needs = t.needs(logits);
  int id = t.push(std::move(out), needs);
  if (needs)
    t.set_back(id, [logits, targets, ignore_index, n_valid, probs, id](Tape<T>& t) {
      T s = t.grad(id)(0, 0) / static_cast<T>(n_valid);
      Mat<T> d = Mat<T>::Zero(probs.rows(), probs.cols());
      for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        if (targets[i] == ignore_index) continue;
        d.row(i) = probs.row(i) * s;
        d(i, targets[i]) -= s;
      }
      t.add_grad(logits, d);
    });
  return id;
}

}  // namespace ad
}  // namespace argus
